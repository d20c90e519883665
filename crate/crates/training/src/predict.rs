//! Adapter that lets the metrics harness drive the online tracker.

use reasontrack_core::AnnotatedSequence;
use reasontrack_metrics::{Prediction, Predictor};
use reasontrack_model::{run, TrackModel, TrackerOptions};

pub struct TrackerPredictor<'m> {
    pub model: &'m TrackModel,
    pub options: TrackerOptions,
}

impl Predictor for TrackerPredictor<'_> {
    fn predict(&self, sequence: &AnnotatedSequence, instruction: &str) -> Result<Prediction, String> {
        let out = run(self.model, sequence.frames(), instruction, self.options).map_err(|e| e.to_string())?;
        for w in &out.stats.warnings {
            log::warn!("{}: {w}", sequence.sequence_id());
        }
        Ok(Prediction { masks: out.masks, rethink_frequency: out.stats.rethink_frequency })
    }
}

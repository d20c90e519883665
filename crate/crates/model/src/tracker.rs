//! Online tracking loop: reason once on the first frame, decode every frame
//! with the propagated online query, and re-run the reasoning step when the
//! previous frame's purport score drops below the threshold.

use reasontrack_core::{BinaryMask, Frame, RunConfig};
use serde::{Deserialize, Serialize};

use crate::encoder::FeatureMap;
use crate::error::{ModelError, Result};
use crate::model::{MaskPrediction, QueryState, ReasonOutput, TrackModel};

/// The operations the tracking loop needs from a model.
pub trait TrackingModel {
    type Features;

    fn encode(&self, frame: &Frame) -> Result<Self::Features>;
    fn reason(&self, features: &Self::Features, instruction: &str) -> Result<ReasonOutput>;
    fn decode(&self, features: &Self::Features, state: &QueryState) -> Result<MaskPrediction>;
    fn propagate_query(&self, pred: &MaskPrediction) -> Vec<f64>;
    fn init_online_query(&self) -> Vec<f64>;
}

impl TrackingModel for TrackModel {
    type Features = FeatureMap;

    fn encode(&self, frame: &Frame) -> Result<FeatureMap> {
        TrackModel::encode(self, frame)
    }

    fn reason(&self, features: &FeatureMap, instruction: &str) -> Result<ReasonOutput> {
        TrackModel::reason(self, features, instruction)
    }

    fn decode(&self, features: &FeatureMap, state: &QueryState) -> Result<MaskPrediction> {
        TrackModel::decode(self, features, state)
    }

    fn propagate_query(&self, pred: &MaskPrediction) -> Vec<f64> {
        TrackModel::propagate_query(self, pred)
    }

    fn init_online_query(&self) -> Vec<f64> {
        TrackModel::init_online_query(self)
    }
}

/// Inference-time component switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Full loop.
    #[default]
    None,
    /// No rethinking (threshold forced to 0).
    Rt,
    /// No rethinking and the online query stays at its initial value.
    Rp,
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "rt" => Ok(Self::Rt),
            "rp" => Ok(Self::Rp),
            other => Err(format!("unknown ablation `{other}` (expected none, rt or rp)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerOptions {
    pub rethink_factor: f64,
    pub rethink_cooldown: usize,
    pub reanchor_tau: bool,
    pub ablation: Ablation,
}

impl TrackerOptions {
    pub fn from_config(config: &RunConfig, ablation: Ablation) -> Self {
        Self {
            rethink_factor: config.rethink_factor,
            rethink_cooldown: config.rethink_cooldown,
            reanchor_tau: config.reanchor_tau,
            ablation,
        }
    }

    fn rethinks(&self) -> bool {
        self.ablation == Ablation::None
    }

    fn propagates(&self) -> bool {
        self.ablation != Ablation::Rp
    }

    fn threshold(&self, score: f64) -> f64 {
        if self.rethinks() {
            self.rethink_factor * score
        } else {
            0.0
        }
    }
}

impl Default for TrackerOptions {
    fn default() -> Self {
        Self::from_config(&RunConfig::default(), Ablation::None)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub frames: usize,
    pub rethink_frames: Vec<usize>,
    pub rethink_frequency: f64,
    pub purport_scores: Vec<f64>,
    pub tau: f64,
    pub text: String,
    pub warnings: Vec<String>,
}

pub struct TrackSession<'m, M: TrackingModel> {
    model: &'m M,
    instruction: String,
    options: TrackerOptions,
    pub query_state: QueryState,
    pub last_purport: f64,
    pub frames_processed: usize,
    pub cooldown_remaining: usize,
    pub text_answer: String,
    pub warnings: Vec<String>,
    purport_scores: Vec<f64>,
}

impl<'m, M: TrackingModel> TrackSession<'m, M> {
    /// Reasons on frame 0, sets the threshold from its purport score and
    /// returns the frame-0 prediction.
    pub fn start(
        model: &'m M,
        frames: &[Frame],
        instruction: &str,
        options: TrackerOptions,
    ) -> Result<(Self, MaskPrediction)> {
        let first = frames.first().ok_or(ModelError::EmptyVideo)?;
        let features = model.encode(first)?;
        let reasoned = model.reason(&features, instruction)?;
        let mut warnings = Vec::new();
        if reasoned.flagged() {
            warnings.push(format!("frame 0: brain answer incomplete ({:?})", reasoned.text));
        }
        let mut query_state = QueryState {
            q_referring: reasoned.q_referring,
            q_purport: reasoned.q_purport,
            q_online: model.init_online_query(),
            tau: 0.0,
            rethink_log: Vec::new(),
        };
        let pred = model.decode(&features, &query_state)?;
        query_state.tau = options.threshold(pred.purport_score);
        if options.propagates() {
            query_state.q_online = model.propagate_query(&pred);
        }
        let session = Self {
            model,
            instruction: instruction.to_string(),
            options,
            query_state,
            last_purport: pred.purport_score,
            frames_processed: 1,
            cooldown_remaining: 0,
            text_answer: reasoned.text,
            warnings,
            purport_scores: vec![pred.purport_score],
        };
        Ok((session, pred))
    }

    /// Processes the next frame, rethinking first if the previous frame's
    /// purport score fell strictly below the threshold and no cooldown is
    /// pending.
    pub fn step(&mut self, frame: &Frame) -> Result<MaskPrediction> {
        let t = self.frames_processed;
        if frame.index() != t {
            return Err(ModelError::OutOfOrder { expected: t, got: frame.index() });
        }
        let features = self.model.encode(frame)?;
        let mut reanchor = false;
        if self.cooldown_remaining == 0 && self.last_purport < self.query_state.tau {
            let fresh = self.model.reason(&features, &self.instruction)?;
            if fresh.flagged() {
                self.warnings.push(format!("frame {t}: brain answer incomplete ({:?})", fresh.text));
            }
            self.query_state.q_referring = fresh.q_referring;
            self.query_state.q_purport = fresh.q_purport;
            self.query_state.rethink_log.push(t);
            self.cooldown_remaining = self.options.rethink_cooldown;
            reanchor = self.options.reanchor_tau;
        } else if self.cooldown_remaining > 0 {
            self.cooldown_remaining -= 1;
        }
        let pred = self.model.decode(&features, &self.query_state)?;
        if reanchor {
            self.query_state.tau = self.options.threshold(pred.purport_score);
        }
        self.last_purport = pred.purport_score;
        self.purport_scores.push(pred.purport_score);
        if self.options.propagates() {
            self.query_state.q_online = self.model.propagate_query(&pred);
        }
        self.frames_processed += 1;
        Ok(pred)
    }

    pub fn rethink_frames(&self) -> &[usize] {
        &self.query_state.rethink_log
    }

    pub fn stats(&self) -> SessionStats {
        let frames = self.frames_processed;
        SessionStats {
            frames,
            rethink_frames: self.query_state.rethink_log.clone(),
            rethink_frequency: self.query_state.rethink_log.len() as f64 / frames as f64,
            purport_scores: self.purport_scores.clone(),
            tau: self.query_state.tau,
            text: self.text_answer.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrackRun {
    pub text: String,
    pub masks: Vec<BinaryMask>,
    pub stats: SessionStats,
}

/// Tracks `instruction` through every frame.
pub fn run<M: TrackingModel>(
    model: &M,
    frames: &[Frame],
    instruction: &str,
    options: TrackerOptions,
) -> Result<TrackRun> {
    let (mut session, first) = TrackSession::start(model, frames, instruction, options)?;
    let mut masks = Vec::with_capacity(frames.len());
    masks.push(first.mask);
    for f in &frames[1..] {
        masks.push(session.step(f)?.mask);
    }
    let stats = session.stats();
    Ok(TrackRun { text: stats.text.clone(), masks, stats })
}

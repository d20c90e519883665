use std::fmt::Write as _;

use reasontrack_core::{AnnotatedSequence, BinaryMask, InstructionKind};
use serde::{Deserialize, Serialize};

use crate::measures::{boundary_measure, recall_over_threshold, region_similarity};
use crate::{MetricsError, Result};

pub const RECALL_THRESHOLD: f64 = 0.5;

/// Masks produced for one (sequence, instruction) run.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub masks: Vec<BinaryMask>,
    pub rethink_frequency: f64,
}

/// Anything that can track an instruction through a sequence. Runs may be
/// evaluated from several threads at once.
pub trait Predictor: Sync {
    fn predict(&self, sequence: &AnnotatedSequence, instruction: &str) -> std::result::Result<Prediction, String>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phrasings {
    /// The seed and all five rephrasings.
    #[default]
    All,
    SeedOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Restrict to records of this kind.
    pub kind: Option<InstructionKind>,
    pub phrasings: Phrasings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionResult {
    pub record: usize,
    pub instruction: String,
    pub kind: InstructionKind,
    pub target_object_id: u32,
    pub j: f64,
    pub f: f64,
    pub j_recall: f64,
    pub f_recall: f64,
    pub rethink_frequency: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub sequence_id: String,
    pub j: f64,
    pub f: f64,
    pub instructions: Vec<InstructionResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf_mean: f64,
    pub j_recall: f64,
    pub f_recall: f64,
    pub rethink_frequency: f64,
    pub runs: usize,
    pub failed_runs: usize,
    pub sequences: Vec<SequenceResult>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Scores one run against the ground truth, frame by frame.
pub fn score_run(masks: &[BinaryMask], gt: &[BinaryMask]) -> Result<(f64, f64, f64, f64)> {
    if masks.len() != gt.len() {
        return Err(MetricsError::FrameCount { predicted: masks.len(), expected: gt.len() });
    }
    if masks.is_empty() {
        return Err(MetricsError::Empty("frames"));
    }
    let js = masks.iter().zip(gt).map(|(p, g)| region_similarity(p, g)).collect::<Result<Vec<_>>>()?;
    let fs = masks.iter().zip(gt).map(|(p, g)| boundary_measure(p, g)).collect::<Result<Vec<_>>>()?;
    Ok((
        mean(js.iter().copied()),
        mean(fs.iter().copied()),
        recall_over_threshold(&js, RECALL_THRESHOLD)?,
        recall_over_threshold(&fs, RECALL_THRESHOLD)?,
    ))
}

/// Runs `predictor` on every selected (sequence, instruction) pair.
/// Frames are averaged per instruction, instructions per sequence, and
/// sequences globally, all unweighted. Failed runs are recorded and left
/// out of the means.
pub fn evaluate_benchmark<P: Predictor + ?Sized>(
    predictor: &P,
    sequences: &[AnnotatedSequence],
    options: EvalOptions,
) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(MetricsError::Empty("eval set"));
    }
    // Every (sequence, record, phrasing) run, in report order.
    let mut jobs: Vec<(usize, usize, &str)> = Vec::new();
    for (si, seq) in sequences.iter().enumerate() {
        for (ri, rec) in seq.instructions().iter().enumerate() {
            if options.kind.is_some_and(|k| k != rec.kind()) {
                continue;
            }
            if seq.masks_of(rec.target()).is_none() {
                return Err(MetricsError::Empty("target masks"));
            }
            match options.phrasings {
                Phrasings::All => jobs.extend(rec.instructions().map(|t| (si, ri, t))),
                Phrasings::SeedOnly => jobs.push((si, ri, rec.seed_text())),
            }
        }
    }
    let run_one = |&(si, ri, text): &(usize, usize, &str)| {
        let seq = &sequences[si];
        let rec = &seq.instructions()[ri];
        let gt = seq.masks_of(rec.target()).expect("checked above");
        let mut r = InstructionResult {
            record: ri,
            instruction: text.to_string(),
            kind: rec.kind(),
            target_object_id: rec.target().get(),
            j: 0.0,
            f: 0.0,
            j_recall: 0.0,
            f_recall: 0.0,
            rethink_frequency: 0.0,
            error: None,
        };
        match predictor.predict(seq, text).and_then(|p| {
            score_run(&p.masks, gt).map(|s| (s, p.rethink_frequency)).map_err(|e| e.to_string())
        }) {
            Ok(((j, f, jr, fr), freq)) => {
                (r.j, r.f, r.j_recall, r.f_recall, r.rethink_frequency) = (j, f, jr, fr, freq);
            }
            Err(e) => r.error = Some(e),
        }
        r
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);
    let mut done: Vec<InstructionResult> = if workers == 1 {
        jobs.iter().map(run_one).collect()
    } else {
        let chunk = jobs.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> =
                jobs.chunks(chunk).map(|part| s.spawn(move || part.iter().map(run_one).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };

    let mut rows = Vec::with_capacity(sequences.len());
    let mut done_iter = done.drain(..);
    let mut pending = jobs.iter().peekable();
    for (si, seq) in sequences.iter().enumerate() {
        let mut results = Vec::new();
        while pending.next_if(|j| j.0 == si).is_some() {
            results.push(done_iter.next().expect("one result per job"));
        }
        if results.is_empty() {
            continue;
        }
        let ok = || results.iter().filter(|r| r.error.is_none());
        let (j, f) = (mean(ok().map(|r| r.j)), mean(ok().map(|r| r.f)));
        rows.push(SequenceResult { sequence_id: seq.sequence_id().to_string(), j, f, instructions: results });
    }
    if rows.is_empty() {
        return Err(MetricsError::Empty("selected instructions"));
    }
    Ok(EvalReport::from_sequences(rows))
}

impl EvalReport {
    pub fn from_sequences(sequences: Vec<SequenceResult>) -> Self {
        let ok_rows = |s: &SequenceResult| s.instructions.iter().any(|r| r.error.is_none());
        let per_seq = |f: &dyn Fn(&InstructionResult) -> f64| {
            mean(
                sequences
                    .iter()
                    .filter(|s| ok_rows(s))
                    .map(|s| mean(s.instructions.iter().filter(|r| r.error.is_none()).map(f))),
            )
        };
        let j_mean = per_seq(&|r| r.j);
        let f_mean = per_seq(&|r| r.f);
        let all = || sequences.iter().flat_map(|s| &s.instructions);
        Self {
            j_mean,
            f_mean,
            jf_mean: (j_mean + f_mean) / 2.0,
            j_recall: per_seq(&|r| r.j_recall),
            f_recall: per_seq(&|r| r.f_recall),
            rethink_frequency: mean(all().filter(|r| r.error.is_none()).map(|r| r.rethink_frequency)),
            runs: all().count(),
            failed_runs: all().filter(|r| r.error.is_some()).count(),
            sequences,
        }
    }

    /// Re-aggregates over the sequences whose id satisfies `keep`.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> Self {
        Self::from_sequences(self.sequences.iter().filter(|s| keep(&s.sequence_id)).cloned().collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| MetricsError::Parse(e.to_string()))
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>7} {:>7} {:>7}", "sequence", "J", "F", "J&F");
        for r in &self.sequences {
            let _ = writeln!(s, "{:<16} {:>7.4} {:>7.4} {:>7.4}", r.sequence_id, r.j, r.f, (r.j + r.f) / 2.0);
        }
        let _ = writeln!(s, "{}", "-".repeat(40));
        let _ = writeln!(s, "{:<16} {:>7.4} {:>7.4} {:>7.4}", "mean", self.j_mean, self.f_mean, self.jf_mean);
        let _ = writeln!(s, "J-recall {:.4}  F-recall {:.4}", self.j_recall, self.f_recall);
        let _ = writeln!(
            s,
            "rethink frequency {:.4}  runs {}  failed {}",
            self.rethink_frequency, self.runs, self.failed_runs
        );
        s
    }
}

use super::EvalError;
use crate::types::Label;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub tile_id: String,
    pub truth: Label,
    pub predicted: Label,
    pub score: f64,
    pub parse_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<String>,
}

/// Test-set predictions of one family on one split seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub family: String,
    pub seed: u64,
    pub records: Vec<PredictionRecord>,
}

impl PredictionSet {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.records.is_empty() {
            return Err(EvalError::Empty);
        }
        if let Some(r) = self
            .records
            .iter()
            .find(|r| !r.score.is_finite() || !(0.0..=1.0).contains(&r.score))
        {
            return Err(EvalError::BadScore {
                tile_id: r.tile_id.clone(),
                score: r.score,
            });
        }
        Ok(())
    }

    pub fn write_ndjson(&self, path: &Path) -> Result<(), EvalError> {
        let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", path.display()));
        let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
        let header = serde_json::json!({"family": self.family, "seed": self.seed});
        writeln!(f, "{header}").map_err(io)?;
        for r in &self.records {
            writeln!(f, "{}", serde_json::to_string(r).expect("serializable")).map_err(io)?;
        }
        f.flush().map_err(io)
    }

    pub fn read_ndjson(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        let bad = |line: usize, e: serde_json::Error| EvalError::Io(format!("{}:{line}: {e}", path.display()));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or(EvalError::Empty)?;
        #[derive(Deserialize)]
        struct Header {
            family: String,
            seed: u64,
        }
        let h: Header = serde_json::from_str(head).map_err(|e| bad(1, e))?;
        let records = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i + 1, e)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            family: h.family,
            seed: h.seed,
            records,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_records(records: &[PredictionRecord]) -> Self {
        let mut c = Confusion::default();
        for r in records {
            match (r.truth.is_positive(), r.predicted.is_positive()) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// `2TP / (2TP + FP + FN)`, or 0 when there are no predicted or no actual positives.
    pub fn f1(&self) -> f64 {
        if self.tp + self.fp == 0 || self.tp + self.fn_ == 0 {
            return 0.0;
        }
        2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64
    }
}

/// Binary F1 with MITOTIC as the positive class.
pub fn f1_score(records: &[PredictionRecord]) -> f64 {
    Confusion::from_records(records).f1()
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, computed from average ranks.
pub fn auc(records: &[PredictionRecord]) -> Result<f64, EvalError> {
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(EvalError::BadScore {
            tile_id: r.tile_id.clone(),
            score: r.score,
        });
    }
    let n_pos = records.iter().filter(|r| r.truth.is_positive()).count();
    let n_neg = records.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass {
            positives: n_pos,
            negatives: n_neg,
        });
    }
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| records[a].score.total_cmp(&records[b].score));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && records[idx[j + 1]].score == records[idx[i]].score {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg * idx[i..=j].iter().filter(|&&k| records[k].truth.is_positive()).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fraction of tiles whose generated caption equals the target exactly, over
/// tiles that carry an exact-match flag.
pub fn exact_match_accuracy(records: &[PredictionRecord]) -> Option<f64> {
    let flags: Vec<bool> = records.iter().filter_map(|r| r.exact_match).collect();
    if flags.is_empty() {
        return None;
    }
    Some(flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64)
}

pub fn parse_failures(records: &[PredictionRecord]) -> usize {
    records.iter().filter(|r| !r.parse_ok).count()
}

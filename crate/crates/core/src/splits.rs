//! Patient-level train/validation/test partitions and the per-partition tile sets.

use crate::ingest::Manifest;
use crate::tilegeom::{
    generate_tiles_with, ShiftBounds, SkippedAnnotation, TileError, TileOptions, TileRole, TileSpec,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const DEFAULT_FRACTIONS: SplitFractions = SplitFractions {
    train: 0.6,
    val: 0.2,
    test: 0.2,
};
const MIN_PATIENTS: usize = 5;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("need at least {MIN_PATIENTS} patients to split, got {0}")]
    TooFewPatients(usize),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions(SplitFractions),
    #[error("patient {0} is not assigned by the split plan")]
    UnassignedPatient(String),
    #[error(transparent)]
    Tiles(#[from] TileError),
    #[error("split plan {path}: {message}")]
    PlanFile { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub fractions: SplitFractions,
    pub assignment: BTreeMap<String, Partition>,
}

impl SplitPlan {
    pub fn partition_of(&self, patient: &str) -> Option<Partition> {
        self.assignment.get(patient).copied()
    }

    pub fn patients_in(&self, part: Partition) -> BTreeSet<&str> {
        self.assignment
            .iter()
            .filter(|(_, p)| **p == part)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for p in self.assignment.values() {
            c[*p as usize] += 1;
        }
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<(), SplitError> {
        fs::write(path, self.to_json()).map_err(|e| SplitError::PlanFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, SplitError> {
        let err = |message: String| SplitError::PlanFile {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

/// Shuffle the (sorted, de-duplicated) patients with a generator keyed by `seed`,
/// then assign prefixes: `round(0.6n)` to train, `round(0.2n)` to validation and
/// the remainder to test.
pub fn make_split(patients: &[String], seed: u64) -> Result<SplitPlan, SplitError> {
    make_split_with(patients, seed, DEFAULT_FRACTIONS)
}

pub fn make_split_with(patients: &[String], seed: u64, fractions: SplitFractions) -> Result<SplitPlan, SplitError> {
    let sum = fractions.train + fractions.val + fractions.test;
    if [fractions.train, fractions.val, fractions.test]
        .iter()
        .any(|f| !(0.0..=1.0).contains(f))
        || (sum - 1.0).abs() > 1e-9
    {
        return Err(SplitError::BadFractions(fractions));
    }
    let mut unique: Vec<String> = patients.to_vec();
    unique.sort();
    unique.dedup();
    let n = unique.len();
    if n < MIN_PATIENTS {
        return Err(SplitError::TooFewPatients(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unique.shuffle(&mut rng);
    let n_train = ((fractions.train * n as f64).round() as usize).min(n);
    let n_val = ((fractions.val * n as f64).round() as usize).min(n - n_train);
    let assignment = unique
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let part = if i < n_train {
                Partition::Train
            } else if i < n_train + n_val {
                Partition::Val
            } else {
                Partition::Test
            };
            (p, part)
        })
        .collect();
    Ok(SplitPlan {
        seed,
        fractions,
        assignment,
    })
}

/// Tile options for the train partition and for validation/test.
///
/// The `global_seed` of both is replaced by the plan's seed at materialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaterializeOptions {
    pub train_tiles: TileOptions,
    pub eval_tiles: TileOptions,
}

impl MaterializeOptions {
    pub fn new(bounds: ShiftBounds) -> Self {
        Self {
            train_tiles: TileOptions {
                bounds,
                ..TileOptions::new(TileRole::Train, 0)
            },
            eval_tiles: TileOptions {
                bounds,
                ..TileOptions::new(TileRole::Eval, 0)
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub annotations: usize,
    pub tiles: usize,
    pub pruned_tiles: usize,
    pub skipped_annotations: usize,
}

#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub plan: SplitPlan,
    pub train: Vec<TileSpec>,
    pub val: Vec<TileSpec>,
    pub test: Vec<TileSpec>,
    pub counts: BTreeMap<Partition, PartitionCounts>,
    pub skipped: Vec<SkippedAnnotation>,
}

impl SplitDataset {
    pub fn tiles(&self, part: Partition) -> &[TileSpec] {
        match part {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }
}

/// Generate each partition's tiles from its own sub-manifest: train with 10
/// replicas, validation and test with one. Tile shifts are keyed by the plan's seed.
pub fn materialize_split(
    manifest: &Manifest,
    plan: &SplitPlan,
    bounds: ShiftBounds,
) -> Result<SplitDataset, SplitError> {
    materialize_split_with(manifest, plan, &MaterializeOptions::new(bounds))
}

pub fn materialize_split_with(
    manifest: &Manifest,
    plan: &SplitPlan,
    options: &MaterializeOptions,
) -> Result<SplitDataset, SplitError> {
    for p in manifest.patients() {
        if plan.partition_of(&p).is_none() {
            return Err(SplitError::UnassignedPatient(p));
        }
    }
    let mut out = SplitDataset {
        plan: plan.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        counts: BTreeMap::new(),
        skipped: Vec::new(),
    };
    for part in Partition::ALL {
        let sub = manifest.filter_patients(|p| plan.partition_of(p) == Some(part));
        let mut tile_opts = match part {
            Partition::Train => options.train_tiles.clone(),
            _ => options.eval_tiles.clone(),
        };
        tile_opts.global_seed = plan.seed;
        let set = generate_tiles_with(&sub, &tile_opts)?;
        out.counts.insert(
            part,
            PartitionCounts {
                annotations: sub.annotations().len(),
                tiles: set.tiles.len(),
                pruned_tiles: set.pruned.len(),
                skipped_annotations: set.skipped.len(),
            },
        );
        out.skipped.extend(set.skipped);
        match part {
            Partition::Train => out.train = set.tiles,
            Partition::Val => out.val = set.tiles,
            Partition::Test => out.test = set.tiles,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("P{i:03}")).collect()
    }

    /// The documented rule evaluated independently with integer arithmetic:
    /// round(x/10) for non-tie values is floor((x + 5) / 10).
    fn expected_counts(n: usize) -> [usize; 3] {
        let train = (6 * n + 5) / 10;
        let val = (2 * n + 5) / 10;
        [train, val, n - train - val]
    }

    #[test]
    fn ten_patients_split_six_two_two() {
        for seed in 0..5 {
            assert_eq!(make_split(&ids(10), seed).unwrap().counts(), [6, 2, 2]);
        }
    }

    #[test]
    fn seven_patients_split_four_one_two() {
        assert_eq!(make_split(&ids(7), 0).unwrap().counts(), [4, 1, 2]);
    }

    #[test]
    fn rounding_rule_holds_for_small_n() {
        for n in 5..200 {
            let c = make_split(&ids(n), n as u64).unwrap().counts();
            assert_eq!(c, expected_counts(n), "n = {n}");
            for (got, frac) in c.iter().zip([0.6, 0.2, 0.2]) {
                assert!((*got as f64 - frac * n as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn same_seed_same_plan_and_input_order_is_irrelevant() {
        let p = ids(354);
        let a = make_split(&p, 3).unwrap();
        let mut rev = p.clone();
        rev.reverse();
        assert_eq!(a, make_split(&p, 3).unwrap());
        assert_eq!(a, make_split(&rev, 3).unwrap());
        assert_ne!(a.assignment, make_split(&p, 4).unwrap().assignment);
    }

    #[test]
    fn too_few_patients() {
        assert!(matches!(make_split(&ids(4), 0), Err(SplitError::TooFewPatients(4))));
        // duplicates do not count twice
        let dup = vec!["a".to_string(); 6];
        assert!(make_split(&dup, 0).is_err());
    }

    #[test]
    fn plan_file_round_trip() {
        let plan = make_split(&ids(12), 2).unwrap();
        let back: SplitPlan = serde_json::from_str(&plan.to_json()).unwrap();
        assert_eq!(back, plan);
    }
}

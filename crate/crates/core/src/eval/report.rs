use super::metrics::{auc, exact_match_accuracy, f1_score, parse_failures, PredictionSet};
use super::ttest::{paired_t_test, TTest};
use super::EvalError;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
pub const SUMMARY_CSV: &str = "report.csv";
pub const PER_SEED_CSV: &str = "per_seed.csv";
pub const TTESTS_CSV: &str = "ttests.csv";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub f1: f64,
    pub auc: f64,
    pub exact_match: Option<f64>,
    pub n_tiles: usize,
    pub parse_failures: usize,
}

impl SeedMetrics {
    pub fn from_predictions(set: &PredictionSet) -> Result<Self, EvalError> {
        set.validate()?;
        Ok(Self {
            seed: set.seed,
            f1: f1_score(&set.records),
            auc: auc(&set.records)?,
            exact_match: exact_match_accuracy(&set.records),
            n_tiles: set.records.len(),
            parse_failures: parse_failures(&set.records),
        })
    }
}

/// Per-seed results of one family together with its report row labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRun {
    pub family: String,
    pub pretraining: String,
    pub finetuning: String,
    pub tables: Vec<u8>,
    pub seeds: Vec<SeedMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, sd, n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    F1,
    Auc,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::F1, Metric::Auc];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::F1 => "f1",
            Metric::Auc => "auc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run: FamilyRun,
    pub f1: Summary,
    pub auc: Summary,
    pub exact_match: Option<Summary>,
    pub parse_failures: usize,
}

impl MetricsReport {
    pub fn summary(&self, m: Metric) -> Summary {
        match m {
            Metric::F1 => self.f1,
            Metric::Auc => self.auc,
        }
    }

    pub fn values(&self, m: Metric) -> Vec<f64> {
        self.run
            .seeds
            .iter()
            .map(|s| match m {
                Metric::F1 => s.f1,
                Metric::Auc => s.auc,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub metric: Metric,
    pub a: String,
    pub b: String,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub seeds: Vec<u64>,
    pub families: Vec<MetricsReport>,
    pub tests: Vec<PairwiseTest>,
    /// `(table, family, metric)` cells carrying a significance marker.
    pub stars: BTreeSet<(u8, String, Metric)>,
}

/// Aggregate per-seed results, run paired t-tests between every pair of families
/// on both metrics, and mark a family within a table when it has the highest
/// mean and beats every other row of that table at p < 0.05.
pub fn build_report(runs: &[FamilyRun]) -> Result<Report, EvalError> {
    let first = runs.first().ok_or(EvalError::NoRuns)?;
    let mut runs: Vec<FamilyRun> = runs.to_vec();
    for r in &mut runs {
        r.seeds.sort_by_key(|s| s.seed);
    }
    let seeds: Vec<u64> = {
        let mut s: Vec<u64> = first.seeds.iter().map(|s| s.seed).collect();
        s.sort_unstable();
        s
    };
    if seeds.is_empty() {
        return Err(EvalError::SeedMismatch {
            family: first.family.clone(),
            expected: seeds,
            got: Vec::new(),
        });
    }
    let mut seen = BTreeSet::new();
    for r in &runs {
        let got: Vec<u64> = r.seeds.iter().map(|s| s.seed).collect();
        if got != seeds {
            return Err(EvalError::SeedMismatch {
                family: r.family.clone(),
                expected: seeds.clone(),
                got,
            });
        }
        if !seen.insert(r.family.clone()) {
            return Err(EvalError::DuplicateFamily(r.family.clone()));
        }
    }
    let families: Vec<MetricsReport> = runs
        .into_iter()
        .map(|run| {
            let f1 = Summary::of(&run.seeds.iter().map(|s| s.f1).collect::<Vec<_>>());
            let auc = Summary::of(&run.seeds.iter().map(|s| s.auc).collect::<Vec<_>>());
            let em: Vec<f64> = run.seeds.iter().filter_map(|s| s.exact_match).collect();
            let exact_match = (!em.is_empty()).then(|| Summary::of(&em));
            let parse_failures = run.seeds.iter().map(|s| s.parse_failures).sum();
            MetricsReport {
                run,
                f1,
                auc,
                exact_match,
                parse_failures,
            }
        })
        .collect();

    let mut tests = Vec::new();
    let mut lookup = BTreeMap::new();
    if seeds.len() >= 2 {
        for (i, a) in families.iter().enumerate() {
            for b in &families[i + 1..] {
                for m in Metric::ALL {
                    let t = paired_t_test(&a.values(m), &b.values(m))?;
                    lookup.insert((a.run.family.clone(), b.run.family.clone(), m), t);
                    lookup.insert((b.run.family.clone(), a.run.family.clone(), m), TTest { t: -t.t, ..t });
                    tests.push(PairwiseTest {
                        metric: m,
                        a: a.run.family.clone(),
                        b: b.run.family.clone(),
                        test: t,
                    });
                }
            }
        }
    }

    let tables: BTreeSet<u8> = families.iter().flat_map(|f| f.run.tables.iter().copied()).collect();
    let mut stars = BTreeSet::new();
    for table in tables {
        let rows: Vec<&MetricsReport> = families.iter().filter(|f| f.run.tables.contains(&table)).collect();
        if rows.len() < 2 {
            continue;
        }
        for m in Metric::ALL {
            for f in &rows {
                let beats_all = rows.iter().filter(|g| g.run.family != f.run.family).all(|g| {
                    f.summary(m).mean > g.summary(m).mean
                        && lookup
                            .get(&(f.run.family.clone(), g.run.family.clone(), m))
                            .is_some_and(|t| t.p < SIGNIFICANCE_LEVEL)
                });
                if beats_all {
                    stars.insert((table, f.run.family.clone(), m));
                }
            }
        }
    }
    Ok(Report {
        seeds,
        families,
        tests,
        stars,
    })
}

fn csv_string(records: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Report {
    pub fn starred(&self, table: u8, family: &str, m: Metric) -> bool {
        self.stars.contains(&(table, family.to_string(), m))
    }

    fn any_star(&self, family: &str, m: Metric) -> bool {
        self.stars.iter().any(|(_, f, mm)| f == family && *mm == m)
    }

    /// One row per family; numbers at full precision.
    pub fn summary_csv(&self) -> String {
        let mut rows = vec![[
            "family",
            "tables",
            "pretraining",
            "finetuning",
            "n_seeds",
            "f1_mean",
            "f1_sd",
            "auc_mean",
            "auc_sd",
            "f1_significant",
            "auc_significant",
            "exact_match_mean",
            "exact_match_sd",
            "parse_failures",
        ]
        .map(String::from)
        .to_vec()];
        for f in &self.families {
            rows.push(vec![
                f.run.family.clone(),
                f.run.tables.iter().map(u8::to_string).collect::<Vec<_>>().join(";"),
                f.run.pretraining.clone(),
                f.run.finetuning.clone(),
                f.f1.n.to_string(),
                f.f1.mean.to_string(),
                f.f1.sd.to_string(),
                f.auc.mean.to_string(),
                f.auc.sd.to_string(),
                self.any_star(&f.run.family, Metric::F1).to_string(),
                self.any_star(&f.run.family, Metric::Auc).to_string(),
                opt(f.exact_match.map(|s| s.mean)),
                opt(f.exact_match.map(|s| s.sd)),
                f.parse_failures.to_string(),
            ]);
        }
        csv_string(rows)
    }

    pub fn per_seed_csv(&self) -> String {
        let mut rows = vec![[
            "family",
            "seed",
            "f1",
            "auc",
            "exact_match",
            "n_tiles",
            "parse_failures",
        ]
        .map(String::from)
        .to_vec()];
        for f in &self.families {
            for s in &f.run.seeds {
                rows.push(vec![
                    f.run.family.clone(),
                    s.seed.to_string(),
                    s.f1.to_string(),
                    s.auc.to_string(),
                    opt(s.exact_match),
                    s.n_tiles.to_string(),
                    s.parse_failures.to_string(),
                ]);
            }
        }
        csv_string(rows)
    }

    pub fn ttests_csv(&self) -> String {
        let mut rows = vec![["metric", "family_a", "family_b", "t", "p", "df", "degenerate"]
            .map(String::from)
            .to_vec()];
        for t in &self.tests {
            rows.push(vec![
                t.metric.as_str().to_string(),
                t.a.clone(),
                t.b.clone(),
                t.test.t.to_string(),
                t.test.p.to_string(),
                t.test.df.to_string(),
                t.test
                    .degenerate
                    .map(|d| {
                        serde_json::to_value(d)
                            .expect("enum")
                            .as_str()
                            .unwrap_or_default()
                            .to_string()
                    })
                    .unwrap_or_default(),
            ]);
        }
        csv_string(rows)
    }

    /// Human-readable tables, one per table number.
    pub fn render_text(&self) -> String {
        let tables: BTreeSet<u8> = self
            .families
            .iter()
            .flat_map(|f| f.run.tables.iter().copied())
            .collect();
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", ");
        let mut out = String::new();
        for table in tables {
            let rows: Vec<&MetricsReport> = self.families.iter().filter(|f| f.run.tables.contains(&table)).collect();
            let cell = |f: &MetricsReport, m: Metric| {
                let s = f.summary(m);
                let star = if self.starred(table, &f.run.family, m) { "*" } else { "" };
                format!("{:.3} ({:.4}){star}", s.mean, s.sd)
            };
            let header = ["Pre-training", "Finetuning", "F1 score (SD)", "AUC (SD)"];
            let body: Vec<[String; 4]> = rows
                .iter()
                .map(|f| {
                    [
                        f.run.pretraining.clone(),
                        f.run.finetuning.clone(),
                        cell(f, Metric::F1),
                        cell(f, Metric::Auc),
                    ]
                })
                .collect();
            let mut widths = header.map(str::len);
            for r in &body {
                for (w, c) in widths.iter_mut().zip(r) {
                    *w = (*w).max(c.chars().count());
                }
            }
            let line = |cells: [&str; 4]| {
                let mut s = String::new();
                for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                    if i > 0 {
                        s.push_str(" | ");
                    }
                    let _ = write!(s, "{c:<w$}");
                }
                s.trim_end().to_string()
            };
            let _ = writeln!(out, "Table {table}. Mean test F1 and AUC over seeds {seeds}");
            let _ = writeln!(out, "{}", line(header));
            let _ = writeln!(out, "{}", widths.map(|w| "-".repeat(w)).join("-+-"));
            for r in &body {
                let _ = writeln!(out, "{}", line([&r[0], &r[1], &r[2], &r[3]]));
            }
            let _ = writeln!(
                out,
                "* highest mean and paired t-test p < {SIGNIFICANCE_LEVEL} against every other row"
            );
            let em: Vec<&&MetricsReport> = rows.iter().filter(|f| f.exact_match.is_some()).collect();
            for f in em {
                let s = f.exact_match.expect("filtered");
                let _ = writeln!(
                    out,
                    "Exact caption match, {}: {:.3} ± {:.4}",
                    f.run.family, s.mean, s.sd
                );
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        fs::create_dir_all(dir).map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
        for (name, body) in [
            (SUMMARY_CSV, self.summary_csv()),
            (PER_SEED_CSV, self.per_seed_csv()),
            (TTESTS_CSV, self.ttests_csv()),
            (REPORT_TXT, self.render_text()),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| EvalError::Io(format!("{}: {e}", p.display())))?;
        }
        Ok(())
    }
}

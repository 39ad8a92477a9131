//! Monte Carlo studies: MSE ratios of tail estimates, interval coverage,
//! normal covariance loss and GLM prediction error.
//!
//! Each study first produces long-format [`ReplicateRecord`]s (one value per
//! replicate and key) and then derives its [`ExperimentRow`]s from those
//! records alone, so every reported number can be recomputed from the stored
//! records with [`rows_from_records`].

mod stats;
mod studies;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use stats::{mean_se, proportion_se, ratio_of_means_se, sd_se};
pub use studies::{ar1_covariance, covariance_loss, prediction_error, EXPONENTIAL_RATE, PE_TEST_POINTS};

use crate::error::{LqError, Result};
use crate::families::GlmLink;
use crate::resampling::{check_budget, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    MseRatio,
    Coverage,
    MvnLoss,
    GlmPe,
}

impl Study {
    pub fn as_str(self) -> &'static str {
        match self {
            Study::MseRatio => "mse_ratio",
            Study::Coverage => "coverage",
            Study::MvnLoss => "mvn_loss",
            Study::GlmPe => "glm_pe",
        }
    }

    fn stream_id(self) -> u64 {
        match self {
            Study::MseRatio => 1,
            Study::Coverage => 2,
            Study::MvnLoss => 3,
            Study::GlmPe => 4,
        }
    }
}

/// How `q` depends on the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QRule {
    Fixed(f64),
    /// `[1/2 + e^{0.3(n−20)}] / [1 + e^{0.3(n−20)}]`
    LogisticSeq,
    /// `1 − 1/(10 log(n + 10))`
    LogSeq,
    /// `1 − 1/n`
    OneMinusInvN,
    /// Data-driven: minimize the exponential MSE criterion at the MLE.
    SelectQstar,
}

impl QRule {
    pub fn label(&self) -> String {
        match self {
            QRule::Fixed(q) => format!("fixed({q})"),
            QRule::LogisticSeq => "logistic_seq".into(),
            QRule::LogSeq => "log_seq".into(),
            QRule::OneMinusInvN => "one_minus_inv_n".into(),
            QRule::SelectQstar => "select_qstar".into(),
        }
    }
}

/// Value of a deterministic `q` rule at sample size `n`.
pub fn q_sequence(rule: QRule, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(LqError::Config(format!("q sequences need n ≥ 2, got {n}")));
    }
    let nf = n as f64;
    match rule {
        QRule::Fixed(q) if q > 0.0 && q.is_finite() => Ok(q),
        QRule::Fixed(q) => Err(LqError::Config(format!("fixed q must be positive, got {q}"))),
        QRule::LogisticSeq => {
            // Written with e^{−0.3(n−20)} to stay finite for large n.
            let e = (-0.3 * (nf - 20.0)).exp();
            Ok((0.5 * e + 1.0) / (e + 1.0))
        }
        QRule::LogSeq => Ok(1.0 - 1.0 / (10.0 * (nf + 10.0).ln())),
        QRule::OneMinusInvN => Ok(1.0 - 1.0 / nf),
        QRule::SelectQstar => Err(LqError::Config(
            "select_qstar is data-driven and has no closed-form sequence".into(),
        )),
    }
}

/// Threshold sequence `x_n = n^{1/(2+δ)}`.
pub fn x_sequence(delta: f64, n: usize) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(LqError::Config(format!("delta must be positive, got {delta}")));
    }
    Ok((n as f64).powf(1.0 / (2.0 + delta)))
}

/// `q` handling inside bootstrap replicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapQMode {
    #[default]
    Fixed,
    Reselect,
}

fn default_p() -> usize {
    1
}

fn default_rho() -> f64 {
    0.5
}

fn default_bootstrap() -> usize {
    500
}

/// Configuration of one study. Mirrors the JSON config file field for field;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub study: Study,
    pub n_values: Vec<usize>,
    /// Monte Carlo replicates per sample size.
    #[serde(alias = "B")]
    pub replicates: usize,
    /// Defaults: `select_qstar` for coverage, `one_minus_inv_n` for the
    /// normal and GLM studies. Required for the MSE-ratio study.
    #[serde(default)]
    pub q_rule: Option<QRule>,
    /// Target tail probability; sets `x = −log(α)/λ₀`.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Fixed threshold.
    #[serde(default)]
    pub x: Option<f64>,
    /// Threshold sequence `x_n = n^{1/(2+δ)}`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub link: Option<GlmLink>,
    /// Bootstrap replicates in the coverage study; 0 disables the bootstrap.
    #[serde(default = "default_bootstrap")]
    pub bootstrap_replicates: usize,
    #[serde(default)]
    pub bootstrap_q: BootstrapQMode,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentSpec {
    /// A spec with every optional field at its default.
    pub fn new(study: Study, n_values: Vec<usize>, replicates: usize) -> Self {
        ExperimentSpec {
            study,
            n_values,
            replicates,
            q_rule: None,
            alpha: None,
            x: None,
            delta: None,
            p: default_p(),
            rho: default_rho(),
            link: None,
            bootstrap_replicates: default_bootstrap(),
            bootstrap_q: BootstrapQMode::Fixed,
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| LqError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LqError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn q_rule(&self) -> Result<QRule> {
        match (self.q_rule, self.study) {
            (Some(r), _) => Ok(r),
            (None, Study::Coverage) => Ok(QRule::SelectQstar),
            (None, Study::MvnLoss | Study::GlmPe) => Ok(QRule::OneMinusInvN),
            (None, Study::MseRatio) => Err(LqError::Config("the mse_ratio study needs a q_rule".into())),
        }
    }

    /// Threshold at sample size `n` for the exponential studies.
    pub fn threshold(&self, n: usize) -> Result<f64> {
        match (self.alpha, self.x, self.delta) {
            (Some(a), None, None) => Ok(-a.ln() / EXPONENTIAL_RATE),
            (None, Some(x), None) => Ok(x),
            (None, None, Some(d)) => x_sequence(d, n),
            (None, None, None) => Ok(-(0.01f64.ln()) / EXPONENTIAL_RATE),
            _ => Err(LqError::Config("set at most one of alpha, x and delta".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LqError::Config(m));
        if self.replicates < 2 {
            return bad(format!("replicates must be at least 2, got {}", self.replicates));
        }
        if self.n_values.is_empty() {
            return bad("n_values is empty".into());
        }
        if let Some(&n) = self.n_values.iter().find(|&&n| n < 2) {
            return bad(format!("every n must be at least 2, got {n}"));
        }
        let rule = self.q_rule()?;
        if let QRule::Fixed(q) = rule {
            if !(q > 0.0 && q.is_finite()) {
                return bad(format!("fixed q must be positive, got {q}"));
            }
        }
        match self.study {
            Study::MseRatio | Study::Coverage => {
                if let Some(a) = self.alpha {
                    if !(a > 0.0 && a < 1.0) {
                        return bad(format!("alpha must lie in (0, 1), got {a}"));
                    }
                }
                if let Some(x) = self.x {
                    if !(x > 0.0 && x.is_finite()) {
                        return bad(format!("x must be positive, got {x}"));
                    }
                }
                self.threshold(self.n_values[0])?;
                if self.study == Study::Coverage && self.bootstrap_replicates == 1 {
                    return bad("bootstrap_replicates must be 0 or at least 2".into());
                }
            }
            Study::MvnLoss => {
                if self.p == 0 {
                    return bad("p must be at least 1".into());
                }
                if !(self.rho.abs() < 1.0) {
                    return bad(format!("rho must lie in (−1, 1), got {}", self.rho));
                }
                if let Some(&n) = self.n_values.iter().find(|&&n| n <= self.p) {
                    return bad(format!("n = {n} cannot determine a {p}x{p} covariance", p = self.p));
                }
                if rule == QRule::SelectQstar {
                    return bad("select_qstar applies only to the exponential studies".into());
                }
            }
            Study::GlmPe => {
                if self.p == 0 || self.p > crate::families::BETA_FIXTURE.len() {
                    return bad(format!("p must be between 1 and 12, got {}", self.p));
                }
                if self.link.is_none() {
                    return bad("the glm_pe study needs a link (logistic or exp_reg)".into());
                }
                if let Some(&n) = self.n_values.iter().find(|&&n| n < self.p) {
                    return bad(format!("n = {n} is smaller than p = {}", self.p));
                }
                if rule == QRule::SelectQstar {
                    return bad("select_qstar applies only to the exponential studies".into());
                }
            }
        }
        Ok(())
    }

    fn replicate_seed(&self, n: usize, replicate: usize) -> u64 {
        derive_seed(self.seed, &[self.study.stream_id(), n as u64, replicate as u64])
    }

    fn cell_seed(&self, n: usize) -> u64 {
        derive_seed(self.seed, &[self.study.stream_id(), n as u64, u64::MAX])
    }
}

/// One line of study output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub study: String,
    pub n: usize,
    pub p: usize,
    pub q_rule: String,
    pub q_mean: f64,
    pub metric: String,
    pub value: f64,
    pub se: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub dropped_replicates: usize,
    pub seed: u64,
}

pub const CSV_HEADER: [&str; 11] = [
    "study",
    "n",
    "p",
    "q_rule",
    "q_mean",
    "metric",
    "value",
    "se",
    "B",
    "dropped_replicates",
    "seed",
];

/// One per-replicate value. A failed replicate is stored as the single key
/// `dropped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    pub key: String,
    pub value: f64,
}

pub const DROPPED_KEY: &str = "dropped";

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub rows: Vec<ExperimentRow>,
    pub records: Vec<ReplicateRecord>,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Worker threads; results do not depend on this.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { workers: 1 }
    }
}

pub fn run_study(spec: &ExperimentSpec, opts: &RunOptions) -> Result<StudyOutput> {
    match spec.study {
        Study::MseRatio => run_mse_ratio(spec, opts),
        Study::Coverage => run_coverage(spec, opts),
        Study::MvnLoss => run_mvn_loss(spec, opts),
        Study::GlmPe => run_glm_pe(spec, opts),
    }
}

fn expect_study(spec: &ExperimentSpec, study: Study) -> Result<()> {
    spec.validate()?;
    if spec.study != study {
        return Err(LqError::Config(format!(
            "spec is for the {} study, not {}",
            spec.study.as_str(),
            study.as_str()
        )));
    }
    Ok(())
}

/// MSE of the MLE tail estimate over that of the MLqE, per `n`.
pub fn run_mse_ratio(spec: &ExperimentSpec, opts: &RunOptions) -> Result<StudyOutput> {
    expect_study(spec, Study::MseRatio)?;
    run_with(spec, opts, studies::mse_ratio_replicate)
}

/// Means, SDs, standard errors, interval coverage and relative length.
pub fn run_coverage(spec: &ExperimentSpec, opts: &RunOptions) -> Result<StudyOutput> {
    expect_study(spec, Study::Coverage)?;
    run_with(spec, opts, studies::coverage_replicate)
}

/// Covariance loss of the corrected MLE over that of the MLqE.
pub fn run_mvn_loss(spec: &ExperimentSpec, opts: &RunOptions) -> Result<StudyOutput> {
    expect_study(spec, Study::MvnLoss)?;
    run_with(spec, opts, studies::mvn_loss_replicate)
}

/// Out-of-sample prediction error of the MLE over that of the MLqE.
pub fn run_glm_pe(spec: &ExperimentSpec, opts: &RunOptions) -> Result<StudyOutput> {
    expect_study(spec, Study::GlmPe)?;
    run_with(spec, opts, studies::glm_pe_replicate)
}

type Outcome = Result<Vec<(&'static str, f64)>>;

/// Per-`n` context shared by all replicates of a cell.
pub(crate) struct Cell<'a> {
    pub spec: &'a ExperimentSpec,
    pub n: usize,
    pub rule: QRule,
    pub shared: studies::Shared,
}

fn run_with<F>(spec: &ExperimentSpec, opts: &RunOptions, replicate: F) -> Result<StudyOutput>
where
    F: Fn(&Cell<'_>, u64) -> Outcome + Sync,
{
    let rule = spec.q_rule()?;
    let mut records = Vec::new();
    for &n in &spec.n_values {
        let cell = Cell {
            spec,
            n,
            rule,
            shared: studies::Shared::new(spec, n, spec.cell_seed(n))?,
        };
        let outcomes = par_map(spec.replicates, opts.workers, |r| replicate(&cell, spec.replicate_seed(n, r)));
        for (r, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(values) => records.extend(values.into_iter().map(|(k, v)| ReplicateRecord {
                    n,
                    replicate: r,
                    key: k.to_string(),
                    value: v,
                })),
                Err(_) => records.push(ReplicateRecord {
                    n,
                    replicate: r,
                    key: DROPPED_KEY.to_string(),
                    value: 1.0,
                }),
            }
        }
    }
    let rows = rows_from_records(spec, &records)?;
    Ok(StudyOutput { rows, records })
}

fn par_map<T, F>(count: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| (0..count).into_par_iter().map(&f).collect());
        }
    }
    let _ = workers;
    (0..count).map(f).collect()
}

/// Kept replicates of one `n`, keyed by record name, plus the dropped count.
pub(crate) struct CellRecords {
    pub columns: BTreeMap<String, Vec<f64>>,
    pub dropped: usize,
}

impl CellRecords {
    pub fn column(&self, key: &str) -> Option<&[f64]> {
        self.columns.get(key).map(Vec::as_slice)
    }
}

/// Rebuilds the study rows from stored per-replicate records.
pub fn rows_from_records(spec: &ExperimentSpec, records: &[ReplicateRecord]) -> Result<Vec<ExperimentRow>> {
    let rule = spec.q_rule()?;
    let mut rows = Vec::new();
    for &n in &spec.n_values {
        let mut by_rep: BTreeMap<usize, Vec<&ReplicateRecord>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.n == n) {
            by_rep.entry(r.replicate).or_default().push(r);
        }
        let mut cell = CellRecords {
            columns: BTreeMap::new(),
            dropped: 0,
        };
        for recs in by_rep.values() {
            if recs.iter().any(|r| r.key == DROPPED_KEY) {
                cell.dropped += 1;
                continue;
            }
            for r in recs {
                cell.columns.entry(r.key.clone()).or_default().push(r.value);
            }
        }
        check_budget(cell.dropped, spec.replicates)?;
        let q_mean = cell.column("q").map(|q| mean_se(q).0).unwrap_or(f64::NAN);
        let p = match spec.study {
            Study::MseRatio | Study::Coverage => 1,
            _ => spec.p,
        };
        for (metric, value, se) in studies::metrics(spec.study, &cell)? {
            rows.push(ExperimentRow {
                study: spec.study.as_str().to_string(),
                n,
                p,
                q_rule: rule.label(),
                q_mean,
                metric,
                value,
                se,
                b: spec.replicates,
                dropped_replicates: cell.dropped,
                seed: spec.seed,
            });
        }
    }
    Ok(rows)
}

pub fn write_rows<W: Write>(writer: W, rows: &[ExperimentRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(reader: R) -> Result<Vec<ExperimentRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(LqError::Config(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(LqError::from)).collect()
}

pub fn write_records<W: Write>(writer: W, records: &[ReplicateRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<ReplicateRecord>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|row| row.map_err(LqError::from))
        .collect()
}

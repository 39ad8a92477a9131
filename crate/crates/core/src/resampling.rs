//! Bootstrap standard errors and percentile intervals for plug-in tail
//! probability estimates.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LqError, Result};
use crate::lq::{solve_mlqe, DistortionParam, FitResult, SolverOptions};
use crate::tail::TailModel;
use crate::Param;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapKind {
    /// Resample the data with replacement.
    Nonparametric,
    /// Simulate from the fitted model.
    Parametric,
}

/// How `q` is chosen inside each bootstrap replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapQ {
    /// Keep the `q` of the original fit.
    Fixed(DistortionParam),
    /// Re-run the model's `q` selection on each replicate sample.
    Reselect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub se_boot: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Configured number of replicates, including dropped ones.
    pub replicates: usize,
    pub dropped: usize,
    pub kind: BootstrapKind,
}

/// Largest share of failed replicate fits tolerated before giving up.
pub const MAX_DROP_FRACTION: f64 = 0.10;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed for stream `path` under `master`. Distinct paths give
/// statistically independent ChaCha streams.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

/// The `floor((m + 1)p)`-th order statistic (1-based, clamped to `[1, m]`)
/// of sorted data.
pub fn order_statistic(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    let k = (((m + 1) as f64 * p).floor() as usize).clamp(1, m);
    sorted[k - 1]
}

pub(crate) fn check_budget(dropped: usize, total: usize) -> Result<()> {
    if dropped as f64 > MAX_DROP_FRACTION * total as f64 {
        Err(LqError::FailureBudget { dropped, total })
    } else {
        Ok(())
    }
}

/// Bootstrap distribution of `α(x; θ̃)`.
///
/// `fit` is the MLqE on the original `sample`; the parametric kind simulates
/// from it. Each replicate `b` draws from its own stream
/// `derive_seed(seed, [b])`, so results depend only on the inputs.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_tail<M: TailModel>(
    sample: &[M::Obs],
    model: &M,
    fit: &FitResult,
    q_rule: BootstrapQ,
    x: f64,
    replicates: usize,
    kind: BootstrapKind,
    seed: u64,
) -> Result<BootstrapResult> {
    if sample.is_empty() {
        return Err(LqError::Degenerate("empty sample".into()));
    }
    if replicates < 2 {
        return Err(LqError::Config("bootstrap needs at least two replicates".into()));
    }
    let n = sample.len();
    let prep = model.prepare(&fit.theta)?;
    let opts = SolverOptions::default();
    let mut estimates = Vec::with_capacity(replicates);
    let mut resample: Vec<M::Obs> = Vec::with_capacity(n);
    for b in 0..replicates {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b as u64]));
        resample.clear();
        match kind {
            BootstrapKind::Nonparametric => {
                resample.extend((0..n).map(|_| sample.choose(&mut rng).expect("nonempty").clone()))
            }
            BootstrapKind::Parametric => resample.extend((0..n).map(|_| model.sample_at(&prep, &mut rng))),
        }
        if let Ok(a) = replicate_estimate(&resample, model, q_rule, x, &opts) {
            estimates.push(a);
        }
    }
    let dropped = replicates - estimates.len();
    check_budget(dropped, replicates)?;
    summarize(estimates, replicates, dropped, kind)
}

fn replicate_estimate<M: TailModel>(
    sample: &[M::Obs],
    model: &M,
    q_rule: BootstrapQ,
    x: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    let q = match q_rule {
        BootstrapQ::Fixed(q) => q,
        BootstrapQ::Reselect => {
            let mle: Param = model.mle(sample)?;
            DistortionParam::new(model.select_q(&mle, x, sample.len())?.q_star)?
        }
    };
    let fit = solve_mlqe(sample, model, q, opts)?.into_converged()?;
    let a = model.tail_prob(&fit.theta, x)?;
    if a.is_finite() {
        Ok(a)
    } else {
        Err(LqError::domain("non-finite replicate estimate"))
    }
}

fn summarize(mut est: Vec<f64>, replicates: usize, dropped: usize, kind: BootstrapKind) -> Result<BootstrapResult> {
    let m = est.len();
    if m < 2 {
        return Err(LqError::FailureBudget { dropped, total: replicates });
    }
    let mean = est.iter().sum::<f64>() / m as f64;
    let var = est.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (m - 1) as f64;
    est.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        se_boot: var.sqrt(),
        ci_low: order_statistic(&est, 0.025),
        ci_high: order_statistic(&est, 0.975),
        replicates,
        dropped,
        kind,
    })
}

//! Replicate bodies and row summaries for each study.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::stats::{mean_se, proportion_se, ratio_of_means_se, sd_se};
use super::{Cell, CellRecords, ExperimentSpec, Outcome, QRule, Study};
use crate::error::{LqError, Result};
use crate::families::{beta_fixture, uniform_design, ExponentialModel, FamilyModel, GlmModel, GlmObs, MvnModel};
use crate::lq::{solve_mlqe, DistortionParam, SolverOptions};
use crate::resampling::{bootstrap_tail, derive_seed, BootstrapKind, BootstrapQ};
use crate::tail::{plugin_tail_estimate, TailModel};
use crate::experiments::{q_sequence, BootstrapQMode};
use crate::Param;

/// True rate in the exponential studies.
pub const EXPONENTIAL_RATE: f64 = 1.0;
/// Fresh design points per replicate for the prediction error.
pub const PE_TEST_POINTS: usize = 1000;
const Z_975: f64 = 1.959_963_984_540_054;

/// Per-`n` state shared by all replicates.
pub(crate) enum Shared {
    Exponential,
    Mvn {
        model: MvnModel,
        theta0: Param,
        sigma_inv: DMatrix<f64>,
    },
    Glm {
        model: GlmModel,
        design: DMatrix<f64>,
        beta: Param,
    },
}

impl Shared {
    pub fn new(spec: &ExperimentSpec, n: usize, seed: u64) -> Result<Self> {
        Ok(match spec.study {
            Study::MseRatio | Study::Coverage => Shared::Exponential,
            Study::MvnLoss => {
                let model = MvnModel::new(spec.p)?;
                let sigma = ar1_covariance(spec.p, spec.rho);
                let sigma_inv = sigma
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| LqError::Config("covariance is singular".into()))?;
                let theta0 = model.pack(&DVector::zeros(spec.p), &sigma);
                Shared::Mvn {
                    model,
                    theta0,
                    sigma_inv,
                }
            }
            Study::GlmPe => {
                let link = spec
                    .link
                    .ok_or_else(|| LqError::Config("the glm_pe study needs a link".into()))?;
                let model = GlmModel::new(link, spec.p)?;
                // Design points are drawn once per sample size and held fixed
                // across replicates.
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let design = uniform_design(n, spec.p, &mut rng);
                Shared::Glm {
                    model,
                    design,
                    beta: beta_fixture(spec.p)?,
                }
            }
        })
    }
}

/// `Σᵢⱼ = ρ^{|i−j|}`.
pub fn ar1_covariance(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

/// `Δ(Σ, Σ̂) = tr[(Σ⁻¹Σ̂ − I)²]`.
pub fn covariance_loss(sigma: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<f64> {
    let inv = sigma
        .clone()
        .try_inverse()
        .ok_or_else(|| LqError::domain("reference covariance is singular"))?;
    Ok(loss_with_inverse(&inv, estimate))
}

fn loss_with_inverse(sigma_inv: &DMatrix<f64>, estimate: &DMatrix<f64>) -> f64 {
    let p = estimate.nrows();
    let m = sigma_inv * estimate - DMatrix::identity(p, p);
    (&m * &m).trace()
}

/// Mean squared error `(1/m) Σ (yⱼ − η(xⱼ; β̂))²` over test points.
pub fn prediction_error(model: &GlmModel, beta_hat: &Param, test: &[GlmObs]) -> f64 {
    test.iter()
        .map(|o| {
            let r = o.y - model.mean_response(beta_hat, &o.x);
            r * r
        })
        .sum::<f64>()
        / test.len() as f64
}

fn resolve_q(rule: QRule, mle: &Param, x: f64, n: usize) -> Result<DistortionParam> {
    let q = match rule {
        QRule::SelectQstar => ExponentialModel.select_q(mle, x, n)?.q_star,
        other => q_sequence(other, n)?,
    };
    DistortionParam::new(q)
}

fn exponential_sample(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    ExponentialModel.sample(&Param::from_element(1, EXPONENTIAL_RATE), n, rng)
}

pub(crate) fn mse_ratio_replicate(cell: &Cell<'_>, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cell.n;
    let x = cell.spec.threshold(n)?;
    let truth = (-EXPONENTIAL_RATE * x).exp();
    let sample = exponential_sample(n, &mut rng)?;
    let mle = ExponentialModel.mle(&sample)?;
    let q = resolve_q(cell.rule, &mle, x, n)?;
    let fit = solve_mlqe(&sample, &ExponentialModel, q, &SolverOptions::default())?.into_converged()?;
    let a_mle = ExponentialModel.tail_prob(&mle, x)?;
    let a_q = ExponentialModel.tail_prob(&fit.theta, x)?;
    Ok(vec![
        ("q", q.value()),
        ("sq_err_mle", (a_mle - truth).powi(2)),
        ("sq_err_mlqe", (a_q - truth).powi(2)),
    ])
}

/// `(lo, hi)` of `est ± z·se`, clamped to `[0, 1]`.
fn asymptotic_interval(est: f64, se: f64) -> (f64, f64) {
    ((est - Z_975 * se).max(0.0), (est + Z_975 * se).min(1.0))
}

const BOOT_KEYS: [[[&str; 3]; 2]; 2] = [
    [
        ["se_boot_mle", "cover_boot_mle", "len_boot_mle"],
        ["se_pboot_mle", "cover_pboot_mle", "len_pboot_mle"],
    ],
    [
        ["se_boot_mlqe", "cover_boot_mlqe", "len_boot_mlqe"],
        ["se_pboot_mlqe", "cover_pboot_mlqe", "len_pboot_mlqe"],
    ],
];

pub(crate) fn coverage_replicate(cell: &Cell<'_>, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = cell.spec;
    let n = cell.n;
    let x = spec.threshold(n)?;
    let truth = (-EXPONENTIAL_RATE * x).exp();
    let sample = exponential_sample(n, &mut rng)?;
    let opts = SolverOptions::default();
    let model = ExponentialModel;

    let fit_mle = solve_mlqe(&sample, &model, DistortionParam::ONE, &opts)?.into_converged()?;
    let q = resolve_q(cell.rule, &fit_mle.theta, x, n)?;
    let fit_q = solve_mlqe(&sample, &model, q, &opts)?.into_converged()?;
    let t_mle = plugin_tail_estimate(&fit_mle, &model, x, n)?;
    let t_q = plugin_tail_estimate(&fit_q, &model, x, n)?;
    let (lo1, hi1) = asymptotic_interval(t_mle.alpha_hat, t_mle.se_asy);
    let (loq, hiq) = asymptotic_interval(t_q.alpha_hat, t_q.se_asy);
    let covers = |lo: f64, hi: f64| f64::from(u8::from(lo <= truth && truth <= hi));

    let mut out = vec![
        ("q", q.value()),
        ("est_mle", t_mle.alpha_hat),
        ("est_mlqe", t_q.alpha_hat),
        ("se_asy_mle", t_mle.se_asy),
        ("se_asy_mlqe", t_q.se_asy),
        ("cover_asy_mle", covers(lo1, hi1)),
        ("cover_asy_mlqe", covers(loq, hiq)),
        ("len_asy_mle", hi1 - lo1),
        ("len_asy_mlqe", hiq - loq),
    ];

    if spec.bootstrap_replicates >= 2 {
        for (arm, fit) in [&fit_mle, &fit_q].into_iter().enumerate() {
            let rule = match (arm, spec.bootstrap_q) {
                (1, BootstrapQMode::Reselect) => BootstrapQ::Reselect,
                _ => BootstrapQ::Fixed(fit.q),
            };
            for (k, kind) in [BootstrapKind::Nonparametric, BootstrapKind::Parametric].into_iter().enumerate() {
                let boot_seed = derive_seed(seed, &[arm as u64, k as u64]);
                let r = bootstrap_tail(&sample, &model, fit, rule, x, spec.bootstrap_replicates, kind, boot_seed)?;
                let [se_key, cover_key, len_key] = BOOT_KEYS[arm][k];
                out.push((se_key, r.se_boot));
                out.push((cover_key, covers(r.ci_low, r.ci_high)));
                out.push((len_key, r.ci_high - r.ci_low));
            }
        }
    }
    Ok(out)
}

pub(crate) fn mvn_loss_replicate(cell: &Cell<'_>, seed: u64) -> Outcome {
    let Shared::Mvn {
        model,
        theta0,
        sigma_inv,
    } = &cell.shared
    else {
        return Err(LqError::Config("mvn_loss replicate without normal state".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cell.n;
    let sample = model.sample(theta0, n, &mut rng)?;
    let mle = model.mle(&sample)?;
    let (_, s_mle) = model.unpack(&mle)?;
    let s_mle = s_mle * (n as f64 / (n as f64 - 1.0));
    let q = DistortionParam::new(q_sequence(cell.rule, n)?)?;
    let fit = solve_mlqe(&sample, model, q, &SolverOptions::default())?.into_converged()?;
    let (_, s_q) = model.unpack(&fit.theta)?;
    Ok(vec![
        ("q", q.value()),
        ("loss_mle", loss_with_inverse(sigma_inv, &s_mle)),
        ("loss_mlqe", loss_with_inverse(sigma_inv, &s_q)),
    ])
}

pub(crate) fn glm_pe_replicate(cell: &Cell<'_>, seed: u64) -> Outcome {
    let Shared::Glm { model, design, beta } = &cell.shared else {
        return Err(LqError::Config("glm_pe replicate without GLM state".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<GlmObs> = design
        .row_iter()
        .map(|r| {
            let x = r.transpose();
            let y = model.sample_response(beta, &x, &mut rng);
            GlmObs { x, y }
        })
        .collect();
    let mle = model.mle(&sample)?;
    let q = DistortionParam::new(q_sequence(cell.rule, cell.n)?)?;
    let fit = solve_mlqe(&sample, model, q, &SolverOptions::default())?.into_converged()?;
    let test = model.sample(beta, PE_TEST_POINTS, &mut rng)?;
    Ok(vec![
        ("q", q.value()),
        ("pe_mle", prediction_error(model, &mle, &test)),
        ("pe_mlqe", prediction_error(model, &fit.theta, &test)),
    ])
}

type Metric = (String, f64, f64);

fn col<'a>(cell: &'a CellRecords, key: &str) -> Result<&'a [f64]> {
    cell.column(key)
        .filter(|c| c.len() >= 2)
        .ok_or_else(|| LqError::FailureBudget {
            dropped: cell.dropped,
            total: cell.dropped + cell.column(key).map_or(0, <[f64]>::len),
        })
}

fn push_ratio(out: &mut Vec<Metric>, name: &str, num: &[f64], den: &[f64]) {
    let (r, se) = ratio_of_means_se(num, den);
    out.push((name.to_string(), r, se));
}

fn push_mean(out: &mut Vec<Metric>, name: &str, v: &[f64]) {
    let (m, se) = mean_se(v);
    out.push((name.to_string(), m, se));
}

pub(crate) fn metrics(study: Study, cell: &CellRecords) -> Result<Vec<Metric>> {
    let mut out = Vec::new();
    match study {
        Study::MseRatio => {
            let (a, b) = (col(cell, "sq_err_mle")?, col(cell, "sq_err_mlqe")?);
            push_ratio(&mut out, "mse_ratio", a, b);
            push_mean(&mut out, "mse_mle", a);
            push_mean(&mut out, "mse_mlqe", b);
        }
        Study::Coverage => {
            for arm in ["mlqe", "mle"] {
                let est = col(cell, &format!("est_{arm}"))?;
                push_mean(&mut out, &format!("{arm}_mean"), est);
                let (sd, se) = sd_se(est);
                out.push((format!("{arm}_sd"), sd, se));
                for kind in ["asy", "boot", "pboot"] {
                    let Some(se_col) = cell.column(&format!("se_{kind}_{arm}")) else {
                        continue;
                    };
                    push_mean(&mut out, &format!("{arm}_se_{kind}"), se_col);
                    let (c, cse) = proportion_se(col(cell, &format!("cover_{kind}_{arm}"))?);
                    out.push((format!("{arm}_coverage_{kind}"), c, cse));
                }
            }
            for kind in ["asy", "boot", "pboot"] {
                if let (Some(lq), Some(l1)) = (
                    cell.column(&format!("len_{kind}_mlqe")),
                    cell.column(&format!("len_{kind}_mle")),
                ) {
                    push_ratio(&mut out, &format!("rl_{kind}"), lq, l1);
                }
            }
        }
        Study::MvnLoss => {
            let (a, b) = (col(cell, "loss_mle")?, col(cell, "loss_mlqe")?);
            push_ratio(&mut out, "loss_ratio", a, b);
            push_mean(&mut out, "loss_mle", a);
            push_mean(&mut out, "loss_mlqe", b);
        }
        Study::GlmPe => {
            let (a, b) = (col(cell, "pe_mle")?, col(cell, "pe_mlqe")?);
            push_ratio(&mut out, "pe_ratio", a, b);
            push_mean(&mut out, "pe_mle", a);
            push_mean(&mut out, "pe_mlqe", b);
        }
    }
    Ok(out)
}

//! Plug-in inference for upper-tail probabilities `α(x; θ) = P_θ(X > x)` and
//! quantiles `ρ(s; θ) = α⁻¹(s; θ)`, and the data-driven choice of `q` for the
//! exponential model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{exponential_sigma2, numeric_sandwich, numeric_surrogate, MomentEngine};
use crate::error::{LqError, Result};
use crate::families::{ExponentialModel, FamilyModel};
use crate::lq::{DistortionParam, FitResult};
use crate::Param;

/// Models with a closed-form tail function.
pub trait TailModel: FamilyModel {
    fn tail_prob(&self, theta: &Param, x: f64) -> Result<f64>;
    /// `∇θ α(x; θ)`.
    fn tail_prob_gradient(&self, theta: &Param, x: f64) -> Result<Param>;
    fn quantile(&self, theta: &Param, s: f64) -> Result<f64>;
    /// `∇θ ρ(s; θ)`.
    fn quantile_gradient(&self, theta: &Param, s: f64) -> Result<Param>;
    /// Asymptotic covariance of `√n(θ̃ − θ*)` with the estimate plugged in for
    /// the true parameter.
    fn plugin_variance(&self, theta: &Param, q: DistortionParam) -> Result<DMatrix<f64>>;

    /// Minimizes a model-specific MSE criterion over `q ∈ (0, 1)`.
    fn select_q(&self, _theta_hat: &Param, _x: f64, _n: usize) -> Result<QSelection> {
        Err(LqError::Unsupported(format!("no MSE model registered for the {} family", self.name())))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailEstimate {
    pub alpha_hat: f64,
    pub x: f64,
    pub se_asy: f64,
    pub q: DistortionParam,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QSelection {
    pub q_star: f64,
    pub objective_at_qstar: f64,
    pub lambda_hat_used: f64,
    /// The objective did not single out one grid point; the largest
    /// minimizing `q` was returned.
    pub tie: bool,
}

fn check_prob(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(LqError::domain(format!("probability must lie in (0, 1), got {s}")))
    }
}

fn rate(theta: &Param) -> Result<f64> {
    ExponentialModel.prepare(theta)
}

impl TailModel for ExponentialModel {
    fn tail_prob(&self, theta: &Param, x: f64) -> Result<f64> {
        let l = rate(theta)?;
        Ok(if x <= 0.0 { 1.0 } else { (-l * x).exp() })
    }

    fn tail_prob_gradient(&self, theta: &Param, x: f64) -> Result<Param> {
        let l = rate(theta)?;
        let x = x.max(0.0);
        Ok(Param::from_element(1, -x * (-l * x).exp()))
    }

    fn quantile(&self, theta: &Param, s: f64) -> Result<f64> {
        check_prob(s)?;
        Ok(-s.ln() / rate(theta)?)
    }

    fn quantile_gradient(&self, theta: &Param, s: f64) -> Result<Param> {
        check_prob(s)?;
        let l = rate(theta)?;
        Ok(Param::from_element(1, s.ln() / (l * l)))
    }

    fn plugin_variance(&self, theta: &Param, q: DistortionParam) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_element(1, 1, exponential_sigma2(rate(theta)?, q)?))
    }

    fn select_q(&self, theta_hat: &Param, x: f64, n: usize) -> Result<QSelection> {
        select_q(rate(theta_hat)?, x, n)
    }
}

fn delta_se(grad: &Param, v: &DMatrix<f64>, n: usize) -> f64 {
    ((grad.transpose() * v * grad)[(0, 0)].max(0.0) / n as f64).sqrt()
}

fn require_converged(fit: &FitResult) -> Result<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(LqError::NonConvergence {
            iterations: fit.iterations,
            score_norm: fit.score_norm,
        })
    }
}

/// `α(x; θ̃)` with standard error `√(∇αᵀ V ∇α / n)`, where `V` is the
/// model's plug-in variance at the estimate.
pub fn plugin_tail_estimate<M: TailModel>(fit: &FitResult, model: &M, x: f64, n: usize) -> Result<TailEstimate> {
    require_converged(fit)?;
    let v = model.plugin_variance(&fit.theta, fit.q)?;
    tail_estimate_with_variance(fit, model, x, n, &v)
}

/// As [`plugin_tail_estimate`], with `V` computed from the defining sandwich
/// expectations by `engine`, treating `θ̃` as the true parameter.
pub fn plugin_tail_estimate_numeric<M, E>(fit: &FitResult, model: &M, engine: &E, x: f64, n: usize) -> Result<TailEstimate>
where
    M: TailModel,
    E: MomentEngine<M>,
{
    require_converged(fit)?;
    let star = numeric_surrogate(model, engine, &fit.theta, fit.q, &fit.theta)?;
    let s = numeric_sandwich(model, engine, &fit.theta, &star, fit.q)?;
    tail_estimate_with_variance(fit, model, x, n, &s.v)
}

fn tail_estimate_with_variance<M: TailModel>(
    fit: &FitResult,
    model: &M,
    x: f64,
    n: usize,
    v: &DMatrix<f64>,
) -> Result<TailEstimate> {
    if n == 0 {
        return Err(LqError::domain("sample size must be positive"));
    }
    let alpha_hat = model.tail_prob(&fit.theta, x)?;
    let grad = model.tail_prob_gradient(&fit.theta, x)?;
    Ok(TailEstimate {
        alpha_hat,
        x,
        se_asy: delta_se(&grad, v, n),
        q: fit.q,
        n,
    })
}

/// `√(∇ρᵀ V ∇ρ / n)` for the plug-in quantile `ρ(s; θ̃)`.
pub fn plugin_quantile_se<M: TailModel>(fit: &FitResult, model: &M, s: f64, n: usize) -> Result<f64> {
    require_converged(fit)?;
    if n == 0 {
        return Err(LqError::domain("sample size must be positive"));
    }
    let v = model.plugin_variance(&fit.theta, fit.q)?;
    Ok(delta_se(&model.quantile_gradient(&fit.theta, s)?, &v, n))
}

/// Bias-adjusted relative efficiency of the MLqE against the MLE for the
/// exponential tail probability:
/// `(n/(λ₀²x²))(e^{−x(λ₀/q−λ₀)} − 1)² + e^{−2x(λ₀/q−λ₀)}`.
pub fn relative_efficiency(n: usize, lambda0: f64, x: f64, q: DistortionParam) -> Result<f64> {
    if !(q.value() < 2.0) || !(x > 0.0) || !(lambda0 > 0.0) {
        return Err(LqError::domain("relative efficiency needs 0 < q < 2, x > 0 and λ₀ > 0"));
    }
    let shift = x * (lambda0 / q.value() - lambda0);
    let e = (-shift).exp_m1();
    Ok(n as f64 / (lambda0 * lambda0 * x * x) * e * e + (-2.0 * shift).exp())
}

/// Bias² plus asymptotic variance of the exponential MLqE tail estimate:
/// `(e^{−λx/q} − e^{−λx})² + σ²(λ, q) x² e^{−2λx/q} / n`.
pub fn mse_q(q: DistortionParam, lambda: f64, x: f64, n: usize) -> Result<f64> {
    let qv = q.value();
    let sigma2 = exponential_sigma2(lambda, q)?;
    let a_star = (-lambda * x / qv).exp();
    let bias = a_star - (-lambda * x).exp();
    Ok(bias * bias + sigma2 * x * x * a_star * a_star / n as f64)
}

const SELECT_GRID: usize = 200;
const SELECT_TOL: f64 = 1e-6;
/// Largest admissible `q`, standing in for the open endpoint 1.
pub const Q_UPPER: f64 = 1.0 - 1e-6;

/// `argmin_{q ∈ (0, 1)} mse_q(q, λ̂, x, n)`: a 200-point grid followed by
/// golden-section refinement around the best grid point.
pub fn select_q(lambda_hat: f64, x: f64, n: usize) -> Result<QSelection> {
    if !(lambda_hat > 0.0) || !lambda_hat.is_finite() {
        return Err(LqError::domain(format!("λ̂ must be positive, got {lambda_hat}")));
    }
    if n == 0 {
        return Err(LqError::domain("sample size must be positive"));
    }
    let f = |q: f64| mse_q(DistortionParam(q), lambda_hat, x, n).unwrap_or(f64::INFINITY);
    let grid: Vec<f64> = (1..=SELECT_GRID).map(|i| Q_UPPER * i as f64 / SELECT_GRID as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&q| f(q)).collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(LqError::domain("MSE criterion is not finite on the grid"));
    }
    let flat = |v: f64| v - min <= 1e-12 * min.abs().max(f64::MIN_POSITIVE);
    let ties = values.iter().filter(|&&v| flat(v)).count();
    let best = values.iter().rposition(|&v| flat(v)).expect("minimum exists");
    if ties > 1 {
        return Ok(QSelection {
            q_star: grid[best],
            objective_at_qstar: values[best],
            lambda_hat_used: lambda_hat,
            tie: true,
        });
    }
    let lo = if best == 0 { grid[0] * 1e-3 } else { grid[best - 1] };
    let hi = grid.get(best + 1).copied().unwrap_or(Q_UPPER);
    let (mut q_star, mut obj) = golden_section(&f, lo, hi, SELECT_TOL);
    if values[best] < obj {
        q_star = grid[best];
        obj = values[best];
    }
    Ok(QSelection {
        q_star,
        objective_at_qstar: obj,
        lambda_hat_used: lambda_hat,
        tie: false,
    })
}

fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let m = 0.5 * (a + b);
    (m, f(m))
}

/// Lower end `(1 + 2λ₀x/n)⁻¹` of the range of `q` for which the MLqE tail
/// estimate beats the MLE.
pub fn q_lower_bound(lambda0: f64, x: f64, n: usize) -> Result<f64> {
    if !(lambda0 > 0.0) || !(x > 0.0) || n == 0 {
        return Err(LqError::domain("q_lower_bound needs positive λ₀, x and n"));
    }
    Ok(1.0 / (1.0 + 2.0 * lambda0 * x / n as f64))
}

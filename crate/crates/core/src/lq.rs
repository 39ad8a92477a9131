//! The deformed logarithm, the Lq-likelihood, its weighted score and the
//! quasi-Newton solver that produces the MLqE.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LqError, Result};
use crate::families::FamilyModel;
use crate::linalg;
use crate::Param;

/// The distortion parameter `q > 0`. `q = 1` recovers maximum likelihood.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DistortionParam(pub(crate) f64);

impl DistortionParam {
    pub const ONE: DistortionParam = DistortionParam(1.0);

    pub fn new(q: f64) -> Result<Self> {
        if q.is_finite() && q > 0.0 {
            Ok(DistortionParam(q))
        } else {
            Err(LqError::domain(format!("distortion parameter must be positive, got {q}")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 - q`, the exponent applied to the density in the score weights.
    #[inline]
    pub fn one_minus(self) -> f64 {
        1.0 - self.0
    }

    #[inline]
    pub fn is_one(self) -> bool {
        self.0 == 1.0
    }
}

impl TryFrom<f64> for DistortionParam {
    type Error = LqError;
    fn try_from(q: f64) -> Result<Self> {
        DistortionParam::new(q)
    }
}

impl From<DistortionParam> for f64 {
    fn from(q: DistortionParam) -> f64 {
        q.0
    }
}

impl fmt::Display for DistortionParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The deformed logarithm `Lq(u)`.
pub fn lq(u: f64, q: DistortionParam) -> Result<f64> {
    if !(u > 0.0) || !u.is_finite() {
        return Err(LqError::domain(format!("Lq requires a positive argument, got {u}")));
    }
    Ok(lq_of_log(u.ln(), q))
}

/// `Lq(exp(log_u))`, evaluated without leaving log space.
#[inline]
pub fn lq_of_log(log_u: f64, q: DistortionParam) -> f64 {
    if q.is_one() {
        log_u
    } else {
        let a = q.one_minus();
        (a * log_u).exp_m1() / a
    }
}

/// Score weight `f^(1-q)` computed as `exp((1-q) log f)`.
#[inline]
pub fn score_weight(log_density: f64, q: DistortionParam) -> f64 {
    if q.is_one() {
        1.0
    } else {
        (q.one_minus() * log_density).exp()
    }
}

/// Lq-likelihood, weighted score and optionally the score's Jacobian, summed
/// over a sample.
#[derive(Debug, Clone)]
pub struct Accumulated {
    pub objective: f64,
    pub score: Param,
    pub jacobian: Option<DMatrix<f64>>,
}

/// `Σ Lq(f(xᵢ; θ))`. At `q = 1` this is the log-likelihood.
pub fn lq_likelihood<M: FamilyModel>(
    sample: &[M::Obs],
    model: &M,
    theta: &Param,
    q: DistortionParam,
) -> Result<f64> {
    model.check_sample(sample)?;
    let prep = model.prepare(theta)?;
    Ok(model.accumulate(&prep, sample, q, false).objective)
}

/// `Σ U(xᵢ; θ) f(xᵢ; θ)^(1-q)`, the gradient of [`lq_likelihood`].
pub fn weighted_score<M: FamilyModel>(
    sample: &[M::Obs],
    model: &M,
    theta: &Param,
    q: DistortionParam,
) -> Result<Param> {
    model.check_sample(sample)?;
    let prep = model.prepare(theta)?;
    Ok(model.accumulate(&prep, sample, q, false).score)
}

/// Jacobian of [`weighted_score`]: `Σ wᵢ (∇U + (1-q) U Uᵀ)`.
pub fn weighted_score_jacobian<M: FamilyModel>(
    sample: &[M::Obs],
    model: &M,
    theta: &Param,
    q: DistortionParam,
) -> Result<DMatrix<f64>> {
    model.check_sample(sample)?;
    let prep = model.prepare(theta)?;
    Ok(model
        .accumulate(&prep, sample, q, true)
        .jacobian
        .expect("jacobian requested"))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Convergence threshold on the ∞-norm of the estimating equations.
    pub score_tol: f64,
    /// Relative step size below which the iteration is considered stalled.
    pub step_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            score_tol: 1e-8,
            step_tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    Mle,
    /// The model's default point, used when the MLE could not be computed.
    ModelDefault,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Param,
    pub q: DistortionParam,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub score_norm: f64,
    pub start: StartPoint,
    pub n: usize,
}

impl FitResult {
    /// Turns a non-converged fit into an error.
    pub fn into_converged(self) -> Result<FitResult> {
        if self.converged {
            Ok(self)
        } else {
            Err(LqError::NonConvergence {
                iterations: self.iterations,
                score_norm: self.score_norm,
            })
        }
    }
}

struct Point<P> {
    theta: Param,
    prep: P,
    neg_obj: f64,
    neg_grad: Param,
}

fn evaluate<M: FamilyModel>(
    model: &M,
    sample: &[M::Obs],
    q: DistortionParam,
    theta: Param,
) -> Option<Point<M::Prepared>> {
    let prep = model.prepare(&theta).ok()?;
    let acc = model.accumulate(&prep, sample, q, false);
    if !acc.objective.is_finite() || acc.score.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(Point {
        theta,
        prep,
        neg_obj: -acc.objective,
        neg_grad: -acc.score,
    })
}

/// Inverse of the negated objective Hessian when it is positive definite.
fn newton_metric<M: FamilyModel>(
    model: &M,
    sample: &[M::Obs],
    q: DistortionParam,
    point: &Point<M::Prepared>,
) -> Option<DMatrix<f64>> {
    let jac = model.accumulate(&point.prep, sample, q, true).jacobian?;
    let neg = -(&jac + jac.transpose()) * 0.5;
    let ch = neg.cholesky()?;
    let inv = ch.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

/// Maximizes the Lq-likelihood starting from the MLE.
///
/// BFGS on the negated objective with a backtracking (Armijo) line search.
/// The inverse-Hessian approximation is seeded with the exact Hessian at the
/// start when it is negative definite. If BFGS stalls above the score
/// tolerance, a few Newton steps are tried before giving up.
pub fn solve_mlqe<M: FamilyModel>(
    sample: &[M::Obs],
    model: &M,
    q: DistortionParam,
    options: &SolverOptions,
) -> Result<FitResult> {
    let n = sample.len();
    if n < model.min_sample_size() {
        return Err(LqError::Degenerate(format!(
            "{} needs at least {} observations, got {n}",
            model.name(),
            model.min_sample_size()
        )));
    }
    model.check_sample(sample)?;

    let (start_theta, start) = match model.mle(sample) {
        Ok(theta) => (theta, StartPoint::Mle),
        Err(e @ LqError::Degenerate(_)) => return Err(e),
        Err(_) => (model.default_start(sample), StartPoint::ModelDefault),
    };
    let mut current = evaluate(model, sample, q, start_theta)
        .ok_or_else(|| LqError::domain("objective is not finite at the starting point"))?;

    let dim = model.dim();
    let mut h_inv = newton_metric(model, sample, q, &current)
        .unwrap_or_else(|| DMatrix::identity(dim, dim));
    let mut iterations = 0;
    let mut converged = current.neg_grad.amax() <= options.score_tol;

    while !converged && iterations < options.max_iter {
        iterations += 1;
        let mut direction = -(&h_inv * &current.neg_grad);
        let mut slope = current.neg_grad.dot(&direction);
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(dim, dim);
            direction = -current.neg_grad.clone();
            slope = current.neg_grad.dot(&direction);
        }
        let Some(next) = line_search(model, sample, q, &current, &direction, slope) else {
            break;
        };
        let s = &next.theta - &current.theta;
        let y = &next.neg_grad - &current.neg_grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(dim, dim);
            let left = &eye - rho * &s * y.transpose();
            let right = &eye - rho * &y * s.transpose();
            h_inv = &left * &h_inv * &right + rho * &s * s.transpose();
        }
        let rel_step = s.amax() / current.theta.amax().max(1.0);
        current = next;
        converged = current.neg_grad.amax() <= options.score_tol;
        if !converged && rel_step <= options.step_tol {
            break;
        }
    }

    // Newton polish for ill-scaled problems where BFGS stalls near the optimum.
    let mut polish = 0;
    while !converged && polish < 20 && iterations < options.max_iter + 20 {
        polish += 1;
        iterations += 1;
        let Some(metric) = newton_metric(model, sample, q, &current) else {
            break;
        };
        let direction = -(&metric * &current.neg_grad);
        let slope = current.neg_grad.dot(&direction);
        // Near the optimum rounding hides the objective change, so a full
        // step that shrinks the residual is taken before any line search.
        let full = evaluate(model, sample, q, &current.theta + &direction)
            .filter(|cand| cand.neg_grad.amax() < current.neg_grad.amax());
        let next = full.or_else(|| line_search(model, sample, q, &current, &direction, slope));
        let Some(next) = next else { break };
        current = next;
        converged = current.neg_grad.amax() <= options.score_tol;
    }

    let score_norm = current.neg_grad.amax();
    Ok(FitResult {
        theta: current.theta,
        q,
        converged,
        iterations,
        objective: -current.neg_obj,
        score_norm,
        start,
        n,
    })
}

fn line_search<M: FamilyModel>(
    model: &M,
    sample: &[M::Obs],
    q: DistortionParam,
    current: &Point<M::Prepared>,
    direction: &DVector<f64>,
    slope: f64,
) -> Option<Point<M::Prepared>> {
    const ARMIJO: f64 = 1e-4;
    let mut step = 1.0;
    for _ in 0..60 {
        let theta = &current.theta + step * direction;
        if let Some(cand) = evaluate(model, sample, q, theta) {
            if cand.neg_obj <= current.neg_obj + ARMIJO * step * slope {
                return Some(cand);
            }
        }
        step *= 0.5;
    }
    None
}

/// The bias-corrected estimator `q·θ̃` in natural coordinates.
pub fn rescaled_estimate<M: FamilyModel>(fit: &FitResult, model: &M) -> Result<Param> {
    if model.parametrization() != crate::families::Parametrization::Natural {
        return Err(LqError::Unsupported(format!(
            "rescaling needs a natural parametrization; {} is not",
            model.name()
        )));
    }
    if !fit.converged {
        return Err(LqError::NonConvergence {
            iterations: fit.iterations,
            score_norm: fit.score_norm,
        });
    }
    Ok(&fit.theta * fit.q.value())
}

/// Convenience: `max |score|` of a fitted parameter, recomputed from scratch.
pub fn residual_norm<M: FamilyModel>(
    sample: &[M::Obs],
    model: &M,
    theta: &Param,
    q: DistortionParam,
) -> Result<f64> {
    Ok(linalg::max_abs(&weighted_score(sample, model, theta, q)?))
}

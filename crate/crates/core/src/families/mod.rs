//! Parametric models used by the estimator.
//!
//! Every model implements [`FamilyModel`]. Models that are exponential
//! families, `f(x; η) = exp{ηᵀb(x) − A(η)}`, also implement [`ExpFamily`],
//! which exposes the natural-parameter structure needed for the closed-form
//! sandwich matrices and the surrogate parameter.

mod exponential;
mod glm;
mod mvn;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use exponential::{exponential_fixed_point, ExponentialModel};
pub use glm::{beta_fixture, glm_model, uniform_design, GlmLink, GlmModel, GlmObs, GlmSpec, BETA_FIXTURE};
pub use mvn::{mvn_model, MvnModel, MvnPrepared};

use crate::error::{LqError, Result};
use crate::lq::{lq_of_log, score_weight, Accumulated, DistortionParam};
use crate::Param;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    /// The parameter is the natural parameter of an exponential family.
    Natural,
    /// Moment coordinates, e.g. `(μ, vech Σ)` for the normal.
    Moment,
    /// Regression coefficients.
    Glm,
}

/// A parametric model with analytic log-density and score.
///
/// Per-parameter work (matrix factorizations and the like) happens once in
/// [`prepare`](FamilyModel::prepare); the `*_at` methods then evaluate a
/// single observation against the prepared state.
pub trait FamilyModel: Sync {
    type Obs: Clone + Send + Sync;
    type Prepared;

    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn parametrization(&self) -> Parametrization;
    /// Smallest sample for which the MLE is a well-defined interior point.
    fn min_sample_size(&self) -> usize;

    /// Validates `theta` and precomputes whatever the density needs.
    fn prepare(&self, theta: &Param) -> Result<Self::Prepared>;
    fn in_support(&self, x: &Self::Obs) -> bool;

    fn log_density_at(&self, prep: &Self::Prepared, x: &Self::Obs) -> f64;
    /// `U(x; θ) = ∇θ log f(x; θ)`.
    fn score_at(&self, prep: &Self::Prepared, x: &Self::Obs) -> Param;
    /// `∇θ U(x; θ)`.
    fn score_jacobian_at(&self, prep: &Self::Prepared, x: &Self::Obs) -> DMatrix<f64>;
    fn sample_at<R: Rng + ?Sized>(&self, prep: &Self::Prepared, rng: &mut R) -> Self::Obs;

    fn mle(&self, sample: &[Self::Obs]) -> Result<Param>;
    /// Starting point used when the MLE is unavailable.
    fn default_start(&self, sample: &[Self::Obs]) -> Param;

    fn check_sample(&self, sample: &[Self::Obs]) -> Result<()> {
        if sample.is_empty() {
            return Err(LqError::Degenerate("empty sample".into()));
        }
        match sample.iter().position(|x| !self.in_support(x)) {
            Some(i) => Err(LqError::domain(format!(
                "observation {i} is outside the support of the {} model",
                self.name()
            ))),
            None => Ok(()),
        }
    }

    /// Lq-likelihood, weighted score and (optionally) its Jacobian at the
    /// prepared parameter.
    fn accumulate(
        &self,
        prep: &Self::Prepared,
        sample: &[Self::Obs],
        q: DistortionParam,
        with_jacobian: bool,
    ) -> Accumulated {
        let d = self.dim();
        let a = q.one_minus();
        let mut objective = 0.0;
        let mut score = Param::zeros(d);
        let mut jacobian = with_jacobian.then(|| DMatrix::zeros(d, d));
        for x in sample {
            let lf = self.log_density_at(prep, x);
            objective += lq_of_log(lf, q);
            let w = score_weight(lf, q);
            let u = self.score_at(prep, x);
            score.axpy(w, &u, 1.0);
            if let Some(j) = jacobian.as_mut() {
                let mut h = self.score_jacobian_at(prep, x);
                if a != 0.0 {
                    h.ger(a, &u, &u, 1.0);
                }
                *j += h * w;
            }
        }
        Accumulated {
            objective,
            score,
            jacobian,
        }
    }

    fn log_density(&self, theta: &Param, x: &Self::Obs) -> Result<f64> {
        Ok(self.log_density_at(&self.prepare(theta)?, x))
    }

    fn score(&self, theta: &Param, x: &Self::Obs) -> Result<Param> {
        Ok(self.score_at(&self.prepare(theta)?, x))
    }

    fn sample<R: Rng + ?Sized>(&self, theta: &Param, n: usize, rng: &mut R) -> Result<Vec<Self::Obs>> {
        let prep = self.prepare(theta)?;
        Ok((0..n).map(|_| self.sample_at(&prep, rng)).collect())
    }
}

/// Natural-parameter structure of an exponential family with unit base
/// measure, `f(x; η) = exp{ηᵀb(x) − A(η)}`.
///
/// `η` always denotes natural coordinates here; `theta` is the model's own
/// parametrization.
pub trait ExpFamily: FamilyModel {
    fn to_natural(&self, theta: &Param) -> Result<Param>;
    #[allow(clippy::wrong_self_convention)]
    fn from_natural(&self, eta: &Param) -> Result<Param>;
    /// `∂θ/∂η`, the Jacobian of [`from_natural`](ExpFamily::from_natural).
    fn coordinate_jacobian(&self, eta: &Param) -> Result<DMatrix<f64>>;
    fn sufficient_statistic(&self, x: &Self::Obs) -> Param;
    fn cumulant(&self, eta: &Param) -> Result<f64>;
    /// `m(η) = ∇A(η) = E b(X)`.
    fn mean_map(&self, eta: &Param) -> Result<Param>;
    /// `D(η) = ∇²A(η) = Cov b(X)`.
    fn covariance_map(&self, eta: &Param) -> Result<DMatrix<f64>>;
}

/// Scalar models whose support is an interval, for quadrature.
pub trait ScalarSupport: FamilyModel<Obs = f64> {
    fn support(&self) -> (f64, f64);
}

/// The population target `θ*` of the MLqE: `θ₀/q` in natural coordinates,
/// returned in the model's own parametrization.
pub fn surrogate_parameter<M: ExpFamily>(model: &M, theta0: &Param, q: DistortionParam) -> Result<Param> {
    let eta0 = model.to_natural(theta0)?;
    let eta_star = eta0 / q.value();
    let theta_star = model.from_natural(&eta_star).map_err(|e| {
        LqError::domain(format!("θ₀/q is outside the parameter domain at q = {q}: {e}"))
    })?;
    model.prepare(&theta_star)?;
    Ok(theta_star)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_divides_natural_parameter() {
        let q = DistortionParam::new(0.5).unwrap();
        let s = surrogate_parameter(&ExponentialModel, &Param::from_element(1, 1.0), q).unwrap();
        assert_eq!(s[0], 2.0);
        let s1 = surrogate_parameter(&ExponentialModel, &Param::from_element(1, 1.7), DistortionParam::ONE)
            .unwrap();
        assert_eq!(s1[0], 1.7);
    }

    #[test]
    fn mvn_surrogate_scales_covariance_only() {
        let model = MvnModel::new(2).unwrap();
        let theta0 = Param::from_vec(vec![0.5, -1.0, 2.0, 0.3, 1.0]);
        let q = DistortionParam::new(0.8).unwrap();
        let s = surrogate_parameter(&model, &theta0, q).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-12 && (s[1] + 1.0).abs() < 1e-12);
        for k in 2..5 {
            assert!((s[k] - 0.8 * theta0[k]).abs() < 1e-12);
        }
    }
}

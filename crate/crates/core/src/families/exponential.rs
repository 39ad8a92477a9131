use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{ExpFamily, FamilyModel, Parametrization, ScalarSupport};
use crate::error::{LqError, Result};
use crate::lq::{lq_of_log, Accumulated, DistortionParam};
use crate::Param;

/// Exponential distribution with rate `λ`: `f(x; λ) = λ e^{−λx}`, `x > 0`.
///
/// The rate is already the natural parameter, with `b(x) = −x` and
/// `A(λ) = −log λ`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExponentialModel;

fn rate(theta: &Param) -> Result<f64> {
    if theta.len() != 1 {
        return Err(LqError::domain(format!(
            "exponential model has one parameter, got {}",
            theta.len()
        )));
    }
    let lambda = theta[0];
    if lambda > 0.0 && lambda.is_finite() {
        Ok(lambda)
    } else {
        Err(LqError::domain(format!("rate must be positive, got {lambda}")))
    }
}

impl FamilyModel for ExponentialModel {
    type Obs = f64;
    type Prepared = f64;

    fn name(&self) -> &'static str {
        "exponential"
    }

    fn dim(&self) -> usize {
        1
    }

    fn parametrization(&self) -> Parametrization {
        Parametrization::Natural
    }

    fn min_sample_size(&self) -> usize {
        2
    }

    fn prepare(&self, theta: &Param) -> Result<f64> {
        rate(theta)
    }

    fn in_support(&self, x: &f64) -> bool {
        *x > 0.0 && x.is_finite()
    }

    fn log_density_at(&self, lambda: &f64, x: &f64) -> f64 {
        lambda.ln() - lambda * x
    }

    fn score_at(&self, lambda: &f64, x: &f64) -> Param {
        Param::from_element(1, 1.0 / lambda - x)
    }

    fn score_jacobian_at(&self, lambda: &f64, _x: &f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, -1.0 / (lambda * lambda))
    }

    fn sample_at<R: Rng + ?Sized>(&self, lambda: &f64, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        e / lambda
    }

    fn mle(&self, sample: &[f64]) -> Result<Param> {
        self.check_sample(sample)?;
        let mean = sample.iter().sum::<f64>() / sample.len() as f64;
        Ok(Param::from_element(1, 1.0 / mean))
    }

    fn default_start(&self, _sample: &[f64]) -> Param {
        Param::from_element(1, 1.0)
    }

    fn accumulate(&self, lambda: &f64, sample: &[f64], q: DistortionParam, with_jacobian: bool) -> Accumulated {
        let lambda = *lambda;
        let log_lambda = lambda.ln();
        let inv = 1.0 / lambda;
        let a = q.one_minus();
        let (mut obj, mut s, mut j) = (0.0, 0.0, 0.0);
        for &x in sample {
            let lf = log_lambda - lambda * x;
            let w = (a * lf).exp();
            let u = inv - x;
            obj += lq_of_log(lf, q);
            s += w * u;
            j += w * (a * u * u - inv * inv);
        }
        Accumulated {
            objective: obj,
            score: Param::from_element(1, s),
            jacobian: with_jacobian.then(|| DMatrix::from_element(1, 1, j)),
        }
    }
}

impl ScalarSupport for ExponentialModel {
    fn support(&self) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }
}

impl ExpFamily for ExponentialModel {
    fn to_natural(&self, theta: &Param) -> Result<Param> {
        rate(theta).map(|l| Param::from_element(1, l))
    }

    fn from_natural(&self, eta: &Param) -> Result<Param> {
        rate(eta).map(|l| Param::from_element(1, l))
    }

    fn coordinate_jacobian(&self, eta: &Param) -> Result<DMatrix<f64>> {
        rate(eta)?;
        Ok(DMatrix::identity(1, 1))
    }

    fn sufficient_statistic(&self, x: &f64) -> Param {
        Param::from_element(1, -x)
    }

    fn cumulant(&self, eta: &Param) -> Result<f64> {
        Ok(-rate(eta)?.ln())
    }

    fn mean_map(&self, eta: &Param) -> Result<Param> {
        Ok(Param::from_element(1, -1.0 / rate(eta)?))
    }

    fn covariance_map(&self, eta: &Param) -> Result<DMatrix<f64>> {
        let l = rate(eta)?;
        Ok(DMatrix::from_element(1, 1, 1.0 / (l * l)))
    }
}

/// Damped fixed-point iteration `λ ← Σwᵢ / Σwᵢxᵢ` with
/// `wᵢ = exp(−[xᵢλ − log λ](1 − q))`.
///
/// A slow but independent route to the exponential MLqE, kept as a check on
/// the quasi-Newton solver. Returns the last iterate and whether the relative
/// change fell below `1e-14`.
pub fn exponential_fixed_point(sample: &[f64], q: DistortionParam, damping: f64) -> (f64, bool) {
    let a = q.one_minus();
    let mean = sample.iter().sum::<f64>() / sample.len() as f64;
    let mut lambda = 1.0 / mean;
    for _ in 0..500 {
        let (mut sw, mut swx) = (0.0, 0.0);
        for &x in sample {
            let w = (-(x * lambda - lambda.ln()) * a).exp();
            sw += w;
            swx += w * x;
        }
        let next = (1.0 - damping) * lambda + damping * sw / swx;
        let done = ((next - lambda) / lambda).abs() < 1e-14;
        lambda = next;
        if done {
            return (lambda, true);
        }
    }
    (lambda, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::weighted_score;
    use crate::quad;

    fn p(v: f64) -> Param {
        Param::from_element(1, v)
    }

    #[test]
    fn log_density_and_mle() {
        assert_eq!(ExponentialModel.log_density(&p(1.0), &1.0).unwrap(), -1.0);
        assert_eq!(ExponentialModel.mle(&[1.0, 2.0, 3.0]).unwrap()[0], 0.5);
        assert!(ExponentialModel.prepare(&p(-1.0)).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        for lambda in [0.3f64, 1.0, 4.0] {
            let mass = quad::integrate_to_infinity(|x| (lambda.ln() - lambda * x).exp(), 0.0);
            assert!((mass - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mean_and_covariance_maps_match_cumulant_derivatives() {
        let m = ExponentialModel;
        for l in [0.5, 1.0, 2.5] {
            let h = 1e-5 * l;
            let a = |v: f64| m.cumulant(&p(v)).unwrap();
            let d1 = (a(l + h) - a(l - h)) / (2.0 * h);
            let d2 = (a(l + h) - 2.0 * a(l) + a(l - h)) / (h * h);
            assert!((d1 - m.mean_map(&p(l)).unwrap()[0]).abs() < 1e-8);
            let dd = m.covariance_map(&p(l)).unwrap()[(0, 0)];
            assert!(((d2 - dd) / dd).abs() < 1e-5);
        }
    }

    #[test]
    fn fixed_point_zeroes_the_weighted_score() {
        let sample = [0.2, 0.7, 1.1, 2.9, 0.4, 1.6];
        let q = DistortionParam::new(0.85).unwrap();
        let (lambda, ok) = exponential_fixed_point(&sample, q, 0.7);
        assert!(ok);
        let s = weighted_score(&sample, &ExponentialModel, &p(lambda), q).unwrap();
        assert!(s[0].abs() < 1e-12);
    }

    #[test]
    fn specialized_accumulate_matches_generic_loop() {
        let sample = [0.2, 0.7, 1.1, 2.9];
        let q = DistortionParam::new(0.7).unwrap();
        let lambda = 1.3;
        let fast = ExponentialModel.accumulate(&lambda, &sample, q, true);
        let (mut obj, mut s, mut j) = (0.0, 0.0, 0.0);
        for x in sample {
            let lf = ExponentialModel.log_density_at(&lambda, &x);
            let w = (0.3 * lf).exp();
            let u = ExponentialModel.score_at(&lambda, &x)[0];
            obj += lq_of_log(lf, q);
            s += w * u;
            j += w * (ExponentialModel.score_jacobian_at(&lambda, &x)[(0, 0)] + 0.3 * u * u);
        }
        assert!((fast.objective - obj).abs() < 1e-13);
        assert!((fast.score[0] - s).abs() < 1e-13);
        assert!((fast.jacobian.unwrap()[(0, 0)] - j).abs() < 1e-13);
    }
}

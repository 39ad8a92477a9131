//! Ways of computing `E_{θ₀}[f(X; θ*)^a g(X)]`, the expectation shape behind
//! both sandwich matrices and the population estimating equation.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LqError, Result};
use crate::families::{FamilyModel, GlmLink, GlmModel, GlmObs, MvnModel, ScalarSupport};
use crate::linalg;
use crate::quad;
use crate::Param;

/// An expectation, with a Monte Carlo standard error when it is estimated.
#[derive(Debug, Clone)]
pub struct Expectation {
    pub value: Param,
    pub se: Option<Param>,
}

impl Expectation {
    fn exact(value: Param) -> Self {
        Expectation { value, se: None }
    }
}

pub trait MomentEngine<M: FamilyModel> {
    /// `E_{θ₀}[exp(a·log f(X; θ*)) g(X)]`, componentwise over the `len`
    /// outputs of `g`.
    fn tilted_expectation(
        &self,
        model: &M,
        theta0: &Param,
        theta_star: &Param,
        a: f64,
        len: usize,
        g: &dyn Fn(&M::Obs) -> Param,
    ) -> Result<Expectation>;
}

/// Adaptive (double-exponential) quadrature over the support of a scalar model.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadratureEngine;

impl<M: ScalarSupport> MomentEngine<M> for QuadratureEngine {
    fn tilted_expectation(
        &self,
        model: &M,
        theta0: &Param,
        theta_star: &Param,
        a: f64,
        len: usize,
        g: &dyn Fn(&f64) -> Param,
    ) -> Result<Expectation> {
        let p0 = model.prepare(theta0)?;
        let ps = model.prepare(theta_star)?;
        let (lo, hi) = model.support();
        let weight = |x: f64| (model.log_density_at(&p0, &x) + a * model.log_density_at(&ps, &x)).exp();
        let mut value = Param::zeros(len);
        for k in 0..len {
            let f = |x: f64| weight(x) * g(&x)[k];
            value[k] = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => quad::integrate(f, lo, hi),
                (true, false) => quad::integrate_to_infinity(f, lo),
                (false, false) => quad::integrate_real_line(f, 0.0),
                (false, true) => quad::integrate_to_infinity(|t| f(-t), -hi),
            };
        }
        Ok(Expectation::exact(value))
    }
}

/// Exact expectations for the normal model.
///
/// `f(x; θ*)^a f(x; θ₀)` is an unnormalized Gaussian, so the expectation is a
/// constant times a Gaussian moment. All integrands used here are polynomials
/// of degree at most four in `x`, which three-point Gauss–Hermite rules per
/// coordinate integrate exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussHermiteEngine;

/// Probabilists' three-point rule: exact for polynomials of degree ≤ 5.
const GH_NODES: [f64; 3] = [-1.732_050_807_568_877_2, 0.0, 1.732_050_807_568_877_2];
const GH_WEIGHTS: [f64; 3] = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];

impl MomentEngine<MvnModel> for GaussHermiteEngine {
    fn tilted_expectation(
        &self,
        model: &MvnModel,
        theta0: &Param,
        theta_star: &Param,
        a: f64,
        len: usize,
        g: &dyn Fn(&DVector<f64>) -> Param,
    ) -> Result<Expectation> {
        let p = model.p();
        let p0 = model.prepare(theta0)?;
        let ps = model.prepare(theta_star)?;
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let (_, logdet0) = linalg::spd_inverse_logdet(&p0.sigma)?;
        let (_, logdet_s) = linalg::spd_inverse_logdet(&ps.sigma)?;

        let prec = &ps.precision * a + &p0.precision;
        let h = &ps.precision * &ps.mu * a + &p0.precision * &p0.mu;
        let c = a * (&ps.precision * &ps.mu).dot(&ps.mu) + (&p0.precision * &p0.mu).dot(&p0.mu);
        let (cov, logdet_prec) = linalg::spd_inverse_logdet(&prec).map_err(|_| {
            LqError::domain(format!("tilted Gaussian is improper for exponent {a}; distortion too large"))
        })?;
        let mean = &cov * &h;
        let pf = p as f64;
        let log_c = -0.5 * a * (pf * ln2pi + logdet_s) - 0.5 * (pf * ln2pi + logdet0) - 0.5 * c
            + 0.5 * h.dot(&mean)
            + 0.5 * pf * ln2pi
            - 0.5 * logdet_prec;
        let chol = cov
            .cholesky()
            .ok_or_else(|| LqError::domain("tilted covariance is not positive definite"))?
            .l();

        let mut value = Param::zeros(len);
        let mut idx = vec![0usize; p];
        let mut z = DVector::zeros(p);
        loop {
            let mut w = 1.0;
            for (d, &i) in idx.iter().enumerate() {
                z[d] = GH_NODES[i];
                w *= GH_WEIGHTS[i];
            }
            let x = &mean + &chol * &z;
            value.axpy(w, &g(&x), 1.0);
            // Odometer over the tensor grid.
            let mut d = 0;
            while d < p {
                idx[d] += 1;
                if idx[d] < GH_NODES.len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == p {
                break;
            }
        }
        Ok(Expectation::exact(value * log_c.exp()))
    }
}

/// Expectations for a GLM with the covariate law taken as the empirical
/// distribution of a fixed design: an average over rows of the exact
/// conditional expectation given each row.
#[derive(Debug, Clone)]
pub struct GlmDesignEngine {
    pub design: DMatrix<f64>,
}

impl MomentEngine<GlmModel> for GlmDesignEngine {
    fn tilted_expectation(
        &self,
        model: &GlmModel,
        theta0: &Param,
        theta_star: &Param,
        a: f64,
        len: usize,
        g: &dyn Fn(&GlmObs) -> Param,
    ) -> Result<Expectation> {
        let p0 = model.prepare(theta0)?;
        let ps = model.prepare(theta_star)?;
        if self.design.ncols() != model.dim() || self.design.nrows() == 0 {
            return Err(LqError::domain("design does not match the model dimension"));
        }
        let weight = |o: &GlmObs| (model.log_density_at(&p0, o) + a * model.log_density_at(&ps, o)).exp();
        let mut value = Param::zeros(len);
        for row in self.design.row_iter() {
            let x = row.transpose();
            match model.link() {
                GlmLink::Logistic => {
                    for y in [0.0, 1.0] {
                        let o = GlmObs { x: x.clone(), y };
                        value.axpy(weight(&o), &g(&o), 1.0);
                    }
                }
                GlmLink::ExpReg => {
                    for k in 0..len {
                        value[k] += quad::integrate_to_infinity(
                            |y| {
                                let o = GlmObs { x: x.clone(), y };
                                weight(&o) * g(&o)[k]
                            },
                            0.0,
                        );
                    }
                }
            }
        }
        Ok(Expectation::exact(value / self.design.nrows() as f64))
    }
}

/// Plain Monte Carlo with draws from `θ₀`. Works for every model.
#[derive(Debug, Clone, Copy)]
pub struct MonteCarloEngine {
    pub draws: usize,
    pub seed: u64,
}

impl<M: FamilyModel> MomentEngine<M> for MonteCarloEngine {
    fn tilted_expectation(
        &self,
        model: &M,
        theta0: &Param,
        theta_star: &Param,
        a: f64,
        len: usize,
        g: &dyn Fn(&M::Obs) -> Param,
    ) -> Result<Expectation> {
        if self.draws < 2 {
            return Err(LqError::Config("Monte Carlo needs at least two draws".into()));
        }
        let p0 = model.prepare(theta0)?;
        let ps = model.prepare(theta_star)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut sum = Param::zeros(len);
        let mut sumsq = Param::zeros(len);
        for _ in 0..self.draws {
            let x = model.sample_at(&p0, &mut rng);
            let v = g(&x) * (a * model.log_density_at(&ps, &x)).exp();
            sumsq += v.component_mul(&v);
            sum += v;
        }
        let n = self.draws as f64;
        let mean = &sum / n;
        let var = (sumsq / n - mean.component_mul(&mean)) * (n / (n - 1.0));
        let se = var.map(|v| (v.max(0.0) / n).sqrt());
        Ok(Expectation {
            value: mean,
            se: Some(se),
        })
    }
}

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{FamilyModel, Parametrization};
use crate::error::{LqError, Result};
use crate::Param;

/// The two links, with the sign conventions kept exactly as stated:
/// logistic has `P(Y = 1) = 1/(1 + exp{xᵀβ})` and exponential regression has
/// mean `exp(−xᵀβ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmLink {
    Logistic,
    ExpReg,
}

impl GlmLink {
    pub fn as_str(self) -> &'static str {
        match self {
            GlmLink::Logistic => "logistic",
            GlmLink::ExpReg => "exp_reg",
        }
    }

    /// Mean response at linear predictor `t = xᵀβ`.
    pub fn mean(self, t: f64) -> f64 {
        match self {
            GlmLink::Logistic => 1.0 / (1.0 + t.exp()),
            GlmLink::ExpReg => (-t).exp(),
        }
    }
}

pub const BETA_FIXTURE: [f64; 12] = [
    -0.57, 0.94, 0.16, -0.72, 0.68, 0.92, 0.80, 0.04, 0.64, 0.34, 0.38, 0.47,
];

/// The first `p` coefficients of [`BETA_FIXTURE`].
pub fn beta_fixture(p: usize) -> Result<Param> {
    if p == 0 || p > BETA_FIXTURE.len() {
        return Err(LqError::Config(format!(
            "GLM dimension must be between 1 and {}, got {p}",
            BETA_FIXTURE.len()
        )));
    }
    Ok(Param::from_column_slice(&BETA_FIXTURE[..p]))
}

/// One response/covariate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmObs {
    pub x: DVector<f64>,
    pub y: f64,
}

/// A design matrix with responses.
#[derive(Debug, Clone)]
pub struct GlmSpec {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub link: GlmLink,
}

impl GlmSpec {
    pub fn observations(&self) -> Vec<GlmObs> {
        self.design
            .row_iter()
            .zip(self.response.iter())
            .map(|(r, &y)| GlmObs {
                x: r.transpose(),
                y,
            })
            .collect()
    }
}

/// Builds the model for `spec` after validating the design rank and the
/// response support.
pub fn glm_model(spec: &GlmSpec) -> Result<GlmModel> {
    let (n, p) = spec.design.shape();
    if spec.response.len() != n {
        return Err(LqError::domain(format!(
            "design has {n} rows but there are {} responses",
            spec.response.len()
        )));
    }
    if n < p || spec.design.rank(1e-10) < p {
        return Err(LqError::Degenerate("design matrix is not of full column rank".into()));
    }
    let model = GlmModel::new(spec.link, p)?;
    if let Some(i) = spec.response.iter().position(|&y| !model.response_ok(y)) {
        return Err(LqError::domain(format!(
            "response {i} = {} is invalid for the {} link",
            spec.response[i],
            spec.link.as_str()
        )));
    }
    Ok(model)
}

/// GLM with per-observation density given the covariates. The sampler draws
/// covariates uniformly from `[−1, 1]^p`.
#[derive(Debug, Clone, Copy)]
pub struct GlmModel {
    link: GlmLink,
    p: usize,
}

/// `log(1 + e^t)` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl GlmModel {
    pub fn new(link: GlmLink, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(LqError::domain("GLM needs at least one covariate"));
        }
        Ok(GlmModel { link, p })
    }

    pub fn link(&self) -> GlmLink {
        self.link
    }

    fn response_ok(&self, y: f64) -> bool {
        match self.link {
            GlmLink::Logistic => y == 0.0 || y == 1.0,
            GlmLink::ExpReg => y > 0.0 && y.is_finite(),
        }
    }

    /// Mean response `η(x; β)`.
    pub fn mean_response(&self, beta: &Param, x: &DVector<f64>) -> f64 {
        self.link.mean(beta.dot(x))
    }

    pub fn sample_response<R: Rng + ?Sized>(&self, beta: &Param, x: &DVector<f64>, rng: &mut R) -> f64 {
        let eta = self.mean_response(beta, x);
        match self.link {
            GlmLink::Logistic => {
                if rng.random::<f64>() < eta {
                    1.0
                } else {
                    0.0
                }
            }
            GlmLink::ExpReg => {
                let e: f64 = Exp1.sample(rng);
                e * eta
            }
        }
    }

    pub fn sample_covariate<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.p, |_, _| rng.random_range(-1.0..=1.0))
    }

    /// Scalar factors `(dℓ/dt, d²ℓ/dt²)` at linear predictor `t`.
    #[inline]
    fn derivs(&self, t: f64, y: f64) -> (f64, f64) {
        match self.link {
            GlmLink::Logistic => {
                let eta = 1.0 / (1.0 + t.exp());
                (eta - y, -eta * (1.0 - eta))
            }
            GlmLink::ExpReg => {
                let e = t.exp();
                (1.0 - y * e, -y * e)
            }
        }
    }

    /// Every fitted probability within 1e-6 of its 0/1 response.
    fn separated(&self, beta: &Param, sample: &[GlmObs]) -> bool {
        sample
            .iter()
            .all(|o| (self.mean_response(beta, &o.x) - o.y).abs() < 1e-6)
    }

    fn log_lik(&self, beta: &Param, sample: &[GlmObs]) -> f64 {
        sample.iter().map(|o| self.log_density_at(beta, o)).sum()
    }
}

impl FamilyModel for GlmModel {
    type Obs = GlmObs;
    type Prepared = Param;

    fn name(&self) -> &'static str {
        match self.link {
            GlmLink::Logistic => "logistic regression",
            GlmLink::ExpReg => "exponential regression",
        }
    }

    fn dim(&self) -> usize {
        self.p
    }

    fn parametrization(&self) -> Parametrization {
        Parametrization::Glm
    }

    fn min_sample_size(&self) -> usize {
        self.p
    }

    fn prepare(&self, theta: &Param) -> Result<Param> {
        if theta.len() != self.p {
            return Err(LqError::domain(format!(
                "expected {} coefficients, got {}",
                self.p,
                theta.len()
            )));
        }
        if theta.iter().any(|b| !b.is_finite()) {
            return Err(LqError::domain("non-finite coefficient"));
        }
        Ok(theta.clone())
    }

    fn in_support(&self, o: &GlmObs) -> bool {
        o.x.len() == self.p && o.x.iter().all(|v| v.is_finite()) && self.response_ok(o.y)
    }

    fn log_density_at(&self, beta: &Param, o: &GlmObs) -> f64 {
        let t = beta.dot(&o.x);
        match self.link {
            GlmLink::Logistic => (1.0 - o.y) * t - softplus(t),
            GlmLink::ExpReg => t - o.y * t.exp(),
        }
    }

    fn score_at(&self, beta: &Param, o: &GlmObs) -> Param {
        let (d1, _) = self.derivs(beta.dot(&o.x), o.y);
        &o.x * d1
    }

    fn score_jacobian_at(&self, beta: &Param, o: &GlmObs) -> DMatrix<f64> {
        let (_, d2) = self.derivs(beta.dot(&o.x), o.y);
        &o.x * o.x.transpose() * d2
    }

    fn sample_at<R: Rng + ?Sized>(&self, beta: &Param, rng: &mut R) -> GlmObs {
        let x = self.sample_covariate(rng);
        let y = self.sample_response(beta, &x, rng);
        GlmObs { x, y }
    }

    /// Newton–Raphson on the log-likelihood (IRLS), with step halving.
    fn mle(&self, sample: &[GlmObs]) -> Result<Param> {
        self.check_sample(sample)?;
        if sample.len() < self.p {
            return Err(LqError::Degenerate("fewer observations than coefficients".into()));
        }
        let mut beta = Param::zeros(self.p);
        let mut ll = self.log_lik(&beta, sample);
        for _ in 0..100 {
            let mut g = Param::zeros(self.p);
            let mut info = DMatrix::zeros(self.p, self.p);
            for o in sample {
                let (d1, d2) = self.derivs(beta.dot(&o.x), o.y);
                g.axpy(d1, &o.x, 1.0);
                info.ger(-d2, &o.x, &o.x, 1.0);
            }
            if g.amax() <= 1e-10 {
                if self.link == GlmLink::Logistic && self.separated(&beta, sample) {
                    return Err(LqError::Degenerate("responses are perfectly separated".into()));
                }
                return Ok(beta);
            }
            let step = info
                .cholesky()
                .ok_or_else(|| LqError::Degenerate("information matrix is singular".into()))?
                .solve(&g);
            let mut t = 1.0;
            loop {
                let cand = &beta + &step * t;
                let cll = self.log_lik(&cand, sample);
                if cll.is_finite() && cll >= ll - 1e-12 * ll.abs() {
                    beta = cand;
                    ll = cll;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    return Err(LqError::NonConvergence {
                        iterations: 0,
                        score_norm: g.amax(),
                    });
                }
            }
            if beta.amax() > 1e3 {
                return Err(LqError::Degenerate(
                    "coefficients diverge (separated data)".into(),
                ));
            }
        }
        Err(LqError::Degenerate(
            "maximum likelihood did not converge (possible separation)".into(),
        ))
    }

    fn default_start(&self, _sample: &[GlmObs]) -> Param {
        Param::zeros(self.p)
    }
}

/// `n × p` design with entries drawn uniformly from `[−1, 1]`.
pub fn uniform_design<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..=1.0))
}

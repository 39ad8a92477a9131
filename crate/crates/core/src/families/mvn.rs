use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ExpFamily, FamilyModel, Parametrization};
use crate::error::{LqError, Result};
use crate::linalg::{self, unvech, vech, vech_indices, vech_len};
use crate::Param;

/// `p`-variate normal in moment coordinates `θ = (μᵀ, vechᵀΣ)ᵀ`.
///
/// Natural coordinates are `η = (Σ⁻¹μ, vech Σ⁻¹)` with sufficient statistic
/// `b(x) = (x, −½s(x))`, where `s` holds `xᵢ²` on the diagonal and `2xᵢxⱼ`
/// below it, so that `vech(Λ)ᵀs(x) = xᵀΛx`.
#[derive(Debug, Clone)]
pub struct MvnModel {
    p: usize,
    pairs: Vec<(usize, usize)>,
}

pub fn mvn_model(p: usize) -> Result<MvnModel> {
    MvnModel::new(p)
}

#[derive(Debug, Clone)]
pub struct MvnPrepared {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    chol: DMatrix<f64>,
    norm: f64,
}

/// `E⁽ⁱʲ⁾ = ∂Σ/∂σᵢⱼ` for the `vech` coordinate `(i, j)`.
fn unit_sym(p: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(p, p);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

/// `tr(X E⁽ᵏˡ⁾)`.
#[inline]
fn trace_pick(x: &DMatrix<f64>, k: usize, l: usize) -> f64 {
    if k == l {
        x[(k, k)]
    } else {
        x[(k, l)] + x[(l, k)]
    }
}

#[inline]
fn stat_coef(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        2.0
    }
}

impl MvnModel {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(LqError::domain("dimension must be at least 1"));
        }
        Ok(MvnModel {
            p,
            pairs: vech_indices(p),
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn pack(&self, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Param {
        let mut theta = Param::zeros(self.dim());
        theta.rows_mut(0, self.p).copy_from(mu);
        theta.rows_mut(self.p, vech_len(self.p)).copy_from(&vech(sigma));
        theta
    }

    pub fn unpack(&self, theta: &Param) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if theta.len() != self.dim() {
            return Err(LqError::domain(format!(
                "expected {} parameters, got {}",
                self.dim(),
                theta.len()
            )));
        }
        let mu = theta.rows(0, self.p).into_owned();
        let sigma = unvech(theta.rows(self.p, vech_len(self.p)).as_slice(), self.p);
        Ok((mu, sigma))
    }

    fn split_natural(&self, eta: &Param) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.unpack(eta)
    }

    /// `(μ, Σ)` from natural coordinates.
    fn moments_of(&self, eta: &Param) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (h, lambda) = self.split_natural(eta)?;
        let (sigma, _) = linalg::spd_inverse_logdet(&lambda)
            .map_err(|_| LqError::domain("natural precision block is not positive definite"))?;
        let mu = &sigma * h;
        Ok((mu, sigma))
    }
}

impl FamilyModel for MvnModel {
    type Obs = DVector<f64>;
    type Prepared = MvnPrepared;

    fn name(&self) -> &'static str {
        "multivariate normal"
    }

    fn dim(&self) -> usize {
        self.p + vech_len(self.p)
    }

    fn parametrization(&self) -> Parametrization {
        Parametrization::Moment
    }

    fn min_sample_size(&self) -> usize {
        self.p + 1
    }

    fn prepare(&self, theta: &Param) -> Result<MvnPrepared> {
        let (mu, sigma) = self.unpack(theta)?;
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(LqError::domain("non-finite normal parameter"));
        }
        let ch = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| LqError::domain("covariance matrix is not symmetric positive definite"))?;
        let chol = ch.l();
        let logdet = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = ch.inverse();
        Ok(MvnPrepared {
            mu,
            sigma,
            precision,
            chol,
            norm: -0.5 * (self.p as f64 * (2.0 * PI).ln() + logdet),
        })
    }

    fn in_support(&self, x: &DVector<f64>) -> bool {
        x.len() == self.p && x.iter().all(|v| v.is_finite())
    }

    fn log_density_at(&self, prep: &MvnPrepared, x: &DVector<f64>) -> f64 {
        let d = x - &prep.mu;
        prep.norm - 0.5 * (&prep.precision * &d).dot(&d)
    }

    fn score_at(&self, prep: &MvnPrepared, x: &DVector<f64>) -> Param {
        let p = self.p;
        let a = &prep.precision * (x - &prep.mu);
        let mut u = Param::zeros(self.dim());
        u.rows_mut(0, p).copy_from(&a);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let m = a[i] * a[j] - prep.precision[(i, j)];
            u[p + k] = if i == j { 0.5 * m } else { m };
        }
        u
    }

    fn score_jacobian_at(&self, prep: &MvnPrepared, x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.p;
        let pr = &prep.precision;
        let a = pr * (x - &prep.mu);
        let aat = &a * a.transpose();
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        h.view_mut((0, 0), (p, p)).copy_from(&(-pr));
        for (c, &(m, n)) in self.pairs.iter().enumerate() {
            let e = unit_sym(p, m, n);
            let pe = pr * &e;
            let cross = -(&pe * &a);
            for r in 0..p {
                h[(r, p + c)] = cross[r];
                h[(p + c, r)] = cross[r];
            }
            let dm = -(&pe * &aat) - &aat * e.transpose() * pr + &pe * pr;
            for (r, &(k, l)) in self.pairs.iter().enumerate() {
                h[(p + r, p + c)] = 0.5 * trace_pick(&dm, k, l);
            }
        }
        h
    }

    fn sample_at<R: Rng + ?Sized>(&self, prep: &MvnPrepared, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.p, |_, _| rng.sample::<f64, _>(StandardNormal));
        &prep.mu + &prep.chol * z
    }

    fn mle(&self, sample: &[DVector<f64>]) -> Result<Param> {
        self.check_sample(sample)?;
        let n = sample.len();
        if n < self.min_sample_size() {
            return Err(LqError::Degenerate(format!(
                "{n} observations cannot determine a {p}x{p} covariance",
                p = self.p
            )));
        }
        let mut mu = DVector::zeros(self.p);
        for x in sample {
            mu += x;
        }
        mu /= n as f64;
        let mut s = DMatrix::zeros(self.p, self.p);
        for x in sample {
            let d = x - &mu;
            s.ger(1.0, &d, &d, 1.0);
        }
        s /= n as f64;
        if !linalg::is_spd(&s) {
            return Err(LqError::Degenerate("sample covariance is singular".into()));
        }
        Ok(self.pack(&mu, &s))
    }

    fn default_start(&self, sample: &[DVector<f64>]) -> Param {
        let mut mu = DVector::zeros(self.p);
        for x in sample {
            mu += x;
        }
        if !sample.is_empty() {
            mu /= sample.len() as f64;
        }
        self.pack(&mu, &DMatrix::identity(self.p, self.p))
    }
}

impl ExpFamily for MvnModel {
    fn to_natural(&self, theta: &Param) -> Result<Param> {
        let prep = self.prepare(theta)?;
        let h = &prep.precision * &prep.mu;
        Ok(self.pack(&h, &prep.precision))
    }

    fn from_natural(&self, eta: &Param) -> Result<Param> {
        let (mu, sigma) = self.moments_of(eta)?;
        Ok(self.pack(&mu, &sigma))
    }

    fn coordinate_jacobian(&self, eta: &Param) -> Result<DMatrix<f64>> {
        let p = self.p;
        let (mu, sigma) = self.moments_of(eta)?;
        let d = self.dim();
        let mut jac = DMatrix::zeros(d, d);
        jac.view_mut((0, 0), (p, p)).copy_from(&sigma);
        for (c, &(m, n)) in self.pairs.iter().enumerate() {
            let e = unit_sym(p, m, n);
            let se = &sigma * &e;
            let dmu = -(&se * &mu);
            let dsig = vech(&(-(&se * &sigma)));
            jac.view_mut((0, p + c), (p, 1)).copy_from(&dmu);
            jac.view_mut((p, p + c), (dsig.len(), 1)).copy_from(&dsig);
        }
        Ok(jac)
    }

    fn sufficient_statistic(&self, x: &DVector<f64>) -> Param {
        let p = self.p;
        let mut b = Param::zeros(self.dim());
        b.rows_mut(0, p).copy_from(x);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            b[p + k] = -0.5 * stat_coef(i, j) * x[i] * x[j];
        }
        b
    }

    fn cumulant(&self, eta: &Param) -> Result<f64> {
        let (h, lambda) = self.split_natural(eta)?;
        let (sigma, logdet_lambda) = linalg::spd_inverse_logdet(&lambda)
            .map_err(|_| LqError::domain("natural precision block is not positive definite"))?;
        Ok(0.5 * (&sigma * &h).dot(&h) - 0.5 * logdet_lambda + 0.5 * self.p as f64 * (2.0 * PI).ln())
    }

    fn mean_map(&self, eta: &Param) -> Result<Param> {
        let p = self.p;
        let (mu, sigma) = self.moments_of(eta)?;
        let mut m = Param::zeros(self.dim());
        m.rows_mut(0, p).copy_from(&mu);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            m[p + k] = -0.5 * stat_coef(i, j) * (sigma[(i, j)] + mu[i] * mu[j]);
        }
        Ok(m)
    }

    fn covariance_map(&self, eta: &Param) -> Result<DMatrix<f64>> {
        let p = self.p;
        let (mu, s) = self.moments_of(eta)?;
        let d = self.dim();
        let mut cov = DMatrix::zeros(d, d);
        cov.view_mut((0, 0), (p, p)).copy_from(&s);
        for (c, &(i, j)) in self.pairs.iter().enumerate() {
            let ci = -0.5 * stat_coef(i, j);
            for k in 0..p {
                let v = ci * (mu[i] * s[(j, k)] + mu[j] * s[(i, k)]);
                cov[(k, p + c)] = v;
                cov[(p + c, k)] = v;
            }
            for (r, &(k, l)) in self.pairs.iter().enumerate() {
                let ck = -0.5 * stat_coef(k, l);
                let fourth = s[(i, k)] * s[(j, l)]
                    + s[(i, l)] * s[(j, k)]
                    + mu[i] * mu[k] * s[(j, l)]
                    + mu[i] * mu[l] * s[(j, k)]
                    + mu[j] * mu[k] * s[(i, l)]
                    + mu[j] * mu[l] * s[(i, k)];
                cov[(p + r, p + c)] = ci * ck * fourth;
            }
        }
        Ok(cov)
    }
}

//! Sandwich asymptotic variance `V = J⁻¹ K J⁻¹` of the MLqE.
//!
//! Two routes are provided. For exponential families, [`kn_matrix`] and
//! [`jn_matrix`] evaluate the expectations exactly through the cumulant
//! function: with `η* = η₀/q` and `η_k = k(1−q)η* + η₀`,
//!
//! ```text
//! K = c₂ [D(η₂) + (m(η₂) − m(η*))(m(η₂) − m(η*))ᵀ]
//! J = −q c₁ D(η*)
//! c_k = exp{A(η_k) − k(1−q)A(η*) − A(η₀)}
//! ```
//!
//! (`η₁ = η*`, so the mean-shift term of `J` vanishes). For any model,
//! [`numeric_sandwich`] computes the defining expectations with a
//! [`MomentEngine`].

mod engines;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use engines::{Expectation, GaussHermiteEngine, GlmDesignEngine, MomentEngine, MonteCarloEngine, QuadratureEngine};

use crate::error::{LqError, Result};
use crate::families::{surrogate_parameter, ExpFamily, FamilyModel};
use crate::linalg::{self, extension_matrix as ext, CONDITION_WARN};
use crate::lq::DistortionParam;
use crate::Param;

pub use crate::linalg::extension_matrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichEstimate {
    pub k: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub theta_star: Param,
    pub q: DistortionParam,
    /// Condition number of `J`.
    pub j_condition: f64,
}

impl SandwichEstimate {
    fn assemble(k: DMatrix<f64>, j: DMatrix<f64>, theta_star: Param, q: DistortionParam) -> Result<Self> {
        let j_inv = linalg::symmetric_inverse(&j).ok_or(LqError::SingularMatrix { q: q.value() })?;
        let j_condition = linalg::condition_number(&j);
        if !j_condition.is_finite() {
            return Err(LqError::SingularMatrix { q: q.value() });
        }
        let v = &j_inv * &k * &j_inv;
        let v = (&v + v.transpose()) * 0.5;
        Ok(SandwichEstimate {
            k,
            j,
            v,
            theta_star,
            q,
            j_condition,
        })
    }

    pub fn ill_conditioned(&self) -> bool {
        self.j_condition > CONDITION_WARN
    }

    /// Recomputes `J⁻¹ K J⁻¹` from the stored factors.
    pub fn recompute_v(&self) -> Option<DMatrix<f64>> {
        let j_inv = linalg::symmetric_inverse(&self.j)?;
        Some(&j_inv * &self.k * &j_inv)
    }
}

/// The scalar asymptotic variance of the exponential-rate MLqE:
/// `(λ₀/q)² (q² − 2q + 2) / (q³(2 − q)³)`.
pub fn exponential_sigma2(lambda0: f64, q: DistortionParam) -> Result<f64> {
    let q = q.value();
    if !(q < 2.0) {
        return Err(LqError::domain(format!("the variance formula has a pole at q = 2 (q = {q})")));
    }
    if !(lambda0 > 0.0) {
        return Err(LqError::domain(format!("rate must be positive, got {lambda0}")));
    }
    let r = lambda0 / q;
    Ok(r * r * (q * q - 2.0 * q + 2.0) / (q.powi(3) * (2.0 - q).powi(3)))
}

struct NaturalPoint {
    eta0: Param,
    eta_star: Param,
    a0: f64,
    a_star: f64,
}

fn natural_point<M: ExpFamily>(model: &M, theta0: &Param, q: DistortionParam) -> Result<NaturalPoint> {
    let eta0 = model.to_natural(theta0)?;
    let eta_star = &eta0 / q.value();
    let a0 = model.cumulant(&eta0)?;
    let a_star = model
        .cumulant(&eta_star)
        .map_err(|_| LqError::domain(format!("θ₀/q leaves the natural domain at q = {q}")))?;
    Ok(NaturalPoint {
        eta0,
        eta_star,
        a0,
        a_star,
    })
}

/// Change of coordinates for a score-outer-product-type matrix:
/// natural `M` ↦ `Gᵀ⁻¹ M G⁻¹` with `G = ∂θ/∂η`.
fn to_model_coords<M: ExpFamily>(model: &M, eta_star: &Param, m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = model.coordinate_jacobian(eta_star)?;
    let g_inv = g
        .try_inverse()
        .ok_or_else(|| LqError::domain("coordinate map is singular"))?;
    Ok(g_inv.transpose() * m * g_inv)
}

fn kn_natural<M: ExpFamily>(model: &M, pt: &NaturalPoint, q: DistortionParam) -> Result<DMatrix<f64>> {
    let a = q.one_minus();
    let eta2 = &pt.eta_star * (2.0 * a) + &pt.eta0;
    let a2 = model.cumulant(&eta2).map_err(|_| {
        LqError::domain(format!(
            "θ₂ = 2θ₀(1/q − 1) + θ₀ leaves the natural domain at q = {q}; distortion too large"
        ))
    })?;
    let c2 = (a2 - 2.0 * a * pt.a_star - pt.a0).exp();
    let shift = model.mean_map(&eta2)? - model.mean_map(&pt.eta_star)?;
    let d2 = model.covariance_map(&eta2)?;
    Ok((d2 + &shift * shift.transpose()) * c2)
}

fn jn_natural<M: ExpFamily>(model: &M, pt: &NaturalPoint, q: DistortionParam) -> Result<DMatrix<f64>> {
    let c1 = (q.value() * pt.a_star - pt.a0).exp();
    Ok(model.covariance_map(&pt.eta_star)? * (-q.value() * c1))
}

/// `K = E_{θ₀}[U* U*ᵀ]` at `θ*`, exact, in the model's parametrization.
pub fn kn_matrix<M: ExpFamily>(model: &M, theta0: &Param, q: DistortionParam) -> Result<DMatrix<f64>> {
    let pt = natural_point(model, theta0, q)?;
    let k = kn_natural(model, &pt, q)?;
    to_model_coords(model, &pt.eta_star, k)
}

/// `J = E_{θ₀}[∇U*]` at `θ*`, exact, in the model's parametrization.
pub fn jn_matrix<M: ExpFamily>(model: &M, theta0: &Param, q: DistortionParam) -> Result<DMatrix<f64>> {
    let pt = natural_point(model, theta0, q)?;
    let j = jn_natural(model, &pt, q)?;
    to_model_coords(model, &pt.eta_star, j)
}

/// Exact sandwich for an exponential family, at `θ* = surrogate_parameter(θ₀, q)`.
pub fn sandwich_variance<M: ExpFamily>(model: &M, theta0: &Param, q: DistortionParam) -> Result<SandwichEstimate> {
    let theta_star = surrogate_parameter(model, theta0, q)?;
    let k = kn_matrix(model, theta0, q)?;
    let j = jn_matrix(model, theta0, q)?;
    SandwichEstimate::assemble(k, j, theta_star, q)
}

/// Sandwich from the defining expectations `E[U*U*ᵀ]` and `E[∇U*]`, computed
/// by `engine` at the supplied `theta_star`.
pub fn numeric_sandwich<M, E>(
    model: &M,
    engine: &E,
    theta0: &Param,
    theta_star: &Param,
    q: DistortionParam,
) -> Result<SandwichEstimate>
where
    M: FamilyModel,
    E: MomentEngine<M>,
{
    let d = model.dim();
    let a = q.one_minus();
    let prep = model.prepare(theta_star)?;
    let outer = |x: &M::Obs| {
        let u = model.score_at(&prep, x);
        let uu = &u * u.transpose();
        Param::from_column_slice(uu.as_slice())
    };
    let k = engine.tilted_expectation(model, theta0, theta_star, 2.0 * a, d * d, &outer)?;
    let deriv = |x: &M::Obs| {
        let u = model.score_at(&prep, x);
        let mut h = model.score_jacobian_at(&prep, x);
        h.ger(a, &u, &u, 1.0);
        Param::from_column_slice(h.as_slice())
    };
    let j = engine.tilted_expectation(model, theta0, theta_star, a, d * d, &deriv)?;
    let k = DMatrix::from_column_slice(d, d, k.value.as_slice());
    let j = DMatrix::from_column_slice(d, d, j.value.as_slice());
    SandwichEstimate::assemble(
        (&k + k.transpose()) * 0.5,
        (&j + j.transpose()) * 0.5,
        theta_star.clone(),
        q,
    )
}

/// `E_{θ₀}[U*(X; θ, q)]`, the population estimating equation.
pub fn expected_weighted_score<M, E>(model: &M, engine: &E, theta0: &Param, theta: &Param, q: DistortionParam) -> Result<Expectation>
where
    M: FamilyModel,
    E: MomentEngine<M>,
{
    let prep = model.prepare(theta)?;
    engine.tilted_expectation(model, theta0, theta, q.one_minus(), model.dim(), &|x| {
        model.score_at(&prep, x)
    })
}

/// Newton iteration for the root of `E_{θ₀}U*(X; θ, q) = 0`, started at
/// `start`. Works for any model with an engine, including those without
/// natural-parameter structure.
pub fn numeric_surrogate<M, E>(model: &M, engine: &E, theta0: &Param, q: DistortionParam, start: &Param) -> Result<Param>
where
    M: FamilyModel,
    E: MomentEngine<M>,
{
    let d = model.dim();
    let a = q.one_minus();
    let mut theta = start.clone();
    for _ in 0..100 {
        let g = expected_weighted_score(model, engine, theta0, &theta, q)?.value;
        let prep = model.prepare(&theta)?;
        let jac = engine.tilted_expectation(model, theta0, &theta, a, d * d, &|x| {
            let u = model.score_at(&prep, x);
            let mut h = model.score_jacobian_at(&prep, x);
            h.ger(a, &u, &u, 1.0);
            Param::from_column_slice(h.as_slice())
        })?;
        let jac = DMatrix::from_column_slice(d, d, jac.value.as_slice());
        let step = jac
            .lu()
            .solve(&g)
            .ok_or(LqError::SingularMatrix { q: q.value() })?;
        let mut t = 1.0;
        let next = loop {
            let cand = &theta - &step * t;
            if model.prepare(&cand).is_ok() {
                break cand;
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(LqError::domain("surrogate iteration left the parameter domain"));
            }
        };
        let moved = (&next - &theta).amax();
        theta = next;
        if moved <= 1e-14 * theta.amax().max(1.0) {
            return Ok(theta);
        }
    }
    Err(LqError::NonConvergence {
        iterations: 100,
        score_norm: expected_weighted_score(model, engine, theta0, &theta, q)?.value.amax(),
    })
}

/// Block-diagonal closed form of the normal-model variance:
/// `V₁₁ = (2−q)^{2+p}(3−2q)^{−1−p/2} Σ` and
/// `V₂₂ = 4q²[(3−2q)²+1](2−q)^{4+p} / ([(2−q)²+1]²(3−2q)^{2+p/2}) · [Gᵀ(Σ⁻¹⊗Σ⁻¹)G]⁻¹`.
///
/// It reduces to the MLE variance at `q = 1` but does not equal the sandwich
/// at `q ≠ 1`; [`sandwich_variance`] on [`MvnModel`](crate::families::MvnModel)
/// gives the exact value.
pub fn mvn_asymptotic_variance(sigma: &DMatrix<f64>, q: DistortionParam) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    let qv = q.value();
    if !(qv < 1.5) {
        return Err(LqError::domain(format!("the normal variance formula needs q < 1.5, got {qv}")));
    }
    let (prec, _) = linalg::spd_inverse_logdet(sigma)?;
    let pf = p as f64;
    let c1 = (2.0 - qv).powf(2.0 + pf) * (3.0 - 2.0 * qv).powf(-1.0 - pf / 2.0);
    let t = 3.0 - 2.0 * qv;
    let s = 2.0 - qv;
    let c2 = 4.0 * qv * qv * (t * t + 1.0) * s.powf(4.0 + pf)
        / ((s * s + 1.0).powi(2) * t.powf(2.0 + pf / 2.0));
    let g = ext(p);
    let info = g.transpose() * prec.kronecker(&prec) * &g;
    let info_inv = linalg::symmetric_inverse(&info).ok_or(LqError::SingularMatrix { q: qv })?;
    let l = linalg::vech_len(p);
    let mut v = DMatrix::zeros(p + l, p + l);
    v.view_mut((0, 0), (p, p)).copy_from(&(sigma * c1));
    v.view_mut((p, p), (l, l)).copy_from(&(info_inv * c2));
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{ExponentialModel, MvnModel};
    use nalgebra::DVector;

    fn q(v: f64) -> DistortionParam {
        DistortionParam::new(v).unwrap()
    }

    fn p1(v: f64) -> Param {
        Param::from_element(1, v)
    }

    #[test]
    fn sigma2_values() {
        assert_eq!(exponential_sigma2(1.7, q(1.0)).unwrap(), 1.7 * 1.7);
        assert!((exponential_sigma2(1.0, q(1.2)).unwrap() - 0.816_314).abs() < 1e-6);
        assert!(exponential_sigma2(1.0, q(2.0)).is_err());
    }

    #[test]
    fn q_one_gives_fisher_information() {
        let k = kn_matrix(&ExponentialModel, &p1(2.0), q(1.0)).unwrap();
        let j = jn_matrix(&ExponentialModel, &p1(2.0), q(1.0)).unwrap();
        assert!((k[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((j[(0, 0)] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn closed_form_kn_jn_match_quadrature() {
        let theta0 = p1(1.0);
        let qq = q(0.9);
        let star = p1(1.0 / 0.9);
        let num = numeric_sandwich(&ExponentialModel, &QuadratureEngine, &theta0, &star, qq).unwrap();
        let k = kn_matrix(&ExponentialModel, &theta0, qq).unwrap()[(0, 0)];
        let j = jn_matrix(&ExponentialModel, &theta0, qq).unwrap()[(0, 0)];
        assert!(((num.k[(0, 0)] - k) / k).abs() < 1e-8);
        assert!(((num.j[(0, 0)] - j) / j).abs() < 1e-8);
    }

    #[test]
    fn exponential_sandwich_matches_sigma2() {
        for qv in [0.8, 0.95, 1.2] {
            let s = sandwich_variance(&ExponentialModel, &p1(1.0), q(qv)).unwrap();
            let e = exponential_sigma2(1.0, q(qv)).unwrap();
            assert!(((s.v[(0, 0)] - e) / e).abs() < 1e-12, "q = {qv}");
        }
    }

    #[test]
    fn kn_rejects_large_distortion() {
        // θ₂ = θ₀(2/q − 1) ≤ 0 once q ≥ 2.
        assert!(matches!(kn_matrix(&ExponentialModel, &p1(1.0), q(2.5)), Err(LqError::Domain(_))));
    }

    #[test]
    fn mvn_exact_sandwich_matches_gauss_hermite() {
        let model = MvnModel::new(2).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let theta0 = model.pack(&DVector::from_vec(vec![0.2, -0.4]), &sigma);
        for qv in [0.9, 1.0, 1.1] {
            let exact = sandwich_variance(&model, &theta0, q(qv)).unwrap();
            let num = numeric_sandwich(&model, &GaussHermiteEngine, &theta0, &exact.theta_star, q(qv)).unwrap();
            assert!(linalg::max_rel_diff(&exact.v, &num.v, 1e-12) < 1e-10, "q = {qv}");
            assert!(linalg::max_rel_diff(&exact.k, &num.k, 1e-12) < 1e-10);
        }
    }

    #[test]
    fn mvn_block_form_at_q_one() {
        let v = mvn_asymptotic_variance(&DMatrix::from_element(1, 1, 2.0), q(1.0)).unwrap();
        assert!((v[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((v[(1, 1)] - 8.0).abs() < 1e-13);
        let v = mvn_asymptotic_variance(&DMatrix::from_element(1, 1, 1.0), q(0.9)).unwrap();
        assert!((v[(0, 0)] - 1.1f64.powi(3) / 1.2f64.powf(1.5)).abs() < 1e-14);
        assert!(mvn_asymptotic_variance(&DMatrix::from_element(1, 1, 1.0), q(1.5)).is_err());
    }

    #[test]
    fn recompute_v_roundtrip() {
        let model = MvnModel::new(2).unwrap();
        let theta0 = model.pack(&DVector::zeros(2), &DMatrix::identity(2, 2));
        let s = sandwich_variance(&model, &theta0, q(0.95)).unwrap();
        assert!(linalg::max_rel_diff(&s.recompute_v().unwrap(), &s.v, 1e-12) < 1e-10);
        assert!(!s.ill_conditioned());
    }
}

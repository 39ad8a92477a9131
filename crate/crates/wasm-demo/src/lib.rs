//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Curves come back as flat `Float64Array`s so the page needs no glue beyond
//! what `wasm-bindgen` generates.

use mlqe_core::asymptotics::{exponential_sigma2, sandwich_variance};
use mlqe_core::families::{ExponentialModel, FamilyModel, MvnModel};
use mlqe_core::lq::{rescaled_estimate, solve_mlqe, DistortionParam, SolverOptions};
use mlqe_core::tail::{mse_q, plugin_tail_estimate, select_q, Q_UPPER};
use mlqe_core::Param;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (points.max(2) - 1) as f64;
    (0..points.max(2)).map(move |i| lo + step * i as f64)
}

/// `[q₀, mse₀, q₁, mse₁, …]` for the tail MSE on `q ∈ [q_min, 1)` at rate
/// `lambda`, tail probability `alpha` and sample size `n`.
#[wasm_bindgen]
pub fn mse_curve(lambda: f64, alpha: f64, n: usize, q_min: f64, points: usize) -> Result<Vec<f64>, JsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(JsError::new("alpha must lie in (0, 1)"));
    }
    let x = -alpha.ln() / lambda;
    let mut out = Vec::with_capacity(2 * points);
    for qv in grid(q_min, Q_UPPER, points) {
        let q = DistortionParam::new(qv).map_err(js_err)?;
        out.push(qv);
        out.push(mse_q(q, lambda, x, n).map_err(js_err)?);
    }
    Ok(out)
}

/// `[q*, mse(q*), mse(1)]`.
#[wasm_bindgen]
pub fn optimal_q(lambda: f64, alpha: f64, n: usize) -> Result<Vec<f64>, JsError> {
    let x = -alpha.ln() / lambda;
    let sel = select_q(lambda, x, n).map_err(js_err)?;
    let at_one = mse_q(DistortionParam::ONE, lambda, x, n).map_err(js_err)?;
    Ok(vec![sel.q_star, sel.objective_at_qstar, at_one])
}

/// `[q, σ²(q)/λ², V₁₁/σ², V₂₂/σ⁴, …]`: the exponential variance factor and
/// the univariate normal ones, all equal to 1, 1, 2 at `q = 1`.
#[wasm_bindgen]
pub fn variance_curves(q_min: f64, q_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
    let model = MvnModel::new(1).map_err(js_err)?;
    let theta0 = model.pack(&DVector::zeros(1), &DMatrix::identity(1, 1));
    let mut out = Vec::with_capacity(4 * points);
    for qv in grid(q_min, q_max, points) {
        let q = DistortionParam::new(qv).map_err(js_err)?;
        let v = sandwich_variance(&model, &theta0, q).map_err(js_err)?.v;
        out.extend([qv, exponential_sigma2(1.0, q).map_err(js_err)?, v[(0, 0)], v[(1, 1)]]);
    }
    Ok(out)
}

/// Draws an exponential sample and fits it.
///
/// Returns `[λ̂_MLE, λ̃, qλ̃, α̂_MLE, α̂_q, se_q, x]` for the tail at
/// probability `alpha` under the true rate.
#[wasm_bindgen]
pub fn simulate_and_fit(seed: u64, n: usize, lambda: f64, q: f64, alpha: f64) -> Result<Vec<f64>, JsError> {
    let q = DistortionParam::new(q).map_err(js_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = ExponentialModel
        .sample(&Param::from_element(1, lambda), n, &mut rng)
        .map_err(js_err)?;
    let x = -alpha.ln() / lambda;
    let opts = SolverOptions::default();
    let mle = solve_mlqe(&sample, &ExponentialModel, DistortionParam::ONE, &opts)
        .and_then(|f| f.into_converged())
        .map_err(js_err)?;
    let fit = solve_mlqe(&sample, &ExponentialModel, q, &opts)
        .and_then(|f| f.into_converged())
        .map_err(js_err)?;
    let rescaled = rescaled_estimate(&fit, &ExponentialModel).map_err(js_err)?;
    let t_mle = plugin_tail_estimate(&mle, &ExponentialModel, x, n).map_err(js_err)?;
    let t_q = plugin_tail_estimate(&fit, &ExponentialModel, x, n).map_err(js_err)?;
    Ok(vec![mle.theta[0], fit.theta[0], rescaled[0], t_mle.alpha_hat, t_q.alpha_hat, t_q.se_asy, x])
}

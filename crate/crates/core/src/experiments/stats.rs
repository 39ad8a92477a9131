//! Monte Carlo summaries with their standard errors.

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn covariance(a: &[f64], b: &[f64], ma: f64, mb: f64) -> f64 {
    let n = a.len();
    if n < 2 {
        return f64::NAN;
    }
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1) as f64
}

/// Sample mean and its standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    (m, (covariance(v, v, m, m) / v.len() as f64).sqrt())
}

/// Sample standard deviation and its large-sample standard error
/// `√((m₄ − s⁴)/(4s²B))`.
pub fn sd_se(v: &[f64]) -> (f64, f64) {
    let b = v.len() as f64;
    let m = mean(v);
    let s2 = covariance(v, v, m, m);
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / b;
    let s = s2.sqrt();
    (s, ((m4 - s2 * s2).max(0.0) / (4.0 * s2 * b)).sqrt())
}

/// Share of ones in a 0/1 vector with the binomial standard error.
pub fn proportion_se(v: &[f64]) -> (f64, f64) {
    let p = mean(v);
    (p, (p * (1.0 - p) / v.len() as f64).sqrt())
}

/// `ȳ₁/ȳ₂` with the delta-method standard error
/// `B^{−1/2}(γ₁₁/ȳ₂² − 2γ₁₂ȳ₁/ȳ₂³ + γ₂₂ȳ₁²/ȳ₂⁴)^{1/2}`, where `γ` is the
/// sample covariance of the paired replicates.
pub fn ratio_of_means_se(y1: &[f64], y2: &[f64]) -> (f64, f64) {
    assert_eq!(y1.len(), y2.len(), "ratio needs paired replicates");
    let b = y1.len() as f64;
    let (m1, m2) = (mean(y1), mean(y2));
    let g11 = covariance(y1, y1, m1, m1);
    let g12 = covariance(y1, y2, m1, m2);
    let g22 = covariance(y2, y2, m2, m2);
    let var = g11 / (m2 * m2) - 2.0 * g12 * m1 / m2.powi(3) + g22 * m1 * m1 / m2.powi(4);
    (m1 / m2, (var.max(0.0) / b).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_arms_have_zero_ratio_se() {
        let y = [1.0, 2.0, 4.0, 0.5];
        let (r, se) = ratio_of_means_se(&y, &y);
        assert_eq!(r, 1.0);
        assert!(se < 1e-7);
    }

    #[test]
    fn ratio_se_matches_independent_formula() {
        // Independent arms: var(ȳ₁/ȳ₂) ≈ (σ₁²/ȳ₂² + σ₂²ȳ₁²/ȳ₂⁴)/B.
        let y1 = [1.0, 3.0, 2.0, 2.0];
        let y2 = [2.0, 2.0, 1.0, 3.0];
        // Paired covariance of these columns is zero.
        let (r, se) = ratio_of_means_se(&y1, &y2);
        let v1: f64 = 2.0 / 3.0;
        let v2 = 2.0 / 3.0;
        let want = ((v1 / 4.0 + v2 * 4.0 / 16.0) / 4.0).sqrt();
        assert_eq!(r, 1.0);
        assert!((se - want).abs() < 1e-15);
    }

    #[test]
    fn simple_summaries() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let (p, se) = proportion_se(&[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(p, 0.75);
        assert!((se - (0.75f64 * 0.25 / 4.0).sqrt()).abs() < 1e-15);
        let (s, _) = sd_se(&[1.0, 2.0, 3.0]);
        assert_eq!(s, 1.0);
    }
}

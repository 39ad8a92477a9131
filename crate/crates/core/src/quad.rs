//! One-dimensional integration over finite, half-infinite and infinite
//! ranges, backed by double-exponential quadrature.

const ABS_TARGET: f64 = 1e-13;

/// `∫_a^b f(x) dx` on a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    quadrature::integrate(f, a, b, ABS_TARGET).integral
}

/// `∫_lower^∞ f(x) dx` through the map `x = lower + t/(1-t)`.
///
/// The integrand must decay fast enough that `f(x)·(1+x)²` vanishes at infinity.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, lower: f64) -> f64 {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let one_minus = 1.0 - t;
        let x = lower + t / one_minus;
        let v = f(x) / (one_minus * one_minus);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    // Splitting at the midpoint keeps the mass near `lower` well resolved.
    integrate(g, 0.0, 0.5) + integrate(g, 0.5, 1.0)
}

/// `∫_{-∞}^{∞} f(x) dx`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, center: f64) -> f64 {
    integrate_to_infinity(&f, center) + integrate_to_infinity(|x| f(2.0 * center - x), center)
}

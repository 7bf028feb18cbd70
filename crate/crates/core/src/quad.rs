//! Adaptive Simpson quadrature with a graded mesh for integrands that blow up
//! at the left endpoint (e.g. `u^{p-1}` with `p < 1`, which is integrable but
//! unbounded at 0).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("adaptive refinement exceeded its budget on [{a}, {b}] (best estimate {estimate:e})")]
    BudgetExceeded { a: f64, b: f64, estimate: f64 },
    #[error("invalid interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },
}

const MAX_DEPTH: u32 = 48;
const MAX_ORIGIN_PANELS: usize = 4000;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || (b - a) < f64::EPSILON * (a.abs() + b.abs()) {
        return Ok(left + right + delta / 15.0);
    }
    if depth >= MAX_DEPTH {
        return Err(left + right + delta / 15.0);
    }
    let half_tol = 0.5 * tol;
    match (
        adaptive_step(f, a, m, fa, flm, fm, left, half_tol, depth + 1),
        adaptive_step(f, m, b, fm, frm, fb, right, half_tol, depth + 1),
    ) {
        (Ok(l), Ok(r)) => Ok(l + r),
        (l, r) => Err(l.unwrap_or_else(|e| e) + r.unwrap_or_else(|e| e)),
    }
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
///
/// The integrand must be finite on the closed interval.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(QuadError::InvalidInterval { a, b });
    }
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    adaptive_step(&f, a, b, fa, fm, fb, whole, tol, 0)
        .map_err(|estimate| QuadError::BudgetExceeded { a, b, estimate })
}

/// Integrates `f` over `(0, t]` where `f` may be unbounded (but integrable)
/// as `u -> 0+`.
///
/// The interval is covered by geometrically shrinking panels
/// `[t/2^{k+1}, t/2^k]`; on each panel the integrand is finite, so plain
/// adaptive Simpson applies. Panels are accumulated until their contribution
/// shows geometric decay and sits below the tolerance, at which point the
/// remaining tail is provably negligible for any integrand whose panel
/// integrals keep decaying at the observed rate.
pub fn integrate_singular_origin<F: Fn(f64) -> f64>(
    f: F,
    t: f64,
    tol: f64,
) -> Result<f64, QuadError> {
    if !t.is_finite() || t < 0.0 {
        return Err(QuadError::InvalidInterval { a: 0.0, b: t });
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut hi = t;
    let mut prev_contrib = f64::INFINITY;
    for k in 0..MAX_ORIGIN_PANELS {
        let lo = hi * 0.5;
        // per-panel tolerance decays like 1/k^2 so the sum stays within tol
        let panel_tol = tol * 0.5 / ((k + 1) * (k + 1)) as f64;
        let contrib = adaptive_simpson(&f, lo, hi, panel_tol)?;
        total += contrib;
        let decaying = contrib.abs() <= prev_contrib;
        if k >= 4 && decaying && contrib.abs() < tol * 0.125 {
            let ratio = if prev_contrib > 0.0 { contrib.abs() / prev_contrib } else { 0.0 };
            // geometric tail estimate; require enough decay to trust it
            if ratio < 0.95 {
                let tail = contrib.abs() * ratio / (1.0 - ratio);
                if tail < tol * 0.25 {
                    return Ok(total);
                }
            }
        }
        prev_contrib = contrib.abs();
        hi = lo;
        if hi < f64::MIN_POSITIVE * 1e4 {
            return Ok(total);
        }
    }
    Err(QuadError::BudgetExceeded { a: 0.0, b: t, estimate: total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let v = adaptive_simpson(|x| x * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert_relative_eq!(v, 4.0, epsilon = 1e-11);
    }

    #[test]
    fn oscillatory_integrand() {
        let v = adaptive_simpson(f64::sin, 0.0, std::f64::consts::PI, 1e-11).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_interval() {
        assert_eq!(adaptive_simpson(|x| x, 1.0, 1.0, 1e-10).unwrap(), 0.0);
        assert!(adaptive_simpson(|x| x, 1.0, 0.0, 1e-10).is_err());
    }

    #[test]
    fn singular_origin_power_law() {
        // int_0^t p u^{p-1} du = t^p, singular at 0 for p < 1
        for &p in &[0.25, 0.5, 0.75] {
            for &t in &[0.3, 1.0, 2.5] {
                let v = integrate_singular_origin(|u| p * u.powf(p - 1.0), t, 1e-11).unwrap();
                assert_relative_eq!(v, t.powf(p), epsilon = 1e-9, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn singular_origin_log() {
        // int_0^1 ln(1/u) du = 1
        let v = integrate_singular_origin(|u| -u.ln(), 1.0, 1e-11).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn singular_origin_smooth_integrand() {
        let v = integrate_singular_origin(|u| u * u, 3.0, 1e-11).unwrap();
        assert_relative_eq!(v, 9.0, epsilon = 1e-9);
    }

    #[test]
    fn singular_origin_zero_length() {
        assert_eq!(integrate_singular_origin(|_| 1.0, 0.0, 1e-10).unwrap(), 0.0);
    }
}

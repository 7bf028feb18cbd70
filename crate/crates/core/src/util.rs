//! Small shared helpers: stable numeric formatting and seeded directions.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Formats a float with 9 significant digits in scientific notation.
///
/// The output is locale-independent and stable across runs, which keeps golden
/// CSV files byte-identical. Non-finite values print as `inf`, `-inf`, `nan`.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{:.8e}", x)
    }
}

/// Deterministic RNG for a (seed, stream) pair.
///
/// Distinct streams (e.g. per-iteration residual directions) must not share a
/// raw seed, so the stream index is mixed in with a fixed odd multiplier.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Seeded unit vector in `R^n` (Gaussian direction, normalized).
pub fn seeded_unit_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v: DVector<f64> =
            DVector::from_iterator(n, (0..n).map(|_| -> f64 { StandardNormal.sample(rng) }));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Seeded point roughly uniform in the closed ball of given radius.
pub fn seeded_ball_point(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    use rand::Rng;
    let dir = seeded_unit_vector(n, rng);
    let u: f64 = rng.random();
    dir * (radius * u.powf(1.0 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(2.0 / 3.0), "6.66666667e-1");
        assert_eq!(fmt_sig9(1.0), "1.00000000e0");
        assert_eq!(fmt_sig9(f64::INFINITY), "inf");
        assert_eq!(fmt_sig9(f64::NAN), "nan");
        assert_eq!(fmt_sig9(-0.25), "-2.50000000e-1");
    }

    #[test]
    fn unit_vectors_are_unit_and_deterministic() {
        let mut rng1 = stream_rng(7, 3);
        let mut rng2 = stream_rng(7, 3);
        let a = seeded_unit_vector(5, &mut rng1);
        let b = seeded_unit_vector(5, &mut rng2);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let mut rng3 = stream_rng(7, 4);
        let c = seeded_unit_vector(5, &mut rng3);
        assert_ne!(a, c);
    }

    #[test]
    fn ball_points_stay_inside() {
        let mut rng = stream_rng(11, 0);
        for _ in 0..100 {
            let p = seeded_ball_point(3, 2.5, &mut rng);
            assert!(p.norm() <= 2.5 + 1e-12);
        }
    }
}

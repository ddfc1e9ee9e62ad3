//! Log-domain arithmetic for the standard Gaussian tail `Q(z) = P(N(0,1) > z)`.
//!
//! Everything the Probit/Tobit likelihoods need is expressed through three
//! primitives: [`log_q`], [`mills_ratio`] and [`stable_log_tail_diff`]. None of
//! them saturate in the range of arguments that matter here; the continued
//! fraction takes over where `erfc` would underflow.

use libm::erfc;

use crate::error::{Error, Result};

/// `ln(sqrt(2π))`
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Smallest value [`stable_log_tail_diff`] returns. Reached only when the
/// interval width itself underflows.
pub const LOG_MASS_FLOOR: f64 = -1.0e300;

/// Arguments are clamped to this magnitude so that `z²/2` stays finite.
const Z_LIMIT: f64 = 1.0e150;

/// Above this the tail is evaluated through the Mills-ratio continued fraction.
const CF_SWITCH: f64 = 20.0;

#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

#[inline]
pub fn log_norm_pdf(z: f64) -> f64 {
    let z = z.clamp(-Z_LIMIT, Z_LIMIT);
    -0.5 * z * z - LN_SQRT_2PI
}

/// `Q(z)`, the upper tail of the standard normal.
#[inline]
pub fn q(z: f64) -> f64 {
    0.5 * erfc(z * std::f64::consts::FRAC_1_SQRT_2)
}

/// `Q(z) / φ(z)` by backward evaluation of the Laplace continued fraction.
/// Only used for `z >= CF_SWITCH`, where 40 terms are far more than enough.
fn tail_over_pdf_cf(z: f64) -> f64 {
    let mut acc = z;
    for k in (1..=40).rev() {
        acc = z + k as f64 / acc;
    }
    1.0 / acc
}

/// `ln Q(z)`, accurate in both tails.
pub fn log_q(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    let z = z.clamp(-Z_LIMIT, Z_LIMIT);
    if z < -1.0 {
        (-q(-z)).ln_1p()
    } else if z < CF_SWITCH {
        q(z).ln()
    } else {
        log_norm_pdf(z) + tail_over_pdf_cf(z).ln()
    }
}

/// Inverse Mills ratio `φ(z) / Q(z)` (the Gaussian hazard).
pub fn mills_ratio(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return f64::INFINITY;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    let z = z.clamp(-Z_LIMIT, Z_LIMIT);
    if z >= CF_SWITCH {
        1.0 / tail_over_pdf_cf(z)
    } else {
        (log_norm_pdf(z) - log_q(z)).exp()
    }
}

/// `ln(Q(a) - Q(b))` for `a < b`, i.e. the log-probability that a standard
/// normal falls in `(a, b]`. Either endpoint may be infinite.
///
/// The interval is reflected onto the side where the tails are small, so the
/// subtraction never cancels catastrophically; very narrow intervals fall back
/// to a corrected midpoint rule.
pub fn stable_log_tail_diff(a: f64, b: f64) -> Result<f64> {
    if a.is_nan() || b.is_nan() || a >= b {
        return Err(Error::domain(format!(
            "tail difference needs a < b, got a={a}, b={b}"
        )));
    }
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return Ok(0.0);
    }
    // Q(a) - Q(b) = Q(-b) - Q(-a)
    let (a, b) = if a + b < 0.0 { (-b, -a) } else { (a, b) };
    let la = log_q(a);
    let lb = log_q(b);
    let r = (lb - la).exp();
    let out = if r < 1.0 - 1e-6 {
        la + (-r).ln_1p()
    } else {
        let h = b - a;
        let c = 0.5 * (a + b);
        log_norm_pdf(c) + h.ln() + (h * h * (c * c - 1.0) / 24.0).ln_1p()
    };
    Ok(if out.is_finite() { out } else { LOG_MASS_FLOOR })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    // Reference values from 50-digit mpmath evaluations.
    #[test]
    fn log_q_matches_high_precision() {
        let cases = [
            (-1.0, -0.172_753_779_023_449_89),
            (5.0, -15.064_998_393_988_726),
            (40.0, -804.608_442_013_753_8),
        ];
        for (z, want) in cases {
            let got = log_q(z);
            assert!(rel(got, want) < 1e-13, "z={z}: {got} vs {want}");
        }
        assert_eq!(log_q(-40.0), 0.0);
        assert_eq!(log_q(0.0), 0.5f64.ln());
    }

    #[test]
    fn mills_ratio_matches_high_precision() {
        let cases = [
            (8.0, 8.121_368_112_236_113),
            (30.0, 30.033_259_667_433_677),
            (-3.0, 0.004_437_839_042_125_663_8),
        ];
        for (z, want) in cases {
            let got = mills_ratio(z);
            assert!(rel(got, want) < 1e-12, "z={z}: {got} vs {want}");
        }
    }

    #[test]
    fn mills_ratio_continuous_across_switch() {
        let below = (log_norm_pdf(CF_SWITCH) - q(CF_SWITCH).ln()).exp();
        let above = 1.0 / tail_over_pdf_cf(CF_SWITCH);
        assert!(rel(below, above) < 1e-12);
    }

    #[test]
    fn tail_diff_trivial_values() {
        assert_eq!(
            stable_log_tail_diff(f64::NEG_INFINITY, f64::INFINITY).unwrap(),
            0.0
        );
        let half = stable_log_tail_diff(0.0, f64::INFINITY).unwrap();
        assert!((half - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tail_diff_high_precision() {
        let want = -53.231_285_150_745_61;
        assert!(rel(stable_log_tail_diff(10.0, 12.0).unwrap(), want) < 1e-8);
        assert!(rel(stable_log_tail_diff(-12.0, -10.0).unwrap(), want) < 1e-8);
        let narrow = stable_log_tail_diff(3.0, 3.000_001).unwrap();
        assert!(rel(narrow, -19.234_450_591_168_74) < 1e-9, "{narrow}");
        let mid = stable_log_tail_diff(0.5, 1.5).unwrap();
        assert!(rel(mid, -1.419_932_482_156_626_3) < 1e-13);
    }

    #[test]
    fn tail_diff_rejects_empty_interval() {
        assert!(stable_log_tail_diff(1.0, 1.0).is_err());
        assert!(stable_log_tail_diff(2.0, 1.0).is_err());
        assert!(stable_log_tail_diff(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn tail_diff_is_finite_far_out() {
        for &(a, b) in &[(200.0, 200.5), (-1e6, -1e6 + 1.0), (1e3, f64::INFINITY)] {
            let v = stable_log_tail_diff(a, b).unwrap();
            assert!(v.is_finite() && v < 0.0, "({a},{b}) -> {v}");
        }
    }
}

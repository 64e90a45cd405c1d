//! Special functions not covered by `libm`.

use std::f64::consts::{PI, SQRT_2};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Above this argument `erfc` is evaluated through its scaled form.
const ERFC_SCALED_FROM: f64 = 5.0;

pub(crate) fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Scaled complementary error function `exp(x²)·erfc(x)` for `x >= 5`,
/// by backward evaluation of the Laplace continued fraction.
fn erfcx_tail(x: f64) -> f64 {
    debug_assert!(x >= ERFC_SCALED_FROM);
    let mut t = x;
    for k in (1..=60).rev() {
        t = x + 0.5 * k as f64 / t;
    }
    FRAC_1_SQRT_PI / t
}

/// `ln erfc(x)`, finite for all finite `x`.
pub(crate) fn ln_erfc(x: f64) -> f64 {
    if x > ERFC_SCALED_FROM {
        -x * x + erfcx_tail(x).ln()
    } else {
        erfc(x).ln()
    }
}

/// `ln(exp(x²)·erfc(x))`, intended for `x > 5`.
pub(crate) fn ln_erfcx(x: f64) -> f64 {
    if x > ERFC_SCALED_FROM {
        erfcx_tail(x).ln()
    } else {
        x * x + erfc(x).ln()
    }
}

/// `exp(-x²) / erfc(x)`; the derivative of `ln erfc` is `-2/√π` times this.
pub(crate) fn erfc_hazard(x: f64) -> f64 {
    if x > ERFC_SCALED_FROM {
        1.0 / erfcx_tail(x)
    } else {
        (-x * x).exp() / erfc(x)
    }
}

pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Survival function of the asymptotic Kolmogorov distribution,
/// `P(K > lambda)`.
pub(crate) fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi-transformed series converges fast for small lambda.
        let mut cdf = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            cdf += (-(m * m) * PI * PI / (8.0 * lambda * lambda)).exp();
        }
        cdf *= (2.0 * PI).sqrt() / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sf = 0.0;
        for k in 1..=100 {
            let k = k as f64;
            let term = (-2.0 * k * k * lambda * lambda).exp();
            sf += if k as u64 % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * sf).clamp(0.0, 1.0)
    }
}

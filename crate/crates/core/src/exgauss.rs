//! Exponentially modified Gaussian (ExGauss) distribution.
//!
//! `T = N + E` with `N ~ Normal(mu, sigma²)` and `E ~ Exponential(mean tau)`.
//! All parameters are in seconds.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::special::{erfc_hazard, ln_erfc, ln_erfcx, norm_cdf};
use crate::{Error, Result};

/// Minimum number of samples accepted by [`mle_fit`].
pub const MIN_FIT_SAMPLES: usize = 20;

const MAX_FIT_ITERS: usize = 10_000;
const FIT_GRAD_TOL: f64 = 1e-8;

/// Something with a cumulative distribution over offset time.
pub trait OffsetDistribution {
    fn cdf(&self, t: f64) -> f64;

    /// Inverse CDF by bisection; `p` is clamped into `(0, 1)`.
    fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(1e-15, 1.0 - 1e-15);
        let (mut lo, mut hi) = (-1.0, 1.0);
        while self.cdf(lo) > p {
            lo = 2.0 * lo - hi;
        }
        while self.cdf(hi) < p {
            hi = 2.0 * hi - lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExGaussParams {
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
}

/// Partial derivatives of a scalar with respect to `(mu, sigma, tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamGrad {
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl ExGaussParams {
    pub fn new(mu: f64, sigma: f64, tau: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma > 0.0 && sigma.is_finite()) || !(tau > 0.0 && tau.is_finite())
        {
            return Err(Error::Domain(format!(
                "invalid ExGauss parameters (mu={mu}, sigma={sigma}, tau={tau})"
            )));
        }
        Ok(Self { mu, sigma, tau })
    }

    pub fn mean(&self) -> f64 {
        self.mu + self.tau
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma + self.tau * self.tau
    }

    pub fn skewness(&self) -> f64 {
        let r = self.tau / self.sigma;
        2.0 * r.powi(3) * (1.0 + r * r).powf(-1.5)
    }

    /// Argument of the erfc factor in the density.
    fn erfc_arg(&self, t: f64) -> f64 {
        (self.mu - t) / (SQRT_2 * self.sigma) + self.sigma / (SQRT_2 * self.tau)
    }

    /// Log density. Stays finite where the density itself underflows.
    pub fn ln_pdf(&self, t: f64) -> f64 {
        let (mu, s, tau) = (self.mu, self.sigma, self.tau);
        if t.is_infinite() {
            return f64::NEG_INFINITY;
        }
        let z = self.erfc_arg(t);
        if z > 5.0 {
            // Expanding z² cancels the exponential factor exactly.
            -(2.0 * tau).ln() - (mu - t).powi(2) / (2.0 * s * s) + ln_erfcx(z)
        } else {
            -(2.0 * tau).ln() + (mu - t) / tau + s * s / (2.0 * tau * tau) + ln_erfc(z)
        }
    }

    pub fn pdf(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::Domain(format!("density at non-finite time {t}")));
        }
        Ok(self.ln_pdf(t).exp())
    }

    /// Gradient of [`Self::ln_pdf`] at finite `t`.
    pub fn ln_pdf_grad(&self, t: f64) -> ParamGrad {
        let (mu, s, tau) = (self.mu, self.sigma, self.tau);
        let z = self.erfc_arg(t);
        // d ln erfc(z) / dz
        let g = -2.0 / PI.sqrt() * erfc_hazard(z);
        let dz_dmu = 1.0 / (SQRT_2 * s);
        let dz_ds = -(mu - t) / (SQRT_2 * s * s) + 1.0 / (SQRT_2 * tau);
        let dz_dtau = -s / (SQRT_2 * tau * tau);
        ParamGrad {
            mu: 1.0 / tau + g * dz_dmu,
            sigma: s / (tau * tau) + g * dz_ds,
            tau: -1.0 / tau - (mu - t) / (tau * tau) - s * s / tau.powi(3) + g * dz_dtau,
        }
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&t| self.ln_pdf(t)).sum()
    }

    /// Draws `n` values with a ChaCha8 stream seeded from `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, n)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let normal = Normal::new(self.mu, self.sigma).expect("sigma > 0");
        let exp = Exp::new(1.0 / self.tau).expect("tau > 0");
        normal.sample(rng) + exp.sample(rng)
    }
}

impl OffsetDistribution for ExGaussParams {
    fn cdf(&self, t: f64) -> f64 {
        if t == f64::NEG_INFINITY {
            return 0.0;
        }
        if t == f64::INFINITY {
            return 1.0;
        }
        // F(t) = Φ((t-μ)/σ) − τ·f(t)
        let gauss = norm_cdf((t - self.mu) / self.sigma);
        let tail = (self.tau.ln() + self.ln_pdf(t)).exp();
        (gauss - tail).clamp(0.0, 1.0)
    }
}

/// Outcome of a maximum-likelihood fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub params: ExGaussParams,
    pub initial: ExGaussParams,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Maximum-likelihood ExGauss parameters for `samples`.
pub fn mle_fit(samples: &[f64]) -> Result<ExGaussParams> {
    mle_fit_report(samples).map(|r| r.params)
}

/// Moment-matching starting point used by the optimizer.
pub fn moment_estimate(samples: &[f64]) -> Result<ExGaussParams> {
    validate_samples(samples)?;
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    let m2 = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = samples.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    if !(m2 > 0.0) || m2.sqrt() <= 1e-12 * m.abs().max(1.0) {
        return Err(Error::DegenerateSamples);
    }
    let s = m2.sqrt();
    let skew = m3 / (m2 * s);
    let tau = (s * (skew / 2.0).max(0.0).cbrt()).max(1e-3);
    let sigma = (s * s - tau * tau).max(1e-8).sqrt();
    ExGaussParams::new(m - tau, sigma, tau)
}

fn validate_samples(samples: &[f64]) -> Result<()> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_FIT_SAMPLES,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("samples must be finite".into()));
    }
    Ok(())
}

/// Mean negative log-likelihood and its gradient in `(mu, ln sigma, ln tau)`.
fn objective(theta: &[f64; 3], samples: &[f64]) -> (f64, [f64; 3]) {
    let p = ExGaussParams {
        mu: theta[0],
        sigma: theta[1].exp(),
        tau: theta[2].exp(),
    };
    let n = samples.len() as f64;
    let mut f = 0.0;
    let mut g = [0.0; 3];
    for &t in samples {
        f -= p.ln_pdf(t);
        let d = p.ln_pdf_grad(t);
        g[0] -= d.mu;
        g[1] -= d.sigma * p.sigma;
        g[2] -= d.tau * p.tau;
    }
    (f / n, g.map(|x| x / n))
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Like [`mle_fit`], also reporting the starting point and convergence.
///
/// Quasi-Newton (BFGS with Armijo backtracking) on the mean negative
/// log-likelihood, with `sigma` and `tau` optimized in log space.
pub fn mle_fit_report(samples: &[f64]) -> Result<FitReport> {
    let initial = moment_estimate(samples)?;
    let mut x = [initial.mu, initial.sigma.ln(), initial.tau.ln()];
    let (mut f, mut g) = objective(&x, samples);
    let f0 = f;
    if !f.is_finite() {
        return Err(Error::FitFailed("initial likelihood is not finite".into()));
    }
    let mut h = [[0.0; 3]; 3];
    let reset = |h: &mut [[f64; 3]; 3]| {
        *h = [[0.0; 3]; 3];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
        }
    };
    reset(&mut h);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_FIT_ITERS {
        if dot(&g, &g).sqrt() < FIT_GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir = [0.0; 3];
        for i in 0..3 {
            dir[i] = -(0..3).map(|j| h[i][j] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            reset(&mut h);
            dir = g.map(|v| -v);
            slope = -dot(&g, &g);
        }
        // Cap the trial step: one unit in (mu, ln sigma, ln tau) is already large.
        let longest = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if longest > 1.0 { 1.0 / longest } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let trial = [
                x[0] + step * dir[0],
                x[1] + step * dir[1],
                x[2] + step * dir[2],
            ];
            let (ft, gt) = objective(&trial, samples);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if fresh {
                // No descent possible even along the gradient: at precision limit.
                converged = dot(&g, &g).sqrt() < 1e-5;
                break;
            }
            reset(&mut h);
            fresh = true;
            continue;
        };
        let s = [xn[0] - x[0], xn[1] - x[1], xn[2] - x[2]];
        let y = [gn[0] - g[0], gn[1] - g[1], gn[2] - g[2]];
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if fresh {
                let scale = sy / dot(&y, &y);
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = scale;
                }
            }
            // H <- (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let mut hy = [0.0; 3];
            for i in 0..3 {
                hy[i] = (0..3).map(|j| h[i][j] * y[j]).sum();
            }
            let yhy = dot(&y, &hy);
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] +=
                        rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
            fresh = false;
        }
        let done = f - fnew <= 1e-16 * f.abs().max(1.0) && !fresh;
        x = xn;
        f = fnew;
        g = gn;
        if done && dot(&g, &g).sqrt() < 1e-6 {
            converged = true;
            break;
        }
    }

    let params = ExGaussParams::new(x[0], x[1].exp(), x[2].exp())
        .map_err(|e| Error::FitFailed(e.to_string()))?;
    let n = samples.len() as f64;
    Ok(FitReport {
        params,
        initial,
        log_likelihood: -f * n,
        initial_log_likelihood: -f0 * n,
        iterations,
        converged,
    })
}

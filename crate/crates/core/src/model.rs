//! End-to-end offset-time model.
//!
//! Offset times are grouped by displacement condition, each group gets its
//! own maximum-likelihood ExGauss fit, and the three parameters are then
//! regressed independently onto Gaussian RBF networks. The result maps any
//! displacement inside the studied amplitude box to a full offset-time
//! distribution.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::exgauss::{mle_fit, ExGaussParams, MIN_FIT_SAMPLES};
use crate::geometry::GazeDisplacement;
use crate::rbf::{RbfNet, BASES, N_PARAMS};
use crate::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

/// Floor applied to predicted `sigma` and `tau`, seconds.
pub const SCALE_FLOOR_S: f64 = 1e-3;

/// Largest vergence amplitude the study could present, degrees.
pub const MAX_VERGENCE_AMPLITUDE_DEG: f64 = 8.4;
/// Largest saccade amplitude in the condition grid, degrees.
pub const MAX_SACCADE_AMPLITUDE_DEG: f64 = 12.0;

const DOMAIN_SLACK: f64 = 1e-9;
const INIT_SHAPE: f64 = 0.1;
const INIT_JITTER_DEG: f64 = 0.1;

/// Offset times observed for one displacement condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSamples {
    pub displacement: GazeDisplacement,
    pub offsets: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionEstimate {
    pub displacement: GazeDisplacement,
    pub params: ExGaussParams,
    pub n_trials: usize,
}

/// Canonical key for a folded displacement (micro-degree resolution).
pub fn condition_key(d: GazeDisplacement) -> (i64, i64) {
    let d = d.folded();
    (
        (d.d_vergence_deg * 1e6).round() as i64,
        (d.d_saccade_deg * 1e6).round() as i64,
    )
}

pub fn describe(d: GazeDisplacement) -> String {
    format!("(Δv={:+.2}°, Δs={:.2}°)", d.d_vergence_deg, d.d_saccade_deg)
}

/// Groups `(displacement, offset)` pairs by folded displacement, ordered by
/// `(Δv, |Δs|)`.
pub fn group_by_condition<I>(observations: I) -> Vec<ConditionSamples>
where
    I: IntoIterator<Item = (GazeDisplacement, f64)>,
{
    let mut groups: BTreeMap<(i64, i64), ConditionSamples> = BTreeMap::new();
    for (d, t) in observations {
        groups
            .entry(condition_key(d))
            .or_insert_with(|| ConditionSamples {
                displacement: d.folded(),
                offsets: Vec::new(),
            })
            .offsets
            .push(t);
    }
    groups.into_values().collect()
}

/// Per-condition maximum-likelihood fits. Groups are fitted in parallel;
/// the output keeps the input order.
pub fn fit_conditions(groups: &[ConditionSamples]) -> Result<Vec<ConditionEstimate>> {
    if let Some(g) = groups.iter().find(|g| g.offsets.len() < MIN_FIT_SAMPLES) {
        return Err(Error::UndersizedGroup {
            condition: describe(g.displacement),
            got: g.offsets.len(),
            needed: MIN_FIT_SAMPLES,
        });
    }
    groups
        .par_iter()
        .map(|g| {
            let params = mle_fit(&g.offsets).map_err(|e| match e {
                Error::DegenerateSamples | Error::FitFailed(_) => {
                    Error::FitFailed(format!("condition {}: {e}", describe(g.displacement)))
                }
                other => other,
            })?;
            Ok(ConditionEstimate {
                displacement: g.displacement.folded(),
                params,
                n_trials: g.offsets.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Adam with the usual moment decay rates (0.9, 0.999), using the
    /// running maximum of the second moment (AMSGrad) so the effective step
    /// cannot grow once gradients vanish.
    Adam,
    /// Plain full-batch gradient descent.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Loss is recorded every this many iterations.
    pub log_every: usize,
    /// Reject condition sets that do not span both displacement axes.
    /// Single-axis ablations switch this off.
    pub require_2d_layout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            iterations: 200_000,
            seed: 0,
            optimizer: Optimizer::Adam,
            log_every: 1_000,
            require_2d_layout: true,
        }
    }
}

/// Amplitude box the model was trained on. Saccade amplitude is folded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDomain {
    pub max_abs_vergence_deg: f64,
    pub max_saccade_deg: f64,
}

impl Default for ModelDomain {
    fn default() -> Self {
        Self {
            max_abs_vergence_deg: MAX_VERGENCE_AMPLITUDE_DEG,
            max_saccade_deg: MAX_SACCADE_AMPLITUDE_DEG,
        }
    }
}

impl ModelDomain {
    pub fn contains(&self, d: GazeDisplacement) -> bool {
        let d = d.folded();
        d.d_vergence_deg.abs() <= self.max_abs_vergence_deg + DOMAIN_SLACK
            && d.d_saccade_deg <= self.max_saccade_deg + DOMAIN_SLACK
    }

    pub fn clamp_vergence(&self, dv: f64) -> f64 {
        dv.clamp(-self.max_abs_vergence_deg, self.max_abs_vergence_deg)
    }
}

/// Whether predictions outside the training box are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DomainPolicy {
    #[default]
    Strict,
    Extrapolate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamTriple<T> {
    pub mu: T,
    pub sigma: T,
    pub tau: T,
}

impl<T> ParamTriple<T> {
    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> ParamTriple<U> {
        ParamTriple {
            mu: f(self.mu),
            sigma: f(self.sigma),
            tau: f(self.tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub n_conditions: usize,
    pub initial_loss: ParamTriple<f64>,
    pub final_loss: ParamTriple<f64>,
    pub loss_trace: ParamTriple<Vec<LossPoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeModel {
    pub version: u32,
    pub domain: ModelDomain,
    pub nets: ParamTriple<RbfNet>,
    pub training_meta: TrainingMeta,
}

struct NetFit {
    net: RbfNet,
    initial_loss: f64,
    final_loss: f64,
    trace: Vec<LossPoint>,
}

fn mse_and_grad(net: &RbfNet, xs: &[[f64; 2]], ys: &[f64]) -> (f64, [f64; N_PARAMS]) {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; N_PARAMS];
    for (x, y) in xs.iter().zip(ys) {
        let r = net.eval_at(*x) - y;
        loss += r * r;
        let g = net.grad_params_at(*x).to_unconstrained(net.eps);
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += 2.0 * r * gi;
        }
    }
    (loss / n, grad.map(|g| g / n))
}

fn initial_net(xs: &[[f64; 2]], ys: &[f64], rng: &mut ChaCha8Rng) -> RbfNet {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for x in xs {
        for k in 0..2 {
            lo[k] = lo[k].min(x[k]);
            hi[k] = hi[k].max(x[k]);
        }
    }
    let corners = [
        [lo[0], lo[1]],
        [lo[0], hi[1]],
        [hi[0], lo[1]],
        [hi[0], hi[1]],
    ];
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut centers = [[0.0; 2]; BASES];
    for (c, corner) in centers.iter_mut().zip(corners) {
        // Jitter separates coincident corners when the layout is one-dimensional.
        *c = [
            corner[0] + rng.random_range(-INIT_JITTER_DEG..INIT_JITTER_DEG),
            corner[1] + rng.random_range(-INIT_JITTER_DEG..INIT_JITTER_DEG),
        ];
    }
    RbfNet {
        centers,
        weights: [mean; BASES],
        eps: INIT_SHAPE,
    }
}

fn fit_net(
    param: &'static str,
    xs: &[[f64; 2]],
    ys: &[f64],
    init: RbfNet,
    cfg: &TrainConfig,
) -> Result<NetFit> {
    let mut theta = init.to_unconstrained();
    let (mut m, mut v, mut v_max) = ([0.0; N_PARAMS], [0.0; N_PARAMS], [0.0; N_PARAMS]);
    let (b1, b2, adam_eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let log_every = cfg.log_every.max(1);
    let mut trace = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut loss = f64::NAN;

    for it in 0..=cfg.iterations {
        let net = RbfNet::from_unconstrained(&theta);
        let (l, g) = mse_and_grad(&net, xs, ys);
        if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                param,
                iteration: it,
            });
        }
        if it == 0 {
            initial_loss = l;
        }
        loss = l;
        if it % log_every == 0 || it == cfg.iterations {
            trace.push(LossPoint {
                iteration: it,
                loss: l,
            });
        }
        if it == cfg.iterations {
            break;
        }
        match cfg.optimizer {
            Optimizer::Adam => {
                b1t *= b1;
                b2t *= b2;
                for k in 0..N_PARAMS {
                    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                    let mh = m[k] / (1.0 - b1t);
                    let vh = v[k] / (1.0 - b2t);
                    v_max[k] = f64::max(v_max[k], vh);
                    let vh = v_max[k];
                    theta[k] -= cfg.learning_rate * mh / (vh.sqrt() + adam_eps);
                }
            }
            Optimizer::Gradient => {
                for k in 0..N_PARAMS {
                    theta[k] -= cfg.learning_rate * g[k];
                }
            }
        }
    }
    Ok(NetFit {
        net: RbfNet::from_unconstrained(&theta),
        initial_loss,
        final_loss: loss,
        trace,
    })
}

/// Regresses the three ExGauss parameters of `estimates` onto RBF networks.
pub fn train(estimates: &[ConditionEstimate], cfg: &TrainConfig) -> Result<GazeModel> {
    if estimates.len() < 2 {
        return Err(Error::Underdetermined(format!(
            "{} condition estimate(s); need at least 2",
            estimates.len()
        )));
    }
    if cfg.require_2d_layout {
        let distinct = |axis: usize| {
            let mut v: Vec<i64> = estimates
                .iter()
                .map(|e| {
                    let k = condition_key(e.displacement);
                    if axis == 0 {
                        k.0
                    } else {
                        k.1
                    }
                })
                .collect();
            v.sort_unstable();
            v.dedup();
            v.len()
        };
        if estimates.len() < 5 || distinct(0) < 2 || distinct(1) < 2 {
            return Err(Error::Underdetermined(format!(
                "{} conditions spanning {} vergence and {} saccade amplitudes; need at least 5 spanning both axes",
                estimates.len(),
                distinct(0),
                distinct(1)
            )));
        }
    }
    if cfg.iterations == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Invalid(
            "training needs a positive learning rate and at least one iteration".into(),
        ));
    }

    let xs: Vec<[f64; 2]> = estimates
        .iter()
        .map(|e| e.displacement.folded().as_array())
        .collect();
    let targets = ParamTriple {
        mu: estimates.iter().map(|e| e.params.mu).collect::<Vec<_>>(),
        sigma: estimates.iter().map(|e| e.params.sigma).collect::<Vec<_>>(),
        tau: estimates.iter().map(|e| e.params.tau).collect::<Vec<_>>(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inits = ParamTriple {
        mu: initial_net(&xs, &targets.mu, &mut rng),
        sigma: initial_net(&xs, &targets.sigma, &mut rng),
        tau: initial_net(&xs, &targets.tau, &mut rng),
    };

    let fits = ParamTriple {
        mu: fit_net("mu", &xs, &targets.mu, inits.mu, cfg)?,
        sigma: fit_net("sigma", &xs, &targets.sigma, inits.sigma, cfg)?,
        tau: fit_net("tau", &xs, &targets.tau, inits.tau, cfg)?,
    };

    Ok(GazeModel {
        version: MODEL_VERSION,
        domain: ModelDomain::default(),
        training_meta: TrainingMeta {
            seed: cfg.seed,
            iterations: cfg.iterations,
            learning_rate: cfg.learning_rate,
            optimizer: cfg.optimizer,
            n_conditions: estimates.len(),
            initial_loss: ParamTriple {
                mu: fits.mu.initial_loss,
                sigma: fits.sigma.initial_loss,
                tau: fits.tau.initial_loss,
            },
            final_loss: ParamTriple {
                mu: fits.mu.final_loss,
                sigma: fits.sigma.final_loss,
                tau: fits.tau.final_loss,
            },
            loss_trace: ParamTriple {
                mu: fits.mu.trace.clone(),
                sigma: fits.sigma.trace.clone(),
                tau: fits.tau.trace.clone(),
            },
        },
        nets: fits.map(|f| f.net),
    })
}

impl GazeModel {
    pub fn from_nets(nets: ParamTriple<RbfNet>) -> Self {
        let zero = ParamTriple {
            mu: 0.0,
            sigma: 0.0,
            tau: 0.0,
        };
        GazeModel {
            version: MODEL_VERSION,
            domain: ModelDomain::default(),
            nets,
            training_meta: TrainingMeta {
                seed: 0,
                iterations: 0,
                learning_rate: 0.0,
                optimizer: Optimizer::Adam,
                n_conditions: 0,
                initial_loss: zero,
                final_loss: zero,
                loss_trace: ParamTriple {
                    mu: Vec::new(),
                    sigma: Vec::new(),
                    tau: Vec::new(),
                },
            },
        }
    }

    fn check(&self, d: GazeDisplacement, policy: DomainPolicy) -> Result<[f64; 2]> {
        if !(d.d_vergence_deg.is_finite() && d.d_saccade_deg.is_finite()) {
            return Err(Error::Domain("displacement must be finite".into()));
        }
        if policy == DomainPolicy::Strict && !self.domain.contains(d) {
            return Err(Error::OutOfDomain {
                dv_deg: d.d_vergence_deg,
                ds_deg: d.d_saccade_deg,
            });
        }
        Ok(d.folded().as_array())
    }

    pub fn predict(&self, d: GazeDisplacement) -> Result<ExGaussParams> {
        self.predict_with(d, DomainPolicy::Strict)
    }

    pub fn predict_with(&self, d: GazeDisplacement, policy: DomainPolicy) -> Result<ExGaussParams> {
        let x = self.check(d, policy)?;
        Ok(self.predict_at(x))
    }

    /// Prediction at folded coordinates, without the domain check.
    pub fn predict_at(&self, x: [f64; 2]) -> ExGaussParams {
        ExGaussParams {
            mu: self.nets.mu.eval_at(x),
            sigma: self.nets.sigma.eval_at(x).max(SCALE_FLOOR_S),
            tau: self.nets.tau.eval_at(x).max(SCALE_FLOOR_S),
        }
    }

    /// `E[T] = mu + tau` at `d`.
    pub fn expected_offset(&self, d: GazeDisplacement) -> Result<f64> {
        let x = self.check(d, DomainPolicy::Strict)?;
        Ok(self.expected_offset_at(x))
    }

    pub fn expected_offset_at(&self, x: [f64; 2]) -> f64 {
        self.nets.mu.eval_at(x) + self.nets.tau.eval_at(x).max(SCALE_FLOOR_S)
    }

    /// Gradient of [`Self::expected_offset`] with respect to `(Δv, Δs)`.
    pub fn expected_offset_grad(&self, d: GazeDisplacement) -> Result<[f64; 2]> {
        let x = self.check(d, DomainPolicy::Strict)?;
        let mut g = self.expected_offset_grad_at(x);
        if d.d_saccade_deg < 0.0 {
            g[1] = -g[1];
        }
        Ok(g)
    }

    /// Gradient at folded coordinates.
    pub fn expected_offset_grad_at(&self, x: [f64; 2]) -> [f64; 2] {
        let gm = self.nets.mu.grad_input_at(x);
        if self.nets.tau.eval_at(x) > SCALE_FLOOR_S {
            let gt = self.nets.tau.grad_input_at(x);
            [gm[0] + gt[0], gm[1] + gt[1]]
        } else {
            gm
        }
    }

    /// Saccade amplitude in `[0°, 12°]` minimizing expected offset time at
    /// vergence amplitude `dv`: a 0.01° grid scan refined by projected
    /// gradient descent around the best grid point.
    pub fn optimal_saccade(&self, dv: f64) -> Result<f64> {
        self.check(GazeDisplacement::new(dv, 0.0), DomainPolicy::Strict)?;
        let hi = self.domain.max_saccade_deg;
        let steps = (hi / 0.01).round() as usize;
        let f = |s: f64| self.expected_offset_at([dv, s]);
        let (mut best_s, mut best) = (0.0, f(0.0));
        for i in 1..=steps {
            let s = (i as f64 * 0.01).min(hi);
            let v = f(s);
            if v < best {
                best = v;
                best_s = s;
            }
        }
        let (lo_b, hi_b) = ((best_s - 0.01).max(0.0), (best_s + 0.01).min(hi));
        let mut s = best_s;
        let mut step = 0.01;
        for _ in 0..200 {
            let g = self.expected_offset_grad_at([dv, s])[1];
            if g == 0.0 {
                break;
            }
            let mut moved = false;
            while step > 1e-12 {
                let cand = (s - step * g.signum()).clamp(lo_b, hi_b);
                let fc = f(cand);
                if fc < best {
                    best = fc;
                    s = cand;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|message| Error::Schema {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| format!("not valid JSON: {e}"))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => {
                return Err(format!(
                    "model version {v} is not supported (expected {MODEL_VERSION})"
                ))
            }
            None => return Err("missing integer `version` field".into()),
        }
        let model: GazeModel =
            serde_json::from_value(value).map_err(|e| format!("malformed model: {e}"))?;
        for net in [&model.nets.mu, &model.nets.sigma, &model.nets.tau] {
            RbfNet::new(net.centers, net.weights, net.eps).map_err(|e| e.to_string())?;
        }
        Ok(model)
    }
}

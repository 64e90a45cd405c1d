//! Applications of a trained model: gaze overhead in a game from its fixation
//! depth distribution, and the projection depth of a head-up display that
//! minimizes expected gaze offset time for a scene.

mod depth_maps;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{vergence_depth_slope, vergence_from_depth, ObserverGeometry};
use crate::model::{GazeModel, MAX_SACCADE_AMPLITUDE_DEG};
use crate::{Error, Result};

pub use depth_maps::{
    pool_depths, read_depth_f32, read_depth_png, DepthMapManifest, LogBinning, PooledDepths,
};

/// Saccade amplitudes averaged over in both applications.
pub const DEFAULT_SACCADE_RANGE_DEG: (f64, f64) = (4.0, 12.0);
pub const SACCADE_STEP_DEG: f64 = 0.1;
pub const MASS_TOLERANCE: f64 = 1e-9;
/// Starting depths for [`optimize_hud_depth`], meters.
pub const HUD_STARTS_M: [f64; 5] = [0.5, 1.0, 2.0, 5.0, 10.0];
pub const HUD_DEPTH_BOUNDS_M: (f64, f64) = (0.1, 1000.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistogramDomain {
    VergenceDeg,
    DepthM,
}

/// Probability mass over depth or vergence bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthHistogram {
    domain: HistogramDomain,
    bin_centers: Vec<f64>,
    mass: Vec<f64>,
}

impl DepthHistogram {
    /// `mass` must already sum to one.
    pub fn new(domain: HistogramDomain, bin_centers: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        Self::check_shape(domain, &bin_centers, &mass)?;
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Unnormalized(total));
        }
        Ok(Self {
            domain,
            bin_centers,
            mass,
        })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(
        domain: HistogramDomain,
        bin_centers: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        Self::check_shape(domain, &bin_centers, &weights)?;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyHistogram);
        }
        let mass = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            domain,
            bin_centers,
            mass,
        })
    }

    pub fn point_mass(domain: HistogramDomain, center: f64) -> Result<Self> {
        Self::new(domain, vec![center], vec![1.0])
    }

    fn check_shape(domain: HistogramDomain, centers: &[f64], mass: &[f64]) -> Result<()> {
        if centers.is_empty() {
            return Err(Error::EmptyHistogram);
        }
        if centers.len() != mass.len() {
            return Err(Error::Invalid(format!(
                "{} bin centers but {} masses",
                centers.len(),
                mass.len()
            )));
        }
        if let Some(m) = mass.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::Invalid(format!(
                "bin mass {m} is not a non-negative number"
            )));
        }
        let bad_center = |c: &f64| match domain {
            HistogramDomain::DepthM => !(c.is_finite() && *c > 0.0),
            HistogramDomain::VergenceDeg => !(c.is_finite() && *c >= 0.0),
        };
        if let Some(c) = centers.iter().find(|c| bad_center(c)) {
            return Err(Error::Invalid(format!(
                "bin center {c} invalid for {domain:?}"
            )));
        }
        Ok(())
    }

    pub fn domain(&self) -> HistogramDomain {
        self.domain
    }

    pub fn bin_centers(&self) -> &[f64] {
        &self.bin_centers
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Same histogram with depth bins converted to vergence angles.
    pub fn to_vergence(&self, geom: &ObserverGeometry) -> Result<Self> {
        match self.domain {
            HistogramDomain::VergenceDeg => Ok(self.clone()),
            HistogramDomain::DepthM => {
                let mut pairs = self
                    .bin_centers
                    .iter()
                    .zip(&self.mass)
                    .map(|(&d, &m)| Ok((vergence_from_depth(d, geom)?, m)))
                    .collect::<Result<Vec<_>>>()?;
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let (centers, mass) = pairs.into_iter().unzip();
                Ok(Self {
                    domain: HistogramDomain::VergenceDeg,
                    bin_centers: centers,
                    mass,
                })
            }
        }
    }

    /// Drops vergence bins above `max_vergence_deg` and renormalizes.
    pub fn exclude_above(&self, max_vergence_deg: f64) -> Result<Exclusion> {
        if self.domain != HistogramDomain::VergenceDeg {
            return Err(Error::Invalid(
                "exclusion needs a vergence-domain histogram".into(),
            ));
        }
        let (kept, dropped): (Vec<_>, Vec<_>) = self
            .bin_centers
            .iter()
            .zip(&self.mass)
            .partition(|(c, _)| **c <= max_vergence_deg);
        let excluded_mass = dropped.iter().map(|(_, m)| **m).sum();
        let (centers, weights) = kept.into_iter().map(|(c, m)| (*c, *m)).unzip();
        Ok(Exclusion {
            histogram: Self::from_weights(HistogramDomain::VergenceDeg, centers, weights)?,
            excluded_mass,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub histogram: DepthHistogram,
    /// Fraction of the original mass that was dropped.
    pub excluded_mass: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HistogramRow {
    bin_center: f64,
    mass: f64,
}

/// Reads a `bin_center,mass` table. Masses are renormalized, so raw counts
/// are accepted too.
pub fn read_histogram_csv(
    path: impl AsRef<Path>,
    domain: HistogramDomain,
) -> Result<DepthHistogram> {
    let path = path.as_ref();
    let schema = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    for col in ["bin_center", "mass"] {
        if !headers.iter().any(|h| h == col) {
            return Err(schema(format!("missing column: {col}")));
        }
    }
    let rows: Vec<HistogramRow> = rdr
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| schema(format!("row {}: {e}", i + 1))))
        .collect::<Result<_>>()?;
    let (centers, weights) = rows.into_iter().map(|r| (r.bin_center, r.mass)).unzip();
    DepthHistogram::from_weights(domain, centers, weights).map_err(|e| schema(e.to_string()))
}

pub fn write_histogram_csv(path: impl AsRef<Path>, hist: &DepthHistogram) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(file);
    for (&bin_center, &mass) in hist.bin_centers.iter().zip(&hist.mass) {
        wtr.serialize(HistogramRow { bin_center, mass })?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Discrete distribution of vergence changes between two independent
/// fixations. Deltas are sorted and the mass is symmetric about zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementPdf {
    pub deltas_deg: Vec<f64>,
    pub mass: Vec<f64>,
}

impl MovementPdf {
    pub fn max_abs_delta(&self) -> f64 {
        self.deltas_deg
            .iter()
            .zip(&self.mass)
            .filter(|(_, m)| **m > 0.0)
            .map(|(d, _)| d.abs())
            .fold(0.0, f64::max)
    }
}

/// Deltas closer than this are merged into one support point.
const DELTA_RESOLUTION_DEG: f64 = 1e-9;

/// Autocorrelation of a vergence histogram: `mass(Δ) = Σ_o h(o + Δ)·h(o)`.
pub fn movement_pdf(h_f: &DepthHistogram) -> Result<MovementPdf> {
    if h_f.domain != HistogramDomain::VergenceDeg {
        return Err(Error::Invalid(
            "movement_pdf needs a vergence-domain histogram".into(),
        ));
    }
    let total: f64 = h_f.mass.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::Unnormalized(total));
    }
    // Keyed by the non-negative delta; each unordered pair feeds both signs.
    let mut acc: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    let (c, h) = (&h_f.bin_centers, &h_f.mass);
    for i in 0..c.len() {
        for j in i..c.len() {
            let p = h[i] * h[j];
            let delta = (c[j] - c[i]).abs();
            let key = (delta / DELTA_RESOLUTION_DEG).round() as i64;
            let weight = if key == 0 {
                p * if i == j { 1.0 } else { 2.0 }
            } else {
                p
            };
            let e = acc.entry(key).or_insert((delta, 0.0));
            e.1 += weight;
        }
    }
    let mut deltas = Vec::with_capacity(2 * acc.len());
    let mut mass = Vec::with_capacity(2 * acc.len());
    for (&key, &(d, m)) in acc.iter().rev() {
        if key > 0 {
            deltas.push(-d);
            mass.push(m);
        }
    }
    for (&key, &(d, m)) in &acc {
        deltas.push(if key == 0 { 0.0 } else { d });
        mass.push(m);
    }
    Ok(MovementPdf {
        deltas_deg: deltas,
        mass,
    })
}

/// What to do with vergence changes outside the model domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportPolicy {
    /// Reject with [`Error::SupportViolation`].
    #[default]
    Strict,
    /// Evaluate at the nearest domain boundary.
    Clamp,
}

/// Trapezoid nodes and weights over `[lo, hi]`, normalized to sum to one.
fn saccade_rule(range: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = range;
    if !(0.0 <= lo && lo < hi && hi <= MAX_SACCADE_AMPLITUDE_DEG) {
        return Err(Error::Domain(format!(
            "saccade range [{lo}°, {hi}°] must lie within [0°, {MAX_SACCADE_AMPLITUDE_DEG}°]"
        )));
    }
    let n = ((hi - lo) / SACCADE_STEP_DEG - 1e-9).ceil().max(1.0) as usize;
    let h = (hi - lo) / n as f64;
    Ok((0..=n)
        .map(|k| {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            (lo + h * k as f64, w / n as f64)
        })
        .collect())
}

/// Saccade-averaged expected offset and its derivative in `Δv`.
fn saccade_average(model: &GazeModel, dv: f64, rule: &[(f64, f64)]) -> (f64, f64) {
    rule.iter().fold((0.0, 0.0), |(e, g), &(s, w)| {
        (
            e + w * model.expected_offset_at([dv, s]),
            g + w * model.expected_offset_grad_at([dv, s])[0],
        )
    })
}

/// Mean expected offset with `Δv ~ h_m` and `Δs` uniform over
/// `saccade_range_deg`.
pub fn game_mean_offset(
    model: &GazeModel,
    h_m: &MovementPdf,
    saccade_range_deg: (f64, f64),
    policy: SupportPolicy,
) -> Result<f64> {
    let total: f64 = h_m.mass.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Unnormalized(total));
    }
    let rule = saccade_rule(saccade_range_deg)?;
    let limit = model.domain.max_abs_vergence_deg;
    let widest = h_m.max_abs_delta();
    if policy == SupportPolicy::Strict && widest > limit + 1e-9 {
        return Err(Error::SupportViolation(widest));
    }
    Ok(h_m
        .deltas_deg
        .iter()
        .zip(&h_m.mass)
        .filter(|(_, m)| **m > 0.0)
        .map(|(&dv, &m)| m * saccade_average(model, model.domain.clamp_vergence(dv), &rule).0)
        .sum())
}

/// Game overhead from a fixation histogram, by both readings of the domain
/// limit: fixations beyond the vergence limit dropped, or all kept with
/// movements clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameReport {
    pub mean_offset_s: f64,
    pub baseline_s: f64,
    pub overhead_s: f64,
    pub excluded_mass: f64,
    pub clamped_mean_offset_s: f64,
}

pub fn game_report(
    model: &GazeModel,
    fixations: &DepthHistogram,
    geom: &ObserverGeometry,
    saccade_range_deg: (f64, f64),
) -> Result<GameReport> {
    let h_f = fixations.to_vergence(geom)?;
    let limit = model.domain.max_abs_vergence_deg;
    let exclusion = h_f.exclude_above(limit)?;
    let kept = movement_pdf(&exclusion.histogram)?;
    let mean = game_mean_offset(model, &kept, saccade_range_deg, SupportPolicy::Strict)?;
    let all = movement_pdf(&h_f)?;
    let clamped = game_mean_offset(model, &all, saccade_range_deg, SupportPolicy::Clamp)?;
    let rule = saccade_rule(saccade_range_deg)?;
    let baseline = saccade_average(model, 0.0, &rule).0;
    Ok(GameReport {
        mean_offset_s: mean,
        baseline_s: baseline,
        overhead_s: mean - baseline,
        excluded_mass: exclusion.excluded_mass,
        clamped_mean_offset_s: clamped,
    })
}

/// Precomputed scene terms for the HUD objective.
struct HudScene {
    /// `(target vergence, mass)`.
    targets: Vec<(f64, f64)>,
    rule: Vec<(f64, f64)>,
}

impl HudScene {
    fn new(scene: &DepthHistogram, geom: &ObserverGeometry, range: (f64, f64)) -> Result<Self> {
        if scene.domain != HistogramDomain::DepthM {
            return Err(Error::Invalid(
                "HUD scene must be a depth-domain histogram".into(),
            ));
        }
        let targets = scene
            .bin_centers
            .iter()
            .zip(&scene.mass)
            .filter(|(_, m)| **m > 0.0)
            .map(|(&d, &m)| Ok((vergence_from_depth(d, geom)?, m)))
            .collect::<Result<_>>()?;
        Ok(Self {
            targets,
            rule: saccade_rule(range)?,
        })
    }

    /// Objective and derivative with respect to HUD depth.
    fn eval(&self, model: &GazeModel, d_hud: f64, geom: &ObserverGeometry) -> Result<(f64, f64)> {
        let v_hud = vergence_from_depth(d_hud, geom)?;
        let dv_dd = -vergence_depth_slope(d_hud, geom);
        let limit = model.domain.max_abs_vergence_deg;
        let (mut e, mut g) = (0.0, 0.0);
        for &(v_t, m) in &self.targets {
            let raw = v_t - v_hud;
            let (avg, slope) = saccade_average(model, model.domain.clamp_vergence(raw), &self.rule);
            e += m * avg;
            if raw.abs() < limit {
                g += m * slope * dv_dd;
            }
        }
        Ok((e, g))
    }
}

/// Expected offset for gaze moving from a HUD at `d_hud_m` to scene targets,
/// with saccades uniform over `saccade_range_deg`. Vergence changes beyond
/// the domain are clamped.
pub fn hud_expected_offset(
    model: &GazeModel,
    scene: &DepthHistogram,
    d_hud_m: f64,
    geom: &ObserverGeometry,
    saccade_range_deg: (f64, f64),
) -> Result<f64> {
    Ok(HudScene::new(scene, geom, saccade_range_deg)?
        .eval(model, d_hud_m, geom)?
        .0)
}

/// Derivative of [`hud_expected_offset`] with respect to `d_hud_m`; zero
/// contribution from targets whose vergence change is clamped.
pub fn hud_expected_offset_grad(
    model: &GazeModel,
    scene: &DepthHistogram,
    d_hud_m: f64,
    geom: &ObserverGeometry,
    saccade_range_deg: (f64, f64),
) -> Result<f64> {
    Ok(HudScene::new(scene, geom, saccade_range_deg)?
        .eval(model, d_hud_m, geom)?
        .1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HudOptimum {
    pub depth_m: f64,
    pub objective_s: f64,
    pub start_m: f64,
    pub iterations: usize,
}

const HUD_MAX_ITERS: usize = 500;
/// Log-spaced scan used to add one more start beside [`HUD_STARTS_M`].
const HUD_SCAN_POINTS: usize = 200;

/// Minimizes [`hud_expected_offset`] over HUD depth by projected gradient
/// descent in log depth with backtracking, from each of [`HUD_STARTS_M`]
/// and from the best point of a coarse log-depth scan.
pub fn optimize_hud_depth(
    model: &GazeModel,
    scene: &DepthHistogram,
    geom: &ObserverGeometry,
    saccade_range_deg: (f64, f64),
) -> Result<HudOptimum> {
    let hud = HudScene::new(scene, geom, saccade_range_deg)?;
    let (lo, hi) = (HUD_DEPTH_BOUNDS_M.0.ln(), HUD_DEPTH_BOUNDS_M.1.ln());
    // Objective and gradient in u = ln d.
    let f = |u: f64| -> Result<(f64, f64)> {
        let d = u.exp();
        let (e, g) = hud.eval(model, d, geom)?;
        Ok((e, g * d))
    };

    let mut scan_best = (f64::INFINITY, lo);
    for k in 0..HUD_SCAN_POINTS {
        let u = lo + (hi - lo) * k as f64 / (HUD_SCAN_POINTS - 1) as f64;
        let e = f(u)?.0;
        if e < scan_best.0 {
            scan_best = (e, u);
        }
    }
    let starts = HUD_STARTS_M
        .iter()
        .map(|d| d.ln())
        .chain(std::iter::once(scan_best.1));

    let mut best: Option<HudOptimum> = None;
    for u0 in starts {
        let (mut u, mut step) = (u0, 0.25);
        let (mut e, mut g) = f(u)?;
        let mut iterations = 0;
        while iterations < HUD_MAX_ITERS && g != 0.0 {
            iterations += 1;
            let mut accepted = false;
            while step > 1e-10 {
                let trial = (u - step * g.signum()).clamp(lo, hi);
                let (te, tg) = f(trial)?;
                if te < e - 1e-4 * (u - trial).abs() * g.abs() {
                    (u, e, g) = (trial, te, tg);
                    step = (step * 2.0).min(1.0);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let cand = HudOptimum {
            depth_m: u.exp(),
            objective_s: e,
            start_m: u0.exp(),
            iterations,
        };
        if best.is_none_or(|b| cand.objective_s < b.objective_s) {
            best = Some(cand);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Objective sampled at the given depths, for plotting.
pub fn hud_objective_curve(
    model: &GazeModel,
    scene: &DepthHistogram,
    geom: &ObserverGeometry,
    saccade_range_deg: (f64, f64),
    depths_m: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let hud = HudScene::new(scene, geom, saccade_range_deg)?;
    depths_m
        .iter()
        .map(|&d| Ok((d, hud.eval(model, d, geom)?.0)))
        .collect()
}

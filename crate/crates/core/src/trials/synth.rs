//! Synthetic traces and datasets with known ground truth.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    landing_index, smooth, DetectionThresholds, GazeTrace, RejectReason, TrialOutcome, TrialRecord,
    TrialRow, VALID_OFFSET_S,
};
use crate::exgauss::ExGaussParams;
use crate::geometry::{eyes_from_gaze, GazeDisplacement, GazePoint};
use crate::model::{condition_key, GazeModel};
use crate::{Error, Result};

/// Vergence of the near starting fixation (divergent moves start here).
pub const NEAR_ORIGIN_VERGENCE_DEG: f64 = 9.4;
/// Vergence of the far starting fixation (convergent moves start here).
pub const FAR_ORIGIN_VERGENCE_DEG: f64 = 1.0;

const CALIBRATION_STEPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceSynthConfig {
    pub sample_rate_hz: f64,
    /// Duration of the eye rotation itself, seconds.
    pub movement_s: f64,
    /// Fixation kept on the target after landing, seconds.
    pub hold_s: f64,
}

impl Default for TraceSynthConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: super::NOMINAL_SAMPLE_RATE_HZ,
            movement_s: 0.08,
            hold_s: 0.5,
        }
    }
}

fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

struct Render {
    rate: f64,
    n: usize,
    duration: f64,
    from: (f64, f64),
    to: (f64, f64),
}

impl Render {
    fn channels(&self, arrival: f64) -> (Vec<f64>, Vec<f64>) {
        let start = arrival - self.duration;
        (0..self.n)
            .map(|i| {
                let p = min_jerk((i as f64 / self.rate - start) / self.duration);
                (
                    self.from.0 + (self.to.0 - self.from.0) * p,
                    self.from.1 + (self.to.1 - self.from.1) * p,
                )
            })
            .unzip()
    }

    fn landing(&self, arrival: f64, target: GazePoint) -> usize {
        let (l, r) = self.channels(arrival);
        let trace = GazeTrace {
            sample_rate_hz: self.rate,
            left_deg: l,
            right_deg: r,
        };
        let smoothed = smooth(&trace).expect("rate checked by caller");
        landing_index(&smoothed, target, DetectionThresholds::default()).unwrap_or(usize::MAX)
    }

    /// Earliest arrival (within `[lo, hi]`) whose noise-free landing sample is
    /// at least `k`.
    fn arrival_edge(&self, k: usize, lo: f64, hi: f64, target: GazePoint) -> f64 {
        if self.landing(lo, target) >= k {
            return lo;
        }
        if self.landing(hi, target) < k {
            return hi;
        }
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..CALIBRATION_STEPS {
            let mid = 0.5 * (lo + hi);
            if self.landing(mid, target) >= k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// Trace with the default rate and movement shape.
pub fn synthesize_trace(
    true_offset_s: f64,
    movement: GazeDisplacement,
    origin: GazePoint,
    noise_deg: f64,
    seed: u64,
) -> Result<GazeTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthesize_trace_with(
        &TraceSynthConfig::default(),
        true_offset_s,
        movement,
        origin,
        noise_deg,
        &mut rng,
    )
}

/// Fixation on `origin`, a minimum-jerk rotation of both eyes to
/// `origin + movement`, then a hold, plus white Gaussian noise of standard
/// deviation `noise_deg` on each eye.
///
/// The arrival time is calibrated against the noise-free detector so that the
/// smoothed trace lands on the last sample at or before `true_offset_s`.
pub fn synthesize_trace_with<R: Rng + ?Sized>(
    cfg: &TraceSynthConfig,
    true_offset_s: f64,
    movement: GazeDisplacement,
    origin: GazePoint,
    noise_deg: f64,
    rng: &mut R,
) -> Result<GazeTrace> {
    if !(true_offset_s > 0.0 && true_offset_s < VALID_OFFSET_S.1) {
        return Err(Error::Invalid(format!(
            "true offset {true_offset_s} s outside (0, {}) s",
            VALID_OFFSET_S.1
        )));
    }
    if !(noise_deg.is_finite() && noise_deg >= 0.0) {
        return Err(Error::Invalid(format!(
            "noise {noise_deg}° must be non-negative"
        )));
    }
    if cfg.sample_rate_hz <= 2.0 * super::SMOOTHING_CUTOFF_HZ {
        return Err(Error::SampleRate {
            rate_hz: cfg.sample_rate_hz,
            cutoff_hz: super::SMOOTHING_CUTOFF_HZ,
        });
    }
    if !(cfg.movement_s > 0.0 && cfg.hold_s > 0.0) {
        return Err(Error::Invalid(
            "movement and hold durations must be positive".into(),
        ));
    }
    let target = origin.offset_by(movement)?;
    let rate = cfg.sample_rate_hz;
    let render = Render {
        rate,
        n: ((true_offset_s + cfg.hold_s) * rate).ceil() as usize + 1,
        duration: cfg.movement_s.min(0.9 * true_offset_s),
        from: eyes_from_gaze(origin),
        to: eyes_from_gaze(target),
    };

    let k = (true_offset_s * rate + 1e-9).floor() as usize;
    let (lo, hi) = (true_offset_s - 0.2, true_offset_s + 0.1);
    let arrival =
        0.5 * (render.arrival_edge(k, lo, hi, target) + render.arrival_edge(k + 1, lo, hi, target));

    let (mut left, mut right) = render.channels(arrival);
    if noise_deg > 0.0 {
        let normal = Normal::new(0.0, noise_deg).expect("finite noise");
        for (l, r) in left.iter_mut().zip(right.iter_mut()) {
            *l += normal.sample(rng);
            *r += normal.sample(rng);
        }
    }
    GazeTrace::new(rate, left, right)
}

/// One cell of the study design: a displacement and where it starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyCondition {
    pub displacement: GazeDisplacement,
    pub origin: GazePoint,
}

/// The 22 study conditions: four pure vergence moves, three saccades at
/// both depths, and every vergence/saccade combination. Saccade amplitudes
/// are unsigned here; the side is randomized per trial.
pub fn study_conditions() -> Vec<StudyCondition> {
    let near = GazePoint::new(NEAR_ORIGIN_VERGENCE_DEG, 0.0).expect("valid");
    let far = GazePoint::new(FAR_ORIGIN_VERGENCE_DEG, 0.0).expect("valid");
    let origin_for = |dv: f64| if dv < 0.0 { near } else { far };
    let cond = |dv: f64, ds: f64, origin: GazePoint| StudyCondition {
        displacement: GazeDisplacement::new(dv, ds),
        origin,
    };
    let vergences = [-8.4, -4.2, 4.2, 8.4];
    let saccades = [4.0, 8.0, 12.0];
    let mut out = Vec::with_capacity(22);
    out.extend(vergences.iter().map(|&dv| cond(dv, 0.0, origin_for(dv))));
    for origin in [near, far] {
        out.extend(saccades.iter().map(|&ds| cond(0.0, ds, origin)));
    }
    for &dv in &vergences {
        out.extend(saccades.iter().map(|&ds| cond(dv, ds, origin_for(dv))));
    }
    out
}

/// The 19 distinct displacements left after folding the saccade side.
pub fn folded_study_grid() -> Vec<GazeDisplacement> {
    let mut seen = BTreeMap::new();
    for c in study_conditions() {
        seen.entry(condition_key(c.displacement))
            .or_insert(c.displacement);
    }
    seen.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedGroup {
    pub displacement: GazeDisplacement,
    pub params: ExGaussParams,
}

/// Ground-truth offset-time distributions per folded displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSurface {
    pub groups: Vec<PlantedGroup>,
}

impl PlantedSurface {
    /// Means (seconds) shaped like human data: saccades fast and flat,
    /// vergence slow and growing with amplitude, divergent combined moves
    /// fastest at mid saccade amplitude.
    pub fn study_shaped() -> Self {
        #[rustfmt::skip]
        let means: [(f64, f64, f64); 19] = [
            (0.0, 4.0, 0.38), (0.0, 8.0, 0.36), (0.0, 12.0, 0.38),
            (-8.4, 0.0, 0.66), (-4.2, 0.0, 0.54), (4.2, 0.0, 0.53), (8.4, 0.0, 0.64),
            (-8.4, 4.0, 0.55), (-8.4, 8.0, 0.49), (-8.4, 12.0, 0.60),
            (-4.2, 4.0, 0.48), (-4.2, 8.0, 0.45), (-4.2, 12.0, 0.50),
            (4.2, 4.0, 0.47), (4.2, 8.0, 0.44), (4.2, 12.0, 0.42),
            (8.4, 4.0, 0.53), (8.4, 8.0, 0.48), (8.4, 12.0, 0.45),
        ];
        let groups = means
            .iter()
            .map(|&(dv, ds, mean)| {
                let (sigma, tau) = match (dv == 0.0, ds == 0.0) {
                    (true, _) => (0.06, 0.10),
                    (_, true) => (0.09, 0.12),
                    _ => (0.10, 0.12),
                };
                PlantedGroup {
                    displacement: GazeDisplacement::new(dv, ds),
                    params: ExGaussParams::new(mean - tau, sigma, tau).expect("valid"),
                }
            })
            .collect();
        Self { groups }
    }

    /// Takes the ground truth from a model evaluated on the folded study
    /// grid, so the generator lies inside the model class.
    pub fn from_model(model: &GazeModel) -> Result<Self> {
        let groups = folded_study_grid()
            .into_iter()
            .map(|d| {
                Ok(PlantedGroup {
                    displacement: d,
                    params: model.predict(d)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { groups })
    }

    pub fn params_for(&self, d: GazeDisplacement) -> Option<ExGaussParams> {
        let key = condition_key(d);
        self.groups
            .iter()
            .find(|g| condition_key(g.displacement) == key)
            .map(|g| g.params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub subjects: u32,
    pub trials_per_condition: usize,
    pub noise_deg: f64,
    pub seed: u64,
    pub trace: TraceSynthConfig,
    /// Keep the raw traces of accepted trials alongside the rows.
    pub keep_traces: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            subjects: 1,
            trials_per_condition: 72,
            noise_deg: 0.1,
            seed: 0,
            trace: TraceSynthConfig::default(),
            keep_traces: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub too_fast: usize,
    pub too_slow: usize,
    pub no_landing: usize,
}

impl RejectionCounts {
    fn add(&mut self, reason: RejectReason) {
        match reason {
            RejectReason::TooFast => self.too_fast += 1,
            RejectReason::TooSlow => self.too_slow += 1,
            RejectReason::NoLanding => self.no_landing += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.too_fast + self.too_slow + self.no_landing
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedDataset {
    /// Accepted trials only; rejected trials were repeated.
    pub rows: Vec<TrialRow>,
    /// Generator offset for each row.
    pub true_offsets: Vec<f64>,
    /// Raw traces for each row when requested, else empty.
    pub traces: Vec<GazeTrace>,
    pub rejections: RejectionCounts,
    pub rejections_by_condition: BTreeMap<String, RejectionCounts>,
}

struct Batch {
    subject: u32,
    condition: StudyCondition,
    trials: Vec<(f64, f64, f64, Option<GazeTrace>)>,
    rejections: RejectionCounts,
}

/// Runs every study condition through trace synthesis, smoothing, detection
/// and validation until each has `trials_per_condition` accepted trials per
/// subject.
pub fn synthesize_dataset(
    cfg: &DatasetConfig,
    surface: &PlantedSurface,
) -> Result<SynthesizedDataset> {
    if cfg.subjects == 0 || cfg.trials_per_condition == 0 {
        return Err(Error::Invalid(
            "need at least one subject and one trial per condition".into(),
        ));
    }
    let conditions = study_conditions();
    for c in &conditions {
        if surface.params_for(c.displacement).is_none() {
            return Err(Error::Invalid(format!(
                "planted surface has no distribution for {}",
                crate::model::describe(c.displacement)
            )));
        }
    }
    let jobs: Vec<(u32, usize)> = (0..cfg.subjects)
        .flat_map(|s| (0..conditions.len()).map(move |c| (s, c)))
        .collect();

    let batches: Vec<Batch> = jobs
        .par_iter()
        .enumerate()
        .map(|(job, &(subject, ci))| {
            let condition = conditions[ci];
            let params = surface.params_for(condition.displacement).expect("checked");
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(job as u64);
            let mut batch = Batch {
                subject,
                condition,
                trials: Vec::with_capacity(cfg.trials_per_condition),
                rejections: RejectionCounts::default(),
            };
            let max_attempts = 100 * cfg.trials_per_condition;
            let mut attempts = 0;
            while batch.trials.len() < cfg.trials_per_condition {
                attempts += 1;
                if attempts > max_attempts {
                    return Err(Error::Invalid(format!(
                        "condition {} rejected {} of {} attempts",
                        crate::model::describe(condition.displacement),
                        batch.rejections.total(),
                        max_attempts
                    )));
                }
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let truth = params.draw(&mut rng);
                let mut trace_rng = ChaCha8Rng::seed_from_u64(rng.random());
                if truth <= 0.0 {
                    batch.rejections.add(RejectReason::TooFast);
                    continue;
                }
                if truth >= VALID_OFFSET_S.1 {
                    batch.rejections.add(RejectReason::TooSlow);
                    continue;
                }
                let movement = GazeDisplacement::new(
                    condition.displacement.d_vergence_deg,
                    side * condition.displacement.d_saccade_deg,
                );
                let raw = synthesize_trace_with(
                    &cfg.trace,
                    truth,
                    movement,
                    condition.origin,
                    cfg.noise_deg,
                    &mut trace_rng,
                )?;
                let target = condition.origin.offset_by(movement)?;
                let record = TrialRecord::process(movement, target, raw)?;
                match record.outcome {
                    TrialOutcome::Accepted(t) => batch.trials.push((
                        movement.d_saccade_deg,
                        t,
                        truth,
                        cfg.keep_traces.then_some(record.trace),
                    )),
                    TrialOutcome::Rejected(reason) => batch.rejections.add(reason),
                }
            }
            Ok(batch)
        })
        .collect::<Result<_>>()?;

    let mut out = SynthesizedDataset {
        rows: Vec::with_capacity(jobs.len() * cfg.trials_per_condition),
        true_offsets: Vec::new(),
        traces: Vec::new(),
        rejections: RejectionCounts::default(),
        rejections_by_condition: BTreeMap::new(),
    };
    for batch in batches {
        let name = crate::model::describe(batch.condition.displacement);
        let entry = out.rejections_by_condition.entry(name).or_default();
        entry.too_fast += batch.rejections.too_fast;
        entry.too_slow += batch.rejections.too_slow;
        entry.no_landing += batch.rejections.no_landing;
        out.rejections.too_fast += batch.rejections.too_fast;
        out.rejections.too_slow += batch.rejections.too_slow;
        out.rejections.no_landing += batch.rejections.no_landing;
        for (ds, offset, truth, trace) in batch.trials {
            out.rows.push(TrialRow {
                trial_id: out.rows.len() as u64 + 1,
                subject: Some(batch.subject + 1),
                dv_deg: batch.condition.displacement.d_vergence_deg,
                ds_deg: ds,
                accepted: true,
                offset_s: Some(offset),
                trace_file: None,
            });
            out.true_offsets.push(truth);
            out.traces.extend(trace);
        }
    }
    Ok(out)
}

//! Binocular gaze traces: smoothing, landing detection and trial validation.
//!
//! A trace starts at stimulus onset. The offset time of a trial is the first
//! sample at which both eyes are slow and on target.

mod io;
mod synth;

pub use io::{read_trace_csv, read_trials, write_trace_csv, write_trials, TrialRow};
pub use synth::{
    folded_study_grid, study_conditions, synthesize_dataset, synthesize_trace,
    synthesize_trace_with, DatasetConfig, PlantedGroup, PlantedSurface, RejectionCounts,
    StudyCondition, SynthesizedDataset, TraceSynthConfig, FAR_ORIGIN_VERGENCE_DEG,
    NEAR_ORIGIN_VERGENCE_DEG,
};

use serde::{Deserialize, Serialize};

use crate::geometry::{eyes_from_gaze, GazeDisplacement, GazePoint};
use crate::{Error, Result};

pub const NOMINAL_SAMPLE_RATE_HZ: f64 = 200.0;
pub const SMOOTHING_CUTOFF_HZ: f64 = 25.0;
pub const SPEED_THRESHOLD_DEG_S: f64 = 5.0;
pub const LANDING_WINDOW_DEG: f64 = 1.0;
/// Accepted offset times, seconds (inclusive).
pub const VALID_OFFSET_S: (f64, f64) = (0.1, 1.3);

#[derive(Debug, Clone, PartialEq)]
pub struct GazeTrace {
    sample_rate_hz: f64,
    left_deg: Vec<f64>,
    right_deg: Vec<f64>,
}

impl GazeTrace {
    pub fn new(sample_rate_hz: f64, left_deg: Vec<f64>, right_deg: Vec<f64>) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Invalid(format!(
                "sample rate {sample_rate_hz} Hz must be positive"
            )));
        }
        if left_deg.len() != right_deg.len() {
            return Err(Error::Invalid(format!(
                "channel lengths differ: left {} vs right {}",
                left_deg.len(),
                right_deg.len()
            )));
        }
        if left_deg.iter().chain(&right_deg).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("trace contains non-finite samples".into()));
        }
        Ok(Self {
            sample_rate_hz,
            left_deg,
            right_deg,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn left_deg(&self) -> &[f64] {
        &self.left_deg
    }

    pub fn right_deg(&self) -> &[f64] {
        &self.right_deg
    }

    pub fn len(&self) -> usize {
        self.left_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left_deg.is_empty()
    }

    pub fn time_s(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate_hz
    }
}

/// Second-order section in transposed direct form II, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Second-order Butterworth lowpass via the bilinear transform with
    /// frequency prewarping.
    pub(crate) fn butterworth_lowpass(cutoff_hz: f64, rate_hz: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff_hz / rate_hz).tan();
        let k2 = k * k;
        let norm = 1.0 / (1.0 + std::f64::consts::SQRT_2 * k + k2);
        let b0 = k2 * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [
                2.0 * (k2 - 1.0) * norm,
                (1.0 - std::f64::consts::SQRT_2 * k + k2) * norm,
            ],
        }
    }

    /// Filter state for which a unit step input is already at steady state.
    fn step_state(&self) -> [f64; 2] {
        let [_, b1, b2] = self.b;
        let [a1, a2] = self.a;
        [b1 + b2 - a1 - a2, b2 - a2]
    }

    fn run(&self, x: &[f64], mut z: [f64; 2]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        x.iter()
            .map(|&xi| {
                let y = b0 * xi + z[0];
                z[0] = b1 * xi - a1 * y + z[1];
                z[1] = b2 * xi - a2 * y;
                y
            })
            .collect()
    }

    /// Forward-backward filtering with odd reflection padding at both ends.
    pub(crate) fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = 9.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_state();
        let scaled = |s: f64| [zi[0] * s, zi[1] * s];
        let mut y = self.run(&ext, scaled(ext[0]));
        y.reverse();
        let mut y = self.run(&y, scaled(y[0]));
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Zero-phase 25 Hz lowpass of both channels.
pub fn smooth(trace: &GazeTrace) -> Result<GazeTrace> {
    if trace.sample_rate_hz <= 2.0 * SMOOTHING_CUTOFF_HZ {
        return Err(Error::SampleRate {
            rate_hz: trace.sample_rate_hz,
            cutoff_hz: SMOOTHING_CUTOFF_HZ,
        });
    }
    let f = Biquad::butterworth_lowpass(SMOOTHING_CUTOFF_HZ, trace.sample_rate_hz);
    Ok(GazeTrace {
        sample_rate_hz: trace.sample_rate_hz,
        left_deg: f.filtfilt(&trace.left_deg),
        right_deg: f.filtfilt(&trace.right_deg),
    })
}

/// Absolute angular speed per sample, deg/s. Central differences inside,
/// one-sided at the ends.
pub fn angular_speed(channel: &[f64], rate_hz: f64) -> Vec<f64> {
    let n = channel.len();
    (0..n)
        .map(|i| match (i, n) {
            (_, 0 | 1) => 0.0,
            (0, _) => (channel[1] - channel[0]) * rate_hz,
            (i, n) if i == n - 1 => (channel[i] - channel[i - 1]) * rate_hz,
            (i, _) => (channel[i + 1] - channel[i - 1]) * 0.5 * rate_hz,
        })
        .map(f64::abs)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionThresholds {
    pub speed_deg_s: f64,
    pub window_deg: f64,
}

impl Default for DetectionThresholds {
    fn default() -> Self {
        Self {
            speed_deg_s: SPEED_THRESHOLD_DEG_S,
            window_deg: LANDING_WINDOW_DEG,
        }
    }
}

/// Offset time of an already smoothed trace, or `None` if the eyes never land.
pub fn detect_offset(smoothed: &GazeTrace, target: GazePoint) -> Option<f64> {
    detect_offset_with(smoothed, target, DetectionThresholds::default())
}

pub fn detect_offset_with(
    smoothed: &GazeTrace,
    target: GazePoint,
    thresholds: DetectionThresholds,
) -> Option<f64> {
    landing_index(smoothed, target, thresholds).map(|i| smoothed.time_s(i))
}

pub(crate) fn landing_index(
    smoothed: &GazeTrace,
    target: GazePoint,
    thresholds: DetectionThresholds,
) -> Option<usize> {
    let (left_target, right_target) = eyes_from_gaze(target);
    let rate = smoothed.sample_rate_hz;
    let left_speed = angular_speed(&smoothed.left_deg, rate);
    let right_speed = angular_speed(&smoothed.right_deg, rate);
    (0..smoothed.len()).find(|&i| {
        left_speed[i] < thresholds.speed_deg_s
            && right_speed[i] < thresholds.speed_deg_s
            && (smoothed.left_deg[i] - left_target).abs() <= thresholds.window_deg
            && (smoothed.right_deg[i] - right_target).abs() <= thresholds.window_deg
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    TooFast,
    TooSlow,
    NoLanding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialOutcome {
    Accepted(f64),
    Rejected(RejectReason),
}

impl TrialOutcome {
    pub fn offset_s(&self) -> Option<f64> {
        match self {
            TrialOutcome::Accepted(t) => Some(*t),
            TrialOutcome::Rejected(_) => None,
        }
    }
}

pub fn validate(offset_s: Option<f64>) -> TrialOutcome {
    let (lo, hi) = VALID_OFFSET_S;
    match offset_s {
        None => TrialOutcome::Rejected(RejectReason::NoLanding),
        Some(t) if t < lo => TrialOutcome::Rejected(RejectReason::TooFast),
        Some(t) if t > hi => TrialOutcome::Rejected(RejectReason::TooSlow),
        Some(t) => TrialOutcome::Accepted(t),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub condition: GazeDisplacement,
    pub target: GazePoint,
    pub trace: GazeTrace,
    pub outcome: TrialOutcome,
}

impl TrialRecord {
    /// Smooths, detects and validates a raw trace.
    pub fn process(condition: GazeDisplacement, target: GazePoint, raw: GazeTrace) -> Result<Self> {
        let smoothed = smooth(&raw)?;
        let outcome = validate(detect_offset(&smoothed, target));
        Ok(Self {
            condition,
            target,
            trace: raw,
            outcome,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FS: f64 = 200.0;

    fn amplitude_after_smoothing(freq_hz: f64) -> f64 {
        let n = 2000;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq_hz * i as f64 / FS).sin())
            .collect();
        let t = GazeTrace::new(FS, x.clone(), x).unwrap();
        let y = smooth(&t).unwrap();
        // least-squares projection on sin/cos over the middle section
        let (mut s, mut c) = (0.0, 0.0);
        let (lo, hi) = (400, 1600);
        for i in lo..hi {
            let w = 2.0 * std::f64::consts::PI * freq_hz * i as f64 / FS;
            s += y.left_deg[i] * w.sin();
            c += y.left_deg[i] * w.cos();
        }
        let m = (hi - lo) as f64 / 2.0;
        ((s / m).powi(2) + (c / m).powi(2)).sqrt()
    }

    #[test]
    fn coefficients_match_reference_design() {
        let f = Biquad::butterworth_lowpass(25.0, 200.0);
        let expect_b = [
            0.097_631_072_937_817_5,
            0.195_262_145_875_635,
            0.097_631_072_937_817_5,
        ];
        for (a, b) in f.b.iter().zip(expect_b) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((f.a[0] + 0.942_809_041_582_063_4).abs() < 1e-12);
        assert!((f.a[1] - 0.333_333_333_333_333_3).abs() < 1e-12);
        let zi = f.step_state();
        assert!((zi[0] - 0.902_368_927_062_182_5).abs() < 1e-12);
        assert!((zi[1] + 0.235_702_260_395_515_8).abs() < 1e-12);
    }

    #[test]
    fn filtfilt_matches_reference_output() {
        // Output of an independent zero-phase implementation, same padding.
        let expected = [
            9.99153756630941747e-01,
            8.93183633351230633e-01,
            9.02229146095583689e-01,
            1.05268735237937117e+00,
            1.29284145395877803e+00,
            1.54864553202158906e+00,
            1.74157416105357665e+00,
            1.79252223208039019e+00,
            1.67282887303262373e+00,
            1.44208315113855323e+00,
            1.19571172231606804e+00,
            1.00019549569261068e+00,
            8.82552771383660284e-01,
            8.28665018373488826e-01,
            7.90141739290530776e-01,
            7.44333694956148095e-01,
            7.39699609687734294e-01,
            8.47904758452463825e-01,
            1.10136383995148845e+00,
            1.48424160766642843e+00,
            1.93279569751053470e+00,
            2.34624944630784960e+00,
            2.65479134561283514e+00,
            2.87886993694454585e+00,
        ];
        let x: Vec<f64> = (0..24)
            .map(|i| (0.3 * i as f64).sin() + 0.1 * i as f64 + if i % 7 == 0 { 1.0 } else { 0.0 })
            .collect();
        let y = Biquad::butterworth_lowpass(25.0, 200.0).filtfilt(&x);
        for (a, b) in y.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_trace_is_unchanged() {
        let t = GazeTrace::new(FS, vec![3.7; 100], vec![-1.25; 100]).unwrap();
        let s = smooth(&t).unwrap();
        assert!(s.left_deg.iter().all(|v| (v - 3.7).abs() < 1e-12));
        assert!(s.right_deg.iter().all(|v| (v + 1.25).abs() < 1e-12));
    }

    #[test]
    fn passband_and_stopband() {
        assert!((amplitude_after_smoothing(5.0) - 1.0).abs() < 0.01);
        assert!(amplitude_after_smoothing(80.0) < 0.05);
    }

    #[test]
    fn low_sample_rate_is_rejected() {
        let t = GazeTrace::new(50.0, vec![0.0; 10], vec![0.0; 10]).unwrap();
        assert!(matches!(smooth(&t), Err(Error::SampleRate { .. })));
        assert!(smooth(&GazeTrace::new(50.1, vec![0.0; 10], vec![0.0; 10]).unwrap()).is_ok());
    }

    #[test]
    fn trace_construction_checks() {
        assert!(GazeTrace::new(FS, vec![0.0; 3], vec![0.0; 2]).is_err());
        assert!(GazeTrace::new(0.0, vec![], vec![]).is_err());
        assert!(GazeTrace::new(FS, vec![f64::NAN], vec![0.0]).is_err());
    }

    fn step_trace(t_star: f64, target: GazePoint) -> GazeTrace {
        let (lt, rt) = eyes_from_gaze(target);
        let n = 300;
        let k = (t_star * FS).round() as usize;
        let left = (0..n).map(|i| if i < k { lt + 6.0 } else { lt }).collect();
        let right = (0..n).map(|i| if i < k { rt - 6.0 } else { rt }).collect();
        GazeTrace::new(FS, left, right).unwrap()
    }

    #[test]
    fn jump_then_hold_detected_within_a_sample() {
        let target = GazePoint::new(4.0, 2.0).unwrap();
        let raw = step_trace(0.4, target);
        let t = detect_offset(&raw, target).unwrap();
        assert!((t - 0.4).abs() <= 1.0 / FS + 1e-12, "{t}");
        // smoothing spreads the jump, so landing can only come later
        let s = detect_offset(&smooth(&raw).unwrap(), target).unwrap();
        assert!(s >= t);
    }

    #[test]
    fn oscillation_never_lands() {
        let target = GazePoint::new(3.0, 0.0).unwrap();
        let (lt, rt) = eyes_from_gaze(target);
        // 8 deg/s triangle waves, a quarter period apart so one eye is
        // always mid-sweep while the other reverses
        let tri = |i: usize| {
            let p = (i % 20) as f64;
            0.04 * if p < 10.0 { p } else { 20.0 - p } - 0.2
        };
        let left = (0..400).map(|i| lt + tri(i)).collect();
        let right = (0..400).map(|i| rt + tri(i + 5)).collect();
        let t = GazeTrace::new(FS, left, right).unwrap();
        assert_eq!(detect_offset(&t, target), None);
        assert_eq!(detect_offset(&smooth(&t).unwrap(), target), None);
        assert_eq!(detect_offset(&t, target), None);
    }

    #[test]
    fn parked_off_target_never_lands() {
        let target = GazePoint::new(3.0, 0.0).unwrap();
        let (lt, rt) = eyes_from_gaze(target);
        let t = GazeTrace::new(FS, vec![lt + 2.0; 200], vec![rt + 2.0; 200]).unwrap();
        assert_eq!(detect_offset(&smooth(&t).unwrap(), target), None);
    }

    #[test]
    fn one_eye_off_target_blocks_landing() {
        let target = GazePoint::new(3.0, 0.0).unwrap();
        let (lt, rt) = eyes_from_gaze(target);
        let t = GazeTrace::new(FS, vec![lt; 200], vec![rt - 1.5; 200]).unwrap();
        assert_eq!(detect_offset(&t, target), None);
    }

    #[test]
    fn validation_window() {
        assert_eq!(validate(Some(0.45)), TrialOutcome::Accepted(0.45));
        assert_eq!(
            validate(Some(0.05)),
            TrialOutcome::Rejected(RejectReason::TooFast)
        );
        assert_eq!(
            validate(Some(1.31)),
            TrialOutcome::Rejected(RejectReason::TooSlow)
        );
        assert_eq!(
            validate(None),
            TrialOutcome::Rejected(RejectReason::NoLanding)
        );
        assert_eq!(validate(Some(0.1)), TrialOutcome::Accepted(0.1));
        assert_eq!(validate(Some(1.3)), TrialOutcome::Accepted(1.3));
    }

    #[test]
    fn speed_uses_central_differences() {
        let v = angular_speed(&[0.0, 1.0, 4.0, 9.0], 10.0);
        assert_eq!(v, vec![10.0, 20.0, 40.0, 50.0]);
        assert_eq!(angular_speed(&[2.0], 10.0), vec![0.0]);
    }

    proptest! {
        #[test]
        fn loosening_thresholds_never_delays_landing(
            seed in 0u64..500,
            extra_speed in 0.0f64..10.0,
            extra_window in 0.0f64..2.0,
        ) {
            let target = GazePoint::new(5.0, 3.0).unwrap();
            let raw = synthesize_trace(0.5, GazeDisplacement::new(-4.0, 3.0),
                GazePoint::new(9.0, 0.0).unwrap(), 0.3, seed).unwrap();
            let s = smooth(&raw).unwrap();
            let base = DetectionThresholds::default();
            let loose = DetectionThresholds {
                speed_deg_s: base.speed_deg_s + extra_speed,
                window_deg: base.window_deg + extra_window,
            };
            let a = detect_offset_with(&s, target, base);
            let b = detect_offset_with(&s, target, loose);
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!(b <= a),
                (Some(_), None) => prop_assert!(false, "loosening lost the landing"),
                _ => {}
            }
        }
    }
}

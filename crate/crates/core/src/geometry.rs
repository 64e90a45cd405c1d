//! Vergence/saccade gaze coordinates.
//!
//! A gaze point in the transverse plane is described by the vergence angle
//! (angle between the two gaze rays, `left - right`) and the saccade angle
//! (mean direction of the two eyes). Eye angles are signed rotations from
//! straight ahead, with `left >= right` for any point in front of the observer.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest and largest accepted interpupillary distance, meters.
pub const IPD_RANGE_M: (f64, f64) = (0.050, 0.080);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazePoint {
    pub vergence_deg: f64,
    pub saccade_deg: f64,
}

impl GazePoint {
    pub fn new(vergence_deg: f64, saccade_deg: f64) -> Result<Self> {
        if !(vergence_deg.is_finite() && saccade_deg.is_finite()) {
            return Err(Error::Domain("gaze angles must be finite".into()));
        }
        if vergence_deg < 0.0 {
            return Err(Error::Domain(format!(
                "vergence {vergence_deg}° is negative"
            )));
        }
        Ok(Self {
            vergence_deg,
            saccade_deg,
        })
    }

    /// Point displaced by `d`. Fails if the result would have negative vergence.
    pub fn offset_by(self, d: GazeDisplacement) -> Result<Self> {
        Self::new(
            self.vergence_deg + d.d_vergence_deg,
            self.saccade_deg + d.d_saccade_deg,
        )
    }
}

/// Movement between two gaze points. Positive vergence change is convergent
/// (toward the observer), negative is divergent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GazeDisplacement {
    pub d_vergence_deg: f64,
    pub d_saccade_deg: f64,
}

impl GazeDisplacement {
    pub const fn new(d_vergence_deg: f64, d_saccade_deg: f64) -> Self {
        Self {
            d_vergence_deg,
            d_saccade_deg,
        }
    }

    /// Left and right saccades are treated as equivalent.
    pub fn folded(self) -> Self {
        Self::new(self.d_vergence_deg, self.d_saccade_deg.abs())
    }

    pub fn as_array(self) -> [f64; 2] {
        [self.d_vergence_deg, self.d_saccade_deg]
    }
}

impl From<[f64; 2]> for GazeDisplacement {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverGeometry {
    ipd_m: f64,
}

impl ObserverGeometry {
    pub fn new(ipd_m: f64) -> Result<Self> {
        if !(IPD_RANGE_M.0..=IPD_RANGE_M.1).contains(&ipd_m) {
            return Err(Error::InvalidIpd { ipd_m });
        }
        Ok(Self { ipd_m })
    }

    pub fn from_ipd_mm(ipd_mm: f64) -> Result<Self> {
        Self::new(ipd_mm / 1000.0)
    }

    pub fn ipd_m(&self) -> f64 {
        self.ipd_m
    }
}

impl Default for ObserverGeometry {
    fn default() -> Self {
        Self { ipd_m: 0.063 }
    }
}

/// Full vergence angle subtended by the two eyes at a point `depth_m` ahead.
pub fn vergence_from_depth(depth_m: f64, geom: &ObserverGeometry) -> Result<f64> {
    if !(depth_m > 0.0) {
        return Err(Error::Domain(format!("depth {depth_m} m must be positive")));
    }
    Ok((2.0 * (geom.ipd_m / (2.0 * depth_m)).atan()).to_degrees())
}

/// Derivative of [`vergence_from_depth`] with respect to depth, degrees per meter.
pub fn vergence_depth_slope(depth_m: f64, geom: &ObserverGeometry) -> f64 {
    let w = geom.ipd_m;
    -(w / (depth_m * depth_m + 0.25 * w * w)).to_degrees()
}

pub fn depth_from_vergence(vergence_deg: f64, geom: &ObserverGeometry) -> Result<f64> {
    if !(vergence_deg > 0.0) || vergence_deg >= 180.0 {
        return Err(Error::Domain(format!(
            "vergence {vergence_deg}° has no finite depth"
        )));
    }
    Ok(geom.ipd_m / (2.0 * (0.5 * vergence_deg.to_radians()).tan()))
}

/// `(left, right)` eye angles for a gaze point.
pub fn eyes_from_gaze(p: GazePoint) -> (f64, f64) {
    let half = 0.5 * p.vergence_deg;
    (p.saccade_deg + half, p.saccade_deg - half)
}

pub fn gaze_from_eyes(left_deg: f64, right_deg: f64) -> Result<GazePoint> {
    if left_deg < right_deg {
        return Err(Error::InvalidVergence {
            left_deg,
            right_deg,
        });
    }
    GazePoint::new(left_deg - right_deg, 0.5 * (left_deg + right_deg))
}

pub fn displacement(origin: GazePoint, target: GazePoint) -> GazeDisplacement {
    GazeDisplacement::new(
        target.vergence_deg - origin.vergence_deg,
        target.saccade_deg - origin.saccade_deg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ipd(m: f64) -> ObserverGeometry {
        ObserverGeometry::new(m).unwrap()
    }

    #[test]
    fn vergence_at_nearest_study_depth() {
        let v = vergence_from_depth(0.4, &ipd(0.059)).unwrap();
        assert!((v - 8.4).abs() < 0.05, "{v}");
        assert!((v - 8.435).abs() < 1e-3);
    }

    #[test]
    fn vergence_at_one_meter() {
        let g = ipd(0.063);
        let v = vergence_from_depth(1.0, &g).unwrap();
        assert!((v - 3.609).abs() < 1e-3, "{v}");
        assert!((depth_from_vergence(v, &g).unwrap() - 1.0).abs() < 1e-12);
        assert!((depth_from_vergence(3.609, &g).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn vergence_vanishes_at_infinity() {
        let v = vergence_from_depth(1e12, &ipd(0.063)).unwrap();
        assert!(v.abs() < 1e-9);
    }

    #[test]
    fn depth_and_vergence_domain_errors() {
        let g = ObserverGeometry::default();
        assert!(vergence_from_depth(0.0, &g).is_err());
        assert!(vergence_from_depth(-1.0, &g).is_err());
        assert!(depth_from_vergence(0.0, &g).is_err());
        assert!(depth_from_vergence(-2.0, &g).is_err());
    }

    #[test]
    fn ipd_window() {
        assert!(ObserverGeometry::new(0.049).is_err());
        assert!(ObserverGeometry::new(0.081).is_err());
        assert!(ObserverGeometry::new(0.050).is_ok());
        assert!(ObserverGeometry::from_ipd_mm(71.0).is_ok());
    }

    #[test]
    fn eye_angle_examples() {
        let p = GazePoint::new(8.0, 0.0).unwrap();
        assert_eq!(eyes_from_gaze(p), (4.0, -4.0));
        assert_eq!(
            eyes_from_gaze(GazePoint::new(0.0, 10.0).unwrap()),
            (10.0, 10.0)
        );
        assert_eq!(
            eyes_from_gaze(GazePoint::new(6.0, -3.0).unwrap()),
            (0.0, -6.0)
        );

        assert_eq!(
            gaze_from_eyes(4.0, -4.0).unwrap(),
            GazePoint::new(8.0, 0.0).unwrap()
        );
        assert_eq!(
            gaze_from_eyes(10.0, 10.0).unwrap(),
            GazePoint::new(0.0, 10.0).unwrap()
        );
        assert_eq!(
            gaze_from_eyes(0.0, -6.0).unwrap(),
            GazePoint::new(6.0, -3.0).unwrap()
        );
        assert!(matches!(
            gaze_from_eyes(-1.0, 1.0),
            Err(Error::InvalidVergence { .. })
        ));
    }

    #[test]
    fn displacement_examples() {
        let d = displacement(
            GazePoint::new(8.4, 0.0).unwrap(),
            GazePoint::new(4.2, 8.0).unwrap(),
        );
        assert!((d.d_vergence_deg + 4.2).abs() < 1e-12);
        assert_eq!(d.d_saccade_deg, 8.0);

        let p = GazePoint::new(3.0, 2.0).unwrap();
        assert_eq!(displacement(p, p), GazeDisplacement::new(0.0, 0.0));

        let d = displacement(
            GazePoint::new(4.2, -6.0).unwrap(),
            GazePoint::new(8.4, 6.0).unwrap(),
        );
        assert!((d.d_vergence_deg - 4.2).abs() < 1e-12);
        assert_eq!(d.d_saccade_deg, 12.0);
    }

    #[test]
    fn negative_vergence_rejected() {
        assert!(GazePoint::new(-0.1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn depth_round_trip(d in 0.1f64..100.0, w in 0.050f64..0.080) {
            let g = ipd(w);
            let v = vergence_from_depth(d, &g).unwrap();
            let back = depth_from_vergence(v, &g).unwrap();
            prop_assert!(((back - d) / d).abs() < 1e-9);
        }

        #[test]
        fn vergence_monotone(d in 0.1f64..50.0, k in 1.001f64..3.0, w in 0.050f64..0.079) {
            let g = ipd(w);
            let near = vergence_from_depth(d, &g).unwrap();
            prop_assert!(vergence_from_depth(d * k, &g).unwrap() < near);
            let wider = ipd((w * 1.01).min(0.080));
            prop_assert!(vergence_from_depth(d, &wider).unwrap() > near);
        }

        #[test]
        fn eye_round_trip(v in 0.0f64..20.0, s in -30.0f64..30.0) {
            let p = GazePoint::new(v, s).unwrap();
            let (l, r) = eyes_from_gaze(p);
            let q = gaze_from_eyes(l, r).unwrap();
            prop_assert!((q.vergence_deg - v).abs() < 1e-12);
            prop_assert!((q.saccade_deg - s).abs() < 1e-12);
        }

        #[test]
        fn slope_matches_finite_difference(d in 0.2f64..30.0) {
            let g = ObserverGeometry::default();
            let h = 1e-6 * d;
            let fd = (vergence_from_depth(d + h, &g).unwrap()
                - vergence_from_depth(d - h, &g).unwrap()) / (2.0 * h);
            let a = vergence_depth_slope(d, &g);
            prop_assert!((a - fd).abs() <= 1e-6 * a.abs());
        }
    }
}

//! Both applications on shipped scene fixtures with a model trained on
//! synthetic study data.

use std::path::PathBuf;
use std::sync::OnceLock;

use stereo_offset::apps::{
    game_report, hud_objective_curve, optimize_hud_depth, read_histogram_csv, DepthHistogram,
    HistogramDomain, DEFAULT_SACCADE_RANGE_DEG,
};
use stereo_offset::eval::fit_full;
use stereo_offset::trials::{synthesize_dataset, DatasetConfig, PlantedSurface};
use stereo_offset::{GazeModel, ObserverGeometry, TrainConfig};

fn fixture(name: &str) -> DepthHistogram {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    read_histogram_csv(p, HistogramDomain::DepthM).unwrap()
}

fn model() -> &'static GazeModel {
    static M: OnceLock<GazeModel> = OnceLock::new();
    M.get_or_init(|| {
        let cfg = DatasetConfig {
            seed: 31,
            ..Default::default()
        };
        let rows = synthesize_dataset(&cfg, &PlantedSurface::study_shaped())
            .unwrap()
            .rows;
        fit_full(&rows, &TrainConfig::default()).unwrap()
    })
}

#[test]
fn fixtures_are_normalized_depth_histograms() {
    for name in [
        "indoor_like.csv",
        "outdoor_like.csv",
        "driving_like.csv",
        "game_fixations.csv",
    ] {
        let h = fixture(name);
        assert_eq!(h.bin_centers().len(), 64, "{name}");
        assert!((h.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn hud_optimum_is_certified_by_dense_grid() {
    let geom = ObserverGeometry::default();
    let grid: Vec<f64> = (0..=1970).map(|k| 0.3 + 0.01 * k as f64).collect();
    for name in ["indoor_like.csv", "outdoor_like.csv", "driving_like.csv"] {
        let scene = fixture(name);
        let opt = optimize_hud_depth(model(), &scene, &geom, DEFAULT_SACCADE_RANGE_DEG).unwrap();
        let best = hud_objective_curve(model(), &scene, &geom, DEFAULT_SACCADE_RANGE_DEG, &grid)
            .unwrap()
            .into_iter()
            .map(|(_, e)| e)
            .fold(f64::INFINITY, f64::min);
        eprintln!("{name}: {opt:?} grid {best:.5}");
        assert!(opt.objective_s <= best + 1e-4, "{name}");
    }
}

#[test]
fn game_overhead_is_positive_and_exclusion_is_reported() {
    let geom = ObserverGeometry::default();
    let r = game_report(
        model(),
        &fixture("game_fixations.csv"),
        &geom,
        DEFAULT_SACCADE_RANGE_DEG,
    )
    .unwrap();
    eprintln!("{r:?}");
    assert!(r.overhead_s > 0.0);
    assert!(r.excluded_mass > 0.0 && r.excluded_mass < 0.05);
}

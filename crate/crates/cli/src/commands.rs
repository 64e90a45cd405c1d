//! One function per subcommand. Each writes machine-readable artifacts into
//! the output directory and prints a short table to stdout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use stereo_offset::apps::{
    game_report, hud_objective_curve, optimize_hud_depth, pool_depths, read_depth_f32,
    read_depth_png, read_histogram_csv, write_histogram_csv, DepthHistogram, DepthMapManifest,
    HistogramDomain, LogBinning,
};
use stereo_offset::eval::{
    self, ablation_report, evaluate, fit_ablated, holdout_ks, train_ablation_models, AblationAxis,
    AblationModels,
};
use stereo_offset::model;
use stereo_offset::model::{describe, fit_conditions, group_by_condition, DomainPolicy};
use stereo_offset::trials::{
    read_trials, synthesize_dataset, write_trace_csv, write_trials, PlantedSurface, TrialRow,
    VALID_OFFSET_S,
};
use stereo_offset::{GazeDisplacement, GazeModel, ObserverGeometry};

use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;
/// Prediction curves cover [0, 1.5] s at 1 ms.
const PDF_STEP_S: f64 = 1e-3;
const PDF_SPAN_S: f64 = 1.5;
const HUD_CURVE_POINTS: usize = 200;
const HUD_CURVE_RANGE_M: (f64, f64) = (0.3, 20.0);

/// Common header of every JSON artifact.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a RunConfig>,
    inputs: BTreeMap<&'a str, String>,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(
    out: &Path,
    name: &str,
    command: &str,
    config: Option<&RunConfig>,
    inputs: &[(&str, &Path)],
    body: T,
) -> Result<PathBuf> {
    let envelope = Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        config,
        inputs: inputs
            .iter()
            .map(|(k, p)| (*k, p.display().to_string()))
            .collect(),
        body,
    };
    let path = out.join(name);
    let mut text = serde_json::to_string_pretty(&envelope)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut wtr =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

fn load_trials(path: &Path) -> Result<Vec<TrialRow>> {
    let rows = read_trials(path)?;
    if rows.iter().all(|r| r.observation().is_none()) {
        bail!("{} has no accepted trials", path.display());
    }
    Ok(rows)
}

fn load_model(path: &Path) -> Result<GazeModel> {
    Ok(GazeModel::load(path)?)
}

fn geometry(cfg: &RunConfig) -> Result<ObserverGeometry> {
    Ok(ObserverGeometry::from_ipd_mm(cfg.ipd_mm)?)
}

#[derive(Serialize)]
struct TruthRow {
    trial_id: u64,
    true_offset_s: f64,
    detected_offset_s: Option<f64>,
}

pub fn synth(
    cfg: &RunConfig,
    out: &Path,
    surface_model: Option<&Path>,
    traces: bool,
) -> Result<()> {
    let surface = match surface_model {
        Some(p) => PlantedSurface::from_model(&load_model(p)?)?,
        None => PlantedSurface::study_shaped(),
    };
    let mut data_cfg = cfg.dataset();
    data_cfg.keep_traces = traces;
    let mut ds = synthesize_dataset(&data_cfg, &surface)?;
    if traces {
        let dir = out.join("traces");
        std::fs::create_dir_all(&dir)?;
        for (row, trace) in ds.rows.iter_mut().zip(&ds.traces) {
            let name = format!("traces/trial_{:06}.csv", row.trial_id);
            write_trace_csv(out.join(&name), trace)?;
            row.trace_file = Some(name);
        }
    }
    write_trials(out.join("trials.csv"), &ds.rows)?;
    write_csv(
        &out.join("truth.csv"),
        ds.rows
            .iter()
            .zip(&ds.true_offsets)
            .map(|(r, &t)| TruthRow {
                trial_id: r.trial_id,
                true_offset_s: t,
                detected_offset_s: r.offset_s,
            }),
    )?;
    #[derive(Serialize)]
    struct Body<'a> {
        n_trials: usize,
        surface: &'a PlantedSurface,
        rejections: stereo_offset::trials::RejectionCounts,
        rejections_by_condition: &'a BTreeMap<String, stereo_offset::trials::RejectionCounts>,
    }
    let inputs: Vec<(&str, &Path)> = surface_model
        .map(|p| ("surface_model", p))
        .into_iter()
        .collect();
    write_json(
        out,
        "manifest.json",
        "synth",
        Some(cfg),
        &inputs,
        Body {
            n_trials: ds.rows.len(),
            surface: &surface,
            rejections: ds.rejections,
            rejections_by_condition: &ds.rejections_by_condition,
        },
    )?;
    println!(
        "synthesized {} trials ({} subjects x 22 conditions x {}), {} detector rejections repeated",
        ds.rows.len(),
        cfg.subjects,
        cfg.trials,
        ds.rejections.total()
    );
    println!("wrote {}", out.join("trials.csv").display());
    Ok(())
}

fn estimates(rows: &[TrialRow]) -> Result<Vec<stereo_offset::model::ConditionEstimate>> {
    let groups = group_by_condition(rows.iter().filter_map(TrialRow::observation));
    Ok(fit_conditions(&groups)?)
}

fn print_estimates(est: &[stereo_offset::model::ConditionEstimate]) {
    println!(
        "{:>8} {:>7} {:>5} {:>8} {:>8} {:>8} {:>8}",
        "dv", "ds", "n", "mu", "sigma", "tau", "mean"
    );
    for e in est {
        let p = e.params;
        println!(
            "{:>8.2} {:>7.2} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            e.displacement.d_vergence_deg,
            e.displacement.d_saccade_deg,
            e.n_trials,
            p.mu,
            p.sigma,
            p.tau,
            p.mean()
        );
    }
}

pub fn fit(cfg: &RunConfig, out: &Path, trials: &Path) -> Result<()> {
    let est = estimates(&load_trials(trials)?)?;
    #[derive(Serialize)]
    struct Body<'a> {
        conditions: &'a [stereo_offset::model::ConditionEstimate],
    }
    write_json(
        out,
        "conditions.json",
        "fit",
        Some(cfg),
        &[("trials", trials)],
        Body { conditions: &est },
    )?;
    print_estimates(&est);
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    iteration: usize,
    mu: f64,
    sigma: f64,
    tau: f64,
}

pub fn train(cfg: &RunConfig, out: &Path, trials: &Path) -> Result<()> {
    let est = estimates(&load_trials(trials)?)?;
    let model = model::train(&est, &cfg.train())?;
    model.save(out.join("model.json"))?;
    let t = &model.training_meta.loss_trace;
    write_csv(
        &out.join("loss_trace.csv"),
        t.mu.iter()
            .zip(&t.sigma)
            .zip(&t.tau)
            .map(|((m, s), u)| LossRow {
                iteration: m.iteration,
                mu: m.loss,
                sigma: s.loss,
                tau: u.loss,
            }),
    )?;
    #[derive(Serialize)]
    struct Body<'a> {
        conditions: &'a [stereo_offset::model::ConditionEstimate],
        final_loss: stereo_offset::model::ParamTriple<f64>,
    }
    write_json(
        out,
        "train.json",
        "train",
        Some(cfg),
        &[("trials", trials)],
        Body {
            conditions: &est,
            final_loss: model.training_meta.final_loss,
        },
    )?;
    print_estimates(&est);
    let f = model.training_meta.final_loss;
    println!(
        "trained on {} conditions, {} iterations; final MSE mu {:.3e} sigma {:.3e} tau {:.3e} (s^2)",
        est.len(),
        cfg.iters,
        f.mu,
        f.sigma,
        f.tau
    );
    println!("wrote {}", out.join("model.json").display());
    Ok(())
}

#[derive(Serialize)]
struct PdfRow {
    t_s: f64,
    pdf: f64,
}

pub fn predict(out: &Path, model: &Path, dv: f64, ds: f64, extrapolate: bool) -> Result<()> {
    let m = load_model(model)?;
    let d = GazeDisplacement::new(dv, ds);
    let policy = if extrapolate {
        DomainPolicy::Extrapolate
    } else {
        DomainPolicy::Strict
    };
    let p = m.predict_with(d, policy)?;
    let n = (PDF_SPAN_S / PDF_STEP_S).round() as usize;
    let curve = (0..=n)
        .map(|k| {
            let t = k as f64 * PDF_STEP_S;
            Ok(PdfRow {
                t_s: t,
                pdf: p.pdf(t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(&out.join("pdf.csv"), curve)?;
    #[derive(Serialize)]
    struct Body {
        dv_deg: f64,
        ds_deg: f64,
        mu: f64,
        sigma: f64,
        tau: f64,
        expected_offset_s: f64,
        extrapolated: bool,
    }
    let body = Body {
        dv_deg: dv,
        ds_deg: ds,
        mu: p.mu,
        sigma: p.sigma,
        tau: p.tau,
        expected_offset_s: p.mean(),
        extrapolated: extrapolate && !m.domain.contains(d),
    };
    let path = write_json(
        out,
        "prediction.json",
        "predict",
        None,
        &[("model", model)],
        body,
    )?;
    print!("{}", std::fs::read_to_string(path)?);
    Ok(())
}

pub fn eval(cfg: &RunConfig, out: &Path, model: &Path, trials: &Path) -> Result<()> {
    let m = load_model(model)?;
    let rows = load_trials(trials)?;
    let spec = cfg.histograms()[0];
    let conditions = evaluate(&m, &rows, spec)?;
    let pooled_ks = holdout_ks(&m, &rows)?;
    let mean_kl = conditions.iter().map(|c| c.kl_nats).sum::<f64>() / conditions.len() as f64;
    #[derive(Serialize)]
    struct Body<'a> {
        histogram: stereo_offset::eval::HistogramSpec,
        mean_kl_nats: f64,
        pooled_ks: stereo_offset::eval::KsResult,
        conditions: &'a [stereo_offset::eval::ConditionReport],
    }
    write_json(
        out,
        "eval.json",
        "eval",
        Some(cfg),
        &[("model", model), ("trials", trials)],
        Body {
            histogram: spec,
            mean_kl_nats: mean_kl,
            pooled_ks,
            conditions: &conditions,
        },
    )?;
    println!(
        "{:>8} {:>7} {:>5} {:>9} {:>7} {:>7}",
        "dv", "ds", "n", "KL", "KS D", "KS p"
    );
    for c in &conditions {
        println!(
            "{:>8.2} {:>7.2} {:>5} {:>9.4} {:>7.4} {:>7.3}",
            c.dv_deg, c.ds_deg, c.n, c.kl_nats, c.ks_d, c.ks_p
        );
    }
    println!(
        "mean KL {mean_kl:.4} nats over {} bins; pooled KS D {:.4} p {:.3}",
        spec.bins, pooled_ks.statistic, pooled_ks.p_value
    );
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &Path, trials: &Path, full: Option<&Path>) -> Result<()> {
    let rows = load_trials(trials)?;
    let train_cfg = cfg.train();
    let models = match full {
        Some(p) => {
            let sac_groups = eval::ablate(&rows, AblationAxis::SaccadeOnly);
            let ver_groups = eval::ablate(&rows, AblationAxis::VergenceOnly);
            AblationModels {
                full: load_model(p)?,
                sac: fit_ablated(&sac_groups, &train_cfg)?,
                ver: fit_ablated(&ver_groups, &train_cfg)?,
                sac_groups,
                ver_groups,
            }
        }
        None => train_ablation_models(&rows, &train_cfg)?,
    };
    models.sac.save(out.join("model_sac.json"))?;
    models.ver.save(out.join("model_ver.json"))?;
    if full.is_none() {
        models.full.save(out.join("model_full.json"))?;
    }
    let reports = cfg
        .histograms()
        .into_iter()
        .map(|spec| ablation_report(&models, &rows, spec))
        .collect::<Result<Vec<_>, _>>()?;
    #[derive(Serialize)]
    struct Body<'a> {
        reports: &'a [stereo_offset::eval::AblationReport],
    }
    let mut inputs = vec![("trials", trials)];
    inputs.extend(full.map(|p| ("model", p)));
    write_json(
        out,
        "ablation.json",
        "ablate",
        Some(cfg),
        &inputs,
        Body { reports: &reports },
    )?;
    println!(
        "{:>6} {:>10} {:>10} {:>10}  ordering",
        "bins", "KL FULL", "KL SAC", "KL VER"
    );
    for r in &reports {
        let holds = r.mean_kl_full < r.mean_kl_sac && r.mean_kl_full < r.mean_kl_ver;
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>10.4}  {}",
            r.histogram.bins,
            r.mean_kl_full,
            r.mean_kl_sac,
            r.mean_kl_ver,
            if holds {
                "FULL lowest"
            } else {
                "FULL not lowest"
            }
        );
    }
    Ok(())
}

pub fn game(
    cfg: &RunConfig,
    out: &Path,
    model: &Path,
    fixations: &Path,
    vergence: bool,
) -> Result<()> {
    let m = load_model(model)?;
    let domain = if vergence {
        HistogramDomain::VergenceDeg
    } else {
        HistogramDomain::DepthM
    };
    let h = read_histogram_csv(fixations, domain)?;
    let r = game_report(&m, &h, &geometry(cfg)?, cfg.saccade_range())?;
    write_json(
        out,
        "game.json",
        "game",
        Some(cfg),
        &[("model", model), ("fixations", fixations)],
        r,
    )?;
    println!(
        "baseline (no vergence change)   {:.1} ms",
        1e3 * r.baseline_s
    );
    println!(
        "game mean offset                {:.1} ms",
        1e3 * r.mean_offset_s
    );
    println!(
        "overhead                        {:+.1} ms",
        1e3 * r.overhead_s
    );
    println!(
        "fixation mass excluded          {:.2} %",
        100.0 * r.excluded_mass
    );
    println!(
        "mean offset with clamping only  {:.1} ms",
        1e3 * r.clamped_mean_offset_s
    );
    Ok(())
}

fn load_depth_maps(manifest_path: &Path) -> Result<stereo_offset::apps::PooledDepths> {
    let text = std::fs::read_to_string(manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: DepthMapManifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing depth manifest {}", manifest_path.display()))?;
    if manifest.frames.is_empty() {
        bail!("depth manifest {} lists no frames", manifest_path.display());
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let frames = manifest
        .frames
        .iter()
        .map(|f| {
            let p = base.join(f);
            let is_png = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
            let depths = if is_png {
                read_depth_png(&p, manifest.scale_to_m)?
            } else {
                read_depth_f32(&p, &manifest)?
            };
            Ok(depths)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pool_depths(&frames, LogBinning::default())?)
}

pub fn depth_hist(out: &Path, manifest: &Path) -> Result<()> {
    let pooled = load_depth_maps(manifest)?;
    write_histogram_csv(out.join("scene_hist.csv"), &pooled.histogram)?;
    #[derive(Serialize)]
    struct Body {
        binning: LogBinning,
        used: u64,
        missing: u64,
        out_of_range: u64,
    }
    write_json(
        out,
        "depth_hist.json",
        "depth-hist",
        None,
        &[("manifest", manifest)],
        Body {
            binning: LogBinning::default(),
            used: pooled.used,
            missing: pooled.missing,
            out_of_range: pooled.out_of_range,
        },
    )?;
    println!(
        "pooled {} depth samples ({} missing, {} outside range)",
        pooled.used, pooled.missing, pooled.out_of_range
    );
    println!("wrote {}", out.join("scene_hist.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    depth_m: f64,
    expected_offset_s: f64,
}

pub fn hud(
    cfg: &RunConfig,
    out: &Path,
    model: &Path,
    scene: Option<&Path>,
    depth_manifest: Option<&Path>,
) -> Result<()> {
    let m = load_model(model)?;
    let (hist, source): (DepthHistogram, (&str, &Path)) = match (scene, depth_manifest) {
        (Some(p), _) => (
            read_histogram_csv(p, HistogramDomain::DepthM)?,
            ("scene", p),
        ),
        (None, Some(p)) => (load_depth_maps(p)?.histogram, ("depth_manifest", p)),
        (None, None) => bail!("pass --scene or --depth-manifest"),
    };
    let geom = geometry(cfg)?;
    let range = cfg.saccade_range();
    let opt = optimize_hud_depth(&m, &hist, &geom, range)?;
    let (lo, hi) = (HUD_CURVE_RANGE_M.0.ln(), HUD_CURVE_RANGE_M.1.ln());
    let depths: Vec<f64> = (0..HUD_CURVE_POINTS)
        .map(|k| (lo + (hi - lo) * k as f64 / (HUD_CURVE_POINTS - 1) as f64).exp())
        .collect();
    let curve: Vec<CurveRow> = hud_objective_curve(&m, &hist, &geom, range, &depths)?
        .into_iter()
        .map(|(depth_m, expected_offset_s)| CurveRow {
            depth_m,
            expected_offset_s,
        })
        .collect();
    #[derive(Serialize)]
    struct Body<'a> {
        optimum: stereo_offset::apps::HudOptimum,
        curve: &'a [CurveRow],
    }
    write_json(
        out,
        "hud.json",
        "hud",
        Some(cfg),
        &[("model", model), source],
        Body {
            optimum: opt,
            curve: &curve,
        },
    )?;
    write_csv(&out.join("hud_curve.csv"), &curve)?;
    println!(
        "optimal HUD depth {:.3} m, expected offset {:.1} ms",
        opt.depth_m,
        1e3 * opt.objective_s
    );
    Ok(())
}

/// Column names of an external trial table.
pub struct ColumnMap {
    pub dv: String,
    pub ds: String,
    pub offset: String,
    pub subject: Option<String>,
    pub trial: Option<String>,
    pub accepted: Option<String>,
    /// Multiplier that turns the offset column into seconds.
    pub offset_scale: f64,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        _ => None,
    }
}

pub fn import(out: &Path, input: &Path, map: &ColumnMap) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(input)
        .with_context(|| format!("opening {}", input.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: no column named {name:?}", input.display()))
    };
    let (dv, ds, offset) = (col(&map.dv)?, col(&map.ds)?, col(&map.offset)?);
    let subject = map.subject.as_deref().map(col).transpose()?;
    let trial = map.trial.as_deref().map(col).transpose()?;
    let accepted = map.accepted.as_deref().map(col).transpose()?;

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |c: usize, what: &str| -> Result<f64> {
            rec[c].parse::<f64>().with_context(|| {
                format!("{} line {line}: bad {what} {:?}", input.display(), &rec[c])
            })
        };
        let offset_s = match rec[offset].trim() {
            "" | "NA" | "nan" | "NaN" => None,
            _ => Some(num(offset, "offset")? * map.offset_scale),
        };
        let is_accepted = match accepted {
            Some(c) => parse_flag(&rec[c]).with_context(|| {
                format!(
                    "{} line {line}: bad acceptance flag {:?}",
                    input.display(),
                    &rec[c]
                )
            })?,
            None => offset_s.is_some(),
        };
        rows.push(TrialRow {
            trial_id: match trial {
                Some(c) => rec[c]
                    .parse()
                    .with_context(|| format!("{} line {line}: bad trial id", input.display()))?,
                None => i as u64 + 1,
            },
            subject: subject
                .map(|c| {
                    rec[c]
                        .parse()
                        .with_context(|| format!("{} line {line}: bad subject", input.display()))
                })
                .transpose()?,
            dv_deg: num(dv, "dv")?,
            ds_deg: num(ds, "ds")?,
            accepted: is_accepted && offset_s.is_some(),
            offset_s,
            trace_file: None,
        });
    }
    write_trials(out.join("trials.csv"), &rows)?;
    let n_accepted = rows.iter().filter(|r| r.accepted).count();
    let outside = rows
        .iter()
        .filter_map(|r| r.observation())
        .filter(|(_, t)| !(VALID_OFFSET_S.0..=VALID_OFFSET_S.1).contains(t))
        .count();
    let groups = group_by_condition(rows.iter().filter_map(TrialRow::observation));
    #[derive(Serialize)]
    struct Body {
        n_rows: usize,
        n_accepted: usize,
        n_outside_validity_window: usize,
        conditions: BTreeMap<String, usize>,
    }
    write_json(
        out,
        "import.json",
        "import",
        None,
        &[("input", input)],
        Body {
            n_rows: rows.len(),
            n_accepted,
            n_outside_validity_window: outside,
            conditions: groups
                .iter()
                .map(|g| (describe(g.displacement), g.offsets.len()))
                .collect(),
        },
    )?;
    println!(
        "imported {} rows ({} accepted, {} folded conditions)",
        rows.len(),
        n_accepted,
        groups.len()
    );
    if outside > 0 {
        println!(
            "note: {outside} accepted offsets lie outside the {:?} s validity window",
            VALID_OFFSET_S
        );
    }
    Ok(())
}

//! Goodness of fit: discrete KL divergence against histograms, a decile KS
//! test, single-axis ablations and train/test splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::exgauss::{ExGaussParams, OffsetDistribution};
use crate::geometry::GazeDisplacement;
use crate::model::{
    condition_key, fit_conditions, group_by_condition, train, ConditionSamples, GazeModel,
    TrainConfig,
};
use crate::special::kolmogorov_sf;
use crate::trials::TrialRow;
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 50;
/// Histogram range in seconds; 50 bins over it are 24 ms wide.
pub const DEFAULT_RANGE_S: (f64, f64) = (0.0, 1.2);
/// Pseudo-count added to every histogram bin before comparing.
pub const BIN_PSEUDO_COUNT: f64 = 0.5;
pub const KS_MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bins: usize,
    pub range_s: (f64, f64),
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            range_s: DEFAULT_RANGE_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetHistogram {
    lo: f64,
    width: f64,
    counts: Vec<u64>,
}

impl OffsetHistogram {
    pub fn new(spec: HistogramSpec) -> Result<Self> {
        let (lo, hi) = spec.range_s;
        if spec.bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Invalid(format!(
                "histogram needs at least one bin over a finite increasing range, got {} bins over [{lo}, {hi}]",
                spec.bins
            )));
        }
        Ok(Self {
            lo,
            width: (hi - lo) / spec.bins as f64,
            counts: vec![0; spec.bins],
        })
    }

    /// Samples outside the range are ignored; the upper edge belongs to the
    /// last bin.
    pub fn from_samples(samples: &[f64], spec: HistogramSpec) -> Result<Self> {
        let mut h = Self::new(spec)?;
        for &t in samples {
            h.add(t);
        }
        Ok(h)
    }

    pub fn from_counts(spec: HistogramSpec, counts: Vec<u64>) -> Result<Self> {
        let mut h = Self::new(spec)?;
        if counts.len() != h.counts.len() {
            return Err(Error::Invalid(format!(
                "{} counts for {} bins",
                counts.len(),
                h.counts.len()
            )));
        }
        h.counts = counts;
        Ok(h)
    }

    pub fn add(&mut self, t: f64) -> bool {
        let n = self.counts.len();
        let hi = self.lo + self.width * n as f64;
        if !(t >= self.lo && t <= hi) {
            return false;
        }
        let i = (((t - self.lo) / self.width) as usize).min(n - 1);
        self.counts[i] += 1;
        true
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        self.width
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.counts.len())
            .map(|i| self.lo + self.width * i as f64)
            .collect()
    }

    /// Model probability per bin, renormalized to the histogram range.
    pub fn model_mass(&self, dist: &impl OffsetDistribution) -> Vec<f64> {
        let cdf: Vec<f64> = self.bin_edges().iter().map(|&e| dist.cdf(e)).collect();
        let inside = cdf[cdf.len() - 1] - cdf[0];
        cdf.windows(2)
            .map(|w| {
                let m = (w[1] - w[0]).max(0.0);
                if inside > 0.0 {
                    m / inside
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// `Σ p ln(p/q)` over two discrete distributions. Terms with `p = 0` vanish;
/// `q` is floored at the smallest positive normal.
pub fn kl_divergence_probs(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(&p, &q)| p * (p / q.max(f64::MIN_POSITIVE)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Discrete KL divergence (nats) of the histogram from the predicted
/// distribution, after adding [`BIN_PSEUDO_COUNT`] to every bin.
pub fn kl_divergence(hist: &OffsetHistogram, pred: &impl OffsetDistribution) -> Result<f64> {
    let total = hist.total();
    if total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let denom = total as f64 + BIN_PSEUDO_COUNT * hist.counts.len() as f64;
    let p: Vec<f64> = hist
        .counts
        .iter()
        .map(|&c| (c as f64 + BIN_PSEUDO_COUNT) / denom)
        .collect();
    Ok(kl_divergence_probs(&p, &hist.model_mass(pred)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test with the gap evaluated at the model's deciles.
pub fn ks_test(samples: &[f64], pred: &impl OffsetDistribution) -> Result<KsResult> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: samples.len(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let statistic = (1..10)
        .map(|k| {
            let p = k as f64 / 10.0;
            let q = pred.quantile(p);
            let below = sorted.partition_point(|&x| x <= q) as f64;
            (below / n - p).abs()
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_sf(n.sqrt() * statistic),
        n: sorted.len(),
    })
}

/// Weighted mixture of ExGauss components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    components: Vec<(f64, ExGaussParams)>,
}

impl Mixture {
    pub fn new(components: Vec<(f64, ExGaussParams)>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.is_empty() || components.iter().any(|c| !(c.0 >= 0.0)) || !(total > 0.0) {
            return Err(Error::Invalid(
                "mixture weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(Self {
            components: components
                .into_iter()
                .map(|(w, p)| (w / total, p))
                .collect(),
        })
    }

    pub fn components(&self) -> &[(f64, ExGaussParams)] {
        &self.components
    }
}

impl OffsetDistribution for Mixture {
    fn cdf(&self, t: f64) -> f64 {
        self.components
            .iter()
            .map(|(w, p)| w * p.cdf(t))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    /// Groups by saccade amplitude only (vergence collapsed).
    SaccadeOnly,
    /// Groups by vergence amplitude only (saccade collapsed).
    VergenceOnly,
}

/// Trials regrouped along a single axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub axis: AblationAxis,
    /// One group per distinct value of the kept coordinate. The collapsed
    /// coordinate of each label is the mean over the pooled trials.
    pub groups: Vec<ConditionSamples>,
    assignment: BTreeMap<(i64, i64), usize>,
}

impl Ablation {
    /// Label of the group an original condition was pooled into.
    pub fn label_for(&self, d: GazeDisplacement) -> Option<GazeDisplacement> {
        self.assignment
            .get(&condition_key(d))
            .map(|&g| self.groups[g].displacement)
    }
}

pub fn ablate(rows: &[TrialRow], axis: AblationAxis) -> Ablation {
    let observations: Vec<(GazeDisplacement, f64)> = rows
        .iter()
        .filter_map(TrialRow::observation)
        .map(|(d, t)| (d.folded(), t))
        .collect();
    let kept_key = |d: GazeDisplacement| {
        let k = condition_key(d);
        match axis {
            AblationAxis::SaccadeOnly => k.1,
            AblationAxis::VergenceOnly => k.0,
        }
    };
    let mut pools: BTreeMap<i64, (Vec<f64>, GazeDisplacement, [f64; 2])> = BTreeMap::new();
    for &(d, t) in &observations {
        let e = pools
            .entry(kept_key(d))
            .or_insert((Vec::new(), d, [0.0; 2]));
        e.0.push(t);
        e.2[0] += d.d_vergence_deg;
        e.2[1] += d.d_saccade_deg;
    }
    let index: BTreeMap<i64, usize> = pools.keys().enumerate().map(|(i, &k)| (k, i)).collect();
    let groups = pools
        .into_values()
        .map(|(offsets, first, sums)| {
            let n = offsets.len() as f64;
            let displacement = match axis {
                AblationAxis::SaccadeOnly => {
                    GazeDisplacement::new(sums[0] / n, first.d_saccade_deg)
                }
                AblationAxis::VergenceOnly => {
                    GazeDisplacement::new(first.d_vergence_deg, sums[1] / n)
                }
            };
            ConditionSamples {
                displacement,
                offsets,
            }
        })
        .collect();
    let assignment = observations
        .iter()
        .map(|&(d, _)| (condition_key(d), index[&kept_key(d)]))
        .collect();
    Ablation {
        axis,
        groups,
        assignment,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scheme")]
pub enum SplitScheme {
    LeaveOneSubjectOut {
        subject: u32,
    },
    /// One eighth of every condition held out at random.
    UniformRandom {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<TrialRow>,
    pub test: Vec<TrialRow>,
}

pub fn split(rows: &[TrialRow], scheme: SplitScheme) -> Result<Split> {
    match scheme {
        SplitScheme::LeaveOneSubjectOut { subject } => {
            let subjects = subjects(rows)?;
            if !subjects.contains(&subject) {
                return Err(Error::Invalid(format!("no trials for subject {subject}")));
            }
            let (test, train) = rows
                .iter()
                .cloned()
                .partition(|r| r.subject == Some(subject));
            Ok(Split { train, test })
        }
        SplitScheme::UniformRandom { seed } => {
            let mut by_condition: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
            for (i, r) in rows.iter().enumerate() {
                by_condition
                    .entry(condition_key(r.displacement()))
                    .or_default()
                    .push(i);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut held = vec![false; rows.len()];
            for idx in by_condition.values_mut() {
                idx.shuffle(&mut rng);
                let k = (idx.len() as f64 / 8.0).round() as usize;
                for &i in &idx[..k] {
                    held[i] = true;
                }
            }
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (r, h) in rows.iter().zip(held) {
                if h { &mut test } else { &mut train }.push(r.clone());
            }
            Ok(Split { train, test })
        }
    }
}

/// Distinct subject labels in ascending order.
pub fn subjects(rows: &[TrialRow]) -> Result<Vec<u32>> {
    let mut s = rows
        .iter()
        .map(|r| r.subject.ok_or(Error::MissingSubjects))
        .collect::<Result<Vec<_>>>()?;
    s.sort_unstable();
    s.dedup();
    Ok(s)
}

/// Per-condition fit quality of a model on a trial table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub dv_deg: f64,
    pub ds_deg: f64,
    pub n: usize,
    pub kl_nats: f64,
    pub ks_d: f64,
    pub ks_p: f64,
}

pub fn evaluate(
    model: &GazeModel,
    rows: &[TrialRow],
    spec: HistogramSpec,
) -> Result<Vec<ConditionReport>> {
    group_by_condition(rows.iter().filter_map(TrialRow::observation))
        .par_iter()
        .map(|g| {
            let pred = model.predict(g.displacement)?;
            let hist = OffsetHistogram::from_samples(&g.offsets, spec)?;
            let ks = ks_test(&g.offsets, &pred)?;
            Ok(ConditionReport {
                dv_deg: g.displacement.d_vergence_deg,
                ds_deg: g.displacement.d_saccade_deg,
                n: g.offsets.len(),
                kl_nats: kl_divergence(&hist, &pred)?,
                ks_d: ks.statistic,
                ks_p: ks.p_value,
            })
        })
        .collect()
}

/// Fits and trains a model on every 2D condition of `rows`.
pub fn fit_full(rows: &[TrialRow], cfg: &TrainConfig) -> Result<GazeModel> {
    let groups = group_by_condition(rows.iter().filter_map(TrialRow::observation));
    train(&fit_conditions(&groups)?, cfg)
}

/// Fits and trains a model on the single-axis regrouping of `rows`.
pub fn fit_ablated(ablation: &Ablation, cfg: &TrainConfig) -> Result<GazeModel> {
    let cfg = TrainConfig {
        require_2d_layout: false,
        ..cfg.clone()
    };
    train(&fit_conditions(&ablation.groups)?, &cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dv_deg: f64,
    pub ds_deg: f64,
    pub n: usize,
    pub kl_full: f64,
    pub kl_sac: f64,
    pub kl_ver: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub histogram: HistogramSpec,
    pub rows: Vec<AblationRow>,
    pub mean_kl_full: f64,
    pub mean_kl_sac: f64,
    pub mean_kl_ver: f64,
}

/// Trained models for the FULL, SAC and VER variants of one dataset.
#[derive(Debug, Clone)]
pub struct AblationModels {
    pub full: GazeModel,
    pub sac: GazeModel,
    pub ver: GazeModel,
    pub sac_groups: Ablation,
    pub ver_groups: Ablation,
}

pub fn train_ablation_models(rows: &[TrialRow], cfg: &TrainConfig) -> Result<AblationModels> {
    let sac_groups = ablate(rows, AblationAxis::SaccadeOnly);
    let ver_groups = ablate(rows, AblationAxis::VergenceOnly);
    let (full, (sac, ver)) = rayon::join(
        || fit_full(rows, cfg),
        || {
            rayon::join(
                || fit_ablated(&sac_groups, cfg),
                || fit_ablated(&ver_groups, cfg),
            )
        },
    );
    Ok(AblationModels {
        full: full?,
        sac: sac?,
        ver: ver?,
        sac_groups,
        ver_groups,
    })
}

/// Per-condition KL of each variant. An ablated model predicts a condition
/// at the label of the group it was pooled into.
pub fn ablation_report(
    models: &AblationModels,
    rows: &[TrialRow],
    spec: HistogramSpec,
) -> Result<AblationReport> {
    let groups = group_by_condition(rows.iter().filter_map(TrialRow::observation));
    let scored: Vec<AblationRow> = groups
        .iter()
        .map(|g| {
            let d = g.displacement;
            let hist = OffsetHistogram::from_samples(&g.offsets, spec)?;
            let missing = || {
                Error::Invalid(format!(
                    "condition {} not in ablation",
                    crate::model::describe(d)
                ))
            };
            let sac_at = models.sac_groups.label_for(d).ok_or_else(missing)?;
            let ver_at = models.ver_groups.label_for(d).ok_or_else(missing)?;
            Ok(AblationRow {
                dv_deg: d.d_vergence_deg,
                ds_deg: d.d_saccade_deg,
                n: g.offsets.len(),
                kl_full: kl_divergence(&hist, &models.full.predict(d)?)?,
                kl_sac: kl_divergence(&hist, &models.sac.predict(sac_at)?)?,
                kl_ver: kl_divergence(&hist, &models.ver.predict(ver_at)?)?,
            })
        })
        .collect::<Result<_>>()?;
    let mean =
        |f: fn(&AblationRow) -> f64| scored.iter().map(f).sum::<f64>() / scored.len().max(1) as f64;
    Ok(AblationReport {
        histogram: spec,
        mean_kl_full: mean(|r| r.kl_full),
        mean_kl_sac: mean(|r| r.kl_sac),
        mean_kl_ver: mean(|r| r.kl_ver),
        rows: scored,
    })
}

/// KS test of pooled held-out trials against the model's prediction
/// mixture, weighted by the held-out count per condition.
pub fn holdout_ks(model: &GazeModel, test: &[TrialRow]) -> Result<KsResult> {
    let groups = group_by_condition(test.iter().filter_map(TrialRow::observation));
    let components = groups
        .iter()
        .map(|g| Ok((g.offsets.len() as f64, model.predict(g.displacement)?)))
        .collect::<Result<Vec<_>>>()?;
    let pooled: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.offsets.iter().copied())
        .collect();
    ks_test(&pooled, &Mixture::new(components)?)
}

//! Run configuration: a TOML or JSON file mirroring the command-line flags.
//! Flags given on the command line win over the file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use stereo_offset::eval::{HistogramSpec, DEFAULT_BINS, DEFAULT_RANGE_S};
use stereo_offset::model::Optimizer;
use stereo_offset::trials::DatasetConfig;
use stereo_offset::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub subjects: Option<u32>,
    pub trials: Option<usize>,
    pub noise_deg: Option<f64>,
    pub lr: Option<f64>,
    pub iters: Option<usize>,
    pub optimizer: Option<Optimizer>,
    pub bins: Option<Vec<usize>>,
    pub range_s: Option<[f64; 2]>,
    pub ipd_mm: Option<f64>,
    pub saccade_range_deg: Option<[f64; 2]>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(anyhow::Error::from),
            Some("json") => serde_json::from_str(&text).map_err(anyhow::Error::from),
            _ => bail!("config {} must end in .toml or .json", path.display()),
        };
        parsed.with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn overridden_by(self, flags: FileConfig) -> Self {
        Self {
            seed: flags.seed.or(self.seed),
            subjects: flags.subjects.or(self.subjects),
            trials: flags.trials.or(self.trials),
            noise_deg: flags.noise_deg.or(self.noise_deg),
            lr: flags.lr.or(self.lr),
            iters: flags.iters.or(self.iters),
            optimizer: flags.optimizer.or(self.optimizer),
            bins: flags.bins.or(self.bins),
            range_s: flags.range_s.or(self.range_s),
            ipd_mm: flags.ipd_mm.or(self.ipd_mm),
            saccade_range_deg: flags.saccade_range_deg.or(self.saccade_range_deg),
        }
    }
}

/// Fully resolved settings; recorded in every output manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub subjects: u32,
    pub trials: usize,
    pub noise_deg: f64,
    pub lr: f64,
    pub iters: usize,
    pub optimizer: Optimizer,
    pub bins: Vec<usize>,
    pub range_s: [f64; 2],
    pub ipd_mm: f64,
    pub saccade_range_deg: [f64; 2],
}

impl From<FileConfig> for RunConfig {
    fn from(f: FileConfig) -> Self {
        let data = DatasetConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: f.seed.unwrap_or(0),
            subjects: f.subjects.unwrap_or(data.subjects),
            trials: f.trials.unwrap_or(data.trials_per_condition),
            noise_deg: f.noise_deg.unwrap_or(data.noise_deg),
            lr: f.lr.unwrap_or(train.learning_rate),
            iters: f.iters.unwrap_or(train.iterations),
            optimizer: f.optimizer.unwrap_or(train.optimizer),
            bins: f.bins.unwrap_or_else(|| vec![DEFAULT_BINS]),
            range_s: f.range_s.unwrap_or([DEFAULT_RANGE_S.0, DEFAULT_RANGE_S.1]),
            ipd_mm: f.ipd_mm.unwrap_or(63.0),
            saccade_range_deg: f.saccade_range_deg.unwrap_or([4.0, 12.0]),
        }
    }
}

impl RunConfig {
    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            subjects: self.subjects,
            trials_per_condition: self.trials,
            noise_deg: self.noise_deg,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            iterations: self.iters,
            seed: self.seed,
            optimizer: self.optimizer,
            ..Default::default()
        }
    }

    pub fn histograms(&self) -> Vec<HistogramSpec> {
        self.bins
            .iter()
            .map(|&bins| HistogramSpec {
                bins,
                range_s: (self.range_s[0], self.range_s[1]),
            })
            .collect()
    }

    pub fn saccade_range(&self) -> (f64, f64) {
        (self.saccade_range_deg[0], self.saccade_range_deg[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = FileConfig {
            seed: Some(5),
            lr: Some(0.1),
            ..Default::default()
        };
        let flags = FileConfig {
            seed: Some(9),
            ..Default::default()
        };
        let run = RunConfig::from(file.overridden_by(flags));
        assert_eq!(run.seed, 9);
        assert_eq!(run.lr, 0.1);
        assert_eq!(run.iters, 200_000);
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        let j = dir.path().join("c.json");
        std::fs::write(&t, "seed = 3\nbins = [25, 50]\noptimizer = \"gradient\"\n").unwrap();
        std::fs::write(
            &j,
            r#"{"seed": 3, "bins": [25, 50], "optimizer": "gradient"}"#,
        )
        .unwrap();
        assert_eq!(FileConfig::load(&t).unwrap(), FileConfig::load(&j).unwrap());
        std::fs::write(&t, "sede = 3\n").unwrap();
        assert!(FileConfig::load(&t).is_err());
    }
}

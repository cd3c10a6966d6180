use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symrom::aslip::AslipParams;
use symrom::data::PreprocessOptions;
use symrom::pipeline::TrainingConfig;
use symrom::rollout::RolloutConfig;
use symrom::synthetic::SyntheticSpec;

use crate::{CliError, Common};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub l_values: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            l_values: (1..=8).collect(),
            seeds: (0..5).collect(),
        }
    }
}

/// Everything a run reads, from the config file with flag overrides applied.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub parallel: bool,
    /// Actuated joints, for dataset directories without a manifest.
    pub joints: Option<usize>,
    pub preprocess: PreprocessOptions,
    pub training: TrainingConfig,
    pub rollout: RolloutConfig,
    pub aslip: AslipParams,
    pub scan: ScanConfig,
    /// Overrides the `--preset` of `gen`.
    pub synthetic: Option<SyntheticSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.message().to_string(),
            offset: e.span().map_or(0, |s| s.start),
        })
    }

    /// Reads `--config` when given and applies the remaining flags on top.
    pub fn resolve(common: &Common) -> Result<Self, CliError> {
        let mut cfg = match &common.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(p) = &common.dataset {
            cfg.dataset = Some(p.clone());
        }
        if let Some(p) = &common.model {
            cfg.model = Some(p.clone());
        }
        if let Some(p) = &common.out {
            cfg.out = Some(p.clone());
        }
        if common.parallel {
            cfg.parallel = true;
        }
        if let Some(seed) = common.seed {
            cfg.training.seed = seed;
            if let Some(s) = &mut cfg.synthetic {
                s.seed = seed;
            }
        }
        if let Some(l) = common.latent_dim {
            cfg.training.latent_dim = l;
        }
        if let Some(t) = common.threshold {
            cfg.training.sindy.threshold = t;
        }
        if let Some(r) = common.reset_interval {
            cfg.rollout.reset_interval = r;
        }
        if let Some(m) = common.integrator {
            cfg.rollout.integrator.method = m;
        }
        Ok(cfg)
    }

    pub fn dataset(&self) -> Result<&Path, CliError> {
        self.dataset
            .as_deref()
            .ok_or_else(|| CliError::Usage("no dataset given (--dataset or `dataset` in the config)".into()))
    }

    pub fn model(&self) -> Result<&Path, CliError> {
        self.model
            .as_deref()
            .ok_or_else(|| CliError::Usage("no model given (--model or `model` in the config)".into()))
    }

    /// `--out`, else `$SYMROM_OUT/<command>`, else `runs/<command>`.
    pub fn out_dir(&self, root: Option<&Path>, command: &str) -> PathBuf {
        match (&self.out, root) {
            (Some(p), _) => p.clone(),
            (None, Some(r)) => r.join(command),
            (None, None) => Path::new("runs").join(command),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional() {
        let cfg: RunConfig = toml::from_str("parallel = true\n[training]\nlatent_dim = 4\n[aslip]\nk_s = 10.0\n").unwrap();
        assert!(cfg.parallel);
        assert_eq!(cfg.training.latent_dim, 4);
        assert_eq!(cfg.aslip.k_s, 10.0);
        assert_eq!(cfg.aslip.g, 9.81);
        assert_eq!(cfg.scan.l_values.len(), 8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }

    #[test]
    fn default_round_trips() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.training, TrainingConfig::default());
    }
}

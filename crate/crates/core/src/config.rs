//! Run configuration files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{GcdConfig, ProbeConfig};
use crate::data::fixtures::{generate_fixtures, FixtureConfig};
use crate::data::Split;
use crate::error::{Error, Result};
use crate::metrics::EvalOptions;
use crate::model::backbone::BackboneConfig;
use crate::model::encoder::EncoderConfig;
use crate::model::ModelConfig;
use crate::tasks::SocialTask;
use crate::train::{Regime, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest per task, keyed by task name (`LAM`, `PISC`, ...). PISC's
    /// manifest carries both of its subtasks.
    pub manifests: BTreeMap<String, PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    pub batch_size: usize,
    pub auc_radius: usize,
    /// Also write `metrics_train.json` with training-split metrics.
    pub train_metrics: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: Split::Val,
            batch_size: 32,
            auc_radius: 0,
            train_metrics: false,
        }
    }
}

impl EvalConfig {
    pub fn options(&self, split: Split) -> EvalOptions {
        EvalOptions {
            split,
            batch_size: self.batch_size,
            auc_radius: self.auc_radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynergyConfig {
    /// Parallel training runs.
    pub jobs: usize,
    /// Overrides `train.epochs` for sweep runs.
    pub epochs: Option<usize>,
}

impl Default for SynergyConfig {
    fn default() -> Self {
        Self { jobs: 1, epochs: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `train.seed` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Default regime for `train`; the command line overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub gcd: GcdConfig,
    #[serde(default)]
    pub synergy: SynergyConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    /// Parses and validates a config. Schema errors name the offending
    /// field path.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config(e.to_string()))?;
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(format!("at `{path}`: {}", e.into_inner().message().trim()))
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.manifests.is_empty() {
            return Err(Error::config("at `data.manifests`: no manifests configured"));
        }
        for key in self.data.manifests.keys() {
            key.parse::<SocialTask>()
                .map_err(|e| Error::config(format!("at `data.manifests.{key}`: {e}")))?;
        }
        self.train.validate()?;
        if self.eval.batch_size == 0 {
            return Err(Error::config("at `eval.batch_size`: must be at least 1"));
        }
        if self.synergy.jobs == 0 {
            return Err(Error::config("at `synergy.jobs`: must be at least 1"));
        }
        self.probe.validate()?;
        self.gcd.validate()?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Configured tasks with resolved manifest paths, in report order.
    pub fn manifests(&self) -> Vec<(SocialTask, PathBuf)> {
        let mut out: Vec<(SocialTask, PathBuf)> = self
            .data
            .manifests
            .iter()
            .filter_map(|(k, p)| Some((k.parse().ok()?, self.resolve(p))))
            .collect();
        out.sort_by_key(|(t, _)| SocialTask::ALL.iter().position(|x| x == t));
        out
    }

    pub fn tasks(&self) -> Vec<SocialTask> {
        self.manifests().into_iter().map(|(t, _)| t).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(s) = self.seed {
            t.seed = s;
        }
        t
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    /// Small-model settings for the synthetic fixtures in `manifests`.
    pub fn desk(manifests: BTreeMap<String, PathBuf>, image_size: usize) -> Self {
        RunConfig {
            seed: None,
            regime: None,
            output_dir: default_output_dir(),
            model: ModelConfig {
                encoder: EncoderConfig {
                    name: "patch-random".into(),
                    image_size,
                    patch_size: 8,
                    feature_dim: 32,
                    seed: 17,
                },
                backbone: BackboneConfig {
                    name: "toy-transformer".into(),
                    d_model: 32,
                    layers: 2,
                    ffn_dim: 64,
                    max_context: 1024,
                    seed: 29,
                },
                connector_hidden: 64,
                lora_rank: 8,
                heatmap_size: 32,
                heatmap_sigma: 2.0,
                init_seed: 7,
            },
            data: DataConfig { manifests },
            train: TrainConfig {
                lr: 3e-3,
                warmup_steps: 50,
                batch_size: 16,
                epochs: 30,
                // per-pixel BCE is small next to token CE on this scale
                lambda_heatmap: Some(1.0),
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            probe: ProbeConfig::default(),
            gcd: GcdConfig::default(),
            synergy: SynergyConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }

    /// Generates the synthetic fixtures into `dir` and writes a matching
    /// `desk.toml` beside them. Returns the config path.
    pub fn write_desk(dir: &Path, fixtures: &FixtureConfig) -> Result<PathBuf> {
        let summary = generate_fixtures(dir, fixtures)?;
        let cfg = Self::desk(summary.manifest_map(fixtures), fixtures.image_size as usize);
        let path = dir.join("desk.toml");
        fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "[data.manifests]\nLAM = \"lam.jsonl\"\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::from_toml_str(MIN, Path::new("/cfg")).unwrap();
        assert_eq!(c.train.lr, 2e-4);
        assert_eq!(c.model.lora_rank, 32);
        assert_eq!(c.manifests(), vec![(SocialTask::Lam, PathBuf::from("/cfg/lam.jsonl"))]);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let text = format!("{MIN}[train]\nlr = 0.1\nmomentum = 0.9\n");
        let e = RunConfig::from_toml_str(&text, Path::new(".")).unwrap_err();
        assert!(e.is_config_error());
        assert!(e.to_string().contains("train.momentum"), "{e}");
    }

    #[test]
    fn bad_task_key_is_rejected() {
        let e = RunConfig::from_toml_str("[data.manifests]\nFOO = \"x\"\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("data.manifests.FOO"), "{e}");
        let e = RunConfig::from_toml_str(&format!("{MIN}[train]\nlr = -1.0\n"), Path::new(".")).unwrap_err();
        assert!(e.is_config_error());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut m = BTreeMap::new();
        m.insert("LAM".to_string(), PathBuf::from("lam.jsonl"));
        let mut c = RunConfig::desk(m, 48);
        c.regime = Some(Regime::Joint);
        c.seed = Some(4);
        let back = RunConfig::from_toml_str(&c.to_toml().unwrap(), Path::new(".")).unwrap();
        assert_eq!(back, c);
    }
}

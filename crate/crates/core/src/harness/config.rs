//! Flat `key = value` run configuration.
//!
//! Every key has a default. A file sets keys, `--set key=value` overrides
//! them, and the variant and ablations are folded in last. The rendered
//! form lists every key with its resolved value, so a rendered config parses
//! back to the same run.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::datahub::SynthSpec;
use crate::error::{Error, Result};
use crate::graphs::ModalityWeights;
use crate::recmodel::{Ablation, ScoreView, TrainConfig, Variant};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// A directory written by `prepare`.
    Prepared(PathBuf),
    /// Generated in memory on every run.
    Synth(SynthSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub train: TrainConfig,
    pub variant: Variant,
    pub ablations: Vec<Ablation>,
    /// Test cutoffs.
    pub ks: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::Synth(SynthSpec::default()),
            train: TrainConfig::default(),
            variant: Variant::Full,
            ablations: Vec::new(),
            ks: vec![10, 20],
        }
    }
}

/// Every accepted key, in rendering order.
pub const KEYS: &[&str] = &[
    "data",
    "synth.users",
    "synth.items",
    "synth.clusters",
    "synth.dim",
    "synth.noise",
    "synth.interactions",
    "synth.in_cluster",
    "synth.seed",
    "seed",
    "variant",
    "ablation",
    "dim",
    "layers_ui",
    "layers_ii",
    "k",
    "epsilon",
    "phi_visual",
    "lambda_cl",
    "lambda_reg",
    "tau",
    "score_view",
    "steps",
    "noise_scale",
    "alpha_min",
    "alpha_max",
    "latent_dim",
    "omega",
    "p_mu",
    "refresh_interval",
    "batch_size",
    "lr",
    "bgd_batch_size",
    "bgd_passes",
    "bgd_lr",
    "patience",
    "max_epochs",
    "ks",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl RunConfig {
    fn synth_mut(&mut self, key: &str) -> Result<&mut SynthSpec> {
        match &mut self.data {
            DataSource::Synth(s) => Ok(s),
            DataSource::Prepared(_) => Err(Error::Config(format!("{key} requires data = synth"))),
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "data" => {
                self.data = if value == "synth" {
                    DataSource::Synth(SynthSpec::default())
                } else {
                    DataSource::Prepared(PathBuf::from(value))
                }
            }
            "synth.users" => self.synth_mut(key)?.num_users = parse_num(key, value)?,
            "synth.items" => self.synth_mut(key)?.num_items = parse_num(key, value)?,
            "synth.clusters" => self.synth_mut(key)?.num_clusters = parse_num(key, value)?,
            "synth.dim" => self.synth_mut(key)?.feature_dim = parse_num(key, value)?,
            "synth.noise" => self.synth_mut(key)?.noise_level = parse_num(key, value)?,
            "synth.interactions" => self.synth_mut(key)?.interactions_per_user = parse_num(key, value)?,
            "synth.in_cluster" => self.synth_mut(key)?.in_cluster_prob = parse_num(key, value)?,
            "synth.seed" => self.synth_mut(key)?.seed = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "ablation" => {
                self.ablations = if value == "none" {
                    Vec::new()
                } else {
                    value.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?
                }
            }
            "dim" => t.model.dim = parse_num(key, value)?,
            "layers_ui" => t.model.layers_ui = parse_num(key, value)?,
            "layers_ii" => t.model.layers_ii = parse_num(key, value)?,
            "k" => t.knn_k = parse_num(key, value)?,
            "epsilon" => t.epsilon = parse_num(key, value)?,
            "phi_visual" => t.weights = ModalityWeights::from_visual(parse_num(key, value)?),
            "lambda_cl" => t.model.lambda_cl = parse_num(key, value)?,
            "lambda_reg" => t.model.lambda_reg = parse_num(key, value)?,
            "tau" => t.model.tau = parse_num(key, value)?,
            "score_view" => {
                t.model.score_view = match value {
                    "diffusion" => ScoreView::Diffusion,
                    "semantic" => ScoreView::Semantic,
                    _ => {
                        return Err(Error::Config(format!(
                            "score_view must be diffusion or semantic, got {value:?}"
                        )))
                    }
                }
            }
            "steps" => t.bgd.steps = parse_num(key, value)?,
            "noise_scale" => t.bgd.noise_scale = parse_num(key, value)?,
            "alpha_min" => t.bgd.alpha_min = parse_num(key, value)?,
            "alpha_max" => t.bgd.alpha_max = parse_num(key, value)?,
            "latent_dim" => {
                t.bgd.latent_dim = if value == "none" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "omega" => t.bgd.omega = parse_num(key, value)?,
            "p_mu" => t.bgd.p_mu = parse_num(key, value)?,
            "refresh_interval" => t.refresh_interval = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "lr" => t.lr = parse_num(key, value)?,
            "bgd_batch_size" => t.bgd.batch_size = parse_num(key, value)?,
            "bgd_passes" => t.bgd.passes = parse_num(key, value)?,
            "bgd_lr" => t.bgd.lr = parse_num(key, value)?,
            "patience" => t.patience = parse_num(key, value)?,
            "max_epochs" => t.max_epochs = parse_num(key, value)?,
            "ks" => self.ks = parse_list(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Current value of `key` in rendered form.
    pub fn get(&self, key: &str) -> Result<String> {
        let t = &self.train;
        let synth = match &self.data {
            DataSource::Synth(s) => Some(s),
            DataSource::Prepared(_) => None,
        };
        let sv = |f: &dyn Fn(&SynthSpec) -> String| synth.map(f).unwrap_or_else(|| "-".into());
        Ok(match key {
            "data" => match &self.data {
                DataSource::Synth(_) => "synth".into(),
                DataSource::Prepared(p) => p.display().to_string(),
            },
            "synth.users" => sv(&|s| s.num_users.to_string()),
            "synth.items" => sv(&|s| s.num_items.to_string()),
            "synth.clusters" => sv(&|s| s.num_clusters.to_string()),
            "synth.dim" => sv(&|s| s.feature_dim.to_string()),
            "synth.noise" => sv(&|s| format!("{:?}", s.noise_level)),
            "synth.interactions" => sv(&|s| s.interactions_per_user.to_string()),
            "synth.in_cluster" => sv(&|s| format!("{:?}", s.in_cluster_prob)),
            "synth.seed" => sv(&|s| s.seed.to_string()),
            "seed" => t.seed.to_string(),
            "variant" => self.variant.name().into(),
            "ablation" => {
                if self.ablations.is_empty() {
                    "none".into()
                } else {
                    self.ablations.iter().map(|a| a.name()).collect::<Vec<_>>().join(",")
                }
            }
            "dim" => t.model.dim.to_string(),
            "layers_ui" => t.model.layers_ui.to_string(),
            "layers_ii" => t.model.layers_ii.to_string(),
            "k" => t.knn_k.to_string(),
            "epsilon" => format!("{:?}", t.epsilon),
            "phi_visual" => format!("{:?}", t.weights.visual),
            "lambda_cl" => format!("{:?}", t.model.lambda_cl),
            "lambda_reg" => format!("{:?}", t.model.lambda_reg),
            "tau" => format!("{:?}", t.model.tau),
            "score_view" => match t.model.score_view {
                ScoreView::Diffusion => "diffusion".into(),
                ScoreView::Semantic => "semantic".into(),
            },
            "steps" => t.bgd.steps.to_string(),
            "noise_scale" => format!("{:?}", t.bgd.noise_scale),
            "alpha_min" => format!("{:?}", t.bgd.alpha_min),
            "alpha_max" => format!("{:?}", t.bgd.alpha_max),
            "latent_dim" => t.bgd.latent_dim.map_or("none".into(), |k| k.to_string()),
            "omega" => format!("{:?}", t.bgd.omega),
            "p_mu" => format!("{:?}", t.bgd.p_mu),
            "refresh_interval" => t.refresh_interval.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => format!("{:?}", t.lr),
            "bgd_batch_size" => t.bgd.batch_size.to_string(),
            "bgd_passes" => t.bgd.passes.to_string(),
            "bgd_lr" => format!("{:?}", t.bgd.lr),
            "patience" => t.patience.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "ks" => self.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        })
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: "expected `key = value`".into(),
            })?;
            let k = k.trim();
            // Placeholders for synth keys of a prepared-data config.
            if k.starts_with("synth.") && v.trim() == "-" {
                continue;
            }
            self.set(k, v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Folds variant and ablations into the training config and validates.
    /// Idempotent.
    pub fn resolve(mut self) -> Result<Self> {
        self.variant.apply(&mut self.train);
        for a in &self.ablations {
            a.apply(&mut self.train);
        }
        self.ablations.sort_by_key(|a| a.name());
        self.ablations.dedup();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.train.bgd.schedule()?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must list positive cutoffs".into()));
        }
        if let DataSource::Synth(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }

    /// `(key, value)` for every key.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|&k| (k, self.get(k).expect("listed key"))).collect()
    }

    pub fn render(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the rendered form, hex encoded.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.render().as_bytes()))
    }
}

/// Parses `users=200 items=100 clusters=2 seed=7` style synthetic specs.
pub fn parse_synth_spec<S: AsRef<str>>(tokens: &[S]) -> Result<SynthSpec> {
    let mut spec = SynthSpec::default();
    for tok in tokens {
        for kv in tok.as_ref().split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("synthetic spec entry {kv:?} is not key=value")))?;
            match k {
                "users" => spec.num_users = parse_num(k, v)?,
                "items" => spec.num_items = parse_num(k, v)?,
                "clusters" => spec.num_clusters = parse_num(k, v)?,
                "dim" => spec.feature_dim = parse_num(k, v)?,
                "noise" => spec.noise_level = parse_num(k, v)?,
                "interactions" => spec.interactions_per_user = parse_num(k, v)?,
                "in_cluster" => spec.in_cluster_prob = parse_num(k, v)?,
                "seed" => spec.seed = parse_num(k, v)?,
                _ => return Err(Error::Config(format!("unknown synthetic spec key {k:?}"))),
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}

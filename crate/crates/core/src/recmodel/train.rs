//! The outer training loop: periodic diffusion refresh, BPR epochs on the
//! joint objective, validation-driven early stopping.

use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::model::{score_matrix, LossParts, ModelConfig, PropagationGraphs, RecModel};
use crate::bgd::{Bgd, BgdConfig, CdNet};
use crate::datahub::{sample_bpr_triplets, InteractionDataset, ModalityFeatures};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EarlyStopping, MetricReport};
use crate::graphs::{build_behavioral, build_bipartite, normalize_sym, ModalityWeights, SemanticGraph};
use crate::numerics::{Matrix, SparseMatrix, SparseOperator};
use crate::recmodel::EmbeddingTable;
use crate::rng;

/// Cutoff used for model selection.
pub const SELECTION_K: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Diffusion graph refreshed every epoch.
    Full,
    /// Diffusion graph refreshed every five epochs.
    PeriodicRefresh,
    /// Interaction graph only: no item graphs, no diffusion, no contrast.
    NoItemGraph,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "igdmrec",
            Variant::PeriodicRefresh => "igdmrec-star",
            Variant::NoItemGraph => "no-item-graph",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Variant::Full => cfg.use_item_graphs = true,
            Variant::PeriodicRefresh => {
                cfg.use_item_graphs = true;
                cfg.refresh_interval = 5;
            }
            Variant::NoItemGraph => cfg.use_item_graphs = false,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Variant::Full, Variant::PeriodicRefresh, Variant::NoItemGraph]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected igdmrec, igdmrec-star or no-item-graph"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// No behavioral conditioning: guidance -1, condition always dropped.
    WoCi,
    /// No contrastive term.
    WoCl,
    /// Denoising network without encoder and decoder.
    WoEd,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::WoCi => "wo-ci",
            Ablation::WoCl => "wo-cl",
            Ablation::WoEd => "wo-ed",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Ablation::WoCi => {
                cfg.bgd.omega = -1.0;
                cfg.bgd.p_mu = 1.0;
            }
            Ablation::WoCl => cfg.model.lambda_cl = 0.0,
            Ablation::WoEd => cfg.bgd.latent_dim = None,
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Ablation::WoCi, Ablation::WoCl, Ablation::WoEd]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}; expected wo-ci, wo-cl or wo-ed")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub bgd: BgdConfig,
    pub knn_k: usize,
    pub epsilon: f64,
    pub weights: ModalityWeights,
    pub refresh_interval: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub use_item_graphs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            bgd: BgdConfig::default(),
            knn_k: 10,
            epsilon: 2.0,
            weights: ModalityWeights::default(),
            refresh_interval: 1,
            batch_size: 2048,
            lr: 1e-3,
            patience: 20,
            max_epochs: 1000,
            seed: 0,
            use_item_graphs: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.bgd.validate()?;
        self.weights.validate()?;
        if self.knn_k == 0 || self.refresh_interval == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "k, refresh interval, batch size and max epochs must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config("lr must be positive and epsilon finite".into()));
        }
        Ok(())
    }
}

/// Graphs fixed for a whole run.
#[derive(Clone, Debug)]
pub struct StaticGraphs {
    pub bipartite: Arc<SparseOperator>,
    pub semantic: Option<SemanticGraph>,
    pub semantic_op: Option<Arc<SparseOperator>>,
    pub behavioral: Option<Matrix>,
}

impl StaticGraphs {
    pub fn build(ds: &InteractionDataset, features: &[&ModalityFeatures], cfg: &TrainConfig) -> Result<Self> {
        let bipartite = Arc::new(SparseOperator::new(build_bipartite(ds)?));
        if !cfg.use_item_graphs {
            return Ok(StaticGraphs {
                bipartite,
                semantic: None,
                semantic_op: None,
                behavioral: None,
            });
        }
        for f in features {
            if f.num_items() != ds.num_items() {
                return Err(Error::Data(format!(
                    "{} features cover {} items, dataset has {}",
                    f.modality,
                    f.num_items(),
                    ds.num_items()
                )));
            }
        }
        let semantic = SemanticGraph::build(features, cfg.knn_k, cfg.weights)?;
        let semantic_op = Arc::new(SparseOperator::from_dense(&semantic.normalized()?));
        let behavioral = build_behavioral(ds, cfg.knn_k, cfg.epsilon)?.adjacency;
        Ok(StaticGraphs {
            bipartite,
            semantic: Some(semantic),
            semantic_op: Some(semantic_op),
            behavioral: Some(behavioral),
        })
    }

    pub fn propagation(&self, diffusion: Option<&Matrix>) -> PropagationGraphs {
        PropagationGraphs {
            bipartite: self.bipartite.clone(),
            semantic: self.semantic_op.clone(),
            diffusion: diffusion.map(diffusion_operator),
        }
    }
}

pub fn diffusion_operator(sd: &Matrix) -> Arc<SparseOperator> {
    Arc::new(SparseOperator::new(SparseMatrix::from_dense(&normalize_sym(sd))))
}

/// Everything needed to score users, as saved in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub embeddings: EmbeddingTable,
    pub cdnet: Option<CdNet>,
    /// Binary diffusion-aware item graph in use.
    pub diffusion_graph: Option<Matrix>,
}

impl ModelState {
    pub fn scores(&self, graphs: &StaticGraphs, cfg: &ModelConfig) -> Result<Matrix> {
        score_matrix(
            &self.embeddings,
            &graphs.propagation(self.diffusion_graph.as_ref()),
            cfg,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub bpr: f64,
    pub cl: f64,
    pub reg: f64,
    pub refreshed: bool,
    pub bgd_loss: Option<f64>,
    pub val_recall: f64,
    pub best: bool,
}

/// Wall-clock measurements; never part of deterministic reports.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub total_seconds: f64,
    pub bgd_seconds: f64,
    pub refreshes: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: ModelState,
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub timings: Timings,
}

fn mean_parts(parts: &[LossParts]) -> LossParts {
    let n = parts.len().max(1) as f64;
    let mut m = LossParts::default();
    for p in parts {
        m.bpr += p.bpr;
        m.cl += p.cl;
        m.reg += p.reg;
        m.total += p.total;
    }
    LossParts {
        bpr: m.bpr / n,
        cl: m.cl / n,
        reg: m.reg / n,
        total: m.total / n,
    }
}

pub fn train(ds: &InteractionDataset, graphs: &StaticGraphs, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mut model = RecModel::new(
        ds.num_users(),
        ds.num_items(),
        cfg.model.clone(),
        cfg.lr,
        &mut rng::stream(cfg.seed, "init"),
    )?;
    let mut bgd = if cfg.use_item_graphs {
        Some(Bgd::new(
            ds.num_items(),
            cfg.bgd.clone(),
            &mut rng::stream(cfg.seed, "init/cdnet"),
        )?)
    } else {
        None
    };
    let mut bgd_rng = rng::stream(cfg.seed, "bgd");
    let mut diffusion_graph: Option<Matrix> = None;
    let mut diffusion_op = None;
    let mut timings = Timings::default();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut epochs = Vec::new();
    let mut best = ModelState {
        embeddings: model.embeddings.clone(),
        cdnet: bgd.as_ref().map(|b| b.net.clone()),
        diffusion_graph: None,
    };
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let mut bgd_loss = None;
        let refreshed = bgd.is_some() && (epoch - 1) % cfg.refresh_interval == 0;
        if refreshed {
            let b = bgd.as_mut().expect("checked above");
            let (s, sc) = (
                &graphs.semantic.as_ref().expect("item graphs enabled").fused,
                graphs.behavioral.as_ref().expect("item graphs enabled"),
            );
            let t0 = Instant::now();
            bgd_loss = Some(b.train(s, sc, &mut bgd_rng)?);
            let sd = b.diffusion_graph(s, sc, cfg.knn_k)?;
            timings.bgd_seconds += t0.elapsed().as_secs_f64();
            timings.refreshes += 1;
            diffusion_op = Some(diffusion_operator(&sd));
            diffusion_graph = Some(sd);
        }
        let prop = PropagationGraphs {
            bipartite: graphs.bipartite.clone(),
            semantic: graphs.semantic_op.clone(),
            diffusion: diffusion_op.clone(),
        };

        let sample = sample_bpr_triplets(ds, rng::derive_seed(cfg.seed, &format!("epoch/{epoch}")));
        let mut parts = Vec::new();
        for (b, chunk) in sample.triplets.chunks(cfg.batch_size).enumerate() {
            let p = model.train_batch(&prop, chunk).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
            parts.push(p);
        }
        let loss = mean_parts(&parts);

        let scores = score_matrix(&model.embeddings, &prop, &cfg.model)?;
        let val = evaluate(&scores, ds, ds.val(), &[SELECTION_K])?.recall_at(SELECTION_K);
        let improved = stopper.observe(epoch, val);
        if improved {
            best = ModelState {
                embeddings: model.embeddings.clone(),
                cdnet: bgd.as_ref().map(|b| b.net.clone()),
                diffusion_graph: diffusion_graph.clone(),
            };
        }
        debug!(
            "epoch {epoch}: loss {:.6} bpr {:.6} cl {:.6} val R@{SELECTION_K} {val:.5}{}",
            loss.total,
            loss.bpr,
            loss.cl,
            if improved { " *" } else { "" }
        );
        epochs.push(EpochRecord {
            epoch,
            loss: loss.total,
            bpr: loss.bpr,
            cl: loss.cl,
            reg: loss.reg,
            refreshed,
            bgd_loss,
            val_recall: val,
            best: improved,
        });
        if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }
    timings.total_seconds = started.elapsed().as_secs_f64();
    info!(
        "trained {} epochs, best epoch {} with val R@{SELECTION_K} {:.5}",
        epochs.len(),
        stopper.best_epoch(),
        stopper.best()
    );
    Ok(TrainOutcome {
        best,
        best_epoch: stopper.best_epoch(),
        epochs,
        stopped_early,
        timings,
    })
}

/// Test-split metrics of a trained state.
pub fn test_metrics(
    ds: &InteractionDataset,
    graphs: &StaticGraphs,
    state: &ModelState,
    cfg: &ModelConfig,
    ks: &[usize],
) -> Result<MetricReport> {
    evaluate(&state.scores(graphs, cfg)?, ds, ds.test(), ks)
}

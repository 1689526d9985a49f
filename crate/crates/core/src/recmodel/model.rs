//! Embeddings, graph propagation, view fusion and the losses.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datahub::Triplet;
use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform, AdamConfig, AdamState, Matrix, SparseOperator, Tape, Var};

/// Which fused item view scores users at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreView {
    /// Interaction view plus diffusion-graph view.
    Diffusion,
    /// Interaction view plus semantic-graph view.
    Semantic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers_ui: usize,
    pub layers_ii: usize,
    pub lambda_cl: f64,
    pub lambda_reg: f64,
    pub tau: f64,
    pub score_view: ScoreView,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            layers_ui: 2,
            layers_ii: 1,
            lambda_cl: 0.01,
            lambda_reg: 1e-7,
            tau: 0.2,
            score_view: ScoreView::Diffusion,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding size d must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "temperature tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.lambda_cl >= 0.0) || !(self.lambda_reg >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub user: Matrix,
    pub item: Matrix,
}

impl EmbeddingTable {
    pub fn new<R: Rng + ?Sized>(num_users: usize, num_items: usize, dim: usize, rng: &mut R) -> Self {
        EmbeddingTable {
            user: xavier_uniform(num_users, dim, rng),
            item: xavier_uniform(num_items, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.user.cols()
    }
}

/// Normalised propagation operators. Item graphs are absent in the
/// interaction-only baseline; the diffusion graph is absent until the first
/// refresh.
#[derive(Clone, Debug)]
pub struct PropagationGraphs {
    pub bipartite: Arc<SparseOperator>,
    pub semantic: Option<Arc<SparseOperator>>,
    pub diffusion: Option<Arc<SparseOperator>>,
}

/// Tape handles of every representation.
#[derive(Clone, Copy, Debug)]
pub struct Views {
    pub user: Var,
    pub item_ui: Var,
    pub semantic: Option<Var>,
    pub diffusion: Option<Var>,
    /// Interaction view plus semantic view.
    pub fused_semantic: Var,
    /// Interaction view plus diffusion view.
    pub fused: Var,
}

/// Mean of layers `0..=layers` of `H^l = A H^{l-1}`, split into user and
/// item blocks.
pub fn propagate_bipartite(
    tape: &mut Tape,
    op: &Arc<SparseOperator>,
    user: Var,
    item: Var,
    layers: usize,
) -> Result<(Var, Var)> {
    let nu = tape.shape(user).0;
    let ni = tape.shape(item).0;
    let h0 = tape.concat_rows(&[user, item])?;
    let mut h = h0;
    let mut acc = h0;
    for _ in 0..layers {
        h = tape.spmm(op, h)?;
        acc = tape.add(acc, h)?;
    }
    let mean = tape.scale(acc, 1.0 / (layers + 1) as f64);
    Ok((tape.slice_rows(mean, 0, nu)?, tape.slice_rows(mean, nu, ni)?))
}

/// Last layer of `H^l = S H^{l-1}` from the item ID embeddings.
pub fn propagate_item_graph(tape: &mut Tape, op: &Arc<SparseOperator>, item: Var, layers: usize) -> Result<Var> {
    let mut h = item;
    for _ in 0..layers {
        h = tape.spmm(op, h)?;
    }
    Ok(h)
}

pub fn views(tape: &mut Tape, graphs: &PropagationGraphs, user: Var, item: Var, cfg: &ModelConfig) -> Result<Views> {
    let (hu, hi) = propagate_bipartite(tape, &graphs.bipartite, user, item, cfg.layers_ui)?;
    let semantic = match &graphs.semantic {
        Some(op) => Some(propagate_item_graph(tape, op, item, cfg.layers_ii)?),
        None => None,
    };
    let diffusion = match &graphs.diffusion {
        Some(op) => Some(propagate_item_graph(tape, op, item, cfg.layers_ii)?),
        None => None,
    };
    let fused_semantic = match semantic {
        Some(m) => tape.add(hi, m)?,
        None => hi,
    };
    let fused = match diffusion {
        Some(d) => tape.add(hi, d)?,
        None => hi,
    };
    Ok(Views {
        user: hu,
        item_ui: hi,
        semantic,
        diffusion,
        fused_semantic,
        fused,
    })
}

/// Mean over the batch of `-log sigmoid(h_u.h_i - h_u.h_j)`.
pub fn bpr_loss(tape: &mut Tape, users: Var, items: Var, batch: &[Triplet]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("empty BPR batch".into()));
    }
    let u: Vec<usize> = batch.iter().map(|t| t.user).collect();
    let p: Vec<usize> = batch.iter().map(|t| t.pos).collect();
    let n: Vec<usize> = batch.iter().map(|t| t.neg).collect();
    let hu = tape.gather_rows(users, &u)?;
    let hp = tape.gather_rows(items, &p)?;
    let hn = tape.gather_rows(items, &n)?;
    let diff = tape.sub(hp, hn)?;
    let prod = tape.mul(hu, diff)?;
    let gap = tape.sum_rows(prod);
    let ls = tape.log_sigmoid(gap);
    let total = tape.sum(ls);
    Ok(tape.scale(total, -1.0 / batch.len() as f64))
}

/// InfoNCE between the two item views, anchored at `anchors`: for each
/// anchor `i`, `-log softmax_v(cos(a_i, b_v) / tau)[i]` over all items `v`,
/// averaged over anchors. Zero-norm rows have zero similarity.
pub fn contrastive_loss(tape: &mut Tape, a: Var, b: Var, anchors: &[usize], tau: f64) -> Result<Var> {
    if anchors.is_empty() {
        return Err(Error::Contract("contrastive loss needs at least one anchor".into()));
    }
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::dim("contrastive_loss", tape.shape(a), tape.shape(b)));
    }
    let n = tape.shape(b).0;
    let sel = tape.gather_rows(a, anchors)?;
    let an = tape.normalize_rows(sel);
    let bn = tape.normalize_rows(b);
    let bt = tape.transpose(bn);
    let sim = tape.matmul(an, bt)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let lsm = tape.log_softmax_rows(logits);
    let mask = Matrix::from_fn(anchors.len(), n, |r, c| if anchors[r] == c { 1.0 } else { 0.0 });
    let mask = tape.constant(mask);
    let picked = tape.mul(lsm, mask)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / anchors.len() as f64))
}

/// Sum of squares over the given rows of the ID embeddings.
pub fn l2_penalty(tape: &mut Tape, user: Var, item: Var, users: &[usize], items: &[usize]) -> Result<Var> {
    let mut parts = Vec::with_capacity(2);
    for (table, idx) in [(user, users), (item, items)] {
        if idx.is_empty() {
            continue;
        }
        let rows = tape.gather_rows(table, idx)?;
        let sq = tape.mul(rows, rows)?;
        parts.push(tape.sum(sq));
    }
    match parts.as_slice() {
        [] => Ok(tape.constant(Matrix::zeros(1, 1))),
        [one] => Ok(*one),
        [a, b] => tape.add(*a, *b),
        _ => unreachable!(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub bpr: f64,
    pub cl: f64,
    pub reg: f64,
    pub total: f64,
}

/// Users and items touched by a batch, sorted and deduplicated.
pub fn touched(batch: &[Triplet]) -> (Vec<usize>, Vec<usize>) {
    let users: BTreeSet<usize> = batch.iter().map(|t| t.user).collect();
    let items: BTreeSet<usize> = batch.iter().flat_map(|t| [t.pos, t.neg]).collect();
    (users.into_iter().collect(), items.into_iter().collect())
}

/// `L_BPR + lambda_cl L_CL + lambda_reg ||Theta_batch||^2` on `tape`.
/// The contrastive term is skipped when its weight is zero or when there
/// is no diffusion view to contrast.
pub fn joint_loss(
    tape: &mut Tape,
    graphs: &PropagationGraphs,
    user: Var,
    item: Var,
    batch: &[Triplet],
    cfg: &ModelConfig,
) -> Result<(Var, LossParts)> {
    let v = views(tape, graphs, user, item, cfg)?;
    let bpr = bpr_loss(tape, v.user, v.fused, batch)?;
    let (users, items) = touched(batch);
    let mut total = bpr;
    let mut parts = LossParts {
        bpr: tape.scalar(bpr),
        ..LossParts::default()
    };
    if cfg.lambda_cl > 0.0 && v.diffusion.is_some() {
        let cl = contrastive_loss(tape, v.fused_semantic, v.fused, &items, cfg.tau)?;
        parts.cl = tape.scalar(cl);
        let w = tape.scale(cl, cfg.lambda_cl);
        total = tape.add(total, w)?;
    }
    let reg = l2_penalty(tape, user, item, &users, &items)?;
    parts.reg = tape.scalar(reg);
    if cfg.lambda_reg > 0.0 {
        let w = tape.scale(reg, cfg.lambda_reg);
        total = tape.add(total, w)?;
    }
    parts.total = tape.scalar(total);
    Ok((total, parts))
}

/// ID embeddings with their optimiser.
#[derive(Clone, Debug)]
pub struct RecModel {
    pub embeddings: EmbeddingTable,
    pub config: ModelConfig,
    adam: AdamState,
}

impl RecModel {
    pub fn new<R: Rng + ?Sized>(
        num_users: usize,
        num_items: usize,
        config: ModelConfig,
        lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let embeddings = EmbeddingTable::new(num_users, num_items, config.dim, rng);
        let adam = AdamState::new(
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            &[embeddings.user.shape(), embeddings.item.shape()],
        );
        Ok(RecModel {
            embeddings,
            config,
            adam,
        })
    }

    /// One optimiser step on a triplet batch.
    pub fn train_batch(&mut self, graphs: &PropagationGraphs, batch: &[Triplet]) -> Result<LossParts> {
        let mut tape = Tape::new();
        let user = tape.param(self.embeddings.user.clone());
        let item = tape.param(self.embeddings.item.clone());
        let (loss, parts) = joint_loss(&mut tape, graphs, user, item, batch, &self.config)?;
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("recommendation loss is {}", parts.total)));
        }
        let mut grads = tape.backward(loss)?;
        let g = [grads.take(user), grads.take(item)];
        self.adam
            .step(&mut [&mut self.embeddings.user, &mut self.embeddings.item], &g)?;
        Ok(parts)
    }
}

/// `|U| x |I|` score matrix `h_u . h_i` for the configured view.
pub fn score_matrix(embeddings: &EmbeddingTable, graphs: &PropagationGraphs, cfg: &ModelConfig) -> Result<Matrix> {
    let mut tape = Tape::new();
    let user = tape.constant(embeddings.user.clone());
    let item = tape.constant(embeddings.item.clone());
    let v = views(&mut tape, graphs, user, item, cfg)?;
    let items = match cfg.score_view {
        ScoreView::Diffusion => v.fused,
        ScoreView::Semantic => v.fused_semantic,
    };
    tape.value(v.user).matmul(&tape.value(items).transpose())
}

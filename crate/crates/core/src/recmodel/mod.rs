//! Graph-propagated ID embeddings with semantic and diffusion item views,
//! trained on BPR plus a dual-view contrastive term.

mod model;
mod train;

pub use model::{
    bpr_loss, contrastive_loss, joint_loss, l2_penalty, propagate_bipartite, propagate_item_graph, score_matrix,
    touched, views, EmbeddingTable, LossParts, ModelConfig, PropagationGraphs, RecModel, ScoreView, Views,
};
pub use train::{
    diffusion_operator, test_metrics, train, Ablation, EpochRecord, ModelState, StaticGraphs, Timings, TrainConfig,
    TrainOutcome, Variant, SELECTION_K,
};

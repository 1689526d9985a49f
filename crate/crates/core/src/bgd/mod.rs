//! Behavior-conditioned graph diffusion: the noise schedule, the
//! conditional denoising network, guided reverse sampling and the
//! diffusion-aware item graph built from its output.

mod cdnet;
mod process;
mod schedule;

pub use cdnet::{guidance_mix, guided_prediction, time_embedding, time_embeddings, CdNet, CdNetVars, TIME_EMBED_DIM};
pub use process::{
    bgd_loss, bgd_train_step, build_diffusion_graph, forward_noise, reverse_generate, reverse_step, sample_batch, Bgd,
    BgdBatch, BgdConfig,
};
pub use schedule::DiffusionSchedule;

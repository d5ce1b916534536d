//! Conditional denoising diffusion: schedule, denoiser network, objectives,
//! training loops, ancestral sampling and checkpoints.

pub mod checkpoint;
pub mod data;
pub mod loss;
pub mod net;
pub mod sample;
pub mod schedule;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint};
pub use data::{Conditioning, HeadMode, NormStats, TrainItem};
pub use loss::{loss_base, loss_total, DirectionTerm, NoiseModel, Objective, Terms};
pub use net::{Architecture, DenoiserParams};
pub use sample::{sample, sample_map};
pub use schedule::{make_schedule, NoiseSchedule};
pub use train::{finetune, pretrain, Regularizer, TrainConfig, TrainState, TuneMode};

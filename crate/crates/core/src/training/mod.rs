//! Sampled-softmax training of query encoders against an entity table.

mod adam;
mod loss;
mod sampler;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use loss::{sampled_softmax_loss, SampledLoss};
pub use sampler::{Negative, NegativeSampler, SamplerKind};
pub use trainer::{
    batch_loss, tokenize_pairs, BatchLoss, EpochLog, Model, TrainConfig, Trainer, TrainingPair, DESK_NEGATIVES,
    PRODUCTION_NEGATIVES,
};

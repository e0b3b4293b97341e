//! Masked-language-model training: input masking, the loss, AdamW with a
//! warmup/decay schedule, and the pretraining loop.

mod loss;
mod mask;
mod optim;
mod pretrain;

pub use loss::{mlm_loss, mlm_loss_sum};
pub use mask::{apply_mask, MaskedBatch, MaskedSequence};
pub use optim::{adamw_step, lr_at, AdamState, TrainConfig};
pub use pretrain::{
    pretrain, CheckpointPolicy, LossTrace, PretrainOutput, TraceRow,
};

pub(crate) use pretrain::batch_indices;

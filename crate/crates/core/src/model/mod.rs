//! Transformer-encoder MLM: configuration, parameters, forward/backward,
//! and checkpointing.

mod backward;
mod checkpoint;
mod config;
mod forward;
mod params;

pub use backward::{backward_from_hidden, backward_mlm};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{preset, EncoderConfig, NormPlacement};
pub use forward::{forward, ForwardTrace};
pub use params::{check_same_structure, init_params, ParameterSet};

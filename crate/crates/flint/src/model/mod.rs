//! The student-teacher refinement network.

pub mod checkpoint;
pub mod config;
pub mod net;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TrainingState};
pub use config::{LossWeights, Mode, ModelConfig};
pub use net::{forward, forward_on_tape, BlockOutput, ForwardGraph, ForwardResult, TeacherGraph};
pub use params::{build_model, BlockTag, ParamKind, Param, ParameterSet};

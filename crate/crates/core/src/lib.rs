//! Neural canonical polyadic factorization (NCPF) for completing sparse
//! 3-order tensors, plus a linear CP baseline.
//!
//! Each observed cell `(i, j, k)` is modeled by looking up one embedding
//! row per mode, fusing the three rows by elementwise product, refining
//! the result through square dense layers and squashing a linear readout
//! with a sigmoid. Models are fit by SGD or Adam on observed entries only.
//!
//! The crate is `no_std` (it needs `alloc`); file IO, checkpoints and the
//! command-line driver live in the `ncpf` crate.

#![no_std]

extern crate alloc;

pub mod activation;
pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod gradcheck;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use activation::Activation;
pub use autodiff::{backward, loss, Gradients, Sample};
pub use baselines::{clip_unit, cp_predict, cp_train, CpModel};
pub use error::{Error, ErrorKind, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use metrics::{evaluate, relative_change, EvalReport};
pub use model::{fuse, ForwardTrace, ModelConfig, NcpfModel};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState, OptimizerKind};
pub use preprocess::Preprocessor;
pub use tensor::{parse_coo, split, Dims, Entry, Index3, SparseTensor3, Split, SplitFractions};
pub use train::{epochs_to_target, train, LossScaling, TrainConfig, TrainLog};

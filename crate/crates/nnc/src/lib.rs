//! Neural network coding over DAGs of noisy parallel channels.
//!
//! The crate trains jointly learned source/network codes for multicasting
//! correlated real-valued sources over an arbitrary acyclic network of AWGN
//! point-to-point links, evaluates the power-distortion trade-off, and ships
//! two classical baselines: amplify-and-forward analog network coding and a
//! compress-then-route separation estimate.

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod topology;
pub mod training;

pub use error::{NncError, Result};
pub use model::{EndToEndModel, ForwardResult, InnerNnSpec};
pub use tape::{Activation, Mode, NoiseSpec, Tape};
pub use tensor::Tensor;
pub use topology::{builtin_butterfly, LambdaSpec, Topology};

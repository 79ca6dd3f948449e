//! Small feed-forward network engine: dense and 2-D convolution layers,
//! reverse-mode gradients and an adaptive-moment optimizer.

mod checkpoint;
mod gemm;
mod network;
mod optim;
mod spec;
mod tensor;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, content_hash, load_checkpoint, save_checkpoint};
pub use network::{backward, forward, init_weights, ForwardCache, LayerParams, LayerWeights, Prepared};
pub use optim::{optimizer_step, AdamConfig, OptimizerState};
pub use spec::{Activation, LayerKind, LayerSpec, NetworkSpec};
pub use tensor::Tensor;

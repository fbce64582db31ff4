//! Meta-learned point cloud registration.
//!
//! A registration learner (three set convolutions regressing per-point flow)
//! whose MLP weights are the element-wise sum of a trained bank and a bank
//! predicted per task by a VAE + hypernetwork meta-learner. Includes a dense
//! f64 tensor engine with reverse-mode autodiff, synthetic task generation,
//! training/evaluation harnesses and experiment presets.

// The training hot path allocates and frees multi-megabyte activation
// buffers every layer; mimalloc recycles them instead of bouncing each one
// off mmap/munmap like the system allocator does.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub mod checkpoint;
pub mod cloud;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod kdtree;
pub mod learner;
pub mod loss;
pub mod meta;
pub mod model;
pub mod nn;
pub mod par;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

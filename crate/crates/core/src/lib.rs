//! Model-side toolchain and cycle-approximate simulator for a sparse
//! systolic-array CNN accelerator.
//!
//! The pipeline mirrors the hardware/software split of the accelerator:
//!
//! 1. [`network`] loads layer descriptors and int16 tensors (or synthesizes them),
//! 2. [`prune`] applies load-balancing per-kernel pruning (CONV) and global
//!    magnitude pruning (FC),
//! 3. [`codec`] bitmap-compresses IFM tiles, kernels and FC columns,
//! 4. [`cluster`] ranks channels by nonzero count and groups them for the PE array,
//! 5. [`dataflow`] tiles each layer and picks a DRAM reuse strategy,
//! 6. [`engine`] executes the weight-oriented sparse convolution bit-exactly,
//! 7. [`timing`] charges cycles, idle time, utilization and energy,
//! 8. [`sim`] and [`report`] tie everything together into a [`report::SimReport`].

pub mod cluster;
pub mod codec;
pub mod dataflow;
pub mod engine;
pub mod error;
pub mod network;
mod par;
pub mod prune;
pub mod report;
pub mod sim;
pub mod sweep;
pub mod tensor;
pub mod timing;

pub use error::{Error, Result};
pub use tensor::{DimRole, Tensor};

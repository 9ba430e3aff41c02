//! Sparse 3D voxel tensors and the LinK large-kernel operator.
//!
//! The crate is organised bottom-up:
//!
//! - [`sparse`]: voxel coordinates, the packed coordinate hash index, sparse
//!   tensors and point-cloud voxelization.
//! - [`conv`]: kernel maps and the reference submanifold / strided sparse
//!   convolution with its analytic backward pass.
//! - [`link`]: the linear kernel generator, block partition, proxy
//!   push / gather / pull, the brute-force pairwise oracle and the adjoint.
//! - [`backbone`]: LayerNorm, the LinK module, the four-stage encoder,
//!   effective-receptive-field maps and a toy training loop.
//!
//! Everything is generic over [`Real`] so the same code runs at 32-bit and
//! 64-bit precision.

pub mod backbone;
pub mod conv;
mod error;
pub mod gradcheck;
pub mod link;
mod params;
mod real;
pub mod sparse;

pub use error::{Error, Result};
pub use params::Parameters;
pub use real::Real;

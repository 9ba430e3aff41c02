//! The LinK operator: linear kernel generation, block partition and the
//! push / gather / pull decomposition, with a pairwise oracle and the
//! analytic backward pass.
//!
//! A voxel's output aggregates every voxel in the `r^3` blocks around its own
//! `s^3` block, weighted by `k0(p) k0(x) + k1(p) k1(x)`. Because the kernel
//! factorises per voxel, each block's weighted sum is computed once and
//! shared by every query touching it: per-voxel work is one push and one pull
//! regardless of `r * s`.

mod forward;
mod generator;
mod oracle;
mod partition;
mod proxy;

pub use forward::{kernel_anchor, link_backward, link_forward, LinKConfig, LinkGrads, LinkState};
pub use generator::{
    count_dense_kernel_params, count_generator_params, generate_kernel, generate_kernel_at,
    generator_backward, ActivationMode, KernelGenerator, Kernels,
};
pub use oracle::link_oracle;
pub use partition::{neighbor_offsets, partition_blocks, BlockPartition};
pub use proxy::{gather_neighborhood, pull, push_proxies, GatherFault, OpCounters, ProxySet};

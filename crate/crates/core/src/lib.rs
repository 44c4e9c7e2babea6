//! Tree-regularized Bayesian latent class analysis.
//!
//! Class profiles of a latent class model for multivariate binary responses are
//! placed on the leaves of a Dirichlet diffusion tree. Profiles diffuse along
//! the tree as Brownian motion on the logit scale, with one diffusion variance
//! per major item group, so classes that sit close on the tree are shrunk
//! towards their common ancestor.
//!
//! The crate provides
//!
//! - [`tree`]: rooted binary trees with divergence times, Newick interchange and
//!   prune/regraft edits,
//! - [`ddt`]: the diffusion tree prior (tree sampling and density, Brownian
//!   diffusion of node locations),
//! - [`lcm`]: the measurement model, likelihoods and the data simulator,
//! - [`sampler`]: a Metropolis-Hastings-within-Gibbs posterior sampler using
//!   Pólya-Gamma augmentation,
//! - [`summary`]: burn-in, ECR relabeling, MAP tree and credible intervals.

pub mod assignment;
pub mod chain;
pub mod ddt;
pub mod error;
pub mod gaussian_tree;
mod init;
pub mod lcm;
pub mod polya_gamma;
pub mod rng;
pub mod sampler;
pub mod summary;
pub mod tree;

pub use chain::{ChainMeta, PosteriorChain, Snapshot};
pub use ddt::{DiffusionVariances, DivergenceFunction, ItemGrouping, NodeLocations};
pub use error::{Error, Result};
pub use lcm::{ClassProbability, ItemResponseProbabilities, ResponseMatrix, SimulatedDataset};
pub use sampler::{ddtlcm_fit, Hyperparameters, SamplerConfig, SamplerState};
pub use summary::{PosteriorSummary, SummaryConfig};
pub use tree::{DdtTree, NodeId, SubtreeDetachment};

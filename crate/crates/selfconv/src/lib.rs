//! Self-convolution block matching and an online multi-modality denoiser.
//!
//! The core idea: correlating an image with one of its own patches yields a
//! similarity surface over all patch positions, and that single correlation
//! (computable by FFT) replaces the per-pair distance evaluations of block
//! matching and non-local-means weighting exactly. On top of that engine
//! sits an online patch-group denoiser combining low-rank approximation
//! with a streaming orthonormal sparsifying transform.
//!
//! Modules:
//! - [`tensor`]: images, patches, windows, norms, aggregation.
//! - [`spectral`]: 2D FFTs and complex element-wise operations.
//! - [`similarity`]: correlation surfaces, metric maps, top-K matching.
//! - [`oracle`]: brute-force reference implementations.
//! - [`strollr`]: the online denoiser.
//! - [`io`]: PGM / MMR files, noise simulation, PSNR.
//! - [`bench`]: timing and equivalence harness.

pub mod error;
pub mod oracle;
pub mod similarity;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use similarity::{block_match, selfconv_mm, EngineKind, MatchSet, Matcher, Metric};
pub use tensor::{ImageTensor, PatchGeometry, PatchRef, SearchWindow};

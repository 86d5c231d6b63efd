//! Exact analysis of piecewise-affine generator networks.
//!
//! A network built from fully connected layers and ReLU, leaky-ReLU or
//! absolute-value activations is a continuous piecewise-affine map
//! `G: R^S -> R^D`. Every latent region of its partition is identified by the
//! activation code of its points, and on that region `G(z) = A z + b`. This
//! crate extracts those affine pieces and derives from them the local
//! dimension, basis, inverse and angles of the generated manifold, the
//! pushforward density and entropy, and the effect of dropout noise.

pub mod density;
pub mod dropout;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod latent;
pub mod linalg;
pub mod network;
pub mod partition;

pub use error::{Error, OffManifoldKind, Result};
pub use latent::{LatentDistribution, LatentKind};
pub use network::{Activation, ActivationKind, AffineMap, Anchor, GeneratorNetwork, Layer, RegionCode};

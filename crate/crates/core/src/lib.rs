//! Max-affine spline operator laboratory.

pub mod analysis;
pub mod conv;
pub mod error;
pub mod io;
pub mod linalg;
pub mod maso;
pub mod network;
pub mod partition;
pub mod pool;
pub mod rng;
pub mod train;
pub mod vq;

pub use error::{MasoError, Result};
pub use linalg::{Matrix, Shape3};
pub use maso::{ActivationKind, MasoParams, PoolKind, SelectionCode, SoftConfig};
pub use network::{AffineDecomposition, ForwardTrace, LayerSpec, Network};

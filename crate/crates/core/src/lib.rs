//! Local intrinsic dimensionality (LID) estimation and the image- and
//! patch-level submanifold-alignment regularizers for inpainting models,
//! with the surrounding losses, a small autodiff engine, quality metrics and
//! desk-scale experiments.

pub mod cli;
pub mod error;
pub mod feature;
pub mod harness;
pub mod io;
pub mod knn;
pub mod lid;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod tensor;

pub use error::{Error, Result};
pub use knn::{neighbors, pairwise_distances, NeighborList, Points};
pub use lid::{ilid, ilid_loss, lid_mle, plid, plid_loss, LidEstimate};
pub use tensor::{load_tensor, save_tensor, DenseTensor};

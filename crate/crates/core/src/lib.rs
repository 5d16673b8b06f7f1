//! Oscillating steady-state MRI: signal physics, a physics-grounded signal
//! dictionary, undersampled image reconstruction with a near-manifold
//! regularizer, baseline reconstructors, and dynamic R2* quantification,
//! validated on synthetic phantoms.

pub mod analysis;
pub mod container;
pub mod encode;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod phantom;
pub mod physics;
pub mod quantify;
pub mod recon;

pub use error::{OssiError, Result};
pub use num_complex::Complex64;

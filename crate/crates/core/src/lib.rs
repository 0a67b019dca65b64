//! Memory-AMP signal recovery for noisy linear systems y = Ax + n.
//!
//! The crate implements the GD-MAMP recursion in its three-matvec form, the
//! overflow-avoiding variants built on scaled spectral moments (with exact
//! eigenvalue tables or eigenvalue-free stochastic estimation), and the
//! two-matvec complexity-reduced CR-GD-MAMP, together with an experiment
//! harness for convergence and cost measurements.

pub mod denoiser;
pub mod error;
pub mod field;
pub mod harness;
pub mod mamp;
pub mod operator;
pub mod seeds;
pub mod spectral;
pub mod transform;

pub use error::{ConfigError, DenoiseError, DimensionError, SpectralError};
pub use field::Field;
pub use num_complex::Complex64;
pub use operator::{LinearOperator, StructuredSpec};
pub use transform::TransformKind;

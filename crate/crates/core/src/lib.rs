//! Scaled-dot-product attention as the stationary point of Hopfield-style
//! energy functionals.
//!
//! The attention output `AV` is a stationary point of the regularized
//! energy `E_R(Z) = Σ_j F(u_j) + R(Z)` for linear, quadratic, polynomial and
//! exponential `F`. Gradient descent on `E_R` gives an iterative,
//! non-linear attention head; [`verify`] holds independent oracles for all
//! of it.

pub mod attention;
pub mod cli;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod heads;
pub mod matrix;
pub mod rng;
pub mod verify;

pub use attention::{AttentionContext, ProjectionWeights};
pub use dynamics::{DescentConfig, DescentTrace};
pub use energy::{EnergyEval, EnergyForm};
pub use error::{Error, Result};
pub use heads::{HeadOutput, HeadSpec, MultiHeadOutput, Perturbation};
pub use matrix::DenseMatrix;

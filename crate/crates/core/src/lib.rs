//! Image reconstruction from compressive measurements using an untrained
//! decoder network as the signal prior.
//!
//! The pieces: a small deterministic numeric kernel ([`numeric`],
//! [`rng`], [`upsample`], [`dct`]), the decoder itself with projection
//! onto its range ([`decoder`]), Gaussian measurement operators with an
//! empirical restricted-isometry checker ([`measure`]), the projected
//! gradient solvers plus baselines ([`solvers`]), and independent
//! numerical oracles used by the test suites ([`oracles`]).

pub mod dct;
pub mod decoder;
pub mod error;
pub mod image;
pub mod measure;
pub mod numeric;
pub mod oracles;
pub mod pgm;
pub mod rng;
pub mod solvers;
pub mod upsample;

pub use error::{Error, Result};

//! Compressive learning of Gaussian mixture models.
//!
//! A dataset is reduced to a fixed-size sketch: `m` samples of its empirical
//! characteristic function at random frequencies. A diagonal-covariance GMM is
//! then recovered from the sketch alone with greedy pursuit algorithms
//! (CL-OMP, CL-OMPR and a hierarchical splitting variant).
//!
//! Module map:
//!
//! - [`model`]: Gaussian atoms, mixtures, densities and characteristic functions.
//! - [`freqdesign`]: frequency distributions and the unsupervised scale estimate.
//! - [`sketch`]: empirical and analytic sketches, streaming accumulation, merging.
//! - [`recovery`]: CL-OMP(R), the splitting algorithm and their building blocks.
//! - [`eval`]: synthetic problems, KL and MMD estimators, an EM baseline.
//! - [`bounds`]: sketch-size and covering-number calculators.
//! - [`io`]: the binary and text file formats shared with the CLI.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod eval;
pub mod freqdesign;
pub mod io;
pub mod model;
pub mod nnls;
pub mod optim;
pub mod quadrature;
pub mod recovery;
pub mod rng;
pub mod sketch;

pub use error::{Error, Result};
pub use freqdesign::{FrequencyKind, FrequencySet, RadiusTable};
pub use model::{Dataset, GaussianParams, Mixture, VARIANCE_FLOOR};
pub use num_complex::Complex64;
pub use recovery::{Algorithm, RecoveryConfig};
pub use rng::SeedStream;
pub use sketch::{Sketch, SketchAccumulator};

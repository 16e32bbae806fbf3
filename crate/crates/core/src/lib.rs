//! Weighted proximal denoising of hyperspectral cubes with a learned
//! hyper-weight network.
//!
//! The pieces, bottom up:
//!
//! - [`cube`]: the `HsiCube` data model, patching, augmentation and file I/O.
//! - [`noise`]: reproducible synthesis of mixed Gaussian, impulse, stripe and
//!   deadline corruption.
//! - [`regularizer`]: nuclear norm, spatial TV and spectral TV with their
//!   proximal operators and smoothed gradients.
//! - [`admm`]: the weighted ADMM solver, converged or unrolled on a tape.
//! - [`autodiff`]: the reverse-mode tape both of those run on.
//! - [`hwnet`]: the network predicting per-element weights.
//! - [`trainer`]: bi-level training of the network through unrolled solves.
//! - [`theory`]: numerical probes of the generalization analysis.
//! - [`metrics`]: PSNR, SSIM, SAM and ERGAS.
//! - [`diagnostics`]: a finite-difference audit of every differentiable op.

pub mod admm;
pub mod autodiff;
pub mod cube;
pub mod diagnostics;
pub mod error;
pub mod hwnet;
pub mod manifest;
pub mod metrics;
pub mod noise;
pub mod regularizer;
pub mod synthetic;
pub mod theory;
pub mod trainer;

pub use admm::{solve, solve_from, unrolled_solve, z_update, SolveResult, SolverConfig, SolverState};
pub use cube::{augment, extract_patches, load_cube, normalize, save_cube, Augment, HsiCube, PatchPair};
pub use error::{Error, Result};
pub use hwnet::{hwnet_forward, load_params, save_params, HwnetParams, WeightMap};
pub use manifest::{DatasetManifest, ManifestEntry, NoiseTag};
pub use metrics::MetricsReport;
pub use noise::{synth_noise, NoiseCase, NoiseLog, NoiseSpec};
pub use regularizer::{grad_smoothed, prox, reg_value, Penalty, RegularizerKind, RegularizerSpec};
pub use theory::{DivergenceReport, TheoryConfig};
pub use trainer::{train, TrainConfig, TrainLog};

//! Sparsity-agnostic depth completion.
//!
//! An up-to-scale depth predictor is aligned to sparse metric hints at 1/8,
//! 1/4 and 1/2 resolution by confidence-weighted affine regression, the
//! hints are placed into the aligned maps, and the full-resolution result is
//! refined by non-local spatial propagation. The same pipeline handles any
//! number and layout of hints, from none to fully dense.
//!
//! Modules:
//! - [`grid`], [`io`]: raster types, bilinear resampling, DGRID/CSV/PGM files.
//! - [`patterns`]: random, shifted-lattice, rosette and LiDAR-line inputs.
//! - [`pyramid`]: sparsity-aware pooling.
//! - [`scale_place`]: weighted scale fit, placement and analytic gradients.
//! - [`propagation`]: affinity normalization and propagation.
//! - [`pipeline`]: the multi-scale decoder and reference predictors.
//! - [`synthetic`]: scenes with dense ground truth.
//! - [`eval`]: metrics, the multi-scale loss and density sweeps.
//! - [`gradcheck`]: finite-difference checks of the analytic gradients.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod patterns;
pub mod pipeline;
pub mod propagation;
pub mod pyramid;
pub mod scale_place;
pub mod synthetic;

pub use error::{Error, ErrorClass, Result};
pub use grid::{
    bilinear_sample, upsample, CameraIntrinsics, ConfidenceGrid, DepthGrid, GridView, IntensityImage, Raster,
    SparseDepthGrid,
};
pub use scale_place::{AffineScale, ScalePlaceOutput};

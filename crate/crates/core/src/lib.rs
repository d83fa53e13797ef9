//! Self-learned kernel low-rank (KLR) reconstruction of k-space and q-space
//! undersampled diffusion MRI.
//!
//! The numerical core is generic over the real scalar type through [`Real`]
//! (implemented for `f32` and `f64`); the `*64` / `*32` aliases below pin the
//! common precisions. Pipelines and file formats are built around `f64`.

pub mod benchmark;
pub mod cs;
pub mod dti;
pub mod error;
pub mod fft;
pub mod io;
pub mod kernel;
pub mod klr;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod sampling;
pub mod scalar;
pub mod wavelet;

pub use error::{Error, Result};
pub use model::{DwiVolume, GradientTable, KSpaceVolume, VolumeShape};
pub use num_complex::Complex;
pub use scalar::Real;

pub type DwiVolume64 = model::DwiVolume<f64>;
pub type DwiVolume32 = model::DwiVolume<f32>;
pub type KSpaceVolume64 = model::KSpaceVolume<f64>;
pub type KSpaceVolume32 = model::KSpaceVolume<f32>;
pub type GradientTable64 = model::GradientTable<f64>;
pub type GradientTable32 = model::GradientTable<f32>;
pub type KernelModel64 = kernel::KernelModel<f64>;
pub type KernelModel32 = kernel::KernelModel<f32>;
pub type KernelParams64 = kernel::KernelParams<f64>;
pub type KlrConfig64 = klr::KlrConfig<f64>;
pub type CsConfig64 = cs::CsConfig<f64>;
pub type TensorMap64 = dti::TensorMap<f64>;
pub type TensorMap32 = dti::TensorMap<f32>;
pub type PhantomSpec64 = phantom::PhantomSpec<f64>;

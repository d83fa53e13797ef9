//! Synthetic meniscus-like diffusion phantom.
//!
//! A C-shaped annulus (300 degrees of arc) of anisotropic tissue with
//! circumferential fibers sits inside an elliptical support of isotropic
//! tissue; everything outside the ellipse is empty. Signals follow the
//! tensor model `S = S0 exp(-b g^T D g)` with `S0 = 1` in tissue.

use ndarray::{Array3, Array4};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dti::{tensor_from_matrix, TensorMap};
use crate::fft::fft2_per_slice;
use crate::model::{DwiVolume, GradientTable, KSpaceVolume, VolumeShape};
use crate::scalar::Real;
use crate::{Error, Result};

/// Annulus eigenvalues (mm^2/s), principal axis along the fiber.
pub const ANNULUS_EIGENVALUES: [f64; 3] = [1.7e-3, 3e-4, 3e-4];
/// Isotropic diffusivity of the surrounding tissue (mm^2/s).
pub const BACKGROUND_DIFFUSIVITY: f64 = 1.0e-3;
pub const MIN_IN_PLANE: usize = 32;

const INNER_RADIUS: f64 = 0.28;
const OUTER_RADIUS: f64 = 0.55;
const GAP_HALF_ANGLE_DEG: f64 = 30.0;
const SUPPORT_AXES: (f64, f64) = (0.9, 0.75);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec<T> {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Diffusion-weighted directions; `ceil(n/10)` b0 volumes are added.
    pub n_directions: usize,
    pub b_value: T,
    /// Complex Gaussian noise std relative to S0.
    pub noise_sigma: T,
    pub seed: u64,
}

impl<T: Real> Default for PhantomSpec<T> {
    fn default() -> Self {
        Self { nx: 64, ny: 64, nz: 4, n_directions: 24, b_value: T::lit(1000.0), noise_sigma: T::zero(), seed: 0 }
    }
}

impl<T: Real> PhantomSpec<T> {
    pub fn n_b0(&self) -> usize {
        self.n_directions.div_ceil(10)
    }

    pub fn shape(&self) -> Result<VolumeShape> {
        VolumeShape::new(self.nx, self.ny, self.nz, self.n_b0() + self.n_directions)
    }

    fn validate(&self) -> Result<()> {
        if self.nx.min(self.ny) < MIN_IN_PLANE {
            return Err(Error::InvalidArgument(format!(
                "in-plane size {}x{} too small for the annulus (min {MIN_IN_PLANE})",
                self.nx, self.ny
            )));
        }
        if self.nz == 0 {
            return Err(Error::InvalidArgument("nz must be >= 1".into()));
        }
        if self.n_directions < 6 {
            return Err(Error::InvalidArgument(format!("need >= 6 directions, got {}", self.n_directions)));
        }
        if !(self.b_value > T::zero()) {
            return Err(Error::InvalidArgument(format!("b-value must be > 0, got {}", self.b_value)));
        }
        if !(self.noise_sigma >= T::zero()) {
            return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    pub fn gradient_table(&self) -> Result<GradientTable<T>> {
        let nb0 = self.n_b0();
        let mut dirs = vec![[T::zero(); 3]; nb0];
        dirs.extend(spiral_directions::<T>(self.n_directions));
        let mut bvals = vec![T::zero(); nb0];
        bvals.extend(std::iter::repeat_n(self.b_value, self.n_directions));
        GradientTable::new(dirs, bvals)
    }
}

/// Deterministic Fibonacci spiral on the upper hemisphere.
pub fn spiral_directions<T: Real>(n: usize) -> Vec<[T; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (k as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            let v = [r * phi.cos(), r * phi.sin(), z];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            v.map(|c| T::lit(c / norm))
        })
        .collect()
}

/// Tissue class of each voxel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tissue {
    Empty,
    Background,
    Annulus,
}

/// Classifies voxel `(x, y)` of slice `z`; also returns the polar angle
/// around the in-plane center.
pub fn classify(x: usize, y: usize, z: usize, nx: usize, ny: usize, nz: usize) -> (Tissue, f64) {
    let (cx, cy) = ((nx / 2) as f64, (ny / 2) as f64);
    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
    let half = nx.min(ny) as f64 / 2.0;
    let angle = dy.atan2(dx);
    let (ax, ay) = (SUPPORT_AXES.0 * nx as f64 / 2.0, SUPPORT_AXES.1 * ny as f64 / 2.0);
    if (dx / ax).powi(2) + (dy / ay).powi(2) > 1.0 {
        return (Tissue::Empty, angle);
    }
    // slight through-plane variation of the annulus radii
    let zrel = if nz > 1 { z as f64 / (nz - 1) as f64 - 0.5 } else { 0.0 };
    let grow = 1.0 + 0.08 * zrel;
    let r = (dx * dx + dy * dy).sqrt() / half;
    let in_ring = r >= INNER_RADIUS * grow && r <= OUTER_RADIUS * grow;
    let in_arc = angle.abs() >= GAP_HALF_ANGLE_DEG.to_radians();
    if in_ring && in_arc {
        (Tissue::Annulus, angle)
    } else {
        (Tissue::Background, angle)
    }
}

/// Labels for every voxel, dims `(nx, ny, nz)`.
pub fn tissue_labels(nx: usize, ny: usize, nz: usize) -> Array3<Tissue> {
    Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| classify(x, y, z, nx, ny, nz).0)
}

/// Ground truth of a generated phantom.
#[derive(Clone, Debug)]
pub struct Phantom<T: Real> {
    pub truth: DwiVolume<T>,
    pub tensors: TensorMap<T>,
    pub labels: Array3<Tissue>,
}

pub fn generate_phantom<T: Real>(spec: &PhantomSpec<T>) -> Result<Phantom<T>> {
    spec.validate()?;
    let shape = spec.shape()?;
    let gtab = spec.gradient_table()?;
    let (nx, ny, nz) = (spec.nx, spec.ny, spec.nz);
    let labels = tissue_labels(nx, ny, nz);

    let [l1, l2, _] = ANNULUS_EIGENVALUES;
    let mut tensors = Array4::<T>::zeros((nx, ny, nz, 6));
    let mut s0 = Array3::<T>::zeros((nx, ny, nz));
    for ((x, y, z), tissue) in labels.indexed_iter() {
        let d = match tissue {
            Tissue::Empty => continue,
            Tissue::Background => nalgebra::Matrix3::identity() * BACKGROUND_DIFFUSIVITY,
            Tissue::Annulus => {
                let angle = classify(x, y, z, nx, ny, nz).1;
                let e = nalgebra::Vector3::new(-angle.sin(), angle.cos(), 0.0);
                nalgebra::Matrix3::identity() * l2 + e * e.transpose() * (l1 - l2)
            }
        };
        s0[[x, y, z]] = T::one();
        let t = tensor_from_matrix(&d);
        for k in 0..6 {
            tensors[[x, y, z, k]] = T::lit(t[k]);
        }
    }

    let b: Vec<f64> = gtab.bvalues().iter().map(|v| v.as_f64()).collect();
    let g: Vec<[f64; 3]> = gtab.directions().iter().map(|d| d.map(|c| c.as_f64())).collect();
    let mut data = Array4::<Complex<T>>::zeros(shape.dims());
    for ((x, y, z, q), v) in data.indexed_iter_mut() {
        if labels[[x, y, z]] == Tissue::Empty {
            continue;
        }
        let t: [f64; 6] = std::array::from_fn(|k| tensors[[x, y, z, k]].as_f64());
        let gq = g[q];
        let quad = t[0] * gq[0] * gq[0]
            + t[1] * gq[1] * gq[1]
            + t[2] * gq[2] * gq[2]
            + 2.0 * (t[3] * gq[0] * gq[1] + t[4] * gq[0] * gq[2] + t[5] * gq[1] * gq[2]);
        *v = Complex::new(T::lit((-b[q] * quad).exp()), T::zero());
    }

    if spec.noise_sigma > T::zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let per_component = spec.noise_sigma.as_f64() / 2f64.sqrt();
        for v in data.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex::new(T::lit(re * per_component), T::lit(im * per_component));
        }
    }

    let foreground = labels.mapv(|t| t != Tissue::Empty);
    Ok(Phantom { truth: DwiVolume::new(data, gtab)?, tensors: TensorMap::from_tensors(tensors, s0, foreground)?, labels })
}

/// Fully sampled k-space of a ground-truth volume.
pub fn forward_kspace<T: Real>(truth: &DwiVolume<T>) -> KSpaceVolume<T> {
    fft2_per_slice(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dti::fit_tensor_volume;
    use crate::fft::ifft2_per_slice;

    #[test]
    fn directions_are_unit_and_spread() {
        let d = spiral_directions::<f64>(24);
        assert_eq!(d.len(), 24);
        for v in &d {
            assert!(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() < 1e-12);
            assert!(v[2] > 0.0);
        }
    }

    #[test]
    fn default_layout() {
        let spec = PhantomSpec::<f64>::default();
        assert_eq!(spec.shape().unwrap().dims(), (64, 64, 4, 27));
        let g = PhantomSpec::<f64> { n_directions: 81, ..Default::default() }.gradient_table().unwrap();
        assert_eq!(g.b0_indices().len(), 9);
    }

    #[test]
    fn rejects_small_and_invalid() {
        assert!(generate_phantom(&PhantomSpec::<f64> { nx: 31, ..Default::default() }).is_err());
        assert!(generate_phantom(&PhantomSpec::<f64> { n_directions: 5, ..Default::default() }).is_err());
        assert!(generate_phantom(&PhantomSpec::<f64> { b_value: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn noiseless_b0_and_round_trip() {
        let spec = PhantomSpec::<f64> { nz: 2, n_directions: 12, ..Default::default() };
        let ph = generate_phantom(&spec).unwrap();
        let b0 = ph.truth.gtab().b0_indices();
        for ((x, y, z, q), v) in ph.truth.data().indexed_iter() {
            if b0.contains(&q) {
                let expect = if ph.labels[[x, y, z]] == Tissue::Empty { 0.0 } else { 1.0 };
                assert_eq!(*v, Complex::new(expect, 0.0));
            }
        }
        assert!(ph.labels.iter().any(|&t| t == Tissue::Annulus));
        let back = ifft2_per_slice(&forward_kspace(&ph.truth));
        let err: f64 = back.data().iter().zip(ph.truth.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
        assert!(err.sqrt() <= 1e-10 * ph.truth.energy().sqrt());
    }

    #[test]
    fn annulus_fa_round_trip() {
        let spec = PhantomSpec::<f64> { nz: 1, ..Default::default() };
        let ph = generate_phantom(&spec).unwrap();
        let fit = fit_tensor_volume(&ph.truth).unwrap();
        let l = ANNULUS_EIGENVALUES;
        let mean = l.iter().sum::<f64>() / 3.0;
        let fa_oracle = (1.5 * l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let mut first = None;
        for ((x, y, z), t) in ph.labels.indexed_iter() {
            if *t == Tissue::Annulus {
                let fa = fit.fa[[x, y, z]];
                assert!((fa - fa_oracle).abs() < 1e-9);
                let f = *first.get_or_insert(fa);
                assert!((fa - f).abs() < 1e-9);
                assert!((fit.md[[x, y, z]] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_noise() {
        let spec = PhantomSpec::<f64> { nz: 1, noise_sigma: 0.02, seed: 4, ..Default::default() };
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a.truth, b.truth);
        let c = generate_phantom(&PhantomSpec { seed: 5, ..spec }).unwrap();
        assert_ne!(a.truth, c.truth);
    }
}

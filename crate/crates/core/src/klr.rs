//! Self-learned kernel low-rank reconstruction.
//!
//! 1. Training profiles (magnitude along q) are harvested from the aliased
//!    zero-filled images themselves, not from a separate low-resolution scan.
//! 2. A polynomial kernel PCA model is fit once for the whole volume.
//! 3. Each slice alternates per-voxel project/pre-image along q with a hard
//!    k-space data-consistency replacement.

use nalgebra::DMatrix;
use ndarray::{s, Array3, Array4, Axis};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fft::{ifft2_per_slice, Fft2};
use crate::kernel::{kpca_fit_normalized, KernelModel, KernelParams};
use crate::model::{mean_magnitude, threshold_mask, DwiVolume, KSpaceVolume, FOREGROUND_FRACTION};
use crate::sampling::{center_distance, SamplingMask};
use crate::scalar::{cabs, Real};
use crate::{Error, Result};

/// Voxels per project/pre-image batch.
const BATCH: usize = 1024;

/// Where the phase reattached to each denoised magnitude comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    /// Low-resolution image of the fully sampled k-space center, fixed for
    /// the whole run.
    #[default]
    Calibration,
    /// The current iterate (phase is then never constrained by the model).
    Iterate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlrConfig<T> {
    pub n_train: usize,
    pub params: KernelParams<T>,
    pub rank_r: usize,
    pub max_iters: usize,
    /// Relative image change below which iteration stops.
    pub tol: T,
    pub seed: u64,
    pub phase: PhaseMode,
}

impl<T: Real> Default for KlrConfig<T> {
    fn default() -> Self {
        Self { n_train: 2000, params: KernelParams::default(), rank_r: 8, max_iters: 100, tol: T::lit(1e-6), seed: 0, phase: PhaseMode::Calibration }
    }
}

impl<T: Real> KlrConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.rank_r < 1 || self.n_train < self.rank_r {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= rank ({}) <= n_train ({})",
                self.rank_r, self.n_train
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::InvalidArgument(format!("tol must be > 0, got {}", self.tol)));
        }
        KernelParams::new(self.params.offset_b, self.params.degree_c)?;
        Ok(())
    }
}

/// Training profiles drawn from an aliased volume.
#[derive(Clone, Debug)]
pub struct Harvest<T: Real> {
    /// `nq x n_train`, one magnitude profile per column.
    pub matrix: DMatrix<T>,
    /// `(x, y, z)` of each column.
    pub locations: Vec<(usize, usize, usize)>,
    pub foreground_count: usize,
    /// Set when the foreground held fewer voxels than requested and the draw
    /// fell back to sampling with replacement.
    pub with_replacement: bool,
}

pub fn harvest_training<T: Real>(aliased: &DwiVolume<T>, cfg: &KlrConfig<T>) -> Result<Harvest<T>> {
    let fg = threshold_mask(mean_magnitude(aliased.data(), None).view(), FOREGROUND_FRACTION);
    let candidates: Vec<(usize, usize, usize)> = fg.indexed_iter().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    if candidates.is_empty() {
        return Err(Error::DegenerateTraining("aliased volume has no foreground".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let with_replacement = candidates.len() < cfg.n_train;
    let picks: Vec<usize> = if with_replacement {
        use rand::Rng;
        (0..cfg.n_train).map(|_| rng.random_range(0..candidates.len())).collect()
    } else {
        rand::seq::index::sample(&mut rng, candidates.len(), cfg.n_train).into_vec()
    };
    let locations: Vec<_> = picks.into_iter().map(|i| candidates[i]).collect();
    Ok(Harvest {
        matrix: profiles_at(aliased, &locations),
        locations,
        foreground_count: candidates.len(),
        with_replacement,
    })
}

/// Magnitude q-profiles of `volume` at the given voxels, `nq x len`.
pub fn profiles_at<T: Real>(volume: &DwiVolume<T>, locations: &[(usize, usize, usize)]) -> DMatrix<T> {
    let nq = volume.shape().nq;
    DMatrix::from_fn(nq, locations.len(), |q, j| {
        let (x, y, z) = locations[j];
        cabs(volume.data()[[x, y, z, q]])
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceDiagnostics {
    pub iterations: usize,
    /// Relative change of the last iteration.
    pub final_change: f64,
    pub converged: bool,
    /// Kernel values clamped before the even-degree root, summed over iterations.
    pub clamped: usize,
}

/// Replaces every non-zero voxel profile of `img` (`nx x ny x nq`) with its
/// kernel low-rank pre-image. Each entry takes the phase of `phase_ref` where
/// that is non-zero and keeps its own phase otherwise.
pub fn low_rank_step<T: Real>(
    img: &mut Array3<Complex<T>>,
    model: &KernelModel<T>,
    phase_ref: Option<&Array3<Complex<T>>>,
) -> Result<usize> {
    let (nx, ny, nq) = img.dim();
    let flat = img.as_slice_mut().expect("standard layout");
    let reference = phase_ref.map(|r| r.as_slice().expect("standard layout"));
    let active: Vec<usize> = (0..nx * ny)
        .filter(|&v| flat[v * nq..(v + 1) * nq].iter().any(|c| c.re != T::zero() || c.im != T::zero()))
        .collect();
    let mut clamped = 0;
    for chunk in active.chunks(BATCH) {
        let mags = DMatrix::from_fn(nq, chunk.len(), |q, j| cabs(flat[chunk[j] * nq + q]));
        let (denoised, c) = model.denoise_batch(&mags)?;
        clamped += c;
        for (j, &v) in chunk.iter().enumerate() {
            for q in 0..nq {
                let cur = flat[v * nq + q];
                let m = mags[(q, j)];
                let phase = match reference.map(|r| r[v * nq + q]) {
                    Some(p) if p.re != T::zero() || p.im != T::zero() => p,
                    _ if m > T::zero() => cur.unscale(m),
                    _ => Complex::new(T::one(), T::zero()),
                };
                flat[v * nq + q] = phase.scale(denoised[(q, j)]);
            }
        }
    }
    Ok(clamped)
}

/// Hard data consistency: image to k-space, overwrite sampled entries with
/// `measured`, back to image space.
pub fn data_consistency<T: Real>(img: &mut Array3<Complex<T>>, measured: &Array3<Complex<T>>, pattern: &Array3<bool>, fft: &Fft2<T>) {
    fft.apply_stack(img, false);
    ndarray::Zip::from(&mut *img).and(measured).and(pattern).for_each(|v, &m, &p| {
        if p {
            *v = m;
        }
    });
    fft.apply_stack(img, true);
}

/// Unit phasors of a Hann-tapered low-resolution image built from the
/// largest centered disk that is sampled in each plane. Entries are zero
/// where that image vanishes.
pub fn calibration_phase<T: Real>(measured: &Array3<Complex<T>>, pattern: &Array3<bool>, fft: &Fft2<T>) -> Array3<Complex<T>> {
    let (nx, ny, nq) = measured.dim();
    let zero = Complex::new(T::zero(), T::zero());
    let mut low = Array3::from_elem((nx, ny, nq), zero);
    for q in 0..nq {
        let radius = (0..nx)
            .flat_map(|i| (0..ny).map(move |j| (i, j)))
            .filter(|&(i, j)| !pattern[[i, j, q]])
            .map(|(i, j)| center_distance(i, j, nx, ny))
            .fold(f64::INFINITY, f64::min);
        for i in 0..nx {
            for j in 0..ny {
                let d = center_distance(i, j, nx, ny);
                if d < radius {
                    let w = if radius.is_finite() { 0.5 * (1.0 + (std::f64::consts::PI * d / radius).cos()) } else { 1.0 };
                    low[[i, j, q]] = measured[[i, j, q]].scale(T::lit(w));
                }
            }
        }
    }
    fft.apply_stack(&mut low, true);
    low.mapv_inplace(|c| {
        let m = cabs(c);
        if m > T::zero() {
            c.unscale(m)
        } else {
            zero
        }
    });
    low
}

fn rel_change<T: Real>(new: &Array3<Complex<T>>, old: &Array3<Complex<T>>) -> T {
    let mut num = T::zero();
    let mut den = T::zero();
    for (a, b) in new.iter().zip(old) {
        num += (a - b).norm_sqr();
        den += b.norm_sqr();
    }
    if den > T::zero() {
        (num / den).sqrt()
    } else if num > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Reconstructs one `(nx, ny, nq)` k-space slice.
pub fn klr_reconstruct_slice<T: Real>(
    kslice: &Array3<Complex<T>>,
    mask: &SamplingMask,
    model: &KernelModel<T>,
    cfg: &KlrConfig<T>,
) -> Result<(Array3<Complex<T>>, SliceDiagnostics)> {
    cfg.validate()?;
    let (nx, ny, nq) = kslice.dim();
    if mask.dims() != (nx, ny, nq) {
        return Err(Error::Shape(format!("mask dims {:?} vs slice {:?}", mask.dims(), (nx, ny, nq))));
    }
    if model.dim() != nq {
        return Err(Error::Shape(format!("model trained on length-{} profiles, slice has nq={nq}", model.dim())));
    }
    if model.effective_rank() > nq {
        return Err(Error::InvalidArgument(format!("model rank {} exceeds nq={nq}", model.effective_rank())));
    }
    let pattern = mask.pattern();
    let zero = Complex::new(T::zero(), T::zero());
    let measured = ndarray::Zip::from(kslice).and(pattern).map_collect(|&k, &p| if p { k } else { zero });
    let fft = Fft2::new(nx, ny);
    let mut img = measured.clone();
    fft.apply_stack(&mut img, true);
    let phase_ref = match cfg.phase {
        PhaseMode::Calibration => Some(calibration_phase(&measured, pattern, &fft)),
        PhaseMode::Iterate => None,
    };

    let mut diag = SliceDiagnostics { iterations: 0, final_change: f64::INFINITY, converged: false, clamped: 0 };
    for it in 1..=cfg.max_iters {
        let prev = img.clone();
        diag.clamped += low_rank_step(&mut img, model, phase_ref.as_ref())?;
        data_consistency(&mut img, &measured, pattern, &fft);
        let change = rel_change(&img, &prev);
        diag.iterations = it;
        diag.final_change = change.as_f64();
        if change < cfg.tol {
            diag.converged = true;
            break;
        }
    }
    Ok((img, diag))
}

#[derive(Clone, Debug)]
pub struct KlrOutput<T: Real> {
    pub volume: DwiVolume<T>,
    pub model: KernelModel<T>,
    pub harvest_with_replacement: bool,
    pub slices: Vec<SliceDiagnostics>,
}

/// Zero-filled reconstruction, training, then per-slice KLR iterations.
pub fn klr_reconstruct_volume<T: Real>(kvol: &KSpaceVolume<T>, mask: &SamplingMask, cfg: &KlrConfig<T>) -> Result<KlrOutput<T>> {
    cfg.validate()?;
    let shape = kvol.shape();
    if mask.dims() != (shape.nx, shape.ny, shape.nq) {
        return Err(Error::Shape(format!("mask dims {:?} vs k-space {}", mask.dims(), shape)));
    }
    let masked = crate::sampling::apply_undersampling(kvol, mask, None)?;
    let aliased = ifft2_per_slice(&masked);
    let harvest = harvest_training(&aliased, cfg)?;
    let model = kpca_fit_normalized(&harvest.matrix, cfg.params, cfg.rank_r)?;
    let (volume, slices) = reconstruct_with_model(&masked, mask, &model, cfg)?;
    Ok(KlrOutput { volume, model, harvest_with_replacement: harvest.with_replacement, slices })
}

/// Per-slice reconstruction with an already trained model.
pub fn reconstruct_with_model<T: Real>(
    kvol: &KSpaceVolume<T>,
    mask: &SamplingMask,
    model: &KernelModel<T>,
    cfg: &KlrConfig<T>,
) -> Result<(DwiVolume<T>, Vec<SliceDiagnostics>)> {
    let shape = kvol.shape();
    let results: Vec<Result<(Array3<Complex<T>>, SliceDiagnostics)>> = (0..shape.nz)
        .into_par_iter()
        .map(|z| {
            let kslice = kvol.data().slice(s![.., .., z, ..]).to_owned();
            klr_reconstruct_slice(&kslice, mask, model, cfg)
        })
        .collect();
    let mut data = Array4::zeros(shape.dims());
    let mut diags = Vec::with_capacity(shape.nz);
    for (z, r) in results.into_iter().enumerate() {
        let (img, d) = r?;
        data.index_axis_mut(Axis(2), z).assign(&img);
        diags.push(d);
    }
    Ok((DwiVolume::new(data, kvol.gtab().clone())?, diags))
}

/// Largest relative deviation of `F(image)` from `measured` on sampled entries.
pub fn consistency_error<T: Real>(image: &DwiVolume<T>, measured: &KSpaceVolume<T>, mask: &SamplingMask) -> Result<f64> {
    let k = crate::fft::fft2_per_slice(image);
    if k.shape() != measured.shape() {
        return Err(Error::Shape(format!("image {} vs k-space {}", k.shape(), measured.shape())));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((x, y, _, q), (a, b)) in k.data().indexed_iter().map(|(i, a)| (i, (a, measured.data()[i]))) {
        if mask.pattern()[[x, y, q]] {
            num += (a - b).norm_sqr().as_f64();
            den += b.norm_sqr().as_f64();
        }
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

//! Unitary, centered 2D DFT applied per in-plane slice.
//!
//! DC sits at index `(nx/2, ny/2)`. Both directions scale by `1/sqrt(nx*ny)`,
//! so the pair is orthonormal and data-consistency replacement needs no
//! rescaling.

use std::sync::Arc;

use ndarray::{s, Array3, Array4, ArrayViewMut2, Axis};
use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::model::{DwiVolume, KSpaceVolume};
use crate::scalar::Real;

/// Planned forward/inverse transforms for one `(nx, ny)` plane size.
#[derive(Clone)]
pub struct Fft2<T: Real> {
    nx: usize,
    ny: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
    scale: T,
}

impl<T: Real> Fft2<T> {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            row_fwd: planner.plan_fft_forward(ny),
            row_inv: planner.plan_fft_inverse(ny),
            col_fwd: planner.plan_fft_forward(nx),
            col_inv: planner.plan_fft_inverse(nx),
            scale: T::one() / T::lit((nx * ny) as f64).sqrt(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Image plane to k-space plane, in place. `buf` is row-major `nx*ny`.
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.run(buf, false);
    }

    /// k-space plane to image plane, in place.
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.run(buf, true);
    }

    fn run(&self, buf: &mut [Complex<T>], inverse: bool) {
        let (nx, ny) = (self.nx, self.ny);
        assert_eq!(buf.len(), nx * ny, "plane buffer length");
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let mut tmp = vec![Complex::new(T::zero(), T::zero()); nx * ny];
        // ifftshift: move the array center to index 0
        roll(buf, &mut tmp, nx, ny, nx / 2, ny / 2);
        let mut scratch =
            vec![Complex::new(T::zero(), T::zero()); row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())];
        row.process_with_scratch(&mut tmp, &mut scratch[..row.get_inplace_scratch_len()]);
        let mut tr = vec![Complex::new(T::zero(), T::zero()); nx * ny];
        transpose(&tmp, &mut tr, nx, ny);
        col.process_with_scratch(&mut tr, &mut scratch[..col.get_inplace_scratch_len()]);
        transpose(&tr, &mut tmp, ny, nx);
        // fftshift
        roll(&tmp, buf, nx, ny, nx - nx / 2, ny - ny / 2);
        for c in buf.iter_mut() {
            *c = c.scale(self.scale);
        }
    }

    fn run_view(&self, mut plane: ArrayViewMut2<Complex<T>>, inverse: bool, buf: &mut Vec<Complex<T>>) {
        buf.clear();
        buf.extend(plane.iter().copied());
        self.run(buf, inverse);
        for (dst, src) in plane.iter_mut().zip(buf.iter()) {
            *dst = *src;
        }
    }

    /// Transforms every `(nx, ny)` plane of an `(nx, ny, nq)` stack.
    pub fn apply_stack(&self, data: &mut Array3<Complex<T>>, inverse: bool) {
        let mut buf = Vec::with_capacity(self.nx * self.ny);
        for q in 0..data.dim().2 {
            self.run_view(data.slice_mut(s![.., .., q]), inverse, &mut buf);
        }
    }

    /// Transforms every `(nx, ny)` plane of an `(nx, ny, nz, nq)` array,
    /// slices in parallel over z.
    pub fn apply_volume(&self, data: &mut Array4<Complex<T>>, inverse: bool) {
        data.axis_iter_mut(Axis(2)).into_par_iter().for_each(|mut zslab| {
            let mut buf = Vec::with_capacity(self.nx * self.ny);
            for q in 0..zslab.dim().2 {
                self.run_view(zslab.slice_mut(s![.., .., q]), inverse, &mut buf);
            }
        });
    }
}

/// `dst[i][j] = src[(i + sx) % nx][(j + sy) % ny]`
fn roll<T: Copy>(src: &[T], dst: &mut [T], nx: usize, ny: usize, sx: usize, sy: usize) {
    for i in 0..nx {
        let si = (i + sx) % nx;
        for j in 0..ny {
            dst[i * ny + j] = src[si * ny + (j + sy) % ny];
        }
    }
}

fn transpose<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

pub fn fft2_per_slice<T: Real>(volume: &DwiVolume<T>) -> KSpaceVolume<T> {
    let shape = volume.shape();
    let mut data = volume.data().clone();
    Fft2::new(shape.nx, shape.ny).apply_volume(&mut data, false);
    KSpaceVolume::new(data, volume.gtab().clone()).expect("transform preserves shape and finiteness")
}

pub fn ifft2_per_slice<T: Real>(kspace: &KSpaceVolume<T>) -> DwiVolume<T> {
    let shape = kspace.shape();
    let mut data = kspace.data().clone();
    Fft2::new(shape.nx, shape.ny).apply_volume(&mut data, true);
    DwiVolume::new(data, kspace.gtab().clone()).expect("transform preserves shape and finiteness")
}

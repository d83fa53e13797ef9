//! Orthonormal two-level 2D Haar transform on complex planes.
//!
//! Planes whose sides are not powers of two are mirror-padded up to the next
//! power of two before the transform and cropped after the inverse.

use ndarray::{s, Array2, ArrayView2, ArrayViewMut1};
use num_complex::Complex;

use crate::scalar::{cabs, Real};

pub const LEVELS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Haar2 {
    nx: usize,
    ny: usize,
    px: usize,
    py: usize,
}

impl Haar2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let pad = |n: usize| n.next_power_of_two().max(1 << LEVELS);
        Self { nx, ny, px: pad(nx), py: pad(ny) }
    }

    pub fn padded_dims(&self) -> (usize, usize) {
        (self.px, self.py)
    }

    /// Size of the coarsest approximation band (not penalized).
    pub fn approx_dims(&self) -> (usize, usize) {
        (self.px >> LEVELS, self.py >> LEVELS)
    }

    pub fn is_detail(&self, i: usize, j: usize) -> bool {
        let (ax, ay) = self.approx_dims();
        i >= ax || j >= ay
    }

    pub fn forward<T: Real>(&self, plane: ArrayView2<Complex<T>>) -> Array2<Complex<T>> {
        assert_eq!(plane.dim(), (self.nx, self.ny));
        let mut c = if (self.px, self.py) == (self.nx, self.ny) {
            plane.to_owned()
        } else {
            Array2::from_shape_fn((self.px, self.py), |(i, j)| plane[[mirror(i, self.nx), mirror(j, self.ny)]])
        };
        let (mut w, mut h) = (self.px, self.py);
        let mut buf = Buffers::new(self.px.max(self.py));
        for _ in 0..LEVELS {
            let mut block = c.slice_mut(s![..w, ..h]);
            block.rows_mut().into_iter().for_each(|row| buf.apply(row, analyze));
            block.columns_mut().into_iter().for_each(|col| buf.apply(col, analyze));
            w /= 2;
            h /= 2;
        }
        c
    }

    pub fn inverse<T: Real>(&self, coefs: ArrayView2<Complex<T>>) -> Array2<Complex<T>> {
        assert_eq!(coefs.dim(), (self.px, self.py));
        let mut c = coefs.to_owned();
        let mut buf = Buffers::new(self.px.max(self.py));
        for level in (0..LEVELS).rev() {
            let (w, h) = (self.px >> level, self.py >> level);
            let mut block = c.slice_mut(s![..w, ..h]);
            block.columns_mut().into_iter().for_each(|col| buf.apply(col, synthesize));
            block.rows_mut().into_iter().for_each(|row| buf.apply(row, synthesize));
        }
        c.slice(s![..self.nx, ..self.ny]).to_owned()
    }

    /// l1 norm of the detail coefficients.
    pub fn detail_l1<T: Real>(&self, coefs: &Array2<Complex<T>>) -> T {
        coefs
            .indexed_iter()
            .filter(|((i, j), _)| self.is_detail(*i, *j))
            .fold(T::zero(), |acc, (_, c)| acc + cabs(*c))
    }

    /// Complex soft thresholding of the detail coefficients in place.
    pub fn shrink_details<T: Real>(&self, coefs: &mut Array2<Complex<T>>, tau: T) {
        for ((i, j), c) in coefs.indexed_iter_mut() {
            if self.is_detail(i, j) {
                *c = soft_threshold(*c, tau);
            }
        }
    }
}

struct Buffers<T> {
    src: Vec<Complex<T>>,
    dst: Vec<Complex<T>>,
}

impl<T: Real> Buffers<T> {
    fn new(n: usize) -> Self {
        Self { src: Vec::with_capacity(n), dst: Vec::with_capacity(n) }
    }

    fn apply(&mut self, mut lane: ArrayViewMut1<Complex<T>>, step: fn(&[Complex<T>], &mut [Complex<T>])) {
        self.src.clear();
        self.src.extend(lane.iter().copied());
        self.dst.clone_from(&self.src);
        step(&self.src, &mut self.dst);
        lane.iter_mut().zip(&self.dst).for_each(|(d, s)| *d = *s);
    }
}

/// Magnitude shrinkage with the phase kept.
#[inline]
pub fn soft_threshold<T: Real>(c: Complex<T>, tau: T) -> Complex<T> {
    let m = cabs(c);
    if m <= tau {
        Complex::new(T::zero(), T::zero())
    } else {
        c.scale((m - tau) / m)
    }
}

/// Whole-sample symmetric extension index.
fn mirror(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let k = i % period;
    if k < n {
        k
    } else {
        period - 1 - k
    }
}

/// One analysis step: first half averages, second half differences.
fn analyze<T: Real>(src: &[Complex<T>], dst: &mut [Complex<T>]) {
    let half = src.len() / 2;
    let r = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    for k in 0..half {
        let (a, b) = (src[2 * k], src[2 * k + 1]);
        dst[k] = (a + b).scale(r);
        dst[half + k] = (a - b).scale(r);
    }
}

fn synthesize<T: Real>(src: &[Complex<T>], dst: &mut [Complex<T>]) {
    let half = src.len() / 2;
    let r = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    for k in 0..half {
        let (a, d) = (src[k], src[half + k]);
        dst[2 * k] = (a + d).scale(r);
        dst[2 * k + 1] = (a - d).scale(r);
    }
}

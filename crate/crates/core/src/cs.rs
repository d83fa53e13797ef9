//! Compressed-sensing baseline.
//!
//! Minimizes
//!
//! ```text
//! ||M F x - z||^2 + lambda_w ||W x||_1 + lambda_tv TV_q(x)
//! ```
//!
//! where `W` is the two-level Haar transform of every in-plane slice (detail
//! bands only) and `TV_q` the anisotropic total variation of each voxel's
//! profile along q. The solver is monotone FISTA: a candidate that would raise
//! the objective triggers step backtracking from the last accepted iterate,
//! and is rejected outright if that fails too.

use ndarray::{s, Array2, Array4, Axis};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fft::Fft2;
use crate::model::{DwiVolume, KSpaceVolume};
use crate::sampling::SamplingMask;
use crate::scalar::{cabs, Real};
use crate::wavelet::Haar2;
use crate::{Error, Result};

/// Dual iterations of the TV proximal operator.
pub const TV_INNER_ITERS: usize = 20;
const MAX_BACKTRACKS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsConfig<T> {
    pub lambda_wavelet: T,
    pub lambda_tv: T,
    pub max_iters: usize,
    /// Gradient step relative to the inverse Lipschitz constant; 1 is safe.
    pub step: T,
    pub tol: T,
    /// Overwrite sampled k-space entries of the solution with the measured
    /// values before returning.
    pub final_consistency: bool,
}

impl<T: Real> Default for CsConfig<T> {
    fn default() -> Self {
        Self {
            lambda_wavelet: T::lit(0.02),
            lambda_tv: T::lit(0.02),
            max_iters: 200,
            step: T::one(),
            tol: T::lit(1e-6),
            final_consistency: true,
        }
    }
}

impl<T: Real> CsConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > T::zero()) {
            return Err(Error::InvalidArgument(format!("step must be > 0, got {}", self.step)));
        }
        if !(self.lambda_wavelet >= T::zero() && self.lambda_tv >= T::zero()) {
            return Err(Error::InvalidArgument("regularization weights must be >= 0".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CsOutput<T: Real> {
    pub volume: DwiVolume<T>,
    pub iterations: usize,
    /// Objective after each outer iteration (index 0 is the initial value),
    /// evaluated before the optional final consistency step.
    pub objective: Vec<T>,
    pub final_change: T,
    pub converged: bool,
    pub backtracks: usize,
}

struct Operators<T: Real> {
    fft: Fft2<T>,
    haar: Haar2,
    pattern: ndarray::Array3<bool>,
}

impl<T: Real> Operators<T> {
    fn new(kvol: &KSpaceVolume<T>, mask: &SamplingMask) -> Result<Self> {
        let sh = kvol.shape();
        if mask.dims() != (sh.nx, sh.ny, sh.nq) {
            return Err(Error::Shape(format!("mask dims {:?} vs k-space {}", mask.dims(), sh)));
        }
        Ok(Self { fft: Fft2::new(sh.nx, sh.ny), haar: Haar2::new(sh.nx, sh.ny), pattern: mask.pattern().clone() })
    }

    /// `M F x - z`
    fn residual(&self, x: &Array4<Complex<T>>, z: &Array4<Complex<T>>) -> Array4<Complex<T>> {
        let mut k = x.clone();
        self.fft.apply_volume(&mut k, false);
        let zero = Complex::new(T::zero(), T::zero());
        for (mut kz, zz) in k.axis_iter_mut(Axis(2)).zip(z.axis_iter(Axis(2))) {
            ndarray::Zip::from(&mut kz).and(&zz).and(&self.pattern).for_each(|v, &m, &keep| {
                *v = if keep { *v - m } else { zero };
            });
        }
        k
    }

    fn wavelet_l1(&self, x: &Array4<Complex<T>>) -> T {
        let (_, _, nz, nq) = x.dim();
        let mut acc = T::zero();
        for zz in 0..nz {
            for q in 0..nq {
                acc += self.haar.detail_l1(&self.haar.forward(x.slice(s![.., .., zz, q])));
            }
        }
        acc
    }

    fn objective(&self, x: &Array4<Complex<T>>, z: &Array4<Complex<T>>, cfg: &CsConfig<T>) -> T {
        let data = self.residual(x, z).iter().fold(T::zero(), |a, c| a + c.norm_sqr());
        let wav = if cfg.lambda_wavelet > T::zero() { cfg.lambda_wavelet * self.wavelet_l1(x) } else { T::zero() };
        let tv = if cfg.lambda_tv > T::zero() { cfg.lambda_tv * tv_q(x) } else { T::zero() };
        data + wav + tv
    }

    /// `y - t F^H (M F y - z)`, a step of `t / L` on the data term (`L = 2`).
    fn gradient_step(&self, y: &Array4<Complex<T>>, z: &Array4<Complex<T>>, t: T) -> Array4<Complex<T>> {
        let mut r = self.residual(y, z);
        self.fft.apply_volume(&mut r, true);
        let mut out = y.clone();
        out.zip_mut_with(&r, |o, g| *o -= g.scale(t));
        out
    }

    fn prox(&self, v: &mut Array4<Complex<T>>, t: T, cfg: &CsConfig<T>) {
        let half = T::lit(0.5);
        if cfg.lambda_wavelet > T::zero() {
            let tau = t * cfg.lambda_wavelet * half;
            v.axis_iter_mut(Axis(2)).into_par_iter().for_each(|mut slab| {
                for q in 0..slab.dim().2 {
                    let mut plane = slab.slice_mut(s![.., .., q]);
                    let mut c = self.haar.forward(plane.view());
                    self.haar.shrink_details(&mut c, tau);
                    plane.assign(&self.haar.inverse(c.view()));
                }
            });
        }
        if cfg.lambda_tv > T::zero() {
            let tau = t * cfg.lambda_tv * half;
            let nq = v.dim().3;
            v.as_slice_mut()
                .expect("standard layout")
                .par_chunks_mut(nq)
                .for_each(|profile| tv_prox_1d(profile, tau, TV_INNER_ITERS));
        }
    }
}

/// Anisotropic total variation along the last (q) axis.
pub fn tv_q<T: Real>(x: &Array4<Complex<T>>) -> T {
    let nq = x.dim().3;
    let flat = x.as_standard_layout();
    flat.as_slice()
        .expect("standard layout")
        .chunks(nq)
        .fold(T::zero(), |acc, p| p.windows(2).fold(acc, |a, w| a + cabs(w[1] - w[0])))
}

/// Approximate prox of `tau * sum |u[k+1] - u[k]|` by projected gradient on
/// the dual chain variable.
pub fn tv_prox_1d<T: Real>(v: &mut [Complex<T>], tau: T, iters: usize) {
    let n = v.len();
    if n < 2 || tau <= T::zero() {
        return;
    }
    let zero = Complex::new(T::zero(), T::zero());
    // p[0] and p[n] are fixed zero boundary entries
    let mut p = vec![zero; n + 1];
    let mut u = v.to_vec();
    let step = T::lit(0.25);
    let tau2 = tau * tau;
    for _ in 0..iters {
        // u = v - D^T p
        for k in 0..n {
            u[k] = v[k] - p[k] + p[k + 1];
        }
        for k in 1..n {
            let g = p[k] + (u[k] - u[k - 1]).scale(step);
            let m2 = g.norm_sqr();
            p[k] = if m2 > tau2 { g.scale(tau / m2.sqrt()) } else { g };
        }
    }
    for k in 0..n {
        v[k] -= p[k] - p[k + 1];
    }
}

fn masked_data<T: Real>(kvol: &KSpaceVolume<T>, pattern: &ndarray::Array3<bool>) -> Array4<Complex<T>> {
    let mut z = kvol.data().clone();
    let zero = Complex::new(T::zero(), T::zero());
    for ((i, j, _, q), v) in z.indexed_iter_mut() {
        if !pattern[[i, j, q]] {
            *v = zero;
        }
    }
    z
}

/// Composite objective at image `x` for measured k-space `kvol`.
pub fn objective_value<T: Real>(x: &Array4<Complex<T>>, kvol: &KSpaceVolume<T>, mask: &SamplingMask, cfg: &CsConfig<T>) -> Result<T> {
    if x.dim() != kvol.data().dim() {
        return Err(Error::Shape(format!("image {:?} vs k-space {}", x.dim(), kvol.shape())));
    }
    let ops = Operators::new(kvol, mask)?;
    let z = masked_data(kvol, &ops.pattern);
    let x = x.as_standard_layout().into_owned();
    Ok(ops.objective(&x, &z, cfg))
}

fn rel_change<T: Real>(new: &Array4<Complex<T>>, old: &Array4<Complex<T>>) -> T {
    let (mut num, mut den) = (T::zero(), T::zero());
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

pub fn cs_reconstruct<T: Real>(kvol: &KSpaceVolume<T>, mask: &SamplingMask, cfg: &CsConfig<T>) -> Result<CsOutput<T>> {
    cfg.validate()?;
    let ops = Operators::new(kvol, mask)?;
    let z = masked_data(kvol, &ops.pattern);

    let mut x = z.clone();
    ops.fft.apply_volume(&mut x, true);
    let mut f_x = ops.objective(&x, &z, cfg);
    let mut y = x.clone();
    let mut theta = T::one();
    let mut objective = vec![f_x];
    let mut out = CsOutput {
        volume: DwiVolume::new(x.clone(), kvol.gtab().clone())?,
        iterations: 0,
        objective: Vec::new(),
        final_change: T::zero(),
        converged: false,
        backtracks: 0,
    };

    for it in 1..=cfg.max_iters {
        let mut t = cfg.step;
        let mut cand = ops.gradient_step(&y, &z, t);
        ops.prox(&mut cand, t, cfg);
        let mut f_c = ops.objective(&cand, &z, cfg);
        let mut restarted = false;
        if f_c > f_x {
            // restart from the accepted iterate with shrinking steps
            restarted = true;
            for _ in 0..MAX_BACKTRACKS {
                out.backtracks += 1;
                t *= T::lit(0.5);
                cand = ops.gradient_step(&x, &z, t);
                ops.prox(&mut cand, t, cfg);
                f_c = ops.objective(&cand, &z, cfg);
                if f_c <= f_x {
                    break;
                }
            }
        }
        let accepted = f_c <= f_x;
        let x_new = if accepted { cand.clone() } else { x.clone() };
        let theta_new = (T::one() + (T::one() + T::lit(4.0) * theta * theta).sqrt()) * T::lit(0.5);
        if restarted {
            y = x_new.clone();
            theta = T::one();
        } else {
            let a = theta / theta_new;
            let b = (theta - T::one()) / theta_new;
            y = x_new.clone();
            ndarray::Zip::from(&mut y).and(&cand).and(&x_new).and(&x).for_each(|yv, &c, &xn, &xo| {
                *yv = xn + (c - xn).scale(a) + (xn - xo).scale(b);
            });
            theta = theta_new;
        }
        let change = rel_change(&x_new, &x);
        if accepted {
            f_x = f_c;
        }
        x = x_new;
        objective.push(f_x);
        out.iterations = it;
        out.final_change = change;
        if accepted && change < cfg.tol {
            out.converged = true;
            break;
        }
        if !accepted {
            // no descent possible at the smallest step: stationary
            out.converged = true;
            break;
        }
    }
    if cfg.final_consistency {
        ops.fft.apply_volume(&mut x, false);
        ndarray::Zip::indexed(&mut x).and(&z).for_each(|(i, j, _, q), v, &m| {
            if ops.pattern[[i, j, q]] {
                *v = m;
            }
        });
        ops.fft.apply_volume(&mut x, true);
    }
    out.volume = DwiVolume::new(x, kvol.gtab().clone())?;
    out.objective = objective;
    Ok(out)
}

/// Detail coefficients of the in-plane Haar transform of plane `(z, q)`.
pub fn haar_details<T: Real>(x: &Array4<Complex<T>>, z: usize, q: usize) -> Vec<Complex<T>> {
    let (nx, ny, _, _) = x.dim();
    let h = Haar2::new(nx, ny);
    let c: Array2<Complex<T>> = h.forward(x.slice(s![.., .., z, q]));
    c.indexed_iter().filter(|((i, j), _)| h.is_detail(*i, *j)).map(|(_, v)| *v).collect()
}

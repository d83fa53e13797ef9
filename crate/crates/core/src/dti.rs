//! Log-linear diffusion-tensor fit and the scalar/color maps derived from it.

use nalgebra::{DMatrix, DVector, Matrix3, SVD};
use ndarray::{Array3, Array4};

use crate::model::{mean_magnitude, threshold_mask, DwiVolume, GradientTable, FOREGROUND_FRACTION};
use crate::scalar::{cabs, Real};
use crate::{Error, Result};

/// Symmetric tensor stored as `[xx, yy, zz, xy, xz, yz]`.
pub type Tensor6<T> = [T; 6];

pub fn tensor_matrix<T: Real>(t: &Tensor6<T>) -> Matrix3<T> {
    Matrix3::new(t[0], t[3], t[4], t[3], t[1], t[5], t[4], t[5], t[2])
}

pub fn tensor_from_matrix<T: Real>(m: &Matrix3<T>) -> Tensor6<T> {
    [m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(0, 1)], m[(0, 2)], m[(1, 2)]]
}

/// Eigenvalues clamped at zero, descending, with the matching unit eigenvectors.
pub fn eigen_clamped<T: Real>(t: &Tensor6<T>) -> ([T; 3], [[T; 3]; 3]) {
    let eig = tensor_matrix(t).symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = order.map(|i| eig.eigenvalues[i].max(T::zero()));
    let vecs = order.map(|i| {
        let v = eig.eigenvectors.column(i);
        [v[0], v[1], v[2]]
    });
    (vals, vecs)
}

fn fa_from_eigenvalues<T: Real>(l: [T; 3]) -> T {
    let sum_sq = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
    if sum_sq <= T::zero() {
        return T::zero();
    }
    let mean = (l[0] + l[1] + l[2]) / T::lit(3.0);
    let dev = (l[0] - mean).powi(2) + (l[1] - mean).powi(2) + (l[2] - mean).powi(2);
    (T::lit(1.5) * dev / sum_sq).sqrt().min(T::one())
}

/// Fractional anisotropy of the tensor with negative eigenvalues clamped to zero.
pub fn fa_of<T: Real>(t: &Tensor6<T>) -> T {
    fa_from_eigenvalues(eigen_clamped(t).0)
}

/// Mean diffusivity (trace / 3) of the clamped tensor.
pub fn md_of<T: Real>(t: &Tensor6<T>) -> T {
    let (l, _) = eigen_clamped(t);
    (l[0] + l[1] + l[2]) / T::lit(3.0)
}

/// Direction-encoded color `FA * |e1|`, clamped to `[0, 1]`.
pub fn color_of<T: Real>(t: &Tensor6<T>) -> [T; 3] {
    let (l, v) = eigen_clamped(t);
    let fa = fa_from_eigenvalues(l);
    v[0].map(|c| (fa * c.fabs()).min(T::one()).max(T::zero()))
}

/// Per-voxel tensors and derived maps, dims `(nx, ny, nz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorMap<T> {
    /// `(nx, ny, nz, 6)` in [`Tensor6`] order, mm^2/s.
    pub tensors: Array4<T>,
    pub s0: Array3<T>,
    pub fa: Array3<T>,
    pub md: Array3<T>,
    /// `(nx, ny, nz, 3)` direction-encoded color.
    pub rgb: Array4<T>,
    pub foreground: Array3<bool>,
}

impl<T: Real> TensorMap<T> {
    /// Builds the map from known tensors, deriving FA and MD.
    pub fn from_tensors(tensors: Array4<T>, s0: Array3<T>, foreground: Array3<bool>) -> Result<Self> {
        let (nx, ny, nz, six) = tensors.dim();
        if six != 6 || s0.dim() != (nx, ny, nz) || foreground.dim() != (nx, ny, nz) {
            return Err(Error::Shape(format!(
                "tensors {:?}, s0 {:?}, foreground {:?}",
                tensors.dim(),
                s0.dim(),
                foreground.dim()
            )));
        }
        let fa = Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| fa_of(&Self::read(&tensors, x, y, z)));
        let md = Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| md_of(&Self::read(&tensors, x, y, z)));
        let rgb = colors(&tensors);
        Ok(Self { tensors, s0, fa, md, rgb, foreground })
    }

    fn read(tensors: &Array4<T>, x: usize, y: usize, z: usize) -> Tensor6<T> {
        std::array::from_fn(|k| tensors[[x, y, z, k]])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.s0.dim()
    }

    pub fn tensor(&self, x: usize, y: usize, z: usize) -> Tensor6<T> {
        Self::read(&self.tensors, x, y, z)
    }
}

/// Direction-encoded color volume, dims `(nx, ny, nz, 3)`.
pub fn color_map<T: Real>(tmap: &TensorMap<T>) -> Array4<T> {
    colors(&tmap.tensors)
}

fn colors<T: Real>(tensors: &Array4<T>) -> Array4<T> {
    let (nx, ny, nz, _) = tensors.dim();
    let mut rgb = Array4::zeros((nx, ny, nz, 3));
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let c = color_of(&TensorMap::read(tensors, x, y, z));
                for k in 0..3 {
                    rgb[[x, y, z, k]] = c[k];
                }
            }
        }
    }
    rgb
}

/// Rows `[1, -b gx^2, -b gy^2, -b gz^2, -2b gx gy, -2b gx gz, -2b gy gz]`.
pub fn design_matrix<T: Real>(gtab: &GradientTable<T>) -> DMatrix<T> {
    let two = T::lit(2.0);
    DMatrix::from_fn(gtab.nq(), 7, |q, c| {
        let g = gtab.directions()[q];
        let b = gtab.bvalues()[q];
        match c {
            0 => T::one(),
            1 => -b * g[0] * g[0],
            2 => -b * g[1] * g[1],
            3 => -b * g[2] * g[2],
            4 => -two * b * g[0] * g[1],
            5 => -two * b * g[0] * g[2],
            _ => -two * b * g[1] * g[2],
        }
    })
}

pub fn fit_tensor_volume<T: Real>(dwi: &DwiVolume<T>) -> Result<TensorMap<T>> {
    let gtab = dwi.gtab();
    let design = design_matrix(gtab);
    let svd = SVD::new(design, true, true);
    let smax = svd.singular_values.max();
    let tol = smax * T::lit(1e-10);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < 7 {
        return Err(Error::DegenerateGradients { rank });
    }
    let pinv = svd.pseudo_inverse(tol).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let shape = dwi.shape();
    let b0 = gtab.b0_indices();
    let foreground = threshold_mask(mean_magnitude(dwi.data(), Some(&b0)).view(), FOREGROUND_FRACTION);
    let mut tensors = Array4::zeros((shape.nx, shape.ny, shape.nz, 6));
    let mut s0 = Array3::zeros((shape.nx, shape.ny, shape.nz));
    let mut fg = foreground.clone();
    let mut logs = DVector::zeros(shape.nq);
    for ((x, y, z), is_fg) in fg.indexed_iter_mut() {
        if !*is_fg {
            continue;
        }
        let mags: Vec<T> = (0..shape.nq).map(|q| cabs(dwi.data()[[x, y, z, q]])).collect();
        let floor = mags.iter().copied().filter(|&m| m > T::zero()).fold(None, |acc: Option<T>, m| {
            Some(acc.map_or(m, |a| a.min(m)))
        });
        let Some(floor) = floor else {
            *is_fg = false;
            continue;
        };
        for (l, &m) in logs.iter_mut().zip(&mags) {
            *l = if m > T::zero() { m.ln() } else { floor.ln() };
        }
        let p = &pinv * &logs;
        s0[[x, y, z]] = p[0].exp();
        for k in 0..6 {
            tensors[[x, y, z, k]] = p[k + 1];
        }
    }
    TensorMap::from_tensors(tensors, s0, fg)
}

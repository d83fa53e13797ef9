//! Shared containers: volume geometry, q-space sampling scheme and the
//! image/k-space volume pair.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, Array4, ArrayView3, Axis};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::scalar::{cabs, Real};
use crate::{Error, Result};

/// Tolerance on the norm of non-b0 gradient directions.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VolumeShape {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub nq: usize,
}

impl VolumeShape {
    pub fn new(nx: usize, ny: usize, nz: usize, nq: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 || nq == 0 {
            return Err(Error::Shape(format!(
                "all dims must be >= 1, got {nx}x{ny}x{nz}x{nq}"
            )));
        }
        Ok(Self { nx, ny, nz, nq })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.nx, self.ny, self.nz, self.nq)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz * self.nq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn in_plane(&self) -> usize {
        self.nx * self.ny
    }

    fn of(a: &Array4<impl Clone>) -> Self {
        let d = a.dim();
        Self { nx: d.0, ny: d.1, nz: d.2, nq: d.3 }
    }
}

impl fmt::Display for VolumeShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.nx, self.ny, self.nz, self.nq)
    }
}

/// Parses `NXxNYxNZxNQ`.
impl FromStr for VolumeShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = parse_dims(s)?;
        match parts[..] {
            [nx, ny, nz, nq] => Self::new(nx, ny, nz, nq),
            _ => Err(Error::InvalidArgument(format!(
                "expected shape NXxNYxNZxNQ, got {s:?}"
            ))),
        }
    }
}

/// Splits an `AxBxC...` string into positive integers.
pub fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split(['x', 'X'])
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad dimension {p:?} in {s:?}")))
        })
        .collect()
}

/// q-space sampling scheme: one direction and b-value per diffusion volume.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTable<T> {
    directions: Vec<[T; 3]>,
    bvalues: Vec<T>,
}

impl<T: Real> GradientTable<T> {
    pub fn new(directions: Vec<[T; 3]>, bvalues: Vec<T>) -> Result<Self> {
        if directions.len() != bvalues.len() {
            return Err(Error::Shape(format!(
                "{} directions but {} b-values",
                directions.len(),
                bvalues.len()
            )));
        }
        let mut n_b0 = 0;
        for (i, (g, &b)) in directions.iter().zip(&bvalues).enumerate() {
            if !b.is_finite() || b < T::zero() {
                return Err(Error::InvalidArgument(format!("b-value {i} is {b}")));
            }
            if b == T::zero() {
                n_b0 += 1;
                continue;
            }
            let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if (norm - T::one()).fabs() > T::lit(UNIT_NORM_TOL).max(T::eps() * T::lit(8.0)) {
                return Err(Error::InvalidArgument(format!(
                    "direction {i} has norm {norm}, expected unit length"
                )));
            }
        }
        if n_b0 == 0 {
            return Err(Error::InvalidArgument(
                "gradient table needs at least one b=0 entry".into(),
            ));
        }
        Ok(Self { directions, bvalues })
    }

    pub fn nq(&self) -> usize {
        self.bvalues.len()
    }

    pub fn directions(&self) -> &[[T; 3]] {
        &self.directions
    }

    pub fn bvalues(&self) -> &[T] {
        &self.bvalues
    }

    pub fn is_b0(&self, i: usize) -> bool {
        self.bvalues[i] == T::zero()
    }

    pub fn b0_indices(&self) -> Vec<usize> {
        (0..self.nq()).filter(|&i| self.is_b0(i)).collect()
    }

    pub fn dw_indices(&self) -> Vec<usize> {
        (0..self.nq()).filter(|&i| !self.is_b0(i)).collect()
    }

    /// Table restricted to `indices` (in the given order).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.nq()) {
            return Err(Error::Shape(format!("index {bad} out of range for nq={}", self.nq())));
        }
        Self::new(
            indices.iter().map(|&i| self.directions[i]).collect(),
            indices.iter().map(|&i| self.bvalues[i]).collect(),
        )
    }

    pub fn cast<U: Real>(&self) -> GradientTable<U> {
        GradientTable {
            directions: self
                .directions
                .iter()
                .map(|g| [U::lit(g[0].as_f64()), U::lit(g[1].as_f64()), U::lit(g[2].as_f64())])
                .collect(),
            bvalues: self.bvalues.iter().map(|b| U::lit(b.as_f64())).collect(),
        }
    }
}

fn check_volume<T: Real>(data: &Array4<Complex<T>>, gtab: &GradientTable<T>, what: &'static str) -> Result<()> {
    if data.dim().3 != gtab.nq() {
        return Err(Error::Shape(format!(
            "{what} has {} q-volumes but gradient table has {}",
            data.dim().3,
            gtab.nq()
        )));
    }
    if data.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

macro_rules! volume_type {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T> {
            data: Array4<Complex<T>>,
            gtab: GradientTable<T>,
        }

        impl<T: Real> $name<T> {
            pub fn new(data: Array4<Complex<T>>, gtab: GradientTable<T>) -> Result<Self> {
                check_volume(&data, &gtab, $what)?;
                // standard layout keeps each voxel's q-profile contiguous
                let data = if data.is_standard_layout() { data } else { data.as_standard_layout().into_owned() };
                Ok(Self { data, gtab })
            }

            pub fn zeros(shape: VolumeShape, gtab: GradientTable<T>) -> Result<Self> {
                Self::new(Array4::zeros(shape.dims()), gtab)
            }

            pub fn shape(&self) -> VolumeShape {
                VolumeShape::of(&self.data)
            }

            pub fn data(&self) -> &Array4<Complex<T>> {
                &self.data
            }

            pub fn gtab(&self) -> &GradientTable<T> {
                &self.gtab
            }

            pub fn into_parts(self) -> (Array4<Complex<T>>, GradientTable<T>) {
                (self.data, self.gtab)
            }

            /// Per-element modulus.
            pub fn magnitude(&self) -> Array4<T> {
                self.data.mapv(cabs)
            }

            /// Sum of squared moduli.
            pub fn energy(&self) -> T {
                self.data.iter().fold(T::zero(), |acc, c| acc + c.norm_sqr())
            }

            /// Keeps only the q-volumes in `indices`.
            pub fn select_q(&self, indices: &[usize]) -> Result<Self> {
                let gtab = self.gtab.select(indices)?;
                Self::new(self.data.select(Axis(3), indices), gtab)
            }
        }
    };
}

volume_type!(
    /// Complex diffusion-weighted image series, dims `(nx, ny, nz, nq)`.
    DwiVolume,
    "dwi volume"
);
volume_type!(
    /// Complex k-space series, dims `(nx, ny, nz, nq)`, DC at the in-plane array center.
    KSpaceVolume,
    "k-space volume"
);

/// Mean over q of the modulus, dims `(nx, ny, nz)`.
pub fn mean_magnitude<T: Real>(data: &Array4<Complex<T>>, indices: Option<&[usize]>) -> Array3<T> {
    let (nx, ny, nz, nq) = data.dim();
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..nq).collect();
            &all
        }
    };
    let inv = T::one() / T::lit(idx.len().max(1) as f64);
    Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| {
        idx.iter().fold(T::zero(), |acc, &q| acc + cabs(data[[x, y, z, q]])) * inv
    })
}

/// Voxels whose value exceeds `frac` times the maximum value.
pub fn threshold_mask<T: Real>(values: ArrayView3<T>, frac: f64) -> Array3<bool> {
    let max = values.iter().fold(T::zero(), |m, &v| m.max(v));
    let cut = max * T::lit(frac);
    values.mapv(|v| max > T::zero() && v > cut)
}

/// Fraction of the volume maximum used for foreground detection.
pub const FOREGROUND_FRACTION: f64 = 0.05;

//! Retrospective undersampling: variable-density in-plane k-space masks with a
//! fully sampled center, and angular-coverage subsets of the gradient table.

use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{GradientTable, KSpaceVolume, VolumeShape};
use crate::scalar::Real;
use crate::{Error, Result};

/// Relative tolerance on the achieved acceleration factor.
pub const AF_TOLERANCE: f64 = 0.10;
const MAX_BISECTION_STEPS: usize = 50;

/// Variable-density mask parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskSpec {
    pub af: f64,
    /// Radius of the fully sampled disk as a fraction of `min(nx, ny) / 2`.
    pub center_radius: f64,
    /// Exponent of the radial density `(1 - r)^decay`.
    pub decay: f64,
    pub seed: u64,
    /// Draw an independent pattern for every q instead of sharing one.
    pub per_direction: bool,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self { af: 4.0, center_radius: 0.08, decay: 3.0, seed: 0, per_direction: false }
    }
}

/// Per-direction in-plane acquisition pattern, dims `(nx, ny, nq)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    pattern: Array3<bool>,
    pub af_target: f64,
    pub center_radius: f64,
    pub seed: u64,
}

impl SamplingMask {
    /// Wraps an existing pattern; the target is set to the achieved factor.
    pub fn from_pattern(pattern: Array3<bool>) -> Result<Self> {
        let (nx, ny, nq) = pattern.dim();
        if nx == 0 || ny == 0 || nq == 0 {
            return Err(Error::Shape("empty mask".into()));
        }
        let mut m = Self { pattern, af_target: 1.0, center_radius: 0.0, seed: 0 };
        m.af_target = m.achieved_af();
        Ok(m)
    }

    pub fn fully_sampled(nx: usize, ny: usize, nq: usize) -> Self {
        Self { pattern: Array3::from_elem((nx, ny, nq), true), af_target: 1.0, center_radius: 0.0, seed: 0 }
    }

    pub fn pattern(&self) -> &Array3<bool> {
        &self.pattern
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.pattern.dim()
    }

    pub fn sampled_count(&self) -> usize {
        self.pattern.iter().filter(|&&b| b).count()
    }

    /// Total entries over sampled entries (infinite for an empty mask).
    pub fn achieved_af(&self) -> f64 {
        self.pattern.len() as f64 / self.sampled_count() as f64
    }

    pub fn achieved_af_at(&self, q: usize) -> f64 {
        let plane = self.pattern.index_axis(Axis(2), q);
        plane.len() as f64 / plane.iter().filter(|&&b| b).count() as f64
    }

    pub fn is_fully_sampled(&self) -> bool {
        self.pattern.iter().all(|&b| b)
    }
}

/// In-plane distance of `(i, j)` from the DC location `(nx/2, ny/2)`.
pub fn center_distance(i: usize, j: usize, nx: usize, ny: usize) -> f64 {
    let dx = i as f64 - (nx / 2) as f64;
    let dy = j as f64 - (ny / 2) as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Cells inside the fully sampled center disk.
pub fn center_disk(nx: usize, ny: usize, center_radius: f64) -> Array2<bool> {
    let r = center_radius * nx.min(ny) as f64 / 2.0;
    Array2::from_shape_fn((nx, ny), |(i, j)| (i, j) == (nx / 2, ny / 2) || center_distance(i, j, nx, ny) <= r)
}

pub fn generate_vd_mask(shape: VolumeShape, spec: &MaskSpec) -> Result<SamplingMask> {
    let MaskSpec { af, center_radius, decay, seed, per_direction } = *spec;
    if !(af >= 1.0) || !af.is_finite() {
        return Err(Error::InvalidArgument(format!("af_target must be >= 1, got {af}")));
    }
    if !(center_radius > 0.0 && center_radius < 0.5) {
        return Err(Error::InvalidArgument(format!("center_radius must lie in (0, 0.5), got {center_radius}")));
    }
    if !(decay > 0.0) {
        return Err(Error::InvalidArgument(format!("decay must be > 0, got {decay}")));
    }
    let (nx, ny, nq) = (shape.nx, shape.ny, shape.nq);
    if af == 1.0 {
        let mut m = SamplingMask::fully_sampled(nx, ny, nq);
        m.center_radius = center_radius;
        m.seed = seed;
        return Ok(m);
    }

    let center = center_disk(nx, ny, center_radius);
    let n_total = nx * ny;
    let n_center = center.iter().filter(|&&b| b).count();
    let max_achievable = n_total as f64 / n_center as f64;
    if max_achievable < af * (1.0 - AF_TOLERANCE) {
        return Err(Error::InfeasibleMask { requested: af, max_achievable });
    }

    let rho_max = (0..nx)
        .flat_map(|i| [(i, 0), (i, ny - 1)])
        .chain((0..ny).flat_map(|j| [(0, j), (nx - 1, j)]))
        .map(|(i, j)| center_distance(i, j, nx, ny))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let weight = Array2::from_shape_fn((nx, ny), |(i, j)| {
        if center[[i, j]] {
            0.0
        } else {
            (1.0 - center_distance(i, j, nx, ny) / rho_max).max(0.0).powf(decay)
        }
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_planes = if per_direction { nq } else { 1 };
    let mut planes = Vec::with_capacity(n_planes);
    for _ in 0..n_planes {
        let uniform = Array2::from_shape_fn((nx, ny), |_| rng.random::<f64>());
        planes.push(calibrate_plane(&center, &weight, &uniform, af)?);
    }

    let mut pattern = Array3::from_elem((nx, ny, nq), false);
    for q in 0..nq {
        let plane = &planes[if per_direction { q } else { 0 }];
        pattern.index_axis_mut(Axis(2), q).assign(plane);
    }
    Ok(SamplingMask { pattern, af_target: af, center_radius, seed })
}

/// Bisects the global density scale until the sampled count hits `n / af`.
fn calibrate_plane(center: &Array2<bool>, weight: &Array2<f64>, uniform: &Array2<f64>, af: f64) -> Result<Array2<bool>> {
    let n_total = center.len();
    let target = n_total as f64 / af;
    let draw = |scale: f64| -> Array2<bool> {
        Zip::from(center).and(weight).and(uniform).map_collect(|&c, &w, &u| c || u < scale * w)
    };
    let count = |m: &Array2<bool>| m.iter().filter(|&&b| b).count() as f64;

    let min_w = weight.iter().copied().filter(|&w| w > 0.0).fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (0.0, if min_w.is_finite() { 1.0 / min_w } else { 1.0 });
    let mut best = draw(hi);
    let mut best_err = (count(&best) - target).abs();
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let m = draw(mid);
        let c = count(&m);
        let err = (c - target).abs();
        if err < best_err {
            best = m;
            best_err = err;
        }
        if c < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if best_err < 0.5 {
            break;
        }
    }
    let achieved = n_total as f64 / count(&best);
    if (achieved - af).abs() > AF_TOLERANCE * af {
        return Err(Error::InvalidArgument(format!(
            "could not calibrate mask to AF {af} (achieved {achieved:.3}); grid too small?"
        )));
    }
    Ok(best)
}

/// Subset of gradient-table entries kept under q-space undersampling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QSubset {
    pub indices: Vec<usize>,
    pub nq_full: usize,
    pub nq_sub: usize,
}

/// Angle between the axes of `a` and `b` (antipodal directions coincide).
pub fn axial_angle<T: Real>(a: &[T; 3], b: &[T; 3]) -> f64 {
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).as_f64().abs();
    dot.min(1.0).acos()
}

pub fn select_q_subset<T: Real>(gtab: &GradientTable<T>, nq_sub: usize, seed: u64) -> Result<QSubset> {
    let nq_full = gtab.nq();
    let b0 = gtab.b0_indices();
    if nq_sub < b0.len() || nq_sub > nq_full {
        return Err(Error::InvalidArgument(format!(
            "nq_sub={nq_sub} must lie in [{}, {nq_full}] (b0 count, table size)",
            b0.len()
        )));
    }
    let candidates = gtab.dw_indices();
    let n_pick = nq_sub - b0.len();
    let mut picked: Vec<usize> = Vec::with_capacity(n_pick);
    if n_pick == candidates.len() {
        picked.extend(&candidates);
    } else if n_pick > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        picked.push(candidates[rng.random_range(0..candidates.len())]);
        let dirs = gtab.directions();
        // running minimum angle from each candidate to the chosen set
        let mut min_angle: Vec<f64> =
            candidates.iter().map(|&c| axial_angle(&dirs[c], &dirs[picked[0]])).collect();
        while picked.len() < n_pick {
            let mut best: Option<(usize, f64)> = None;
            for (k, &c) in candidates.iter().enumerate() {
                if picked.contains(&c) {
                    continue;
                }
                if best.is_none_or(|(_, a)| min_angle[k] > a) {
                    best = Some((k, min_angle[k]));
                }
            }
            let (k, _) = best.expect("more candidates than picks");
            let chosen = candidates[k];
            picked.push(chosen);
            for (m, &c) in candidates.iter().enumerate() {
                min_angle[m] = min_angle[m].min(axial_angle(&dirs[c], &dirs[chosen]));
            }
        }
    }
    let mut indices: Vec<usize> = b0.into_iter().chain(picked).collect();
    indices.sort_unstable();
    Ok(QSubset { indices, nq_full, nq_sub })
}

/// Zeroes unsampled k-space entries, after optional q-subsetting.
pub fn apply_undersampling<T: Real>(
    kspace: &KSpaceVolume<T>,
    mask: &SamplingMask,
    qsub: Option<&QSubset>,
) -> Result<KSpaceVolume<T>> {
    let reduced;
    let source = match qsub {
        Some(sub) => {
            if sub.nq_full != kspace.shape().nq {
                return Err(Error::Shape(format!(
                    "q-subset built for nq={} but k-space has nq={}",
                    sub.nq_full,
                    kspace.shape().nq
                )));
            }
            reduced = kspace.select_q(&sub.indices)?;
            &reduced
        }
        None => kspace,
    };
    let s = source.shape();
    if mask.dims() != (s.nx, s.ny, s.nq) {
        return Err(Error::Shape(format!("mask dims {:?} do not match k-space {}", mask.dims(), s)));
    }
    let mut data = source.data().clone();
    let zero = Complex::new(T::zero(), T::zero());
    for ((x, y, _, q), c) in data.indexed_iter_mut() {
        if !mask.pattern[[x, y, q]] {
            *c = zero;
        }
    }
    KSpaceVolume::new(data, source.gtab().clone())
}

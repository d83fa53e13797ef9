//! Reconstruction quality metrics and per-voxel map error histograms.

use std::fmt::Write as _;

use ndarray::{Array4, ArrayView3, Zip};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::model::DwiVolume;
use crate::scalar::{cabs, Real};
use crate::{Error, Result};

/// Reported in place of +inf when the test volume equals the reference.
pub const PSNR_CAP_DB: f64 = 300.0;

fn check_dims<T: Real>(a: &Array4<Complex<T>>, b: &Array4<Complex<T>>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("reference {:?} vs test {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Sum of squared magnitude differences and of squared reference magnitudes.
fn magnitude_sums<T: Real>(r: &Array4<Complex<T>>, t: &Array4<Complex<T>>) -> (f64, f64, f64) {
    let (mut err, mut energy, mut peak) = (0.0f64, 0.0f64, 0.0f64);
    Zip::from(r).and(t).for_each(|a, b| {
        let ma = cabs(*a).as_f64();
        let d = ma - cabs(*b).as_f64();
        err += d * d;
        energy += ma * ma;
        peak = peak.max(ma);
    });
    (err, energy, peak)
}

pub fn nmse_arrays<T: Real>(reference: &Array4<Complex<T>>, test: &Array4<Complex<T>>) -> Result<f64> {
    check_dims(reference, test)?;
    let (err, energy, _) = magnitude_sums(reference, test);
    if energy == 0.0 {
        return Err(Error::InvalidArgument("reference volume is all zero".into()));
    }
    Ok(err / energy)
}

pub fn psnr_arrays<T: Real>(reference: &Array4<Complex<T>>, test: &Array4<Complex<T>>) -> Result<f64> {
    check_dims(reference, test)?;
    let (err, _, peak) = magnitude_sums(reference, test);
    if peak == 0.0 {
        return Err(Error::InvalidArgument("reference volume is all zero".into()));
    }
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = err / reference.len() as f64;
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// `||ref| - |test||^2 / ||ref||^2` over all voxels.
pub fn nmse<T: Real>(reference: &DwiVolume<T>, test: &DwiVolume<T>) -> Result<f64> {
    nmse_arrays(reference.data(), test.data())
}

/// `10 log10(max|ref|^2 / MSE)`.
pub fn psnr<T: Real>(reference: &DwiVolume<T>, test: &DwiVolume<T>) -> Result<f64> {
    psnr_arrays(reference.data(), test.data())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.edges[i], self.edges[i + 1], c);
        }
        s
    }
}

/// Absolute errors over the foreground, in voxel order.
pub fn foreground_abs_errors<T: Real>(reference: ArrayView3<T>, test: ArrayView3<T>, foreground: ArrayView3<bool>) -> Result<Vec<f64>> {
    if reference.dim() != test.dim() || reference.dim() != foreground.dim() {
        return Err(Error::Shape(format!(
            "maps {:?} / {:?} vs foreground {:?}",
            reference.dim(),
            test.dim(),
            foreground.dim()
        )));
    }
    let mut out = Vec::new();
    Zip::from(reference).and(test).and(foreground).for_each(|&r, &t, &f| {
        if f {
            out.push((r - t).fabs().as_f64());
        }
    });
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty foreground".into()));
    }
    Ok(out)
}

/// Absolute foreground errors binned uniformly on `[0, max error]`.
pub fn map_error_histogram<T: Real>(
    reference: ArrayView3<T>,
    test: ArrayView3<T>,
    foreground: ArrayView3<bool>,
    n_bins: usize,
) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("n_bins must be >= 2, got {n_bins}")));
    }
    let errs = foreground_abs_errors(reference, test, foreground)?;
    Ok(histogram_of(&errs, n_bins))
}

fn histogram_of(errs: &[f64], n_bins: usize) -> Histogram {
    let hi = errs.iter().copied().fold(0.0, f64::max);
    let edges = (0..=n_bins).map(|i| hi * i as f64 / n_bins as f64).collect();
    let mut counts = vec![0u64; n_bins];
    for &e in errs {
        let b = if hi > 0.0 { ((e / hi) * n_bins as f64) as usize } else { 0 };
        counts[b.min(n_bins - 1)] += 1;
    }
    Histogram { edges, counts }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub af: f64,
    pub q_mode: String,
    pub nmse: f64,
    pub psnr_db: f64,
    pub fa_err_hist: Histogram,
    pub md_err_hist: Histogram,
    pub fa_median_err: f64,
    pub md_median_err: f64,
}

pub const METRICS_CSV_HEADER: &str = "method,af,q_mode,nmse,psnr_db";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:e},{}", self.method, self.af, self.q_mode, self.nmse, self.psnr_db)
    }
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GradientTable;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn vol(data: Array4<Complex<f64>>) -> DwiVolume<f64> {
        let nq = data.dim().3;
        let mut dirs = vec![[0.0; 3]];
        dirs.extend(crate::phantom::spiral_directions::<f64>(nq - 1));
        let b = std::iter::once(0.0).chain(std::iter::repeat_n(1000.0, nq - 1)).collect();
        DwiVolume::new(data, GradientTable::new(dirs, b).unwrap()).unwrap()
    }

    fn ramp() -> DwiVolume<f64> {
        vol(Array4::from_shape_fn((4, 3, 2, 2), |(i, j, k, q)| Complex::new(1.0 + i as f64, (j + k + q) as f64)))
    }

    #[test]
    fn nmse_special_values() {
        let r = ramp();
        assert_eq!(nmse(&r, &r).unwrap(), 0.0);
        let zero = vol(Array4::zeros(r.data().dim()));
        assert!((nmse(&r, &zero).unwrap() - 1.0).abs() < 1e-15);
        let twice = vol(r.data().mapv(|c| c * 2.0));
        assert!((nmse(&r, &twice).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&zero, &r).is_err());
        assert!(psnr(&zero, &r).is_err());
    }

    #[test]
    fn psnr_values() {
        let r = ramp();
        assert_eq!(psnr(&r, &r).unwrap(), PSNR_CAP_DB);
        // peak 1, every voxel off by 0.01 -> MSE 1e-4 -> 40 dB
        let one = vol(Array4::from_elem((2, 2, 1, 2), Complex::new(1.0, 0.0)));
        let off = vol(Array4::from_elem((2, 2, 1, 2), Complex::new(0.99, 0.0)));
        assert!((psnr(&one, &off).unwrap() - 40.0).abs() < 1e-9);
        let t = vol(r.data().mapv(|c| c * 1.1));
        let s = 3.7;
        let (rs, ts) = (vol(r.data().mapv(|c| c * s)), vol(t.data().mapv(|c| c * s)));
        assert!((psnr(&r, &t).unwrap() - psnr(&rs, &ts).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn histogram_cases() {
        let a = Array3::from_shape_fn((3, 3, 2), |(i, j, k)| (i * 7 + j * 3 + k) as f64 * 0.01);
        let fg = Array3::from_shape_fn((3, 3, 2), |(i, _, _)| i > 0);
        let h = map_error_histogram(a.view(), a.view(), fg.view(), 5).unwrap();
        assert_eq!(h.counts[0], 12);
        assert_eq!(h.total(), 12);
        let shifted = a.mapv(|v| v + 0.25);
        let h = map_error_histogram(a.view(), shifted.view(), fg.view(), 4).unwrap();
        let bin = h.counts.iter().position(|&c| c > 0).unwrap();
        assert_eq!(h.counts[bin], 12);
        assert!(h.edges[bin] <= 0.25 + 1e-12 && 0.25 <= h.edges[bin + 1] + 1e-12);
        let none = Array3::from_elem((3, 3, 2), false);
        assert!(map_error_histogram(a.view(), a.view(), none.view(), 4).is_err());
        assert!(map_error_histogram(a.view(), a.view(), fg.view(), 1).is_err());
    }

    #[test]
    fn csv_layout() {
        let h = Histogram { edges: vec![0.0, 0.5, 1.0], counts: vec![3, 1] };
        assert_eq!(h.to_csv(), "bin_lo,bin_hi,count\n0,0.5,3\n0.5,1,1\n");
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    proptest! {
        #[test]
        fn histogram_counts_cover_foreground(vals in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>()), 24), bins in 2usize..12) {
            let r = Array3::from_shape_fn((2, 3, 4), |(i, j, k)| vals[i * 12 + j * 4 + k].0);
            let t = Array3::from_shape_fn((2, 3, 4), |(i, j, k)| vals[i * 12 + j * 4 + k].1);
            let fg = Array3::from_shape_fn((2, 3, 4), |(i, j, k)| vals[i * 12 + j * 4 + k].2);
            let n = fg.iter().filter(|&&b| b).count() as u64;
            match map_error_histogram(r.view(), t.view(), fg.view(), bins) {
                Ok(h) => prop_assert_eq!(h.total(), n),
                Err(_) => prop_assert_eq!(n, 0),
            }
        }

        #[test]
        fn nmse_psnr_monotone(scale_a in 0.0f64..0.5, scale_b in 0.0f64..0.5) {
            let r = ramp();
            let a = vol(r.data().mapv(|c| c * (1.0 + scale_a)));
            let b = vol(r.data().mapv(|c| c * (1.0 + scale_b)));
            let (na, nb) = (nmse(&r, &a).unwrap(), nmse(&r, &b).unwrap());
            let (pa, pb) = (psnr(&r, &a).unwrap(), psnr(&r, &b).unwrap());
            if na < nb { prop_assert!(pa > pb); }
            if na > nb { prop_assert!(pa < pb); }
        }
    }
}

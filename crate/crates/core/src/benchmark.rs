//! Method comparison grid: every (method, acceleration, q-mode) cell is
//! reconstructed from the same phantom and scored against the fully sampled
//! truth.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cs::{cs_reconstruct, CsConfig};
use crate::dti::{fit_tensor_volume, TensorMap};
use crate::fft::ifft2_per_slice;
use crate::io;
use crate::klr::{consistency_error, klr_reconstruct_volume, KlrConfig};
use crate::metrics::{foreground_abs_errors, map_error_histogram, median, metrics_csv, nmse, psnr, MetricsReport};
use crate::model::DwiVolume;
use crate::phantom::{forward_kspace, generate_phantom, PhantomSpec};
use crate::sampling::{apply_undersampling, generate_vd_mask, select_q_subset, MaskSpec, QSubset, SamplingMask};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "zero-fill")]
    ZeroFill,
    #[serde(rename = "cs")]
    Cs,
    #[serde(rename = "klr")]
    Klr,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ZeroFill => "zero-fill",
            Self::Cs => "cs",
            Self::Klr => "klr",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QMode {
    Full,
    Subset,
}

impl fmt::Display for QMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Subset => "subset",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub phantom: PhantomSpec<f64>,
    pub afs: Vec<f64>,
    pub q_modes: Vec<QMode>,
    pub methods: Vec<Method>,
    /// Mask parameters; `af` is replaced by each grid value.
    pub mask: MaskSpec,
    pub klr: KlrConfig<f64>,
    pub cs: CsConfig<f64>,
    /// When non-empty, CS is run with `lambda_wavelet = lambda_tv = l` for
    /// every `l` and the lowest-NMSE result is kept.
    pub cs_lambda_grid: Vec<f64>,
    /// Diffusion-weighted directions kept in subset mode (default: half).
    pub q_subset_directions: Option<usize>,
    pub q_subset_seed: u64,
    pub n_bins: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            afs: vec![2.0, 4.0, 6.0, 8.0],
            q_modes: vec![QMode::Full, QMode::Subset],
            methods: vec![Method::ZeroFill, Method::Cs, Method::Klr],
            mask: MaskSpec { per_direction: true, ..MaskSpec::default() },
            klr: KlrConfig::default(),
            cs: CsConfig::default(),
            cs_lambda_grid: Vec::new(),
            q_subset_directions: None,
            q_subset_seed: 0,
            n_bins: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CellOutput {
    pub report: MetricsReport,
    pub volume: DwiVolume<f64>,
    pub tensors: TensorMap<f64>,
    /// Regularization weight picked from the grid (CS only).
    pub cs_lambda: Option<f64>,
    /// Relative k-space mismatch on sampled entries (KLR only).
    pub consistency: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BenchmarkOutput {
    pub cells: Vec<CellOutput>,
    pub reference: TensorMap<f64>,
}

impl BenchmarkOutput {
    pub fn reports(&self) -> Vec<MetricsReport> {
        self.cells.iter().map(|c| c.report.clone()).collect()
    }
}

/// Builds the measured data of one grid cell.
pub struct Acquisition {
    pub truth: DwiVolume<f64>,
    pub measured: crate::model::KSpaceVolume<f64>,
    pub mask: SamplingMask,
    pub subset: Option<QSubset>,
}

pub fn acquire(truth: &DwiVolume<f64>, mask_spec: &MaskSpec, af: f64, q_mode: QMode, subset_dirs: usize, subset_seed: u64) -> Result<Acquisition> {
    let subset = match q_mode {
        QMode::Full => None,
        QMode::Subset => {
            let nb0 = truth.gtab().b0_indices().len();
            Some(select_q_subset(truth.gtab(), nb0 + subset_dirs, subset_seed)?)
        }
    };
    let truth = match &subset {
        Some(s) => truth.select_q(&s.indices)?,
        None => truth.clone(),
    };
    let mask = generate_vd_mask(truth.shape(), &MaskSpec { af, ..mask_spec.clone() })?;
    let full_k = forward_kspace(&truth);
    let measured = apply_undersampling(&full_k, &mask, None)?;
    Ok(Acquisition { truth, measured, mask, subset })
}

fn map_stats(reference: &TensorMap<f64>, test: &TensorMap<f64>, n_bins: usize) -> Result<[(crate::metrics::Histogram, f64); 2]> {
    let fg = reference.foreground.view();
    let fa = map_error_histogram(reference.fa.view(), test.fa.view(), fg, n_bins)?;
    let md = map_error_histogram(reference.md.view(), test.md.view(), fg, n_bins)?;
    let fa_med = median(&foreground_abs_errors(reference.fa.view(), test.fa.view(), fg)?).unwrap_or(0.0);
    let md_med = median(&foreground_abs_errors(reference.md.view(), test.md.view(), fg)?).unwrap_or(0.0);
    Ok([(fa, fa_med), (md, md_med)])
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutput> {
    if cfg.afs.is_empty() || cfg.q_modes.is_empty() || cfg.methods.is_empty() {
        return Err(Error::InvalidArgument("benchmark grid is empty".into()));
    }
    let phantom = generate_phantom(&cfg.phantom)?;
    let reference = fit_tensor_volume(&phantom.truth)?;
    let subset_dirs = cfg.q_subset_directions.unwrap_or(cfg.phantom.n_directions / 2);

    let mut cells = Vec::new();
    for &q_mode in &cfg.q_modes {
        for &af in &cfg.afs {
            let acq = acquire(&phantom.truth, &cfg.mask, af, q_mode, subset_dirs, cfg.q_subset_seed)?;
            for &method in &cfg.methods {
                let (volume, cs_lambda, consistency) = match method {
                    Method::ZeroFill => (ifft2_per_slice(&acq.measured), None, None),
                    Method::Klr => {
                        let out = klr_reconstruct_volume(&acq.measured, &acq.mask, &cfg.klr)?;
                        let c = consistency_error(&out.volume, &acq.measured, &acq.mask)?;
                        (out.volume, None, Some(c))
                    }
                    Method::Cs => {
                        let (v, l) = best_cs(&acq, cfg)?;
                        (v, l, None)
                    }
                };
                let tensors = fit_tensor_volume(&volume)?;
                let [(fa_hist, fa_med), (md_hist, md_med)] = map_stats(&reference, &tensors, cfg.n_bins)?;
                let report = MetricsReport {
                    method: method.to_string(),
                    af,
                    q_mode: q_mode.to_string(),
                    nmse: nmse(&acq.truth, &volume)?,
                    psnr_db: psnr(&acq.truth, &volume)?,
                    fa_err_hist: fa_hist,
                    md_err_hist: md_hist,
                    fa_median_err: fa_med,
                    md_median_err: md_med,
                };
                cells.push(CellOutput { report, volume, tensors, cs_lambda, consistency });
            }
        }
    }
    Ok(BenchmarkOutput { cells, reference })
}

/// CS at the configured weights, or the lowest-NMSE point of the lambda grid.
pub fn best_cs(acq: &Acquisition, cfg: &BenchmarkConfig) -> Result<(DwiVolume<f64>, Option<f64>)> {
    if cfg.cs_lambda_grid.is_empty() {
        return Ok((cs_reconstruct(&acq.measured, &acq.mask, &cfg.cs)?.volume, None));
    }
    let mut best: Option<(f64, DwiVolume<f64>, f64)> = None;
    for &l in &cfg.cs_lambda_grid {
        let c = CsConfig { lambda_wavelet: l, lambda_tv: l, ..cfg.cs.clone() };
        let v = cs_reconstruct(&acq.measured, &acq.mask, &c)?.volume;
        let e = nmse(&acq.truth, &v)?;
        if best.as_ref().is_none_or(|(b, _, _)| e < *b) {
            best = Some((e, v, l));
        }
    }
    let (_, v, l) = best.expect("non-empty grid");
    Ok((v, Some(l)))
}

pub fn cell_stem(report: &MetricsReport) -> String {
    format!("{}_af{}_{}", report.method, report.af, report.q_mode)
}

/// Writes `metrics.csv`, per-cell FA/MD histogram CSVs and, when requested,
/// every reconstructed volume.
pub fn write_outputs(dir: impl AsRef<Path>, out: &BenchmarkOutput, save_volumes: bool) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    io::write_atomic(&dir.join("metrics.csv"), metrics_csv(&out.reports()).as_bytes())?;
    for cell in &out.cells {
        let stem = cell_stem(&cell.report);
        io::write_atomic(&dir.join(format!("{stem}_fa_hist.csv")), cell.report.fa_err_hist.to_csv().as_bytes())?;
        io::write_atomic(&dir.join(format!("{stem}_md_hist.csv")), cell.report.md_err_hist.to_csv().as_bytes())?;
        if save_volumes {
            io::write_dwi(dir.join(format!("{stem}.vol")), &cell.volume)?;
        }
    }
    Ok(())
}

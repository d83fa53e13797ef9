//! `klr`: phantom generation, masking, KLR and CS reconstruction, tensor
//! fitting and metrics from the command line.
//!
//! Every subcommand prints one JSON line to stdout. Exit status is 0 on
//! success, 1 on a usage error and 2 when the data could not be processed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{s, Axis};
use serde_json::{json, Value};

use klr_core::benchmark::{self, BenchmarkConfig};
use klr_core::cs::{cs_reconstruct, CsConfig};
use klr_core::dti::fit_tensor_volume;
use klr_core::io;
use klr_core::kernel::KernelParams;
use klr_core::klr::{consistency_error, klr_reconstruct_volume, KlrConfig, PhaseMode};
use klr_core::metrics::{map_error_histogram, metrics_csv, nmse, psnr, MetricsReport};
use klr_core::model::parse_dims;
use klr_core::phantom::{forward_kspace, generate_phantom, PhantomSpec};
use klr_core::sampling::{apply_undersampling, generate_vd_mask, select_q_subset, MaskSpec};
use klr_core::VolumeShape;

#[derive(Parser)]
#[command(name = "klr", version, about = "Kernel low-rank reconstruction of undersampled diffusion MRI")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic ground truth.
    #[command(subcommand, arg_required_else_help = true)]
    Phantom(PhantomCmd),
    /// Variable-density k-space masks.
    #[command(subcommand, arg_required_else_help = true)]
    Mask(MaskCmd),
    /// Reconstruction from undersampled k-space.
    #[command(subcommand, arg_required_else_help = true)]
    Recon(ReconCmd),
    /// Diffusion tensor fitting.
    #[command(subcommand, arg_required_else_help = true)]
    Dti(DtiCmd),
    /// Reconstruction quality metrics.
    #[command(subcommand, arg_required_else_help = true)]
    Metrics(MetricsCmd),
    /// Method comparison grid.
    #[command(subcommand, arg_required_else_help = true)]
    Benchmark(BenchmarkCmd),
}

#[derive(Subcommand)]
enum PhantomCmd {
    Generate(PhantomArgs),
}

#[derive(Subcommand)]
enum MaskCmd {
    Generate(MaskArgs),
}

#[derive(Subcommand)]
enum ReconCmd {
    Klr(KlrArgs),
    Cs(CsArgs),
}

#[derive(Subcommand)]
enum DtiCmd {
    Fit(DtiArgs),
}

#[derive(Subcommand)]
enum MetricsCmd {
    Compare(CompareArgs),
}

#[derive(Subcommand)]
enum BenchmarkCmd {
    Run(BenchArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// NXxNYxNZ, or NXxNYxNZxNDIRS.
    #[arg(long, default_value = "64x64x4x24")]
    shape: String,
    /// Diffusion-weighted directions (overrides the 4th shape value).
    #[arg(long)]
    ndirs: Option<usize>,
    #[arg(long = "b", default_value_t = 1000.0)]
    b_value: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output_truth: PathBuf,
    #[arg(long)]
    output_kspace: Option<PathBuf>,
    /// Extra copy of the gradient table.
    #[arg(long)]
    output_gtab: Option<PathBuf>,
}

#[derive(Args)]
struct MaskArgs {
    /// Take the dimensions from this k-space container.
    #[arg(long, conflicts_with = "shape", required_unless_present = "shape")]
    like: Option<PathBuf>,
    /// NXxNYxNZxNQ.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long, default_value_t = 4.0)]
    af: f64,
    #[arg(long, default_value_t = 0.08)]
    center_radius: f64,
    #[arg(long, default_value_t = 3.0)]
    decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent pattern for every q.
    #[arg(long)]
    per_direction: bool,
    /// Keep only this many diffusion-weighted directions of the --like data.
    #[arg(long, requires = "like", requires = "output_kspace")]
    q_subset_dirs: Option<usize>,
    /// Undersampled (and q-subsetted) copy of the --like data.
    #[arg(long, requires = "like")]
    output_kspace: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Calibration,
    Iterate,
}

#[derive(Args)]
struct KlrArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 8)]
    rank: usize,
    #[arg(long, default_value_t = 2)]
    degree: u32,
    #[arg(long, default_value_t = 1.0)]
    offset: f64,
    #[arg(long, default_value_t = 2000)]
    ntrain: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PhaseArg::Calibration)]
    phase: PhaseArg,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    save_model: Option<PathBuf>,
}

#[derive(Args)]
struct CsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    lambda_wavelet: f64,
    #[arg(long, default_value_t = 0.02)]
    lambda_tv: f64,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Return the raw solver output without reinserting measured samples.
    #[arg(long)]
    no_final_consistency: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DtiArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output_fa: Option<PathBuf>,
    #[arg(long)]
    output_md: Option<PathBuf>,
    /// `(nx, ny, nz, 6)` tensor components.
    #[arg(long)]
    output_tensors: Option<PathBuf>,
    #[arg(long)]
    output_rgb: Option<PathBuf>,
    /// Write FA, MD and color PNGs of every slice here.
    #[arg(long)]
    png_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 3e-3)]
    md_window: f64,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "test")]
    method: String,
    #[arg(long, default_value_t = 1.0)]
    af: f64,
    #[arg(long, default_value = "full")]
    q_mode: String,
    #[arg(long, default_value_t = 20)]
    n_bins: usize,
    /// Metrics CSV (one row).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    output_fa_hist: Option<PathBuf>,
    #[arg(long)]
    output_md_hist: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON experiment description; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    save_volumes: bool,
}

/// Usage failures exit with 1, data failures with 2.
enum Failure {
    Usage(String),
    Data(klr_core::Error),
}

impl From<klr_core::Error> for Failure {
    fn from(e: klr_core::Error) -> Self {
        Self::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.into())
    }
}

type Outcome = Result<Value, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Errors from flag values alone are usage errors.
fn flag<T>(r: klr_core::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn phantom_generate(a: PhantomArgs) -> Outcome {
    let dims = flag(parse_dims(&a.shape))?;
    let (nx, ny, nz, from_shape) = match dims[..] {
        [nx, ny, nz] => (nx, ny, nz, None),
        [nx, ny, nz, nd] => (nx, ny, nz, Some(nd)),
        _ => return Err(usage(format!("--shape needs 3 or 4 values, got {}", a.shape))),
    };
    let n_directions = match (a.ndirs, from_shape) {
        (Some(n), Some(m)) if n != m => return Err(usage(format!("--ndirs {n} contradicts --shape {}", a.shape))),
        (Some(n), _) | (None, Some(n)) => n,
        (None, None) => PhantomSpec::<f64>::default().n_directions,
    };
    let spec = PhantomSpec { nx, ny, nz, n_directions, b_value: a.b_value, noise_sigma: a.noise, seed: a.seed };
    let ph = generate_phantom(&spec)?;
    io::write_dwi(&a.output_truth, &ph.truth)?;
    if let Some(p) = &a.output_kspace {
        io::write_kspace(p, &forward_kspace(&ph.truth))?;
    }
    if let Some(p) = &a.output_gtab {
        io::write_gtab(p, ph.truth.gtab())?;
    }
    Ok(json!({
        "command": "phantom generate",
        "shape": ph.truth.shape().to_string(),
        "n_b0": spec.n_b0(),
        "n_directions": n_directions,
        "noise": a.noise,
        "seed": a.seed,
        "truth": a.output_truth,
        "kspace": a.output_kspace,
    }))
}

fn mask_generate(a: MaskArgs) -> Outcome {
    let spec = MaskSpec { af: a.af, center_radius: a.center_radius, decay: a.decay, seed: a.seed, per_direction: a.per_direction };
    let (shape, source) = match (&a.like, &a.shape) {
        (Some(p), _) => {
            let k = io::read_kspace(p)?;
            let k = match a.q_subset_dirs {
                Some(n) => {
                    let sub = select_q_subset(k.gtab(), k.gtab().b0_indices().len() + n, a.seed)?;
                    k.select_q(&sub.indices)?
                }
                None => k,
            };
            (k.shape(), Some(k))
        }
        (None, Some(s)) => (flag(s.parse::<VolumeShape>())?, None),
        (None, None) => unreachable!("clap requires one of --like/--shape"),
    };
    let mask = generate_vd_mask(shape, &spec)?;
    io::write_mask(&a.output, &mask)?;
    if let (Some(p), Some(k)) = (&a.output_kspace, &source) {
        io::write_kspace(p, &apply_undersampling(k, &mask, None)?)?;
    }
    Ok(json!({
        "command": "mask generate",
        "dims": [shape.nx, shape.ny, shape.nq],
        "af_target": a.af,
        "af_achieved": mask.achieved_af(),
        "per_direction": a.per_direction,
        "seed": a.seed,
        "output": a.output,
    }))
}

fn recon_klr(a: KlrArgs) -> Outcome {
    let k = io::read_kspace(&a.input)?;
    let mask = io::read_mask(&a.mask)?;
    let cfg = KlrConfig {
        n_train: a.ntrain,
        params: flag(KernelParams::new(a.offset, a.degree))?,
        rank_r: a.rank,
        max_iters: a.iters,
        tol: a.tol,
        seed: a.seed,
        phase: match a.phase {
            PhaseArg::Calibration => PhaseMode::Calibration,
            PhaseArg::Iterate => PhaseMode::Iterate,
        },
    };
    let out = klr_reconstruct_volume(&k, &mask, &cfg)?;
    io::write_dwi(&a.output, &out.volume)?;
    if let Some(p) = &a.save_model {
        io::write_kernel_model(p, &out.model)?;
    }
    let consistency = consistency_error(&out.volume, &apply_undersampling(&k, &mask, None)?, &mask)?;
    Ok(json!({
        "command": "recon klr",
        "output": a.output,
        "effective_rank": out.model.effective_rank(),
        "rank_reduced": out.model.rank_reduced(),
        "harvest_with_replacement": out.harvest_with_replacement,
        "iterations": out.slices.iter().map(|d| d.iterations).collect::<Vec<_>>(),
        "converged": out.slices.iter().all(|d| d.converged),
        "clamped": out.slices.iter().map(|d| d.clamped).sum::<usize>(),
        "consistency_error": consistency,
        "seed": a.seed,
    }))
}

fn recon_cs(a: CsArgs) -> Outcome {
    let k = io::read_kspace(&a.input)?;
    let mask = io::read_mask(&a.mask)?;
    let cfg = CsConfig {
        lambda_wavelet: a.lambda_wavelet,
        lambda_tv: a.lambda_tv,
        max_iters: a.iters,
        step: a.step,
        tol: a.tol,
        final_consistency: !a.no_final_consistency,
    };
    let out = cs_reconstruct(&k, &mask, &cfg)?;
    io::write_dwi(&a.output, &out.volume)?;
    Ok(json!({
        "command": "recon cs",
        "output": a.output,
        "iterations": out.iterations,
        "converged": out.converged,
        "objective": out.objective.last(),
        "backtracks": out.backtracks,
    }))
}

fn dti_fit(a: DtiArgs) -> Outcome {
    let dwi = io::read_dwi(&a.input)?;
    let tm = fit_tensor_volume(&dwi)?;
    if let Some(p) = &a.output_fa {
        io::write_real(p, &tm.fa.clone().into_dyn())?;
    }
    if let Some(p) = &a.output_md {
        io::write_real(p, &tm.md.clone().into_dyn())?;
    }
    if let Some(p) = &a.output_tensors {
        io::write_real(p, &tm.tensors.clone().into_dyn())?;
    }
    if let Some(p) = &a.output_rgb {
        io::write_real(p, &tm.rgb.clone().into_dyn())?;
    }
    if let Some(dir) = &a.png_dir {
        std::fs::create_dir_all(dir)?;
        for z in 0..tm.dims().2 {
            io::export_png(tm.fa.index_axis(Axis(2), z), dir.join(format!("fa_z{z}.png")), (0.0, 1.0))?;
            io::export_png(tm.md.index_axis(Axis(2), z), dir.join(format!("md_z{z}.png")), (0.0, a.md_window))?;
            io::export_png_rgb(tm.rgb.slice(s![.., .., z, ..]), dir.join(format!("rgb_z{z}.png")), (0.0, 1.0))?;
        }
    }
    let fg: Vec<(f64, f64)> =
        tm.foreground.indexed_iter().filter(|(_, &b)| b).map(|(i, _)| (tm.fa[i], tm.md[i])).collect();
    let n = fg.len().max(1) as f64;
    Ok(json!({
        "command": "dti fit",
        "foreground_voxels": fg.len(),
        "mean_fa": fg.iter().map(|v| v.0).sum::<f64>() / n,
        "max_fa": fg.iter().map(|v| v.0).fold(0.0, f64::max),
        "mean_md": fg.iter().map(|v| v.1).sum::<f64>() / n,
    }))
}

fn metrics_compare(a: CompareArgs) -> Outcome {
    let reference = io::read_dwi(&a.reference)?;
    let test = io::read_dwi(&a.test)?;
    let e = nmse(&reference, &test)?;
    let p = psnr(&reference, &test)?;
    let rt = fit_tensor_volume(&reference)?;
    let tt = fit_tensor_volume(&test)?;
    let fg = rt.foreground.view();
    let fa_hist = map_error_histogram(rt.fa.view(), tt.fa.view(), fg, a.n_bins)?;
    let md_hist = map_error_histogram(rt.md.view(), tt.md.view(), fg, a.n_bins)?;
    let errs = |r: &ndarray::Array3<f64>, t: &ndarray::Array3<f64>| {
        klr_core::metrics::foreground_abs_errors(r.view(), t.view(), fg).map(|v| klr_core::metrics::median(&v).unwrap_or(0.0))
    };
    let report = MetricsReport {
        method: a.method.clone(),
        af: a.af,
        q_mode: a.q_mode.clone(),
        nmse: e,
        psnr_db: p,
        fa_median_err: errs(&rt.fa, &tt.fa)?,
        md_median_err: errs(&rt.md, &tt.md)?,
        fa_err_hist: fa_hist,
        md_err_hist: md_hist,
    };
    if let Some(path) = &a.output {
        io::write_atomic(path, metrics_csv(std::slice::from_ref(&report)).as_bytes())?;
    }
    if let Some(path) = &a.output_fa_hist {
        io::write_atomic(path, report.fa_err_hist.to_csv().as_bytes())?;
    }
    if let Some(path) = &a.output_md_hist {
        io::write_atomic(path, report.md_err_hist.to_csv().as_bytes())?;
    }
    Ok(json!({
        "command": "metrics compare",
        "method": a.method,
        "nmse": e,
        "psnr_db": p,
        "fa_median_err": report.fa_median_err,
        "md_median_err": report.md_median_err,
    }))
}

fn benchmark_run(a: BenchArgs) -> Outcome {
    let mut cfg: BenchmarkConfig = match &a.config {
        Some(p) => serde_json::from_slice(&std::fs::read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => BenchmarkConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.phantom.seed = seed;
        cfg.mask.seed = seed;
        cfg.klr.seed = seed;
        cfg.q_subset_seed = seed;
    }
    let out = benchmark::run_benchmark(&cfg)?;
    benchmark::write_outputs(&a.output_dir, &out, a.save_volumes)?;
    Ok(json!({
        "command": "benchmark run",
        "rows": out.cells.len(),
        "metrics": a.output_dir.join("metrics.csv"),
        "cells": out.cells.iter().map(|c| json!({
            "method": c.report.method,
            "af": c.report.af,
            "q_mode": c.report.q_mode,
            "nmse": c.report.nmse,
            "psnr_db": c.report.psnr_db,
            "cs_lambda": c.cs_lambda,
        })).collect::<Vec<_>>(),
    }))
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("KLR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("KLR_THREADS must be a non-negative integer, got {raw:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Phantom(PhantomCmd::Generate(a)) => phantom_generate(a),
        Command::Mask(MaskCmd::Generate(a)) => mask_generate(a),
        Command::Recon(ReconCmd::Klr(a)) => recon_klr(a),
        Command::Recon(ReconCmd::Cs(a)) => recon_cs(a),
        Command::Dti(DtiCmd::Fit(a)) => dti_fit(a),
        Command::Metrics(MetricsCmd::Compare(a)) => metrics_compare(a),
        Command::Benchmark(BenchmarkCmd::Run(a)) => benchmark_run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

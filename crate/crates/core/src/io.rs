//! File formats: the binary volume container, gradient-table sidecars,
//! kernel-model files and PNG export.
//!
//! Container layout (all little-endian):
//!
//! | bytes          | content                                          |
//! |----------------|--------------------------------------------------|
//! | 8              | magic `KLRVOL01`                                 |
//! | 1              | dtype: 0 f32, 1 complex (f32 re, f32 im), 2 u8 bool, 3 f64 |
//! | 1              | ndims                                            |
//! | 4 * ndims      | dims, u32 each                                   |
//! | rest           | payload, row-major (last axis fastest)           |
//!
//! Every write goes to a temporary file in the destination directory that is
//! then renamed over the target.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use ndarray::{Array3, Array4, ArrayD, ArrayView2, ArrayView3, IxDyn};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::kernel::{KernelModel, KernelParams};
use crate::model::{DwiVolume, GradientTable, KSpaceVolume};
use crate::sampling::SamplingMask;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"KLRVOL01";
/// Largest element count a container may declare.
pub const MAX_ELEMENTS: u128 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    C64 = 1,
    Bool = 2,
    F64 = 3,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::F32),
            1 => Some(Self::C64),
            2 => Some(Self::Bool),
            3 => Some(Self::F64),
            _ => None,
        }
    }

    /// Bytes per element.
    pub fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::C64 => 8,
            Self::Bool => 1,
            Self::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VolumeData {
    F32(ArrayD<f32>),
    C64(ArrayD<Complex<f32>>),
    Bool(ArrayD<bool>),
    F64(ArrayD<f64>),
}

impl VolumeData {
    pub fn dtype(&self) -> DType {
        match self {
            Self::F32(_) => DType::F32,
            Self::C64(_) => DType::C64,
            Self::Bool(_) => DType::Bool,
            Self::F64(_) => DType::F64,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            Self::F32(a) => a.shape().to_vec(),
            Self::C64(a) => a.shape().to_vec(),
            Self::Bool(a) => a.shape().to_vec(),
            Self::F64(a) => a.shape().to_vec(),
        }
    }
}

pub fn encode(data: &VolumeData) -> Result<Vec<u8>> {
    let dims = data.dims();
    if dims.len() > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!("{} dims do not fit the header", dims.len())));
    }
    let count: usize = dims.iter().product();
    let mut out = Vec::with_capacity(10 + 4 * dims.len() + count * data.dtype().size());
    out.extend_from_slice(MAGIC);
    out.push(data.dtype().code());
    out.push(dims.len() as u8);
    for &d in &dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    // iter() walks logical (row-major) order regardless of memory layout
    match data {
        VolumeData::F32(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        VolumeData::C64(a) => a.iter().for_each(|v| {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }),
        VolumeData::Bool(a) => out.extend(a.iter().map(|&b| b as u8)),
        VolumeData::F64(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

struct Header {
    dtype: DType,
    dims: Vec<usize>,
    len: usize,
    payload_bytes: u64,
}

fn parse_header(path: &Path, reader: &mut impl Read) -> Result<Header> {
    let mut fixed = [0u8; 10];
    let got = read_up_to(reader, &mut fixed)?;
    if got < 8 || &fixed[..8] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: String::from_utf8_lossy(&fixed[..got.min(8)]).into_owned(),
        });
    }
    if got < 10 {
        return Err(Error::Truncated { path: path.to_path_buf(), expected: 10, found: got as u64 });
    }
    let dtype = DType::from_code(fixed[8]).ok_or(Error::BadDtype { path: path.to_path_buf(), code: fixed[8] })?;
    let ndims = fixed[9] as usize;
    let mut raw = vec![0u8; 4 * ndims];
    let got = read_up_to(reader, &mut raw)?;
    if got < raw.len() {
        return Err(Error::Truncated { path: path.to_path_buf(), expected: (10 + raw.len()) as u64, found: (10 + got) as u64 });
    }
    let dims: Vec<usize> = raw.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
    let count: u128 = dims.iter().map(|&d| d as u128).product();
    if count > MAX_ELEMENTS {
        return Err(Error::DimsOverflow { path: path.to_path_buf(), count });
    }
    Ok(Header { dtype, dims, len: count as usize, payload_bytes: count as u64 * dtype.size() as u64 })
}

fn read_up_to(reader: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

fn decode_payload(h: &Header, bytes: &[u8]) -> Result<VolumeData> {
    let shape = IxDyn(&h.dims);
    let bad = |e: ndarray::ShapeError| Error::Shape(e.to_string());
    Ok(match h.dtype {
        DType::F32 => {
            let v = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            VolumeData::F32(ArrayD::from_shape_vec(shape, v).map_err(bad)?)
        }
        DType::C64 => {
            let v = bytes
                .chunks_exact(8)
                .map(|c| Complex::new(f32::from_le_bytes([c[0], c[1], c[2], c[3]]), f32::from_le_bytes([c[4], c[5], c[6], c[7]])))
                .collect();
            VolumeData::C64(ArrayD::from_shape_vec(shape, v).map_err(bad)?)
        }
        DType::Bool => VolumeData::Bool(ArrayD::from_shape_vec(shape, bytes.iter().map(|&b| b != 0).collect()).map_err(bad)?),
        DType::F64 => {
            let v = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            VolumeData::F64(ArrayD::from_shape_vec(shape, v).map_err(bad)?)
        }
    })
}

/// Parses an in-memory container; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<VolumeData> {
    let mut cursor = bytes;
    let h = parse_header(path, &mut cursor)?;
    let rest = cursor.len() as u64;
    if rest < h.payload_bytes {
        return Err(Error::Truncated { path: path.to_path_buf(), expected: h.payload_bytes, found: rest });
    }
    if rest > h.payload_bytes {
        return Err(Error::Content { path: path.to_path_buf(), msg: format!("{} trailing bytes after payload", rest - h.payload_bytes) });
    }
    debug_assert_eq!(h.len as u64 * h.dtype.size() as u64, h.payload_bytes);
    decode_payload(&h, cursor)
}

/// Reads a container. The header is validated against the file size before
/// the payload is allocated.
pub fn read_container(path: impl AsRef<Path>) -> Result<VolumeData> {
    let path = path.as_ref();
    let mut file = File::open(path)?;
    let total = file.metadata()?.len();
    let h = parse_header(path, &mut file)?;
    let header_len = 10 + 4 * h.dims.len() as u64;
    let rest = total.saturating_sub(header_len);
    if rest < h.payload_bytes {
        return Err(Error::Truncated { path: path.to_path_buf(), expected: h.payload_bytes, found: rest });
    }
    if rest > h.payload_bytes {
        return Err(Error::Content { path: path.to_path_buf(), msg: format!("{} trailing bytes after payload", rest - h.payload_bytes) });
    }
    let mut payload = vec![0u8; h.payload_bytes as usize];
    file.read_exact(&mut payload)?;
    decode_payload(&h, &payload)
}

pub fn write_container(path: impl AsRef<Path>, data: &VolumeData) -> Result<()> {
    write_atomic(path.as_ref(), &encode(data)?)
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn content(path: &Path, msg: impl Into<String>) -> Error {
    Error::Content { path: path.to_path_buf(), msg: msg.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientSidecar {
    pub bvalues: Vec<f64>,
    pub directions: Vec<[f64; 3]>,
}

/// `dir/name.vol` -> `dir/name.gtab.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("gtab.json")
}

pub fn write_gtab(path: impl AsRef<Path>, gtab: &GradientTable<f64>) -> Result<()> {
    let doc = GradientSidecar { bvalues: gtab.bvalues().to_vec(), directions: gtab.directions().to_vec() };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn read_gtab(path: impl AsRef<Path>) -> Result<GradientTable<f64>> {
    let doc: GradientSidecar = serde_json::from_slice(&std::fs::read(path.as_ref())?)?;
    GradientTable::new(doc.directions, doc.bvalues)
}

fn complex_4d(path: &Path) -> Result<Array4<Complex<f64>>> {
    match read_container(path)? {
        VolumeData::C64(a) => {
            let a = a.into_dimensionality::<ndarray::Ix4>().map_err(|_| content(path, "expected a 4-D volume"))?;
            Ok(a.mapv(|c| Complex::new(c.re as f64, c.im as f64)))
        }
        other => Err(content(path, format!("expected complex data, found {:?}", other.dtype()))),
    }
}

fn to_c64(a: &Array4<Complex<f64>>) -> VolumeData {
    VolumeData::C64(a.mapv(|c| Complex::new(c.re as f32, c.im as f32)).into_dyn())
}

/// Writes the volume plus its gradient sidecar. Samples are stored as f32.
pub fn write_dwi(path: impl AsRef<Path>, vol: &DwiVolume<f64>) -> Result<()> {
    let path = path.as_ref();
    write_container(path, &to_c64(vol.data()))?;
    write_gtab(sidecar_path(path), vol.gtab())
}

pub fn read_dwi(path: impl AsRef<Path>) -> Result<DwiVolume<f64>> {
    let path = path.as_ref();
    DwiVolume::new(complex_4d(path)?, read_gtab(sidecar_path(path))?)
}

pub fn write_kspace(path: impl AsRef<Path>, vol: &KSpaceVolume<f64>) -> Result<()> {
    let path = path.as_ref();
    write_container(path, &to_c64(vol.data()))?;
    write_gtab(sidecar_path(path), vol.gtab())
}

pub fn read_kspace(path: impl AsRef<Path>) -> Result<KSpaceVolume<f64>> {
    let path = path.as_ref();
    KSpaceVolume::new(complex_4d(path)?, read_gtab(sidecar_path(path))?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &SamplingMask) -> Result<()> {
    write_container(path, &VolumeData::Bool(mask.pattern().clone().into_dyn()))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<SamplingMask> {
    let path = path.as_ref();
    match read_container(path)? {
        VolumeData::Bool(a) => {
            let a = a.into_dimensionality::<ndarray::Ix3>().map_err(|_| content(path, "expected a 3-D mask"))?;
            SamplingMask::from_pattern(a)
        }
        other => Err(content(path, format!("expected boolean data, found {:?}", other.dtype()))),
    }
}

/// Real map of any rank, stored as f32.
pub fn write_real(path: impl AsRef<Path>, data: &ArrayD<f64>) -> Result<()> {
    write_container(path, &VolumeData::F32(data.mapv(|v| v as f32)))
}

pub fn read_real(path: impl AsRef<Path>) -> Result<ArrayD<f64>> {
    let path = path.as_ref();
    match read_container(path)? {
        VolumeData::F32(a) => Ok(a.mapv(|v| v as f64)),
        VolumeData::F64(a) => Ok(a),
        other => Err(content(path, format!("expected real data, found {:?}", other.dtype()))),
    }
}

pub fn read_real3(path: impl AsRef<Path>) -> Result<Array3<f64>> {
    let path = path.as_ref();
    read_real(path)?.into_dimensionality().map_err(|_| content(path, "expected a 3-D map"))
}

pub fn write_bool3(path: impl AsRef<Path>, data: &Array3<bool>) -> Result<()> {
    write_container(path, &VolumeData::Bool(data.clone().into_dyn()))
}

pub fn read_bool3(path: impl AsRef<Path>) -> Result<Array3<bool>> {
    let path = path.as_ref();
    match read_container(path)? {
        VolumeData::Bool(a) => a.into_dimensionality().map_err(|_| content(path, "expected a 3-D mask")),
        other => Err(content(path, format!("expected boolean data, found {:?}", other.dtype()))),
    }
}

// Kernel model file: a 1-D f64 container holding
// [offset_b, degree_c, rank_r, input_scale, nq, N, r, X (col-major), alphas (col-major), eigvals].
const MODEL_HEADER: usize = 7;

pub fn write_kernel_model(path: impl AsRef<Path>, model: &KernelModel<f64>) -> Result<()> {
    let (nq, n, r) = (model.dim(), model.n_train(), model.effective_rank());
    let mut v = vec![
        model.params().offset_b,
        model.params().degree_c as f64,
        model.rank_r() as f64,
        model.input_scale(),
        nq as f64,
        n as f64,
        r as f64,
    ];
    v.extend(model.training().iter());
    v.extend(model.alphas().iter());
    v.extend(model.eigvals().iter());
    write_container(path, &VolumeData::F64(ArrayD::from_shape_vec(IxDyn(&[v.len()]), v).expect("1-D")))
}

pub fn read_kernel_model(path: impl AsRef<Path>) -> Result<KernelModel<f64>> {
    let path = path.as_ref();
    let v = match read_container(path)? {
        VolumeData::F64(a) if a.ndim() == 1 => a.into_raw_vec_and_offset().0,
        other => return Err(content(path, format!("expected a 1-D f64 model, found {:?} {:?}", other.dtype(), other.dims()))),
    };
    if v.len() < MODEL_HEADER {
        return Err(content(path, "model header too short"));
    }
    let as_count = |x: f64, what: &str| -> Result<usize> {
        if x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64 {
            Ok(x as usize)
        } else {
            Err(content(path, format!("bad {what} field {x}")))
        }
    };
    let params = KernelParams::new(v[0], as_count(v[1], "degree")? as u32)?;
    let (rank_r, scale) = (as_count(v[2], "rank")?, v[3]);
    let (nq, n, r) = (as_count(v[4], "nq")?, as_count(v[5], "N")?, as_count(v[6], "r")?);
    let expected = MODEL_HEADER + nq * n + n * r + r;
    if v.len() != expected {
        return Err(content(path, format!("model body has {} values, header implies {expected}", v.len())));
    }
    let mut at = MODEL_HEADER;
    let training = DMatrix::from_column_slice(nq, n, &v[at..at + nq * n]);
    at += nq * n;
    let alphas = DMatrix::from_column_slice(n, r, &v[at..at + n * r]);
    at += n * r;
    let eigvals = DVector::from_column_slice(&v[at..]);
    KernelModel::from_parts(training, params, alphas, eigvals, rank_r, scale)
}

/// Linear window to 8 bits: `round_half_up(255 * (v - lo) / (hi - lo))`, clamped.
pub fn window_u8(v: f64, lo: f64, hi: f64) -> u8 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * 255.0 + 0.5).floor().min(255.0) as u8
}

fn check_window(lo: f64, hi: f64) -> Result<()> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("window requires finite lo < hi, got ({lo}, {hi})")));
    }
    Ok(())
}

fn encode_png(width: usize, height: usize, color: png::ColorType, pixels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(pixels)?;
    }
    Ok(out)
}

/// 8-bit grayscale PNG; rows follow the first axis.
pub fn export_png(slice: ArrayView2<f64>, path: impl AsRef<Path>, window: (f64, f64)) -> Result<()> {
    check_window(window.0, window.1)?;
    if slice.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PNG slice"));
    }
    let (h, w) = slice.dim();
    let pixels: Vec<u8> = slice.iter().map(|&v| window_u8(v, window.0, window.1)).collect();
    write_atomic(path.as_ref(), &encode_png(w, h, png::ColorType::Grayscale, &pixels)?)
}

/// 24-bit RGB PNG from an `(h, w, 3)` array.
pub fn export_png_rgb(rgb: ArrayView3<f64>, path: impl AsRef<Path>, window: (f64, f64)) -> Result<()> {
    check_window(window.0, window.1)?;
    let (h, w, c) = rgb.dim();
    if c != 3 {
        return Err(Error::Shape(format!("RGB export needs 3 channels, got {c}")));
    }
    if rgb.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PNG slice"));
    }
    let pixels: Vec<u8> = rgb.iter().map(|&v| window_u8(v, window.0, window.1)).collect();
    write_atomic(path.as_ref(), &encode_png(w, h, png::ColorType::Rgb, &pixels)?)
}

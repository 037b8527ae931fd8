//! Volume data model, file I/O, resampling, and intensity
//! standardization.
//!
//! A [`Volume`] is a dense 3D grid of scalars with per-axis physical
//! spacing in millimeters. Axes are ordered sagittal x coronal x axial
//! and stored row-major (axial fastest). Two file formats are read:
//! uncompressed NIfTI-1 (spatial dims only; orientation matrices are
//! ignored beyond `pixdim` spacing) and `rvol`, a JSON header next to a
//! little-endian raw payload. Only `rvol` is written.
//!
//! The standardization pipeline in [`preprocess`] resamples to a target
//! spacing, clips intensities to a fixed or per-image percentile window,
//! and min-max-scales the result into [0, 1].

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Dense 3D scalar grid with physical voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    data: Vec<T>,
    shape: [usize; 3],
    spacing: [f64; 3],
}

impl<T: Real> Volume<T> {
    /// Build a volume, validating shape/spacing/length consistency.
    pub fn new(data: Vec<T>, shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "volume shape components must be >= 1, got {shape:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "voxel spacing must be positive and finite, got {spacing:?}"
            )));
        }
        let expected = shape[0] * shape[1] * shape[2];
        if data.len() != expected {
            return Err(Error::DimMismatch(format!(
                "data length {} does not match shape {:?} ({} voxels)",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Volume { data, shape, spacing })
    }

    pub fn constant(value: T, shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let n = shape[0] * shape[1] * shape[2];
        Volume::new(vec![value; n], shape, spacing)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn voxel_count(&self) -> usize {
        self.data.len()
    }

    /// Physical volume of one voxel in cubic millimeters.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.index(i, j, k)]
    }

    pub fn min_max(&self) -> (T, T) {
        let mut mn = self.data[0];
        let mut mx = self.data[0];
        for &v in &self.data {
            if v < mn {
                mn = v;
            }
            if v > mx {
                mx = v;
            }
        }
        (mn, mx)
    }

    /// Convert voxel data to another scalar type.
    pub fn cast<S: Real>(&self) -> Volume<S> {
        Volume {
            data: self
                .data
                .iter()
                .map(|&v| S::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
            shape: self.shape,
            spacing: self.spacing,
        }
    }

    fn count_non_finite(&self) -> usize {
        self.data.iter().filter(|v| !v.is_finite()).count()
    }
}

/// Intensity window applied after resampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClipMode {
    FixedWindow { lo: f64, hi: f64 },
    /// Window bounds computed per image from all voxels, linear-interpolation
    /// percentiles with inclusive endpoints.
    PercentileWindow { p_lo: f64, p_hi: f64 },
}

/// Standardization parameters: target spacing plus the clip window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_spacing: [f64; 3],
    pub clip: ClipMode,
}

pub const DEFAULT_TARGET_SPACING: [f64; 3] = [1.0, 1.0, 1.5];

impl PreprocessConfig {
    /// CT preset: the standard lung window in Hounsfield units.
    pub fn ct() -> Self {
        PreprocessConfig {
            target_spacing: DEFAULT_TARGET_SPACING,
            clip: ClipMode::FixedWindow { lo: -1350.0, hi: 300.0 },
        }
    }

    /// MRI preset: per-image robust percentile window.
    pub fn mri() -> Self {
        PreprocessConfig {
            target_spacing: DEFAULT_TARGET_SPACING,
            clip: ClipMode::PercentileWindow { p_lo: 1.0, p_hi: 99.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "target spacing must be positive and finite, got {:?}",
                self.target_spacing
            )));
        }
        match self.clip {
            ClipMode::FixedWindow { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::InvalidArgument(format!(
                        "fixed window requires lo < hi, got [{lo}, {hi}]"
                    )));
                }
            }
            ClipMode::PercentileWindow { p_lo, p_hi } => {
                if !(0.0 <= p_lo && p_lo < p_hi && p_hi <= 100.0) {
                    return Err(Error::InvalidArgument(format!(
                        "percentile window requires 0 <= p_lo < p_hi <= 100, got [{p_lo}, {p_hi}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig::mri()
    }
}

/// On-disk volume formats understood by [`load_volume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeFormat {
    Nifti1,
    Rvol,
}

/// Guess the format from a file extension (`.nii` / `.json`).
pub fn infer_format(path: &Path) -> Result<VolumeFormat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("nii") => Ok(VolumeFormat::Nifti1),
        Some("json") => Ok(VolumeFormat::Rvol),
        other => Err(Error::format(
            path,
            format!("cannot infer volume format from extension {other:?} (expected .nii or .json)"),
        )),
    }
}

/// What to do with NaN/Inf voxels found while loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NanPolicy {
    /// Fail with a data error naming the offending count.
    #[default]
    Reject,
    /// Replace non-finite voxels with zero.
    SanitizeZero,
}

/// Scalars with a native `rvol` payload encoding.
pub trait VoxelScalar: Real {
    const DTYPE: &'static str;
    fn append_le(data: &[Self], out: &mut Vec<u8>);
    fn parse_le(bytes: &[u8]) -> Vec<Self>;
}

impl VoxelScalar for f32 {
    const DTYPE: &'static str = "float32";
    fn append_le(data: &[Self], out: &mut Vec<u8>) {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn parse_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

impl VoxelScalar for f64 {
    const DTYPE: &'static str = "float64";
    fn append_le(data: &[Self], out: &mut Vec<u8>) {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn parse_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RvolHeader {
    shape: [usize; 3],
    spacing: [f64; 3],
    dtype: String,
    order: String,
    data: String,
}

/// Load a volume, rejecting NaN/Inf voxels.
pub fn load_volume<T: VoxelScalar>(path: &Path, format: VolumeFormat) -> Result<Volume<T>> {
    load_volume_with(path, format, NanPolicy::Reject)
}

/// Load a volume with an explicit non-finite-voxel policy.
pub fn load_volume_with<T: VoxelScalar>(
    path: &Path,
    format: VolumeFormat,
    policy: NanPolicy,
) -> Result<Volume<T>> {
    let mut v: Volume<T> = match format {
        VolumeFormat::Rvol => load_rvol(path)?,
        VolumeFormat::Nifti1 => load_nifti1(path)?,
    };
    let bad = v.count_non_finite();
    if bad > 0 {
        match policy {
            NanPolicy::Reject => {
                return Err(Error::Data(format!(
                    "{} contains {bad} NaN/Inf voxel(s)",
                    path.display()
                )))
            }
            NanPolicy::SanitizeZero => {
                for x in v.data_mut() {
                    if !x.is_finite() {
                        *x = T::zero();
                    }
                }
            }
        }
    }
    Ok(v)
}

/// Write a volume as `rvol`: `<stem>.json` header plus `<stem>.raw`
/// payload. Loading the pair back reproduces the volume bit-exactly.
pub fn save_volume<T: VoxelScalar>(v: &Volume<T>, path: &Path) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(path, "rvol path needs a UTF-8 file stem"))?;
    let raw_name = format!("{stem}.raw");
    let header = RvolHeader {
        shape: v.shape(),
        spacing: v.spacing(),
        dtype: T::DTYPE.to_string(),
        order: "row-major".to_string(),
        data: raw_name.clone(),
    };
    let json = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::Data(format!("rvol header serialization: {e}")))?;
    let json_path = path.with_extension("json");
    fs::File::create(&json_path)
        .and_then(|mut f| f.write_all(json.as_bytes()))
        .map_err(|e| Error::io(&json_path, e))?;

    let mut payload = Vec::with_capacity(v.voxel_count() * std::mem::size_of::<T>());
    T::append_le(v.data(), &mut payload);
    let raw_path = json_path.with_file_name(&raw_name);
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

fn load_rvol<T: VoxelScalar>(path: &Path) -> Result<Volume<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: RvolHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.order != "row-major" {
        return Err(Error::format(
            path,
            format!("unsupported order {:?} (only row-major)", header.order),
        ));
    }
    let elem = match header.dtype.as_str() {
        "float32" => 4,
        "float64" => 8,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported dtype {other:?} (float32 or float64)"),
            ))
        }
    };
    let raw_path = match Path::new(&header.data) {
        p if p.is_absolute() => p.to_path_buf(),
        p => path.parent().unwrap_or_else(|| Path::new(".")).join(p),
    };
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n = header.shape[0] * header.shape[1] * header.shape[2];
    if bytes.len() != n * elem {
        return Err(Error::format(
            &raw_path,
            format!(
                "payload is {} bytes but shape {:?} at {} needs {}",
                bytes.len(),
                header.shape,
                header.dtype,
                n * elem
            ),
        ));
    }
    let data: Vec<T> = match header.dtype.as_str() {
        "float32" => f32::parse_le(&bytes)
            .into_iter()
            .map(|x| T::from_f64_lossy(x as f64))
            .collect(),
        _ => f64::parse_le(&bytes)
            .into_iter()
            .map(T::from_f64_lossy)
            .collect(),
    };
    Volume::new(data, header.shape, header.spacing)
}

// NIfTI-1 constants.
const NIFTI_HEADER_LEN: usize = 348;
const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

struct HeaderReader<'a> {
    bytes: &'a [u8],
    swap: bool,
}

impl<'a> HeaderReader<'a> {
    fn i16_at(&self, off: usize) -> i16 {
        let raw = [self.bytes[off], self.bytes[off + 1]];
        let v = i16::from_le_bytes(raw);
        if self.swap {
            v.swap_bytes()
        } else {
            v
        }
    }
    fn f32_at(&self, off: usize) -> f32 {
        let mut raw = [0u8; 4];
        raw.copy_from_slice(&self.bytes[off..off + 4]);
        if self.swap {
            raw.reverse();
        }
        f32::from_le_bytes(raw)
    }
}

/// Minimal uncompressed single-file NIfTI-1 reader: spatial dims only,
/// spacing from `pixdim`, `scl_slope`/`scl_inter` applied when set,
/// orientation ignored.
fn load_nifti1<T: Real>(path: &Path) -> Result<Volume<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < NIFTI_HEADER_LEN {
        return Err(Error::format(path, "file shorter than a NIfTI-1 header"));
    }
    let sizeof_hdr = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let swap = match sizeof_hdr {
        348 => false,
        s if s.swap_bytes() == 348 => true,
        s => {
            return Err(Error::format(
                path,
                format!("sizeof_hdr is {s}, not 348: not a NIfTI-1 file"),
            ))
        }
    };
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::format(
            path,
            "magic is not \"n+1\" (only single-file NIfTI-1 is supported)",
        ));
    }
    let h = HeaderReader { bytes: &bytes, swap };

    let ndim = h.i16_at(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(path, format!("invalid dim[0] = {ndim}")));
    }
    let dims: Vec<i16> = (0..ndim as usize).map(|a| h.i16_at(42 + 2 * a)).collect();
    if ndim > 3 && dims[3..].iter().any(|&d| d > 1) {
        return Err(Error::format(
            path,
            format!("{ndim}-dimensional image; only 3 spatial dims are supported"),
        ));
    }
    if ndim < 3 || dims[..3].iter().any(|&d| d < 1) {
        return Err(Error::format(
            path,
            format!("need 3 positive spatial dims, got {dims:?}"),
        ));
    }
    let shape = [dims[0] as usize, dims[1] as usize, dims[2] as usize];

    let datatype = h.i16_at(70);
    let bitpix = h.i16_at(72);
    let elem = match datatype {
        DT_UINT8 => 1usize,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported NIfTI datatype code {other} (uint8/int16/float32/float64)"),
            ))
        }
    };
    if bitpix as usize != elem * 8 {
        return Err(Error::format(
            path,
            format!("bitpix {bitpix} inconsistent with datatype {datatype}"),
        ));
    }

    let spacing = [
        h.f32_at(80) as f64,
        h.f32_at(84) as f64,
        h.f32_at(88) as f64,
    ];
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::format(
            path,
            format!("non-positive pixdim spacing {spacing:?}"),
        ));
    }

    let vox_offset = h.f32_at(108);
    if !vox_offset.is_finite() || vox_offset < NIFTI_HEADER_LEN as f32 {
        return Err(Error::format(path, format!("bad vox_offset {vox_offset}")));
    }
    let offset = vox_offset as usize;

    let scl_slope = h.f32_at(112);
    let scl_inter = h.f32_at(116);
    let scale = if scl_slope != 0.0 && scl_slope.is_finite() && scl_inter.is_finite() {
        Some((scl_slope as f64, scl_inter as f64))
    } else {
        None
    };

    let n = shape[0] * shape[1] * shape[2];
    let end = offset + n * elem;
    if bytes.len() < end {
        return Err(Error::format(
            path,
            format!("payload truncated: need {end} bytes, file has {}", bytes.len()),
        ));
    }
    let payload = &bytes[offset..end];
    let read_at = |lin: usize| -> f64 {
        let o = lin * elem;
        let raw = match datatype {
            DT_UINT8 => payload[o] as f64,
            DT_INT16 => {
                let mut b = [payload[o], payload[o + 1]];
                if swap {
                    b.reverse();
                }
                i16::from_le_bytes(b) as f64
            }
            DT_FLOAT32 => {
                let mut b = [0u8; 4];
                b.copy_from_slice(&payload[o..o + 4]);
                if swap {
                    b.reverse();
                }
                f32::from_le_bytes(b) as f64
            }
            _ => {
                let mut b = [0u8; 8];
                b.copy_from_slice(&payload[o..o + 8]);
                if swap {
                    b.reverse();
                }
                f64::from_le_bytes(b)
            }
        };
        match scale {
            Some((s, c)) => raw * s + c,
            None => raw,
        }
    };

    // NIfTI stores the first axis fastest; our layout has the last axis
    // fastest, so the copy transposes.
    let (ni, nj, nk) = (shape[0], shape[1], shape[2]);
    let mut data = vec![T::zero(); n];
    for k in 0..nk {
        for j in 0..nj {
            for i in 0..ni {
                data[(i * nj + j) * nk + k] = T::from_f64_lossy(read_at(i + ni * (j + nj * k)));
            }
        }
    }
    Volume::new(data, shape, spacing)
}

/// Resample onto a new spacing with trilinear interpolation.
///
/// Output shape along each axis is `max(1, round(n * spacing / target))`;
/// input and output grids are voxel-center aligned and out-of-range
/// sample positions clamp to the edge.
pub fn resample<T: Real>(v: &Volume<T>, target_spacing: [f64; 3]) -> Result<Volume<T>> {
    if target_spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target spacing must be positive and finite, got {target_spacing:?}"
        )));
    }
    let shape = v.shape();
    let spacing = v.spacing();
    let out_shape: [usize; 3] = std::array::from_fn(|a| {
        ((shape[a] as f64 * spacing[a] / target_spacing[a]).round() as usize).max(1)
    });
    if out_shape == shape && (0..3).all(|a| (spacing[a] - target_spacing[a]).abs() < 1e-12) {
        return Ok(v.clone());
    }

    // Per-axis sample positions: (lower index, upper index, upper weight).
    let axis_table = |a: usize| -> Vec<(usize, usize, f64)> {
        let n = shape[a];
        (0..out_shape[a])
            .map(|j| {
                let x = ((j as f64 + 0.5) * target_spacing[a] / spacing[a] - 0.5)
                    .clamp(0.0, (n - 1) as f64);
                let i0 = x.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, x - i0 as f64)
            })
            .collect()
    };
    let ti = axis_table(0);
    let tj = axis_table(1);
    let tk = axis_table(2);

    let mut out = vec![T::zero(); out_shape[0] * out_shape[1] * out_shape[2]];
    let mut idx = 0;
    for &(i0, i1, wi) in &ti {
        for &(j0, j1, wj) in &tj {
            for &(k0, k1, wk) in &tk {
                let c000 = v.get(i0, j0, k0).to_f64_lossy();
                let c001 = v.get(i0, j0, k1).to_f64_lossy();
                let c010 = v.get(i0, j1, k0).to_f64_lossy();
                let c011 = v.get(i0, j1, k1).to_f64_lossy();
                let c100 = v.get(i1, j0, k0).to_f64_lossy();
                let c101 = v.get(i1, j0, k1).to_f64_lossy();
                let c110 = v.get(i1, j1, k0).to_f64_lossy();
                let c111 = v.get(i1, j1, k1).to_f64_lossy();
                let c00 = c000 + (c001 - c000) * wk;
                let c01 = c010 + (c011 - c010) * wk;
                let c10 = c100 + (c101 - c100) * wk;
                let c11 = c110 + (c111 - c110) * wk;
                let c0 = c00 + (c01 - c00) * wj;
                let c1 = c10 + (c11 - c10) * wj;
                out[idx] = T::from_f64_lossy(c0 + (c1 - c0) * wi);
                idx += 1;
            }
        }
    }
    Volume::new(out, out_shape, target_spacing)
}

/// Linear-interpolation percentile with inclusive endpoints over sorted
/// values.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Standardize intensities: resample, clip to the configured window,
/// min-max-scale to [0, 1]. A post-clip constant volume maps to all
/// zeros.
pub fn preprocess<T: Real>(v: &Volume<T>, cfg: &PreprocessConfig) -> Result<Volume<T>> {
    cfg.validate()?;
    let resampled = resample(v, cfg.target_spacing)?;
    let (lo, hi) = match cfg.clip {
        ClipMode::FixedWindow { lo, hi } => (lo, hi),
        ClipMode::PercentileWindow { p_lo, p_hi } => {
            let mut sorted: Vec<f64> = resampled.data().iter().map(|v| v.to_f64_lossy()).collect();
            sorted.sort_unstable_by(f64::total_cmp);
            (
                percentile_sorted(&sorted, p_lo),
                percentile_sorted(&sorted, p_hi),
            )
        }
    };

    let shape = resampled.shape();
    let spacing = resampled.spacing();
    let clipped: Vec<f64> = resampled
        .into_data()
        .into_iter()
        .map(|x| x.to_f64_lossy().clamp(lo, hi))
        .collect();
    let mn = clipped.iter().cloned().fold(f64::INFINITY, f64::min);
    let mx = clipped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = mx - mn;
    let data: Vec<T> = if range > 0.0 {
        clipped
            .into_iter()
            .map(|x| T::from_f64_lossy(((x - mn) / range).clamp(0.0, 1.0)))
            .collect()
    } else {
        vec![T::zero(); clipped.len()]
    };
    Volume::new(data, shape, spacing)
}

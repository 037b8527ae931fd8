//! Seeded, severity-parameterized synthetic corruptions.
//!
//! Each corruption is a pure function of `(volume, spec)`: the random
//! stream is a PCG32 keyed by the spec's seed, so identical inputs give
//! bit-identical outputs regardless of execution order or parallelism.
//! Severity runs 1 (barely visible) to 5 (gross); the magnitude tables
//! live in [`CorruptionTuning`] and every constant can be overridden.
//!
//! Structural draws (patch placement, axis choice, displacement fields)
//! are made before severity-scaled magnitudes are applied, so the same
//! seed corrupts the same region at every severity.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::rng::Pcg32;
use crate::volgrid::Volume;
use crate::{Error, Real, Result};

/// Corruption family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// Noise, blur, or contrast change inside a random cuboid.
    LocalNoise,
    /// Smooth random displacement-field warp.
    Elastic,
    /// Complex spikes in the Fourier domain (herringbone stripes).
    KspaceSpikes,
    /// Down/upsampling along one random axis.
    Anisotropy,
    /// Attenuated shifted copies along one random axis.
    Ghosting,
    /// Averaged small rigid perturbations.
    RandomMotion,
}

pub const ALL_KINDS: [CorruptionKind; 6] = [
    CorruptionKind::LocalNoise,
    CorruptionKind::Elastic,
    CorruptionKind::KspaceSpikes,
    CorruptionKind::Anisotropy,
    CorruptionKind::Ghosting,
    CorruptionKind::RandomMotion,
];

impl CorruptionKind {
    pub fn name(&self) -> &'static str {
        match self {
            CorruptionKind::LocalNoise => "local_noise",
            CorruptionKind::Elastic => "elastic",
            CorruptionKind::KspaceSpikes => "kspace_spikes",
            CorruptionKind::Anisotropy => "anisotropy",
            CorruptionKind::Ghosting => "ghosting",
            CorruptionKind::RandomMotion => "random_motion",
        }
    }

    fn stream_id(&self) -> u64 {
        ALL_KINDS.iter().position(|k| k == self).unwrap() as u64 + 1
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ALL_KINDS
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown corruption kind {s:?}; expected one of {}",
                    ALL_KINDS.map(|k| k.name()).join(", ")
                ))
            })
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One corruption instance: kind, severity 1..=5, and the stream seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::InvalidArgument(format!(
                "severity must be 1..=5, got {severity}"
            )));
        }
        Ok(CorruptionSpec { kind, severity, seed })
    }

    /// Parse the CLI syntax `kind=<kind>,severity=<1..5>,seed=<u64>`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut severity = None;
        let mut seed = None;
        for part in text.split(',') {
            let (key, value) = part.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "corruption spec part {part:?} is not key=value"
                ))
            })?;
            match key.trim() {
                "kind" => kind = Some(value.trim().parse::<CorruptionKind>()?),
                "severity" => {
                    severity = Some(value.trim().parse::<u8>().map_err(|e| {
                        Error::InvalidArgument(format!("bad severity {value:?}: {e}"))
                    })?)
                }
                "seed" => {
                    seed = Some(value.trim().parse::<u64>().map_err(|e| {
                        Error::InvalidArgument(format!("bad seed {value:?}: {e}"))
                    })?)
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown corruption spec key {other:?}"
                    )))
                }
            }
        }
        CorruptionSpec::new(
            kind.ok_or_else(|| Error::InvalidArgument("corruption spec needs kind=".into()))?,
            severity
                .ok_or_else(|| Error::InvalidArgument("corruption spec needs severity=".into()))?,
            seed.ok_or_else(|| Error::InvalidArgument("corruption spec needs seed=".into()))?,
        )
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kind={},severity={},seed={}",
            self.kind, self.severity, self.seed
        )
    }
}

/// Magnitude table, all per severity level unless noted. Defaults are
/// chosen so level 1 is barely visible and level 5 is gross.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionTuning {
    /// Additive Gaussian sigma inside the patch: 0.04 * severity.
    pub noise_sigma_per_level: f64,
    /// Blur sigma in voxels inside the patch: 0.5 * severity.
    pub blur_sigma_per_level: f64,
    /// Contrast factor offset: 1 +- 0.15 * severity.
    pub contrast_delta_per_level: f64,
    /// Patch extent as a fraction of each axis.
    pub patch_fraction_lo: f64,
    pub patch_fraction_hi: f64,
    /// Control-grid size of the elastic displacement field.
    pub elastic_grid: usize,
    /// Per-component displacement sigma in voxels: 1.5 * severity.
    pub elastic_sigma_per_level: f64,
    /// Spike pairs added to the spectrum: 2 * severity.
    pub spikes_per_level: usize,
    /// Spike magnitude relative to |K(0)|: 0.01 * severity.
    pub spike_magnitude_per_level: f64,
    /// Downsampling block along the chosen axis: severity + 1.
    pub anisotropy_factor_offset: usize,
    /// Ghost blend weight: 0.06 * severity.
    pub ghost_alpha_per_level: f64,
    /// Ghost shift is round(axis_len / divisor).
    pub ghost_shift_divisor: f64,
    /// Rigid perturbations averaged: 1 + severity.
    pub motion_rotation_deg_per_level: f64,
    pub motion_translation_vox_per_level: f64,
}

impl Default for CorruptionTuning {
    fn default() -> Self {
        CorruptionTuning {
            noise_sigma_per_level: 0.04,
            blur_sigma_per_level: 0.5,
            contrast_delta_per_level: 0.15,
            patch_fraction_lo: 0.10,
            patch_fraction_hi: 0.40,
            elastic_grid: 8,
            elastic_sigma_per_level: 1.5,
            spikes_per_level: 2,
            spike_magnitude_per_level: 0.01,
            anisotropy_factor_offset: 1,
            ghost_alpha_per_level: 0.06,
            ghost_shift_divisor: 4.0,
            motion_rotation_deg_per_level: 2.0,
            motion_translation_vox_per_level: 0.5,
        }
    }
}

/// Apply a corruption with the default magnitude table.
pub fn corrupt<T: Real>(v: &Volume<T>, spec: &CorruptionSpec) -> Result<Volume<T>> {
    corrupt_with(v, spec, &CorruptionTuning::default())
}

/// Apply a corruption. The input must already be standardized to [0, 1];
/// the output has the same shape and spacing and is re-clipped to [0, 1].
pub fn corrupt_with<T: Real>(
    v: &Volume<T>,
    spec: &CorruptionSpec,
    tuning: &CorruptionTuning,
) -> Result<Volume<T>> {
    if !(1..=5).contains(&spec.severity) {
        return Err(Error::InvalidArgument(format!(
            "severity must be 1..=5, got {}",
            spec.severity
        )));
    }
    let outside = v
        .data()
        .iter()
        .filter(|&&x| {
            let x = x.to_f64_lossy();
            !(0.0..=1.0).contains(&x)
        })
        .count();
    if outside > 0 {
        return Err(Error::Data(format!(
            "corruption input must be standardized to [0, 1]; {outside} voxel(s) fall outside"
        )));
    }

    let mut rng = Pcg32::new(spec.seed, spec.kind.stream_id());
    let s = spec.severity as f64;
    let mut out = match spec.kind {
        CorruptionKind::LocalNoise => local_noise(v, s, &mut rng, tuning),
        CorruptionKind::Elastic => elastic(v, s, &mut rng, tuning),
        CorruptionKind::KspaceSpikes => kspace_spikes(v, s, &mut rng, tuning).0,
        CorruptionKind::Anisotropy => anisotropy(v, spec.severity, &mut rng, tuning),
        CorruptionKind::Ghosting => ghosting(v, s, &mut rng, tuning),
        CorruptionKind::RandomMotion => random_motion(v, s, &mut rng, tuning),
    };
    for x in out.data_mut() {
        *x = x.max(T::zero()).min(T::one());
    }
    Ok(out)
}

fn to_f64<T: Real>(v: &Volume<T>) -> Vec<f64> {
    v.data().iter().map(|x| x.to_f64_lossy()).collect()
}

fn from_f64<T: Real>(data: Vec<f64>, like: &Volume<T>) -> Volume<T> {
    Volume::new(
        data.into_iter().map(T::from_f64_lossy).collect(),
        like.shape(),
        like.spacing(),
    )
    .expect("shape preserved")
}

/// Clamped trilinear sample of a raw row-major grid at fractional index
/// coordinates.
fn sample_clamped(data: &[f64], shape: [usize; 3], x: f64, y: f64, z: f64) -> f64 {
    let cx = x.clamp(0.0, (shape[0] - 1) as f64);
    let cy = y.clamp(0.0, (shape[1] - 1) as f64);
    let cz = z.clamp(0.0, (shape[2] - 1) as f64);
    let (i0, j0, k0) = (cx.floor() as usize, cy.floor() as usize, cz.floor() as usize);
    let (i1, j1, k1) = (
        (i0 + 1).min(shape[0] - 1),
        (j0 + 1).min(shape[1] - 1),
        (k0 + 1).min(shape[2] - 1),
    );
    let (wx, wy, wz) = (cx - i0 as f64, cy - j0 as f64, cz - k0 as f64);
    let at = |i: usize, j: usize, k: usize| data[(i * shape[1] + j) * shape[2] + k];
    let c00 = at(i0, j0, k0) + (at(i0, j0, k1) - at(i0, j0, k0)) * wz;
    let c01 = at(i0, j1, k0) + (at(i0, j1, k1) - at(i0, j1, k0)) * wz;
    let c10 = at(i1, j0, k0) + (at(i1, j0, k1) - at(i1, j0, k0)) * wz;
    let c11 = at(i1, j1, k0) + (at(i1, j1, k1) - at(i1, j1, k0)) * wz;
    let c0 = c00 + (c01 - c00) * wy;
    let c1 = c10 + (c11 - c10) * wy;
    c0 + (c1 - c0) * wx
}

/// Separable Gaussian blur with edge clamping; sigma in voxels.
pub fn gaussian_blur<T: Real>(v: &Volume<T>, sigma: f64) -> Volume<T> {
    if sigma <= 0.0 {
        return v.clone();
    }
    let shape = v.shape();
    let mut data = to_f64(v);
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut norm = 0.0;
    for o in -radius..=radius {
        let w = (-(o as f64) * (o as f64) / (2.0 * sigma * sigma)).exp();
        kernel.push(w);
        norm += w;
    }
    for w in &mut kernel {
        *w /= norm;
    }

    for axis in 0..3 {
        data = blur_axis(&data, shape, axis, &kernel, radius);
    }
    from_f64(data, v)
}

fn blur_axis(
    data: &[f64],
    shape: [usize; 3],
    axis: usize,
    kernel: &[f64],
    radius: isize,
) -> Vec<f64> {
    let n = shape[axis] as isize;
    let mut out = vec![0.0; data.len()];
    let idx = |i: usize, j: usize, k: usize| (i * shape[1] + j) * shape[2] + k;
    for i in 0..shape[0] {
        for j in 0..shape[1] {
            for k in 0..shape[2] {
                let pos = [i as isize, j as isize, k as isize];
                let mut acc = 0.0;
                for (t, &w) in kernel.iter().enumerate() {
                    let mut p = pos;
                    p[axis] = (pos[axis] + t as isize - radius).clamp(0, n - 1);
                    acc += w * data[idx(p[0] as usize, p[1] as usize, p[2] as usize)];
                }
                out[idx(i, j, k)] = acc;
            }
        }
    }
    out
}

fn local_noise<T: Real>(
    v: &Volume<T>,
    s: f64,
    rng: &mut Pcg32,
    tuning: &CorruptionTuning,
) -> Volume<T> {
    let shape = v.shape();
    // Patch placement first: identical across severities for one seed.
    let mut start = [0usize; 3];
    let mut len = [0usize; 3];
    for a in 0..3 {
        let frac = rng.uniform_in(tuning.patch_fraction_lo, tuning.patch_fraction_hi);
        len[a] = ((frac * shape[a] as f64).round() as usize).clamp(1, shape[a]);
        start[a] = rng.below(shape[a] - len[a] + 1);
    }
    let transform = rng.below(3);

    let mut data = to_f64(v);
    let idx = |i: usize, j: usize, k: usize| (i * shape[1] + j) * shape[2] + k;
    match transform {
        0 => {
            let sigma = tuning.noise_sigma_per_level * s;
            for i in start[0]..start[0] + len[0] {
                for j in start[1]..start[1] + len[1] {
                    for k in start[2]..start[2] + len[2] {
                        data[idx(i, j, k)] += sigma * rng.normal();
                    }
                }
            }
        }
        1 => {
            // Blur the patch as its own little volume (clamped at the
            // patch border).
            let mut patch = Vec::with_capacity(len[0] * len[1] * len[2]);
            for i in 0..len[0] {
                for j in 0..len[1] {
                    for k in 0..len[2] {
                        patch.push(data[idx(start[0] + i, start[1] + j, start[2] + k)]);
                    }
                }
            }
            let patch_vol = Volume::new(patch, len, v.spacing()).expect("patch shape");
            let blurred = gaussian_blur(&patch_vol, tuning.blur_sigma_per_level * s);
            for i in 0..len[0] {
                for j in 0..len[1] {
                    for k in 0..len[2] {
                        data[idx(start[0] + i, start[1] + j, start[2] + k)] =
                            blurred.get(i, j, k);
                    }
                }
            }
        }
        _ => {
            let sign = if rng.below(2) == 0 { 1.0 } else { -1.0 };
            let factor = 1.0 + sign * tuning.contrast_delta_per_level * s;
            let mut mean = 0.0;
            let count = (len[0] * len[1] * len[2]) as f64;
            for i in start[0]..start[0] + len[0] {
                for j in start[1]..start[1] + len[1] {
                    for k in start[2]..start[2] + len[2] {
                        mean += data[idx(i, j, k)];
                    }
                }
            }
            mean /= count;
            for i in start[0]..start[0] + len[0] {
                for j in start[1]..start[1] + len[1] {
                    for k in start[2]..start[2] + len[2] {
                        let x = &mut data[idx(i, j, k)];
                        *x = mean + factor * (*x - mean);
                    }
                }
            }
        }
    }
    from_f64(data, v)
}

fn elastic<T: Real>(
    v: &Volume<T>,
    s: f64,
    rng: &mut Pcg32,
    tuning: &CorruptionTuning,
) -> Volume<T> {
    let g = tuning.elastic_grid.max(2);
    let sigma = tuning.elastic_sigma_per_level * s;
    let nodes = g * g * g;
    let mut field = [
        Vec::with_capacity(nodes),
        Vec::with_capacity(nodes),
        Vec::with_capacity(nodes),
    ];
    for _ in 0..nodes {
        for comp in &mut field {
            comp.push(sigma * rng.normal());
        }
    }

    let shape = v.shape();
    let data = to_f64(v);
    let gshape = [g, g, g];
    // Map a voxel index into control-grid coordinates (corners aligned).
    let scale = |a: usize, x: usize| -> f64 {
        if shape[a] > 1 {
            x as f64 * (g - 1) as f64 / (shape[a] - 1) as f64
        } else {
            0.0
        }
    };
    let mut out = vec![0.0; data.len()];
    let mut lin = 0;
    for i in 0..shape[0] {
        let gx = scale(0, i);
        for j in 0..shape[1] {
            let gy = scale(1, j);
            for k in 0..shape[2] {
                let gz = scale(2, k);
                let dx = sample_clamped(&field[0], gshape, gx, gy, gz);
                let dy = sample_clamped(&field[1], gshape, gx, gy, gz);
                let dz = sample_clamped(&field[2], gshape, gx, gy, gz);
                out[lin] = sample_clamped(
                    &data,
                    shape,
                    i as f64 + dx,
                    j as f64 + dy,
                    k as f64 + dz,
                );
                lin += 1;
            }
        }
    }
    from_f64(out, v)
}

/// The f64 in the return value is the maximum imaginary residue left
/// after the inverse transform, before it is discarded; Hermitian
/// mirroring keeps it at rounding level.
fn kspace_spikes<T: Real>(
    v: &Volume<T>,
    s: f64,
    rng: &mut Pcg32,
    tuning: &CorruptionTuning,
) -> (Volume<T>, f64) {
    let shape = v.shape();
    let mut spectrum: Vec<Complex<f64>> = v
        .data()
        .iter()
        .map(|x| Complex::new(x.to_f64_lossy(), 0.0))
        .collect();
    fft3(&mut spectrum, shape, false);

    let k0 = spectrum[0].norm();
    let magnitude = tuning.spike_magnitude_per_level * s * k0;
    let n_spikes = tuning.spikes_per_level * s as usize;
    let idx = |p: [usize; 3]| (p[0] * shape[1] + p[1]) * shape[2] + p[2];
    for _ in 0..n_spikes {
        let pos = loop {
            let p = [rng.below(shape[0]), rng.below(shape[1]), rng.below(shape[2])];
            let dc = p == [0, 0, 0];
            let self_conjugate = (0..3).all(|a| (2 * p[a]) % shape[a] == 0);
            if !dc && !self_conjugate {
                break p;
            }
        };
        let mirror = [
            (shape[0] - pos[0]) % shape[0],
            (shape[1] - pos[1]) % shape[1],
            (shape[2] - pos[2]) % shape[2],
        ];
        let phase = rng.uniform_in(0.0, 2.0 * std::f64::consts::PI);
        let spike = Complex::from_polar(magnitude, phase);
        spectrum[idx(pos)] += spike;
        spectrum[idx(mirror)] += spike.conj();
    }

    fft3(&mut spectrum, shape, true);
    let scale = 1.0 / v.voxel_count() as f64;
    let mut residue = 0.0f64;
    let data: Vec<f64> = spectrum
        .iter()
        .map(|c| {
            residue = residue.max((c.im * scale).abs());
            c.re * scale
        })
        .collect();
    (from_f64(data, v), residue)
}

/// In-place 3D FFT via per-axis 1D transforms (unnormalized).
fn fft3(data: &mut [Complex<f64>], shape: [usize; 3], inverse: bool) {
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        let n = shape[axis];
        if n == 1 {
            continue;
        }
        let fft: Arc<dyn rustfft::Fft<f64>> = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let mut line = vec![Complex::new(0.0, 0.0); n];
        let outer: [usize; 2] = match axis {
            0 => [shape[1], shape[2]],
            1 => [shape[0], shape[2]],
            _ => [shape[0], shape[1]],
        };
        for a in 0..outer[0] {
            for b in 0..outer[1] {
                for t in 0..n {
                    let p = match axis {
                        0 => (t * shape[1] + a) * shape[2] + b,
                        1 => (a * shape[1] + t) * shape[2] + b,
                        _ => (a * shape[1] + b) * shape[2] + t,
                    };
                    line[t] = data[p];
                }
                fft.process(&mut line);
                for t in 0..n {
                    let p = match axis {
                        0 => (t * shape[1] + a) * shape[2] + b,
                        1 => (a * shape[1] + t) * shape[2] + b,
                        _ => (a * shape[1] + b) * shape[2] + t,
                    };
                    data[p] = line[t];
                }
            }
        }
    }
}

fn anisotropy<T: Real>(
    v: &Volume<T>,
    severity: u8,
    rng: &mut Pcg32,
    tuning: &CorruptionTuning,
) -> Volume<T> {
    let axis = rng.below(3);
    let factor = severity as usize + tuning.anisotropy_factor_offset;
    let shape = v.shape();
    let n = shape[axis];
    let data = to_f64(v);

    // Block centroids of the downsampled grid, in original index units.
    let blocks = n.div_ceil(factor);
    let centers: Vec<f64> = (0..blocks)
        .map(|b| {
            let start = b * factor;
            let end = ((b + 1) * factor).min(n);
            (start + end - 1) as f64 / 2.0
        })
        .collect();

    let mut out = vec![0.0; data.len()];
    let idx = |p: [usize; 3]| (p[0] * shape[1] + p[1]) * shape[2] + p[2];
    let outer: [usize; 2] = match axis {
        0 => [shape[1], shape[2]],
        1 => [shape[0], shape[2]],
        _ => [shape[0], shape[1]],
    };
    let mut line = vec![0.0; n];
    let mut coarse = vec![0.0; blocks];
    for a in 0..outer[0] {
        for b in 0..outer[1] {
            let pos = |t: usize| -> [usize; 3] {
                match axis {
                    0 => [t, a, b],
                    1 => [a, t, b],
                    _ => [a, b, t],
                }
            };
            for t in 0..n {
                line[t] = data[idx(pos(t))];
            }
            for (blk, c) in coarse.iter_mut().enumerate() {
                let start = blk * factor;
                let end = ((blk + 1) * factor).min(n);
                *c = line[start..end].iter().sum::<f64>() / (end - start) as f64;
            }
            for t in 0..n {
                let x = t as f64;
                let val = if x <= centers[0] {
                    coarse[0]
                } else if x >= centers[blocks - 1] {
                    coarse[blocks - 1]
                } else {
                    let seg = centers.partition_point(|&c| c <= x) - 1;
                    let span = centers[seg + 1] - centers[seg];
                    let w = (x - centers[seg]) / span;
                    coarse[seg] * (1.0 - w) + coarse[seg + 1] * w
                };
                out[idx(pos(t))] = val;
            }
        }
    }
    from_f64(out, v)
}

fn ghosting<T: Real>(
    v: &Volume<T>,
    s: f64,
    rng: &mut Pcg32,
    tuning: &CorruptionTuning,
) -> Volume<T> {
    let axis = rng.below(3);
    let alpha = tuning.ghost_alpha_per_level * s;
    let shape = v.shape();
    let delta = (shape[axis] as f64 / tuning.ghost_shift_divisor).round() as isize;
    let data = to_f64(v);

    let idx = |p: [usize; 3]| (p[0] * shape[1] + p[1]) * shape[2] + p[2];
    let shifted = |p: [usize; 3], d: isize| -> f64 {
        let t = p[axis] as isize - d; // sample source index; zero-fill outside
        if t < 0 || t >= shape[axis] as isize {
            return 0.0;
        }
        let mut q = p;
        q[axis] = t as usize;
        data[idx(q)]
    };
    let mut out = vec![0.0; data.len()];
    let mut lin = 0;
    for i in 0..shape[0] {
        for j in 0..shape[1] {
            for k in 0..shape[2] {
                let p = [i, j, k];
                out[lin] = (1.0 - alpha) * data[lin]
                    + alpha / 2.0 * (shifted(p, delta) + shifted(p, -delta));
                lin += 1;
            }
        }
    }
    from_f64(out, v)
}

fn random_motion<T: Real>(
    v: &Volume<T>,
    s: f64,
    rng: &mut Pcg32,
    tuning: &CorruptionTuning,
) -> Volume<T> {
    let count = 1 + s as usize;
    let shape = v.shape();
    let data = to_f64(v);
    let center = [
        (shape[0] - 1) as f64 / 2.0,
        (shape[1] - 1) as f64 / 2.0,
        (shape[2] - 1) as f64 / 2.0,
    ];
    let mut acc = vec![0.0f64; data.len()];
    for _ in 0..count {
        // Random rotation axis via normalized Gaussian triple.
        let axis = loop {
            let raw = [rng.normal(), rng.normal(), rng.normal()];
            let norm = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
            if norm > 1e-9 {
                break [raw[0] / norm, raw[1] / norm, raw[2] / norm];
            }
        };
        let max_deg = tuning.motion_rotation_deg_per_level * s;
        let angle = rng.uniform_in(-max_deg, max_deg).to_radians();
        let max_t = tuning.motion_translation_vox_per_level * s;
        let trans = [
            rng.uniform_in(-max_t, max_t),
            rng.uniform_in(-max_t, max_t),
            rng.uniform_in(-max_t, max_t),
        ];
        // Inverse mapping: rotate by -angle about the center, minus the
        // translation.
        let r = rotation_matrix(axis, -angle);
        let mut lin = 0;
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    let p = [
                        i as f64 - center[0] - trans[0],
                        j as f64 - center[1] - trans[1],
                        k as f64 - center[2] - trans[2],
                    ];
                    let x = r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + center[0];
                    let y = r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + center[1];
                    let z = r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + center[2];
                    acc[lin] += sample_clamped(&data, shape, x, y, z);
                    lin += 1;
                }
            }
        }
    }
    let inv = 1.0 / count as f64;
    for x in &mut acc {
        *x *= inv;
    }
    from_f64(acc, v)
}

/// Rodrigues rotation matrix about a unit axis.
fn rotation_matrix(u: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (sin, cos) = angle.sin_cos();
    let one_c = 1.0 - cos;
    [
        [
            cos + u[0] * u[0] * one_c,
            u[0] * u[1] * one_c - u[2] * sin,
            u[0] * u[2] * one_c + u[1] * sin,
        ],
        [
            u[1] * u[0] * one_c + u[2] * sin,
            cos + u[1] * u[1] * one_c,
            u[1] * u[2] * one_c - u[0] * sin,
        ],
        [
            u[2] * u[0] * one_c - u[1] * sin,
            u[2] * u[1] * one_c + u[0] * sin,
            cos + u[2] * u[2] * one_c,
        ],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::case_seed;

    /// Smooth blob phantom for corruption tests.
    fn blob(n: usize) -> Volume<f64> {
        let c = (n - 1) as f64 / 2.0;
        let mut data = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let d2 = ((i as f64 - c).powi(2)
                        + (j as f64 - c).powi(2)
                        + (k as f64 - c).powi(2))
                        / (c * c);
                    data.push((0.2 + 0.7 * (-2.0 * d2).exp()).clamp(0.0, 1.0));
                }
            }
        }
        Volume::new(data, [n, n, n], [1.0; 3]).unwrap()
    }

    fn l2(a: &Volume<f64>, b: &Volume<f64>) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn corruption_is_deterministic_for_every_kind() {
        let v = blob(12);
        for kind in ALL_KINDS {
            let spec = CorruptionSpec::new(kind, 3, 99).unwrap();
            let a = corrupt(&v, &spec).unwrap();
            let b = corrupt(&v, &spec).unwrap();
            assert_eq!(a.data(), b.data(), "{kind}");
            assert_eq!(a.shape(), v.shape(), "{kind}");
            assert_eq!(a.spacing(), v.spacing(), "{kind}");
            assert!(
                a.data().iter().all(|&x| (0.0..=1.0).contains(&x)),
                "{kind} left the unit range"
            );
        }
    }

    #[test]
    fn anisotropy_preserves_volumes_constant_along_chosen_axis() {
        let n = 10;
        // Fully constant: constant along whichever axis is chosen.
        let flat = Volume::constant(0.42f64, [n, n, n], [1.0; 3]).unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::Anisotropy, 1, 7).unwrap();
        let out = corrupt(&flat, &spec).unwrap();
        for (a, b) in out.data().iter().zip(flat.data()) {
            assert!((a - b).abs() < 1e-6);
        }

        // A volume varying only across the non-chosen axes must also
        // survive for at least one of the three orientations.
        let mut survived = 0;
        for vary_axis in 0..3 {
            let mut data = vec![0.0f64; n * n * n];
            let mut lin = 0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let p = [i, j, k];
                        // constant along vary_axis, ramp along the others
                        let others: Vec<usize> =
                            (0..3).filter(|&a| a != vary_axis).map(|a| p[a]).collect();
                        data[lin] = (others[0] + others[1]) as f64 / (2.0 * (n - 1) as f64);
                        lin += 1;
                    }
                }
            }
            let v = Volume::new(data, [n, n, n], [1.0; 3]).unwrap();
            let out = corrupt(&v, &spec).unwrap();
            if out
                .data()
                .iter()
                .zip(v.data())
                .all(|(a, b)| (a - b).abs() < 1e-6)
            {
                survived += 1;
            }
        }
        assert!(survived >= 1);
    }

    #[test]
    fn kspace_severity_five_distorts_more_than_one() {
        let v = blob(16);
        let seed = 1234;
        let s1 = corrupt(&v, &CorruptionSpec::new(CorruptionKind::KspaceSpikes, 1, seed).unwrap())
            .unwrap();
        let s5 = corrupt(&v, &CorruptionSpec::new(CorruptionKind::KspaceSpikes, 5, seed).unwrap())
            .unwrap();
        let mad = |a: &Volume<f64>| {
            a.data()
                .iter()
                .zip(v.data())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / v.voxel_count() as f64
        };
        assert!(mad(&s5) > mad(&s1), "{} vs {}", mad(&s5), mad(&s1));
    }

    #[test]
    fn kspace_imaginary_residue_is_rounding_level() {
        let v = blob(14);
        let tuning = CorruptionTuning::default();
        let mut rng = Pcg32::new(5, CorruptionKind::KspaceSpikes.stream_id());
        let (_, residue) = kspace_spikes(&v, 5.0, &mut rng, &tuning);
        assert!(residue < 1e-5, "residue {residue}");
    }

    #[test]
    fn ghosting_severity_one_stays_within_alpha() {
        let v = blob(12);
        let spec = CorruptionSpec::new(CorruptionKind::Ghosting, 1, 3).unwrap();
        let out = corrupt(&v, &spec).unwrap();
        let alpha = CorruptionTuning::default().ghost_alpha_per_level;
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() <= alpha + 1e-9);
        }
    }

    #[test]
    fn elastic_changes_a_nonuniform_volume() {
        let v = blob(12);
        let spec = CorruptionSpec::new(CorruptionKind::Elastic, 3, 11).unwrap();
        let out = corrupt(&v, &spec).unwrap();
        assert!(l2(&out, &v) > 0.0);
    }

    #[test]
    fn severity_monotonicity_spot_check() {
        // Full 20-seed sweep lives in the acceptance suite; keep a small
        // smoke version here.
        let v = blob(12);
        for kind in [CorruptionKind::Ghosting, CorruptionKind::LocalNoise] {
            let mut prev = 0.0;
            for severity in 1..=5u8 {
                let mut mean = 0.0;
                for seed in 0..6u64 {
                    let spec =
                        CorruptionSpec::new(kind, severity, case_seed(7, &format!("c{seed}")))
                            .unwrap();
                    mean += l2(&corrupt(&v, &spec).unwrap(), &v);
                }
                mean /= 6.0;
                assert!(
                    mean >= prev,
                    "{kind} severity {severity}: {mean} < {prev}"
                );
                prev = mean;
            }
        }
    }

    #[test]
    fn spec_parsing_round_trips() {
        let spec = CorruptionSpec::parse("kind=kspace_spikes,severity=3,seed=42").unwrap();
        assert_eq!(spec.kind, CorruptionKind::KspaceSpikes);
        assert_eq!(spec.severity, 3);
        assert_eq!(spec.seed, 42);
        assert_eq!(CorruptionSpec::parse(&spec.to_string()).unwrap(), spec);

        assert!(CorruptionSpec::parse("kind=bogus,severity=1,seed=0").is_err());
        assert!(CorruptionSpec::parse("kind=elastic,severity=9,seed=0").is_err());
        assert!(CorruptionSpec::parse("kind=elastic,severity=1").is_err());
    }

    #[test]
    fn out_of_range_input_is_rejected() {
        let v = Volume::new(vec![0.5, 1.7], [2, 1, 1], [1.0; 3]).unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::Ghosting, 1, 0).unwrap();
        assert!(corrupt(&v, &spec).is_err());
    }

    #[test]
    fn motion_preserves_constant_volumes() {
        let flat = Volume::constant(0.3f64, [9, 9, 9], [1.0; 3]).unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::RandomMotion, 2, 5).unwrap();
        let out = corrupt(&flat, &spec).unwrap();
        for &x in out.data() {
            assert!((x - 0.3).abs() < 1e-9);
        }
    }
}

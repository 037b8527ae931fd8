//! Seeded phantom volumes: smooth Gaussian random fields with a bright
//! ellipsoid insert. They stand in for clinical data in dataset-free
//! benchmark runs and in the acceptance experiments.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::harness::manifest::{CaseEntry, ChallengeManifest, OodSet, SyntheticSpec};
use crate::rng::{case_seed, mix64, Pcg32};
use crate::synth::{gaussian_blur, CorruptionKind};
use crate::volgrid::{save_volume, ClipMode, PreprocessConfig, Volume, DEFAULT_TARGET_SPACING};
use crate::{Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    /// Blur sigma (voxels) applied to the white-noise texture field.
    pub smooth_sigma: f64,
    /// Intensities of the dark matrix and the bright tissue blobs.
    pub band_lo: f64,
    pub band_hi: f64,
    /// Width of the soft threshold between the two bands, in standard
    /// deviations of the texture field. Small widths give a sharply
    /// bimodal histogram like real tissue/air mixtures.
    pub band_transition: f64,
    /// Ellipsoid semi-axes as a fraction of each axis, with jitter.
    pub insert_radius: f64,
    pub insert_radius_jitter: f64,
    /// Ellipsoid center jitter as a fraction of each axis.
    pub insert_center_jitter: f64,
    /// Insert brightness, with jitter.
    pub insert_intensity: f64,
    pub insert_intensity_jitter: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            shape: [64, 64, 64],
            spacing: DEFAULT_TARGET_SPACING,
            smooth_sigma: 2.0,
            band_lo: 0.18,
            band_hi: 0.55,
            band_transition: 0.8,
            insert_radius: 0.20,
            insert_radius_jitter: 0.01,
            insert_center_jitter: 0.05,
            insert_intensity: 0.88,
            insert_intensity_jitter: 0.02,
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let s = x.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Generate one phantom. Deterministic in `(cfg, seed)`.
///
/// A blurred white-noise field is pushed through a soft two-level
/// transfer (dark matrix / bright blobs), which gives the bimodal
/// intensity histogram typical of body scans, and a bright ellipsoid is
/// blended in near the center.
pub fn phantom<T: Real>(cfg: &PhantomConfig, seed: u64) -> Volume<T> {
    let mut rng = Pcg32::new(mix64(seed), 0x9e3779b97f4a7c15);
    let [ni, nj, nk] = cfg.shape;
    let n = ni * nj * nk;

    let noise: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let noise_vol = Volume::<f64>::new(noise, cfg.shape, cfg.spacing).expect("phantom shape");
    let smooth = gaussian_blur(&noise_vol, cfg.smooth_sigma);

    // Standardize the texture by its own mean/std (stable statistics, so
    // the two-band split lands at the same place for every realization).
    let mean = smooth.data().iter().sum::<f64>() / n as f64;
    let std = (smooth.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64)
        .sqrt()
        .max(f64::MIN_POSITIVE);

    // Ellipsoid placement.
    let center: [f64; 3] = std::array::from_fn(|a| {
        let c = (cfg.shape[a] - 1) as f64 / 2.0;
        let jitter = cfg.insert_center_jitter * cfg.shape[a] as f64;
        c + rng.uniform_in(-jitter, jitter)
    });
    let radius: [f64; 3] = std::array::from_fn(|a| {
        let r = cfg.insert_radius
            + rng.uniform_in(-cfg.insert_radius_jitter, cfg.insert_radius_jitter);
        (r * cfg.shape[a] as f64).max(1.0)
    });
    let bright = cfg.insert_intensity
        + rng.uniform_in(-cfg.insert_intensity_jitter, cfg.insert_intensity_jitter);

    let mut data = Vec::with_capacity(n);
    let mut lin = 0;
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                let z = (smooth.data()[lin] - mean) / std;
                let s = smoothstep(z / cfg.band_transition + 0.5);
                let mut val = cfg.band_lo + (cfg.band_hi - cfg.band_lo) * s;
                let q = ((i as f64 - center[0]) / radius[0]).powi(2)
                    + ((j as f64 - center[1]) / radius[1]).powi(2)
                    + ((k as f64 - center[2]) / radius[2]).powi(2);
                let w = (1.0 - q).clamp(0.0, 1.0);
                val = val * (1.0 - w) + bright * w;
                data.push(T::from_f64_lossy(val.clamp(0.0, 1.0)));
                lin += 1;
            }
        }
    }
    Volume::new(data, cfg.shape, cfg.spacing).expect("phantom shape")
}

/// Specification of a self-contained phantom benchmark on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomChallengeSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub phantom: PhantomConfig,
    pub seed: u64,
    pub kinds: Vec<CorruptionKind>,
    pub severities: Vec<u8>,
    pub clip: ClipMode,
}

impl Default for PhantomChallengeSpec {
    fn default() -> Self {
        PhantomChallengeSpec {
            n_train: 40,
            n_test: 20,
            phantom: PhantomConfig::default(),
            seed: 7,
            kinds: vec![
                CorruptionKind::KspaceSpikes,
                CorruptionKind::Anisotropy,
                CorruptionKind::Ghosting,
            ],
            severities: vec![1, 2, 3, 4, 5],
            clip: ClipMode::PercentileWindow { p_lo: 1.0, p_hi: 99.0 },
        }
    }
}

/// Write phantom volumes plus a ready-to-run manifest under `dir`;
/// returns the manifest path.
pub fn write_phantom_challenge(dir: &Path, spec: &PhantomChallengeSpec) -> Result<PathBuf> {
    let vol_dir = dir.join("volumes");
    std::fs::create_dir_all(&vol_dir).map_err(|e| crate::Error::io(&vol_dir, e))?;

    let make_cases = |prefix: &str, count: usize, offset: u64| -> Result<Vec<CaseEntry>> {
        let ids: Vec<String> = (0..count).map(|i| format!("{prefix}_{i:03}")).collect();
        ids.par_iter().enumerate().try_for_each(|(i, id)| {
            let v: Volume<f32> =
                phantom(&spec.phantom, case_seed(spec.seed.wrapping_add(offset), id));
            let _ = i;
            save_volume(&v, &vol_dir.join(format!("{id}.json")))
        })?;
        Ok(ids
            .into_iter()
            .map(|id| {
                let path = vol_dir.join(format!("{id}.json"));
                CaseEntry::single(id, path)
            })
            .collect())
    };

    let id_train = make_cases("train", spec.n_train, 0)?;
    let id_test = make_cases("test", spec.n_test, 1)?;

    let ood_sets: Vec<OodSet> = spec
        .kinds
        .iter()
        .map(|&kind| OodSet {
            name: kind.name().to_string(),
            entries: None,
            synthetic: Some(SyntheticSpec {
                kind,
                severities: spec.severities.clone(),
                seed: spec.seed,
            }),
        })
        .collect();

    let mut groups = std::collections::BTreeMap::new();
    groups.insert(
        "synthetic".to_string(),
        spec.kinds.iter().map(|k| k.name().to_string()).collect(),
    );

    let manifest = ChallengeManifest {
        name: "phantoms".to_string(),
        modality: PreprocessConfig {
            target_spacing: spec.phantom.spacing,
            clip: spec.clip,
        },
        groups,
        volume_unit: Default::default(),
        id_train,
        id_test,
        ood_sets,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic_and_standardized() {
        let cfg = PhantomConfig {
            shape: [16, 16, 16],
            smooth_sigma: 2.0,
            ..Default::default()
        };
        let a: Volume<f32> = phantom(&cfg, 42);
        let b: Volume<f32> = phantom(&cfg, 42);
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        let c: Volume<f32> = phantom(&cfg, 43);
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn phantom_has_bright_insert_and_textured_background() {
        let cfg = PhantomConfig {
            shape: [24, 24, 24],
            smooth_sigma: 3.0,
            ..Default::default()
        };
        let v: Volume<f64> = phantom(&cfg, 11);
        let (mn, mx) = v.min_max();
        assert!(mx > 0.8, "insert missing: max {mx}");
        assert!(mn < 0.3, "background missing: min {mn}");
    }

    #[test]
    fn challenge_writer_produces_loadable_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomChallengeSpec {
            n_train: 3,
            n_test: 2,
            phantom: PhantomConfig {
                shape: [8, 8, 8],
                smooth_sigma: 1.5,
                ..Default::default()
            },
            severities: vec![1, 3],
            ..Default::default()
        };
        let path = write_phantom_challenge(dir.path(), &spec).unwrap();
        let m = crate::harness::load_manifest(&path).unwrap();
        m.check_files().unwrap();
        assert_eq!(m.id_train.len(), 3);
        assert_eq!(m.id_test.len(), 2);
        assert_eq!(m.ood_sets.len(), 3);
    }
}

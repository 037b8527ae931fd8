//! Challenge manifest: the JSON document that names the ID train/test
//! cases, the OOD sets (file-backed or synthetic), and the modality's
//! preprocessing. Relative paths are resolved against the manifest's
//! directory at load time.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detectors::VolumeUnit;
use crate::synth::CorruptionKind;
use crate::volgrid::PreprocessConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChallengeManifest {
    pub name: String,
    /// Preprocessing applied by volume-based detectors.
    pub modality: PreprocessConfig,
    /// Optional row groups for report averages; members may name a
    /// challenge, an OOD set, or `challenge:ood_set`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub groups: BTreeMap<String, Vec<String>>,
    /// Unit of predicted volumes consumed by the volume predictor.
    #[serde(default)]
    pub volume_unit: VolumeUnit,
    pub id_train: Vec<CaseEntry>,
    pub id_test: Vec<CaseEntry>,
    pub ood_sets: Vec<OodSet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    /// Volume (or prediction-map) file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Several maps per case, for ensemble-style detectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<PathBuf>>,
}

impl CaseEntry {
    pub fn single(case_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        CaseEntry {
            case_id: case_id.into(),
            path: Some(path.into()),
            paths: None,
        }
    }

    pub fn all_paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = Vec::new();
        if let Some(p) = &self.path {
            out.push(p);
        }
        if let Some(ps) = &self.paths {
            out.extend(ps.iter().map(|p| p.as_path()));
        }
        out
    }

    pub fn primary_path(&self) -> Result<&Path> {
        self.all_paths()
            .first()
            .copied()
            .ok_or_else(|| Error::Manifest(format!("case {:?} lists no path", self.case_id)))
    }
}

/// One OOD set: either explicit file-backed entries or a synthetic
/// corruption of the ID test cases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OodSet {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<CaseEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

/// Template for synthesized OOD variants: the ID test cases corrupted at
/// each listed severity, with per-case seeds derived from `seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: CorruptionKind,
    pub severities: Vec<u8>,
    pub seed: u64,
}

pub fn load_manifest(path: &Path) -> Result<ChallengeManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: ChallengeManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    manifest.resolve_paths(base);
    manifest.validate()?;
    Ok(manifest)
}

impl ChallengeManifest {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        let fix_entry = |e: &mut CaseEntry| {
            if let Some(p) = &mut e.path {
                fix(p);
            }
            if let Some(ps) = &mut e.paths {
                ps.iter_mut().for_each(fix);
            }
        };
        self.id_train.iter_mut().for_each(fix_entry);
        self.id_test.iter_mut().for_each(fix_entry);
        for set in &mut self.ood_sets {
            if let Some(entries) = &mut set.entries {
                entries.iter_mut().for_each(fix_entry);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Manifest("manifest name is empty".into()));
        }
        self.modality.validate()?;
        check_unique_ids("id_train", &self.id_train)?;
        check_unique_ids("id_test", &self.id_test)?;
        if self.id_train.is_empty() || self.id_test.is_empty() {
            return Err(Error::Manifest(
                "id_train and id_test must both be non-empty".into(),
            ));
        }
        if self.ood_sets.is_empty() {
            return Err(Error::Manifest("at least one ood_set is required".into()));
        }
        let mut set_names = HashSet::new();
        for set in &self.ood_sets {
            if !set_names.insert(set.name.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate ood_set name {:?}",
                    set.name
                )));
            }
            match (&set.entries, &set.synthetic) {
                (Some(entries), None) => {
                    check_unique_ids(&format!("ood_set {:?}", set.name), entries)?;
                    if entries.is_empty() {
                        return Err(Error::Manifest(format!(
                            "ood_set {:?} has no entries",
                            set.name
                        )));
                    }
                }
                (None, Some(synth)) => {
                    if synth.severities.is_empty() {
                        return Err(Error::Manifest(format!(
                            "ood_set {:?} lists no severities",
                            set.name
                        )));
                    }
                    let mut seen = HashSet::new();
                    for &s in &synth.severities {
                        if !(1..=5).contains(&s) {
                            return Err(Error::Manifest(format!(
                                "ood_set {:?}: severity {s} outside 1..=5",
                                set.name
                            )));
                        }
                        if !seen.insert(s) {
                            return Err(Error::Manifest(format!(
                                "ood_set {:?}: severity {s} listed twice",
                                set.name
                            )));
                        }
                    }
                }
                _ => {
                    return Err(Error::Manifest(format!(
                        "ood_set {:?} must have exactly one of entries / synthetic",
                        set.name
                    )))
                }
            }
        }
        Ok(())
    }

    /// Batch-verify every referenced file, reporting all missing paths
    /// at once.
    pub fn check_files(&self) -> Result<()> {
        let mut missing = Vec::new();
        let mut check_entry = |e: &CaseEntry| {
            for p in e.all_paths() {
                if !p.exists() {
                    missing.push(p.to_path_buf());
                }
            }
        };
        self.id_train.iter().for_each(&mut check_entry);
        self.id_test.iter().for_each(&mut check_entry);
        for set in &self.ood_sets {
            if let Some(entries) = &set.entries {
                entries.iter().for_each(&mut check_entry);
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingFiles(missing))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Manifest(format!("serialize: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn check_unique_ids(list: &str, entries: &[CaseEntry]) -> Result<()> {
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.case_id.as_str()) {
            return Err(Error::Manifest(format!(
                "duplicate case_id {:?} in {list}",
                e.case_id
            )));
        }
        if e.all_paths().is_empty() {
            return Err(Error::Manifest(format!(
                "case {:?} in {list} lists no path",
                e.case_id
            )));
        }
    }
    Ok(())
}

//! Challenge execution: fit on `id_train`, score `id_test` and every OOD
//! set (synthesizing corruptions on the fly for synthetic sets), and
//! bundle the per-set metrics. ID test cases are never used in fitting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{
    entropy_score, fit_ihf, positive_volume, uncertainty_score, IhfDetector, ScoreRow,
    ScoreTable, VolumePredictor, DEFAULT_BIN_COUNT, DEFAULT_RIDGE, DEFAULT_VARIANCE_TARGET,
};
use crate::harness::manifest::{CaseEntry, ChallengeManifest, SyntheticSpec};
use crate::harness::report::GroupMap;
use crate::metrics::{fechner_correlation, MetricResult};
use crate::rng::case_seed;
use crate::synth::{corrupt, CorruptionSpec};
use crate::volgrid::{infer_format, load_volume, preprocess, Volume};
use crate::{Error, Result};

pub const DEFAULT_TPR_TARGET: f64 = 0.95;

/// Which detector a run executes, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "detector", rename_all = "snake_case")]
pub enum DetectorSpec {
    IhfMah { m: usize, v: Option<f64>, ridge: f64 },
    IhfNn { m: usize, v: Option<f64>, ridge: f64 },
    Volume,
    Entropy,
    Uncertainty,
    External { scores: PathBuf },
}

impl DetectorSpec {
    pub fn ihf_mah_default() -> Self {
        DetectorSpec::IhfMah {
            m: DEFAULT_BIN_COUNT,
            v: Some(DEFAULT_VARIANCE_TARGET),
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn ihf_nn_default() -> Self {
        DetectorSpec::IhfNn {
            m: DEFAULT_BIN_COUNT,
            v: Some(DEFAULT_VARIANCE_TARGET),
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn method_name(&self) -> &'static str {
        match self {
            DetectorSpec::IhfMah { .. } => "ihf-mah",
            DetectorSpec::IhfNn { .. } => "ihf-nn",
            DetectorSpec::Volume => "volume",
            DetectorSpec::Entropy => "entropy",
            DetectorSpec::Uncertainty => "uncertainty",
            DetectorSpec::External { .. } => "external",
        }
    }
}

/// Metrics and per-case scores for one (challenge, OOD set) pair.
#[derive(Debug, Clone)]
pub struct ChallengeResult {
    pub challenge: String,
    pub ood_set: String,
    pub method: String,
    pub metric: MetricResult,
    pub id_scores: ScoreTable,
    pub ood_scores: ScoreTable,
}

enum CaseInput {
    /// Raw image volume; IHF detectors preprocess it themselves.
    Image(Volume<f32>),
    /// Probability map(s) already in [0, 1].
    Maps(Vec<Volume<f32>>),
}

/// A fitted detector ready to score cases.
enum Scorer {
    IhfMah(Box<IhfDetector<f64>>),
    IhfNn(Box<IhfDetector<f64>>),
    Volume(VolumePredictor, crate::detectors::VolumeUnit),
    Entropy,
    Uncertainty,
}

impl Scorer {
    /// Whether cases are raw images (true) or prediction maps.
    fn wants_image(&self) -> bool {
        matches!(self, Scorer::IhfMah(_) | Scorer::IhfNn(_))
    }

    fn score(&self, input: &CaseInput) -> Result<f64> {
        match (self, input) {
            (Scorer::IhfMah(d), CaseInput::Image(v)) => {
                d.score_mahalanobis(v).map(|s| s as f64)
            }
            (Scorer::IhfNn(d), CaseInput::Image(v)) => d.score_nn(v).map(|s| s as f64),
            (Scorer::Volume(p, unit), CaseInput::Maps(maps)) => {
                Ok(p.score(positive_volume(&maps[0], *unit)?))
            }
            (Scorer::Entropy, CaseInput::Maps(maps)) => entropy_score(&maps[0]),
            (Scorer::Uncertainty, CaseInput::Maps(maps)) => uncertainty_score(maps),
            _ => Err(Error::InvalidArgument(
                "scorer and case input kind disagree".into(),
            )),
        }
    }
}

fn load_case(entry: &CaseEntry, as_image: bool) -> Result<CaseInput> {
    if as_image {
        let path = entry.primary_path()?;
        Ok(CaseInput::Image(load_volume(path, infer_format(path)?)?))
    } else {
        let maps = entry
            .all_paths()
            .into_iter()
            .map(|p| load_volume(p, infer_format(p)?))
            .collect::<Result<Vec<_>>>()?;
        if maps.is_empty() {
            return Err(Error::Manifest(format!(
                "case {:?} lists no path",
                entry.case_id
            )));
        }
        Ok(CaseInput::Maps(maps))
    }
}

fn score_entries(scorer: &Scorer, entries: &[CaseEntry]) -> Result<ScoreTable> {
    let rows: Vec<ScoreRow> = entries
        .par_iter()
        .map(|entry| {
            let input = load_case(entry, scorer.wants_image())?;
            Ok(ScoreRow {
                case_id: entry.case_id.clone(),
                score: scorer.score(&input)?,
            })
        })
        .collect::<Result<_>>()?;
    ScoreTable::from_rows(rows)
}

/// Score synthesized corruptions of the ID test cases at one severity.
fn score_synthetic(
    scorer: &Scorer,
    manifest: &ChallengeManifest,
    synth: &SyntheticSpec,
    severity: u8,
) -> Result<ScoreTable> {
    let rows: Vec<ScoreRow> = manifest
        .id_test
        .par_iter()
        .map(|entry| {
            let seed = case_seed(synth.seed, &entry.case_id);
            let spec = CorruptionSpec::new(synth.kind, severity, seed)?;
            let input = load_case(entry, scorer.wants_image())?;
            let corrupted = match input {
                // Corruption operates on standardized intensities, so raw
                // images are preprocessed before the artifact is injected;
                // the detector still runs its own pipeline on the result.
                CaseInput::Image(v) => {
                    CaseInput::Image(corrupt(&preprocess(&v, &manifest.modality)?, &spec)?)
                }
                CaseInput::Maps(maps) => CaseInput::Maps(
                    maps.iter().map(|m| corrupt(m, &spec)).collect::<Result<_>>()?,
                ),
            };
            Ok(ScoreRow {
                case_id: format!("{}#s{severity}", entry.case_id),
                score: scorer.score(&corrupted)?,
            })
        })
        .collect::<Result<_>>()?;
    ScoreTable::from_rows(rows)
}

fn fit_scorer(manifest: &ChallengeManifest, spec: &DetectorSpec) -> Result<Scorer> {
    match spec {
        DetectorSpec::IhfMah { m, v, ridge } | DetectorSpec::IhfNn { m, v, ridge } => {
            let train: Vec<Volume<f32>> = manifest
                .id_train
                .par_iter()
                .map(|e| {
                    let p = e.primary_path()?;
                    load_volume(p, infer_format(p)?)
                })
                .collect::<Result<_>>()?;
            let det = fit_ihf::<f32, f64>(&train, &manifest.modality, *m, *v, *ridge)
                .map_err(|e| Error::Challenge {
                    challenge: manifest.name.clone(),
                    source: Box::new(e),
                })?;
            Ok(match spec {
                DetectorSpec::IhfMah { .. } => Scorer::IhfMah(Box::new(det)),
                _ => Scorer::IhfNn(Box::new(det)),
            })
        }
        DetectorSpec::Volume => {
            let volumes: Vec<f64> = manifest
                .id_train
                .par_iter()
                .map(|e| {
                    let p = e.primary_path()?;
                    positive_volume(
                        &load_volume::<f32>(p, infer_format(p)?)?,
                        manifest.volume_unit,
                    )
                })
                .collect::<Result<_>>()?;
            let p = VolumePredictor::fit(&volumes).map_err(|e| Error::Challenge {
                challenge: manifest.name.clone(),
                source: Box::new(e),
            })?;
            Ok(Scorer::Volume(p, manifest.volume_unit))
        }
        DetectorSpec::Entropy => Ok(Scorer::Entropy),
        DetectorSpec::Uncertainty => Ok(Scorer::Uncertainty),
        DetectorSpec::External { .. } => unreachable!("external runs have no scorer"),
    }
}

/// Run one challenge manifest with one detector; one result per OOD set
/// (one per severity level for synthetic sets).
pub fn run_challenge(
    manifest: &ChallengeManifest,
    spec: &DetectorSpec,
    tpr_target: f64,
) -> Result<Vec<ChallengeResult>> {
    manifest.check_files()?;
    if let DetectorSpec::External { scores } = spec {
        return run_external(manifest, scores, tpr_target);
    }
    let scorer = fit_scorer(manifest, spec)?;
    let id_scores = score_entries(&scorer, &manifest.id_test)?;

    let mut results = Vec::new();
    for set in &manifest.ood_sets {
        if let Some(entries) = &set.entries {
            let ood_scores = score_entries(&scorer, entries)?;
            results.push(make_result(
                manifest,
                spec,
                set.name.clone(),
                &id_scores,
                ood_scores,
                tpr_target,
            )?);
        } else if let Some(synth) = &set.synthetic {
            for &severity in &synth.severities {
                let ood_scores = score_synthetic(&scorer, manifest, synth, severity)?;
                results.push(make_result(
                    manifest,
                    spec,
                    format!("{}@s{severity}", set.name),
                    &id_scores,
                    ood_scores,
                    tpr_target,
                )?);
            }
        }
    }
    Ok(results)
}

fn make_result(
    manifest: &ChallengeManifest,
    spec: &DetectorSpec,
    ood_set: String,
    id_scores: &ScoreTable,
    ood_scores: ScoreTable,
    tpr_target: f64,
) -> Result<ChallengeResult> {
    let metric = MetricResult::compute(&id_scores.scores(), &ood_scores.scores(), tpr_target)?;
    Ok(ChallengeResult {
        challenge: manifest.name.clone(),
        ood_set,
        method: spec.method_name().to_string(),
        metric,
        id_scores: id_scores.clone(),
        ood_scores,
    })
}

/// Evaluate externally produced scores: the CSV must cover every ID test
/// and OOD case id, or the run aborts listing all missing ids.
fn run_external(
    manifest: &ChallengeManifest,
    scores_path: &Path,
    tpr_target: f64,
) -> Result<Vec<ChallengeResult>> {
    let table = ScoreTable::read_csv(scores_path)?;
    let lookup = |entries: &[CaseEntry]| -> std::result::Result<ScoreTable, Vec<String>> {
        let mut rows = Vec::new();
        let mut missing = Vec::new();
        for e in entries {
            match table.get(&e.case_id) {
                Some(score) => rows.push(ScoreRow {
                    case_id: e.case_id.clone(),
                    score,
                }),
                None => missing.push(e.case_id.clone()),
            }
        }
        if missing.is_empty() {
            Ok(ScoreTable::from_rows(rows).expect("validated above"))
        } else {
            Err(missing)
        }
    };

    let mut missing = Vec::new();
    let id_scores = match lookup(&manifest.id_test) {
        Ok(t) => Some(t),
        Err(mut m) => {
            missing.append(&mut m);
            None
        }
    };
    let mut set_tables = Vec::new();
    for set in &manifest.ood_sets {
        match &set.entries {
            Some(entries) => match lookup(entries) {
                Ok(t) => set_tables.push((set.name.clone(), t)),
                Err(mut m) => missing.append(&mut m),
            },
            None => {
                return Err(Error::InvalidArgument(format!(
                    "ood_set {:?} is synthetic; external score files can only cover \
                     file-backed sets (score the corrupted volumes first instead)",
                    set.name
                )))
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }
    let id_scores = id_scores.expect("missing handled above");

    let spec = DetectorSpec::External {
        scores: scores_path.to_path_buf(),
    };
    set_tables
        .into_iter()
        .map(|(name, ood)| make_result(manifest, &spec, name, &id_scores, ood, tpr_target))
        .collect()
}

/// One cell of a hyperparameter sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub m: usize,
    pub v: Option<f64>,
    pub ood_set: String,
    pub fpr: Option<f64>,
    pub auroc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IhfVariant {
    Mahalanobis,
    NearestNeighbor,
}

/// Grid-evaluate the histogram detector over bin counts and variance
/// targets. Cell failures are recorded and the sweep continues.
pub fn sweep_hyperparameters(
    manifest: &ChallengeManifest,
    variant: IhfVariant,
    m_list: &[usize],
    v_list: &[Option<f64>],
    ridge: f64,
    tpr_target: f64,
) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &m in m_list {
        for &v in v_list {
            let spec = match variant {
                IhfVariant::Mahalanobis => DetectorSpec::IhfMah { m, v, ridge },
                IhfVariant::NearestNeighbor => DetectorSpec::IhfNn { m, v, ridge },
            };
            match run_challenge(manifest, &spec, tpr_target) {
                Ok(results) => {
                    for r in results {
                        cells.push(SweepCell {
                            m,
                            v,
                            ood_set: r.ood_set,
                            fpr: Some(r.metric.fpr_at_tpr95),
                            auroc: Some(r.metric.auroc),
                            error: None,
                        });
                    }
                }
                Err(e) => cells.push(SweepCell {
                    m,
                    v,
                    ood_set: "*".to_string(),
                    fpr: None,
                    auroc: None,
                    error: Some(e.to_string()),
                }),
            }
        }
    }
    cells
}

/// Long-format sweep CSV: `m,v,ood_set,fpr,auroc,error`.
pub fn write_sweep_csv(path: &Path, cells: &[SweepCell]) -> Result<()> {
    let mut out = String::from("m,v,ood_set,fpr,auroc,error\n");
    for c in cells {
        let v = c.v.map(|v| v.to_string()).unwrap_or_else(|| "none".into());
        let fpr = c.fpr.map(|x| x.to_string()).unwrap_or_default();
        let auroc = c.auroc.map(|x| x.to_string()).unwrap_or_default();
        let err = c.error.as_deref().unwrap_or("").replace(',', ";");
        out.push_str(&format!("{},{v},{},{fpr},{auroc},{err}\n", c.m, c.ood_set));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Fechner correlation between one method's per-challenge metric vector
/// and every other method's, over the common (challenge, ood_set) rows.
pub fn correlate_methods(
    results: &[ChallengeResult],
    reference_method: &str,
    quantity: crate::harness::report::CorrelationQuantity,
) -> Result<Vec<(String, f64)>> {
    use crate::harness::report::CorrelationQuantity;

    let mut by_method: BTreeMap<&str, BTreeMap<(String, String), f64>> = BTreeMap::new();
    for r in results {
        let value = match quantity {
            CorrelationQuantity::Fpr => r.metric.fpr_at_tpr95,
            CorrelationQuantity::Auroc => r.metric.auroc,
        };
        by_method
            .entry(r.method.as_str())
            .or_default()
            .insert((r.challenge.clone(), r.ood_set.clone()), value);
    }
    let reference = by_method.get(reference_method).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "reference method {reference_method:?} has no results"
        ))
    })?;
    let keys: Vec<_> = reference.keys().cloned().collect();
    let ref_vec: Vec<f64> = keys.iter().map(|k| reference[k]).collect();

    let mut out = Vec::new();
    for (method, rows) in &by_method {
        let vec: Vec<f64> = keys
            .iter()
            .map(|k| {
                rows.get(k).copied().ok_or_else(|| {
                    Error::Data(format!(
                        "method {method:?} is missing challenge {k:?}; correlation needs \
                         identical coverage"
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if rows.len() != keys.len() {
            return Err(Error::Data(format!(
                "method {method:?} covers {} challenges, reference covers {}",
                rows.len(),
                keys.len()
            )));
        }
        out.push((method.to_string(), fechner_correlation(&ref_vec, &vec)?));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultsDoc {
    #[serde(default)]
    groups: GroupMap,
    results: Vec<ResultEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultEntry {
    challenge: String,
    ood_set: String,
    method: String,
    metric: MetricResult,
    id_scores: String,
    ood_scores: String,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Persist results under `dir`: per-case score CSVs in `dir/scores/` and
/// a `results.json` document referencing them. Returns the JSON path.
pub fn save_results(
    dir: &Path,
    results: &[ChallengeResult],
    groups: &GroupMap,
) -> Result<PathBuf> {
    let scores_dir = dir.join("scores");
    std::fs::create_dir_all(&scores_dir).map_err(|e| Error::io(&scores_dir, e))?;

    let mut entries = Vec::new();
    for r in results {
        let id_name = format!("scores/{}__{}__id_test.csv", sanitize(&r.challenge), sanitize(&r.method));
        let ood_name = format!(
            "scores/{}__{}__{}.csv",
            sanitize(&r.challenge),
            sanitize(&r.method),
            sanitize(&r.ood_set)
        );
        r.id_scores.write_csv(&dir.join(&id_name))?;
        r.ood_scores.write_csv(&dir.join(&ood_name))?;
        entries.push(ResultEntry {
            challenge: r.challenge.clone(),
            ood_set: r.ood_set.clone(),
            method: r.method.clone(),
            metric: r.metric.clone(),
            id_scores: id_name,
            ood_scores: ood_name,
        });
    }
    let doc = ResultsDoc {
        groups: groups.clone(),
        results: entries,
    };
    let path = dir.join("results.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Data(format!("results: {e}")))?,
    )
    .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Load a results document, reloading the referenced score tables.
pub fn load_results(path: &Path) -> Result<(Vec<ChallengeResult>, GroupMap)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ResultsDoc = serde_json::from_str(&text)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("bad results document: {e}"),
        })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let results = doc
        .results
        .into_iter()
        .map(|e| {
            Ok(ChallengeResult {
                id_scores: ScoreTable::read_csv(&base.join(&e.id_scores))?,
                ood_scores: ScoreTable::read_csv(&base.join(&e.ood_scores))?,
                challenge: e.challenge,
                ood_set: e.ood_set,
                method: e.method,
                metric: e.metric,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((results, doc.groups))
}

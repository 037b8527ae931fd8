//! OOD scorers: intensity-histogram features with Mahalanobis or
//! nearest-neighbor distance, plus the prediction-map baselines
//! (entropy over the predicted area, ensemble variance, predicted-volume
//! percentile). Detectors are immutable after fitting; scoring is pure.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{fit_pca, histogram, pca_transform, Embedding, PcaModel};
use crate::linalg;
use crate::volgrid::{preprocess, PreprocessConfig, Volume};
use crate::{Error, Real, Result};

pub const DEFAULT_BIN_COUNT: usize = 150;
pub const DEFAULT_VARIANCE_TARGET: f64 = 0.9999;
pub const DEFAULT_RIDGE: f64 = 1e-9;

/// Histogram-feature detector: preprocessing config, bin count, optional
/// PCA, the transformed training vectors, and the fitted Gaussian
/// (mean + inverse covariance with `1/n` normalization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhfDetector<S> {
    preprocess_cfg: PreprocessConfig,
    m: usize,
    pca: Option<PcaModel<S>>,
    train_vectors: Vec<Vec<S>>,
    mu_hat: Vec<S>,
    sigma_inv: Vec<Vec<S>>,
    ridge: S,
}

impl<S: Real> IhfDetector<S> {
    pub fn preprocess_cfg(&self) -> &PreprocessConfig {
        &self.preprocess_cfg
    }

    pub fn bin_count(&self) -> usize {
        self.m
    }

    pub fn pca(&self) -> Option<&PcaModel<S>> {
        self.pca.as_ref()
    }

    /// Dimension of the scored feature space (k with PCA, m without).
    pub fn feature_dim(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn train_vectors(&self) -> &[Vec<S>] {
        &self.train_vectors
    }

    pub fn mean(&self) -> &[S] {
        &self.mu_hat
    }

    pub fn sigma_inv(&self) -> &[Vec<S>] {
        &self.sigma_inv
    }

    pub fn ridge(&self) -> S {
        self.ridge
    }

    /// Run a volume through the detector's own preprocessing, histogram,
    /// and PCA projection.
    pub fn embed<T: Real>(&self, x: &Volume<T>) -> Result<Vec<S>> {
        let std = preprocess(x, &self.preprocess_cfg)?;
        let e: Embedding<S> = histogram(&std, self.m)?;
        match &self.pca {
            Some(model) => pca_transform(model, e.values()),
            None => Ok(e.into_values()),
        }
    }

    /// Mahalanobis distance of the embedded volume from the training
    /// Gaussian.
    pub fn score_mahalanobis<T: Real>(&self, x: &Volume<T>) -> Result<S> {
        let e = self.embed(x)?;
        self.score_mahalanobis_vec(&e)
    }

    pub fn score_mahalanobis_vec(&self, e: &[S]) -> Result<S> {
        let k = self.feature_dim();
        if e.len() != k {
            return Err(Error::DimMismatch(format!(
                "feature vector has dimension {}, detector expects {k}",
                e.len()
            )));
        }
        let diff: Vec<S> = e.iter().zip(&self.mu_hat).map(|(&x, &mu)| x - mu).collect();
        let mut q = S::zero();
        for (i, row) in self.sigma_inv.iter().enumerate() {
            q += diff[i] * linalg::dot(row, &diff);
        }
        Ok(q.max(S::zero()).sqrt())
    }

    /// Euclidean distance to the nearest transformed training vector.
    pub fn score_nn<T: Real>(&self, x: &Volume<T>) -> Result<S> {
        let e = self.embed(x)?;
        self.score_nn_vec(&e)
    }

    pub fn score_nn_vec(&self, e: &[S]) -> Result<S> {
        let k = self.feature_dim();
        if e.len() != k {
            return Err(Error::DimMismatch(format!(
                "feature vector has dimension {}, detector expects {k}",
                e.len()
            )));
        }
        let mut best = S::infinity();
        for row in &self.train_vectors {
            let d2: S = row
                .iter()
                .zip(e)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            if d2 < best {
                best = d2;
            }
        }
        Ok(best.sqrt())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("detector serialize: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: IhfDetector<S> = serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("detector deserialize: {e}")))?;
        d.validate()?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let k = self.mu_hat.len();
        let n = self.train_vectors.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "detector stores {n} training vectors, need at least 2"
            )));
        }
        if self.train_vectors.iter().any(|r| r.len() != k) {
            return Err(Error::DimMismatch(
                "training vectors and mean disagree on dimension".into(),
            ));
        }
        if let Some(pca) = &self.pca {
            if pca.input_dim() != self.m {
                return Err(Error::DimMismatch(format!(
                    "PCA expects m = {}, detector declares m = {}",
                    pca.input_dim(),
                    self.m
                )));
            }
            if pca.output_dim() != k {
                return Err(Error::DimMismatch(format!(
                    "PCA produces k = {}, detector statistics have k = {k}",
                    pca.output_dim()
                )));
            }
        } else if self.m != k {
            return Err(Error::DimMismatch(format!(
                "without PCA the feature dimension must equal m = {}, got {k}",
                self.m
            )));
        }
        if self.sigma_inv.len() != k || self.sigma_inv.iter().any(|r| r.len() != k) {
            return Err(Error::DimMismatch(
                "inverse covariance must be k x k".into(),
            ));
        }
        // Mean consistency.
        let inv_n = S::one() / S::from_usize(n).unwrap();
        let tol = S::from_f64_lossy(1e-9);
        for c in 0..k {
            let mut acc = S::zero();
            for r in &self.train_vectors {
                acc += r[c];
            }
            if (acc * inv_n - self.mu_hat[c]).abs() > tol {
                return Err(Error::Data(format!(
                    "stored mean drifts from the training-vector mean at component {c}"
                )));
            }
        }
        // Symmetry.
        let sym_tol = S::from_f64_lossy(1e-8);
        for i in 0..k {
            for j in (i + 1)..k {
                if (self.sigma_inv[i][j] - self.sigma_inv[j][i]).abs() > sym_tol {
                    return Err(Error::Data(
                        "inverse covariance is not symmetric".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Fit the histogram-feature detector on training volumes.
///
/// Pipeline: preprocess, histogram in `m` bins, optional PCA to the
/// explained-variance target `v`, then mean and covariance with `1/n`
/// normalization inverted as `(sigma + ridge * (trace/k) * I)^-1`.
pub fn fit_ihf<T: Real, S: Real>(
    train: &[Volume<T>],
    cfg: &PreprocessConfig,
    m: usize,
    v: Option<S>,
    ridge: S,
) -> Result<IhfDetector<S>> {
    if train.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "detector fit needs at least 2 training volumes, got {}",
            train.len()
        )));
    }
    let embeddings: Vec<Vec<S>> = train
        .par_iter()
        .map(|vol| {
            let std = preprocess(vol, cfg)?;
            Ok(histogram::<T, S>(&std, m)?.into_values())
        })
        .collect::<Result<_>>()?;

    let (pca, vectors) = match v {
        Some(target) => {
            let model = fit_pca(&embeddings, target)?;
            let transformed = embeddings
                .iter()
                .map(|e| pca_transform(&model, e))
                .collect::<Result<Vec<_>>>()?;
            (Some(model), transformed)
        }
        None => (None, embeddings),
    };
    fit_ihf_from_vectors(vectors, pca, cfg.clone(), m, ridge)
}

/// Fit the Gaussian scorer directly from (already transformed) training
/// vectors. This is the tail of [`fit_ihf`] and is also useful when
/// embeddings come from elsewhere.
pub fn fit_ihf_from_vectors<S: Real>(
    train_vectors: Vec<Vec<S>>,
    pca: Option<PcaModel<S>>,
    preprocess_cfg: PreprocessConfig,
    m: usize,
    ridge: S,
) -> Result<IhfDetector<S>> {
    let n = train_vectors.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "detector fit needs at least 2 training vectors, got {n}"
        )));
    }
    let k = train_vectors[0].len();
    if k == 0 || train_vectors.iter().any(|r| r.len() != k) {
        return Err(Error::DimMismatch(
            "training vectors must share a positive dimension".into(),
        ));
    }
    if ridge < S::zero() {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }

    let inv_n = S::one() / S::from_usize(n).unwrap();
    let mut mu_hat = vec![S::zero(); k];
    for r in &train_vectors {
        for (acc, &x) in mu_hat.iter_mut().zip(r) {
            *acc += x;
        }
    }
    for x in &mut mu_hat {
        *x *= inv_n;
    }

    let mut sigma = vec![S::zero(); k * k];
    for r in &train_vectors {
        let d: Vec<S> = r.iter().zip(&mu_hat).map(|(&x, &mu)| x - mu).collect();
        for i in 0..k {
            for j in i..k {
                sigma[i * k + j] += d[i] * d[j];
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            let val = sigma[i * k + j] * inv_n;
            sigma[i * k + j] = val;
            sigma[j * k + i] = val;
        }
    }

    let trace: S = (0..k).map(|i| sigma[i * k + i]).sum();
    let shift = ridge * trace / S::from_usize(k).unwrap();
    for i in 0..k {
        sigma[i * k + i] += shift;
    }
    let inv = linalg::spd_inverse(&sigma, k).ok_or_else(|| {
        Error::SingularCovariance(format!("k = {k}, n = {n}, ridge = {ridge}"))
    })?;
    let sigma_inv: Vec<Vec<S>> = (0..k).map(|i| inv[i * k..(i + 1) * k].to_vec()).collect();

    Ok(IhfDetector {
        preprocess_cfg,
        m,
        pca,
        train_vectors,
        mu_hat,
        sigma_inv,
        ridge,
    })
}

/// Unit in which predicted-volume sizes are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeUnit {
    #[default]
    Mm3,
    Voxels,
}

/// Size of the predicted positive area (`p > 0.5`) of a probability map.
pub fn positive_volume<T: Real>(map: &Volume<T>, unit: VolumeUnit) -> Result<f64> {
    check_probability_map(map)?;
    let half = T::from_f64_lossy(0.5);
    let count = map.data().iter().filter(|&&p| p > half).count() as f64;
    Ok(match unit {
        VolumeUnit::Mm3 => count * map.voxel_volume_mm3(),
        VolumeUnit::Voxels => count,
    })
}

/// Percentile-rank scorer over training predicted volumes: how far a
/// volume sits from the training median, in percentile points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumePredictor {
    /// Sorted ascending.
    train_volumes: Vec<f64>,
}

impl VolumePredictor {
    pub fn fit(volumes: &[f64]) -> Result<Self> {
        if volumes.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "volume predictor needs at least 2 training volumes, got {}",
                volumes.len()
            )));
        }
        if volumes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("training volumes contain NaN/Inf".into()));
        }
        let mut train_volumes = volumes.to_vec();
        train_volumes.sort_unstable_by(f64::total_cmp);
        Ok(VolumePredictor { train_volumes })
    }

    pub fn train_volumes(&self) -> &[f64] {
        &self.train_volumes
    }

    /// Empirical percentile rank: mean of the strictly-less and
    /// less-or-equal ranks, scaled to [0, 100].
    pub fn percentile_rank(&self, vol: f64) -> f64 {
        let n = self.train_volumes.len() as f64;
        let less = self.train_volumes.partition_point(|&t| t < vol) as f64;
        let le = self.train_volumes.partition_point(|&t| t <= vol) as f64;
        (less + le) / 2.0 * 100.0 / n
    }

    /// OOD score in [0, 50]: distance of the percentile rank from the
    /// median.
    pub fn score(&self, vol: f64) -> f64 {
        (self.percentile_rank(vol) - 50.0).abs()
    }

    /// Two-sided percentile decision: outlier when the volume falls
    /// strictly below the q/2-th or strictly above the (100 - q/2)-th
    /// training percentile, i.e. `score > 50 - q/2`.
    pub fn is_outlier(&self, vol: f64, q: f64) -> bool {
        self.score(vol) > 50.0 - q / 2.0
    }
}

fn check_probability_map<T: Real>(map: &Volume<T>) -> Result<()> {
    let bad = map
        .data()
        .iter()
        .filter(|&&p| {
            let p = p.to_f64_lossy();
            !(0.0..=1.0).contains(&p)
        })
        .count();
    if bad > 0 {
        return Err(Error::Data(format!(
            "probability map has {bad} voxel(s) outside [0, 1]"
        )));
    }
    Ok(())
}

/// Mean binary entropy over the predicted area (`p > 0.5`), natural log;
/// an empty predicted area scores 0.
pub fn entropy_score<T: Real>(prob_map: &Volume<T>) -> Result<f64> {
    check_probability_map(prob_map)?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for &p in prob_map.data() {
        let p = p.to_f64_lossy();
        if p > 0.5 {
            sum += binary_entropy(p);
            count += 1;
        }
    }
    if count == 0 {
        Ok(0.0)
    } else {
        Ok(sum / count as f64)
    }
}

fn binary_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    let q = 1.0 - p;
    if q > 0.0 {
        h -= q * q.ln();
    }
    h
}

/// Mean over all voxels of the per-voxel population standard deviation
/// across K probability maps.
pub fn uncertainty_score<T: Real>(prob_maps: &[Volume<T>]) -> Result<f64> {
    let k = prob_maps.len();
    if k < 2 {
        return Err(Error::InsufficientData(format!(
            "uncertainty aggregation needs K >= 2 maps, got {k}"
        )));
    }
    let shape = prob_maps[0].shape();
    for map in prob_maps {
        if map.shape() != shape {
            return Err(Error::DimMismatch(format!(
                "prediction maps disagree on shape: {:?} vs {:?}",
                shape,
                map.shape()
            )));
        }
        check_probability_map(map)?;
    }
    let voxels = prob_maps[0].voxel_count();
    let inv_k = 1.0 / k as f64;
    let mut total = 0.0f64;
    for idx in 0..voxels {
        let mut mean = 0.0;
        for map in prob_maps {
            mean += map.data()[idx].to_f64_lossy();
        }
        mean *= inv_k;
        let mut var = 0.0;
        for map in prob_maps {
            let d = map.data()[idx].to_f64_lossy() - mean;
            var += d * d;
        }
        total += (var * inv_k).sqrt();
    }
    Ok(total / voxels as f64)
}

/// Per-case OOD scores, one row per case; higher means more OOD-like.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub case_id: String,
    pub score: f64,
}

impl ScoreTable {
    pub fn from_rows(rows: Vec<ScoreRow>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for row in &rows {
            if !row.score.is_finite() {
                return Err(Error::Data(format!(
                    "score for case {:?} is not finite",
                    row.case_id
                )));
            }
            if !seen.insert(row.case_id.as_str()) {
                return Err(Error::Data(format!("duplicate case id {:?}", row.case_id)));
            }
        }
        Ok(ScoreTable { rows })
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn get(&self, case_id: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.case_id == case_id)
            .map(|r| r.score)
    }

    /// CSV with header `case_id,score`, UTF-8, '.' decimal separator.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| {
            Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e))
        })?;
        w.write_record(["case_id", "score"])
            .and_then(|_| {
                for row in &self.rows {
                    w.write_record([row.case_id.as_str(), &row.score.to_string()])?;
                }
                w.flush().map_err(csv::Error::from)
            })
            .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e)))?;
        {
            let headers = r
                .headers()
                .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
            if headers.len() < 2 || &headers[0] != "case_id" || &headers[1] != "score" {
                return Err(Error::format(
                    path,
                    format!("expected header case_id,score, got {headers:?}"),
                ));
            }
        }
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record.map_err(|e| Error::format(path, format!("bad row: {e}")))?;
            let score: f64 = record[1]
                .parse()
                .map_err(|e| Error::format(path, format!("bad score {:?}: {e}", &record[1])))?;
            rows.push(ScoreRow {
                case_id: record[0].to_string(),
                score,
            });
        }
        ScoreTable::from_rows(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::ClipMode;

    fn passthrough_cfg() -> PreprocessConfig {
        // Unit spacing and a window covering [0,1] keep synthetic test
        // volumes essentially unchanged.
        PreprocessConfig {
            target_spacing: [1.0, 1.0, 1.0],
            clip: ClipMode::FixedWindow { lo: 0.0, hi: 1.0 },
        }
    }

    fn vol(data: Vec<f64>) -> Volume<f64> {
        let n = data.len();
        Volume::new(data, [n, 1, 1], [1.0; 3]).unwrap()
    }

    fn hand_detector() -> IhfDetector<f64> {
        fit_ihf_from_vectors(
            vec![
                vec![0.0, 0.0],
                vec![2.0, 0.0],
                vec![0.0, 2.0],
                vec![2.0, 2.0],
            ],
            None,
            passthrough_cfg(),
            2,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn hand_fit_matches_hand_covariance() {
        // Deviations (+-1, +-1): sigma = diag(1, 1) with 1/n scaling, so
        // the inverse is the identity.
        let d = hand_detector();
        assert_eq!(d.mean(), &[1.0, 1.0]);
        assert!((d.sigma_inv()[0][0] - 1.0).abs() < 1e-12);
        assert!((d.sigma_inv()[1][1] - 1.0).abs() < 1e-12);
        assert!(d.sigma_inv()[0][1].abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_is_zero_at_the_mean() {
        let d = hand_detector();
        assert_eq!(d.score_mahalanobis_vec(&[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn mahalanobis_reduces_to_euclidean_under_identity() {
        let d = fit_ihf_from_vectors(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
            None,
            passthrough_cfg(),
            2,
            0.0,
        )
        .unwrap();
        // mu = 0, sigma = I/2; rescale by hand instead: check against the
        // direct quadratic form.
        let e = [3.0f64, 4.0];
        let want = {
            let diff = [3.0f64, 4.0];
            let si = d.sigma_inv();
            let q = diff[0] * (si[0][0] * diff[0] + si[0][1] * diff[1])
                + diff[1] * (si[1][0] * diff[0] + si[1][1] * diff[1]);
            q.sqrt()
        };
        assert!((d.score_mahalanobis_vec(&e).unwrap() - want).abs() < 1e-12);

        // Identity covariance per se: inject it.
        let mut ident = hand_detector();
        ident.mu_hat = vec![0.0, 0.0];
        ident.train_vectors = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        ident.sigma_inv = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!((ident.score_mahalanobis_vec(&[3.0, 4.0]).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn mahalanobis_matches_direct_quadratic_form() {
        let d = hand_detector();
        // diff = (2, 0); q = 4 with identity inverse.
        assert!((d.score_mahalanobis_vec(&[3.0, 1.0]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nn_score_is_zero_for_training_members() {
        let d = hand_detector();
        for row in d.train_vectors().to_vec() {
            assert_eq!(d.score_nn_vec(&row).unwrap(), 0.0);
        }
    }

    #[test]
    fn nn_score_picks_the_nearer_point() {
        let d = fit_ihf_from_vectors(
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            None,
            passthrough_cfg(),
            2,
            1e-9,
        )
        .unwrap();
        assert!((d.score_nn_vec(&[0.4f64, 0.0]).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn nn_score_matches_exhaustive_scan() {
        let mut rng = crate::rng::Pcg32::new(55, 4);
        let train: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..6).map(|_| rng.uniform_in(-2.0, 2.0)).collect())
            .collect();
        let d = fit_ihf_from_vectors(train.clone(), None, passthrough_cfg(), 6, 1e-6).unwrap();
        for _ in 0..20 {
            let q: Vec<f64> = (0..6).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let oracle = train
                .iter()
                .map(|r| {
                    r.iter()
                        .zip(&q)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(d.score_nn_vec(&q).unwrap(), oracle);
        }
    }

    #[test]
    fn identical_volumes_fail_to_fit_with_pca() {
        let v = Volume::constant(0.5f64, [4, 4, 4], [1.0; 3]).unwrap();
        let train = vec![v.clone(), v.clone(), v];
        let err = fit_ihf::<f64, f64>(&train, &passthrough_cfg(), 16, Some(0.9999), 0.0)
            .unwrap_err();
        assert!(
            matches!(err, Error::ZeroVariance | Error::SingularCovariance(_)),
            "{err}"
        );
    }

    #[test]
    fn default_preset_fits_twenty_volumes_with_bounded_rank() {
        let mut rng = crate::rng::Pcg32::new(321, 6);
        let train: Vec<Volume<f64>> = (0..20)
            .map(|_| {
                let data: Vec<f64> = (0..512).map(|_| rng.uniform()).collect();
                Volume::new(data, [8, 8, 8], [1.0; 3]).unwrap()
            })
            .collect();
        let d = fit_ihf::<f64, f64>(
            &train,
            &passthrough_cfg(),
            DEFAULT_BIN_COUNT,
            Some(DEFAULT_VARIANCE_TARGET),
            DEFAULT_RIDGE,
        )
        .unwrap();
        assert!(d.feature_dim() <= 19, "k = {}", d.feature_dim());
    }

    #[test]
    fn ihf_scores_ignore_voxel_order() {
        let mut rng = crate::rng::Pcg32::new(2, 2);
        let train: Vec<Volume<f64>> = (0..5)
            .map(|_| vol((0..64).map(|_| rng.uniform()).collect()))
            .collect();
        let d = fit_ihf::<f64, f64>(&train, &passthrough_cfg(), 8, None, 1e-6).unwrap();

        let data: Vec<f64> = (0..64).map(|_| rng.uniform()).collect();
        let mut shuffled = data.clone();
        shuffled.reverse();
        let a = vol(data);
        let b = vol(shuffled);
        assert_eq!(
            d.score_mahalanobis(&a).unwrap(),
            d.score_mahalanobis(&b).unwrap()
        );
        assert_eq!(d.score_nn(&a).unwrap(), d.score_nn(&b).unwrap());
    }

    #[test]
    fn detector_json_round_trip() {
        let d = hand_detector();
        let back = IhfDetector::<f64>::from_json(&d.to_json().unwrap()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn detector_with_mismatched_m_fails_validation() {
        let d = hand_detector();
        let mut json: serde_json::Value = serde_json::from_str(&d.to_json().unwrap()).unwrap();
        json["m"] = serde_json::json!(150);
        let err = IhfDetector::<f64>::from_json(&json.to_string()).unwrap_err();
        assert!(matches!(err, Error::DimMismatch(_)), "{err}");
    }

    #[test]
    fn volume_predictor_examples() {
        let train: Vec<f64> = (1..=10).map(|i| (i * 10) as f64).collect();
        let p = VolumePredictor::fit(&train).unwrap();
        assert_eq!(p.score(105.0), 50.0);
        // Rank oracle for 35: less = 3, le = 3 -> rank 30 -> score 20.
        assert_eq!(p.score(35.0), 20.0);

        let odd = VolumePredictor::fit(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(odd.score(2.0), 0.0);
    }

    #[test]
    fn volume_score_grows_away_from_the_median() {
        let mut rng = crate::rng::Pcg32::new(8, 8);
        let train: Vec<f64> = (0..31).map(|_| rng.uniform_in(10.0, 90.0)).collect();
        let p = VolumePredictor::fit(&train).unwrap();
        let median = {
            let mut t = train.clone();
            t.sort_by(f64::total_cmp);
            t[t.len() / 2]
        };
        let mut prev = p.score(median);
        for step in 1..40 {
            let s = p.score(median + step as f64 * 2.0);
            assert!(s >= prev);
            prev = s;
        }
        let mut prev = p.score(median);
        for step in 1..40 {
            let s = p.score(median - step as f64 * 2.0);
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(
            entropy_score(&Volume::constant(0.3f64, [3, 3, 3], [1.0; 3]).unwrap()).unwrap(),
            0.0
        );
        assert_eq!(
            entropy_score(&Volume::constant(1.0f64, [3, 3, 3], [1.0; 3]).unwrap()).unwrap(),
            0.0
        );
        let h = entropy_score(&Volume::constant(0.9f64, [3, 3, 3], [1.0; 3]).unwrap()).unwrap();
        let want = -0.9 * 0.9f64.ln() - 0.1 * 0.1f64.ln();
        assert!((h - want).abs() < 1e-12);
        assert!((h - 0.32508).abs() < 1e-5);
    }

    #[test]
    fn entropy_approaches_ln2_near_half() {
        let mut prev = 0.0;
        for p in [0.6, 0.55, 0.51, 0.501, 0.5001] {
            let h = entropy_score(&Volume::constant(p, [2, 2, 2], [1.0; 3]).unwrap()).unwrap();
            assert!(h > prev);
            prev = h;
        }
        assert!((prev - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn entropy_rejects_out_of_range() {
        assert!(entropy_score(&vol(vec![0.2, 1.2])).is_err());
    }

    #[test]
    fn uncertainty_examples() {
        let a = Volume::constant(0.4f64, [2, 2, 2], [1.0; 3]).unwrap();
        assert_eq!(uncertainty_score(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);

        let zeros = Volume::constant(0.0f64, [2, 2, 2], [1.0; 3]).unwrap();
        let ones = Volume::constant(1.0f64, [2, 2, 2], [1.0; 3]).unwrap();
        assert_eq!(uncertainty_score(&[zeros, ones]).unwrap(), 0.5);
    }

    #[test]
    fn uncertainty_matches_direct_oracle() {
        let mut rng = crate::rng::Pcg32::new(66, 1);
        let maps: Vec<Volume<f64>> = (0..5)
            .map(|_| {
                let data: Vec<f64> = (0..64).map(|_| rng.uniform()).collect();
                Volume::new(data, [4, 4, 4], [1.0; 3]).unwrap()
            })
            .collect();
        let got = uncertainty_score(&maps).unwrap();

        let mut oracle = 0.0;
        for idx in 0..64 {
            let vals: Vec<f64> = maps.iter().map(|m| m.data()[idx]).collect();
            let mean = vals.iter().sum::<f64>() / 5.0;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
            oracle += var.sqrt();
        }
        oracle /= 64.0;
        assert!((got - oracle).abs() < 1e-7);
    }

    #[test]
    fn uncertainty_rejects_shape_mismatch_and_small_k() {
        let a = Volume::constant(0.4f64, [2, 2, 2], [1.0; 3]).unwrap();
        let b = Volume::constant(0.4f64, [2, 2, 1], [1.0; 3]).unwrap();
        assert!(uncertainty_score(&[a.clone(), b]).is_err());
        assert!(uncertainty_score(&[a]).is_err());
    }

    #[test]
    fn score_table_csv_round_trip_and_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        let t = ScoreTable::from_rows(vec![
            ScoreRow { case_id: "a".into(), score: 0.1 },
            ScoreRow { case_id: "b".into(), score: 1.0 / 3.0 },
        ])
        .unwrap();
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("case_id,score\n"), "{text}");
        let back = ScoreTable::read_csv(&p).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn score_table_rejects_duplicates_and_nan() {
        assert!(ScoreTable::from_rows(vec![
            ScoreRow { case_id: "a".into(), score: 0.0 },
            ScoreRow { case_id: "a".into(), score: 1.0 },
        ])
        .is_err());
        assert!(ScoreTable::from_rows(vec![ScoreRow {
            case_id: "x".into(),
            score: f64::NAN
        }])
        .is_err());
    }
}

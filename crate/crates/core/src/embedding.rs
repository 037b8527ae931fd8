//! Intensity-histogram embeddings and PCA dimensionality reduction.
//!
//! A standardized volume is summarized by the probability mass of its
//! intensities in `m` uniform bins over [0, 1]; those vectors feed a PCA
//! fitted once on training data and frozen thereafter.

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::volgrid::Volume;
use crate::{Error, Real, Result};

/// Histogram embedding: per-bin probability mass plus the bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding<S> {
    values: Vec<S>,
    bin_edges: Vec<S>,
}

impl<S: Real> Embedding<S> {
    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn bin_edges(&self) -> &[S] {
        &self.bin_edges
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Histogram of a standardized volume in `m` uniform bins over [0, 1].
///
/// Bins are half-open `[edge_i, edge_{i+1})` with the last bin closed;
/// masses are counts divided by the voxel total, so they sum to one.
pub fn histogram<T: Real, S: Real>(v: &Volume<T>, m: usize) -> Result<Embedding<S>> {
    if m == 0 {
        return Err(Error::InvalidArgument("histogram needs m >= 1 bins".into()));
    }
    let out_of_range = v
        .data()
        .iter()
        .filter(|&&x| {
            let x = x.to_f64_lossy();
            !(0.0..=1.0).contains(&x)
        })
        .count();
    if out_of_range > 0 {
        return Err(Error::Data(format!(
            "histogram input must be standardized to [0, 1]; {out_of_range} voxel(s) fall outside"
        )));
    }

    let edges: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
    let mut counts = vec![0u64; m];
    for &x in v.data() {
        let x = x.to_f64_lossy();
        // Nominal bin by scaling, then nudge so the half-open edge rule
        // holds even when x*m rounds across an edge.
        let mut b = ((x * m as f64) as usize).min(m - 1);
        if x < edges[b] {
            b -= 1;
        } else if b + 1 < m && x >= edges[b + 1] {
            b += 1;
        }
        counts[b] += 1;
    }

    let total = v.voxel_count() as f64;
    Ok(Embedding {
        values: counts
            .iter()
            .map(|&c| S::from_f64_lossy(c as f64 / total))
            .collect(),
        bin_edges: edges.into_iter().map(S::from_f64_lossy).collect(),
    })
}

/// Frozen PCA model: training mean, orthonormal component rows, and the
/// explained-variance ratios of the retained components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel<S> {
    m: usize,
    k: usize,
    mean: Vec<S>,
    components: Vec<Vec<S>>,
    explained_variance_ratio: Vec<S>,
    v_target: S,
}

impl<S: Real> PcaModel<S> {
    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn output_dim(&self) -> usize {
        self.k
    }

    pub fn mean(&self) -> &[S] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<S>] {
        &self.components
    }

    pub fn explained_variance_ratio(&self) -> &[S] {
        &self.explained_variance_ratio
    }

    pub fn v_target(&self) -> S {
        self.v_target
    }

    /// Build a model from raw parts, enforcing the structural invariants.
    pub fn from_parts(
        mean: Vec<S>,
        components: Vec<Vec<S>>,
        explained_variance_ratio: Vec<S>,
        v_target: S,
    ) -> Result<Self> {
        let m = mean.len();
        let k = components.len();
        if explained_variance_ratio.len() != k {
            return Err(Error::DimMismatch(format!(
                "{k} components but {} variance ratios",
                explained_variance_ratio.len()
            )));
        }
        if components.iter().any(|c| c.len() != m) {
            return Err(Error::DimMismatch(format!(
                "every component row must have length m = {m}"
            )));
        }
        let model = PcaModel {
            m,
            k,
            mean,
            components,
            explained_variance_ratio,
            v_target,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let tol = S::from_f64_lossy(1e-8);
        for i in 0..self.k {
            for j in i..self.k {
                let d = linalg::dot(&self.components[i], &self.components[j]);
                let want = if i == j { S::one() } else { S::zero() };
                if (d - want).abs() > tol {
                    return Err(Error::Data(format!(
                        "PCA components are not orthonormal: <c{i}, c{j}> = {d}"
                    )));
                }
            }
        }
        let mut prev = S::infinity();
        for &r in &self.explained_variance_ratio {
            if r < S::zero() || r > prev {
                return Err(Error::Data(
                    "explained-variance ratios must be non-negative and non-increasing".into(),
                ));
            }
            prev = r;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(format!("PCA serialize: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PcaModel<S> = serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("PCA deserialize: {e}")))?;
        PcaModel::from_parts(raw.mean, raw.components, raw.explained_variance_ratio, raw.v_target)
    }
}

/// Fit PCA on training row-vectors, retaining the smallest number of
/// components whose cumulative explained-variance ratio reaches `v`
/// (capped at the numerical rank when `v` is unreachable).
///
/// Works on the Gram matrix when `n <= m` and on the scatter matrix
/// otherwise, so the eigenproblem is always the smaller side. Component
/// signs follow a fixed convention: the entry of largest absolute value
/// is positive.
pub fn fit_pca<S: Real>(rows: &[Vec<S>], v: S) -> Result<PcaModel<S>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 training vectors, got {n}"
        )));
    }
    let m = rows[0].len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::DimMismatch(
            "training vectors must share a positive dimension".into(),
        ));
    }
    if !(v > S::zero() && v <= S::one()) {
        return Err(Error::InvalidArgument(format!(
            "explained-variance target must lie in (0, 1], got {v}"
        )));
    }

    let mut mean = vec![S::zero(); m];
    for r in rows {
        for (acc, &x) in mean.iter_mut().zip(r) {
            *acc += x;
        }
    }
    let inv_n = S::one() / S::from_usize(n).unwrap();
    for x in &mut mean {
        *x *= inv_n;
    }
    // Centered data, row-major n x m.
    let mut x = vec![S::zero(); n * m];
    for (r, row) in rows.iter().enumerate() {
        for (c, &val) in row.iter().enumerate() {
            x[r * m + c] = val - mean[c];
        }
    }

    // Eigenvalues of either side equal the squared singular values.
    let (eigvals, eigvecs, gram_side) = if n <= m {
        let mut g = vec![S::zero(); n * n];
        for a in 0..n {
            for b in a..n {
                let d = linalg::dot(&x[a * m..(a + 1) * m], &x[b * m..(b + 1) * m]);
                g[a * n + b] = d;
                g[b * n + a] = d;
            }
        }
        let (vals, vecs) = linalg::sym_eigen(&g, n);
        (vals, vecs, true)
    } else {
        let mut c = vec![S::zero(); m * m];
        for r in 0..n {
            let row = &x[r * m..(r + 1) * m];
            for a in 0..m {
                for b in a..m {
                    c[a * m + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                c[a * m + b] = c[b * m + a];
            }
        }
        let (vals, vecs) = linalg::sym_eigen(&c, m);
        (vals, vecs, false)
    };

    let total: S = eigvals.iter().fold(S::zero(), |acc, &l| {
        if l > S::zero() {
            acc + l
        } else {
            acc
        }
    });
    if !(total > S::zero()) {
        return Err(Error::ZeroVariance);
    }
    let rank_tol = eigvals[0].max(S::zero()) * S::from_usize(n.max(m)).unwrap() * S::epsilon();

    let side = if gram_side { n } else { m };
    let mut components: Vec<Vec<S>> = Vec::new();
    let mut ratios: Vec<S> = Vec::new();
    let mut cum = S::zero();
    for (i, &lambda) in eigvals.iter().enumerate() {
        if lambda <= rank_tol || !(lambda > S::zero()) {
            break;
        }
        let ratio = lambda / total;
        let row = if gram_side {
            // Map the Gram eigenvector into feature space: w = X^T u / sqrt(lambda).
            let u = &eigvecs[i * side..(i + 1) * side];
            let inv_sigma = S::one() / lambda.sqrt();
            let mut w = vec![S::zero(); m];
            for (r, &ur) in u.iter().enumerate() {
                let coeff = ur * inv_sigma;
                for (c, wc) in w.iter_mut().enumerate() {
                    *wc += coeff * x[r * m + c];
                }
            }
            w
        } else {
            eigvecs[i * side..(i + 1) * side].to_vec()
        };
        components.push(row);
        ratios.push(ratio);
        cum += ratio;
        if cum >= v {
            break;
        }
    }
    if components.is_empty() {
        return Err(Error::ZeroVariance);
    }

    // One modified-Gram-Schmidt pass keeps the rows orthonormal to
    // working precision regardless of eigenvalue spread.
    for i in 0..components.len() {
        for j in 0..i {
            let (head, tail) = components.split_at_mut(i);
            let proj = linalg::dot(&head[j], &tail[0]);
            for (t, &h) in tail[0].iter_mut().zip(&head[j]) {
                *t -= proj * h;
            }
        }
        let norm = linalg::dot(&components[i], &components[i]).sqrt();
        let inv = S::one() / norm;
        for c in &mut components[i] {
            *c *= inv;
        }
    }

    // Deterministic sign convention: largest-magnitude entry positive.
    for row in &mut components {
        let mut best = 0;
        for (idx, &c) in row.iter().enumerate() {
            if c.abs() > row[best].abs() {
                best = idx;
            }
        }
        if row[best] < S::zero() {
            for c in row.iter_mut() {
                *c = -*c;
            }
        }
    }

    PcaModel::from_parts(mean, components, ratios, v)
}

/// Project a vector with a fitted model: `components * (e - mean)`.
pub fn pca_transform<S: Real>(model: &PcaModel<S>, e: &[S]) -> Result<Vec<S>> {
    if e.len() != model.m {
        return Err(Error::DimMismatch(format!(
            "vector has dimension {}, model expects {}",
            e.len(),
            model.m
        )));
    }
    let centered: Vec<S> = e.iter().zip(&model.mean).map(|(&x, &mu)| x - mu).collect();
    Ok(model
        .components
        .iter()
        .map(|row| linalg::dot(row, &centered))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Volume;
    use nalgebra::DMatrix;

    fn vol(data: Vec<f64>) -> Volume<f64> {
        let n = data.len();
        Volume::new(data, [n, 1, 1], [1.0; 3]).unwrap()
    }

    #[test]
    fn constant_half_lands_in_third_of_four_bins() {
        let v = Volume::constant(0.5f64, [3, 3, 3], [1.0; 3]).unwrap();
        let e: Embedding<f64> = histogram(&v, 4).unwrap();
        assert_eq!(e.values(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn extremes_split_two_bins_evenly() {
        let v = vol(vec![0.0, 1.0, 0.0, 1.0]);
        let e: Embedding<f64> = histogram(&v, 2).unwrap();
        assert_eq!(e.values(), &[0.5, 0.5]);
    }

    #[test]
    fn histogram_matches_direct_counting_oracle() {
        let mut rng = crate::rng::Pcg32::new(2024, 1);
        let data: Vec<f64> = (0..1000).map(|_| rng.uniform()).collect();
        let m = 10;
        let e: Embedding<f64> = histogram(&vol(data.clone()), m).unwrap();

        // Oracle: linear scan over the edge intervals.
        let edges: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        let mut oracle = vec![0.0; m];
        for x in &data {
            for b in 0..m {
                let last = b == m - 1;
                if *x >= edges[b] && (*x < edges[b + 1] || (last && *x <= 1.0)) {
                    oracle[b] += 1.0;
                    break;
                }
            }
        }
        for o in &mut oracle {
            *o /= data.len() as f64;
        }
        assert_eq!(e.values(), &oracle[..]);
        for &mass in e.values() {
            assert!((mass - 0.1).abs() < 0.05, "mass {mass}");
        }
    }

    #[test]
    fn histogram_mass_sums_to_one_and_ignores_order() {
        let mut rng = crate::rng::Pcg32::new(31, 7);
        for _ in 0..25 {
            let n = 1 + rng.below(300);
            let data: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let m = 1 + rng.below(40);
            let e: Embedding<f64> = histogram(&vol(data.clone()), m).unwrap();
            let mass: f64 = e.values().iter().sum();
            assert!((mass - 1.0).abs() <= 1e-9, "mass {mass}");

            let mut shuffled = data;
            // deterministic Fisher-Yates
            for i in (1..shuffled.len()).rev() {
                let j = rng.below(i + 1);
                shuffled.swap(i, j);
            }
            let e2: Embedding<f64> = histogram(&vol(shuffled), m).unwrap();
            assert_eq!(e.values(), e2.values());
        }
    }

    #[test]
    fn histogram_rejects_unstandardized_values() {
        let err = histogram::<f64, f64>(&vol(vec![0.5, 1.5]), 4).unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
    }

    #[test]
    fn edge_values_respect_half_open_bins() {
        let v = vol(vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let e: Embedding<f64> = histogram(&v, 4).unwrap();
        // 1.0 joins the last (closed) bin together with 0.75.
        assert_eq!(e.values(), &[0.2, 0.2, 0.2, 0.4]);
        assert_eq!(e.bin_edges(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn collinear_points_give_rank_one_model() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let model = fit_pca(&rows, 0.9999).unwrap();
        assert_eq!(model.output_dim(), 1);
        assert_eq!(model.explained_variance_ratio(), &[1.0]);
    }

    #[test]
    fn isotropic_data_keeps_both_directions() {
        let rows = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        let model = fit_pca(&rows, 0.9999).unwrap();
        assert_eq!(model.output_dim(), 2);
    }

    #[test]
    fn fit_matches_covariance_eigendecomposition_oracle() {
        // Fixed data with well-separated spectrum.
        let rows = vec![
            vec![2.1, -0.3, 0.5, 1.2],
            vec![-1.4, 0.8, 0.2, -0.9],
            vec![0.3, 2.2, -1.1, 0.4],
            vec![1.8, -1.5, 0.9, 2.0],
            vec![-0.6, 0.4, -0.7, -1.6],
        ];
        let n = rows.len();
        let m = rows[0].len();
        let model = fit_pca(&rows, 0.99).unwrap();

        // Independent oracle: nalgebra eigendecomposition of the sample
        // covariance of the centered data.
        let mut mean = vec![0.0; m];
        for r in &rows {
            for (a, &x) in mean.iter_mut().zip(r) {
                *a += x / n as f64;
            }
        }
        let centered = DMatrix::from_fn(n, m, |r, c| rows[r][c] - mean[c]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut pairs: Vec<(f64, Vec<f64>)> = (0..m)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().cloned().collect()))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let total: f64 = pairs.iter().map(|p| p.0.max(0.0)).sum();

        for (i, comp) in model.components().iter().enumerate() {
            let (lambda, ref vec) = pairs[i];
            let ratio = lambda / total;
            assert!(
                (model.explained_variance_ratio()[i] - ratio).abs() < 1e-8,
                "ratio {i}"
            );
            // Up to sign.
            let dot: f64 = comp.iter().zip(vec).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-8, "component {i}: |dot| = {}", dot.abs());
        }
        for (a, b) in model.mean().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_rows_do_not_change_components() {
        let rows: Vec<Vec<f64>> = vec![
            vec![1.0, 0.2, -0.5],
            vec![-0.7, 1.3, 0.9],
            vec![0.4, -1.1, 0.3],
            vec![2.0, 0.5, -1.2],
        ];
        let mut doubled = rows.clone();
        doubled.extend(rows.iter().cloned());
        let a = fit_pca(&rows, 0.9999).unwrap();
        let b = fit_pca(&doubled, 0.9999).unwrap();
        assert_eq!(a.output_dim(), b.output_dim());
        for (ca, cb) in a.components().iter().zip(b.components()) {
            for (x, y) in ca.iter().zip(cb) {
                assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn transform_of_mean_is_zero() {
        let rows: Vec<Vec<f64>> = vec![
            vec![0.3, 0.9, -0.2],
            vec![1.2, -0.4, 0.8],
            vec![-0.5, 0.6, 1.4],
        ];
        let model = fit_pca(&rows, 1.0).unwrap();
        let z = pca_transform(&model, model.mean()).unwrap();
        assert!(z.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn identity_model_transforms_to_centered_input() {
        let model = PcaModel::from_parts(
            vec![0.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.6, 0.4],
            1.0,
        )
        .unwrap();
        let out = pca_transform(&model, &[3.0, -7.0]).unwrap();
        assert_eq!(out, vec![3.0, -7.0]);
    }

    #[test]
    fn hand_built_model_matches_direct_multiply() {
        let model = PcaModel::<f64>::from_parts(
            vec![1.0, 2.0, 3.0],
            vec![
                vec![0.6, 0.8, 0.0],
                vec![-0.8, 0.6, 0.0],
            ],
            vec![0.7, 0.3],
            1.0,
        )
        .unwrap();
        let e = [2.0, 1.0, -4.0];
        let out = pca_transform(&model, &e).unwrap();
        // centered = (1, -1, -7); rows dotted by hand.
        assert!((out[0] - (0.6 - 0.8)).abs() < 1e-12);
        assert!((out[1] - (-0.8 - 0.6)).abs() < 1e-12);
    }

    #[test]
    fn transform_is_isometric_at_full_rank() {
        let rows = vec![
            vec![0.1, 0.9, 0.3, 0.5],
            vec![1.1, -0.2, 0.7, -0.6],
            vec![-0.8, 0.4, 1.5, 0.2],
            vec![0.6, 0.6, -0.9, 1.0],
            vec![-0.3, -1.0, 0.2, 0.8],
        ];
        let model = fit_pca(&rows, 1.0).unwrap();
        let t: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| pca_transform(&model, r).unwrap())
            .collect();
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                let d_in: f64 = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let d_out: f64 = t[i]
                    .iter()
                    .zip(&t[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!((d_in - d_out).abs() < 1e-6, "pair ({i},{j})");
            }
        }
    }

    #[test]
    fn zero_variance_data_is_rejected() {
        let rows = vec![vec![1.0, 2.0]; 3];
        assert!(matches!(fit_pca(&rows, 0.9999), Err(Error::ZeroVariance)));
    }

    #[test]
    fn insufficient_data_is_rejected() {
        assert!(matches!(
            fit_pca(&[vec![1.0, 2.0]], 0.9999),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = fit_pca(&[vec![0.0, 1.0], vec![1.0, 0.0]], 1.0).unwrap();
        assert!(pca_transform(&model, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let rows = vec![
            vec![0.123456789012345, 0.987654321098765, 0.5],
            vec![1.0 / 3.0, 2.0 / 7.0, -0.25],
            vec![0.717171717171717, -0.333333333333333, 0.9],
        ];
        let model = fit_pca(&rows, 0.9999).unwrap();
        let json = model.to_json().unwrap();
        let back: PcaModel<f64> = PcaModel::from_json(&json).unwrap();
        assert_eq!(model, back);
    }
}

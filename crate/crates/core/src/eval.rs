//! Classification metrics, PCA projection and Gaussian KL analysis of embeddings.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{Facet, HitLabel};
use crate::error::invalid;
use crate::models::{ArchitectureId, EmbeddingMode};
use crate::{Error, Result};

/// Counts with rows indexed by truth and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new<S: ToString>(labels: &[S]) -> Result<Self> {
        if labels.is_empty() {
            return Err(invalid!("a confusion matrix needs at least one class"));
        }
        let n = labels.len();
        Ok(Self { labels: labels.iter().map(ToString::to_string).collect(), counts: vec![0; n * n] })
    }

    pub fn from_pairs<S: ToString>(labels: &[S], truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(invalid!("{} truths for {} predictions", truth.len(), pred.len()));
        }
        let mut cm = Self::new(labels)?;
        for (&t, &p) in truth.iter().zip(pred) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn from_counts<S: ToString>(labels: &[S], counts: Vec<u64>) -> Result<Self> {
        let n = labels.len();
        if counts.len() != n * n {
            return Err(invalid!("{} counts for {n} classes", counts.len()));
        }
        Ok(Self { labels: labels.iter().map(ToString::to_string).collect(), counts })
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        let n = self.n_classes();
        if truth >= n || pred >= n {
            return Err(invalid!("class index ({truth}, {pred}) outside {n} classes"));
        }
        self.counts[truth * n + pred] += 1;
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes() + pred]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.n_classes())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.n_classes()).map(|p| self.get(class, p)).sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.n_classes()).map(|t| self.get(t, class)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    /// Support-weighted means.
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f: f64,
    pub accuracy: f64,
    pub total: u64,
    /// Set when a single class has support; its precision is then trivially 1
    /// (or undefined) and only recall carries information.
    pub recall_only: bool,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F-measure; zero denominators give 0.
pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let n = cm.n_classes();
    let total = cm.total();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, cm.predicted(c));
            let recall = ratio(tp, cm.support(c));
            let f_measure = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics { label: cm.labels[c].clone(), precision, recall, f_measure, support: cm.support(c) }
        })
        .collect();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
        }
    };
    Metrics {
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        weighted_f: weighted(|m| m.f_measure),
        accuracy: ratio((0..n).map(|c| cm.get(c, c)).sum(), total),
        total,
        recall_only: per_class.iter().filter(|m| m.support > 0).count() == 1,
        per_class,
    }
}

/// Mean and top-two principal directions of a set of vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Two orthonormal rows, largest variance first.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: [f64; 2],
    pub total_variance: f64,
}

pub const PCA_MIN_VECTORS: usize = 3;

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_variance_ratio(&self) -> [f64; 2] {
        let t = self.total_variance;
        if t > 0.0 {
            [self.explained_variance[0] / t, self.explained_variance[1] / t]
        } else {
            [0.0, 0.0]
        }
    }

    pub fn project(&self, v: &[f64]) -> Result<[f64; 2]> {
        if v.len() != self.dim() {
            return Err(invalid!("vector has {} values, basis expects {}", v.len(), self.dim()));
        }
        let mut out = [0.0; 2];
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.iter().zip(v).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum();
        }
        Ok(out)
    }

    pub fn reconstruct(&self, p: [f64; 2]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &a) in self.components.iter().zip(&p) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += a * ci;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.len() != 2 || self.components.iter().any(|c| c.len() != self.mean.len()) {
            return Err(invalid!("PCA basis must hold two components of dimension {}", self.mean.len()));
        }
        Ok(())
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors as columns of a row-major matrix.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(invalid!("matrix has {} entries, expected {}", a.len(), n * n));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * n + j] * m[i * n + j]).sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    if vals.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("eigen-decomposition diverged".into()));
    }
    Ok((vals, v))
}

/// Principal directions of mean-centred data. Each component's
/// largest-magnitude entry is made positive.
pub fn pca_fit<V: AsRef<[f64]>>(vectors: &[V]) -> Result<PcaBasis> {
    if vectors.len() < PCA_MIN_VECTORS {
        return Err(Error::Fit(format!("PCA needs at least {PCA_MIN_VECTORS} vectors, got {}", vectors.len())));
    }
    let d = vectors[0].as_ref().len();
    if d < 2 {
        return Err(Error::Fit("PCA needs vectors of dimension at least 2".into()));
    }
    if vectors.iter().any(|v| v.as_ref().len() != d) {
        return Err(invalid!("PCA vectors differ in dimension"));
    }
    if vectors.iter().flat_map(|v| v.as_ref()).any(|x| !x.is_finite()) {
        return Err(invalid!("PCA vectors must be finite"));
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    let mut centred = vec![0.0; d];
    for v in vectors {
        for ((c, x), m) in centred.iter_mut().zip(v.as_ref()).zip(&mean) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centred[i];
            for j in i..d {
                cov[i * d + j] += ci * centred[j];
            }
        }
    }
    let denom = n - 1.0;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let total_variance = (0..d).map(|i| cov[i * d + i]).sum();
    let (vals, vecs) = symmetric_eigen(&cov, d)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(2);
    let mut explained_variance = [0.0; 2];
    for (k, &idx) in order.iter().take(2).enumerate() {
        let mut c: Vec<f64> = (0..d).map(|r| vecs[r * d + idx]).collect();
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let big = c.iter().copied().fold(0.0, |a: f64, x| if x.abs() > a.abs() { x } else { a });
        let sign = if big < 0.0 { -1.0 } else { 1.0 };
        c.iter_mut().for_each(|x| *x *= sign / norm);
        components.push(c);
        explained_variance[k] = vals[idx].max(0.0);
    }
    Ok(PcaBasis { mean, components, explained_variance, total_variance })
}

pub fn pca_project(basis: &PcaBasis, v: &[f64]) -> Result<[f64; 2]> {
    basis.project(v)
}

pub const GAUSSIAN_RIDGE: f64 = 1e-6;
pub const GAUSSIAN_MIN_POINTS: usize = 3;

/// Sample mean and ridge-regularised sample covariance of 2-D points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub n: usize,
}

impl GaussianFit {
    pub fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }

    /// Eigenvalues of the covariance, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let [[a, b], [_, d]] = self.cov;
        let tr = a + d;
        let disc = ((a - d) * (a - d) / 4.0 + b * b).sqrt();
        [tr / 2.0 - disc, tr / 2.0 + disc]
    }

    fn inverse(&self) -> Result<[[f64; 2]; 2]> {
        let det = self.det();
        if !(det > 0.0 && det.is_finite()) {
            return Err(Error::Numeric(format!("covariance is singular (det = {det})")));
        }
        let [[a, b], [c, d]] = self.cov;
        Ok([[d / det, -b / det], [-c / det, a / det]])
    }
}

pub fn fit_gaussian(points: &[[f64; 2]]) -> Result<GaussianFit> {
    if points.len() < GAUSSIAN_MIN_POINTS {
        return Err(Error::Fit(format!(
            "a Gaussian fit needs at least {GAUSSIAN_MIN_POINTS} points, got {}",
            points.len()
        )));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid!("embedding points must be finite"));
    }
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    for p in points {
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut cov = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for (i, row) in cov.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= n - 1.0;
        }
        row[i] += GAUSSIAN_RIDGE;
    }
    Ok(GaussianFit { mean, cov, n: points.len() })
}

/// Closed-form KL(a ‖ b) between two 2-D Gaussians.
pub fn kl_gaussian(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    let bi = b.inverse()?;
    let det_a = a.det();
    if !(det_a > 0.0 && det_a.is_finite()) {
        return Err(Error::Numeric(format!("covariance is singular (det = {det_a})")));
    }
    let mut trace = 0.0;
    for i in 0..2 {
        for k in 0..2 {
            trace += bi[i][k] * a.cov[k][i];
        }
    }
    let d = [b.mean[0] - a.mean[0], b.mean[1] - a.mean[1]];
    let quad = d[0] * (bi[0][0] * d[0] + bi[0][1] * d[1]) + d[1] * (bi[1][0] * d[0] + bi[1][1] * d[1]);
    let kl = 0.5 * (trace + quad - 2.0 + (b.det() / det_a).ln());
    if !kl.is_finite() {
        return Err(Error::Numeric("KL divergence is not finite".into()));
    }
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub xy: [f64; 2],
    pub label: HitLabel,
}

/// Labeled 2-D embeddings produced by one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub source: ArchitectureId,
    pub mode: EmbeddingMode,
    points: Vec<EmbeddingPoint>,
}

impl EmbeddingSet {
    pub fn new(source: ArchitectureId, mode: EmbeddingMode) -> Self {
        Self { source, mode, points: Vec::new() }
    }

    pub fn push(&mut self, xy: [f64; 2], label: HitLabel) -> Result<()> {
        if !(xy[0].is_finite() && xy[1].is_finite()) {
            return Err(Error::Numeric(format!("embedding point ({}, {}) is not finite", xy[0], xy[1])));
        }
        self.points.push(EmbeddingPoint { xy, label });
        Ok(())
    }

    pub fn points(&self) -> &[EmbeddingPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Subset whose labels satisfy `keep`.
    pub fn filter(&self, keep: impl Fn(&HitLabel) -> bool) -> Self {
        Self { source: self.source, mode: self.mode, points: self.points.iter().copied().filter(|p| keep(&p.label)).collect() }
    }
}

/// Directed KL divergences between the per-value Gaussian fits of one facet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlMatrix {
    pub facet: Facet,
    /// Facet values present in the set, in taxonomy order.
    pub labels: Vec<String>,
    pub counts: Vec<usize>,
    /// Values with too few points to fit; their rows and columns are `None`.
    pub missing: Vec<String>,
    /// `matrix[i][j] = KL(fit_i ‖ fit_j)`.
    pub matrix: Vec<Vec<Option<f64>>>,
}

impl KlMatrix {
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, from: &str, to: &str) -> Option<f64> {
        self.matrix[self.index_of(from)?][self.index_of(to)?]
    }

    pub fn max_off_diagonal(&self) -> Option<f64> {
        self.matrix
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().filter(move |(j, _)| *j != i).filter_map(|(_, v)| *v))
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    }
}

pub fn kl_matrix(emb: &EmbeddingSet, facet: Facet) -> Result<KlMatrix> {
    let names = facet.values();
    let mut groups: Vec<Vec<[f64; 2]>> = vec![Vec::new(); names.len()];
    for p in &emb.points {
        groups[facet.value_index(&p.label)].push(p.xy);
    }
    let present: Vec<usize> = (0..names.len()).filter(|&i| !groups[i].is_empty()).collect();
    let fits: Vec<Option<GaussianFit>> = present
        .iter()
        .map(|&i| if groups[i].len() >= GAUSSIAN_MIN_POINTS { fit_gaussian(&groups[i]).map(Some) } else { Ok(None) })
        .collect::<Result<_>>()?;
    let mut matrix = vec![vec![None; present.len()]; present.len()];
    for (i, fi) in fits.iter().enumerate() {
        for (j, fj) in fits.iter().enumerate() {
            if let (Some(a), Some(b)) = (fi, fj) {
                matrix[i][j] = Some(if i == j { 0.0 } else { kl_gaussian(a, b)? });
            }
        }
    }
    Ok(KlMatrix {
        facet,
        labels: present.iter().map(|&i| names[i].to_string()).collect(),
        counts: present.iter().map(|&i| groups[i].len()).collect(),
        missing: present.iter().zip(&fits).filter(|(_, f)| f.is_none()).map(|(&i, _)| names[i].to_string()).collect(),
        matrix,
    })
}

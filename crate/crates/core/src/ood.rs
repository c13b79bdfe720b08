//! Latent-density confidence scoring for out-of-distribution terrain.
//!
//! Training features are projected onto their leading principal components
//! and a full-covariance Gaussian mixture is fitted there by EM. A query
//! feature's log-density is normalized by the extreme log-densities seen in
//! training, giving a score that is 1 at the most typical training feature,
//! 0 at the least typical one, and negative beyond.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::grid::{BoolGrid, GridGeometry};
use crate::seed;
use crate::{check_version, Error, Result, SCHEMA_VERSION};

/// Diagonal loading added to every fitted covariance.
pub const COVARIANCE_REGULARIZATION: f64 = 1e-6;
pub const EM_TOLERANCE: f64 = 1e-6;
pub const EM_MAX_ITERATIONS: usize = 200;
pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERATIONS: usize = 100;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Principal-component projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    mean: Vec<f64>,
    /// Row `i` is the `i`-th principal direction (unit norm).
    components: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl Pca {
    /// Eigendecomposition of the sample covariance, keeping the `n` leading
    /// directions. Each direction's largest-magnitude entry is made positive.
    pub fn fit(data: &[Vec<f64>], n: usize) -> Result<Self> {
        let k = data.len();
        if k < 2 {
            return Err(Error::InsufficientData { have: k, need: 2 });
        }
        let d = data[0].len();
        if let Some(bad) = data.iter().find(|x| x.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        if n == 0 || n > d {
            return Err(Error::Config(format!(
                "cannot keep {n} principal components of {d}-dimensional features"
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("features must be finite".into()));
        }
        let mut mean = vec![0.0; d];
        for x in data {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= k as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for x in data {
            for i in 0..d {
                let di = x[i] - mean[i];
                for j in i..d {
                    cov[(i, j)] += di * (x[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (k as f64 - 1.0);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut components = Vec::with_capacity(n);
        let mut variances = Vec::with_capacity(n);
        for &idx in order.iter().take(n) {
            let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            let pivot = v
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(1.0);
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(v);
            variances.push(eig.eigenvalues[idx].max(0.0));
        }
        Ok(Self {
            mean,
            components,
            variances,
        })
    }

    pub fn from_parts(mean: Vec<f64>, components: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if components.is_empty() || components.iter().any(|c| c.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: components.first().map_or(0, Vec::len),
            });
        }
        let variances = vec![f64::NAN; components.len()];
        Ok(Self {
            mean,
            components,
            variances,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Variance captured by each kept direction (NaN when built from parts).
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.components.iter().map(|c| dot(c, &centered)).collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, zi) in self.components.iter().zip(z) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += zi * ci;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Component {
    weight: f64,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    /// Lower Cholesky factor of `cov`, row-major.
    chol: Vec<f64>,
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: Vec<f64>, cov: Vec<Vec<f64>>, index: usize) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.len(),
            });
        }
        if cov.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateCovariance(index));
        }
        for i in 0..d {
            for j in 0..i {
                if (cov[i][j] - cov[j][i]).abs() > 1e-9 * (1.0 + cov[i][j].abs()) {
                    return Err(Error::DegenerateCovariance(index));
                }
            }
        }
        let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        let l = m
            .cholesky()
            .ok_or(Error::DegenerateCovariance(index))?
            .l();
        let mut chol = vec![0.0; d * d];
        let mut log_det_half = 0.0;
        for i in 0..d {
            for j in 0..=i {
                chol[i * d + j] = l[(i, j)];
            }
            let diag = l[(i, i)];
            if !(diag > 0.0 && diag.is_finite()) {
                return Err(Error::DegenerateCovariance(index));
            }
            log_det_half += diag.ln();
        }
        let log_norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - log_det_half;
        Ok(Self {
            weight,
            mean,
            cov,
            chol,
            log_norm,
        })
    }

    /// `log N(z; mean, cov)` by forward substitution on the Cholesky factor.
    fn log_pdf(&self, z: &[f64]) -> f64 {
        let d = self.mean.len();
        let mut y = [0.0f64; 8];
        let mut heap;
        let y: &mut [f64] = if d <= 8 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..d {
            let mut acc = z[i] - self.mean[i];
            for j in 0..i {
                acc -= self.chol[i * d + j] * y[j];
            }
            y[i] = acc / self.chol[i * d + i];
            quad += y[i] * y[i];
        }
        self.log_norm - 0.5 * quad
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Full-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<Component>,
}

/// Trace of the EM run that produced a fitted mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    /// Total training log-likelihood before each M-step of the kept run.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restart: usize,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len() {
            return Err(Error::Config("mixture parts must have equal, nonzero length".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config("mixture weights must be positive and sum to 1".into()));
        }
        let d = means[0].len();
        let components = weights
            .into_iter()
            .zip(means)
            .zip(covariances)
            .enumerate()
            .map(|(i, ((w, m), c))| {
                if m.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: m.len(),
                    });
                }
                Component::new(w, m, c, i)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    pub fn covariances(&self) -> Vec<Vec<Vec<f64>>> {
        self.components.iter().map(|c| c.cov.clone()).collect()
    }

    /// `log sum_k w_k N(z; mu_k, Sigma_k)`, stabilized by log-sum-exp.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_pdf(z))
            .collect();
        log_sum_exp(&terms)
    }

    /// EM from k-means initializations (`KMEANS_RESTARTS` seeded restarts),
    /// keeping the run with the highest final log-likelihood.
    pub fn fit(points: &[Vec<f64>], n_components: usize, seed: u64) -> Result<(Self, EmReport)> {
        if n_components == 0 {
            return Err(Error::Config("n_components must be >= 1".into()));
        }
        if points.len() < n_components {
            return Err(Error::InsufficientData {
                have: points.len(),
                need: n_components,
            });
        }
        let mut best: Option<(Self, EmReport)> = None;
        let mut last_err = None;
        for restart in 0..KMEANS_RESTARTS {
            let mut rng = seed::stream(seed, &[restart as u64]);
            let labels = kmeans(points, n_components, &mut rng);
            match run_em(points, n_components, &labels) {
                Ok((gmm, mut report)) => {
                    report.restart = restart;
                    let score = *report.log_likelihood.last().expect("at least one E-step");
                    let better = best.as_ref().is_none_or(|(_, r)| {
                        score > *r.log_likelihood.last().expect("nonempty")
                    });
                    if better {
                        best = Some((gmm, report));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        best.ok_or_else(|| last_err.unwrap_or(Error::DegenerateCovariance(0)))
    }
}

/// Lloyd's algorithm from a k-means++ seeding; returns cluster labels.
fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut seed::Rng) -> Vec<usize> {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().expect("just pushed")));
        }
    }

    let dim = points[0].len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        for (label, p) in labels.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .expect("k >= 1");
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[labels[a]])
                            .total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                    })
                    .expect("n >= 1");
                centers[c] = points[far].clone();
            }
        }
    }
    labels
}

fn m_step(points: &[Vec<f64>], resp: &[Vec<f64>]) -> Result<GaussianMixture> {
    let n = points.len();
    let k = resp[0].len();
    let d = points[0].len();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        // a component that owns no points keeps a sliver of every point so
        // duplicate-heavy data still yields a valid (if redundant) mixture
        let floor = 1e-12;
        let raw: f64 = resp.iter().map(|r| r[c]).sum();
        let r_of = |r: &Vec<f64>| if raw > floor { r[c] } else { floor };
        let nk: f64 = resp.iter().map(r_of).sum();
        let mut mean = vec![0.0; d];
        for (p, r) in points.iter().zip(resp) {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += r_of(r) * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut cov = vec![vec![0.0; d]; d];
        for (p, r) in points.iter().zip(resp) {
            for i in 0..d {
                let di = p[i] - mean[i];
                for j in 0..=i {
                    cov[i][j] += r_of(r) * di * (p[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov[i][j] / nk;
                cov[i][j] = v;
                cov[j][i] = v;
            }
            cov[i][i] += COVARIANCE_REGULARIZATION;
        }
        weights.push(nk);
        means.push(mean);
        covs.push(cov);
    }
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0 && n > 0);
    let components = weights
        .into_iter()
        .zip(means)
        .zip(covs)
        .enumerate()
        .map(|(i, ((w, m), c))| Component::new(w / total, m, c, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(GaussianMixture { components })
}

/// Responsibilities and total log-likelihood under `gmm`.
fn e_step(points: &[Vec<f64>], gmm: &GaussianMixture, resp: &mut [Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut terms = vec![0.0; gmm.len()];
    for (p, r) in points.iter().zip(resp.iter_mut()) {
        for (t, c) in terms.iter_mut().zip(&gmm.components) {
            *t = c.weight.ln() + c.log_pdf(p);
        }
        let lse = log_sum_exp(&terms);
        total += lse;
        for (ri, t) in r.iter_mut().zip(&terms) {
            *ri = (t - lse).exp();
        }
    }
    total
}

fn run_em(points: &[Vec<f64>], k: usize, labels: &[usize]) -> Result<(GaussianMixture, EmReport)> {
    let mut resp: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| (0..k).map(|c| if c == l { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut gmm = m_step(points, &resp)?;
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut previous: Option<GaussianMixture> = None;
    for _ in 0..EM_MAX_ITERATIONS {
        let ll = e_step(points, &gmm, &mut resp);
        if let Some(&prev) = history.last() {
            if ll - prev < EM_TOLERANCE {
                converged = true;
                if ll < prev {
                    // diagonal loading can cost a hair of likelihood at the
                    // fixed point; keep the better parameters
                    gmm = previous.take().expect("set alongside history");
                } else {
                    history.push(ll);
                }
                break;
            }
        }
        history.push(ll);
        let next = m_step(points, &resp)?;
        previous = Some(std::mem::replace(&mut gmm, next));
    }
    let iterations = history.len();
    Ok((
        gmm,
        EmReport {
            log_likelihood: history,
            iterations,
            converged,
            restart: 0,
        },
    ))
}

/// Per-cell feature vectors on a map grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    geometry: GridGeometry,
    dim: usize,
    known: Vec<bool>,
    features: Vec<Vec<f64>>,
}

/// JSON layout of a [`FeatureMap`]: the map geometry fields plus `dim` and
/// row-major per-cell feature arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMapDocument {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known: Option<Vec<bool>>,
    pub features: Vec<Vec<f64>>,
}

impl FeatureMap {
    pub fn new(geometry: GridGeometry, features: Vec<Vec<f64>>, known: Vec<bool>) -> Result<Self> {
        geometry.validate()?;
        if features.len() != geometry.len() || known.len() != geometry.len() {
            return Err(Error::Geometry(format!(
                "expected {} cells, got {} features and {} known flags",
                geometry.len(),
                features.len(),
                known.len()
            )));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::Config("feature dimension must be >= 1".into()));
        }
        if let Some(f) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: f.len(),
            });
        }
        Ok(Self {
            geometry,
            dim,
            known,
            features,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, index: usize) -> &[f64] {
        &self.features[index]
    }

    pub fn is_known(&self, index: usize) -> bool {
        self.known[index]
    }

    pub fn set_unknown(&mut self, index: usize) {
        self.known[index] = false;
    }

    /// Features of the known cells, in row-major order.
    pub fn known_features(&self) -> Vec<Vec<f64>> {
        self.features
            .iter()
            .zip(&self.known)
            .filter(|(_, &k)| k)
            .map(|(f, _)| f.clone())
            .collect()
    }

    pub fn to_document(&self) -> FeatureMapDocument {
        FeatureMapDocument {
            version: SCHEMA_VERSION,
            height: self.geometry.height,
            width: self.geometry.width,
            cell_size: self.geometry.cell_size,
            origin: self.geometry.origin,
            dim: self.dim,
            known: Some(self.known.clone()),
            features: self.features.clone(),
        }
    }

    pub fn from_document(doc: FeatureMapDocument) -> Result<Self> {
        check_version(doc.version, "feature map")?;
        let geometry = GridGeometry::new(doc.height, doc.width, doc.cell_size, doc.origin)?;
        let known = doc.known.unwrap_or_else(|| vec![true; geometry.len()]);
        let map = Self::new(geometry, doc.features, known)?;
        if map.dim != doc.dim {
            return Err(Error::DimensionMismatch {
                expected: doc.dim,
                found: map.dim,
            });
        }
        Ok(map)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// PCA projection, mixture density, and training log-density bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct OodDetector {
    pca: Pca,
    gmm: GaussianMixture,
    p_max: f64,
    p_min: f64,
}

/// Serialized detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorDocument {
    pub version: u32,
    pub pca_mean: Vec<f64>,
    pub pca_components: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub p_max: f64,
    pub p_min: f64,
}

impl OodDetector {
    /// Fits the projection and mixture on `features`, then records the max and
    /// min training log-density.
    pub fn fit(features: &[Vec<f64>], n_components: usize, n_pca: usize, seed: u64) -> Result<Self> {
        Self::fit_with_report(features, n_components, n_pca, seed).map(|(d, _)| d)
    }

    pub fn fit_with_report(
        features: &[Vec<f64>],
        n_components: usize,
        n_pca: usize,
        seed: u64,
    ) -> Result<(Self, EmReport)> {
        let need = 10 * n_components.max(1);
        if features.len() < need {
            return Err(Error::InsufficientData {
                have: features.len(),
                need,
            });
        }
        let pca = Pca::fit(features, n_pca)?;
        let projected: Vec<Vec<f64>> = features.iter().map(|f| pca.project(f)).collect();
        let (gmm, report) = GaussianMixture::fit(&projected, n_components, seed)?;
        let (p_min, p_max) = projected
            .iter()
            .map(|z| gmm.log_density(z))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        Ok((
            Self {
                pca,
                gmm,
                p_max,
                p_min,
            },
            report,
        ))
    }

    pub fn from_parts(pca: Pca, gmm: GaussianMixture, p_max: f64, p_min: f64) -> Result<Self> {
        if pca.output_dim() != gmm.dim() {
            return Err(Error::DimensionMismatch {
                expected: pca.output_dim(),
                found: gmm.dim(),
            });
        }
        if !(p_max >= p_min) {
            return Err(Error::Config("p_max must be >= p_min".into()));
        }
        Ok(Self {
            pca,
            gmm,
            p_max,
            p_min,
        })
    }

    pub fn pca(&self) -> &Pca {
        &self.pca
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.gmm
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn feature_dim(&self) -> usize {
        self.pca.input_dim()
    }

    pub fn check_dim(&self, found: usize) -> Result<()> {
        if found == self.feature_dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                found,
            })
        }
    }

    /// Mixture log-density of the projected feature.
    pub fn log_density(&self, feature: &[f64]) -> f64 {
        assert_eq!(feature.len(), self.feature_dim(), "feature dimension mismatch");
        self.gmm.log_density(&self.pca.project(feature))
    }

    /// `(log p(o) - p_min) / (p_max - p_min)`; unbounded below.
    pub fn confidence(&self, feature: &[f64]) -> Result<f64> {
        self.check_dim(feature.len())?;
        let span = self.p_max - self.p_min;
        if !(span > 0.0) {
            return Err(Error::DegenerateTrainingDensity);
        }
        Ok((self.log_density(feature) - self.p_min) / span)
    }

    /// Per-cell confidence; `None` for unknown cells.
    pub fn confidence_grid(&self, map: &FeatureMap) -> Result<Vec<Option<f64>>> {
        self.check_dim(map.dim())?;
        (0..map.geometry().len())
            .map(|i| {
                if map.is_known(i) {
                    self.confidence(map.feature(i)).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect()
    }

    /// A cell is OOD when unknown or when its confidence is below `g_thres`.
    pub fn ood_mask(&self, map: &FeatureMap, g_thres: f64) -> Result<BoolGrid> {
        let scores = self.confidence_grid(map)?;
        Ok(mask_from_scores(map.geometry(), &scores, g_thres))
    }

    pub fn to_document(&self) -> DetectorDocument {
        DetectorDocument {
            version: SCHEMA_VERSION,
            pca_mean: self.pca.mean.clone(),
            pca_components: self.pca.components.clone(),
            weights: self.gmm.weights(),
            means: self.gmm.means(),
            covariances: self.gmm.covariances(),
            p_max: self.p_max,
            p_min: self.p_min,
        }
    }

    pub fn from_document(doc: DetectorDocument) -> Result<Self> {
        check_version(doc.version, "detector")?;
        let pca = Pca::from_parts(doc.pca_mean, doc.pca_components)?;
        let gmm = GaussianMixture::new(doc.weights, doc.means, doc.covariances)?;
        Self::from_parts(pca, gmm, doc.p_max, doc.p_min)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

pub fn mask_from_scores(geometry: &GridGeometry, scores: &[Option<f64>], g_thres: f64) -> BoolGrid {
    BoolGrid {
        height: geometry.height,
        width: geometry.width,
        cells: scores
            .iter()
            .map(|s| s.is_none_or(|g| g < g_thres))
            .collect(),
    }
}

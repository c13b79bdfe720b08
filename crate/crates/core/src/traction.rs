//! Categorical traction distributions, tail risk measures, and traction maps.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::GridGeometry;
use crate::seed::Rng;
use crate::{check_version, Error, Result, SCHEMA_VERSION};

/// Default number of uniform bins over `[0, 1]`.
pub const DEFAULT_BIN_COUNT: usize = 20;

const SUM_TOLERANCE: f64 = 1e-9;

/// Probability mass over uniform bins on `[0, 1]`; bin `i` is represented by
/// its center `(i + 0.5) / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CategoricalDistribution {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for CategoricalDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<CategoricalDistribution> for Vec<f64> {
    fn from(d: CategoricalDistribution) -> Self {
        d.probs
    }
}

/// Bin holding `value`; values on a boundary go to the higher bin and 1.0
/// lands in the last bin.
#[inline]
pub fn bin_index(value: f64, bin_count: usize) -> usize {
    ((value * bin_count as f64).floor() as usize).min(bin_count - 1)
}

#[inline]
pub fn bin_center(index: usize, bin_count: usize) -> f64 {
    (index as f64 + 0.5) / bin_count as f64
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidRiskLevel(alpha))
    }
}

impl CategoricalDistribution {
    /// Validates that `probs` is a probability vector (sum within 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("bin_count must be >= 1".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "negative or non-finite probability {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be nonnegative with positive finite sum".into(),
            ));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn point_mass(value: f64, bin_count: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange(value));
        }
        if bin_count == 0 {
            return Err(Error::InvalidDistribution("bin_count must be >= 1".into()));
        }
        let mut probs = vec![0.0; bin_count];
        probs[bin_index(value, bin_count)] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(bin_count: usize) -> Self {
        assert!(bin_count > 0, "bin_count must be >= 1");
        Self {
            probs: vec![1.0 / bin_count as f64; bin_count],
        }
    }

    /// Normalized histogram of `samples` over `bin_count` uniform bins.
    pub fn fit(samples: &[f64], bin_count: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::NoSamples);
        }
        if bin_count == 0 {
            return Err(Error::InvalidDistribution("bin_count must be >= 1".into()));
        }
        let mut counts = vec![0usize; bin_count];
        for &s in samples {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::OutOfRange(s));
            }
            counts[bin_index(s, bin_count)] += 1;
        }
        let n = samples.len() as f64;
        Ok(Self {
            probs: counts.into_iter().map(|c| c as f64 / n).collect(),
        })
    }

    pub fn bin_count(&self) -> usize {
        self.probs.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn center(&self, index: usize) -> f64 {
        bin_center(index, self.probs.len())
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.probs.len()).map(|i| self.center(i))
    }

    pub fn mean(&self) -> f64 {
        self.centers().zip(&self.probs).map(|(z, p)| z * p).sum()
    }

    pub fn is_point_mass(&self) -> bool {
        self.probs.iter().filter(|&&p| p > 0.0).count() == 1
    }

    /// Left value at risk: the smallest center whose cumulative mass exceeds
    /// `alpha` (the largest center when none does).
    pub fn left_var(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        let mut cum = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            cum += p;
            if cum > alpha {
                return Ok(self.center(i));
            }
        }
        Ok(self.center(self.last_supported()))
    }

    /// Mean of the lowest `alpha` fraction of the mass.
    ///
    /// Bins are consumed in ascending order and the boundary bin contributes
    /// only the fraction needed to reach exactly `alpha`, which makes this the
    /// exact integral of the lower quantile function over `(0, alpha]`.
    pub fn left_cvar(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(tail_mean(
            self.probs.iter().enumerate().map(|(i, &p)| (self.center(i), p)),
            alpha,
        ))
    }

    /// Mean of the highest `alpha` fraction of the mass.
    pub fn right_cvar(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(tail_mean(
            self.probs
                .iter()
                .enumerate()
                .rev()
                .map(|(i, &p)| (self.center(i), p)),
            alpha,
        ))
    }

    fn last_supported(&self) -> usize {
        self.probs
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.probs.len() - 1)
    }
}

fn tail_mean(bins: impl Iterator<Item = (f64, f64)>, alpha: f64) -> f64 {
    let mut remaining = alpha;
    let mut acc = 0.0;
    let mut last = 0.0;
    for (z, p) in bins {
        if p <= 0.0 {
            continue;
        }
        last = z;
        let take = p.min(remaining);
        acc += take * z;
        remaining -= take;
        if remaining <= 0.0 {
            return acc / alpha;
        }
    }
    // Rounding left a sliver of alpha uncovered; it belongs to the last bin.
    (acc + remaining.max(0.0) * last) / alpha
}

/// Mean of the largest `ceil(alpha * M)` values.
pub fn right_cvar_empirical(values: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if values.is_empty() {
        return Err(Error::EmptyValues);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let k = tail_count(values.len(), alpha);
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// `ceil(alpha * m)` clamped to `[1, m]`, tolerant of `alpha * m` landing a
/// rounding error above an integer.
pub(crate) fn tail_count(m: usize, alpha: f64) -> usize {
    let raw = alpha * m as f64;
    let k = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    k.clamp(1, m)
}

/// Linear and angular traction factors, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Traction {
    pub linear: f64,
    pub angular: f64,
}

impl Traction {
    pub const ZERO: Traction = Traction {
        linear: 0.0,
        angular: 0.0,
    };
    pub const FULL: Traction = Traction {
        linear: 1.0,
        angular: 1.0,
    };

    pub fn new(linear: f64, angular: f64) -> Self {
        Self { linear, angular }
    }
}

/// Per-cell linear and angular traction distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TractionDistributionMap {
    geometry: GridGeometry,
    bin_count: usize,
    linear: Vec<CategoricalDistribution>,
    angular: Vec<CategoricalDistribution>,
    known: Vec<bool>,
}

impl TractionDistributionMap {
    pub fn new(
        geometry: GridGeometry,
        linear: Vec<CategoricalDistribution>,
        angular: Vec<CategoricalDistribution>,
        known: Vec<bool>,
    ) -> Result<Self> {
        geometry.validate()?;
        let n = geometry.len();
        if linear.len() != n || angular.len() != n || known.len() != n {
            return Err(Error::Geometry(format!(
                "expected {n} cells, got linear {}, angular {}, known {}",
                linear.len(),
                angular.len(),
                known.len()
            )));
        }
        let bin_count = linear[0].bin_count();
        if linear
            .iter()
            .chain(&angular)
            .any(|d| d.bin_count() != bin_count)
        {
            return Err(Error::InvalidDistribution(
                "all cells must share one bin count".into(),
            ));
        }
        Ok(Self {
            geometry,
            bin_count,
            linear,
            angular,
            known,
        })
    }

    /// Every cell known and holding the same pair of distributions.
    pub fn filled(
        geometry: GridGeometry,
        linear: CategoricalDistribution,
        angular: CategoricalDistribution,
    ) -> Result<Self> {
        let n = geometry.len();
        Self::new(
            geometry,
            vec![linear; n],
            vec![angular; n],
            vec![true; n],
        )
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn linear(&self, index: usize) -> &CategoricalDistribution {
        &self.linear[index]
    }

    pub fn angular(&self, index: usize) -> &CategoricalDistribution {
        &self.angular[index]
    }

    pub fn is_known(&self, index: usize) -> bool {
        self.known[index]
    }

    pub fn known_mask(&self) -> &[bool] {
        &self.known
    }

    pub fn set_cell(
        &mut self,
        index: usize,
        linear: CategoricalDistribution,
        angular: CategoricalDistribution,
    ) -> Result<()> {
        if linear.bin_count() != self.bin_count || angular.bin_count() != self.bin_count {
            return Err(Error::InvalidDistribution("bin count mismatch".into()));
        }
        self.linear[index] = linear;
        self.angular[index] = angular;
        self.known[index] = true;
        Ok(())
    }

    pub fn set_unknown(&mut self, index: usize) {
        self.known[index] = false;
    }

    /// Per-cell `(left_cvar(linear), left_cvar(angular))`; unknown cells get
    /// zero traction. `alpha = 1` yields the per-cell mean map.
    pub fn cvar_map(&self, alpha: f64) -> Result<TractionRealizationMap> {
        check_alpha(alpha)?;
        let cells = (0..self.geometry.len())
            .map(|i| {
                if self.known[i] {
                    Ok(Traction::new(
                        self.linear[i].left_cvar(alpha)?,
                        self.angular[i].left_cvar(alpha)?,
                    ))
                } else {
                    Ok(Traction::ZERO)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TractionRealizationMap {
            geometry: self.geometry,
            cells,
        })
    }

    pub fn mean_map(&self) -> TractionRealizationMap {
        self.cvar_map(1.0).expect("alpha = 1 is valid")
    }

    /// No-slip world model: full traction on known cells, zero elsewhere.
    pub fn nominal_map(&self) -> TractionRealizationMap {
        TractionRealizationMap {
            geometry: self.geometry,
            cells: self
                .known
                .iter()
                .map(|&k| if k { Traction::FULL } else { Traction::ZERO })
                .collect(),
        }
    }

    pub fn sampler(&self) -> MapSampler {
        MapSampler::new(self)
    }

    pub fn to_document(&self) -> MapDocument {
        MapDocument {
            version: SCHEMA_VERSION,
            height: self.geometry.height,
            width: self.geometry.width,
            cell_size: self.geometry.cell_size,
            origin: self.geometry.origin,
            bin_count: self.bin_count,
            known: Some(self.known.clone()),
            linear: self.linear.clone(),
            angular: self.angular.clone(),
        }
    }

    pub fn from_document(doc: MapDocument) -> Result<Self> {
        check_version(doc.version, "traction map")?;
        let geometry = GridGeometry::new(doc.height, doc.width, doc.cell_size, doc.origin)?;
        let known = doc.known.unwrap_or_else(|| vec![true; geometry.len()]);
        let map = Self::new(geometry, doc.linear, doc.angular, known)?;
        if map.bin_count != doc.bin_count {
            return Err(Error::InvalidDistribution(format!(
                "bin_count {} does not match probability vectors of length {}",
                doc.bin_count, map.bin_count
            )));
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

/// JSON layout of a [`TractionDistributionMap`]: geometry, bin count, and
/// row-major per-cell probability vectors. `known` defaults to all-true.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapDocument {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub bin_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known: Option<Vec<bool>>,
    pub linear: Vec<CategoricalDistribution>,
    pub angular: Vec<CategoricalDistribution>,
}

/// Concrete per-cell traction values: one sampled world, a CVaR-reduced
/// model, or the ground truth of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractionRealizationMap {
    geometry: GridGeometry,
    cells: Vec<Traction>,
}

impl TractionRealizationMap {
    pub fn new(geometry: GridGeometry, cells: Vec<Traction>) -> Result<Self> {
        geometry.validate()?;
        if cells.len() != geometry.len() {
            return Err(Error::Geometry(format!(
                "expected {} cells, got {}",
                geometry.len(),
                cells.len()
            )));
        }
        if let Some(t) = cells.iter().find(|t| {
            !((0.0..=1.0).contains(&t.linear) && (0.0..=1.0).contains(&t.angular))
        }) {
            return Err(Error::OutOfRange(if (0.0..=1.0).contains(&t.linear) {
                t.angular
            } else {
                t.linear
            }));
        }
        Ok(Self { geometry, cells })
    }

    pub fn uniform(geometry: GridGeometry, traction: Traction) -> Result<Self> {
        Self::new(geometry, vec![traction; geometry.len()])
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn cells(&self) -> &[Traction] {
        &self.cells
    }

    pub fn get(&self, index: usize) -> Traction {
        self.cells[index]
    }

    pub fn set(&mut self, index: usize, traction: Traction) {
        assert!(
            (0.0..=1.0).contains(&traction.linear) && (0.0..=1.0).contains(&traction.angular),
            "traction out of range"
        );
        self.cells[index] = traction;
    }

    /// Traction at a world position; zero outside the grid.
    #[inline]
    pub fn traction_at(&self, x: f64, y: f64) -> Traction {
        match self.geometry.index_of(x, y) {
            Some(i) => self.cells[i],
            None => Traction::ZERO,
        }
    }
}

/// Cached cumulative distributions for repeated map sampling.
#[derive(Debug, Clone)]
pub struct MapSampler {
    geometry: GridGeometry,
    bin_count: usize,
    known: Vec<bool>,
    cdf_linear: Vec<f64>,
    cdf_angular: Vec<f64>,
}

fn cumulative(dists: &[CategoricalDistribution]) -> Vec<f64> {
    let mut out = Vec::with_capacity(dists.len() * dists.first().map_or(0, |d| d.bin_count()));
    for d in dists {
        let mut acc = 0.0;
        for p in d.probabilities() {
            acc += p;
            out.push(acc);
        }
    }
    out
}

#[inline]
fn draw_bin(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl MapSampler {
    pub fn new(map: &TractionDistributionMap) -> Self {
        Self {
            geometry: map.geometry,
            bin_count: map.bin_count,
            known: map.known.clone(),
            cdf_linear: cumulative(&map.linear),
            cdf_angular: cumulative(&map.angular),
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    /// Draws one bin center per channel for every known cell, independently.
    pub fn sample(&self, rng: &mut Rng) -> TractionRealizationMap {
        let n = self.bin_count;
        let cells = (0..self.geometry.len())
            .map(|i| {
                if !self.known[i] {
                    return Traction::ZERO;
                }
                let span = i * n..(i + 1) * n;
                let lin = draw_bin(&self.cdf_linear[span.clone()], rng.random::<f64>());
                let ang = draw_bin(&self.cdf_angular[span], rng.random::<f64>());
                Traction::new(bin_center(lin, n), bin_center(ang, n))
            })
            .collect();
        TractionRealizationMap {
            geometry: self.geometry,
            cells,
        }
    }

    /// `count` maps, map `m` drawn from the stream `(seed, m)`.
    pub fn sample_many(&self, seed: u64, count: usize) -> Vec<TractionRealizationMap> {
        (0..count)
            .into_par_iter()
            .map(|m| self.sample(&mut crate::seed::stream(seed, &[m as u64])))
            .collect()
    }
}

/// One independent draw of every known cell.
pub fn sample_realization(map: &TractionDistributionMap, rng: &mut Rng) -> TractionRealizationMap {
    MapSampler::new(map).sample(rng)
}

//! Seeded semantic arenas: dirt with vegetation patches clustered toward the
//! middle, optionally with an unfamiliar ("alien") terrain block.

use rand_distr::{Distribution, Normal as NormalSampler, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dynamics::State;
use crate::grid::GridGeometry;
use crate::ood::FeatureMap;
use crate::seed;
use crate::traction::{bin_index, CategoricalDistribution, TractionDistributionMap};
use crate::{Error, Result};

const PATCH_TAG: u64 = 0x7061_7463;
const FEATURE_TAG: u64 = 0x6665_6174;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terrain {
    Dirt,
    Vegetation,
    Alien,
}

impl Terrain {
    pub fn name(self) -> &'static str {
        match self {
            Terrain::Dirt => "dirt",
            Terrain::Vegetation => "vegetation",
            Terrain::Alien => "alien",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Mixture of normals restricted to `[0, 1]` and binned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TractionLaw {
    pub components: Vec<NormalComponent>,
}

impl TractionLaw {
    pub fn normal(mean: f64, std: f64) -> Self {
        Self {
            components: vec![NormalComponent {
                weight: 1.0,
                mean,
                std,
            }],
        }
    }

    pub fn bimodal(low: f64, high: f64, std: f64) -> Self {
        Self {
            components: vec![
                NormalComponent {
                    weight: 0.5,
                    mean: low,
                    std,
                },
                NormalComponent {
                    weight: 0.5,
                    mean: high,
                    std,
                },
            ],
        }
    }

    /// Mass of each of `bin_count` uniform bins over `[0, 1]`, renormalized to
    /// drop whatever the normals put outside the interval. A component with
    /// zero spread contributes a point mass to the bin holding its mean.
    pub fn discretize(&self, bin_count: usize) -> Result<CategoricalDistribution> {
        if self.components.is_empty() {
            return Err(Error::InvalidDistribution("traction law has no components".into()));
        }
        let mut mass = vec![0.0; bin_count.max(1)];
        for c in &self.components {
            if !(c.weight >= 0.0 && c.weight.is_finite() && c.mean.is_finite() && c.std >= 0.0) {
                return Err(Error::InvalidDistribution(format!("bad component {c:?}")));
            }
            if c.std == 0.0 {
                if !(0.0..=1.0).contains(&c.mean) {
                    return Err(Error::OutOfRange(c.mean));
                }
                mass[bin_index(c.mean, bin_count)] += c.weight;
                continue;
            }
            let n = Normal::new(c.mean, c.std)
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            for (i, m) in mass.iter_mut().enumerate() {
                let lo = i as f64 / bin_count as f64;
                let hi = (i + 1) as f64 / bin_count as f64;
                *m += c.weight * (n.cdf(hi) - n.cdf(lo));
            }
        }
        CategoricalDistribution::from_weights(&mass)
    }
}

/// Per-terrain feature generator: independent noise per dimension, scaled
/// by `std`. Noise is Student-t with `dof` degrees of freedom, or Gaussian
/// when `dof` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureLaw {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<f64>,
}

impl FeatureLaw {
    fn sample(&self, rng: &mut seed::Rng) -> Result<Vec<f64>> {
        let t = match self.dof {
            Some(nu) => Some(
                StudentT::new(nu).map_err(|e| Error::Config(format!("feature dof {nu}: {e}")))?,
            ),
            None => None,
        };
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let z: f64 = match &t {
                    Some(t) => t.sample(rng),
                    None => StandardNormal.sample(rng),
                };
                m + s * z
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainSpec {
    pub linear: TractionLaw,
    /// Defaults to the linear law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angular: Option<TractionLaw>,
    pub features: FeatureLaw,
}

impl TerrainSpec {
    fn distributions(&self, bins: usize) -> Result<(CategoricalDistribution, CategoricalDistribution)> {
        let lin = self.linear.discretize(bins)?;
        let ang = match &self.angular {
            Some(a) => a.discretize(bins)?,
            None => lin.clone(),
        };
        Ok((lin, ang))
    }
}

/// Feature layout: `[dirt score, vegetation score, roughness, slope]`.
/// Roughness carries the widest within-class spread, so it dominates the
/// second principal direction of dirt/vegetation training data. Alien cells
/// match dirt except for a roughness far outside that spread.
///
/// Feature noise is Student-t with 8 degrees of freedom. With Gaussian noise
/// the min-max normalized confidence puts roughly 15% of ordinary training
/// cells below 0.75.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Palette {
    pub dirt: TerrainSpec,
    pub vegetation: TerrainSpec,
    /// True traction of alien cells; the planner's model treats them as dirt.
    pub alien: TerrainSpec,
}

impl Default for Palette {
    fn default() -> Self {
        let std = vec![0.05, 0.05, 0.12, 0.03];
        Self {
            dirt: TerrainSpec {
                linear: TractionLaw::normal(0.8, 0.05),
                angular: None,
                features: FeatureLaw {
                    mean: vec![1.0, 0.0, 0.3, 0.1],
                    std: std.clone(),
                    dof: Some(8.0),
                },
            },
            vegetation: TerrainSpec {
                linear: TractionLaw::bimodal(0.15, 0.85, 0.05),
                angular: None,
                features: FeatureLaw {
                    mean: vec![0.0, 1.0, 0.5, 0.1],
                    std: std.clone(),
                    dof: Some(8.0),
                },
            },
            alien: TerrainSpec {
                linear: TractionLaw::normal(0.0, 0.0),
                angular: None,
                features: FeatureLaw {
                    mean: vec![1.0, 0.0, 1.2, 0.1],
                    std,
                    dof: Some(8.0),
                },
            },
        }
    }
}

impl Palette {
    pub fn spec(&self, terrain: Terrain) -> &TerrainSpec {
        match terrain {
            Terrain::Dirt => &self.dirt,
            Terrain::Vegetation => &self.vegetation,
            Terrain::Alien => &self.alien,
        }
    }
}

/// Axis-aligned block of cells, `[col0, col1) x [row0, row1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRect {
    pub col0: usize,
    pub row0: usize,
    pub col1: usize,
    pub row1: usize,
}

impl CellRect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row1).contains(&row) && (self.col0..self.col1).contains(&col)
    }
}

/// Arena description. When deserialized every field but `goal` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentDocument")]
pub struct EnvironmentSpec {
    pub height: usize,
    pub width: usize,
    pub cell_size: f64,
    /// `[x, y, yaw]`.
    pub start: [f64; 3],
    pub goal: [f64; 2],
    /// Target vegetation fraction inside the center region.
    pub vegetation_density: f64,
    /// Side of the square center region as a fraction of the arena.
    pub center_fraction: f64,
    /// Patch side length in cells.
    pub patch_size: usize,
    /// Std of the patch-center law as a fraction of the center-region side.
    pub patch_spread: f64,
    pub bin_count: usize,
    pub palette: Palette,
    pub alien: Vec<CellRect>,
    pub seed: u64,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self {
            height: 50,
            width: 50,
            cell_size: 1.0,
            start: [15.0, 18.0, 0.0],
            goal: [35.0, 18.0],
            vegetation_density: 0.5,
            center_fraction: 0.4,
            patch_size: 2,
            patch_spread: 0.2,
            bin_count: 20,
            palette: Palette::default(),
            alien: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EnvironmentDocument {
    height: usize,
    width: usize,
    cell_size: f64,
    start: [f64; 3],
    goal: Option<[f64; 2]>,
    vegetation_density: f64,
    center_fraction: f64,
    patch_size: usize,
    patch_spread: f64,
    bin_count: usize,
    palette: Palette,
    alien: Vec<CellRect>,
    seed: u64,
}

impl Default for EnvironmentDocument {
    fn default() -> Self {
        let d = EnvironmentSpec::default();
        Self {
            height: d.height,
            width: d.width,
            cell_size: d.cell_size,
            start: d.start,
            goal: None,
            vegetation_density: d.vegetation_density,
            center_fraction: d.center_fraction,
            patch_size: d.patch_size,
            patch_spread: d.patch_spread,
            bin_count: d.bin_count,
            palette: d.palette,
            alien: d.alien,
            seed: d.seed,
        }
    }
}

impl TryFrom<EnvironmentDocument> for EnvironmentSpec {
    type Error = String;

    fn try_from(doc: EnvironmentDocument) -> std::result::Result<Self, String> {
        let goal = doc.goal.ok_or("missing field `goal`")?;
        Ok(Self {
            height: doc.height,
            width: doc.width,
            cell_size: doc.cell_size,
            start: doc.start,
            goal,
            vegetation_density: doc.vegetation_density,
            center_fraction: doc.center_fraction,
            patch_size: doc.patch_size,
            patch_spread: doc.patch_spread,
            bin_count: doc.bin_count,
            palette: doc.palette,
            alien: doc.alien,
            seed: doc.seed,
        })
    }
}

impl EnvironmentSpec {
    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(self.height, self.width, self.cell_size, [0.0, 0.0])
    }

    pub fn start_state(&self) -> State {
        State::new(self.start[0], self.start[1], self.start[2])
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.geometry()?;
        if !g.contains(self.start[0], self.start[1]) || !self.start[2].is_finite() {
            return Err(Error::Config("start must lie inside the arena".into()));
        }
        if !g.contains(self.goal[0], self.goal[1]) {
            return Err(Error::Config("goal must lie inside the arena".into()));
        }
        if !(0.0..=1.0).contains(&self.vegetation_density) {
            return Err(Error::Config("vegetation_density must be in [0, 1]".into()));
        }
        if !(self.center_fraction > 0.0 && self.center_fraction <= 1.0) {
            return Err(Error::Config("center_fraction must be in (0, 1]".into()));
        }
        if self.patch_size == 0 || self.bin_count == 0 {
            return Err(Error::Config("patch_size and bin_count must be >= 1".into()));
        }
        if !(self.patch_spread > 0.0) {
            return Err(Error::Config("patch_spread must be positive".into()));
        }
        let d = self.palette.dirt.features.mean.len();
        for t in [Terrain::Dirt, Terrain::Vegetation, Terrain::Alien] {
            let f = &self.palette.spec(t).features;
            if f.mean.len() != d || f.std.len() != d || d == 0 {
                return Err(Error::Config(format!(
                    "palette.{}.features must have {d} means and stds",
                    t.name()
                )));
            }
        }
        for r in &self.alien {
            if r.col0 >= r.col1 || r.row0 >= r.row1 || r.col1 > self.width || r.row1 > self.height {
                return Err(Error::Config(format!("alien block {r:?} is empty or outside the arena")));
            }
        }
        Ok(())
    }

    /// The square center region as `[lo, hi)` cell ranges along each axis.
    pub fn center_region(&self) -> CellRect {
        let side_c = ((self.width as f64 * self.center_fraction).round() as usize).clamp(1, self.width);
        let side_r = ((self.height as f64 * self.center_fraction).round() as usize).clamp(1, self.height);
        let col0 = (self.width - side_c) / 2;
        let row0 = (self.height - side_r) / 2;
        CellRect {
            col0,
            row0,
            col1: col0 + side_c,
            row1: row0 + side_r,
        }
    }
}

/// A generated arena. `model` is what the planner is told; `truth` is what
/// ground-truth realizations are drawn from. They differ only on alien cells.
#[derive(Debug, Clone)]
pub struct Environment {
    pub spec: EnvironmentSpec,
    pub semantics: Vec<Terrain>,
    pub model: TractionDistributionMap,
    pub truth: TractionDistributionMap,
    pub features: FeatureMap,
}

impl Environment {
    pub fn geometry(&self) -> &GridGeometry {
        self.model.geometry()
    }

    /// Vegetation fraction inside the center region.
    pub fn center_density(&self) -> f64 {
        let r = self.spec.center_region();
        let w = self.spec.width;
        let mut veg = 0usize;
        for row in r.row0..r.row1 {
            for col in r.col0..r.col1 {
                veg += usize::from(self.semantics[row * w + col] == Terrain::Vegetation);
            }
        }
        veg as f64 / ((r.row1 - r.row0) * (r.col1 - r.col0)) as f64
    }

    pub fn semantics_csv(&self) -> String {
        let w = self.spec.width;
        let mut out = String::new();
        for row in self.semantics.chunks(w) {
            let line: Vec<&str> = row.iter().map(|t| t.name()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

fn truncated_normal(rng: &mut seed::Rng, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    let n = NormalSampler::new(mean, std).expect("positive spread");
    loop {
        let v = n.sample(rng);
        if (lo..hi).contains(&v) {
            return v;
        }
    }
}

/// Places `patch_size`-square vegetation patches, clipped to the center
/// region and never covering the start or goal cell, until the region's
/// vegetation fraction reaches the target.
fn place_vegetation(spec: &EnvironmentSpec, semantics: &mut [Terrain]) -> Result<()> {
    let region = spec.center_region();
    let geometry = spec.geometry()?;
    let keep_clear = [
        geometry.index_of(spec.start[0], spec.start[1]),
        geometry.index_of(spec.goal[0], spec.goal[1]),
    ];
    let rows = region.row1 - region.row0;
    let cols = region.col1 - region.col0;
    let total = rows * cols;
    let blocked = keep_clear
        .iter()
        .flatten()
        .filter(|&&i| region.contains(i / spec.width, i % spec.width))
        .count();
    let target = ((spec.vegetation_density * total as f64).ceil() as usize).min(total - blocked);
    if target == 0 {
        return Ok(());
    }
    let mut rng = seed::stream(spec.seed, &[PATCH_TAG]);
    let mut covered = 0usize;
    let max_attempts = 200 * total;
    let half = spec.patch_size as f64 / 2.0;
    let (cx, cy) = (
        region.col0 as f64 + cols as f64 / 2.0,
        region.row0 as f64 + rows as f64 / 2.0,
    );
    for _ in 0..max_attempts {
        let x = truncated_normal(&mut rng, cx, spec.patch_spread * cols as f64, region.col0 as f64, region.col1 as f64);
        let y = truncated_normal(&mut rng, cy, spec.patch_spread * rows as f64, region.row0 as f64, region.row1 as f64);
        let c0 = (x - half).round().max(region.col0 as f64) as usize;
        let r0 = (y - half).round().max(region.row0 as f64) as usize;
        for row in r0..(r0 + spec.patch_size).min(region.row1) {
            for col in c0..(c0 + spec.patch_size).min(region.col1) {
                let index = row * spec.width + col;
                if keep_clear.contains(&Some(index)) {
                    continue;
                }
                let cell = &mut semantics[index];
                if *cell == Terrain::Dirt {
                    *cell = Terrain::Vegetation;
                    covered += 1;
                }
            }
        }
        if covered >= target {
            return Ok(());
        }
    }
    Err(Error::UnreachableDensity {
        target: spec.vegetation_density,
        reached: covered as f64 / total as f64,
        attempts: max_attempts,
    })
}

/// Builds the semantic grid, the planner's and the true traction
/// distribution maps, and per-cell features, all from `spec.seed`.
pub fn generate_environment(spec: &EnvironmentSpec) -> Result<Environment> {
    spec.validate()?;
    let geometry = spec.geometry()?;
    let mut semantics = vec![Terrain::Dirt; geometry.len()];
    place_vegetation(spec, &mut semantics)?;
    for rect in &spec.alien {
        for row in rect.row0..rect.row1 {
            for col in rect.col0..rect.col1 {
                semantics[row * spec.width + col] = Terrain::Alien;
            }
        }
    }

    let bins = spec.bin_count;
    let dirt = spec.palette.dirt.distributions(bins)?;
    let veg = spec.palette.vegetation.distributions(bins)?;
    let alien = spec.palette.alien.distributions(bins)?;
    let pick = |t: Terrain, believed: bool| match t {
        Terrain::Dirt => &dirt,
        Terrain::Vegetation => &veg,
        Terrain::Alien if believed => &dirt,
        Terrain::Alien => &alien,
    };
    let build = |believed: bool| {
        let (lin, ang): (Vec<_>, Vec<_>) = semantics
            .iter()
            .map(|&t| {
                let (l, a) = pick(t, believed);
                (l.clone(), a.clone())
            })
            .unzip();
        TractionDistributionMap::new(geometry, lin, ang, vec![true; geometry.len()])
    };
    let model = build(true)?;
    let truth = build(false)?;

    let mut rng = seed::stream(spec.seed, &[FEATURE_TAG]);
    let features: Vec<Vec<f64>> = semantics
        .iter()
        .map(|&t| spec.palette.spec(t).features.sample(&mut rng))
        .collect::<Result<_>>()?;
    let features = FeatureMap::new(geometry, features, vec![true; geometry.len()])?;

    Ok(Environment {
        spec: spec.clone(),
        semantics,
        model,
        truth,
        features,
    })
}

//! Posterior summarization: gridded marginal densities, MMAP prediction
//! maps, highest-density intervals, RMSE, and posterior realizations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianDist, IntervalUnion};
use crate::kalman::SelectionPosterior;
use crate::selection::MixtureDensity;
use crate::univariate;

/// A univariate density tabulated on a uniform value grid.
#[derive(Debug, Clone)]
pub struct MarginalDensity {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

impl MarginalDensity {
    pub fn from_values(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::validation("density grid needs at least two points"));
        }
        if !(hi > lo) {
            return Err(Error::validation("grid bounds must satisfy lo < hi"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation("density values must be finite and non-negative"));
        }
        Ok(Self { lo, hi, values })
    }

    /// Tabulate a mixture over `[min mean - 4 sd, max mean + 4 sd]`.
    pub fn from_mixture(mix: &MixtureDensity, len: usize) -> Result<Self> {
        let (lo, hi) = mix.support();
        Self::from_values(lo, hi, mix.eval_grid(lo, hi, len))
    }

    /// Tabulate a Gaussian over `mean +- 4 sd`.
    pub fn from_gaussian(mean: f64, sd: f64, len: usize) -> Result<Self> {
        if !(sd > 0.0) {
            return Err(Error::validation("sd must be positive"));
        }
        let (lo, hi) = (mean - 4.0 * sd, mean + 4.0 * sd);
        let step = (hi - lo) / (len - 1) as f64;
        let values = (0..len)
            .map(|k| {
                let x = lo + k as f64 * step;
                univariate::pdf((x - mean) / sd) / sd
            })
            .collect();
        Self::from_values(lo, hi, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    pub fn x_at(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.step()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Trapezoid integral over the whole grid.
    pub fn trapezoid_mass(&self) -> f64 {
        let h = self.step();
        let mut mass = 0.0;
        for k in 1..self.values.len() {
            mass += 0.5 * (self.values[k - 1] + self.values[k]) * h;
        }
        mass
    }

    /// Check the type invariants: non-negative values and unit mass
    /// within `1e-3`.
    pub fn validate(&self) -> Result<()> {
        let mass = self.trapezoid_mass();
        if (mass - 1.0).abs() > 1e-3 {
            return Err(Error::validation(format!(
                "density mass {mass} deviates from 1 by more than 1e-3"
            )));
        }
        Ok(())
    }
}

/// Grid-argmax of the density; ties break toward the lowest value.
pub fn mmap(density: &MarginalDensity) -> f64 {
    let mut best_k = 0;
    let mut best_v = density.values()[0];
    for (k, &v) in density.values().iter().enumerate().skip(1) {
        if v > best_v {
            best_v = v;
            best_k = k;
        }
    }
    density.x_at(best_k)
}

/// A highest-density band: the requested mass, the mass actually covered
/// on the grid, and the superlevel intervals.
#[derive(Debug, Clone)]
pub struct HdiBand {
    pub mass: f64,
    pub covered_mass: f64,
    pub intervals: IntervalUnion,
}

/// Highest-density interval via bisection on the level `c` (60 rounds),
/// with a greedy trim for plateaued densities where the superlevel mass
/// jumps discontinuously in `c`.
///
/// A grid cell `[x_k, x_{k+1}]` is covered when both endpoint densities
/// reach the level; covered mass is the trapezoid integral over covered
/// cells.
pub fn hdi(density: &MarginalDensity, mass: f64) -> Result<HdiBand> {
    if !(0.0 < mass && mass < 1.0) {
        return Err(Error::validation("target mass must lie in (0, 1)"));
    }
    density.validate()?;
    let tol = 0.01;
    let values = density.values();
    let ncells = values.len() - 1;
    let h = density.step();
    let cell_level = |k: usize| values[k].min(values[k + 1]);
    let cell_mass = |k: usize| 0.5 * (values[k] + values[k + 1]) * h;
    let covered_at = |c: f64| -> f64 {
        (0..ncells)
            .filter(|&k| cell_level(k) >= c)
            .map(cell_mass)
            .sum()
    };

    let mut lo_c = 0.0f64;
    let mut hi_c = values.iter().cloned().fold(0.0f64, f64::max);
    for _ in 0..60 {
        let mid = 0.5 * (lo_c + hi_c);
        if covered_at(mid) >= mass {
            lo_c = mid;
        } else {
            hi_c = mid;
        }
    }
    // lo_c is the largest tested level still covering >= mass.
    let c = lo_c;
    let mut included: Vec<bool> = (0..ncells).map(|k| cell_level(k) >= c).collect();
    let mut covered: f64 = (0..ncells).filter(|&k| included[k]).map(cell_mass).sum();

    // Plateau handling: drop the flattest covered cells until within
    // tolerance of the target.
    while covered > mass + tol {
        let mut drop: Option<(usize, f64)> = None;
        for k in 0..ncells {
            if included[k] {
                let lvl = cell_level(k);
                match drop {
                    Some((_, best)) if best < lvl => {}
                    Some((kb, best)) if best == lvl && k < kb => {}
                    _ => drop = Some((k, lvl)),
                }
            }
        }
        match drop {
            Some((k, _)) => {
                included[k] = false;
                covered -= cell_mass(k);
            }
            None => break,
        }
    }
    if (covered - mass).abs() > tol {
        return Err(Error::Resolution(format!(
            "grid too coarse for HDI mass {mass}: covered {covered}"
        )));
    }

    let mut segments = Vec::new();
    let mut k = 0;
    while k < ncells {
        if included[k] {
            let start = k;
            while k < ncells && included[k] {
                k += 1;
            }
            segments.push((density.x_at(start), density.x_at(k)));
        } else {
            k += 1;
        }
    }
    Ok(HdiBand {
        mass,
        covered_mass: covered,
        intervals: IntervalUnion::new(segments)?,
    })
}

/// Per-node predicted values over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub values: DVector<f64>,
}

/// Root mean square deviation over all nodes.
pub fn rmse(pred: &PredictionMap, truth: &DVector<f64>) -> Result<f64> {
    if pred.values.len() != truth.len() {
        return Err(Error::validation(format!(
            "prediction has {} nodes, truth has {}",
            pred.values.len(),
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let ss: f64 = pred
        .values
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((ss / n).sqrt())
}

/// Posterior to summarize: a selection-model bundle or a traditional
/// Gaussian posterior over the initial state.
pub enum PosteriorInput<'a> {
    Selection(&'a SelectionPosterior),
    Traditional(&'a GaussianDist),
}

/// Summarization settings.
#[derive(Debug, Clone)]
pub struct SummaryConfig {
    /// Points in each node's value grid.
    pub value_grid_len: usize,
    /// Target HDI mass.
    pub hdi_mass: f64,
    /// Nodes for which densities are retained.
    pub density_nodes: Vec<usize>,
    /// Nodes for which HDI bands are computed.
    pub hdi_nodes: Vec<usize>,
    /// Number of posterior realizations.
    pub n_realizations: usize,
    /// Seed for the realization draws.
    pub realization_seed: u64,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            value_grid_len: 512,
            hdi_mass: 0.8,
            density_nodes: Vec::new(),
            hdi_nodes: Vec::new(),
            n_realizations: 100,
            realization_seed: 0,
        }
    }
}

/// Full posterior summary.
pub struct PosteriorSummary {
    pub prediction: PredictionMap,
    pub densities: Vec<(usize, MarginalDensity)>,
    pub hdi_bands: Vec<(usize, HdiBand)>,
    pub realizations: DMatrix<f64>,
}

/// Produce the per-node MMAP prediction map, tabulated densities and HDI
/// bands at the requested nodes, and seeded posterior realizations.
///
/// Selection input evaluates the Rao-Blackwellized mixture per node;
/// traditional input uses the exact Gaussian marginal (its MMAP is its
/// mean, up to one grid cell).
pub fn summarize_posterior(input: &PosteriorInput, cfg: &SummaryConfig) -> Result<PosteriorSummary> {
    if cfg.value_grid_len < 16 {
        return Err(Error::validation("value grid needs at least 16 points"));
    }
    let n = match input {
        PosteriorInput::Selection(b) => b.state_dim(),
        PosteriorInput::Traditional(g) => g.dim(),
    };
    for &node in cfg.density_nodes.iter().chain(&cfg.hdi_nodes) {
        if node >= n {
            return Err(Error::validation(format!("node {node} out of range for dim {n}")));
        }
    }

    let density_at = |node: usize| -> Result<MarginalDensity> {
        match input {
            PosteriorInput::Selection(bundle) => {
                let mix = bundle.node_density(node)?;
                MarginalDensity::from_mixture(&mix, cfg.value_grid_len)
            }
            PosteriorInput::Traditional(g) => {
                let sd = g.cov()[(node, node)].max(1e-300).sqrt();
                MarginalDensity::from_gaussian(g.mean()[node], sd, cfg.value_grid_len)
            }
        }
    };

    let mut prediction = DVector::zeros(n);
    match input {
        PosteriorInput::Selection(bundle) => {
            // One pass over the conditional-mean matrix covers every node.
            let means = bundle.conditional_mean_matrix();
            for node in 0..n {
                let mix = MixtureDensity::new(
                    means.row(node).iter().copied().collect(),
                    bundle.node_sd(node),
                )?;
                let md = MarginalDensity::from_mixture(&mix, cfg.value_grid_len)?;
                prediction[node] = mmap(&md);
            }
        }
        PosteriorInput::Traditional(_) => {
            for node in 0..n {
                prediction[node] = mmap(&density_at(node)?);
            }
        }
    }

    let mut densities = Vec::with_capacity(cfg.density_nodes.len());
    for &node in &cfg.density_nodes {
        densities.push((node, density_at(node)?));
    }
    let mut hdi_bands = Vec::with_capacity(cfg.hdi_nodes.len());
    for &node in &cfg.hdi_nodes {
        hdi_bands.push((node, hdi(&density_at(node)?, cfg.hdi_mass)?));
    }

    let realizations = match input {
        PosteriorInput::Selection(bundle) => {
            bundle.realizations(cfg.n_realizations, cfg.realization_seed)?
        }
        PosteriorInput::Traditional(g) => g.sample(cfg.n_realizations, cfg.realization_seed)?,
    };

    Ok(PosteriorSummary {
        prediction: PredictionMap { values: prediction },
        densities,
        hdi_bands,
        realizations,
    })
}

//! Experiment configuration: a versioned TOML schema covering the grid,
//! physics, priors, observation design, truth scenario, chain settings,
//! and output layout. `parse(emit(config)) == config` holds exactly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Schema version; must equal 1.
    pub config_version: u32,
    /// Root seed; every substream (observation noise, chains, realization
    /// draws) is derived from it by documented splitting.
    pub root_seed: u64,
    /// Current times at which inversions run, ascending.
    pub horizons: Vec<usize>,
    pub grid: GridConfig,
    pub pde: PdeConfig,
    pub selection_prior: SelectionPriorConfig,
    pub gaussian_prior: GaussianPriorConfig,
    pub observation: ObservationConfig,
    pub truth: TruthConfig,
    pub chain: ChainSettings,
    pub summary: SummarySettings,
    pub monitor: MonitorConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub diffusivity: f64,
    pub velocity: [f64; 2],
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionPriorConfig {
    pub mean: f64,
    pub std: f64,
    pub corr_range: f64,
    pub gamma: f64,
    /// Selection set per auxiliary coordinate:
    /// `(-inf, lower_cut] U [upper_cut, +inf)`.
    pub lower_cut: f64,
    pub upper_cut: f64,
    /// Auxiliary coupling: `"standardized"` couples to the standardized
    /// field (unit auxiliary variance, `corr(r, nu) = gamma`);
    /// `"field-scale"` couples to the raw field (auxiliary variance
    /// `gamma^2 std^2 + 1 - gamma^2`).
    pub coupling_form: String,
    /// Interpret the cut points in units of the auxiliary marginal
    /// standard deviation (a no-op for the standardized coupling).
    pub thresholds_in_aux_sd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPriorConfig {
    pub mean: f64,
    pub std: f64,
    pub corr_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    /// Observation sites as `(i, j)` grid coordinates.
    pub sites: Vec<[usize; 2]>,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub background: f64,
    pub events: Vec<EventConfig>,
}

/// A rectangular constant-valued anomaly, inclusive index bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub value: f64,
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub block_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarySettings {
    pub value_grid_len: usize,
    pub hdi_mass: f64,
    pub n_realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    /// Monitoring locations `(i, j)` at which marginal densities and HDI
    /// bands are reported.
    pub nodes: Vec<[usize; 2]>,
    /// Row index of the cross-section profile.
    pub profile_row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl EventConfig {
    fn overlaps(&self, other: &EventConfig) -> bool {
        self.i0 <= other.i1 && other.i0 <= self.i1 && self.j0 <= other.j1 && other.j0 <= self.j1
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::config(format!("TOML parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn emit(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical emitted form, hex-encoded.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.emit().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.config_version != CONFIG_VERSION {
            return fail(format!(
                "config_version: expected {CONFIG_VERSION}, got {}",
                self.config_version
            ));
        }
        if self.grid.nx < 2 || self.grid.ny < 2 {
            return fail("grid: nx and ny must be at least 2".into());
        }
        if !(self.grid.dx > 0.0) {
            return fail("grid.dx: must be positive".into());
        }
        if !(self.pde.diffusivity >= 0.0) || !(self.pde.dt > 0.0) {
            return fail("pde: diffusivity must be >= 0 and dt > 0".into());
        }
        if self.horizons.is_empty() {
            return fail("horizons: must be non-empty".into());
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return fail("horizons: must be strictly ascending".into());
        }
        if !(self.selection_prior.std > 0.0) || !(self.selection_prior.corr_range > 0.0) {
            return fail("selection_prior: std and corr_range must be positive".into());
        }
        if !(-1.0..=1.0).contains(&self.selection_prior.gamma) {
            return fail("selection_prior.gamma: must lie in [-1, 1]".into());
        }
        if !(self.selection_prior.lower_cut < self.selection_prior.upper_cut) {
            return fail("selection_prior: lower_cut must be below upper_cut".into());
        }
        if !matches!(
            self.selection_prior.coupling_form.as_str(),
            "standardized" | "field-scale"
        ) {
            return fail(format!(
                "selection_prior.coupling_form: '{}' is not 'standardized' or 'field-scale'",
                self.selection_prior.coupling_form
            ));
        }
        if !(self.gaussian_prior.std > 0.0) || !(self.gaussian_prior.corr_range > 0.0) {
            return fail("gaussian_prior: std and corr_range must be positive".into());
        }
        if self.observation.sites.is_empty() {
            return fail("observation.sites: must be non-empty".into());
        }
        for (k, site) in self.observation.sites.iter().enumerate() {
            if site[0] >= self.grid.nx || site[1] >= self.grid.ny {
                return fail(format!(
                    "observation.sites[{k}]: ({}, {}) outside the grid",
                    site[0], site[1]
                ));
            }
        }
        if !(self.observation.noise_std >= 0.0) {
            return fail("observation.noise_std: must be non-negative".into());
        }
        for (k, ev) in self.truth.events.iter().enumerate() {
            if ev.i0 > ev.i1 || ev.j0 > ev.j1 {
                return fail(format!("truth.events[{k}]: empty index rectangle"));
            }
            if ev.i1 >= self.grid.nx || ev.j1 >= self.grid.ny {
                return fail(format!("truth.events[{k}]: extends outside the grid"));
            }
            for (l, other) in self.truth.events.iter().enumerate().take(k) {
                if ev.overlaps(other) {
                    return fail(format!("truth.events[{k}]: overlaps truth.events[{l}]"));
                }
            }
        }
        if self.chain.n_samples == 0
            || self.chain.burn_in == 0
            || self.chain.thinning == 0
            || self.chain.block_size == 0
        {
            return fail("chain: all counts must be positive".into());
        }
        if self.summary.value_grid_len < 16 {
            return fail("summary.value_grid_len: must be at least 16".into());
        }
        if !(0.0 < self.summary.hdi_mass && self.summary.hdi_mass < 1.0) {
            return fail("summary.hdi_mass: must lie in (0, 1)".into());
        }
        if self.summary.n_realizations == 0 {
            return fail("summary.n_realizations: must be positive".into());
        }
        for (k, node) in self.monitor.nodes.iter().enumerate() {
            if node[0] >= self.grid.nx || node[1] >= self.grid.ny {
                return fail(format!(
                    "monitor.nodes[{k}]: ({}, {}) outside the grid",
                    node[0], node[1]
                ));
            }
        }
        if self.monitor.profile_row >= self.grid.ny {
            return fail("monitor.profile_row: outside the grid".into());
        }
        if self.output.dir.is_empty() {
            return fail("output.dir: must be non-empty".into());
        }
        Ok(())
    }

    /// The single-event case: a nine-node square of value 45 against a
    /// background of 20 in the upper-right quadrant of a 21x21 grid.
    pub fn single_event() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            root_seed: 20260809,
            horizons: vec![0, 20, 30, 50],
            grid: GridConfig {
                nx: 21,
                ny: 21,
                dx: 0.1,
            },
            pde: PdeConfig {
                diffusivity: 1.43e-2,
                velocity: [0.0, -0.1],
                dt: 0.5,
            },
            selection_prior: SelectionPriorConfig {
                mean: 28.75,
                std: 10.0,
                corr_range: 0.15,
                gamma: 0.95,
                lower_cut: -0.2,
                upper_cut: 0.5,
                coupling_form: "standardized".into(),
                thresholds_in_aux_sd: false,
            },
            gaussian_prior: GaussianPriorConfig {
                mean: 20.0,
                std: 10.0,
                corr_range: 0.15,
            },
            observation: ObservationConfig {
                sites: vec![[5, 5], [15, 5], [12, 10], [14, 10], [15, 13]],
                noise_std: 0.1,
            },
            truth: TruthConfig {
                background: 20.0,
                events: vec![EventConfig {
                    value: 45.0,
                    i0: 12,
                    i1: 14,
                    j0: 12,
                    j1: 14,
                }],
            },
            chain: ChainSettings {
                n_samples: 2000,
                burn_in: 2000,
                thinning: 40,
                block_size: 10,
            },
            summary: SummarySettings {
                value_grid_len: 512,
                hdi_mass: 0.8,
                n_realizations: 100,
            },
            monitor: MonitorConfig {
                nodes: vec![[13, 13], [11, 13], [3, 7], [4, 5]],
                profile_row: 13,
            },
            output: OutputConfig {
                dir: "runs/single-event".into(),
            },
        }
    }

    /// The two-event variant: same model parameters, a second nine-node
    /// square on the left half of the grid.
    pub fn two_event() -> Self {
        let mut cfg = Self::single_event();
        cfg.truth.events.push(EventConfig {
            value: 45.0,
            i0: 4,
            i1: 6,
            j0: 11,
            j1: 13,
        });
        cfg.monitor.nodes = vec![[13, 13], [5, 12], [3, 7], [4, 5]];
        cfg.output.dir = "runs/two-event".into();
        cfg
    }
}

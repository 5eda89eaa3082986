//! Experiment driver: `simulate` writes the synthetic truth and its
//! observation series, `invert` runs the targeted recursion and posterior
//! summarization for one or all horizons under either model, and `report`
//! renders the RMSE table and heatmap rasters.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use selkalman::forward::{
    assemble_propagator, build_observation_matrix, simulate_truth, GridSpec, ObservationLayout,
};
use selkalman::gaussian::{derive_seed, GaussianDist, IntervalUnion, SelectionSet};
use selkalman::inference::{
    rmse, summarize_posterior, PosteriorInput, PredictionMap, SummaryConfig,
};
use selkalman::kalman::{
    posterior_r0_selection, posterior_r0_traditional, run_selection, run_traditional,
    ProcessModel, StorageMode, TargetedJoint,
};
use selkalman::selection::{
    build_stationary_field, couple_case_auxiliary, CaseCoupling, ChainConfig, StationaryFieldSpec,
};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::fields;
use crate::manifest::{HorizonFile, ManifestEntry, RunManifest, MANIFEST_FILE};

/// Environment variable overriding the output directory.
pub const ENV_OUT: &str = "SELKALMAN_OUT";
/// Environment variable pinning the manifest timestamp (seconds since the
/// epoch), for byte-identical reruns.
pub const ENV_EPOCH: &str = "SELKALMAN_EPOCH";

/// Resolved run-time settings: output directory (flag > env > config),
/// root seed (flag > config), and the manifest timestamp.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out_dir: PathBuf,
    pub root_seed: u64,
    pub epoch: u64,
}

impl RunContext {
    pub fn resolve(cfg: &ExperimentConfig, out_flag: Option<PathBuf>, seed_flag: Option<u64>) -> Self {
        let out_dir = out_flag
            .or_else(|| std::env::var(ENV_OUT).ok().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        let epoch = std::env::var(ENV_EPOCH)
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        Self {
            out_dir,
            root_seed: seed_flag.unwrap_or(cfg.root_seed),
            epoch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Skm,
    Tkm,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Skm => "skm",
            ModelKind::Tkm => "tkm",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            ModelKind::Skm => 1,
            ModelKind::Tkm => 2,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skm" => Ok(ModelKind::Skm),
            "tkm" => Ok(ModelKind::Tkm),
            other => Err(CliError::config(format!(
                "unknown model '{other}' (expected skm or tkm)"
            ))),
        }
    }
}

fn sim_seed(root: u64) -> u64 {
    derive_seed(root, 0x0B5)
}

fn chain_seed(root: u64, model: ModelKind, horizon: usize) -> u64 {
    derive_seed(root, 0xC000_0000 | (model.tag() << 16) | horizon as u64)
}

fn realization_seed(root: u64, model: ModelKind, horizon: usize) -> u64 {
    derive_seed(root, 0x4E00_0000 | (model.tag() << 16) | horizon as u64)
}

struct Scene {
    grid: GridSpec,
    sites: Vec<(usize, usize)>,
    pm: ProcessModel,
}

fn build_scene(cfg: &ExperimentConfig) -> Result<Scene> {
    let grid = GridSpec::new(cfg.grid.nx, cfg.grid.ny, cfg.grid.dx)?;
    let params = selkalman::forward::AdvectionDiffusionParams {
        diffusivity: cfg.pde.diffusivity,
        velocity: cfg.pde.velocity,
        dt: cfg.pde.dt,
    };
    let propagator = assemble_propagator(&grid, &params)?;
    let sites: Vec<(usize, usize)> = cfg.observation.sites.iter().map(|s| (s[0], s[1])).collect();
    let layout = ObservationLayout::from_grid_coords(&sites, &grid)?;
    let h = build_observation_matrix(&grid, &layout);
    let m = layout.len();
    let var = cfg.observation.noise_std * cfg.observation.noise_std;
    let obs_noise = nalgebra::DMatrix::identity(m, m) * var;
    let horizon = *cfg.horizons.last().expect("validated non-empty");
    let pm = ProcessModel::time_invariant(propagator, None, h, obs_noise, horizon)?;
    Ok(Scene { grid, sites, pm })
}

fn truth_initial_field(cfg: &ExperimentConfig, grid: &GridSpec) -> DVector<f64> {
    let mut r = DVector::from_element(grid.node_count(), cfg.truth.background);
    for ev in &cfg.truth.events {
        for j in ev.j0..=ev.j1 {
            for i in ev.i0..=ev.i1 {
                r[j * grid.nx() + i] = ev.value;
            }
        }
    }
    r
}

fn selection_set(cfg: &ExperimentConfig, q: usize) -> Result<SelectionSet> {
    let sp = &cfg.selection_prior;
    let scale = if sp.thresholds_in_aux_sd {
        match sp.coupling_form.as_str() {
            // Unit auxiliary variance: scaling is the identity.
            "standardized" => 1.0,
            _ => (sp.gamma * sp.gamma * sp.std * sp.std + 1.0 - sp.gamma * sp.gamma).sqrt(),
        }
    } else {
        1.0
    };
    let iu = IntervalUnion::new(vec![
        (f64::NEG_INFINITY, sp.lower_cut * scale),
        (sp.upper_cut * scale, f64::INFINITY),
    ])
    .map_err(CliError::Numerical)?;
    SelectionSet::uniform(iu, q).map_err(CliError::Numerical)
}

fn skm_prior_joint(cfg: &ExperimentConfig, grid: &GridSpec) -> Result<GaussianDist> {
    let sp = &cfg.selection_prior;
    let field = build_stationary_field(&StationaryFieldSpec {
        grid: *grid,
        mean_level: sp.mean,
        std_level: sp.std,
        corr_range: sp.corr_range,
    })?;
    let coupling = CaseCoupling::new(sp.gamma)?;
    match sp.coupling_form.as_str() {
        "standardized" => {
            let selection = selection_set(cfg, field.dim())?;
            let params = selkalman::selection::SelectionGaussianParams::from_standardized_case(
                field, coupling, selection,
            )?;
            Ok(params.joint()?)
        }
        _ => Ok(couple_case_auxiliary(&field, coupling)?),
    }
}

fn tkm_prior(cfg: &ExperimentConfig, grid: &GridSpec) -> Result<GaussianDist> {
    let gp = &cfg.gaussian_prior;
    Ok(build_stationary_field(&StationaryFieldSpec {
        grid: *grid,
        mean_level: gp.mean,
        std_level: gp.std,
        corr_range: gp.corr_range,
    })?)
}

fn monitor_indices(cfg: &ExperimentConfig, grid: &GridSpec) -> Vec<usize> {
    cfg.monitor
        .nodes
        .iter()
        .map(|n| n[1] * grid.nx() + n[0])
        .collect()
}

fn profile_indices(cfg: &ExperimentConfig, grid: &GridSpec) -> Vec<usize> {
    let j = cfg.monitor.profile_row;
    (0..grid.nx()).map(|i| j * grid.nx() + i).collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))
}

/// Simulate the truth trajectory and observation series, write them, and
/// start a fresh manifest.
pub fn cmd_simulate(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<()> {
    ensure_dir(&ctx.out_dir)?;
    let scene = build_scene(cfg)?;
    let r0 = truth_initial_field(cfg, &scene.grid);
    let sim = simulate_truth(&r0, &scene.pm, sim_seed(ctx.root_seed))?;

    let truth_initial = "truth_initial.csv".to_string();
    fields::write_field_csv(&ctx.out_dir.join(&truth_initial), &scene.grid, &r0)?;
    let mut truth_fields = Vec::new();
    for &h in &cfg.horizons {
        let name = format!("truth_t{h}.csv");
        fields::write_field_csv(&ctx.out_dir.join(&name), &scene.grid, &sim.states[h])?;
        truth_fields.push(HorizonFile {
            horizon: h,
            path: name,
        });
    }
    let observations = "observations.csv".to_string();
    fields::write_observations_csv(
        &ctx.out_dir.join(&observations),
        &scene.grid,
        &scene.sites,
        &sim.observations,
    )?;
    let config_copy = ctx.out_dir.join("config_used.toml");
    std::fs::write(&config_copy, cfg.emit())
        .map_err(|e| CliError::io(config_copy.display().to_string(), e))?;

    let manifest = RunManifest {
        config_version: cfg.config_version,
        config_hash: cfg.digest(),
        root_seed: ctx.root_seed,
        created_epoch: ctx.epoch,
        nx: cfg.grid.nx,
        ny: cfg.grid.ny,
        dx: cfg.grid.dx,
        horizons: cfg.horizons.clone(),
        truth_initial,
        observations,
        truth_fields,
        entries: Vec::new(),
    };
    manifest.save(&ctx.out_dir)
}

fn load_manifest_checked(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<RunManifest> {
    if !ctx.out_dir.join(MANIFEST_FILE).exists() {
        return Err(CliError::config(format!(
            "no manifest in {}; run `simulate` first",
            ctx.out_dir.display()
        )));
    }
    let manifest = RunManifest::load(&ctx.out_dir)?;
    if manifest.config_hash != cfg.digest() {
        return Err(CliError::config(
            "config does not match the one used by `simulate` (hash mismatch)",
        ));
    }
    Ok(manifest)
}

/// One inversion's worth of posterior files.
struct HorizonOutput {
    files: BTreeMap<String, String>,
    rmse: f64,
}

#[allow(clippy::too_many_arguments)]
fn write_summary_outputs(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    model: ModelKind,
    horizon: usize,
    grid: &GridSpec,
    truth0: &DVector<f64>,
    summary: &selkalman::inference::PosteriorSummary,
) -> Result<HorizonOutput> {
    let nx = grid.nx();
    let tag = format!("{}_t{}", model.as_str(), horizon);
    let mut files = BTreeMap::new();
    let header = format!("# {},{},{}\n", grid.nx(), grid.ny(), grid.dx());

    let mmap_name = format!("{tag}_mmap.csv");
    fields::write_field_csv(&ctx.out_dir.join(&mmap_name), grid, &summary.prediction.values)?;
    files.insert("mmap".into(), mmap_name);

    let marg_name = format!("{tag}_marginals.csv");
    {
        let mut out = header.clone();
        out.push_str("# i,j,value,density\n");
        for (node, density) in &summary.densities {
            let (i, j) = (node % nx, node / nx);
            for k in 0..density.len() {
                out.push_str(&format!("{i},{j},{},{}\n", density.x_at(k), density.values()[k]));
            }
        }
        let p = ctx.out_dir.join(&marg_name);
        std::fs::write(&p, out.as_bytes()).map_err(|e| CliError::io(p.display().to_string(), e))?;
    }
    files.insert("marginals".into(), marg_name);

    let hdi_name = format!("{tag}_hdi.csv");
    {
        let mut out = header.clone();
        out.push_str("# i,j,target_mass,covered_mass,intervals\n");
        for (node, band) in &summary.hdi_bands {
            let (i, j) = (node % nx, node / nx);
            out.push_str(&format!(
                "{i},{j},{},{},{}\n",
                band.mass,
                band.covered_mass,
                fields::format_segments(band.intervals.segments())
            ));
        }
        let p = ctx.out_dir.join(&hdi_name);
        std::fs::write(&p, out.as_bytes()).map_err(|e| CliError::io(p.display().to_string(), e))?;
    }
    files.insert("hdi".into(), hdi_name);

    let real_name = format!("{tag}_realizations.csv");
    {
        let mut out = header.clone();
        out.push_str("# one realization per row, nodes in flattening order\n");
        for r in 0..summary.realizations.nrows() {
            let row: Vec<String> = (0..summary.realizations.ncols())
                .map(|c| format!("{}", summary.realizations[(r, c)]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let p = ctx.out_dir.join(&real_name);
        std::fs::write(&p, out.as_bytes()).map_err(|e| CliError::io(p.display().to_string(), e))?;
    }
    files.insert("realizations".into(), real_name);

    let profile_name = format!("{tag}_profile.csv");
    {
        let hdi_by_node: BTreeMap<usize, String> = summary
            .hdi_bands
            .iter()
            .map(|(node, band)| (*node, fields::format_segments(band.intervals.segments())))
            .collect();
        let j = cfg.monitor.profile_row;
        let mut out = header.clone();
        out.push_str("# i,j,truth,mmap,hdi\n");
        for i in 0..nx {
            let node = j * nx + i;
            out.push_str(&format!(
                "{i},{j},{},{},{}\n",
                truth0[node],
                summary.prediction.values[node],
                hdi_by_node.get(&node).cloned().unwrap_or_default()
            ));
        }
        let p = ctx.out_dir.join(&profile_name);
        std::fs::write(&p, out.as_bytes()).map_err(|e| CliError::io(p.display().to_string(), e))?;
    }
    files.insert("profile".into(), profile_name);

    let err = rmse(&summary.prediction, truth0).map_err(CliError::Numerical)?;
    Ok(HorizonOutput { files, rmse: err })
}

fn summary_config(
    cfg: &ExperimentConfig,
    grid: &GridSpec,
    model: ModelKind,
    horizon: usize,
    root_seed: u64,
) -> SummaryConfig {
    let monitors = monitor_indices(cfg, grid);
    let mut hdi_nodes = monitors.clone();
    hdi_nodes.extend(profile_indices(cfg, grid));
    hdi_nodes.sort_unstable();
    hdi_nodes.dedup();
    SummaryConfig {
        value_grid_len: cfg.summary.value_grid_len,
        hdi_mass: cfg.summary.hdi_mass,
        density_nodes: monitors,
        hdi_nodes,
        n_realizations: cfg.summary.n_realizations,
        realization_seed: realization_seed(root_seed, model, horizon),
    }
}

/// Run inversions for the requested horizon (or every configured one)
/// under the chosen model, writing posterior outputs and manifest entries.
pub fn cmd_invert(
    cfg: &ExperimentConfig,
    model: ModelKind,
    horizon: Option<usize>,
    ctx: &RunContext,
) -> Result<()> {
    let mut manifest = load_manifest_checked(cfg, ctx)?;
    let horizons: Vec<usize> = match horizon {
        Some(h) => {
            if !cfg.horizons.contains(&h) {
                return Err(CliError::config(format!(
                    "horizon {h} is not in the configured horizons {:?}",
                    cfg.horizons
                )));
            }
            vec![h]
        }
        None => cfg.horizons.clone(),
    };

    let scene = build_scene(cfg)?;
    let observations = fields::read_observations_csv(&ctx.out_dir.join(&manifest.observations))?;
    let (_, truth0) = fields::read_field_csv(&ctx.out_dir.join(&manifest.truth_initial))?;
    let m = scene.pm.obs_dim();
    let t_max = scene.pm.horizon();
    if observations.len() != t_max + 1 || observations.iter().any(|d| d.len() != m) {
        return Err(CliError::config(
            "observation series does not match the configured horizons/sites",
        ));
    }

    // One targeted recursion at the longest horizon serves every shorter
    // one by exact prefix truncation.
    let targeted: TargetedJoint = match model {
        ModelKind::Skm => {
            let joint = skm_prior_joint(cfg, &scene.grid)?;
            run_selection(&joint, &scene.pm, StorageMode::targeted())?.into_targeted()
        }
        ModelKind::Tkm => {
            let prior = tkm_prior(cfg, &scene.grid)?;
            run_traditional(&prior, &scene.pm, StorageMode::targeted())?.into_targeted()
        }
    };
    let selection = match model {
        ModelKind::Skm => Some(selection_set(cfg, targeted.aux_dim())?),
        ModelKind::Tkm => None,
    };

    for &h in &horizons {
        let tj = targeted.truncate(h)?;
        let mut data = DVector::zeros(m * (h + 1));
        for (t, obs) in observations.iter().take(h + 1).enumerate() {
            data.rows_mut(t * m, m).copy_from(obs);
        }
        let sum_cfg = summary_config(cfg, &scene.grid, model, h, ctx.root_seed);
        let summary = match model {
            ModelKind::Skm => {
                let chain = ChainConfig {
                    n_samples: cfg.chain.n_samples,
                    burn_in: cfg.chain.burn_in,
                    thinning: cfg.chain.thinning,
                    block_size: cfg.chain.block_size,
                    seed: chain_seed(ctx.root_seed, model, h),
                };
                let bundle =
                    posterior_r0_selection(&tj, &data, selection.as_ref().unwrap(), &chain)?;
                summarize_posterior(&PosteriorInput::Selection(&bundle), &sum_cfg)?
            }
            ModelKind::Tkm => {
                let post = posterior_r0_traditional(&tj, &data)?;
                summarize_posterior(&PosteriorInput::Traditional(&post), &sum_cfg)?
            }
        };
        let out = write_summary_outputs(cfg, ctx, model, h, &scene.grid, &truth0, &summary)?;
        manifest.upsert_entry(ManifestEntry {
            model: model.as_str().to_string(),
            horizon: h,
            chain_seed: chain_seed(ctx.root_seed, model, h),
            rmse: out.rmse,
            files: out.files,
        });
    }
    manifest.save(&ctx.out_dir)
}

/// Plain-text RMSE table (rows: models, columns: horizons).
pub fn render_rmse_table(manifest: &RunManifest) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<8}", "model"));
    for &h in &manifest.horizons {
        out.push_str(&format!("{:>12}", format!("T={h}")));
    }
    out.push('\n');
    for model in ["skm", "tkm"] {
        if !manifest.entries.iter().any(|e| e.model == model) {
            continue;
        }
        out.push_str(&format!("{model:<8}"));
        for &h in &manifest.horizons {
            match manifest.entry(model, h) {
                Some(e) => out.push_str(&format!("{:>12.4}", e.rmse)),
                None => out.push_str(&format!("{:>12}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

/// Render the RMSE table and the truth / MMAP / error rasters.
pub fn cmd_report(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<()> {
    let manifest = load_manifest_checked(cfg, ctx)?;
    manifest.verify_files(&ctx.out_dir)?;

    let table = render_rmse_table(&manifest);
    let table_path = ctx.out_dir.join("rmse_table.txt");
    std::fs::write(&table_path, table.as_bytes())
        .map_err(|e| CliError::io(table_path.display().to_string(), e))?;
    print!("{table}");

    let (grid, truth0) = fields::read_field_csv(&ctx.out_dir.join(&manifest.truth_initial))?;
    for hf in &manifest.truth_fields {
        let (_, field) = fields::read_field_csv(&ctx.out_dir.join(&hf.path))?;
        fields::write_pgm(
            &ctx.out_dir.join(format!("truth_t{}.pgm", hf.horizon)),
            &grid,
            &field,
        )?;
    }
    for e in &manifest.entries {
        let mmap_rel = e
            .files
            .get("mmap")
            .ok_or_else(|| CliError::config(format!("entry {}/t{} lacks mmap", e.model, e.horizon)))?;
        let (_, pred) = fields::read_field_csv(&ctx.out_dir.join(mmap_rel))?;
        let tag = format!("{}_t{}", e.model, e.horizon);
        fields::write_pgm(&ctx.out_dir.join(format!("{tag}_mmap.pgm")), &grid, &pred)?;
        let err_field = DVector::from_fn(pred.len(), |k, _| (pred[k] - truth0[k]).abs());
        fields::write_pgm(&ctx.out_dir.join(format!("{tag}_error.pgm")), &grid, &err_field)?;
    }
    let _ = cfg;
    Ok(())
}

/// Convenience wrapper used by tests: simulate, invert both models at
/// every horizon, and report.
pub fn run_full_pipeline(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<()> {
    cmd_simulate(cfg, ctx)?;
    cmd_invert(cfg, ModelKind::Skm, None, ctx)?;
    cmd_invert(cfg, ModelKind::Tkm, None, ctx)?;
    cmd_report(cfg, ctx)
}

/// Truth wrapper for tests and external callers.
pub fn truth_field(cfg: &ExperimentConfig) -> Result<(GridSpec, DVector<f64>)> {
    let grid = GridSpec::new(cfg.grid.nx, cfg.grid.ny, cfg.grid.dx)?;
    let r0 = truth_initial_field(cfg, &grid);
    Ok((grid, r0))
}

/// Prediction wrapper for tests: read a written MMAP map back.
pub fn read_prediction(ctx: &RunContext, model: ModelKind, horizon: usize) -> Result<PredictionMap> {
    let name = format!("{}_t{}_mmap.csv", model.as_str(), horizon);
    let (_, values) = fields::read_field_csv(&ctx.out_dir.join(name))?;
    Ok(PredictionMap { values })
}

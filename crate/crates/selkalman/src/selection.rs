//! Selection-Gaussian distributions: a Gaussian field coupled to an
//! auxiliary Gaussian vector that is conditioned to fall in a selection
//! set. Provides the case-study couplings, a block Gibbs sampler for the
//! truncated auxiliary variable, exact conditional field draws, and
//! Rao-Blackwellized marginal mixture densities.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::forward::GridSpec;
use crate::gaussian::{derive_seed, jittered_cholesky, standardized_segments, symmetrize, GaussianDist, SelectionSet};
use crate::univariate;

/// A discretized stationary Gaussian random field on a grid, with
/// isotropic squared-exponential correlation `rho(tau) = exp(-tau^2/delta^2)`.
#[derive(Debug, Clone)]
pub struct StationaryFieldSpec {
    pub grid: GridSpec,
    pub mean_level: f64,
    pub std_level: f64,
    pub corr_range: f64,
}

/// Build the field distribution: mean `mu * 1` and covariance
/// `sigma^2 * exp(-|x_i - x_j|^2 / delta^2)`.
pub fn build_stationary_field(spec: &StationaryFieldSpec) -> Result<GaussianDist> {
    if !(spec.std_level > 0.0) {
        return Err(Error::validation("std_level must be positive"));
    }
    if !(spec.corr_range > 0.0) {
        return Err(Error::validation("corr_range must be positive"));
    }
    let n = spec.grid.node_count();
    let var = spec.std_level * spec.std_level;
    let inv_d2 = 1.0 / (spec.corr_range * spec.corr_range);
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        let (xi, yi) = spec.grid.coords(i);
        for j in 0..=i {
            let (xj, yj) = spec.grid.coords(j);
            let d2 = (xi - xj).powi(2) + (yi - yj).powi(2);
            let c = var * (-d2 * inv_d2).exp();
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let g = GaussianDist::new(DVector::from_element(n, spec.mean_level), cov)?;
    g.validate_psd()
        .map_err(|_| Error::numerical("stationary field covariance not PSD within jitter"))?;
    Ok(g)
}

/// Coupling strength of the case-study auxiliary variable.
#[derive(Debug, Clone, Copy)]
pub struct CaseCoupling {
    gamma: f64,
}

impl CaseCoupling {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&gamma) {
            return Err(Error::validation(format!("gamma {gamma} must lie in [-1, 1]")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Auxiliary noise variance `1 - gamma^2`.
    pub fn aux_noise_var(&self) -> f64 {
        1.0 - self.gamma * self.gamma
    }
}

/// Joint distribution of `(field, aux)` for the case-study coupling
/// `aux | field = gamma (field - mu) + eps`, `eps ~ N(0, (1-gamma^2) I)`:
/// mean `(mu 1, 0)`, covariance blocks
/// `[[C, gamma C], [gamma C, gamma^2 C + (1-gamma^2) I]]` with `C` the
/// field covariance.
pub fn couple_case_auxiliary(base: &GaussianDist, coupling: CaseCoupling) -> Result<GaussianDist> {
    let n = base.dim();
    let gamma = coupling.gamma();
    let c = base.cov();
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let cij = c[(i, j)];
            cov[(i, j)] = cij;
            cov[(i, n + j)] = gamma * cij;
            cov[(n + i, j)] = gamma * cij;
            cov[(n + i, n + j)] = gamma * gamma * cij;
        }
        cov[(n + i, n + i)] += coupling.aux_noise_var();
    }
    let mut mean = DVector::zeros(2 * n);
    for i in 0..n {
        mean[i] = base.mean()[i];
    }
    GaussianDist::new(mean, cov)
}

/// Parameters of a selection-Gaussian distribution: a base Gaussian over
/// the field, a Gauss-linear auxiliary extension, and the selection set.
#[derive(Debug, Clone)]
pub struct SelectionGaussianParams {
    base: GaussianDist,
    aux_mean: DVector<f64>,
    coupling: DMatrix<f64>,
    aux_noise_cov: DMatrix<f64>,
    selection: SelectionSet,
}

impl SelectionGaussianParams {
    pub fn new(
        base: GaussianDist,
        aux_mean: DVector<f64>,
        coupling: DMatrix<f64>,
        aux_noise_cov: DMatrix<f64>,
        selection: SelectionSet,
    ) -> Result<Self> {
        let n = base.dim();
        let q = aux_mean.len();
        if coupling.nrows() != q || coupling.ncols() != n {
            return Err(Error::validation(format!(
                "coupling must be {q}x{n}, got {}x{}",
                coupling.nrows(),
                coupling.ncols()
            )));
        }
        if aux_noise_cov.nrows() != q || aux_noise_cov.ncols() != q {
            return Err(Error::validation("aux_noise_cov dimension mismatch"));
        }
        if selection.dim() != q {
            return Err(Error::validation(format!(
                "selection set dim {} does not match aux dim {q}",
                selection.dim()
            )));
        }
        let params = Self {
            base,
            aux_mean,
            coupling,
            aux_noise_cov,
            selection,
        };
        let joint = params.joint()?;
        joint
            .validate_psd()
            .map_err(|_| Error::numerical("joint (field, aux) covariance not PSD within jitter"))?;
        Ok(params)
    }

    /// Case-study parametrization: `coupling = gamma I`,
    /// `aux_noise_cov = (1 - gamma^2) I`, centered auxiliary.
    pub fn from_case(base: GaussianDist, coupling: CaseCoupling, selection: SelectionSet) -> Result<Self> {
        let n = base.dim();
        let gamma = coupling.gamma();
        Self::new(
            base,
            DVector::zeros(n),
            DMatrix::identity(n, n) * gamma,
            DMatrix::identity(n, n) * coupling.aux_noise_var(),
            selection,
        )
    }

    /// Standardized case parametrization: the auxiliary couples to the
    /// standardized field, `nu | r = gamma (r - mu) / sd + eps`, so each
    /// `nu_i` has unit variance and `corr(r_i, nu_i) = gamma`. Selection
    /// thresholds then live on the unit scale.
    pub fn from_standardized_case(
        base: GaussianDist,
        coupling: CaseCoupling,
        selection: SelectionSet,
    ) -> Result<Self> {
        let n = base.dim();
        let gamma = coupling.gamma();
        let mut row_scale = DMatrix::zeros(n, n);
        for i in 0..n {
            let var = base.cov()[(i, i)];
            if !(var > 0.0) {
                return Err(Error::validation(format!(
                    "base coordinate {i} has non-positive variance"
                )));
            }
            row_scale[(i, i)] = gamma / var.sqrt();
        }
        Self::new(
            base,
            DVector::zeros(n),
            row_scale,
            DMatrix::identity(n, n) * coupling.aux_noise_var(),
            selection,
        )
    }

    pub fn field_dim(&self) -> usize {
        self.base.dim()
    }

    pub fn aux_dim(&self) -> usize {
        self.aux_mean.len()
    }

    pub fn selection(&self) -> &SelectionSet {
        &self.selection
    }

    pub fn base(&self) -> &GaussianDist {
        &self.base
    }

    /// Joint Gaussian over `(field, aux)` of dimension `n + q`.
    pub fn joint(&self) -> Result<GaussianDist> {
        let n = self.field_dim();
        let q = self.aux_dim();
        let cross = self.base.cov() * self.coupling.transpose(); // n x q
        let aux_cov = symmetrize(&(&self.coupling * &cross)) + &self.aux_noise_cov;
        let mut cov = DMatrix::zeros(n + q, n + q);
        cov.view_mut((0, 0), (n, n)).copy_from(self.base.cov());
        cov.view_mut((0, n), (n, q)).copy_from(&cross);
        cov.view_mut((n, 0), (q, n)).copy_from(&cross.transpose());
        cov.view_mut((n, n), (q, q)).copy_from(&symmetrize(&aux_cov));
        let mut mean = DVector::zeros(n + q);
        mean.rows_mut(0, n).copy_from(self.base.mean());
        mean.rows_mut(n, q).copy_from(&self.aux_mean);
        GaussianDist::new(mean, cov)
    }

    /// Marginal law of the auxiliary vector.
    pub fn aux_marginal(&self) -> Result<GaussianDist> {
        let n = self.field_dim();
        let q = self.aux_dim();
        let keep: Vec<usize> = (n..n + q).collect();
        self.joint()?.marginalize(&keep)
    }
}

/// MCMC chain settings for the truncated auxiliary sampler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub block_size: usize,
    pub seed: u64,
}

impl ChainConfig {
    /// Defaults sized for the 21x21 case study: 10^3 retained draws after
    /// 10^3 burn-in sweeps, thinning 10, blocks of 10 coordinates.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            n_samples: 1000,
            burn_in: 1000,
            thinning: 10,
            block_size: 10,
            seed,
        }
    }

    fn validate(&self, q: usize) -> Result<()> {
        if self.n_samples == 0 || self.burn_in == 0 || self.thinning == 0 || self.block_size == 0 {
            return Err(Error::validation("chain counts must be positive"));
        }
        if self.block_size > q {
            return Err(Error::validation(format!(
                "block_size {} exceeds dimension {q}",
                self.block_size
            )));
        }
        Ok(())
    }
}

/// Retained draws of the auxiliary vector; every row lies in the
/// selection set.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxSampleSet {
    draws: DMatrix<f64>,
}

impl AuxSampleSet {
    pub fn n_samples(&self) -> usize {
        self.draws.nrows()
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn draws(&self) -> &DMatrix<f64> {
        &self.draws
    }

    pub fn row(&self, s: usize) -> DVector<f64> {
        self.draws.row(s).transpose()
    }

    /// Assert exact set membership for every coordinate of every draw.
    pub fn validate_membership(&self, a: &SelectionSet) -> Result<()> {
        if a.dim() != self.dim() {
            return Err(Error::validation("selection set dimension mismatch"));
        }
        for s in 0..self.n_samples() {
            for i in 0..self.dim() {
                if !a.coord(i).contains(self.draws[(s, i)]) {
                    return Err(Error::numerical(format!(
                        "draw {s} coordinate {i} = {} escaped the selection set",
                        self.draws[(s, i)]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Block Gibbs sampler for `aux | aux in a`.
///
/// Coordinates are visited in contiguous blocks of `cfg.block_size`; the
/// residual of the precision form is recomputed at each block entry and
/// corrected within the block, so every coordinate draw is an exact
/// univariate truncated-normal inverse-CDF draw given the current rest.
/// Burn-in sweeps are discarded and every `thinning`-th sweep thereafter
/// is retained. Deterministic for a fixed `cfg.seed`.
pub fn gibbs_truncated(aux: &GaussianDist, a: &SelectionSet, cfg: &ChainConfig) -> Result<AuxSampleSet> {
    let q = aux.dim();
    if a.dim() != q {
        return Err(Error::validation(format!(
            "selection set dim {} does not match aux dim {q}",
            a.dim()
        )));
    }
    cfg.validate(q)?;

    let (chol, _) = jittered_cholesky(aux.cov())?;
    let precision = chol.inverse();
    let prec_data = precision.as_slice(); // symmetric: column i doubles as row i
    let mu = aux.mean();

    let mut state = DVector::from_fn(q, |i, _| a.coord(i).project(aux.mean()[i]));
    if !a.contains(&state) {
        // Deterministic projection failed (non-finite parameters or an
        // adversarial set); fall back to seeded Gaussian proposals.
        let proposals = aux.sample(10_000, derive_seed(cfg.seed, 0xA11))?;
        let mut found = false;
        for r in 0..proposals.nrows() {
            let cand = proposals.row(r).transpose();
            if a.contains(&cand) {
                state = cand;
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Initialization(
                "no in-set point found by projection or 10^4 seeded proposals".into(),
            ));
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let total_sweeps = cfg.burn_in + cfg.n_samples * cfg.thinning;
    let mut draws = DMatrix::zeros(cfg.n_samples, q);
    let mut kept = 0usize;

    let mut resid = vec![0.0f64; cfg.block_size];
    for sweep in 0..total_sweeps {
        let mut block_start = 0;
        while block_start < q {
            let block_end = (block_start + cfg.block_size).min(q);
            let blen = block_end - block_start;
            // Fresh residual r_i = sum_j Q_ij (state_j - mu_j) for the block.
            for (bi, i) in (block_start..block_end).enumerate() {
                let qrow = &prec_data[i * q..(i + 1) * q];
                let mut acc = 0.0;
                for j in 0..q {
                    acc += qrow[j] * (state[j] - mu[j]);
                }
                resid[bi] = acc;
            }
            for (bi, i) in (block_start..block_end).enumerate() {
                let qii = prec_data[i * q + i];
                let s_i = resid[bi] - qii * (state[i] - mu[i]);
                let cond_mean = mu[i] - s_i / qii;
                let cond_sd = (1.0 / qii).sqrt();
                let segs = standardized_segments(a.coord(i), cond_mean, cond_sd);
                let masses = univariate::segment_masses(&segs);
                let u: f64 = rng.random();
                let z = if masses.total < univariate::MASS_FLOOR {
                    univariate::project_into(&segs, (state[i] - cond_mean) / cond_sd)
                } else {
                    univariate::sample_std_trunc(&segs, &masses, u)
                };
                let mut new_val = cond_mean + cond_sd * z;
                if !a.coord(i).contains(new_val) {
                    // Round-off at a segment boundary; snap back inside.
                    new_val = a.coord(i).project(new_val);
                }
                let delta = new_val - state[i];
                if delta != 0.0 {
                    let qcol = &prec_data[i * q..(i + 1) * q];
                    for (bk, k) in (block_start..block_end).enumerate().take(blen) {
                        resid[bk] += qcol[k] * delta;
                    }
                    state[i] = new_val;
                }
            }
            block_start = block_end;
        }
        if sweep >= cfg.burn_in && (sweep - cfg.burn_in + 1) % cfg.thinning == 0 {
            for i in 0..q {
                draws[(kept, i)] = state[i];
            }
            kept += 1;
        }
    }
    debug_assert_eq!(kept, cfg.n_samples);
    let out = AuxSampleSet { draws };
    out.validate_membership(a)?;
    Ok(out)
}

/// Exact conditional map `aux value -> N(mean, cov)` for the field given
/// the auxiliary vector under a joint Gaussian over `(field, aux)`.
#[derive(Debug, Clone)]
pub(crate) struct FieldConditional {
    pub base_mean: DVector<f64>,
    pub aux_mean: DVector<f64>,
    pub gain: DMatrix<f64>,
    pub cond_cov: DMatrix<f64>,
}

impl FieldConditional {
    pub fn from_joint(joint: &GaussianDist, n: usize) -> Result<Self> {
        let total = joint.dim();
        if n == 0 || n >= total {
            return Err(Error::validation("field block must be a proper prefix of the joint"));
        }
        let q = total - n;
        let cov = joint.cov();
        let sig_rr = cov.view((0, 0), (n, n)).into_owned();
        let sig_rnu = cov.view((0, n), (n, q)).into_owned();
        let sig_nunu = cov.view((n, n), (q, q)).into_owned();
        let (chol, _) = jittered_cholesky(&sig_nunu)?;
        let gain = chol.solve(&sig_rnu.transpose()).transpose(); // n x q
        let cond_cov = symmetrize(&(&sig_rr - &gain * sig_rnu.transpose()));
        Ok(Self {
            base_mean: joint.mean().rows(0, n).into_owned(),
            aux_mean: joint.mean().rows(n, q).into_owned(),
            gain,
            cond_cov,
        })
    }

    pub fn mean_for(&self, aux: &DVector<f64>) -> DVector<f64> {
        &self.base_mean + &self.gain * (aux - &self.aux_mean)
    }

    /// Conditional means for all draws at once, one column per draw.
    pub fn mean_matrix(&self, draws: &AuxSampleSet) -> DMatrix<f64> {
        let centered = draws.draws().transpose()
            - DMatrix::from_fn(self.aux_mean.len(), draws.n_samples(), |r, _| self.aux_mean[r]);
        let mut m = &self.gain * centered;
        for mut col in m.column_iter_mut() {
            col += &self.base_mean;
        }
        m
    }
}

/// Draw field realizations from a selection-Gaussian law: one exact
/// Gaussian conditional draw of the field per retained auxiliary draw.
/// Returns one realization per row.
pub fn sample_selection_gaussian(params: &SelectionGaussianParams, cfg: &ChainConfig) -> Result<DMatrix<f64>> {
    let n = params.field_dim();
    let joint = params.joint()?;
    let aux = params.aux_marginal()?;
    let nu = gibbs_truncated(&aux, params.selection(), cfg)?;
    let cond = FieldConditional::from_joint(&joint, n)?;
    let (chol, _) = jittered_cholesky(&cond.cond_cov)?;
    let l = chol.l();
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, 0xF1E1D));
    let mut out = DMatrix::zeros(nu.n_samples(), n);
    let mut z = DVector::zeros(n);
    for s in 0..nu.n_samples() {
        let mean = cond.mean_for(&nu.row(s));
        for zi in z.iter_mut() {
            *zi = rng.sample(rand_distr::StandardNormal);
        }
        let draw = mean + &l * &z;
        for i in 0..n {
            out[(s, i)] = draw[i];
        }
    }
    Ok(out)
}

/// Rao-Blackwellized mixture of exact univariate Gaussian conditionals:
/// `f(r) = (1/S) sum_s phi(r; mean_s, sd^2)`.
#[derive(Debug, Clone)]
pub struct MixtureDensity {
    component_means: Vec<f64>,
    component_sd: f64,
}

impl MixtureDensity {
    pub fn new(component_means: Vec<f64>, component_sd: f64) -> Result<Self> {
        if component_means.is_empty() {
            return Err(Error::validation("mixture needs at least one component"));
        }
        if !(component_sd > 0.0) {
            return Err(Error::validation("component sd must be positive"));
        }
        Ok(Self {
            component_means,
            component_sd,
        })
    }

    pub fn single(mean: f64, sd: f64) -> Result<Self> {
        Self::new(vec![mean], sd)
    }

    pub fn component_sd(&self) -> f64 {
        self.component_sd
    }

    pub fn component_means(&self) -> &[f64] {
        &self.component_means
    }

    pub fn eval(&self, r: f64) -> f64 {
        let inv_sd = 1.0 / self.component_sd;
        let sum: f64 = self
            .component_means
            .iter()
            .map(|&m| univariate::pdf((r - m) * inv_sd))
            .sum();
        sum * inv_sd / self.component_means.len() as f64
    }

    /// Mixture mean (the Rao-Blackwellized posterior mean).
    pub fn mean(&self) -> f64 {
        self.component_means.iter().sum::<f64>() / self.component_means.len() as f64
    }

    /// `[min mean - 4 sd, max mean + 4 sd]`, the default evaluation span.
    pub fn support(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &m in &self.component_means {
            lo = lo.min(m);
            hi = hi.max(m);
        }
        (lo - 4.0 * self.component_sd, hi + 4.0 * self.component_sd)
    }

    /// Evaluate on a uniform grid. Components only touch grid points within
    /// eight standard deviations, which keeps dense mixtures affordable and
    /// changes nothing beyond 1e-14 relative.
    pub fn eval_grid(&self, lo: f64, hi: f64, len: usize) -> Vec<f64> {
        assert!(len >= 2 && hi > lo);
        let step = (hi - lo) / (len - 1) as f64;
        let mut vals = vec![0.0f64; len];
        let inv_sd = 1.0 / self.component_sd;
        let window = 8.0 * self.component_sd;
        for &m in &self.component_means {
            let first = ((m - window - lo) / step).floor().max(0.0) as usize;
            let last = (((m + window - lo) / step).ceil() as isize).clamp(0, len as isize - 1) as usize;
            for k in first..=last {
                let x = lo + k as f64 * step;
                vals[k] += univariate::pdf((x - m) * inv_sd);
            }
        }
        let scale = inv_sd / self.component_means.len() as f64;
        for v in vals.iter_mut() {
            *v *= scale;
        }
        vals
    }
}

/// Mixture marginal of one field coordinate given auxiliary draws, under
/// a joint Gaussian over `(field, aux)` (optionally already conditioned
/// on data).
pub fn marginal_mixture_density(
    node: usize,
    nu_draws: &AuxSampleSet,
    joint: &GaussianDist,
) -> Result<MixtureDensity> {
    if nu_draws.n_samples() == 0 {
        return Err(Error::validation("empty auxiliary sample set"));
    }
    let q = nu_draws.dim();
    if joint.dim() <= q {
        return Err(Error::validation("joint must cover (field, aux)"));
    }
    let n = joint.dim() - q;
    if node >= n {
        return Err(Error::validation(format!("node {node} out of range for field dim {n}")));
    }
    let cov = joint.cov();
    let cross = cov.view((node, n), (1, q)).transpose(); // q x 1
    let sig_nunu = cov.view((n, n), (q, q)).into_owned();
    let (chol, _) = jittered_cholesky(&sig_nunu)?;
    let weights = chol.solve(&cross); // q x 1
    let var = cov[(node, node)] - cross.dot(&weights);
    let sd = var.max(1e-300).sqrt();
    let mu_node = joint.mean()[node];
    let aux_mean = joint.mean().rows(n, q);
    let mut means = Vec::with_capacity(nu_draws.n_samples());
    for s in 0..nu_draws.n_samples() {
        let mut m = mu_node;
        for i in 0..q {
            m += weights[i] * (nu_draws.draws()[(s, i)] - aux_mean[i]);
        }
        means.push(m);
    }
    MixtureDensity::new(means, sd)
}

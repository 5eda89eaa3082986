//! Exact joint-moment recursions for Gauss-linear state-space models with
//! Gaussian or selection-Gaussian initial distributions, plus posterior
//! assessment of the initial state.
//!
//! The recursion propagates every covariance block of the joint law of
//! `(r_{0:T+1}[, nu], d_{0:T})` by matrix products alone — no randomness.
//! Full storage keeps all time pairs; targeted storage keeps only the
//! blocks involving `r_0` (and `nu`, and the data), which is what the
//! initial-state inversion needs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::gaussian::{derive_seed, jittered_cholesky, GaussianDist, SelectionSet};
use crate::selection::{gibbs_truncated, AuxSampleSet, ChainConfig, FieldConditional, MixtureDensity};

/// Default cap on the assembled full-mode dimension `n(T+2)+q+m(T+1)`.
pub const DEFAULT_FULL_DIM_CAP: usize = 5000;

/// Gauss-linear process model: forward matrices, observation matrix, and
/// noise covariances over a fixed horizon `T`.
#[derive(Debug, Clone)]
pub struct ProcessModel {
    forward: Forward,
    dyn_noise: Option<DMatrix<f64>>,
    obs: DMatrix<f64>,
    obs_noise: DMatrix<f64>,
    horizon: usize,
}

#[derive(Debug, Clone)]
enum Forward {
    TimeInvariant(DMatrix<f64>),
    Sequence(Vec<DMatrix<f64>>),
}

impl ProcessModel {
    /// Model with a single time-invariant forward matrix.
    /// `dyn_noise = None` is the exact-dynamics case `Sigma^{r|r} = 0`.
    pub fn time_invariant(
        forward: DMatrix<f64>,
        dyn_noise: Option<DMatrix<f64>>,
        obs: DMatrix<f64>,
        obs_noise: DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        Self::build(Forward::TimeInvariant(forward), dyn_noise, obs, obs_noise, horizon)
    }

    /// Model with one forward matrix per step `t = 0..=T`.
    pub fn time_varying(
        forward: Vec<DMatrix<f64>>,
        dyn_noise: Option<DMatrix<f64>>,
        obs: DMatrix<f64>,
        obs_noise: DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        if forward.len() != horizon + 1 {
            return Err(Error::validation(format!(
                "need {} forward matrices for horizon {horizon}, got {}",
                horizon + 1,
                forward.len()
            )));
        }
        Self::build(Forward::Sequence(forward), dyn_noise, obs, obs_noise, horizon)
    }

    fn build(
        forward: Forward,
        dyn_noise: Option<DMatrix<f64>>,
        obs: DMatrix<f64>,
        obs_noise: DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let n = match &forward {
            Forward::TimeInvariant(a) => a.nrows(),
            Forward::Sequence(mats) => mats.first().map(|a| a.nrows()).unwrap_or(0),
        };
        if n == 0 {
            return Err(Error::validation("state dimension must be positive"));
        }
        let check_square = |mat: &DMatrix<f64>, what: &str| -> Result<()> {
            if mat.nrows() != n || mat.ncols() != n {
                return Err(Error::validation(format!(
                    "{what} must be {n}x{n}, got {}x{}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            Ok(())
        };
        match &forward {
            Forward::TimeInvariant(a) => check_square(a, "forward matrix")?,
            Forward::Sequence(mats) => {
                for a in mats {
                    check_square(a, "forward matrix")?;
                }
            }
        }
        if let Some(q) = &dyn_noise {
            check_square(q, "dyn_noise_cov")?;
        }
        let m = obs.nrows();
        if obs.ncols() != n {
            return Err(Error::validation(format!(
                "obs_matrix must be {m}x{n}, got {m}x{}",
                obs.ncols()
            )));
        }
        if obs_noise.nrows() != m || obs_noise.ncols() != m {
            return Err(Error::validation("obs_noise_cov must be m x m"));
        }
        Ok(Self {
            forward,
            dyn_noise,
            obs,
            obs_noise,
            horizon,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.obs.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn forward_at(&self, t: usize) -> &DMatrix<f64> {
        match &self.forward {
            Forward::TimeInvariant(a) => a,
            Forward::Sequence(mats) => &mats[t],
        }
    }

    pub fn obs_matrix(&self) -> &DMatrix<f64> {
        &self.obs
    }

    pub fn obs_noise_cov(&self) -> &DMatrix<f64> {
        &self.obs_noise
    }

    pub fn dyn_noise_cov(&self) -> Option<&DMatrix<f64>> {
        self.dyn_noise.as_ref()
    }

    /// Dimension of the assembled full joint `n(T+2) + q + m(T+1)`.
    pub fn full_joint_dim(&self, q: usize) -> usize {
        let n = self.state_dim();
        let m = self.obs_dim();
        n * (self.horizon + 2) + q + m * (self.horizon + 1)
    }
}

/// Storage policy of the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageMode {
    /// Keep every time pair; refuses to run if the assembled dimension
    /// exceeds `dim_cap` (use targeted mode instead).
    Full { dim_cap: usize },
    /// Keep only the blocks involving `r_0` (and `nu`) and the data.
    Targeted,
}

impl StorageMode {
    pub fn full() -> Self {
        StorageMode::Full {
            dim_cap: DEFAULT_FULL_DIM_CAP,
        }
    }

    pub fn targeted() -> Self {
        StorageMode::Targeted
    }
}

/// Output of a recursion run.
#[derive(Debug, Clone)]
pub enum KalmanJoint {
    Full(JointMoments),
    Targeted(TargetedJoint),
}

impl KalmanJoint {
    pub fn into_targeted(self) -> TargetedJoint {
        match self {
            KalmanJoint::Full(jm) => jm.to_targeted(),
            KalmanJoint::Targeted(tj) => tj,
        }
    }

    pub fn as_full(&self) -> Option<&JointMoments> {
        match self {
            KalmanJoint::Full(jm) => Some(jm),
            KalmanJoint::Targeted(_) => None,
        }
    }
}

/// Every joint-moment block of `(r_{0:T+1}[, nu], d_{0:T})`, indexed by
/// time pairs (lower triangle stored; the rest follows by symmetry).
#[derive(Debug, Clone)]
pub struct JointMoments {
    n: usize,
    q: usize,
    m: usize,
    horizon: usize,
    obs: DMatrix<f64>,
    mean_r: Vec<DVector<f64>>,
    mean_nu: Option<DVector<f64>>,
    mean_d: Vec<DVector<f64>>,
    cov_rr: Vec<Vec<DMatrix<f64>>>,
    cov_rd: Vec<Vec<DMatrix<f64>>>,
    cov_rnu: Vec<DMatrix<f64>>,
    cov_nunu: Option<DMatrix<f64>>,
    cov_dd: Vec<Vec<DMatrix<f64>>>,
    cov_dnu: Vec<DMatrix<f64>>,
    cov_r0d: Vec<DMatrix<f64>>,
}

impl JointMoments {
    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn aux_dim(&self) -> usize {
        self.q
    }

    pub fn obs_dim(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn mean_r(&self, t: usize) -> &DVector<f64> {
        &self.mean_r[t]
    }

    pub fn mean_d(&self, t: usize) -> &DVector<f64> {
        &self.mean_d[t]
    }

    /// `Cov(r_t, r_s)` for any pair.
    pub fn cov_rr(&self, t: usize, s: usize) -> DMatrix<f64> {
        if s <= t {
            self.cov_rr[t][s].clone()
        } else {
            self.cov_rr[s][t].transpose()
        }
    }

    /// `Cov(r_t, d_s)` for any pair.
    pub fn cov_rd(&self, t: usize, s: usize) -> DMatrix<f64> {
        if s <= t {
            self.cov_rd[t][s].clone()
        } else {
            self.cov_rr[s][t].transpose() * self.obs.transpose()
        }
    }

    /// `Cov(d_t, d_s)` for any pair.
    pub fn cov_dd(&self, t: usize, s: usize) -> DMatrix<f64> {
        if s <= t {
            self.cov_dd[t][s].clone()
        } else {
            self.cov_dd[s][t].transpose()
        }
    }

    /// `Cov(r_t, nu)`.
    pub fn cov_rnu(&self, t: usize) -> Option<&DMatrix<f64>> {
        self.cov_rnu.get(t)
    }

    /// Assemble the full Gaussian over `(r_{0:T+1}[, nu], d_{0:T})`.
    pub fn assemble(&self) -> Result<GaussianDist> {
        let (n, q, m) = (self.n, self.q, self.m);
        let nt = self.horizon + 2;
        let dt = self.horizon + 1;
        let dim = n * nt + q + m * dt;
        let mut mean = DVector::zeros(dim);
        let mut cov = DMatrix::zeros(dim, dim);
        let r_off = |t: usize| t * n;
        let nu_off = n * nt;
        let d_off = |s: usize| n * nt + q + s * m;

        for t in 0..nt {
            mean.rows_mut(r_off(t), n).copy_from(&self.mean_r[t]);
        }
        if let Some(mu_nu) = &self.mean_nu {
            mean.rows_mut(nu_off, q).copy_from(mu_nu);
        }
        for s in 0..dt {
            mean.rows_mut(d_off(s), m).copy_from(&self.mean_d[s]);
        }

        let put = |r: usize, c: usize, block: &DMatrix<f64>, cov: &mut DMatrix<f64>| {
            cov.view_mut((r, c), (block.nrows(), block.ncols())).copy_from(block);
            if r != c {
                cov.view_mut((c, r), (block.ncols(), block.nrows()))
                    .copy_from(&block.transpose());
            }
        };

        for t in 0..nt {
            for s in 0..=t {
                put(r_off(t), r_off(s), &self.cov_rr[t][s], &mut cov);
            }
            if q > 0 {
                put(r_off(t), nu_off, &self.cov_rnu[t], &mut cov);
            }
        }
        if let Some(nunu) = &self.cov_nunu {
            put(nu_off, nu_off, nunu, &mut cov);
        }
        for t in 0..nt {
            for s in 0..dt {
                let block = self.cov_rd(t, s);
                put(r_off(t), d_off(s), &block, &mut cov);
            }
        }
        for s in 0..dt {
            if q > 0 {
                let block = self.cov_dnu[s].transpose(); // (nu, d_s) block is q x m
                put(nu_off, d_off(s), &block, &mut cov);
            }
            for u in 0..=s {
                put(d_off(s), d_off(u), &self.cov_dd[s][u], &mut cov);
            }
        }
        GaussianDist::new(mean, cov)
    }

    /// Project to the targeted storage: `(r_0[, nu], d_{0:T})`.
    pub fn to_targeted(&self) -> TargetedJoint {
        TargetedJoint::assemble(
            self.n,
            self.q,
            self.m,
            self.horizon,
            &self.mean_r[0],
            self.mean_nu.as_ref(),
            &self.mean_d,
            &self.cov_rr[0][0],
            if self.q > 0 { Some(&self.cov_rnu[0]) } else { None },
            self.cov_nunu.as_ref(),
            &self.cov_r0d,
            &self.cov_dnu,
            &self.cov_dd,
        )
        .expect("full-mode blocks always assemble")
    }
}

/// Joint Gaussian over `(r_0[, nu], d_{0:T})` — the storage the
/// initial-state inversion needs.
#[derive(Debug, Clone)]
pub struct TargetedJoint {
    n: usize,
    q: usize,
    m: usize,
    horizon: usize,
    dist: GaussianDist,
}

impl TargetedJoint {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        n: usize,
        q: usize,
        m: usize,
        horizon: usize,
        mean_r0: &DVector<f64>,
        mean_nu: Option<&DVector<f64>>,
        mean_d: &[DVector<f64>],
        cov_r0r0: &DMatrix<f64>,
        cov_r0nu: Option<&DMatrix<f64>>,
        cov_nunu: Option<&DMatrix<f64>>,
        cov_r0d: &[DMatrix<f64>],
        cov_dnu: &[DMatrix<f64>],
        cov_dd: &[Vec<DMatrix<f64>>],
    ) -> Result<Self> {
        let dt = horizon + 1;
        let dim = n + q + m * dt;
        let mut mean = DVector::zeros(dim);
        let mut cov = DMatrix::zeros(dim, dim);
        let d_off = |s: usize| n + q + s * m;

        mean.rows_mut(0, n).copy_from(mean_r0);
        if let Some(mu_nu) = mean_nu {
            mean.rows_mut(n, q).copy_from(mu_nu);
        }
        for s in 0..dt {
            mean.rows_mut(d_off(s), m).copy_from(&mean_d[s]);
        }

        let put = |r: usize, c: usize, block: &DMatrix<f64>, cov: &mut DMatrix<f64>| {
            cov.view_mut((r, c), (block.nrows(), block.ncols())).copy_from(block);
            if r != c {
                cov.view_mut((c, r), (block.ncols(), block.nrows()))
                    .copy_from(&block.transpose());
            }
        };

        put(0, 0, cov_r0r0, &mut cov);
        if let Some(rnu) = cov_r0nu {
            put(0, n, rnu, &mut cov);
        }
        if let Some(nunu) = cov_nunu {
            put(n, n, nunu, &mut cov);
        }
        for s in 0..dt {
            put(0, d_off(s), &cov_r0d[s], &mut cov);
            if q > 0 {
                let block = cov_dnu[s].transpose(); // q x m
                put(n, d_off(s), &block, &mut cov);
            }
            for u in 0..=s {
                put(d_off(s), d_off(u), &cov_dd[s][u], &mut cov);
            }
        }
        Ok(Self {
            n,
            q,
            m,
            horizon,
            dist: GaussianDist::new(mean, cov)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn aux_dim(&self) -> usize {
        self.q
    }

    pub fn obs_dim(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dist(&self) -> &GaussianDist {
        &self.dist
    }

    pub fn data_len(&self) -> usize {
        self.m * (self.horizon + 1)
    }

    fn data_indices(&self) -> Vec<usize> {
        (self.n + self.q..self.dist.dim()).collect()
    }

    /// Restrict to data up to an earlier horizon (exact prefix
    /// marginalization; the retained blocks are untouched by later steps).
    pub fn truncate(&self, horizon: usize) -> Result<TargetedJoint> {
        if horizon > self.horizon {
            return Err(Error::validation(format!(
                "cannot truncate horizon {} up to {horizon}",
                self.horizon
            )));
        }
        if horizon == self.horizon {
            return Ok(self.clone());
        }
        let keep: Vec<usize> = (0..self.n + self.q + self.m * (horizon + 1)).collect();
        Ok(TargetedJoint {
            n: self.n,
            q: self.q,
            m: self.m,
            horizon,
            dist: self.dist.marginalize(&keep)?,
        })
    }
}

struct Recursion<'a> {
    pm: &'a ProcessModel,
    q: usize,
    full: bool,
    mu_r: DVector<f64>,
    sigma_tt: DMatrix<f64>,
    sigma_t0: DMatrix<f64>,
    gamma_rd: Vec<DMatrix<f64>>,
    gamma_rnu: Option<DMatrix<f64>>,
    mean_r0: DVector<f64>,
    mean_nu: Option<DVector<f64>>,
    sigma_r0r0: DMatrix<f64>,
    sigma_r0nu: Option<DMatrix<f64>>,
    sigma_nunu: Option<DMatrix<f64>>,
    mean_d: Vec<DVector<f64>>,
    cov_r0d: Vec<DMatrix<f64>>,
    cov_dnu: Vec<DMatrix<f64>>,
    cov_dd: Vec<Vec<DMatrix<f64>>>,
    mean_r_hist: Vec<DVector<f64>>,
    cov_rr: Vec<Vec<DMatrix<f64>>>,
    cov_rd: Vec<Vec<DMatrix<f64>>>,
    cov_rnu_hist: Vec<DMatrix<f64>>,
}

impl<'a> Recursion<'a> {
    fn new(init: &GaussianDist, pm: &'a ProcessModel, q: usize, full: bool) -> Self {
        let n = pm.state_dim();
        let mu_r = init.mean().rows(0, n).into_owned();
        let sigma_tt = init.cov().view((0, 0), (n, n)).into_owned();
        let (mean_nu, gamma_rnu, sigma_nunu) = if q > 0 {
            (
                Some(init.mean().rows(n, q).into_owned()),
                Some(init.cov().view((0, n), (n, q)).into_owned()),
                Some(init.cov().view((n, n), (q, q)).into_owned()),
            )
        } else {
            (None, None, None)
        };
        Recursion {
            pm,
            q,
            full,
            mean_r0: mu_r.clone(),
            sigma_r0r0: sigma_tt.clone(),
            sigma_r0nu: gamma_rnu.clone(),
            sigma_nunu,
            mean_nu,
            sigma_t0: sigma_tt.clone(),
            gamma_rd: Vec::new(),
            gamma_rnu,
            mean_d: Vec::new(),
            cov_r0d: Vec::new(),
            cov_dnu: Vec::new(),
            cov_dd: Vec::new(),
            mean_r_hist: vec![mu_r.clone()],
            cov_rr: vec![vec![sigma_tt.clone()]],
            cov_rd: Vec::new(),
            cov_rnu_hist: Vec::new(),
            mu_r,
            sigma_tt,
        }
    }

    fn run(mut self) -> Self {
        let h = self.pm.obs_matrix();
        let ht = h.transpose();
        for t in 0..=self.pm.horizon() {
            // Likelihood blocks at time t.
            self.mean_d.push(h * &self.mu_r);
            self.gamma_rd.push(&self.sigma_tt * &ht);
            let mut dd_row = Vec::with_capacity(t + 1);
            for s in 0..t {
                dd_row.push(h * &self.gamma_rd[s]);
            }
            dd_row.push(h * &self.gamma_rd[t] + self.pm.obs_noise_cov());
            self.cov_dd.push(dd_row);
            self.cov_r0d.push(self.sigma_t0.transpose() * &ht);
            if let Some(rnu) = &self.gamma_rnu {
                self.cov_dnu.push(h * rnu);
            }
            if self.full {
                self.cov_rd.push(self.gamma_rd.clone());
                if let Some(rnu) = &self.gamma_rnu {
                    self.cov_rnu_hist.push(rnu.clone());
                }
            }

            // Forwarding to time t + 1.
            let a = self.pm.forward_at(t);
            self.mu_r = a * &self.mu_r;
            let mut next_tt = a * &self.sigma_tt * a.transpose();
            if let Some(qn) = self.pm.dyn_noise_cov() {
                next_tt += qn;
            }
            if self.full {
                let mut row = Vec::with_capacity(t + 2);
                for s in 0..=t {
                    row.push(a * &self.cov_rr[t][s]);
                }
                row.push(next_tt.clone());
                // Keep the running cross block identical to the stored one.
                self.sigma_t0 = row[0].clone();
                self.cov_rr.push(row);
                self.mean_r_hist.push(self.mu_r.clone());
            } else {
                self.sigma_t0 = a * &self.sigma_t0;
            }
            self.sigma_tt = next_tt;
            for g in self.gamma_rd.iter_mut() {
                *g = a * &*g;
            }
            if let Some(rnu) = &mut self.gamma_rnu {
                *rnu = a * &*rnu;
            }
        }
        if self.full {
            // Final cross blocks with r_{T+1} and nu.
            if let Some(rnu) = &self.gamma_rnu {
                self.cov_rnu_hist.push(rnu.clone());
            }
            self.cov_rd.push(self.gamma_rd.clone());
        }
        self
    }

    fn into_targeted(self) -> Result<TargetedJoint> {
        TargetedJoint::assemble(
            self.pm.state_dim(),
            self.q,
            self.pm.obs_dim(),
            self.pm.horizon(),
            &self.mean_r0,
            self.mean_nu.as_ref(),
            &self.mean_d,
            &self.sigma_r0r0,
            self.sigma_r0nu.as_ref(),
            self.sigma_nunu.as_ref(),
            &self.cov_r0d,
            &self.cov_dnu,
            &self.cov_dd,
        )
    }

    fn into_full(self) -> JointMoments {
        // In full mode, cov_rd[T+1] holds the blocks with r_{T+1}, so every
        // cov_rd[t] has t+1 entries except the last which has T+1. Reindex
        // so cov_rd[t][s] exists for s <= min(t, T).
        JointMoments {
            n: self.pm.state_dim(),
            q: self.q,
            m: self.pm.obs_dim(),
            horizon: self.pm.horizon(),
            obs: self.pm.obs_matrix().clone(),
            mean_r: self.mean_r_hist,
            mean_nu: self.mean_nu,
            mean_d: self.mean_d,
            cov_rr: self.cov_rr,
            cov_rd: self.cov_rd,
            cov_rnu: self.cov_rnu_hist,
            cov_nunu: self.sigma_nunu,
            cov_dd: self.cov_dd,
            cov_dnu: self.cov_dnu,
            cov_r0d: self.cov_r0d,
        }
    }
}

fn check_full_cap(pm: &ProcessModel, q: usize, dim_cap: usize) -> Result<()> {
    let dim = pm.full_joint_dim(q);
    if dim > dim_cap {
        return Err(Error::validation(format!(
            "full-mode joint dimension {dim} exceeds the cap {dim_cap}; use targeted mode"
        )));
    }
    Ok(())
}

/// Joint traditional Kalman model: propagate the joint moments of
/// `(r_{0:T+1}, d_{0:T})` from a Gaussian initial distribution.
pub fn run_traditional(init: &GaussianDist, pm: &ProcessModel, mode: StorageMode) -> Result<KalmanJoint> {
    if init.dim() != pm.state_dim() {
        return Err(Error::validation(format!(
            "initial distribution has dim {}, expected {}",
            init.dim(),
            pm.state_dim()
        )));
    }
    match mode {
        StorageMode::Full { dim_cap } => {
            check_full_cap(pm, 0, dim_cap)?;
            Ok(KalmanJoint::Full(Recursion::new(init, pm, 0, true).run().into_full()))
        }
        StorageMode::Targeted => Ok(KalmanJoint::Targeted(
            Recursion::new(init, pm, 0, false).run().into_targeted()?,
        )),
    }
}

/// Joint selection Kalman model: propagate the joint moments of
/// `(r_{0:T+1}, nu, d_{0:T})` from a Gaussian initial distribution over
/// `(r_0, nu)` (the selection on `nu` is applied at assessment time).
pub fn run_selection(init_joint: &GaussianDist, pm: &ProcessModel, mode: StorageMode) -> Result<KalmanJoint> {
    let n = pm.state_dim();
    if init_joint.dim() <= n {
        return Err(Error::validation(format!(
            "joint initial distribution has dim {}, need more than state dim {n}",
            init_joint.dim()
        )));
    }
    let q = init_joint.dim() - n;
    match mode {
        StorageMode::Full { dim_cap } => {
            check_full_cap(pm, q, dim_cap)?;
            Ok(KalmanJoint::Full(
                Recursion::new(init_joint, pm, q, true).run().into_full(),
            ))
        }
        StorageMode::Targeted => Ok(KalmanJoint::Targeted(
            Recursion::new(init_joint, pm, q, false).run().into_targeted()?,
        )),
    }
}

/// Gaussian posterior of the initial state under the traditional model:
/// condition the targeted joint on the observed data.
pub fn posterior_r0_traditional(tj: &TargetedJoint, data: &DVector<f64>) -> Result<GaussianDist> {
    if tj.aux_dim() != 0 {
        return Err(Error::validation(
            "targeted joint is in selection mode; use posterior_r0_selection",
        ));
    }
    if data.len() != tj.data_len() {
        return Err(Error::validation(format!(
            "data length {} does not match m(T+1) = {}",
            data.len(),
            tj.data_len()
        )));
    }
    let n = tj.state_dim();
    if data.is_empty() {
        let keep: Vec<usize> = (0..n).collect();
        return tj.dist().marginalize(&keep);
    }
    tj.dist().condition(&tj.data_indices(), data)
}

/// Posterior bundle of the initial state under the selection model:
/// `(r_0, nu) | d` Gaussian conditioning, truncated Gibbs draws of
/// `nu | d, nu in A`, and the exact Gaussian conditional map
/// `nu -> r_0 | nu, d` for Rao-Blackwellized marginals and realizations.
pub fn posterior_r0_selection(
    tj: &TargetedJoint,
    data: &DVector<f64>,
    a: &SelectionSet,
    cfg: &ChainConfig,
) -> Result<SelectionPosterior> {
    if tj.aux_dim() == 0 {
        return Err(Error::validation(
            "targeted joint is in traditional mode; use posterior_r0_traditional",
        ));
    }
    if a.dim() != tj.aux_dim() {
        return Err(Error::validation(format!(
            "selection set dim {} does not match aux dim {}",
            a.dim(),
            tj.aux_dim()
        )));
    }
    if data.len() != tj.data_len() {
        return Err(Error::validation(format!(
            "data length {} does not match m(T+1) = {}",
            data.len(),
            tj.data_len()
        )));
    }
    let n = tj.state_dim();
    let q = tj.aux_dim();
    let cond = if data.is_empty() {
        let keep: Vec<usize> = (0..n + q).collect();
        tj.dist().marginalize(&keep)?
    } else {
        tj.dist().condition(&tj.data_indices(), data)?
    };
    let nu_keep: Vec<usize> = (n..n + q).collect();
    let nu_marginal = cond.marginalize(&nu_keep)?;
    let nu_draws = gibbs_truncated(&nu_marginal, a, cfg)?;
    let field_cond = FieldConditional::from_joint(&cond, n)?;
    let node_sd = DVector::from_fn(n, |i, _| field_cond.cond_cov[(i, i)].max(1e-300).sqrt());
    Ok(SelectionPosterior {
        cond_joint: cond,
        nu_draws,
        field_cond,
        node_sd,
    })
}

/// Selection-model posterior of the initial state.
#[derive(Debug, Clone)]
pub struct SelectionPosterior {
    cond_joint: GaussianDist,
    nu_draws: AuxSampleSet,
    field_cond: FieldConditional,
    node_sd: DVector<f64>,
}

impl SelectionPosterior {
    pub fn state_dim(&self) -> usize {
        self.field_cond.base_mean.len()
    }

    pub fn aux_dim(&self) -> usize {
        self.nu_draws.dim()
    }

    pub fn nu_draws(&self) -> &AuxSampleSet {
        &self.nu_draws
    }

    /// Joint Gaussian `(r_0, nu) | d` before selection.
    pub fn cond_joint(&self) -> &GaussianDist {
        &self.cond_joint
    }

    /// Conditional means of every node for every retained draw
    /// (node-by-draw matrix) — the mixture component centers.
    pub fn conditional_mean_matrix(&self) -> DMatrix<f64> {
        self.field_cond.mean_matrix(&self.nu_draws)
    }

    /// Per-node conditional standard deviation given `(nu, d)`.
    pub fn node_sd(&self, node: usize) -> f64 {
        self.node_sd[node]
    }

    /// Rao-Blackwellized marginal mixture at one node.
    pub fn node_density(&self, node: usize) -> Result<MixtureDensity> {
        if node >= self.state_dim() {
            return Err(Error::validation(format!(
                "node {node} out of range for state dim {}",
                self.state_dim()
            )));
        }
        let s = self.nu_draws.n_samples();
        let mut means = Vec::with_capacity(s);
        let gain_row = self.field_cond.gain.row(node);
        for k in 0..s {
            let mut m = self.field_cond.base_mean[node];
            for i in 0..self.aux_dim() {
                m += gain_row[i] * (self.nu_draws.draws()[(k, i)] - self.field_cond.aux_mean[i]);
            }
            means.push(m);
        }
        MixtureDensity::new(means, self.node_sd[node])
    }

    /// Exact-conditional realizations of the initial state: draws spread
    /// evenly over the retained chain, one Gaussian draw each.
    pub fn realizations(&self, count: usize, seed: u64) -> Result<DMatrix<f64>> {
        if count == 0 {
            return Err(Error::validation("realization count must be positive"));
        }
        let n = self.state_dim();
        let s = self.nu_draws.n_samples();
        let (chol, _) = jittered_cholesky(&self.field_cond.cond_cov)?;
        let l = chol.l();
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x5EA1));
        let mut out = DMatrix::zeros(count, n);
        let mut z = DVector::zeros(n);
        for k in 0..count {
            let idx = (k * s) / count;
            let mean = self.field_cond.mean_for(&self.nu_draws.row(idx));
            for zi in z.iter_mut() {
                *zi = rng.sample(rand_distr::StandardNormal);
            }
            let draw = mean + &l * &z;
            for i in 0..n {
                out[(k, i)] = draw[i];
            }
        }
        Ok(out)
    }
}

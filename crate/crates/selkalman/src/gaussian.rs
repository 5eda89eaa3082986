//! Finite-dimensional Gaussian machinery: construction, marginalization,
//! conditioning, sampling, log-density, and rectangle probabilities
//! `P(x in A)` for separable sets `A` built from interval unions.
//!
//! All operations are pure: they borrow their inputs and return fresh
//! values, so distributions are safe to share across threads. Samplers
//! own a seeded generator and are bit-reproducible for a fixed seed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::univariate;

/// Relative tolerance for covariance symmetry at construction.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Jitter ladder relative to the mean diagonal: start, growth, cap.
const JITTER_REL_START: f64 = 1e-12;
const JITTER_REL_MAX: f64 = 1e-8;

/// Cholesky factorization with the crate-wide jitter policy: symmetrize,
/// then escalate a diagonal jitter by factors of 10 from
/// `1e-12 * mean(diag)` up to `1e-8 * mean(diag)` before giving up.
///
/// Returns the factorization together with the jitter that was applied
/// (0.0 when none was needed).
pub(crate) fn jittered_cholesky(mat: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let k = mat.nrows();
    if k == 0 {
        return Err(Error::validation("cholesky of an empty matrix"));
    }
    let sym = symmetrize(mat);
    if let Some(chol) = Cholesky::new(sym.clone()) {
        return Ok((chol, 0.0));
    }
    let mean_diag = sym.diagonal().iter().sum::<f64>() / k as f64;
    if !(mean_diag > 0.0) {
        return Err(Error::numerical(
            "matrix is not positive definite and has non-positive mean diagonal",
        ));
    }
    let mut jitter = JITTER_REL_START * mean_diag;
    let cap = JITTER_REL_MAX * mean_diag;
    while jitter <= cap * (1.0 + 1e-15) {
        let mut bumped = sym.clone();
        for i in 0..k {
            bumped[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(bumped) {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::numerical(format!(
        "matrix of dim {k} not positive semi-definite within jitter {:.3e}",
        cap
    )))
}

pub(crate) fn symmetrize(mat: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (mat + mat.transpose())
}

/// Deterministic seed splitting (splitmix64). Used to derive independent
/// substreams from a root seed; documented so runs are reproducible.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A finite-dimensional Gaussian `N(mean, cov)`.
///
/// The covariance is symmetrized on construction; positive
/// semi-definiteness is enforced by the jitter policy wherever a
/// factorization is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDist {
    /// Build a distribution, validating dimensions, finiteness and
    /// symmetry (relative tolerance `1e-10`).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if k == 0 {
            return Err(Error::validation("mean must be non-empty"));
        }
        if cov.nrows() != k || cov.ncols() != k {
            return Err(Error::validation(format!(
                "cov must be {k}x{k}, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("mean and cov must be finite"));
        }
        let scale = cov.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let asym = (&cov - cov.transpose())
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        if asym > SYMMETRY_TOL * scale.max(1.0) {
            return Err(Error::validation(format!(
                "cov asymmetry {:.3e} exceeds relative tolerance {:.0e}",
                asym, SYMMETRY_TOL
            )));
        }
        Ok(Self {
            mean,
            cov: symmetrize(&cov),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Check the positive semi-definiteness invariant; returns the jitter
    /// that made the Cholesky succeed (0.0 for a cleanly PD matrix).
    pub fn validate_psd(&self) -> Result<f64> {
        jittered_cholesky(&self.cov).map(|(_, j)| j)
    }

    /// Keep the listed coordinates, in the given order.
    ///
    /// The result is exactly the selected rows of the mean and the
    /// selected rows/columns of the covariance.
    pub fn marginalize(&self, keep: &[usize]) -> Result<GaussianDist> {
        check_index_set(keep, self.dim(), "keep")?;
        let mean = DVector::from_fn(keep.len(), |r, _| self.mean[keep[r]]);
        let cov = DMatrix::from_fn(keep.len(), keep.len(), |r, c| self.cov[(keep[r], keep[c])]);
        GaussianDist::new(mean, cov)
    }

    /// Condition on exact observations of the coordinates `obs_idx`.
    ///
    /// Returns the conditional distribution of the remaining coordinates
    /// (in ascending original order); its dimension is `k - obs_idx.len()`.
    /// The conditional covariance does not depend on `obs_val`.
    pub fn condition(&self, obs_idx: &[usize], obs_val: &DVector<f64>) -> Result<GaussianDist> {
        let k = self.dim();
        check_index_set(obs_idx, k, "obs_idx")?;
        if obs_val.len() != obs_idx.len() {
            return Err(Error::validation(format!(
                "obs_val has length {}, expected {}",
                obs_val.len(),
                obs_idx.len()
            )));
        }
        if obs_idx.len() == k {
            return Err(Error::validation("cannot condition on every coordinate"));
        }
        let observed: std::collections::BTreeSet<usize> = obs_idx.iter().copied().collect();
        let kept: Vec<usize> = (0..k).filter(|i| !observed.contains(i)).collect();

        let mu_k = DVector::from_fn(kept.len(), |r, _| self.mean[kept[r]]);
        let mu_o = DVector::from_fn(obs_idx.len(), |r, _| self.mean[obs_idx[r]]);
        let sig_kk = DMatrix::from_fn(kept.len(), kept.len(), |r, c| {
            self.cov[(kept[r], kept[c])]
        });
        let sig_ko = DMatrix::from_fn(kept.len(), obs_idx.len(), |r, c| {
            self.cov[(kept[r], obs_idx[c])]
        });
        let sig_oo = DMatrix::from_fn(obs_idx.len(), obs_idx.len(), |r, c| {
            self.cov[(obs_idx[r], obs_idx[c])]
        });

        let (chol, _) = jittered_cholesky(&sig_oo).map_err(|_| {
            Error::numerical("observed covariance block is singular beyond jitter")
        })?;
        // gain = Sig_ko Sig_oo^{-1}, computed as (Sig_oo^{-1} Sig_ok)^T.
        let gain = chol.solve(&sig_ko.transpose()).transpose();
        let mean = &mu_k + &gain * (obs_val - mu_o);
        let cov = symmetrize(&(&sig_kk - &gain * sig_ko.transpose()));
        GaussianDist::new(mean, cov)
    }

    /// Exact Gaussian log-density at `x`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::validation(format!(
                "x has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        let (chol, _) = jittered_cholesky(&self.cov)?;
        let diff = x - &self.mean;
        let solved = chol.solve(&diff);
        let quad = diff.dot(&solved);
        let mut logdet = 0.0;
        for i in 0..self.dim() {
            let d = chol.l_dirty()[(i, i)];
            if !(d > 0.0) {
                return Err(Error::numerical("invalid Cholesky diagonal"));
            }
            logdet += 2.0 * d.ln();
        }
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        Ok(-0.5 * (self.dim() as f64 * ln_2pi + logdet + quad))
    }

    /// Draw `n_draws` samples (rows). Bit-reproducible for a fixed seed.
    pub fn sample(&self, n_draws: usize, seed: u64) -> Result<DMatrix<f64>> {
        let k = self.dim();
        let mut out = DMatrix::zeros(n_draws, k);
        // A zero covariance is a valid degenerate case: every draw is the mean.
        if self.cov.iter().all(|v| *v == 0.0) {
            for r in 0..n_draws {
                for c in 0..k {
                    out[(r, c)] = self.mean[c];
                }
            }
            return Ok(out);
        }
        let (chol, _) = jittered_cholesky(&self.cov)?;
        let l = chol.l();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut z = DVector::zeros(k);
        for r in 0..n_draws {
            for zi in z.iter_mut() {
                *zi = rng.sample(rand_distr::StandardNormal);
            }
            let draw = &self.mean + &l * &z;
            for c in 0..k {
                out[(r, c)] = draw[c];
            }
        }
        Ok(out)
    }

    /// Monte Carlo estimate of `P(x in a)` with its standard error, via
    /// sequential-conditioning importance sampling on the Cholesky factor
    /// (separation-of-variables estimator). Unbiased; deterministic for a
    /// fixed `cfg.seed`.
    pub fn rect_probability(&self, a: &SelectionSet, cfg: &RectProbConfig) -> Result<RectProbEstimate> {
        let k = self.dim();
        if a.dim() != k {
            return Err(Error::validation(format!(
                "selection set has dim {}, expected {}",
                a.dim(),
                k
            )));
        }
        if cfg.n_samples == 0 {
            return Err(Error::validation("n_samples must be positive"));
        }
        let (chol, _) = jittered_cholesky(&self.cov)?;
        let l = chol.l();
        let mean_diag = self.cov.diagonal().iter().sum::<f64>() / k as f64;
        let pivot_floor = 1e-12 * mean_diag.max(1e-300).sqrt();

        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let mut z = vec![0.0f64; k];
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..cfg.n_samples {
            let mut w = 1.0f64;
            for i in 0..k {
                let mut center = self.mean[i];
                for (j, zj) in z.iter().enumerate().take(i) {
                    center += l[(i, j)] * zj;
                }
                let scale = l[(i, i)];
                if scale <= pivot_floor {
                    // Degenerate direction: the coordinate is deterministic.
                    z[i] = 0.0;
                    if !a.coord(i).contains(center) {
                        w = 0.0;
                        break;
                    }
                    continue;
                }
                let segments = standardized_segments(a.coord(i), center, scale);
                let masses = univariate::segment_masses(&segments);
                if masses.total <= 0.0 {
                    w = 0.0;
                    break;
                }
                let u: f64 = rng.random();
                z[i] = univariate::sample_std_trunc(&segments, &masses, u);
                w *= masses.total;
            }
            sum += w;
            sum_sq += w * w;
        }
        let n = cfg.n_samples as f64;
        let mean = sum / n;
        let var = ((sum_sq - sum * sum / n) / (n - 1.0).max(1.0)).max(0.0);
        Ok(RectProbEstimate {
            probability: mean.clamp(0.0, 1.0),
            std_error: (var / n).sqrt(),
        })
    }
}

/// Transform an interval union into standardized units `(x - center) / scale`
/// with `scale > 0` (order preserved).
pub(crate) fn standardized_segments(iu: &IntervalUnion, center: f64, scale: f64) -> Vec<(f64, f64)> {
    iu.segments()
        .iter()
        .map(|&(lo, hi)| ((lo - center) / scale, (hi - center) / scale))
        .collect()
}

fn check_index_set(idx: &[usize], dim: usize, what: &str) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::validation(format!("{what} must be non-empty")));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &i in idx {
        if i >= dim {
            return Err(Error::validation(format!(
                "{what} index {i} out of range for dim {dim}"
            )));
        }
        if !seen.insert(i) {
            return Err(Error::validation(format!("{what} contains duplicate index {i}")));
        }
    }
    Ok(())
}

/// Configuration of the rectangle-probability estimator.
#[derive(Debug, Clone)]
pub struct RectProbConfig {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for RectProbConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            seed: 0,
        }
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct RectProbEstimate {
    pub probability: f64,
    pub std_error: f64,
}

/// An ordered union of disjoint closed segments of the extended real line.
///
/// Boundary points count as inside. `±inf` bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalUnion {
    segments: Vec<(f64, f64)>,
}

impl IntervalUnion {
    /// Build from segments; they are sorted and must be pairwise disjoint
    /// with `lower < upper` each.
    pub fn new(mut segments: Vec<(f64, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::validation("interval union needs at least one segment"));
        }
        for &(lo, hi) in &segments {
            if lo.is_nan() || hi.is_nan() || !(lo < hi) {
                return Err(Error::validation(format!(
                    "segment ({lo}, {hi}) must satisfy lower < upper"
                )));
            }
        }
        segments.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in segments.windows(2) {
            // Closed segments: touching endpoints overlap.
            if w[1].0 <= w[0].1 {
                return Err(Error::validation(format!(
                    "segments ({}, {}) and ({}, {}) overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn whole_line() -> Self {
        Self {
            segments: vec![(f64::NEG_INFINITY, f64::INFINITY)],
        }
    }

    pub fn at_most(hi: f64) -> Result<Self> {
        Self::new(vec![(f64::NEG_INFINITY, hi)])
    }

    pub fn at_least(lo: f64) -> Result<Self> {
        Self::new(vec![(lo, f64::INFINITY)])
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    /// Closed membership test.
    pub fn contains(&self, x: f64) -> bool {
        self.segments.iter().any(|&(lo, hi)| lo <= x && x <= hi)
    }

    /// Nearest in-set point (ties resolve to the lower segment).
    pub fn project(&self, x: f64) -> f64 {
        if self.contains(x) {
            return x;
        }
        let mut best = f64::NAN;
        let mut best_dist = f64::INFINITY;
        for &(lo, hi) in &self.segments {
            for cand in [lo, hi] {
                if cand.is_finite() {
                    let d = (x - cand).abs();
                    if d < best_dist {
                        best_dist = d;
                        best = cand;
                    }
                }
            }
        }
        // At least one finite endpoint exists unless the union is the whole
        // line, in which case `contains` already returned.
        best
    }

    /// Scale every bound by `factor > 0` (used to express thresholds in
    /// standard-deviation units).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::validation("scale factor must be positive"));
        }
        Self::new(
            self.segments
                .iter()
                .map(|&(lo, hi)| (lo * factor, hi * factor))
                .collect(),
        )
    }
}

/// A separable selection set `A = prod A_i`, one interval union per
/// coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSet {
    per_coordinate: Vec<IntervalUnion>,
}

impl SelectionSet {
    pub fn new(per_coordinate: Vec<IntervalUnion>) -> Result<Self> {
        if per_coordinate.is_empty() {
            return Err(Error::validation("selection set needs at least one coordinate"));
        }
        Ok(Self { per_coordinate })
    }

    /// The case-study form: the same union in every coordinate.
    pub fn uniform(iu: IntervalUnion, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::validation("selection set needs at least one coordinate"));
        }
        Ok(Self {
            per_coordinate: vec![iu; q],
        })
    }

    pub fn full_space(q: usize) -> Result<Self> {
        Self::uniform(IntervalUnion::whole_line(), q)
    }

    pub fn dim(&self) -> usize {
        self.per_coordinate.len()
    }

    pub fn coord(&self, i: usize) -> &IntervalUnion {
        &self.per_coordinate[i]
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, &v)| self.coord(i).contains(v))
    }
}

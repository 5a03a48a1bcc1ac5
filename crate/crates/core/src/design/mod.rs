//! Projection designers.
//!
//! Every designer returns a `d × p` matrix with orthonormal rows. The
//! iterative designers share one update, `Φ ← orth(Φ + η G)`, where `G` is the
//! Euclidean gradient of the objective and `orth` is the polar factor.

mod ascent;
mod diagnostics;
mod lda;
mod shannon;

pub use ascent::{design_ida, design_renyi};
pub use diagnostics::{kkt_residual, kkt_residual_from_gradient, svd_diagnostics, svd_realign, SvdDiagnostics};
pub use lda::{design_lda, lda_directions};
pub use shannon::design_shannon;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::GaussStats;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Relative objective improvement regarded as no progress.
    pub rel_obj_tol: f64,
    /// Stop when the Frobenius norm of the tangent gradient drops below this.
    pub grad_tol: f64,
    /// Consecutive no-progress iterations before stopping.
    pub patience: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            rel_obj_tol: 1e-4,
            grad_tol: 1e-8,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Backtracking {
    pub enabled: bool,
    /// Step multiplier after a rejected trial; its inverse is applied after an
    /// accepted step.
    pub shrink: f64,
    pub max_halvings: usize,
}

impl Default for Backtracking {
    fn default() -> Self {
        Self {
            enabled: true,
            shrink: 0.5,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// LDA directions, padded with random orthonormal rows when `d > M − 1`.
    #[default]
    Lda,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignerConfig {
    pub step_size: f64,
    pub max_iters: usize,
    /// Monte-Carlo particles per gradient estimate (Shannon designer only).
    pub n_particles: usize,
    pub seed: u64,
    pub convergence: Convergence,
    pub backtracking: Backtracking,
    /// Reuse one particle set for every iteration instead of redrawing.
    pub freeze_particles: bool,
    pub init: Initialization,
    /// After convergence, restart the Shannon ascent from the eigen-aligned
    /// projection and keep whichever ends with higher MI.
    pub realign_restart: bool,
}

impl Default for DesignerConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            max_iters: 300,
            n_particles: crate::mmse::DEFAULT_PARTICLES,
            seed: 0,
            convergence: Convergence::default(),
            backtracking: Backtracking::default(),
            freeze_particles: false,
            init: Initialization::default(),
            realign_restart: false,
        }
    }
}

impl DesignerConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument("step_size must be > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if self.backtracking.enabled && !(self.backtracking.shrink > 0.0 && self.backtracking.shrink < 1.0) {
            return Err(Error::InvalidArgument("backtracking shrink must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub projection: DMatrix<f64>,
    /// Objective at every visited iterate, starting with the initialization.
    pub objective_trace: Vec<f64>,
    pub kkt_residual_trace: Vec<f64>,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
    /// Free-form remarks such as ridge adjustments.
    pub notes: Vec<String>,
}

impl DesignReport {
    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

/// Nearest matrix with orthonormal rows (polar factor): `A = U D Vᵀ ↦ U Vᵀ`.
pub fn orthonormalize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, p) = a.shape();
    if d == 0 || d > p {
        return Err(Error::Dimension(format!("cannot orthonormalize the rows of a {d}x{p} matrix")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * p as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < d || smax == 0.0 {
        return Err(Error::RankDeficient { rows: d, cols: p, rank });
    }
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    Ok(u * v_t)
}

/// Gaussian `d × p` matrix with orthonormalized rows.
pub fn random_projection(p: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = rng::stream(seed, 0);
    let a = DMatrix::from_fn(d, p, |_, _| StandardNormal.sample(&mut rng));
    orthonormalize(&a)
}

pub fn random_baseline(p: usize, d: usize, seed: u64) -> Result<DesignReport> {
    Ok(DesignReport {
        projection: random_projection(p, d, seed)?,
        objective_trace: Vec::new(),
        kkt_residual_trace: Vec::new(),
        iterations_run: 0,
        stop_reason: StopReason::Converged,
        notes: Vec::new(),
    })
}

/// Starting point for the iterative designers.
pub fn initial_projection(stats: &GaussStats, d: usize, cfg: &DesignerConfig) -> Result<DMatrix<f64>> {
    let p = stats.dim();
    match cfg.init {
        Initialization::Random => random_projection(p, d, rng::derive_seed(cfg.seed, u64::MAX)),
        Initialization::Lda => {
            let (lda, _) = lda_directions(stats, d)?;
            if lda.nrows() == d {
                return Ok(lda);
            }
            let fill = random_projection(p, d, rng::derive_seed(cfg.seed, u64::MAX))?;
            Ok(complete_rows(&lda, &fill, d))
        }
    }
}

/// Extends orthonormal `rows` to `d` orthonormal rows using directions from
/// `candidates` projected onto the orthogonal complement.
pub(crate) fn complete_rows(rows: &DMatrix<f64>, candidates: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let p = candidates.ncols();
    let mut out: Vec<nalgebra::DVector<f64>> = rows.row_iter().map(|r| r.transpose()).collect();
    for cand in candidates.row_iter() {
        if out.len() == d {
            break;
        }
        let mut v = cand.transpose();
        for _ in 0..2 {
            for u in &out {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            out.push(v / n);
        }
    }
    // Fall back to coordinate axes if the candidates were exhausted.
    let mut axis = 0;
    while out.len() < d && axis < p {
        let mut v = nalgebra::DVector::zeros(p);
        v[axis] = 1.0;
        for _ in 0..2 {
            for u in &out {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            out.push(v / n);
        }
        axis += 1;
    }
    DMatrix::from_fn(d, p, |i, j| out[i][j])
}

/// Tangent component of `G` at `Φ` on the set of matrices with orthonormal
/// rows: `G − sym(GΦᵀ) Φ`.
pub(crate) fn tangent_gradient(phi: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let s = g * phi.transpose();
    let sym = crate::linalg::symmetrize(&s);
    g - sym * phi
}

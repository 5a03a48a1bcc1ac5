use nalgebra::DMatrix;

use super::{initial_projection, kkt_residual_from_gradient, orthonormalize, svd_realign, tangent_gradient, DesignReport, DesignerConfig, StopReason};
use crate::error::{Error, Result};
use crate::measurement::MeasurementModel;
use crate::mixture::SignalModel;
use crate::mmse::{estimate_equivalent_mmse, gradient_from_sigma_tilde};
use crate::objectives::{estimate_shannon_mi, GaussStats};
use crate::rng::derive_seed;

/// Smoothing weight of the newest MI evaluation in the convergence test.
const EMA_ALPHA: f64 = 0.3;
const EVAL_STREAM: u64 = 0;
const MAX_STEP_GROWTH: f64 = 1048576.0;

struct Evaluator<'a> {
    model: &'a SignalModel,
    base: MeasurementModel,
    cfg: &'a DesignerConfig,
    eval_seed: u64,
}

impl Evaluator<'_> {
    fn particle_seed(&self, iter: usize) -> u64 {
        if self.cfg.freeze_particles {
            self.eval_seed
        } else {
            derive_seed(self.cfg.seed, iter as u64 + 1)
        }
    }

    fn mi(&self, meas: &MeasurementModel) -> Result<f64> {
        Ok(estimate_shannon_mi(self.model, meas, self.cfg.n_particles.max(2), self.eval_seed)?.nats)
    }

    /// Gradient `RΦΣ̃` and `Σ̃` at `phi` from the particle set of iteration `iter`.
    fn gradient(&self, phi: &DMatrix<f64>, iter: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let meas = self.base.with_projection(phi.clone())?;
        let st = estimate_equivalent_mmse(self.model, &meas, self.cfg.n_particles, self.particle_seed(iter))?;
        Ok((gradient_from_sigma_tilde(&meas, &st)?, st))
    }

    fn objective(&self, phi: &DMatrix<f64>) -> Result<f64> {
        self.mi(&self.base.with_projection(phi.clone())?)
    }
}

struct Run {
    report: DesignReport,
    best_mi: f64,
    last_sigma_tilde: DMatrix<f64>,
}

fn run(ev: &Evaluator, phi0: DMatrix<f64>) -> Result<Run> {
    let cfg = ev.cfg;
    let conv = cfg.convergence;
    // Line search needs a deterministic objective, i.e. frozen particles;
    // otherwise the step is fixed.
    let backtrack = cfg.backtracking.enabled && cfg.freeze_particles;
    let mut phi = phi0;
    let mut value = ev.objective(&phi)?;
    let (mut grad, mut st) = ev.gradient(&phi, 0)?;
    let mut objective_trace = vec![value];
    let mut kkt_residual_trace = vec![kkt_residual_from_gradient(&phi, &grad)];
    let mut best = (value, phi.clone());
    let mut ema = value;
    let mut eta = cfg.step_size;
    let mut quiet = 0;
    let mut iterations_run = 0;
    let mut stop_reason = StopReason::MaxIters;

    if ev.model.n_classes() == 1 {
        return Ok(Run {
            report: DesignReport {
                projection: phi,
                objective_trace,
                kkt_residual_trace,
                iterations_run: 0,
                stop_reason: StopReason::Converged,
                notes: vec!["single class: mutual information is identically zero".into()],
            },
            best_mi: value,
            last_sigma_tilde: st,
        });
    }

    for t in 1..=cfg.max_iters {
        if tangent_gradient(&phi, &grad).norm() <= conv.grad_tol {
            stop_reason = StopReason::Converged;
            break;
        }
        iterations_run += 1;
        let tries = if backtrack { cfg.backtracking.max_halvings + 1 } else { 1 };
        let mut accepted = None;
        for _ in 0..tries {
            let trial = orthonormalize(&(&phi + &grad * eta))?;
            let v = ev.objective(&trial)?;
            if !backtrack || v >= value {
                accepted = Some((trial, v));
                break;
            }
            eta *= cfg.backtracking.shrink;
        }
        let Some((next, v)) = accepted else {
            stop_reason = StopReason::Stalled;
            break;
        };
        let (g, s) = ev.gradient(&next, t)?;
        if backtrack {
            eta = (eta / cfg.backtracking.shrink).min(cfg.step_size * MAX_STEP_GROWTH);
        }
        phi = next;
        value = v;
        grad = g;
        st = s;
        objective_trace.push(value);
        kkt_residual_trace.push(kkt_residual_from_gradient(&phi, &grad));
        if value > best.0 {
            best = (value, phi.clone());
        }
        let new_ema = EMA_ALPHA * value + (1.0 - EMA_ALPHA) * ema;
        let gain = (new_ema - ema) / ema.abs().max(1e-12);
        ema = new_ema;
        quiet = if gain < conv.rel_obj_tol { quiet + 1 } else { 0 };
        if quiet >= conv.patience {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    let mut notes = Vec::new();
    if best.1 != phi {
        notes.push(format!("returned iterate with highest evaluated MI ({:.6} nats)", best.0));
    }
    Ok(Run {
        report: DesignReport {
            projection: best.1,
            objective_trace,
            kkt_residual_trace,
            iterations_run,
            stop_reason,
            notes,
        },
        best_mi: best.0,
        last_sigma_tilde: st,
    })
}

/// Maximizes the Shannon mutual information `I(C;Y)` by projected gradient
/// ascent with the Monte-Carlo gradient `RΦΣ̃`.
///
/// The objective trace holds MI estimates (nats) on a fixed evaluation
/// particle set, so iterates are comparable. The returned projection is the
/// iterate with the highest evaluated MI.
pub fn design_shannon(model: &SignalModel, d: usize, noise_precision: &DMatrix<f64>, cfg: &DesignerConfig) -> Result<DesignReport> {
    cfg.validate()?;
    let p = model.dim();
    if d == 0 || d > p {
        return Err(Error::InvalidArgument(format!("need 1 <= d <= {p}, got {d}")));
    }
    if cfg.n_particles == 0 {
        return Err(Error::InvalidArgument("n_particles must be >= 1".into()));
    }
    crate::linalg::check_square(noise_precision, d, "noise precision")?;
    let stats = GaussStats::from_model(model);
    let phi0 = initial_projection(&stats, d, cfg)?;
    let ev = Evaluator {
        model,
        base: MeasurementModel::new(phi0.clone(), noise_precision.clone())?,
        cfg,
        eval_seed: derive_seed(cfg.seed, EVAL_STREAM),
    };
    let first = run(&ev, phi0)?;
    if !cfg.realign_restart || model.n_classes() == 1 {
        return Ok(first.report);
    }
    let meas = ev.base.with_projection(first.report.projection.clone())?;
    let realigned = svd_realign(&meas, &first.last_sigma_tilde)?;
    let second = run(&ev, realigned)?;
    let (mut keep, other, which) = if second.best_mi > first.best_mi {
        (second, first, "realigned restart")
    } else {
        (first, second, "first run")
    };
    keep.report.notes.push(format!(
        "kept {which}: {:.6} vs {:.6} nats",
        keep.best_mi, other.best_mi
    ));
    Ok(keep.report)
}

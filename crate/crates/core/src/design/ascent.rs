use nalgebra::DMatrix;

use super::{initial_projection, kkt_residual_from_gradient, orthonormalize, tangent_gradient, DesignReport, DesignerConfig, StopReason};
use crate::error::{Error, Result};
use crate::measurement::MeasurementModel;
use crate::mixture::SignalModel;
use crate::objectives::{ida_value_and_gradient, renyi_value_and_gradient, GaussStats};

const MAX_STEP_GROWTH: f64 = 1048576.0;

fn check_d(p: usize, d: usize, noise_precision: &DMatrix<f64>) -> Result<()> {
    if d == 0 || d > p {
        return Err(Error::InvalidArgument(format!("need 1 <= d <= {p}, got {d}")));
    }
    crate::linalg::check_square(noise_precision, d, "noise precision")
}

/// Projected ascent on a deterministic objective with optional backtracking.
pub(crate) fn ascend<F>(phi0: DMatrix<f64>, cfg: &DesignerConfig, mut eval: F) -> Result<DesignReport>
where
    F: FnMut(&DMatrix<f64>) -> Result<(f64, DMatrix<f64>)>,
{
    cfg.validate()?;
    let bt = cfg.backtracking;
    let conv = cfg.convergence;
    let mut phi = phi0;
    let (mut value, mut grad) = eval(&phi)?;
    let mut objective_trace = vec![value];
    let mut kkt_residual_trace = vec![kkt_residual_from_gradient(&phi, &grad)];
    let mut eta = cfg.step_size;
    let mut quiet = 0;
    let mut stop_reason = StopReason::MaxIters;
    let mut iterations_run = 0;

    for _ in 0..cfg.max_iters {
        if tangent_gradient(&phi, &grad).norm() <= conv.grad_tol {
            stop_reason = StopReason::Converged;
            break;
        }
        iterations_run += 1;
        let mut accepted = None;
        let tries = if bt.enabled { bt.max_halvings + 1 } else { 1 };
        for _ in 0..tries {
            let trial = orthonormalize(&(&phi + &grad * eta))?;
            let (v, g) = eval(&trial)?;
            if !bt.enabled || v >= value {
                accepted = Some((trial, v, g));
                break;
            }
            eta *= bt.shrink;
        }
        let Some((next, v, g)) = accepted else {
            stop_reason = StopReason::Stalled;
            break;
        };
        let gain = (v - value) / value.abs().max(1e-12);
        phi = next;
        value = v;
        grad = g;
        objective_trace.push(value);
        kkt_residual_trace.push(kkt_residual_from_gradient(&phi, &grad));
        if bt.enabled {
            eta = (eta / bt.shrink).min(cfg.step_size * MAX_STEP_GROWTH);
        }
        quiet = if gain < conv.rel_obj_tol { quiet + 1 } else { 0 };
        if quiet >= conv.patience {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    Ok(DesignReport {
        projection: phi,
        objective_trace,
        kkt_residual_trace,
        iterations_run,
        stop_reason,
        notes: Vec::new(),
    })
}

/// Maximizes the quadratic Rényi mutual information of the mixture model.
pub fn design_renyi(model: &SignalModel, d: usize, noise_precision: &DMatrix<f64>, cfg: &DesignerConfig) -> Result<DesignReport> {
    check_d(model.dim(), d, noise_precision)?;
    let stats = GaussStats::from_model(model);
    let phi0 = initial_projection(&stats, d, cfg)?;
    let base = MeasurementModel::new(phi0.clone(), noise_precision.clone())?;
    ascend(phi0, cfg, |phi| renyi_value_and_gradient(model, &base.with_projection(phi.clone())?))
}

/// Maximizes the heteroscedastic Gaussian surrogate `I_IDA`.
pub fn design_ida(stats: &GaussStats, d: usize, noise_precision: &DMatrix<f64>, cfg: &DesignerConfig) -> Result<DesignReport> {
    check_d(stats.dim(), d, noise_precision)?;
    let phi0 = initial_projection(stats, d, cfg)?;
    let base = MeasurementModel::new(phi0.clone(), noise_precision.clone())?;
    ascend(phi0, cfg, |phi| ida_value_and_gradient(stats, &base.with_projection(phi.clone())?))
}

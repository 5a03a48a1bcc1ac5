use nalgebra::DMatrix;

use super::{complete_rows, kkt_residual_from_gradient, orthonormalize, DesignReport, StopReason};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, CholeskyFactor};
use crate::measurement::MeasurementModel;
use crate::objectives::{lda_value_and_gradient, GaussStats};

const SCATTER_RIDGE: f64 = 1e-9;
const EIGEN_TOL: f64 = 1e-10;

/// Regularized Cholesky of a scatter matrix; returns the factor and the ridge
/// that was added to its diagonal.
pub(crate) fn ridged_cholesky(s: &DMatrix<f64>) -> Result<(CholeskyFactor, f64)> {
    let p = s.nrows();
    let trace = s.trace();
    let mut ridge = if trace > 0.0 { SCATTER_RIDGE * trace / p as f64 } else { SCATTER_RIDGE };
    for _ in 0..12 {
        let mut a = s.clone();
        for i in 0..p {
            a[(i, i)] += ridge;
        }
        if let Some(chol) = CholeskyFactor::new(&a) {
            return Ok((chol, ridge));
        }
        ridge *= 10.0;
    }
    Err(Error::not_pd("within-class scatter even after ridge regularization"))
}

/// Orthonormal rows spanning the leading generalized eigenvectors of
/// (between-class scatter, within-class scatter). At most `min(d, M − 1)`
/// rows are returned: directions with zero discriminant power are dropped.
/// The second value is the ridge added to the within-class scatter.
pub fn lda_directions(stats: &GaussStats, d: usize) -> Result<(DMatrix<f64>, f64)> {
    let p = stats.dim();
    if d == 0 || d > p {
        return Err(Error::InvalidArgument(format!("need 1 <= d <= {p}, got {d}")));
    }
    let (chol, ridge) = ridged_cholesky(&stats.within_class_scatter())?;
    let sb = stats.between_class_scatter();
    // C = L⁻¹ S_b L⁻ᵀ
    let half = chol.whiten_matrix(&sb);
    let c = chol.whiten_matrix(&half.transpose());
    let (values, vectors) = sym_eigen_desc(&c);
    let lmax = values[0].max(0.0);
    let k = values
        .iter()
        .take(d)
        .take_while(|&&l| l > EIGEN_TOL * (1.0 + lmax))
        .count();
    if k == 0 {
        return Ok((DMatrix::zeros(0, p), ridge));
    }
    let lt = chol.l().transpose();
    let u = vectors.columns(0, k).clone_owned();
    let directions = lt
        .solve_upper_triangular(&u)
        .expect("cholesky diagonal is positive");
    Ok((orthonormalize(&directions.transpose())?, ridge))
}

/// Closed-form LDA projection. Rows beyond the discriminant directions come
/// from the principal subspace of the pooled covariance restricted to the
/// orthogonal complement of those directions.
pub fn design_lda(stats: &GaussStats, d: usize, noise_precision: &DMatrix<f64>) -> Result<DesignReport> {
    let p = stats.dim();
    let (lda, ridge) = lda_directions(stats, d)?;
    let mut notes = vec![format!("within-class ridge {ridge:.3e}")];
    let projection = if lda.nrows() == d {
        lda
    } else {
        let k = lda.nrows();
        let proj = DMatrix::<f64>::identity(p, p) - lda.transpose() * &lda;
        let restricted = &proj * &stats.pooled_cov * &proj;
        let (_, vecs) = sym_eigen_desc(&restricted);
        notes.push(format!("{} of {d} rows from pooled-covariance principal directions", d - k));
        complete_rows(&lda, &vecs.transpose(), d)
    };
    let meas = MeasurementModel::new(projection.clone(), noise_precision.clone())?;
    let (value, grad) = lda_value_and_gradient(stats, &meas)?;
    Ok(DesignReport {
        kkt_residual_trace: vec![kkt_residual_from_gradient(&projection, &grad)],
        projection,
        objective_trace: vec![value],
        iterations_run: 0,
        stop_reason: StopReason::Converged,
        notes,
    })
}

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormality_error, sym_eigen_desc, symmetrize};
use crate::measurement::MeasurementModel;

/// Distance of `S = G Φᵀ` from the fixed-point form `S = c I`, `c ≥ 0`:
///
/// ```text
/// ‖S − Sᵀ‖_F / ‖S‖_F  +  min_{c ≥ 0} ‖sym(S) − c I‖_F / ‖S‖_F
/// ```
///
/// With `G = RΦΣ̃` this measures how far `Φ` is from satisfying the KKT
/// condition of the trace-constrained problem. Zero `S` has residual 0.
pub fn kkt_residual_from_gradient(phi: &DMatrix<f64>, gradient: &DMatrix<f64>) -> f64 {
    let s = gradient * phi.transpose();
    let norm = s.norm();
    if norm == 0.0 || !norm.is_finite() {
        return 0.0;
    }
    let d = s.nrows();
    let asym = (&s - s.transpose()).norm() / norm;
    let sym = symmetrize(&s);
    let c = (sym.trace() / d as f64).max(0.0);
    let dev = (sym - DMatrix::identity(d, d) * c).norm() / norm;
    asym + dev
}

/// KKT residual of the Shannon objective at `meas.projection()`, using
/// `S = RΦΣ̃Φᵀ`.
pub fn kkt_residual(meas: &MeasurementModel, sigma_tilde: &DMatrix<f64>) -> Result<f64> {
    let phi = meas.projection();
    if orthonormality_error(phi) > 1e-8 {
        return Err(Error::InvalidArgument("KKT residual needs a projection with orthonormal rows".into()));
    }
    let g = crate::mmse::gradient_from_sigma_tilde(meas, sigma_tilde)?;
    Ok(kkt_residual_from_gradient(phi, &g))
}

fn is_isotropic(r: &DMatrix<f64>) -> bool {
    let d = r.nrows();
    let c = r.trace() / d as f64;
    (r - DMatrix::identity(d, d) * c).norm() <= 1e-12 * r.norm()
}

/// Unit-singular-value projection with right singular vectors equal to the
/// leading eigenvectors of `Σ̃` and left singular vectors equal to the
/// eigenvectors of `R` (largest precision paired with largest eigenvalue).
/// For isotropic `R` the left factor is the identity, so the rows are the
/// leading eigenvectors themselves.
pub fn svd_realign(meas: &MeasurementModel, sigma_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = meas.dim_in();
    let d = meas.dim_out();
    crate::linalg::check_square(sigma_tilde, p, "equivalent MMSE matrix")?;
    let (_, vecs) = sym_eigen_desc(sigma_tilde);
    let v = vecs.columns(0, d).clone_owned();
    let r = meas.noise_precision();
    let u = if is_isotropic(r) {
        DMatrix::identity(d, d)
    } else {
        sym_eigen_desc(r).1
    };
    Ok(u * v.transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdDiagnostics {
    /// `Φ = U_Φ diag(D_Φ) V_Φᵀ`; `phi_v_t` is `d × p`.
    pub phi_u: DMatrix<f64>,
    pub phi_singular_values: DVector<f64>,
    pub phi_v_t: DMatrix<f64>,
    /// Eigenvectors of `R` (columns, descending eigenvalue).
    pub noise_eigvecs: DMatrix<f64>,
    /// Eigenvectors of `Σ̃` (columns, descending eigenvalue).
    pub sigma_tilde_eigvecs: DMatrix<f64>,
    pub sigma_tilde_eigvals: DVector<f64>,
    /// For each right singular vector of `Φ`, the norm of its projection onto
    /// the span of the leading `d` eigenvectors of `Σ̃`.
    pub alignment_scores: Vec<f64>,
}

impl SvdDiagnostics {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.phi_u * DMatrix::from_diagonal(&self.phi_singular_values) * &self.phi_v_t
    }
}

pub fn svd_diagnostics(meas: &MeasurementModel, sigma_tilde: &DMatrix<f64>) -> Result<SvdDiagnostics> {
    let p = meas.dim_in();
    let d = meas.dim_out();
    crate::linalg::check_square(sigma_tilde, p, "equivalent MMSE matrix")?;
    let svd = meas.projection().clone().svd(true, true);
    let phi_u = svd.u.expect("requested");
    let phi_v_t = svd.v_t.expect("requested");
    let (sigma_tilde_eigvals, sigma_tilde_eigvecs) = sym_eigen_desc(sigma_tilde);
    let (_, noise_eigvecs) = sym_eigen_desc(meas.noise_precision());
    let top = sigma_tilde_eigvecs.columns(0, d);
    let alignment_scores = phi_v_t
        .row_iter()
        .map(|row| (top.transpose() * row.transpose()).norm().min(1.0))
        .collect();
    Ok(SvdDiagnostics {
        phi_u,
        phi_singular_values: svd.singular_values,
        phi_v_t,
        noise_eigvecs,
        sigma_tilde_eigvecs,
        sigma_tilde_eigvals,
        alignment_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::principal_angles;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn isotropic_sigma_tilde_has_zero_residual() {
        let phi = crate::design::random_projection(5, 3, 2).unwrap();
        let meas = MeasurementModel::new(phi, DMatrix::identity(3, 3)).unwrap();
        let r = kkt_residual(&meas, &(DMatrix::identity(5, 5) * 2.5)).unwrap();
        assert!(r < 1e-12);
        assert_eq!(kkt_residual(&meas, &DMatrix::zeros(5, 5)).unwrap(), 0.0);
    }

    #[test]
    fn residual_of_unequal_eigenvectors() {
        let st = diag(&[5.0, 4.0, 3.0, 1.0]);
        let phi = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let meas = MeasurementModel::new(phi, DMatrix::identity(2, 2)).unwrap();
        // S = diag(3, 1); best uniform approximation is 2 I.
        let oracle = ((3.0f64 - 2.0).powi(2) + (1.0f64 - 2.0).powi(2)).sqrt() / (9.0f64 + 1.0).sqrt();
        let r = kkt_residual(&meas, &st).unwrap();
        assert!((r - oracle).abs() < 1e-12, "{r} vs {oracle}");
    }

    #[test]
    fn non_orthonormal_projection_is_rejected() {
        let meas = MeasurementModel::new(DMatrix::from_row_slice(1, 2, &[2.0, 0.0]), DMatrix::identity(1, 1)).unwrap();
        assert!(kkt_residual(&meas, &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn realign_picks_leading_eigenvectors() {
        let st = diag(&[4.0, 3.0, 2.0, 1.0]);
        let phi = crate::design::random_projection(4, 2, 9).unwrap();
        let meas = MeasurementModel::isotropic(phi, 1e-6).unwrap();
        let out = svd_realign(&meas, &st).unwrap();
        assert!((out[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((out[(1, 1)].abs() - 1.0).abs() < 1e-12);
        assert!(orthonormality_error(&out) < 1e-12);

        let meas2 = MeasurementModel::isotropic(out.clone(), 1e-6).unwrap();
        let again = svd_realign(&meas2, &st).unwrap();
        let angles = principal_angles(&out, &again).unwrap();
        assert!(angles.iter().all(|a| *a <= 1e-10));
    }

    #[test]
    fn diagnostics_reconstruct_projection() {
        let phi = crate::design::random_projection(6, 3, 4).unwrap();
        let meas = MeasurementModel::isotropic(phi.clone(), 1e-6).unwrap();
        let st = diag(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        let diag = svd_diagnostics(&meas, &st).unwrap();
        assert!((diag.reconstruct() - phi).amax() < 1e-10);
        assert!(diag.alignment_scores.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}

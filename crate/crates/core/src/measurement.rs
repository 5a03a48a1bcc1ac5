use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_square, CholeskyFactor};

/// Linear Gaussian channel `y = Φ x + ε`, `ε ~ N(0, R⁻¹)`.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    projection: DMatrix<f64>,
    noise_precision: DMatrix<f64>,
    noise_covariance: DMatrix<f64>,
    precision_chol: CholeskyFactor,
}

impl MeasurementModel {
    pub fn new(projection: DMatrix<f64>, noise_precision: DMatrix<f64>) -> Result<Self> {
        let (d, p) = projection.shape();
        if d == 0 || d > p {
            return Err(Error::Dimension(format!(
                "projection is {d}x{p}; need 1 <= d <= p"
            )));
        }
        check_square(&noise_precision, d, "noise precision")?;
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("projection has non-finite entries".into()));
        }
        let noise_precision = crate::linalg::symmetrize(&noise_precision);
        let precision_chol =
            CholeskyFactor::new(&noise_precision).ok_or_else(|| Error::not_pd("noise precision"))?;
        let noise_covariance = crate::linalg::symmetrize(&precision_chol.inverse());
        Ok(Self {
            projection,
            noise_precision,
            noise_covariance,
            precision_chol,
        })
    }

    /// `R⁻¹ = ν I_d`.
    pub fn isotropic(projection: DMatrix<f64>, noise_variance: f64) -> Result<Self> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        let d = projection.nrows();
        Self::new(projection, DMatrix::identity(d, d) / noise_variance)
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn noise_precision(&self) -> &DMatrix<f64> {
        &self.noise_precision
    }

    pub fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.noise_covariance
    }

    pub fn dim_in(&self) -> usize {
        self.projection.ncols()
    }

    pub fn dim_out(&self) -> usize {
        self.projection.nrows()
    }

    /// Same noise, different projection.
    pub fn with_projection(&self, projection: DMatrix<f64>) -> Result<Self> {
        Self::new(projection, self.noise_precision.clone())
    }

    /// Maps a standard normal vector to a draw from `N(0, R⁻¹)`.
    pub fn color_noise(&self, e: &DVector<f64>) -> DVector<f64> {
        // R = L Lᵀ  =>  L⁻ᵀ e has covariance R⁻¹.
        self.precision_chol
            .l()
            .transpose()
            .solve_upper_triangular(e)
            .expect("cholesky diagonal is positive")
    }

    /// Matrix `C` with `C Cᵀ = R⁻¹`, applied to a standard normal vector of
    /// length `C.ncols()`. With orthonormal rows it is `R^{-1/2} Φ`, so the
    /// noise cloud rotates with `Φ → QΦ, R → QRQᵀ` and Monte-Carlo estimates
    /// stay invariant on a fixed seed.
    pub(crate) fn noise_colorer(&self) -> DMatrix<f64> {
        if crate::linalg::orthonormality_error(&self.projection) <= 1e-10 {
            let (vals, vecs) = crate::linalg::sym_eigen_desc(&self.noise_covariance);
            let root = &vecs * DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt())) * vecs.transpose();
            return root * &self.projection;
        }
        let d = self.dim_out();
        let lt = self.precision_chol.l().transpose();
        lt.solve_upper_triangular(&DMatrix::identity(d, d))
            .expect("cholesky diagonal is positive")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wide_noise_and_tall_projection() {
        assert!(MeasurementModel::isotropic(DMatrix::zeros(3, 2), 1.0).is_err());
        assert!(MeasurementModel::new(DMatrix::zeros(1, 2), DMatrix::identity(2, 2)).is_err());
        assert!(MeasurementModel::isotropic(DMatrix::zeros(1, 2), 0.0).is_err());
    }

    #[test]
    fn colored_noise_has_inverse_precision_covariance() {
        let r = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let m = MeasurementModel::new(DMatrix::identity(2, 3), r.clone()).unwrap();
        let c = m.noise_colorer();
        assert_eq!(c.ncols(), 3);
        assert!((&c * c.transpose() - r.clone().try_inverse().unwrap()).amax() < 1e-12);
        let wide = MeasurementModel::new(DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 2.0]), r.clone()).unwrap();
        let c = wide.noise_colorer();
        assert!((&c * c.transpose() - r.try_inverse().unwrap()).amax() < 1e-12);
        let e = DVector::from_vec(vec![0.3, -1.2]);
        assert!((wide.color_noise(&e) - &c * &e).amax() < 1e-12);
    }
}

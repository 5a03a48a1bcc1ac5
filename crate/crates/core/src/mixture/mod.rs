//! Class-conditional Gaussian mixture signal model.
//!
//! A [`SignalModel`] is a prior over signals `x ∈ Rᵖ` in which the class
//! label `m` is drawn with probability `w_m` and the signal is then drawn
//! from that class's own Gaussian mixture ([`ClassGmm`]).

mod em;
mod sample;

pub use em::{fit_class_gmm, fit_class_gmm_detailed, CovarianceFloor, EmConfig, EmFit};
pub use sample::{sample_joint, JointSample};

use nalgebra::{DMatrix, DVector};

use crate::error::{ComponentId, Error, Result};
use crate::linalg::{log_sum_exp, CholeskyFactor, LN_2PI};

const SYMMETRY_TOL: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-12;

/// `log N(x; mean, covariance)` evaluated through a Cholesky factor.
pub fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, covariance: &DMatrix<f64>) -> Result<f64> {
    let p = mean.len();
    if x.len() != p || covariance.nrows() != p || covariance.ncols() != p {
        return Err(Error::Dimension(format!(
            "x has length {}, mean length {p}, covariance {}x{}",
            x.len(),
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    let chol = CholeskyFactor::new(covariance).ok_or_else(|| Error::not_pd("covariance"))?;
    Ok(logpdf_with_factor(x, mean, &chol))
}

pub(crate) fn logpdf_with_factor(x: &DVector<f64>, mean: &DVector<f64>, chol: &CholeskyFactor) -> f64 {
    let r = x - mean;
    -0.5 * (mean.len() as f64 * LN_2PI + chol.log_det() + chol.quad_form(&r))
}

/// One Gaussian `N(μ, Ω)` with its Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: CholeskyFactor,
}

impl PartialEq for GaussianComponent {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.covariance == other.covariance
    }
}

impl GaussianComponent {
    /// Validates shape, symmetry (to 1e-12 relative) and positive
    /// definiteness. The stored covariance is exactly symmetric.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if p == 0 {
            return Err(Error::InvalidModel("component mean is empty".into()));
        }
        if covariance.nrows() != p || covariance.ncols() != p {
            return Err(Error::Dimension(format!(
                "mean has length {p} but covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("component has non-finite entries".into()));
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        for i in 0..p {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidModel(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let covariance = crate::linalg::symmetrize(&covariance);
        let chol = CholeskyFactor::new(&covariance).ok_or_else(|| Error::not_pd("component covariance"))?;
        Ok(Self {
            mean,
            covariance,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn cholesky(&self) -> &CholeskyFactor {
        &self.chol
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        logpdf_with_factor(x, &self.mean, &self.chol)
    }
}

/// Gaussian mixture for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGmm {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl ClassGmm {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidModel("class mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::InvalidModel(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        check_simplex(&weights, "mixture weights", false)?;
        let p = components[0].dim();
        if components.iter().any(|c| c.dim() != p) {
            return Err(Error::Dimension("mixture components differ in dimension".into()));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn single(component: GaussianComponent) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![component],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut mu = DVector::zeros(self.dim());
        for (w, c) in self.weights.iter().zip(&self.components) {
            mu.axpy(*w, c.mean(), 1.0);
        }
        mu
    }

    /// Covariance of the mixture (moment matched to a single Gaussian).
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let p = self.dim();
        let mut cov = DMatrix::zeros(p, p);
        for (w, c) in self.weights.iter().zip(&self.components) {
            let dm = c.mean() - &mu;
            cov += (c.covariance() + &dm * dm.transpose()) * *w;
        }
        crate::linalg::symmetrize(&cov)
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_pdf(x))
            .collect();
        log_sum_exp(&terms)
    }
}

/// Mixture-of-GMMs prior `p(x) = Σ_m w_m Σ_o π_mo N(x; μ_mo, Ω_mo)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalModel {
    class_priors: Vec<f64>,
    classes: Vec<ClassGmm>,
    dim: usize,
}

impl SignalModel {
    /// Class priors must be strictly positive and sum to one.
    pub fn new(class_priors: Vec<f64>, classes: Vec<ClassGmm>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidModel("model needs at least one class".into()));
        }
        if class_priors.len() != classes.len() {
            return Err(Error::InvalidModel(format!(
                "{} class priors for {} classes",
                class_priors.len(),
                classes.len()
            )));
        }
        check_simplex(&class_priors, "class priors", true)?;
        let dim = classes[0].dim();
        if let Some(m) = classes.iter().position(|c| c.dim() != dim) {
            return Err(Error::Dimension(format!(
                "class {m} has dimension {} but class 0 has {dim}",
                classes[m].dim()
            )));
        }
        Ok(Self {
            class_priors,
            classes,
            dim,
        })
    }

    pub fn class_priors(&self) -> &[f64] {
        &self.class_priors
    }

    pub fn classes(&self) -> &[ClassGmm] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn component(&self, id: ComponentId) -> &GaussianComponent {
        &self.classes[id.class].components()[id.component]
    }

    pub fn component_ids(&self) -> impl Iterator<Item = ComponentId> + '_ {
        self.classes.iter().enumerate().flat_map(|(class, gmm)| {
            (0..gmm.n_components()).map(move |component| ComponentId { class, component })
        })
    }

    pub fn grand_mean(&self) -> DVector<f64> {
        let mut mu = DVector::zeros(self.dim);
        for (w, c) in self.class_priors.iter().zip(&self.classes) {
            mu.axpy(*w, &c.mean(), 1.0);
        }
        mu
    }

    /// `log p(x)` under the full mixture of mixtures.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let terms: Vec<f64> = self
            .class_priors
            .iter()
            .zip(&self.classes)
            .map(|(w, c)| w.ln() + c.log_density(x))
            .collect();
        log_sum_exp(&terms)
    }

    /// Shannon entropy of the class prior, in nats.
    pub fn class_entropy(&self) -> f64 {
        entropy_nats(&self.class_priors)
    }
}

pub(crate) fn entropy_nats(p: &[f64]) -> f64 {
    -p.iter().filter(|&&w| w > 0.0).map(|w| w * w.ln()).sum::<f64>()
}

fn check_simplex(w: &[f64], what: &str, strictly_positive: bool) -> Result<()> {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidModel(format!("{what} must be nonnegative")));
    }
    if strictly_positive && w.iter().any(|v| *v <= 0.0) {
        return Err(Error::InvalidModel(format!("{what} must be strictly positive")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidModel(format!("{what} sum to {s}, expected 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn standard_normal_at_mode() {
        let v = gaussian_logpdf(&DVector::zeros(1), &DVector::zeros(1), &DMatrix::identity(1, 1)).unwrap();
        assert!((v + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn logpdf_at_mean_is_normalizer() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 0.7]);
        let mu = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = gaussian_logpdf(&mu, &mu, &cov).unwrap();
        let expected = -0.5 * ((2.0 * PI).powi(3) * cov.determinant()).ln();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn logpdf_matches_dense_formula() {
        // Oracle: explicit inverse and determinant.
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let mu = DVector::zeros(2);
        let inv = cov.clone().try_inverse().unwrap();
        let r = &x - &mu;
        let q = (r.transpose() * inv * &r)[(0, 0)];
        let oracle = -0.5 * q - 0.5 * ((2.0 * PI).powi(2) * cov.determinant()).ln();
        let v = gaussian_logpdf(&x, &mu, &cov).unwrap();
        assert!((v - oracle).abs() < 1e-12, "{v} vs {oracle}");
    }

    #[test]
    fn non_pd_covariance_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = gaussian_logpdf(&DVector::zeros(2), &DVector::zeros(2), &cov).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
        let err = GaussianComponent::new(DVector::zeros(2), cov).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn asymmetric_covariance_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 1.0]);
        assert!(GaussianComponent::new(DVector::zeros(2), cov).is_err());
    }

    #[test]
    fn priors_must_sum_to_one() {
        let c = ClassGmm::single(GaussianComponent::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap());
        assert!(SignalModel::new(vec![0.6, 0.6], vec![c.clone(), c.clone()]).is_err());
        assert!(SignalModel::new(vec![0.5, 0.5], vec![c.clone(), c]).is_ok());
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        // 1-D model, composite Simpson over [-20σ, 20σ] around the extreme means.
        let comp = |m: f64, v: f64| GaussianComponent::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, v)).unwrap();
        let a = ClassGmm::new(vec![0.3, 0.7], vec![comp(-2.0, 0.5), comp(1.0, 1.5)]).unwrap();
        let b = ClassGmm::single(comp(3.0, 0.8));
        let model = SignalModel::new(vec![0.4, 0.6], vec![a, b]).unwrap();
        let sigma = 1.5f64.sqrt();
        let (lo, hi) = (-2.0 - 20.0 * sigma, 3.0 + 20.0 * sigma);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| model.log_density(&DVector::from_element(1, x)).exp();
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            let x = lo + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        let integral = s * h / 3.0;
        assert!((integral - 1.0).abs() < 1e-6, "{integral}");
    }

    #[test]
    fn moment_matched_covariance() {
        let comp = |m: f64| GaussianComponent::new(DVector::from_element(1, m), DMatrix::identity(1, 1)).unwrap();
        let g = ClassGmm::new(vec![0.5, 0.5], vec![comp(-1.0), comp(1.0)]).unwrap();
        assert!(g.mean()[0].abs() < 1e-15);
        assert!((g.covariance()[(0, 0)] - 2.0).abs() < 1e-15);
    }
}

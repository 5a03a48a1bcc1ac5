//! Exact Bayesian inference of the signal given one measurement.
//!
//! For a component `N(μ, Ω)` observed through `y = Φx + ε`, the predictive
//! density is `N(y; Φμ, ΦΩΦᵀ + R⁻¹)` and the posterior is Gaussian with
//!
//! ```text
//! Ω̃ = (ΦᵀRΦ + Ω⁻¹)⁻¹
//! μ̃ = Ω̃ (ΦᵀR y + Ω⁻¹ μ)
//! ```
//!
//! When `d < p` both are evaluated through the matrix inversion lemma in the
//! `d`-dimensional measurement space: with `S = ΦΩΦᵀ + R⁻¹` and gain
//! `K = ΩΦᵀS⁻¹`, `Ω̃ = Ω − KΦΩ` and `μ̃ = μ + K(y − Φμ)`. Either way the
//! posterior mean is affine in `y`, so [`PosteriorEngine`] caches
//! `μ̃ = offset + gain · y` per component and the posterior covariance, which
//! does not depend on `y`.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{ComponentId, Error, Result};
use crate::linalg::{log_sum_exp, symmetrize, CholeskyFactor, LN_2PI};
use crate::measurement::MeasurementModel;
use crate::mixture::SignalModel;

/// How the `p × p` posterior quantities are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InversionPath {
    /// Matrix inversion lemma when `d < p`, direct inverse otherwise.
    #[default]
    Auto,
    MatrixInversionLemma,
    Direct,
}

struct Projected {
    proj_mean: DVector<f64>,
    predictive: CholeskyFactor,
    offset: DVector<f64>,
    gain: DMatrix<f64>,
}

/// Per-measurement-model cache of every component's predictive and posterior
/// factors. Build once per `(model, Φ, R)`, then evaluate many `y`.
pub struct PosteriorEngine<'a> {
    model: &'a SignalModel,
    meas: &'a MeasurementModel,
    path: InversionPath,
    comps: Vec<Vec<Projected>>,
    log_priors: Vec<f64>,
    log_weights: Vec<Vec<f64>>,
    post_covs: OnceLock<Result<Vec<Vec<Arc<DMatrix<f64>>>>>>,
}

/// Full posterior for one measurement `y`.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// `w̃_m = p(m | y)`.
    pub class_weights: Vec<f64>,
    /// `π̃_mo`.
    pub component_weights: Vec<Vec<f64>>,
    /// `μ̃_mo`.
    pub component_means: Vec<Vec<DVector<f64>>>,
    /// `Ω̃_mo` (independent of `y`, shared with the engine).
    pub component_covs: Vec<Vec<Arc<DMatrix<f64>>>>,
    /// `x_y(m) = Σ_o π̃_mo μ̃_mo`.
    pub class_means: Vec<DVector<f64>>,
    /// `x_y = Σ_m w̃_m x_y(m)`.
    pub global_mean: DVector<f64>,
    /// `log p(y)`.
    pub log_marginal: f64,
}

/// Weights and means only; what the Monte-Carlo estimators need.
#[derive(Debug, Clone)]
pub(crate) struct PosteriorMeans {
    pub class_weights: Vec<f64>,
    pub component_weights: Vec<Vec<f64>>,
    pub component_means: Vec<Vec<DVector<f64>>>,
    pub class_means: Vec<DVector<f64>>,
    pub global_mean: DVector<f64>,
}

impl<'a> PosteriorEngine<'a> {
    pub fn new(model: &'a SignalModel, meas: &'a MeasurementModel) -> Result<Self> {
        Self::with_path(model, meas, InversionPath::Auto)
    }

    pub fn with_path(model: &'a SignalModel, meas: &'a MeasurementModel, path: InversionPath) -> Result<Self> {
        let p = model.dim();
        if meas.dim_in() != p {
            return Err(Error::Dimension(format!(
                "model dimension {p} but projection has {} columns",
                meas.dim_in()
            )));
        }
        let d = meas.dim_out();
        let path = match path {
            InversionPath::Auto if d < p => InversionPath::MatrixInversionLemma,
            InversionPath::Auto => InversionPath::Direct,
            other => other,
        };
        let phi = meas.projection();
        let noise_cov = meas.noise_covariance();
        let phi_t_r = phi.transpose() * meas.noise_precision();

        let mut comps = Vec::with_capacity(model.n_classes());
        for (m, gmm) in model.classes().iter().enumerate() {
            let mut row = Vec::with_capacity(gmm.n_components());
            for (o, comp) in gmm.components().iter().enumerate() {
                let id = ComponentId { class: m, component: o };
                let omega = comp.covariance();
                let omega_phi_t = omega * phi.transpose();
                let s = symmetrize(&(phi * &omega_phi_t + noise_cov));
                let predictive =
                    CholeskyFactor::new(&s).ok_or_else(|| Error::component_not_pd(id, "predictive covariance"))?;
                let proj_mean = phi * comp.mean();
                let (offset, gain) = match path {
                    InversionPath::Direct => {
                        let precision = comp.cholesky().inverse();
                        let a = symmetrize(&(&phi_t_r * phi + &precision));
                        let a_chol = CholeskyFactor::new(&a)
                            .ok_or_else(|| Error::component_not_pd(id, "posterior precision"))?;
                        let gain = a_chol.solve_matrix(&phi_t_r);
                        let offset = a_chol.solve(&comp.cholesky().solve(comp.mean()));
                        (offset, gain)
                    }
                    _ => {
                        // K = ΩΦᵀ S⁻¹
                        let gain = predictive.solve_matrix(&omega_phi_t.transpose()).transpose();
                        let offset = comp.mean() - &gain * &proj_mean;
                        (offset, gain)
                    }
                };
                row.push(Projected {
                    proj_mean,
                    predictive,
                    offset,
                    gain,
                });
            }
            comps.push(row);
        }
        Ok(Self {
            model,
            meas,
            path,
            comps,
            log_priors: model.class_priors().iter().map(|w| w.ln()).collect(),
            log_weights: model
                .classes()
                .iter()
                .map(|c| c.weights().iter().map(|w| w.ln()).collect())
                .collect(),
            post_covs: OnceLock::new(),
        })
    }

    pub fn model(&self) -> &SignalModel {
        self.model
    }

    pub fn measurement(&self) -> &MeasurementModel {
        self.meas
    }

    pub fn path(&self) -> InversionPath {
        self.path
    }

    fn check_y(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.meas.dim_out() {
            return Err(Error::Dimension(format!(
                "measurement has length {}, expected {}",
                y.len(),
                self.meas.dim_out()
            )));
        }
        Ok(())
    }

    fn component_log_predictive(&self, m: usize, o: usize, y: &DVector<f64>) -> f64 {
        let c = &self.comps[m][o];
        let r = y - &c.proj_mean;
        -0.5 * (y.len() as f64 * LN_2PI + c.predictive.log_det() + c.predictive.quad_form(&r))
    }

    /// `log π_mo + log N(y; Φμ_mo, ΦΩ_moΦᵀ + R⁻¹)` for every component of class `m`.
    fn class_terms(&self, m: usize, y: &DVector<f64>) -> Vec<f64> {
        (0..self.comps[m].len())
            .map(|o| self.log_weights[m][o] + self.component_log_predictive(m, o, y))
            .collect()
    }

    /// `log p(y | m)`.
    pub fn class_log_likelihood(&self, m: usize, y: &DVector<f64>) -> Result<f64> {
        self.check_y(y)?;
        if m >= self.comps.len() {
            return Err(Error::InvalidArgument(format!(
                "class {m} out of range for {} classes",
                self.comps.len()
            )));
        }
        Ok(log_sum_exp(&self.class_terms(m, y)))
    }

    /// `log p(y | m)` for every class.
    pub fn class_log_likelihoods(&self, y: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_y(y)?;
        Ok((0..self.comps.len())
            .map(|m| log_sum_exp(&self.class_terms(m, y)))
            .collect())
    }

    /// `p(m | y)` for every class.
    pub fn class_posterior(&self, y: &DVector<f64>) -> Result<Vec<f64>> {
        let ll = self.class_log_likelihoods(y)?;
        Ok(class_posterior_from_log_likelihoods(&self.log_priors, &ll).0)
    }

    /// Posterior covariances `Ω̃_mo`, computed on first use.
    pub fn posterior_covariances(&self) -> Result<&Vec<Vec<Arc<DMatrix<f64>>>>> {
        self.post_covs
            .get_or_init(|| self.compute_posterior_covariances())
            .as_ref()
            .map_err(|e| Error::NotPositiveDefinite {
                context: e.to_string(),
            })
    }

    fn compute_posterior_covariances(&self) -> Result<Vec<Vec<Arc<DMatrix<f64>>>>> {
        let phi = self.meas.projection();
        let mut out = Vec::with_capacity(self.comps.len());
        for (m, gmm) in self.model.classes().iter().enumerate() {
            let mut row = Vec::with_capacity(gmm.n_components());
            for (o, comp) in gmm.components().iter().enumerate() {
                let omega = comp.covariance();
                let cov = match self.path {
                    InversionPath::Direct => {
                        let phi_t_r = phi.transpose() * self.meas.noise_precision();
                        let a = symmetrize(&(&phi_t_r * phi + comp.cholesky().inverse()));
                        CholeskyFactor::new(&a)
                            .ok_or_else(|| {
                                Error::component_not_pd(ComponentId { class: m, component: o }, "posterior precision")
                            })?
                            .inverse()
                    }
                    _ => omega - &self.comps[m][o].gain * (phi * omega),
                };
                row.push(Arc::new(symmetrize(&cov)));
            }
            out.push(row);
        }
        Ok(out)
    }

    pub(crate) fn posterior_means(&self, y: &DVector<f64>) -> Result<(PosteriorMeans, f64)> {
        self.check_y(y)?;
        let p = self.model.dim();
        let n_classes = self.comps.len();
        let mut log_lik = Vec::with_capacity(n_classes);
        let mut component_weights = Vec::with_capacity(n_classes);
        for m in 0..n_classes {
            let mut terms = self.class_terms(m, y);
            log_lik.push(crate::linalg::softmax_in_place(&mut terms));
            component_weights.push(terms);
        }
        let (class_weights, log_marginal) = class_posterior_from_log_likelihoods(&self.log_priors, &log_lik);
        let mut component_means = Vec::with_capacity(n_classes);
        let mut class_means = Vec::with_capacity(n_classes);
        let mut global_mean = DVector::zeros(p);
        for m in 0..n_classes {
            let mut means = Vec::with_capacity(self.comps[m].len());
            let mut class_mean = DVector::zeros(p);
            for (o, c) in self.comps[m].iter().enumerate() {
                let mu = &c.offset + &c.gain * y;
                class_mean.axpy(component_weights[m][o], &mu, 1.0);
                means.push(mu);
            }
            global_mean.axpy(class_weights[m], &class_mean, 1.0);
            component_means.push(means);
            class_means.push(class_mean);
        }
        Ok((
            PosteriorMeans {
                class_weights,
                component_weights,
                component_means,
                class_means,
                global_mean,
            },
            log_marginal,
        ))
    }

    /// Weights and class/global means only, skipping components whose
    /// posterior weight underflows to zero.
    pub(crate) fn class_means_only(&self, y: &DVector<f64>) -> Result<(Vec<f64>, Vec<DVector<f64>>, DVector<f64>)> {
        self.check_y(y)?;
        let p = self.model.dim();
        let n_classes = self.comps.len();
        let mut log_lik = Vec::with_capacity(n_classes);
        let mut component_weights = Vec::with_capacity(n_classes);
        for m in 0..n_classes {
            let mut terms = self.class_terms(m, y);
            log_lik.push(crate::linalg::softmax_in_place(&mut terms));
            component_weights.push(terms);
        }
        let (class_weights, _) = class_posterior_from_log_likelihoods(&self.log_priors, &log_lik);
        let mut class_means = Vec::with_capacity(n_classes);
        let mut global_mean = DVector::zeros(p);
        for m in 0..n_classes {
            let mut class_mean = DVector::zeros(p);
            for (o, c) in self.comps[m].iter().enumerate() {
                let pi = component_weights[m][o];
                if pi == 0.0 {
                    continue;
                }
                class_mean.axpy(pi, &c.offset, 1.0);
                class_mean.gemv(pi, &c.gain, y, 1.0);
            }
            global_mean.axpy(class_weights[m], &class_mean, 1.0);
            class_means.push(class_mean);
        }
        Ok((class_weights, class_means, global_mean))
    }

    /// Full posterior for `y`.
    pub fn infer(&self, y: &DVector<f64>) -> Result<Posterior> {
        let covs = self.posterior_covariances()?;
        let (means, log_marginal) = self.posterior_means(y)?;
        Ok(Posterior {
            class_weights: means.class_weights,
            component_weights: means.component_weights,
            component_means: means.component_means,
            component_covs: covs.clone(),
            class_means: means.class_means,
            global_mean: means.global_mean,
            log_marginal,
        })
    }
}

/// Bayes rule in the log domain; returns `(p(m|y), log p(y))`.
pub(crate) fn class_posterior_from_log_likelihoods(log_priors: &[f64], log_lik: &[f64]) -> (Vec<f64>, f64) {
    let mut joint: Vec<f64> = log_priors.iter().zip(log_lik).map(|(a, b)| a + b).collect();
    let log_marginal = crate::linalg::softmax_in_place(&mut joint);
    (joint, log_marginal)
}

/// `log p(y | class_id)`.
pub fn class_log_likelihood(
    model: &SignalModel,
    meas: &MeasurementModel,
    class_id: usize,
    y: &DVector<f64>,
) -> Result<f64> {
    PosteriorEngine::new(model, meas)?.class_log_likelihood(class_id, y)
}

pub fn infer_posterior(model: &SignalModel, meas: &MeasurementModel, y: &DVector<f64>) -> Result<Posterior> {
    PosteriorEngine::new(model, meas)?.infer(y)
}

/// `p(c | y)` for every class.
pub fn class_posterior(model: &SignalModel, meas: &MeasurementModel, y: &DVector<f64>) -> Result<Vec<f64>> {
    PosteriorEngine::new(model, meas)?.class_posterior(y)
}

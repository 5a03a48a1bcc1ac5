//! Monte-Carlo estimation of MMSE matrices and the mutual-information
//! gradient with respect to the projection.
//!
//! The estimators are Rao-Blackwellized: each particle contributes the exact
//! conditional second moments of `x` given its measurement `y`, computed from
//! the [`Posterior`](crate::Posterior), rather than a sampled `x`. With that
//! choice the identity
//!
//! ```text
//! Σ − Σ_m w_m Σ_m = E_y[ Σ_m w̃_m (x_y(m) − x_y)(x_y(m) − x_y)ᵀ ]
//! ```
//!
//! holds exactly per particle, and the class-conditional matrices `Σ_m` are
//! read off the same particles through the importance weight
//! `p(y|m)/p(y) = w̃_m / w_m`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::CompensatedMatrix;
use crate::measurement::MeasurementModel;
use crate::mixture::{sample_joint, SignalModel};
use crate::posterior::PosteriorEngine;
use crate::rng::CHUNK_SIZE;

pub const DEFAULT_PARTICLES: usize = 2000;

#[derive(Debug, Clone)]
pub struct MmseEstimate {
    /// Global MMSE matrix `Σ`.
    pub sigma_global: DMatrix<f64>,
    /// Class-conditional MMSE matrices `Σ_m`.
    pub sigma_class: Vec<DMatrix<f64>>,
    /// `Σ − Σ_m w_m Σ_m`.
    pub sigma_tilde: DMatrix<f64>,
    /// Between-posterior-means form of the same matrix, accumulated separately.
    pub between_means: DMatrix<f64>,
    /// Elementwise Monte-Carlo standard error of `between_means`.
    pub sigma_tilde_std_err: DMatrix<f64>,
    pub n_particles: usize,
    pub seed: u64,
}

struct FullPartial {
    global: CompensatedMatrix,
    class: Vec<CompensatedMatrix>,
    between: CompensatedMatrix,
    between_sq: CompensatedMatrix,
    /// `Σ_i w̃_m π̃_mo`, multiplies the y-independent `Ω̃_mo`.
    cov_mass: Vec<Vec<f64>>,
}

/// Estimates `Σ`, every `Σ_m` and `Σ̃` from `n_particles` joint draws.
pub fn estimate_mmse(model: &SignalModel, meas: &MeasurementModel, n_particles: usize, seed: u64) -> Result<MmseEstimate> {
    if n_particles == 0 {
        return Err(Error::InvalidArgument("n_particles must be >= 1".into()));
    }
    let engine = PosteriorEngine::new(model, meas)?;
    let covs = engine.posterior_covariances()?;
    let sample = sample_joint(model, meas, n_particles, seed)?;
    let p = model.dim();
    let n_classes = model.n_classes();
    let priors = model.class_priors();

    let n_chunks = n_particles.div_ceil(CHUNK_SIZE);
    let partials: Vec<FullPartial> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| -> Result<FullPartial> {
            let mut part = FullPartial {
                global: CompensatedMatrix::zeros(p, p),
                class: (0..n_classes).map(|_| CompensatedMatrix::zeros(p, p)).collect(),
                between: CompensatedMatrix::zeros(p, p),
                between_sq: CompensatedMatrix::zeros(p, p),
                cov_mass: model.classes().iter().map(|c| vec![0.0; c.n_components()]).collect(),
            };
            let start = chunk * CHUNK_SIZE;
            let end = (start + CHUNK_SIZE).min(n_particles);
            for i in start..end {
                let y = sample.y_row(i);
                let (post, _) = engine.posterior_means(&y)?;
                let mut between = DMatrix::zeros(p, p);
                let mut global = DMatrix::zeros(p, p);
                for m in 0..n_classes {
                    let wm = post.class_weights[m];
                    let delta = &post.class_means[m] - &post.global_mean;
                    between.syger(wm, &delta, &delta, 1.0);
                    // Spread of the component means around x_y(m).
                    let mut spread = DMatrix::zeros(p, p);
                    for (o, mu) in post.component_means[m].iter().enumerate() {
                        let pi = post.component_weights[m][o];
                        part.cov_mass[m][o] += wm * pi;
                        if pi == 0.0 {
                            continue;
                        }
                        let dm = mu - &post.class_means[m];
                        spread.syger(pi, &dm, &dm, 1.0);
                    }
                    fill_upper(&mut spread);
                    part.class[m].add(&(&spread * (wm / priors[m])));
                    global += spread * wm;
                }
                fill_upper(&mut between);
                global += &between;
                part.global.add(&global);
                part.between_sq.add(&between.component_mul(&between));
                part.between.add(&between);
            }
            Ok(part)
        })
        .collect::<Result<_>>()?;

    let mut global = CompensatedMatrix::zeros(p, p);
    let mut class: Vec<CompensatedMatrix> = (0..n_classes).map(|_| CompensatedMatrix::zeros(p, p)).collect();
    let mut between = CompensatedMatrix::zeros(p, p);
    let mut between_sq = CompensatedMatrix::zeros(p, p);
    let mut cov_mass: Vec<Vec<f64>> = model.classes().iter().map(|c| vec![0.0; c.n_components()]).collect();
    for part in &partials {
        global.merge(&part.global);
        for (acc, c) in class.iter_mut().zip(&part.class) {
            acc.merge(c);
        }
        between.merge(&part.between);
        between_sq.merge(&part.between_sq);
        for (acc, c) in cov_mass.iter_mut().zip(&part.cov_mass) {
            for (a, b) in acc.iter_mut().zip(c) {
                *a += b;
            }
        }
    }

    let n = n_particles as f64;
    let mut sigma_global = global.value();
    let mut sigma_class: Vec<DMatrix<f64>> = class.iter().map(|c| c.value()).collect();
    for m in 0..n_classes {
        let mut expected_cov = DMatrix::zeros(p, p);
        for (o, mass) in cov_mass[m].iter().enumerate() {
            expected_cov += covs[m][o].as_ref() * *mass;
        }
        sigma_global += &expected_cov;
        sigma_class[m] += expected_cov / priors[m];
    }
    sigma_global /= n;
    for s in sigma_class.iter_mut() {
        *s /= n;
    }
    let mut sigma_tilde = sigma_global.clone();
    for (w, s) in priors.iter().zip(&sigma_class) {
        sigma_tilde -= s * *w;
    }
    let between_means = between.value() / n;
    let second = between_sq.value() / n;
    let sigma_tilde_std_err = if n_particles > 1 {
        (second - between_means.component_mul(&between_means))
            .map(|v| (v.max(0.0) / (n - 1.0)).sqrt())
    } else {
        DMatrix::from_element(p, p, f64::INFINITY)
    };

    Ok(MmseEstimate {
        sigma_global: crate::linalg::symmetrize(&sigma_global),
        sigma_class: sigma_class.iter().map(crate::linalg::symmetrize).collect(),
        sigma_tilde: crate::linalg::symmetrize(&sigma_tilde),
        between_means,
        sigma_tilde_std_err,
        n_particles,
        seed,
    })
}

/// Equivalent MMSE matrix `Σ̃` alone, via its between-posterior-means form.
/// Uses the same particles as [`estimate_mmse`] with equal arguments, at a
/// fraction of the cost.
pub fn estimate_equivalent_mmse(
    model: &SignalModel,
    meas: &MeasurementModel,
    n_particles: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if n_particles == 0 {
        return Err(Error::InvalidArgument("n_particles must be >= 1".into()));
    }
    let engine = PosteriorEngine::new(model, meas)?;
    let sample = sample_joint(model, meas, n_particles, seed)?;
    let p = model.dim();
    let n_classes = model.n_classes();
    let n_chunks = n_particles.div_ceil(CHUNK_SIZE);
    let partials: Vec<DMatrix<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| -> Result<DMatrix<f64>> {
            let start = chunk * CHUNK_SIZE;
            let end = (start + CHUNK_SIZE).min(n_particles);
            // Columns sqrt(w̃_m)(x_y(m) − x_y); the chunk sum is D Dᵀ.
            let mut cols = DMatrix::zeros(p, (end - start) * n_classes);
            for i in start..end {
                let y = sample.y_row(i);
                let (weights, class_means, global_mean) = engine.class_means_only(&y)?;
                for m in 0..n_classes {
                    let col = (i - start) * n_classes + m;
                    let s = weights[m].sqrt();
                    cols.set_column(col, &((&class_means[m] - &global_mean) * s));
                }
            }
            Ok(&cols * cols.transpose())
        })
        .collect::<Result<_>>()?;
    let mut acc = CompensatedMatrix::zeros(p, p);
    for part in &partials {
        acc.add(part);
    }
    Ok(crate::linalg::symmetrize(&(acc.value() / n_particles as f64)))
}

fn fill_upper(m: &mut DMatrix<f64>) {
    // syger only writes the lower triangle.
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// `∇_Φ I(C;Y) = R Φ Σ̃`.
pub fn mi_gradient(meas: &MeasurementModel, est: &MmseEstimate) -> Result<DMatrix<f64>> {
    gradient_from_sigma_tilde(meas, &est.sigma_tilde)
}

pub fn gradient_from_sigma_tilde(meas: &MeasurementModel, sigma_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    crate::linalg::check_square(sigma_tilde, meas.dim_in(), "equivalent MMSE matrix")?;
    Ok(meas.noise_precision() * meas.projection() * sigma_tilde)
}

/// `Σ_m w_m (μ̄_m − μ̄)(μ̄_m − μ̄)ᵀ` from the class prior means; the value of
/// `Σ̃` when the measurement carries no information about the signal.
pub fn prior_between_class_scatter(model: &SignalModel) -> DMatrix<f64> {
    let mu = model.grand_mean();
    let p = model.dim();
    let mut s = DMatrix::zeros(p, p);
    for (w, c) in model.class_priors().iter().zip(model.classes()) {
        let d: DVector<f64> = c.mean() - &mu;
        s += &d * d.transpose() * *w;
    }
    s
}

//! Information objectives over projections.
//!
//! * [`estimate_shannon_mi`]: Monte-Carlo `I(C;Y)` under the full mixture model.
//! * [`renyi_quadratic_mi`]: `I₂ = h₂(Y) − Σ w_m h₂(Y|m)`, closed form through
//!   Gaussian overlap integrals.
//! * [`ida_objective`] / [`lda_objective`]: log-det surrogates that replace
//!   the mixture by moment-matched Gaussians.
//!
//! All values are in nats unless a name says otherwise.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, symmetrize, CholeskyFactor, CompensatedSum, LN_2PI};
use crate::measurement::MeasurementModel;
use crate::mixture::{entropy_nats, sample_joint, SignalModel};
use crate::posterior::{class_posterior_from_log_likelihoods, PosteriorEngine};
use crate::rng::CHUNK_SIZE;

/// Monte-Carlo estimate of `I(C;Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub nats: f64,
    pub std_err: f64,
}

impl MiEstimate {
    pub fn bits(&self) -> f64 {
        self.nats / std::f64::consts::LN_2
    }

    pub fn std_err_bits(&self) -> f64 {
        self.std_err / std::f64::consts::LN_2
    }
}

/// `I(C;Y) ≈ (1/N) Σ_i [log p(y_i|c_i) − log p(y_i)]` over joint draws.
pub fn estimate_shannon_mi(model: &SignalModel, meas: &MeasurementModel, n_particles: usize, seed: u64) -> Result<MiEstimate> {
    if n_particles < 2 {
        return Err(Error::InvalidArgument("MI estimation needs at least 2 particles".into()));
    }
    let engine = PosteriorEngine::new(model, meas)?;
    let sample = sample_joint(model, meas, n_particles, seed)?;
    let log_priors: Vec<f64> = model.class_priors().iter().map(|w| w.ln()).collect();
    let n_chunks = n_particles.div_ceil(CHUNK_SIZE);
    let terms: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * CHUNK_SIZE;
            let end = (start + CHUNK_SIZE).min(n_particles);
            (start..end)
                .map(|i| {
                    let ll = engine.class_log_likelihoods(&sample.y_row(i))?;
                    let (_, log_marginal) = class_posterior_from_log_likelihoods(&log_priors, &ll);
                    Ok(ll[sample.labels[i]] - log_marginal)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut sum = CompensatedSum::default();
    for t in terms.iter().flatten() {
        sum.add(*t);
    }
    let n = n_particles as f64;
    let mean = sum.value() / n;
    let mut sq = CompensatedSum::default();
    for t in terms.iter().flatten() {
        sq.add((t - mean).powi(2));
    }
    let var = sq.value() / (n - 1.0);
    Ok(MiEstimate {
        nats: mean,
        std_err: (var / n).sqrt(),
    })
}

/// Bounds on the Bayes error from the conditional entropy `H(C|Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanoBounds {
    /// `H(C|Y) = H(C) − I(C;Y)` in nats.
    pub cond_entropy: f64,
    /// `max(0, (H(C|Y) − 1) / log₂ M)`, entropies in bits.
    pub lower: f64,
    /// `H(C|Y) / 2`, entropy in bits.
    pub upper: f64,
    /// Whether the supplied MI had to be clamped into `[0, H(C)]`.
    pub clamped: bool,
}

impl FanoBounds {
    pub fn cond_entropy_bits(&self) -> f64 {
        self.cond_entropy / std::f64::consts::LN_2
    }
}

/// Lower (Fano) and upper (Hellman-Raviv) bounds on the error probability
/// given `mi` nats of class information. The lower bound uses `H(P_e) ≤ 1`
/// bit.
pub fn fano_bounds(mi: f64, class_priors: &[f64]) -> FanoBounds {
    let h_c = entropy_nats(class_priors);
    let clamped_mi = if mi.is_nan() { 0.0 } else { mi.clamp(0.0, h_c) };
    let cond_entropy = (h_c - clamped_mi).max(0.0);
    let bits = cond_entropy / std::f64::consts::LN_2;
    let m = class_priors.len() as f64;
    let lower = if m > 1.0 { ((bits - 1.0) / m.log2()).max(0.0) } else { 0.0 };
    FanoBounds {
        cond_entropy,
        lower: lower.min(1.0),
        upper: (bits / 2.0).min(1.0),
        clamped: clamped_mi != mi,
    }
}

/// Per-class first and second moments under a single Gaussian per class.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussStats {
    pub class_means: Vec<DVector<f64>>,
    pub class_covs: Vec<DMatrix<f64>>,
    pub priors: Vec<f64>,
    /// `Ω = Σ_m w_m (Ω_m + (μ_m − μ)(μ_m − μ)ᵀ)`.
    pub pooled_cov: DMatrix<f64>,
    /// `μ = Σ_m w_m μ_m`.
    pub grand_mean: DVector<f64>,
}

impl GaussStats {
    pub fn new(class_means: Vec<DVector<f64>>, class_covs: Vec<DMatrix<f64>>, priors: Vec<f64>) -> Result<Self> {
        let m = priors.len();
        if m == 0 || class_means.len() != m || class_covs.len() != m {
            return Err(Error::InvalidArgument(format!(
                "{} priors, {} means, {} covariances",
                m,
                class_means.len(),
                class_covs.len()
            )));
        }
        let p = class_means[0].len();
        if class_means.iter().any(|v| v.len() != p) || class_covs.iter().any(|c| c.shape() != (p, p)) {
            return Err(Error::Dimension("class statistics differ in dimension".into()));
        }
        let mut grand_mean = DVector::zeros(p);
        for (w, mu) in priors.iter().zip(&class_means) {
            grand_mean.axpy(*w, mu, 1.0);
        }
        let mut pooled = DMatrix::zeros(p, p);
        for ((w, mu), cov) in priors.iter().zip(&class_means).zip(&class_covs) {
            let d = mu - &grand_mean;
            pooled += (cov + &d * d.transpose()) * *w;
        }
        Ok(Self {
            class_means,
            class_covs: class_covs.iter().map(symmetrize).collect(),
            priors,
            pooled_cov: symmetrize(&pooled),
            grand_mean,
        })
    }

    /// Moment-matches each class mixture of `model` to a single Gaussian.
    pub fn from_model(model: &SignalModel) -> Self {
        Self::new(
            model.classes().iter().map(|c| c.mean()).collect(),
            model.classes().iter().map(|c| c.covariance()).collect(),
            model.class_priors().to_vec(),
        )
        .expect("model is internally consistent")
    }

    /// Maximum-likelihood class means and covariances from labelled rows,
    /// with class priors equal to the empirical class frequencies.
    pub fn from_labeled(features: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<Self> {
        let (n, p) = features.shape();
        if labels.len() != n {
            return Err(Error::Dimension(format!("{n} rows but {} labels", labels.len())));
        }
        let mut counts = vec![0usize; n_classes];
        let mut sums = vec![DVector::<f64>::zeros(p); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= n_classes {
                return Err(Error::InvalidArgument(format!("label {l} out of range")));
            }
            counts[l] += 1;
            sums[l] += features.row(i).transpose();
        }
        if let Some(m) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!("class {m} has no samples")));
        }
        let means: Vec<DVector<f64>> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
        let mut covs = vec![DMatrix::<f64>::zeros(p, p); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            let d = features.row(i).transpose() - &means[l];
            covs[l].syger(1.0, &d, &d, 1.0);
        }
        for (cov, &c) in covs.iter_mut().zip(&counts) {
            for j in 0..p {
                for i in 0..j {
                    cov[(i, j)] = cov[(j, i)];
                }
            }
            *cov /= c as f64;
        }
        let priors = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Self::new(means, covs, priors)
    }

    pub fn dim(&self) -> usize {
        self.grand_mean.len()
    }

    pub fn n_classes(&self) -> usize {
        self.priors.len()
    }

    /// `Σ_m w_m Ω_m`.
    pub fn within_class_scatter(&self) -> DMatrix<f64> {
        let p = self.dim();
        let mut s = DMatrix::zeros(p, p);
        for (w, c) in self.priors.iter().zip(&self.class_covs) {
            s += c * *w;
        }
        symmetrize(&s)
    }

    /// `Σ_m w_m (μ_m − μ)(μ_m − μ)ᵀ`.
    pub fn between_class_scatter(&self) -> DMatrix<f64> {
        let p = self.dim();
        let mut s = DMatrix::zeros(p, p);
        for (w, mu) in self.priors.iter().zip(&self.class_means) {
            let d = mu - &self.grand_mean;
            s += &d * d.transpose() * *w;
        }
        symmetrize(&s)
    }

    fn check(&self, meas: &MeasurementModel) -> Result<()> {
        if meas.dim_in() != self.dim() {
            return Err(Error::Dimension(format!(
                "statistics have dimension {} but projection has {} columns",
                self.dim(),
                meas.dim_in()
            )));
        }
        Ok(())
    }
}

/// `log det(Φ A Φᵀ + R⁻¹)` and its gradient `2 (ΦAΦᵀ + R⁻¹)⁻¹ Φ A`.
fn projected_log_det(meas: &MeasurementModel, a: &DMatrix<f64>, what: &str) -> Result<(f64, DMatrix<f64>)> {
    let phi = meas.projection();
    let phi_a = phi * a;
    let s = symmetrize(&(&phi_a * phi.transpose() + meas.noise_covariance()));
    let chol = CholeskyFactor::new(&s).ok_or_else(|| Error::not_pd(format!("projected {what}")))?;
    Ok((chol.log_det(), chol.solve_matrix(&phi_a) * 2.0))
}

/// `½ log det(ΦΩΦᵀ + R⁻¹) − ½ Σ_m w_m log det(ΦΩ_mΦᵀ + R⁻¹)`.
pub fn ida_objective(stats: &GaussStats, meas: &MeasurementModel) -> Result<f64> {
    ida_value_and_gradient(stats, meas).map(|(v, _)| v)
}

pub fn ida_gradient(stats: &GaussStats, meas: &MeasurementModel) -> Result<DMatrix<f64>> {
    ida_value_and_gradient(stats, meas).map(|(_, g)| g)
}

pub fn ida_value_and_gradient(stats: &GaussStats, meas: &MeasurementModel) -> Result<(f64, DMatrix<f64>)> {
    stats.check(meas)?;
    let (total, mut grad) = projected_log_det(meas, &stats.pooled_cov, "pooled covariance")?;
    let mut value = total;
    for (w, cov) in stats.priors.iter().zip(&stats.class_covs) {
        let (ld, g) = projected_log_det(meas, cov, "class covariance")?;
        value -= w * ld;
        grad -= g * *w;
    }
    Ok((0.5 * value, grad * 0.5))
}

/// `½ log det(ΦΩΦᵀ + R⁻¹) − ½ log det(Φ(Σ_m w_mΩ_m)Φᵀ + R⁻¹)`.
pub fn lda_objective(stats: &GaussStats, meas: &MeasurementModel) -> Result<f64> {
    lda_value_and_gradient(stats, meas).map(|(v, _)| v)
}

pub fn lda_gradient(stats: &GaussStats, meas: &MeasurementModel) -> Result<DMatrix<f64>> {
    lda_value_and_gradient(stats, meas).map(|(_, g)| g)
}

pub fn lda_value_and_gradient(stats: &GaussStats, meas: &MeasurementModel) -> Result<(f64, DMatrix<f64>)> {
    stats.check(meas)?;
    let (total, g_total) = projected_log_det(meas, &stats.pooled_cov, "pooled covariance")?;
    let (within, g_within) = projected_log_det(meas, &stats.within_class_scatter(), "within-class scatter")?;
    Ok((0.5 * (total - within), (g_total - g_within) * 0.5))
}

/// Projected component data reused by every overlap term.
struct OverlapComponent {
    log_weight: f64,
    proj_mean: DVector<f64>,
    /// `Φ Ω`, `d × p`.
    phi_omega: DMatrix<f64>,
    /// `Φ Ω Φᵀ`.
    proj_cov: DMatrix<f64>,
    mean: DVector<f64>,
}

struct Overlaps {
    /// `log V_mc = log ∫ p(y|m) p(y|c) dy`.
    log_v: DMatrix<f64>,
    /// `∇_Φ log V_mc`, filled only when gradients were requested.
    grad: Vec<Vec<DMatrix<f64>>>,
}

fn overlaps(model: &SignalModel, meas: &MeasurementModel, with_gradient: bool) -> Result<Overlaps> {
    if meas.dim_in() != model.dim() {
        return Err(Error::Dimension(format!(
            "model dimension {} but projection has {} columns",
            model.dim(),
            meas.dim_in()
        )));
    }
    let phi = meas.projection();
    let d = meas.dim_out();
    let p = model.dim();
    let two_noise = meas.noise_covariance() * 2.0;
    let comps: Vec<Vec<OverlapComponent>> = model
        .classes()
        .iter()
        .map(|gmm| {
            gmm.weights()
                .iter()
                .zip(gmm.components())
                .map(|(w, c)| {
                    let phi_omega = phi * c.covariance();
                    let proj_cov = &phi_omega * phi.transpose();
                    OverlapComponent {
                        log_weight: w.ln(),
                        proj_mean: phi * c.mean(),
                        phi_omega,
                        proj_cov,
                        mean: c.mean().clone(),
                    }
                })
                .collect()
        })
        .collect();
    let n_classes = model.n_classes();
    let pairs: Vec<(usize, usize)> = (0..n_classes)
        .flat_map(|m| (m..n_classes).map(move |c| (m, c)))
        .collect();
    let results: Vec<(f64, Option<DMatrix<f64>>)> = pairs
        .par_iter()
        .map(|&(m, c)| -> Result<(f64, Option<DMatrix<f64>>)> {
            let mut logs = Vec::new();
            let mut grads = Vec::new();
            for a in &comps[m] {
                for b in &comps[c] {
                    let s = symmetrize(&(&a.proj_cov + &b.proj_cov + &two_noise));
                    let chol = CholeskyFactor::new(&s)
                        .ok_or_else(|| Error::not_pd(format!("overlap covariance of classes {m} and {c}")))?;
                    let u = &a.proj_mean - &b.proj_mean;
                    let log_n = -0.5 * (d as f64 * LN_2PI + chol.log_det() + chol.quad_form(&u));
                    logs.push(a.log_weight + b.log_weight + log_n);
                    if with_gradient {
                        // ∂/∂Φ log N(0; Φδ, ΦCΦᵀ + 2R⁻¹) = −(S⁻¹ − zzᵀ)ΦC − zδᵀ, z = S⁻¹Φδ.
                        let z = chol.solve(&u);
                        let phi_c = &a.phi_omega + &b.phi_omega;
                        let delta = &a.mean - &b.mean;
                        let mut g = -(chol.solve_matrix(&phi_c));
                        let zt_phi_c = z.transpose() * &phi_c;
                        g += &z * zt_phi_c;
                        g -= &z * delta.transpose();
                        grads.push(g);
                    }
                }
            }
            let lse = log_sum_exp(&logs);
            let grad = with_gradient.then(|| {
                let mut acc = DMatrix::zeros(d, p);
                for (l, g) in logs.iter().zip(&grads) {
                    let w = (l - lse).exp();
                    if w > 0.0 {
                        acc += g * w;
                    }
                }
                acc
            });
            Ok((lse, grad))
        })
        .collect::<Result<_>>()?;
    let mut log_v = DMatrix::zeros(n_classes, n_classes);
    let mut grad = vec![vec![DMatrix::zeros(0, 0); n_classes]; n_classes];
    for (&(m, c), (lv, g)) in pairs.iter().zip(results) {
        log_v[(m, c)] = lv;
        log_v[(c, m)] = lv;
        if let Some(g) = g {
            grad[c][m] = g.clone();
            grad[m][c] = g;
        }
    }
    Ok(Overlaps { log_v, grad })
}

/// Quadratic Rényi entropy `h₂(Y) = −log ∫ p(y)² dy` of the measurement.
pub fn renyi_entropy_y(model: &SignalModel, meas: &MeasurementModel) -> Result<f64> {
    let ov = overlaps(model, meas, false)?;
    Ok(-joint_log_overlap(model.class_priors(), &ov.log_v))
}

fn joint_log_overlap(priors: &[f64], log_v: &DMatrix<f64>) -> f64 {
    let m = priors.len();
    let mut terms = Vec::with_capacity(m * m);
    for a in 0..m {
        for b in 0..m {
            terms.push(priors[a].ln() + priors[b].ln() + log_v[(a, b)]);
        }
    }
    log_sum_exp(&terms)
}

/// `I₂(C;Y) = h₂(Y) − Σ_m w_m h₂(Y|m)`.
pub fn renyi_quadratic_mi(model: &SignalModel, meas: &MeasurementModel) -> Result<f64> {
    renyi_value_and_gradient_impl(model, meas, false).map(|(v, _)| v)
}

/// Analytic `∇_Φ I₂(C;Y)`.
pub fn renyi_mi_gradient(model: &SignalModel, meas: &MeasurementModel) -> Result<DMatrix<f64>> {
    renyi_value_and_gradient_impl(model, meas, true).map(|(_, g)| g.expect("gradient requested"))
}

pub fn renyi_value_and_gradient(model: &SignalModel, meas: &MeasurementModel) -> Result<(f64, DMatrix<f64>)> {
    renyi_value_and_gradient_impl(model, meas, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

fn renyi_value_and_gradient_impl(
    model: &SignalModel,
    meas: &MeasurementModel,
    with_gradient: bool,
) -> Result<(f64, Option<DMatrix<f64>>)> {
    let ov = overlaps(model, meas, with_gradient)?;
    let priors = model.class_priors();
    let n_classes = priors.len();
    let log_total = joint_log_overlap(priors, &ov.log_v);
    let mut value = -log_total;
    for m in 0..n_classes {
        value += priors[m] * ov.log_v[(m, m)];
    }
    if n_classes == 1 {
        return Ok((0.0, with_gradient.then(|| DMatrix::zeros(meas.dim_out(), meas.dim_in()))));
    }
    let grad = with_gradient.then(|| {
        let mut g = DMatrix::zeros(meas.dim_out(), meas.dim_in());
        for a in 0..n_classes {
            for b in 0..n_classes {
                let share = (priors[a].ln() + priors[b].ln() + ov.log_v[(a, b)] - log_total).exp();
                g -= &ov.grad[a][b] * share;
            }
            g += &ov.grad[a][a] * priors[a];
        }
        g
    });
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{ClassGmm, GaussianComponent};

    #[test]
    fn fano_perfect_information() {
        let b = fano_bounds(2f64.ln(), &[0.5, 0.5]);
        assert!(b.cond_entropy.abs() < 1e-15);
        assert_eq!(b.lower, 0.0);
        assert!(b.upper.abs() < 1e-15);
    }

    #[test]
    fn fano_no_information_binary() {
        let b = fano_bounds(0.0, &[0.5, 0.5]);
        assert!((b.cond_entropy_bits() - 1.0).abs() < 1e-12);
        assert!(b.lower.abs() < 1e-12);
        assert!((b.upper - 0.5).abs() < 1e-12);
        assert!(!b.clamped);
    }

    #[test]
    fn fano_four_classes_one_bit() {
        let b = fano_bounds(2f64.ln(), &[0.25; 4]);
        assert!((b.cond_entropy_bits() - 1.0).abs() < 1e-12);
        assert!(b.lower.abs() < 1e-12);
        assert!((b.upper - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fano_clamps_out_of_range() {
        let b = fano_bounds(5.0, &[0.5, 0.5]);
        assert!(b.clamped);
        assert_eq!(b.upper, 0.0);
        let b = fano_bounds(-0.1, &[0.5, 0.5]);
        assert!(b.clamped);
        assert!(b.lower <= b.upper);
    }

    #[test]
    fn gaussian_self_overlap() {
        let c = GaussianComponent::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let model = SignalModel::new(vec![1.0], vec![ClassGmm::single(c)]).unwrap();
        let meas = MeasurementModel::isotropic(DMatrix::identity(1, 1), 1e-12).unwrap();
        let h2 = renyi_entropy_y(&model, &meas).unwrap();
        let expected = -(1.0 / (2.0 * std::f64::consts::PI.sqrt())).ln();
        assert!((h2 - expected).abs() < 1e-9, "{h2} vs {expected}");
        assert!((h2 - 1.26551).abs() < 1e-5);
        assert_eq!(renyi_quadratic_mi(&model, &meas).unwrap(), 0.0);
    }

    #[test]
    fn ida_and_lda_two_class_line() {
        let stats = GaussStats::new(
            vec![DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)],
            vec![DMatrix::identity(1, 1); 2],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!((stats.pooled_cov[(0, 0)] - 2.0).abs() < 1e-15);
        let meas = MeasurementModel::isotropic(DMatrix::identity(1, 1), 1e-6).unwrap();
        let expected = 0.5 * (2.0f64 + 1e-6).ln() - 0.5 * (1.0f64 + 1e-6).ln();
        let ida = ida_objective(&stats, &meas).unwrap();
        let lda = lda_objective(&stats, &meas).unwrap();
        assert!((ida - expected).abs() < 1e-12);
        assert!((ida - 0.34657).abs() < 1e-5);
        assert!((lda - ida).abs() < 1e-12);
    }

    #[test]
    fn degenerate_stats_give_zero() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let stats = GaussStats::new(vec![DVector::from_vec(vec![1.0, 2.0]); 3], vec![cov; 3], vec![0.2, 0.3, 0.5]).unwrap();
        let meas = MeasurementModel::isotropic(DMatrix::from_row_slice(1, 2, &[0.6, 0.8]), 1e-6).unwrap();
        assert!(ida_objective(&stats, &meas).unwrap().abs() < 1e-12);
        assert!(ida_gradient(&stats, &meas).unwrap().amax() < 1e-12);
        assert!(lda_objective(&stats, &meas).unwrap().abs() < 1e-12);
    }

    #[test]
    fn labeled_stats_match_definitions() {
        let x = DMatrix::from_row_slice(5, 2, &[0.0, 1.0, 2.0, 1.0, 1.0, 4.0, 5.0, 5.0, 3.0, 3.0]);
        let labels = [0, 0, 1, 1, 1];
        let s = GaussStats::from_labeled(&x, &labels, 2).unwrap();
        assert!((s.priors[0] - 0.4).abs() < 1e-15);
        assert!((&s.class_means[0] - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-15);
        assert!((s.class_covs[0][(0, 0)] - 1.0).abs() < 1e-15);
        assert!(GaussStats::from_labeled(&x, &labels, 3).is_err());
    }

    #[test]
    fn shannon_mi_single_class_is_exactly_zero() {
        let c = GaussianComponent::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let model = SignalModel::new(vec![1.0], vec![ClassGmm::single(c)]).unwrap();
        let meas = MeasurementModel::isotropic(DMatrix::identity(1, 2), 0.1).unwrap();
        let mi = estimate_shannon_mi(&model, &meas, 100, 0).unwrap();
        assert_eq!(mi.nats, 0.0);
        assert_eq!(mi.std_err, 0.0);
        assert!(estimate_shannon_mi(&model, &meas, 1, 0).is_err());
    }
}

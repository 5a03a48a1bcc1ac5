//! Oracles and shared property checks for the integration tests.
#![allow(dead_code)]

use infoproj::design::{
    design_ida, design_lda, design_renyi, design_shannon, random_baseline, svd_realign, DesignerConfig, Initialization,
};
use infoproj::linalg::orthonormality_error;
use infoproj::dataset::Dataset;
use infoproj::mixture::{sample_joint, ClassGmm, GaussianComponent, SignalModel};
use infoproj::mmse::{estimate_equivalent_mmse, estimate_mmse, gradient_from_sigma_tilde};
use infoproj::objectives::{
    estimate_shannon_mi, ida_objective, lda_objective, renyi_mi_gradient, renyi_quadratic_mi, GaussStats,
};
use infoproj::MeasurementModel;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    pub fn assert(&self) {
        assert!(self.pass, "{}", self.detail);
    }
}

// ---- quadrature ----------------------------------------------------------

fn simpson_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    // Split first so narrow peaks are not missed by the initial stencil.
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let lo = a + k as f64 * h;
            let hi = lo + h;
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = h / 6.0 * (fa + 4.0 * fm + fb);
            simpson_rec(&f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 40)
        })
        .sum()
}

pub fn integrate_2d<F: Fn(f64, f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    integrate(|u| integrate(|v| f(u, v), a, b, tol), a, b, tol)
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Bivariate normal density with explicit 2×2 inverse.
pub fn normal_pdf_2d(y: [f64; 2], mean: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let (a, b) = (y[0] - mean[0], y[1] - mean[1]);
    let q = (cov[1][1] * a * a - (cov[0][1] + cov[1][0]) * a * b + cov[0][0] * b * b) / det;
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

/// Projected class mixtures: per class, `(weight, Φμ, ΦΩΦᵀ + R⁻¹)`.
pub fn projected_components(model: &SignalModel, meas: &MeasurementModel) -> Vec<Vec<(f64, DVector<f64>, DMatrix<f64>)>> {
    let phi = meas.projection();
    model
        .classes()
        .iter()
        .map(|c| {
            c.weights()
                .iter()
                .zip(c.components())
                .map(|(w, g)| (*w, phi * g.mean(), phi * g.covariance() * phi.transpose() + meas.noise_covariance()))
                .collect()
        })
        .collect()
}

/// Class-conditional densities `p(y|m)` of a 1-D or 2-D measurement.
pub fn class_densities(model: &SignalModel, meas: &MeasurementModel) -> impl Fn(&[f64]) -> Vec<f64> {
    let comps = projected_components(model, meas);
    let d = meas.dim_out();
    move |y: &[f64]| {
        comps
            .iter()
            .map(|cls| {
                cls.iter()
                    .map(|(w, mu, s)| {
                        w * if d == 1 {
                            normal_pdf(y[0], mu[0], s[(0, 0)])
                        } else {
                            normal_pdf_2d([y[0], y[1]], [mu[0], mu[1]], [[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]])
                        }
                    })
                    .sum()
            })
            .collect()
    }
}

/// `I₂ = −log ∫ p(y)² + Σ_m w_m log ∫ p(y|m)²` by quadrature over `[-L, L]^d`.
pub fn renyi_by_quadrature(model: &SignalModel, meas: &MeasurementModel, half_width: f64, tol: f64) -> f64 {
    let dens = class_densities(model, meas);
    let w = model.class_priors().to_vec();
    let m = w.len();
    let mut out = 0.0;
    // index m is the marginal, 0..m the classes
    for k in 0..=m {
        let f = |y: &[f64]| {
            let p = dens(y);
            let v = if k == m { p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() } else { p[k] };
            v * v
        };
        let integral = if meas.dim_out() == 1 {
            integrate(|a| f(&[a]), -half_width, half_width, tol)
        } else {
            integrate_2d(|a, b| f(&[a, b]), -half_width, half_width, tol)
        };
        if k == m {
            out -= integral.ln();
        } else {
            out += w[k] * integral.ln();
        }
    }
    out
}

// ---- random instances ----------------------------------------------------

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn random_spd(rng: &mut ChaCha20Rng, p: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, p, p);
    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.3
}

/// Orthonormal rows from Gram-Schmidt on Gaussian rows; independent of the
/// crate's polar-factor construction.
pub fn gram_schmidt_rows(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for r in a.row_iter() {
        let mut v = r.transpose();
        for u in &rows {
            v -= u * u.dot(&v);
        }
        rows.push(v.normalize());
    }
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| rows[i][j])
}

pub fn random_orthonormal(rng: &mut ChaCha20Rng, d: usize, p: usize) -> DMatrix<f64> {
    gram_schmidt_rows(&normal_matrix(rng, d, p))
}

pub fn random_simplex(rng: &mut ChaCha20Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| 0.5 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

pub fn random_model(seed: u64, p: usize, classes: usize, comps: usize, spread: f64) -> SignalModel {
    let mut r = rng(seed);
    let gmms = (0..classes)
        .map(|_| {
            let center = DVector::from_fn(p, |_, _| spread * r.sample::<f64, _>(StandardNormal));
            let parts = (0..comps)
                .map(|_| {
                    let mean = &center + DVector::from_fn(p, |_, _| 0.5 * r.sample::<f64, _>(StandardNormal));
                    GaussianComponent::new(mean, random_spd(&mut r, p)).unwrap()
                })
                .collect();
            ClassGmm::new(random_simplex(&mut r, comps), parts).unwrap()
        })
        .collect();
    SignalModel::new(random_simplex(&mut r, classes), gmms).unwrap()
}

pub fn two_class_1d(nu: f64) -> (SignalModel, MeasurementModel) {
    let c = |m: f64| ClassGmm::single(GaussianComponent::new(DVector::from_vec(vec![m]), DMatrix::identity(1, 1)).unwrap());
    let model = SignalModel::new(vec![0.5, 0.5], vec![c(-1.0), c(1.0)]).unwrap();
    let meas = MeasurementModel::isotropic(DMatrix::identity(1, 1), nu).unwrap();
    (model, meas)
}

/// Homoscedastic two-class model and its Fisher direction `Ω⁻¹Δμ`
/// (by LU solve, normalized).
pub fn homoscedastic_pair(seed: u64, p: usize) -> (SignalModel, DVector<f64>) {
    let mut r = rng(seed);
    let cov = random_spd(&mut r, p);
    let m0 = DVector::from_fn(p, |_, _| r.sample::<f64, _>(StandardNormal));
    let m1 = DVector::from_fn(p, |_, _| r.sample::<f64, _>(StandardNormal));
    let fisher = cov.clone().lu().solve(&(&m1 - &m0)).unwrap().normalize();
    let classes = vec![
        ClassGmm::single(GaussianComponent::new(m0, cov.clone()).unwrap()),
        ClassGmm::single(GaussianComponent::new(m1, cov).unwrap()),
    ];
    (SignalModel::new(vec![0.5, 0.5], classes).unwrap(), fisher)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// ---- property checks shared with the acceptance target -------------------

/// Analytic MI gradient against central finite differences of the
/// Monte-Carlo MI with common random numbers.
pub fn check_mi_gradient() -> Check {
    let model = random_model(7, 4, 3, 2, 1.2);
    let mut r = rng(70);
    let phi = random_orthonormal(&mut r, 2, 4);
    let nu = 0.1;
    let meas = MeasurementModel::isotropic(phi.clone(), nu).unwrap();
    let n = 100_000;
    let st = estimate_equivalent_mmse(&model, &meas, n, 11).unwrap();
    let analytic = gradient_from_sigma_tilde(&meas, &st).unwrap();
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for i in 0..2 {
        for j in 0..4 {
            let mut plus = phi.clone();
            plus[(i, j)] += h;
            let mut minus = phi.clone();
            minus[(i, j)] -= h;
            let fp = estimate_shannon_mi(&model, &MeasurementModel::isotropic(plus, nu).unwrap(), n, 5).unwrap().nats;
            let fm = estimate_shannon_mi(&model, &MeasurementModel::isotropic(minus, nu).unwrap(), n, 5).unwrap().nats;
            let fd = (fp - fm) / (2.0 * h);
            let e = rel_err(analytic[(i, j)], fd);
            worst = worst.max(e);
            detail.push(format!("({i},{j}) analytic {:.5} fd {:.5}", analytic[(i, j)], fd));
        }
    }
    Check::new(worst <= 0.05, format!("max per-entry relative error {worst:.4} (limit 0.05); {}", detail.join("; ")))
}

/// `Σ − Σ w_m Σ_m` equals the between-posterior-means form on the same
/// particles, and is PSD.
pub fn check_decomposition() -> Check {
    let mut worst_diff: f64 = 0.0;
    let mut worst_eig: f64 = f64::INFINITY;
    for k in 0..20u64 {
        let mut r = rng(100 + k);
        let p = 2 + (k as usize % 4);
        let d = 1 + (k as usize % p);
        let classes = 2 + (k as usize % 3);
        let comps = 1 + (k as usize % 2);
        let model = random_model(200 + k, p, classes, comps, 1.0);
        let nu = [1e-6, 0.01, 0.5][k as usize % 3];
        let meas = MeasurementModel::isotropic(random_orthonormal(&mut r, d, p), nu).unwrap();
        let est = estimate_mmse(&model, &meas, 500, k).unwrap();
        let scale = est.sigma_tilde.amax().max(1.0);
        worst_diff = worst_diff.max((&est.sigma_tilde - &est.between_means).amax() / scale);
        let min_eig = est.between_means.clone().symmetric_eigen().eigenvalues.min();
        let tr = est.between_means.trace().max(f64::MIN_POSITIVE);
        worst_eig = worst_eig.min(min_eig / tr);
    }
    Check::new(
        worst_diff <= 1e-10 && worst_eig >= -1e-8,
        format!("max scaled identity gap {worst_diff:.2e} (limit 1e-10); min eigenvalue/trace {worst_eig:.2e} (limit -1e-8)"),
    )
}

/// MI and `Σ̃` of the 2-class N(∓1, 1) model against quadrature.
pub fn check_quadrature_1d() -> Check {
    let mut ok = true;
    let mut detail = Vec::new();
    for nu in [1e-6, 0.25] {
        let (model, meas) = two_class_1d(nu);
        let s = 1.0 + nu;
        let py = |y: f64| 0.5 * normal_pdf(y, -1.0, s) + 0.5 * normal_pdf(y, 1.0, s);
        let mi_q = integrate(
            |y| {
                [-1.0, 1.0]
                    .iter()
                    .map(|m| {
                        let pc = normal_pdf(y, *m, s);
                        if pc > 0.0 {
                            0.5 * pc * (pc / py(y)).ln()
                        } else {
                            0.0
                        }
                    })
                    .sum()
            },
            -15.0,
            15.0,
            1e-10,
        );
        // posterior mean given class m: m + (y − m)/(1 + ν)
        let st_q = integrate(
            |y| {
                let p0 = 0.5 * normal_pdf(y, -1.0, s);
                let p1 = 0.5 * normal_pdf(y, 1.0, s);
                let tot = p0 + p1;
                if tot == 0.0 {
                    return 0.0;
                }
                let (w0, w1) = (p0 / tot, p1 / tot);
                let (x0, x1) = (-1.0 + (y + 1.0) / s, 1.0 + (y - 1.0) / s);
                let xm = w0 * x0 + w1 * x1;
                tot * (w0 * (x0 - xm).powi(2) + w1 * (x1 - xm).powi(2))
            },
            -15.0,
            15.0,
            1e-10,
        );
        let n = 20_000;
        let mi = estimate_shannon_mi(&model, &meas, n, 3).unwrap();
        let est = estimate_mmse(&model, &meas, n, 4).unwrap();
        let tol_mi = (3.0 * mi.std_err).max(1e-3);
        let tol_st = (3.0 * est.sigma_tilde_std_err[(0, 0)]).max(1e-3);
        let (e_mi, e_st) = ((mi.nats - mi_q).abs(), (est.sigma_tilde[(0, 0)] - st_q).abs());
        ok &= e_mi <= tol_mi && e_st <= tol_st;
        detail.push(format!(
            "nu={nu}: MI {:.5} vs {mi_q:.5} (tol {tol_mi:.1e}), sigma_tilde {:.5} vs {st_q:.5} (tol {tol_st:.1e})",
            mi.nats, est.sigma_tilde[(0, 0)]
        ));
    }
    Check::new(ok, detail.join("; "))
}

/// Rényi gradient vs central differences, and I₂ vs quadrature for d = 1, 2.
pub fn check_renyi() -> Check {
    let mut worst_grad: f64 = 0.0;
    for k in 0..3u64 {
        let model = random_model(300 + k, 4, 3, 2, 1.0);
        let mut r = rng(310 + k);
        let phi = random_orthonormal(&mut r, 2, 4);
        let nu = 0.05;
        let meas = MeasurementModel::isotropic(phi.clone(), nu).unwrap();
        let g = renyi_mi_gradient(&model, &meas).unwrap();
        let h = 1e-5;
        for i in 0..2 {
            for j in 0..4 {
                let mut plus = phi.clone();
                plus[(i, j)] += h;
                let mut minus = phi.clone();
                minus[(i, j)] -= h;
                let fp = renyi_quadratic_mi(&model, &MeasurementModel::isotropic(plus, nu).unwrap()).unwrap();
                let fm = renyi_quadratic_mi(&model, &MeasurementModel::isotropic(minus, nu).unwrap()).unwrap();
                worst_grad = worst_grad.max(rel_err(g[(i, j)], (fp - fm) / (2.0 * h)));
            }
        }
    }
    let mut worst_val: f64 = 0.0;
    for (k, d) in [(0u64, 1usize), (1, 1), (2, 2), (3, 2)] {
        let model = random_model(400 + k, 3, 2 + k as usize % 2, 2, 0.8);
        let mut r = rng(410 + k);
        let meas = MeasurementModel::isotropic(random_orthonormal(&mut r, d, 3), 0.1).unwrap();
        let exact = renyi_quadratic_mi(&model, &meas).unwrap();
        let tol = if d == 1 { 1e-12 } else { 1e-10 };
        let quad = renyi_by_quadrature(&model, &meas, 14.0, tol);
        worst_val = worst_val.max((exact - quad).abs());
    }
    Check::new(
        worst_grad <= 1e-4 && worst_val <= 1e-6,
        format!("gradient max relative error {worst_grad:.2e} (limit 1e-4); I2 max abs error vs quadrature {worst_val:.2e} (limit 1e-6)"),
    )
}

/// `I_IDA ≥ I_LDA` and `I_IDA ≥ I − 3 se` on single-Gaussian models.
pub fn check_ordering() -> Check {
    let mut min_lda_gap = f64::INFINITY;
    let mut min_mi_gap = f64::INFINITY;
    for k in 0..20u64 {
        let p = 2 + k as usize % 4;
        let d = 1 + k as usize % p;
        let model = random_model(500 + k, p, 2 + k as usize % 3, 1, 1.0);
        let stats = GaussStats::from_model(&model);
        let mut r = rng(520 + k);
        let nu = [1e-6, 0.1][k as usize % 2];
        let meas = MeasurementModel::isotropic(random_orthonormal(&mut r, d, p), nu).unwrap();
        let ida = ida_objective(&stats, &meas).unwrap();
        let lda = lda_objective(&stats, &meas).unwrap();
        let mi = estimate_shannon_mi(&model, &meas, 4000, k).unwrap();
        min_lda_gap = min_lda_gap.min(ida - lda);
        min_mi_gap = min_mi_gap.min(ida - (mi.nats - 3.0 * mi.std_err));
    }
    Check::new(
        min_lda_gap >= -1e-10 && min_mi_gap >= 0.0,
        format!("min I_IDA - I_LDA {min_lda_gap:.3e} (limit -1e-10); min I_IDA - (MI - 3se) {min_mi_gap:.3e} (limit 0)"),
    )
}

/// Every designer returns orthonormal rows and is reproducible.
pub fn check_orthonormal_deterministic() -> Check {
    let model = random_model(600, 5, 3, 2, 1.0);
    let stats = GaussStats::from_model(&model);
    let cfg = DesignerConfig {
        max_iters: 15,
        n_particles: 300,
        seed: 9,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    let mut same = true;
    for d in [1usize, 2, 3, 5] {
        let r = DMatrix::identity(d, d) * 1e6;
        let run = || {
            vec![
                design_lda(&stats, d, &r).unwrap(),
                design_ida(&stats, d, &r, &cfg).unwrap(),
                design_renyi(&model, d, &r, &cfg).unwrap(),
                design_shannon(&model, d, &r, &cfg).unwrap(),
                random_baseline(5, d, cfg.seed).unwrap(),
            ]
        };
        let a = run();
        let b = run();
        same &= a == b;
        for rep in &a {
            worst = worst.max(orthonormality_error(&rep.projection));
        }
        let meas = MeasurementModel::isotropic(a[3].projection.clone(), 1e-6).unwrap();
        let st = estimate_equivalent_mmse(&model, &meas, 300, 1).unwrap();
        worst = worst.max(orthonormality_error(&svd_realign(&meas, &st).unwrap()));
    }
    Check::new(
        worst <= 1e-10 && same,
        format!("max orthonormality error {worst:.2e} (limit 1e-10); repeated runs identical: {same}"),
    )
}

fn abs_cos(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).abs()
}

/// Shannon and Rényi designers find the Fisher direction of a homoscedastic
/// pair, from the default start and from a random start (the Shannon run
/// from a random start uses frozen particles so it can line-search).
pub fn check_fisher_recovery() -> Check {
    let mut worst: f64 = 1.0;
    let mut detail = Vec::new();
    for k in 0..3u64 {
        let (model, fisher) = homoscedastic_pair(700 + k, 4);
        let r = DMatrix::identity(1, 1) * 1e6;
        let default = DesignerConfig { seed: k, ..Default::default() };
        let random = DesignerConfig { init: Initialization::Random, ..default.clone() };
        let frozen = DesignerConfig { freeze_particles: true, ..random.clone() };
        let runs = [
            ("shannon", design_shannon(&model, 1, &r, &default).unwrap()),
            ("shannon/random-start", design_shannon(&model, 1, &r, &frozen).unwrap()),
            ("renyi", design_renyi(&model, 1, &r, &default).unwrap()),
            ("renyi/random-start", design_renyi(&model, 1, &r, &random).unwrap()),
        ];
        let cosines: Vec<String> = runs
            .iter()
            .map(|(name, rep)| {
                let c = abs_cos(&rep.projection.row(0).transpose(), &fisher);
                worst = worst.min(c);
                format!("{name} {c:.5}")
            })
            .collect();
        detail.push(format!("instance {k}: {}", cosines.join(", ")));
    }
    Check::new(worst >= 0.99, format!("min |cos| {worst:.5} (limit 0.99); {}", detail.join("; ")))
}

// ---- synthetic datasets ---------------------------------------------------

/// Labeled train/test draws from `model` (features are the raw signals).
pub fn synthetic_dataset(model: &SignalModel, n_train: usize, n_test: usize, seed: u64) -> Dataset {
    let p = model.dim();
    let meas = MeasurementModel::isotropic(DMatrix::identity(p, p), 1e-6).unwrap();
    let tr = sample_joint(model, &meas, n_train, seed).unwrap();
    let te = sample_joint(model, &meas, n_test, seed + 1).unwrap();
    Dataset::new("synthetic", tr.x, tr.labels, te.x, te.labels, model.n_classes()).unwrap()
}

/// `rows` lines in the Satellite file format: 36 pixel values in 0..=255
/// and a class code from {1,2,3,4,5,7}, with class-dependent brightness.
pub fn satellite_text(seed: u64, rows: usize) -> String {
    const CODES: [usize; 6] = [1, 2, 3, 4, 5, 7];
    let mut r = rng(seed);
    let mut out = String::new();
    for _ in 0..rows {
        let k = r.random_range(0..6);
        for j in 0..36 {
            let base = 40.0 + 25.0 * k as f64 + 6.0 * ((j % 4) as f64) * (k % 3) as f64;
            let v = (base + 8.0 * r.sample::<f64, _>(StandardNormal)).round().clamp(0.0, 255.0);
            out.push_str(&format!("{v} "));
        }
        out.push_str(&format!("{}\n", CODES[k]));
    }
    out
}

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassGmm, GaussianComponent};
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, CholeskyFactor, LN_2PI};
use crate::rng;

/// Lower bound on the eigenvalues of every fitted covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceFloor {
    Absolute(f64),
    /// Multiple of the mean per-feature variance of the samples being fitted.
    RelativeToMeanVariance(f64),
}

impl Default for CovarianceFloor {
    fn default() -> Self {
        CovarianceFloor::RelativeToMeanVariance(1e-6)
    }
}

impl CovarianceFloor {
    pub fn resolve(&self, samples: &DMatrix<f64>) -> f64 {
        match *self {
            CovarianceFloor::Absolute(v) => v,
            CovarianceFloor::RelativeToMeanVariance(factor) => {
                let n = samples.nrows() as f64;
                let p = samples.ncols();
                let mut total = 0.0;
                for j in 0..p {
                    let col = samples.column(j);
                    let mean = col.mean();
                    total += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                }
                let mean_var = total / p as f64;
                if mean_var > 0.0 {
                    factor * mean_var
                } else {
                    factor
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the mean per-sample log-likelihood improves by less than this.
    pub loglik_tol: f64,
    pub reg_floor: CovarianceFloor,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            loglik_tol: 1e-7,
            reg_floor: CovarianceFloor::default(),
            restarts: 5,
            seed: 0,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("EM max_iters must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("EM restarts must be >= 1".into()));
        }
        let floor_ok = match self.reg_floor {
            CovarianceFloor::Absolute(v) | CovarianceFloor::RelativeToMeanVariance(v) => v > 0.0 && v.is_finite(),
        };
        if !floor_ok {
            return Err(Error::InvalidArgument("EM reg_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// Result of [`fit_class_gmm_detailed`].
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: ClassGmm,
    /// Total training log-likelihood of `model`.
    pub log_likelihood: f64,
    /// Log-likelihood after every EM iteration, one trace per restart.
    pub traces: Vec<Vec<f64>>,
    pub best_restart: usize,
    /// Covariance floor actually applied.
    pub floor: f64,
    /// Number of times an empty component was re-seeded, per restart.
    pub reseeds: Vec<usize>,
}

/// Fits a `n_components`-component full-covariance GMM by EM and returns the
/// restart with the highest final log-likelihood. `samples` holds one sample
/// per row.
pub fn fit_class_gmm(samples: &DMatrix<f64>, n_components: usize, cfg: &EmConfig) -> Result<ClassGmm> {
    fit_class_gmm_detailed(samples, n_components, cfg).map(|f| f.model)
}

pub fn fit_class_gmm_detailed(samples: &DMatrix<f64>, n_components: usize, cfg: &EmConfig) -> Result<EmFit> {
    cfg.validate()?;
    let n = samples.nrows();
    if n == 0 || samples.ncols() == 0 {
        return Err(Error::InvalidArgument("cannot fit a mixture to an empty sample set".into()));
    }
    if n_components == 0 {
        return Err(Error::InvalidArgument("n_components must be >= 1".into()));
    }
    if n_components > n {
        return Err(Error::InvalidArgument(format!(
            "cannot initialize {n_components} distinct centers from {n} samples"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples contain non-finite values".into()));
    }
    let floor = cfg.reg_floor.resolve(samples);
    let xt = samples.transpose();

    let mut best: Option<(f64, usize, Params)> = None;
    let mut traces = Vec::with_capacity(cfg.restarts);
    let mut reseeds = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let mut rng = rng::stream(cfg.seed, restart as u64);
        let run = run_em(&xt, n_components, floor, cfg, &mut rng)?;
        let ll = *run.trace.last().expect("at least one E-step");
        traces.push(run.trace);
        reseeds.push(run.reseeds);
        if best.as_ref().is_none_or(|(b, _, _)| ll > *b) {
            best = Some((ll, restart, run.params));
        }
    }
    let (log_likelihood, best_restart, params) = best.expect("restarts >= 1");
    Ok(EmFit {
        model: params.into_gmm()?,
        log_likelihood,
        traces,
        best_restart,
        floor,
        reseeds,
    })
}

struct Params {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

impl Params {
    fn into_gmm(self) -> Result<ClassGmm> {
        let comps = self
            .means
            .into_iter()
            .zip(self.covs)
            .map(|(m, c)| GaussianComponent::new(m, c))
            .collect::<Result<Vec<_>>>()?;
        let s: f64 = self.weights.iter().sum();
        ClassGmm::new(self.weights.iter().map(|w| w / s).collect(), comps)
    }
}

struct EmRun {
    params: Params,
    trace: Vec<f64>,
    reseeds: usize,
}

fn run_em(xt: &DMatrix<f64>, k: usize, floor: f64, cfg: &EmConfig, rng: &mut rng::StreamRng) -> Result<EmRun> {
    let n = xt.ncols();
    let centers = kmeans_pp(xt, k, rng);
    let mut resp = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        let x = xt.column(i);
        let nearest = (0..k)
            .min_by(|&a, &b| {
                let da = (x - xt.column(centers[a])).norm_squared();
                let db = (x - xt.column(centers[b])).norm_squared();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            })
            .unwrap();
        resp[(i, nearest)] = 1.0;
    }
    let mut reseeds = 0;
    let mut params = m_step(xt, &resp, floor);
    let mut trace = Vec::new();
    for iter in 0..cfg.max_iters {
        let (ll, log_dens) = e_step(xt, &params, &mut resp)?;
        let converged = trace
            .last()
            .is_some_and(|prev: &f64| (ll - prev) / n as f64 <= cfg.loglik_tol);
        trace.push(ll);
        if converged || iter + 1 == cfg.max_iters {
            break;
        }
        params = m_step(xt, &resp, floor);
        reseeds += reseed_empty(xt, &mut params, &log_dens, floor);
    }
    Ok(EmRun {
        params,
        trace,
        reseeds,
    })
}

/// k-means++ seeding; returns sample indices of the centers.
fn kmeans_pp(xt: &DMatrix<f64>, k: usize, rng: &mut rng::StreamRng) -> Vec<usize> {
    let n = xt.ncols();
    let mut centers = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| (xt.column(i) - xt.column(centers[0])).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            if d2[pick] == 0.0 {
                d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick)
            } else {
                pick
            }
        } else {
            // Fewer distinct points than components; any unused index will do.
            (0..n).find(|i| !centers.contains(i)).unwrap_or(0)
        };
        centers.push(next);
        for (i, di) in d2.iter_mut().enumerate() {
            *di = di.min((xt.column(i) - xt.column(next)).norm_squared());
        }
    }
    centers
}

/// Fills `resp` with responsibilities and returns the total log-likelihood
/// plus each sample's log-density.
fn e_step(xt: &DMatrix<f64>, params: &Params, resp: &mut DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let n = xt.ncols();
    let p = xt.nrows();
    let k = params.means.len();
    let columns: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let chol = CholeskyFactor::new(&params.covs[j])
                .ok_or_else(|| Error::not_pd(format!("EM covariance of component {j}")))?;
            let mut centered = xt.clone();
            for mut col in centered.column_iter_mut() {
                col -= &params.means[j];
            }
            let z = chol.whiten_matrix(&centered);
            let norm = -0.5 * (p as f64 * LN_2PI + chol.log_det()) + params.weights[j].ln();
            Ok(z.column_iter().map(|c| norm - 0.5 * c.norm_squared()).collect())
        })
        .collect::<Result<_>>()?;
    let mut total = crate::linalg::CompensatedSum::default();
    let mut log_dens = Vec::with_capacity(n);
    let mut row = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            row[j] = columns[j][i];
        }
        let lse = log_sum_exp(&row);
        for j in 0..k {
            resp[(i, j)] = (row[j] - lse).exp();
        }
        total.add(lse);
        log_dens.push(lse);
    }
    Ok((total.value(), log_dens))
}

fn m_step(xt: &DMatrix<f64>, resp: &DMatrix<f64>, floor: f64) -> Params {
    let n = xt.ncols();
    let p = xt.nrows();
    let k = resp.ncols();
    let per: Vec<(f64, DVector<f64>, DMatrix<f64>)> = (0..k)
        .into_par_iter()
        .map(|j| {
            let r = resp.column(j);
            let nk: f64 = r.iter().sum();
            if nk <= 0.0 {
                return (0.0, xt.column(0).clone_owned(), DMatrix::identity(p, p) * floor);
            }
            let mean = (xt * r) / nk;
            let mut weighted = xt.clone();
            for (i, mut col) in weighted.column_iter_mut().enumerate() {
                col -= &mean;
                col *= r[i].sqrt();
            }
            let mut cov = (&weighted * weighted.transpose()) / nk;
            cov = crate::linalg::symmetrize(&cov);
            for d in 0..p {
                cov[(d, d)] += floor;
            }
            (nk, mean, cov)
        })
        .collect();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for (nk, mean, cov) in per {
        weights.push(nk / n as f64);
        means.push(mean);
        covs.push(cov);
    }
    Params {
        weights,
        means,
        covs,
    }
}

/// Components with responsibility mass below `1e-8 n` are moved onto the
/// worst-explained sample. Returns the number of re-seeded components.
fn reseed_empty(xt: &DMatrix<f64>, params: &mut Params, log_dens: &[f64], floor: f64) -> usize {
    let n = xt.ncols();
    let p = xt.nrows();
    let threshold = 1e-8;
    let mut count = 0;
    let mut used = Vec::new();
    for j in 0..params.weights.len() {
        if params.weights[j] >= threshold {
            continue;
        }
        let worst = (0..n)
            .filter(|i| !used.contains(i))
            .min_by(|&a, &b| log_dens[a].partial_cmp(&log_dens[b]).unwrap().then(a.cmp(&b)));
        let Some(worst) = worst else { break };
        used.push(worst);
        params.means[j] = xt.column(worst).clone_owned();
        let mean = xt.column_mean();
        let mut var = 0.0;
        for col in xt.column_iter() {
            var += (col - &mean).norm_squared();
        }
        let scale = (var / (n as f64 * p as f64)).max(floor);
        params.covs[j] = DMatrix::identity(p, p) * scale;
        params.weights[j] = 1.0 / n as f64;
        count += 1;
    }
    if count > 0 {
        let s: f64 = params.weights.iter().sum();
        params.weights.iter_mut().for_each(|w| *w /= s);
    }
    count
}

//! Configuration-driven benchmark runner and report writers.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classifier::evaluate;
use crate::dataset::{data_manifest, load_dataset, standardize, DataManifest, Dataset, DatasetName, Standardizer};
use crate::design::{
    design_ida, design_lda, design_renyi, design_shannon, initial_projection, kkt_residual, random_baseline, Backtracking, Convergence, DesignReport,
    DesignerConfig, Initialization,
};
use crate::error::{Error, Result};
use crate::measurement::MeasurementModel;
use crate::mixture::{fit_class_gmm, CovarianceFloor, EmConfig, SignalModel};
use crate::mmse::estimate_equivalent_mmse;
use crate::objectives::{estimate_shannon_mi, fano_bounds, GaussStats};
use crate::rng::derive_seed;

const EM_STREAM: u64 = 1 << 40;
const MI_STREAM: u64 = 1;
const KKT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lda,
    Ida,
    Renyi,
    Proposed,
    Random,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lda => "lda",
            Method::Ida => "ida",
            Method::Renyi => "renyi",
            Method::Proposed => "proposed",
            Method::Random => "random",
        }
    }

    fn table_label(self) -> &'static str {
        match self {
            Method::Lda => "LDA",
            Method::Ida => "IDA",
            Method::Renyi => "Renyi",
            Method::Proposed => "Proposed",
            Method::Random => "Random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lda" => Ok(Method::Lda),
            "ida" => Ok(Method::Ida),
            "renyi" => Ok(Method::Renyi),
            "proposed" | "shannon" => Ok(Method::Proposed),
            "random" => Ok(Method::Random),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidArgument(format!("unknown report format {other:?}"))),
        }
    }
}

/// Flat experiment description; every field has a default so config files
/// only need the keys they change. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<DatasetName>,
    /// Explicit data files; when empty, the dataset's conventional file names
    /// are looked up in `data_dir/<dataset>/`.
    pub paths: Vec<PathBuf>,
    pub data_dir: PathBuf,
    pub methods: Vec<Method>,
    /// Mixture components per class; one set of rows per entry.
    pub components: Vec<usize>,
    pub d_list: Vec<usize>,
    /// Measurement noise variance `ν`, `R⁻¹ = ν I`.
    pub noise: f64,
    pub seed: u64,
    pub standardize: bool,

    pub step_size: f64,
    pub max_iters: usize,
    pub n_particles: usize,
    pub freeze_particles: bool,
    pub realign_restart: bool,
    pub init: Initialization,
    pub rel_obj_tol: f64,
    pub grad_tol: f64,
    pub patience: usize,
    pub backtracking: bool,
    /// Particles for the reported MI and KKT residual.
    pub eval_particles: usize,

    pub em_max_iters: usize,
    pub em_tol: f64,
    pub em_restarts: usize,
    /// Covariance floor as a multiple of the class's mean feature variance.
    pub em_reg_floor: f64,

    /// Output file stem; each format appends its extension.
    pub out: Option<PathBuf>,
    pub formats: Vec<ReportFormat>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let designer = DesignerConfig::default();
        let em = EmConfig::default();
        let floor = match em.reg_floor {
            CovarianceFloor::RelativeToMeanVariance(v) | CovarianceFloor::Absolute(v) => v,
        };
        Self {
            dataset: None,
            paths: Vec::new(),
            data_dir: PathBuf::from("data"),
            methods: vec![Method::Lda, Method::Ida, Method::Renyi, Method::Proposed],
            components: vec![1],
            d_list: vec![1, 2, 3, 4, 5],
            noise: 1e-6,
            seed: 0,
            standardize: false,
            step_size: designer.step_size,
            max_iters: designer.max_iters,
            n_particles: designer.n_particles,
            freeze_particles: designer.freeze_particles,
            realign_restart: designer.realign_restart,
            init: designer.init,
            rel_obj_tol: designer.convergence.rel_obj_tol,
            grad_tol: designer.convergence.grad_tol,
            patience: designer.convergence.patience,
            backtracking: designer.backtracking.enabled,
            eval_particles: designer.n_particles,
            em_max_iters: em.max_iters,
            em_tol: em.loglik_tol,
            em_restarts: em.restarts,
            em_reg_floor: floor,
            out: None,
            formats: vec![ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn designer(&self, seed: u64) -> DesignerConfig {
        DesignerConfig {
            step_size: self.step_size,
            max_iters: self.max_iters,
            n_particles: self.n_particles,
            seed,
            convergence: Convergence {
                rel_obj_tol: self.rel_obj_tol,
                grad_tol: self.grad_tol,
                patience: self.patience,
            },
            backtracking: Backtracking {
                enabled: self.backtracking,
                ..Backtracking::default()
            },
            freeze_particles: self.freeze_particles,
            init: self.init,
            realign_restart: self.realign_restart,
        }
    }

    pub fn em(&self, seed: u64) -> EmConfig {
        EmConfig {
            max_iters: self.em_max_iters,
            loglik_tol: self.em_tol,
            reg_floor: CovarianceFloor::RelativeToMeanVariance(self.em_reg_floor),
            restarts: self.em_restarts,
            seed,
        }
    }

    pub fn data_paths(&self) -> Result<Vec<PathBuf>> {
        if !self.paths.is_empty() {
            return Ok(self.paths.clone());
        }
        let name = self.dataset.ok_or_else(|| Error::Config("no dataset given".into()))?;
        Ok(name.default_paths(self.data_dir.join(name.to_string())))
    }

    /// Checks the config against a feature dimension.
    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.noise > 0.0) || !self.noise.is_finite() {
            return Err(Error::Config(format!("noise must be > 0, got {}", self.noise)));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods is empty".into()));
        }
        if self.d_list.is_empty() {
            return Err(Error::Config("d_list is empty".into()));
        }
        if let Some(d) = self.d_list.iter().find(|d| **d == 0 || **d > p) {
            return Err(Error::Config(format!("d = {d} outside [1, {p}]")));
        }
        if self.components.is_empty() || self.components.contains(&0) {
            return Err(Error::Config("components must be a non-empty list of positive counts".into()));
        }
        if self.eval_particles < 2 {
            return Err(Error::Config("eval_particles must be >= 2".into()));
        }
        self.designer(self.seed).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub components: usize,
    pub d: usize,
    pub accuracy: f64,
    /// Monte-Carlo `I(C;Y)` in nats under the fitted model.
    pub mi_estimate: f64,
    pub mi_std_err: f64,
    /// Upper bound on the Bayes error from `H(C|Y)`.
    pub fano_upper: f64,
    pub kkt_residual: f64,
    /// Seconds spent designing and evaluating this row.
    pub wall_time: f64,
    pub seed: u64,
    /// KKT residual at the designer's starting point (iterative methods).
    pub kkt_residual_initial: Option<f64>,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub notes: Vec<String>,
    pub error: Option<String>,
}

impl ReportRow {
    fn failed(method: Method, components: usize, d: usize, seed: u64, err: String) -> Self {
        Self {
            method,
            components,
            d,
            accuracy: f64::NAN,
            mi_estimate: f64::NAN,
            mi_std_err: f64::NAN,
            fano_upper: f64::NAN,
            kkt_residual: f64::NAN,
            wall_time: 0.0,
            seed,
            kkt_residual_initial: None,
            iterations: 0,
            objective_trace: Vec::new(),
            notes: Vec::new(),
            error: Some(err),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub components: usize,
    /// Per-class prior weights (empirical class frequencies).
    pub class_priors: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub crate_version: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub data: Option<DataManifest>,
    pub standardizer: Option<Standardizer>,
    pub fits: Vec<FitRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub rows: Vec<ReportRow>,
    pub manifest: RunManifest,
}

impl ExperimentReport {
    pub fn row(&self, method: Method, components: usize, d: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.components == components && r.d == d)
    }

    /// Copy with timing fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.rows {
            r.wall_time = 0.0;
        }
        out
    }
}

/// Loads the configured dataset and runs every requested row.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let name = cfg.dataset.ok_or_else(|| Error::Config("no dataset given".into()))?;
    let paths = cfg.data_paths()?;
    let ds = load_dataset(name, &paths)?;
    let manifest = data_manifest(&ds, &paths)?;
    run_on_dataset(cfg, &ds, Some(manifest))
}

/// Per-class class-conditional mixtures with empirical class priors.
pub fn fit_signal_model(ds: &Dataset, components: usize, em: &EmConfig) -> Result<SignalModel> {
    let n = ds.train_labels.len() as f64;
    let mut priors = vec![0.0; ds.n_classes];
    for l in &ds.train_labels {
        priors[*l] += 1.0 / n;
    }
    if let Some(m) = priors.iter().position(|w| *w == 0.0) {
        return Err(Error::InvalidArgument(format!("class {m} has no training samples")));
    }
    let total: f64 = priors.iter().sum();
    for w in &mut priors {
        *w /= total;
    }
    let classes = (0..ds.n_classes)
        .map(|m| {
            let cfg = EmConfig {
                seed: derive_seed(em.seed, m as u64),
                ..em.clone()
            };
            fit_class_gmm(&ds.class_train_rows(m), components, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    SignalModel::new(priors, classes)
}

/// Runs the configured rows on an in-memory dataset.
pub fn run_on_dataset(cfg: &ExperimentConfig, ds: &Dataset, data: Option<DataManifest>) -> Result<ExperimentReport> {
    cfg.validate(ds.dim())?;
    let (ds, standardizer) = if cfg.standardize {
        let (s, st) = standardize(ds)?;
        (s, Some(st))
    } else {
        (ds.clone(), None)
    };
    let stats = GaussStats::from_labeled(&ds.train_features, &ds.train_labels, ds.n_classes);
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut row_index = 0u64;
    for (ci, &o) in cfg.components.iter().enumerate() {
        let em = cfg.em(derive_seed(cfg.seed, EM_STREAM + ci as u64));
        let fitted = fit_signal_model(&ds, o, &em);
        fits.push(FitRecord {
            components: o,
            class_priors: fitted.as_ref().map(|m| m.class_priors().to_vec()).unwrap_or_default(),
            error: fitted.as_ref().err().map(|e| e.to_string()),
        });
        for &d in &cfg.d_list {
            for &method in &cfg.methods {
                let seed = derive_seed(cfg.seed, row_index);
                row_index += 1;
                let row = match (&fitted, &stats) {
                    (Ok(model), Ok(stats)) => run_row(cfg, &ds, model, stats, method, o, d, seed),
                    (Err(e), _) => Err(Error::InvalidModel(format!("model fit failed: {e}"))),
                    (_, Err(e)) => Err(Error::InvalidModel(format!("class statistics failed: {e}"))),
                };
                rows.push(row.unwrap_or_else(|e| ReportRow::failed(method, o, d, seed, e.to_string())));
            }
        }
    }
    Ok(ExperimentReport {
        dataset: ds.name.clone(),
        rows,
        manifest: RunManifest {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: cfg.seed,
            config: cfg.clone(),
            data,
            standardizer,
            fits,
        },
    })
}

/// Designs one projection with the given method.
pub fn design_projection(
    method: Method,
    model: &SignalModel,
    stats: &GaussStats,
    d: usize,
    noise_precision: &DMatrix<f64>,
    designer: &DesignerConfig,
) -> Result<DesignReport> {
    match method {
        Method::Lda => design_lda(stats, d, noise_precision),
        Method::Ida => design_ida(stats, d, noise_precision, designer),
        Method::Renyi => design_renyi(model, d, noise_precision, designer),
        Method::Proposed => design_shannon(model, d, noise_precision, designer),
        Method::Random => random_baseline(model.dim(), d, designer.seed),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_row(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    model: &SignalModel,
    stats: &GaussStats,
    method: Method,
    components: usize,
    d: usize,
    seed: u64,
) -> Result<ReportRow> {
    let start = Instant::now();
    let noise_precision = DMatrix::identity(d, d) / cfg.noise;
    let designer = cfg.designer(seed);
    let rep = design_projection(method, model, stats, d, &noise_precision, &designer)?;
    let meas = MeasurementModel::new(rep.projection.clone(), noise_precision)?;
    let batch = evaluate(model, &meas, &ds.test_features, &ds.test_labels)?;
    let mi = estimate_shannon_mi(model, &meas, cfg.eval_particles, derive_seed(seed, MI_STREAM))?;
    let fano = fano_bounds(mi.nats, model.class_priors());
    // Both residuals use the same particle set so they differ only through Φ.
    let kkt_at = |m: &MeasurementModel| -> Result<f64> {
        let st = estimate_equivalent_mmse(model, m, cfg.eval_particles, derive_seed(seed, KKT_STREAM))?;
        kkt_residual(m, &st)
    };
    let kkt = kkt_at(&meas)?;
    let kkt_residual_initial = if method == Method::Proposed {
        let phi0 = initial_projection(&GaussStats::from_model(model), d, &designer)?;
        Some(kkt_at(&meas.with_projection(phi0)?)?)
    } else {
        None
    };
    let iterative = matches!(method, Method::Ida | Method::Renyi | Method::Proposed);
    Ok(ReportRow {
        method,
        components,
        d,
        accuracy: batch.accuracy,
        mi_estimate: mi.nats,
        mi_std_err: mi.std_err,
        fano_upper: fano.upper,
        kkt_residual: kkt,
        wall_time: start.elapsed().as_secs_f64(),
        seed,
        kkt_residual_initial,
        iterations: if iterative { rep.iterations_run } else { 0 },
        objective_trace: rep.objective_trace,
        notes: rep.notes,
        error: None,
    })
}

pub const CSV_HEADER: &str = "method,O_m,d,accuracy,mi_estimate,mi_std_err,fano_upper,kkt_residual,wall_time";

fn csv(report: &ExperimentReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.method, r.components, r.d, r.accuracy, r.mi_estimate, r.mi_std_err, r.fano_upper, r.kkt_residual, r.wall_time
        );
    }
    out
}

/// Accuracy grid with one row per `d` and one column per (method, O_m).
fn markdown(report: &ExperimentReport) -> String {
    let mut columns: Vec<(Method, usize)> = Vec::new();
    let mut cells: BTreeMap<(usize, Method, usize), &ReportRow> = BTreeMap::new();
    for r in &report.rows {
        if !columns.contains(&(r.method, r.components)) {
            columns.push((r.method, r.components));
        }
        cells.insert((r.d, r.method, r.components), r);
    }
    let mut ds: Vec<usize> = report.rows.iter().map(|r| r.d).collect();
    ds.sort_unstable();
    ds.dedup();

    let mut out = String::from("| d |");
    for (m, o) in &columns {
        let _ = write!(out, " {}({o}) |", m.table_label());
    }
    out.push_str("\n|---|");
    for _ in &columns {
        out.push_str("---|");
    }
    out.push('\n');
    for d in ds {
        let _ = write!(out, "| {d} |");
        for (m, o) in &columns {
            match cells.get(&(d, *m, *o)) {
                Some(r) if r.is_ok() => {
                    let _ = write!(out, " {:.4} |", r.accuracy);
                }
                Some(_) => out.push_str(" error |"),
                None => out.push_str(" |"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Csv => csv(report),
        ReportFormat::Json => serde_json::to_string_pretty(report)?,
        ReportFormat::Markdown => markdown(report),
    })
}

/// Writes `stem.<ext>` for the format and returns the path written.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, stem: impl AsRef<Path>) -> Result<PathBuf> {
    let path = stem.as_ref().with_extension(format.extension());
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&path, render_report(report, format)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

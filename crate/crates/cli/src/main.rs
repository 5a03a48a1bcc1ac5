use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use infoproj::nalgebra::DMatrix;

use infoproj::classifier::evaluate;
use infoproj::dataset::{load_dataset, standardize, Dataset, DatasetName};
use infoproj::design::kkt_residual;
use infoproj::experiment::{design_projection, emit_report, fit_signal_model, render_report, run_experiment, ExperimentConfig, Method, ReportFormat};
use infoproj::format::{load_model, load_projection, save_model, save_projection};
use infoproj::mmse::estimate_equivalent_mmse;
use infoproj::objectives::{estimate_shannon_mi, fano_bounds, GaussStats};
use infoproj::MeasurementModel;

#[derive(Parser)]
#[command(name = "infoproj", version, about = "Design and evaluate supervised linear projections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design one projection and print it with diagnostics.
    Design(DesignArgs),
    /// Run a full configuration sweep and write reports.
    Bench(Common),
    /// Fit the per-class mixtures and cache the model.
    Fit(Common),
    /// Classify the test split with a cached model and projection.
    Eval(EvalArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Flat TOML file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset: Option<DatasetName>,
    /// Directory with one subdirectory per dataset (satellite, letter, usps).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Comma-separated methods: lda, ida, renyi, proposed, random.
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    /// Comma-separated target dimensions.
    #[arg(long, value_delimiter = ',')]
    d: Vec<usize>,
    /// Comma-separated mixture components per class.
    #[arg(long, value_delimiter = ',')]
    components: Vec<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
    /// Output file stem (bench, design) or file (fit).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated report formats: csv, json, markdown.
    #[arg(long, value_delimiter = ',')]
    format: Vec<ReportFormat>,
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    common: Common,
    /// Use a cached model instead of fitting one.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    projection: PathBuf,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(ds) = self.dataset {
            cfg.dataset = Some(ds);
        }
        if let Some(dir) = &self.data_dir {
            cfg.data_dir = dir.clone();
        }
        if !self.method.is_empty() {
            cfg.methods = self.method.clone();
        }
        if !self.d.is_empty() {
            cfg.d_list = self.d.clone();
        }
        if !self.components.is_empty() {
            cfg.components = self.components.clone();
        }
        if let Some(n) = self.particles {
            cfg.n_particles = n;
            cfg.eval_particles = n;
        }
        if let Some(s) = self.step {
            cfg.step_size = s;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if !self.format.is_empty() {
            cfg.formats = self.format.clone();
        }
        Ok(cfg)
    }
}

fn load(cfg: &ExperimentConfig) -> Result<Dataset> {
    let name = cfg.dataset.context("no dataset given (use --dataset or the config file)")?;
    let paths = cfg.data_paths()?;
    let ds = load_dataset(name, &paths).with_context(|| format!("loading {name}"))?;
    Ok(if cfg.standardize { standardize(&ds)?.0 } else { ds })
}

fn print_matrix(m: &DMatrix<f64>) {
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>10.6}")).collect();
        println!("{}", cells.join(" "));
    }
}

fn design(args: &DesignArgs) -> Result<()> {
    let cfg = args.common.config()?;
    let ds = load(&cfg)?;
    cfg.validate(ds.dim())?;
    let (&[method], &[d], &[o]) = (cfg.methods.as_slice(), cfg.d_list.as_slice(), cfg.components.as_slice()) else {
        bail!("design takes exactly one --method, one --d and one --components");
    };
    let model = match &args.model {
        Some(path) => load_model(path)?,
        None => fit_signal_model(&ds, o, &cfg.em(cfg.seed))?,
    };
    let stats = GaussStats::from_labeled(&ds.train_features, &ds.train_labels, ds.n_classes)?;
    let noise = DMatrix::identity(d, d) / cfg.noise;
    let rep = design_projection(method, &model, &stats, d, &noise, &cfg.designer(cfg.seed))?;
    let meas = MeasurementModel::new(rep.projection.clone(), noise)?;
    let acc = evaluate(&model, &meas, &ds.test_features, &ds.test_labels)?.accuracy;
    let mi = estimate_shannon_mi(&model, &meas, cfg.eval_particles, cfg.seed)?;
    let fano = fano_bounds(mi.nats, model.class_priors());
    let st = estimate_equivalent_mmse(&model, &meas, cfg.eval_particles, cfg.seed)?;

    println!("projection ({d} x {}):", ds.dim());
    print_matrix(&rep.projection);
    println!("method        {method}");
    println!("iterations    {} ({:?})", rep.iterations_run, rep.stop_reason);
    if let Some(v) = rep.final_objective() {
        println!("objective     {v:.6}");
    }
    println!("accuracy      {acc:.4}");
    println!("mi            {:.6} nats (se {:.2e})", mi.nats, mi.std_err);
    println!("fano bounds   [{:.4}, {:.4}]", fano.lower, fano.upper);
    println!("kkt residual  {:.4e}", kkt_residual(&meas, &st)?);
    for note in &rep.notes {
        println!("note          {note}");
    }
    if let Some(out) = &cfg.out {
        let path = out.with_extension("json");
        save_projection(&rep.projection, &path)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn bench(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let report = run_experiment(&cfg)?;
    match &cfg.out {
        Some(stem) => {
            for f in &cfg.formats {
                let path = emit_report(&report, *f, stem)?;
                eprintln!("wrote {}", path.display());
            }
        }
        None => {
            for f in &cfg.formats {
                if *f != ReportFormat::Json {
                    println!("{}", render_report(&report, *f)?);
                }
            }
        }
    }
    let failed = report.rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} row(s) failed; see the error fields in the JSON report");
    }
    Ok(())
}

fn fit(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let ds = load(&cfg)?;
    let &[o] = cfg.components.as_slice() else {
        bail!("fit takes exactly one --components value");
    };
    let model = fit_signal_model(&ds, o, &cfg.em(cfg.seed))?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}-{o}.model.json", ds.name)));
    save_model(&model, &out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.common.config()?;
    let ds = load(&cfg)?;
    let model = load_model(&args.model)?;
    let phi = load_projection(&args.projection)?;
    let d = phi.nrows();
    let meas = MeasurementModel::new(phi, DMatrix::identity(d, d) / cfg.noise)?;
    let batch = evaluate(&model, &meas, &ds.test_features, &ds.test_labels)?;
    println!("accuracy {:.4} on {} test rows", batch.accuracy, ds.test_labels.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Design(a) => design(a),
        Command::Bench(c) => bench(c),
        Command::Fit(c) => fit(c),
        Command::Eval(a) => eval(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

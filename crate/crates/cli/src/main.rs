//! `glgmix` command-line tool.

mod report;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use glgmix::data::{read_csv, ModelSpec};
use glgmix::diagnostics::{compare_aic, curve_grid, glg_curve, simulated_envelope, ResidualKind};
use glgmix::mnb::{self, MnbFitOptions};
use glgmix::pglg::{self, LambdaMode, PglgFitOptions};
use glgmix::quadrature::DEFAULT_ORDER;
use glgmix::simulate::{simulate_mnb, simulate_pglg, SimDesign};
use glgmix::{Dataset, GlgParams, MnbParams, PglgParams};
use log::warn;
use serde::Deserialize;

use report::{FitReport, Model};

#[derive(Parser)]
#[command(name = "glgmix", version, about = "Clustered count regression with GLG random intercepts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write a JSON report
    Fit(FitArgs),
    /// Simulate a dataset from given parameters
    Simulate(SimulateArgs),
    /// Residuals and a simulated envelope for an MNB or NB fit
    Diagnose(DiagnoseArgs),
    /// Rank fit reports by AIC
    Compare(CompareArgs),
    /// Tabulate GLG densities for plotting
    GlgCurve(CurveArgs),
}

#[derive(Args)]
struct SpecArgs {
    /// Model spec as a JSON file; overrides the flags below
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    cluster: Option<String>,
    /// Covariate column (repeatable)
    #[arg(long = "covariate")]
    covariates: Vec<String>,
    /// Product term written a:b (repeatable)
    #[arg(long = "interaction")]
    interactions: Vec<String>,
    #[arg(long)]
    offset: Option<String>,
    #[arg(long)]
    no_intercept: bool,
}

impl SpecArgs {
    fn resolve(&self) -> Result<ModelSpec> {
        if let Some(path) = &self.spec {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            return Ok(ModelSpec::from_json(&text)?);
        }
        let (Some(response), Some(cluster)) = (&self.response, &self.cluster) else {
            bail!("give --spec FILE or both --response and --cluster");
        };
        let mut spec = ModelSpec::new(response, cluster);
        for c in &self.covariates {
            spec = spec.covariate(c);
        }
        for term in &self.interactions {
            let Some((a, b)) = term.split_once(':') else {
                bail!("interaction '{term}' should be written a:b");
            };
            spec = spec.interaction(a, b);
        }
        if let Some(o) = &self.offset {
            spec = spec.offset(o);
        }
        if self.no_intercept {
            spec = spec.without_intercept();
        }
        Ok(spec)
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    model: Model,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    spec: SpecArgs,
    /// Gauss–Hermite order for the pglg models
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Report path; stdout if omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimModel {
    Pglg,
    Mnb,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    model: SimModel,
    /// Parameters as JSON: {"beta", "phi"} or {"beta", "sigma", "lambda"}, or a fit report
    #[arg(long)]
    params: PathBuf,
    /// Design as JSON
    #[arg(long)]
    design: PathBuf,
    /// Overrides the seed in the design file
    #[arg(long)]
    seed: Option<u64>,
    /// CSV path; stdout if omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Report written by `glgmix fit`
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "pearson")]
    residual: ResidualKind,
    /// Envelope replicates; 0 skips the envelope
    #[arg(long, default_value_t = 100)]
    envelope: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Fit reports on the same data
    #[arg(required = true, num_args = 2..)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Comma-separated shapes
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 1001)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn fit(args: &FitArgs) -> Result<ExitCode> {
    let spec = args.spec.resolve()?;
    let data = read_csv(&args.data, &spec)?;
    let data = if args.model == Model::Nb { data.ungrouped() } else { data };
    let (result, deviance) = match args.model {
        Model::Mnb | Model::Nb => {
            let opts = MnbFitOptions {
                max_iter: args.max_iter,
                ..Default::default()
            };
            let f = mnb::fit(&data, None, &opts)?;
            let dev = mnb::deviance(&data, &f.params)?;
            (f.result, Some(dev))
        }
        Model::Pglg | Model::PglgNormal => {
            let lambda = if args.model == Model::Pglg { LambdaMode::Free } else { LambdaMode::Fixed(0.0) };
            let opts = PglgFitOptions {
                lambda,
                order: args.order,
                max_iter: args.max_iter,
                ..Default::default()
            };
            (pglg::fit(&data, None, &opts)?.result, None)
        }
    };
    let report = FitReport::new(args.model, spec, data.clusters.len(), &result, deviance);
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    if result.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        warn!("fit did not converge after {} iterations", result.n_iterations);
        Ok(ExitCode::from(2))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ParamsFile {
    Report(Box<FitReport>),
    Mnb(MnbParams),
    Pglg(PglgParams),
}

fn simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.design).with_context(|| format!("cannot read {}", args.design.display()))?;
    let mut design = SimDesign::from_json(&text)?;
    if let Some(seed) = args.seed {
        design.seed = seed;
    }
    let text = std::fs::read_to_string(&args.params).with_context(|| format!("cannot read {}", args.params.display()))?;
    let params: ParamsFile =
        serde_json::from_str(&text).with_context(|| format!("{} holds no usable parameters", args.params.display()))?;
    let data = match (args.model, params) {
        (SimModel::Mnb, ParamsFile::Mnb(p)) => simulate_mnb(&design, &p)?,
        (SimModel::Mnb, ParamsFile::Report(r)) => simulate_mnb(&design, &r.mnb_params()?)?,
        (SimModel::Pglg, ParamsFile::Pglg(p)) => simulate_pglg(&design, &p)?,
        (SimModel::Pglg, ParamsFile::Report(r)) => simulate_pglg(&design, &r.pglg_params()?)?,
        (SimModel::Mnb, ParamsFile::Pglg(_)) => bail!("mnb simulation needs beta and phi"),
        (SimModel::Pglg, ParamsFile::Mnb(_)) => bail!("pglg simulation needs beta, sigma and lambda"),
    };
    let mut out = output(args.out.as_deref())?;
    data.write_csv(&mut out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn diagnose(args: &DiagnoseArgs) -> Result<ExitCode> {
    let report = FitReport::read(&args.fit)?;
    let params = report.mnb_params()?;
    let data = read_csv(&args.data, &report.spec)?;
    let data: Dataset = if report.model == Model::Nb { data.ungrouped() } else { data };
    if !report.converged {
        warn!("the fit in {} did not converge; diagnostics may mislead", args.fit.display());
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;

    let residuals = mnb::residuals(&data, &params)?;
    let negative = residuals.negative_components();
    let mut out = output(Some(&args.out.join("residuals.csv")))?;
    writeln!(out, "cluster,index,y,fitted,leverage,deviance_component,deviance_residual,pearson")?;
    for r in &residuals.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.cluster,
            r.index,
            r.y,
            r.fitted,
            r.leverage,
            r.deviance_component,
            fmt_opt(r.deviance_residual),
            r.pearson
        )?;
    }
    out.flush()?;

    if args.envelope == 0 {
        return Ok(ExitCode::SUCCESS);
    }
    if matches!(args.residual, ResidualKind::Deviance) && negative > 0 {
        bail!("deviance residuals are undefined for {negative} observations; use --residual pearson for the envelope");
    }
    let env = simulated_envelope(&data, &params, args.residual, args.envelope, args.level, args.seed)?;
    let mut out = output(Some(&args.out.join("envelope.csv")))?;
    env.write_csv(&mut out)?;
    out.flush()?;
    let title = match args.residual {
        ResidualKind::Deviance => "Deviance component residuals",
        ResidualKind::Pearson => "Pearson residuals",
    };
    std::fs::write(args.out.join("envelope.svg"), env.to_svg(title))?;
    if env.replicates_dropped > 0 {
        warn!("{} of {} envelope replicates dropped", env.replicates_dropped, args.envelope);
    }
    Ok(ExitCode::SUCCESS)
}

fn compare(args: &CompareArgs) -> Result<ExitCode> {
    let fits = args
        .reports
        .iter()
        .map(|p| Ok((p.display().to_string(), FitReport::read(p)?.as_fit_result())))
        .collect::<Result<Vec<_>>>()?;
    let table = compare_aic(&fits)?;
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "model,aic,delta,loglik,n_free")?;
    for r in table {
        writeln!(out, "{},{},{},{},{}", r.model, r.aic, r.delta, r.loglik, r.n_free)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn glg_curves(args: &CurveArgs) -> Result<ExitCode> {
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "lambda,y,pdf")?;
    for &lambda in &args.lambda {
        let p = GlgParams::new(args.mu, args.sigma, lambda)?;
        for (y, f) in glg_curve(&p, &curve_grid(&p, args.points))? {
            writeln!(out, "{lambda},{y},{f}")?;
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("GLGMIX_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("GLGMIX_THREADS must be a positive integer, got '{value}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let run = init_threads().and_then(|()| match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Compare(a) => compare(a),
        Command::GlgCurve(a) => glg_curves(a),
    });
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

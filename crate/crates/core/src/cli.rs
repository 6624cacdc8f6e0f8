//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::builder::{build, predict, BonferroniScope, BuildOptions};
use crate::data::{ingest_csv, parse_variable_list, read_covariates_csv};
use crate::error::{Error, Result};
use crate::estimation::FitOptions;
use crate::io::{export_dot, ModelDocument};
use crate::model::{Component, Link};
use crate::simulate::{simulate, CovariateSpec, Noise, SimSpec};

#[derive(Debug, Parser)]
#[command(name = "scaletree", version, about = "Tree-structured location-scale models for ordinal responses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grow location and scale trees on a CSV file.
    Fit(FitArgs),
    /// Write a synthetic data set drawn from a latent variable model.
    Simulate(SimulateArgs),
    /// Category probabilities and terminal nodes for new rows.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    /// Covariates as `name:kind,...` with kind metric, ordinal or binary.
    #[arg(long)]
    vars: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Divide alpha over covariates (`covariates`) or covariate-component pairs (`pairs`).
    #[arg(long, default_value = "pairs")]
    bonferroni: BonferroniScope,
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    min_node_size: usize,
    #[arg(long, default_value = "logit")]
    link: Link,
    #[arg(long, default_value_t = 30)]
    max_steps: usize,
    #[arg(long, default_value = "model.json")]
    out_model: PathBuf,
    #[arg(long, default_value = "location.dot")]
    out_dot_location: PathBuf,
    #[arg(long, default_value = "scale.dot")]
    out_dot_scale: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    /// Repeatable: `name:normal`, `name:uniform`, `name:binary`, `name:ordinal:m`.
    #[arg(long = "covariate", required = true)]
    covariates: Vec<CovariateSpec>,
    /// Latent mean, e.g. `1*I(x1 <= 0)`.
    #[arg(long, default_value = "0")]
    location: String,
    /// Latent standard-deviation multiplier, e.g. `exp(0.8*I(x2 <= 0))`.
    #[arg(long, default_value = "1")]
    scale: String,
    #[arg(long, default_value = "logistic")]
    noise: Noise,
    /// Comma-separated increasing category boundaries.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    thresholds: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Response column; when present the log-likelihood of the rows is printed.
    #[arg(long)]
    response: Option<String>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Predict(a) => run_predict(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_fit(a: FitArgs) -> Result<()> {
    let specs = parse_variable_list(&a.vars)?;
    let data = ingest_csv(&a.data, &a.response, &specs)?;
    let options = BuildOptions {
        alpha_global: a.alpha,
        bonferroni: a.bonferroni,
        n_permutations: a.permutations,
        seed: a.seed,
        min_node_size: a.min_node_size,
        max_steps: a.max_steps,
        link: a.link,
        fit: FitOptions::default(),
    };
    let (model, report) = match build(&data, &options) {
        Ok(r) => r,
        Err(failure) => {
            eprint!("{}", failure.partial.trace_table());
            return Err(failure.error);
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let doc = ModelDocument::new(&model, Some(&options), Some(&report));
    doc.write(&a.out_model)?;
    std::fs::write(&a.out_dot_location, export_dot(&model, Component::Location))?;
    std::fs::write(&a.out_dot_scale, export_dot(&model, Component::Scale))?;
    print!("{}", report.trace_table());
    Ok(())
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let spec = SimSpec {
        n: a.n,
        covariates: a.covariates,
        location: a.location,
        scale: a.scale,
        noise: a.noise,
        thresholds: a.thresholds,
        seed: a.seed,
    };
    if spec.covariates.iter().any(|c| c.name == a.response) {
        return Err(Error::InvalidOptions(format!("response name `{}` clashes with a covariate", a.response)));
    }
    let sim = simulate(&spec)?;
    sim.write_csv(&a.response, BufWriter::new(File::create(&a.out)?))
}

fn run_predict(a: PredictArgs) -> Result<()> {
    let doc = ModelDocument::read(&a.model)?;
    let model = doc.to_model()?;
    let (x, y) = read_covariates_csv(&a.data, &model.variables, a.response.as_deref())?;
    let preds = predict(&model, &x)?;

    let mut out = BufWriter::new(File::create(&a.out)?);
    let mut header = vec!["row".to_string(), "location_node".into(), "scale_node".into()];
    header.extend((1..=model.k).map(|r| format!("p{r}")));
    writeln!(out, "{}", header.join(","))?;
    for (i, p) in preds.iter().enumerate() {
        let probs: Vec<String> = p.probs.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{},{},{},{}", i + 1, p.location_node, p.scale_node, probs.join(","))?;
    }
    out.flush()?;

    if let Some(y) = y {
        let mut loglik = 0.0;
        for (i, (&label, p)) in y.iter().zip(&preds).enumerate() {
            if label == 0 || label > model.k {
                return Err(Error::ingest(i + 1, a.response.as_deref().unwrap_or(""), "label outside the model's categories"));
            }
            loglik += p.probs[label - 1].ln();
        }
        let mut stdout = io::stdout().lock();
        writeln!(stdout, "rows: {}", preds.len())?;
        writeln!(stdout, "loglik: {loglik}")?;
    }
    Ok(())
}

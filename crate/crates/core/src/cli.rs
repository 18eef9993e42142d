//! The `dtd` command line. Exit codes: 0 success, 1 verification failure, 2 usage or IO error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::diagnostics::{check_root_region_with, run_table1};
use crate::engine::{relevance_recursive, relevance_train_free, RootPolicy};
use crate::error::{Error, Result};
use crate::experiment::{
    format_table1, generate_network, generate_network_with, region_map, sample_normal_inputs, write_region_csv,
    write_table1_csv, ActivationKind, BiasMode, ExperimentConfig, INIT_NOTE,
};
use crate::net::Network;
use crate::rules::RuleKind;
use crate::verify::{run_verify, Fault, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "dtd", version, about = "Deep Taylor Decomposition audits for small dense networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check whether train-free roots share the input's linear region and output.
    Table1(Table1Args),
    /// Compute a relevance trace for one input.
    Explain(ExplainArgs),
    /// Rasterize the activation regions of a 2-input network.
    RegionMap(RegionMapArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
}

/// Experiment configuration: an optional JSON file, overridden by individual flags.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// ExperimentConfig JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Layer widths, input first, e.g. 10,10,10,10.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub bias_mode: Option<BiasMode>,
    /// Activation used on every layer.
    #[arg(long, value_enum)]
    pub activation: Option<ActivationKind>,
    /// Comma-separated rules: lrp0, eps:<e>, w2, zplus, gamma:<g>, ab:1:0.
    #[arg(long, value_delimiter = ',')]
    pub rules: Option<Vec<RuleKind>>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub min_output: Option<f64>,
    /// Explained output index.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub tol_grad: Option<f64>,
    #[arg(long)]
    pub tol_out: Option<f64>,
    #[arg(long)]
    pub fd_step: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.dims {
            c.dims = v.clone();
        }
        if let Some(v) = self.bias_mode {
            c.bias_mode = v;
        }
        if let Some(v) = self.activation {
            c.activation = v;
        }
        if let Some(v) = &self.rules {
            c.rules = v.clone();
        }
        if let Some(v) = self.samples {
            c.n_samples = v;
        }
        if let Some(v) = self.min_output {
            c.min_output = v;
        }
        if let Some(v) = self.class {
            c.class = v;
        }
        if let Some(v) = self.tol_grad {
            c.tolerances.gradient = v;
        }
        if let Some(v) = self.tol_out {
            c.tolerances.output = v;
        }
        if let Some(v) = self.fd_step {
            c.tolerances.fd_step = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    TrainFree,
    Recursive,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Network JSON file.
    #[arg(long)]
    pub network: PathBuf,
    /// Input vector, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "seed")]
    pub input: Option<Vec<f64>>,
    /// Draw the input from N(0, I) with this seed instead.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "zplus")]
    pub rule: RuleKind,
    #[arg(long, default_value_t = 0)]
    pub class: usize,
    #[arg(long, value_enum, default_value = "train-free")]
    pub algorithm: AlgorithmArg,
    /// Append a region check for every recorded root.
    #[arg(long)]
    pub check_roots: bool,
    /// Trace JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegionMapArgs {
    /// Network JSON file. Without it a random 2-10-10-1 ReLU network is drawn from --seed.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "non-positive")]
    pub bias_mode: BiasMode,
    /// Raster square `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true, default_value = "-2,2")]
    pub bounds: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub class: usize,
    /// Raster CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run only these checks (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    #[arg(long, value_enum)]
    pub inject_fault: Option<Fault>,
    /// Trials per check.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Report JSON path; stdout summary only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Runs a parsed command. `Ok(false)` means a verification failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Table1(args) => table1(&args),
        Command::Explain(args) => explain(&args),
        Command::RegionMap(args) => region(&args),
        Command::Verify(args) => verify(&args),
    }
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| with_path(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| with_path(path, e))
}

fn load_network(path: &Path) -> Result<Network> {
    Network::load(path).map_err(|e| match e {
        Error::Io(io) => with_path(path, io),
        other => other,
    })
}

fn table1(args: &Table1Args) -> Result<bool> {
    let config = args.config.resolve()?;
    let mut out = create(&args.out)?;
    let net = generate_network(&config)?;
    let reports = run_table1(&net, &config.rules, &config.table1_options())?;
    write_table1_csv(&reports, &mut out)?;
    out.flush()?;
    println!("# {INIT_NOTE}");
    println!(
        "# seed {} dims {:?} bias {:?} samples {} min_output {}",
        config.seed, config.dims, config.bias_mode, config.n_samples, config.min_output
    );
    print!("{}", format_table1(&reports));
    Ok(true)
}

fn explain(args: &ExplainArgs) -> Result<bool> {
    let net = load_network(&args.network)?;
    let x = match (&args.input, args.seed) {
        (Some(x), _) => x.clone(),
        (None, Some(seed)) => sample_normal_inputs(net.input_dim(), 1, seed)?.remove(0),
        (None, None) => return Err(Error::InvalidArgument("explain needs --input or --seed".into())),
    };
    let trace = match args.algorithm {
        AlgorithmArg::TrainFree => relevance_train_free(&net, &x, args.class, args.rule)?,
        AlgorithmArg::Recursive => relevance_recursive(&net, &x, args.class, &RootPolicy::RuleBased(args.rule))?,
    };
    let mut value = trace.to_json_value();
    value["input"] = json!(x);
    if args.check_roots {
        let checks = trace
            .roots
            .iter()
            .map(|r| {
                let c = check_root_region_with(&net, &x, args.class, &r.root, Default::default())?;
                Ok(json!({
                    "layer": r.root.layer,
                    "neuron": r.root.neuron,
                    "same_gradient": c.same_gradient,
                    "gradient_gap": c.gradient_gap,
                    "same_fingerprint": c.same_fingerprint,
                    "same_output": c.same_output,
                    "output_gap": c.output_gap,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        value["root_checks"] = json!(checks);
    }
    let text = serde_json::to_string_pretty(&value)? + "\n";
    match &args.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(true)
}

fn region(args: &RegionMapArgs) -> Result<bool> {
    let &[lo, hi] = args.bounds.as_slice() else {
        return Err(Error::InvalidArgument(format!("--bounds takes lo,hi, got {:?}", args.bounds)));
    };
    let net = match &args.network {
        Some(path) => load_network(path)?,
        None => generate_network_with(&[2, 10, 10, 1], args.bias_mode, crate::net::Activation::Relu, args.seed)?,
    };
    let mut out = create(&args.out)?;
    let map = region_map(&net, (lo, hi), args.resolution, args.class)?;
    write_region_csv(&map, &mut out)?;
    out.flush()?;
    println!("{} regions on a {}x{} raster over [{lo}, {hi}]^2", map.regions, map.resolution, map.resolution);
    Ok(true)
}

fn verify(args: &VerifyArgs) -> Result<bool> {
    let config = args.config.resolve()?;
    let opts = VerifyOptions {
        only: args.only.clone(),
        fault: args.inject_fault,
        trials: args.trials,
    };
    let report = run_verify(&config, &opts)?;
    if let Some(path) = &args.out {
        write_text(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    for check in &report.checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        let metrics: Vec<String> = check
            .measurements
            .iter()
            .map(|m| format!("{}={:.3e} ({})", m.metric, m.value, m.bound))
            .collect();
        println!(
            "{status} {:<20} trials={} skipped={} {}",
            check.name,
            check.trials,
            check.skipped,
            metrics.join(" ")
        );
    }
    Ok(report.passed)
}

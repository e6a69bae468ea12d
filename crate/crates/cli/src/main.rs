//! `pricer-lab`: runs configured experiments and writes CSV/JSON artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use pricer::apps::{run_experiment, write_outputs, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "pricer-lab", version, about = "Private collaborative relaying experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize a collaboration scheme and write its trace.
    Optimize(RunArgs),
    /// Monte-Carlo validation of the MSE bound.
    Simulate(RunArgs),
    /// Link, relay and PS privacy guarantees of a scheme.
    PrivacyReport(RunArgs),
    /// Bias versus MSE across link probabilities and λ.
    Tradeoff(RunArgs),
    /// MSE and PIV against the number of trusted ring neighbors.
    NeighborSweep(RunArgs),
    /// Closed-form Erdős–Rényi schemes and MSEs.
    ErAnalytic(RunArgs),
    /// Distributed k-means with and without collaboration.
    Kmeans(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config; defaults are used for absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// `l1` or `l2`.
    #[arg(long)]
    bias_norm: Option<String>,
    /// Step size for both weights and noise levels.
    #[arg(long)]
    eta: Option<f64>,
    /// Maximum optimizer iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Optimize(a) => ("optimize", a),
            Command::Simulate(a) => ("simulate", a),
            Command::PrivacyReport(a) => ("privacy-report", a),
            Command::Tradeoff(a) => ("tradeoff", a),
            Command::NeighborSweep(a) => ("neighbor-sweep", a),
            Command::ErAnalytic(a) => ("er-analytic", a),
            Command::Kmeans(a) => ("kmeans", a),
        }
    }
}

fn read_config(path: Option<&Path>) -> anyhow::Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
        Value::Object(map) => Ok(map),
        _ => Err(anyhow!("config {} is not a JSON object", path.display())),
    }
}

fn build_config(name: &str, args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut map = read_config(args.config.as_deref())?;
    if let Some(tag) = map.get("experiment").and_then(Value::as_str) {
        if tag != name {
            return Err(anyhow!("config is for experiment {tag:?}, not {name:?}"));
        }
    }
    map.insert("experiment".into(), json!(name));
    if let Some(seed) = args.seed {
        map.insert("seed".into(), json!(seed));
    }
    if !map.contains_key("seed") {
        return Err(anyhow!("a seed is required (config key \"seed\" or --seed)"));
    }
    let mut overrides = Map::new();
    if let Some(v) = args.lambda {
        overrides.insert("lambda".into(), json!(v));
    }
    if let Some(v) = &args.bias_norm {
        overrides.insert("bias_norm".into(), json!(v.to_ascii_lowercase()));
    }
    if let Some(v) = args.eta {
        overrides.insert("eta_alpha".into(), json!(v));
        overrides.insert("eta_sigma".into(), json!(v));
    }
    if let Some(v) = args.iters {
        overrides.insert("max_iters".into(), json!(v));
    }
    if let Some(v) = args.tol {
        overrides.insert("tol".into(), json!(v));
    }
    let mut config: ExperimentConfig = serde_json::from_value(Value::Object(map)).context("invalid config")?;
    if !overrides.is_empty() {
        let opt = config
            .experiment
            .optimizer_mut()
            .ok_or_else(|| anyhow!("{name} has no optimizer settings to override"))?;
        let mut current = serde_json::to_value(&*opt)?;
        if let Value::Object(m) = &mut current {
            m.extend(overrides);
        }
        *opt = serde_json::from_value(current).context("invalid optimizer override")?;
    }
    Ok(config)
}

fn run(cli: &Cli) -> anyhow::Result<Value> {
    let (name, args) = cli.command.parts();
    let config = build_config(name, args)?;
    log::info!("running {name} with seed {}", config.seed);
    let out = run_experiment(&config)?;
    let written = write_outputs(&args.out, &out)?;
    for path in &written {
        log::info!("wrote {}", path.display());
    }
    Ok(out.summary)
}

fn error_json(err: &anyhow::Error) -> Value {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<pricer::Error>())
        .map_or("config", pricer::Error::kind);
    let causes: Vec<String> = err.chain().skip(1).map(ToString::to_string).collect();
    json!({"error": {"kind": kind, "message": err.to_string(), "causes": causes}})
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}

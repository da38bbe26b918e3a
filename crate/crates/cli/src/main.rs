//! `fatflow` experiment runner.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 a run diverged
//! (partial results are still written).

mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fatflow::experiments::{
    run_contamination_grid, run_fig1, run_stability, run_train_single, ExperimentConfig, ExperimentKind,
};
use fatflow::Error;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "fatflow", version, about = "Normalizing flows with fat-tailed base distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Penalty, influence and density curves of the three base families.
    Fig1(Common),
    /// Train one model and save its checkpoint and metrics.
    Train(Common),
    /// Learning-rate stability matrix on contaminated data.
    Stability(Common),
    /// Clean/contaminated train x test grid over degrees of freedom.
    Grid(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file layered over the template defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory [default: out/<subcommand>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override any config field by dotted path, e.g. train.max_steps=500.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
    /// Log progress to stderr.
    #[arg(short, long)]
    verbose: bool,
}

enum Failure {
    Config { field: String, message: String },
    Data { message: String, offset: Option<u64> },
}

impl Failure {
    fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Failure::Config { field: field.into(), message: message.into() }
    }

    fn report(&self) -> ExitCode {
        let (code, body) = match self {
            Failure::Config { field, message } => {
                (2, json!({"error": "config", "field": field, "message": message}))
            }
            Failure::Data { message, offset } => (3, json!({"error": "data", "offset": offset, "message": message})),
        };
        eprintln!("{body}");
        ExitCode::from(code)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { field, message } => Failure::Config { field, message },
            Error::Parse { offset, .. } => Failure::Data { message: e.to_string(), offset: Some(offset) },
            other => Failure::Data { message: other.to_string(), offset: None },
        }
    }
}

fn resolve(kind: ExperimentKind, args: &Common) -> Result<ExperimentConfig, Failure> {
    let defaults = ExperimentConfig::defaults(kind);
    let mut value = serde_json::to_value(&defaults).map_err(|e| Failure::config("<defaults>", e.to_string()))?;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::config("--config", format!("{}: {e}", path.display())))?;
        if !file.is_object() {
            return Err(Failure::config("--config", "top level must be a JSON object"));
        }
        overrides::merge(&mut value, file);
    }
    for s in &args.set {
        let (path, v) = overrides::parse_set(s).map_err(|m| Failure::config("--set", m))?;
        overrides::set_path(&mut value, &path, v).map_err(|m| Failure::config("--set", m))?;
    }
    if let Some(seed) = args.seed {
        value["seed"] = json!(seed);
    }
    if let Some(e) = value.get("experiment").and_then(Value::as_str) {
        if e != kind.name() {
            log::warn!("config says experiment {e:?}; running {:?}", kind.name());
        }
    }
    value["experiment"] = json!(kind.name());
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        Failure::config(field, e.into_inner().to_string())
    })?;
    cfg.train.validate()?;
    if cfg.model.steps == 0 || cfg.model.hidden == 0 || cfg.model.levels == 0 {
        return Err(Failure::config("model", "steps, hidden and levels must be >= 1"));
    }
    Ok(cfg)
}

fn run(kind: ExperimentKind, args: &Common) -> Result<bool, Failure> {
    let cfg = resolve(kind, args)?;
    if args.dry_run {
        let text = serde_json::to_string_pretty(&cfg).map_err(|e| Failure::config("config", e.to_string()))?;
        println!("{text}");
        return Ok(false);
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    let diverged = match kind {
        ExperimentKind::Fig1 => {
            let curves = run_fig1(&cfg, &out)?;
            println!("wrote {} curves and fig1.svg to {}", curves.len(), out.display());
            false
        }
        ExperimentKind::Train => {
            let r = run_train_single(&cfg, &out)?;
            println!(
                "{} after {} steps; final train {} val {} test {} ({})",
                r.status.label(),
                r.steps_run,
                fmt(r.final_train_nll),
                fmt(r.final_val_nll),
                fmt(r.test_nll),
                r.units.label()
            );
            r.status.is_diverged()
        }
        ExperimentKind::Stability => {
            let r = run_stability(&cfg, &out)?;
            print!("{}", r.summary_csv());
            r.any_diverged()
        }
        ExperimentKind::Grid => {
            let r = run_contamination_grid(&cfg, &out)?;
            print!("{}", r.table_csv());
            r.any_diverged()
        }
    };
    Ok(diverged)
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Fig1(a) => (ExperimentKind::Fig1, a),
        Command::Train(a) => (ExperimentKind::Train, a),
        Command::Stability(a) => (ExperimentKind::Stability, a),
        Command::Grid(a) => (ExperimentKind::Grid, a),
    };
    let level = if args.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(kind, args) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("{}", json!({"error": "diverged", "message": "at least one run diverged; results were written"}));
            ExitCode::from(4)
        }
        Err(f) => f.report(),
    }
}

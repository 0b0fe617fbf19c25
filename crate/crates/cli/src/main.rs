use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcms_core::invariance::DecisionMode;
use mcms_core::pipeline::{render_from_file, run_pipeline, PipelineConfig, StageSelection};
use mcms_core::scale::{builtin_mcms, ScaleDefinition};
use mcms_core::sem::ChisqMultiplier;
use mcms_core::simulate::{simulate_responses, GenerationMode, GeneratorConfig};
use mcms_core::Error;

#[derive(Parser)]
#[command(name = "mcms", version, about = "Survey psychometrics: spam filtering, reliability, EFA, CFA and measurement invariance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and spam-filter responses; writes the ingest summary and rejection log.
    Ingest(StageArgs),
    /// Ingest plus composite means, correlations and Cronbach's alpha.
    Describe(StageArgs),
    /// Ingest plus EFA item reduction.
    Efa(StageArgs),
    /// Ingest plus per-group CFA.
    Cfa(StageArgs),
    /// Ingest plus the configural/metric/scalar ladder.
    Invariance(StageArgs),
    /// Every stage.
    Pipeline(StageArgs),
    /// Generate a response file from model parameters.
    Simulate(SimulateArgs),
    /// Re-render tables from an existing report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    decision_mode: Option<DecisionMode>,
    #[arg(long, value_parser = parse_multiplier)]
    chisq_multiplier: Option<ChisqMultiplier>,
    #[arg(long)]
    use_scaled: Option<bool>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator config file (TOML). Without it, published parameters are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Response file to write.
    #[arg(long)]
    out: PathBuf,
    /// Groups as LABEL:N pairs, used only without --config.
    #[arg(long, value_delimiter = ',', default_value = "G1:1000")]
    groups: Vec<String>,
    /// Spammer share, used only without --config.
    #[arg(long, default_value_t = 0.0)]
    spam_fraction: f64,
    /// Scale file naming the item columns; the built-in scale otherwise.
    #[arg(long)]
    scale: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Master report produced by a previous run.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<DecisionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_multiplier(s: &str) -> Result<ChisqMultiplier, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn stage_config(args: &StageArgs, stages: StageSelection) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::load(&args.config).map_err(|e| match e {
        Error::Io { .. } | Error::Config(_) => e,
        e => Error::Config(e.to_string()),
    })?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(m) = args.decision_mode {
        cfg.model.decision_mode = m;
    }
    if let Some(m) = args.chisq_multiplier {
        cfg.model.chisq_multiplier = m;
    }
    if let Some(s) = args.use_scaled {
        cfg.model.use_scaled = s;
    }
    cfg.stages = stages;
    Ok(cfg)
}

fn run_stages(args: &StageArgs, stages: StageSelection) -> Result<(), Error> {
    let cfg = stage_config(args, stages)?;
    let (out, files) = run_pipeline(&cfg)?;
    for note in &out.report.notes {
        log::info!("{note}");
    }
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn parse_groups(specs: &[String]) -> Result<Vec<(String, usize)>, Error> {
    specs
        .iter()
        .map(|s| {
            let (label, n) = s
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("group {s:?} is not LABEL:N")))?;
            let n = n
                .parse()
                .map_err(|_| Error::Config(format!("group {s:?} has a bad size")))?;
            Ok((label.to_string(), n))
        })
        .collect()
}

fn simulate(args: &SimulateArgs) -> Result<(), Error> {
    let mut cfg = match &args.config {
        Some(p) => GeneratorConfig::load(p)?,
        None => {
            let groups = parse_groups(&args.groups)?;
            let refs: Vec<(&str, usize)> = groups.iter().map(|(l, n)| (l.as_str(), *n)).collect();
            let mut cfg = GeneratorConfig::mcms_published(&refs, 0);
            cfg.mode = GenerationMode::Likert;
            cfg.spam_fraction = args.spam_fraction;
            cfg
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.mode != GenerationMode::Likert {
        return Err(Error::Config(
            "response files need Likert-mode generation (mode = \"likert\")".into(),
        ));
    }
    let data = simulate_responses(&cfg)?;
    write_parent(&args.out)?;
    let def = match &args.scale {
        Some(p) => ScaleDefinition::load(p)?,
        None => builtin_mcms(),
    };
    data.write_responses(&args.out, &def)?;
    println!("{}", args.out.display());
    Ok(())
}

fn write_parent(path: &Path) -> Result<(), Error> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        }),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let only = |f: fn(&mut StageSelection)| {
        let mut s = StageSelection::ingest_only();
        f(&mut s);
        s
    };
    let result = match &cli.command {
        Command::Ingest(a) => run_stages(a, StageSelection::ingest_only()),
        Command::Describe(a) => run_stages(a, only(|s| s.descriptives = true)),
        Command::Efa(a) => run_stages(a, only(|s| s.efa = true)),
        Command::Cfa(a) => run_stages(a, only(|s| s.cfa = true)),
        Command::Invariance(a) => run_stages(a, only(|s| s.invariance = true)),
        Command::Pipeline(a) => run_stages(a, StageSelection::default()),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => render_from_file(&a.input, &a.out).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

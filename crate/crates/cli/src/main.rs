use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use drive_reasoner::agent::BackendKind;
use drive_reasoner::eval::{evaluate, EvalFile, MATCH_RADIUS};
use drive_reasoner::pipeline::{
    reasoning_cases, run_environment, run_filter, run_pipeline, run_vehicle, write_report, PipelineConfig,
    PipelineError,
};
use drive_reasoner::synth::{generate_trace, GroundTruth, ScenarioSpec};
use drive_reasoner::trace::{parse_trace, write_trace, SensorTrace};

const EXIT_VALIDATION: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_IO: u8 = 74;

#[derive(Parser)]
#[command(name = "drive-reasoner", version, about = "Reasoning over synchronized driving sensor traces")]
struct Cli {
    /// Pipeline configuration (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed for `synth`
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Deterministic,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a trace and its ground truth from a scenario spec
    Synth {
        spec: PathBuf,
        #[arg(short, long, default_value = ".")]
        output: PathBuf,
    },
    /// Print the critical events of a trace, one per line
    Filter { trace: PathBuf },
    /// Run one reasoning stage and print its JSON
    Reason {
        #[arg(value_enum)]
        stage: ReasonStage,
        trace: PathBuf,
    },
    /// Run every stage and write a report
    Pipeline {
        trace: PathBuf,
        /// Report directory; defaults to the configured output_dir
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Ground truth from `synth`; also writes predicted and gold case files
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Score predictions against gold labels
    Eval {
        predictions: PathBuf,
        gold: PathBuf,
        #[arg(long, default_value_t = MATCH_RADIUS)]
        radius: f64,
        /// Write the report here instead of stdout
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReasonStage {
    Vehicle,
    Env,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e.exit_code() {
            3 => EXIT_BACKEND,
            2 => EXIT_VALIDATION,
            _ => EXIT_IO,
        };
        Failure { code, error: e.into() }
    }
}

type Outcome = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(fail(EXIT_VALIDATION))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = read_text(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(fail(EXIT_VALIDATION))
}

fn load_trace(path: &Path) -> Result<SensorTrace, Failure> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display())).map_err(fail(EXIT_VALIDATION))?;
    parse_trace(BufReader::new(file))
        .with_context(|| format!("trace {}", path.display()))
        .map_err(fail(EXIT_VALIDATION))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_json(&read_text(p)?)?,
        None => PipelineConfig::default(),
    };
    match cli.backend {
        Some(BackendArg::Deterministic) => cfg.backend = BackendKind::Deterministic,
        Some(BackendArg::Remote) => cfg.backend = BackendKind::Remote,
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(EXIT_IO)(e.into()))?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())).map_err(fail(EXIT_IO))
}

fn print_json<T: serde::Serialize>(value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(EXIT_IO)(e.into()))?;
    println!("{text}");
    Ok(())
}

fn synth(cli: &Cli, spec_path: &Path, output: &Path) -> Outcome {
    let mut spec: ScenarioSpec = read_json(spec_path)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let (trace, truth) = generate_trace(&spec).map_err(|e| fail(EXIT_VALIDATION)(e.into()))?;
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display())).map_err(fail(EXIT_IO))?;
    let stem = spec_path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    let trace_path = output.join(format!("{stem}.jsonl"));
    let file = fs::File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display())).map_err(fail(EXIT_IO))?;
    let mut w = io::BufWriter::new(file);
    write_trace(&trace, &mut w).and_then(|_| w.flush()).context("writing trace").map_err(fail(EXIT_IO))?;
    let truth_path = output.join(format!("{stem}.truth.json"));
    write_json(&truth_path, &truth)?;
    println!("{}", trace_path.display());
    println!("{}", truth_path.display());
    Ok(())
}

fn filter(cli: &Cli, trace: &Path) -> Outcome {
    let cfg = load_config(cli)?;
    let trace = load_trace(trace)?;
    let (_, events) = run_filter(&trace, &cfg, &cfg.make_backend())?;
    for e in events {
        println!("t={:.4} factor={} exceedance={:.4}", e.t, e.factor, e.exceedance);
    }
    Ok(())
}

fn reason(cli: &Cli, stage: ReasonStage, trace: &Path) -> Outcome {
    let cfg = load_config(cli)?;
    let trace = load_trace(trace)?;
    let backend = cfg.make_backend();
    match stage {
        ReasonStage::Vehicle => print_json(&run_vehicle(&trace, &cfg, &backend)?),
        ReasonStage::Env => print_json(&run_environment(&trace, &cfg, &backend)?),
    }
}

fn pipeline(cli: &Cli, trace_path: &Path, output: Option<&Path>, truth: Option<&Path>) -> Outcome {
    let cfg = load_config(cli)?;
    let trace = load_trace(trace_path)?;
    let report = run_pipeline(&trace, &cfg, &cfg.make_backend())?;
    let dir = output.unwrap_or(&cfg.output_dir);
    let path = write_report(&report, dir).context("writing report").map_err(fail(EXIT_IO))?;
    println!("{}", path.display());
    if let Some(truth) = truth {
        let truth: GroundTruth = read_json(truth)?;
        let (pred, gold) = reasoning_cases(&report, &trace, &truth, &cfg.environment);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        for (kind, file) in [("pred", &pred), ("gold", &gold)] {
            let p = dir.join(format!("{stem}.{kind}.json"));
            write_json(&p, file)?;
            println!("{}", p.display());
        }
    }
    if report.metadata.fallback_count > 0 {
        log::warn!("{} agent call(s) fell back to rule evaluation", report.metadata.fallback_count);
    }
    Ok(())
}

fn eval(predictions: &Path, gold: &Path, radius: f64, output: Option<&Path>) -> Outcome {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(fail(EXIT_VALIDATION)(anyhow::anyhow!("radius must be positive")));
    }
    let p: EvalFile = read_json(predictions)?;
    let g: EvalFile = read_json(gold)?;
    let report = evaluate(&p, &g, radius).map_err(|e| fail(EXIT_VALIDATION)(e.into()))?;
    match output {
        Some(path) => write_json(path, &report),
        None => print_json(&report),
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Synth { spec, output } => synth(cli, spec, output),
        Command::Filter { trace } => filter(cli, trace),
        Command::Reason { stage, trace } => reason(cli, *stage, trace),
        Command::Pipeline { trace, output, truth } => pipeline(cli, trace, output.as_deref(), truth.as_deref()),
        Command::Eval { predictions, gold, radius, output } => eval(predictions, gold, *radius, output.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

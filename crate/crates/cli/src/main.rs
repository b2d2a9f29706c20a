mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "goalcast", version, about = "Radio-call conditioned goal prediction for pattern traffic")]
struct Cli {
    /// Run configuration (TOML). Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate synthetic pattern traffic: tracks, calls, labels and scenes.
    Simulate(SimulateArgs),
    /// Label radio calls with speaker and intent.
    Parse(ParseArgs),
    /// Word error rate between a reference and a hypothesis transcript file.
    Wer(WerArgs),
    /// Train a goal model on a scene cache.
    Train(TrainArgs),
    /// Best-of-N final displacement error of a checkpoint.
    Eval(EvalArgs),
    /// Feature ablation of the intent input.
    Ablate(AblateArgs),
    /// FDE as a function of a horizon or of call age.
    Sweep(SweepArgs),
    /// Render the speaker-identification context at a given time.
    Context(ContextArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Simulation and split seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub flights: Option<usize>,
    /// Branch-point benchmark instead of the general traffic mix.
    #[arg(long)]
    pub benchmark: bool,
    /// Benchmark only: fraction of flights that never call.
    #[arg(long)]
    pub silent_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    /// Radio calls, one JSON object per line.
    #[arg(long)]
    pub calls: PathBuf,
    /// Aircraft directory, `tail,alias|alias` per line.
    #[arg(long)]
    pub directory: PathBuf,
    #[arg(long)]
    pub tracks: PathBuf,
    /// Airport description (TOML); defaults to the configured airport.
    #[arg(long)]
    pub airport: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct WerArgs {
    pub reference: PathBuf,
    pub hypothesis: PathBuf,
    /// Score without transcript normalization.
    #[arg(long)]
    pub raw: bool,
    /// Also write the result and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Data directory from `simulate`, or a scene cache file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Initialization and shuffling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train the trajectory-only variant.
    #[arg(long)]
    pub no_intent: bool,
    #[arg(long)]
    pub airport: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
    All,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sample,
    TopMeans,
}

#[derive(Args, Debug, Clone)]
pub struct EvalOpts {
    /// Candidates per scene.
    #[arg(long)]
    pub n: Option<usize>,
    /// Candidate sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Horizontal displacement only.
    #[arg(long)]
    pub horizontal: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitPart,
    #[command(flatten)]
    pub opts: EvalOpts,
    /// Also write every candidate to report.json.
    #[arg(long)]
    pub keep_samples: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Pfi,
    Lofo,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(value_enum)]
    pub method: Method,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to permute against (pfi).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Permutation repetitions (pfi).
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Training epochs for both twins (lofo).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training seed for both twins (lofo).
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitPart,
    #[command(flatten)]
    pub opts: EvalOpts,
    #[arg(long)]
    pub airport: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Svg,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// obs_horizon, pred_horizon or call_age_bucket.
    #[arg(long)]
    pub variable: String,
    /// Comma-separated horizon values or bucket edges, in seconds.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub values: Vec<f64>,
    /// Data directory from `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to bucket (call_age_bucket).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Horizon sweeps: also train the trajectory-only twin.
    #[arg(long)]
    pub twin: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[command(flatten)]
    pub opts: EvalOpts,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ContextArgs {
    #[arg(long)]
    pub directory: PathBuf,
    #[arg(long)]
    pub tracks: PathBuf,
    /// Seconds, in the track file's time base.
    #[arg(long)]
    pub time: f64,
    /// Also print the static domain context.
    #[arg(long = "static")]
    pub with_static: bool,
    #[arg(long)]
    pub airport: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let config = cli.config.as_deref();
    let result = match &cli.cmd {
        Cmd::Simulate(a) => commands::simulate(config, a),
        Cmd::Parse(a) => commands::parse(config, a),
        Cmd::Wer(a) => commands::wer(a),
        Cmd::Train(a) => commands::train(config, a),
        Cmd::Eval(a) => commands::eval(config, a),
        Cmd::Ablate(a) => commands::ablate(config, a),
        Cmd::Sweep(a) => commands::sweep(config, a),
        Cmd::Context(a) => commands::context(config, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.kind.code() as u8)
        }
    }
}

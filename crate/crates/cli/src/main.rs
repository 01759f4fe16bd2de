//! `hecnn`: run packed CNN inference on the slot simulator, inspect key
//! plans, masks and the polynomial ReLU.

mod commands;
mod load;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hecnn::layers::StrideVariant;
use hecnn::model::{KeyMode, WeightMode};

#[derive(Parser)]
#[command(name = "hecnn", version, about = "Packed CNN inference over a leveled slot simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run encrypted-simulated and plaintext inference on every input row.
    Infer(InferArgs),
    /// Report the rotation keys a model needs, per layer and per block.
    Keyplan(KeyplanArgs),
    /// Dump special-convolution masks (or one mask) as CSV rows of 0/1.
    Masks(MasksArgs),
    /// Error profile of the polynomial ReLU for a sweep of degrees.
    ReluProfile(ReluProfileArgs),
    /// List built-in contexts and models, or write one out.
    Presets(PresetsArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model spec JSON, or a built-in model name (lenet5, resnet20).
    model: String,
    /// Context preset name or context JSON file; overrides the spec.
    #[arg(long)]
    context: Option<String>,
    #[arg(long, value_enum)]
    stride_variant: Option<VariantArg>,
    /// Seed for built-in models' synthetic weights and the noise model.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// CSV with one flattened C x W x W input per row.
    input: PathBuf,
    /// Defaults to block for models with residual blocks, otherwise the spec's mode.
    #[arg(long, value_enum)]
    keys: Option<KeysArg>,
    #[arg(long, value_enum)]
    weights: Option<WeightsArg>,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Inputs evaluated concurrently; output order is unaffected.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct KeyplanArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Assumed size of one rotation key in bytes.
    #[arg(long, default_value_t = hecnn::keyplan::DEFAULT_BYTES_PER_KEY)]
    bytes_per_key: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MasksArgs {
    #[arg(long, value_enum, default_value_t = MaskMode::Special)]
    mode: MaskMode,
    /// Channel width W (special mode).
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Single mode: start position.
    #[arg(long)]
    sp: Option<usize>,
    /// Single mode: end position.
    #[arg(long)]
    ep: Option<usize>,
    /// Single mode: row width w.
    #[arg(long)]
    w: Option<usize>,
    /// Single mode: block size m; defaults to w^2.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReluProfileArgs {
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Comma-separated degrees.
    #[arg(long, value_delimiter = ',', default_value = "3,7,15,31,59,119")]
    degrees: Vec<usize>,
    /// Grid points, evenly spaced over [lo, hi].
    #[arg(long, default_value_t = 100_001)]
    points: usize,
    /// Grid start; defaults to -beta.
    #[arg(long, allow_hyphen_values = true)]
    lo: Option<f64>,
    /// Grid end; defaults to beta.
    #[arg(long, allow_hyphen_values = true)]
    hi: Option<f64>,
    /// Half-width, relative to beta, of the band around zero left out of `max_outside`.
    #[arg(long, default_value_t = 0.05)]
    exclude: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PresetsArgs {
    /// Print the full spec of this built-in model.
    #[arg(long)]
    spec: Option<String>,
    /// With --spec: write model.json and seeded synthetic weight CSVs into this directory.
    #[arg(long, requires = "spec")]
    write: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum KeysArg {
    Preload,
    Block,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightsArg {
    Preload,
    Lazy,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Extract,
    Masked,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MaskMode {
    /// The nine masks of the special 3x3 convolution.
    Special,
    /// One mask from explicit parameters.
    Single,
}

impl From<KeysArg> for KeyMode {
    fn from(k: KeysArg) -> Self {
        match k {
            KeysArg::Preload => KeyMode::Preload,
            KeysArg::Block => KeyMode::Block,
        }
    }
}

impl From<WeightsArg> for WeightMode {
    fn from(w: WeightsArg) -> Self {
        match w {
            WeightsArg::Preload => WeightMode::Preload,
            WeightsArg::Lazy => WeightMode::Lazy,
        }
    }
}

impl From<VariantArg> for StrideVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Extract => StrideVariant::Extract,
            VariantArg::Masked => StrideVariant::Masked,
        }
    }
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Infer(a) => commands::infer(a),
        Command::Keyplan(a) => commands::keyplan(a),
        Command::Masks(a) => commands::masks(a),
        Command::ReluProfile(a) => commands::relu_profile(a),
        Command::Presets(a) => commands::presets(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<commands::UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<hecnn::Error>().map(hecnn::Error::root) {
        Some(hecnn::Error::Invariant(_)) => EXIT_INVARIANT,
        _ => EXIT_DATA,
    }
}

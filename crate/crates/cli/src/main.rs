mod commands;
mod probe;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

/// Adaptive-margin cosine losses against modality bias on colored digits.
#[derive(Debug, Parser)]
#[command(name = "modbias", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Color MNIST into an in-domain or OoD train/test pair.
    GenData(GenDataArgs),
    /// Count (bias factor, label) pairs and derive the adaptive margin table.
    EstimateMargins(EstimateArgs),
    /// Train one configuration over several seeds.
    Train(TrainArgs),
    /// Baseline, NSL, fixed margins and adaptive margins on one model.
    SweepMargin(SweepMarginArgs),
    /// Accuracy against the logit scale.
    SweepScale(SweepScaleArgs),
    /// JSD bias report, probability sharpness and feature embeddings of a run.
    Diagnose(DiagnoseArgs),
    /// Evaluate a loss kernel on values read from a CSV file.
    LossProbe(ProbeArgs),
    /// Assemble run and sweep reports into markdown tables.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Iid,
    Ood,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DerangementArg {
    Random,
    Cyclic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Mlp,
    Lenet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Softmax,
    Nsl,
    Lmcl,
    Mmdb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adam,
    SgdMomentum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DistributionArg {
    MeanScores,
    ArgmaxHistogram,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ProjectionArg {
    Linear2d,
    CosineAngle,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Directory with the four MNIST IDX files.
    #[arg(long, env = "MODBIAS_DATA", default_value_os_t = modbias::default_mnist_dir())]
    mnist: PathBuf,
    #[arg(long, value_enum, default_value_t = RegimeArg::Ood)]
    regime: RegimeArg,
    /// Probability that a digit takes its assigned color.
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = DerangementArg::Random)]
    derangement: DerangementArg,
    #[arg(long, default_value = "colored-mnist")]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["data", "counts"]))]
struct EstimateArgs {
    /// Colored dataset directory; counts come from its training split.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Count file with `bias_factor,label,count` rows.
    #[arg(long)]
    counts: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value = "margins")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExecArgs {
    /// Worker threads for independent runs; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Run without the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct CommonTrainArgs {
    /// Colored dataset directory with `train/` and `test/`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Mlp)]
    model: ModelArg,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    /// Train on the first N training samples only.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Run name; derived from the model and loss when absent.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    #[arg(long, value_enum, default_value_t = LossArg::Softmax)]
    loss: LossArg,
    /// Scale on cosine logits.
    #[arg(long, default_value_t = 16.0)]
    scale: f64,
    /// Fixed margin for lmcl.
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    /// Margin table CSV; required for mmdb.
    #[arg(long)]
    margins: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepMarginArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    #[arg(long, default_value_t = 16.0)]
    scale: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
    fixed: Vec<f64>,
    /// Margin table CSV for the adaptive cell.
    #[arg(long)]
    margins: PathBuf,
}

#[derive(Debug, Args)]
struct SweepScaleArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mmdb")]
    methods: Vec<LossArg>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128")]
    scales: Vec<f64>,
    /// Fixed margin for lmcl cells.
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    /// Margin table CSV; required when mmdb is swept.
    #[arg(long)]
    margins: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    /// Run directory holding `config.json` and `checkpoint.bin`.
    #[arg(long)]
    run: PathBuf,
    /// Colored dataset directory; defaults to the one the run was trained on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Margin table for mmdb runs; defaults to the run's table.
    #[arg(long)]
    margins: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DistributionArg::MeanScores)]
    distribution: DistributionArg,
    #[arg(long, value_enum, default_value_t = ProjectionArg::Linear2d)]
    projection: ProjectionArg,
    /// Class pair for the cosine-angle projection.
    #[arg(long, value_delimiter = ',', num_args = 2, default_value = "0,1")]
    classes: Vec<usize>,
    /// Embed only test samples with this bias factor.
    #[arg(long)]
    factor: Option<u8>,
    /// Scale for the sharpness comparison; defaults to the run's scale.
    #[arg(long)]
    scale: Option<f64>,
    /// Also write SVG figures.
    #[arg(long)]
    svg: bool,
    /// Output directory; defaults to `<run>/diagnostics`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    /// CSV with `w,...` rows (one per class), an `x,...` row, a `y,...` row
    /// and, for mmdb, an `m,...` row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = LossArg::Mmdb)]
    loss: LossArg,
    #[arg(long, default_value_t = 16.0)]
    scale: f64,
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    #[arg(long, default_value_t = modbias::loss::DEFAULT_NORM_EPSILON)]
    norm_epsilon: f64,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory searched recursively for run and sweep reports.
    #[arg(long)]
    runs: PathBuf,
    /// Also write `report.md` and `report.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn usage_error(subcommand: &str, message: &str) -> ! {
    let mut cmd = Cli::command();
    let sub = cmd.find_subcommand_mut(subcommand).expect("known subcommand");
    sub.error(ErrorKind::MissingRequiredArgument, message).exit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Train(args) = &cli.command {
        if args.loss == LossArg::Mmdb && args.margins.is_none() {
            usage_error("train", "the argument '--margins <MARGINS>' is required when '--loss mmdb' is used");
        }
    }
    if let Command::SweepScale(args) = &cli.command {
        if args.methods.contains(&LossArg::Softmax) {
            usage_error("sweep-scale", "'--methods' accepts cosine losses only (nsl, lmcl, mmdb)");
        }
        if args.methods.contains(&LossArg::Mmdb) && args.margins.is_none() {
            usage_error("sweep-scale", "the argument '--margins <MARGINS>' is required when mmdb is swept");
        }
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {message}", e.kind());
            ExitCode::from(1)
        }
    }
}

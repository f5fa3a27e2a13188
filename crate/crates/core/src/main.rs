//! `eenas` — train weight-sharing supernets jointly with an architecture
//! distribution, then search them for the best architecture under a cost
//! budget without retraining.
//!
//! Exit codes: 0 success, 2 config error, 3 infeasible constraint,
//! 4 corrupt checkpoint, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eenas::cli::{
    self, ArchChoice, CostCmd, DimFlags, EnumerateCmd, EvalCmd, SearchCmd,
};
use eenas::cost::CostMetric;
use eenas::search::PenaltyForm;

#[derive(Parser)]
#[command(
    name = "eenas",
    version,
    about = "Exploit-explore one-shot architecture search: supernet training \
             and constraint-aware, fine-tuning-free search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Stage-I training from a config file, then its [search] jobs.
    Train {
        /// Experiment config file.
        config: PathBuf,
    },
    /// Search a trained checkpoint for the best architecture under a budget.
    Search(SearchArgs),
    /// Compare searchers and gate modes over seeded repetitions.
    Benchmark {
        /// Experiment config file with a tabular backend and a [search] job.
        config: PathBuf,
    },
    /// List every architecture in a space preset with its costs (CSV).
    Enumerate(EnumerateArgs),
    /// Itemized cost accounting for one architecture (JSON).
    Cost(CostArgs),
    /// Inherited-weight accuracy of one architecture from a checkpoint (JSON).
    Eval(EvalArgs),
}

fn parse_metric(s: &str) -> Result<CostMetric, String> {
    CostMetric::parse(s).ok_or_else(|| "expected `params` or `flops`".into())
}

fn parse_penalty(s: &str) -> Result<PenaltyForm, String> {
    PenaltyForm::parse(s).ok_or_else(|| "expected `as_written` or `violation_proportional`".into())
}

/// Model geometry used to price architectures when the backend has none of
/// its own (tabular checkpoints and the preset-based oracles). Neural
/// checkpoints carry their geometry and ignore these.
#[derive(Args)]
struct DimArgs {
    /// Vocabulary size the cost model assumes.
    #[arg(long, default_value_t = 16)]
    vocab_size: usize,
    /// Embedding width; must be divisible by the largest head count.
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    /// Sequence length FLOPs are counted at.
    #[arg(long, default_value_t = 16)]
    seq_len: usize,
}

impl DimArgs {
    fn flags(&self) -> DimFlags {
        DimFlags {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            seq_len: self.seq_len,
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    /// Trained checkpoint to search; its weights stay frozen.
    checkpoint: PathBuf,
    /// Cost budget; candidates strictly under it are feasible.
    #[arg(long)]
    omega: u64,
    /// Cost metric the budget is expressed in.
    #[arg(long, default_value = "params", value_parser = parse_metric)]
    metric: CostMetric,
    /// Distribution-update steps.
    #[arg(long, default_value_t = 150)]
    steps: usize,
    /// Architectures sampled per step.
    #[arg(long, default_value_t = 16)]
    samples_per_step: usize,
    /// Natural-gradient step size.
    #[arg(long, default_value_t = 0.15)]
    theta_lr: f64,
    /// Penalty applied to over-budget candidates.
    #[arg(long, default_value = "as_written", value_parser = parse_penalty)]
    penalty: PenaltyForm,
    /// Penalty exponent.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Search RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Validation-set seed (neural checkpoints).
    #[arg(long, default_value_t = 0)]
    val_seed: u64,
    /// Validation batches accuracy is averaged over.
    #[arg(long, default_value_t = cli::DEFAULT_VAL_BATCHES)]
    val_batches: usize,
    #[command(flatten)]
    dims: DimArgs,
    /// Directory for result.json, trace.csv, top10.csv, theta.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Space preset to enumerate.
    #[arg(default_value = "desk")]
    preset: String,
    #[command(flatten)]
    dims: DimArgs,
    /// Refuse to enumerate spaces larger than this.
    #[arg(long, default_value_t = 1_000_000)]
    limit: u128,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Names the architecture to act on; exactly one must be given.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct CostArchArgs {
    /// Architecture description, e.g. `d2:h4.2:k64.32`.
    #[arg(long)]
    arch: Option<String>,
    /// The maximal (super-network) architecture.
    #[arg(long)]
    max: bool,
    /// The minimal architecture.
    #[arg(long)]
    min: bool,
}

#[derive(Args)]
struct CostArgs {
    /// Space preset the architecture lives in.
    #[arg(default_value = "desk")]
    preset: String,
    #[command(flatten)]
    arch: CostArchArgs,
    #[command(flatten)]
    dims: DimArgs,
}

/// Names the architecture to evaluate; exactly one must be given.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct EvalArchArgs {
    /// Architecture description, e.g. `d2:h4.2:k64.32`.
    #[arg(long)]
    arch: Option<String>,
    /// The maximal (super-network) architecture.
    #[arg(long)]
    max: bool,
    /// The minimal architecture.
    #[arg(long)]
    min: bool,
    /// The most likely architecture under the checkpoint's distribution.
    #[arg(long)]
    argmax: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate against; only read, never written.
    checkpoint: PathBuf,
    #[command(flatten)]
    arch: EvalArchArgs,
    /// Validation-set seed.
    #[arg(long, default_value_t = 0)]
    val_seed: u64,
    /// Validation batches accuracy is averaged over.
    #[arg(long, default_value_t = cli::DEFAULT_VAL_BATCHES)]
    val_batches: usize,
    #[command(flatten)]
    dims: DimArgs,
}

fn run(cli: Cli) -> eenas::Result<()> {
    match cli.command {
        Command::Train { config } => cli::cmd_train(&config),
        Command::Search(a) => cli::cmd_search(&SearchCmd {
            checkpoint: a.checkpoint,
            omega: a.omega,
            metric: a.metric,
            steps: a.steps,
            samples_per_step: a.samples_per_step,
            theta_lr: a.theta_lr,
            penalty: a.penalty,
            alpha: a.alpha,
            seed: a.seed,
            val_seed: a.val_seed,
            val_batches: a.val_batches,
            dims: a.dims.flags(),
            out: a.out,
        }),
        Command::Benchmark { config } => cli::cmd_benchmark(&config),
        Command::Enumerate(a) => cli::cmd_enumerate(&EnumerateCmd {
            preset: a.preset,
            dims: a.dims.flags(),
            limit: a.limit,
            out: a.out,
        }),
        Command::Cost(a) => {
            let arch = match (&a.arch.arch, a.arch.max) {
                (Some(desc), _) => ArchChoice::Desc(desc.clone()),
                (None, true) => ArchChoice::Max,
                (None, false) => ArchChoice::Min,
            };
            cli::cmd_cost(&CostCmd { preset: a.preset, arch, dims: a.dims.flags() })
        }
        Command::Eval(a) => {
            let arch = match (&a.arch.arch, a.arch.max, a.arch.min) {
                (Some(desc), _, _) => ArchChoice::Desc(desc.clone()),
                (None, true, _) => ArchChoice::Max,
                (None, false, true) => ArchChoice::Min,
                (None, false, false) => ArchChoice::Argmax,
            };
            cli::cmd_eval(&EvalCmd {
                checkpoint: a.checkpoint,
                arch,
                val_seed: a.val_seed,
                val_batches: a.val_batches,
                dims: a.dims.flags(),
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use streamkp::nn::OptimizerKind;

/// Keyphrase extraction for live-stream transcripts.
#[derive(Debug, Parser)]
#[command(name = "streamkp", version)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the resolved config as JSON and exit.
    #[arg(long, global = true)]
    show_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the keyphrase model and write a checkpoint plus a metrics log.
    Train {
        #[arg(long)]
        transcripts: Option<PathBuf>,
        /// General-domain documents; enables augmentation and the bridge loss.
        #[arg(long)]
        general: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Metrics JSONL; defaults to the checkpoint path with `.metrics.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Also save the discriminator trained for silver labels.
        #[arg(long)]
        discriminator: Option<PathBuf>,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        disc: DiscArgs,
    },
    /// Predict keyphrases paragraph by paragraph.
    Extract {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a checkpoint with F1@k and the repetition and chitchat rates.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        transcripts: Option<PathBuf>,
        /// Also write the JSON report here.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Cutoffs, e.g. `1,3,5`.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Write word-level silver labels from a trained discriminator.
    SilverAnnotate {
        #[arg(long)]
        discriminator: Option<PathBuf>,
        /// Transcript or general-domain JSONL.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, allow_negative_numbers = true)]
        eta: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score every sentence and flag chitchat.
    ChitchatScan {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train the domain discriminator on transcripts and general documents.
    TrainDiscriminator {
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        general: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[command(flatten)]
        disc: DiscArgs,
    },
    /// Generate a synthetic two-domain corpus into a directory.
    Synth {
        #[arg(long)]
        output: Option<PathBuf>,
        /// Number of transcript paragraphs.
        #[arg(long)]
        size: Option<usize>,
        /// Number of general-domain paragraphs.
        #[arg(long)]
        general_size: Option<usize>,
        #[arg(long)]
        paragraphs_per_transcript: Option<usize>,
        #[arg(long)]
        chitchat_rate: Option<f64>,
        #[arg(long)]
        overlap_rate: Option<f64>,
        #[arg(long)]
        multi_keyphrase_rate: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct EncoderArgs {
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    num_heads: Option<usize>,
    #[arg(long)]
    vocab_hash_buckets: Option<usize>,
    #[arg(long)]
    max_sequence_length: Option<usize>,
    #[arg(long)]
    max_piece_chars: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    alpha_weight: Option<f64>,
    #[arg(long)]
    lambda_bridge: Option<f64>,
    #[arg(long)]
    lambda_rl: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
}

#[derive(Debug, Args)]
struct DiscArgs {
    #[arg(long)]
    disc_epochs: Option<usize>,
    #[arg(long)]
    disc_learning_rate: Option<f64>,
    #[arg(long)]
    disc_batch_size: Option<usize>,
    #[arg(long)]
    holdout_fraction: Option<f64>,
    #[arg(long)]
    disc_optimizer: Option<OptimizerKind>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

impl EncoderArgs {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.hidden_dim, self.hidden_dim);
        set(&mut c.num_layers, self.num_layers);
        set(&mut c.num_heads, self.num_heads);
        set(&mut c.vocab_hash_buckets, self.vocab_hash_buckets);
        set(&mut c.max_sequence_length, self.max_sequence_length);
        set(&mut c.max_piece_chars, self.max_piece_chars);
    }
}

impl TrainArgs {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.alpha_weight, self.alpha_weight);
        set(&mut c.lambda_bridge, self.lambda_bridge);
        set(&mut c.lambda_rl, self.lambda_rl);
        set(&mut c.eta, self.eta);
        set(&mut c.beta, self.beta);
        set(&mut c.learning_rate, self.learning_rate);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.epochs, self.epochs);
        set(&mut c.optimizer, self.optimizer);
    }
}

impl DiscArgs {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.disc_epochs, self.disc_epochs);
        set(&mut c.disc_learning_rate, self.disc_learning_rate);
        set(&mut c.disc_batch_size, self.disc_batch_size);
        set(&mut c.holdout_fraction, self.holdout_fraction);
        set(&mut c.disc_optimizer, self.disc_optimizer);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Train,
    Extract,
    Eval,
    SilverAnnotate,
    ChitchatScan,
    TrainDiscriminator,
    Synth,
}

/// Folds the command's flags into `c` and reports which task to run.
fn resolve(command: Command, c: &mut RunConfig) -> Task {
    match command {
        Command::Train {
            transcripts,
            general,
            checkpoint,
            log,
            discriminator,
            encoder,
            train,
            disc,
        } => {
            set_path(&mut c.transcripts, transcripts);
            set_path(&mut c.general, general);
            set_path(&mut c.checkpoint, checkpoint);
            set_path(&mut c.log, log);
            set_path(&mut c.discriminator, discriminator);
            encoder.apply(c);
            train.apply(c);
            disc.apply(c);
            Task::Train
        }
        Command::Extract {
            checkpoint,
            transcripts,
            output,
        } => {
            set_path(&mut c.checkpoint, checkpoint);
            set_path(&mut c.transcripts, transcripts);
            set_path(&mut c.output, output);
            Task::Extract
        }
        Command::Eval {
            checkpoint,
            transcripts,
            output,
            k,
            beta,
        } => {
            set_path(&mut c.checkpoint, checkpoint);
            set_path(&mut c.transcripts, transcripts);
            set_path(&mut c.output, output);
            set(&mut c.k, k);
            set(&mut c.beta, beta);
            Task::Eval
        }
        Command::SilverAnnotate {
            discriminator,
            corpus,
            eta,
            output,
        } => {
            set_path(&mut c.discriminator, discriminator);
            set_path(&mut c.corpus, corpus);
            set(&mut c.eta, eta);
            set_path(&mut c.output, output);
            Task::SilverAnnotate
        }
        Command::ChitchatScan {
            checkpoint,
            transcripts,
            beta,
            output,
        } => {
            set_path(&mut c.checkpoint, checkpoint);
            set_path(&mut c.transcripts, transcripts);
            set(&mut c.beta, beta);
            set_path(&mut c.output, output);
            Task::ChitchatScan
        }
        Command::TrainDiscriminator {
            transcripts,
            general,
            output,
            encoder,
            disc,
        } => {
            set_path(&mut c.transcripts, transcripts);
            set_path(&mut c.general, general);
            set_path(&mut c.output, output);
            encoder.apply(c);
            disc.apply(c);
            Task::TrainDiscriminator
        }
        Command::Synth {
            output,
            size,
            general_size,
            paragraphs_per_transcript,
            chitchat_rate,
            overlap_rate,
            multi_keyphrase_rate,
        } => {
            set_path(&mut c.output, output);
            set(&mut c.size, size);
            set(&mut c.general_size, general_size);
            set(&mut c.paragraphs_per_transcript, paragraphs_per_transcript);
            set(&mut c.chitchat_rate, chitchat_rate);
            set(&mut c.overlap_rate, overlap_rate);
            set(&mut c.multi_keyphrase_rate, multi_keyphrase_rate);
            Task::Synth
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut config.seed, cli.seed);
    let task = resolve(cli.command, &mut config);
    if cli.show_config {
        return commands::print_json(&config);
    }
    commands::run(task, &config)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Flat run configuration shared by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use streamkp::augmentation::DiscriminatorConfig;
use streamkp::encoder::EncoderConfig;
use streamkp::nn::OptimizerKind;
use streamkp::reinforcement::TrainConfig;
use streamkp::synth::SynthConfig;

/// Every tunable of every subcommand. One `seed` drives all randomness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,

    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub vocab_hash_buckets: usize,
    pub max_sequence_length: usize,
    pub max_piece_chars: usize,

    pub alpha_weight: f64,
    pub lambda_bridge: f64,
    pub lambda_rl: f64,
    pub eta: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,

    pub disc_epochs: usize,
    pub disc_learning_rate: f64,
    pub disc_batch_size: usize,
    pub holdout_fraction: f64,
    pub disc_optimizer: OptimizerKind,

    pub size: usize,
    pub general_size: usize,
    pub paragraphs_per_transcript: usize,
    pub chitchat_rate: f64,
    pub overlap_rate: f64,
    pub multi_keyphrase_rate: f64,

    pub k: Vec<usize>,

    pub transcripts: Option<PathBuf>,
    pub general: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub discriminator: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let train = TrainConfig::default();
        let disc = DiscriminatorConfig::default();
        let synth = SynthConfig::default();
        RunConfig {
            seed: 17,
            hidden_dim: enc.hidden_dim,
            num_layers: enc.num_layers,
            num_heads: enc.num_heads,
            vocab_hash_buckets: enc.vocab_hash_buckets,
            max_sequence_length: enc.max_sequence_length,
            max_piece_chars: enc.max_piece_chars,
            alpha_weight: train.alpha_weight,
            lambda_bridge: train.lambda_bridge,
            lambda_rl: train.lambda_rl,
            eta: train.eta,
            beta: train.beta,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            optimizer: train.optimizer,
            disc_epochs: disc.epochs,
            disc_learning_rate: disc.learning_rate,
            disc_batch_size: disc.batch_size,
            holdout_fraction: disc.holdout_fraction,
            disc_optimizer: disc.optimizer,
            size: synth.size,
            general_size: synth.general_size,
            paragraphs_per_transcript: synth.paragraphs_per_transcript,
            chitchat_rate: synth.chitchat_rate,
            overlap_rate: synth.overlap_rate,
            multi_keyphrase_rate: synth.multi_keyphrase_rate,
            k: vec![1, 3, 5],
            transcripts: None,
            general: None,
            corpus: None,
            checkpoint: None,
            discriminator: None,
            output: None,
            log: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            vocab_hash_buckets: self.vocab_hash_buckets,
            max_sequence_length: self.max_sequence_length,
            max_piece_chars: self.max_piece_chars,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            alpha_weight: self.alpha_weight,
            lambda_bridge: self.lambda_bridge,
            lambda_rl: self.lambda_rl,
            eta: self.eta,
            beta: self.beta,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            optimizer: self.optimizer,
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            encoder: self.encoder(),
            epochs: self.disc_epochs,
            learning_rate: self.disc_learning_rate,
            batch_size: self.disc_batch_size,
            holdout_fraction: self.holdout_fraction,
            optimizer: self.disc_optimizer,
            seed: self.seed,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            size: self.size,
            general_size: self.general_size,
            paragraphs_per_transcript: self.paragraphs_per_transcript,
            chitchat_rate: self.chitchat_rate,
            overlap_rate: self.overlap_rate,
            multi_keyphrase_rate: self.multi_keyphrase_rate,
            seed: self.seed,
        }
    }
}

/// Returns the configured path or a message naming the missing flag.
pub fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match path {
        Some(p) => Ok(p),
        None => bail!("missing required path: pass --{flag} or set \"{}\" in the config file", flag.replace('-', "_")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let c = RunConfig {
            transcripts: Some("a.jsonl".into()),
            beta: 0.123456789012345,
            ..RunConfig::default()
        };
        let back: RunConfig = serde_json::from_str(&serde_json::to_string_pretty(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.epochs, RunConfig::default().epochs);
    }

    #[test]
    fn defaults_match_the_library() {
        let c = RunConfig::default();
        let t = c.train();
        assert_eq!(TrainConfig { seed: t.seed, ..TrainConfig::default() }, t);
        assert_eq!(EncoderConfig::default(), c.encoder());
        let d = c.discriminator();
        assert_eq!(DiscriminatorConfig { seed: d.seed, encoder: d.encoder.clone(), ..DiscriminatorConfig::default() }, d);
    }
}

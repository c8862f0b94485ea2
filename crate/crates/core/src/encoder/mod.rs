//! Contextual encoding of conditioned paragraphs.
//!
//! An encoder maps an [`InputSequence`] to an [`EncodedSequence`]: one vector
//! per paragraph word (word-piece vectors averaged), the `[CLS]` paragraph
//! vector, and per-word attention from the `[CLS]` query of the final layer.
//! [`ToyEncoder`] is the trainable transformer backend; anything else that can
//! produce the same triple plugs in through [`ParagraphEncoder`].

mod sequence;
mod toy;

pub use sequence::{build_sequence, segment_word, InputSequence, Piece, Role, SeqToken, Truncation, CLS, SEP};
pub use toy::{EncoderParams, EncoderVars, LayerParams, ToyEncoder};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub vocab_hash_buckets: usize,
    pub max_sequence_length: usize,
    /// Words longer than this are split into several pieces.
    pub max_piece_chars: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_dim: 32,
            num_layers: 1,
            num_heads: 2,
            vocab_hash_buckets: 2048,
            max_sequence_length: 160,
            max_piece_chars: 8,
            seed: 17,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("max_sequence_length", self.max_sequence_length),
            ("max_piece_chars", self.max_piece_chars),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.vocab_hash_buckets < 3 {
            return Err(Error::InvalidArgument(
                "vocab_hash_buckets must leave room for the two marker buckets".into(),
            ));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn build_sequence(&self, words: &[&str], prev_keyphrases: &[String]) -> Result<InputSequence> {
        build_sequence(words, prev_keyphrases, self.max_sequence_length, self.max_piece_chars)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSequence {
    /// One row per kept paragraph word.
    pub word_vectors: Tensor,
    pub paragraph_vector: Vec<f64>,
    pub cls_attention: Vec<f64>,
    /// Rows for appended keyphrase pieces; excluded from `word_vectors`.
    pub appended_kp_vectors: Tensor,
}

impl EncodedSequence {
    pub fn num_words(&self) -> usize {
        self.word_vectors.rows()
    }
}

pub trait ParagraphEncoder {
    fn hidden_dim(&self) -> usize;

    fn config(&self) -> &EncoderConfig;

    fn encode(&self, sequence: &InputSequence) -> Result<EncodedSequence>;
}

/// Per-word attention from per-head `[CLS]`-query rows over piece positions:
/// mean over a word's pieces, then mean over heads.
pub fn aggregate_cls_attention(head_rows: &[Vec<f64>], word_pieces: &[Vec<usize>]) -> Vec<f64> {
    let mut out = vec![0.0; word_pieces.len()];
    if head_rows.is_empty() {
        return out;
    }
    for row in head_rows {
        for (o, pieces) in out.iter_mut().zip(word_pieces) {
            let mean = pieces.iter().map(|&p| row[p]).sum::<f64>() / pieces.len() as f64;
            *o += mean;
        }
    }
    let heads = head_rows.len() as f64;
    out.iter_mut().for_each(|v| *v /= heads);
    out
}

/// The attention vector `A` of an encoded sequence.
pub fn attention_scores(encoded: &EncodedSequence) -> &[f64] {
    &encoded.cls_attention
}

//! Unsupervised chitchat detection and the chitchat-avoidance reward.
//!
//! A sentence is pooled from its word vectors and compared with the
//! paragraph vector; both go through a softmax and the score is the sum of
//! their elementwise product. Sentences scoring at or below `beta` are
//! flagged.

use serde::{Deserialize, Serialize};

use crate::corpus::{Paragraph, Span};
use crate::encoder::EncodedSequence;
use crate::error::{Error, Result};
use crate::extractor::RankedKeyphrases;
use crate::tensor::softmax;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChitchatFlags {
    pub alpha: Vec<f64>,
    pub flags: Vec<u8>,
    pub beta: f64,
}

impl ChitchatFlags {
    pub fn is_flagged(&self, sentence: usize) -> bool {
        self.flags.get(sentence).is_some_and(|&f| f == 1)
    }
}

/// Element-wise max over the word rows in `bounds`.
pub fn sentence_representation(encoded: &EncodedSequence, bounds: Span) -> Result<Vec<f64>> {
    if bounds.is_empty() {
        return Err(Error::Empty("sentence has no words"));
    }
    let h = &encoded.word_vectors;
    if bounds.end > h.rows() {
        return Err(Error::Shape(format!(
            "sentence [{}, {}) outside {} encoded words",
            bounds.start,
            bounds.end,
            h.rows()
        )));
    }
    let mut out = h.row(bounds.start).to_vec();
    for r in bounds.start + 1..bounds.end {
        for (o, &v) in out.iter_mut().zip(h.row(r)) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(out)
}

/// `Σ_j softmax(h_p)_j · softmax(h_s)_j`
pub fn chitchat_score(paragraph_vector: &[f64], sentence_vector: &[f64]) -> Result<f64> {
    if paragraph_vector.len() != sentence_vector.len() {
        return Err(Error::Shape(format!(
            "paragraph vector has {} dims, sentence vector {}",
            paragraph_vector.len(),
            sentence_vector.len()
        )));
    }
    let p = softmax(paragraph_vector);
    let s = softmax(sentence_vector);
    Ok(p.iter().zip(&s).map(|(a, b)| a * b).sum())
}

/// Flags with `alpha <= beta`. Sentences the encoder window cut off entirely
/// are never flagged.
pub fn detect_chitchat(paragraph: &Paragraph, encoded: &EncodedSequence, beta: f64) -> Result<ChitchatFlags> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
    }
    let kept = encoded.num_words();
    let mut alpha = Vec::with_capacity(paragraph.sentences.len());
    for bounds in paragraph.sentence_bounds() {
        let visible = Span::new(bounds.start, bounds.end.min(kept));
        let score = if visible.is_empty() {
            f64::INFINITY
        } else {
            let h_s = sentence_representation(encoded, visible)?;
            chitchat_score(&encoded.paragraph_vector, &h_s)?
        };
        alpha.push(score);
    }
    Ok(flags_from_scores(alpha, beta))
}

pub fn flags_from_scores(alpha: Vec<f64>, beta: f64) -> ChitchatFlags {
    let flags = alpha.iter().map(|&a| u8::from(a <= beta)).collect();
    ChitchatFlags { alpha, flags, beta }
}

/// `-(number of predicted keyphrases whose first word sits in a flagged sentence)`
pub fn chitchat_reward(predicted: &RankedKeyphrases, flags: &ChitchatFlags, paragraph: &Paragraph) -> f64 {
    -(chitchat_violations(predicted, flags, paragraph) as f64)
}

pub fn chitchat_violations(predicted: &RankedKeyphrases, flags: &ChitchatFlags, paragraph: &Paragraph) -> usize {
    let bounds = paragraph.sentence_bounds();
    predicted
        .items
        .iter()
        .filter(|kp| {
            bounds
                .iter()
                .position(|b| b.start <= kp.span.start && kp.span.start < b.end)
                .is_some_and(|s| flags.is_flagged(s))
        })
        .count()
}

/// One line of `chitchat-scan` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChitchatRecord {
    pub paragraph_id: String,
    pub alpha: Vec<f64>,
    pub flags: Vec<u8>,
    pub beta: f64,
}

impl ChitchatRecord {
    pub fn new(paragraph_id: impl Into<String>, flags: &ChitchatFlags) -> Self {
        ChitchatRecord {
            paragraph_id: paragraph_id.into(),
            alpha: flags.alpha.clone(),
            flags: flags.flags.clone(),
            beta: flags.beta,
        }
    }
}

//! F1@k scoring and corpus-level reports.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::chitchat::{chitchat_violations, ChitchatFlags};
use crate::corpus::{Paragraph, Span, Transcript};
use crate::error::{Error, Result};
use crate::extractor::RankedKeyphrases;

/// What a predictor returns for one paragraph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Prediction {
    pub keyphrases: RankedKeyphrases,
    pub chitchat: Option<ChitchatFlags>,
}

pub trait KeyphrasePredictor {
    fn predict(&self, paragraph: &Paragraph, prev_keyphrases: &[String]) -> Result<Prediction>;
}

/// Lowercase and collapse whitespace.
pub fn normalize(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// F1 of the first `k` distinct predictions against the distinct gold
/// phrases. With no gold, 1 if nothing was predicted and 0 otherwise.
pub fn f1_at_k_strings(predicted: &[String], gold: &[String], k: usize) -> f64 {
    let gold: HashSet<String> = gold.iter().map(|g| normalize(g)).collect();
    let mut seen = HashSet::new();
    let top: Vec<String> = predicted
        .iter()
        .map(|p| normalize(p))
        .filter(|p| seen.insert(p.clone()))
        .take(k)
        .collect();
    if gold.is_empty() {
        return if top.is_empty() { 1.0 } else { 0.0 };
    }
    let matches = top.iter().filter(|p| gold.contains(*p)).count();
    if matches == 0 {
        return 0.0;
    }
    let precision = matches as f64 / top.len() as f64;
    let recall = matches as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn f1_at_k(predicted: &RankedKeyphrases, gold: &[Span], k: usize, paragraph: &Paragraph) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let gold: Vec<String> = gold.iter().map(|s| paragraph.span_text(*s)).collect();
    Ok(f1_at_k_strings(&predicted.texts(paragraph), &gold, k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParagraphReport {
    pub paragraph_id: String,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
    pub f1: BTreeMap<usize, f64>,
    pub repetitions: usize,
    pub chitchat_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1_at_1: f64,
    pub f1_at_3: f64,
    pub f1_at_5: f64,
    /// Macro F1 at every requested cutoff.
    pub f1: BTreeMap<usize, f64>,
    pub repetition_rate: f64,
    pub chitchat_violation_rate: f64,
    pub num_paragraphs: usize,
    pub num_predicted: usize,
    pub paragraphs: Vec<ParagraphReport>,
}

impl EvalReport {
    pub fn f1_at(&self, k: usize) -> Option<f64> {
        self.f1.get(&k).copied()
    }
}

/// Number of predicted phrases whose tokens all occur in `prev`.
fn count_repetitions(predicted: &[String], prev: &[String]) -> usize {
    let prev: HashSet<String> = prev
        .iter()
        .flat_map(|p| p.split_whitespace().map(str::to_lowercase))
        .collect();
    predicted
        .iter()
        .filter(|p| p.split_whitespace().all(|t| prev.contains(&t.to_lowercase())))
        .count()
}

/// Runs `predictor` over each transcript in order, conditioning every
/// paragraph on the previous paragraph's predictions.
pub fn evaluate<P: KeyphrasePredictor + ?Sized>(
    predictor: &P,
    transcripts: &[Transcript],
    ks: &[usize],
) -> Result<EvalReport> {
    if ks.contains(&0) {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut cutoffs: Vec<usize> = ks.iter().copied().chain([1, 3, 5]).collect();
    cutoffs.sort_unstable();
    cutoffs.dedup();

    let mut paragraphs = Vec::new();
    for t in transcripts {
        let mut prev: Vec<String> = Vec::new();
        for p in &t.paragraphs {
            let prediction = predictor.predict(p, &prev)?;
            let predicted = prediction.keyphrases.texts(p);
            let gold = p.gold_phrases();
            let f1 = cutoffs
                .iter()
                .map(|&k| (k, f1_at_k_strings(&predicted, &gold, k)))
                .collect();
            let violations = prediction
                .chitchat
                .as_ref()
                .map_or(0, |flags| chitchat_violations(&prediction.keyphrases, flags, p));
            paragraphs.push(ParagraphReport {
                paragraph_id: p.id.clone(),
                repetitions: count_repetitions(&predicted, &prev),
                chitchat_violations: violations,
                predicted: predicted.clone(),
                gold,
                f1,
            });
            prev = predicted;
        }
    }
    if paragraphs.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }

    let n = paragraphs.len() as f64;
    let f1: BTreeMap<usize, f64> = cutoffs
        .iter()
        .map(|&k| (k, paragraphs.iter().map(|r| r.f1[&k]).sum::<f64>() / n))
        .collect();
    let num_predicted: usize = paragraphs.iter().map(|r| r.predicted.len()).sum();
    let rate = |count: usize| if num_predicted == 0 { 0.0 } else { count as f64 / num_predicted as f64 };
    let repetition_rate = rate(paragraphs.iter().map(|r| r.repetitions).sum());
    let chitchat_violation_rate = rate(paragraphs.iter().map(|r| r.chitchat_violations).sum());
    let requested: BTreeMap<usize, f64> = f1.iter().filter(|(k, _)| ks.contains(k)).map(|(&k, &v)| (k, v)).collect();
    Ok(EvalReport {
        f1_at_1: f1[&1],
        f1_at_3: f1[&3],
        f1_at_5: f1[&5],
        f1: if ks.is_empty() { f1 } else { requested },
        repetition_rate,
        chitchat_violation_rate,
        num_paragraphs: paragraphs.len(),
        num_predicted,
        paragraphs,
    })
}

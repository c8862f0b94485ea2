//! Cross-domain augmentation: the domain discriminator, attention-pruned
//! silver labels for domain-specific words, and the auxiliary bridge head.
//!
//! Silver labeling keeps the `k` words the discriminator attends to most,
//! choosing the smallest `k` whose pruned document still receives (within
//! `eta`) the same transcript-domain probability as the full document.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::{CorpusSample, Domain, Paragraph};
use crate::encoder::{EncoderConfig, ParagraphEncoder, ToyEncoder};
use crate::error::{Error, Result};
use crate::extractor::LOG_EPS;
use crate::nn::{FeedForwardHead, Optimizer, OptimizerKind, Parameters};
use crate::tensor::{sigmoid, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDistribution {
    pub p_transcript: f64,
}

impl DomainDistribution {
    pub fn p_general(&self) -> f64 {
        1.0 - self.p_transcript
    }

    pub fn predicted(&self) -> Domain {
        if self.p_transcript >= 0.5 {
            Domain::Transcript
        } else {
            Domain::General
        }
    }
}

/// Classifier over max-pooled encoder output; owns its encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<E = ToyEncoder> {
    pub encoder: E,
    pub head: FeedForwardHead,
}

const ENCODER_PREFIX: &str = "encoder.";
const HEAD_PREFIX: &str = "head.";

impl Discriminator<ToyEncoder> {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let encoder = ToyEncoder::new(config)?;
        let d = encoder.config().hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(encoder.config().seed ^ 0x5eed_d15c);
        Ok(Discriminator {
            encoder,
            head: FeedForwardHead::new(d, d, 1, &mut rng),
        })
    }

    /// Transcript-domain logit for `words`, inside a graph.
    fn logit_var<'p>(&'p self, g: &mut Graph<'p>, words: &[&str]) -> Result<Var> {
        let seq = self.encoder.config().build_sequence(words, &[])?;
        let vars = self.encoder.forward(g, ENCODER_PREFIX, &seq)?;
        let pooled = g.max_rows(vars.words);
        self.head.forward(g, HEAD_PREFIX, pooled)
    }
}

impl Parameters for Discriminator<ToyEncoder> {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named_with(ENCODER_PREFIX);
        out.extend(self.head.named_with(HEAD_PREFIX));
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.named_mut_with(ENCODER_PREFIX);
        out.extend(self.head.named_mut_with(HEAD_PREFIX));
        out
    }
}

/// Column-wise max of a matrix's rows.
pub fn max_pool(rows: &Tensor) -> Result<Vec<f64>> {
    if rows.rows() == 0 {
        return Err(Error::Empty("nothing to pool"));
    }
    Ok(rows.max_rows().into_data())
}

fn head_scalar(head: &FeedForwardHead, input: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row_vector(input.to_vec()));
    let out = head.forward(&mut g, "", x)?;
    Ok(g.scalar(out))
}

impl<E: ParagraphEncoder> Discriminator<E> {
    /// Probability and per-word attention for an arbitrary word list.
    pub fn assess(&self, words: &[&str]) -> Result<(DomainDistribution, Vec<f64>)> {
        let seq = self.encoder.config().build_sequence(words, &[])?;
        let encoded = self.encoder.encode(&seq)?;
        let pooled = max_pool(&encoded.word_vectors)?;
        let p = sigmoid(head_scalar(&self.head, &pooled)?);
        Ok((DomainDistribution { p_transcript: p }, encoded.cls_attention))
    }

    pub fn probability(&self, words: &[&str]) -> Result<DomainDistribution> {
        Ok(self.assess(words)?.0)
    }
}

pub fn discriminate<E: ParagraphEncoder>(paragraph: &Paragraph, disc: &Discriminator<E>) -> Result<DomainDistribution> {
    if paragraph.is_empty() {
        return Err(Error::Empty("paragraph has no words"));
    }
    disc.probability(&paragraph.tokens())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            encoder: EncoderConfig::default(),
            epochs: 3,
            learning_rate: 3e-3,
            batch_size: 16,
            holdout_fraction: 0.2,
            optimizer: OptimizerKind::Adam,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorReport {
    pub train_size: usize,
    pub heldout_size: usize,
    pub heldout_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

fn domain_target(d: Domain) -> f64 {
    match d {
        Domain::Transcript => 1.0,
        Domain::General => 0.0,
    }
}

/// Stratified split: the last `holdout_fraction` of each shuffled domain is held out.
fn split_by_domain(samples: &[CorpusSample], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for domain in [Domain::Transcript, Domain::General] {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].domain == domain).collect();
        idx.shuffle(rng);
        let cut = idx.len() - ((idx.len() as f64) * fraction).round() as usize;
        heldout.extend_from_slice(&idx[cut..]);
        idx.truncate(cut);
        train.extend(idx);
    }
    (train, heldout)
}

pub fn discriminator_accuracy<E: ParagraphEncoder>(disc: &Discriminator<E>, samples: &[&CorpusSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        if discriminate(&s.paragraph, disc)?.predicted() == s.domain {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Trains a fresh discriminator with binary cross-entropy on the domain of
/// each sample and reports accuracy on a stratified held-out split.
pub fn train_discriminator(
    samples: &[CorpusSample],
    config: &DiscriminatorConfig,
) -> Result<(Discriminator, DiscriminatorReport)> {
    let has = |d| samples.iter().any(|s| s.domain == d);
    if !has(Domain::Transcript) || !has(Domain::General) {
        return Err(Error::InvalidArgument(
            "discriminator training needs samples from both domains".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) {
        return Err(Error::InvalidArgument("holdout_fraction must lie in [0, 1)".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut train, heldout) = split_by_domain(samples, config.holdout_fraction, &mut rng);
    let mut disc = Discriminator::new(config.encoder.clone())?;
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in train.chunks(config.batch_size).enumerate() {
            let mut grads = crate::autograd::Gradients::default();
            for &i in batch {
                let s = &samples[i];
                let mut g = Graph::new();
                let logit = disc.logit_var(&mut g, &s.paragraph.tokens())?;
                let p = g.sigmoid(logit);
                let loss = binary_nll_var(&mut g, p, &[domain_target(s.domain)]);
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        step: epoch * train.len() + b,
                        detail: format!("discriminator loss on {}", s.paragraph.id),
                    });
                }
                total += value;
                grads.accumulate(g.backward(loss));
            }
            opt.step(&mut disc, &grads);
        }
        epoch_losses.push(total / train.len().max(1) as f64);
    }

    let held: Vec<&CorpusSample> = heldout.iter().map(|&i| &samples[i]).collect();
    let heldout_accuracy = discriminator_accuracy(&disc, &held)?;
    Ok((
        disc,
        DiscriminatorReport {
            train_size: train.len(),
            heldout_size: held.len(),
            heldout_accuracy,
            epoch_losses,
        },
    ))
}

/// Word-level domain-specificity labels for one paragraph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilverLabels {
    pub labels: Vec<u8>,
    pub k_used: usize,
    pub converged: bool,
}

impl SilverLabels {
    pub fn targets(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| f64::from(l)).collect()
    }
}

/// Word indices ordered by attention, highest first; ties keep word order.
pub fn attention_order(attention: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..attention.len()).collect();
    order.sort_by(|&a, &b| attention[b].total_cmp(&attention[a]));
    order
}

/// Keeps the top-`k` words of `order` in their original positions.
pub fn prune<'a>(words: &[&'a str], order: &[usize], k: usize) -> Vec<&'a str> {
    let mut keep: Vec<usize> = order[..k].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| words[i]).collect()
}

/// Silver labels by attention pruning: the smallest `k` in `1..n` for which
/// `|p(top-k words) - p(all words)| <= eta`; all words when none qualifies.
pub fn filter_document<E: ParagraphEncoder>(
    paragraph: &Paragraph,
    disc: &Discriminator<E>,
    eta: f64,
) -> Result<SilverLabels> {
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be non-negative, got {eta}")));
    }
    let words = paragraph.tokens();
    let n = words.len();
    if n == 0 {
        return Err(Error::Empty("paragraph has no words"));
    }
    let (full, mut attention) = disc.assess(&words)?;
    // words cut by the encoder window rank last
    attention.resize(n, f64::NEG_INFINITY);
    let order = attention_order(&attention);

    for k in 1..n {
        let pruned = prune(&words, &order, k);
        let p = disc.probability(&pruned)?;
        if (p.p_transcript - full.p_transcript).abs() <= eta {
            let mut labels = vec![0u8; n];
            for &i in &order[..k] {
                labels[i] = 1;
            }
            return Ok(SilverLabels {
                labels,
                k_used: k,
                converged: true,
            });
        }
    }
    Ok(SilverLabels {
        labels: vec![1; n],
        k_used: n,
        converged: false,
    })
}

/// One line of the silver-label JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilverRecord {
    pub paragraph_id: String,
    pub labels: Vec<u8>,
    pub k: usize,
    pub eta: f64,
    pub converged: bool,
}

impl SilverRecord {
    pub fn new(paragraph_id: impl Into<String>, silver: &SilverLabels, eta: f64) -> Self {
        SilverRecord {
            paragraph_id: paragraph_id.into(),
            labels: silver.labels.clone(),
            k: silver.k_used,
            eta,
            converged: silver.converged,
        }
    }

    pub fn silver(&self) -> SilverLabels {
        SilverLabels {
            labels: self.labels.clone(),
            k_used: self.k,
            converged: self.converged,
        }
    }
}

/// Auxiliary per-word head predicting domain-specific words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BridgeHead(pub FeedForwardHead);

impl BridgeHead {
    pub fn new<R: rand::Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        BridgeHead(FeedForwardHead::new(d, d, 1, rng))
    }

    /// `n x 1` probabilities inside a graph.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, prefix: &str, h: Var) -> Result<Var> {
        if self.0.output_dim() != 1 {
            return Err(Error::Shape("bridge head must have one output".into()));
        }
        let logits = self.0.forward(g, prefix, h)?;
        Ok(g.sigmoid(logits))
    }
}

pub fn bridge_predict(h: &Tensor, head: &BridgeHead) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let hv = g.constant(h.clone());
    let q = head.forward(&mut g, "", hv)?;
    Ok(g.value(q).data().to_vec())
}

/// `-Σ [l ln q + (1 - l) ln(1 - q)]` with both logs clamped at `1e-12`.
pub fn bridge_loss(q: &[f64], silver: &SilverLabels) -> Result<f64> {
    if q.len() != silver.labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels",
            q.len(),
            silver.labels.len()
        )));
    }
    Ok(-q
        .iter()
        .zip(&silver.labels)
        .map(|(&qi, &l)| {
            let l = f64::from(l);
            l * qi.max(LOG_EPS).ln() + (1.0 - l) * (1.0 - qi).max(LOG_EPS).ln()
        })
        .sum::<f64>())
}

/// Differentiable binary negative log-likelihood of `q` (an `n x 1` column).
pub fn binary_nll_var(g: &mut Graph<'_>, q: Var, targets: &[f64]) -> Var {
    let n = targets.len();
    let pos = Tensor::from_vec(n, 1, targets.to_vec()).expect("column of targets");
    let neg = pos.map(|t| 1.0 - t);
    let log_q = g.log_clamp(q, LOG_EPS);
    let one_minus = g.one_minus(q);
    let log_1q = g.log_clamp(one_minus, LOG_EPS);
    let a = g.weighted_sum(log_q, pos);
    let b = g.weighted_sum(log_1q, neg);
    g.combine(&[(a, -1.0), (b, -1.0)])
}

/// Differentiable [`bridge_loss`] over the first `q.rows()` words.
pub fn bridge_loss_var(g: &mut Graph<'_>, q: Var, silver: &SilverLabels) -> Result<Var> {
    let rows = g.value(q).rows();
    if rows > silver.labels.len() {
        return Err(Error::Shape("more bridge outputs than silver labels".into()));
    }
    Ok(binary_nll_var(g, q, &silver.targets()[..rows]))
}

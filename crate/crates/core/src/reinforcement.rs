//! Rewards, the REINFORCE surrogate, and the training loop that combines the
//! keyphrase loss, the bridge loss and the policy-gradient term.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{
    bridge_loss_var, filter_document, train_discriminator, Discriminator, DiscriminatorConfig, DiscriminatorReport, SilverLabels,
};
use crate::autograd::{Gradients, Graph, Var};
use crate::chitchat::{chitchat_reward, detect_chitchat};
use crate::corpus::{spans_to_bio, CorpusSample, Label, LabelSequence, Paragraph, Transcript};
use crate::encoder::{EncoderConfig, ParagraphEncoder, ToyEncoder};
use crate::error::{Error, Result};
use crate::extractor::{argmax_labels, decode_keyphrases, keyphrase_loss_var, sum_log_prob, LabelDistribution, LOG_EPS};
use crate::model::{padded_distributions, KeyphraseModel};
use crate::nn::{Optimizer, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub r_rep: f64,
    pub r_chitchat: f64,
    pub r_total: f64,
    pub baseline: f64,
}

impl RewardBundle {
    pub fn advantage(&self) -> f64 {
        self.r_total - self.baseline
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha_weight: f64,
    pub lambda_bridge: f64,
    pub lambda_rl: f64,
    pub eta: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha_weight: 0.5,
            lambda_bridge: 1.0,
            lambda_rl: 1.0,
            eta: 0.05,
            beta: 0.05,
            learning_rate: 3e-3,
            batch_size: 8,
            epochs: 20,
            seed: 13,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("alpha_weight", self.alpha_weight),
            ("lambda_bridge", self.lambda_bridge),
            ("lambda_rl", self.lambda_rl),
            ("eta", self.eta),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

fn lowercase_tokens(phrases: &[String]) -> HashSet<String> {
    phrases
        .iter()
        .flat_map(|p| p.split_whitespace().map(str::to_lowercase))
        .collect()
}

fn is_repeat(dist: &LabelDistribution, word: &str, prev_tokens: &HashSet<String>) -> bool {
    dist.argmax().is_keyphrase() && prev_tokens.contains(&word.to_lowercase())
}

/// 1 when the word is tagged B or I and its lowercased token occurs in a
/// previous keyphrase.
pub fn rep_indicator(
    word_index: usize,
    dists: &[LabelDistribution],
    prev_keyphrases: &[String],
    paragraph: &Paragraph,
) -> u8 {
    let (Some(dist), Some(word)) = (dists.get(word_index), paragraph.tokens().get(word_index).copied()) else {
        return 0;
    };
    u8::from(is_repeat(dist, word, &lowercase_tokens(prev_keyphrases)))
}

/// `-(1/n) Σ_i REP(w_i)`
pub fn repetition_reward(dists: &[LabelDistribution], prev_keyphrases: &[String], paragraph: &Paragraph) -> f64 {
    let words = paragraph.tokens();
    if words.is_empty() {
        return 0.0;
    }
    let prev = lowercase_tokens(prev_keyphrases);
    let hits = words
        .iter()
        .zip(dists)
        .filter(|(w, d)| is_repeat(d, w, &prev))
        .count();
    -(hits as f64) / words.len() as f64
}

pub fn combine_rewards(r_rep: f64, r_chitchat: f64, alpha_weight: f64) -> f64 {
    r_rep + alpha_weight * r_chitchat
}

pub fn batch_baseline(rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Empty("baseline over an empty batch"));
    }
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

/// `-(r_total - b) · Σ_i ln p_i[argmax_i]`
pub fn reinforce_loss(dists: &[LabelDistribution], r_total: f64, baseline: f64) -> f64 {
    let log_p: f64 = dists.iter().map(|d| d.prob(d.argmax()).max(LOG_EPS).ln()).sum();
    -(r_total - baseline) * log_p
}

/// Differentiable [`reinforce_loss`] with the roll-out `labels` and the
/// advantage held fixed.
pub fn reinforce_loss_var(g: &mut Graph<'_>, probs: Var, labels: &[Label], advantage: f64) -> Result<Var> {
    if g.value(probs).rows() != labels.len() {
        return Err(Error::Shape("roll-out length differs from word count".into()));
    }
    let s = sum_log_prob(g, probs, labels);
    Ok(g.scale(s, -advantage))
}

/// A paragraph ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub sample: CorpusSample,
    pub gold: LabelSequence,
    pub silver: Option<SilverLabels>,
}

impl TrainingExample {
    pub fn new(sample: CorpusSample, silver: Option<SilverLabels>) -> Result<Self> {
        let gold = spans_to_bio(&sample.paragraph)?;
        if let Some(s) = &silver {
            if s.labels.len() != gold.len() {
                return Err(Error::Validation {
                    id: sample.paragraph.id.clone(),
                    message: format!("{} silver labels for {} words", s.labels.len(), gold.len()),
                });
            }
        }
        Ok(TrainingExample { sample, gold, silver })
    }
}

/// Builds examples, attaching silver labels when a discriminator is given.
pub fn prepare_examples<E: ParagraphEncoder>(
    samples: Vec<CorpusSample>,
    discriminator: Option<&Discriminator<E>>,
    eta: f64,
) -> Result<Vec<TrainingExample>> {
    samples
        .into_iter()
        .map(|s| {
            let silver = match discriminator {
                Some(d) => Some(filter_document(&s.paragraph, d, eta)?),
                None => None,
            };
            TrainingExample::new(s, silver)
        })
        .collect()
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub l_kp: f64,
    pub l_bridge: f64,
    pub l_rl: f64,
    pub r_rep: f64,
    pub r_chitchat: f64,
    pub b: f64,
}

struct Rollout<'p> {
    graph: Graph<'p>,
    probs: Var,
    labels: Vec<Label>,
    l_kp: Var,
    l_bridge: Option<Var>,
    r_rep: f64,
    r_chitchat: f64,
    r_total: f64,
}

fn roll_out<'p>(model: &'p KeyphraseModel, ex: &TrainingExample, config: &TrainConfig) -> Result<Rollout<'p>> {
    let paragraph = &ex.sample.paragraph;
    let prev = &ex.sample.prev_keyphrases;
    let seq = model.sequence(paragraph, prev)?;
    let mut g = Graph::new();
    let vars = model.forward(&mut g, &seq)?;
    let kept = g.value(vars.probs).rows();

    let l_kp = keyphrase_loss_var(&mut g, vars.probs, &ex.gold.labels[..kept])?;
    let l_bridge = match (&ex.silver, config.lambda_bridge > 0.0) {
        (Some(silver), true) => Some(bridge_loss_var(&mut g, vars.bridge, silver)?),
        _ => None,
    };

    let dists = padded_distributions(g.value(vars.probs), paragraph.len());
    let encoded = ToyEncoder::collect(&g, &vars.encoder, &seq);
    let flags = detect_chitchat(paragraph, &encoded, config.beta)?;
    let predicted = decode_keyphrases(&dists);
    let r_rep = repetition_reward(&dists, prev, paragraph);
    let r_chitchat = chitchat_reward(&predicted, &flags, paragraph);
    let mut labels = argmax_labels(&dists);
    labels.truncate(kept);

    Ok(Rollout {
        graph: g,
        probs: vars.probs,
        labels,
        l_kp,
        l_bridge,
        r_rep,
        r_chitchat,
        r_total: combine_rewards(r_rep, r_chitchat, config.alpha_weight),
    })
}

/// Forward every sample, take the batch-mean baseline, back-propagate
/// `L_kp + λ_bridge·L_bridge + λ_rl·L_R` summed over the batch, and apply one
/// optimizer update.
pub fn train_step(
    model: &mut KeyphraseModel,
    optimizer: &mut Optimizer,
    batch: &[&TrainingExample],
    config: &TrainConfig,
    step: usize,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let (grads, metrics) = {
        let model: &KeyphraseModel = model;
        let mut rollouts = Vec::with_capacity(batch.len());
        for ex in batch {
            rollouts.push(roll_out(model, ex, config)?);
        }
        let rewards: Vec<f64> = rollouts.iter().map(|r| r.r_total).collect();
        let b = batch_baseline(&rewards)?;

        let mut grads = Gradients::default();
        let mut metrics = StepMetrics {
            step,
            l_kp: 0.0,
            l_bridge: 0.0,
            l_rl: 0.0,
            r_rep: 0.0,
            r_chitchat: 0.0,
            b,
        };
        for (ex, mut r) in batch.iter().zip(rollouts) {
            let g = &mut r.graph;
            let mut terms = vec![(r.l_kp, 1.0)];
            metrics.l_kp += g.scalar(r.l_kp);
            if let Some(lb) = r.l_bridge {
                terms.push((lb, config.lambda_bridge));
                metrics.l_bridge += g.scalar(lb);
            }
            if config.lambda_rl > 0.0 {
                let lr = reinforce_loss_var(g, r.probs, &r.labels, r.r_total - b)?;
                terms.push((lr, config.lambda_rl));
                metrics.l_rl += g.scalar(lr);
            }
            let total = if terms.len() == 1 { r.l_kp } else { g.combine(&terms) };
            let value = g.scalar(total);
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: format!(
                        "loss {value} on paragraph {} (l_kp {}, l_bridge {}, l_rl {})",
                        ex.sample.paragraph.id, metrics.l_kp, metrics.l_bridge, metrics.l_rl
                    ),
                });
            }
            grads.accumulate(g.backward(total));
            metrics.r_rep += r.r_rep;
            metrics.r_chitchat += r.r_chitchat;
        }
        metrics.r_rep /= batch.len() as f64;
        metrics.r_chitchat /= batch.len() as f64;
        (grads, metrics)
    };
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            step,
            detail: "non-finite gradient".into(),
        });
    }
    optimizer.step(model, &grads);
    Ok(metrics)
}

/// Runs `config.epochs` shuffled passes over `examples`, calling `on_step`
/// after every update.
pub fn train(
    mut model: KeyphraseModel,
    examples: &[TrainingExample],
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
) -> Result<KeyphraseModel> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let metrics = train_step(&mut model, &mut optimizer, &batch, config, step)?;
            on_step(&metrics)?;
            step += 1;
        }
    }
    Ok(model)
}

/// A trained model plus the discriminator used for silver labels, if any.
#[derive(Clone, Debug)]
pub struct Fitted {
    pub model: KeyphraseModel,
    pub discriminator: Option<(Discriminator, DiscriminatorReport)>,
}

/// End-to-end training. General-domain documents, when present, are added to
/// the training set and a discriminator is trained on both domains to
/// produce silver labels for the bridge loss. Without them, or with
/// `lambda_bridge = 0`, no discriminator is trained.
pub fn fit(
    transcripts: &[Transcript],
    general: &[CorpusSample],
    encoder: EncoderConfig,
    discriminator: &DiscriminatorConfig,
    config: &TrainConfig,
    on_step: impl FnMut(&StepMetrics) -> Result<()>,
) -> Result<Fitted> {
    config.validate()?;
    let mut samples = CorpusSample::from_transcripts(transcripts);
    if samples.is_empty() {
        return Err(Error::Empty("transcript corpus"));
    }
    samples.extend(general.iter().cloned());
    let disc = if !general.is_empty() && config.lambda_bridge > 0.0 {
        Some(train_discriminator(&samples, discriminator)?)
    } else {
        None
    };
    let examples = prepare_examples(samples, disc.as_ref().map(|(d, _)| d), config.eta)?;
    let model = train(KeyphraseModel::new(encoder)?, &examples, config, on_step)?;
    Ok(Fitted {
        model,
        discriminator: disc,
    })
}

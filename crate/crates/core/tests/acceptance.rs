//! Acceptance suite. Prints one line per criterion and exits non-zero when a
//! gating criterion fails. Criteria 8 and 9 are ablation experiments whose
//! outcome is reported but does not gate the exit status.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use streamkp::augmentation::{
    bridge_loss, bridge_loss_var, filter_document, train_discriminator, Discriminator, DiscriminatorConfig,
    SilverLabels,
};
use streamkp::autograd::Graph;
use streamkp::chitchat::{chitchat_reward, chitchat_score, flags_from_scores};
use streamkp::corpus::{bio_to_spans, spans_to_bio, CorpusSample, Label, Paragraph, Sentence, Span, Transcript};
use streamkp::encoder::EncoderConfig;
use streamkp::evaluator::{evaluate, f1_at_k, KeyphrasePredictor, Prediction};
use streamkp::extractor::{argmax_labels, keyphrase_loss, keyphrase_loss_var, LabelDistribution, RankedKeyphrases, ScoredSpan};
use streamkp::model::{KeyphraseModel, ModelPredictor};
use streamkp::nn::Parameters;
use streamkp::reinforcement::{batch_baseline, combine_rewards, fit, reinforce_loss_var, repetition_reward, TrainConfig};
use streamkp::synth::{generate, SynthConfig};
use streamkp::tensor::softmax;
use streamkp::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn timed(limit: Duration, f: impl FnOnce() -> Result<Outcome>) -> Outcome {
    let start = Instant::now();
    let mut out = f().unwrap_or_else(|e| Outcome {
        pass: false,
        detail: format!("error: {e}"),
    });
    let elapsed = start.elapsed();
    if elapsed > limit {
        out.pass = false;
    }
    out.detail = format!("{} [{:.2}s, limit {}s]", out.detail, elapsed.as_secs_f64(), limit.as_secs());
    out
}

fn word<R: Rng>(rng: &mut R) -> String {
    const POOL: &[&str] = &["layer", "Mask", "brush", "the", "a", "of", "tool", "gradient", "chat", "lol", "pen"];
    POOL.choose(rng).unwrap().to_string()
}

/// A paragraph of `n` words split into random sentences, with random disjoint gold spans.
fn random_paragraph<R: Rng>(rng: &mut R, id: String, n: usize) -> Paragraph {
    let words: Vec<String> = (0..n).map(|_| word(rng)).collect();
    let mut sentences = Vec::new();
    let mut i = 0;
    while i < n {
        let len = rng.random_range(1..=(n - i).min(6));
        sentences.push(Sentence::new(words[i..i + len].to_vec()));
        i += len;
    }
    let mut gold = Vec::new();
    let mut pos = 0;
    while pos < n {
        if rng.random_bool(0.3) {
            let len = rng.random_range(1..=3).min(n - pos);
            gold.push(Span::new(pos, pos + len));
            pos += len + rng.random_range(0..2);
        } else {
            pos += 1;
        }
    }
    Paragraph::new(id, sentences, gold).unwrap()
}

fn criterion_2() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ok = 0;
    for i in 0..1000 {
        let n = rng.random_range(1..=64);
        let p = random_paragraph(&mut rng, format!("p{i}"), n);
        if bio_to_spans(&spans_to_bio(&p)?) == p.gold {
            ok += 1;
        }
    }
    Ok(Outcome {
        pass: ok == 1000,
        detail: format!("BIO round trip exact on {ok}/1000 paragraphs"),
    })
}

/// Scorer written independently of the library: plain loops over vectors.
fn brute_force_f1(pred: &[String], gold: &[String], k: usize) -> f64 {
    let norm = |s: &String| s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    let mut gold_set: Vec<String> = Vec::new();
    for g in gold {
        let g = norm(g);
        if !gold_set.contains(&g) {
            gold_set.push(g);
        }
    }
    let mut top: Vec<String> = Vec::new();
    for p in pred {
        let p = norm(p);
        if top.len() < k && !top.contains(&p) {
            top.push(p);
        }
    }
    if gold_set.is_empty() {
        return if top.is_empty() { 1.0 } else { 0.0 };
    }
    let mut hits = 0.0;
    for p in &top {
        if gold_set.contains(p) {
            hits += 1.0;
        }
    }
    if hits == 0.0 {
        return 0.0;
    }
    let precision = hits / top.len() as f64;
    let recall = hits / gold_set.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

struct Fixed(Vec<RankedKeyphrases>);

impl KeyphrasePredictor for Fixed {
    fn predict(&self, paragraph: &Paragraph, _: &[String]) -> Result<Prediction> {
        let i: usize = paragraph.id[1..].parse().unwrap();
        Ok(Prediction {
            keyphrases: self.0[i].clone(),
            chitchat: None,
        })
    }
}

fn criterion_3() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let round = |x: f64| (x * 1e9).round() / 1e9;
    let mut paragraphs = Vec::new();
    let mut predictions = Vec::new();
    let mut mismatches = 0;
    let ks = [1, 2, 3, 5, 10];
    for i in 0..200 {
        let n = rng.random_range(1..=20);
        let p = random_paragraph(&mut rng, format!("p{i}"), n);
        let mut items: Vec<ScoredSpan> = (0..rng.random_range(0..8))
            .map(|_| {
                let s = rng.random_range(0..n);
                let e = rng.random_range(s + 1..=(s + 3).min(n));
                ScoredSpan {
                    span: Span::new(s, e),
                    score: rng.random(),
                }
            })
            .collect();
        items.shuffle(&mut rng);
        let ranked = RankedKeyphrases { items };
        let texts = ranked.texts(&p);
        for &k in &ks {
            let lib = f1_at_k(&ranked, &p.gold, k, &p)?;
            if round(lib).to_bits() != round(brute_force_f1(&texts, &p.gold_phrases(), k)).to_bits() {
                mismatches += 1;
            }
        }
        paragraphs.push(p);
        predictions.push(ranked);
    }
    let transcripts = vec![Transcript {
        id: "all".into(),
        paragraphs: paragraphs.clone(),
    }];
    let report = evaluate(&Fixed(predictions.clone()), &transcripts, &ks)?;
    for &k in &ks {
        let oracle: f64 = paragraphs
            .iter()
            .zip(&predictions)
            .map(|(p, r)| brute_force_f1(&r.texts(p), &p.gold_phrases(), k))
            .sum::<f64>()
            / paragraphs.len() as f64;
        if round(report.f1_at(k).unwrap()).to_bits() != round(oracle).to_bits() {
            mismatches += 1;
        }
    }
    Ok(Outcome {
        pass: mismatches == 0,
        detail: format!("{mismatches} mismatches over 200 cases x {} cutoffs plus macro averages", ks.len()),
    })
}

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-3;
/// Below this magnitude both gradients are compared absolutely.
const ABS_FLOOR: f64 = 1e-6;

fn grad_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

type Analytic = std::collections::BTreeMap<String, Vec<f64>>;

/// Worst per-coordinate error of each analytic gradient against central
/// differences of the matching component of `losses`.
fn check_gradients<const L: usize>(
    model: &KeyphraseModel,
    analytic: &[Analytic; L],
    losses: &dyn Fn(&KeyphraseModel) -> [f64; L],
) -> [f64; L] {
    let mut worst = [0.0f64; L];
    let mut probe = model.clone();
    let shapes: Vec<(String, usize)> = model.named().into_iter().map(|(n, t)| (n, t.len())).collect();
    for (name, len) in shapes {
        for i in 0..len {
            let original = model.named().into_iter().find(|(n, _)| *n == name).unwrap().1.data()[i];
            set_param(&mut probe, &name, i, original + FD_STEP);
            let up = losses(&probe);
            set_param(&mut probe, &name, i, original - FD_STEP);
            let down = losses(&probe);
            set_param(&mut probe, &name, i, original);
            for l in 0..L {
                let numeric = (up[l] - down[l]) / (2.0 * FD_STEP);
                let a = analytic[l].get(&name).map_or(0.0, |g| g[i]);
                worst[l] = worst[l].max(grad_error(a, numeric));
            }
        }
    }
    worst
}

fn set_param(model: &mut KeyphraseModel, name: &str, i: usize, value: f64) {
    let mut params = model.named_mut();
    let t = &mut params.iter_mut().find(|(n, _)| n == name).unwrap().1;
    t.data_mut()[i] = value;
}

struct GradCase {
    model: KeyphraseModel,
    paragraph: Paragraph,
    prev: Vec<String>,
    silver: SilverLabels,
    advantage: f64,
}

fn grad_case(rng: &mut ChaCha8Rng, i: u64) -> GradCase {
    let d = *[4usize, 8, 12, 16].choose(rng).unwrap();
    let config = EncoderConfig {
        hidden_dim: d,
        num_heads: if d % 4 == 0 { 2 } else { 1 },
        num_layers: rng.random_range(1..=2),
        vocab_hash_buckets: 24,
        max_sequence_length: 24,
        max_piece_chars: 4,
        seed: 1000 + i,
    };
    let model = KeyphraseModel::new(config).unwrap();
    let n = rng.random_range(1..=8);
    let paragraph = random_paragraph(rng, format!("g{i}"), n);
    let prev = (0..rng.random_range(0..3)).map(|_| word(rng)).collect();
    let silver = SilverLabels {
        labels: (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect(),
        k_used: 1,
        converged: true,
    };
    GradCase {
        model,
        paragraph,
        prev,
        silver,
        advantage: rng.random_range(-1.0..1.0),
    }
}

fn criterion_4() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = [0.0f64; 3];
    let cases = 20;
    for i in 0..cases {
        let c = grad_case(&mut rng, i);
        let gold = spans_to_bio(&c.paragraph)?;
        let frozen = argmax_labels(&c.model.analyze(&c.paragraph, &c.prev)?.dists);

        let analytic: [Analytic; 3] = std::array::from_fn(|which| {
            let seq = c.model.sequence(&c.paragraph, &c.prev).unwrap();
            let mut g = Graph::new();
            let vars = c.model.forward(&mut g, &seq).unwrap();
            let loss = match which {
                0 => keyphrase_loss_var(&mut g, vars.probs, &gold.labels),
                1 => bridge_loss_var(&mut g, vars.bridge, &c.silver),
                _ => reinforce_loss_var(&mut g, vars.probs, &frozen, c.advantage),
            }
            .unwrap();
            g.backward(loss)
                .iter()
                .map(|(n, t)| (n.clone(), t.data().to_vec()))
                .collect()
        });
        let losses = |m: &KeyphraseModel| -> [f64; 3] {
            let a = m.analyze(&c.paragraph, &c.prev).unwrap();
            let log_p: f64 = a
                .dists
                .iter()
                .zip(&frozen)
                .map(|(d, l): (&LabelDistribution, &Label)| d.prob(*l).max(1e-12).ln())
                .sum();
            [
                keyphrase_loss(&a.dists, &gold).unwrap(),
                bridge_loss(&a.bridge, &c.silver).unwrap(),
                -c.advantage * log_p,
            ]
        };
        let w = check_gradients(&c.model, &analytic, &losses);
        for (slot, v) in worst.iter_mut().zip(w) {
            *slot = slot.max(v);
        }
    }
    Ok(Outcome {
        pass: worst.iter().all(|&w| w <= REL_TOL),
        detail: format!(
            "{cases} instances each; worst relative error L_kp {:.2e}, L_bridge {:.2e}, L_R {:.2e} (tol {REL_TOL:.0e})",
            worst[0], worst[1], worst[2]
        ),
    })
}

/// Minimal k by exhaustive search with an independently coded pruning step.
fn brute_force_k(disc: &Discriminator, words: &[&str], eta: f64) -> Result<usize> {
    let n = words.len();
    let (full, attention) = disc.assess(words)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| attention[b].partial_cmp(&attention[a]).unwrap().then(a.cmp(&b)));
    let mut best = n;
    for k in (1..n).rev() {
        let mut keep = idx[..k].to_vec();
        keep.sort();
        let pruned: Vec<&str> = keep.iter().map(|&i| words[i]).collect();
        let p = disc.probability(&pruned)?.p_transcript;
        if (p - full.p_transcript).abs() <= eta {
            best = k;
        }
    }
    Ok(best)
}

fn criterion_5() -> Result<Outcome> {
    let corpus = generate(&SynthConfig {
        size: 200,
        general_size: 200,
        seed: 5,
        ..SynthConfig::default()
    })?;
    let mut samples = CorpusSample::from_transcripts(&corpus.transcripts);
    samples.extend(corpus.general.iter().cloned().map(CorpusSample::general));
    let config = DiscriminatorConfig {
        encoder: EncoderConfig {
            hidden_dim: 16,
            ..EncoderConfig::default()
        },
        epochs: 2,
        ..DiscriminatorConfig::default()
    };
    let (disc, report) = train_discriminator(&samples, &config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    samples.shuffle(&mut rng);
    let chosen: Vec<&Paragraph> = samples
        .iter()
        .map(|s| &s.paragraph)
        .filter(|p| p.len() <= 32)
        .take(100)
        .collect();
    let mut agree = 0;
    let mut total = 0;
    for eta in [0.01, 0.05, 0.1] {
        for p in &chosen {
            let silver = filter_document(p, &disc, eta)?;
            let expected = brute_force_k(&disc, &p.tokens(), eta)?;
            let labelled = silver.labels.iter().filter(|&&l| l == 1).count();
            total += 1;
            if silver.k_used == expected && labelled == expected {
                agree += 1;
            }
        }
    }
    Ok(Outcome {
        pass: chosen.len() == 100 && agree == total,
        detail: format!(
            "minimal k matched on {agree}/{total} (paragraph, eta) pairs; discriminator held-out accuracy {:.3}",
            report.heldout_accuracy
        ),
    })
}

fn criterion_6() -> Result<Outcome> {
    let corpus = generate(&SynthConfig {
        size: 1000,
        general_size: 1000,
        seed: 6,
        ..SynthConfig::default()
    })?;
    let mut samples = CorpusSample::from_transcripts(&corpus.transcripts);
    samples.extend(corpus.general.iter().cloned().map(CorpusSample::general));
    let (_, report) = train_discriminator(&samples, &DiscriminatorConfig::default())?;
    Ok(Outcome {
        pass: report.heldout_accuracy >= 0.93 && samples.len() == 2000,
        detail: format!(
            "held-out accuracy {:.4} on {} of {} paragraphs (threshold 0.93)",
            report.heldout_accuracy,
            report.heldout_size,
            samples.len()
        ),
    })
}

fn criterion_7() -> Result<Outcome> {
    let corpus = generate(&SynthConfig {
        size: 32,
        general_size: 32,
        seed: 7,
        ..SynthConfig::default()
    })?;
    let general: Vec<CorpusSample> = corpus.general.iter().cloned().map(CorpusSample::general).collect();
    let encoder = EncoderConfig::default();
    let discriminator = DiscriminatorConfig {
        encoder: encoder.clone(),
        ..DiscriminatorConfig::default()
    };
    let config = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let fitted = fit(&corpus.transcripts, &general, encoder, &discriminator, &config, |_| Ok(()))?;
    let report = evaluate(
        &ModelPredictor {
            model: &fitted.model,
            beta: config.beta,
        },
        &corpus.transcripts,
        &[1],
    )?;
    let gold_counts: Vec<usize> = corpus
        .transcripts
        .iter()
        .flat_map(|t| &t.paragraphs)
        .map(|p| p.gold_phrases().into_iter().collect::<BTreeSet<_>>().len())
        .collect();
    let ceiling = gold_counts.iter().map(|&g| 2.0 / (g as f64 + 1.0)).sum::<f64>() / gold_counts.len() as f64;
    Ok(Outcome {
        pass: report.f1_at_1 >= 0.9,
        detail: format!(
            "training-set F1@1 {:.4} after 200 epochs (threshold 0.90, attainable maximum {ceiling:.4})",
            report.f1_at_1
        ),
    })
}

struct Ablation {
    f1: f64,
    repetition: f64,
    violations: f64,
}

const ABLATION_SEEDS: u64 = 5;

/// Trains on one synthetic corpus per seed and evaluates on a separate one.
fn ablation(alpha_weight: f64, lambda_rl: f64) -> Result<Ablation> {
    let mut out = Ablation {
        f1: 0.0,
        repetition: 0.0,
        violations: 0.0,
    };
    for seed in 0..ABLATION_SEEDS {
        let train = generate(&SynthConfig {
            size: 128,
            general_size: 0,
            overlap_rate: 0.4,
            seed: 1000 + seed,
            ..SynthConfig::default()
        })?;
        let test = generate(&SynthConfig {
            size: 64,
            general_size: 0,
            overlap_rate: 0.4,
            seed: 2000 + seed,
            ..SynthConfig::default()
        })?;
        let config = TrainConfig {
            alpha_weight,
            lambda_rl,
            epochs: 30,
            seed,
            ..TrainConfig::default()
        };
        let encoder = EncoderConfig {
            seed,
            ..EncoderConfig::default()
        };
        let fitted = fit(&train.transcripts, &[], encoder, &DiscriminatorConfig::default(), &config, |_| Ok(()))?;
        let r = evaluate(
            &ModelPredictor {
                model: &fitted.model,
                beta: config.beta,
            },
            &test.transcripts,
            &[1],
        )?;
        let n = ABLATION_SEEDS as f64;
        out.f1 += r.f1_at_1 / n;
        out.repetition += r.repetition_rate / n;
        out.violations += r.chitchat_violation_rate / n;
    }
    Ok(out)
}

fn criteria_8_and_9() -> (Outcome, Outcome) {
    let start = Instant::now();
    let run = || -> Result<(Ablation, Ablation, Ablation)> {
        Ok((ablation(0.0, 0.0)?, ablation(0.0, 1.0)?, ablation(0.5, 1.0)?))
    };
    match run() {
        Ok((off, rep, chat)) => {
            let secs = start.elapsed().as_secs_f64();
            (
                Outcome {
                    pass: rep.repetition < off.repetition,
                    detail: format!(
                        "mean repetition_rate {:.4} with reward vs {:.4} ablated (F1@1 {:.3} vs {:.3}) [{secs:.1}s for 8 and 9]",
                        rep.repetition, off.repetition, rep.f1, off.f1
                    ),
                },
                Outcome {
                    pass: chat.violations < off.violations,
                    detail: format!(
                        "mean chitchat_violation_rate {:.4} with reward vs {:.4} ablated (F1@1 {:.3} vs {:.3})",
                        chat.violations, off.violations, chat.f1, off.f1
                    ),
                },
            )
        }
        Err(e) => {
            let fail = || Outcome {
                pass: false,
                detail: format!("error: {e}"),
            };
            (fail(), fail())
        }
    }
}

fn criterion_10() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut violations = 0;
    for i in 0..10_000 {
        let n = rng.random_range(1..=24);
        let p = random_paragraph(&mut rng, format!("f{i}"), n);
        let dists: Vec<LabelDistribution> = (0..n)
            .map(|_| {
                let logits: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
                let s = softmax(&logits);
                LabelDistribution::new([s[0], s[1], s[2]])
            })
            .collect();
        let prev: Vec<String> = (0..rng.random_range(0..4)).map(|_| word(&mut rng)).collect();
        let r_rep = repetition_reward(&dists, &prev, &p);

        let d = rng.random_range(1..=32);
        let h_p: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let alpha: Vec<f64> = p
            .sentences
            .iter()
            .map(|_| {
                let h_s: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
                chitchat_score(&h_p, &h_s).unwrap()
            })
            .collect();
        let flags = flags_from_scores(alpha.clone(), rng.random());
        let predicted = streamkp::extractor::decode_keyphrases(&dists);
        let r_chat = chitchat_reward(&predicted, &flags, &p);

        let batch: Vec<f64> = (0..rng.random_range(1..=32))
            .map(|_| combine_rewards(rng.random_range(-1.0..=0.0), -(rng.random_range(0..5) as f64), rng.random_range(0.0..2.0)))
            .collect();
        let b = batch_baseline(&batch)?;
        let adv_sum: f64 = batch.iter().map(|r| r - b).sum();

        let ok = (-1.0..=0.0).contains(&r_rep)
            && r_chat <= 0.0
            && r_chat >= -(predicted.len() as f64)
            && alpha.iter().all(|&a| a > 0.0 && a <= 1.0 + 1e-12)
            && adv_sum.abs() <= 1e-9;
        if !ok {
            violations += 1;
        }
    }
    Ok(Outcome {
        pass: violations == 0,
        detail: format!("{violations} bound violations in 10000 random instances"),
    })
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut results: Vec<(u32, bool, Outcome)> = vec![(
        1,
        true,
        Outcome {
            pass: true,
            detail: "disclosure only: scores on real live-stream transcripts need a corpus that does not ship \
                     with this crate; criteria 2-10 run on properties and synthetic data"
                .into(),
        },
    )];
    results.push((2, true, timed(secs(5), criterion_2)));
    results.push((3, true, timed(secs(5), criterion_3)));
    results.push((4, true, timed(secs(30), criterion_4)));
    results.push((5, true, timed(secs(60), criterion_5)));
    results.push((6, true, timed(secs(300), criterion_6)));
    results.push((7, true, timed(secs(600), criterion_7)));
    let (c8, c9) = criteria_8_and_9();
    results.push((8, false, c8));
    results.push((9, false, c9));
    results.push((10, true, timed(secs(10), criterion_10)));

    let mut gating_failures = 0;
    for (id, gating, out) in &results {
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        let note = if *gating { "" } else { " (reported, not gating)" };
        println!("criterion {id:>2}: {verdict}{note} - {}", out.detail);
        if *gating && !out.pass {
            gating_failures += 1;
        }
    }
    if gating_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Per-word O/B/I head, its cross-entropy loss, and greedy decoding into
//! ranked keyphrases.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::{bio_to_spans, Label, LabelSequence, Paragraph, Span};
use crate::error::{Error, Result};
use crate::nn::FeedForwardHead;
use crate::tensor::Tensor;

/// Clamp applied before every log in the supervised losses.
pub const LOG_EPS: f64 = 1e-12;

/// Probabilities over `(O, B, I)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub probs: [f64; 3],
}

impl LabelDistribution {
    pub fn new(probs: [f64; 3]) -> Self {
        LabelDistribution { probs }
    }

    /// Certain `O`, used for words that did not fit the encoder window.
    pub fn outside() -> Self {
        LabelDistribution {
            probs: [1.0, 0.0, 0.0],
        }
    }

    pub fn prob(&self, label: Label) -> f64 {
        self.probs[label.index()]
    }

    /// Most likely label; ties go to the earlier of O, B, I.
    pub fn argmax(&self) -> Label {
        let mut best = 0;
        for i in 1..3 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        Label::from_index(best)
    }
}

/// The keyphrase head: hidden width `d`, three outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExtractorHead(pub FeedForwardHead);

impl ExtractorHead {
    pub fn new<R: rand::Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        ExtractorHead(FeedForwardHead::new(d, d, 3, rng))
    }

    /// `n x 3` label probabilities inside a graph.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, prefix: &str, h: Var) -> Result<Var> {
        if self.0.output_dim() != 3 {
            return Err(Error::Shape("extractor head must have three outputs".into()));
        }
        let logits = self.0.forward(g, prefix, h)?;
        Ok(g.softmax_rows(logits))
    }
}

pub fn predict_label_distributions(h: &Tensor, head: &ExtractorHead) -> Result<Vec<LabelDistribution>> {
    let mut g = Graph::new();
    let hv = g.constant(h.clone());
    let probs = head.forward(&mut g, "", hv)?;
    Ok(distributions_from(g.value(probs)))
}

pub(crate) fn distributions_from(probs: &Tensor) -> Vec<LabelDistribution> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            LabelDistribution::new([row[0], row[1], row[2]])
        })
        .collect()
}

/// `-Σ_i ln max(p_i[gold_i], ε)`, summed over words.
pub fn keyphrase_loss(dists: &[LabelDistribution], gold: &LabelSequence) -> Result<f64> {
    if dists.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} distributions for {} labels",
            dists.len(),
            gold.len()
        )));
    }
    Ok(-dists
        .iter()
        .zip(&gold.labels)
        .map(|(d, l)| d.prob(*l).max(LOG_EPS).ln())
        .sum::<f64>())
}

/// One-hot selector over an `n x 3` probability matrix.
pub(crate) fn label_selector(labels: &[Label]) -> Tensor {
    let mut t = Tensor::zeros(labels.len(), 3);
    for (i, l) in labels.iter().enumerate() {
        t.set(i, l.index(), 1.0);
    }
    t
}

/// Differentiable `Σ_i ln max(p_i[labels_i], ε)` over the first `labels.len()` rows.
pub(crate) fn sum_log_prob(g: &mut Graph<'_>, probs: Var, labels: &[Label]) -> Var {
    let logs = g.log_clamp(probs, LOG_EPS);
    g.weighted_sum(logs, label_selector(labels))
}

/// Differentiable [`keyphrase_loss`].
pub fn keyphrase_loss_var(g: &mut Graph<'_>, probs: Var, gold: &[Label]) -> Result<Var> {
    if g.value(probs).rows() != gold.len() {
        return Err(Error::Shape("label count differs from word count".into()));
    }
    let s = sum_log_prob(g, probs, gold);
    Ok(g.scale(s, -1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    pub span: Span,
    pub score: f64,
}

/// Predicted keyphrases, best first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedKeyphrases {
    pub items: Vec<ScoredSpan>,
}

impl RankedKeyphrases {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn spans(&self) -> Vec<Span> {
        self.items.iter().map(|s| s.span).collect()
    }

    pub fn texts(&self, paragraph: &Paragraph) -> Vec<String> {
        self.items.iter().map(|s| paragraph.span_text(s.span)).collect()
    }
}

pub fn argmax_labels(dists: &[LabelDistribution]) -> Vec<Label> {
    dists.iter().map(LabelDistribution::argmax).collect()
}

/// Greedy decode: argmax labels, BIO spans, each scored by `P(B)` of its
/// first word, best first with earlier starts winning ties.
pub fn decode_keyphrases(dists: &[LabelDistribution]) -> RankedKeyphrases {
    let labels = LabelSequence {
        labels: argmax_labels(dists),
    };
    let mut items: Vec<ScoredSpan> = bio_to_spans(&labels)
        .into_iter()
        .map(|span| ScoredSpan {
            span,
            score: dists[span.start].prob(Label::B),
        })
        .collect();
    items.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.span.start.cmp(&b.span.start))
    });
    RankedKeyphrases { items }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn dist(o: f64, b: f64, i: f64) -> LabelDistribution {
        LabelDistribution::new([o, b, i])
    }

    #[test]
    fn zero_head_is_uniform() {
        let head = ExtractorHead(FeedForwardHead::zeros(4, 4, 3));
        let h = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.0, 0.5, 9.0]]).unwrap();
        for d in predict_label_distributions(&h, &head).unwrap() {
            for p in d.probs {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hand_set_logits() {
        // one-dim input h = 1, identity first layer, second layer maps to (0, ln2, 0)
        let mut head = ExtractorHead(FeedForwardHead::zeros(1, 1, 3));
        head.0.w1 = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        head.0.w2 = Tensor::row_vector(vec![0.0, 2f64.ln(), 0.0]);
        let h = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        let d = predict_label_distributions(&h, &head).unwrap();
        let expected = [0.25, 0.5, 0.25];
        for (p, e) in d[0].probs.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rows_identical_distributions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let head = ExtractorHead::new(3, &mut rng);
        let h = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.1, 0.2, 0.3]]).unwrap();
        let d = predict_label_distributions(&h, &head).unwrap();
        assert_eq!(d[0], d[1]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let head = ExtractorHead(FeedForwardHead::zeros(4, 4, 3));
        assert!(predict_label_distributions(&Tensor::zeros(2, 3), &head).is_err());
    }

    #[test]
    fn loss_examples() {
        let u = dist(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0);
        let gold = |l: Vec<Label>| LabelSequence { labels: l };
        let one = keyphrase_loss(&[u], &gold(vec![Label::O])).unwrap();
        assert!((one - 3f64.ln()).abs() < 1e-12);
        assert!((one - 1.0986).abs() < 1e-4);
        let two = keyphrase_loss(&[u, u], &gold(vec![Label::B, Label::I])).unwrap();
        assert!((two - 2.0 * 3f64.ln()).abs() < 1e-12);
        let perfect = keyphrase_loss(
            &[dist(0.0, 1.0, 0.0), dist(0.0, 0.0, 1.0)],
            &gold(vec![Label::B, Label::I]),
        )
        .unwrap();
        assert_eq!(perfect, 0.0);
        // zero probability on the gold label is clamped, not infinite
        let clamped = keyphrase_loss(&[dist(1.0, 0.0, 0.0)], &gold(vec![Label::B])).unwrap();
        assert!((clamped + LOG_EPS.ln()).abs() < 1e-9);
        assert!(keyphrase_loss(&[u], &gold(vec![])).is_err());
    }

    #[test]
    fn decode_examples() {
        let k = decode_keyphrases(&[dist(0.2, 0.7, 0.1), dist(0.1, 0.2, 0.7), dist(0.8, 0.1, 0.1)]);
        assert_eq!(k.items, vec![ScoredSpan { span: Span::new(0, 2), score: 0.7 }]);

        let k = decode_keyphrases(&[dist(0.3, 0.6, 0.1), dist(0.9, 0.05, 0.05), dist(0.05, 0.9, 0.05)]);
        assert_eq!(k.spans(), vec![Span::new(2, 3), Span::new(0, 1)]);

        let k = decode_keyphrases(&[
            dist(0.9, 0.05, 0.05),
            dist(0.3, 0.5, 0.2),
            dist(0.9, 0.05, 0.05),
            dist(0.3, 0.5, 0.2),
        ]);
        assert_eq!(k.spans(), vec![Span::new(1, 2), Span::new(3, 4)]);
    }

    fn arb_logits() -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 0..24)
    }

    fn to_dists(logits: &[[f64; 3]]) -> Vec<LabelDistribution> {
        logits
            .iter()
            .map(|l| {
                let p = crate::tensor::softmax(l);
                dist(p[0], p[1], p[2])
            })
            .collect()
    }

    proptest! {
        #[test]
        fn decoded_output_is_ranked_and_disjoint(logits in arb_logits()) {
            let k = decode_keyphrases(&to_dists(&logits));
            for w in k.items.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            let mut spans = k.spans();
            spans.sort();
            for w in spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
        }

        #[test]
        fn argmax_invariant_to_logit_shift(logits in arb_logits(), shift in -50.0f64..50.0) {
            let shifted: Vec<[f64; 3]> = logits.iter().map(|l| [l[0] + shift, l[1] + shift, l[2] + shift]).collect();
            prop_assert_eq!(argmax_labels(&to_dists(&logits)), argmax_labels(&to_dists(&shifted)));
        }
    }
}

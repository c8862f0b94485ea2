//! The keyphrase model: a conditioned encoder with the O/B/I head and the
//! auxiliary bridge head on top of the same word vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augmentation::BridgeHead;
use crate::autograd::{Graph, Var};
use crate::chitchat::{detect_chitchat, ChitchatFlags};
use crate::corpus::Paragraph;
use crate::encoder::{EncodedSequence, EncoderConfig, EncoderVars, InputSequence, ToyEncoder, Truncation};
use crate::error::Result;
use crate::evaluator::{KeyphrasePredictor, Prediction};
use crate::extractor::{decode_keyphrases, distributions_from, ExtractorHead, LabelDistribution};
use crate::nn::Parameters;
use crate::tensor::Tensor;

const ENCODER_PREFIX: &str = "encoder.";
const EXTRACTOR_PREFIX: &str = "extractor.";
const BRIDGE_PREFIX: &str = "bridge.";

#[derive(Clone, Debug, PartialEq)]
pub struct KeyphraseModel {
    pub encoder: ToyEncoder,
    pub extractor: ExtractorHead,
    pub bridge: BridgeHead,
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    /// `n' x 3` label probabilities over the kept words.
    pub probs: Var,
    /// `n' x 1` bridge probabilities.
    pub bridge: Var,
}

/// Everything one inference pass yields for a paragraph.
#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    /// One per paragraph word; words past the encoder window are certain `O`.
    pub dists: Vec<LabelDistribution>,
    pub encoded: EncodedSequence,
    pub bridge: Vec<f64>,
    pub truncation: Truncation,
}

impl KeyphraseModel {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let encoder = ToyEncoder::new(config)?;
        let d = encoder.config().hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(encoder.config().seed ^ 0x6b65_7970);
        let extractor = ExtractorHead::new(d, &mut rng);
        let bridge = BridgeHead::new(d, &mut rng);
        Ok(KeyphraseModel {
            encoder,
            extractor,
            bridge,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    pub fn sequence(&self, paragraph: &Paragraph, prev_keyphrases: &[String]) -> Result<InputSequence> {
        self.config().build_sequence(&paragraph.tokens(), prev_keyphrases)
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, seq: &InputSequence) -> Result<ModelVars> {
        let encoder = self.encoder.forward(g, ENCODER_PREFIX, seq)?;
        let probs = self.extractor.forward(g, EXTRACTOR_PREFIX, encoder.words)?;
        let bridge = self.bridge.forward(g, BRIDGE_PREFIX, encoder.words)?;
        Ok(ModelVars {
            encoder,
            probs,
            bridge,
        })
    }

    pub fn analyze(&self, paragraph: &Paragraph, prev_keyphrases: &[String]) -> Result<Analysis> {
        let seq = self.sequence(paragraph, prev_keyphrases)?;
        let mut g = Graph::new();
        let vars = self.forward(&mut g, &seq)?;
        Ok(Analysis {
            dists: padded_distributions(g.value(vars.probs), paragraph.len()),
            encoded: ToyEncoder::collect(&g, &vars.encoder, &seq),
            bridge: g.value(vars.bridge).data().to_vec(),
            truncation: seq.truncation(),
        })
    }

    /// Ranked keyphrases plus chitchat flags at threshold `beta`.
    pub fn predict(&self, paragraph: &Paragraph, prev_keyphrases: &[String], beta: f64) -> Result<Prediction> {
        let analysis = self.analyze(paragraph, prev_keyphrases)?;
        let flags = detect_chitchat(paragraph, &analysis.encoded, beta)?;
        Ok(Prediction {
            keyphrases: decode_keyphrases(&analysis.dists),
            chitchat: Some(flags),
        })
    }
}

pub(crate) fn padded_distributions(probs: &Tensor, n: usize) -> Vec<LabelDistribution> {
    let mut dists = distributions_from(probs);
    dists.resize(n, LabelDistribution::outside());
    dists
}

impl Parameters for KeyphraseModel {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named_with(ENCODER_PREFIX);
        out.extend(self.extractor.0.named_with(EXTRACTOR_PREFIX));
        out.extend(self.bridge.0.named_with(BRIDGE_PREFIX));
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.named_mut_with(ENCODER_PREFIX);
        out.extend(self.extractor.0.named_mut_with(EXTRACTOR_PREFIX));
        out.extend(self.bridge.0.named_mut_with(BRIDGE_PREFIX));
        out
    }
}

/// A model paired with the chitchat threshold used at inference.
#[derive(Clone, Copy, Debug)]
pub struct ModelPredictor<'a> {
    pub model: &'a KeyphraseModel,
    pub beta: f64,
}

impl KeyphrasePredictor for ModelPredictor<'_> {
    fn predict(&self, paragraph: &Paragraph, prev_keyphrases: &[String]) -> Result<Prediction> {
        self.model.predict(paragraph, prev_keyphrases, self.beta)
    }
}

/// Flags for a paragraph under the model's current encoder.
pub fn model_chitchat_flags(model: &KeyphraseModel, paragraph: &Paragraph, prev: &[String], beta: f64) -> Result<ChitchatFlags> {
    let analysis = model.analyze(paragraph, prev)?;
    detect_chitchat(paragraph, &analysis.encoded, beta)
}

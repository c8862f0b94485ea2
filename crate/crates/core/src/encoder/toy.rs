//! Small post-norm transformer over hashed word pieces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sequence::{InputSequence, CLS, SEP};
use super::{aggregate_cls_attention, EncodedSequence, EncoderConfig, ParagraphEncoder};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{init_std, Parameters};
use crate::tensor::Tensor;

const EMBEDDING_STD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ff1_w: Tensor,
    pub ff1_b: Tensor,
    pub ff2_w: Tensor,
    pub ff2_b: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub segment_embedding: Tensor,
    pub embedding_ln_gain: Tensor,
    pub embedding_ln_bias: Tensor,
    pub layers: Vec<LayerParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyEncoder {
    config: EncoderConfig,
    pub params: EncoderParams,
}

/// Graph handles produced by one encoder pass.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    /// `n x d`, word-piece averaged.
    pub words: Var,
    /// `1 x d` final-layer `[CLS]` row.
    pub cls: Var,
    pub appended: Option<Var>,
    /// `len x d` final-layer rows of every piece.
    pub pieces: Var,
    /// Final layer, `[CLS]` query, one row per head over all pieces.
    pub cls_attention_rows: Vec<Vec<f64>>,
}

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.to_lowercase().bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

impl LayerParams {
    fn new(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let ff = 2 * d;
        LayerParams {
            wq: Tensor::randn(d, d, init_std(d), rng),
            bq: Tensor::zeros(1, d),
            wk: Tensor::randn(d, d, init_std(d), rng),
            bk: Tensor::zeros(1, d),
            wv: Tensor::randn(d, d, init_std(d), rng),
            bv: Tensor::zeros(1, d),
            wo: Tensor::randn(d, d, init_std(d), rng),
            bo: Tensor::zeros(1, d),
            ln1_gain: Tensor::filled(1, d, 1.0),
            ln1_bias: Tensor::zeros(1, d),
            ff1_w: Tensor::randn(d, ff, init_std(d), rng),
            ff1_b: Tensor::zeros(1, ff),
            ff2_w: Tensor::randn(ff, d, init_std(ff), rng),
            ff2_b: Tensor::zeros(1, d),
            ln2_gain: Tensor::filled(1, d, 1.0),
            ln2_bias: Tensor::zeros(1, d),
        }
    }

    fn fields(&self) -> [(&'static str, &Tensor); 16] {
        [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ff1_w", &self.ff1_w),
            ("ff1_b", &self.ff1_b),
            ("ff2_w", &self.ff2_w),
            ("ff2_b", &self.ff2_b),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    fn fields_mut(&mut self) -> [(&'static str, &mut Tensor); 16] {
        [
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("ff1_w", &mut self.ff1_w),
            ("ff1_b", &mut self.ff1_b),
            ("ff2_w", &mut self.ff2_w),
            ("ff2_b", &mut self.ff2_b),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ]
    }
}

impl ToyEncoder {
    /// Random initialization seeded from `config.seed`.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.hidden_dim;
        let params = EncoderParams {
            token_embedding: Tensor::randn(config.vocab_hash_buckets, d, EMBEDDING_STD, &mut rng),
            position_embedding: Tensor::randn(config.max_sequence_length, d, EMBEDDING_STD, &mut rng),
            segment_embedding: Tensor::randn(2, d, EMBEDDING_STD, &mut rng),
            embedding_ln_gain: Tensor::filled(1, d, 1.0),
            embedding_ln_bias: Tensor::zeros(1, d),
            layers: (0..config.num_layers)
                .map(|_| LayerParams::new(d, &mut rng))
                .collect(),
        };
        Ok(ToyEncoder { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Embedding row of a piece. Rows 0 and 1 are reserved for the markers.
    pub fn bucket(&self, piece: &str) -> usize {
        match piece {
            CLS => 0,
            SEP => 1,
            _ => 2 + (fnv1a(piece) % (self.config.vocab_hash_buckets as u64 - 2)) as usize,
        }
    }

    pub(crate) fn named_with<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor)> {
        let p = &self.params;
        let mut out = vec![
            (format!("{prefix}token_embedding"), &p.token_embedding),
            (format!("{prefix}position_embedding"), &p.position_embedding),
            (format!("{prefix}segment_embedding"), &p.segment_embedding),
            (format!("{prefix}embedding_ln_gain"), &p.embedding_ln_gain),
            (format!("{prefix}embedding_ln_bias"), &p.embedding_ln_bias),
        ];
        for (i, layer) in p.layers.iter().enumerate() {
            for (name, t) in layer.fields() {
                out.push((format!("{prefix}layers.{i}.{name}"), t));
            }
        }
        out
    }

    pub(crate) fn named_mut_with<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Tensor)> {
        let p = &mut self.params;
        let mut out = vec![
            (format!("{prefix}token_embedding"), &mut p.token_embedding),
            (format!("{prefix}position_embedding"), &mut p.position_embedding),
            (format!("{prefix}segment_embedding"), &mut p.segment_embedding),
            (format!("{prefix}embedding_ln_gain"), &mut p.embedding_ln_gain),
            (format!("{prefix}embedding_ln_bias"), &mut p.embedding_ln_bias),
        ];
        for (i, layer) in p.layers.iter_mut().enumerate() {
            for (name, t) in layer.fields_mut() {
                out.push((format!("{prefix}layers.{i}.{name}"), t));
            }
        }
        out
    }

    /// Runs the encoder inside `g`, registering parameters under `prefix`.
    pub fn forward<'p>(
        &'p self,
        g: &mut Graph<'p>,
        prefix: &str,
        seq: &InputSequence,
    ) -> Result<EncoderVars> {
        let n = seq.paragraph_words();
        if n == 0 {
            return Err(Error::Empty("paragraph has no words"));
        }
        let len = seq.pieces().len();
        if len > self.config.max_sequence_length {
            return Err(Error::InvalidArgument(format!(
                "sequence of {len} pieces exceeds max_sequence_length {}",
                self.config.max_sequence_length
            )));
        }
        let d = self.config.hidden_dim;
        let heads = self.config.num_heads;
        let head_dim = d / heads;
        let p = &self.params;
        let name = |s: &str| format!("{prefix}{s}");

        let buckets: Vec<usize> = seq.pieces().iter().map(|pc| self.bucket(&pc.text)).collect();
        let positions: Vec<usize> = (0..len).collect();

        let tok = g.param(name("token_embedding"), &p.token_embedding);
        let pos = g.param(name("position_embedding"), &p.position_embedding);
        let seg = g.param(name("segment_embedding"), &p.segment_embedding);
        let tok_rows = g.gather(tok, &buckets);
        let pos_rows = g.gather(pos, &positions);
        let seg_rows = g.gather(seg, &seq.segment_ids());
        let sum = g.add(tok_rows, pos_rows);
        let sum = g.add(sum, seg_rows);
        let ln_g = g.param(name("embedding_ln_gain"), &p.embedding_ln_gain);
        let ln_b = g.param(name("embedding_ln_bias"), &p.embedding_ln_bias);
        let mut x = g.layer_norm(sum, ln_g, ln_b);

        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut cls_rows = Vec::new();
        for (i, layer) in p.layers.iter().enumerate() {
            let lp = |s: &str| format!("{prefix}layers.{i}.{s}");
            let wq = g.param(lp("wq"), &layer.wq);
            let bq = g.param(lp("bq"), &layer.bq);
            let wk = g.param(lp("wk"), &layer.wk);
            let bk = g.param(lp("bk"), &layer.bk);
            let wv = g.param(lp("wv"), &layer.wv);
            let bv = g.param(lp("bv"), &layer.bv);
            let q = g.affine(x, wq, bq);
            let k = g.affine(x, wk, bk);
            let v = g.affine(x, wv, bv);

            let mut outs = Vec::with_capacity(heads);
            cls_rows.clear();
            for h in 0..heads {
                let qh = g.slice_cols(q, h * head_dim, head_dim);
                let kh = g.slice_cols(k, h * head_dim, head_dim);
                let vh = g.slice_cols(v, h * head_dim, head_dim);
                let scores = g.matmul_nt(qh, kh);
                let scores = g.scale(scores, scale);
                let probs = g.softmax_rows(scores);
                cls_rows.push(g.value(probs).row(0).to_vec());
                outs.push(g.matmul(probs, vh));
            }
            let attn = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
            let wo = g.param(lp("wo"), &layer.wo);
            let bo = g.param(lp("bo"), &layer.bo);
            let attn = g.affine(attn, wo, bo);
            let res = g.add(x, attn);
            let g1 = g.param(lp("ln1_gain"), &layer.ln1_gain);
            let b1 = g.param(lp("ln1_bias"), &layer.ln1_bias);
            let x1 = g.layer_norm(res, g1, b1);

            let f1w = g.param(lp("ff1_w"), &layer.ff1_w);
            let f1b = g.param(lp("ff1_b"), &layer.ff1_b);
            let f2w = g.param(lp("ff2_w"), &layer.ff2_w);
            let f2b = g.param(lp("ff2_b"), &layer.ff2_b);
            let hidden = g.affine(x1, f1w, f1b);
            let hidden = g.gelu(hidden);
            let ff = g.affine(hidden, f2w, f2b);
            let res = g.add(x1, ff);
            let g2 = g.param(lp("ln2_gain"), &layer.ln2_gain);
            let b2 = g.param(lp("ln2_bias"), &layer.ln2_bias);
            x = g.layer_norm(res, g2, b2);
        }

        let mut avg = Tensor::zeros(n, len);
        for (w, pieces) in seq.word_pieces().iter().enumerate() {
            let share = 1.0 / pieces.len() as f64;
            for &pc in pieces {
                avg.set(w, pc, share);
            }
        }
        let avg = g.constant(avg);
        let words = g.matmul(avg, x);
        let cls = g.gather(x, &[0]);
        let kp = seq.keyphrase_pieces();
        let appended = (!kp.is_empty()).then(|| g.gather(x, &kp));

        Ok(EncoderVars {
            words,
            cls,
            appended,
            pieces: x,
            cls_attention_rows: cls_rows,
        })
    }

    pub(crate) fn collect(g: &Graph<'_>, vars: &EncoderVars, seq: &InputSequence) -> EncodedSequence {
        let d = g.value(vars.words).cols();
        EncodedSequence {
            word_vectors: g.value(vars.words).clone(),
            paragraph_vector: g.value(vars.cls).data().to_vec(),
            cls_attention: aggregate_cls_attention(&vars.cls_attention_rows, &seq.word_pieces()),
            appended_kp_vectors: vars
                .appended
                .map(|a| g.value(a).clone())
                .unwrap_or_else(|| Tensor::zeros(0, d)),
        }
    }
}

impl Parameters for ToyEncoder {
    fn named(&self) -> Vec<(String, &Tensor)> {
        self.named_with("")
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.named_mut_with("")
    }
}

impl ParagraphEncoder for ToyEncoder {
    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn encode(&self, sequence: &InputSequence) -> Result<EncodedSequence> {
        let mut g = Graph::new();
        let vars = self.forward(&mut g, "", sequence)?;
        Ok(Self::collect(&g, &vars, sequence))
    }
}

//! Deterministic two-domain synthetic corpora.
//!
//! Transcript paragraphs mix filler sentences that carry the gold keyphrases
//! with injected chitchat and with unlabelled mentions of the previous
//! paragraph's keyphrases. General-domain paragraphs draw keyphrases from a
//! disjoint topic vocabulary and contain no chitchat.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Paragraph, Sentence, Span, Transcript};
use crate::error::{Error, Result};

const TRANSCRIPT_TOPICS: &[&str] = &[
    "brush", "layer", "mask", "gradient", "palette", "canvas", "stroke", "opacity", "blend", "shader",
    "texture", "vector", "sketch", "lineart", "shading", "highlight", "contour", "perspective", "anatomy",
    "portrait", "lettering", "typography", "kerning", "logo", "grid", "illustration", "watercolor",
    "gouache", "charcoal", "render", "lighting", "silhouette", "composition", "thumbnail", "mockup",
    "wireframe", "prototype", "bezier", "pen", "eraser", "smudge", "airbrush", "saturation", "hue",
    "contrast", "vignette", "clipping", "selection", "lasso", "pixel", "resolution", "artboard", "symbol",
    "glyph", "serif", "mesh", "sculpt", "rig", "keyframe", "animation",
];

const GENERAL_TOPICS: &[&str] = &[
    "election", "senate", "budget", "inflation", "tariff", "vaccine", "protein", "genome", "enzyme",
    "climate", "glacier", "rainfall", "drought", "satellite", "orbit", "telescope", "galaxy", "quasar",
    "reactor", "turbine", "battery", "lithium", "pipeline", "refinery", "merger", "dividend", "equity",
    "mortgage", "lawsuit", "verdict", "treaty", "embassy", "referendum", "parliament", "census",
    "migration", "harvest", "fertilizer", "irrigation", "wildfire", "earthquake", "volcano", "tsunami",
    "hurricane", "stadium", "tournament", "championship", "playoff", "marathon", "museum", "archive",
    "manuscript", "dialect", "grammar", "algorithm", "database", "protocol", "encryption", "firmware",
    "bandwidth",
];

const FILLER: &[&str] = &[
    "the", "a", "we", "you", "it", "is", "are", "this", "that", "now", "then", "so", "and", "with",
    "for", "on", "in", "to", "of", "here", "there", "just", "really", "going", "make", "look", "use",
    "some", "very", "more", "about", "because", "what", "like", "can", "will", "next", "let", "see", "try",
];

const CHAT: &[&str] = &[
    "hello", "hi", "thanks", "chat", "lol", "welcome", "everyone", "follow", "subscribe", "coffee",
    "music", "weekend", "friends", "haha", "awesome", "cool", "bye", "lunch", "cat", "dog", "weather",
    "song", "emote", "raid", "donation", "hype", "snacks", "morning",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of transcript paragraphs.
    pub size: usize,
    /// Number of general-domain paragraphs.
    pub general_size: usize,
    pub paragraphs_per_transcript: usize,
    /// Probability that a transcript paragraph gets a chitchat sentence.
    pub chitchat_rate: f64,
    /// Probability that a transcript paragraph re-mentions a previous keyphrase.
    pub overlap_rate: f64,
    /// Probability that a paragraph carries two or three keyphrases instead of one.
    pub multi_keyphrase_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 200,
            general_size: 200,
            paragraphs_per_transcript: 4,
            chitchat_rate: 0.3,
            overlap_rate: 0.4,
            multi_keyphrase_rate: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("chitchat_rate", self.chitchat_rate),
            ("overlap_rate", self.overlap_rate),
            ("multi_keyphrase_rate", self.multi_keyphrase_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.paragraphs_per_transcript == 0 {
            return Err(Error::InvalidArgument("paragraphs_per_transcript must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub transcripts: Vec<Transcript>,
    pub general: Vec<Paragraph>,
}

/// Tokens of one sentence plus the gold spans inside it, relative to the sentence.
struct Draft {
    tokens: Vec<String>,
    gold: Vec<Span>,
}

fn filler<R: Rng>(rng: &mut R, len: usize) -> Vec<String> {
    (0..len).map(|_| FILLER.choose(rng).unwrap().to_string()).collect()
}

/// Filler with `phrase` dropped in at a random position.
fn carrier<R: Rng>(rng: &mut R, phrase: &[String], labelled: bool) -> Draft {
    let len = rng.random_range(4..8);
    let mut tokens = filler(rng, len);
    let at = rng.random_range(0..=tokens.len());
    tokens.splice(at..at, phrase.iter().cloned());
    let gold = if labelled {
        vec![Span::new(at, at + phrase.len())]
    } else {
        vec![]
    };
    Draft { tokens, gold }
}

fn chitchat<R: Rng>(rng: &mut R, distractor: Option<&str>) -> Draft {
    let len = rng.random_range(4..8);
    let mut tokens: Vec<String> = (0..len)
        .map(|i| {
            let pool = if i % 3 == 2 { FILLER } else { CHAT };
            pool.choose(rng).unwrap().to_string()
        })
        .collect();
    if let Some(w) = distractor {
        let at = rng.random_range(0..=tokens.len());
        tokens.insert(at, w.to_string());
    }
    Draft { tokens, gold: vec![] }
}

/// Picks phrases of 1 or 2 words from `topics`, avoiding `banned` words.
fn keyphrases<R: Rng>(rng: &mut R, topics: &[&str], banned: &[String], multi_rate: f64) -> Vec<Vec<String>> {
    let mut pool: Vec<&str> = topics.iter().copied().filter(|w| !banned.iter().any(|b| b == w)).collect();
    pool.shuffle(rng);
    let count = if rng.random_bool(multi_rate) { rng.random_range(2..=3) } else { 1 };
    let mut out = Vec::with_capacity(count);
    let mut it = pool.into_iter();
    for _ in 0..count {
        let len = if rng.random_bool(0.4) { 2 } else { 1 };
        let phrase: Vec<String> = it.by_ref().take(len).map(String::from).collect();
        if phrase.is_empty() {
            break;
        }
        out.push(phrase);
    }
    out
}

fn assemble(id: String, drafts: Vec<Draft>) -> Result<Paragraph> {
    let mut sentences = Vec::with_capacity(drafts.len());
    let mut gold = Vec::new();
    let mut offset = 0;
    for d in drafts {
        gold.extend(d.gold.iter().map(|s| Span::new(s.start + offset, s.end + offset)));
        offset += d.tokens.len();
        sentences.push(Sentence { tokens: d.tokens });
    }
    Paragraph::new(id, sentences, gold)
}

fn transcript_paragraph<R: Rng>(
    rng: &mut R,
    id: String,
    prev: &[Vec<String>],
    config: &SynthConfig,
) -> Result<(Paragraph, Vec<Vec<String>>)> {
    let prev_words: Vec<String> = prev.iter().flatten().cloned().collect();
    let phrases = keyphrases(rng, TRANSCRIPT_TOPICS, &prev_words, config.multi_keyphrase_rate);
    let mut drafts: Vec<Draft> = phrases.iter().map(|p| carrier(rng, p, true)).collect();
    if rng.random_bool(0.5) {
        let len = rng.random_range(4..8);
        drafts.push(Draft {
            tokens: filler(rng, len),
            gold: vec![],
        });
    }
    drafts.shuffle(rng);
    if !prev.is_empty() && rng.random_bool(config.overlap_rate) {
        let old = prev.choose(rng).unwrap();
        let at = rng.random_range(0..=drafts.len());
        drafts.insert(at, carrier(rng, old, false));
    }
    if rng.random_bool(config.chitchat_rate) {
        let used: Vec<&String> = phrases.iter().flatten().chain(&prev_words).collect();
        let spare: Vec<&str> = TRANSCRIPT_TOPICS
            .iter()
            .copied()
            .filter(|w| !used.iter().any(|u| u == w))
            .collect();
        let distractor = if rng.random_bool(0.5) { spare.choose(rng).copied() } else { None };
        let at = rng.random_range(0..=drafts.len());
        drafts.insert(at, chitchat(rng, distractor));
    }
    Ok((assemble(id, drafts)?, phrases))
}

fn general_paragraph<R: Rng>(rng: &mut R, id: String, config: &SynthConfig) -> Result<Paragraph> {
    let phrases = keyphrases(rng, GENERAL_TOPICS, &[], config.multi_keyphrase_rate);
    let mut drafts: Vec<Draft> = phrases.iter().map(|p| carrier(rng, p, true)).collect();
    if rng.random_bool(0.5) {
        let len = rng.random_range(4..8);
        drafts.push(Draft {
            tokens: filler(rng, len),
            gold: vec![],
        });
    }
    drafts.shuffle(rng);
    assemble(id, drafts)
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut transcripts = Vec::new();
    let mut made = 0;
    while made < config.size {
        let t = transcripts.len();
        let count = config.paragraphs_per_transcript.min(config.size - made);
        let mut paragraphs = Vec::with_capacity(count);
        let mut prev: Vec<Vec<String>> = Vec::new();
        for j in 0..count {
            let (p, phrases) = transcript_paragraph(&mut rng, format!("t{t}-p{j}"), &prev, config)?;
            paragraphs.push(p);
            prev = phrases;
        }
        made += count;
        transcripts.push(Transcript {
            id: format!("t{t}"),
            paragraphs,
        });
    }
    let general = (0..config.general_size)
        .map(|i| general_paragraph(&mut rng, format!("g{i}"), config))
        .collect::<Result<_>>()?;
    Ok(SynthCorpus { transcripts, general })
}

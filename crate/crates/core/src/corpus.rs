//! Transcript and general-domain document model, JSONL ingestion, and the
//! span/BIO codec.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open token range `[start, end)` over a flattened paragraph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", from = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sentence {
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Sentence {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub id: String,
    pub sentences: Vec<Sentence>,
    #[serde(rename = "keyphrases", default)]
    pub gold: Vec<Span>,
}

impl Paragraph {
    /// Builds and validates a paragraph.
    pub fn new(id: impl Into<String>, sentences: Vec<Sentence>, gold: Vec<Span>) -> Result<Self> {
        let p = Paragraph {
            id: id.into(),
            sentences,
            gold,
        };
        p.validate()?;
        Ok(p)
    }

    /// Total token count `n`.
    pub fn len(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened token sequence.
    pub fn tokens(&self) -> Vec<&str> {
        self.sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str))
            .collect()
    }

    /// Token ranges of each sentence in the flattened sequence.
    pub fn sentence_bounds(&self) -> Vec<Span> {
        let mut start = 0;
        self.sentences
            .iter()
            .map(|s| {
                let span = Span::new(start, start + s.len());
                start += s.len();
                span
            })
            .collect()
    }

    /// Index of the sentence containing `token`.
    pub fn sentence_of(&self, token: usize) -> Option<usize> {
        self.sentence_bounds()
            .iter()
            .position(|b| b.start <= token && token < b.end)
    }

    /// Surface text of a span: tokens joined by single spaces.
    pub fn span_text(&self, span: Span) -> String {
        self.tokens()[span.start..span.end].join(" ")
    }

    pub fn gold_phrases(&self) -> Vec<String> {
        self.gold.iter().map(|s| self.span_text(*s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Validation {
            id: self.id.clone(),
            message,
        };
        for (i, s) in self.sentences.iter().enumerate() {
            if s.is_empty() {
                return Err(fail(format!("sentence {i} is empty")));
            }
            if let Some(t) = s.tokens.iter().find(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
                return Err(fail(format!("sentence {i} has invalid token {t:?}")));
            }
        }
        let n = self.len();
        let mut prev_end = 0;
        for (i, span) in self.gold.iter().enumerate() {
            if span.start >= span.end || span.end > n {
                return Err(fail(format!(
                    "keyphrase span [{}, {}) out of bounds for {n} tokens",
                    span.start, span.end
                )));
            }
            if i > 0 && span.start < prev_end {
                return Err(fail(format!(
                    "keyphrase span [{}, {}) overlaps or is out of order",
                    span.start, span.end
                )));
            }
            prev_end = span.end;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub paragraphs: Vec<Paragraph>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Domain {
    Transcript,
    General,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSample {
    pub paragraph: Paragraph,
    pub domain: Domain,
    pub prev_keyphrases: Vec<String>,
}

impl CorpusSample {
    /// A standalone general-domain document.
    pub fn general(paragraph: Paragraph) -> Self {
        CorpusSample {
            paragraph,
            domain: Domain::General,
            prev_keyphrases: Vec::new(),
        }
    }

    /// One sample per paragraph, each conditioned on the gold keyphrases of
    /// the paragraph before it.
    pub fn from_transcripts(transcripts: &[Transcript]) -> Vec<CorpusSample> {
        let mut out = Vec::new();
        for t in transcripts {
            let mut prev: Vec<String> = Vec::new();
            for p in &t.paragraphs {
                out.push(CorpusSample {
                    paragraph: p.clone(),
                    domain: Domain::Transcript,
                    prev_keyphrases: prev,
                });
                prev = p.gold_phrases();
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    O,
    B,
    I,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::O, Label::B, Label::I];

    pub fn index(self) -> usize {
        match self {
            Label::O => 0,
            Label::B => 1,
            Label::I => 2,
        }
    }

    pub fn from_index(i: usize) -> Label {
        Label::ALL[i]
    }

    pub fn is_keyphrase(self) -> bool {
        self != Label::O
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSequence {
    pub labels: Vec<Label>,
}

impl LabelSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn spans_to_bio(paragraph: &Paragraph) -> Result<LabelSequence> {
    encode_spans(paragraph.len(), &paragraph.gold).map_err(|message| Error::Validation {
        id: paragraph.id.clone(),
        message,
    })
}

fn encode_spans(n: usize, spans: &[Span]) -> std::result::Result<LabelSequence, String> {
    let mut labels = vec![Label::O; n];
    let mut prev_end = 0;
    for (i, s) in spans.iter().enumerate() {
        if s.start >= s.end || s.end > n {
            return Err(format!("span [{}, {}) out of bounds", s.start, s.end));
        }
        if i > 0 && s.start < prev_end {
            return Err(format!("span [{}, {}) overlaps its predecessor", s.start, s.end));
        }
        labels[s.start] = Label::B;
        for l in &mut labels[s.start + 1..s.end] {
            *l = Label::I;
        }
        prev_end = s.end;
    }
    Ok(LabelSequence { labels })
}

/// Decodes maximal `B I*` runs. An `I` that follows `O` (or starts the
/// sequence) opens a span of its own.
pub fn bio_to_spans(labels: &LabelSequence) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, label) in labels.labels.iter().enumerate() {
        match label {
            Label::B => {
                if let Some(start) = open.take() {
                    spans.push(Span::new(start, i));
                }
                open = Some(i);
            }
            Label::I => {
                if open.is_none() {
                    open = Some(i);
                }
            }
            Label::O => {
                if let Some(start) = open.take() {
                    spans.push(Span::new(start, i));
                }
            }
        }
    }
    if let Some(start) = open {
        spans.push(Span::new(start, labels.len()));
    }
    spans
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParagraph {
    id: String,
    sentences: Vec<Vec<String>>,
    #[serde(default)]
    keyphrases: Vec<[usize; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTranscript {
    id: String,
    paragraphs: Vec<RawParagraph>,
}

impl RawParagraph {
    fn into_paragraph(self) -> Result<Paragraph> {
        Paragraph::new(
            self.id,
            self.sentences.into_iter().map(|tokens| Sentence { tokens }).collect(),
            self.keyphrases.into_iter().map(Span::from).collect(),
        )
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

pub fn load_transcripts(path: impl AsRef<Path>) -> Result<Vec<Transcript>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (_, raw) in read_jsonl::<RawTranscript>(path)? {
        let paragraphs = raw
            .paragraphs
            .into_iter()
            .map(RawParagraph::into_paragraph)
            .collect::<Result<Vec<_>>>()?;
        out.push(Transcript {
            id: raw.id,
            paragraphs,
        });
    }
    Ok(out)
}

pub fn load_general_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusSample>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (_, raw) in read_jsonl::<RawParagraph>(path)? {
        if !seen.insert(raw.id.clone()) {
            return Err(Error::Validation {
                id: raw.id,
                message: "duplicate document id".into(),
            });
        }
        out.push(CorpusSample::general(raw.into_paragraph()?));
    }
    Ok(out)
}

#[derive(Serialize)]
struct TranscriptRecord<'a> {
    id: &'a str,
    paragraphs: &'a [Paragraph],
}

/// Writes transcripts in the format [`load_transcripts`] reads.
pub fn write_transcripts(path: impl AsRef<Path>, transcripts: &[Transcript]) -> Result<()> {
    let mut text = String::new();
    for t in transcripts {
        text.push_str(&serde_json::to_string(&TranscriptRecord {
            id: &t.id,
            paragraphs: &t.paragraphs,
        })?);
        text.push('\n');
    }
    fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
}

/// Writes general-domain documents in the format [`load_general_corpus`] reads.
pub fn write_general_corpus(path: impl AsRef<Path>, docs: &[Paragraph]) -> Result<()> {
    let mut text = String::new();
    for d in docs {
        text.push_str(&serde_json::to_string(d)?);
        text.push('\n');
    }
    fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
}

//! Construction of the conditioned input `[CLS] w_1..w_n [SEP] kp_1 [SEP] kp_2 ...`
//! and its word-piece segmentation.

use crate::error::{Error, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Cls,
    Sep,
    /// Paragraph word by index.
    Word(usize),
    /// Token of an appended previous-paragraph keyphrase.
    Keyphrase,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqToken {
    pub text: String,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Piece {
    pub text: String,
    /// Index into [`InputSequence::tokens`].
    pub token: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Truncation {
    pub dropped_keyphrases: usize,
    pub dropped_words: usize,
}

impl Truncation {
    pub fn any(&self) -> bool {
        self.dropped_keyphrases > 0 || self.dropped_words > 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputSequence {
    tokens: Vec<SeqToken>,
    pieces: Vec<Piece>,
    words: usize,
    truncation: Truncation,
}

/// Splits a word into pieces of at most `max_chars` characters; continuation
/// pieces carry a `##` prefix.
pub fn segment_word(word: &str, max_chars: usize) -> Vec<String> {
    if word == CLS || word == SEP || max_chars == 0 {
        return vec![word.to_string()];
    }
    let chars: Vec<char> = word.chars().collect();
    chars
        .chunks(max_chars)
        .enumerate()
        .map(|(i, c)| {
            let s: String = c.iter().collect();
            if i == 0 {
                s
            } else {
                format!("##{s}")
            }
        })
        .collect()
}

impl InputSequence {
    /// Word-level view, markers included.
    pub fn tokens(&self) -> &[SeqToken] {
        &self.tokens
    }

    pub fn token_texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Number of paragraph words kept after truncation.
    pub fn paragraph_words(&self) -> usize {
        self.words
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    /// Piece positions belonging to each kept paragraph word.
    pub fn word_pieces(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.words];
        for (pos, piece) in self.pieces.iter().enumerate() {
            if let Role::Word(w) = self.tokens[piece.token].role {
                out[w].push(pos);
            }
        }
        out
    }

    /// Piece positions of appended keyphrase tokens.
    pub fn keyphrase_pieces(&self) -> Vec<usize> {
        self.pieces
            .iter()
            .enumerate()
            .filter(|(_, p)| self.tokens[p.token].role == Role::Keyphrase)
            .map(|(i, _)| i)
            .collect()
    }

    /// 0 for the paragraph segment (CLS, words, first SEP), 1 afterwards.
    pub fn segment_ids(&self) -> Vec<usize> {
        let first_sep = self
            .tokens
            .iter()
            .position(|t| t.role == Role::Sep)
            .unwrap_or(self.tokens.len());
        self.pieces
            .iter()
            .map(|p| usize::from(p.token > first_sep))
            .collect()
    }

    /// Replaces the segmentation of each token with an explicit piece list.
    /// `splits[i]` must be non-empty for every token.
    pub fn with_segmentation(&self, splits: &[Vec<String>]) -> Result<InputSequence> {
        if splits.len() != self.tokens.len() || splits.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument(
                "segmentation must give at least one piece per token".into(),
            ));
        }
        let pieces = splits
            .iter()
            .enumerate()
            .flat_map(|(token, ps)| {
                ps.iter().map(move |text| Piece {
                    text: text.clone(),
                    token,
                })
            })
            .collect();
        Ok(InputSequence {
            tokens: self.tokens.clone(),
            pieces,
            words: self.words,
            truncation: self.truncation,
        })
    }
}

/// Builds the conditioned sequence for `words`, appending `prev_keyphrases` in
/// rank order with a separator before each. When the piece count exceeds
/// `max_len`, keyphrases are dropped from the lowest rank first and then
/// paragraph words from the tail.
pub fn build_sequence(
    words: &[&str],
    prev_keyphrases: &[String],
    max_len: usize,
    max_piece_chars: usize,
) -> Result<InputSequence> {
    if words.is_empty() {
        return Err(Error::Empty("paragraph has no words"));
    }
    let pieces_of = |w: &str| segment_word(w, max_piece_chars).len();
    let phrases: Vec<Vec<&str>> = prev_keyphrases
        .iter()
        .map(|k| k.split_whitespace().collect::<Vec<_>>())
        .filter(|k| !k.is_empty())
        .collect();

    let mut word_cost: Vec<usize> = words.iter().map(|w| pieces_of(w)).collect();
    let phrase_cost: Vec<usize> = phrases
        .iter()
        .map(|k| 1 + k.iter().map(|w| pieces_of(w)).sum::<usize>())
        .collect();

    let mut kept_words = words.len();
    let mut kept_phrases = phrases.len();
    let mut total = 2 + word_cost.iter().sum::<usize>() + phrase_cost.iter().sum::<usize>();
    // the trailing SEP after the paragraph doubles as the first keyphrase separator
    if kept_phrases > 0 {
        total -= 1;
    }
    while total > max_len && kept_phrases > 0 {
        kept_phrases -= 1;
        total -= phrase_cost[kept_phrases];
        if kept_phrases == 0 {
            total += 1;
        }
    }
    while total > max_len && kept_words > 1 {
        kept_words -= 1;
        total -= word_cost[kept_words];
    }
    if total > max_len {
        return Err(Error::InvalidArgument(format!(
            "max_sequence_length {max_len} cannot hold a single word"
        )));
    }
    word_cost.truncate(kept_words);

    let mut tokens = vec![SeqToken {
        text: CLS.into(),
        role: Role::Cls,
    }];
    for (i, w) in words[..kept_words].iter().enumerate() {
        tokens.push(SeqToken {
            text: (*w).to_string(),
            role: Role::Word(i),
        });
    }
    tokens.push(SeqToken {
        text: SEP.into(),
        role: Role::Sep,
    });
    for (i, phrase) in phrases[..kept_phrases].iter().enumerate() {
        if i > 0 {
            tokens.push(SeqToken {
                text: SEP.into(),
                role: Role::Sep,
            });
        }
        for w in phrase {
            tokens.push(SeqToken {
                text: (*w).to_string(),
                role: Role::Keyphrase,
            });
        }
    }

    let pieces = tokens
        .iter()
        .enumerate()
        .flat_map(|(token, t)| {
            segment_word(&t.text, max_piece_chars)
                .into_iter()
                .map(move |text| Piece { text, token })
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(pieces.len(), total);

    Ok(InputSequence {
        tokens,
        pieces,
        words: kept_words,
        truncation: Truncation {
            dropped_keyphrases: phrases.len() - kept_phrases,
            dropped_words: words.len() - kept_words,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(seq: &InputSequence) -> Vec<&str> {
        seq.token_texts()
    }

    #[test]
    fn conditioned_sequence_layout() {
        let s = build_sequence(&["a", "b"], &["c d".into()], 64, 8).unwrap();
        assert_eq!(texts(&s), [CLS, "a", "b", SEP, "c", "d"]);

        let s = build_sequence(&["a"], &[], 64, 8).unwrap();
        assert_eq!(texts(&s), [CLS, "a", SEP]);

        let s = build_sequence(&["a"], &["x".into(), "y".into()], 64, 8).unwrap();
        assert_eq!(texts(&s), [CLS, "a", SEP, "x", SEP, "y"]);
        assert_eq!(s.segment_ids(), [0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn empty_paragraph_is_an_error() {
        assert!(matches!(build_sequence(&[], &[], 8, 8), Err(Error::Empty(_))));
    }

    #[test]
    fn truncates_keyphrases_before_words() {
        let prev: Vec<String> = vec!["x".into(), "y z".into()];
        // full length: CLS a b SEP x SEP y z = 8
        let s = build_sequence(&["a", "b"], &prev, 8, 8).unwrap();
        assert!(!s.truncation().any());
        let s = build_sequence(&["a", "b"], &prev, 7, 8).unwrap();
        assert_eq!(texts(&s), [CLS, "a", "b", SEP, "x"]);
        assert_eq!(s.truncation().dropped_keyphrases, 1);
        let s = build_sequence(&["a", "b"], &prev, 4, 8).unwrap();
        assert_eq!(texts(&s), [CLS, "a", "b", SEP]);
        let s = build_sequence(&["a", "b"], &prev, 3, 8).unwrap();
        assert_eq!(texts(&s), [CLS, "a", SEP]);
        assert_eq!(s.paragraph_words(), 1);
        assert_eq!(
            s.truncation(),
            Truncation {
                dropped_keyphrases: 2,
                dropped_words: 1
            }
        );
        assert!(build_sequence(&["a"], &[], 2, 8).is_err());
    }

    #[test]
    fn long_words_split_into_pieces() {
        assert_eq!(segment_word("background", 4), ["back", "##grou", "##nd"]);
        let s = build_sequence(&["background", "x"], &[], 64, 4).unwrap();
        assert_eq!(s.pieces().len(), 6);
        assert_eq!(s.word_pieces(), vec![vec![1, 2, 3], vec![4]]);
    }
}

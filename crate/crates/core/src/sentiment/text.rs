//! Tokenisation, word vocabulary and label handling.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::SentimentError;

pub const UNK: &str = "<unk>";
pub const URL: &str = "<url>";
pub const USER: &str = "<user>";
pub const NUMBER: &str = "<number>";
pub const UNK_INDEX: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative,
    Neutral,
    Positive,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [Self::Negative, Self::Neutral, Self::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Negative => "negative",
            Self::Neutral => "neutral",
            Self::Positive => "positive",
        }
    }
}

impl std::fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SentimentLabel {
    type Err = SentimentError;

    /// Accepts class names or 5-point scores in `-2..=2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "negative" => Ok(Self::Negative),
            "neutral" => Ok(Self::Neutral),
            "positive" => Ok(Self::Positive),
            other => {
                // Accept the Unicode minus sign as well as '-'.
                let normalized = other.replace('\u{2212}', "-");
                let raw: i8 = normalized.parse().map_err(|_| SentimentError::BadLabel(t.to_string()))?;
                collapse_label(raw)
            }
        }
    }
}

/// Maps a 5-point polarity score onto three classes by its sign.
pub fn collapse_label(raw: i8) -> Result<SentimentLabel, SentimentError> {
    match raw {
        -2 | -1 => Ok(SentimentLabel::Negative),
        0 => Ok(SentimentLabel::Neutral),
        1 | 2 => Ok(SentimentLabel::Positive),
        other => Err(SentimentError::BadLabel(other.to_string())),
    }
}

fn is_url(chunk: &str) -> bool {
    let lower = chunk.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

fn is_number(word: &str) -> bool {
    word.chars().next().is_some_and(|c| c.is_ascii_digit())
        && word.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',')
}

/// Splits text into lowercase tokens.
///
/// URLs become `<url>`, `@handles` become `<user>`, numbers become
/// `<number>`, `#` is dropped, and every other non-alphanumeric character
/// is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if is_url(chunk) {
            out.push(URL.to_string());
            continue;
        }
        if let Some(handle) = chunk.strip_prefix('@') {
            if !handle.is_empty() && handle.chars().all(|c| c.is_alphanumeric() || c == '_') {
                out.push(USER.to_string());
                continue;
            }
        }
        let mut word = String::new();
        let chars: Vec<char> = chunk.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let inside_number = (c == '.' || c == ',')
                && is_number(&word)
                && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
            if c.is_alphanumeric() || c == '_' || inside_number {
                word.extend(c.to_lowercase());
            } else {
                flush_word(&mut word, &mut out);
                if c != '#' {
                    out.extend(std::iter::once(c.to_lowercase().collect::<String>()));
                }
            }
            i += 1;
        }
        flush_word(&mut word, &mut out);
    }
    out
}

fn flush_word(word: &mut String, out: &mut Vec<String>) {
    if word.is_empty() {
        return;
    }
    if is_number(word) {
        out.push(NUMBER.to_string());
    } else {
        out.push(std::mem::take(word));
    }
    word.clear();
}

/// Word-to-index table. Index 0 is always the unknown-word token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from token streams. Words seen at least
    /// `min_count` times are kept, ordered by descending count and then
    /// alphabetically.
    pub fn build<'a, I, T>(token_streams: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a String>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for stream in token_streams {
            for tok in stream {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(w, c)| c >= min_count.max(1) && w != UNK).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_words(std::iter::once(UNK.to_string()).chain(kept.into_iter().map(|(w, _)| w.to_string())).collect())
            .expect("unk is first")
    }

    /// Rebuilds a vocabulary from its ordered word list (index = position).
    pub fn from_words(words: Vec<String>) -> Result<Self, SentimentError> {
        if words.first().map(String::as_str) != Some(UNK) {
            return Err(SentimentError::Format(format!("vocabulary must start with {UNK}")));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(SentimentError::Format(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn lookup(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_INDEX)
    }
}

/// Token indices for one piece of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    pub raw: String,
}

/// Tokenises `text` against `vocab`; empty input yields a single unknown token.
pub fn preprocess(text: &str, vocab: &Vocab) -> TokenSequence {
    let mut tokens: Vec<usize> = tokenize(text).iter().map(|t| vocab.lookup(t)).collect();
    if tokens.is_empty() {
        tokens.push(UNK_INDEX);
    }
    TokenSequence { tokens, raw: text.to_string() }
}

/// The phrase a target-level prediction is about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectSpan {
    pub text: String,
    pub tokens: TokenSequence,
}

impl AspectSpan {
    pub fn new(text: &str, vocab: &Vocab) -> Result<Self, SentimentError> {
        if text.trim().is_empty() {
            return Err(SentimentError::EmptyAspect);
        }
        Ok(Self { text: text.to_string(), tokens: preprocess(text, vocab) })
    }
}

/// Text rewriting applied before tokenisation, such as machine translation.
pub trait TextTransform: Send + Sync {
    fn apply(&self, text: &str) -> String;
}

/// Leaves text unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl TextTransform for Identity {
    fn apply(&self, text: &str) -> String {
        text.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn sentence_with_dash_and_period() {
        assert_eq!(
            toks("Elbphilharmonie - What a beautiful building."),
            ["elbphilharmonie", "-", "what", "a", "beautiful", "building", "."]
        );
    }

    #[test]
    fn hashtag_and_url() {
        assert_eq!(toks("#Hamburg http://x.co"), ["hamburg", "<url>"]);
    }

    #[test]
    fn users_numbers_and_punctuation() {
        assert_eq!(
            toks("@elphi_fan paid 866 million, 77.5 estimated!! :-)"),
            ["<user>", "paid", "<number>", "million", ",", "<number>", "estimated", "!", "!", ":", "-", ")"]
        );
        assert_eq!(toks("Hamburg's a5000"), ["hamburg", "'", "s", "a5000"]);
    }

    #[test]
    fn empty_text_is_a_single_unknown() {
        let v = Vocab::build([toks("hello world").iter()], 1);
        assert_eq!(preprocess("", &v).tokens, [UNK_INDEX]);
        assert_eq!(preprocess("  # ", &v).tokens, [UNK_INDEX]);
    }

    #[test]
    fn out_of_vocabulary_maps_to_unknown() {
        let v = Vocab::build([toks("the hall the hall the").iter()], 1);
        assert_eq!(v.words(), [UNK, "the", "hall"]);
        assert_eq!(preprocess("the roof", &v).tokens, [1, UNK_INDEX]);
        let pruned = Vocab::build([toks("the hall the").iter()], 2);
        assert_eq!(pruned.words(), [UNK, "the"]);
    }

    #[test]
    fn labels_collapse_by_sign() {
        assert_eq!(collapse_label(2).unwrap(), SentimentLabel::Positive);
        assert_eq!(collapse_label(1).unwrap(), SentimentLabel::Positive);
        assert_eq!(collapse_label(0).unwrap(), SentimentLabel::Neutral);
        assert_eq!(collapse_label(-1).unwrap(), SentimentLabel::Negative);
        assert_eq!(collapse_label(-2).unwrap(), SentimentLabel::Negative);
        assert!(collapse_label(3).is_err());
        assert!(collapse_label(-3).is_err());
    }

    #[test]
    fn collapse_is_surjective_and_monotone() {
        let mapped: Vec<_> = (-2..=2).map(|r| collapse_label(r).unwrap()).collect();
        for w in mapped.windows(2) {
            assert!(w[0] <= w[1]);
        }
        for l in SentimentLabel::ALL {
            assert!(mapped.contains(&l));
        }
    }

    #[test]
    fn labels_parse_from_names_and_scores() {
        assert_eq!("Positive".parse::<SentimentLabel>().unwrap(), SentimentLabel::Positive);
        assert_eq!("-2".parse::<SentimentLabel>().unwrap(), SentimentLabel::Negative);
        assert_eq!("\u{2212}1".parse::<SentimentLabel>().unwrap(), SentimentLabel::Negative);
        assert!("great".parse::<SentimentLabel>().is_err());
    }

    #[test]
    fn blank_aspect_is_rejected() {
        let v = Vocab::build([toks("x").iter()], 1);
        assert!(matches!(AspectSpan::new("   ", &v), Err(SentimentError::EmptyAspect)));
        assert_eq!(AspectSpan::new("zzz", &v).unwrap().tokens.tokens, [UNK_INDEX]);
    }
}

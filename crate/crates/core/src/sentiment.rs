//! Lexicon sentiment scoring with valence shifters.
//!
//! Each polarized word contributes its polarity, flipped once per negator and
//! scaled by amplifiers/de-amplifiers found in a small window around it. A
//! sentence's score is the sum of contributions divided by the square root
//! of its length; an article's score is the mean over its sentences.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::relevance::tokenize_words;

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("`{0}` appears in more than one shifter class or in the lexicon")]
    Overlap(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    polarities: BTreeMap<String, f64>,
}

impl Lexicon {
    /// Builds a lexicon, lowercasing tokens and dropping zero polarities.
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let polarities = entries
            .into_iter()
            .filter(|(_, p)| *p != 0.0)
            .map(|(t, p)| (t.as_ref().trim().to_lowercase(), p))
            .collect();
        Lexicon { polarities }
    }

    /// `token<TAB>polarity` lines; blank lines and `#` comments are ignored.
    pub fn parse_tsv(text: &str) -> Result<Self, SentimentError> {
        let mut entries = Vec::new();
        for (i, line) in data_lines(text) {
            let (tok, val) = split_pair(line, i)?;
            let p: f64 = val.parse().map_err(|_| SentimentError::Parse {
                line: i,
                reason: format!("bad polarity `{val}`"),
            })?;
            if !p.is_finite() {
                return Err(SentimentError::Parse {
                    line: i,
                    reason: format!("non-finite polarity `{val}`"),
                });
            }
            entries.push((tok.to_owned(), p));
        }
        Ok(Lexicon::new(entries))
    }

    pub fn polarity(&self, token: &str) -> f64 {
        self.polarities.get(token).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.polarities.contains_key(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.polarities.iter().map(|(t, p)| (t.as_str(), *p))
    }

    pub fn max_abs(&self) -> f64 {
        self.polarities.values().fold(0.0, |m, p| m.max(p.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShifterClass {
    Negator,
    Amplifier,
    DeAmplifier,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShifterTable {
    pub negators: BTreeSet<String>,
    pub amplifiers: BTreeSet<String>,
    pub de_amplifiers: BTreeSet<String>,
}

impl ShifterTable {
    /// `token<TAB>class` lines with class in {negator, amplifier, deamplifier}.
    pub fn parse_tsv(text: &str) -> Result<Self, SentimentError> {
        let mut table = ShifterTable::default();
        for (i, line) in data_lines(text) {
            let (tok, class) = split_pair(line, i)?;
            let tok = tok.to_lowercase();
            let set = match class {
                "negator" => &mut table.negators,
                "amplifier" => &mut table.amplifiers,
                "deamplifier" | "de-amplifier" | "de_amplifier" => &mut table.de_amplifiers,
                other => {
                    return Err(SentimentError::Parse {
                        line: i,
                        reason: format!("unknown shifter class `{other}`"),
                    })
                }
            };
            set.insert(tok);
        }
        table.check_disjoint(None)?;
        Ok(table)
    }

    pub fn class_of(&self, token: &str) -> Option<ShifterClass> {
        if self.negators.contains(token) {
            Some(ShifterClass::Negator)
        } else if self.amplifiers.contains(token) {
            Some(ShifterClass::Amplifier)
        } else if self.de_amplifiers.contains(token) {
            Some(ShifterClass::DeAmplifier)
        } else {
            None
        }
    }

    /// The three sets must be pairwise disjoint and, when a lexicon is given,
    /// disjoint from its tokens.
    pub fn check_disjoint(&self, lexicon: Option<&Lexicon>) -> Result<(), SentimentError> {
        let mut seen = BTreeSet::new();
        for tok in self
            .negators
            .iter()
            .chain(&self.amplifiers)
            .chain(&self.de_amplifiers)
        {
            if !seen.insert(tok) || lexicon.is_some_and(|l| l.contains(tok)) {
                return Err(SentimentError::Overlap(tok.clone()));
            }
        }
        Ok(())
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn split_pair(line: &str, i: usize) -> Result<(&str, &str), SentimentError> {
    let (a, b) = line.split_once('\t').ok_or_else(|| SentimentError::Parse {
        line: i,
        reason: "expected two tab-separated columns".into(),
    })?;
    let (a, b) = (a.trim(), b.trim());
    if a.is_empty() || b.is_empty() || b.contains('\t') {
        return Err(SentimentError::Parse {
            line: i,
            reason: "expected two non-empty tab-separated columns".into(),
        });
    }
    Ok((a, b))
}

/// Tunable constants of the scorer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringParams {
    pub window_before: usize,
    pub window_after: usize,
    pub amplifier_weight: f64,
    pub floor: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        ScoringParams {
            window_before: 4,
            window_after: 2,
            amplifier_weight: 0.8,
            floor: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentimentResult {
    pub article_score: f64,
    pub sentence_scores: Vec<f64>,
    pub polarized_token_count: usize,
}

/// Splits text into sentences on `.`, `!` or `?` followed by whitespace or
/// end of text, tokenizing each one. Length-1 tokens are kept; empty
/// sentences are dropped.
pub fn segment_sentences(text: &str) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
            if at_boundary {
                sentences.push(&text[start..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
    }
    sentences.push(&text[start..]);
    sentences
        .into_iter()
        .map(|s| tokenize_words(s, 1))
        .filter(|toks| !toks.is_empty())
        .collect()
}

/// Scores one tokenized sentence. Returns 0 for an empty sentence.
pub fn score_sentence(
    tokens: &[String],
    lexicon: &Lexicon,
    shifters: &ShifterTable,
    params: &ScoringParams,
) -> f64 {
    sentence_contributions(tokens, lexicon, shifters, params).0
}

fn sentence_contributions(
    tokens: &[String],
    lexicon: &Lexicon,
    shifters: &ShifterTable,
    params: &ScoringParams,
) -> (f64, usize) {
    if tokens.is_empty() {
        return (0.0, 0);
    }
    let mut sum = 0.0;
    let mut polarized = 0;
    for (i, tok) in tokens.iter().enumerate() {
        let p = lexicon.polarity(tok);
        if p == 0.0 {
            continue;
        }
        polarized += 1;
        let lo = i.saturating_sub(params.window_before);
        let hi = (i + params.window_after).min(tokens.len() - 1);
        let (mut neg, mut amp, mut deamp) = (0u32, 0i32, 0i32);
        for ctx in tokens[lo..i].iter().chain(&tokens[i + 1..=hi]) {
            match shifters.class_of(ctx) {
                Some(ShifterClass::Negator) => neg += 1,
                Some(ShifterClass::Amplifier) => amp += 1,
                Some(ShifterClass::DeAmplifier) => deamp += 1,
                None => {}
            }
        }
        let sign = if neg % 2 == 0 { 1.0 } else { -1.0 };
        let scale = (1.0 + params.amplifier_weight * f64::from(amp - deamp)).max(params.floor);
        sum += p * sign * scale;
    }
    (sum / (tokens.len() as f64).sqrt(), polarized)
}

/// Mean sentence score of an article.
pub fn score_article(
    text: &str,
    lexicon: &Lexicon,
    shifters: &ShifterTable,
    params: &ScoringParams,
) -> SentimentResult {
    let mut sentence_scores = Vec::new();
    let mut polarized_token_count = 0;
    for sentence in segment_sentences(text) {
        let (score, n) = sentence_contributions(&sentence, lexicon, shifters, params);
        sentence_scores.push(score);
        polarized_token_count += n;
    }
    let article_score = if sentence_scores.is_empty() {
        0.0
    } else {
        sentence_scores.iter().sum::<f64>() / sentence_scores.len() as f64
    };
    SentimentResult {
        article_score,
        sentence_scores,
        polarized_token_count,
    }
}

/// Lexicon and shifters bundled with the crate.
pub fn default_lexicon() -> Lexicon {
    Lexicon::parse_tsv(include_str!("../data/lexicon.tsv")).expect("bundled lexicon parses")
}

pub fn default_shifters() -> ShifterTable {
    ShifterTable::parse_tsv(include_str!("../data/shifters.tsv")).expect("bundled shifters parse")
}

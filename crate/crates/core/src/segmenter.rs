//! Scoring units at sentence or token-budgeted chunk granularity.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

/// Combined input limit shared by both supported NLI backends.
pub const MODEL_TOKEN_LIMIT: usize = 512;

const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One unit per sentence.
    Sentence,
    /// Sentences greedily packed into chunks under the premise budget.
    Document,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Sentence => "sentence",
            Granularity::Document => "document",
        }
    }

    /// Column label used in metric tables ("sent" / "doc").
    pub fn short(self) -> &'static str {
        match self {
            Granularity::Sentence => "sent",
            Granularity::Document => "doc",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" | "sent" => Ok(Granularity::Sentence),
            "document" | "doc" | "chunk" => Ok(Granularity::Document),
            other => Err(Error::BackendConfig(format!(
                "unknown granularity `{other}` (expected sentence|document)"
            ))),
        }
    }
}

/// Counts and truncates text in the token space of a scoring backend.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> Result<usize>;

    /// Longest token-prefix of `text` holding at most `max_tokens` tokens.
    fn truncate(&self, text: &str, max_tokens: usize) -> Result<String>;

    /// Separator and control tokens added around a premise/hypothesis pair.
    fn pair_special_tokens(&self) -> usize;
}

/// Whitespace tokenizer used by the mock backends and tests.
#[derive(Debug, Clone, Copy)]
pub struct WhitespaceTokenizer {
    pub special_tokens: usize,
}

impl Default for WhitespaceTokenizer {
    fn default() -> Self {
        Self { special_tokens: 3 }
    }
}

impl TokenCounter for WhitespaceTokenizer {
    fn count(&self, text: &str) -> Result<usize> {
        Ok(text.split_whitespace().count())
    }

    fn truncate(&self, text: &str, max_tokens: usize) -> Result<String> {
        if max_tokens == 0 {
            return Ok(String::new());
        }
        let mut seen = 0;
        let mut in_token = false;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if in_token {
                    in_token = false;
                    if seen == max_tokens {
                        return Ok(text[..i].trim_start().to_string());
                    }
                }
            } else if !in_token {
                in_token = true;
                seen += 1;
            }
        }
        Ok(text.trim().to_string())
    }

    fn pair_special_tokens(&self) -> usize {
        self.special_tokens
    }
}

pub fn count_tokens(text: &str, tokenizer: &dyn TokenCounter) -> Result<usize> {
    tokenizer.count(text)
}

/// Token budget for the premise side of an NLI input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub model_limit: usize,
    pub hypothesis_tokens: usize,
    pub special_tokens: usize,
    pub premise_budget: usize,
}

impl TokenBudget {
    pub fn new(model_limit: usize, hypothesis_tokens: usize, special_tokens: usize) -> Result<Self> {
        let used = hypothesis_tokens.saturating_add(special_tokens);
        if used >= model_limit {
            return Err(Error::InvalidBudget(format!(
                "query ({hypothesis_tokens} tokens) and {special_tokens} special tokens leave no room under {model_limit}"
            )));
        }
        Ok(Self {
            model_limit,
            hypothesis_tokens,
            special_tokens,
            premise_budget: model_limit - used,
        })
    }

    /// Budget left for a premise paired with `hypothesis`.
    pub fn for_hypothesis(
        hypothesis: &str,
        tokenizer: &dyn TokenCounter,
        model_limit: usize,
    ) -> Result<Self> {
        Self::new(
            model_limit,
            tokenizer.count(hypothesis)?,
            tokenizer.pair_special_tokens(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringUnit {
    pub doc_id: String,
    pub unit_index: usize,
    pub text: String,
    pub granularity: Granularity,
    pub token_count: usize,
    /// Sentences covered by this unit, `first_sentence..end_sentence`.
    pub first_sentence: usize,
    pub end_sentence: usize,
    pub truncated: bool,
}

/// Abbreviations whose period never closes a sentence.
#[derive(Debug, Clone)]
pub struct Abbreviations(HashSet<String>);

impl Abbreviations {
    /// Parses one abbreviation per line; blank lines and `#` comments skipped.
    pub fn parse(list: &str) -> Self {
        Self(
            list.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&raw))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for Abbreviations {
    fn default() -> Self {
        Self::parse(DEFAULT_ABBREVIATIONS)
    }
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201d}' | '\u{2019}' | ')' | ']')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201c}' | '\u{2018}' | '(' | '[')
}

/// Deterministic rule-based sentence splitter.
///
/// A sentence ends after a run of `.`, `?` or `!` (plus closing quotes or
/// brackets) followed by whitespace, unless the boundary sits inside a
/// double-quoted span, the period closes a listed abbreviation or a single
/// capital initial, or the next word starts lowercase.
#[derive(Debug, Clone, Default)]
pub struct SentenceSplitter {
    abbreviations: Abbreviations,
}

impl SentenceSplitter {
    pub fn new(abbreviations: Abbreviations) -> Self {
        Self { abbreviations }
    }

    pub fn split(&self, text: &str) -> Vec<String> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::new();
        let mut start = 0usize;
        let mut in_quote = false;
        let mut i = 0;
        while i < chars.len() {
            let (pos, c) = chars[i];
            match c {
                '"' => in_quote = !in_quote,
                '\u{201c}' => in_quote = true,
                '\u{201d}' => in_quote = false,
                '\n' if i + 1 < chars.len() && chars[i + 1].1 == '\n' => in_quote = false,
                _ => {}
            }
            if !matches!(c, '.' | '?' | '!') {
                i += 1;
                continue;
            }
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '.' | '?' | '!') {
                j += 1;
            }
            while j < chars.len() && is_closer(chars[j].1) {
                match chars[j].1 {
                    '"' | '\u{201d}' => in_quote = false,
                    _ => {}
                }
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
            let at_gap = j == chars.len() || chars[j].1.is_whitespace();
            if !at_gap || in_quote {
                i = j;
                continue;
            }
            let single_period =
                c == '.' && chars[i + 1..j].iter().all(|&(_, ch)| is_closer(ch));
            if single_period && self.ends_with_abbreviation(&text[start..pos + 1]) {
                i = j;
                continue;
            }
            let next_word = chars[j..]
                .iter()
                .map(|&(_, ch)| ch)
                .find(|ch| !ch.is_whitespace() && !is_opener(*ch));
            if next_word.is_some_and(char::is_lowercase) {
                i = j;
                continue;
            }
            let sentence = text[start..end].trim();
            if !sentence.is_empty() {
                out.push(sentence.to_string());
            }
            start = end;
            i = j;
        }
        let rest = text[start..].trim();
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
        out
    }

    fn ends_with_abbreviation(&self, upto_period: &str) -> bool {
        let word = upto_period
            .rsplit(|c: char| c.is_whitespace())
            .next()
            .unwrap_or("")
            .trim_start_matches(is_opener);
        if self.abbreviations.contains(word) {
            return true;
        }
        // single capital initial, "J."
        let mut cs = word.chars();
        matches!((cs.next(), cs.next(), cs.next()), (Some(a), Some('.'), None) if a.is_uppercase())
    }
}

/// Produces scoring units for documents.
#[derive(Debug, Clone, Default)]
pub struct Segmenter {
    splitter: SentenceSplitter,
}

impl Segmenter {
    pub fn new(splitter: SentenceSplitter) -> Self {
        Self { splitter }
    }

    /// Dataset-provided sentences when present, otherwise the rule-based
    /// split of the text. Whitespace-only sentences are dropped.
    pub fn sentences(&self, doc: &Document) -> Result<Vec<String>> {
        let sentences: Vec<String> = match &doc.sentences {
            Some(provided) if provided.iter().any(|s| !s.trim().is_empty()) => provided
                .iter()
                .filter(|s| !s.trim().is_empty())
                .cloned()
                .collect(),
            _ => self.splitter.split(&doc.text),
        };
        if sentences.is_empty() {
            return Err(Error::EmptyDocument(doc.doc_id.clone()));
        }
        Ok(sentences)
    }

    /// One unit per sentence; sentences over the budget keep their token prefix.
    pub fn segment_sentences(
        &self,
        doc: &Document,
        budget: &TokenBudget,
        tokenizer: &dyn TokenCounter,
    ) -> Result<Vec<ScoringUnit>> {
        self.sentences(doc)?
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let (text, token_count, truncated) = fit(s, budget.premise_budget, tokenizer)?;
                Ok(ScoringUnit {
                    doc_id: doc.doc_id.clone(),
                    unit_index: i,
                    text,
                    granularity: Granularity::Sentence,
                    token_count,
                    first_sentence: i,
                    end_sentence: i + 1,
                    truncated,
                })
            })
            .collect()
    }

    /// Greedy packing of consecutive sentences under the premise budget.
    ///
    /// A sentence is appended to the open chunk while the joined chunk text
    /// stays within budget; otherwise the chunk is closed and a new one
    /// opened. A sentence that alone exceeds the budget becomes its own
    /// unit, truncated to its token prefix.
    pub fn chunk_document(
        &self,
        doc: &Document,
        budget: &TokenBudget,
        tokenizer: &dyn TokenCounter,
    ) -> Result<Vec<ScoringUnit>> {
        let limit = budget.premise_budget;
        let sentences = self.sentences(doc)?;
        let mut units = Vec::new();
        let mut open: Option<(usize, String, usize)> = None; // (first, text, tokens)

        let push = |units: &mut Vec<ScoringUnit>,
                    first: usize,
                    end: usize,
                    text: String,
                    token_count: usize,
                    truncated: bool| {
            units.push(ScoringUnit {
                doc_id: doc.doc_id.clone(),
                unit_index: units.len(),
                text,
                granularity: Granularity::Document,
                token_count,
                first_sentence: first,
                end_sentence: end,
                truncated,
            });
        };

        for (i, sentence) in sentences.iter().enumerate() {
            let own = tokenizer.count(sentence)?;
            if own > limit {
                if let Some((first, text, tokens)) = open.take() {
                    push(&mut units, first, i, text, tokens, false);
                }
                let (text, tokens, truncated) = fit(sentence.clone(), limit, tokenizer)?;
                push(&mut units, i, i + 1, text, tokens, truncated);
                continue;
            }
            open = match open.take() {
                None => Some((i, sentence.clone(), own)),
                Some((first, text, tokens)) => {
                    let joined = format!("{text} {sentence}");
                    let n = tokenizer.count(&joined)?;
                    if n <= limit {
                        Some((first, joined, n))
                    } else {
                        push(&mut units, first, i, text, tokens, false);
                        Some((i, sentence.clone(), own))
                    }
                }
            };
        }
        if let Some((first, text, tokens)) = open {
            push(&mut units, first, sentences.len(), text, tokens, false);
        }
        Ok(units)
    }

    pub fn units(
        &self,
        doc: &Document,
        granularity: Granularity,
        budget: &TokenBudget,
        tokenizer: &dyn TokenCounter,
    ) -> Result<Vec<ScoringUnit>> {
        match granularity {
            Granularity::Sentence => self.segment_sentences(doc, budget, tokenizer),
            Granularity::Document => self.chunk_document(doc, budget, tokenizer),
        }
    }
}

/// Truncates `text` to at most `limit` tokens, re-checking the count since
/// subword tokenizers may not re-tokenize a prefix identically.
fn fit(text: String, limit: usize, tokenizer: &dyn TokenCounter) -> Result<(String, usize, bool)> {
    let n = tokenizer.count(&text)?;
    if n <= limit {
        return Ok((text, n, false));
    }
    let mut target = limit;
    loop {
        let cut = tokenizer.truncate(&text, target)?;
        let m = tokenizer.count(&cut)?;
        if m <= limit {
            return Ok((cut, m, true));
        }
        if target == 0 {
            return Err(Error::Tokenizer(format!(
                "cannot truncate text to {limit} tokens"
            )));
        }
        target -= 1;
    }
}

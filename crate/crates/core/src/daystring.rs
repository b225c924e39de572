//! Day discretization: modal location per fixed window, text rendering, and a
//! word-level tokenizer over a closed location vocabulary.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DayRecord;
use crate::seed::{self, Rng};

pub const NOWHERE: &str = "Nowhere";
pub const PAD: &str = "[PAD]";
pub const WINDOW_MINUTES: u32 = 20;
pub const MINUTES_PER_DAY: u32 = 24 * 60;
/// Windows per day at the default window size.
pub const WINDOWS_PER_DAY: usize = (MINUTES_PER_DAY / WINDOW_MINUTES) as usize;
/// Longest token sequence the encoder accepts.
pub const MAX_TOKENS: usize = 255;

pub const DEFAULT_LOCATIONS: [&str; 7] = ["Lounge", "Kitchen", "Hallway", "Bedroom", "Bathroom", "Bed", NOWHERE];

/// Ordered data tokens plus a reserved padding id (`len()` of the data tokens).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new(DEFAULT_LOCATIONS.iter().map(|s| s.to_string())).expect("default vocabulary is valid")
    }
}

impl Vocabulary {
    /// Builds a vocabulary from data tokens. `Nowhere` is appended when absent.
    pub fn new(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut list: Vec<String> = Vec::new();
        let mut ids = HashMap::new();
        for t in tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!("invalid vocabulary token {t:?}")));
            }
            if t == PAD {
                return Err(Error::InvalidConfig(format!("{PAD} is reserved")));
            }
            if ids.insert(t.clone(), list.len()).is_some() {
                return Err(Error::Duplicate(t));
            }
            list.push(t);
        }
        if !ids.contains_key(NOWHERE) {
            ids.insert(NOWHERE.to_string(), list.len());
            list.push(NOWHERE.to_string());
        }
        Ok(Self { tokens: list, ids })
    }

    /// Number of ids including PAD; this is the encoder's `vocab_size`.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn data_tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> usize {
        self.tokens.len()
    }

    pub fn nowhere_id(&self) -> usize {
        self.ids[NOWHERE]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        if id == self.pad_id() {
            Some(PAD)
        } else {
            self.tokens.get(id).map(String::as_str)
        }
    }

    pub fn is_data_token(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }
}

/// A day reduced to one token per window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub participant_id: String,
    pub date: NaiveDate,
    pub tokens: Vec<String>,
    pub window_minutes: u32,
}

impl TokenSequence {
    pub fn ids(&self, vocab: &Vocabulary) -> Result<Vec<usize>> {
        self.tokens
            .iter()
            .map(|t| vocab.id(t).ok_or_else(|| Error::UnknownToken { token: t.clone() }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DayString {
    pub text: String,
}

impl DayString {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

/// Per-window location tallies, indexed `[window][token id]`.
pub fn window_counts(day: &DayRecord, vocab: &Vocabulary, window_minutes: u32) -> Result<Vec<Vec<u32>>> {
    if window_minutes == 0 || MINUTES_PER_DAY % window_minutes != 0 {
        return Err(Error::InvalidConfig(format!("window of {window_minutes} minutes does not divide a day")));
    }
    let n_windows = (MINUTES_PER_DAY / window_minutes) as usize;
    let mut counts = vec![vec![0u32; vocab.tokens.len()]; n_windows];
    let start = day.start();
    for e in &day.events {
        let id = vocab.id(&e.location).ok_or_else(|| Error::LocationOutsideVocabulary {
            participant_id: e.participant_id.clone(),
            timestamp: e.timestamp,
            location: e.location.clone(),
        })?;
        let offset = (e.timestamp - start).num_seconds();
        if !(0..i64::from(MINUTES_PER_DAY) * 60).contains(&offset) {
            return Err(Error::InvalidConfig(format!(
                "event at {} falls outside day {}",
                e.timestamp, day.date
            )));
        }
        let window = (offset / 60) as usize / window_minutes as usize;
        counts[window][id] += 1;
    }
    Ok(counts)
}

/// Reduces a day to its modal location per 20-minute window.
///
/// Windows with no readings become `Nowhere`. When several locations share the
/// top count, one is drawn uniformly: the tied ids are taken in ascending id
/// order and `rng.random_range(0..ties)` picks the index. The rng is consumed
/// only on tie windows.
pub fn aggregate_day(day: &DayRecord, vocab: &Vocabulary, rng: &mut Rng) -> Result<TokenSequence> {
    aggregate_day_with_window(day, vocab, WINDOW_MINUTES, rng)
}

pub fn aggregate_day_with_window(
    day: &DayRecord,
    vocab: &Vocabulary,
    window_minutes: u32,
    rng: &mut Rng,
) -> Result<TokenSequence> {
    let counts = window_counts(day, vocab, window_minutes)?;
    let mut tied = Vec::with_capacity(vocab.tokens.len());
    let tokens = counts
        .iter()
        .map(|window| {
            let max = window.iter().copied().max().unwrap_or(0);
            if max == 0 {
                return NOWHERE.to_string();
            }
            tied.clear();
            tied.extend(window.iter().enumerate().filter(|&(_, &c)| c == max).map(|(id, _)| id));
            let pick = if tied.len() == 1 { tied[0] } else { tied[rng.random_range(0..tied.len())] };
            vocab.tokens[pick].clone()
        })
        .collect();
    Ok(TokenSequence { participant_id: day.participant_id.clone(), date: day.date, tokens, window_minutes })
}

/// Seed for a single day's tie-breaking stream.
pub fn day_seed(seed: u64, participant_id: &str, date: NaiveDate) -> u64 {
    seed::derive_seed(seed, "daystring", &format!("{participant_id}/{date}"))
}

/// Aggregates many days in parallel, each with its own derived rng stream.
pub fn aggregate_days(
    days: &[DayRecord],
    vocab: &Vocabulary,
    window_minutes: u32,
    seed: u64,
) -> Result<Vec<TokenSequence>> {
    days.par_iter()
        .map(|day| {
            let mut rng = seed::rng_from_seed(day_seed(seed, &day.participant_id, day.date));
            aggregate_day_with_window(day, vocab, window_minutes, &mut rng)
        })
        .collect()
}

pub fn render_string(seq: &TokenSequence) -> DayString {
    DayString { text: seq.tokens.join(" ") }
}

/// Maps each whitespace-separated word to its vocabulary id.
pub fn tokenize(s: &DayString, vocab: &Vocabulary) -> Result<Vec<usize>> {
    let ids = s
        .text
        .split_whitespace()
        .map(|w| vocab.id(w).ok_or_else(|| Error::UnknownToken { token: w.to_string() }))
        .collect::<Result<Vec<_>>>()?;
    if ids.len() > MAX_TOKENS {
        return Err(Error::SequenceTooLong { len: ids.len(), max: MAX_TOKENS });
    }
    Ok(ids)
}

/// One line of the day-string corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayStringRecord {
    pub participant_id: String,
    pub date: NaiveDate,
    pub text: String,
}

impl From<&TokenSequence> for DayStringRecord {
    fn from(seq: &TokenSequence) -> Self {
        Self { participant_id: seq.participant_id.clone(), date: seq.date, text: render_string(seq).text }
    }
}

pub fn write_corpus<W: Write>(mut out: W, records: &[DayStringRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<DayStringRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Row { line: i as u64 + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

//! Event and label CSV ingestion, validation, and grouping into days.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::daystring::Vocabulary;
use crate::error::{Error, Result};

pub const EVENT_HEADER: [&str; 3] = ["participant_id", "timestamp", "location"];
pub const LABEL_HEADER: [&str; 3] = ["participant_id", "date", "label"];

/// One timestamped location reading.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SensorEvent {
    pub participant_id: String,
    pub timestamp: DateTime<Utc>,
    pub location: String,
}

impl SensorEvent {
    pub fn new(participant_id: impl Into<String>, timestamp: DateTime<Utc>, location: impl Into<String>) -> Self {
        Self { participant_id: participant_id.into(), timestamp, location: location.into() }
    }

    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

/// All events of one participant on one UTC calendar date, sorted by time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DayRecord {
    pub participant_id: String,
    pub date: NaiveDate,
    pub events: Vec<SensorEvent>,
}

impl DayRecord {
    pub fn empty(participant_id: impl Into<String>, date: NaiveDate) -> Self {
        Self { participant_id: participant_id.into(), date, events: Vec::new() }
    }

    /// Start of the day, 00:00:00 UTC.
    pub fn start(&self) -> DateTime<Utc> {
        self.date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

impl std::str::FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            other => Err(format!("unknown label {other:?} (expected positive or negative)")),
        }
    }
}

/// Per-(participant, date) labels. At most one entry per key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    entries: BTreeMap<(String, NaiveDate), Polarity>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a label. Re-inserting the same polarity is a no-op; a different
    /// polarity for an existing key is a conflict.
    pub fn insert(&mut self, participant_id: impl Into<String>, date: NaiveDate, polarity: Polarity) -> Result<()> {
        let key = (participant_id.into(), date);
        match self.entries.get(&key) {
            Some(&existing) if existing != polarity => {
                Err(Error::LabelConflict { participant_id: key.0, date: key.1 })
            }
            Some(_) => Ok(()),
            None => {
                self.entries.insert(key, polarity);
                Ok(())
            }
        }
    }

    pub fn get(&self, participant_id: &str, date: NaiveDate) -> Option<Polarity> {
        self.entries.get(&(participant_id.to_string(), date)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in (participant_id, date) order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, NaiveDate, Polarity)> {
        self.entries.iter().map(|((p, d), &l)| (p.as_str(), *d, l))
    }
}

fn parse_timestamp(raw: &str) -> std::result::Result<DateTime<Utc>, String> {
    let parsed = DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S").map(|t| t.and_utc()))
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S").map(|t| t.and_utc()))
        .map_err(|_| format!("malformed timestamp {raw:?}"))?;
    Ok(parsed.with_nanosecond(0).expect("zero nanoseconds is valid"))
}

fn check_header(headers: &csv::StringRecord, expected: &[&str; 3]) -> Result<()> {
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(Error::Row {
            line: 1,
            message: format!("expected header {:?}, found {:?}", expected.join(","), found.join(",")),
        });
    }
    Ok(())
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(input)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize, name: &str) -> Result<&'a str> {
    match record.get(idx) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(Error::Row { line: line_of(record), message: format!("missing field {name}") }),
    }
}

/// Parses an event CSV (`participant_id,timestamp,location`). An empty input or
/// a header-only file yields no events.
pub fn parse_events<R: Read>(input: R) -> Result<Vec<SensorEvent>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    check_header(&headers, &EVENT_HEADER)?;
    let mut events = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let participant_id = field(&record, 0, "participant_id")?;
        let timestamp = parse_timestamp(field(&record, 1, "timestamp")?)
            .map_err(|message| Error::Row { line, message })?;
        let location = field(&record, 2, "location")?;
        events.push(SensorEvent::new(participant_id, timestamp, location));
    }
    Ok(events)
}

pub fn write_events<W: Write>(output: W, events: &[SensorEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(output);
    wtr.write_record(EVENT_HEADER)?;
    for e in events {
        wtr.write_record([
            e.participant_id.as_str(),
            &e.timestamp.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            e.location.as_str(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parses a label CSV (`participant_id,date,label`).
pub fn parse_labels<R: Read>(input: R) -> Result<LabelSet> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let mut labels = LabelSet::new();
    if headers.is_empty() {
        return Ok(labels);
    }
    check_header(&headers, &LABEL_HEADER)?;
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let participant_id = field(&record, 0, "participant_id")?;
        let raw_date = field(&record, 1, "date")?;
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|_| Error::Row { line, message: format!("malformed date {raw_date:?}") })?;
        let polarity = field(&record, 2, "label")?
            .parse::<Polarity>()
            .map_err(|message| Error::Row { line, message })?;
        labels.insert(participant_id, date, polarity)?;
    }
    Ok(labels)
}

pub fn write_labels<W: Write>(output: W, labels: &LabelSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(output);
    wtr.write_record(LABEL_HEADER)?;
    for (p, d, l) in labels.iter() {
        wtr.write_record([p, &d.to_string(), l.as_str()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Groups events into one record per observed (participant, date), sorted by
/// key. Events inside a record are sorted by (timestamp, location), so the
/// output does not depend on input order.
pub fn group_days(events: &[SensorEvent]) -> Vec<DayRecord> {
    let mut days: BTreeMap<(&str, NaiveDate), Vec<SensorEvent>> = BTreeMap::new();
    for e in events {
        days.entry((e.participant_id.as_str(), e.date())).or_default().push(e.clone());
    }
    days.into_iter()
        .map(|((participant_id, date), mut events)| {
            events.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.location.cmp(&b.location)));
            DayRecord { participant_id: participant_id.to_string(), date, events }
        })
        .collect()
}

/// Inserts empty records for every missing date between each participant's
/// first and last recorded day. Input must be sorted as `group_days` emits it.
pub fn dense_calendar(days: Vec<DayRecord>) -> Vec<DayRecord> {
    let mut out: Vec<DayRecord> = Vec::with_capacity(days.len());
    for day in days {
        if let Some(prev) = out.last() {
            if prev.participant_id == day.participant_id {
                let mut next = prev.date + Duration::days(1);
                while next < day.date {
                    out.push(DayRecord::empty(day.participant_id.clone(), next));
                    next += Duration::days(1);
                }
            }
        }
        out.push(day);
    }
    out
}

#[derive(Debug, Clone)]
pub struct ValidationConfig {
    pub vocabulary: Vocabulary,
    /// Accepted timestamps lie in `[earliest, latest)`.
    pub earliest: DateTime<Utc>,
    pub latest: DateTime<Utc>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            vocabulary: Vocabulary::default(),
            earliest: DateTime::<Utc>::UNIX_EPOCH,
            latest: NaiveDate::from_ymd_opt(2100, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap().and_utc(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub total_events: usize,
    pub unknown_locations: usize,
    pub out_of_range_timestamps: usize,
    /// Rows identical to an earlier row (each repeat counts once).
    pub duplicate_rows: usize,
    /// Distinct unknown location names, sorted.
    pub unknown_location_names: Vec<String>,
}

impl ValidationReport {
    pub fn findings(&self) -> usize {
        self.unknown_locations + self.out_of_range_timestamps + self.duplicate_rows
    }

    pub fn is_clean(&self) -> bool {
        self.findings() == 0
    }
}

pub fn validate_events(events: &[SensorEvent], config: &ValidationConfig) -> ValidationReport {
    let mut report = ValidationReport { total_events: events.len(), ..Default::default() };
    let mut seen = HashSet::with_capacity(events.len());
    let mut unknown = std::collections::BTreeSet::new();
    for e in events {
        if !config.vocabulary.is_data_token(&e.location) {
            report.unknown_locations += 1;
            unknown.insert(e.location.clone());
        }
        if e.timestamp < config.earliest || e.timestamp >= config.latest {
            report.out_of_range_timestamps += 1;
        }
        if !seen.insert(e) {
            report.duplicate_rows += 1;
        }
    }
    report.unknown_location_names = unknown.into_iter().collect();
    report
}

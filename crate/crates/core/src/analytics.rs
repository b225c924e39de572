//! Embedding store, exhaustive cosine search, per-participant similarity
//! matrices, label similarity, and cluster-proportion tables.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::daystring::DayStringRecord;
use crate::error::{Error, Result};
use crate::ingest::{LabelSet, Polarity};
use crate::seed::Rng;

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub participant_id: String,
    pub date: NaiveDate,
    pub vector: Vec<f64>,
}

/// Day embeddings sorted by (participant, date).
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    records: Vec<EmbeddingRecord>,
    index: HashMap<(String, NaiveDate), usize>,
    by_participant: BTreeMap<String, Vec<usize>>,
}

impl EmbeddingStore {
    pub fn new(mut records: Vec<EmbeddingRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.participant_id.cmp(&b.participant_id).then(a.date.cmp(&b.date)));
        let dim = records.first().map(|r| r.vector.len());
        let mut index = HashMap::with_capacity(records.len());
        let mut by_participant: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if Some(r.vector.len()) != dim {
                return Err(Error::DimensionMismatch { expected: dim.unwrap_or(0), found: r.vector.len() });
            }
            if index.insert((r.participant_id.clone(), r.date), i).is_some() {
                return Err(Error::Duplicate(format!("{}/{}", r.participant_id, r.date)));
            }
            by_participant.entry(r.participant_id.clone()).or_default().push(i);
        }
        Ok(Self { records, index, by_participant })
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.vector.len())
    }

    pub fn get(&self, participant_id: &str, date: NaiveDate) -> Option<&EmbeddingRecord> {
        self.index.get(&(participant_id.to_string(), date)).map(|&i| &self.records[i])
    }

    pub fn participants(&self) -> impl Iterator<Item = &str> {
        self.by_participant.keys().map(String::as_str)
    }

    /// A participant's records in date order.
    pub fn participant_days(&self, participant_id: &str) -> Option<Vec<&EmbeddingRecord>> {
        self.by_participant.get(participant_id).map(|ix| ix.iter().map(|&i| &self.records[i]).collect())
    }

    /// Row-major matrix of all vectors, in record order.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.vector.clone()).collect()
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: EmbeddingRecord =
                serde_json::from_str(&line).map_err(|e| Error::Row { line: i as u64 + 1, message: e.to_string() })?;
            records.push(r);
        }
        Self::new(records)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Query<'a> {
    Day { participant_id: &'a str, date: NaiveDate },
    Vector(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub rank: usize,
    pub participant_id: String,
    pub date: NaiveDate,
    pub similarity: f64,
}

pub const DEFAULT_TOP_K: usize = 9;

/// Exact scan of the whole store. Results are ordered by descending
/// similarity, ties by (participant, date). `exclude_self` only applies to
/// day queries.
pub fn search(store: &EmbeddingStore, query: Query<'_>, top_k: usize, exclude_self: bool) -> Result<Vec<SearchHit>> {
    if store.is_empty() {
        return Err(Error::TooFew { what: "stored embeddings", needed: 1, found: 0 });
    }
    let (vector, skip) = match query {
        Query::Day { participant_id, date } => {
            let i = *store
                .index
                .get(&(participant_id.to_string(), date))
                .ok_or_else(|| Error::UnknownKey(format!("{participant_id}/{date}")))?;
            (store.records[i].vector.as_slice(), exclude_self.then_some(i))
        }
        Query::Vector(v) => (v, None),
    };
    let mut scored = Vec::with_capacity(store.len());
    for (i, r) in store.records.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        scored.push((cosine(vector, &r.vector)?, i));
    }
    // records are already in (participant, date) order, so index order breaks ties
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(rank, (similarity, i))| SearchHit {
            rank: rank + 1,
            participant_id: store.records[i].participant_id.clone(),
            date: store.records[i].date,
            similarity,
        })
        .collect())
}

pub fn write_search_hits<W: Write>(out: W, hits: &[SearchHit]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["rank", "participant_id", "date", "similarity"])?;
    for h in hits {
        wtr.write_record([h.rank.to_string(), h.participant_id.clone(), h.date.to_string(), h.similarity.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityMatrix {
    pub participant_id: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Vec<f64>>,
}

pub const DEFAULT_STRIDE: usize = 20;

/// Cosine similarity between every `stride`-th recorded day of one
/// participant, starting from the earliest.
pub fn participant_similarity_matrix(store: &EmbeddingStore, participant_id: &str, stride: usize) -> Result<SimilarityMatrix> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be positive".into()));
    }
    let days = store.participant_days(participant_id).ok_or_else(|| Error::UnknownKey(participant_id.to_string()))?;
    let picked: Vec<&EmbeddingRecord> = days.into_iter().step_by(stride).collect();
    if picked.len() < 2 {
        return Err(Error::TooFew { what: "days after striding", needed: 2, found: picked.len() });
    }
    let n = picked.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let c = cosine(&picked[i].vector, &picked[j].vector)?;
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(SimilarityMatrix { participant_id: participant_id.to_string(), dates: picked.iter().map(|r| r.date).collect(), values })
}

/// Long format: `participant_id,date_i,date_j,similarity`.
pub fn write_similarity_matrix<W: Write>(out: W, m: &SimilarityMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["participant_id", "date_i", "date_j", "similarity"])?;
    for (i, row) in m.values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            wtr.write_record([m.participant_id.clone(), m.dates[i].to_string(), m.dates[j].to_string(), v.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipantLabelSimilarity {
    pub participant_id: String,
    pub positive_days: usize,
    pub negative_days: usize,
    /// Mean cosine over unordered pairs of distinct positive days.
    pub positive_positive: f64,
    /// Mean cosine over all (positive, negative) day pairs.
    pub positive_negative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelSimilarityReport {
    pub participants: Vec<ParticipantLabelSimilarity>,
    pub positive_positive: Option<MeanStd>,
    pub positive_negative: Option<MeanStd>,
    pub retained_participants: usize,
    pub retained_positive_days: usize,
    pub retained_negative_days: usize,
}

pub const MIN_POSITIVE_LABELS: usize = 2;
pub const MIN_NEGATIVE_LABELS: usize = 1;

/// Intra-participant similarity of positive days to each other and to
/// negative days, over participants with at least two positive and one
/// negative labelled day present in the store. Labels for days missing from
/// the store are ignored.
pub fn label_similarity(store: &EmbeddingStore, labels: &LabelSet) -> Result<LabelSimilarityReport> {
    let mut grouped: BTreeMap<&str, (Vec<&[f64]>, Vec<&[f64]>)> = BTreeMap::new();
    for (pid, date, polarity) in labels.iter() {
        let Some(rec) = store.get(pid, date) else { continue };
        let entry = grouped.entry(pid).or_default();
        match polarity {
            Polarity::Positive => entry.0.push(&rec.vector),
            Polarity::Negative => entry.1.push(&rec.vector),
        }
    }
    let mut participants = Vec::new();
    for (pid, (pos, neg)) in grouped {
        if pos.len() < MIN_POSITIVE_LABELS || neg.len() < MIN_NEGATIVE_LABELS {
            continue;
        }
        let (mut pp, mut pp_n) = (0.0, 0usize);
        for i in 0..pos.len() {
            for j in i + 1..pos.len() {
                pp += cosine(pos[i], pos[j])?;
                pp_n += 1;
            }
        }
        let mut pn = 0.0;
        for p in &pos {
            for n in &neg {
                pn += cosine(p, n)?;
            }
        }
        participants.push(ParticipantLabelSimilarity {
            participant_id: pid.to_string(),
            positive_days: pos.len(),
            negative_days: neg.len(),
            positive_positive: pp / pp_n as f64,
            positive_negative: pn / (pos.len() * neg.len()) as f64,
        });
    }
    let pp: Vec<f64> = participants.iter().map(|p| p.positive_positive).collect();
    let pn: Vec<f64> = participants.iter().map(|p| p.positive_negative).collect();
    Ok(LabelSimilarityReport {
        retained_participants: participants.len(),
        retained_positive_days: participants.iter().map(|p| p.positive_days).sum(),
        retained_negative_days: participants.iter().map(|p| p.negative_days).sum(),
        positive_positive: MeanStd::of(&pp),
        positive_negative: MeanStd::of(&pn),
        participants,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub participant_id: String,
    pub date: NaiveDate,
    pub cluster: usize,
}

pub fn write_assignments<W: Write>(out: W, rows: &[ClusterAssignment]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["participant_id", "date", "cluster"])?;
    for r in rows {
        wtr.write_record([r.participant_id.clone(), r.date.to_string(), r.cluster.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_assignments<R: Read>(input: R) -> Result<Vec<ClusterAssignment>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Per-date fraction of assigned days in each cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProportionTable {
    pub k: usize,
    pub rows: BTreeMap<NaiveDate, Vec<f64>>,
}

/// `k` defaults to one more than the largest label.
pub fn cluster_proportions(assignments: &[ClusterAssignment], k: Option<usize>) -> Result<ProportionTable> {
    if assignments.is_empty() {
        return Err(Error::TooFew { what: "assignments", needed: 1, found: 0 });
    }
    let max_label = assignments.iter().map(|a| a.cluster).max().expect("nonempty");
    let k = k.unwrap_or(max_label + 1);
    if max_label >= k {
        return Err(Error::InvalidConfig(format!("label {max_label} outside 0..{k}")));
    }
    let mut counts: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for a in assignments {
        counts.entry(a.date).or_insert_with(|| vec![0; k])[a.cluster] += 1;
    }
    let rows = counts
        .into_iter()
        .map(|(date, c)| {
            let total = c.iter().sum::<usize>() as f64;
            (date, c.into_iter().map(|x| x as f64 / total).collect())
        })
        .collect();
    Ok(ProportionTable { k, rows })
}

/// Header `date,cluster_0,…,cluster_{k-1}`.
pub fn write_proportions<W: Write>(out: W, table: &ProportionTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_string()];
    header.extend((0..table.k).map(|c| format!("cluster_{c}")));
    wtr.write_record(&header)?;
    for (date, row) in &table.rows {
        let mut rec = vec![date.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub const DEFAULT_INSPECT_SAMPLE: usize = 8;

/// Uniformly samples up to `n` member days of a cluster (without replacement)
/// and returns their day strings. Members are enumerated in (participant,
/// date) order before sampling.
pub fn cluster_sample(
    assignments: &[ClusterAssignment],
    daystrings: &[DayStringRecord],
    cluster: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<DayStringRecord>> {
    let texts: HashMap<(&str, NaiveDate), &DayStringRecord> =
        daystrings.iter().map(|d| ((d.participant_id.as_str(), d.date), d)).collect();
    let mut members: Vec<&ClusterAssignment> = assignments.iter().filter(|a| a.cluster == cluster).collect();
    if members.is_empty() {
        return Err(Error::UnknownKey(format!("cluster {cluster}")));
    }
    members.sort_by(|a, b| a.participant_id.cmp(&b.participant_id).then(a.date.cmp(&b.date)));
    let picked = rand::seq::index::sample(rng, members.len(), n.min(members.len()));
    picked
        .into_iter()
        .map(|i| {
            let m = members[i];
            texts
                .get(&(m.participant_id.as_str(), m.date))
                .map(|d| (*d).clone())
                .ok_or_else(|| Error::UnknownKey(format!("day string for {}/{}", m.participant_id, m.date)))
        })
        .collect()
}

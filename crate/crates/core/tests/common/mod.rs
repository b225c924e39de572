//! Independent reference implementations used as test oracles. Everything here
//! is written with plain nested loops and shares no code with the library
//! beyond its data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use chrono::{Duration, NaiveDate, TimeZone, Timelike, Utc};
use dayembed::analytics::{ClusterAssignment, EmbeddingRecord, EmbeddingStore};
use dayembed::encoder::{EncoderConfig, ModelParams};
use dayembed::ingest::{DayRecord, LabelSet, Polarity, SensorEvent};
use dayembed::seed::Rng;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

pub const LOCATIONS: [&str; 6] = ["Lounge", "Kitchen", "Hallway", "Bedroom", "Bathroom", "Bed"];

pub fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 1).unwrap()
}

// ---------------------------------------------------------------- preprocessing

/// A day with `n_events` uniformly placed events over a random subset of
/// locations; clustering events into few windows makes ties common.
pub fn random_day(rng: &mut Rng, participant: &str, date: NaiveDate, n_events: usize) -> DayRecord {
    let midnight = Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).unwrap());
    let hot_windows: Vec<i64> = (0..rng.random_range(1..=72)).map(|_| rng.random_range(0..72)).collect();
    let mut events: Vec<SensorEvent> = (0..n_events)
        .map(|_| {
            let w = hot_windows[rng.random_range(0..hot_windows.len())];
            let secs = w * 1200 + rng.random_range(0..1200);
            let loc = LOCATIONS[rng.random_range(0..LOCATIONS.len())];
            SensorEvent::new(participant, midnight + Duration::seconds(secs), loc)
        })
        .collect();
    events.sort();
    DayRecord { participant_id: participant.to_string(), date, events }
}

/// Per 20-minute window: `Ok(token)` when the modal location is unique (or
/// `Nowhere` for an empty window), `Err(tied)` otherwise.
pub fn brute_modal_windows(day: &DayRecord) -> Vec<Result<String, Vec<String>>> {
    let mut out = Vec::with_capacity(72);
    for w in 0..72u32 {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &day.events {
            let t = e.timestamp;
            let minute = t.hour() * 60 + t.minute();
            if minute / 20 == w {
                *counts.entry(e.location.as_str()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            out.push(Ok("Nowhere".to_string()));
            continue;
        }
        let best = *counts.values().max().unwrap();
        let tied: Vec<String> = counts.iter().filter(|(_, &c)| c == best).map(|(l, _)| l.to_string()).collect();
        out.push(if tied.len() == 1 { Ok(tied[0].clone()) } else { Err(tied) });
    }
    out
}

// ---------------------------------------------------------------- encoder

fn layer_norm_ref(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().enumerate().map(|(j, v)| gain[j] * (v - mean) / (var + 1e-5).sqrt() + bias[j]).collect()
}

fn project(x: &[f64], w: &[f64], d_out: usize) -> Vec<f64> {
    (0..d_out).map(|j| x.iter().enumerate().map(|(k, xk)| xk * w[k * d_out + j]).sum()).collect()
}

fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Straight-line forward pass: embeddings, pre-norm attention and feed-forward
/// blocks, mean pooling over non-PAD positions, optional L2 normalization.
pub fn reference_encode(p: &ModelParams, c: &EncoderConfig, ids: &[usize]) -> Vec<f64> {
    let d = c.d_model;
    let dh = d / c.n_heads;
    let keep: Vec<usize> = (0..ids.len()).filter(|&i| Some(ids[i]) != c.pad_id).collect();
    let mut h: Vec<Vec<f64>> = ids
        .iter()
        .enumerate()
        .map(|(i, &t)| (0..d).map(|j| p.token_embeddings.data[t * d + j] + p.positional_embeddings.data[i * d + j]).collect())
        .collect();
    for l in &p.layers {
        let a: Vec<Vec<f64>> = h.iter().map(|r| layer_norm_ref(r, &l.ln1_gain.data, &l.ln1_bias.data)).collect();
        let q: Vec<Vec<f64>> = a.iter().map(|r| project(r, &l.wq.data, d)).collect();
        let k: Vec<Vec<f64>> = a.iter().map(|r| project(r, &l.wk.data, d)).collect();
        let v: Vec<Vec<f64>> = a.iter().map(|r| project(r, &l.wv.data, d)).collect();
        let mut ctx = vec![vec![0.0; d]; ids.len()];
        for head in 0..c.n_heads {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..ids.len() {
                let scores: Vec<f64> = keep
                    .iter()
                    .map(|&j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                for (s, &j) in scores.iter().zip(&keep) {
                    for c in cols.clone() {
                        ctx[i][c] += s.exp() / z * v[j][c];
                    }
                }
            }
        }
        for i in 0..ids.len() {
            let o = project(&ctx[i], &l.wo.data, d);
            for j in 0..d {
                h[i][j] += o[j];
            }
            let b = layer_norm_ref(&h[i], &l.ln2_gain.data, &l.ln2_bias.data);
            let u: Vec<f64> = project(&b, &l.w1.data, c.d_ff).iter().zip(&l.b1.data).map(|(x, b)| gelu_ref(x + b)).collect();
            let f = project(&u, &l.w2.data, d);
            for j in 0..d {
                h[i][j] += f[j] + l.b2.data[j];
            }
        }
    }
    let mut pooled = vec![0.0; d];
    for &i in &keep {
        for j in 0..d {
            pooled[j] += h[i][j] / keep.len() as f64;
        }
    }
    if c.normalize_output {
        let norm = pooled.iter().map(|x| x * x).sum::<f64>().sqrt();
        pooled.iter_mut().for_each(|x| *x /= norm);
    }
    pooled
}

pub fn cosine_ref(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean cosine triplet hinge over a batch, computed with the reference encoder.
pub fn reference_batch_loss(p: &ModelParams, c: &EncoderConfig, batch: &[[Vec<usize>; 3]], margin: f64) -> f64 {
    batch
        .iter()
        .map(|[a, pos, neg]| {
            let (ea, ep, en) = (reference_encode(p, c, a), reference_encode(p, c, pos), reference_encode(p, c, neg));
            (margin - cosine_ref(&ea, &ep) + cosine_ref(&ea, &en)).max(0.0)
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// Adds N(0, sd) noise to every parameter so that gains and biases leave
/// their initial 1/0 values.
pub fn jitter(p: &mut ModelParams, rng: &mut Rng, sd: f64) {
    let normal = Normal::new(0.0, sd).unwrap();
    for t in p.tensors_mut() {
        t.data.iter_mut().for_each(|x| *x += normal.sample(rng));
    }
}

/// Per parameter group (tensor name), the largest relative error between
/// `analytic` and central differences of `loss` with step `h`. Relative error
/// is `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    params: &ModelParams,
    analytic: &ModelParams,
    h: f64,
    floor: f64,
    loss: impl Fn(&ModelParams) -> f64,
) -> Vec<(String, f64)> {
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic.named_tensors().into_iter().map(|(_, t)| t.data.clone()).collect();
    let mut work = params.clone();
    let mut out = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let len = grads[ti].len();
        let mut worst: f64 = 0.0;
        for e in 0..len {
            let orig = work.tensors_mut()[ti].data[e];
            work.tensors_mut()[ti].data[e] = orig + h;
            let up = loss(&work);
            work.tensors_mut()[ti].data[e] = orig - h;
            let down = loss(&work);
            work.tensors_mut()[ti].data[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grads[ti][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
        out.push((name.clone(), worst));
    }
    out
}

// ---------------------------------------------------------------- clustering

/// `k` Gaussian blobs of `per` points in `dim` dimensions, centres spaced far apart.
pub fn blobs(rng: &mut Rng, k: usize, per: usize, dim: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let unit = Normal::new(0.0, 1.0).unwrap();
    let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| unit.sample(rng) * spread).collect()).collect();
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per {
            x.push(centre.iter().map(|m| m + unit.sample(rng)).collect());
            labels.push(c);
        }
    }
    (x, labels)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean silhouette straight from the definition, O(n²).
pub fn brute_silhouette(x: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..x.len() {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..x.len() {
            if i != j {
                sums[labels[j]] += dist(&x[i], &x[j]);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k).filter(|&c| c != own && counts[c] > 0).map(|c| sums[c] / counts[c] as f64).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    total / x.len() as f64
}

/// Best agreement between two labelings over all relabelings of `found`.
pub fn best_agreement(found: &[usize], truth: &[usize], k: usize) -> f64 {
    fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.clone();
            let head = rest.remove(i);
            for mut p in permutations(rest) {
                p.insert(0, head);
                out.push(p);
            }
        }
        out
    }
    let kf = found.iter().max().map_or(0, |m| m + 1).max(k);
    permutations((0..kf).collect())
        .into_iter()
        .map(|perm| found.iter().zip(truth).filter(|(&f, &t)| perm[f] == t).count())
        .max()
        .unwrap() as f64
        / truth.len() as f64
}

// ---------------------------------------------------------------- analytics

/// Random store: participants with random, gappy day sets, Gaussian vectors.
pub fn random_store(rng: &mut Rng, participants: usize, max_days: usize, dim: usize) -> EmbeddingStore {
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut records = Vec::new();
    for p in 0..participants {
        let n = rng.random_range(2..=max_days);
        let mut offsets: Vec<i64> = rand::seq::index::sample(rng, 3 * max_days, n).into_iter().map(|i| i as i64).collect();
        offsets.sort_unstable();
        for o in offsets {
            records.push(EmbeddingRecord {
                participant_id: format!("p{p:02}"),
                date: base_date() + Duration::days(o),
                vector: (0..dim).map(|_| unit.sample(rng)).collect(),
            });
        }
    }
    EmbeddingStore::new(records).unwrap()
}

/// `(participant, date, similarity)` ranked by descending similarity, then key.
pub fn brute_search(store: &EmbeddingStore, query: &[f64], exclude: Option<(&str, NaiveDate)>, k: usize) -> Vec<(String, NaiveDate, f64)> {
    let mut all: Vec<(String, NaiveDate, f64)> = Vec::new();
    for r in store.records() {
        if Some((r.participant_id.as_str(), r.date)) == exclude {
            continue;
        }
        all.push((r.participant_id.clone(), r.date, cosine_ref(query, &r.vector)));
    }
    all.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all
}

pub fn brute_similarity_matrix(store: &EmbeddingStore, participant: &str, stride: usize) -> (Vec<NaiveDate>, Vec<Vec<f64>>) {
    let mut days: Vec<&EmbeddingRecord> = store.records().iter().filter(|r| r.participant_id == participant).collect();
    days.sort_by_key(|r| r.date);
    let mut picked = Vec::new();
    let mut i = 0;
    while i < days.len() {
        picked.push(days[i]);
        i += stride;
    }
    let values = picked.iter().map(|a| picked.iter().map(|b| cosine_ref(&a.vector, &b.vector)).collect()).collect();
    (picked.iter().map(|r| r.date).collect(), values)
}

pub fn random_labels(rng: &mut Rng, store: &EmbeddingStore, rate: f64) -> LabelSet {
    let mut labels = LabelSet::new();
    for r in store.records() {
        if rng.random::<f64>() < rate {
            let pol = if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative };
            labels.insert(r.participant_id.clone(), r.date, pol).unwrap();
        }
    }
    // a few labels for days missing from the store
    labels.insert("ghost", base_date(), Polarity::Positive).unwrap();
    labels
}

/// Per retained participant `(pid, mean pos–pos, mean pos–neg)`, plus the
/// population mean and standard deviation of each column.
pub struct BruteLabelSim {
    pub rows: Vec<(String, f64, f64)>,
    pub pp: (f64, f64),
    pub pn: (f64, f64),
}

pub fn brute_label_similarity(store: &EmbeddingStore, labels: &LabelSet) -> BruteLabelSim {
    let vectors: HashMap<(String, NaiveDate), &Vec<f64>> =
        store.records().iter().map(|r| ((r.participant_id.clone(), r.date), &r.vector)).collect();
    let mut pids: Vec<String> = store.records().iter().map(|r| r.participant_id.clone()).collect();
    pids.dedup();
    let mut rows = Vec::new();
    for pid in pids {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (p, d, pol) in labels.iter() {
            if p != pid {
                continue;
            }
            if let Some(v) = vectors.get(&(p.to_string(), d)) {
                match pol {
                    Polarity::Positive => pos.push(*v),
                    Polarity::Negative => neg.push(*v),
                }
            }
        }
        if pos.len() < 2 || neg.is_empty() {
            continue;
        }
        let mut pp = Vec::new();
        for i in 0..pos.len() {
            for j in 0..pos.len() {
                if i < j {
                    pp.push(cosine_ref(pos[i], pos[j]));
                }
            }
        }
        let mut pn = Vec::new();
        for a in &pos {
            for b in &neg {
                pn.push(cosine_ref(a, b));
            }
        }
        rows.push((pid, pp.iter().sum::<f64>() / pp.len() as f64, pn.iter().sum::<f64>() / pn.len() as f64));
    }
    let stats = |xs: Vec<f64>| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt())
    };
    let pp = stats(rows.iter().map(|r| r.1).collect());
    let pn = stats(rows.iter().map(|r| r.2).collect());
    BruteLabelSim { rows, pp, pn }
}

pub fn random_assignments(rng: &mut Rng, store: &EmbeddingStore, k: usize) -> Vec<ClusterAssignment> {
    store
        .records()
        .iter()
        .map(|r| ClusterAssignment { participant_id: r.participant_id.clone(), date: r.date, cluster: rng.random_range(0..k) })
        .collect()
}

pub fn brute_proportions(assignments: &[ClusterAssignment], k: usize) -> BTreeMap<NaiveDate, Vec<f64>> {
    let mut dates: Vec<NaiveDate> = assignments.iter().map(|a| a.date).collect();
    dates.sort();
    dates.dedup();
    let mut out = BTreeMap::new();
    for d in dates {
        let on_day: Vec<&ClusterAssignment> = assignments.iter().filter(|a| a.date == d).collect();
        let row = (0..k).map(|c| on_day.iter().filter(|a| a.cluster == c).count() as f64 / on_day.len() as f64).collect();
        out.insert(d, row);
    }
    out
}

// ---------------------------------------------------------------- t-SNE

/// Perplexity `exp(H)` of the Gaussian conditional around row `i` at precision `beta`.
pub fn row_perplexity(x: &[Vec<f64>], i: usize, beta: f64) -> f64 {
    let w: Vec<f64> = (0..x.len())
        .map(|j| if j == i { 0.0 } else { (-beta * dist(&x[i], &x[j]).powi(2)).exp() })
        .collect();
    let z: f64 = w.iter().sum();
    let h: f64 = w.iter().filter(|&&v| v > 0.0).map(|&v| -(v / z) * (v / z).ln()).sum();
    h.exp()
}

/// KL(P ‖ Q) directly from the Student-t definition.
pub fn brute_kl(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let kernel = |i: usize, j: usize| 1.0 / (1.0 + (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2));
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += kernel(i, j);
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                kl += pij * (pij / (kernel(i, j) / z)).ln();
            }
        }
    }
    kl
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use dayembed::analytics::{self, EmbeddingRecord, EmbeddingStore, Query};
use dayembed::cluster::{self, KMeansOptions};
use dayembed::daystring::{self, DayStringRecord, Vocabulary, NOWHERE, WINDOWS_PER_DAY, WINDOW_MINUTES};
use dayembed::encoder::{self, EncoderConfig};
use dayembed::ingest::{self, DayRecord};
use dayembed::seed::{self, Rng};
use dayembed::synth::{self, CohortConfig};
use dayembed::trainer::{self, CorpusDay, NegativeSampling, TrainConfig, TrainingCorpus, TripletIds};
use dayembed::tsne::{self, LearningRate, TsneConfig};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SEED: u64 = 20240130;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rng(key: &str) -> Rng {
    seed::derive_rng(SEED, "acceptance", key)
}

// 1 ------------------------------------------------------------------------

fn preprocessing() -> Check {
    let vocab = Vocabulary::default();
    let mut r = rng("preprocessing");
    let (mut unique_windows, mut tie_windows) = (0usize, 0usize);
    for i in 0..1000 {
        let date = common::base_date() + chrono::Duration::days(i % 365);
        let n = if i % 50 == 0 { 0 } else { r.random_range(1..400) };
        let day = common::random_day(&mut r, &format!("p{}", i % 7), date, n);
        let seq = daystring::aggregate_day(&day, &vocab, &mut seed::rng_from_seed(i as u64)).map_err(|e| e.to_string())?;
        ensure(seq.tokens.len() == WINDOWS_PER_DAY, format!("day {i}: {} tokens", seq.tokens.len()))?;
        for (w, (got, want)) in seq.tokens.iter().zip(common::brute_modal_windows(&day)).enumerate() {
            match want {
                Ok(t) => {
                    ensure(*got == t, format!("day {i} window {w}: got {got}, brute force {t}"))?;
                    unique_windows += 1;
                }
                Err(tied) => {
                    ensure(tied.contains(got), format!("day {i} window {w}: {got} not among ties {tied:?}"))?;
                    tie_windows += 1;
                }
            }
        }
    }
    let empty = DayRecord::empty("p0", common::base_date());
    let seq = daystring::aggregate_day(&empty, &vocab, &mut rng("empty")).map_err(|e| e.to_string())?;
    ensure(seq.tokens.len() == 72 && seq.tokens.iter().all(|t| t == NOWHERE), "empty day is not 72 x Nowhere")?;
    Ok(format!("{unique_windows} non-tie windows match brute force, {tie_windows} tie windows within tied set"))
}

// 2 ------------------------------------------------------------------------

fn triplet_audit() -> Check {
    let mut r = rng("corpus");
    let mut days = Vec::new();
    for p in 0..20 {
        let offsets: Vec<i64> = if p < 10 {
            (0..200).collect()
        } else {
            let mut o: Vec<i64> = rand::seq::index::sample(&mut r, 400, 150).into_iter().map(|i| i as i64).collect();
            o.sort_unstable();
            o
        };
        for o in offsets {
            days.push(CorpusDay {
                participant_id: format!("p{p:02}"),
                date: common::base_date() + chrono::Duration::days(o),
                ids: vec![0],
            });
        }
    }
    let corpus = TrainingCorpus::new(days).map_err(|e| e.to_string())?;
    let d = corpus.days();
    let mut r = rng("triplets");
    let mut offsets = BTreeMap::<i64, u64>::new();
    for _ in 0..100_000 {
        let t = trainer::sample_triplet(&corpus, &mut r, NegativeSampling::Day).map_err(|e| e.to_string())?;
        let (a, p, n) = (&d[t.anchor], &d[t.positive], &d[t.negative]);
        let delta = (p.date - a.date).num_days();
        ensure(a.participant_id == p.participant_id, "positive from another participant")?;
        ensure((1..=30).contains(&delta.abs()), format!("positive offset {delta}"))?;
        ensure(a.participant_id != n.participant_id, "negative from the anchor's participant")?;
        if corpus.positive_candidates(t.anchor).count() == 60 {
            *offsets.entry(delta).or_default() += 1;
        }
    }
    ensure(offsets.len() == 60, format!("{} distinct offsets among full-window anchors", offsets.len()))?;
    let total: u64 = offsets.values().sum();
    let expected = total as f64 / 60.0;
    let stat: f64 = offsets.values().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(59.0).unwrap().cdf(stat);
    ensure(p > 0.01, format!("chi-square {stat:.2}, p = {p:.4}"))?;
    Ok(format!("100000 triplets valid; offset chi-square {stat:.1} on 59 df, p = {p:.3} ({total} full-window anchors)"))
}

// 3 ------------------------------------------------------------------------

fn gradient_correctness() -> Check {
    let vocab = Vocabulary::default();
    let config = EncoderConfig { d_model: 4, n_layers: 1, n_heads: 2, d_ff: 8, ..EncoderConfig::for_vocabulary(&vocab) };
    let mut r = rng("gradients");
    let mut params = encoder::init_params(&config, &mut r).map_err(|e| e.to_string())?;
    common::jitter(&mut params, &mut r, 0.1);
    let pad = vocab.pad_id();
    let mut seq = |len: usize, pads: usize| -> Vec<usize> {
        let mut s: Vec<usize> = (0..len).map(|_| r.random_range(0..pad)).collect();
        s.extend(std::iter::repeat_n(pad, pads));
        s
    };
    let batch: Vec<[Vec<usize>; 3]> = vec![
        [seq(8, 0), seq(8, 0), seq(8, 0)],
        [seq(6, 2), seq(8, 0), seq(5, 3)],
        [seq(8, 0), seq(3, 5), seq(8, 0)],
    ];
    let margin = 3.0;
    let ids: Vec<TripletIds<'_>> =
        batch.iter().map(|[a, p, n]| TripletIds { anchor: a, positive: p, negative: n }).collect();
    let out = trainer::backward(&params, &config, &ids, margin).map_err(|e| e.to_string())?;
    let reference = common::reference_batch_loss(&params, &config, &batch, margin);
    ensure((out.loss - reference).abs() < 1e-12, format!("loss {} vs reference {reference}", out.loss))?;
    let report = common::gradient_check(&params, &out.grads, 1e-5, 1e-6, |p| common::reference_batch_loss(p, &config, &batch, margin));
    let (worst_name, worst) = report.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    for (name, err) in &report {
        ensure(*err < 1e-4, format!("{name}: relative error {err:.3e}"))?;
    }
    Ok(format!("{} parameter groups, worst {worst_name} at {worst:.2e}", report.len()))
}

// 4 ------------------------------------------------------------------------

fn optimizer_oracles() -> Check {
    let mut r = rng("adamw");
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = 32;
    let mut theta: Vec<f64> = (0..n).map(|_| normal.sample(&mut r)).collect();
    let g1: Vec<f64> = (0..n).map(|_| normal.sample(&mut r)).collect();
    let g2: Vec<f64> = (0..n).map(|_| normal.sample(&mut r)).collect();
    let (lr, wd) = (1e-3, 0.01);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let hyper = trainer::AdamWHyper::default();

    // by hand, element by element
    let mut expect = theta.clone();
    let mut worst: f64 = 0.0;
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let m1 = (1.0 - b1) * g1[i];
        let v1 = (1.0 - b2) * g1[i] * g1[i];
        let t1 = expect[i] - lr * ((m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps) + wd * expect[i]);
        let m2 = b1 * m1 + (1.0 - b1) * g2[i];
        let v2 = b2 * v1 + (1.0 - b2) * g2[i] * g2[i];
        let t2 = t1 - lr * ((m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps) + wd * t1);
        expect[i] = t2;
    }
    trainer::adamw_update(&mut theta, &g1, &mut m, &mut v, 1, lr, wd, hyper);
    trainer::adamw_update(&mut theta, &g2, &mut m, &mut v, 2, lr, wd, hyper);
    for (a, b) in theta.iter().zip(&expect) {
        worst = worst.max((a - b).abs());
    }
    ensure(worst < 1e-10, format!("AdamW deviates by {worst:.3e}"))?;

    let (warmup, total, peak) = (500, 4000, 1e-3);
    let at = |s| trainer::lr_schedule(s, warmup, total, peak);
    ensure(at(0) == 0.0 && at(warmup) == peak && at(total) == 0.0, format!("schedule ({}, {}, {})", at(0), at(warmup), at(total)))?;
    ensure((at(250) - peak / 2.0).abs() < 1e-18 && (at(2250) - peak / 2.0).abs() < 1e-18, "schedule not linear")?;
    Ok(format!("two AdamW steps within {worst:.1e}; schedule (0, peak, 0) exact"))
}

// 5 ------------------------------------------------------------------------

fn efficacy() -> Check {
    let cohort_cfg = CohortConfig::two_regime(SEED);
    let cohort = synth::generate_cohort(&cohort_cfg).map_err(|e| e.to_string())?;
    let vocab = Vocabulary::default();
    let days = ingest::group_days(&cohort.events);
    let seqs = daystring::aggregate_days(&days, &vocab, WINDOW_MINUTES, SEED).map_err(|e| e.to_string())?;
    let records: Vec<DayStringRecord> = seqs.iter().map(DayStringRecord::from).collect();
    let corpus = TrainingCorpus::from_records(&records, &vocab).map_err(|e| e.to_string())?;
    let enc = EncoderConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, ..EncoderConfig::for_vocabulary(&vocab) };
    let cfg = TrainConfig {
        triplets_per_epoch: 32 * 300,
        batch_size: 32,
        learning_rate: 3e-3,
        warmup_steps: 60,
        ..TrainConfig::desk(corpus.len(), 2, SEED)
    };
    ensure(cfg.planned_steps() <= 2000, "too many steps")?;
    let outcome = trainer::train(&corpus, &enc, &cfg, None, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let store = dayembed::cli::embed_records(&outcome.params, &enc, &vocab, &records).map_err(|e| e.to_string())?;

    let regime: BTreeMap<(String, NaiveDate), String> =
        cohort.manifest.iter().map(|m| ((m.participant_id.clone(), m.date), m.regime.clone())).collect();
    let recs = store.records();
    let (mut near, mut near_n, mut cross, mut cross_n) = (0.0, 0u64, 0.0, 0u64);
    for i in 0..recs.len() {
        for j in i + 1..recs.len() {
            let c = common::cosine_ref(&recs[i].vector, &recs[j].vector);
            if recs[i].participant_id == recs[j].participant_id {
                if (recs[i].date - recs[j].date).num_days().abs() <= 30 {
                    near += c;
                    near_n += 1;
                }
            } else {
                cross += c;
                cross_n += 1;
            }
        }
    }
    let gap = near / near_n as f64 - cross / cross_n as f64;
    let mut same_regime = 0.0;
    for r in recs {
        let hits = analytics::search(&store, Query::Day { participant_id: &r.participant_id, date: r.date }, 10, true)
            .map_err(|e| e.to_string())?;
        let own = &regime[&(r.participant_id.clone(), r.date)];
        same_regime += hits.iter().filter(|h| &regime[&(h.participant_id.clone(), h.date)] == own).count() as f64 / 10.0;
    }
    let retrieval = same_regime / recs.len() as f64;
    let detail = format!(
        "{} steps, cosine gap {gap:.3} (near {:.3}, cross {:.3}), top-10 same-regime {:.1}%",
        outcome.history.len(),
        near / near_n as f64,
        cross / cross_n as f64,
        100.0 * retrieval
    );
    ensure(gap >= 0.1 && retrieval >= 0.8, detail.clone())?;
    Ok(detail)
}

// 6 ------------------------------------------------------------------------

fn clustering() -> Check {
    let mut r = rng("blobs");
    let (x, truth) = common::blobs(&mut r, 5, 100, 8, 8.0);
    let (z, _) = cluster::standardize(&x).map_err(|e| e.to_string())?;
    let sweep = cluster::sweep_k(&z, cluster::DEFAULT_K_RANGE, &mut rng("sweep"), &KMeansOptions::default())
        .map_err(|e| e.to_string())?;
    ensure(sweep.best_k == 5, format!("sweep chose k = {}", sweep.best_k))?;
    let agreement = common::best_agreement(&sweep.best().labels, &truth, 5);
    ensure(agreement >= 0.99, format!("agreement {agreement:.3}"))?;

    let normal = Normal::new(0.0, 1.0).unwrap();
    let y: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| normal.sample(&mut r)).collect()).collect();
    let labels: Vec<usize> = (0..200).map(|_| r.random_range(0..4)).collect();
    let fitted = cluster::kmeans_fit(&y, 4, &mut rng("sil"), &KMeansOptions::default()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for l in [&labels, &fitted.labels] {
        let s = cluster::silhouette(&y, l).map_err(|e| e.to_string())?;
        worst = worst.max((s - common::brute_silhouette(&y, l)).abs());
    }
    ensure(worst < 1e-9, format!("silhouette differs from brute force by {worst:.3e}"))?;
    let sils: Vec<String> = sweep.rows.iter().map(|row| format!("{}:{:.2}", row.k, row.silhouette)).collect();
    Ok(format!("k = 5 chosen [{}], agreement {:.1}%, silhouette brute-force gap {worst:.1e}", sils.join(" "), 100.0 * agreement))
}

// 7 ------------------------------------------------------------------------

fn tsne_checks() -> Check {
    let mut r = rng("tsne");
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<Vec<f64>> = (0..100).map(|_| (0..8).map(|_| normal.sample(&mut r)).collect()).collect();
    let aff = tsne::pairwise_affinities(&x, 30.0).map_err(|e| e.to_string())?;
    let sum: f64 = aff.p.iter().sum();
    ensure((sum - 1.0).abs() < 1e-9, format!("P sums to {sum}"))?;
    let worst_perp = (0..100).map(|i| (common::row_perplexity(&x, i, aff.betas[i]) - 30.0).abs()).fold(0.0, f64::max);
    ensure(worst_perp < 1e-3, format!("perplexity off by {worst_perp:.2e}"))?;

    let n = 5;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = r.random::<f64>() + 0.1;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    let y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut r), normal.sample(&mut r)]).collect();
    let grad = tsne::kl_gradient(&p, &y);
    let h = 1e-5;
    let mut worst_grad: f64 = 0.0;
    for i in 0..n {
        for c in 0..2 {
            let mut up = y.clone();
            up[i][c] += h;
            let mut down = y.clone();
            down[i][c] -= h;
            let numeric = (common::brute_kl(&p, &up) - common::brute_kl(&p, &down)) / (2.0 * h);
            let rel = (grad[i][c] - numeric).abs() / grad[i][c].abs().max(numeric.abs()).max(1e-6);
            worst_grad = worst_grad.max(rel);
        }
    }
    ensure(worst_grad < 1e-4, format!("KL gradient relative error {worst_grad:.2e}"))?;

    let (blobs, _) = common::blobs(&mut r, 3, 60, 10, 6.0);
    let cfg = TsneConfig { seed: SEED, ..TsneConfig::default() };
    let fit = tsne::tsne_fit(&blobs, &cfg).map_err(|e| e.to_string())?;
    let after_exag = fit.kl_history[cfg.exaggeration_iters];
    let last = *fit.kl_history.last().unwrap();
    ensure(last < after_exag, format!("final KL {last} not below {after_exag}"))?;
    let auto = LearningRate::Auto.resolve(480);
    ensure(auto == 10.0, format!("auto learning rate {auto}"))?;
    Ok(format!(
        "P sum error {:.1e}, perplexity error {worst_perp:.1e}, KL gradient error {worst_grad:.1e}, KL {after_exag:.3} -> {last:.3}, auto lr(480) = {auto}",
        (sum - 1.0).abs()
    ))
}

// 8 ------------------------------------------------------------------------

fn analytics_oracles() -> Check {
    let mut worst: f64 = 0.0;
    let mut checks = 0usize;
    for trial in 0..5 {
        let mut r = rng(&format!("analytics/{trial}"));
        let store = common::random_store(&mut r, 8, 60, 8);
        ensure(store.len() <= 500, "store too large")?;
        let recs = store.records();

        for _ in 0..20 {
            let q = &recs[r.random_range(0..recs.len())];
            let hits = analytics::search(&store, Query::Day { participant_id: &q.participant_id, date: q.date }, 9, true)
                .map_err(|e| e.to_string())?;
            let brute = common::brute_search(&store, &q.vector, Some((&q.participant_id, q.date)), 9);
            ensure(hits.len() == brute.len(), "search result count")?;
            for (h, b) in hits.iter().zip(&brute) {
                ensure(h.participant_id == b.0 && h.date == b.1, "search ranking differs")?;
                worst = worst.max((h.similarity - b.2).abs());
            }
            let free: Vec<f64> = (0..store.dim()).map(|_| r.random::<f64>() - 0.5).collect();
            let hits = analytics::search(&store, Query::Vector(&free), 9, false).map_err(|e| e.to_string())?;
            for (h, b) in hits.iter().zip(common::brute_search(&store, &free, None, 9)) {
                ensure(h.participant_id == b.0 && h.date == b.1, "vector search ranking differs")?;
                worst = worst.max((h.similarity - b.2).abs());
            }
            checks += 2;
        }

        let pids: Vec<String> = store.participants().map(str::to_string).collect();
        for pid in &pids {
            let (dates, values) = common::brute_similarity_matrix(&store, pid, 20);
            match analytics::participant_similarity_matrix(&store, pid, 20) {
                Ok(m) => {
                    ensure(m.dates == dates, "similarity matrix dates differ")?;
                    for (a, b) in m.values.iter().flatten().zip(values.iter().flatten()) {
                        worst = worst.max((a - b).abs());
                    }
                    checks += 1;
                }
                Err(_) => ensure(dates.len() < 2, format!("matrix for {pid} rejected with {} days", dates.len()))?,
            }
        }

        let labels = common::random_labels(&mut r, &store, 0.15);
        let report = analytics::label_similarity(&store, &labels).map_err(|e| e.to_string())?;
        let brute = common::brute_label_similarity(&store, &labels);
        ensure(report.participants.len() == brute.rows.len(), "label similarity retained different participants")?;
        for (a, b) in report.participants.iter().zip(&brute.rows) {
            ensure(a.participant_id == b.0, "label similarity participant order")?;
            worst = worst.max((a.positive_positive - b.1).abs()).max((a.positive_negative - b.2).abs());
        }
        if let (Some(pp), Some(pn)) = (report.positive_positive, report.positive_negative) {
            for (x, y) in [(pp.mean, brute.pp.0), (pp.std, brute.pp.1), (pn.mean, brute.pn.0), (pn.std, brute.pn.1)] {
                worst = worst.max((x - y).abs());
            }
        }
        checks += 1;

        let assignments = common::random_assignments(&mut r, &store, 5);
        let table = analytics::cluster_proportions(&assignments, Some(5)).map_err(|e| e.to_string())?;
        let brute = common::brute_proportions(&assignments, 5);
        ensure(table.rows.keys().eq(brute.keys()), "proportion dates differ")?;
        for (a, b) in table.rows.values().zip(brute.values()) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        checks += 1;
    }
    ensure(worst < 1e-9, format!("max deviation {worst:.3e}"))?;
    Ok(format!("{checks} comparisons against brute force, max deviation {worst:.1e}"))
}

// 9 ------------------------------------------------------------------------

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_dayembed");
    let steps: &[&[&str]] = &[
        &["synth", "--participants", "6", "--days", "45", "--label-rate", "0.3"],
        &["daystrings"],
        &["train", "--epochs", "2", "--triplets-per-epoch", "96", "--batch-size", "32", "--d-model", "8", "--n-layers", "1", "--n-heads", "2", "--d-ff", "16", "--warmup-steps", "2"],
        &["embed"],
        &["sweep-k", "--k-max", "4"],
        &["cluster", "--k", "3", "--assignments-out", "out/assignments_k3.csv"],
        &["search", "--participant", "p001", "--date", "2021-08-14", "--top-k", "9"],
        &["similarity", "--stride", "10"],
        &["label-sim"],
        &["proportions"],
        &["tsne", "--perplexity", "10", "--n-iter", "300"],
        &["inspect-cluster", "--cluster", "0"],
    ];
    for step in steps {
        let out = Command::new(bin)
            .args(*step)
            .args(["--seed", "11", "--out-dir", "out"])
            .current_dir(dir)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{} failed: {}", step[0], String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
    }
    out
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let fa = files(&a.path().join("out"));
    let fb = files(&b.path().join("out"));
    ensure(fa.keys().eq(fb.keys()), "runs produced different file sets")?;
    for (name, bytes) in &fa {
        ensure(fb[name] == *bytes, format!("{name} differs between runs"))?;
    }
    for key in ["embeddings.jsonl", "assignments.csv", "label_similarity.json", "proportions.csv", "search.csv", "sweep.csv"] {
        ensure(fa.contains_key(key), format!("{key} missing"))?;
        ensure(fa.contains_key(&format!("{key}.manifest.json")), format!("{key} has no manifest"))?;
    }
    let store = EmbeddingStore::read_jsonl(&fa["embeddings.jsonl"][..]).map_err(|e| e.to_string())?;
    let _: &[EmbeddingRecord] = store.records();
    Ok(format!("{} files byte-identical across two runs ({} embedded days)", fa.len(), store.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, u64, fn() -> Check); 9] = [
        ("preprocessing oracle", 10, preprocessing),
        ("triplet constraint audit", 30, triplet_audit),
        ("gradient correctness", 60, gradient_correctness),
        ("optimizer and schedule oracles", 10, optimizer_oracles),
        ("metric-learning efficacy", 300, efficacy),
        ("clustering recovery", 60, clustering),
        ("t-SNE correctness", 120, tsne_checks),
        ("analytics oracles", 30, analytics_oracles),
        ("pipeline determinism", 300, determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let over = elapsed > Duration::from_secs(*budget);
        let (ok, detail) = match result {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; exceeded {budget} s budget")),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {n} ({name}): {detail} [{:.1} s / {budget} s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Embeds a cohort and picks the number of clusters by silhouette.
//!
//! ```text
//! cargo run --release --example cluster_sweep
//! ```

use std::collections::BTreeMap;

use dayembed::cluster::{self, KMeansOptions};
use dayembed::daystring::{self, DayStringRecord, Vocabulary, WINDOW_MINUTES};
use dayembed::encoder::{self, EncoderConfig};
use dayembed::synth::{self, CohortConfig};
use dayembed::{cli, ingest, seed};

fn main() -> dayembed::Result<()> {
    let vocab = Vocabulary::default();
    let cohort = synth::generate_cohort(&CohortConfig { n_participants: 12, days: synth::DaysPerParticipant::Fixed(40), ..CohortConfig::two_regime(3) })?;
    let seqs = daystring::aggregate_days(&ingest::group_days(&cohort.events), &vocab, WINDOW_MINUTES, 3)?;
    let records: Vec<DayStringRecord> = seqs.iter().map(DayStringRecord::from).collect();

    // an untrained encoder already separates the two regimes
    let enc = EncoderConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, ..EncoderConfig::for_vocabulary(&vocab) };
    let params = encoder::init_params_seeded(&enc, 3)?;
    let store = cli::embed_records(&params, &enc, &vocab, &records)?;

    let (z, _) = cluster::standardize(&store.matrix())?;
    let sweep = cluster::sweep_k(&z, 2..=6, &mut seed::rng_from_seed(3), &KMeansOptions::default())?;
    for row in &sweep.rows {
        println!("k={} silhouette={:.3} inertia={:.1}", row.k, row.silhouette, row.inertia);
    }

    let regime: BTreeMap<_, _> = cohort.manifest.iter().map(|m| ((m.participant_id.as_str(), m.date), m.regime.as_str())).collect();
    let mut table: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    for (r, &c) in store.records().iter().zip(&sweep.best().labels) {
        *table.entry((c, regime[&(r.participant_id.as_str(), r.date)])).or_default() += 1;
    }
    println!("best k = {}", sweep.best_k);
    for ((c, reg), n) in table {
        println!("cluster {c} {reg:>10} {n}");
    }
    Ok(())
}

//! Finds the days most similar to a query day.
//!
//! ```text
//! cargo run --release --example vector_search
//! ```

use std::collections::BTreeMap;

use dayembed::analytics::{self, Query};
use dayembed::daystring::{self, DayStringRecord, Vocabulary, WINDOW_MINUTES};
use dayembed::encoder::{self, EncoderConfig};
use dayembed::synth::{self, CohortConfig};
use dayembed::{cli, ingest};

fn main() -> dayembed::Result<()> {
    let vocab = Vocabulary::default();
    let cohort = synth::generate_cohort(&CohortConfig { n_participants: 10, days: synth::DaysPerParticipant::Fixed(30), ..CohortConfig::two_regime(4) })?;
    let seqs = daystring::aggregate_days(&ingest::group_days(&cohort.events), &vocab, WINDOW_MINUTES, 4)?;
    let records: Vec<DayStringRecord> = seqs.iter().map(DayStringRecord::from).collect();
    let enc = EncoderConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, ..EncoderConfig::for_vocabulary(&vocab) };
    let store = cli::embed_records(&encoder::init_params_seeded(&enc, 4)?, &enc, &vocab, &records)?;

    let regime: BTreeMap<_, _> = cohort.manifest.iter().map(|m| ((m.participant_id.clone(), m.date), m.regime.clone())).collect();
    let q = &store.records()[0];
    println!("query {} {} ({})", q.participant_id, q.date, regime[&(q.participant_id.clone(), q.date)]);
    let hits = analytics::search(&store, Query::Day { participant_id: &q.participant_id, date: q.date }, analytics::DEFAULT_TOP_K, true)?;
    for h in hits {
        println!("{:>2}. {} {} cos={:.4} ({})", h.rank, h.participant_id, h.date, h.similarity, regime[&(h.participant_id.clone(), h.date)]);
    }

    let m = analytics::participant_similarity_matrix(&store, &q.participant_id, 10)?;
    println!("self-similarity of {} every 10 days:", q.participant_id);
    for (d, row) in m.dates.iter().zip(&m.values) {
        println!("  {d} {:?}", row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }
    Ok(())
}

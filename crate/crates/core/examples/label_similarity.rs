//! Compares positive-positive and positive-negative day similarity.
//!
//! ```text
//! cargo run --release --example label_similarity
//! ```

use dayembed::analytics;
use dayembed::daystring::{self, DayStringRecord, Vocabulary, WINDOW_MINUTES};
use dayembed::encoder::{self, EncoderConfig};
use dayembed::synth::{self, CohortConfig};
use dayembed::{cli, ingest};

fn main() -> dayembed::Result<()> {
    let vocab = Vocabulary::default();
    let config = CohortConfig { n_participants: 10, days: synth::DaysPerParticipant::Fixed(60), label_rate: 0.3, ..CohortConfig::two_regime(6) };
    let cohort = synth::generate_cohort(&config)?;
    let seqs = daystring::aggregate_days(&ingest::group_days(&cohort.events), &vocab, WINDOW_MINUTES, 6)?;
    let records: Vec<DayStringRecord> = seqs.iter().map(DayStringRecord::from).collect();
    let enc = EncoderConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, ..EncoderConfig::for_vocabulary(&vocab) };
    let store = cli::embed_records(&encoder::init_params_seeded(&enc, 6)?, &enc, &vocab, &records)?;

    let report = analytics::label_similarity(&store, &cohort.labels)?;
    println!(
        "{} participants kept, {} positive and {} negative days",
        report.retained_participants, report.retained_positive_days, report.retained_negative_days
    );
    for p in &report.participants {
        println!("{} pos-pos {:.3} pos-neg {:.3}", p.participant_id, p.positive_positive, p.positive_negative);
    }
    if let (Some(pp), Some(pn)) = (report.positive_positive, report.positive_negative) {
        println!("overall pos-pos {:.3} ± {:.3}, pos-neg {:.3} ± {:.3}", pp.mean, pp.std, pn.mean, pn.std);
    }
    Ok(())
}

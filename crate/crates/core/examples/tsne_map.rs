//! Projects day embeddings to two dimensions and writes the map as CSV.
//!
//! ```text
//! cargo run --release --example tsne_map
//! ```

use dayembed::daystring::{self, DayStringRecord, Vocabulary, WINDOW_MINUTES};
use dayembed::encoder::{self, EncoderConfig};
use dayembed::synth::{self, CohortConfig};
use dayembed::tsne::{self, TsneConfig};
use dayembed::{cli, ingest};

fn main() -> dayembed::Result<()> {
    let vocab = Vocabulary::default();
    let cohort = synth::generate_cohort(&CohortConfig { n_participants: 6, days: synth::DaysPerParticipant::Fixed(25), ..CohortConfig::two_regime(5) })?;
    let seqs = daystring::aggregate_days(&ingest::group_days(&cohort.events), &vocab, WINDOW_MINUTES, 5)?;
    let records: Vec<DayStringRecord> = seqs.iter().map(DayStringRecord::from).collect();
    let enc = EncoderConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, ..EncoderConfig::for_vocabulary(&vocab) };
    let store = cli::embed_records(&encoder::init_params_seeded(&enc, 5)?, &enc, &vocab, &records)?;

    let cfg = TsneConfig { perplexity: 20.0, seed: 5, ..TsneConfig::default() };
    let fit = tsne::tsne_fit(&store.matrix(), &cfg)?;
    let kl = &fit.kl_history;
    println!("{} points, KL {:.3} at iteration {} -> {:.3} at the end", fit.y.len(), kl[cfg.exaggeration_iters], cfg.exaggeration_iters, kl[kl.len() - 1]);

    let keys: Vec<_> = store.records().iter().map(|r| (r.participant_id.clone(), r.date)).collect();
    let path = std::env::temp_dir().join("dayembed-tsne.csv");
    let file = std::fs::File::create(&path).map_err(|e| dayembed::Error::io(&path, e))?;
    tsne::write_coordinates(file, &keys, &fit.y)?;
    println!("wrote {}", path.display());
    Ok(())
}

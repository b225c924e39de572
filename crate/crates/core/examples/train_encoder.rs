//! Trains a small encoder with the triplet objective and saves a checkpoint.
//!
//! ```text
//! cargo run --release --example train_encoder
//! ```

use dayembed::daystring::{self, DayStringRecord, Vocabulary, WINDOW_MINUTES};
use dayembed::encoder::{self, EncoderConfig};
use dayembed::ingest;
use dayembed::synth::{self, CohortConfig};
use dayembed::trainer::{self, TrainConfig, TrainingCorpus};

fn main() -> dayembed::Result<()> {
    let vocab = Vocabulary::default();
    let cohort = synth::generate_cohort(&CohortConfig::two_regime(1))?;
    let seqs = daystring::aggregate_days(&ingest::group_days(&cohort.events), &vocab, WINDOW_MINUTES, 1)?;
    let records: Vec<DayStringRecord> = seqs.iter().map(DayStringRecord::from).collect();
    let corpus = TrainingCorpus::from_records(&records, &vocab)?;

    let enc = EncoderConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, ..EncoderConfig::for_vocabulary(&vocab) };
    let cfg = TrainConfig {
        triplets_per_epoch: 32 * 150,
        batch_size: 32,
        learning_rate: 3e-3,
        warmup_steps: 15,
        ..TrainConfig::desk(corpus.len(), 2, 1)
    };
    println!("{} days, {} participants, {} steps", corpus.len(), corpus.num_participants(), cfg.planned_steps());

    let dir = std::env::temp_dir().join("dayembed-train-example");
    std::fs::create_dir_all(&dir).map_err(|e| dayembed::Error::io(&dir, e))?;
    let out = trainer::train(&corpus, &enc, &cfg, None, |epoch, params| {
        let path = dir.join(format!("model-epoch{epoch}.ckpt"));
        println!("epoch {epoch} done, saving {}", path.display());
        encoder::save_checkpoint(params, &enc, &path)
    })?;

    let (first, last) = trainer::loss_trend(&out.history, 50).expect("enough steps");
    println!("mean loss over first 50 steps {first:.4}, last 50 steps {last:.4}");
    Ok(())
}

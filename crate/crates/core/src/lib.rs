//! Self-supervised embeddings of daily in-home activity.
//!
//! Raw location events are aggregated into 20-minute day-strings, encoded by a
//! small transformer trained with a triplet objective, and the resulting day
//! vectors are clustered, searched, and projected for inspection.
//!
//! ```no_run
//! use dayembed::{daystring, ingest, seed};
//! let events = ingest::parse_events(std::fs::File::open("events.csv")?)?;
//! let vocab = daystring::Vocabulary::default();
//! let days = ingest::group_days(&events);
//! let seqs = daystring::aggregate_days(&days, &vocab, daystring::WINDOW_MINUTES, 7)?;
//! # let _ = (seqs, seed::derive_seed(7, "x", "y"));
//! # Ok::<(), dayembed::Error>(())
//! ```

pub mod analytics;
pub mod cli;
pub mod cluster;
pub mod daystring;
pub mod encoder;
pub mod error;
pub mod ingest;
pub mod seed;
pub mod synth;
pub mod trainer;
pub mod tsne;

pub use error::{Error, Result};

//! Generates a labelled synthetic cohort and summarises it.
//!
//! ```text
//! cargo run --release --example synthetic_cohort
//! ```

use std::collections::BTreeMap;

use dayembed::ingest::Polarity;
use dayembed::synth::{self, CohortConfig};

fn main() -> dayembed::Result<()> {
    let cohort = synth::generate_cohort(&CohortConfig::two_regime(7))?;
    println!("{} events, {} participant-days", cohort.events.len(), cohort.manifest.len());

    let mut per_regime: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for row in &cohort.manifest {
        let e = per_regime.entry(&row.regime).or_default();
        e.0 += 1;
        match row.label {
            Some(Polarity::Positive) => e.1 += 1,
            Some(Polarity::Negative) => e.2 += 1,
            None => {}
        }
    }
    for (regime, (days, pos, neg)) in per_regime {
        println!("{regime:>10}: {days} days, {pos} positive, {neg} negative labels");
    }

    let plans = synth::plan_cohort(&CohortConfig::paper_scale(7))?;
    let total: usize = plans.iter().map(|p| p.n_days).sum();
    println!("large preset would plan {} participants and {total} days", plans.len());
    Ok(())
}

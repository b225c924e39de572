//! Turns raw sensor readings into fixed-length day strings.
//!
//! ```text
//! cargo run --example day_strings
//! ```

use dayembed::daystring::{self, Vocabulary, WINDOW_MINUTES};
use dayembed::ingest;

const EVENTS: &str = "\
participant_id,timestamp,location
p1,2022-03-01T06:05:00Z,Bedroom
p1,2022-03-01T06:12:00Z,Bathroom
p1,2022-03-01T06:15:00Z,Bathroom
p1,2022-03-01T07:30:00Z,Kitchen
p1,2022-03-01T07:41:00Z,Kitchen
p1,2022-03-01T12:02:00Z,Lounge
p1,2022-03-01T12:03:00Z,Kitchen
p1,2022-03-03T22:50:00Z,Bedroom
p2,2022-03-01T09:00:00Z,Hallway
";

fn main() -> dayembed::Result<()> {
    let events = ingest::parse_events(EVENTS.as_bytes())?;
    let vocab = Vocabulary::default();
    let report = ingest::validate_events(&events, &Default::default());
    println!("{} events, {} findings", report.total_events, report.findings());

    // fill the unobserved 2 March so every calendar day gets a string
    let days = ingest::dense_calendar(ingest::group_days(&events));
    for seq in daystring::aggregate_days(&days, &vocab, WINDOW_MINUTES, 0)? {
        let busy: Vec<String> = seq
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| *t != daystring::NOWHERE)
            .map(|(w, t)| format!("{:02}:{:02} {t}", w * 20 / 60, w * 20 % 60))
            .collect();
        println!("{} {} -> {} windows, active: {:?}", seq.participant_id, seq.date, seq.tokens.len(), busy);
    }
    Ok(())
}

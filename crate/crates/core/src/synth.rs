//! Synthetic cohorts with planted daily-routine regimes.
//!
//! Each participant follows one regime template (optionally switching once
//! mid-series), perturbed by a per-participant location preference. Labelled
//! positive days get extra night-time bathroom activity. The manifest records
//! the ground truth for every generated day.

use std::io::{BufRead, Write};

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{LabelSet, Polarity, SensorEvent};
use crate::seed::{self, Rng};

pub const SYNTH_LOCATIONS: [&str; 6] = ["Lounge", "Kitchen", "Hallway", "Bedroom", "Bathroom", "Bed"];
const BATHROOM: usize = 4;
pub const BLOCKS_PER_DAY: usize = 12;
const WINDOWS_PER_BLOCK: usize = 6;
const WINDOW_SECONDS: i64 = 20 * 60;
/// Blocks treated as night for label perturbation: 22:00–06:00.
const NIGHT_BLOCKS: [usize; 4] = [11, 0, 1, 2];

/// A daily routine: per 2-hour block, the probability that a 20-minute
/// window has any activity and the location distribution of its events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeTemplate {
    pub id: String,
    /// `[block][location]`, each row summing to 1, locations as in [`SYNTH_LOCATIONS`].
    pub locations: Vec<Vec<f64>>,
    pub activity: Vec<f64>,
    /// Mean events per active window.
    pub event_rate: f64,
}

impl RegimeTemplate {
    fn from_spans(id: &str, spans: &[(std::ops::Range<usize>, f64, [f64; 6])], event_rate: f64) -> Self {
        let mut locations = vec![vec![0.0; 6]; BLOCKS_PER_DAY];
        let mut activity = vec![0.0; BLOCKS_PER_DAY];
        for (range, act, dist) in spans {
            for b in range.clone() {
                let total: f64 = dist.iter().sum();
                locations[b] = dist.iter().map(|w| w / total).collect();
                activity[b] = *act;
            }
        }
        Self { id: id.to_string(), locations, activity, event_rate }
    }

    /// Up in the morning, kitchen and lounge through the day, asleep at night.
    pub fn daytime() -> Self {
        Self::from_spans(
            "daytime",
            &[
                (0..3, 0.25, [0.0, 0.0, 0.05, 0.15, 0.1, 0.7]),
                (3..5, 0.9, [0.05, 0.4, 0.2, 0.15, 0.2, 0.0]),
                (5..9, 0.85, [0.35, 0.35, 0.2, 0.0, 0.1, 0.0]),
                (9..11, 0.8, [0.6, 0.2, 0.1, 0.0, 0.1, 0.0]),
                (11..12, 0.5, [0.0, 0.0, 0.1, 0.4, 0.1, 0.4]),
            ],
            2.5,
        )
    }

    /// Late nights in the lounge, mornings in bed, afternoons in the bedroom.
    pub fn nocturnal() -> Self {
        Self::from_spans(
            "nocturnal",
            &[
                (0..2, 0.7, [0.6, 0.2, 0.2, 0.0, 0.0, 0.0]),
                (2..6, 0.35, [0.0, 0.0, 0.0, 0.2, 0.1, 0.7]),
                (6..10, 0.6, [0.2, 0.05, 0.1, 0.45, 0.2, 0.0]),
                (10..12, 0.8, [0.5, 0.3, 0.2, 0.0, 0.0, 0.0]),
            ],
            2.5,
        )
    }

    /// Little recorded activity, mostly passing through the hallway.
    pub fn sparse() -> Self {
        Self::from_spans(
            "sparse",
            &[
                (0..6, 0.05, [0.1, 0.1, 0.5, 0.1, 0.1, 0.1]),
                (6..12, 0.15, [0.1, 0.2, 0.5, 0.1, 0.1, 0.0]),
            ],
            1.5,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.locations.len() != BLOCKS_PER_DAY || self.activity.len() != BLOCKS_PER_DAY {
            return Err(Error::InvalidConfig(format!("regime {} must have {BLOCKS_PER_DAY} blocks", self.id)));
        }
        for row in &self.locations {
            if row.len() != SYNTH_LOCATIONS.len() || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidConfig(format!("regime {} has an invalid location distribution", self.id)));
            }
        }
        if self.activity.iter().any(|a| !(0.0..=1.0).contains(a)) || !(self.event_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("regime {} has invalid rates", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DaysPerParticipant {
    Fixed(usize),
    /// Left-skewed spread around a median, clipped to `[min, max]`: draws are
    /// `max + min − LogNormal(ln(max + min − median), sigma)`.
    Skewed { median: f64, min: usize, max: usize, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n_participants: usize,
    pub days: DaysPerParticipant,
    pub regimes: Vec<RegimeTemplate>,
    /// Chance that a participant switches regime once, somewhere in the middle half.
    pub switch_probability: f64,
    /// Chance that a day carries a label (then positive or negative with equal odds).
    pub label_rate: f64,
    /// Multiplier on night-time bathroom activity for positive days.
    pub positive_bathroom_factor: f64,
    /// Spread of the per-participant log-weights on locations.
    pub individuality: f64,
    pub start: NaiveDate,
    /// Participants start on a uniform offset in `0..=start_jitter_days`.
    pub start_jitter_days: i64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self::two_regime(0)
    }
}

impl CohortConfig {
    /// 30 participants × 120 days split evenly between two regimes, no switches.
    pub fn two_regime(seed: u64) -> Self {
        Self {
            n_participants: 30,
            days: DaysPerParticipant::Fixed(120),
            regimes: vec![RegimeTemplate::daytime(), RegimeTemplate::nocturnal()],
            switch_probability: 0.0,
            label_rate: 0.05,
            positive_bathroom_factor: 4.0,
            individuality: 0.5,
            start: NaiveDate::from_ymd_opt(2021, 7, 1).expect("valid date"),
            start_jitter_days: 30,
            seed,
        }
    }

    /// Cohort sized like the reference study: 134 participants, day counts
    /// centred on a median of 513 within [5, 943], spread over 2021-07-01 to
    /// 2024-01-30.
    pub fn paper_scale(seed: u64) -> Self {
        Self {
            n_participants: 134,
            days: DaysPerParticipant::Skewed { median: 513.0, min: 5, max: 943, sigma: 0.31 },
            regimes: vec![RegimeTemplate::daytime(), RegimeTemplate::nocturnal(), RegimeTemplate::sparse()],
            switch_probability: 0.2,
            label_rate: 0.01,
            start_jitter_days: 0,
            ..Self::two_regime(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_participants < 2 {
            return Err(Error::InvalidConfig("need at least two participants".into()));
        }
        match self.days {
            DaysPerParticipant::Fixed(d) if d < 2 => return Err(Error::InvalidConfig("need at least two days".into())),
            DaysPerParticipant::Skewed { min, max, median, sigma } => {
                if min < 2 || max < min || !(median > min as f64 && median < max as f64) || !(sigma > 0.0) {
                    return Err(Error::InvalidConfig("invalid day-count distribution".into()));
                }
            }
            _ => {}
        }
        if self.regimes.is_empty() {
            return Err(Error::InvalidConfig("need at least one regime".into()));
        }
        self.regimes.iter().try_for_each(RegimeTemplate::validate)?;
        for (name, p) in [("switch_probability", self.switch_probability), ("label_rate", self.label_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        if !(self.positive_bathroom_factor > 0.0) || !(self.individuality >= 0.0) || self.start_jitter_days < 0 {
            return Err(Error::InvalidConfig("invalid perturbation settings".into()));
        }
        Ok(())
    }
}

pub fn participant_id(index: usize) -> String {
    format!("p{:03}", index + 1)
}

/// Where and for how long a participant is observed, and which regime they follow.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantPlan {
    pub participant_id: String,
    pub start: NaiveDate,
    pub n_days: usize,
    pub regime: usize,
    /// `(day index, new regime)` for a mid-series switch.
    pub switch: Option<(usize, usize)>,
    /// Multiplicative location preferences.
    pub preference: Vec<f64>,
}

impl ParticipantPlan {
    pub fn regime_on(&self, day: usize) -> usize {
        match self.switch {
            Some((at, r)) if day >= at => r,
            _ => self.regime,
        }
    }
}

fn plan_participant(config: &CohortConfig, index: usize, rng: &mut Rng) -> ParticipantPlan {
    let n_days = match config.days {
        DaysPerParticipant::Fixed(d) => d,
        DaysPerParticipant::Skewed { median, min, max, sigma } => {
            let reflect = (max + min) as f64;
            let tail = LogNormal::new((reflect - median).ln(), sigma).expect("valid lognormal");
            (reflect - tail.sample(rng)).round().clamp(min as f64, max as f64) as usize
        }
    };
    let jitter = match config.days {
        DaysPerParticipant::Skewed { max, .. } => (max - n_days) as i64,
        DaysPerParticipant::Fixed(_) => config.start_jitter_days,
    };
    let start = config.start + Duration::days(rng.random_range(0..=jitter));
    let regime = index % config.regimes.len();
    let switch = if config.regimes.len() > 1 && n_days >= 4 && rng.random::<f64>() < config.switch_probability {
        let at = rng.random_range(n_days / 4..=3 * n_days / 4);
        let mut to = rng.random_range(0..config.regimes.len() - 1);
        if to >= regime {
            to += 1;
        }
        Some((at, to))
    } else {
        None
    };
    let normal = Normal::new(0.0, config.individuality.max(f64::MIN_POSITIVE)).expect("valid normal");
    let preference = SYNTH_LOCATIONS.iter().map(|_| normal.sample(rng).exp()).collect();
    ParticipantPlan { participant_id: participant_id(index), start, n_days, regime, switch, preference }
}

fn participant_rng(config: &CohortConfig, index: usize) -> Rng {
    seed::derive_rng(config.seed, "synth", &participant_id(index))
}

/// Per-participant plans, drawn from each participant's own rng stream.
pub fn plan_cohort(config: &CohortConfig) -> Result<Vec<ParticipantPlan>> {
    config.validate()?;
    Ok((0..config.n_participants).map(|i| plan_participant(config, i, &mut participant_rng(config, i))).collect())
}

/// Ground truth for one generated day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub participant_id: String,
    pub date: NaiveDate,
    pub regime: String,
    pub label: Option<Polarity>,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub events: Vec<SensorEvent>,
    pub labels: LabelSet,
    pub manifest: Vec<ManifestRow>,
}

fn sample_index(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if acc > target && w > 0.0 {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).expect("positive weight")
}

fn generate_participant(config: &CohortConfig, index: usize) -> (Vec<SensorEvent>, Vec<ManifestRow>) {
    let mut rng = participant_rng(config, index);
    let plan = plan_participant(config, index, &mut rng);
    let mut events = Vec::new();
    let mut manifest = Vec::with_capacity(plan.n_days);
    for day in 0..plan.n_days {
        let date = plan.start + Duration::days(day as i64);
        let regime = &config.regimes[plan.regime_on(day)];
        let label = if rng.random::<f64>() < config.label_rate {
            Some(if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative })
        } else {
            None
        };
        let midnight = Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"));
        let poisson = Poisson::new(regime.event_rate).expect("positive rate");
        for block in 0..BLOCKS_PER_DAY {
            let mut weights: Vec<f64> =
                regime.locations[block].iter().zip(&plan.preference).map(|(p, w)| p * w).collect();
            let mut activity = regime.activity[block];
            if label == Some(Polarity::Positive) && NIGHT_BLOCKS.contains(&block) {
                let base = weights[BATHROOM].max(0.05 * weights.iter().sum::<f64>());
                weights[BATHROOM] = base * config.positive_bathroom_factor;
                activity = (activity * config.positive_bathroom_factor).min(1.0);
            }
            for w in 0..WINDOWS_PER_BLOCK {
                if rng.random::<f64>() >= activity {
                    continue;
                }
                let window = (block * WINDOWS_PER_BLOCK + w) as i64;
                let count = (poisson.sample(&mut rng) as usize).clamp(1, WINDOW_SECONDS as usize);
                let mut offsets = rand::seq::index::sample(&mut rng, WINDOW_SECONDS as usize, count).into_vec();
                offsets.sort_unstable();
                for off in offsets {
                    let off = off as i64;
                    let loc = SYNTH_LOCATIONS[sample_index(&weights, &mut rng)];
                    let ts = midnight + Duration::seconds(window * WINDOW_SECONDS + off);
                    events.push(SensorEvent::new(plan.participant_id.clone(), ts, loc));
                }
            }
        }
        manifest.push(ManifestRow { participant_id: plan.participant_id.clone(), date, regime: regime.id.clone(), label });
    }
    (events, manifest)
}

/// Generates events, labels, and manifest, ordered by (participant, time).
pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    config.validate()?;
    let parts: Vec<_> = (0..config.n_participants).into_par_iter().map(|i| generate_participant(config, i)).collect();
    let mut events = Vec::new();
    let mut manifest = Vec::new();
    let mut labels = LabelSet::new();
    for (e, m) in parts {
        events.extend(e);
        for row in &m {
            if let Some(l) = row.label {
                labels.insert(row.participant_id.clone(), row.date, l)?;
            }
        }
        manifest.extend(m);
    }
    Ok(Cohort { events, labels, manifest })
}

pub fn write_manifest<W: Write>(mut out: W, rows: &[ManifestRow]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Row { line: i as u64 + 1, message: e.to_string() })?);
    }
    Ok(rows)
}

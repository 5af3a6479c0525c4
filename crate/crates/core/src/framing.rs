//! Sample generation under different problem framings.
//!
//! A framing decides, for every admission, at which prediction times a
//! sample is taken and how it is labeled. Window-labeled framings mark a
//! sample at time `t` positive iff onset falls in `(t, t + prediction_window]`.
//! No framing emits a sample at or after onset, and every observation window
//! `[t − observation_window, t]` lies inside the admission.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Admission, AdmissionId, Cohort, EventKind, PatientId};
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::sepsis3::{SepsisLabel, SofaSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FramingKind {
    FixedTimeToOnset,
    SlidingWindow,
    SlidingWindowDynamicInclusion,
    OnClinicalDemand,
    AtEvent,
    RandomTimeToOnset,
}

/// Names of the sequential framings, recognized only to be rejected: they
/// need sequence learners rather than independent samples.
pub const UNSUPPORTED_SEQUENTIAL: [&str; 2] = [
    "sequential_prediction_window",
    "sequential_entire_admission",
];

impl FramingKind {
    pub const ALL: [FramingKind; 6] = [
        FramingKind::FixedTimeToOnset,
        FramingKind::SlidingWindow,
        FramingKind::SlidingWindowDynamicInclusion,
        FramingKind::OnClinicalDemand,
        FramingKind::AtEvent,
        FramingKind::RandomTimeToOnset,
    ];

    /// The four framings compared in the main experiment.
    pub const COMPARED: [FramingKind; 4] = [
        FramingKind::FixedTimeToOnset,
        FramingKind::SlidingWindow,
        FramingKind::SlidingWindowDynamicInclusion,
        FramingKind::OnClinicalDemand,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FramingKind::FixedTimeToOnset => "fixed_time_to_onset",
            FramingKind::SlidingWindow => "sliding_window",
            FramingKind::SlidingWindowDynamicInclusion => "sliding_window_dynamic_inclusion",
            FramingKind::OnClinicalDemand => "on_clinical_demand",
            FramingKind::AtEvent => "at_event",
            FramingKind::RandomTimeToOnset => "random_time_to_onset",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            FramingKind::FixedTimeToOnset => "Fixed time to onset",
            FramingKind::SlidingWindow => "Sliding window",
            FramingKind::SlidingWindowDynamicInclusion => "Sliding window w. D.I.",
            FramingKind::OnClinicalDemand => "On clinical demand",
            FramingKind::AtEvent => "At event",
            FramingKind::RandomTimeToOnset => "Random time to onset",
        }
    }
}

impl fmt::Display for FramingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FramingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(k) = FramingKind::ALL.into_iter().find(|k| k.as_str() == s) {
            return Ok(k);
        }
        if UNSUPPORTED_SEQUENTIAL.contains(&s) {
            return Err(Error::InvalidInput(format!(
                "framing {s} is sequential and not supported"
            )));
        }
        Err(Error::InvalidInput(format!("unknown framing {s:?}")))
    }
}

/// What anchors the prediction times of the at-event framing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    /// One sample once a full observation window has elapsed.
    Admission,
    Event(EventKind),
}

/// Length of the observation window the feature extractor is built for.
pub const OBSERVATION_WINDOW_H: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramingConfig {
    pub kind: FramingKind,
    pub horizon_h: f64,
    pub random_horizon_h: [f64; 2],
    pub chunk_h: f64,
    pub prediction_window_h: f64,
    pub observation_window_h: f64,
    pub trigger: Trigger,
    pub seed: u64,
}

impl FramingConfig {
    pub fn new(kind: FramingKind) -> Self {
        FramingConfig {
            kind,
            horizon_h: 12.0,
            random_horizon_h: [3.0, 24.0],
            chunk_h: 8.0,
            prediction_window_h: 24.0,
            observation_window_h: OBSERVATION_WINDOW_H,
            trigger: Trigger::Admission,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("horizon_h", self.horizon_h),
            ("chunk_h", self.chunk_h),
            ("prediction_window_h", self.prediction_window_h),
            ("observation_window_h", self.observation_window_h),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.observation_window_h != OBSERVATION_WINDOW_H {
            return Err(Error::Config(format!(
                "observation_window_h must be {OBSERVATION_WINDOW_H} (features use twelve hourly bins), got {}",
                self.observation_window_h
            )));
        }
        let [lo, hi] = self.random_horizon_h;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!(
                "random_horizon_h must be a positive range, got {:?}",
                self.random_horizon_h
            )));
        }
        Ok(())
    }

    fn labels_onset(&self, t: f64, onset: Option<f64>) -> bool {
        onset.is_some_and(|o| o > t && o <= t + self.prediction_window_h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub admission_id: AdmissionId,
    pub patient_id: PatientId,
    pub prediction_time: f64,
    pub observation_start: f64,
    pub label: bool,
    pub framing: FramingKind,
}

impl SampleSpec {
    fn new(a: &Admission, cfg: &FramingConfig, t: f64, label: bool) -> Self {
        SampleSpec {
            admission_id: a.id.clone(),
            patient_id: a.patient_id.clone(),
            prediction_time: t,
            observation_start: t - cfg.observation_window_h,
            label,
            framing: cfg.kind,
        }
    }

    pub fn observation_window(&self) -> (f64, f64) {
        (self.observation_start, self.prediction_time)
    }
}

fn admission_rng(a: &Admission, cfg: &FramingConfig) -> rand_chacha::ChaCha8Rng {
    seed::rng(cfg.seed, stream::FRAMING, seed::hash_str(&a.id.0))
}

/// Random prediction time for a negative admission, uniform over
/// `[observation_window, length_of_stay]`.
fn negative_time(a: &Admission, cfg: &FramingConfig, rng: &mut impl Rng) -> Option<f64> {
    let lo = cfg.observation_window_h;
    let hi = a.length_of_stay;
    if hi < lo {
        None
    } else if hi == lo {
        Some(lo)
    } else {
        Some(rng.gen_range(lo..=hi))
    }
}

fn time_to_onset(
    a: &Admission,
    lbl: &SepsisLabel,
    cfg: &FramingConfig,
    horizon: impl FnOnce(&mut rand_chacha::ChaCha8Rng) -> f64,
) -> Vec<SampleSpec> {
    let mut rng = admission_rng(a, cfg);
    // the negative draw comes first so both time-to-onset framings share it
    let negative = negative_time(a, cfg, &mut rng);
    match lbl.onset {
        Some(onset) => {
            let t = onset - horizon(&mut rng);
            if t >= cfg.observation_window_h && t <= a.length_of_stay {
                vec![SampleSpec::new(a, cfg, t, true)]
            } else {
                Vec::new()
            }
        }
        None => negative
            .map(|t| SampleSpec::new(a, cfg, t, false))
            .into_iter()
            .collect(),
    }
}

/// Positive admissions: one sample `horizon_h` before onset, skipped when its
/// observation window would start before admission. Negative admissions: one
/// sample at a seeded random time.
pub fn sample_fixed_time_to_onset(a: &Admission, lbl: &SepsisLabel, cfg: &FramingConfig) -> Vec<SampleSpec> {
    time_to_onset(a, lbl, cfg, |_| cfg.horizon_h)
}

/// Like the fixed framing, with the horizon drawn per positive admission
/// from `random_horizon_h`.
pub fn sample_random_time_to_onset(a: &Admission, lbl: &SepsisLabel, cfg: &FramingConfig) -> Vec<SampleSpec> {
    let [lo, hi] = cfg.random_horizon_h;
    time_to_onset(a, lbl, cfg, |rng| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
}

fn sliding_times(a: &Admission, lbl: &SepsisLabel, cfg: &FramingConfig) -> impl Iterator<Item = f64> {
    let first = (cfg.observation_window_h / cfg.chunk_h).ceil() as u64;
    let chunk = cfg.chunk_h;
    let los = a.length_of_stay;
    let onset = lbl.onset;
    (first..)
        .map(move |k| k as f64 * chunk)
        .take_while(move |&t| t <= los && onset.is_none_or(|o| t < o))
}

/// Prediction times at multiples of `chunk_h`, starting at the first multiple
/// that leaves room for a full observation window, up to discharge or onset.
pub fn sample_sliding_window(a: &Admission, lbl: &SepsisLabel, cfg: &FramingConfig) -> Vec<SampleSpec> {
    sliding_times(a, lbl, cfg)
        .map(|t| SampleSpec::new(a, cfg, t, cfg.labels_onset(t, lbl.onset)))
        .collect()
}

/// Sliding window restricted to prediction times at or after the first time
/// SOFA exceeds zero.
pub fn sample_sliding_window_dynamic(
    a: &Admission,
    lbl: &SepsisLabel,
    sofa: &SofaSeries,
    cfg: &FramingConfig,
) -> Vec<SampleSpec> {
    let Some(first) = sofa.first_positive_time() else {
        return Vec::new();
    };
    sliding_times(a, lbl, cfg)
        .filter(|&t| t >= first)
        .map(|t| SampleSpec::new(a, cfg, t, cfg.labels_onset(t, lbl.onset)))
        .collect()
}

fn at_times(
    a: &Admission,
    lbl: &SepsisLabel,
    cfg: &FramingConfig,
    times: impl Iterator<Item = f64>,
) -> Vec<SampleSpec> {
    let end = match lbl.onset {
        Some(o) => o.min(a.length_of_stay),
        None => a.length_of_stay,
    };
    times
        .filter(|&t| t >= cfg.observation_window_h && t < end)
        .map(|t| SampleSpec::new(a, cfg, t, cfg.labels_onset(t, lbl.onset)))
        .collect()
}

/// One sample per EWS assessment in `[observation_window, min(LOS, onset))`.
pub fn sample_on_clinical_demand(a: &Admission, lbl: &SepsisLabel, cfg: &FramingConfig) -> Vec<SampleSpec> {
    at_times(
        a,
        lbl,
        cfg,
        a.events_of(EventKind::EwsAssessment).map(|e| e.timestamp),
    )
}

/// Samples anchored to a chosen trigger: admission (one sample after the
/// first observation window) or every event of a given kind.
pub fn sample_at_event(a: &Admission, lbl: &SepsisLabel, cfg: &FramingConfig, trigger: Trigger) -> Vec<SampleSpec> {
    match trigger {
        Trigger::Admission => {
            let t = cfg.observation_window_h;
            let in_stay = t <= a.length_of_stay && lbl.onset.is_none_or(|o| t < o);
            if in_stay {
                vec![SampleSpec::new(a, cfg, t, cfg.labels_onset(t, lbl.onset))]
            } else {
                Vec::new()
            }
        }
        Trigger::Event(kind) => at_times(a, lbl, cfg, a.events_of(kind).map(|e| e.timestamp)),
    }
}

/// Dispatches on `cfg.kind`.
pub fn sample_admission(a: &Admission, lbl: &SepsisLabel, sofa: &SofaSeries, cfg: &FramingConfig) -> Vec<SampleSpec> {
    match cfg.kind {
        FramingKind::FixedTimeToOnset => sample_fixed_time_to_onset(a, lbl, cfg),
        FramingKind::SlidingWindow => sample_sliding_window(a, lbl, cfg),
        FramingKind::SlidingWindowDynamicInclusion => sample_sliding_window_dynamic(a, lbl, sofa, cfg),
        FramingKind::OnClinicalDemand => sample_on_clinical_demand(a, lbl, cfg),
        FramingKind::AtEvent => sample_at_event(a, lbl, cfg, cfg.trigger),
        FramingKind::RandomTimeToOnset => sample_random_time_to_onset(a, lbl, cfg),
    }
}

/// Samples for a whole cohort in admission order. `labels` is aligned with
/// `cohort.admissions` (see [`crate::sepsis3::label_cohort`]).
pub fn sample_cohort(
    cohort: &Cohort,
    labels: &[(SepsisLabel, SofaSeries)],
    cfg: &FramingConfig,
) -> Result<Vec<SampleSpec>> {
    cfg.validate()?;
    if labels.len() != cohort.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} admissions",
            labels.len(),
            cohort.len()
        )));
    }
    let per: Vec<Vec<SampleSpec>> = cohort
        .admissions
        .par_iter()
        .zip(labels.par_iter())
        .map(|(a, (lbl, sofa))| sample_admission(a, lbl, sofa, cfg))
        .collect();
    Ok(per.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassBalance {
    pub positives: usize,
    pub negatives: usize,
}

impl ClassBalance {
    pub fn of(samples: &[SampleSpec]) -> Self {
        let positives = samples.iter().filter(|s| s.label).count();
        ClassBalance {
            positives,
            negatives: samples.len() - positives,
        }
    }

    /// `n` in `1:n`; infinite when there are no positives.
    pub fn ratio(&self) -> f64 {
        if self.positives == 0 {
            f64::INFINITY
        } else {
            self.negatives as f64 / self.positives as f64
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.positives == 0
    }
}

impl fmt::Display for ClassBalance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positives == 0 {
            write!(f, "1:inf")
        } else {
            write!(f, "1:{:.2}", self.ratio())
        }
    }
}

pub fn class_balance(samples: &[SampleSpec]) -> ClassBalance {
    ClassBalance::of(samples)
}

const SAMPLE_HEADER: [&str; 5] = ["admission_id", "patient_id", "prediction_time_h", "label", "framing"];

pub fn write_samples_csv<W: Write>(samples: &[SampleSpec], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(SAMPLE_HEADER)?;
    for s in samples {
        w.write_record([
            s.admission_id.0.clone(),
            s.patient_id.0.clone(),
            s.prediction_time.to_string(),
            u8::from(s.label).to_string(),
            s.framing.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads samples written by [`write_samples_csv`]; observation windows are
/// rebuilt with `observation_window_h`.
pub fn read_samples_csv<R: Read>(source: R, observation_window_h: f64) -> Result<Vec<SampleSpec>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    if rdr.headers()?.iter().ne(SAMPLE_HEADER) {
        return Err(Error::Schema(format!("samples CSV header must be {}", SAMPLE_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec?;
        let t = rec[2]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::parse(line, format!("bad time {:?}", &rec[2])))?;
        let label = match &rec[3] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(line, format!("label must be 0 or 1, got {other:?}"))),
        };
        out.push(SampleSpec {
            admission_id: AdmissionId(rec[0].to_string()),
            patient_id: PatientId(rec[1].to_string()),
            prediction_time: t,
            observation_start: t - observation_window_h,
            label,
            framing: rec[4].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?,
        });
    }
    Ok(out)
}

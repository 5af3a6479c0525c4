//! Seeded synthetic ward cohorts.
//!
//! The generator mimics the structure of general-ward records rather than
//! their exact distributions: vitals are taken at EWS assessments a few times
//! a day (mostly during daytime rounds), labs come in morning panels with
//! parameter-specific sparsity, and a fraction of admissions carry a scripted
//! sepsis course. A scripted course pairs one culture with antibiotics, drives
//! a SOFA rise of several points just after the suspected-infection time and
//! lets vitals and inflammatory labs drift over the preceding 24 h. Some
//! negative admissions get unpaired or out-of-window cultures and antibiotics,
//! and some get a non-infectious deterioration episode.
//!
//! Every generated admission is checked against [`crate::sepsis3::sepsis_onset`]
//! and regenerated from a fresh sub-seed in the rare case the scripted label
//! and the labeler disagree, so the cohort is label-consistent by
//! construction.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{self, Admission, ClinicalEvent, Cohort, EventKind, Parameter};
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::sepsis3;

/// Share of admissions that belong to a patient seen before.
const READMISSION_SHARE: f64 = 0.34;
/// Share of negative admissions with an unpaired or out-of-window culture or
/// antibiotic.
const NEAR_MISS_SHARE: f64 = 0.20;
/// Share of negative admissions with a non-infectious deterioration episode.
const CONFOUNDER_SHARE: f64 = 0.20;
/// Deterioration builds up over this many hours before onset.
const DETERIORATION_LEAD_H: f64 = 24.0;
/// Shape of the build-up; below 1 the rise is front-loaded.
const RAMP_EXPONENT: f64 = 0.6;
/// Scales how far severity moves the physiology away from baseline.
const SEVERITY_EFFECT: f64 = 0.5;
const MAX_ATTEMPTS: u64 = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_admissions: usize,
    pub sepsis_prevalence: f64,
    pub los_hours: [f64; 2],
    pub vitals_per_day: [f64; 2],
    pub labs_per_day: [f64; 2],
    pub ews_assessments_per_day: [f64; 2],
    pub temperature_at_ews_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_admissions: 2000,
            sepsis_prevalence: 0.0625,
            los_hours: [24.0, 1200.0],
            vitals_per_day: [1.0, 8.0],
            labs_per_day: [1.0, 3.0],
            ews_assessments_per_day: [1.0, 8.0],
            temperature_at_ews_prob: 0.94,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(n_admissions: usize, seed: u64) -> Self {
        SynthConfig {
            n_admissions,
            seed,
            ..SynthConfig::default()
        }
    }

    /// Parses a flat `key = value` file (TOML syntax); missing keys take
    /// their defaults.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SynthConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, r: [f64; 2], min: f64| {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1]) {
                Err(Error::Config(format!("{name} must be a non-empty range >= {min}, got {r:?}")))
            } else {
                Ok(())
            }
        };
        range("los_hours", self.los_hours, 1.0)?;
        range("vitals_per_day", self.vitals_per_day, 0.0)?;
        range("labs_per_day", self.labs_per_day, 0.0)?;
        range("ews_assessments_per_day", self.ews_assessments_per_day, 1.0)?;
        if !(self.sepsis_prevalence >= 0.0 && self.sepsis_prevalence < 1.0) {
            return Err(Error::Config(format!(
                "sepsis_prevalence must be in [0, 1), got {}",
                self.sepsis_prevalence
            )));
        }
        if self.sepsis_prevalence > 0.0 && self.los_hours[1] < MIN_SEPTIC_STAY_H {
            return Err(Error::Config(format!(
                "septic admissions need stays of at least {MIN_SEPTIC_STAY_H} h; los_hours is {:?}",
                self.los_hours
            )));
        }
        if !(0.0..=1.0).contains(&self.temperature_at_ews_prob) {
            return Err(Error::Config("temperature_at_ews_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

const MIN_SEPTIC_STAY_H: f64 = 48.0;
const MIN_ONSET_H: f64 = 24.0;

/// The scripted course of a septic admission.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SepsisScript {
    pub onset_time: f64,
    pub si_culture_time: f64,
    pub si_abx_time: f64,
    /// `(time, total SOFA change at that time)` of the scripted organ
    /// dysfunction labs.
    pub sofa_step_times: Vec<(f64, i16)>,
    /// Scales the deterioration drifts, in `[0.4, 1.2]`.
    pub severity: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub cohort: Cohort,
    /// Aligned with `cohort.admissions`.
    pub scripts: Vec<Option<SepsisScript>>,
}

pub fn generate_cohort(cfg: &SynthConfig) -> Result<Cohort> {
    Ok(generate_with_scripts(cfg)?.cohort)
}

pub fn generate_with_scripts(cfg: &SynthConfig) -> Result<GeneratedCohort> {
    cfg.validate()?;
    let patients = assign_patients(cfg);
    let generated: Vec<(Admission, Option<SepsisScript>)> = (0..cfg.n_admissions)
        .into_par_iter()
        .map(|i| generate_admission(cfg, i, &patients[i]))
        .collect::<Result<_>>()?;
    let (admissions, scripts) = generated.into_iter().unzip();
    Ok(GeneratedCohort {
        cohort: Cohort::new(admissions, format!("synthgen seed={} n={}", cfg.seed, cfg.n_admissions))?,
        scripts,
    })
}

/// Writes the cohort as event CSV.
pub fn emit_event_csv<W: Write>(cohort: &Cohort, sink: W) -> Result<()> {
    cohort::write_event_csv(cohort, sink)
}

fn assign_patients(cfg: &SynthConfig) -> Vec<String> {
    let mut rng = seed::rng(cfg.seed, stream::PATIENTS, 0);
    let mut n_patients = 0usize;
    (0..cfg.n_admissions)
        .map(|_| {
            let p = if n_patients > 0 && rng.gen_bool(READMISSION_SHARE) {
                rng.gen_range(0..n_patients)
            } else {
                n_patients += 1;
                n_patients - 1
            };
            format!("P{p:05}")
        })
        .collect()
}

fn generate_admission(
    cfg: &SynthConfig,
    index: usize,
    patient: &str,
) -> Result<(Admission, Option<SepsisScript>)> {
    let septic = seed::rng(cfg.seed, stream::SEPSIS_DRAW, index as u64).gen_bool(cfg.sepsis_prevalence);
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seed::rng(cfg.seed, stream::ADMISSION, ((index as u64) << 16) | attempt);
        let (admission, script) = build_admission(cfg, &mut rng, index, patient, septic);
        let label = sepsis3::sepsis_onset(&admission);
        let expected = script.as_ref().map(|s| s.onset_time);
        if label.onset == expected {
            return Ok((admission, script));
        }
    }
    Err(Error::Integrity(format!(
        "admission {index}: no label-consistent draw in {MAX_ATTEMPTS} attempts"
    )))
}

/// Draw in `[lo, hi]` skewed toward `lo`.
fn skewed(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2], power: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>().powf(power)
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

fn hours(x: f64) -> f64 {
    round_to(x, 2)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream simple
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Population mean, between-patient sd, within-patient sd, decimals, and
/// full-severity sepsis shift (additive, or relative for `relative`).
struct Physiology {
    mean: f64,
    between_sd: f64,
    within_sd: f64,
    decimals: i32,
    shift: f64,
    relative: bool,
}

fn physiology(p: Parameter) -> Physiology {
    let add = |mean, between_sd, within_sd, decimals, shift| Physiology {
        mean,
        between_sd,
        within_sd,
        decimals,
        shift,
        relative: false,
    };
    let rel = |mean, between_sd, within_sd, decimals, shift| Physiology {
        mean,
        between_sd,
        within_sd,
        decimals,
        shift,
        relative: true,
    };
    match p {
        Parameter::SystolicBp => add(130.0, 15.0, 9.0, 0, -26.0),
        Parameter::DiastolicBp => add(75.0, 9.0, 6.0, 0, -13.0),
        Parameter::RespiratoryFrequency => add(16.0, 2.0, 2.0, 0, 8.0),
        Parameter::HeartRate => add(78.0, 10.0, 7.0, 0, 28.0),
        Parameter::SpO2 => add(96.8, 1.2, 1.1, 0, -5.0),
        Parameter::Temperature => add(36.8, 0.25, 0.3, 1, 1.5),
        Parameter::AbBicarbonate => add(24.0, 2.0, 1.0, 1, -4.0),
        Parameter::AbPo2 => add(11.5, 1.0, 0.6, 1, -2.5),
        Parameter::AbPco2 => add(5.2, 0.4, 0.3, 1, -0.7),
        Parameter::AbPh => add(7.41, 0.02, 0.015, 2, -0.06),
        Parameter::AbLactate => add(1.2, 0.3, 0.3, 1, 2.2),
        Parameter::AbSodium => add(139.0, 2.5, 1.0, 0, -2.0),
        Parameter::AbChloride => add(104.0, 2.5, 1.0, 0, 2.0),
        Parameter::AbPotassium => add(4.0, 0.3, 0.2, 1, 0.2),
        Parameter::Leukocytes => add(8.0, 2.0, 1.0, 1, 7.0),
        Parameter::Neutrophils => add(5.5, 1.5, 0.8, 1, 6.0),
        Parameter::Platelets => rel(250.0, 55.0, 12.0, 0, -0.35),
        Parameter::Sodium => add(139.0, 2.5, 1.0, 0, -2.0),
        Parameter::Albumin => add(36.0, 4.0, 1.5, 0, -4.0),
        Parameter::Creatinine => rel(85.0, 18.0, 6.0, 0, 0.45),
        Parameter::Bilirubin => add(10.0, 3.5, 2.0, 0, 8.0),
        Parameter::Potassium => add(4.0, 0.35, 0.2, 1, 0.2),
        Parameter::Glucose => add(6.5, 1.2, 1.0, 1, 1.5),
        Parameter::Crp => rel(12.0, 6.0, 3.0, 0, 12.0),
        Parameter::Egfr => add(0.0, 0.0, 0.0, 0, 0.0), // derived from creatinine
    }
}

/// Probability that a routine morning panel includes the parameter.
fn panel_probability(p: Parameter) -> f64 {
    match p {
        Parameter::Sodium | Parameter::Potassium | Parameter::Creatinine => 0.80,
        Parameter::Albumin => 0.72,
        Parameter::Leukocytes | Parameter::Crp => 0.75,
        Parameter::Egfr => 0.55,
        Parameter::Glucose => 0.50,
        Parameter::Platelets | Parameter::Bilirubin => 0.15,
        _ => 0.0,
    }
}

const BLOOD_GAS: [Parameter; 7] = [
    Parameter::AbBicarbonate,
    Parameter::AbPo2,
    Parameter::AbPco2,
    Parameter::AbPh,
    Parameter::AbLactate,
    Parameter::AbSodium,
    Parameter::AbPotassium,
];

const CO_MEASURED_AT_EWS: [Parameter; 5] = [
    Parameter::HeartRate,
    Parameter::RespiratoryFrequency,
    Parameter::SpO2,
    Parameter::SystolicBp,
    Parameter::DiastolicBp,
];

/// A time course of deterioration severity in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
struct Course {
    start: f64,
    peak: f64,
    end: f64,
    magnitude: f64,
}

impl Course {
    fn level(&self, t: f64) -> f64 {
        if t <= self.start || t >= self.end {
            0.0
        } else if t <= self.peak {
            self.magnitude * ((t - self.start) / (self.peak - self.start)).powf(RAMP_EXPONENT)
        } else {
            self.magnitude * (self.end - t) / (self.end - self.peak).max(1e-9)
        }
    }
}

struct Patient {
    baseline: [f64; cohort::N_PARAMETERS],
    courses: Vec<Course>,
}

impl Patient {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut baseline = [0.0; cohort::N_PARAMETERS];
        for p in Parameter::ALL {
            let ph = physiology(p);
            baseline[p.index()] = ph.mean + ph.between_sd * normal(rng);
        }
        let plt = Parameter::Platelets.index();
        if rng.gen_bool(0.10) {
            baseline[plt] = rng.gen_range(100.0..150.0);
        } else {
            baseline[plt] = baseline[plt].max(155.0);
        }
        if rng.gen_bool(0.12) {
            baseline[Parameter::Creatinine.index()] = rng.gen_range(112.0..190.0);
        }
        baseline[Parameter::SpO2.index()] = baseline[Parameter::SpO2.index()].min(99.0);
        Patient {
            baseline,
            courses: Vec::new(),
        }
    }

    fn severity(&self, t: f64) -> f64 {
        self.courses.iter().map(|c| c.level(t)).fold(0.0, f64::max)
    }

    fn value(&self, rng: &mut ChaCha8Rng, p: Parameter, t: f64) -> f64 {
        if p == Parameter::Egfr {
            let creat = self.value(rng, Parameter::Creatinine, t);
            return round_to((95.0 * (80.0 / creat).powf(1.15)).min(130.0), 0);
        }
        let ph = physiology(p);
        let s = self.severity(t) * SEVERITY_EFFECT;
        let base = self.baseline[p.index()];
        let mut v = if ph.relative {
            base * (1.0 + ph.shift * s)
        } else {
            base + ph.shift * s
        };
        v += ph.within_sd * normal(rng) * if ph.relative { base / ph.mean } else { 1.0 };
        let (lo, hi) = p.plausible_range();
        round_to(v.clamp(lo, hi), ph.decimals)
    }
}

fn build_admission(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    index: usize,
    patient_id: &str,
    septic: bool,
) -> (Admission, Option<SepsisScript>) {
    let los_range = if septic {
        [cfg.los_hours[0].max(MIN_SEPTIC_STAY_H), cfg.los_hours[1]]
    } else {
        cfg.los_hours
    };
    let los = hours(los_range[0] * (los_range[1] / los_range[0]).powf(rng.gen::<f64>().powf(1.5)));
    let clock_offset = rng.gen_range(0.0..24.0);
    let mut patient = Patient::draw(rng);
    let mut events = Vec::new();

    let script = if septic {
        let onset = hours(MIN_ONSET_H + (los - 6.0 - MIN_ONSET_H) * rng.gen::<f64>().powf(1.3));
        let severity = rng.gen_range(0.4..1.2);
        patient.courses.push(Course {
            start: onset - DETERIORATION_LEAD_H,
            peak: onset,
            end: onset + 96.0,
            magnitude: severity,
        });
        Some(script_infection(rng, &mut events, onset, los, severity))
    } else {
        if rng.gen_bool(NEAR_MISS_SHARE) {
            near_miss(rng, &mut events, los);
        }
        if rng.gen_bool(CONFOUNDER_SHARE) {
            let start = rng.gen_range(0.0..los);
            let rise = rng.gen_range(12.0..36.0);
            patient.courses.push(Course {
                start,
                peak: start + rise,
                end: start + rise + rng.gen_range(12.0..48.0),
                magnitude: rng.gen_range(0.2..0.4),
            });
        }
        None
    };

    let ews_times = ews_schedule(cfg, rng, &patient, los, clock_offset);
    for &t in &ews_times {
        events.push(ClinicalEvent::marker(t, EventKind::EwsAssessment));
        for p in CO_MEASURED_AT_EWS {
            events.push(ClinicalEvent::measurement(t, p, patient.value(rng, p, t)));
        }
        if rng.gen_bool(cfg.temperature_at_ews_prob) {
            let v = patient.value(rng, Parameter::Temperature, t);
            events.push(ClinicalEvent::measurement(t, Parameter::Temperature, v));
        }
    }
    sporadic_vitals(cfg, rng, &patient, los, &mut events);
    lab_panels(cfg, rng, &patient, los, clock_offset, &mut events);

    let mut script = script;
    if let Some(s) = script.as_mut() {
        organ_dysfunction_labs(rng, &patient, s, los, &mut events);
    }

    let admission = Admission::new(format!("A{index:06}"), patient_id.to_string(), los, events);
    if let Some(s) = script.as_mut() {
        let timeline = sepsis3::SofaTimeline::from_admission(&admission);
        for step in s.sofa_step_times.iter_mut() {
            let after = i16::from(timeline.total_at(step.0));
            let before = timeline
                .changes
                .iter()
                .rev()
                .find(|(t, _)| *t < step.0)
                .map_or(0, |(_, sub)| i16::from(sub.total()));
            step.1 = after - before;
        }
    }
    (admission, script)
}

fn script_infection(
    rng: &mut ChaCha8Rng,
    events: &mut Vec<ClinicalEvent>,
    onset: f64,
    los: f64,
    severity: f64,
) -> SepsisScript {
    let (culture, first_abx) = if rng.gen_bool(0.6) {
        (onset, hours(onset + rng.gen_range(0.0..4.0)))
    } else {
        (hours(onset + rng.gen_range(0.1..4.0)), onset)
    };
    events.push(ClinicalEvent::marker(culture, EventKind::Culture));
    let mut t = first_abx;
    for _ in 0..6 {
        if t > los {
            break;
        }
        events.push(ClinicalEvent::marker(t, EventKind::Antibiotic));
        t = hours(t + 8.0);
    }
    SepsisScript {
        onset_time: onset,
        si_culture_time: culture,
        si_abx_time: first_abx,
        sofa_step_times: Vec::new(),
        severity,
    }
}

fn organ_dysfunction_labs(
    rng: &mut ChaCha8Rng,
    patient: &Patient,
    script: &mut SepsisScript,
    los: f64,
    events: &mut Vec<ClinicalEvent>,
) {
    let t = hours(script.onset_time + rng.gen_range(1.0..(los - script.onset_time).min(5.0)));
    events.push(ClinicalEvent::measurement(t, Parameter::Platelets, round_to(rng.gen_range(25.0..45.0), 0)));
    let creat = round_to(rng.gen_range(180.0..290.0), 0);
    events.push(ClinicalEvent::measurement(t, Parameter::Creatinine, creat));
    events.push(ClinicalEvent::measurement(
        t,
        Parameter::Egfr,
        round_to((95.0 * (80.0 / creat).powf(1.15)).min(130.0), 0),
    ));
    for p in [Parameter::Crp, Parameter::Leukocytes, Parameter::Bilirubin] {
        events.push(ClinicalEvent::measurement(t, p, patient.value(rng, p, t)));
    }
    for p in BLOOD_GAS {
        events.push(ClinicalEvent::measurement(t, p, patient.value(rng, p, t)));
    }
    script.sofa_step_times.push((t, 0));
}

fn near_miss(rng: &mut ChaCha8Rng, events: &mut Vec<ClinicalEvent>, los: f64) {
    let t0 = hours(rng.gen_range(0.0..los));
    match rng.gen_range(0..4) {
        0 => events.push(ClinicalEvent::marker(t0, EventKind::Culture)),
        1 => events.push(ClinicalEvent::marker(t0, EventKind::Antibiotic)),
        2 => {
            let late = hours(t0 + rng.gen_range(73.0..120.0));
            events.push(ClinicalEvent::marker(t0, EventKind::Culture));
            if late <= los {
                events.push(ClinicalEvent::marker(late, EventKind::Antibiotic));
            }
        }
        _ => {
            let late = hours(t0 + rng.gen_range(25.0..48.0));
            events.push(ClinicalEvent::marker(t0, EventKind::Antibiotic));
            if late <= los {
                events.push(ClinicalEvent::marker(late, EventKind::Culture));
            }
        }
    }
}

/// Assessment times: admission and discharge, daytime rounds at the
/// patient's cadence, and round-the-clock assessments every ~3 h while the
/// patient is visibly deteriorating.
fn ews_schedule(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    patient: &Patient,
    los: f64,
    clock_offset: f64,
) -> Vec<f64> {
    let per_day = skewed(rng, cfg.ews_assessments_per_day, 3.0).floor().max(1.0) as usize;
    let mut times = vec![0.0, los];
    // local calendar days touching the stay, daytime rounds 07:00-22:00
    let first_day = -1i64;
    let last_day = ((los + clock_offset) / 24.0).ceil() as i64;
    for day in first_day..=last_day {
        let day_start = day as f64 * 24.0 - clock_offset;
        let spacing = 15.0 / per_day as f64;
        for k in 0..per_day {
            let local = 7.0 + spacing * (k as f64 + 0.5) + rng.gen_range(-0.4..0.4) * spacing;
            let t = hours(day_start + local);
            if t > 0.0 && t < los {
                times.push(t);
            }
        }
    }
    let mut t = 0.0;
    while t < los {
        let sev = patient.severity(t);
        if sev > 0.15 {
            times.push(hours(t + rng.gen_range(0.0..1.0)));
        }
        t += 3.0 / (1.0 + (sev - 0.15).max(0.0));
    }
    times.retain(|&t| t >= 0.0 && t <= los);
    times.sort_by(f64::total_cmp);
    let mut kept: Vec<f64> = Vec::with_capacity(times.len());
    for t in times {
        if kept.last().is_none_or(|&prev| t - prev >= 0.5) || t == los {
            if t == los && kept.last().is_some_and(|&prev| los - prev < 0.5) {
                kept.pop();
            }
            kept.push(t);
        }
    }
    kept
}

/// Vital rounds not tied to an EWS assessment: partial sets of one to three
/// vitals at any hour.
fn sporadic_vitals(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    patient: &Patient,
    los: f64,
    events: &mut Vec<ClinicalEvent>,
) {
    let per_day = skewed(rng, cfg.vitals_per_day, 4.0) - cfg.vitals_per_day[0];
    let expected = per_day * los / 24.0;
    let n = expected.floor() as usize + usize::from(rng.gen::<f64>() < expected.fract());
    for _ in 0..n {
        let t = hours(rng.gen_range(0.0..los));
        let k = rng.gen_range(1..=3);
        for _ in 0..k {
            let p = Parameter::VITALS[rng.gen_range(0..6)];
            events.push(ClinicalEvent::measurement(t, p, patient.value(rng, p, t)));
        }
    }
}

fn lab_panels(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    patient: &Patient,
    los: f64,
    clock_offset: f64,
    events: &mut Vec<ClinicalEvent>,
) {
    let per_day = skewed(rng, cfg.labs_per_day, 2.0).round().max(0.0) as usize;
    let last_day = ((los + clock_offset) / 24.0).ceil() as i64;
    for day in 0..=last_day {
        let day_start = day as f64 * 24.0 - clock_offset;
        for k in 0..per_day {
            let t = hours(day_start + 7.5 + 6.0 * k as f64 + rng.gen_range(-0.5..1.5));
            if t <= 0.0 || t >= los {
                continue;
            }
            let ill = patient.severity(t);
            for p in Parameter::ALL {
                let prob = panel_probability(p) * if k == 0 { 1.0 } else { 0.6 };
                if prob > 0.0 && rng.gen_bool((prob + 0.3 * ill).min(1.0)) {
                    events.push(ClinicalEvent::measurement(t, p, patient.value(rng, p, t)));
                }
            }
            if rng.gen_bool((0.05 + 0.4 * ill).min(1.0)) {
                for p in BLOOD_GAS {
                    events.push(ClinicalEvent::measurement(t, p, patient.value(rng, p, t)));
                }
                if rng.gen_bool(0.3) {
                    let v = patient.value(rng, Parameter::AbChloride, t);
                    events.push(ClinicalEvent::measurement(t, Parameter::AbChloride, v));
                }
            }
            if rng.gen_bool(0.003) {
                let v = patient.value(rng, Parameter::Neutrophils, t);
                events.push(ClinicalEvent::measurement(t, Parameter::Neutrophils, v));
            }
        }
    }
}

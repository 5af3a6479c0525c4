//! Sepsis-3 labeling: suspected infection, SOFA, onset.
//!
//! Suspected infection (SI) is a culture sample and an antibiotic
//! administration occurring coherently: antibiotics within 72 h after a
//! culture, or a culture within 24 h after antibiotics. Onset requires a SOFA
//! increase of at least two points within `[SI − 48 h, SI + 24 h]`.
//!
//! The SOFA score here is partial: only the organ systems observable from the
//! recorded parameters are scored.
//!
//! | organ          | source (most recent measurement)       | points                                  |
//! |----------------|----------------------------------------|-----------------------------------------|
//! | respiration    | aB_pO2 (kPa, PaO2/FiO2 at FiO2 0.21) or SpO2 | P/F <400/300/200/100; SpO2 <94/91/86/80 |
//! | coagulation    | platelets 10⁹/L                        | <150/100/50/20                          |
//! | liver          | bilirubin µmol/L                       | ≥20/33/102, >204                        |
//! | cardiovascular | MAP = (sys + 2·dia)/3 mmHg             | <70 → 1 (no vasopressor tiers)          |
//! | renal          | creatinine µmol/L, else eGFR           | ≥110/171/300, >440; eGFR <60/30/15/10   |
//! | CNS            | not recorded                           | always 0                                |

use rayon::prelude::*;
use serde::Serialize;

use crate::cohort::{Admission, Cohort, EventKind, Parameter};

pub const CULTURE_TO_ABX_MAX_H: f64 = 72.0;
pub const ABX_TO_CULTURE_MAX_H: f64 = 24.0;
pub const WINDOW_BEFORE_SI_H: f64 = 48.0;
pub const WINDOW_AFTER_SI_H: f64 = 24.0;
pub const MIN_SOFA_INCREASE: u8 = 2;

/// Metadata string for reports.
pub const PARTIAL_SOFA_NOTE: &str = "partial SOFA: respiration from pO2 (room-air P/F) or SpO2 proxy bands, \
coagulation, liver, cardiovascular as MAP<70 only, renal from creatinine or eGFR; CNS not scored";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EpisodeOrdering {
    CultureFirst,
    AbxFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SiEpisode {
    pub index_time: f64,
    pub culture_time: f64,
    pub abx_time: f64,
    pub ordering: EpisodeOrdering,
}

impl SiEpisode {
    /// Whether a culture/antibiotic pair satisfies the coherence windows.
    pub fn pair(culture_time: f64, abx_time: f64) -> Option<SiEpisode> {
        let d = abx_time - culture_time;
        if (0.0..=CULTURE_TO_ABX_MAX_H).contains(&d) {
            Some(SiEpisode {
                index_time: culture_time,
                culture_time,
                abx_time,
                ordering: EpisodeOrdering::CultureFirst,
            })
        } else if d < 0.0 && -d <= ABX_TO_CULTURE_MAX_H {
            Some(SiEpisode {
                index_time: abx_time,
                culture_time,
                abx_time,
                ordering: EpisodeOrdering::AbxFirst,
            })
        } else {
            None
        }
    }
}

/// SI episodes in index-time order.
///
/// Cultures and antibiotics are scanned in time order (a culture sorts before
/// an antibiotic at the same instant). Each unpaired event takes the earliest
/// later unpaired partner that forms a valid pair with it as the first
/// element, so every event joins at most one episode.
pub fn detect_suspected_infection(a: &Admission) -> Vec<SiEpisode> {
    let mut marks: Vec<(f64, EventKind)> = a
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Culture | EventKind::Antibiotic))
        .map(|e| (e.timestamp, e.kind))
        .collect();
    marks.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then_with(|| kind_rank(x.1).cmp(&kind_rank(y.1)))
    });

    let mut used = vec![false; marks.len()];
    let mut episodes = Vec::new();
    for i in 0..marks.len() {
        if used[i] {
            continue;
        }
        let (t_i, k_i) = marks[i];
        let partner = (i + 1..marks.len()).find(|&j| {
            let (t_j, k_j) = marks[j];
            if used[j] || k_j == k_i {
                return false;
            }
            match k_i {
                EventKind::Culture => t_j - t_i <= CULTURE_TO_ABX_MAX_H,
                _ => t_j > t_i && t_j - t_i <= ABX_TO_CULTURE_MAX_H,
            }
        });
        if let Some(j) = partner {
            used[i] = true;
            used[j] = true;
            let (c, ab) = if k_i == EventKind::Culture {
                (t_i, marks[j].0)
            } else {
                (marks[j].0, t_i)
            };
            episodes.push(SiEpisode::pair(c, ab).expect("partner search enforces windows"));
        }
    }
    episodes
}

fn kind_rank(k: EventKind) -> u8 {
    match k {
        EventKind::Culture => 0,
        _ => 1,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SofaSubscores {
    pub respiration: u8,
    pub coagulation: u8,
    pub liver: u8,
    pub cardiovascular: u8,
    pub renal: u8,
}

impl SofaSubscores {
    pub fn total(&self) -> u8 {
        self.respiration + self.coagulation + self.liver + self.cardiovascular + self.renal
    }
}

pub fn coagulation_points(platelets: f64) -> u8 {
    match platelets {
        p if p < 20.0 => 4,
        p if p < 50.0 => 3,
        p if p < 100.0 => 2,
        p if p < 150.0 => 1,
        _ => 0,
    }
}

pub fn liver_points(bilirubin_umol: f64) -> u8 {
    match bilirubin_umol {
        b if b > 204.0 => 4,
        b if b >= 102.0 => 3,
        b if b >= 33.0 => 2,
        b if b >= 20.0 => 1,
        _ => 0,
    }
}

pub fn creatinine_points(creatinine_umol: f64) -> u8 {
    match creatinine_umol {
        c if c > 440.0 => 4,
        c if c >= 300.0 => 3,
        c if c >= 171.0 => 2,
        c if c >= 110.0 => 1,
        _ => 0,
    }
}

pub fn egfr_points(egfr: f64) -> u8 {
    match egfr {
        g if g < 10.0 => 4,
        g if g < 15.0 => 3,
        g if g < 30.0 => 2,
        g if g < 60.0 => 1,
        _ => 0,
    }
}

pub fn po2_points(po2_kpa: f64) -> u8 {
    const MMHG_PER_KPA: f64 = 7.500_62;
    const ROOM_AIR_FIO2: f64 = 0.21;
    match po2_kpa * MMHG_PER_KPA / ROOM_AIR_FIO2 {
        pf if pf < 100.0 => 4,
        pf if pf < 200.0 => 3,
        pf if pf < 300.0 => 2,
        pf if pf < 400.0 => 1,
        _ => 0,
    }
}

pub fn spo2_points(spo2: f64) -> u8 {
    match spo2 {
        s if s < 80.0 => 4,
        s if s < 86.0 => 3,
        s if s < 91.0 => 2,
        s if s < 94.0 => 1,
        _ => 0,
    }
}

pub fn map_points(systolic: f64, diastolic: f64) -> u8 {
    u8::from((systolic + 2.0 * diastolic) / 3.0 < 70.0)
}

/// Most recent measurements relevant to SOFA, folded event by event.
#[derive(Debug, Clone, Copy, Default)]
struct SofaState {
    respiration: Option<u8>,
    platelets: Option<f64>,
    bilirubin: Option<f64>,
    renal: Option<u8>,
    systolic: Option<f64>,
    diastolic: Option<f64>,
}

impl SofaState {
    fn apply(&mut self, parameter: Parameter, value: f64) {
        match parameter {
            Parameter::AbPo2 => self.respiration = Some(po2_points(value)),
            Parameter::SpO2 => self.respiration = Some(spo2_points(value)),
            Parameter::Platelets => self.platelets = Some(value),
            Parameter::Bilirubin => self.bilirubin = Some(value),
            Parameter::Creatinine => self.renal = Some(creatinine_points(value)),
            Parameter::Egfr => self.renal = Some(egfr_points(value)),
            Parameter::SystolicBp => self.systolic = Some(value),
            Parameter::DiastolicBp => self.diastolic = Some(value),
            _ => {}
        }
    }

    fn subscores(&self) -> SofaSubscores {
        SofaSubscores {
            respiration: self.respiration.unwrap_or(0),
            coagulation: self.platelets.map_or(0, coagulation_points),
            liver: self.bilirubin.map_or(0, liver_points),
            cardiovascular: match (self.systolic, self.diastolic) {
                (Some(s), Some(d)) => map_points(s, d),
                _ => 0,
            },
            renal: self.renal.unwrap_or(0),
        }
    }
}

/// SOFA as an exact step function of time: subscores change only at
/// measurement timestamps and hold until the next change.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SofaTimeline {
    /// `(time, subscores from this time on)`, strictly increasing times.
    pub changes: Vec<(f64, SofaSubscores)>,
}

impl SofaTimeline {
    pub fn from_admission(a: &Admission) -> Self {
        let mut state = SofaState::default();
        let mut current = SofaSubscores::default();
        let mut changes = Vec::new();
        let events = &a.events;
        let mut i = 0;
        while i < events.len() {
            let t = events[i].timestamp;
            while i < events.len() && events[i].timestamp == t {
                let e = &events[i];
                if let (Some(p), Some(v)) = (e.parameter, e.value) {
                    state.apply(p, v);
                }
                i += 1;
            }
            let next = state.subscores();
            if next != current {
                changes.push((t, next));
                current = next;
            }
        }
        SofaTimeline { changes }
    }

    /// Subscores in effect at `t` (measurements at exactly `t` count).
    pub fn at(&self, t: f64) -> SofaSubscores {
        let n = self.changes.partition_point(|(ct, _)| *ct <= t);
        if n == 0 {
            SofaSubscores::default()
        } else {
            self.changes[n - 1].1
        }
    }

    pub fn total_at(&self, t: f64) -> u8 {
        self.at(t).total()
    }

    /// Maximum total over the closed interval `[start, end]`.
    pub fn max_total(&self, start: f64, end: f64) -> u8 {
        let inside = self
            .changes
            .iter()
            .filter(|(t, _)| *t > start && *t <= end)
            .map(|(_, s)| s.total());
        inside.fold(self.total_at(start), u8::max)
    }
}

/// SOFA sampled on a regular grid `t = k·step`, `k = 0..=⌊LOS/step⌋`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SofaSeries {
    pub step: f64,
    pub values: Vec<u8>,
    pub respiration: Vec<u8>,
    pub coagulation: Vec<u8>,
    pub liver: Vec<u8>,
    pub cardiovascular: Vec<u8>,
    pub renal: Vec<u8>,
}

impl SofaSeries {
    pub fn time_of(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    /// First grid time with total SOFA above zero.
    pub fn first_positive_time(&self) -> Option<f64> {
        self.values
            .iter()
            .position(|&v| v > 0)
            .map(|k| self.time_of(k))
    }
}

pub fn sofa_series(a: &Admission) -> SofaSeries {
    sofa_series_with_step(a, 1.0)
}

pub fn sofa_series_with_step(a: &Admission, step: f64) -> SofaSeries {
    assert!(step > 0.0, "SOFA step must be positive");
    let timeline = SofaTimeline::from_admission(a);
    let n = (a.length_of_stay / step).floor() as usize + 1;
    let mut s = SofaSeries {
        step,
        values: Vec::with_capacity(n),
        respiration: Vec::with_capacity(n),
        coagulation: Vec::with_capacity(n),
        liver: Vec::with_capacity(n),
        cardiovascular: Vec::with_capacity(n),
        renal: Vec::with_capacity(n),
    };
    for k in 0..n {
        let sub = timeline.at(k as f64 * step);
        s.values.push(sub.total());
        s.respiration.push(sub.respiration);
        s.coagulation.push(sub.coagulation);
        s.liver.push(sub.liver);
        s.cardiovascular.push(sub.cardiovascular);
        s.renal.push(sub.renal);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SepsisLabel {
    pub onset: Option<f64>,
    pub si_episodes: Vec<SiEpisode>,
    pub triggering_episode: Option<usize>,
}

impl SepsisLabel {
    pub fn negative() -> Self {
        SepsisLabel {
            onset: None,
            si_episodes: Vec::new(),
            triggering_episode: None,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.onset.is_some()
    }
}

/// Onset is the index time of the first SI episode whose window
/// `[SI − 48 h, SI + 24 h]` (clipped to the admission) shows a SOFA rise of
/// at least two points over the value at the window start. A window starting
/// before admission has baseline 0.
pub fn sepsis_onset(a: &Admission) -> SepsisLabel {
    let episodes = detect_suspected_infection(a);
    if episodes.is_empty() {
        return SepsisLabel::negative();
    }
    let timeline = SofaTimeline::from_admission(a);
    let trigger = episodes
        .iter()
        .position(|ep| episode_qualifies(&timeline, ep.index_time, a.length_of_stay));
    SepsisLabel {
        onset: trigger.map(|i| episodes[i].index_time),
        triggering_episode: trigger,
        si_episodes: episodes,
    }
}

fn episode_qualifies(timeline: &SofaTimeline, index_time: f64, los: f64) -> bool {
    let start = index_time - WINDOW_BEFORE_SI_H;
    let end = (index_time + WINDOW_AFTER_SI_H).min(los);
    let (baseline, from) = if start < 0.0 {
        (0, 0.0)
    } else {
        (timeline.total_at(start), start)
    };
    if end < from {
        return false;
    }
    timeline.max_total(from, end).saturating_sub(baseline) >= MIN_SOFA_INCREASE
}

/// Labels and SOFA series for every admission, in cohort order.
pub fn label_cohort(cohort: &Cohort) -> Vec<(SepsisLabel, SofaSeries)> {
    cohort
        .admissions
        .par_iter()
        .map(|a| (sepsis_onset(a), sofa_series(a)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::ClinicalEvent;

    fn adm(los: f64, events: Vec<ClinicalEvent>) -> Admission {
        Admission::new("a", "p", los, events)
    }

    fn culture(t: f64) -> ClinicalEvent {
        ClinicalEvent::marker(t, EventKind::Culture)
    }

    fn abx(t: f64) -> ClinicalEvent {
        ClinicalEvent::marker(t, EventKind::Antibiotic)
    }

    fn platelets(t: f64, v: f64) -> ClinicalEvent {
        ClinicalEvent::measurement(t, Parameter::Platelets, v)
    }

    #[test]
    fn culture_then_abx_within_72h() {
        let eps = detect_suspected_infection(&adm(100.0, vec![culture(10.0), abx(60.0)]));
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].index_time, 10.0);
        assert_eq!(eps[0].ordering, EpisodeOrdering::CultureFirst);
    }

    #[test]
    fn abx_then_culture_needs_24h() {
        assert!(detect_suspected_infection(&adm(100.0, vec![abx(10.0), culture(40.0)])).is_empty());
        let eps = detect_suspected_infection(&adm(100.0, vec![abx(10.0), culture(30.0)]));
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].index_time, 10.0);
        assert_eq!(eps[0].ordering, EpisodeOrdering::AbxFirst);
    }

    #[test]
    fn window_edges_are_inclusive() {
        assert_eq!(detect_suspected_infection(&adm(200.0, vec![culture(0.0), abx(72.0)])).len(), 1);
        assert!(detect_suspected_infection(&adm(200.0, vec![culture(0.0), abx(72.01)])).is_empty());
        assert_eq!(detect_suspected_infection(&adm(200.0, vec![abx(0.0), culture(24.0)])).len(), 1);
        assert!(detect_suspected_infection(&adm(200.0, vec![abx(0.0), culture(24.01)])).is_empty());
        // simultaneous events pair as culture-first
        let eps = detect_suspected_infection(&adm(200.0, vec![abx(5.0), culture(5.0)]));
        assert_eq!(eps[0].ordering, EpisodeOrdering::CultureFirst);
    }

    #[test]
    fn each_event_pairs_once() {
        let eps = detect_suspected_infection(&adm(
            200.0,
            vec![culture(0.0), abx(1.0), abx(2.0), culture(50.0), abx(51.0)],
        ));
        assert_eq!(eps.len(), 2);
        assert_eq!((eps[0].culture_time, eps[0].abx_time), (0.0, 1.0));
        assert_eq!((eps[1].culture_time, eps[1].abx_time), (50.0, 51.0));
    }

    #[test]
    fn no_labs_gives_zero_series() {
        let a = adm(
            30.0,
            vec![
                ClinicalEvent::measurement(1.0, Parameter::SpO2, 97.0),
                ClinicalEvent::measurement(1.0, Parameter::SystolicBp, 125.0),
                ClinicalEvent::measurement(1.0, Parameter::DiastolicBp, 75.0),
            ],
        );
        let s = sofa_series(&a);
        assert_eq!(s.values.len(), 31);
        assert!(s.values.iter().all(|&v| v == 0));
        assert_eq!(s.first_positive_time(), None);
    }

    #[test]
    fn platelets_set_coagulation_from_measurement_time() {
        let s = sofa_series(&adm(10.0, vec![platelets(5.0, 90.0)]));
        assert_eq!(&s.coagulation[..], &[0, 0, 0, 0, 0, 2, 2, 2, 2, 2, 2]);
        assert_eq!(s.values, s.coagulation);
        assert_eq!(s.first_positive_time(), Some(5.0));
        assert_eq!(
            [160.0, 149.0, 99.0, 49.0, 19.0].map(coagulation_points),
            [0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn creatinine_step_adds_exactly_its_delta() {
        let a = adm(
            40.0,
            vec![
                platelets(2.0, 120.0),
                ClinicalEvent::measurement(10.0, Parameter::Creatinine, 120.0),
                ClinicalEvent::measurement(30.0, Parameter::Creatinine, 320.0),
            ],
        );
        let s = sofa_series(&a);
        assert_eq!(s.values[29], 2);
        assert_eq!(s.values[30], 4);
        assert_eq!(s.values[30] - s.values[29], creatinine_points(320.0) - creatinine_points(120.0));
    }

    #[test]
    fn values_are_sum_of_subscores() {
        let a = adm(
            20.0,
            vec![
                ClinicalEvent::measurement(1.0, Parameter::SpO2, 89.0),
                ClinicalEvent::measurement(2.0, Parameter::SystolicBp, 80.0),
                ClinicalEvent::measurement(2.0, Parameter::DiastolicBp, 50.0),
                ClinicalEvent::measurement(3.0, Parameter::Bilirubin, 40.0),
                ClinicalEvent::measurement(4.0, Parameter::Egfr, 25.0),
                platelets(5.0, 40.0),
            ],
        );
        let s = sofa_series(&a);
        for k in 0..s.values.len() {
            let sum = s.respiration[k] + s.coagulation[k] + s.liver[k] + s.cardiovascular[k] + s.renal[k];
            assert_eq!(s.values[k], sum);
        }
        assert_eq!(s.values[5], 2 + 1 + 2 + 2 + 3);
    }

    #[test]
    fn constant_sofa_is_negative() {
        let a = adm(100.0, vec![culture(60.0), abx(61.0)]);
        let l = sepsis_onset(&a);
        assert_eq!(l.onset, None);
        assert_eq!(l.si_episodes.len(), 1);
    }

    #[test]
    fn rise_from_one_to_three_is_positive_at_si() {
        let a = adm(
            100.0,
            vec![platelets(5.0, 140.0), culture(60.0), abx(61.0), platelets(70.0, 45.0)],
        );
        let l = sepsis_onset(&a);
        assert_eq!(l.onset, Some(60.0));
        assert_eq!(l.triggering_episode, Some(0));
    }

    #[test]
    fn exactly_two_points_is_enough_but_one_is_not() {
        let two = adm(100.0, vec![culture(60.0), abx(61.0), platelets(70.0, 99.0)]);
        assert_eq!(sepsis_onset(&two).onset, Some(60.0));
        let one = adm(100.0, vec![culture(60.0), abx(61.0), platelets(70.0, 149.0)]);
        assert_eq!(sepsis_onset(&one).onset, None);
    }

    #[test]
    fn window_bounds_are_48_before_and_24_after() {
        // rise 24 h after SI counts, later does not
        let at_edge = adm(200.0, vec![culture(60.0), abx(61.0), platelets(84.0, 60.0)]);
        assert_eq!(sepsis_onset(&at_edge).onset, Some(60.0));
        let late = adm(200.0, vec![culture(60.0), abx(61.0), platelets(84.5, 60.0)]);
        assert_eq!(sepsis_onset(&late).onset, None);
        // a rise completed before the window start is absorbed into the baseline
        let early = adm(200.0, vec![platelets(11.0, 60.0), culture(60.0), abx(61.0)]);
        assert_eq!(sepsis_onset(&early).onset, None);
        let inside = adm(200.0, vec![platelets(12.5, 60.0), culture(60.0), abx(61.0)]);
        assert_eq!(sepsis_onset(&inside).onset, Some(60.0));
    }

    #[test]
    fn early_window_uses_zero_baseline() {
        let a = adm(100.0, vec![platelets(0.0, 60.0), abx(10.0), culture(12.0)]);
        assert_eq!(sepsis_onset(&a).onset, Some(10.0));
    }

    #[test]
    fn first_qualifying_episode_wins() {
        let a = adm(
            400.0,
            vec![
                culture(10.0),
                abx(11.0),
                culture(200.0),
                abx(201.0),
                platelets(205.0, 40.0),
            ],
        );
        let l = sepsis_onset(&a);
        assert_eq!(l.si_episodes.len(), 2);
        assert_eq!(l.onset, Some(200.0));
        assert_eq!(l.triggering_episode, Some(1));
    }
}

//! Longitudinal ward records: events, admissions, cohorts.
//!
//! Timestamps are hours since admission. The on-disk format is a single
//! sparse CSV with header `patient_id,admission_id,timestamp_h,kind,parameter,value`
//! covering every event kind. The file carries no explicit discharge column,
//! so an admission's length of stay is the timestamp of its last event.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = [
    "patient_id",
    "admission_id",
    "timestamp_h",
    "kind",
    "parameter",
    "value",
];

/// Inclusion bounds on length of stay, both inclusive: shorter than 24 h or
/// longer than 50 days is excluded.
pub const MIN_STAY_H: f64 = 24.0;
pub const MAX_STAY_H: f64 = 50.0 * 24.0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AdmissionId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatientId(pub String);

impl fmt::Display for AdmissionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AdmissionId {
    fn from(s: &str) -> Self {
        AdmissionId(s.to_string())
    }
}

impl From<&str> for PatientId {
    fn from(s: &str) -> Self {
        PatientId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Vital,
    Lab,
    Antibiotic,
    Culture,
    EwsAssessment,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Vital,
        EventKind::Lab,
        EventKind::Antibiotic,
        EventKind::Culture,
        EventKind::EwsAssessment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Vital => "vital",
            EventKind::Lab => "lab",
            EventKind::Antibiotic => "abx",
            EventKind::Culture => "culture",
            EventKind::EwsAssessment => "ews",
        }
    }

    pub fn is_measurement(self) -> bool {
        matches!(self, EventKind::Vital | EventKind::Lab)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event kind {s:?}"))
    }
}

/// The six vital signs and nineteen laboratory parameters used as model
/// inputs.
///
/// Units are carried as recorded. The synthetic generator and the SOFA
/// tables assume: mmHg, breaths/min, beats/min, %, °C; blood gases in kPa
/// (pO2, pCO2) and mmol/L; cell counts in 10⁹/L; albumin g/L; creatinine and
/// bilirubin µmol/L; glucose mmol/L; CRP mg/L; eGFR mL/min/1.73 m².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parameter {
    SystolicBp,
    DiastolicBp,
    RespiratoryFrequency,
    HeartRate,
    SpO2,
    Temperature,
    AbBicarbonate,
    AbPo2,
    AbPco2,
    AbPh,
    AbLactate,
    AbSodium,
    AbChloride,
    AbPotassium,
    Leukocytes,
    Neutrophils,
    Platelets,
    Sodium,
    Albumin,
    Creatinine,
    Bilirubin,
    Potassium,
    Glucose,
    Crp,
    Egfr,
}

pub const N_PARAMETERS: usize = 25;

impl Parameter {
    /// Fixed column order for features and reports.
    pub const ALL: [Parameter; N_PARAMETERS] = [
        Parameter::SystolicBp,
        Parameter::DiastolicBp,
        Parameter::RespiratoryFrequency,
        Parameter::HeartRate,
        Parameter::SpO2,
        Parameter::Temperature,
        Parameter::AbBicarbonate,
        Parameter::AbPo2,
        Parameter::AbPco2,
        Parameter::AbPh,
        Parameter::AbLactate,
        Parameter::AbSodium,
        Parameter::AbChloride,
        Parameter::AbPotassium,
        Parameter::Leukocytes,
        Parameter::Neutrophils,
        Parameter::Platelets,
        Parameter::Sodium,
        Parameter::Albumin,
        Parameter::Creatinine,
        Parameter::Bilirubin,
        Parameter::Potassium,
        Parameter::Glucose,
        Parameter::Crp,
        Parameter::Egfr,
    ];

    pub const VITALS: [Parameter; 6] = [
        Parameter::HeartRate,
        Parameter::RespiratoryFrequency,
        Parameter::SpO2,
        Parameter::SystolicBp,
        Parameter::DiastolicBp,
        Parameter::Temperature,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Parameter::SystolicBp => "SystolicBP",
            Parameter::DiastolicBp => "DiastolicBP",
            Parameter::RespiratoryFrequency => "RespiratoryFrequency",
            Parameter::HeartRate => "HeartRate",
            Parameter::SpO2 => "SpO2",
            Parameter::Temperature => "Temperature",
            Parameter::AbBicarbonate => "aB_HCO3",
            Parameter::AbPo2 => "aB_pO2",
            Parameter::AbPco2 => "aB_pCO2",
            Parameter::AbPh => "aB_pH",
            Parameter::AbLactate => "aB_Lactate",
            Parameter::AbSodium => "aB_Sodium",
            Parameter::AbChloride => "aB_Chloride",
            Parameter::AbPotassium => "aB_Potassium",
            Parameter::Leukocytes => "B_Leukocytes",
            Parameter::Neutrophils => "B_Neutrophils",
            Parameter::Platelets => "B_Platelets",
            Parameter::Sodium => "P_Sodium",
            Parameter::Albumin => "P_Albumin",
            Parameter::Creatinine => "P_Creatinine",
            Parameter::Bilirubin => "P_Bilirubin",
            Parameter::Potassium => "P_Potassium",
            Parameter::Glucose => "P_Glucose",
            Parameter::Crp => "P_CRP",
            Parameter::Egfr => "eGFR",
        }
    }

    pub fn is_vital(self) -> bool {
        self.index() < 6
    }

    pub fn event_kind(self) -> EventKind {
        if self.is_vital() {
            EventKind::Vital
        } else {
            EventKind::Lab
        }
    }

    /// Physiologic plausibility range used by [`validate_cohort`]. Values
    /// outside are reported, never dropped.
    pub fn plausible_range(self) -> (f64, f64) {
        match self {
            Parameter::SystolicBp => (40.0, 300.0),
            Parameter::DiastolicBp => (20.0, 200.0),
            Parameter::RespiratoryFrequency => (2.0, 80.0),
            Parameter::HeartRate => (10.0, 300.0),
            Parameter::SpO2 => (0.0, 100.0),
            Parameter::Temperature => (25.0, 45.0),
            Parameter::AbBicarbonate => (2.0, 60.0),
            Parameter::AbPo2 => (1.0, 80.0),
            Parameter::AbPco2 => (1.0, 25.0),
            Parameter::AbPh => (6.5, 8.0),
            Parameter::AbLactate => (0.0, 30.0),
            Parameter::AbSodium | Parameter::Sodium => (100.0, 180.0),
            Parameter::AbChloride => (60.0, 150.0),
            Parameter::AbPotassium | Parameter::Potassium => (1.0, 10.0),
            Parameter::Leukocytes => (0.0, 500.0),
            Parameter::Neutrophils => (0.0, 300.0),
            Parameter::Platelets => (0.0, 2000.0),
            Parameter::Albumin => (5.0, 70.0),
            Parameter::Creatinine => (10.0, 3000.0),
            Parameter::Bilirubin => (0.0, 1000.0),
            Parameter::Glucose => (0.5, 60.0),
            Parameter::Crp => (0.0, 700.0),
            Parameter::Egfr => (0.0, 200.0),
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Parameter {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Parameter::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown parameter {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEvent {
    pub timestamp: f64,
    pub kind: EventKind,
    pub parameter: Option<Parameter>,
    pub value: Option<f64>,
}

impl ClinicalEvent {
    /// A vital or lab measurement; the kind follows from the parameter.
    pub fn measurement(timestamp: f64, parameter: Parameter, value: f64) -> Self {
        ClinicalEvent {
            timestamp,
            kind: parameter.event_kind(),
            parameter: Some(parameter),
            value: Some(value),
        }
    }

    /// An antibiotic administration, culture sample or EWS assessment.
    pub fn marker(timestamp: f64, kind: EventKind) -> Self {
        debug_assert!(!kind.is_measurement());
        ClinicalEvent {
            timestamp,
            kind,
            parameter: None,
            value: None,
        }
    }

    pub fn measured(&self, parameter: Parameter) -> Option<f64> {
        if self.parameter == Some(parameter) {
            self.value
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub id: AdmissionId,
    pub patient_id: PatientId,
    pub length_of_stay: f64,
    pub events: Vec<ClinicalEvent>,
}

impl Admission {
    /// Builds an admission, sorting events by timestamp (stable).
    pub fn new(
        id: impl Into<AdmissionId>,
        patient_id: impl Into<PatientId>,
        length_of_stay: f64,
        mut events: Vec<ClinicalEvent>,
    ) -> Self {
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Admission {
            id: id.into(),
            patient_id: patient_id.into(),
            length_of_stay,
            events,
        }
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &ClinicalEvent> + '_ {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Events with `start <= timestamp <= end`; relies on sorted events.
    pub fn events_between(&self, start: f64, end: f64) -> &[ClinicalEvent] {
        let lo = self.events.partition_point(|e| e.timestamp < start);
        let hi = self.events.partition_point(|e| e.timestamp <= end);
        if lo >= hi {
            &[]
        } else {
            &self.events[lo..hi]
        }
    }
}

impl From<String> for AdmissionId {
    fn from(s: String) -> Self {
        AdmissionId(s)
    }
}

impl From<String> for PatientId {
    fn from(s: String) -> Self {
        PatientId(s)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Cohort {
    pub admissions: Vec<Admission>,
    pub provenance: String,
}

impl Cohort {
    pub fn new(admissions: Vec<Admission>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for a in &admissions {
            if !seen.insert(&a.id) {
                return Err(Error::Integrity(format!("duplicate admission id {}", a.id)));
            }
        }
        Ok(Cohort {
            admissions,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.admissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.admissions.is_empty()
    }

    pub fn get(&self, id: &AdmissionId) -> Option<&Admission> {
        self.admissions.iter().find(|a| &a.id == id)
    }

    pub fn index_by_id(&self) -> HashMap<&AdmissionId, usize> {
        self.admissions
            .iter()
            .enumerate()
            .map(|(i, a)| (&a.id, i))
            .collect()
    }

    pub fn n_patients(&self) -> usize {
        self.admissions
            .iter()
            .map(|a| &a.patient_id)
            .collect::<HashSet<_>>()
            .len()
    }
}

/// Reads an event CSV. Admissions appear in order of first occurrence and
/// their events are sorted by timestamp.
pub fn parse_event_stream<R: Read>(source: R, provenance: impl Into<String>) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(source);

    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::parse(
            1,
            format!(
                "expected header {:?}, found {:?}",
                CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    struct Pending {
        patient: String,
        events: Vec<ClinicalEvent>,
    }

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != CSV_HEADER.len() {
            return Err(Error::parse(
                line,
                format!("expected 6 fields, found {}", record.len()),
            ));
        }
        let patient = &record[0];
        let admission = &record[1];
        if patient.is_empty() || admission.is_empty() {
            return Err(Error::parse(line, "empty patient_id or admission_id"));
        }
        let event = parse_event(&record, line)?;

        match pending.get_mut(admission) {
            Some(p) => {
                if p.patient != patient {
                    return Err(Error::Integrity(format!(
                        "admission {admission} belongs to patients {} and {patient} (line {line})",
                        p.patient
                    )));
                }
                p.events.push(event);
            }
            None => {
                order.push(admission.to_string());
                pending.insert(
                    admission.to_string(),
                    Pending {
                        patient: patient.to_string(),
                        events: vec![event],
                    },
                );
            }
        }
    }

    let admissions = order
        .into_iter()
        .map(|id| {
            let p = pending.remove(&id).expect("admission recorded in order");
            let los = p
                .events
                .iter()
                .map(|e| e.timestamp)
                .fold(0.0_f64, f64::max);
            Admission::new(id, p.patient, los, p.events)
        })
        .collect();

    Cohort::new(admissions, provenance)
}

fn parse_event(record: &csv::StringRecord, line: u64) -> Result<ClinicalEvent> {
    let timestamp: f64 = record[2]
        .parse()
        .map_err(|_| Error::parse(line, format!("bad timestamp {:?}", &record[2])))?;
    if !timestamp.is_finite() || timestamp < 0.0 {
        return Err(Error::parse(
            line,
            format!("timestamp must be finite and non-negative, got {timestamp}"),
        ));
    }
    let kind: EventKind = record[3].parse().map_err(|e| Error::parse(line, e))?;
    let (param_field, value_field) = (&record[4], &record[5]);

    if kind.is_measurement() {
        let parameter: Parameter = param_field.parse().map_err(|e| Error::parse(line, e))?;
        if parameter.event_kind() != kind {
            return Err(Error::parse(
                line,
                format!("parameter {parameter} is not of kind {kind}"),
            ));
        }
        let value: f64 = value_field
            .parse()
            .map_err(|_| Error::parse(line, format!("bad value {value_field:?}")))?;
        if !value.is_finite() {
            return Err(Error::parse(line, format!("non-finite value {value_field:?}")));
        }
        Ok(ClinicalEvent::measurement(timestamp, parameter, value))
    } else {
        if !param_field.is_empty() || !value_field.is_empty() {
            return Err(Error::parse(
                line,
                format!("{kind} events carry no parameter or value"),
            ));
        }
        Ok(ClinicalEvent::marker(timestamp, kind))
    }
}

/// Writes the cohort in event-CSV format, admissions in cohort order.
pub fn write_event_csv<W: Write>(cohort: &Cohort, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for a in &cohort.admissions {
        for e in &a.events {
            let param = e.parameter.map(Parameter::name).unwrap_or("");
            let value = e.value.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                a.patient_id.0.as_str(),
                a.id.0.as_str(),
                &e.timestamp.to_string(),
                e.kind.as_str(),
                param,
                &value,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Keeps admissions with `24 h <= length_of_stay <= 1200 h`, order preserved.
pub fn filter_admissions(cohort: &Cohort) -> Cohort {
    Cohort {
        admissions: cohort
            .admissions
            .iter()
            .filter(|a| (MIN_STAY_H..=MAX_STAY_H).contains(&a.length_of_stay))
            .cloned()
            .collect(),
        provenance: cohort.provenance.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ViolationKind {
    UnsortedEvents { index: usize },
    EventAfterDischarge { timestamp: f64 },
    InvalidTimestamp { timestamp: f64 },
    MalformedEvent { index: usize, reason: String },
    OutOfRange { parameter: Parameter, value: f64, timestamp: f64 },
    DuplicateAdmission,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub admission_id: AdmissionId,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Structural and plausibility checks. Never mutates or drops data.
pub fn validate_cohort(cohort: &Cohort) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for a in &cohort.admissions {
        let mut push = |kind| {
            violations.push(Violation {
                admission_id: a.id.clone(),
                kind,
            })
        };
        if !seen.insert(&a.id) {
            push(ViolationKind::DuplicateAdmission);
        }
        for (i, e) in a.events.iter().enumerate() {
            if i > 0 && a.events[i - 1].timestamp > e.timestamp {
                push(ViolationKind::UnsortedEvents { index: i });
            }
            if !e.timestamp.is_finite() || e.timestamp < 0.0 {
                push(ViolationKind::InvalidTimestamp {
                    timestamp: e.timestamp,
                });
            } else if e.timestamp > a.length_of_stay {
                push(ViolationKind::EventAfterDischarge {
                    timestamp: e.timestamp,
                });
            }
            match (e.kind.is_measurement(), e.parameter, e.value) {
                (true, Some(p), Some(v)) => {
                    if p.event_kind() != e.kind {
                        push(ViolationKind::MalformedEvent {
                            index: i,
                            reason: format!("parameter {p} recorded as {}", e.kind),
                        });
                    }
                    let (lo, hi) = p.plausible_range();
                    if !v.is_finite() || v < lo || v > hi {
                        push(ViolationKind::OutOfRange {
                            parameter: p,
                            value: v,
                            timestamp: e.timestamp,
                        });
                    }
                }
                (true, _, _) => push(ViolationKind::MalformedEvent {
                    index: i,
                    reason: "measurement without parameter or value".into(),
                }),
                (false, None, None) => {}
                (false, _, _) => push(ViolationKind::MalformedEvent {
                    index: i,
                    reason: format!("{} event with parameter or value", e.kind),
                }),
            }
        }
    }
    ValidationReport { violations }
}

//! Feature extraction over a 12 h observation window.
//!
//! Each parameter is reduced to hourly means, the hourly means to two 6 h
//! timesteps (`[t-12, t-6)` and `[t-6, t]`), and the timesteps to a current
//! value and a delta. Column order is the 25 parameters in
//! [`Parameter::ALL`] order followed by the 25 `<name>_delta` columns.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Admission, AdmissionId, Cohort, Parameter, PatientId, N_PARAMETERS};
use crate::error::{Error, Result};
use crate::framing::{FramingKind, SampleSpec};

pub const N_FEATURES: usize = 2 * N_PARAMETERS;
const HOURS: usize = 12;
const STEP_HOURS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [Option<f64>; N_PARAMETERS],
    pub deltas: [Option<f64>; N_PARAMETERS],
    pub label: bool,
    pub sample: SampleSpec,
}

impl FeatureVector {
    /// Feature `j` in column order.
    pub fn get(&self, j: usize) -> Option<f64> {
        if j < N_PARAMETERS {
            self.values[j]
        } else {
            self.deltas[j - N_PARAMETERS]
        }
    }

    /// Dense row with `NaN` for missing entries.
    pub fn to_row(&self) -> [f64; N_FEATURES] {
        let mut row = [f64::NAN; N_FEATURES];
        for (j, v) in row.iter_mut().enumerate() {
            if let Some(x) = self.get(j) {
                *v = x;
            }
        }
        row
    }
}

/// The 50 column names in order.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = Parameter::ALL.iter().map(|p| p.name().to_string()).collect();
    names.extend(Parameter::ALL.iter().map(|p| format!("{}_delta", p.name())));
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<FeatureVector>,
    pub feature_names: Vec<String>,
    pub framing: FramingKind,
    pub provenance: String,
}

impl Dataset {
    pub fn empty(framing: FramingKind, provenance: impl Into<String>) -> Self {
        Dataset {
            rows: Vec::new(),
            feature_names: feature_names(),
            framing,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn patient_ids(&self) -> Vec<&PatientId> {
        self.rows.iter().map(|r| &r.sample.patient_id).collect()
    }

    /// Row-major dense matrix, `NaN` marking missing values.
    pub fn to_matrix(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.to_row()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Rows at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            framing: self.framing,
            provenance: self.provenance.clone(),
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Hour index within the window; the last hour is closed at `t`.
fn hour_of(ts: f64, start: f64) -> Option<usize> {
    let off = ts - start;
    if !(0.0..=HOURS as f64).contains(&off) {
        return None;
    }
    Some((off.floor() as usize).min(HOURS - 1))
}

/// Two 6 h timestep means for one parameter, before imputation.
fn timesteps(a: &Admission, s: &SampleSpec, p: Parameter) -> (Option<f64>, Option<f64>) {
    let start = s.prediction_time - HOURS as f64;
    let mut sums = [0.0; HOURS];
    let mut counts = [0usize; HOURS];
    for e in a.events_between(start, s.prediction_time) {
        if let (Some(v), Some(h)) = (e.measured(p), hour_of(e.timestamp, start)) {
            sums[h] += v;
            counts[h] += 1;
        }
    }
    let hourly: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let bin = |r: std::ops::Range<usize>| mean(hourly[r].iter().flatten().copied());
    (bin(0..STEP_HOURS), bin(STEP_HOURS..HOURS))
}

/// Forward/backward fill across the two timesteps.
pub fn impute(bins: (Option<f64>, Option<f64>)) -> (Option<f64>, Option<f64>) {
    match bins {
        (Some(a), None) => (Some(a), Some(a)),
        (None, Some(b)) => (Some(b), Some(b)),
        other => other,
    }
}

pub fn extract_features(a: &Admission, s: &SampleSpec) -> FeatureVector {
    let mut values = [None; N_PARAMETERS];
    let mut deltas = [None; N_PARAMETERS];
    for p in Parameter::ALL {
        let raw = timesteps(a, s, p);
        if let (Some(b1), Some(b2)) = raw {
            deltas[p.index()] = Some(b2 - b1);
        }
        values[p.index()] = impute(raw).1;
    }
    FeatureVector {
        values,
        deltas,
        label: s.label,
        sample: s.clone(),
    }
}

pub fn build_dataset(c: &Cohort, samples: &[SampleSpec]) -> Result<Dataset> {
    let framing = samples.first().map_or(FramingKind::FixedTimeToOnset, |s| s.framing);
    if let Some(s) = samples.iter().find(|s| s.framing != framing) {
        return Err(Error::InvalidInput(format!(
            "mixed framings in one dataset: {framing} and {}",
            s.framing
        )));
    }
    let index = c.index_by_id();
    let rows = samples
        .par_iter()
        .map(|s| {
            let &i = index.get(&s.admission_id).ok_or_else(|| {
                Error::Integrity(format!("sample references unknown admission {}", s.admission_id))
            })?;
            Ok(extract_features(&c.admissions[i], s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        rows,
        feature_names: feature_names(),
        framing,
        provenance: c.provenance.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingnessReport {
    pub framing: FramingKind,
    pub n_rows: usize,
    /// `(feature name, percent missing)` in column order.
    pub features: Vec<(String, f64)>,
}

impl MissingnessReport {
    pub fn percent(&self, name: &str) -> Option<f64> {
        self.features.iter().find(|(n, _)| n == name).map(|&(_, p)| p)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
        w.write_record(["feature", "missing_percent"])?;
        for (name, pct) in &self.features {
            w.write_record([name.as_str(), &format!("{pct:.2}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn missingness_report(d: &Dataset) -> Result<MissingnessReport> {
    if d.is_empty() {
        return Err(Error::InvalidInput("missingness of an empty dataset is undefined".into()));
    }
    let n = d.len() as f64;
    let features = d
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let missing = d.rows.iter().filter(|r| r.get(j).is_none()).count();
            (name.clone(), missing as f64 / n * 100.0)
        })
        .collect();
    Ok(MissingnessReport {
        framing: d.framing,
        n_rows: d.len(),
        features,
    })
}

const TRAILER: [&str; 5] = ["label", "patient_id", "admission_id", "prediction_time_h", "framing"];

/// Writes 50 feature columns (empty cell = missing) followed by
/// `label,patient_id,admission_id,prediction_time_h,framing`.
pub fn write_dataset_csv<W: Write>(d: &Dataset, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    let header: Vec<&str> = d.feature_names.iter().map(String::as_str).chain(TRAILER).collect();
    w.write_record(&header)?;
    for r in &d.rows {
        let mut rec: Vec<String> = (0..d.n_features())
            .map(|j| r.get(j).map(|v| v.to_string()).unwrap_or_default())
            .collect();
        rec.push(u8::from(r.label).to_string());
        rec.push(r.sample.patient_id.0.clone());
        rec.push(r.sample.admission_id.0.clone());
        rec.push(r.sample.prediction_time.to_string());
        rec.push(r.sample.framing.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(source: R, provenance: impl Into<String>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let names = feature_names();
    let expected: Vec<&str> = names.iter().map(String::as_str).chain(TRAILER).collect();
    let header = rdr.headers()?.clone();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Schema("dataset CSV header does not match the 50-feature layout".into()));
    }
    let mut rows = Vec::new();
    let mut framing = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec?;
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            let v: f64 = s.parse().map_err(|_| Error::parse(line, format!("bad number {s:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, "non-finite feature value"));
            }
            Ok(Some(v))
        };
        let mut values = [None; N_PARAMETERS];
        let mut deltas = [None; N_PARAMETERS];
        for j in 0..N_PARAMETERS {
            values[j] = num(&rec[j])?;
            deltas[j] = num(&rec[N_PARAMETERS + j])?;
        }
        let label = match &rec[N_FEATURES] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(line, format!("label must be 0 or 1, got {other:?}"))),
        };
        let kind: FramingKind = rec[N_FEATURES + 4].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?;
        if framing.is_some_and(|f| f != kind) {
            return Err(Error::parse(line, "mixed framings in one dataset"));
        }
        framing = Some(kind);
        let t = num(&rec[N_FEATURES + 3])?.ok_or_else(|| Error::parse(line, "missing prediction time"))?;
        rows.push(FeatureVector {
            values,
            deltas,
            label,
            sample: SampleSpec {
                admission_id: AdmissionId(rec[N_FEATURES + 2].to_string()),
                patient_id: PatientId(rec[N_FEATURES + 1].to_string()),
                prediction_time: t,
                observation_start: t - HOURS as f64,
                label,
                framing: kind,
            },
        });
    }
    Ok(Dataset {
        rows,
        feature_names: names,
        framing: framing.unwrap_or(FramingKind::FixedTimeToOnset),
        provenance: provenance.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::ClinicalEvent;

    fn sample(t: f64) -> SampleSpec {
        SampleSpec {
            admission_id: AdmissionId("A".into()),
            patient_id: PatientId("P".into()),
            prediction_time: t,
            observation_start: t - 12.0,
            label: false,
            framing: FramingKind::SlidingWindow,
        }
    }

    fn hr(t: f64, v: f64) -> ClinicalEvent {
        ClinicalEvent::measurement(t, Parameter::HeartRate, v)
    }

    fn admission(events: Vec<ClinicalEvent>) -> Admission {
        Admission::new(AdmissionId("A".into()), PatientId("P".into()), 100.0, events)
    }

    #[test]
    fn value_and_delta_from_two_timesteps() {
        let f = extract_features(&admission(vec![hr(29.0, 80.0), hr(38.0, 100.0)]), &sample(40.0));
        let j = Parameter::HeartRate.index();
        assert_eq!(f.values[j], Some(100.0));
        assert_eq!(f.deltas[j], Some(20.0));
    }

    #[test]
    fn hourly_mean_then_backward_fill() {
        let f = extract_features(&admission(vec![hr(37.5, 90.0), hr(37.5, 110.0)]), &sample(40.0));
        let j = Parameter::HeartRate.index();
        assert_eq!(f.values[j], Some(100.0));
        assert_eq!(f.deltas[j], None);
    }

    #[test]
    fn forward_fill_from_first_timestep() {
        let f = extract_features(&admission(vec![hr(30.0, 70.0)]), &sample(40.0));
        assert_eq!(f.values[Parameter::HeartRate.index()], Some(70.0));
        assert_eq!(f.deltas[Parameter::HeartRate.index()], None);
    }

    #[test]
    fn empty_window_is_missing() {
        let f = extract_features(&admission(vec![hr(10.0, 70.0), hr(41.0, 70.0)]), &sample(40.0));
        assert!(f.values.iter().all(Option::is_none));
        assert!(f.deltas.iter().all(Option::is_none));
    }

    #[test]
    fn timestep_boundaries() {
        let j = Parameter::HeartRate.index();
        // t-12 is in the first timestep, t-6 in the second, t itself included
        let f = extract_features(&admission(vec![hr(28.0, 60.0), hr(34.0, 70.0), hr(40.0, 90.0)]), &sample(40.0));
        assert_eq!(f.deltas[j], Some(80.0 - 60.0));
        assert_eq!(f.values[j], Some(80.0));
    }

    #[test]
    fn bins_average_hourly_means() {
        let j = Parameter::HeartRate.index();
        let events = vec![hr(35.1, 60.0), hr(35.2, 60.0), hr(35.3, 60.0), hr(39.0, 90.0)];
        let f = extract_features(&admission(events), &sample(40.0));
        assert_eq!(f.values[j], Some(75.0));
    }

    #[test]
    fn imputation_is_idempotent() {
        for b in [(None, None), (Some(1.0), None), (None, Some(2.0)), (Some(1.0), Some(2.0))] {
            assert_eq!(impute(impute(b)), impute(b));
        }
    }

    #[test]
    fn names_and_order() {
        let n = feature_names();
        assert_eq!(n.len(), 50);
        assert_eq!(n[Parameter::HeartRate.index()], "HeartRate");
        assert_eq!(n[N_PARAMETERS + Parameter::SpO2.index()], "SpO2_delta");
    }

    #[test]
    fn build_dataset_keeps_order_and_rejects_dangling() {
        let c = Cohort::new(vec![admission(vec![hr(5.0, 80.0)])], "t").unwrap();
        let samples = vec![sample(12.0), sample(20.0), sample(30.0)];
        let d = build_dataset(&c, &samples).unwrap();
        let times: Vec<f64> = d.rows.iter().map(|r| r.sample.prediction_time).collect();
        assert_eq!(times, vec![12.0, 20.0, 30.0]);
        assert!(build_dataset(&c, &[]).unwrap().is_empty());
        let mut bad = sample(12.0);
        bad.admission_id = AdmissionId("nope".into());
        assert!(matches!(build_dataset(&c, &[bad]), Err(Error::Integrity(_))));
    }

    #[test]
    fn missingness_percentages() {
        let events = vec![hr(10.0, 80.0), hr(30.0, 80.0), ClinicalEvent::measurement(30.0, Parameter::SpO2, 97.0)];
        let c = Cohort::new(vec![admission(events)], "t").unwrap();
        let samples = vec![sample(12.0), sample(36.0), sample(36.0), sample(36.0)];
        let d = build_dataset(&c, &samples).unwrap();
        let m = missingness_report(&d).unwrap();
        assert_eq!(m.percent("HeartRate"), Some(0.0));
        assert_eq!(m.percent("SpO2"), Some(25.0));
        assert!(missingness_report(&Dataset::empty(FramingKind::SlidingWindow, "")).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let events = vec![hr(29.0, 80.5), hr(38.0, 100.0)];
        let c = Cohort::new(vec![admission(events)], "t").unwrap();
        let d = build_dataset(&c, &[sample(40.0), sample(20.0)]).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&d, &mut buf).unwrap();
        let back = read_dataset_csv(buf.as_slice(), "t").unwrap();
        assert_eq!(back, d);
    }
}

//! Patient-grouped cross-validation, ranking metrics, fold confidence
//! intervals and the per-framing experiment driver.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::Serialize;
use serde_json::{json, Map, Value};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cohort::{Cohort, PatientId};
use crate::error::{Error, Result};
use crate::features::{build_dataset, missingness_report, Dataset, MissingnessReport};
use crate::framing::{class_balance, sample_cohort, ClassBalance, FramingConfig, FramingKind};
use crate::gbdt::{self, HyperParams};
use crate::seed::{self, stream};
use crate::sepsis3::{label_cohort, PARTIAL_SOFA_NOTE};
use crate::treeshap::{self, background_indices, Explainer, ImportanceTable, ShapExplanation};

pub const N_FOLDS: usize = 5;
pub const MIN_PATIENTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fold {
    pub train: Vec<PatientId>,
    pub validation: Vec<PatientId>,
    pub test: Vec<PatientId>,
}

/// Five folds over shuffled patient blocks. Fold `i` trains on the four
/// other blocks and splits block `i` into a test half and a validation half.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Row indices of one fold.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FoldRows {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldPlan {
    pub fn partition_of(&self, fold: usize, patient: &PatientId) -> Option<Partition> {
        let f = &self.folds[fold];
        if f.test.contains(patient) {
            Some(Partition::Test)
        } else if f.validation.contains(patient) {
            Some(Partition::Validation)
        } else if f.train.contains(patient) {
            Some(Partition::Train)
        } else {
            None
        }
    }

    /// Dataset rows per partition of `fold`, each in row order. Fails when a
    /// row's patient is not in the plan or the partitions overlap.
    pub fn rows(&self, fold: usize, d: &Dataset) -> Result<FoldRows> {
        let f = &self.folds[fold];
        let mut of: HashMap<&PatientId, Partition> = HashMap::new();
        for (ids, p) in [
            (&f.train, Partition::Train),
            (&f.validation, Partition::Validation),
            (&f.test, Partition::Test),
        ] {
            for id in ids {
                if of.insert(id, p).is_some() {
                    return Err(Error::Integrity(format!("patient {id} is in two partitions of fold {fold}")));
                }
            }
        }
        let mut rows = FoldRows::default();
        for (i, r) in d.rows.iter().enumerate() {
            match of.get(&r.sample.patient_id) {
                Some(Partition::Train) => rows.train.push(i),
                Some(Partition::Validation) => rows.validation.push(i),
                Some(Partition::Test) => rows.test.push(i),
                None => {
                    return Err(Error::Integrity(format!(
                        "patient {} is not in the fold plan",
                        r.sample.patient_id
                    )))
                }
            }
        }
        Ok(rows)
    }
}

pub fn cv_split_patients(patients: &[PatientId], seed: u64) -> Result<FoldPlan> {
    let mut ids: Vec<PatientId> = patients.iter().cloned().collect::<HashSet<_>>().into_iter().collect();
    ids.sort();
    if ids.len() < MIN_PATIENTS {
        return Err(Error::InvalidInput(format!(
            "{} patients; cross-validation needs at least {MIN_PATIENTS}",
            ids.len()
        )));
    }
    let mut rng = seed::rng(seed, stream::FOLDS, 0);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let blocks: Vec<&[PatientId]> = (0..N_FOLDS)
        .map(|b| &ids[b * n / N_FOLDS..(b + 1) * n / N_FOLDS])
        .collect();
    let folds = (0..N_FOLDS)
        .map(|i| {
            let held = blocks[i];
            let half = held.len().div_ceil(2);
            let mut train: Vec<PatientId> = (0..N_FOLDS)
                .filter(|&b| b != i)
                .flat_map(|b| blocks[b].iter().cloned())
                .collect();
            let mut test = held[..half].to_vec();
            let mut validation = held[half..].to_vec();
            train.sort();
            test.sort();
            validation.sort();
            Fold {
                train,
                validation,
                test,
            }
        })
        .collect();
    Ok(FoldPlan {
        k: N_FOLDS,
        seed,
        folds,
    })
}

pub fn cv_split(d: &Dataset, seed: u64) -> Result<FoldPlan> {
    let ids: Vec<PatientId> = d.rows.iter().map(|r| r.sample.patient_id.clone()).collect();
    cv_split_patients(&ids, seed)
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    Ok((pos, labels.len() - pos))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Average precision: mean over positives of the precision at each
/// positive's rank, ranking by descending score with ties in input order.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = class_counts(scores, labels)?;
    if pos == 0 {
        return Err(Error::InvalidInput("AUPRC needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

/// Confusion counts at a score threshold (`score >= threshold` is positive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl Confusion {
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion {
            tp: 0,
            fp: 0,
            tn: 0,
            r#fn: 0,
        };
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.r#fn += 1,
            }
        }
        c
    }

    fn ratio(a: usize, b: usize) -> Option<f64> {
        (a + b > 0).then(|| a as f64 / (a + b) as f64)
    }

    /// TP / (TP + FP).
    pub fn precision(&self) -> Option<f64> {
        Self::ratio(self.tp, self.fp)
    }

    /// TP / (TP + FN).
    pub fn recall(&self) -> Option<f64> {
        Self::ratio(self.tp, self.r#fn)
    }

    /// FP / (FP + TN).
    pub fn false_positive_rate(&self) -> Option<f64> {
        Self::ratio(self.fp, self.tn)
    }
}

/// Mean and t-based half-width over exactly five fold values (df = 4).
pub fn fold_ci(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.len() != N_FOLDS {
        return Err(Error::InvalidInput(format!(
            "fold_ci expects {N_FOLDS} values, got {}",
            values.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level {level} outside (0, 1)")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("valid t distribution")
        .inverse_cdf(1.0 - (1.0 - level) / 2.0);
    Ok((mean, t * var.sqrt() / n.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    /// Explained test rows per fold (seeded subsample); 0 disables SHAP.
    pub explain_rows_per_fold: usize,
    pub background_cap: usize,
    pub ci_level: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            explain_rows_per_fold: 1000,
            background_cap: treeshap::MAX_BACKGROUND,
            ci_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_pos: usize,
    pub n_validation: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub validation_auroc: Option<f64>,
    pub validation_auprc: Option<f64>,
    pub failure: Option<String>,
}

/// SHAP results pooled over the folds' test rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledShap {
    /// Explained rows, aligned with `explanations`.
    pub rows: Dataset,
    pub explanations: Vec<ShapExplanation>,
    pub importance: ImportanceTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramingReport {
    pub framing: FramingKind,
    pub config: FramingConfig,
    pub balance: ClassBalance,
    pub n_samples: usize,
    pub folds: Vec<FoldResult>,
    /// `(mean, half_width)`; `None` unless all five folds succeeded.
    pub auroc: Option<(f64, f64)>,
    pub auprc: Option<(f64, f64)>,
    pub missingness: Option<MissingnessReport>,
    pub shap: Option<PooledShap>,
}

impl FramingReport {
    /// Pretty JSON of this framing alone, in the report's per-framing layout.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&framing_json(self)).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn auroc_mean(&self) -> Option<f64> {
        self.auroc.map(|(m, _)| m)
    }

    pub fn auprc_mean(&self) -> Option<f64> {
        self.auprc.map(|(m, _)| m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub seed: u64,
    pub n_admissions: usize,
    pub n_patients: usize,
    pub n_septic_admissions: usize,
    pub hyperparams: HyperParams,
    pub options: ExperimentOptions,
    pub provenance: String,
    pub framings: Vec<FramingReport>,
}

impl MetricsReport {
    pub fn framing(&self, kind: FramingKind) -> Option<&FramingReport> {
        self.framings.iter().find(|f| f.framing == kind)
    }

    /// JSON with every number rounded to 6 decimals; keys sorted, so equal
    /// reports give identical bytes.
    pub fn to_json(&self) -> String {
        let mut framings = Map::new();
        for f in &self.framings {
            framings.insert(f.framing.as_str().to_string(), framing_json(f));
        }
        let hp = &self.hyperparams;
        let metadata = json!({
            "seed": self.seed,
            "n_admissions": self.n_admissions,
            "n_patients": self.n_patients,
            "n_septic_admissions": self.n_septic_admissions,
            "provenance": self.provenance,
            "hyperparams": {
                "n_rounds": hp.n_rounds,
                "max_depth": hp.max_depth,
                "learning_rate": round6(hp.learning_rate),
                "min_child_weight": round6(hp.min_child_weight),
                "l2_reg": round6(hp.l2_reg),
                "subsample": round6(hp.subsample),
                "seed": hp.seed,
            },
            "cv": "5 patient-grouped folds; each fold trains on 80% of patients and splits the held-out 20% into test and validation halves",
            "ci_method": format!(
                "{}% interval: mean +/- t(df=4) * sd / sqrt(5); reconstructed, matches published fold tables",
                round6(self.options.ci_level * 100.0)
            ),
            "shap": format!(
                "path-dependent TreeSHAP on the margin (log-odds) scale; signs and orderings are the interpretable content; background = training fold capped at {} rows; up to {} test rows explained per fold",
                self.options.background_cap, self.options.explain_rows_per_fold
            ),
            "sofa": PARTIAL_SOFA_NOTE,
        });
        let v = json!({ "metadata": metadata, "framings": Value::Object(framings) });
        let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
        s.push('\n');
        s
    }
}

fn round6(x: f64) -> Value {
    if x.is_finite() {
        let r = (x * 1e6).round() / 1e6;
        json!(if r == 0.0 { 0.0 } else { r })
    } else {
        Value::Null
    }
}

fn opt6(x: Option<f64>) -> Value {
    x.map_or(Value::Null, round6)
}

fn framing_json(f: &FramingReport) -> Value {
    let folds: Vec<Value> = f
        .folds
        .iter()
        .map(|r| {
            json!({
                "fold": r.fold,
                "auroc": opt6(r.auroc),
                "auprc": opt6(r.auprc),
                "n_test": r.n_test,
                "n_pos": r.n_pos,
                "n_train": r.n_train,
                "n_validation": r.n_validation,
                "validation_auroc": opt6(r.validation_auroc),
                "validation_auprc": opt6(r.validation_auprc),
                "failure": r.failure,
            })
        })
        .collect();
    let missingness: Value = f.missingness.as_ref().map_or(Value::Null, |m| {
        Value::Object(m.features.iter().map(|(n, p)| (n.clone(), round6(*p))).collect())
    });
    let c = &f.config;
    json!({
        "folds": folds,
        "auroc_mean": opt6(f.auroc_mean()),
        "auroc_ci": opt6(f.auroc.map(|(_, h)| h)),
        "auprc_mean": opt6(f.auprc_mean()),
        "auprc_ci": opt6(f.auprc.map(|(_, h)| h)),
        "class_ratio": f.balance.to_string(),
        "n_samples": f.n_samples,
        "n_positive": f.balance.positives,
        "n_negative": f.balance.negatives,
        "missingness": missingness,
        "config": {
            "horizon_h": round6(c.horizon_h),
            "chunk_h": round6(c.chunk_h),
            "prediction_window_h": round6(c.prediction_window_h),
            "observation_window_h": round6(c.observation_window_h),
            "random_horizon_h": [round6(c.random_horizon_h[0]), round6(c.random_horizon_h[1])],
            "seed": c.seed,
        },
    })
}

fn pair_metrics(scores: &[f64], labels: &[bool]) -> (Option<f64>, Option<f64>) {
    (auroc(scores, labels).ok(), auprc(scores, labels).ok())
}

fn pick<T: Clone>(xs: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| xs[i].clone()).collect()
}

struct FoldOutput {
    result: FoldResult,
    explained: Vec<(usize, ShapExplanation)>,
}

fn run_fold(
    d: &Dataset,
    matrix: &[f64],
    labels: &[bool],
    plan: &FoldPlan,
    fold: usize,
    hp: &HyperParams,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<FoldOutput> {
    let rows = plan.rows(fold, d)?;
    let m = d.n_features();
    let mut result = FoldResult {
        fold,
        n_train: rows.train.len(),
        n_test: rows.test.len(),
        n_pos: rows.test.iter().filter(|&&i| labels[i]).count(),
        n_validation: rows.validation.len(),
        auroc: None,
        auprc: None,
        validation_auroc: None,
        validation_auprc: None,
        failure: None,
    };
    let gather = |idx: &[usize]| -> Vec<f64> { idx.iter().flat_map(|&i| matrix[i * m..(i + 1) * m].iter().copied()).collect() };
    let train_x = gather(&rows.train);
    let train_y = pick(labels, &rows.train);
    let model = match gbdt::train_matrix(&train_x, &train_y, d.feature_names.clone(), hp) {
        Ok((e, _)) => e,
        Err(e) => {
            result.failure = Some(format!("training failed: {e}"));
            return Ok(FoldOutput {
                result,
                explained: Vec::new(),
            });
        }
    };
    let test_x = gather(&rows.test);
    let test_y = pick(labels, &rows.test);
    let test_scores = model.margins(&test_x);
    let val_scores = model.margins(&gather(&rows.validation));
    (result.validation_auroc, result.validation_auprc) = pair_metrics(&val_scores, &pick(labels, &rows.validation));
    match (auroc(&test_scores, &test_y), auprc(&test_scores, &test_y)) {
        (Ok(a), Ok(p)) => {
            result.auroc = Some(a);
            result.auprc = Some(p);
        }
        (Err(e), _) | (_, Err(e)) => result.failure = Some(format!("test partition: {e}")),
    }

    let mut explained = Vec::new();
    if opts.explain_rows_per_fold > 0 && !rows.test.is_empty() {
        let bg_idx = background_indices(rows.train.len(), opts.background_cap, seed ^ fold as u64);
        let background = gather(&pick(&rows.train, &bg_idx));
        let explainer = Explainer::new(&model, &background)?;
        let chosen: Vec<usize> = if rows.test.len() <= opts.explain_rows_per_fold {
            rows.test.clone()
        } else {
            let mut rng = seed::rng(seed, stream::EXPLAIN_ROWS, fold as u64);
            let mut k = rand::seq::index::sample(&mut rng, rows.test.len(), opts.explain_rows_per_fold).into_vec();
            k.sort_unstable();
            pick(&rows.test, &k)
        };
        let ex = explainer.explain_matrix(&gather(&chosen));
        explained = chosen.into_iter().zip(ex).collect();
    }
    Ok(FoldOutput { result, explained })
}

/// Frames, featurizes, cross-validates and explains one framing.
pub fn evaluate_framing(
    c: &Cohort,
    labels: &[(crate::sepsis3::SepsisLabel, crate::sepsis3::SofaSeries)],
    cfg: &FramingConfig,
    hp: &HyperParams,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<FramingReport> {
    let samples = sample_cohort(c, labels, cfg)?;
    let d = build_dataset(c, &samples)?;
    evaluate_dataset(&d, cfg, hp, seed, opts)
}

/// Cross-validates and explains an already featurized dataset.
pub fn evaluate_dataset(
    d: &Dataset,
    cfg: &FramingConfig,
    hp: &HyperParams,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<FramingReport> {
    let mut report = FramingReport {
        framing: cfg.kind,
        config: cfg.clone(),
        balance: class_balance(&d.rows.iter().map(|r| r.sample.clone()).collect::<Vec<_>>()),
        n_samples: d.len(),
        folds: Vec::new(),
        auroc: None,
        auprc: None,
        missingness: missingness_report(d).ok(),
        shap: None,
    };
    if d.is_empty() {
        return Ok(report);
    }
    let plan = cv_split(d, seed)?;
    let matrix = d.to_matrix();
    let y = d.labels();
    let mut explained: Vec<(usize, ShapExplanation)> = Vec::new();
    for fold in 0..N_FOLDS {
        let out = run_fold(d, &matrix, &y, &plan, fold, hp, seed, opts)?;
        report.folds.push(out.result);
        explained.extend(out.explained);
    }
    let ok = |get: fn(&FoldResult) -> Option<f64>| -> Option<Vec<f64>> { report.folds.iter().map(get).collect() };
    if let Some(v) = ok(|f| f.auroc) {
        report.auroc = Some(fold_ci(&v, opts.ci_level)?);
    }
    if let Some(v) = ok(|f| f.auprc) {
        report.auprc = Some(fold_ci(&v, opts.ci_level)?);
    }
    if !explained.is_empty() {
        let (idx, explanations): (Vec<usize>, Vec<ShapExplanation>) = explained.into_iter().unzip();
        let importance = treeshap::global_importance(&explanations)?;
        report.shap = Some(PooledShap {
            rows: d.subset(&idx),
            explanations,
            importance,
        });
    }
    Ok(report)
}

/// Runs every framing on the cohort. Framings are evaluated in the given
/// order; all randomness derives from the framing seeds, `hp.seed` and `seed`.
pub fn run_experiment(
    c: &Cohort,
    framings: &[FramingConfig],
    hp: &HyperParams,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<MetricsReport> {
    if framings.is_empty() {
        return Err(Error::InvalidInput("no framings to evaluate".into()));
    }
    hp.validate()?;
    let mut seen = BTreeMap::new();
    for f in framings {
        if seen.insert(f.kind, ()).is_some() {
            return Err(Error::InvalidInput(format!("framing {} listed twice", f.kind)));
        }
    }
    let labels = label_cohort(c);
    let framings = framings
        .iter()
        .map(|cfg| evaluate_framing(c, &labels, cfg, hp, seed, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        seed,
        n_admissions: c.len(),
        n_patients: c.n_patients(),
        n_septic_admissions: labels.iter().filter(|(l, _)| l.is_positive()).count(),
        hyperparams: hp.clone(),
        options: opts.clone(),
        provenance: c.provenance.clone(),
        framings,
    })
}

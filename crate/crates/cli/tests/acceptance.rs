//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use framebench::cohort::{Cohort, Parameter};
use framebench::eval::{auprc, auroc, fold_ci, run_experiment, ExperimentOptions};
use framebench::features::{build_dataset, missingness_report, Dataset};
use framebench::framing::{class_balance, sample_cohort, ClassBalance, FramingConfig, FramingKind};
use framebench::gbdt::{from_json, to_json, train_matrix, train_with_history, HyperParams};
use framebench::sepsis3::{label_cohort, sepsis_onset, SepsisLabel, SofaSeries};
use framebench::synthgen::{generate_cohort, SynthConfig};
use framebench::treeshap::{brute_force_shap_row, Explainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct Default2000 {
    cohort: Cohort,
    labels: Vec<(SepsisLabel, SofaSeries)>,
}

impl Default2000 {
    fn new() -> Self {
        let cohort = generate_cohort(&SynthConfig::default()).expect("default cohort");
        let labels = label_cohort(&cohort);
        Default2000 { cohort, labels }
    }

    fn dataset(&self, kind: FramingKind) -> Dataset {
        let samples = sample_cohort(&self.cohort, &self.labels, &FramingConfig::new(kind)).unwrap();
        build_dataset(&self.cohort, &samples).unwrap()
    }
}

fn c1_fold_ci() -> Outcome {
    let (m, h) = fold_ci(&[0.400, 0.390, 0.348, 0.385, 0.390], 0.95).map_err(|e| e.to_string())?;
    check((m - 0.3825).abs() <= 0.0005 && (h - 0.0251).abs() <= 0.001, format!("AUPRC column gave {m:.4} +/- {h:.4}"))?;
    let (m2, h2) = fold_ci(&[0.8181, 0.8259, 0.8101, 0.8173, 0.8192], 0.95).map_err(|e| e.to_string())?;
    check((m2 - 0.8181).abs() <= 0.0005 && (h2 - 0.0070).abs() <= 0.0005, format!("AUROC column gave {m2:.4} +/- {h2:.4}"))?;
    Ok(format!("AUPRC {m:.4} +/- {h:.4}; AUROC {m2:.4} +/- {h2:.4}"))
}

fn c2_class_ratio(d: &Default2000) -> Outcome {
    let golden = ClassBalance {
        positives: 1250,
        negatives: 18726,
    }
    .to_string();
    check(golden == "1:14.98", format!("1250/18726 formatted as {golden}"))?;
    let count = |k| sample_cohort(&d.cohort, &d.labels, &FramingConfig::new(k)).unwrap();
    let fixed = count(FramingKind::FixedTimeToOnset);
    let sliding = count(FramingKind::SlidingWindow);
    let dynamic = count(FramingKind::SlidingWindowDynamicInclusion);
    let ocd = count(FramingKind::OnClinicalDemand);
    let (rf, rs) = (class_balance(&fixed).ratio(), class_balance(&sliding).ratio());
    check((15.0 * 0.7..=15.0 * 1.3).contains(&rf), format!("fixed ratio 1:{rf:.2} outside 1:15 +/- 30%"))?;
    check(rs > 100.0, format!("sliding ratio 1:{rs:.2} not above 1:100"))?;
    check(fixed.len() < ocd.len(), "fixed should yield fewer samples than on-clinical-demand")?;
    check(dynamic.len() <= sliding.len(), "dynamic inclusion should not exceed sliding window")?;
    Ok(format!(
        "golden {golden}; fixed {} ({} samples), sliding {} ({} samples)",
        class_balance(&fixed),
        fixed.len(),
        class_balance(&sliding),
        sliding.len()
    ))
}

fn c3_missingness(d: &Default2000) -> Outcome {
    let mut pct: BTreeMap<FramingKind, framebench::features::MissingnessReport> = BTreeMap::new();
    for kind in FramingKind::ALL {
        let ds = d.dataset(kind);
        let r = missingness_report(&ds).map_err(|e| format!("{kind}: {e}"))?;
        for p in Parameter::ALL {
            let v = r.percent(p.name()).unwrap();
            let dl = r.percent(&format!("{}_delta", p.name())).unwrap();
            check(dl >= v, format!("{kind} {}: delta {dl:.2}% below value {v:.2}%", p.name()))?;
        }
        pct.insert(kind, r);
    }
    let ocd = &pct[&FramingKind::OnClinicalDemand];
    for p in Parameter::VITALS.iter().filter(|&&p| p != Parameter::Temperature) {
        let v = ocd.percent(p.name()).unwrap();
        check(v == 0.0, format!("on-clinical-demand {} missing {v:.2}%", p.name()))?;
    }
    // Strict ordering is checked against the compared framings. The
    // admission-triggered at-event window always contains the admission
    // assessment, so it can tie on the co-measured vitals.
    for p in Parameter::VITALS {
        let o = ocd.percent(p.name()).unwrap();
        for k in FramingKind::COMPARED.into_iter().filter(|&k| k != FramingKind::OnClinicalDemand) {
            let v = pct[&k].percent(p.name()).unwrap();
            check(o < v, format!("{}: on-clinical-demand {o:.2}% not below {k} {v:.2}%", p.name()))?;
        }
    }
    let hr = |k: FramingKind| pct[&k].percent("HeartRate").unwrap();
    Ok(format!(
        "HeartRate missing: ocd {:.2}%, fixed {:.2}%, sliding {:.2}%, dynamic {:.2}%, at_event {:.2}%, random {:.2}%; Temperature ocd {:.2}%",
        hr(FramingKind::OnClinicalDemand),
        hr(FramingKind::FixedTimeToOnset),
        hr(FramingKind::SlidingWindow),
        hr(FramingKind::SlidingWindowDynamicInclusion),
        hr(FramingKind::AtEvent),
        hr(FramingKind::RandomTimeToOnset),
        ocd.percent("Temperature").unwrap()
    ))
}

fn c4_metric_ordering(d: &Default2000) -> Outcome {
    let framings: Vec<FramingConfig> = FramingKind::COMPARED
        .iter()
        .map(|&k| FramingConfig::new(k).with_seed(7))
        .collect();
    let r = run_experiment(&d.cohort, &framings, &HyperParams::default(), 7, &ExperimentOptions::default())
        .map_err(|e| e.to_string())?;
    let get = |k: FramingKind| -> Result<(f64, f64), String> {
        let f = r.framing(k).ok_or(format!("{k} missing"))?;
        Ok((
            f.auroc_mean().ok_or(format!("{k}: AUROC unavailable"))?,
            f.auprc_mean().ok_or(format!("{k}: AUPRC unavailable"))?,
        ))
    };
    let mut line = Vec::new();
    let mut rocs = Vec::new();
    for k in FramingKind::COMPARED {
        let (roc, pr) = get(k)?;
        rocs.push(roc);
        line.push(format!("{k} AUROC {roc:.3} AUPRC {pr:.3}"));
    }
    let summary = line.join("; ");
    let (_, pf) = get(FramingKind::FixedTimeToOnset)?;
    let (_, po) = get(FramingKind::OnClinicalDemand)?;
    let (_, ps) = get(FramingKind::SlidingWindow)?;
    check(pf > po && po > ps, format!("AUPRC ordering broken: {summary}"))?;
    let spread = rocs.iter().cloned().fold(f64::MIN, f64::max) - rocs.iter().cloned().fold(f64::MAX, f64::min);
    check(spread <= 0.15, format!("AUROC spread {spread:.3} > 0.15: {summary}"))?;
    Ok(format!("{summary}; AUROC spread {spread:.3}"))
}

fn c5_metric_oracles() -> Outcome {
    let ex = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).map_err(|e| e.to_string())?;
    check((ex - 0.75).abs() < 1e-15, format!("worked example gave {ex}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 1000 {
        let n = rng.gen_range(2..=50);
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
            continue;
        }
        let levels = rng.gen_range(2..=60);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..levels)) / 7.0).collect();
        worst = worst.max((auroc(&scores, &labels).unwrap() - oracles::pairwise_auroc(&scores, &labels)).abs());
        instances += 1;
    }
    check(worst <= 1e-12, format!("AUROC deviates by {worst:e}"))?;
    let mut worst_ap: f64 = 0.0;
    let mut cases = 0usize;
    for n in 1..=12usize {
        for mask in 1u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            for _ in 0..2 {
                let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..=n as i32))).collect();
                worst_ap = worst_ap.max((auprc(&scores, &labels).unwrap() - oracles::rank_walk_ap(&scores, &labels)).abs());
                cases += 1;
            }
        }
    }
    check(worst_ap <= 1e-12, format!("AUPRC deviates by {worst_ap:e}"))?;
    Ok(format!("worked example 0.75; 1000 AUROC instances max err {worst:e}; {cases} AUPRC cases max err {worst_ap:e}"))
}

fn c6_shap(d: &Default2000) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut ensembles = 0;
    while ensembles < 250 {
        let m = rng.gen_range(1..=16);
        let e = oracles::random_ensemble(&mut rng, m, 12);
        if e.used_features().len() > 12 {
            continue;
        }
        let n_bg = rng.gen_range(1..50);
        let bg = oracles::random_rows(&mut rng, n_bg, m);
        let ex = Explainer::new(&e, &bg).map_err(|e| e.to_string())?;
        for row in oracles::random_rows(&mut rng, 4, m).chunks(m) {
            let fast = ex.explain_row(row);
            let slow = brute_force_shap_row(&e, row, &bg).map_err(|e| e.to_string())?;
            let (reference, _) = oracles::enumerate_shapley(&e, row, &bg);
            for j in 0..m {
                worst = worst.max((fast.phis[j] - slow.phis[j]).abs()).max((fast.phis[j] - reference[j]).abs());
            }
        }
        ensembles += 1;
    }
    check(worst <= 1e-9, format!("TreeSHAP deviates from enumeration by {worst:e}"))?;

    let ds = d.dataset(FramingKind::SlidingWindow);
    let x = ds.to_matrix();
    let hp = HyperParams {
        n_rounds: 100,
        ..HyperParams::default()
    };
    let (model, _) = train_matrix(&x, &ds.labels(), ds.feature_names.clone(), &hp).map_err(|e| e.to_string())?;
    let rows = 1000.min(ds.len());
    let bg_rows = 500.min(ds.len());
    let ex = Explainer::new(&model, &x[..bg_rows * ds.n_features()]).map_err(|e| e.to_string())?;
    let local = ex
        .explain_matrix(&x[..rows * ds.n_features()])
        .iter()
        .map(|e| e.additivity_error())
        .fold(0.0, f64::max);
    check(rows >= 1000, "fewer than 1000 rows to explain")?;
    check(local <= 1e-9, format!("local accuracy error {local:e}"))?;
    Ok(format!("{ensembles} ensembles max err {worst:e}; {rows} trained-model rows max additivity err {local:e}"))
}

fn c7_labeler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut positives = 0;
    for id in 0..10_000 {
        let a = oracles::random_admission(&mut rng, id);
        let want = oracles::brute_force_onset(&a);
        let got = sepsis_onset(&a).onset;
        check(got == want, format!("admission {id}: labeler {got:?}, oracle {want:?}"))?;
        positives += usize::from(want.is_some());
    }
    // explicit boundary cases: exact 72 h / 24 h gaps and an exact two-point rise
    use framebench::cohort::{Admission, ClinicalEvent, EventKind};
    let case = |gap_kind: EventKind, gap: f64, platelets: f64| {
        let other = if gap_kind == EventKind::Culture { EventKind::Antibiotic } else { EventKind::Culture };
        Admission::new(
            "B",
            "B",
            300.0,
            vec![
                ClinicalEvent::measurement(0.0, Parameter::Platelets, 200.0),
                ClinicalEvent::marker(100.0, gap_kind),
                ClinicalEvent::marker(100.0 + gap, other),
                ClinicalEvent::measurement(110.0, Parameter::Platelets, platelets),
            ],
        )
    };
    let boundary = [
        (case(EventKind::Culture, 72.0, 90.0), Some(100.0)),
        (case(EventKind::Culture, 72.25, 90.0), None),
        (case(EventKind::Antibiotic, 24.0, 90.0), Some(100.0)),
        (case(EventKind::Antibiotic, 24.25, 90.0), None),
        (case(EventKind::Culture, 1.0, 90.0), Some(100.0)),
        (case(EventKind::Culture, 1.0, 140.0), None),
    ];
    for (i, (a, want)) in boundary.iter().enumerate() {
        check(sepsis_onset(a).onset == *want && oracles::brute_force_onset(a) == *want, format!("boundary case {i}"))?;
    }
    Ok(format!("10000/10000 agree ({positives} positive); {} boundary cases", boundary.len()))
}

fn c8_gbdt(d: &Default2000) -> Outcome {
    let ds = d.dataset(FramingKind::FixedTimeToOnset);
    let (model, hist) = train_with_history(&ds, &HyperParams::default()).map_err(|e| e.to_string())?;
    let rises = hist.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
    check(rises == 0, format!("training loss rose {rises} times"))?;

    let x: Vec<f64> = (-200..200).map(|i| f64::from(i) + 0.5).collect();
    let y: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
    let hp = HyperParams {
        n_rounds: 50,
        max_depth: 1,
        ..HyperParams::default()
    };
    let (toy, _) = train_matrix(&x, &y, vec!["x".into()], &hp).map_err(|e| e.to_string())?;
    let correct = x.iter().zip(&y).filter(|(&v, &l)| (toy.margin_row(&[v]) > 0.0) == l).count();
    check(correct == y.len(), format!("toy accuracy {correct}/{}", y.len()))?;

    let back = from_json(&to_json(&model)).map_err(|e| e.to_string())?;
    let m = ds.to_matrix();
    let err = model
        .margins(&m)
        .iter()
        .zip(back.margins(&m))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check(err <= 1e-12, format!("round trip changed margins by {err:e}"))?;
    Ok(format!(
        "log-loss {:.4} -> {:.4} over {} rounds; toy accuracy 1.0; round-trip max err {err:e}",
        hist[0],
        hist[hist.len() - 1],
        hist.len() - 1
    ))
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 11\nn_admissions = 400\nn_rounds = 40\nexplain_rows_per_fold = 150\n",
    )
    .map_err(|e| e.to_string())?;
    let run = |out: &Path| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_framebench"))
            .args(["report", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .env("FRAMEBENCH_THREADS", "0")
            .output()
            .map_err(|e| e.to_string())?;
        check(
            status.status.success(),
            format!("report failed: {}", String::from_utf8_lossy(&status.stderr)),
        )
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a)?;
    run(&b)?;
    let mut compared = 0;
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for name in &names {
        let s = name.to_string_lossy();
        if !(s.ends_with(".json") || s.ends_with(".svg")) {
            continue;
        }
        let x = std::fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(name)).map_err(|e| format!("{s} missing in second run: {e}"))?;
        check(x == y, format!("{s} differs between runs"))?;
        compared += 1;
    }
    check(names.iter().any(|n| n == "report.json"), "no report.json written")?;
    check(names.iter().any(|n| n.to_string_lossy().ends_with(".svg")), "no SVG written")?;
    Ok(format!("{compared} JSON/SVG files byte-identical"))
}

fn main() {
    // libtest flags such as --list or filters are accepted and ignored
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let t0 = Instant::now();
    let data = Default2000::new();
    println!("default cohort: {} admissions, generated and labeled in {:.1}s", data.cohort.len(), t0.elapsed().as_secs_f64());

    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 fold CI golden values", Duration::from_secs(1), Box::new(c1_fold_ci)),
        ("2 class ratio", Duration::from_secs(30), Box::new(|| c2_class_ratio(&data))),
        ("3 missingness structure", Duration::from_secs(120), Box::new(|| c3_missingness(&data))),
        ("4 metric ordering", Duration::from_secs(600), Box::new(|| c4_metric_ordering(&data))),
        ("5 metric oracles", Duration::from_secs(120), Box::new(c5_metric_oracles)),
        ("6 SHAP exactness", Duration::from_secs(120), Box::new(|| c6_shap(&data))),
        ("7 labeler oracle", Duration::from_secs(120), Box::new(c7_labeler)),
        ("8 GBDT sanity", Duration::from_secs(120), Box::new(|| c8_gbdt(&data))),
        ("9 determinism", Duration::from_secs(600), Box::new(c9_determinism)),
    ];
    let mut failed = 0;
    for (name, budget, f) in &criteria {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let over = took > *budget;
        match (&outcome, over) {
            (Ok(detail), false) => println!("criterion {name}: PASS ({:.2}s) {detail}", took.as_secs_f64()),
            (Ok(detail), true) => {
                failed += 1;
                println!(
                    "criterion {name}: FAIL ({:.2}s, over the {}s budget) {detail}",
                    took.as_secs_f64(),
                    budget.as_secs()
                );
            }
            (Err(why), _) => {
                failed += 1;
                println!("criterion {name}: FAIL ({:.2}s) {why}", took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Independent reference implementations used by the integration and
//! acceptance tests. Deliberately naive: quadratic scans and recomputation
//! from scratch instead of the library's incremental structures.
#![allow(dead_code)]

use framebench::cohort::{Admission, ClinicalEvent, EventKind, Parameter};
use framebench::gbdt::{Node, Tree, TreeEnsemble};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- sepsis

/// Pairs cultures and antibiotics greedily in chronological order (culture
/// first on equal timestamps); returns index times of the episodes.
pub fn si_index_times(a: &Admission) -> Vec<f64> {
    let mut marks: Vec<(f64, bool)> = Vec::new();
    for e in &a.events {
        match e.kind {
            EventKind::Culture => marks.push((e.timestamp, true)),
            EventKind::Antibiotic => marks.push((e.timestamp, false)),
            _ => {}
        }
    }
    // insertion sort keeps it obviously stable
    for i in 1..marks.len() {
        let mut j = i;
        while j > 0 && before(marks[j], marks[j - 1]) {
            marks.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut used = vec![false; marks.len()];
    let mut out = Vec::new();
    for i in 0..marks.len() {
        if used[i] {
            continue;
        }
        for j in i + 1..marks.len() {
            if used[j] || marks[j].1 == marks[i].1 {
                continue;
            }
            let gap = marks[j].0 - marks[i].0;
            let ok = if marks[i].1 { gap >= 0.0 && gap <= 72.0 } else { gap > 0.0 && gap <= 24.0 };
            if ok {
                used[i] = true;
                used[j] = true;
                out.push(marks[i].0);
                break;
            }
        }
    }
    out
}

fn before(x: (f64, bool), y: (f64, bool)) -> bool {
    x.0 < y.0 || (x.0 == y.0 && x.1 && !y.1)
}

fn count_below(v: f64, bounds: &[f64]) -> u8 {
    bounds.iter().filter(|&&b| v < b).count() as u8
}

fn count_at_least(v: f64, bounds: &[f64], top: f64) -> u8 {
    bounds.iter().filter(|&&b| v >= b).count() as u8 + u8::from(v > top)
}

/// Latest value among `params` at or before `t` (later events win ties).
fn latest(a: &Admission, params: &[Parameter], t: f64) -> Option<(Parameter, f64)> {
    let mut best: Option<(f64, Parameter, f64)> = None;
    for e in &a.events {
        if let (Some(p), Some(v)) = (e.parameter, e.value) {
            if params.contains(&p) && e.timestamp <= t && best.is_none_or(|(bt, _, _)| e.timestamp >= bt) {
                best = Some((e.timestamp, p, v));
            }
        }
    }
    best.map(|(_, p, v)| (p, v))
}

/// Partial SOFA total at time `t`, recomputed from every event.
pub fn sofa_at(a: &Admission, t: f64) -> u8 {
    let resp = match latest(a, &[Parameter::AbPo2, Parameter::SpO2], t) {
        Some((Parameter::AbPo2, kpa)) => count_below(kpa * 7.500_62 / 0.21, &[400.0, 300.0, 200.0, 100.0]),
        Some((_, spo2)) => count_below(spo2, &[94.0, 91.0, 86.0, 80.0]),
        None => 0,
    };
    let coag = latest(a, &[Parameter::Platelets], t).map_or(0, |(_, v)| count_below(v, &[150.0, 100.0, 50.0, 20.0]));
    let liver = latest(a, &[Parameter::Bilirubin], t).map_or(0, |(_, v)| count_at_least(v, &[20.0, 33.0, 102.0], 204.0));
    let renal = match latest(a, &[Parameter::Creatinine, Parameter::Egfr], t) {
        Some((Parameter::Creatinine, v)) => count_at_least(v, &[110.0, 171.0, 300.0], 440.0),
        Some((_, v)) => count_below(v, &[60.0, 30.0, 15.0, 10.0]),
        None => 0,
    };
    let cardio = match (
        latest(a, &[Parameter::SystolicBp], t),
        latest(a, &[Parameter::DiastolicBp], t),
    ) {
        (Some((_, s)), Some((_, d))) => u8::from((s + 2.0 * d) / 3.0 < 70.0),
        _ => 0,
    };
    resp + coag + liver + renal + cardio
}

/// Onset by trying every SI episode and every time point inside its window.
pub fn brute_force_onset(a: &Admission) -> Option<f64> {
    for si in si_index_times(a) {
        let start = si - 48.0;
        let end = (si + 24.0).min(a.length_of_stay);
        let (baseline, from) = if start < 0.0 { (0, 0.0) } else { (sofa_at(a, start), start) };
        let mut candidates = vec![from];
        candidates.extend(a.events.iter().map(|e| e.timestamp).filter(|&t| t > from && t <= end));
        let peak = candidates.iter().filter(|&&t| t <= end).map(|&t| sofa_at(a, t)).max();
        if peak.is_some_and(|p| p >= baseline + 2) {
            return Some(si);
        }
    }
    None
}

/// Random small admission on an hourly grid so that window boundaries are
/// hit exactly; values straddle the SOFA thresholds.
pub fn random_admission(rng: &mut ChaCha8Rng, id: usize) -> Admission {
    let los = f64::from(rng.gen_range(24u32..=160));
    let grid = |rng: &mut ChaCha8Rng| f64::from(rng.gen_range(0..=los as u32));
    let mut events = Vec::new();
    let n_marks = rng.gen_range(0..=6);
    let anchor = grid(rng);
    for _ in 0..n_marks {
        // cluster around an anchor so pairs and exact 24/72 h gaps are common
        let off = [0.0, 24.0, -24.0, 72.0, -72.0, 23.0, 25.0, 71.0, 73.0, 1.0, -1.0][rng.gen_range(0..11)];
        let t = if rng.gen_bool(0.7) { (anchor + off).clamp(0.0, los) } else { grid(rng) };
        let kind = if rng.gen_bool(0.5) { EventKind::Culture } else { EventKind::Antibiotic };
        events.push(ClinicalEvent::marker(t, kind));
    }
    let choices: [(Parameter, &[f64]); 8] = [
        (Parameter::Platelets, &[250.0, 150.0, 149.0, 100.0, 99.0, 50.0, 20.0, 10.0]),
        (Parameter::Bilirubin, &[10.0, 20.0, 33.0, 102.0, 204.0, 205.0]),
        (Parameter::Creatinine, &[80.0, 110.0, 171.0, 300.0, 440.0, 441.0]),
        (Parameter::Egfr, &[90.0, 60.0, 59.0, 30.0, 15.0, 9.0]),
        (Parameter::SpO2, &[98.0, 94.0, 93.0, 90.0, 85.0, 79.0]),
        (Parameter::AbPo2, &[12.0, 11.2, 9.0, 5.0, 2.5]),
        (Parameter::SystolicBp, &[130.0, 90.0, 70.0]),
        (Parameter::DiastolicBp, &[80.0, 60.0, 45.0]),
    ];
    let n_meas = rng.gen_range(0..=10);
    for _ in 0..n_meas {
        let (p, vals) = choices[rng.gen_range(0..choices.len())];
        let t = if rng.gen_bool(0.5) {
            (anchor + f64::from(rng.gen_range(-60i32..=30))).clamp(0.0, los)
        } else {
            grid(rng)
        };
        events.push(ClinicalEvent::measurement(t, p, vals[rng.gen_range(0..vals.len())]));
    }
    Admission::new(format!("R{id}"), format!("P{id}"), los, events)
}

// ---------------------------------------------------------------- metrics

/// AUROC by counting every positive/negative pair.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Average precision by walking the ranked list and summing precision times
/// recall increments. Ties keep input order.
pub fn rank_walk_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // selection of the max with lowest index, repeated
    let mut ranked = Vec::new();
    while !idx.is_empty() {
        let mut best = 0;
        for k in 1..idx.len() {
            if scores[idx[k]] > scores[idx[best]] {
                best = k;
            }
        }
        ranked.push(idx.remove(best));
    }
    let (mut tp, mut prev_recall, mut ap) = (0.0, 0.0, 0.0);
    for (k, &i) in ranked.iter().enumerate() {
        if labels[i] {
            tp += 1.0;
        }
        let recall = tp / n_pos;
        let precision = tp / (k + 1) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Trapezoidal area under the ROC curve built from distinct thresholds.
pub fn trapezoid_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&y| y).count() as f64;
    let n = labels.len() as f64 - p;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &y)| y && s >= t).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(&s, &y)| !y && s >= t).count() as f64;
        pts.push((fp / n, tp / p));
    }
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

// ---------------------------------------------------------------- trees

/// Random tree of depth up to `max_depth` over `features`; thresholds on a
/// coarse grid so background rows land on both sides.
pub fn random_tree(rng: &mut ChaCha8Rng, features: &[usize], max_depth: usize) -> Tree {
    fn grow(rng: &mut ChaCha8Rng, features: &[usize], depth: usize, nodes: &mut Vec<Node>) -> usize {
        let idx = nodes.len();
        if depth == 0 || rng.gen_bool(0.2) {
            nodes.push(Node::Leaf {
                value: rng.gen_range(-2.0..2.0),
            });
            return idx;
        }
        nodes.push(Node::Leaf { value: 0.0 });
        let feature = features[rng.gen_range(0..features.len())];
        let threshold = f64::from(rng.gen_range(-4i32..=4)) * 0.5;
        let default_left = rng.gen_bool(0.5);
        let left = grow(rng, features, depth - 1, nodes);
        let right = grow(rng, features, depth - 1, nodes);
        nodes[idx] = Node::Split {
            feature,
            threshold,
            default_left,
            left,
            right,
        };
        idx
    }
    let mut nodes = Vec::new();
    grow(rng, features, max_depth, &mut nodes);
    Tree { nodes }
}

pub fn random_ensemble(rng: &mut ChaCha8Rng, n_features: usize, max_used: usize) -> TreeEnsemble {
    let k = rng.gen_range(1..=max_used.min(n_features));
    let mut pool: Vec<usize> = (0..n_features).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n_features);
        pool.swap(i, j);
    }
    let used = &pool[..k];
    let n_trees = rng.gen_range(1..=4);
    TreeEnsemble {
        base_score: rng.gen_range(-1.0..1.0),
        trees: (0..n_trees)
            .map(|_| {
                let depth = rng.gen_range(1..=5);
                random_tree(rng, used, depth)
            })
            .collect(),
        feature_names: (0..n_features).map(|j| format!("x{j}")).collect(),
    }
}

/// Random dense rows with about 15% missing entries.
pub fn random_rows(rng: &mut ChaCha8Rng, n_rows: usize, n_features: usize) -> Vec<f64> {
    (0..n_rows * n_features)
        .map(|_| {
            if rng.gen_bool(0.15) {
                f64::NAN
            } else {
                f64::from(rng.gen_range(-10i32..=10)) * 0.25
            }
        })
        .collect()
}

// ---------------------------------------------------------------- shapley

fn routes_left(x: f64, threshold: f64, default_left: bool) -> bool {
    if x.is_nan() {
        default_left
    } else {
        x < threshold
    }
}

/// Number of background rows reaching each node.
fn node_covers(t: &Tree, background: &[f64], m: usize) -> Vec<f64> {
    let mut cover = vec![0.0; t.nodes.len()];
    for row in background.chunks(m) {
        let mut i = 0;
        loop {
            cover[i] += 1.0;
            match t.nodes[i] {
                Node::Leaf { .. } => break,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => i = if routes_left(row[feature], threshold, default_left) { left } else { right },
            }
        }
    }
    cover
}

/// Expected tree output when only features in `known` follow `row`; the
/// rest average over children by background cover (even split at zero cover).
fn coalition_value(t: &Tree, cover: &[f64], row: &[f64], known: &[bool], i: usize) -> f64 {
    match t.nodes[i] {
        Node::Leaf { value } => value,
        Node::Split {
            feature,
            threshold,
            default_left,
            left,
            right,
        } => {
            if known[feature] {
                let next = if routes_left(row[feature], threshold, default_left) { left } else { right };
                coalition_value(t, cover, row, known, next)
            } else {
                let (wl, wr) = if cover[i] == 0.0 {
                    (0.5, 0.5)
                } else {
                    (cover[left] / cover[i], cover[right] / cover[i])
                };
                wl * coalition_value(t, cover, row, known, left) + wr * coalition_value(t, cover, row, known, right)
            }
        }
    }
}

/// Exact Shapley values of the coalition game above, by enumerating every
/// subset of the features the ensemble uses. Returns (phis, base value).
pub fn enumerate_shapley(e: &TreeEnsemble, row: &[f64], background: &[f64]) -> (Vec<f64>, f64) {
    let m = e.feature_names.len();
    let covers: Vec<Vec<f64>> = e.trees.iter().map(|t| node_covers(t, background, m)).collect();
    let mut used: Vec<usize> = Vec::new();
    for t in &e.trees {
        for n in &t.nodes {
            if let Node::Split { feature, .. } = n {
                if !used.contains(feature) {
                    used.push(*feature);
                }
            }
        }
    }
    let u = used.len();
    let value = |mask: usize| {
        let mut known = vec![false; m];
        for (k, &f) in used.iter().enumerate() {
            known[f] = mask >> k & 1 == 1;
        }
        e.trees
            .iter()
            .zip(&covers)
            .map(|(t, c)| coalition_value(t, c, row, &known, 0))
            .sum::<f64>()
            + e.base_score
    };
    let v: Vec<f64> = (0..1usize << u).map(value).collect();
    let fact = |k: usize| (1..=k).map(|x| x as f64).product::<f64>();
    let mut phis = vec![0.0; m];
    for (k, &f) in used.iter().enumerate() {
        for mask in 0..1usize << u {
            if mask >> k & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            phis[f] += fact(s) * fact(u - s - 1) / fact(u) * (v[mask | 1 << k] - v[mask]);
        }
    }
    (phis, v[0])
}

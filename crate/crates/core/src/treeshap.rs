//! Exact path-dependent Shapley attributions for tree ensembles.
//!
//! A feature outside the coalition is marginalized at every split on it by
//! weighting both children with the share of background rows that reached
//! them (half each when no background row reached the split). A feature
//! inside the coalition follows the explained row, including its default
//! direction when missing. Attributions are on the margin (log-odds) scale,
//! so `sum(phis) + base_value == margin` holds exactly up to rounding.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureVector};
use crate::gbdt::{Node, Tree, TreeEnsemble};
use crate::seed::{self, stream};

/// Background rows kept by [`background_indices`].
pub const MAX_BACKGROUND: usize = 2048;
/// Largest used-feature count [`brute_force_shap`] accepts.
pub const MAX_BRUTE_FORCE_FEATURES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapExplanation {
    pub phis: Vec<f64>,
    pub base_value: f64,
    pub margin: f64,
}

impl ShapExplanation {
    /// `|sum(phis) + base_value - margin|`.
    pub fn additivity_error(&self) -> f64 {
        (self.phis.iter().sum::<f64>() + self.base_value - self.margin).abs()
    }
}

/// Seeded subsample of at most `cap` row indices, returned in ascending order.
pub fn background_indices(n_rows: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n_rows <= cap {
        return (0..n_rows).collect();
    }
    let mut rng = seed::rng(seed, stream::BACKGROUND, n_rows as u64);
    let mut idx = index::sample(&mut rng, n_rows, cap).into_vec();
    idx.sort_unstable();
    idx
}

/// Per-node child weights derived from background covers.
#[derive(Debug, Clone)]
struct TreeWeights {
    /// Fraction of the parent's background mass reaching each node.
    fraction: Vec<f64>,
}

fn tree_weights(tree: &Tree, background: &[f64], m: usize) -> TreeWeights {
    let mut cover = vec![0.0; tree.nodes.len()];
    for row in background.chunks(m) {
        let mut i = 0;
        loop {
            cover[i] += 1.0;
            match tree.nodes[i] {
                Node::Leaf { .. } => break,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    i = if Tree::goes_left(row[feature], threshold, default_left) {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }
    let mut fraction = vec![1.0; tree.nodes.len()];
    for (i, n) in tree.nodes.iter().enumerate() {
        if let Node::Split { left, right, .. } = *n {
            let (fl, fr) = if cover[i] > 0.0 {
                (cover[left] / cover[i], cover[right] / cover[i])
            } else {
                (0.5, 0.5)
            };
            fraction[left] = fl;
            fraction[right] = fr;
        }
    }
    TreeWeights { fraction }
}

/// Expected tree output with every feature marginalized.
fn expected_value(tree: &Tree, w: &TreeWeights, i: usize) -> f64 {
    match tree.nodes[i] {
        Node::Leaf { value } => value,
        Node::Split { left, right, .. } => {
            w.fraction[left] * expected_value(tree, w, left) + w.fraction[right] * expected_value(tree, w, right)
        }
    }
}

/// Explains many rows against one background set.
#[derive(Debug, Clone)]
pub struct Explainer<'a> {
    ensemble: &'a TreeEnsemble,
    weights: Vec<TreeWeights>,
    base_value: f64,
}

impl<'a> Explainer<'a> {
    /// `background` is a row-major matrix with the ensemble's column count.
    pub fn new(ensemble: &'a TreeEnsemble, background: &[f64]) -> Result<Self> {
        let m = ensemble.n_features();
        if background.is_empty() || m == 0 || background.len() % m != 0 {
            return Err(Error::InvalidInput(
                "background must be a non-empty matrix with the model's column count".into(),
            ));
        }
        let weights: Vec<TreeWeights> = ensemble
            .trees
            .par_iter()
            .map(|t| tree_weights(t, background, m))
            .collect();
        let base_value = ensemble
            .trees
            .iter()
            .zip(&weights)
            .fold(ensemble.base_score, |acc, (t, w)| acc + expected_value(t, w, 0));
        Ok(Explainer {
            ensemble,
            weights,
            base_value,
        })
    }

    pub fn from_dataset(ensemble: &'a TreeEnsemble, background: &Dataset) -> Result<Self> {
        if ensemble.feature_names != background.feature_names {
            return Err(Error::Schema("background columns differ from the model's".into()));
        }
        Explainer::new(ensemble, &background.to_matrix())
    }

    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn explain_row(&self, row: &[f64]) -> ShapExplanation {
        let mut phis = vec![0.0; self.ensemble.n_features()];
        for (t, w) in self.ensemble.trees.iter().zip(&self.weights) {
            let mut path = Vec::with_capacity(t.depth() + 2);
            recurse(t, w, row, 0, &mut path, 1.0, 1.0, None, &mut phis);
        }
        ShapExplanation {
            phis,
            base_value: self.base_value,
            margin: self.ensemble.margin_row(row),
        }
    }

    /// Explanations of a row-major matrix, in row order.
    pub fn explain_matrix(&self, matrix: &[f64]) -> Vec<ShapExplanation> {
        matrix
            .par_chunks(self.ensemble.n_features())
            .map(|r| self.explain_row(r))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero: f64, one: f64, feature: Option<usize>) {
    let d = path.len();
    path.push(PathElement {
        feature,
        zero,
        one,
        weight: if d == 0 { 1.0 } else { 0.0 },
    });
    let denom = (d + 1) as f64;
    for i in (0..d).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero * path[i].weight * (d - i) as f64 / denom;
    }
}

fn unwind(path: &mut Vec<PathElement>, k: usize) {
    let d = path.len() - 1;
    let PathElement { zero, one, .. } = path[k];
    let denom = (d + 1) as f64;
    let mut next = path[d].weight;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * denom / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (d - i) as f64 / denom;
        } else {
            path[i].weight = path[i].weight * denom / (zero * (d - i) as f64);
        }
    }
    for i in k..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

/// Total weight of the path with element `k` removed.
fn unwound_sum(path: &[PathElement], k: usize) -> f64 {
    let d = path.len() - 1;
    let PathElement { zero, one, .. } = path[k];
    let denom = (d + 1) as f64;
    let mut next = path[d].weight;
    let mut total = 0.0;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = next * denom / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (d - i) as f64 / denom;
        } else if zero != 0.0 {
            total += path[i].weight * denom / (zero * (d - i) as f64);
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    w: &TreeWeights,
    row: &[f64],
    node: usize,
    path: &mut Vec<PathElement>,
    zero: f64,
    one: f64,
    feature: Option<usize>,
    phis: &mut [f64],
) {
    extend(path, zero, one, feature);
    match tree.nodes[node] {
        Node::Leaf { value } => {
            for k in 1..path.len() {
                let el = path[k];
                let f = el.feature.expect("only the root element lacks a feature");
                phis[f] += unwound_sum(path, k) * (el.one - el.zero) * value;
            }
        }
        Node::Split {
            feature: f,
            threshold,
            default_left,
            left,
            right,
        } => {
            let (hot, cold) = if Tree::goes_left(row[f], threshold, default_left) {
                (left, right)
            } else {
                (right, left)
            };
            let mut in_zero = 1.0;
            let mut in_one = 1.0;
            let mut base = path.clone();
            if let Some(k) = (1..base.len()).find(|&k| base[k].feature == Some(f)) {
                in_zero = base[k].zero;
                in_one = base[k].one;
                unwind(&mut base, k);
            }
            for (child, one) in [(hot, in_one), (cold, 0.0)] {
                let zero = w.fraction[child] * in_zero;
                if zero == 0.0 && one == 0.0 {
                    continue;
                }
                let mut p = base.clone();
                recurse(tree, w, row, child, &mut p, zero, one, Some(f), phis);
            }
        }
    }
}

fn check_row(e: &TreeEnsemble, background: &Dataset) -> Result<()> {
    if background.is_empty() {
        return Err(Error::InvalidInput("background set is empty".into()));
    }
    if e.feature_names != background.feature_names {
        return Err(Error::Schema("background columns differ from the model's".into()));
    }
    Ok(())
}

/// Explains one feature vector against a background dataset.
pub fn shap_values(e: &TreeEnsemble, x: &FeatureVector, background: &Dataset) -> Result<ShapExplanation> {
    check_row(e, background)?;
    Ok(Explainer::from_dataset(e, background)?.explain_row(&x.to_row()))
}

/// Coalition value: features in `mask` (bit per position in `used`) follow
/// the row, the rest are marginalized by background fractions.
fn coalition_value(tree: &Tree, w: &TreeWeights, row: &[f64], used: &[usize], mask: u32, node: usize) -> f64 {
    match tree.nodes[node] {
        Node::Leaf { value } => value,
        Node::Split {
            feature,
            threshold,
            default_left,
            left,
            right,
        } => {
            let pos = used.binary_search(&feature).expect("feature is used");
            if mask & (1 << pos) != 0 {
                let next = if Tree::goes_left(row[feature], threshold, default_left) {
                    left
                } else {
                    right
                };
                coalition_value(tree, w, row, used, mask, next)
            } else {
                w.fraction[left] * coalition_value(tree, w, row, used, mask, left)
                    + w.fraction[right] * coalition_value(tree, w, row, used, mask, right)
            }
        }
    }
}

/// Shapley values by enumerating every coalition of the used features.
/// Matrix form of [`brute_force_shap`].
pub fn brute_force_shap_row(e: &TreeEnsemble, row: &[f64], background: &[f64]) -> Result<ShapExplanation> {
    let used = e.used_features();
    let u = used.len();
    if u > MAX_BRUTE_FORCE_FEATURES {
        return Err(Error::InvalidInput(format!(
            "{u} used features exceed the enumeration limit of {MAX_BRUTE_FORCE_FEATURES}"
        )));
    }
    let m = e.n_features();
    if background.is_empty() || background.len() % m != 0 {
        return Err(Error::InvalidInput("background must be a non-empty matrix".into()));
    }
    let weights: Vec<TreeWeights> = e.trees.iter().map(|t| tree_weights(t, background, m)).collect();
    let value = |mask: u32| {
        e.trees
            .iter()
            .zip(&weights)
            .fold(e.base_score, |acc, (t, w)| acc + coalition_value(t, w, row, &used, mask, 0))
    };
    let values: Vec<f64> = (0..1u32 << u).map(value).collect();
    let fact: Vec<f64> = (0..=u).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    }).collect();
    let mut phis = vec![0.0; m];
    for (pos, &f) in used.iter().enumerate() {
        let bit = 1u32 << pos;
        let mut phi = 0.0;
        for mask in 0..1u32 << u {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = fact[s] * fact[u - s - 1] / fact[u];
            phi += weight * (values[(mask | bit) as usize] - values[mask as usize]);
        }
        phis[f] = phi;
    }
    Ok(ShapExplanation {
        phis,
        base_value: values[0],
        margin: e.margin_row(row),
    })
}

/// Exact Shapley values by coalition enumeration; refuses ensembles using
/// more than [`MAX_BRUTE_FORCE_FEATURES`] features.
pub fn brute_force_shap(e: &TreeEnsemble, x: &FeatureVector, background: &Dataset) -> Result<ShapExplanation> {
    check_row(e, background)?;
    brute_force_shap_row(e, &x.to_row(), &background.to_matrix())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceTable {
    /// Mean |phi| per feature, in column order.
    pub mean_abs: Vec<f64>,
    /// Feature indices by descending importance, ties by index.
    pub order: Vec<usize>,
}

impl ImportanceTable {
    pub fn top(&self, k: usize) -> &[usize] {
        &self.order[..k.min(self.order.len())]
    }

    pub fn write_csv<W: Write>(&self, names: &[String], sink: W) -> Result<()> {
        if names.len() != self.mean_abs.len() {
            return Err(Error::Schema("name count differs from importance columns".into()));
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
        w.write_record(["rank", "feature", "mean_abs_shap"])?;
        for (rank, &j) in self.order.iter().enumerate() {
            w.write_record([(rank + 1).to_string(), names[j].clone(), format!("{:.6}", self.mean_abs[j])])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn global_importance(explanations: &[ShapExplanation]) -> Result<ImportanceTable> {
    let first = explanations
        .first()
        .ok_or_else(|| Error::InvalidInput("no explanations to aggregate".into()))?;
    let m = first.phis.len();
    if explanations.iter().any(|e| e.phis.len() != m) {
        return Err(Error::Schema("explanations differ in feature count".into()));
    }
    let n = explanations.len() as f64;
    let mean_abs: Vec<f64> = (0..m)
        .map(|j| explanations.iter().map(|e| e.phis[j].abs()).sum::<f64>() / n)
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    Ok(ImportanceTable { mean_abs, order })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryDot {
    pub phi: f64,
    pub value: Option<f64>,
}

impl SummaryDot {
    pub fn is_missing(&self) -> bool {
        self.value.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryFeature {
    pub feature: usize,
    pub name: String,
    pub dots: Vec<SummaryDot>,
}

/// Row-aligned `(phi, raw value)` pairs per feature, in column order.
pub fn summary_data(explanations: &[ShapExplanation], d: &Dataset) -> Result<Vec<SummaryFeature>> {
    if explanations.len() != d.len() {
        return Err(Error::InvalidInput(format!(
            "{} explanations for {} rows",
            explanations.len(),
            d.len()
        )));
    }
    if explanations.iter().any(|e| e.phis.len() != d.n_features()) {
        return Err(Error::Schema("explanations differ from dataset columns".into()));
    }
    Ok(d.feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| SummaryFeature {
            feature: j,
            name: name.clone(),
            dots: explanations
                .iter()
                .zip(&d.rows)
                .map(|(e, r)| SummaryDot {
                    phi: e.phis[j],
                    value: r.get(j),
                })
                .collect(),
        })
        .collect())
}

/// `(value, phi)` for rows where `feature` is present, sorted by value.
pub fn dependence_data(explanations: &[ShapExplanation], d: &Dataset, feature: &str) -> Result<Vec<(f64, f64)>> {
    let j = d
        .feature_index(feature)
        .ok_or_else(|| Error::InvalidInput(format!("unknown feature {feature:?}")))?;
    let summary = summary_data(explanations, d)?;
    let mut points: Vec<(f64, f64)> = summary[j]
        .dots
        .iter()
        .filter_map(|dot| dot.value.map(|v| (v, dot.phi)))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(points)
}

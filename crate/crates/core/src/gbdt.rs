//! Logistic gradient boosted trees with learned default directions for
//! missing values.
//!
//! Trees are grown level by level with an exact greedy search over every
//! distinct feature value. A row goes left when `x < threshold`; a missing
//! value follows the node's default direction. Thresholds are taken from the
//! observed values themselves (including the smallest), so a split can also
//! separate "missing" from "any observed value".

use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::features::{feature_names, Dataset, FeatureVector};
use crate::seed::{self, stream};

pub const MODEL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub l2_reg: f64,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            n_rounds: 200,
            max_depth: 4,
            learning_rate: 0.1,
            min_child_weight: 1.0,
            l2_reg: 1.0,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let eta = self.learning_rate;
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Config(format!("learning_rate must be in (0, 1], got {eta}")));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(Error::Config(format!("l2_reg must be >= 0, got {}", self.l2_reg)));
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return Err(Error::Config(format!(
                "min_child_weight must be >= 0, got {}",
                self.min_child_weight
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!("subsample must be in (0, 1], got {}", self.subsample)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
    },
}

/// A tree stored as a flat node list; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Child taken by `x` at a split node.
    #[inline]
    pub fn goes_left(x: f64, threshold: f64, default_left: bool) -> bool {
        if x.is_nan() {
            default_left
        } else {
            x < threshold
        }
    }

    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
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

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    /// Same tree with nodes renumbered in depth-first, left-first order, the
    /// order the JSON form is read back in.
    pub fn preorder(&self) -> Tree {
        fn go(t: &Tree, i: usize, out: &mut Vec<Node>) -> usize {
            let idx = out.len();
            out.push(t.nodes[i]);
            if let Node::Split { left, right, .. } = t.nodes[i] {
                let l = go(t, left, out);
                let r = go(t, right, out);
                if let Node::Split { left, right, .. } = &mut out[idx] {
                    *left = l;
                    *right = r;
                }
            }
            idx
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        go(self, 0, &mut nodes);
        Tree { nodes }
    }

    /// Distinct split features in ascending order.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub feature_names: Vec<String>,
}

pub fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Mean logistic loss of margins against labels.
pub fn log_loss(margins: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| m.max(0.0) + (-m.abs()).exp().ln_1p() - if y { m } else { 0.0 })
        .sum();
    total / margins.len() as f64
}

impl TreeEnsemble {
    pub fn constant(base_score: f64, feature_names: Vec<String>) -> Self {
        TreeEnsemble {
            base_score,
            trees: Vec::new(),
            feature_names,
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Margin of a dense row (`NaN` = missing); no schema check.
    pub fn margin_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().fold(self.base_score, |m, t| m + t.predict(row))
    }

    pub fn margins(&self, matrix: &[f64]) -> Vec<f64> {
        let m = self.n_features().max(1);
        matrix.par_chunks(m).map(|r| self.margin_row(r)).collect()
    }

    fn check_schema(&self) -> Result<()> {
        if self.feature_names != feature_names() {
            return Err(Error::Schema(
                "model was not trained on the 50-feature layout".into(),
            ));
        }
        Ok(())
    }

    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.trees.iter().flat_map(Tree::used_features).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

pub fn predict_margin(e: &TreeEnsemble, x: &FeatureVector) -> Result<f64> {
    e.check_schema()?;
    Ok(e.margin_row(&x.to_row()))
}

pub fn predict_proba(e: &TreeEnsemble, x: &FeatureVector) -> Result<f64> {
    predict_margin(e, x).map(sigmoid)
}

/// Margins for every row of a dataset, in row order.
pub fn predict_dataset(e: &TreeEnsemble, d: &Dataset) -> Result<Vec<f64>> {
    if e.feature_names != d.feature_names {
        return Err(Error::Schema("dataset columns differ from the model's".into()));
    }
    Ok(e.margins(&d.to_matrix()))
}

pub fn train(d: &Dataset, hp: &HyperParams) -> Result<TreeEnsemble> {
    train_with_history(d, hp).map(|(e, _)| e)
}

/// Trains and also returns the mean training log-loss before the first round
/// and after every round (`n_rounds + 1` values).
pub fn train_with_history(d: &Dataset, hp: &HyperParams) -> Result<(TreeEnsemble, Vec<f64>)> {
    for (i, r) in d.rows.iter().enumerate() {
        if r.values.iter().chain(&r.deltas).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("row {i} holds a non-finite feature")));
        }
    }
    train_matrix(&d.to_matrix(), &d.labels(), d.feature_names.clone(), hp)
}

/// Trains on a row-major matrix with `feature_names.len()` columns, `NaN`
/// marking missing values.
pub fn train_matrix(
    x: &[f64],
    y: &[bool],
    feature_names: Vec<String>,
    hp: &HyperParams,
) -> Result<(TreeEnsemble, Vec<f64>)> {
    hp.validate()?;
    let m = feature_names.len();
    let n = y.len();
    if m == 0 || x.len() != n * m {
        return Err(Error::InvalidInput(format!(
            "matrix of {} values does not hold {n} rows of {m} features",
            x.len()
        )));
    }
    if x.iter().any(|v| v.is_infinite()) {
        return Err(Error::InvalidInput("infinite feature value".into()));
    }
    let n_pos = y.iter().filter(|&&b| b).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::InvalidInput("training data must contain both classes".into()));
    }

    let base_score = logit(n_pos as f64 / n as f64);
    let cols = Columns::new(x, n, m);
    let mut margins = vec![base_score; n];
    let mut history = vec![log_loss(&margins, y)];
    let mut trees = Vec::with_capacity(hp.n_rounds);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];

    for round in 0..hp.n_rounds {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = p - f64::from(u8::from(y[i]));
            hess[i] = p * (1.0 - p);
        }
        let in_sample: Vec<bool> = if hp.subsample < 1.0 {
            let mut rng = seed::rng(hp.seed, stream::SUBSAMPLE, round as u64);
            (0..n).map(|_| rng.gen_bool(hp.subsample)).collect()
        } else {
            vec![true; n]
        };
        let tree = grow_tree(&cols, x, m, &grad, &hess, &in_sample, hp);
        for (i, mg) in margins.iter_mut().enumerate() {
            *mg += tree.predict(&x[i * m..(i + 1) * m]);
        }
        history.push(log_loss(&margins, y));
        trees.push(tree);
    }
    Ok((
        TreeEnsemble {
            base_score,
            trees,
            feature_names,
        },
        history,
    ))
}

/// Per feature: observed rows sorted by value (stable), and missing rows.
struct Columns {
    sorted: Vec<Vec<(f64, u32)>>,
    missing: Vec<Vec<u32>>,
}

impl Columns {
    fn new(x: &[f64], n: usize, m: usize) -> Self {
        let (sorted, missing) = (0..m)
            .into_par_iter()
            .map(|j| {
                let mut obs = Vec::new();
                let mut miss = Vec::new();
                for i in 0..n {
                    let v = x[i * m + j];
                    if v.is_nan() {
                        miss.push(i as u32);
                    } else {
                        obs.push((v, i as u32));
                    }
                }
                obs.sort_by(|a, b| a.0.total_cmp(&b.0));
                (obs, miss)
            })
            .unzip();
        Columns { sorted, missing }
    }
}

const NO_SLOT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: usize,
}

impl Stats {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn plus(self, o: Stats) -> Stats {
        Stats {
            g: self.g + o.g,
            h: self.h + o.h,
            n: self.n + o.n,
        }
    }

    fn minus(self, o: Stats) -> Stats {
        Stats {
            g: self.g - o.g,
            h: self.h - o.h,
            n: self.n - o.n,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

fn score(s: Stats, lambda: f64) -> f64 {
    s.g * s.g / (s.h + lambda)
}

/// Split gain, or `None` when a child is empty or too light.
fn split_gain(parent: Stats, left: Stats, hp: &HyperParams) -> Option<f64> {
    let right = parent.minus(left);
    if left.n == 0 || right.n == 0 || left.h < hp.min_child_weight || right.h < hp.min_child_weight {
        return None;
    }
    let lambda = hp.l2_reg;
    let gain = 0.5 * (score(left, lambda) + score(right, lambda) - score(parent, lambda));
    (gain > 0.0).then_some(gain)
}

/// Best candidate for a threshold given the observed-left statistics: tries
/// both default directions; on equal gain the default follows the heavier
/// observed side (left on ties).
fn evaluate(
    parent: Stats,
    missing: Stats,
    left_obs: Stats,
    feature: usize,
    threshold: f64,
    hp: &HyperParams,
) -> Option<Candidate> {
    let right_obs = parent.minus(missing).minus(left_obs);
    let gl = split_gain(parent, left_obs.plus(missing), hp);
    let gr = split_gain(parent, left_obs, hp);
    let default_left = match (gl, gr) {
        (None, None) => return None,
        (Some(_), None) => true,
        (None, Some(_)) => false,
        (Some(a), Some(b)) => a > b || (a == b && left_obs.h >= right_obs.h),
    };
    let gain = if default_left { gl } else { gr };
    Some(Candidate {
        gain: gain?,
        feature,
        threshold,
        default_left,
    })
}

fn better(best: &mut Option<Candidate>, c: Option<Candidate>) {
    if let Some(c) = c {
        if best.is_none_or(|b| c.gain > b.gain) {
            *best = Some(c);
        }
    }
}

fn best_splits_for_feature(
    cols: &Columns,
    j: usize,
    slot_of: &[u32],
    grad: &[f64],
    hess: &[f64],
    totals: &[Stats],
    hp: &HyperParams,
) -> Vec<Option<Candidate>> {
    let k = totals.len();
    let mut missing = vec![Stats::default(); k];
    for &r in &cols.missing[j] {
        let s = slot_of[r as usize];
        if s != NO_SLOT {
            missing[s as usize].add(grad[r as usize], hess[r as usize]);
        }
    }
    let mut left = vec![Stats::default(); k];
    let mut last = vec![f64::NAN; k];
    let mut best = vec![None; k];
    for &(v, r) in &cols.sorted[j] {
        let s = slot_of[r as usize];
        if s == NO_SLOT {
            continue;
        }
        let s = s as usize;
        // a new distinct value closes the candidate "x < v"
        if left[s].n == 0 || v > last[s] {
            better(&mut best[s], evaluate(totals[s], missing[s], left[s], j, v, hp));
        }
        left[s].add(grad[r as usize], hess[r as usize]);
        last[s] = v;
    }
    best
}

fn grow_tree(
    cols: &Columns,
    x: &[f64],
    m: usize,
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    hp: &HyperParams,
) -> Tree {
    let n = grad.len();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    // level slots: tree node index of each open node
    let mut open: Vec<usize> = vec![0];
    let mut slot_of: Vec<u32> = in_sample.iter().map(|&b| if b { 0 } else { NO_SLOT }).collect();
    let leaf_value = |s: Stats| -hp.learning_rate * s.g / (s.h + hp.l2_reg);

    for depth in 0..=hp.max_depth {
        if open.is_empty() {
            break;
        }
        let mut totals = vec![Stats::default(); open.len()];
        for i in 0..n {
            let s = slot_of[i];
            if s != NO_SLOT {
                totals[s as usize].add(grad[i], hess[i]);
            }
        }
        let splits: Vec<Option<Candidate>> = if depth == hp.max_depth {
            vec![None; open.len()]
        } else {
            let per_feature: Vec<Vec<Option<Candidate>>> = (0..m)
                .into_par_iter()
                .map(|j| best_splits_for_feature(cols, j, &slot_of, grad, hess, &totals, hp))
                .collect();
            let mut best = vec![None; open.len()];
            for f in per_feature {
                for (b, c) in best.iter_mut().zip(f) {
                    better(b, c);
                }
            }
            best
        };

        let mut next_open = Vec::new();
        // new slot id of (left, right) children per current slot
        let mut child_slots: Vec<Option<(u32, u32)>> = vec![None; open.len()];
        for (s, (&node, split)) in open.iter().zip(&splits).enumerate() {
            match split {
                None => nodes[node] = Node::Leaf { value: leaf_value(totals[s]) },
                Some(c) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[node] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        default_left: c.default_left,
                        left,
                        right: left + 1,
                    };
                    let ls = next_open.len() as u32;
                    next_open.push(left);
                    next_open.push(left + 1);
                    child_slots[s] = Some((ls, ls + 1));
                }
            }
        }
        for i in 0..n {
            let s = slot_of[i];
            if s == NO_SLOT {
                continue;
            }
            slot_of[i] = match (child_slots[s as usize], splits[s as usize]) {
                (Some((l, r)), Some(c)) => {
                    if Tree::goes_left(x[i * m + c.feature], c.threshold, c.default_left) {
                        l
                    } else {
                        r
                    }
                }
                _ => NO_SLOT,
            };
        }
        open = next_open;
    }
    Tree { nodes }.preorder()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_node(out: &mut String, t: &Tree, i: usize) {
    match t.nodes[i] {
        Node::Leaf { value } => {
            let _ = write!(out, "{{\"leaf\":{}}}", fmt_f64(value));
        }
        Node::Split {
            feature,
            threshold,
            default_left,
            left,
            right,
        } => {
            let _ = write!(
                out,
                "{{\"feature\":{feature},\"threshold\":{},\"default_left\":{default_left},\"left\":",
                fmt_f64(threshold)
            );
            write_node(out, t, left);
            out.push_str(",\"right\":");
            write_node(out, t, right);
            out.push('}');
        }
    }
}

/// Serializes to JSON with 17 significant digits per number, one tree per
/// line. Byte-identical for identical ensembles.
pub fn to_json(e: &TreeEnsemble) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "{{\n\"version\":{MODEL_VERSION},\n\"base_score\":{},\n\"feature_names\":{},\n\"trees\":[",
        fmt_f64(e.base_score),
        serde_json::to_string(&e.feature_names).expect("strings serialize")
    );
    for (k, t) in e.trees.iter().enumerate() {
        out.push_str(if k == 0 { "\n" } else { ",\n" });
        write_node(&mut out, t, 0);
    }
    out.push_str("\n]\n}\n");
    out
}

pub fn save_model<W: Write>(e: &TreeEnsemble, mut sink: W) -> Result<()> {
    sink.write_all(to_json(e).as_bytes())?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Model(msg.into())
}

fn read_node(v: &Value, n_features: usize, nodes: &mut Vec<Node>, depth: usize) -> Result<usize> {
    if depth > 64 {
        return Err(bad("tree too deep"));
    }
    let obj = v.as_object().ok_or_else(|| bad("node is not an object"))?;
    let idx = nodes.len();
    if let Some(leaf) = obj.get("leaf") {
        let value = leaf.as_f64().filter(|x| x.is_finite()).ok_or_else(|| bad("leaf is not a finite number"))?;
        nodes.push(Node::Leaf { value });
        return Ok(idx);
    }
    let feature = obj
        .get("feature")
        .and_then(Value::as_u64)
        .map(|f| f as usize)
        .filter(|&f| f < n_features)
        .ok_or_else(|| bad("split feature missing or out of range"))?;
    let threshold = obj
        .get("threshold")
        .and_then(Value::as_f64)
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad("threshold missing or not finite"))?;
    let default_left = obj
        .get("default_left")
        .and_then(Value::as_bool)
        .ok_or_else(|| bad("default_left missing"))?;
    nodes.push(Node::Leaf { value: 0.0 });
    let left = read_node(obj.get("left").ok_or_else(|| bad("left child missing"))?, n_features, nodes, depth + 1)?;
    let right = read_node(obj.get("right").ok_or_else(|| bad("right child missing"))?, n_features, nodes, depth + 1)?;
    nodes[idx] = Node::Split {
        feature,
        threshold,
        default_left,
        left,
        right,
    };
    Ok(idx)
}

pub fn from_json(s: &str) -> Result<TreeEnsemble> {
    let v: Value = serde_json::from_str(s).map_err(|e| bad(e.to_string()))?;
    let version = v.get("version").and_then(Value::as_u64);
    if version != Some(MODEL_VERSION) {
        return Err(bad(format!("unsupported model version {version:?}")));
    }
    let base_score = v
        .get("base_score")
        .and_then(Value::as_f64)
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad("base_score missing"))?;
    let feature_names: Vec<String> = serde_json::from_value(
        v.get("feature_names").cloned().ok_or_else(|| bad("feature_names missing"))?,
    )
    .map_err(|e| bad(e.to_string()))?;
    let trees = v
        .get("trees")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("trees missing"))?
        .iter()
        .map(|t| {
            let mut nodes = Vec::new();
            read_node(t, feature_names.len(), &mut nodes, 0)?;
            Ok(Tree { nodes })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeEnsemble {
        base_score,
        trees,
        feature_names,
    })
}

pub fn load_model<R: Read>(mut source: R) -> Result<TreeEnsemble> {
    let mut s = String::new();
    source.read_to_string(&mut s)?;
    from_json(&s)
}

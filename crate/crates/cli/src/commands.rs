//! Subcommand implementations. Each reads and writes the documented file
//! formats and draws all randomness from the configured seed.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use framebench::cohort::{filter_admissions, parse_event_stream, validate_cohort, Cohort};
use framebench::eval::{auprc, auroc, evaluate_dataset, run_experiment, Confusion, MetricsReport};
use framebench::features::{build_dataset, read_dataset_csv, write_dataset_csv, Dataset};
use framebench::framing::{read_samples_csv, sample_cohort, write_samples_csv, FramingKind};
use framebench::gbdt::{load_model, predict_dataset, save_model, sigmoid, train};
use framebench::sepsis3::label_cohort;
use framebench::synthgen::{emit_event_csv, generate_cohort};
use framebench::treeshap::{background_indices, global_importance, Explainer, ShapExplanation, SummaryDot, SummaryFeature};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::plot::{self, MetricBar};

/// Bad invocation (exit 1), as opposed to bad data (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Flags shared by every subcommand, applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub framings: Vec<String>,
    pub prediction_window_h: Option<f64>,
    pub chunk_h: Option<f64>,
    pub horizon_h: Option<f64>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if !self.framings.is_empty() {
            cfg.framings = self.framings.clone();
        }
        if let Some(v) = self.prediction_window_h {
            cfg.prediction_window_h = v;
        }
        if let Some(v) = self.chunk_h {
            cfg.chunk_h = v;
        }
        if let Some(v) = self.horizon_h {
            cfg.horizon_h = v;
        }
        for f in &cfg.framings {
            f.parse::<FramingKind>().map_err(|e| usage(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The single framing a per-framing command works on.
    fn single_framing(&self) -> Result<FramingKind> {
        match self.framings.as_slice() {
            [one] => Ok(one.parse()?),
            [] => Err(usage("this command needs exactly one --framing <name>")),
            _ => Err(usage("this command takes a single --framing")),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(s.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Reads an event CSV, reports validation warnings on stderr and applies the
/// length-of-stay inclusion filter.
pub fn load_cohort(path: &Path) -> Result<Cohort> {
    let c = parse_event_stream(open(path)?, path.display().to_string())
        .with_context(|| format!("reading {}", path.display()))?;
    let report = validate_cohort(&c);
    if !report.is_clean() {
        eprintln!(
            "warning: {} validation findings in {} (kept as-is)",
            report.violations.len(),
            path.display()
        );
        for v in report.violations.iter().take(5) {
            eprintln!("  {}: {:?}", v.admission_id, v.kind);
        }
    }
    let kept = filter_admissions(&c);
    if kept.len() < c.len() {
        eprintln!("excluded {} admissions outside the 24 h to 50 d stay range", c.len() - kept.len());
    }
    Ok(kept)
}

pub fn synth(o: &Overrides, out: &Path) -> Result<()> {
    let cfg = o.resolve()?;
    let cohort = generate_cohort(&cfg.synth())?;
    let mut w = create(out)?;
    emit_event_csv(&cohort, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn label(input: &Path, out: &Path) -> Result<()> {
    let c = load_cohort(input)?;
    let labels = label_cohort(&c);
    let mut w = create(out)?;
    writeln!(w, "admission_id,onset_h")?;
    for (a, (l, _)) in c.admissions.iter().zip(&labels) {
        match l.onset {
            Some(t) => writeln!(w, "{},{t}", a.id)?,
            None => writeln!(w, "{},", a.id)?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn frame(o: &Overrides, input: &Path, out: &Path) -> Result<()> {
    let cfg = o.resolve()?;
    let kind = o.single_framing()?;
    let c = load_cohort(input)?;
    let samples = sample_cohort(&c, &label_cohort(&c), &cfg.framing(kind))?;
    let mut w = create(out)?;
    write_samples_csv(&samples, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn featurize(o: &Overrides, input: &Path, samples: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = o.resolve()?;
    let c = load_cohort(input)?;
    let samples = match samples {
        Some(p) => read_samples_csv(open(p)?, cfg.observation_window_h)
            .with_context(|| format!("reading {}", p.display()))?,
        None => {
            let kind = o.single_framing()?;
            sample_cohort(&c, &label_cohort(&c), &cfg.framing(kind))?
        }
    };
    let d = build_dataset(&c, &samples)?;
    let mut w = create(out)?;
    write_dataset_csv(&d, &mut w)?;
    w.flush()?;
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_csv(open(path)?, path.display().to_string()).with_context(|| format!("reading {}", path.display()))
}

pub fn train_cmd(o: &Overrides, input: &Path, out: &Path) -> Result<()> {
    let cfg = o.resolve()?;
    let d = load_dataset(input)?;
    let model = train(&d, &cfg.hyperparams())?;
    let mut w = create(out)?;
    save_model(&model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn r6(x: f64) -> Value {
    json!((x * 1e6).round() / 1e6)
}

/// With a model: its metrics on the dataset. Without: five-fold
/// cross-validation of the dataset's framing.
pub fn evaluate(o: &Overrides, input: &Path, model: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = o.resolve()?;
    let d = load_dataset(input)?;
    let text = match model {
        Some(m) => {
            let e = load_model(open(m)?).with_context(|| format!("reading {}", m.display()))?;
            let margins = predict_dataset(&e, &d)?;
            let y = d.labels();
            let probs: Vec<f64> = margins.iter().map(|&m| sigmoid(m)).collect();
            let c = Confusion::at(&probs, &y, 0.5);
            let v = json!({
                "framing": d.framing.as_str(),
                "n": d.len(),
                "n_pos": y.iter().filter(|&&b| b).count(),
                "auroc": auroc(&margins, &y).ok().map(r6),
                "auprc": auprc(&margins, &y).ok().map(r6),
                "threshold": 0.5,
                "precision": c.precision().map(r6),
                "recall": c.recall().map(r6),
                "false_positive_rate": c.false_positive_rate().map(r6),
            });
            serde_json::to_string_pretty(&v)? + "\n"
        }
        None => {
            let report = evaluate_dataset(&d, &cfg.framing(d.framing), &cfg.hyperparams(), cfg.seed, &cfg.options())?;
            report.to_json()
        }
    };
    write_string(out, &text)
}

/// Per-row SHAP values for a model and dataset, plus the importance table.
pub fn explain(o: &Overrides, input: &Path, model: &Path, out: &Path) -> Result<()> {
    let cfg = o.resolve()?;
    let d = load_dataset(input)?;
    if d.is_empty() {
        bail!("{} has no rows", input.display());
    }
    let e = load_model(open(model)?).with_context(|| format!("reading {}", model.display()))?;
    if e.feature_names != d.feature_names {
        bail!("model columns differ from the dataset's");
    }
    let bg = d.subset(&background_indices(d.len(), cfg.background_cap, cfg.seed));
    let explainer = Explainer::from_dataset(&e, &bg)?;
    let expl = explainer.explain_matrix(&d.to_matrix());
    fs::create_dir_all(out)?;
    let mut w = create(&out.join("shap_values.csv"))?;
    let mut header: Vec<String> = d.feature_names.clone();
    header.extend(["base".into(), "margin".into()]);
    writeln!(w, "{}", header.join(","))?;
    for x in &expl {
        let mut cells: Vec<String> = x.phis.iter().map(|p| p.to_string()).collect();
        cells.push(x.base_value.to_string());
        cells.push(x.margin.to_string());
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    let mut w = create(&out.join("importance.csv"))?;
    global_importance(&expl)?.write_csv(&d.feature_names, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Feature values and SHAP values of the explained rows of one framing.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapTable {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub explanations: Vec<ShapExplanation>,
}

impl ShapTable {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let header: Vec<String> = self
            .names
            .iter()
            .cloned()
            .chain(self.names.iter().map(|n| format!("phi_{n}")))
            .chain(["base".to_string(), "margin".to_string()])
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (vals, x) in self.values.iter().zip(&self.explanations) {
            let cells: Vec<String> = vals
                .iter()
                .map(|v| v.map(|v| v.to_string()).unwrap_or_default())
                .chain(x.phis.iter().map(|p| p.to_string()))
                .chain([x.base_value.to_string(), x.margin.to_string()])
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| anyhow!("{} is empty", path.display()))?.split(',').collect();
        if header.len() < 4 || header.len() % 2 != 0 {
            bail!("{}: unexpected SHAP table header", path.display());
        }
        let m = (header.len() - 2) / 2;
        let names: Vec<String> = header[..m].iter().map(|s| s.to_string()).collect();
        let mut values = Vec::new();
        let mut explanations = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                bail!("{} line {}: expected {} cells", path.display(), i + 2, header.len());
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| anyhow!("{} line {}: bad number {s:?}", path.display(), i + 2))
            };
            values.push(
                cells[..m]
                    .iter()
                    .map(|s| if s.is_empty() { Ok(None) } else { num(s).map(Some) })
                    .collect::<Result<Vec<_>>>()?,
            );
            explanations.push(ShapExplanation {
                phis: cells[m..2 * m].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?,
                base_value: num(cells[2 * m])?,
                margin: num(cells[2 * m + 1])?,
            });
        }
        Ok(ShapTable {
            names,
            values,
            explanations,
        })
    }

    fn summary(&self, j: usize) -> SummaryFeature {
        SummaryFeature {
            feature: j,
            name: self.names[j].clone(),
            dots: self
                .values
                .iter()
                .zip(&self.explanations)
                .map(|(v, x)| SummaryDot {
                    phi: x.phis[j],
                    value: v[j],
                })
                .collect(),
        }
    }

    fn dependence(&self, j: usize) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self
            .values
            .iter()
            .zip(&self.explanations)
            .filter_map(|(v, x)| v[j].map(|v| (v, x.phis[j])))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts
    }
}

/// Runs the full experiment and writes report.json, per-framing CSVs and
/// (unless disabled) the plots.
pub fn report(o: &Overrides, input: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = o.resolve()?;
    let cohort = match input {
        Some(p) => load_cohort(p)?,
        None => filter_admissions(&generate_cohort(&cfg.synth())?),
    };
    let r: MetricsReport = run_experiment(
        &cohort,
        &cfg.framing_configs()?,
        &cfg.hyperparams(),
        cfg.seed,
        &cfg.options(),
    )?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_string(&out.join("report.json"), &r.to_json())?;
    for f in &r.framings {
        let name = f.framing.as_str();
        if let Some(m) = &f.missingness {
            let mut w = create(&out.join(format!("missingness_{name}.csv")))?;
            m.write_csv(&mut w)?;
            w.flush()?;
        }
        if let Some(s) = &f.shap {
            let mut w = create(&out.join(format!("importance_{name}.csv")))?;
            s.importance.write_csv(&s.rows.feature_names, &mut w)?;
            w.flush()?;
            ShapTable {
                names: s.rows.feature_names.clone(),
                values: s.rows.rows.iter().map(|r| (0..s.rows.n_features()).map(|j| r.get(j)).collect()).collect(),
                explanations: s.explanations.clone(),
            }
            .write(&out.join(format!("shap_{name}.csv")))?;
        }
    }
    if cfg.plots {
        plot_dir(&cfg, out, out)?;
    }
    Ok(())
}

fn bars_from_report(v: &Value) -> Result<Vec<MetricBar>> {
    let framings = v
        .get("framings")
        .and_then(Value::as_object)
        .ok_or_else(|| anyhow!("report.json has no framings object"))?;
    let pair = |f: &Value, m: &str| -> Option<(f64, f64)> {
        Some((f.get(format!("{m}_mean"))?.as_f64()?, f.get(format!("{m}_ci"))?.as_f64()?))
    };
    let mut bars: Vec<MetricBar> = framings
        .iter()
        .map(|(name, f)| MetricBar {
            framing: name.clone(),
            auroc: pair(f, "auroc"),
            auprc: pair(f, "auprc"),
        })
        .collect();
    plot::canonical_order(&mut bars);
    Ok(bars)
}

/// Draws every plot from the artifacts of a `report` run in `input`.
pub fn plot_dir(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(input.join("report.json"))
        .with_context(|| format!("reading {}", input.join("report.json").display()))?;
    let v: Value = serde_json::from_str(&text)?;
    let bars = bars_from_report(&v)?;
    fs::create_dir_all(out)?;
    write_string(&out.join("metrics.svg"), &plot::plot_metrics(&bars, cfg.zoom_ymax)?)?;
    for b in &bars {
        let path = input.join(format!("shap_{}.csv", b.framing));
        if !path.exists() {
            continue;
        }
        let t = ShapTable::read(&path)?;
        if t.explanations.is_empty() {
            continue;
        }
        let title = b.framing.parse::<FramingKind>().map(|k| k.title().to_string()).unwrap_or(b.framing.clone());
        let imp = global_importance(&t.explanations)?;
        write_string(
            &out.join(format!("importance_{}.svg", b.framing)),
            &plot::plot_importance(&t.names, &imp, 10, &format!("{title}: top features"))?,
        )?;
        let top: Vec<SummaryFeature> = imp.top(10).iter().map(|&j| t.summary(j)).collect();
        let refs: Vec<&SummaryFeature> = top.iter().collect();
        write_string(
            &out.join(format!("summary_{}.svg", b.framing)),
            &plot::plot_summary(&refs, &format!("{title}: SHAP summary"))?,
        )?;
        let mut wanted: BTreeSet<usize> = imp.top(1).iter().copied().collect();
        for name in &cfg.dependence_features {
            match t.names.iter().position(|n| n == name) {
                Some(j) => {
                    wanted.insert(j);
                }
                None => bail!("dependence feature {name:?} is not a column"),
            }
        }
        for j in wanted {
            let pts = t.dependence(j);
            if pts.is_empty() {
                continue;
            }
            write_string(
                &out.join(format!("dependence_{}_{}.svg", b.framing, t.names[j])),
                &plot::plot_dependence(&pts, &t.names[j], &format!("{title}: {}", t.names[j]))?,
            )?;
        }
    }
    Ok(())
}

pub fn plot(o: &Overrides, input: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = o.resolve()?;
    plot_dir(&cfg, input, out.unwrap_or(input))
}

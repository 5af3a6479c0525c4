//! Flat run configuration: one `key = value` per line, every key a field
//! name of [`RunConfig`]. Missing keys take defaults; unknown keys are errors.

use std::path::Path;

use anyhow::{bail, Context, Result};
use framebench::eval::ExperimentOptions;
use framebench::framing::{FramingConfig, FramingKind};
use framebench::gbdt::HyperParams;
use framebench::synthgen::SynthConfig;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single source of randomness for every stage.
    pub seed: u64,

    pub n_admissions: usize,
    pub sepsis_prevalence: f64,
    pub los_hours: [f64; 2],
    pub vitals_per_day: [f64; 2],
    pub labs_per_day: [f64; 2],
    pub ews_assessments_per_day: [f64; 2],
    pub temperature_at_ews_prob: f64,

    pub framings: Vec<String>,
    pub horizon_h: f64,
    pub random_horizon_h: [f64; 2],
    pub chunk_h: f64,
    pub prediction_window_h: f64,
    pub observation_window_h: f64,

    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub l2_reg: f64,
    pub subsample: f64,

    pub explain_rows_per_fold: usize,
    pub background_cap: usize,
    pub ci_level: f64,

    pub plots: bool,
    pub zoom_ymax: f64,
    /// Features drawn in dependence plots, in addition to the top one.
    pub dependence_features: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let framing = FramingConfig::new(FramingKind::SlidingWindow);
        let hp = HyperParams::default();
        let opts = ExperimentOptions::default();
        RunConfig {
            seed: synth.seed,
            n_admissions: synth.n_admissions,
            sepsis_prevalence: synth.sepsis_prevalence,
            los_hours: synth.los_hours,
            vitals_per_day: synth.vitals_per_day,
            labs_per_day: synth.labs_per_day,
            ews_assessments_per_day: synth.ews_assessments_per_day,
            temperature_at_ews_prob: synth.temperature_at_ews_prob,
            framings: FramingKind::COMPARED.iter().map(|k| k.as_str().to_string()).collect(),
            horizon_h: framing.horizon_h,
            random_horizon_h: framing.random_horizon_h,
            chunk_h: framing.chunk_h,
            prediction_window_h: framing.prediction_window_h,
            observation_window_h: framing.observation_window_h,
            n_rounds: hp.n_rounds,
            max_depth: hp.max_depth,
            learning_rate: hp.learning_rate,
            min_child_weight: hp.min_child_weight,
            l2_reg: hp.l2_reg,
            subsample: hp.subsample,
            explain_rows_per_fold: opts.explain_rows_per_fold,
            background_cap: opts.background_cap,
            ci_level: opts.ci_level,
            plots: true,
            zoom_ymax: 0.04,
            dependence_features: vec!["SpO2".into()],
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::from_toml_str(&text).with_context(|| format!("in {}", p.display()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate()?;
        self.hyperparams().validate()?;
        for kind in self.framing_kinds()? {
            self.framing(kind).validate()?;
        }
        if !(self.zoom_ymax > 0.0 && self.zoom_ymax <= 1.0) {
            bail!("zoom_ymax must be in (0, 1], got {}", self.zoom_ymax);
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            bail!("ci_level must be in (0, 1), got {}", self.ci_level);
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_admissions: self.n_admissions,
            sepsis_prevalence: self.sepsis_prevalence,
            los_hours: self.los_hours,
            vitals_per_day: self.vitals_per_day,
            labs_per_day: self.labs_per_day,
            ews_assessments_per_day: self.ews_assessments_per_day,
            temperature_at_ews_prob: self.temperature_at_ews_prob,
            seed: self.seed,
        }
    }

    pub fn hyperparams(&self) -> HyperParams {
        HyperParams {
            n_rounds: self.n_rounds,
            max_depth: self.max_depth,
            learning_rate: self.learning_rate,
            min_child_weight: self.min_child_weight,
            l2_reg: self.l2_reg,
            subsample: self.subsample,
            seed: self.seed,
        }
    }

    pub fn options(&self) -> ExperimentOptions {
        ExperimentOptions {
            explain_rows_per_fold: self.explain_rows_per_fold,
            background_cap: self.background_cap,
            ci_level: self.ci_level,
        }
    }

    pub fn framing_kinds(&self) -> Result<Vec<FramingKind>> {
        if self.framings.is_empty() {
            bail!("no framings configured");
        }
        self.framings
            .iter()
            .map(|s| s.parse::<FramingKind>().map_err(Into::into))
            .collect()
    }

    pub fn framing(&self, kind: FramingKind) -> FramingConfig {
        FramingConfig {
            horizon_h: self.horizon_h,
            random_horizon_h: self.random_horizon_h,
            chunk_h: self.chunk_h,
            prediction_window_h: self.prediction_window_h,
            observation_window_h: self.observation_window_h,
            ..FramingConfig::new(kind).with_seed(self.seed)
        }
    }

    pub fn framing_configs(&self) -> Result<Vec<FramingConfig>> {
        Ok(self.framing_kinds()?.into_iter().map(|k| self.framing(k)).collect())
    }
}

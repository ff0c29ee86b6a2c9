//! Experiment manifests: everything needed to re-run a command.
//!
//! A manifest serialises to JSON and to a sectioned `key = value` text
//! (TOML); both forms parse back to an equal manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::baseline::{Optimizer, TrainConfig};
use crate::datasets::{load_csv, Dataset, GeneratorSpec};
use crate::error::{invalid, Error, Result};
use crate::solvers::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetDescriptor,
    pub program: ProgramSettings,
    pub solver: SolverSettings,
    pub baseline: BaselineSettings,
}

/// Exactly one of `path` and `generator` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDescriptor {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Generator text such as `planted_relu:n=20,d=3,seed=1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    /// Trailing CSV columns holding labels.
    pub label_cols: usize,
    /// Leading fraction of rows used for training; the rest is the test set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramSettings {
    pub beta: f64,
    pub kappa: f64,
    /// Group norm exponent, 1 or 2.
    pub reg_p: u32,
    pub bias: bool,
    /// `exact`, `sampled:<count>` or `file:<path>`.
    pub patterns: String,
    /// Feasibility tolerance of the minimum-norm interpolation program.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpolate: Option<f64>,
    /// Target rank of the low-rank arrangement approximation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Admm,
    Penalized,
    Conic,
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub method: SolverMethod,
    pub config: SolverConfig,
}

/// Grid of baseline runs: every `(m, lr)` pair for `seeds` consecutive
/// seeds starting at the manifest seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSettings {
    pub seeds: usize,
    pub m: Vec<usize>,
    pub lr: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub init_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_final: Option<f64>,
}

/// Parsed form of [`ProgramSettings::patterns`].
#[derive(Debug, Clone, PartialEq)]
pub enum PatternChoice {
    Exact,
    Sampled(usize),
    File(PathBuf),
}

impl PatternChoice {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "exact" {
            return Ok(Self::Exact);
        }
        if let Some(c) = text.strip_prefix("sampled:") {
            let count = c.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad sample count '{c}'")))?;
            return Ok(Self::Sampled(count));
        }
        if let Some(p) = text.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(p.trim())));
        }
        invalid(format!("pattern source '{text}' is not exact, sampled:<count> or file:<path>"))
    }
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            seeds: 10,
            m: vec![50],
            lr: vec![1e-2],
            epochs: 5000,
            batch_size: 1,
            optimizer: Optimizer::Gd,
            init_scale: 1.0,
            lr_final: None,
        }
    }
}

impl BaselineSettings {
    /// One configuration per `(m, lr, seed)`, seeds innermost.
    pub fn configs(&self, first_seed: u64) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &m in &self.m {
            for &lr in &self.lr {
                for s in 0..self.seeds as u64 {
                    out.push(TrainConfig {
                        m,
                        lr,
                        batch_size: self.batch_size,
                        epochs: self.epochs,
                        init_scale: self.init_scale,
                        seed: first_seed + s,
                        optimizer: self.optimizer,
                        lr_final: self.lr_final,
                    });
                }
            }
        }
        out
    }
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            dataset: DatasetDescriptor { path: None, generator: Some("toy1d".into()), label_cols: 1, train_fraction: None },
            program: ProgramSettings {
                beta: 1e-3,
                kappa: 0.0,
                reg_p: 2,
                bias: false,
                patterns: "exact".into(),
                interpolate: None,
                rank: None,
            },
            solver: SolverSettings { method: SolverMethod::Conic, config: SolverConfig::exact() },
            baseline: BaselineSettings::default(),
        }
    }
}

impl ExperimentManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_config_text(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }

    pub fn from_config_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start].matches('\n').count() + 1);
            Error::Parse { line, msg: e.message().to_string() }
        })
    }

    /// Reads JSON when the extension is `.json` and the sectioned text
    /// format otherwise.
    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_config_text(&text)
        }
    }

    pub fn activation(&self) -> Result<ActivationSpec> {
        ActivationSpec::new(self.program.kappa)
    }

    pub fn pattern_choice(&self) -> Result<PatternChoice> {
        PatternChoice::parse(&self.program.patterns)
    }

    /// Checks value ranges and that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        let ds = &self.dataset;
        match (&ds.path, &ds.generator) {
            (Some(p), None) => {
                if !p.exists() {
                    return Err(Error::Data(format!("data file {} does not exist", p.display())));
                }
            }
            (None, Some(g)) => {
                GeneratorSpec::parse(g)?;
            }
            _ => return invalid("the dataset needs exactly one of a path and a generator"),
        }
        if let Some(f) = ds.train_fraction {
            if !(f > 0.0 && f < 1.0) {
                return invalid("train_fraction must lie in (0, 1)");
            }
        }
        self.activation()?;
        if !(self.program.beta >= 0.0 && self.program.beta.is_finite()) {
            return invalid("beta must be finite and nonnegative");
        }
        if !matches!(self.program.reg_p, 1 | 2) {
            return invalid("reg_p must be 1 or 2");
        }
        if let PatternChoice::File(p) = self.pattern_choice()? {
            if !p.exists() {
                return Err(Error::Data(format!("pattern file {} does not exist", p.display())));
            }
        }
        if self.program.rank == Some(0) {
            return invalid("rank must be positive");
        }
        self.solver.config.validate()?;
        let b = &self.baseline;
        if b.seeds == 0 || b.m.is_empty() || b.lr.is_empty() {
            return invalid("the baseline grid needs at least one seed, width and learning rate");
        }
        Ok(())
    }

    /// Loads the dataset. A generator without an explicit `seed=` takes
    /// the manifest seed.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match (&self.dataset.path, &self.dataset.generator) {
            (Some(p), _) => load_csv(p, self.dataset.label_cols),
            (None, Some(g)) => {
                let mut spec = GeneratorSpec::parse(g)?;
                if !g.contains("seed=") {
                    match &mut spec {
                        GeneratorSpec::Toy1d => {}
                        GeneratorSpec::PlantedRelu { seed, .. }
                        | GeneratorSpec::RankDeficientGaussian { seed, .. }
                        | GeneratorSpec::Ar3 { seed, .. } => *seed = self.seed,
                    }
                }
                spec.generate()
            }
            (None, None) => invalid("no dataset given"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentManifest {
        let mut m = ExperimentManifest::default();
        m.seed = 42;
        m.program.beta = 0.1 + 0.2;
        m.program.kappa = -1.0;
        m.program.interpolate = Some(1e-9);
        m.baseline.lr = vec![1e-3, 0.037, 1.0 / 3.0];
        m.baseline.lr_final = Some(1e-8);
        m.dataset.train_fraction = Some(0.8);
        m
    }

    #[test]
    fn config_text_round_trips() {
        let m = sample();
        let text = m.to_config_text();
        assert!(text.contains("[program]"));
        assert_eq!(ExperimentManifest::from_config_text(&text).unwrap(), m);
    }

    #[test]
    fn json_and_config_text_agree() {
        let m = sample();
        let via_json = ExperimentManifest::from_json(&m.to_json()).unwrap();
        let via_text = ExperimentManifest::from_config_text(&via_json.to_config_text()).unwrap();
        assert_eq!(via_text, m);
        assert_eq!(via_text.to_json(), m.to_json());
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let text = ExperimentManifest::default().to_config_text().replace("kappa", "kapa");
        match ExperimentManifest::from_config_text(&text) {
            Err(Error::Parse { line, .. }) => assert!(line > 1),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn pattern_choices_parse() {
        assert_eq!(PatternChoice::parse("exact").unwrap(), PatternChoice::Exact);
        assert_eq!(PatternChoice::parse("sampled:100").unwrap(), PatternChoice::Sampled(100));
        assert_eq!(PatternChoice::parse("file:p.txt").unwrap(), PatternChoice::File("p.txt".into()));
        assert!(PatternChoice::parse("gaussian").is_err());
    }

    #[test]
    fn missing_paths_fail_validation() {
        let mut m = ExperimentManifest::default();
        m.dataset.generator = None;
        m.dataset.path = Some("/nonexistent/data.csv".into());
        assert!(matches!(m.validate(), Err(Error::Data(_))));
        assert!(ExperimentManifest::default().validate().is_ok());
    }

    #[test]
    fn baseline_grid_covers_every_seed() {
        let b = BaselineSettings { m: vec![8, 50], lr: vec![0.1, 0.01], seeds: 3, ..Default::default() };
        let cfgs = b.configs(5);
        assert_eq!(cfgs.len(), 12);
        assert_eq!(cfgs[0].seed, 5);
        assert_eq!(cfgs[2].seed, 7);
        assert_eq!(cfgs[11].m, 50);
    }
}

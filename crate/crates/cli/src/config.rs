//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssn_core::dataset::LabelPosition;
use ssn_core::{
    load_dataset, preprocess, BaselineConfig, DataFormat, GlmProblem, LoadOptions, LossKind, PreprocessOptions,
    SsnConfig, SyntheticSpec, Vector,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot load data: {0}")]
    Data(#[from] ssn_core::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    pub lambda: f64,
    #[serde(default)]
    pub loss: LossKind,
    pub methods: Vec<MethodEntry>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub reference_solution: Option<ReferencePolicy>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSource {
    Synthetic(SyntheticSpec),
    Dataset(DatasetSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: PathBuf,
    pub format: DataFormat,
    #[serde(default)]
    pub label_position: LabelPosition,
    #[serde(default)]
    pub has_header: bool,
    #[serde(default)]
    pub n_features: Option<usize>,
    #[serde(default = "yes")]
    pub normalize_columns: bool,
    #[serde(default = "yes")]
    pub add_intercept: bool,
}

fn yes() -> bool {
    true
}

impl DatasetSource {
    pub fn load(&self, base: &Path) -> Result<(ssn_core::DenseMatrix, Vector), ConfigError> {
        let path = if self.path.is_relative() {
            base.join(&self.path)
        } else {
            self.path.clone()
        };
        let opts = LoadOptions {
            format: self.format,
            label_position: self.label_position,
            has_header: self.has_header,
            n_features: self.n_features,
        };
        let data = load_dataset(&path, &opts)?;
        let (x, report) = preprocess(
            &data.x,
            &PreprocessOptions {
                normalize_columns: self.normalize_columns,
                add_intercept: self.add_intercept,
            },
        )?;
        for w in &report.warnings {
            log::warn!("{w}");
        }
        Ok((x, data.y))
    }
}

impl ProblemSource {
    /// Builds the regularized problem; relative dataset paths resolve against `base`.
    pub fn build(&self, lambda: f64, loss: LossKind, base: &Path) -> Result<GlmProblem, ConfigError> {
        let (x, y) = match self {
            ProblemSource::Synthetic(spec) => {
                let data = spec.generate()?;
                (data.x, data.y)
            }
            ProblemSource::Dataset(src) => src.load(base)?,
        };
        Ok(GlmProblem::new(x, y, lambda, loss)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub name: String,
    #[serde(flatten)]
    pub spec: MethodSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Ssn(SsnConfig),
    Baseline(BaselineConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferencePolicy {
    /// Exact Newton from zero until the gradient norm is at most `tol`.
    ComputeViaNewton {
        #[serde(default = "default_reference_tol")]
        tol: f64,
        #[serde(default = "default_reference_iters")]
        max_iters: usize,
    },
    /// JSON array of coefficients.
    Load { path: PathBuf },
}

fn default_reference_tol() -> f64 {
    1e-10
}
fn default_reference_iters() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// One trace CSV per run.
    Csv,
    /// Full per-iteration records, including diagnostics, as JSON.
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("results")
}
fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv]
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.methods.is_empty() {
            return invalid("at least one method is required".into());
        }
        if self.seeds.is_empty() {
            return invalid("seeds must not be empty".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return invalid(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if let ProblemSource::Synthetic(spec) = &self.problem {
            spec.validate()?;
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.methods {
            if m.name.is_empty() || m.name.contains(['/', '\\']) {
                return invalid(format!("method name '{}' is not a valid file stem", m.name));
            }
            if !names.insert(m.name.as_str()) {
                return invalid(format!("duplicate method name '{}'", m.name));
            }
            match &m.spec {
                MethodSpec::Ssn(c) => c.validate()?,
                MethodSpec::Baseline(c) => c.validate()?,
            }
        }
        if let Some(ReferencePolicy::ComputeViaNewton { tol, .. }) = &self.reference_solution {
            if !(*tol > 0.0) {
                return invalid("reference tolerance must be > 0".into());
            }
        }
        if self.outputs.formats.is_empty() {
            return invalid("outputs.formats must not be empty".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ssn_core::{BaselineMethod, Budget, SamplingScheme};

    const EXAMPLE: &str = r#"
lambda = 0.01
seeds = [1, 2]

[problem]
kind = "synthetic"
n = 200
d = 5
coherence = { kind = "one_heavy_row", weight = 0.9 }

[[methods]]
name = "plev"
kind = "ssn"
scheme = "block_partial_leverage"
budget_s = 50

[[methods]]
name = "auto"
kind = "ssn"
scheme = "block_norm_squares"
budget_s = { eps = 0.5, delta = 0.1 }

[[methods]]
name = "lbfgs"
kind = "baseline"
method = "lbfgs"
lbfgs_history = 10

[reference_solution]
policy = "compute_via_newton"
tol = 1e-10
"#;

    #[test]
    fn parses_example() {
        let cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.methods.len(), 3);
        let MethodSpec::Ssn(ssn) = &cfg.methods[0].spec else { panic!() };
        assert_eq!(ssn.scheme, SamplingScheme::BlockPartialLeverage);
        assert_eq!(ssn.budget_s, Budget::Count(50));
        let MethodSpec::Ssn(auto) = &cfg.methods[1].spec else { panic!() };
        assert_eq!(auto.budget_s, Budget::Auto { eps: 0.5, delta: 0.1 });
        let MethodSpec::Baseline(b) = &cfg.methods[2].spec else { panic!() };
        assert_eq!(b.method, BaselineMethod::Lbfgs);
        assert_eq!(cfg.outputs.formats, vec![OutputFormat::Csv]);
    }

    #[test]
    fn json_echo_revalidates() {
        let cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let no_seeds = EXAMPLE.replace("seeds = [1, 2]", "seeds = []");
        assert!(matches!(ExperimentConfig::from_toml(&no_seeds), Err(ConfigError::Invalid(_))));
        let typo = EXAMPLE.replace("lbfgs_history", "lbfgs_hist");
        assert!(matches!(ExperimentConfig::from_toml(&typo), Err(ConfigError::Parse(_))));
        let zero_history = EXAMPLE.replace("lbfgs_history = 10", "lbfgs_history = 0");
        assert!(ExperimentConfig::from_toml(&zero_history).is_err());
        let dup = EXAMPLE.replace("name = \"auto\"", "name = \"plev\"");
        assert!(matches!(ExperimentConfig::from_toml(&dup), Err(ConfigError::Invalid(_))));
        let bad_weight = EXAMPLE.replace("weight = 0.9", "weight = 1.5");
        assert!(ExperimentConfig::from_toml(&bad_weight).is_err());
    }
}

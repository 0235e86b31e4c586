use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::problem::InstanceSpec;
use crate::tuning::{GridSpec, Method};

/// How many unlabeled rows the estimated preconditioner sees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlabeledRule {
    /// As many unlabeled rows as training rows.
    #[default]
    EqualToN,
}

/// Experiment description read from a TOML document. Command-line flags
/// override individual keys through [`Overrides`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    /// Identifier written to the `instance_id` column for single-instance runs.
    pub instance_id: String,
    pub instance: Option<InstanceSpec>,
    /// Figure-1 panels to run (`a` to `f`); empty means all.
    pub instances: Vec<String>,
    pub methods: Vec<Method>,
    /// Methods run at the proof-driven heuristic settings instead of a grid search.
    pub heuristic: Vec<Method>,
    /// Reference `λ` for the heuristic settings; the tuned ridge value at
    /// each `N` when absent.
    pub heuristic_lambda: Option<f64>,
    pub n_values: Vec<usize>,
    pub grid: GridSpec,
    pub unlabeled: UnlabeledRule,
    pub out_dir: PathBuf,
    pub emit_svg: bool,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Write measured wall times. Off by default so repeated runs produce
    /// identical files.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: None,
            instance_id: "custom".to_string(),
            instance: None,
            instances: Vec::new(),
            methods: vec![Method::Sgd, Method::Ridge, Method::Presgd, Method::PresgdEst],
            heuristic: Vec::new(),
            heuristic_lambda: None,
            n_values: vec![50, 100, 200, 400, 800, 1600],
            grid: GridSpec::default(),
            unlabeled: UnlabeledRule::EqualToN,
            out_dir: PathBuf::from("out"),
            emit_svg: true,
            workers: 0,
            record_timing: false,
        }
    }
}

/// Command-line values that replace config keys when present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub emit_svg: Option<bool>,
    pub n_values: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub test_size: Option<usize>,
    pub instances: Option<Vec<String>>,
    pub methods: Option<Vec<Method>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = Some(v);
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = o.emit_svg {
            self.emit_svg = v;
        }
        if let Some(v) = &o.n_values {
            self.n_values = v.clone();
        }
        if let Some(v) = o.trials {
            self.grid.trials = v;
        }
        if let Some(v) = o.test_size {
            self.grid.test_size = v;
        }
        if let Some(v) = &o.instances {
            self.instances = v.clone();
        }
        if let Some(v) = &o.methods {
            self.methods = v.clone();
        }
    }

    pub fn seed(&self) -> Result<u64, HarnessError> {
        self.seed
            .ok_or_else(|| HarnessError::Config("a seed is required (config key `seed` or --seed)".into()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.seed()?;
        let config = |msg: String| Err(HarnessError::Config(msg));
        if self.n_values.is_empty() {
            return config("n_values is empty".into());
        }
        if self.n_values.iter().any(|&n| n < 2) {
            return config("every sample size must be at least 2".into());
        }
        if self.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return config("n_values must be strictly increasing".into());
        }
        if self.methods.is_empty() {
            return config("no methods selected".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return config(format!("method `{m}` listed twice"));
            }
        }
        if let Some(m) = self.heuristic.iter().find(|m| !self.methods.contains(m)) {
            return config(format!("heuristic method `{m}` is not in the methods list"));
        }
        if let Some(l) = self.heuristic_lambda {
            if !(l > 0.0 && l.is_finite()) {
                return config(format!("heuristic_lambda must be positive, got {l}"));
            }
        }
        for &m in &self.methods {
            self.grid.validate(m).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

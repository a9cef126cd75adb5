use std::path::{Path, PathBuf};

use oddvar::theory::{QuadratureSpec, Route, DEFAULT_REFINEMENT};
use oddvar::variation::Functional;
use oddvar::{Descriptor, ProcessModel, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One declarative experiment: model, grid, functional and sampling settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub model: Descriptor,
    pub grid: GridConfig,
    pub functional: Functional,
    /// Zero requests a quadrature-only run.
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub theory: TheoryConfig,
    #[serde(default)]
    pub conditions: ConditionsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "unit_horizon")]
    pub horizon: f64,
    pub steps: usize,
    /// Strictly decreasing, each a multiple of `horizon / steps`.
    pub ladder: Vec<f64>,
}

fn unit_horizon() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    /// Inhomogeneous metrics evaluate every covariance by quadrature, so the
    /// planar route can be slow; `false` skips the quadrature.
    pub enabled: bool,
    /// Cells per side of the quadrature square.
    pub steps: usize,
    pub refinement: usize,
    pub route: Route,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            enabled: true,
            steps: 1 << 16,
            refinement: DEFAULT_REFINEMENT,
            route: Route::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionsConfig {
    /// Cells per side for measure-bound and additional-integral sums.
    pub steps: usize,
    /// Monte Carlo samples per condition-M probe.
    pub samples: usize,
    /// Time tuples for condition M; each needs `m` non-decreasing entries.
    pub probes: Vec<Vec<f64>>,
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        ConditionsConfig {
            steps: 256,
            samples: 100_000,
            probes: vec![vec![0.25, 0.5, 1.0], vec![0.5, 0.75, 1.0]],
        }
    }
}

/// A validated config with its model and grid built.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub model: ProcessModel,
    pub grid: TimeGrid,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn quadrature_spec(&self) -> QuadratureSpec {
        QuadratureSpec {
            horizon: self.grid.horizon,
            steps: self.theory.steps,
            refinement: self.theory.refinement,
            route: self.theory.route,
        }
    }

    pub fn resolve(self) -> Result<Resolved, CliError> {
        let invalid = |field: &str, why: String| CliError::Validation(format!("{field}: {why}"));
        let model = ProcessModel::from_descriptor(&self.model).map_err(|e| invalid("model", e.to_string()))?;
        let grid = TimeGrid::new(self.grid.horizon, self.grid.steps, &self.grid.ladder)
            .map_err(|e| invalid("grid", e.to_string()))?;
        if self.grid.ladder.is_empty() {
            return Err(invalid("grid.ladder", "needs at least one epsilon".into()));
        }
        if self.n_paths > 0 && self.grid.ladder.len() < oddvar::variation::MIN_FIT_POINTS {
            return Err(invalid(
                "grid.ladder",
                format!(
                    "a Monte Carlo sweep needs at least {} entries",
                    oddvar::variation::MIN_FIT_POINTS
                ),
            ));
        }
        match &self.functional {
            Functional::OddVariation { m } | Functional::WeightedVariation { m, .. }
                if !(*m >= 1.0 && m.is_finite()) =>
            {
                return Err(invalid("functional.m", format!("{m} is outside [1, inf)")));
            }
            Functional::SymmetricIntegral { t, .. } | Functional::ItoResidual { t, .. }
                if !(*t > 0.0 && *t <= self.grid.horizon) =>
            {
                return Err(invalid(
                    "functional.t",
                    format!("{t} is outside (0, {}]", self.grid.horizon),
                ));
            }
            Functional::ItoResidual { f, .. } if f.derivative().is_none() => {
                return Err(invalid("functional.f", format!("`{f}` has no registered derivative")));
            }
            _ => {}
        }
        if self.theory.steps == 0 || self.theory.refinement == 0 {
            return Err(invalid("theory", "steps and refinement must be positive".into()));
        }
        if self.conditions.steps < 2 {
            return Err(invalid("conditions.steps", "must be at least 2".into()));
        }
        Ok(Resolved {
            config: self,
            model,
            grid,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
n_paths = 2000

[model]
name = "fbm"
params = { H = 0.25 }

[grid]
steps = 4096
ladder = [0.0625, 0.03125, 0.015625, 0.0078125]

[functional]
kind = "odd_variation"
m = 3.0
"#;

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let resolved = ExperimentConfig::parse(MINIMAL).unwrap().resolve().unwrap();
        assert_eq!(resolved.grid.steps(), 4096);
        assert_eq!(resolved.config.grid.horizon, 1.0);
        assert_eq!(resolved.config.theory, TheoryConfig::default());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::parse(&config.to_toml()).unwrap(), config);
    }

    #[test]
    fn missing_seed_is_a_validation_error() {
        let text = MINIMAL.replace("seed = 7\n", "");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(
            matches!(err, CliError::Validation(ref m) if m.contains("seed")),
            "{err}"
        );
    }

    #[test]
    fn misaligned_ladder_names_epsilon() {
        let text = MINIMAL.replace("0.0078125", "0.01");
        let err = ExperimentConfig::parse(&text).unwrap().resolve().err().unwrap();
        assert!(
            matches!(err, CliError::Validation(ref m) if m.starts_with("grid") && m.contains("0.01")),
            "{err}"
        );
    }

    #[test]
    fn unknown_model_and_bad_order_are_rejected() {
        let text = MINIMAL.replace("\"fbm\"", "\"nonesuch\"");
        assert!(
            matches!(ExperimentConfig::parse(&text).unwrap().resolve(), Err(CliError::Validation(ref m)) if m.starts_with("model"))
        );
        let text = MINIMAL.replace("m = 3.0", "m = 0.5");
        assert!(
            matches!(ExperimentConfig::parse(&text).unwrap().resolve(), Err(CliError::Validation(ref m)) if m.starts_with("functional.m"))
        );
    }

    #[test]
    fn short_ladder_needs_quadrature_only_mode() {
        let text = MINIMAL.replace("[0.0625, 0.03125, 0.015625, 0.0078125]", "[0.0625]");
        assert!(ExperimentConfig::parse(&text).unwrap().resolve().is_err());
        let text = text.replace("n_paths = 2000", "n_paths = 0");
        assert!(ExperimentConfig::parse(&text).unwrap().resolve().is_ok());
    }
}

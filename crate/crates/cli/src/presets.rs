use oddvar::functions::ScalarFn;
use oddvar::theory::{
    chaos_identity_check, double_factorial_odd, hermite_product_moment, isserlis_coefficients, isserlis_monte_carlo,
    ChaosIdentityVerdict, MAX_ISSERLIS_ORDER,
};
use oddvar::variation::Functional;
use oddvar::Descriptor;
use serde::Serialize;

use crate::config::{ConditionsConfig, ExperimentConfig, GridConfig, TheoryConfig};
use crate::error::CliError;
use crate::experiment::Expectation;

pub const PRESET_NAMES: [&str; 8] = [
    "fbm-threshold",
    "homog-sufficiency",
    "rl-fbm",
    "log-corrected",
    "martingale-cos",
    "ito-residual",
    "isserlis-audit",
    "brownian-baseline",
];

pub struct PresetRun {
    pub label: String,
    pub config: ExperimentConfig,
    pub expectations: Vec<Expectation>,
}

pub enum Preset {
    Runs(Vec<PresetRun>),
    IsserlisAudit,
}

fn dyadic(levels: impl IntoIterator<Item = i32>) -> Vec<f64> {
    levels.into_iter().map(|k| 2f64.powi(-k)).collect()
}

fn odd(m: f64) -> Functional {
    Functional::OddVariation { m }
}

struct Spec {
    model: Descriptor,
    steps: usize,
    ladder: Vec<f64>,
    functional: Functional,
    n_paths: usize,
    seed: u64,
}

fn config(preset: &str, spec: Spec) -> ExperimentConfig {
    ExperimentConfig {
        preset: Some(preset.to_string()),
        model: spec.model,
        grid: GridConfig {
            horizon: 1.0,
            steps: spec.steps,
            ladder: spec.ladder,
        },
        functional: spec.functional,
        n_paths: spec.n_paths,
        seed: spec.seed,
        output: None,
        theory: TheoryConfig::default(),
        conditions: ConditionsConfig::default(),
    }
}

fn run(label: impl Into<String>, config: ExperimentConfig, expectations: Vec<Expectation>) -> PresetRun {
    PresetRun {
        label: label.into(),
        config,
        expectations,
    }
}

const DECREASING: Expectation = Expectation::DecreasingBelow { ratio: 0.25 };

pub fn preset(name: &str) -> Result<Preset, CliError> {
    let fbm = |h: f64| Descriptor::new("fbm").with("H", h);
    let preset = match name {
        "fbm-threshold" => Preset::Runs(
            [("h0.1", 0.1), ("h1_6", 1.0 / 6.0), ("h0.25", 0.25)]
                .into_iter()
                .map(|(label, h)| {
                    let mut c = config(
                        name,
                        Spec {
                            model: fbm(h),
                            steps: 1 << 12,
                            ladder: dyadic(4..=9),
                            functional: odd(3.0),
                            n_paths: 0,
                            seed: 1,
                        },
                    );
                    c.theory.steps = 1 << 20;
                    c.conditions.steps = 1 << 14;
                    run(label, c, vec![])
                })
                .collect(),
        ),
        "homog-sufficiency" => {
            let mut c = config(
                name,
                Spec {
                    model: fbm(0.3),
                    steps: 1 << 12,
                    ladder: dyadic(4..=6),
                    functional: odd(3.0),
                    n_paths: 2000,
                    seed: 4,
                },
            );
            c.theory.steps = 1 << 20;
            Preset::Runs(vec![run("fbm-h0.3", c, vec![])])
        }
        "rl-fbm" => {
            let mut c = config(
                name,
                Spec {
                    model: Descriptor::new("rl_fbm").with("H", 0.3),
                    steps: 1 << 12,
                    ladder: dyadic(3..=7),
                    functional: odd(3.0),
                    n_paths: 500,
                    seed: 3,
                },
            );
            c.theory.enabled = false;
            Preset::Runs(vec![run("rl-h0.3", c, vec![DECREASING])])
        }
        "log-corrected" => {
            let mut c = config(
                name,
                Spec {
                    model: Descriptor::new("log_corrected").with("m", 3.0),
                    steps: 1 << 11,
                    ladder: dyadic(3..=6),
                    functional: odd(3.0),
                    n_paths: 400,
                    seed: 5,
                },
            );
            c.conditions.steps = 1 << 14;
            Preset::Runs(vec![run("log-m3", c, vec![])])
        }
        "martingale-cos" => {
            let mut c = config(
                name,
                Spec {
                    model: Descriptor::new("martingale_cos").with("H", 0.3),
                    steps: 1 << 12,
                    ladder: dyadic(4..=7),
                    functional: odd(3.0),
                    n_paths: 500,
                    seed: 8,
                },
            );
            c.conditions.steps = 2048;
            c.conditions.samples = 200_000;
            Preset::Runs(vec![run("cos-rl-h0.3", c, vec![DECREASING])])
        }
        "ito-residual" => Preset::Runs(vec![run(
            "cube-rl-h0.3",
            config(
                name,
                Spec {
                    model: Descriptor::new("rl_fbm").with("H", 0.3),
                    steps: 1 << 14,
                    ladder: dyadic([3, 5, 7, 9]),
                    functional: Functional::ItoResidual {
                        f: ScalarFn::Cube,
                        t: 1.0,
                    },
                    n_paths: 2000,
                    seed: 9,
                },
            ),
            vec![DECREASING],
        )]),
        "isserlis-audit" => Preset::IsserlisAudit,
        "brownian-baseline" => Preset::Runs(vec![run(
            "covariation",
            config(
                name,
                Spec {
                    model: Descriptor::new("brownian"),
                    steps: 1 << 14,
                    ladder: dyadic(5..=7),
                    functional: Functional::QuadraticCovariation,
                    n_paths: 500,
                    seed: 5,
                },
            ),
            vec![Expectation::MeanNear {
                target: 1.0,
                tolerance: 0.02,
            }],
        )]),
        other => {
            return Err(CliError::Usage(format!(
                "unknown preset `{other}`; available presets: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(preset)
}

#[derive(Serialize)]
pub struct PairingRow {
    pub m: u32,
    pub coefficients: Vec<u64>,
    pub total: u64,
    pub double_factorial: u64,
    /// Largest relative gap to Gauss-Hermite quadrature over the probe set.
    pub hermite_gap: f64,
}

#[derive(Serialize)]
pub struct IsserlisAudit {
    pub pairings: Vec<PairingRow>,
    pub cubic_moment: f64,
    pub cubic_monte_carlo: f64,
    pub cubic_std_error: f64,
    pub chaos_identity: ChaosIdentityVerdict,
    pub passed: bool,
}

/// Pairing counts for every supported order, cross-checked against
/// Gauss-Hermite quadrature and Monte Carlo at correlation ½.
pub fn isserlis_audit(seed: u64) -> Result<IsserlisAudit, CliError> {
    const PROBES: [(f64, f64, f64); 4] = [(0.5, 1.0, 1.0), (-0.3, 0.5, 2.0), (0.9, 1.0, 1.0), (0.0, 2.0, 3.0)];
    const STANDARD_ERRORS: f64 = 3.0;
    const HERMITE_TOLERANCE: f64 = 1e-8;
    let pairings = (1..=MAX_ISSERLIS_ORDER)
        .step_by(2)
        .map(|m| {
            let c = isserlis_coefficients(m)?;
            let hermite_gap = PROBES
                .iter()
                .map(|&(cov, vy, vz)| {
                    let exact = c.moment(cov, vy, vz);
                    (exact - hermite_product_moment(m, cov, vy, vz)).abs() / exact.abs().max(1.0)
                })
                .fold(0.0, f64::max);
            Ok(PairingRow {
                m,
                total: c.total(),
                double_factorial: double_factorial_odd(m),
                coefficients: c.coefficients,
                hermite_gap,
            })
        })
        .collect::<oddvar::Result<Vec<_>>>()?;
    let cubic_moment = isserlis_coefficients(3)?.moment(0.5, 1.0, 1.0);
    let mc = isserlis_monte_carlo(3, 0.5, 1.0, 1.0, 1_000_000, seed);
    let chaos_identity = chaos_identity_check(1.0, 200_000, seed)?;
    let passed = pairings
        .iter()
        .all(|p| p.total == p.double_factorial && p.hermite_gap <= HERMITE_TOLERANCE)
        && mc.z_score(cubic_moment) <= STANDARD_ERRORS
        && chaos_identity.passed;
    Ok(IsserlisAudit {
        pairings,
        cubic_moment,
        cubic_monte_carlo: mc.mean,
        cubic_std_error: mc.std_error,
        chaos_identity,
        passed,
    })
}

pub fn isserlis_csv(audit: &IsserlisAudit) -> String {
    let mut out = String::from("m,j,coefficient\n");
    for row in &audit.pairings {
        for (j, c) in row.coefficients.iter().enumerate() {
            out.push_str(&format!("{},{j},{c}\n", row.m));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_named_preset_builds_valid_configs() {
        for name in PRESET_NAMES {
            if let Preset::Runs(runs) = preset(name).unwrap() {
                assert!(!runs.is_empty());
                for r in runs {
                    assert_eq!(r.config.preset.as_deref(), Some(name));
                    r.config.resolve().unwrap_or_else(|e| panic!("{name}/{}: {e}", r.label));
                }
            }
        }
    }

    #[test]
    fn unknown_preset_lists_the_names() {
        let err = preset("nope").err().unwrap();
        assert_eq!(err.exit_code(), 1);
        assert!(PRESET_NAMES.iter().all(|n| err.to_string().contains(n)));
    }

    #[test]
    fn pairing_audit_passes() {
        let audit = isserlis_audit(6).unwrap();
        assert!(audit.passed, "{}", serde_json::to_string(&audit).unwrap());
        assert_eq!(audit.pairings[1].coefficients, vec![6, 9]);
        assert_eq!(audit.cubic_moment, 5.25);
        assert!(isserlis_csv(&audit).starts_with("m,j,coefficient\n1,0,1\n3,0,6\n3,1,9\n"));
    }
}

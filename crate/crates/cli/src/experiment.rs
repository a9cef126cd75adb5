use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use oddvar::conditions::{
    check_additional, check_concave_increasing, check_condition_m, check_little_o, check_measure_bound,
    ConditionVerdict, LittleOConvention,
};
use oddvar::metrics::UnivariateMetric;
use oddvar::numeric::log_log_slope;
use oddvar::simulate::derive_comparison_process;
use oddvar::theory::{variation_second_moment, MomentQuadrature};
use oddvar::variation::{Functional, LadderReport};
use oddvar::{BivariateMetric, Descriptor, ProcessModel, Sampler};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Resolved};
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Monte Carlo sweep, quadrature and condition checks.
    Run,
    /// Condition checks only.
    Check,
    /// Quadrature only.
    Theory,
}

/// Pass/fail rule attached to a ladder report.
#[derive(Clone, Debug, PartialEq)]
pub enum Expectation {
    /// Every ladder mean lies within `tolerance` (relative) of `target`.
    MeanNear { target: f64, tolerance: f64 },
    /// Mean squares strictly decrease and the last is at most `ratio` times the first.
    DecreasingBelow { ratio: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub metric: Option<Descriptor>,
    pub moments: Vec<MomentQuadrature>,
    pub slope: Option<f64>,
    /// Why the quadrature was not run, when it was not.
    pub omitted: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionsReport {
    pub verdicts: Vec<ConditionVerdict>,
    pub skipped: Vec<String>,
}

#[derive(Serialize)]
struct LadderFile<'a> {
    config: &'a ExperimentConfig,
    monte_carlo_omitted: bool,
    report: Option<&'a LadderReport>,
}

#[derive(Serialize)]
struct TheoryFile<'a> {
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    theory: &'a TheoryReport,
}

#[derive(Serialize)]
struct ConditionsFile<'a> {
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    conditions: &'a ConditionsReport,
}

/// Everything one experiment produced.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub ladder: Option<LadderReport>,
    pub theory: Option<TheoryReport>,
    pub conditions: Option<ConditionsReport>,
}

impl Artifacts {
    pub fn checks_passed(&self) -> bool {
        self.ladder.iter().flat_map(|r| &r.annotations).all(|a| a.passed)
    }
}

pub struct OutputDir {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|source| CliError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        self.files.push(path);
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(oddvar::Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

/// Odd integer order usable by the Gaussian moment quadrature and the
/// integer-order checks.
fn odd_order(functional: &Functional) -> Option<u32> {
    match functional {
        Functional::OddVariation { m } | Functional::WeightedVariation { m, .. }
            if m.fract() == 0.0 && *m >= 1.0 && (*m as u32) % 2 == 1 =>
        {
            Some(*m as u32)
        }
        _ => None,
    }
}

fn real_order(functional: &Functional) -> f64 {
    match functional {
        Functional::OddVariation { m } | Functional::WeightedVariation { m, .. } => *m,
        _ => 3.0,
    }
}

/// Canonical metric used by quadrature and metric-based checks.
fn gaussian_metric(model: &ProcessModel) -> Option<BivariateMetric> {
    match model {
        ProcessModel::GaussianCovariance(metric) => Some(metric.clone()),
        ProcessModel::GaussianVolterra(kernel) if kernel.descriptor().name == "brownian" => {
            Some(BivariateMetric::Homogeneous(UnivariateMetric::brownian()))
        }
        ProcessModel::GaussianVolterra(kernel) => Some(BivariateMetric::from_kernel(kernel)),
        ProcessModel::MartingaleVolterra(_) => None,
    }
}

pub fn run_theory(resolved: &Resolved) -> Result<TheoryReport, CliError> {
    let config = &resolved.config;
    let omitted = |why: &str| TheoryReport {
        metric: None,
        moments: Vec::new(),
        slope: None,
        omitted: Some(why.to_string()),
    };
    if !config.theory.enabled {
        return Ok(omitted("disabled in the configuration"));
    }
    let Some(metric) = gaussian_metric(&resolved.model) else {
        return Ok(omitted("the model is not Gaussian"));
    };
    let m = match (&config.functional, odd_order(&config.functional)) {
        (Functional::OddVariation { .. }, Some(m)) if m <= oddvar::theory::MAX_ISSERLIS_ORDER => m,
        _ => return Ok(omitted("quadrature covers odd variations of odd integer order up to 9")),
    };
    let spec = config.quadrature_spec();
    let moments = resolved
        .grid
        .ladder()
        .iter()
        .map(|&eps| variation_second_moment(&metric, m, eps, spec))
        .collect::<oddvar::Result<Vec<_>>>()?;
    let slope = if moments.len() >= 2 && moments.iter().all(|q| q.total > 0.0) {
        let totals: Vec<f64> = moments.iter().map(|q| q.total).collect();
        Some(log_log_slope(resolved.grid.ladder(), &totals)?)
    } else {
        None
    };
    Ok(TheoryReport {
        metric: Some(metric.descriptor().clone()),
        moments,
        slope,
        omitted: None,
    })
}

fn theory_csv(report: &TheoryReport) -> String {
    let mut out = String::from("eps,total,diagonal,off_diagonal,log_eps,log_total\n");
    for q in &report.moments {
        let off: f64 = q.components.iter().map(|c| c.off_diagonal).sum();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            q.eps,
            q.total,
            q.diagonal(),
            off,
            q.eps.ln(),
            q.total.ln()
        );
    }
    out
}

/// Ladder entries that are whole multiples of `horizon / steps`.
fn aligned_ladder(ladder: &[f64], horizon: f64, steps: usize) -> Vec<f64> {
    let h = horizon / steps as f64;
    ladder
        .iter()
        .copied()
        .filter(|&eps| {
            let k = eps / h;
            k.round() >= 1.0 && (k - k.round()).abs() <= 1e-9 * k.round()
        })
        .collect()
}

pub fn run_conditions(resolved: &Resolved) -> Result<ConditionsReport, CliError> {
    let config = &resolved.config;
    let settings = &config.conditions;
    let horizon = config.grid.horizon;
    let ladder = aligned_ladder(&config.grid.ladder, horizon, settings.steps);
    let mut verdicts = Vec::new();
    let mut skipped = Vec::new();
    let order = odd_order(&config.functional).filter(|&m| m >= 3);
    match &resolved.model {
        ProcessModel::MartingaleVolterra(mv) => {
            let probes: Vec<Vec<f64>> = settings
                .probes
                .iter()
                .filter(|p| p.len() == mv.m as usize)
                .cloned()
                .collect();
            if probes.is_empty() {
                skipped.push(format!("condition_m: no probe tuple has {} times", mv.m));
            } else {
                verdicts.push(check_condition_m(
                    &mv.volatility,
                    mv.m,
                    &probes,
                    settings.samples,
                    config.seed,
                )?);
            }
            let ProcessModel::GaussianVolterra(comparison) = derive_comparison_process(mv)? else {
                unreachable!("comparison processes are Gaussian Volterra models");
            };
            match mv.kernel.descriptor().param("H").and_then(UnivariateMetric::fbm) {
                Ok(metric) if ladder.len() >= 3 => verdicts.push(check_additional(
                    &comparison,
                    &metric,
                    &ladder,
                    horizon,
                    settings.steps,
                )?),
                Ok(_) => skipped.push("additional: fewer than 3 ladder entries align with conditions.steps".into()),
                Err(_) => skipped.push("additional: the kernel has no Hurst parameter".into()),
            }
        }
        model => {
            let metric = gaussian_metric(model).expect("Gaussian model");
            if let Some(univ) = metric.as_homogeneous() {
                verdicts.push(check_little_o(
                    univ,
                    real_order(&config.functional),
                    LittleOConvention::OnDelta,
                )?);
                verdicts.push(check_concave_increasing(univ, horizon));
            }
            match order {
                Some(m) if ladder.len() >= 4 => {
                    verdicts.push(check_measure_bound(&metric, m, &ladder, horizon, settings.steps)?)
                }
                Some(_) => {
                    skipped.push("measure_bound: fewer than 4 ladder entries align with conditions.steps".into())
                }
                None => skipped.push("measure_bound: the order is not an odd integer of at least 3".into()),
            }
        }
    }
    Ok(ConditionsReport { verdicts, skipped })
}

fn annotate(report: &mut LadderReport, expectations: &[Expectation]) {
    for expectation in expectations {
        match *expectation {
            Expectation::MeanNear { target, tolerance } => {
                let worst = report
                    .records
                    .iter()
                    .map(|r| (r.mean - target).abs() / target.abs())
                    .fold(0.0, f64::max);
                report.annotate(
                    "mean_near",
                    worst <= tolerance,
                    format!("largest relative deviation from {target} is {worst:.4} (tolerance {tolerance})"),
                );
            }
            Expectation::DecreasingBelow { ratio } => {
                let observed = report.final_over_initial();
                report.annotate(
                    "decreasing",
                    report.strictly_decreasing() && observed <= ratio,
                    format!(
                        "strictly decreasing: {}, final/initial {observed:.4} (limit {ratio})",
                        report.strictly_decreasing()
                    ),
                );
            }
        }
    }
}

pub fn run_monte_carlo(resolved: &Resolved, dump: Option<&mut OutputDir>) -> Result<LadderReport, CliError> {
    let config = &resolved.config;
    let ensemble = Sampler::new(&resolved.model, &resolved.grid)?.sample(config.n_paths, config.seed)?;
    if let Some(out) = dump {
        let mut bytes = Vec::new();
        ensemble.write_binary(&mut bytes)?;
        out.write("ensemble.bin", &bytes)?;
    }
    Ok(LadderReport::from_ensemble(&ensemble, &config.functional)?)
}

/// Run `mode` for one experiment and write its reports into `out`.
pub fn execute(
    resolved: &Resolved,
    mode: Mode,
    out: &mut OutputDir,
    dump_ensemble: bool,
    expectations: &[Expectation],
) -> Result<Artifacts, CliError> {
    let config = &resolved.config;
    let mut artifacts = Artifacts::default();
    out.write("config.toml", config.to_toml().as_bytes())?;
    if mode == Mode::Run {
        let ladder = if config.n_paths > 0 {
            let mut report = run_monte_carlo(resolved, dump_ensemble.then_some(&mut *out))?;
            annotate(&mut report, expectations);
            out.write("ladder.csv", report.csv_string().as_bytes())?;
            Some(report)
        } else {
            None
        };
        out.write_json(
            "ladder.json",
            &LadderFile {
                config,
                monte_carlo_omitted: ladder.is_none(),
                report: ladder.as_ref(),
            },
        )?;
        artifacts.ladder = ladder;
    }
    if matches!(mode, Mode::Run | Mode::Theory) {
        let theory = run_theory(resolved)?;
        out.write_json(
            "theory.json",
            &TheoryFile {
                config,
                theory: &theory,
            },
        )?;
        if theory.omitted.is_none() {
            out.write("theory.csv", theory_csv(&theory).as_bytes())?;
        }
        artifacts.theory = Some(theory);
    }
    if matches!(mode, Mode::Run | Mode::Check) {
        let conditions = run_conditions(resolved)?;
        out.write_json(
            "conditions.json",
            &ConditionsFile {
                config,
                conditions: &conditions,
            },
        )?;
        artifacts.conditions = Some(conditions);
    }
    Ok(artifacts)
}

//! Regularized variation functionals on path ensembles, ε-ladder sweeps and
//! log-log slope fits.
//!
//! All `ds` integrals are left Riemann sums with the grid step `h`; the
//! increment lag `ε` is a whole number of steps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::ScalarFn;
use crate::metrics::{signed_power, Descriptor, TimeGrid};
use crate::numeric::{fit_line, MeanEstimate};
use crate::simulate::{PathEnsemble, ProcessModel, Sampler};

/// Ladder points whose mean-square standard error exceeds this fraction of
/// the mean square are left out of slope fits.
pub const MAX_RELATIVE_SE: f64 = 0.3;

/// Minimum number of ladder points in a slope fit.
pub const MIN_FIT_POINTS: usize = 3;

/// Neumaier-compensated sum of `term(i)` over `0..count`, in index order.
#[inline]
fn ordered_sum(count: usize, mut term: impl FnMut(usize) -> f64) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for i in 0..count {
        let v = term(i);
        let t = sum + v;
        if f64::abs(sum) >= f64::abs(v) {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

fn check_order(m: f64) -> Result<()> {
    if m >= 1.0 && m.is_finite() {
        Ok(())
    } else {
        Err(Error::domain("m", m, "[1, inf)"))
    }
}

fn per_path(ensemble: &PathEnsemble, f: impl Fn(&[f64]) -> f64 + Sync) -> Vec<f64> {
    let paths: Vec<&[f64]> = ensemble.paths().collect();
    paths.par_iter().map(|p| f(p)).collect()
}

/// `(1/ε) Σ_{t_i<T} h·(X(t_i+ε) − X(t_i))^m` with the signed power.
pub fn odd_variation(ensemble: &PathEnsemble, m: f64, eps: f64) -> Result<Vec<f64>> {
    weighted_variation(ensemble, m, |_| 1.0, eps)
}

/// `(1/ε) Σ h·(ΔX)^m·g((X(s+ε)+X(s))/2)`.
pub fn weighted_variation(
    ensemble: &PathEnsemble,
    m: f64,
    g: impl Fn(f64) -> f64 + Sync,
    eps: f64,
) -> Result<Vec<f64>> {
    check_order(m)?;
    let grid = ensemble.grid();
    let k = grid.eps_steps(eps)?;
    let n = grid.steps();
    let scale = grid.step() / eps;
    Ok(per_path(ensemble, |x| {
        scale * ordered_sum(n, |i| signed_power(x[i + k] - x[i], m) * g(0.5 * (x[i + k] + x[i])))
    }))
}

/// `(1/ε) Σ h·(X(s+ε)−X(s))(Y(s+ε)−Y(s))` over paired paths.
pub fn covariation(x: &PathEnsemble, y: &PathEnsemble, eps: f64) -> Result<Vec<f64>> {
    if x.grid() != y.grid() || x.n_paths() != y.n_paths() {
        return Err(Error::Grid(
            "covariation needs ensembles on the same grid with equal path counts".into(),
        ));
    }
    let grid = x.grid();
    let k = grid.eps_steps(eps)?;
    let n = grid.steps();
    let scale = grid.step() / eps;
    let pairs: Vec<(&[f64], &[f64])> = x.paths().zip(y.paths()).collect();
    Ok(pairs
        .par_iter()
        .map(|(a, b)| scale * ordered_sum(n, |i| (a[i + k] - a[i]) * (b[i + k] - b[i])))
        .collect())
}

fn integral_upper_index(grid: &TimeGrid, t: f64, k: usize) -> Result<usize> {
    let ti = grid.index_of(t)?;
    if ti + k >= grid.points() {
        return Err(Error::Grid(format!("t = {t} plus ε leaves the simulated grid")));
    }
    Ok(ti)
}

/// `(1/ε) Σ_{u_i<t} h·(X(u+ε)−X(u))·f′((X(u+ε)+X(u))/2)`.
pub fn symmetric_integral(
    ensemble: &PathEnsemble,
    fprime: impl Fn(f64) -> f64 + Sync,
    t: f64,
    eps: f64,
) -> Result<Vec<f64>> {
    let grid = ensemble.grid();
    let k = grid.eps_steps(eps)?;
    let ti = integral_upper_index(grid, t, k)?;
    let scale = grid.step() / eps;
    Ok(per_path(ensemble, |x| {
        scale * ordered_sum(ti, |i| (x[i + k] - x[i]) * fprime(0.5 * (x[i + k] + x[i])))
    }))
}

/// `f(X(t)) − f(X(0)) − symmetric_integral(f′)`.
pub fn ito_residual(
    ensemble: &PathEnsemble,
    f: impl Fn(f64) -> f64 + Sync,
    fprime: impl Fn(f64) -> f64 + Sync,
    t: f64,
    eps: f64,
) -> Result<Vec<f64>> {
    let integral = symmetric_integral(ensemble, fprime, t, eps)?;
    let ti = ensemble.grid().index_of(t)?;
    Ok(ensemble
        .paths()
        .zip(integral)
        .map(|(x, s)| f(x[ti]) - f(x[0]) - s)
        .collect())
}

/// Functional evaluated at every ladder ε by a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    OddVariation {
        m: f64,
    },
    /// Covariation of the process with itself.
    QuadraticCovariation,
    WeightedVariation {
        m: f64,
        g: ScalarFn,
    },
    SymmetricIntegral {
        fprime: ScalarFn,
        t: f64,
    },
    ItoResidual {
        f: ScalarFn,
        t: f64,
    },
}

impl Functional {
    pub fn evaluate(&self, ensemble: &PathEnsemble, eps: f64) -> Result<Vec<f64>> {
        match *self {
            Functional::OddVariation { m } => odd_variation(ensemble, m, eps),
            Functional::QuadraticCovariation => covariation(ensemble, ensemble, eps),
            Functional::WeightedVariation { m, g } => weighted_variation(ensemble, m, |x| g.eval(x), eps),
            Functional::SymmetricIntegral { fprime, t } => symmetric_integral(ensemble, |x| fprime.eval(x), t, eps),
            Functional::ItoResidual { f, t } => {
                let fprime = f
                    .derivative()
                    .ok_or_else(|| Error::Unknown(format!("derivative of `{f}`")))?;
                ito_residual(ensemble, |x| f.eval(x), |x| fprime.eval(x), t, eps)
            }
        }
    }
}

/// Estimates at one ladder point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderRecord {
    pub eps: f64,
    pub mean: f64,
    pub se_mean: f64,
    pub mean_sq: f64,
    pub se_mean_sq: f64,
    pub estimates: Vec<f64>,
}

impl LadderRecord {
    pub fn from_estimates(eps: f64, estimates: Vec<f64>) -> Self {
        let first = MeanEstimate::from_samples(&estimates);
        let squares: Vec<f64> = estimates.iter().map(|v| v * v).collect();
        let second = MeanEstimate::from_samples(&squares);
        LadderRecord {
            eps,
            mean: first.mean,
            se_mean: first.std_error,
            mean_sq: second.mean,
            se_mean_sq: second.std_error,
            estimates,
        }
    }

    fn usable(&self) -> bool {
        self.mean_sq > 0.0 && self.se_mean_sq <= MAX_RELATIVE_SE * self.mean_sq
    }
}

/// Fitted `log(mean_sq) = intercept + slope·log(ε)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    /// 95% normal half-width from the weighted fit.
    pub half_width: f64,
    pub intercept: f64,
    pub eps_used: Vec<f64>,
    pub eps_excluded: Vec<f64>,
}

/// Pass/fail note attached to a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub model: Descriptor,
    pub functional: Functional,
    pub horizon: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub records: Vec<LadderRecord>,
    pub fit: Option<SlopeFit>,
    pub annotations: Vec<Annotation>,
}

/// Weighted least-squares slope of `log(mean_sq)` on `log(ε)` with weights
/// `(mean_sq / se)²`, skipping noise-dominated points.
pub fn fit_slope(records: &[LadderRecord]) -> Result<SlopeFit> {
    let (used, excluded): (Vec<&LadderRecord>, Vec<&LadderRecord>) = records.iter().partition(|r| r.usable());
    if used.len() < MIN_FIT_POINTS {
        return Err(Error::Report(format!(
            "slope fit needs {MIN_FIT_POINTS} usable ladder points, found {}",
            used.len()
        )));
    }
    let x: Vec<f64> = used.iter().map(|r| r.eps.ln()).collect();
    let y: Vec<f64> = used.iter().map(|r| r.mean_sq.ln()).collect();
    let w: Vec<f64> = used
        .iter()
        .map(|r| {
            let rel = (r.se_mean_sq / r.mean_sq).max(1e-12);
            1.0 / (rel * rel)
        })
        .collect();
    let fit = fit_line(&x, &y, Some(&w))?;
    Ok(SlopeFit {
        slope: fit.slope,
        half_width: 1.96 * fit.slope_std_error,
        intercept: fit.intercept,
        eps_used: used.iter().map(|r| r.eps).collect(),
        eps_excluded: excluded.iter().map(|r| r.eps).collect(),
    })
}

impl LadderReport {
    pub fn from_ensemble(ensemble: &PathEnsemble, functional: &Functional) -> Result<Self> {
        let grid = ensemble.grid();
        if grid.ladder().len() < MIN_FIT_POINTS {
            return Err(Error::Report(format!(
                "ladder has {} entries; at least {MIN_FIT_POINTS} are required",
                grid.ladder().len()
            )));
        }
        let records = grid
            .ladder()
            .iter()
            .map(|&eps| Ok(LadderRecord::from_estimates(eps, functional.evaluate(ensemble, eps)?)))
            .collect::<Result<Vec<_>>>()?;
        let fit = fit_slope(&records).ok();
        Ok(LadderReport {
            model: ensemble.model().clone(),
            functional: functional.clone(),
            horizon: grid.horizon(),
            steps: grid.steps(),
            n_paths: ensemble.n_paths(),
            seed: ensemble.seed(),
            records,
            fit,
            annotations: Vec::new(),
        })
    }

    pub fn mean_squares(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_sq).collect()
    }

    /// Mean squares strictly decrease from coarse to fine ε.
    pub fn strictly_decreasing(&self) -> bool {
        self.mean_squares().windows(2).all(|w| w[1] < w[0])
    }

    /// Finest-ε mean square over coarsest-ε mean square.
    pub fn final_over_initial(&self) -> f64 {
        let msq = self.mean_squares();
        msq.last().copied().unwrap_or(f64::NAN) / msq.first().copied().unwrap_or(f64::NAN)
    }

    pub fn annotate(&mut self, id: &str, passed: bool, detail: impl Into<String>) {
        self.annotations.push(Annotation {
            id: id.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "eps,mean,mean_sq,se_mean,se_mean_sq,log_eps,log_msq,se")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.eps,
                r.mean,
                r.mean_sq,
                r.se_mean,
                r.se_mean_sq,
                r.eps.ln(),
                r.mean_sq.ln(),
                r.se_mean_sq / r.mean_sq
            )?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// Simulate `n_paths` paths of `model` and evaluate `functional` across the
/// grid's ladder.
pub fn ladder_sweep(
    model: &ProcessModel,
    functional: &Functional,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<LadderReport> {
    if grid.ladder().len() < MIN_FIT_POINTS {
        return Err(Error::Report(format!(
            "ladder has {} entries; at least {MIN_FIT_POINTS} are required",
            grid.ladder().len()
        )));
    }
    let ensemble = Sampler::new(model, grid)?.sample(n_paths, seed)?;
    LadderReport::from_ensemble(&ensemble, functional)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{BivariateMetric, UnivariateMetric, VolterraKernel};
    use crate::simulate::{simulate_gaussian_cholesky, simulate_gaussian_volterra};
    use proptest::prelude::*;

    fn deterministic(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> PathEnsemble {
        let path = (0..grid.points()).map(|i| f(grid.time(i))).collect();
        PathEnsemble::from_paths(grid, Descriptor::new("deterministic"), 0, vec![path]).unwrap()
    }

    fn brownian(steps: usize, ladder: &[f64], n: usize, seed: u64) -> PathEnsemble {
        let grid = TimeGrid::new(1.0, steps, ladder).unwrap();
        simulate_gaussian_volterra(&VolterraKernel::brownian(), &grid, n, seed).unwrap()
    }

    #[test]
    fn linear_path_has_constant_increments() {
        let grid = TimeGrid::new(1.0, 1000, &[0.1]).unwrap();
        let e = deterministic(&grid, |t| t);
        let v = odd_variation(&e, 3.0, 0.1).unwrap()[0];
        assert!((v - 0.01).abs() < 1e-12, "{v}");
    }

    #[test]
    fn misaligned_eps_is_a_grid_error() {
        let grid = TimeGrid::new(1.0, 64, &[0.25]).unwrap();
        let e = deterministic(&grid, |t| t);
        assert!(matches!(odd_variation(&e, 3.0, 0.1), Err(Error::Grid(_))));
    }

    #[test]
    fn brownian_cubic_variation_is_centred() {
        let e = brownian(1024, &[1.0 / 64.0], 400, 11);
        let est = MeanEstimate::from_samples(&odd_variation(&e, 3.0, 1.0 / 64.0).unwrap());
        assert!(est.z_score(0.0) < 3.0, "{est:?}");
    }

    #[test]
    fn weighted_variation_edge_cases() {
        let e = brownian(256, &[1.0 / 16.0], 5, 2);
        let plain = odd_variation(&e, 3.0, 1.0 / 16.0).unwrap();
        let one = weighted_variation(&e, 3.0, |x| ScalarFn::One.eval(x), 1.0 / 16.0).unwrap();
        assert_eq!(plain, one);
        let zero = weighted_variation(&e, 3.0, |_| 0.0, 1.0 / 16.0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_variation_scales_with_signed_power() {
        let e = brownian(256, &[1.0 / 16.0], 4, 3);
        let base = odd_variation(&e, 3.0, 1.0 / 16.0).unwrap();
        let scaled = odd_variation(&e.scaled(-2.0), 3.0, 1.0 / 16.0).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            assert!((b + 8.0 * a).abs() <= 1e-12 * a.abs().max(1e-300));
        }
        let negated = odd_variation(&e.scaled(-1.0), 3.0, 1.0 / 16.0).unwrap();
        for (a, b) in base.iter().zip(&negated) {
            assert_eq!(*b, -*a);
        }
    }

    #[test]
    fn brownian_quadratic_variation_is_horizon() {
        let e = brownian(4096, &[1.0 / 128.0], 200, 5);
        let est = MeanEstimate::from_samples(&covariation(&e, &e, 1.0 / 128.0).unwrap());
        assert!((est.mean - 1.0).abs() < 0.02, "{est:?}");
        let other = brownian(4096, &[1.0 / 128.0], 200, 6);
        let cross = MeanEstimate::from_samples(&covariation(&e, &other, 1.0 / 128.0).unwrap());
        assert!(cross.z_score(0.0) < 3.0, "{cross:?}");
        assert!(covariation(&e, &e, 1.0 / 128.0).unwrap().iter().all(|&v| v >= 0.0));
        let short = brownian(2048, &[1.0 / 128.0], 200, 6);
        assert!(matches!(covariation(&e, &short, 1.0 / 128.0), Err(Error::Grid(_))));
    }

    #[test]
    fn fbm_covariation_grows_like_power() {
        let h = 0.25;
        let grid = TimeGrid::dyadic(1.0, 1024, 3..=7).unwrap();
        let metric = BivariateMetric::Homogeneous(UnivariateMetric::fbm(h).unwrap());
        let e = simulate_gaussian_cholesky(&metric, &grid, 200, 4).unwrap();
        let means: Vec<f64> = grid
            .ladder()
            .iter()
            .map(|&eps| MeanEstimate::from_samples(&covariation(&e, &e, eps).unwrap()).mean)
            .collect();
        let slope = crate::numeric::log_log_slope(grid.ladder(), &means).unwrap();
        assert!((slope - (2.0 * h - 1.0)).abs() < 0.15, "{slope}");
    }

    #[test]
    fn symmetric_integral_of_one_telescopes() {
        let e = brownian(512, &[1.0 / 32.0], 6, 8);
        let grid = e.grid().clone();
        let k = grid.eps_steps(1.0 / 32.0).unwrap();
        let ti = grid.index_of(0.75).unwrap();
        let values = symmetric_integral(&e, |_| 1.0, 0.75, 1.0 / 32.0).unwrap();
        for (x, v) in e.paths().zip(values) {
            let upper: f64 = x[ti..ti + k].iter().sum();
            let lower: f64 = x[..k].iter().sum();
            let closed = grid.step() / (1.0 / 32.0) * (upper - lower);
            assert!((v - closed).abs() < 1e-12, "{v} vs {closed}");
        }
    }

    #[test]
    fn symmetric_integral_of_smooth_path() {
        let grid = TimeGrid::new(1.0, 4096, &[1.0 / 256.0]).unwrap();
        let e = deterministic(&grid, |t| t * t);
        let v = symmetric_integral(&e, |_| 1.0, 1.0, 1.0 / 256.0).unwrap()[0];
        assert!((v - 1.0).abs() < 2.0 / 256.0, "{v}");
        let r = ito_residual(&e, |x| x, |_| 1.0, 1.0, 1.0 / 256.0).unwrap()[0];
        assert!((r - (1.0 - v)).abs() < 1e-15);
    }

    #[test]
    fn stratonovich_integral_of_identity() {
        let e = brownian(8192, &[1.0 / 1024.0], 50, 9);
        let values = symmetric_integral(&e, |x| x, 1.0, 1.0 / 1024.0).unwrap();
        let idx = e.grid().index_of(1.0).unwrap();
        let errors: Vec<f64> = e
            .paths()
            .zip(&values)
            .map(|(x, v)| (v - 0.5 * x[idx] * x[idx]).powi(2))
            .collect();
        let rms = MeanEstimate::from_samples(&errors).mean.sqrt();
        assert!(rms < 0.05, "{rms}");
    }

    #[test]
    fn slope_fit_excludes_noisy_points() {
        let records: Vec<LadderRecord> = [0.25, 0.125, 0.0625, 0.03125]
            .iter()
            .enumerate()
            .map(|(i, &eps)| LadderRecord {
                eps,
                mean: 0.0,
                se_mean: 0.0,
                mean_sq: eps * eps,
                se_mean_sq: if i == 3 { eps * eps } else { 0.01 * eps * eps },
                estimates: vec![],
            })
            .collect();
        let fit = fit_slope(&records).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert_eq!(fit.eps_excluded, vec![0.03125]);
        assert!(fit_slope(
            &records[..3]
                .iter()
                .map(|r| LadderRecord {
                    se_mean_sq: r.mean_sq,
                    ..r.clone()
                })
                .collect::<Vec<_>>()
        )
        .is_err());
    }

    #[test]
    fn sweep_needs_three_ladder_points() {
        let grid = TimeGrid::dyadic(1.0, 64, 2..=3).unwrap();
        let model = ProcessModel::GaussianVolterra(VolterraKernel::brownian());
        assert!(matches!(
            ladder_sweep(&model, &Functional::OddVariation { m: 3.0 }, &grid, 4, 1),
            Err(Error::Report(_))
        ));
    }

    proptest! {
        #[test]
        fn odd_variation_is_odd_in_path(seed in 0u64..1000) {
            let e = brownian(128, &[1.0 / 16.0], 2, seed);
            let a = odd_variation(&e, 2.5, 1.0 / 16.0).unwrap();
            let b = odd_variation(&e.scaled(-1.0), 2.5, 1.0 / 16.0).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(*y, -*x);
            }
        }
    }
}

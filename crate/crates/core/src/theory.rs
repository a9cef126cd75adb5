//! Exact second moments of the odd variation by deterministic quadrature.
//!
//! For jointly Gaussian increments `Y = X(s+ε)−X(s)`, `Z = X(t+ε)−X(t)`,
//! `E[Y^m Z^m] = Σ_j c_j Θ^{m−2j} (V_s V_t)^j` with `Θ = Cov(Y,Z)` and
//! `V_u = Var` of the increment at `u`, so
//! `E[[X,m]_ε(T)²] = ε⁻² Σ_j c_j ∬_{[0,T]²} Θ^{m−2j} V_s^j V_t^j ds dt`.

use std::num::NonZeroUsize;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_hurst, Error, Result};
use crate::metrics::{signed_power, BivariateMetric, UnivariateMetric};
use crate::numeric::{integrate_singular, pairwise_sum, MeanEstimate};
use crate::rng::NormalStream;

/// Largest odd order supported by the exhaustive pairing enumeration.
pub const MAX_ISSERLIS_ORDER: u32 = 9;

/// Default refinement factor inside the diagonal band.
pub const DEFAULT_REFINEMENT: usize = 8;

/// Minimum number of grid cells across the band `|t−s| ≤ 2ε`.
pub const MIN_BAND_CELLS: usize = 8;

/// Gauss-Hermite nodes per dimension for moment cross-checks.
pub const HERMITE_NODES: usize = 40;

/// `c_j`, `j = 0..=(m−1)/2`: the number of pairings of `m` copies of `Y` and
/// `m` copies of `Z` with exactly `m − 2j` cross pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsserlisCoefficients {
    pub m: u32,
    pub coefficients: Vec<u64>,
}

fn enumerate_pairings(remaining: u32, split: u32, cross: usize, counts: &mut [u64]) {
    if remaining == 0 {
        counts[cross] += 1;
        return;
    }
    let first = remaining.trailing_zeros();
    let rest = remaining & !(1 << first);
    let mut partners = rest;
    while partners != 0 {
        let other = partners.trailing_zeros();
        partners &= partners - 1;
        let is_cross = (first < split) != (other < split);
        enumerate_pairings(rest & !(1 << other), split, cross + is_cross as usize, counts);
    }
}

pub fn isserlis_coefficients(m: u32) -> Result<IsserlisCoefficients> {
    if m.is_multiple_of(2) || m > MAX_ISSERLIS_ORDER {
        return Err(Error::domain("m", m as f64, "odd integers 1..=9"));
    }
    let mut counts = vec![0u64; m as usize + 1];
    enumerate_pairings((1u32 << (2 * m)) - 1, m, 0, &mut counts);
    let coefficients = (0..=(m as usize - 1) / 2).map(|j| counts[m as usize - 2 * j]).collect();
    Ok(IsserlisCoefficients { m, coefficients })
}

impl IsserlisCoefficients {
    /// `E[Y^m Z^m]` for centred jointly Gaussian `(Y, Z)`.
    pub fn moment(&self, covariance: f64, var_y: f64, var_z: f64) -> f64 {
        let vv = var_y * var_z;
        self.coefficients
            .iter()
            .enumerate()
            .map(|(j, &c)| c as f64 * covariance.powi((self.m as usize - 2 * j) as i32) * vv.powi(j as i32))
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.coefficients.iter().sum()
    }
}

/// `(2n−1)!!`, the `2n`-th moment of a standard normal.
pub fn double_factorial_odd(n: u32) -> u64 {
    (1..=n as u64).map(|k| 2 * k - 1).product()
}

/// `E[(Y)^m (Z)^m]` with signed powers by 2-D Gauss-Hermite quadrature.
pub fn hermite_product_moment(m: u32, covariance: f64, var_y: f64, var_z: f64) -> f64 {
    use std::sync::OnceLock;
    static RULE: OnceLock<gauss_quad::GaussHermite> = OnceLock::new();
    let rule = RULE.get_or_init(|| gauss_quad::GaussHermite::new(NonZeroUsize::new(HERMITE_NODES).expect("nonzero")));
    let sy = var_y.sqrt();
    let sz = var_z.sqrt();
    let rho = if sy > 0.0 && sz > 0.0 {
        (covariance / (sy * sz)).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let orth = (1.0 - rho * rho).max(0.0).sqrt();
    let root2 = std::f64::consts::SQRT_2;
    let m = m as f64;
    let value = rule.integrate(|x1| {
        let y = sy * root2 * x1;
        let py = signed_power(y, m);
        rule.integrate(|x2| py * signed_power(sz * root2 * (rho * x1 + orth * x2), m))
    });
    value / std::f64::consts::PI
}

/// Sample mean of `Y^m Z^m` over `samples` draws with `Cov = covariance`.
pub fn isserlis_monte_carlo(
    m: u32,
    covariance: f64,
    var_y: f64,
    var_z: f64,
    samples: usize,
    seed: u64,
) -> MeanEstimate {
    let sy = var_y.sqrt();
    let sz = var_z.sqrt();
    let rho = covariance / (sy * sz);
    let orth = (1.0 - rho * rho).max(0.0).sqrt();
    let mut stream = NormalStream::auxiliary(seed, 0x1553);
    let values: Vec<f64> = (0..samples)
        .map(|_| {
            let a = stream.next_normal();
            let b = stream.next_normal();
            let y = sy * a;
            let z = sz * (rho * a + orth * b);
            signed_power(y, m as f64) * signed_power(z, m as f64)
        })
        .collect();
    MeanEstimate::from_samples(&values)
}

/// How the `(s,t)` square is discretized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Lag collapse for homogeneous metrics, planar otherwise.
    #[default]
    Auto,
    /// Midpoint rule over every cell of the square.
    Planar,
    /// Homogeneous metrics only: cells grouped by lag, algebraically equal
    /// to the planar midpoint rule.
    Lag,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub horizon: f64,
    /// Cells per side of the `[0, T]²` square.
    pub steps: usize,
    /// Sub-cells per side inside the diagonal band.
    pub refinement: usize,
    #[serde(default)]
    pub route: Route,
}

impl QuadratureSpec {
    pub fn new(horizon: f64, steps: usize) -> Self {
        QuadratureSpec {
            horizon,
            steps,
            refinement: DEFAULT_REFINEMENT,
            route: Route::Auto,
        }
    }

    pub fn with_route(mut self, route: Route) -> Self {
        self.route = route;
        self
    }

    fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Band half-width `2ε` in cells.
    fn band_cells(&self, eps: f64) -> Result<usize> {
        if !(eps > 0.0 && eps <= self.horizon / 4.0) {
            return Err(Error::domain("eps", eps, "(0, T/4]"));
        }
        if self.refinement == 0 {
            return Err(Error::Resolution("refinement must be at least 1".into()));
        }
        let cells = 2.0 * eps / self.step();
        if cells < MIN_BAND_CELLS as f64 {
            return Err(Error::Resolution(format!(
                "the band |t−s| ≤ 2ε spans {cells:.2} cells; at least {MIN_BAND_CELLS} are needed \
                 (use at least {} steps)",
                (MIN_BAND_CELLS as f64 * self.horizon / (2.0 * eps)).ceil()
            )));
        }
        Ok(cells.ceil() as usize)
    }
}

/// Contribution of one chaos index `j`, split into the band `|t−s| ≤ 2ε`
/// and its complement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosComponent {
    pub j: usize,
    pub coefficient: u64,
    pub diagonal: f64,
    pub off_diagonal: f64,
}

impl ChaosComponent {
    pub fn total(&self) -> f64 {
        self.diagonal + self.off_diagonal
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentQuadrature {
    pub m: u32,
    pub eps: f64,
    pub spec: QuadratureSpec,
    pub band_half_width: f64,
    pub components: Vec<ChaosComponent>,
    pub total: f64,
}

impl MomentQuadrature {
    pub fn component(&self, j: usize) -> Option<&ChaosComponent> {
        self.components.iter().find(|c| c.j == j)
    }

    pub fn diagonal(&self) -> f64 {
        self.components.iter().map(|c| c.diagonal).sum()
    }
}

/// Per-region accumulator: `[j][0 = band, 1 = outside]`.
type Parts = Vec<[f64; 2]>;

fn add_parts(coeffs: &IsserlisCoefficients, theta: f64, vv: f64, weight: f64, region: usize, parts: &mut Parts) {
    let m = coeffs.m as usize;
    for (j, &c) in coeffs.coefficients.iter().enumerate() {
        parts[j][region] += weight * c as f64 * theta.powi((m - 2 * j) as i32) * vv.powi(j as i32);
    }
}

/// Sum per-row partial results in a fixed pairwise order.
fn reduce_parts(rows: Vec<Parts>, n_terms: usize) -> Parts {
    (0..n_terms)
        .map(|j| {
            let band: Vec<f64> = rows.iter().map(|r| r[j][0]).collect();
            let outside: Vec<f64> = rows.iter().map(|r| r[j][1]).collect();
            [pairwise_sum(&band), pairwise_sum(&outside)]
        })
        .collect()
}

fn finish(coeffs: &IsserlisCoefficients, eps: f64, spec: QuadratureSpec, parts: Parts) -> MomentQuadrature {
    let norm = 1.0 / (eps * eps);
    let components: Vec<ChaosComponent> = parts
        .iter()
        .enumerate()
        .map(|(j, p)| ChaosComponent {
            j,
            coefficient: coeffs.coefficients[j],
            diagonal: p[0] * norm,
            off_diagonal: p[1] * norm,
        })
        .collect();
    let total = components.iter().map(|c| c.total()).sum();
    MomentQuadrature {
        m: coeffs.m,
        eps,
        spec,
        band_half_width: 2.0 * eps,
        components,
        total,
    }
}

/// Midpoint rule on the full square; band cells use `R×R` sub-cells.
fn planar_route(
    metric: &BivariateMetric,
    coeffs: &IsserlisCoefficients,
    eps: f64,
    spec: QuadratureSpec,
) -> Result<MomentQuadrature> {
    let band = spec.band_cells(eps)?;
    let n = spec.steps;
    let h = spec.step();
    let r = spec.refinement;
    let sub = h / r as f64;
    let n_terms = coeffs.coefficients.len();
    let var = |u: f64| metric.delta_sq(u, u + eps);
    let rows: Vec<Parts> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut parts = vec![[0.0; 2]; n_terms];
            let s = (i as f64 + 0.5) * h;
            let vs = var(s);
            for j in i..n {
                let weight = if j == i { 1.0 } else { 2.0 };
                if j - i <= band {
                    let cell_w = weight * sub * sub;
                    for a in 0..r {
                        let s_sub = i as f64 * h + (a as f64 + 0.5) * sub;
                        let v_sub = var(s_sub);
                        for b in 0..r {
                            let t_sub = j as f64 * h + (b as f64 + 0.5) * sub;
                            let theta = metric.theta(s_sub, t_sub, eps);
                            add_parts(coeffs, theta, v_sub * var(t_sub), cell_w, 0, &mut parts);
                        }
                    }
                } else {
                    let t = (j as f64 + 0.5) * h;
                    let theta = metric.theta(s, t, eps);
                    add_parts(coeffs, theta, vs * var(t), weight * h * h, 1, &mut parts);
                }
            }
            parts
        })
        .collect();
    Ok(finish(coeffs, eps, spec, reduce_parts(rows, n_terms)))
}

/// Lag collapse of the planar rule for a homogeneous metric: lag `d` cells
/// appear `N−|d|` times, and a band cell's `R²` sub-cells have sub-lags
/// `e = −(R−1)..=(R−1)` with multiplicity `R−|e|`.
fn lag_route(
    metric: &UnivariateMetric,
    coeffs: &IsserlisCoefficients,
    eps: f64,
    spec: QuadratureSpec,
) -> Result<MomentQuadrature> {
    let band = spec.band_cells(eps)?;
    let n = spec.steps;
    let h = spec.step();
    let r = spec.refinement as i64;
    let sub = h / r as f64;
    let vv = metric.delta_sq(eps).powi(2);
    let n_terms = coeffs.coefficients.len();
    const CHUNK: usize = 4096;
    let rows: Vec<Parts> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut parts = vec![[0.0; 2]; n_terms];
            for d in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
                let multiplicity = (if d == 0 { 1 } else { 2 } * (n - d)) as f64;
                let lag = d as f64 * h;
                if d <= band {
                    for e in -(r - 1)..=(r - 1) {
                        let w = multiplicity * (r - e.abs()) as f64 * sub * sub;
                        let theta = metric.theta(lag + e as f64 * sub, eps);
                        add_parts(coeffs, theta, vv, w, 0, &mut parts);
                    }
                } else {
                    add_parts(coeffs, metric.theta(lag, eps), vv, multiplicity * h * h, 1, &mut parts);
                }
            }
            parts
        })
        .collect();
    Ok(finish(coeffs, eps, spec, reduce_parts(rows, n_terms)))
}

/// `E[([X,m]_ε(T))²]` split by chaos index and region.
pub fn variation_second_moment(
    metric: &BivariateMetric,
    m: u32,
    eps: f64,
    spec: QuadratureSpec,
) -> Result<MomentQuadrature> {
    let coeffs = isserlis_coefficients(m)?;
    match (spec.route, metric.as_homogeneous()) {
        (Route::Auto | Route::Lag, Some(univ)) => lag_route(univ, &coeffs, eps, spec),
        (Route::Lag, None) => Err(Error::UnsupportedMetric(format!(
            "lag quadrature needs a homogeneous metric, got {}",
            metric.descriptor()
        ))),
        _ => planar_route(metric, &coeffs, eps, spec),
    }
}

/// `total · ε / δ^{2m}(2ε)`, the ratio to the sufficiency bound.
pub fn bound_ratio(quadrature: &MomentQuadrature, metric: &UnivariateMetric) -> f64 {
    quadrature.total * quadrature.eps / metric.delta_sq(2.0 * quadrature.eps).powi(quadrature.m as i32)
}

/// Chaos split of the cubic variation of fBm: `E|I₁|²` (first chaos) and
/// `E|I₃|²` (third chaos) with the band part of the latter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosMoments {
    pub hurst: f64,
    pub eps: f64,
    pub e_i1_sq: f64,
    pub e_i3_sq: f64,
    pub e_i3_diagonal: f64,
}

impl ChaosMoments {
    pub fn total(&self) -> f64 {
        self.e_i1_sq + self.e_i3_sq
    }
}

/// Chaos moments for fBm with the same lag-collapsed midpoint rule, written
/// directly in terms of the fBm increment covariance.
pub fn fbm_chaos_moments(hurst: f64, eps: f64, spec: QuadratureSpec) -> Result<ChaosMoments> {
    check_hurst(hurst)?;
    let band = spec.band_cells(eps)?;
    let p = 2.0 * hurst;
    let theta = |lag: f64| 0.5 * ((lag + eps).abs().powf(p) + (lag - eps).abs().powf(p) - 2.0 * lag.abs().powf(p));
    let var_sq = eps.powf(2.0 * p);
    let n = spec.steps;
    let h = spec.step();
    let r = spec.refinement as i64;
    let sub = h / r as f64;
    let per_lag: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|d| {
            let multiplicity = (if d == 0 { 1 } else { 2 } * (n - d)) as f64;
            let lag = d as f64 * h;
            if d <= band {
                let (mut first, mut third) = (0.0, 0.0);
                for e in -(r - 1)..=(r - 1) {
                    let w = (r - e.abs()) as f64;
                    let th = theta(lag + e as f64 * sub);
                    first += w * th;
                    third += w * th * th * th;
                }
                let area = multiplicity * sub * sub;
                [area * first, area * third, area * third]
            } else {
                let th = theta(lag);
                let area = multiplicity * h * h;
                [area * th, area * th * th * th, 0.0]
            }
        })
        .collect();
    let column = |k: usize| pairwise_sum(&per_lag.iter().map(|v| v[k]).collect::<Vec<_>>());
    let norm = 1.0 / (eps * eps);
    Ok(ChaosMoments {
        hurst,
        eps,
        e_i1_sq: 9.0 * var_sq * column(0) * norm,
        e_i3_sq: 6.0 * column(1) * norm,
        e_i3_diagonal: 6.0 * column(2) * norm,
    })
}

/// Limit of the band part of `E|I₃|²` per unit horizon for fBm:
/// `(3/2) ∫₀² (|r+1|^{2H} + |r−1|^{2H} − 2r^{2H})³ dr`.
pub fn fbm_diagonal_constant(hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    let p = 2.0 * hurst;
    let phi = |r: f64| ((r + 1.0).powf(p) + (r - 1.0).abs().powf(p) - 2.0 * r.powf(p)).powi(3);
    Ok(1.5 * (integrate_singular(phi, 0.0, 1.0) + integrate_singular(phi, 1.0, 2.0)))
}

/// Monte Carlo audit of the cube decomposition `Z³ = 3σ²Z + (third chaos)`
/// for `Z ~ N(0, σ²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosIdentityVerdict {
    pub sigma_sq: f64,
    pub var_cube: f64,
    pub var_cube_se: f64,
    pub var_cube_expected: f64,
    pub cov_cube_linear: f64,
    pub cov_cube_linear_se: f64,
    pub cov_cube_linear_expected: f64,
    pub passed: bool,
}

/// Tolerance of the chaos identity audit, in standard errors.
pub const CHAOS_IDENTITY_SE: f64 = 4.0;

pub fn chaos_identity_check(sigma_sq: f64, samples: usize, seed: u64) -> Result<ChaosIdentityVerdict> {
    if !(sigma_sq > 0.0) {
        return Err(Error::domain("sigma_sq", sigma_sq, "(0, inf)"));
    }
    let sigma = sigma_sq.sqrt();
    let mut stream = NormalStream::auxiliary(seed, 0xc4a0);
    let z: Vec<f64> = (0..samples).map(|_| sigma * stream.next_normal()).collect();
    let cube: Vec<f64> = z.iter().map(|v| v * v * v).collect();
    let sixth: Vec<f64> = cube.iter().map(|c| c * c).collect();
    let fourth: Vec<f64> = z.iter().map(|v| v.powi(4)).collect();
    let mean_cube = MeanEstimate::from_samples(&cube).mean;
    let mean_z = MeanEstimate::from_samples(&z).mean;
    let e6 = MeanEstimate::from_samples(&sixth);
    let e4 = MeanEstimate::from_samples(&fourth);
    let var_cube = e6.mean - mean_cube * mean_cube;
    let cov = e4.mean - mean_cube * mean_z;
    let var_expected = 15.0 * sigma_sq.powi(3);
    let cov_expected = 3.0 * sigma_sq * sigma_sq;
    let passed = (var_cube - var_expected).abs() <= CHAOS_IDENTITY_SE * e6.std_error
        && (cov - cov_expected).abs() <= CHAOS_IDENTITY_SE * e4.std_error;
    Ok(ChaosIdentityVerdict {
        sigma_sq,
        var_cube,
        var_cube_se: e6.std_error,
        var_cube_expected: var_expected,
        cov_cube_linear: cov,
        cov_cube_linear_se: e4.std_error,
        cov_cube_linear_expected: cov_expected,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{Descriptor, UnivariateMetric};
    use std::sync::Arc;

    /// `c_j = C(m,k)²·k!·((2j−1)!!)²` with `k = m − 2j` cross pairs.
    fn closed_form(m: u32, j: u32) -> u64 {
        let k = m - 2 * j;
        let binom = (0..k).fold(1u64, |acc, i| acc * (m - i) as u64 / (i + 1) as u64);
        let fact: u64 = (1..=k as u64).product();
        let df = double_factorial_odd(j);
        binom * binom * fact * df * df
    }

    #[test]
    fn isserlis_small_orders() {
        assert_eq!(isserlis_coefficients(1).unwrap().coefficients, vec![1]);
        assert_eq!(isserlis_coefficients(3).unwrap().coefficients, vec![6, 9]);
        assert_eq!(isserlis_coefficients(5).unwrap().total(), 945);
        assert!(isserlis_coefficients(4).is_err());
        assert!(isserlis_coefficients(11).is_err());
    }

    #[test]
    fn isserlis_matches_closed_form_counts() {
        for m in [1, 3, 5, 7, 9] {
            let c = isserlis_coefficients(m).unwrap();
            for (j, &v) in c.coefficients.iter().enumerate() {
                assert_eq!(v, closed_form(m, j as u32), "m={m} j={j}");
            }
            assert_eq!(c.total(), double_factorial_odd(m));
        }
    }

    #[test]
    fn hermite_agrees_with_isserlis() {
        let c = isserlis_coefficients(5).unwrap();
        for &(cov, vy, vz) in &[(0.3, 1.0, 2.0), (-0.7, 0.8, 1.1), (0.0, 1.0, 1.0), (1e-3, 2e-2, 3e-2)] {
            let exact = c.moment(cov, vy, vz);
            let gh = hermite_product_moment(5, cov, vy, vz);
            assert!(
                (exact - gh).abs() <= 1e-9 * exact.abs().max(1e-300) + 1e-14,
                "{exact} vs {gh}"
            );
        }
    }

    #[test]
    fn brownian_planar_and_lag_routes_agree() {
        let metric = BivariateMetric::Homogeneous(UnivariateMetric::brownian());
        let eps = 1.0 / 64.0;
        let spec = QuadratureSpec::new(1.0, 512);
        let planar = variation_second_moment(&metric, 3, eps, spec.with_route(Route::Planar)).unwrap();
        let lag = variation_second_moment(&metric, 3, eps, spec.with_route(Route::Lag)).unwrap();
        assert!((planar.total - lag.total).abs() <= 1e-10 * lag.total);
        // Oracle: 12ε²T up to O(ε³) edge terms.
        assert!((lag.total / (12.0 * eps * eps) - 1.0).abs() < 0.02);
        assert!(lag.total >= 0.0);
    }

    #[test]
    fn covariance_metric_uses_planar_route() {
        let h = 0.3;
        let cov = BivariateMetric::from_covariance(
            Descriptor::new("fbm_cov"),
            Arc::new(move |s: f64, t: f64| crate::metrics::fbm_covariance(h, s, t).unwrap()),
        );
        let homog = BivariateMetric::Homogeneous(UnivariateMetric::fbm(h).unwrap());
        let spec = QuadratureSpec::new(1.0, 256);
        let a = variation_second_moment(&cov, 3, 1.0 / 16.0, spec).unwrap();
        let b = variation_second_moment(&homog, 3, 1.0 / 16.0, spec).unwrap();
        assert!((a.total - b.total).abs() <= 1e-10 * b.total, "{} {}", a.total, b.total);
        assert!(matches!(
            variation_second_moment(&cov, 3, 1.0 / 16.0, spec.with_route(Route::Lag)),
            Err(Error::UnsupportedMetric(_))
        ));
    }

    #[test]
    fn coarse_resolution_is_rejected() {
        let metric = BivariateMetric::Homogeneous(UnivariateMetric::brownian());
        let err = variation_second_moment(&metric, 3, 1.0 / 64.0, QuadratureSpec::new(1.0, 128));
        assert!(matches!(err, Err(Error::Resolution(_))));
    }

    #[test]
    fn chaos_moments_sum_to_total() {
        let h = 0.25;
        let spec = QuadratureSpec::new(1.0, 4096);
        let eps = 1.0 / 32.0;
        let chaos = fbm_chaos_moments(h, eps, spec).unwrap();
        let q = variation_second_moment(
            &BivariateMetric::Homogeneous(UnivariateMetric::fbm(h).unwrap()),
            3,
            eps,
            spec,
        )
        .unwrap();
        assert!((chaos.total() - q.total).abs() <= 5e-3 * q.total);
        assert!((chaos.e_i3_sq - q.component(0).unwrap().total()).abs() <= 1e-10 * chaos.e_i3_sq);
        assert!((chaos.e_i3_diagonal - q.component(0).unwrap().diagonal).abs() <= 1e-10 * chaos.e_i3_sq);
    }

    #[test]
    fn brownian_third_chaos_closed_form() {
        let eps = 1.0 / 64.0;
        let chaos = fbm_chaos_moments(0.5, eps, QuadratureSpec::new(1.0, 4096)).unwrap();
        // (6/ε²)·2∫₀^ε (1−r)(ε−r)³ dr = 3ε² − (6/10)ε³.
        let exact = 3.0 * eps * eps - 0.6 * eps.powi(3);
        assert!(
            (chaos.e_i3_sq - exact).abs() < 1e-3 * exact,
            "{} {exact}",
            chaos.e_i3_sq
        );
    }

    #[test]
    fn diagonal_constant_oracle() {
        // Independent high-precision quadrature of the same integral.
        let c = fbm_diagonal_constant(1.0 / 6.0).unwrap();
        assert!((c - 0.549_847_580_750_112).abs() < 1e-9, "{c}");
    }

    #[test]
    fn chaos_identity() {
        for &s in &[1.0, 4.0] {
            let v = chaos_identity_check(s, 400_000, 17).unwrap();
            assert!(v.passed, "{v:?}");
        }
        assert!(chaos_identity_check(0.0, 10, 1).is_err());
    }

    #[test]
    fn monte_carlo_isserlis_moment() {
        let est = isserlis_monte_carlo(3, 0.5, 1.0, 1.0, 400_000, 3);
        assert!(est.z_score(5.25) < 3.0, "{est:?}");
    }
}

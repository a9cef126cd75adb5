//! Seeded path ensembles for Gaussian (by covariance or by Volterra kernel)
//! and martingale-driven Volterra processes.
//!
//! Volterra sums use left-point driving increments and evaluate the kernel at
//! cell midpoints: `X(t_i) = Σ_j G(t_i, s_j + h/2) dM_j`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    kernel_from_descriptor, metric_from_descriptor, BivariateMetric, Descriptor, RealFn, TimeGrid, VolterraKernel,
};
use crate::numeric::MeanEstimate;
use crate::rng::NormalStream;

/// Paths processed together by the blocked matrix-vector kernels.
const LANES: usize = 8;

/// Cholesky pivot tolerance relative to the covariance trace.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

type PathwiseFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum GammaSource {
    /// `Γ(s)` for any `m`.
    Analytic(Arc<dyn Fn(f64, u32) -> f64 + Send + Sync>),
    /// Piecewise-linear table valid for one `m`.
    Table { m: u32, times: Vec<f64>, values: Vec<f64> },
}

/// Volatility `H(s) = h(s, W(s))` of the driving martingale `M = ∫ H dW`.
#[derive(Clone)]
pub struct VolatilityModel {
    descriptor: Descriptor,
    pathwise: PathwiseFn,
    bound: Option<f64>,
    gamma: Option<GammaSource>,
}

impl fmt::Debug for VolatilityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VolatilityModel")
            .field("descriptor", &self.descriptor)
            .field("bound", &self.bound)
            .field(
                "gamma",
                &self.gamma.as_ref().map(|g| match g {
                    GammaSource::Analytic(_) => "analytic",
                    GammaSource::Table { .. } => "table",
                }),
            )
            .finish()
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `E[cos^{2m}(W_s)]` from the Fourier expansion of `cos^{2m}`.
pub fn cos_even_moment(s: f64, m: u32) -> f64 {
    let two_m = 2 * m;
    let tail: f64 = (1..=m)
        .map(|k| binomial(two_m, m - k) * (-2.0 * (k * k) as f64 * s).exp())
        .sum();
    (binomial(two_m, m) + 2.0 * tail) / 2f64.powi(two_m as i32)
}

impl VolatilityModel {
    pub fn constant(c: f64) -> Self {
        VolatilityModel {
            descriptor: Descriptor::new("constant").with("c", c),
            pathwise: Arc::new(move |_, _| c),
            bound: Some(c.abs()),
            gamma: Some(GammaSource::Analytic(Arc::new(move |_, _| c.abs()))),
        }
    }

    /// `H(s) = cos(W(s))`.
    pub fn cos_driving() -> Self {
        VolatilityModel {
            descriptor: Descriptor::new("cos"),
            pathwise: Arc::new(|_, w: f64| w.cos()),
            bound: Some(1.0),
            gamma: Some(GammaSource::Analytic(Arc::new(|s, m| {
                cos_even_moment(s, m).powf(1.0 / (2 * m) as f64)
            }))),
        }
    }

    /// Volatility `h(s, W(s))` with no analytic `Γ`; use
    /// [`VolatilityModel::with_estimated_gamma`] before building a comparison process.
    pub fn custom(name: &str, pathwise: PathwiseFn, bound: Option<f64>) -> Self {
        VolatilityModel {
            descriptor: Descriptor::new(name),
            pathwise,
            bound,
            gamma: None,
        }
    }

    pub fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    #[inline]
    pub fn eval(&self, s: f64, driving: f64) -> f64 {
        (self.pathwise)(s, driving)
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    /// `Γ(s) = (E[H^{2m}(s)])^{1/(2m)}` when known.
    pub fn gamma(&self, s: f64, m: u32) -> Option<f64> {
        match self.gamma.as_ref()? {
            GammaSource::Analytic(f) => Some(f(s, m)),
            GammaSource::Table {
                m: table_m,
                times,
                values,
            } => (*table_m == m).then(|| interpolate(times, values, s)),
        }
    }

    /// Same pathwise volatility with `Γ` multiplied by `factor`.
    pub fn with_gamma_scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.gamma = match self.gamma.clone() {
            Some(GammaSource::Analytic(f)) => Some(GammaSource::Analytic(Arc::new(move |s, m| factor * f(s, m)))),
            Some(GammaSource::Table { m, times, values }) => Some(GammaSource::Table {
                m,
                times,
                values: values.iter().map(|v| v * factor).collect(),
            }),
            None => None,
        };
        out
    }

    /// Monte Carlo estimates of `E[H^{2m}(s)]` at each of `times`, using
    /// `W(s) = √s·Z`.
    pub fn estimate_even_moment(&self, m: u32, times: &[f64], samples: usize, seed: u64) -> Vec<MeanEstimate> {
        times
            .par_iter()
            .enumerate()
            .map(|(k, &s)| {
                let mut stream = NormalStream::auxiliary(seed, k as u64);
                let values: Vec<f64> = (0..samples)
                    .map(|_| self.eval(s, s.sqrt() * stream.next_normal()).powi(2 * m as i32))
                    .collect();
                MeanEstimate::from_samples(&values)
            })
            .collect()
    }

    /// Attach a `Γ` table for exponent `m` estimated at `times`.
    pub fn with_estimated_gamma(&self, m: u32, times: &[f64], samples: usize, seed: u64) -> Self {
        let moments = self.estimate_even_moment(m, times, samples, seed);
        let mut out = self.clone();
        out.gamma = Some(GammaSource::Table {
            m,
            times: times.to_vec(),
            values: moments
                .iter()
                .map(|e| e.mean.max(0.0).powf(1.0 / (2 * m) as f64))
                .collect(),
        });
        out
    }
}

fn interpolate(times: &[f64], values: &[f64], s: f64) -> f64 {
    match times.iter().position(|&t| t >= s) {
        None => *values.last().unwrap_or(&f64::NAN),
        Some(0) => values[0],
        Some(i) => {
            let w = (s - times[i - 1]) / (times[i] - times[i - 1]);
            values[i - 1] + w * (values[i] - values[i - 1])
        }
    }
}

/// `X(t) = ∫ G(t,s) dM(s)` with `M = ∫ H dW`; `m` is the odd variation order
/// whose moment condition is tracked.
#[derive(Clone, Debug)]
pub struct MartingaleVolterra {
    pub kernel: VolterraKernel,
    pub volatility: VolatilityModel,
    pub m: u32,
}

impl MartingaleVolterra {
    pub fn new(kernel: VolterraKernel, volatility: VolatilityModel, m: u32) -> Result<Self> {
        if m.is_multiple_of(2) {
            return Err(Error::domain("m", m as f64, "odd integers"));
        }
        if volatility.bound().is_none() {
            if let Some(bad) = [0.0, 0.5, 1.0]
                .into_iter()
                .find(|&s| volatility.gamma(s, m).is_some_and(|g| !g.is_finite()))
            {
                return Err(Error::Model(format!("E[H^{}({bad})] is not finite", 2 * m)));
            }
        }
        Ok(MartingaleVolterra { kernel, volatility, m })
    }
}

#[derive(Clone, Debug)]
pub enum ProcessModel {
    GaussianCovariance(BivariateMetric),
    GaussianVolterra(VolterraKernel),
    MartingaleVolterra(MartingaleVolterra),
}

impl ProcessModel {
    /// Registry: univariate metric names map to covariance sampling, kernel
    /// names to Volterra sampling (Brownian uses its kernel), and
    /// `martingale_cos {H, m}` to an RL kernel driven by `cos(W)` volatility.
    pub fn from_descriptor(desc: &Descriptor) -> Result<Self> {
        match desc.name.as_str() {
            "brownian" => Ok(ProcessModel::GaussianVolterra(VolterraKernel::brownian())),
            "fbm" | "power" | "log_corrected" => Ok(ProcessModel::GaussianCovariance(BivariateMetric::Homogeneous(
                metric_from_descriptor(desc)?,
            ))),
            "rl_fbm" | "power_kernel" | "log_corrected_kernel" => {
                Ok(ProcessModel::GaussianVolterra(kernel_from_descriptor(desc)?))
            }
            "martingale_cos" => {
                let m = desc.params.get("m").copied().unwrap_or(3.0);
                if m.fract() != 0.0 || m < 1.0 {
                    return Err(Error::domain("m", m, "odd integers"));
                }
                Ok(ProcessModel::MartingaleVolterra(MartingaleVolterra::new(
                    VolterraKernel::rl_fbm(desc.param("H")?)?,
                    VolatilityModel::cos_driving(),
                    m as u32,
                )?))
            }
            other => Err(Error::Unknown(other.to_string())),
        }
    }

    pub fn descriptor(&self) -> Descriptor {
        match self {
            ProcessModel::GaussianCovariance(m) => m.descriptor().clone(),
            ProcessModel::GaussianVolterra(k) => k.descriptor().clone(),
            ProcessModel::MartingaleVolterra(mv) => {
                let mut d = mv.kernel.descriptor().clone();
                d.name = format!("martingale_{}_{}", mv.volatility.descriptor().name, d.name);
                d.params.insert("m".into(), mv.m as f64);
                d
            }
        }
    }
}

pub const PROCESS_NAMES: &[&str] = &[
    "brownian",
    "fbm",
    "power",
    "log_corrected",
    "rl_fbm",
    "power_kernel",
    "log_corrected_kernel",
    "martingale_cos",
];

/// Gaussian comparison process `Z(t) = ∫ Γ(s) G(t,s) dW(s)`.
pub fn derive_comparison_process(model: &MartingaleVolterra) -> Result<ProcessModel> {
    let vol = model.volatility.clone();
    let m = model.m;
    if vol.gamma(0.0, m).is_none() {
        return Err(Error::Precondition(format!(
            "Γ is unavailable for volatility {} at m = {m}; estimate it first",
            vol.descriptor()
        )));
    }
    let scale: RealFn = Arc::new(move |s: f64| vol.gamma(s, m).unwrap_or(f64::NAN));
    let name = format!("{}_comparison", model.kernel.descriptor().name);
    Ok(ProcessModel::GaussianVolterra(model.kernel.scaled(&name, scale)))
}

/// Lower-triangular (or rectangular) operator stored row by row; row `i`
/// acts on the first `len_i` noise coordinates.
#[derive(Clone, Debug)]
struct RowOperator {
    offsets: Vec<usize>,
    data: Vec<f64>,
    noise_len: usize,
}

impl RowOperator {
    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `noise` holds `noise_len × LANES` values, lane-minor; `out[lane][i]`.
    fn apply_block(&self, noise: &[f64], out: &mut [Vec<f64>]) {
        for i in 0..self.rows() {
            let row = self.row(i);
            let mut acc = [0.0f64; LANES];
            for (g, z) in row.iter().zip(noise.chunks_exact(LANES)) {
                for l in 0..LANES {
                    acc[l] += g * z[l];
                }
            }
            for (lane, path) in out.iter_mut().enumerate() {
                path[i] = acc[lane];
            }
        }
    }
}

/// Row-Crout Cholesky on packed lower storage. Pivots within
/// `PIVOT_TOLERANCE·trace` of zero yield zero columns; more negative pivots
/// are an error.
fn cholesky(dim: usize, entry: impl Fn(usize, usize) -> f64 + Sync) -> Result<RowOperator> {
    let offsets: Vec<usize> = (0..=dim).map(|i| i * (i + 1) / 2).collect();
    let mut data = vec![0.0; offsets[dim]];
    let trace: f64 = (0..dim).map(|i| entry(i, i)).sum();
    let tolerance = PIVOT_TOLERANCE * trace.abs().max(f64::MIN_POSITIVE);
    let mut diag = vec![0.0; dim];
    for i in 0..dim {
        let (done, current) = data.split_at_mut(offsets[i]);
        let row_i = &mut current[..i + 1];
        for j in 0..i {
            if diag[j] == 0.0 {
                row_i[j] = 0.0;
                continue;
            }
            let row_j = &done[offsets[j]..offsets[j] + j];
            let s = entry(i, j) - crate::numeric::dot(&row_i[..j], row_j);
            row_i[j] = s / diag[j];
        }
        let pivot = entry(i, i) - crate::numeric::dot(&row_i[..i], &row_i[..i]);
        if pivot < -tolerance || !pivot.is_finite() {
            return Err(Error::Indefinite {
                index: i,
                pivot,
                tolerance,
            });
        }
        diag[i] = if pivot <= tolerance { 0.0 } else { pivot.sqrt() };
        row_i[i] = diag[i];
    }
    Ok(RowOperator {
        offsets,
        data,
        noise_len: dim,
    })
}

/// `X_i = Σ_{j<i} a_{i−j} ξ_j` by zero-padded FFT convolution.
struct FftConvolution {
    len: usize,
    fft_len: usize,
    kernel_spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FftConvolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FftConvolution")
            .field("len", &self.len)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl FftConvolution {
    fn new(coefficients: &[f64]) -> Self {
        let len = coefficients.len();
        let fft_len = (2 * len).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let mut kernel_spectrum = vec![Complex::new(0.0, 0.0); fft_len];
        for (slot, &a) in kernel_spectrum.iter_mut().zip(coefficients) {
            slot.re = a;
        }
        forward.process(&mut kernel_spectrum);
        FftConvolution {
            len,
            fft_len,
            kernel_spectrum,
            forward,
            inverse,
        }
    }

    fn apply(&self, noise: &[f64], out: &mut [f64], buffer: &mut Vec<Complex<f64>>) {
        buffer.clear();
        buffer.extend(noise.iter().map(|&x| Complex::new(x, 0.0)));
        buffer.resize(self.fft_len, Complex::new(0.0, 0.0));
        self.forward.process(buffer);
        for (b, k) in buffer.iter_mut().zip(&self.kernel_spectrum) {
            *b *= k;
        }
        self.inverse.process(buffer);
        let norm = 1.0 / self.fft_len as f64;
        for (o, b) in out.iter_mut().zip(buffer.iter()).take(self.len) {
            *o = b.re * norm;
        }
        out[0] = 0.0;
    }
}

#[derive(Debug)]
enum LinearMap {
    Rows(RowOperator),
    Fft(FftConvolution),
}

#[derive(Debug)]
enum Driver {
    Gaussian,
    Martingale(VolatilityModel),
}

/// Precomputed sampler for one (model, grid) pair; reusable across seeds.
#[derive(Debug)]
pub struct Sampler {
    grid: TimeGrid,
    descriptor: Descriptor,
    map: LinearMap,
    driver: Driver,
}

fn volterra_map(kernel: &VolterraKernel, grid: &TimeGrid) -> Result<LinearMap> {
    let points = grid.points();
    let h = grid.step();
    let root_h = h.sqrt();
    if let Some(g) = kernel.convolution_profile() {
        let mut coefficients = vec![0.0; points];
        for (d, slot) in coefficients.iter_mut().enumerate().skip(1) {
            let r = (d as f64 - 0.5) * h;
            let value = g(r);
            if !value.is_finite() {
                return Err(Error::Kernel { t: r, s: 0.0, value });
            }
            *slot = value * root_h;
        }
        return Ok(LinearMap::Fft(FftConvolution::new(&coefficients)));
    }
    let noise_len = points - 1;
    let row_len = |i: usize| if kernel.is_adapted() { i } else { noise_len };
    let mut offsets = Vec::with_capacity(points + 1);
    offsets.push(0);
    for i in 0..points {
        offsets.push(offsets[i] + row_len(i));
    }
    let rows: Vec<Result<Vec<f64>>> = (0..points)
        .into_par_iter()
        .map(|i| {
            let t = grid.time(i);
            (0..row_len(i))
                .map(|j| {
                    let s = (j as f64 + 0.5) * h;
                    let value = kernel.eval(t, s);
                    if value.is_finite() {
                        Ok(value * root_h)
                    } else {
                        Err(Error::Kernel { t, s, value })
                    }
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(offsets[points]);
    for row in rows {
        data.extend(row?);
    }
    Ok(LinearMap::Rows(RowOperator {
        offsets,
        data,
        noise_len,
    }))
}

/// Driving increments for one path divided by `√h`: `ξ_j` scaled by the
/// volatility seen from increments with index `< j`.
fn driving_noise(grid: &TimeGrid, driver: &Driver, seed: u64, path: u64, out: &mut [f64]) -> Result<()> {
    let mut stream = NormalStream::for_path(seed, path);
    stream.fill_normal(out);
    if let Driver::Martingale(vol) = driver {
        let h = grid.step();
        let root_h = h.sqrt();
        let mut w = 0.0;
        for (j, z) in out.iter_mut().enumerate() {
            let s = j as f64 * h;
            let sigma = vol.eval(s, w);
            if !sigma.is_finite() {
                return Err(Error::Model(format!("volatility is {sigma} at s = {s} on path {path}")));
            }
            w += root_h * *z;
            *z *= sigma;
        }
    }
    Ok(())
}

impl Sampler {
    pub fn new(model: &ProcessModel, grid: &TimeGrid) -> Result<Self> {
        let (map, driver) = match model {
            ProcessModel::GaussianCovariance(metric) => {
                let times: Vec<f64> = (0..grid.points()).map(|i| grid.time(i)).collect();
                let op = match metric {
                    BivariateMetric::Homogeneous(_) => {
                        cholesky(times.len(), |i, j| metric.covariance(times[i], times[j]))?
                    }
                    BivariateMetric::Covariance { .. } => {
                        let rows: Vec<Vec<f64>> = (0..times.len())
                            .into_par_iter()
                            .map(|i| (0..=i).map(|j| metric.covariance(times[i], times[j])).collect())
                            .collect();
                        let table = rows.concat();
                        cholesky(times.len(), |i, j| table[i * (i + 1) / 2 + j])?
                    }
                };
                (LinearMap::Rows(op), Driver::Gaussian)
            }
            ProcessModel::GaussianVolterra(kernel) => (volterra_map(kernel, grid)?, Driver::Gaussian),
            ProcessModel::MartingaleVolterra(mv) => (
                volterra_map(&mv.kernel, grid)?,
                Driver::Martingale(mv.volatility.clone()),
            ),
        };
        Ok(Sampler {
            grid: grid.clone(),
            descriptor: model.descriptor(),
            map,
            driver,
        })
    }

    fn noise_len(&self) -> usize {
        match &self.map {
            LinearMap::Rows(op) => op.noise_len,
            LinearMap::Fft(_) => self.grid.points() - 1,
        }
    }

    fn sample_block(&self, seed: u64, first: usize, count: usize) -> Result<Vec<Vec<f64>>> {
        let points = self.grid.points();
        let noise_len = self.noise_len();
        let mut paths = vec![vec![0.0; points]; LANES];
        match &self.map {
            LinearMap::Rows(op) => {
                let mut noise = vec![0.0; noise_len * LANES];
                let mut single = vec![0.0; noise_len];
                for lane in 0..count {
                    driving_noise(&self.grid, &self.driver, seed, (first + lane) as u64, &mut single)?;
                    for (j, &z) in single.iter().enumerate() {
                        noise[j * LANES + lane] = z;
                    }
                }
                op.apply_block(&noise, &mut paths);
            }
            LinearMap::Fft(conv) => {
                let mut single = vec![0.0; noise_len];
                let mut buffer = Vec::with_capacity(conv.fft_len);
                for (lane, path) in paths.iter_mut().enumerate().take(count) {
                    driving_noise(&self.grid, &self.driver, seed, (first + lane) as u64, &mut single)?;
                    conv.apply(&single, path, &mut buffer);
                }
            }
        }
        paths.truncate(count);
        Ok(paths)
    }

    pub fn sample(&self, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
        let blocks: Vec<Result<Vec<Vec<f64>>>> = (0..n_paths.div_ceil(LANES))
            .into_par_iter()
            .map(|b| {
                let first = b * LANES;
                self.sample_block(seed, first, LANES.min(n_paths - first))
            })
            .collect();
        let mut data = Vec::with_capacity(n_paths * self.grid.points());
        for block in blocks {
            for path in block? {
                data.extend_from_slice(&path);
            }
        }
        Ok(PathEnsemble {
            grid: self.grid.clone(),
            seed,
            model: self.descriptor.clone(),
            n_paths,
            data,
        })
    }
}

/// Seeded collection of paths on `grid`; path `p` is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    seed: u64,
    model: Descriptor,
    n_paths: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleHeader {
    grid: TimeGrid,
    seed: u64,
    model: Descriptor,
    n_paths: usize,
    n_points: usize,
}

const MAGIC: &[u8; 8] = b"ODDVENS1";

impl PathEnsemble {
    /// Ensemble from explicit path values (deterministic test paths).
    pub fn from_paths(grid: &TimeGrid, model: Descriptor, seed: u64, paths: Vec<Vec<f64>>) -> Result<Self> {
        let points = grid.points();
        if let Some(p) = paths.iter().position(|p| p.len() != points) {
            return Err(Error::Grid(format!("path {p} does not have {points} points")));
        }
        Ok(PathEnsemble {
            grid: grid.clone(),
            seed,
            model,
            n_paths: paths.len(),
            data: paths.concat(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model(&self) -> &Descriptor {
        &self.model
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let points = self.grid.points();
        &self.data[p * points..(p + 1) * points]
    }

    pub fn paths(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.grid.points().max(1)).take(self.n_paths)
    }

    /// Every path multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Sample covariance of `X(t_i)` and `X(t_j)` over paths.
    pub fn sample_covariance(&self, i: usize, j: usize) -> MeanEstimate {
        let products: Vec<f64> = self.paths().map(|p| p[i] * p[j]).collect();
        MeanEstimate::from_samples(&products)
    }

    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&EnsembleHeader {
            grid: self.grid.clone(),
            seed: self.seed,
            model: self.model.clone(),
            n_paths: self.n_paths,
            n_points: self.grid.points(),
        })?;
        out.write_all(MAGIC)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut header)?;
        let header: EnsembleHeader = serde_json::from_slice(&header)?;
        if header.n_points != header.grid.points() {
            return Err(Error::Format("point count does not match grid".into()));
        }
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != header.n_paths * header.n_points * 8 {
            return Err(Error::Format(format!(
                "expected {} data bytes, found {}",
                header.n_paths * header.n_points * 8,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(PathEnsemble {
            grid: header.grid,
            seed: header.seed,
            model: header.model,
            n_paths: header.n_paths,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// CSV with a time column followed by one column per path.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let mut line = String::from("t");
        for p in 0..self.n_paths {
            line.push_str(&format!(",path_{p}"));
        }
        writeln!(out, "{line}")?;
        for i in 0..self.grid.points() {
            line.clear();
            line.push_str(&format!("{}", self.grid.time(i)));
            for p in 0..self.n_paths {
                line.push_str(&format!(",{}", self.path(p)[i]));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

pub fn simulate(model: &ProcessModel, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
    Sampler::new(model, grid)?.sample(n_paths, seed)
}

pub fn simulate_gaussian_cholesky(
    metric: &BivariateMetric,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate(&ProcessModel::GaussianCovariance(metric.clone()), grid, n_paths, seed)
}

pub fn simulate_gaussian_volterra(
    kernel: &VolterraKernel,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate(&ProcessModel::GaussianVolterra(kernel.clone()), grid, n_paths, seed)
}

pub fn simulate_martingale_volterra(
    model: &MartingaleVolterra,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate(&ProcessModel::MartingaleVolterra(model.clone()), grid, n_paths, seed)
}

/// Driving increments `ΔM_j` of a martingale model along one path, for
/// diagnostics of the martingale property.
pub fn martingale_increments(model: &MartingaleVolterra, grid: &TimeGrid, seed: u64, path: u64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.points() - 1];
    driving_noise(
        grid,
        &Driver::Martingale(model.volatility.clone()),
        seed,
        path,
        &mut out,
    )?;
    let root_h = grid.step().sqrt();
    out.iter_mut().for_each(|v| *v *= root_h);
    Ok(out)
}

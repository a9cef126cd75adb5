//! Canonical metrics, covariances, Volterra kernels and the planar increment.
//!
//! Every metric stores the squared metric `δ²`; `δ` is always derived as its
//! square root.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_hurst, Error, Result};
use crate::numeric::integrate_singular;

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type PlaneFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Number of dyadic sample points used when structural flags are asserted.
pub const FLAG_SAMPLES: usize = 1024;

/// `|x|^m sgn(x)`. Exactly odd in `x`.
#[inline]
pub fn signed_power(x: f64, m: f64) -> f64 {
    let magnitude = if m.fract() == 0.0 && m <= 64.0 {
        x.abs().powi(m as i32)
    } else {
        x.abs().powf(m)
    };
    if x < 0.0 {
        -magnitude
    } else if x > 0.0 {
        magnitude
    } else {
        0.0
    }
}

/// Covariance of fractional Brownian motion with Hurst index `hurst`.
pub fn fbm_covariance(hurst: f64, s: f64, t: f64) -> Result<f64> {
    check_hurst(hurst)?;
    if s < 0.0 || t < 0.0 {
        return Err(Error::domain("time", s.min(t), "[0, inf)"));
    }
    let p = 2.0 * hurst;
    Ok(0.5 * (s.powf(p) + t.powf(p) - (t - s).abs().powf(p)))
}

/// Uniform grid on `[0, horizon + pad]` with an ε ladder of grid multiples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    ladder: Vec<f64>,
    ladder_steps: Vec<usize>,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize, ladder: &[f64]) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Grid(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::Grid(format!("need at least 2 steps, got {steps}")));
        }
        let h = horizon / steps as f64;
        let mut ladder_steps = Vec::with_capacity(ladder.len());
        for &eps in ladder {
            let k = (eps / h).round();
            if !(k >= 1.0) || (k * h - eps).abs() > 1e-9 * h {
                return Err(Error::Grid(format!(
                    "epsilon {eps} is not a positive multiple of the step {h}"
                )));
            }
            if eps > horizon / 4.0 * (1.0 + 1e-12) {
                return Err(Error::Grid(format!(
                    "epsilon {eps} exceeds a quarter of the horizon {horizon}"
                )));
            }
            ladder_steps.push(k as usize);
        }
        if ladder_steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Grid("epsilon ladder must be strictly decreasing".into()));
        }
        Ok(TimeGrid {
            horizon,
            steps,
            ladder: ladder_steps.iter().map(|&k| k as f64 * h).collect(),
            ladder_steps,
        })
    }

    /// Ladder `horizon * 2^-k` for `k` in `exponents`, listed coarse to fine.
    pub fn dyadic(horizon: f64, steps: usize, exponents: std::ops::RangeInclusive<i32>) -> Result<Self> {
        let ladder: Vec<f64> = exponents.map(|k| horizon * 2f64.powi(-k)).collect();
        Self::new(horizon, steps, &ladder)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn ladder(&self) -> &[f64] {
        &self.ladder
    }

    pub fn ladder_steps(&self) -> &[usize] {
        &self.ladder_steps
    }

    pub fn pad_steps(&self) -> usize {
        self.ladder_steps.first().copied().unwrap_or(0)
    }

    pub fn pad(&self) -> f64 {
        self.pad_steps() as f64 * self.step()
    }

    /// Number of stored grid points, `0..=steps + pad_steps`.
    pub fn points(&self) -> usize {
        self.steps + self.pad_steps() + 1
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.step()
    }

    /// Number of grid steps in `eps`; errors unless `eps` is a grid multiple
    /// no larger than the pad.
    pub fn eps_steps(&self, eps: f64) -> Result<usize> {
        let h = self.step();
        let k = (eps / h).round();
        if !(k >= 1.0) || (k * h - eps).abs() > 1e-9 * h {
            return Err(Error::Grid(format!("epsilon {eps} is not aligned to the step {h}")));
        }
        let k = k as usize;
        if k > self.pad_steps() {
            return Err(Error::Grid(format!(
                "epsilon {eps} exceeds the simulated pad {}",
                self.pad()
            )));
        }
        Ok(k)
    }

    /// Index of a grid-aligned time in `[0, horizon + pad]`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let h = self.step();
        let i = (t / h).round();
        if !(i >= 0.0) || (i * h - t).abs() > 1e-9 * h || i as usize >= self.points() {
            return Err(Error::Grid(format!("time {t} is not a grid point")));
        }
        Ok(i as usize)
    }
}

/// Structural properties a metric claims; asserted by sampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFlags {
    pub increasing: bool,
    pub concave: bool,
}

/// Registry name plus numeric parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Descriptor {
    pub fn new(name: &str) -> Self {
        Descriptor {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn param(&self, key: &str) -> Result<f64> {
        self.params
            .get(key)
            .copied()
            .ok_or_else(|| Error::Unknown(format!("{}: missing parameter `{key}`", self.name)))
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.params.is_empty() {
            let parts: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "({})", parts.join(", "))?;
        }
        Ok(())
    }
}

/// Squared metric of a process with homogeneous increments, `r ↦ δ²(r)`.
#[derive(Clone)]
pub struct UnivariateMetric {
    descriptor: Descriptor,
    delta_sq: RealFn,
    density: Option<RealFn>,
    flags: MetricFlags,
}

impl fmt::Debug for UnivariateMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UnivariateMetric")
            .field("descriptor", &self.descriptor)
            .field("has_density", &self.density.is_some())
            .field("flags", &self.flags)
            .finish()
    }
}

impl UnivariateMetric {
    /// `δ²(r) = r^exponent`; concave and increasing for exponents in (0, 1].
    pub fn power(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent < 2.0) {
            return Err(Error::domain("exponent", exponent, "(0, 2)"));
        }
        Ok(UnivariateMetric {
            descriptor: Descriptor::new("power").with("exponent", exponent),
            delta_sq: Arc::new(move |r: f64| r.abs().powf(exponent)),
            density: Some(Arc::new(move |r: f64| exponent * r.powf(exponent - 1.0))),
            flags: MetricFlags {
                increasing: true,
                concave: exponent <= 1.0,
            },
        })
    }

    /// Fractional Brownian motion, `δ²(r) = r^{2H}`.
    pub fn fbm(hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        let mut metric = Self::power(2.0 * hurst)?;
        metric.descriptor = Descriptor::new("fbm").with("H", hurst);
        Ok(metric)
    }

    pub fn brownian() -> Self {
        UnivariateMetric {
            descriptor: Descriptor::new("brownian"),
            delta_sq: Arc::new(|r: f64| r.abs()),
            density: Some(Arc::new(|_| 1.0)),
            flags: MetricFlags {
                increasing: true,
                concave: true,
            },
        }
    }

    /// `δ²(r) = r^p / log(1/r)` on `(0, r₀]` with `r₀ = log_corrected_switch(p)`,
    /// continued beyond `r₀` by its tangent line and below `LOG_FLOOR`
    /// linearly to zero.
    pub fn log_corrected(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent < 1.0) {
            return Err(Error::domain("exponent", exponent, "(0, 1)"));
        }
        const LOG_FLOOR: f64 = 1e-280;
        let r0 = log_corrected_switch(exponent);
        let core = move |r: f64| r.powf(exponent) / (-r.ln());
        let core_density = move |r: f64| {
            let l = -r.ln();
            r.powf(exponent - 1.0) * (exponent * l + 1.0) / (l * l)
        };
        let (v0, d0) = (core(r0), core_density(r0));
        let (vf, df) = (core(LOG_FLOOR), core(LOG_FLOOR) / LOG_FLOOR);
        Ok(UnivariateMetric {
            descriptor: Descriptor::new("log_corrected").with("exponent", exponent),
            delta_sq: Arc::new(move |r: f64| {
                let r = r.abs();
                if r > r0 {
                    v0 + d0 * (r - r0)
                } else if r >= LOG_FLOOR {
                    core(r)
                } else {
                    vf * r / LOG_FLOOR
                }
            }),
            density: Some(Arc::new(move |r: f64| {
                if r > r0 {
                    d0
                } else if r >= LOG_FLOOR {
                    core_density(r)
                } else {
                    df
                }
            })),
            flags: MetricFlags {
                increasing: true,
                concave: true,
            },
        })
    }

    /// User-supplied metric. Claimed flags are asserted on a dyadic sample of
    /// `(0, sample_range]`.
    pub fn custom(
        name: &str,
        delta_sq: RealFn,
        density: Option<RealFn>,
        flags: MetricFlags,
        sample_range: f64,
    ) -> Result<Self> {
        let metric = UnivariateMetric {
            descriptor: Descriptor::new(name),
            delta_sq,
            density,
            flags,
        };
        if metric.delta_sq(0.0) != 0.0 {
            return Err(Error::Model(format!("{name}: δ²(0) must be 0")));
        }
        let samples = dyadic_samples(sample_range, FLAG_SAMPLES);
        if let Some(r) = samples.iter().find(|&&r| !(metric.delta_sq(r) >= 0.0)) {
            return Err(Error::Model(format!("{name}: δ²({r}) is negative or not finite")));
        }
        if flags.increasing {
            if let Some(w) = samples
                .windows(2)
                .find(|w| metric.delta_sq(w[0]) < metric.delta_sq(w[1]))
            {
                return Err(Error::Model(format!(
                    "{name}: claimed increasing but δ²({}) > δ²({})",
                    w[1], w[0]
                )));
            }
        }
        if flags.concave {
            if let Some((a, b)) = concavity_violation(|r| metric.delta_sq(r), &samples) {
                return Err(Error::Model(format!(
                    "{name}: claimed concave but midpoint concavity fails at ({a}, {b})"
                )));
            }
        }
        Ok(metric)
    }

    pub fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    pub fn flags(&self) -> MetricFlags {
        self.flags
    }

    #[inline]
    pub fn delta_sq(&self, r: f64) -> f64 {
        (self.delta_sq)(r)
    }

    #[inline]
    pub fn delta(&self, r: f64) -> f64 {
        self.delta_sq(r).sqrt()
    }

    pub fn has_density(&self) -> bool {
        self.density.is_some()
    }

    pub fn density(&self, r: f64) -> Option<f64> {
        self.density.as_ref().map(|d| d(r))
    }

    /// Planar increment for a lag between the two ε-windows.
    #[inline]
    pub fn theta(&self, lag: f64, eps: f64) -> f64 {
        homogeneous_theta(self, lag, eps)
    }
}

/// Largest `r ≤ 1/e` below which `r^p / log(1/r)` is concave: with
/// `L = log(1/r)`, concavity holds iff `p(1−p)L² + (1−2p)L − 2 ≥ 0`.
pub fn log_corrected_switch(exponent: f64) -> f64 {
    let p = exponent;
    let a = p * (1.0 - p);
    let b = 1.0 - 2.0 * p;
    let root = (-b + (b * b + 8.0 * a).sqrt()) / (2.0 * a);
    (-root.max(1.0)).exp()
}

/// `½[δ²(lag+ε) + δ²(|lag−ε|) − 2δ²(lag)]`, the covariance of two ε-increments
/// whose left endpoints are `lag` apart.
#[inline]
pub fn homogeneous_theta(metric: &UnivariateMetric, lag: f64, eps: f64) -> f64 {
    let lag = lag.abs();
    0.5 * (metric.delta_sq(lag + eps) + metric.delta_sq((lag - eps).abs()) - 2.0 * metric.delta_sq(lag))
}

/// `n` points `range·2^{-k/…}` log-uniformly spaced from `range` down to
/// `range·2^-20`, in decreasing order.
pub fn dyadic_samples(range: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| range * 2f64.powf(-20.0 * i as f64 / (n - 1) as f64))
        .collect()
}

/// First sampled pair `(a, b)` where `f((a+b)/2) < (f(a)+f(b))/2` beyond
/// rounding; pairs are taken across scales.
pub(crate) fn concavity_violation(f: impl Fn(f64) -> f64, samples: &[f64]) -> Option<(f64, f64)> {
    for (i, &a) in samples.iter().enumerate() {
        for &b in samples[i + 1..].iter().step_by(37) {
            let mid = f(0.5 * (a + b));
            let chord = 0.5 * (f(a) + f(b));
            if mid < chord - 1e-12 * chord.abs() {
                return Some((a, b));
            }
        }
    }
    None
}

/// Squared metric and covariance of a (possibly non-homogeneous) process.
#[derive(Clone)]
pub enum BivariateMetric {
    /// `δ²(s,t) = δ²(|t−s|)` with `Q(u,u) = δ²(u)` (process started at 0).
    Homogeneous(UnivariateMetric),
    /// Given by its covariance; `δ²(s,t) = Q(s,s) + Q(t,t) − 2Q(s,t)`.
    Covariance {
        descriptor: Descriptor,
        covariance: PlaneFn,
    },
}

impl fmt::Debug for BivariateMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BivariateMetric::Homogeneous(m) => f.debug_tuple("Homogeneous").field(m).finish(),
            BivariateMetric::Covariance { descriptor, .. } => {
                f.debug_struct("Covariance").field("descriptor", descriptor).finish()
            }
        }
    }
}

impl BivariateMetric {
    pub fn from_covariance(descriptor: Descriptor, covariance: PlaneFn) -> Self {
        BivariateMetric::Covariance { descriptor, covariance }
    }

    /// Covariance `Q(s,t) = ∫ G(t,u) G(s,u) du` of a Volterra process driven by
    /// Brownian motion, computed by graded Gauss-Legendre quadrature.
    pub fn from_kernel(kernel: &VolterraKernel) -> Self {
        let k = kernel.clone();
        let descriptor = Descriptor {
            name: format!("{}_metric", kernel.descriptor.name),
            params: kernel.descriptor.params.clone(),
        };
        let covariance: PlaneFn = Arc::new(move |s: f64, t: f64| {
            let upper = if k.adapted { s.min(t) } else { s.max(t) };
            if upper <= 0.0 {
                return 0.0;
            }
            integrate_singular(|u| k.eval(t, u) * k.eval(s, u), 0.0, upper)
        });
        Self::from_covariance(descriptor, covariance)
    }

    pub fn descriptor(&self) -> &Descriptor {
        match self {
            BivariateMetric::Homogeneous(m) => m.descriptor(),
            BivariateMetric::Covariance { descriptor, .. } => descriptor,
        }
    }

    pub fn as_homogeneous(&self) -> Option<&UnivariateMetric> {
        match self {
            BivariateMetric::Homogeneous(m) => Some(m),
            BivariateMetric::Covariance { .. } => None,
        }
    }

    pub fn covariance(&self, s: f64, t: f64) -> f64 {
        match self {
            BivariateMetric::Homogeneous(m) => 0.5 * (m.delta_sq(s) + m.delta_sq(t) - m.delta_sq(t - s)),
            BivariateMetric::Covariance { covariance, .. } => covariance(s, t),
        }
    }

    pub fn variance(&self, u: f64) -> f64 {
        match self {
            BivariateMetric::Homogeneous(m) => m.delta_sq(u),
            BivariateMetric::Covariance { covariance, .. } => covariance(u, u),
        }
    }

    pub fn delta_sq(&self, s: f64, t: f64) -> f64 {
        match self {
            BivariateMetric::Homogeneous(m) => m.delta_sq(t - s),
            BivariateMetric::Covariance { covariance, .. } => {
                if s == t {
                    0.0
                } else {
                    (covariance(s, s) + covariance(t, t) - 2.0 * covariance(s, t)).max(0.0)
                }
            }
        }
    }

    /// `½[−δ²(t+ε,s+ε) + δ²(t,s+ε) + δ²(s,t+ε) − δ²(s,t)]`.
    pub fn theta(&self, s: f64, t: f64, eps: f64) -> f64 {
        planar_increment_theta(self, s, t, eps)
    }
}

pub fn planar_increment_theta(metric: &BivariateMetric, s: f64, t: f64, eps: f64) -> f64 {
    0.5 * (-metric.delta_sq(t + eps, s + eps) + metric.delta_sq(t, s + eps) + metric.delta_sq(s, t + eps)
        - metric.delta_sq(s, t))
}

/// Optional analytic derivatives of a kernel, `∂G/∂t`, `∂G/∂s`, `∂²G/∂s∂t`.
#[derive(Clone, Default)]
pub struct KernelDerivatives {
    pub dt: Option<PlaneFn>,
    pub ds: Option<PlaneFn>,
    pub dst: Option<PlaneFn>,
}

/// Deterministic kernel `G(t,s)` of `X(t) = ∫ G(t,s) dM(s)`.
#[derive(Clone)]
pub struct VolterraKernel {
    descriptor: Descriptor,
    eval: PlaneFn,
    adapted: bool,
    convolution: Option<RealFn>,
    derivatives: KernelDerivatives,
}

impl fmt::Debug for VolterraKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VolterraKernel")
            .field("descriptor", &self.descriptor)
            .field("adapted", &self.adapted)
            .field("convolution", &self.convolution.is_some())
            .finish()
    }
}

impl VolterraKernel {
    /// Adapted convolution kernel `G(t,s) = 1_{s≤t} g(t−s)`, with optional
    /// first and second derivatives of `g`.
    pub fn convolution(descriptor: Descriptor, g: RealFn, g_prime: Option<RealFn>, g_second: Option<RealFn>) -> Self {
        let profile = g.clone();
        let eval: PlaneFn = Arc::new(move |t: f64, s: f64| if s <= t { profile(t - s) } else { 0.0 });
        let derivatives = KernelDerivatives {
            dt: g_prime
                .clone()
                .map(|d| -> PlaneFn { Arc::new(move |t: f64, s: f64| if s < t { d(t - s) } else { 0.0 }) }),
            ds: g_prime.map(|d| -> PlaneFn { Arc::new(move |t: f64, s: f64| if s < t { -d(t - s) } else { 0.0 }) }),
            dst: g_second.map(|d| -> PlaneFn { Arc::new(move |t: f64, s: f64| if s < t { -d(t - s) } else { 0.0 }) }),
        };
        VolterraKernel {
            descriptor,
            eval,
            adapted: true,
            convolution: Some(g),
            derivatives,
        }
    }

    /// General kernel; when `adapted`, values for `s > t` are forced to zero.
    pub fn general(descriptor: Descriptor, eval: PlaneFn, adapted: bool) -> Self {
        let eval: PlaneFn = if adapted {
            Arc::new(move |t: f64, s: f64| if s <= t { eval(t, s) } else { 0.0 })
        } else {
            eval
        };
        VolterraKernel {
            descriptor,
            eval,
            adapted,
            convolution: None,
            derivatives: KernelDerivatives::default(),
        }
    }

    pub fn with_derivatives(mut self, derivatives: KernelDerivatives) -> Self {
        self.derivatives = derivatives;
        self
    }

    /// `G ≡ 1_{s≤t}`: Brownian motion.
    pub fn brownian() -> Self {
        Self::convolution(
            Descriptor::new("brownian"),
            Arc::new(|_| 1.0),
            Some(Arc::new(|_| 0.0)),
            Some(Arc::new(|_| 0.0)),
        )
    }

    /// Riemann-Liouville kernel `1_{s≤t}(t−s)^{H−½}`.
    pub fn rl_fbm(hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        let a = hurst - 0.5;
        Ok(Self::convolution(
            Descriptor::new("rl_fbm").with("H", hurst),
            Arc::new(move |r: f64| r.powf(a)),
            Some(Arc::new(move |r: f64| a * r.powf(a - 1.0))),
            Some(Arc::new(move |r: f64| a * (a - 1.0) * r.powf(a - 2.0))),
        ))
    }

    /// `G(t,s) = 1_{s≤t} ((δ²)′(t−s))^{1/2}`.
    pub fn from_metric(metric: &UnivariateMetric) -> Result<Self> {
        if !metric.has_density() {
            return Err(Error::UnsupportedMetric(format!(
                "{} has no density (δ²)′",
                metric.descriptor()
            )));
        }
        let m = metric.clone();
        let descriptor = Descriptor {
            name: format!("{}_kernel", metric.descriptor().name),
            params: metric.descriptor().params.clone(),
        };
        Ok(Self::convolution(
            descriptor,
            Arc::new(move |r: f64| m.density(r).unwrap_or(f64::NAN).max(0.0).sqrt()),
            None,
            None,
        ))
    }

    /// `G̃(t,s) = scale(s)·G(t,s)`.
    pub fn scaled(&self, name: &str, scale: RealFn) -> Self {
        let inner = self.eval.clone();
        let descriptor = Descriptor {
            name: name.to_string(),
            params: self.descriptor.params.clone(),
        };
        VolterraKernel {
            descriptor,
            eval: Arc::new(move |t: f64, s: f64| scale(s) * inner(t, s)),
            adapted: self.adapted,
            convolution: None,
            derivatives: KernelDerivatives::default(),
        }
    }

    pub fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    pub fn is_adapted(&self) -> bool {
        self.adapted
    }

    #[inline]
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        (self.eval)(t, s)
    }

    /// Profile `g` when the kernel is `1_{s≤t} g(t−s)`.
    pub fn convolution_profile(&self) -> Option<&RealFn> {
        self.convolution.as_ref()
    }

    pub fn derivatives(&self) -> &KernelDerivatives {
        &self.derivatives
    }
}

/// Kernel behind `G(t,s) = 1_{s≤t}(t−s)^{H−½}` with `(δ²)′ = 2H r^{2H−1}`:
/// the metric-derived kernel of fBm.
pub fn power_kernel(hurst: f64) -> Result<VolterraKernel> {
    VolterraKernel::from_metric(&UnivariateMetric::fbm(hurst)?)
}

/// Build a univariate metric from its registry descriptor.
pub fn metric_from_descriptor(desc: &Descriptor) -> Result<UnivariateMetric> {
    match desc.name.as_str() {
        "fbm" => UnivariateMetric::fbm(desc.param("H")?),
        "brownian" => Ok(UnivariateMetric::brownian()),
        "power" => UnivariateMetric::power(desc.param("exponent")?),
        "log_corrected" => {
            let m = desc.param("m")?;
            if !(m > 1.0) {
                return Err(Error::domain("m", m, "(1, inf)"));
            }
            let mut metric = UnivariateMetric::log_corrected(1.0 / m)?;
            metric.descriptor = desc.clone();
            Ok(metric)
        }
        other => Err(Error::Unknown(other.to_string())),
    }
}

/// Build a Volterra kernel from its registry descriptor.
pub fn kernel_from_descriptor(desc: &Descriptor) -> Result<VolterraKernel> {
    match desc.name.as_str() {
        "rl_fbm" => VolterraKernel::rl_fbm(desc.param("H")?),
        "brownian" => Ok(VolterraKernel::brownian()),
        "power_kernel" => power_kernel(desc.param("H")?),
        "log_corrected_kernel" => {
            let metric = metric_from_descriptor(&Descriptor::new("log_corrected").with("m", desc.param("m")?))?;
            VolterraKernel::from_metric(&metric)
        }
        other => Err(Error::Unknown(other.to_string())),
    }
}

pub const METRIC_NAMES: &[&str] = &["fbm", "brownian", "power", "log_corrected"];
pub const KERNEL_NAMES: &[&str] = &["rl_fbm", "brownian", "power_kernel", "log_corrected_kernel"];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fbm_covariance_values() {
        assert_eq!(fbm_covariance(0.5, 1.0, 2.0).unwrap(), 1.0);
        assert!((fbm_covariance(0.3, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let expected = 2f64.powf(1.0 / 3.0) / 2.0;
        assert!((fbm_covariance(1.0 / 6.0, 1.0, 2.0).unwrap() - expected).abs() < 1e-15);
        assert!(matches!(fbm_covariance(1.0, 1.0, 2.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn planar_theta_examples() {
        let bm = BivariateMetric::Homogeneous(UnivariateMetric::brownian());
        assert_eq!(bm.theta(0.1, 0.4, 0.1), 0.0);
        let h = 1.0 / 6.0;
        let fbm = UnivariateMetric::fbm(h).unwrap();
        let eps = 0.01;
        let planar = BivariateMetric::Homogeneous(fbm.clone()).theta(0.3, 0.3 + eps, eps);
        let expected = 0.5 * eps.powf(1.0 / 3.0) * (2f64.powf(1.0 / 3.0) - 2.0);
        assert!((planar - expected).abs() < 1e-14);
        assert!((fbm.theta(0.0, eps) - fbm.delta_sq(eps)).abs() < 1e-15);
    }

    #[test]
    fn homogeneous_theta_examples() {
        let bm = UnivariateMetric::brownian();
        assert_eq!(homogeneous_theta(&bm, 0.2, 0.1), 0.0);
        let h = 0.3;
        let fbm = UnivariateMetric::fbm(h).unwrap();
        let eps: f64 = 0.05;
        let expected = 0.5 * ((2.0 * eps).powf(2.0 * h) - 2.0 * eps.powf(2.0 * h));
        assert!((homogeneous_theta(&fbm, eps, eps) - expected).abs() < 1e-15);
    }

    #[test]
    fn signed_power_examples() {
        assert_eq!(signed_power(-2.0, 3.0), -8.0);
        assert_eq!(signed_power(-4.0, 2.5), -32.0);
        assert_eq!(signed_power(0.0, 3.0), 0.0);
    }

    #[test]
    fn rl_kernel_values() {
        let k = VolterraKernel::rl_fbm(0.3).unwrap();
        assert_eq!(k.eval(2.0, 1.0), 1.0);
        assert_eq!(k.eval(1.0, 2.0), 0.0);
        let bm = VolterraKernel::rl_fbm(0.5).unwrap();
        assert_eq!(bm.eval(0.7, 0.2), 1.0);
    }

    #[test]
    fn metric_kernel_of_power_is_scaled_rl() {
        let h = 0.3;
        let k = power_kernel(h).unwrap();
        let rl = VolterraKernel::rl_fbm(h).unwrap();
        for &(t, s) in &[(1.0, 0.5), (0.3, 0.01), (2.0, 1.999)] {
            let ratio = k.eval(t, s) / rl.eval(t, s);
            assert!((ratio - (2.0 * h).sqrt()).abs() < 1e-12);
        }
        let b = VolterraKernel::from_metric(&UnivariateMetric::brownian()).unwrap();
        assert_eq!(b.eval(0.9, 0.1), 1.0);
    }

    #[test]
    fn metric_without_density_is_unsupported() {
        let m = UnivariateMetric::custom(
            "no_density",
            Arc::new(|r: f64| r.abs().sqrt()),
            None,
            MetricFlags::default(),
            1.0,
        )
        .unwrap();
        assert!(matches!(
            VolterraKernel::from_metric(&m),
            Err(Error::UnsupportedMetric(_))
        ));
    }

    #[test]
    fn log_corrected_density_matches_finite_differences() {
        let m = UnivariateMetric::log_corrected(1.0 / 3.0).unwrap();
        let k = VolterraKernel::from_metric(&m).unwrap();
        for i in 1..=50 {
            let r = 0.5 * i as f64 / 50.0;
            let step = 1e-6 * r;
            let fd = (m.delta_sq(r + step) - m.delta_sq(r - step)) / (2.0 * step);
            let d = m.density(r).unwrap();
            assert!((fd - d).abs() <= 1e-6 * d.abs(), "r = {r}: {fd} vs {d}");
            let g = k.eval(1.0, 1.0 - r);
            assert!(g.is_finite() && g > 0.0);
        }
    }

    #[test]
    fn log_corrected_is_continuous_at_switch_points() {
        let m = UnivariateMetric::log_corrected(1.0 / 3.0).unwrap();
        let r0 = log_corrected_switch(1.0 / 3.0);
        assert!((r0 - 0.0961035311433466).abs() < 1e-12);
        let below = m.delta_sq(r0 * (1.0 - 1e-12));
        let above = m.delta_sq(r0 * (1.0 + 1e-12));
        assert!((below - above).abs() < 1e-11);
        assert_eq!(m.delta_sq(0.0), 0.0);
    }

    #[test]
    fn custom_metric_flags_are_asserted() {
        let cube = UnivariateMetric::custom(
            "cube",
            Arc::new(|r: f64| r.abs().powi(3)),
            None,
            MetricFlags {
                increasing: true,
                concave: true,
            },
            1.0,
        );
        assert!(matches!(cube, Err(Error::Model(_))));
    }

    #[test]
    fn grid_validation() {
        let g = TimeGrid::dyadic(1.0, 64, 2..=4).unwrap();
        assert_eq!(g.ladder_steps(), &[16, 8, 4]);
        assert_eq!(g.points(), 64 + 16 + 1);
        assert!(TimeGrid::new(1.0, 64, &[0.01]).is_err());
        assert!(TimeGrid::new(1.0, 64, &[0.125, 0.25]).is_err());
        assert!(TimeGrid::new(1.0, 64, &[0.5]).is_err());
        assert!(g.eps_steps(0.5).is_err());
    }

    #[test]
    fn kernel_covariance_matches_brownian() {
        let m = BivariateMetric::from_kernel(&VolterraKernel::brownian());
        assert!((m.covariance(0.3, 0.7) - 0.3).abs() < 1e-10);
        assert!((m.delta_sq(0.3, 0.7) - 0.4).abs() < 1e-10);
    }

    #[test]
    fn rl_metric_band() {
        let h = 0.3;
        let m = BivariateMetric::from_kernel(&VolterraKernel::rl_fbm(h).unwrap());
        for &(s, t) in &[(0.1, 0.2), (0.5, 0.9), (0.0, 0.3), (0.7, 0.71)] {
            let d = m.delta_sq(s, t).sqrt();
            let r = (t - s).abs().powf(h);
            assert!(d >= r * (1.0 - 1e-9) && d <= 2.0 * r, "({s},{t}): {d} vs {r}");
        }
    }

    #[test]
    fn registry_round_trip() {
        let m = metric_from_descriptor(&Descriptor::new("fbm").with("H", 0.25)).unwrap();
        assert!((m.delta_sq(0.25) - 0.5).abs() < 1e-15);
        assert!(metric_from_descriptor(&Descriptor::new("nope")).is_err());
        assert!(kernel_from_descriptor(&Descriptor::new("rl_fbm")).is_err());
        let k = kernel_from_descriptor(&Descriptor::new("log_corrected_kernel").with("m", 3.0)).unwrap();
        assert!(k.eval(1.0, 0.5).is_finite());
    }

    proptest! {
        #[test]
        fn signed_power_is_odd(x in -1e3f64..1e3, m in 1.0f64..7.0) {
            prop_assert_eq!(signed_power(-x, m), -signed_power(x, m));
        }

        #[test]
        fn planar_theta_symmetric_and_bounded(
            h in 0.05f64..0.95, s in 0.0f64..1.0, t in 0.0f64..1.0, eps in 0.001f64..0.2
        ) {
            let m = BivariateMetric::Homogeneous(UnivariateMetric::fbm(h).unwrap());
            let a = m.theta(s, t, eps);
            let b = m.theta(t, s, eps);
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
            let bound = m.delta_sq(s, s + eps).sqrt() * m.delta_sq(t, t + eps).sqrt();
            prop_assert!(a.abs() <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn homogeneous_and_planar_theta_agree(
            h in 0.05f64..0.95, s in 0.0f64..1.0, t in 0.0f64..1.0, eps in 0.001f64..0.2
        ) {
            let u = UnivariateMetric::fbm(h).unwrap();
            let planar = BivariateMetric::Homogeneous(u.clone()).theta(s, t, eps);
            let homog = u.theta(t - s, eps);
            let scale = u.delta_sq((t - s).abs() + eps);
            prop_assert!((planar - homog).abs() <= 1e-12 * scale);
        }

        #[test]
        fn concave_metric_has_nonpositive_off_diagonal_theta(
            h in 0.05f64..0.5, eps in 0.001f64..0.1, extra in 1e-6f64..1.0
        ) {
            let u = UnivariateMetric::fbm(h).unwrap();
            prop_assert!(u.theta(eps + extra, eps) <= 1e-15);
        }

        #[test]
        fn covariance_consistency(h in 0.05f64..0.95, s in 0.0f64..2.0, t in 0.0f64..2.0) {
            let m = BivariateMetric::Homogeneous(UnivariateMetric::fbm(h).unwrap());
            let q = 0.5 * (m.variance(s) + m.variance(t) - m.delta_sq(s, t));
            prop_assert!((m.covariance(s, t) - q).abs() < 1e-14);
            prop_assert_eq!(m.delta_sq(s, s), 0.0);
        }
    }
}

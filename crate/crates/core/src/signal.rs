//! Uniformly sampled signals, measurement noise and tracking metrics.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{domain, Result};

/// Relative tolerance used when comparing sampling grids and snapping times.
const GRID_TOL: f64 = 1e-9;

/// A real sequence sampled every `ts` seconds starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    samples: Vec<f64>,
    ts: f64,
    t0: f64,
}

impl SampledSignal {
    pub fn new(samples: Vec<f64>, ts: f64, t0: f64) -> Result<Self> {
        if !(ts > 0.0 && ts.is_finite()) {
            return domain(format!("sampling period must be positive and finite, got {ts}"));
        }
        if !t0.is_finite() {
            return domain("start time must be finite");
        }
        if let Some(k) = samples.iter().position(|v| !v.is_finite()) {
            return domain(format!("sample {k} is not finite"));
        }
        Ok(Self { samples, ts, t0 })
    }

    /// Samples `f` at `t0 + k·ts` for `k < len`.
    pub fn from_fn(len: usize, ts: f64, t0: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let samples = (0..len).map(|k| f(t0 + k as f64 * ts)).collect();
        Self::new(samples, ts, t0)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.ts
    }

    /// Time of the last sample, or `t0` for an empty signal.
    pub fn t_end(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Index of the grid point at time `t`, if `t` lies on the grid.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let x = (t - self.t0) / self.ts;
        let k = x.round();
        if k < 0.0 || (x - k).abs() > GRID_TOL * x.abs().max(1.0) {
            return None;
        }
        let k = k as usize;
        (k < self.len()).then_some(k)
    }

    pub fn same_grid(&self, other: &SampledSignal) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= GRID_TOL * a.abs().max(b.abs()).max(1.0);
        close(self.ts, other.ts) && close(self.t0, other.t0)
    }

    /// Writes `t,<name>` followed by one row per sample.
    pub fn write_csv<W: Write>(&self, name: &str, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,{name}")?;
        for (k, v) in self.samples.iter().enumerate() {
            writeln!(out, "{},{}", self.time(k), v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    None,
    GaussianWhite,
}

/// Additive measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub variance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { kind: NoiseKind::None, variance: 0.0, seed: 0 }
    }

    pub fn gaussian(variance: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::GaussianWhite, variance, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.variance.is_finite() {
            return domain("noise variance must be finite");
        }
        if self.variance < 0.0 {
            return domain(format!("noise variance must be non-negative, got {}", self.variance));
        }
        Ok(())
    }

    /// True when these settings produce an all-zero sequence.
    pub fn is_silent(&self) -> bool {
        self.kind == NoiseKind::None || self.variance == 0.0
    }
}

/// Streaming white-noise generator.
///
/// Draws come from ChaCha8 seeded with `spec.seed` and are mapped through
/// `rand_distr::Normal`, so the same seed always yields the same stream.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseSource {
    pub fn new(spec: &NoiseSpec) -> Result<Self> {
        spec.validate()?;
        let normal = if spec.is_silent() {
            None
        } else {
            Some(Normal::new(0.0, spec.variance.sqrt()).map_err(|e| crate::Error::Domain(e.to_string()))?)
        };
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(spec.seed), normal })
    }

    pub fn sample(&mut self) -> f64 {
        match &self.normal {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        }
    }
}

/// Returns `clean` plus iid zero-mean Gaussian samples of the given variance.
pub fn add_noise(clean: &SampledSignal, spec: &NoiseSpec) -> Result<SampledSignal> {
    let mut src = NoiseSource::new(spec)?;
    let samples = clean.samples.iter().map(|v| v + src.sample()).collect();
    SampledSignal::new(samples, clean.ts, clean.t0)
}

/// Tracking error summary over an evaluation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingMetrics {
    pub rms_error: f64,
    pub max_abs_error: f64,
    pub eval_window: (f64, f64),
    pub samples: usize,
}

/// Window covering the trailing `1 - skip_fraction` of a signal's span.
pub fn trailing_window(signal: &SampledSignal, skip_fraction: f64) -> (f64, f64) {
    let t_end = signal.t_end();
    let start = signal.t0() + skip_fraction.clamp(0.0, 1.0) * (t_end - signal.t0());
    (start, t_end)
}

pub fn tracking_metrics(y: &SampledSignal, y_ref: &SampledSignal, window: (f64, f64)) -> Result<TrackingMetrics> {
    if !y.same_grid(y_ref) {
        return domain("signals do not share a sampling grid");
    }
    let (t_start, t_end) = window;
    if !(t_start <= t_end) {
        return domain(format!("empty evaluation window [{t_start}, {t_end}]"));
    }
    let n = y.len().min(y_ref.len());
    if n == 0 {
        return domain("empty evaluation window: no samples");
    }
    let slack = GRID_TOL * y.ts();
    let common_end = y.time(n - 1);
    if t_start < y.t0() - slack || t_end > common_end + y.ts() * 1e-6 {
        return domain(format!("window [{t_start}, {t_end}] outside common range [{}, {common_end}]", y.t0()));
    }
    let first = (((t_start - y.t0()) / y.ts()) - 1e-6).ceil().max(0.0) as usize;
    let last = ((((t_end - y.t0()) / y.ts()) + 1e-6).floor() as usize).min(n - 1);
    if first > last {
        return domain("empty evaluation window: no grid point inside");
    }
    let mut sum_sq = 0.0;
    let mut max_abs: f64 = 0.0;
    for k in first..=last {
        let e = y.samples[k] - y_ref.samples[k];
        sum_sq += e * e;
        max_abs = max_abs.max(e.abs());
    }
    let count = last - first + 1;
    Ok(TrackingMetrics {
        rms_error: (sum_sq / count as f64).sqrt(),
        max_abs_error: max_abs,
        eval_window: window,
        samples: count,
    })
}

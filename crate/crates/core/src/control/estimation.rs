//! Per-channel estimator banks shared by the controllers.

use serde::{Deserialize, Serialize};

use crate::algdiff::{window_intervals, DerivativeKernel, Polynomial, Quadrature, WeightedWindow};
use crate::error::{config, Result};

/// How the input history enters the estimate of the unknown term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    /// The input is passed through the same smoothing kernel that the
    /// derivative estimator implicitly applies to `y^(ν)`, so both sides of
    /// the local model are compared over the same time window.
    #[default]
    Matched,
    /// The last applied input `u(κ−1)` is subtracted as is.
    Printed,
}

/// Sliding-window settings for one loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Window length in seconds; a multiple of the sampling period.
    pub window: f64,
    /// Local polynomial degree.
    pub degree: usize,
    pub quadrature: Quadrature,
    pub alignment: Alignment,
    /// Feed the tracking error from the order-0 estimate instead of the raw measurement.
    pub denoise: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            window: 0.2,
            degree: 2,
            quadrature: Quadrature::MomentMatched,
            alignment: Alignment::Matched,
            denoise: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self, ts: f64, max_order: usize) -> Result<()> {
        if self.degree < max_order {
            return config(format!("estimator degree {} is below the derivative order {max_order}", self.degree));
        }
        let m = window_intervals(self.window, ts)?;
        if m < self.degree.max(1) {
            return config(format!("window of {m} samples is too short for degree {}", self.degree));
        }
        Ok(())
    }

    pub(crate) fn kernel(&self, order: usize) -> Result<DerivativeKernel> {
        DerivativeKernel::new(order, self.degree, self.window)
    }

    /// Streaming estimator of the `order`-th derivative.
    pub(crate) fn derivative(&self, order: usize, ts: f64) -> Result<WeightedWindow> {
        Ok(WeightedWindow::new(self.kernel(order)?.discrete_weights(ts, self.quadrature)?))
    }

    pub(crate) fn intervals(&self, ts: f64) -> Result<usize> {
        window_intervals(self.window, ts)
    }
}

/// Smoothing of sampled outputs and held inputs by a polynomial weight.
pub(crate) struct Smoother {
    pub poly: Polynomial,
    pub m: usize,
    pub ts: f64,
}

impl Smoother {
    /// The smoothing kernel implied by the `order`-th derivative estimator.
    pub fn for_order(cfg: &EstimatorConfig, order: usize, ts: f64) -> Result<Self> {
        Ok(Self { poly: cfg.kernel(order)?.smoothing_kernel(), m: cfg.intervals(ts)?, ts })
    }

    pub fn derivative(&self) -> Self {
        Self { poly: self.poly.derivative(), m: self.m, ts: self.ts }
    }

    /// Applied to output samples `y(κ − i)`, `i = 0..=M`.
    pub fn sampled(&self) -> WeightedWindow {
        WeightedWindow::new(self.poly.trapezoid_weights(self.ts, self.m))
    }

    /// Applied to held inputs `u(κ − 1 − j)`, `j = 0..M`, history pre-filled with `u0`.
    pub fn held(&self, u0: f64) -> WeightedWindow {
        WeightedWindow::filled(self.poly.held_input_weights(self.ts, self.m), u0)
    }
}

/// Order-`ν` derivative, first derivative and level estimates of one output.
pub(crate) struct OutputBank {
    nu: usize,
    pub deriv: WeightedWindow,
    pub rate: Option<WeightedWindow>,
    pub level: Option<WeightedWindow>,
}

impl OutputBank {
    pub fn new(cfg: &EstimatorConfig, nu: usize, ts: f64, need_rate: bool) -> Result<Self> {
        let rate = if need_rate && nu != 1 { Some(cfg.derivative(1, ts)?) } else { None };
        let level = if cfg.denoise && nu != 0 { Some(cfg.derivative(0, ts)?) } else { None };
        Ok(Self { nu, deriv: cfg.derivative(nu, ts)?, rate, level })
    }

    pub fn push(&mut self, y: f64) {
        self.deriv.push(y);
        if let Some(w) = &mut self.rate {
            w.push(y);
        }
        if let Some(w) = &mut self.level {
            w.push(y);
        }
    }

    pub fn is_ready(&self) -> bool {
        self.deriv.is_ready()
    }

    /// `[y^(ν)]_e`.
    pub fn derivative(&self) -> Result<f64> {
        self.deriv.value()
    }

    /// `[ẏ]_e`, reusing the main estimator when `ν = 1`.
    pub fn rate(&self) -> Result<Option<f64>> {
        match &self.rate {
            Some(w) => w.value().map(Some),
            None if self.nu == 1 => self.deriv.value().map(Some),
            None => Ok(None),
        }
    }

    /// Denoised output, or the raw sample when denoising is off.
    pub fn level(&self, raw: f64) -> Result<f64> {
        match &self.level {
            Some(w) => w.value(),
            None => Ok(raw),
        }
    }
}

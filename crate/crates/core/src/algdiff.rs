//! Algebraic numerical differentiation.
//!
//! A derivative of order `n` of a signal that is locally a polynomial of
//! degree `N` is recovered by integrating the signal against a finite-window
//! kernel `w(σ)`, `σ ∈ [0, L]` measured backwards from the current time:
//!
//! ```text
//! [y^(n)]_e(t) = ∫₀ᴸ w(σ) y(t − σ) dσ
//! ```
//!
//! The kernel is the unique polynomial of degree ≤ N satisfying the moment
//! conditions `∫₀ᴸ σʲ w(σ) dσ = (−1)ⁿ n! [j = n]` for `j = 0..=N`, which is
//! the time-domain form of annihilating the unwanted initial conditions in
//! the operational domain and dividing by a power of `s`. Integration acts as
//! a low-pass filter, so zero-mean measurement noise is attenuated.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};
use crate::signal::SampledSignal;

/// Dense polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Antiderivative vanishing at zero.
    pub fn integral(&self) -> Polynomial {
        let mut out = Vec::with_capacity(self.0.len() + 1);
        out.push(0.0);
        out.extend(self.0.iter().enumerate().map(|(i, c)| c / (i + 1) as f64));
        Polynomial(out)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.0.len() <= 1 {
            return Polynomial(vec![0.0]);
        }
        Polynomial(self.0.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect())
    }

    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let p = self.integral();
        p.eval(b) - p.eval(a)
    }

    /// Exact weights for a zero-order-held input: entry `j` is the integral
    /// of the polynomial over `(j·ts, (j+1)·ts]`, the interval during which
    /// the input `u(κ−1−j)` was applied.
    pub fn held_input_weights(&self, ts: f64, intervals: usize) -> Vec<f64> {
        let p = self.integral();
        (0..intervals).map(|j| p.eval((j + 1) as f64 * ts) - p.eval(j as f64 * ts)).collect()
    }

    /// Composite trapezoid weights for samples `y(t − i·ts)`, `i = 0..=intervals`.
    pub fn trapezoid_weights(&self, ts: f64, intervals: usize) -> Vec<f64> {
        (0..=intervals)
            .map(|i| {
                let end = i == 0 || i == intervals;
                let tau = if end { 0.5 * ts } else { ts };
                tau * self.eval(i as f64 * ts)
            })
            .collect()
    }
}

/// How the kernel integral is discretized on the sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// Trapezoid-weighted polynomial whose discrete moments satisfy the
    /// moment conditions exactly, so degree ≤ N inputs are reproduced to
    /// round-off. Converges to the continuous kernel as `ts → 0`.
    #[default]
    MomentMatched,
    /// Composite trapezoid rule applied to the continuous kernel.
    Trapezoid,
    /// Composite midpoint rule on linearly interpolated samples.
    Midpoint,
}

/// Finite-window weight function estimating the `order`-th derivative of a
/// signal modelled as a degree-`degree` polynomial over `window` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeKernel {
    order: usize,
    degree: usize,
    window: f64,
    weights: Polynomial,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn moment_target(order: usize, j: usize) -> f64 {
    if j == order {
        let sign = if order.is_multiple_of(2) { 1.0 } else { -1.0 };
        sign * factorial(order)
    } else {
        0.0
    }
}

/// Solves `G a = b` for the normalized kernel coefficients.
fn solve_normalized(gram: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    gram.lu()
        .solve(&rhs)
        .filter(|a| a.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Domain("moment system is singular".into()))
}

impl DerivativeKernel {
    /// Synthesizes the kernel by solving the (N+1)×(N+1) moment system.
    pub fn new(order: usize, degree: usize, window: f64) -> Result<Self> {
        if order > degree {
            return domain(format!("derivative order {order} exceeds model degree {degree}"));
        }
        if !(window > 0.0 && window.is_finite()) {
            return domain(format!("window must be positive and finite, got {window}"));
        }
        let dim = degree + 1;
        // w(σ) = Σ a_i (σ/L)^i, so ∫₀ᴸ σʲ w = Σ a_i L^{j+1}/(i+j+1).
        let gram = DMatrix::from_fn(dim, dim, |j, i| 1.0 / (i + j + 1) as f64);
        let rhs = DVector::from_fn(dim, |j, _| moment_target(order, j) / window.powi(j as i32 + 1));
        let a = solve_normalized(gram, rhs)?;
        let coeffs = a.iter().enumerate().map(|(i, ai)| ai / window.powi(i as i32)).collect();
        Ok(Self { order, degree, window, weights: Polynomial(coeffs) })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Kernel coefficients in powers of σ.
    pub fn polynomial(&self) -> &Polynomial {
        &self.weights
    }

    pub fn weight(&self, sigma: f64) -> f64 {
        self.weights.eval(sigma)
    }

    /// `∫₀ᴸ σʲ w(σ) dσ`, evaluated analytically.
    pub fn moment(&self, j: usize) -> f64 {
        let l = self.window;
        self.weights.0.iter().enumerate().map(|(i, c)| c * l.powi((i + j + 1) as i32) / (i + j + 1) as f64).sum()
    }

    /// `∫₀ᴸ w(σ)² dσ`; the white-noise variance gain per unit `σ²·ts`.
    pub fn energy(&self) -> f64 {
        let c = &self.weights.0;
        let mut sq = vec![0.0; 2 * c.len() - 1];
        for (i, a) in c.iter().enumerate() {
            for (j, b) in c.iter().enumerate() {
                sq[i + j] += a * b;
            }
        }
        Polynomial(sq).integrate(0.0, self.window)
    }

    /// The `order`-fold antiderivative `W` of the kernel, with `W(0) = 0`.
    ///
    /// For `order ≥ 1` the moment conditions make `W` and its first
    /// `order − 1` derivatives vanish at both ends and give `∫W = 1`, so
    /// `[y^(n)]_e = ∫ W(σ) y^(n)(t − σ) dσ`: the estimate is the true
    /// derivative smoothed by `W`. Inputs that enter `y^(n)` directly must be
    /// smoothed by the same `W` for an estimator to stay consistent.
    pub fn smoothing_kernel(&self) -> Polynomial {
        (0..self.order).fold(self.weights.clone(), |p, _| p.integral())
    }

    /// Number of sampling intervals spanned by the window at period `ts`.
    pub fn intervals(&self, ts: f64) -> Result<usize> {
        window_intervals(self.window, ts)
    }

    /// Weights applied to samples `y(t − i·ts)`, `i = 0..=M`.
    pub fn discrete_weights(&self, ts: f64, quadrature: Quadrature) -> Result<Vec<f64>> {
        let m = self.intervals(ts)?;
        match quadrature {
            Quadrature::Trapezoid => Ok(self.weights.trapezoid_weights(ts, m)),
            Quadrature::Midpoint => {
                let mut c = vec![0.0; m + 1];
                for j in 0..m {
                    let half = 0.5 * ts * self.weight((j as f64 + 0.5) * ts);
                    c[j] += half;
                    c[j + 1] += half;
                }
                Ok(c)
            }
            Quadrature::MomentMatched => {
                if m < self.degree {
                    return domain(format!(
                        "window holds {} samples, degree {} needs at least {}",
                        m + 1,
                        self.degree,
                        self.degree + 1
                    ));
                }
                let dim = self.degree + 1;
                let nodes: Vec<(f64, f64)> = (0..=m)
                    .map(|i| {
                        let tau = if i == 0 || i == m { 0.5 } else { 1.0 };
                        (i as f64 / m as f64, tau / m as f64)
                    })
                    .collect();
                let gram =
                    DMatrix::from_fn(dim, dim, |j, l| nodes.iter().map(|(u, tau)| tau * u.powi((j + l) as i32)).sum());
                let rhs = DVector::from_fn(dim, |j, _| moment_target(self.order, j) / self.window.powi(j as i32 + 1));
                let a = solve_normalized(gram, rhs)?;
                let p = Polynomial(a.iter().copied().collect());
                Ok(nodes.iter().map(|(u, tau)| self.window * tau * p.eval(*u)).collect())
            }
        }
    }

    /// Dumps `σ,w` on a grid of `points` nodes.
    pub fn write_csv<W: std::io::Write>(&self, points: usize, mut out: W) -> std::io::Result<()> {
        writeln!(out, "sigma,weight")?;
        let points = points.max(2);
        for i in 0..points {
            let s = self.window * i as f64 / (points - 1) as f64;
            writeln!(out, "{},{}", s, self.weight(s))?;
        }
        Ok(())
    }
}

pub(crate) fn window_intervals(window: f64, ts: f64) -> Result<usize> {
    if !(ts > 0.0 && ts.is_finite()) {
        return domain(format!("sampling period must be positive, got {ts}"));
    }
    let x = window / ts;
    let m = x.round();
    if m < 1.0 || (x - m).abs() > 1e-6 * x.max(1.0) {
        return domain(format!("window {window} s is not a positive multiple of ts = {ts} s"));
    }
    Ok(m as usize)
}

/// Causal FIR over the most recent samples; newest sample first.
#[derive(Debug, Clone)]
pub struct WeightedWindow {
    weights: Vec<f64>,
    buffer: VecDeque<f64>,
}

impl WeightedWindow {
    pub fn new(weights: Vec<f64>) -> Self {
        let cap = weights.len();
        Self { weights, buffer: VecDeque::with_capacity(cap) }
    }

    /// Pre-fills the history, e.g. with an input held before start-up.
    pub fn filled(weights: Vec<f64>, value: f64) -> Self {
        let buffer = std::iter::repeat_n(value, weights.len()).collect();
        Self { weights, buffer }
    }

    pub fn push(&mut self, x: f64) {
        if self.buffer.len() == self.weights.len() {
            self.buffer.pop_back();
        }
        self.buffer.push_front(x);
    }

    pub fn is_ready(&self) -> bool {
        self.buffer.len() == self.weights.len()
    }

    pub fn value(&self) -> Result<f64> {
        if !self.is_ready() {
            return Err(Error::NotReady);
        }
        Ok(self.weights.iter().zip(&self.buffer).map(|(w, x)| w * x).sum())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
    }
}

/// Streaming derivative estimator over a sliding window.
#[derive(Debug, Clone)]
pub struct SlidingEstimator {
    kernel: DerivativeKernel,
    ts: f64,
    quadrature: Quadrature,
    window: WeightedWindow,
}

impl SlidingEstimator {
    /// The kernel window must be an integer multiple of `ts`.
    pub fn new(kernel: DerivativeKernel, ts: f64, quadrature: Quadrature) -> Result<Self> {
        let weights = kernel.discrete_weights(ts, quadrature)?;
        Ok(Self { kernel, ts, quadrature, window: WeightedWindow::new(weights) })
    }

    pub fn kernel(&self) -> &DerivativeKernel {
        &self.kernel
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature
    }

    pub fn weights(&self) -> &[f64] {
        self.window.weights()
    }

    pub fn push(&mut self, sample: f64) {
        self.window.push(sample);
    }

    pub fn is_ready(&self) -> bool {
        self.window.is_ready()
    }

    /// Estimate at the most recently pushed sample.
    pub fn value(&self) -> Result<f64> {
        self.window.value()
    }

    pub fn reset(&mut self) {
        self.window.reset();
    }

    /// Estimate at grid time `t` of a recorded signal, using samples in `[t − L, t]` only.
    pub fn estimate(&self, signal: &SampledSignal, t: f64) -> Result<f64> {
        if (signal.ts() - self.ts).abs() > 1e-12 * self.ts {
            return domain("signal sampling period differs from the estimator's");
        }
        let k =
            signal.index_at(t).ok_or_else(|| Error::Domain(format!("t = {t} is not a sample time of the signal")))?;
        let w = self.window.weights();
        if k + 1 < w.len() {
            return Err(Error::NotReady);
        }
        let y = signal.samples();
        Ok(w.iter().enumerate().map(|(i, c)| c * y[k - i]).sum())
    }
}

/// Result of [`denoise`]: samples before `ready_from` are passed through.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub signal: SampledSignal,
    pub ready_from: usize,
}

/// Applies the order-0 kernel of the given degree to every sample.
pub fn denoise(signal: &SampledSignal, degree: usize, window: f64) -> Result<Denoised> {
    let duration = signal.t_end() - signal.t0();
    if window >= duration {
        return domain(format!("window {window} s is not shorter than the signal ({duration} s)"));
    }
    let kernel = DerivativeKernel::new(0, degree, window)?;
    let mut est = SlidingEstimator::new(kernel, signal.ts(), Quadrature::MomentMatched)?;
    let mut out = Vec::with_capacity(signal.len());
    let mut ready_from = signal.len();
    for (k, &y) in signal.samples().iter().enumerate() {
        est.push(y);
        match est.value() {
            Ok(v) => {
                ready_from = ready_from.min(k);
                out.push(v);
            }
            Err(_) => out.push(y),
        }
    }
    Ok(Denoised { signal: SampledSignal::new(out, signal.ts(), signal.t0())?, ready_from })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{add_noise, NoiseSpec};
    use approx::assert_relative_eq;

    const TS: f64 = 0.01;

    fn estimator(n: usize, deg: usize, l: f64) -> SlidingEstimator {
        SlidingEstimator::new(DerivativeKernel::new(n, deg, l).unwrap(), TS, Quadrature::MomentMatched).unwrap()
    }

    #[test]
    fn moving_average_kernel() {
        let k = DerivativeKernel::new(0, 0, 0.4).unwrap();
        assert_relative_eq!(k.polynomial().coeffs()[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn first_derivative_kernel_closed_form() {
        let l = 0.5;
        let k = DerivativeKernel::new(1, 1, l).unwrap();
        let c = k.polynomial().coeffs();
        assert_relative_eq!(c[0], 6.0 / (l * l), epsilon = 1e-10);
        assert_relative_eq!(c[1], -12.0 / l.powi(3), epsilon = 1e-10);
    }

    #[test]
    fn second_derivative_kernel_reproduces_parabola() {
        let l = 1.0;
        let k = DerivativeKernel::new(2, 2, l).unwrap();
        // ∫ w(σ) (t − σ)²/2 dσ = 1 for every t
        for t in [0.0, 0.7, 3.0] {
            let p = Polynomial(vec![t * t / 2.0, -t, 0.5]);
            let mut prod = vec![0.0; 5];
            for (i, a) in k.polynomial().coeffs().iter().enumerate() {
                for (j, b) in p.coeffs().iter().enumerate() {
                    prod[i + j] += a * b;
                }
            }
            assert_relative_eq!(Polynomial(prod).integrate(0.0, l), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn kernel_rejects_bad_arguments() {
        assert!(matches!(DerivativeKernel::new(2, 1, 1.0), Err(Error::Domain(_))));
        assert!(matches!(DerivativeKernel::new(0, 0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(DerivativeKernel::new(0, 0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn kernels_satisfy_moment_conditions() {
        for l in [0.1, 0.5, 1.0, 2.0] {
            for deg in 0..=5 {
                for n in 0..=deg {
                    let k = DerivativeKernel::new(n, deg, l).unwrap();
                    for j in 0..=deg {
                        let expected = moment_target(n, j);
                        // round-off scales with the magnitude of the summed terms
                        let scale: f64 = k
                            .polynomial()
                            .coeffs()
                            .iter()
                            .enumerate()
                            .map(|(i, c)| (c * l.powi((i + j + 1) as i32)).abs())
                            .sum();
                        assert!(
                            (k.moment(j) - expected).abs() <= 1e-12 * scale.max(1.0),
                            "n={n} N={deg} L={l} j={j}: {}",
                            k.moment(j)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn discrete_weights_match_moments_exactly() {
        let k = DerivativeKernel::new(2, 3, 0.5).unwrap();
        let w = k.discrete_weights(TS, Quadrature::MomentMatched).unwrap();
        for j in 0..=3usize {
            let m: f64 = w.iter().enumerate().map(|(i, c)| c * (i as f64 * TS).powi(j as i32)).sum();
            assert!((m - moment_target(2, j)).abs() < 1e-8, "j={j}: {m}");
        }
    }

    #[test]
    fn window_must_be_grid_multiple() {
        let k = DerivativeKernel::new(1, 1, 0.105).unwrap();
        assert!(SlidingEstimator::new(k, TS, Quadrature::MomentMatched).is_err());
        let k = DerivativeKernel::new(3, 3, 0.02).unwrap();
        assert!(SlidingEstimator::new(k, TS, Quadrature::MomentMatched).is_err());
    }

    #[test]
    fn constant_signal_order_zero_is_exact() {
        for q in [Quadrature::MomentMatched, Quadrature::Trapezoid, Quadrature::Midpoint] {
            let est = SlidingEstimator::new(DerivativeKernel::new(0, 0, 0.3).unwrap(), TS, q).unwrap();
            let s = SampledSignal::from_fn(100, TS, 0.0, |_| 2.5).unwrap();
            assert_relative_eq!(est.estimate(&s, 0.5).unwrap(), 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn slope_of_line() {
        let est = estimator(1, 1, 0.5);
        let s = SampledSignal::from_fn(200, TS, 0.0, |t| 3.0 * t + 1.0).unwrap();
        let max_y = s.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for t in [0.5, 1.0, 1.99] {
            let v = est.estimate(&s, t).unwrap();
            assert!((v - 3.0).abs() <= 1e-6 * max_y, "t={t}: {v}");
        }
    }

    #[test]
    fn curvature_of_parabola() {
        let est = estimator(2, 2, 0.5);
        let s = SampledSignal::from_fn(300, TS, 0.0, |t| t * t).unwrap();
        for t in [0.5, 1.3, 2.99] {
            let v = est.estimate(&s, t).unwrap();
            assert!((v - 2.0).abs() <= 2e-3, "t={t}: {v}");
        }
    }

    #[test]
    fn warming_up_is_reported() {
        let mut est = estimator(1, 1, 0.1);
        let s = SampledSignal::from_fn(50, TS, 0.0, |t| t).unwrap();
        assert!(matches!(est.estimate(&s, 0.05), Err(Error::NotReady)));
        for k in 0..10 {
            est.push(k as f64);
            assert!(matches!(est.value(), Err(Error::NotReady)));
        }
        est.push(10.0);
        assert!(est.is_ready());
        assert_relative_eq!(est.value().unwrap(), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn estimate_is_causal() {
        let est = estimator(1, 2, 0.3);
        let a = SampledSignal::from_fn(100, TS, 0.0, |t| (3.0 * t).sin()).unwrap();
        let mut future = a.samples().to_vec();
        for v in &mut future[61..] {
            *v += 100.0;
        }
        let b = SampledSignal::new(future, TS, 0.0).unwrap();
        assert_eq!(est.estimate(&a, 0.6).unwrap(), est.estimate(&b, 0.6).unwrap());
    }

    #[test]
    fn trapezoid_on_continuous_kernel_is_biased() {
        let est = SlidingEstimator::new(DerivativeKernel::new(2, 2, 0.5).unwrap(), TS, Quadrature::Trapezoid).unwrap();
        let s = SampledSignal::from_fn(300, TS, 0.0, |t| t * t).unwrap();
        assert!((est.estimate(&s, 2.0).unwrap() - 2.0).abs() > 0.1);
    }

    #[test]
    fn smoothing_kernel_has_unit_mass_and_clamped_ends() {
        for (n, deg, l) in [(1, 1, 0.5), (2, 2, 1.0), (2, 3, 0.8), (1, 2, 0.3)] {
            let k = DerivativeKernel::new(n, deg, l).unwrap();
            let w = k.smoothing_kernel();
            assert_relative_eq!(w.integrate(0.0, l), 1.0, epsilon = 1e-9);
            let mut d = w.clone();
            for _ in 0..n {
                assert!(d.eval(0.0).abs() < 1e-9);
                assert!(d.eval(l).abs() < 1e-6 * d.coeffs().iter().map(|c| c.abs()).sum::<f64>());
                d = d.derivative();
            }
        }
    }

    #[test]
    fn held_input_weights_sum_to_mass() {
        let k = DerivativeKernel::new(2, 2, 1.0).unwrap();
        let w = k.smoothing_kernel().held_input_weights(TS, 100);
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn first_derivative_smoothing_is_parabolic() {
        let l = 0.5;
        let w = DerivativeKernel::new(1, 1, l).unwrap().smoothing_kernel();
        for s in [0.1, 0.25, 0.4] {
            assert_relative_eq!(w.eval(s), 6.0 * s * (l - s) / l.powi(3), epsilon = 1e-9);
        }
    }

    #[test]
    fn denoise_passes_polynomials() {
        let s = SampledSignal::from_fn(300, TS, 0.0, |t| 1.0 + 0.5 * t - 0.2 * t * t).unwrap();
        let d = denoise(&s, 2, 0.5).unwrap();
        assert_eq!(d.ready_from, 50);
        for (a, b) in d.signal.samples().iter().zip(s.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn denoise_attenuates_white_noise() {
        let clean = SampledSignal::from_fn(2000, TS, 0.0, |_| 5.0).unwrap();
        let noisy = add_noise(&clean, &NoiseSpec::gaussian(0.01, 99)).unwrap();
        let d = denoise(&noisy, 0, 0.5).unwrap();
        let resid: Vec<f64> = d.signal.samples()[d.ready_from..].iter().map(|v| v - 5.0).collect();
        let std = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
        assert!(std <= 3.0 * 0.1 / 50f64.sqrt(), "std {std}");
    }

    #[test]
    fn denoise_rejects_long_window() {
        let s = SampledSignal::from_fn(20, TS, 0.0, |t| t).unwrap();
        assert!(matches!(denoise(&s, 0, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn noise_variance_bounded_by_kernel_energy() {
        // Monte Carlo over independent windows of pure noise.
        let sigma2 = 0.01;
        for (n, deg, l) in [(0, 0, 0.5), (0, 1, 0.5), (1, 1, 0.5), (2, 2, 1.0)] {
            let kernel = DerivativeKernel::new(n, deg, l).unwrap();
            let bound = sigma2 * TS * kernel.energy();
            let est = SlidingEstimator::new(kernel, TS, Quadrature::MomentMatched).unwrap();
            let m = est.weights().len();
            let trials = 400;
            let noise = add_noise(
                &SampledSignal::new(vec![0.0; m * trials], TS, 0.0).unwrap(),
                &NoiseSpec::gaussian(sigma2, 5),
            )
            .unwrap();
            let vals: Vec<f64> =
                (0..trials).map(|r| est.estimate(&noise, noise.time(r * m + m - 1)).unwrap()).collect();
            let var = vals.iter().map(|v| v * v).sum::<f64>() / trials as f64;
            // chi-square with `trials` dof: 3 sigma ≈ 3·sqrt(2/trials)
            let slack = 1.0 + 3.0 * (2.0 / trials as f64).sqrt();
            assert!(var <= bound * slack, "n={n} N={deg}: var {var} bound {bound}");
        }
    }

    proptest::proptest! {
        #[test]
        fn estimator_is_linear(
            a in -5.0f64..5.0, b in -5.0f64..5.0,
            f1 in 0.1f64..3.0, f2 in 0.1f64..3.0,
        ) {
            let est = estimator(1, 2, 0.2);
            let y = SampledSignal::from_fn(60, TS, 0.0, |t| (f1 * t).sin()).unwrap();
            let z = SampledSignal::from_fn(60, TS, 0.0, |t| (f2 * t).cos() + t).unwrap();
            let comb = SampledSignal::from_fn(60, TS, 0.0, |t| a * (f1 * t).sin() + b * ((f2 * t).cos() + t)).unwrap();
            let t = 0.5;
            let lhs = est.estimate(&comb, t).unwrap();
            let rhs = a * est.estimate(&y, t).unwrap() + b * est.estimate(&z, t).unwrap();
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }
}

//! First-order-plus-delay identification from a step response, and the
//! associated PID tuning formulas.

use crate::control::PidGains;
use crate::error::{domain, Error, Result};
use crate::signal::SampledSignal;

/// `K e^{−τs} / (Ts + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderDelay {
    pub k: f64,
    pub t: f64,
    pub tau: f64,
}

/// First time the response crosses `level`, linearly interpolated.
fn crossing(signal: &SampledSignal, y0: f64, level: f64, rising: bool) -> Option<f64> {
    let y = signal.samples();
    let above = |v: f64| if rising { v - y0 >= level } else { v - y0 <= level };
    let k = y.iter().position(|v| above(*v))?;
    if k == 0 {
        return Some(signal.time(0));
    }
    let (a, b) = (y[k - 1] - y0, y[k] - y0);
    let frac = if b == a { 0.0 } else { (level - a) / (b - a) };
    Some(signal.time(k - 1) + frac * signal.ts())
}

/// Fits the model to a step response starting at the step instant.
///
/// `K = Δy/Δu`; with `t₁`, `t₂` the 28 % and 40 % crossing times relative to
/// the step, `T = 5.5(t₂ − t₁)` and `τ = 2.8t₁ − 1.8t₂`.
pub fn identify(response: &SampledSignal, u_step: f64) -> Result<FirstOrderDelay> {
    if u_step == 0.0 || !u_step.is_finite() {
        return domain("step amplitude must be nonzero and finite");
    }
    let y = response.samples();
    let n = y.len();
    if n < 20 {
        return Err(Error::Identification("step response too short".into()));
    }
    let y0 = y[0];
    let y_end = y[n - 1];
    let dy = y_end - y0;
    if dy == 0.0 {
        return Err(Error::Identification("response does not move".into()));
    }
    let tail = &y[n - n / 10..];
    if tail.iter().any(|v| (v - y_end).abs() > 0.01 * dy.abs()) {
        return Err(Error::Identification("response has not settled".into()));
    }
    let rising = dy > 0.0;
    let t1 = crossing(response, y0, 0.28 * dy, rising);
    let t2 = crossing(response, y0, 0.40 * dy, rising);
    let (Some(t1), Some(t2)) = (t1, t2) else {
        return Err(Error::Identification("response never crosses 28 %/40 % levels".into()));
    };
    let (t1, t2) = (t1 - response.t0(), t2 - response.t0());
    let t = 5.5 * (t2 - t1);
    let tau = 2.8 * t1 - 1.8 * t2;
    if t < 2.0 * response.ts() || tau <= 0.0 {
        return Err(Error::Identification(format!("degenerate fit T = {t}, tau = {tau}")));
    }
    Ok(FirstOrderDelay { k: dy / u_step, t, tau })
}

/// `K_P = 100(0.4τ + T)/(120Kτ)`, `K_I = 1/(1.33Kτ)`, `K_D = 0.35T/K`.
pub fn gains(k: f64, t: f64, tau: f64) -> Result<PidGains> {
    if !(k > 0.0 && t > 0.0 && tau > 0.0) {
        return domain(format!("K, T and tau must be positive, got ({k}, {t}, {tau})"));
    }
    Ok(PidGains::new(100.0 * (0.4 * tau + t) / (120.0 * k * tau), 1.0 / (1.33 * k * tau), 0.35 * t / k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fopdt(k: f64, t: f64, tau: f64, n: usize, ts: f64) -> SampledSignal {
        SampledSignal::from_fn(n, ts, 0.0, |s| if s <= tau { 0.0 } else { k * (1.0 - (-(s - tau) / t).exp()) }).unwrap()
    }

    #[test]
    fn printed_gains() {
        let g = gains(4.0, 2.018, 0.2424).unwrap();
        assert!((g.kp - 1.8181).abs() < 5e-4);
        assert!((g.ki - 0.7754).abs() < 5e-4);
        assert!((g.kd - 0.1766).abs() < 5e-4);
    }

    #[test]
    fn unit_gains() {
        let g = gains(1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(g.kp, 140.0 / 120.0, epsilon = 1e-12);
        assert_relative_eq!(g.ki, 1.0 / 1.33, epsilon = 1e-12);
        assert_relative_eq!(g.kd, 0.35, epsilon = 1e-12);
    }

    #[test]
    fn gains_scale_with_inverse_gain() {
        let a = gains(2.0, 1.3, 0.4).unwrap();
        let b = gains(4.0, 1.3, 0.4).unwrap();
        assert_relative_eq!(b.kp, a.kp / 2.0, epsilon = 1e-12);
        assert_relative_eq!(b.ki, a.ki / 2.0, epsilon = 1e-12);
        assert_relative_eq!(b.kd, a.kd / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_parameters_rejected() {
        assert!(gains(0.0, 1.0, 1.0).is_err());
        assert!(gains(1.0, -1.0, 1.0).is_err());
        assert!(gains(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn recovers_synthetic_model() {
        let m = identify(&fopdt(4.0, 2.0, 0.25, 3000, 0.01), 1.0).unwrap();
        assert!((m.k - 4.0).abs() < 0.02 * 4.0);
        assert!((m.t - 2.0).abs() < 0.02 * 2.0);
        assert!((m.tau - 0.25).abs() < 0.02 * 0.25);
    }

    #[test]
    fn pure_gain_is_degenerate() {
        let s = SampledSignal::from_fn(100, 0.01, 0.0, |t| if t > 0.0 { 3.0 } else { 0.0 }).unwrap();
        assert!(matches!(identify(&s, 1.0), Err(Error::Identification(_))));
    }

    #[test]
    fn unsettled_response_rejected() {
        let s = SampledSignal::from_fn(500, 0.01, 0.0, |t| t).unwrap();
        assert!(matches!(identify(&s, 1.0), Err(Error::Identification(_))));
    }

    #[test]
    fn falling_response() {
        let s = fopdt(-2.0, 1.0, 0.3, 2000, 0.01);
        let m = identify(&s, 1.0).unwrap();
        assert!((m.k + 2.0).abs() < 0.04);
        assert!((m.t - 1.0).abs() < 0.02);
    }
}

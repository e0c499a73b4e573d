//! i-controllers around a partially known model `m·ÿ + k̂₁·y = u + …`, where
//! the unknown remainder `G = m·ÿ + k̂₁·y − u` is estimated and cancelled.

use crate::algdiff::WeightedWindow;
use crate::control::estimation::{Alignment, OutputBank, Smoother};
use crate::control::{antiwindup_update, check_references, Controller, ControllerState, LoopSettings, PidGains};
use crate::error::{config, domain, Result};
use crate::traject::ReferenceTrajectory;

/// Known part of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownModel {
    pub m: f64,
    pub k1: f64,
}

/// Places the three closed-loop poles of `m·ë + K_D ė + (k̂₁ + K_P)e + K_I∫e = 0` at `−pole`.
pub fn pole_placement(model: KnownModel, pole: f64) -> Result<PidGains> {
    if !(pole > 0.0 && model.m > 0.0) {
        return config("pole distance and mass must be positive");
    }
    let (m, p) = (model.m, pole);
    Ok(PidGains::new(3.0 * p * p * m - model.k1, p.powi(3) * m, 3.0 * p * m))
}

/// `[G]_e = m·[ÿ]_e + k̂₁·[y]_e − u(κ−1)`.
pub fn estimate_g(model: KnownModel, y_ddot: f64, y: f64, u_prev: f64) -> f64 {
    model.m * y_ddot + model.k1 * y - u_prev
}

/// `u = u* − [G]_e + PID(e)` with `u* = m·ÿ* + k̂₁·y*`; without compensation
/// the same loop runs as flatness-based feedforward plus PID.
pub struct RestrictedController {
    model: KnownModel,
    state: ControllerState,
    reference: ReferenceTrajectory,
    bank: OutputBank,
    smooth_y: Option<WeightedWindow>,
    smooth_u: Option<WeightedWindow>,
    compensate: bool,
    settings: LoopSettings,
    g: f64,
    e: f64,
    y_hat: f64,
}

impl RestrictedController {
    pub fn new(
        model: KnownModel,
        gains: PidGains,
        reference: ReferenceTrajectory,
        compensate: bool,
        settings: LoopSettings,
        u_init: f64,
    ) -> Result<Self> {
        check_references(std::slice::from_ref(&reference), 1)?;
        settings.estimator.validate(settings.ts, 2)?;
        let bank = OutputBank::new(&settings.estimator, 2, settings.ts, true)?;
        let (smooth_y, smooth_u) = if settings.estimator.alignment == Alignment::Matched {
            let sm = Smoother::for_order(&settings.estimator, 2, settings.ts)?;
            (Some(sm.sampled()), Some(sm.held(u_init)))
        } else {
            (None, None)
        };
        Ok(Self {
            model,
            state: ControllerState::new(gains)?,
            reference,
            bank,
            smooth_y,
            smooth_u,
            compensate,
            settings,
            g: 0.0,
            e: 0.0,
            y_hat: 0.0,
        })
    }

    pub fn g_estimate(&self) -> f64 {
        self.g
    }
}

impl Controller for RestrictedController {
    fn step(&mut self, t: f64, y: &[f64], u_prev: &[f64]) -> Result<Option<Vec<f64>>> {
        if y.is_empty() || u_prev.len() != 1 {
            return domain("restricted-model controller is single-input single-output");
        }
        self.bank.push(y[0]);
        if let Some(w) = &mut self.smooth_y {
            w.push(y[0]);
        }
        if let Some(w) = &mut self.smooth_u {
            w.push(u_prev[0]);
        }
        if !self.bank.is_ready() {
            return Ok(None);
        }
        let y_ddot = self.bank.derivative()?;
        self.y_hat = self.bank.level(y[0])?;
        self.g = match (&self.smooth_y, &self.smooth_u) {
            (Some(wy), Some(wu)) => self.model.m * y_ddot + self.model.k1 * wy.value()? - wu.value()?,
            _ => estimate_g(self.model, y_ddot, self.y_hat, u_prev[0]),
        };
        let [r, r_dot, r_ddot] = [0, 1, 2].map(|k| self.reference.eval(t, k));
        let (r, r_dot, r_ddot) = (r?, r_dot?, r_ddot?);
        let u_star = self.model.m * r_ddot + self.model.k1 * r;
        self.e = r - self.y_hat;
        let e_dot = self.bank.rate()?.map(|v| r_dot - v);
        let mut u = u_star + self.state.pid(self.e, e_dot, self.settings.ts);
        if self.compensate {
            u -= self.g;
        }
        Ok(Some(vec![u]))
    }

    fn update_saturation(&mut self, saturated: &[bool]) {
        if self.settings.antiwindup {
            antiwindup_update(&mut self.state, saturated[0]);
        } else {
            self.state.commit();
        }
    }

    fn telemetry(&self) -> Vec<(String, f64)> {
        vec![
            ("g_est".into(), self.g),
            ("e_1".into(), self.e),
            ("y_hat_1".into(), self.y_hat),
            ("freeze_1".into(), if self.state.freeze { 1.0 } else { 0.0 }),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spring_pole_placement() {
        let g = pole_placement(KnownModel { m: 0.5, k1: 2.0 }, 3.0).unwrap();
        assert_relative_eq!(g.kp, 11.5, epsilon = 1e-12);
        assert_relative_eq!(g.ki, 13.5, epsilon = 1e-12);
        assert_relative_eq!(g.kd, 4.5, epsilon = 1e-12);
    }

    #[test]
    fn known_plant_has_no_remainder() {
        // m ÿ + k y = u exactly
        let km = KnownModel { m: 0.5, k1: 3.0 };
        let (y, u) = (0.2, 1.1);
        let ydd = (u - km.k1 * y) / km.m;
        assert_relative_eq!(estimate_g(km, ydd, y, u), 0.0, epsilon = 1e-12);
    }
}

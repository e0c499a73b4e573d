//! GPI control of `(s − a)/(s² − (b+c)s + bc)` through its flat output, with
//! optional reconstruction of an additive perturbation `ϖ` in the second
//! state equation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::algdiff::WeightedWindow;
use crate::control::estimation::{EstimatorConfig, Smoother};
use crate::control::Controller;
use crate::error::{config, domain, Error, Result};
use crate::traject::{flat_nominal_nonminphase, FlatNominal, ReferenceTrajectory};

/// Zero `a` and poles `b`, `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Coefficients of `u = u* + γ∫(u − u*) + K_P e + K_I∫e + K_II∬e`, `e = y* − y`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GpiGains {
    pub gamma: f64,
    pub kp: f64,
    pub ki: f64,
    pub kii: f64,
}

impl GpiGains {
    /// Places all four roots of the flat-output error dynamics at `−pole`:
    /// `(s² − γs)(s² − (b+c)s + bc) + (K_P s² + K_I s + K_II)(s − a) = (s + pole)⁴`.
    pub fn pole_placement(p: NmpParams, pole: f64) -> Result<Self> {
        if p.a == 0.0 {
            return config("a zero at the origin cannot be handled by integral action");
        }
        let (beta, pi) = (p.b + p.c, p.b * p.c);
        // the system below is singular exactly when the zero cancels a pole
        let scale = 1.0 + p.a.abs().max(p.b.abs()).max(p.c.abs()).powi(2);
        if ((p.a - p.b) * (p.a - p.c)).abs() < 1e-12 * scale {
            return config("zero coincides with a pole; pole placement is singular");
        }
        let q = pole;
        let kii = -q.powi(4) / p.a;
        // unknowns (γ, K_P, K_I)
        let m = Matrix3::new(-1.0, 1.0, 0.0, beta, -p.a, 1.0, -pi, 0.0, -p.a);
        let rhs = Vector3::new(4.0 * q + beta, 6.0 * q * q - pi, 4.0 * q.powi(3) - kii);
        let x = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Config("zero coincides with a pole; pole placement is singular".into()))?;
        Ok(Self { gamma: x[0], kp: x[1], ki: x[2], kii })
    }

    /// Coefficients of the closed-loop characteristic polynomial, ascending.
    pub fn characteristic(&self, p: NmpParams) -> [f64; 5] {
        let (beta, pi) = (p.b + p.c, p.b * p.c);
        [
            -p.a * self.kii,
            -self.gamma * pi + self.kii - p.a * self.ki,
            pi + self.gamma * beta + self.ki - p.a * self.kp,
            -beta - self.gamma + self.kp,
            1.0,
        ]
    }
}

/// Accumulators of the GPI law.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GpiState {
    pub gains: GpiGains,
    /// `∫(u − u*)`, advanced with the previous sample's deviation.
    pub int_u_diff: f64,
    pub int_e: f64,
    pub int_int_e: f64,
    pub varpi_estimate: f64,
}

impl GpiState {
    pub fn new(gains: GpiGains) -> Self {
        Self { gains, ..Self::default() }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.gains);
    }

    /// One sample of the law. `u_dev_prev = u(κ−1) − u*(κ−1)`.
    pub fn step(&mut self, u_star: f64, e: f64, u_dev_prev: f64, ts: f64) -> f64 {
        self.int_u_diff += u_dev_prev * ts;
        self.int_e += e * ts;
        self.int_int_e += self.int_e * ts;
        let g = &self.gains;
        u_star + g.gamma * self.int_u_diff + g.kp * e + g.ki * self.int_e + g.kii * self.int_int_e
    }
}

/// `[ϖ]_e = −(([ÿ]_e − (b+c)[ẏ]_e + bc[y]_e − [u̇]_e)/a + u)`.
pub fn estimate_varpi(p: NmpParams, y: f64, y_dot: f64, y_ddot: f64, u: f64, u_dot: f64) -> Result<f64> {
    if p.a == 0.0 {
        return config("perturbation reconstruction needs a nonzero zero");
    }
    Ok(-((y_ddot - (p.b + p.c) * y_dot + p.b * p.c * y - u_dot) / p.a + u))
}

/// `[u̇]_e` from differentiating the GPI law:
/// `u̇* + γ(u − u*) + K_P ė + K_I e + K_II∫e`, with `e = y* − [y]_e`.
pub fn udot_estimate(g: &GpiGains, u_dot_star: f64, u_dev: f64, e_dot: f64, e: f64, int_e: f64) -> f64 {
    u_dot_star + g.gamma * u_dev + g.kp * e_dot + g.ki * e + g.kii * int_e
}

/// How `[ϖ]_e` is reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationEstimate {
    /// Nominal control left unmodified.
    Off,
    /// Output and input histories smoothed by the same kernel.
    #[default]
    Matched,
    /// Pointwise derivative estimates and the last input.
    Printed,
}

enum Reconstruction {
    Off,
    Matched {
        w2_y: WeightedWindow,
        w1_y: WeightedWindow,
        w0_y: WeightedWindow,
        w1_u: WeightedWindow,
        w0_u: WeightedWindow,
    },
    Printed {
        d2: WeightedWindow,
        d1: WeightedWindow,
        d0: WeightedWindow,
        int_e_hat: f64,
    },
}

/// GPI loop on the flat-output nominal, optionally correcting `u*` by `[ϖ]_e`.
pub struct GpiController {
    params: NmpParams,
    state: GpiState,
    nominal: FlatNominal,
    reference: ReferenceTrajectory,
    recon: Reconstruction,
    ts: f64,
    k: usize,
    u_star_pert_prev: Option<f64>,
    u_star_pert: f64,
    e: f64,
}

impl GpiController {
    /// `horizon` samples of nominal are precomputed; later times reuse the last one.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: NmpParams,
        gains: GpiGains,
        reference: ReferenceTrajectory,
        estimate: PerturbationEstimate,
        estimator: &EstimatorConfig,
        ts: f64,
        horizon: usize,
        u_init: f64,
    ) -> Result<Self> {
        reference.validate()?;
        let nominal = flat_nominal_nonminphase(&reference, params.a, params.b, params.c, ts, horizon.max(1))?;
        let recon = match estimate {
            PerturbationEstimate::Off => Reconstruction::Off,
            PerturbationEstimate::Matched => {
                estimator.validate(ts, 2)?;
                let sm = Smoother::for_order(estimator, 2, ts)?;
                let d = sm.derivative();
                Reconstruction::Matched {
                    w2_y: estimator.derivative(2, ts)?,
                    w1_y: d.sampled(),
                    w0_y: sm.sampled(),
                    w1_u: d.held(u_init),
                    w0_u: sm.held(u_init),
                }
            }
            PerturbationEstimate::Printed => {
                estimator.validate(ts, 2)?;
                Reconstruction::Printed {
                    d2: estimator.derivative(2, ts)?,
                    d1: estimator.derivative(1, ts)?,
                    d0: estimator.derivative(0, ts)?,
                    int_e_hat: 0.0,
                }
            }
        };
        Ok(Self {
            params,
            state: GpiState::new(gains),
            nominal,
            reference,
            recon,
            ts,
            k: 0,
            u_star_pert_prev: None,
            u_star_pert: 0.0,
            e: 0.0,
        })
    }

    pub fn nominal(&self) -> &FlatNominal {
        &self.nominal
    }

    pub fn varpi_estimate(&self) -> f64 {
        self.state.varpi_estimate
    }

    fn reconstruct(&mut self, t: f64, y: f64, u_prev: f64, k: usize) -> Result<Option<f64>> {
        let p = self.params;
        let ts = self.ts;
        let gains = self.state.gains;
        let u_dev_prev = u_prev - self.u_star_pert_prev.unwrap_or(u_prev);
        let u_dot_star = self.nominal.u_dot[k];
        match &mut self.recon {
            Reconstruction::Off => Ok(None),
            Reconstruction::Matched { w2_y, w1_y, w0_y, w1_u, w0_u } => {
                for w in [&mut *w2_y, &mut *w1_y, &mut *w0_y] {
                    w.push(y);
                }
                w1_u.push(u_prev);
                w0_u.push(u_prev);
                if !w2_y.is_ready() {
                    return Ok(None);
                }
                let (beta, pi) = (p.b + p.c, p.b * p.c);
                let lhs = w2_y.value()? - beta * w1_y.value()? + pi * w0_y.value()? - w1_u.value()?;
                Ok(Some(-(lhs / p.a + w0_u.value()?)))
            }
            Reconstruction::Printed { d2, d1, d0, int_e_hat } => {
                for w in [&mut *d2, &mut *d1, &mut *d0] {
                    w.push(y);
                }
                if !d2.is_ready() {
                    return Ok(None);
                }
                let (y0, y1, y2) = (d0.value()?, d1.value()?, d2.value()?);
                let r = self.reference.eval(t, 0)?;
                let r_dot = self.reference.eval(t, 1)?;
                let e_hat = r - y0;
                *int_e_hat += e_hat * ts;
                let u_dot = udot_estimate(&gains, u_dot_star, u_dev_prev, r_dot - y1, e_hat, *int_e_hat);
                estimate_varpi(p, y0, y1, y2, u_prev, u_dot).map(Some)
            }
        }
    }
}

impl Controller for GpiController {
    fn step(&mut self, t: f64, y: &[f64], u_prev: &[f64]) -> Result<Option<Vec<f64>>> {
        if y.is_empty() || u_prev.len() != 1 {
            return domain("GPI controller is single-input single-output");
        }
        let k = self.nominal.index(t);
        self.k = k;
        if let Some(v) = self.reconstruct(t, y[0], u_prev[0], k)? {
            self.state.varpi_estimate = v;
        }
        self.u_star_pert = self.nominal.u[k] - self.state.varpi_estimate;
        self.e = self.reference.eval(t, 0)? - y[0];
        let u_dev_prev = match self.u_star_pert_prev {
            Some(prev) => u_prev[0] - prev,
            None => 0.0,
        };
        let u = self.state.step(self.u_star_pert, self.e, u_dev_prev, self.ts);
        self.u_star_pert_prev = Some(self.u_star_pert);
        Ok(Some(vec![u]))
    }

    fn update_saturation(&mut self, _saturated: &[bool]) {}

    fn telemetry(&self) -> Vec<(String, f64)> {
        vec![
            ("varpi_est".into(), self.state.varpi_estimate),
            ("u_star".into(), self.u_star_pert),
            ("z_star".into(), self.nominal.z[self.k]),
            ("e_1".into(), self.e),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pole_placement_gives_quadruple_root() {
        for p in [NmpParams { a: 1.0, b: -1.0, c: -0.5 }, NmpParams { a: 2.0, b: -1.0, c: 1.0 }] {
            let g = GpiGains::pole_placement(p, 3.0).unwrap();
            let c = g.characteristic(p);
            let want = [81.0, 108.0, 54.0, 12.0, 1.0];
            for (a, b) in c.iter().zip(want) {
                assert_relative_eq!(*a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn zero_on_pole_is_singular() {
        assert!(GpiGains::pole_placement(NmpParams { a: -1.0, b: -1.0, c: -0.5 }, 3.0).is_err());
    }

    #[test]
    fn nominal_is_reproduced_on_zero_error() {
        let mut st = GpiState::new(GpiGains { gamma: 2.0, kp: 3.0, ki: 4.0, kii: 5.0 });
        for k in 0..100 {
            let u_star = (k as f64 * 0.1).sin();
            assert_eq!(st.step(u_star, 0.0, 0.0, 0.01), u_star);
        }
    }

    #[test]
    fn degenerates_to_pi_around_nominal() {
        let mut st = GpiState::new(GpiGains { gamma: 0.0, kp: 2.0, ki: 1.0, kii: 0.0 });
        let u = st.step(0.5, 1.0, 0.7, 0.1);
        assert_relative_eq!(u, 0.5 + 2.0 + 0.1, epsilon = 1e-12);
    }

    #[test]
    fn varpi_of_exact_unperturbed_plant_is_zero() {
        // ÿ − (b+c)ẏ + bc·y = u̇ − a·u holds for ϖ = 0
        let p = NmpParams { a: 1.0, b: -1.0, c: -0.5 };
        let (y, y_dot, u, u_dot) = (0.3, -0.2, 0.4, 0.1);
        let y_ddot = (p.b + p.c) * y_dot - p.b * p.c * y + u_dot - p.a * u;
        assert_relative_eq!(estimate_varpi(p, y, y_dot, y_ddot, u, u_dot).unwrap(), 0.0, epsilon = 1e-12);
        assert!(estimate_varpi(NmpParams { a: 0.0, ..p }, y, y_dot, y_ddot, u, u_dot).is_err());
    }
}

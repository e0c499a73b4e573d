//! Controllers: intelligent PID over an ultra-local model, classic PID,
//! restricted-model i-controllers and GPI control of non-minimum-phase plants.
//!
//! Tracking errors are `e = y* − y` throughout.

pub mod broida;
pub mod estimation;
pub mod gpi;
pub mod restricted;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::algdiff::WeightedWindow;
use crate::error::{config, domain, Result};
use crate::traject::ReferenceTrajectory;
use estimation::{Alignment, EstimatorConfig, OutputBank, Smoother};

/// One closed-loop control law, stepped once per sample.
pub trait Controller: Send {
    /// Control for the sample at `t`, given the measured outputs and the
    /// input applied over the previous period. `None` while warming up.
    fn step(&mut self, t: f64, y: &[f64], u_prev: &[f64]) -> Result<Option<Vec<f64>>>;

    /// Reports which channels the actuator limited.
    fn update_saturation(&mut self, saturated: &[bool]);

    /// Named internal signals for the trace, with stable names across steps.
    fn telemetry(&self) -> Vec<(String, f64)>;
}

/// `y_j^(ν_j) = F_j + Σ_i α_{j,i} u_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct UltraLocalModel {
    nu: Vec<usize>,
    alpha: DMatrix<f64>,
    alpha_inv: DMatrix<f64>,
}

impl UltraLocalModel {
    pub fn siso(nu: usize, alpha: f64) -> Result<Self> {
        Self::new(vec![nu], DMatrix::from_element(1, 1, alpha))
    }

    /// Square MIMO model; `alpha` must be invertible.
    pub fn new(nu: Vec<usize>, alpha: DMatrix<f64>) -> Result<Self> {
        if nu.iter().any(|n| !(1..=2).contains(n)) {
            return config("derivation order must be 1 or 2");
        }
        if alpha.nrows() != nu.len() || !alpha.is_square() {
            return config(format!("alpha is {}x{}, expected {}x{}", alpha.nrows(), alpha.ncols(), nu.len(), nu.len()));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return config("alpha entries must be finite");
        }
        let alpha_inv = alpha
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| crate::Error::Config("alpha matrix is singular".into()))?;
        Ok(Self { nu, alpha, alpha_inv })
    }

    pub fn nu(&self) -> &[usize] {
        &self.nu
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn channels(&self) -> usize {
        self.nu.len()
    }

    /// `F_j = [y_j^(ν_j)]_e − Σ_i α_{j,i}·u_i(κ−1)`.
    pub fn estimate_f(&self, y_deriv: &[f64], u_prev: &[f64]) -> Vec<f64> {
        (0..self.channels())
            .map(|j| y_deriv[j] - (0..u_prev.len()).map(|i| self.alpha[(j, i)] * u_prev[i]).sum::<f64>())
            .collect()
    }

    /// Solves `α u = v`.
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        (0..self.channels()).map(|i| (0..v.len()).map(|j| self.alpha_inv[(i, j)] * v[j]).sum()).collect()
    }
}

/// Gains of one PID channel. With `ki_chain` the integral action is
/// `Σ_λ K_{I_λ} ∫…∫ e` (λ-fold), replacing `ki`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub ki_chain: Option<Vec<f64>>,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self { kp, ki, kd, ki_chain: None }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.kp, self.ki, self.kd].iter().all(|g| g.is_finite()) {
            return config("gains must be finite");
        }
        if let Some(chain) = &self.ki_chain {
            match chain.last() {
                None => return config("integral chain is empty"),
                Some(last) if *last == 0.0 => return config("last integral-chain gain must be nonzero"),
                _ => {}
            }
        }
        Ok(())
    }

    fn integral_gains(&self) -> Vec<f64> {
        self.ki_chain.clone().unwrap_or_else(|| vec![self.ki])
    }
}

/// Integral accumulators and anti-windup flag of one PID channel.
///
/// Each call to [`ControllerState::pid`] forms a tentative update of the
/// accumulators; it is kept by [`ControllerState::commit`] or discarded by
/// [`antiwindup_update`] when the actuator saturates.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub gains: PidGains,
    pub integrals: Vec<f64>,
    pub freeze: bool,
    pub last_error: Option<f64>,
    pending: Option<Vec<f64>>,
}

impl ControllerState {
    pub fn new(gains: PidGains) -> Result<Self> {
        gains.validate()?;
        let n = gains.integral_gains().len();
        Ok(Self { gains, integrals: vec![0.0; n], freeze: false, last_error: None, pending: None })
    }

    pub fn reset(&mut self) {
        self.integrals.iter_mut().for_each(|v| *v = 0.0);
        self.freeze = false;
        self.last_error = None;
        self.pending = None;
    }

    /// `K_P e + Σ K_I ∫e + K_D ė` with the integrals advanced by the rectangle
    /// rule. Without `e_dot`, `ė` falls back to the backward difference.
    pub fn pid(&mut self, e: f64, e_dot: Option<f64>, ts: f64) -> f64 {
        let mut next = self.integrals.clone();
        let mut lower = e;
        for v in next.iter_mut() {
            *v += lower * ts;
            lower = *v;
        }
        let e_dot = e_dot.unwrap_or_else(|| self.last_error.map_or(0.0, |prev| (e - prev) / ts));
        let integral: f64 = self.gains.integral_gains().iter().zip(&next).map(|(k, v)| k * v).sum();
        self.last_error = Some(e);
        let out = self.gains.kp * e + integral + self.gains.kd * e_dot;
        self.pending = Some(next);
        out
    }

    /// Keeps the tentative accumulator update.
    pub fn commit(&mut self) {
        if let Some(next) = self.pending.take() {
            self.integrals = next;
        }
    }
}

/// `freeze ← saturated`; a saturated step leaves every accumulator untouched.
pub fn antiwindup_update(cs: &mut ControllerState, saturated: bool) {
    cs.freeze = saturated;
    if saturated {
        cs.pending = None;
    } else {
        cs.commit();
    }
}

/// `u = α⁻¹(−F + y*^(ν) + PID(e))`, advancing each channel's integrals.
pub fn ipid_step(
    model: &UltraLocalModel,
    states: &mut [ControllerState],
    f: &[f64],
    y_ref_deriv: &[f64],
    e: &[f64],
    e_dot: &[Option<f64>],
    ts: f64,
) -> Vec<f64> {
    let v: Vec<f64> = (0..model.channels())
        .map(|j| {
            let e_dot = if model.nu[j] == 1 { Some(0.0) } else { e_dot[j] };
            -f[j] + y_ref_deriv[j] + states[j].pid(e[j], e_dot, ts)
        })
        .collect();
    model.solve(&v)
}

/// `u = K_P e + K_I ∫e + K_D ė`.
pub fn classic_pid_step(cs: &mut ControllerState, e: f64, e_dot: Option<f64>, ts: f64) -> f64 {
    cs.pid(e, e_dot, ts)
}

/// Settings shared by the feedback controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSettings {
    pub ts: f64,
    pub antiwindup: bool,
    pub estimator: EstimatorConfig,
}

fn reference_derivs(reference: &[ReferenceTrajectory], t: f64, order: &[usize]) -> Result<Vec<f64>> {
    reference.iter().zip(order).map(|(r, k)| r.eval(t, *k)).collect()
}

fn check_references(reference: &[ReferenceTrajectory], channels: usize) -> Result<()> {
    if reference.len() != channels {
        return config(format!("{} references given for {channels} controlled outputs", reference.len()));
    }
    reference.iter().try_for_each(|r| r.validate())
}

/// Intelligent P/PI/PID controller with one estimator bank per output.
pub struct IpidController {
    model: UltraLocalModel,
    states: Vec<ControllerState>,
    reference: Vec<ReferenceTrajectory>,
    banks: Vec<OutputBank>,
    /// `[j][i]`: input `i` smoothed by output `j`'s kernel (matched alignment only).
    held: Vec<Vec<WeightedWindow>>,
    settings: LoopSettings,
    f: Vec<f64>,
    e: Vec<f64>,
    y_hat: Vec<f64>,
}

impl IpidController {
    pub fn new(
        model: UltraLocalModel,
        gains: Vec<PidGains>,
        reference: Vec<ReferenceTrajectory>,
        settings: LoopSettings,
        u_init: &[f64],
    ) -> Result<Self> {
        let p = model.channels();
        if gains.len() != p {
            return config(format!("{} gain sets given for {p} channels", gains.len()));
        }
        check_references(&reference, p)?;
        if u_init.len() != p {
            return config("initial input dimension differs from the model");
        }
        let max_nu = *model.nu().iter().max().unwrap_or(&1);
        settings.estimator.validate(settings.ts, max_nu)?;
        for (g, nu) in gains.iter().zip(model.nu()) {
            if *nu == 1 && g.kd != 0.0 {
                return config("a first-order local model takes no derivative gain");
            }
        }
        let states = gains.into_iter().map(ControllerState::new).collect::<Result<Vec<_>>>()?;
        let banks = model
            .nu()
            .iter()
            .zip(&states)
            .map(|(nu, st)| OutputBank::new(&settings.estimator, *nu, settings.ts, st.gains.kd != 0.0))
            .collect::<Result<Vec<_>>>()?;
        let held = if settings.estimator.alignment == Alignment::Matched {
            model
                .nu()
                .iter()
                .map(|nu| {
                    let sm = Smoother::for_order(&settings.estimator, *nu, settings.ts)?;
                    Ok(u_init.iter().map(|u0| sm.held(*u0)).collect())
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            states,
            reference,
            banks,
            held,
            settings,
            f: vec![0.0; p],
            e: vec![0.0; p],
            y_hat: vec![0.0; p],
            model,
        })
    }

    pub fn model(&self) -> &UltraLocalModel {
        &self.model
    }

    pub fn states(&self) -> &[ControllerState] {
        &self.states
    }

    /// Latest `[F]_e`.
    pub fn f_estimate(&self) -> &[f64] {
        &self.f
    }
}

impl Controller for IpidController {
    fn step(&mut self, t: f64, y: &[f64], u_prev: &[f64]) -> Result<Option<Vec<f64>>> {
        let p = self.model.channels();
        if y.len() < p || u_prev.len() != p {
            return domain("measurement or input dimension differs from the controller");
        }
        for (bank, yj) in self.banks.iter_mut().zip(y) {
            bank.push(*yj);
        }
        for row in &mut self.held {
            for (w, u) in row.iter_mut().zip(u_prev) {
                w.push(*u);
            }
        }
        if !self.banks.iter().all(OutputBank::is_ready) {
            return Ok(None);
        }
        let derivs = self.banks.iter().map(OutputBank::derivative).collect::<Result<Vec<_>>>()?;
        self.f = if self.held.is_empty() {
            self.model.estimate_f(&derivs, u_prev)
        } else {
            let alpha = self.model.alpha();
            (0..p)
                .map(|j| {
                    let smoothed: f64 = (0..p).map(|i| alpha[(j, i)] * self.held[j][i].value().unwrap_or(0.0)).sum();
                    derivs[j] - smoothed
                })
                .collect()
        };
        let refs = reference_derivs(&self.reference, t, &vec![0; p])?;
        let ref_nu = reference_derivs(&self.reference, t, self.model.nu())?;
        let mut e_dot = Vec::with_capacity(p);
        for j in 0..p {
            self.y_hat[j] = self.banks[j].level(y[j])?;
            self.e[j] = refs[j] - self.y_hat[j];
            let rate = self.banks[j].rate()?;
            e_dot.push(match rate {
                Some(r) => Some(self.reference[j].eval(t, 1)? - r),
                None => None,
            });
        }
        let u = ipid_step(&self.model, &mut self.states, &self.f, &ref_nu, &self.e, &e_dot, self.settings.ts);
        Ok(Some(u))
    }

    fn update_saturation(&mut self, saturated: &[bool]) {
        for (st, sat) in self.states.iter_mut().zip(saturated) {
            if self.settings.antiwindup {
                antiwindup_update(st, *sat);
            } else {
                st.commit();
            }
        }
    }

    fn telemetry(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for j in 0..self.model.channels() {
            let s = j + 1;
            out.push((format!("f_est_{s}"), self.f[j]));
            out.push((format!("e_{s}"), self.e[j]));
            out.push((format!("y_hat_{s}"), self.y_hat[j]));
            out.push((format!("freeze_{s}"), if self.states[j].freeze { 1.0 } else { 0.0 }));
        }
        out
    }
}

/// PID on the tracking error, optionally around a feedforward input.
pub struct ClassicPidController {
    states: Vec<ControllerState>,
    reference: Vec<ReferenceTrajectory>,
    banks: Vec<OutputBank>,
    feedforward: Option<Box<dyn Fn(f64) -> Vec<f64> + Send>>,
    settings: LoopSettings,
    e: Vec<f64>,
    y_hat: Vec<f64>,
}

impl ClassicPidController {
    pub fn new(gains: Vec<PidGains>, reference: Vec<ReferenceTrajectory>, settings: LoopSettings) -> Result<Self> {
        let p = gains.len();
        check_references(&reference, p)?;
        settings.estimator.validate(settings.ts, 1)?;
        let states = gains.into_iter().map(ControllerState::new).collect::<Result<Vec<_>>>()?;
        let banks =
            (0..p).map(|_| OutputBank::new(&settings.estimator, 1, settings.ts, true)).collect::<Result<Vec<_>>>()?;
        Ok(Self { states, reference, banks, feedforward: None, settings, e: vec![0.0; p], y_hat: vec![0.0; p] })
    }

    /// Adds `u*(t)` to the PID output.
    pub fn with_feedforward(mut self, ff: impl Fn(f64) -> Vec<f64> + Send + 'static) -> Self {
        self.feedforward = Some(Box::new(ff));
        self
    }
}

impl Controller for ClassicPidController {
    fn step(&mut self, t: f64, y: &[f64], _u_prev: &[f64]) -> Result<Option<Vec<f64>>> {
        let p = self.states.len();
        if y.len() < p {
            return domain("measurement dimension differs from the controller");
        }
        for (bank, yj) in self.banks.iter_mut().zip(y) {
            bank.push(*yj);
        }
        if !self.banks.iter().all(OutputBank::is_ready) {
            return Ok(None);
        }
        let ff = self.feedforward.as_ref().map(|f| f(t));
        let mut u = Vec::with_capacity(p);
        for j in 0..p {
            self.y_hat[j] = self.banks[j].level(y[j])?;
            self.e[j] = self.reference[j].eval(t, 0)? - self.y_hat[j];
            let e_dot = self.banks[j].rate()?.map(|r| self.reference[j].eval(t, 1).map(|d| d - r)).transpose()?;
            let mut v = classic_pid_step(&mut self.states[j], self.e[j], e_dot, self.settings.ts);
            if let Some(ff) = &ff {
                v += ff[j];
            }
            u.push(v);
        }
        Ok(Some(u))
    }

    fn update_saturation(&mut self, saturated: &[bool]) {
        for (st, sat) in self.states.iter_mut().zip(saturated) {
            if self.settings.antiwindup {
                antiwindup_update(st, *sat);
            } else {
                st.commit();
            }
        }
    }

    fn telemetry(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for j in 0..self.states.len() {
            out.push((format!("e_{}", j + 1), self.e[j]));
            out.push((format!("y_hat_{}", j + 1), self.y_hat[j]));
            out.push((format!("freeze_{}", j + 1), if self.states[j].freeze { 1.0 } else { 0.0 }));
        }
        out
    }
}

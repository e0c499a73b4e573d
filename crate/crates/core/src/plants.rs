//! Benchmark plants as continuous-time state-space models, advanced under
//! zero-order-hold inputs with a fixed-step RK4 integrator.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};

/// Right-hand side and output map of a plant.
///
/// `u_rate` is the backward difference of the held input over the last
/// sample; only plants whose dynamics involve `u̇` read it.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn rhs(&self, x: &[f64], u: &[f64], u_rate: &[f64], t: f64, dx: &mut [f64]);
    fn output(&self, x: &[f64], u: &[f64], u_rate: &[f64], y: &mut [f64]);
}

/// Per-channel amplitude and rate bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorConstraints {
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub du_min: Vec<f64>,
    pub du_max: Vec<f64>,
}

impl ActuatorConstraints {
    pub fn unconstrained(m: usize) -> Self {
        Self {
            u_min: vec![f64::NEG_INFINITY; m],
            u_max: vec![f64::INFINITY; m],
            du_min: vec![f64::NEG_INFINITY; m],
            du_max: vec![f64::INFINITY; m],
        }
    }

    pub fn channels(&self) -> usize {
        self.u_min.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.u_min.len();
        if self.u_max.len() != m || self.du_min.len() != m || self.du_max.len() != m {
            return config("actuator bound vectors differ in length");
        }
        for i in 0..m {
            if self.u_min[i].is_nan() || self.u_max[i].is_nan() || self.u_min[i] > self.u_max[i] {
                return config(format!("channel {i}: u_min must not exceed u_max"));
            }
            if self.du_min[i].is_nan() || self.du_max[i].is_nan() || self.du_min[i] > self.du_max[i] {
                return config(format!("channel {i}: du_min must not exceed du_max"));
            }
        }
        Ok(())
    }
}

/// Rate-limits against the previous applied input, then clamps to the
/// amplitude bounds. Returns the applied input and a saturation flag per channel.
pub fn clamp(u_desired: &[f64], u_prev: &[f64], constraints: &ActuatorConstraints, ts: f64) -> (Vec<f64>, Vec<bool>) {
    let mut applied = Vec::with_capacity(u_desired.len());
    let mut flags = Vec::with_capacity(u_desired.len());
    for (i, &ud) in u_desired.iter().enumerate() {
        let lo = u_prev[i] + constraints.du_min[i] * ts;
        let hi = u_prev[i] + constraints.du_max[i] * ts;
        let mut u = ud;
        if u > hi {
            u = hi;
        } else if u < lo {
            u = lo;
        }
        u = u.clamp(constraints.u_min[i], constraints.u_max[i]);
        flags.push(u != ud);
        applied.push(u);
    }
    (applied, flags)
}

/// Actuator faults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FaultSpec {
    #[default]
    None,
    /// From `t_onset` on, every channel delivers `factor · u`.
    GainLoss { factor: f64, t_onset: f64 },
}

impl FaultSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FaultSpec::None => Ok(()),
            FaultSpec::GainLoss { factor, t_onset } => {
                if !(factor > 0.0 && factor <= 1.0) {
                    return config(format!("gain-loss factor must lie in (0, 1], got {factor}"));
                }
                if !(t_onset >= 0.0 && t_onset.is_finite()) {
                    return config(format!("fault onset must be nonnegative, got {t_onset}"));
                }
                Ok(())
            }
        }
    }

    fn gain(&self, t: f64) -> f64 {
        match *self {
            FaultSpec::GainLoss { factor, t_onset } if t >= t_onset - 1e-9 => factor,
            _ => 1.0,
        }
    }
}

/// Transfer function with ascending coefficients in `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl TransferFunction {
    /// Builds the function from its zeros, poles and a leading gain.
    pub fn from_roots(gain: f64, zeros: &[f64], poles: &[f64]) -> Self {
        let expand = |roots: &[f64]| {
            roots.iter().fold(vec![1.0], |p, r| {
                let mut q = vec![0.0; p.len() + 1];
                for (i, c) in p.iter().enumerate() {
                    q[i] -= r * c;
                    q[i + 1] += c;
                }
                q
            })
        };
        let num = expand(zeros).into_iter().map(|c| gain * c).collect();
        Self { num, den: expand(poles) }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let p = |c: &[f64]| c.iter().rev().fold(0.0, |acc, v| acc * s + v);
        p(&self.num) / p(&self.den)
    }

    /// Controllable canonical realization `(A, B, C, D)`.
    pub fn realize(&self) -> Result<StateSpace> {
        let trim = |c: &[f64]| {
            let mut v = c.to_vec();
            while v.len() > 1 && *v.last().unwrap() == 0.0 {
                v.pop();
            }
            v
        };
        let den = trim(&self.den);
        let num = trim(&self.num);
        let n = den.len() - 1;
        if n == 0 {
            return domain("transfer function has no poles");
        }
        if num.len() > den.len() {
            return domain("transfer function is improper");
        }
        let lead = den[n];
        let a_c: Vec<f64> = den.iter().map(|c| c / lead).collect();
        let mut b_c: Vec<f64> = num.iter().map(|c| c / lead).collect();
        b_c.resize(n + 1, 0.0);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            a[(n - 1, j)] = -a_c[j];
        }
        let mut b = DMatrix::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        let d = b_c[n];
        let c = DMatrix::from_fn(1, n, |_, j| b_c[j] - d * a_c[j]);
        Ok(StateSpace { a, b, c, d: DMatrix::from_element(1, 1, d) })
    }
}

/// Linear time-invariant plant `ẋ = Ax + Bu`, `y = Cx + Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    /// Realizes a transfer matrix entrywise; absent entries are `None`.
    pub fn from_transfer_matrix(entries: &[Vec<Option<TransferFunction>>]) -> Result<Self> {
        let p = entries.len();
        let m = entries.first().map_or(0, |r| r.len());
        if p == 0 || m == 0 || entries.iter().any(|r| r.len() != m) {
            return domain("transfer matrix must be rectangular and nonempty");
        }
        let blocks: Vec<(usize, usize, StateSpace)> = entries
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, g)| (i, j, g)))
            .filter_map(|(i, j, g)| g.as_ref().map(|g| g.realize().map(|ss| (i, j, ss))))
            .collect::<Result<_>>()?;
        let n: usize = blocks.iter().map(|(_, _, ss)| ss.a.nrows()).sum();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, m);
        let mut c = DMatrix::zeros(p, n);
        let mut d = DMatrix::zeros(p, m);
        let mut off = 0;
        for (i, j, ss) in &blocks {
            let k = ss.a.nrows();
            a.view_mut((off, off), (k, k)).copy_from(&ss.a);
            b.view_mut((off, *j), (k, 1)).copy_from(&ss.b);
            c.view_mut((*i, off), (1, k)).copy_from(&ss.c);
            d[(*i, *j)] += ss.d[(0, 0)];
            off += k;
        }
        Ok(Self { a, b, c, d })
    }
}

impl Dynamics for StateSpace {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    fn rhs(&self, x: &[f64], u: &[f64], _: &[f64], _: f64, dx: &mut [f64]) {
        let xv = DVector::from_column_slice(x);
        let uv = DVector::from_column_slice(u);
        let r = &self.a * xv + &self.b * uv;
        dx.copy_from_slice(r.as_slice());
    }
    fn output(&self, x: &[f64], u: &[f64], _: &[f64], y: &mut [f64]) {
        let xv = DVector::from_column_slice(x);
        let uv = DVector::from_column_slice(u);
        let r = &self.c * xv + &self.d * uv;
        y.copy_from_slice(r.as_slice());
    }
}

/// `ẏ = y + u³`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CubicUnstable;

impl Dynamics for CubicUnstable {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], u: &[f64], _: &[f64], _: f64, dx: &mut [f64]) {
        dx[0] = x[0] + u[0].powi(3);
    }
    fn output(&self, x: &[f64], _: &[f64], _: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

/// Ball on a beam, `ÿ = B·y·u̇² − B·G·sin u` with the beam angle `u` as input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallBeam {
    pub b: f64,
    pub g: f64,
}

impl Default for BallBeam {
    fn default() -> Self {
        Self { b: 0.7143, g: 9.81 }
    }
}

impl Dynamics for BallBeam {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], u: &[f64], u_rate: &[f64], _: f64, dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = self.b * x[0] * u_rate[0] * u_rate[0] - self.b * self.g * u[0].sin();
    }
    fn output(&self, x: &[f64], _: &[f64], _: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

/// Three interconnected tanks; levels in metres, inflows in m³/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThreeTanks {
    /// Tank cross-section.
    pub s: f64,
    /// Connecting pipe cross-section.
    pub sp: f64,
    pub g: f64,
    pub mu: [f64; 3],
}

impl Default for ThreeTanks {
    fn default() -> Self {
        Self { s: 0.0154, sp: 5e-5, g: 9.81, mu: [0.5, 0.675, 0.5] }
    }
}

fn signed_sqrt(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum() * v.abs().sqrt()
    }
}

impl ThreeTanks {
    pub fn outflow_coefficients(&self) -> [f64; 3] {
        let k = self.sp * (2.0 * self.g).sqrt() / self.s;
        [k * self.mu[0], k * self.mu[1], k * self.mu[2]]
    }
}

impl Dynamics for ThreeTanks {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        3
    }
    fn rhs(&self, x: &[f64], u: &[f64], _: &[f64], _: f64, dx: &mut [f64]) {
        let [c1, c2, c3] = self.outflow_coefficients();
        let q13 = c1 * signed_sqrt(x[0] - x[2]);
        let q32 = c3 * signed_sqrt(x[2] - x[1]);
        let q20 = c2 * signed_sqrt(x[1]);
        dx[0] = -q13 + u[0] / self.s;
        dx[1] = q32 - q20 + u[1] / self.s;
        dx[2] = q13 - q32;
    }
    fn output(&self, x: &[f64], _: &[f64], _: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&x[..3]);
    }
}

/// Mass on a hardening spring with viscous damping and Tustin friction:
/// `m·ÿ = −(k₁y + k₃y³) + F(ẏ) − d·ẏ + u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Spring {
    pub m: f64,
    pub k1: f64,
    pub k3: f64,
    pub d: f64,
    /// Coulomb level.
    pub fc: f64,
    /// Static (breakaway) level.
    pub fs: f64,
    /// Stribeck velocity.
    pub vs: f64,
}

impl Default for Spring {
    fn default() -> Self {
        Self { m: 0.5, k1: 3.0, k3: 10.0, d: 5.0, fc: 0.5, fs: 1.0, vs: 0.1 }
    }
}

impl Spring {
    pub fn friction(&self, v: f64) -> f64 {
        if v == 0.0 {
            return 0.0;
        }
        -v.signum() * (self.fc + (self.fs - self.fc) * (-v.abs() / self.vs).exp())
    }
}

impl Dynamics for Spring {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], u: &[f64], _: &[f64], _: f64, dx: &mut [f64]) {
        let (y, v) = (x[0], x[1]);
        dx[0] = v;
        dx[1] = (-(self.k1 * y + self.k3 * y.powi(3)) + self.friction(v) - self.d * v + u[0]) / self.m;
    }
    fn output(&self, x: &[f64], _: &[f64], _: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

/// Unmodelled term entering the second state equation of [`NonminPhase`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Perturbation {
    #[default]
    None,
    Constant {
        value: f64,
    },
    /// `ϖ = gain · ẏ`.
    OutputRate {
        gain: f64,
    },
}

/// `(s − a)/(s² − (b+c)s + bc)` in the realization
/// `ẋ₁ = x₂`, `ẋ₂ = (b+c)x₂ − bc·x₁ + u + ϖ`, `y = x₂ − a·x₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonminPhase {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub perturbation: Perturbation,
}

impl Default for NonminPhase {
    fn default() -> Self {
        Self { a: 1.0, b: -1.0, c: -0.5, perturbation: Perturbation::None }
    }
}

impl NonminPhase {
    /// `(ẋ₂, ϖ)`; for the rate-dependent term `ẏ = ẋ₂ − a·x₂` is solved for algebraically.
    fn accel(&self, x: &[f64], u: f64) -> Result<(f64, f64), ()> {
        let nominal = (self.b + self.c) * x[1] - self.b * self.c * x[0] + u;
        match self.perturbation {
            Perturbation::None => Ok((nominal, 0.0)),
            Perturbation::Constant { value } => Ok((nominal + value, value)),
            Perturbation::OutputRate { gain } => {
                let denom = 1.0 - gain;
                if denom == 0.0 {
                    return Err(());
                }
                let ydot = (nominal - self.a * x[1]) / denom;
                let w = gain * ydot;
                Ok((nominal + w, w))
            }
        }
    }

    /// Current value of the unmodelled term.
    pub fn varpi(&self, x: &[f64], u: f64) -> f64 {
        self.accel(x, u).map_or(f64::NAN, |(_, w)| w)
    }
}

impl Dynamics for NonminPhase {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], u: &[f64], _: &[f64], _: f64, dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = self.accel(x, u[0]).map_or(f64::NAN, |(a, _)| a);
    }
    fn output(&self, x: &[f64], _: &[f64], _: &[f64], y: &mut [f64]) {
        y[0] = x[1] - self.a * x[0];
    }
}

/// Serializable plant description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlantSpec {
    /// `(s+2)²/(s+1)³`.
    StableSiso,
    /// Triple pole moved to −1.5.
    StableSisoAged,
    LargeSpectrum,
    #[serde(rename = "mimo-2x2")]
    Mimo2x2,
    CubicUnstable,
    BallBeam(BallBeam),
    ThreeTanks(ThreeTanks),
    Spring(Spring),
    NonminPhase(NonminPhase),
    Transfer(TransferFunction),
}

impl PlantSpec {
    /// Catalog entry by label, with default parameters.
    pub fn from_label(label: &str) -> Result<Self> {
        Ok(match label {
            "stable-siso" | "stable-siso-fault" => PlantSpec::StableSiso,
            "stable-siso-aged" => PlantSpec::StableSisoAged,
            "large-spectrum" => PlantSpec::LargeSpectrum,
            "mimo-2x2" => PlantSpec::Mimo2x2,
            "cubic-unstable" => PlantSpec::CubicUnstable,
            "ball-beam" => PlantSpec::BallBeam(BallBeam::default()),
            "three-tanks" => PlantSpec::ThreeTanks(ThreeTanks::default()),
            "spring" => PlantSpec::Spring(Spring::default()),
            "nonmin-phase" => PlantSpec::NonminPhase(NonminPhase::default()),
            _ => return domain(format!("unknown plant '{label}'")),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            PlantSpec::StableSiso => "stable-siso",
            PlantSpec::StableSisoAged => "stable-siso-aged",
            PlantSpec::LargeSpectrum => "large-spectrum",
            PlantSpec::Mimo2x2 => "mimo-2x2",
            PlantSpec::CubicUnstable => "cubic-unstable",
            PlantSpec::BallBeam(_) => "ball-beam",
            PlantSpec::ThreeTanks(_) => "three-tanks",
            PlantSpec::Spring(_) => "spring",
            PlantSpec::NonminPhase(_) => "nonmin-phase",
            PlantSpec::Transfer(_) => "transfer",
        }
    }

    pub fn dynamics(&self) -> Result<Arc<dyn Dynamics>> {
        let tf = TransferFunction::from_roots;
        Ok(match self {
            PlantSpec::StableSiso => Arc::new(tf(1.0, &[-2.0, -2.0], &[-1.0, -1.0, -1.0]).realize()?),
            PlantSpec::StableSisoAged => Arc::new(tf(1.0, &[-2.0, -2.0], &[-1.5, -1.5, -1.5]).realize()?),
            PlantSpec::LargeSpectrum => Arc::new(tf(1.0, &[0.0; 5], &[-1.0, -0.1, -0.01, 0.05, 0.5, 5.0]).realize()?),
            PlantSpec::Mimo2x2 => Arc::new(StateSpace::from_transfer_matrix(&[
                vec![Some(tf(1.0, &[0.0; 3], &[-0.01, -0.1, 1.0, 0.0])), None],
                vec![
                    Some(tf(1.0, &[-1.0], &[-0.003, 0.03, -0.3, -3.0])),
                    Some(tf(1.0, &[0.0; 2], &[-0.004, -0.04, 0.4, -4.0])),
                ],
            ])?),
            PlantSpec::CubicUnstable => Arc::new(CubicUnstable),
            PlantSpec::BallBeam(p) => {
                if !(p.b.is_finite() && p.g.is_finite()) {
                    return config("ball-beam constants must be finite");
                }
                Arc::new(*p)
            }
            PlantSpec::ThreeTanks(p) => {
                if !(p.s > 0.0 && p.sp > 0.0 && p.g > 0.0) || p.mu.iter().any(|m| !(*m >= 0.0)) {
                    return config("three-tank sections and gravity must be positive, coefficients nonnegative");
                }
                Arc::new(*p)
            }
            PlantSpec::Spring(p) => {
                if !(p.m > 0.0 && p.vs > 0.0) {
                    return config("spring mass and Stribeck velocity must be positive");
                }
                Arc::new(*p)
            }
            PlantSpec::NonminPhase(p) => {
                if let Perturbation::OutputRate { gain } = p.perturbation {
                    if gain == 1.0 {
                        return config("output-rate perturbation gain 1 makes the plant singular");
                    }
                }
                Arc::new(*p)
            }
            PlantSpec::Transfer(t) => Arc::new(t.realize()?),
        })
    }
}

/// A plant ready for simulation. Immutable once built.
#[derive(Debug, Clone)]
pub struct PlantModel {
    pub label: String,
    pub dynamics: Arc<dyn Dynamics>,
    pub constraints: ActuatorConstraints,
    pub fault: FaultSpec,
    pub x0: Vec<f64>,
    /// RK4 substeps per sampling period, at least 4.
    pub substeps: usize,
}

impl PlantModel {
    pub fn new(label: impl Into<String>, dynamics: Arc<dyn Dynamics>) -> Self {
        let m = dynamics.input_dim();
        let n = dynamics.state_dim();
        Self {
            label: label.into(),
            dynamics,
            constraints: ActuatorConstraints::unconstrained(m),
            fault: FaultSpec::None,
            x0: vec![0.0; n],
            substeps: 4,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.dynamics.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.constraints.validate()?;
        self.fault.validate()?;
        if self.constraints.channels() != self.input_dim() {
            return config(format!(
                "{} actuator bounds given for {} inputs",
                self.constraints.channels(),
                self.input_dim()
            ));
        }
        if self.x0.len() != self.state_dim() {
            return config(format!("initial state has {} entries, plant has {}", self.x0.len(), self.state_dim()));
        }
        if self.substeps < 4 {
            return config("at least 4 RK4 substeps are required");
        }
        Ok(())
    }

    /// Fresh simulation state at `t = 0` with the given input held before start.
    pub fn initial_state(&self, u_init: &[f64]) -> PlantState {
        PlantState { x: self.x0.clone(), t: 0.0, u_prev: u_init.to_vec() }
    }

    /// Measured output for the given state and held input.
    pub fn output(&self, state: &PlantState, u: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.output_dim()];
        let gain = self.fault.gain(state.t);
        let ue: Vec<f64> = u.iter().map(|v| gain * v).collect();
        let rate = vec![0.0; u.len()];
        self.dynamics.output(&state.x, &ue, &rate, &mut y);
        y
    }
}

/// Build a catalog plant with default parameters.
pub fn build_plant(label: &str) -> Result<PlantModel> {
    let spec = PlantSpec::from_label(label)?;
    let mut plant = PlantModel::new(label, spec.dynamics()?);
    if label == "stable-siso-fault" {
        plant.fault = FaultSpec::GainLoss { factor: 0.5, t_onset: 10.0 };
    }
    Ok(plant)
}

/// Simulation state owned by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: Vec<f64>,
    pub t: f64,
    /// Input applied during the previous sampling period.
    pub u_prev: Vec<f64>,
}

/// Advances the plant by `ts` under the held (already clamped) input.
pub fn simulate_step(plant: &PlantModel, state: &mut PlantState, u_held: &[f64], ts: f64) -> Result<()> {
    if !(ts > 0.0 && ts.is_finite()) {
        return domain(format!("sampling period must be positive, got {ts}"));
    }
    if u_held.len() != plant.input_dim() {
        return domain(format!("input has {} channels, plant expects {}", u_held.len(), plant.input_dim()));
    }
    let dynamics = plant.dynamics.as_ref();
    let gain = plant.fault.gain(state.t);
    let u: Vec<f64> = u_held.iter().map(|v| gain * v).collect();
    let rate: Vec<f64> = u_held.iter().zip(&state.u_prev).map(|(a, b)| gain * (a - b) / ts).collect();
    let n = state.x.len();
    let subs = plant.substeps.max(4);
    let h = ts / subs as f64;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let t0 = state.t;
    let x = &mut state.x;
    for s in 0..subs {
        let t = t0 + s as f64 * h;
        dynamics.rhs(x, &u, &rate, t, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        dynamics.rhs(&tmp, &u, &rate, t + 0.5 * h, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        dynamics.rhs(&tmp, &u, &rate, t + 0.5 * h, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        dynamics.rhs(&tmp, &u, &rate, t + h, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { time: t + h });
        }
    }
    state.t = t0 + ts;
    state.u_prev = u_held.to_vec();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const TS: f64 = 0.01;

    #[derive(Debug)]
    struct Decay;
    impl Dynamics for Decay {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn rhs(&self, x: &[f64], _: &[f64], _: &[f64], _: f64, dx: &mut [f64]) {
            dx[0] = -x[0];
        }
        fn output(&self, x: &[f64], _: &[f64], _: &[f64], y: &mut [f64]) {
            y[0] = x[0];
        }
    }

    fn run(plant: &PlantModel, u: &[f64], steps: usize) -> PlantState {
        let mut st = plant.initial_state(&vec![0.0; plant.input_dim()]);
        for _ in 0..steps {
            simulate_step(plant, &mut st, u, TS).unwrap();
        }
        st
    }

    #[test]
    fn exponential_decay() {
        let mut p = PlantModel::new("decay", Arc::new(Decay));
        p.x0 = vec![1.0];
        let st = run(&p, &[0.0], 100);
        assert!((st.x[0] - (-1f64).exp()).abs() < 1e-8);
        assert_relative_eq!(st.t, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stable_siso_dc_gain() {
        let p = build_plant("stable-siso").unwrap();
        let st = run(&p, &[1.0], 4000);
        assert!((p.output(&st, &[1.0])[0] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn realization_matches_transfer_function() {
        let g = TransferFunction::from_roots(2.0, &[-3.0], &[-1.0, -4.0]);
        let ss = g.realize().unwrap();
        // DC gain: −C A⁻¹ B + D
        let dc = (&ss.d - &ss.c * ss.a.clone().try_inverse().unwrap() * &ss.b)[(0, 0)];
        assert_relative_eq!(dc, g.eval(0.0), epsilon = 1e-12);
        assert_relative_eq!(g.eval(0.0), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn biproper_realization_keeps_feedthrough() {
        let g = TransferFunction { num: vec![1.0, 2.0], den: vec![3.0, 1.0] };
        let ss = g.realize().unwrap();
        assert_relative_eq!(ss.d[(0, 0)], 2.0);
        assert_relative_eq!(ss.c[(0, 0)], 1.0 - 6.0);
    }

    #[test]
    fn improper_transfer_is_rejected() {
        let g = TransferFunction { num: vec![0.0, 0.0, 1.0], den: vec![1.0, 1.0] };
        assert!(g.realize().is_err());
    }

    #[test]
    fn mimo_structure() {
        let p = build_plant("mimo-2x2").unwrap();
        assert_eq!((p.input_dim(), p.output_dim(), p.state_dim()), (2, 2, 12));
        // u2 never reaches y1
        let st = run(&p, &[0.0, 1.0], 100);
        let y = p.output(&st, &[0.0, 1.0]);
        assert_eq!(y[0], 0.0);
        assert!(y[1] != 0.0);
    }

    #[test]
    fn cubic_open_loop_grows() {
        let mut p = build_plant("cubic-unstable").unwrap();
        p.x0 = vec![0.1];
        let st = run(&p, &[0.0], 100);
        assert!((st.x[0] - 0.1 * 1f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn nonminimum_phase_undershoot() {
        let p = build_plant("nonmin-phase").unwrap();
        let mut st = p.initial_state(&[0.0]);
        let mut min_y = 0.0f64;
        for _ in 0..3000 {
            simulate_step(&p, &mut st, &[1.0], TS).unwrap();
            min_y = min_y.min(p.output(&st, &[1.0])[0]);
        }
        assert!(min_y < -0.1);
        // (0 − 1)/(0.5) → −2: this variant's DC gain is negative
        assert!((p.output(&st, &[1.0])[0] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn nonminimum_phase_rate_perturbation_is_consistent() {
        let np = NonminPhase { a: 2.0, b: -1.0, c: 1.0, perturbation: Perturbation::OutputRate { gain: -0.1 } };
        let x = [0.3, -0.2];
        let u = 0.7;
        let mut dx = [0.0; 2];
        np.rhs(&x, &[u], &[0.0], 0.0, &mut dx);
        let ydot = dx[1] - np.a * x[1];
        assert_relative_eq!(np.varpi(&x, u), -0.1 * ydot, epsilon = 1e-12);
    }

    #[test]
    fn tank_volume_balances_the_drain() {
        let tanks = ThreeTanks::default();
        let mut p = PlantModel::new("three-tanks", Arc::new(tanks));
        p.x0 = vec![0.3, 0.1, 0.2];
        let mut st = p.initial_state(&[0.0, 0.0]);
        let c2 = tanks.outflow_coefficients()[1];
        for _ in 0..500 {
            let before = st.x.clone();
            simulate_step(&p, &mut st, &[0.0, 0.0], TS).unwrap();
            assert!(st.x[0] < before[0]);
            let drain = 0.5 * TS * c2 * (before[1].sqrt() + st.x[1].sqrt());
            let dv: f64 = st.x.iter().sum::<f64>() - before.iter().sum::<f64>();
            assert!((dv + drain).abs() * tanks.s < 1e-9);
        }
    }

    #[test]
    fn closed_tank_outlet_conserves_volume() {
        let tanks = ThreeTanks { mu: [0.5, 0.0, 0.5], ..ThreeTanks::default() };
        let mut p = PlantModel::new("three-tanks", Arc::new(tanks));
        p.x0 = vec![0.3, 0.1, 0.2];
        let mut st = p.initial_state(&[0.0, 0.0]);
        let v0: f64 = st.x.iter().sum::<f64>() * tanks.s;
        for _ in 0..500 {
            let before: f64 = st.x.iter().sum::<f64>() * tanks.s;
            simulate_step(&p, &mut st, &[0.0, 0.0], TS).unwrap();
            let after: f64 = st.x.iter().sum::<f64>() * tanks.s;
            assert!((after - before).abs() < 1e-9);
        }
        assert!(st.x[1] > 0.1);
        assert!((st.x.iter().sum::<f64>() * tanks.s - v0).abs() < 1e-9);
    }

    #[test]
    fn tanks_equal_levels_have_no_flow() {
        let t = ThreeTanks::default();
        let mut dx = [1.0; 3];
        t.rhs(&[0.2, 0.0, 0.2], &[0.0, 0.0], &[0.0, 0.0], 0.0, &mut dx);
        assert_eq!(dx[0], 0.0);
        t.rhs(&[0.0, 0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], 0.0, &mut dx);
        assert_eq!(dx, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn tustin_friction_shape() {
        let s = Spring::default();
        assert_eq!(s.friction(0.0), 0.0);
        assert_relative_eq!(s.friction(1e-9), -1.0, epsilon = 1e-6);
        assert_relative_eq!(s.friction(-10.0), 0.5, epsilon = 1e-6);
        assert!(s.friction(0.05) < 0.0 && s.friction(0.05) > -1.0);
    }

    #[test]
    fn ball_beam_rate_term_uses_backward_difference() {
        let mut p = build_plant("ball-beam").unwrap();
        p.x0 = vec![1.0, 0.0];
        let mut st = p.initial_state(&[0.0]);
        simulate_step(&p, &mut st, &[0.01], TS).unwrap();
        // u̇ = 1 rad/s during the step: ÿ ≈ B·1·1 − B·G·sin(0.01)
        let acc = 0.7143 * (1.0 - 9.81 * 0.01f64.sin());
        assert_relative_eq!(st.x[1], acc * TS, epsilon = 1e-6);
    }

    #[test]
    fn clamp_examples() {
        let free = ActuatorConstraints::unconstrained(1);
        assert_eq!(clamp(&[3.7], &[0.0], &free, TS), (vec![3.7], vec![false]));
        let mut c = ActuatorConstraints::unconstrained(1);
        c.u_min = vec![-2.0];
        c.u_max = vec![0.4];
        assert_eq!(clamp(&[1.0], &[0.0], &c, TS), (vec![0.4], vec![true]));
        let mut r = ActuatorConstraints::unconstrained(1);
        r.du_min = vec![-std::f64::consts::PI];
        r.du_max = vec![std::f64::consts::PI];
        let (u, f) = clamp(&[0.1], &[0.0], &r, TS);
        assert_relative_eq!(u[0], 0.0314159, epsilon = 1e-6);
        assert!(f[0]);
    }

    #[test]
    fn constraints_validation() {
        let mut c = ActuatorConstraints::unconstrained(1);
        c.u_min = vec![1.0];
        c.u_max = vec![0.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn gain_loss_is_inert_before_onset() {
        let clean = build_plant("stable-siso").unwrap();
        let mut faulty = clean.clone();
        faulty.fault = FaultSpec::GainLoss { factor: 0.5, t_onset: 0.5 };
        let mut a = clean.initial_state(&[0.0]);
        let mut b = faulty.initial_state(&[0.0]);
        for k in 0..100 {
            let u = [(k as f64 * 0.1).sin()];
            simulate_step(&clean, &mut a, &u, TS).unwrap();
            simulate_step(&faulty, &mut b, &u, TS).unwrap();
            if k < 50 {
                assert_eq!(a, b);
            }
        }
        assert!(a.x != b.x);
    }

    #[test]
    fn fault_validation() {
        assert!(FaultSpec::GainLoss { factor: 0.0, t_onset: 1.0 }.validate().is_err());
        assert!(FaultSpec::GainLoss { factor: 1.5, t_onset: 1.0 }.validate().is_err());
        assert!(FaultSpec::GainLoss { factor: 0.5, t_onset: -1.0 }.validate().is_err());
        assert!(FaultSpec::GainLoss { factor: 1.0, t_onset: 0.0 }.validate().is_ok());
    }

    #[test]
    fn divergence_reports_time() {
        let mut p = build_plant("cubic-unstable").unwrap();
        p.x0 = vec![1.0];
        let mut st = p.initial_state(&[0.0]);
        let mut err = None;
        for _ in 0..1000 {
            if let Err(e) = simulate_step(&p, &mut st, &[1e110], TS) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(Error::Diverged { time }) if time > 0.0 && time <= 0.01 + 1e-12));
    }

    #[test]
    fn unknown_label() {
        assert!(matches!(build_plant("pendulum"), Err(Error::Domain(_))));
    }

    #[test]
    fn plant_spec_toml_round_trip() {
        let spec: PlantSpec = toml::from_str("kind = \"ball-beam\"\nb = 0.5\n").unwrap();
        assert_eq!(spec, PlantSpec::BallBeam(BallBeam { b: 0.5, g: 9.81 }));
        let spec: PlantSpec =
            toml::from_str("kind = \"nonmin-phase\"\na = 2\nperturbation = { kind = \"output-rate\", gain = -0.1 }\n")
                .unwrap();
        assert!(matches!(spec, PlantSpec::NonminPhase(NonminPhase { a, .. }) if a == 2.0));
        let spec: PlantSpec = toml::from_str("kind = \"mimo-2x2\"").unwrap();
        assert_eq!(spec, PlantSpec::Mimo2x2);
    }

    proptest::proptest! {
        #[test]
        fn tank_levels_stay_nonnegative(
            x1 in 0.0f64..0.6, x2 in 0.0f64..0.6, x3 in 0.0f64..0.6,
            u1 in 0.0f64..1e-4, u2 in 0.0f64..1e-4,
        ) {
            let mut p = build_plant("three-tanks").unwrap();
            p.x0 = vec![x1, x2, x3];
            let mut st = p.initial_state(&[0.0, 0.0]);
            for _ in 0..2000 {
                simulate_step(&p, &mut st, &[u1, u2], 0.05).unwrap();
                proptest::prop_assert!(st.x.iter().all(|v| *v >= -1e-9));
            }
        }

        #[test]
        fn simulation_is_deterministic(seed in 0u64..1000) {
            let p = build_plant("spring").unwrap();
            let u: Vec<f64> = (0..50).map(|k| ((k as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
            let mut a = p.initial_state(&[0.0]);
            let mut b = p.initial_state(&[0.0]);
            for v in &u {
                simulate_step(&p, &mut a, &[*v], TS).unwrap();
                simulate_step(&p, &mut b, &[*v], TS).unwrap();
            }
            proptest::prop_assert_eq!(a, b);
        }
    }
}

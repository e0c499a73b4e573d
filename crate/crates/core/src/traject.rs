//! Reference trajectories with analytic derivatives, and the flat-output
//! nominal for the non-minimum-phase plant.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Highest derivative order available analytically.
pub const MAX_ORDER: usize = 3;

/// One smooth step inside a [`ReferenceTrajectory::Piecewise`] reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub to: f64,
    pub t_start: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceTrajectory {
    Constant {
        value: f64,
    },
    /// Minimum-jerk transition `from → to` over `[t_start, t_start + duration]`.
    Bezier {
        from: f64,
        to: f64,
        t_start: f64,
        duration: f64,
    },
    /// `offset + amplitude · sin(omega·t + phase)`.
    Sine {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Chain of transitions starting from `initial`; each begins where the previous one ended.
    Piecewise {
        initial: f64,
        transitions: Vec<Transition>,
    },
}

/// `6s⁵ − 15s⁴ + 10s³` and its derivatives in `s`.
fn min_jerk(s: f64, order: usize) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    let s2 = s * s;
    match order {
        0 => s2 * s * (10.0 - 15.0 * s + 6.0 * s2),
        1 => 30.0 * s2 * (1.0 - s) * (1.0 - s),
        2 => 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s),
        _ => 60.0 * (1.0 - 6.0 * s + 6.0 * s2),
    }
}

fn transition(from: f64, to: f64, t_start: f64, duration: f64, t: f64, order: usize) -> f64 {
    let s = (t - t_start) / duration;
    (to - from) * min_jerk(s, order) / duration.powi(order as i32)
}

impl ReferenceTrajectory {
    pub fn constant(value: f64) -> Self {
        ReferenceTrajectory::Constant { value }
    }

    pub fn bezier_transition(from: f64, to: f64, t_start: f64, duration: f64) -> Result<Self> {
        let traj = ReferenceTrajectory::Bezier { from, to, t_start, duration };
        traj.validate()?;
        Ok(traj)
    }

    pub fn sine(amplitude: f64, omega: f64) -> Self {
        ReferenceTrajectory::Sine { amplitude, omega, phase: 0.0, offset: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ReferenceTrajectory::Bezier { duration, .. } if !(*duration > 0.0) => {
                domain(format!("transition duration must be positive, got {duration}"))
            }
            ReferenceTrajectory::Piecewise { transitions, .. } => {
                let mut end = f64::NEG_INFINITY;
                for tr in transitions {
                    if !(tr.duration > 0.0) {
                        return domain(format!("transition duration must be positive, got {}", tr.duration));
                    }
                    if tr.t_start < end {
                        return domain("piecewise transitions overlap");
                    }
                    end = tr.t_start + tr.duration;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Value of the `order`-th derivative at `t`.
    pub fn eval(&self, t: f64, order: usize) -> Result<f64> {
        if order > MAX_ORDER {
            return domain(format!("derivative order {order} exceeds {MAX_ORDER}"));
        }
        Ok(match *self {
            ReferenceTrajectory::Constant { value } => {
                if order == 0 {
                    value
                } else {
                    0.0
                }
            }
            ReferenceTrajectory::Bezier { from, to, t_start, duration } => {
                let base = if order == 0 { from } else { 0.0 };
                base + transition(from, to, t_start, duration, t, order)
            }
            ReferenceTrajectory::Sine { amplitude, omega, phase, offset } => {
                let arg = omega * t + phase;
                let w = omega.powi(order as i32);
                let base = if order == 0 { offset } else { 0.0 };
                base + amplitude
                    * w
                    * match order % 4 {
                        0 => arg.sin(),
                        1 => arg.cos(),
                        2 => -arg.sin(),
                        _ => -arg.cos(),
                    }
            }
            ReferenceTrajectory::Piecewise { initial, ref transitions } => {
                let mut level = initial;
                let mut acc = if order == 0 { initial } else { 0.0 };
                for tr in transitions {
                    acc += transition(level, tr.to, tr.t_start, tr.duration, t, order);
                    level = tr.to;
                }
                acc
            }
        })
    }

    /// `[y*, ẏ*, ÿ*]` at `t`.
    pub fn eval3(&self, t: f64) -> [f64; 3] {
        [0, 1, 2].map(|k| self.eval(t, k).unwrap_or(f64::NAN))
    }

    /// Renders `t,y,yd,ydd` on `n` samples of period `ts`.
    pub fn write_csv<W: std::io::Write>(&self, ts: f64, n: usize, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,y,yd,ydd")?;
        for k in 0..n {
            let t = k as f64 * ts;
            let [y, yd, ydd] = self.eval3(t);
            writeln!(out, "{t},{y},{yd},{ydd}")?;
        }
        Ok(())
    }
}

/// Sampled flat-output nominal for `(s − a)/(s² − (b+c)s + bc)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatNominal {
    pub ts: f64,
    pub z: Vec<f64>,
    pub z_dot: Vec<f64>,
    pub z_ddot: Vec<f64>,
    /// `u* = z̈ − (b+c)ż + bc·z`.
    pub u: Vec<f64>,
    pub u_dot: Vec<f64>,
    /// `ż − a·z`, equal to the reference up to round-off.
    pub y: Vec<f64>,
}

impl FlatNominal {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Index of the sample at or before `t`, saturated to the horizon.
    pub fn index(&self, t: f64) -> usize {
        let k = (t / self.ts + 1e-9).floor().max(0.0) as usize;
        k.min(self.len().saturating_sub(1))
    }
}

/// Recovers the flat output `z*` from `ż* = a·z* + y*` by integrating
/// backwards from the steady-state value `z*(T) = −y*(T)/a`, which is stable
/// for a zero in the right half plane. `n` samples of period `ts` starting at 0.
pub fn flat_nominal_nonminphase(
    y_star: &ReferenceTrajectory,
    a: f64,
    b: f64,
    c: f64,
    ts: f64,
    n: usize,
) -> Result<FlatNominal> {
    if a == 0.0 {
        return domain("zero at the origin: the flat-output relation is degenerate");
    }
    if a < 0.0 {
        return domain("backwards integration requires a zero in the right half plane (a > 0)");
    }
    if !(ts > 0.0) || n == 0 {
        return domain("need a positive period and at least one sample");
    }
    let yr = |t: f64, k: usize| y_star.eval(t, k).unwrap_or(f64::NAN);
    let t_end = (n - 1) as f64 * ts;
    let mut z = vec![0.0; n];
    z[n - 1] = -yr(t_end, 0) / a;
    let f = |t: f64, z: f64| a * z + yr(t, 0);
    let h = -ts;
    for k in (1..n).rev() {
        let t = k as f64 * ts;
        let zk = z[k];
        let k1 = f(t, zk);
        let k2 = f(t + 0.5 * h, zk + 0.5 * h * k1);
        let k3 = f(t + 0.5 * h, zk + 0.5 * h * k2);
        let k4 = f(t + h, zk + h * k3);
        z[k - 1] = zk + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let (s, p) = (b + c, b * c);
    let mut out = FlatNominal {
        ts,
        z_dot: Vec::with_capacity(n),
        z_ddot: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        u_dot: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        z,
    };
    for k in 0..n {
        let t = k as f64 * ts;
        let z0 = out.z[k];
        let z1 = a * z0 + yr(t, 0);
        let z2 = a * z1 + yr(t, 1);
        let z3 = a * z2 + yr(t, 2);
        out.z_dot.push(z1);
        out.z_ddot.push(z2);
        out.u.push(z2 - s * z1 + p * z0);
        out.u_dot.push(z3 - s * z2 + p * z1);
        out.y.push(z1 - a * z0);
    }
    Ok(out)
}

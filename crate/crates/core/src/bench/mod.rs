//! Scenario runner: wires a plant, noise, a reference and a controller into a
//! sampled closed loop and collects traces and tracking metrics.

pub mod catalog;
pub mod config;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::control::broida;
use crate::control::gpi::{GpiController, GpiGains, NmpParams};
use crate::control::restricted::{pole_placement, KnownModel, RestrictedController};
use crate::control::{ClassicPidController, Controller, IpidController, LoopSettings, UltraLocalModel};
use crate::error::{config as config_err, domain, Error, Result};
use crate::plants::{clamp, simulate_step, PlantSpec};
use crate::signal::{tracking_metrics, trailing_window, NoiseSource, NoiseSpec, SampledSignal, TrackingMetrics};

pub use catalog::{catalog, resolve, CatalogEntry};
pub use config::{ControllerConfig, ScenarioConfig};

/// Pole used when a scenario asks for pole placement without naming one.
pub const DEFAULT_POLE: f64 = 3.0;

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub label: String,
    /// Named traces on the run's grid, in a stable order.
    pub traces: Vec<(String, SampledSignal)>,
    /// One entry per controlled output, on the true (noise-free) output.
    pub metrics: Vec<TrackingMetrics>,
    /// Hex SHA-256 of the resolved configuration.
    pub config_hash: String,
    pub config_toml: String,
    pub seed: u64,
}

impl RunArtifact {
    pub fn trace(&self, name: &str) -> Option<&SampledSignal> {
        self.traces.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// Root mean square of the per-output rms errors.
    pub fn overall_rms(&self) -> f64 {
        let n = self.metrics.len().max(1) as f64;
        (self.metrics.iter().map(|m| m.rms_error * m.rms_error).sum::<f64>() / n).sqrt()
    }

    /// Writes one CSV per trace plus `metrics.csv`, `metadata.txt` and `config.toml`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, sig) in &self.traces {
            let f = fs::File::create(dir.join(format!("{name}.csv")))?;
            sig.write_csv(name, std::io::BufWriter::new(f))?;
        }
        let mut m = fs::File::create(dir.join("metrics.csv"))?;
        writeln!(m, "output,rms_error,max_abs_error,window_start,window_end,samples")?;
        for (j, met) in self.metrics.iter().enumerate() {
            writeln!(
                m,
                "y_{},{},{},{},{},{}",
                j + 1,
                met.rms_error,
                met.max_abs_error,
                met.eval_window.0,
                met.eval_window.1,
                met.samples
            )?;
        }
        let mut md = fs::File::create(dir.join("metadata.txt"))?;
        writeln!(md, "label: {}", self.label)?;
        writeln!(md, "config_sha256: {}", self.config_hash)?;
        writeln!(md, "seed: {}", self.seed)?;
        writeln!(md, "version: {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))?;
        fs::write(dir.join("config.toml"), &self.config_toml)?;
        Ok(())
    }
}

/// A failed run, with whatever traces were recorded before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Option<Box<RunArtifact>>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self { error, partial: None }
    }
}

impl From<RunFailure> for Error {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

fn loop_settings(cfg: &ScenarioConfig, antiwindup: bool) -> LoopSettings {
    LoopSettings { ts: cfg.ts, antiwindup, estimator: cfg.estimator.clone() }
}

/// Instantiates the controller described by a validated configuration.
pub fn build_controller(cfg: &ScenarioConfig, u_init: &[f64]) -> Result<Box<dyn Controller>> {
    let refs = cfg.reference.clone();
    Ok(match &cfg.controller {
        ControllerConfig::Ipid { nu, alpha, gains, antiwindup } => {
            let p = nu.len();
            let alpha = if alpha.len() == p {
                DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(alpha))
            } else if alpha.len() == p * p {
                DMatrix::from_row_slice(p, p, alpha)
            } else {
                return config_err(format!("alpha needs {p} or {} entries, got {}", p * p, alpha.len()));
            };
            let model = UltraLocalModel::new(nu.clone(), alpha)?;
            Box::new(IpidController::new(model, gains.clone(), refs, loop_settings(cfg, *antiwindup), u_init)?)
        }
        ControllerConfig::ClassicPid { gains, broida: fopdt, feedforward, antiwindup } => {
            let gains = match fopdt {
                Some(b) => vec![broida::gains(b.k, b.t, b.tau)?],
                None => gains.clone(),
            };
            if gains.is_empty() {
                return config_err("classic PID needs gains or a Broida model");
            }
            let c = ClassicPidController::new(gains, refs.clone(), loop_settings(cfg, *antiwindup))?;
            match *feedforward {
                Some(ff) => {
                    let r = refs[0].clone();
                    Box::new(c.with_feedforward(move |t| {
                        let v = ff.m * r.eval(t, 2).unwrap_or(0.0) + ff.k1 * r.eval(t, 0).unwrap_or(0.0);
                        vec![v]
                    }))
                }
                None => Box::new(c),
            }
        }
        ControllerConfig::Restricted { m, k1, pole, gains, compensate, antiwindup } => {
            let model = KnownModel { m: *m, k1: *k1 };
            let gains = match gains {
                Some(g) => g.clone(),
                None => pole_placement(model, pole.unwrap_or(DEFAULT_POLE))?,
            };
            Box::new(RestrictedController::new(
                model,
                gains,
                refs[0].clone(),
                *compensate,
                loop_settings(cfg, *antiwindup),
                u_init[0],
            )?)
        }
        ControllerConfig::Gpi { pole, gains, perturbation } => {
            let PlantSpec::NonminPhase(plant) = &cfg.plant.model else {
                return config_err("the GPI controller needs a nonmin-phase plant");
            };
            let params = NmpParams { a: plant.a, b: plant.b, c: plant.c };
            let gains = match gains {
                Some(g) => *g,
                None => GpiGains::pole_placement(params, pole.unwrap_or(DEFAULT_POLE))?,
            };
            Box::new(GpiController::new(
                params,
                gains,
                refs[0].clone(),
                *perturbation,
                &cfg.estimator,
                cfg.ts,
                cfg.samples() + 1,
                u_init[0],
            )?)
        }
    })
}

fn config_text(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).unwrap_or_else(|_| format!("{cfg:?}"))
}

fn hex_digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

struct Recorder {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Recorder {
    fn push(&mut self, row: Vec<(String, f64)>) {
        if self.names.is_empty() {
            self.names = row.iter().map(|(n, _)| n.clone()).collect();
            self.columns = vec![Vec::new(); row.len()];
        }
        for (col, (_, v)) in self.columns.iter_mut().zip(row) {
            col.push(v);
        }
    }

    fn finish(self, ts: f64) -> Result<Vec<(String, SampledSignal)>> {
        self.names.into_iter().zip(self.columns).map(|(n, c)| Ok((n, SampledSignal::new(c, ts, 0.0)?))).collect()
    }
}

/// Runs one scenario. Deterministic in the configuration, seed included.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunArtifact, RunFailure> {
    cfg.validate()?;
    let n = cfg.samples();
    if n == 0 {
        return Err(Error::Domain("empty evaluation window: zero-length run".into()).into());
    }
    let plant = cfg.plant.build(&cfg.label)?;
    let m = plant.input_dim();
    let p = cfg.controller.channels();
    let u_init = cfg.u_init.clone().unwrap_or_else(|| vec![0.0; m]);
    let mut controller = build_controller(cfg, &u_init)?;
    let mut noise = (0..plant.output_dim())
        .map(|j| NoiseSource::new(&NoiseSpec { seed: cfg.noise.seed.wrapping_add(j as u64), ..cfg.noise }))
        .collect::<Result<Vec<_>>>()?;
    let nmp = match &cfg.plant.model {
        PlantSpec::NonminPhase(np) => Some(*np),
        _ => None,
    };
    let config_toml = config_text(cfg);
    let meta = (hex_digest(&config_toml), config_toml, cfg.noise.seed);

    let mut state = plant.initial_state(&u_init);
    let mut u_applied = u_init.clone();
    let mut rec = Recorder { names: Vec::new(), columns: Vec::new() };
    let mut failure = None;
    for k in 0..n {
        let t = k as f64 * cfg.ts;
        let step = (|| -> Result<Vec<(String, f64)>> {
            let y_true = plant.output(&state, &u_applied);
            let y_meas: Vec<f64> = y_true.iter().zip(noise.iter_mut()).map(|(y, s)| y + s.sample()).collect();
            let desired = controller.step(t, &y_meas, &u_applied)?;
            let (u, sat) = match &desired {
                Some(d) => clamp(d, &u_applied, &plant.constraints, cfg.ts),
                None => clamp(&u_init, &u_applied, &plant.constraints, cfg.ts),
            };
            if desired.is_some() {
                controller.update_saturation(&sat);
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { time: t });
            }
            let mut row = Vec::new();
            for (j, v) in y_true.iter().enumerate() {
                row.push((format!("y_{}", j + 1), *v));
            }
            for (j, v) in y_meas.iter().enumerate() {
                row.push((format!("y_meas_{}", j + 1), *v));
            }
            for (j, r) in cfg.reference.iter().enumerate() {
                row.push((format!("y_ref_{}", j + 1), r.eval(t, 0)?));
            }
            for (i, v) in u.iter().enumerate() {
                row.push((format!("u_{}", i + 1), *v));
            }
            if let Some(np) = &nmp {
                row.push(("varpi_true".into(), np.varpi(&state.x, u[0])));
            }
            row.extend(controller.telemetry());
            if row.iter().any(|(_, v)| !v.is_finite()) {
                return Err(Error::Diverged { time: t });
            }
            simulate_step(&plant, &mut state, &u, cfg.ts)?;
            state.u_prev = u.clone();
            u_applied = u;
            Ok(row)
        })();
        match step {
            Ok(row) => rec.push(row),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let traces = rec.finish(cfg.ts)?;
    let mut artifact = RunArtifact {
        label: cfg.label.clone(),
        traces,
        metrics: Vec::new(),
        config_hash: meta.0,
        config_toml: meta.1,
        seed: meta.2,
    };
    if let Some(error) = failure {
        return Err(RunFailure { error, partial: Some(Box::new(artifact)) });
    }
    for j in 1..=p {
        let y = artifact.trace(&format!("y_{j}")).expect("output trace");
        let r = artifact.trace(&format!("y_ref_{j}")).expect("reference trace");
        artifact.metrics.push(tracking_metrics(y, r, trailing_window(y, cfg.metrics_skip))?);
    }
    Ok(artifact)
}

/// Side-by-side results of runs sharing a plant and a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub runs: Vec<RunArtifact>,
    /// `ratios[i][j] = rms_i / rms_j` on the overall rms.
    pub ratios: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn ratio(&self, i: usize, j: usize) -> f64 {
        self.ratios[i][j]
    }
}

/// Runs every configuration and tabulates pairwise rms ratios.
pub fn compare(configs: &[ScenarioConfig]) -> Result<Comparison> {
    if configs.len() < 2 {
        return domain("comparison needs at least two configurations");
    }
    let first = &configs[0];
    for c in &configs[1..] {
        if c.plant.model != first.plant.model || c.reference != first.reference {
            return domain(format!("'{}' and '{}' differ in plant or reference", first.label, c.label));
        }
        if c.ts != first.ts || c.duration != first.duration {
            return domain(format!("'{}' and '{}' differ in sampling or duration", first.label, c.label));
        }
    }
    let runs = run_all(configs).into_iter().collect::<Result<Vec<_>, RunFailure>>()?;
    let rms: Vec<f64> = runs.iter().map(RunArtifact::overall_rms).collect();
    let ratios = rms.iter().map(|a| rms.iter().map(|b| a / b).collect()).collect();
    Ok(Comparison { labels: configs.iter().map(|c| c.label.clone()).collect(), runs, ratios })
}

/// Runs independent scenarios on worker threads; results keep the input order.
pub fn run_all(configs: &[ScenarioConfig]) -> Vec<Result<RunArtifact, RunFailure>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(configs.len().max(1));
    let chunk = configs.len().div_ceil(workers.max(1)).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(run_scenario).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("scenario worker panicked")).collect()
    })
}

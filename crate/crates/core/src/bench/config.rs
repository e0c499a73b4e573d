//! Scenario files: TOML tables describing one closed-loop run.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::control::estimation::EstimatorConfig;
use crate::control::gpi::{GpiGains, PerturbationEstimate};
use crate::control::PidGains;
use crate::error::{config, Error, Result};
use crate::plants::{ActuatorConstraints, FaultSpec, PlantModel, PlantSpec};
use crate::signal::NoiseSpec;
use crate::traject::ReferenceTrajectory;

fn default_ts() -> f64 {
    0.01
}

fn default_skip() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

/// Per-channel bounds; missing entries are unbounded.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub u_min: Option<Vec<f64>>,
    pub u_max: Option<Vec<f64>>,
    pub du_min: Option<Vec<f64>>,
    pub du_max: Option<Vec<f64>>,
}

impl ConstraintConfig {
    pub fn resolve(&self, m: usize) -> ActuatorConstraints {
        let pick = |v: &Option<Vec<f64>>, d: f64| v.clone().unwrap_or_else(|| vec![d; m]);
        ActuatorConstraints {
            u_min: pick(&self.u_min, f64::NEG_INFINITY),
            u_max: pick(&self.u_max, f64::INFINITY),
            du_min: pick(&self.du_min, f64::NEG_INFINITY),
            du_max: pick(&self.du_max, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    #[serde(flatten)]
    pub model: PlantSpec,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub constraints: ConstraintConfig,
    #[serde(default)]
    pub fault: FaultSpec,
    #[serde(default)]
    pub substeps: Option<usize>,
}

impl PlantConfig {
    pub fn build(&self, label: &str) -> Result<PlantModel> {
        let mut plant = PlantModel::new(label, self.model.dynamics()?);
        if let Some(x0) = &self.x0 {
            plant.x0 = x0.clone();
        }
        plant.constraints = self.constraints.resolve(plant.input_dim());
        plant.fault = self.fault;
        if let Some(s) = self.substeps {
            plant.substeps = s;
        }
        plant.validate()?;
        Ok(plant)
    }
}

/// Step-response model the classic PID is tuned from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BroidaModel {
    pub k: f64,
    pub t: f64,
    pub tau: f64,
}

/// `u* = m·ÿ* + k̂₁·y*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedforward {
    pub m: f64,
    pub k1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControllerConfig {
    /// Intelligent P/PI/PID on `y^(ν) = F + αu`. `alpha` is either the
    /// diagonal or the full matrix in row-major order.
    Ipid {
        nu: Vec<usize>,
        alpha: Vec<f64>,
        gains: Vec<PidGains>,
        #[serde(default)]
        antiwindup: bool,
    },
    ClassicPid {
        #[serde(default)]
        gains: Vec<PidGains>,
        #[serde(default)]
        broida: Option<BroidaModel>,
        #[serde(default)]
        feedforward: Option<Feedforward>,
        #[serde(default)]
        antiwindup: bool,
    },
    Restricted {
        m: f64,
        k1: f64,
        #[serde(default)]
        pole: Option<f64>,
        #[serde(default)]
        gains: Option<PidGains>,
        #[serde(default = "default_true")]
        compensate: bool,
        #[serde(default)]
        antiwindup: bool,
    },
    /// Needs a `nonmin-phase` plant; its `(a, b, c)` are the model.
    Gpi {
        #[serde(default)]
        pole: Option<f64>,
        #[serde(default)]
        gains: Option<GpiGains>,
        #[serde(default)]
        perturbation: PerturbationEstimate,
    },
}

impl ControllerConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerConfig::Ipid { .. } => "ipid",
            ControllerConfig::ClassicPid { .. } => "classic-pid",
            ControllerConfig::Restricted { .. } => "restricted",
            ControllerConfig::Gpi { .. } => "gpi",
        }
    }

    /// Number of controlled outputs.
    pub fn channels(&self) -> usize {
        match self {
            ControllerConfig::Ipid { nu, .. } => nu.len(),
            ControllerConfig::ClassicPid { gains, broida, .. } => {
                if broida.is_some() {
                    1
                } else {
                    gains.len()
                }
            }
            _ => 1,
        }
    }
}

/// One closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub label: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_ts")]
    pub ts: f64,
    pub duration: f64,
    /// Leading fraction of the run excluded from metrics.
    #[serde(default = "default_skip")]
    pub metrics_skip: f64,
    #[serde(default)]
    pub u_init: Option<Vec<f64>>,
    pub plant: PlantConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub reference: Vec<ReferenceTrajectory>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    pub controller: ControllerConfig,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return config(format!("ts must be positive, got {}", self.ts));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return config(format!("duration must be nonnegative, got {}", self.duration));
        }
        if !(0.0..1.0).contains(&self.metrics_skip) {
            return config("metrics_skip must lie in [0, 1)");
        }
        self.noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        let plant = self.plant.build(&self.label)?;
        let p = self.controller.channels();
        if p == 0 {
            return config("controller has no channels");
        }
        if p > plant.output_dim() {
            return config(format!("controller drives {p} outputs, plant has {}", plant.output_dim()));
        }
        if self.reference.len() != p {
            return config(format!("{} references given for {p} controlled outputs", self.reference.len()));
        }
        for r in &self.reference {
            r.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        let m = plant.input_dim();
        let square = matches!(self.controller, ControllerConfig::Ipid { .. } | ControllerConfig::ClassicPid { .. });
        if square && p != m {
            return config(format!("controller has {p} channels, plant has {m} inputs"));
        }
        if let Some(u0) = &self.u_init {
            if u0.len() != m {
                return config(format!("u_init has {} entries, plant has {m} inputs", u0.len()));
            }
        }
        if let ControllerConfig::Gpi { .. } = self.controller {
            if !matches!(self.plant.model, PlantSpec::NonminPhase(_)) {
                return config("the GPI controller needs a nonmin-phase plant");
            }
        }
        Ok(())
    }

    /// Number of samples in the run.
    pub fn samples(&self) -> usize {
        (self.duration / self.ts).round() as usize
    }
}

/// Sets `path = value` in a table; `path` is dot-separated and may index arrays.
pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return config(format!("malformed key '{path}'"));
    }
    let mut cur: &mut Value = table.entry(parts[0].to_string()).or_insert_with(|| Value::Table(Table::new()));
    for part in &parts[1..] {
        cur = match cur {
            Value::Table(t) => t.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new())),
            Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| Error::Config(format!("'{part}' is not an array index")))?;
                let len = a.len();
                a.get_mut(i).ok_or_else(|| Error::Config(format!("index {i} out of range ({len} entries)")))?
            }
            _ => return config(format!("'{path}' descends into a scalar")),
        };
    }
    *cur = value;
    Ok(())
}

/// Parses `key=value`; the value is read as TOML, falling back to a bare string.
pub fn parse_override(arg: &str) -> Result<(String, Value)> {
    let (k, v) = arg.split_once('=').ok_or_else(|| Error::Config(format!("override '{arg}' is not key=value")))?;
    let v = v.trim();
    let value = match format!("v = {v}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(v.into())),
        Err(_) => Value::String(v.into()),
    };
    Ok((k.trim().to_string(), value))
}

/// Deep-merges `over` into `base`. A table carrying a `kind` key replaces its
/// counterpart wholesale, since its fields depend on the kind.
pub fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) if !o.contains_key("kind") => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Scenario text split into the main table and its optional baseline overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSource {
    pub table: Table,
    pub baseline: Option<Table>,
}

impl ScenarioSource {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let baseline = match table.remove("baseline") {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => return config("'baseline' must be a table"),
        };
        Ok(Self { table, baseline })
    }

    /// The main run, or its baseline when `baseline` is set.
    pub fn table_for(&self, baseline: bool) -> Result<Table> {
        let mut t = self.table.clone();
        if baseline {
            let over = self.baseline.as_ref().ok_or_else(|| Error::Config("scenario defines no baseline".into()))?;
            merge(&mut t, over);
            let label = t.get("label").and_then(Value::as_str).unwrap_or("scenario").to_string();
            t.insert("label".into(), Value::String(format!("{label}:baseline")));
        }
        Ok(t)
    }
}

pub fn from_table(table: Table) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig =
        Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

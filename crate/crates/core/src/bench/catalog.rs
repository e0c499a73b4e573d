//! Built-in scenarios, loaded from the TOML files shipped with the crate.

use std::path::Path;

use toml::Value;

use super::config::{from_table, set_path, ScenarioConfig, ScenarioSource};
use crate::error::{config, Error, Result};

macro_rules! scenarios {
    ($($label:literal),* $(,)?) => {
        &[$(($label, include_str!(concat!("../../scenarios/", $label, ".toml")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = scenarios![
    "fig1-nominal",
    "fig2-aged",
    "fig3-fault",
    "fig4-large-spectrum",
    "fig5-6-mimo",
    "fig7-cubic",
    "fig8-9-antiwindup",
    "fig11-ballbeam-bezier",
    "fig12-ballbeam-sine",
    "fig14-tanks",
    "fig15-spring",
    "fig16-nmp-nominal",
    "fig17-18-nmp-const-perturb",
    "fig19-nmp-speed-perturb",
];

/// Suffix addressing a scenario's comparison run.
pub const BASELINE_SUFFIX: &str = ":baseline";

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub label: &'static str,
    pub description: String,
    pub has_baseline: bool,
    pub source: &'static str,
}

/// Every built-in scenario, in catalog order.
pub fn catalog() -> Vec<CatalogEntry> {
    BUILTIN
        .iter()
        .map(|(label, text)| {
            let src = ScenarioSource::parse(text).expect("built-in scenario parses");
            let description = src.table.get("description").and_then(Value::as_str).unwrap_or("").to_string();
            CatalogEntry { label, description, has_baseline: src.baseline.is_some(), source: text }
        })
        .collect()
}

/// Adjustments applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Dotted-key assignments, applied in order.
    pub overrides: Vec<(String, Value)>,
    pub seed: Option<u64>,
    pub noiseless: bool,
}

/// Looks up a catalog label (optionally with `:baseline`) or reads a scenario file.
pub fn load(name: &str) -> Result<(ScenarioSource, bool)> {
    let (base, baseline) = match name.strip_suffix(BASELINE_SUFFIX) {
        Some(b) => (b, true),
        None => (name, false),
    };
    if let Some((_, text)) = BUILTIN.iter().find(|(l, _)| *l == base) {
        return Ok((ScenarioSource::parse(text)?, baseline));
    }
    let path = Path::new(base);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return Ok((ScenarioSource::parse(&text)?, baseline));
    }
    config(format!("'{name}' is neither a catalog label nor a scenario file"))
}

/// Resolves a name to a validated configuration.
pub fn resolve(name: &str, opts: &RunOptions) -> Result<ScenarioConfig> {
    let (src, baseline) = load(name)?;
    let mut table = src.table_for(baseline)?;
    for (k, v) in &opts.overrides {
        set_path(&mut table, k, v.clone())?;
    }
    if opts.noiseless {
        let mut noise = toml::Table::new();
        noise.insert("kind".into(), Value::String("none".into()));
        table.insert("noise".into(), Value::Table(noise));
    }
    if let Some(seed) = opts.seed {
        let seed =
            i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} exceeds the TOML integer range")))?;
        set_path(&mut table, "noise.seed", Value::Integer(seed))?;
        if !table["noise"].as_table().is_some_and(|t| t.contains_key("kind")) {
            set_path(&mut table, "noise.kind", Value::String("none".into()))?;
        }
    }
    from_table(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_least_fourteen_valid_entries() {
        let cat = catalog();
        assert!(cat.len() >= 14);
        for e in &cat {
            let cfg = resolve(e.label, &RunOptions::default()).unwrap();
            assert_eq!(cfg.label, e.label);
            assert!(!e.description.is_empty(), "{}", e.label);
            if e.has_baseline {
                resolve(&format!("{}{BASELINE_SUFFIX}", e.label), &RunOptions::default()).unwrap();
            }
        }
    }

    #[test]
    fn noiseless_and_seed_options() {
        let opts = RunOptions { noiseless: true, seed: Some(11), ..Default::default() };
        let cfg = resolve("fig1-nominal", &opts).unwrap();
        assert!(cfg.noise.is_silent());
        assert_eq!(cfg.noise.seed, 11);
    }

    #[test]
    fn unknown_names_are_config_errors() {
        assert!(matches!(resolve("no-such-scenario", &RunOptions::default()), Err(Error::Config(_))));
        assert!(matches!(resolve("fig7-cubic:baseline", &RunOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn scenario_files_load_by_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        std::fs::write(&p, catalog()[0].source).unwrap();
        let cfg = resolve(p.to_str().unwrap(), &RunOptions::default()).unwrap();
        assert_eq!(cfg.label, catalog()[0].label);
    }
}

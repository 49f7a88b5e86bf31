//! Experiment configuration: a single TOML file with nested sections,
//! overridable from the command line via `--set section.key=value`.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub grid: GridSection,
    pub reduced: ReducedSection,
    pub pde: PdeSection,
    pub tail: TailSection,
    pub full: FullSection,
    pub shoot: ShootSection,
    pub modulation: ModulationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentSection::default(),
            grid: GridSection::default(),
            reduced: ReducedSection::default(),
            pde: PdeSection::default(),
            tail: TailSection::default(),
            full: FullSection::default(),
            shoot: ShootSection::default(),
            modulation: ModulationSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Random seed; used for probe jitter only.
    pub seed: u64,
    pub out: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "profiles".into(),
            seed: 0,
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub y_min: f64,
    pub y_max: f64,
    pub n: usize,
    /// Drift parameter for the Q_b column of the profile CSV.
    pub qb_b: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            y_min: -25.0,
            y_max: 25.0,
            n: 5001,
            qb_b: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReducedSection {
    pub beta: f64,
    pub s0: f64,
    /// Integration horizon for the exactness check, s_end = factor · s0.
    pub s_end_factor: f64,
    pub tol: f64,
    pub snapshots: usize,
}

impl Default for ReducedSection {
    fn default() -> Self {
        Self {
            beta: 0.5,
            s0: 100.0,
            s_end_factor: 100.0,
            tol: 1e-12,
            snapshots: 1025,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSection {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub snapshot_every: f64,
    /// Write snapshot CSV files.
    pub snapshots_out: bool,
}

impl Default for PdeSection {
    fn default() -> Self {
        Self {
            x_min: -1024.0,
            x_max: 1024.0,
            n: 1 << 14,
            dt: 5e-4,
            t_end: 10.0,
            snapshot_every: 5.0,
            snapshots_out: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailSection {
    pub theta: f64,
    pub x0: f64,
    pub cutoff_start: f64,
    pub cutoff_width: f64,
    /// Tail strength; 0 means "use the regime value for theta".
    pub c0: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl Default for TailSection {
    fn default() -> Self {
        Self {
            theta: 1.5,
            x0: 100.0,
            cutoff_start: 700.0,
            cutoff_width: 60.0,
            c0: 0.0,
            t_end: 20.0,
            dt: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FullSection {
    /// "composed" (tail-driven bundle) or "soliton" (solver validation).
    #[serde(with = "full_mode")]
    pub mode: FullMode,
    pub beta: f64,
    pub s0: f64,
    pub lambda0_offset: f64,
    pub b0_offset: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub cutoff_start: f64,
    pub cutoff_width: f64,
    pub dt_safety: f64,
    pub stop_lambda_factor: f64,
    pub t_budget_factor: f64,
    pub decompositions: usize,
    pub q0_substeps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FullMode {
    Composed,
    Soliton,
}

mod full_mode {
    use super::FullMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &FullMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match v {
            FullMode::Composed => "composed",
            FullMode::Soliton => "soliton",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FullMode, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "composed" => Ok(FullMode::Composed),
            "soliton" => Ok(FullMode::Soliton),
            other => Err(serde::de::Error::custom(format!(
                "full.mode must be composed|soliton, got {other:?}"
            ))),
        }
    }
}

impl Default for FullSection {
    fn default() -> Self {
        let d = gkdv_core::pipeline::ComposedRunConfig::desk_default();
        Self {
            mode: FullMode::Composed,
            beta: d.beta,
            s0: d.s0,
            lambda0_offset: 0.0,
            b0_offset: 0.0,
            x_min: d.domain.x_min,
            x_max: d.domain.x_max,
            n: d.domain.n,
            cutoff_start: d.cutoff_start,
            cutoff_width: d.cutoff_width,
            dt_safety: d.dt_safety,
            stop_lambda_factor: d.stop_lambda_factor,
            t_budget_factor: d.t_budget_factor,
            decompositions: d.decompositions,
            q0_substeps: d.q0_substeps,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootSection {
    pub beta: f64,
    pub s0: f64,
    /// "reduced" or "full-pde".
    pub model: String,
    pub budget: usize,
    pub s_max_factor: f64,
    pub grid_n: usize,
    pub boundary_per_side: usize,
    /// Probe jitter as a fraction of a sweep cell (seeded; 0 = off).
    pub jitter: f64,
    pub tol: f64,
}

impl Default for ShootSection {
    fn default() -> Self {
        Self {
            beta: 0.4,
            s0: 100.0,
            model: "reduced".into(),
            budget: 40,
            s_max_factor: 100.0,
            grid_n: 5,
            boundary_per_side: 24,
            jitter: 0.0,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulationSection {
    pub b_scale: f64,
    pub newton_tol: f64,
}

impl Default for ModulationSection {
    fn default() -> Self {
        Self {
            b_scale: 128.0,
            newton_tol: 1e-10,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .with_context(|| format!("override {spec:?} is not key=value"))?;
        let mut doc: toml::Value =
            toml::Value::try_from(&*self).context("serializing config for override")?;
        let mut node = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() < 2 {
            bail!("override key {key:?} must be section.key");
        }
        for part in &parts[..parts.len() - 1] {
            node = node
                .get_mut(part)
                .with_context(|| format!("unknown config section {part:?}"))?;
        }
        let leaf = parts[parts.len() - 1];
        let table = node
            .as_table_mut()
            .with_context(|| format!("{key:?} does not address a table"))?;
        let old = table
            .get(leaf)
            .with_context(|| format!("unknown config key {key:?}"))?
            .clone();
        let new = match old {
            toml::Value::Float(_) => toml::Value::Float(value.parse()?),
            toml::Value::Integer(_) => toml::Value::Integer(value.parse()?),
            toml::Value::Boolean(_) => toml::Value::Boolean(value.parse()?),
            toml::Value::String(_) => toml::Value::String(value.to_string()),
            other => bail!("cannot override {key:?} of type {}", other.type_str()),
        };
        table.insert(leaf.to_string(), new);
        *self = doc.try_into().context("config invalid after override")?;
        Ok(())
    }

    pub fn to_toml_value(&self) -> Result<toml::Value> {
        Ok(toml::Value::try_from(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        let text2 = toml::to_string_pretty(&back).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn overrides_by_dotted_key() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("reduced.beta=0.25").unwrap();
        assert_eq!(cfg.reduced.beta, 0.25);
        cfg.apply_override("pde.n=4096").unwrap();
        assert_eq!(cfg.pde.n, 4096);
        cfg.apply_override("experiment.name=reduced").unwrap();
        assert_eq!(cfg.experiment.name, "reduced");
        assert!(cfg.apply_override("nope.key=1").is_err());
        assert!(cfg.apply_override("reduced.nope=1").is_err());
        assert!(cfg.apply_override("garbage").is_err());
    }

    #[test]
    fn rejects_unknown_fields() {
        let bad = "[reduced]\nbeta = 0.4\nbogus = 1\n";
        assert!(toml::from_str::<ExperimentConfig>(bad).is_err());
    }
}

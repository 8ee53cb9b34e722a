//! Parameterized gridworld scenarios.
//!
//! A scenario fixes the grid, start/goal cells, horizon and reward constants,
//! and declares how a continuous configuration vector maps onto hazard
//! geometry and dynamics perturbations. Each `bounds = [lo, hi]` entry in the
//! declaration consumes one configuration coordinate, assigned in declaration
//! order (hazards first, in field order x/y/radius, then the slip offset), so
//! the configuration dimension is exactly the number of bounded entries.

use crate::error::{Error, Result};
use crate::grid::Cell;
use serde::{Deserialize, Serialize};

/// Where a hazard/dynamics parameter gets its value from: a fixed constant or
/// one coordinate of the configuration vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceDef {
    Fixed { fixed: f64 },
    Bounded { bounds: [f64; 2] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HazardDef {
    pub center_x: SourceDef,
    pub center_y: SourceDef,
    pub radius: SourceDef,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SafetyDef {
    /// Latest step by which the goal must be reached; absent means avoid-only.
    pub goal_deadline: Option<usize>,
}

fn default_step_cost() -> f64 {
    -0.01
}

fn default_goal_reward() -> f64 {
    1.0
}

/// Declarative scenario description; this is the on-disk schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDef {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub start: [u32; 2],
    pub goal: [u32; 2],
    pub horizon: usize,
    #[serde(default)]
    pub slip_base: f64,
    #[serde(default = "default_step_cost")]
    pub step_cost: f64,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    #[serde(default)]
    pub hazards: Vec<HazardDef>,
    #[serde(default)]
    pub slip_offset: Option<SourceDef>,
    #[serde(default)]
    pub safety: SafetyDef,
}

/// Resolved parameter source: constant, or configuration coordinate `index`
/// constrained to the closed interval [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CoordSource {
    Fixed(f64),
    Coord { index: usize, lo: f64, hi: f64 },
}

impl CoordSource {
    fn value(&self, config: &EnvConfig) -> f64 {
        match *self {
            CoordSource::Fixed(v) => v,
            CoordSource::Coord { index, .. } => config.values()[index],
        }
    }

    fn min_value(&self) -> f64 {
        match *self {
            CoordSource::Fixed(v) => v,
            CoordSource::Coord { lo, .. } => lo,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HazardTemplate {
    pub center_x: CoordSource,
    pub center_y: CoordSource,
    pub radius: CoordSource,
}

/// A hazard disk instantiated from a concrete configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hazard {
    pub center: (f64, f64),
    pub radius: f64,
}

impl Hazard {
    /// Signed margin of a point to this disk: distance to center minus radius.
    pub fn margin(&self, point: (f64, f64)) -> f64 {
        let dx = point.0 - self.center.0;
        let dy = point.1 - self.center.1;
        (dx * dx + dy * dy).sqrt() - self.radius
    }
}

/// A validated scenario. Construct with [`Scenario::new`] or
/// [`Scenario::from_toml`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub start: Cell,
    pub goal: Cell,
    pub horizon: usize,
    pub slip_base: f64,
    pub step_cost: f64,
    pub goal_reward: f64,
    pub goal_deadline: Option<usize>,
    hazards: Vec<HazardTemplate>,
    slip_offset: Option<CoordSource>,
    bounds: Vec<(f64, f64)>,
}

impl Scenario {
    pub fn new(def: ScenarioDef) -> Result<Scenario> {
        let invalid = |msg: String| Error::InvalidScenario(msg);
        if def.width == 0 || def.height == 0 {
            return Err(invalid("grid dimensions must be positive".into()));
        }
        if def.horizon == 0 {
            return Err(invalid("horizon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&def.slip_base) {
            return Err(invalid(format!("slip_base {} outside [0, 1]", def.slip_base)));
        }
        let start = Cell::new(def.start[0], def.start[1]);
        let goal = Cell::new(def.goal[0], def.goal[1]);
        for (label, cell) in [("start", start), ("goal", goal)] {
            if cell.x >= def.width || cell.y >= def.height {
                return Err(invalid(format!("{label} cell ({}, {}) outside grid", cell.x, cell.y)));
            }
        }
        // A 1x1 grid necessarily has start == goal; the episode then never
        // registers an arrival, so the coincidence is harmless. Anything
        // larger must keep them distinct.
        if start == goal && (def.width > 1 || def.height > 1) {
            return Err(invalid("start and goal must differ".into()));
        }

        let mut bounds = Vec::new();
        let mut resolve = |src: &SourceDef| -> Result<CoordSource> {
            match *src {
                SourceDef::Fixed { fixed } => {
                    if !fixed.is_finite() {
                        return Err(Error::InvalidScenario("non-finite fixed value".into()));
                    }
                    Ok(CoordSource::Fixed(fixed))
                }
                SourceDef::Bounded { bounds: [lo, hi] } => {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(Error::InvalidScenario(format!(
                            "interval [{lo}, {hi}] must satisfy lo < hi"
                        )));
                    }
                    let index = bounds.len();
                    bounds.push((lo, hi));
                    Ok(CoordSource::Coord { index, lo, hi })
                }
            }
        };

        let mut hazards = Vec::with_capacity(def.hazards.len());
        for h in &def.hazards {
            let template = HazardTemplate {
                center_x: resolve(&h.center_x)?,
                center_y: resolve(&h.center_y)?,
                radius: resolve(&h.radius)?,
            };
            // Radii must stay positive for every admissible configuration.
            if template.radius.min_value() <= 0.0 {
                return Err(Error::InvalidScenario(
                    "hazard radius must be positive over its whole range".into(),
                ));
            }
            hazards.push(template);
        }
        let slip_offset = def.slip_offset.as_ref().map(&mut resolve).transpose()?;

        Ok(Scenario {
            name: def.name,
            width: def.width,
            height: def.height,
            start,
            goal,
            horizon: def.horizon,
            slip_base: def.slip_base,
            step_cost: def.step_cost,
            goal_reward: def.goal_reward,
            goal_deadline: def.safety.goal_deadline,
            hazards,
            slip_offset,
            bounds,
        })
    }

    pub fn from_toml(text: &str) -> Result<Scenario> {
        let def: ScenarioDef =
            toml::from_str(text).map_err(|e| Error::ScenarioParse(e.to_string()))?;
        Scenario::new(def)
    }

    pub fn num_states(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn state_index(&self, cell: Cell) -> usize {
        (cell.y * self.width + cell.x) as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        let i = index as u32;
        Cell::new(i % self.width, i / self.width)
    }

    pub fn config_dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn config_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn hazard_templates(&self) -> &[HazardTemplate] {
        &self.hazards
    }

    /// Validates a raw vector against the configuration box and wraps it.
    pub fn make_config(&self, values: Vec<f64>) -> Result<EnvConfig> {
        if values.len() != self.bounds.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bounds.len(),
                got: values.len(),
                context: "configuration vector",
            });
        }
        let mut offending = Vec::new();
        for (j, (&v, &(lo, hi))) in values.iter().zip(&self.bounds).enumerate() {
            if !v.is_finite() || v < lo || v > hi {
                offending.push(j);
            }
        }
        if !offending.is_empty() {
            let details = offending
                .iter()
                .map(|&j| {
                    let (lo, hi) = self.bounds[j];
                    format!("coord {j}: {} not in [{lo}, {hi}]", values[j])
                })
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::OutOfBounds { coords: offending, details });
        }
        Ok(EnvConfig { values })
    }

    /// Midpoint of the configuration box; the reference environment used for
    /// return estimates and contrast rollouts.
    pub fn nominal_config(&self) -> EnvConfig {
        EnvConfig {
            values: self.bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect(),
        }
    }

    /// Maps a point of the unit cube onto the configuration box.
    pub fn config_from_unit(&self, unit: &[f64]) -> Result<EnvConfig> {
        if unit.len() != self.bounds.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bounds.len(),
                got: unit.len(),
                context: "unit-cube point",
            });
        }
        let values = unit
            .iter()
            .zip(&self.bounds)
            .map(|(&u, &(lo, hi))| (lo + u * (hi - lo)).clamp(lo, hi))
            .collect();
        Ok(EnvConfig { values })
    }

    /// Normalizes a configuration into the unit cube.
    pub fn config_to_unit(&self, config: &EnvConfig) -> Vec<f64> {
        config
            .values()
            .iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    /// Instantiates the hazard disks for a concrete configuration.
    pub fn hazards_at(&self, config: &EnvConfig) -> Vec<Hazard> {
        self.hazards
            .iter()
            .map(|t| Hazard {
                center: (t.center_x.value(config), t.center_y.value(config)),
                radius: t.radius.value(config),
            })
            .collect()
    }

    /// Slip probability under a configuration: the base probability plus the
    /// configured offset, clamped into [0, 1].
    pub fn slip_at(&self, config: &EnvConfig) -> f64 {
        let offset = self.slip_offset.as_ref().map_or(0.0, |s| s.value(config));
        (self.slip_base + offset).clamp(0.0, 1.0)
    }
}

/// A point of the configuration box E.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    values: Vec<f64>,
}

impl EnvConfig {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

//! Run configuration: a single JSON document that fixes every input of a run.

use std::fmt;
use std::path::{Path, PathBuf};

use evcs_core::dual::DualError;
use evcs_core::pricing::{BucketScheme, Heuristic, PricingError, TableOptions};
use evcs_core::scenario::{GenConfig, GenError};
use evcs_core::{Point, SolverParams, StationProfile};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed. Training scenario `k` uses `seed + k`; evaluation day `k`
    /// uses `seed + simulation.evaluation_seed_offset + k`.
    pub seed: u64,
    pub generator: GenConfig,
    pub stations: Vec<StationConfig>,
    pub solver: SolverParams,
    pub pricing: PricingConfig,
    pub simulation: SimulationConfig,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub x: f64,
    pub y: f64,
    pub capacity: Capacity,
}

/// Per-slot capacity: one value for every slot, or one per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Capacity {
    Constant(f64),
    PerSlot(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PricingConfig {
    /// `None` derives the scheme from the horizon and area.
    pub buckets: Option<BucketScheme>,
    pub table: TableOptions,
    pub heuristic: Heuristic,
}

impl Default for PricingConfig {
    fn default() -> Self {
        Self {
            buckets: None,
            table: TableOptions::default(),
            heuristic: Heuristic::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PolicySelection {
    Priced,
    Fcfs,
    #[default]
    Both,
}

impl PolicySelection {
    pub fn kinds(self) -> Vec<evcs_core::PolicyKind> {
        use evcs_core::PolicyKind::*;
        match self {
            PolicySelection::Priced => vec![Priced],
            PolicySelection::Fcfs => vec![Fcfs],
            PolicySelection::Both => vec![Priced, Fcfs],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub training_scenarios: usize,
    pub evaluation_days: usize,
    pub evaluation_seed_offset: u64,
    pub policies: PolicySelection,
    /// Solve every evaluation day exactly and report competitive ratios.
    pub oracle: bool,
    /// Days with more EVs than this are not sent to the oracle.
    pub oracle_max_evs: usize,
    pub oracle_budget: u64,
    pub admission_budget: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            training_scenarios: 200,
            evaluation_days: 200,
            evaluation_seed_offset: 1_000_000,
            policies: PolicySelection::Both,
            oracle: false,
            oracle_max_evs: 12,
            oracle_budget: evcs_core::exact::DEFAULT_NODE_BUDGET,
            admission_budget: evcs_core::online::DEFAULT_ADMISSION_BUDGET,
        }
    }
}

/// Ten stations over the default 10 x 10 area: a large one in the centre,
/// four at the edge midpoints, four near the corners and one just west of
/// the centre. Capacities (kW per slot) leave the nearest station full for
/// part of the morning peak on most days.
fn default_stations() -> Vec<StationConfig> {
    let spots = [
        (5.0, 5.0, 14.0),
        (5.0, 2.0, 9.0),
        (5.0, 8.0, 9.0),
        (2.0, 5.0, 9.0),
        (8.0, 5.0, 9.0),
        (2.0, 2.0, 7.0),
        (8.0, 2.0, 7.0),
        (2.0, 8.0, 7.0),
        (8.0, 8.0, 7.0),
        (4.0, 5.0, 7.0),
    ];
    spots
        .iter()
        .map(|&(x, y, c)| StationConfig {
            x,
            y,
            capacity: Capacity::Constant(c),
        })
        .collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generator: GenConfig::default(),
            stations: default_stations(),
            solver: SolverParams::default(),
            pricing: PricingConfig::default(),
            simulation: SimulationConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Validation failure with the dotted path of the offending key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidField {
    pub key: String,
    pub reason: String,
}

impl fmt::Display for InvalidField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.reason)
    }
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> InvalidField {
    InvalidField {
        key: key.into(),
        reason: reason.into(),
    }
}

fn from_gen(e: GenError) -> InvalidField {
    match e {
        GenError::InvalidParameter { field, reason } => invalid(format!("generator.{field}"), reason),
        other => invalid("generator", other.to_string()),
    }
}

fn from_dual(e: DualError) -> InvalidField {
    match e {
        DualError::InvalidParameter { field, reason } => invalid(format!("solver.{field}"), reason),
        other => invalid("solver", other.to_string()),
    }
}

fn from_pricing(prefix: &str, e: PricingError) -> InvalidField {
    match e {
        PricingError::InvalidParameter { field, reason } => invalid(format!("{prefix}.{field}"), reason),
        other => invalid(prefix, other.to_string()),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), InvalidField> {
        self.generator.validate().map_err(from_gen)?;
        self.solver.validate().map_err(from_dual)?;
        self.bucket_scheme()
            .validate()
            .map_err(|e| from_pricing("pricing.buckets", e))?;
        self.pricing
            .table
            .validate()
            .map_err(|e| from_pricing("pricing.table", e))?;
        self.pricing
            .heuristic
            .validate()
            .map_err(|e| from_pricing("pricing.heuristic", e))?;
        if self.stations.is_empty() {
            return Err(invalid("stations", "at least one station is required"));
        }
        for (j, s) in self.stations.iter().enumerate() {
            if !s.x.is_finite() || !s.y.is_finite() {
                return Err(invalid(format!("stations[{j}]"), "location must be finite"));
            }
            if let Capacity::PerSlot(v) = &s.capacity {
                if v.len() != self.generator.horizon {
                    return Err(invalid(
                        format!("stations[{j}].capacity"),
                        format!("has {} slots but the horizon is {}", v.len(), self.generator.horizon),
                    ));
                }
            }
            self.profile(j, s)
                .validate(self.generator.horizon)
                .map_err(|e| invalid(format!("stations[{j}].capacity"), e.to_string()))?;
        }
        if self.simulation.admission_budget == 0 {
            return Err(invalid("simulation.admission_budget", "must be positive"));
        }
        if self.simulation.oracle_budget == 0 {
            return Err(invalid("simulation.oracle_budget", "must be positive"));
        }
        Ok(())
    }

    fn profile(&self, id: usize, s: &StationConfig) -> StationProfile {
        let capacity = match &s.capacity {
            Capacity::Constant(c) => vec![*c; self.generator.horizon],
            Capacity::PerSlot(v) => v.clone(),
        };
        StationProfile {
            id,
            location: Point::new(s.x, s.y),
            capacity,
        }
    }

    /// Nominal station profiles, ids in listing order.
    pub fn station_profiles(&self) -> Vec<StationProfile> {
        self.stations
            .iter()
            .enumerate()
            .map(|(j, s)| self.profile(j, s))
            .collect()
    }

    pub fn bucket_scheme(&self) -> BucketScheme {
        self.pricing.buckets.clone().unwrap_or_else(|| {
            BucketScheme::for_day(self.generator.horizon, self.generator.area.diagonal())
        })
    }

    pub fn training_seeds(&self) -> Vec<u64> {
        (0..self.simulation.training_scenarios as u64)
            .map(|k| self.seed.wrapping_add(k))
            .collect()
    }

    pub fn evaluation_seeds(&self) -> Vec<u64> {
        let base = self.seed.wrapping_add(self.simulation.evaluation_seed_offset);
        (0..self.simulation.evaluation_days as u64)
            .map(|k| base.wrapping_add(k))
            .collect()
    }

    /// Defaults-expanded JSON form.
    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON (sorted keys, output directory
    /// removed), hex encoded.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_vec(&value).expect("value serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<RunConfig, Error> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::Config(invalid(key, e.into_inner().to_string()))
    })?;
    config.validate().map_err(Error::Config)?;
    Ok(config)
}

/// Reads, parses and validates the config at `path`.
pub fn load_config(path: &Path) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

//! Seeded Monte-Carlo scenario generation.
//!
//! A scenario is one sampled day: a Poisson-distributed number of EVs, each
//! with an independently drawn type, plus optionally resampled station
//! capacities. Every draw comes from a single [`ChaCha8Rng`] seeded with
//! `seed_from_u64(seed)`, in a fixed order, so a scenario is a pure function
//! of `(config, stations, seed)`.
//!
//! The default distributions target a 48-slot day on a 10 x 10 area.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EvType, Instance, ModelError, Point, StationProfile};

/// Name of the generator recorded in artifact metadata.
pub const PRNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

/// Draws per EV type before giving up on satisfying the type invariants.
pub const MAX_TYPE_DRAWS: usize = 1000;

/// Draws for a truncated normal before clamping the last draw.
const MAX_TRUNCATION_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("invalid parameter for `{field}`: {reason}")]
    InvalidParameter {
        field: &'static str,
        reason: &'static str,
    },
    #[error("could not draw a schedulable type for ev {ev} in {MAX_TYPE_DRAWS} attempts")]
    RejectionLimit { ev: usize },
    #[error("station {station} has {len} capacity entries, horizon is {horizon}")]
    StationHorizon {
        station: usize,
        len: usize,
        horizon: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A univariate distribution declared by family and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dist {
    Constant { value: f64 },
    /// Continuous uniform on `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// Integer uniform on `low..=high`.
    UniformInt { low: i64, high: i64 },
    Normal { mean: f64, sd: f64 },
    /// Normal restricted to `[low, high]` by rejection.
    TruncatedNormal { mean: f64, sd: f64, low: f64, high: f64 },
    LogNormal { mu: f64, sigma: f64 },
    /// Uniform pick from a finite set.
    Choice { values: Vec<f64> },
}

fn finite(field: &'static str, values: &[f64]) -> Result<(), GenError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GenError::InvalidParameter {
            field,
            reason: "parameters must be finite",
        })
    }
}

impl Dist {
    pub fn validate(&self, field: &'static str) -> Result<(), GenError> {
        let bad = |reason| Err(GenError::InvalidParameter { field, reason });
        match self {
            Dist::Constant { value } => finite(field, &[*value]),
            Dist::Uniform { low, high } => {
                finite(field, &[*low, *high])?;
                if low > high {
                    return bad("uniform requires low <= high");
                }
                Ok(())
            }
            Dist::UniformInt { low, high } => {
                if low > high {
                    return bad("uniform_int requires low <= high");
                }
                Ok(())
            }
            Dist::Normal { mean, sd } => {
                finite(field, &[*mean, *sd])?;
                if *sd < 0.0 {
                    return bad("normal requires sd >= 0");
                }
                Ok(())
            }
            Dist::TruncatedNormal {
                mean,
                sd,
                low,
                high,
            } => {
                finite(field, &[*mean, *sd, *low, *high])?;
                if *sd < 0.0 {
                    return bad("truncated_normal requires sd >= 0");
                }
                if low > high {
                    return bad("truncated_normal requires low <= high");
                }
                Ok(())
            }
            Dist::LogNormal { mu, sigma } => {
                finite(field, &[*mu, *sigma])?;
                if *sigma < 0.0 {
                    return bad("log_normal requires sigma >= 0");
                }
                Ok(())
            }
            Dist::Choice { values } => {
                if values.is_empty() {
                    return bad("choice requires at least one value");
                }
                finite(field, values)
            }
        }
    }

    /// Draws one value. Parameters must have passed [`Dist::validate`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Dist::Constant { value } => *value,
            Dist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Dist::UniformInt { low, high } => rng.random_range(*low..=*high) as f64,
            Dist::Normal { mean, sd } => normal(*mean, *sd, rng),
            Dist::TruncatedNormal {
                mean,
                sd,
                low,
                high,
            } => {
                let mut x = *mean;
                for _ in 0..MAX_TRUNCATION_DRAWS {
                    x = normal(*mean, *sd, rng);
                    if (*low..=*high).contains(&x) {
                        return x;
                    }
                }
                x.clamp(*low, *high)
            }
            Dist::LogNormal { mu, sigma } => match LogNormal::new(*mu, *sigma) {
                Ok(d) => d.sample(rng),
                Err(_) => libm::exp(*mu),
            },
            Dist::Choice { values } => values[rng.random_range(0..values.len())],
        }
    }
}

fn normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    match Normal::new(mean, sd) {
        Ok(d) => d.sample(rng),
        Err(_) => mean,
    }
}

/// Axis-aligned rectangle that destinations are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Area {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Area {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 10.0,
            y_min: 0.0,
            y_max: 10.0,
        }
    }
}

impl Area {
    pub fn diagonal(&self) -> f64 {
        libm::hypot(self.x_max - self.x_min, self.y_max - self.y_min)
    }

    fn validate(&self) -> Result<(), GenError> {
        finite("area", &[self.x_min, self.x_max, self.y_min, self.y_max])?;
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(GenError::InvalidParameter {
                field: "area",
                reason: "min must not exceed max",
            });
        }
        Ok(())
    }

    fn clamp(&self, p: Point) -> Point {
        Point::new(
            p.x.clamp(self.x_min, self.x_max),
            p.y.clamp(self.y_min, self.y_max),
        )
    }
}

/// How EV destinations are drawn.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocationModel {
    /// Uniform over the area rectangle.
    #[default]
    Uniform,
    /// Independent coordinates, clamped into the area.
    Independent { x: Dist, y: Dist },
}

/// How station capacities vary between scenarios. Drawn values are
/// multiplicative factors on each station's nominal profile.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CapacityModel {
    /// Use the nominal station profiles unchanged.
    #[default]
    Fixed,
    /// One factor per station, applied to every slot.
    StationScale { factor: Dist },
    /// One factor per station and slot.
    SlotScale { factor: Dist },
}

/// Distributions for every element of an EV type and for station capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub poisson_mean: f64,
    pub horizon: usize,
    pub area: Area,
    /// Arrival slot, rounded and clamped into the horizon.
    pub arrival: Dist,
    /// Parking duration in slots, rounded, at least 1; departure is clamped
    /// to the horizon.
    pub duration: Dist,
    pub energy: Dist,
    pub rate: Dist,
    pub location: LocationModel,
    pub elasticity: Dist,
    pub capacity: CapacityModel,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            poisson_mean: 40.0,
            horizon: 48,
            area: Area::default(),
            arrival: Dist::TruncatedNormal {
                mean: 8.0,
                sd: 4.0,
                low: 0.0,
                high: 16.0,
            },
            duration: Dist::UniformInt { low: 8, high: 24 },
            energy: Dist::Uniform {
                low: 5.0,
                high: 30.0,
            },
            rate: Dist::Choice {
                values: alloc::vec![2.0, 3.5, 5.5],
            },
            location: LocationModel::Uniform,
            elasticity: Dist::LogNormal {
                mu: 0.0,
                sigma: 0.75,
            },
            capacity: CapacityModel::Fixed,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if !(self.poisson_mean > 0.0) || !self.poisson_mean.is_finite() {
            return Err(GenError::InvalidParameter {
                field: "poisson_mean",
                reason: "must be positive and finite",
            });
        }
        if self.horizon == 0 {
            return Err(GenError::InvalidParameter {
                field: "horizon",
                reason: "must be at least one slot",
            });
        }
        self.area.validate()?;
        self.arrival.validate("arrival")?;
        self.duration.validate("duration")?;
        self.energy.validate("energy")?;
        self.rate.validate("rate")?;
        self.elasticity.validate("elasticity")?;
        if let LocationModel::Independent { x, y } = &self.location {
            x.validate("location.x")?;
            y.validate("location.y")?;
        }
        match &self.capacity {
            CapacityModel::Fixed => {}
            CapacityModel::StationScale { factor } | CapacityModel::SlotScale { factor } => {
                factor.validate("capacity.factor")?
            }
        }
        Ok(())
    }

    fn draw_location<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match &self.location {
            LocationModel::Uniform => {
                let a = &self.area;
                let x = a.x_min + (a.x_max - a.x_min) * rng.random::<f64>();
                let y = a.y_min + (a.y_max - a.y_min) * rng.random::<f64>();
                Point::new(x, y)
            }
            LocationModel::Independent { x, y } => {
                let p = Point::new(x.sample(rng), y.sample(rng));
                self.area.clamp(p)
            }
        }
    }

    fn draw_type<R: Rng + ?Sized>(&self, id: usize, rng: &mut R) -> Result<EvType, GenError> {
        let last_slot = (self.horizon - 1) as f64;
        for _ in 0..MAX_TYPE_DRAWS {
            let arrival = libm::round(self.arrival.sample(rng)).clamp(0.0, last_slot) as usize;
            let duration = libm::round(self.duration.sample(rng)).max(1.0);
            let departure = (arrival as f64 + duration).min(self.horizon as f64) as usize;
            let energy = self.energy.sample(rng);
            let rate = self.rate.sample(rng);
            let location = self.draw_location(rng);
            let elasticity = self.elasticity.sample(rng);
            let ev = EvType {
                id,
                arrival,
                departure,
                energy,
                rate,
                location,
                elasticity,
            };
            if ev.validate(self.horizon).is_ok() {
                return Ok(ev);
            }
        }
        Err(GenError::RejectionLimit { ev: id })
    }
}

/// One sampled day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub horizon: usize,
    pub evs: Vec<EvType>,
    /// Per-station capacity vectors, when the capacity model resamples them.
    pub capacities: Option<Vec<Vec<f64>>>,
}

impl Scenario {
    /// Station profiles as realised in this scenario.
    pub fn stations(&self, nominal: &[StationProfile]) -> Vec<StationProfile> {
        match &self.capacities {
            None => nominal.to_vec(),
            Some(caps) => nominal
                .iter()
                .zip(caps)
                .map(|(s, c)| StationProfile {
                    capacity: c.clone(),
                    ..s.clone()
                })
                .collect(),
        }
    }

    pub fn instance(&self, nominal: &[StationProfile]) -> Result<Instance, ModelError> {
        Instance::new(self.horizon, self.stations(nominal), self.evs.clone())
    }
}

/// Draws the scenario for `seed`.
pub fn sample_scenario(
    config: &GenConfig,
    stations: &[StationProfile],
    seed: u64,
) -> Result<Scenario, GenError> {
    config.validate()?;
    for s in stations {
        if s.capacity.len() != config.horizon {
            return Err(GenError::StationHorizon {
                station: s.id,
                len: s.capacity.len(),
                horizon: config.horizon,
            });
        }
    }
    let mut rng = rng_for(seed);
    let count = match Poisson::new(config.poisson_mean) {
        Ok(p) => {
            let n: f64 = p.sample(&mut rng);
            n as usize
        }
        Err(_) => {
            return Err(GenError::InvalidParameter {
                field: "poisson_mean",
                reason: "outside the poisson sampler's domain",
            })
        }
    };
    let evs = (0..count)
        .map(|id| config.draw_type(id, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;

    let capacities = match &config.capacity {
        CapacityModel::Fixed => None,
        CapacityModel::StationScale { factor } => Some(
            stations
                .iter()
                .map(|s| {
                    let f = factor.sample(&mut rng).max(0.0);
                    s.capacity.iter().map(|c| c * f).collect()
                })
                .collect(),
        ),
        CapacityModel::SlotScale { factor } => Some(
            stations
                .iter()
                .map(|s| {
                    s.capacity
                        .iter()
                        .map(|c| c * factor.sample(&mut rng).max(0.0))
                        .collect()
                })
                .collect(),
        ),
    };

    Ok(Scenario {
        seed,
        horizon: config.horizon,
        evs,
        capacities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn stations(n: usize, horizon: usize) -> Vec<StationProfile> {
        (0..n)
            .map(|id| StationProfile {
                id,
                location: Point::new(id as f64, 0.0),
                capacity: vec![10.0; horizon],
            })
            .collect()
    }

    #[test]
    fn tiny_mean_gives_empty_days() {
        let config = GenConfig {
            poisson_mean: 1e-9,
            ..GenConfig::default()
        };
        let st = stations(2, config.horizon);
        for seed in 0..100 {
            assert!(sample_scenario(&config, &st, seed).unwrap().evs.is_empty());
        }
    }

    #[test]
    fn same_seed_same_scenario() {
        let config = GenConfig::default();
        let st = stations(3, config.horizon);
        let a = sample_scenario(&config, &st, 17).unwrap();
        let b = sample_scenario(&config, &st, 17).unwrap();
        assert_eq!(a, b);
        let c = sample_scenario(&config, &st, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn poisson_count_mean() {
        let config = GenConfig {
            poisson_mean: 20.0,
            ..GenConfig::default()
        };
        let n = 10_000u64;
        let mut rng = rng_for(0);
        // Count draw only; the full scenario path is covered by the
        // integration test on a smaller batch.
        let poisson = Poisson::new(config.poisson_mean).unwrap();
        let total: f64 = (0..n).map(|_| poisson.sample(&mut rng)).sum();
        let mean = total / n as f64;
        assert!((mean - 20.0).abs() <= 3.0 * libm::sqrt(20.0 / n as f64));
    }

    #[test]
    fn generated_types_are_schedulable() {
        let config = GenConfig::default();
        let st = stations(2, config.horizon);
        for seed in 0..50 {
            let s = sample_scenario(&config, &st, seed).unwrap();
            for (i, ev) in s.evs.iter().enumerate() {
                assert_eq!(ev.id, i);
                assert!(ev.validate(config.horizon).is_ok());
                assert!(ev.energy <= ev.window_len() as f64 * ev.rate);
            }
        }
    }

    #[test]
    fn impossible_types_hit_rejection_limit() {
        let config = GenConfig {
            poisson_mean: 50.0,
            duration: Dist::Constant { value: 1.0 },
            energy: Dist::Constant { value: 100.0 },
            rate: Dist::Constant { value: 1.0 },
            ..GenConfig::default()
        };
        let st = stations(1, config.horizon);
        let err = sample_scenario(&config, &st, 3).unwrap_err();
        assert!(matches!(err, GenError::RejectionLimit { .. }));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let config = GenConfig {
            energy: Dist::Uniform {
                low: 5.0,
                high: 1.0,
            },
            ..GenConfig::default()
        };
        assert!(matches!(
            config.validate(),
            Err(GenError::InvalidParameter { field: "energy", .. })
        ));
        let config = GenConfig {
            poisson_mean: 0.0,
            ..GenConfig::default()
        };
        assert!(config.validate().is_err());
        let config = GenConfig {
            rate: Dist::Choice { values: vec![] },
            ..GenConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn capacity_scaling() {
        let config = GenConfig {
            capacity: CapacityModel::StationScale {
                factor: Dist::Uniform {
                    low: 0.5,
                    high: 1.5,
                },
            },
            ..GenConfig::default()
        };
        let st = stations(3, config.horizon);
        let s = sample_scenario(&config, &st, 9).unwrap();
        let caps = s.capacities.as_ref().unwrap();
        assert_eq!(caps.len(), 3);
        for c in caps {
            assert_eq!(c.len(), config.horizon);
            assert!(c.iter().all(|v| *v == c[0] && (5.0..=15.0).contains(v)));
        }
        let inst = s.instance(&st).unwrap();
        assert_eq!(inst.stations[1].capacity, caps[1]);
    }
}

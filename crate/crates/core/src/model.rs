//! Domain types shared by every stage: EV types, station profiles, instances,
//! and the small derived quantities (slot requirements, distances,
//! disutility) that the solvers are written in terms of.

use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute slack allowed when comparing an accumulated per-slot load with a
/// station capacity. Loads are sums of a handful of rates, so anything above
/// this is a real overload rather than rounding.
pub const CAPACITY_TOLERANCE: f64 = 1e-9;

/// Returns true when adding `rate` to `load` stays within `capacity`.
#[inline]
pub fn fits(load: f64, rate: f64, capacity: f64) -> bool {
    load + rate <= capacity + CAPACITY_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("charging rate must be positive and finite, got {0}")]
    NonPositiveRate(f64),
    #[error("energy requirement must be nonnegative and finite, got {0}")]
    InvalidEnergy(f64),
    #[error("ev {id}: {reason}")]
    InvalidEv { id: usize, reason: &'static str },
    #[error("station {id}: {reason}")]
    InvalidStation { id: usize, reason: &'static str },
    #[error("horizon must contain at least one slot")]
    EmptyHorizon,
    #[error("{kind} ids must be dense and ordered: position {position} holds id {id}")]
    NonDenseIds {
        kind: &'static str,
        position: usize,
        id: usize,
    },
}

/// A point on the planar service area.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Number of whole charging slots needed to deliver `energy` at `rate` per
/// slot, i.e. `ceil(energy / rate)`.
///
/// Quotients within a relative `1e-9` of an integer snap to that integer, so
/// `1.1 / 0.1` needs 11 slots and not 12.
pub fn energy_slots(energy: f64, rate: f64) -> Result<usize, ModelError> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(ModelError::NonPositiveRate(rate));
    }
    if !(energy >= 0.0) || !energy.is_finite() {
        return Err(ModelError::InvalidEnergy(energy));
    }
    let quotient = energy / rate;
    let nearest = libm::round(quotient);
    let slots = if libm::fabs(quotient - nearest) <= 1e-9 * quotient.max(1.0) {
        nearest
    } else {
        libm::ceil(quotient)
    };
    Ok(slots as usize)
}

/// Euclidean distance between a destination and a station.
#[inline]
pub fn distance(a: Point, b: Point) -> f64 {
    libm::hypot(a.x - b.x, a.y - b.y)
}

/// Disutility of parking at distance `l` for a user of elasticity `theta`.
#[inline]
pub fn disutility(theta: f64, l: f64) -> f64 {
    theta * l * l
}

/// The type of one EV agent: availability window, energy need, charging
/// rate, target location and (unobservable) elasticity.
///
/// Slots are 0-based. The availability window is the half-open range
/// `arrival..departure`, so it contains `departure - arrival` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvType {
    pub id: usize,
    pub arrival: usize,
    pub departure: usize,
    pub energy: f64,
    pub rate: f64,
    pub location: Point,
    pub elasticity: f64,
}

impl EvType {
    /// Slots of charging required. An invalid rate yields `usize::MAX`, which
    /// every scheduler treats as unschedulable.
    pub fn required_slots(&self) -> usize {
        energy_slots(self.energy, self.rate).unwrap_or(usize::MAX)
    }

    #[inline]
    pub fn window(&self) -> Range<usize> {
        self.arrival..self.departure
    }

    #[inline]
    pub fn is_available(&self, slot: usize) -> bool {
        self.arrival <= slot && slot < self.departure
    }

    pub fn window_len(&self) -> usize {
        self.departure.saturating_sub(self.arrival)
    }

    /// Checks the type invariants against a horizon of `horizon` slots.
    pub fn validate(&self, horizon: usize) -> Result<(), ModelError> {
        let err = |reason| ModelError::InvalidEv {
            id: self.id,
            reason,
        };
        if self.arrival >= self.departure {
            return Err(err("arrival must precede departure"));
        }
        if self.departure > horizon {
            return Err(err("departure beyond horizon"));
        }
        if !(self.rate > 0.0) || !self.rate.is_finite() {
            return Err(err("rate must be positive and finite"));
        }
        if !(self.energy >= 0.0) || !self.energy.is_finite() {
            return Err(err("energy must be nonnegative and finite"));
        }
        if !(self.elasticity >= 0.0) || !self.elasticity.is_finite() {
            return Err(err("elasticity must be nonnegative and finite"));
        }
        if !self.location.x.is_finite() || !self.location.y.is_finite() {
            return Err(err("location must be finite"));
        }
        if self.required_slots() > self.window_len() {
            return Err(err("energy need exceeds what the window can deliver"));
        }
        Ok(())
    }
}

/// A charging station: fixed location and per-slot energy capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationProfile {
    pub id: usize,
    pub location: Point,
    pub capacity: Vec<f64>,
}

impl StationProfile {
    pub fn validate(&self, horizon: usize) -> Result<(), ModelError> {
        let err = |reason| ModelError::InvalidStation {
            id: self.id,
            reason,
        };
        if self.capacity.len() != horizon {
            return Err(err("capacity length must equal the horizon"));
        }
        if self.capacity.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(err("capacities must be nonnegative and finite"));
        }
        if !self.location.x.is_finite() || !self.location.y.is_finite() {
            return Err(err("location must be finite"));
        }
        Ok(())
    }
}

/// One day's assignment problem: horizon, stations and EVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub horizon: usize,
    pub stations: Vec<StationProfile>,
    pub evs: Vec<EvType>,
}

impl Instance {
    /// Builds a validated instance. Ids must equal positions.
    pub fn new(
        horizon: usize,
        stations: Vec<StationProfile>,
        evs: Vec<EvType>,
    ) -> Result<Self, ModelError> {
        let instance = Self {
            horizon,
            stations,
            evs,
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.horizon == 0 {
            return Err(ModelError::EmptyHorizon);
        }
        for (position, station) in self.stations.iter().enumerate() {
            if station.id != position {
                return Err(ModelError::NonDenseIds {
                    kind: "station",
                    position,
                    id: station.id,
                });
            }
            station.validate(self.horizon)?;
        }
        for (position, ev) in self.evs.iter().enumerate() {
            if ev.id != position {
                return Err(ModelError::NonDenseIds {
                    kind: "ev",
                    position,
                    id: ev.id,
                });
            }
            ev.validate(self.horizon)?;
        }
        Ok(())
    }

    pub fn num_evs(&self) -> usize {
        self.evs.len()
    }

    pub fn num_stations(&self) -> usize {
        self.stations.len()
    }

    /// Row-major `|N| x |M|` matrix of EV-to-station distances.
    pub fn distance_matrix(&self) -> Vec<f64> {
        distance_matrix(&self.evs, &self.stations)
    }
}

pub fn distance_matrix(evs: &[EvType], stations: &[StationProfile]) -> Vec<f64> {
    let mut out = Vec::with_capacity(evs.len() * stations.len());
    for ev in evs {
        out.extend(stations.iter().map(|s| distance(ev.location, s.location)));
    }
    out
}

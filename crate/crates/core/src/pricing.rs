//! Day-ahead price tables learned from Monte-Carlo dual solves.
//!
//! Each training scenario is solved with [`solve_dual`]; every `(EV,
//! station)` multiplier becomes a [`MultiplierSample`] keyed by the EV's
//! observable features relative to the station. [`build_price_table`]
//! aggregates samples per `(station, key)` and [`quote`] turns the table into
//! per-station bills for an arriving EV.
//!
//! Two quoting heuristics are provided:
//!
//! * `Static` (H1): `bill_j = price(j, key_j) * r_i`.
//! * `CongestionAdjusted` (H2): H1 scaled by
//!   `max(0, 1 + beta * (occ_j - mean_occ_j) / max(mean_occ_j, 1))`, where
//!   `occ_j` counts EVs currently parked at `j` and `mean_occ_j` is the
//!   Monte-Carlo mean occupancy seen by arrivals in the same arrival bucket.
//!
//! Elasticity is never part of a key or quote: it is not observable.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::{solve_dual, DualError, DualResult, SolverParams};
use crate::model::{distance, EvType, ModelError, StationProfile};
use crate::scenario::{sample_scenario, GenConfig, GenError, Scenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PricingError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid pricing parameter `{field}`: {reason}")]
    InvalidParameter {
        field: &'static str,
        reason: &'static str,
    },
}

/// Bucket widths and counts. Values past the last bucket fall into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketScheme {
    /// Slots per arrival bucket.
    pub arrival_width: usize,
    pub arrival_buckets: u32,
    /// Required charging slots per demand bucket; bucket 0 holds `1..=width`.
    pub demand_width: usize,
    pub demand_buckets: u32,
    /// Distance units per distance bucket.
    pub distance_width: f64,
    pub distance_buckets: u32,
}

impl BucketScheme {
    /// Six arrival buckets over the horizon, two-slot demand buckets and
    /// five distance buckets over the area diagonal.
    pub fn for_day(horizon: usize, area_diagonal: f64) -> Self {
        let arrival_width = (horizon / 6).max(1);
        Self {
            arrival_width,
            arrival_buckets: horizon.div_ceil(arrival_width) as u32,
            demand_width: 2,
            demand_buckets: 8,
            distance_width: if area_diagonal > 0.0 {
                area_diagonal / 5.0
            } else {
                1.0
            },
            distance_buckets: 5,
        }
    }

    pub fn validate(&self) -> Result<(), PricingError> {
        let bad = |field| {
            Err(PricingError::InvalidParameter {
                field,
                reason: "must be positive",
            })
        };
        if self.arrival_width == 0 {
            return bad("arrival_width");
        }
        if self.demand_width == 0 {
            return bad("demand_width");
        }
        if !(self.distance_width > 0.0) || !self.distance_width.is_finite() {
            return bad("distance_width");
        }
        if self.arrival_buckets == 0 {
            return bad("arrival_buckets");
        }
        if self.demand_buckets == 0 {
            return bad("demand_buckets");
        }
        if self.distance_buckets == 0 {
            return bad("distance_buckets");
        }
        Ok(())
    }

    pub fn arrival_bucket(&self, slot: usize) -> u32 {
        ((slot / self.arrival_width) as u32).min(self.arrival_buckets - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub arrival: u32,
    pub demand: u32,
    pub distance: u32,
}

/// Observable features of `ev` relative to `station`.
pub fn feature_bucket(ev: &EvType, station: &StationProfile, scheme: &BucketScheme) -> FeatureKey {
    let slots = ev.required_slots();
    let demand = (slots.saturating_sub(1) / scheme.demand_width).min(u32::MAX as usize) as u32;
    let l = distance(ev.location, station.location);
    let distance = libm::floor(l / scheme.distance_width).min(u32::MAX as f64) as u32;
    FeatureKey {
        arrival: scheme.arrival_bucket(ev.arrival),
        demand: demand.min(scheme.demand_buckets - 1),
        distance: distance.min(scheme.distance_buckets - 1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSample {
    pub scenario_seed: u64,
    pub station: usize,
    pub ev: usize,
    pub key: FeatureKey,
    pub lambda: f64,
    /// The EV chose this station in the final dual iterate.
    pub chosen: bool,
    /// EVs parked at this station when this EV arrived, under the final
    /// dual assignment.
    pub occupancy: u32,
}

/// Arrival processing order: arrival slot, then id.
pub fn arrival_order(evs: &[EvType]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..evs.len()).collect();
    order.sort_by_key(|&i| (evs[i].arrival, evs[i].id));
    order
}

/// Number of earlier-admitted EVs still parked at `slot`.
pub fn parked_at(slot: usize, departures: impl IntoIterator<Item = usize>) -> u32 {
    departures.into_iter().filter(|d| *d > slot).count() as u32
}

/// Converts one solved scenario into samples, ordered by EV then station.
pub fn samples_from_solution(
    scenario: &Scenario,
    stations: &[StationProfile],
    result: &DualResult,
    scheme: &BucketScheme,
) -> Vec<MultiplierSample> {
    let evs = &scenario.evs;
    let m = stations.len();
    let mut occupancy = alloc::vec![0u32; evs.len() * m];
    let mut parked: Vec<Vec<usize>> = alloc::vec![Vec::new(); m];
    for i in arrival_order(evs) {
        for j in 0..m {
            occupancy[i * m + j] = parked_at(evs[i].arrival, parked[j].iter().copied());
        }
        parked[result.assignment.choice[i]].push(evs[i].departure);
    }

    let mut out = Vec::with_capacity(evs.len() * m);
    for (i, ev) in evs.iter().enumerate() {
        for (j, station) in stations.iter().enumerate() {
            out.push(MultiplierSample {
                scenario_seed: scenario.seed,
                station: j,
                ev: i,
                key: feature_bucket(ev, station, scheme),
                lambda: result.prices.get(i, j),
                chosen: result.assignment.is_assigned(i, j),
                occupancy: occupancy[i * m + j],
            });
        }
    }
    out
}

/// Samples one scenario, solves its dual and emits its samples.
pub fn scenario_samples(
    gen: &GenConfig,
    stations: &[StationProfile],
    params: &SolverParams,
    scheme: &BucketScheme,
    seed: u64,
) -> Result<Vec<MultiplierSample>, PricingError> {
    let scenario = sample_scenario(gen, stations, seed)?;
    let realised = scenario.stations(stations);
    let instance = scenario.instance(stations)?;
    let result = solve_dual(&instance, params)?;
    Ok(samples_from_solution(&scenario, &realised, &result, scheme))
}

/// Runs scenarios `seed, seed + 1, ..., seed + count - 1` in order.
pub fn run_monte_carlo(
    gen: &GenConfig,
    stations: &[StationProfile],
    params: &SolverParams,
    scheme: &BucketScheme,
    count: usize,
    seed: u64,
) -> Result<Vec<MultiplierSample>, PricingError> {
    gen.validate()?;
    params.validate()?;
    scheme.validate()?;
    let mut out = Vec::new();
    for k in 0..count {
        out.extend(scenario_samples(
            gen,
            stations,
            params,
            scheme,
            seed.wrapping_add(k as u64),
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Aggregation {
    #[default]
    Mean,
    /// Nearest-rank quantile: the `ceil(q * n)`-th smallest sample.
    Quantile { q: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableOptions {
    pub aggregation: Aggregation,
    /// Aggregate only samples whose EV chose the station.
    pub chosen_only: bool,
    /// Price for keys without samples.
    pub fallback: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::Mean,
            chosen_only: true,
            fallback: 0.0,
        }
    }
}

impl TableOptions {
    pub fn validate(&self) -> Result<(), PricingError> {
        if let Aggregation::Quantile { q } = self.aggregation {
            if !(0.0..=1.0).contains(&q) {
                return Err(PricingError::InvalidParameter {
                    field: "q",
                    reason: "quantile must lie in [0, 1]",
                });
            }
        }
        if !(self.fallback >= 0.0) || !self.fallback.is_finite() {
            return Err(PricingError::InvalidParameter {
                field: "fallback",
                reason: "must be nonnegative and finite",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceEntry {
    pub station: usize,
    pub key: FeatureKey,
    pub price: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyEntry {
    pub station: usize,
    pub arrival_bucket: u32,
    pub mean: f64,
}

/// Immutable per-station price table. Entries are sorted by
/// `(station, key)`, occupancy by `(station, arrival_bucket)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub scheme: BucketScheme,
    pub options: TableOptions,
    pub entries: Vec<PriceEntry>,
    pub occupancy: Vec<OccupancyEntry>,
}

impl PriceTable {
    /// Aggregated price for `(station, key)`, or the fallback.
    pub fn price(&self, station: usize, key: FeatureKey) -> f64 {
        self.entries
            .binary_search_by(|e| (e.station, e.key).cmp(&(station, key)))
            .map(|k| self.entries[k].price)
            .unwrap_or(self.options.fallback)
    }

    pub fn mean_occupancy(&self, station: usize, arrival_bucket: u32) -> Option<f64> {
        self.occupancy
            .binary_search_by(|e| (e.station, e.arrival_bucket).cmp(&(station, arrival_bucket)))
            .ok()
            .map(|k| self.occupancy[k].mean)
    }
}

fn aggregate(values: &mut [f64], aggregation: Aggregation) -> f64 {
    match aggregation {
        Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregation::Quantile { q } => {
            values.sort_by(f64::total_cmp);
            let rank = libm::ceil(q * values.len() as f64) as usize;
            values[rank.clamp(1, values.len()) - 1]
        }
    }
}

/// Aggregates samples per `(station, key)`. Occupancy means use every
/// sample regardless of `chosen_only`.
pub fn build_price_table(
    samples: &[MultiplierSample],
    scheme: &BucketScheme,
    options: &TableOptions,
) -> Result<PriceTable, PricingError> {
    scheme.validate()?;
    options.validate()?;

    let mut priced: Vec<(usize, FeatureKey, f64)> = samples
        .iter()
        .filter(|s| s.chosen || !options.chosen_only)
        .map(|s| (s.station, s.key, s.lambda))
        .collect();
    // Stable: sample order within a group is preserved for the mean.
    priced.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut entries = Vec::new();
    let mut start = 0;
    while start < priced.len() {
        let (station, key, _) = priced[start];
        let end = start
            + priced[start..]
                .iter()
                .take_while(|p| p.0 == station && p.1 == key)
                .count();
        let mut values: Vec<f64> = priced[start..end].iter().map(|p| p.2).collect();
        entries.push(PriceEntry {
            station,
            key,
            price: aggregate(&mut values, options.aggregation).max(0.0),
            samples: end - start,
        });
        start = end;
    }

    let mut occ: Vec<(usize, u32, u32)> = samples
        .iter()
        .map(|s| (s.station, s.key.arrival, s.occupancy))
        .collect();
    occ.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut occupancy = Vec::new();
    let mut start = 0;
    while start < occ.len() {
        let (station, bucket, _) = occ[start];
        let group = occ[start..]
            .iter()
            .take_while(|o| o.0 == station && o.1 == bucket);
        let (count, sum) = group.fold((0usize, 0u64), |(c, s), o| (c + 1, s + o.2 as u64));
        occupancy.push(OccupancyEntry {
            station,
            arrival_bucket: bucket,
            mean: sum as f64 / count as f64,
        });
        start += count;
    }

    Ok(PriceTable {
        scheme: scheme.clone(),
        options: options.clone(),
        entries,
        occupancy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Heuristic {
    /// H1: static table price times required slots.
    Static,
    /// H2: H1 scaled by live occupancy against the Monte-Carlo mean.
    CongestionAdjusted { beta: f64 },
}

impl Default for Heuristic {
    fn default() -> Self {
        Heuristic::CongestionAdjusted { beta: 0.5 }
    }
}

impl Heuristic {
    pub fn validate(&self) -> Result<(), PricingError> {
        match self {
            Heuristic::CongestionAdjusted { beta } if !beta.is_finite() => {
                Err(PricingError::InvalidParameter {
                    field: "beta",
                    reason: "must be finite",
                })
            }
            _ => Ok(()),
        }
    }
}

/// Bills offered to `ev` at every station. `occupancy[j]` is the number of
/// EVs currently parked at station `j`.
pub fn quote(
    table: &PriceTable,
    ev: &EvType,
    stations: &[StationProfile],
    occupancy: &[u32],
    heuristic: Heuristic,
) -> Vec<f64> {
    let slots = ev.required_slots() as f64;
    stations
        .iter()
        .enumerate()
        .map(|(j, station)| {
            let key = feature_bucket(ev, station, &table.scheme);
            let base = table.price(j, key) * slots;
            let bill = match heuristic {
                Heuristic::Static => base,
                Heuristic::CongestionAdjusted { beta } => {
                    let live = occupancy.get(j).copied().unwrap_or(0) as f64;
                    let mean = table.mean_occupancy(j, key.arrival).unwrap_or(live);
                    base * (1.0 + beta * (live - mean) / mean.max(1.0)).max(0.0)
                }
            };
            if bill.is_finite() {
                bill.max(0.0)
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point;
    use alloc::vec;

    fn ev(arrival: usize, energy: f64, rate: f64, x: f64) -> EvType {
        EvType {
            id: 0,
            arrival,
            departure: arrival + 10,
            energy,
            rate,
            location: Point::new(x, 0.0),
            elasticity: 1.0,
        }
    }

    fn station(id: usize) -> StationProfile {
        StationProfile {
            id,
            location: Point::default(),
            capacity: vec![1.0; 48],
        }
    }

    fn scheme() -> BucketScheme {
        BucketScheme::for_day(48, 10.0 * core::f64::consts::SQRT_2)
    }

    fn sample(station: usize, key: FeatureKey, lambda: f64, chosen: bool) -> MultiplierSample {
        MultiplierSample {
            scenario_seed: 0,
            station,
            ev: 0,
            key,
            lambda,
            chosen,
            occupancy: 0,
        }
    }

    #[test]
    fn default_scheme() {
        let s = scheme();
        assert_eq!(s.arrival_width, 8);
        assert_eq!(s.arrival_buckets, 6);
        assert_eq!(s.demand_width, 2);
    }

    #[test]
    fn buckets() {
        let s = scheme();
        let st = station(0);
        let k = feature_bucket(&ev(0, 6.0, 2.0, 1.0), &st, &s);
        assert_eq!(k.arrival, 0);
        // r = 3 with width 2 lands in the second bucket.
        assert_eq!(k.demand, 1);
        assert_eq!(k, feature_bucket(&ev(0, 6.0, 2.0, 1.0), &st, &s));
        let far = feature_bucket(&ev(47, 2.0, 2.0, 1e6), &st, &s);
        assert_eq!(far.arrival, 5);
        assert_eq!(far.distance, 4);
        assert_eq!(far.demand, 0);
    }

    #[test]
    fn empty_samples_resolve_to_fallback() {
        let t = build_price_table(&[], &scheme(), &TableOptions::default()).unwrap();
        assert!(t.entries.is_empty());
        let key = FeatureKey {
            arrival: 1,
            demand: 2,
            distance: 3,
        };
        assert_eq!(t.price(4, key), 0.0);
    }

    #[test]
    fn mean_and_quantile() {
        let key = FeatureKey {
            arrival: 0,
            demand: 0,
            distance: 0,
        };
        let s = [sample(0, key, 2.0, true), sample(0, key, 4.0, true), sample(0, key, 100.0, false)];
        let t = build_price_table(&s, &scheme(), &TableOptions::default()).unwrap();
        assert_eq!(t.price(0, key), 3.0);
        let s = [sample(1, key, 9.0, true), sample(1, key, 1.0, true), sample(1, key, 2.0, true)];
        let opts = TableOptions {
            aggregation: Aggregation::Quantile { q: 0.5 },
            ..TableOptions::default()
        };
        assert_eq!(build_price_table(&s, &scheme(), &opts).unwrap().price(1, key), 2.0);
        let opts = TableOptions {
            aggregation: Aggregation::Quantile { q: 0.0 },
            ..TableOptions::default()
        };
        assert_eq!(build_price_table(&s, &scheme(), &opts).unwrap().price(1, key), 1.0);
    }

    #[test]
    fn all_pairs_option() {
        let key = FeatureKey {
            arrival: 0,
            demand: 0,
            distance: 0,
        };
        let s = [sample(0, key, 2.0, true), sample(0, key, 4.0, false)];
        let opts = TableOptions {
            chosen_only: false,
            ..TableOptions::default()
        };
        assert_eq!(build_price_table(&s, &scheme(), &opts).unwrap().price(0, key), 3.0);
    }

    fn table_with(price: f64, mean_occ: f64) -> PriceTable {
        let s = scheme();
        let e = ev(0, 4.0, 2.0, 1.0);
        let key = feature_bucket(&e, &station(0), &s);
        PriceTable {
            scheme: s,
            options: TableOptions::default(),
            entries: vec![PriceEntry {
                station: 0,
                key,
                price,
                samples: 1,
            }],
            occupancy: vec![OccupancyEntry {
                station: 0,
                arrival_bucket: key.arrival,
                mean: mean_occ,
            }],
        }
    }

    #[test]
    fn static_quote() {
        let t = table_with(1.5, 2.0);
        let bills = quote(&t, &ev(0, 4.0, 2.0, 1.0), &[station(0)], &[0], Heuristic::Static);
        assert_eq!(bills, vec![3.0]);
    }

    #[test]
    fn congestion_adjustment() {
        let t = table_with(1.5, 2.0);
        let e = ev(0, 4.0, 2.0, 1.0);
        let h2 = |occ, beta| quote(&t, &e, &[station(0)], &[occ], Heuristic::CongestionAdjusted { beta })[0];
        assert_eq!(h2(2, 0.5), 3.0);
        assert_eq!(h2(4, 0.5), 3.0 * 1.5);
        assert_eq!(h2(0, 50.0), 0.0);
    }

    #[test]
    fn quotes_ignore_elasticity() {
        let t = table_with(1.5, 2.0);
        let mut e = ev(0, 4.0, 2.0, 1.0);
        let a = quote(&t, &e, &[station(0)], &[3], Heuristic::default());
        e.elasticity = 1e6;
        assert_eq!(a, quote(&t, &e, &[station(0)], &[3], Heuristic::default()));
    }

    #[test]
    fn occupancy_counts_parked() {
        assert_eq!(parked_at(5, [3, 5, 6, 9]), 2);
    }
}

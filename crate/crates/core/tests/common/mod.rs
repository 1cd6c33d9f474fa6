#![allow(dead_code)]

use evcs_core::model::{EvType, Instance, Point, StationProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct Limits {
    pub max_evs: usize,
    pub max_stations: usize,
    pub max_slots: usize,
}

pub const SMALL: Limits = Limits {
    max_evs: 5,
    max_stations: 3,
    max_slots: 8,
};

/// Random valid instance within `limits`. Rates are drawn from {1, 2, 3} and
/// capacities from small integers, so congestion is common.
pub fn random_instance(seed: u64, limits: &Limits) -> Instance {
    let mut rng = rng(seed);
    let horizon = rng.random_range(2..=limits.max_slots);
    let n = rng.random_range(1..=limits.max_evs);
    let m = rng.random_range(1..=limits.max_stations);
    let stations = (0..m)
        .map(|id| StationProfile {
            id,
            location: Point::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)),
            capacity: (0..horizon).map(|_| rng.random_range(0..=6) as f64).collect(),
        })
        .collect();
    let evs = (0..n)
        .map(|id| {
            let arrival = rng.random_range(0..horizon);
            let departure = rng.random_range(arrival + 1..=horizon);
            let rate = [1.0, 2.0, 3.0][rng.random_range(0..3)];
            let slots = rng.random_range(0..=(departure - arrival).min(3));
            EvType {
                id,
                arrival,
                departure,
                energy: slots as f64 * rate - rng.random_range(0.0..0.5) * rate.min(slots as f64),
                rate,
                location: Point::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)),
                elasticity: rng.random_range(0.0..3.0),
            }
        })
        .collect();
    Instance::new(horizon, stations, evs).expect("generator emits valid instances")
}

/// Independent check of binary charging plans: `plan[k]` lists the slots of
/// `members[k]`. Checks availability, no repeats, per-slot capacity, and
/// either exact (`exact`) or at-most delivery of `ceil(E/e)` slots.
pub fn valid_plan(
    station: &StationProfile,
    evs: &[EvType],
    members: &[usize],
    plan: &[Vec<usize>],
    exact: bool,
) -> bool {
    let mut load = vec![0.0f64; station.capacity.len()];
    for (k, &i) in members.iter().enumerate() {
        let ev = &evs[i];
        let mut seen = std::collections::BTreeSet::new();
        for &t in &plan[k] {
            if t < ev.arrival || t >= ev.departure || t >= load.len() || !seen.insert(t) {
                return false;
            }
            load[t] += ev.rate;
        }
        let need = (ev.energy / ev.rate - 1e-9).ceil().max(0.0) as usize;
        if (exact && seen.len() != need) || seen.len() > need {
            return false;
        }
    }
    load.iter()
        .zip(&station.capacity)
        .all(|(l, c)| *l <= c + 1e-9)
}

/// Brute-force optimum: every assignment, and for each station every
/// combination of per-EV slot subsets. Returns `(cost, choice)` with ties to
/// the lexicographically smallest choice vector, or `None` if infeasible.
pub fn brute_force_optimum(inst: &Instance) -> Option<(f64, Vec<usize>)> {
    let n = inst.evs.len();
    let m = inst.stations.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let total = m.pow(n as u32);
    for code in 0..total {
        let mut choice = vec![0; n];
        let mut c = code;
        for i in (0..n).rev() {
            choice[i] = c % m;
            c /= m;
        }
        let ok = (0..m).all(|j| {
            let members: Vec<usize> = (0..n).filter(|&i| choice[i] == j).collect();
            station_set_schedulable(&inst.stations[j], &inst.evs, &members)
        });
        if !ok {
            continue;
        }
        let cost: f64 = choice
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                let ev = &inst.evs[i];
                let s = &inst.stations[j];
                let l = ((ev.location.x - s.location.x).powi(2) + (ev.location.y - s.location.y).powi(2)).sqrt();
                ev.elasticity * l * l
            })
            .sum();
        if best.as_ref().is_none_or(|(b, _)| cost < *b - 1e-12) {
            best = Some((cost, choice));
        }
    }
    best
}

/// Tries every combination of slot bitmasks for `members`.
pub fn station_set_schedulable(station: &StationProfile, evs: &[EvType], members: &[usize]) -> bool {
    let tau = station.capacity.len();
    let options: Vec<Vec<Vec<usize>>> = members
        .iter()
        .map(|&i| {
            let ev = &evs[i];
            let need = (ev.energy / ev.rate - 1e-9).ceil().max(0.0) as usize;
            (0u32..1 << tau)
                .filter(|mask| mask.count_ones() as usize == need)
                .map(|mask| (0..tau).filter(|t| mask & (1 << t) != 0).collect::<Vec<_>>())
                .filter(|slots| slots.iter().all(|&t| t >= ev.arrival && t < ev.departure))
                .collect()
        })
        .collect();
    let mut pick = vec![0usize; members.len()];
    if options.iter().any(Vec::is_empty) {
        return false;
    }
    loop {
        let plan: Vec<Vec<usize>> = pick.iter().zip(&options).map(|(&p, o)| o[p].clone()).collect();
        if valid_plan(station, evs, members, &plan, true) {
            return true;
        }
        let mut k = 0;
        loop {
            if k == members.len() {
                return false;
            }
            pick[k] += 1;
            if pick[k] < options[k].len() {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
    }
}

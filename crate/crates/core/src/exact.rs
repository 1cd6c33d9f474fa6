//! Exhaustive ground truth for small instances.
//!
//! [`feasible_schedule`] decides whether a set of EVs can all receive their
//! `r_i` whole charging slots at one station, by depth-first search over
//! the set of EVs charging in each slot. [`optimal_assignment`] finds the
//! minimum total disutility over all assignments whose station sets are
//! schedulable.
//! Both count search nodes against a budget and fail loudly rather than
//! return an unproven answer.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::Assignment;
use crate::model::{disutility, fits, EvType, Instance, ModelError, StationProfile};

pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("search budget of {budget} nodes exceeded")]
    BudgetExceeded { budget: u64 },
    #[error("exact assignment supports at most 64 evs, got {0}")]
    TooManyEvs(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Whole-slot charging plan for the EVs assigned to one station.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinarySchedule {
    pub station: usize,
    /// EV ids, in the order of `slots`.
    pub evs: Vec<usize>,
    /// Charging slots of each EV, increasing.
    pub slots: Vec<Vec<usize>>,
}

impl BinarySchedule {
    pub fn empty(station: usize) -> Self {
        Self {
            station,
            evs: Vec::new(),
            slots: Vec::new(),
        }
    }

    pub fn slots_of(&self, ev: usize) -> Option<&[usize]> {
        self.evs
            .iter()
            .position(|e| *e == ev)
            .map(|k| self.slots[k].as_slice())
    }

    /// Dense `|S_j| x tau` 0/1 matrix.
    pub fn to_matrix(&self, horizon: usize) -> Vec<Vec<u8>> {
        self.slots
            .iter()
            .map(|s| {
                let mut row = vec![0u8; horizon];
                for &t in s {
                    row[t] = 1;
                }
                row
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub cost: f64,
    pub assignment: Assignment,
    pub schedules: Vec<BinarySchedule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ScheduleViolation {
    #[error("ev {ev} charges at slot {slot} outside its window")]
    OutsideWindow { ev: usize, slot: usize },
    #[error("ev {ev} lists slot {slot} twice or out of order")]
    RepeatedSlot { ev: usize, slot: usize },
    #[error("slot {slot} load exceeds capacity")]
    Overload { slot: usize },
    #[error("ev {ev} receives {got} slots, needs {need}")]
    WrongCount { ev: usize, got: usize, need: usize },
}

/// Checks binary charging (slot lists), capacity and availability, and
/// either the exact slot requirement (`exact_delivery`) or that no EV gets
/// more than it needs.
pub fn check_schedule(
    station: &StationProfile,
    evs: &[EvType],
    schedule: &BinarySchedule,
    exact_delivery: bool,
) -> Result<(), ScheduleViolation> {
    let mut load = vec![0.0; station.capacity.len()];
    for (&id, slots) in schedule.evs.iter().zip(&schedule.slots) {
        let ev = &evs[id];
        let mut prev: Option<usize> = None;
        for &t in slots {
            if prev.is_some_and(|p| p >= t) {
                return Err(ScheduleViolation::RepeatedSlot { ev: id, slot: t });
            }
            prev = Some(t);
            if !ev.is_available(t) || t >= load.len() {
                return Err(ScheduleViolation::OutsideWindow { ev: id, slot: t });
            }
            load[t] += ev.rate;
        }
        let need = ev.required_slots();
        let got = slots.len();
        if (exact_delivery && got != need) || got > need {
            return Err(ScheduleViolation::WrongCount { ev: id, got, need });
        }
    }
    for (slot, (l, c)) in load.iter().zip(&station.capacity).enumerate() {
        if !fits(*l, 0.0, *c) {
            return Err(ScheduleViolation::Overload { slot });
        }
    }
    Ok(())
}

/// Failed-state memo entries kept per search.
const MEMO_LIMIT: usize = 1 << 18;

/// Slot-by-slot search. At each slot it picks which EVs charge, among
/// subsets that cannot take one more EV: if some EV still fits at `t` and
/// charges later anyway, moving one of its later slots to `t` keeps the
/// schedule feasible. EVs that agree on rate, departure and remaining need
/// are interchangeable, so only their count is chosen.
struct Search<'a> {
    capacity: &'a [f64],
    evs: Vec<&'a EvType>,
    remaining: Vec<usize>,
    /// `usable[k][t]`: slots in `t..d_k` whose capacity admits EV `k`'s rate.
    usable: Vec<Vec<usize>>,
    /// Prefix sums of capacity.
    supply: Vec<f64>,
    picks: Vec<Vec<usize>>,
    failed: BTreeSet<(usize, Vec<u16>)>,
    nodes: &'a mut u64,
    budget: u64,
}

struct Class {
    members: Vec<usize>,
    rate: f64,
    forced: bool,
}

impl<'a> Search<'a> {
    fn new(capacity: &'a [f64], evs: Vec<&'a EvType>, nodes: &'a mut u64, budget: u64) -> Self {
        let tau = capacity.len();
        let usable = evs
            .iter()
            .map(|ev| {
                let mut row = vec![0; tau + 1];
                for t in (0..tau).rev() {
                    let open = ev.is_available(t) && fits(0.0, ev.rate, capacity[t]);
                    row[t] = row[t + 1] + usize::from(open);
                }
                row
            })
            .collect();
        let mut supply = vec![0.0; tau + 1];
        for (t, c) in capacity.iter().enumerate() {
            supply[t + 1] = supply[t] + c;
        }
        let count = evs.len();
        Self {
            capacity,
            remaining: evs.iter().map(|e| e.required_slots()).collect(),
            evs,
            usable,
            supply,
            picks: vec![Vec::new(); count],
            failed: BTreeSet::new(),
            nodes,
            budget,
        }
    }

    /// Necessary conditions from slot `t` on: every EV has enough usable
    /// slots left, and the energy owed by EVs leaving by each deadline fits
    /// the capacity up to it.
    fn viable(&self, t: usize) -> bool {
        let tau = self.capacity.len();
        let mut owed = 0.0;
        for (k, ev) in self.evs.iter().enumerate() {
            let r = self.remaining[k];
            if r == 0 {
                continue;
            }
            if self.usable[k][t.min(tau)] < r {
                return false;
            }
            // `evs` is sorted by departure.
            owed += r as f64 * ev.rate;
            let end = ev.departure.min(tau);
            if !fits(owed, 0.0, self.supply[end] - self.supply[t.min(end)]) {
                return false;
            }
        }
        true
    }

    fn run(&mut self, t: usize) -> Result<bool, OracleError> {
        if self.remaining.iter().all(|&r| r == 0) {
            return Ok(true);
        }
        if t >= self.capacity.len() || !self.viable(t) {
            return Ok(false);
        }
        let key = (t, self.remaining.iter().map(|&r| r as u16).collect::<Vec<_>>());
        if self.failed.contains(&key) {
            return Ok(false);
        }

        let mut open: Vec<usize> = (0..self.evs.len())
            .filter(|&k| {
                let ev = self.evs[k];
                self.remaining[k] > 0 && ev.is_available(t) && fits(0.0, ev.rate, self.capacity[t])
            })
            .collect();
        let slack = |k: usize| self.usable[k][t] - self.remaining[k];
        open.sort_by(|&a, &b| {
            let (ea, eb) = (self.evs[a], self.evs[b]);
            slack(a)
                .cmp(&slack(b))
                .then(ea.departure.cmp(&eb.departure))
                .then(eb.rate.total_cmp(&ea.rate))
                .then(ea.id.cmp(&eb.id))
        });
        let mut classes: Vec<Class> = Vec::new();
        for k in open {
            let ev = self.evs[k];
            let same = classes.iter_mut().find(|c| {
                let m = c.members[0];
                c.rate == ev.rate
                    && self.evs[m].departure == ev.departure
                    && self.remaining[m] == self.remaining[k]
            });
            match same {
                Some(c) => c.members.push(k),
                None => classes.push(Class {
                    members: vec![k],
                    rate: ev.rate,
                    forced: slack(k) == 0,
                }),
            }
        }

        let mut counts = vec![0; classes.len()];
        let found = self.choose(t, &classes, 0, 0.0, &mut counts)?;
        if !found && self.failed.len() < MEMO_LIMIT {
            self.failed.insert(key);
        }
        Ok(found)
    }

    fn choose(
        &mut self,
        t: usize,
        classes: &[Class],
        ci: usize,
        load: f64,
        counts: &mut Vec<usize>,
    ) -> Result<bool, OracleError> {
        let cap = self.capacity[t];
        if ci == classes.len() {
            let maximal = classes
                .iter()
                .zip(counts.iter())
                .all(|(c, &n)| n == c.members.len() || !fits(load, c.rate, cap));
            if !maximal {
                return Ok(false);
            }
            *self.nodes += 1;
            if *self.nodes > self.budget {
                return Err(OracleError::BudgetExceeded {
                    budget: self.budget,
                });
            }
            let chosen: Vec<usize> = classes
                .iter()
                .zip(counts.iter())
                .flat_map(|(c, &n)| c.members[..n].iter().copied())
                .collect();
            for &k in &chosen {
                self.remaining[k] -= 1;
                self.picks[k].push(t);
            }
            let found = self.run(t + 1)?;
            if !found {
                for &k in &chosen {
                    self.remaining[k] += 1;
                    self.picks[k].pop();
                }
            }
            return Ok(found);
        }

        let class = &classes[ci];
        let mut most = 0;
        let mut l = load;
        while most < class.members.len() && fits(l, class.rate, cap) {
            l += class.rate;
            most += 1;
        }
        let least = if class.forced { class.members.len() } else { 0 };
        if least > most {
            return Ok(false);
        }
        for n in (least..=most).rev() {
            counts[ci] = n;
            if self.choose(t, classes, ci + 1, load + n as f64 * class.rate, counts)? {
                return Ok(true);
            }
        }
        counts[ci] = 0;
        Ok(false)
    }
}

/// Finds a binary schedule delivering every assigned EV its `r_i` slots, or
/// `None` when none exists. The first branch tried at each slot charges the
/// least-laxity EVs first.
pub fn feasible_schedule(
    station: &StationProfile,
    assigned: &[EvType],
) -> Result<Option<BinarySchedule>, OracleError> {
    let mut nodes = 0;
    feasible_schedule_counted(station, assigned, DEFAULT_NODE_BUDGET, &mut nodes)
}

pub fn feasible_schedule_with_budget(
    station: &StationProfile,
    assigned: &[EvType],
    budget: u64,
) -> Result<Option<BinarySchedule>, OracleError> {
    let mut nodes = 0;
    feasible_schedule_counted(station, assigned, budget, &mut nodes)
}

fn feasible_schedule_counted(
    station: &StationProfile,
    assigned: &[EvType],
    budget: u64,
    nodes: &mut u64,
) -> Result<Option<BinarySchedule>, OracleError> {
    let mut evs: Vec<&EvType> = assigned.iter().collect();
    evs.sort_by_key(|e| (e.departure, e.id));
    let count = evs.len();
    let mut search = Search::new(&station.capacity, evs, nodes, budget);
    if !search.run(0)? {
        return Ok(None);
    }
    // Report in the caller's order.
    let mut evs = Vec::with_capacity(count);
    let mut slots = Vec::with_capacity(count);
    for ev in assigned {
        let k = search.evs.iter().position(|e| e.id == ev.id).unwrap_or(0);
        evs.push(ev.id);
        slots.push(core::mem::take(&mut search.picks[k]));
    }
    Ok(Some(BinarySchedule {
        station: station.id,
        evs,
        slots,
    }))
}

struct Enumeration<'a> {
    instance: &'a Instance,
    costs: Vec<f64>,
    /// Sum over EVs `i..` of their cheapest station cost.
    tail_bound: Vec<f64>,
    choice: Vec<usize>,
    masks: Vec<u64>,
    cache: BTreeMap<(usize, u64), Option<BinarySchedule>>,
    best: Option<(f64, Vec<usize>)>,
    nodes: u64,
    budget: u64,
}

impl Enumeration<'_> {
    fn schedulable(&mut self, station: usize, mask: u64) -> Result<bool, OracleError> {
        if let Some(hit) = self.cache.get(&(station, mask)) {
            return Ok(hit.is_some());
        }
        let members: Vec<EvType> = (0..self.instance.num_evs())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| self.instance.evs[i].clone())
            .collect();
        let found = feasible_schedule_counted(
            &self.instance.stations[station],
            &members,
            self.budget,
            &mut self.nodes,
        )?;
        let ok = found.is_some();
        self.cache.insert((station, mask), found);
        Ok(ok)
    }

    fn total_cost(&self) -> f64 {
        let m = self.instance.num_stations();
        self.choice
            .iter()
            .enumerate()
            .map(|(i, &j)| self.costs[i * m + j])
            .sum()
    }

    fn descend(&mut self, i: usize, partial: f64) -> Result<(), OracleError> {
        let n = self.instance.num_evs();
        let m = self.instance.num_stations();
        if i == n {
            let cost = self.total_cost();
            if self.best.as_ref().is_none_or(|(b, _)| cost < *b) {
                self.best = Some((cost, self.choice.clone()));
            }
            return Ok(());
        }
        for j in 0..m {
            self.nodes += 1;
            if self.nodes > self.budget {
                return Err(OracleError::BudgetExceeded {
                    budget: self.budget,
                });
            }
            let cost = partial + self.costs[i * m + j];
            if let Some((best, _)) = &self.best {
                let bound = cost + self.tail_bound[i + 1];
                if bound > *best + 1e-12 * best.abs().max(1.0) {
                    continue;
                }
            }
            let mask = self.masks[j] | (1 << i);
            if !self.schedulable(j, mask)? {
                continue;
            }
            let previous = self.masks[j];
            self.masks[j] = mask;
            self.choice[i] = j;
            self.descend(i + 1, cost)?;
            self.masks[j] = previous;
        }
        Ok(())
    }
}

/// Minimum-disutility assignment whose every station set is schedulable.
///
/// Assignments are explored as choice vectors in lexicographic order with
/// branch-and-bound; among equal costs the lexicographically smallest choice
/// vector wins. `Ok(None)` means no assignment can be scheduled.
pub fn optimal_assignment(instance: &Instance) -> Result<Option<ExactSolution>, OracleError> {
    optimal_assignment_with_budget(instance, DEFAULT_NODE_BUDGET)
}

pub fn optimal_assignment_with_budget(
    instance: &Instance,
    budget: u64,
) -> Result<Option<ExactSolution>, OracleError> {
    instance.validate()?;
    let n = instance.num_evs();
    let m = instance.num_stations();
    if n > 64 {
        return Err(OracleError::TooManyEvs(n));
    }
    if n == 0 {
        return Ok(Some(ExactSolution {
            cost: 0.0,
            assignment: Assignment {
                num_stations: m,
                choice: Vec::new(),
            },
            schedules: (0..m).map(BinarySchedule::empty).collect(),
        }));
    }
    if m == 0 {
        return Ok(None);
    }

    let distances = instance.distance_matrix();
    let costs: Vec<f64> = distances
        .iter()
        .enumerate()
        .map(|(k, l)| disutility(instance.evs[k / m].elasticity, *l))
        .collect();
    let mut tail_bound = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let cheapest = costs[i * m..(i + 1) * m]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        tail_bound[i] = tail_bound[i + 1] + cheapest;
    }

    let mut search = Enumeration {
        instance,
        costs,
        tail_bound,
        choice: vec![0; n],
        masks: vec![0; m],
        cache: BTreeMap::new(),
        best: None,
        nodes: 0,
        budget,
    };
    search.descend(0, 0.0)?;

    let Some((cost, choice)) = search.best.take() else {
        return Ok(None);
    };
    let mut schedules = Vec::with_capacity(m);
    for j in 0..m {
        let mask = choice
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == j)
            .fold(0u64, |acc, (i, _)| acc | (1 << i));
        let schedule = if mask == 0 {
            BinarySchedule::empty(j)
        } else {
            search
                .cache
                .get(&(j, mask))
                .cloned()
                .flatten()
                .unwrap_or_else(|| BinarySchedule::empty(j))
        };
        schedules.push(schedule);
    }
    Ok(Some(ExactSolution {
        cost,
        assignment: Assignment {
            num_stations: m,
            choice,
        },
        schedules,
    }))
}

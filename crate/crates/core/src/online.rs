//! Online replay of a day.
//!
//! EVs arrive in `(arrival, id)` order and each makes a one-off station
//! choice: either against quoted bills from a [`PriceTable`] or through the
//! first-come-first-serve benchmark, which admits an EV at the nearest
//! station that can still schedule its whole admitted set. After the last
//! arrival each station realises binary schedules with earliest-deadline-
//! first charging, and the day is summarised in a [`DayReport`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::exact::{
    feasible_schedule_with_budget, optimal_assignment_with_budget, BinarySchedule, OracleError,
};
use crate::model::{disutility, distance, fits, EvType, ModelError, StationProfile};
use crate::pricing::{arrival_order, parked_at, quote, Heuristic, PriceTable};
use crate::scenario::Scenario;

/// Search nodes allowed per FCFS admission check before falling back to the
/// aggregate capacity test.
pub const DEFAULT_ADMISSION_BUDGET: u64 = 20_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("no day reports to summarise")]
    NoReports,
    #[error("{reports} reports but {optima} optimum costs")]
    LengthMismatch { reports: usize, optima: usize },
    #[error("reports mix policies")]
    MixedPolicies,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Priced,
    Fcfs,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Priced => "priced",
            PolicyKind::Fcfs => "fcfs",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Priced {
        table: &'a PriceTable,
        heuristic: Heuristic,
    },
    Fcfs,
}

impl Policy<'_> {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Priced { .. } => PolicyKind::Priced,
            Policy::Fcfs => PolicyKind::Fcfs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub admission_budget: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            admission_budget: DEFAULT_ADMISSION_BUDGET,
        }
    }
}

/// Mutable per-station state during a day.
#[derive(Debug, Clone, PartialEq)]
pub struct StationState {
    pub station: usize,
    /// Admitted EV ids in admission order.
    pub admitted: Vec<usize>,
    /// Capacity left after the committed schedule.
    pub residual: Vec<f64>,
    pub committed: BinarySchedule,
}

impl StationState {
    pub fn new(station: &StationProfile) -> Self {
        Self {
            station: station.id,
            admitted: Vec::new(),
            residual: station.capacity.clone(),
            committed: BinarySchedule::empty(station.id),
        }
    }

    /// EVs of `evs` admitted here and still parked at `slot`.
    pub fn parked_at(&self, slot: usize, evs: &[EvType]) -> u32 {
        parked_at(slot, self.admitted.iter().map(|&i| evs[i].departure))
    }
}

/// Earliest-deadline-first charging of `members` (ids into `evs`).
///
/// At each slot, available EVs with slots still owed are charged in
/// `(departure, id)` order whenever their rate still fits; an EV that does
/// not fit is skipped and smaller ones behind it may still charge. EVs whose
/// remaining usable slots equal their remaining need jump the queue.
pub fn edf_schedule(station: &StationProfile, members: &[usize], evs: &[EvType]) -> BinarySchedule {
    let mut remaining: Vec<usize> = members.iter().map(|&i| evs[i].required_slots()).collect();
    let mut slots = vec![Vec::new(); members.len()];
    let mut by_deadline: Vec<usize> = (0..members.len()).collect();
    by_deadline.sort_by_key(|&k| (evs[members[k]].departure, evs[members[k]].id));

    let horizon = station.capacity.len();
    for (t, &capacity) in station.capacity.iter().enumerate() {
        // EVs with no slack left go first, the rest keep deadline order.
        let mut queue = by_deadline.clone();
        queue.sort_by_key(|&k| {
            let ev = &evs[members[k]];
            let left = (t.max(ev.arrival)..ev.departure.min(horizon))
                .filter(|&s| fits(0.0, ev.rate, station.capacity[s]))
                .count();
            left > remaining[k]
        });
        let mut load = 0.0;
        for &k in &queue {
            let ev = &evs[members[k]];
            if remaining[k] == 0 || !ev.is_available(t) {
                continue;
            }
            if fits(load, ev.rate, capacity) {
                load += ev.rate;
                remaining[k] -= 1;
                slots[k].push(t);
            }
        }
    }
    BinarySchedule {
        station: station.id,
        evs: members.to_vec(),
        slots,
    }
}

/// Finalises the station's schedule. Returns the schedule and the unmet
/// energy `sum_i (r_i - delivered_i) * e_i`.
///
/// EDF runs first; if it leaves demand unmet, the exact search (within
/// `budget` nodes) replaces it whenever it finds a full schedule.
pub fn commit_schedules(
    state: &mut StationState,
    station: &StationProfile,
    evs: &[EvType],
    budget: u64,
) -> (BinarySchedule, f64) {
    let mut schedule = edf_schedule(station, &state.admitted, evs);
    if !delivers_all(&schedule, evs) {
        let set: Vec<EvType> = state.admitted.iter().map(|&i| evs[i].clone()).collect();
        if let Ok(Some(full)) = feasible_schedule_with_budget(station, &set, budget) {
            schedule = full;
        }
    }
    let mut residual = station.capacity.clone();
    let mut unmet = 0.0;
    for (&i, slots) in schedule.evs.iter().zip(&schedule.slots) {
        let ev = &evs[i];
        for &t in slots {
            residual[t] = (residual[t] - ev.rate).max(0.0);
        }
        unmet += ev.required_slots().saturating_sub(slots.len()) as f64 * ev.rate;
    }
    state.residual = residual;
    state.committed = schedule.clone();
    (schedule, unmet)
}

fn delivers_all(schedule: &BinarySchedule, evs: &[EvType]) -> bool {
    schedule
        .evs
        .iter()
        .zip(&schedule.slots)
        .all(|(&i, s)| s.len() == evs[i].required_slots())
}

/// Necessary condition used when the exact search runs out of budget: every
/// EV has enough slots on its own, and for every interval `[s, e)` bounded by
/// an arrival and a departure the energy of EVs confined to it fits the
/// capacity inside it.
pub fn aggregate_capacity_check(station: &StationProfile, members: &[&EvType]) -> bool {
    let cap = &station.capacity;
    let individual = members.iter().all(|ev| {
        ev.window()
            .filter(|&t| t < cap.len() && fits(0.0, ev.rate, cap[t]))
            .count()
            >= ev.required_slots()
    });
    if !individual {
        return false;
    }
    let mut prefix = vec![0.0; cap.len() + 1];
    for (t, c) in cap.iter().enumerate() {
        prefix[t + 1] = prefix[t] + c;
    }
    members.iter().all(|first| {
        members.iter().all(|last| {
            let (s, e) = (first.arrival, last.departure.min(cap.len()));
            if s >= e {
                return true;
            }
            let demand: f64 = members
                .iter()
                .filter(|m| m.arrival >= s && m.departure <= e)
                .map(|m| m.required_slots() as f64 * m.rate)
                .sum();
            fits(demand, 0.0, prefix[e] - prefix[s])
        })
    })
}

/// Whether `members` can all be fully served: EDF first, then exact search,
/// then the aggregate check if the search exceeds `budget`.
pub fn admissible(station: &StationProfile, members: &[usize], evs: &[EvType], budget: u64) -> bool {
    if delivers_all(&edf_schedule(station, members, evs), evs) {
        return true;
    }
    let set: Vec<EvType> = members.iter().map(|&i| evs[i].clone()).collect();
    match feasible_schedule_with_budget(station, &set, budget) {
        Ok(found) => found.is_some(),
        Err(_) => aggregate_capacity_check(station, &set.iter().collect::<Vec<_>>()),
    }
}

/// First-come-first-serve admission: the nearest station (ties by id) whose
/// admitted set plus `ev` stays schedulable, or `None` when none does.
pub fn fcfs_choose(
    ev: &EvType,
    states: &[StationState],
    stations: &[StationProfile],
    evs: &[EvType],
    budget: u64,
) -> Option<usize> {
    let mut order: Vec<(f64, usize)> = stations
        .iter()
        .map(|s| (distance(ev.location, s.location), s.id))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().map(|(_, j)| j).find(|&j| {
        let mut members = states[j].admitted.clone();
        members.push(ev.id);
        admissible(&stations[j], &members, evs, budget)
    })
}

/// The EV's own choice against final quoted bills: `argmin_j theta * l_j^2 +
/// bill_j`, ties to the lowest index. `None` only without stations.
pub fn priced_choose(ev: &EvType, bills: &[f64], distances_row: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, (bill, l)) in bills.iter().zip(distances_row).enumerate() {
        let cost = disutility(ev.elasticity, *l) + bill;
        if best.is_none_or(|(_, b)| cost < b) {
            best = Some((j, cost));
        }
    }
    best.map(|(j, _)| j)
}

/// Online-to-offline cost ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Finite(f64),
    /// Positive cost against a zero optimum.
    Unbounded,
}

impl Ratio {
    pub fn value(self) -> f64 {
        match self {
            Ratio::Finite(r) => r,
            Ratio::Unbounded => f64::INFINITY,
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Ratio::Finite(r) => serializer.serialize_f64(*r),
            Ratio::Unbounded => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(r) => Ok(Ratio::Finite(r)),
            Repr::Text(s) if s == "inf" => Ok(Ratio::Unbounded),
            Repr::Text(_) => Err(serde::de::Error::custom("expected a number or \"inf\"")),
        }
    }
}

/// `alg / opt`, with `0 / 0 = 1` and `alg / 0 = Unbounded` for `alg > 0`.
pub fn competitive_ratio(alg: f64, opt: f64) -> Ratio {
    if opt > 0.0 {
        Ratio::Finite(alg / opt)
    } else if alg > 0.0 {
        Ratio::Unbounded
    } else {
        Ratio::Finite(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvOutcome {
    pub ev: usize,
    /// `None` when the FCFS benchmark rejected the EV.
    pub station: Option<usize>,
    pub bill: f64,
    pub disutility: f64,
    pub required_slots: usize,
    pub delivered_slots: usize,
    pub unmet_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    pub seed: u64,
    pub policy: PolicyKind,
    /// One row per EV, by id.
    pub evs: Vec<EvOutcome>,
    /// Committed schedule of every station, by id.
    pub schedules: Vec<BinarySchedule>,
    pub social_cost: f64,
    pub revenue: f64,
    pub unmet_energy: f64,
    pub rejected: usize,
    pub opt_cost: Option<f64>,
    /// Every EV was placed and every station set is schedulable.
    pub assignment_feasible: Option<bool>,
    pub matches_optimum: Option<bool>,
    pub ratio: Option<Ratio>,
}

impl DayReport {
    pub fn choices(&self) -> Vec<Option<usize>> {
        self.evs.iter().map(|o| o.station).collect()
    }
}

/// Replays `scenario` under `policy`.
pub fn simulate_day(
    scenario: &Scenario,
    stations: &[StationProfile],
    policy: Policy<'_>,
    options: &SimOptions,
) -> Result<DayReport, SimError> {
    let instance = scenario.instance(stations)?;
    let stations = &instance.stations;
    let evs = &instance.evs;
    let m = stations.len();
    let distances = instance.distance_matrix();

    let mut states: Vec<StationState> = stations.iter().map(StationState::new).collect();
    let mut choice: Vec<Option<usize>> = vec![None; evs.len()];
    let mut bills = vec![0.0; evs.len()];

    for i in arrival_order(evs) {
        let ev = &evs[i];
        let row = &distances[i * m..(i + 1) * m];
        let picked = match policy {
            Policy::Priced { table, heuristic } => {
                let occupancy: Vec<u32> = states.iter().map(|s| s.parked_at(ev.arrival, evs)).collect();
                let quotes = quote(table, ev, stations, &occupancy, heuristic);
                priced_choose(ev, &quotes, row).inspect(|&j| bills[i] = quotes[j])
            }
            Policy::Fcfs => fcfs_choose(ev, &states, stations, evs, options.admission_budget),
        };
        if let Some(j) = picked {
            states[j].admitted.push(i);
        }
        choice[i] = picked;
    }

    let mut delivered = vec![0usize; evs.len()];
    let mut schedules = Vec::with_capacity(m);
    for (state, station) in states.iter_mut().zip(stations) {
        let (schedule, _) = commit_schedules(state, station, evs, options.admission_budget);
        for (&i, s) in schedule.evs.iter().zip(&schedule.slots) {
            delivered[i] = s.len();
        }
        schedules.push(schedule);
    }

    let mut outcomes = Vec::with_capacity(evs.len());
    for (i, ev) in evs.iter().enumerate() {
        let required = ev.required_slots();
        let (cost, unmet) = match choice[i] {
            Some(j) => (
                disutility(ev.elasticity, distances[i * m + j]),
                required.saturating_sub(delivered[i]) as f64 * ev.rate,
            ),
            None => (0.0, ev.energy),
        };
        outcomes.push(EvOutcome {
            ev: i,
            station: choice[i],
            bill: bills[i],
            disutility: cost,
            required_slots: required,
            delivered_slots: delivered[i],
            unmet_energy: unmet,
        });
    }

    Ok(DayReport {
        seed: scenario.seed,
        policy: policy.kind(),
        social_cost: outcomes.iter().map(|o| o.disutility).sum(),
        revenue: outcomes.iter().map(|o| o.bill).sum(),
        unmet_energy: outcomes.iter().map(|o| o.unmet_energy).sum(),
        rejected: outcomes.iter().filter(|o| o.station.is_none()).count(),
        evs: outcomes,
        schedules,
        opt_cost: None,
        assignment_feasible: None,
        matches_optimum: None,
        ratio: None,
    })
}

/// Solves the day offline and records the optimum, whether the policy's
/// assignment was feasible, and the competitive ratio when it was.
pub fn attach_optimum(
    report: &mut DayReport,
    scenario: &Scenario,
    stations: &[StationProfile],
    budget: u64,
) -> Result<(), SimError> {
    let instance = scenario.instance(stations)?;
    let optimum = optimal_assignment_with_budget(&instance, budget)?;

    let choices = report.choices();
    let mut feasible = choices.iter().all(Option::is_some);
    if feasible {
        for (j, station) in instance.stations.iter().enumerate() {
            let members: Vec<EvType> = choices
                .iter()
                .enumerate()
                .filter(|(_, c)| **c == Some(j))
                .map(|(i, _)| instance.evs[i].clone())
                .collect();
            if feasible_schedule_with_budget(station, &members, budget)?.is_none() {
                feasible = false;
                break;
            }
        }
    }

    report.assignment_feasible = Some(feasible);
    report.opt_cost = optimum.as_ref().map(|o| o.cost);
    report.matches_optimum = optimum.as_ref().map(|o| {
        o.assignment.choice.len() == choices.len()
            && o.assignment
                .choice
                .iter()
                .zip(&choices)
                .all(|(a, b)| Some(*a) == *b)
    });
    report.ratio = match (&optimum, feasible) {
        (Some(o), true) => Some(competitive_ratio(report.social_cost, o.cost)),
        _ => None,
    };
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub days: usize,
    pub mean_social_cost: f64,
    pub mean_revenue: f64,
    pub mean_unmet_energy: f64,
    pub mean_rejected: f64,
    /// Days with a defined ratio.
    pub ratio_days: usize,
    /// Mean over days with a finite ratio.
    pub mean_ratio: Option<f64>,
    pub max_ratio: Option<Ratio>,
    pub unbounded_days: usize,
}

/// Summarises one policy's days. `optima`, when given, overrides each
/// report's optimum cost; ratios are only formed for feasible assignments.
pub fn compute_metrics(
    reports: &[DayReport],
    optima: Option<&[Option<f64>]>,
) -> Result<PolicySummary, SimError> {
    let first = reports.first().ok_or(SimError::NoReports)?;
    if reports.iter().any(|r| r.policy != first.policy) {
        return Err(SimError::MixedPolicies);
    }
    if let Some(o) = optima {
        if o.len() != reports.len() {
            return Err(SimError::LengthMismatch {
                reports: reports.len(),
                optima: o.len(),
            });
        }
    }

    let days = reports.len();
    let mean = |f: &dyn Fn(&DayReport) -> f64| reports.iter().map(f).sum::<f64>() / days as f64;
    let mut ratios = Vec::new();
    for (k, report) in reports.iter().enumerate() {
        let opt = match optima {
            Some(o) => o[k],
            None => report.opt_cost,
        };
        if let (Some(opt), Some(true)) = (opt, report.assignment_feasible) {
            ratios.push(competitive_ratio(report.social_cost, opt));
        }
    }
    let finite: Vec<f64> = ratios
        .iter()
        .filter_map(|r| match r {
            Ratio::Finite(v) => Some(*v),
            Ratio::Unbounded => None,
        })
        .collect();
    let max_ratio = ratios
        .iter()
        .copied()
        .reduce(|a, b| if b.value() > a.value() { b } else { a });

    Ok(PolicySummary {
        policy: first.policy,
        days,
        mean_social_cost: mean(&|r| r.social_cost),
        mean_revenue: mean(&|r| r.revenue),
        mean_unmet_energy: mean(&|r| r.unmet_energy),
        mean_rejected: mean(&|r| r.rejected as f64),
        ratio_days: ratios.len(),
        mean_ratio: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        max_ratio,
        unbounded_days: ratios.len() - finite.len(),
    })
}

//! Lagrangian dual decomposition of the charging-station assignment problem.
//!
//! Relaxing the coupling between the assignment `xi_ij` and the schedule
//! `u_ij^t` with multipliers `lambda_ij` splits the problem into one choice
//! problem per EV and one fractional scheduling problem per station:
//!
//! * EV `i` picks `argmin_j theta_i * l_ij^2 + lambda_ij * r_i` ([`user_choice`]),
//! * station `j` maximises `sum_i sum_t lambda_ij * u_ij^t` under its per-slot
//!   capacity, which is a fractional knapsack per slot
//!   ([`station_relaxed_schedule`]),
//!
//! and the dual value is `g(lambda) = sum_i Q_i - sum_j R_j`. Multipliers move
//! along the coupling violation `r_i * xi_ij - sum_t u_ij^t`
//! ([`update_multipliers`]). `lambda_ij` is read as a per-slot price, so the
//! bill EV `i` would face at station `j` is `lambda_ij * r_i`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{disutility, EvType, Instance, StationProfile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DualError {
    #[error("the station set is empty")]
    NoStations,
    #[error("row length mismatch: {prices} prices, {distances} distances")]
    RowMismatch { prices: usize, distances: usize },
    #[error("invalid solver parameter `{field}`: {reason}")]
    InvalidParameter {
        field: &'static str,
        reason: &'static str,
    },
}

/// Row-major `|N| x |M|` matrix of nonnegative per-slot prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceMatrix {
    pub num_evs: usize,
    pub num_stations: usize,
    pub values: Vec<f64>,
}

impl PriceMatrix {
    pub fn zeros(num_evs: usize, num_stations: usize) -> Self {
        Self {
            num_evs,
            num_stations,
            values: vec![0.0; num_evs * num_stations],
        }
    }

    #[inline]
    pub fn get(&self, ev: usize, station: usize) -> f64 {
        self.values[ev * self.num_stations + station]
    }

    #[inline]
    pub fn set(&mut self, ev: usize, station: usize, value: f64) {
        self.values[ev * self.num_stations + station] = value;
    }

    pub fn row(&self, ev: usize) -> &[f64] {
        let m = self.num_stations;
        &self.values[ev * m..(ev + 1) * m]
    }

    pub fn column(&self, station: usize) -> Vec<f64> {
        (0..self.num_evs).map(|i| self.get(i, station)).collect()
    }

    pub fn is_valid(&self) -> bool {
        self.values.len() == self.num_evs * self.num_stations
            && self.values.iter().all(|v| *v >= 0.0 && v.is_finite())
    }
}

/// One station per EV; the binary matrix `xi` is implied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub num_stations: usize,
    pub choice: Vec<usize>,
}

impl Assignment {
    /// `xi_ij`.
    #[inline]
    pub fn is_assigned(&self, ev: usize, station: usize) -> bool {
        self.choice[ev] == station
    }

    /// The set `S_j` in increasing EV order.
    pub fn members(&self, station: usize) -> Vec<usize> {
        self.choice
            .iter()
            .enumerate()
            .filter(|(_, j)| **j == station)
            .map(|(i, _)| i)
            .collect()
    }

    /// Dense binary matrix, one row per EV.
    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        self.choice
            .iter()
            .map(|&j| (0..self.num_stations).map(|k| u8::from(k == j)).collect())
            .collect()
    }
}

/// Relaxed schedule `u_ij^t` in `[0, 1]`, laid out as `[(i * M + j) * tau + t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalSchedule {
    pub num_evs: usize,
    pub num_stations: usize,
    pub horizon: usize,
    pub values: Vec<f64>,
}

impl FractionalSchedule {
    pub fn zeros(num_evs: usize, num_stations: usize, horizon: usize) -> Self {
        Self {
            num_evs,
            num_stations,
            horizon,
            values: vec![0.0; num_evs * num_stations * horizon],
        }
    }

    #[inline]
    fn offset(&self, ev: usize, station: usize) -> usize {
        (ev * self.num_stations + station) * self.horizon
    }

    #[inline]
    pub fn get(&self, ev: usize, station: usize, slot: usize) -> f64 {
        self.values[self.offset(ev, station) + slot]
    }

    pub fn slots(&self, ev: usize, station: usize) -> &[f64] {
        let o = self.offset(ev, station);
        &self.values[o..o + self.horizon]
    }

    /// `sum_t u_ij^t`.
    pub fn total(&self, ev: usize, station: usize) -> f64 {
        self.slots(ev, station).iter().sum()
    }

    fn write_station(&mut self, station: usize, slice: &StationSchedule) {
        let tau = self.horizon;
        for ev in 0..self.num_evs {
            let o = self.offset(ev, station);
            self.values[o..o + tau].copy_from_slice(&slice.u[ev * tau..(ev + 1) * tau]);
        }
    }
}

/// Output of one station sub-problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSchedule {
    /// `u_ij^t` for this station, laid out as `[i * tau + t]`.
    pub u: Vec<f64>,
    /// Attained objective `R_j`.
    pub value: f64,
}

impl StationSchedule {
    pub fn get(&self, ev: usize, slot: usize, horizon: usize) -> f64 {
        self.u[ev * horizon + slot]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// `lambda + eps * max(0, violation)`: prices never decrease.
    PaperLiteral,
    /// `max(0, lambda + eps * violation)`: projected subgradient step.
    #[default]
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    #[default]
    Constant,
    /// `eps / sqrt(k)` at iteration `k >= 1`.
    Diminishing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub step: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub update_mode: UpdateMode,
    pub step_schedule: StepSchedule,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            step: 0.1,
            max_iters: 5000,
            tolerance: 1e-6,
            update_mode: UpdateMode::Projected,
            step_schedule: StepSchedule::Constant,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), DualError> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(DualError::InvalidParameter {
                field: "step",
                reason: "must be positive and finite",
            });
        }
        if self.max_iters == 0 {
            return Err(DualError::InvalidParameter {
                field: "max_iters",
                reason: "must be at least 1",
            });
        }
        if !(self.tolerance >= 0.0) {
            return Err(DualError::InvalidParameter {
                field: "tolerance",
                reason: "must be nonnegative",
            });
        }
        Ok(())
    }

    /// Step size for the update that follows iteration `k` (1-based).
    pub fn step_at(&self, k: usize) -> f64 {
        match self.step_schedule {
            StepSchedule::Constant => self.step,
            StepSchedule::Diminishing => self.step / libm::sqrt(k.max(1) as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub dual_value: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualResult {
    /// Multipliers at which `assignment` and `schedule` were computed.
    pub prices: PriceMatrix,
    pub best_dual: f64,
    /// 0-based iteration that attained `best_dual`.
    pub best_iteration: usize,
    pub converged: bool,
    pub trace: Vec<TracePoint>,
    pub assignment: Assignment,
    pub schedule: FractionalSchedule,
}

/// Solves one EV's choice problem: the station minimising distance
/// disutility plus the bill `lambda_ij * r_i`. Ties go to the lowest index.
pub fn user_choice(
    ev: &EvType,
    prices_row: &[f64],
    distances_row: &[f64],
) -> Result<(usize, f64), DualError> {
    if prices_row.len() != distances_row.len() {
        return Err(DualError::RowMismatch {
            prices: prices_row.len(),
            distances: distances_row.len(),
        });
    }
    if prices_row.is_empty() {
        return Err(DualError::NoStations);
    }
    let slots = ev.required_slots() as f64;
    let mut best = (0, f64::INFINITY);
    for (j, (lambda, l)) in prices_row.iter().zip(distances_row).enumerate() {
        let cost = disutility(ev.elasticity, *l) + lambda * slots;
        if cost < best.1 {
            best = (j, cost);
        }
    }
    Ok(best)
}

/// Solves one station's relaxed scheduling problem.
///
/// Slots are independent: each is a fractional knapsack with item values
/// `lambda_ij` and weights `e_i`, filled greedily by `lambda_ij / e_i`
/// (ties by EV index). EVs with a zero price are left unscheduled.
pub fn station_relaxed_schedule(
    station: &StationProfile,
    lambda_column: &[f64],
    evs: &[EvType],
) -> StationSchedule {
    let tau = station.capacity.len();
    let mut order: Vec<usize> = (0..evs.len())
        .filter(|&i| lambda_column[i] > 0.0)
        .collect();
    // Stable sort keeps index order among equal ratios.
    order.sort_by(|&a, &b| {
        let ra = lambda_column[a] / evs[a].rate;
        let rb = lambda_column[b] / evs[b].rate;
        rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal)
    });

    let mut u = vec![0.0; evs.len() * tau];
    let mut value = 0.0;
    for (t, &capacity) in station.capacity.iter().enumerate() {
        let mut left = capacity;
        for &i in &order {
            if left <= 0.0 {
                break;
            }
            let ev = &evs[i];
            if !ev.is_available(t) {
                continue;
            }
            let share = if ev.rate <= left { 1.0 } else { left / ev.rate };
            left = if share == 1.0 { left - ev.rate } else { 0.0 };
            u[i * tau + t] = share;
            value += lambda_column[i] * share;
        }
    }
    StationSchedule { u, value }
}

/// `g(lambda) = sum_i Q_i - sum_j R_j`.
pub fn dual_value(user_values: &[f64], station_values: &[f64]) -> f64 {
    user_values.iter().sum::<f64>() - station_values.iter().sum::<f64>()
}

/// Coupling violation `r_i * xi_ij - sum_t u_ij^t`.
#[inline]
pub fn violation(required: usize, assigned: bool, scheduled: f64) -> f64 {
    let demand = if assigned { required as f64 } else { 0.0 };
    demand - scheduled
}

/// One multiplier step. `required[i]` is `r_i`.
pub fn update_multipliers(
    prices: &PriceMatrix,
    assignment: &Assignment,
    schedule: &FractionalSchedule,
    required: &[usize],
    step: f64,
    mode: UpdateMode,
) -> PriceMatrix {
    let mut next = prices.clone();
    for i in 0..prices.num_evs {
        for j in 0..prices.num_stations {
            let v = violation(required[i], assignment.is_assigned(i, j), schedule.total(i, j));
            let lambda = prices.get(i, j);
            next.set(i, j, step_price(lambda, v, step, mode));
        }
    }
    next
}

#[inline]
fn step_price(lambda: f64, violation: f64, step: f64, mode: UpdateMode) -> f64 {
    match mode {
        UpdateMode::PaperLiteral => lambda + step * violation.max(0.0),
        UpdateMode::Projected => (lambda + step * violation).max(0.0),
    }
}

/// Subgradient iteration from `lambda = 0`.
///
/// Each iteration evaluates every EV and station sub-problem at the current
/// prices, records `(g, max positive violation)`, and stops once the
/// violation is within `params.tolerance` or `max_iters` evaluations have
/// been made. The returned assignment and schedule belong to the returned
/// prices.
pub fn solve_dual(instance: &Instance, params: &SolverParams) -> Result<DualResult, DualError> {
    params.validate()?;
    let n = instance.num_evs();
    let m = instance.num_stations();
    let tau = instance.horizon;
    if m == 0 && n > 0 {
        return Err(DualError::NoStations);
    }

    let distances = instance.distance_matrix();
    let required: Vec<usize> = instance.evs.iter().map(EvType::required_slots).collect();

    let mut prices = PriceMatrix::zeros(n, m);
    let mut assignment = Assignment {
        num_stations: m,
        choice: vec![0; n],
    };
    let mut schedule = FractionalSchedule::zeros(n, m, tau);
    let mut trace = Vec::new();
    let mut user_values = vec![0.0; n];
    let mut station_values = vec![0.0; m];
    let mut totals = vec![0.0; n * m];
    let mut best_dual = f64::NEG_INFINITY;
    let mut best_iteration = 0;
    let mut converged = false;

    for k in 0..params.max_iters {
        for (i, ev) in instance.evs.iter().enumerate() {
            let (j, q) = user_choice(ev, prices.row(i), &distances[i * m..(i + 1) * m])?;
            assignment.choice[i] = j;
            user_values[i] = q;
        }
        for (j, station) in instance.stations.iter().enumerate() {
            let slice = station_relaxed_schedule(station, &prices.column(j), &instance.evs);
            station_values[j] = slice.value;
            for i in 0..n {
                totals[i * m + j] = slice.u[i * tau..(i + 1) * tau].iter().sum();
            }
            schedule.write_station(j, &slice);
        }

        let g = dual_value(&user_values, &station_values);
        let mut max_violation: f64 = 0.0;
        for i in 0..n {
            for j in 0..m {
                let v = violation(required[i], assignment.is_assigned(i, j), totals[i * m + j]);
                max_violation = max_violation.max(v);
            }
        }
        trace.push(TracePoint {
            dual_value: g,
            max_violation,
        });
        if g > best_dual {
            best_dual = g;
            best_iteration = k;
        }
        if max_violation <= params.tolerance {
            converged = true;
            break;
        }
        if k + 1 == params.max_iters {
            break;
        }

        let step = params.step_at(k + 1);
        for i in 0..n {
            for j in 0..m {
                let v = violation(required[i], assignment.is_assigned(i, j), totals[i * m + j]);
                let lambda = prices.get(i, j);
                prices.set(i, j, step_price(lambda, v, step, params.update_mode));
            }
        }
    }

    Ok(DualResult {
        prices,
        best_dual,
        best_iteration,
        converged,
        trace,
        assignment,
        schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point;

    fn ev(id: usize, arrival: usize, departure: usize, energy: f64, rate: f64, theta: f64) -> EvType {
        EvType {
            id,
            arrival,
            departure,
            energy,
            rate,
            location: Point::default(),
            elasticity: theta,
        }
    }

    fn station(capacity: Vec<f64>) -> StationProfile {
        StationProfile {
            id: 0,
            location: Point::default(),
            capacity,
        }
    }

    #[test]
    fn choice_zero_prices_is_nearest() {
        let e = ev(0, 0, 4, 4.0, 2.0, 3.0);
        let (j, q) = user_choice(&e, &[0.0, 0.0, 0.0], &[2.0, 1.0, 1.5]).unwrap();
        assert_eq!(j, 1);
        assert_eq!(q, 3.0);
    }

    #[test]
    fn choice_trades_price_for_distance() {
        let e = ev(0, 0, 4, 4.0, 2.0, 1.0);
        let (j, q) = user_choice(&e, &[5.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!((j, q), (1, 4.0));
    }

    #[test]
    fn choice_single_station_and_errors() {
        let e = ev(0, 0, 4, 4.0, 2.0, 1.0);
        assert_eq!(user_choice(&e, &[1e9], &[50.0]).unwrap().0, 0);
        assert_eq!(user_choice(&e, &[], &[]), Err(DualError::NoStations));
        assert!(matches!(
            user_choice(&e, &[0.0], &[1.0, 2.0]),
            Err(DualError::RowMismatch { .. })
        ));
    }

    #[test]
    fn choice_ties_go_low() {
        let e = ev(0, 0, 4, 4.0, 2.0, 1.0);
        assert_eq!(user_choice(&e, &[0.0, 0.0], &[1.0, 1.0]).unwrap().0, 0);
    }

    #[test]
    fn station_zero_prices_schedule_nothing() {
        let evs = [ev(0, 0, 3, 2.0, 1.0, 1.0), ev(1, 1, 3, 2.0, 1.0, 1.0)];
        let s = station_relaxed_schedule(&station(vec![5.0; 3]), &[0.0, 0.0], &evs);
        assert!(s.u.iter().all(|u| *u == 0.0));
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn station_single_ev_fills_window() {
        let evs = [ev(0, 1, 4, 3.0, 1.0, 1.0)];
        let s = station_relaxed_schedule(&station(vec![1.0; 5]), &[2.0], &evs);
        assert_eq!(s.u, vec![0.0, 1.0, 1.0, 1.0, 0.0]);
        assert_eq!(s.value, 6.0);
    }

    #[test]
    fn station_fractional_fill_by_ratio() {
        let evs = [ev(0, 0, 1, 1.0, 2.0, 1.0), ev(1, 0, 1, 1.0, 1.0, 1.0)];
        let s = station_relaxed_schedule(&station(vec![2.0]), &[3.0, 2.0], &evs);
        assert_eq!(s.u, vec![0.5, 1.0]);
        assert_eq!(s.value, 3.5);
    }

    #[test]
    fn dual_value_examples() {
        assert_eq!(dual_value(&[3.0], &[4.0]), -1.0);
        assert_eq!(dual_value(&[1.0, 2.0], &[0.0, 0.0]), 3.0);
    }

    #[test]
    fn single_pair_dual_by_hand() {
        // r = 2, theta = 1, l = 1, four available slots, lambda = 1.
        let e = ev(0, 0, 4, 4.0, 2.0, 1.0);
        let (_, q) = user_choice(&e, &[1.0], &[1.0]).unwrap();
        let r = station_relaxed_schedule(&station(vec![10.0; 4]), &[1.0], &[e]).value;
        assert_eq!(q, 3.0);
        assert_eq!(r, 4.0);
        assert_eq!(dual_value(&[q], &[r]), -1.0);
    }

    fn one_by_one(lambda: f64, assigned: bool, scheduled: f64, required: usize, mode: UpdateMode) -> f64 {
        let prices = PriceMatrix {
            num_evs: 1,
            num_stations: 2,
            values: vec![lambda, 0.0],
        };
        let assignment = Assignment {
            num_stations: 2,
            choice: vec![if assigned { 0 } else { 1 }],
        };
        let mut schedule = FractionalSchedule::zeros(1, 2, 1);
        schedule.values[0] = scheduled;
        update_multipliers(&prices, &assignment, &schedule, &[required], 0.5, mode).get(0, 0)
    }

    #[test]
    fn update_examples() {
        // Overshoot by 3 slots.
        assert_eq!(one_by_one(1.0, false, 3.0, 2, UpdateMode::PaperLiteral), 1.0);
        assert_eq!(one_by_one(1.0, true, 1.2, 2, UpdateMode::PaperLiteral), 1.4);
        assert_eq!(one_by_one(1.0, false, 3.0, 2, UpdateMode::Projected), 0.0);
        // Exactly coupled pairs are fixed points.
        assert_eq!(one_by_one(0.7, true, 2.0, 2, UpdateMode::Projected), 0.7);
        assert_eq!(one_by_one(0.7, true, 2.0, 2, UpdateMode::PaperLiteral), 0.7);
    }

    #[test]
    fn params_validation_names_field() {
        let p = SolverParams {
            step: -1.0,
            ..SolverParams::default()
        };
        assert!(matches!(p.validate(), Err(DualError::InvalidParameter { field: "step", .. })));
        let p = SolverParams {
            max_iters: 0,
            ..SolverParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn diminishing_schedule() {
        let p = SolverParams {
            step: 1.0,
            step_schedule: StepSchedule::Diminishing,
            ..SolverParams::default()
        };
        assert_eq!(p.step_at(1), 1.0);
        assert_eq!(p.step_at(4), 0.5);
    }

    #[test]
    fn empty_instance_converges_immediately() {
        let inst = Instance::new(4, vec![station(vec![1.0; 4])], vec![]).unwrap();
        let res = solve_dual(&inst, &SolverParams::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.trace.len(), 1);
        assert_eq!(res.best_dual, 0.0);
    }
}

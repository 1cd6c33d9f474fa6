mod common;

use common::{random_instance, rng, SMALL};
use evcs_core::dual::{
    dual_value, solve_dual, station_relaxed_schedule, update_multipliers, user_choice, Assignment,
    FractionalSchedule, PriceMatrix, SolverParams, StepSchedule, UpdateMode,
};
use evcs_core::exact::optimal_assignment;
use evcs_core::model::{EvType, Point, StationProfile};
use proptest::prelude::*;
use rand::Rng;

fn ev_with(rate: f64, slots: usize, theta: f64, arrival: usize, departure: usize) -> EvType {
    EvType {
        id: 0,
        arrival,
        departure,
        energy: rate * slots as f64,
        rate,
        location: Point::default(),
        elasticity: theta,
    }
}

proptest! {
    #[test]
    fn user_choice_is_exhaustive_argmin(
        theta in 0.0f64..5.0,
        slots in 0usize..6,
        row in prop::collection::vec((0.0f64..4.0, 0.0f64..10.0), 1..6),
    ) {
        let ev = ev_with(2.0, slots, theta, 0, 8);
        let prices: Vec<f64> = row.iter().map(|r| r.0).collect();
        let distances: Vec<f64> = row.iter().map(|r| r.1).collect();
        let (j, q) = user_choice(&ev, &prices, &distances).unwrap();
        let costs: Vec<f64> = (0..row.len())
            .map(|k| theta * distances[k] * distances[k] + prices[k] * slots as f64)
            .collect();
        let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = costs.iter().position(|c| *c == min).unwrap();
        prop_assert_eq!(j, first);
        prop_assert_eq!(q, min);
    }
}

/// Best value of `max sum lambda_k u_k` over `u_k` on the 1/1000 grid with
/// `sum e_k u_k <= cap`. The last coordinate is the largest grid point that
/// still fits, which is optimal for it since its value is nonnegative.
fn grid_search(lambda: &[f64], rate: &[f64], cap: f64) -> f64 {
    fn go(k: usize, lambda: &[f64], rate: &[f64], left: f64) -> f64 {
        if k + 1 == lambda.len() {
            let u = ((left / rate[k] * 1000.0 + 1e-9).floor() / 1000.0).clamp(0.0, 1.0);
            return lambda[k] * u;
        }
        let mut best = 0.0f64;
        for g in 0..=1000 {
            let u = g as f64 / 1000.0;
            let used = u * rate[k];
            if used > left + 1e-12 {
                break;
            }
            best = best.max(lambda[k] * u + go(k + 1, lambda, rate, left - used));
        }
        best
    }
    go(0, lambda, rate, cap)
}

#[test]
fn station_schedule_matches_grid_search() {
    let mut r = rng(2024);
    for _ in 0..200 {
        let n = r.random_range(1..=3);
        // Rates dividing 1000 keep the LP optimum on the grid.
        let rates: Vec<f64> = (0..n).map(|_| [1.0, 2.0, 4.0, 5.0, 8.0][r.random_range(0..5)]).collect();
        let lambdas: Vec<f64> = (0..n).map(|_| r.random_range(0..=20) as f64 * 0.5).collect();
        let cap = r.random_range(0..=20) as f64;
        let evs: Vec<EvType> = (0..n)
            .map(|i| EvType { id: i, ..ev_with(rates[i], 1, 1.0, 0, 1) })
            .collect();
        let station = StationProfile { id: 0, location: Point::default(), capacity: vec![cap] };
        let out = station_relaxed_schedule(&station, &lambdas, &evs);
        let oracle = grid_search(&lambdas, &rates, cap);
        assert!((out.value - oracle).abs() <= 1e-6, "{lambdas:?} {rates:?} {cap}: {} vs {oracle}", out.value);
        let load: f64 = (0..n).map(|i| out.u[i] * rates[i]).sum();
        assert!(load <= cap + 1e-9);
        assert!(out.u.iter().all(|u| (0.0..=1.0).contains(u)));
    }
}

#[test]
fn station_schedule_respects_windows() {
    for seed in 0..100 {
        let inst = random_instance(seed, &SMALL);
        let mut r = rng(seed + 10_000);
        for station in &inst.stations {
            let lambda: Vec<f64> = inst.evs.iter().map(|_| r.random_range(0.0..3.0)).collect();
            let out = station_relaxed_schedule(station, &lambda, &inst.evs);
            let tau = inst.horizon;
            let mut value = 0.0;
            for t in 0..tau {
                let mut load = 0.0;
                for (i, ev) in inst.evs.iter().enumerate() {
                    let u = out.u[i * tau + t];
                    assert!((0.0..=1.0).contains(&u));
                    if !ev.is_available(t) {
                        assert_eq!(u, 0.0);
                    }
                    load += u * ev.rate;
                    value += u * lambda[i];
                }
                assert!(load <= station.capacity[t] + 1e-9);
            }
            assert!((value - out.value).abs() <= 1e-9);
        }
    }
}

#[test]
fn zero_prices_give_nearest_station_bound() {
    for seed in 0..20 {
        let inst = random_instance(seed, &SMALL);
        let m = inst.num_stations();
        let d = inst.distance_matrix();
        let q: Vec<f64> = inst
            .evs
            .iter()
            .enumerate()
            .map(|(i, ev)| user_choice(ev, &vec![0.0; m], &d[i * m..(i + 1) * m]).unwrap().1)
            .collect();
        let r: Vec<f64> = inst
            .stations
            .iter()
            .map(|s| station_relaxed_schedule(s, &vec![0.0; inst.num_evs()], &inst.evs).value)
            .collect();
        let expected: f64 = inst
            .evs
            .iter()
            .enumerate()
            .map(|(i, ev)| {
                d[i * m..(i + 1) * m]
                    .iter()
                    .map(|l| ev.elasticity * l * l)
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        assert!((dual_value(&q, &r) - expected).abs() < 1e-12);
    }
}

#[test]
fn weak_duality_on_random_instances() {
    for seed in 0..60 {
        let inst = random_instance(seed, &SMALL);
        let Some(opt) = optimal_assignment(&inst).unwrap() else {
            continue;
        };
        for mode in [UpdateMode::Projected, UpdateMode::PaperLiteral] {
            let params = SolverParams { max_iters: 300, update_mode: mode, ..SolverParams::default() };
            let res = solve_dual(&inst, &params).unwrap();
            for p in &res.trace {
                assert!(p.dual_value <= opt.cost + 1e-9, "seed {seed}: {} > {}", p.dual_value, opt.cost);
            }
        }
    }
}

#[test]
fn two_by_two_weak_duality_for_arbitrary_prices() {
    let mut r = rng(77);
    for seed in 0..40 {
        let limits = common::Limits { max_evs: 2, max_stations: 2, max_slots: 4 };
        let inst = random_instance(seed, &limits);
        let Some(opt) = optimal_assignment(&inst).unwrap() else { continue };
        let m = inst.num_stations();
        let d = inst.distance_matrix();
        for _ in 0..20 {
            let lambda: Vec<f64> = (0..inst.num_evs() * m).map(|_| r.random_range(0.0..5.0)).collect();
            let prices = PriceMatrix { num_evs: inst.num_evs(), num_stations: m, values: lambda };
            let q: Vec<f64> = inst
                .evs
                .iter()
                .enumerate()
                .map(|(i, ev)| user_choice(ev, prices.row(i), &d[i * m..(i + 1) * m]).unwrap().1)
                .collect();
            let rv: Vec<f64> = inst
                .stations
                .iter()
                .enumerate()
                .map(|(j, s)| station_relaxed_schedule(s, &prices.column(j), &inst.evs).value)
                .collect();
            assert!(dual_value(&q, &rv) <= opt.cost + 1e-9);
        }
    }
}

/// Runs the iteration by hand and returns every price matrix.
fn manual_iterates(seed: u64, mode: UpdateMode, iters: usize) -> Vec<PriceMatrix> {
    let inst = random_instance(seed, &SMALL);
    let (n, m, tau) = (inst.num_evs(), inst.num_stations(), inst.horizon);
    let d = inst.distance_matrix();
    let required: Vec<usize> = inst.evs.iter().map(|e| e.required_slots()).collect();
    let mut prices = PriceMatrix::zeros(n, m);
    let mut out = vec![prices.clone()];
    for _ in 0..iters {
        let choice = inst
            .evs
            .iter()
            .enumerate()
            .map(|(i, ev)| user_choice(ev, prices.row(i), &d[i * m..(i + 1) * m]).unwrap().0)
            .collect();
        let assignment = Assignment { num_stations: m, choice };
        let mut schedule = FractionalSchedule::zeros(n, m, tau);
        for (j, s) in inst.stations.iter().enumerate() {
            let slice = station_relaxed_schedule(s, &prices.column(j), &inst.evs);
            for i in 0..n {
                for t in 0..tau {
                    schedule.values[(i * m + j) * tau + t] = slice.u[i * tau + t];
                }
            }
        }
        prices = update_multipliers(&prices, &assignment, &schedule, &required, 0.1, mode);
        out.push(prices.clone());
    }
    out
}

#[test]
fn paper_literal_prices_never_decrease() {
    for seed in 0..30 {
        let iterates = manual_iterates(seed, UpdateMode::PaperLiteral, 100);
        for w in iterates.windows(2) {
            assert!(w[0].values.iter().zip(&w[1].values).all(|(a, b)| b >= a));
        }
    }
}

#[test]
fn iterates_stay_nonnegative_and_finite() {
    for seed in 0..30 {
        for mode in [UpdateMode::Projected, UpdateMode::PaperLiteral] {
            for p in manual_iterates(seed, mode, 100) {
                assert!(p.is_valid());
            }
        }
    }
}

#[test]
fn solver_matches_manual_iteration() {
    for seed in 0..10 {
        let inst = random_instance(seed, &SMALL);
        let params = SolverParams { max_iters: 50, tolerance: 0.0, ..SolverParams::default() };
        let res = solve_dual(&inst, &params).unwrap();
        if res.converged {
            continue;
        }
        // 50 evaluations use the prices after 49 updates.
        let manual = manual_iterates(seed, UpdateMode::Projected, 49);
        assert_eq!(res.prices, manual[49]);
        assert_eq!(res.trace.len(), 50);
    }
}

#[test]
fn coupled_pairs_are_fixed_points() {
    // Two EVs, two stations; xi and u satisfy the coupling exactly at the
    // chosen pairs and schedule nothing elsewhere.
    let prices = PriceMatrix { num_evs: 2, num_stations: 2, values: vec![0.3, 1.2, 2.5, 0.0] };
    let assignment = Assignment { num_stations: 2, choice: vec![0, 1] };
    let mut u = FractionalSchedule::zeros(2, 2, 4);
    // EV 0 at station 0 gets 2 slots, EV 1 at station 1 gets 3 slots.
    for t in [0, 1] {
        u.values[(0 * 2 + 0) * 4 + t] = 1.0;
    }
    for t in [1, 2, 3] {
        u.values[(1 * 2 + 1) * 4 + t] = 1.0;
    }
    for mode in [UpdateMode::Projected, UpdateMode::PaperLiteral] {
        let next = update_multipliers(&prices, &assignment, &u, &[2, 3], 0.7, mode);
        assert_eq!(next.get(0, 0), 0.3);
        assert_eq!(next.get(1, 1), 0.0);
    }
}

#[test]
fn running_max_and_determinism() {
    for seed in 0..10 {
        let inst = random_instance(seed, &SMALL);
        let params = SolverParams {
            max_iters: 200,
            step_schedule: StepSchedule::Diminishing,
            ..SolverParams::default()
        };
        let a = solve_dual(&inst, &params).unwrap();
        let b = solve_dual(&inst, &params).unwrap();
        assert_eq!(a, b);
        let best = a.trace.iter().map(|p| p.dual_value).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.best_dual, best);
        assert_eq!(a.trace[a.best_iteration].dual_value, best);
        assert!(a.trace.len() <= 200);
    }
}

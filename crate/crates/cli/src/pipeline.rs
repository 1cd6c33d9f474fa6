//! Stage orchestration: generate → solve → price → simulate → report.
//!
//! Each stage reads its inputs from the stage-input directory (by default the
//! output directory) and writes its artifacts to the output directory.
//! Scenario solves and evaluation days fan out over a thread pool; results
//! are collected in index order and written by a single thread.

use std::fs;
use std::path::PathBuf;

use evcs_core::dual::TracePoint;
use evcs_core::exact::OracleError;
use evcs_core::online::attach_optimum;
use evcs_core::pricing::{samples_from_solution, FeatureKey, MultiplierSample};
use evcs_core::{
    build_price_table, compute_metrics, sample_scenario, simulate_day, solve_dual, DayReport,
    Policy, PolicyKind, PolicySummary, PriceTable, Ratio, Scenario, SimError, SimOptions, StationProfile,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{fmt_f64, read_csv, read_json, write_csv, write_json, Layout, Metadata};
use crate::config::RunConfig;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Generate,
    Solve,
    Price,
    Simulate,
    Report,
    All,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where earlier stages' artifacts are read from; defaults to the
    /// output directory.
    pub stage_input: Option<PathBuf>,
    pub verbose_trace: bool,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

/// Per-scenario solver outcome written to `solve/duals.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSummary {
    pub seed: u64,
    pub evs: usize,
    pub iterations: usize,
    pub converged: bool,
    pub best_dual: f64,
    pub best_iteration: usize,
    pub final_max_violation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TracePoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policies: Vec<PolicySummary>,
    /// Evaluation days the exact oracle solved.
    pub oracle_days: usize,
    /// Days left without an optimum: too many EVs or over budget.
    pub oracle_skipped: usize,
}

pub const SAMPLE_COLUMNS: [&str; 9] = [
    "scenario_seed",
    "station",
    "ev",
    "arrival_bucket",
    "demand_bucket",
    "distance_bucket",
    "lambda",
    "chosen",
    "occupancy",
];

pub const DAY_COLUMNS: [&str; 6] = ["seed", "policy", "social_cost", "revenue", "unmet", "ratio"];

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "policy",
    "days",
    "mean_social_cost",
    "mean_revenue",
    "mean_unmet_energy",
    "mean_rejected",
    "ratio_days",
    "mean_ratio",
    "max_ratio",
    "unbounded_days",
];

struct Ctx<'a> {
    config: &'a RunConfig,
    input: Layout,
    out: Layout,
    pool: rayon::ThreadPool,
    verbose_trace: bool,
    stations: Vec<StationProfile>,
}

impl Ctx<'_> {
    fn meta(&self, artifact: &str) -> Metadata {
        Metadata::new(artifact, self.config)
    }

    fn par_map<T: Sync, R: Send>(
        &self,
        items: &[T],
        f: impl Fn(&T) -> Result<R, Error> + Sync + Send,
    ) -> Result<Vec<R>, Error> {
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}

/// Runs `stage` (or every stage for [`Stage::All`]) and returns one log
/// line per stage.
pub fn run(config: &RunConfig, stage: Stage, options: &RunOptions) -> Result<Vec<String>, Error> {
    config.validate().map_err(Error::Config)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = options.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Threads(e.to_string()))?;
    let out = Layout::new(&config.output_dir);
    let input = match (&options.stage_input, stage) {
        (Some(dir), s) if s != Stage::All => Layout::new(dir),
        _ => out.clone(),
    };
    let ctx = Ctx {
        config,
        input,
        out,
        pool,
        verbose_trace: options.verbose_trace,
        stations: config.station_profiles(),
    };
    write_json(&ctx.out.config(), ctx.meta("config"), config)?;

    let stages: &[Stage] = match stage {
        Stage::All => &[
            Stage::Generate,
            Stage::Solve,
            Stage::Price,
            Stage::Simulate,
            Stage::Report,
        ],
        _ => std::slice::from_ref(&stage),
    };
    let mut log = Vec::new();
    for s in stages {
        log.push(match s {
            Stage::Generate => generate(&ctx)?,
            Stage::Solve => solve(&ctx)?,
            Stage::Price => price(&ctx)?,
            Stage::Simulate => simulate(&ctx)?,
            Stage::Report => report(&ctx)?,
            Stage::All => unreachable!("expanded above"),
        });
    }
    Ok(log)
}

fn clear_dir(dir: PathBuf) -> Result<(), Error> {
    match fs::remove_dir_all(&dir) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(dir)(e)),
    }
}

fn generate(ctx: &Ctx) -> Result<String, Error> {
    let cfg = ctx.config;
    let draw = |seed: &u64| sample_scenario(&cfg.generator, &ctx.stations, *seed).map_err(Error::from);
    let training = ctx.par_map(&cfg.training_seeds(), draw)?;
    let days = ctx.par_map(&cfg.evaluation_seeds(), draw)?;

    clear_dir(ctx.out.root.join("scenarios"))?;
    clear_dir(ctx.out.root.join("days"))?;
    for (k, s) in training.iter().enumerate() {
        write_json(&ctx.out.scenario(k), ctx.meta("scenario"), s)?;
    }
    for (k, s) in days.iter().enumerate() {
        write_json(&ctx.out.day(k), ctx.meta("day"), s)?;
    }
    Ok(format!(
        "generate: {} training scenarios, {} evaluation days",
        training.len(),
        days.len()
    ))
}

fn load_scenarios(
    count: usize,
    path: impl Fn(usize) -> PathBuf,
    stage: &'static str,
) -> Result<Vec<Scenario>, Error> {
    (0..count)
        .map(|k| read_json::<Scenario>(&path(k), stage, "generate").map(|e| e.data))
        .collect()
}

fn solve(ctx: &Ctx) -> Result<String, Error> {
    let cfg = ctx.config;
    let scenarios = load_scenarios(cfg.simulation.training_scenarios, |k| ctx.input.scenario(k), "solve")?;
    let scheme = cfg.bucket_scheme();
    let solved = ctx.par_map(&scenarios, |scenario| {
        let instance = scenario.instance(&ctx.stations).map_err(SimError::from)?;
        let result = solve_dual(&instance, &cfg.solver)?;
        let samples = samples_from_solution(scenario, &instance.stations, &result, &scheme);
        let summary = DualSummary {
            seed: scenario.seed,
            evs: scenario.evs.len(),
            iterations: result.trace.len(),
            converged: result.converged,
            best_dual: result.best_dual,
            best_iteration: result.best_iteration,
            final_max_violation: result.trace.last().map_or(0.0, |p| p.max_violation),
            trace: ctx.verbose_trace.then(|| result.trace.clone()),
        };
        Ok((samples, summary))
    })?;

    let mut rows = Vec::new();
    let mut summaries = Vec::with_capacity(solved.len());
    for (samples, summary) in solved {
        rows.extend(samples.iter().map(sample_row));
        summaries.push(summary);
    }
    let converged = summaries.iter().filter(|s| s.converged).count();
    write_csv(&ctx.out.samples(), &ctx.meta("samples"), &SAMPLE_COLUMNS, &rows)?;
    write_json(&ctx.out.duals(), ctx.meta("duals"), &summaries)?;
    Ok(format!(
        "solve: {} scenarios, {} converged, {} samples",
        summaries.len(),
        converged,
        rows.len()
    ))
}

fn sample_row(s: &MultiplierSample) -> Vec<String> {
    vec![
        s.scenario_seed.to_string(),
        s.station.to_string(),
        s.ev.to_string(),
        s.key.arrival.to_string(),
        s.key.demand.to_string(),
        s.key.distance.to_string(),
        fmt_f64(s.lambda),
        s.chosen.to_string(),
        s.occupancy.to_string(),
    ]
}

fn parse_sample(row: &csv::StringRecord) -> Option<MultiplierSample> {
    let f = |k: usize| row.get(k);
    Some(MultiplierSample {
        scenario_seed: f(0)?.parse().ok()?,
        station: f(1)?.parse().ok()?,
        ev: f(2)?.parse().ok()?,
        key: FeatureKey {
            arrival: f(3)?.parse().ok()?,
            demand: f(4)?.parse().ok()?,
            distance: f(5)?.parse().ok()?,
        },
        lambda: f(6)?.parse().ok()?,
        chosen: f(7)?.parse().ok()?,
        occupancy: f(8)?.parse().ok()?,
    })
}

/// Reads `solve/samples.csv` back into samples.
pub fn read_samples(path: &std::path::Path) -> Result<Vec<MultiplierSample>, Error> {
    let (_, rows) = read_csv(path, &SAMPLE_COLUMNS, "price", "solve")?;
    rows.iter()
        .enumerate()
        .map(|(k, row)| {
            parse_sample(row).ok_or_else(|| Error::Artifact {
                path: path.to_path_buf(),
                reason: format!("bad sample row {}", k + 1),
            })
        })
        .collect()
}

fn price(ctx: &Ctx) -> Result<String, Error> {
    let samples = read_samples(&ctx.input.samples())?;
    let table = build_price_table(&samples, &ctx.config.bucket_scheme(), &ctx.config.pricing.table)?;
    write_json(&ctx.out.price_table(), ctx.meta("price_table"), &table)?;
    Ok(format!(
        "price: {} samples, {} table entries",
        samples.len(),
        table.entries.len()
    ))
}

fn simulate(ctx: &Ctx) -> Result<String, Error> {
    let cfg = ctx.config;
    let kinds = cfg.simulation.policies.kinds();
    let days = load_scenarios(cfg.simulation.evaluation_days, |k| ctx.input.day(k), "simulate")?;
    let table: Option<PriceTable> = if kinds.contains(&PolicyKind::Priced) {
        Some(read_json(&ctx.input.price_table(), "simulate", "price")?.data)
    } else {
        None
    };
    let options = SimOptions {
        admission_budget: cfg.simulation.admission_budget,
    };

    let reports: Vec<Vec<DayReport>> = ctx.par_map(&days, |day| {
        kinds
            .iter()
            .map(|kind| {
                let policy = match kind {
                    PolicyKind::Priced => Policy::Priced {
                        table: table.as_ref().expect("loaded for priced runs"),
                        heuristic: cfg.pricing.heuristic.clone(),
                    },
                    PolicyKind::Fcfs => Policy::Fcfs,
                };
                let mut report = simulate_day(day, &ctx.stations, policy, &options)?;
                if cfg.simulation.oracle && day.evs.len() <= cfg.simulation.oracle_max_evs {
                    match attach_optimum(&mut report, day, &ctx.stations, cfg.simulation.oracle_budget) {
                        Ok(()) | Err(SimError::Oracle(OracleError::BudgetExceeded { .. })) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
                Ok(report)
            })
            .collect()
    })?;

    clear_dir(ctx.out.root.join("simulate"))?;
    let mut rows = Vec::new();
    for (k, per_day) in reports.iter().enumerate() {
        for r in per_day {
            write_json(&ctx.out.report(r.policy, k), ctx.meta("day_report"), r)?;
            rows.push(day_row(r));
        }
    }
    write_csv(&ctx.out.days_csv(), &ctx.meta("days"), &DAY_COLUMNS, &rows)?;
    let summary = summarize(cfg, &kinds, &reports)?;
    write_summary(ctx, &summary)?;
    Ok(format!(
        "simulate: {} days x {} policies{}",
        days.len(),
        kinds.len(),
        if cfg.simulation.oracle {
            format!(", oracle solved {} days", summary.oracle_days)
        } else {
            String::new()
        }
    ))
}

fn fmt_ratio(r: Option<Ratio>) -> String {
    match r {
        None => String::new(),
        Some(Ratio::Unbounded) => "inf".into(),
        Some(Ratio::Finite(v)) => fmt_f64(v),
    }
}

fn day_row(r: &DayReport) -> Vec<String> {
    vec![
        r.seed.to_string(),
        r.policy.label().into(),
        fmt_f64(r.social_cost),
        fmt_f64(r.revenue),
        fmt_f64(r.unmet_energy),
        fmt_ratio(r.ratio),
    ]
}

/// `reports[k]` holds day `k` under each of `kinds`, in order.
fn summarize(cfg: &RunConfig, kinds: &[PolicyKind], reports: &[Vec<DayReport>]) -> Result<Summary, Error> {
    let mut policies = Vec::new();
    if !reports.is_empty() {
        for (p, _) in kinds.iter().enumerate() {
            let column: Vec<DayReport> = reports.iter().map(|d| d[p].clone()).collect();
            policies.push(compute_metrics(&column, None)?);
        }
    }
    let oracle_days = reports
        .iter()
        .filter(|d| d.first().is_some_and(|r| r.assignment_feasible.is_some()))
        .count();
    Ok(Summary {
        policies,
        oracle_days,
        oracle_skipped: if cfg.simulation.oracle {
            reports.len() - oracle_days
        } else {
            0
        },
    })
}

fn summary_row(s: &PolicySummary) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    vec![
        s.policy.label().into(),
        s.days.to_string(),
        fmt_f64(s.mean_social_cost),
        fmt_f64(s.mean_revenue),
        fmt_f64(s.mean_unmet_energy),
        fmt_f64(s.mean_rejected),
        s.ratio_days.to_string(),
        opt(s.mean_ratio),
        fmt_ratio(s.max_ratio),
        s.unbounded_days.to_string(),
    ]
}

fn write_summary(ctx: &Ctx, summary: &Summary) -> Result<(), Error> {
    write_json(&ctx.out.summary_json(), ctx.meta("summary"), summary)?;
    let rows: Vec<Vec<String>> = summary.policies.iter().map(summary_row).collect();
    write_csv(&ctx.out.summary_csv(), &ctx.meta("summary"), &SUMMARY_COLUMNS, &rows)
}

fn report(ctx: &Ctx) -> Result<String, Error> {
    let cfg = ctx.config;
    let kinds = cfg.simulation.policies.kinds();
    let reports = (0..cfg.simulation.evaluation_days)
        .map(|k| {
            kinds
                .iter()
                .map(|&kind| read_json::<DayReport>(&ctx.input.report(kind, k), "report", "simulate").map(|e| e.data))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(cfg, &kinds, &reports)?;
    write_summary(ctx, &summary)?;
    let mut line = String::from("report:");
    for p in &summary.policies {
        line.push_str(&format!(
            " {} cost {:.4} unmet {:.4};",
            p.policy.label(),
            p.mean_social_cost,
            p.mean_unmet_energy
        ));
    }
    Ok(line.trim_end_matches(';').to_string())
}

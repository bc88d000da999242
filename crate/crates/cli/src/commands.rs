//! Subcommand implementations. Every writer here is deterministic: rows are
//! produced in a fixed order after all parallel work has finished.

use std::fs;
use std::io::Write;
use std::path::Path;

use elris_core::lattice::{log_y_from_levels, propagate_levels, Provenance};
use elris_core::oracle::{validation_suite, ExponentVerdict};
use elris_core::pool::BetaCurve;
use elris_core::simulator::{percentile_fan, simulate_paths, SimulationSpec};
use elris_core::solver::{
    elris_generosity, equivalent_rates_from_beta, equivalent_rates_log, infinite_pool_result, optimal_payout,
};
use elris_core::{
    baseline::cpp_generosity, calibrate_eta, BVector, DeathRule, EquivalenceResult, PayoutSchedule, PoolSpec,
    ReplacementRate, SGrid,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PoolSize, RunConfig};
use crate::CliError;

const VERSION: &str = env!("CARGO_PKG_VERSION");
const FAN_LEVELS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const VERDICT_FILE: &str = "exponent_verdict.json";

/// Full precision: 17 significant digits.
fn full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Four significant digits in plain decimal notation.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = 3 - x.abs().log10().floor() as i32;
    if decimals > 0 {
        format!("{:.*}", decimals as usize, x)
    } else {
        format!("{x:.0}")
    }
}

fn out_file(cfg: &RunConfig, name: &str) -> Result<std::path::PathBuf, CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg.out_dir.join(name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn eta_for(cfg: &RunConfig) -> Result<ReplacementRate, CliError> {
    Ok(calibrate_eta(&cfg.basis_for(cfg.gamma)?, &cfg.life()?, &cfg.base_law()?, &cfg.quadrature())?)
}

#[derive(Serialize)]
struct EtaRecord<'a> {
    version: &'a str,
    scenario: &'a str,
    eta: f64,
    rate: f64,
    alpha: f64,
    x0: f64,
    span: f64,
    m: f64,
    b: f64,
}

pub fn calibrate(cfg: &RunConfig) -> Result<(), CliError> {
    let eta = eta_for(cfg)?.value();
    println!("eta = {eta:.6}");
    write_json(
        &out_file(cfg, "eta.json")?,
        &EtaRecord {
            version: VERSION,
            scenario: &cfg.scenario,
            eta,
            rate: cfg.rate,
            alpha: cfg.alpha,
            x0: cfg.x0,
            span: cfg.span,
            m: cfg.m,
            b: cfg.b,
        },
    )
}

/// A solved cell, with what the simulator and generosity need to reuse it.
pub struct Solved {
    pub result: EquivalenceResult,
    pub pool: Option<PoolSpec>,
    pub beta: Option<BetaCurve>,
    pub death_rule: Option<DeathRule>,
}

impl Solved {
    /// The optimal payout behind this cell (finite pools only).
    pub fn schedule(&self, cfg: &RunConfig) -> Result<PayoutSchedule, CliError> {
        let beta = self
            .beta
            .as_ref()
            .ok_or_else(|| CliError::Config("an infinite pool has no simulated payout".into()))?;
        let basis = cfg.basis_for(self.result.gamma)?;
        if basis.is_log() {
            Ok(PayoutSchedule::normalized(*beta.grid(), basis.rate(), beta.values().to_vec())?)
        } else {
            Ok(optimal_payout(beta, &basis)?)
        }
    }
}

/// Solves every γ in `gammas` for one `(n, m̄)`, sharing the lattice run.
pub fn solve_group(cfg: &RunConfig, eta: ReplacementRate, n: PoolSize, mbar: f64, gammas: &[f64]) -> Vec<Result<Solved, CliError>> {
    let prepared = (|| -> Result<_, CliError> {
        let life = cfg.life()?;
        let law = cfg.member_law(mbar)?;
        let quad = cfg.quadrature();
        let grid = SGrid::to_max_age(&life, cfg.max_age, cfg.grid_step)?;
        Ok((life, law, quad, grid))
    })();
    let (life, law, quad, grid) = match prepared {
        Ok(p) => p,
        Err(e) => return gammas.iter().map(|_| Err(e.clone())).collect(),
    };
    let n = match n {
        PoolSize::Infinite => {
            return gammas
                .iter()
                .map(|&g| {
                    let basis = cfg.basis_for(g)?;
                    Ok(Solved {
                        result: infinite_pool_result(&basis, &life, eta, &law, &quad)?,
                        pool: None,
                        beta: None,
                        death_rule: None,
                    })
                })
                .collect();
        }
        PoolSize::Finite(n) => n,
    };
    let lattice = (|| -> Result<_, CliError> {
        let pool = PoolSpec::new(n, law, life)?;
        let spec = cfg.lattice(n, &law);
        let levels = propagate_levels(&pool, &cfg.basis_for(cfg.gamma)?, &spec)?;
        Ok((pool, spec, levels))
    })();
    let (pool, spec, levels) = match lattice {
        Ok(l) => l,
        Err(e) => return gammas.iter().map(|_| Err(e.clone())).collect(),
    };
    gammas
        .iter()
        .map(|&g| {
            let basis = cfg.basis_for(g)?;
            let (result, beta) = if basis.is_log() {
                let log_y = log_y_from_levels(&levels)?;
                let mut result = equivalent_rates_log(&pool, &basis, eta, log_y, grid, &quad)?;
                result.resolution = Some(Provenance {
                    time_steps: spec.resolution.time_steps,
                    y_levels: spec.resolution.y_levels,
                    levels: spec.richardson_levels,
                    extrapolated: spec.richardson_levels > 1,
                });
                (result, BetaCurve::log_case(log_y, &pool, grid)?)
            } else {
                let b = BVector::from_levels(&levels, g)?;
                let beta = BetaCurve::from_b_vector(&b, &pool, g, grid)?;
                (equivalent_rates_from_beta(&pool, &basis, eta, &beta, b.provenance(), &quad)?, beta)
            };
            Ok(Solved {
                result,
                pool: Some(pool),
                beta: Some(beta),
                death_rule: Some(spec.death_rule),
            })
        })
        .collect()
}

fn solve_one(cfg: &RunConfig, eta: ReplacementRate) -> Result<Solved, CliError> {
    solve_group(cfg, eta, cfg.n, cfg.mbar, &[cfg.gamma]).pop().expect("one gamma")
}

const TABLE_HEADER: &str = "scenario,n,mbar,gamma,rate,alpha,eta,alpha_bar,eta_bar,u_cpp,u_elris,\
time_steps,y_levels,richardson,alpha_bar_pct_4sig,eta_bar_pct_4sig";

fn table_row(scenario: &str, n: PoolSize, r: &EquivalenceResult) -> String {
    let (nt, ny, levels) = r
        .resolution
        .map(|p| (p.time_steps.to_string(), p.y_levels.to_string(), p.levels.to_string()))
        .unwrap_or_default();
    format!(
        "{scenario},{},{},{},{},{},{},{},{},{},{},{nt},{ny},{levels},{},{}",
        n.label(),
        r.mbar,
        r.gamma,
        r.rate,
        r.alpha,
        full(r.eta),
        full(r.alpha_bar),
        full(r.eta_bar),
        full(r.u_cpp),
        full(r.u_elris),
        sig4(100.0 * r.alpha_bar),
        sig4(100.0 * r.eta_bar),
    )
}

#[derive(Serialize)]
struct ResultRecord<'a> {
    version: &'a str,
    scenario: &'a str,
    n: String,
    death_rule: Option<DeathRule>,
    result: &'a EquivalenceResult,
}

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let eta = eta_for(cfg)?;
    let solved = solve_one(cfg, eta)?;
    let r = &solved.result;
    println!(
        "n = {} mbar = {} gamma = {}: alpha_bar = {}% eta_bar = {}%",
        cfg.n.label(),
        cfg.mbar,
        cfg.gamma,
        sig4(100.0 * r.alpha_bar),
        sig4(100.0 * r.eta_bar)
    );
    write_json(
        &out_file(cfg, "result.json")?,
        &ResultRecord {
            version: VERSION,
            scenario: &cfg.scenario,
            n: cfg.n.label(),
            death_rule: solved.death_rule,
            result: r,
        },
    )?;
    let table = out_file(cfg, "table.csv")?;
    let fresh = !table.exists();
    let mut file = fs::OpenOptions::new().create(true).append(true).open(&table)?;
    if fresh {
        writeln!(file, "{TABLE_HEADER}")?;
    }
    writeln!(file, "{}", table_row(&cfg.scenario, cfg.n, r))?;
    Ok(())
}

fn sanitize(msg: &str) -> String {
    msg.replace([',', '\n', '"'], ";")
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let eta = eta_for(cfg)?;
    let mbars = cfg
        .mbar_list
        .clone()
        .unwrap_or_else(|| (65..=95).map(f64::from).collect());
    let gammas = cfg.gammas();
    let mut sizes = cfg.n_list.clone();
    sizes.sort_by_key(PoolSize::order);
    sizes.dedup();
    let groups: Vec<(PoolSize, f64)> = sizes.iter().flat_map(|&n| mbars.iter().map(move |&m| (n, m))).collect();
    let solved: Vec<Vec<Result<Solved, CliError>>> = groups
        .par_iter()
        .map(|&(n, m)| solve_group(cfg, eta, n, m, &gammas))
        .collect();

    let mut rows = Vec::new();
    for (&(n, mbar), cells) in groups.iter().zip(&solved) {
        for (&gamma, cell) in gammas.iter().zip(cells) {
            rows.push((n, mbar, gamma, cell));
        }
    }
    rows.sort_by(|a, b| {
        a.0.order()
            .cmp(&b.0.order())
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    let mut text = format!("{TABLE_HEADER},status\n");
    let mut failures = 0;
    for (n, mbar, gamma, cell) in rows {
        match cell {
            Ok(s) => text.push_str(&format!("{},ok\n", table_row(&cfg.scenario, n, &s.result))),
            Err(e) => {
                failures += 1;
                text.push_str(&format!(
                    "{},{},{mbar},{gamma},{},{},{},,,,,,,,,,error: {}\n",
                    cfg.scenario,
                    n.label(),
                    cfg.rate,
                    cfg.alpha,
                    full(eta.value()),
                    sanitize(&e.to_string())
                ));
            }
        }
    }
    fs::write(out_file(cfg, "sweep.csv")?, text)?;
    println!("sweep: {} cells, {failures} failed", groups.len() * gammas.len());
    if failures > 0 {
        return Err(CliError::SweepFailed(failures));
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.seed.ok_or(CliError::MissingSeed)?;
    if cfg.n == PoolSize::Infinite {
        return Err(CliError::Config("simulation needs a finite pool size".into()));
    }
    let eta = eta_for(cfg)?;
    let solved = solve_one(cfg, eta)?;
    let alpha_bar = cfg.alpha_bar.unwrap_or(solved.result.alpha_bar);
    let schedule = solved.schedule(cfg)?;
    let pool = solved.pool.expect("finite pool");
    let basis = cfg.basis_for(cfg.gamma)?;
    let n_paths = cfg.fan_paths.max(cfg.paths);
    let run = simulate_paths(&SimulationSpec::new(seed, n_paths, alpha_bar), &pool, &basis, &schedule)?;

    let mut paths = String::from("age,path_id,income\n");
    for p in run.paths.iter().take(cfg.paths) {
        for (age, income) in run.ages.iter().zip(&p.income) {
            paths.push_str(&format!("{age},{},{}\n", p.path_id, full(*income)));
        }
    }
    fs::write(out_file(cfg, "paths.csv")?, paths)?;

    let fan = percentile_fan(&run, &FAN_LEVELS)?;
    let mut text = String::from("age,q20,q40,q60,q80,n_alive\n");
    for row in &fan.rows {
        let q: Vec<String> = row.quantiles.iter().map(|v| full(*v)).collect();
        text.push_str(&format!("{},{},{}\n", row.age, q.join(","), row.n_alive));
    }
    fs::write(out_file(cfg, "fan.csv")?, text)?;
    println!("simulated {n_paths} paths at alpha_bar = {}% (seed {seed})", sig4(100.0 * alpha_bar));
    Ok(())
}

pub fn generosity(cfg: &RunConfig) -> Result<(), CliError> {
    let verdict_path = cfg.out_dir.join(VERDICT_FILE);
    let verdict: ExponentVerdict = match fs::read_to_string(&verdict_path) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => return Err(CliError::VerdictMissing(verdict_path)),
    };
    if cfg.n == PoolSize::Infinite {
        return Err(CliError::Config("generosity needs a finite pool size".into()));
    }
    let eta = eta_for(cfg)?;
    let life = cfg.life()?;
    let quad = cfg.quadrature();
    let mbars = cfg.mbar_list.clone().unwrap_or_else(|| vec![70.0, 80.0, 90.0]);
    let gammas = cfg.gammas();
    let cells: Vec<Vec<Result<(f64, f64), CliError>>> = mbars
        .par_iter()
        .map(|&m| {
            solve_group(cfg, eta, cfg.n, m, &gammas)
                .into_iter()
                .zip(&gammas)
                .map(|(s, &g)| {
                    let s = s?;
                    let law = cfg.member_law(m)?;
                    let cpp = cpp_generosity(cfg.alpha, eta, &law, &life, &quad)?;
                    let pool = s.pool.expect("finite pool");
                    let elris = elris_generosity(&pool, &cfg.basis_for(g)?, &life, &s.schedule(cfg)?, verdict.form, &quad)?;
                    Ok((cpp, elris))
                })
                .collect()
        })
        .collect();
    let mut text = String::from("n,mbar,gamma,cpp_g,elris_g,cpp_g_4sig,elris_g_4sig\n");
    for (&m, row) in mbars.iter().zip(cells) {
        for (&g, cell) in gammas.iter().zip(row) {
            let (cpp, elris) = cell?;
            text.push_str(&format!(
                "{},{m},{g},{},{},{},{}\n",
                cfg.n.label(),
                full(cpp),
                full(elris),
                sig4(cpp),
                sig4(elris)
            ));
        }
    }
    fs::write(out_file(cfg, "generosity.csv")?, text)?;
    println!("generosity: {} cells (exponent form {:?})", mbars.len() * gammas.len(), verdict.form);
    Ok(())
}

/// Seed used by the oracle's Monte Carlo checks when none is configured.
const ORACLE_DEFAULT_SEED: u64 = 20_240_601;

pub fn oracle(cfg: &RunConfig) -> Result<(), CliError> {
    let basis = cfg.basis_for(cfg.gamma)?;
    let eta = eta_for(cfg)?;
    let report = validation_suite(&basis, eta, &cfg.quadrature(), cfg.seed.unwrap_or(ORACLE_DEFAULT_SEED))?;
    let text = report.to_text();
    fs::write(out_file(cfg, "oracle_report.txt")?, &text)?;
    fs::write(out_file(cfg, "oracle_report.csv")?, report.to_csv())?;
    write_json(&out_file(cfg, VERDICT_FILE)?, &report.verdict)?;
    print!("{text}");
    if !report.all_passed() {
        return Err(CliError::OracleFailed);
    }
    Ok(())
}

//! Seeded Monte Carlo of pool income paths.
//!
//! Death times are drawn exactly by inverting the Gompertz survival function,
//! the fund `X` follows in closed form from them, and the reference member's
//! income `d_s X / N_{s+T}` is integrated piecewise between schedule nodes,
//! deaths and age boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{crra, EconomicBasis};
use crate::error::{invalid, Error, Result};
use crate::mortality::GompertzLaw;
use crate::pool::PoolSpec;
use crate::solver::PayoutSchedule;

/// Paths needed before a percentile fan is reported.
pub const MIN_FAN_PATHS: usize = 1000;
/// Age bins with fewer living references are flagged.
pub const LOW_CONFIDENCE_ALIVE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub seed: Option<u64>,
    pub n_paths: usize,
    /// Employee contribution rate; the fund receives twice this.
    pub alpha: f64,
}

impl SimulationSpec {
    pub fn new(seed: u64, n_paths: usize, alpha: f64) -> Self {
        Self {
            seed: Some(seed),
            n_paths,
            alpha,
        }
    }
}

/// Outcome of one simulated pool, seen from its reference member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path_id: u64,
    /// Age at death of the reference member, capped at the schedule horizon.
    pub death_age: f64,
    pub fund: f64,
    /// Payout received in each age-year from retirement on.
    pub income: Vec<f64>,
    /// `∫ e^{-ρt} u(payout) dt` over retirement, discounted to entry.
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub seed: u64,
    /// Age at the start of each income bin.
    pub ages: Vec<f64>,
    pub paths: Vec<PathRecord>,
}

impl SimulationRun {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn retirement_age(&self) -> f64 {
        self.ages[0]
    }
}

/// Exact Gompertz lifetime (years after `age`) from a uniform draw in `[0, 1)`.
pub fn sample_lifetime(law: &GompertzLaw, age: f64, u: f64) -> f64 {
    let b = law.dispersion();
    let log_v = (-u).ln_1p();
    b * (-((law.modal_age() - age) / b).exp() * log_v).ln_1p()
}

/// Deterministic per-path generator: the master seed selects the key, the path the stream.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// Continuous payout built from the schedule: `e^{-rs} d_s` is interpolated
/// quadratically on each Simpson panel, so its integral reproduces the budget
/// computed on the grid.
#[derive(Debug, Clone)]
pub struct ContinuousPayout {
    step: f64,
    rate: f64,
    discounted: Vec<f64>,
}

impl ContinuousPayout {
    pub fn new(schedule: &PayoutSchedule) -> Result<Self> {
        let grid = schedule.grid();
        if !(grid.len() - 1).is_multiple_of(2) {
            return Err(invalid("s_grid", "simulation needs an even number of panels"));
        }
        let discounted = schedule
            .values()
            .iter()
            .enumerate()
            .map(|(i, d)| (-schedule.rate() * grid.point(i)).exp() * d)
            .collect();
        Ok(Self {
            step: grid.step(),
            rate: schedule.rate(),
            discounted,
        })
    }

    pub fn horizon(&self) -> f64 {
        (self.discounted.len() - 1) as f64 * self.step
    }

    /// `e^{-rs} d_s`.
    pub fn discounted(&self, s: f64) -> f64 {
        let panels = (self.discounted.len() - 1) / 2;
        if !(s >= 0.0) || s > self.horizon() {
            return 0.0;
        }
        let k = ((s / (2.0 * self.step)).floor() as usize).min(panels - 1);
        let x = s / self.step - 2.0 * k as f64;
        let (f0, f1, f2) = (
            self.discounted[2 * k],
            self.discounted[2 * k + 1],
            self.discounted[2 * k + 2],
        );
        let v = f0 * (x - 1.0) * (x - 2.0) / 2.0 - f1 * x * (x - 2.0) + f2 * x * (x - 1.0) / 2.0;
        v.max(0.0)
    }

    pub fn density(&self, s: f64) -> f64 {
        (self.rate * s).exp() * self.discounted(s)
    }

    /// Interior nodes in `(a, b)` where the interpolant changes panel.
    fn panel_breaks(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        let width = 2.0 * self.step;
        let first = (a / width).floor() as usize + 1;
        (first..).map(move |k| k as f64 * width).take_while(move |x| *x < b)
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

/// Sorted breakpoints of `[0, end]`: panel edges, integer years and `extra`.
fn breakpoints(payout: &ContinuousPayout, end: f64, extra: &[f64]) -> Vec<f64> {
    let mut points = vec![0.0, end];
    points.extend(payout.panel_breaks(0.0, end));
    points.extend((1..).map(|y| y as f64).take_while(|y| *y < end));
    points.extend(extra.iter().copied().filter(|e| *e > 0.0 && *e < end));
    points.sort_by(f64::total_cmp);
    points.dedup();
    points
}

/// Present value at retirement of everything the fund pays out while anyone
/// is alive; equals `X` when some member reaches the horizon.
pub fn payout_present_value(payout: &ContinuousPayout, fund: f64, retirement_deaths: &[f64]) -> f64 {
    let last = retirement_deaths.iter().copied().fold(0.0, f64::max).min(payout.horizon());
    breakpoints(payout, last, &[])
        .windows(2)
        .map(|w| simpson(|s| payout.discounted(s), w[0], w[1]))
        .sum::<f64>()
        * fund
}

struct PathContext<'a> {
    pool: &'a PoolSpec,
    basis: &'a EconomicBasis,
    payout: &'a ContinuousPayout,
    alpha: f64,
    bins: usize,
}

impl PathContext<'_> {
    fn run(&self, seed: u64, path_id: u64) -> PathRecord {
        let mut rng = path_rng(seed, path_id);
        let life = self.pool.life();
        let law = self.pool.member_law();
        let span = life.span();
        let cap = span + self.payout.horizon();
        let lifetimes: Vec<f64> = (0..self.pool.size())
            .map(|_| sample_lifetime(law, life.entry_age(), rng.random::<f64>()).min(cap))
            .collect();
        let rho = self.basis.rho();
        let fund = 2.0
            * self.alpha
            * lifetimes
                .iter()
                .map(|&tau| {
                    let worked = tau.min(span);
                    if rho == 0.0 {
                        worked
                    } else {
                        (rho * span).exp() * -(-rho * worked).exp_m1() / rho
                    }
                })
                .sum::<f64>();

        let mut income = vec![0.0; self.bins];
        let own = lifetimes[0] - span;
        let mut utility = 0.0;
        if own > 0.0 {
            let mut companions: Vec<f64> = lifetimes[1..]
                .iter()
                .map(|t| t - span)
                .filter(|e| *e > 0.0)
                .collect();
            companions.sort_by(f64::total_cmp);
            let points = breakpoints(self.payout, own, &companions);
            let gamma = self.basis.gamma();
            let mut next_death = 0;
            for w in points.windows(2) {
                let (a, b) = (w[0], w[1]);
                while next_death < companions.len() && companions[next_death] <= a {
                    next_death += 1;
                }
                let alive = 1 + companions.len() - next_death;
                let share = fund / alive as f64;
                let bin = (a.floor() as usize).min(self.bins - 1);
                income[bin] += share * simpson(|s| self.payout.density(s), a, b);
                utility += simpson(
                    |s| (-rho * (span + s)).exp() * crra(share * self.payout.density(s), gamma),
                    a,
                    b,
                );
            }
        }
        PathRecord {
            path_id,
            death_age: life.entry_age() + lifetimes[0],
            fund,
            income,
            utility,
        }
    }
}

/// Simulates `spec.n_paths` independent pools under `schedule`.
pub fn simulate_paths(
    spec: &SimulationSpec,
    pool: &PoolSpec,
    basis: &EconomicBasis,
    schedule: &PayoutSchedule,
) -> Result<SimulationRun> {
    let seed = spec.seed.ok_or(Error::MissingSeed)?;
    if spec.n_paths == 0 {
        return Err(invalid("paths", "at least one path is required"));
    }
    if !(spec.alpha > 0.0 && spec.alpha.is_finite()) {
        return Err(invalid("alpha", "contribution rate must be positive"));
    }
    if (schedule.rate() - basis.rate()).abs() > 1e-15 {
        return Err(invalid("rate", "schedule and basis disagree on the interest rate"));
    }
    let budget = schedule.budget();
    if (budget - 1.0).abs() > 1e-6 {
        return Err(invalid("d", format!("schedule violates the budget constraint ({budget})")));
    }
    let payout = ContinuousPayout::new(schedule)?;
    let bins = payout.horizon().ceil() as usize;
    let context = PathContext {
        pool,
        basis,
        payout: &payout,
        alpha: spec.alpha,
        bins,
    };
    let paths = (0..spec.n_paths as u64)
        .into_par_iter()
        .map(|id| context.run(seed, id))
        .collect();
    let x1 = pool.life().retirement_age();
    Ok(SimulationRun {
        seed,
        ages: (0..bins).map(|j| x1 + j as f64).collect(),
        paths,
    })
}

/// Type-7 (linear between order statistics) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanRow {
    pub age: f64,
    pub quantiles: Vec<f64>,
    pub n_alive: usize,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileFan {
    pub levels: Vec<f64>,
    pub rows: Vec<FanRow>,
}

/// Per-age quantiles of yearly income over paths whose reference is alive at the start of that age.
pub fn percentile_fan(run: &SimulationRun, levels: &[f64]) -> Result<PercentileFan> {
    if run.n_paths() < MIN_FAN_PATHS {
        return Err(Error::TooFewPaths {
            required: MIN_FAN_PATHS,
            actual: run.n_paths(),
        });
    }
    if let Some(q) = levels.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(invalid("quantiles", format!("level {q} outside [0, 1]")));
    }
    let rows = run
        .ages
        .iter()
        .enumerate()
        .map(|(j, &age)| {
            let mut values: Vec<f64> = run
                .paths
                .iter()
                .filter(|p| p.death_age > age)
                .map(|p| p.income[j])
                .collect();
            values.sort_by(f64::total_cmp);
            FanRow {
                age,
                quantiles: levels.iter().map(|q| quantile_sorted(&values, *q)).collect(),
                n_alive: values.len(),
                low_confidence: values.len() < LOW_CONFIDENCE_ALIVE,
            }
        })
        .collect();
    Ok(PercentileFan {
        levels: levels.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Sample mean and standard error of lifetime utility; pre-retirement deaths count as zero.
pub fn mc_utility(run: &SimulationRun) -> UtilityEstimate {
    let n = run.n_paths();
    let mean = run.paths.iter().map(|p| p.utility).sum::<f64>() / n as f64;
    let var = if n > 1 {
        run.paths.iter().map(|p| (p.utility - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    UtilityEstimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        n_paths: n,
    }
}

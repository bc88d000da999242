//! Markov-chain approximation of the accumulation phase.
//!
//! The state is `(y, k)`: the per-unit fund value `Y_t` on a uniform grid and
//! the number of living companions of a reference member who is pinned alive
//! on `[0, T]`. The joint distribution is pushed forward in time; at `T` every
//! moment `b_ℓ = E[Y^{1-γ} ; N_T = ℓ]` is read off the same terminal table.
//!
//! Each step moves `y` by the Euler increment `(ρy + k + 1)δ`, split between
//! the two neighbouring grid nodes so that the mean increment is exact, and
//! removes companions according to the configured [`DeathRule`].

use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::EconomicBasis;
use crate::error::{invalid, Error, Result};
use crate::pool::{binomial_pmf, PoolSpec};

/// Mass passing the top of the grid beyond this is a hard error.
pub const LEAK_TOLERANCE: f64 = 1e-12;

/// Terminal mass at `y = 0` tolerated as a splitting residue.
const ORIGIN_RESIDUE: f64 = 1e-9;

/// Binomial death weights below this are dropped (per row and step).
const DEATH_WEIGHT_CUTOFF: f64 = 1e-40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeathRule {
    /// At most one death per step, with probability `k·μ(x0+t)·δ` (capped at 0.1).
    SingleDeath,
    /// Exact `Binomial(k, 1 - ₔp_{x0+t})` deaths per step.
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub time_steps: usize,
    pub y_levels: usize,
}

impl Resolution {
    pub fn new(time_steps: usize, y_levels: usize) -> Self {
        Self {
            time_steps,
            y_levels,
        }
    }

    pub fn refined(&self, level: usize) -> Self {
        Self::new(self.time_steps << level, self.y_levels << level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    /// Coarsest resolution; Richardson levels double both counts.
    pub resolution: Resolution,
    pub richardson_levels: usize,
    /// Upper fund bound; `None` picks [`default_y_max`].
    pub y_max: Option<f64>,
    pub death_rule: DeathRule,
    /// Edge cells of a row holding less mass than this are discarded each step.
    pub prune_threshold: f64,
}

impl LatticeSpec {
    pub fn new(time_steps: usize, y_levels: usize, richardson_levels: usize) -> Self {
        Self {
            resolution: Resolution::new(time_steps, y_levels),
            richardson_levels,
            y_max: None,
            death_rule: DeathRule::SingleDeath,
            prune_threshold: 0.0,
        }
    }

    /// 2000 × 1000 with two-level extrapolation.
    pub fn desk() -> Self {
        Self::new(2000, 1000, 2)
    }

    /// 8000 × 4000 with two-level extrapolation.
    pub fn production() -> Self {
        Self::new(8000, 4000, 2)
    }

    pub fn with_death_rule(mut self, rule: DeathRule) -> Self {
        self.death_rule = rule;
        self
    }

    pub fn with_prune_threshold(mut self, threshold: f64) -> Self {
        self.prune_threshold = threshold;
        self
    }

    pub fn with_y_max(mut self, y_max: f64) -> Self {
        self.y_max = Some(y_max);
        self
    }

    pub fn level(&self, i: usize) -> Resolution {
        self.resolution.refined(i)
    }

    pub fn resolved_y_max(&self, pool: &PoolSpec, basis: &EconomicBasis) -> f64 {
        self.y_max
            .unwrap_or_else(|| default_y_max(pool, basis, self.resolution.y_levels))
    }

    pub fn validate(&self, pool: &PoolSpec, basis: &EconomicBasis) -> Result<()> {
        let r = self.resolution;
        if r.time_steps < 100 {
            return Err(invalid("n_t", format!("needs at least 100 time steps, got {}", r.time_steps)));
        }
        if r.y_levels < 50 {
            return Err(invalid("n_y", format!("needs at least 50 fund levels, got {}", r.y_levels)));
        }
        if !(1..=3).contains(&self.richardson_levels) {
            return Err(invalid("richardson", format!("levels must be 1, 2 or 3, got {}", self.richardson_levels)));
        }
        let floor = pool.size() as f64 * basis.accumulation_factor(pool.life().span());
        let y_max = self.resolved_y_max(pool, basis);
        if !(y_max >= floor) {
            return Err(invalid("y_max", format!("must be at least n·y0 = {floor}, got {y_max}")));
        }
        if !(self.prune_threshold >= 0.0 && self.prune_threshold < 1e-6) {
            return Err(invalid("prune", format!("threshold must lie in [0, 1e-6), got {}", self.prune_threshold)));
        }
        Ok(())
    }
}

/// Node splitting diffuses the fund like a Poisson count of cells, and
/// interest compounds early noise, so the terminal standard deviation is at
/// most `√(yΔe^{ρT})`. The bound sits `Z` such deviations above the largest
/// drift-only fund `n·y0`: `u = y_max/(n·y0)` solves `u = 1 + Z·√(u·e^{ρT}/n_y)`.
pub fn default_y_max(pool: &PoolSpec, basis: &EconomicBasis, y_levels: usize) -> f64 {
    const Z: f64 = 12.0;
    let span = pool.life().span();
    let top = pool.size() as f64 * basis.accumulation_factor(span);
    let c = Z * ((basis.rho() * span).exp() / y_levels as f64).sqrt();
    let root = 0.5 * (c + (c * c + 4.0).sqrt());
    top * root * root
}

/// Joint distribution of `(y node, companions)` at retirement.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDistribution {
    pub resolution: Resolution,
    pub y_max: f64,
    pub pool_size: usize,
    /// Row-major `[companions][y node]`, `pool_size × (y_levels + 1)`.
    mass: Vec<f64>,
    pub leaked_mass: f64,
    pub pruned_mass: f64,
}

impl TerminalDistribution {
    pub fn nodes(&self) -> usize {
        self.resolution.y_levels + 1
    }

    pub fn cell_width(&self) -> f64 {
        self.y_max / self.resolution.y_levels as f64
    }

    pub fn y_value(&self, node: usize) -> f64 {
        node as f64 * self.cell_width()
    }

    /// Mass at each y node for `companions` living companions.
    pub fn row(&self, companions: usize) -> &[f64] {
        let nodes = self.nodes();
        &self.mass[companions * nodes..(companions + 1) * nodes]
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.pool_size).map(|k| self.row(k).iter().sum::<f64>()).sum()
    }

    /// Distribution of the number of living companions at `T`.
    pub fn companion_marginal(&self) -> Vec<f64> {
        (0..self.pool_size).map(|k| self.row(k).iter().sum()).collect()
    }

    pub fn mean_y(&self) -> f64 {
        self.moment(|y| y)
    }

    fn moment(&self, f: impl Fn(f64) -> f64) -> f64 {
        let nodes = self.nodes();
        let mut total = 0.0;
        for j in 0..nodes {
            let v = f(self.y_value(j));
            for k in 0..self.pool_size {
                let m = self.mass[k * nodes + j];
                if m != 0.0 {
                    total += m * v;
                }
            }
        }
        total
    }

    /// Splitting leaves `(1 - frac)^{n_t}` at `y = 0`; that residue is ignored
    /// (node 0 never enters the moments) unless it is large enough to matter.
    fn check_origin_empty(&self) -> Result<()> {
        let origin: f64 = (0..self.pool_size).map(|k| self.row(k)[0]).sum();
        if origin > ORIGIN_RESIDUE {
            return Err(Error::Degenerate(format!(
                "{origin:e} of terminal mass still at y = 0"
            )));
        }
        Ok(())
    }

    /// `b_ℓ = Σ_y y^{1-γ} P[y, ℓ-1 companions]`, ascending in `y`.
    pub fn b_values(&self, gamma: f64) -> Result<Vec<f64>> {
        self.check_origin_empty()?;
        let exponent = 1.0 - gamma;
        let powers: Vec<f64> = (0..self.nodes())
            .map(|j| if j == 0 { 0.0 } else { self.y_value(j).powf(exponent) })
            .collect();
        Ok((0..self.pool_size)
            .map(|k| {
                self.row(k)
                    .iter()
                    .zip(&powers)
                    .filter(|(m, _)| **m != 0.0)
                    .map(|(m, p)| m * p)
                    .sum()
            })
            .collect())
    }

    /// `E[log Y]` with all companion counts pooled (ascending `y`, then `k`).
    pub fn log_y_moment(&self) -> Result<f64> {
        self.check_origin_empty()?;
        Ok(self.moment(|y| if y > 0.0 { y.ln() } else { 0.0 }))
    }

    /// CSV dump: a header line `n_t,n_y,y_max,n`, its values, then one row of
    /// node masses per companion count.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n_t,n_y,y_max,n")?;
        writeln!(
            w,
            "{},{},{:.17e},{}",
            self.resolution.time_steps, self.resolution.y_levels, self.y_max, self.pool_size
        )?;
        for k in 0..self.pool_size {
            let line: Vec<String> = self.row(k).iter().map(|m| format!("{m:.17e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> io::Result<Self> {
        let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty dump"))??;
        if header.trim() != "n_t,n_y,y_max,n" {
            return Err(bad("unexpected header"));
        }
        let meta = lines.next().ok_or_else(|| bad("missing metadata"))??;
        let fields: Vec<&str> = meta.split(',').collect();
        if fields.len() != 4 {
            return Err(bad("metadata needs four fields"));
        }
        let parse_usize = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("bad integer"));
        let time_steps = parse_usize(fields[0])?;
        let y_levels = parse_usize(fields[1])?;
        let y_max: f64 = fields[2].trim().parse().map_err(|_| bad("bad y_max"))?;
        let pool_size = parse_usize(fields[3])?;
        let mut mass = Vec::with_capacity(pool_size * (y_levels + 1));
        for line in lines {
            let line = line?;
            for v in line.split(',') {
                mass.push(v.trim().parse::<f64>().map_err(|_| bad("bad mass"))?);
            }
        }
        if mass.len() != pool_size * (y_levels + 1) {
            return Err(bad("mass table has the wrong size"));
        }
        Ok(Self {
            resolution: Resolution::new(time_steps, y_levels),
            y_max,
            pool_size,
            mass,
            leaked_mass: 0.0,
            pruned_mass: 0.0,
        })
    }
}

/// Half-open active node range of one row; empty when `lo >= hi`.
#[derive(Debug, Clone, Copy)]
struct Span {
    lo: usize,
    hi: usize,
}

impl Span {
    const EMPTY: Span = Span { lo: 0, hi: 0 };

    fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }

    fn union(self, other: Span) -> Span {
        match (self.is_empty(), other.is_empty()) {
            (true, _) => other,
            (_, true) => self,
            _ => Span {
                lo: self.lo.min(other.lo),
                hi: self.hi.max(other.hi),
            },
        }
    }
}

/// Probability weights for `d = 0, 1, ...` deaths among `k` companions.
fn death_weights(rule: DeathRule, k: usize, hazard_step: f64, step_death: f64) -> Vec<f64> {
    if k == 0 {
        return vec![1.0];
    }
    match rule {
        DeathRule::SingleDeath => {
            let p = k as f64 * hazard_step;
            vec![1.0 - p, p]
        }
        DeathRule::Binomial => {
            let q = step_death;
            let mean = k as f64 * q;
            if mean > 50.0 {
                let mut pmf = binomial_pmf(k, q);
                while pmf.len() > 1 && *pmf.last().unwrap() < DEATH_WEIGHT_CUTOFF {
                    pmf.pop();
                }
                return pmf;
            }
            let odds = q / (1.0 - q);
            let mut weights = vec![(k as f64 * (-q).ln_1p()).exp()];
            for d in 0..k {
                let next = weights[d] * (k - d) as f64 / (d + 1) as f64 * odds;
                if next < DEATH_WEIGHT_CUTOFF && (d + 1) as f64 > mean {
                    break;
                }
                weights.push(next);
            }
            weights
        }
    }
}

/// Pushes the exact initial state `(y = 0, k = n - 1)` forward to `T` at `resolution`.
pub fn propagate_at(
    pool: &PoolSpec,
    basis: &EconomicBasis,
    spec: &LatticeSpec,
    resolution: Resolution,
) -> Result<TerminalDistribution> {
    spec.validate(pool, basis)?;
    let rows = pool.size();
    let nodes = resolution.y_levels + 1;
    let y_max = spec.resolved_y_max(pool, basis);
    let dy = y_max / resolution.y_levels as f64;
    let span = pool.life().span();
    let dt = span / resolution.time_steps as f64;
    let x0 = pool.life().entry_age();
    let law = *pool.member_law();
    let rho = basis.rho();

    if spec.death_rule == DeathRule::SingleDeath && rows > 1 {
        // hazard is increasing, so the last step is the worst
        let t_last = (resolution.time_steps - 1) as f64 * dt;
        let p = (rows - 1) as f64 * law.hazard(x0 + t_last) * dt;
        if p > 0.1 {
            return Err(Error::StepTooCoarse {
                probability: p,
                time: t_last,
            });
        }
    }

    let mut current = vec![0.0; rows * nodes];
    let mut drifted = vec![0.0; rows * nodes];
    let mut spans = vec![Span::EMPTY; rows];
    current[(rows - 1) * nodes] = 1.0;
    spans[rows - 1] = Span { lo: 0, hi: 1 };

    let rho_cells = rho * dt;
    let mut leaked = 0.0;
    let mut pruned = 0.0;

    for step in 0..resolution.time_steps {
        let t = step as f64 * dt;
        let hazard_step = law.hazard(x0 + t) * dt;
        let step_death = -(-law.cumulative_hazard(x0 + t, dt)).exp_m1();

        // deterministic-in-mean drift, row by row
        let drift: Vec<(Span, f64)> = drifted
            .par_chunks_mut(nodes)
            .zip(current.par_chunks(nodes))
            .zip(spans.par_iter())
            .enumerate()
            .map(|(k, ((out, row), span))| {
                if span.is_empty() {
                    return (Span::EMPTY, 0.0);
                }
                let contribution = (k + 1) as f64 * dt / dy;
                let shift = |j: usize| rho_cells * j as f64 + contribution;
                let lo = span.lo + shift(span.lo).floor() as usize;
                let hi = (span.hi - 1 + shift(span.hi - 1).floor() as usize + 2).min(nodes);
                out[lo..hi].iter_mut().for_each(|v| *v = 0.0);
                let mut leak = 0.0;
                for j in span.lo..span.hi {
                    let m = row[j];
                    if m == 0.0 {
                        continue;
                    }
                    let g = shift(j);
                    let whole = g.floor();
                    let frac = g - whole;
                    let dest = j + whole as usize;
                    let low = m * (1.0 - frac);
                    let high = m * frac;
                    if dest < nodes {
                        out[dest] += low;
                    } else {
                        leak += low;
                    }
                    if dest + 1 < nodes {
                        out[dest + 1] += high;
                    } else {
                        leak += high;
                    }
                }
                (Span { lo: lo.min(hi), hi }, leak)
            })
            .collect();
        leaked += drift.iter().map(|(_, l)| l).sum::<f64>();

        let weights: Vec<Vec<f64>> = (0..rows)
            .map(|k| death_weights(spec.death_rule, k, hazard_step, step_death))
            .collect();

        // gather: row k' receives d deaths from row k' + d
        let threshold = spec.prune_threshold;
        let gathered: Vec<(Span, f64)> = current
            .par_chunks_mut(nodes)
            .enumerate()
            .map(|(target, out)| {
                let mut span = Span::EMPTY;
                for (source, w) in weights.iter().enumerate().skip(target) {
                    let d = source - target;
                    if d < w.len() && !drift[source].0.is_empty() {
                        span = span.union(drift[source].0);
                    }
                }
                if span.is_empty() {
                    return (Span::EMPTY, 0.0);
                }
                out[span.lo..span.hi].iter_mut().for_each(|v| *v = 0.0);
                for (source, w) in weights.iter().enumerate().skip(target) {
                    let d = source - target;
                    let s = drift[source].0;
                    if d >= w.len() || s.is_empty() {
                        continue;
                    }
                    let weight = w[d];
                    let input = &drifted[source * nodes + s.lo..source * nodes + s.hi];
                    for (o, i) in out[s.lo..s.hi].iter_mut().zip(input) {
                        *o += weight * i;
                    }
                }
                let mut cut = 0.0;
                while span.lo < span.hi && out[span.lo] <= threshold {
                    cut += out[span.lo];
                    span.lo += 1;
                }
                while span.hi > span.lo && out[span.hi - 1] <= threshold {
                    cut += out[span.hi - 1];
                    span.hi -= 1;
                }
                (span, cut)
            })
            .collect();
        for (k, (span, cut)) in gathered.into_iter().enumerate() {
            spans[k] = span;
            pruned += cut;
        }
    }

    // clear anything outside the active spans so the table is exact
    for (k, span) in spans.iter().enumerate() {
        let row = &mut current[k * nodes..(k + 1) * nodes];
        if span.is_empty() {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row[..span.lo].iter_mut().for_each(|v| *v = 0.0);
            row[span.hi..].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    if leaked > LEAK_TOLERANCE {
        return Err(Error::MassLeak { leaked, y_max });
    }
    Ok(TerminalDistribution {
        resolution,
        y_max,
        pool_size: rows,
        mass: current,
        leaked_mass: leaked,
        pruned_mass: pruned,
    })
}

/// Terminal distribution at the coarsest resolution of `spec`.
pub fn propagate_distribution(
    pool: &PoolSpec,
    basis: &EconomicBasis,
    spec: &LatticeSpec,
) -> Result<TerminalDistribution> {
    propagate_at(pool, basis, spec, spec.resolution)
}

/// Terminal distributions at every Richardson level, coarsest first.
pub fn propagate_levels(
    pool: &PoolSpec,
    basis: &EconomicBasis,
    spec: &LatticeSpec,
) -> Result<Vec<TerminalDistribution>> {
    spec.validate(pool, basis)?;
    (0..spec.richardson_levels)
        .into_par_iter()
        .map(|i| propagate_at(pool, basis, spec, spec.level(i)))
        .collect()
}

/// Where a [`BVector`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub time_steps: usize,
    pub y_levels: usize,
    pub levels: usize,
    pub extrapolated: bool,
}

/// Accumulation moments `b_ℓ`, `ℓ = 1..n` (index 0 holds `ℓ = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BVector {
    values: Vec<f64>,
    provenance: Option<Provenance>,
}

impl BVector {
    /// Moments known in closed form or from an independent route.
    pub fn exact(values: Vec<f64>) -> Self {
        Self {
            values,
            provenance: None,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn provenance(&self) -> Option<Provenance> {
        self.provenance
    }

    /// Elementwise extrapolation across distributions of successive levels.
    pub fn from_levels(levels: &[TerminalDistribution], gamma: f64) -> Result<Self> {
        let per_level: Vec<Vec<f64>> = levels.iter().map(|d| d.b_values(gamma)).collect::<Result<_>>()?;
        let first = levels
            .first()
            .ok_or_else(|| Error::InconsistentResolution("no lattice levels".into()))?;
        let steps: Vec<f64> = levels
            .iter()
            .map(|d| 1.0 / d.resolution.time_steps as f64)
            .collect();
        let values = (0..first.pool_size)
            .map(|l| {
                let seq: Vec<(f64, f64)> = steps.iter().zip(&per_level).map(|(s, v)| (*s, v[l])).collect();
                if seq.len() == 1 {
                    Ok(seq[0].1)
                } else {
                    richardson_extrapolate(&seq)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            values,
            provenance: Some(Provenance {
                time_steps: first.resolution.time_steps,
                y_levels: first.resolution.y_levels,
                levels: levels.len(),
                extrapolated: levels.len() > 1,
            }),
        })
    }
}

/// `b_ℓ` for every `ℓ`, extrapolated over `spec.richardson_levels` resolutions.
pub fn compute_b_vector(
    pool: &PoolSpec,
    basis: &EconomicBasis,
    gamma: f64,
    spec: &LatticeSpec,
) -> Result<BVector> {
    if gamma == 1.0 {
        return Err(Error::LogUtilityRequired);
    }
    BVector::from_levels(&propagate_levels(pool, basis, spec)?, gamma)
}

/// `E[log Y]` given the reference is alive at `T`, extrapolated like [`compute_b_vector`].
pub fn compute_log_y_moment(pool: &PoolSpec, basis: &EconomicBasis, spec: &LatticeSpec) -> Result<f64> {
    log_y_from_levels(&propagate_levels(pool, basis, spec)?)
}

pub fn log_y_from_levels(levels: &[TerminalDistribution]) -> Result<f64> {
    let seq: Vec<(f64, f64)> = levels
        .iter()
        .map(|d| Ok((1.0 / d.resolution.time_steps as f64, d.log_y_moment()?)))
        .collect::<Result<_>>()?;
    match seq.len() {
        0 => Err(Error::InconsistentResolution("no lattice levels".into())),
        1 => Ok(seq[0].1),
        _ => richardson_extrapolate(&seq),
    }
}

/// Removes an `O(δ)` error from values at steps `δ, δ/2[, δ/4]`.
///
/// Two levels give `2f(δ/2) - f(δ)`; three levels apply a second elimination
/// of the `O(δ²)` term.
pub fn richardson_extrapolate(values: &[(f64, f64)]) -> Result<f64> {
    if !(2..=3).contains(&values.len()) {
        return Err(Error::InconsistentResolution(format!(
            "need 2 or 3 resolutions, got {}",
            values.len()
        )));
    }
    for pair in values.windows(2) {
        let ratio = pair[0].0 / pair[1].0;
        if !((ratio - 2.0).abs() < 1e-9) {
            return Err(Error::InconsistentResolution(format!(
                "steps {} and {} are not in a 2:1 ratio",
                pair[0].0, pair[1].0
            )));
        }
    }
    let first: Vec<f64> = values.windows(2).map(|p| 2.0 * p[1].1 - p[0].1).collect();
    Ok(match first.as_slice() {
        [single] => *single,
        [a, b] => (4.0 * b - a) / 3.0,
        _ => unreachable!(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::LifeCycle;
    use crate::mortality::GompertzLaw;
    use crate::pool::ExponentForm;
    use approx::assert_abs_diff_eq;

    fn basis() -> EconomicBasis {
        EconomicBasis::new(0.01, 0.06, 2.0).unwrap()
    }

    fn pool(n: usize, m: f64, span: f64) -> PoolSpec {
        PoolSpec::new(n, GompertzLaw::new(m, 10.0).unwrap(), LifeCycle::new(25.0, span).unwrap()).unwrap()
    }

    #[test]
    fn richardson_cases() {
        assert_abs_diff_eq!(richardson_extrapolate(&[(0.1, 1.1), (0.05, 1.05)]).unwrap(), 1.0, epsilon = 1e-14);
        assert_eq!(richardson_extrapolate(&[(0.1, 3.0), (0.05, 3.0), (0.025, 3.0)]).unwrap(), 3.0);
        // exact for f(δ) = 1 + δ + δ²
        let f = |d: f64| 1.0 + d + d * d;
        let seq = [(0.2, f(0.2)), (0.1, f(0.1)), (0.05, f(0.05))];
        assert_abs_diff_eq!(richardson_extrapolate(&seq).unwrap(), 1.0, epsilon = 1e-13);
        assert!(richardson_extrapolate(&[(0.1, 1.0), (0.04, 1.0)]).is_err());
        assert!(richardson_extrapolate(&[(0.1, 1.0)]).is_err());
    }

    #[test]
    fn lone_member_concentrates_at_closed_form() {
        let pool = pool(1, 80.0, 40.0);
        let spec = LatticeSpec::new(400, 200, 1);
        let dist = propagate_distribution(&pool, &basis(), &spec).unwrap();
        let y0 = 0.4f64.exp_m1() / 0.01;
        assert!((dist.total_mass() - 1.0).abs() < 1e-10);
        assert!((dist.mean_y() - y0).abs() < dist.cell_width());
    }

    #[test]
    fn lone_member_extrapolates_to_closed_form() {
        let pool = pool(1, 80.0, 40.0);
        let b = compute_b_vector(&pool, &basis(), 2.0, &LatticeSpec::desk()).unwrap();
        let y0 = 0.4f64.exp_m1() / 0.01;
        assert_abs_diff_eq!(1.0 / y0, 0.020332, epsilon = 1e-6);
        assert_abs_diff_eq!(b.values()[0], 1.0 / y0, epsilon = 1e-6);
        let p = b.provenance().unwrap();
        assert!(p.extrapolated && p.levels == 2 && p.time_steps == 2000);
    }

    #[test]
    fn mass_is_conserved() {
        for rule in [DeathRule::SingleDeath, DeathRule::Binomial] {
            let spec = LatticeSpec::new(400, 200, 1).with_death_rule(rule);
            let dist = propagate_distribution(&pool(8, 70.0, 40.0), &basis(), &spec).unwrap();
            assert!((dist.total_mass() - 1.0).abs() < 1e-10, "{rule:?}");
            assert!(dist.leaked_mass < 1e-15);
        }
    }

    #[test]
    fn companion_marginal_converges_to_binomial() {
        let pool = pool(6, 70.0, 40.0);
        let exact = binomial_pmf(5, pool.survival_from_entry(40.0));
        let error = |nt: usize| {
            let spec = LatticeSpec::new(nt, 100, 1);
            let marginal = propagate_distribution(&pool, &basis(), &spec).unwrap().companion_marginal();
            marginal.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let coarse = error(200);
        let fine = error(400);
        assert!(coarse / fine >= 1.7, "coarse {coarse:e} fine {fine:e}");

        let spec = LatticeSpec::new(200, 100, 1).with_death_rule(DeathRule::Binomial);
        let marginal = propagate_distribution(&pool, &basis(), &spec).unwrap().companion_marginal();
        for (a, b) in marginal.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_mean_matches_b_hat_sum() {
        let pool = pool(5, 75.0, 40.0);
        let quad = crate::mortality::QuadratureSpec::default();
        let closed: f64 = (1..=5)
            .map(|l| crate::pool::b_hat(&pool, l, 0.01, ExponentForm::NMinusEllMinusOne, &quad).unwrap())
            .sum();
        let mean = |nt: usize| {
            let spec = LatticeSpec::new(nt, nt / 2, 1);
            propagate_distribution(&pool, &basis(), &spec).unwrap().mean_y()
        };
        let (coarse, fine) = (mean(500), mean(1000));
        assert!((fine - closed).abs() < (coarse - closed).abs());
        assert!((fine - closed).abs() / closed < 2e-3);
        assert!((2.0 * fine - coarse - closed).abs() / closed < 1e-4);
    }

    #[test]
    fn wider_grid_with_same_cells_is_identical() {
        let pool = pool(4, 80.0, 40.0);
        let spec = LatticeSpec::new(300, 150, 1);
        let y_max = spec.resolved_y_max(&pool, &basis());
        let narrow = propagate_distribution(&pool, &basis(), &spec.with_y_max(y_max)).unwrap();
        let mut wide_spec = spec.with_y_max(2.0 * y_max);
        wide_spec.resolution.y_levels *= 2;
        let wide = propagate_distribution(&pool, &basis(), &wide_spec).unwrap();
        assert_eq!(narrow.b_values(2.0).unwrap(), wide.b_values(2.0).unwrap());
        assert_eq!(narrow.log_y_moment().unwrap(), wide.log_y_moment().unwrap());
    }

    #[test]
    fn tight_grid_leaks() {
        let pool = pool(1, 80.0, 40.0);
        let floor = 0.4f64.exp_m1() / 0.01;
        let spec = LatticeSpec::new(500, 250, 1).with_y_max(floor * 1.0001);
        assert!(matches!(
            propagate_distribution(&pool, &basis(), &spec),
            Err(Error::MassLeak { .. })
        ));
    }

    #[test]
    fn coarse_steps_are_rejected() {
        let spec = LatticeSpec::new(100, 100, 1);
        assert!(matches!(
            propagate_distribution(&pool(200, 70.0, 40.0), &basis(), &spec),
            Err(Error::StepTooCoarse { .. })
        ));
        assert!(propagate_distribution(&pool(200, 70.0, 40.0), &basis(), &spec.with_death_rule(DeathRule::Binomial)).is_ok());
        assert!(LatticeSpec::new(50, 100, 1).validate(&pool(2, 80.0, 40.0), &basis()).is_err());
        assert!(LatticeSpec::new(100, 100, 4).validate(&pool(2, 80.0, 40.0), &basis()).is_err());
    }

    #[test]
    fn log_moment_increases_with_pool_size() {
        let spec = LatticeSpec::new(800, 400, 2);
        let lone = compute_log_y_moment(&pool(1, 80.0, 40.0), &basis(), &spec).unwrap();
        let y0 = 0.4f64.exp_m1() / 0.01;
        assert_abs_diff_eq!(lone, y0.ln(), epsilon = 1e-5);
        let mut prev = lone;
        for n in [2, 5, 10] {
            let v = compute_log_y_moment(&pool(n, 80.0, 40.0), &basis(), &spec).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn pruning_keeps_results_close() {
        let pool = pool(10, 75.0, 40.0);
        let exact = propagate_distribution(&pool, &basis(), &LatticeSpec::new(400, 200, 1)).unwrap();
        let pruned = propagate_distribution(&pool, &basis(), &LatticeSpec::new(400, 200, 1).with_prune_threshold(1e-20)).unwrap();
        assert!(pruned.pruned_mass < 1e-14);
        assert!((pruned.total_mass() + pruned.pruned_mass - 1.0).abs() < 1e-10);
        for (a, b) in exact.b_values(2.0).unwrap().iter().zip(pruned.b_values(2.0).unwrap()) {
            assert!((a - b).abs() <= 1e-10 * a.abs());
        }
    }

    #[test]
    fn dump_round_trips() {
        let dist = propagate_distribution(&pool(3, 80.0, 40.0), &basis(), &LatticeSpec::new(200, 200, 1)).unwrap();
        let mut buf = Vec::new();
        dist.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n_t,n_y,y_max,n\n200,200,"));
        let back = TerminalDistribution::read_dump(&buf[..]).unwrap();
        assert_eq!(back.b_values(2.0).unwrap(), dist.b_values(2.0).unwrap());
    }
}

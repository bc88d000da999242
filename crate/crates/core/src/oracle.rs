//! Brute-force cross-checks: exhaustive enumeration for tiny pools and
//! Monte Carlo for the rest.
//!
//! Nothing here reuses the integration, sampling or binomial routines of the
//! modules being checked: the oracle carries its own Gauss–Legendre rule,
//! its own generator (ChaCha20) and a bisection lifetime sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{EconomicBasis, ReplacementRate};
use crate::error::{invalid, Error, Result};
use crate::lattice::BVector;
use crate::mortality::{GompertzLaw, QuadratureSpec};
use crate::pool::{b_hat, conditional_count_mean, ExponentForm, PoolSpec};
use crate::solver::PayoutSchedule;

const ENUMERATION_LIMIT: f64 = 1e7;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on `P_n`.
fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let n = order;
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

struct Legendre {
    rule: Vec<(f64, f64)>,
}

impl Legendre {
    fn new(order: usize) -> Self {
        Self {
            rule: gauss_legendre(order),
        }
    }

    fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        if b <= a {
            return 0.0;
        }
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|p| {
                let mid = a + (p as f64 + 0.5) * h;
                self.rule.iter().map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
            })
            .sum()
    }
}

fn survival(law: &GompertzLaw, age: f64, t: f64) -> f64 {
    let b = law.dispersion();
    (-((age - law.modal_age()) / b).exp() * ((t / b).exp() - 1.0)).exp()
}

/// Product-space enumeration over companion death-time bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    Midpoint,
    ConditionalMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnumerationSpec {
    /// Equal-width bins on `[0, T)` plus one bin for survival past `T`.
    pub bins: usize,
    pub placement: Placement,
}

impl EnumerationSpec {
    pub fn new(bins: usize) -> Self {
        Self {
            bins,
            placement: Placement::ConditionalMean,
        }
    }

    fn validate(&self, pool: &PoolSpec) -> Result<()> {
        if !(2..=16).contains(&self.bins) {
            return Err(invalid("bins", format!("must lie in 2..=16, got {}", self.bins)));
        }
        if pool.size() > 5 {
            return Err(invalid("n", format!("enumeration supports n ≤ 5, got {}", pool.size())));
        }
        let size = (self.bins as f64).powi(pool.companions() as i32);
        if size > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge { size });
        }
        Ok(())
    }
}

/// `(probability, death time or None for alive at T)` per bin.
fn death_bins(pool: &PoolSpec, spec: &EnumerationSpec, gl: &Legendre) -> Vec<(f64, Option<f64>)> {
    let law = pool.member_law();
    let x0 = pool.life().entry_age();
    let span = pool.life().span();
    let intervals = spec.bins - 1;
    let width = span / intervals as f64;
    let mut out: Vec<(f64, Option<f64>)> = (0..intervals)
        .map(|i| {
            let (a, b) = (i as f64 * width, (i + 1) as f64 * width);
            let (sa, sb) = (survival(law, x0, a), survival(law, x0, b));
            let prob = sa - sb;
            let time = match spec.placement {
                Placement::Midpoint => 0.5 * (a + b),
                Placement::ConditionalMean if prob > 0.0 => {
                    (a * sa - b * sb + gl.integrate(|t| survival(law, x0, t), a, b, 4)) / prob
                }
                Placement::ConditionalMean => 0.5 * (a + b),
            };
            (prob, Some(time))
        })
        .collect();
    out.push((survival(law, x0, span), None));
    out
}

/// `∫₀^{min(τ,T)} e^{ρ(T-t)} dt`.
fn contribution(rho: f64, span: f64, tau: Option<f64>) -> f64 {
    let worked = tau.unwrap_or(span).min(span);
    if rho == 0.0 {
        worked
    } else {
        ((rho * span).exp() - (rho * (span - worked)).exp()) / rho
    }
}

/// Visits every companion outcome with `(probability, Y, survivors at T)`.
fn enumerate_outcomes(
    pool: &PoolSpec,
    rho: f64,
    spec: &EnumerationSpec,
    mut visit: impl FnMut(f64, f64, usize),
) -> Result<()> {
    spec.validate(pool)?;
    let gl = Legendre::new(20);
    let bins = death_bins(pool, spec, &gl);
    let span = pool.life().span();
    let parts: Vec<(f64, f64, bool)> = bins
        .iter()
        .map(|(p, tau)| (*p, contribution(rho, span, *tau), tau.is_none()))
        .collect();
    let own = contribution(rho, span, None);
    let m = pool.companions();
    let total = spec.bins.pow(m as u32);
    for code in 0..total {
        let mut rest = code;
        let (mut prob, mut y, mut alive) = (1.0, own, 1);
        for _ in 0..m {
            let (p, c, survives) = parts[rest % spec.bins];
            rest /= spec.bins;
            prob *= p;
            y += c;
            alive += survives as usize;
        }
        visit(prob, y, alive);
    }
    Ok(())
}

/// `b_ℓ` by enumeration, reference pinned alive.
pub fn enumerate_b(pool: &PoolSpec, basis: &EconomicBasis, gamma: f64, spec: &EnumerationSpec) -> Result<BVector> {
    let mut b = vec![0.0; pool.size()];
    enumerate_outcomes(pool, basis.rho(), spec, |p, y, ell| b[ell - 1] += p * y.powf(1.0 - gamma))?;
    Ok(BVector::exact(b))
}

/// `E[log Y]` by enumeration.
pub fn enumerate_log_y(pool: &PoolSpec, basis: &EconomicBasis, spec: &EnumerationSpec) -> Result<f64> {
    let mut total = 0.0;
    enumerate_outcomes(pool, basis.rho(), spec, |p, y, _| total += p * y.ln())?;
    Ok(total)
}

/// Exact subset sums for the count identities at one `(t, s, ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountIdentities {
    /// `E_s[N_t ; N_T = ℓ]`
    pub count_mean: f64,
    /// `E_s[1/N_{s+T} | N_T = ℓ]`
    pub beta_hat: f64,
    /// `E_s[Y ; N_T = ℓ]`
    pub b_hat: f64,
}

/// Three states per companion: dead before `t`, dead in `[t, T)`, alive at `T`.
fn count_mean_by_enumeration(pool: &PoolSpec, t: f64, ell: usize) -> f64 {
    let law = pool.member_law();
    let x0 = pool.life().entry_age();
    let span = pool.life().span();
    let pt = survival(law, x0, t);
    let big = survival(law, x0, span);
    let probs = [1.0 - pt, pt - big, big];
    let m = pool.companions();
    let mut total = 0.0;
    for code in 0..3usize.pow(m as u32) {
        let mut rest = code;
        let (mut prob, mut at_t, mut at_end) = (1.0, 1usize, 1usize);
        for _ in 0..m {
            let state = rest % 3;
            rest /= 3;
            prob *= probs[state];
            at_t += (state >= 1) as usize;
            at_end += (state == 2) as usize;
        }
        if at_end == ell {
            total += prob * at_t as f64;
        }
    }
    total
}

fn reciprocal_by_enumeration(ell: usize, p: f64) -> f64 {
    let trials = ell - 1;
    (0u64..1 << trials)
        .map(|mask| {
            let k = mask.count_ones() as i32;
            p.powi(k) * (1.0 - p).powi(trials as i32 - k) / (1.0 + k as f64)
        })
        .sum()
}

pub fn enumerate_count_identities(pool: &PoolSpec, rate: f64, t: f64, s: f64, ell: usize) -> Result<CountIdentities> {
    if pool.size() > 12 {
        return Err(invalid("n", "count enumeration supports n ≤ 12"));
    }
    if ell == 0 || ell > pool.size() {
        return Err(invalid("ell", format!("must lie in 1..={}", pool.size())));
    }
    let span = pool.life().span();
    let gl = Legendre::new(20);
    let b = gl.integrate(
        |u| (rate * (span - u)).exp() * count_mean_by_enumeration(pool, u, ell),
        0.0,
        span,
        8,
    );
    let p = survival(pool.member_law(), pool.life().retirement_age(), s);
    Ok(CountIdentities {
        count_mean: count_mean_by_enumeration(pool, t, ell),
        beta_hat: reciprocal_by_enumeration(ell, p),
        b_hat: b,
    })
}

/// Which exponent of `(1 - ₜp)` reproduces the enumerated counts, with evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentVerdict {
    pub form: ExponentForm,
    /// Largest relative error of each candidate over all checked cases.
    pub primary_max_error: f64,
    pub alternative_max_error: f64,
    pub cases: usize,
}

impl ExponentVerdict {
    pub fn primary_form_holds(&self) -> bool {
        self.form == ExponentForm::NMinusEllMinusOne
    }
}

/// Compares both closed forms for `E_s[N_t ; N_T = ℓ]` and `b̂_ℓ` against enumeration.
pub fn decide_exponent_form(basis: &EconomicBasis, quad: &QuadratureSpec) -> Result<ExponentVerdict> {
    let life = crate::baseline::LifeCycle::default();
    let mut primary: f64 = 0.0;
    let mut alternative: f64 = 0.0;
    let mut cases = 0;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    for n in 1..=6 {
        for m in [70.0, 80.0, 90.0] {
            let pool = PoolSpec::new(n, GompertzLaw::new(m, 10.0)?, life)?;
            for ell in 1..=n {
                let exact_b = enumerate_count_identities(&pool, basis.rate(), 0.0, 0.0, ell)?.b_hat;
                primary = primary.max(rel(b_hat(&pool, ell, basis.rate(), ExponentForm::NMinusEllMinusOne, quad)?, exact_b));
                alternative = alternative.max(rel(b_hat(&pool, ell, basis.rate(), ExponentForm::NMinusEll, quad)?, exact_b));
                cases += 1;
                for t in [0.0, 10.0, 25.0, 40.0] {
                    let exact = count_mean_by_enumeration(&pool, t, ell);
                    primary = primary.max(rel(conditional_count_mean(&pool, t, ell, ExponentForm::NMinusEllMinusOne)?, exact));
                    alternative = alternative.max(rel(conditional_count_mean(&pool, t, ell, ExponentForm::NMinusEll)?, exact));
                    cases += 1;
                }
            }
        }
    }
    let form = if primary <= alternative {
        ExponentForm::NMinusEllMinusOne
    } else {
        ExponentForm::NMinusEll
    };
    Ok(ExponentVerdict {
        form,
        primary_max_error: primary,
        alternative_max_error: alternative,
        cases,
    })
}

/// Lifetime (years after `age`) solving `S(t) = v` by bisection.
fn bisect_lifetime(law: &GompertzLaw, age: f64, v: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 200.0);
    if survival(law, age, hi) >= v {
        return hi;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if survival(law, age, mid) > v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Quantities the Monte Carlo checker can estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    /// `E_s[(1/N_{s+T})^{1-γ} | N_T = ℓ]`
    BetaCount { ell: usize, s: f64, gamma: f64 },
    /// `b_ℓ = E[Y^{1-γ} ; N_T = ℓ]` with the reference alive at `T`
    AccumulationMoment { ell: usize, gamma: f64 },
    /// National-plan benefits over employee contributions, undiscounted
    CppGenerosity { alpha: f64, eta: f64 },
    /// Lifetime utility at entry under a payout schedule
    Utility { alpha: f64, schedule: PayoutSchedule },
    /// `∫ e^{-rs} d_s ds`
    Budget { schedule: PayoutSchedule },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl McEstimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean,
            std_error: (var / n).sqrt(),
            n_paths: samples.len(),
        }
    }

    pub fn covers(&self, value: f64, sigmas: f64) -> bool {
        (self.mean - value).abs() <= sigmas * self.std_error
    }
}

fn linear_payout(schedule: &PayoutSchedule, s: f64) -> f64 {
    let step = schedule.grid().step();
    let d = schedule.values();
    let x = s / step;
    let i = x.floor() as usize;
    if i + 1 >= d.len() {
        return if i + 1 == d.len() { d[i] } else { 0.0 };
    }
    d[i] + (x - i as f64) * (d[i + 1] - d[i])
}

fn utility_sample(
    rng: &mut ChaCha20Rng,
    pool: &PoolSpec,
    basis: &EconomicBasis,
    alpha: f64,
    schedule: &PayoutSchedule,
    gl: &Legendre,
) -> f64 {
    let law = pool.member_law();
    let x0 = pool.life().entry_age();
    let span = pool.life().span();
    let horizon = schedule.grid().horizon();
    let lifetimes: Vec<f64> = (0..pool.size())
        .map(|_| bisect_lifetime(law, x0, 1.0 - rng.random::<f64>()).min(span + horizon))
        .collect();
    let rho = basis.rho();
    let fund = 2.0 * alpha * lifetimes.iter().map(|&t| contribution(rho, span, Some(t))).sum::<f64>();
    let own = lifetimes[0] - span;
    if own <= 0.0 {
        return 0.0;
    }
    let gamma = basis.gamma();
    let u = |c: f64| if gamma == 1.0 { c.ln() } else { c.powf(1.0 - gamma) / (1.0 - gamma) };
    let mut cuts: Vec<f64> = lifetimes[1..].iter().map(|t| t - span).filter(|e| *e > 0.0 && *e < own).collect();
    let step = schedule.grid().step();
    cuts.extend((1..).map(|k| k as f64 * step).take_while(|x| *x < own));
    cuts.push(0.0);
    cuts.push(own);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let alive = 1 + lifetimes[1..].iter().filter(|t| **t - span > mid).count();
            let share = fund / alive as f64;
            gl.integrate(|s| (-rho * (span + s)).exp() * u(share * linear_payout(schedule, s)), w[0], w[1], 1)
        })
        .sum()
}

/// Estimates `expression` from `n_paths` independent draws.
pub fn mc_check(
    expression: &Expression,
    pool: &PoolSpec,
    basis: &EconomicBasis,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_paths < 2 {
        return Err(invalid("paths", "need at least two draws"));
    }
    let law = *pool.member_law();
    let x0 = pool.life().entry_age();
    let span = pool.life().span();
    let gl = Legendre::new(6);
    let draw = |i: usize| -> f64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        match expression {
            Expression::BetaCount { ell, s, gamma } => {
                let p = survival(&law, x0 + span, *s);
                let alive = 1 + (1..*ell).filter(|_| rng.random::<f64>() < p).count();
                (alive as f64).powf(gamma - 1.0)
            }
            Expression::AccumulationMoment { ell, gamma } => {
                let mut y = contribution(basis.rho(), span, None);
                let mut alive = 1;
                for _ in 0..pool.companions() {
                    let tau = bisect_lifetime(&law, x0, 1.0 - rng.random::<f64>());
                    if tau >= span {
                        alive += 1;
                    }
                    y += contribution(basis.rho(), span, Some(tau));
                }
                if alive == *ell {
                    y.powf(1.0 - gamma)
                } else {
                    0.0
                }
            }
            Expression::CppGenerosity { .. } => unreachable!("ratio estimator handled separately"),
            Expression::Utility { alpha, schedule } => utility_sample(&mut rng, pool, basis, *alpha, schedule, &gl),
            Expression::Budget { schedule } => {
                let h = schedule.grid().horizon();
                let s = h * rng.random::<f64>();
                h * (-schedule.rate() * s).exp() * linear_payout(schedule, s)
            }
        }
    };
    if let Expression::CppGenerosity { alpha, eta } = expression {
        let pairs: Vec<(f64, f64)> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let tau = bisect_lifetime(&law, x0, 1.0 - rng.random::<f64>());
                (eta * (tau - span).max(0.0), alpha * tau.min(span))
            })
            .collect();
        let n = n_paths as f64;
        let mb = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let mc = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let ratio = mb / mc;
        let var = pairs.iter().map(|(b, c)| (b - ratio * c).powi(2)).sum::<f64>() / (n - 1.0);
        return Ok(McEstimate {
            mean: ratio,
            std_error: (var / n).sqrt() / mc,
            n_paths,
        });
    }
    let samples: Vec<f64> = (0..n_paths).into_par_iter().map(draw).collect();
    Ok(McEstimate::from_samples(&samples))
}

/// One line of the validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub reference: f64,
    pub candidate: f64,
    /// Absolute allowance on `|candidate - reference|`.
    pub tolerance: f64,
    pub passed: bool,
}

impl ValidationCheck {
    pub fn new(name: impl Into<String>, reference: f64, candidate: f64, tolerance: f64) -> Self {
        let passed = (candidate - reference).abs() <= tolerance;
        Self {
            name: name.into(),
            reference,
            candidate,
            tolerance,
            passed,
        }
    }

    pub fn relative(name: impl Into<String>, reference: f64, candidate: f64, rel: f64) -> Self {
        Self::new(name, reference, candidate, rel * reference.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
    pub verdict: ExponentVerdict,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {}: reference {:.10e} candidate {:.10e} tolerance {:.3e}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.reference,
                c.candidate,
                c.tolerance
            ));
        }
        let v = &self.verdict;
        out.push_str(&format!(
            "exponent verdict: {:?} (primary max rel error {:.3e}, alternative {:.3e}, {} cases)\n",
            v.form, v.primary_max_error, v.alternative_max_error, v.cases
        ));
        out.push_str(if self.all_passed() { "overall: PASS\n" } else { "overall: FAIL\n" });
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,reference,candidate,tolerance,passed\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{}\n",
                c.name, c.reference, c.candidate, c.tolerance, c.passed
            ));
        }
        out
    }
}

/// Everything the oracle can verify cheaply, with the exponent verdict.
pub fn validation_suite(
    basis: &EconomicBasis,
    eta: ReplacementRate,
    quad: &QuadratureSpec,
    seed: u64,
) -> Result<ValidationReport> {
    use crate::baseline::{cpp_generosity, LifeCycle};
    use crate::lattice::{compute_b_vector, LatticeSpec};
    use crate::pool::beta_count_factor;

    let verdict = decide_exponent_form(basis, quad)?;
    let mut checks = vec![
        ValidationCheck::new("exponent primary form max rel error", 0.0, verdict.primary_max_error, 1e-9),
        ValidationCheck::new(
            "exponent alternative form rejected",
            1.0,
            (verdict.alternative_max_error > 1e-6) as u8 as f64,
            0.0,
        ),
    ];

    let gamma = basis.gamma();
    let life = LifeCycle::default();
    let law = |m: f64| GompertzLaw::new(m, 10.0);

    // n = 1 enumeration equals the closed form
    let lone = PoolSpec::new(1, law(80.0)?, life)?;
    let y0 = basis.accumulation_factor(life.span());
    let b1 = enumerate_b(&lone, basis, gamma, &EnumerationSpec::new(16))?;
    checks.push(ValidationCheck::relative("enumerate b n=1", y0.powf(1.0 - gamma), b1.values()[0], 1e-12));

    // bin refinement 8 → 16 and agreement with the lattice at n = 3, T = 5
    let short = PoolSpec::new(3, law(70.0)?, LifeCycle::new(25.0, 5.0)?)?;
    let coarse = enumerate_b(&short, basis, gamma, &EnumerationSpec::new(8))?;
    let fine = enumerate_b(&short, basis, gamma, &EnumerationSpec::new(16))?;
    let lattice = compute_b_vector(&short, basis, gamma, &LatticeSpec::new(400, 200, 2))?;
    for l in 0..3 {
        checks.push(ValidationCheck::relative(format!("bins 8 vs 16 b_{}", l + 1), fine.values()[l], coarse.values()[l], 2e-3));
        checks.push(ValidationCheck::relative(format!("lattice vs enumeration b_{} n=3 T=5", l + 1), fine.values()[l], lattice.values()[l], 2e-3));
    }

    // count identities at n = 2 by hand: P[companion dead at T] · 1 at ℓ = 1
    let pair = PoolSpec::new(2, law(80.0)?, life)?;
    let big = survival(pair.member_law(), 25.0, 40.0);
    let pt = survival(pair.member_law(), 25.0, 10.0);
    let hand = (1.0 - pt) + 2.0 * (pt - big);
    let ids = enumerate_count_identities(&pair, basis.rate(), 10.0, 0.0, 1)?;
    checks.push(ValidationCheck::relative("hand count n=2 ell=1", hand, ids.count_mean, 1e-14));
    checks.push(ValidationCheck::relative(
        "count mean at t=T is ell times mass",
        2.0 * big,
        enumerate_count_identities(&pair, basis.rate(), 40.0, 0.0, 2)?.count_mean,
        1e-14,
    ));

    // β_{ℓ,s} at n = 30 by Monte Carlo
    let pool30 = PoolSpec::new(30, law(80.0)?, life)?;
    for (ell, s) in [(30, 10.0), (20, 20.0), (5, 30.0)] {
        let exact = beta_count_factor(ell, s, gamma, &pool30)?;
        let est = mc_check(&Expression::BetaCount { ell, s, gamma }, &pool30, basis, 40_000, seed)?;
        checks.push(ValidationCheck::new(format!("mc beta_count ell={ell} s={s}"), exact, est.mean, 3.0 * est.std_error.max(1e-15)));
    }

    // b_ℓ by Monte Carlo at n = 5
    let pool5 = PoolSpec::new(5, law(70.0)?, life)?;
    let lattice5 = compute_b_vector(&pool5, basis, gamma, &LatticeSpec::new(800, 400, 2))?;
    for ell in [3, 5] {
        let est = mc_check(&Expression::AccumulationMoment { ell, gamma }, &pool5, basis, 40_000, seed)?;
        checks.push(ValidationCheck::new(format!("mc b_{ell} n=5"), lattice5.values()[ell - 1], est.mean, 3.0 * est.std_error.max(1e-15)));
    }

    // national-plan generosity for the unimpaired member
    let base = law(90.0)?;
    let g = cpp_generosity(basis.alpha(), eta, &base, &life, quad)?;
    let est = mc_check(&Expression::CppGenerosity { alpha: basis.alpha(), eta: eta.value() }, &PoolSpec::new(1, base, life)?, basis, 200_000, seed)?;
    checks.push(ValidationCheck::new("mc cpp generosity m=90", g, est.mean, 3.0 * est.std_error));

    Ok(ValidationReport { checks, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::LifeCycle;
    use approx::assert_abs_diff_eq;

    #[test]
    fn legendre_is_exact_for_polynomials() {
        let gl = Legendre::new(10);
        assert_abs_diff_eq!(gl.integrate(|x| x.powi(19), 0.0, 1.0, 1), 0.05, epsilon = 1e-14);
        assert_abs_diff_eq!(gl.integrate(f64::exp, 0.0, 2.0, 3), 2f64.exp() - 1.0, epsilon = 1e-13);
        let w: f64 = gauss_legendre(20).iter().map(|(_, w)| w).sum();
        assert_abs_diff_eq!(w, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn bin_probabilities_sum_to_one() {
        let pool = PoolSpec::new(3, GompertzLaw::new(70.0, 10.0).unwrap(), LifeCycle::default()).unwrap();
        for placement in [Placement::Midpoint, Placement::ConditionalMean] {
            let spec = EnumerationSpec { bins: 12, placement };
            let bins = death_bins(&pool, &spec, &Legendre::new(20));
            assert_abs_diff_eq!(bins.iter().map(|b| b.0).sum::<f64>(), 1.0, epsilon = 1e-14);
            for (i, (_, t)) in bins.iter().take(11).enumerate() {
                let t = t.unwrap();
                let w = 40.0 / 11.0;
                assert!(t > i as f64 * w && t < (i + 1) as f64 * w);
            }
        }
    }

    #[test]
    fn enumeration_limits() {
        let life = LifeCycle::default();
        let law = GompertzLaw::new(80.0, 10.0).unwrap();
        assert!(EnumerationSpec::new(17).validate(&PoolSpec::new(2, law, life).unwrap()).is_err());
        assert!(EnumerationSpec::new(8).validate(&PoolSpec::new(6, law, life).unwrap()).is_err());
        assert!(EnumerationSpec::new(16).validate(&PoolSpec::new(5, law, life).unwrap()).is_ok());
    }

    #[test]
    fn bisection_agrees_with_survival() {
        let law = GompertzLaw::new(80.0, 10.0).unwrap();
        let t = bisect_lifetime(&law, 25.0, 0.3);
        assert_abs_diff_eq!(survival(&law, 25.0, t), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn verdict_favours_primary_form() {
        let basis = EconomicBasis::new(0.01, 0.06, 2.0).unwrap();
        let verdict = decide_exponent_form(&basis, &QuadratureSpec::default()).unwrap();
        assert!(verdict.primary_form_holds());
        assert!(verdict.primary_max_error < 1e-9, "{verdict:?}");
        assert!(verdict.alternative_max_error > 1e-3);
    }

    #[test]
    fn budget_by_monte_carlo() {
        let life = LifeCycle::default();
        let pool = PoolSpec::new(1, GompertzLaw::new(80.0, 10.0).unwrap(), life).unwrap();
        let basis = EconomicBasis::new(0.01, 0.06, 2.0).unwrap();
        let grid = crate::pool::SGrid::standard(&life);
        let d = crate::solver::survival_payout(&pool, &basis, grid).unwrap();
        let est = mc_check(&Expression::Budget { schedule: d }, &pool, &basis, 20_000, 11).unwrap();
        assert!(est.covers(1.0, 3.0), "{est:?}");
    }
}

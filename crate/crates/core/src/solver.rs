//! Optimal payout, expected utility and utility-equivalent rates of a pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{crra, cpp_expected_utility, cpp_expected_utility_log, EconomicBasis, LifeCycle, ReplacementRate};
use crate::error::{invalid, Error, Result};
use crate::lattice::{BVector, Provenance};
use crate::mortality::{annuity_factor, discounted_working_integral, GompertzLaw, QuadratureSpec};
use crate::pool::{b_hat, infinite_pool_rate, BetaCurve, ExponentForm, PoolSpec, SGrid};

/// Payout density `d_s` (fraction of the fund per year) on a retirement grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoutSchedule {
    grid: SGrid,
    rate: f64,
    d: Vec<f64>,
}

impl PayoutSchedule {
    pub fn new(grid: SGrid, rate: f64, d: Vec<f64>) -> Result<Self> {
        if d.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                actual: d.len(),
            });
        }
        if let Some(v) = d.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid("d", format!("payout density must be finite and non-negative, got {v}")));
        }
        Ok(Self { grid, rate, d })
    }

    /// Rescales `shape` so the budget constraint holds on `grid`.
    pub fn normalized(grid: SGrid, rate: f64, shape: Vec<f64>) -> Result<Self> {
        let raw = Self::new(grid, rate, shape)?;
        let budget = raw.budget();
        if !(budget > f64::MIN_POSITIVE && budget.is_finite()) {
            return Err(Error::Degenerate(format!("payout normalisation integral is {budget:e}")));
        }
        let d = raw.d.iter().map(|v| v / budget).collect();
        Self::new(grid, rate, d)
    }

    pub fn grid(&self) -> &SGrid {
        &self.grid
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }

    /// `∫ e^{-rs} d_s ds`; one for a feasible schedule.
    pub fn budget(&self) -> f64 {
        let discounted: Vec<f64> = self
            .d
            .iter()
            .enumerate()
            .map(|(i, v)| (-self.rate * self.grid.point(i)).exp() * v)
            .collect();
        self.grid.integrate(&discounted)
    }

    /// Linear interpolation between grid nodes; zero past the horizon.
    pub fn at(&self, s: f64) -> f64 {
        if !(s >= 0.0) {
            return self.d[0];
        }
        let x = s / self.grid.step();
        let i = x.floor() as usize;
        if i + 1 >= self.d.len() {
            return if i + 1 == self.d.len() { self.d[i] } else { 0.0 };
        }
        let w = x - i as f64;
        self.d[i] * (1.0 - w) + self.d[i + 1] * w
    }
}

fn discounted_power_integral(beta: &BetaCurve, rho: f64, power: f64) -> Result<f64> {
    let grid = beta.grid();
    let values: Vec<f64> = beta
        .values()
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if b < 0.0 {
                Err(invalid("beta", format!("negative value {b:e} at s = {}", grid.point(i))))
            } else if b == 0.0 {
                Ok(0.0)
            } else {
                Ok((power * b.ln() - rho * grid.point(i)).exp())
            }
        })
        .collect::<Result<_>>()?;
    Ok(grid.integrate(&values))
}

fn check_power(basis: &EconomicBasis) -> Result<()> {
    if basis.is_log() {
        return Err(Error::LogUtilityRequired);
    }
    if basis.rate() != basis.rho() {
        return Err(invalid("rho", "the optimal payout requires rho = r"));
    }
    Ok(())
}

/// `d_s = λ β_s^{1/γ}`, normalised by the budget constraint.
pub fn optimal_payout(beta: &BetaCurve, basis: &EconomicBasis) -> Result<PayoutSchedule> {
    check_power(basis)?;
    let power = 1.0 / basis.gamma();
    let shape: Vec<f64> = beta
        .values()
        .iter()
        .map(|&b| {
            if b < 0.0 {
                Err(invalid("beta", format!("negative value {b:e}")))
            } else if b == 0.0 {
                Ok(0.0)
            } else {
                Ok((power * b.ln()).exp())
            }
        })
        .collect::<Result<_>>()?;
    PayoutSchedule::normalized(*beta.grid(), basis.rate(), shape)
}

/// `d_s = ₛp_{x1} / ā`, the logarithmic-utility optimum (also the `n = ∞` optimum for every γ).
pub fn survival_payout(pool: &PoolSpec, basis: &EconomicBasis, grid: SGrid) -> Result<PayoutSchedule> {
    let shape = grid.points().map(|s| pool.survival_from_retirement(s)).collect();
    PayoutSchedule::normalized(grid, basis.rate(), shape)
}

fn entry_factor(basis: &EconomicBasis, pool: &PoolSpec) -> f64 {
    let span = pool.life().span();
    (-basis.rho() * span).exp() * pool.survival_from_entry(span)
}

/// `U` under the optimal payout, combined in log-magnitude form.
pub fn elris_expected_utility(alpha: f64, beta: &BetaCurve, basis: &EconomicBasis, pool: &PoolSpec) -> Result<f64> {
    check_power(basis)?;
    let gamma = basis.gamma();
    let integral = discounted_power_integral(beta, basis.rho(), 1.0 / gamma)?;
    if !(integral > 0.0) {
        return Err(Error::Degenerate("payout integral vanishes".into()));
    }
    let ln_mag = entry_factor(basis, pool).ln() + (1.0 - gamma) * (2.0 * alpha).ln() + gamma * integral.ln()
        - (gamma - 1.0).abs().ln();
    Ok((1.0 - gamma).signum() * ln_mag.exp())
}

/// `U` for an arbitrary schedule: `e^{-ρT} ₜp (2α)^{1-γ}/(1-γ) ∫ d_s^{1-γ} e^{-ρs} β_s ds`.
pub fn schedule_utility(
    alpha: f64,
    schedule: &PayoutSchedule,
    beta: &BetaCurve,
    basis: &EconomicBasis,
    pool: &PoolSpec,
) -> Result<f64> {
    check_power(basis)?;
    if schedule.grid() != beta.grid() {
        return Err(invalid("schedule", "payout and beta grids differ"));
    }
    let gamma = basis.gamma();
    let grid = beta.grid();
    let values: Vec<f64> = schedule
        .values()
        .iter()
        .zip(beta.values())
        .enumerate()
        .map(|(i, (&d, &b))| {
            if b == 0.0 {
                0.0
            } else if d == 0.0 {
                if gamma > 1.0 { f64::INFINITY } else { 0.0 }
            } else {
                ((1.0 - gamma) * d.ln() + b.ln() - basis.rho() * grid.point(i)).exp()
            }
        })
        .collect();
    let integral = grid.integrate(&values);
    Ok(entry_factor(basis, pool) * (2.0 * alpha).powf(1.0 - gamma) / (1.0 - gamma) * integral)
}

/// `ā` evaluated on the same grid as the beta curves.
fn grid_annuity(pool: &PoolSpec, basis: &EconomicBasis, grid: &SGrid) -> f64 {
    let values: Vec<f64> = grid
        .points()
        .map(|s| (-basis.rho() * s).exp() * pool.survival_from_retirement(s))
        .collect();
    grid.integrate(&values)
}

fn survival_log_term(pool: &PoolSpec, basis: &EconomicBasis, grid: &SGrid) -> f64 {
    let values: Vec<f64> = grid
        .points()
        .map(|s| {
            let p = pool.survival_from_retirement(s);
            if p > 0.0 {
                (-basis.rho() * s).exp() * p * p.ln()
            } else {
                0.0
            }
        })
        .collect();
    grid.integrate(&values)
}

fn discounted_integral(beta: &BetaCurve, rho: f64) -> f64 {
    let grid = beta.grid();
    let values: Vec<f64> = beta
        .values()
        .iter()
        .enumerate()
        .map(|(i, b)| (-rho * grid.point(i)).exp() * b)
        .collect();
    grid.integrate(&values)
}

/// Logarithmic-utility `U` under `d_s = ₛp_{x1}/ā`; `beta` from [`BetaCurve::log_case`].
pub fn elris_expected_utility_log(alpha: f64, beta: &BetaCurve, basis: &EconomicBasis, pool: &PoolSpec) -> Result<f64> {
    if !basis.is_log() {
        return Err(invalid("gamma", "logarithmic utility requires gamma = 1"));
    }
    let grid = beta.grid();
    let a = grid_annuity(pool, basis, grid);
    let bracket = a * (2.0 * alpha / a).ln() + discounted_integral(beta, basis.rho()) + survival_log_term(pool, basis, grid);
    Ok(entry_factor(basis, pool) * bracket)
}

/// Utility-equivalent rates for one `(γ, n, m̄)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceResult {
    pub alpha_bar: f64,
    pub eta_bar: f64,
    pub u_cpp: f64,
    pub u_elris: f64,
    pub gamma: f64,
    pub n: Option<usize>,
    pub mbar: f64,
    pub rate: f64,
    pub alpha: f64,
    pub eta: f64,
    pub resolution: Option<Provenance>,
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ln_alpha_bar: f64,
    basis: &EconomicBasis,
    pool: &PoolSpec,
    eta: ReplacementRate,
    n: Option<usize>,
    resolution: Option<Provenance>,
    u_cpp: f64,
    u_elris: impl FnOnce(f64) -> Result<f64>,
) -> Result<EquivalenceResult> {
    let alpha_bar = ln_alpha_bar.exp();
    if !(alpha_bar.is_finite() && alpha_bar > 0.0) {
        return Err(Error::Degenerate(format!("equivalent rate is {alpha_bar}")));
    }
    Ok(EquivalenceResult {
        alpha_bar,
        eta_bar: eta.value() * basis.alpha() / alpha_bar,
        u_cpp,
        u_elris: u_elris(alpha_bar)?,
        gamma: basis.gamma(),
        n,
        mbar: pool.member_law().modal_age(),
        rate: basis.rate(),
        alpha: basis.alpha(),
        eta: eta.value(),
        resolution,
    })
}

/// `ln ᾱ = ln(η/2) + (ln ā - γ ln ∫e^{-ρs}β_s^{1/γ}ds) / (1-γ)`, with `ā` on the member law.
pub fn equivalent_rates(
    pool: &PoolSpec,
    basis: &EconomicBasis,
    eta: ReplacementRate,
    b_vec: &BVector,
    grid: SGrid,
    quad: &QuadratureSpec,
) -> Result<EquivalenceResult> {
    check_power(basis)?;
    let beta = BetaCurve::from_b_vector(b_vec, pool, basis.gamma(), grid)?;
    equivalent_rates_from_beta(pool, basis, eta, &beta, b_vec.provenance(), quad)
}

pub fn equivalent_rates_from_beta(
    pool: &PoolSpec,
    basis: &EconomicBasis,
    eta: ReplacementRate,
    beta: &BetaCurve,
    resolution: Option<Provenance>,
    quad: &QuadratureSpec,
) -> Result<EquivalenceResult> {
    check_power(basis)?;
    let gamma = basis.gamma();
    let life = pool.life();
    let a = annuity_factor(pool.member_law(), life.retirement_age(), basis.rho(), quad)?;
    let integral = discounted_power_integral(beta, basis.rho(), 1.0 / gamma)?;
    if !(integral > 0.0) {
        return Err(Error::Degenerate("payout integral vanishes".into()));
    }
    let ln_alpha_bar = (0.5 * eta.value()).ln() + (a.ln() - gamma * integral.ln()) / (1.0 - gamma);
    let u_cpp = cpp_expected_utility(basis, life, eta, pool.member_law(), quad)?;
    finish(ln_alpha_bar, basis, pool, eta, Some(pool.size()), resolution, u_cpp, |ab| {
        elris_expected_utility(ab, beta, basis, pool)
    })
}

/// Two equivalent forms of the logarithmic equivalence, `ln(2ᾱ/η)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEquivalenceForms {
    /// `ln ā - [∫e^{-ρs}β_s ds + ∫e^{-ρs}p ln p ds]/ā`
    pub via_beta: f64,
    /// `ln ā - E[ln Y] + [∫e^{-ρs}p E_s[ln N] ds - ∫e^{-ρs}p ln p ds]/ā`
    pub via_counts: f64,
}

pub fn log_equivalence_forms(
    pool: &PoolSpec,
    basis: &EconomicBasis,
    log_y_moment: f64,
    grid: SGrid,
) -> Result<LogEquivalenceForms> {
    let beta = BetaCurve::log_case(log_y_moment, pool, grid)?;
    let a = grid_annuity(pool, basis, &grid);
    let survival_term = survival_log_term(pool, basis, &grid);
    let via_beta = a.ln() - (discounted_integral(&beta, basis.rho()) + survival_term) / a;
    let counts: Vec<f64> = grid
        .points()
        .map(|s| (-basis.rho() * s).exp() * pool.survival_from_retirement(s) * crate::pool::log_count_moment(s, pool))
        .collect();
    let via_counts = a.ln() - log_y_moment + (grid.integrate(&counts) - survival_term) / a;
    Ok(LogEquivalenceForms { via_beta, via_counts })
}

/// Logarithmic-utility counterpart of [`equivalent_rates`].
pub fn equivalent_rates_log(
    pool: &PoolSpec,
    basis: &EconomicBasis,
    eta: ReplacementRate,
    log_y_moment: f64,
    grid: SGrid,
    quad: &QuadratureSpec,
) -> Result<EquivalenceResult> {
    if !basis.is_log() {
        return Err(invalid("gamma", "logarithmic branch requires gamma = 1"));
    }
    let forms = log_equivalence_forms(pool, basis, log_y_moment, grid)?;
    let ln_alpha_bar = (0.5 * eta.value()).ln() + forms.via_beta;
    let beta = BetaCurve::log_case(log_y_moment, pool, grid)?;
    let u_cpp = cpp_expected_utility_log(basis, pool.life(), eta, pool.member_law(), quad)?;
    finish(ln_alpha_bar, basis, pool, eta, Some(pool.size()), None, u_cpp, |ab| {
        elris_expected_utility_log(ab, &beta, basis, pool)
    })
}

/// The `n = ∞` cell: `d_s ∝ ₛp_{x1}` for every γ and a closed-form rate.
pub fn infinite_pool_result(
    basis: &EconomicBasis,
    life: &LifeCycle,
    eta: ReplacementRate,
    member_law: &GompertzLaw,
    quad: &QuadratureSpec,
) -> Result<EquivalenceResult> {
    let alpha_bar = infinite_pool_rate(basis, life, eta, member_law, quad)?;
    let (x0, span) = (life.entry_age(), life.span());
    let a = annuity_factor(member_law, life.retirement_age(), basis.rho(), quad)?;
    let big_p = member_law.survival(x0, span);
    let factor = (-basis.rho() * span).exp() * big_p;
    // per-member fund y = e^{ρT} ∫ e^{-ρt} ₜp dt
    let y = (basis.rho() * span).exp() * discounted_working_integral(member_law, x0, span, basis.rho(), quad);
    let income = 2.0 * alpha_bar * y / (big_p * a);
    let u_cpp = if basis.is_log() {
        cpp_expected_utility_log(basis, life, eta, member_law, quad)?
    } else {
        cpp_expected_utility(basis, life, eta, member_law, quad)?
    };
    Ok(EquivalenceResult {
        alpha_bar,
        eta_bar: eta.value() * basis.alpha() / alpha_bar,
        u_cpp,
        u_elris: factor * a * crra(income, basis.gamma()),
        gamma: basis.gamma(),
        n: None,
        mbar: member_law.modal_age(),
        rate: basis.rate(),
        alpha: basis.alpha(),
        eta: eta.value(),
        resolution: None,
    })
}

/// `E[1/(1+K)]` for `K ~ Binomial(ell - 1, p)`, in closed form.
fn reciprocal_count_mean(ell: usize, p: f64) -> f64 {
    if p <= 0.0 {
        return 1.0;
    }
    let l = ell as f64;
    -(l * (-p).ln_1p()).exp_m1() / (l * p)
}

/// `β̂_s = ₛp_{x1} Σ_ℓ E_s[1/N_{s+T} | N_T = ℓ] b̂_ℓ`.
pub fn beta_hat_curve(
    pool: &PoolSpec,
    basis: &EconomicBasis,
    form: ExponentForm,
    grid: SGrid,
    quad: &QuadratureSpec,
) -> Result<Vec<f64>> {
    let b: Vec<f64> = (1..=pool.size())
        .map(|l| b_hat(pool, l, basis.rate(), form, quad))
        .collect::<Result<_>>()?;
    Ok((0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = pool.survival_from_retirement(grid.point(i));
            let sum: f64 = b
                .iter()
                .enumerate()
                .map(|(idx, v)| reciprocal_count_mean(idx + 1, p) * v)
                .sum();
            p * sum
        })
        .collect())
}

/// Expected undiscounted benefits over expected undiscounted employee
/// contributions: `2·ₜp_{x0} ∫ d_s β̂_s ds / ∫₀ᵀ ₜp_{x0} dt`.
pub fn elris_generosity(
    pool: &PoolSpec,
    basis: &EconomicBasis,
    life: &LifeCycle,
    schedule: &PayoutSchedule,
    form: ExponentForm,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if pool.life() != life {
        return Err(invalid("life", "pool and life cycle disagree"));
    }
    let grid = *schedule.grid();
    let beta_hat = beta_hat_curve(pool, basis, form, grid, quad)?;
    let product: Vec<f64> = schedule.values().iter().zip(&beta_hat).map(|(d, b)| d * b).collect();
    let benefits = 2.0 * pool.survival_from_entry(life.span()) * grid.integrate(&product);
    let working = quad.integrate(|t| pool.survival_from_entry(t), 0.0, life.span());
    Ok(benefits / working)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::calibrate_eta;
    use crate::pool::beta_hat;
    use approx::assert_abs_diff_eq;

    fn basis(gamma: f64) -> EconomicBasis {
        EconomicBasis::new(0.01, 0.06, gamma).unwrap()
    }

    fn pool(n: usize, m: f64) -> PoolSpec {
        PoolSpec::new(n, GompertzLaw::new(m, 10.0).unwrap(), LifeCycle::default()).unwrap()
    }

    fn eta() -> ReplacementRate {
        let quad = QuadratureSpec::default();
        calibrate_eta(&basis(2.0), &LifeCycle::default(), &GompertzLaw::new(90.0, 10.0).unwrap(), &quad).unwrap()
    }

    fn y0() -> f64 {
        0.4f64.exp_m1() / 0.01
    }

    fn lone_b(gamma: f64) -> BVector {
        BVector::exact(vec![y0().powf(1.0 - gamma)])
    }

    #[test]
    fn lone_member_cell() {
        let pool = pool(1, 70.0);
        let grid = SGrid::standard(pool.life());
        let r = equivalent_rates(&pool, &basis(2.0), eta(), &lone_b(2.0), grid, &QuadratureSpec::default()).unwrap();
        assert_abs_diff_eq!(r.alpha_bar, 0.0542, epsilon = 5e-4);
        assert_abs_diff_eq!(r.eta_bar, 0.363, epsilon = 5e-3);
        assert_abs_diff_eq!(r.eta_bar * r.alpha_bar, r.eta * r.alpha, epsilon = 1e-12);
        assert!((r.u_elris - r.u_cpp).abs() <= 1e-9 * r.u_cpp.abs());
    }

    #[test]
    fn lone_member_payout_is_root_survival() {
        let pool = pool(1, 80.0);
        let grid = SGrid::standard(pool.life());
        let beta = BetaCurve::from_b_vector(&lone_b(2.0), &pool, 2.0, grid).unwrap();
        let d = optimal_payout(&beta, &basis(2.0)).unwrap();
        assert_abs_diff_eq!(d.budget(), 1.0, epsilon = 1e-12);
        let ratio0 = d.values()[0];
        for (i, s) in grid.points().enumerate().step_by(40) {
            let expected = ratio0 * pool.survival_from_retirement(s).sqrt();
            assert!((d.values()[i] - expected).abs() <= 1e-12 * ratio0);
        }
    }

    #[test]
    fn lone_member_utility_by_direct_quadrature() {
        let pool = pool(1, 75.0);
        let b = basis(3.0);
        let grid = SGrid::standard(pool.life());
        let beta = BetaCurve::from_b_vector(&lone_b(3.0), &pool, 3.0, grid).unwrap();
        let d = optimal_payout(&beta, &b).unwrap();
        let u = elris_expected_utility(0.05, &beta, &b, &pool).unwrap();
        // U = ∫ e^{-ρ(s+T)} ₛ₊ₜp u(d_s X) ds for a deterministic fund X = 2α y0
        let x = 0.1 * y0();
        let quad = QuadratureSpec::default();
        let direct = quad.integrate(
            |s| {
                (-0.01 * (s + 40.0)).exp()
                    * pool.survival_from_entry(s + 40.0)
                    * crate::baseline::crra(d.at(s) * x, 3.0)
            },
            0.0,
            grid.horizon(),
        );
        assert!((u - direct).abs() < 1e-4 * u.abs(), "{u} vs {direct}");
        assert_abs_diff_eq!(schedule_utility(0.05, &d, &beta, &b, &pool).unwrap(), u, epsilon = 1e-12 * u.abs());
    }

    #[test]
    fn utility_is_homogeneous_in_alpha() {
        let pool = pool(1, 80.0);
        let grid = SGrid::standard(pool.life());
        for gamma in [0.5, 2.0, 10.0] {
            let b = basis(gamma);
            let beta = BetaCurve::from_b_vector(&lone_b(gamma), &pool, gamma, grid).unwrap();
            let u1 = elris_expected_utility(0.03, &beta, &b, &pool).unwrap();
            let u2 = elris_expected_utility(0.06, &beta, &b, &pool).unwrap();
            assert_abs_diff_eq!(u2 / u1, 2f64.powf(1.0 - gamma), epsilon = 1e-12);
        }
    }

    #[test]
    fn stationarity_under_budget_neutral_perturbations() {
        let pool = pool(1, 80.0);
        let b = basis(2.0);
        let grid = SGrid::standard(pool.life());
        let beta = BetaCurve::from_b_vector(&lone_b(2.0), &pool, 2.0, grid).unwrap();
        let d = optimal_payout(&beta, &b).unwrap();
        let u0 = schedule_utility(0.06, &d, &beta, &b, &pool).unwrap();
        let directions: [fn(f64) -> f64; 3] = [|s| s, |s| (s / 7.0).sin(), |s| (-s / 10.0).exp()];
        for g in directions {
            let shape: Vec<f64> = grid.points().zip(d.values()).map(|(s, v)| g(s) * v).collect();
            let discounted: Vec<f64> = grid.points().zip(&shape).map(|(s, x)| (-0.01 * s).exp() * x).collect();
            let probe = grid.integrate(&discounted);
            let h: Vec<f64> = shape.iter().zip(d.values()).map(|(x, v)| x - probe * v).collect();
            let eps = 1e-4;
            let bumped = |sign: f64| {
                let v: Vec<f64> = d.values().iter().zip(&h).map(|(a, b)| a + sign * eps * b).collect();
                schedule_utility(0.06, &PayoutSchedule::new(grid, 0.01, v).unwrap(), &beta, &b, &pool).unwrap()
            };
            let (up, down) = (bumped(1.0), bumped(-1.0));
            let first = (up - down) / 2.0;
            assert!(first.abs() <= 1e-6 * u0.abs(), "first-order {first:e}");
            assert!(up < u0 && down < u0);
        }
    }

    #[test]
    fn log_branch_forms_agree() {
        let b = basis(1.0);
        let quad = QuadratureSpec::default();
        let lone = pool(1, 80.0);
        let grid = SGrid::standard(lone.life());
        let forms = log_equivalence_forms(&lone, &b, y0().ln(), grid).unwrap();
        assert_abs_diff_eq!(forms.via_beta, forms.via_counts, epsilon = 1e-9);
        let r = equivalent_rates_log(&lone, &b, eta(), y0().ln(), grid, &quad).unwrap();
        assert!((r.u_elris - r.u_cpp).abs() <= 1e-9 * r.u_cpp.abs());
        assert_abs_diff_eq!(r.eta_bar * r.alpha_bar, r.eta * r.alpha, epsilon = 1e-12);
        // a deterministic drawdown: U = K[ā ln(2α y0/ā) + ∫e^{-ρs} p ln p]
        let beta = BetaCurve::log_case(y0().ln(), &lone, grid).unwrap();
        let u = elris_expected_utility_log(0.06, &beta, &b, &lone).unwrap();
        let direct = QuadratureSpec::default().integrate(
            |s| {
                let p = lone.survival_from_retirement(s);
                (-0.01 * (s + 40.0)).exp() * lone.survival_from_entry(s + 40.0) * (0.12 * y0() * p / grid_annuity(&lone, &b, &grid)).ln()
            },
            0.0,
            grid.horizon(),
        );
        assert!((u - direct).abs() < 1e-6 * u.abs());
    }

    #[test]
    fn reciprocal_mean_matches_binomial_sum() {
        let p = pool(12, 80.0);
        for s in [0.0, 5.0, 20.0, 40.0, 64.0] {
            let q = p.survival_from_retirement(s);
            for ell in [1, 2, 7, 12] {
                assert_abs_diff_eq!(reciprocal_count_mean(ell, q), beta_hat(ell, s, &p).unwrap(), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn generosity_of_survival_payout_approaches_national_plan() {
        let quad = QuadratureSpec::default();
        let b = basis(2.0);
        let big = pool(2000, 90.0);
        let grid = SGrid::standard(big.life());
        let d = survival_payout(&big, &b, grid).unwrap();
        let g = elris_generosity(&big, &b, big.life(), &d, ExponentForm::NMinusEllMinusOne, &quad).unwrap();
        let cpp = crate::baseline::cpp_generosity(
            0.06,
            eta(),
            big.member_law(),
            big.life(),
            &quad,
        )
        .unwrap();
        // with ᾱ = α at the fair point the two ratios coincide as n → ∞
        let fair = infinite_pool_rate(&b, big.life(), eta(), big.member_law(), &quad).unwrap();
        assert_abs_diff_eq!(fair, 0.06, epsilon = 1e-6);
        assert!((g - cpp).abs() < 0.01, "{g} vs {cpp}");
    }

    #[test]
    fn infinite_pool_cell_balances_utilities() {
        let quad = QuadratureSpec::default();
        for (gamma, m) in [(2.0, 90.0), (10.0, 70.0), (1.0, 80.0), (0.5, 75.0)] {
            let b = basis(gamma);
            let law = GompertzLaw::new(m, 10.0).unwrap();
            let r = infinite_pool_result(&b, &LifeCycle::default(), eta(), &law, &quad).unwrap();
            assert!((r.u_elris - r.u_cpp).abs() <= 1e-12 * r.u_cpp.abs(), "{r:?}");
            assert_eq!(r.n, None);
        }
        let r = infinite_pool_result(&basis(2.0), &LifeCycle::default(), eta(), &GompertzLaw::new(90.0, 10.0).unwrap(), &quad).unwrap();
        assert_abs_diff_eq!(r.alpha_bar, 0.06, epsilon = 1e-6);
    }

    #[test]
    fn schedule_rejects_bad_input() {
        let grid = SGrid::new(0.5, 5).unwrap();
        assert!(PayoutSchedule::new(grid, 0.01, vec![1.0; 4]).is_err());
        assert!(PayoutSchedule::new(grid, 0.01, vec![1.0, -1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(PayoutSchedule::normalized(grid, 0.01, vec![0.0; 5]).is_err());
        let d = PayoutSchedule::normalized(grid, 0.0, vec![1.0; 5]).unwrap();
        assert_abs_diff_eq!(d.at(0.75), 0.5, epsilon = 1e-15);
        assert_eq!(d.at(10.0), 0.0);
        let beta = BetaCurve::new(grid, vec![1.0; 5]).unwrap();
        assert!(matches!(optimal_payout(&beta, &basis(1.0)), Err(Error::LogUtilityRequired)));
    }
}

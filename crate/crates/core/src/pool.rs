//! Closed-form binomial quantities for a homogeneous pool.
//!
//! Conditioning is always on the reference member being alive, so the other
//! `n - 1` members (companions) are independent Bernoulli survivors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{deferred_annuity, EconomicBasis, LifeCycle, ReplacementRate};
use crate::error::{invalid, Error, Result};
use crate::lattice::BVector;
use crate::mortality::{discounted_working_integral, integrate_samples, GompertzLaw, QuadratureSpec};

/// `n` members of equal age and mortality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    size: usize,
    member_law: GompertzLaw,
    life: LifeCycle,
}

impl PoolSpec {
    pub fn new(size: usize, member_law: GompertzLaw, life: LifeCycle) -> Result<Self> {
        if size == 0 {
            return Err(invalid("n", "pool needs at least one member"));
        }
        Ok(Self {
            size,
            member_law,
            life,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn companions(&self) -> usize {
        self.size - 1
    }

    pub fn member_law(&self) -> &GompertzLaw {
        &self.member_law
    }

    pub fn life(&self) -> &LifeCycle {
        &self.life
    }

    /// `ₜp_{x0}` for a member.
    pub fn survival_from_entry(&self, t: f64) -> f64 {
        self.member_law.survival(self.life.entry_age(), t)
    }

    /// `ₛp_{x1}` for a member.
    pub fn survival_from_retirement(&self, s: f64) -> f64 {
        self.member_law.survival(self.life.retirement_age(), s)
    }
}

/// `ln C(n, k)`.
pub fn ln_choose(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// Binomial(trials, p) probabilities, anchored at the mode in log space and
/// filled outward by ratio recurrences, so large `trials` neither overflow
/// nor lose the bulk of the mass.
pub fn binomial_pmf(trials: usize, p: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; trials + 1];
    if p <= 0.0 {
        pmf[0] = 1.0;
        return pmf;
    }
    if p >= 1.0 {
        pmf[trials] = 1.0;
        return pmf;
    }
    let n = trials as f64;
    let mode = (((n + 1.0) * p).floor() as usize).min(trials);
    let q = 1.0 - p;
    let anchor = (ln_choose(trials, mode) + mode as f64 * p.ln() + (n - mode as f64) * q.ln()).exp();
    pmf[mode] = anchor;
    let odds = p / q;
    for k in mode..trials {
        pmf[k + 1] = pmf[k] * ((trials - k) as f64 / (k + 1) as f64) * odds;
    }
    for k in (1..=mode).rev() {
        pmf[k - 1] = pmf[k] * (k as f64 / (trials - k + 1) as f64) / odds;
    }
    // the anchor carries the only rounding that is common to every term
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|v| *v /= total);
    pmf
}

/// `Σ_k weights[k] · P[K = k]` for `K ~ Binomial(trials, p)`.
pub fn weighted_binomial_sum(trials: usize, p: f64, weights: &[f64]) -> f64 {
    binomial_pmf(trials, p)
        .iter()
        .zip(weights)
        .map(|(w, v)| w * v)
        .sum()
}

/// `E[(1 + K)^{-exponent}]` for `K ~ Binomial(ell - 1, p)`.
pub fn count_power_moment(ell: usize, p: f64, exponent: f64) -> f64 {
    assert!(ell >= 1, "survivor count must be at least one");
    let weights: Vec<f64> = (0..ell).map(|k| (1.0 + k as f64).powf(-exponent)).collect();
    weighted_binomial_sum(ell - 1, p, &weights)
}

/// `E_s[(1/N_{s+T})^{1-γ} | N_T = ℓ]`.
pub fn beta_count_factor(ell: usize, s: f64, gamma: f64, pool: &PoolSpec) -> Result<f64> {
    check_ell(ell, pool)?;
    Ok(count_power_moment(ell, pool.survival_from_retirement(s), 1.0 - gamma))
}

/// `E_s[1/N_{s+T} | N_T = ℓ]`.
pub fn beta_hat(ell: usize, s: f64, pool: &PoolSpec) -> Result<f64> {
    check_ell(ell, pool)?;
    Ok(count_power_moment(ell, pool.survival_from_retirement(s), 1.0))
}

fn check_ell(ell: usize, pool: &PoolSpec) -> Result<()> {
    if ell == 0 || ell > pool.size() {
        return Err(invalid("ell", format!("must lie in 1..={}, got {ell}", pool.size())));
    }
    Ok(())
}

/// `β_s = ₛp_{x1} Σ_ℓ β_{ℓ,s} b_ℓ`.
pub fn assemble_beta(s: f64, b_vec: &BVector, pool: &PoolSpec, gamma: f64) -> Result<f64> {
    if b_vec.len() != pool.size() {
        return Err(Error::DimensionMismatch {
            expected: pool.size(),
            actual: b_vec.len(),
        });
    }
    let weights = count_weights(pool.size(), 1.0 - gamma);
    Ok(assemble_with_weights(s, b_vec.values(), pool, &weights))
}

fn count_weights(n: usize, exponent: f64) -> Vec<f64> {
    (0..n).map(|k| (1.0 + k as f64).powf(-exponent)).collect()
}

fn assemble_with_weights(s: f64, b: &[f64], pool: &PoolSpec, weights: &[f64]) -> f64 {
    let p = pool.survival_from_retirement(s);
    let sum: f64 = b
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| weighted_binomial_sum(i, p, &weights[..=i]) * v)
        .sum();
    p * sum
}

/// `E_s[log N_{s+T}]` given the reference is alive at `s + T`.
pub fn log_count_moment(s: f64, pool: &PoolSpec) -> f64 {
    let p = pool.survival_from_entry(s + pool.life().span());
    let weights: Vec<f64> = (0..pool.size()).map(|k| (1.0 + k as f64).ln()).collect();
    weighted_binomial_sum(pool.companions(), p, &weights)
}

/// Exponent on `(1 - ₜp)` in the closed forms for `E_s[N_t, N_T = ℓ]` and `b̂_ℓ`.
///
/// `NMinusEllMinusOne` carries the bracket `ℓ + (n-ℓ)ₜp - n·_Tp`; `NMinusEll`
/// is the competing reading with the same bracket. The oracle decides which
/// one reproduces exact enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExponentForm {
    NMinusEllMinusOne,
    NMinusEll,
}

fn count_prefactor(pool: &PoolSpec, ell: usize, form: ExponentForm) -> f64 {
    let n = pool.size();
    let big_p = pool.survival_from_entry(pool.life().span());
    let exponent = match form {
        ExponentForm::NMinusEllMinusOne => (n - ell) as f64 - 1.0,
        ExponentForm::NMinusEll => (n - ell) as f64,
    };
    let ln = ln_choose(n - 1, ell - 1) + (ell - 1) as f64 * big_p.ln() + exponent * (-big_p).ln_1p();
    ln.exp()
}

/// `E_s[N_t ; N_T = ℓ]` for `0 ≤ t ≤ T`.
pub fn conditional_count_mean(pool: &PoolSpec, t: f64, ell: usize, form: ExponentForm) -> Result<f64> {
    check_ell(ell, pool)?;
    let span = pool.life().span();
    if !(0.0..=span).contains(&t) {
        return Err(invalid("t", format!("must lie in [0, {span}], got {t}")));
    }
    let n = pool.size() as f64;
    let big_p = pool.survival_from_entry(span);
    let bracket = ell as f64 + (n - ell as f64) * pool.survival_from_entry(t) - n * big_p;
    Ok(count_prefactor(pool, ell, form) * bracket)
}

/// `b̂_ℓ = E_s[Y ; N_T = ℓ]` in closed form.
pub fn b_hat(pool: &PoolSpec, ell: usize, rate: f64, form: ExponentForm, quad: &QuadratureSpec) -> Result<f64> {
    check_ell(ell, pool)?;
    let n = pool.size() as f64;
    let span = pool.life().span();
    let big_p = pool.survival_from_entry(span);
    let accumulation = if rate == 0.0 { span } else { (rate * span).exp_m1() / rate };
    let working = discounted_working_integral(pool.member_law(), pool.life().entry_age(), span, rate, quad);
    let bracket = (ell as f64 - n * big_p) * accumulation + (n - ell as f64) * (rate * span).exp() * working;
    Ok(count_prefactor(pool, ell, form) * bracket)
}

/// Utility-equivalent contribution rate of an infinitely large pool; independent of γ.
pub fn infinite_pool_rate(
    basis: &EconomicBasis,
    life: &LifeCycle,
    eta: ReplacementRate,
    member_law: &GompertzLaw,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let retirement = deferred_annuity(basis, life, member_law, quad)?;
    let working = discounted_working_integral(member_law, life.entry_age(), life.span(), basis.rho(), quad);
    Ok(0.5 * eta.value() * retirement / working)
}

/// Uniform retirement-time grid `s_i = i · step`, `i = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SGrid {
    step: f64,
    len: usize,
}

impl SGrid {
    pub fn new(step: f64, len: usize) -> Result<Self> {
        if !(step > 0.0) || len < 2 {
            return Err(invalid("s_grid", "needs a positive step and at least two points"));
        }
        Ok(Self { step, len })
    }

    /// Grid from retirement up to `max_age` (rounded up to an even panel count).
    pub fn to_max_age(life: &LifeCycle, max_age: f64, step: f64) -> Result<Self> {
        let horizon = max_age - life.retirement_age();
        if !(horizon > 0.0) {
            return Err(invalid("max_age", "must exceed the retirement age"));
        }
        let mut intervals = (horizon / step).ceil() as usize;
        if intervals % 2 == 1 {
            intervals += 1;
        }
        Self::new(step, intervals + 1)
    }

    /// Default grid: eighth-year steps to age 130.
    pub fn standard(life: &LifeCycle) -> Self {
        Self::to_max_age(life, 130.0, 0.125).expect("retirement before 130")
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|i| self.point(i))
    }

    pub fn horizon(&self) -> f64 {
        self.point(self.len - 1)
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len);
        integrate_samples(values, self.step)
    }
}

/// `β_s` sampled on an [`SGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCurve {
    grid: SGrid,
    values: Vec<f64>,
}

impl BetaCurve {
    pub fn new(grid: SGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(invalid("beta", format!("non-finite value {v}")));
        }
        Ok(Self { grid, values })
    }

    /// Power-utility `β_s` from accumulation moments.
    pub fn from_b_vector(b_vec: &BVector, pool: &PoolSpec, gamma: f64, grid: SGrid) -> Result<Self> {
        if b_vec.len() != pool.size() {
            return Err(Error::DimensionMismatch {
                expected: pool.size(),
                actual: b_vec.len(),
            });
        }
        let weights = count_weights(pool.size(), 1.0 - gamma);
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| assemble_with_weights(grid.point(i), b_vec.values(), pool, &weights))
            .collect();
        Self::new(grid, values)
    }

    /// Logarithmic-utility `β_s = ₛp_{x1}(E[log Y] - E_s[log N_{s+T}])`.
    pub fn log_case(log_y_moment: f64, pool: &PoolSpec, grid: SGrid) -> Result<Self> {
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let s = grid.point(i);
                pool.survival_from_retirement(s) * (log_y_moment - log_count_moment(s, pool))
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &SGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pool(n: usize, m: f64) -> PoolSpec {
        PoolSpec::new(n, GompertzLaw::new(m, 10.0).unwrap(), LifeCycle::default()).unwrap()
    }

    /// Sum over all survivor subsets of `trials` independent members.
    fn subset_expectation(trials: usize, p: f64, f: impl Fn(usize) -> f64) -> f64 {
        (0u32..(1 << trials))
            .map(|mask| {
                let alive = mask.count_ones() as usize;
                p.powi(alive as i32) * (1.0 - p).powi((trials - alive) as i32) * f(alive)
            })
            .sum()
    }

    #[test]
    fn pmf_sums_to_one_for_large_pools() {
        for &(n, p) in &[(1999, 0.55), (1999, 0.97), (2000, 1e-3), (30, 0.5), (0, 0.3), (5, 0.0), (5, 1.0)] {
            let total: f64 = binomial_pmf(n, p).iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "n={n} p={p} total={total}");
        }
    }

    #[test]
    fn pmf_matches_direct_formula() {
        let pmf = binomial_pmf(12, 0.3);
        for (k, v) in pmf.iter().enumerate() {
            let direct = ln_choose(12, k).exp() * 0.3f64.powi(k as i32) * 0.7f64.powi(12 - k as i32);
            assert_abs_diff_eq!(*v, direct, epsilon = 1e-15);
        }
    }

    #[test]
    fn beta_count_factor_edge_cases() {
        let pool = pool(5, 80.0);
        for ell in 1..=5 {
            let b0 = beta_count_factor(ell, 0.0, 2.0, &pool).unwrap();
            assert_abs_diff_eq!(b0, (1.0 / ell as f64).powf(-1.0), epsilon = 1e-12);
        }
        for &s in &[0.0, 5.0, 30.0] {
            assert_abs_diff_eq!(beta_count_factor(1, s, 3.0, &pool).unwrap(), 1.0);
        }
        assert!(beta_count_factor(6, 1.0, 2.0, &pool).is_err());
        assert!(beta_count_factor(0, 1.0, 2.0, &pool).is_err());
    }

    #[test]
    fn beta_count_factor_matches_enumeration() {
        let pool = pool(4, 80.0);
        let p = pool.survival_from_retirement(10.0);
        let enumerated = subset_expectation(2, p, |alive| (1.0 / (1 + alive) as f64).powf(-1.0));
        assert_abs_diff_eq!(beta_count_factor(3, 10.0, 2.0, &pool).unwrap(), enumerated, epsilon = 1e-12);
    }

    #[test]
    fn beta_hat_cases() {
        let pool = pool(5, 80.0);
        assert_abs_diff_eq!(beta_hat(1, 9.0, &pool).unwrap(), 1.0);
        assert_abs_diff_eq!(beta_hat(4, 0.0, &pool).unwrap(), 0.25, epsilon = 1e-14);
        let p = pool.survival_from_retirement(15.0);
        let enumerated = subset_expectation(2, p, |alive| 1.0 / (1 + alive) as f64);
        assert_abs_diff_eq!(beta_hat(3, 15.0, &pool).unwrap(), enumerated, epsilon = 1e-12);
        for &s in &[0.0, 4.0, 17.5] {
            for ell in 1..=5 {
                assert_abs_diff_eq!(
                    beta_count_factor(ell, s, 0.0, &pool).unwrap(),
                    beta_hat(ell, s, &pool).unwrap(),
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn high_gamma_factor_falls_with_time() {
        let pool = pool(10, 80.0);
        for ell in 2..=10 {
            let mut prev = f64::INFINITY;
            for i in 0..=260 {
                let v = beta_count_factor(ell, i as f64 * 0.25, 3.0, &pool).unwrap();
                assert!(v <= prev + 1e-12);
                prev = v;
            }
        }
    }

    #[test]
    fn log_count_moment_cases() {
        assert_eq!(log_count_moment(3.0, &pool(1, 80.0)), 0.0);
        // survival to age 130 is effectively zero
        assert!(log_count_moment(65.0, &pool(5, 80.0)).abs() < 1e-12);
        let pool = pool(5, 80.0);
        let p = pool.survival_from_entry(50.0);
        let enumerated = subset_expectation(4, p, |alive| ((1 + alive) as f64).ln());
        assert_abs_diff_eq!(log_count_moment(10.0, &pool), enumerated, epsilon = 1e-12);
    }

    #[test]
    fn count_mean_boundary_identities() {
        let pool = pool(4, 80.0);
        let big_p = pool.survival_from_entry(40.0);
        for ell in 1..=4 {
            let mass = ln_choose(3, ell - 1).exp() * big_p.powi(ell as i32 - 1) * (1.0 - big_p).powi(4 - ell as i32);
            let at_t = conditional_count_mean(&pool, 40.0, ell, ExponentForm::NMinusEllMinusOne).unwrap();
            let at_0 = conditional_count_mean(&pool, 0.0, ell, ExponentForm::NMinusEllMinusOne).unwrap();
            assert_abs_diff_eq!(at_t, ell as f64 * mass, epsilon = 1e-12);
            assert_abs_diff_eq!(at_0, 4.0 * mass, epsilon = 1e-12);
        }
        assert!(conditional_count_mean(&pool, 41.0, 1, ExponentForm::NMinusEll).is_err());
    }

    #[test]
    fn lone_member_b_hat() {
        let pool = pool(1, 80.0);
        let quad = QuadratureSpec::default();
        let v = b_hat(&pool, 1, 0.01, ExponentForm::NMinusEllMinusOne, &quad).unwrap();
        assert_abs_diff_eq!(v, (0.4f64).exp_m1() / 0.01, epsilon = 1e-10);
    }

    #[test]
    fn infinite_pool_recovers_alpha_on_base_law() {
        let quad = QuadratureSpec::default();
        let life = LifeCycle::default();
        let law = GompertzLaw::new(90.0, 10.0).unwrap();
        for gamma in [0.5, 2.0, 10.0] {
            let basis = EconomicBasis::new(0.01, 0.06, gamma).unwrap();
            let eta = crate::baseline::calibrate_eta(&basis, &life, &law, &quad).unwrap();
            let a = infinite_pool_rate(&basis, &life, eta, &law, &quad).unwrap();
            assert_abs_diff_eq!(a, 0.06, epsilon = 1e-8);
            let impaired = infinite_pool_rate(&basis, &life, eta, &GompertzLaw::new(80.0, 10.0).unwrap(), &quad).unwrap();
            assert!(impaired < 0.06);
        }
    }

    #[test]
    fn lone_member_beta_curve() {
        let pool = pool(1, 70.0);
        let y0 = 0.4f64.exp_m1() / 0.01;
        let b = BVector::exact(vec![y0.powf(-1.0)]);
        let grid = SGrid::standard(pool.life());
        let curve = BetaCurve::from_b_vector(&b, &pool, 2.0, grid).unwrap();
        for (i, v) in curve.values().iter().enumerate() {
            let expected = pool.survival_from_retirement(grid.point(i)) / y0;
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-15);
        }
        assert!(curve.values().last().unwrap().abs() < 1e-20);
        assert!(assemble_beta(1.0, &BVector::exact(vec![1.0, 2.0]), &pool, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn binomial_weights_total_one(n in 0usize..2500, p in 0.0f64..=1.0) {
            let total: f64 = binomial_pmf(n, p).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}

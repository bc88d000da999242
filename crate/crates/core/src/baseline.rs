//! The stylized guaranteed national pension: a replacement rate priced fairly
//! on the base population, its lifetime utility, and its undiscounted generosity.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mortality::{annuity_factor, discounted_working_integral, GompertzLaw, QuadratureSpec};

/// Real rate, subjective discount, employee contribution and risk aversion.
///
/// The subjective discount rate always equals the real rate; the wage is
/// normalized to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconomicBasis {
    rate: f64,
    alpha: f64,
    gamma: f64,
}

impl EconomicBasis {
    pub fn new(rate: f64, alpha: f64, gamma: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(invalid("rate", format!("must be non-negative, got {rate}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be positive, got {gamma}")));
        }
        Ok(Self { rate, alpha, gamma })
    }

    /// Like [`EconomicBasis::new`] but with an explicit subjective discount,
    /// which must coincide with the real rate.
    pub fn with_discount(rate: f64, rho: f64, alpha: f64, gamma: f64) -> Result<Self> {
        if rho != rate {
            return Err(invalid("rho", format!("must equal the real rate {rate}, got {rho}")));
        }
        Self::new(rate, alpha, gamma)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn rho(&self) -> f64 {
        self.rate
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_log(&self) -> bool {
        self.gamma == 1.0
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.rate, self.alpha, gamma)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.rate, alpha, self.gamma)
    }

    /// Future value at retirement of a unit contribution stream over `span` years.
    pub fn accumulation_factor(&self, span: f64) -> f64 {
        if self.rate == 0.0 {
            span
        } else {
            (self.rate * span).exp_m1() / self.rate
        }
    }
}

/// Entry age and contribution span; retirement happens at `entry_age + span`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifeCycle {
    entry_age: f64,
    span: f64,
}

impl LifeCycle {
    pub fn new(entry_age: f64, span: f64) -> Result<Self> {
        if !(entry_age >= 0.0 && entry_age.is_finite()) {
            return Err(invalid("x0", format!("must be non-negative, got {entry_age}")));
        }
        if !(span > 0.0 && span.is_finite()) {
            return Err(invalid("span", format!("must be positive, got {span}")));
        }
        Ok(Self { entry_age, span })
    }

    pub fn entry_age(&self) -> f64 {
        self.entry_age
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn retirement_age(&self) -> f64 {
        self.entry_age + self.span
    }
}

impl Default for LifeCycle {
    fn default() -> Self {
        Self {
            entry_age: 25.0,
            span: 40.0,
        }
    }
}

/// Retirement income as a fraction of the wage.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ReplacementRate(f64);

impl ReplacementRate {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("eta", format!("must be positive, got {eta}")));
        }
        Ok(Self(eta))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// CRRA utility, logarithmic at `gamma == 1`.
pub fn crra(z: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        z.ln()
    } else {
        z.powf(1.0 - gamma) / (1.0 - gamma)
    }
}

/// The deferred-annuity value `e^{-ρT} ₜp_{x0} ā_{x1}` of a unit retirement income.
pub(crate) fn deferred_annuity(
    basis: &EconomicBasis,
    life: &LifeCycle,
    law: &GompertzLaw,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let a = annuity_factor(law, life.retirement_age(), basis.rho(), quad)?;
    Ok((-basis.rho() * life.span()).exp() * law.survival(life.entry_age(), life.span()) * a)
}

/// Replacement rate at which a matched contribution `2α` is actuarially fair
/// for the base population.
pub fn calibrate_eta(
    basis: &EconomicBasis,
    life: &LifeCycle,
    base_law: &GompertzLaw,
    quad: &QuadratureSpec,
) -> Result<ReplacementRate> {
    let working = discounted_working_integral(base_law, life.entry_age(), life.span(), basis.rate(), quad);
    let retirement = deferred_annuity(basis, life, base_law, quad)?;
    if !(retirement > f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!(
            "retirement-phase integral underflows ({retirement:e})"
        )));
    }
    ReplacementRate::new(2.0 * basis.alpha() * working / retirement)
}

/// Expected discounted utility at entry of the guaranteed income `eta` for a
/// member following `member_law`.
pub fn cpp_expected_utility(
    basis: &EconomicBasis,
    life: &LifeCycle,
    eta: ReplacementRate,
    member_law: &GompertzLaw,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if basis.is_log() {
        return Err(Error::LogUtilityRequired);
    }
    Ok(deferred_annuity(basis, life, member_law, quad)? * crra(eta.value(), basis.gamma()))
}

/// Logarithmic-utility counterpart of [`cpp_expected_utility`].
pub fn cpp_expected_utility_log(
    basis: &EconomicBasis,
    life: &LifeCycle,
    eta: ReplacementRate,
    member_law: &GompertzLaw,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if !basis.is_log() {
        return Err(invalid("gamma", "logarithmic utility requires gamma = 1"));
    }
    Ok(deferred_annuity(basis, life, member_law, quad)? * eta.value().ln())
}

/// Expected undiscounted benefits over expected undiscounted employee contributions.
///
/// The denominator counts the employee share `alpha` only.
pub fn cpp_generosity(
    alpha: f64,
    eta: ReplacementRate,
    member_law: &GompertzLaw,
    life: &LifeCycle,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let x0 = life.entry_age();
    quad.check_truncation(member_law, life.retirement_age())?;
    let benefits = eta.value() * quad.integrate(|t| member_law.survival(x0, t), life.span(), quad.max_age - x0);
    let contributions = alpha * quad.integrate(|t| member_law.survival(x0, t), 0.0, life.span());
    Ok(benefits / contributions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn setup(rate: f64) -> (EconomicBasis, LifeCycle, GompertzLaw, QuadratureSpec) {
        (
            EconomicBasis::new(rate, 0.06, 2.0).unwrap(),
            LifeCycle::default(),
            GompertzLaw::new(90.0, 10.0).unwrap(),
            QuadratureSpec::default(),
        )
    }

    #[test]
    fn eta_reference_values() {
        let (basis, life, law, quad) = setup(0.01);
        let eta = calibrate_eta(&basis, &life, &law, &quad).unwrap().value();
        assert_abs_diff_eq!(eta, 0.3281, epsilon = 5e-4);
        let (basis, life, law, quad) = setup(0.03);
        let eta = calibrate_eta(&basis, &life, &law, &quad).unwrap().value();
        assert_abs_diff_eq!(eta, 0.6514, epsilon = 5e-4);
    }

    #[test]
    fn eta_is_linear_in_alpha() {
        let (basis, life, law, quad) = setup(0.01);
        let eta = calibrate_eta(&basis, &life, &law, &quad).unwrap().value();
        let doubled = calibrate_eta(&basis.with_alpha(0.12).unwrap(), &life, &law, &quad)
            .unwrap()
            .value();
        assert_abs_diff_eq!(doubled, 2.0 * eta, epsilon = 1e-12);
    }

    #[test]
    fn fairness_identity() {
        let (basis, life, law, quad) = setup(0.01);
        let eta = calibrate_eta(&basis, &life, &law, &quad).unwrap().value();
        let contributions = 2.0 * basis.alpha() * discounted_working_integral(&law, 25.0, 40.0, 0.01, &quad);
        let benefits = eta * deferred_annuity(&basis, &life, &law, &quad).unwrap();
        assert_abs_diff_eq!(contributions, benefits, epsilon = 1e-8);
    }

    #[test]
    fn wage_scales_out() {
        // both defining integrals carried with c = 100 give the same eta
        let (basis, life, law, quad) = setup(0.01);
        let c = 100.0;
        let contrib = 2.0 * basis.alpha() * quad.integrate(|t| c * (-0.01 * t).exp() * law.survival(25.0, t), 0.0, 40.0);
        let benefit_unit = quad.integrate(|t| c * (-0.01 * t).exp() * law.survival(25.0, t), 40.0, 105.0);
        let eta = calibrate_eta(&basis, &life, &law, &quad).unwrap().value();
        assert_abs_diff_eq!(contrib / benefit_unit, eta, epsilon = 1e-9);
    }

    #[test]
    fn utility_sign_and_homogeneity() {
        let (basis, life, law, quad) = setup(0.01);
        let eta = ReplacementRate::new(0.33).unwrap();
        let u = cpp_expected_utility(&basis, &life, eta, &law, &quad).unwrap();
        assert!(u < 0.0);
        let low = basis.with_gamma(0.5).unwrap();
        assert!(cpp_expected_utility(&low, &life, eta, &law, &quad).unwrap() > 0.0);
        let k = 1.7;
        let scaled = cpp_expected_utility(&basis, &life, ReplacementRate::new(0.33 * k).unwrap(), &law, &quad).unwrap();
        assert_abs_diff_eq!(scaled / u, k.powf(1.0 - basis.gamma()), epsilon = 1e-12);
        let log = basis.with_gamma(1.0).unwrap();
        assert_eq!(cpp_expected_utility(&log, &life, eta, &law, &quad), Err(Error::LogUtilityRequired));
    }

    #[test]
    fn utility_matches_direct_quadrature() {
        let (basis, life, _, quad) = setup(0.01);
        let member = GompertzLaw::new(80.0, 10.0).unwrap();
        let eta = ReplacementRate::new(0.3281).unwrap();
        let u = cpp_expected_utility(&basis, &life, eta, &member, &quad).unwrap();
        let direct = quad.integrate(
            |t| (-0.01 * t).exp() * member.survival(25.0, t) * crra(0.3281, 2.0),
            40.0,
            105.0,
        );
        assert_abs_diff_eq!(u, direct, epsilon = 1e-8);

        let log = basis.with_gamma(1.0).unwrap();
        assert_abs_diff_eq!(
            cpp_expected_utility_log(&log, &life, ReplacementRate::new(1.0).unwrap(), &member, &quad).unwrap(),
            0.0
        );
        let ul = cpp_expected_utility_log(&log, &life, eta, &member, &quad).unwrap();
        assert!(ul < 0.0);
        let direct = quad.integrate(
            |t| (-0.01 * t).exp() * member.survival(25.0, t) * 0.3281f64.ln(),
            40.0,
            105.0,
        );
        assert_abs_diff_eq!(ul, direct, epsilon = 1e-8);
    }

    #[test]
    fn generosity_reference_values() {
        let (basis, life, law, quad) = setup(0.01);
        let eta = calibrate_eta(&basis, &life, &law, &quad).unwrap();
        for (m, expected) in [(90.0, 2.79), (80.0, 1.64), (70.0, 0.70)] {
            let g = cpp_generosity(0.06, eta, &GompertzLaw::new(m, 10.0).unwrap(), &life, &quad).unwrap();
            assert_abs_diff_eq!(g, expected, epsilon = 0.01);
        }
    }

    #[test]
    fn generosity_increases_with_modal_age() {
        let (basis, life, law, quad) = setup(0.01);
        let eta = calibrate_eta(&basis, &life, &law, &quad).unwrap();
        let mut prev = 0.0;
        for m in 60..=95 {
            let g = cpp_generosity(0.06, eta, &GompertzLaw::new(m as f64, 10.0).unwrap(), &life, &quad).unwrap();
            assert!(g > prev);
            prev = g;
        }
    }

    #[test]
    fn basis_rejects_mismatched_discount() {
        assert!(EconomicBasis::with_discount(0.01, 0.02, 0.06, 2.0).is_err());
        assert!(EconomicBasis::with_discount(0.01, 0.01, 0.06, 2.0).is_ok());
        assert!(EconomicBasis::new(0.01, 1.2, 2.0).is_err());
        assert!(LifeCycle::new(25.0, 0.0).is_err());
    }
}

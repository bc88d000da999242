//! Gompertz survival mathematics and discounted life-contingent integrals.
//!
//! Ages and durations are continuous; nothing is rounded to integer ages.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Gompertz law of mortality with hazard `(1/b) e^{(x-m)/b}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GompertzLaw {
    modal_age: f64,
    dispersion: f64,
}

impl GompertzLaw {
    pub fn new(modal_age: f64, dispersion: f64) -> Result<Self> {
        if !(modal_age > 0.0 && modal_age.is_finite()) {
            return Err(invalid("m", format!("modal age must be positive, got {modal_age}")));
        }
        if !(dispersion > 0.0 && dispersion.is_finite()) {
            return Err(invalid("b", format!("dispersion must be positive, got {dispersion}")));
        }
        Ok(Self {
            modal_age,
            dispersion,
        })
    }

    /// The law of a life whose hazard at age `x` equals the base hazard at `x + delta`.
    pub fn impaired(&self, delta: f64) -> Result<Self> {
        Self::new(self.modal_age - delta, self.dispersion)
    }

    pub fn modal_age(&self) -> f64 {
        self.modal_age
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn hazard(&self, age: f64) -> f64 {
        ((age - self.modal_age) / self.dispersion).exp() / self.dispersion
    }

    /// Integrated hazard over `[age, age + t]`.
    pub fn cumulative_hazard(&self, age: f64, t: f64) -> f64 {
        ((age - self.modal_age) / self.dispersion).exp() * (t / self.dispersion).exp_m1()
    }

    /// Probability that a life aged `age` survives a further `t` years.
    pub fn survival(&self, age: f64, t: f64) -> f64 {
        (-self.cumulative_hazard(age, t)).exp()
    }
}

/// Survival under a constant hazard `lambda` for `t` years.
pub fn constant_hazard_survival(lambda: f64, t: f64) -> f64 {
    (-lambda * t).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadratureRule {
    Simpson,
    Trapezoid,
}

/// How integrals over age are evaluated and where they are truncated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub max_age: f64,
    pub step: f64,
    pub rule: QuadratureRule,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            max_age: 130.0,
            step: 1.0 / 16.0,
            rule: QuadratureRule::Simpson,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_age >= 110.0) {
            return Err(invalid("max_age", format!("must be at least 110, got {}", self.max_age)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid("step", format!("must be positive, got {}", self.step)));
        }
        Ok(())
    }

    /// Fails unless survival from `age` to `max_age` is negligible under `law`.
    pub fn check_truncation(&self, law: &GompertzLaw, age: f64) -> Result<()> {
        self.validate()?;
        let survival = law.survival(age, (self.max_age - age).max(0.0));
        if survival >= 1e-12 {
            return Err(Error::QuadratureTruncation {
                max_age: self.max_age,
                survival,
            });
        }
        Ok(())
    }

    /// Composite integral of `f` over `[a, b]` with at most `step` spacing.
    pub fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut intervals = ((b - a) / self.step).ceil().max(1.0) as usize;
        match self.rule {
            QuadratureRule::Simpson => {
                if intervals % 2 == 1 {
                    intervals += 1;
                }
                let h = (b - a) / intervals as f64;
                let mut sum = f(a) + f(b);
                for i in 1..intervals {
                    let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                    sum += w * f(a + i as f64 * h);
                }
                sum * h / 3.0
            }
            QuadratureRule::Trapezoid => {
                let h = (b - a) / intervals as f64;
                let mut sum = 0.5 * (f(a) + f(b));
                for i in 1..intervals {
                    sum += f(a + i as f64 * h);
                }
                sum * h
            }
        }
    }
}

/// Integral of uniformly spaced samples (spacing `step`) by composite Simpson;
/// an odd interval count closes with a 3/8 panel.
pub fn integrate_samples(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * step * (values[0] + values[1]),
        3 => step / 3.0 * (values[0] + 4.0 * values[1] + values[2]),
        _ => {
            let intervals = n - 1;
            let simpson_end = if intervals.is_multiple_of(2) { n - 1 } else { n - 4 };
            let mut sum = values[0] + values[simpson_end];
            for (i, v) in values.iter().enumerate().take(simpson_end).skip(1) {
                sum += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
            }
            let mut total = sum * step / 3.0;
            if simpson_end != n - 1 {
                let j = simpson_end;
                total += 3.0 * step / 8.0
                    * (values[j] + 3.0 * values[j + 1] + 3.0 * values[j + 2] + values[j + 3]);
            }
            total
        }
    }
}

/// Continuous life annuity factor `∫₀^∞ e^{-ρt} ₜp_x dt`, truncated at `quad.max_age`.
pub fn annuity_factor(law: &GompertzLaw, age: f64, rho: f64, quad: &QuadratureSpec) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(invalid("rho", format!("must be non-negative, got {rho}")));
    }
    quad.check_truncation(law, age)?;
    let horizon = quad.max_age - age;
    Ok(quad.integrate(|t| (-rho * t).exp() * law.survival(age, t), 0.0, horizon))
}

/// `∫₀ᵀ e^{-ρt} ₜp_{x0} dt` over the working phase.
pub fn discounted_working_integral(
    law: &GompertzLaw,
    entry_age: f64,
    span: f64,
    rho: f64,
    quad: &QuadratureSpec,
) -> f64 {
    quad.integrate(
        |t| (-rho * t).exp() * law.survival(entry_age, t),
        0.0,
        span.max(0.0),
    )
}

//! Run configuration: defaults, then an INI-style file, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use elris_core::{DeathRule, EconomicBasis, GompertzLaw, LatticeSpec, LifeCycle, QuadratureSpec};
use ini::Ini;

use crate::CliError;

/// Every configuration key, its default and a one-line flag help.
pub const KEYS: &[(&str, Option<&str>, &str)] = &[
    ("scenario", Some("default"), "scenario label echoed into outputs"),
    ("rate", Some("0.01"), "interest rate r"),
    ("rho", None, "subjective discount rate (must equal rate; defaults to it)"),
    ("alpha", Some("0.06"), "employee contribution rate"),
    ("gamma", Some("2"), "relative risk aversion"),
    ("x0", Some("25"), "entry age"),
    ("span", Some("40"), "working years T"),
    ("m", Some("90"), "modal age of the base population"),
    ("b", Some("10"), "Gompertz dispersion"),
    ("mbar", Some("80"), "modal age of the impaired members"),
    ("n", Some("30"), "pool size, or inf"),
    ("resolution", Some("2000,1000"), "coarsest lattice resolution n_t,n_y"),
    ("richardson", Some("2"), "Richardson levels (1-3)"),
    ("death-rule", Some("auto"), "single, binomial or auto"),
    ("prune", Some("0"), "lattice prune threshold"),
    ("y-max", None, "lattice fund bound (default from resolution)"),
    ("grid-step", Some("0.125"), "retirement grid step in years"),
    ("max-age", Some("130"), "truncation age"),
    ("seed", None, "master seed for simulation"),
    ("paths", Some("4"), "paths written to paths.csv"),
    ("fan-paths", Some("10000"), "paths behind fan.csv"),
    ("alpha-bar", None, "contribution rate for simulation (default: solved)"),
    ("mbar-list", None, "comma list or lo:hi:step of impaired modal ages"),
    ("n-list", Some("1,5,30,inf"), "pool sizes for sweeps"),
    ("gamma-list", None, "risk aversions for sweeps and generosity"),
    ("jobs", None, "worker threads"),
    ("out-dir", Some("out"), "output directory"),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoolSize {
    Finite(usize),
    Infinite,
}

impl PoolSize {
    pub fn label(&self) -> String {
        match self {
            PoolSize::Finite(n) => n.to_string(),
            PoolSize::Infinite => "inf".into(),
        }
    }

    /// Sort key placing `inf` after every finite size.
    pub fn order(&self) -> usize {
        match self {
            PoolSize::Finite(n) => *n,
            PoolSize::Infinite => usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeathRuleChoice {
    Fixed(DeathRule),
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub rate: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub x0: f64,
    pub span: f64,
    pub m: f64,
    pub b: f64,
    pub mbar: f64,
    pub n: PoolSize,
    pub resolution: (usize, usize),
    pub richardson: usize,
    pub death_rule: DeathRuleChoice,
    pub prune: f64,
    pub y_max: Option<f64>,
    pub grid_step: f64,
    pub max_age: f64,
    pub seed: Option<u64>,
    pub paths: usize,
    pub fan_paths: usize,
    pub alpha_bar: Option<f64>,
    pub mbar_list: Option<Vec<f64>>,
    pub n_list: Vec<PoolSize>,
    pub gamma_list: Option<Vec<f64>>,
    pub jobs: Option<usize>,
    pub out_dir: PathBuf,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
    raw.trim()
        .parse()
        .map_err(|_| config_error(format!("`{key}`: cannot parse `{raw}`")))
}

fn parse_pool_size(key: &str, raw: &str) -> Result<PoolSize, CliError> {
    match raw.trim() {
        "inf" | "infinity" | "∞" => Ok(PoolSize::Infinite),
        other => {
            let n: usize = parse(key, other)?;
            if n == 0 {
                return Err(config_error(format!("`{key}`: pool size must be positive")));
            }
            Ok(PoolSize::Finite(n))
        }
    }
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<f64>, CliError> {
    let raw = raw.trim();
    let parts: Vec<&str> = raw.split(':').collect();
    let values = if parts.len() == 3 {
        let (lo, hi, step): (f64, f64, f64) = (parse(key, parts[0])?, parse(key, parts[1])?, parse(key, parts[2])?);
        if !(step > 0.0 && hi >= lo) {
            return Err(config_error(format!("`{key}`: range needs lo <= hi and a positive step")));
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=count).map(|i| lo + i as f64 * step).collect()
    } else {
        raw.split(',').map(|v| parse(key, v)).collect::<Result<Vec<f64>, _>>()?
    };
    if values.is_empty() {
        return Err(config_error(format!("`{key}`: empty list")));
    }
    Ok(values)
}

/// Merges defaults, the file named by `config_path` and `flags`, in increasing precedence.
pub fn merge(config_path: Option<&Path>, flags: &BTreeMap<String, String>) -> Result<BTreeMap<String, String>, CliError> {
    let mut values: BTreeMap<String, String> = KEYS
        .iter()
        .filter_map(|(k, d, _)| d.map(|d| (k.to_string(), d.to_string())))
        .collect();
    if let Some(path) = config_path {
        let file = Ini::load_from_file(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let mut seen = BTreeMap::new();
        for (section, props) in file.iter() {
            for (key, value) in props.iter() {
                if !KEYS.iter().any(|(k, _, _)| *k == key) {
                    return Err(config_error(format!("{}: unknown key `{key}`", path.display())));
                }
                if let Some(prev) = seen.insert(key.to_string(), section.map(str::to_string)) {
                    return Err(config_error(format!(
                        "{}: key `{key}` set twice (sections {:?} and {:?})",
                        path.display(),
                        prev,
                        section
                    )));
                }
                values.insert(key.to_string(), value.to_string());
            }
        }
    }
    for (k, v) in flags {
        values.insert(k.clone(), v.clone());
    }
    Ok(values)
}

impl RunConfig {
    pub fn from_values(values: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let get = |k: &str| values.get(k).map(String::as_str);
        let req = |k: &str| get(k).ok_or_else(|| config_error(format!("missing `{k}`")));
        let rate: f64 = parse("rate", req("rate")?)?;
        if let Some(rho) = get("rho") {
            let rho: f64 = parse("rho", rho)?;
            if rho != rate {
                return Err(config_error(format!("`rho` ({rho}) must equal `rate` ({rate})")));
            }
        }
        let resolution = {
            let raw = req("resolution")?;
            let parts: Vec<&str> = raw.split(',').collect();
            if parts.len() != 2 {
                return Err(config_error("`resolution` must be n_t,n_y"));
            }
            (parse("resolution", parts[0])?, parse("resolution", parts[1])?)
        };
        let death_rule = match req("death-rule")?.trim() {
            "single" => DeathRuleChoice::Fixed(DeathRule::SingleDeath),
            "binomial" => DeathRuleChoice::Fixed(DeathRule::Binomial),
            "auto" => DeathRuleChoice::Auto,
            other => return Err(config_error(format!("`death-rule`: unknown rule `{other}`"))),
        };
        let opt_f64 = |k: &str| get(k).map(|v| parse::<f64>(k, v)).transpose();
        let config = Self {
            scenario: req("scenario")?.to_string(),
            rate,
            alpha: parse("alpha", req("alpha")?)?,
            gamma: parse("gamma", req("gamma")?)?,
            x0: parse("x0", req("x0")?)?,
            span: parse("span", req("span")?)?,
            m: parse("m", req("m")?)?,
            b: parse("b", req("b")?)?,
            mbar: parse("mbar", req("mbar")?)?,
            n: parse_pool_size("n", req("n")?)?,
            resolution,
            richardson: parse("richardson", req("richardson")?)?,
            death_rule,
            prune: parse("prune", req("prune")?)?,
            y_max: opt_f64("y-max")?,
            grid_step: parse("grid-step", req("grid-step")?)?,
            max_age: parse("max-age", req("max-age")?)?,
            seed: get("seed").map(|v| parse("seed", v)).transpose()?,
            paths: parse("paths", req("paths")?)?,
            fan_paths: parse("fan-paths", req("fan-paths")?)?,
            alpha_bar: opt_f64("alpha-bar")?,
            mbar_list: get("mbar-list").map(|v| parse_list("mbar-list", v)).transpose()?,
            n_list: req("n-list")?
                .split(',')
                .map(|v| parse_pool_size("n-list", v))
                .collect::<Result<_, _>>()?,
            gamma_list: get("gamma-list").map(|v| parse_list("gamma-list", v)).transpose()?,
            jobs: get("jobs").map(|v| parse("jobs", v)).transpose()?,
            out_dir: PathBuf::from(req("out-dir")?),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.basis_for(self.gamma)?;
        self.life()?;
        self.base_law()?;
        self.member_law(self.mbar)?;
        self.quadrature().validate().map_err(|e| config_error(e.to_string()))?;
        if self.jobs == Some(0) {
            return Err(config_error("`jobs` must be positive"));
        }
        if self.grid_step <= 0.0 {
            return Err(config_error("`grid-step` must be positive"));
        }
        if let Some(a) = self.alpha_bar {
            if a.is_nan() || a <= 0.0 {
                return Err(config_error("`alpha-bar` must be positive"));
            }
        }
        Ok(())
    }

    pub fn basis_for(&self, gamma: f64) -> Result<EconomicBasis, CliError> {
        EconomicBasis::new(self.rate, self.alpha, gamma).map_err(|e| config_error(e.to_string()))
    }

    pub fn life(&self) -> Result<LifeCycle, CliError> {
        LifeCycle::new(self.x0, self.span).map_err(|e| config_error(e.to_string()))
    }

    pub fn base_law(&self) -> Result<GompertzLaw, CliError> {
        GompertzLaw::new(self.m, self.b).map_err(|e| config_error(e.to_string()))
    }

    pub fn member_law(&self, mbar: f64) -> Result<GompertzLaw, CliError> {
        GompertzLaw::new(mbar, self.b).map_err(|e| config_error(e.to_string()))
    }

    pub fn quadrature(&self) -> QuadratureSpec {
        QuadratureSpec {
            max_age: self.max_age,
            ..QuadratureSpec::default()
        }
    }

    /// Lattice settings for a pool of `n`; `auto` switches to exact binomial
    /// deaths once the single-death step probability would exceed its cap.
    pub fn lattice(&self, n: usize, member_law: &GompertzLaw) -> LatticeSpec {
        let mut spec = LatticeSpec::new(self.resolution.0, self.resolution.1, self.richardson).with_prune_threshold(self.prune);
        if let Some(y) = self.y_max {
            spec = spec.with_y_max(y);
        }
        let rule = match self.death_rule {
            DeathRuleChoice::Fixed(rule) => rule,
            DeathRuleChoice::Auto => {
                let dt = self.span / self.resolution.0 as f64;
                let worst = n.saturating_sub(1) as f64 * member_law.hazard(self.x0 + self.span - dt) * dt;
                if worst > 0.1 {
                    DeathRule::Binomial
                } else {
                    DeathRule::SingleDeath
                }
            }
        };
        spec.with_death_rule(rule)
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.gamma_list.clone().unwrap_or_else(|| vec![self.gamma])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn flags(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_mirror_reference_configuration() {
        let c = RunConfig::from_values(&merge(None, &BTreeMap::new()).unwrap()).unwrap();
        assert_eq!((c.x0, c.span, c.m, c.b, c.alpha, c.rate), (25.0, 40.0, 90.0, 10.0, 0.06, 0.01));
        assert_eq!(c.n, PoolSize::Finite(30));
        assert_eq!(c.resolution, (2000, 1000));
        assert_eq!(c.seed, None);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "[basis]\ngamma = 10\nrate = 0.03\n[pool]\nn = inf\nmbar-list = 65:95:10").unwrap();
        let merged = merge(Some(file.path()), &flags(&[("gamma", "5")])).unwrap();
        let c = RunConfig::from_values(&merged).unwrap();
        assert_eq!(c.gamma, 5.0);
        assert_eq!(c.rate, 0.03);
        assert_eq!(c.n, PoolSize::Infinite);
        assert_eq!(c.mbar_list, Some(vec![65.0, 75.0, 85.0, 95.0]));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let cases = [
            flags(&[("rho", "0.02")]),
            flags(&[("n", "0")]),
            flags(&[("resolution", "2000")]),
            flags(&[("death-rule", "sometimes")]),
            flags(&[("alpha", "-1")]),
            flags(&[("b", "0")]),
            flags(&[("jobs", "0")]),
        ];
        for case in cases {
            let merged = merge(None, &case).unwrap();
            assert!(matches!(RunConfig::from_values(&merged), Err(CliError::Config(_))), "{case:?}");
        }
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "colour = blue").unwrap();
        assert!(merge(Some(file.path()), &BTreeMap::new()).is_err());
        let mut dup = tempfile::NamedTempFile::new().unwrap();
        writeln!(dup, "[a]\ngamma = 2\n[b]\ngamma = 3").unwrap();
        assert!(merge(Some(dup.path()), &BTreeMap::new()).is_err());
    }

    #[test]
    fn auto_death_rule_switches_for_large_pools() {
        let c = RunConfig::from_values(&merge(None, &BTreeMap::new()).unwrap()).unwrap();
        let law = c.member_law(70.0).unwrap();
        assert_eq!(c.lattice(30, &law).death_rule, DeathRule::SingleDeath);
        assert_eq!(c.lattice(2000, &law).death_rule, DeathRule::Binomial);
    }
}

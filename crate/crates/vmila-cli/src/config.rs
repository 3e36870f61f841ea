//! Line-oriented `key = value` experiment configuration with section
//! prefixes (`problem.`, `solver.`, `sweep.`, `output.`). `#` starts a
//! comment. No external configuration language involved.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use vmila::imaging::ProblemName;
use vmila::solver::{
    InnerRule, LineSearchParams, MetricStrategy, SolverConfig, SteplengthStrategy,
};

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Fully parsed experiment description.
pub struct ExperimentConfig {
    pub problem_name: ProblemName,
    pub scale: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Original eta tokens for the sweep, kept verbatim for file naming.
    pub sweep_eta: Vec<(String, f64)>,
    pub output_dir: PathBuf,
    pub fstar_fixture: Option<PathBuf>,
}

struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(&format!("line {}", lineno + 1), "expected key = value"))?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(RawConfig { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse_field<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| err(key, format!("cannot parse '{raw}': {e}"))),
        }
    }

    fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.parse_field(key)?
            .ok_or_else(|| err(key, "missing required key"))
    }
}

fn parse_inner_rule(raw: &RawConfig) -> Result<InnerRule, ConfigError> {
    let spec: String = match raw.parse_field::<String>("solver.inner_rule")? {
        Some(s) => s,
        None => return Ok(InnerRule::Eta(1e-6)),
    };
    let (kind, args) = spec.split_once(':').unwrap_or((spec.as_str(), ""));
    match kind {
        "eta" => {
            let eta: f64 = args
                .parse()
                .map_err(|e| err("solver.inner_rule", format!("bad eta '{args}': {e}")))?;
            Ok(InnerRule::Eta(eta))
        }
        "eps_summable" => {
            let (c, p) = args
                .split_once(',')
                .ok_or_else(|| err("solver.inner_rule", "eps_summable needs 'c,p' arguments"))?;
            let c: f64 = c
                .trim()
                .parse()
                .map_err(|e| err("solver.inner_rule", format!("bad c: {e}")))?;
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|e| err("solver.inner_rule", format!("bad p: {e}")))?;
            Ok(InnerRule::EpsSummable { c, p })
        }
        "eps_adaptive" => {
            let tau: f64 = args
                .parse()
                .map_err(|e| err("solver.inner_rule", format!("bad tau '{args}': {e}")))?;
            Ok(InnerRule::EpsAdaptive { tau })
        }
        other => Err(err(
            "solver.inner_rule",
            format!("unknown rule '{other}' (eta:VAL, eps_summable:C,P, eps_adaptive:TAU)"),
        )),
    }
}

fn parse_solver(raw: &RawConfig) -> Result<SolverConfig, ConfigError> {
    let defaults = SolverConfig::default();
    let ls_defaults = LineSearchParams::default();
    let metric = match raw.get("solver.metric") {
        None => defaults.metric_strategy,
        Some("identity") => MetricStrategy::Identity,
        Some("split_gradient") => MetricStrategy::SplitGradient,
        Some(other) => {
            return Err(err(
                "solver.metric",
                format!("unknown strategy '{other}' (identity | split_gradient)"),
            ))
        }
    };
    let steplength = match raw.get("solver.steplength") {
        None => defaults.steplength,
        Some("bb") => SteplengthStrategy::AdaptiveBB,
        Some(other) => match other.strip_prefix("fixed:") {
            Some(v) => SteplengthStrategy::Fixed(
                v.parse()
                    .map_err(|e| err("solver.steplength", format!("bad fixed value '{v}': {e}")))?,
            ),
            None => {
                return Err(err(
                    "solver.steplength",
                    format!("unknown strategy '{other}' (bb | fixed:VALUE)"),
                ))
            }
        },
    };
    let config = SolverConfig {
        alpha_min: raw
            .parse_field("solver.alpha_min")?
            .unwrap_or(defaults.alpha_min),
        alpha_max: raw
            .parse_field("solver.alpha_max")?
            .unwrap_or(defaults.alpha_max),
        alpha0: raw.parse_field("solver.alpha0")?.unwrap_or(defaults.alpha0),
        metric_strategy: metric,
        steplength,
        inner_rule: parse_inner_rule(raw)?,
        mu_schedule_c: raw
            .parse_field("solver.mu_schedule_c")?
            .unwrap_or(defaults.mu_schedule_c),
        linesearch: LineSearchParams {
            delta: raw
                .parse_field("solver.delta")?
                .unwrap_or(ls_defaults.delta),
            beta: raw.parse_field("solver.beta")?.unwrap_or(ls_defaults.beta),
            gamma: raw
                .parse_field("solver.gamma")?
                .unwrap_or(ls_defaults.gamma),
            max_backtracks: raw
                .parse_field("solver.max_backtracks")?
                .unwrap_or(ls_defaults.max_backtracks),
        },
        max_outer: raw
            .parse_field("solver.max_outer")?
            .unwrap_or(defaults.max_outer),
        inner_max: raw
            .parse_field("solver.inner_max")?
            .unwrap_or(defaults.inner_max),
        target_tolerance: raw
            .parse_field("solver.target_tolerance")?
            .unwrap_or(defaults.target_tolerance),
    };
    config.validate().map_err(|e| match e {
        vmila::solver::SolverError::InvalidConfig { field, message } => {
            err(&format!("solver.{field}"), message)
        }
        other => err("solver", other.to_string()),
    })?;
    Ok(config)
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| err("config file", format!("{}: {e}", path.display())))?;
    let raw = RawConfig::parse(&text)?;

    let name_str: String = raw.require("problem.name")?;
    let problem_name = name_str
        .parse::<ProblemName>()
        .map_err(|e| err("problem.name", e.to_string()))?;
    let scale: usize = raw.parse_field("problem.scale")?.unwrap_or(1);
    if scale == 0 {
        return Err(err("problem.scale", "must be at least 1"));
    }
    let seed: u64 = raw.parse_field("problem.seed")?.unwrap_or(1);

    let solver = parse_solver(&raw)?;

    let mut sweep_eta = Vec::new();
    if let Some(list) = raw.get("sweep.eta") {
        for token in list.split(',') {
            let token = token.trim();
            if token.is_empty() {
                continue;
            }
            let eta: f64 = token
                .parse()
                .map_err(|e| err("sweep.eta", format!("bad value '{token}': {e}")))?;
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(err(
                    "sweep.eta",
                    format!("eta must lie in (0, 1], got {eta}"),
                ));
            }
            sweep_eta.push((token.to_string(), eta));
        }
    }

    let output_dir = match std::env::var_os("VMILA_OUTPUT_ROOT") {
        Some(root) => PathBuf::from(root),
        None => PathBuf::from(raw.get("output.dir").unwrap_or("out")),
    };
    let fstar_fixture = raw.get("problem.fstar_fixture").map(PathBuf::from);

    Ok(ExperimentConfig {
        problem_name,
        scale,
        seed,
        solver,
        sweep_eta,
        output_dir,
        fstar_fixture,
    })
}

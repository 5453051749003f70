//! JSON run configuration. Relative paths resolve against the directory of
//! the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use gepower_core::analysis::SweepParameter;
use gepower_core::model::validate_spec;
use gepower_core::ProblemSpec;

use crate::exit::{usage, CliResult};

pub const DEFAULT_RESOLUTION: usize = 21;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_TIE_EPSILON: f64 = 1e-9;

/// A problem given inline or as a path to a JSON file holding one.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ProblemSource {
    Inline(ProblemSpec),
    Path(PathBuf),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub resolution: Option<usize>,
    pub epsilon: Option<f64>,
    pub tie_epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub check: CheckConfig,
    pub sweep: Option<SweepConfig>,
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// A `solution.csv` written by `solve`. Without it the problem is solved
    /// inline.
    pub values: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub p0: Vec<f64>,
    pub episodes: usize,
    /// Defaults to the horizon whose discounted tail is below `1e-6`.
    pub horizon: Option<usize>,
    pub policies: Vec<String>,
    /// Truncation depth for `optimal_reachable`.
    #[serde(default = "default_truncation")]
    pub truncation: u32,
}

fn default_truncation() -> u32 {
    20
}

/// Command-line overrides of config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resolution: Option<usize>,
    pub epsilon: Option<f64>,
}

/// A loaded config with overrides applied and every path resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: ProblemSpec,
    pub resolution: usize,
    pub epsilon: f64,
    pub tie_epsilon: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub check_values: Option<PathBuf>,
    pub sweep: Option<SweepConfig>,
    pub simulate: Option<SimulateConfig>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("cannot parse {what} {}: {e}", path.display())))
}

pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Resolved> {
    let config: RunConfig = read_json(path, "config")?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let spec = match &config.problem {
        ProblemSource::Inline(spec) => spec.clone(),
        ProblemSource::Path(p) => read_json(&resolve(p), "problem file")?,
    };
    let report = validate_spec(&spec);
    if !report.is_valid() {
        return Err(usage(format!("invalid problem: {report}")));
    }

    let resolution = overrides.resolution.or(config.resolution).unwrap_or(DEFAULT_RESOLUTION);
    if resolution < 2 {
        return Err(usage(format!("resolution must be at least 2, got {resolution}")));
    }
    let epsilon = overrides.epsilon.or(config.epsilon).unwrap_or(DEFAULT_EPSILON);
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(usage(format!("epsilon must be positive, got {epsilon}")));
    }
    let tie_epsilon = config.tie_epsilon.unwrap_or(DEFAULT_TIE_EPSILON);
    if !(tie_epsilon >= 0.0 && tie_epsilon.is_finite()) {
        return Err(usage(format!("tie_epsilon must be nonnegative, got {tie_epsilon}")));
    }

    let check_values = config.check.values.as_deref().map(resolve);
    if let Some(p) = &check_values {
        if !p.is_file() {
            return Err(usage(format!("check.values {} does not exist", p.display())));
        }
    }
    if let Some(sweep) = &config.sweep {
        if SweepParameter::parse(&sweep.parameter).is_none() {
            return Err(usage(format!(
                "unknown sweep parameter {:?}; expected lambda0, lambda1, reward_penalty_ratio or reward_ratio_k2k1",
                sweep.parameter
            )));
        }
    }
    if let Some(sim) = &config.simulate {
        if sim.episodes < 2 {
            return Err(usage(format!("simulate.episodes must be at least 2, got {}", sim.episodes)));
        }
        if sim.p0.len() != spec.n_channels() || sim.p0.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(usage(format!("simulate.p0 needs {} probabilities in [0, 1]", spec.n_channels())));
        }
        if sim.horizon == Some(0) {
            return Err(usage("simulate.horizon must be positive"));
        }
    }

    Ok(Resolved {
        spec,
        resolution,
        epsilon,
        tie_epsilon,
        seed: overrides.seed.or(config.seed).unwrap_or(0),
        out: overrides
            .out
            .clone()
            .or_else(|| config.out.as_deref().map(resolve))
            .unwrap_or_else(|| PathBuf::from("out")),
        check_values,
        sweep: config.sweep,
        simulate: config.simulate,
    })
}

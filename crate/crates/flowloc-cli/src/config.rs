//! Experiment configuration: a flat TOML file with every key optional,
//! merged with command-line overrides into a fully resolved [`Config`].
//!
//! The resolved form serializes back to TOML (the run manifest) and parses
//! to an equal value, so a manifest doubles as the config file that
//! reproduces its run.

use std::fmt;
use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use flowloc::model::ScenarioConfig;

/// Estimation algorithm to dispatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Pfbp,
    Edh,
    Sirbp,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Pfbp => "pfbp",
            Algo::Edh => "edh",
            Algo::Sirbp => "sirbp",
        }
    }
}

/// Which range measurements each agent consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Only the agent's own measurements.
    Distributed,
    /// Both directions of every cooperative link.
    Centralized,
}

impl Mode {
    pub fn processing(self) -> flowloc::model::ProcessingMode {
        match self {
            Mode::Distributed => flowloc::model::ProcessingMode::Distributed,
            Mode::Centralized => flowloc::model::ProcessingMode::Centralized,
        }
    }
}

/// Fully resolved experiment configuration. Every field has a default, so
/// an empty config file is valid.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub algo: Algo,
    pub runs: usize,
    pub seed: u64,
    pub n_agents: usize,
    pub n_anchors: usize,
    pub volume: [f64; 3],
    /// Communication range in meters; infinite for a fully connected
    /// network.
    pub r_max: f64,
    pub sigma: f64,
    pub sigma_a: f64,
    pub dt: f64,
    /// Time steps after the prior epoch; file key `K`.
    pub steps: usize,
    pub prior_sigma_p: f64,
    pub prior_sigma_a_factor: f64,
    pub particles: usize,
    pub lambda_steps: usize,
    pub lambda_ratio: f64,
    pub mp_iterations: usize,
    pub mode: Mode,
    pub regularize: bool,
    pub sigma_r_vel: f64,
    pub sigma_r_acc: f64,
    pub alpha_max: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            algo: Algo::Pfbp,
            runs: 200,
            seed: 0,
            n_agents: 5,
            n_anchors: 9,
            volume: [20.0, 20.0, 20.0],
            r_max: 18.0,
            sigma: 0.1,
            sigma_a: 0.15,
            dt: 0.1,
            steps: 40,
            prior_sigma_p: 20.0,
            prior_sigma_a_factor: 10.0,
            particles: 200,
            lambda_steps: 20,
            lambda_ratio: 1.2,
            mp_iterations: 2,
            mode: Mode::Distributed,
            regularize: false,
            sigma_r_vel: 0.15,
            sigma_r_acc: 0.15,
            alpha_max: 0.0,
        }
    }
}

/// Config parse or validation failure. Validation errors name the
/// offending key.
#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Parse(String),
    Invalid { key: &'static str, reason: &'static str },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "{e}"),
            ConfigError::Parse(msg) => write!(f, "{msg}"),
            ConfigError::Invalid { key, reason } => write!(f, "key `{key}`: {reason}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// The communication range accepts a plain float or the string `"inf"`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RangeKey {
    Radius(f64),
    Named(String),
}

/// On-disk schema: every key optional, unknown keys rejected.
#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    algo: Option<Algo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_agents: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_anchors: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    volume: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_max: Option<RangeKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prior_sigma_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prior_sigma_a_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mp_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    regularize: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_r_vel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_r_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_max: Option<f64>,
}

/// Reads, defaults, and validates a config file.
pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
    parse_config(&text)
}

/// [`load_config`] on in-memory text.
pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let d = Config::default();
    let r_max = match file.r_max {
        None => d.r_max,
        Some(RangeKey::Radius(r)) => r,
        Some(RangeKey::Named(word)) if word == "inf" => f64::INFINITY,
        Some(RangeKey::Named(_)) => {
            return Err(ConfigError::Invalid {
                key: "r_max",
                reason: "must be a positive number or \"inf\"",
            })
        }
    };
    let cfg = Config {
        algo: file.algo.unwrap_or(d.algo),
        runs: file.runs.unwrap_or(d.runs),
        seed: file.seed.unwrap_or(d.seed),
        n_agents: file.n_agents.unwrap_or(d.n_agents),
        n_anchors: file.n_anchors.unwrap_or(d.n_anchors),
        volume: file.volume.unwrap_or(d.volume),
        r_max,
        sigma: file.sigma.unwrap_or(d.sigma),
        sigma_a: file.sigma_a.unwrap_or(d.sigma_a),
        dt: file.dt.unwrap_or(d.dt),
        steps: file.steps.unwrap_or(d.steps),
        prior_sigma_p: file.prior_sigma_p.unwrap_or(d.prior_sigma_p),
        prior_sigma_a_factor: file.prior_sigma_a_factor.unwrap_or(d.prior_sigma_a_factor),
        particles: file.particles.unwrap_or(d.particles),
        lambda_steps: file.lambda_steps.unwrap_or(d.lambda_steps),
        lambda_ratio: file.lambda_ratio.unwrap_or(d.lambda_ratio),
        mp_iterations: file.mp_iterations.unwrap_or(d.mp_iterations),
        mode: file.mode.unwrap_or(d.mode),
        regularize: file.regularize.unwrap_or(d.regularize),
        sigma_r_vel: file.sigma_r_vel.unwrap_or(d.sigma_r_vel),
        sigma_r_acc: file.sigma_r_acc.unwrap_or(d.sigma_r_acc),
        alpha_max: file.alpha_max.unwrap_or(d.alpha_max),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn positive(key: &'static str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid { key, reason: "must be positive and finite" })
    }
}

fn nonnegative(key: &'static str, value: f64) -> Result<(), ConfigError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid { key, reason: "must be nonnegative and finite" })
    }
}

fn at_least_one(key: &'static str, value: usize) -> Result<(), ConfigError> {
    if value >= 1 {
        Ok(())
    } else {
        Err(ConfigError::Invalid { key, reason: "must be at least 1" })
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        at_least_one("runs", self.runs)?;
        at_least_one("n_agents", self.n_agents)?;
        if self.n_anchors != 9 {
            return Err(ConfigError::Invalid {
                key: "n_anchors",
                reason: "must be 9 (eight corners plus the center)",
            });
        }
        for v in self.volume {
            positive("volume", v)?;
        }
        if !(self.r_max > 0.0) {
            return Err(ConfigError::Invalid { key: "r_max", reason: "must be positive" });
        }
        positive("sigma", self.sigma)?;
        positive("sigma_a", self.sigma_a)?;
        positive("dt", self.dt)?;
        at_least_one("K", self.steps)?;
        positive("prior_sigma_p", self.prior_sigma_p)?;
        positive("prior_sigma_a_factor", self.prior_sigma_a_factor)?;
        at_least_one("particles", self.particles)?;
        at_least_one("lambda_steps", self.lambda_steps)?;
        positive("lambda_ratio", self.lambda_ratio)?;
        at_least_one("mp_iterations", self.mp_iterations)?;
        nonnegative("sigma_r_vel", self.sigma_r_vel)?;
        nonnegative("sigma_r_acc", self.sigma_r_acc)?;
        nonnegative("alpha_max", self.alpha_max)?;
        Ok(())
    }

    /// The scenario portion in the library's form.
    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            n_agents: self.n_agents,
            n_anchors: self.n_anchors,
            volume: self.volume,
            r_max: self.r_max,
            sigma: self.sigma,
            sigma_a: self.sigma_a,
            dt: self.dt,
            steps: self.steps,
            seed: self.seed,
            prior_sigma_p: self.prior_sigma_p,
            prior_sigma_a_factor: self.prior_sigma_a_factor,
        }
    }

    /// The manifest: this config as TOML, parseable by [`parse_config`]
    /// into an equal value.
    pub fn to_toml(&self) -> String {
        let file = ConfigFile {
            algo: Some(self.algo),
            runs: Some(self.runs),
            seed: Some(self.seed),
            n_agents: Some(self.n_agents),
            n_anchors: Some(self.n_anchors),
            volume: Some(self.volume),
            r_max: Some(if self.r_max.is_finite() {
                RangeKey::Radius(self.r_max)
            } else {
                RangeKey::Named("inf".to_owned())
            }),
            sigma: Some(self.sigma),
            sigma_a: Some(self.sigma_a),
            dt: Some(self.dt),
            steps: Some(self.steps),
            prior_sigma_p: Some(self.prior_sigma_p),
            prior_sigma_a_factor: Some(self.prior_sigma_a_factor),
            particles: Some(self.particles),
            lambda_steps: Some(self.lambda_steps),
            lambda_ratio: Some(self.lambda_ratio),
            mp_iterations: Some(self.mp_iterations),
            mode: Some(self.mode),
            regularize: Some(self.regularize),
            sigma_r_vel: Some(self.sigma_r_vel),
            sigma_r_acc: Some(self.sigma_r_acc),
            alpha_max: Some(self.alpha_max),
        };
        toml::to_string(&file).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_all_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn the_string_inf_means_fully_connected() {
        let cfg = parse_config("r_max = \"inf\"").unwrap();
        assert!(cfg.r_max.is_infinite());
        let bare = parse_config("r_max = inf").unwrap();
        assert!(bare.r_max.is_infinite());
    }

    #[test]
    fn zero_particles_is_rejected_by_key() {
        let err = parse_config("particles = 0").unwrap_err();
        assert!(err.to_string().contains("particles"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config("particels = 200").is_err());
    }

    #[test]
    fn manifest_round_trips_to_an_equal_config() {
        let cfg = Config {
            algo: Algo::Edh,
            runs: 17,
            seed: 0xfeed,
            r_max: f64::INFINITY,
            lambda_ratio: 1.17,
            sigma: 0.07,
            regularize: true,
            mode: Mode::Centralized,
            ..Config::default()
        };
        let parsed = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn steps_use_the_key_k() {
        let cfg = parse_config("K = 12").unwrap();
        assert_eq!(cfg.steps, 12);
        assert!(parse_config("steps = 12").is_err());
    }
}

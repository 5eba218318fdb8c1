//! Scenario and experiment configuration.
//!
//! Config files are flat `key = value` text (TOML syntax, no tables). Every key
//! is optional; missing keys take the defaults below. Unknown keys are an error.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::agent::AgentConfig;
use crate::channel::ChannelModelConfig;
use crate::error::{Error, Result};
use crate::esn::NetworkConfig;

/// Wireless environment parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub num_pus: usize,
    pub num_sus: usize,
    pub area_m: f64,
    pub link_distance_min_m: f64,
    pub link_distance_max_m: f64,
    pub pu_power_mw: f64,
    pub su_power_mw: f64,
    pub noise_dbm: f64,
    pub bandwidth_hz: f64,
    /// Slots per sensing-and-transmission period.
    pub period_slots: usize,
    /// Leading slots of each period spent sensing.
    pub sense_slots: usize,
    pub slot_seconds: f64,
    /// Activity toggles every `multiple` periods, one entry per PU (cycled).
    pub pu_period_multiples: Vec<usize>,
    pub pu_phases: Vec<usize>,
    /// Sensing-only periods used to freeze the energy feature normalization.
    pub calibration_periods: usize,
    /// A PU broadcasts a warning when its average efficiency falls below this.
    pub warning_threshold: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_pus: 4,
            num_sus: 6,
            area_m: 2000.0,
            link_distance_min_m: 400.0,
            link_distance_max_m: 450.0,
            pu_power_mw: 500.0,
            su_power_mw: 500.0,
            noise_dbm: -157.3,
            bandwidth_hz: 5e6,
            period_slots: 10,
            sense_slots: 2,
            slot_seconds: 1e-3,
            pu_period_multiples: vec![3, 4],
            pu_phases: vec![0],
            calibration_periods: 300,
            warning_threshold: 1.5,
        }
    }
}

impl ScenarioConfig {
    pub fn noise_mw(&self) -> f64 {
        dbm_to_mw(self.noise_dbm)
    }

    pub fn transmit_slots(&self) -> usize {
        self.period_slots - self.sense_slots
    }

    pub fn pu_multiple(&self, pu: usize) -> usize {
        self.pu_period_multiples[pu % self.pu_period_multiples.len()]
    }

    pub fn pu_phase(&self, pu: usize) -> usize {
        self.pu_phases[pu % self.pu_phases.len()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_pus == 0 {
            return Err(Error::config("num_pus", "need at least one PU"));
        }
        if self.num_sus == 0 {
            return Err(Error::config("num_sus", "need at least one SU"));
        }
        if !(self.area_m > 0.0) {
            return Err(Error::config("area_m", "must be positive"));
        }
        if !(self.link_distance_min_m > 0.0) || self.link_distance_min_m > self.link_distance_max_m {
            return Err(Error::config(
                "link_distance_min_m",
                "need 0 < link_distance_min_m <= link_distance_max_m",
            ));
        }
        for (key, v) in [("pu_power_mw", self.pu_power_mw), ("su_power_mw", self.su_power_mw)] {
            if !(v > 0.0) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !self.noise_dbm.is_finite() {
            return Err(Error::config("noise_dbm", "must be finite"));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::config("bandwidth_hz", "must be positive"));
        }
        if self.sense_slots == 0 {
            return Err(Error::config("sense_Ts", "must be at least 1"));
        }
        if self.sense_slots >= self.period_slots {
            return Err(Error::config("sense_Ts", "must be smaller than period_T"));
        }
        if self.pu_period_multiples.is_empty() || self.pu_period_multiples.contains(&0) {
            return Err(Error::config("pu_period_multiples", "entries must be >= 1"));
        }
        if self.pu_phases.is_empty() {
            return Err(Error::config("pu_phases", "must not be empty"));
        }
        if self.calibration_periods < 2 {
            return Err(Error::config("calibration_periods", "must be at least 2"));
        }
        Ok(())
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Which controller drives an SU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// DEQN with one reservoir.
    Deqn1,
    /// DEQN with two stacked reservoirs.
    Deqn2,
    Random,
    Threshold,
    /// Readout on the raw state only, no reservoir.
    Dqn0,
}

impl AgentKind {
    pub fn reservoir_layers(self) -> Option<usize> {
        match self {
            AgentKind::Deqn1 => Some(1),
            AgentKind::Deqn2 => Some(2),
            AgentKind::Dqn0 => Some(0),
            AgentKind::Random | AgentKind::Threshold => None,
        }
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deqn1" => Ok(AgentKind::Deqn1),
            "deqn2" => Ok(AgentKind::Deqn2),
            "random" => Ok(AgentKind::Random),
            "threshold" => Ok(AgentKind::Threshold),
            "dqn0" => Ok(AgentKind::Dqn0),
            other => Err(format!(
                "unknown agent kind `{other}` (expected deqn1|deqn2|random|threshold|dqn0)"
            )),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AgentKind::Deqn1 => "deqn1",
            AgentKind::Deqn2 => "deqn2",
            AgentKind::Random => "random",
            AgentKind::Threshold => "threshold",
            AgentKind::Dqn0 => "dqn0",
        };
        f.write_str(s)
    }
}

/// Everything needed to run one experiment end to end.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub channel: ChannelModelConfig,
    pub agent: AgentConfig,
    pub network: NetworkConfig,
    /// One entry per SU, cycled if shorter.
    pub agent_kinds: Vec<AgentKind>,
    /// Energy-feature threshold for the `threshold` policy.
    pub threshold_feature: f64,
    pub total_samples: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub write_trace: bool,
    pub parallel_training: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            channel: ChannelModelConfig::default(),
            agent: AgentConfig::default(),
            network: NetworkConfig::default(),
            agent_kinds: vec![AgentKind::Deqn2],
            threshold_feature: 0.0,
            total_samples: 60_000,
            seed: 1,
            out_dir: None,
            write_trace: false,
            parallel_training: true,
        }
    }
}

impl ExperimentConfig {
    pub fn agent_kind(&self, su: usize) -> AgentKind {
        self.agent_kinds[su % self.agent_kinds.len()]
    }

    pub fn set_all_agents(&mut self, kind: AgentKind) {
        self.agent_kinds = vec![kind];
    }

    pub fn num_rounds(&self) -> usize {
        self.total_samples / self.agent.buffer_size
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.channel.validate()?;
        self.agent.validate()?;
        self.network.validate()?;
        if self.agent_kinds.is_empty() {
            return Err(Error::config("agent_kind", "must name at least one kind"));
        }
        if self.total_samples == 0 || !self.total_samples.is_multiple_of(self.agent.buffer_size) {
            return Err(Error::config(
                "total_samples",
                format!(
                    "must be a positive multiple of buffer_Z ({})",
                    self.agent.buffer_size
                ),
            ));
        }
        if self.threshold_feature.is_nan() {
            return Err(Error::config("threshold_feature", "must not be NaN"));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_str_kv(&text)
    }

    /// Parses flat `key = value` text on top of the defaults.
    pub fn from_str_kv(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        let mut cfg = Self::default();
        for (key, value) in &table {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        let s = &mut self.scenario;
        match key {
            "num_pus" => s.num_pus = as_usize(key, v)?,
            "num_sus" => s.num_sus = as_usize(key, v)?,
            "area_m" => s.area_m = as_f64(key, v)?,
            "link_distance_min_m" => s.link_distance_min_m = as_f64(key, v)?,
            "link_distance_max_m" => s.link_distance_max_m = as_f64(key, v)?,
            "pu_power_mw" => s.pu_power_mw = as_f64(key, v)?,
            "su_power_mw" => s.su_power_mw = as_f64(key, v)?,
            "noise_dbm" => s.noise_dbm = as_f64(key, v)?,
            "bandwidth_hz" => s.bandwidth_hz = as_f64(key, v)?,
            "period_T" => s.period_slots = as_usize(key, v)?,
            "sense_Ts" => s.sense_slots = as_usize(key, v)?,
            "slot_s" => s.slot_seconds = as_f64(key, v)?,
            "pu_period_multiples" => s.pu_period_multiples = as_usize_list(key, v)?,
            "pu_phases" => s.pu_phases = as_usize_list(key, v)?,
            "calibration_periods" => s.calibration_periods = as_usize(key, v)?,
            "warning_threshold" => s.warning_threshold = as_f64(key, v)?,

            "path_loss_exponent" => self.channel.path_loss_exponent = as_f64(key, v)?,
            "reference_loss_db" => self.channel.reference_loss_db = as_f64(key, v)?,
            "shadowing_sigma_db" => self.channel.shadowing_sigma_db = as_f64(key, v)?,
            "fading_correlation" => self.channel.fading_correlation = as_f64(key, v)?,
            "rayleigh_fading" => self.channel.rayleigh_fading = as_bool(key, v)?,

            "gamma" => self.agent.gamma = as_f64(key, v)?,
            "epsilon0" => self.agent.epsilon0 = as_f64(key, v)?,
            "epsilon_decay_per_round" => self.agent.epsilon_decay_per_round = as_f64(key, v)?,
            "lr_initial" => self.agent.lr_initial = as_f64(key, v)?,
            "lr_reduced" => self.agent.lr_reduced = as_f64(key, v)?,
            "lr_switch_epsilon" => self.agent.lr_switch_epsilon = as_f64(key, v)?,
            "batch_size" => self.agent.batch_size = as_usize(key, v)?,
            "iterations_I" => self.agent.iterations = as_usize(key, v)?,
            "buffer_Z" => self.agent.buffer_size = as_usize(key, v)?,

            "neurons" => self.network.neurons = as_usize(key, v)?,
            "leak_beta" => self.network.leak = as_f64(key, v)?,
            "spectral_radius" => self.network.spectral_radius = as_f64(key, v)?,
            "input_scale" => self.network.input_scale = as_f64(key, v)?,
            "reservoir_density" => self.network.density = as_f64(key, v)?,

            "agent_kind" => {
                let names: Vec<String> = match v {
                    toml::Value::Array(items) => items
                        .iter()
                        .map(|i| as_str(key, i).map(str::to_string))
                        .collect::<Result<_>>()?,
                    other => as_str(key, other)?
                        .split(',')
                        .map(|p| p.trim().to_string())
                        .collect(),
                };
                self.agent_kinds = names
                    .iter()
                    .map(|n| n.parse::<AgentKind>().map_err(|e| Error::config(key, e)))
                    .collect::<Result<_>>()?;
            }
            "threshold_feature" => self.threshold_feature = as_f64(key, v)?,
            "total_samples" => self.total_samples = as_usize(key, v)?,
            "seed" => {
                self.seed = v
                    .as_integer()
                    .filter(|i| *i >= 0)
                    .ok_or_else(|| Error::config(key, "expected a non-negative integer"))?
                    as u64
            }
            "out_dir" => self.out_dir = Some(PathBuf::from(as_str(key, v)?)),
            "write_trace" => self.write_trace = as_bool(key, v)?,
            "parallel_training" => self.parallel_training = as_bool(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::config(key, "expected a number")),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    v.as_integer()
        .filter(|i| *i >= 0)
        .map(|i| i as usize)
        .ok_or_else(|| Error::config(key, "expected a non-negative integer"))
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| Error::config(key, "expected true or false"))
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::config(key, "expected a string"))
}

fn as_usize_list(key: &str, v: &toml::Value) -> Result<Vec<usize>> {
    match v {
        toml::Value::Array(items) => items.iter().map(|i| as_usize(key, i)).collect(),
        other => Ok(vec![as_usize(key, other)?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
        assert_eq!(ExperimentConfig::default().num_rounds(), 200);
    }

    #[test]
    fn parses_flat_keys() {
        let cfg = ExperimentConfig::from_str_kv(
            "num_pus = 2\nnum_sus = 3\nnoise_dbm = -150\nagent_kind = \"random, deqn1\"\nseed = 9\npu_period_multiples = [2, 5]\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario.num_pus, 2);
        assert_eq!(cfg.scenario.num_sus, 3);
        assert_eq!(cfg.scenario.noise_dbm, -150.0);
        assert_eq!(cfg.agent_kinds, vec![AgentKind::Random, AgentKind::Deqn1]);
        assert_eq!(cfg.agent_kind(2), AgentKind::Random);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scenario.pu_multiple(3), 5);
    }

    #[test]
    fn errors_name_the_key() {
        let err = ExperimentConfig::from_str_kv("bogus_key = 1").unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
        let err = ExperimentConfig::from_str_kv("sense_Ts = 10").unwrap_err();
        assert!(err.to_string().contains("sense_Ts"));
        let err = ExperimentConfig::from_str_kv("total_samples = 301").unwrap_err();
        assert!(err.to_string().contains("total_samples"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn noise_conversion() {
        let mw = dbm_to_mw(-157.3);
        assert!((linear_to_db(mw) + 157.3).abs() < 1e-9);
    }
}

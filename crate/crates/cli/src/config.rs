//! Run configuration files.
//!
//! A flat TOML document; every key is optional and unknown keys are
//! rejected. See `docs/config.md` for the key list.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scabd::model::ProcessId;
use scabd::protocol::Mutation;
use scabd::sim::{CrashSpec, DelayModel, Schedule, SimConfig, Workload};
use serde::Deserialize;

use crate::format::parse_protocol;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] scabd::sim::SimError),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub n: Option<usize>,
    pub protocol: Option<String>,
    pub mutation: Option<String>,
    pub seed: Option<u64>,
    pub max_ticks: Option<u64>,
    pub mid_op_crash: Option<bool>,
    pub delay: Option<String>,
    pub delay_min: Option<u64>,
    pub delay_max: Option<u64>,
    pub delay_default: Option<u64>,
    pub link_delays: Option<Vec<[u64; 3]>>,
    pub crashes: Option<Vec<[u64; 2]>>,
    pub ops_per_process: Option<usize>,
    pub read_fraction: Option<f64>,
    pub register_count: Option<usize>,
    pub think_time: Option<u64>,
    pub start_ticks: Option<Vec<u64>>,
}

pub fn parse_mutation(s: &str) -> Option<Mutation> {
    [Mutation::None, Mutation::SmallQuorum, Mutation::NoWriteback]
        .into_iter()
        .find(|m| m.as_str() == s)
}

fn pid(v: u64) -> Result<ProcessId, ConfigError> {
    u32::try_from(v)
        .ok()
        .filter(|&p| p > 0)
        .map(ProcessId)
        .ok_or_else(|| ConfigError::Invalid(format!("bad process id {v}")))
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Builds and validates a simulator configuration. `seed` overrides the
    /// file's seed.
    pub fn to_sim_config(&self, seed: Option<u64>) -> Result<SimConfig, ConfigError> {
        let base = SimConfig::default();
        let n = self.n.unwrap_or(base.n);
        let seed = seed.or(self.seed).unwrap_or(base.seed);
        let protocol = match &self.protocol {
            Some(p) => parse_protocol(p)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown protocol {p:?}")))?,
            None => base.protocol,
        };
        let mutation = match &self.mutation {
            Some(m) => parse_mutation(m)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown mutation {m:?}")))?,
            None => Mutation::None,
        };
        let kind = self.delay.as_deref().unwrap_or("uniform");
        let uniform_keys = self.delay_min.is_some() || self.delay_max.is_some();
        let link_keys = self.delay_default.is_some() || self.link_delays.is_some();
        let delay = match kind {
            "uniform" if !link_keys => DelayModel::Uniform {
                min: self.delay_min.unwrap_or(1),
                max: self.delay_max.unwrap_or(10),
            },
            "per_link" if !uniform_keys => {
                let mut links = BTreeMap::new();
                for &[from, to, d] in self.link_delays.iter().flatten() {
                    links.insert((pid(from)?, pid(to)?), d);
                }
                DelayModel::PerLink {
                    default: self.delay_default.unwrap_or(1),
                    links,
                }
            }
            "adversarial" if !uniform_keys && !link_keys => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xad5e);
                DelayModel::Scripted(Schedule::adversarial(n, &mut rng))
            }
            "uniform" | "per_link" | "adversarial" => {
                return Err(ConfigError::Invalid(format!(
                    "delay keys do not match delay = {kind:?}"
                )))
            }
            other => return Err(ConfigError::Invalid(format!("unknown delay {other:?}"))),
        };
        let crashes = self
            .crashes
            .iter()
            .flatten()
            .map(|&[p, at]| Ok(CrashSpec { proc: pid(p)?, at }))
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let w = Workload::default();
        let cfg = SimConfig {
            n,
            protocol,
            mutation,
            crashes,
            seed,
            delay,
            workload: Workload {
                ops_per_process: self.ops_per_process.unwrap_or(w.ops_per_process),
                read_fraction: self.read_fraction.unwrap_or(w.read_fraction),
                register_count: self.register_count.unwrap_or(w.register_count),
                think_time: self.think_time.unwrap_or(w.think_time),
            },
            max_ticks: self.max_ticks.unwrap_or(base.max_ticks),
            mid_op_crash: self.mid_op_crash.unwrap_or(false),
            scripts: None,
            start_ticks: self.start_ticks.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

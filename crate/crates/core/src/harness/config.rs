use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dqn::DqnConfig;
use crate::error::{Error, Result};
use crate::marl::{MarlConfig, RewardSign, Scheme, DEFAULT_SELF_WEIGHT};
use crate::max_pressure::DEFAULT_SATURATION_FLOW;
use crate::scenario::{DemandSchedule, ScenarioConfig};
use crate::signal::SignalTiming;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 10 episodes of 4000 s; testing schedule compressed five-fold.
    #[default]
    Desk,
    /// 50 episodes of 20000 s; full-length testing schedule.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile {s:?}"))),
        }
    }
}

/// Everything a training or testing run needs. Loaded from TOML; keys not
/// given fall back to the defaults of the selected profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub profile: Profile,
    /// Scenario TOML; the built-in 4x4 grid when absent.
    pub scenario_file: Option<PathBuf>,
    /// Used verbatim when set; otherwise the scenario's training schedule
    /// stretched or shrunk to the episode length.
    pub training_schedule: Option<DemandSchedule>,
    /// Used verbatim when set; otherwise the scenario's testing schedule
    /// compressed by `test_compression`.
    pub testing_schedule: Option<DemandSchedule>,
    pub test_compression: u64,
    pub episode_length_s: u64,
    pub warmup_s: u64,
    pub control_step_s: u32,
    pub min_green_s: u32,
    pub max_green_s: u32,
    pub transition_s: u32,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub self_weight: f64,
    pub reward_sign: RewardSign,
    pub reward_scale: f64,
    pub train_every: u64,
    pub saturation_flow: f64,
    /// Write per-step agent states and actions during testing.
    pub log_state_actions: bool,
    pub dqn: DqnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (episodes, episode_length_s, test_compression) = match profile {
            Profile::Desk => (10, 4000, 5),
            Profile::Paper => (50, 20000, 1),
        };
        Self {
            scheme: Scheme::S2r2l,
            profile,
            scenario_file: None,
            training_schedule: None,
            testing_schedule: None,
            test_compression,
            episode_length_s,
            warmup_s: 300,
            control_step_s: 5,
            min_green_s: 10,
            max_green_s: 60,
            transition_s: 3,
            episodes,
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs"),
            self_weight: DEFAULT_SELF_WEIGHT,
            reward_sign: RewardSign::Negated,
            reward_scale: 1.0,
            train_every: 1,
            saturation_flow: DEFAULT_SATURATION_FLOW,
            log_state_actions: false,
            dqn: DqnConfig::default(),
        }
    }

    /// Parses TOML on top of the defaults of the profile it names.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text)?;
        let profile = match user.get("profile") {
            Some(v) => v.as_str().ok_or_else(|| Error::Validation(vec!["profile".into()]))?.parse()?,
            None => Profile::Desk,
        };
        let mut base = toml::Table::try_from(Self::for_profile(profile))?;
        for (k, v) in user {
            match (base.get_mut(&k), v) {
                (Some(toml::Value::Table(b)), toml::Value::Table(u)) => b.extend(u),
                (_, v) => {
                    base.insert(k, v);
                }
            }
        }
        let cfg: Self = toml::Value::Table(base).try_into()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn timing(&self) -> SignalTiming {
        SignalTiming {
            min_green_s: self.min_green_s,
            max_green_s: self.max_green_s,
            transition_s: self.transition_s,
            control_step_s: self.control_step_s,
        }
    }

    pub fn marl(&self) -> MarlConfig {
        MarlConfig {
            self_weight: self.self_weight,
            reward_sign: self.reward_sign,
            reward_scale: self.reward_scale,
            train_every: self.train_every,
            dqn: self.dqn.clone(),
        }
    }

    pub fn scenario(&self) -> Result<ScenarioConfig> {
        match &self.scenario_file {
            Some(p) => ScenarioConfig::from_toml(&std::fs::read_to_string(p)?),
            None => Ok(ScenarioConfig::default()),
        }
    }

    pub fn training_schedule(&self, scenario: &ScenarioConfig) -> DemandSchedule {
        self.training_schedule
            .clone()
            .unwrap_or_else(|| scenario.training_schedule.fit_to(self.episode_length_s))
    }

    pub fn testing_schedule(&self, scenario: &ScenarioConfig) -> DemandSchedule {
        self.testing_schedule
            .clone()
            .unwrap_or_else(|| scenario.testing_schedule.compressed(self.test_compression))
    }

    /// Names of every offending key; empty when the config is usable.
    pub fn invalid_keys(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, key: &str| {
            if !ok {
                bad.push(key.to_string());
            }
        };
        check(self.episodes > 0, "episodes");
        check(self.episode_length_s > 0, "episode_length_s");
        check(self.warmup_s < self.episode_length_s, "warmup_s");
        check(self.control_step_s > 0 && self.transition_s < self.control_step_s, "control_step_s");
        check(self.min_green_s <= self.max_green_s, "max_green_s");
        check(!self.seeds.is_empty(), "seeds");
        check(self.test_compression > 0, "test_compression");
        check(self.saturation_flow > 0.0 && self.saturation_flow.is_finite(), "saturation_flow");
        check(self.self_weight >= 0.0 && self.self_weight.is_finite(), "self_weight");
        check(self.reward_scale > 0.0 && self.reward_scale.is_finite(), "reward_scale");
        check(self.train_every > 0, "train_every");
        if let Some(s) = &self.training_schedule {
            check(s.validate(self.episode_length_s).is_ok(), "training_schedule");
        }
        if let Some(s) = &self.testing_schedule {
            check(s.validate(s.horizon_s()).is_ok() && s.horizon_s() > self.warmup_s, "testing_schedule");
        }
        bad.extend(self.dqn.invalid_keys());
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.invalid_keys();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
        RunConfig::for_profile(Profile::Paper).validate().unwrap();
        let d = RunConfig::default().dqn;
        assert_eq!((d.batch_size, d.n_step, d.target_sync, d.memory_capacity), (64, 16, 100, 100_000));
        assert_eq!((d.gamma, d.learning_rate, d.alpha_per), (0.99, 1e-4, 1.0));
    }

    #[test]
    fn toml_overrides_profile_defaults() {
        let cfg = RunConfig::from_toml("profile = \"paper\"\nscheme = \"idql\"\n[dqn]\nbatch_size = 32\n").unwrap();
        assert_eq!(cfg.episodes, 50);
        assert_eq!(cfg.episode_length_s, 20000);
        assert_eq!(cfg.scheme, Scheme::Idql);
        assert_eq!(cfg.dqn.batch_size, 32);
        assert_eq!(cfg.dqn.n_step, 16);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("episods = 3").is_err());
        assert!(RunConfig::from_toml("[dqn]\nbatchsize = 3").is_err());
    }

    #[test]
    fn validation_lists_keys() {
        let cfg = RunConfig { episodes: 0, max_green_s: 5, seeds: vec![], ..RunConfig::default() };
        match cfg.validate() {
            Err(Error::Validation(keys)) => assert_eq!(keys, vec!["episodes", "max_green_s", "seeds"]),
            other => panic!("{other:?}"),
        }
        let cfg = RunConfig { warmup_s: 4000, ..RunConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Validation(k)) if k == vec!["warmup_s"]));
    }

    #[test]
    fn desk_schedules() {
        let cfg = RunConfig::default();
        let sc = ScenarioConfig::default();
        assert_eq!(cfg.training_schedule(&sc).horizon_s(), 4000);
        let test = cfg.testing_schedule(&sc);
        assert_eq!(test.boundaries(), vec![(0, 1000), (1000, 2000), (2000, 3000), (3000, 4000)]);
        assert_eq!(test.segments[2].probability, 0.25);
    }
}

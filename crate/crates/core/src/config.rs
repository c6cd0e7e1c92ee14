//! Simulation parameters and their key-value text format.
//!
//! A config file holds one `key = value` pair per line. Blank lines and lines
//! starting with `#` are ignored. Keys are the field names of [`SimConfig`];
//! unknown keys and malformed values are reported with their line number.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How vision range is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisionMetric {
    Manhattan,
    Chebyshev,
}

impl VisionMetric {
    pub fn distance(self, dx: i32, dy: i32) -> u32 {
        match self {
            VisionMetric::Manhattan => dx.unsigned_abs() + dy.unsigned_abs(),
            VisionMetric::Chebyshev => dx.unsigned_abs().max(dy.unsigned_abs()),
        }
    }
}

impl FromStr for VisionMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "manhattan" => Ok(VisionMetric::Manhattan),
            "chebyshev" => Ok(VisionMetric::Chebyshev),
            other => Err(format!("unknown vision metric `{other}`")),
        }
    }
}

impl std::fmt::Display for VisionMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VisionMetric::Manhattan => "manhattan",
            VisionMetric::Chebyshev => "chebyshev",
        })
    }
}

/// Every tunable of one simulation.
///
/// Field order is part of the replay format: configs are embedded in replay
/// headers and world snapshots, which are hashed byte-for-byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: u64,
    pub agents_per_team: u32,
    pub teams: Vec<String>,
    pub width: i32,
    pub height: i32,
    pub vision_range: u32,
    pub vision_metric: VisionMetric,
    pub max_blocks: u32,
    pub block_types: u32,
    pub event_probability: f64,
    pub event_radius: u32,
    pub event_regen_min: u32,
    pub event_regen_max: u32,
    pub clear_charge: u32,
    pub disable_duration: u64,
    pub deadline_ms: u64,
    pub connect_timeout_ms: u64,
    pub seed: u64,
    pub obstacle_density: f64,
    pub goal_zones: u32,
    pub goal_radius: u32,
    pub dispensers_per_type: u32,
    pub max_component_size: u32,
    pub task_cap: u32,
    pub task_probability: f64,
    pub task_duration_min: u64,
    pub task_duration_max: u64,
    pub reward_factor: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            agents_per_team: 10,
            teams: vec!["A".to_string(), "B".to_string()],
            width: 40,
            height: 40,
            vision_range: 5,
            vision_metric: VisionMetric::Manhattan,
            max_blocks: 3,
            block_types: 3,
            event_probability: 0.04,
            event_radius: 3,
            event_regen_min: 5,
            event_regen_max: 10,
            clear_charge: 3,
            disable_duration: 4,
            deadline_ms: 4000,
            connect_timeout_ms: 30_000,
            seed: 0,
            obstacle_density: 0.1,
            goal_zones: 2,
            goal_radius: 2,
            dispensers_per_type: 2,
            max_component_size: 10,
            task_cap: 2,
            task_probability: 0.05,
            task_duration_min: 100,
            task_duration_max: 200,
            reward_factor: 10,
        }
    }
}

impl SimConfig {
    /// One of the three tournament parameter sets (1-based).
    ///
    /// 1 is the baseline, 2 allows tasks with up to five blocks, 3 doubles the
    /// clear event chance.
    pub fn parameter_set(index: u8) -> Option<SimConfig> {
        let base = SimConfig::default();
        match index {
            1 => Some(base),
            2 => Some(SimConfig {
                max_blocks: 5,
                ..base
            }),
            3 => Some(SimConfig {
                event_probability: 0.08,
                ..base
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.steps < 1 {
            return fail("steps must be at least 1");
        }
        if self.deadline_ms == 0 {
            return fail("deadline_ms must be positive");
        }
        if self.width < 10 || self.height < 10 {
            return fail("grid must be at least 10x10");
        }
        if self.teams.len() != 2 {
            return fail("exactly two teams are required");
        }
        if self.teams[0] == self.teams[1] || self.teams.iter().any(|t| t.is_empty()) {
            return fail("team names must be distinct and non-empty");
        }
        if self
            .teams
            .iter()
            .any(|t| !t.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'))
        {
            return fail("team names may only contain letters, digits, '_' and '-'");
        }
        if self.agents_per_team < 1 {
            return fail("agents_per_team must be at least 1");
        }
        for (name, p) in [
            ("event_probability", self.event_probability),
            ("obstacle_density", self.obstacle_density),
            ("task_probability", self.task_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("{name} must lie in [0,1]")));
            }
        }
        if self.max_blocks < 2 {
            return fail("max_blocks must be at least 2");
        }
        if self.block_types < 1 {
            return fail("block_types must be at least 1");
        }
        if self.clear_charge < 1 {
            return fail("clear_charge must be at least 1");
        }
        if self.event_regen_min > self.event_regen_max {
            return fail("event_regen_min exceeds event_regen_max");
        }
        if self.task_duration_min > self.task_duration_max {
            return fail("task_duration_min exceeds task_duration_max");
        }
        if self.max_component_size < 2 {
            return fail("max_component_size must be at least 2");
        }
        Ok(())
    }

    /// Renders the config in the key-value file format.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("steps", self.steps.to_string());
        put("agents_per_team", self.agents_per_team.to_string());
        put("teams", self.teams.join(","));
        put("width", self.width.to_string());
        put("height", self.height.to_string());
        put("vision_range", self.vision_range.to_string());
        put("vision_metric", self.vision_metric.to_string());
        put("max_blocks", self.max_blocks.to_string());
        put("block_types", self.block_types.to_string());
        put("event_probability", self.event_probability.to_string());
        put("event_radius", self.event_radius.to_string());
        put("event_regen_min", self.event_regen_min.to_string());
        put("event_regen_max", self.event_regen_max.to_string());
        put("clear_charge", self.clear_charge.to_string());
        put("disable_duration", self.disable_duration.to_string());
        put("deadline_ms", self.deadline_ms.to_string());
        put("connect_timeout_ms", self.connect_timeout_ms.to_string());
        put("seed", self.seed.to_string());
        put("obstacle_density", self.obstacle_density.to_string());
        put("goal_zones", self.goal_zones.to_string());
        put("goal_radius", self.goal_radius.to_string());
        put("dispensers_per_type", self.dispensers_per_type.to_string());
        put("max_component_size", self.max_component_size.to_string());
        put("task_cap", self.task_cap.to_string());
        put("task_probability", self.task_probability.to_string());
        put("task_duration_min", self.task_duration_min.to_string());
        put("task_duration_max", self.task_duration_max.to_string());
        put("reward_factor", self.reward_factor.to_string());
        out
    }

    /// Parses a key-value document on top of the defaults and validates it.
    pub fn from_kv_str(text: &str) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::default();
        cfg.apply_kv_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the pairs in `text` to `self` without validating the result.
    pub fn apply_kv_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Line {
                    line,
                    message: format!("expected `key = value`, found `{trimmed}`"),
                });
            };
            self.set(key.trim(), value.trim())
                .map_err(|message| ConfigError::Line { line, message })?;
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse::<T>()
                .map_err(|_| format!("invalid value `{value}` for `{key}`"))
        }
        match key {
            "steps" => self.steps = num(key, value)?,
            "agents_per_team" => self.agents_per_team = num(key, value)?,
            "teams" => {
                self.teams = value.split(',').map(|t| t.trim().to_string()).collect();
            }
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "vision_range" => self.vision_range = num(key, value)?,
            "vision_metric" => self.vision_metric = value.parse()?,
            "max_blocks" => self.max_blocks = num(key, value)?,
            "block_types" => self.block_types = num(key, value)?,
            "event_probability" => self.event_probability = num(key, value)?,
            "event_radius" => self.event_radius = num(key, value)?,
            "event_regen_min" => self.event_regen_min = num(key, value)?,
            "event_regen_max" => self.event_regen_max = num(key, value)?,
            "clear_charge" => self.clear_charge = num(key, value)?,
            "disable_duration" => self.disable_duration = num(key, value)?,
            "deadline_ms" => self.deadline_ms = num(key, value)?,
            "connect_timeout_ms" => self.connect_timeout_ms = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "obstacle_density" => self.obstacle_density = num(key, value)?,
            "goal_zones" => self.goal_zones = num(key, value)?,
            "goal_radius" => self.goal_radius = num(key, value)?,
            "dispensers_per_type" => self.dispensers_per_type = num(key, value)?,
            "max_component_size" => self.max_component_size = num(key, value)?,
            "task_cap" => self.task_cap = num(key, value)?,
            "task_probability" => self.task_probability = num(key, value)?,
            "task_duration_min" => self.task_duration_min = num(key, value)?,
            "task_duration_max" => self.task_duration_max = num(key, value)?,
            "reward_factor" => self.reward_factor = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn block_type_names(&self) -> Vec<String> {
        (0..self.block_types).map(|i| format!("b{i}")).collect()
    }

    /// Agent names of one team, in slot order.
    pub fn agent_names(&self, team: &str) -> Vec<String> {
        (1..=self.agents_per_team)
            .map(|i| format!("agent{team}{i}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_sets_differ_in_one_knob_each() {
        let one = SimConfig::parameter_set(1).unwrap();
        let two = SimConfig::parameter_set(2).unwrap();
        let three = SimConfig::parameter_set(3).unwrap();
        assert_eq!((one.steps, one.agents_per_team), (500, 10));
        assert_eq!(one.max_blocks, 3);
        assert_eq!(one.event_probability, 0.04);
        assert_eq!(two.max_blocks, 5);
        assert_eq!(three.event_probability, 0.08);
        assert_eq!(SimConfig { max_blocks: 3, ..two }, one);
        assert!(SimConfig::parameter_set(0).is_none());
        assert!(SimConfig::parameter_set(4).is_none());
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = SimConfig::parameter_set(3).unwrap();
        cfg.seed = 991;
        cfg.teams = vec!["red".into(), "blue".into()];
        let text = cfg.to_kv_string();
        assert_eq!(SimConfig::from_kv_str(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "# comment\nsteps = 20\n\nwidht = 3\n";
        assert_eq!(
            SimConfig::from_kv_str(text),
            Err(ConfigError::Line {
                line: 4,
                message: "unknown key `widht`".into()
            })
        );
        let err = SimConfig::from_kv_str("steps = many").unwrap_err();
        assert!(matches!(err, ConfigError::Line { line: 1, .. }));
        let err = SimConfig::from_kv_str("steps").unwrap_err();
        assert!(matches!(err, ConfigError::Line { line: 1, .. }));
    }

    #[test]
    fn validation() {
        assert!(SimConfig::from_kv_str("steps = 0").is_err());
        assert!(SimConfig::from_kv_str("deadline_ms = 0").is_err());
        assert!(SimConfig::from_kv_str("event_probability = 1.5").is_err());
        assert!(SimConfig::from_kv_str("width = 9").is_err());
        assert!(SimConfig::from_kv_str("teams = A,A").is_err());
        assert!(SimConfig::from_kv_str("teams = A,B,C").is_err());
        assert!(SimConfig::from_kv_str("width = 10\nheight = 10").is_ok());
    }
}

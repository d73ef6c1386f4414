//! `key = value` run configuration.

use std::fmt;
use std::path::Path;

use dyadic_core::SpaceKind;
use serde::Serialize;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Fully resolved configuration; written next to every result.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: String,
    pub kind: SpaceKind,
    pub k: usize,
    pub depth: u32,
    pub m_list: Vec<u64>,
    pub lambda_list: Vec<u32>,
    pub p_list: Vec<f64>,
    pub c_r: f64,
    /// Level gap of generated families; `None` uses the smallest admissible one.
    pub mu: Option<u32>,
    pub instances: usize,
    pub seed: u64,
    pub restarts: usize,
    pub per_class: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            kind: SpaceKind::TorusSup,
            k: 1,
            depth: 8,
            m_list: vec![0, 1, 2, 4, 8],
            lambda_list: vec![1, 2, 3],
            p_list: vec![2.0],
            c_r: 4.0,
            mu: None,
            instances: 200,
            seed: 0,
            restarts: 4,
            per_class: false,
        }
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| ConfigError(format!("{key}: cannot parse '{s}'"))))
        .collect()
}

fn scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError(format!("{key}: cannot parse '{value}'")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "experiment" => cfg.experiment = value.to_string(),
                "kind" => {
                    cfg.kind = match value {
                        "torus_sup" => SpaceKind::TorusSup,
                        "torus_squared" => SpaceKind::TorusSquared,
                        other => return Err(ConfigError(format!("kind: unknown model '{other}'"))),
                    }
                }
                "k" => cfg.k = scalar(key, value)?,
                "depth" => cfg.depth = scalar(key, value)?,
                "m_list" => cfg.m_list = list(key, value)?,
                "lambda_list" => cfg.lambda_list = list(key, value)?,
                "p_list" => cfg.p_list = list(key, value)?,
                "c_r" => cfg.c_r = scalar(key, value)?,
                "mu" => cfg.mu = Some(scalar(key, value)?),
                "instances" => cfg.instances = scalar(key, value)?,
                "seed" => cfg.seed = scalar(key, value)?,
                "restarts" => cfg.restarts = scalar(key, value)?,
                "per_class" => cfg.per_class = scalar(key, value)?,
                other => return Err(ConfigError(format!("line {}: unknown key '{other}'", n + 1))),
            }
        }
        if cfg.p_list.iter().any(|p| !(*p > 1.0 && p.is_finite())) {
            return Err(ConfigError("p_list: every p must lie in (1, inf)".into()));
        }
        if !(cfg.c_r > 0.0 && cfg.c_r.is_finite()) {
            return Err(ConfigError("c_r must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

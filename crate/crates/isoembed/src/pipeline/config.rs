//! Run configuration read from JSON.

use crate::error::{Error, Result};
use crate::free_maps::jet_dim;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

/// Metric selector: builtin name plus its parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricSpec {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

/// Validated run configuration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    #[serde(rename = "N")]
    pub npts: usize,
    pub q: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub k: Option<usize>,
    pub k0_override: Option<f64>,
    pub theta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub metric: MetricSpec,
    /// Displacement budget `max|F − F₀|`.
    pub delta: f64,
    pub out_dir: PathBuf,
}

const REQUIRED: [&str; 5] = ["n", "N", "epsilon", "metric", "out_dir"];

fn cfg_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

fn take<T: serde::de::DeserializeOwned>(obj: &serde_json::Map<String, Value>, key: &str) -> Result<Option<T>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| cfg_err(key, e.to_string())),
    }
}

impl RunConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| cfg_err("<document>", e.to_string()))?;
        let obj = v.as_object().ok_or_else(|| cfg_err("<document>", "expected a JSON object"))?;
        for key in REQUIRED {
            if !obj.contains_key(key) {
                return Err(cfg_err(key, "missing required key"));
            }
        }
        let n: usize = take(obj, "n")?.unwrap();
        let cfg = RunConfig {
            n,
            npts: take(obj, "N")?.unwrap(),
            q: take(obj, "q")?.unwrap_or(jet_dim(n) + 5),
            alpha: take(obj, "alpha")?.unwrap_or(0.5),
            epsilon: take(obj, "epsilon")?.unwrap(),
            k: take(obj, "k")?,
            k0_override: take(obj, "k0_override")?,
            theta: take(obj, "theta")?.unwrap_or(1e-2),
            tol: take(obj, "tol")?.unwrap_or(1e-12),
            max_iter: take(obj, "max_iter")?.unwrap_or(50),
            seed: take(obj, "seed")?.unwrap_or(0),
            metric: take(obj, "metric")?.unwrap(),
            delta: take(obj, "delta")?.unwrap_or(0.1),
            out_dir: take(obj, "out_dir")?.unwrap(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `out_dir` is resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err("<file>", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if cfg.out_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.out_dir = dir.join(&cfg.out_dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n) {
            return Err(cfg_err("n", format!("dimension {} not in 1..=3", self.n)));
        }
        if self.npts < 5 || self.npts.is_multiple_of(2) {
            return Err(cfg_err("N", format!("need an odd N >= 5, got {}", self.npts)));
        }
        if self.q < jet_dim(self.n) + 5 {
            return Err(cfg_err("q", format!("need q >= {}", jet_dim(self.n) + 5)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(cfg_err("epsilon", "must lie in (0, 1]"));
        }
        if let Some(k) = self.k {
            if k < 2 {
                return Err(cfg_err("k", "must be at least 2"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(cfg_err("alpha", "must lie in (0, 1)"));
        }
        for (key, v) in [("theta", self.theta), ("tol", self.tol), ("delta", self.delta)] {
            if !(v > 0.0) {
                return Err(cfg_err(key, "must be positive"));
            }
        }
        if self.max_iter == 0 {
            return Err(cfg_err("max_iter", "must be positive"));
        }
        Ok(())
    }

    /// `k` from the config, else the smallest `k ≥ 2k₀ + 3`.
    pub fn choose_k(&self, k0: f64) -> usize {
        self.k.unwrap_or_else(|| ((2.0 * k0 + 3.0).ceil() as usize).max(2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"n": 1, "N": 65, "epsilon": 0.1, "metric": {"name": "flat_plus_bump"}, "out_dir": "out"}"#;

    #[test]
    fn defaults_and_rule_for_k() {
        let c = RunConfig::from_json(BASE).unwrap();
        assert_eq!(c.q, 7);
        assert_eq!(c.k, None);
        assert_eq!(c.choose_k(0.0), 3);
        assert_eq!(c.choose_k(1.2), 6);
    }

    #[test]
    fn missing_key_names_the_key() {
        let text = BASE.replace(r#""epsilon": 0.1, "#, "");
        match RunConfig::from_json(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "epsilon"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to, key) in [
            (r#""N": 65"#, r#""N": 64"#, "N"),
            (r#""epsilon": 0.1"#, r#""epsilon": 1.5"#, "epsilon"),
        ] {
            match RunConfig::from_json(&BASE.replace(from, to)) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{other:?}"),
            }
        }
        let small_q = BASE.replace(r#""n": 1,"#, r#""n": 1, "q": 6,"#);
        assert!(matches!(RunConfig::from_json(&small_q), Err(Error::Config { .. })));
    }
}

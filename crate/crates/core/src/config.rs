//! Flat `key = value` run configuration shared by every pipeline stage.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::fom::FomConfig;
use crate::gp::DEFAULT_GP_DT;
use crate::lstm::TrainConfig;

/// Every key the parser accepts.
pub const KNOWN_KEYS: &[&str] = &[
    // full-order model
    "nx",
    "ny",
    "re",
    "ro",
    "dt",
    "t_start",
    "t_end",
    "snapshot_t0",
    "snapshot_t1",
    "n_snapshots",
    "seed_perturbation_amplitude",
    "seed",
    // reduced models
    "modes",
    "gp_dt",
    "sigma",
    "predict_dt",
    "epochs",
    "batch_size",
    "validation_fraction",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "shuffle",
    "hidden",
    "layers",
    // artifact paths
    "snapshots",
    "verify_out",
    "verify",
    "basis",
    "model",
    "trajectories",
    "reference",
];

/// Parsed configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// Directory relative paths are resolved against.
    base: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1)));
            }
            if value.is_empty() {
                return Err(Error::Config(format!("line {}: key `{key}` has no value", n + 1)));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
        }
        Ok(Self {
            values,
            base: PathBuf::new(),
        })
    }

    /// Reads a file; relative artifact paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Overrides (or adds) one entry.
    pub fn set(&mut self, key: &str, value: impl Display) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn parse_value<T: FromStr>(&self, key: &str, raw: &str) -> Result<T>
    where
        T::Err: Display,
    {
        raw.parse()
            .map_err(|e| Error::Config(format!("key `{key}`: cannot parse {raw:?}: {e}")))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))?;
        self.parse_value(key, raw)
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            Some(raw) => self.parse_value(key, raw),
            None => Ok(default),
        }
    }

    fn resolve(&self, raw: &str) -> PathBuf {
        let p = Path::new(raw);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        let raw: String = self.require(key)?;
        Ok(self.resolve(&raw))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(|raw| self.resolve(raw))
    }

    /// Comma-separated list of paths.
    pub fn paths(&self, key: &str) -> Vec<PathBuf> {
        self.values
            .get(key)
            .map(|raw| {
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| self.resolve(s))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    /// Full-order settings; grid, physics, step and sampling plan are required.
    pub fn fom_config(&self) -> Result<FomConfig> {
        let nx: usize = self.require("nx")?;
        let ny: usize = self.require("ny")?;
        let grid = Grid::new(nx, ny).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = FomConfig {
            grid,
            re: self.require("re")?,
            ro: self.require("ro")?,
            dt: self.require("dt")?,
            t_start: self.get_or("t_start", 0.0)?,
            t_end: self.require("t_end")?,
            snapshot_t0: self.require("snapshot_t0")?,
            snapshot_t1: self.require("snapshot_t1")?,
            n_snapshots: self.require("n_snapshots")?,
            seed_perturbation_amplitude: self.get_or("seed_perturbation_amplitude", 0.0)?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        if cfg.dt == 0.0 {
            return Err(Error::Config("dt must be positive for a run".into()));
        }
        Ok(cfg)
    }

    pub fn modes(&self) -> Result<usize> {
        let r: usize = self.require("modes")?;
        if r == 0 {
            return Err(Error::Config("modes must be at least 1".into()));
        }
        Ok(r)
    }

    pub fn sigma(&self) -> Result<usize> {
        let s: usize = self.require("sigma")?;
        if s == 0 {
            return Err(Error::Config("sigma must be at least 1".into()));
        }
        Ok(s)
    }

    pub fn gp_dt(&self) -> Result<f64> {
        let dt: f64 = self.get_or("gp_dt", DEFAULT_GP_DT)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("gp_dt must be positive, got {dt}")));
        }
        Ok(dt)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: self.get_or("epochs", d.epochs)?,
            batch_size: self.get_or("batch_size", d.batch_size)?,
            validation_fraction: self.get_or("validation_fraction", d.validation_fraction)?,
            learning_rate: self.get_or("learning_rate", d.learning_rate)?,
            beta1: self.get_or("beta1", d.beta1)?,
            beta2: self.get_or("beta2", d.beta2)?,
            epsilon: self.get_or("epsilon", d.epsilon)?,
            seed: self.seed()?,
            shuffle: self.get_or("shuffle", d.shuffle)?,
            hidden: self.get_or("hidden", d.hidden)?,
            layers: self.get_or("layers", d.layers)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

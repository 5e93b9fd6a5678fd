//! Resolution of run settings from defaults, a config file and flags.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use toxtree::pipeline::Target;
use toxtree::resample::ResampleStrategy;

use crate::args::GlobalArgs;
use crate::UsageError;

pub const DEFAULT_SEED: u64 = 20_221;
pub const DEFAULT_THRESHOLDS: [f64; 3] = [6.0, 5.0, 4.5];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub target: Target,
    pub thresholds: [f64; 3],
    /// `None` keeps each command's own default.
    pub resample: Option<ResampleStrategy>,
    pub whitelist: Option<PathBuf>,
    pub out: PathBuf,
}

const KEYS: [&str; 7] = ["seed", "threads", "target", "thresholds", "resample", "whitelist", "out"];

pub fn parse_config_text(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| UsageError(format!("config line {}: expected key=value", i + 1)))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(UsageError(format!("config line {}: unknown key '{}'", i + 1, k.trim())).into());
        }
        map.insert(key, v.trim().to_owned());
    }
    Ok(map)
}

fn usage<T>(msg: String) -> Result<T> {
    Err(UsageError(msg).into())
}

pub fn parse_thresholds(text: &str) -> Result<[f64; 3]> {
    let values: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| UsageError(format!("thresholds must be three numbers, got '{text}'")))?;
    let Ok(arr) = <[f64; 3]>::try_from(values) else {
        return usage(format!("thresholds must be three numbers, got '{text}'"));
    };
    if !(arr[0] > arr[1] && arr[1] > arr[2]) || arr.iter().any(|v| !v.is_finite()) {
        return usage(format!("thresholds must strictly descend, got '{text}'"));
    }
    Ok(arr)
}

impl RunConfig {
    pub fn resolve(flags: &GlobalArgs) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))
                    .map_err(|e| UsageError(format!("{e:#}")))?;
                parse_config_text(&text)?
            }
            None => HashMap::new(),
        };
        let pick = |flag: Option<String>, key: &str| flag.or_else(|| file.get(key).cloned());

        let seed = match pick(flags.seed.map(|s| s.to_string()), "seed") {
            Some(s) => s.parse().map_err(|_| UsageError(format!("invalid seed '{s}'")))?,
            None => DEFAULT_SEED,
        };
        let threads = match pick(flags.threads.map(|t| t.to_string()), "threads") {
            Some(s) => s.parse().map_err(|_| UsageError(format!("invalid thread count '{s}'")))?,
            None => 0,
        };
        let target = match pick(flags.target.clone(), "target") {
            Some(s) => s.parse::<Target>().map_err(|e| UsageError(e.to_string()))?,
            None => Target::Herg,
        };
        let thresholds = match pick(flags.thresholds.clone(), "thresholds") {
            Some(s) => parse_thresholds(&s)?,
            None => DEFAULT_THRESHOLDS,
        };
        let resample = match pick(flags.resample.clone(), "resample") {
            Some(s) => Some(s.parse::<ResampleStrategy>().map_err(|e| UsageError(e.to_string()))?),
            None => None,
        };
        let path_of = |flag: &Option<PathBuf>, key: &str| flag.clone().or_else(|| file.get(key).map(PathBuf::from));
        Ok(Self {
            seed,
            threads,
            target,
            thresholds,
            resample,
            whitelist: path_of(&flags.whitelist, "whitelist"),
            out: path_of(&flags.out, "out").unwrap_or_else(|| PathBuf::from(".")),
        })
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Fails with a usage error if `path` does not exist.
pub fn require_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return usage(format!("input file {} does not exist", path.display()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("toxtree-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# comment\nseed = 7\ntarget=nav15\nthresholds=7,6,5\nout=results\n").unwrap();
        let flags = GlobalArgs { config: Some(path), seed: Some(9), ..Default::default() };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.target, Target::Nav15);
        assert_eq!(cfg.thresholds, [7.0, 6.0, 5.0]);
        assert_eq!(cfg.out, PathBuf::from("results"));
    }

    #[test]
    fn defaults_and_errors() {
        let cfg = RunConfig::resolve(&GlobalArgs::default()).unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.thresholds, DEFAULT_THRESHOLDS);
        assert!(parse_thresholds("5,6,4.5").is_err());
        assert!(parse_thresholds("6,5").is_err());
        assert!(parse_config_text("colour=blue").is_err());
        assert!(parse_config_text("seed 4").is_err());
    }
}

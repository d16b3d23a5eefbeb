//! Flat `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Pipeline keys are
//! those of [`Hyperparams::set`]; keys prefixed `synth.` tune the synthetic
//! corpus generator.

use std::path::Path;

use crate::error::{Error, Result};
use crate::forecaster::Hyperparams;
use crate::threadstore::SyntheticConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub hp: Hyperparams,
    pub synth: SyntheticConfig,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn set_synth(cfg: &mut SyntheticConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "threads_per_archetype" => cfg.threads_per_archetype = parse_value(key, value)?,
        "replies" => cfg.replies = parse_value(key, value)?,
        "min_replies" => cfg.min_replies = parse_value(key, value)?,
        "noise_sd" => cfg.noise_sd = parse_value(key, value)?,
        "jitter" => cfg.jitter = parse_value(key, value)?,
        "root_prob" => cfg.branching.root_prob = parse_value(key, value)?,
        "recency" => cfg.branching.recency = parse_value(key, value)?,
        other => {
            return Err(Error::Config(format!(
                "unknown synthetic setting 'synth.{other}'"
            )))
        }
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<Config> {
    let mut cfg = Config::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got '{line}'", i + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let applied = match key.strip_prefix("synth.") {
            Some(k) => set_synth(&mut cfg.synth, k, value),
            None => cfg.hp.set(key, value),
        };
        applied.map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
    }
    cfg.hp.validate()?;
    cfg.synth.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Config> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// The default settings written as a config file.
pub fn default_config_text() -> String {
    Hyperparams::default()
        .entries()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_defaults() {
        let cfg =
            parse_config("delta=10\nw=0.6\nt_h=25\nt_f=275\nn=300\nj=15\nlr=0.001\nsplit=0.8\n")
                .unwrap();
        assert_eq!(cfg.hp, Hyperparams::default());
        assert_eq!(
            parse_config(&default_config_text()).unwrap(),
            Config::default()
        );
    }

    #[test]
    fn comments_synth_keys_and_errors() {
        let cfg = parse_config("# small run\n\nj = 4\nsynth.threads_per_archetype=5\n").unwrap();
        assert_eq!((cfg.hp.j, cfg.synth.threads_per_archetype), (4, 5));
        assert!(parse_config("j").is_err());
        assert!(parse_config("nope=1").is_err());
        assert!(parse_config("synth.nope=1").is_err());
        assert!(parse_config("delta=400").is_err());
    }
}

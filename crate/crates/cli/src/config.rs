//! Flat `key = value` configuration files with `#` comments.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use difex::data::BenchParams;
use difex::losses::{Exploration, LossWeights};
use difex::training::TrainConfig;

/// Configuration used when `--config` is not given.
pub const DEFAULT_CONFIG: &str = include_str!("../default.conf");

const KNOWN_KEYS: &[&str] = &[
    "domains",
    "classes",
    "samples_per_class",
    "length",
    "channels",
    "strong_gain",
    "weak_gain",
    "carrier_gains",
    "noise",
    "jitter",
    "seed",
    "seeds",
    "epochs",
    "batch_size",
    "lr",
    "weight_decay",
    "lambda1",
    "lambda2",
    "lambda3",
    "exploration",
    "val_fraction",
    "virtual_domains",
    "hidden",
    "features",
];

#[derive(Clone, Debug)]
pub struct Config {
    entries: BTreeMap<String, String>,
    source: String,
}

impl Config {
    pub fn parse(text: &str, source: &str) -> Result<Config> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{source}:{}: expected `key = value`, got `{line}`", n + 1);
            };
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                bail!("{source}:{}: unknown config key `{key}`", n + 1);
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                bail!("{source}:{}: duplicate config key `{key}`", n + 1);
            }
        }
        Ok(Config {
            entries,
            source: source.to_string(),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Config> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Config::parse(&text, &p.display().to_string())
            }
            None => Config::parse(DEFAULT_CONFIG, "<default config>"),
        }
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| anyhow!("{}: missing config key `{key}`", self.source))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|e| anyhow!("{}: bad value `{v}` for `{key}`: {e}", self.source))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| anyhow!("{}: bad entry `{}` in `{key}`: {e}", self.source, s.trim()))
            })
            .collect()
    }

    pub fn bench_params(&self, seed: u64) -> Result<BenchParams> {
        Ok(BenchParams {
            domains: self.get("domains")?,
            classes: self.get("classes")?,
            samples_per_class: self.get("samples_per_class")?,
            length: self.get("length")?,
            channels: self.get("channels")?,
            strong_gain: self.get("strong_gain")?,
            weak_gain: self.get("weak_gain")?,
            carrier_gains: self.list("carrier_gains")?,
            noise: self.get("noise")?,
            jitter: self.get("jitter")?,
            seed,
        })
    }

    pub fn train_config(&self, seed: u64, exploration: Option<Exploration>) -> Result<TrainConfig> {
        let virtual_domains = match self.raw("virtual_domains")? {
            "none" | "" => None,
            _ => Some(self.get("virtual_domains")?),
        };
        let exploration = match exploration {
            Some(e) => e,
            None => self.get("exploration")?,
        };
        Ok(TrainConfig {
            epochs: self.get("epochs")?,
            batch_size: self.get("batch_size")?,
            lr: self.get("lr")?,
            weight_decay: self.get("weight_decay")?,
            weights: LossWeights {
                lambda1: self.get("lambda1")?,
                lambda2: self.get("lambda2")?,
                lambda3: self.get("lambda3")?,
                exploration,
            },
            seed,
            val_fraction: self.get("val_fraction")?,
            virtual_domains,
            mode: Default::default(),
            hidden: self.get("hidden")?,
            features: self.get("features")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_complete() {
        let cfg = Config::load(None).unwrap();
        let seed: u64 = cfg.get("seed").unwrap();
        let bench = cfg.bench_params(seed).unwrap();
        assert_eq!(
            bench,
            BenchParams {
                seed,
                ..BenchParams::default()
            }
        );
        let train = cfg.train_config(seed, None).unwrap();
        assert_eq!(
            train,
            TrainConfig {
                seed,
                ..TrainConfig::default()
            }
        );
        assert_eq!(cfg.list::<u64>("seeds").unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = Config::parse("# header\n  noise = 0.5  # trailing\n\nseeds = 1, 2\n", "t").unwrap();
        assert_eq!(cfg.get::<f64>("noise").unwrap(), 0.5);
        assert_eq!(cfg.list::<u64>("seeds").unwrap(), vec![1, 2]);
    }

    #[test]
    fn errors_name_the_key() {
        let cfg = Config::parse("noise = 0.5\n", "t").unwrap();
        let err = cfg.bench_params(0).unwrap_err().to_string();
        assert!(err.contains("`domains`"), "{err}");
        assert!(Config::parse("bogus = 1\n", "t")
            .unwrap_err()
            .to_string()
            .contains("bogus"));
        assert!(Config::parse("noise 1\n", "t").is_err());
        assert!(Config::parse("noise = 1\nnoise = 2\n", "t").is_err());
        let bad = Config::parse("noise = abc\n", "t").unwrap();
        assert!(bad.get::<f64>("noise").unwrap_err().to_string().contains("noise"));
    }
}

//! Flat key=value config files. Lines are `key = value`; `#` starts a
//! comment. Command-line flags override file values.

use anyhow::{bail, Context, Result};
use gcx_core::data::DatasetSpec;
use gcx_core::loss::LossKind;
use gcx_core::net::{Activation, InitScheme, LayerSpec};
use gcx_core::regularize::PenaltyKind;
use gcx_core::train::TrainConfig;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key = value, got '{raw}'", lineno + 1);
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn set_if_some<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string());
        }
    }

    fn parse_num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => match v.parse::<T>() {
                Ok(n) => Ok(Some(n)),
                Err(_) => bail!("config key '{key}': cannot parse '{v}'"),
            },
        }
    }

    /// Keys that the trainer understands; anything else is a usage error so
    /// typos do not silently fall back to defaults.
    const KNOWN_KEYS: &'static [&'static str] = &[
        "lr",
        "batch_size",
        "steps",
        "loss",
        "seed",
        "eval_every",
        "layers",
        "activation",
        "init",
        "data",
        "penalties",
        "gc_eval_points",
        "alignment_points",
        "record_lipschitz",
        "optimizer",
    ];

    pub fn reject_unknown_keys(&self) -> Result<()> {
        for key in self.values.keys() {
            if !Self::KNOWN_KEYS.contains(&key.as_str()) {
                bail!("unknown config key '{key}' (known keys: {})", Self::KNOWN_KEYS.join(", "));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        if let Some(v) = self.parse_num::<f64>("lr")? {
            config.learning_rate = v;
        }
        if let Some(v) = self.parse_num::<usize>("batch_size")? {
            config.batch_size = v;
        }
        if let Some(v) = self.parse_num::<usize>("steps")? {
            config.steps = v;
        }
        if let Some(v) = self.values.get("loss") {
            config.loss = v.parse::<LossKind>().map_err(anyhow::Error::msg)?;
        }
        if let Some(v) = self.parse_num::<u64>("seed")? {
            config.seed = v;
        }
        if let Some(v) = self.parse_num::<usize>("eval_every")? {
            config.eval_every = v;
        }
        if let Some(v) = self.parse_num::<usize>("gc_eval_points")? {
            config.gc_eval_points = v;
        }
        if let Some(v) = self.parse_num::<usize>("alignment_points")? {
            config.alignment_points = v;
        }
        if let Some(v) = self.values.get("record_lipschitz") {
            config.record_lipschitz = v
                .parse::<bool>()
                .map_err(|_| anyhow::anyhow!("record_lipschitz must be true/false"))?;
        }
        if let Some(v) = self.values.get("optimizer") {
            config.optimizer = v.clone();
        }
        if let Some(v) = self.values.get("penalties") {
            config.penalties = parse_penalties(v)?;
        }
        Ok(config)
    }

    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        let dims_text = self.values.get("layers").map(|s| s.as_str()).unwrap_or("2,64,64,2");
        let dims: Vec<usize> = dims_text
            .split(',')
            .map(|d| d.trim().parse::<usize>().map_err(|_| anyhow::anyhow!("bad layer dim '{d}'")))
            .collect::<Result<_>>()?;
        if dims.len() < 2 {
            bail!("layers needs at least input and output dims, got '{dims_text}'");
        }
        let activation = match self.values.get("activation") {
            Some(a) => a.parse::<Activation>().map_err(anyhow::Error::msg)?,
            None => Activation::Relu,
        };
        Ok(gcx_core::net::mlp_specs(&dims, activation))
    }

    pub fn init_scheme(&self) -> Result<InitScheme> {
        match self.values.get("init") {
            Some(v) => v.parse::<InitScheme>().map_err(anyhow::Error::msg),
            None => Ok(InitScheme::Standard),
        }
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let text = self
            .values
            .get("data")
            .map(|s| s.as_str())
            .unwrap_or("blobs:n=2000,d=2,k=2,sep=4,seed=7,test_n=1000");
        text.parse::<DatasetSpec>().map_err(anyhow::Error::from)
    }

}

/// `"l2:0.01,gc:0.1"` → penalty list.
pub fn parse_penalties(text: &str) -> Result<Vec<(PenaltyKind, f64)>> {
    let mut out = Vec::new();
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (kind, rate) = part
            .split_once(':')
            .or_else(|| part.split_once('='))
            .ok_or_else(|| anyhow::anyhow!("penalty '{part}' must be kind:rate"))?;
        let kind = kind.trim().parse::<PenaltyKind>().map_err(anyhow::Error::msg)?;
        let rate: f64 = rate.trim().parse().context("penalty rate")?;
        out.push((kind, rate));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_merges() {
        let mut cfg = FileConfig::parse("lr = 0.1\nsteps=50 # comment\n\n# full line comment\n").unwrap();
        cfg.set("steps", "99".into());
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.learning_rate, 0.1);
        assert_eq!(tc.steps, 99);
    }

    #[test]
    fn rejects_unknown_keys() {
        let cfg = FileConfig::parse("lrr = 0.1\n").unwrap();
        assert!(cfg.reject_unknown_keys().is_err());
    }

    #[test]
    fn penalties_parse() {
        let ps = parse_penalties("l2:0.01, gc:0.5").unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].0, PenaltyKind::L2);
        assert_eq!(ps[1].1, 0.5);
    }
}

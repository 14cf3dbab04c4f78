//! Fit run configuration with a flat key=value file representation.
//! Precedence: command-line flags > config file > defaults.

use anyhow::{bail, Context, Result};
use vaxcov_core::model::ModelKind;
use vaxcov_core::sampler::ChainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub chain: ChainConfig,
    pub pooled: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Idml,
            chain: ChainConfig::default(),
            pooled: false,
        }
    }
}

impl RunConfig {
    pub fn to_kv(&self) -> String {
        format!(
            "model={}\nchains={}\niterations={}\nwarmup={}\nthin={}\nseed={}\npooled={}\n",
            self.model,
            self.chain.n_chains,
            self.chain.iterations,
            self.chain.warmup,
            self.chain.thin,
            self.chain.seed,
            self.pooled
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key=value", lineno + 1);
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "model" => {
                    self.model = ModelKind::parse(value)
                        .with_context(|| format!("unknown model '{value}'"))?;
                }
                "chains" => self.chain.n_chains = value.parse().context("bad chains")?,
                "iterations" => self.chain.iterations = value.parse().context("bad iterations")?,
                "warmup" => self.chain.warmup = value.parse().context("bad warmup")?,
                "thin" => self.chain.thin = value.parse().context("bad thin")?,
                "seed" => self.chain.seed = value.parse().context("bad seed")?,
                "pooled" => self.pooled = value.parse().context("bad pooled flag")?,
                other => bail!("unknown config key '{other}'"),
            }
        }
        Ok(())
    }

    /// Applies config-file values, then flag overrides.
    #[allow(clippy::too_many_arguments)]
    pub fn resolve(
        config_file: Option<&std::path::Path>,
        model: Option<&str>,
        chains: Option<usize>,
        iterations: Option<usize>,
        warmup: Option<usize>,
        thin: Option<usize>,
        seed: Option<u64>,
        pooled: bool,
    ) -> Result<Self> {
        let mut cfg = if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            RunConfig::from_kv(&text)?
        } else {
            RunConfig::default()
        };
        if let Some(m) = model {
            cfg.model = ModelKind::parse(m).with_context(|| format!("unknown model '{m}'"))?;
        }
        if let Some(v) = chains {
            cfg.chain.n_chains = v;
        }
        if let Some(v) = iterations {
            cfg.chain.iterations = v;
        }
        if let Some(v) = warmup {
            cfg.chain.warmup = v;
        }
        if let Some(v) = thin {
            cfg.chain.thin = v;
        }
        if let Some(v) = seed {
            cfg.chain.seed = v;
        }
        if pooled {
            cfg.pooled = true;
        }
        Ok(cfg)
    }
}

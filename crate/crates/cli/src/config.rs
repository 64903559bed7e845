//! TOML toolkit configuration.

use std::fs;
use std::path::{Path, PathBuf};

use afford_core::encoders::{AdapterConfig, EncoderKind};
use afford_core::sim::protocol::ProtocolConfig;
use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::Deserialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ClientKind {
    #[default]
    Stub,
    Live,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Default manifest for commands that read a dataset.
    pub dataset: Option<PathBuf>,
    /// Directory holding `decoder.ckpt`.
    pub checkpoints: Option<PathBuf>,
    /// Directory holding an `object_library.json` that replaces the bundled one.
    pub assets: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolkitConfig {
    /// Root seed; every stage seed is derived from it.
    pub seed: u64,
    pub encoder: EncoderKind,
    pub client: ClientKind,
    pub opacity: f64,
    pub paths: Paths,
    pub adapter: AdapterConfig,
    pub pipeline: ProtocolConfig,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            encoder: EncoderKind::Toy,
            client: ClientKind::Stub,
            opacity: 0.6,
            paths: Paths::default(),
            adapter: AdapterConfig::default(),
            pipeline: ProtocolConfig::default(),
        }
    }
}

pub const CHECKPOINT_FILE: &str = "decoder.ckpt";
pub const LIBRARY_FILE: &str = "object_library.json";

impl ToolkitConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [
            &mut config.paths.dataset,
            &mut config.paths.checkpoints,
            &mut config.paths.assets,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.opacity) {
            bail!("opacity {} outside [0, 1]", self.opacity);
        }
        let named = [
            ("paths.dataset", &self.paths.dataset),
            ("paths.checkpoints", &self.paths.checkpoints),
            ("paths.assets", &self.paths.assets),
        ];
        for (key, p) in named {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{key} {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    /// Pipeline settings with all stage seeds derived from `seed`.
    pub fn seeded_pipeline(&self, seed: u64) -> ProtocolConfig {
        self.pipeline.clone().with_seed(seed)
    }

    pub fn default_checkpoint(&self) -> Option<PathBuf> {
        self.paths.checkpoints.as_ref().map(|d| d.join(CHECKPOINT_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(ToolkitConfig::parse("").unwrap(), ToolkitConfig::default());
    }

    #[test]
    fn nested_overrides() {
        let c = ToolkitConfig::parse(
            "seed = 4\nclient = \"live\"\n[pipeline.train]\nepochs = 3\nlearning_rate = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.client, ClientKind::Live);
        assert_eq!(c.pipeline.train.epochs, 3);
        assert_eq!(c.pipeline.sim, ProtocolConfig::default().sim);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ToolkitConfig::parse("sed = 1").is_err());
        assert!(ToolkitConfig::parse("[pipeline]\nepochs = 1").is_err());
        assert!(ToolkitConfig::parse("[paths]\nmodels = \"x\"").is_err());
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../README.md");
        let block = readme
            .split("```toml\n")
            .nth(1)
            .and_then(|rest| rest.split("```").next())
            .unwrap();
        let c = ToolkitConfig::parse(block).unwrap();
        assert_eq!(c.pipeline.train.epochs, 30);
        assert_eq!(c.adapter.feature_layer, Some(6));
    }

    #[test]
    fn missing_path_rejected() {
        let c = ToolkitConfig::parse("[paths]\ndataset = \"/no/such/manifest.jsonl\"").unwrap();
        assert!(c.validate().is_err());
    }
}

//! The `forge.toml` run configuration and its override rules.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use forge_core::adapter::MixMethod;
use forge_core::extractor::PipelineConfig;
use forge_core::instructions::{default_identifiers, InstructionStyle, PromptTemplate};
use forge_core::numeric_lex::StructuralKeywords;
use forge_core::{ForgeError, Result};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "FORGE_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub pipeline: PipelineConfig,
    pub keywords: StructuralKeywords,
    pub instructions: InstructionSection,
    pub paths: PathSection,
    pub training: Option<TrainingSection>,
    pub adapters: Option<AdapterSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstructionSection {
    pub template: Option<String>,
    pub identifiers: Option<Vec<String>>,
}

/// Inputs and output directory for `run-all`. Relative paths resolve against
/// the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub manifest: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for PathSection {
    fn default() -> Self {
        PathSection {
            manifest: None,
            rules: None,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSection {
    pub a: PathBuf,
    pub b: PathBuf,
    #[serde(default = "default_method")]
    pub method: MixMethod,
    #[serde(default = "one")]
    pub scale_a: f64,
    #[serde(default = "one")]
    pub scale_b: f64,
    pub base: Option<PathBuf>,
}

fn default_method() -> MixMethod {
    MixMethod::Svd
}

fn one() -> f64 {
    1.0
}

/// Command-line overrides for individual pipeline fields.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_min: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub r_ins: Option<f64>,
    #[arg(long)]
    pub r_nv: Option<f64>,
    #[arg(long)]
    pub n_cho: Option<usize>,
    #[arg(long)]
    pub s: Option<f64>,
}

impl ForgeConfig {
    pub fn parse(source: &str) -> Result<Self> {
        toml::from_str(source).map_err(|e| ForgeError::Config(e.to_string()))
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ForgeConfig::default());
        };
        let source = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        let mut cfg = Self::parse(&source).map_err(|e| match e {
            ForgeError::Config(msg) => ForgeError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve(base);
        if let Some(a) = cfg.adapters.as_mut() {
            a.a = base.join(&a.a);
            a.b = base.join(&a.b);
            a.base = a.base.as_ref().map(|p| base.join(p));
        }
        Ok(cfg)
    }

    /// Precedence: command-line flag, then `FORGE_SEED` (seed only), then
    /// file value, then default. Validates the result.
    pub fn apply(&mut self, o: &PipelineOverrides) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.pipeline.seed = raw
                .trim()
                .parse()
                .map_err(|_| ForgeError::Config(format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?;
        }
        let p = &mut self.pipeline;
        p.seed = o.seed.unwrap_or(p.seed);
        p.n_min = o.n_min.unwrap_or(p.n_min);
        p.n_max = o.n_max.unwrap_or(p.n_max);
        p.r_ins = o.r_ins.unwrap_or(p.r_ins);
        p.r_nv = o.r_nv.unwrap_or(p.r_nv);
        p.n_cho = o.n_cho.unwrap_or(p.n_cho);
        p.s = o.s.unwrap_or(p.s);
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.style().map(|_| ())?;
        if let Some(t) = &self.training {
            if t.window == 0 {
                return Err(ForgeError::Config("training.window must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn style(&self) -> Result<InstructionStyle> {
        let n_cho = self.pipeline.n_cho;
        let identifiers = match &self.instructions.identifiers {
            Some(ids) if ids.len() != n_cho => {
                return Err(ForgeError::Config(format!(
                    "instructions.identifiers has {} entries but n_cho is {n_cho}",
                    ids.len()
                )))
            }
            Some(ids) => ids.clone(),
            None => default_identifiers(n_cho)?,
        };
        let template = self
            .instructions
            .template
            .clone()
            .map(PromptTemplate)
            .unwrap_or_default();
        Ok(InstructionStyle { template, identifiers })
    }
}

impl PathSection {
    fn resolve(&mut self, base: &Path) {
        self.manifest = self.manifest.as_ref().map(|p| base.join(p));
        self.rules = self.rules.as_ref().map(|p| base.join(p));
        self.out = base.join(&self.out);
    }
}

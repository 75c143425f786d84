use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mrfg_core::datamodel::TargetId;
use mrfg_core::embedding::EmbedderSpec;
use mrfg_core::evaluation::{ExperimentSpec, Mode, Variant};
use mrfg_core::gsi::GsiConfig;
use mrfg_core::relevance::LlmEndpointConfig;
use mrfg_core::synth::SynthSpec;
use mrfg_core::tfi::DEFAULT_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Llm,
    Cosine,
    #[default]
    Mock,
    Off,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Llm => "llm",
            Strategy::Cosine => "cosine",
            Strategy::Mock => "mock",
            Strategy::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "llm" => Strategy::Llm,
            "cosine" => Strategy::Cosine,
            "mock" | "llm-mock" => Strategy::Mock,
            "off" | "none" => Strategy::Off,
            other => bail!("unknown filter strategy {other:?}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub users: PathBuf,
    pub tweets: PathBuf,
    pub edges: PathBuf,
    /// Mock LLM verdict table, used by the mock strategy.
    pub mock_table: PathBuf,
    pub cache: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            users: "data/users.jsonl".into(),
            tweets: "data/tweets.jsonl".into(),
            edges: "data/edges.jsonl".into(),
            mock_table: "data/mock_llm.jsonl".into(),
            cache: "out/verdicts.jsonl".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSection {
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfiSection {
    pub bins: usize,
}

impl Default for TfiSection {
    fn default() -> Self {
        TfiSection { bins: DEFAULT_BINS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub mode: Mode,
    pub variant: Variant,
    pub train_target: Option<String>,
    pub eval_target: Option<String>,
    pub seeds: Vec<u64>,
    pub r_values: Vec<f64>,
    /// Strategies compared by `sweep`.
    pub strategies: Vec<Strategy>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            mode: Mode::InTarget,
            variant: Variant::Full,
            train_target: None,
            eval_target: None,
            seeds: vec![0, 1, 2],
            r_values: (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            strategies: vec![Strategy::Mock, Strategy::Cosine],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub embedder: EmbedderSpec,
    pub filter: FilterSection,
    pub llm: LlmEndpointConfig,
    pub tfi: TfiSection,
    pub gsi: GsiConfig,
    pub experiment: ExperimentSection,
    pub synth: SynthSpec,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub target: Option<String>,
    pub r: Option<f64>,
    pub variant: Option<String>,
    pub strategy: Option<String>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: PipelineConfig,
    /// Raw bytes of the config file, hashed into manifests.
    pub raw: Vec<u8>,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn read(path: &Path, overrides: &Overrides) -> Result<Self> {
        let raw = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let text = std::str::from_utf8(&raw).context("config is not UTF-8")?;
        let mut config: PipelineConfig =
            toml::from_str(text).with_context(|| format!("parsing config {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.apply(overrides)?;
        config.validate()?;
        Ok(Loaded { config, raw, base_dir })
    }

    /// Paths in the config are relative to the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.out_dir)
    }

    pub fn embedder_spec(&self) -> EmbedderSpec {
        match &self.config.embedder {
            EmbedderSpec::External { dim, path } => EmbedderSpec::External {
                dim: *dim,
                path: self.resolve(path),
            },
            other => other.clone(),
        }
    }
}

impl PipelineConfig {
    fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.experiment.seeds = vec![seed];
            self.synth.seed = seed;
        }
        if let Some(t) = &o.target {
            self.experiment.train_target = Some(t.clone());
        }
        if let Some(r) = o.r {
            self.gsi.r = r;
        }
        if let Some(v) = &o.variant {
            self.experiment.variant = v.parse()?;
        }
        if let Some(s) = &o.strategy {
            self.filter.strategy = Strategy::parse(s)?;
        }
        if let Some(out) = &o.out {
            self.paths.out_dir = out.clone();
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.gsi.validate()?;
        self.synth.validate()?;
        if self.filter.strategy == Strategy::Llm || self.experiment.strategies.contains(&Strategy::Llm) {
            self.llm.validate()?;
        }
        if self.tfi.bins < 2 {
            bail!("tfi.bins must be at least 2");
        }
        Ok(())
    }

    /// The experiment spec for `strategy`, with the train target defaulting
    /// to `default_target` when the config names none.
    pub fn experiment_spec(&self, default_target: Option<&TargetId>, strategy: Strategy) -> Result<ExperimentSpec> {
        let e = &self.experiment;
        let train_target = match (&e.train_target, default_target) {
            (Some(t), _) => TargetId::new(t)?,
            (None, Some(t)) => t.clone(),
            (None, None) => bail!("no train target given and the corpus has none"),
        };
        let eval_target = e.eval_target.as_deref().map(TargetId::new).transpose()?;
        Ok(ExperimentSpec {
            mode: e.mode,
            variant: e.variant,
            train_target,
            eval_target,
            seeds: e.seeds.clone(),
            r_values: e.r_values.clone(),
            strategy: strategy.name().into(),
            bins: self.tfi.bins,
            gsi: self.gsi.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.gsi.hidden_dim, 64);
    }

    #[test]
    fn sections_parse() {
        let c: PipelineConfig = toml::from_str(
            r#"
            [paths]
            out_dir = "results"
            [embedder]
            kind = "external"
            dim = 128
            path = "data/embeddings.jsonl"
            [filter]
            strategy = "cosine"
            [gsi]
            r = 0.4
            epochs = 10
            [experiment]
            mode = "cross_target"
            variant = "no_stfi_R"
            train_target = "biden"
            eval_target = "trump"
            "#,
        )
        .unwrap();
        assert_eq!(c.filter.strategy, Strategy::Cosine);
        assert_eq!(c.experiment.variant, Variant::NoStfiR);
        assert_eq!(c.gsi.r, 0.4);
        assert_eq!(c.gsi.hidden_dim, 64);
        assert!(matches!(c.embedder, EmbedderSpec::External { dim: 128, .. }));
    }

    #[test]
    fn overrides_apply() {
        let mut c = PipelineConfig::default();
        c.apply(&Overrides {
            seed: Some(7),
            r: Some(0.6),
            variant: Some("no_llm_fu".into()),
            strategy: Some("off".into()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(c.experiment.seeds, vec![7]);
        assert_eq!(c.synth.seed, 7);
        assert_eq!(c.gsi.r, 0.6);
        assert_eq!(c.experiment.variant, Variant::NoLlmFu);
        assert_eq!(c.filter.strategy, Strategy::Off);
        assert!(c
            .apply(&Overrides {
                variant: Some("nope".into()),
                ..Default::default()
            })
            .is_err());
    }
}

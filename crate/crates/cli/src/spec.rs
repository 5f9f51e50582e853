//! Run specs: one TOML file per experiment, command-line flags on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vadgate::eval::benchmark::Benchmark;
use vadgate::model::EngineConfig;
use vadgate::providers::synthetic::WorldSpec;

use crate::UsageError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Seeded synthetic world with scripted analyzer and reasoner.
    #[default]
    Synthetic,
    /// RCVD files plus chat-completions and `/embed` endpoints.
    Live,
}

/// Relative paths resolve against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Required for `live`. For `synthetic`, a directory written by `gen`;
    /// without it the dataset is generated in memory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Defaults to `annotations.json` next to the manifest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    /// Optional overrides: `vlm_instruction.txt`, `reasoner_instruction.txt`,
    /// `prototype.txt`, `options.json`, `initial_prompt.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            manifest: None,
            annotations: None,
            prompts: None,
            out: PathBuf::from("runs/latest"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub videos: usize,
    pub frames_per_video: usize,
    pub world: WorldSpec,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let shipped = Benchmark::shipped();
        Self {
            videos: shipped.videos,
            frames_per_video: shipped.frames_per_video,
            world: shipped.world,
        }
    }
}

/// Live endpoints. Chat endpoints come from the environment:
/// `VLM_API_BASE_URL` / `VLM_MODEL_NAME` / `VLM_API_KEY` for the analyzer,
/// `LLM_*` for the reasoner, each falling back to the unprefixed names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveSpec {
    /// Base URL of the text-embedding service.
    pub embed_url: String,
    /// Embedding dimension shared by frames and text.
    pub dim: usize,
    pub timeout_secs: u64,
    pub max_attempts: u32,
}

impl Default for LiveSpec {
    fn default() -> Self {
        Self {
            embed_url: "http://127.0.0.1:8000".into(),
            dim: 512,
            timeout_secs: 120,
            max_attempts: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub provider: ProviderKind,
    /// Overrides `engine.seed` (video order and subset sampling).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub paths: Paths,
    pub engine: EngineConfig,
    pub synthetic: SyntheticSpec,
    pub live: LiveSpec,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub provider: Option<ProviderKind>,
    pub out: Option<PathBuf>,
}

impl RunSpec {
    /// The built-in demo: the shipped synthetic benchmark.
    pub fn demo() -> Self {
        Self {
            engine: Benchmark::shipped().engine,
            paths: Paths {
                out: PathBuf::from("runs/demo"),
                ..Paths::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text).map_err(|e| UsageError::new(format!("bad run spec: {e}")))?)
    }

    /// Reads `path`, or the demo spec when no file is given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::demo()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| UsageError::new(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    /// Applies overrides and checks the result; the returned spec is what
    /// gets echoed and executed.
    pub fn resolve(mut self, overrides: &Overrides) -> anyhow::Result<Self> {
        if let Some(p) = overrides.provider {
            self.provider = p;
        }
        if let Some(out) = &overrides.out {
            self.paths.out = out.clone();
        }
        if let Some(seed) = overrides.seed.or(self.seed) {
            self.seed = Some(seed);
            self.engine.seed = seed;
        }
        self.engine = self
            .engine
            .validate()
            .map_err(|e| UsageError::new(format!("bad engine config: {e}")))?;
        Ok(self)
    }

    /// Launch checks: referenced paths exist and live mode has a manifest.
    pub fn check_paths(&self) -> anyhow::Result<()> {
        if self.provider == ProviderKind::Live && self.paths.manifest.is_none() {
            return Err(UsageError::new("live mode needs paths.manifest").into());
        }
        for (name, path) in [
            ("manifest", &self.paths.manifest),
            ("annotations", &self.paths.annotations),
            ("prompts", &self.paths.prompts),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(UsageError::new(format!("{name} {} does not exist", p.display())).into());
                }
            }
        }
        Ok(())
    }

    pub fn annotations_path(&self) -> Option<PathBuf> {
        self.paths.annotations.clone().or_else(|| {
            self.paths
                .manifest
                .as_ref()
                .map(|m| m.parent().unwrap_or(Path::new("")).join("annotations.json"))
        })
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_keep_defaults() {
        let spec = RunSpec::from_toml("[engine]\nepsilon = 3.0\n[synthetic]\nvideos = 4\n").unwrap();
        assert_eq!(spec.engine.epsilon, 3.0);
        assert_eq!(spec.engine.k, EngineConfig::default().k);
        assert_eq!(spec.synthetic.videos, 4);
        assert_eq!(spec.synthetic.frames_per_video, 300);
        assert_eq!(spec.provider, ProviderKind::Synthetic);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let err = RunSpec::from_toml("[engine]\neps = 3.0\n").unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn flags_beat_the_file() {
        let spec = RunSpec::from_toml("seed = 3\nprovider = \"live\"\n").unwrap();
        let resolved = spec
            .clone()
            .resolve(&Overrides {
                seed: Some(9),
                provider: Some(ProviderKind::Synthetic),
                out: None,
            })
            .unwrap();
        assert_eq!((resolved.seed, resolved.engine.seed), (Some(9), 9));
        assert_eq!(resolved.provider, ProviderKind::Synthetic);
        let kept = spec.resolve(&Overrides::default()).unwrap();
        assert_eq!(kept.engine.seed, 3);
    }

    #[test]
    fn resolved_spec_round_trips_through_toml() {
        let spec = RunSpec::demo().resolve(&Overrides::default()).unwrap();
        let text = spec.to_toml().unwrap();
        assert_eq!(RunSpec::from_toml(&text).unwrap(), spec);
    }

    #[test]
    fn invalid_engine_values_are_rejected() {
        let spec = RunSpec::from_toml("[engine]\nl = 7\n").unwrap();
        assert!(spec.resolve(&Overrides::default()).is_err());
    }
}

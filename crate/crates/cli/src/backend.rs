//! Turns a resolved spec into data and model providers.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context};
use vadgate::conscious::options::OptionsList;
use vadgate::conscious::prompt::PromptTemplates;
use vadgate::model::{EngineConfig, KnowledgePrompt};
use vadgate::pipeline::{run, EngineState, Fixtures, Providers, RunOptions};
use vadgate::providers::chat::RetryPolicy;
use vadgate::providers::embedding::{Combined, FileEmbeddings};
use vadgate::providers::http::{EndpointConfig, HttpChatClient, HttpTextEmbedder};
use vadgate::providers::manifest::{shuffle_manifest, Annotations, Manifest};
use vadgate::providers::synthetic::{SyntheticDataset, SyntheticReasoner, SyntheticWorld, WorldSpec};

use crate::spec::{ProviderKind, RunSpec};
use crate::UsageError;

// One per process; the size difference does not matter.
#[allow(clippy::large_enum_variant)]
pub enum Backend {
    /// Frames from memory, or from the RCVD files of a `gen` directory
    /// when `manifest` is set.
    Synthetic {
        dataset: Box<SyntheticDataset>,
        manifest: Option<Manifest>,
        annotations: Annotations,
    },
    Live {
        manifest: Manifest,
        annotations: Option<Annotations>,
        embeddings: Combined<FileEmbeddings, HttpTextEmbedder>,
        analyzer: HttpChatClient,
        reasoner: HttpChatClient,
        retry: RetryPolicy,
    },
}

pub fn load_fixtures(dir: Option<&Path>) -> anyhow::Result<Fixtures> {
    let Some(dir) = dir else { return Ok(Fixtures::default()) };
    let templates = PromptTemplates::load_dir(dir)?;
    let options = match dir.join("options.json") {
        p if p.exists() => OptionsList::load(&p)?,
        _ => OptionsList::default(),
    };
    let initial_prompt = match dir.join("initial_prompt.json") {
        p if p.exists() => {
            let text = std::fs::read_to_string(&p)?;
            serde_json::from_str::<KnowledgePrompt>(&text).with_context(|| format!("reading {}", p.display()))?
        }
        _ => KnowledgePrompt::initial(),
    };
    Ok(Fixtures {
        templates,
        options,
        initial_prompt,
    })
}

/// Rebuilds the dataset a `gen` directory was written from and checks the
/// manifest still describes it.
fn synthetic_from_dir(manifest: &Manifest) -> anyhow::Result<SyntheticDataset> {
    let world_path = manifest.base_dir.join("world.json");
    let world: WorldSpec = serde_json::from_str(
        &std::fs::read_to_string(&world_path).with_context(|| format!("reading {}", world_path.display()))?,
    )?;
    let frames = manifest.videos.first().map_or(0, |v| v.n_frames);
    let dataset = SyntheticWorld::new(world)?.generate(manifest.videos.len(), frames)?;
    let mut listed: Vec<_> = manifest.videos.iter().map(|v| (&v.id, v.n_frames)).collect();
    let mut generated: Vec<_> = dataset.manifest.videos.iter().map(|v| (&v.id, v.n_frames)).collect();
    listed.sort();
    generated.sort();
    if listed != generated {
        bail!(
            "manifest does not match the synthetic world in {}",
            world_path.display()
        );
    }
    Ok(dataset)
}

impl Backend {
    pub fn open(spec: &RunSpec) -> anyhow::Result<Self> {
        let manifest = spec.paths.manifest.as_deref().map(Manifest::load).transpose()?;
        let annotations = spec
            .annotations_path()
            .filter(|p| p.exists())
            .map(|p| Annotations::load(&p))
            .transpose()?;
        match spec.provider {
            ProviderKind::Synthetic => {
                let dataset = match &manifest {
                    Some(m) => synthetic_from_dir(m)?,
                    None => SyntheticWorld::new(spec.synthetic.world.clone())?
                        .generate(spec.synthetic.videos, spec.synthetic.frames_per_video)?,
                };
                let annotations = annotations.unwrap_or_else(|| dataset.annotations.clone());
                Ok(Backend::Synthetic {
                    dataset: Box::new(dataset),
                    manifest,
                    annotations,
                })
            }
            ProviderKind::Live => {
                let manifest = manifest.ok_or_else(|| UsageError::new("live mode needs paths.manifest"))?;
                let endpoint = |role: &str| -> anyhow::Result<HttpChatClient> {
                    let mut cfg = EndpointConfig::from_env(role).map_err(|e| UsageError::new(e.to_string()))?;
                    cfg.timeout_secs = spec.live.timeout_secs;
                    Ok(HttpChatClient::new(cfg)?)
                };
                let live = &spec.live;
                Ok(Backend::Live {
                    manifest,
                    annotations,
                    embeddings: Combined {
                        images: FileEmbeddings::new(live.dim),
                        text: HttpTextEmbedder::new(&live.embed_url, live.dim, Duration::from_secs(live.timeout_secs))?,
                    },
                    analyzer: endpoint("VLM")?,
                    reasoner: endpoint("LLM")?,
                    retry: RetryPolicy {
                        max_attempts: live.max_attempts,
                        ..RetryPolicy::default()
                    },
                })
            }
        }
    }

    pub fn annotations(&self) -> Option<&Annotations> {
        match self {
            Backend::Synthetic { annotations, .. } => Some(annotations),
            Backend::Live { annotations, .. } => annotations.as_ref(),
        }
    }

    /// One full pass. Synthetic videos are shuffled under `cfg.seed`; live
    /// manifests run in the order listed.
    pub fn execute(
        &self,
        cfg: &EngineConfig,
        fixtures: Fixtures,
        options: &RunOptions,
    ) -> vadgate::Result<EngineState> {
        match self {
            Backend::Synthetic { dataset, manifest, .. } => {
                let analyzer = dataset.analyzer();
                let reasoner = SyntheticReasoner {
                    templates: fixtures.templates.clone(),
                };
                let retry = RetryPolicy::immediate(3);
                match manifest {
                    Some(m) => {
                        let embeddings = Combined {
                            images: FileEmbeddings::new(dataset.world.spec.dim),
                            text: dataset.embeddings(),
                        };
                        let providers = Providers {
                            embeddings: &embeddings,
                            analyzer: &analyzer,
                            reasoner: &reasoner,
                            retry: &retry,
                        };
                        run(&shuffle_manifest(m, cfg.seed), cfg, fixtures, providers, options)
                    }
                    None => {
                        let embeddings = dataset.embeddings();
                        let providers = Providers {
                            embeddings: &embeddings,
                            analyzer: &analyzer,
                            reasoner: &reasoner,
                            retry: &retry,
                        };
                        run(
                            &shuffle_manifest(&dataset.manifest, cfg.seed),
                            cfg,
                            fixtures,
                            providers,
                            options,
                        )
                    }
                }
            }
            Backend::Live {
                manifest,
                embeddings,
                analyzer,
                reasoner,
                retry,
                ..
            } => {
                let providers = Providers {
                    embeddings,
                    analyzer,
                    reasoner,
                    retry,
                };
                run(manifest, cfg, fixtures, providers, options)
            }
        }
    }
}

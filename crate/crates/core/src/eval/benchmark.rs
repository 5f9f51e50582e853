//! The seeded synthetic benchmark: world, dataset size and engine settings,
//! plus helpers to run the engine and the score-every-frame baseline on it.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::metrics::{average_precision, roc_auc, shuffle_manifest, LabeledTimeline, Metrics};
use crate::model::{EngineConfig, FrameScore};
use crate::pipeline::{run, EngineState, Fixtures, Providers, RunOptions};
use crate::providers::chat::RetryPolicy;
use crate::providers::synthetic::{SyntheticDataset, SyntheticReasoner, SyntheticWorld, WorldSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Benchmark {
    pub world: WorldSpec,
    pub videos: usize,
    pub frames_per_video: usize,
    pub engine: EngineConfig,
}

impl Default for Benchmark {
    fn default() -> Self {
        Self::shipped()
    }
}

impl Benchmark {
    /// The shipped benchmark. `epsilon` and `epsilon_init` keep the default
    /// 0.6 ratio and are calibrated so that about 23% of the frames reach the
    /// analyzer (gamma 100, 64 dimensions).
    pub fn shipped() -> Self {
        Self {
            world: WorldSpec::default(),
            videos: 40,
            frames_per_video: 300,
            engine: EngineConfig {
                epsilon: 11.0,
                epsilon_init: 6.6,
                ..EngineConfig::default()
            },
        }
    }

    pub fn dataset(&self) -> Result<SyntheticDataset> {
        SyntheticWorld::new(self.world.clone())?.generate(self.videos, self.frames_per_video)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRun {
    pub state: EngineState,
    pub metrics: Metrics,
}

impl SyntheticRun {
    pub fn entries(&self) -> Vec<FrameScore> {
        self.state.timeline.entries().cloned().collect()
    }
}

/// Runs the engine over `dataset` with the synthetic providers, videos
/// shuffled under `cfg.seed`.
pub fn run_synthetic(dataset: &SyntheticDataset, cfg: &EngineConfig, options: &RunOptions) -> Result<SyntheticRun> {
    let manifest = shuffle_manifest(&dataset.manifest, cfg.seed);
    let embeddings = dataset.embeddings();
    let analyzer = dataset.analyzer();
    let reasoner = SyntheticReasoner::default();
    let retry = RetryPolicy::immediate(3);
    let providers = Providers {
        embeddings: &embeddings,
        analyzer: &analyzer,
        reasoner: &reasoner,
        retry: &retry,
    };
    let state = run(&manifest, cfg, Fixtures::default(), providers, options)?;
    let entries: Vec<FrameScore> = state.timeline.entries().cloned().collect();
    let metrics = Metrics::compute(&entries, &dataset.annotations, state.stats.reasoner_calls)?;
    Ok(SyntheticRun { state, metrics })
}

/// AUC and AP of the analyzer scoring every frame.
pub fn oracle_baseline(dataset: &SyntheticDataset, with_options: bool) -> Result<(f64, f64)> {
    let labeled = LabeledTimeline::from_series(&dataset.oracle_scores(with_options), &dataset.annotations)?;
    Ok((roc_auc(&labeled)?, average_precision(&labeled)?))
}

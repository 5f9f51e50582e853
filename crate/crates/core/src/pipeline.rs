//! Frame routing, reasoner rounds and run bookkeeping.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::conscious::analyzer::analyze_frame;
use crate::conscious::options::OptionsList;
use crate::conscious::parse::parse_reasoner_output;
use crate::conscious::prompt::{
    assemble_reasoner_instruction, assemble_vlm_instruction, render_codebook, PromptTemplates,
};
use crate::conscious::refresh::{refresh, RefreshParams};
use crate::conscious::sampling::sample_balanced_subset;
use crate::error::{Error, Result};
use crate::model::{DescriptionPair, EmbeddingVector, EngineConfig, FrameScore, KnowledgePrompt, Score, Source};
use crate::providers::chat::{chat_with_retry, ChatClient, ImageRef, RetryPolicy};
use crate::providers::embedding::{embed_text, EmbeddingSource};
use crate::providers::manifest::{Manifest, VideoEntry};
use crate::reflex::{compute_decision_vector, temporal_smooth, ReflexMemory};
use crate::timeline::ScoreTimeline;

/// Text fixtures the engine is parameterized by.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixtures {
    pub templates: PromptTemplates,
    pub options: OptionsList,
    /// Must be at epoch 0.
    pub initial_prompt: KnowledgePrompt,
}

impl Default for Fixtures {
    fn default() -> Self {
        Self {
            templates: PromptTemplates::default(),
            options: OptionsList::default(),
            initial_prompt: KnowledgePrompt::initial(),
        }
    }
}

/// The external models one run talks to.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub embeddings: &'a dyn EmbeddingSource,
    pub analyzer: &'a dyn ChatClient,
    pub reasoner: &'a dyn ChatClient,
    pub retry: &'a RetryPolicy,
}

/// One line of `replay.log`: how a frame was routed and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub video: String,
    pub frame: usize,
    /// Distance to the nearest record when the frame arrived; `None` for an
    /// empty memory.
    pub nearest_distance: Option<f64>,
    pub epsilon: f64,
    pub routed_to: Source,
    /// Analyzer score for escalated frames, reflex score before smoothing
    /// otherwise.
    pub score_raw: Score,
    pub score_final: Score,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub epsilon: f64,
    pub prototypes: usize,
    /// Videos completed before this epoch began.
    pub started_after_video: usize,
    pub frames_total: usize,
    pub frames_conscious: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub frames_total: usize,
    pub frames_conscious: usize,
    /// Reasoner invocations (rounds with a non-empty subset).
    pub reasoner_calls: usize,
    /// Rounds due, including those skipped for an empty subset.
    pub reasoner_rounds: usize,
    pub prompt_updates: usize,
    pub failed_updates: usize,
    /// Escalated frames whose analyzer output never parsed.
    pub analyzer_fallbacks: usize,
    pub epochs: Vec<EpochStats>,
}

impl RunStats {
    pub fn compression_rate(&self) -> f64 {
        if self.frames_total == 0 {
            0.0
        } else {
            self.frames_conscious as f64 / self.frames_total as f64
        }
    }
}

/// Everything a run accumulates; serializable for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub memory: ReflexMemory,
    /// Prompt history; entry `k` is the prompt of epoch `k`, the last one is current.
    pub prompts: Vec<KnowledgePrompt>,
    pub buffer: Vec<DescriptionPair>,
    pub timeline: ScoreTimeline,
    pub replay: Vec<ReplayEntry>,
    pub videos_seen: usize,
    /// Ids of fully processed videos, in order.
    pub completed: Vec<String>,
    pub stats: RunStats,
}

impl EngineState {
    pub fn prompt(&self) -> &KnowledgePrompt {
        self.prompts.last().expect("prompt history is never empty")
    }
}

/// What happened at the end of a video.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundOutcome {
    NotDue,
    /// A round was due but the balanced subset was empty.
    EmptySubset,
    Updated {
        epoch: u64,
        rescored: usize,
    },
    /// The previous prompt stays; the reason is attached.
    Failed(String),
}

pub struct Engine<'a> {
    cfg: EngineConfig,
    fixtures: Fixtures,
    providers: Providers<'a>,
    state: EngineState,
    /// Prototype embeddings of the prompt the memory currently lives in.
    reflex_prototypes: Vec<EmbeddingVector>,
    analyzer_instruction: String,
}

impl<'a> Engine<'a> {
    pub fn new(cfg: EngineConfig, fixtures: Fixtures, providers: Providers<'a>) -> Result<Self> {
        let cfg = cfg.validate()?;
        if fixtures.initial_prompt.epoch() != 0 {
            return Err(Error::Invalid("the initial prompt must be at epoch 0".into()));
        }
        let state = EngineState {
            memory: ReflexMemory::new(cfg.epsilon_init)?,
            prompts: vec![fixtures.initial_prompt.clone()],
            buffer: Vec::new(),
            timeline: ScoreTimeline::new(),
            replay: Vec::new(),
            videos_seen: 0,
            completed: Vec::new(),
            stats: RunStats {
                epochs: vec![EpochStats {
                    epoch: 0,
                    epsilon: cfg.epsilon_init,
                    prototypes: fixtures.initial_prompt.len(),
                    started_after_video: 0,
                    frames_total: 0,
                    frames_conscious: 0,
                }],
                ..RunStats::default()
            },
        };
        Self::resume(state, cfg, fixtures, providers)
    }

    /// Continues from a checkpointed state.
    pub fn resume(state: EngineState, cfg: EngineConfig, fixtures: Fixtures, providers: Providers<'a>) -> Result<Self> {
        let cfg = cfg.validate()?;
        let reflex_prompt = state
            .prompts
            .get(state.memory.epoch() as usize)
            .ok_or_else(|| Error::Invalid("memory epoch has no prompt in the history".into()))?;
        let reflex_prototypes = embed_text(providers.embeddings, &fixtures.templates.embedding_texts(reflex_prompt))?;
        let mut engine = Self {
            cfg,
            fixtures,
            providers,
            state,
            reflex_prototypes,
            analyzer_instruction: String::new(),
        };
        engine.analyzer_instruction = engine.build_analyzer_instruction();
        Ok(engine)
    }

    fn build_analyzer_instruction(&self) -> String {
        let prompt = if self.cfg.ablation.feedback_to_vlm {
            self.state.prompt()
        } else {
            &self.state.prompts[0]
        };
        assemble_vlm_instruction(prompt, self.options(), &self.fixtures.templates)
    }

    fn options(&self) -> Option<&OptionsList> {
        self.cfg.ablation.options.then_some(&self.fixtures.options)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn into_state(self) -> EngineState {
        self.state
    }

    pub fn analyzer_instruction(&self) -> &str {
        &self.analyzer_instruction
    }

    /// Routes one frame and records its score.
    pub fn process_frame(
        &mut self,
        video: &str,
        frame: usize,
        visual: EmbeddingVector,
        image: &ImageRef,
    ) -> Result<FrameScore> {
        let cfg = &self.cfg;
        let state = &mut self.state;
        let x = compute_decision_vector(&visual, &self.reflex_prototypes, cfg.gamma, state.memory.epoch())?;
        let nearest = state.memory.nearest(&x)?;
        let epsilon = state.memory.epsilon();
        let novel = nearest.is_none_or(|n| n.distance > epsilon);

        let (score, raw, replay_raw, source) = if novel {
            let options = cfg.ablation.options.then_some(&self.fixtures.options);
            let analysis = analyze_frame(
                self.providers.analyzer,
                self.providers.retry,
                &self.analyzer_instruction,
                image,
                options,
                cfg.vlm_parse_retries,
            )?;
            let smoothed = state.memory.insert(visual.clone(), x, analysis.pair.score, cfg.k)?;
            let analyzer_score = analysis.pair.score;
            if analysis.parsed {
                state.buffer.push(analysis.pair);
            } else {
                state.stats.analyzer_fallbacks += 1;
            }
            (smoothed, smoothed, analyzer_score, Source::Conscious)
        } else {
            let raw = state.memory.reflex_score_with(&x, cfg.a, cfg.aggregation)?;
            let score = if cfg.ablation.window_smoothing {
                temporal_smooth(&state.timeline, video, frame, raw, cfg.c)
            } else {
                raw
            };
            (score, raw, raw, Source::Reflex)
        };

        let entry = state.timeline.push(video, frame, visual, score, raw, source)?;
        state.replay.push(ReplayEntry {
            video: video.to_string(),
            frame,
            nearest_distance: nearest.map(|n| n.distance),
            epsilon,
            routed_to: source,
            score_raw: replay_raw,
            score_final: score,
            epoch: state.prompt().epoch(),
        });
        let conscious = (source == Source::Conscious) as usize;
        state.stats.frames_total += 1;
        state.stats.frames_conscious += conscious;
        if let Some(e) = state.stats.epochs.last_mut() {
            e.frames_total += 1;
            e.frames_conscious += conscious;
        }
        debug_assert_eq!(state.stats.frames_conscious, state.memory.len());
        Ok(entry)
    }

    /// Closes a video and runs a reasoner round every `n` videos.
    ///
    /// A round samples the balanced subset, asks the reasoner for a new
    /// prompt and refreshes the reflex side under it. The buffer is emptied
    /// whatever the outcome. The first successful update also switches the
    /// memory radius from `epsilon_init` to `epsilon`, before the re-scoring.
    pub fn end_of_video(&mut self, video: &str) -> RoundOutcome {
        self.state.videos_seen += 1;
        self.state.completed.push(video.to_string());
        if !self.state.videos_seen.is_multiple_of(self.cfg.n) {
            return RoundOutcome::NotDue;
        }
        self.state.stats.reasoner_rounds += 1;
        let outcome = self.reasoner_round();
        self.state.buffer.clear();
        match &outcome {
            RoundOutcome::Failed(reason) => {
                self.state.stats.failed_updates += 1;
                warn!(
                    after_video = self.state.videos_seen,
                    "prompt update failed, keeping the previous prompt: {reason}"
                );
            }
            RoundOutcome::Updated { epoch, rescored } => {
                info!(after_video = self.state.videos_seen, epoch, rescored, "prompt updated");
            }
            _ => debug!(after_video = self.state.videos_seen, "no cases to reason over"),
        }
        outcome
    }

    fn reasoner_round(&mut self) -> RoundOutcome {
        let cfg = &self.cfg;
        let seed = cfg.seed.wrapping_add(self.state.stats.reasoner_rounds as u64);
        let subset = sample_balanced_subset(&self.state.buffer, cfg.b, seed);
        if subset.is_empty() {
            return RoundOutcome::EmptySubset;
        }
        let current_epoch = self.state.prompt().epoch();
        let instruction = assemble_reasoner_instruction(self.state.prompt(), &subset, cfg.l, &self.fixtures.templates);
        self.state.stats.reasoner_calls += 1;
        let text = match chat_with_retry(self.providers.reasoner, self.providers.retry, &instruction, None) {
            Ok(text) => text,
            Err(e) => return RoundOutcome::Failed(format!("reasoner call: {e}")),
        };
        let new_prompt = match parse_reasoner_output(&text, cfg.l, current_epoch, &self.fixtures.templates) {
            Ok(p) => p,
            Err(e) => return RoundOutcome::Failed(format!("reasoner output: {e}")),
        };

        let mut memory = self.state.memory.clone();
        if let Err(e) = memory.set_epsilon(cfg.epsilon) {
            return RoundOutcome::Failed(e.to_string());
        }
        let mut rescored = 0;
        if cfg.ablation.feedback_to_reflex {
            let params = RefreshParams {
                gamma: cfg.gamma,
                a: cfg.a,
                c: cfg.c,
                aggregation: cfg.aggregation,
                window_smoothing: cfg.ablation.window_smoothing,
            };
            match refresh(
                &new_prompt,
                &mut memory,
                &mut self.state.timeline,
                &mut self.state.buffer,
                self.providers.embeddings,
                &self.fixtures.templates,
                &params,
            ) {
                Ok(out) => {
                    self.reflex_prototypes = out.prototype_embeddings;
                    rescored = out.rescored;
                }
                Err(e) => return RoundOutcome::Failed(format!("refresh: {e}")),
            }
        }
        self.state.memory = memory;
        let epoch = new_prompt.epoch();
        self.state.stats.epochs.push(EpochStats {
            epoch,
            epsilon: cfg.epsilon,
            prototypes: new_prompt.len(),
            started_after_video: self.state.videos_seen,
            frames_total: 0,
            frames_conscious: 0,
        });
        self.state.prompts.push(new_prompt);
        self.state.stats.prompt_updates += 1;
        self.analyzer_instruction = self.build_analyzer_instruction();
        RoundOutcome::Updated { epoch, rescored }
    }

    /// Scores every frame of one video in order, then closes it.
    pub fn process_video(&mut self, manifest: &Manifest, entry: &VideoEntry) -> Result<RoundOutcome> {
        let embeddings = self.providers.embeddings.embed_video(manifest, entry)?;
        if embeddings.frames.len() != entry.n_frames {
            return Err(Error::Invalid(format!(
                "video {}: manifest lists {} frames, source gave {}",
                entry.id,
                entry.n_frames,
                embeddings.frames.len()
            )));
        }
        for (index, visual) in embeddings.frames.into_iter().enumerate() {
            let image = manifest.image_ref(entry, index);
            self.process_frame(&entry.id, index, visual, &image)?;
        }
        Ok(self.end_of_video(&entry.id))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Where run artifacts go; nothing is written when absent.
    pub artifacts: Option<PathBuf>,
    /// Write `checkpoint.json` after every video.
    pub checkpoint: bool,
    /// Continue from `checkpoint.json` in the artifacts directory if present.
    pub resume: bool,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Processes the manifest's videos in order and returns the final state.
///
/// With an artifacts directory, a failed run still flushes the timeline
/// scored so far (including the partial video) before returning the error.
pub fn run(
    manifest: &Manifest,
    cfg: &EngineConfig,
    fixtures: Fixtures,
    providers: Providers<'_>,
    options: &RunOptions,
) -> Result<EngineState> {
    let templates = fixtures.templates.clone();
    let checkpoint = options.artifacts.as_ref().map(|d| d.join(CHECKPOINT_FILE));
    let mut engine = match checkpoint.as_ref().filter(|p| options.resume && p.exists()) {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let state: EngineState = serde_json::from_str(&text)?;
            info!(videos = state.completed.len(), "resuming from checkpoint");
            Engine::resume(state, cfg.clone(), fixtures, providers)?
        }
        None => Engine::new(cfg.clone(), fixtures, providers)?,
    };
    let done = engine.state().completed.len();
    let expected: Vec<&str> = manifest.videos.iter().take(done).map(|v| v.id.as_str()).collect();
    if engine.state().completed != expected {
        return Err(Error::Invalid("checkpoint does not match the manifest order".into()));
    }
    if let Some(dir) = &options.artifacts {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for entry in &manifest.videos[done..] {
        if let Err(e) = engine.process_video(manifest, entry) {
            if let Some(dir) = &options.artifacts {
                let path = dir.join("timeline.jsonl");
                if let Err(flush) = engine.state().timeline.write_jsonl(&path) {
                    warn!("could not flush the partial timeline: {flush}");
                }
            }
            return Err(e);
        }
        if let (Some(path), true) = (&checkpoint, options.checkpoint) {
            write_atomic(path, &serde_json::to_vec(engine.state())?)?;
        }
    }
    let state = engine.into_state();
    if let Some(dir) = &options.artifacts {
        write_artifacts(dir, &state, &templates)?;
    }
    Ok(state)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct StatsFile<'a> {
    #[serde(flatten)]
    stats: &'a RunStats,
    compression_rate: f64,
    memory_size: usize,
}

/// Writes `timeline.jsonl`, `stats.json`, `replay.log` and
/// `prompts/epoch_<k>.txt`.
pub fn write_artifacts(dir: &Path, state: &EngineState, templates: &PromptTemplates) -> Result<()> {
    std::fs::create_dir_all(dir.join("prompts")).map_err(|e| Error::io(dir, e))?;
    state.timeline.write_jsonl(&dir.join("timeline.jsonl"))?;
    let stats = StatsFile {
        stats: &state.stats,
        compression_rate: state.stats.compression_rate(),
        memory_size: state.memory.len(),
    };
    let path = dir.join("stats.json");
    std::fs::write(&path, serde_json::to_string_pretty(&stats)?).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("replay.log");
    let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for entry in &state.replay {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;

    for prompt in &state.prompts {
        let path = dir.join("prompts").join(format!("epoch_{}.txt", prompt.epoch()));
        std::fs::write(&path, render_codebook(prompt, templates) + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Reads `replay.log`.
pub fn read_replay(path: &Path) -> Result<Vec<ReplayEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

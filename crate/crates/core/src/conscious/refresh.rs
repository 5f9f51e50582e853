use crate::conscious::prompt::PromptTemplates;
use crate::error::{Error, Result};
use crate::model::{Aggregation, DescriptionPair, EmbeddingVector, KnowledgePrompt, Score, Source};
use crate::providers::embedding::{embed_text, EmbeddingSource};
use crate::reflex::{compute_decision_vector, smooth_window, ReflexMemory};
use crate::timeline::ScoreTimeline;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefreshParams {
    pub gamma: f64,
    pub a: f64,
    pub c: usize,
    pub aggregation: Aggregation,
    pub window_smoothing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefreshOutcome {
    /// Embeddings of the new prototypes, in prompt order.
    pub prototype_embeddings: Vec<EmbeddingVector>,
    /// Reflex-sourced timeline entries that were re-scored.
    pub rescored: usize,
}

/// Moves the reflex side to `new_prompt`.
///
/// Embeds the new prototypes, rebuilds every memory decision vector, then
/// re-scores each reflex-sourced timeline entry from its stored visual under
/// the rebuilt memory, replaying the causal window per video over the
/// updated scores. Conscious-sourced entries, record scores and visuals are
/// left alone. The buffer is emptied. On error nothing is modified.
pub fn refresh(
    new_prompt: &KnowledgePrompt,
    memory: &mut ReflexMemory,
    timeline: &mut ScoreTimeline,
    buffer: &mut Vec<DescriptionPair>,
    embedder: &dyn EmbeddingSource,
    templates: &PromptTemplates,
    params: &RefreshParams,
) -> Result<RefreshOutcome> {
    if new_prompt.epoch() != memory.epoch() + 1 {
        return Err(Error::Invalid(format!(
            "prompt epoch {} does not follow memory epoch {}",
            new_prompt.epoch(),
            memory.epoch()
        )));
    }
    let prototypes = embed_text(embedder, &templates.embedding_texts(new_prompt))?;
    let mut next = memory.clone();
    next.recompute_decision_vectors(&prototypes, params.gamma, new_prompt.epoch())?;

    // (video, frame position) -> (final, raw), computed before anything is written.
    let mut rewrites: Vec<Vec<(usize, Score, Score)>> = Vec::with_capacity(timeline.videos().len());
    for video in timeline.videos() {
        let mut finals: Vec<f64> = video.frames.iter().map(|f| f.score.get()).collect();
        let mut changes = Vec::new();
        for (i, entry) in video.frames.iter().enumerate() {
            if entry.source != Source::Reflex {
                continue;
            }
            let visual = timeline
                .visual(entry.visual)
                .ok_or_else(|| Error::Invalid(format!("dangling visual reference {}", entry.visual.0)))?;
            let x = compute_decision_vector(visual, &prototypes, params.gamma, new_prompt.epoch())?;
            let raw = next.reflex_score_with(&x, params.a, params.aggregation)?;
            let score = if params.window_smoothing {
                smooth_window(raw, &finals[i.saturating_sub(params.c)..i])
            } else {
                raw
            };
            finals[i] = score.get();
            changes.push((i, score, raw));
        }
        rewrites.push(changes);
    }

    let mut rescored = 0;
    for (video, changes) in timeline.videos_mut().iter_mut().zip(rewrites) {
        for (i, score, raw) in changes {
            video.frames[i].score = score;
            video.frames[i].raw_score = raw;
            rescored += 1;
        }
    }
    *memory = next;
    buffer.clear();
    Ok(RefreshOutcome {
        prototype_embeddings: prototypes,
        rescored,
    })
}

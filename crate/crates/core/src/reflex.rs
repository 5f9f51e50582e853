//! The reflex pathway: decision vectors, the epsilon-net memory, escalation
//! filtering and neighbourhood scoring.
//!
//! The memory is built greedily: a frame whose decision vector lies more than
//! `epsilon` from every stored vector is escalated and becomes a record, so
//! within one epoch the stored vectors form a packing (pairwise distance
//! `> epsilon`) that covers every frame seen so far.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Aggregation, DecisionVector, EmbeddingVector, MemoryRecord, Score};
use crate::timeline::ScoreTimeline;

/// `out[i] = gamma * cos(visual, prototypes[i])`.
///
/// Both sides are unit vectors, so the cosine is a dot product.
pub fn compute_decision_vector(
    visual: &EmbeddingVector,
    prototypes: &[EmbeddingVector],
    gamma: f64,
    epoch: u64,
) -> Result<DecisionVector> {
    if prototypes.is_empty() {
        return Err(Error::Invalid("no prototype embeddings".into()));
    }
    let values = prototypes
        .iter()
        .map(|p| visual.dot(p).map(|c| gamma * c))
        .collect::<Result<Vec<_>>>()?;
    Ok(DecisionVector { values, epoch })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    /// `1 - cos(x, y)`; invariant to the gamma scale.
    Cosine,
}

impl DistanceMetric {
    pub fn distance(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            DistanceMetric::Euclidean => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            DistanceMetric::Cosine => {
                let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
                for (a, b) in x.iter().zip(y) {
                    dot += a * b;
                    nx += a * a;
                    ny += b * b;
                }
                let denom = (nx * ny).sqrt();
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - dot / denom
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub distance: f64,
    pub index: usize,
}

/// The dynamic memory of representative records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflexMemory {
    records: Vec<MemoryRecord>,
    epsilon: f64,
    epoch: u64,
    #[serde(default)]
    metric: DistanceMetric,
}

impl ReflexMemory {
    pub fn new(epsilon: f64) -> Result<Self> {
        Self::with_metric(epsilon, DistanceMetric::Euclidean)
    }

    pub fn with_metric(epsilon: f64, metric: DistanceMetric) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self {
            records: Vec::new(),
            epsilon,
            epoch: 0,
            metric,
        })
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Changes the coverage radius. Existing records are not re-pruned.
    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        check_epsilon(epsilon)?;
        self.epsilon = epsilon;
        Ok(())
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    fn check(&self, x: &DecisionVector) -> Result<()> {
        if x.epoch != self.epoch {
            return Err(Error::EpochMismatch {
                memory: self.epoch,
                vector: x.epoch,
            });
        }
        if let Some(first) = self.records.first() {
            if first.decision.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.decision.len(),
                    actual: x.len(),
                });
            }
        }
        Ok(())
    }

    fn distances(&self, x: &DecisionVector) -> impl Iterator<Item = f64> + '_ {
        let metric = self.metric;
        let query = x.values.clone();
        self.records
            .iter()
            .map(move |r| metric.distance(&query, &r.decision.values))
    }

    /// Closest record to `x`; ties resolve to the lowest index.
    pub fn nearest(&self, x: &DecisionVector) -> Result<Option<Nearest>> {
        self.check(x)?;
        let mut best: Option<Nearest> = None;
        for (index, distance) in self.distances(x).enumerate() {
            if best.is_none_or(|b| distance < b.distance) {
                best = Some(Nearest { distance, index });
            }
        }
        Ok(best)
    }

    /// Escalation predicate: `true` when `x` is not covered by any record,
    /// i.e. the memory is empty or the nearest record is strictly farther
    /// than epsilon.
    pub fn is_novel(&self, x: &DecisionVector) -> Result<bool> {
        Ok(match self.nearest(x)? {
            None => true,
            Some(n) => n.distance > self.epsilon,
        })
    }

    /// Stores a record for an escalated frame. Its score is the mean of
    /// `raw_score` and the scores of the `min(k, len)` nearest records; the
    /// smoothed score is returned.
    pub fn insert(&mut self, visual: EmbeddingVector, x: DecisionVector, raw_score: Score, k: usize) -> Result<Score> {
        self.check(&x)?;
        let mut ranked: Vec<(f64, usize)> = self.distances(&x).zip(0..).collect();
        if let Some(&(distance, _)) = ranked.iter().min_by(|a, b| a.0.total_cmp(&b.0)) {
            if distance <= self.epsilon {
                return Err(Error::PackingViolation {
                    distance,
                    epsilon: self.epsilon,
                });
            }
        }
        let take = k.min(ranked.len());
        let mut sum = raw_score.get();
        if take > 0 {
            if take < ranked.len() {
                ranked.select_nth_unstable_by(take - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            }
            sum += ranked[..take]
                .iter()
                .map(|&(_, i)| self.records[i].score.get())
                .sum::<f64>();
        }
        let smoothed = Score::clamped(sum / (take + 1) as f64)?;
        self.records.push(MemoryRecord {
            visual,
            decision: x,
            score: smoothed,
        });
        Ok(smoothed)
    }

    /// Reflex score with the default min aggregation.
    pub fn reflex_score(&self, x: &DecisionVector, a: f64) -> Result<Score> {
        self.reflex_score_with(x, a, Aggregation::Min)
    }

    /// Aggregates the scores of records strictly within `a * epsilon` of `x`.
    /// If that neighbourhood is empty the nearest record stands in for it,
    /// which closes the gap for frames sitting exactly at distance epsilon.
    pub fn reflex_score_with(&self, x: &DecisionVector, a: f64, aggregation: Aggregation) -> Result<Score> {
        self.check(x)?;
        if self.records.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let radius = a * self.epsilon;
        let mut nearest = Nearest {
            distance: f64::INFINITY,
            index: 0,
        };
        let mut min = f64::INFINITY;
        let mut sum = 0.0;
        let mut count = 0usize;
        for (index, distance) in self.distances(x).enumerate() {
            if distance < nearest.distance {
                nearest = Nearest { distance, index };
            }
            if distance < radius {
                let s = self.records[index].score.get();
                min = min.min(s);
                sum += s;
                count += 1;
            }
        }
        let nearest_score = self.records[nearest.index].score;
        let score = match aggregation {
            Aggregation::Nearest => nearest_score.get(),
            _ if count == 0 => nearest_score.get(),
            Aggregation::Min => min,
            Aggregation::Mean => sum / count as f64,
        };
        Score::clamped(score)
    }

    /// Rebuilds every record's decision vector against a new prototype set and
    /// moves the memory to `new_epoch`. Visuals and scores are untouched and the
    /// packing property is not re-enforced. Nothing changes on error.
    pub fn recompute_decision_vectors(
        &mut self,
        prototypes: &[EmbeddingVector],
        gamma: f64,
        new_epoch: u64,
    ) -> Result<()> {
        if new_epoch != self.epoch + 1 {
            return Err(Error::Invalid(format!(
                "new epoch {new_epoch} does not follow memory epoch {}",
                self.epoch
            )));
        }
        let vectors = self
            .records
            .iter()
            .map(|r| compute_decision_vector(&r.visual, prototypes, gamma, new_epoch))
            .collect::<Result<Vec<_>>>()?;
        for (record, decision) in self.records.iter_mut().zip(vectors) {
            record.decision = decision;
        }
        self.epoch = new_epoch;
        Ok(())
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon > 0.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("epsilon {epsilon} must be > 0")))
    }
}

/// Mean of `score` and the final scores of up to `c` frames of `video`
/// emitted before `frame`.
pub fn temporal_smooth(timeline: &ScoreTimeline, video: &str, frame: usize, score: Score, c: usize) -> Score {
    smooth_window(score, &timeline.recent_scores(video, frame, c))
}

/// Mean of `score` and the preceding scores in `window`.
pub fn smooth_window(score: Score, window: &[f64]) -> Score {
    let total = score.get() + window.iter().sum::<f64>();
    Score::clamped(total / (window.len() + 1) as f64).unwrap_or(score)
}

//! Frame-level ROC-AUC, average precision and compression accounting.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FrameScore, Source};
use crate::providers::manifest::Annotations;

pub use crate::providers::manifest::shuffle_manifest;

/// Scores paired with binary ground truth, one per sampled frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTimeline {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl LabeledTimeline {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Alignment(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Invalid(format!("label {l} is not binary")));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Invalid(format!("score {s} is not finite")));
        }
        Ok(Self { scores, labels })
    }

    /// Aligns timeline entries with annotations. The two must cover the same
    /// videos, and no annotated interval may start past a video's last frame.
    pub fn from_entries<'a>(
        entries: impl IntoIterator<Item = &'a FrameScore>,
        annotations: &Annotations,
    ) -> Result<Self> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let mut last_frame: std::collections::BTreeMap<&str, usize> = Default::default();
        for e in entries {
            let label = annotations
                .label(&e.video, e.frame)
                .ok_or_else(|| Error::Alignment(format!("video {} has no annotation entry", e.video)))?;
            scores.push(e.score.get());
            labels.push(label);
            let last = last_frame.entry(e.video.as_str()).or_default();
            *last = (*last).max(e.frame);
        }
        check_coverage(last_frame.into_iter().map(|(v, f)| (v.to_string(), f)), annotations)?;
        Self::new(scores, labels)
    }

    /// Aligns whole score series (frame `i` of each series is sampled frame `i`).
    pub fn from_series(series: &[(String, Vec<f64>)], annotations: &Annotations) -> Result<Self> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (video, values) in series {
            for (frame, &s) in values.iter().enumerate() {
                let label = annotations
                    .label(video, frame)
                    .ok_or_else(|| Error::Alignment(format!("video {video} has no annotation entry")))?;
                scores.push(s);
                labels.push(label);
            }
        }
        check_coverage(
            series
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(id, v)| (id.clone(), v.len() - 1)),
            annotations,
        )?;
        Self::new(scores, labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

fn check_coverage(last_frames: impl Iterator<Item = (String, usize)>, annotations: &Annotations) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (video, last) in last_frames {
        if let Some([s, _]) = annotations
            .spans(&video)
            .and_then(|sp| sp.iter().find(|[s, _]| *s > last))
        {
            return Err(Error::Alignment(format!(
                "video {video}: interval starting at {s} lies past the last scored frame {last}"
            )));
        }
        seen.insert(video);
    }
    if let Some(missing) = annotations.0.keys().find(|k| !seen.contains(*k)) {
        return Err(Error::Alignment(format!("annotated video {missing} has no scores")));
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney U over average ranks).
pub fn roc_auc(t: &LabeledTimeline) -> Result<f64> {
    let positives = t.positives();
    let negatives = t.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Metric("ROC-AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t.scores[a].total_cmp(&t.scores[b]));
    // Sum of 1-based average ranks of the positives, doubled to stay integral.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && t.scores[order[j + 1]] == t.scores[order[i]] {
            j += 1;
        }
        let doubled_rank = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| t.labels[k] == 1).count() as u128;
        doubled_rank_sum += doubled_rank * pos_in_group;
        i = j + 1;
    }
    let p = positives as u128;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * positives * negatives) as f64)
}

/// `sum_n (R_n - R_{n-1}) * P_n` over descending distinct score thresholds;
/// tied scores enter together.
pub fn average_precision(t: &LabeledTimeline) -> Result<f64> {
    let positives = t.positives();
    if positives == 0 {
        return Err(Error::Metric("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t.scores[b].total_cmp(&t.scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut previous_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && t.scores[order[j + 1]] == t.scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            if t.labels[k] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - previous_recall) * precision;
        previous_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// Fraction of frames sent to the analyzer, against `baseline_frames`.
pub fn compression(frames_conscious: usize, baseline_frames: usize) -> Result<f64> {
    if baseline_frames == 0 {
        return Err(Error::Metric("baseline frame count is zero".into()));
    }
    Ok(frames_conscious as f64 / baseline_frames as f64)
}

/// The contents of `metrics.json`. A metric undefined on the data (one class
/// only) is `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub compression_rate: f64,
    pub frames_total: usize,
    pub frames_conscious: usize,
    pub reasoner_calls: usize,
}

impl Metrics {
    pub fn compute(entries: &[FrameScore], annotations: &Annotations, reasoner_calls: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Metric("timeline is empty".into()));
        }
        let labeled = LabeledTimeline::from_entries(entries, annotations)?;
        let frames_conscious = entries.iter().filter(|e| e.source == Source::Conscious).count();
        Ok(Self {
            auc: roc_auc(&labeled).ok(),
            ap: average_precision(&labeled).ok(),
            compression_rate: compression(frames_conscious, entries.len())?,
            frames_total: entries.len(),
            frames_conscious,
            reasoner_calls,
        })
    }
}

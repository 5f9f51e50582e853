//! Report files: `metrics.json`, `scores.csv` and per-video plot data.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::metrics::Metrics;
use crate::model::{FrameScore, Source};
use crate::providers::manifest::Annotations;

/// Per-video series for external plotting, written to `plots/<video>.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotSeries<'a> {
    pub video: &'a str,
    pub frames: Vec<usize>,
    pub scores: Vec<f64>,
    pub sources: Vec<Source>,
    /// Ground-truth anomalous intervals, inclusive.
    pub spans: &'a [[usize; 2]],
}

fn file_stem(video: &str) -> String {
    video
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes the report for `entries` (grouped by video, in emission order)
/// under `out`, returning the metrics that went into `metrics.json`.
pub fn emit_report(
    entries: &[FrameScore],
    annotations: &Annotations,
    reasoner_calls: usize,
    out: &Path,
) -> Result<Metrics> {
    let metrics = Metrics::compute(entries, annotations, reasoner_calls)?;
    let plots = out.join("plots");
    std::fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;

    let path = out.join("metrics.json");
    std::fs::write(&path, serde_json::to_string_pretty(&metrics)? + "\n").map_err(|e| Error::io(&path, e))?;

    let mut csv = csv::Writer::from_path(out.join("scores.csv"))?;
    csv.write_record(["video", "frame", "score", "raw_score", "source", "label"])?;
    for e in entries {
        let label = annotations.label(&e.video, e.frame).unwrap_or(0);
        csv.write_record([
            e.video.as_str(),
            &e.frame.to_string(),
            &e.score.get().to_string(),
            &e.raw_score.get().to_string(),
            e.source.as_str(),
            &label.to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io(out.join("scores.csv"), e))?;

    let mut start = 0;
    while start < entries.len() {
        let video = entries[start].video.as_str();
        let end = start + entries[start..].iter().take_while(|e| e.video == video).count();
        let group = &entries[start..end];
        let series = PlotSeries {
            video,
            frames: group.iter().map(|e| e.frame).collect(),
            scores: group.iter().map(|e| e.score.get()).collect(),
            sources: group.iter().map(|e| e.source).collect(),
            spans: annotations.spans(video).unwrap_or(&[]),
        };
        let path = plots.join(format!("{}.json", file_stem(video)));
        std::fs::write(&path, serde_json::to_string(&series)? + "\n").map_err(|e| Error::io(&path, e))?;
        start = end;
    }
    Ok(metrics)
}

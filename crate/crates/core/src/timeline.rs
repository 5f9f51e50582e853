use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EmbeddingVector, FrameScore, Score, Source, VisualRef};

/// Scores of one video in emission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScores {
    pub id: String,
    pub frames: Vec<FrameScore>,
}

/// Every emitted frame score plus the visual embedding it was computed from,
/// so that historic reflex scores can be re-evaluated after a prompt update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTimeline {
    videos: Vec<VideoScores>,
    visuals: Vec<EmbeddingVector>,
}

impl ScoreTimeline {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a frame. Frame indices must strictly increase within a video.
    pub fn push(
        &mut self,
        video: &str,
        frame: usize,
        visual: EmbeddingVector,
        score: Score,
        raw_score: Score,
        source: Source,
    ) -> Result<FrameScore> {
        if let Some(last) = self.video(video).and_then(|v| v.frames.last()) {
            if frame <= last.frame {
                return Err(Error::Invalid(format!(
                    "frame {frame} of video {video} does not follow frame {}",
                    last.frame
                )));
            }
        }
        let visual_ref = VisualRef(self.visuals.len());
        self.visuals.push(visual);
        let entry = FrameScore {
            video: video.to_string(),
            frame,
            score,
            raw_score,
            source,
            visual: visual_ref,
        };
        let slot = match self.position(video) {
            Some(i) => i,
            None => {
                self.videos.push(VideoScores {
                    id: video.to_string(),
                    frames: Vec::new(),
                });
                self.videos.len() - 1
            }
        };
        self.videos[slot].frames.push(entry.clone());
        Ok(entry)
    }

    fn position(&self, video: &str) -> Option<usize> {
        // The video being processed is almost always the last one.
        self.videos.iter().rposition(|v| v.id == video)
    }

    pub fn video(&self, video: &str) -> Option<&VideoScores> {
        self.position(video).map(|i| &self.videos[i])
    }

    pub fn videos(&self) -> &[VideoScores] {
        &self.videos
    }

    pub(crate) fn videos_mut(&mut self) -> &mut [VideoScores] {
        &mut self.videos
    }

    pub fn visual(&self, r: VisualRef) -> Option<&EmbeddingVector> {
        self.visuals.get(r.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = &FrameScore> {
        self.videos.iter().flat_map(|v| v.frames.iter())
    }

    pub fn len(&self) -> usize {
        self.visuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visuals.is_empty()
    }

    /// Final scores of at most `count` frames of `video` emitted before `frame`,
    /// most recent last.
    pub fn recent_scores(&self, video: &str, frame: usize, count: usize) -> Vec<f64> {
        let Some(v) = self.video(video) else {
            return Vec::new();
        };
        let end = v.frames.partition_point(|f| f.frame < frame);
        let start = end.saturating_sub(count);
        v.frames[start..end].iter().map(|f| f.score.get()).collect()
    }

    /// One JSON object per line, in video then frame order.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_entries(path, self.entries())
    }
}

pub fn write_entries<'a>(path: &Path, entries: impl Iterator<Item = &'a FrameScore>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for entry in entries {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<FrameScore>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line)?);
    }
    Ok(entries)
}

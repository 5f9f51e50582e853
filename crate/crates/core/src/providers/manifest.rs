use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::chat::{FrameRef, ImageRef};
use crate::providers::rcvd::DEFAULT_STRIDE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub embedding_path: PathBuf,
    pub n_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<PathBuf>,
}

/// Dataset manifest: the videos to score, in processing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub videos: Vec<VideoEntry>,
    #[serde(default = "default_stride")]
    pub stride: u32,
    pub dataset_name: String,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_stride() -> u32 {
    DEFAULT_STRIDE
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text)?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seen = std::collections::BTreeSet::new();
        for v in &manifest.videos {
            if !seen.insert(v.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate video id {}", v.id)));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn total_frames(&self) -> usize {
        self.videos.iter().map(|v| v.n_frames).sum()
    }

    /// Image handle for a sampled frame. With an `image_dir`, the frame is
    /// the file `<image_dir>/<index:06>.jpg` (or `.png` if only that exists).
    pub fn image_ref(&self, video: &VideoEntry, index: usize) -> ImageRef {
        let path = video.image_dir.as_ref().map(|dir| {
            let dir = self.resolve(dir);
            let jpg = dir.join(format!("{index:06}.jpg"));
            let png = dir.join(format!("{index:06}.png"));
            if !jpg.exists() && png.exists() {
                png
            } else {
                jpg
            }
        });
        ImageRef {
            frame: FrameRef {
                video: video.id.clone(),
                index,
            },
            path,
        }
    }
}

/// Uniform permutation of the video order under `seed`; each video's frames
/// are untouched.
pub fn shuffle_manifest(manifest: &Manifest, seed: u64) -> Manifest {
    let mut shuffled = manifest.clone();
    shuffled.videos.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    shuffled
}

/// Anomalous intervals per video, as inclusive `[start, end]` sampled-grid
/// indices. Normal videos map to an empty list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Annotations(pub BTreeMap<String, Vec<[usize; 2]>>);

impl Annotations {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let annotations: Annotations = serde_json::from_str(&text)?;
        for (video, spans) in &annotations.0 {
            if let Some([s, e]) = spans.iter().find(|[s, e]| s > e) {
                return Err(Error::Invalid(format!(
                    "video {video}: interval [{s}, {e}] is reversed"
                )));
            }
        }
        Ok(annotations)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn spans(&self, video: &str) -> Option<&[[usize; 2]]> {
        self.0.get(video).map(Vec::as_slice)
    }

    /// Ground-truth label of one frame; `None` if the video is unannotated.
    pub fn label(&self, video: &str, frame: usize) -> Option<u8> {
        self.spans(video)
            .map(|spans| spans.iter().any(|[s, e]| (*s..=*e).contains(&frame)) as u8)
    }
}

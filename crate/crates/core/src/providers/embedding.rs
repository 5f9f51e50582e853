use crate::error::{Error, Result};
use crate::model::EmbeddingVector;
use crate::providers::manifest::{Manifest, VideoEntry};
use crate::providers::rcvd::{load_embedding_file, VideoEmbeddings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub image_by_ref: bool,
    pub text: bool,
}

/// Image and text encoders of one shared embedding space.
pub trait EmbeddingSource: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn dimension(&self) -> usize;

    fn embed_video(&self, _manifest: &Manifest, _video: &VideoEntry) -> Result<VideoEmbeddings> {
        Err(Error::CapabilityMissing("image_by_ref"))
    }

    fn embed_text(&self, _texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Err(Error::CapabilityMissing("text"))
    }
}

/// Text embeddings with the output contract checked: one unit vector of the
/// source's dimension per input, in input order.
pub fn embed_text(source: &dyn EmbeddingSource, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
    if !source.capabilities().text {
        return Err(Error::CapabilityMissing("text"));
    }
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = source.embed_text(texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::Invalid(format!(
            "text encoder returned {} vectors for {} inputs",
            vectors.len(),
            texts.len()
        )));
    }
    if let Some(v) = vectors.iter().find(|v| v.dim() != source.dimension()) {
        return Err(Error::DimensionMismatch {
            expected: source.dimension(),
            actual: v.dim(),
        });
    }
    Ok(vectors)
}

/// Frame embeddings read from the RCVD files a manifest points at.
#[derive(Debug, Clone)]
pub struct FileEmbeddings {
    dim: usize,
}

impl FileEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl EmbeddingSource for FileEmbeddings {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            image_by_ref: true,
            text: false,
        }
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_video(&self, manifest: &Manifest, video: &VideoEntry) -> Result<VideoEmbeddings> {
        let path = manifest.resolve(&video.embedding_path);
        let loaded = load_embedding_file(&path)?;
        if loaded.frames.len() != video.n_frames {
            return Err(Error::EmbeddingFile {
                path,
                reason: format!(
                    "manifest lists {} frames, file holds {}",
                    video.n_frames,
                    loaded.frames.len()
                ),
            });
        }
        if let Some(f) = loaded.frames.first() {
            if f.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: f.dim(),
                });
            }
        }
        Ok(loaded)
    }
}

/// Frames from one source, text from another.
pub struct Combined<I, T> {
    pub images: I,
    pub text: T,
}

impl<I: EmbeddingSource, T: EmbeddingSource> EmbeddingSource for Combined<I, T> {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            image_by_ref: self.images.capabilities().image_by_ref,
            text: self.text.capabilities().text,
        }
    }

    fn dimension(&self) -> usize {
        self.images.dimension()
    }

    fn embed_video(&self, manifest: &Manifest, video: &VideoEntry) -> Result<VideoEmbeddings> {
        self.images.embed_video(manifest, video)
    }

    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.text.embed_text(texts)
    }
}

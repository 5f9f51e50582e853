//! A deterministic stand-in for the vision-language encoder, the frame
//! analyzer and the prompt reasoner.
//!
//! Frames are drawn around cluster centroids in a shared embedding space;
//! a prototype text that names `cluster-<k>` embeds near centroid `k`, any
//! other text embeds in a hash-seeded random direction. The analyzer answers
//! from a per-frame script whose score follows the frame's cluster polarity
//! plus noise, and the reasoner turns the sampled cases into cluster-naming
//! prototypes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conscious::options::format_score;
use crate::conscious::prompt::{parse_codebook, PromptTemplates, ABNORMAL_HEADER, NORMAL_HEADER};
use crate::error::{Error, Result};
use crate::model::{EmbeddingVector, Polarity, Prototype};
use crate::providers::chat::{ChatClient, ChatError, FrameRef, ImageRef};
use crate::providers::embedding::{Capabilities, EmbeddingSource};
use crate::providers::manifest::{Annotations, Manifest, VideoEntry};
use crate::providers::rcvd::{RcvdFile, VideoEmbeddings, DEFAULT_STRIDE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    pub dim: usize,
    pub normal_clusters: usize,
    pub anomaly_clusters: usize,
    /// Weight of each cluster's own direction against the shared base
    /// direction. Zero makes all centroids identical.
    pub separation: f64,
    /// Magnitude of per-frame noise around the centroid.
    pub spread: f64,
    /// AR(1) coefficient of the frame noise within a video.
    pub temporal_correlation: f64,
    /// Magnitude of a per-video background offset.
    pub scene_strength: f64,
    /// Noise added to a centroid when a prototype text names its cluster.
    pub text_jitter: f64,
    pub anomalous_video_fraction: f64,
    /// Inclusive bounds on the length of an anomalous interval, in frames.
    pub anomaly_length: [usize; 2],
    /// Inclusive bounds on the number of normal scene segments per video.
    pub segments: [usize; 2],
    /// Standard deviation of the analyzer's score noise.
    pub oracle_noise: f64,
    /// Probability that the analyzer's first answer for a frame is garbage.
    pub malformed_rate: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            dim: 64,
            normal_clusters: 6,
            anomaly_clusters: 3,
            separation: 1.5,
            spread: 0.35,
            temporal_correlation: 0.9,
            scene_strength: 0.3,
            text_jitter: 0.2,
            anomalous_video_fraction: 0.5,
            anomaly_length: [30, 90],
            segments: [1, 3],
            oracle_noise: 0.1,
            malformed_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub centroid: EmbeddingVector,
    pub polarity: Polarity,
    pub spread: f64,
}

pub fn cluster_name(index: usize) -> String {
    format!("cluster-{index}")
}

/// Index `k` of the first `cluster-<k>` token in `text`.
pub fn named_cluster(text: &str) -> Option<usize> {
    text.match_indices("cluster-").find_map(|(at, m)| {
        let digits: String = text[at + m.len()..].chars().take_while(char::is_ascii_digit).collect();
        digits.parse().ok()
    })
}

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub spec: WorldSpec,
    pub clusters: Vec<Cluster>,
}

impl SyntheticWorld {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        if spec.normal_clusters == 0 || spec.anomaly_clusters == 0 {
            return Err(Error::Invalid(
                "synthetic world needs at least one normal and one anomaly cluster".into(),
            ));
        }
        if spec.dim < 2 {
            return Err(Error::Invalid("synthetic dimension must be at least 2".into()));
        }
        if spec.anomaly_length[0] == 0 || spec.anomaly_length[0] > spec.anomaly_length[1] {
            return Err(Error::Invalid("anomaly_length must be a non-empty range".into()));
        }
        if spec.segments[0] == 0 || spec.segments[0] > spec.segments[1] {
            return Err(Error::Invalid(
                "segments must be a non-empty range of positive counts".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let base = gaussian(&mut rng, spec.dim);
        let total = spec.normal_clusters + spec.anomaly_clusters;
        let clusters = (0..total)
            .map(|k| {
                let own = gaussian(&mut rng, spec.dim);
                let raw = base.iter().zip(&own).map(|(b, o)| b + spec.separation * o).collect();
                Ok(Cluster {
                    centroid: EmbeddingVector::normalize(raw)?,
                    polarity: if k < spec.normal_clusters {
                        Polarity::Normal
                    } else {
                        Polarity::Abnormal
                    },
                    spread: spec.spread,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, clusters })
    }

    /// Deterministic text embedding; see the module docs.
    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(text) ^ self.spec.seed.rotate_left(17));
        let noise = gaussian(&mut rng, self.spec.dim);
        match named_cluster(text).and_then(|k| self.clusters.get(k)) {
            Some(cluster) => EmbeddingVector::normalize(
                cluster
                    .centroid
                    .values()
                    .iter()
                    .zip(&noise)
                    .map(|(c, n)| c + self.spec.text_jitter * n)
                    .collect(),
            ),
            None => EmbeddingVector::normalize(noise),
        }
    }

    /// Builds `videos` videos of `frames_per_video` sampled frames each.
    pub fn generate(&self, videos: usize, frames_per_video: usize) -> Result<SyntheticDataset> {
        if frames_per_video == 0 {
            return Err(Error::Invalid("frames_per_video must be positive".into()));
        }
        let spec = &self.spec;
        let mut generated = Vec::with_capacity(videos);
        let mut annotations = Annotations::default();
        for v in 0..videos {
            let id = format!("syn-{v:03}");
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(v as u64 + 1);

            // Normal scene segments.
            let n_segments = rng.gen_range(spec.segments[0]..=spec.segments[1]).min(frames_per_video);
            let mut cuts: BTreeSet<usize> = BTreeSet::new();
            while cuts.len() + 1 < n_segments {
                cuts.insert(rng.gen_range(1..frames_per_video));
            }
            let mut clusters = vec![0usize; frames_per_video];
            let mut start = 0;
            for end in cuts.iter().copied().chain([frames_per_video]) {
                let c = rng.gen_range(0..spec.normal_clusters);
                clusters[start..end].fill(c);
                start = end;
            }

            // Optional anomalous interval.
            let mut spans = Vec::new();
            if rng.gen_bool(spec.anomalous_video_fraction.clamp(0.0, 1.0)) {
                let len = rng
                    .gen_range(spec.anomaly_length[0]..=spec.anomaly_length[1])
                    .min(frames_per_video);
                let at = rng.gen_range(0..=frames_per_video - len);
                let c = spec.normal_clusters + rng.gen_range(0..spec.anomaly_clusters);
                clusters[at..at + len].fill(c);
                spans.push([at, at + len - 1]);
            }
            annotations.0.insert(id.clone(), spans);

            let scene = gaussian(&mut rng, spec.dim);
            let mut noise = gaussian(&mut rng, spec.dim);
            let rho = spec.temporal_correlation.clamp(0.0, 0.9999);
            let fresh = (1.0 - rho * rho).sqrt();
            let mut frames = Vec::with_capacity(frames_per_video);
            let mut raw_rows = Vec::with_capacity(frames_per_video * spec.dim);
            let mut oracle = Vec::with_capacity(frames_per_video);
            for (t, &c) in clusters.iter().enumerate() {
                if t > 0 {
                    let step = gaussian(&mut rng, spec.dim);
                    for (z, s) in noise.iter_mut().zip(&step) {
                        *z = rho * *z + fresh * s;
                    }
                }
                let cluster = &self.clusters[c];
                // Rounded through f32 so that the in-memory frames equal what
                // loading the written RCVD file produces.
                let row: Vec<f32> = cluster
                    .centroid
                    .values()
                    .iter()
                    .zip(&scene)
                    .zip(&noise)
                    .map(|((m, s), z)| (m + spec.scene_strength * s + cluster.spread * z) as f32)
                    .collect();
                frames.push(EmbeddingVector::normalize(row.iter().map(|&x| x as f64).collect())?);
                raw_rows.extend_from_slice(&row);

                let base = match cluster.polarity {
                    Polarity::Normal => 0.1,
                    Polarity::Abnormal => 0.9,
                };
                let noisy = base + spec.oracle_noise * rng.sample::<f64, _>(StandardNormal);
                oracle.push(OracleFrame {
                    cluster: c,
                    score: noisy.clamp(0.0, 1.0),
                    malformed: rng.gen_bool(spec.malformed_rate.clamp(0.0, 1.0)),
                });
            }
            generated.push(SyntheticVideo {
                entry: VideoEntry {
                    id: id.clone(),
                    embedding_path: format!("embeddings/{id}.rcvd").into(),
                    n_frames: frames_per_video,
                    image_dir: None,
                },
                frames,
                raw: RcvdFile::new(spec.dim as u32, DEFAULT_STRIDE, raw_rows)?,
                oracle,
            });
        }
        let manifest = Manifest {
            videos: generated.iter().map(|v| v.entry.clone()).collect(),
            stride: DEFAULT_STRIDE,
            dataset_name: format!("synthetic-{}", spec.seed),
            base_dir: Default::default(),
        };
        Ok(SyntheticDataset {
            world: self.clone(),
            manifest,
            videos: generated,
            annotations,
        })
    }
}

/// What the scripted analyzer knows about one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFrame {
    pub cluster: usize,
    /// Noisy score before it is snapped to an option.
    pub score: f64,
    pub malformed: bool,
}

impl OracleFrame {
    /// The score the analyzer reports: the nearest tenth in `[0.1, 0.9]`
    /// when options are offered, else the raw score at two decimals.
    pub fn reported(&self, with_options: bool) -> f64 {
        if with_options {
            ((self.score * 10.0).round() / 10.0).clamp(0.1, 0.9)
        } else {
            (self.score * 100.0).round() / 100.0
        }
    }

    pub fn response(&self, with_options: bool) -> String {
        let name = cluster_name(self.cluster);
        format!(
            "Events: 1. A {name} event takes place in the scene.\nWorst event: the {name} event\nSummary: The frame shows a {name} event in the scene.\nTotal degree of violation: {}",
            format_score(self.reported(with_options))
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub entry: VideoEntry,
    pub frames: Vec<EmbeddingVector>,
    pub raw: RcvdFile,
    pub oracle: Vec<OracleFrame>,
}

impl SyntheticVideo {
    pub fn labels(&self, world: &SyntheticWorld) -> Vec<u8> {
        self.oracle
            .iter()
            .map(|o| (world.clusters[o.cluster].polarity == Polarity::Abnormal) as u8)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub world: SyntheticWorld,
    pub manifest: Manifest,
    pub videos: Vec<SyntheticVideo>,
    pub annotations: Annotations,
}

impl SyntheticDataset {
    fn video(&self, id: &str) -> Option<&SyntheticVideo> {
        self.videos.iter().find(|v| v.entry.id == id)
    }

    /// Writes `manifest.json`, `annotations.json`, `oracle.json`,
    /// `world.json` and one RCVD file per video under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let emb_dir = dir.join("embeddings");
        std::fs::create_dir_all(&emb_dir).map_err(|e| Error::io(&emb_dir, e))?;
        for v in &self.videos {
            v.raw.write(&dir.join(&v.entry.embedding_path))?;
        }
        self.manifest.save(&dir.join("manifest.json"))?;
        self.annotations.save(&dir.join("annotations.json"))?;
        let oracle: BTreeMap<&str, &[OracleFrame]> = self
            .videos
            .iter()
            .map(|v| (v.entry.id.as_str(), v.oracle.as_slice()))
            .collect();
        let write_json = |name: &str, value: &dyn erased::Json| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, value.to_json()?).map_err(|e| Error::io(&path, e))
        };
        write_json("oracle.json", &oracle)?;
        write_json("world.json", &self.world.spec)?;
        Ok(())
    }

    /// The analyzer's score for every frame, as if each one were escalated.
    pub fn oracle_scores(&self, with_options: bool) -> Vec<(String, Vec<f64>)> {
        self.videos
            .iter()
            .map(|v| {
                (
                    v.entry.id.clone(),
                    v.oracle.iter().map(|o| o.reported(with_options)).collect(),
                )
            })
            .collect()
    }

    pub fn total_frames(&self) -> usize {
        self.videos.iter().map(|v| v.frames.len()).sum()
    }

    pub fn embeddings(&self) -> SyntheticEmbeddings<'_> {
        SyntheticEmbeddings { dataset: self }
    }

    pub fn analyzer(&self) -> OracleAnalyzer<'_> {
        OracleAnalyzer {
            dataset: self,
            served_malformed: Mutex::new(BTreeSet::new()),
        }
    }
}

mod erased {
    pub trait Json {
        fn to_json(&self) -> crate::error::Result<String>;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> crate::error::Result<String> {
            Ok(serde_json::to_string_pretty(self)?)
        }
    }
}

/// Image and text encoder over a synthetic dataset.
pub struct SyntheticEmbeddings<'a> {
    dataset: &'a SyntheticDataset,
}

impl EmbeddingSource for SyntheticEmbeddings<'_> {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            image_by_ref: true,
            text: true,
        }
    }

    fn dimension(&self) -> usize {
        self.dataset.world.spec.dim
    }

    fn embed_video(&self, _manifest: &Manifest, video: &VideoEntry) -> Result<VideoEmbeddings> {
        let v = self
            .dataset
            .video(&video.id)
            .ok_or_else(|| Error::Invalid(format!("unknown synthetic video {}", video.id)))?;
        Ok(VideoEmbeddings {
            stride: DEFAULT_STRIDE,
            frames: v.frames.clone(),
        })
    }

    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.dataset.world.embed_text(t)).collect()
    }
}

/// Scripted frame analyzer. A frame flagged `malformed` gets one garbage
/// answer before the real one.
pub struct OracleAnalyzer<'a> {
    dataset: &'a SyntheticDataset,
    served_malformed: Mutex<BTreeSet<FrameRef>>,
}

impl ChatClient for OracleAnalyzer<'_> {
    fn chat(&self, instruction: &str, image: Option<&ImageRef>) -> Result<String, ChatError> {
        let image = image.ok_or_else(|| ChatError::Image("the analyzer needs a frame".into()))?;
        let frame = self
            .dataset
            .video(&image.frame.video)
            .and_then(|v| v.oracle.get(image.frame.index))
            .ok_or_else(|| ChatError::Image(format!("no scripted frame {:?}", image.frame)))?;
        if frame.malformed && self.served_malformed.lock().unwrap().insert(image.frame.clone()) {
            return Ok("I am not able to assess this image.".into());
        }
        Ok(frame.response(instruction.contains("OPTIONS")))
    }
}

/// Scripted reasoner: names every cluster mentioned in the sampled cases,
/// assigns it the majority polarity of its case scores, and keeps the
/// previous prototypes after the new ones.
#[derive(Debug, Clone, Default)]
pub struct SyntheticReasoner {
    pub templates: PromptTemplates,
}

const PHRASINGS: [&str; 2] = ["people take part in a {name} event", "a close view of {name} activity"];

impl SyntheticReasoner {
    pub fn respond(&self, instruction: &str) -> String {
        let case_start = instruction
            .lines()
            .position(|l| l.starts_with("Case "))
            .unwrap_or(usize::MAX);
        let head: String = instruction.lines().take(case_start).collect::<Vec<_>>().join("\n");
        let (old_normal, old_abnormal) = parse_codebook(&head, &self.templates);

        // cluster -> (cases, cases scored above 0.5)
        let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for line in instruction.lines().filter(|l| l.starts_with("Case ")) {
            let Some((head, description)) = line.split_once("):") else {
                continue;
            };
            let Some(score) = head.rsplit(' ').next().and_then(|s| s.parse::<f64>().ok()) else {
                continue;
            };
            if let Some(k) = named_cluster(description) {
                let entry = tally.entry(k).or_default();
                entry.0 += 1;
                entry.1 += (score > 0.5) as usize;
            }
        }
        let mut ranked: Vec<(usize, usize, bool)> =
            tally.into_iter().map(|(k, (n, high))| (k, n, 2 * high > n)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

        let section = |abnormal: bool, old: &[Prototype]| -> Vec<String> {
            let clusters: Vec<usize> = ranked.iter().filter(|r| r.2 == abnormal).map(|r| r.0).collect();
            let mut lines: Vec<String> = PHRASINGS
                .iter()
                .flat_map(|p| clusters.iter().map(move |&k| p.replace("{name}", &cluster_name(k))))
                .collect();
            lines.extend(old.iter().map(|p| p.text().to_string()));
            lines
        };
        let mut out = String::from("Here is the revised code book.\n\n");
        for (header, lines) in [
            (NORMAL_HEADER, section(false, &old_normal)),
            (ABNORMAL_HEADER, section(true, &old_abnormal)),
        ] {
            out.push_str(header);
            out.push('\n');
            for (i, l) in lines.iter().enumerate() {
                out.push_str(&format!(
                    "{}. {}\n",
                    i + 1,
                    self.templates.prototype.replace("{prototype}", l)
                ));
            }
        }
        out
    }
}

impl ChatClient for SyntheticReasoner {
    fn chat(&self, instruction: &str, _image: Option<&ImageRef>) -> Result<String, ChatError> {
        Ok(self.respond(instruction))
    }
}

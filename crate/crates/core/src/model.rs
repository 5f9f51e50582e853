//! Domain types shared by the reflex and conscious pathways.
//!
//! Every type here is an immutable value with a canonical JSON encoding
//! (snake_case field names). Constructors and deserializers enforce the same
//! invariants, so a value that exists is a valid value.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};

/// Allowed deviation from unit norm for a stored embedding.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// A unit-normalized embedding from the shared vision-language space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmbedding")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawEmbedding {
    values: Vec<f64>,
}

impl TryFrom<RawEmbedding> for EmbeddingVector {
    type Error = Error;

    fn try_from(raw: RawEmbedding) -> Result<Self> {
        EmbeddingVector::from_unit(raw.values)
    }
}

impl EmbeddingVector {
    /// Scales `raw` to unit length. Fails on empty, zero or non-finite input.
    pub fn normalize(mut raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Invalid("cannot normalize an empty vector".into()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("vector has non-finite entries".into()));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Invalid("cannot normalize a zero vector".into()));
        }
        for v in &mut raw {
            *v /= norm;
        }
        Ok(Self { values: raw })
    }

    /// Wraps values that are already unit length (within [`UNIT_NORM_TOLERANCE`]).
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("embedding must be non-empty and finite".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Invalid(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }
}

/// An anomaly score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(f64);

impl Score {
    pub const UNCERTAIN: Score = Score(0.5);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Score(value))
        } else {
            Err(Error::Invalid(format!("score {value} outside [0, 1]")))
        }
    }

    /// Producer-boundary constructor: model clients emit values like
    /// `1.00001`, which are clamped. NaN is still rejected.
    pub fn clamped(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(Error::Invalid("score is NaN".into()));
        }
        Ok(Score(value.clamp(0.0, 1.0)))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Score {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Score::new(value)
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Normal,
    Abnormal,
}

/// One event description of the knowledge prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPrototype")]
pub struct Prototype {
    text: String,
    polarity: Polarity,
}

#[derive(Deserialize)]
struct RawPrototype {
    text: String,
    polarity: Polarity,
}

impl TryFrom<RawPrototype> for Prototype {
    type Error = Error;

    fn try_from(raw: RawPrototype) -> Result<Self> {
        Prototype::new(raw.text, raw.polarity)
    }
}

impl Prototype {
    /// Text is trimmed; it must be non-empty and fit on one line.
    pub fn new(text: impl AsRef<str>, polarity: Polarity) -> Result<Self> {
        let text = text.as_ref().trim();
        if text.is_empty() {
            return Err(Error::Invalid("prototype text is empty".into()));
        }
        if text.contains(['\n', '\r']) {
            return Err(Error::Invalid("prototype text spans several lines".into()));
        }
        Ok(Self {
            text: text.to_string(),
            polarity,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }
}

/// The ordered prototype list shared by both pathways, stamped with the
/// number of reasoner updates it has been through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPrompt")]
pub struct KnowledgePrompt {
    prototypes: Vec<Prototype>,
    epoch: u64,
}

#[derive(Deserialize)]
struct RawPrompt {
    prototypes: Vec<Prototype>,
    epoch: u64,
}

impl TryFrom<RawPrompt> for KnowledgePrompt {
    type Error = Error;

    fn try_from(raw: RawPrompt) -> Result<Self> {
        KnowledgePrompt::new(raw.prototypes, raw.epoch)
    }
}

const INITIAL_NORMAL: [&str; 3] = [
    "People normally walk, stand, or sit while doing daily things.",
    "Cars drive on the road normally.",
    "Normal scene without any event taking place.",
];

const INITIAL_ABNORMAL: [&str; 3] = [
    "People are committing violent criminal activities.",
    "People have strange postures that reflect possible crimes.",
    "Accidents/disasters happen in the background.",
];

impl KnowledgePrompt {
    /// Requires at least one prototype of each polarity.
    pub fn new(prototypes: Vec<Prototype>, epoch: u64) -> Result<Self> {
        let normal = prototypes.iter().filter(|p| p.polarity == Polarity::Normal).count();
        let abnormal = prototypes.len() - normal;
        if normal == 0 || abnormal == 0 {
            return Err(Error::Invalid(format!(
                "knowledge prompt needs both polarities (got {normal} normal, {abnormal} abnormal)"
            )));
        }
        Ok(Self { prototypes, epoch })
    }

    /// Constructor for reasoner output: additionally caps each polarity at
    /// `length / 2`.
    pub fn with_limit(prototypes: Vec<Prototype>, epoch: u64, length: usize) -> Result<Self> {
        let prompt = Self::new(prototypes, epoch)?;
        let half = length / 2;
        let (normal, abnormal) = prompt.counts();
        if normal > half || abnormal > half {
            return Err(Error::Invalid(format!(
                "prompt exceeds {half} prototypes per polarity ({normal} normal, {abnormal} abnormal)"
            )));
        }
        Ok(prompt)
    }

    /// The hand-written starting prompt: three general normal and three
    /// general abnormal event descriptions.
    pub fn initial() -> Self {
        let prototypes = INITIAL_NORMAL
            .iter()
            .map(|t| Prototype::new(t, Polarity::Normal))
            .chain(INITIAL_ABNORMAL.iter().map(|t| Prototype::new(t, Polarity::Abnormal)))
            .collect::<Result<Vec<_>>>()
            .expect("initial prototypes are valid");
        Self { prototypes, epoch: 0 }
    }

    pub fn prototypes(&self) -> &[Prototype] {
        &self.prototypes
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// `(normal, abnormal)` prototype counts.
    pub fn counts(&self) -> (usize, usize) {
        let normal = self.of(Polarity::Normal).count();
        (normal, self.prototypes.len() - normal)
    }

    pub fn of(&self, polarity: Polarity) -> impl Iterator<Item = &Prototype> {
        self.prototypes.iter().filter(move |p| p.polarity == polarity)
    }
}

/// Gamma-scaled cosine similarities of a frame to each prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub values: Vec<f64>,
    pub epoch: u64,
}

impl DecisionVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub visual: EmbeddingVector,
    pub decision: DecisionVector,
    pub score: Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Reflex,
    Conscious,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Reflex => "reflex",
            Source::Conscious => "conscious",
        }
    }
}

/// Index into the visual store of a [`ScoreTimeline`](crate::timeline::ScoreTimeline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VisualRef(pub usize);

/// One emitted per-frame score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub video: String,
    /// Index on the sampled grid (one entry per stride).
    pub frame: usize,
    pub score: Score,
    /// Score before temporal smoothing; equals `score` for conscious frames.
    pub raw_score: Score,
    pub source: Source,
    pub visual: VisualRef,
}

/// A `(description, score)` pair produced by the frame analyzer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionPair {
    pub description: String,
    pub score: Score,
}

/// How the reflex pathway aggregates the scores of neighbouring records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Minimum over the `a * epsilon` neighbourhood.
    #[default]
    Min,
    /// Mean over the `a * epsilon` neighbourhood.
    Mean,
    /// Score of the single nearest record (reflex function disabled).
    Nearest,
}

/// Switches for component ablations. All on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Refined prompts rebuild the reflex decision space.
    pub feedback_to_reflex: bool,
    /// Refined prompts reach the frame analyzer instruction.
    pub feedback_to_vlm: bool,
    /// The analyzer picks from the fixed score options.
    pub options: bool,
    /// Reflex scores are averaged over the causal window.
    pub window_smoothing: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            feedback_to_reflex: true,
            feedback_to_vlm: true,
            options: true,
            window_smoothing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Coverage radius of each memory record after the first prompt update.
    pub epsilon: f64,
    /// Coverage radius while the hand-written initial prompt is in use.
    pub epsilon_init: f64,
    /// Logit scale applied to cosine similarities.
    pub gamma: f64,
    /// Neighbours averaged into a newly inserted record's score.
    pub k: usize,
    /// Causal window length for reflex score smoothing.
    pub c: usize,
    /// Neighbourhood radius multiplier: neighbours lie within `a * epsilon`.
    pub a: f64,
    /// Prototype budget of a refined prompt, split half normal / half abnormal.
    pub l: usize,
    /// Videos between reasoner rounds.
    pub n: usize,
    /// Size of the balanced description subset sent to the reasoner.
    pub b: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
    /// Extra analyzer attempts when its output cannot be parsed.
    pub vlm_parse_retries: u32,
    pub ablation: Ablation,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            epsilon_init: 1.2,
            gamma: 100.0,
            k: 16,
            c: 4,
            a: 2.0,
            l: 20,
            n: 10,
            b: 90,
            seed: 0,
            aggregation: Aggregation::Min,
            vlm_parse_retries: 2,
            ablation: Ablation::default(),
        }
    }
}

impl EngineConfig {
    /// Returns the config unchanged if every field is within bounds.
    pub fn validate(self) -> Result<Self, ConfigError> {
        let fail = |field, bound| Err(ConfigError { field, bound });
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail("epsilon", "> 0");
        }
        if !(self.epsilon_init.is_finite() && self.epsilon_init > 0.0) {
            return fail("epsilon_init", "> 0");
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return fail("gamma", "> 0");
        }
        if self.k == 0 {
            return fail("K", "≥ 1");
        }
        if self.c == 0 {
            return fail("C", "≥ 1");
        }
        if !(self.a.is_finite() && self.a >= 1.0) {
            return fail("a", "≥ 1");
        }
        if self.l == 0 {
            return fail("L", "≥ 2");
        }
        if !self.l.is_multiple_of(2) {
            return fail("L", "even");
        }
        if self.n == 0 {
            return fail("N", "≥ 1");
        }
        if self.b == 0 {
            return fail("b", "≥ 2");
        }
        if !self.b.is_multiple_of(2) {
            return fail("b", "even");
        }
        Ok(self)
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OPTION_COUNT: usize = 9;

const DEFAULT_OPTIONS: &str = include_str!("../../templates/options.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOption {
    pub score: f64,
    pub explanation: String,
}

/// The nine anomaly scores the analyzer may choose from, each with an
/// explanation grounded in prototype alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOptions")]
pub struct OptionsList {
    version: u32,
    entries: Vec<ScoreOption>,
}

#[derive(Deserialize)]
struct RawOptions {
    #[serde(default = "one")]
    version: u32,
    entries: Vec<ScoreOption>,
}

fn one() -> u32 {
    1
}

impl TryFrom<RawOptions> for OptionsList {
    type Error = Error;

    fn try_from(raw: RawOptions) -> Result<Self> {
        OptionsList::new(raw.version, raw.entries)
    }
}

impl OptionsList {
    pub fn new(version: u32, entries: Vec<ScoreOption>) -> Result<Self> {
        if entries.len() != OPTION_COUNT {
            return Err(Error::Invalid(format!(
                "options list needs {OPTION_COUNT} entries, got {}",
                entries.len()
            )));
        }
        for e in &entries {
            if !(e.score > 0.0 && e.score < 1.0) {
                return Err(Error::Invalid(format!("option score {} outside (0, 1)", e.score)));
            }
            if e.explanation.trim().is_empty() || e.explanation.contains('\n') {
                return Err(Error::Invalid(format!(
                    "option {} needs a one-line explanation",
                    e.score
                )));
            }
        }
        if entries.windows(2).any(|w| w[0].score >= w[1].score) {
            return Err(Error::Invalid("option scores must strictly increase".into()));
        }
        Ok(Self { version, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn entries(&self) -> &[ScoreOption] {
        &self.entries
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.score)
    }

    /// The option closest to `value`; ties go to the lower option.
    pub fn nearest(&self, value: f64) -> f64 {
        self.scores()
            .min_by(|a, b| (a - value).abs().total_cmp(&(b - value).abs()))
            .expect("options list is never empty")
    }

    /// One `score: explanation` line per option.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}: {}", format_score(e.score), e.explanation))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl Default for OptionsList {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_OPTIONS).expect("bundled options fixture is valid")
    }
}

/// Shortest decimal form, e.g. `0.1` rather than `0.1000`.
pub(crate) fn format_score(score: f64) -> String {
    let s = format!("{score:.4}");
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').unwrap_or(s).to_string()
}

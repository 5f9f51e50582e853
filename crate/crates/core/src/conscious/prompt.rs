//! Instruction assembly for the frame analyzer and the prompt reasoner, and
//! the code-book text format shared by both directions.

use std::path::Path;

use crate::conscious::options::{format_score, OptionsList};
use crate::error::{Error, Result};
use crate::model::{DescriptionPair, KnowledgePrompt, Polarity, Prototype};

pub const NORMAL_HEADER: &str = "Normal event prototypes:";
pub const ABNORMAL_HEADER: &str = "Abnormal event prototypes:";

const VLM_TEMPLATE: &str = include_str!("../../templates/vlm_instruction.txt");
const REASONER_TEMPLATE: &str = include_str!("../../templates/reasoner_instruction.txt");
const PROTOTYPE_TEMPLATE: &str = include_str!("../../templates/prototype.txt");

const OPTIONS_RULE: &str = "Choose the total degree of violation from OPTIONS. Do not use a score that is not listed.";
const FREE_RULE: &str = "Rate the total degree of violation as a real number between 0 and 1.";

/// Versioned instruction templates. Placeholders use `{name}` syntax.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub vlm: String,
    pub reasoner: String,
    /// Wraps a prototype description, e.g. `An image contains: {prototype}`.
    pub prototype: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            vlm: VLM_TEMPLATE.to_string(),
            reasoner: REASONER_TEMPLATE.to_string(),
            prototype: PROTOTYPE_TEMPLATE.trim().to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads `vlm_instruction.txt`, `reasoner_instruction.txt` and
    /// `prototype.txt` from `dir`, falling back to the bundled version for
    /// any file that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let defaults = Self::default();
        let read = |name: &str, fallback: String| -> Result<String> {
            let path = dir.join(name);
            if path.exists() {
                std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
            } else {
                Ok(fallback)
            }
        };
        let templates = Self {
            vlm: read("vlm_instruction.txt", defaults.vlm)?,
            reasoner: read("reasoner_instruction.txt", defaults.reasoner)?,
            prototype: read("prototype.txt", defaults.prototype)?.trim().to_string(),
        };
        if !templates.prototype.contains("{prototype}") {
            return Err(Error::Invalid("prototype template lacks {prototype}".into()));
        }
        Ok(templates)
    }

    /// The text a prototype is embedded as.
    pub fn prototype_line(&self, prototype: &Prototype) -> String {
        self.prototype.replace("{prototype}", prototype.text())
    }

    pub fn embedding_texts(&self, prompt: &KnowledgePrompt) -> Vec<String> {
        prompt.prototypes().iter().map(|p| self.prototype_line(p)).collect()
    }

    fn prototype_prefix(&self) -> &str {
        self.prototype.split("{prototype}").next().unwrap_or("")
    }

    fn prototype_suffix(&self) -> &str {
        self.prototype.split("{prototype}").nth(1).unwrap_or("")
    }
}

/// Numbered normal section followed by the numbered abnormal section.
pub fn render_codebook(prompt: &KnowledgePrompt, templates: &PromptTemplates) -> String {
    let mut out = String::new();
    for (header, polarity) in [(NORMAL_HEADER, Polarity::Normal), (ABNORMAL_HEADER, Polarity::Abnormal)] {
        out.push_str(header);
        out.push('\n');
        for (i, p) in prompt.of(polarity).enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, templates.prototype_line(p)));
        }
    }
    out.pop();
    out
}

/// Reads code-book text back into `(normal, abnormal)` prototype lists.
///
/// Accepts the rendered form as well as common model embellishments:
/// markdown headings and emphasis, `-`/`*` bullets, and missing template
/// prefixes. Lines outside a section are ignored.
pub fn parse_codebook(text: &str, templates: &PromptTemplates) -> (Vec<Prototype>, Vec<Prototype>) {
    let mut normal = Vec::new();
    let mut abnormal = Vec::new();
    let mut section: Option<Polarity> = None;
    let prefix = templates.prototype_prefix().trim().to_lowercase();
    let suffix = templates.prototype_suffix().trim().to_lowercase();

    for raw_line in text.lines() {
        let line = strip_markup(raw_line);
        if line.is_empty() {
            continue;
        }
        match list_item(&line) {
            Some(item) => {
                let Some(polarity) = section else { continue };
                let mut body = item.trim();
                if !prefix.is_empty()
                    && body
                        .get(..prefix.len())
                        .is_some_and(|h| h.eq_ignore_ascii_case(&prefix))
                {
                    body = body[prefix.len()..].trim_start();
                }
                if !suffix.is_empty() && body.len() >= suffix.len() {
                    let cut = body.len() - suffix.len();
                    if body.get(cut..).is_some_and(|t| t.eq_ignore_ascii_case(&suffix)) {
                        body = body[..cut].trim_end();
                    }
                }
                if let Ok(p) = Prototype::new(body, polarity) {
                    match polarity {
                        Polarity::Normal => normal.push(p),
                        Polarity::Abnormal => abnormal.push(p),
                    }
                }
            }
            None => {
                if let Some(polarity) = section_header(&line) {
                    section = Some(polarity);
                } else if line.ends_with(':') {
                    // Some other heading: leave any open section.
                    section = None;
                }
            }
        }
    }
    (normal, abnormal)
}

fn strip_markup(line: &str) -> String {
    let trimmed = line.trim().trim_start_matches('#').trim();
    trimmed.replace("**", "").replace("__", "").trim().to_string()
}

/// Body of a numbered (`1.`, `2)`) or bulleted (`-`, `*`, `•`) line.
fn list_item(line: &str) -> Option<&str> {
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return Some(rest);
        }
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    rest.strip_prefix('.')
        .or_else(|| rest.strip_prefix(')'))
        .filter(|r| r.starts_with(char::is_whitespace))
}

fn section_header(line: &str) -> Option<Polarity> {
    let lower = line.to_lowercase();
    if lower.len() > 80 || !(lower.contains("prototype") || lower.contains("event")) {
        return None;
    }
    if lower.contains("abnormal") || lower.contains("anomal") {
        Some(Polarity::Abnormal)
    } else if lower.contains("normal") {
        Some(Polarity::Normal)
    } else {
        None
    }
}

/// Analyzer instruction: template with the code book and the option list
/// (or, with options disabled, a free-range scoring rule).
pub fn assemble_vlm_instruction(
    prompt: &KnowledgePrompt,
    options: Option<&OptionsList>,
    templates: &PromptTemplates,
) -> String {
    let (rule, block) = match options {
        Some(o) => (OPTIONS_RULE, format!("\nOPTIONS:\n{}\n", o.render())),
        None => (FREE_RULE, String::new()),
    };
    templates
        .vlm
        .replace("{score_rule}", rule)
        .replace("{codebook}", &render_codebook(prompt, templates))
        .replace("{options}", &block)
}

/// One `Case i (score s): description` line per pair.
pub fn render_cases(cases: &[DescriptionPair]) -> String {
    cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let description = c.description.split_whitespace().collect::<Vec<_>>().join(" ");
            format!(
                "Case {} (score {}): {}",
                i + 1,
                format_score(c.score.get()),
                description
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reasoner instruction: template with the current code book, the sampled
/// cases and the per-polarity output limit `length / 2`.
pub fn assemble_reasoner_instruction(
    prompt: &KnowledgePrompt,
    cases: &[DescriptionPair],
    length: usize,
    templates: &PromptTemplates,
) -> String {
    let half = (length / 2).to_string();
    templates
        .reasoner
        .replace("{codebook}", &render_codebook(prompt, templates))
        .replace("{cases}", &render_cases(cases))
        .replace("{max_normal}", &half)
        .replace("{max_abnormal}", &half)
}

//! Text side of every sample: class texts, binary and complete captions, and
//! metadata-conditioned VQA questions, plus parsing of generated text back into
//! labels.

use crate::types::{Label, SlideMetadata};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MITOTIC_TEXT: &str = "mitotic";
pub const NONMITOTIC_TEXT: &str = "nonmitotic";
pub const YES: &str = "yes";
pub const NO: &str = "no";

/// Default VQA question; placeholders are `{species}`, `{tumor_type}`, `{scanner}`.
pub const VQA_QUESTION_TEMPLATE: &str =
    "This is an image of {species} {tumor_type} taken using scanner {scanner}. Is there mitosis in the image?";
/// Metadata-free variant used for the zero-shot ablation.
pub const VQA_QUESTION_NO_METADATA: &str = "Is there mitosis in the image?";
/// Default complete caption; `{label}` is `mitotic` or `nonmitotic`.
pub const COMPLETE_CAPTION_TEMPLATE: &str = "{label}, {tumor_type}, {species}, {scanner}";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{mode:?} prompts need tumor type, species and scanner")]
    MissingMetadata { mode: PromptMode },
    #[error("template {template:?} uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {0:?} has an unterminated placeholder")]
    Unterminated(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptMode {
    ClipLabel,
    BlipBinaryCaption,
    BlipCompleteCaption,
    BlipVqa,
}

impl PromptMode {
    pub const ALL: [PromptMode; 4] = [
        PromptMode::ClipLabel,
        PromptMode::BlipBinaryCaption,
        PromptMode::BlipCompleteCaption,
        PromptMode::BlipVqa,
    ];

    pub fn needs_metadata(self) -> bool {
        matches!(self, PromptMode::BlipCompleteCaption | PromptMode::BlipVqa)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub mode: PromptMode,
    pub question: Option<String>,
    pub target_text: String,
    pub label: Label,
}

/// Templates as declared in the experiment config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub vqa_question: String,
    pub complete_caption: String,
    pub positive_text: String,
    pub negative_text: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            vqa_question: VQA_QUESTION_TEMPLATE.to_string(),
            complete_caption: COMPLETE_CAPTION_TEMPLATE.to_string(),
            positive_text: MITOTIC_TEXT.to_string(),
            negative_text: NONMITOTIC_TEXT.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Same templates with a question that carries no metadata.
    pub fn without_metadata() -> Self {
        Self {
            vqa_question: VQA_QUESTION_NO_METADATA.to_string(),
            ..Self::default()
        }
    }

    pub fn label_text(&self, label: Label) -> &str {
        match label {
            Label::Mitotic => &self.positive_text,
            Label::HardNegative => &self.negative_text,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let m = SlideMetadata::new("t", "s", "x");
        render(&self.vqa_question, &m, None)?;
        render(&self.complete_caption, &m, Some("l"))?;
        Ok(())
    }

    pub fn build(
        &self,
        mode: PromptMode,
        label: Label,
        metadata: Option<&SlideMetadata>,
    ) -> Result<PromptBundle, PromptError> {
        let meta = || match metadata {
            Some(m) if m.is_complete() => Ok(m),
            _ => Err(PromptError::MissingMetadata { mode }),
        };
        let (question, target_text) = match mode {
            PromptMode::ClipLabel | PromptMode::BlipBinaryCaption => (None, self.label_text(label).to_string()),
            PromptMode::BlipCompleteCaption => (
                None,
                render(&self.complete_caption, meta()?, Some(self.label_text(label)))?,
            ),
            PromptMode::BlipVqa => {
                let answer = if label.is_positive() { YES } else { NO };
                (Some(render(&self.vqa_question, meta()?, None)?), answer.to_string())
            }
        };
        Ok(PromptBundle {
            mode,
            question,
            target_text,
            label,
        })
    }

    /// Bundles for both labels, positive first.
    pub fn build_pair(
        &self,
        mode: PromptMode,
        metadata: Option<&SlideMetadata>,
    ) -> Result<[PromptBundle; 2], PromptError> {
        Ok([
            self.build(mode, Label::Mitotic, metadata)?,
            self.build(mode, Label::HardNegative, metadata)?,
        ])
    }

    pub fn parse_prediction(&self, mode: PromptMode, generated: &str) -> (Label, bool) {
        let text = generated.trim().to_lowercase();
        let matched = match mode {
            PromptMode::BlipVqa => {
                let first = text
                    .split(|c: char| !c.is_alphanumeric())
                    .find(|w| !w.is_empty())
                    .unwrap_or("");
                match first {
                    YES => Some(Label::Mitotic),
                    NO => Some(Label::HardNegative),
                    _ => None,
                }
            }
            _ => {
                let field = text.split(',').next().unwrap_or("").trim();
                if field == self.positive_text.to_lowercase() {
                    Some(Label::Mitotic)
                } else if field == self.negative_text.to_lowercase() {
                    Some(Label::HardNegative)
                } else {
                    None
                }
            }
        };
        match matched {
            Some(l) => (l, true),
            None => (Label::HardNegative, false),
        }
    }
}

/// Substitute `{species}`, `{tumor_type}`, `{scanner}` and (when given) `{label}`.
pub fn render(template: &str, metadata: &SlideMetadata, label: Option<&str>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after
            .find('}')
            .ok_or_else(|| PromptError::Unterminated(template.to_string()))?;
        let name = &after[..end];
        let value = match (name, label) {
            ("species", _) => metadata.species.as_str(),
            ("tumor_type", _) => metadata.tumor_type.as_str(),
            ("scanner", _) => metadata.scanner.as_str(),
            ("label", Some(l)) => l,
            _ => {
                return Err(PromptError::UnknownPlaceholder {
                    template: template.to_string(),
                    name: name.to_string(),
                })
            }
        };
        out.push_str(value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Build a bundle with the default templates.
pub fn build_prompt(
    mode: PromptMode,
    label: Label,
    metadata: Option<&SlideMetadata>,
) -> Result<PromptBundle, PromptError> {
    PromptTemplates::default().build(mode, label, metadata)
}

/// Map generated text to a label. Unparseable text yields `(HardNegative, false)`.
pub fn parse_prediction(mode: PromptMode, generated: &str) -> (Label, bool) {
    PromptTemplates::default().parse_prediction(mode, generated)
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Whole-string match after trimming and case folding.
pub fn caption_exact_match(generated: &str, target: &str) -> bool {
    normalize(generated) == normalize(target)
}

/// Per comma-field agreement, for diagnostics. Missing fields count as mismatches.
pub fn caption_field_matches(generated: &str, target: &str) -> Vec<bool> {
    let g: Vec<String> = generated.split(',').map(normalize).collect();
    target
        .split(',')
        .map(normalize)
        .enumerate()
        .map(|(i, t)| g.get(i) == Some(&t))
        .collect()
}

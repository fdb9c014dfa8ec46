//! Model families compared in the report and their training defaults.

use super::adapters::AdapterKind;
use super::optim::{OptimizerKind, Schedule};
use crate::prompts::{PromptMode, PromptTemplates};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Resnet50Scratch,
    Resnet50Imagenet,
    Resnet50StainSsl,
    Resnet50Simsiam,
    VitImagenet,
    ClipZeroShot,
    ClipFinetuned,
    BlipVqaZeroShot,
    BlipVqaZeroShotMetadata,
    BlipBinaryCaption,
    BlipCompleteCaption,
    BlipVqa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pretext {
    StainPrediction,
    SimSiam,
}

/// Unstated epoch budget and weight decay; both are config overrides.
pub const DEFAULT_MAX_EPOCHS: usize = 10;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.05;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.05;
pub const DEFAULT_PRETEXT_EPOCHS: usize = 5;

impl Family {
    pub const ALL: [Family; 12] = [
        Family::Resnet50Scratch,
        Family::Resnet50Imagenet,
        Family::Resnet50StainSsl,
        Family::Resnet50Simsiam,
        Family::VitImagenet,
        Family::BlipVqa,
        Family::ClipZeroShot,
        Family::ClipFinetuned,
        Family::BlipVqaZeroShot,
        Family::BlipVqaZeroShotMetadata,
        Family::BlipBinaryCaption,
        Family::BlipCompleteCaption,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Family::Resnet50Scratch => "resnet50-scratch",
            Family::Resnet50Imagenet => "resnet50-imagenet",
            Family::Resnet50StainSsl => "resnet50-stain-ssl",
            Family::Resnet50Simsiam => "resnet50-simsiam",
            Family::VitImagenet => "vit-imagenet",
            Family::ClipZeroShot => "clip-zero-shot",
            Family::ClipFinetuned => "clip-finetuned",
            Family::BlipVqaZeroShot => "blip-vqa-zero-shot",
            Family::BlipVqaZeroShotMetadata => "blip-vqa-zero-shot-metadata",
            Family::BlipBinaryCaption => "blip-binary-caption",
            Family::BlipCompleteCaption => "blip-complete-caption",
            Family::BlipVqa => "blip-vqa",
        }
    }

    /// Report row label: pretraining source.
    pub fn pretraining(self) -> &'static str {
        match self {
            Family::Resnet50Scratch => "None",
            Family::Resnet50Imagenet => "ResNet50 on ImageNet",
            Family::Resnet50StainSsl => "SSL stain prediction",
            Family::Resnet50Simsiam => "SSL SimSiam",
            Family::VitImagenet => "ViT-B/16 on ImageNet",
            Family::ClipZeroShot | Family::ClipFinetuned => "CLIP on web image-text pairs",
            Family::BlipVqaZeroShot | Family::BlipVqaZeroShotMetadata | Family::BlipVqa => "BLIP VQA on VQA2.0",
            Family::BlipBinaryCaption | Family::BlipCompleteCaption => "BLIP image caption on COCO",
        }
    }

    /// Report row label: finetuning model.
    pub fn finetuning(self) -> &'static str {
        match self {
            Family::Resnet50Scratch | Family::Resnet50Imagenet | Family::Resnet50StainSsl | Family::Resnet50Simsiam => {
                "ResNet50"
            }
            Family::VitImagenet => "ViT-B/16",
            Family::ClipZeroShot | Family::BlipVqaZeroShot => "None (zero-shot)",
            Family::BlipVqaZeroShotMetadata => "None (zero-shot) w/metadata",
            Family::ClipFinetuned => "CLIP",
            Family::BlipBinaryCaption => "BLIP binary caption",
            Family::BlipCompleteCaption => "BLIP complete caption",
            Family::BlipVqa => "BLIP VQA",
        }
    }

    /// Vision-only baselines go in the first table, vision-language models in the
    /// second; the finetuned VQA model appears in both.
    pub fn tables(self) -> &'static [u8] {
        match self {
            Family::BlipVqa => &[1, 2],
            f if f.adapter_kind() == AdapterKind::ImageClassifier => &[1],
            _ => &[2],
        }
    }

    pub fn adapter_kind(self) -> AdapterKind {
        match self {
            Family::Resnet50Scratch
            | Family::Resnet50Imagenet
            | Family::Resnet50StainSsl
            | Family::Resnet50Simsiam
            | Family::VitImagenet => AdapterKind::ImageClassifier,
            Family::ClipZeroShot | Family::ClipFinetuned => AdapterKind::ImageTextScorer,
            Family::BlipBinaryCaption | Family::BlipCompleteCaption => AdapterKind::CaptionGenerator,
            Family::BlipVqaZeroShot | Family::BlipVqaZeroShotMetadata | Family::BlipVqa => AdapterKind::VqaAnswerer,
        }
    }

    pub fn prompt_mode(self) -> Option<PromptMode> {
        match self.adapter_kind() {
            AdapterKind::ImageClassifier => None,
            AdapterKind::ImageTextScorer => Some(PromptMode::ClipLabel),
            AdapterKind::VqaAnswerer => Some(PromptMode::BlipVqa),
            AdapterKind::CaptionGenerator => Some(if self == Family::BlipCompleteCaption {
                PromptMode::BlipCompleteCaption
            } else {
                PromptMode::BlipBinaryCaption
            }),
        }
    }

    /// Templates for this family given the experiment's configured ones.
    pub fn templates(self, configured: &PromptTemplates) -> PromptTemplates {
        if self == Family::BlipVqaZeroShot {
            PromptTemplates {
                vqa_question: PromptTemplates::without_metadata().vqa_question,
                ..configured.clone()
            }
        } else {
            configured.clone()
        }
    }

    pub fn finetunes(self) -> bool {
        !matches!(
            self,
            Family::ClipZeroShot | Family::BlipVqaZeroShot | Family::BlipVqaZeroShotMetadata
        )
    }

    pub fn pretext(self) -> Option<Pretext> {
        match self {
            Family::Resnet50StainSsl => Some(Pretext::StainPrediction),
            Family::Resnet50Simsiam => Some(Pretext::SimSiam),
            _ => None,
        }
    }

    /// Families whose starting weights come from large external pretraining.
    pub fn external_weights(self) -> bool {
        !matches!(
            self,
            Family::Resnet50Scratch | Family::Resnet50StainSsl | Family::Resnet50Simsiam
        )
    }

    pub fn default_train_config(self) -> TrainConfig {
        let (batch_size, learning_rate, optimizer, schedule) = match self.adapter_kind() {
            AdapterKind::ImageClassifier => (32, 1e-4, OptimizerKind::Adam, Schedule::Constant),
            AdapterKind::ImageTextScorer => (
                512,
                1e-4,
                OptimizerKind::AdamW {
                    weight_decay: DEFAULT_WEIGHT_DECAY,
                },
                Schedule::CosineWithWarmup {
                    warmup_fraction: DEFAULT_WARMUP_FRACTION,
                },
            ),
            AdapterKind::CaptionGenerator | AdapterKind::VqaAnswerer => (
                32,
                1e-5,
                OptimizerKind::AdamW {
                    weight_decay: DEFAULT_WEIGHT_DECAY,
                },
                Schedule::CosineWithWarmup {
                    warmup_fraction: DEFAULT_WARMUP_FRACTION,
                },
            ),
        };
        TrainConfig {
            family: self,
            batch_size,
            learning_rate,
            optimizer,
            schedule,
            max_epochs: DEFAULT_MAX_EPOCHS,
            early_stop_patience: None,
        }
    }

    pub fn default_pretext_config(self) -> Option<PretextConfig> {
        self.pretext().map(|p| match p {
            Pretext::StainPrediction => PretextConfig {
                pretext: p,
                batch_size: 32,
                learning_rate: 1e-4,
                optimizer: OptimizerKind::Adam,
                epochs: DEFAULT_PRETEXT_EPOCHS,
            },
            Pretext::SimSiam => PretextConfig {
                pretext: p,
                batch_size: 128,
                learning_rate: 0.005,
                optimizer: OptimizerKind::SgdMomentum { momentum: 0.9 },
                epochs: DEFAULT_PRETEXT_EPOCHS,
            },
        })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.id() == s)
            .ok_or_else(|| format!("unknown model family {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub family: Family,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation F1 improvement.
    pub early_stop_patience: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextConfig {
    pub pretext: Pretext,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperparameter_roster() {
        let c = Family::Resnet50Scratch.default_train_config();
        assert_eq!(
            (c.batch_size, c.learning_rate, c.optimizer),
            (32, 1e-4, OptimizerKind::Adam)
        );
        let c = Family::VitImagenet.default_train_config();
        assert_eq!((c.batch_size, c.learning_rate), (32, 1e-4));
        let c = Family::BlipVqa.default_train_config();
        assert_eq!((c.batch_size, c.learning_rate), (32, 1e-5));
        assert!(matches!(c.optimizer, OptimizerKind::AdamW { .. }));
        assert!(matches!(c.schedule, Schedule::CosineWithWarmup { .. }));
        let c = Family::ClipFinetuned.default_train_config();
        assert_eq!((c.batch_size, c.learning_rate), (512, 1e-4));
        assert!(matches!(c.optimizer, OptimizerKind::AdamW { .. }));
        let s = Family::Resnet50Simsiam.default_pretext_config().unwrap();
        assert_eq!((s.batch_size, s.learning_rate), (128, 0.005));
        assert_eq!(s.optimizer, OptimizerKind::SgdMomentum { momentum: 0.9 });
        let s = Family::Resnet50StainSsl.default_pretext_config().unwrap();
        assert_eq!(
            (s.batch_size, s.learning_rate, s.optimizer),
            (32, 1e-4, OptimizerKind::Adam)
        );
    }

    #[test]
    fn ids_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.id().parse::<Family>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{}\"", f.id()));
            if let Some(m) = f.prompt_mode() {
                assert!(f.adapter_kind().supports(m));
            }
        }
    }
}

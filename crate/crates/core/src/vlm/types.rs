use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How much detail an initial prompt carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetailLevel {
    Underdetailed,
    Standard,
    Overdetailed,
    PragmaticAmbiguity,
}

impl DetailLevel {
    pub const ALL: [DetailLevel; 4] = [
        DetailLevel::Underdetailed,
        DetailLevel::Standard,
        DetailLevel::Overdetailed,
        DetailLevel::PragmaticAmbiguity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetailLevel::Underdetailed => "underdetailed",
            DetailLevel::Standard => "standard",
            DetailLevel::Overdetailed => "overdetailed",
            DetailLevel::PragmaticAmbiguity => "pragmatic_ambiguity",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            DetailLevel::Underdetailed => "Underdetailed",
            DetailLevel::Standard => "Standard",
            DetailLevel::Overdetailed => "Overdetailed",
            DetailLevel::PragmaticAmbiguity => "Pragmatic Ambiguity",
        }
    }
}

impl fmt::Display for DetailLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Post-processing applied to an initial prompt before detection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementMethod {
    Raw,
    KeyObjectExtraction,
    SemanticCategoryGrounding,
}

impl EnhancementMethod {
    pub const ALL: [EnhancementMethod; 3] = [
        EnhancementMethod::Raw,
        EnhancementMethod::KeyObjectExtraction,
        EnhancementMethod::SemanticCategoryGrounding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnhancementMethod::Raw => "raw",
            EnhancementMethod::KeyObjectExtraction => "key_object_extraction",
            EnhancementMethod::SemanticCategoryGrounding => "semantic_category_grounding",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            EnhancementMethod::Raw => "Raw Prompt",
            EnhancementMethod::KeyObjectExtraction => "Key Object Extraction",
            EnhancementMethod::SemanticCategoryGrounding => "Semantic Category Grounding",
        }
    }
}

impl fmt::Display for EnhancementMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a prompt's text came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Live,
    Cache,
    Replay,
    Fixture,
}

/// One initial prompt for one target at one detail level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub text: String,
    pub detail_level: DetailLevel,
    pub image_id: String,
    pub target_id: String,
    pub provenance: Provenance,
    pub template_id: String,
    pub vlm_model_id: String,
}

impl PromptVariant {
    /// Rejects blank text.
    pub fn new(
        text: impl Into<String>,
        detail_level: DetailLevel,
        image_id: impl Into<String>,
        target_id: impl Into<String>,
        provenance: Provenance,
        template_id: impl Into<String>,
        vlm_model_id: impl Into<String>,
    ) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyPrompt);
        }
        Ok(Self {
            text,
            detail_level,
            image_id: image_id.into(),
            target_id: target_id.into(),
            provenance,
            template_id: template_id.into(),
            vlm_model_id: vlm_model_id.into(),
        })
    }
}

/// The prompt actually handed to a detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancedPrompt {
    pub text: String,
    pub method: EnhancementMethod,
    pub source: PromptVariant,
    /// Vocabulary membership; set for semantic category grounding only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_valid: Option<bool>,
}

/// The identity enhancement: the initial prompt, verbatim.
pub fn passthrough_raw(prompt: &PromptVariant) -> EnhancedPrompt {
    EnhancedPrompt {
        text: prompt.text.clone(),
        method: EnhancementMethod::Raw,
        source: prompt.clone(),
        category_valid: None,
    }
}

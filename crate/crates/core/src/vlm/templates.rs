//! Instruction texts sent to the VLM.
//!
//! Multi-line boxes are joined with single spaces. The natural-language
//! template has exactly one slot, the detail word.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::DetailLevel;

const DETAIL_SLOT: &str = "{detail}";

pub const NATURAL_LANGUAGE_TEMPLATE: &str = "You are a regular person who refers to objects using referring expressions. Given an image along with bounding boxes, please generate a discriminative and unambiguous expression to describe the target object. You should only refer to the intrinsic characteristics of the object, not its location. Assume the image clearly indicates the target object with its bounding box. Do not include any location words. Only describe intrinsic attributes such as shape, color, material, or other visual properties. The length of the expression should be {detail}, as a human might naturally vary in phrasing.";

pub const PRAGMATIC_AMBIGUITY_TEMPLATE: &str = "You are a regular person who receives an image with a bounding box as input and generates prompts that are indirect, vague, or highly dependent on contextual understanding (e.g., \u{201c}I\u{2019}m thirsty, and I need to drink water\u{201d} referring to a water bottle).";

pub const KEY_OBJECT_EXTRACTION_TEMPLATE: &str = "You are a prompt enhancer that takes an image and an accompanying descriptive text prompt as input. Your task is to analyze both to determine the key or primary object described, along with essential identifying attributes such as color, shape, or distinguishing features that specify it precisely (e.g., \u{201c}red sports car,\u{201d} \u{201c}golden retriever,\u{201d} \u{201c}blue ceramic vase\u{201d}). The output should be concise, a short noun phrase containing the object and only the minimal attributes necessary for clarity. The focus is on accurate, succinct identification of the core subject, with just enough attribute detail to ensure specificity.";

pub const SEMANTIC_CATEGORY_GROUNDING_TEMPLATE: &str = "You are a prompt enhancer that identifies the main object in an image and maps it to the most relevant COCO or LVIS category based on both the image and the accompanying text prompt. You interpret visual and linguistic cues to find the most semantically accurate match from the official category taxonomies. You should output only the name of the most relevant category. If multiple objects appear, output only the dominant or most contextually emphasized one. If uncertain, output the single best-guess category label.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TemplateId {
    Initial(DetailLevel),
    KeyObjectExtraction,
    SemanticCategoryGrounding,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::Initial(DetailLevel::Underdetailed),
        TemplateId::Initial(DetailLevel::Standard),
        TemplateId::Initial(DetailLevel::Overdetailed),
        TemplateId::Initial(DetailLevel::PragmaticAmbiguity),
        TemplateId::KeyObjectExtraction,
        TemplateId::SemanticCategoryGrounding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Initial(DetailLevel::Underdetailed) => "initial/underdetailed",
            TemplateId::Initial(DetailLevel::Standard) => "initial/standard",
            TemplateId::Initial(DetailLevel::Overdetailed) => "initial/overdetailed",
            TemplateId::Initial(DetailLevel::PragmaticAmbiguity) => "initial/pragmatic_ambiguity",
            TemplateId::KeyObjectExtraction => "enhance/key_object_extraction",
            TemplateId::SemanticCategoryGrounding => "enhance/semantic_category_grounding",
        }
    }

    /// The instruction text for this template, slot filled.
    pub fn render(self) -> String {
        match self {
            TemplateId::Initial(DetailLevel::PragmaticAmbiguity) => PRAGMATIC_AMBIGUITY_TEMPLATE.to_string(),
            TemplateId::Initial(level) => NATURAL_LANGUAGE_TEMPLATE.replacen(DETAIL_SLOT, level.as_str(), 1),
            TemplateId::KeyObjectExtraction => KEY_OBJECT_EXTRACTION_TEMPLATE.to_string(),
            TemplateId::SemanticCategoryGrounding => SEMANTIC_CATEGORY_GROUNDING_TEMPLATE.to_string(),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<TemplateId> for String {
    fn from(t: TemplateId) -> Self {
        t.as_str().to_string()
    }
}

impl TryFrom<String> for TemplateId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template id `{s}`"))
    }
}

//! Prompt generation and enhancement through a multimodal chat endpoint.

mod client;
mod templates;
mod types;
mod vocabulary;

pub use client::{
    image_sha256, parse_chat_completion, DecodingParams, VlmClient, VlmRequest, VlmResponse, VlmSettings, VlmStats,
    DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL, DEFAULT_MODEL_ID,
};
pub use templates::{
    TemplateId, KEY_OBJECT_EXTRACTION_TEMPLATE, NATURAL_LANGUAGE_TEMPLATE, PRAGMATIC_AMBIGUITY_TEMPLATE,
    SEMANTIC_CATEGORY_GROUNDING_TEMPLATE,
};
pub use types::{passthrough_raw, DetailLevel, EnhancedPrompt, EnhancementMethod, PromptVariant, Provenance};
pub use vocabulary::{normalize_text, Vocabulary};

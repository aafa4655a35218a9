//! Chat-completion client for prompt generation and enhancement.
//!
//! Requests go to `{base_url}/chat/completions` as one user message holding
//! the instruction text, the prompt under enhancement (if any), and one
//! base64 PNG image. Every exchange is keyed by [`VlmRequest`] in a
//! [`CacheStore`], which also serves replay runs.

use std::io::Cursor;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::templates::TemplateId;
use super::types::{DetailLevel, EnhancedPrompt, EnhancementMethod, PromptVariant, Provenance};
use super::vocabulary::{normalize_text, Vocabulary};
use crate::cache::{CacheStore, RunMode};
use crate::error::{Error, Result};
use crate::transport::{HttpTransport, Limiter, RetryPolicy};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL_ID: &str = "gpt-5-2025-08-07";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: Some(0.0),
            max_tokens: None,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VlmSettings {
    pub base_url: String,
    pub model_id: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub decoding: DecodingParams,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    /// Store directory; defaults to `<output_dir>/cache`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for VlmSettings {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.into(),
            model_id: DEFAULT_MODEL_ID.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            decoding: DecodingParams::default(),
            max_in_flight: 4,
            timeout_secs: 120,
            cache_dir: None,
        }
    }
}

/// Cache key material for one exchange. The image itself is represented by
/// its content hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VlmRequest {
    pub template_id: TemplateId,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_text: Option<String>,
    pub image_sha256: String,
    pub vlm_model_id: String,
    pub decoding: DecodingParams,
}

impl VlmRequest {
    pub fn key(&self) -> Result<String> {
        crate::cache::canonical_key(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VlmResponse {
    pub text: String,
    /// Seconds since the Unix epoch when the response was received.
    pub timestamp: u64,
    pub payload_sha256: String,
}

impl VlmResponse {
    pub fn new(text: impl Into<String>, payload: &[u8]) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            text: text.into(),
            timestamp,
            payload_sha256: crate::cache::sha256_hex(payload),
        }
    }
}

/// SHA-256 over the dimensions and raw RGB bytes, independent of encoding.
pub fn image_sha256(img: &RgbImage) -> String {
    let mut hasher = Sha256::new();
    hasher.update(img.width().to_le_bytes());
    hasher.update(img.height().to_le_bytes());
    hasher.update(img.as_raw());
    hex::encode(hasher.finalize())
}

fn png_base64(img: &RgbImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: PathBuf::from("<memory>"),
            source,
        })?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
}

/// Extracts the assistant text from an OpenAI-style chat completion body.
pub fn parse_chat_completion(body: &[u8]) -> Result<String> {
    let value: Value = serde_json::from_slice(body)
        .map_err(|e| Error::BadResponse(format!("response is not JSON: {e}")))?;
    let content = value
        .pointer("/choices/0/message/content")
        .ok_or_else(|| Error::BadResponse("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        Value::Null => Ok(String::new()),
        other => Err(Error::BadResponse(format!("unexpected content: {other}"))),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VlmStats {
    pub requests: usize,
    pub cache_hits: usize,
    pub network_calls: usize,
}

pub struct VlmClient {
    settings: VlmSettings,
    mode: RunMode,
    store: Option<Arc<CacheStore>>,
    transport: Option<Arc<dyn HttpTransport>>,
    api_key: Option<String>,
    retry: RetryPolicy,
    limiter: Limiter,
    requests: AtomicUsize,
    cache_hits: AtomicUsize,
    network_calls: AtomicUsize,
}

impl VlmClient {
    /// Replay mode needs a store and never touches `transport`; the other
    /// modes need a transport.
    pub fn new(
        settings: VlmSettings,
        mode: RunMode,
        store: Option<Arc<CacheStore>>,
        transport: Option<Arc<dyn HttpTransport>>,
    ) -> Result<Self> {
        match mode {
            RunMode::Replay if store.is_none() => {
                return Err(Error::Config("replay mode requires a replay store".into()))
            }
            RunMode::Live | RunMode::Cached if transport.is_none() => {
                return Err(Error::Config(format!("{mode} mode requires an HTTP transport")))
            }
            _ => {}
        }
        let limiter = Limiter::new(settings.max_in_flight);
        Ok(Self {
            settings,
            mode,
            store,
            transport,
            api_key: None,
            retry: RetryPolicy::default(),
            limiter,
            requests: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
            network_calls: AtomicUsize::new(0),
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn settings(&self) -> &VlmSettings {
        &self.settings
    }

    pub fn stats(&self) -> VlmStats {
        VlmStats {
            requests: self.requests.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            network_calls: self.network_calls.load(Ordering::SeqCst),
        }
    }

    pub fn request_for(&self, template: TemplateId, image: &RgbImage, input_text: Option<&str>) -> VlmRequest {
        VlmRequest {
            template_id: template,
            instruction: template.render(),
            input_text: input_text.map(str::to_string),
            image_sha256: image_sha256(image),
            vlm_model_id: self.settings.model_id.clone(),
            decoding: self.settings.decoding.clone(),
        }
    }

    pub fn cache_get(&self, request: &VlmRequest) -> Result<Option<VlmResponse>> {
        match &self.store {
            Some(store) => store.get("", request),
            None => Ok(None),
        }
    }

    pub fn cache_put(&self, request: &VlmRequest, response: &VlmResponse) -> Result<()> {
        if let Some(store) = &self.store {
            store.put("", request, response)?;
        }
        Ok(())
    }

    fn chat_body(&self, request: &VlmRequest, image: &RgbImage) -> Result<Vec<u8>> {
        let mut parts = vec![json!({"type": "text", "text": request.instruction})];
        if let Some(text) = &request.input_text {
            parts.push(json!({"type": "text", "text": format!("Text prompt: {text}")}));
        }
        parts.push(json!({
            "type": "image_url",
            "image_url": {"url": format!("data:image/png;base64,{}", png_base64(image)?)}
        }));
        let mut body = json!({
            "model": request.vlm_model_id,
            "messages": [{"role": "user", "content": parts}],
        });
        let d = &request.decoding;
        if let Some(t) = d.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = d.max_tokens {
            body["max_tokens"] = json!(m);
        }
        if let Some(s) = d.seed {
            body["seed"] = json!(s);
        }
        Ok(serde_json::to_vec(&body)?)
    }

    fn call_endpoint(&self, request: &VlmRequest, image: &RgbImage) -> Result<VlmResponse> {
        let transport = self
            .transport
            .as_ref()
            .ok_or_else(|| Error::Config("no transport configured".into()))?;
        let body = self.chat_body(request, image)?;
        let url = format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'));
        let _permit = self.limiter.acquire();
        let payload = self.retry.run(|| {
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            transport.post_json(&url, self.api_key.as_deref(), &body)
        })?;
        let text = parse_chat_completion(&payload)?;
        Ok(VlmResponse::new(text, &payload))
    }

    /// Serves one request according to the run mode. Blank answers are
    /// [`Error::EmptyPrompt`] and are never recorded.
    pub fn complete(&self, request: &VlmRequest, image: &RgbImage) -> Result<(String, Provenance)> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        if self.mode != RunMode::Live {
            if let Some(hit) = self.cache_get(request)? {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                if hit.text.trim().is_empty() {
                    return Err(Error::EmptyPrompt);
                }
                let provenance = if self.mode == RunMode::Replay {
                    Provenance::Replay
                } else {
                    Provenance::Cache
                };
                return Ok((hit.text, provenance));
            }
        }
        let response = self.call_endpoint(request, image)?;
        if response.text.trim().is_empty() {
            return Err(Error::EmptyPrompt);
        }
        self.cache_put(request, &response)?;
        Ok((response.text, Provenance::Live))
    }

    /// Asks for an initial prompt describing the boxed target in `overlay`.
    pub fn generate_initial_prompt(
        &self,
        overlay: &RgbImage,
        level: DetailLevel,
        image_id: &str,
        target_id: &str,
    ) -> Result<PromptVariant> {
        let template = TemplateId::Initial(level);
        let request = self.request_for(template, overlay, None);
        let (text, provenance) = self.complete(&request, overlay)?;
        PromptVariant::new(
            text.trim(),
            level,
            image_id,
            target_id,
            provenance,
            template.as_str(),
            &self.settings.model_id,
        )
    }

    pub fn enhance_key_object(&self, image: &RgbImage, prompt: &PromptVariant) -> Result<EnhancedPrompt> {
        if prompt.text.trim().is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let request = self.request_for(TemplateId::KeyObjectExtraction, image, Some(&prompt.text));
        let (text, _) = self.complete(&request, image)?;
        Ok(EnhancedPrompt {
            text: text.trim().to_string(),
            method: EnhancementMethod::KeyObjectExtraction,
            source: prompt.clone(),
            category_valid: None,
        })
    }

    /// The answer is normalized before the vocabulary lookup; an
    /// out-of-vocabulary answer is kept and flagged, not rejected.
    pub fn enhance_semantic_category(
        &self,
        image: &RgbImage,
        prompt: &PromptVariant,
        vocabulary: &Vocabulary,
    ) -> Result<EnhancedPrompt> {
        if prompt.text.trim().is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let request = self.request_for(TemplateId::SemanticCategoryGrounding, image, Some(&prompt.text));
        let (text, _) = self.complete(&request, image)?;
        let text = normalize_text(&text);
        let valid = vocabulary.contains(&text);
        Ok(EnhancedPrompt {
            text,
            method: EnhancementMethod::SemanticCategoryGrounding,
            source: prompt.clone(),
            category_valid: Some(valid),
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;
    use std::time::Duration;

    use super::*;
    use crate::error::TransportError;
    use crate::transport::CountingTransport;

    /// Answers every request with a scripted reply and remembers bodies.
    struct Scripted {
        reply: String,
        bodies: Mutex<Vec<Value>>,
    }

    impl Scripted {
        fn new(reply: &str) -> Arc<Self> {
            Arc::new(Self {
                reply: reply.into(),
                bodies: Mutex::new(Vec::new()),
            })
        }
    }

    impl HttpTransport for Scripted {
        fn post_json(&self, _url: &str, _b: Option<&str>, body: &[u8]) -> std::result::Result<Vec<u8>, TransportError> {
            self.bodies.lock().unwrap().push(serde_json::from_slice(body).unwrap());
            Ok(serde_json::to_vec(&json!({"choices": [{"message": {"content": self.reply}}]})).unwrap())
        }
    }

    struct Down;

    impl HttpTransport for Down {
        fn post_json(&self, _: &str, _: Option<&str>, _: &[u8]) -> std::result::Result<Vec<u8>, TransportError> {
            Err(TransportError::transient("connection refused"))
        }
    }

    fn image() -> RgbImage {
        RgbImage::from_fn(8, 6, |x, y| image::Rgb([x as u8 * 20, y as u8 * 30, 100]))
    }

    fn variant(text: &str) -> PromptVariant {
        PromptVariant::new(text, DetailLevel::PragmaticAmbiguity, "img", "t0", Provenance::Fixture, "initial/pragmatic_ambiguity", DEFAULT_MODEL_ID).unwrap()
    }

    fn client(mode: RunMode, store: Option<Arc<CacheStore>>, t: Option<Arc<dyn HttpTransport>>) -> VlmClient {
        VlmClient::new(VlmSettings::default(), mode, store, t).unwrap().with_retry(RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(1),
        })
    }

    #[test]
    fn sends_template_prompt_and_one_image() {
        let t = Scripted::new("refillable water bottle");
        let c = client(RunMode::Live, None, Some(t.clone()));
        let e = c.enhance_key_object(&image(), &variant("I'm thirsty")).unwrap();
        assert_eq!(e.text, "refillable water bottle");
        assert_eq!(e.method, EnhancementMethod::KeyObjectExtraction);
        let bodies = t.bodies.lock().unwrap();
        let parts = bodies[0]["messages"][0]["content"].as_array().unwrap();
        assert_eq!(parts[0]["text"], TemplateId::KeyObjectExtraction.render());
        assert_eq!(parts[1]["text"], "Text prompt: I'm thirsty");
        assert!(parts[2]["image_url"]["url"].as_str().unwrap().starts_with("data:image/png;base64,"));
        assert_eq!(bodies[0]["temperature"], 0.0);
        assert_eq!(bodies[0]["model"], DEFAULT_MODEL_ID);
    }

    #[test]
    fn semantic_answer_is_normalized_and_checked() {
        let t = Scripted::new("Water Bottle ");
        let c = client(RunMode::Live, None, Some(t));
        let e = c.enhance_semantic_category(&image(), &variant("I'm thirsty"), Vocabulary::bundled()).unwrap();
        assert_eq!(e.text, "water bottle");
        assert_eq!(e.category_valid, Some(true));

        let c = client(RunMode::Live, None, Some(Scripted::new("Hydration Vessel")));
        let e = c.enhance_semantic_category(&image(), &variant("I'm thirsty"), Vocabulary::bundled()).unwrap();
        assert_eq!(e.text, "hydration vessel");
        assert_eq!(e.category_valid, Some(false));
    }

    #[test]
    fn second_identical_call_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(CacheStore::open(dir.path(), RunMode::Cached).unwrap());
        let t = Arc::new(CountingTransport::new(Scripted::new("blue mug")));
        let c = client(RunMode::Cached, Some(store), Some(t.clone()));
        let a = c.enhance_key_object(&image(), &variant("something to drink from")).unwrap();
        let b = c.enhance_key_object(&image(), &variant("something to drink from")).unwrap();
        assert_eq!(a.text.as_bytes(), b.text.as_bytes());
        assert_eq!(t.calls(), 1);
        assert_eq!(c.stats(), VlmStats { requests: 2, cache_hits: 1, network_calls: 1 });
    }

    #[test]
    fn replay_serves_recorded_answer_without_network() {
        let dir = tempfile::tempdir().unwrap();
        let img = image();
        {
            let store = Arc::new(CacheStore::open(dir.path(), RunMode::Cached).unwrap());
            let c = client(RunMode::Cached, Some(store), Some(Scripted::new("blue mug")));
            c.generate_initial_prompt(&img, DetailLevel::Underdetailed, "img", "t0").unwrap();
        }
        let store = Arc::new(CacheStore::open(dir.path(), RunMode::Replay).unwrap());
        let t = Arc::new(CountingTransport::new(Arc::new(Down)));
        let c = client(RunMode::Replay, Some(store), Some(t.clone()));
        let p = c.generate_initial_prompt(&img, DetailLevel::Underdetailed, "img", "t0").unwrap();
        assert_eq!(p.text, "blue mug");
        assert_eq!(p.provenance, Provenance::Replay);
        assert_eq!(p.template_id, "initial/underdetailed");

        let err = c.generate_initial_prompt(&img, DetailLevel::Standard, "img", "t0").unwrap_err();
        assert!(err.to_string().starts_with("replay miss: "), "{err}");
        assert_eq!(t.calls(), 0);
    }

    #[test]
    fn empty_answer_is_an_error_and_not_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(CacheStore::open(dir.path(), RunMode::Cached).unwrap());
        let c = client(RunMode::Cached, Some(store), Some(Scripted::new("  ")));
        let err = c.generate_initial_prompt(&image(), DetailLevel::Standard, "img", "t0").unwrap_err();
        assert_eq!(err.to_string(), "empty prompt");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn empty_prompt_rejected_before_any_call() {
        let t = Arc::new(CountingTransport::new(Scripted::new("x")));
        let c = client(RunMode::Live, None, Some(t.clone()));
        let mut p = variant("x");
        p.text = String::new();
        assert!(matches!(c.enhance_key_object(&image(), &p), Err(Error::EmptyPrompt)));
        assert!(matches!(
            c.enhance_semantic_category(&image(), &p, Vocabulary::bundled()),
            Err(Error::EmptyPrompt)
        ));
        assert_eq!(t.calls(), 0);
    }

    #[test]
    fn outage_fails_after_three_attempts() {
        let t = Arc::new(CountingTransport::new(Arc::new(Down)));
        let c = client(RunMode::Live, None, Some(t.clone()));
        let err = c.generate_initial_prompt(&image(), DetailLevel::Standard, "img", "t0").unwrap_err();
        assert!(matches!(err, Error::Transport(_)));
        assert_eq!(t.calls(), 3);
    }

    #[test]
    fn request_key_depends_on_decoding_and_image() {
        let c = client(RunMode::Live, None, Some(Scripted::new("x")));
        let a = c.request_for(TemplateId::KeyObjectExtraction, &image(), Some("mug"));
        let mut b = a.clone();
        b.decoding.temperature = Some(0.2);
        assert_ne!(a.key().unwrap(), b.key().unwrap());
        let mut other = image();
        other.put_pixel(0, 0, image::Rgb([1, 2, 3]));
        let c2 = c.request_for(TemplateId::KeyObjectExtraction, &other, Some("mug"));
        assert_ne!(a.key().unwrap(), c2.key().unwrap());
        assert_eq!(a.key().unwrap(), c.request_for(TemplateId::KeyObjectExtraction, &image(), Some("mug")).key().unwrap());
    }

    #[test]
    fn parses_content_variants() {
        assert_eq!(parse_chat_completion(br#"{"choices":[{"message":{"content":"mug"}}]}"#).unwrap(), "mug");
        assert_eq!(
            parse_chat_completion(br#"{"choices":[{"message":{"content":[{"type":"text","text":"blue "},{"type":"text","text":"mug"}]}}]}"#).unwrap(),
            "blue mug"
        );
        assert!(parse_chat_completion(b"{}").is_err());
    }

    #[test]
    fn mode_requirements() {
        assert!(VlmClient::new(VlmSettings::default(), RunMode::Replay, None, None).is_err());
        assert!(VlmClient::new(VlmSettings::default(), RunMode::Live, None, None).is_err());
    }
}

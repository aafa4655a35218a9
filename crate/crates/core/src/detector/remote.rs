//! Adapters for detectors served over HTTP.
//!
//! The service receives
//! `{"prompt": "...", "width": W, "height": H, "image_png_base64": "..."}`
//! and answers `{"box_format": "...", "detections": [...]}`. Each detection
//! carries `box` plus the backend's raw scoring outputs: `token_logits` for
//! grounding transformers, `objectness` and `class_prob` for real-time
//! embedding detectors; an optional `phrase` names the matched span.
//! `box_format` is `cxcywh_norm` (normalized center format, the grounding
//! default) or `xyxy_abs` (absolute corners, the real-time default).
//!
//! Exchanges are recorded in the cache store under `detections/`, so replay
//! runs can use remote backends without the service.

use std::io::Cursor;
use std::path::PathBuf;
use std::sync::Arc;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::confidence::{gd_confidence, yoloe_confidence};
use super::{Detection, DetectionInput, Detector, DetectorKind, DetectorSpec};
use crate::cache::{CacheStore, RunMode};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::transport::{HttpTransport, RetryPolicy};
use crate::vlm::image_sha256;

const NAMESPACE: &str = "detections";

/// Cache key material for one remote detection call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub spec: DetectorSpec,
    pub image_sha256: String,
    pub prompt: String,
}

pub struct RemoteDetector {
    spec: DetectorSpec,
    url: String,
    reentrant: bool,
    mode: RunMode,
    store: Option<Arc<CacheStore>>,
    transport: Option<Arc<dyn HttpTransport>>,
    retry: RetryPolicy,
}

impl RemoteDetector {
    pub fn from_spec(
        spec: &DetectorSpec,
        mode: RunMode,
        store: Option<Arc<CacheStore>>,
        transport: Option<Arc<dyn HttpTransport>>,
    ) -> Result<Self> {
        if spec.kind == DetectorKind::Mock {
            return Err(Error::Config(format!("backend `{}` is a mock", spec.backend_id)));
        }
        let url = spec
            .extra_str("url")
            .ok_or_else(|| Error::Config(format!("backend `{}` needs extra.url", spec.backend_id)))?
            .to_string();
        if mode == RunMode::Replay && store.is_none() {
            return Err(Error::Config("replay mode requires a replay store".into()));
        }
        if mode != RunMode::Replay && transport.is_none() {
            return Err(Error::Config(format!("backend `{}` needs an HTTP transport", spec.backend_id)));
        }
        Ok(Self {
            reentrant: spec.extra_bool("reentrant").unwrap_or(false),
            spec: spec.clone(),
            url,
            mode,
            store,
            transport,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn backend_error(&self, message: impl Into<String>) -> Error {
        Error::Backend {
            backend_id: self.spec.backend_id.clone(),
            message: message.into(),
        }
    }

    fn call_service(&self, input: &DetectionInput<'_>) -> Result<Value> {
        let transport = self
            .transport
            .as_ref()
            .ok_or_else(|| self.backend_error("no transport configured"))?;
        let mut png = Cursor::new(Vec::new());
        input
            .image
            .write_to(&mut png, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: PathBuf::from("<memory>"),
                source,
            })?;
        let body = serde_json::to_vec(&json!({
            "prompt": input.prompt,
            "width": input.image.width(),
            "height": input.image.height(),
            "image_png_base64": base64::engine::general_purpose::STANDARD.encode(png.into_inner()),
        }))?;
        let bytes = self
            .retry
            .run(|| transport.post_json(&self.url, None, &body))
            .map_err(|e| self.backend_error(e.message))?;
        serde_json::from_slice(&bytes).map_err(|e| self.backend_error(format!("response is not JSON: {e}")))
    }

    fn raw_response(&self, input: &DetectionInput<'_>) -> Result<Value> {
        let request = RemoteRequest {
            spec: self.spec.clone(),
            image_sha256: image_sha256(input.image),
            prompt: input.prompt.to_string(),
        };
        if self.mode != RunMode::Live {
            if let Some(store) = &self.store {
                if let Some(hit) = store.get::<_, Value>(NAMESPACE, &request)? {
                    return Ok(hit);
                }
            }
        }
        let response = self.call_service(input)?;
        if let Some(store) = &self.store {
            store.put(NAMESPACE, &request, &response)?;
        }
        Ok(response)
    }

    /// Converts a service response into detections, scoring each entry with
    /// the backend's confidence definition. Malformed entries are dropped
    /// with a diagnostic.
    pub fn parse_response(&self, response: &Value, width: u32, height: u32) -> Result<Vec<Detection>> {
        let default_format = match self.spec.kind {
            DetectorKind::GroundingTransformer => "cxcywh_norm",
            _ => "xyxy_abs",
        };
        let format = response
            .get("box_format")
            .and_then(Value::as_str)
            .unwrap_or(default_format);
        if format != "cxcywh_norm" && format != "xyxy_abs" {
            return Err(self.backend_error(format!("unknown box_format `{format}`")));
        }
        let entries = response
            .get("detections")
            .and_then(Value::as_array)
            .ok_or_else(|| self.backend_error("response has no `detections` array"))?;
        let mut out = Vec::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            match self.parse_entry(entry, format, width, height) {
                Ok(d) => out.push(d),
                Err(reason) => log::warn!("{}: dropping detection {i}: {reason}", self.spec.backend_id),
            }
        }
        Ok(out)
    }

    fn parse_entry(&self, entry: &Value, format: &str, width: u32, height: u32) -> std::result::Result<Detection, String> {
        let coords: [f64; 4] = entry
            .get("box")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or("missing or malformed box")?;
        let bbox = if format == "cxcywh_norm" {
            BoundingBox::from_center_normalized(coords[0], coords[1], coords[2], coords[3], width, height)
        } else {
            BoundingBox::from(coords)
        };
        let score = match self.spec.kind {
            DetectorKind::GroundingTransformer => {
                let logits: Vec<f64> = entry
                    .get("token_logits")
                    .cloned()
                    .and_then(|v| serde_json::from_value(v).ok())
                    .ok_or("missing token_logits")?;
                gd_confidence(&logits).map_err(|e| e.to_string())?
            }
            _ => {
                let q = entry.get("objectness").and_then(Value::as_f64).ok_or("missing objectness")?;
                let p = entry.get("class_prob").and_then(Value::as_f64).ok_or("missing class_prob")?;
                yoloe_confidence(q, p).map_err(|e| e.to_string())?
            }
        };
        Ok(Detection {
            bbox,
            score,
            backend_id: self.spec.backend_id.clone(),
            matched_phrase: entry.get("phrase").and_then(Value::as_str).map(str::to_string),
        })
    }
}

impl Detector for RemoteDetector {
    fn spec(&self) -> &DetectorSpec {
        &self.spec
    }

    fn is_reentrant(&self) -> bool {
        self.reentrant
    }

    fn candidates(&self, input: &DetectionInput<'_>) -> Result<Vec<Detection>> {
        let response = self.raw_response(input)?;
        self.parse_response(&response, input.image.width(), input.image.height())
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;
    use std::time::Duration;

    use image::RgbImage;

    use super::*;
    use crate::detector::detect;
    use crate::error::TransportError;
    use crate::transport::CountingTransport;
    use crate::vlm::{passthrough_raw, DetailLevel, PromptVariant, Provenance};

    struct Service {
        reply: Value,
        seen: Mutex<Vec<Value>>,
    }

    impl HttpTransport for Service {
        fn post_json(&self, _: &str, _: Option<&str>, body: &[u8]) -> std::result::Result<Vec<u8>, TransportError> {
            self.seen.lock().unwrap().push(serde_json::from_slice(body).unwrap());
            Ok(serde_json::to_vec(&self.reply).unwrap())
        }
    }

    fn service(reply: Value) -> Arc<Service> {
        Arc::new(Service {
            reply,
            seen: Mutex::new(Vec::new()),
        })
    }

    fn prompt(text: &str) -> crate::vlm::EnhancedPrompt {
        passthrough_raw(&PromptVariant::new(text, DetailLevel::Standard, "img", "t", Provenance::Fixture, "initial/standard", "m").unwrap())
    }

    fn gd_spec() -> DetectorSpec {
        DetectorSpec::new("gd", DetectorKind::GroundingTransformer).with_extra("url", "http://gd.local/detect")
    }

    #[test]
    fn grounding_backend_converts_center_boxes_and_scores_by_max_token() {
        let svc = service(json!({"detections": [
            {"box": [0.5, 0.5, 0.2, 0.4], "token_logits": [-1.0, 2.0, 0.5], "phrase": "mug"},
            {"box": [0.1, 0.1, 0.1, 0.1], "token_logits": [-3.0]},
            {"box": [0.1, 0.1, 0.1, 0.1]},
            {"box": [0.1, 0.1, 0.1, 0.1], "token_logits": []}
        ]}));
        let det = RemoteDetector::from_spec(&gd_spec(), RunMode::Live, None, Some(svc.clone())).unwrap();
        let out = detect(&det, &RgbImage::new(200, 100), "img", &prompt("blue mug")).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox, BoundingBox::new(80.0, 30.0, 120.0, 70.0));
        assert!((out[0].score - 0.880_797_077_977_882_4).abs() < 1e-12);
        assert_eq!(out[0].matched_phrase.as_deref(), Some("mug"));
        let seen = svc.seen.lock().unwrap();
        assert_eq!(seen[0]["prompt"], "blue mug");
        assert_eq!(seen[0]["width"], 200);
    }

    #[test]
    fn realtime_backend_multiplies_objectness_and_class_prob() {
        let svc = service(json!({"detections": [
            {"box": [10, 10, 50, 50], "objectness": 0.8, "class_prob": 0.6},
            {"box": [10, 10, 50, 50], "objectness": 1.5, "class_prob": 0.6}
        ]}));
        let spec = DetectorSpec::new("yoloe", DetectorKind::RealtimeEmbedding).with_extra("url", "http://y.local");
        let det = RemoteDetector::from_spec(&spec, RunMode::Live, None, Some(svc)).unwrap();
        let out = detect(&det, &RgbImage::new(100, 100), "img", &prompt("mouse")).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].score - 0.48).abs() < 1e-15);
        assert_eq!(out[0].bbox, BoundingBox::new(10.0, 10.0, 50.0, 50.0));
    }

    #[test]
    fn exchanges_are_recorded_and_replayed() {
        let dir = tempfile::tempdir().unwrap();
        let reply = json!({"detections": [{"box": [0.5, 0.5, 0.5, 0.5], "token_logits": [3.0]}]});
        let img = RgbImage::new(40, 40);
        let live = {
            let store = Arc::new(CacheStore::open(dir.path(), RunMode::Cached).unwrap());
            let det = RemoteDetector::from_spec(&gd_spec(), RunMode::Cached, Some(store), Some(service(reply))).unwrap();
            detect(&det, &img, "img", &prompt("mug")).unwrap()
        };
        let store = Arc::new(CacheStore::open(dir.path(), RunMode::Replay).unwrap());
        let counter = Arc::new(CountingTransport::new(service(json!({}))));
        let det = RemoteDetector::from_spec(&gd_spec(), RunMode::Replay, Some(store), Some(counter.clone())).unwrap();
        assert_eq!(detect(&det, &img, "img", &prompt("mug")).unwrap(), live);
        assert!(matches!(detect(&det, &img, "img", &prompt("cup")), Err(Error::ReplayMiss(_))));
        assert_eq!(counter.calls(), 0);
    }

    #[test]
    fn service_failure_is_backend_error() {
        struct Down;
        impl HttpTransport for Down {
            fn post_json(&self, _: &str, _: Option<&str>, _: &[u8]) -> std::result::Result<Vec<u8>, TransportError> {
                Err(TransportError::permanent("HTTP 503"))
            }
        }
        let det = RemoteDetector::from_spec(&gd_spec(), RunMode::Live, None, Some(Arc::new(Down)))
            .unwrap()
            .with_retry(RetryPolicy {
                max_attempts: 1,
                initial_backoff: Duration::ZERO,
            });
        let err = detect(&det, &RgbImage::new(4, 4), "img", &prompt("mug")).unwrap_err();
        assert!(matches!(err, Error::Backend { .. }));
        assert!(!det.is_reentrant());
    }

    #[test]
    fn missing_url_rejected() {
        let spec = DetectorSpec::new("gd", DetectorKind::GroundingTransformer);
        assert!(RemoteDetector::from_spec(&spec, RunMode::Live, None, Some(service(json!({})))).is_err());
    }
}

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::oracle::{NoiseConfig, SegmenterMode};
use super::wire::{self, *};
use super::{Detection, OpenVocabularyDetector, PromptableSegmenter, RawDetections, RequestExt, VisionLanguageModel};
use crate::error::{Error, Result};
use crate::raster::Image;

pub const AUTH_TOKEN_ENV: &str = "PAP_AUTH_TOKEN";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Vlm,
    Ovd,
    Sam,
}

/// In-process ground-truth backend instead of HTTP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBackendConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub segmenter: SegmenterMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First retry delay; doubles on each further retry.
    #[serde(default = "default_backoff")]
    pub backoff_base_s: f64,
    #[serde(default)]
    pub auth_token: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub oracle: Option<OracleBackendConfig>,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> f64 {
    1.0
}

impl ModelBackendConfig {
    pub fn http(kind: BackendKind, endpoint_url: impl Into<String>) -> Self {
        Self {
            kind,
            endpoint_url: endpoint_url.into(),
            timeout_s: default_timeout(),
            retries: default_retries(),
            backoff_base_s: default_backoff(),
            auth_token: None,
            model: None,
            oracle: None,
        }
    }

    pub fn oracle(kind: BackendKind, dataset: impl Into<PathBuf>) -> Self {
        Self {
            oracle: Some(OracleBackendConfig {
                dataset: dataset.into(),
                noise: NoiseConfig::default(),
                segmenter: SegmenterMode::default(),
            }),
            ..Self::http(kind, "")
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.oracle.is_none() && self.endpoint_url.trim().is_empty() {
            return Err(Error::Config(format!("{:?} backend needs an endpoint_url", self.kind)));
        }
        if !(self.timeout_s > 0.0) || !(self.backoff_base_s >= 0.0) {
            return Err(Error::Config("timeout_s must be positive and backoff_base_s non-negative".into()));
        }
        Ok(())
    }

    fn path(&self) -> &'static str {
        match self.kind {
            BackendKind::Vlm => wire::VLM_PATH,
            BackendKind::Ovd => wire::OVD_PATH,
            BackendKind::Sam => wire::SAM_PATH,
        }
    }

    /// Worst-case wall time of one call including retries.
    pub fn deadline(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s * (self.retries as f64 + 1.0))
    }
}

/// `pap-wire/1` client for one model role.
pub struct HttpBackend {
    cfg: ModelBackendConfig,
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
}

enum Attempt {
    Retry { timed_out: bool, status: u16, body: String },
    Fatal(Error),
}

impl HttpBackend {
    pub fn new(cfg: ModelBackendConfig) -> Result<Self> {
        cfg.validate()?;
        let url = format!("{}{}", cfg.endpoint_url.trim_end_matches('/'), cfg.path());
        let token = cfg
            .auth_token
            .clone()
            .or_else(|| std::env::var(AUTH_TOKEN_ENV).ok().filter(|t| !t.is_empty()));
        Ok(Self {
            agent: ureq::AgentBuilder::new().build(),
            url,
            token,
            cfg,
        })
    }

    pub fn config(&self) -> &ModelBackendConfig {
        &self.cfg
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp> {
        let payload = serde_json::to_string(body)?;
        let per_try = Duration::from_secs_f64(self.cfg.timeout_s);
        // retries plus backoff sleeps must fit in 110% of the nominal budget
        let budget = self.cfg.deadline().mul_f64(1.1);
        let start = Instant::now();
        let mut backoff = Duration::from_secs_f64(self.cfg.backoff_base_s);
        let mut attempt = 0;
        loop {
            let remaining = budget.saturating_sub(start.elapsed());
            let outcome = self.attempt(&payload, per_try.min(remaining.max(Duration::from_millis(1))));
            let (timed_out, status, text) = match outcome {
                Ok(text) => {
                    return serde_json::from_str(&text).map_err(|e| Error::Backend {
                        status: 200,
                        body: format!("malformed response body: {e}"),
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry { timed_out, status, body }) => (timed_out, status, body),
            };
            let give_up = || {
                if timed_out {
                    Error::Timeout(self.cfg.timeout_s)
                } else {
                    Error::Backend { status, body: text.clone() }
                }
            };
            if attempt >= self.cfg.retries {
                return Err(give_up());
            }
            attempt += 1;
            let remaining = budget.saturating_sub(start.elapsed());
            if remaining.is_zero() {
                return Err(give_up());
            }
            log::debug!("{} failed (status {status}), retry {attempt} in {backoff:?}", self.url);
            std::thread::sleep(backoff.min(remaining / 2));
            backoff *= 2;
        }
    }

    fn attempt(&self, payload: &str, timeout: Duration) -> std::result::Result<String, Attempt> {
        let mut req = self
            .agent
            .post(&self.url)
            .timeout(timeout)
            .set("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let started = Instant::now();
        match req.send_string(payload) {
            Ok(resp) => resp.into_string().map_err(|e| Attempt::Retry {
                timed_out: is_timeout_io(&e),
                status: 0,
                body: e.to_string(),
            }),
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                if code >= 500 || code == 429 {
                    Err(Attempt::Retry { timed_out: false, status: code, body })
                } else {
                    Err(Attempt::Fatal(Error::Backend { status: code, body }))
                }
            }
            Err(ureq::Error::Transport(t)) => {
                let timed_out = std::error::Error::source(&t)
                    .and_then(|s| s.downcast_ref::<std::io::Error>())
                    .is_some_and(is_timeout_io)
                    || started.elapsed() >= timeout.mul_f64(0.95);
                Err(Attempt::Retry {
                    timed_out,
                    status: 0,
                    body: t.to_string(),
                })
            }
        }
    }
}

fn is_timeout_io(e: &std::io::Error) -> bool {
    matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock)
}

impl VisionLanguageModel for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.url)
    }

    fn complete(&self, image: &Image, prompt: &str, ext: &RequestExt) -> Result<String> {
        let req = VlmCompleteRequest {
            model: self.cfg.model.clone(),
            prompt: prompt.to_string(),
            image_b64: encode_image(image)?,
            sample_id: ext.sample_id.clone(),
            grid: ext.grid,
        };
        let resp: VlmCompleteResponse = self.post(&req)?;
        Ok(resp.text)
    }
}

impl OpenVocabularyDetector for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.url)
    }

    fn detect(&self, image: &Image, query: &str, ext: &RequestExt) -> Result<RawDetections> {
        let req = OvdDetectRequest {
            model: self.cfg.model.clone(),
            image_b64: encode_image(image)?,
            query: query.to_string(),
            sample_id: ext.sample_id.clone(),
            viewport: ext.viewport,
        };
        let resp: OvdDetectResponse = self.post(&req)?;
        Ok(RawDetections {
            boxes: resp.boxes,
            points: resp.points,
            scores: resp.scores,
        })
    }
}

impl PromptableSegmenter for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.url)
    }

    fn segment(&self, image: &Image, prompt: &Detection, ext: &RequestExt) -> Result<Image> {
        let req = SamSegmentRequest {
            model: self.cfg.model.clone(),
            image_b64: encode_image(image)?,
            bbox: prompt.bbox,
            points: prompt.points.clone(),
            sample_id: ext.sample_id.clone(),
            viewport: ext.viewport,
        };
        let resp: SamSegmentResponse = self.post(&req)?;
        let mask = decode_image(&resp.mask_b64)?;
        Ok(if mask.channels == 1 {
            mask
        } else {
            // keep the first channel of colour-encoded masks
            Image {
                width: mask.width,
                height: mask.height,
                channels: 1,
                data: mask.data.chunks(mask.channels).map(|p| p[0]).collect(),
            }
        })
    }
}

//! HTTP client for the model sidecar.
//!
//! The sidecar speaks stateless JSON over HTTP:
//!
//! - `POST /encode` `{"mode": "question"|"passage", "texts": [..]}` returns
//!   `{"dim": d, "vectors": [[..], ..]}`, one vector per text in order.
//! - `POST /generate` `{"prompts": [..], "max_tokens": n}` returns
//!   `{"outputs": [{"text": .., "token_logprobs": [..]}, ..]}`.
//! - `GET /health` returns `{"status": "ok", "dim": d}`.
//!
//! Passage texts are sent pre-serialized (`[CLS] title [SEP] text [SEP]`)
//! and generator prompts use [`format_prompt`]. Every response is checked
//! for length, dimension and log-probability consistency before use.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::encoder::{serialize_passage, DualEncoder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::generator::{
    format_prompt, GenerationResult, Generator, PromptPassage, Question, DEFAULT_MAX_ANSWER_TOKENS,
};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodeMode {
    Question,
    Passage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub mode: EncodeMode,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompts: Vec<String>,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutput {
    pub text: String,
    pub token_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub outputs: Vec<GenerateOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub dim: usize,
}

impl EncodeResponse {
    /// Checks the response against the request it answers.
    pub fn validate(&self, expected_len: usize) -> std::result::Result<(), String> {
        if self.vectors.len() != expected_len {
            return Err(format!(
                "expected {expected_len} vectors, got {}",
                self.vectors.len()
            ));
        }
        if let Some((i, v)) = self.vectors.iter().enumerate().find(|(_, v)| v.len() != self.dim) {
            return Err(format!("vector {i} has length {}, declared dim {}", v.len(), self.dim));
        }
        if self.vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err("non-finite value in vectors".into());
        }
        Ok(())
    }
}

impl GenerateResponse {
    pub fn validate(&self, expected_len: usize) -> std::result::Result<(), String> {
        if self.outputs.len() != expected_len {
            return Err(format!(
                "expected {expected_len} outputs, got {}",
                self.outputs.len()
            ));
        }
        for (i, o) in self.outputs.iter().enumerate() {
            if o.token_logprobs.iter().any(|lp| !(lp.is_finite() && *lp <= 0.0)) {
                return Err(format!("output {i} has a log-probability above 0"));
            }
        }
        Ok(())
    }
}

/// Blocking client bound to one sidecar base URL.
#[derive(Clone)]
pub struct SidecarClient {
    base: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for SidecarClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SidecarClient").field("base", &self.base).finish()
    }
}

impl SidecarClient {
    pub fn new(base_url: &str) -> Self {
        Self::with_timeout(base_url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn read<T: DeserializeOwned>(
        endpoint: &str,
        result: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T> {
        let mut resp = result.map_err(|e| Error::Transport {
            endpoint: endpoint.to_string(),
            message: e.to_string(),
        })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            let body = body.lines().next().unwrap_or("").trim().to_string();
            return Err(Error::Protocol {
                endpoint: endpoint.to_string(),
                message: format!("HTTP {}: {body}", status.as_u16()),
            });
        }
        resp.body_mut().read_json().map_err(|e| Error::Protocol {
            endpoint: endpoint.to_string(),
            message: format!("malformed response body: {e}"),
        })
    }

    fn protocol(endpoint: &str, message: String) -> Error {
        Error::Protocol {
            endpoint: endpoint.to_string(),
            message,
        }
    }

    pub fn health(&self) -> Result<HealthResponse> {
        let endpoint = self.endpoint("/health");
        let resp: HealthResponse = Self::read(&endpoint, self.agent.get(&endpoint).call())?;
        if resp.status != "ok" {
            return Err(Self::protocol(&endpoint, format!("status {:?}", resp.status)));
        }
        Ok(resp)
    }

    pub fn encode(&self, request: &EncodeRequest) -> Result<EncodeResponse> {
        let endpoint = self.endpoint("/encode");
        let resp: EncodeResponse =
            Self::read(&endpoint, self.agent.post(&endpoint).send_json(request))?;
        resp.validate(request.texts.len())
            .map_err(|m| Self::protocol(&endpoint, m))?;
        Ok(resp)
    }

    pub fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse> {
        let endpoint = self.endpoint("/generate");
        let resp: GenerateResponse =
            Self::read(&endpoint, self.agent.post(&endpoint).send_json(request))?;
        resp.validate(request.prompts.len())
            .map_err(|m| Self::protocol(&endpoint, m))?;
        Ok(resp)
    }
}

/// Dual encoder backed by the sidecar's `/encode` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEncoder {
    client: SidecarClient,
    dim: usize,
    batch_size: usize,
}

impl RemoteEncoder {
    /// Connects and learns the embedding dimension from `/health`.
    pub fn connect(client: SidecarClient) -> Result<Self> {
        let dim = client.health()?.dim;
        Ok(Self::new(client, dim))
    }

    pub fn new(client: SidecarClient, dim: usize) -> Self {
        Self {
            client,
            dim,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn encode_texts(&self, mode: EncodeMode, texts: Vec<String>) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let resp = self.client.encode(&EncodeRequest {
                mode,
                texts: chunk.to_vec(),
            })?;
            if resp.dim != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    actual: resp.dim,
                });
            }
            for v in resp.vectors {
                out.push(EmbeddingVector::new(v)?);
            }
        }
        Ok(out)
    }
}

impl DualEncoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_questions(&self, questions: &[Question]) -> Result<Vec<EmbeddingVector>> {
        let texts = questions.iter().map(|q| q.text.clone()).collect();
        self.encode_texts(EncodeMode::Question, texts)
    }

    fn encode_passages(&self, passages: &[Passage]) -> Result<Vec<EmbeddingVector>> {
        let texts = passages
            .iter()
            .map(|p| serialize_passage(&p.title, &p.text))
            .collect();
        self.encode_texts(EncodeMode::Passage, texts)
    }
}

/// Generator backed by the sidecar's `/generate` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    client: SidecarClient,
    pub max_tokens: usize,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl RemoteGenerator {
    pub fn new(client: SidecarClient) -> Self {
        Self {
            client,
            max_tokens: DEFAULT_MAX_ANSWER_TOKENS,
            batch_size: DEFAULT_BATCH_SIZE,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    fn to_result(out: GenerateOutput) -> Result<GenerationResult> {
        GenerationResult::new(out.text, out.token_logprobs)
    }

    /// Generates for many prompts, sending up to `max_in_flight` requests of
    /// `batch_size` prompts at a time. Output order matches input order.
    pub fn generate_many(
        &self,
        items: &[(Question, Vec<PromptPassage>)],
    ) -> Result<Vec<GenerationResult>> {
        let prompts: Vec<String> = items.iter().map(|(q, ps)| format_prompt(q, ps)).collect();
        let chunks: Vec<&[String]> = prompts.chunks(self.batch_size.max(1)).collect();
        let mut out = Vec::with_capacity(items.len());
        for wave in chunks.chunks(self.max_in_flight.max(1)) {
            let responses: Vec<Result<GenerateResponse>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|chunk| {
                        s.spawn(move || {
                            self.client.generate(&GenerateRequest {
                                prompts: chunk.to_vec(),
                                max_tokens: self.max_tokens,
                            })
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("generate worker panicked"))
                    .collect()
            });
            for resp in responses {
                for o in resp?.outputs {
                    out.push(Self::to_result(o)?);
                }
            }
        }
        Ok(out)
    }
}

impl Generator for RemoteGenerator {
    fn generate(
        &self,
        question: &Question,
        passages: &[PromptPassage],
    ) -> Result<GenerationResult> {
        if passages.is_empty() {
            return Ok(GenerationResult::empty());
        }
        let resp = self.client.generate(&GenerateRequest {
            prompts: vec![format_prompt(question, passages)],
            max_tokens: self.max_tokens,
        })?;
        Self::to_result(resp.outputs.into_iter().next().expect("validated length"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_shape() {
        let req = EncodeRequest {
            mode: EncodeMode::Passage,
            texts: vec!["[CLS] t [SEP] x [SEP]".into()],
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"mode":"passage","texts":["[CLS] t [SEP] x [SEP]"]}"#
        );
        let bad: std::result::Result<EncodeRequest, _> =
            serde_json::from_str(r#"{"mode":"bogus","texts":[]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn response_validation() {
        let ok = EncodeResponse {
            dim: 2,
            vectors: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        assert!(ok.validate(2).is_ok());
        assert!(ok.validate(3).is_err());
        let ragged = EncodeResponse {
            dim: 2,
            vectors: vec![vec![1.0]],
        };
        assert!(ragged.validate(1).is_err());

        let gen = GenerateResponse {
            outputs: vec![GenerateOutput {
                text: "x".into(),
                token_logprobs: vec![0.5],
            }],
        };
        assert!(gen.validate(1).is_err());
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let client = SidecarClient::with_timeout("http://127.0.0.1:9", Duration::from_secs(2));
        let err = client.health().unwrap_err();
        assert_eq!(err.class(), crate::ErrorClass::Transport);
        assert!(err.to_string().contains("127.0.0.1:9"));
    }
}

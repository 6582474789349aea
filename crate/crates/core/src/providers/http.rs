//! Blocking HTTP clients. Each client makes exactly one attempt per call;
//! wrap in [`super::Resilient`] for retries and concurrency limits.
//!
//! Request shapes:
//! * chat: OpenAI-compatible `chat/completions` body,
//! * embeddings: OpenAI-compatible `embeddings` body,
//! * token scoring: `{"model", "text"}` → `{"tokens": [{token, logprob, rank, entropy}]}`.

use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    ChatModel, ChatPrompt, Embedder, EmbeddingVector, GenerationParams, ProviderConfig,
    ProviderError, TokenScore, TokenScorer,
};

const MAX_ERROR_BODY: usize = 2000;

struct Transport {
    client: reqwest::blocking::Client,
    cfg: ProviderConfig,
    key: Option<String>,
}

impl Transport {
    fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let key = cfg.credential()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout())
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self { client, cfg, key })
    }

    fn post(&self, body: &Value, estimated_tokens: usize) -> Result<Value, ProviderError> {
        let mut req = self.client.post(&self.cfg.endpoint).json(body);
        if let Some(k) = &self.key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            if text.contains("context_length_exceeded") {
                return Err(ProviderError::ContextOverflow {
                    estimated_tokens,
                    limit: self.cfg.context_window_tokens.unwrap_or(0),
                });
            }
            if text.contains("content_filter") {
                return Err(ProviderError::SafetyFiltered);
            }
            let body: String = text.chars().take(MAX_ERROR_BODY).collect();
            return Err(ProviderError::Http { status, body });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))
    }
}

/// OpenAI-compatible chat completion client.
pub struct OpenAiChat {
    http: Transport,
}

impl OpenAiChat {
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self { http: Transport::new(cfg)? })
    }
}

impl ChatModel for OpenAiChat {
    fn model_id(&self) -> &str {
        &self.http.cfg.model_id
    }

    fn generate(&self, prompt: &ChatPrompt, params: &GenerationParams) -> Result<String, ProviderError> {
        let estimated_tokens = prompt.estimated_tokens();
        if let Some(limit) = self.http.cfg.context_window_tokens {
            if estimated_tokens > limit {
                return Err(ProviderError::ContextOverflow { estimated_tokens, limit });
            }
        }
        let mut body = json!({
            "model": self.http.cfg.model_id,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        });
        if let Some(t) = params.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = params.max_tokens {
            body["max_tokens"] = json!(m);
        }
        if params.json_mode {
            body["response_format"] = json!({"type": "json_object"});
        }
        let resp = self.http.post(&body, estimated_tokens)?;
        let choice = resp
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| ProviderError::Malformed("response has no choices".into()))?;
        if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
            return Err(ProviderError::SafetyFiltered);
        }
        choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Malformed("choice has no message content".into()))
    }
}

/// OpenAI-compatible embeddings client.
pub struct HttpEmbedder {
    http: Transport,
}

impl HttpEmbedder {
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self { http: Transport::new(cfg)? })
    }
}

impl Embedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.http.cfg.model_id
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let body = json!({"model": self.http.cfg.model_id, "input": text});
        let resp = self.http.post(&body, text.chars().count().div_ceil(4))?;
        let values: Vec<f64> = resp
            .pointer("/data/0/embedding")
            .cloned()
            .ok_or_else(|| ProviderError::Malformed("response has no data[0].embedding".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| ProviderError::Malformed(e.to_string())))?;
        EmbeddingVector::new(values, self.http.cfg.model_id.clone())
    }
}

#[derive(Deserialize)]
struct ScoreResponse {
    tokens: Vec<TokenScore>,
}

/// Client for a token-statistics service.
pub struct HttpTokenScorer {
    http: Transport,
}

impl HttpTokenScorer {
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self { http: Transport::new(cfg)? })
    }
}

impl TokenScorer for HttpTokenScorer {
    fn model_id(&self) -> &str {
        &self.http.cfg.model_id
    }

    fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, ProviderError> {
        let body = json!({"model": self.http.cfg.model_id, "text": text});
        let resp = self.http.post(&body, text.chars().count().div_ceil(4))?;
        let parsed: ScoreResponse =
            serde_json::from_value(resp).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        Ok(parsed.tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{Resilient, RetryPolicy};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the given (status, body) responses, one per connection, and
    /// returns the request bodies it saw.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (url, handle)
    }

    fn cfg(url: &str) -> ProviderConfig {
        let mut c = ProviderConfig::new(url, "test-model");
        c.timeout_secs = 5.0;
        c
    }

    #[test]
    fn chat_round_trip_and_request_shape() {
        let (url, h) = serve(vec![(
            200,
            r#"{"choices":[{"finish_reason":"stop","message":{"role":"assistant","content":"hi"}}]}"#.into(),
        )]);
        let chat = OpenAiChat::new(cfg(&url)).unwrap();
        let params = GenerationParams { json_mode: true, temperature: Some(0.0), ..Default::default() };
        assert_eq!(chat.generate(&ChatPrompt::new("s", "u"), &params).unwrap(), "hi");
        let req: Value = serde_json::from_str(&h.join().unwrap()[0]).unwrap();
        assert_eq!(req["model"], "test-model");
        assert_eq!(req["messages"][0]["role"], "system");
        assert_eq!(req["response_format"]["type"], "json_object");
        assert!(req.get("nonce").is_none());
    }

    #[test]
    fn server_errors_are_retried_then_succeed() {
        let (url, h) = serve(vec![
            (503, "busy".into()),
            (429, "slow down".into()),
            (200, r#"{"data":[{"embedding":[0.6,0.8]}]}"#.into()),
        ]);
        let e = Resilient::new(HttpEmbedder::new(cfg(&url)).unwrap(), RetryPolicy::no_delay(3), 2);
        let v = e.embed("text").unwrap();
        assert_eq!(v.values, vec![0.6, 0.8]);
        assert_eq!(h.join().unwrap().len(), 3);
    }

    #[test]
    fn content_filter_and_overflow_are_distinct() {
        let (url, h) = serve(vec![
            (200, r#"{"choices":[{"finish_reason":"content_filter","message":{"content":null}}]}"#.into()),
            (400, r#"{"error":{"code":"context_length_exceeded"}}"#.into()),
            (401, r#"{"error":"bad key"}"#.into()),
        ]);
        let chat = OpenAiChat::new(cfg(&url)).unwrap();
        let p = ChatPrompt::new("s", "u");
        let g = GenerationParams::default();
        assert_eq!(chat.generate(&p, &g), Err(ProviderError::SafetyFiltered));
        assert!(matches!(chat.generate(&p, &g), Err(ProviderError::ContextOverflow { .. })));
        assert!(matches!(chat.generate(&p, &g), Err(ProviderError::Http { status: 401, .. })));
        h.join().unwrap();
    }

    #[test]
    fn malformed_body() {
        let (url, h) = serve(vec![(200, "{not json".into())]);
        let s = HttpTokenScorer::new(cfg(&url)).unwrap();
        assert!(matches!(s.score_tokens("a b"), Err(ProviderError::Malformed(_))));
        h.join().unwrap();
    }

    #[test]
    fn token_scores_parse() {
        let (url, h) = serve(vec![(
            200,
            r#"{"tokens":[{"token":"a","logprob":-0.5,"rank":2,"entropy":1.25}]}"#.into(),
        )]);
        let s = HttpTokenScorer::new(cfg(&url)).unwrap();
        assert_eq!(s.score_tokens("a").unwrap(), vec![TokenScore::new("a", -0.5, 2, 1.25)]);
        let req: Value = serde_json::from_str(&h.join().unwrap()[0]).unwrap();
        assert_eq!(req["text"], "a");
    }

    #[test]
    fn local_context_window_check_skips_request() {
        let mut c = cfg("http://127.0.0.1:9/unused");
        c.context_window_tokens = Some(2);
        let chat = OpenAiChat::new(c).unwrap();
        assert!(matches!(
            chat.generate(&ChatPrompt::new("", "a long prompt text"), &GenerationParams::default()),
            Err(ProviderError::ContextOverflow { limit: 2, .. })
        ));
    }

    #[test]
    fn missing_credential_fails_construction() {
        let mut c = cfg("http://127.0.0.1:9/unused");
        c.credential_env = Some("REVDETECT_HTTP_TEST_UNSET".into());
        assert!(matches!(
            OpenAiChat::new(c),
            Err(ProviderError::MissingCredential { var }) if var == "REVDETECT_HTTP_TEST_UNSET"
        ));
    }
}

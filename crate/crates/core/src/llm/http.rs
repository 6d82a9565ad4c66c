use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{ChatRequest, ChatResponse, LlmError, LlmProvider, Usage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportFailure(pub String);

/// The only path by which the engine reaches the network.
#[async_trait]
pub trait Transport: Send + Sync {
    async fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<HttpReply, TransportFailure>;
}

pub struct ReqwestTransport {
    client: reqwest::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client builds");
        Self { client }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

#[async_trait]
impl Transport for ReqwestTransport {
    async fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<HttpReply, TransportFailure> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| TransportFailure(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .await
            .map_err(|e| TransportFailure(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

/// Counts calls, then delegates; with no inner transport every call fails.
pub struct CountingTransport {
    inner: Option<Box<dyn Transport>>,
    count: AtomicUsize,
}

impl CountingTransport {
    pub fn wrap(inner: impl Transport + 'static) -> Self {
        Self {
            inner: Some(Box::new(inner)),
            count: AtomicUsize::new(0),
        }
    }

    pub fn unreachable() -> Self {
        Self {
            inner: None,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Transport for CountingTransport {
    async fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<HttpReply, TransportFailure> {
        self.count.fetch_add(1, Ordering::SeqCst);
        match &self.inner {
            Some(t) => t.post_json(url, bearer, body).await,
            None => Err(TransportFailure("network disabled".into())),
        }
    }
}

/// OpenAI-style `chat/completions` client.
pub struct HttpProvider {
    endpoint: String,
    api_key: Option<String>,
    transport: std::sync::Arc<dyn Transport>,
}

impl HttpProvider {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        transport: std::sync::Arc<dyn Transport>,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            transport,
        }
    }

    fn body(request: &ChatRequest) -> Value {
        json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
        })
    }
}

fn parse_completion(body: &str) -> Result<(String, Usage), LlmError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| LlmError::Provider(format!("bad response body: {e}")))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::Provider("response has no choices[0].message.content".into()))?;
    let usage = Usage {
        prompt_tokens: v
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
        completion_tokens: v
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    };
    Ok((text.to_string(), usage))
}

#[async_trait]
impl LlmProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    async fn call(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let started = Instant::now();
        let reply = self
            .transport
            .post_json(
                &self.endpoint,
                self.api_key.as_deref(),
                &Self::body(request),
            )
            .await
            .map_err(|e| LlmError::Transport(e.0))?;
        match reply.status {
            200..=299 => {
                let (text, usage) = parse_completion(&reply.body)?;
                Ok(ChatResponse {
                    text,
                    usage,
                    latency: started.elapsed(),
                })
            }
            401 | 403 => Err(LlmError::Auth(format!("HTTP {}", reply.status))),
            408 | 429 | 500..=599 => Err(LlmError::Transport(format!("HTTP {}", reply.status))),
            s => Err(LlmError::Provider(format!(
                "HTTP {s}: {}",
                truncate(&reply.body, 200)
            ))),
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    struct Canned {
        replies: Mutex<Vec<HttpReply>>,
        bodies: Mutex<Vec<(String, Option<String>, Value)>>,
    }

    #[async_trait]
    impl Transport for Canned {
        async fn post_json(
            &self,
            url: &str,
            bearer: Option<&str>,
            body: &Value,
        ) -> Result<HttpReply, TransportFailure> {
            self.bodies.lock().unwrap().push((
                url.to_string(),
                bearer.map(str::to_string),
                body.clone(),
            ));
            self.replies
                .lock()
                .unwrap()
                .pop()
                .ok_or_else(|| TransportFailure("connection refused".into()))
        }
    }

    fn canned(replies: Vec<HttpReply>) -> Arc<Canned> {
        Arc::new(Canned {
            replies: Mutex::new(replies),
            bodies: Mutex::default(),
        })
    }

    #[tokio::test]
    async fn success_payload() {
        let t = canned(vec![HttpReply {
            status: 200,
            body: r#"{"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":5,"completion_tokens":1}}"#.into(),
        }]);
        let p = HttpProvider::new(
            "http://llm/v1/chat/completions",
            Some("k".into()),
            t.clone(),
        );
        let r = p.call(&ChatRequest::new("s", "u")).await.unwrap();
        assert_eq!(r.text, "hi");
        assert_eq!(r.usage.prompt_tokens, 5);
        let sent = t.bodies.lock().unwrap();
        assert_eq!(sent[0].1.as_deref(), Some("k"));
        assert_eq!(sent[0].2["messages"][0]["role"], "system");
        assert_eq!(sent[0].2["temperature"], 0.0);
    }

    #[tokio::test]
    async fn status_mapping() {
        for (status, transient) in [(401, false), (429, true), (503, true), (400, false)] {
            let t = canned(vec![HttpReply {
                status,
                body: "{}".into(),
            }]);
            let p = HttpProvider::new("u", None, t);
            let e = p.call(&ChatRequest::new("s", "u")).await.unwrap_err();
            assert_eq!(e.is_transient(), transient, "{status}: {e}");
        }
        let p = HttpProvider::new("u", None, canned(vec![]));
        assert!(p
            .call(&ChatRequest::new("s", "u"))
            .await
            .unwrap_err()
            .is_transient());
    }

    #[tokio::test]
    async fn malformed_success_body() {
        let t = canned(vec![HttpReply {
            status: 200,
            body: r#"{"choices":[]}"#.into(),
        }]);
        let p = HttpProvider::new("u", None, t);
        assert!(matches!(
            p.call(&ChatRequest::new("s", "u")).await,
            Err(LlmError::Provider(_))
        ));
    }
}

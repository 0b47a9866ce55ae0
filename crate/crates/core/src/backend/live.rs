use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use log::warn;
use serde::Deserialize;
use serde_json::json;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

/// Bearer token for the live endpoint.
pub const API_KEY_ENV: &str = "DR_ANNOTATE_API_KEY";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: String,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        LiveConfig {
            base_url: base_url.into(),
            api_key: api_key.into(),
            max_attempts: 5,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
        }
    }

    pub fn from_env(base_url: impl Into<String>) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or(BackendError::MissingCredentials(API_KEY_ENV))?;
        Ok(Self::new(base_url, key))
    }
}

/// Counting semaphore bounding in-flight requests.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// OpenAI-compatible `POST <base_url>/chat/completions` client.
pub struct LiveBackend {
    config: LiveConfig,
    agent: ureq::Agent,
    permits: Permits,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

enum Attempt {
    Done(ChatResponse),
    Retry(BackendError, Option<Duration>),
    Fail(BackendError),
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let permits = Permits::new(config.max_in_flight);
        LiveBackend {
            config,
            agent,
            permits,
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(request: &ChatRequest) -> serde_json::Value {
        let mut body = json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(max) = request.max_output_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }

    fn attempt(&self, request: &ChatRequest) -> Attempt {
        let _permit = self.permits.acquire();
        let started = Instant::now();
        let sent = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(Self::body(request));
        let mut resp = match sent {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string()), None),
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string()), None),
        };
        let latency_ms = started.elapsed().as_millis() as u64;

        match status {
            200..=299 => {}
            401 | 403 => {
                return Attempt::Fail(BackendError::Auth {
                    status,
                    message: endpoint_message(&text),
                })
            }
            429 => return Attempt::Retry(BackendError::RateLimited(endpoint_message(&text)), retry_after),
            500..=599 => {
                return Attempt::Retry(
                    BackendError::Http {
                        status,
                        message: endpoint_message(&text),
                    },
                    retry_after,
                )
            }
            _ => {
                return Attempt::Fail(BackendError::Http {
                    status,
                    message: endpoint_message(&text),
                })
            }
        }

        let wire: WireResponse = match serde_json::from_str(&text) {
            Ok(w) => w,
            Err(e) => return Attempt::Fail(BackendError::MalformedResponse(e.to_string())),
        };
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Attempt::Fail(BackendError::EmptyCompletion);
        }
        Attempt::Done(ChatResponse {
            content,
            prompt_tokens: wire.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: wire.usage.as_ref().and_then(|u| u.completion_tokens),
            from_cache: false,
            latency_ms,
        })
    }
}

/// The endpoint's own error message when the body carries one.
fn endpoint_message(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v["error"]["message"].as_str().map(str::to_string))
        .unwrap_or_else(|| body.trim().to_string())
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let attempts = self.config.max_attempts.max(1);
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 1;
        loop {
            match self.attempt(request) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e, _) if attempt >= attempts => return Err(e),
                Attempt::Retry(e, hint) => {
                    let wait = hint.unwrap_or(backoff).min(self.config.max_backoff);
                    warn!("attempt {attempt}/{attempts} failed ({e}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                    backoff = (backoff * 2).min(self.config.max_backoff);
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ChatMessage;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Canned {
        status: u16,
        headers: Vec<(&'static str, String)>,
        body: String,
    }

    /// Serves the canned responses in order, one per connection; records
    /// request bodies.
    fn serve(responses: Vec<Canned>) -> (String, Arc<Mutex<Vec<String>>>, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let hits = Arc::new(AtomicUsize::new(0));
        let (b, h) = (bodies.clone(), hits.clone());
        std::thread::spawn(move || {
            for canned in responses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    let lower = l.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = l.to_string();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                b.lock().unwrap().push(format!("{auth}\n{}", String::from_utf8(body).unwrap()));
                h.fetch_add(1, Ordering::SeqCst);
                let mut head = format!(
                    "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n",
                    canned.status,
                    canned.body.len()
                );
                for (k, v) in &canned.headers {
                    head.push_str(&format!("{k}: {v}\r\n"));
                }
                head.push_str("\r\n");
                stream.write_all(head.as_bytes()).unwrap();
                stream.write_all(canned.body.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), bodies, hits)
    }

    fn ok_body(content: &str) -> String {
        json!({
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 42, "completion_tokens": 3}
        })
        .to_string()
    }

    fn request() -> ChatRequest {
        ChatRequest {
            model_id: "gpt-4".into(),
            messages: vec![ChatMessage::system("You are a language expert."), ChatMessage::user("Hi")],
            temperature: 0.0,
            max_output_tokens: Some(16),
            item_id: Some("not-sent".into()),
        }
    }

    fn config(base: &str) -> LiveConfig {
        let mut c = LiveConfig::new(base, "sk-test");
        c.initial_backoff = Duration::from_millis(1);
        c.max_backoff = Duration::from_millis(5);
        c.max_attempts = 3;
        c.timeout = Duration::from_secs(5);
        c
    }

    #[test]
    fn reads_content_and_usage() {
        let (base, bodies, _) = serve(vec![Canned {
            status: 200,
            headers: vec![],
            body: ok_body("Answer: 3"),
        }]);
        let r = LiveBackend::new(config(&base)).complete(&request()).unwrap();
        assert_eq!(r.content, "Answer: 3");
        assert_eq!(r.prompt_tokens, Some(42));
        assert_eq!(r.completion_tokens, Some(3));
        assert!(!r.from_cache);
        let sent = bodies.lock().unwrap()[0].clone();
        let (auth, body) = sent.split_once('\n').unwrap();
        assert_eq!(auth, "authorization: Bearer sk-test");
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(v["model"], "gpt-4");
        assert_eq!(v["max_tokens"], 16);
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["content"], "Hi");
        assert!(!body.contains("not-sent"));
    }

    #[test]
    fn auth_error_is_surfaced_verbatim() {
        let msg = "Incorrect API key provided: sk-test.";
        let (base, _, hits) = serve(vec![Canned {
            status: 401,
            headers: vec![],
            body: json!({"error": {"message": msg}}).to_string(),
        }]);
        match LiveBackend::new(config(&base)).complete(&request()) {
            Err(BackendError::Auth { status, message }) => {
                assert_eq!(status, 401);
                assert_eq!(message, msg);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retries_server_errors_and_rate_limits() {
        let (base, _, hits) = serve(vec![
            Canned {
                status: 500,
                headers: vec![],
                body: "oops".into(),
            },
            Canned {
                status: 429,
                headers: vec![("retry-after", "0".into())],
                body: json!({"error": {"message": "slow down"}}).to_string(),
            },
            Canned {
                status: 200,
                headers: vec![],
                body: ok_body("Yes"),
            },
        ]);
        let r = LiveBackend::new(config(&base)).complete(&request()).unwrap();
        assert_eq!(r.content, "Yes");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let fail = || Canned {
            status: 503,
            headers: vec![],
            body: json!({"error": {"message": "overloaded"}}).to_string(),
        };
        let (base, _, hits) = serve(vec![fail(), fail(), fail()]);
        match LiveBackend::new(config(&base)).complete(&request()) {
            Err(BackendError::Http { status, message }) => {
                assert_eq!(status, 503);
                assert_eq!(message, "overloaded");
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn empty_completion_is_an_error() {
        let (base, _, _) = serve(vec![Canned {
            status: 200,
            headers: vec![],
            body: json!({"choices": [{"message": {"content": ""}}]}).to_string(),
        }]);
        assert!(matches!(
            LiveBackend::new(config(&base)).complete(&request()),
            Err(BackendError::EmptyCompletion)
        ));
    }

    #[test]
    fn transport_failure_is_retried_then_reported() {
        // nothing listens on this port once the listener is dropped
        let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let mut c = config(&format!("http://{addr}"));
        c.max_attempts = 2;
        assert!(matches!(
            LiveBackend::new(c).complete(&request()),
            Err(BackendError::Transport(_))
        ));
    }
}

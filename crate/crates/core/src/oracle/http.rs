//! Chat-completion client for a remote planner endpoint.

use super::prompts::PromptContext;
use super::OracleError;
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};

/// Environment variable consulted for the bearer token unless overridden.
pub const DEFAULT_API_KEY_VAR: &str = "ORACLE_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Clone)]
pub struct OracleEndpoint {
    /// Scheme and host, e.g. `http://localhost:8801`; the chat-completions
    /// path is appended.
    pub base_url: String,
    pub model: String,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub max_retries: u32,
    pub temperature: f64,
    /// Name of the environment variable holding the bearer token; requests
    /// go out unauthenticated when it is unset.
    pub api_key_var: String,
}

impl OracleEndpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            timeout: Duration::from_secs(30),
            max_retries: 2,
            temperature: 0.0,
            api_key_var: DEFAULT_API_KEY_VAR.into(),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyBody,
}

#[derive(Deserialize)]
struct ChatReplyBody {
    content: String,
}

/// Planner output plus how long the successful request took.
#[derive(Debug, Clone)]
pub struct OracleReply {
    pub text: String,
    pub inference_time: Duration,
}

/// Sends the context to `<base>/v1/chat/completions` and returns the first
/// choice's text. Transport errors, non-success statuses, and unreadable
/// bodies are retried up to the endpoint's policy before giving up.
pub fn llm_generate(
    endpoint: &OracleEndpoint,
    ctx: &PromptContext,
) -> Result<OracleReply, OracleError> {
    if endpoint.timeout.is_zero() {
        return Err(OracleError::InvalidEndpoint("timeout must be positive".into()));
    }
    let client = reqwest::blocking::Client::builder()
        .timeout(endpoint.timeout)
        .build()
        .map_err(|e| OracleError::InvalidEndpoint(e.to_string()))?;
    let url = format!("{}/v1/chat/completions", endpoint.base_url.trim_end_matches('/'));
    let messages = ctx.messages();
    let body = ChatRequest {
        model: &endpoint.model,
        messages: &messages,
        temperature: endpoint.temperature,
    };
    let token = std::env::var(&endpoint.api_key_var).ok();
    let attempts = endpoint.max_retries + 1;
    let mut last = String::new();
    for _ in 0..attempts {
        let started = Instant::now();
        let mut request = client.post(&url).json(&body);
        if let Some(token) = &token {
            request = request.bearer_auth(token);
        }
        match request.send() {
            Ok(response) => {
                let status = response.status();
                if !status.is_success() {
                    last = format!("http status {status}");
                    continue;
                }
                match response.json::<ChatResponse>() {
                    Ok(parsed) => match parsed.choices.into_iter().next() {
                        Some(choice) => {
                            return Ok(OracleReply {
                                text: choice.message.content,
                                inference_time: started.elapsed(),
                            })
                        }
                        None => last = "reply held no choices".into(),
                    },
                    Err(e) => last = format!("unreadable reply body: {e}"),
                }
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(OracleError::Unavailable { attempts, last })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::thread;

    /// Minimal one-thread HTTP server: answers `replies` in order, then
    /// keeps repeating the last one. Returns (base_url, hit counter,
    /// captured (request head, request body) pairs).
    type Captured = Arc<std::sync::Mutex<Vec<(String, String)>>>;

    fn mock_server(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, Captured) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let captured: Captured = Arc::new(std::sync::Mutex::new(Vec::new()));
        let (hits2, captured2) = (hits.clone(), captured.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let hit = hits2.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream);
                let mut head = String::new();
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).is_err() || line.trim_end().is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(value) = lower.strip_prefix("content-length:") {
                        content_length = value.trim().parse().unwrap_or(0);
                    }
                    head.push_str(&line);
                }
                let mut body = vec![0u8; content_length];
                if reader.read_exact(&mut body).is_ok() {
                    captured2
                        .lock()
                        .unwrap()
                        .push((head, String::from_utf8_lossy(&body).into_owned()));
                }
                let (status, payload) = replies.get(hit).or_else(|| replies.last()).unwrap();
                let reason = if *status == 200 { "OK" } else { "Error" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\n\
                     content-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let mut stream = reader.into_inner();
                let _ = stream.write_all(response.as_bytes());
            }
        });
        (base, hits, captured)
    }

    fn canned(content: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        })
        .to_string()
    }

    fn context() -> PromptContext {
        let mut ctx = PromptContext::new("steer the fleet".to_string());
        ctx.begin_turn("plan now".to_string());
        ctx
    }

    #[test]
    fn reply_text_round_trips_through_the_wire() {
        let (base, hits, captured) = mock_server(vec![(200, canned("agent 0: get_origin()"))]);
        let endpoint = OracleEndpoint::new(base, "test-model");
        let reply = llm_generate(&endpoint, &context()).unwrap();
        assert_eq!(reply.text, "agent 0: get_origin()");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        let (head, body) = captured.lock().unwrap()[0].clone();
        assert!(head.starts_with("POST /v1/chat/completions"));
        let parsed: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(parsed["model"], "test-model");
        assert_eq!(parsed["temperature"], 0.0);
        assert_eq!(parsed["messages"][0]["role"], "system");
        assert_eq!(parsed["messages"][0]["content"], "steer the fleet");
        assert_eq!(parsed["messages"][1]["role"], "user");
        assert_eq!(parsed["messages"][1]["content"], "plan now");
    }

    #[test]
    fn server_errors_are_retried_then_succeed() {
        let (base, hits, _) = mock_server(vec![
            (500, "{}".to_string()),
            (503, "{}".to_string()),
            (200, canned("agent 0: get_destination()")),
        ]);
        let endpoint = OracleEndpoint::new(base, "m");
        let reply = llm_generate(&endpoint, &context()).unwrap();
        assert_eq!(reply.text, "agent 0: get_destination()");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn unreachable_endpoint_fails_after_all_attempts() {
        // Bind then drop to get a port with nothing listening.
        let port = {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            listener.local_addr().unwrap().port()
        };
        let endpoint = OracleEndpoint::new(format!("http://127.0.0.1:{port}"), "m");
        let err = llm_generate(&endpoint, &context()).unwrap_err();
        match err {
            OracleError::Unavailable { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected unavailable, got {other:?}"),
        }
    }

    #[test]
    fn missing_choices_count_as_failures() {
        let (base, hits, _) = mock_server(vec![(200, "{\"choices\":[]}".to_string())]);
        let mut endpoint = OracleEndpoint::new(base, "m");
        endpoint.max_retries = 1;
        let err = llm_generate(&endpoint, &context()).unwrap_err();
        match err {
            OracleError::Unavailable { attempts, last } => {
                assert_eq!(attempts, 2);
                assert!(last.contains("no choices"));
            }
            other => panic!("expected unavailable, got {other:?}"),
        }
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn bearer_token_is_read_from_the_configured_variable() {
        let (base, _, captured) = mock_server(vec![(200, canned("ok"))]);
        let mut endpoint = OracleEndpoint::new(base, "m");
        endpoint.api_key_var = "RELED_TEST_ORACLE_KEY".into();
        std::env::set_var("RELED_TEST_ORACLE_KEY", "sekrit");
        let reply = llm_generate(&endpoint, &context()).unwrap();
        std::env::remove_var("RELED_TEST_ORACLE_KEY");
        assert_eq!(reply.text, "ok");
        let (head, _) = captured.lock().unwrap()[0].clone();
        assert!(
            head.to_ascii_lowercase().contains("authorization: bearer sekrit"),
            "missing bearer header in:\n{head}"
        );
    }
}

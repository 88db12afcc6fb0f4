use super::{
    check_continuations, normalize_answer, ContinuationScores, FinishReason, GenerationRequest, GenerationResult,
    LanguageModel, ProviderError,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    2
}

impl HttpProviderConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
        }
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    logprob_of: Option<&'a [String]>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    text: String,
    finish_reason: String,
    #[serde(default)]
    logprobs: Option<HashMap<String, f64>>,
}

/// Client for the JSON completion protocol:
/// `{"prompt", "max_tokens", "temperature", "stop", "logprob_of"?}` in,
/// `{"text", "finish_reason", "logprobs"?}` out.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    config: HttpProviderConfig,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        reqwest::Url::parse(&config.endpoint)
            .map_err(|e| ProviderError::InvalidRequest(format!("bad endpoint `{}`: {e}", config.endpoint)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Unreachable(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &HttpProviderConfig {
        &self.config
    }

    fn post(&self, body: &WireRequest<'_>) -> Result<WireResponse, ProviderError> {
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            let response = match self.client.post(&self.config.endpoint).json(body).send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = response.status();
            if status.is_server_error() {
                last = format!("server returned {status}");
                continue;
            }
            if !status.is_success() {
                return Err(ProviderError::Unreachable(format!("server returned {status}")));
            }
            let bytes = response.bytes().map_err(|e| ProviderError::Unreachable(e.to_string()))?;
            return serde_json::from_slice(&bytes).map_err(|e| ProviderError::MalformedResponse(e.to_string()));
        }
        Err(ProviderError::Unreachable(last))
    }
}

fn finish_reason(s: &str) -> Result<FinishReason, ProviderError> {
    match s.to_ascii_lowercase().as_str() {
        "stop" | "eos" | "end_turn" => Ok(FinishReason::Stop),
        "length" | "max_tokens" => Ok(FinishReason::Length),
        "error" | "provider_error" => Ok(FinishReason::ProviderError),
        other => Err(ProviderError::MalformedResponse(format!("unknown finish_reason `{other}`"))),
    }
}

impl LanguageModel for HttpProvider {
    fn describe(&self) -> String {
        format!("http({})", self.config.endpoint)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        request.validate()?;
        let response = self.post(&WireRequest {
            prompt: &request.prompt_text,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            stop: &request.stop_sequences,
            logprob_of: None,
        })?;
        let finish_reason = finish_reason(&response.finish_reason)?;
        if response.text.is_empty() && finish_reason == FinishReason::Stop {
            return Err(ProviderError::MalformedResponse("empty text with finish_reason stop".into()));
        }
        Ok(GenerationResult {
            text: response.text,
            finish_reason,
        })
    }

    fn score_continuations(&self, prompt_prefix: &str, continuations: &[String]) -> Result<ContinuationScores, ProviderError> {
        check_continuations(continuations)?;
        let response = self.post(&WireRequest {
            prompt: prompt_prefix,
            max_tokens: 1,
            temperature: 0.0,
            stop: &[],
            logprob_of: Some(continuations),
        })?;
        let logprobs = response.logprobs.ok_or(ProviderError::ScoringUnsupported)?;
        let entries = continuations
            .iter()
            .map(|c| {
                let score = logprobs.get(c).copied().or_else(|| {
                    let want = normalize_answer(c);
                    logprobs.iter().find(|(k, _)| normalize_answer(k) == want).map(|(_, v)| *v)
                });
                score
                    .map(|s| (c.clone(), s))
                    .ok_or_else(|| ProviderError::MalformedResponse(format!("no logprob for `{c}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        ContinuationScores::new(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    /// Serve `replies` one connection each, sending every request body back on the channel.
    fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<serde_json::Value>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut request = vec![0; length];
                reader.read_exact(&mut request).unwrap();
                tx.send(serde_json::from_slice(&request).unwrap()).unwrap();
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (url, rx)
    }

    fn provider(url: String) -> HttpProvider {
        HttpProvider::new(HttpProviderConfig {
            endpoint: url,
            timeout_secs: 5,
            retries: 2,
        })
        .unwrap()
    }

    #[test]
    fn config_defaults() {
        let c: HttpProviderConfig = serde_json::from_str(r#"{"endpoint": "http://x"}"#).unwrap();
        assert_eq!((c.timeout_secs, c.retries), (60, 2));
    }

    #[test]
    fn generate_wire_format() {
        let (url, rx) = serve(vec![(200, r####"{"text": "### PLAN\n1. a", "finish_reason": "length"}"####.into())]);
        let mut request = GenerationRequest::new("hello");
        request.max_tokens = 7;
        request.stop_sequences = vec!["\n\n".into()];
        let result = provider(url).generate(&request).unwrap();
        assert_eq!(result.text, "### PLAN\n1. a");
        assert_eq!(result.finish_reason, FinishReason::Length);
        let sent = rx.recv().unwrap();
        assert_eq!(
            sent,
            serde_json::json!({"prompt": "hello", "max_tokens": 7, "temperature": 0.0, "stop": ["\n\n"]})
        );
    }

    #[test]
    fn scoring_wire_format() {
        let (url, rx) = serve(vec![(200, r#"{"text": "", "finish_reason": "length", "logprobs": {"Yes": -0.1, "no": -2.3}}"#.into())]);
        let scores = provider(url)
            .score_continuations("prefix", &["yes".to_string(), "no".to_string()])
            .unwrap();
        assert_eq!(scores.get("yes"), Some(-0.1));
        assert_eq!(scores.get("no"), Some(-2.3));
        let sent = rx.recv().unwrap();
        assert_eq!(sent["logprob_of"], serde_json::json!(["yes", "no"]));
        assert_eq!(sent["max_tokens"], 1);
    }

    #[test]
    fn missing_logprobs_is_scoring_unsupported() {
        let (url, _rx) = serve(vec![(200, r#"{"text": "yes", "finish_reason": "stop"}"#.into())]);
        let err = provider(url).score_continuations("p", &["yes".to_string()]).unwrap_err();
        assert_eq!(err, ProviderError::ScoringUnsupported);
    }

    #[test]
    fn retries_server_errors() {
        let (url, rx) = serve(vec![
            (503, "{}".into()),
            (500, "{}".into()),
            (200, r#"{"text": "ok", "finish_reason": "stop"}"#.into()),
        ]);
        let result = provider(url).generate(&GenerationRequest::new("p")).unwrap();
        assert_eq!(result.text, "ok");
        assert_eq!(rx.iter().take(3).count(), 3);
    }

    #[test]
    fn malformed_and_unreachable() {
        let (url, _rx) = serve(vec![(200, r#"{"words": 1}"#.into())]);
        assert!(matches!(
            provider(url).generate(&GenerationRequest::new("p")),
            Err(ProviderError::MalformedResponse(_))
        ));
        // Bind then drop, so nothing listens on the port.
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let p = HttpProvider::new(HttpProviderConfig {
            endpoint: format!("http://127.0.0.1:{port}/"),
            timeout_secs: 2,
            retries: 0,
        })
        .unwrap();
        assert!(matches!(p.generate(&GenerationRequest::new("p")), Err(ProviderError::Unreachable(_))));
        assert!(HttpProvider::new(HttpProviderConfig::new("not a url")).is_err());
    }
}

//! Client for OpenAI-compatible `POST /v1/chat/completions` servers.

use std::collections::HashMap;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{extract_final_answer, AnswerPattern, AnswerSample, Sampler, SamplerError};

/// Environment variable read for the bearer token.
pub const API_KEY_ENV: &str = "ACTSC_API_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveSamplerConfig {
    /// Server base URL, e.g. `http://127.0.0.1:8000`. A URL already ending
    /// in `/chat/completions` is used verbatim.
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    pub request_timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    /// `{question}` is replaced by the problem text.
    pub prompt_template: String,
    pub answer_pattern: AnswerPattern,
    /// Ask for all samples of a draw in one request via `n`.
    pub batch_with_n: bool,
    /// Upper bound on concurrent single-sample requests within one draw.
    pub max_parallel_requests: usize,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for LiveSamplerConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8000".into(),
            model_name: String::new(),
            temperature: 0.7,
            top_p: 0.8,
            max_output_tokens: 4096,
            request_timeout_secs: 600,
            max_retries: 3,
            backoff_base_ms: 500,
            prompt_template: "{question}\n\nPlease reason step by step, and put your final answer within \\boxed{}."
                .into(),
            answer_pattern: AnswerPattern::Boxed,
            batch_with_n: true,
            max_parallel_requests: 8,
            api_key: None,
        }
    }
}

impl LiveSamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(SamplerError::Config("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(SamplerError::Config("top_p must be in (0, 1]".into()));
        }
        if self.model_name.is_empty() {
            return Err(SamplerError::Config("model name is required".into()));
        }
        if self.max_parallel_requests == 0 {
            return Err(SamplerError::Config("max_parallel_requests must be >= 1".into()));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        let base = self.endpoint_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }

    /// Reads the API key from [`API_KEY_ENV`] when not already set.
    pub fn with_env_key(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        self
    }
}

#[derive(Debug, Serialize)]
pub struct ChatMessage<'a> {
    pub role: &'a str,
    pub content: &'a str,
}

#[derive(Debug, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: Vec<ChatMessage<'a>>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n: usize,
}

#[derive(Debug, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<Choice>,
    #[serde(default)]
    pub usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
pub struct Choice {
    #[serde(default)]
    pub index: usize,
    pub message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
pub struct ResponseMessage {
    #[serde(default)]
    pub content: Option<String>,
}

#[derive(Debug, Default, Clone, Copy, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

/// Splits `total` into `n` parts differing by at most one, larger parts first.
fn split_evenly(total: u64, n: usize) -> Vec<u64> {
    let n64 = n as u64;
    (0..n64).map(|i| total / n64 + u64::from(i < total % n64)).collect()
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

/// Live backend. Not paired: two runs see different completions.
#[derive(Clone)]
pub struct LiveSampler {
    config: Arc<LiveSamplerConfig>,
    questions: Arc<HashMap<String, String>>,
    golds: Arc<HashMap<String, String>>,
    client: reqwest::blocking::Client,
}

impl LiveSampler {
    pub fn new(
        config: LiveSamplerConfig,
        questions: HashMap<String, String>,
        golds: HashMap<String, String>,
    ) -> Result<Self, SamplerError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| SamplerError::Config(format!("HTTP client: {e}")))?;
        Ok(Self {
            config: Arc::new(config),
            questions: Arc::new(questions),
            golds: Arc::new(golds),
            client,
        })
    }

    pub fn config(&self) -> &LiveSamplerConfig {
        &self.config
    }

    fn prompt(&self, problem_id: &str) -> Result<String, SamplerError> {
        let q = self
            .questions
            .get(problem_id)
            .ok_or_else(|| SamplerError::UnknownProblem(problem_id.to_string()))?;
        Ok(self.config.prompt_template.replace("{question}", q))
    }

    fn send_once(&self, prompt: &str, n: usize) -> Result<ChatResponse, Attempt> {
        let body = ChatRequest {
            model: &self.config.model_name,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.config.temperature,
            top_p: self.config.top_p,
            max_tokens: self.config.max_output_tokens,
            n,
        };
        let mut req = self.client.post(self.config.completions_url()).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
        }
        resp.json::<ChatResponse>()
            .map_err(|e| Attempt::Fatal(format!("malformed response: {e}")))
    }

    /// One request with exponential backoff.
    fn request(&self, problem_id: &str, prompt: &str, n: usize) -> Result<ChatResponse, SamplerError> {
        let max_attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..max_attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                log::warn!("retrying `{problem_id}` in {delay} ms (attempt {}): {last}", attempt + 1);
                thread::sleep(Duration::from_millis(delay));
            }
            match self.send_once(prompt, n) {
                Ok(r) => return Ok(r),
                Err(Attempt::Retry(msg)) => last = msg,
                Err(Attempt::Fatal(msg)) => {
                    return Err(SamplerError::Transport {
                        problem_id: problem_id.to_string(),
                        attempts: attempt + 1,
                        message: msg,
                    })
                }
            }
        }
        Err(SamplerError::Transport {
            problem_id: problem_id.to_string(),
            attempts: max_attempts,
            message: last,
        })
    }

    fn to_samples(&self, mut resp: ChatResponse) -> Vec<AnswerSample> {
        resp.choices.sort_by_key(|c| c.index);
        let n = resp.choices.len();
        if n == 0 {
            return Vec::new();
        }
        let usage = resp.usage.unwrap_or_default();
        let inputs = split_evenly(usage.prompt_tokens, n);
        let outputs = split_evenly(usage.completion_tokens, n);
        resp.choices
            .into_iter()
            .zip(inputs.into_iter().zip(outputs))
            .map(|(c, (i, o))| {
                let text = c.message.content.unwrap_or_default();
                AnswerSample::new(extract_final_answer(&text, self.config.answer_pattern), i, o)
            })
            .collect()
    }

    /// Issues `count` single-sample requests, at most `max_parallel_requests`
    /// in flight, and returns them in request order.
    fn draw_singles(&self, problem_id: &str, prompt: &str, count: usize) -> Result<Vec<AnswerSample>, SamplerError> {
        let mut out = Vec::with_capacity(count);
        let mut start = 0;
        while start < count {
            let chunk = (count - start).min(self.config.max_parallel_requests);
            let results: Vec<Result<ChatResponse, SamplerError>> = thread::scope(|s| {
                let handles: Vec<_> = (0..chunk)
                    .map(|_| s.spawn(|| self.request(problem_id, prompt, 1)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("request thread panicked"))
                    .collect()
            });
            for r in results {
                let mut samples = self.to_samples(r?);
                if samples.is_empty() {
                    return Err(SamplerError::Transport {
                        problem_id: problem_id.to_string(),
                        attempts: 1,
                        message: "response carried no choices".into(),
                    });
                }
                samples.truncate(1);
                out.extend(samples);
            }
            start += chunk;
        }
        Ok(out)
    }
}

impl Sampler for LiveSampler {
    fn draw(&mut self, problem_id: &str, count: usize) -> Result<Vec<AnswerSample>, SamplerError> {
        if count == 0 {
            return Err(SamplerError::ZeroCount);
        }
        let prompt = self.prompt(problem_id)?;
        if !self.config.batch_with_n || count == 1 {
            return self.draw_singles(problem_id, &prompt, count);
        }
        let mut samples = self.to_samples(self.request(problem_id, &prompt, count)?);
        samples.truncate(count);
        // Servers that ignore `n` return a single choice; top up one by one.
        if samples.len() < count {
            let rest = self.draw_singles(problem_id, &prompt, count - samples.len())?;
            samples.extend(rest);
        }
        Ok(samples)
    }

    fn gold_answer(&self, problem_id: &str) -> Option<String> {
        self.golds.get(problem_id).cloned()
    }

    fn is_paired(&self) -> bool {
        false
    }
}

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::prompt::{render_user_message, GENERATOR_PROMPT};
use super::{Capabilities, EvidenceSet, GeneratorBackend, QueryContext, Rollout};
use crate::error::{Error, Result};
use crate::grammar::parse_generation;
use crate::reward::{generator_reward, GeneratorRewardConfig};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: usize,
    pub backoff_ms: u64,
    pub concurrency: usize,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: "EVSEL_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 250,
            concurrency: 4,
            temperature: 1.0,
            max_tokens: 512,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Chat-completion client. Not trainable: it exposes no log-probabilities.
pub struct RemoteGenerator {
    cfg: EndpointConfig,
    reward_cfg: GeneratorRewardConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    slots: Semaphore,
}

enum Failure {
    Timeout,
    Other(String),
}

impl RemoteGenerator {
    pub fn new(cfg: EndpointConfig, reward_cfg: GeneratorRewardConfig) -> Result<Self> {
        if cfg.concurrency == 0 {
            return Err(Error::Config("endpoint.concurrency must be at least 1".into()));
        }
        if !(cfg.timeout_secs > 0.0) {
            return Err(Error::Config("endpoint.timeout_secs must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        let api_key = std::env::var(&cfg.api_key_env).ok();
        let slots = Semaphore {
            free: Mutex::new(cfg.concurrency),
            cv: Condvar::new(),
        };
        Ok(RemoteGenerator {
            cfg,
            reward_cfg,
            client,
            api_key,
            slots,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, Failure> {
        let mut req = self.client.post(self.url()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Failure::Timeout
            } else {
                Failure::Other(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Failure::Other(format!("HTTP {status}")));
        }
        let value: serde_json::Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                Failure::Timeout
            } else {
                Failure::Other(format!("bad response body: {e}"))
            }
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| Failure::Other("response has no choices[0].message.content".into()))
    }

    /// One completion with bounded retries and exponential backoff.
    pub fn complete(&self, system: &str, user: &str, seed: u64) -> Result<String> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "seed": seed,
        });
        let _slot = self.slots.acquire();
        let attempts = self.cfg.max_retries + 1;
        let mut last = Failure::Other("no attempt made".into());
        for n in 0..attempts {
            if n > 0 {
                thread::sleep(Duration::from_millis(self.cfg.backoff_ms.saturating_mul(1 << (n - 1).min(16))));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(f) => {
                    if let Failure::Other(m) = &f {
                        tracing::warn!(attempt = n + 1, error = %m, "endpoint request failed");
                    }
                    last = f;
                }
            }
        }
        Err(match last {
            Failure::Timeout => Error::Timeout { attempts },
            Failure::Other(message) => Error::Endpoint { attempts, message },
        })
    }

    pub fn remote_rollout(&self, ctx: &QueryContext, evidence: &EvidenceSet, seed: u64) -> Result<Rollout> {
        let user = render_user_message(&ctx.query.text, ctx.evidence_docs(evidence));
        let raw = self.complete(GENERATOR_PROMPT, &user, seed)?;
        let generation = parse_generation(&raw, evidence.len().max(1));
        let reward = generator_reward(&generation, &ctx.query.gold_answers, &self.reward_cfg);
        Ok(Rollout {
            generation,
            grounded_positions: None,
            reward,
            logprob: None,
        })
    }
}

impl GeneratorBackend for RemoteGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            trainable: false,
            deterministic_mode: false,
        }
    }

    fn rollout(&self, ctx: &QueryContext, evidence: &EvidenceSet, rng: &mut StreamRng) -> Result<Rollout> {
        self.remote_rollout(ctx, evidence, rng.next_u64() >> 1)
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Toxicity scorers: a deterministic lexicon stub and an HTTP client for
//! any service speaking the same contract.
//!
//! Contract: `POST {base}/v1/score` with body `{"text": "..."}`; the
//! response is `{"scores": {"<attribute>": <0..1>, ...}}`.
//!
//! Stub rule: for a text of `m` whitespace-separated tokens with `k` of them
//! in a category lexicon, the category's attribute score is
//! `min(1, 4·k/m)`. `toxicity` applies the same rule to hits from every
//! lexicon. An empty text scores 0 everywhere.

use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::scores::{attribute_key, CategoryScores, TOXICITY_KEY};
use crate::data::ClassLabel;
use crate::error::{Result, ScorerError};

pub trait Scorer: Send + Sync {
    fn score(&self, text: &str) -> Result<CategoryScores>;
}

/// Multiplier applied to the lexicon hit fraction.
pub const STUB_HIT_WEIGHT: f64 = 4.0;

#[derive(Debug, Clone, Default)]
pub struct StubScorer {
    lexicons: Vec<(ClassLabel, HashSet<String>)>,
}

impl StubScorer {
    pub fn new(lexicons: &BTreeMap<ClassLabel, Vec<String>>) -> Self {
        Self {
            lexicons: lexicons
                .iter()
                .map(|(c, words)| (*c, words.iter().cloned().collect()))
                .collect(),
        }
    }

    fn rule(hits: usize, m: usize) -> f64 {
        if m == 0 {
            0.0
        } else {
            (STUB_HIT_WEIGHT * hits as f64 / m as f64).min(1.0)
        }
    }

    pub fn score_text(&self, text: &str) -> CategoryScores {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let m = tokens.len();
        let mut scores = BTreeMap::new();
        let mut any = 0usize;
        for (cat, lex) in &self.lexicons {
            let hits = tokens.iter().filter(|t| lex.contains(**t)).count();
            any += hits;
            if let Some(key) = attribute_key(*cat) {
                let v = Self::rule(hits, m);
                let e = scores.entry(key.to_string()).or_insert(0.0f64);
                *e = e.max(v);
            }
        }
        scores.insert(TOXICITY_KEY.to_string(), Self::rule(any, m));
        CategoryScores::new(scores).expect("stub scores lie in [0, 1]")
    }
}

impl Scorer for StubScorer {
    fn score(&self, text: &str) -> Result<CategoryScores> {
        Ok(self.score_text(text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HttpScorerConfig {
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for HttpScorerConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            retries: 2,
            backoff: Duration::from_millis(100),
        }
    }
}

#[derive(Serialize)]
pub(crate) struct ScoreRequest<'a> {
    pub text: &'a str,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ScoreResponse {
    pub scores: BTreeMap<String, f64>,
}

/// Blocking client for a remote scorer.
pub struct HttpScorer {
    url: String,
    agent: ureq::Agent,
    config: HttpScorerConfig,
}

enum Failure {
    Retry(ScorerError),
    Fatal(ScorerError),
}

impl HttpScorer {
    pub fn new(base_url: &str, config: HttpScorerConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}/v1/score", base_url.trim_end_matches('/')),
            agent,
            config,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, text: &str, attempts: u32) -> std::result::Result<CategoryScores, Failure> {
        let mut resp = match self.agent.post(&self.url).send_json(ScoreRequest { text }) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err(Failure::Retry(ScorerError::Timeout { attempts }))
            }
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
                return Err(Failure::Retry(ScorerError::Timeout { attempts }))
            }
            Err(e) => {
                return Err(Failure::Retry(ScorerError::Transport {
                    attempts,
                    message: e.to_string(),
                }))
            }
        };
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let err = ScorerError::Status { status, attempts };
            // Client errors will not change on retry.
            return Err(if (400..500).contains(&status) && status != 429 {
                Failure::Fatal(err)
            } else {
                Failure::Retry(err)
            });
        }
        let body: ScoreResponse = match resp.body_mut().read_json() {
            Ok(b) => b,
            Err(ureq::Error::Timeout(_)) => {
                return Err(Failure::Retry(ScorerError::Timeout { attempts }))
            }
            Err(e) => return Err(Failure::Fatal(ScorerError::MalformedBody(e.to_string()))),
        };
        CategoryScores::new(body.scores).map_err(Failure::Fatal)
    }
}

impl Scorer for HttpScorer {
    fn score(&self, text: &str) -> Result<CategoryScores> {
        let max_attempts = self.config.retries + 1;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(text, attempts) {
                Ok(s) => return Ok(s),
                Err(Failure::Fatal(e)) => return Err(e.into()),
                Err(Failure::Retry(e)) if attempts >= max_attempts => return Err(e.into()),
                Err(Failure::Retry(_)) => std::thread::sleep(self.config.backoff),
            }
        }
    }
}

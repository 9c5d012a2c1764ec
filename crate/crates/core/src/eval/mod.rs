// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fluency, diversity and toxicity metrics, scorers and the evaluation runner.

mod metrics;
mod runner;
mod scorer;
mod scores;
mod server;

pub use metrics::{distinct_n, emission_rate, perplexity, window_plan, Perplexity, WindowPlan};
pub use runner::{
    category_table, run_eval, summary_table, CategoryStats, EvalConfig, EvalExtras, EvalReport,
    PromptOutcome,
};
pub use scorer::{HttpScorer, HttpScorerConfig, Scorer, StubScorer, STUB_HIT_WEIGHT};
pub use scores::{attribute_key, categorize_prompt, CategoryScores, RECOGNIZED_KEYS, TOXICITY_KEY};
pub use server::{router, serve, ServerFaults, StubServer};

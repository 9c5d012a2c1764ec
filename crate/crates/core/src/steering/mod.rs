// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-step probe selection, KL-based scale estimation and steered greedy
//! generation with a JSON-lines trace.

mod config;
mod distributions;
mod generate;
mod select;

pub use config::{KlDirection, ScalingMode, SelectionMode, SteeringConfig};
pub use distributions::{
    kl_divergence, softmax, top_p_set, union_distributions, UnionDistributions,
};
pub use generate::{
    generate_steered, generate_unsteered, write_trace, GenerationResult, SteeredLm,
    SteeringDecision, TraceSummary,
};
pub use select::{
    dynamic_alpha, intervene, probe_similarities, select_probe, weighted_probe, Selection,
};

//! JSON reports.

use std::time::Instant;

use pinv_core::cegis::{Clock, Mode, RunConfig, RunReport};
use pinv_core::verify::Verdict;
use serde::Serialize;

/// Wall clock measured from construction.
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        SystemClock(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// A synthesis run, possibly restarted with successive seeds.
#[derive(Debug, Serialize)]
pub struct SynthesisReport {
    pub program: String,
    pub mode: Mode,
    pub post: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre: Option<String>,
    pub features: Vec<String>,
    pub domain: String,
    pub config: RunConfig,
    /// The verified invariant of the last attempt, if any.
    pub invariant: Option<String>,
    pub attempts: Vec<RunReport>,
}

/// Result of the standalone checker.
#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub program: String,
    pub post: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre: Option<String>,
    pub candidate: String,
    pub domain: String,
    pub verdict: Verdict,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

//! Model-assisted task expansion: seed instructions in, new candidate
//! instructions out, each awaiting human review.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::review::ReviewStatus;
use super::RecorderError;
use crate::agent::{fill, ChatMessage, LlmClient, Role, Templates};

static LIST_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*\u{2022}]|\(?\d+[.):]|task\s*\d*\s*:)\s*").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub instruction: String,
    pub app: String,
    /// Always pending: candidates are never accepted automatically.
    pub review: ReviewStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expansion {
    pub candidates: Vec<Candidate>,
    pub requested: usize,
    /// Model lines dropped for repeating a seed or an earlier candidate.
    pub duplicates: usize,
}

/// Comparison key: lowercase, single-spaced, trailing punctuation dropped.
fn dedup_key(s: &str) -> String {
    let flat = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    flat.trim_end_matches(|c: char| c.is_ascii_punctuation()).to_string()
}

fn clean_line(line: &str) -> String {
    let stripped = LIST_MARKER.replace(line, "");
    stripped.trim().trim_matches(|c| c == '"' || c == '\u{201c}' || c == '\u{201d}').trim().to_string()
}

/// Asks the model for `n` new tasks in the style of `seeds`. Returns at most
/// `n` candidates; fewer when the model repeats itself or the seeds.
pub fn expand_tasks(
    seeds: &[String],
    llm: &dyn LlmClient,
    app: &str,
    n: usize,
    templates: &Templates,
) -> Result<Expansion, RecorderError> {
    let seeds: Vec<&str> = seeds.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    if seeds.is_empty() {
        return Err(RecorderError::EmptySeeds);
    }
    if n == 0 {
        return Err(RecorderError::InvalidArgument("n must be at least 1".into()));
    }
    let listed = seeds.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n");
    let prompt = fill(&templates.expand, &[("app", app), ("seeds", &listed), ("n", &n.to_string())]);
    let reply = llm.complete(&[ChatMessage::text(Role::User, prompt)])?;

    let mut seen: HashSet<String> = seeds.iter().map(|s| dedup_key(s)).collect();
    let mut candidates = Vec::new();
    let mut duplicates = 0;
    for line in reply.lines() {
        if candidates.len() == n {
            break;
        }
        let text = clean_line(line);
        if text.is_empty() {
            continue;
        }
        if !seen.insert(dedup_key(&text)) {
            duplicates += 1;
            continue;
        }
        candidates.push(Candidate { instruction: text, app: app.to_string(), review: ReviewStatus::Pending });
    }
    if candidates.len() < n {
        log::warn!("expansion for {app}: {} of {n} candidates ({duplicates} duplicates dropped)", candidates.len());
    }
    Ok(Expansion { candidates, requested: n, duplicates })
}

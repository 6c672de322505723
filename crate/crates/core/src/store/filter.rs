use serde::{Deserialize, Serialize};

use super::lexicon::is_strict_ancestor;
use super::MessageSummary;
use crate::trace::{HelpRequestPayload, ObjectKind};

pub const DEFAULT_LIMIT: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub message_id: String,
    pub score: u8,
    pub rank: usize,
}

/// Relevance of one message to a request:
/// 3 exact object and matching type, 2 exact object only, 1 the message's
/// lexicon object is a strict ancestor of the requested path. General
/// messages never score.
pub fn score(message: &MessageSummary, request: &HelpRequestPayload) -> Option<u8> {
    if message.general {
        return None;
    }
    let exact = message
        .objects
        .iter()
        .any(|o| o.kind == request.object_kind && o.id == request.object_id);
    if exact {
        return Some(if message.request_types.contains(&request.request_type) { 3 } else { 2 });
    }
    let ancestor = request.object_kind == ObjectKind::Lexicon
        && message
            .objects
            .iter()
            .any(|o| o.kind == ObjectKind::Lexicon && is_strict_ancestor(&o.id, &request.object_id));
    ancestor.then_some(1)
}

/// Scores every message, orders by (score desc, id asc) and keeps `limit`.
pub fn filter(messages: &[MessageSummary], request: &HelpRequestPayload, limit: usize) -> Vec<Suggestion> {
    let mut scored: Vec<(u8, &str)> = messages
        .iter()
        .filter_map(|m| score(m, request).map(|s| (s, m.id.as_str())))
        .collect();
    scored.sort_unstable_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored
        .into_iter()
        .take(limit)
        .enumerate()
        .map(|(i, (score, id))| Suggestion { message_id: id.to_string(), score, rank: i + 1 })
        .collect()
}

//! Resolves a message's SMIL timeline into a schedule of cue start and end
//! points. Audio lengths come from the WAV headers; text and animation cues
//! last until the longest audio cue ends.

use ozforge_core::store::Store;
use ozforge_core::trace::{CueKind, CuePhase, PlaybackCuePayload};
use ozforge_core::wav;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledCue {
    pub offset_ms: u64,
    /// Position of the cue in the message timeline.
    pub index: usize,
    pub cue: PlaybackCuePayload,
}

/// Start and end points ordered by offset. At equal offsets starts come
/// before ends and timeline order is kept.
pub fn plan(store: &Store, message_id: &str) -> Option<Vec<ScheduledCue>> {
    let timeline = store.timeline(message_id)?;
    let audio_end = |c: &ozforge_core::store::Cue| {
        let ms = store
            .cue_path(message_id, c)
            .and_then(|p| std::fs::read(p).ok())
            .and_then(|b| wav::duration_ms(&b))
            .unwrap_or(0);
        c.begin_ms + u64::from(ms)
    };
    let audio_ends: Vec<Option<u64>> = timeline
        .cues
        .iter()
        .map(|c| (c.kind == CueKind::Audio).then(|| audio_end(c)))
        .collect();
    let speech_end = audio_ends.iter().flatten().copied().max();
    let mut points = Vec::with_capacity(timeline.cues.len() * 2);
    for (i, c) in timeline.cues.iter().enumerate() {
        let end = match audio_ends[i] {
            Some(e) => e,
            None => speech_end.unwrap_or(c.begin_ms).max(c.begin_ms),
        };
        let payload = |phase| PlaybackCuePayload {
            message_id: message_id.to_string(),
            cue_kind: c.kind,
            src: c.src.clone(),
            phase,
        };
        points.push((c.begin_ms, 0u8, i, ScheduledCue { offset_ms: c.begin_ms, index: i, cue: payload(CuePhase::Start) }));
        points.push((end, 1u8, i, ScheduledCue { offset_ms: end, index: i, cue: payload(CuePhase::End) }));
    }
    points.sort_by_key(|p| (p.0, p.1, p.2));
    Some(points.into_iter().map(|p| p.3).collect())
}

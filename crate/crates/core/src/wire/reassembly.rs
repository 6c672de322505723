use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::datagram::FrameChunk;

pub const DEFAULT_MAX_PENDING: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompleteFrame {
    pub frame_seq: u32,
    pub t_us: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReassemblyStats {
    pub delivered: u64,
    pub dropped_incomplete: u64,
    pub crc_failures: u64,
    pub stale_discarded: u64,
    /// Chunks whose total_chunks or t_us disagree with earlier chunks of the
    /// same frame.
    pub inconsistent: u64,
}

#[derive(Debug)]
struct Pending {
    t_us: u64,
    parts: Vec<Option<Vec<u8>>>,
    received: usize,
}

/// Latest-wins frame reassembly for one message class of one sender.
///
/// A frame is delivered once, when its last missing chunk arrives. Delivery
/// of frame `n` discards every buffered frame older than `n`, and chunks of
/// frames at or below the highest delivered frame_seq are stale.
#[derive(Debug)]
pub struct Reassembler {
    max_pending: usize,
    pending: BTreeMap<u32, Pending>,
    highest_delivered: Option<u32>,
    stats: ReassemblyStats,
}

impl Default for Reassembler {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_PENDING)
    }
}

impl Reassembler {
    pub fn new(max_pending: usize) -> Self {
        Self { max_pending: max_pending.max(1), pending: BTreeMap::new(), highest_delivered: None, stats: ReassemblyStats::default() }
    }

    pub fn stats(&self) -> ReassemblyStats {
        self.stats
    }

    pub fn highest_delivered(&self) -> Option<u32> {
        self.highest_delivered
    }

    pub fn pending_frames(&self) -> usize {
        self.pending.len()
    }

    /// Counts a datagram that failed CRC validation upstream.
    pub fn note_crc_failure(&mut self) {
        self.stats.crc_failures += 1;
    }

    pub fn push(&mut self, chunk: FrameChunk) -> Option<CompleteFrame> {
        if self.highest_delivered.is_some_and(|h| chunk.frame_seq <= h) {
            self.stats.stale_discarded += 1;
            return None;
        }
        let total = usize::from(chunk.total_chunks);
        let seq = chunk.frame_seq;
        let entry = self.pending.entry(seq).or_insert_with(|| Pending {
            t_us: chunk.t_us,
            parts: vec![None; total],
            received: 0,
        });
        if entry.parts.len() != total || entry.t_us != chunk.t_us {
            self.stats.inconsistent += 1;
            return None;
        }
        let slot = &mut entry.parts[usize::from(chunk.chunk_index)];
        if slot.is_none() {
            *slot = Some(chunk.payload);
            entry.received += 1;
        }
        if entry.received == total {
            let done = self.pending.remove(&seq).expect("entry present");
            let bytes = done.parts.into_iter().flatten().flatten().collect();
            self.highest_delivered = Some(seq);
            self.stats.delivered += 1;
            let older: Vec<u32> = self.pending.range(..seq).map(|(k, _)| *k).collect();
            for k in older {
                self.pending.remove(&k);
                self.stats.dropped_incomplete += 1;
            }
            return Some(CompleteFrame { frame_seq: seq, t_us: done.t_us, bytes });
        }
        while self.pending.len() > self.max_pending {
            self.pending.pop_first();
            self.stats.dropped_incomplete += 1;
        }
        None
    }

    /// Drops every still-incomplete frame (end of stream).
    pub fn finish(&mut self) -> ReassemblyStats {
        self.stats.dropped_incomplete += self.pending.len() as u64;
        self.pending.clear();
        self.stats
    }
}

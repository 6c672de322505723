//! Dual-channel transport: chunked screen frames over a lossy datagram
//! channel, and length-prefixed JSON control messages over a reliable
//! stream.

mod control;
mod datagram;
mod lossy;
mod reassembly;

pub use control::{
    encode_control, read_control, write_control, ControlDecoder, ControlMessage, PlaybackStatus, ProtocolError,
    MAX_CONTROL_LEN,
};
pub use datagram::{
    chunk_count, chunk_frame, chunk_message, parse_datagram, payload_cap, ChunkError, DatagramError, FrameChunk,
    MsgType, DEFAULT_MAX_DATAGRAM, HEADER_LEN, MAGIC, OVERHEAD, TRAILER_LEN,
};
pub use lossy::{ChannelStats, LossyChannel};
pub use reassembly::{CompleteFrame, ReassemblyStats, Reassembler, DEFAULT_MAX_PENDING};

pub const DEFAULT_FRAME_PORT: u16 = 47001;
pub const DEFAULT_CONTROL_PORT: u16 = 47002;

use crate::gaze::GazeSample;
use crate::trace::Timestamp;

const GAZE_RECORD_LEN: usize = 17;

/// Packs gaze samples for a msg_type 2 datagram payload:
/// t_us u64, x i32, y i32, valid u8, big-endian.
pub fn encode_gaze_batch(samples: &[GazeSample]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * GAZE_RECORD_LEN);
    for s in samples {
        out.extend_from_slice(&s.t.0.to_be_bytes());
        out.extend_from_slice(&s.x.to_be_bytes());
        out.extend_from_slice(&s.y.to_be_bytes());
        out.push(u8::from(s.valid));
    }
    out
}

pub fn decode_gaze_batch(bytes: &[u8]) -> Option<Vec<GazeSample>> {
    if !bytes.len().is_multiple_of(GAZE_RECORD_LEN) {
        return None;
    }
    bytes
        .chunks_exact(GAZE_RECORD_LEN)
        .map(|r| {
            Some(GazeSample {
                t: Timestamp(u64::from_be_bytes(r[0..8].try_into().ok()?)),
                x: i32::from_be_bytes(r[8..12].try_into().ok()?),
                y: i32::from_be_bytes(r[12..16].try_into().ok()?),
                valid: match r[16] {
                    0 => false,
                    1 => true,
                    _ => return None,
                },
            })
        })
        .collect()
}

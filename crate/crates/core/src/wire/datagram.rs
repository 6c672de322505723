use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"OZF1";
pub const HEADER_LEN: usize = 27;
pub const TRAILER_LEN: usize = 4;
pub const OVERHEAD: usize = HEADER_LEN + TRAILER_LEN;
pub const DEFAULT_MAX_DATAGRAM: usize = 1400;
pub const MIN_MAX_DATAGRAM: usize = 64;

/// Datagram payload class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    FrameChunk = 1,
    GazeBatch = 2,
    AudioChunk = 3,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(MsgType::FrameChunk),
            2 => Some(MsgType::GazeBatch),
            3 => Some(MsgType::AudioChunk),
            _ => None,
        }
    }
}

/// One datagram of the frame channel.
///
/// Layout (big-endian): magic[4] msg_type[1] session_id[4] frame_seq[4]
/// t_us[8] total_chunks[2] chunk_index[2] payload_len[2] payload crc32[4],
/// the CRC covering header and payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameChunk {
    pub msg_type: MsgType,
    pub session_id: u32,
    pub frame_seq: u32,
    pub t_us: u64,
    pub total_chunks: u16,
    pub chunk_index: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DatagramError {
    #[error("datagram truncated ({0} bytes)")]
    Truncated(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unknown msg_type {0}")]
    UnknownType(u8),
    #[error("payload_len {declared} does not match datagram size {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("crc mismatch")]
    Crc,
    #[error("chunk_index {index} not below total_chunks {total}")]
    IndexOutOfRange { index: u16, total: u16 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("max_datagram {0} below minimum {MIN_MAX_DATAGRAM}")]
    DatagramTooSmall(usize),
    #[error("frame of {len} bytes needs {chunks} chunks, more than 65535")]
    TooLarge { len: usize, chunks: usize },
}

impl FrameChunk {
    pub fn payload_len(&self) -> u16 {
        self.payload.len() as u16
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(OVERHEAD + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.session_id.to_be_bytes());
        out.extend_from_slice(&self.frame_seq.to_be_bytes());
        out.extend_from_slice(&self.t_us.to_be_bytes());
        out.extend_from_slice(&self.total_chunks.to_be_bytes());
        out.extend_from_slice(&self.chunk_index.to_be_bytes());
        out.extend_from_slice(&self.payload_len().to_be_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        out
    }
}

/// Decodes and verifies one datagram. Arbitrary input is allowed.
pub fn parse_datagram(bytes: &[u8]) -> Result<FrameChunk, DatagramError> {
    if bytes.len() < OVERHEAD {
        return Err(DatagramError::Truncated(bytes.len()));
    }
    if bytes[0..4] != MAGIC {
        return Err(DatagramError::BadMagic);
    }
    let u16_at = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let payload_len = usize::from(u16_at(25));
    let expected = OVERHEAD + payload_len;
    if bytes.len() < expected {
        return Err(DatagramError::Truncated(bytes.len()));
    }
    if bytes.len() > expected {
        return Err(DatagramError::LengthMismatch { declared: payload_len, actual: bytes.len() });
    }
    let body_end = HEADER_LEN + payload_len;
    if crc32fast::hash(&bytes[..body_end]) != u32_at(body_end) {
        return Err(DatagramError::Crc);
    }
    let msg_type = MsgType::from_u8(bytes[4]).ok_or(DatagramError::UnknownType(bytes[4]))?;
    let total_chunks = u16_at(21);
    let chunk_index = u16_at(23);
    if chunk_index >= total_chunks {
        return Err(DatagramError::IndexOutOfRange { index: chunk_index, total: total_chunks });
    }
    Ok(FrameChunk {
        msg_type,
        session_id: u32_at(5),
        frame_seq: u32_at(9),
        t_us: u64::from_be_bytes(bytes[13..21].try_into().expect("8 bytes")),
        total_chunks,
        chunk_index,
        payload: bytes[HEADER_LEN..body_end].to_vec(),
    })
}

pub fn payload_cap(max_datagram: usize) -> usize {
    (max_datagram - OVERHEAD).min(usize::from(u16::MAX))
}

/// Number of datagrams a message of `len` bytes occupies.
pub fn chunk_count(len: usize, max_datagram: usize) -> usize {
    len.max(1).div_ceil(payload_cap(max_datagram))
}

/// Splits a screen frame into encoded frame-channel datagrams.
pub fn chunk_frame(
    frame_bytes: &[u8],
    session_id: u32,
    frame_seq: u32,
    t_us: u64,
    max_datagram: usize,
) -> Result<Vec<Vec<u8>>, ChunkError> {
    chunk_message(MsgType::FrameChunk, frame_bytes, session_id, frame_seq, t_us, max_datagram)
}

pub fn chunk_message(
    msg_type: MsgType,
    bytes: &[u8],
    session_id: u32,
    seq: u32,
    t_us: u64,
    max_datagram: usize,
) -> Result<Vec<Vec<u8>>, ChunkError> {
    if max_datagram < MIN_MAX_DATAGRAM {
        return Err(ChunkError::DatagramTooSmall(max_datagram));
    }
    let cap = payload_cap(max_datagram);
    let chunks = chunk_count(bytes.len(), max_datagram);
    if chunks > usize::from(u16::MAX) {
        return Err(ChunkError::TooLarge { len: bytes.len(), chunks });
    }
    let total = chunks as u16;
    Ok((0..chunks)
        .map(|i| {
            let lo = (i * cap).min(bytes.len());
            let hi = ((i + 1) * cap).min(bytes.len());
            FrameChunk {
                msg_type,
                session_id,
                frame_seq: seq,
                t_us,
                total_chunks: total,
                chunk_index: i as u16,
                payload: bytes[lo..hi].to_vec(),
            }
            .encode()
        })
        .collect())
}

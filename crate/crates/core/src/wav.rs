//! Minimal RIFF/WAVE helpers: duration from the header, and a PCM tone
//! writer for fixtures.

/// Duration in milliseconds derived from the `fmt ` byte rate and the `data`
/// chunk size. `None` when the bytes are not a parsable PCM WAV or the
/// duration rounds to zero.
pub fn duration_ms(bytes: &[u8]) -> Option<u32> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return None;
    }
    let mut pos = 12;
    let mut byte_rate = None;
    let mut data_len = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().ok()?) as usize;
        let body = pos + 8;
        match id {
            b"fmt " if len >= 16 && body + 16 <= bytes.len() => {
                byte_rate = Some(u32::from_le_bytes(bytes[body + 8..body + 12].try_into().ok()?));
            }
            b"data" => data_len = Some(len.min(bytes.len().saturating_sub(body))),
            _ => {}
        }
        pos = body + len + (len & 1);
    }
    let rate = u64::from(byte_rate.filter(|r| *r > 0)?);
    let ms = (data_len? as u64 * 1_000) / rate;
    u32::try_from(ms).ok().filter(|ms| *ms > 0)
}

/// 16-bit mono PCM sine tone.
pub fn tone(sample_rate: u32, duration_ms: u32, freq_hz: f64) -> Vec<u8> {
    let n = (u64::from(sample_rate) * u64::from(duration_ms) / 1_000) as usize;
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for k in 0..n {
        let phase = 2.0 * std::f64::consts::PI * freq_hz * k as f64 / f64::from(sample_rate);
        let v = (phase.sin() * 8_000.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

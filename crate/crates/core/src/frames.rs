//! Screen-frame providers. The recorder asks a [`FrameSource`] for a capture
//! after every user, system or automatic event.

use std::io::Cursor;
use std::sync::Arc;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, ImageReader, Rgb, RgbImage};

use crate::trace::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScreenFrame {
    pub jpeg: Arc<[u8]>,
    pub width: u32,
    pub height: u32,
}

pub trait FrameSource: Send {
    fn capture(&mut self, t: Timestamp) -> ScreenFrame;
}

impl<F: FnMut(Timestamp) -> ScreenFrame + Send> FrameSource for F {
    fn capture(&mut self, t: Timestamp) -> ScreenFrame {
        self(t)
    }
}

/// Deterministic synthetic screen: a gradient desktop with a window whose
/// position depends on the capture counter, JPEG-encoded and padded with
/// comment segments up to `target_bytes`.
#[derive(Debug, Clone)]
pub struct SyntheticFrames {
    width: u32,
    height: u32,
    target_bytes: usize,
    counter: u64,
}

impl SyntheticFrames {
    pub fn new(width: u32, height: u32, target_bytes: usize) -> Self {
        Self { width, height, target_bytes, counter: 0 }
    }

    pub fn render(&self, index: u64) -> ScreenFrame {
        let (w, h) = (self.width, self.height);
        let win_x = (index * 37 % u64::from(w.max(1))) as u32;
        let win_y = (index * 23 % u64::from(h.max(1))) as u32;
        let img = RgbImage::from_fn(w, h, |x, y| {
            let inside = x >= win_x && x < win_x + w / 4 && y >= win_y && y < win_y + h / 4;
            if inside {
                Rgb([230, 230, 240])
            } else {
                Rgb([(x * 255 / w.max(1)) as u8, (y * 255 / h.max(1)) as u8, 96])
            }
        });
        let mut jpeg = Vec::new();
        JpegEncoder::new_with_quality(&mut jpeg, 80)
            .encode_image(&img)
            .expect("in-memory JPEG encode");
        pad_jpeg(&mut jpeg, self.target_bytes, index);
        ScreenFrame { jpeg: jpeg.into(), width: w, height: h }
    }
}

impl FrameSource for SyntheticFrames {
    fn capture(&mut self, _t: Timestamp) -> ScreenFrame {
        let frame = self.render(self.counter);
        self.counter += 1;
        frame
    }
}

/// Grows a JPEG to about `target` bytes by inserting COM segments after SOI.
/// Exact unless fewer than four bytes are missing.
pub fn pad_jpeg(jpeg: &mut Vec<u8>, target: usize, salt: u64) {
    if jpeg.len() < 2 || jpeg[..2] != [0xFF, 0xD8] {
        return;
    }
    let mut padding = Vec::new();
    let mut need = target.saturating_sub(jpeg.len());
    let mut k: u64 = salt;
    while need >= 4 {
        let body = (need - 4).min(65_533);
        padding.extend_from_slice(&[0xFF, 0xFE]);
        padding.extend_from_slice(&((body + 2) as u16).to_be_bytes());
        for _ in 0..body {
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            padding.push((k >> 56) as u8);
        }
        need -= body + 4;
    }
    jpeg.splice(2..2, padding);
}

/// Width and height from an encoded image header.
pub fn image_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    ImageReader::new(Cursor::new(bytes)).with_guessed_format().ok()?.into_dimensions().ok()
}

pub fn decode_rgb(bytes: &[u8]) -> Option<RgbImage> {
    let format = image::guess_format(bytes).unwrap_or(ImageFormat::Jpeg);
    image::load_from_memory_with_format(bytes, format).ok().map(|i| i.to_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_frames_hit_target_size_and_decode() {
        let src = SyntheticFrames::new(320, 240, 100_000);
        let f = src.render(3);
        assert_eq!(f.jpeg.len(), 100_000);
        assert_eq!(image_dimensions(&f.jpeg), Some((320, 240)));
        let img = decode_rgb(&f.jpeg).unwrap();
        assert_eq!(img.dimensions(), (320, 240));
    }

    #[test]
    fn synthetic_frames_are_deterministic() {
        let a = SyntheticFrames::new(64, 48, 5_000);
        let b = SyntheticFrames::new(64, 48, 5_000);
        assert_eq!(a.render(9), b.render(9));
        assert_ne!(a.render(9).jpeg, a.render(10).jpeg);
    }
}

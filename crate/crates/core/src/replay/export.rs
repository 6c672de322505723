use std::collections::HashMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ImageEncoder, Rgb, RgbImage};
use serde::Serialize;

use super::{RenderInstruction, ReplayError, ReplayTimeline};
use crate::trace::{RecordKind, Timestamp};

const BACKGROUND: Rgb<u8> = Rgb([24, 24, 28]);
const FIXATION: Rgb<u8> = Rgb([255, 196, 0]);
const CURSOR: Rgb<u8> = Rgb([255, 48, 48]);
const STRIP_HEIGHT: u32 = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExportIndexEntry {
    pub k: u64,
    pub t_us: u64,
    pub frame_file: Option<String>,
    pub n_active_fixations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportSummary {
    pub frames_written: u64,
    pub width: u32,
    pub height: u32,
}

/// Number of rendered frames for a session of length `t_max` at `fps`.
pub fn export_frame_count(t_max: Timestamp, fps: u32) -> u64 {
    (t_max.0 * u64::from(fps)).div_ceil(1_000_000) + 1
}

/// Renders the timeline at `fps` into `out` as `frame_%06d.png` plus
/// `index.json`. Output depends only on the session contents and `fps`.
pub fn export(timeline: &ReplayTimeline, fps: u32, out: impl AsRef<Path>) -> Result<ExportSummary, ReplayError> {
    if fps == 0 {
        return Err(ReplayError::Params("fps must be positive".into()));
    }
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    let (width, height) = timeline.canvas_size();
    let n = export_frame_count(timeline.t_max(), fps);
    let mut decoded: HashMap<String, RgbImage> = HashMap::new();
    let mut index = Vec::with_capacity(n as usize);
    let mut prev: Option<Timestamp> = None;
    for k in 0..n {
        let t = (k * 1_000_000 / u64::from(fps)).min(timeline.t_max().0);
        let instr = timeline.seek_since(t as i64, prev);
        prev = Some(instr.t);
        let base = match &instr.frame {
            Some(f) => {
                if !decoded.contains_key(&f.file) {
                    let bytes = fs::read(timeline.dir().join(&f.file))?;
                    let img = image::load_from_memory(&bytes).map_err(|e| ReplayError::Image(e.to_string()))?;
                    // only the latest frame is needed again
                    decoded.clear();
                    decoded.insert(f.file.clone(), img.to_rgb8());
                }
                Some(&decoded[&f.file])
            }
            None => None,
        };
        let canvas = compose(&instr, base, width, height, timeline.t_max());
        let name = format!("frame_{k:06}.png");
        let file = fs::File::create(out.join(&name))?;
        PngEncoder::new(BufWriter::new(file))
            .write_image(canvas.as_raw(), width, height, image::ExtendedColorType::Rgb8)
            .map_err(|e| ReplayError::Image(e.to_string()))?;
        index.push(ExportIndexEntry {
            k,
            t_us: instr.t.0,
            frame_file: instr.frame.as_ref().map(|f| f.file.clone()),
            n_active_fixations: instr.fixations.len(),
        });
    }
    fs::write(out.join("index.json"), serde_json::to_vec_pretty(&index).map_err(crate::trace::TraceError::from)?)?;
    Ok(ExportSummary { frames_written: n, width, height })
}

fn compose(instr: &RenderInstruction, base: Option<&RgbImage>, width: u32, height: u32, t_max: Timestamp) -> RgbImage {
    let mut canvas = RgbImage::from_pixel(width, height, BACKGROUND);
    if let Some(img) = base {
        for y in 0..height.min(img.height()) {
            for x in 0..width.min(img.width()) {
                canvas.put_pixel(x, y, *img.get_pixel(x, y));
            }
        }
    }
    for f in &instr.fixations {
        let radius = 8 + (24 * f.elapsed_us / f.duration_us) as i64;
        blend_disc(&mut canvas, i64::from(f.cx), i64::from(f.cy), radius, FIXATION);
    }
    if let Some((x, y)) = instr.cursor {
        crosshair(&mut canvas, i64::from(x), i64::from(y), 10, CURSOR);
    }
    // event ticks along the bottom strip, positioned by session time
    if t_max.0 > 0 && height > STRIP_HEIGHT {
        for m in &instr.markers {
            let x = (m.t.0 as u128 * u128::from(width - 1) / u128::from(t_max.0)) as u32;
            let color = marker_color(m.kind);
            for y in height - STRIP_HEIGHT..height {
                canvas.put_pixel(x, y, color);
            }
        }
    }
    canvas
}

fn marker_color(kind: RecordKind) -> Rgb<u8> {
    match kind {
        RecordKind::UserEvent => Rgb([80, 200, 255]),
        RecordKind::SystemEvent => Rgb([160, 160, 255]),
        RecordKind::AutoEvent => Rgb([128, 128, 128]),
        RecordKind::HelpRequest => Rgb([255, 80, 200]),
        RecordKind::WizardCommand | RecordKind::MessageActivation => Rgb([80, 255, 120]),
        _ => Rgb([255, 255, 255]),
    }
}

fn blend_disc(canvas: &mut RgbImage, cx: i64, cy: i64, r: i64, color: Rgb<u8>) {
    let (w, h) = (i64::from(canvas.width()), i64::from(canvas.height()));
    for y in (cy - r).max(0)..=(cy + r).min(h - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(w - 1) {
            let (dx, dy) = (x - cx, y - cy);
            if dx * dx + dy * dy <= r * r {
                let p = canvas.get_pixel_mut(x as u32, y as u32);
                for c in 0..3 {
                    p.0[c] = ((u16::from(p.0[c]) + u16::from(color.0[c])) / 2) as u8;
                }
            }
        }
    }
}

fn crosshair(canvas: &mut RgbImage, cx: i64, cy: i64, arm: i64, color: Rgb<u8>) {
    let (w, h) = (i64::from(canvas.width()), i64::from(canvas.height()));
    for d in -arm..=arm {
        for (x, y) in [(cx + d, cy), (cx, cy + d)] {
            if (0..w).contains(&x) && (0..h).contains(&y) {
                canvas.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

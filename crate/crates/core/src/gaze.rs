//! Gaze samples and dispersion-threshold fixation detection.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: Timestamp,
    pub x: i32,
    pub y: i32,
    pub valid: bool,
}

impl GazeSample {
    pub fn new(t_us: u64, x: i32, y: i32, valid: bool) -> Self {
        Self { t: Timestamp(t_us), x, y, valid }
    }

    pub fn to_csv_line(&self) -> String {
        format!("{},{},{},{}", self.t.0, self.x, self.y, u8::from(self.valid))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GazeError {
    #[error("gaze line has {found} columns, expected 4")]
    Arity { found: usize },
    #[error("column {column}: {message}")]
    Column { column: usize, message: String },
    #[error("samples not ordered by time at index {index}")]
    Unordered { index: usize },
}

/// Parses one `t_us,x,y,valid` data line.
pub fn parse_gaze_line(line: &str) -> Result<GazeSample, GazeError> {
    let line = line.trim_end_matches(['\r', '\n']);
    let cols: Vec<&str> = line.split(',').collect();
    if cols.len() != 4 {
        return Err(GazeError::Arity { found: cols.len() });
    }
    let col_err = |column: usize, message: String| GazeError::Column { column, message };
    let t = cols[0].parse::<u64>().map_err(|e| col_err(0, e.to_string()))?;
    let x = cols[1].parse::<i32>().map_err(|e| col_err(1, e.to_string()))?;
    let y = cols[2].parse::<i32>().map_err(|e| col_err(2, e.to_string()))?;
    let valid = match cols[3] {
        "1" => true,
        "0" => false,
        other => return Err(col_err(3, format!("valid must be 0 or 1, got `{other}`"))),
    };
    Ok(GazeSample::new(t, x, y, valid))
}

/// Reads a gaze CSV stream, skipping the header line if present.
pub fn read_gaze_csv(reader: impl BufRead) -> Result<Vec<GazeSample>, (usize, GazeError)> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, GazeError::Column { column: 0, message: e.to_string() }))?;
        if (i == 0 && line.starts_with("t_us")) || line.is_empty() {
            continue;
        }
        out.push(parse_gaze_line(&line).map_err(|e| (i + 1, e))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixationParams {
    pub dispersion_px: u32,
    pub min_duration_ms: u32,
}

impl Default for FixationParams {
    fn default() -> Self {
        Self { dispersion_px: 40, min_duration_ms: 100 }
    }
}

impl FixationParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.dispersion_px < 1 || self.min_duration_ms < 1 {
            return Err(format!("fixation params must be ≥ 1, got {self:?}"));
        }
        Ok(())
    }

    pub fn min_duration_us(&self) -> u64 {
        u64::from(self.min_duration_ms) * 1_000
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixation {
    pub start: Timestamp,
    pub duration_us: u64,
    pub cx: i32,
    pub cy: i32,
    pub n_samples: usize,
}

impl Fixation {
    pub fn end(&self) -> Timestamp {
        Timestamp(self.start.0 + self.duration_us)
    }

    /// `start ≤ t < start + duration`.
    pub fn is_active(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end()
    }
}

/// Integer mean rounded half-up (toward +∞ on exact halves).
pub fn round_half_up_mean(sum: i64, n: i64) -> i32 {
    (2 * sum + n).div_euclid(2 * n) as i32
}

#[derive(Clone, Copy)]
struct Bounds {
    min_x: i32,
    max_x: i32,
    min_y: i32,
    max_y: i32,
}

impl Bounds {
    fn of(s: &GazeSample) -> Self {
        Self { min_x: s.x, max_x: s.x, min_y: s.y, max_y: s.y }
    }

    fn with(self, s: &GazeSample) -> Self {
        Self {
            min_x: self.min_x.min(s.x),
            max_x: self.max_x.max(s.x),
            min_y: self.min_y.min(s.y),
            max_y: self.max_y.max(s.y),
        }
    }

    fn dispersion(&self) -> u64 {
        (i64::from(self.max_x) - i64::from(self.min_x) + i64::from(self.max_y) - i64::from(self.min_y))
            as u64
    }
}

/// I-DT fixation identification.
///
/// From the first unconsumed valid sample, the window grows while the next
/// sample is valid and the dispersion `(max x − min x) + (max y − min y)`
/// stays within `dispersion_px`. A window spanning at least the minimum
/// duration becomes a fixation and its samples are consumed; otherwise the
/// window start advances by one sample.
pub fn detect_fixations(samples: &[GazeSample], params: &FixationParams) -> Result<Vec<Fixation>, GazeError> {
    if let Some(index) = samples.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(GazeError::Unordered { index: index + 1 });
    }
    let limit = u64::from(params.dispersion_px);
    let min_dur = params.min_duration_us();
    let mut out = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        if !samples[i].valid {
            i += 1;
            continue;
        }
        let mut bounds = Bounds::of(&samples[i]);
        let mut j = i;
        while let Some(next) = samples.get(j + 1) {
            if !next.valid {
                break;
            }
            let grown = bounds.with(next);
            if grown.dispersion() > limit {
                break;
            }
            bounds = grown;
            j += 1;
        }
        let duration = samples[j].t.0 - samples[i].t.0;
        if j > i && duration >= min_dur {
            out.push(make_fixation(&samples[i..=j]));
            i = j + 1;
        } else {
            i += 1;
        }
    }
    Ok(out)
}

fn make_fixation(window: &[GazeSample]) -> Fixation {
    let n = window.len() as i64;
    let sx: i64 = window.iter().map(|s| i64::from(s.x)).sum();
    let sy: i64 = window.iter().map(|s| i64::from(s.y)).sum();
    Fixation {
        start: window[0].t,
        duration_us: window[window.len() - 1].t.0 - window[0].t.0,
        cx: round_half_up_mean(sx, n),
        cy: round_half_up_mean(sy, n),
        n_samples: window.len(),
    }
}

//! Reference implementations used as test oracles. Each one is written for
//! clarity over speed and shares no code with the implementation it checks.
#![allow(dead_code)]

use ozforge_core::gaze::{Fixation, FixationParams, GazeSample};
use ozforge_core::store::MessageSummary;
use ozforge_core::trace::{HelpRequestPayload, ObjectKind, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dispersion of `window`, recomputed from scratch.
fn dispersion(window: &[GazeSample]) -> i64 {
    let xs = window.iter().map(|s| s.x as i64);
    let ys = window.iter().map(|s| s.y as i64);
    (xs.clone().max().unwrap() - xs.min().unwrap()) + (ys.clone().max().unwrap() - ys.min().unwrap())
}

/// Fixations by enumerating every candidate window `[i, j]` at each start.
pub fn fixations(samples: &[GazeSample], params: &FixationParams) -> Vec<Fixation> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        // ends whose window is entirely valid and within the dispersion bound;
        // growing a window never repairs either, so the scan stops at the first miss
        let acceptable: Vec<usize> = (i..samples.len())
            .take_while(|&j| {
                samples[i..=j].iter().all(|s| s.valid) && dispersion(&samples[i..=j]) <= params.dispersion_px as i64
            })
            .collect();
        // the window may only grow through acceptable prefixes
        let mut end = None;
        for (k, &j) in acceptable.iter().enumerate() {
            if j == i + k {
                end = Some(j);
            }
        }
        match end {
            Some(j) if j > i && samples[j].t.0 - samples[i].t.0 >= params.min_duration_ms as u64 * 1000 => {
                let w = &samples[i..=j];
                let n = w.len() as f64;
                let mx = w.iter().map(|s| s.x as f64).sum::<f64>() / n;
                let my = w.iter().map(|s| s.y as f64).sum::<f64>() / n;
                out.push(Fixation {
                    start: samples[i].t,
                    duration_us: samples[j].t.0 - samples[i].t.0,
                    cx: (mx + 0.5).floor() as i32,
                    cy: (my + 0.5).floor() as i32,
                    n_samples: w.len(),
                });
                i = j + 1;
            }
            _ => i += 1,
        }
    }
    out
}

/// Random gaze trace of `n` samples at roughly 60 Hz mixing dwell clusters,
/// saccades, invalid samples and duplicate timestamps.
pub fn random_trace(rng: &mut impl Rng, n: usize) -> Vec<GazeSample> {
    let mut out = Vec::with_capacity(n);
    let mut t = rng.gen_range(0..50_000u64);
    let (mut cx, mut cy) = (rng.gen_range(-50..1100), rng.gen_range(-50..800));
    let jitter = rng.gen_range(1..40);
    while out.len() < n {
        if rng.gen_bool(0.08) {
            cx = rng.gen_range(-50..1100);
            cy = rng.gen_range(-50..800);
        }
        let valid = !rng.gen_bool(0.04);
        let x = cx + rng.gen_range(-jitter..=jitter);
        let y = cy + rng.gen_range(-jitter..=jitter);
        out.push(GazeSample::new(t, x, y, valid));
        t += match rng.gen_range(0..20) {
            0 => 0,
            1 => rng.gen_range(30_000..200_000),
            _ => 16_667,
        };
    }
    out
}

/// Relevance by comparing path segments.
pub fn score(m: &MessageSummary, req: &HelpRequestPayload) -> Option<u8> {
    if m.general {
        return None;
    }
    let mut best = None;
    for o in &m.objects {
        if o.kind != req.object_kind {
            continue;
        }
        let s = if o.id == req.object_id {
            if m.request_types.contains(&req.request_type) {
                3
            } else {
                2
            }
        } else if o.kind == ObjectKind::Lexicon {
            let a: Vec<&str> = o.id.split('/').collect();
            let p: Vec<&str> = req.object_id.split('/').collect();
            if a.len() < p.len() && p[..a.len()] == a[..] {
                1
            } else {
                continue;
            }
        } else {
            continue;
        };
        best = best.max(Some(s));
    }
    best
}

/// Exhaustive scan: score everything, then pick the best `limit` by
/// repeated selection.
pub fn filter(messages: &[MessageSummary], req: &HelpRequestPayload, limit: usize) -> Vec<(String, u8)> {
    let mut pool: Vec<(String, u8)> =
        messages.iter().filter_map(|m| score(m, req).map(|s| (m.id.clone(), s))).collect();
    let mut out = Vec::new();
    while out.len() < limit && !pool.is_empty() {
        let mut best = 0;
        for k in 1..pool.len() {
            let (ref id, s) = pool[k];
            let (ref bid, bs) = pool[best];
            if s > bs || (s == bs && id < bid) {
                best = k;
            }
        }
        out.push(pool.remove(best));
    }
    out
}

/// Counts lines whose seq does not increase or whose t decreases relative
/// to the previous line.
pub fn order_regressions(lines: &[&str]) -> usize {
    let keys: Vec<(u64, u64)> = lines
        .iter()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["seq"].as_u64().unwrap(), v["t_us"].as_u64().unwrap())
        })
        .collect();
    (1..keys.len()).filter(|&i| keys[i].0 <= keys[i - 1].0 || keys[i].1 < keys[i - 1].1).count()
}

/// Idle auto-capture simulated at 1 ms resolution: activity at the given
/// times resets the idle timer; an emission also resets it.
pub fn auto_captures(activity_ms: &[u64], period_ms: u64, end_ms: u64) -> usize {
    let mut last = 0;
    let mut count = 0;
    for t in 0..=end_ms {
        if activity_ms.contains(&t) {
            last = t;
        } else if t - last >= period_ms {
            count += 1;
            last = t;
        }
    }
    count
}

/// Drop decisions a seeded lossy channel makes for `n` datagrams.
pub fn seeded_drops(seed: u64, p_loss: f64, n: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_bool(p_loss)).collect()
}

/// Frames that lose some but not all of their chunks.
pub fn partially_lost_frames(chunks_per_frame: &[usize], drops: &[bool]) -> usize {
    let mut at = 0;
    let mut n = 0;
    for &c in chunks_per_frame {
        let lost = drops[at..at + c].iter().filter(|d| **d).count();
        if lost > 0 && lost < c {
            n += 1;
        }
        at += c;
    }
    n
}

/// Action-stack model of the host application.
#[derive(Debug, Default, Clone)]
pub struct StackModel {
    pub actions: Vec<String>,
}

impl StackModel {
    pub fn apply(&mut self, a: &str) {
        self.actions.push(a.to_string());
    }

    /// Returns the number of actions actually undone.
    pub fn undo(&mut self, n: usize) -> usize {
        let k = n.min(self.actions.len());
        for _ in 0..k {
            self.actions.pop();
        }
        k
    }
}

pub fn ts(us: u64) -> Timestamp {
    Timestamp(us)
}

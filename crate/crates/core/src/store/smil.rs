//! SMIL subset: `smil > body > (par | seq)*` with `audio`, `text` and
//! `animation` leaves carrying `src` and an optional `begin` offset.
//!
//! `par` children start at the container's begin plus their own offset;
//! `seq` children start at their predecessor's begin plus their own offset.
//! Media durations are not known here, so `seq` chains explicit offsets only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::CueKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cue {
    pub kind: CueKind,
    pub src: String,
    pub begin_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmilTimeline {
    /// Ordered by begin time, document order breaking ties.
    pub cues: Vec<Cue>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SmilError {
    #[error("xml: {0}")]
    Xml(String),
    #[error("root element must be <smil>, found <{0}>")]
    BadRoot(String),
    #[error("unknown element <{0}>")]
    UnknownElement(String),
    #[error("<{0}> without src")]
    MissingSrc(String),
    #[error("malformed begin value `{0}`")]
    BadBegin(String),
    #[error("<{child}> not allowed inside <{parent}>")]
    Misplaced { parent: String, child: String },
}

pub fn parse_smil(text: &str) -> Result<SmilTimeline, SmilError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| SmilError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "smil" {
        return Err(SmilError::BadRoot(root.tag_name().name().to_string()));
    }
    let mut cues = Vec::new();
    for child in root.children().filter(|n| n.is_element()) {
        match child.tag_name().name() {
            "head" => {}
            "body" => {
                for item in child.children().filter(|n| n.is_element()) {
                    match item.tag_name().name() {
                        "par" | "seq" => walk_container(item, 0, &mut cues)?,
                        name if leaf_kind(name).is_some() => {
                            return Err(SmilError::Misplaced { parent: "body".into(), child: name.into() })
                        }
                        other => return Err(SmilError::UnknownElement(other.into())),
                    }
                }
            }
            other => return Err(SmilError::UnknownElement(other.into())),
        }
    }
    cues.sort_by_key(|c: &Cue| c.begin_ms);
    Ok(SmilTimeline { cues })
}

fn leaf_kind(name: &str) -> Option<CueKind> {
    match name {
        "audio" => Some(CueKind::Audio),
        "text" => Some(CueKind::Text),
        "animation" => Some(CueKind::Animation),
        _ => None,
    }
}

fn begin_of(node: roxmltree::Node<'_, '_>) -> Result<u64, SmilError> {
    node.attribute("begin").map_or(Ok(0), parse_clock_ms)
}

fn walk_container(node: roxmltree::Node<'_, '_>, parent_begin: u64, cues: &mut Vec<Cue>) -> Result<(), SmilError> {
    let name = node.tag_name().name();
    let start = parent_begin + begin_of(node)?;
    let is_seq = name == "seq";
    let mut anchor = start;
    for child in node.children().filter(|n| n.is_element()) {
        let child_name = child.tag_name().name();
        let child_begin = anchor + begin_of(child)?;
        match child_name {
            "par" | "seq" => walk_container(child, anchor, cues)?,
            leaf => {
                let kind = leaf_kind(leaf).ok_or_else(|| SmilError::UnknownElement(leaf.into()))?;
                let src = child
                    .attribute("src")
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| SmilError::MissingSrc(leaf.into()))?;
                cues.push(Cue { kind, src: src.to_string(), begin_ms: child_begin });
            }
        }
        if is_seq {
            anchor = child_begin;
        }
    }
    Ok(())
}

/// Parses a clock offset: `1.5s`, `300ms`, or a bare number of seconds.
/// Sub-millisecond fractions round half-up.
pub fn parse_clock_ms(value: &str) -> Result<u64, SmilError> {
    let bad = || SmilError::BadBegin(value.to_string());
    let v = value.trim();
    let (number, scale_ms) = if let Some(n) = v.strip_suffix("ms") {
        (n, 1u128)
    } else if let Some(n) = v.strip_suffix('s') {
        (n, 1_000)
    } else if let Some(n) = v.strip_suffix("min") {
        (n, 60_000)
    } else {
        (v, 1_000)
    };
    let (int, frac) = number.split_once('.').unwrap_or((number, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let numerator: u128 = digits.parse().map_err(|_| bad())?;
    let denom = 10u128.pow(frac.len() as u32);
    let ms = (numerator * scale_ms * 2 + denom) / (denom * 2);
    u64::try_from(ms).map_err(|_| bad())
}

//! Core of the ozforge Wizard-of-Oz platform: the session log model, the
//! multi-source recorder, gaze fixation detection, the frame/control wire
//! formats, the help-message store and session replay.

pub mod clock;
pub mod frames;
pub mod gaze;
pub mod recorder;
pub mod trace;
pub mod wav;
pub mod wire;
pub mod host;
pub mod replay;
pub mod store;
pub mod fixtures;

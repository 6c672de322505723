//! The `ozforge` command: subject agent, wizard service, replay export,
//! validation, fixture generation and a loopback bench.

pub mod app;
pub mod bench;
pub mod driver;

//! Networked halves of the ozforge platform: the subject agent, which records
//! and streams a session, and the wizard service, which watches it and sends
//! help messages and commands back.

pub mod playback;
pub mod subject;
pub mod wizard;

pub use subject::{AgentError, AgentStats, SubjectAgent, SubjectConfig, WizardLink};
pub use wizard::{BlockingWizard, WizardConfig, WizardError, WizardHandle};

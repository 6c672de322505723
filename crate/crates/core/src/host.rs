//! Host-application adapter: the studied application as seen by the
//! platform, reduced to applying named actions and undoing them.

/// Behavioral contract of the studied application. After `k` actions,
/// `undo(n)` with `n ≤ k` yields the state after `k − n` actions.
pub trait HostApp: Send {
    fn apply_action(&mut self, action: &str) -> String;
    /// Undoes up to `n` actions and returns the new state id. Callers clamp
    /// `n` to [`HostApp::history_len`].
    fn undo(&mut self, n: usize) -> String;
    fn current_state_id(&self) -> String;
    fn history_len(&self) -> usize;
}

/// Deterministic stand-in application: a stack of named actions whose state
/// id is derived from the full stack contents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionStack {
    actions: Vec<String>,
}

impl ActionStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }
}

/// `s<depth>-<fnv1a64 of the stack>`; the empty stack is `s0-initial`.
pub fn state_id_of(actions: &[String]) -> String {
    if actions.is_empty() {
        return "s0-initial".into();
    }
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for a in actions {
        for b in a.bytes().chain(std::iter::once(0)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("s{}-{h:016x}", actions.len())
}

impl HostApp for ActionStack {
    fn apply_action(&mut self, action: &str) -> String {
        self.actions.push(action.to_string());
        self.current_state_id()
    }

    fn undo(&mut self, n: usize) -> String {
        let keep = self.actions.len().saturating_sub(n);
        self.actions.truncate(keep);
        self.current_state_id()
    }

    fn current_state_id(&self) -> String {
        state_id_of(&self.actions)
    }

    fn history_len(&self) -> usize {
        self.actions.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undo_returns_to_earlier_states() {
        let mut app = ActionStack::new();
        let s0 = app.current_state_id();
        let s1 = app.apply_action("draw");
        let s2 = app.apply_action("fill");
        app.apply_action("move");
        assert_eq!(app.undo(1), s2);
        assert_eq!(app.undo(1), s1);
        assert_eq!(app.undo(5), s0);
        assert_eq!(app.history_len(), 0);
    }

    #[test]
    fn state_ids_depend_on_content() {
        let a = state_id_of(&["ab".into(), "c".into()]);
        let b = state_id_of(&["a".into(), "bc".into()]);
        assert_ne!(a, b);
    }
}

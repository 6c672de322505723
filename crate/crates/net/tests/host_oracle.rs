mod support;

use std::time::{Duration, Instant};

use ozforge_core::host::state_id_of;
use ozforge_core::trace::{Payload, UserAction, WizardCommandKind};
use ozforge_net::SubjectAgent;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{key, session_log, Env};

/// Reference stack: actions pushed, undo pops at most the history.
#[derive(Default)]
struct Model(Vec<String>);

impl Model {
    fn undo(&mut self, n: usize) -> usize {
        let k = n.min(self.0.len());
        self.0.truncate(self.0.len() - k);
        k
    }
}

fn wait_for(agent: &SubjectAgent, commands: u64) -> bool {
    let deadline = Instant::now() + Duration::from_secs(5);
    while agent.stats().commands_applied < commands {
        if Instant::now() > deadline {
            return false;
        }
        std::thread::sleep(Duration::from_millis(1));
    }
    true
}

#[test]
fn scripted_actions_and_undos_match_the_stack_model() {
    let env = Env::new(5);
    for seed in 0..3u64 {
        let wizard = env.wizard();
        let agent = SubjectAgent::start(env.subject(&format!("s{seed}"), Some(&wizard))).unwrap();
        wizard.wait_until(support::WAIT, |s| s.session.is_some()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::default();
        let mut clamps = Vec::new();
        for step in 0..40 {
            if rng.gen_bool(0.7) {
                let action = format!("act{}", rng.gen_range(0..6));
                let (_, state) = agent.perform_action(&action, key(&action)).unwrap();
                model.0.push(action);
                assert_eq!(state, state_id_of(&model.0), "seed {seed} step {step}");
            } else {
                let n = rng.gen_range(1..=4u32);
                let k = model.undo(n as usize) as u32;
                clamps.push((n, (k < n).then_some(k)));
                wizard.send_undo(n).unwrap();
                assert!(wait_for(&agent, clamps.len() as u64), "seed {seed} step {step}");
                assert_eq!(agent.host_state(), state_id_of(&model.0), "seed {seed} step {step}");
            }
        }
        let dir = agent.recorder().session_dir().unwrap();
        agent.stop().unwrap();

        // replaying the subject's own log reproduces the final state
        let mut replayed = Model::default();
        let mut logged_clamps = Vec::new();
        for r in session_log(&dir) {
            match r.payload {
                Payload::UserEvent(e) if e.action == UserAction::KeyPress => replayed.0.push(e.detail),
                Payload::WizardCommand(c) if c.command == WizardCommandKind::Undo => {
                    let n = c.undo_count().unwrap();
                    replayed.undo(n as usize);
                    logged_clamps.push((n, c.clamped_to));
                }
                _ => {}
            }
        }
        assert_eq!(replayed.0, model.0);
        assert_eq!(logged_clamps, clamps);
        wizard.shutdown();
    }
}

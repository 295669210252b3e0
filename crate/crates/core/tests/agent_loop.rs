mod common;

use common::*;
use pagent_core::agent::{ActionPolicy, AgentAction, StopReason};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

#[test]
fn zero_budget_submits_nothing() {
    let r = run_script(benign_script(3), 0);
    assert_eq!(r.evaluations, 0);
    assert_eq!(r.outcome.budget.used, 0);
    assert!(r.outcome.poc.is_none());
}

#[test]
fn submit_command_counts_against_budget() {
    let script = vec![
        AgentAction::write_text("a.bin", "hello"),
        AgentAction::RunCommand {
            command: "bash submit.sh a.bin".into(),
        },
        AgentAction::write_text("b.bin", "BOOM"),
        AgentAction::RunCommand {
            command: "bash submit.sh b.bin".into(),
        },
    ];
    let r = run_script(script, 5);
    assert_eq!(r.evaluations, 2);
    assert_eq!(r.outcome.stop, StopReason::Crash);
    assert_eq!(r.outcome.poc.as_deref(), Some(&b"BOOM"[..]));
}

#[test]
fn escaping_paths_become_error_observations() {
    let script = vec![
        AgentAction::write_text("../outside.txt", "x"),
        AgentAction::ReadFile {
            path: "/etc/hostname".into(),
        },
        AgentAction::SubmitPoc {
            path: "../../etc/passwd".into(),
        },
        AgentAction::Finish,
    ];
    let r = run_script(script, 3);
    assert_eq!(r.evaluations, 0);
    let parent = r.workspace.root.parent().unwrap();
    assert!(!parent.join("outside.txt").exists());
    for e in &r.outcome.transcript.entries[..3] {
        assert!(e.observation.error.is_some(), "{:?}", e.observation);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn never_crashing_backend_uses_whole_budget(budget in 0u32..8) {
        let r = run_script(benign_script(12), budget);
        prop_assert_eq!(r.evaluations, budget);
        prop_assert_eq!(r.outcome.budget.used, budget);
        prop_assert_eq!(r.outcome.stop, StopReason::BudgetExhausted);
        prop_assert!(r.outcome.poc.is_none());
    }

    #[test]
    fn loop_terminates_within_caps(seed in any::<u64>(), budget in 0u32..6, cap in 1u32..12) {
        let script = random_script(&mut StdRng::seed_from_u64(seed), 10, 0.2);
        let policy = ActionPolicy { max_actions: cap, ..ActionPolicy::default() };
        let r = run_script_with(script, budget, &policy);
        prop_assert!(r.evaluations <= budget);
        prop_assert!(r.outcome.transcript.entries.len() as u32 <= cap);
    }

    #[test]
    fn poc_iff_crash_and_bytes_match(seed in any::<u64>(), budget in 1u32..6) {
        let script = random_script(&mut StdRng::seed_from_u64(seed), 8, 0.3);
        let r = run_script(script, budget);
        let crashing: Vec<_> = r
            .outcome
            .transcript
            .entries
            .iter()
            .filter(|e| e.observation.submission.is_some() && e.observation.status.is_some_and(|c| c != 0))
            .collect();
        prop_assert_eq!(r.outcome.poc.is_some(), !crashing.is_empty());
        if let Some(poc) = &r.outcome.poc {
            let n = r.outcome.poc_submission.unwrap();
            let saved = std::fs::read(r.workspace.feedback_dir(n).join("poc.bin")).unwrap();
            prop_assert_eq!(poc, &saved);
            prop_assert!(poc.windows(4).any(|w| w == b"BOOM"));
        }
    }

    #[test]
    fn transcripts_replay_identically(seed in any::<u64>(), budget in 0u32..5) {
        let script = random_script(&mut StdRng::seed_from_u64(seed), 8, 0.2);
        let a = run_script(script.clone(), budget);
        let b = run_script(script, budget);
        prop_assert_eq!(a.outcome.transcript.to_jsonl(), b.outcome.transcript.to_jsonl());
    }
}

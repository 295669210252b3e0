mod common;

use std::fs;

use common::*;
use pagent_core::ir::{load_ir_module, normalize_signature};
use pagent_core::pipeline::{analyze, RunConfig};
use pagent_core::reach::{build_call_graph, detect_entrypoints, extract_path, filter_reachable};
use pagent_core::rules::{builtin_rules, evaluate_fixpoint, evaluate_rules};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

const IR_FIXTURES: [&str; 3] = ["strncpy_overflow/strncpy_overflow.ll", "ir/dispatch.ll", "ir/strncpy_oob.ll"];

fn fixture_text(rel: &str) -> String {
    fs::read_to_string(fixtures().join(rel)).unwrap()
}

#[test]
fn summaries_are_deterministic() {
    for rel in IR_FIXTURES {
        let text = fixture_text(rel);
        let a = load_ir_module(&text).unwrap().summary();
        let b = load_ir_module(&text).unwrap().summary();
        assert_eq!(a, b, "{rel}");
        assert!(!a.is_empty());
    }
}

#[test]
fn dispatch_callee_resolved_and_paths_validate() {
    for rel in IR_FIXTURES {
        let program = load_ir_module(&fixture_text(rel)).unwrap();
        let eps = detect_entrypoints(&program, &[]).unwrap();
        let graph = build_call_graph(&program);
        let reach = filter_reachable(&graph, &eps).unwrap();
        for f in &reach.reachable {
            let p = extract_path(&reach, f).unwrap();
            p.validate(&reach, f).unwrap();
        }
        let again = filter_reachable(&build_call_graph(&program), &eps).unwrap();
        assert_eq!(reach.graph.dump(), again.graph.dump());
    }
    let program = load_ir_module(&fixture_text("ir/dispatch.ll")).unwrap();
    assert!(build_call_graph(&program).has_edge("dump_bfd_private_header", "vms_bfd_print_private_bfd_data"));
}

#[test]
fn report_entries_are_reachable_and_deterministic() {
    for rel in IR_FIXTURES {
        let cfg = RunConfig {
            ir: vec![fixtures().join(rel)],
            ..Default::default()
        };
        let a = analyze(&cfg).unwrap();
        let b = analyze(&cfg).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        for (_, e) in &a.report.entries {
            assert!(a.reach.reachable.contains(&e.vulnerable_function));
            let p = extract_path(&a.reach, &e.vulnerable_function).unwrap();
            p.validate(&a.reach, &e.vulnerable_function).unwrap();
            assert_eq!(p.to_list_string(), e.taint_path);
            assert_eq!(p.entrypoint(), e.entrypoint);
        }
    }
}

fn type_text() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("i1".to_string()),
        Just("i8".to_string()),
        Just("i32".to_string()),
        Just("i64".to_string()),
        Just("double".to_string()),
        Just("ptr".to_string()),
        Just("%struct.bfd".to_string()),
    ];
    leaf.prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|t| format!("{t}*")),
            (1u8..9, inner.clone()).prop_map(|(n, t)| format!("[{n} x {t}]")),
            prop::collection::vec(inner, 1..3).prop_map(|v| format!("{{ {} }}", v.join(", "))),
        ]
    })
}

fn signature_text() -> impl Strategy<Value = String> {
    (
        prop_oneof![Just("void".to_string()), type_text()],
        prop::collection::vec(type_text(), 0..4),
        any::<bool>(),
    )
        .prop_map(|(ret, mut params, variadic)| {
            if variadic {
                params.push("...".into());
            }
            format!("{ret} ({})", params.join(", "))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn address_taken_names_exist(seed in any::<u64>()) {
        let p = random_fsa_program(&mut StdRng::seed_from_u64(seed));
        let program = parse(&p.text);
        let taken: Vec<_> = program.address_taken().collect();
        prop_assert!(taken.len() <= program.functions.len());
        for f in taken {
            prop_assert!(program.function(&f.name).is_some());
        }
    }

    #[test]
    fn signature_normalization_is_idempotent(raw in signature_text()) {
        let key = normalize_signature(&raw).unwrap();
        let again = normalize_signature(key.as_str()).unwrap();
        prop_assert_eq!(key, again);
    }

    #[test]
    fn resolution_matches_brute_force(seed in any::<u64>()) {
        let p = random_fsa_program(&mut StdRng::seed_from_u64(seed));
        let program = parse(&p.text);
        let (got, sites) = ranked_edges(&program, &pagent_core::reach::resolve_indirect_calls(&program));
        prop_assert_eq!(sites, p.sites);
        prop_assert_eq!(got, p.expected);
    }

    #[test]
    fn reachability_matches_closure(seed in any::<u64>()) {
        let g = random_graph(&mut StdRng::seed_from_u64(seed));
        let reach = filter_reachable(&g.call_graph(), &g.entry_names()).unwrap();
        prop_assert_eq!(&reach.reachable, &g.closure_oracle());
        for f in &reach.reachable {
            let p = extract_path(&reach, f).unwrap();
            prop_assert!(p.validate(&reach, f).is_ok());
        }
    }

    #[test]
    fn extra_entrypoint_never_shrinks(seed in any::<u64>(), extra in 0usize..20) {
        let g = random_graph(&mut StdRng::seed_from_u64(seed));
        let base = filter_reachable(&g.call_graph(), &g.entry_names()).unwrap();
        let mut eps = g.entry_names();
        eps.push(node(extra % g.n));
        let more = filter_reachable(&g.call_graph(), &eps).unwrap();
        prop_assert!(base.reachable.is_subset(&more.reachable));
    }

    #[test]
    fn semi_naive_equals_naive(seed in any::<u64>()) {
        let rules = builtin_rules();
        let fb = random_fact_base(&mut StdRng::seed_from_u64(seed));
        let semi = evaluate_fixpoint(&fb, &rules);
        prop_assert_eq!(semi.relations(), &naive_fixpoint(&fb, &rules));
    }

    #[test]
    fn one_finding_per_key_and_rule(seed in any::<u64>()) {
        let fb = random_fact_base(&mut StdRng::seed_from_u64(seed));
        let findings = evaluate_rules(&fb, &builtin_rules());
        let mut keys = std::collections::BTreeSet::new();
        for f in &findings {
            prop_assert!(keys.insert((f.vuln_type.clone(), f.func.clone(), f.line.clone())));
        }
    }
}

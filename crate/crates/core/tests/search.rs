mod common;

use std::sync::Arc;

use common::*;
use oracle_harness::generation::Pipeline;
use oracle_harness::llm::{Gateway, PromptKind, TranscriptStore};
use oracle_harness::search::{run_strategy, SearchContext, SearchError, StrategySpec};
use oracle_harness::verifier::{EquivalencePolicy, VerifyOptions};

fn ctx<'a>(gw: &'a Gateway, exec: &'a oracle_harness::Executor, suite: &'a oracle_harness::Suite) -> SearchContext<'a> {
    let pipe = Pipeline { limits: stage_limits(), ..Pipeline::new(gw, exec) };
    SearchContext {
        pipeline: pipe,
        suite,
        verify: VerifyOptions { limits: pipe.limits.candidate, policy: EquivalencePolicy::Token, max_counterexamples: 3 },
    }
}

#[test]
fn implicit_ranks_passing_candidate_first() {
    let exec = executor();
    let suite = desk_suite("knapsack", 30, 7, &exec);
    let backend = Arc::new(DeskBackend::new());
    let gw = live_gateway(backend.clone());
    let ranked = run_strategy(&entry("knapsack").problem, &StrategySpec::implicit(3), &ctx(&gw, &exec, &suite)).unwrap();
    assert_eq!(ranked.len(), 3);
    let top = ranked.top().unwrap();
    assert!(top.verdict.pass);
    assert_eq!(top.candidate.source, source("knapsack", "fast.py"));
    assert!(ranked.entries[1..].iter().all(|e| !e.verdict.pass));
    assert!(ranked.entries[1].verdict.cases_passed >= ranked.entries[2].verdict.cases_passed);
    // one gateway call per draw; every draw here passes or fails on its only attempt
    assert_eq!(backend.calls(), 3);
}

#[test]
fn enumerator_prefers_correct_category() {
    let exec = executor();
    let suite = desk_suite("repair_cars", 30, 7, &exec);
    let gw = live_gateway(Arc::new(DeskBackend::new()));
    let e = entry("repair_cars");
    let spec = StrategySpec::enumerator(e.problem.categories.clone());
    let ranked = run_strategy(&e.problem, &spec, &ctx(&gw, &exec, &suite)).unwrap();
    assert_eq!(ranked.len(), 2);
    assert_eq!(ranked.selected_category(), Some("Binary Search"));
    assert_eq!(ranked.first_passing_category(&e.problem.categories), Some("Binary Search"));
    assert!(ranked.top().unwrap().verdict.pass);
    assert!(!ranked.entries[1].verdict.pass);
}

#[test]
fn iterative_refines_with_counterexamples_and_stops() {
    let exec = executor();
    let suite = desk_suite("lis", 30, 7, &exec);
    let dir = tempfile::tempdir().unwrap();
    let e = entry("lis");
    let spec = StrategySpec::iterative(3);
    let backend = Arc::new(DeskBackend::new());
    let recorded = {
        let gw = recording_gateway(backend.clone(), dir.path());
        run_strategy(&e.problem, &spec, &ctx(&gw, &exec, &suite)).unwrap()
    };
    let prompts = backend.prompts.lock().unwrap().clone();
    let (kind, attempt, text) = &prompts[1];
    assert_eq!((*kind, *attempt), (PromptKind::Refinement, 2));
    assert!(text.contains(source("lis", "bug_a.py").trim_end()));
    assert!(text.contains("Case 1:") && text.contains("Expected output:"));
    let gw = Gateway::replay(TranscriptStore::open(dir.path()).unwrap());
    let ranked = run_strategy(&e.problem, &spec, &ctx(&gw, &exec, &suite)).unwrap();
    assert_eq!(ranked, recorded);
    // round 1 is bug_a, round 2 the refined fast program
    assert_eq!(ranked.len(), 2);
    assert_eq!(gw.calls(), 2);
    assert!(gw.calls() <= 3);
    let top = ranked.top().unwrap();
    assert!(top.verdict.pass);
    assert_eq!(top.candidate.kind, PromptKind::Refinement);
    assert_eq!(top.candidate.provenance.attempt, 2);
}

#[test]
fn iterative_stops_after_first_round_when_it_passes() {
    let exec = executor();
    let suite = desk_suite("lis", 30, 7, &exec);
    let backend = Arc::new(DeskBackend::new().naive_plan("lis", &["fast.py"]));
    let gw = live_gateway(backend.clone());
    let ranked = run_strategy(&entry("lis").problem, &StrategySpec::iterative(3), &ctx(&gw, &exec, &suite)).unwrap();
    assert_eq!(ranked.len(), 1);
    assert_eq!(backend.calls(), 1);
}

#[test]
fn iterative_respects_round_budget() {
    let exec = executor();
    let suite = desk_suite("lis", 30, 7, &exec);
    let buggy = fence(&source("lis", "bug_b.py"));
    let backend = Arc::new(
        DeskBackend::new()
            .respond("lis", PromptKind::Refinement, 2, &buggy)
            .respond("lis", PromptKind::Refinement, 3, &buggy),
    );
    let gw = live_gateway(backend.clone());
    let ranked = run_strategy(&entry("lis").problem, &StrategySpec::iterative(3), &ctx(&gw, &exec, &suite)).unwrap();
    assert_eq!(ranked.len(), 3);
    assert_eq!(backend.calls(), 3);
    assert!(ranked.entries.iter().all(|e| !e.verdict.pass));
}

#[test]
fn invalid_specs_are_rejected() {
    let exec = executor();
    let suite = desk_suite("lis", 5, 7, &exec);
    let gw = live_gateway(Arc::new(DeskBackend::new()));
    let p = entry("lis").problem;
    assert!(matches!(run_strategy(&p, &StrategySpec::implicit(0), &ctx(&gw, &exec, &suite)), Err(SearchError::InvalidSpec(_))));
    assert!(matches!(run_strategy(&p, &StrategySpec::enumerator(vec![]), &ctx(&gw, &exec, &suite)), Err(SearchError::InvalidSpec(_))));
}

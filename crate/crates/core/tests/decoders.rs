use std::sync::Arc;

mod common;

use common::{brute_path, micro};
use proptest::prelude::*;
use ragscope::backend::toy::{render_chat, ToyBackend};
use ragscope::backend::{Backend, BackendError, ChatMessage, GenRequest, Role, ScriptedBackend};
use ragscope::decoders::*;
use ragscope::model::{ModelConfig, TokenId};
use ragscope::sampling::SamplerParams;
use ragscope::Model;

fn session(b: &dyn Backend) -> Session<'_> {
    Session::new(b, 5, 8, SamplerParams::default())
}

fn toy() -> ToyBackend {
    ToyBackend::new(Arc::new(Model::build(ModelConfig::default()).unwrap()))
}

fn system_of(req: &GenRequest) -> &str {
    req.messages.iter().find(|m| m.role == Role::System).map_or("", |m| m.content.as_str())
}

fn user_of(req: &GenRequest) -> &str {
    req.messages.iter().rev().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str())
}

#[test]
fn self_consistency_majority_and_single() {
    let b = ScriptedBackend::queue(["paris", "paris", "lyon"]);
    let r = self_consistency(session(&b), "", "q", 3, 0.8, 0.5).unwrap();
    assert_eq!(r.outcome.answer, "paris");
    assert_eq!(b.call_count(), 3);
    assert_eq!(r.outcome.trace.calls.len(), 3);

    let b = ScriptedBackend::queue(["only"]);
    assert_eq!(self_consistency(session(&b), "", "q", 1, 0.8, 0.5).unwrap().outcome.answer, "only");
}

#[test]
fn self_consistency_tie_breaks() {
    // Two clusters of two; the first is more coherent (9/11 vs 1/2).
    let first = ["a b c d e f g h i j", "p q r", "a b c d e f g h i k", "p q s"];
    let b = ScriptedBackend::queue(first);
    let r = self_consistency(session(&b), "", "q", 4, 0.8, 0.5).unwrap();
    assert_eq!(r.clusters.len(), 2);
    assert!((r.clusters[0].coherence - 9.0 / 11.0).abs() < 1e-12);
    assert_eq!(r.outcome.answer, first[0]);

    // Swap coherences: the later, tighter cluster wins.
    let second = ["p q r", "a b c d e f g h i j", "p q s", "a b c d e f g h i k"];
    let b = ScriptedBackend::queue(second);
    let r = self_consistency(session(&b), "", "q", 4, 0.8, 0.5).unwrap();
    assert_eq!(r.outcome.answer, second[1]);
}

#[test]
fn self_consistency_all_failures() {
    let b = ScriptedBackend::new(|_, _| Err(BackendError::Timeout));
    assert!(matches!(self_consistency(session(&b), "", "q", 3, 0.8, 0.5), Err(DecoderError::AllFailed(_))));
}

proptest! {
    #[test]
    fn self_consistency_matches_enumeration(picks in proptest::collection::vec(0usize..3, 1..=8)) {
        let words = ["alpha", "beta", "gamma"];
        let replies: Vec<&str> = picks.iter().map(|&i| words[i]).collect();
        let b = ScriptedBackend::queue(replies.clone());
        let r = self_consistency(session(&b), "", "q", replies.len(), 0.8, 0.5).unwrap();
        // Oracle: most frequent reply, earliest first occurrence on ties.
        let mut best = replies[0];
        for w in &replies {
            let count = |x: &str| replies.iter().filter(|y| **y == x).count();
            let first = |x: &str| replies.iter().position(|y| *y == x).unwrap();
            if count(w) > count(best) || (count(w) == count(best) && first(w) < first(best)) {
                best = w;
            }
        }
        prop_assert_eq!(r.outcome.answer, best);
    }
}

#[test]
fn best_of_n_argmax_and_fallbacks() {
    let ratings = ["7", "Score: 9/10", "3"];
    let b = ScriptedBackend::new(move |req, i| {
        if system_of(req) == RATING_PROMPT {
            let i = (0..3).find(|i| user_of(req).contains(&format!("cand{i}"))).unwrap();
            Ok(ratings[i].to_string())
        } else {
            Ok(format!("cand{i}"))
        }
    });
    let r = best_of_n(session(&b), "", "q", 3, 0.8, 0.1).unwrap();
    assert_eq!(r.winner, 1);
    assert_eq!(r.outcome.answer, "cand1");
    assert_eq!(r.candidates[1].rating, Some(9));
    assert_eq!(b.call_count(), 6);
    assert!(!r.unrated);

    let b = ScriptedBackend::new(|req, i| Ok(if system_of(req) == RATING_PROMPT { "great!".into() } else { format!("c{i}") }));
    let r = best_of_n(session(&b), "", "q", 2, 0.8, 0.1).unwrap();
    assert!(r.unrated);
    assert_eq!(r.outcome.answer, "c0");
    assert_eq!(r.candidates[0].rating, None);
}

#[test]
fn best_of_n_warns_on_hot_rater() {
    let b = ScriptedBackend::new(|_, _| Ok("5".into()));
    let r = best_of_n(session(&b), "", "q", 1, 0.2, 0.9).unwrap();
    assert_eq!(r.outcome.trace.decision["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn cot_reflection_extracts_output() {
    let b = ScriptedBackend::queue(["<thinking>t</thinking><reflection>r</reflection><output>42</output>"]);
    let r = cot_reflection(session(&b), "q", 0.5).unwrap();
    assert_eq!(r.outcome.answer, "42");
    assert!(!r.missing_output);

    let b = ScriptedBackend::queue(["<thinking>no output here"]);
    let r = cot_reflection(session(&b), "q", 0.5).unwrap();
    assert_eq!(r.outcome.answer, "<thinking>no output here");
    assert!(r.missing_output);
}

#[test]
fn re2_prompt_golden_and_repetition() {
    let q = "Which river flows through Paris?";
    let rendered = render_chat(&re2_prompt("Answer concisely.", q));
    let golden = include_str!("golden/re2_prompt.txt");
    assert_eq!(rendered, golden);
    assert_eq!(rendered.matches(q).count(), 2);

    let bare = re2_prompt("", q);
    assert_eq!(bare.len(), 1);
    assert_eq!(bare[0].role, Role::User);

    let b = ScriptedBackend::queue(["the seine"]);
    assert_eq!(re2(session(&b), "", q, 0.3).unwrap().answer, "the seine");
    assert_eq!(b.call_count(), 1);
}

#[test]
fn moa_stage_wiring() {
    let b = ScriptedBackend::new(|req, i| {
        let u = user_of(req);
        Ok(if u.contains("Write one final answer") {
            "Rating: 8\nFinal answer: the seine".into()
        } else if u.contains("Critique each candidate") {
            "critique text".into()
        } else {
            format!("candidate text {i}")
        })
    });
    let cfg = MoaConfig::default();
    let out = moa_pipeline(session(&b), "", "q", &cfg).unwrap();
    assert_eq!(out.answer, "the seine");
    assert_eq!(b.call_count(), cfg.n + 2);
    let temps: Vec<f64> = b.requests().iter().map(|r| r.sampler.temperature).collect();
    assert_eq!(temps, vec![0.9, 0.9, 0.9, 0.5, 0.2]);
    assert!(b.requests().iter().all(|r| r.repetition == cfg.repetition));

    let bad = MoaConfig { t1: 0.5, t2: 0.5, t3: 0.2, ..cfg };
    let b = ScriptedBackend::new(|_, _| Ok("x".into()));
    assert!(moa_pipeline(session(&b), "", "q", &bad).is_err());
    assert_eq!(b.call_count(), 0);
}

#[test]
fn rto_branches() {
    let same = ScriptedBackend::new(|req, _| {
        Ok(if user_of(req).starts_with("Write the instruction") { "q".into() } else { "same answer".into() })
    });
    let r = rto_pipeline(session(&same), "", "q", 0.7, 0.5, None).unwrap();
    assert_eq!(r.outcome.answer, "same answer");
    assert_eq!(same.call_count(), 3);
    assert!(!r.synthesized);

    let replies = ["first draft", "instruction", "other words", "merged"];
    let b = ScriptedBackend::queue(replies);
    let q = |_: &str, a: &str| if a == "merged" { 0.9 } else { 0.4 };
    let r = rto_pipeline(session(&b), "", "q", 0.7, 0.5, Some(&q)).unwrap();
    assert_eq!(r.outcome.answer, "merged");
    assert_eq!(b.call_count(), 4);
    assert_eq!(r.overlap, 0.0);
    assert!((r.quality_delta.unwrap() - 0.5).abs() < 1e-12);

    let b = ScriptedBackend::queue(["first draft", "instruction", "other words"]);
    let r = rto_pipeline(session(&b), "", "q", 0.0, 0.5, None).unwrap();
    assert_eq!(r.outcome.answer, "first draft");

    let b = ScriptedBackend::queue(["first draft"]);
    match rto_pipeline(session(&b), "", "q", 0.5, 0.5, None) {
        Err(DecoderError::Stage { stage, .. }) => assert_eq!(stage, "reconstruct"),
        other => panic!("expected stage error, got {other:?}"),
    }
}

#[test]
fn plansearch_stage_counts() {
    let b = ScriptedBackend::new(|_, i| Ok(format!("out{i}")));
    let (_, answers) = plansearch_pipeline(session(&b), "", "q", 3, 2, 1, 0.7).unwrap();
    assert_eq!(b.call_count(), 4);
    assert_eq!(answers, vec!["out3".to_string()]);
    let reqs = b.requests();
    assert!(user_of(&reqs[3]).contains("out0") && user_of(&reqs[3]).contains("out2"));

    let b = ScriptedBackend::new(|_, i| Ok(format!("out{i}")));
    plansearch_pipeline(session(&b), "", "q", 3, 0, 1, 0.7).unwrap();
    assert_eq!(b.call_count(), 3);

    let b = ScriptedBackend::new(|_, i| Ok(format!("out{i}")));
    let (out, answers) = plansearch_pipeline(session(&b), "", "q", 1, 1, 2, 0.7).unwrap();
    assert_eq!(answers.len(), 2);
    let seeds = &out.trace.seeds;
    assert_eq!(seeds.len(), 8);
    let mut uniq = seeds.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), 8);

    let b = ScriptedBackend::new(|_, _| Ok(String::new()));
    assert!(plansearch_pipeline(session(&b), "", "q", 0, 1, 1, 0.7).is_err());
}

fn check_tree(r: &MctsResult) {
    assert_eq!(r.nodes[0].n as usize, r.completed);
    for node in &r.nodes {
        let child_n: u64 = node.children.iter().map(|&c| r.nodes[c].n).sum();
        assert!(node.n >= child_n);
        assert!(node.v.is_finite() && node.v >= 0.0 && node.v <= node.n as f64 + 1e-12);
    }
}

#[test]
fn mcts_prefers_high_value_action() {
    let b = ScriptedBackend::new(|req, i| {
        if system_of(req) == EVAL_PROMPT {
            Ok(if user_of(req).contains("1. good") { "0.9".into() } else { "0.1".into() })
        } else {
            Ok(if i % 2 == 0 { "good".into() } else { "bad".into() })
        }
    });
    let cfg = MctsConfig { rollouts: 50, depth: 1, h_max: 10, ..MctsConfig::default() };
    let r = mcts_search(session(&b), "", "q", &cfg).unwrap();
    check_tree(&r);
    assert_eq!(r.completed, 50);
    assert_eq!(r.outcome.answer, "good");
    let root_children: Vec<_> = r.nodes[0].children.iter().map(|&c| r.nodes[c].action.as_str()).collect();
    assert_eq!(root_children, vec!["good", "bad"]);
}

#[test]
fn mcts_terminal_rule_and_eval_fallback() {
    let b = ScriptedBackend::new(|req, _| Ok(if system_of(req) == EVAL_PROMPT { "unsure".into() } else { "step".into() }));
    let cfg = MctsConfig { rollouts: 5, k_expand: 2, depth: 3, h_max: 0, ..MctsConfig::default() };
    let r = mcts_search(session(&b), "", "q", &cfg).unwrap();
    check_tree(&r);
    // Expansion once, then every rollout evaluates a one-step history.
    assert_eq!(b.call_count(), 2 + 5);
    assert_eq!(r.eval_parse_failures, 5);
    assert!((r.nodes[0].v - 2.5).abs() < 1e-12);
}

#[test]
fn mcts_failed_rollout_is_not_counted() {
    let b = ScriptedBackend::new(|req, i| {
        if i == 3 {
            return Err(BackendError::Timeout);
        }
        Ok(if system_of(req) == EVAL_PROMPT { "0.5".into() } else { "step".into() })
    });
    let cfg = MctsConfig { rollouts: 4, depth: 1, ..MctsConfig::default() };
    let r = mcts_search(session(&b), "", "q", &cfg).unwrap();
    assert_eq!(r.aborted, 1);
    assert_eq!(r.completed, 3);
    check_tree(&r);
}

#[test]
fn uct_monotonicity() {
    for n in 1..20u64 {
        for np in n..40 {
            let lo = uct_score(1.0, n, np, 1.4);
            let hi = uct_score(1.5, n, np, 1.4);
            assert!(hi > lo);
            if np > 1 {
                assert!(uct_score(0.5, n + 1, np, 1.4) < uct_score(0.5, n, np, 1.4));
            }
        }
    }
    assert_eq!(uct_score(3.0, 2, 7, 0.0), 1.5);
}

#[test]
fn r_star_consistent_and_flagged() {
    let b = ScriptedBackend::new(|req, _| Ok(if system_of(req) == EVAL_PROMPT { "0.8".into() } else { "the seine".into() }));
    let cfg = RStarConfig { rollouts: 4, depth: 2, ..RStarConfig::default() };
    let r = r_star_search(session(&b), "q", &cfg).unwrap();
    assert!(!r.no_consistent);
    assert!(r.trajectories.iter().all(|t| t.consistent && t.overlap == 1.0));
    assert_eq!(r.outcome.answer, "the seine");

    let b = ScriptedBackend::new(|req, i| Ok(if system_of(req) == EVAL_PROMPT { "0.3".into() } else { format!("w{i}") }));
    let r = r_star_search(session(&b), "q", &cfg).unwrap();
    assert!(r.no_consistent);
    assert!(r.trajectories.iter().all(|t| !t.consistent));
}

#[test]
fn r_star_actions_cover_all_five() {
    let b = ScriptedBackend::new(|req, _| Ok(if system_of(req) == EVAL_PROMPT { "0.5".into() } else { "s".into() }));
    let cfg = RStarConfig { rollouts: 5, depth: 1, ..RStarConfig::default() };
    r_star_search(session(&b), "q", &cfg).unwrap();
    for a in R_STAR_ACTIONS {
        assert!(b.requests().iter().any(|r| user_of(r).contains(a)), "{a}");
    }
}

#[test]
fn entropy_guided_zero_betas_match_plain_sampling() {
    let b = toy();
    let msgs = vec![ChatMessage::user("what is the capital of france ?")];
    let sampler = SamplerParams::default();
    for seed in [1, 2, 3] {
        let plain = b.generate(&GenRequest::new(msgs.clone(), sampler, 16, seed)).unwrap().text;
        let g = entropy_guided_generate(&b, &msgs, &sampler, &Betas::uniform(0.0), &AdaptBounds::default(), 16, seed).unwrap();
        assert_eq!(g.text, plain);
        assert_eq!(g.steps.len(), g.tokens.len());
        assert!(g.steps.iter().all(|s| s.params == sampler));
    }
}

#[test]
fn entropy_guided_bounds_hold() {
    let b = toy();
    let msgs = vec![ChatMessage::user("solar panels convert light")];
    let g = entropy_guided_generate(&b, &msgs, &SamplerParams::default(), &Betas::default(), &AdaptBounds::default(), 20, 4)
        .unwrap();
    let max_h = (ModelConfig::default().vocab_size as f64).log2();
    for s in &g.steps {
        assert!(s.metrics.h >= 0.0 && s.metrics.h <= max_h + 1e-12);
        assert!(s.metrics.varentropy >= 0.0 && s.metrics.agreement >= 0.0 && s.metrics.interaction >= 0.0);
        s.params.validate().unwrap();
    }
}

#[test]
fn introspective_decoders_need_toy_backend() {
    let b = ScriptedBackend::new(|_, _| Ok("x".into()));
    let err = entropy_guided_generate(&b, &[ChatMessage::user("q")], &SamplerParams::default(), &Betas::default(), &AdaptBounds::default(), 4, 1)
        .unwrap_err();
    assert!(err.to_string().contains("requires internal-state backend"));
    let cfg = DecoderConfig { name: "cot-decode".into(), ..Default::default() };
    assert!(run_decoder(&b, "q", &cfg, 1).unwrap_err().to_string().contains("requires internal-state backend"));
}

#[test]
fn cot_decode_matches_exhaustive_argmax() {
    for seed in 0..40 {
        let m = micro(seed);
        let prompt = [0, 1];
        let r = cot_decode(&m, &prompt, 4, 0.5, 3, false).unwrap();
        let scores: Vec<f64> =
            r.paths.iter().map(|p| brute_path(&m, &prompt, p.tokens[0].id, 0.5, 3)).collect();
        for (p, s) in r.paths.iter().zip(&scores) {
            assert!((p.score - s).abs() < 1e-12);
            assert!(p.tokens.iter().all(|t| t.p1 >= t.p2 && t.p2 >= 0.0 && t.reliability.is_finite()));
        }
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        assert_eq!(r.winner, best, "seed {seed}");
    }
}

#[test]
fn cot_decode_consolidation_keeps_best_of_group() {
    // Tokens 0 and 1 share a surface form, so their paths read identically.
    let m = MicroModel {
        vocab_size: 3,
        eos: Some(2),
        table: Box::new(|s: &[TokenId]| match s.len() {
            1 => vec![1.0, 0.9, -5.0],
            _ => if s[1] == 0 { vec![0.0, 0.0, 3.0] } else { vec![0.0, 0.0, 0.5] },
        }),
        names: Some(vec!["x".into(), "x".into(), "end".into()]),
    };
    let r = cot_decode(&m, &[0], 2, 0.5, 4, true).unwrap();
    assert_eq!(r.paths[0].text, r.paths[1].text);
    assert_eq!(r.kept.len(), 1);
    let better = if r.paths[0].score >= r.paths[1].score { 0 } else { 1 };
    assert_eq!(r.kept[0], better);
    assert_eq!(r.winner, better);
}

#[test]
fn replay_reproduces_answers_and_traces() {
    let b = toy();
    let names = ["sample", "self-consistency", "best-of-n", "cot-reflection", "re2", "moa", "rto", "plansearch", "mcts", "rstar"];
    for name in names {
        let mut cfg = DecoderConfig { name: name.into(), k: 3, max_tokens: 6, ..Default::default() };
        cfg.mcts = MctsConfig { rollouts: 3, depth: 1, ..Default::default() };
        cfg.rstar = RStarConfig { rollouts: 3, depth: 2, ..Default::default() };
        let live = run_decoder(&b, "what is the capital of france ?", &cfg, 17).unwrap();
        let json = serde_json::to_string(&live.trace).unwrap();
        let back: DecoderTrace = serde_json::from_str(&json).unwrap();
        let replayed = run_decoder(&back.to_cassette(), "what is the capital of france ?", &cfg, 17).unwrap();
        assert_eq!(live, replayed, "{name}");
    }
}

#[test]
fn token_level_decoders_run_on_toy() {
    let b = toy();
    for name in ["entropy-guided", "cot-decode"] {
        let cfg = DecoderConfig { name: name.into(), k: 3, max_tokens: 6, ..Default::default() };
        let a = run_decoder(&b, "solar", &cfg, 3).unwrap();
        let again = run_decoder(&b, "solar", &cfg, 3).unwrap();
        assert_eq!(a, again);
    }
}

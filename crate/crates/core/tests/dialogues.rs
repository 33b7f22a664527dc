mod common;

use std::collections::BTreeMap;

use common::*;
use inquiry::dialogue::*;
use inquiry::eval::{cumulative_at, summarize_runs, DEFAULT_CHECKPOINTS};
use inquiry::gateway::{parser_prompt, Gateway, GatewayConfig};
use inquiry::policy::PolicySelector;
use inquiry::schema::Schema;

fn setup<'a>(
    schema: &'a Schema,
    wm: &'a inquiry::schema::WorldModel,
    persona: OraclePersona,
    seed: u64,
    max_turns: usize,
) -> DialogueSetup<'a> {
    DialogueSetup {
        schema,
        world_model: wm,
        persona,
        parser: AnswerParser::Structured,
        config: DialogueConfig { tau: 1e-9, max_turns, seed, ..Default::default() },
    }
}

fn personas() -> [OraclePersona; 3] {
    [OraclePersona::expert(), OraclePersona::novice(0.7, 2), OraclePersona::noisy(0.5)]
}

#[test]
fn rewards_telescope_for_every_persona() {
    let (schema, wm, corpus) = demo_world(200, 31);
    for persona in personas() {
        for (i, truth) in corpus.iter().take(40).enumerate() {
            let s = setup(&schema, &wm, persona.clone(), i as u64, 200);
            let mut sel = PolicySelector::uniform();
            let t = run_dialogue(&mut sel, &s, truth, "d").unwrap();
            let total: f64 = t.rewards().iter().sum();
            assert!((total - (t.initial_entropy - t.final_entropy)).abs() < 1e-6);
            assert_eq!(t.stop_reason, StopReason::EntropyThreshold);
            let curve = t.ig_curve();
            if persona.kind != OracleKind::Novice {
                assert!(curve.windows(2).all(|w| w[1] >= w[0] - 1e-12));
            }
        }
    }
}

#[test]
fn noisy_transcripts_pair_with_expert_transcripts() {
    let (schema, wm, corpus) = demo_world(200, 32);
    for (i, truth) in corpus.iter().take(25).enumerate() {
        let run = |persona: OraclePersona| {
            let s = setup(&schema, &wm, persona, 100 + i as u64, 30);
            run_dialogue(&mut PolicySelector::uniform(), &s, truth, "d").unwrap()
        };
        let e = run(OraclePersona::expert());
        let n = run(OraclePersona::noisy(1.0));
        assert_eq!(e.rewards(), n.rewards());
        assert_eq!(e.turns.len(), n.turns.len());
        for (a, b) in e.turns.iter().zip(&n.turns) {
            assert_eq!(a.question, b.question);
            assert_eq!(b.answer.without_noise(), a.answer);
            if !a.question.targets.is_empty() {
                assert!(!b.answer.noise_spans.is_empty());
            }
        }
    }
}

#[test]
fn novice_needs_more_turns_but_ends_at_the_same_place() {
    let (schema, wm, corpus) = demo_world(200, 33);
    let mut turns = [0usize; 2];
    for (i, truth) in corpus.iter().take(30).enumerate() {
        let mut totals = [0.0; 2];
        for (j, persona) in [OraclePersona::expert(), OraclePersona::novice(0.7, 2)].into_iter().enumerate() {
            let s = setup(&schema, &wm, persona, i as u64, 500);
            let t = run_dialogue(&mut GreedyEntropy, &s, truth, "d").unwrap();
            turns[j] += t.turns.len();
            totals[j] = t.cumulative_ig();
            for (id, v) in &t.final_specification {
                assert!(v.resolved);
                assert_eq!(Some(v.value.as_str()), truth.get(id));
            }
        }
        assert!((totals[0] - totals[1]).abs() < 1e-6);
    }
    assert!(turns[1] > turns[0]);
}

/// Mirrors the expert template grammar: "The <label> should be <value>."
fn template_reader(schema: &Schema, text: &str) -> String {
    let mut pairs = BTreeMap::new();
    for sentence in text.split(". ").map(|s| s.trim_end_matches('.')) {
        let Some(rest) = sentence.strip_prefix("The ") else { continue };
        let Some((label, value)) = rest.split_once(" should be ") else { continue };
        if let Some(a) = schema.attributes.iter().find(|a| a.label == label) {
            pairs.insert(a.id.clone(), value.to_string());
        }
    }
    serde_json::to_string(&pairs).unwrap()
}

#[test]
fn gateway_parsing_agrees_with_structured_parsing() {
    let (schema, wm, corpus) = demo_world(200, 34);
    let truth = &corpus[0];
    let s = setup(&schema, &wm, OraclePersona::expert(), 3, 30);
    let t = run_dialogue(&mut PolicySelector::uniform(), &s, truth, "d").unwrap();
    let mut config = GatewayConfig::mock(BTreeMap::new());
    for turn in &t.turns {
        let prompt = parser_prompt(&turn.question, &turn.answer.text, &schema);
        config = config.script(&prompt, &template_reader(&schema, &turn.answer.text));
    }
    let gw = Gateway::new(config);
    for turn in &t.turns {
        let structured = parse_answer(AnswerParser::Structured, &schema, &turn.question, &turn.answer).unwrap();
        let parsed = parse_answer(AnswerParser::Gateway(&gw), &schema, &turn.question, &turn.answer).unwrap();
        assert_eq!(structured.constraints, parsed.constraints);
    }
    assert!(!gw.touches_network());
}

#[test]
fn summaries_carry_totals_forward() {
    let (schema, wm, corpus) = demo_world(200, 35);
    let transcripts: Vec<Transcript> = corpus
        .iter()
        .take(20)
        .enumerate()
        .map(|(i, truth)| {
            let s = setup(&schema, &wm, OraclePersona::expert(), i as u64, 8);
            run_dialogue(&mut GreedyEntropy, &s, truth, "d").unwrap()
        })
        .collect();
    let summary = summarize_runs("greedy", &transcripts, &DEFAULT_CHECKPOINTS).unwrap();
    // Independent pass over the raw per-turn rewards.
    for (&c, &v) in &summary.ig_at_turn {
        let mut total = 0.0;
        for t in &transcripts {
            let mut acc = 0.0;
            for (k, turn) in t.turns.iter().enumerate() {
                if k < c {
                    acc += turn.reward.ig_bits;
                }
            }
            total += acc;
        }
        assert_eq!(v, total / transcripts.len() as f64);
    }
    let values: Vec<f64> = summary.ig_at_turn.values().copied().collect();
    assert!(values.windows(2).all(|w| w[1] >= w[0]));
    assert!(summary.mean_total_ig <= summary.mean_initial_entropy + 1e-9);
    assert_eq!(summary.ig_at_turn[&10], summary.ig_at_turn[&20]);
    assert_eq!(summary.mean_turns, 8.0);
    let t = &transcripts[0];
    assert_eq!(cumulative_at(t, 100), t.cumulative_ig());
}

#[test]
fn turn_means_are_plain_averages() {
    let (schema, wm, corpus) = demo_world(200, 36);
    let ts: Vec<Transcript> = [4, 5, 6]
        .iter()
        .map(|&n| {
            let s = setup(&schema, &wm, OraclePersona::expert(), 0, n);
            run_dialogue(&mut GreedyEntropy, &s, &corpus[0], "d").unwrap()
        })
        .collect();
    let summary = summarize_runs("p", &ts, &DEFAULT_CHECKPOINTS).unwrap();
    assert_eq!(summary.mean_turns, 5.0);
}

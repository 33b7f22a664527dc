mod common;

use common::*;
use inquiry::belief::{AttributeBelief, BeliefState, RevealModel, DEFAULT_ENUMERATION_CAP};
use inquiry::datagen::{build_dataset, CandidateSet, DatagenConfig, Strategy};
use inquiry::dialogue::{Question, QuestionOrigin};
use inquiry::policy::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_group(rng: &mut impl Rng) -> ScoredGroup {
    let k = rng.gen_range(2..=8);
    let feats: Vec<Features> = (0..k)
        .map(|_| {
            [
                rng.gen_range(0.0..6.0),
                rng.gen_range(0.0..2.5),
                rng.gen_range(0..5) as f64,
                rng.gen_range(0..3) as f64,
                if rng.gen_bool(0.2) { 1.0 } else { 0.0 },
                1.0,
            ]
        })
        .collect();
    let rewards: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..8.0)).collect();
    ScoredGroup::new(feats, rewards).unwrap()
}

fn random_params(rng: &mut impl Rng, scale: f64) -> PolicyParams {
    PolicyParams::new((0..FEATURE_DIM).map(|_| rng.gen_range(-scale..scale)).collect(), 1.0).unwrap()
}

fn shifted(p: &PolicyParams, d: usize, h: f64) -> PolicyParams {
    let mut q = p.clone();
    q.theta[d] += h;
    q
}

fn relative_error(analytic: &Features, f: impl Fn(&PolicyParams) -> f64, at: &PolicyParams) -> f64 {
    let h = 1e-6;
    let mut num = [0.0; FEATURE_DIM];
    for d in 0..FEATURE_DIM {
        num[d] = (f(&shifted(at, d, h)) - f(&shifted(at, d, -h))) / (2.0 * h);
    }
    let diff: f64 = analytic.iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = num.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

/// Smallest distance of any probability ratio from a clip edge.
fn clip_margin(p: &PolicyParams, r: &PolicyParams, g: &ScoredGroup, eps: f64) -> f64 {
    let lp = p.log_probs(&g.features).unwrap();
    let lr = r.log_probs(&g.features).unwrap();
    lp.iter()
        .zip(&lr)
        .map(|(a, b)| {
            let rho = (a - b).exp();
            ((rho - (1.0 - eps)).abs()).min((rho - (1.0 + eps)).abs())
        })
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn probabilities_normalize_and_ignore_shifts(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_group(&mut rng);
        let p = random_params(&mut rng, 3.0);
        let probs = p.probs(&g.features).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // The bias feature is 1 for every candidate, so moving its weight
        // adds a constant to every score.
        let q = shifted(&p, FEATURE_DIM - 1, shift);
        let probs_q = q.probs(&g.features).unwrap();
        for (a, b) in probs.iter().zip(&probs_q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        prop_assert_eq!(
            choose_index(&p, &g.features, SelectMode::Greedy, &mut r1).unwrap(),
            choose_index(&q, &g.features, SelectMode::Greedy, &mut r2).unwrap()
        );
    }

    #[test]
    fn grpo_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_group(&mut rng);
        let reference = random_params(&mut rng, 0.5);
        let params = PolicyParams::new(
            reference.theta.iter().map(|w| w + rng.gen_range(-0.1..0.1)).collect(),
            1.0,
        ).unwrap();
        prop_assume!(clip_margin(&params, &reference, &g, 0.2) > 1e-3);
        let o = grpo_offline_loss(&params, &reference, &g, 0.2, 0.01).unwrap();
        let err = relative_error(&o.grad, |p| grpo_offline_loss(p, &reference, &g, 0.2, 0.01).unwrap().loss, &params);
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn sft_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_group(&mut rng);
        let params = random_params(&mut rng, 1.0);
        let o = sft_loss(&params, &g).unwrap();
        let err = relative_error(&o.grad, |p| sft_loss(p, &g).unwrap().loss, &params);
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn dpo_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_group(&mut rng);
        let reference = random_params(&mut rng, 0.5);
        let params = random_params(&mut rng, 1.0);
        let o = dpo_loss(&params, &reference, &g, 0.1).unwrap();
        let err = relative_error(&o.grad, |p| dpo_loss(p, &reference, &g, 0.1).unwrap().loss, &params);
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    /// At θ = θ_ref the loss vanishes and the gradient is that of the
    /// unclipped surrogate, −mean_i A_i ∂log π_i.
    #[test]
    fn reference_point_is_a_fixed_point(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_group(&mut rng);
        let reference = random_params(&mut rng, 1.0);
        let o = grpo_offline_loss(&reference, &reference, &g, 0.2, 0.01).unwrap();
        prop_assert!(o.loss.abs() < 1e-12);
        prop_assert_eq!(o.kl, 0.0);
        let probs = reference.probs(&g.features).unwrap();
        let mut mean_phi = [0.0; FEATURE_DIM];
        for (f, p) in g.features.iter().zip(&probs) {
            for d in 0..FEATURE_DIM {
                mean_phi[d] += p * f[d];
            }
        }
        for d in 0..FEATURE_DIM {
            let expect: f64 = -g.advantages.iter().zip(&g.features)
                .map(|(a, f)| a * (f[d] - mean_phi[d]))
                .sum::<f64>() / g.k() as f64;
            prop_assert!((o.grad[d] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn dpo_saturates_and_sft_vanishes_on_concentrated_policy() {
    let g = ScoredGroup::new(
        vec![[1.0, 0.0, 0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]],
        vec![3.0, 0.0],
    )
    .unwrap();
    let z = PolicyParams::zeros();
    let strong = PolicyParams::new(vec![200.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1.0).unwrap();
    assert!(dpo_loss(&strong, &z, &g, 0.1).unwrap().loss < 1e-8);
    assert!(sft_loss(&strong, &g).unwrap().loss < 1e-12);
}

fn held_out_split(seed: u64) -> (Vec<ScoredGroup>, Vec<ScoredGroup>, Vec<inquiry::datagen::PreferenceGroup>) {
    let (schema, wm, corpus) = demo_world(400, seed);
    let train_cfg = DatagenConfig { seed: 1, ..Default::default() };
    let test_cfg = DatagenConfig { seed: 2, ..Default::default() };
    let (train, _) = build_dataset(&schema, &wm, &corpus[..60], &train_cfg, None).unwrap();
    let (test, _) = build_dataset(&schema, &wm, &corpus[200..260], &test_cfg, None).unwrap();
    assert!(train.len() >= 500 && test.len() >= 500);
    let train_raw = train[..500].to_vec();
    (
        scored_groups(&train_raw, RewardMode::Entropy).unwrap(),
        scored_groups(&test[..500], RewardMode::Entropy).unwrap(),
        train_raw,
    )
}

#[test]
fn grpo_offline_improves_held_out_agreement() {
    let (train, test, _) = held_out_split(11);
    let report = train_offline(&train, &TrainConfig::default()).unwrap();
    assert_eq!(report.log.len(), 6);
    let before = top1_agreement(&PolicyParams::zeros(), &test);
    let after = top1_agreement(&report.params, &test);
    assert!(after > before, "held-out top-1 {before} -> {after}");
    let again = train_offline(&train, &TrainConfig::default()).unwrap();
    assert_eq!(again.params, report.params);
}

#[test]
fn sft_reaches_high_held_out_agreement() {
    let (train, test, _) = held_out_split(12);
    let config = TrainConfig { method: Method::Sft, epochs: 100, ..Default::default() };
    let report = train_offline(&train, &config).unwrap();
    let agreement = top1_agreement(&report.params, &test);
    assert!(agreement > 0.9, "held-out top-1 {agreement}");
}

#[test]
fn dpo_skips_constant_groups() {
    let constant = ScoredGroup::new(vec![[0.0; FEATURE_DIM]; 3], vec![1.0; 3]).unwrap();
    let varied = ScoredGroup::new(
        vec![[1.0, 1.0, 1.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0, 1.0, 1.0]],
        vec![1.0, 0.0],
    )
    .unwrap();
    let config = TrainConfig { method: Method::Dpo, ..Default::default() };
    let report = train_offline(&[constant, varied], &config).unwrap();
    assert_eq!(report.skipped_groups, 1);
}

/// One open binary attribute (1 bit) against three nearly settled ones
/// (about 0.01 bits each); everything else is resolved.
fn probe_state() -> (BeliefState, Vec<String>, Vec<String>) {
    let schema = inquiry::schema::Schema::demo();
    let attrs: Vec<AttributeBelief> = schema
        .attributes
        .iter()
        .map(|a| {
            let n = a.domain.len();
            let probs = match a.id.as_str() {
                "orientation" => vec![0.5, 0.5],
                "label_position" | "background" | "arrow_style" => {
                    let mut p = vec![0.001 / (n - 1) as f64; n];
                    p[0] = 0.999;
                    p
                }
                _ => {
                    let mut p = vec![0.0; n];
                    p[0] = 1.0;
                    p
                }
            };
            AttributeBelief { id: a.id.clone(), values: a.domain.clone(), probs }
        })
        .collect();
    let belief = BeliefState::from_marginals(attrs).unwrap();
    let wide = vec!["orientation".to_string()];
    let narrow = vec!["background".to_string(), "arrow_style".to_string(), "label_position".to_string()];
    (belief, wide, narrow)
}

#[test]
fn slot_count_policy_prefers_quantity_in_probe_state() {
    let (_, _, raw) = held_out_split(13);
    let entropy = train_offline(&scored_groups(&raw, RewardMode::Entropy).unwrap(), &TrainConfig::default()).unwrap();
    let slot = train_offline(
        &scored_groups(&raw, RewardMode::SlotCount).unwrap(),
        &TrainConfig { reward_mode: RewardMode::SlotCount, ..Default::default() },
    )
    .unwrap();
    let (belief, wide, narrow) = probe_state();
    let feats = vec![features(&belief, &wide).unwrap(), features(&belief, &narrow).unwrap()];
    assert!(feats[0][0] == 1.0 && feats[1][0] < 0.05);
    let s = slot.params.scores(&feats);
    assert!(s[1] > s[0], "slot-count scores {s:?}");
    let e = entropy.params.scores(&feats);
    assert!(e[0] > e[1], "entropy scores {e:?}");
}

#[test]
fn trained_policy_picks_the_most_informative_single_question() {
    let (train, _, _) = held_out_split(14);
    let params = train_offline(&train, &TrainConfig::default()).unwrap().params;
    let (schema, wm, _) = demo_world(300, 14);
    let belief = BeliefState::init(&schema, &wm).unwrap();
    let candidates: Vec<Question> = schema
        .attributes
        .iter()
        .map(|a| Question::about(&schema, &[a.id.clone()], QuestionOrigin::Template).unwrap())
        .collect();
    let set = CandidateSet {
        prompt: String::new(),
        tags: vec![Strategy::PerAttribute; candidates.len()],
        candidates,
    };
    let feats = candidate_features(&belief, &set).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pick = choose_index(&params, &feats, SelectMode::Greedy, &mut rng).unwrap();
    let gains: Vec<f64> = set
        .candidates
        .iter()
        .map(|q| {
            belief
                .expected_information_gain(&q.targets, &RevealModel::FULL, DEFAULT_ENUMERATION_CAP)
                .unwrap()
                .mutual_information
        })
        .collect();
    let best = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(gains[pick], best);
    let max_entropy = belief
        .attributes()
        .iter()
        .max_by(|a, b| a.entropy().total_cmp(&b.entropy()))
        .unwrap();
    assert_eq!(set.candidates[pick].targets, vec![max_entropy.id.clone()]);
}

#[test]
fn online_grpo_is_deterministic_and_learns() {
    let (schema, wm, corpus) = demo_world(200, 15);
    let env = OnlineEnv {
        schema: &schema,
        world_model: &wm,
        train: &corpus,
        datagen: DatagenConfig::default(),
    };
    let config = TrainConfig {
        method: Method::GrpoOnline,
        epochs: 3,
        dialogues_per_epoch: 12,
        seed: 5,
        ..Default::default()
    };
    let a = train_online(&env, &config).unwrap();
    let b = train_online(&env, &config).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log.len(), 4);
    let (_, test, _) = held_out_split(15);
    assert!(top1_agreement(&a.params, &test) > top1_agreement(&PolicyParams::zeros(), &test));
    assert!(train_offline(&test, &config).is_err());
}

#[test]
fn config_validation() {
    for bad in [
        TrainConfig { clip_epsilon: 0.0, ..Default::default() },
        TrainConfig { clip_epsilon: 1.0, ..Default::default() },
        TrainConfig { kl_beta: -0.1, ..Default::default() },
        TrainConfig { epochs: 0, ..Default::default() },
    ] {
        assert!(bad.validate().is_err());
    }
    assert!(train_offline(&[], &TrainConfig::default()).is_err());
}

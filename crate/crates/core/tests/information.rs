mod common;

use common::*;
use inquiry::belief::{BeliefState, Evidence, RevealModel, DEFAULT_ENUMERATION_CAP};
use inquiry::schema::{estimate_prior, load_schema, Specification};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn domains() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..=6, 1..=5)
}

fn kl_joint(post: &BeliefState, prior: &BeliefState) -> f64 {
    joint(post)
        .iter()
        .zip(joint(prior))
        .filter(|((_, p), _)| *p > 0.0)
        .map(|((_, p), (_, q))| p * (p / q).log2())
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropy_decomposes_over_attributes(sizes in domains(), seed in any::<u64>()) {
        let schema = schema_with_domains(&sizes);
        let b = random_belief(&schema, &mut ChaCha8Rng::seed_from_u64(seed));
        let marginal_sum: f64 = b.marginal_entropies().iter().sum();
        prop_assert!((joint_entropy(&b) - marginal_sum).abs() < 1e-9);
        prop_assert!((b.total_entropy() - marginal_sum).abs() < 1e-12);
    }

    #[test]
    fn prior_tables_are_distributions(sizes in domains(), n in 1usize..40, alpha in 0.0f64..3.0, seed in any::<u64>()) {
        let schema = schema_with_domains(&sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus: Vec<Specification> = (0..n)
            .map(|_| Specification {
                assignment: schema
                    .attributes
                    .iter()
                    .map(|a| (a.id.clone(), a.domain[rng.gen_range(0..a.domain.len())].clone()))
                    .collect(),
            })
            .collect();
        let wm = estimate_prior(&schema, &corpus, alpha).unwrap();
        for a in &schema.attributes {
            let t = wm.table(a).unwrap();
            prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (v, p) in a.domain.iter().zip(&t) {
                let count = corpus.iter().filter(|s| s.get(&a.id) == Some(v.as_str())).count() as f64;
                let expect = (count + alpha) / (n as f64 + alpha * a.domain.len() as f64);
                prop_assert!((p - expect).abs() < 1e-12);
            }
        }
    }

    /// Singleton evidence drawn from a plausible truth: the entropy
    /// difference equals the summed prior entropy of the constrained
    /// attributes, and along a sequence the rewards telescope.
    #[test]
    fn rewards_equal_resolved_prior_entropy(sizes in domains(), seed in any::<u64>()) {
        let schema = schema_with_domains(&sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b0 = random_belief(&schema, &mut rng);
        let truth = sample_truth(&b0, &mut rng);
        let mut b = b0.clone();
        let mut total = 0.0;
        for _ in 0..4 {
            let mut ev = Evidence::default();
            let mut expected = 0.0;
            for (i, a) in b.attributes().iter().enumerate() {
                if rng.gen_bool(0.4) {
                    ev = ev.with(&a.id, [a.values[truth[i]].as_str()]);
                    expected += a.entropy();
                }
            }
            let (next, r) = b.apply_evidence(&ev).unwrap();
            prop_assert!(r.ig_bits >= 0.0);
            prop_assert!((r.ig_bits - expected).abs() < 1e-9);
            prop_assert!((b.total_entropy() - next.total_entropy() - r.ig_bits).abs() < 1e-9);
            total += r.ig_bits;
            b = next;
        }
        prop_assert!((b0.total_entropy() - b.total_entropy() - total).abs() < 1e-9);
    }

    /// Asking about a superset of attributes never earns less under exact
    /// reveals.
    #[test]
    fn superset_questions_earn_at_least_as_much(sizes in domains(), seed in any::<u64>()) {
        let schema = schema_with_domains(&sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_belief(&schema, &mut rng);
        let truth = sample_truth(&b, &mut rng);
        let ids: Vec<&str> = b.attributes().iter().map(|a| a.id.as_str()).collect();
        let small: Vec<usize> = (0..ids.len()).filter(|_| rng.gen_bool(0.4)).collect();
        let big: Vec<usize> = (0..ids.len()).filter(|i| small.contains(i) || rng.gen_bool(0.5)).collect();
        let evidence = |idx: &[usize]| {
            idx.iter().fold(Evidence::default(), |ev, &i| {
                let a = &b.attributes()[i];
                ev.with(&a.id, [a.values[truth[i]].as_str()])
            })
        };
        let r_small = b.apply_evidence(&evidence(&small)).unwrap().1.ig_bits;
        let r_big = b.apply_evidence(&evidence(&big)).unwrap().1.ig_bits;
        prop_assert!(r_big >= r_small - 1e-12);
    }
}

/// Simulated expected gain over every joint ground truth and every answer
/// the reveal model can give, against the closed-form enumeration and the
/// expected KL of the posterior from the prior.
fn check_mutual_information(sizes: &[usize], seed: u64) {
    let schema = schema_with_domains(sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = random_belief(&schema, &mut rng);
    let ids: Vec<String> = b.attributes().iter().map(|a| a.id.clone()).collect();
    let mut targets: Vec<String> = ids.iter().filter(|_| rng.gen_bool(0.6)).cloned().collect();
    if targets.is_empty() {
        targets.push(ids[0].clone());
    }
    let models = [
        RevealModel::FULL,
        RevealModel { reveal_fraction: 0.7, subset_size: 2 },
        RevealModel { reveal_fraction: 0.4, subset_size: 3 },
    ];
    for model in models {
        let mut sim_ig = 0.0;
        let mut sim_kl = 0.0;
        for (truth, p_truth) in joint(&b) {
            if p_truth == 0.0 {
                continue;
            }
            // Enumerate answer combinations across targets.
            let mut answers: Vec<(Evidence, f64)> = vec![(Evidence::default(), 1.0)];
            for id in &targets {
                let i = ids.iter().position(|x| x == id).unwrap();
                let a = &b.attributes()[i];
                let mut next = Vec::new();
                for (ev, p) in &answers {
                    for (subset, q) in model.outcomes(a.values.len(), truth[i]) {
                        let ev = match subset {
                            None => ev.clone(),
                            Some(s) => ev.clone().with(id, s.iter().map(|&k| a.values[k].as_str())),
                        };
                        next.push((ev, p * q));
                    }
                }
                answers = next;
            }
            for (ev, p_ans) in answers {
                let (post, r) = b.apply_evidence(&ev).unwrap();
                sim_ig += p_truth * p_ans * r.ig_bits;
                sim_kl += p_truth * p_ans * kl_joint(&post, &b);
            }
        }
        let g = b.expected_information_gain(&targets, &model, DEFAULT_ENUMERATION_CAP).unwrap();
        assert!((sim_ig - g.expected_entropy_drop).abs() < 1e-9, "{sim_ig} vs {g:?}");
        assert!((sim_ig - g.mutual_information).abs() < 1e-9, "{sim_ig} vs {g:?}");
        assert!((sim_kl - g.expected_kl).abs() < 1e-9, "{sim_kl} vs {g:?}");
        assert!((sim_kl - sim_ig).abs() < 1e-9);
    }
}

#[test]
fn mutual_information_identity_on_small_schemas() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let n = rng.gen_range(1..=4);
        let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=4)).collect();
        check_mutual_information(&sizes, case);
    }
}

#[test]
fn shipped_five_attribute_schema_loads() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/five_attr_schema.json");
    let schema = load_schema(path).unwrap();
    assert_eq!(schema.len(), 5);
    assert_eq!(schema.joint_size(), 4 * 3 * 2 * 3 * 3);
    assert_eq!(schema.to_json(), std::fs::read_to_string(path).unwrap());
}

#[test]
fn uniform_binary_question_is_worth_one_bit() {
    let schema = schema_with_domains(&[2, 2, 2]);
    let b = BeliefState::uniform(&schema);
    let g = b
        .expected_information_gain(&["a0".into(), "a2".into()], &RevealModel::FULL, DEFAULT_ENUMERATION_CAP)
        .unwrap();
    assert!((g.mutual_information - 2.0).abs() < 1e-12);
}

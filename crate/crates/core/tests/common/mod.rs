#![allow(dead_code)]

use inquiry::belief::{AttributeBelief, BeliefState};
use inquiry::schema::{
    estimate_prior, generate_corpus, Attribute, AttributeGroup, GenConfig, Schema, Specification,
    WorldModel,
};
use rand::Rng;

pub fn schema_with_domains(sizes: &[usize]) -> Schema {
    Schema {
        name: "random".into(),
        version: "1".into(),
        attributes: sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| Attribute {
                id: format!("a{i}"),
                label: format!("attribute {i}"),
                group: AttributeGroup::Other,
                domain: (0..n).map(|v| format!("v{v}")).collect(),
            })
            .collect(),
    }
}

/// Random marginals; some values get zero mass and some attributes start
/// resolved.
pub fn random_belief(schema: &Schema, rng: &mut impl Rng) -> BeliefState {
    let attrs = schema
        .attributes
        .iter()
        .map(|a| {
            let n = a.domain.len();
            let mut w: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(0.15) { 0.0 } else { rng.gen_range(0.01..1.0) })
                .collect();
            if rng.gen_bool(0.1) {
                w = vec![0.0; n];
            }
            if w.iter().all(|x| *x == 0.0) {
                w[rng.gen_range(0..n)] = 1.0;
            }
            let s: f64 = w.iter().sum();
            AttributeBelief {
                id: a.id.clone(),
                values: a.domain.clone(),
                probs: w.iter().map(|x| x / s).collect(),
            }
        })
        .collect();
    BeliefState::from_marginals(attrs).unwrap()
}

/// Draws one value index per attribute from the belief's marginals.
pub fn sample_truth(belief: &BeliefState, rng: &mut impl Rng) -> Vec<usize> {
    belief
        .attributes()
        .iter()
        .map(|a| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, p) in a.probs.iter().enumerate() {
                acc += p;
                if u < acc && *p > 0.0 {
                    return i;
                }
            }
            a.probs.iter().rposition(|p| *p > 0.0).unwrap()
        })
        .collect()
}

/// Every joint assignment (as value indices) with its probability under the
/// product of marginals.
pub fn joint(belief: &BeliefState) -> Vec<(Vec<usize>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for a in belief.attributes() {
        let mut next = Vec::with_capacity(out.len() * a.probs.len());
        for (prefix, p) in &out {
            for (i, q) in a.probs.iter().enumerate() {
                let mut v = prefix.clone();
                v.push(i);
                next.push((v, p * q));
            }
        }
        out = next;
    }
    out
}

pub fn joint_entropy(belief: &BeliefState) -> f64 {
    joint(belief)
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(_, p)| -p * p.log2())
        .sum()
}

pub fn demo_world(n: usize, seed: u64) -> (Schema, WorldModel, Vec<Specification>) {
    let schema = Schema::demo();
    let corpus = generate_corpus(&schema, &GenConfig::demo(), n, seed).unwrap();
    let wm = estimate_prior(&schema, &corpus, 1.0).unwrap();
    (schema, wm, corpus)
}

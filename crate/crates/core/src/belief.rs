//! Factorized belief states, hard-constraint updates and information gain.
//!
//! The belief over complete specifications is a product of independent
//! per-attribute distributions, so its Shannon entropy is the sum of the
//! marginal entropies. An answer constrains some attributes to subsets of
//! their domains; the posterior restricts each constrained marginal to its
//! subset and renormalizes. The reward for a turn is the drop in total
//! entropy, which is computed twice (as a difference of totals and as a sum
//! of per-attribute drops) and cross-checked on every update.
//!
//! All entropies are in bits.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Schema, WorldModel};

/// Probabilities below this are treated as exactly zero.
pub const PROB_FLOOR: f64 = 1e-12;

/// Maximum disagreement tolerated between the two reward computations.
pub const REWARD_TOLERANCE: f64 = 1e-9;

/// Default cap on joint (ground truth, answer) outcomes enumerated by
/// [`BeliefState::expected_information_gain`].
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Shannon entropy in bits. `0 log 0 = 0`; entries under [`PROB_FLOOR`] count as zero.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    let mut support = probs.iter().filter(|p| **p >= PROB_FLOOR);
    match (support.next(), support.next()) {
        (None, _) | (Some(_), None) => 0.0,
        _ => probs
            .iter()
            .filter(|p| **p >= PROB_FLOOR)
            .map(|p| -p * p.log2())
            .sum(),
    }
}

/// `D_KL(posterior || prior)` in bits.
pub fn kl_bits(posterior: &[f64], prior: &[f64]) -> f64 {
    posterior
        .iter()
        .zip(prior)
        .filter(|(q, _)| **q >= PROB_FLOOR)
        .map(|(q, p)| q * (q / p).log2())
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeBelief {
    pub id: String,
    pub values: Vec<String>,
    pub probs: Vec<f64>,
}

impl AttributeBelief {
    pub fn entropy(&self) -> f64 {
        entropy_bits(&self.probs)
    }

    pub fn is_resolved(&self) -> bool {
        self.probs.iter().filter(|p| **p >= PROB_FLOOR).count() == 1
    }

    /// Most probable value and its probability; ties go to the earliest value.
    pub fn mode(&self) -> (&str, f64) {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        (&self.values[best], self.probs[best])
    }

    fn index_of(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Oracle,
    Human,
    Parser,
}

/// Hard constraints extracted from one answer: each attribute is restricted
/// to a nonempty subset of its domain. A singleton pins the attribute.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub constraints: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl Evidence {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            constraints: BTreeMap::new(),
            provenance,
        }
    }

    pub fn single(id: &str, value: &str) -> Self {
        Self::new(Provenance::Oracle).with(id, [value])
    }

    pub fn with<'a>(mut self, id: &str, values: impl IntoIterator<Item = &'a str>) -> Self {
        self.constraints
            .entry(id.to_string())
            .or_default()
            .extend(values.into_iter().map(str::to_string));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// True when some constraint leaves more than one candidate value.
    pub fn is_partial(&self) -> bool {
        self.constraints.values().any(|s| s.len() > 1)
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for (id, values) in &self.constraints {
            let attr = schema
                .attribute(id)
                .ok_or_else(|| Error::UnknownAttribute(id.clone()))?;
            if values.is_empty() {
                return Err(Error::Attribute {
                    attribute: id.clone(),
                    reason: "empty constraint".into(),
                });
            }
            if let Some(v) = values.iter().find(|v| attr.index_of(v).is_none()) {
                return Err(Error::UnknownValue {
                    attribute: id.clone(),
                    value: v.clone(),
                });
            }
        }
        Ok(())
    }
}

/// How [`BeliefState::apply_evidence_with`] treats evidence that rules out
/// every value the belief still allows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConflictPolicy {
    #[default]
    Strict,
    /// Replace the attribute with a point mass on the first value of the
    /// constraint and log a warning.
    Lenient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    /// 1-based index of the turn that produced this reward.
    pub turn: usize,
    pub ig_bits: f64,
    /// Attributes that became point masses on this turn.
    pub resolved: Vec<String>,
    /// Entropy drop of every constrained attribute.
    pub drops: IndexMap<String, f64>,
    /// Some constraint was a non-singleton subset.
    #[serde(default)]
    pub partial: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub t: usize,
    pub distributions: IndexMap<String, IndexMap<String, f64>>,
    pub resolved: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeliefState {
    t: usize,
    attrs: Vec<AttributeBelief>,
}

impl BeliefState {
    /// Starts a dialogue from the world-model prior.
    pub fn init(schema: &Schema, world_model: &WorldModel) -> Result<Self> {
        world_model.validate(schema)?;
        let attrs = schema
            .attributes
            .iter()
            .map(|a| {
                Ok(AttributeBelief {
                    id: a.id.clone(),
                    values: a.domain.clone(),
                    probs: world_model.table(a)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { t: 0, attrs })
    }

    /// Builds a belief from explicit marginals (each renormalized check only).
    pub fn from_marginals(attrs: Vec<AttributeBelief>) -> Result<Self> {
        for a in &attrs {
            if a.values.len() != a.probs.len() || a.values.is_empty() {
                return Err(Error::Attribute {
                    attribute: a.id.clone(),
                    reason: "values and probabilities differ in length".into(),
                });
            }
            if a.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Attribute {
                    attribute: a.id.clone(),
                    reason: "probabilities must be finite and nonnegative".into(),
                });
            }
            let total: f64 = a.probs.iter().sum();
            if (total - 1.0).abs() > crate::schema::TABLE_TOLERANCE {
                return Err(Error::Attribute {
                    attribute: a.id.clone(),
                    reason: format!("distribution sums to {total}"),
                });
            }
        }
        Ok(Self { t: 0, attrs })
    }

    /// Uniform marginals over every schema attribute.
    pub fn uniform(schema: &Schema) -> Self {
        let attrs = schema
            .attributes
            .iter()
            .map(|a| AttributeBelief {
                id: a.id.clone(),
                values: a.domain.clone(),
                probs: vec![1.0 / a.domain.len() as f64; a.domain.len()],
            })
            .collect();
        Self { t: 0, attrs }
    }

    pub fn turn(&self) -> usize {
        self.t
    }

    pub fn attributes(&self) -> &[AttributeBelief] {
        &self.attrs
    }

    pub fn attribute(&self, id: &str) -> Option<&AttributeBelief> {
        self.attrs.iter().find(|a| a.id == id)
    }

    pub fn entropy_of(&self, id: &str) -> Option<f64> {
        self.attribute(id).map(AttributeBelief::entropy)
    }

    pub fn marginal_entropies(&self) -> Vec<f64> {
        self.attrs.iter().map(AttributeBelief::entropy).collect()
    }

    /// Entropy of the whole factorized belief: the sum of marginal entropies.
    pub fn total_entropy(&self) -> f64 {
        self.attrs.iter().map(AttributeBelief::entropy).sum()
    }

    pub fn is_resolved(&self, id: &str) -> bool {
        self.attribute(id).is_some_and(AttributeBelief::is_resolved)
    }

    pub fn resolved(&self) -> Vec<String> {
        self.attrs
            .iter()
            .filter(|a| a.is_resolved())
            .map(|a| a.id.clone())
            .collect()
    }

    pub fn unresolved(&self) -> Vec<String> {
        self.attrs
            .iter()
            .filter(|a| !a.is_resolved())
            .map(|a| a.id.clone())
            .collect()
    }

    pub fn apply_evidence(&self, evidence: &Evidence) -> Result<(BeliefState, RewardRecord)> {
        self.apply_evidence_with(evidence, ConflictPolicy::Strict)
    }

    /// Conditions the belief on `evidence` and returns the posterior with its reward.
    pub fn apply_evidence_with(
        &self,
        evidence: &Evidence,
        policy: ConflictPolicy,
    ) -> Result<(BeliefState, RewardRecord)> {
        for id in evidence.constraints.keys() {
            if self.attribute(id).is_none() {
                return Err(Error::UnknownAttribute(id.clone()));
            }
        }

        let mut next = self.clone();
        next.t += 1;
        let mut drops = IndexMap::new();
        let mut resolved = Vec::new();

        for attr in next.attrs.iter_mut() {
            let Some(subset) = evidence.constraints.get(&attr.id) else {
                continue;
            };
            if subset.is_empty() {
                return Err(Error::Attribute {
                    attribute: attr.id.clone(),
                    reason: "empty constraint".into(),
                });
            }
            let mut allowed = vec![false; attr.values.len()];
            for value in subset {
                let idx = attr.index_of(value).ok_or_else(|| Error::UnknownValue {
                    attribute: attr.id.clone(),
                    value: value.clone(),
                })?;
                allowed[idx] = true;
            }
            let was_resolved = attr.is_resolved();
            let before = attr.entropy();

            let covers_support = attr
                .probs
                .iter()
                .zip(&allowed)
                .all(|(p, keep)| *keep || *p < PROB_FLOOR);
            if covers_support {
                // Nothing the belief still allows is ruled out.
                drops.insert(attr.id.clone(), 0.0);
                continue;
            }

            let mass: f64 = attr
                .probs
                .iter()
                .zip(&allowed)
                .filter(|(_, keep)| **keep)
                .map(|(p, _)| *p)
                .sum();
            if mass < PROB_FLOOR {
                match policy {
                    ConflictPolicy::Strict => {
                        return Err(Error::Contradiction {
                            attribute: attr.id.clone(),
                            resolved: attr.mode().0.to_string(),
                        })
                    }
                    ConflictPolicy::Lenient => {
                        let first = allowed.iter().position(|k| *k).expect("nonempty subset");
                        log::warn!(
                            "evidence contradicts `{}` (was `{}`); replacing with `{}`",
                            attr.id,
                            attr.mode().0,
                            attr.values[first]
                        );
                        attr.probs.iter_mut().for_each(|p| *p = 0.0);
                        attr.probs[first] = 1.0;
                    }
                }
            } else {
                for (p, keep) in attr.probs.iter_mut().zip(&allowed) {
                    *p = if *keep { *p / mass } else { 0.0 };
                }
            }

            drops.insert(attr.id.clone(), before - attr.entropy());
            if !was_resolved && attr.is_resolved() {
                resolved.push(attr.id.clone());
            }
        }

        let per_attribute: f64 = drops.values().sum();
        let difference = self.total_entropy() - next.total_entropy();
        if (per_attribute - difference).abs() > REWARD_TOLERANCE {
            return Err(Error::RewardMismatch {
                difference,
                per_attribute,
            });
        }

        let record = RewardRecord {
            turn: next.t,
            ig_bits: per_attribute,
            resolved,
            drops,
            partial: evidence.is_partial(),
        };
        Ok((next, record))
    }

    /// Expected entropy reduction of asking about `targets` when answers
    /// follow `model`, by exhaustive enumeration of every (ground truth,
    /// answer) pair weighted by the current belief.
    ///
    /// The result carries three independently computed quantities that agree
    /// whenever the posterior update is exact Bayesian conditioning under
    /// `model`: the expected entropy drop, the expected KL divergence of the
    /// posterior from the current belief, and the mutual information between
    /// the answer and the specification.
    pub fn expected_information_gain(
        &self,
        targets: &[String],
        model: &RevealModel,
        cap: u128,
    ) -> Result<ExpectedGain> {
        let mut seen = BTreeSet::new();
        let mut per_attr: Vec<(&AttributeBelief, Vec<Branch>)> = Vec::new();
        for id in targets {
            let attr = self
                .attribute(id)
                .ok_or_else(|| Error::UnknownAttribute(id.clone()))?;
            if !seen.insert(id.as_str()) {
                continue;
            }
            let mut branches = Vec::new();
            for (truth, p) in attr.probs.iter().enumerate() {
                if *p < PROB_FLOOR {
                    continue;
                }
                for (subset, cond) in model.outcomes(attr.values.len(), truth) {
                    branches.push(Branch {
                        truth_prob: *p,
                        cond,
                        subset,
                    });
                }
            }
            per_attr.push((attr, branches));
        }

        let needed: u128 = per_attr.iter().map(|(_, b)| b.len() as u128).product();
        if needed > cap {
            return Err(Error::EnumerationTooLarge { needed, cap });
        }

        let mut expected_drop = 0.0;
        let mut expected_kl = 0.0;
        let mut conditional_entropy = 0.0;
        let mut answer_marginal: BTreeMap<Vec<Option<Vec<usize>>>, f64> = BTreeMap::new();

        let mut cursor = vec![0usize; per_attr.len()];
        loop {
            let mut weight = 1.0;
            let mut cond = 1.0;
            let mut evidence = Evidence::new(Provenance::Oracle);
            let mut key = Vec::with_capacity(per_attr.len());
            for ((attr, branches), &c) in per_attr.iter().zip(&cursor) {
                let b = &branches[c];
                weight *= b.truth_prob * b.cond;
                cond *= b.cond;
                if let Some(subset) = &b.subset {
                    evidence.constraints.insert(
                        attr.id.clone(),
                        subset.iter().map(|&i| attr.values[i].clone()).collect(),
                    );
                }
                key.push(b.subset.clone());
            }
            if weight > 0.0 {
                let (post, record) = self.apply_evidence(&evidence)?;
                expected_drop += weight * record.ig_bits;
                let kl: f64 = self
                    .attrs
                    .iter()
                    .zip(&post.attrs)
                    .map(|(prior, posterior)| kl_bits(&posterior.probs, &prior.probs))
                    .sum();
                expected_kl += weight * kl;
                conditional_entropy -= weight * cond.log2();
                *answer_marginal.entry(key).or_insert(0.0) += weight;
            }

            // Odometer over the per-attribute branch lists.
            let mut pos = 0;
            loop {
                if pos == cursor.len() {
                    let answer_entropy: f64 = answer_marginal
                        .values()
                        .filter(|p| **p > 0.0)
                        .map(|p| -p * p.log2())
                        .sum();
                    return Ok(ExpectedGain {
                        expected_entropy_drop: expected_drop,
                        expected_kl,
                        mutual_information: answer_entropy - conditional_entropy,
                        outcomes: needed,
                    });
                }
                cursor[pos] += 1;
                if cursor[pos] < per_attr[pos].1.len() {
                    break;
                }
                cursor[pos] = 0;
                pos += 1;
            }
        }
    }

    pub fn snapshot(&self) -> BeliefSnapshot {
        BeliefSnapshot {
            t: self.t,
            distributions: self
                .attrs
                .iter()
                .map(|a| {
                    (
                        a.id.clone(),
                        a.values.iter().cloned().zip(a.probs.iter().copied()).collect(),
                    )
                })
                .collect(),
            resolved: self.resolved(),
        }
    }

    pub fn from_snapshot(snapshot: &BeliefSnapshot) -> Result<Self> {
        let attrs = snapshot
            .distributions
            .iter()
            .map(|(id, table)| AttributeBelief {
                id: id.clone(),
                values: table.keys().cloned().collect(),
                probs: table.values().copied().collect(),
            })
            .collect();
        let mut belief = Self::from_marginals(attrs)?;
        belief.t = snapshot.t;
        Ok(belief)
    }
}

struct Branch {
    truth_prob: f64,
    cond: f64,
    subset: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedGain {
    pub expected_entropy_drop: f64,
    pub expected_kl: f64,
    pub mutual_information: f64,
    pub outcomes: u128,
}

/// Answer distribution for one targeted attribute: with probability
/// `reveal_fraction` the answer names a subset of `subset_size` values that
/// contains the truth (the other members drawn uniformly from the rest of
/// the domain), otherwise the attribute is left unconstrained.
///
/// `subset_size = 1, reveal_fraction = 1` is a full, exact reveal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevealModel {
    pub reveal_fraction: f64,
    pub subset_size: usize,
}

impl RevealModel {
    pub const FULL: RevealModel = RevealModel {
        reveal_fraction: 1.0,
        subset_size: 1,
    };

    /// Subset size actually used on a domain of `n` values. Always leaves at
    /// least one value out, so a reveal never carries zero information.
    pub fn effective_size(&self, n: usize) -> usize {
        self.subset_size.clamp(1, n.saturating_sub(1).max(1))
    }

    /// Every possible constraint (as sorted domain indices, `None` for
    /// omission) with its probability given the true index.
    pub fn outcomes(&self, n: usize, truth: usize) -> Vec<(Option<Vec<usize>>, f64)> {
        let size = self.effective_size(n);
        let others: Vec<usize> = (0..n).filter(|&i| i != truth).collect();
        let combos = combinations(&others, size - 1);
        let each = self.reveal_fraction / combos.len() as f64;
        let mut out: Vec<_> = combos
            .into_iter()
            .map(|mut c| {
                c.push(truth);
                c.sort_unstable();
                (Some(c), each)
            })
            .filter(|(_, p)| *p > 0.0)
            .collect();
        if self.reveal_fraction < 1.0 {
            out.push((None, 1.0 - self.reveal_fraction));
        }
        out
    }
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in combinations(&items[i + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

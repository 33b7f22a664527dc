//! Question-selection policy and its trainers.
//!
//! The policy scores each candidate in a group by `θ·φ / T` and takes a
//! softmax over the group. All four trainers (offline GRPO, online GRPO,
//! SFT, DPO) use closed-form gradients and plain gradient descent.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::BeliefState;
use crate::datagen::{
    build_dataset_with, generate_candidates, zscore_advantages, CandidateConfig, CandidateSet,
    DatagenConfig, PreferenceGroup, Rollout,
};
use crate::dialogue::{Question, QuestionSelector};
use crate::error::{Error, Result};
use crate::schema::{Schema, Specification, WorldModel};
use crate::seed;

pub const FEATURE_DIM: usize = 6;
pub const FEATURE_VERSION: &str = "group-softmax-v1";

pub type Features = [f64; FEATURE_DIM];

/// `[Σ targeted entropy, max targeted entropy, #targets, #resolved targets,
/// off-topic, 1]`.
pub fn features(belief: &BeliefState, targets: &[String]) -> Result<Features> {
    let mut seen: Vec<&str> = Vec::with_capacity(targets.len());
    let (mut sum, mut max, mut resolved) = (0.0f64, 0.0f64, 0.0);
    for id in targets {
        if seen.contains(&id.as_str()) {
            continue;
        }
        seen.push(id);
        let attr = belief
            .attribute(id)
            .ok_or_else(|| Error::UnknownAttribute(id.clone()))?;
        let h = attr.entropy();
        sum += h;
        max = max.max(h);
        if attr.is_resolved() {
            resolved += 1.0;
        }
    }
    let off_topic = if seen.is_empty() { 1.0 } else { 0.0 };
    Ok([sum, max, seen.len() as f64, resolved, off_topic, 1.0])
}

pub fn candidate_features(belief: &BeliefState, set: &CandidateSet) -> Result<Vec<Features>> {
    set.candidates
        .iter()
        .map(|q| features(belief, &q.targets))
        .collect()
}

fn dot(a: &[f64], b: &Features) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Index of the largest value, earliest on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    pub temperature: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self::zeros()
    }
}

impl PolicyParams {
    pub fn zeros() -> Self {
        Self {
            theta: vec![0.0; FEATURE_DIM],
            temperature: 1.0,
        }
    }

    pub fn new(theta: Vec<f64>, temperature: f64) -> Result<Self> {
        let p = Self { theta, temperature };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != FEATURE_DIM {
            return Err(Error::Invalid(format!(
                "policy has {} weights, expected {FEATURE_DIM}",
                self.theta.len()
            )));
        }
        if !self.theta.iter().all(|w| w.is_finite()) {
            return Err(Error::Invalid("policy weights must be finite".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Invalid("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn scores(&self, feats: &[Features]) -> Vec<f64> {
        feats
            .iter()
            .map(|f| dot(&self.theta, f) / self.temperature)
            .collect()
    }

    pub fn log_probs(&self, feats: &[Features]) -> Result<Vec<f64>> {
        if feats.is_empty() {
            return Err(Error::Invalid("empty candidate group".into()));
        }
        Ok(log_softmax(&self.scores(feats)))
    }

    pub fn probs(&self, feats: &[Features]) -> Result<Vec<f64>> {
        Ok(self.log_probs(feats)?.into_iter().map(f64::exp).collect())
    }

    /// `∂ log π_i / ∂θ = (φ_i − Σ_j π_j φ_j) / T` for every candidate.
    fn score_grads(&self, feats: &[Features], probs: &[f64]) -> Vec<Features> {
        let mut mean = [0.0; FEATURE_DIM];
        for (f, p) in feats.iter().zip(probs) {
            for d in 0..FEATURE_DIM {
                mean[d] += p * f[d];
            }
        }
        feats
            .iter()
            .map(|f| {
                let mut g = [0.0; FEATURE_DIM];
                for d in 0..FEATURE_DIM {
                    g[d] = (f[d] - mean[d]) / self.temperature;
                }
                g
            })
            .collect()
    }
}

pub fn policy_logprob(params: &PolicyParams, feats: &[Features], index: usize) -> Result<f64> {
    let lp = params.log_probs(feats)?;
    lp.get(index)
        .copied()
        .ok_or_else(|| Error::Invalid(format!("candidate {index} out of range")))
}

/// A group ready for training: features, rewards and advantages aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredGroup {
    pub features: Vec<Features>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl ScoredGroup {
    pub fn new(features: Vec<Features>, rewards: Vec<f64>) -> Result<Self> {
        if features.len() != rewards.len() {
            return Err(Error::Invalid("features and rewards differ in length".into()));
        }
        let advantages = zscore_advantages(&rewards)?;
        Ok(Self {
            features,
            rewards,
            advantages,
        })
    }

    /// Rebuilds features from the stored belief snapshot. Slot-count mode
    /// replaces the rewards and recomputes advantages.
    pub fn from_preference(group: &PreferenceGroup, mode: RewardMode) -> Result<Self> {
        let belief = BeliefState::from_snapshot(&group.meta.belief)?;
        let features = group
            .meta
            .targets
            .iter()
            .map(|t| features(&belief, t))
            .collect::<Result<Vec<_>>>()?;
        match mode {
            RewardMode::Entropy => {
                if group.advantage.len() != features.len() || group.reward.len() != features.len() {
                    return Err(Error::Invalid("group fields have mismatched lengths".into()));
                }
                Ok(Self {
                    features,
                    rewards: group.reward.clone(),
                    advantages: group.advantage.clone(),
                })
            }
            RewardMode::SlotCount => Self::new(features, group.meta.slot_count.clone()),
        }
    }

    pub fn k(&self) -> usize {
        self.features.len()
    }

    pub fn is_constant(&self) -> bool {
        self.advantages.iter().all(|a| *a == 0.0)
    }

    fn check(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Invalid("empty candidate group".into()));
        }
        if self.rewards.len() != self.k() || self.advantages.len() != self.k() {
            return Err(Error::Invalid("group fields have mismatched lengths".into()));
        }
        Ok(())
    }
}

/// Loss value, its gradient, and the KL term where one applies.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub grad: Features,
    pub kl: f64,
}

/// Clipped-ratio surrogate with a KL penalty. Ratios are taken against
/// `old`, the KL against `reference`.
pub fn grpo_loss(
    params: &PolicyParams,
    old: &PolicyParams,
    reference: &PolicyParams,
    group: &ScoredGroup,
    epsilon: f64,
    beta: f64,
) -> Result<Objective> {
    group.check()?;
    let lp = params.log_probs(&group.features)?;
    let lp_old = old.log_probs(&group.features)?;
    let lp_ref = reference.log_probs(&group.features)?;
    let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    let dl = params.score_grads(&group.features, &probs);
    let k = group.k() as f64;

    let mut surrogate = 0.0;
    let mut d_surr = [0.0; FEATURE_DIM];
    for i in 0..group.k() {
        let a = group.advantages[i];
        let rho = (lp[i] - lp_old[i]).exp();
        let unclipped = rho * a;
        let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon) * a;
        if unclipped <= clipped {
            surrogate += unclipped / k;
            for d in 0..FEATURE_DIM {
                d_surr[d] += a * rho * dl[i][d] / k;
            }
        } else {
            surrogate += clipped / k;
        }
    }

    let mut kl = 0.0;
    let mut d_kl = [0.0; FEATURE_DIM];
    for i in 0..group.k() {
        let diff = lp[i] - lp_ref[i];
        kl += probs[i] * diff;
        for d in 0..FEATURE_DIM {
            d_kl[d] += probs[i] * diff * dl[i][d];
        }
    }

    let mut grad = [0.0; FEATURE_DIM];
    for d in 0..FEATURE_DIM {
        grad[d] = -(d_surr[d] - beta * d_kl[d]);
    }
    Ok(Objective {
        loss: -(surrogate - beta * kl),
        grad,
        kl,
    })
}

pub fn grpo_offline_loss(
    params: &PolicyParams,
    reference: &PolicyParams,
    group: &ScoredGroup,
    epsilon: f64,
    beta: f64,
) -> Result<Objective> {
    grpo_loss(params, reference, reference, group, epsilon, beta)
}

/// Negative log-likelihood of the highest-reward candidate.
pub fn sft_loss(params: &PolicyParams, group: &ScoredGroup) -> Result<Objective> {
    group.check()?;
    let lp = params.log_probs(&group.features)?;
    let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    let dl = params.score_grads(&group.features, &probs);
    let best = argmax(&group.rewards);
    let mut grad = [0.0; FEATURE_DIM];
    for d in 0..FEATURE_DIM {
        grad[d] = -dl[best][d];
    }
    Ok(Objective {
        loss: -lp[best],
        grad,
        kl: 0.0,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Preference loss on the best and worst candidates of the group.
pub fn dpo_loss(
    params: &PolicyParams,
    reference: &PolicyParams,
    group: &ScoredGroup,
    dpo_beta: f64,
) -> Result<Objective> {
    group.check()?;
    let (win, lose) = (argmax(&group.rewards), argmin(&group.rewards));
    if group.rewards[win] == group.rewards[lose] {
        return Err(Error::Invalid("all rewards equal; no preference pair".into()));
    }
    let lp = params.log_probs(&group.features)?;
    let lp_ref = reference.log_probs(&group.features)?;
    let margin = dpo_beta * ((lp[win] - lp_ref[win]) - (lp[lose] - lp_ref[lose]));
    let weight = sigmoid(-margin) * dpo_beta / params.temperature;
    let mut grad = [0.0; FEATURE_DIM];
    for d in 0..FEATURE_DIM {
        grad[d] = -weight * (group.features[win][d] - group.features[lose][d]);
    }
    Ok(Objective {
        loss: softplus(-margin),
        grad,
        kl: 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sft,
    Dpo,
    GrpoOffline,
    GrpoOnline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    Entropy,
    SlotCount,
}

macro_rules! kebab_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!("unknown {}: {other}", stringify!($ty)))),
                }
            }
        }
    };
}

kebab_enum!(Method, Method::Sft => "sft", Method::Dpo => "dpo",
    Method::GrpoOffline => "grpo-offline", Method::GrpoOnline => "grpo-online");
kebab_enum!(RewardMode, RewardMode::Entropy => "entropy", RewardMode::SlotCount => "slot-count");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub dpo_beta: f64,
    pub seed: u64,
    pub reward_mode: RewardMode,
    /// Online only: SFT passes before the reference is frozen.
    pub warmup_epochs: usize,
    /// Online only: gradient steps per batch of fresh rollouts.
    pub inner_steps: usize,
    /// Online only: dialogues rolled per epoch.
    pub dialogues_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::GrpoOffline,
            epochs: 5,
            learning_rate: 0.05,
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            dpo_beta: 0.1,
            seed: 0,
            reward_mode: RewardMode::Entropy,
            warmup_epochs: 1,
            inner_steps: 4,
            dialogues_per_epoch: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config("clip epsilon must lie in (0, 1)".into()));
        }
        if !(self.kl_beta >= 0.0 && self.dpo_beta >= 0.0) {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.method == Method::GrpoOnline && (self.inner_steps == 0 || self.dialogues_per_epoch == 0) {
            return Err(Error::Config("online training needs inner steps and dialogues per epoch".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub loss: f64,
    pub kl_term: f64,
    pub top1_agreement: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub params: PolicyParams,
    pub log: Vec<TrainLogRow>,
    /// Groups the objective could not use (DPO on constant rewards).
    pub skipped_groups: usize,
}

impl TrainReport {
    pub fn log_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.log {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Fraction of non-constant groups whose greedy pick earns the group's top
/// reward. Reward ties count as agreement.
pub fn top1_agreement(params: &PolicyParams, groups: &[ScoredGroup]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for g in groups.iter().filter(|g| !g.is_constant()) {
        total += 1;
        let pick = argmax(&params.scores(&g.features));
        let best = g.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if g.rewards[pick] >= best - 1e-9 {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

struct BatchObjective {
    loss: f64,
    kl: f64,
    grad: Features,
    skipped: usize,
}

fn batch_objective(
    params: &PolicyParams,
    old: &PolicyParams,
    reference: &PolicyParams,
    groups: &[ScoredGroup],
    config: &TrainConfig,
    sft: bool,
) -> Result<BatchObjective> {
    let mut out = BatchObjective {
        loss: 0.0,
        kl: 0.0,
        grad: [0.0; FEATURE_DIM],
        skipped: 0,
    };
    let mut used = 0usize;
    for g in groups {
        let obj = if sft {
            sft_loss(params, g)?
        } else {
            match config.method {
                Method::Sft => sft_loss(params, g)?,
                Method::Dpo => match dpo_loss(params, reference, g, config.dpo_beta) {
                    Ok(o) => o,
                    Err(Error::Invalid(_)) => {
                        out.skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                },
                Method::GrpoOffline | Method::GrpoOnline => {
                    grpo_loss(params, old, reference, g, config.clip_epsilon, config.kl_beta)?
                }
            }
        };
        used += 1;
        out.loss += obj.loss;
        out.kl += obj.kl;
        for d in 0..FEATURE_DIM {
            out.grad[d] += obj.grad[d];
        }
    }
    if used > 0 {
        let n = used as f64;
        out.loss /= n;
        out.kl /= n;
        for g in &mut out.grad {
            *g /= n;
        }
    }
    Ok(out)
}

fn step(params: &mut PolicyParams, grad: &Features, lr: f64, epoch: usize) -> Result<()> {
    for (w, g) in params.theta.iter_mut().zip(grad) {
        *w -= lr * g;
    }
    if !params.theta.iter().all(|w| w.is_finite()) {
        return Err(Error::Diverged {
            epoch,
            detail: format!("weights became non-finite: {:?}", params.theta),
        });
    }
    Ok(())
}

fn guard(obj: &BatchObjective, epoch: usize, params: &PolicyParams) -> Result<()> {
    if obj.loss.is_finite() && obj.grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            detail: format!("loss {} at theta {:?}", obj.loss, params.theta),
        })
    }
}

/// Full-batch gradient descent from θ = 0 on a fixed dataset. The reference
/// policy is the starting point. Row `e` of the log describes the weights
/// after `e` epochs.
pub fn train_offline(groups: &[ScoredGroup], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if groups.is_empty() {
        return Err(Error::Invalid("training dataset is empty".into()));
    }
    if config.method == Method::GrpoOnline {
        return Err(Error::Config("online GRPO needs a simulator, not a dataset".into()));
    }
    let reference = PolicyParams::zeros();
    let mut params = reference.clone();
    let mut log = Vec::with_capacity(config.epochs + 1);
    let mut skipped = 0;
    for epoch in 0..=config.epochs {
        let obj = batch_objective(&params, &reference, &reference, groups, config, false)?;
        guard(&obj, epoch, &params)?;
        skipped = obj.skipped;
        log.push(TrainLogRow {
            epoch,
            loss: obj.loss,
            kl_term: obj.kl,
            top1_agreement: top1_agreement(&params, groups),
        });
        log::debug!("epoch {epoch}: loss {:.6} kl {:.6}", obj.loss, obj.kl);
        if epoch < config.epochs {
            step(&mut params, &obj.grad, config.learning_rate, epoch + 1)?;
        }
    }
    Ok(TrainReport {
        params,
        log,
        skipped_groups: skipped,
    })
}

pub fn scored_groups(groups: &[PreferenceGroup], mode: RewardMode) -> Result<Vec<ScoredGroup>> {
    groups
        .iter()
        .map(|g| ScoredGroup::from_preference(g, mode))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectMode {
    Greedy,
    Sample,
}

pub fn choose_index(
    params: &PolicyParams,
    feats: &[Features],
    mode: SelectMode,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    if feats.is_empty() {
        return Err(Error::Invalid("empty candidate pool".into()));
    }
    match mode {
        SelectMode::Greedy => Ok(argmax(&params.scores(feats))),
        SelectMode::Sample => {
            let probs = params.probs(feats)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Ok(i);
                }
            }
            Ok(probs.len() - 1)
        }
    }
}

/// Draws a candidate pool for `belief` and picks one question from it.
pub fn select_question(
    params: &PolicyParams,
    belief: &BeliefState,
    schema: &Schema,
    candidates: &CandidateConfig,
    mode: SelectMode,
    rng: &mut ChaCha8Rng,
) -> Result<Question> {
    let set = generate_candidates(belief, schema, candidates, String::new(), None, rng)?;
    let feats = candidate_features(belief, &set)?;
    let i = choose_index(params, &feats, mode, rng)?;
    Ok(set.candidates[i].clone())
}

/// A policy deployed in a dialogue.
#[derive(Clone, Debug)]
pub struct PolicySelector {
    pub params: PolicyParams,
    pub candidates: CandidateConfig,
    pub mode: SelectMode,
}

impl PolicySelector {
    pub fn greedy(params: PolicyParams) -> Self {
        Self {
            params,
            candidates: CandidateConfig::default(),
            mode: SelectMode::Greedy,
        }
    }

    /// θ = 0 sampled: every candidate equally likely.
    pub fn uniform() -> Self {
        Self {
            params: PolicyParams::zeros(),
            candidates: CandidateConfig::default(),
            mode: SelectMode::Sample,
        }
    }
}

impl QuestionSelector for PolicySelector {
    fn propose(
        &mut self,
        belief: &BeliefState,
        schema: &Schema,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Question>> {
        if belief.unresolved().is_empty() {
            return Ok(None);
        }
        select_question(&self.params, belief, schema, &self.candidates, self.mode, rng).map(Some)
    }
}

/// Advances data-generation dialogues with the policy's own choice.
pub struct PolicyRollout<'a> {
    pub params: &'a PolicyParams,
    pub mode: SelectMode,
}

impl Rollout for PolicyRollout<'_> {
    fn choose(
        &self,
        set: &CandidateSet,
        belief: &BeliefState,
        _schema: &Schema,
        rng: &mut ChaCha8Rng,
    ) -> Result<Question> {
        let feats = candidate_features(belief, set)?;
        let i = choose_index(self.params, &feats, self.mode, rng)?;
        Ok(set.candidates[i].clone())
    }
}

/// What online training rolls dialogues against.
pub struct OnlineEnv<'a> {
    pub schema: &'a Schema,
    pub world_model: &'a WorldModel,
    pub train: &'a [Specification],
    /// Persona, candidate mix and stopping rule; seed and rollout fields are
    /// overridden per round.
    pub datagen: DatagenConfig,
}

fn online_round(
    env: &OnlineEnv<'_>,
    params: &PolicyParams,
    config: &TrainConfig,
    round: usize,
) -> Result<Vec<ScoredGroup>> {
    let n = config.dialogues_per_epoch.min(env.train.len());
    let start = (round * n) % env.train.len();
    let specs: Vec<Specification> = (0..n)
        .map(|i| env.train[(start + i) % env.train.len()].clone())
        .collect();
    let datagen = DatagenConfig {
        seed: seed::derive(config.seed, "online-round", round as u64),
        ..env.datagen.clone()
    };
    let rollout = PolicyRollout {
        params,
        mode: SelectMode::Sample,
    };
    let (groups, _) = build_dataset_with(env.schema, env.world_model, &specs, &datagen, &rollout, None)?;
    scored_groups(&groups, config.reward_mode)
}

/// Online GRPO: SFT warm-up, freeze the reference, then alternate fresh
/// policy rollouts with clipped-surrogate updates against the rollout policy.
pub fn train_online(env: &OnlineEnv<'_>, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if env.train.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    let mut params = PolicyParams::zeros();
    let mut round = 0;
    for w in 0..config.warmup_epochs {
        let groups = online_round(env, &params, config, round)?;
        round += 1;
        let obj = batch_objective(&params, &params, &params, &groups, config, true)?;
        guard(&obj, 0, &params)?;
        step(&mut params, &obj.grad, config.learning_rate, 0)?;
        log::debug!("warm-up {w}: sft loss {:.6}", obj.loss);
    }
    let reference = params.clone();

    let mut log = Vec::with_capacity(config.epochs + 1);
    let groups = online_round(env, &params, config, round)?;
    round += 1;
    let obj = batch_objective(&params, &params, &reference, &groups, config, false)?;
    log.push(TrainLogRow {
        epoch: 0,
        loss: obj.loss,
        kl_term: obj.kl,
        top1_agreement: top1_agreement(&params, &groups),
    });
    for epoch in 1..=config.epochs {
        let old = params.clone();
        let groups = online_round(env, &old, config, round)?;
        round += 1;
        for _ in 0..config.inner_steps {
            let obj = batch_objective(&params, &old, &reference, &groups, config, false)?;
            guard(&obj, epoch, &params)?;
            step(&mut params, &obj.grad, config.learning_rate, epoch)?;
        }
        let obj = batch_objective(&params, &old, &reference, &groups, config, false)?;
        guard(&obj, epoch, &params)?;
        log.push(TrainLogRow {
            epoch,
            loss: obj.loss,
            kl_term: obj.kl,
            top1_agreement: top1_agreement(&params, &groups),
        });
    }
    Ok(TrainReport {
        params,
        log,
        skipped_groups: 0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedWith {
    pub method: Method,
    pub reward_mode: RewardMode,
    pub seed: u64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub theta: Vec<f64>,
    pub temperature: f64,
    pub feature_version: String,
    pub trained_with: TrainedWith,
}

impl PolicyFile {
    pub fn new(params: &PolicyParams, config: &TrainConfig) -> Self {
        Self {
            theta: params.theta.clone(),
            temperature: params.temperature,
            feature_version: FEATURE_VERSION.to_string(),
            trained_with: TrainedWith {
                method: config.method,
                reward_mode: config.reward_mode,
                seed: config.seed,
                epochs: config.epochs,
            },
        }
    }

    pub fn params(&self) -> Result<PolicyParams> {
        if self.feature_version != FEATURE_VERSION {
            return Err(Error::Invalid(format!(
                "policy uses features {}, this build computes {FEATURE_VERSION}",
                self.feature_version
            )));
        }
        PolicyParams::new(self.theta.clone(), self.temperature)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("policy serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PolicyFile =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        file.params()?;
        Ok(file)
    }
}

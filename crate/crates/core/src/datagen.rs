//! Offline preference data.
//!
//! At each state of a rollout dialogue a group of candidate questions is
//! drawn from several strategies, every candidate is answered by the oracle
//! from the same pre-turn belief, and its information gain becomes its
//! reward. Rewards are z-scored within the group.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefSnapshot, BeliefState, ConflictPolicy};
use crate::dialogue::{
    oracle_answer, oracle_rng, parse_answer, AnswerParser, GreedyEntropy, OraclePersona, Question,
    QuestionOrigin, INITIAL_REQUEST,
};
use crate::error::{Error, Result};
use crate::gateway::{self, Gateway};
use crate::schema::{Schema, Specification, WorldModel};
use crate::seed;

/// Spread below which a group's rewards count as constant.
pub const CONSTANT_GROUP_STD: f64 = 1e-12;

pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const DEFAULT_ROLLOUT_EPSILON: f64 = 0.2;

const OFF_TOPIC_QUESTIONS: &[&str] = &[
    "What software do you usually draw figures with?",
    "How long have you been working on this project?",
    "Is this figure for a journal or for a talk?",
    "Who else is on your team?",
    "Do you prefer to work on figures in the morning or the evening?",
    "Have you made a diagram like this before?",
    "What is the title of the article this is for?",
    "How many figures does the article have in total?",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Single-attribute questions, highest current entropy first.
    PerAttribute,
    /// Random questions about several attributes at once.
    MultiAttribute,
    /// Questions about attributes that are already settled (or nearly so).
    LowValue,
    /// Questions that target no attribute.
    OffTopic,
    /// Questions proposed by the text-generation gateway.
    Gateway,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateConfig {
    pub k: usize,
    pub strategies: Vec<Strategy>,
    pub min_targets: usize,
    pub max_targets: usize,
    pub allow_duplicates: bool,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_GROUP_SIZE,
            strategies: vec![
                Strategy::PerAttribute,
                Strategy::MultiAttribute,
                Strategy::LowValue,
                Strategy::OffTopic,
            ],
            min_targets: 2,
            max_targets: 4,
            allow_duplicates: false,
        }
    }
}

impl CandidateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config("candidate groups need k >= 2".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no candidate strategies enabled".into()));
        }
        if self.min_targets < 2 || self.max_targets < self.min_targets {
            return Err(Error::Config("multi-attribute target range must satisfy 2 <= min <= max".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub prompt: String,
    pub candidates: Vec<Question>,
    pub tags: Vec<Strategy>,
}

/// Yields successive distinct candidates for one strategy.
struct StrategyCursor {
    strategy: Strategy,
    emitted: usize,
    exhausted: bool,
}

fn same_question(a: &Question, b: &Question) -> bool {
    a.text == b.text && a.targets == b.targets
}

fn next_candidate(
    cursor: &mut StrategyCursor,
    belief: &BeliefState,
    schema: &Schema,
    config: &CandidateConfig,
    taken: &[Question],
    gateway: Option<&Gateway>,
    history: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Question>> {
    let fresh = |q: &Question| !taken.iter().any(|t| same_question(t, q));
    let single = |id: &str| Question::about(schema, &[id.to_string()], QuestionOrigin::Template);
    let by_entropy = |desc: bool| {
        let mut attrs: Vec<(usize, f64)> = belief
            .attributes()
            .iter()
            .enumerate()
            .filter(|(_, a)| !a.is_resolved())
            .map(|(i, a)| (i, a.entropy()))
            .collect();
        attrs.sort_by(|x, y| {
            let ord = x.1.total_cmp(&y.1);
            (if desc { ord.reverse() } else { ord }).then(x.0.cmp(&y.0))
        });
        attrs
    };

    let found = match cursor.strategy {
        Strategy::PerAttribute => by_entropy(true)
            .into_iter()
            .map(|(i, _)| single(&belief.attributes()[i].id))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .find(|q| fresh(q)),
        Strategy::LowValue => {
            let mut pool: Vec<String> = belief.resolved();
            pool.shuffle(rng);
            pool.extend(by_entropy(false).into_iter().map(|(i, _)| belief.attributes()[i].id.clone()));
            pool.iter()
                .map(|id| single(id))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .find(|q| fresh(q))
        }
        Strategy::MultiAttribute => {
            let n = schema.len();
            let hi = config.max_targets.min(n);
            let lo = config.min_targets.min(hi);
            let mut out = None;
            if lo >= 2 {
                for _ in 0..64 {
                    let size = rng.gen_range(lo..=hi);
                    let mut idx: Vec<usize> =
                        rand::seq::index::sample(rng, n, size).into_iter().collect();
                    idx.sort_unstable();
                    let targets: Vec<String> =
                        idx.iter().map(|&i| schema.attributes[i].id.clone()).collect();
                    let q = Question::about(schema, &targets, QuestionOrigin::Template)?;
                    if fresh(&q) {
                        out = Some(q);
                        break;
                    }
                }
            }
            out
        }
        Strategy::OffTopic => {
            let mut texts: Vec<&str> = OFF_TOPIC_QUESTIONS.to_vec();
            texts.shuffle(rng);
            texts.into_iter().map(Question::off_topic).find(|q| fresh(q))
        }
        Strategy::Gateway => match gateway {
            None => None,
            Some(gw) => gw
                .propose_question(gateway::prompts::SOCRATIC_FEW_SHOT_V1, history, schema)?
                .filter(|q| fresh(q)),
        },
    };
    if found.is_none() {
        cursor.exhausted = true;
    } else {
        cursor.emitted += 1;
    }
    Ok(found)
}

/// Draws `config.k` distinct candidates, round-robin over the enabled
/// strategies so each contributes at least once when it can. The final
/// order is shuffled so position carries no information.
pub fn generate_candidates(
    belief: &BeliefState,
    schema: &Schema,
    config: &CandidateConfig,
    prompt: String,
    gateway: Option<&Gateway>,
    rng: &mut ChaCha8Rng,
) -> Result<CandidateSet> {
    config.validate()?;
    let mut cursors: Vec<StrategyCursor> = config
        .strategies
        .iter()
        .map(|&strategy| StrategyCursor {
            strategy,
            emitted: 0,
            exhausted: false,
        })
        .collect();
    let mut picked: Vec<(Question, Strategy)> = Vec::with_capacity(config.k);
    let mut slot = 0;
    while picked.len() < config.k {
        if cursors.iter().all(|c| c.exhausted) {
            if !config.allow_duplicates || picked.is_empty() {
                return Err(Error::Config(format!(
                    "only {} distinct candidates available, k = {}",
                    picked.len(),
                    config.k
                )));
            }
            let dup = picked[picked.len() % picked.len().max(1)].clone();
            picked.push(dup);
            continue;
        }
        let cursor = &mut cursors[slot % config.strategies.len()];
        slot += 1;
        if cursor.exhausted {
            continue;
        }
        let taken: Vec<Question> = picked.iter().map(|(q, _)| q.clone()).collect();
        if let Some(q) = next_candidate(cursor, belief, schema, config, &taken, gateway, &prompt, rng)? {
            picked.push((q, cursor.strategy));
        }
    }
    picked.shuffle(rng);
    let (candidates, tags) = picked.into_iter().unzip();
    Ok(CandidateSet {
        prompt,
        candidates,
        tags,
    })
}

/// `(R_i - mean) / std` with the population standard deviation; all zeros
/// when the rewards are constant.
pub fn zscore_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Invalid("z-scoring needs at least two rewards".into()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < CONSTANT_GROUP_STD {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMeta {
    pub dialogue_id: String,
    pub turn: usize,
    pub ground_truth_id: String,
    pub belief_ref: String,
    /// Targets of every response, aligned with `responses`.
    pub targets: Vec<Vec<String>>,
    pub strategies: Vec<Strategy>,
    /// Number of attributes each response's answer constrained.
    pub slot_count: Vec<f64>,
    pub belief: BeliefSnapshot,
}

/// One training sample: a prompt, k candidate questions and their rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceGroup {
    pub prompt: String,
    pub responses: Vec<String>,
    pub reward: Vec<f64>,
    pub advantage: Vec<f64>,
    pub meta: GroupMeta,
}

impl PreferenceGroup {
    pub fn k(&self) -> usize {
        self.responses.len()
    }

    pub fn is_constant(&self) -> bool {
        self.advantage.iter().all(|a| *a == 0.0)
    }
}

/// Identifies where a group came from.
#[derive(Clone, Debug)]
pub struct GroupContext<'a> {
    pub dialogue_id: &'a str,
    pub ground_truth_id: &'a str,
    pub turn: usize,
    pub dialogue_seed: u64,
}

/// Answers every candidate from the same belief (the belief is not advanced)
/// and scores it by the entropy it removes.
pub fn score_group(
    set: &CandidateSet,
    persona: &OraclePersona,
    schema: &Schema,
    ground_truth: &Specification,
    belief: &BeliefState,
    context: &GroupContext<'_>,
) -> Result<PreferenceGroup> {
    let group_seed = seed::derive(context.dialogue_seed, "group", context.turn as u64);
    let mut rewards = Vec::with_capacity(set.candidates.len());
    let mut slots = Vec::with_capacity(set.candidates.len());
    for (j, q) in set.candidates.iter().enumerate() {
        let mut rng = oracle_rng(persona, group_seed, j);
        let answer = oracle_answer(persona, schema, ground_truth, q, &mut rng)?;
        let evidence = parse_answer(AnswerParser::Structured, schema, q, &answer)?;
        let (_, record) = belief.apply_evidence_with(&evidence, ConflictPolicy::Strict)?;
        rewards.push(round6(record.ig_bits));
        slots.push(evidence.constraints.len() as f64);
    }
    let advantage = zscore_advantages(&rewards)?;
    Ok(PreferenceGroup {
        prompt: set.prompt.clone(),
        responses: set.candidates.iter().map(|q| q.text.clone()).collect(),
        reward: rewards,
        advantage,
        meta: GroupMeta {
            dialogue_id: context.dialogue_id.to_string(),
            turn: context.turn,
            ground_truth_id: context.ground_truth_id.to_string(),
            belief_ref: format!("{}/t{}", context.dialogue_id, context.turn),
            targets: set.candidates.iter().map(|q| q.targets.clone()).collect(),
            strategies: set.tags.clone(),
            slot_count: slots,
            belief: belief.snapshot(),
        },
    })
}

/// Picks the question that actually advances a data-generation dialogue.
pub trait Rollout: Sync {
    fn choose(
        &self,
        set: &CandidateSet,
        belief: &BeliefState,
        schema: &Schema,
        rng: &mut ChaCha8Rng,
    ) -> Result<Question>;
}

/// Greedy-entropy question, or a uniformly drawn candidate with probability
/// `epsilon`.
#[derive(Clone, Copy, Debug)]
pub struct EpsilonGreedy {
    pub epsilon: f64,
}

impl Rollout for EpsilonGreedy {
    fn choose(
        &self,
        set: &CandidateSet,
        belief: &BeliefState,
        schema: &Schema,
        rng: &mut ChaCha8Rng,
    ) -> Result<Question> {
        if rng.gen::<f64>() < self.epsilon {
            return Ok(set.candidates[rng.gen_range(0..set.candidates.len())].clone());
        }
        match GreedyEntropy::best_attribute(belief) {
            Some(id) => Question::about(schema, &[id], QuestionOrigin::Template),
            None => Ok(set.candidates[0].clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatagenConfig {
    pub persona: OraclePersona,
    pub candidates: CandidateConfig,
    /// Groups kept per dialogue; `None` keeps one per turn.
    pub groups_per_dialogue: Option<usize>,
    /// Probability that the rollout follows a random candidate instead of
    /// the greedy-entropy question.
    pub rollout_epsilon: f64,
    pub tau: f64,
    pub max_turns: usize,
    pub seed: u64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            persona: OraclePersona::expert(),
            candidates: CandidateConfig::default(),
            groups_per_dialogue: None,
            rollout_epsilon: DEFAULT_ROLLOUT_EPSILON,
            tau: crate::dialogue::DEFAULT_TAU,
            max_turns: crate::dialogue::DEFAULT_MAX_TURNS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatagenStats {
    pub dialogues: usize,
    pub groups: usize,
    pub constant_groups: usize,
    pub mean_best_reward: f64,
    pub mean_reward: f64,
    /// Count of rewards per 1-bit bin, keyed by the bin's lower edge.
    pub reward_histogram: BTreeMap<u32, usize>,
}

impl DatagenStats {
    pub fn from_groups(dialogues: usize, groups: &[PreferenceGroup]) -> Self {
        let mut stats = DatagenStats {
            dialogues,
            groups: groups.len(),
            ..Default::default()
        };
        let mut total = 0.0;
        let mut count = 0usize;
        for g in groups {
            if g.is_constant() {
                stats.constant_groups += 1;
            }
            stats.mean_best_reward += g.reward.iter().copied().fold(0.0, f64::max);
            for r in &g.reward {
                *stats.reward_histogram.entry(r.floor().max(0.0) as u32).or_default() += 1;
                total += r;
                count += 1;
            }
        }
        if !groups.is_empty() {
            stats.mean_best_reward /= groups.len() as f64;
        }
        if count > 0 {
            stats.mean_reward = total / count as f64;
        }
        stats
    }
}

fn history_line(history: &mut String, role: &str, text: &str) {
    history.push('\n');
    history.push_str(role);
    history.push_str(": ");
    history.push_str(text);
}

/// Rolls one dialogue and returns the groups harvested along it.
pub fn dialogue_groups(
    schema: &Schema,
    world_model: &WorldModel,
    ground_truth: &Specification,
    ground_truth_id: &str,
    dialogue_index: usize,
    config: &DatagenConfig,
    rollout: &dyn Rollout,
    gateway: Option<&Gateway>,
) -> Result<Vec<PreferenceGroup>> {
    let dialogue_seed = seed::derive(config.seed, "datagen", dialogue_index as u64);
    let dialogue_id = format!("d{dialogue_index:05}");
    let mut cand_rng = seed::rng(dialogue_seed, "candidates", 0);
    let mut rollout_rng = seed::rng(dialogue_seed, "rollout", 0);

    let mut belief = BeliefState::init(schema, world_model)?;
    let mut history = format!("User: {INITIAL_REQUEST}");
    let mut groups = Vec::new();
    let mut turn = 0;
    while belief.total_entropy() > config.tau && turn < config.max_turns {
        let set = generate_candidates(
            &belief,
            schema,
            &config.candidates,
            history.clone(),
            gateway,
            &mut cand_rng,
        )?;
        let context = GroupContext {
            dialogue_id: &dialogue_id,
            ground_truth_id,
            turn,
            dialogue_seed,
        };
        groups.push(score_group(&set, &config.persona, schema, ground_truth, &belief, &context)?);

        let question = rollout.choose(&set, &belief, schema, &mut rollout_rng)?;
        let mut rng = oracle_rng(&config.persona, dialogue_seed, turn);
        let answer = oracle_answer(&config.persona, schema, ground_truth, &question, &mut rng)?;
        let evidence = parse_answer(AnswerParser::Structured, schema, &question, &answer)?;
        belief = belief.apply_evidence(&evidence)?.0;
        history_line(&mut history, "Assistant", &question.text);
        history_line(&mut history, "User", &answer.text);
        turn += 1;
    }

    if let Some(keep) = config.groups_per_dialogue {
        if keep < groups.len() {
            let mut pick_rng = seed::rng(dialogue_seed, "harvest", 0);
            let mut idx: Vec<usize> =
                rand::seq::index::sample(&mut pick_rng, groups.len(), keep).into_iter().collect();
            idx.sort_unstable();
            groups = idx.into_iter().map(|i| groups[i].clone()).collect();
        }
    }
    Ok(groups)
}

/// Harvests groups from one rollout per training specification. Dialogues
/// run in parallel; output is in dialogue order.
pub fn build_dataset(
    schema: &Schema,
    world_model: &WorldModel,
    train: &[Specification],
    config: &DatagenConfig,
    gateway: Option<&Gateway>,
) -> Result<(Vec<PreferenceGroup>, DatagenStats)> {
    let rollout = EpsilonGreedy {
        epsilon: config.rollout_epsilon,
    };
    build_dataset_with(schema, world_model, train, config, &rollout, gateway)
}

/// [`build_dataset`] with a caller-supplied rollout policy.
pub fn build_dataset_with(
    schema: &Schema,
    world_model: &WorldModel,
    train: &[Specification],
    config: &DatagenConfig,
    rollout: &dyn Rollout,
    gateway: Option<&Gateway>,
) -> Result<(Vec<PreferenceGroup>, DatagenStats)> {
    if train.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    config.persona.validate()?;
    config.candidates.validate()?;
    if !(0.0..=1.0).contains(&config.rollout_epsilon) {
        return Err(Error::Config("rollout epsilon must lie in [0, 1]".into()));
    }
    if config.max_turns == 0 {
        return Err(Error::Config("turn budget must be at least 1".into()));
    }
    let per_dialogue: Vec<Vec<PreferenceGroup>> = train
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            dialogue_groups(schema, world_model, spec, &format!("train-{i}"), i, config, rollout, gateway)
        })
        .collect::<Result<_>>()?;
    let groups: Vec<PreferenceGroup> = per_dialogue.into_iter().flatten().collect();
    let stats = DatagenStats::from_groups(train.len(), &groups);
    Ok((groups, stats))
}

pub fn to_jsonl(groups: &[PreferenceGroup]) -> String {
    let mut out = String::new();
    for g in groups {
        out.push_str(&serde_json::to_string(g).expect("group serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: impl AsRef<Path>, groups: &[PreferenceGroup]) -> Result<()> {
    let path = path.as_ref();
    fs::File::create(path)
        .and_then(|mut f| f.write_all(to_jsonl(groups).as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<PreferenceGroup>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: PreferenceGroup = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), lineno + 1), e))?;
        let k = g.responses.len();
        if g.reward.len() != k || g.advantage.len() != k || g.meta.targets.len() != k {
            return Err(Error::Invalid(format!(
                "{}:{}: group fields have mismatched lengths",
                path.display(),
                lineno + 1
            )));
        }
        out.push(g);
    }
    Ok(out)
}

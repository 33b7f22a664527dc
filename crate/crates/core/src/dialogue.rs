//! Simulated question/answer dialogues.
//!
//! A [`QuestionSelector`] asks about attributes, an oracle holding a
//! ground-truth [`Specification`] answers under an [`OraclePersona`], the
//! answer is parsed into [`Evidence`] and the belief is updated. Every turn's
//! reward is logged in a [`Transcript`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{
    BeliefSnapshot, BeliefState, ConflictPolicy, Evidence, Provenance, RevealModel, RewardRecord,
};
use crate::error::{Error, Result};
use crate::gateway::{self, Gateway};
use crate::schema::{Schema, Specification, WorldModel};
use crate::seed;

pub const INITIAL_REQUEST: &str = "I want to create a scientific diagram.";
pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_MAX_TURNS: usize = 30;

pub const DEFAULT_REVEAL_FRACTION: f64 = 0.7;
pub const DEFAULT_SUBSET_COARSENESS: usize = 2;
pub const DEFAULT_NOISE_RATE: f64 = 0.5;

const NOISE_SPANS: &[&str] = &[
    "By the way, I sketched a first version on a whiteboard last week.",
    "My coauthor is travelling, so I am deciding this alone.",
    "The submission deadline is next Friday.",
    "We used a similar figure in an older talk, but that file is lost.",
    "I usually work on this late in the evening.",
    "The journal template is a bit cramped.",
];

const OFF_TOPIC_REPLY: &str = "I'm not sure how that relates to the diagram.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionOrigin {
    Template,
    Policy,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Question {
    /// Attribute ids the question asks about; empty for off-topic questions.
    pub targets: Vec<String>,
    pub text: String,
    pub origin: QuestionOrigin,
}

impl Question {
    /// Templated question about `targets`, which must all exist in `schema`.
    pub fn about(schema: &Schema, targets: &[String], origin: QuestionOrigin) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Invalid("a templated question needs at least one target".into()));
        }
        let labels = targets
            .iter()
            .map(|id| {
                schema
                    .attribute(id)
                    .map(|a| a.label.as_str())
                    .ok_or_else(|| Error::UnknownAttribute(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let text = match labels.as_slice() {
            [one] => format!("What {one} would you like?"),
            [init @ .., last] => format!("Could you tell me the {} and the {last}?", init.join(", the ")),
            [] => unreachable!(),
        };
        Ok(Self {
            targets: targets.to_vec(),
            text,
            origin,
        })
    }

    pub fn off_topic(text: &str) -> Self {
        Self {
            targets: Vec::new(),
            text: text.to_string(),
            origin: QuestionOrigin::Template,
        }
    }

    pub fn is_off_topic(&self) -> bool {
        self.targets.is_empty()
    }

    fn validate(&self, schema: &Schema) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Invalid("question text is empty".into()));
        }
        for id in &self.targets {
            if schema.attribute(id).is_none() {
                return Err(Error::UnknownAttribute(id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Machine-readable content of the templated answer: attribute id to
    /// the revealed value(s), in domain order.
    pub revealed: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub noise_spans: Vec<String>,
}

impl Answer {
    /// The answer with irrelevant spans removed.
    pub fn without_noise(&self) -> Answer {
        let mut text = self.text.clone();
        for span in &self.noise_spans {
            text = text.replace(span, "");
        }
        Answer {
            text: text.split_whitespace().collect::<Vec<_>>().join(" "),
            revealed: self.revealed.clone(),
            noise_spans: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    /// Names the exact value of every targeted attribute.
    Expert,
    /// Answers vaguely: sometimes not at all, otherwise with a small set of
    /// candidate values that contains the true one.
    Novice,
    /// Expert answers padded with irrelevant remarks.
    Noisy,
}

impl std::str::FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(OracleKind::Expert),
            "novice" => Ok(OracleKind::Novice),
            "noisy" => Ok(OracleKind::Noisy),
            other => Err(Error::Config(format!("unknown oracle persona `{other}`"))),
        }
    }
}

impl std::fmt::Display for OracleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OracleKind::Expert => "expert",
            OracleKind::Novice => "novice",
            OracleKind::Noisy => "noisy",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OraclePersona {
    pub kind: OracleKind,
    pub reveal_fraction: f64,
    pub subset_coarseness: usize,
    pub noise_rate: f64,
    pub seed: u64,
}

impl OraclePersona {
    pub fn expert() -> Self {
        Self {
            kind: OracleKind::Expert,
            reveal_fraction: 1.0,
            subset_coarseness: 1,
            noise_rate: 0.0,
            seed: 0,
        }
    }

    pub fn novice(reveal_fraction: f64, subset_coarseness: usize) -> Self {
        Self {
            kind: OracleKind::Novice,
            reveal_fraction,
            subset_coarseness,
            ..Self::expert()
        }
    }

    pub fn noisy(noise_rate: f64) -> Self {
        Self {
            kind: OracleKind::Noisy,
            noise_rate,
            ..Self::expert()
        }
    }

    pub fn of_kind(kind: OracleKind) -> Self {
        match kind {
            OracleKind::Expert => Self::expert(),
            OracleKind::Novice => Self::novice(DEFAULT_REVEAL_FRACTION, DEFAULT_SUBSET_COARSENESS),
            OracleKind::Noisy => Self::noisy(DEFAULT_NOISE_RATE),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.reveal_fraction) || !unit(self.noise_rate) {
            return Err(Error::Config("persona rates must lie in [0, 1]".into()));
        }
        if self.kind == OracleKind::Novice {
            if self.reveal_fraction <= 0.0 {
                return Err(Error::Config(
                    "a novice oracle with reveal fraction 0 never answers; dialogues would not terminate"
                        .into(),
                ));
            }
            if self.subset_coarseness == 0 {
                return Err(Error::Config("subset coarseness must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// The answer distribution this persona induces on one attribute.
    pub fn reveal_model(&self) -> RevealModel {
        match self.kind {
            OracleKind::Expert | OracleKind::Noisy => RevealModel::FULL,
            OracleKind::Novice => RevealModel {
                reveal_fraction: self.reveal_fraction,
                subset_size: self.subset_coarseness,
            },
        }
    }
}

/// Generator for the oracle's randomness on turn `turn` of the dialogue seeded with `dialogue_seed`.
pub fn oracle_rng(persona: &OraclePersona, dialogue_seed: u64, turn: usize) -> ChaCha8Rng {
    seed::rng(seed::derive(dialogue_seed, "oracle", persona.seed), "turn", turn as u64)
}

/// The oracle's reply to `question` given the ground truth.
pub fn oracle_answer(
    persona: &OraclePersona,
    schema: &Schema,
    ground_truth: &Specification,
    question: &Question,
    rng: &mut ChaCha8Rng,
) -> Result<Answer> {
    question.validate(schema)?;
    let mut revealed = BTreeMap::new();
    let mut sentences = Vec::new();

    if question.is_off_topic() {
        sentences.push(OFF_TOPIC_REPLY.to_string());
    }
    for id in &question.targets {
        let attr = schema.attribute(id).expect("validated");
        let truth = ground_truth.get(id).ok_or_else(|| Error::Attribute {
            attribute: id.clone(),
            reason: "ground truth has no value".into(),
        })?;
        let truth_idx = attr.index_of(truth).ok_or_else(|| Error::UnknownValue {
            attribute: id.clone(),
            value: truth.to_string(),
        })?;
        match persona.kind {
            OracleKind::Expert | OracleKind::Noisy => {
                sentences.push(format!("The {} should be {}.", attr.label, truth));
                revealed.insert(id.clone(), vec![truth.to_string()]);
            }
            OracleKind::Novice => {
                let model = persona.reveal_model();
                if rng.gen::<f64>() < persona.reveal_fraction {
                    let size = model.effective_size(attr.domain.len());
                    let others: Vec<usize> =
                        (0..attr.domain.len()).filter(|&i| i != truth_idx).collect();
                    let mut picked: Vec<usize> = sample(rng, others.len(), size - 1)
                        .into_iter()
                        .map(|i| others[i])
                        .collect();
                    picked.push(truth_idx);
                    picked.sort_unstable();
                    let values: Vec<String> =
                        picked.iter().map(|&i| attr.domain[i].clone()).collect();
                    sentences.push(if values.len() == 1 {
                        format!("I think the {} should be {}.", attr.label, values[0])
                    } else {
                        format!(
                            "For the {} maybe something like {}.",
                            attr.label,
                            values.join(" or ")
                        )
                    });
                    revealed.insert(id.clone(), values);
                } else {
                    sentences.push(format!("I'm not sure about the {} yet.", attr.label));
                }
            }
        }
    }

    let mut noise_spans = Vec::new();
    if persona.kind == OracleKind::Noisy && rng.gen::<f64>() < persona.noise_rate {
        let span = NOISE_SPANS[rng.gen_range(0..NOISE_SPANS.len())].to_string();
        let at = rng.gen_range(0..=sentences.len());
        sentences.insert(at, span.clone());
        noise_spans.push(span);
    }

    Ok(Answer {
        text: sentences.join(" "),
        revealed,
        noise_spans,
    })
}

/// How answers are turned into evidence.
#[derive(Clone, Copy)]
pub enum AnswerParser<'a> {
    /// Read the answer's machine-readable reveals.
    Structured,
    /// Ask a text-generation model to extract values from the answer text.
    Gateway(&'a Gateway),
}

pub fn parse_answer(
    parser: AnswerParser<'_>,
    schema: &Schema,
    question: &Question,
    answer: &Answer,
) -> Result<Evidence> {
    match parser {
        AnswerParser::Structured => {
            let mut evidence = Evidence::new(Provenance::Oracle);
            for (id, values) in &answer.revealed {
                evidence = evidence.with(id, values.iter().map(String::as_str));
            }
            evidence.validate(schema)?;
            Ok(evidence)
        }
        AnswerParser::Gateway(gw) => gw.parse_freetext_answer(question, &answer.text, schema),
    }
}

/// Chooses the next question. `Ok(None)` ends the dialogue.
pub trait QuestionSelector {
    fn propose(
        &mut self,
        belief: &BeliefState,
        schema: &Schema,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Question>>;
}

/// Asks about the single unresolved attribute with the highest current
/// entropy (earliest attribute on ties).
#[derive(Clone, Copy, Debug, Default)]
pub struct GreedyEntropy;

impl GreedyEntropy {
    pub fn best_attribute(belief: &BeliefState) -> Option<String> {
        let mut best: Option<(&str, f64)> = None;
        for attr in belief.attributes().iter().filter(|a| !a.is_resolved()) {
            let h = attr.entropy();
            if best.is_none_or(|(_, b)| h > b) {
                best = Some((&attr.id, h));
            }
        }
        best.map(|(id, _)| id.to_string())
    }
}

impl QuestionSelector for GreedyEntropy {
    fn propose(
        &mut self,
        belief: &BeliefState,
        schema: &Schema,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Option<Question>> {
        Self::best_attribute(belief)
            .map(|id| Question::about(schema, &[id], QuestionOrigin::Template))
            .transpose()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EntropyThreshold,
    TurnBudget,
    PolicyStop,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::EntropyThreshold => "entropy-threshold",
            StopReason::TurnBudget => "turn-budget",
            StopReason::PolicyStop => "policy-stop",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueConfig {
    /// Stop once total entropy is at or below this many bits.
    pub tau: f64,
    /// `usize::MAX` for no budget.
    pub max_turns: usize,
    pub seed: u64,
    pub conflict: ConflictPolicy,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            max_turns: DEFAULT_MAX_TURNS,
            seed: 0,
            conflict: ConflictPolicy::Strict,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub question: Question,
    pub answer: Answer,
    pub evidence: Evidence,
    pub reward: RewardRecord,
    /// Belief after this turn's update.
    pub belief: BeliefSnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalValue {
    pub value: String,
    pub probability: f64,
    pub resolved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub dialogue_id: String,
    pub initial_request: String,
    pub persona: OracleKind,
    pub ground_truth_id: Option<String>,
    pub initial_entropy: f64,
    pub turns: Vec<Turn>,
    pub final_entropy: f64,
    /// Resolved values, or the most probable value for unresolved attributes.
    pub final_specification: IndexMap<String, FinalValue>,
    pub stop_reason: StopReason,
}

impl Transcript {
    pub fn cumulative_ig(&self) -> f64 {
        self.turns.iter().map(|t| t.reward.ig_bits).sum()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.turns.iter().map(|t| t.reward.ig_bits).collect()
    }

    /// Cumulative information after each turn.
    pub fn ig_curve(&self) -> Vec<f64> {
        self.turns
            .iter()
            .scan(0.0, |acc, t| {
                *acc += t.reward.ig_bits;
                Some(*acc)
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |record: TranscriptRecord<'_>| {
            out.push_str(&serde_json::to_string(&record).expect("transcript serializes"));
            out.push('\n');
        };
        push(TranscriptRecord::Header {
            dialogue_id: self.dialogue_id.clone(),
            initial_request: self.initial_request.clone(),
            persona: self.persona,
            ground_truth_id: self.ground_truth_id.clone(),
            initial_entropy: self.initial_entropy,
        });
        for (i, turn) in self.turns.iter().enumerate() {
            push(TranscriptRecord::Turn { index: i + 1, turn: std::borrow::Cow::Borrowed(turn) });
        }
        push(TranscriptRecord::Footer {
            stop_reason: self.stop_reason,
            final_entropy: self.final_entropy,
            cumulative_ig: self.cumulative_ig(),
            final_specification: self.final_specification.clone(),
        });
        out
    }

    /// Reads every transcript in a JSONL stream of header/turn/footer records.
    pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<Transcript>> {
        let mut out = Vec::new();
        let mut current: Option<Transcript> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<transcripts>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TranscriptRecord<'static> = serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("transcript line {}", lineno + 1), e))?;
            match record {
                TranscriptRecord::Header {
                    dialogue_id,
                    initial_request,
                    persona,
                    ground_truth_id,
                    initial_entropy,
                } => {
                    if current.is_some() {
                        return Err(Error::Invalid(format!("line {}: header inside a transcript", lineno + 1)));
                    }
                    current = Some(Transcript {
                        dialogue_id,
                        initial_request,
                        persona,
                        ground_truth_id,
                        initial_entropy,
                        turns: Vec::new(),
                        final_entropy: initial_entropy,
                        final_specification: IndexMap::new(),
                        stop_reason: StopReason::PolicyStop,
                    });
                }
                TranscriptRecord::Turn { turn, .. } => current
                    .as_mut()
                    .ok_or_else(|| Error::Invalid(format!("line {}: turn before header", lineno + 1)))?
                    .turns
                    .push(turn.into_owned()),
                TranscriptRecord::Footer {
                    stop_reason,
                    final_entropy,
                    final_specification,
                    ..
                } => {
                    let mut t = current.take().ok_or_else(|| {
                        Error::Invalid(format!("line {}: footer before header", lineno + 1))
                    })?;
                    t.stop_reason = stop_reason;
                    t.final_entropy = final_entropy;
                    t.final_specification = final_specification;
                    out.push(t);
                }
            }
        }
        if current.is_some() {
            return Err(Error::Invalid("transcript stream ends without a footer".into()));
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum TranscriptRecord<'a> {
    Header {
        dialogue_id: String,
        initial_request: String,
        persona: OracleKind,
        ground_truth_id: Option<String>,
        initial_entropy: f64,
    },
    Turn {
        index: usize,
        #[serde(flatten)]
        turn: std::borrow::Cow<'a, Turn>,
    },
    Footer {
        stop_reason: StopReason,
        final_entropy: f64,
        cumulative_ig: f64,
        final_specification: IndexMap<String, FinalValue>,
    },
}

fn final_specification(belief: &BeliefState) -> IndexMap<String, FinalValue> {
    belief
        .attributes()
        .iter()
        .map(|a| {
            let (value, probability) = a.mode();
            (
                a.id.clone(),
                FinalValue {
                    value: value.to_string(),
                    probability,
                    resolved: a.is_resolved(),
                },
            )
        })
        .collect()
}

/// Everything one dialogue needs besides the selector.
pub struct DialogueSetup<'a> {
    pub schema: &'a Schema,
    pub world_model: &'a WorldModel,
    pub persona: OraclePersona,
    pub parser: AnswerParser<'a>,
    pub config: DialogueConfig,
}

/// Runs one dialogue to its stopping rule.
pub fn run_dialogue(
    selector: &mut dyn QuestionSelector,
    setup: &DialogueSetup<'_>,
    ground_truth: &Specification,
    dialogue_id: &str,
) -> Result<Transcript> {
    let DialogueSetup {
        schema,
        world_model,
        persona,
        parser,
        ref config,
    } = *setup;
    if config.max_turns == 0 {
        return Err(Error::Config("turn budget must be at least 1".into()));
    }
    persona.validate()?;
    ground_truth.validate(schema)?;

    let mut belief = BeliefState::init(schema, world_model)?;
    let initial_entropy = belief.total_entropy();
    let mut selector_rng = seed::rng(config.seed, "selector", 0);
    let mut turns = Vec::new();

    let stop_reason = loop {
        if belief.total_entropy() <= config.tau {
            break StopReason::EntropyThreshold;
        }
        if turns.len() >= config.max_turns {
            break StopReason::TurnBudget;
        }
        let Some(question) = selector.propose(&belief, schema, &mut selector_rng)? else {
            break StopReason::PolicyStop;
        };
        let mut rng = oracle_rng(&persona, config.seed, turns.len());
        let answer = oracle_answer(&persona, schema, ground_truth, &question, &mut rng)?;
        let evidence = parse_answer(parser, schema, &question, &answer)?;
        let (next, reward) = belief.apply_evidence_with(&evidence, config.conflict)?;
        if reward.partial {
            log::debug!("{dialogue_id}: turn {} used subset evidence", reward.turn);
        }
        belief = next;
        turns.push(Turn {
            question,
            answer,
            evidence,
            reward,
            belief: belief.snapshot(),
        });
    };

    Ok(Transcript {
        dialogue_id: dialogue_id.to_string(),
        initial_request: INITIAL_REQUEST.to_string(),
        persona: persona.kind,
        ground_truth_id: None,
        initial_entropy,
        final_entropy: belief.total_entropy(),
        final_specification: final_specification(&belief),
        turns,
        stop_reason,
    })
}

/// Final belief of a transcript with no turns: the prior's modes.
pub fn prior_specification(
    schema: &Schema,
    world_model: &WorldModel,
) -> Result<IndexMap<String, FinalValue>> {
    Ok(final_specification(&BeliefState::init(schema, world_model)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsolidationMode {
    Structured,
    Gateway,
}

fn structured_description(transcript: &Transcript) -> String {
    let resolved = transcript
        .final_specification
        .values()
        .filter(|v| v.resolved)
        .count();
    let mut out = format!(
        "Diagram specification ({} attributes, {} resolved):\n",
        transcript.final_specification.len(),
        resolved
    );
    for (id, v) in &transcript.final_specification {
        if v.resolved {
            let _ = writeln!(out, "- {id}: {}", v.value);
        } else {
            let _ = writeln!(
                out,
                "- {id}: unspecified (best guess: {}, p={:.3})",
                v.value, v.probability
            );
        }
    }
    out
}

/// Final description of what the dialogue established. Gateway mode asks
/// the model for prose and appends the structured block verbatim; it falls
/// back to the structured block alone if the gateway fails.
pub fn consolidate_description(
    transcript: &Transcript,
    mode: ConsolidationMode,
    gateway: Option<&Gateway>,
) -> String {
    let block = structured_description(transcript);
    match (mode, gateway) {
        (ConsolidationMode::Structured, _) => block,
        (ConsolidationMode::Gateway, None) => {
            log::warn!("gateway consolidation requested without a gateway; using the template");
            block
        }
        (ConsolidationMode::Gateway, Some(gw)) => {
            let prompt =
                gateway::prompts::render(gateway::prompts::CONSOLIDATE_V1, &[("specification", &block)]);
            match gw.complete(&prompt) {
                Ok(prose) if prose.trim().is_empty() => block,
                Ok(prose) => format!("{}\n\n{block}", prose.trim_end()),
                Err(e) => {
                    log::warn!("gateway consolidation failed ({e}); using the template");
                    block
                }
            }
        }
    }
}

//! Process and outcome metrics over finished dialogues.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dialogue::{
    run_dialogue, AnswerParser, DialogueConfig, DialogueSetup, OracleKind, OraclePersona,
    QuestionSelector, StopReason, Transcript,
};
use crate::error::{Error, Result};
use crate::schema::{Schema, Specification, WorldModel};
use crate::seed;

pub const DEFAULT_CHECKPOINTS: [usize; 5] = [1, 5, 10, 15, 20];

/// Tolerance on total-IG parity across personas.
pub const PARITY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy_id: String,
    pub persona: OracleKind,
    pub n_dialogues: usize,
    pub mean_turns: f64,
    pub mean_total_ig: f64,
    pub mean_initial_entropy: f64,
    /// Mean cumulative bits after each checkpoint turn.
    pub ig_at_turn: BTreeMap<usize, f64>,
    pub stop_reasons: BTreeMap<StopReason, usize>,
}

/// Cumulative IG after `turn` turns, flat once the dialogue has ended.
pub fn cumulative_at(transcript: &Transcript, turn: usize) -> f64 {
    transcript
        .turns
        .iter()
        .take(turn)
        .map(|t| t.reward.ig_bits)
        .sum()
}

pub fn summarize_runs(
    policy_id: &str,
    transcripts: &[Transcript],
    checkpoints: &[usize],
) -> Result<RunSummary> {
    let first = transcripts
        .first()
        .ok_or_else(|| Error::Invalid("no transcripts to summarize".into()))?;
    if transcripts.iter().any(|t| t.persona != first.persona) {
        return Err(Error::Invalid("transcripts mix personas".into()));
    }
    let n = transcripts.len() as f64;
    let mean = |f: &dyn Fn(&Transcript) -> f64| transcripts.iter().map(f).sum::<f64>() / n;
    let mut stop_reasons = BTreeMap::new();
    for t in transcripts {
        *stop_reasons.entry(t.stop_reason).or_default() += 1;
    }
    Ok(RunSummary {
        policy_id: policy_id.to_string(),
        persona: first.persona,
        n_dialogues: transcripts.len(),
        mean_turns: mean(&|t| t.turns.len() as f64),
        mean_total_ig: mean(&|t| t.cumulative_ig()),
        mean_initial_entropy: mean(&|t| t.initial_entropy),
        ig_at_turn: checkpoints
            .iter()
            .map(|&c| (c, mean(&|t| cumulative_at(t, c))))
            .collect(),
        stop_reasons,
    })
}

/// Rolls one dialogue per evaluation specification. Dialogue `i` gets the
/// same seed under every persona and policy, so runs pair up.
pub fn evaluate<S, F>(
    make_selector: F,
    schema: &Schema,
    world_model: &WorldModel,
    persona: &OraclePersona,
    specs: &[Specification],
    config: &DialogueConfig,
) -> Result<Vec<Transcript>>
where
    S: QuestionSelector,
    F: Fn() -> S + Sync,
{
    if specs.is_empty() {
        return Err(Error::Invalid("evaluation split is empty".into()));
    }
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let setup = DialogueSetup {
                schema,
                world_model,
                persona: persona.clone(),
                parser: AnswerParser::Structured,
                config: DialogueConfig {
                    seed: seed::derive(config.seed, "eval", i as u64),
                    ..config.clone()
                },
            };
            let mut selector = make_selector();
            let mut t = run_dialogue(&mut selector, &setup, spec, &format!("eval-{i:05}"))?;
            t.ground_truth_id = Some(format!("eval-{i}"));
            Ok(t)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonaDelta {
    pub persona: OracleKind,
    pub delta_turns: f64,
    pub delta_total_ig: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonaComparison {
    pub summaries: Vec<RunSummary>,
    /// Differences from the first persona.
    pub deltas: Vec<PersonaDelta>,
    /// Largest per-dialogue total-IG gap between any persona and the first.
    pub max_parity_gap: f64,
    /// True when every dialogue of every persona ran to the entropy threshold.
    pub all_completed: bool,
}

/// Runs the same policy under several personas on paired ground truths.
/// Fails if dialogues that all completed disagree on total IG.
pub fn compare_personas<S, F>(
    policy_id: &str,
    make_selector: F,
    personas: &[OraclePersona],
    schema: &Schema,
    world_model: &WorldModel,
    specs: &[Specification],
    config: &DialogueConfig,
    checkpoints: &[usize],
) -> Result<(PersonaComparison, Vec<Vec<Transcript>>)>
where
    S: QuestionSelector,
    F: Fn() -> S + Sync,
{
    if personas.is_empty() {
        return Err(Error::Invalid("no personas to compare".into()));
    }
    let runs: Vec<Vec<Transcript>> = personas
        .iter()
        .map(|p| evaluate(&make_selector, schema, world_model, p, specs, config))
        .collect::<Result<_>>()?;
    let summaries: Vec<RunSummary> = runs
        .iter()
        .map(|r| summarize_runs(policy_id, r, checkpoints))
        .collect::<Result<_>>()?;
    let base = &summaries[0];
    let deltas = summaries
        .iter()
        .skip(1)
        .map(|s| PersonaDelta {
            persona: s.persona,
            delta_turns: s.mean_turns - base.mean_turns,
            delta_total_ig: s.mean_total_ig - base.mean_total_ig,
        })
        .collect();
    let mut gap = 0.0f64;
    for run in &runs[1..] {
        for (a, b) in runs[0].iter().zip(run) {
            gap = gap.max((a.cumulative_ig() - b.cumulative_ig()).abs());
        }
    }
    let all_completed = runs
        .iter()
        .flatten()
        .all(|t| t.stop_reason == StopReason::EntropyThreshold);
    if all_completed && gap > PARITY_TOLERANCE {
        return Err(Error::Invalid(format!(
            "completed dialogues disagree on total IG by {gap:.3e} bits"
        )));
    }
    Ok((
        PersonaComparison {
            summaries,
            deltas,
            max_parity_gap: gap,
            all_completed,
        },
        runs,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Win,
    Tie,
    Loss,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub item_id: String,
    pub judge_id: String,
    pub renderer_id: String,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JudgmentSet {
    pub records: Vec<Judgment>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
pub struct OutcomeCounts {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.wins + self.ties + self.losses
    }
}

impl JudgmentSet {
    pub fn from_counts(wins: usize, ties: usize, losses: usize) -> Self {
        let mut records = Vec::with_capacity(wins + ties + losses);
        for (outcome, n) in [(Outcome::Win, wins), (Outcome::Tie, ties), (Outcome::Loss, losses)] {
            for _ in 0..n {
                let i = records.len();
                records.push(Judgment {
                    item_id: format!("item-{i}"),
                    judge_id: "j0".into(),
                    renderer_id: "r0".into(),
                    outcome,
                });
            }
        }
        Self { records }
    }

    pub fn counts(&self) -> OutcomeCounts {
        let mut c = OutcomeCounts::default();
        for r in &self.records {
            match r.outcome {
                Outcome::Win => c.wins += 1,
                Outcome::Tie => c.ties += 1,
                Outcome::Loss => c.losses += 1,
            }
        }
        c
    }

    pub fn from_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let records = r.deserialize().collect::<std::result::Result<Vec<Judgment>, _>>()?;
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(file)
    }
}

/// How ties enter the numerator. The denominator always counts every
/// judgment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinProtocol {
    Win,
    WtHalf,
    WtFull,
}

impl std::str::FromStr for WinProtocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "win" => Ok(Self::Win),
            "wt_half" => Ok(Self::WtHalf),
            "wt_full" => Ok(Self::WtFull),
            other => Err(Error::Config(format!("unknown win-rate protocol: {other}"))),
        }
    }
}

impl std::fmt::Display for WinProtocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Win => "win",
            Self::WtHalf => "wt_half",
            Self::WtFull => "wt_full",
        })
    }
}

pub fn win_rate(judgments: &JudgmentSet, protocol: WinProtocol) -> Result<f64> {
    let c = judgments.counts();
    let n = c.total();
    if n == 0 {
        return Err(Error::Invalid("empty judgment set".into()));
    }
    let tie_weight = match protocol {
        WinProtocol::Win => 0.0,
        WinProtocol::WtHalf => 0.5,
        WinProtocol::WtFull => 1.0,
    };
    Ok((c.wins as f64 + tie_weight * c.ties as f64) / n as f64)
}

fn fmt_bits(x: f64) -> String {
    format!("{x:.2}")
}

/// Aligned text table: one row per summary, checkpoint columns last.
pub fn render_table(summaries: &[RunSummary]) -> String {
    let checkpoints: Vec<usize> = summaries
        .first()
        .map(|s| s.ig_at_turn.keys().copied().collect())
        .unwrap_or_default();
    let mut header = vec![
        "Model".to_string(),
        "Persona".to_string(),
        "Turns".to_string(),
        "Total IG (bits)".to_string(),
    ];
    header.extend(checkpoints.iter().map(|c| format!("Turn {c}")));
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let mut row = vec![
                s.policy_id.clone(),
                s.persona.to_string(),
                format!("{:.2}", s.mean_turns),
                fmt_bits(s.mean_total_ig),
            ];
            row.extend(checkpoints.iter().map(|c| fmt_bits(s.ig_at_turn[c])));
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].len())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i < 2 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in &rows {
        line(&mut out, r);
    }
    out
}

/// Plot-ready mean cumulative IG per turn: `policy,persona,turn,mean_cumulative_ig`.
pub fn ig_curve_csv(policy_id: &str, transcripts: &[Transcript], max_turn: usize) -> String {
    let mut out = String::new();
    if transcripts.is_empty() {
        return out;
    }
    let persona = transcripts[0].persona;
    let n = transcripts.len() as f64;
    for turn in 0..=max_turn {
        let m = transcripts.iter().map(|t| cumulative_at(t, turn)).sum::<f64>() / n;
        let _ = writeln!(out, "{policy_id},{persona},{turn},{m:.6}");
    }
    out
}

pub const IG_CURVE_HEADER: &str = "policy,persona,turn,mean_cumulative_ig\n";

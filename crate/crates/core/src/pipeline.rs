//! The end-to-end ablation: corpus, prior, preference data, trained
//! policies, a fixed-budget comparison and a persona suite.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{build_dataset, to_jsonl, DatagenConfig, DatagenStats, PreferenceGroup};
use crate::dialogue::{
    consolidate_description, ConsolidationMode, DialogueConfig, OraclePersona, Transcript,
};
use crate::error::{Error, Result};
use crate::eval::{
    compare_personas, evaluate, ig_curve_csv, render_table, summarize_runs, PersonaComparison,
    RunSummary, DEFAULT_CHECKPOINTS, IG_CURVE_HEADER,
};
use crate::gateway::{Gateway, GatewayConfig};
use crate::policy::{
    scored_groups, train_offline, Method, PolicyFile, PolicyParams, PolicySelector, RewardMode,
    TrainConfig, TrainReport,
};
use crate::schema::{estimate_prior, generate_corpus, GenConfig, Schema, Specification, WorldModel};
use crate::seed;

pub const UNIFORM_POLICY_ID: &str = "uniform-random";

/// One trained arm of the comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub id: String,
    pub method: Method,
    pub reward_mode: RewardMode,
}

impl Arm {
    fn new(id: &str, method: Method, reward_mode: RewardMode) -> Self {
        Self {
            id: id.into(),
            method,
            reward_mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
    pub alpha: f64,
    pub datagen: DatagenConfig,
    pub train: TrainConfig,
    pub arms: Vec<Arm>,
    /// Turn budget of the policy comparison.
    pub budget: usize,
    pub tau: f64,
    /// Arm whose policy runs the persona suite.
    pub persona_arm: String,
    pub personas: Vec<OraclePersona>,
    /// Turn cap for the persona suite, which otherwise runs to resolution.
    pub persona_max_turns: usize,
    pub persona_tau: f64,
    /// How many persona-suite transcripts get a consolidated description.
    pub descriptions: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_size: 200,
            eval_size: 200,
            alpha: 1.0,
            datagen: DatagenConfig::default(),
            train: TrainConfig::default(),
            arms: vec![
                Arm::new("entropy-grpo", Method::GrpoOffline, RewardMode::Entropy),
                Arm::new("slot-count-grpo", Method::GrpoOffline, RewardMode::SlotCount),
                Arm::new("entropy-sft", Method::Sft, RewardMode::Entropy),
                Arm::new("entropy-dpo", Method::Dpo, RewardMode::Entropy),
            ],
            budget: 10,
            tau: crate::dialogue::DEFAULT_TAU,
            persona_arm: "entropy-grpo".into(),
            personas: vec![
                OraclePersona::expert(),
                OraclePersona::novice(
                    crate::dialogue::DEFAULT_REVEAL_FRACTION,
                    crate::dialogue::DEFAULT_SUBSET_COARSENESS,
                ),
                OraclePersona::noisy(crate::dialogue::DEFAULT_NOISE_RATE),
            ],
            persona_max_turns: 200,
            persona_tau: 1e-9,
            descriptions: 5,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_size == 0 || self.eval_size == 0 {
            return Err(Error::Config("train and eval splits must be nonempty".into()));
        }
        if self.budget == 0 || self.persona_max_turns == 0 {
            return Err(Error::Config("turn budgets must be at least 1".into()));
        }
        if self.arms.iter().any(|a| a.method == Method::GrpoOnline) {
            return Err(Error::Config("the ablation trains offline arms only".into()));
        }
        if !self.arms.iter().any(|a| a.id == self.persona_arm) {
            return Err(Error::Config(format!("persona arm {} is not trained", self.persona_arm)));
        }
        for p in &self.personas {
            p.validate()?;
        }
        self.train.validate()
    }
}

pub struct TrainedArm {
    pub arm: Arm,
    pub report: TrainReport,
    pub file: PolicyFile,
}

pub struct AblationOutput {
    pub corpus: Vec<Specification>,
    pub world_model: WorldModel,
    pub dataset: Vec<PreferenceGroup>,
    pub datagen_stats: DatagenStats,
    pub arms: Vec<TrainedArm>,
    /// Fixed-budget comparison, uniform baseline first.
    pub comparison: Vec<RunSummary>,
    pub comparison_runs: Vec<Vec<Transcript>>,
    pub personas: PersonaComparison,
    pub persona_runs: Vec<Vec<Transcript>>,
    pub descriptions: Vec<String>,
}

#[derive(Serialize)]
struct Report<'a> {
    schema: String,
    seed: u64,
    datagen: &'a DatagenStats,
    comparison_budget: usize,
    comparison: &'a [RunSummary],
    personas: &'a PersonaComparison,
}

pub fn run_ablation(
    schema: &Schema,
    gen: &GenConfig,
    config: &AblationConfig,
    gateway: Option<&Gateway>,
) -> Result<AblationOutput> {
    config.validate()?;
    let corpus = generate_corpus(
        schema,
        gen,
        config.train_size + config.eval_size,
        seed::derive(config.seed, "corpus", 0),
    )?;
    let (train, eval_specs) = corpus.split_at(config.train_size);
    let world_model = estimate_prior(schema, train, config.alpha)?;
    log::info!("prior over {} training specifications", train.len());

    let datagen = DatagenConfig {
        seed: seed::derive(config.seed, "datagen", 0),
        ..config.datagen.clone()
    };
    let (dataset, datagen_stats) = build_dataset(schema, &world_model, train, &datagen, None)?;
    log::info!("{} preference groups", dataset.len());

    let mut arms = Vec::with_capacity(config.arms.len());
    for arm in &config.arms {
        let train_config = TrainConfig {
            method: arm.method,
            reward_mode: arm.reward_mode,
            seed: seed::derive(config.seed, &format!("train/{}", arm.id), 0),
            ..config.train.clone()
        };
        let groups = scored_groups(&dataset, arm.reward_mode)?;
        let report = train_offline(&groups, &train_config)?;
        let file = PolicyFile::new(&report.params, &train_config);
        log::info!("trained {}: theta {:?}", arm.id, report.params.theta);
        arms.push(TrainedArm {
            arm: arm.clone(),
            report,
            file,
        });
    }

    let dialogue = DialogueConfig {
        tau: config.tau,
        max_turns: config.budget,
        seed: seed::derive(config.seed, "comparison", 0),
        ..DialogueConfig::default()
    };
    let expert = OraclePersona::expert();
    let mut comparison_runs = vec![evaluate(
        PolicySelector::uniform,
        schema,
        &world_model,
        &expert,
        eval_specs,
        &dialogue,
    )?];
    let mut comparison = vec![summarize_runs(UNIFORM_POLICY_ID, &comparison_runs[0], &DEFAULT_CHECKPOINTS)?];
    for trained in &arms {
        let params = trained.report.params.clone();
        let runs = evaluate(
            || PolicySelector::greedy(params.clone()),
            schema,
            &world_model,
            &expert,
            eval_specs,
            &dialogue,
        )?;
        comparison.push(summarize_runs(&trained.arm.id, &runs, &DEFAULT_CHECKPOINTS)?);
        comparison_runs.push(runs);
    }

    let persona_params: PolicyParams = arms
        .iter()
        .find(|a| a.arm.id == config.persona_arm)
        .map(|a| a.report.params.clone())
        .expect("validated");
    let persona_dialogue = DialogueConfig {
        tau: config.persona_tau,
        max_turns: config.persona_max_turns,
        seed: seed::derive(config.seed, "personas", 0),
        ..DialogueConfig::default()
    };
    let (personas, persona_runs) = compare_personas(
        &config.persona_arm,
        || PolicySelector::greedy(persona_params.clone()),
        &config.personas,
        schema,
        &world_model,
        eval_specs,
        &persona_dialogue,
        &DEFAULT_CHECKPOINTS,
    )?;

    let descriptions = persona_runs
        .first()
        .map(|run| {
            run.iter()
                .take(config.descriptions)
                .map(|t| consolidate_description(t, ConsolidationMode::Gateway, gateway))
                .collect()
        })
        .unwrap_or_default();

    Ok(AblationOutput {
        corpus,
        world_model,
        dataset,
        datagen_stats,
        arms,
        comparison,
        comparison_runs,
        personas,
        persona_runs,
        descriptions,
    })
}

/// A gateway that never leaves the process: unscripted requests return an
/// empty completion, so consolidation falls back to the structured block.
pub fn offline_gateway() -> Gateway {
    Gateway::new(GatewayConfig {
        strict_mock: false,
        ..GatewayConfig::mock(Default::default())
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes every artifact under `dir` and returns the paths, in write order.
pub fn write_outputs(
    out: &AblationOutput,
    schema: &Schema,
    config: &AblationConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let policy_dir = dir.join("policies");
    let desc_dir = dir.join("descriptions");
    for d in [dir, &policy_dir, &desc_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut written = Vec::new();

    let mut corpus = String::new();
    for spec in &out.corpus {
        corpus.push_str(&serde_json::to_string(spec).expect("spec serializes"));
        corpus.push('\n');
    }
    written.push(write(&dir.join("corpus.jsonl"), corpus)?);
    written.push(write(&dir.join("world_model.json"), out.world_model.to_json())?);
    written.push(write(&dir.join("dataset.jsonl"), to_jsonl(&out.dataset))?);

    for trained in &out.arms {
        written.push(write(&policy_dir.join(format!("{}.json", trained.arm.id)), trained.file.to_json())?);
        written.push(write(
            &policy_dir.join(format!("{}.log.csv", trained.arm.id)),
            trained.report.log_csv()?,
        )?);
    }

    let report = Report {
        schema: schema.reference(),
        seed: config.seed,
        datagen: &out.datagen_stats,
        comparison_budget: config.budget,
        comparison: &out.comparison,
        personas: &out.personas,
    };
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    written.push(write(&dir.join("report.json"), json)?);

    let mut text = format!("Policy comparison, expert oracle, {}-turn budget\n\n", config.budget);
    text.push_str(&render_table(&out.comparison));
    text.push_str(&format!("\nPersona suite, policy {}\n\n", config.persona_arm));
    text.push_str(&render_table(&out.personas.summaries));
    text.push_str(&format!(
        "\nmax total-IG gap across personas: {:.3e} bits\n",
        out.personas.max_parity_gap
    ));
    written.push(write(&dir.join("report.txt"), text)?);

    let mut curves = String::from(IG_CURVE_HEADER);
    for (summary, runs) in out.comparison.iter().zip(&out.comparison_runs) {
        curves.push_str(&ig_curve_csv(&summary.policy_id, runs, config.budget));
    }
    written.push(write(&dir.join("ig_curves.csv"), curves)?);

    for (i, d) in out.descriptions.iter().enumerate() {
        written.push(write(&desc_dir.join(format!("eval-{i:05}.txt")), d)?);
    }
    Ok(written)
}

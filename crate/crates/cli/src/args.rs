use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "inquiry", version, about = "Belief-tracking question-asking toolkit")]
pub struct Cli {
    /// Base seed; every component derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory for outputs and run.json.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample complete specifications from a generator.
    GenCorpus(GenCorpusArgs),
    /// Estimate the smoothed prior from a corpus.
    BuildPrior(BuildPriorArgs),
    /// Roll dialogues and emit preference groups.
    Datagen(DatagenArgs),
    /// Train a policy.
    Train(TrainArgs),
    /// Run dialogues against a simulated oracle.
    Simulate(SimulateArgs),
    /// Summarize transcripts.
    Eval(EvalArgs),
    /// Win rates from pairwise judgments.
    Winrate(WinrateArgs),
    /// End-to-end entropy vs slot-count and persona comparison.
    Ablation(AblationArgs),
    /// Re-run the command recorded in a run.json.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SchemaArgs {
    /// Schema JSON; the built-in diagram schema when omitted.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[command(flatten)]
    pub schema: SchemaArgs,
    /// Generator weights JSON; uniform for custom schemas when omitted.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct BuildPriorArgs {
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Oracle {
    Expert,
    Novice,
    Noisy,
}

#[derive(Debug, Args)]
pub struct PersonaArgs {
    #[arg(long, value_enum, default_value_t = Oracle::Expert)]
    pub oracle: Oracle,
    #[arg(long)]
    pub reveal_fraction: Option<f64>,
    #[arg(long)]
    pub subset_coarseness: Option<usize>,
    #[arg(long)]
    pub noise_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StopArgs {
    /// Stop once total entropy is at or below this many bits.
    #[arg(long, default_value_t = inquiry::dialogue::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = inquiry::dialogue::DEFAULT_MAX_TURNS)]
    pub max_turns: usize,
}

#[derive(Debug, Args)]
pub struct WorldArgs {
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[arg(long)]
    pub world_model: PathBuf,
    /// Ground-truth specifications (JSONL).
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub persona: PersonaArgs,
    #[command(flatten)]
    pub stop: StopArgs,
    #[arg(long, default_value_t = inquiry::datagen::DEFAULT_GROUP_SIZE)]
    pub k: usize,
    /// Groups kept per dialogue; every turn when omitted.
    #[arg(long)]
    pub groups_per_dialogue: Option<usize>,
    #[arg(long, default_value_t = inquiry::datagen::DEFAULT_ROLLOUT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Sft,
    Dpo,
    GrpoOffline,
    GrpoOnline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RewardArg {
    Entropy,
    SlotCount,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value_t = RewardArg::Entropy)]
    pub reward: RewardArg,
    /// Preference dataset (offline methods).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.2)]
    pub clip_epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    pub kl_beta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dpo_beta: f64,
    /// Online only: SFT passes before the reference is frozen.
    #[arg(long, default_value_t = 1)]
    pub warmup_epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub inner_steps: usize,
    #[arg(long, default_value_t = 32)]
    pub dialogues_per_epoch: usize,
    /// Online only: schema (optional), prior and training specifications.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub world_model: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub persona: PersonaArgs,
    #[command(flatten)]
    pub stop: StopArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SelectorArg {
    GreedyEntropy,
    Uniform,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub persona: PersonaArgs,
    #[command(flatten)]
    pub stop: StopArgs,
    /// Trained policy file; overrides --selector.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SelectorArg::GreedyEntropy)]
    pub selector: SelectorArg,
    /// Sample from the policy instead of taking its argmax.
    #[arg(long)]
    pub sample: bool,
    /// Number of ground truths to use, from the start of the corpus.
    #[arg(long)]
    pub n: Option<usize>,
    /// Write a consolidated description per dialogue.
    #[arg(long)]
    pub describe: bool,
    /// Gateway config JSON used for descriptions.
    #[arg(long)]
    pub gateway: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Transcript JSONL files; each file is one policy, named by its stem.
    #[arg(long, required = true, num_args = 1..)]
    pub transcripts: Vec<PathBuf>,
    /// Also write mean IG-vs-turn curves as CSV.
    #[arg(long)]
    pub curves: bool,
    /// Last turn of the curves.
    #[arg(long, default_value_t = 20)]
    pub curve_turns: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Win,
    #[value(alias = "wt_half")]
    WtHalf,
    #[value(alias = "wt_full")]
    WtFull,
    All,
}

#[derive(Debug, Args)]
pub struct WinrateArgs {
    #[arg(long)]
    pub judgments: PathBuf,
    #[arg(long, value_enum, default_value_t = ProtocolArg::All)]
    pub protocol: ProtocolArg,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub train_size: usize,
    #[arg(long, default_value_t = 200)]
    pub eval_size: usize,
    /// Turn budget of the policy comparison.
    #[arg(long, default_value_t = 10)]
    pub budget: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// Gateway config JSON for descriptions; an offline mock when omitted.
    #[arg(long)]
    pub gateway: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A run.json written by an earlier command.
    pub run: PathBuf,
}

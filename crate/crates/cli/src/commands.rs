use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Parser;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use inquiry::belief::BeliefState;
use inquiry::datagen::{self, CandidateConfig, DatagenConfig};
use inquiry::dialogue::{
    consolidate_description, ConsolidationMode, DialogueConfig, GreedyEntropy, OracleKind,
    OraclePersona, Question, QuestionSelector, Transcript,
};
use inquiry::eval::{
    evaluate, ig_curve_csv, render_table, summarize_runs, win_rate, JudgmentSet, RunSummary,
    WinProtocol, DEFAULT_CHECKPOINTS, IG_CURVE_HEADER,
};
use inquiry::gateway::{Gateway, GatewayConfig};
use inquiry::pipeline::{offline_gateway, run_ablation, write_outputs, AblationConfig};
use inquiry::policy::{
    scored_groups, train_offline, train_online, Method, OnlineEnv, PolicyFile, PolicySelector,
    RewardMode, SelectMode, TrainConfig,
};
use inquiry::schema::{
    estimate_prior, generate_corpus, load_schema, load_world_model, read_corpus, write_corpus,
    GenConfig, Schema,
};
use inquiry::{seed, Error};

use crate::args::*;
use crate::record::RunRecord;

struct Ctx<'a> {
    seed: u64,
    out_dir: PathBuf,
    format: Format,
    argv: &'a [String],
}

impl Ctx<'_> {
    fn prepare(&self) -> inquiry::Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))
    }

    fn write(&self, record: &mut RunRecord, name: &str, contents: impl AsRef<[u8]>) -> inquiry::Result<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        record.output(&self.out_dir, &path);
        Ok(path)
    }
}

pub fn dispatch(cli: Cli, argv: &[String]) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        out_dir: cli.out_dir,
        format: cli.format,
        argv,
    };
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(&ctx, a),
        Command::BuildPrior(a) => build_prior(&ctx, a),
        Command::Datagen(a) => run_datagen(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Winrate(a) => winrate(&ctx, a),
        Command::Ablation(a) => ablation(&ctx, a),
        Command::Replay(a) => replay(&ctx, a),
    }
}

fn schema_from(path: Option<&Path>, record: &mut RunRecord) -> inquiry::Result<Schema> {
    match path {
        Some(p) => {
            record.input(p);
            load_schema(p)
        }
        None => Ok(Schema::demo()),
    }
}

fn generator_from(
    path: Option<&Path>,
    custom_schema: bool,
    record: &mut RunRecord,
) -> inquiry::Result<GenConfig> {
    match path {
        Some(p) => {
            record.input(p);
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p.display().to_string(), e))
        }
        None if custom_schema => Ok(GenConfig::uniform()),
        None => Ok(GenConfig::demo()),
    }
}

fn gateway_from(path: Option<&Path>, record: &mut RunRecord) -> inquiry::Result<Gateway> {
    match path {
        Some(p) => {
            record.input(p);
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let config: GatewayConfig =
                serde_json::from_str(&text).map_err(|e| Error::json(p.display().to_string(), e))?;
            Ok(Gateway::new(config))
        }
        None => Ok(offline_gateway()),
    }
}

fn persona_from(args: &PersonaArgs) -> inquiry::Result<OraclePersona> {
    let kind = match args.oracle {
        Oracle::Expert => OracleKind::Expert,
        Oracle::Novice => OracleKind::Novice,
        Oracle::Noisy => OracleKind::Noisy,
    };
    let mut persona = OraclePersona::of_kind(kind);
    if let Some(rf) = args.reveal_fraction {
        persona.reveal_fraction = rf;
    }
    if let Some(c) = args.subset_coarseness {
        persona.subset_coarseness = c;
    }
    if let Some(r) = args.noise_rate {
        persona.noise_rate = r;
    }
    let touched_novice = args.reveal_fraction.is_some() || args.subset_coarseness.is_some();
    if touched_novice && kind != OracleKind::Novice {
        return Err(Error::Config("--reveal-fraction and --subset-coarseness apply to --oracle novice".into()));
    }
    if args.noise_rate.is_some() && kind != OracleKind::Noisy {
        return Err(Error::Config("--noise-rate applies to --oracle noisy".into()));
    }
    persona.validate()?;
    Ok(persona)
}

fn load_world(
    args: &WorldArgs,
    record: &mut RunRecord,
) -> inquiry::Result<(Schema, inquiry::schema::WorldModel, Vec<inquiry::schema::Specification>)> {
    let schema = schema_from(args.schema.schema.as_deref(), record)?;
    record.input(&args.world_model);
    let wm = load_world_model(&args.world_model, &schema)?;
    record.input(&args.corpus);
    let corpus = read_corpus(&args.corpus, &schema)?;
    Ok((schema, wm, corpus))
}

fn print_value(ctx: &Ctx<'_>, value: &Value, table: impl FnOnce() -> String) {
    match ctx.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(value).expect("value serializes")),
        Format::Table => print!("{}", table()),
    }
}

fn finish(ctx: &Ctx<'_>, record: &RunRecord) -> Result<()> {
    record.write(&ctx.out_dir)?;
    Ok(())
}

fn gen_corpus(ctx: &Ctx<'_>, a: GenCorpusArgs) -> Result<()> {
    let mut record = RunRecord::new("gen-corpus", ctx.argv, Value::Null);
    let schema = schema_from(a.schema.schema.as_deref(), &mut record)?;
    let gen = generator_from(a.generator.as_deref(), a.schema.schema.is_some(), &mut record)?;
    let corpus_seed = seed::derive(ctx.seed, "corpus", 0);
    record.config = json!({"schema": schema.reference(), "n": a.n, "seed": ctx.seed, "corpus_seed": corpus_seed, "generator": gen});
    let corpus = generate_corpus(&schema, &gen, a.n, corpus_seed)?;
    ctx.prepare()?;
    let path = ctx.out_dir.join("corpus.jsonl");
    write_corpus(&path, &corpus)?;
    record.output(&ctx.out_dir, &path);
    print_value(ctx, &json!({"corpus": path, "n": corpus.len()}), || {
        format!("wrote {} specifications to {}\n", corpus.len(), path.display())
    });
    finish(ctx, &record)
}

fn build_prior(ctx: &Ctx<'_>, a: BuildPriorArgs) -> Result<()> {
    let mut record = RunRecord::new("build-prior", ctx.argv, json!({"alpha": a.alpha}));
    let schema = schema_from(a.schema.schema.as_deref(), &mut record)?;
    record.input(&a.corpus);
    let corpus = read_corpus(&a.corpus, &schema)?;
    let wm = estimate_prior(&schema, &corpus, a.alpha)?;
    ctx.prepare()?;
    let path = ctx.write(&mut record, "world_model.json", wm.to_json())?;
    let h0 = BeliefState::init(&schema, &wm)?.total_entropy();
    print_value(ctx, &json!({"world_model": path, "corpus_size": corpus.len(), "prior_entropy_bits": h0}), || {
        format!("prior from {} specifications, {h0:.4} bits, written to {}\n", corpus.len(), path.display())
    });
    finish(ctx, &record)
}

fn run_datagen(ctx: &Ctx<'_>, a: DatagenArgs) -> Result<()> {
    let mut record = RunRecord::new("datagen", ctx.argv, Value::Null);
    let (schema, wm, corpus) = load_world(&a.world, &mut record)?;
    let config = DatagenConfig {
        persona: persona_from(&a.persona)?,
        candidates: CandidateConfig {
            k: a.k,
            ..CandidateConfig::default()
        },
        groups_per_dialogue: a.groups_per_dialogue,
        rollout_epsilon: a.epsilon,
        tau: a.stop.tau,
        max_turns: a.stop.max_turns,
        seed: seed::derive(ctx.seed, "datagen", 0),
    };
    record.config = serde_json::to_value(&config)?;
    let (groups, stats) = datagen::build_dataset(&schema, &wm, &corpus, &config, None)?;
    ctx.prepare()?;
    ctx.write(&mut record, "dataset.jsonl", datagen::to_jsonl(&groups))?;
    let stats_json = serde_json::to_value(&stats)?;
    ctx.write(&mut record, "datagen_stats.json", format!("{}\n", serde_json::to_string_pretty(&stats_json)?))?;
    print_value(ctx, &stats_json, || {
        format!(
            "{} groups from {} dialogues ({} constant), mean best reward {:.3} bits\n",
            stats.groups, stats.dialogues, stats.constant_groups, stats.mean_best_reward
        )
    });
    finish(ctx, &record)
}

fn train(ctx: &Ctx<'_>, a: TrainArgs) -> Result<()> {
    let mut record = RunRecord::new("train", ctx.argv, Value::Null);
    let config = TrainConfig {
        method: match a.method {
            MethodArg::Sft => Method::Sft,
            MethodArg::Dpo => Method::Dpo,
            MethodArg::GrpoOffline => Method::GrpoOffline,
            MethodArg::GrpoOnline => Method::GrpoOnline,
        },
        reward_mode: match a.reward {
            RewardArg::Entropy => RewardMode::Entropy,
            RewardArg::SlotCount => RewardMode::SlotCount,
        },
        epochs: a.epochs,
        learning_rate: a.lr,
        clip_epsilon: a.clip_epsilon,
        kl_beta: a.kl_beta,
        dpo_beta: a.dpo_beta,
        seed: ctx.seed,
        warmup_epochs: a.warmup_epochs,
        inner_steps: a.inner_steps,
        dialogues_per_epoch: a.dialogues_per_epoch,
    };
    config.validate()?;
    record.config = serde_json::to_value(&config)?;
    let report = if config.method == Method::GrpoOnline {
        let (Some(wm_path), Some(corpus_path)) = (&a.world_model, &a.corpus) else {
            return Err(Error::Config("grpo-online needs --world-model and --corpus".into()).into());
        };
        let world = WorldArgs {
            schema: SchemaArgs { schema: a.schema.clone() },
            world_model: wm_path.clone(),
            corpus: corpus_path.clone(),
        };
        let (schema, wm, corpus) = load_world(&world, &mut record)?;
        let env = OnlineEnv {
            schema: &schema,
            world_model: &wm,
            train: &corpus,
            datagen: DatagenConfig {
                persona: persona_from(&a.persona)?,
                tau: a.stop.tau,
                max_turns: a.stop.max_turns,
                ..DatagenConfig::default()
            },
        };
        train_online(&env, &config)?
    } else {
        let Some(path) = &a.dataset else {
            return Err(Error::Config(format!("{} needs --dataset", config.method)).into());
        };
        record.input(path);
        let groups = scored_groups(&datagen::read_dataset(path)?, config.reward_mode)?;
        train_offline(&groups, &config)?
    };
    ctx.prepare()?;
    let file = PolicyFile::new(&report.params, &config);
    ctx.write(&mut record, "policy.json", file.to_json())?;
    ctx.write(&mut record, "train_log.csv", report.log_csv()?)?;
    let last = report.log.last().expect("log has the initial row");
    print_value(ctx, &json!({"theta": report.params.theta, "log": report.log, "skipped_groups": report.skipped_groups}), || {
        format!(
            "{} ({}): final loss {:.6}, top-1 agreement {:.3}, {} groups skipped\n",
            config.method, config.reward_mode, last.loss, last.top1_agreement, report.skipped_groups
        )
    });
    finish(ctx, &record)
}

enum AnySelector {
    Greedy(GreedyEntropy),
    Policy(PolicySelector),
}

impl QuestionSelector for AnySelector {
    fn propose(
        &mut self,
        belief: &BeliefState,
        schema: &Schema,
        rng: &mut ChaCha8Rng,
    ) -> inquiry::Result<Option<Question>> {
        match self {
            AnySelector::Greedy(s) => s.propose(belief, schema, rng),
            AnySelector::Policy(s) => s.propose(belief, schema, rng),
        }
    }
}

fn simulate(ctx: &Ctx<'_>, a: SimulateArgs) -> Result<()> {
    let mut record = RunRecord::new("simulate", ctx.argv, Value::Null);
    let (schema, wm, corpus) = load_world(&a.world, &mut record)?;
    let persona = persona_from(&a.persona)?;
    let n = a.n.unwrap_or(corpus.len()).min(corpus.len());
    let (template, policy_id) = match (&a.policy, a.selector) {
        (Some(path), _) => {
            record.input(path);
            let params = PolicyFile::load(path)?.params()?;
            let mode = if a.sample { SelectMode::Sample } else { SelectMode::Greedy };
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (
                AnySelector::Policy(PolicySelector {
                    mode,
                    ..PolicySelector::greedy(params)
                }),
                id,
            )
        }
        (None, SelectorArg::GreedyEntropy) => (AnySelector::Greedy(GreedyEntropy), "greedy-entropy".into()),
        (None, SelectorArg::Uniform) => (AnySelector::Policy(PolicySelector::uniform()), "uniform-random".into()),
    };
    let dialogue = DialogueConfig {
        tau: a.stop.tau,
        max_turns: a.stop.max_turns,
        seed: seed::derive(ctx.seed, "simulate", 0),
        ..DialogueConfig::default()
    };
    record.config = json!({"policy_id": policy_id, "persona": persona, "dialogue": dialogue, "n": n});
    let make = || match &template {
        AnySelector::Greedy(_) => AnySelector::Greedy(GreedyEntropy),
        AnySelector::Policy(p) => AnySelector::Policy(p.clone()),
    };
    let transcripts = evaluate(make, &schema, &wm, &persona, &corpus[..n], &dialogue)?;
    ctx.prepare()?;
    let text: String = transcripts.iter().map(Transcript::to_jsonl).collect();
    ctx.write(&mut record, "transcripts.jsonl", text)?;
    if a.describe {
        let gateway = gateway_from(a.gateway.as_deref(), &mut record)?;
        let dir = ctx.out_dir.join("descriptions");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for t in &transcripts {
            let d = consolidate_description(t, ConsolidationMode::Gateway, Some(&gateway));
            ctx.write(&mut record, &format!("descriptions/{}.txt", t.dialogue_id), d)?;
        }
    }
    let summary = summarize_runs(&policy_id, &transcripts, &DEFAULT_CHECKPOINTS)?;
    print_value(ctx, &serde_json::to_value(&summary)?, || render_table(std::slice::from_ref(&summary)));
    finish(ctx, &record)
}

fn eval(ctx: &Ctx<'_>, a: EvalArgs) -> Result<()> {
    let mut record = RunRecord::new("eval", ctx.argv, json!({"checkpoints": DEFAULT_CHECKPOINTS, "curves": a.curves}));
    let mut summaries: Vec<RunSummary> = Vec::new();
    let mut curves = String::from(IG_CURVE_HEADER);
    for path in &a.transcripts {
        record.input(path);
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let transcripts = Transcript::read_jsonl(BufReader::new(file))?;
        let policy_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for kind in [OracleKind::Expert, OracleKind::Novice, OracleKind::Noisy] {
            let cell: Vec<Transcript> = transcripts.iter().filter(|t| t.persona == kind).cloned().collect();
            if cell.is_empty() {
                continue;
            }
            summaries.push(summarize_runs(&policy_id, &cell, &DEFAULT_CHECKPOINTS)?);
            curves.push_str(&ig_curve_csv(&policy_id, &cell, a.curve_turns));
        }
        if transcripts.is_empty() {
            return Err(Error::Invalid(format!("{} holds no transcripts", path.display())).into());
        }
    }
    ctx.prepare()?;
    let value = serde_json::to_value(&summaries)?;
    ctx.write(&mut record, "report.json", format!("{}\n", serde_json::to_string_pretty(&value)?))?;
    let table = render_table(&summaries);
    ctx.write(&mut record, "report.txt", &table)?;
    if a.curves {
        ctx.write(&mut record, "ig_curves.csv", &curves)?;
    }
    print_value(ctx, &value, || table);
    finish(ctx, &record)
}

fn winrate(ctx: &Ctx<'_>, a: WinrateArgs) -> Result<()> {
    let mut record = RunRecord::new("winrate", ctx.argv, json!({"protocol": format!("{:?}", a.protocol)}));
    record.input(&a.judgments);
    let judgments = JudgmentSet::load(&a.judgments)?;
    let protocols: Vec<WinProtocol> = match a.protocol {
        ProtocolArg::Win => vec![WinProtocol::Win],
        ProtocolArg::WtHalf => vec![WinProtocol::WtHalf],
        ProtocolArg::WtFull => vec![WinProtocol::WtFull],
        ProtocolArg::All => vec![WinProtocol::Win, WinProtocol::WtHalf, WinProtocol::WtFull],
    };
    let rates: Vec<(WinProtocol, f64)> = protocols
        .iter()
        .map(|p| win_rate(&judgments, *p).map(|r| (*p, r)))
        .collect::<inquiry::Result<_>>()?;
    let c = judgments.counts();
    let value = json!({
        "wins": c.wins, "ties": c.ties, "losses": c.losses,
        "rates": rates.iter().map(|(p, r)| (p.to_string(), json!(r))).collect::<serde_json::Map<_, _>>(),
    });
    print_value(ctx, &value, || {
        if rates.len() == 1 {
            format!("{:.3}\n", rates[0].1)
        } else {
            rates.iter().map(|(p, r)| format!("{p:<8} {r:.3}\n")).collect()
        }
    });
    ctx.prepare()?;
    finish(ctx, &record)
}

fn ablation(ctx: &Ctx<'_>, a: AblationArgs) -> Result<()> {
    let mut record = RunRecord::new("ablation", ctx.argv, Value::Null);
    let schema = schema_from(a.schema.schema.as_deref(), &mut record)?;
    let gen = generator_from(a.generator.as_deref(), a.schema.schema.is_some(), &mut record)?;
    let gateway = gateway_from(a.gateway.as_deref(), &mut record)?;
    let config = AblationConfig {
        seed: ctx.seed,
        train_size: a.train_size,
        eval_size: a.eval_size,
        budget: a.budget,
        train: TrainConfig {
            epochs: a.epochs,
            ..TrainConfig::default()
        },
        ..AblationConfig::default()
    };
    record.config = serde_json::to_value(&config)?;
    let out = run_ablation(&schema, &gen, &config, Some(&gateway))?;
    for path in write_outputs(&out, &schema, &config, &ctx.out_dir)? {
        record.output(&ctx.out_dir, &path);
    }
    let value = json!({"comparison": out.comparison, "personas": out.personas});
    print_value(ctx, &value, || {
        let mut s = render_table(&out.comparison);
        s.push('\n');
        s.push_str(&render_table(&out.personas.summaries));
        s
    });
    finish(ctx, &record)
}

fn replay(ctx: &Ctx<'_>, a: ReplayArgs) -> Result<()> {
    let recorded = RunRecord::read(&a.run)?;
    let mut argv = vec!["inquiry".to_string()];
    argv.extend(recorded.argv.iter().cloned());
    let mut cli = Cli::try_parse_from(&argv)
        .map_err(|e| Error::Invalid(format!("recorded argv does not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Invalid("cannot replay a replay".into()).into());
    }
    cli.out_dir = ctx.out_dir.clone();
    let mut replay_argv = recorded.argv.clone();
    set_out_dir(&mut replay_argv, &ctx.out_dir);
    dispatch(cli, &replay_argv)
}

/// Rewrites `--out-dir` in a recorded argv so the new run.json describes the
/// replayed run.
fn set_out_dir(argv: &mut Vec<String>, dir: &Path) {
    let dir = dir.display().to_string();
    let mut i = 0;
    while i < argv.len() {
        if argv[i] == "--out-dir" && i + 1 < argv.len() {
            argv[i + 1] = dir.clone();
            return;
        }
        if argv[i].starts_with("--out-dir=") {
            argv[i] = format!("--out-dir={dir}");
            return;
        }
        i += 1;
    }
    argv.push("--out-dir".into());
    argv.push(dir);
}

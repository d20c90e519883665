use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{value_parser, Args, Parser, Subcommand, ValueEnum};
use reasontrack_core::io::{frame_file_name, load_frames, write_file, write_mask_png};
use reasontrack_core::{load_config, InstructionKind, RunConfig};
use reasontrack_metrics::{evaluate_benchmark, EvalOptions, Phrasings};
use reasontrack_model::{checkpoint, run, Ablation, TrackModel, TrackerOptions, Vocabulary};
use reasontrack_synthgen::{generate_benchmark, lexicon, GenOptions, Manifest, MANIFEST_FILE};
use reasontrack_training::{loss_csv, train_stage, Stage, StagePlan, TrackerPredictor};

#[derive(Parser)]
#[command(name = "reasontrack", version, about = "Instruction-driven video object tracking at desk scale")]
struct Cli {
    /// Run configuration (JSON); keys left out keep their defaults.
    #[arg(long, global = true, env = "REASONTRACK_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark tree.
    Gen(GenArgs),
    /// Run one training stage.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the eval split.
    Eval(EvalArgs),
    /// Track one instruction through a directory of frames.
    Track(TrackArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Training sequences.
    #[arg(long, value_parser = value_parser!(u64).range(1..=100_000))]
    train: u64,
    /// Evaluation sequences.
    #[arg(long, value_parser = value_parser!(u64).range(1..=100_000))]
    eval: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator options (JSON); keys left out keep their defaults.
    #[arg(long)]
    options: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = value_parser!(u8).range(1..=3))]
    stage: u8,
    /// Benchmark tree written by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint from the previous stage; required for stages 2 and 3.
    #[arg(long)]
    ckpt_in: Option<PathBuf>,
    #[arg(long)]
    ckpt_out: PathBuf,
    /// Loss curve CSV [default: checkpoint path + `.loss.csv`].
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Overrides `steps` from the configuration.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateArg {
    None,
    Rt,
    Rp,
}

impl From<AblateArg> for Ablation {
    fn from(a: AblateArg) -> Self {
        match a {
            AblateArg::None => Ablation::None,
            AblateArg::Rt => Ablation::Rt,
            AblateArg::Rp => Ablation::Rp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Explicit,
    Implicit,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Where the JSON report goes.
    #[arg(long)]
    report: PathBuf,
    /// Disable tracker components: `rt` turns off rethinking, `rp` also
    /// holds the online query at its initial value.
    #[arg(long, value_enum, default_value_t = AblateArg::None)]
    ablate: AblateArg,
    /// Only records of this kind.
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Only sequences tagged with this suite in the manifest (e.g. `change`).
    #[arg(long)]
    suite: Option<String>,
    /// Run the seed phrasing only instead of all six.
    #[arg(long)]
    seed_only: bool,
}

#[derive(Args)]
struct TrackArgs {
    /// Directory of `00000.png, 00001.png, ...`.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    instruction: String,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = AblateArg::None)]
    ablate: AblateArg,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let config = cli.config.as_deref();
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a, config),
        Command::Eval(a) => cmd_eval(a, config),
        Command::Track(a) => cmd_track(a, config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_config(path: Option<&Path>) -> anyhow::Result<Option<RunConfig>> {
    path.map(|p| load_config(p).with_context(|| format!("loading config {}", p.display()))).transpose()
}

fn load_model(path: &Path) -> anyhow::Result<TrackModel> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_manifest(data: &Path) -> Result<Manifest, Failure> {
    let path = data.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Failure::Usage(format!("{} is not a benchmark tree (no {MANIFEST_FILE})", data.display())));
    }
    Ok(Manifest::load(&path)?)
}

fn cmd_gen(a: GenArgs) -> Outcome {
    let opts = match &a.options {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<GenOptions>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => GenOptions::default(),
    };
    let bench = generate_benchmark(a.train as usize, a.eval as usize, a.seed, &opts)?;
    bench.write(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let changed = bench.eval.iter().filter(|g| g.in_change_suite).count();
    println!("{} train, {} eval ({changed} with appearance changes) -> {}", bench.train.len(), bench.eval.len(), a.out.display());
    Ok(())
}

/// Architecture fields must agree between a checkpoint and a config file.
fn same_architecture(a: &RunConfig, b: &RunConfig) -> bool {
    (a.brain_dim, a.brain_layers, a.brain_heads, a.decoder_dim, a.decoder_blocks, a.decoder_heads)
        == (b.brain_dim, b.brain_layers, b.brain_heads, b.decoder_dim, b.decoder_blocks, b.decoder_heads)
        && (a.patch_size, a.encoder_blocks, a.encoder_heads, a.image_tokens, a.lora_rank)
            == (b.patch_size, b.encoder_blocks, b.encoder_heads, b.image_tokens, b.lora_rank)
        && a.lora_alpha == b.lora_alpha
}

fn cmd_train(a: TrainArgs, config: Option<&Path>) -> Outcome {
    let stage = Stage::from_number(a.stage).expect("clap restricts the range");
    if a.stage > 1 && a.ckpt_in.is_none() {
        return Err(Failure::Usage(format!(
            "stage {} continues from stage {}: pass --ckpt-in with the stage {} checkpoint",
            a.stage,
            a.stage - 1,
            a.stage - 1
        )));
    }
    let manifest = load_manifest(&a.data)?;
    let config = read_config(config)?;
    let mut model = match &a.ckpt_in {
        Some(p) => {
            let mut m = load_model(p)?;
            if let Some(c) = config {
                if !same_architecture(&m.config, &c) {
                    return Err(anyhow!("config architecture does not match checkpoint {}", p.display()).into());
                }
                m.config = c;
            }
            m
        }
        None => TrackModel::new(config.unwrap_or_default(), Vocabulary::new(lexicon()))?,
    };
    let data = manifest.load_split(&a.data, "train")?;
    let plan =
        StagePlan { stage, steps: a.steps.unwrap_or(model.config.steps), batch_size: model.config.batch_size };
    log::info!("stage {}: {} steps on {} sequences", a.stage, plan.steps, data.len());
    let report = train_stage(&mut model, &data, &plan)?;

    checkpoint::save(&model, &a.ckpt_out).with_context(|| format!("writing {}", a.ckpt_out.display()))?;
    let csv_path = a.loss_csv.unwrap_or_else(|| {
        let mut p = a.ckpt_out.clone().into_os_string();
        p.push(".loss.csv");
        p.into()
    });
    write_file(&csv_path, loss_csv(&report.curve).as_bytes())?;
    println!(
        "stage {}: initial loss {:.6} final loss {:.6} -> {}",
        a.stage,
        report.initial_loss(),
        report.final_loss(),
        a.ckpt_out.display()
    );
    Ok(())
}

fn tracker_options(model: &TrackModel, config: Option<RunConfig>, ablate: AblateArg) -> TrackerOptions {
    TrackerOptions::from_config(config.as_ref().unwrap_or(&model.config), ablate.into())
}

fn cmd_eval(a: EvalArgs, config: Option<&Path>) -> Outcome {
    let manifest = load_manifest(&a.data)?;
    let config = read_config(config)?;
    let model = load_model(&a.ckpt)?;
    let mut data = manifest.load_split(&a.data, "eval")?;
    if let Some(suite) = &a.suite {
        let ids = manifest.suite_ids(suite);
        data.retain(|s| ids.contains(&s.sequence_id()));
        if data.is_empty() {
            return Err(Failure::Usage(format!("no eval sequences in suite `{suite}`")));
        }
    }
    let options = EvalOptions {
        kind: a.kind.map(|k| match k {
            KindArg::Explicit => InstructionKind::Explicit,
            KindArg::Implicit => InstructionKind::Implicit,
        }),
        phrasings: if a.seed_only { Phrasings::SeedOnly } else { Phrasings::All },
    };
    let predictor = TrackerPredictor { model: &model, options: tracker_options(&model, config, a.ablate) };
    let report = evaluate_benchmark(&predictor, &data, options)?;
    write_file(&a.report, report.to_json().as_bytes())?;
    print!("{}", report.to_table());
    if report.failed_runs > 0 {
        return Err(anyhow!("{} of {} runs failed (see {})", report.failed_runs, report.runs, a.report.display()).into());
    }
    Ok(())
}

fn cmd_track(a: TrackArgs, config: Option<&Path>) -> Outcome {
    if !a.frames.is_dir() {
        return Err(Failure::Usage(format!("frames directory {} does not exist", a.frames.display())));
    }
    let config = read_config(config)?;
    let model = load_model(&a.ckpt)?;
    let frames = load_frames(&a.frames)?;
    let unknown = model.vocab.unknown_words(&a.instruction);
    if !unknown.is_empty() {
        log::warn!("words outside the vocabulary are read as unknown tokens: {}", unknown.join(", "));
    }
    let out = run(&model, &frames, &a.instruction, tracker_options(&model, config, a.ablate))?;
    for w in &out.stats.warnings {
        log::warn!("{w}");
    }
    let masks = a.out.join("masks");
    std::fs::create_dir_all(&masks).with_context(|| format!("creating {}", masks.display()))?;
    for (i, m) in out.masks.iter().enumerate() {
        write_mask_png(m, &masks.join(frame_file_name(i)))?;
    }
    let stats = serde_json::to_string_pretty(&out.stats)? + "\n";
    write_file(&a.out.join("stats.json"), stats.as_bytes())?;
    write_file(&a.out.join("answer.txt"), format!("{}\n", out.text).as_bytes())?;
    println!("{}", out.text);
    println!("{} frames, rethought at {:?}", out.masks.len(), out.stats.rethink_frames);
    Ok(())
}

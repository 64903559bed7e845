//! `afford`: data generation, augmentation, training, prediction, planning,
//! simulation, evaluation and visualisation from one entry point.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afford_core::augment::{augment_dataset, AugmentClients, ProceduralInpaint, StubTextGen};
use afford_core::encoders::{EncoderKind, Encoders};
use afford_core::manifest::{load_manifest, read_rgb_png, save_manifest, write_rgb_png};
use afford_core::model::{forward, train_with_progress, Checkpoint};
use afford_core::overlay::visualize_overlay;
use afford_core::planner::{plan, PlannerClient, RuleStubPlanner, SceneDescription, SceneObject};
use afford_core::sim::eval::{act, run_task};
use afford_core::sim::protocol::METHODS;
use afford_core::sim::{
    evaluate, generate_scenarios, render, seed_dataset, step, EvalSetup, Method, ObjectLibrary,
    TaskRecord,
};
use anyhow::{anyhow, Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use config::{ClientKind, ToolkitConfig, LIBRARY_FILE};

#[derive(Parser, Debug)]
#[command(name = "afford", version, about = "Instruction-guided affordance toolkit")]
struct Cli {
    /// TOML toolkit configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    encoder: Option<EncoderChoice>,
    #[arg(long, global = true, value_enum)]
    client: Option<ClientKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EncoderChoice {
    Toy,
    Adapter,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render single-object seed samples into a manifest.
    GenData {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Only these shape ids (comma separated).
        #[arg(long, value_delimiter = ',')]
        shapes: Vec<String>,
    },
    /// Expand a manifest by rotation, inpainting and paraphrase.
    Augment {
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train the decoder and write a checkpoint.
    Train {
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Predict an affordance map and write its overlay.
    Predict {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PNG")]
        image: PathBuf,
        #[arg(long)]
        instruction: String,
        #[arg(long, value_name = "PNG")]
        out: PathBuf,
        #[arg(long, value_parser = parse_opacity)]
        opacity: Option<f64>,
    },
    /// Ask the planner for an action decision over a described scene.
    Plan {
        /// JSON scene: `{"height", "width", "objects": [{"category", "bbox"}]}`.
        #[arg(long, value_name = "PATH")]
        scene: PathBuf,
        #[arg(long)]
        instruction: String,
        #[arg(long, value_name = "PNG")]
        image: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Execute generated tasks with the trained agent and record each step.
    Simulate {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Task id such as `s1-t01`; all tasks when omitted.
        #[arg(long)]
        task: Option<String>,
        /// Replaces the task's instruction.
        #[arg(long, requires = "task")]
        instruction: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Score every method on the generated task suite.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also score the uniform random-pixel agent.
        #[arg(long)]
        with_random: bool,
    },
    /// Overlay each manifest sample's map (or a prediction) on its image.
    Visualize {
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        /// Overlay predictions from this checkpoint instead of labels.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_parser = parse_opacity)]
        opacity: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Augment { .. } => "augment",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Plan { .. } => "plan",
            Command::Simulate { .. } => "simulate",
            Command::Evaluate { .. } => "evaluate",
            Command::Visualize { .. } => "visualize",
        }
    }
}

fn parse_opacity(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error("live {0} client is not available in this build")]
    LiveClientUnavailable(&'static str),
    #[error("no task with id {0}")]
    UnknownTask(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    height: usize,
    width: usize,
    objects: Vec<SceneObject>,
}

#[derive(Serialize)]
struct PredictionSummary<'a> {
    instruction: &'a str,
    pixel: (usize, usize),
    probability: f64,
}

#[derive(Serialize)]
struct SimulationRecord<'a> {
    #[serde(flatten)]
    record: &'a TaskRecord,
    moved: bool,
}

struct Env {
    config: ToolkitConfig,
    seed: u64,
    encoder: EncoderKind,
    client: ClientKind,
}

fn usage_error(message: String) -> ! {
    Cli::command().error(ErrorKind::MissingRequiredArgument, message).exit()
}

/// Resolves a path flag, falling back to a config default.
fn flag_or(flag: Option<PathBuf>, fallback: Option<PathBuf>, name: &str, key: &str) -> PathBuf {
    flag.or(fallback)
        .unwrap_or_else(|| usage_error(format!("missing --{name} (or {key} in --config)")))
}

/// Innermost variant name of a nested error enum's debug form, so
/// `Model(EmptyDataset)` reports `EmptyDataset`.
fn variant_name(debug: &str) -> String {
    let mut rest = debug;
    let mut last = "";
    loop {
        let len = rest
            .find(|c: char| !(c.is_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        let ident = &rest[..len];
        if !ident.starts_with(|c: char| c.is_ascii_uppercase()) {
            break;
        }
        last = ident;
        if ident == "Io" || !rest[len..].starts_with('(') {
            break;
        }
        rest = &rest[len + 1..];
    }
    if last.is_empty() {
        "Error".to_string()
    } else {
        last.to_string()
    }
}

fn error_kind(err: &anyhow::Error) -> String {
    macro_rules! known {
        ($cause:expr, $($t:ty),*) => {
            $(if let Some(e) = $cause.downcast_ref::<$t>() {
                return variant_name(&format!("{e:?}"));
            })*
        };
    }
    for cause in err.chain() {
        known!(
            cause,
            CliError,
            afford_core::model::ModelError,
            afford_core::model::CheckpointError,
            afford_core::manifest::ManifestError,
            afford_core::dataset::DatasetError,
            afford_core::augment::AugmentError,
            afford_core::encoders::EncoderError,
            afford_core::planner::PlannerError,
            afford_core::sim::SimError,
            afford_core::overlay::OverlayError
        );
        if cause.is::<std::io::Error>() {
            return "Io".to_string();
        }
        if cause.is::<serde_json::Error>() {
            return "Json".to_string();
        }
    }
    "Error".to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() && !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let command = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let log = serde_json::json!({
                "command": command,
                "error": error_kind(&err),
                "message": format!("{err:#}"),
            });
            eprintln!("{log}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        None => ToolkitConfig::default(),
        Some(p) => ToolkitConfig::load(p).unwrap_or_else(|e| {
            Cli::command()
                .error(ErrorKind::InvalidValue, format!("invalid value for --config: {e:#}"))
                .exit()
        }),
    };
    let ctx = Env {
        seed: cli.seed.unwrap_or(config.seed),
        encoder: match cli.encoder {
            Some(EncoderChoice::Toy) => EncoderKind::Toy,
            Some(EncoderChoice::Adapter) => EncoderKind::Adapter,
            None => config.encoder,
        },
        client: cli.client.unwrap_or(config.client),
        config,
    };
    match cli.command {
        Command::GenData { out, shapes } => gen_data(&ctx, &out, &shapes),
        Command::Augment { manifest, out } => {
            let manifest = flag_or(manifest, ctx.config.paths.dataset.clone(), "manifest", "paths.dataset");
            augment(&ctx, &manifest, &out)
        }
        Command::Train { manifest, out } => {
            let manifest = flag_or(manifest, ctx.config.paths.dataset.clone(), "manifest", "paths.dataset");
            let out = flag_or(out, ctx.config.default_checkpoint(), "out", "paths.checkpoints");
            train_cmd(&ctx, &manifest, &out)
        }
        Command::Predict {
            checkpoint,
            image,
            instruction,
            out,
            opacity,
        } => {
            let checkpoint =
                flag_or(checkpoint, ctx.config.default_checkpoint(), "checkpoint", "paths.checkpoints");
            predict(&ctx, &checkpoint, &image, &instruction, &out, opacity)
        }
        Command::Plan {
            scene,
            instruction,
            image,
            out,
        } => plan_cmd(&ctx, &scene, &instruction, image.as_deref(), out.as_deref()),
        Command::Simulate {
            checkpoint,
            task,
            instruction,
            out,
        } => {
            let checkpoint =
                flag_or(checkpoint, ctx.config.default_checkpoint(), "checkpoint", "paths.checkpoints");
            simulate(&ctx, &checkpoint, task.as_deref(), instruction.as_deref(), &out)
        }
        Command::Evaluate {
            checkpoint,
            out,
            with_random,
        } => {
            let checkpoint =
                flag_or(checkpoint, ctx.config.default_checkpoint(), "checkpoint", "paths.checkpoints");
            evaluate_cmd(&ctx, &checkpoint, &out, with_random)
        }
        Command::Visualize {
            manifest,
            checkpoint,
            out,
            opacity,
        } => {
            let manifest = flag_or(manifest, ctx.config.paths.dataset.clone(), "manifest", "paths.dataset");
            visualize(&ctx, &manifest, checkpoint.as_deref(), &out, opacity)
        }
    }
}

fn library(ctx: &Env) -> Result<ObjectLibrary> {
    Ok(match &ctx.config.paths.assets {
        None => ObjectLibrary::bundled()?,
        Some(dir) => {
            let path = dir.join(LIBRARY_FILE);
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            ObjectLibrary::from_json(&text)?
        }
    })
}

fn encoders(ctx: &Env) -> Result<Encoders> {
    Ok(Encoders::from_kind(ctx.encoder, &ctx.config.adapter)?)
}

fn planner(ctx: &Env) -> Result<Box<dyn PlannerClient>> {
    match ctx.client {
        ClientKind::Stub => Ok(Box::new(RuleStubPlanner)),
        ClientKind::Live => Err(CliError::LiveClientUnavailable("planner").into()),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn gen_data(ctx: &Env, out: &Path, shapes: &[String]) -> Result<()> {
    let mut lib = library(ctx)?;
    if !shapes.is_empty() {
        for id in shapes {
            if lib.shape(id).is_none() {
                return Err(anyhow!("unknown shape id {id:?}"));
            }
        }
        lib.shapes.retain(|s| shapes.contains(&s.id));
    }
    let pipeline = ctx.config.seeded_pipeline(ctx.seed);
    let dataset = seed_dataset(&lib, &pipeline.sim, &pipeline.seed_data)?;
    fs::create_dir_all(out)?;
    save_manifest(&dataset, &out.join("manifest.jsonl"))?;
    println!("wrote {} samples to {}", dataset.len(), out.display());
    Ok(())
}

fn augment(ctx: &Env, manifest: &Path, out: &Path) -> Result<()> {
    if ctx.client == ClientKind::Live {
        return Err(CliError::LiveClientUnavailable("text generation / inpainting").into());
    }
    let seed = load_manifest(manifest)?;
    let pipeline = ctx.config.seeded_pipeline(ctx.seed);
    let text = StubTextGen::new(pipeline.augment_seed);
    let clients = AugmentClients {
        text: &text,
        inpaint: &ProceduralInpaint,
    };
    let (dataset, report) = augment_dataset(&seed, pipeline.augment, &clients, pipeline.augment_seed)?;
    fs::create_dir_all(out)?;
    save_manifest(&dataset, &out.join("manifest.jsonl"))?;
    fs::write(
        out.join("augment_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    println!(
        "wrote {} samples ({} failures) to {}",
        dataset.len(),
        report.failures.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(ctx: &Env, manifest: &Path, out: &Path) -> Result<()> {
    let dataset = load_manifest(manifest)?;
    let pipeline = ctx.config.seeded_pipeline(ctx.seed);
    let encoders = encoders(ctx)?;
    let checkpoint = train_with_progress(
        &dataset,
        &pipeline.decoder,
        &pipeline.train,
        &encoders,
        |epoch, loss| eprintln!("epoch {epoch} loss {loss:.6}"),
    )?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    checkpoint.save(out)?;
    println!("wrote checkpoint {}", out.display());
    Ok(())
}

fn predict(
    ctx: &Env,
    checkpoint: &Path,
    image: &Path,
    instruction: &str,
    out: &Path,
    opacity: Option<f64>,
) -> Result<()> {
    let checkpoint = load_checkpoint(checkpoint)?;
    let img = read_rgb_png(image)?;
    let encoders = encoders(ctx)?;
    let pred = forward(&img, instruction, &checkpoint, &encoders)?;
    let overlay = visualize_overlay(&img, &pred.probabilities, opacity.unwrap_or(ctx.config.opacity))?;
    write_rgb_png(&overlay, out)?;
    let pixel = pred.probabilities.argmax();
    let summary = PredictionSummary {
        instruction,
        pixel,
        probability: pred.probabilities.get(pixel.0, pixel.1),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn plan_cmd(
    ctx: &Env,
    scene: &Path,
    instruction: &str,
    image: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let planner = planner(ctx)?;
    let text = fs::read_to_string(scene).with_context(|| format!("reading {}", scene.display()))?;
    let file: SceneFile = serde_json::from_str(&text)?;
    let description = SceneDescription {
        height: file.height,
        width: file.width,
        objects: file.objects,
        image: image.map(read_rgb_png).transpose()?,
    };
    let decision = plan(&description, instruction, planner.as_ref())?;
    println!("{decision}");
    if let Some(out) = out {
        fs::write(out, serde_json::to_string_pretty(&decision)? + "\n")?;
    }
    Ok(())
}

fn simulate(
    ctx: &Env,
    checkpoint: &Path,
    task_id: Option<&str>,
    instruction: Option<&str>,
    out: &Path,
) -> Result<()> {
    let checkpoint = load_checkpoint(checkpoint)?;
    let encoders = encoders(ctx)?;
    let planner = planner(ctx)?;
    let pipeline = ctx.config.seeded_pipeline(ctx.seed);
    let mut tasks = generate_scenarios(&library(ctx)?, &pipeline.sim, &pipeline.scenarios)?;
    if let Some(id) = task_id {
        tasks.retain(|t| t.id == id);
        if tasks.is_empty() {
            return Err(CliError::UnknownTask(id.to_string()).into());
        }
    }
    if let Some(text) = instruction {
        tasks[0].instruction = text.to_string();
    }
    let setup = EvalSetup {
        checkpoint: &checkpoint,
        encoders: &encoders,
        planner: planner.as_ref(),
        seed: pipeline.scenarios.seed,
    };
    fs::create_dir_all(out)?;
    let mut log = String::new();
    let mut successes = 0;
    for task in &tasks {
        let rendered = render(&task.scene);
        write_rgb_png(&rendered.image, &out.join(format!("{}.before.png", task.id)))?;
        let pred = forward(&rendered.image, &task.instruction, &checkpoint, &encoders)?;
        let overlay = visualize_overlay(&rendered.image, &pred.probabilities, ctx.config.opacity)?;
        write_rgb_png(&overlay, &out.join(format!("{}.overlay.png", task.id)))?;
        let record = run_task(Method::Ours, task, &setup);
        let mut moved = false;
        if let Ok((action, _)) = act(Method::Ours, task, &rendered, &setup) {
            let (_, next) = step(&task.scene, &action, task);
            moved = next != task.scene;
            write_rgb_png(&render(&next).image, &out.join(format!("{}.after.png", task.id)))?;
        }
        successes += record.success as usize;
        log.push_str(&serde_json::to_string(&SimulationRecord {
            record: &record,
            moved,
        })?);
        log.push('\n');
    }
    fs::write(out.join("steps.jsonl"), log)?;
    println!("{successes}/{} tasks succeeded", tasks.len());
    Ok(())
}

fn evaluate_cmd(ctx: &Env, checkpoint: &Path, out: &Path, with_random: bool) -> Result<()> {
    let checkpoint = load_checkpoint(checkpoint)?;
    let encoders = encoders(ctx)?;
    let planner = planner(ctx)?;
    let pipeline = ctx.config.seeded_pipeline(ctx.seed);
    let tasks = generate_scenarios(&library(ctx)?, &pipeline.sim, &pipeline.scenarios)?;
    let setup = EvalSetup {
        checkpoint: &checkpoint,
        encoders: &encoders,
        planner: planner.as_ref(),
        seed: pipeline.scenarios.seed,
    };
    let mut methods = METHODS.to_vec();
    if with_random {
        methods.push(Method::Random);
    }
    let evaluation = evaluate(&tasks, &setup, &methods);
    fs::create_dir_all(out)?;
    let tsv = evaluation.table.to_tsv();
    fs::write(out.join("results.tsv"), &tsv)?;
    fs::write(out.join("tasks.jsonl"), evaluation.log_jsonl())?;
    print!("{tsv}");
    Ok(())
}

fn visualize(
    ctx: &Env,
    manifest: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
    opacity: Option<f64>,
) -> Result<()> {
    let dataset = load_manifest(manifest)?;
    let model = match checkpoint {
        None => None,
        Some(p) => Some((load_checkpoint(p)?, encoders(ctx)?)),
    };
    let opacity = opacity.unwrap_or(ctx.config.opacity);
    fs::create_dir_all(out)?;
    for (i, s) in dataset.samples.iter().enumerate() {
        let map = match &model {
            None => s.affordance.clone(),
            Some((ckpt, enc)) => forward(&s.image, &s.instruction, ckpt, enc)?.probabilities,
        };
        let overlay = visualize_overlay(&s.image, &map, opacity)?;
        write_rgb_png(&overlay, &out.join(format!("{i:05}.overlay.png")))?;
    }
    println!("wrote {} overlays to {}", dataset.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names() {
        assert_eq!(variant_name("EmptyDataset"), "EmptyDataset");
        assert_eq!(variant_name("Model(EmptyDataset)"), "EmptyDataset");
        assert_eq!(variant_name("Parse { path: \"x\", line: 1 }"), "Parse");
        assert_eq!(variant_name("Io(Os { code: 2 })"), "Io");
        assert_eq!(variant_name("ClientFailure(ClientError(\"x\"))"), "ClientError");
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hostr::harness::{
    dump_graph, evaluate, run_ablations, train, verify_inspection, Checkpoint, RunConfig, Variant, DEFAULT_TOP_K,
};
use hostr::model::HostrModel;
use hostr::synth::{generate_corpus, generate_episode, read_corpus, write_corpus, Split, SplitCounts, TaskTemplate, WorldSpec};
use hostr::tensor::grad_check;
use hostr::nn::Bound;

#[derive(Parser)]
#[command(name = "hostr", version, about = "Object-oriented spatio-temporal reasoning for video QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Generate(GenerateArgs),
    /// Train a model on a corpus and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a corpus.
    Eval(EvalArgs),
    /// Export attention weights and adjacency matrices for one episode.
    Inspect(InspectArgs),
    /// Train every ablation variant and print the comparison table.
    Ablate(AblateArgs),
    /// Compare analytic gradients of the full model with finite differences.
    Gradcheck(GradcheckArgs),
    /// Print a configuration file sized for a synthetic world.
    Config(ConfigArgs),
}

#[derive(Args)]
struct WorldArgs {
    #[arg(long, default_value_t = 6)]
    objects: usize,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    d_app: usize,
    #[arg(long, default_value_t = 32)]
    d_g: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0.05)]
    occlusion: f64,
    #[arg(long, default_value_t = 3)]
    moving_distractors: usize,
    #[arg(long, default_value_t = 4)]
    max_count: u32,
    #[arg(long)]
    motion_features: bool,
}

impl WorldArgs {
    fn spec(&self) -> WorldSpec {
        WorldSpec {
            num_objects: self.objects,
            num_frames: self.frames,
            d_app: self.d_app,
            d_g: self.d_g,
            noise: self.noise,
            occlusion: self.occlusion,
            moving_distractors: self.moving_distractors,
            max_count: self.max_count,
            motion_features: self.motion_features,
            ..WorldSpec::default()
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    template: TaskTemplate,
    #[arg(long, default_value_t = 4000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    val: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// TOML file with `[model]` and `[train]` tables; defaults to one sized for the corpus.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Train in single precision.
    #[arg(long)]
    f32: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    episode: String,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    objects: usize,
    #[arg(long, default_value_t = 2)]
    clips: usize,
    #[arg(long, default_value_t = 3)]
    clip_len: usize,
    #[arg(long, default_value_t = 2)]
    gcn_layers: usize,
    #[arg(long, default_value_t = 5)]
    answers: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    template: TaskTemplate,
}

fn config_for(path: Option<&PathBuf>, world: &WorldSpec, template: TaskTemplate) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(RunConfig::for_world(world, template)),
    }
}

fn load_model(path: &PathBuf) -> Result<HostrModel<f64>> {
    let ck = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ck.to_model()?)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(a) => {
            let spec = a.world.spec();
            let counts = SplitCounts {
                train: a.train,
                val: a.val,
                test: a.test,
            };
            let corpus = generate_corpus(&spec, a.template, counts, a.seed)?;
            write_corpus(&corpus, &a.out)?;
            println!("wrote {} episodes to {}", a.train + a.val + a.test, a.out.display());
        }
        Command::Train(a) => {
            let corpus = read_corpus(&a.corpus)?;
            let m = &corpus.manifest;
            let rc = config_for(a.config.as_ref(), &m.world, m.template)?;
            let start = Instant::now();
            let (ck, report) = if a.f32 {
                let out = train::<f32>(rc.model, &rc.train, &corpus)?;
                (Checkpoint::from_model(&out.model), out.report)
            } else {
                let out = train::<f64>(rc.model, &rc.train, &corpus)?;
                (Checkpoint::from_model(&out.model), out.report)
            };
            for e in &report.epochs {
                println!("epoch {:>3}  lr {:.2e}  loss {:.4}  val {:.4}", e.epoch, e.learning_rate, e.train_loss, e.val_metric);
            }
            println!(
                "best epoch {}  val {:.4}  test {:.4}  ({:.1} s)",
                report.best_epoch,
                report.best_val_metric,
                report.test_metric,
                start.elapsed().as_secs_f64()
            );
            let ck = Checkpoint { report: Some(report), ..ck };
            ck.save(&a.out)?;
        }
        Command::Eval(a) => {
            let model = load_model(&a.checkpoint)?;
            let corpus = read_corpus(&a.corpus)?;
            let e = evaluate(&model, corpus.split(a.split))?;
            println!("{}", serde_json::to_string_pretty(&e)?);
        }
        Command::Inspect(a) => {
            let model = load_model(&a.checkpoint)?;
            let corpus = read_corpus(&a.corpus)?;
            let Some(ep) = [Split::Train, Split::Val, Split::Test]
                .iter()
                .flat_map(|&s| corpus.split(s))
                .find(|e| e.video_id == a.episode)
            else {
                bail!("no episode '{}' in {}", a.episode, a.corpus.display());
            };
            let rec = dump_graph(&model, ep, a.top_k)?;
            verify_inspection(&rec, 1e-9)?;
            fs::write(&a.out, serde_json::to_string_pretty(&rec)?)?;
            println!("wrote {}", a.out.display());
        }
        Command::Ablate(a) => {
            let corpus = read_corpus(&a.corpus)?;
            let m = &corpus.manifest;
            let rc = config_for(a.config.as_ref(), &m.world, m.template)?;
            let report = run_ablations::<f64>(&corpus, &rc.model, &rc.train, &Variant::table_rows(), &a.seeds)?;
            for row in &report.rows {
                println!("{:<40} seed {:>3}  test {:.4}  params {}", row.label, row.seed, row.test_metric, row.param_count);
            }
            if let Some(out) = a.out {
                fs::write(out, serde_json::to_string_pretty(&report)?)?;
            }
        }
        Command::Gradcheck(a) => {
            let world = WorldSpec {
                num_objects: a.objects,
                num_frames: a.clips * a.clip_len,
                d_app: 12,
                d_g: 6,
                moving_distractors: 1,
                ..WorldSpec::default()
            };
            let ep = generate_episode(&world, TaskTemplate::Attribute, a.seed)?;
            let mut config = RunConfig::for_world(&world, TaskTemplate::Attribute).model;
            config.d = a.d;
            config.clip_ostr.d = a.d;
            config.video_ostr.d = a.d;
            config.clip_ostr.gcn_layers = a.gcn_layers;
            config.video_ostr.gcn_layers = a.gcn_layers;
            config.embed_dim = a.d;
            config.clips = a.clips;
            config.clip_len = a.clip_len;
            config.num_answers = a.answers;
            let model = HostrModel::<f64>::new(config, a.seed)?;
            let inputs = model.params.tensors().to_vec();
            let start = Instant::now();
            let report = grad_check(
                |g, ids| {
                    let p = Bound::from_nodes(ids.to_vec());
                    let (_, l) = model.forward_loss(g, &p, &ep.video, &ep.question, hostr::model::Target::Class(0))?;
                    Ok(l)
                },
                &inputs,
                a.step,
                a.tolerance,
            );
            println!(
                "{} parameters  max relative error {:.3e}  tolerance {:.1e}  {:.1} s  {}",
                model.param_count(),
                report.max_rel_error,
                a.tolerance,
                start.elapsed().as_secs_f64(),
                if report.passed { "PASS" } else { "FAIL" }
            );
            if !report.passed {
                bail!("gradient check failed{}", report.error.map(|e| format!(": {e}")).unwrap_or_default());
            }
        }
        Command::Config(a) => {
            print!("{}", RunConfig::for_world(&a.world.spec(), a.template).to_toml()?);
        }
    }
    Ok(())
}

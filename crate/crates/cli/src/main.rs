use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use rnr::config::{apply_overrides, from_toml, to_toml};
use rnr::data::{generate_dataset, tokenize, Dataset, GenConfig, Split, Vocab};
use rnr::image::{render_overlay, Mask, ProbMap, RgbImage};
use rnr::metrics::{self, SampleInfo, Stratum, DEFAULT_KS};
use rnr::model::{Batch, ModelKind};
use rnr::planner::{mask_to_goal, rrt_plan, validate_path, CameraModel, GroundScene, RrtParams};
use rnr::train::{checkpoint, predict_dataset, train, EpochStats, TrainConfig, TrainHooks};
use rnr::{gradsuite, Error, Result};

/// Written next to every run's outputs.
const STAMP_FILE: &str = "FORMAT_VERSION";

#[derive(Parser, Debug)]
#[command(name = "rnr", version, about = "Referring navigable regions: data, training, evaluation and planning")]
struct Cli {
    /// TOML file with the subcommand's configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Predict the region for one image and command.
    Infer(InferArgs),
    /// Plan a path to the region in a probability or mask image.
    Plan(PlanArgs),
    /// Draw prediction and ground truth over an image.
    Render(RenderArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Training samples; validation and test get a tenth each.
    #[arg(long)]
    n: Option<usize>,
    /// Generate only this split, with `--n` samples.
    #[arg(long)]
    split: Option<Split>,
    /// key=value overrides.
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    model: Option<ModelKind>,
    /// Dataset root.
    #[arg(long)]
    data: Option<PathBuf>,
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    stratify: Option<String>,
    /// Comma-separated k values for Recall@k.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    threshold: Option<f32>,
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    command: Option<String>,
    /// Vocabulary file; the standard vocabulary when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f32>,
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Sample metadata or bare ground-scene JSON.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f32>,
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    /// Predicted probability map.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Ground-truth mask; empty when omitted.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f32>,
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    overrides: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GenRun {
    seed: u64,
    n: usize,
    splits: Vec<Split>,
    generator: GenConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalRun {
    ckpt: PathBuf,
    data: PathBuf,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stratify: Option<String>,
    k: Vec<usize>,
    threshold: f32,
}

#[derive(Debug, Serialize, Deserialize)]
struct InferRun {
    ckpt: PathBuf,
    image: PathBuf,
    command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<PathBuf>,
    threshold: f32,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanRun {
    mask: PathBuf,
    scene: PathBuf,
    threshold: f32,
    rrt: RrtParams,
}

#[derive(Debug, Serialize, Deserialize)]
struct RenderRun {
    image: PathBuf,
    mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt: Option<PathBuf>,
    threshold: f32,
}

#[derive(Debug, Serialize, Deserialize)]
struct GradcheckRun {
    eps: f64,
    tolerance: f64,
}

/// Loads the `--config` file if given, otherwise starts from `default`.
fn base_config<C: DeserializeOwned>(path: Option<&Path>, default: impl FnOnce() -> Result<C>) -> Result<C> {
    match path {
        Some(p) => from_toml(&std::fs::read_to_string(p)?),
        None => default(),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("missing required flag --{flag}")))
}

/// Creates the run directory and writes the effective config and the
/// format stamp before any work starts.
fn prepare_run<C: Serialize>(out: &Path, config: &C) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let text = to_toml(config)?;
    std::fs::write(out.join("config.toml"), &text)?;
    std::fs::write(
        out.join(STAMP_FILE),
        format!(
            "rnr {}\ncheckpoint {}\n",
            env!("CARGO_PKG_VERSION"),
            checkpoint::FORMAT_VERSION
        ),
    )?;
    eprintln!("effective config ({}):\n{text}", out.join("config.toml").display());
    Ok(())
}

fn gen_data(cli: &Cli, args: &GenArgs) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let mut run = base_config(cli.config.as_deref(), || {
        Ok(GenRun {
            seed: 42,
            n: 2000,
            splits: vec![Split::Train, Split::Val, Split::Test],
            generator: GenConfig::default(),
        })
    })?;
    if let Some(s) = cli.seed {
        run.seed = s;
    }
    if let Some(n) = args.n {
        run.n = n;
    }
    if let Some(split) = args.split {
        run.splits = vec![split];
    }
    let run: GenRun = apply_overrides(&run, &args.overrides, &[])?;
    prepare_run(&out, &run)?;
    for &split in &run.splits {
        let n = if split == Split::Train || run.splits.len() == 1 {
            run.n
        } else {
            run.n.div_ceil(10)
        };
        generate_dataset(&out, split, n, run.seed, &run.generator)?;
        eprintln!("{}: {n} samples", split.name());
    }
    Ok(())
}

fn train_cmd(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let kind = args.model.unwrap_or(ModelKind::Tbm);
    let mut cfg = base_config(cli.config.as_deref(), || Ok(TrainConfig::desk(kind)))?;
    if let Some(k) = args.model {
        cfg.model.kind = k;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.data {
        cfg.data_dir = d.clone();
    }
    let cfg = cfg.with_overrides(&args.overrides)?;
    prepare_run(&out, &cfg)?;
    let train_set = Dataset::load(&cfg.data_dir, Split::Train, cfg.model.max_len)?;
    let val_set = Dataset::load(&cfg.data_dir, Split::Val, cfg.model.max_len)?;
    let mut report = |s: &EpochStats| {
        let pgm = s.val_pgm.map(|p| format!("{p:.4}")).unwrap_or_default();
        eprintln!("epoch {:>3}  loss {:.5}  val pgm {pgm}", s.epoch, s.mean_loss);
    };
    let outcome = train(
        &cfg,
        &train_set,
        Some(&val_set),
        TrainHooks {
            out_dir: Some(&out),
            on_epoch: Some(&mut report),
        },
    )?;
    eprintln!("best epoch {}", outcome.best_epoch);
    Ok(())
}

fn eval_cmd(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut run = base_config(cli.config.as_deref(), || {
        Ok(EvalRun {
            ckpt: required(args.ckpt.clone(), "ckpt")?,
            data: args.data.clone().unwrap_or_else(|| PathBuf::from("data")),
            split: Split::Val,
            stratify: None,
            k: DEFAULT_KS.to_vec(),
            threshold: 0.5,
        })
    })?;
    if let Some(c) = &args.ckpt {
        run.ckpt = c.clone();
    }
    if let Some(d) = &args.data {
        run.data = d.clone();
    }
    if let Some(s) = args.split {
        run.split = s;
    }
    if let Some(s) = &args.stratify {
        run.stratify = Some(s.clone());
    }
    if let Some(k) = &args.k {
        run.k = k.clone();
    }
    if let Some(t) = args.threshold {
        run.threshold = t;
    }
    let run: EvalRun = apply_overrides(&run, &args.overrides, &["stratify"])?;
    let stratum = run.stratify.as_deref().map(str::parse::<Stratum>).transpose()?;
    prepare_run(&out, &run)?;
    let (model, params) = checkpoint::load_model(&run.ckpt, None)?;
    let ds = Dataset::load(&run.data, run.split, model.config.max_len)?;
    let probs = predict_dataset(&model, &params, &ds, 16)?;
    let gts: Vec<Mask> = ds.examples.iter().map(|e| e.mask.clone()).collect();
    let report = match stratum {
        Some(s) => {
            let info: Vec<SampleInfo> = ds
                .examples
                .iter()
                .map(|e| SampleInfo {
                    word_count: e.word_count,
                    action: e.action,
                })
                .collect();
            metrics::stratified_report(&info, &probs, &gts, s, &run.k, run.threshold)?
        }
        None => metrics::evaluate(&probs, &gts, &run.k, run.threshold)?,
    };
    let json = report.to_json()?;
    std::fs::write(out.join("report.json"), &json)?;
    print!("{json}");
    Ok(())
}

fn infer_cmd(cli: &Cli, args: &InferArgs) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut run = base_config(cli.config.as_deref(), || {
        Ok(InferRun {
            ckpt: required(args.ckpt.clone(), "ckpt")?,
            image: required(args.image.clone(), "image")?,
            command: required(args.command.clone(), "command")?,
            vocab: None,
            threshold: 0.5,
        })
    })?;
    if let Some(c) = &args.ckpt {
        run.ckpt = c.clone();
    }
    if let Some(i) = &args.image {
        run.image = i.clone();
    }
    if let Some(c) = &args.command {
        run.command = c.clone();
    }
    if let Some(v) = &args.vocab {
        run.vocab = Some(v.clone());
    }
    if let Some(t) = args.threshold {
        run.threshold = t;
    }
    let run: InferRun = apply_overrides(&run, &args.overrides, &["vocab"])?;
    prepare_run(&out, &run)?;
    let (model, params) = checkpoint::load_model(&run.ckpt, None)?;
    let vocab = match &run.vocab {
        Some(p) => Vocab::load(p)?,
        None => Vocab::standard(),
    };
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens, checkpoint expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let img = RgbImage::read_ppm(&run.image)?;
    let size = model.config.image_size;
    if (img.width, img.height) != (size, size) {
        return Err(Error::dim("infer image", &[img.height, img.width], &[size, size]));
    }
    let example = rnr::data::Example {
        id: "input".into(),
        image: img.to_chw(),
        mask: Mask::new(size, size),
        tokens: tokenize(&run.command, &vocab, model.config.max_len),
        command: run.command.clone(),
        action: rnr::data::Action::Maintain,
        word_count: rnr::data::word_count(&run.command),
        meta_path: PathBuf::new(),
    };
    let mut batch = Batch::<f32>::from_examples(&[&example])?;
    batch.masks = None;
    let prob = model.predict(&params, &batch)?.remove(0);
    prob.write_pgm(&out.join("prob.pgm"))?;
    let mask = prob.threshold(run.threshold);
    mask.write_pgm(&out.join("mask.pgm"))?;
    eprintln!("{} pixels above {}", mask.count(), run.threshold);
    Ok(())
}

fn plan_cmd(cli: &Cli, args: &PlanArgs) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut run = base_config(cli.config.as_deref(), || {
        Ok(PlanRun {
            mask: required(args.mask.clone(), "mask")?,
            scene: required(args.scene.clone(), "scene")?,
            threshold: 0.5,
            rrt: RrtParams::default(),
        })
    })?;
    if let Some(m) = &args.mask {
        run.mask = m.clone();
    }
    if let Some(s) = &args.scene {
        run.scene = s.clone();
    }
    if let Some(t) = args.threshold {
        run.threshold = t;
    }
    if let Some(s) = cli.seed {
        run.rrt.seed = s;
    }
    let run: PlanRun = apply_overrides(&run, &args.overrides, &[])?;
    prepare_run(&out, &run)?;
    let prob = ProbMap::read_pgm(&run.mask)?;
    if prob.width != prob.height {
        return Err(Error::Config("mask must be square".into()));
    }
    let scene = GroundScene::load(&run.scene)?;
    let goal = mask_to_goal(&prob, &CameraModel::synthetic(prob.width), run.threshold)?;
    let traj = rrt_plan(&scene, scene.start, goal.world, &run.rrt)?;
    let check = validate_path(&traj, &scene, goal.world, &run.rrt);
    if !check.passed {
        return Err(Error::Contract(format!("planned path fails validation: {check:?}")));
    }
    traj.write_csv(&out.join("trajectory.csv"))?;
    eprintln!(
        "goal pixel ({}, {}) -> ({:.3}, {:.3}) m; {} waypoints, {:.2} m, {} iterations",
        goal.row,
        goal.col,
        goal.world.0,
        goal.world.1,
        traj.waypoints.len(),
        traj.length(),
        traj.iterations
    );
    Ok(())
}

fn render_cmd(cli: &Cli, args: &RenderArgs) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut run = base_config(cli.config.as_deref(), || {
        Ok(RenderRun {
            image: required(args.image.clone(), "image")?,
            mask: required(args.mask.clone(), "mask")?,
            gt: None,
            threshold: 0.5,
        })
    })?;
    if let Some(i) = &args.image {
        run.image = i.clone();
    }
    if let Some(m) = &args.mask {
        run.mask = m.clone();
    }
    if let Some(g) = &args.gt {
        run.gt = Some(g.clone());
    }
    if let Some(t) = args.threshold {
        run.threshold = t;
    }
    let run: RenderRun = apply_overrides(&run, &args.overrides, &["gt"])?;
    prepare_run(&out, &run)?;
    let img = RgbImage::read_ppm(&run.image)?;
    let pred = ProbMap::read_pgm(&run.mask)?;
    let gt = match &run.gt {
        Some(p) => Mask::read_pgm(p)?,
        None => Mask::new(img.width, img.height),
    };
    render_overlay(&img, &pred, &gt, run.threshold)?.write_ppm(&out.join("overlay.ppm"))
}

fn gradcheck_cmd(cli: &Cli, args: &GradcheckArgs) -> Result<bool> {
    let defaults = gradsuite::default_options();
    let run = base_config(cli.config.as_deref(), || {
        Ok(GradcheckRun {
            eps: defaults.eps,
            tolerance: defaults.tol,
        })
    })?;
    let run: GradcheckRun = apply_overrides(&run, &args.overrides, &[])?;
    if let Some(out) = &cli.out {
        prepare_run(out, &run)?;
    }
    let opts = rnr::tensor::gradcheck::GradCheckOptions {
        eps: run.eps,
        tol: run.tolerance,
        ..defaults
    };
    let results = gradsuite::run(opts)?;
    let mut lines = String::new();
    for r in &results {
        let line = format!(
            "{:<4} {:<24} max rel {:.3e}  ({} coordinates, {:.2} s)\n",
            if r.report.passed { "ok" } else { "FAIL" },
            r.name,
            r.report.max_rel_error,
            r.report.checked,
            r.seconds
        );
        print!("{line}");
        lines.push_str(&line);
    }
    let failed = results.iter().filter(|r| !r.report.passed).count();
    let summary = format!("{} cases, {failed} failed\n", results.len());
    print!("{summary}");
    if let Some(out) = &cli.out {
        std::fs::write(out.join("gradcheck.txt"), lines + &summary)?;
    }
    Ok(failed == 0)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a).map(|_| true),
        Command::Train(a) => train_cmd(cli, a).map(|_| true),
        Command::Eval(a) => eval_cmd(cli, a).map(|_| true),
        Command::Infer(a) => infer_cmd(cli, a).map(|_| true),
        Command::Plan(a) => plan_cmd(cli, a).map(|_| true),
        Command::Render(a) => render_cmd(cli, a).map(|_| true),
        Command::Gradcheck(a) => gradcheck_cmd(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::PlanningFailure { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

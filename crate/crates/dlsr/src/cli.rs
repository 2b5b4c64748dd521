//! Command-line entry point: `search`, `export`, `train`, `eval`, `analyze`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dlsr_core::complexity::{
    genotype_complexity, hd_dims_for, search_space_cardinality, supernet_complexity, Cardinality, ComplexityReport,
};
use dlsr_core::genotype::{extract_genotype, DerivedNet, Genotype};
use dlsr_core::metrics::{evaluate_bicubic, reference_rows, ComplexitySummary, EvalReport, ScatterRow};
use dlsr_core::search::{SearchSession, StepRecord};
use dlsr_core::search_space::SupernetConfig;
use dlsr_core::train::{evaluate_model, load_body, TrainRecord, TrainSession};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{resume_search, resume_train, Checkpoint, CheckpointKind};
use crate::config::{Overrides, RunConfig, SEED_ENV};
use crate::imageio::{dataset_images, load_dir, sources, split};
use crate::scatter::write_scatter;
use crate::{genotype_io, scatter};

#[derive(Parser, Debug)]
#[command(name = "dlsr", version, about = "Differentiable architecture search for lightweight super-resolution")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Search a cell structure on a super-network.
    Search(SearchArgs),
    /// Extract the genotype stored in or implied by a checkpoint.
    Export(ExportArgs),
    /// Train a derived network from scratch.
    Train(TrainArgs),
    /// Score a trained network (or bicubic upsampling) on HR images.
    Eval(EvalArgs),
    /// Parameter and Multi-Adds accounting plus search-space size.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug, Default)]
pub struct OverrideArgs {
    /// Seed for every random stream; beats DLSR_SEED and the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// HR patch side.
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub hr_dir: Option<PathBuf>,
    /// HFEN weight.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Parameter-regularizer weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Validation-loss weight in the architecture gradient.
    #[arg(long)]
    pub lambda: Option<f64>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            steps: self.steps,
            warmup: self.warmup,
            batch_size: self.batch_size,
            patch_size: self.patch_size,
            scale: self.scale,
            channels: self.channels,
            cells: self.cells,
            hr_dir: self.hr_dir.clone(),
            mu: self.mu,
            gamma: self.gamma,
            lambda: self.lambda,
            init_from: None,
        }
    }
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a search checkpoint written with the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub genotype: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Initialize the body from a trained checkpoint; the tail is
    /// reinitialized when its scale differs.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Trained checkpoint; without it bicubic upsampling is scored.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Must match the genotype stored in the checkpoint.
    #[arg(long)]
    pub genotype: Option<PathBuf>,
    #[arg(long)]
    pub hr_dir: PathBuf,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write a params / Multi-Adds / PSNR CSV row.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
    /// Row name in the scatter file.
    #[arg(long, default_value = "model")]
    pub name: String,
    /// Append the published reference rows to the scatter file.
    #[arg(long)]
    pub references: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long, conflicts_with = "supernet")]
    pub genotype: Option<PathBuf>,
    /// Analyze the full super-network instead of a genotype.
    #[arg(long)]
    pub supernet: bool,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// List every layer instead of per-block totals.
    #[arg(long)]
    pub per_layer: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Search(a) => search(a),
        Command::Export(a) => export(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a, &mut std::io::stdout().lock()),
    }
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

/// JSON-lines log, appended to when resuming.
struct Jsonl(BufWriter<File>);

impl Jsonl {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        Ok(Self(BufWriter::new(file)))
    }

    fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.0, value)?;
        self.0.write_all(b"\n")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        Ok(self.0.flush()?)
    }
}

#[derive(Serialize)]
struct Entropy {
    mean: f64,
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct SearchLine {
    step: u64,
    warmup: bool,
    l_tr: f64,
    l_val: Option<f64>,
    l_p: f64,
    l1: f64,
    hfen: f64,
    entropy: Entropy,
    snapshot: Option<String>,
}

impl SearchLine {
    fn new(r: &StepRecord, snapshot: Option<String>) -> Self {
        Self {
            step: r.step,
            warmup: r.warmup,
            l_tr: r.train.total,
            l_val: r.valid.map(|v| v.total),
            l_p: r.train.param,
            l1: r.train.l1,
            hfen: r.train.hfen,
            entropy: Entropy {
                mean: r.entropy_mean,
                min: r.entropy_min,
                max: r.entropy_max,
            },
            snapshot,
        }
    }
}

fn periodic(every: u64, step: u64) -> bool {
    every > 0 && step % every == 0
}

fn search(args: SearchArgs) -> Result<()> {
    let cfg = RunConfig::resolve(args.config.as_deref(), env_seed().as_deref(), &args.overrides.to_overrides())?;
    prepare_out(&args.out)?;
    cfg.echo(&args.out)?;
    let data = dataset_images(&cfg.dataset)?;
    let mut session = SearchSession::new(cfg.search.clone(), &cfg.network, sources(&cfg.dataset, &data.images)?)?;
    if let Some(path) = &args.resume {
        resume_search(&mut session, &Checkpoint::load(path)?)?;
        log::info!("resumed search at step {}", session.step());
    }
    let genotypes = args.out.join("genotypes");
    let checkpoints = args.out.join("checkpoints");
    fs::create_dir_all(&genotypes)?;
    fs::create_dir_all(&checkpoints)?;
    let mut log = Jsonl::open(&args.out.join("search.jsonl"), args.resume.is_some())?;
    while !session.is_finished() {
        let record = session.advance()?;
        let snapshot = match &record.snapshot {
            Some(g) => {
                let rel = format!("genotypes/step_{:06}.json", record.step);
                genotype_io::write(&args.out.join(&rel), g)?;
                Some(rel)
            }
            None => None,
        };
        log.write(&SearchLine::new(&record, snapshot))?;
        if periodic(cfg.checkpoint_every, record.step) {
            log.flush()?;
            Checkpoint::from_search(&session).save(&checkpoints.join(format!("step_{:06}.ckpt", record.step)))?;
        }
        if record.step % 50 == 0 {
            log::info!("search step {} L_tr {:.5}", record.step, record.train.total);
        }
    }
    log.flush()?;
    Checkpoint::from_search(&session).save(&args.out.join("search.ckpt"))?;
    let genotype = session.genotype()?;
    genotype_io::write(&args.out.join("genotype.json"), &genotype)?;
    println!(
        "{}",
        serde_json::json!({
            "steps": session.step(),
            "snapshots": session.snapshots().len(),
            "genotype": args.out.join("genotype.json"),
        })
    );
    Ok(())
}

/// The genotype a checkpoint stands for.
pub fn checkpoint_genotype(ckpt: &Checkpoint) -> Result<Genotype> {
    match ckpt.header.kind {
        CheckpointKind::Search => Ok(extract_genotype(&ckpt.arch_params()?, &ckpt.header.network)?),
        CheckpointKind::Train => ckpt.header.genotype.clone().context("training checkpoint has no genotype"),
    }
}

fn export(args: ExportArgs) -> Result<()> {
    let genotype = checkpoint_genotype(&Checkpoint::load(&args.checkpoint)?)?;
    genotype_io::write(&args.out, &genotype)
}

/// The network for `genotype` at `scale`, keeping the distillation and
/// attention settings of `base`.
fn derived_config(genotype: &Genotype, base: &SupernetConfig, scale: usize) -> (Genotype, SupernetConfig) {
    let mut g = genotype.clone();
    g.scale = scale;
    let cfg = SupernetConfig {
        channels: g.channels,
        num_cells: g.num_cells,
        scale,
        ..base.clone()
    };
    (g, cfg)
}

#[derive(Serialize)]
struct HeldOut {
    model: EvalReport,
    bicubic: EvalReport,
    psnr_gain: f64,
}

fn train(args: TrainArgs) -> Result<()> {
    let mut overrides = args.overrides.to_overrides();
    overrides.init_from = args.init_from.clone();
    let cfg = RunConfig::resolve(args.config.as_deref(), env_seed().as_deref(), &overrides)?;
    prepare_out(&args.out)?;
    cfg.echo(&args.out)?;
    let (genotype, net_cfg) = derived_config(&genotype_io::read(&args.genotype)?, &cfg.network, cfg.dataset.scale);
    let data = dataset_images(&cfg.dataset)?;
    let parts = split(&cfg.dataset, &data.images)?;
    let mut session = TrainSession::with_network(&genotype, &net_cfg, cfg.train.clone(), parts.train)?;
    if let Some(path) = &cfg.train.init_from {
        let init = Checkpoint::load(Path::new(path))?;
        let reinit_tail = init.header.network.scale != net_cfg.scale;
        let copied = load_body(&mut session.store, &init.params(), reinit_tail)?;
        log::info!("initialized {} tensors from {}", copied.len(), path);
    }
    if let Some(path) = &args.resume {
        resume_train(&mut session, &Checkpoint::load(path)?)?;
        log::info!("resumed training at step {}", session.step());
    }
    let checkpoints = args.out.join("checkpoints");
    fs::create_dir_all(&checkpoints)?;
    let mut log = Jsonl::open(&args.out.join("train.jsonl"), args.resume.is_some())?;
    while !session.is_finished() {
        let record: TrainRecord = session.advance()?;
        log.write(&record)?;
        if periodic(cfg.checkpoint_every, record.step) {
            log.flush()?;
            Checkpoint::from_train(&session).save(&checkpoints.join(format!("step_{:06}.ckpt", record.step)))?;
        }
        if record.step % 100 == 0 {
            log::info!("train step {} loss {:.5}", record.step, record.loss.total);
        }
    }
    log.flush()?;
    Checkpoint::from_train(&session).save(&args.out.join("train.ckpt"))?;
    genotype_io::write(&args.out.join("genotype.json"), &genotype)?;
    if !parts.held_out.is_empty() {
        let model = evaluate_model(&session.net, &session.store, &parts.held_out)?;
        let bicubic = evaluate_bicubic(&parts.held_out, net_cfg.scale)?;
        let held = HeldOut {
            psnr_gain: model.mean_psnr - bicubic.mean_psnr,
            model,
            bicubic,
        };
        fs::write(args.out.join("eval.json"), serde_json::to_string_pretty(&held)? + "\n")?;
        println!(
            "{}",
            serde_json::json!({
                "steps": session.step(),
                "held_out_psnr": held.model.mean_psnr,
                "bicubic_psnr": held.bicubic.mean_psnr,
            })
        );
    } else {
        println!("{}", serde_json::json!({ "steps": session.step() }));
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let loaded = load_dir(&args.hr_dir)?;
    ensure!(
        !loaded.images.is_empty() || !loaded.skipped.is_empty(),
        "no images in {}",
        args.hr_dir.display()
    );
    let (mut report, complexity) = match &args.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ensure!(ckpt.header.kind == CheckpointKind::Train, "{} is not a training checkpoint", path.display());
            let stored = checkpoint_genotype(&ckpt)?;
            if let Some(gpath) = &args.genotype {
                ensure!(
                    genotype_io::read(gpath)? == stored,
                    "genotype {} does not match the checkpoint",
                    gpath.display()
                );
            }
            let net_cfg = ckpt.header.network.clone();
            if let Some(s) = args.scale {
                ensure!(s == net_cfg.scale, "checkpoint is x{}, asked for x{}", net_cfg.scale, s);
            }
            let mut store = dlsr_core::params::ParamStore::new();
            let net = DerivedNet::with_config(&stored, &net_cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
            load_body(&mut store, &ckpt.params(), false)?;
            let cost = genotype_complexity(&stored, &net_cfg, hd_dims_for(net_cfg.scale))?;
            (evaluate_model(&net, &store, &loaded.images)?, Some(cost))
        }
        None => {
            let scale = args.scale.context("--scale is required without --checkpoint")?;
            (evaluate_bicubic(&loaded.images, scale)?, None)
        }
    };
    if let Some(cost) = &complexity {
        report.complexity = Some(ComplexitySummary {
            params: cost.total_params,
            multiadds: cost.total_multiadds,
            hr_dims: cost.hr_dims,
        });
    }
    report.skipped.splice(0..0, loaded.skipped);
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &args.report {
        Some(path) => fs::write(path, &text).with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{}", text),
    }
    if let Some(path) = &args.scatter {
        let mut rows = vec![ScatterRow::new(
            &args.name,
            complexity.as_ref().map_or(0.0, |c| c.total_params as f64 / 1e3),
            complexity.as_ref().map_or(0.0, |c| c.total_multiadds as f64 / 1e9),
            report.mean_psnr,
        )];
        if args.references {
            rows.extend(reference_rows());
        }
        let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
        write_scatter(file, &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
pub struct AnalyzeReport {
    pub subject: String,
    pub network: SupernetConfig,
    pub complexity: ComplexityReport,
    pub candidate_params: u64,
    pub cardinality: Cardinality,
}

/// Per-layer rows folded to their first two name components.
fn grouped(report: &ComplexityReport) -> Vec<(String, u64, u64)> {
    let mut rows: Vec<(String, u64, u64)> = Vec::new();
    for layer in &report.per_layer {
        let key = match layer.name.split('.').collect::<Vec<_>>().as_slice() {
            ["cells", j, ..] => format!("cells.{}", j),
            ["arch", kind, ..] => format!("arch.{}", kind),
            [first, ..] => first.to_string(),
            [] => String::new(),
        };
        match rows.last_mut() {
            Some(last) if last.0 == key => {
                last.1 += layer.params;
                last.2 += layer.multiadds;
            }
            _ => rows.push((key, layer.params, layer.multiadds)),
        }
    }
    rows
}

fn table(report: &AnalyzeReport, per_layer: bool) -> String {
    let c = &report.complexity;
    let rows: Vec<(String, u64, u64)> = if per_layer {
        c.per_layer.iter().map(|l| (l.name.clone(), l.params, l.multiadds)).collect()
    } else {
        grouped(c)
    };
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(16);
    let mut out = format!(
        "{} at x{}, Multi-Adds on {}x{} output\n",
        report.subject, c.scale, c.hr_dims.1, c.hr_dims.0
    );
    out += &format!("{:<width$}  {:>12}  {:>14}\n", "layer", "params", "multi-adds (G)");
    let line = |name: &str, p: u64, m: u64| format!("{:<width$}  {:>12}  {:>14.3}\n", name, p, m as f64 / 1e9);
    for (name, p, m) in &rows {
        out += &line(name, *p, *m);
    }
    out += &line("candidate ops", report.candidate_params, 0).replace("0.000", "     -");
    out += &line("total", c.total_params, c.total_multiadds);
    out += &format!(
        "search space, {} cells: {} (operation triples x (n-1)!), {} (top-2 connections)\n",
        report.network.num_cells, report.cardinality.one_input, report.cardinality.top2
    );
    out
}

pub fn analyze(args: AnalyzeArgs, stdout: &mut dyn Write) -> Result<()> {
    let (subject, network, complexity) = match (&args.genotype, args.supernet) {
        (Some(path), false) => {
            let g = genotype_io::read(path)?;
            ensure!(
                args.channels.is_none() && args.cells.is_none(),
                "--channels and --cells come from the genotype"
            );
            let (g, cfg) = derived_config(&g, &SupernetConfig::default(), args.scale.unwrap_or(g.scale));
            let hr = hd_dims_for(cfg.scale);
            (format!("genotype {}", path.display()), cfg.clone(), genotype_complexity(&g, &cfg, hr)?)
        }
        (None, true) => {
            let d = SupernetConfig::default();
            let cfg = SupernetConfig::new(
                args.channels.unwrap_or(d.channels),
                args.cells.unwrap_or(d.num_cells),
                args.scale.unwrap_or(d.scale),
            );
            let hr = hd_dims_for(cfg.scale);
            ("supernet".to_string(), cfg.clone(), supernet_complexity(&cfg, hr)?)
        }
        _ => bail!("give --genotype <file> or --supernet"),
    };
    let report = AnalyzeReport {
        subject,
        cardinality: search_space_cardinality(network.num_cells)?,
        candidate_params: complexity.candidate_params(),
        network,
        complexity,
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(path) = &args.report {
        fs::write(path, &json).with_context(|| format!("cannot write {}", path.display()))?;
    }
    match args.format {
        Format::Json => stdout.write_all(json.as_bytes())?,
        Format::Table => stdout.write_all(table(&report, args.per_layer).as_bytes())?,
    }
    Ok(())
}

/// Reads a scatter file back; used to check written plot data.
pub fn read_scatter_file(path: &Path) -> Result<Vec<ScatterRow>> {
    scatter::read_scatter(File::open(path).with_context(|| format!("cannot read {}", path.display()))?)
}

//! Command-line pipeline: synth → train → embed → cluster → uncertainty → sample → report.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use udgen_core::features::FeatureBank;
use udgen_core::genmodule::{micro_gradient_checks, train, GenerationModel, LossWeights, ModelConfig, TrainConfig};
use udgen_core::latent::{agglomerative_cluster, build_patch_space, embed_all, Linkage, PatchSpace};
use udgen_core::policy::{cell_probs, DrawSummary, PolicyKind, PolicySampler, PolicySpec};
use udgen_core::seg::{train_toy_segmenter, uncertainty_table, ToyTrainConfig};
use udgen_core::synth::{derive_seed, make_synth_dataset, split_labeled, Dataset, SynthSpec};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{Config, ConfigError};
use crate::dataset_io::{load_dataset, save_dataset};
use crate::error::FormatError;
use crate::pnm::{write_pgm, write_ppm};
use crate::reports::{policy_report, BatchManifest, ExampleRecord, PatchSpaceReport, PolicySpecRecord};
use crate::tables::{read_clusters, read_latents, read_uncertainty, write_clusters, write_history, write_latents, write_uncertainty};

/// Stream indices for seeds derived from the root seed.
mod stream {
    pub const SYNTH: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const MODEL: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const SEGMENTER: u64 = 6;
    pub const POLICY: u64 = 7;
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] FormatError),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<udgen_core::Error> for CliError {
    fn from(e: udgen_core::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "udgen", version, about = "Style/content generation pipeline for semi-supervised segmentation")]
pub struct Cli {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Working directory holding the pipeline artifacts.
    #[arg(long, global = true)]
    pub dir: Option<PathBuf>,
    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset and split it into labeled / unlabeled patches.
    Synth(SynthArgs),
    /// Train the generation model on every patch of a dataset.
    Train(TrainArgs),
    /// Encode every patch into content and style codes.
    Embed(EmbedArgs),
    /// Cluster content and style codes and build the patch space.
    Cluster(ClusterArgs),
    /// Train a toy segmenter and compute per-cell prediction variance.
    Uncertainty(UncertaintyArgs),
    /// Draw training examples with a generation policy.
    Sample(SampleArgs),
    /// Rebuild the policy report of a sampled batch.
    Report(ReportArgs),
    /// Gradient-check every training loss on micro models.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub content_factors: Option<usize>,
    #[arg(long)]
    pub style_factors: Option<usize>,
    #[arg(long)]
    pub per_combination: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_generator: Option<f64>,
    #[arg(long)]
    pub lr_discriminator: Option<f64>,
    #[arg(long)]
    pub w1: Option<f64>,
    #[arg(long)]
    pub w2: Option<f64>,
    #[arg(long)]
    pub w3: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub content_k: Option<usize>,
    #[arg(long)]
    pub style_k: Option<usize>,
    /// average, complete or single.
    #[arg(long)]
    pub linkage: Option<String>,
}

#[derive(Debug, Args)]
pub struct UncertaintyArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seg_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[arg(long)]
    pub uncertainty: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// random_cm, distribution_matching, hard_case or mixed.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Probability of a generated example.
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub batch: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of micro-model seeds, starting at the root seed.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
}

const CONFIG_KEYS: &[&str] = &[
    "seed",
    "dir",
    "patch_size",
    "content_factors",
    "style_factors",
    "per_combination",
    "noise",
    "jitter",
    "labeled_fraction",
    "steps",
    "batch_size",
    "lr_generator",
    "lr_discriminator",
    "w1",
    "w2",
    "w3",
    "content_k",
    "style_k",
    "linkage",
    "seg_steps",
    "policy",
    "count",
    "rate",
    "seeds",
    "eps",
];

struct Ctx {
    config: Config,
    dir: PathBuf,
    root_seed: u64,
}

impl Ctx {
    fn seed(&self, stream: u64) -> u64 {
        derive_seed(self.root_seed, stream)
    }

    fn path(&self, flag: Option<PathBuf>, default: &str) -> PathBuf {
        flag.unwrap_or_else(|| self.dir.join(default))
    }

    fn get<T>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.config.resolve(flag, key, default)?)
    }
}

fn require(items: &[(&Path, &str, &str)]) -> CliResult<()> {
    let missing: Vec<String> = items
        .iter()
        .filter(|(p, _, _)| !p.exists())
        .map(|(p, what, cmd)| format!("{what} `{}` (run `udgen {cmd}` first)", p.display()))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(FormatError::Missing(missing.join("; ")).into())
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    config.check_keys(CONFIG_KEYS)?;
    let dir = match cli.dir {
        Some(d) => d,
        None => config.get::<PathBuf>("dir")?.unwrap_or_else(|| PathBuf::from(".")),
    };
    let root_seed = config.resolve(cli.seed, "seed", 0)?;
    let ctx = Ctx { config, dir, root_seed };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Embed(a) => embed(&ctx, a),
        Command::Cluster(a) => cluster(&ctx, a),
        Command::Uncertainty(a) => uncertainty(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::Report(a) => report(&ctx, a),
        Command::Gradcheck(a) => gradcheck(&ctx, a),
    }
}

fn synth(ctx: &Ctx, a: SynthArgs) -> CliResult<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        patch_size: ctx.get(a.patch_size, "patch_size", d.patch_size)?,
        n_content_factors: ctx.get(a.content_factors, "content_factors", d.n_content_factors)?,
        n_style_factors: ctx.get(a.style_factors, "style_factors", d.n_style_factors)?,
        images_per_combination: ctx.get(a.per_combination, "per_combination", d.images_per_combination)?,
        noise_sigma: ctx.get(a.noise, "noise", d.noise_sigma)?,
        placement_jitter: ctx.get(a.jitter, "jitter", d.placement_jitter)?,
        seed: ctx.seed(stream::SYNTH),
    };
    let fraction = ctx.get(a.labeled_fraction, "labeled_fraction", 0.5)?;
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Usage(format!("labeled_fraction must be in (0, 1], got {fraction}")));
    }
    let out = ctx.path(a.out, "data");
    let dataset = split_labeled(&make_synth_dataset(&spec)?, fraction, ctx.seed(stream::SPLIT))?;
    save_dataset(&out, &dataset, Some(ctx.root_seed))?;
    println!("root seed: {}", ctx.root_seed);
    println!(
        "wrote {} patches ({} labeled, {} unlabeled) to {}",
        dataset.len(),
        dataset.labeled_ids.len(),
        dataset.unlabeled_ids.len(),
        out.display()
    );
    Ok(())
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    require(&[(path, "dataset", "synth")])?;
    Ok(load_dataset(path)?)
}

fn load_model(path: &Path) -> CliResult<Checkpoint> {
    require(&[(path, "model checkpoint", "train")])?;
    Ok(load_checkpoint(path)?)
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> CliResult<()> {
    let data_path = ctx.path(a.data, "data");
    let dataset = load_data(&data_path)?;
    let d = TrainConfig::default();
    let dw = LossWeights::default();
    let config = TrainConfig {
        steps: ctx.get(a.steps, "steps", d.steps)?,
        batch_size: ctx.get(a.batch_size, "batch_size", d.batch_size)?,
        lr_generator: ctx.get(a.lr_generator, "lr_generator", d.lr_generator)?,
        lr_discriminator: ctx.get(a.lr_discriminator, "lr_discriminator", d.lr_discriminator)?,
        final_lr_fraction: d.final_lr_fraction,
        seed: ctx.seed(stream::TRAIN),
        weights: LossWeights {
            w1: ctx.get(a.w1, "w1", dw.w1)?,
            w2: ctx.get(a.w2, "w2", dw.w2)?,
            w3: ctx.get(a.w3, "w3", dw.w3)?,
        },
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let patch_size = dataset.patch_size().ok_or(udgen_core::Error::Empty("dataset"))?;
    let model_config = ModelConfig {
        patch_size,
        ..ModelConfig::default()
    };
    let model_seed = ctx.seed(stream::MODEL);
    let model = GenerationModel::new(model_config, model_seed)?;
    let bank = FeatureBank::standard();
    let (trained, history) = train(&model, &bank, &dataset, &config)?;
    let out = ctx.path(a.out, "model");
    save_checkpoint(
        &out,
        &Checkpoint {
            model: trained,
            model_seed,
            bank,
            weights: config.weights,
        },
    )?;
    write_history(&out.join("history.csv"), &history)?;
    let window = 100.min(history.len());
    let mean = |rs: &[udgen_core::genmodule::StepRecord]| rs.iter().map(|r| r.losses.recon()).sum::<f64>() / rs.len() as f64;
    let first = mean(&history[..window]);
    let last = mean(&history[history.len() - window..]);
    println!("root seed: {}", ctx.root_seed);
    println!("trained {} steps on {} patches; checkpoint in {}", config.steps, dataset.len(), out.display());
    println!("mean reconstruction loss: first {window} steps {first:.4}, last {window} steps {last:.4}");
    Ok(())
}

fn embed(ctx: &Ctx, a: EmbedArgs) -> CliResult<()> {
    let dataset = load_data(&ctx.path(a.data, "data"))?;
    let ckpt = load_model(&ctx.path(a.model, "model"))?;
    let table = embed_all(&ckpt.model, &dataset)?;
    let out = ctx.path(a.out, "latents.csv");
    write_latents(&out, &table)?;
    println!("root seed: {}", ctx.root_seed);
    println!("wrote {} latent rows to {}", table.len(), out.display());
    Ok(())
}

fn cluster(ctx: &Ctx, a: ClusterArgs) -> CliResult<()> {
    let dataset = load_data(&ctx.path(a.data, "data"))?;
    let latents_path = ctx.path(a.latents, "latents.csv");
    require(&[(&latents_path, "latent table", "embed")])?;
    let latents = read_latents(&latents_path)?;
    if latents.len() != dataset.len() {
        return Err(FormatError::Malformed {
            path: latents_path,
            msg: format!("{} rows for {} patches", latents.len(), dataset.len()),
        }
        .into());
    }
    let content_k = ctx.get(a.content_k, "content_k", 3usize)?;
    let style_k = ctx.get(a.style_k, "style_k", 4usize)?;
    let linkage_name = ctx.get(a.linkage, "linkage", "average".to_string())?;
    let linkage = Linkage::from_name(&linkage_name)
        .ok_or_else(|| CliError::Usage(format!("unknown linkage `{linkage_name}` (average, complete, single)")))?;
    let content = agglomerative_cluster(&latents.contents(), content_k, linkage)?;
    let style = agglomerative_cluster(&latents.styles(), style_k, linkage)?;
    let space = build_patch_space(&content, &style, &dataset)?;
    let out = ctx.path(a.out, "clusters");
    write_clusters(&out.join("content.csv"), &content)?;
    write_clusters(&out.join("style.csv"), &style)?;
    PatchSpaceReport::new(&space, ctx.root_seed, linkage.name()).save(&out.join("patch_space.json"))?;
    println!("root seed: {}", ctx.root_seed);
    println!("patch space {}x{} ({} linkage) written to {}", space.m, space.n, linkage.name(), out.display());
    Ok(())
}

fn load_space(dir: &Path, dataset: &Dataset) -> CliResult<PatchSpace> {
    let (c, s) = (dir.join("content.csv"), dir.join("style.csv"));
    require(&[(&c, "content clusters", "cluster"), (&s, "style clusters", "cluster")])?;
    Ok(build_patch_space(&read_clusters(&c)?, &read_clusters(&s)?, dataset)?)
}

fn uncertainty(ctx: &Ctx, a: UncertaintyArgs) -> CliResult<()> {
    let (data_path, model_path) = (ctx.path(a.data, "data"), ctx.path(a.model, "model"));
    let (latents_path, clusters_path) = (ctx.path(a.latents, "latents.csv"), ctx.path(a.clusters, "clusters"));
    require(&[
        (&data_path, "dataset", "synth"),
        (&model_path, "model checkpoint", "train"),
        (&latents_path, "latent table", "embed"),
        (&clusters_path, "cluster directory", "cluster"),
    ])?;
    let dataset = load_dataset(&data_path)?;
    let ckpt = load_checkpoint(&model_path)?;
    let latents = read_latents(&latents_path)?;
    let space = load_space(&clusters_path, &dataset)?;
    let size = dataset.patch_size().ok_or(udgen_core::Error::Empty("dataset"))?;
    let labeled: Vec<(&[f64], &[u8])> = dataset
        .labeled_ids
        .iter()
        .filter_map(|&i| {
            let p = &dataset.patches[i];
            p.mask.as_deref().map(|m| (p.pixels.as_slice(), m))
        })
        .collect();
    let d = ToyTrainConfig::default();
    let seg_config = ToyTrainConfig {
        steps: ctx.get(a.seg_steps, "seg_steps", d.steps)?,
        seed: ctx.seed(stream::SEGMENTER),
        ..d
    };
    let seg = train_toy_segmenter(&labeled, size, &seg_config)?;
    let table = uncertainty_table(&ckpt.model, &seg, &space, &dataset, &latents)?;
    let out = ctx.path(a.out, "uncertainty.csv");
    write_uncertainty(&out, &table)?;
    println!("root seed: {}", ctx.root_seed);
    println!("uncertainty table {}x{} written to {}", table.m, table.n, out.display());
    Ok(())
}

fn sample(ctx: &Ctx, a: SampleArgs) -> CliResult<()> {
    let kind_name = ctx.get(a.policy, "policy", "mixed".to_string())?;
    let kind = PolicyKind::from_name(&kind_name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown policy `{kind_name}` (random_cm, distribution_matching, hard_case, mixed)"
        ))
    })?;
    let count = ctx.get(a.count, "count", 64usize)?;
    if count == 0 {
        return Err(CliError::Usage("count must be >= 1".into()));
    }
    let rate = ctx.get(a.rate, "rate", udgen_core::policy::DEFAULT_GENERATED_RATE)?;
    let spec = PolicySpec {
        kind,
        generated_rate: rate,
        seed: ctx.seed(stream::POLICY),
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data_path = ctx.path(a.data, "data");
    let model_path = ctx.path(a.model, "model");
    let clusters_path = ctx.path(a.clusters, "clusters");
    let unc_path = ctx.path(a.uncertainty, "uncertainty.csv");
    let mut needed = vec![
        (data_path.as_path(), "dataset", "synth"),
        (model_path.as_path(), "model checkpoint", "train"),
        (clusters_path.as_path(), "cluster directory", "cluster"),
    ];
    if kind.needs_uncertainty() {
        needed.push((unc_path.as_path(), "uncertainty table", "uncertainty"));
    }
    require(&needed)?;
    let dataset = load_dataset(&data_path)?;
    let ckpt = load_checkpoint(&model_path)?;
    let space = load_space(&clusters_path, &dataset)?;
    let table = if kind.needs_uncertainty() {
        Some(read_uncertainty(&unc_path)?)
    } else {
        None
    };
    let probs = cell_probs(&space, kind, table.as_ref())?;
    let sampler = PolicySampler::new(&ckpt.model, &space, &dataset, probs.clone(), spec)?;
    let selections = sampler.select_many(count);
    let out = ctx.path(a.out, "batch");
    let size = dataset.patch_size().ok_or(udgen_core::Error::Empty("dataset"))?;
    let mut examples = Vec::with_capacity(count);
    for (k, sel) in selections.iter().enumerate() {
        let ex = sampler.materialize(sel)?;
        let rec = ExampleRecord::new(k, sel.cell, &sel.provenance, sel.forced_fallback);
        write_ppm(&out.join(&rec.file), size, size, &ex.pixels)?;
        write_pgm(&out.join(&rec.mask), size, size, &ex.mask)?;
        examples.push(rec);
    }
    let policy = PolicySpecRecord::new(&spec);
    let manifest = BatchManifest {
        root_seed: ctx.root_seed,
        policy: policy.clone(),
        m: probs.m,
        n: probs.n,
        probs: probs.probs.clone(),
        examples,
    };
    crate::error::write_json(&out.join(BatchManifest::FILE), &manifest)?;
    let summary = DrawSummary::from_selections(probs.m, probs.n, &selections);
    let rep = policy_report(ctx.root_seed, &policy, &probs, &summary);
    rep.save(&out)?;
    print!("{}", rep.to_text());
    Ok(())
}

fn report(ctx: &Ctx, a: ReportArgs) -> CliResult<()> {
    let dir = ctx.path(a.batch, "batch");
    require(&[(&dir.join(BatchManifest::FILE), "batch manifest", "sample")])?;
    let manifest = BatchManifest::load(&dir)?;
    let probs = udgen_core::policy::CellProbTable {
        m: manifest.m,
        n: manifest.n,
        probs: manifest.probs.clone(),
    };
    let mut summary = DrawSummary::new(manifest.m, manifest.n);
    for (k, ex) in manifest.examples.iter().enumerate() {
        let prov = ex.provenance().ok_or_else(|| FormatError::Malformed {
            path: dir.join(BatchManifest::FILE),
            msg: format!("example {k}: bad provenance"),
        })?;
        if ex.cell[0] >= manifest.m || ex.cell[1] >= manifest.n {
            return Err(FormatError::Malformed {
                path: dir.join(BatchManifest::FILE),
                msg: format!("example {k}: cell outside the grid"),
            }
            .into());
        }
        summary.record((ex.cell[0], ex.cell[1]), &prov, ex.forced_fallback);
    }
    let rep = policy_report(manifest.root_seed, &manifest.policy, &probs, &summary);
    rep.save(&dir)?;
    print!("{}", rep.to_text());
    Ok(())
}

fn gradcheck(ctx: &Ctx, a: GradcheckArgs) -> CliResult<()> {
    let seeds = ctx.get(a.seeds, "seeds", 3u64)?;
    let eps = ctx.get(a.eps, "eps", 1e-5)?;
    if seeds == 0 || !(eps > 0.0) {
        return Err(CliError::Usage("seeds must be >= 1 and eps > 0".into()));
    }
    println!("root seed: {}", ctx.root_seed);
    println!("{:<24} {:>6} {:>12} {:>8} {:>8}", "loss", "seed", "max rel err", "checked", "skipped");
    let mut worst: f64 = 0.0;
    for k in 0..seeds {
        let seed = ctx.root_seed.wrapping_add(k);
        for c in micro_gradient_checks(seed, eps)? {
            worst = worst.max(c.report.max_rel_error);
            println!(
                "{:<24} {:>6} {:>12.3e} {:>8} {:>8}",
                c.loss, seed, c.report.max_rel_error, c.report.checked, c.report.skipped
            );
        }
    }
    if worst >= 1e-4 {
        return Err(udgen_core::Error::NonFinite(format!("gradient check failed: max relative error {worst:.3e}")).into());
    }
    println!("all gradient checks below 1e-4");
    Ok(())
}

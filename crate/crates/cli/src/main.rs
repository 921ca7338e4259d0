use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use saccade_core::codebook::collect_samples;
use saccade_core::environment::{self, EnvMeta, Environment};
use saccade_core::explorer::explore_many;
use saccade_core::information::analyze;
use saccade_core::model::ModelMeta;
use saccade_core::pipeline::{self, report, ExperimentConfig, WorldKind, OUTPUT_DIR_ENV};
use saccade_core::search::run_search;
use saccade_core::encoding::init_encoders;
use saccade_core::{EncoderBank, PredictiveModel, PrototypeCodebook, RetinaGeometry};

#[derive(Parser)]
#[command(name = "saccade", version, about = "Sensorimotor learning of retinal field structure from random saccades")]
struct Cli {
    /// Base directory for relative paths.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,

    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Named config: desk, full or noise.
    #[arg(long, global = true, conflicts_with = "config")]
    preset: Option<String>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate worlds as PNG plus JSON sidecar.
    GenEnv(GenEnvArgs),
    /// Sample sensory vectors and cluster them into prototypes.
    LearnCodebook(LearnCodebookArgs),
    /// Random saccadic exploration into a count file.
    Explore(ExploreArgs),
    /// Validate a count file and print its summary.
    Estimate(EstimateArgs),
    /// Normalized mutual information for every block.
    AnalyzeMi(AnalyzeMiArgs),
    /// Dump one block's conditional distributions as CSV.
    InspectBlock(InspectBlockArgs),
    /// Visual search trials with a trained model.
    Search(SearchArgs),
    /// Association gallery and structure summary.
    Report(ReportArgs),
    /// Every stage in order, with a manifest.
    RunAll(RunAllArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Squares,
    Noise,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Train,
    Search,
}

#[derive(Args)]
struct GenEnvArgs {
    #[arg(long, default_value = "envs")]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Training worlds or fresh search worlds.
    #[arg(long, value_enum, default_value = "train")]
    role: Role,
}

#[derive(Args)]
struct EncoderArgs {
    /// Existing encoder bank.
    #[arg(long, conflicts_with_all = ["encoder_seed", "identity"])]
    encoders: Option<PathBuf>,
    /// Draw a scrambled bank from this seed.
    #[arg(long)]
    encoder_seed: Option<u64>,
    /// Identity encoders (no scrambling).
    #[arg(long, conflicts_with = "encoder_seed")]
    identity: bool,
}

#[derive(Args)]
struct LearnCodebookArgs {
    #[arg(long, default_value = "envs")]
    envs: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Where to write the encoder bank used.
    #[arg(long, default_value = "encoders.bin")]
    encoders_out: PathBuf,
    #[arg(long, default_value = "codebook.bin")]
    out: PathBuf,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long, default_value = "envs")]
    envs: PathBuf,
    #[arg(long, default_value = "codebook.bin")]
    codebook: PathBuf,
    #[arg(long, default_value = "encoders.bin")]
    encoders: PathBuf,
    /// Saccades per environment.
    #[arg(long)]
    saccades: Option<u64>,
    #[arg(long)]
    shards: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "model.bin")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, default_value = "model.bin")]
    counts: PathBuf,
    /// Write the validated model here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeMiArgs {
    #[arg(long, default_value = "model.bin")]
    model: PathBuf,
    #[arg(long, default_value = "mi.csv")]
    out: PathBuf,
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[arg(long)]
    entropy_dump: bool,
}

#[derive(Args)]
struct InspectBlockArgs {
    #[arg(long, default_value = "model.bin")]
    model: PathBuf,
    #[arg(long)]
    a: usize,
    #[arg(long)]
    b: usize,
    #[arg(long)]
    q: usize,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value = "model.bin")]
    model: PathBuf,
    #[arg(long, default_value = "codebook.bin")]
    codebook: PathBuf,
    #[arg(long, default_value = "encoders.bin")]
    encoders: PathBuf,
    /// Search worlds; generated from the seed when absent.
    #[arg(long)]
    envs: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value = "search.csv")]
    report: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "model.bin")]
    model: PathBuf,
    #[arg(long, default_value = "codebook.bin")]
    codebook: PathBuf,
    #[arg(long, default_value = "encoders.bin")]
    encoders: PathBuf,
    #[arg(long, default_value = "gallery")]
    out: PathBuf,
    /// Pre-fields to sample states from.
    #[arg(long, value_delimiter = ',')]
    fields: Option<Vec<usize>>,
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args)]
struct RunAllArgs {
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

struct Ctx {
    config: ExperimentConfig,
    geometry: RetinaGeometry,
    base: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn read_bank(path: &Path) -> Result<EncoderBank> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(EncoderBank::from_bytes(&bytes)?)
}

fn read_codebook(path: &Path) -> Result<PrototypeCodebook> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(PrototypeCodebook::from_bytes(&bytes)?)
}

fn load_envs(dir: &Path, geometry: &RetinaGeometry) -> Result<Vec<Environment>> {
    let envs = Environment::load_dir(dir)?;
    if envs.is_empty() {
        bail!("no environments found in {}", dir.display());
    }
    for e in &envs {
        e.check_compatible(geometry)?;
    }
    Ok(envs)
}

fn gen_env(ctx: &mut Ctx, args: &GenEnvArgs) -> Result<()> {
    let c = &mut ctx.config;
    if let Some(k) = args.kind {
        c.environment.kind = match k {
            Kind::Squares => WorldKind::Squares,
            Kind::Noise => WorldKind::Noise,
        };
    }
    if let Some(w) = args.width {
        c.environment.width = w;
    }
    if let Some(h) = args.height {
        c.environment.height = h;
    }
    let (metas, prefix): (Vec<EnvMeta>, &str) = match args.role {
        Role::Train => {
            if let Some(n) = args.count {
                c.n_environments = n;
            }
            (c.training_env_metas(), "train")
        }
        Role::Search => {
            if let Some(n) = args.count {
                c.search_environments = n;
            }
            (c.search_env_metas(), "search")
        }
    };
    c.validate()?;
    let dir = ctx.path(&args.out);
    for (k, meta) in metas.iter().enumerate() {
        let env = environment::generate(meta)?;
        let png = env.save(&dir, &format!("{prefix}{k:02}"))?;
        info!("wrote {}", png.display());
    }
    println!("{} environments in {}", metas.len(), dir.display());
    Ok(())
}

fn learn_codebook(ctx: &Ctx, args: &LearnCodebookArgs) -> Result<()> {
    let c = &ctx.config;
    let envs = load_envs(&ctx.path(&args.envs), &ctx.geometry)?;
    let bank = match (&args.encoder.encoders, args.encoder.encoder_seed, args.encoder.identity) {
        (Some(path), _, _) => read_bank(&ctx.path(path))?,
        (None, Some(seed), _) => init_encoders(seed, &ctx.geometry),
        (None, None, true) => EncoderBank::identity(&ctx.geometry),
        (None, None, false) => pipeline::make_bank(c, &ctx.geometry),
    };
    bank.check_compatible(&ctx.geometry)?;
    let n = args.samples.unwrap_or(c.samples_per_field);
    let samples = collect_samples(&envs, &bank, &ctx.geometry, n, c.stage_seed("codebook/samples"))?;
    let codebook = PrototypeCodebook::fit(&samples, &ctx.geometry, &bank, c.stage_seed("codebook/kmeans"))?;
    let (enc_path, cb_path) = (ctx.path(&args.encoders_out), ctx.path(&args.out));
    saccade_core::io::write_file(&enc_path, &bank.to_bytes())?;
    saccade_core::io::write_file(&cb_path, &codebook.to_bytes())?;
    println!(
        "codebook {} ({} samples per field), encoders {}",
        cb_path.display(),
        n,
        enc_path.display()
    );
    Ok(())
}

fn explore(ctx: &Ctx, args: &ExploreArgs) -> Result<()> {
    let mut c = ctx.config.clone();
    if let Some(n) = args.saccades {
        c.saccades_per_env = n;
    }
    if let Some(s) = args.shards {
        c.shards_per_env = s;
    }
    if let Some(w) = args.workers {
        c.workers = w;
    }
    let envs = load_envs(&ctx.path(&args.envs), &ctx.geometry)?;
    let bank = read_bank(&ctx.path(&args.encoders))?;
    let codebook = read_codebook(&ctx.path(&args.codebook))?;
    bank.check_compatible(&ctx.geometry)?;
    codebook.check_compatible(&ctx.geometry, &bank)?;
    let plan = pipeline::explore_plan(&c);
    let counts = explore_many(&envs, &bank, &codebook, &ctx.geometry, &plan, c.workers)?;
    let model = PredictiveModel::new(
        counts,
        ModelMeta {
            total_saccades: c.saccades_per_env * envs.len() as u64,
            n_environments: envs.len() as u64,
            seeds: envs.iter().map(|e| e.seed).chain([plan.seed]).collect(),
            geometry_hash: ctx.geometry.content_hash(),
            encoder_hash: bank.content_hash(),
            codebook_hash: codebook.content_hash(),
        },
    );
    let out = ctx.path(&args.out);
    model.save(&out)?;
    println!(
        "{} saccades over {} environments, {} transition records -> {}",
        model.meta.total_saccades,
        envs.len(),
        model.counts.total(),
        out.display()
    );
    Ok(())
}

fn estimate(ctx: &Ctx, args: &EstimateArgs) -> Result<()> {
    let model = PredictiveModel::load(&ctx.path(&args.counts))?;
    if model.meta.geometry_hash != ctx.geometry.content_hash() {
        bail!("count file was built for a different retina geometry");
    }
    let expected = model.meta.total_saccades * (model.counts.n_fields() as u64).pow(2);
    if model.counts.total() != expected {
        bail!("count file holds {} records, expected {expected}", model.counts.total());
    }
    println!("saccades      {}", model.meta.total_saccades);
    println!("environments  {}", model.meta.n_environments);
    println!("records       {}", model.counts.total());
    println!("blocks        {}", model.counts.n_blocks());
    println!("encoder hash  {}", model.meta.encoder_hash);
    println!("codebook hash {}", model.meta.codebook_hash);
    if let Some(out) = &args.out {
        model.save(&ctx.path(out))?;
    }
    Ok(())
}

fn analyze_mi(ctx: &Ctx, args: &AnalyzeMiArgs) -> Result<()> {
    let model = PredictiveModel::load(&ctx.path(&args.model))?;
    let analysis = analyze(&model.counts);
    let out = ctx.path(&args.out);
    report::write_mi_csv(&analysis, &out, args.entropy_dump)?;
    if let Some(dir) = &args.heatmap {
        report::write_heatmaps(&analysis.mi, &ctx.path(dir))?;
    }
    let s = report::structure_summary(&analysis, &ctx.geometry);
    println!(
        "argmax agreement {:.4}, mean MI coupled {:.4}, uncoupled {:.4} -> {}",
        s.argmax_agreement,
        s.mean_mi_coupled,
        s.mean_mi_uncoupled,
        out.display()
    );
    Ok(())
}

fn inspect_block(ctx: &Ctx, args: &InspectBlockArgs) -> Result<()> {
    let model = PredictiveModel::load(&ctx.path(&args.model))?;
    let (f, m) = (model.counts.n_fields(), model.counts.n_motors());
    if args.a >= f || args.b >= f || args.q >= m {
        bail!("block ({}, {}, {}) out of range: {f} fields, {m} saccades", args.a, args.b, args.q);
    }
    match &args.out {
        Some(p) => {
            let p = ctx.path(p);
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent)?;
            }
            report::write_block_csv(&model, args.a, args.b, args.q, fs::File::create(&p)?)?
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            report::write_block_csv(&model, args.a, args.b, args.q, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn search(ctx: &Ctx, args: &SearchArgs) -> Result<()> {
    let c = &ctx.config;
    let model = PredictiveModel::load(&ctx.path(&args.model))?;
    let codebook = read_codebook(&ctx.path(&args.codebook))?;
    let bank = read_bank(&ctx.path(&args.encoders))?;
    let envs = match &args.envs {
        Some(dir) => load_envs(&ctx.path(dir), &ctx.geometry)?,
        None => pipeline::generate_envs(&c.search_env_metas())?,
    };
    let mi = analyze(&model.counts).mi;
    let trials = args.trials.unwrap_or(c.search_trials);
    let r = run_search(&envs, &model, &mi, &codebook, &bank, &ctx.geometry, trials, c.stage_seed("search"))?;
    let out = ctx.path(&args.report);
    r.write_csv(&out)?;
    println!("{} trials, success rate {:.4} -> {}", r.trials.len(), r.success_rate, out.display());
    Ok(())
}

fn report_cmd(ctx: &Ctx, args: &ReportArgs) -> Result<()> {
    let g = &ctx.config.gallery;
    let model = PredictiveModel::load(&ctx.path(&args.model))?;
    let codebook = read_codebook(&ctx.path(&args.codebook))?;
    let bank = read_bank(&ctx.path(&args.encoders))?;
    model.check_compatible(&ctx.geometry, &bank, &codebook)?;
    let analysis = analyze(&model.counts);
    let fields = args.fields.clone().unwrap_or_else(|| g.fields.clone());
    if let Some(&bad) = fields.iter().find(|&&a| a >= ctx.geometry.n_fields()) {
        bail!("field {bad} does not exist");
    }
    let states = report::pick_gallery_states(&model, &fields, g.states_per_field, g.skip_most_frequent);
    let tiles =
        report::render_association_gallery(&model, &analysis.mi, &codebook, &bank, &states, args.top_k.unwrap_or(g.top_k))?;
    let dir = ctx.path(&args.out);
    let paths = report::write_gallery(&tiles, &ctx.geometry, &dir, g.scale)?;
    let summary = report::structure_summary(&analysis, &ctx.geometry);
    saccade_core::io::write_file(&dir.join("structure.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    println!("{} gallery files in {}", paths.len(), dir.display());
    Ok(())
}

fn run_all(ctx: &Ctx, args: &RunAllArgs) -> Result<()> {
    if args.print_config {
        print!("{}", ctx.config.to_toml()?);
        return Ok(());
    }
    let out = pipeline::run_pipeline(&ctx.config)?;
    for s in &out.manifest.stages {
        println!("{:<15} {:>8} ms  {}", s.name, s.duration_ms, &s.chain[..16]);
    }
    println!(
        "argmax agreement {:.4}, coupled/uncoupled MI {:.4}/{:.4}, search success {:.4}",
        out.structure.argmax_agreement,
        out.structure.mean_mi_coupled,
        out.structure.mean_mi_uncoupled,
        out.search.success_rate
    );
    println!("artifacts in {}", out.output_dir.display());
    Ok(())
}

fn stage_name(c: &Command) -> &'static str {
    match c {
        Command::GenEnv(_) => "gen-env",
        Command::LearnCodebook(_) => "learn-codebook",
        Command::Explore(_) => "explore",
        Command::Estimate(_) => "estimate",
        Command::AnalyzeMi(_) => "analyze-mi",
        Command::InspectBlock(_) => "inspect-block",
        Command::Search(_) => "search",
        Command::Report(_) => "report",
        Command::RunAll(_) => "run-all",
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli).context("config")?;
    let geometry = config.validate().context("config")?;
    let base = cli.output_dir.clone();
    let mut ctx = Ctx { config, geometry, base };
    let stage = stage_name(&cli.command);
    let r = match &cli.command {
        Command::GenEnv(a) => gen_env(&mut ctx, a),
        Command::LearnCodebook(a) => learn_codebook(&ctx, a),
        Command::Explore(a) => explore(&ctx, a),
        Command::Estimate(a) => estimate(&ctx, a),
        Command::AnalyzeMi(a) => analyze_mi(&ctx, a),
        Command::InspectBlock(a) => inspect_block(&ctx, a),
        Command::Search(a) => search(&ctx, a),
        Command::Report(a) => report_cmd(&ctx, a),
        Command::RunAll(a) => run_all(&ctx, a),
    };
    r.with_context(|| format!("stage `{stage}` failed"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

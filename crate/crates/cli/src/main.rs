mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{RunConfig, SyntheticSpec};
use structok::analysis::{
    ablation_harness, ablation_ladder, ablation_report, center_distance_profile, codebook_scaling_study, compression_report,
    compression_study, evaluate_structures, evaluation_report, fit_polynomial, mixing_radius, rotation_sweep, StudyBudget,
};
use structok::baselines::{kmeans_codebook, structure_point_sample, voxel_constant, voxel_count, voxel_rmsd};
use structok::data::{
    load_structure, split, synth_dataset, write_pdb, write_xyz, DatasetManifest, ManifestEntry, PolymerStyle, Split, Structure,
    StructureKind,
};
use structok::geometry::Axis;
use structok::model::{Checkpoint, TokenizerModel};
use structok::quantizer::{read_tokens, write_tokens, TokenFile, TokenFormat, TokenRecord, TokenSequence};
use structok::training::Trainer;
use structok::{Error, Result};

#[derive(Parser)]
#[command(name = "structok", version, about = "All-atom structure tokenizer")]
struct Cli {
    /// Output directory; defaults to $STRUCTOK_OUT/<command> or ./structok-out/<command>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tokenizer.
    Train(TrainArgs),
    /// Convert structures to token files.
    Tokenize(TokenizeArgs),
    /// Convert token files back to coordinates.
    Decode(DecodeArgs),
    /// Reconstruction metrics on a manifest split.
    Eval(EvalArgs),
    /// Non-learned codebooks.
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// Diagnostics and training studies.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Write a synthetic polymer dataset with a manifest.
    Synth(SynthArgs),
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    effective_batch: Option<usize>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Single-threaded, sequential execution.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Serialize)]
struct TokenizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// PDB or XYZ files.
    inputs: Vec<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Token file name inside the output directory; `.txt` selects text.
    #[arg(long, default_value = "tokens.stk")]
    output: String,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum CoordFormat {
    Pdb,
    Xyz,
}

#[derive(Args, Serialize)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    tokens: PathBuf,
    #[arg(long, value_enum, default_value = "pdb")]
    format: CoordFormat,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Subcommand, Serialize)]
enum BaselineCmd {
    /// Voxel count needed for a target error, and the error of a voxel size.
    Voxel {
        /// Side of the enclosing cube in Å.
        #[arg(long = "A", alias = "extent")]
        extent: f64,
        /// Target mean error in Å.
        #[arg(long)]
        rmsd: f64,
    },
    /// k-means Voronoi codebook fitted on the train split, scored on test.
    Kmeans {
        #[arg(long = "K", alias = "k", default_value_t = 4096)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 100_000)]
        sample: usize,
        #[arg(long, default_value_t = 1)]
        rotations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Learned model to compare against on the same split.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum AxisArg {
    X,
    Y,
    Z,
}

#[derive(Subcommand, Serialize)]
enum AnalyzeCmd {
    /// Tokens and RMSE while rotating one structure about an axis.
    Rotation {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        structure: PathBuf,
        #[arg(long, value_enum, default_value = "z")]
        axis: AxisArg,
        #[arg(long, default_value_t = 64)]
        angles: usize,
    },
    /// Token positions changed by single-atom deletions.
    Mixing {
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 100)]
        deletions: usize,
        #[arg(long, default_value_t = 10)]
        margin: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-atom error against distance from the centre.
    Profile {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// RMSE against codebook size over latent dimensionalities.
    Scaling {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [4, 5, 6, 7, 8])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        level: u32,
    },
    /// RMSE against atoms per token.
    Compression {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4])]
        k: Vec<usize>,
    },
    /// The architecture and training ladder over several seeds.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
        seeds: Vec<u64>,
    },
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 100)]
    min_atoms: usize,
    #[arg(long, default_value_t = 500)]
    max_atoms: usize,
    #[arg(long)]
    style: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    fractions: Vec<f64>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::SpecMismatch { .. } => Failure::Usage(e),
            other => Failure::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Errors while reading user-named inputs are usage errors.
fn input<T>(r: Result<T>) -> CliResult<T> {
    r.map_err(Failure::Usage)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train(_) => "train",
        Command::Tokenize(_) => "tokenize",
        Command::Decode(_) => "decode",
        Command::Eval(_) => "eval",
        Command::Baseline(_) => "baseline",
        Command::Analyze(_) => "analyze",
        Command::Synth(_) => "synth",
    }
}

fn output_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os("STRUCTOK_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("structok-out"));
        root.join(command_name(&cli.command))
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Path { path: path.into(), source: e })
}

fn echo<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join(name), text)
}

fn load_model(path: &Path) -> CliResult<TokenizerModel> {
    input(TokenizerModel::load(path))
}

fn load_split(manifest: &Path, split: Option<Split>) -> CliResult<Vec<Structure>> {
    let m = input(DatasetManifest::load(manifest))?;
    let m = match split {
        Some(s) => m.with_split(s),
        None => m,
    };
    input(m.load_structures())
}

fn kind_for(path: &Path) -> StructureKind {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") => StructureKind::Molecule,
        _ => StructureKind::Protein,
    }
}

/// Train/val/test structures for a run config.
fn run_data(cfg: &RunConfig) -> CliResult<[Vec<Structure>; 3]> {
    if let Some(path) = &cfg.data.manifest {
        let m = input(DatasetManifest::load(path))?;
        let load = |s| input(m.with_split(s).load_structures());
        return Ok([load(Split::Train)?, load(Split::Val)?, load(Split::Test)?]);
    }
    let Some(syn) = &cfg.data.synthetic else {
        return Err(Failure::Usage(Error::Config("no data: set data.manifest or [data.synthetic]".into())));
    };
    synthetic_splits(syn, cfg.data.fractions)
}

fn synthetic_splits(syn: &SyntheticSpec, fractions: [f64; 3]) -> CliResult<[Vec<Structure>; 3]> {
    let all = synth_dataset(syn.seed, syn.count, syn.min_atoms..=syn.max_atoms, syn.style)?;
    let manifest = DatasetManifest {
        seed: syn.seed,
        entries: all
            .iter()
            .map(|s| ManifestEntry { path: PathBuf::from(&s.name), split: Split::Train, kind: s.kind })
            .collect(),
    };
    let parts = split(&manifest, fractions, syn.seed)?;
    let pick = |m: &DatasetManifest| -> Vec<Structure> {
        m.entries
            .iter()
            .map(|e| {
                let i: usize = e.path.to_string_lossy().trim_start_matches("synth_").parse().expect("synthetic name");
                all[i].clone()
            })
            .collect()
    };
    Ok([pick(&parts.train), pick(&parts.val), pick(&parts.test)])
}

fn resolve_train_config(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => input(RunConfig::load(p))?,
        None => RunConfig::default(),
    };
    if let Some(m) = &args.manifest {
        cfg.data.manifest = Some(m.clone());
    }
    if let Some(s) = args.steps {
        cfg.train.total_steps = s;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
        cfg.model.seed = s;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr_start = lr;
        cfg.train.lr_end = cfg.train.lr_end.min(lr);
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
        if args.effective_batch.is_none() && cfg.train.effective_batch % b != 0 {
            cfg.train.effective_batch = b;
        }
    }
    if let Some(b) = args.effective_batch {
        cfg.train.effective_batch = b;
    }
    if args.deterministic {
        cfg.train.deterministic = true;
    }
    if let Some(m) = &cfg.data.manifest {
        if !m.exists() {
            return Err(Failure::Usage(Error::Config(format!("manifest {} does not exist", m.display()))));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: &TrainArgs, out: &Path) -> CliResult<()> {
    let cfg = resolve_train_config(args)?;
    let [train, val, _] = run_data(&cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::Path { path: out.into(), source: e })?;
    write_file(&out.join("config.toml"), cfg.to_toml()?)?;
    let mut trainer = match &args.resume {
        Some(p) => input(Checkpoint::load(p))
            .and_then(|c| Ok(Trainer::resume(&c, Some(cfg.train.clone()), train, val)?))?,
        None => Trainer::new(TokenizerModel::new(cfg.model.clone())?, cfg.train.clone(), train, val)?,
    };
    let log_path = out.join("metrics.jsonl");
    let file = fs::OpenOptions::new()
        .create(true)
        .append(args.resume.is_some())
        .write(true)
        .truncate(args.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::Path { path: log_path.clone(), source: e })?;
    let mut log = BufWriter::new(file);
    let records = trainer.run(Some(&mut log), Some(out))?;
    if let Some(last) = records.last() {
        println!(
            "step {} train_loss {:.4} val_rmse {}",
            last.step,
            last.train_loss,
            last.val_rmse.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    println!("wrote {}", out.join("final.ckpt").display());
    Ok(())
}

fn cmd_tokenize(args: &TokenizeArgs, out: &Path) -> CliResult<()> {
    let model = load_model(&args.checkpoint)?;
    let mut structures = Vec::new();
    if let Some(m) = &args.manifest {
        structures = load_split(m, None)?;
    }
    for p in &args.inputs {
        structures.push(input(load_structure(p, kind_for(p)))?);
    }
    if structures.is_empty() {
        return Err(Failure::Usage(Error::InvalidArgument("no input structures".into())));
    }
    let mut records = Vec::with_capacity(structures.len());
    for s in &structures {
        let tokens = model.tokenize(&s.cloud)?;
        records.push(TokenRecord { name: s.name.replace(char::is_whitespace, "_"), n_atoms: s.cloud.len(), tokens: tokens.ids });
    }
    let path = out.join(&args.output);
    let file = TokenFile { spec: model.config.levels.clone(), records };
    write_tokens(&path, &file, TokenFormat::from_path(&path))?;
    println!("{} structures -> {}", file.records.len(), path.display());
    Ok(())
}

fn cmd_decode(args: &DecodeArgs, out: &Path) -> CliResult<()> {
    let model = load_model(&args.checkpoint)?;
    let file = input(read_tokens(&args.tokens))?;
    if file.spec != model.config.levels {
        return Err(Failure::Usage(Error::SpecMismatch {
            expected: model.config.levels.levels().to_vec(),
            found: file.spec.levels().to_vec(),
        }));
    }
    for r in &file.records {
        let seq = TokenSequence::new(r.tokens.clone(), file.spec.clone())?;
        let pc = model.decode(&seq, r.n_atoms)?;
        let (ext, text) = match args.format {
            CoordFormat::Pdb => ("pdb", write_pdb(&pc)),
            CoordFormat::Xyz => ("xyz", write_xyz(&pc, &r.name)),
        };
        write_file(&out.join(format!("{}.{ext}", r.name)), text)?;
    }
    println!("{} structures -> {}", file.records.len(), out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &Path) -> CliResult<()> {
    let model = load_model(&args.checkpoint)?;
    let split = match args.split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Val => Some(Split::Val),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    };
    let structures = load_split(&args.manifest, split)?;
    if structures.is_empty() {
        return Err(Failure::Usage(Error::Empty("selected split has no structures".into())));
    }
    let metrics = evaluate_structures(&model, &structures)?;
    let report = evaluation_report(&metrics, model.config.levels.codebook_size())?;
    report.save(&out.join("eval.tsv"))?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_baseline(cmd: &BaselineCmd, out: &Path) -> CliResult<()> {
    match cmd {
        BaselineCmd::Voxel { extent, rmsd } => {
            let count = voxel_count(*extent, *rmsd)?;
            println!("{count}");
            let text = format!(
                "# constant={:.6}\n# extent\trmsd\tvoxel_count\tvoxel_size\n{extent}\t{rmsd}\t{count}\t{:.6}\n",
                voxel_constant(),
                rmsd / voxel_rmsd(1.0)?
            );
            write_file(&out.join("voxel.tsv"), text)?;
        }
        BaselineCmd::Kmeans { k, iters, sample, rotations, seed, config, manifest, checkpoint } => {
            let mut cfg = match config {
                Some(p) => input(RunConfig::load(p))?,
                None => RunConfig::default(),
            };
            if let Some(m) = manifest {
                cfg.data.manifest = Some(m.clone());
            }
            let [train, _, test] = run_data(&cfg)?;
            if test.is_empty() {
                return Err(Failure::Usage(Error::Empty("test split".into())));
            }
            let points = structure_point_sample(&train, *rotations, *sample, *seed);
            let fit = kmeans_codebook(&points, *k, *iters, *seed)?;
            fit.codebook.save(&out.join("codebook.ckpt"))?;
            let rmse = fit.codebook.mean_structure_rmse(&test)?;
            let mut text = format!("# K={k}\n# method\trmse\nkmeans\t{rmse:.6}\n");
            println!("kmeans K={k} test RMSE {rmse:.4}");
            if let Some(c) = checkpoint {
                let model = load_model(c)?;
                let learned = structok::training::evaluate_rmse(&model, &test)?;
                println!("learned test RMSE {learned:.4}");
                text.push_str(&format!("learned\t{learned:.6}\n"));
            }
            write_file(&out.join("kmeans.tsv"), text)?;
        }
    }
    Ok(())
}

fn study_config(path: &Path) -> CliResult<(RunConfig, [Vec<Structure>; 3])> {
    let cfg = input(RunConfig::load(path))?;
    cfg.validate()?;
    let data = run_data(&cfg)?;
    if data[1].is_empty() {
        return Err(Failure::Usage(Error::Empty("studies need a validation split".into())));
    }
    Ok((cfg, data))
}

fn cmd_analyze(cmd: &AnalyzeCmd, out: &Path) -> CliResult<()> {
    match cmd {
        AnalyzeCmd::Rotation { checkpoint, structure, axis, angles } => {
            let model = load_model(checkpoint)?;
            let s = input(load_structure(structure, kind_for(structure)))?;
            let axis = match axis {
                AxisArg::X => Axis::X,
                AxisArg::Y => Axis::Y,
                AxisArg::Z => Axis::Z,
            };
            let r = rotation_sweep(&model, &s, axis, *angles)?;
            let summary = r.rmse_summary()?;
            r.to_report()?.save(&out.join("rotation.tsv"))?;
            println!("{} records, rmse {:.4} ± {:.4}", r.records.len(), summary.mean, summary.std);
        }
        AnalyzeCmd::Mixing { checkpoint, manifest, deletions, margin, seed } => {
            let structures = load_split(manifest, None)?;
            let (mut depth, mut radius) = (Vec::new(), Vec::new());
            let mut table = String::from("# encoder_layers\thalf_width_mean\thalf_width_std\taligned_changed\traw_changed\n");
            for c in checkpoint {
                let model = load_model(c)?;
                let r = mixing_radius(&model, &structures, *deletions, *margin, *seed)?;
                let layers = model.config.n_encoder_layers;
                r.to_report()?.save(&out.join(format!("mixing_{layers}.tsv")))?;
                table.push_str(&format!(
                    "{layers}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                    r.half_width.mean, r.half_width.std, r.aligned_changed.mean, r.raw_changed.mean
                ));
                depth.push(layers as f64);
                radius.push(r.half_width.mean);
            }
            for degree in [1, 2] {
                if let Ok(f) = fit_polynomial(&depth, &radius, degree) {
                    table.push_str(&format!("# fit degree={degree} coefficients={:?} r2={:.6}\n", f.coefficients, f.r2));
                }
            }
            write_file(&out.join("mixing.tsv"), &table)?;
            print!("{table}");
        }
        AnalyzeCmd::Profile { checkpoint, manifest, points, seed } => {
            let model = load_model(checkpoint)?;
            let structures = load_split(manifest, None)?;
            let p = center_distance_profile(&model, &structures, *points, *seed)?;
            p.to_report()?.save(&out.join("profile.tsv"))?;
            for (d, e, n) in p.binned(10) {
                println!("{d:8.2}\t{e:.4}\t{n}");
            }
        }
        AnalyzeCmd::Scaling { config, dims, level } => {
            let (cfg, [train, val, _]) = study_config(config)?;
            let budget = StudyBudget { train: &cfg.train, train_set: &train, val_set: &val };
            let r = codebook_scaling_study(&cfg.model, *level, dims, budget)?;
            let report = r.to_report()?;
            report.save(&out.join("scaling.tsv"))?;
            print!("{}", report.to_text());
        }
        AnalyzeCmd::Compression { config, k } => {
            let (cfg, [train, val, _]) = study_config(config)?;
            let budget = StudyBudget { train: &cfg.train, train_set: &train, val_set: &val };
            let report = compression_report(&compression_study(&cfg.model, k, budget)?)?;
            report.save(&out.join("compression.tsv"))?;
            print!("{}", report.to_text());
        }
        AnalyzeCmd::Ablation { config, seeds } => {
            let (cfg, [train, val, _]) = study_config(config)?;
            let rows = ablation_harness(&ablation_ladder(&cfg.model, &cfg.train), seeds, &train, &val)?;
            let report = ablation_report(&rows)?;
            report.save(&out.join("ablation.tsv"))?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs, out: &Path) -> CliResult<()> {
    let style: Option<PolymerStyle> = args.style.as_deref().map(str::parse).transpose()?;
    let fractions: [f64; 3] = args
        .fractions
        .as_slice()
        .try_into()
        .map_err(|_| Error::InvalidArgument("--fractions takes three values".into()))?;
    let spec = SyntheticSpec { count: args.count, min_atoms: args.min_atoms, max_atoms: args.max_atoms, style, seed: args.seed };
    let parts = synthetic_splits(&spec, fractions)?;
    let mut manifest = DatasetManifest { seed: args.seed, entries: Vec::new() };
    for (structures, split) in parts.iter().zip([Split::Train, Split::Val, Split::Test]) {
        for s in structures {
            let name = format!("{}.pdb", s.name);
            write_file(&out.join(&name), write_pdb(&s.cloud))?;
            manifest.entries.push(ManifestEntry { path: PathBuf::from(name), split, kind: StructureKind::Synthetic });
        }
    }
    manifest.save(&out.join("manifest.toml"))?;
    println!("{} structures -> {}", manifest.entries.len(), out.join("manifest.toml").display());
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let out = output_dir(cli);
    fs::create_dir_all(&out).map_err(|e| Error::Path { path: out.clone(), source: e })?;
    match &cli.command {
        Command::Train(a) => {
            if a.deterministic {
                rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();
            }
            cmd_train(a, &out)
        }
        Command::Tokenize(a) => {
            echo(&out, "invocation.toml", a)?;
            cmd_tokenize(a, &out)
        }
        Command::Decode(a) => {
            echo(&out, "invocation.toml", a)?;
            cmd_decode(a, &out)
        }
        Command::Eval(a) => {
            echo(&out, "invocation.toml", a)?;
            cmd_eval(a, &out)
        }
        Command::Baseline(c) => {
            echo(&out, "invocation.toml", c)?;
            cmd_baseline(c, &out)
        }
        Command::Analyze(c) => {
            echo(&out, "invocation.toml", c)?;
            cmd_analyze(c, &out)
        }
        Command::Synth(a) => {
            echo(&out, "invocation.toml", a)?;
            cmd_synth(a, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            let _ = std::io::stderr().flush();
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

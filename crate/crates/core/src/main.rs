use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use mimdepth::data::{Dataset, SceneSpec};
use mimdepth::error::Result;
use mimdepth::image::Image;
use mimdepth::masking::{generate, MaskConfig, MaskStrategy};
use mimdepth::model::{ConstantDepth, DepthPredictor, Model};
use mimdepth::nn::{load_checkpoint, save_checkpoint};
use mimdepth::robustness::{
    attack_iterations, corrupt, occlude, targeted_flip_attack, untargeted_attack, AttackMode, CorruptionKind,
    CorruptionSpec, FlipDirection, OcclusionSpec, SeverityTable,
};
use mimdepth::train::{
    ablation_grid, checkpoint_bytes, default_arms, evaluate, plot, read_csv, sha256_hex, summarize, toml_with_overrides,
    train, write_csv, Suite, SuiteParams, TrainConfig,
};
use mimdepth::{parallel, seeds, Error};

#[derive(Parser)]
#[command(name = "mimdepth", version, about = "Masked self-supervised monocular depth at desk scale")]
struct Cli {
    /// only log warnings and errors
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic triplet dataset
    GenData(GenData),
    /// Train the depth and ego-motion networks
    Train(TrainArgs),
    /// Score a checkpoint on one evaluation suite and write per-image CSV rows
    Eval(EvalArgs),
    /// Write a corrupted copy of a dataset
    Corrupt(CorruptArgs),
    /// Write a copy of a dataset with patches replaced by the image mean
    Occlude(OccludeArgs),
    /// Write a copy of a dataset with adversarial centre frames
    Attack(AttackArgs),
    /// Train and evaluate the masking ablation grid
    Ablate(AblateArgs),
    /// Render one mask grid as a PGM image
    MaskPreview(MaskPreviewArgs),
    /// Draw SVG charts from evaluation CSVs
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    triplets: usize,
    /// TOML scene spec; keys may also be given with --set
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// key=value override, repeatable
    #[arg(long = "set")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config with [run], [optim], [masking], [loss] and [model] sections
    #[arg(long)]
    config: Option<PathBuf>,
    /// section.key=value override, repeatable
    #[arg(long = "set")]
    set: Vec<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// run record path (default: checkpoint with a .json extension)
    #[arg(long)]
    record: Option<PathBuf>,
    /// print the resolved config and exit
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, conflicts_with = "constant_depth", required_unless_present = "constant_depth")]
    checkpoint: Option<PathBuf>,
    /// score a constant-depth predictor instead of a checkpoint
    #[arg(long)]
    constant_depth: Option<f64>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "clean")]
    suite: Suite,
    #[arg(long)]
    out: PathBuf,
    /// TOML suite parameters
    #[arg(long)]
    params: Option<PathBuf>,
    /// key=value override of the suite parameters, repeatable
    #[arg(long = "set")]
    set: Vec<String>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    max_images: Option<usize>,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    kind: CorruptionKind,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    severity: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML severity table overriding the defaults
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct OccludeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "blockwise")]
    strategy: MaskStrategy,
    #[arg(long, default_value_t = 0.25)]
    ratio: f64,
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 0.3)]
    aspect: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "untargeted")]
    mode: AttackMode,
    #[arg(long)]
    epsilon: f64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set")]
    set: Vec<String>,
    /// training dataset (default: run.dataset of the config)
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    eval_dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// subset of arm names (default: all seven)
    #[arg(long, value_delimiter = ',')]
    arms: Vec<String>,
    #[arg(long)]
    max_images: Option<usize>,
}

#[derive(Args)]
struct MaskPreviewArgs {
    #[arg(long, default_value = "blockwise")]
    strategy: MaskStrategy,
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 0.25)]
    ratio: f64,
    #[arg(long, default_value_t = 0.3)]
    aspect: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// output pixels per mask cell
    #[arg(long, default_value_t = 8)]
    scale: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ChartKind {
    /// RMSE against severity/ε, one line per run and perturbation
    Line,
    /// mean RMSE per perturbation, one bar per run
    Bar,
}

#[derive(Args)]
struct PlotArgs {
    /// evaluation CSVs, repeatable
    #[arg(long = "csv", required = true)]
    csv: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "line")]
    chart: ChartKind,
    #[arg(long, default_value = "complete")]
    region: String,
    #[arg(long)]
    title: Option<String>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(path: Option<&Path>, set: &[String]) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p, set),
        None => TrainConfig::from_toml_with("", set),
    }
}

fn gen_data(a: GenData) -> Result<()> {
    let text = a.spec.as_deref().map(read_text).transpose()?.unwrap_or_default();
    let mut spec: SceneSpec = toml_with_overrides(&text, &a.set)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let ds = Dataset::generate(&spec, a.triplets)?;
    ds.write(&a.out)?;
    info!(
        "wrote {} frames, {} triplets to {} (pose composition error {:.2e})",
        ds.frames.len(),
        ds.len(),
        a.out.display(),
        ds.composition_error()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), &a.set)?;
    if let Some(d) = a.dataset {
        cfg.run.dataset = d;
    }
    if let Some(c) = a.checkpoint {
        cfg.run.checkpoint = c;
    }
    if let Some(s) = a.seed {
        cfg.run.seed = s;
    }
    cfg.validate()?;
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let ds = Dataset::load(&cfg.run.dataset)?;
    info!(
        "training {} steps on {} triplets from {}",
        cfg.total_steps(),
        ds.len(),
        cfg.run.dataset.display()
    );
    let every = cfg.run.log_every.max(1);
    let out = train(&cfg, &ds, |l| {
        if l.step % every == 0 {
            info!(
                "step {} epoch {} lr {:.2e} loss {:.5} (photometric {:.5}, smoothness {:.5})",
                l.step, l.epoch, l.lr, l.total, l.photometric, l.smoothness
            );
        }
    })?;
    save_checkpoint(&out.model.store, &cfg.run.checkpoint)?;
    let record_path = a.record.unwrap_or_else(|| cfg.run.checkpoint.with_extension("json"));
    out.record.save(&record_path)?;
    let r = &out.record;
    println!(
        "probe loss {:.5} -> {:.5} (ratio {:.3}); checkpoint {} sha256 {}",
        r.probe_initial.total,
        r.probe_final.total,
        r.probe_ratio(),
        cfg.run.checkpoint.display(),
        r.checkpoint_sha256
    );
    Ok(())
}

fn suite_params(path: Option<&Path>, set: &[String]) -> Result<SuiteParams> {
    let text = path.map(read_text).transpose()?.unwrap_or_default();
    toml_with_overrides(&text, set)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let mut params = suite_params(a.params.as_deref(), &a.set)?;
    if let Some(m) = a.max_images {
        params.max_images = m;
    }
    let ds = Dataset::load(&a.dataset)?;
    let (predictor, default_id): (Box<dyn DepthPredictor>, String) = match (&a.checkpoint, a.constant_depth) {
        (Some(p), _) => (
            Box::new(Model::new(load_checkpoint(p)?)),
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        ),
        (None, Some(d)) => (Box::new(ConstantDepth(d)), format!("constant-{d}")),
        (None, None) => return Err(Error::Config("need --checkpoint or --constant-depth".into())),
    };
    let run_id = a.run_id.unwrap_or(default_id);
    let rows = evaluate(predictor.as_ref(), &ds, a.suite, &params, &run_id)?;
    write_csv(&a.out, &rows)?;
    println!("{:<18} {:>6} {:<9} {:>6} {:>9} {:>7}", "perturbation", "level", "region", "images", "rmse", "delta1");
    for s in summarize(&rows) {
        println!(
            "{:<18} {:>6} {:<9} {:>6} {:>9.4} {:>7.4}",
            s.perturbation, s.level, s.region, s.images, s.rmse, s.delta1
        );
    }
    Ok(())
}

fn provenance(entries: &[(&str, String)]) -> BTreeMap<String, String> {
    entries
        .iter()
        .map(|(k, v)| (format!("perturbation.{k}"), v.clone()))
        .collect()
}

fn write_perturbed(src: &Dataset, frames: Vec<Image>, out: &Path, prov: BTreeMap<String, String>, rows: &str) -> Result<()> {
    let mut ds = src.with_frames(frames)?;
    ds.attributes.extend(prov.clone());
    ds.write(out)?;
    let mut text = String::new();
    for (k, v) in &prov {
        let _ = writeln!(text, "{}={v}", k.trim_start_matches("perturbation."));
    }
    text.push_str(rows);
    write_text(&out.join("provenance.txt"), &text)
}

fn corrupt_cmd(a: CorruptArgs) -> Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let table: SeverityTable = match &a.table {
        Some(p) => toml_with_overrides(&read_text(p)?, &[])?,
        None => SeverityTable::default(),
    };
    let frames = parallel::map_indexed(ds.frames.len(), parallel::threads(), |i| {
        let seed = seeds::derive(a.seed, &[seeds::stream::CORRUPT, i as u64]);
        corrupt(&ds.frames[i], &CorruptionSpec::new(a.kind, a.severity, seed)?, &table)
    })?;
    let prov = provenance(&[
        ("source", a.dataset.display().to_string()),
        ("kind", a.kind.as_str().into()),
        ("severity", a.severity.to_string()),
        ("seed", a.seed.to_string()),
        ("frames", "all".into()),
    ]);
    write_perturbed(&ds, frames, &a.out, prov, "")?;
    info!("wrote {} {} severity {} to {}", ds.frames.len(), a.kind.as_str(), a.severity, a.out.display());
    Ok(())
}

fn occlude_cmd(a: OccludeArgs) -> Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let base = MaskConfig {
        size: a.size,
        ratio: a.ratio,
        aspect: a.aspect,
        seed: 0,
    };
    let occluded = parallel::map_indexed(ds.frames.len(), parallel::threads(), |i| {
        let spec = OcclusionSpec {
            strategy: a.strategy,
            mask: base.with_seed(seeds::derive(a.seed, &[seeds::stream::OCCLUDE, i as u64])),
        };
        occlude(&ds.frames[i], &spec)
    })?;
    let mut rows = String::new();
    for (i, o) in occluded.iter().enumerate() {
        let _ = writeln!(rows, "frame {i} cells {} pixels {}", o.grid.count(), o.pixels.iter().filter(|&&m| m).count());
    }
    let prov = provenance(&[
        ("source", a.dataset.display().to_string()),
        ("kind", "occlusion".into()),
        ("strategy", a.strategy.as_str().into()),
        ("ratio", a.ratio.to_string()),
        ("size", a.size.to_string()),
        ("aspect", a.aspect.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    write_perturbed(&ds, occluded.into_iter().map(|o| o.image).collect(), &a.out, prov, &rows)?;
    info!("wrote {} occluded frames to {}", ds.frames.len(), a.out.display());
    Ok(())
}

fn attack_cmd(a: AttackArgs) -> Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let store = load_checkpoint(&a.checkpoint)?;
    let digest = sha256_hex(&checkpoint_bytes(&store)?);
    let model = Model::new(store);
    let loss = mimdepth::losses::LossConfig::default();
    let outcomes = parallel::map_indexed(ds.len(), parallel::threads(), |i| {
        let t = ds.triplet(i);
        match a.mode {
            AttackMode::Untargeted => untargeted_attack(&model, t.frames, &ds.intrinsics, a.epsilon, &loss),
            AttackMode::FlipHorizontal => targeted_flip_attack(&model, t.frames[1], a.epsilon, FlipDirection::Horizontal),
            AttackMode::FlipVertical => targeted_flip_attack(&model, t.frames[1], a.epsilon, FlipDirection::Vertical),
        }
    })?;
    let mut frames = ds.frames.clone();
    let mut done = vec![false; frames.len()];
    let mut rows = String::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        let c = ds.triplets[i][1];
        let _ = writeln!(
            rows,
            "triplet {i} frame {c} objective {:.6e} -> {:.6e} linf {:.6e}",
            o.objective_before, o.objective_after, o.linf
        );
        if done[c] {
            warn!("frame {c} is the centre of several triplets; keeping the first attack");
            continue;
        }
        done[c] = true;
        frames[c] = o.image;
    }
    let prov = provenance(&[
        ("source", a.dataset.display().to_string()),
        ("kind", a.mode.as_str().into()),
        ("epsilon", a.epsilon.to_string()),
        ("iterations", attack_iterations(a.epsilon).to_string()),
        ("checkpoint", a.checkpoint.display().to_string()),
        ("checkpoint_sha256", digest),
        ("frames", "triplet centres".into()),
    ]);
    write_perturbed(&ds, frames, &a.out, prov, &rows)?;
    info!("wrote {} adversarial centre frames to {}", ds.len(), a.out.display());
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let base = load_config(a.config.as_deref(), &a.set)?;
    let train_path = a.dataset.clone().unwrap_or_else(|| base.run.dataset.clone());
    let train_ds = Dataset::load(&train_path)?;
    let eval_ds = Dataset::load(&a.eval_dataset)?;
    let mut arms = default_arms(&base);
    if !a.arms.is_empty() {
        if let Some(bad) = a.arms.iter().find(|n| !arms.iter().any(|x| &x.name == *n)) {
            let known: Vec<&str> = arms.iter().map(|x| x.name.as_str()).collect();
            return Err(Error::Config(format!("unknown arm `{bad}` (one of {})", known.join(", "))));
        }
        arms.retain(|x| a.arms.contains(&x.name));
    }
    let params = SuiteParams {
        max_images: a.max_images.unwrap_or(0),
        ..SuiteParams::default()
    };
    let every = base.run.log_every.max(1);
    let report = ablation_grid(&base, &arms, &a.seeds, &train_ds, &eval_ds, &params, Some(&a.out), |arm, seed, l| {
        if l.step % every == 0 {
            info!("{arm} seed {seed} step {} loss {:.5}", l.step, l.total);
        }
    })?;
    let table = report.table();
    write_text(&a.out.join("report.md"), &table)?;
    write_text(&a.out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    print!("{table}");
    Ok(())
}

fn mask_preview(a: MaskPreviewArgs) -> Result<()> {
    let cfg = MaskConfig {
        size: a.size,
        ratio: a.ratio,
        aspect: a.aspect,
        seed: a.seed,
    };
    let grid = generate(a.strategy, &cfg, a.height, a.width)?;
    write_text(&a.out, &grid.to_pgm(a.scale.max(1)))?;
    println!(
        "{} of {} cells masked ({:.1}%)",
        grid.count(),
        grid.gh * grid.gw,
        100.0 * grid.count() as f64 / (grid.gh * grid.gw) as f64
    );
    Ok(())
}

fn plot_cmd(a: PlotArgs) -> Result<()> {
    let mut rows = Vec::new();
    for p in &a.csv {
        rows.extend(read_csv(p)?);
    }
    let summary: Vec<_> = summarize(&rows).into_iter().filter(|s| s.region == a.region).collect();
    if summary.is_empty() {
        return Err(Error::Config(format!("no rows with region `{}`", a.region)));
    }
    let title = a.title.unwrap_or_else(|| format!("RMSE ({} region)", a.region));
    let svg = match a.chart {
        ChartKind::Line => {
            let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
            for s in &summary {
                let name = format!("{} {}", s.run_id, s.perturbation);
                match series.iter_mut().find(|(n, _)| *n == name) {
                    Some((_, pts)) => pts.push((s.level, s.rmse)),
                    None => series.push((name, vec![(s.level, s.rmse)])),
                }
            }
            for (_, pts) in &mut series {
                pts.sort_by(|x, y| x.0.total_cmp(&y.0));
            }
            plot::line_chart(&title, "severity / epsilon", "RMSE", &series)
        }
        ChartKind::Bar => {
            let mut groups: Vec<String> = Vec::new();
            let mut runs: Vec<String> = Vec::new();
            for s in &summary {
                let g = format!("{}@{}", s.perturbation, s.level);
                if !groups.contains(&g) {
                    groups.push(g);
                }
                if !runs.contains(&s.run_id) {
                    runs.push(s.run_id.clone());
                }
            }
            let series: Vec<(String, Vec<f64>)> = runs
                .iter()
                .map(|r| {
                    let vals = groups
                        .iter()
                        .map(|g| {
                            summary
                                .iter()
                                .find(|s| &s.run_id == r && format!("{}@{}", s.perturbation, s.level) == *g)
                                .map_or(0.0, |s| s.rmse)
                        })
                        .collect();
                    (r.clone(), vals)
                })
                .collect();
            plot::bar_chart(&title, "RMSE", &groups, &series)
        }
    };
    write_text(&a.out, &svg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Corrupt(a) => corrupt_cmd(a),
        Command::Occlude(a) => occlude_cmd(a),
        Command::Attack(a) => attack_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::MaskPreview(a) => mask_preview(a),
        Command::Plot(a) => plot_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

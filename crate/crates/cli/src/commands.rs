use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, ValueEnum};
use howseg_core::annotator::{evaluate, run_strategy, StrategyKind, StrategySpec};
use howseg_core::io::{generate_synthetic, read_scene_file, write_scene, SynthSpec};
use howseg_core::metrics::ReportRow;
use howseg_core::{SceneFrame, Session, SessionConfig};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Oncoc,
    Ococ,
    Iter,
    Ioncoc,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Oncoc => StrategyKind::Oncoc,
            StrategyArg::Ococ => StrategyKind::Ococ,
            StrategyArg::Iter => StrategyKind::Iterative,
            StrategyArg::Ioncoc => StrategyKind::Ioncoc,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    pub base: usize,
    #[arg(long, default_value_t = 2)]
    pub novel: usize,
    #[arg(long, default_value_t = 200)]
    pub points_per_class: usize,
    #[arg(long, default_value_t = 8.0)]
    pub sep: f64,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Radius of each class's spatial ball in meters.
    #[arg(long, default_value_t = 0.3)]
    pub radius: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of scenes; with more than one, `--out` is a directory and scene
    /// `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let spec = |seed| SynthSpec {
        base_class_count: args.base,
        novel_class_count: args.novel,
        points_per_class: args.points_per_class,
        feature_dim: args.dim,
        feature_separation: args.sep,
        spatial_blob_radius: args.radius,
        seed,
        ..SynthSpec::default()
    };
    spec(args.seed)
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if args.count == 1 {
        let frame = generate_synthetic(&spec(args.seed)).map_err(|e| CliError::Usage(e.to_string()))?;
        fs::write(&args.out, write_scene(&frame))
            .with_context(|| format!("writing {}", args.out.display()))?;
        return Ok(());
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for i in 0..args.count {
        let seed = args.seed + i as u64;
        let frame = generate_synthetic(&spec(seed)).map_err(|e| CliError::Usage(e.to_string()))?;
        let path = args.out.join(format!("scene_{i:03}.hows"));
        fs::write(&path, write_scene(&frame)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub scene: PathBuf,
    #[arg(long, value_enum, default_value = "ioncoc")]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 20)]
    pub budget: usize,
    #[arg(long, default_value_t = 30)]
    pub protos: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_disambiguation: bool,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn scene_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load(path: &Path) -> Result<SceneFrame, CliError> {
    read_scene_file(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Data)
}

/// One session with one simulated annotator; budget 0 scores the click-free prediction.
pub fn simulate(
    frame: SceneFrame,
    scene: &str,
    kind: StrategyKind,
    budget: usize,
    config: SessionConfig,
) -> Result<ReportRow, CliError> {
    if frame.gt_labels().is_none() {
        return Err(CliError::Data(anyhow::anyhow!("scene {scene} has no ground truth")));
    }
    let start = Instant::now();
    let mut session = Session::open(frame, config).map_err(|e| CliError::Data(e.into()))?;
    let clicks_used = if budget == 0 {
        0
    } else {
        run_strategy(&mut session, &StrategySpec::new(kind, budget))
            .map_err(|e| CliError::Data(e.into()))?
            .clicks_used
    };
    let scores = evaluate(&session).map_err(|e| CliError::Data(e.into()))?;
    Ok(ReportRow {
        scene: scene.to_string(),
        strategy: kind.name().to_string(),
        budget,
        clicks_used,
        miou_b: scores.miou_b,
        miou_n: scores.miou_n,
        miou_a: scores.miou_a,
        hm: scores.hm,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Writes rows as CSV with a header, or as a pretty JSON array.
pub fn write_table<T: Serialize>(rows: &[T], format: ReportFormat, out: Option<&Path>) -> Result<(), CliError> {
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut sink);
            for row in rows {
                w.serialize(row).context("writing report")?;
            }
            w.flush().context("writing report")?;
        }
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut sink, rows).context("writing report")?;
            writeln!(sink).context("writing report")?;
        }
    }
    sink.flush().context("writing report")?;
    Ok(())
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    if args.budget == 0 {
        return Err(CliError::Usage("--budget must be at least 1".into()));
    }
    let config = SessionConfig {
        initial_prototypes: args.protos,
        seed: args.seed,
        disambiguation: !args.no_disambiguation,
        ..SessionConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let frame = load(&args.scene)?;
    let row = simulate(frame, &scene_name(&args.scene), args.strategy.into(), args.budget, config)?;
    write_table(&[row], args.format, args.out.as_deref())
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Directory of `.hows` scenes.
    pub dir: PathBuf,
    #[arg(long, value_enum, default_value = "ioncoc")]
    pub strategy: StrategyArg,
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,20,30")]
    pub budgets: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10,30,50,70")]
    pub protos: Vec<usize>,
    /// Prototype count used by the budget sweep.
    #[arg(long, default_value_t = 30)]
    pub default_protos: usize,
    /// Budget used by the prototype sweep.
    #[arg(long, default_value_t = 20)]
    pub default_budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Mean scores of one grid point over all scenes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub sweep: String,
    pub budget: usize,
    pub protos: usize,
    pub scenes: usize,
    pub clicks: f64,
    #[serde(rename = "mIoU_b")]
    pub miou_b: Option<f64>,
    #[serde(rename = "mIoU_n")]
    pub miou_n: Option<f64>,
    #[serde(rename = "mIoU_a")]
    pub miou_a: Option<f64>,
    #[serde(rename = "HM")]
    pub hm: Option<f64>,
    pub wall_time: f64,
}

fn mean_of(rows: &[ReportRow], f: impl Fn(&ReportRow) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(f).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn scene_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "hows"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(anyhow::anyhow!("no .hows scenes in {}", dir.display())));
    }
    Ok(files)
}

pub fn ablation_table(args: &AblateArgs) -> Result<Vec<AblationRow>, CliError> {
    if args.budgets.is_empty() || args.protos.is_empty() || args.protos.contains(&0) {
        return Err(CliError::Usage("sweeps need at least one value and prototype counts >= 1".into()));
    }
    let files = scene_files(&args.dir)?;
    let scenes: Vec<(String, SceneFrame)> = files
        .iter()
        .map(|p| Ok((scene_name(p), load(p)?)))
        .collect::<Result<_, CliError>>()?;
    let kind: StrategyKind = args.strategy.into();
    let mut grid: Vec<(&str, usize, usize)> = args
        .budgets
        .iter()
        .map(|&b| ("budget", b, args.default_protos))
        .collect();
    grid.extend(args.protos.iter().map(|&k| ("protos", args.default_budget, k)));

    let mut table = Vec::with_capacity(grid.len());
    for (sweep, budget, protos) in grid {
        let config = SessionConfig {
            initial_prototypes: protos,
            seed: args.seed,
            ..SessionConfig::default()
        };
        let rows = scenes
            .iter()
            .map(|(name, frame)| simulate(frame.clone(), name, kind, budget, config.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let n = rows.len() as f64;
        table.push(AblationRow {
            sweep: sweep.to_string(),
            budget,
            protos,
            scenes: rows.len(),
            clicks: rows.iter().map(|r| r.clicks_used as f64).sum::<f64>() / n,
            miou_b: mean_of(&rows, |r| r.miou_b),
            miou_n: mean_of(&rows, |r| r.miou_n),
            miou_a: mean_of(&rows, |r| r.miou_a),
            hm: mean_of(&rows, |r| r.hm),
            wall_time: rows.iter().map(|r| r.wall_time).sum::<f64>() / n,
        });
    }
    Ok(table)
}

pub fn ablate(args: &AblateArgs) -> Result<(), CliError> {
    let table = ablation_table(args)?;
    write_table(&table, args.format, args.out.as_deref())
}

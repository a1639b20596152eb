use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use fishreid::dataset::{Dataset, DatasetPaths};
use fishreid::evaluation::reports_from_records;
use fishreid::geometry::LocationMetric;
use fishreid::matching::FeatureTemperatures;
use fishreid::pipeline::{
    all_combinations, describe_frame, format_records, parse_records, run, PipelineConfig,
};
use fishreid::report::format_report;
use fishreid::simulator::{random_scene, render, NoiseSpec, RandomSceneParams, Scenario, SceneSpec};
use fishreid::types::build_sync_pairs;
use fishreid::{CameraId, Feature, Matcher, ReidError, Temperature};

#[derive(Parser)]
#[command(
    name = "fishreid",
    version,
    about = "Cross-view person re-identification for overhead fisheye cameras"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Simulate(SimulateArgs),
    /// Match every frame of a dataset and write a report.
    Run(RunArgs),
    /// Show scores, probabilities and the matching for one frame.
    Match(MatchArgs),
    /// Rebuild a report from a records file.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Location,
    Appearance,
    Combined,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Location => Scenario::Location,
            ScenarioArg::Appearance => Scenario::Appearance,
            ScenarioArg::Combined => Scenario::Combined,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene description (TOML). Without it a random scene is generated.
    #[arg(long, conflicts_with = "scenario")]
    scene: Option<PathBuf>,
    /// One of the built-in ambiguity scenes.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 5)]
    people: usize,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    /// Bbox center noise, pixels.
    #[arg(long)]
    bbox_noise: Option<f64>,
    #[arg(long)]
    embedding_noise: Option<f64>,
    /// Hue samples per histogram (0 = exact).
    #[arg(long)]
    histogram_samples: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory with the standard file names.
    #[arg(long, short)]
    data: Option<PathBuf>,
    #[arg(long, required_unless_present = "data")]
    detections: Option<PathBuf>,
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    histograms: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> fishreid::Result<Dataset> {
        let mut paths = match &self.data {
            Some(dir) => DatasetPaths::in_dir(dir),
            None => DatasetPaths::default(),
        };
        if let Some(p) = &self.detections {
            paths.detections = p.clone();
        }
        for (slot, given) in [
            (&mut paths.cameras, &self.cameras),
            (&mut paths.embeddings, &self.embeddings),
            (&mut paths.histograms, &self.histograms),
        ] {
            if given.is_some() {
                slot.clone_from(given);
            }
        }
        Dataset::load(&paths)
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Comma-separated features, e.g. DL,CH,LOC.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<Feature>>,
    #[arg(long)]
    loc_metric: Option<LocationMetric>,
    #[arg(long)]
    matcher: Option<Matcher>,
    /// Softmax temperature shared by all features.
    #[arg(long)]
    temperature: Option<f64>,
    /// Fold assignment file.
    #[arg(long)]
    folds: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(f) = &self.features {
            config.features = f.clone();
        }
        if let Some(m) = self.loc_metric {
            config.loc_metric = m;
        }
        if let Some(m) = self.matcher {
            config.matcher = m;
        }
        if let Some(t) = self.temperature {
            config.temperature = FeatureTemperatures::shared(Temperature::new(t)?);
        }
        if self.folds.is_some() {
            config.folds.clone_from(&self.folds);
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Evaluate all seven feature combinations instead of the configured one.
    #[arg(long)]
    all_combinations: bool,
    /// Report file; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-frame matching records (JSON lines).
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct MatchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    frame: u64,
    #[arg(long)]
    query: String,
    #[arg(long)]
    gallery: String,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn io_error(path: &Path, source: std::io::Error) -> ReidError {
    ReidError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => Ok(fs::write(p, text).map_err(|e| io_error(p, e))?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let mut spec = if let Some(path) = &args.scene {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        SceneSpec::from_toml(&text, path)?
    } else if let Some(s) = args.scenario {
        Scenario::from(s).spec(args.seed.unwrap_or(0))
    } else {
        random_scene(&RandomSceneParams {
            people: args.people,
            frames: args.frames,
            seed: args.seed.unwrap_or(0),
            noise: NoiseSpec::default(),
            ..RandomSceneParams::default()
        })?
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(v) = args.bbox_noise {
        spec.noise.bbox_center_px = v;
    }
    if let Some(v) = args.embedding_noise {
        spec.noise.embedding = v;
    }
    if let Some(v) = args.histogram_samples {
        spec.noise.histogram_samples = v;
    }
    let data = render(&spec)?;
    data.write_dir(&args.out)?;
    let scene = args.out.join("scene.toml");
    fs::write(&scene, spec.to_toml()).map_err(|e| io_error(&scene, e))?;
    info!(
        "wrote {} detections of {} people to {}",
        data.detections.len(),
        spec.people.len(),
        args.out.display()
    );
    Ok(())
}

fn run_cmd(args: &RunArgs) -> anyhow::Result<()> {
    let data = args.data.load()?;
    let config = args.config.resolve()?;
    let configs: Vec<PipelineConfig> = if args.all_combinations {
        all_combinations()
            .iter()
            .map(|c| config.with_features(c))
            .collect()
    } else {
        vec![config]
    };
    let out = run(&data, &configs)?;
    if let Some(p) = &args.records {
        write_output(Some(p), &format_records(&out.records))?;
    }
    write_output(args.report.as_deref(), &format_report(&out.reports))
}

fn match_cmd(args: &MatchArgs) -> anyhow::Result<()> {
    let data = args.data.load()?;
    let config = args.config.resolve()?;
    let (q, g) = (CameraId::new(&args.query), CameraId::new(&args.gallery));
    let pairs = build_sync_pairs(&data.detections, &q, &g)?;
    let Some(pair) = pairs.iter().find(|p| p.frame_index == args.frame) else {
        return Err(ReidError::Config(format!("frame {} not seen by {q} or {g}", args.frame)).into());
    };
    print!("{}", describe_frame(&data, &config, pair)?);
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.records).map_err(|e| io_error(&args.records, e))?;
    let records = parse_records(&text, &args.records)?;
    let reports = reports_from_records(&records)?;
    write_output(args.report.as_deref(), &format_report(&reports))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run_cmd(a),
        Command::Match(a) => match_cmd(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<ReidError>().map_or(1, ReidError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

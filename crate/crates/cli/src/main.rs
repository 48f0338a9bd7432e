use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modar_core::dataio::{read_sequence, DetectionCache, NormalizationManifest, SequenceDataset};
use modar_core::evalkit::{read_result, series_svg, write_report, SeriesPoint, JSON_FILE, SVG_FILE};
use modar_core::pipeline::{
    attach_forecasts, read_boxes, read_modar, read_tracks, run_detect, run_eval, run_fuse, run_normalization,
    run_pipeline, run_track, write_boxes, write_forecasts, write_modar, write_stage_sequence, write_tracks,
    PipelineConfig, PipelineError, BOXES_FILE, DETECTIONS_FILE, FORECASTS_FILE, MODAR_FILE, NORMALIZATION_FILE,
    SEQUENCE_DIR, TRACKS_FILE,
};

#[derive(Parser)]
#[command(name = "modar", version, about = "Motion-forecast virtual points for LiDAR 3D detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON pipeline configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; falls back to `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input directory holding earlier stage outputs; defaults to the output directory.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured scenario into <out>/sequence.
    Simulate(Common),
    /// Run the detector on every frame of <in>/sequence.
    Detect(Common),
    /// Track every window needed by the target frames.
    Track(Common),
    /// Forecast the stored window tracks.
    Forecast(Common),
    /// Encode virtual points for the target frames.
    Modar(Common),
    /// Produce final boxes with the configured fusion strategy.
    Fuse(Common),
    /// Evaluate final boxes and write metric reports.
    Eval(Common),
    /// Run every stage.
    Pipeline(Common),
    /// Combine the metrics of several runs into one chart.
    Report {
        /// Run directories holding metrics.json.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Ctx {
    cfg: PipelineConfig,
    out: PathBuf,
    input: PathBuf,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self, PipelineError> {
        let mut cfg = match &c.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = c.seed {
            cfg.seed = seed;
        }
        let out = c
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .ok_or_else(|| PipelineError::config("/output_dir", "no output directory: pass --out"))?;
        std::fs::create_dir_all(&out).map_err(|e| io_stage("output", e))?;
        let input = c.input.clone().unwrap_or_else(|| out.clone());
        Ok(Ctx { cfg, out, input })
    }

    fn sequence(&self) -> Result<SequenceDataset, PipelineError> {
        read_sequence(&self.input.join(SEQUENCE_DIR)).map_err(|e| io_stage("read sequence", e))
    }

    fn cache(&self) -> Result<DetectionCache, PipelineError> {
        let cache = DetectionCache::read(&self.input.join(DETECTIONS_FILE)).map_err(|e| io_stage("read detections", e))?;
        let want = self.cfg.detector.fingerprint(self.cfg.seed);
        if cache.fingerprint != want {
            return Err(io_stage(
                "read detections",
                "detection cache was produced under a different detector configuration or seed",
            ));
        }
        Ok(cache)
    }
}

fn io_stage<E: Into<Box<dyn std::error::Error + Send + Sync>>>(stage: &'static str, e: E) -> PipelineError {
    PipelineError::Stage { stage, source: e.into() }
}

fn run(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Simulate(c) => {
            let ctx = Ctx::new(&c)?;
            let ds = modar_core::pipeline::load_sequence(&ctx.cfg)?;
            write_stage_sequence(&ctx.out, &ds)
        }
        Command::Detect(c) => {
            let ctx = Ctx::new(&c)?;
            let ds = ctx.sequence()?;
            run_detect(&ds, &ctx.cfg)
                .write(&ctx.out.join(DETECTIONS_FILE))
                .map_err(|e| io_stage("detect", e))
        }
        Command::Track(c) => {
            let ctx = Ctx::new(&c)?;
            let ds = ctx.sequence()?;
            let targets = ctx.cfg.resolve_targets(ds.len())?;
            let store = run_track(ds.len(), &targets, &ctx.cache()?, &ctx.cfg)?;
            write_tracks(&ctx.out.join(TRACKS_FILE), &store)
        }
        Command::Forecast(c) => {
            let ctx = Ctx::new(&c)?;
            let store = attach_forecasts(read_tracks(&ctx.input.join(TRACKS_FILE))?, &ctx.cfg)?;
            write_forecasts(&ctx.out.join(FORECASTS_FILE), &store)
        }
        Command::Modar(c) => {
            let ctx = Ctx::new(&c)?;
            let ds = ctx.sequence()?;
            let targets = ctx.cfg.resolve_targets(ds.len())?;
            let store = attach_forecasts(read_tracks(&ctx.input.join(TRACKS_FILE))?, &ctx.cfg)?;
            let manifest = run_normalization(&ctx.cfg)?;
            manifest
                .write(&ctx.out.join(NORMALIZATION_FILE))
                .map_err(|e| io_stage("modar", e))?;
            let points = modar_core::pipeline::run_modar(ds.len(), &targets, &store, &manifest, &ctx.cfg)?;
            write_modar(&ctx.out.join(MODAR_FILE), &points)
        }
        Command::Fuse(c) => {
            let ctx = Ctx::new(&c)?;
            let ds = ctx.sequence()?;
            let targets = ctx.cfg.resolve_targets(ds.len())?;
            let cache = ctx.cache()?;
            let (manifest, points) = if ctx.cfg.fusion.strategy.uses_modar() {
                let m = NormalizationManifest::read(&ctx.input.join(NORMALIZATION_FILE))
                    .map_err(|e| io_stage("fuse", e))?;
                (Some(m), read_modar(&ctx.input.join(MODAR_FILE), &targets)?)
            } else {
                (None, Default::default())
            };
            let boxes = run_fuse(&ds, &targets, &cache, &points, manifest.as_ref(), &ctx.cfg)?;
            write_boxes(&ctx.out.join(BOXES_FILE), &boxes)
        }
        Command::Eval(c) => {
            let ctx = Ctx::new(&c)?;
            let ds = ctx.sequence()?;
            let targets = ctx.cfg.resolve_targets(ds.len())?;
            let boxes = read_boxes(&ctx.input.join(BOXES_FILE), &targets)?;
            let modar_path = ctx.input.join(MODAR_FILE);
            let count = if ctx.cfg.fusion.strategy.uses_modar() && modar_path.exists() {
                Some(read_modar(&modar_path, &targets)?.values().map(Vec::len).sum())
            } else {
                None
            };
            let result = run_eval(&boxes, &ds, count, &ctx.cfg)?;
            write_report(&result, &ctx.out).map_err(|e| io_stage("eval", e))?;
            log::info!("L2 mAPH {:?}", result.m_aph());
            Ok(())
        }
        Command::Pipeline(c) => {
            let ctx = Ctx::new(&c)?;
            let result = run_pipeline(&ctx.cfg, &ctx.out)?;
            match result.m_aph() {
                Some(v) => println!("L2 mAPH {v:.4}"),
                None => println!("L2 mAPH absent"),
            }
            Ok(())
        }
        Command::Report { runs, out } => report(&runs, &out),
    }
}

fn report(runs: &[PathBuf], out: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out).map_err(|e| io_stage("report", e))?;
    let mut series = Vec::new();
    let mut csv = String::from("run,modar_points_per_frame,m_aph\n");
    for dir in runs {
        let r = read_result(&dir.join(JSON_FILE)).map_err(|e| io_stage("report", e))?;
        let label = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into());
        let pts = r.modar_points_per_frame.unwrap_or(0.0);
        let aph = r.m_aph();
        csv.push_str(&format!(
            "{label},{pts:.3},{}\n",
            aph.map(|v| format!("{v:.6}")).unwrap_or_default()
        ));
        if let Some(aph) = aph {
            series.push(SeriesPoint {
                label,
                modar_points: pts,
                aph,
            });
        }
    }
    std::fs::write(out.join("summary.csv"), csv).map_err(|e| io_stage("report", e))?;
    std::fs::write(out.join(SVG_FILE), series_svg(&series)).map_err(|e| io_stage("report", e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MODAR_LOG")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

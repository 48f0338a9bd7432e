//! End-to-end orchestration: configuration, the per-stage functions shared
//! with the command-line tool, and the artifact layout of an output
//! directory.

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{
    build_normalization, read_jsonl, read_sequence, write_detections, write_jsonl, write_sequence, DetectionCache,
    Frame, NormalizationManifest, SequenceDataset,
};
use crate::detector::{nms, ClusterParams, DetectorConfig};
use crate::evalkit::{evaluate, write_report, EvalConfig, EvalResult};
use crate::exec::{self, Execution};
use crate::forecast::{Predictor, Trajectory, TrackletInput};
use crate::fusion::{
    assemble_early, early_plus_late, fuse_with_lidar_boxes, fusion_detector, late_fuse, modar_only_detect,
    FusionStrategy, FusionWeights,
};
use crate::geometry::Box3D;
use crate::modar::{Direction, ModarConfig, ModarPoint, ModarRecord, WindowKey, WindowResult, WindowStore};
use crate::seed::substream;
use crate::simkit::{scenario_library, simulate, Scenario};
use crate::tracker::TrackerParams;
use crate::FRAME_PERIOD_S;

pub const SEQUENCE_DIR: &str = "sequence";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const NORMALIZATION_FILE: &str = "normalization.json";
pub const TRACKS_FILE: &str = "window_tracks.jsonl";
pub const FORECASTS_FILE: &str = "forecasts.jsonl";
pub const MODAR_FILE: &str = "modar.jsonl";
pub const BOXES_FILE: &str = "boxes.jsonl";

type BoxedError = Box<dyn StdError + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxedError,
    },
}

impl PipelineError {
    pub fn config(pointer: &str, message: impl Into<String>) -> Self {
        PipelineError::Config {
            pointer: pointer.to_string(),
            message: message.into(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config { .. })
    }
}

fn stage<E: Into<BoxedError>>(name: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage: name,
        source: e.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModarMode {
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModarSection {
    pub mode: ModarMode,
    /// Past offsets used: 1..=past_offsets.
    pub past_offsets: u32,
    /// Future offsets used: 1..=future_offsets. Must be 0 when online.
    pub future_offsets: u32,
    /// Trajectories per track (J).
    pub trajectories: usize,
}

impl Default for ModarSection {
    fn default() -> Self {
        ModarSection {
            mode: ModarMode::Offline,
            past_offsets: 80,
            future_offsets: 80,
            trajectories: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub strategy: FusionStrategy,
    pub weights: FusionWeights,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            strategy: FusionStrategy::Early,
            weights: FusionWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: Scenario,
    #[serde(default)]
    pub frame_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scenario: Option<ScenarioSection>,
    /// Directory of a stored sequence, used instead of a scenario.
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub detector: DetectorConfig,
    pub tracker: TrackerParams,
    pub predictor: Predictor,
    pub modar: ModarSection,
    pub fusion: FusionSection,
    pub eval: EvalConfig,
    pub output_dir: Option<PathBuf>,
    /// LiDAR sweeps stacked for early fusion (1 or 3).
    pub lidar_stack_frames: usize,
    /// Evaluated frames; empty means every frame.
    pub targets: Vec<u64>,
    /// Use the data-parallel executor where the build supports it.
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scenario: Some(ScenarioSection {
                name: Scenario::MixedCity,
                frame_count: None,
            }),
            dataset: None,
            seed: 0,
            detector: DetectorConfig::default(),
            tracker: TrackerParams::default(),
            predictor: Predictor::MultiHypothesis,
            modar: ModarSection::default(),
            fusion: FusionSection::default(),
            eval: EvalConfig::default(),
            output_dir: None,
            lidar_stack_frames: 1,
            targets: Vec::new(),
            parallel: true,
        }
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        "/".into()
    } else {
        out
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            PipelineError::config(&pointer, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::config("/", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match (&self.scenario, &self.dataset) {
            (Some(_), Some(_)) => return Err(PipelineError::config("/dataset", "give either scenario or dataset")),
            (None, None) => return Err(PipelineError::config("/scenario", "scenario or dataset is required")),
            _ => {}
        }
        if let Some(ScenarioSection { frame_count: Some(0), .. }) = self.scenario {
            return Err(PipelineError::config("/scenario/frame_count", "must be >= 1"));
        }
        self.detector.validate().map_err(|m| PipelineError::config("/detector", m))?;
        self.tracker.validate().map_err(|e| PipelineError::config("/tracker", e.to_string()))?;
        if matches!(self.predictor, Predictor::Reverse(_)) {
            return Err(PipelineError::config("/predictor", "must be a forward predictor"));
        }
        if self.modar.mode == ModarMode::Online && self.modar.future_offsets > 0 {
            return Err(PipelineError::config(
                "/modar/future_offsets",
                "online mode uses past offsets only",
            ));
        }
        self.modar_config()
            .validate()
            .map_err(|e| PipelineError::config("/modar", e.to_string()))?;
        self.fusion.weights.validate().map_err(|m| PipelineError::config("/fusion/weights", m))?;
        self.eval.validate().map_err(|e| PipelineError::config("/eval", e.to_string()))?;
        if !matches!(self.lidar_stack_frames, 1 | 3) {
            return Err(PipelineError::config("/lidar_stack_frames", "must be 1 or 3"));
        }
        Ok(())
    }

    pub fn modar_config(&self) -> ModarConfig {
        let future = match self.modar.mode {
            ModarMode::Online => 0,
            ModarMode::Offline => self.modar.future_offsets,
        };
        ModarConfig {
            past_offsets: (1..=self.modar.past_offsets).collect(),
            future_offsets: (1..=future).collect(),
            predictor: self.predictor.clone(),
            trajectories: self.modar.trajectories,
        }
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    fn cluster_params(&self) -> ClusterParams {
        match &self.detector {
            DetectorConfig::Cluster { params } => params.clone(),
            DetectorConfig::Oracle { .. } => ClusterParams::default(),
        }
    }

    /// Evaluated frames, checked against the sequence length.
    pub fn resolve_targets(&self, sequence_len: usize) -> Result<Vec<u64>, PipelineError> {
        if self.targets.is_empty() {
            return Ok((0..sequence_len as u64).collect());
        }
        let mut t = self.targets.clone();
        t.sort_unstable();
        t.dedup();
        if let Some(bad) = t.iter().find(|f| **f as usize >= sequence_len) {
            return Err(PipelineError::config(
                "/targets",
                format!("frame {bad} outside sequence of {sequence_len} frames"),
            ));
        }
        Ok(t)
    }
}

/// Simulates the configured scenario or reads the configured dataset.
pub fn load_sequence(cfg: &PipelineConfig) -> Result<SequenceDataset, PipelineError> {
    match (&cfg.scenario, &cfg.dataset) {
        (Some(s), _) => {
            let mut scene = scenario_library(s.name, cfg.seed);
            if let Some(n) = s.frame_count {
                scene.frame_count = n;
            }
            simulate(&scene, cfg.execution()).map_err(stage("simulate"))
        }
        (None, Some(dir)) => read_sequence(dir).map_err(stage("simulate")),
        (None, None) => Err(PipelineError::config("/scenario", "scenario or dataset is required")),
    }
}

/// Runs the detector once on every frame.
pub fn run_detect(ds: &SequenceDataset, cfg: &PipelineConfig) -> DetectionCache {
    let boxes = exec::map(cfg.execution(), &ds.frames, |f| cfg.detector.detect(f, cfg.seed));
    let mut cache = DetectionCache::new(cfg.detector.fingerprint(cfg.seed));
    for (f, b) in ds.frames.iter().zip(boxes) {
        cache.insert(f.frame_index, b);
    }
    cache
}

pub const NORMALIZATION_FRAMES: usize = 120;

/// Training sequence for the normalization statistics: a MIXED_CITY scene
/// on its own seed substream, disjoint from the evaluated sequence. Only
/// ground truth is used, so the LiDAR is nearly switched off.
pub fn normalization_corpus(cfg: &PipelineConfig) -> Result<SequenceDataset, PipelineError> {
    let mut scene = scenario_library(Scenario::MixedCity, substream(cfg.seed, "normalization"));
    scene.frame_count = NORMALIZATION_FRAMES;
    scene.lidar.points_at_10m = 1.0;
    scene.lidar.occlusion = false;
    simulate(&scene, cfg.execution()).map_err(stage("modar"))
}

pub fn run_normalization(cfg: &PipelineConfig) -> Result<NormalizationManifest, PipelineError> {
    let corpus = normalization_corpus(cfg)?;
    build_normalization(std::slice::from_ref(&corpus), &cfg.predictor).map_err(stage("modar"))
}

/// Tracks and forecasts every window needed by the targets.
pub fn run_track(
    sequence_len: usize,
    targets: &[u64],
    cache: &DetectionCache,
    cfg: &PipelineConfig,
) -> Result<WindowStore, PipelineError> {
    WindowStore::build(
        targets,
        sequence_len as u64,
        cache,
        &cfg.tracker,
        &cfg.modar_config(),
        cfg.execution(),
    )
    .map_err(stage("track"))
}

/// Recomputes the forecasts of stored window tracks from their histories.
pub fn attach_forecasts(results: Vec<WindowResult>, cfg: &PipelineConfig) -> Result<WindowStore, PipelineError> {
    let config = cfg.modar_config();
    let filled = exec::try_map(cfg.execution(), &results, |r| {
        let predictor = config.window_predictor(r.key.direction);
        let mut r = r.clone();
        for t in &mut r.tracks {
            let input = TrackletInput::new(t.class, t.history.clone(), FRAME_PERIOD_S)?;
            t.trajectories = predictor.predict(&input);
        }
        Ok::<_, crate::forecast::ForecastError>(r)
    })
    .map_err(stage("forecast"))?;
    Ok(WindowStore {
        results: filled.into_iter().map(|r| (r.key, r)).collect(),
    })
}

pub fn run_modar(
    sequence_len: usize,
    targets: &[u64],
    store: &WindowStore,
    manifest: &NormalizationManifest,
    cfg: &PipelineConfig,
) -> Result<BTreeMap<u64, Vec<ModarPoint>>, PipelineError> {
    let config = cfg.modar_config();
    let points = exec::try_map(cfg.execution(), targets, |&t| {
        store.points_for(t, sequence_len as u64, &config, manifest)
    })
    .map_err(stage("modar"))?;
    Ok(targets.iter().copied().zip(points).collect())
}

fn stacked_frames(ds: &SequenceDataset, t: u64, stack: usize) -> Vec<(&Frame, f64)> {
    (0..stack as u64)
        .filter(|k| *k <= t)
        .filter_map(|k| ds.frame(t - k).map(|f| (f, -(k as f64) * FRAME_PERIOD_S)))
        .collect()
}

/// Final boxes per target frame under the configured strategy.
pub fn run_fuse(
    ds: &SequenceDataset,
    targets: &[u64],
    cache: &DetectionCache,
    modar: &BTreeMap<u64, Vec<ModarPoint>>,
    manifest: Option<&NormalizationManifest>,
    cfg: &PipelineConfig,
) -> Result<BTreeMap<u64, Vec<Box3D>>, PipelineError> {
    let strategy = cfg.fusion.strategy;
    let weights = &cfg.fusion.weights;
    let cluster = cfg.cluster_params();
    let empty = Vec::new();
    let boxes = exec::try_map(cfg.execution(), targets, |&t| -> Result<Vec<Box3D>, PipelineError> {
        let frame = ds.frame(t).ok_or_else(|| stage("fuse")(format!("missing frame {t}")))?;
        let lidar = cache
            .get(t)
            .ok_or_else(|| stage("fuse")(format!("no cached detections for frame {t}")))?;
        if strategy == FusionStrategy::LidarOnly {
            return Ok(nms(lidar, weights.nms_iou, true));
        }
        let manifest = manifest.ok_or_else(|| stage("fuse")("normalization manifest required"))?;
        let points = modar.get(&t).unwrap_or(&empty);
        let modar_only = || modar_only_detect(points, weights, manifest).map_err(stage("fuse"));
        let early = || -> Result<Vec<Box3D>, PipelineError> {
            let fused = assemble_early(&stacked_frames(ds, t, cfg.lidar_stack_frames), points, &frame.ego_pose);
            let out = match (&cfg.detector, cfg.lidar_stack_frames) {
                (DetectorConfig::Cluster { .. }, n) if n > 1 => {
                    fusion_detector(&fused, &frame.ego_pose, &cluster, weights, manifest)
                }
                _ => fuse_with_lidar_boxes(lidar.to_vec(), &fused, &frame.ego_pose, &cluster, weights, manifest),
            };
            out.map_err(stage("fuse"))
        };
        Ok(match strategy {
            FusionStrategy::LidarOnly => unreachable!("handled above"),
            FusionStrategy::ModarOnly => modar_only()?,
            FusionStrategy::Early => early()?,
            FusionStrategy::Late => late_fuse(&nms(lidar, weights.nms_iou, true), &modar_only()?, weights),
            FusionStrategy::EarlyLate => early_plus_late(&early()?, &modar_only()?, weights),
        })
    })?;
    Ok(targets.iter().copied().zip(boxes).collect())
}

pub fn run_eval(
    boxes: &BTreeMap<u64, Vec<Box3D>>,
    ds: &SequenceDataset,
    modar_points: Option<usize>,
    cfg: &PipelineConfig,
) -> Result<EvalResult, PipelineError> {
    let mut result = evaluate(boxes, ds, &cfg.eval).map_err(stage("eval"))?;
    result.modar_points_per_frame = modar_points.map(|n| n as f64 / boxes.len().max(1) as f64);
    Ok(result)
}

/// Everything a run produces, kept in memory.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub dataset: SequenceDataset,
    pub targets: Vec<u64>,
    pub cache: DetectionCache,
    pub manifest: Option<NormalizationManifest>,
    pub windows: Option<WindowStore>,
    pub modar: BTreeMap<u64, Vec<ModarPoint>>,
    pub boxes: BTreeMap<u64, Vec<Box3D>>,
    pub result: EvalResult,
}

impl PipelineOutput {
    pub fn modar_point_count(&self) -> usize {
        self.modar.values().map(Vec::len).sum()
    }
}

/// Runs every stage on an already loaded sequence without touching disk.
pub fn run_on_dataset(dataset: SequenceDataset, cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let targets = cfg.resolve_targets(dataset.len())?;
    let cache = run_detect(&dataset, cfg);
    let uses_modar = cfg.fusion.strategy.uses_modar();
    let (manifest, windows, modar) = if uses_modar {
        let manifest = run_normalization(cfg)?;
        let store = run_track(dataset.len(), &targets, &cache, cfg)?;
        let modar = run_modar(dataset.len(), &targets, &store, &manifest, cfg)?;
        (Some(manifest), Some(store), modar)
    } else {
        (None, None, BTreeMap::new())
    };
    let boxes = run_fuse(&dataset, &targets, &cache, &modar, manifest.as_ref(), cfg)?;
    let count = uses_modar.then(|| modar.values().map(Vec::len).sum());
    let result = run_eval(&boxes, &dataset, count, cfg)?;
    Ok(PipelineOutput {
        dataset,
        targets,
        cache,
        manifest,
        windows,
        modar,
        boxes,
        result,
    })
}

pub fn run_in_memory(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    run_on_dataset(load_sequence(cfg)?, cfg)
}

pub fn write_tracks(path: &Path, store: &WindowStore) -> Result<(), PipelineError> {
    write_jsonl(path, store.results.values()).map_err(stage("track"))
}

pub fn read_tracks(path: &Path) -> Result<Vec<WindowResult>, PipelineError> {
    read_jsonl(path).map_err(stage("track"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub direction: Direction,
    pub start: u64,
    pub end: u64,
    pub track_id: u64,
    pub trajectories: Vec<Trajectory>,
}

pub fn write_forecasts(path: &Path, store: &WindowStore) -> Result<(), PipelineError> {
    let rows = store.results.values().flat_map(|r| {
        let WindowKey { direction, start, end } = r.key;
        r.tracks.iter().map(move |t| ForecastRecord {
            direction,
            start,
            end,
            track_id: t.track_id,
            trajectories: t.trajectories.clone(),
        })
    });
    write_jsonl(path, rows).map_err(stage("forecast"))
}

pub fn write_modar(path: &Path, modar: &BTreeMap<u64, Vec<ModarPoint>>) -> Result<(), PipelineError> {
    let rows = modar.iter().flat_map(|(f, pts)| {
        pts.iter().map(move |p| ModarRecord {
            frame_index: *f,
            point: p.clone(),
        })
    });
    write_jsonl(path, rows).map_err(stage("modar"))
}

/// Virtual points grouped by frame; every target gets an entry.
pub fn read_modar(path: &Path, targets: &[u64]) -> Result<BTreeMap<u64, Vec<ModarPoint>>, PipelineError> {
    let rows: Vec<ModarRecord> = read_jsonl(path).map_err(stage("modar"))?;
    let mut out: BTreeMap<u64, Vec<ModarPoint>> = targets.iter().map(|t| (*t, Vec::new())).collect();
    for r in rows {
        out.entry(r.frame_index).or_default().push(r.point);
    }
    Ok(out)
}

pub fn write_boxes(path: &Path, boxes: &BTreeMap<u64, Vec<Box3D>>) -> Result<(), PipelineError> {
    write_detections(path, boxes).map_err(stage("fuse"))
}

/// Boxes grouped by frame; every target gets an entry.
pub fn read_boxes(path: &Path, targets: &[u64]) -> Result<BTreeMap<u64, Vec<Box3D>>, PipelineError> {
    let mut out: BTreeMap<u64, Vec<Box3D>> = targets.iter().map(|t| (*t, Vec::new())).collect();
    for (f, b) in crate::dataio::read_detections(path).map_err(stage("eval"))? {
        out.insert(f, b);
    }
    Ok(out)
}

pub fn write_stage_sequence(dir: &Path, ds: &SequenceDataset) -> Result<(), PipelineError> {
    write_sequence(ds, &dir.join(SEQUENCE_DIR)).map_err(stage("simulate"))
}

/// Runs every stage and persists every intermediate under `out`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<EvalResult, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(stage("pipeline"))?;
    let dataset = load_sequence(cfg)?;
    write_stage_sequence(out, &dataset)?;
    log::info!("sequence {} with {} frames", dataset.meta.sequence_id, dataset.len());
    let o = run_on_dataset(dataset, cfg)?;
    o.cache.write(&out.join(DETECTIONS_FILE)).map_err(stage("detect"))?;
    if let (Some(manifest), Some(store)) = (&o.manifest, &o.windows) {
        manifest.write(&out.join(NORMALIZATION_FILE)).map_err(stage("modar"))?;
        write_tracks(&out.join(TRACKS_FILE), store)?;
        write_modar(&out.join(MODAR_FILE), &o.modar)?;
        log::info!("{} virtual points over {} targets", o.modar_point_count(), o.targets.len());
    }
    write_boxes(&out.join(BOXES_FILE), &o.boxes)?;
    write_report(&o.result, out).map_err(stage("eval"))?;
    Ok(o.result)
}

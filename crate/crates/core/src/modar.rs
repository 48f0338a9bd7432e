//! Virtual points from motion forecasts.
//!
//! For a target frame `t0`, every window offset `m` picks an 11-frame
//! subsequence ending `m` frames before `t0` (forward) or starting `m` frames
//! after it (reverse). Each window is tracked, every confirmed track is
//! forecast, and the waypoint that lands on `t0` becomes a virtual point.
//! Windows depend only on their frame span, so their tracks and forecasts are
//! computed once and shared by all target frames.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{DataError, DetectionCache, NormalizationManifest};
use crate::exec::{self, Execution};
use crate::forecast::{ranked, Predictor, Trajectory, TrackletEntry, TrackletInput, HORIZON, INPUT_FRAMES};
use crate::geometry::{wrap_angle, Box3D, ObjectClass};
use crate::tracker::{track_sequence, tracking_score, KalmanTrack, TrackerParams};
use crate::FRAME_PERIOD_S;

pub const FEATURE_DIM: usize = 13;
/// Frames after the first one in a full window.
pub const WINDOW_SPAN: u64 = INPUT_FRAMES as u64 - 1;

/// Feature channel indices.
pub mod channel {
    pub const SIZE_L: usize = 0;
    pub const SIZE_W: usize = 1;
    pub const SIZE_H: usize = 2;
    pub const HEADING_COS: usize = 3;
    pub const HEADING_SIN: usize = 4;
    pub const CLASS_ONEHOT: usize = 5;
    pub const TRACKING_SCORE: usize = 8;
    pub const TRAJECTORY_SCORE: usize = 9;
    pub const STD_X: usize = 10;
    pub const STD_Y: usize = 11;
    pub const T_CLOSEST: usize = 12;
}

#[derive(Debug, Error)]
pub enum ModarError {
    #[error("trajectory has no waypoint at offset {0}")]
    MissingWaypoint(u32),
    #[error("detection cache has no entry for frame {0}")]
    MissingDetections(u64),
    #[error("invalid modar config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub feature: [f64; FEATURE_DIM],
    pub track_id: u64,
    /// Window offset `m` the point was generated for.
    pub offset: u32,
    pub direction: Direction,
    pub hypothesis: usize,
}

impl ModarPoint {
    pub fn class(&self) -> ObjectClass {
        let oh = &self.feature[channel::CLASS_ONEHOT..channel::CLASS_ONEHOT + 3];
        let mut best = 0;
        for i in 1..3 {
            if oh[i] > oh[best] {
                best = i;
            }
        }
        ObjectClass::from_index(best).expect("three classes")
    }

    pub fn tracking_score(&self) -> f64 {
        self.feature[channel::TRACKING_SCORE]
    }

    pub fn trajectory_score(&self) -> f64 {
        self.feature[channel::TRAJECTORY_SCORE]
    }

    pub fn t_closest_s(&self) -> f64 {
        self.feature[channel::T_CLOSEST]
    }

    /// Checks the unit heading, the one-hot class and the score ranges.
    pub fn validate(&self) -> Result<(), String> {
        let f = &self.feature;
        let norm = f[channel::HEADING_COS].powi(2) + f[channel::HEADING_SIN].powi(2);
        if (norm - 1.0).abs() > 1e-9 {
            return Err(format!("heading vector norm^2 {norm}"));
        }
        let oh = &f[channel::CLASS_ONEHOT..channel::CLASS_ONEHOT + 3];
        if oh.iter().any(|v| *v != 0.0 && *v != 1.0) || oh.iter().sum::<f64>() != 1.0 {
            return Err(format!("class one-hot {oh:?}"));
        }
        for (name, v) in [("tracking", self.tracking_score()), ("trajectory", self.trajectory_score())] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} score {v}"));
            }
        }
        if f.iter().any(|v| !v.is_finite()) || !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err("non-finite value".into());
        }
        Ok(())
    }
}

/// One line of a MoDAR JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModarRecord {
    pub frame_index: u64,
    #[serde(flatten)]
    pub point: ModarPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModarConfig {
    pub past_offsets: Vec<u32>,
    pub future_offsets: Vec<u32>,
    /// Forward predictor; reverse windows wrap it in time reversal.
    pub predictor: Predictor,
    /// Trajectories used per track (top by confidence).
    pub trajectories: usize,
}

impl Default for ModarConfig {
    fn default() -> Self {
        ModarConfig::with_counts(HORIZON as u32, HORIZON as u32)
    }
}

impl ModarConfig {
    /// Offsets `1..=past` and `1..=future` with the multi-hypothesis bank and J = 1.
    pub fn with_counts(past: u32, future: u32) -> Self {
        ModarConfig {
            past_offsets: (1..=past).collect(),
            future_offsets: (1..=future).collect(),
            predictor: Predictor::MultiHypothesis,
            trajectories: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ModarError> {
        for &m in self.past_offsets.iter().chain(&self.future_offsets) {
            if m == 0 || m as usize > HORIZON {
                return Err(ModarError::InvalidConfig(format!("offset {m} outside 1..={HORIZON}")));
            }
        }
        if self.trajectories == 0 {
            return Err(ModarError::InvalidConfig("trajectories must be >= 1".into()));
        }
        if matches!(self.predictor, Predictor::Reverse(_)) {
            return Err(ModarError::InvalidConfig("predictor must be a forward predictor".into()));
        }
        Ok(())
    }

    pub fn window_predictor(&self, direction: Direction) -> Predictor {
        match direction {
            Direction::Forward => self.predictor.clone(),
            Direction::Reverse => self.predictor.reversed(),
        }
    }
}

/// Inclusive frame span of a window; the identity under which window
/// results are cached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowKey {
    pub direction: Direction,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub direction: Direction,
    pub offset: u32,
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn key(&self) -> WindowKey {
        WindowKey {
            direction: self.direction,
            start: self.start,
            end: self.end,
        }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Windows for target frame `t0`: forward ascending `m`, then reverse
/// ascending `m`. Spans are clipped to the sequence; a window with no frame
/// left inside the sequence is skipped.
pub fn build_windows(t0: u64, config: &ModarConfig, sequence_len: u64) -> Vec<Window> {
    let mut out = Vec::new();
    if sequence_len == 0 || t0 >= sequence_len {
        return out;
    }
    let last = sequence_len - 1;
    let mut past: Vec<u32> = config.past_offsets.clone();
    past.sort_unstable();
    past.dedup();
    let mut future: Vec<u32> = config.future_offsets.clone();
    future.sort_unstable();
    future.dedup();
    for m in past {
        let m64 = m as u64;
        if m64 > t0 {
            continue;
        }
        let end = t0 - m64;
        out.push(Window {
            direction: Direction::Forward,
            offset: m,
            start: end.saturating_sub(WINDOW_SPAN),
            end,
        });
    }
    for m in future {
        let start = t0 + m as u64;
        if start > last {
            continue;
        }
        out.push(Window {
            direction: Direction::Reverse,
            offset: m,
            start,
            end: (start + WINDOW_SPAN).min(last),
        });
    }
    out
}

/// A confirmed track of one window with its forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTrack {
    pub track_id: u64,
    pub class: ObjectClass,
    /// Frame the forecasts start from: the last observation for forward
    /// windows, the earliest for reverse windows.
    pub anchor_frame: u64,
    pub anchor: Box3D,
    pub tracking_score: f64,
    /// Tracked boxes in original frame order.
    pub history: Vec<TrackletEntry>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    #[serde(flatten)]
    pub key: WindowKey,
    pub tracks: Vec<WindowTrack>,
}

fn window_detections(key: &WindowKey, cache: &DetectionCache) -> Result<Vec<(i64, Vec<Box3D>)>, ModarError> {
    let mut frames = Vec::with_capacity((key.end - key.start + 1) as usize);
    for f in key.start..=key.end {
        let dets = cache.get(f).ok_or(ModarError::MissingDetections(f))?;
        match key.direction {
            Direction::Forward => frames.push((f as i64, dets.to_vec())),
            // virtual time runs backwards; headings turn around with it
            Direction::Reverse => frames.push((
                -(f as i64),
                dets.iter()
                    .map(|d| {
                        let mut d = *d;
                        d.yaw = wrap_angle(d.yaw + PI);
                        d
                    })
                    .collect(),
            )),
        }
    }
    if key.direction == Direction::Reverse {
        frames.reverse();
    }
    Ok(frames)
}

fn original_history(track: &KalmanTrack, direction: Direction) -> Vec<TrackletEntry> {
    let mut out: Vec<TrackletEntry> = track
        .history
        .iter()
        .map(|h| match direction {
            Direction::Forward => TrackletEntry {
                frame_index: h.frame_index,
                bbox: h.bbox,
                score: h.score,
            },
            Direction::Reverse => {
                let mut b = h.bbox;
                b.yaw = wrap_angle(b.yaw + PI);
                TrackletEntry {
                    frame_index: -h.frame_index,
                    bbox: b,
                    score: h.score,
                }
            }
        })
        .collect();
    out.sort_by_key(|e| e.frame_index);
    out
}

/// Tracks one window over cached detections and forecasts every confirmed track.
pub fn process_window(
    key: &WindowKey,
    cache: &DetectionCache,
    tracker: &TrackerParams,
    config: &ModarConfig,
) -> Result<WindowResult, ModarError> {
    let frames = window_detections(key, cache)?;
    let predictor = config.window_predictor(key.direction);
    let mut tracks = Vec::new();
    for t in track_sequence(&frames, tracker) {
        let last = t.last_frame().expect("confirmed tracks have history");
        let score = tracking_score(&t, last).expect("history present");
        let mut history = original_history(&t, key.direction);
        if history.len() > INPUT_FRAMES {
            let cut = history.len() - INPUT_FRAMES;
            match key.direction {
                Direction::Forward => drop(history.drain(..cut)),
                Direction::Reverse => history.truncate(INPUT_FRAMES),
            }
        }
        let anchor = match key.direction {
            Direction::Forward => *history.last().expect("non-empty"),
            Direction::Reverse => history[0],
        };
        let input = TrackletInput::new(t.class, history.clone(), FRAME_PERIOD_S)
            .expect("tracker histories are strictly increasing");
        tracks.push(WindowTrack {
            track_id: t.track_id,
            class: t.class,
            anchor_frame: anchor.frame_index as u64,
            anchor: anchor.bbox,
            tracking_score: score,
            history,
            trajectories: predictor.predict(&input),
        });
    }
    Ok(WindowResult { key: *key, tracks })
}

/// Window results shared across target frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowStore {
    pub results: BTreeMap<WindowKey, WindowResult>,
}

impl WindowStore {
    /// Computes every window needed by `targets`, each once.
    pub fn build(
        targets: &[u64],
        sequence_len: u64,
        cache: &DetectionCache,
        tracker: &TrackerParams,
        config: &ModarConfig,
        exec: Execution,
    ) -> Result<Self, ModarError> {
        config.validate()?;
        let keys: BTreeSet<WindowKey> = targets
            .iter()
            .flat_map(|&t0| build_windows(t0, config, sequence_len))
            .map(|w| w.key())
            .collect();
        let keys: Vec<WindowKey> = keys.into_iter().collect();
        let results = exec::try_map(exec, &keys, |k| process_window(k, cache, tracker, config))?;
        Ok(WindowStore {
            results: keys.into_iter().zip(results).collect(),
        })
    }

    /// Virtual points for `t0`, in window order then track id order.
    pub fn points_for(
        &self,
        t0: u64,
        sequence_len: u64,
        config: &ModarConfig,
        manifest: &NormalizationManifest,
    ) -> Result<Vec<ModarPoint>, ModarError> {
        let mut out = Vec::new();
        for w in build_windows(t0, config, sequence_len) {
            let Some(res) = self.results.get(&w.key()) else {
                return Err(ModarError::MissingDetections(w.end));
            };
            for track in &res.tracks {
                let eff = track.anchor_frame.abs_diff(t0);
                if eff == 0 || eff as usize > HORIZON {
                    continue;
                }
                let meta = TrackMeta {
                    track_id: track.track_id,
                    class: track.class,
                    anchor: track.anchor,
                    tracking_score: track.tracking_score,
                };
                for h in ranked(&track.trajectories).into_iter().take(config.trajectories) {
                    let mut p = encode_modar(&track.trajectories[h], eff as u32, &meta, manifest, w.direction)?;
                    p.offset = w.offset;
                    p.hypothesis = h;
                    out.push(p);
                }
            }
        }
        Ok(out)
    }
}

/// Per-track values carried into every virtual point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackMeta {
    pub track_id: u64,
    pub class: ObjectClass,
    pub anchor: Box3D,
    pub tracking_score: f64,
}

/// Encodes waypoint `m` of `traj`. Elevation and size come from the anchor
/// box; `t_closest_s` is the signed time from the nearest window frame.
pub fn encode_modar(
    traj: &Trajectory,
    m: u32,
    meta: &TrackMeta,
    manifest: &NormalizationManifest,
    direction: Direction,
) -> Result<ModarPoint, ModarError> {
    let w = traj.waypoint(m).ok_or(ModarError::MissingWaypoint(m))?;
    let stats = manifest.size_stats(meta.class)?;
    let size = meta.anchor.size();
    let mut f = [0.0; FEATURE_DIM];
    for i in 0..3 {
        f[channel::SIZE_L + i] = (size[i] - stats.mean[i]) / stats.std[i];
    }
    f[channel::HEADING_COS] = w.yaw.cos();
    f[channel::HEADING_SIN] = w.yaw.sin();
    f[channel::CLASS_ONEHOT + meta.class.index()] = 1.0;
    f[channel::TRACKING_SCORE] = meta.tracking_score.clamp(0.0, 1.0);
    f[channel::TRAJECTORY_SCORE] = traj.confidence.clamp(0.0, 1.0);
    f[channel::STD_X] = (w.std_x - manifest.spread_mean[0]) / manifest.spread_std[0];
    f[channel::STD_Y] = (w.std_y - manifest.spread_mean[1]) / manifest.spread_std[1];
    f[channel::T_CLOSEST] = match direction {
        Direction::Forward => -FRAME_PERIOD_S * m as f64,
        Direction::Reverse => FRAME_PERIOD_S * m as f64,
    };
    Ok(ModarPoint {
        x: w.x,
        y: w.y,
        z: meta.anchor.cz,
        feature: f,
        track_id: meta.track_id,
        offset: m,
        direction,
        hypothesis: 0,
    })
}

/// Inverse of [`encode_modar`]; the score is tracking times trajectory score.
pub fn decode_box(p: &ModarPoint, manifest: &NormalizationManifest) -> Result<Box3D, ModarError> {
    let class = p.class();
    let stats = manifest.size_stats(class)?;
    let f = &p.feature;
    let size: [f64; 3] = std::array::from_fn(|i| f[channel::SIZE_L + i] * stats.std[i] + stats.mean[i]);
    let yaw = f[channel::HEADING_SIN].atan2(f[channel::HEADING_COS]);
    Ok(Box3D::new(
        [p.x, p.y, p.z],
        size,
        yaw,
        class,
        p.tracking_score() * p.trajectory_score(),
    ))
}

/// Virtual points for a single target frame, computing only its windows.
pub fn generate_modar(
    sequence_len: u64,
    cache: &DetectionCache,
    tracker: &TrackerParams,
    t0: u64,
    config: &ModarConfig,
    manifest: &NormalizationManifest,
) -> Result<Vec<ModarPoint>, ModarError> {
    let store = WindowStore::build(&[t0], sequence_len, cache, tracker, config, Execution::Sequential)?;
    store.points_for(t0, sequence_len, config, manifest)
}

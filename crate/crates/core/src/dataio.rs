//! On-disk sequence format, normalization manifests and detection caches.
//!
//! A sequence directory holds:
//!
//! * `meta.json`: sequence id, frame count, frame period, class list;
//! * `frames.jsonl`: one record per frame (index, integer-microsecond
//!   timestamp, 16 row-major ego pose reals, ground-truth boxes);
//! * `points_<frame_index>.bin`: little-endian `f32` quadruples
//!   `x, y, z, intensity` in the ego frame.
//!
//! Writing is deterministic: identical datasets produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::{Predictor, TrackletInput, TrackletEntry};
use crate::geometry::{Box3D, ObjectClass, Pose};
use crate::FRAME_PERIOD_S;

pub const META_FILE: &str = "meta.json";
pub const FRAMES_FILE: &str = "frames.jsonl";
pub const STD_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {file} (frame {frame:?}, byte offset {offset}): {reason}")]
    MalformedFile {
        file: PathBuf,
        frame: Option<u64>,
        offset: u64,
        reason: String,
    },
    #[error("missing frame {0}")]
    MissingFrame(u64),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("no ground-truth boxes of class {0}")]
    EmptyClass(ObjectClass),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl LidarPoint {
    pub fn xyz(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }
}

/// Ground-truth box with tracking and visibility annotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub track_id: u64,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub class: ObjectClass,
    pub score: f64,
    pub speed_mps: f64,
    pub num_points_inside: u32,
    pub occluded_fraction: f64,
}

impl GtBox {
    pub fn from_box(track_id: u64, b: &Box3D, speed_mps: f64, num_points_inside: u32, occluded_fraction: f64) -> Self {
        GtBox {
            track_id,
            cx: b.cx,
            cy: b.cy,
            cz: b.cz,
            length: b.length,
            width: b.width,
            height: b.height,
            yaw: b.yaw,
            class: b.class,
            score: b.score,
            speed_mps,
            num_points_inside,
            occluded_fraction,
        }
    }

    pub fn bbox(&self) -> Box3D {
        Box3D {
            cx: self.cx,
            cy: self.cy,
            cz: self.cz,
            length: self.length,
            width: self.width,
            height: self.height,
            yaw: self.yaw,
            class: self.class,
            score: self.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub timestamp_us: i64,
    pub ego_pose: Pose,
    pub gt_boxes: Vec<GtBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_index: u64,
    pub timestamp_us: i64,
    pub ego_pose: Pose,
    pub gt_boxes: Vec<GtBox>,
    pub points: Vec<LidarPoint>,
}

impl Frame {
    pub fn record(&self) -> FrameRecord {
        FrameRecord {
            frame_index: self.frame_index,
            timestamp_us: self.timestamp_us,
            ego_pose: self.ego_pose,
            gt_boxes: self.gt_boxes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub sequence_id: String,
    pub frame_count: usize,
    pub frame_period_s: f64,
    pub classes: Vec<ObjectClass>,
    /// Default box sizes the generator used, keyed by class name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub class_default_sizes: BTreeMap<ObjectClass, [f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub meta: SequenceMeta,
    pub frames: Vec<Frame>,
}

impl SequenceDataset {
    pub fn new(sequence_id: impl Into<String>) -> Self {
        SequenceDataset {
            meta: SequenceMeta {
                sequence_id: sequence_id.into(),
                frame_count: 0,
                frame_period_s: FRAME_PERIOD_S,
                classes: ObjectClass::ALL.to_vec(),
                class_default_sizes: BTreeMap::new(),
            },
            frames: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, index: u64) -> Option<&Frame> {
        self.frames.get(index as usize).filter(|f| f.frame_index == index)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvariantViolation(msg));
        if self.meta.frame_count != self.frames.len() {
            return bad(format!(
                "meta frame_count {} but {} frames",
                self.meta.frame_count,
                self.frames.len()
            ));
        }
        let period_us = (self.meta.frame_period_s * 1e6).round() as i64;
        for (i, f) in self.frames.iter().enumerate() {
            if f.frame_index != i as u64 {
                return bad(format!("frame {} has index {}", i, f.frame_index));
            }
            if i > 0 {
                let dt = f.timestamp_us - self.frames[i - 1].timestamp_us;
                if dt <= 0 || (dt - period_us).abs() > 1 {
                    return bad(format!("frame {i}: timestamp step {dt} us, expected {period_us}"));
                }
            }
            if let Err(e) = f.ego_pose.validate() {
                return bad(format!("frame {i}: {e}"));
            }
            for g in &f.gt_boxes {
                if !(0.0..=1.0).contains(&g.occluded_fraction) {
                    return bad(format!("frame {i}: occluded_fraction {}", g.occluded_fraction));
                }
                if let Err(e) = g.bbox().validate() {
                    return bad(format!("frame {i} track {}: {e}", g.track_id));
                }
            }
        }
        Ok(())
    }

    /// Ground-truth boxes grouped by track id, in frame order.
    pub fn gt_tracks(&self) -> BTreeMap<u64, Vec<(u64, GtBox)>> {
        let mut out: BTreeMap<u64, Vec<(u64, GtBox)>> = BTreeMap::new();
        for f in &self.frames {
            for g in &f.gt_boxes {
                out.entry(g.track_id).or_default().push((f.frame_index, *g));
            }
        }
        out
    }
}

pub fn points_file_name(frame_index: u64) -> String {
    format!("points_{frame_index}.bin")
}

pub fn encode_points(points: &[LidarPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_points(bytes: &[u8], file: &Path, frame: u64) -> Result<Vec<LidarPoint>, DataError> {
    if !bytes.len().is_multiple_of(16) {
        return Err(DataError::MalformedFile {
            file: file.to_path_buf(),
            frame: Some(frame),
            offset: (bytes.len() / 16 * 16) as u64,
            reason: format!("length {} is not a multiple of 16 bytes", bytes.len()),
        });
    }
    let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    Ok(bytes
        .chunks_exact(16)
        .map(|c| LidarPoint {
            x: f(&c[0..4]),
            y: f(&c[4..8]),
            z: f(&c[8..12]),
            intensity: f(&c[12..16]),
        })
        .collect())
}

pub(crate) fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| DataError::InvariantViolation(e.to_string()))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(path))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| DataError::MalformedFile {
        file: path.to_path_buf(),
        frame: None,
        offset: byte_offset_of(&bytes, e.line(), e.column()),
        reason: e.to_string(),
    })
}

fn byte_offset_of(bytes: &[u8], line: usize, column: usize) -> u64 {
    if line == 0 {
        return 0;
    }
    let mut cur_line = 1;
    for (i, &b) in bytes.iter().enumerate() {
        if cur_line == line {
            return (i + column.saturating_sub(1)) as u64;
        }
        if b == b'\n' {
            cur_line += 1;
        }
    }
    bytes.len() as u64
}

/// Serializes values as JSON lines.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), DataError> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, &row).map_err(|e| DataError::InvariantViolation(e.to_string()))?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Parses a JSON-lines file, reporting the byte offset of a bad line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        if !line.trim().is_empty() {
            let row = serde_json::from_str(&line).map_err(|e| DataError::MalformedFile {
                file: path.to_path_buf(),
                frame: None,
                offset,
                reason: e.to_string(),
            })?;
            out.push(row);
        }
        offset += n as u64;
    }
    Ok(out)
}

pub fn write_sequence(dataset: &SequenceDataset, dir: &Path) -> Result<(), DataError> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json_pretty(&dir.join(META_FILE), &dataset.meta)?;
    if dataset.frames.is_empty() {
        return Ok(());
    }
    write_jsonl(&dir.join(FRAMES_FILE), dataset.frames.iter().map(Frame::record))?;
    for f in &dataset.frames {
        let path = dir.join(points_file_name(f.frame_index));
        let mut file = fs::File::create(&path).map_err(io_err(&path))?;
        file.write_all(&encode_points(&f.points)).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn read_sequence(dir: &Path) -> Result<SequenceDataset, DataError> {
    let meta: SequenceMeta = read_json(&dir.join(META_FILE))?;
    let mut dataset = SequenceDataset {
        meta,
        frames: Vec::new(),
    };
    if dataset.meta.frame_count == 0 {
        return Ok(dataset);
    }
    let frames_path = dir.join(FRAMES_FILE);
    let file = fs::File::open(&frames_path).map_err(io_err(&frames_path))?;
    let mut reader = BufReader::new(file);
    let mut offset = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(&frames_path))?;
        if n == 0 {
            break;
        }
        if line.trim().is_empty() {
            offset += n as u64;
            continue;
        }
        let malformed = |frame: Option<u64>, reason: String| DataError::MalformedFile {
            file: frames_path.clone(),
            frame,
            offset,
            reason,
        };
        let record: FrameRecord =
            serde_json::from_str(&line).map_err(|e| malformed(None, e.to_string()))?;
        let expected = dataset.frames.len() as u64;
        if record.frame_index != expected {
            return Err(malformed(
                Some(record.frame_index),
                format!("frame_index {} out of order, expected {expected}", record.frame_index),
            ));
        }
        if let Some(prev) = dataset.frames.last() {
            if record.timestamp_us <= prev.timestamp_us {
                return Err(malformed(Some(record.frame_index), "timestamps not increasing".into()));
            }
        }
        let points_path = dir.join(points_file_name(record.frame_index));
        let bytes = match fs::read(&points_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(DataError::MissingFrame(record.frame_index))
            }
            Err(e) => return Err(io_err(&points_path)(e)),
        };
        let points = decode_points(&bytes, &points_path, record.frame_index)?;
        dataset.frames.push(Frame {
            frame_index: record.frame_index,
            timestamp_us: record.timestamp_us,
            ego_pose: record.ego_pose,
            gt_boxes: record.gt_boxes,
            points,
        });
        offset += n as u64;
    }
    if dataset.frames.len() < dataset.meta.frame_count {
        return Err(DataError::MissingFrame(dataset.frames.len() as u64));
    }
    if dataset.frames.len() > dataset.meta.frame_count {
        return Err(DataError::MalformedFile {
            file: frames_path,
            frame: Some(dataset.meta.frame_count as u64),
            offset,
            reason: format!("more records than meta frame_count {}", dataset.meta.frame_count),
        });
    }
    dataset.validate()?;
    Ok(dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Mean and standard deviation used to normalize MoDAR feature channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationManifest {
    pub sizes: BTreeMap<ObjectClass, SizeStats>,
    pub spread_mean: [f64; 2],
    pub spread_std: [f64; 2],
}

impl NormalizationManifest {
    pub fn size_stats(&self, class: ObjectClass) -> Result<&SizeStats, DataError> {
        self.sizes.get(&class).ok_or(DataError::EmptyClass(class))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let positive = |v: &[f64]| v.iter().all(|&s| s > 0.0 && s.is_finite());
        for (class, s) in &self.sizes {
            if !positive(&s.std) {
                return Err(DataError::InvariantViolation(format!("non-positive size std for {class}")));
            }
        }
        if !positive(&self.spread_std) {
            return Err(DataError::InvariantViolation("non-positive spread std".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        write_json_pretty(path, self)
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let m: Self = read_json(path)?;
        m.validate()?;
        Ok(m)
    }
}

/// Welford running moments; population variance.
#[derive(Debug, Clone, Copy, Default)]
struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n == 0 {
            return STD_FLOOR;
        }
        (self.m2 / self.n as f64).max(0.0).sqrt().max(STD_FLOOR)
    }
}

/// Per-class size statistics from ground truth plus waypoint-spread
/// statistics from a forecaster dry run over ground-truth tracks.
pub fn build_normalization(
    datasets: &[SequenceDataset],
    predictor: &Predictor,
) -> Result<NormalizationManifest, DataError> {
    let mut size_acc: BTreeMap<ObjectClass, [Running; 3]> = BTreeMap::new();
    let mut spread_acc = [Running::default(); 2];
    for ds in datasets {
        for f in &ds.frames {
            for g in &f.gt_boxes {
                let acc = size_acc.entry(g.class).or_default();
                acc[0].push(g.length);
                acc[1].push(g.width);
                acc[2].push(g.height);
            }
        }
        for (_, history) in ds.gt_tracks() {
            for input in dry_run_windows(&history, ds.meta.frame_period_s) {
                for traj in predictor.predict(&input) {
                    for w in &traj.waypoints {
                        spread_acc[0].push(w.std_x);
                        spread_acc[1].push(w.std_y);
                    }
                }
            }
        }
    }
    let mut sizes = BTreeMap::new();
    for class in ObjectClass::ALL {
        let acc = size_acc.get(&class).ok_or(DataError::EmptyClass(class))?;
        sizes.insert(
            class,
            SizeStats {
                mean: [acc[0].mean, acc[1].mean, acc[2].mean],
                std: [acc[0].std(), acc[1].std(), acc[2].std()],
            },
        );
    }
    Ok(NormalizationManifest {
        sizes,
        spread_mean: [spread_acc[0].mean, spread_acc[1].mean],
        spread_std: [spread_acc[0].std(), spread_acc[1].std()],
    })
}

/// Non-overlapping 11-frame windows over a ground-truth track; a shorter
/// track contributes one window if it spans at least two frames.
fn dry_run_windows(history: &[(u64, GtBox)], dt: f64) -> Vec<TrackletInput> {
    const W: usize = crate::forecast::INPUT_FRAMES;
    let to_input = |chunk: &[(u64, GtBox)]| {
        let entries = chunk
            .iter()
            .map(|(f, g)| TrackletEntry {
                frame_index: *f as i64,
                bbox: g.bbox(),
                score: 1.0,
            })
            .collect();
        TrackletInput::new(chunk[0].1.class, entries, dt)
    };
    let mut out = Vec::new();
    if history.len() < W {
        if history.len() >= 2 {
            out.extend(to_input(history).ok());
        }
        return out;
    }
    for chunk in history.chunks_exact(W) {
        out.extend(to_input(chunk).ok());
    }
    out
}

/// Detector outputs keyed by frame, tagged with the detector configuration
/// fingerprint they were produced under.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionCache {
    pub fingerprint: String,
    frames: BTreeMap<u64, Vec<Box3D>>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    fingerprint: String,
    frames: Vec<CacheFrame>,
}

#[derive(Serialize, Deserialize)]
struct CacheFrame {
    frame_index: u64,
    boxes: Vec<Box3D>,
}

impl DetectionCache {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        DetectionCache {
            fingerprint: fingerprint.into(),
            frames: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, frame_index: u64, boxes: Vec<Box3D>) {
        self.frames.insert(frame_index, boxes);
    }

    pub fn get(&self, frame_index: u64) -> Option<&[Box3D]> {
        self.frames.get(&frame_index).map(Vec::as_slice)
    }

    /// Cached boxes, only when produced under `fingerprint`.
    pub fn lookup(&self, fingerprint: &str, frame_index: u64) -> Option<&[Box3D]> {
        if fingerprint == self.fingerprint {
            self.get(frame_index)
        } else {
            None
        }
    }

    pub fn contains(&self, frame_index: u64) -> bool {
        self.frames.contains_key(&frame_index)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = (u64, &[Box3D])> {
        self.frames.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let file = CacheFile {
            fingerprint: self.fingerprint.clone(),
            frames: self
                .frames
                .iter()
                .map(|(k, v)| CacheFrame {
                    frame_index: *k,
                    boxes: v.clone(),
                })
                .collect(),
        };
        write_json_pretty(path, &file)
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let file: CacheFile = read_json(path)?;
        let mut cache = DetectionCache::new(file.fingerprint);
        for f in file.frames {
            cache.insert(f.frame_index, f.boxes);
        }
        Ok(cache)
    }
}

/// One line of a detection output file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_index: u64,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub class: ObjectClass,
    pub score: f64,
}

impl DetectionRecord {
    pub fn new(frame_index: u64, b: &Box3D) -> Self {
        DetectionRecord {
            frame_index,
            cx: b.cx,
            cy: b.cy,
            cz: b.cz,
            length: b.length,
            width: b.width,
            height: b.height,
            yaw: b.yaw,
            class: b.class,
            score: b.score,
        }
    }

    pub fn bbox(&self) -> Box3D {
        Box3D {
            cx: self.cx,
            cy: self.cy,
            cz: self.cz,
            length: self.length,
            width: self.width,
            height: self.height,
            yaw: self.yaw,
            class: self.class,
            score: self.score,
        }
    }
}

/// Writes per-frame boxes as JSON lines, frames ascending.
pub fn write_detections(path: &Path, per_frame: &BTreeMap<u64, Vec<Box3D>>) -> Result<(), DataError> {
    write_jsonl(
        path,
        per_frame
            .iter()
            .flat_map(|(f, boxes)| boxes.iter().map(move |b| DetectionRecord::new(*f, b))),
    )
}

pub fn read_detections(path: &Path) -> Result<BTreeMap<u64, Vec<Box3D>>, DataError> {
    let rows: Vec<DetectionRecord> = read_jsonl(path)?;
    let mut out: BTreeMap<u64, Vec<Box3D>> = BTreeMap::new();
    for r in rows {
        out.entry(r.frame_index).or_default().push(r.bbox());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::Predictor;
    use proptest::prelude::*;

    fn frame(i: u64, boxes: Vec<GtBox>, points: Vec<LidarPoint>) -> Frame {
        Frame {
            frame_index: i,
            timestamp_us: 1_000_000 + i as i64 * 100_000,
            ego_pose: Pose::from_xyz_yaw(i as f64, 0.5, 0.0, 0.1),
            gt_boxes: boxes,
            points,
        }
    }

    fn gt(track: u64, class: ObjectClass, l: f64, w: f64, h: f64, x: f64) -> GtBox {
        GtBox::from_box(
            track,
            &Box3D::new([x, 1.0, h / 2.0], [l, w, h], 0.2, class, 1.0),
            0.0,
            10,
            0.0,
        )
    }

    fn dataset(frames: Vec<Frame>) -> SequenceDataset {
        let mut ds = SequenceDataset::new("test");
        ds.meta.frame_count = frames.len();
        ds.frames = frames;
        ds
    }

    #[test]
    fn empty_sequence_writes_only_meta() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(vec![]);
        write_sequence(&ds, dir.path()).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from(META_FILE)]);
        let back = read_sequence(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn single_point_file_is_16_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = LidarPoint { x: 1.0, y: 2.0, z: 3.0, intensity: 0.5 };
        let ds = dataset(vec![frame(0, vec![], vec![p])]);
        write_sequence(&ds, dir.path()).unwrap();
        let bytes = fs::read(dir.path().join("points_0.bin")).unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[0..4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[12..16], &0.5f32.to_le_bytes());
        assert_eq!(read_sequence(dir.path()).unwrap(), ds);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ds = dataset(vec![
            frame(0, vec![gt(1, ObjectClass::Vehicle, 4.5, 2.0, 1.6, 0.1)], vec![]),
            frame(1, vec![gt(1, ObjectClass::Vehicle, 4.5, 2.0, 1.6, 0.2 + 1e-13)], vec![]),
        ]);
        write_sequence(&ds, a.path()).unwrap();
        write_sequence(&ds, b.path()).unwrap();
        for name in [META_FILE, FRAMES_FILE, "points_1.bin"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        assert_eq!(read_sequence(a.path()).unwrap(), ds);
    }

    #[test]
    fn truncated_points_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = LidarPoint { x: 1.0, y: 2.0, z: 3.0, intensity: 0.5 };
        write_sequence(&dataset(vec![frame(0, vec![], vec![p, p])]), dir.path()).unwrap();
        let path = dir.path().join("points_0.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..20]).unwrap();
        match read_sequence(dir.path()) {
            Err(DataError::MalformedFile { file, offset, frame, .. }) => {
                assert!(file.ends_with("points_0.bin"));
                assert_eq!(offset, 16);
                assert_eq!(frame, Some(0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_order_frames_are_malformed() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(&dataset(vec![frame(0, vec![], vec![]), frame(1, vec![], vec![])]), dir.path()).unwrap();
        let path = dir.path().join(FRAMES_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        fs::write(&path, format!("{}\n{}\n", lines[1], lines[0])).unwrap();
        assert!(matches!(read_sequence(dir.path()), Err(DataError::MalformedFile { .. })));
    }

    #[test]
    fn missing_points_file_is_missing_frame() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(&dataset(vec![frame(0, vec![], vec![]), frame(1, vec![], vec![])]), dir.path()).unwrap();
        fs::remove_file(dir.path().join("points_1.bin")).unwrap();
        assert!(matches!(read_sequence(dir.path()), Err(DataError::MissingFrame(1))));
    }

    #[test]
    fn write_rejects_invariant_violation() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = dataset(vec![frame(0, vec![], vec![]), frame(1, vec![], vec![])]);
        ds.frames[1].timestamp_us = ds.frames[0].timestamp_us;
        assert!(matches!(write_sequence(&ds, dir.path()), Err(DataError::InvariantViolation(_))));
    }

    fn all_classes_frame(i: u64, vehicle_lengths: &[f64]) -> Frame {
        let mut boxes: Vec<GtBox> = vehicle_lengths
            .iter()
            .enumerate()
            .map(|(k, &l)| gt(k as u64 + 1, ObjectClass::Vehicle, l, 2.0, 1.6, 10.0 * k as f64))
            .collect();
        boxes.push(gt(100, ObjectClass::Pedestrian, 0.9, 0.9, 1.7, -5.0));
        boxes.push(gt(101, ObjectClass::Cyclist, 1.8, 0.8, 1.7, -10.0));
        frame(i, boxes, vec![])
    }

    #[test]
    fn degenerate_variance_is_floored() {
        let ds = dataset(vec![all_classes_frame(0, &[4.5, 4.5])]);
        let m = build_normalization(&[ds], &Predictor::ConstantVelocity).unwrap();
        let v = m.sizes[&ObjectClass::Vehicle];
        assert_eq!(v.mean, [4.5, 2.0, 1.6]);
        assert_eq!(v.std, [STD_FLOOR; 3]);
        m.validate().unwrap();
    }

    #[test]
    fn two_lengths_population_std() {
        let ds = dataset(vec![all_classes_frame(0, &[4.0, 6.0])]);
        let m = build_normalization(&[ds], &Predictor::Stationary).unwrap();
        let v = m.sizes[&ObjectClass::Vehicle];
        assert_eq!(v.mean[0], 5.0);
        assert_eq!(v.std[0], 1.0);
    }

    #[test]
    fn missing_class_is_error() {
        let ds = dataset(vec![frame(0, vec![gt(1, ObjectClass::Vehicle, 4.0, 2.0, 1.5, 0.0)], vec![])]);
        assert!(matches!(
            build_normalization(&[ds], &Predictor::Stationary),
            Err(DataError::EmptyClass(ObjectClass::Pedestrian))
        ));
    }

    #[test]
    fn manifest_matches_two_pass_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let frames: Vec<Frame> = (0..30)
            .map(|i| {
                let lengths: Vec<f64> = (0..5).map(|_| rng.random_range(3.5..5.5)).collect();
                all_classes_frame(i, &lengths)
            })
            .collect();
        let ds = dataset(frames);
        let m = build_normalization(std::slice::from_ref(&ds), &Predictor::Stationary).unwrap();
        // naive two-pass oracle
        let lengths: Vec<f64> = ds
            .frames
            .iter()
            .flat_map(|f| f.gt_boxes.iter())
            .filter(|g| g.class == ObjectClass::Vehicle)
            .map(|g| g.length)
            .collect();
        let n = lengths.len() as f64;
        let mean = lengths.iter().sum::<f64>() / n;
        let var = lengths.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let v = m.sizes[&ObjectClass::Vehicle];
        assert!((v.mean[0] - mean).abs() < 1e-9);
        assert!((v.std[0] - var.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn cache_fingerprint_gates_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = DetectionCache::new("abc");
        let b = Box3D::new([1.0, 2.0, 0.8], [4.0, 2.0, 1.6], 0.3, ObjectClass::Vehicle, 0.7);
        cache.insert(3, vec![b]);
        assert_eq!(cache.lookup("abc", 3), Some(&[b][..]));
        assert_eq!(cache.lookup("xyz", 3), None);
        let path = dir.path().join("cache.json");
        cache.write(&path).unwrap();
        assert_eq!(DetectionCache::read(&path).unwrap(), cache);
    }

    proptest! {
        #[test]
        fn point_encoding_is_bit_exact(raw in proptest::collection::vec(any::<[u32; 4]>(), 0..50)) {
            let pts: Vec<LidarPoint> = raw
                .iter()
                .map(|r| LidarPoint {
                    x: f32::from_bits(r[0]),
                    y: f32::from_bits(r[1]),
                    z: f32::from_bits(r[2]),
                    intensity: f32::from_bits(r[3]),
                })
                .collect();
            let back = decode_points(&encode_points(&pts), Path::new("x"), 0).unwrap();
            for (a, b) in pts.iter().zip(&back) {
                prop_assert_eq!(a.x.to_bits(), b.x.to_bits());
                prop_assert_eq!(a.intensity.to_bits(), b.intensity.to_bits());
            }
        }

        #[test]
        fn detections_round_trip(xs in proptest::collection::vec((-100.0..100.0f64, 0.0..1.0f64), 0..20)) {
            let dir = tempfile::tempdir().unwrap();
            let mut per_frame = BTreeMap::new();
            for (i, (x, s)) in xs.iter().enumerate() {
                per_frame.entry((i % 3) as u64).or_insert_with(Vec::new).push(
                    Box3D::new([*x, -x / 3.0, 0.7], [4.0, 2.0, 1.4], x / 10.0, ObjectClass::Cyclist, *s));
            }
            let path = dir.path().join("d.jsonl");
            write_detections(&path, &per_frame).unwrap();
            prop_assert_eq!(read_detections(&path).unwrap(), per_frame);
        }
    }
}

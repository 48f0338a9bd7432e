//! Detection metrics: AP and heading-weighted APH at two difficulty levels,
//! with range and speed breakdowns, plus CSV/SVG report files.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::maximize_gated;
use crate::dataio::{io_err, DataError, GtBox, SequenceDataset};
use crate::geometry::{heading_delta, iou_3d, Box3D, ObjectClass};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground truth in bucket")]
    NoGroundTruth,
    #[error("detections reference unknown frame {0}")]
    UnknownFrame(u64),
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub name: String,
    pub lo: f64,
    /// `None` is unbounded.
    pub hi: Option<f64>,
}

impl Bucket {
    fn new(name: &str, lo: f64, hi: Option<f64>) -> Self {
        Bucket {
            name: name.into(),
            lo,
            hi,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && self.hi.is_none_or(|h| v < h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// 3D IoU thresholds indexed like `ObjectClass::ALL`.
    pub iou_thresholds: [f64; 3],
    /// L1 keeps ground truth with strictly more points than this.
    pub l1_min_points_exclusive: u32,
    /// L2 keeps ground truth with at least this many points.
    pub l2_min_points: u32,
    pub range_buckets: Vec<Bucket>,
    pub speed_buckets: Vec<Bucket>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: [0.7, 0.5, 0.5],
            l1_min_points_exclusive: 5,
            l2_min_points: 1,
            range_buckets: vec![
                Bucket::new("0-30m", 0.0, Some(30.0)),
                Bucket::new("30-50m", 30.0, Some(50.0)),
                Bucket::new("50m+", 50.0, None),
            ],
            speed_buckets: vec![
                Bucket::new("STN", 0.0, Some(0.2)),
                Bucket::new("SLOW", 0.2, Some(3.0)),
                Bucket::new("MED", 3.0, Some(6.0)),
                Bucket::new("FST", 6.0, Some(10.0)),
                Bucket::new("VFST", 10.0, None),
            ],
        }
    }
}

fn validate_partition(buckets: &[Bucket]) -> Result<(), String> {
    let Some(first) = buckets.first() else {
        return Err("bucket list is empty".into());
    };
    if first.lo != 0.0 {
        return Err("buckets must start at 0".into());
    }
    for pair in buckets.windows(2) {
        if pair[0].hi != Some(pair[1].lo) || pair[1].lo <= pair[0].lo {
            return Err(format!("bucket {} does not continue {}", pair[1].name, pair[0].name));
        }
    }
    if buckets.last().is_some_and(|b| b.hi.is_some()) {
        return Err("last bucket must be unbounded".into());
    }
    Ok(())
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(EvalError::InvalidConfig("iou thresholds must be in (0, 1)".into()));
        }
        validate_partition(&self.range_buckets).map_err(EvalError::InvalidConfig)?;
        validate_partition(&self.speed_buckets).map_err(EvalError::InvalidConfig)?;
        Ok(())
    }

    pub fn threshold(&self, class: ObjectClass) -> f64 {
        self.iou_thresholds[class.index()]
    }

    pub fn in_difficulty(&self, gt: &GtBox, difficulty: Difficulty) -> bool {
        match difficulty {
            Difficulty::L1 => gt.num_points_inside > self.l1_min_points_exclusive,
            Difficulty::L2 => gt.num_points_inside >= self.l2_min_points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    L1,
    L2,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatch {
    /// (detection index, ground-truth index, 3D IoU)
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_dets: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Optimal one-to-one matching maximizing summed 3D IoU over pairs at or
/// above `threshold`. Inputs are one frame and one class.
pub fn match_frame(dets: &[Box3D], gts: &[Box3D], threshold: f64) -> FrameMatch {
    let weights: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| {
            gts.iter()
                .map(|g| {
                    let iou = iou_3d(d, g);
                    if iou >= threshold {
                        iou
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut pairs: Vec<(usize, usize, f64)> = if dets.is_empty() || gts.is_empty() {
        Vec::new()
    } else {
        maximize_gated(&weights, threshold.max(f64::MIN_POSITIVE))
            .into_iter()
            .map(|(d, g)| (d, g, weights[d][g]))
            .collect()
    };
    pairs.sort_by_key(|p| p.0);
    let mut det_used = vec![false; dets.len()];
    let mut gt_used = vec![false; gts.len()];
    for &(d, g, _) in &pairs {
        det_used[d] = true;
        gt_used[g] = true;
    }
    FrameMatch {
        pairs,
        unmatched_dets: (0..dets.len()).filter(|i| !det_used[*i]).collect(),
        unmatched_gts: (0..gts.len()).filter(|i| !gt_used[*i]).collect(),
    }
}

/// One scored detection for AP: a true positive carries its heading weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApSample {
    pub score: f64,
    pub heading_weight: Option<f64>,
}

impl ApSample {
    pub fn tp(score: f64, det_yaw: f64, gt_yaw: f64) -> Self {
        ApSample {
            score,
            heading_weight: Some(heading_weight(det_yaw, gt_yaw)),
        }
    }

    pub fn fp(score: f64) -> Self {
        ApSample {
            score,
            heading_weight: None,
        }
    }
}

pub fn heading_weight(det_yaw: f64, gt_yaw: f64) -> f64 {
    (1.0 - heading_delta(det_yaw, gt_yaw) / PI).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub precision_h: f64,
    pub recall_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub aph: f64,
    pub curve: Vec<PrPoint>,
}

/// Area under the precision envelope, with recall levels in ascending order.
fn envelope_area(points: &[(f64, f64)]) -> f64 {
    let mut env = vec![0.0f64; points.len()];
    let mut best = 0.0f64;
    for i in (0..points.len()).rev() {
        best = best.max(points[i].1);
        env[i] = best;
    }
    let mut area = 0.0;
    let mut prev = 0.0;
    for (i, (r, _)) in points.iter().enumerate() {
        area += (r - prev) * env[i];
        prev = *r;
    }
    area
}

/// Descending score; ties by heading weight so sums do not depend on input order.
fn sample_order(a: &ApSample, b: &ApSample) -> std::cmp::Ordering {
    let w = |s: &ApSample| s.heading_weight.unwrap_or(-1.0);
    b.score.total_cmp(&a.score).then(w(a).total_cmp(&w(b)))
}

/// Sweeps every distinct score as a threshold, descending.
pub fn compute_ap(samples: &[ApSample], num_gt: usize) -> Result<ApResult, EvalError> {
    if num_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let mut sorted: Vec<&ApSample> = samples.iter().collect();
    sorted.sort_by(|a, b| sample_order(a, b));
    let n = num_gt as f64;
    let (mut tp, mut fp, mut h) = (0usize, 0usize, 0.0f64);
    let mut curve = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score == threshold {
            match sorted[i].heading_weight {
                Some(w) => {
                    tp += 1;
                    h += w;
                }
                None => fp += 1,
            }
            i += 1;
        }
        let total = (tp + fp) as f64;
        curve.push(PrPoint {
            threshold,
            precision: tp as f64 / total,
            recall: tp as f64 / n,
            precision_h: h / total,
            recall_h: h / n,
        });
    }
    let ap = envelope_area(&curve.iter().map(|p| (p.recall, p.precision)).collect::<Vec<_>>());
    let aph = envelope_area(&curve.iter().map(|p| (p.recall_h, p.precision_h)).collect::<Vec<_>>());
    Ok(ApResult { ap, aph, curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub class: ObjectClass,
    pub difficulty: Difficulty,
    pub breakdown: String,
    /// Absent when the bucket has no ground truth.
    pub ap: Option<f64>,
    pub aph: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub cells: Vec<EvalCell>,
    pub frames_evaluated: usize,
    /// Mean virtual points per evaluated frame, when the run produced any.
    pub modar_points_per_frame: Option<f64>,
}

pub const OVERALL: &str = "ALL";

impl EvalResult {
    pub fn cell(&self, class: ObjectClass, difficulty: Difficulty, breakdown: &str) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.class == class && c.difficulty == difficulty && c.breakdown == breakdown)
    }

    pub fn aph(&self, class: ObjectClass, difficulty: Difficulty, breakdown: &str) -> Option<f64> {
        self.cell(class, difficulty, breakdown).and_then(|c| c.aph)
    }

    pub fn ap(&self, class: ObjectClass, difficulty: Difficulty, breakdown: &str) -> Option<f64> {
        self.cell(class, difficulty, breakdown).and_then(|c| c.ap)
    }

    /// Mean L2 APH over vehicles and pedestrians, skipping absent cells.
    pub fn m_aph(&self) -> Option<f64> {
        mean_present(&[
            self.aph(ObjectClass::Vehicle, Difficulty::L2, OVERALL),
            self.aph(ObjectClass::Pedestrian, Difficulty::L2, OVERALL),
        ])
    }
}

pub fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

#[derive(Debug, Clone, Copy)]
enum Axis {
    Overall,
    Range(usize),
    Speed(usize),
}

struct MatchedDet {
    score: f64,
    gt: usize,
    weight: f64,
}

struct FrameClassRecord {
    gts: Vec<(GtBox, f64)>,
    gt_matched: Vec<bool>,
    matched: Vec<MatchedDet>,
    /// (score, range from ego)
    unmatched: Vec<(f64, f64)>,
}

fn bev_range(p: [f64; 3], ego: [f64; 3]) -> f64 {
    (p[0] - ego[0]).hypot(p[1] - ego[1])
}

/// Metrics over the frames present in `detections` (world-frame boxes).
pub fn evaluate(
    detections: &BTreeMap<u64, Vec<Box3D>>,
    dataset: &SequenceDataset,
    config: &EvalConfig,
) -> Result<EvalResult, EvalError> {
    config.validate()?;
    let mut records: BTreeMap<ObjectClass, Vec<FrameClassRecord>> = BTreeMap::new();
    for (&f, dets) in detections {
        let frame = dataset.frame(f).ok_or(EvalError::UnknownFrame(f))?;
        let t = frame.ego_pose.translation();
        let ego = [t.x, t.y, t.z];
        for class in ObjectClass::ALL {
            let d: Vec<Box3D> = dets.iter().filter(|b| b.class == class).copied().collect();
            let g: Vec<GtBox> = frame.gt_boxes.iter().filter(|b| b.class == class).cloned().collect();
            let gb: Vec<Box3D> = g.iter().map(GtBox::bbox).collect();
            let m = match_frame(&d, &gb, config.threshold(class));
            let mut gt_matched = vec![false; g.len()];
            let matched = m
                .pairs
                .iter()
                .map(|&(di, gi, _)| {
                    gt_matched[gi] = true;
                    MatchedDet {
                        score: d[di].score,
                        gt: gi,
                        weight: heading_weight(d[di].yaw, g[gi].yaw),
                    }
                })
                .collect();
            let unmatched = m
                .unmatched_dets
                .iter()
                .map(|&i| (d[i].score, bev_range(d[i].center(), ego)))
                .collect();
            let gts = g
                .into_iter()
                .map(|b| {
                    let r = bev_range([b.cx, b.cy, b.cz], ego);
                    (b, r)
                })
                .collect();
            records.entry(class).or_default().push(FrameClassRecord {
                gts,
                gt_matched,
                matched,
                unmatched,
            });
        }
    }
    let mut axes = vec![(Axis::Overall, OVERALL.to_string())];
    axes.extend(config.range_buckets.iter().enumerate().map(|(i, b)| (Axis::Range(i), b.name.clone())));
    axes.extend(config.speed_buckets.iter().enumerate().map(|(i, b)| (Axis::Speed(i), b.name.clone())));
    let mut cells = Vec::new();
    for class in ObjectClass::ALL {
        let recs = records.get(&class).map(Vec::as_slice).unwrap_or(&[]);
        for difficulty in [Difficulty::L1, Difficulty::L2] {
            for (axis, name) in &axes {
                let gt_in_bucket = |gt: &GtBox, range: f64| match axis {
                    Axis::Overall => true,
                    Axis::Range(i) => config.range_buckets[*i].contains(range),
                    Axis::Speed(i) => config.speed_buckets[*i].contains(gt.speed_mps),
                };
                // unmatched detections have no speed: they count against every speed bucket
                let fp_in_bucket = |range: f64| match axis {
                    Axis::Range(i) => config.range_buckets[*i].contains(range),
                    _ => true,
                };
                let (mut samples, mut num_gt, mut fn_) = (Vec::new(), 0usize, 0usize);
                for r in recs {
                    for (i, (gt, range)) in r.gts.iter().enumerate() {
                        if config.in_difficulty(gt, difficulty) && gt_in_bucket(gt, *range) {
                            num_gt += 1;
                            if !r.gt_matched[i] {
                                fn_ += 1;
                            }
                        }
                    }
                    for m in &r.matched {
                        let (gt, range) = &r.gts[m.gt];
                        if config.in_difficulty(gt, difficulty) && gt_in_bucket(gt, *range) {
                            samples.push(ApSample {
                                score: m.score,
                                heading_weight: Some(m.weight),
                            });
                        }
                    }
                    for &(score, range) in &r.unmatched {
                        if fp_in_bucket(range) {
                            samples.push(ApSample::fp(score));
                        }
                    }
                }
                let tp = samples.iter().filter(|s| s.heading_weight.is_some()).count();
                let fp = samples.len() - tp;
                let (ap, aph, curve) = match compute_ap(&samples, num_gt) {
                    Ok(res) => (Some(res.ap), Some(res.aph), res.curve),
                    Err(_) => (None, None, Vec::new()),
                };
                cells.push(EvalCell {
                    class,
                    difficulty,
                    breakdown: name.clone(),
                    ap,
                    aph,
                    tp,
                    fp,
                    fn_,
                    curve,
                });
            }
        }
    }
    Ok(EvalResult {
        cells,
        frames_evaluated: detections.len(),
        modar_points_per_frame: None,
    })
}

pub const CSV_HEADER: &str = "class,difficulty,breakdown,ap,aph,tp,fp,fn";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn to_csv(result: &EvalResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &result.cells {
        let _ = writeln!(
            out,
            "{},{:?},{},{},{},{},{},{}",
            c.class.name(),
            c.difficulty,
            c.breakdown,
            fmt_opt(c.ap),
            fmt_opt(c.aph),
            c.tp,
            c.fp,
            c.fn_
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub label: String,
    pub modar_points: f64,
    pub aph: f64,
}

/// Bar chart of L2 mAPH against the number of virtual points per frame.
pub fn series_svg(points: &[SeriesPoint]) -> String {
    let (w, h, left, bottom, top) = (640.0, 400.0, 70.0, 60.0, 30.0);
    let plot_w = w - left - 20.0;
    let plot_h = h - bottom - top;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let x0 = left;
    let y0 = h - bottom;
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{:.1}" y2="{y0}" stroke="black"/>"#, x0 + plot_w);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{top}" stroke="black"/>"#);
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = y0 - v * plot_h;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.2}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">MoDAR points per frame</text>"#,
        x0 + plot_w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">L2 mAPH</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    let n = points.len().max(1) as f64;
    let slot = plot_w / n;
    let mut line = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let aph = p.aph.clamp(0.0, 1.0);
        let bw = slot * 0.6;
        let x = x0 + slot * i as f64 + (slot - bw) / 2.0;
        let bh = aph * plot_h;
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{bh:.1}" fill="#4a7ab5"/>"##,
            y0 - bh
        );
        let cx = x + bw / 2.0;
        line.push(format!("{cx:.1},{:.1}", y0 - bh));
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" font-size="11" text-anchor="middle">{:.0}</text>"#,
            y0 + 16.0,
            p.modar_points
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            y0 + 30.0,
            xml_escape(&p.label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" font-size="10" text-anchor="middle">{aph:.3}</text>"#,
            y0 - bh - 4.0
        );
    }
    if line.len() > 1 {
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="2"/>"##,
            line.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub const CSV_FILE: &str = "metrics.csv";
pub const JSON_FILE: &str = "metrics.json";
pub const SVG_FILE: &str = "aph_vs_modar.svg";

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    Ok(std::fs::write(path, bytes).map_err(io_err(path))?)
}

/// Writes `metrics.csv`, `metrics.json` and a one-bar `aph_vs_modar.svg`.
pub fn write_report(result: &EvalResult, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(CSV_FILE), to_csv(result).as_bytes())?;
    let json = serde_json::to_string_pretty(result).expect("result serializes");
    write_file(&dir.join(JSON_FILE), format!("{json}\n").as_bytes())?;
    let series: Vec<SeriesPoint> = result
        .m_aph()
        .map(|aph| SeriesPoint {
            label: "run".into(),
            modar_points: result.modar_points_per_frame.unwrap_or(0.0),
            aph,
        })
        .into_iter()
        .collect();
    write_file(&dir.join(SVG_FILE), series_svg(&series).as_bytes())
}

pub fn read_result(path: &Path) -> Result<EvalResult, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| {
        EvalError::Io(DataError::MalformedFile {
            file: path.to_path_buf(),
            frame: None,
            offset: 0,
            reason: e.to_string(),
        })
    })
}

//! LiDAR-only detectors: BEV-grid clustering and a noisy ground-truth oracle,
//! plus class-wise greedy NMS.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{Frame, GtBox};
use crate::geometry::{iou_3d, iou_bev, min_area_rect, wrap_angle, Box3D, ObjectClass, Pose};
use crate::seed::rng_for;
use crate::simkit::default_size;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub cell_size: f64,
    pub min_points: usize,
    pub score_saturation: usize,
    /// Points at or below this height are treated as ground.
    pub ground_z: f64,
    /// Linking distance grown per meter of range, so sparse far returns stay one cluster.
    pub link_per_m: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            cell_size: 0.3,
            min_points: 5,
            score_saturation: 50,
            ground_z: 0.2,
            link_per_m: 0.01,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cell_size > 0.0) {
            return Err("cell_size must be > 0".into());
        }
        if !(self.link_per_m >= 0.0) {
            return Err("link_per_m must be >= 0".into());
        }
        if self.min_points == 0 || self.score_saturation == 0 {
            return Err("min_points and score_saturation must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleNoise {
    /// Logistic detection probability in the interior point count.
    pub midpoint: f64,
    /// Logistic slope; `inf` turns the curve into a step at the midpoint.
    pub slope: f64,
    pub center_sigma: f64,
    pub size_sigma: f64,
    pub yaw_sigma: f64,
    /// Spread of the score around the detection probability.
    pub score_sigma: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    /// False positives are drawn within this distance of the ego, per axis.
    pub fp_extent: f64,
    pub fp_max_score: f64,
}

impl Default for OracleNoise {
    fn default() -> Self {
        OracleNoise {
            midpoint: 8.0,
            slope: 0.5,
            center_sigma: 0.1,
            size_sigma: 0.05,
            yaw_sigma: 0.03,
            score_sigma: 0.05,
            fp_rate: 0.5,
            fp_extent: 75.0,
            fp_max_score: 0.5,
        }
    }
}

impl OracleNoise {
    pub fn perfect() -> Self {
        OracleNoise {
            midpoint: 0.0,
            slope: f64::INFINITY,
            center_sigma: 0.0,
            size_sigma: 0.0,
            yaw_sigma: 0.0,
            score_sigma: 0.0,
            fp_rate: 0.0,
            fp_extent: 75.0,
            fp_max_score: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let sigmas = [self.center_sigma, self.size_sigma, self.yaw_sigma, self.score_sigma];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err("noise sigmas must be >= 0".into());
        }
        if !(self.slope >= 0.0) || self.midpoint.is_nan() {
            return Err("logistic slope must be >= 0".into());
        }
        if !(self.fp_rate >= 0.0) || !(self.fp_extent > 0.0) || !(0.0..=1.0).contains(&self.fp_max_score) {
            return Err("false-positive model out of range".into());
        }
        Ok(())
    }

    /// Detection probability for a box with `n` interior points.
    pub fn detection_probability(&self, n: u32) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let d = n as f64 - self.midpoint;
        if self.slope.is_infinite() {
            return if d > 0.0 {
                1.0
            } else if d < 0.0 {
                0.0
            } else {
                0.5
            };
        }
        1.0 / (1.0 + (-self.slope * d).exp())
    }
}

/// Connected components of occupied BEV cells, each as a list of point
/// indices. A cell links to occupied cells within its reach: one cell near
/// the sensor, more at range where returns thin out. Components come out in
/// ascending order of their smallest cell.
fn bev_components(points: &[[f64; 3]], cell: f64, link_per_m: f64) -> Vec<Vec<usize>> {
    let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let key = ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
        cells.entry(key).or_default().push(i);
    }
    let keys: Vec<(i64, i64)> = cells.keys().copied().collect();
    let index: BTreeMap<(i64, i64), usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut parent: Vec<usize> = (0..keys.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (i, &(cx, cy)) in keys.iter().enumerate() {
        let range = ((cx as f64 + 0.5) * cell).hypot((cy as f64 + 0.5) * cell);
        let reach = ((link_per_m * range / cell).round() as i64).max(1);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                if let Some(&j) = index.get(&(cx + dx, cy + dy)) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().extend(&cells[key]);
    }
    groups.into_values().collect()
}

pub fn classify(area: f64, height: f64) -> ObjectClass {
    if area > 3.0 {
        ObjectClass::Vehicle
    } else if height > 1.4 && area <= 1.0 {
        ObjectClass::Pedestrian
    } else {
        ObjectClass::Cyclist
    }
}

/// Clusters ego-frame points and returns world-frame boxes.
pub fn detect_cluster_xyz(points: &[[f64; 3]], pose: &Pose, params: &ClusterParams) -> Vec<Box3D> {
    let above: Vec<[f64; 3]> = points.iter().copied().filter(|p| p[2] > params.ground_z).collect();
    let mut out = Vec::new();
    for comp in bev_components(&above, params.cell_size, params.link_per_m) {
        if comp.len() < params.min_points {
            continue;
        }
        let xy: Vec<[f64; 2]> = comp.iter().map(|&i| [above[i][0], above[i][1]]).collect();
        let Some(rect) = min_area_rect(&xy) else {
            continue;
        };
        let (mut zlo, mut zhi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &comp {
            zlo = zlo.min(above[i][2]);
            zhi = zhi.max(above[i][2]);
        }
        // objects whose returns reach the ground cut stand on the ground plane
        if zlo <= params.ground_z + params.cell_size {
            zlo = 0.0;
        }
        let height = (zhi - zlo).max(1e-3);
        let length = rect.length.max(1e-3);
        let width = rect.width.max(1e-3);
        let class = classify(length * width, height);
        let score = (comp.len() as f64 / params.score_saturation as f64).min(1.0);
        let c = pose.apply([rect.cx, rect.cy, zlo + height / 2.0]);
        let yaw = wrap_angle(rect.yaw + pose.yaw());
        out.push(Box3D::new(c, [length, width, height], yaw, class, score));
    }
    out
}

pub fn detect_cluster(frame: &Frame, params: &ClusterParams) -> Vec<Box3D> {
    let pts: Vec<[f64; 3]> = frame.points.iter().map(|p| p.xyz()).collect();
    detect_cluster_xyz(&pts, &frame.ego_pose, params)
}

/// Noisy copy of the ground truth. Every gt box consumes the same number of
/// random draws whether or not it is detected, so one box's outcome never
/// shifts another's.
pub fn detect_oracle<R: Rng>(gt_boxes: &[GtBox], ego_pose: &Pose, noise: &OracleNoise, rng: &mut R) -> Vec<Box3D> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::new();
    for g in gt_boxes {
        let p = noise.detection_probability(g.num_points_inside);
        let u: f64 = rng.random();
        let e: [f64; 8] = std::array::from_fn(|_| unit.sample(rng));
        if g.num_points_inside == 0 || u >= p {
            continue;
        }
        let b = g.bbox();
        let size = [
            (b.length + noise.size_sigma * e[3]).max(0.1),
            (b.width + noise.size_sigma * e[4]).max(0.1),
            (b.height + noise.size_sigma * e[5]).max(0.1),
        ];
        let center = [
            b.cx + noise.center_sigma * e[0],
            b.cy + noise.center_sigma * e[1],
            b.cz + noise.center_sigma * e[2],
        ];
        let score = (p + noise.score_sigma * e[7]).clamp(0.01, 1.0);
        let yaw = wrap_angle(b.yaw + noise.yaw_sigma * e[6]);
        out.push(Box3D::new(center, size, yaw, b.class, score));
    }
    let whole = noise.fp_rate.floor() as usize;
    let extra = usize::from(rng.random::<f64>() < noise.fp_rate.fract());
    let t = ego_pose.translation();
    for _ in 0..whole + extra {
        let class = ObjectClass::ALL[rng.random_range(0..3)];
        let x = t[0] + rng.random_range(-noise.fp_extent..=noise.fp_extent);
        let y = t[1] + rng.random_range(-noise.fp_extent..=noise.fp_extent);
        let yaw = rng.random_range(-PI..PI);
        let score = rng.random_range(0.01..=noise.fp_max_score.max(0.01));
        let size = default_size(class);
        out.push(Box3D::new([x, y, size[2] / 2.0], size, wrap_angle(yaw), class, score));
    }
    out
}

/// Greedy class-wise suppression in descending score, ties broken by lower
/// cx then lower cy. `bev` selects BEV IoU instead of 3D IoU.
pub fn nms(boxes: &[Box3D], iou_threshold: f64, bev: bool) -> Vec<Box3D> {
    let mut order: Vec<&Box3D> = boxes.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.cx.total_cmp(&b.cx))
            .then(a.cy.total_cmp(&b.cy))
    });
    let mut kept: Vec<Box3D> = Vec::new();
    for b in order {
        let suppressed = kept.iter().any(|k| {
            k.class == b.class && {
                let iou = if bev { iou_bev(k, b) } else { iou_3d(k, b) };
                iou > iou_threshold
            }
        });
        if !suppressed {
            kept.push(*b);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum DetectorConfig {
    Cluster {
        #[serde(default)]
        params: ClusterParams,
    },
    Oracle {
        #[serde(default)]
        noise: OracleNoise,
    },
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::Cluster {
            params: ClusterParams::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            DetectorConfig::Cluster { params } => params.validate(),
            DetectorConfig::Oracle { noise } => noise.validate(),
        }
    }

    /// Identifies the configuration and seed that produced a detection cache.
    pub fn fingerprint(&self, seed: u64) -> String {
        let body = serde_json::to_string(self).expect("detector config serializes");
        crate::seed::fingerprint(format!("{body}|{seed}").as_bytes())
    }

    /// Runs the configured detector on one frame.
    pub fn detect(&self, frame: &Frame, seed: u64) -> Vec<Box3D> {
        match self {
            DetectorConfig::Cluster { params } => detect_cluster(frame, params),
            DetectorConfig::Oracle { noise } => {
                let mut rng = rng_for(seed, "detector", frame.frame_index);
                detect_oracle(&frame.gt_boxes, &frame.ego_pose, noise, &mut rng)
            }
        }
    }
}

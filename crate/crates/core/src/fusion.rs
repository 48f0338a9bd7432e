//! Early fusion (point-set assembly and a fusion-aware geometric detector),
//! late fusion by weighted box fusion, and MoDAR-only decoding.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::assignment::maximize_gated;
use crate::dataio::{DataError, Frame, NormalizationManifest};
use crate::detector::{detect_cluster_xyz, nms, ClusterParams};
use crate::geometry::{iou_bev, transform_box, wrap_angle, Box3D, Pose};
use crate::modar::{channel, decode_box, Direction, ModarPoint, FEATURE_DIM};

pub const LIDAR: u8 = 0;
pub const MODAR: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedPoint {
    /// Target ego frame.
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub feature: [f64; FEATURE_DIM],
    pub modality: u8,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionWeights {
    pub lidar: f64,
    pub modar: f64,
    /// Source weights of MoDAR-only boxes for offsets 1, 2, ...
    pub offset_decay: Vec<f64>,
    pub wbf_iou: f64,
    pub max_boxes: usize,
    /// Single-linkage radius for grouping virtual points, meters.
    pub proximity_radius: f64,
    /// Centers closer than this count as agreeing virtual boxes, meters.
    pub support_radius: f64,
    /// Consensus clusters below this fraction of the largest cluster in their group are dropped.
    pub min_cluster_share: f64,
    /// Proposals not confirmed by a same-class LiDAR box need votes from at least
    /// this fraction of the contributing windows.
    pub min_unmatched_votes: f64,
    /// A proposal sets the front/back sign of a LiDAR box only when at least this
    /// weighted share of its virtual boxes agree on the sign.
    pub min_heading_agreement: f64,
    /// Minimum BEV IoU for a consensus proposal to confirm a LiDAR box.
    pub match_iou: f64,
    /// Unconfirmed proposals are emitted only over fewer LiDAR points than this.
    pub min_lidar_points: usize,
    pub unmatched_discount: f64,
    pub nms_iou: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights {
            lidar: 0.9,
            modar: 0.1,
            offset_decay: vec![1.0, 0.8, 0.6, 0.4, 0.2],
            wbf_iou: 0.55,
            max_boxes: 300,
            proximity_radius: 1.0,
            support_radius: 0.5,
            min_cluster_share: 0.5,
            min_unmatched_votes: 0.25,
            min_heading_agreement: 0.8,
            match_iou: 0.1,
            min_lidar_points: 5,
            unmatched_discount: 0.5,
            nms_iou: 0.5,
        }
    }
}

impl FusionWeights {
    pub fn validate(&self) -> Result<(), String> {
        if self.lidar < 0.0 || self.modar < 0.0 || self.offset_decay.iter().any(|w| *w < 0.0) {
            return Err("weights must be >= 0".into());
        }
        for (name, v) in [("wbf_iou", self.wbf_iou), ("match_iou", self.match_iou), ("nms_iou", self.nms_iou)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("{name} must be in (0, 1)"));
            }
        }
        if !(self.proximity_radius > 0.0) || !(self.support_radius > 0.0) || !(0.0..=1.0).contains(&self.unmatched_discount) {
            return Err("proximity radius or discount out of range".into());
        }
        for (name, v) in [
            ("min_cluster_share", self.min_cluster_share),
            ("min_unmatched_votes", self.min_unmatched_votes),
            ("min_heading_agreement", self.min_heading_agreement),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// LiDAR frames (each with its time offset in seconds) and virtual points
/// brought into the target ego frame. LiDAR features are the intensity
/// zero-padded to the MoDAR feature length.
pub fn assemble_early(lidar: &[(&Frame, f64)], modar: &[ModarPoint], target_pose: &Pose) -> Vec<FusedPoint> {
    let mut order: Vec<usize> = (0..lidar.len()).collect();
    order.sort_by(|&a, &b| lidar[a].1.total_cmp(&lidar[b].1));
    let mut out = Vec::with_capacity(lidar.iter().map(|(f, _)| f.points.len()).sum::<usize>() + modar.len());
    for i in order {
        let (frame, dt) = lidar[i];
        let same = frame.ego_pose == *target_pose;
        let rel = Pose::relative(&frame.ego_pose, target_pose);
        for p in &frame.points {
            let q = if same { p.xyz() } else { rel.apply(p.xyz()) };
            let mut feature = [0.0; FEATURE_DIM];
            feature[0] = p.intensity as f64;
            out.push(FusedPoint {
                x: q[0],
                y: q[1],
                z: q[2],
                feature,
                modality: LIDAR,
                time_s: dt,
            });
        }
    }
    let inv = target_pose.inverse();
    let (c, s) = {
        let yaw = -target_pose.yaw();
        (yaw.cos(), yaw.sin())
    };
    for p in modar {
        let q = inv.apply([p.x, p.y, p.z]);
        let mut feature = p.feature;
        let (hc, hs) = (feature[channel::HEADING_COS], feature[channel::HEADING_SIN]);
        feature[channel::HEADING_COS] = c * hc - s * hs;
        feature[channel::HEADING_SIN] = s * hc + c * hs;
        out.push(FusedPoint {
            x: q[0],
            y: q[1],
            z: q[2],
            feature,
            modality: MODAR,
            time_s: p.t_closest_s(),
        });
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Member {
    bbox: Box3D,
    weight: f64,
    source: usize,
}

/// Score-weighted average of the members. Headings are flipped by pi onto
/// `ref_yaw` before averaging their unit vectors.
/// Footprint aspect excess over square, clamped to [0, 1].
fn elongation(b: &Box3D) -> f64 {
    let (lo, hi) = (b.length.min(b.width), b.length.max(b.width));
    if lo <= 0.0 {
        return 1.0;
    }
    (hi / lo - 1.0).clamp(0.0, 1.0)
}

fn fuse_members(members: &[Member], ref_yaw: f64) -> Box3D {
    if members.len() == 1 {
        return members[0].bbox;
    }
    let mut omega: Vec<f64> = members.iter().map(|m| m.weight * m.bbox.score).collect();
    let mut total: f64 = omega.iter().sum();
    if total <= 0.0 {
        omega = vec![1.0; members.len()];
        total = members.len() as f64;
    }
    let mut acc = [0.0; 6];
    let (mut hc, mut hs) = (0.0, 0.0);
    for (m, w) in members.iter().zip(&omega) {
        let b = &m.bbox;
        for (a, v) in acc.iter_mut().zip([b.cx, b.cy, b.cz, b.length, b.width, b.height]) {
            *a += w * v;
        }
        let mut yaw = b.yaw;
        if wrap_angle(yaw - ref_yaw).abs() > FRAC_PI_2 {
            yaw += PI;
        }
        hc += w * yaw.cos();
        hs += w * yaw.sin();
    }
    let v: [f64; 6] = std::array::from_fn(|i| acc[i] / total);
    let yaw = if hc == 0.0 && hs == 0.0 { ref_yaw } else { hs.atan2(hc) };
    let mut sources: Vec<usize> = members.iter().map(|m| m.source).collect();
    sources.sort_unstable();
    sources.dedup();
    let denom: f64 = sources
        .iter()
        .map(|s| members.iter().find(|m| m.source == *s).map_or(0.0, |m| m.weight))
        .sum();
    let score_mass: f64 = members.iter().map(|m| m.weight * m.bbox.score).sum();
    let score = if denom > 0.0 { (score_mass / denom).clamp(0.0, 1.0) } else { 0.0 };
    Box3D::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], yaw, members[0].bbox.class, score)
}

/// Greedy weighted box fusion over weighted source groups.
///
/// Boxes are visited in descending `weight * score`; each joins the first
/// cluster whose running fused box has the same class and BEV IoU above the
/// threshold. The fused score divides the weighted score mass by the summed
/// weight of the cluster's distinct sources.
pub fn weighted_box_fusion(groups: &[(Vec<Box3D>, f64)], iou_threshold: f64) -> Vec<Box3D> {
    wbf_clusters(groups, iou_threshold).into_iter().map(|c| c.bbox).collect()
}

struct Cluster {
    bbox: Box3D,
    count: usize,
    /// Share of the member weight whose heading already points within pi/2 of the fused one.
    heading_agreement: f64,
}

fn wbf_clusters(groups: &[(Vec<Box3D>, f64)], iou_threshold: f64) -> Vec<Cluster> {
    let mut pool: Vec<Member> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, (boxes, w))| {
            boxes.iter().map(move |b| Member {
                bbox: *b,
                weight: *w,
                source: g,
            })
        })
        .collect();
    pool.sort_by(|a, b| (b.weight * b.bbox.score).total_cmp(&(a.weight * a.bbox.score)));
    let mut clusters: Vec<(Vec<Member>, Box3D)> = Vec::new();
    for m in pool {
        let hit = clusters
            .iter()
            .position(|(_, rep)| rep.class == m.bbox.class && iou_bev(rep, &m.bbox) > iou_threshold);
        match hit {
            Some(i) => {
                let (members, rep) = &mut clusters[i];
                members.push(m);
                *rep = fuse_members(members, rep.yaw);
            }
            None => {
                let rep = fuse_members(&[m], m.bbox.yaw);
                let rep = Box3D { score: m.bbox.score, ..rep };
                clusters.push((vec![m], rep));
            }
        }
    }
    clusters
        .into_iter()
        .map(|(members, rep)| {
            let (mut agree, mut total) = (0.0, 0.0);
            for m in &members {
                let w = m.weight * m.bbox.score;
                total += w;
                if wrap_angle(m.bbox.yaw - rep.yaw).abs() <= FRAC_PI_2 {
                    agree += w;
                }
            }
            Cluster {
                bbox: rep,
                count: members.len(),
                heading_agreement: if total > 0.0 { agree / total } else { 1.0 },
            }
        })
        .collect()
}

fn top_by_score(mut boxes: Vec<Box3D>, n: usize) -> Vec<Box3D> {
    boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
    boxes.truncate(n);
    boxes
}

/// Virtual-point boxes from the nearest offsets of both directions, fused
/// with the per-offset decay weights.
pub fn modar_only_detect(
    points: &[ModarPoint],
    weights: &FusionWeights,
    manifest: &NormalizationManifest,
) -> Result<Vec<Box3D>, DataError> {
    let mut groups: BTreeMap<(u32, Direction), Vec<Box3D>> = BTreeMap::new();
    for p in points {
        let m = p.offset as usize;
        if m == 0 || m > weights.offset_decay.len() {
            continue;
        }
        let b = decode_box(p, manifest).map_err(|e| match e {
            crate::modar::ModarError::Data(d) => d,
            other => DataError::InvariantViolation(other.to_string()),
        })?;
        groups.entry((p.offset, p.direction)).or_default().push(b);
    }
    let weighted: Vec<(Vec<Box3D>, f64)> = groups
        .into_iter()
        .map(|((m, _), boxes)| (boxes, weights.offset_decay[m as usize - 1]))
        .collect();
    Ok(top_by_score(weighted_box_fusion(&weighted, weights.wbf_iou), weights.max_boxes))
}

/// Weighted box fusion of LiDAR boxes and MoDAR boxes, top boxes by score.
pub fn late_fuse(lidar: &[Box3D], modar: &[Box3D], weights: &FusionWeights) -> Vec<Box3D> {
    let fused = weighted_box_fusion(&[(lidar.to_vec(), weights.lidar), (modar.to_vec(), weights.modar)], weights.wbf_iou);
    top_by_score(fused, weights.max_boxes)
}

/// Groups of point indices connected by single linkage within `radius`
/// (BEV), restricted to equal keys.
fn single_linkage<K: Ord + Copy>(xy: &[[f64; 2]], keys: &[K], radius: f64) -> Vec<Vec<usize>> {
    let cell = |v: f64| (v / radius).floor() as i64;
    let mut grid: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in xy.iter().enumerate() {
        grid.entry((cell(p[0]), cell(p[1]))).or_default().push(i);
    }
    let mut parent: Vec<usize> = (0..xy.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let r2 = radius * radius;
    for (i, p) in xy.iter().enumerate() {
        let (cx, cy) = (cell(p[0]), cell(p[1]));
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(list) = grid.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in list {
                    if j <= i || keys[i] != keys[j] {
                        continue;
                    }
                    let q = xy[j];
                    if (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) <= r2 {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..xy.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Consensus proposals (world frame) from the virtual points of a fused set.
/// Within a proximity group every box is a source weighted by its support,
/// so the greedy fusion starts from the densest agreement; each fused
/// proposal's score is scaled by its size relative to the group's largest.
/// A consensus box and the number of virtual boxes fused into it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: Box3D,
    pub votes: usize,
    /// Weighted share of the fused virtual boxes pointing the same way as `bbox`.
    pub heading_agreement: f64,
}

/// Distinct virtual-point time stamps, one per contributing window offset.
pub fn modar_window_count(fused: &[FusedPoint]) -> usize {
    let mut t: Vec<u64> = fused.iter().filter(|p| p.modality == MODAR).map(|p| p.time_s.to_bits()).collect();
    t.sort_unstable();
    t.dedup();
    t.len()
}

pub fn consensus_proposals(
    fused: &[FusedPoint],
    target_pose: &Pose,
    weights: &FusionWeights,
    manifest: &NormalizationManifest,
) -> Result<Vec<Proposal>, DataError> {
    let modar: Vec<&FusedPoint> = fused.iter().filter(|p| p.modality == MODAR).collect();
    if modar.is_empty() {
        return Ok(Vec::new());
    }
    let yaw = target_pose.yaw();
    let (c, s) = (yaw.cos(), yaw.sin());
    let mut boxes = Vec::with_capacity(modar.len());
    for p in &modar {
        let w = target_pose.apply([p.x, p.y, p.z]);
        let mut feature = p.feature;
        let (hc, hs) = (feature[channel::HEADING_COS], feature[channel::HEADING_SIN]);
        feature[channel::HEADING_COS] = c * hc - s * hs;
        feature[channel::HEADING_SIN] = s * hc + c * hs;
        let mp = ModarPoint {
            x: w[0],
            y: w[1],
            z: w[2],
            feature,
            track_id: 0,
            offset: 0,
            direction: Direction::Forward,
            hypothesis: 0,
        };
        let b = decode_box(&mp, manifest).map_err(|e| match e {
            crate::modar::ModarError::Data(d) => d,
            other => DataError::InvariantViolation(other.to_string()),
        })?;
        boxes.push(b);
    }
    let xy: Vec<[f64; 2]> = boxes.iter().map(|b| [b.cx, b.cy]).collect();
    let classes: Vec<_> = boxes.iter().map(|b| b.class).collect();
    let r2 = weights.support_radius * weights.support_radius;
    let mut out = Vec::new();
    for group in single_linkage(&xy, &classes, weights.proximity_radius) {
        // each virtual box is weighted by how many boxes of its group sit near it
        let groups: Vec<(Vec<Box3D>, f64)> = group
            .iter()
            .map(|&i| {
                let support = group
                    .iter()
                    .filter(|&&j| (xy[i][0] - xy[j][0]).powi(2) + (xy[i][1] - xy[j][1]).powi(2) <= r2)
                    .count();
                (vec![boxes[i]], support as f64)
            })
            .collect();
        let clusters = wbf_clusters(&groups, weights.wbf_iou);
        // clusters are scored by their share of the group's largest one; small minorities are dropped
        let largest = clusters.iter().map(|c| c.count).max().unwrap_or(1) as f64;
        out.extend(clusters.into_iter().filter_map(|c| {
            let share = c.count as f64 / largest;
            (share >= weights.min_cluster_share).then(|| Proposal {
                bbox: c.bbox.with_score(c.bbox.score * share),
                votes: c.count,
                heading_agreement: c.heading_agreement,
            })
        }));
    }
    Ok(out)
}

const GRID_CELL_M: f64 = 2.0;

/// BEV bucket grid for footprint point counts.
struct PointGrid {
    cells: HashMap<(i64, i64), Vec<[f64; 2]>>,
}

impl PointGrid {
    fn key(x: f64, y: f64) -> (i64, i64) {
        ((x / GRID_CELL_M).floor() as i64, (y / GRID_CELL_M).floor() as i64)
    }

    fn new(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<[f64; 2]>> = HashMap::new();
        for p in points {
            cells.entry(Self::key(p[0], p[1])).or_default().push(p);
        }
        PointGrid { cells }
    }

    /// Points inside the footprint, counting stops at `limit`.
    fn count_in(&self, b: &Box3D, limit: usize) -> usize {
        let r = 0.5 * b.length.hypot(b.width);
        let (lo, hi) = (Self::key(b.cx - r, b.cy - r), Self::key(b.cx + r, b.cy + r));
        let mut n = 0;
        for i in lo.0..=hi.0 {
            for j in lo.1..=hi.1 {
                for q in self.cells.get(&(i, j)).map(Vec::as_slice).unwrap_or(&[]) {
                    if b.contains_bev(q[0], q[1], 0.0) {
                        n += 1;
                        if n >= limit {
                            return n;
                        }
                    }
                }
            }
        }
        n
    }
}

/// Fusion-aware detector over an assembled point set, using `lidar_boxes`
/// (world frame) as the LiDAR-only detections.
pub fn fuse_with_lidar_boxes(
    lidar_boxes: Vec<Box3D>,
    fused: &[FusedPoint],
    target_pose: &Pose,
    cluster: &ClusterParams,
    weights: &FusionWeights,
    manifest: &NormalizationManifest,
) -> Result<Vec<Box3D>, DataError> {
    let found = consensus_proposals(fused, target_pose, weights, manifest)?;
    let min_votes = weights.min_unmatched_votes * modar_window_count(fused) as f64;
    let proposals: Vec<Box3D> = found.iter().map(|p| p.bbox).collect();
    let unconfirmed_ok: Vec<bool> = found.iter().map(|p| p.votes as f64 >= min_votes).collect();
    let knows_heading: Vec<bool> = found
        .iter()
        .map(|p| p.heading_agreement >= weights.min_heading_agreement)
        .collect();
    if proposals.is_empty() {
        return Ok(nms(&lidar_boxes, weights.nms_iou, true));
    }
    let w: Vec<Vec<f64>> = proposals
        .iter()
        .map(|p| {
            lidar_boxes
                .iter()
                .map(|l| if l.class == p.class { iou_bev(p, l) } else { 0.0 })
                .collect()
        })
        .collect();
    let pairs = if lidar_boxes.is_empty() {
        Vec::new()
    } else {
        maximize_gated(&w, weights.match_iou.max(f64::MIN_POSITIVE))
    };
    let mut lidar_used = vec![false; lidar_boxes.len()];
    let mut proposal_used = vec![false; proposals.len()];
    let mut refined: Vec<Option<Box3D>> = vec![None; lidar_boxes.len()];
    for &(pi, li) in &pairs {
        if w[pi][li] <= weights.match_iou {
            continue;
        }
        proposal_used[pi] = true;
        lidar_used[li] = true;
        let (l, p) = (lidar_boxes[li], proposals[pi]);
        // single-frame geometry cannot tell front from back; take the sign from the
        // forecasts when they agree on it
        let mut l_aligned = l;
        if knows_heading[pi] && wrap_angle(l.yaw - p.yaw).abs() > FRAC_PI_2 {
            l_aligned.yaw = wrap_angle(l.yaw + PI);
        }
        let members = [
            Member {
                bbox: l_aligned,
                weight: weights.lidar,
                source: 0,
            },
            Member {
                bbox: p,
                weight: weights.modar,
                source: 1,
            },
        ];
        let mut fused_box = fuse_members(&members, l_aligned.yaw);
        if knows_heading[pi] {
            // a near-square footprint carries no yaw; lean on the forecasts instead
            let wl = weights.lidar * elongation(&l);
            let (s, c) = (
                wl * l_aligned.yaw.sin() + weights.modar * p.yaw.sin(),
                wl * l_aligned.yaw.cos() + weights.modar * p.yaw.cos(),
            );
            if s != 0.0 || c != 0.0 {
                fused_box.yaw = s.atan2(c);
            }
        }
        refined[li] = Some(Box3D {
            score: l.score.max(p.score),
            ..fused_box
        });
    }
    // a leftover proposal overlapping a leftover LiDAR box of another class overrides that box:
    // the class agreed over many windows outweighs one frame's reading
    let cross: Vec<Vec<f64>> = proposals
        .iter()
        .enumerate()
        .map(|(pi, p)| {
            lidar_boxes
                .iter()
                .enumerate()
                .map(|(li, l)| {
                    if proposal_used[pi] || !unconfirmed_ok[pi] || lidar_used[li] || l.class == p.class {
                        0.0
                    } else {
                        iou_bev(p, l)
                    }
                })
                .collect()
        })
        .collect();
    if !lidar_boxes.is_empty() {
        for (pi, li) in maximize_gated(&cross, weights.match_iou.max(f64::MIN_POSITIVE)) {
            if cross[pi][li] <= weights.match_iou {
                continue;
            }
            proposal_used[pi] = true;
            lidar_used[li] = true;
            let p = proposals[pi];
            refined[li] = Some(p.with_score(p.score.max(lidar_boxes[li].score)));
        }
    }
    let grid = PointGrid::new(
        fused
            .iter()
            .filter(|p| p.modality == LIDAR && p.z > cluster.ground_z)
            .map(|p| [p.x, p.y]),
    );
    let mut out = Vec::with_capacity(lidar_boxes.len() + proposals.len());
    for (i, l) in lidar_boxes.iter().enumerate() {
        out.push(if lidar_used[i] { refined[i].expect("refined when used") } else { *l });
    }
    for ((p, used), ok) in proposals.iter().zip(proposal_used).zip(unconfirmed_ok) {
        if used || !ok {
            continue;
        }
        let local = transform_box(p, &Pose::identity(), target_pose).expect("planar poses");
        let inside = grid.count_in(&local, weights.min_lidar_points);
        if inside < weights.min_lidar_points {
            out.push(p.with_score(p.score * weights.unmatched_discount));
        }
    }
    Ok(nms(&out, weights.nms_iou, true))
}

/// Fusion-aware detector: clusters the LiDAR subset, then confirms, refines
/// and recovers boxes with the virtual-point consensus.
pub fn fusion_detector(
    fused: &[FusedPoint],
    target_pose: &Pose,
    cluster: &ClusterParams,
    weights: &FusionWeights,
    manifest: &NormalizationManifest,
) -> Result<Vec<Box3D>, DataError> {
    let lidar_xyz: Vec<[f64; 3]> = fused
        .iter()
        .filter(|p| p.modality == LIDAR)
        .map(|p| [p.x, p.y, p.z])
        .collect();
    let lidar_boxes = detect_cluster_xyz(&lidar_xyz, target_pose, cluster);
    fuse_with_lidar_boxes(lidar_boxes, fused, target_pose, cluster, weights, manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FusionStrategy {
    LidarOnly,
    ModarOnly,
    Early,
    Late,
    EarlyLate,
}

impl FusionStrategy {
    pub fn uses_modar(self) -> bool {
        self != FusionStrategy::LidarOnly
    }
}

/// Early fusion output combined with the MoDAR-only boxes by late fusion.
pub fn early_plus_late(early: &[Box3D], modar_only: &[Box3D], weights: &FusionWeights) -> Vec<Box3D> {
    late_fuse(early, modar_only, weights)
}

//! Deterministic synthetic scenes with a surface-sampling LiDAR model.
//!
//! Actors follow scripted motion at 10 Hz. Each frame the sensor samples the
//! box faces turned towards it plus the top face; nearer actors cast BEV
//! angular shadows that remove samples from the actors behind them.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Frame, GtBox, LidarPoint, SequenceDataset, SequenceMeta};
use crate::exec::{self, Execution};
use crate::geometry::{wrap_angle, Box3D, ObjectClass, Pose};
use crate::seed::rng_for;
use crate::FRAME_PERIOD_S;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scene config: {0}")]
    ConfigError(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
}

/// Intensity written for every simulated return.
pub const POINT_INTENSITY: f32 = 0.5;

pub fn default_size(class: ObjectClass) -> [f64; 3] {
    match class {
        ObjectClass::Vehicle => [4.5, 2.0, 1.6],
        ObjectClass::Pedestrian => [0.9, 0.9, 1.7],
        ObjectClass::Cyclist => [1.8, 0.8, 1.7],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Motion {
    Stationary,
    ConstantVelocity { speed_mps: f64 },
    ConstantTurn { speed_mps: f64, yaw_rate_rps: f64 },
    /// `(duration_s, speed_mps)` segments along the initial heading; the last
    /// speed is held once the segments run out.
    StopAndGo { segments: Vec<[f64; 2]> },
    /// `(t, x, y, yaw)` keyframes interpolated linearly; positions are absolute.
    Waypoints { points: Vec<[f64; 4]> },
}

/// Planar state of a scripted body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: f64,
}

impl Motion {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |s: String| Err(SimError::ConfigError(s));
        match self {
            Motion::Stationary => Ok(()),
            Motion::ConstantVelocity { speed_mps } if !speed_mps.is_finite() => bad("speed not finite".into()),
            Motion::ConstantTurn { speed_mps, yaw_rate_rps } if !(speed_mps.is_finite() && yaw_rate_rps.is_finite()) => {
                bad("turn parameters not finite".into())
            }
            Motion::StopAndGo { segments } => {
                if segments.is_empty() {
                    return bad("stop-and-go needs at least one segment".into());
                }
                if segments.iter().any(|[d, s]| !(*d > 0.0) || !s.is_finite()) {
                    return bad("stop-and-go durations must be > 0".into());
                }
                Ok(())
            }
            Motion::Waypoints { points } => {
                if points.is_empty() {
                    return bad("waypoint motion needs at least one keyframe".into());
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return bad("waypoint times must be strictly increasing".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// State `t` seconds after the script starts from `(x0, y0, yaw0)`.
    pub fn state_at(&self, x0: f64, y0: f64, yaw0: f64, t: f64) -> PlanarState {
        match self {
            Motion::Stationary => PlanarState {
                x: x0,
                y: y0,
                yaw: wrap_angle(yaw0),
                speed: 0.0,
            },
            Motion::ConstantVelocity { speed_mps } => PlanarState {
                x: x0 + speed_mps * t * yaw0.cos(),
                y: y0 + speed_mps * t * yaw0.sin(),
                yaw: wrap_angle(yaw0),
                speed: speed_mps.abs(),
            },
            Motion::ConstantTurn { speed_mps, yaw_rate_rps } => {
                let (s, w) = (*speed_mps, *yaw_rate_rps);
                let yaw = yaw0 + w * t;
                let (x, y) = if w.abs() < 1e-12 {
                    (x0 + s * t * yaw0.cos(), y0 + s * t * yaw0.sin())
                } else {
                    (
                        x0 + s / w * (yaw.sin() - yaw0.sin()),
                        y0 - s / w * (yaw.cos() - yaw0.cos()),
                    )
                };
                PlanarState {
                    x,
                    y,
                    yaw: wrap_angle(yaw),
                    speed: s.abs(),
                }
            }
            Motion::StopAndGo { segments } => {
                let mut dist = 0.0;
                let mut elapsed = 0.0;
                let mut speed = segments.last().map_or(0.0, |s| s[1]);
                let mut inside = false;
                for &[dur, v] in segments {
                    if t < elapsed + dur {
                        dist += v * (t - elapsed);
                        speed = v;
                        inside = true;
                        break;
                    }
                    dist += v * dur;
                    elapsed += dur;
                }
                if !inside {
                    dist += speed * (t - elapsed);
                }
                PlanarState {
                    x: x0 + dist * yaw0.cos(),
                    y: y0 + dist * yaw0.sin(),
                    yaw: wrap_angle(yaw0),
                    speed: speed.abs(),
                }
            }
            Motion::Waypoints { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                let state = |p: [f64; 4], speed: f64| PlanarState {
                    x: p[1],
                    y: p[2],
                    yaw: wrap_angle(p[3]),
                    speed,
                };
                if t <= first[0] {
                    return state(first, 0.0);
                }
                if t >= last[0] {
                    return state(last, 0.0);
                }
                let k = points.partition_point(|p| p[0] <= t) - 1;
                let (a, b) = (points[k], points[k + 1]);
                let u = (t - a[0]) / (b[0] - a[0]);
                let speed = (b[1] - a[1]).hypot(b[2] - a[2]) / (b[0] - a[0]);
                PlanarState {
                    x: a[1] + u * (b[1] - a[1]),
                    y: a[2] + u * (b[2] - a[2]),
                    yaw: wrap_angle(a[3] + u * wrap_angle(b[3] - a[3])),
                    speed,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorScript {
    pub class: ObjectClass,
    /// Length, width, height in meters.
    pub size: [f64; 3],
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub motion: Motion,
    #[serde(default)]
    pub spawn_frame: u64,
    /// First frame the actor is gone; `None` keeps it to the end.
    #[serde(default)]
    pub despawn_frame: Option<u64>,
}

impl ActorScript {
    pub fn new(class: ObjectClass, x: f64, y: f64, yaw: f64, motion: Motion) -> Self {
        ActorScript {
            class,
            size: default_size(class),
            x,
            y,
            yaw,
            motion,
            spawn_frame: 0,
            despawn_frame: None,
        }
    }

    pub fn alive(&self, frame: u64) -> bool {
        frame >= self.spawn_frame && self.despawn_frame.is_none_or(|d| frame < d)
    }

    pub fn state(&self, frame: u64) -> PlanarState {
        let t = frame.saturating_sub(self.spawn_frame) as f64 * FRAME_PERIOD_S;
        self.motion.state_at(self.x, self.y, self.yaw, t)
    }

    pub fn bbox(&self, frame: u64) -> Box3D {
        let s = self.state(frame);
        let [l, w, h] = self.size;
        Box3D::new([s.x, s.y, h / 2.0], [l, w, h], s.yaw, self.class, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoScript {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub motion: Motion,
}

impl EgoScript {
    pub fn stationary() -> Self {
        EgoScript {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
            motion: Motion::Stationary,
        }
    }

    pub fn pose(&self, frame: u64) -> Pose {
        let s = self.motion.state_at(self.x, self.y, self.yaw, frame as f64 * FRAME_PERIOD_S);
        Pose::from_xyz_yaw(s.x, s.y, 0.0, s.yaw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarModel {
    /// Expected samples on a vehicle-size box at 10 m.
    pub points_at_10m: f64,
    pub falloff_exp: f64,
    /// Gaussian point noise per coordinate; the offset norm is truncated at three sigma.
    pub noise_sigma: f64,
    pub max_range: f64,
    pub occlusion: bool,
}

impl Default for LidarModel {
    fn default() -> Self {
        LidarModel {
            points_at_10m: 2000.0,
            falloff_exp: 2.0,
            noise_sigma: 0.02,
            max_range: 100.0,
            occlusion: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_scene_name")]
    pub name: String,
    pub actors: Vec<ActorScript>,
    pub ego: EgoScript,
    #[serde(default)]
    pub lidar: LidarModel,
    pub frame_count: usize,
    pub seed: u64,
}

fn default_scene_name() -> String {
    "scene".to_string()
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |s: String| Err(SimError::ConfigError(s));
        if self.frame_count == 0 {
            return bad("frame_count must be >= 1".into());
        }
        let l = &self.lidar;
        if !(l.points_at_10m >= 0.0) || !(l.noise_sigma >= 0.0) || !(l.max_range > 0.0) || !l.falloff_exp.is_finite() {
            return bad("lidar model out of range".into());
        }
        self.ego.motion.validate()?;
        for (i, a) in self.actors.iter().enumerate() {
            if a.size.iter().any(|s| !(*s > 0.0)) {
                return bad(format!("actor {i}: size must be positive"));
            }
            if a.despawn_frame.is_some_and(|d| d <= a.spawn_frame) {
                return bad(format!("actor {i}: despawn must follow spawn"));
            }
            a.motion
                .validate()
                .map_err(|e| SimError::ConfigError(format!("actor {i}: {e}")))?;
        }
        Ok(())
    }
}

/// Angular footprint of a box as seen from the sensor.
#[derive(Debug, Clone, Copy)]
struct Shadow {
    distance: f64,
    bearing: f64,
    lo: f64,
    hi: f64,
}

impl Shadow {
    fn of(b: &Box3D, sx: f64, sy: f64) -> Option<Shadow> {
        if b.contains_bev(sx, sy, 0.0) {
            return None;
        }
        let bearing = (b.cy - sy).atan2(b.cx - sx);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for [x, y] in b.corners_bev() {
            let d = wrap_angle((y - sy).atan2(x - sx) - bearing);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        Some(Shadow {
            distance: (b.cx - sx).hypot(b.cy - sy),
            bearing,
            lo,
            hi,
        })
    }

    fn covers(&self, bearing: f64) -> bool {
        let d = wrap_angle(bearing - self.bearing);
        d >= self.lo && d <= self.hi
    }
}

/// Fraction of `target`'s angular interval covered by the union of `occluders`.
fn covered_fraction(target: &Shadow, occluders: &[Shadow]) -> f64 {
    let span = target.hi - target.lo;
    if span <= 0.0 {
        return 0.0;
    }
    let mut pieces: Vec<(f64, f64)> = occluders
        .iter()
        .filter_map(|o| {
            let shift = wrap_angle(o.bearing - target.bearing);
            let a = (shift + o.lo).max(target.lo);
            let b = (shift + o.hi).min(target.hi);
            (b > a).then_some((a, b))
        })
        .collect();
    pieces.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (a, b) in pieces {
        match cur {
            Some((ca, cb)) if a <= cb => cur = Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                cur = Some((a, b));
            }
            None => cur = Some((a, b)),
        }
    }
    if let Some((ca, cb)) = cur {
        total += cb - ca;
    }
    (total / span).clamp(0.0, 1.0)
}

/// Expected sample count for a box centered `range` meters from the sensor.
pub fn expected_points(lidar: &LidarModel, range: f64) -> usize {
    if range <= 0.0 || range > lidar.max_range {
        return 0;
    }
    (lidar.points_at_10m * (10.0 / range).powf(lidar.falloff_exp)).round() as usize
}

/// Uniform samples on the faces of `b` turned towards the sensor plus the top face.
fn sample_surface(b: &Box3D, sx: f64, sy: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let (c, s) = (b.yaw.cos(), b.yaw.sin());
    let (dx, dy) = (sx - b.cx, sy - b.cy);
    let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
    let (hl, hw, h) = (b.length / 2.0, b.width / 2.0, b.height);
    // (kind, sign, area): 0 = x face, 1 = y face, 2 = top
    let mut faces: Vec<(u8, f64, f64)> = Vec::with_capacity(3);
    if lx.abs() > hl {
        faces.push((0, lx.signum(), b.width * h));
    }
    if ly.abs() > hw {
        faces.push((1, ly.signum(), b.length * h));
    }
    faces.push((2, 1.0, b.length * b.width));
    let total: f64 = faces.iter().map(|f| f.2).sum();
    let z0 = b.z_min();
    (0..n)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut face = faces[faces.len() - 1];
            for f in &faces {
                if pick < f.2 {
                    face = *f;
                    break;
                }
                pick -= f.2;
            }
            let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
            let (px, py, pz) = match face.0 {
                0 => (face.1 * hl, (2.0 * u - 1.0) * hw, v * h),
                1 => ((2.0 * u - 1.0) * hl, face.1 * hw, v * h),
                _ => ((2.0 * u - 1.0) * hl, (2.0 * v - 1.0) * hw, h),
            };
            [b.cx + c * px - s * py, b.cy + s * px + c * py, z0 + pz]
        })
        .collect()
}

/// Gaussian offset whose norm is truncated at three sigma, so every
/// component stays within three sigma in any rotated frame.
fn truncated_noise(normal: &Normal<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    if sigma == 0.0 {
        return [0.0; 3];
    }
    loop {
        let v = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
        if (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() <= 3.0 * sigma {
            return v;
        }
    }
}

/// One simulated frame before quantization: world-frame points with the
/// index of the actor that produced each of them.
#[derive(Debug, Clone)]
pub struct RawFrame {
    pub ego_pose: Pose,
    pub gt: Vec<GtBox>,
    pub points_world: Vec<[f64; 3]>,
    pub point_actor: Vec<usize>,
}

pub fn simulate_frame(config: &SceneConfig, frame: u64) -> RawFrame {
    let ego_pose = config.ego.pose(frame);
    let t = ego_pose.translation();
    let (sx, sy) = (t[0], t[1]);
    let lidar = &config.lidar;
    let mut rng = rng_for(config.seed, "simkit", frame);
    let normal = Normal::new(0.0, lidar.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma validated");

    let alive: Vec<usize> = (0..config.actors.len()).filter(|&i| config.actors[i].alive(frame)).collect();
    let boxes: Vec<Box3D> = alive.iter().map(|&i| config.actors[i].bbox(frame)).collect();
    let shadows: Vec<Option<Shadow>> = boxes.iter().map(|b| Shadow::of(b, sx, sy)).collect();

    let mut gt = Vec::with_capacity(alive.len());
    let mut points_world = Vec::new();
    let mut point_actor = Vec::new();
    for (k, &i) in alive.iter().enumerate() {
        let b = &boxes[k];
        let occluders: Vec<Shadow> = if lidar.occlusion {
            match shadows[k] {
                Some(own) => shadows
                    .iter()
                    .enumerate()
                    .filter_map(|(j, s)| s.filter(|s| j != k && s.distance < own.distance))
                    .collect(),
                None => Vec::new(),
            }
        } else {
            Vec::new()
        };
        let occluded_fraction = match shadows[k] {
            Some(own) if lidar.occlusion => covered_fraction(&own, &occluders),
            _ => 0.0,
        };
        let range = (b.cx - sx).hypot(b.cy - sy);
        let n = if shadows[k].is_some() { expected_points(lidar, range) } else { 0 };
        let samples = sample_surface(b, sx, sy, n, &mut rng);
        let mut kept = 0u32;
        for p in samples {
            let bearing = (p[1] - sy).atan2(p[0] - sx);
            if occluders.iter().any(|o| o.covers(bearing)) {
                continue;
            }
            if (p[0] - sx).hypot(p[1] - sy) > lidar.max_range {
                continue;
            }
            let n = truncated_noise(&normal, lidar.noise_sigma, &mut rng);
            let q = [p[0] + n[0], p[1] + n[1], p[2] + n[2]];
            points_world.push(q);
            point_actor.push(i);
            kept += 1;
        }
        let speed = config.actors[i].state(frame).speed;
        gt.push(GtBox::from_box(i as u64 + 1, b, speed, kept, occluded_fraction));
    }
    RawFrame {
        ego_pose,
        gt,
        points_world,
        point_actor,
    }
}

/// Runs the scene. Frames are generated independently from per-frame
/// substreams, so the result does not depend on `exec`.
pub fn simulate(config: &SceneConfig, exec: Execution) -> Result<SequenceDataset, SimError> {
    config.validate()?;
    let frames = exec::map_range(exec, config.frame_count, |f| {
        let raw = simulate_frame(config, f as u64);
        let inv = raw.ego_pose.inverse();
        let points = raw
            .points_world
            .iter()
            .map(|p| {
                let q = inv.apply(*p);
                LidarPoint {
                    x: q[0] as f32,
                    y: q[1] as f32,
                    z: q[2] as f32,
                    intensity: POINT_INTENSITY,
                }
            })
            .collect();
        Frame {
            frame_index: f as u64,
            timestamp_us: f as i64 * 100_000,
            ego_pose: raw.ego_pose,
            gt_boxes: raw.gt,
            points,
        }
    });
    let class_default_sizes: BTreeMap<ObjectClass, [f64; 3]> =
        ObjectClass::ALL.iter().map(|&c| (c, default_size(c))).collect();
    Ok(SequenceDataset {
        meta: SequenceMeta {
            sequence_id: format!("{}-{}", config.name, config.seed),
            frame_count: config.frame_count,
            frame_period_s: FRAME_PERIOD_S,
            classes: ObjectClass::ALL.to_vec(),
            class_default_sizes,
        },
        frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scenario {
    OcclusionCorridor,
    LongRangeLine,
    StationaryLot,
    HighwayFast,
    MixedCity,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::OcclusionCorridor,
        Scenario::LongRangeLine,
        Scenario::StationaryLot,
        Scenario::HighwayFast,
        Scenario::MixedCity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::OcclusionCorridor => "OCCLUSION_CORRIDOR",
            Scenario::LongRangeLine => "LONG_RANGE_LINE",
            Scenario::StationaryLot => "STATIONARY_LOT",
            Scenario::HighwayFast => "HIGHWAY_FAST",
            Scenario::MixedCity => "MIXED_CITY",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, SimError> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| SimError::UnknownScenario(s.to_string()))
    }
}

/// Ranges of the LONG_RANGE_LINE rings, meters.
pub const LONG_RANGE_RINGS: [f64; 3] = [15.0, 35.0, 60.0];

/// Fully specified scene for a named scenario; actor jitter comes from `seed`.
pub fn scenario_library(name: Scenario, seed: u64) -> SceneConfig {
    let mut rng = rng_for(seed, "scenario", name as u64);
    let mut jitter = |a: f64| rng.random_range(-a..=a);
    let (actors, ego, frame_count) = match name {
        Scenario::OcclusionCorridor => {
            let mut truck = ActorScript::new(ObjectClass::Vehicle, 0.0, 8.0, 0.0, Motion::Stationary);
            truck.size = [10.0, 2.6, 3.2];
            let target = ActorScript::new(
                ObjectClass::Vehicle,
                -40.0 + jitter(2.0),
                18.0 + jitter(0.5),
                jitter(0.02),
                Motion::ConstantVelocity {
                    speed_mps: 5.0 + jitter(0.5),
                },
            );
            let walker = ActorScript::new(
                ObjectClass::Pedestrian,
                -10.0 + jitter(1.0),
                -6.0,
                0.0,
                Motion::ConstantVelocity {
                    speed_mps: 1.2 + jitter(0.2),
                },
            );
            let cyclist = ActorScript::new(
                ObjectClass::Cyclist,
                20.0 + jitter(2.0),
                -12.0,
                PI,
                Motion::ConstantVelocity {
                    speed_mps: 4.0 + jitter(0.5),
                },
            );
            let parked = ActorScript::new(ObjectClass::Vehicle, 15.0 + jitter(1.0), -5.0, jitter(0.1), Motion::Stationary);
            (vec![truck, target, walker, cyclist, parked], EgoScript::stationary(), 160)
        }
        Scenario::LongRangeLine => {
            let actors = (0..9)
                .map(|i| {
                    let bearing = (-80.0 + 20.0 * i as f64 + jitter(2.0)).to_radians();
                    let r = LONG_RANGE_RINGS[i % 3];
                    ActorScript::new(
                        ObjectClass::Vehicle,
                        r * bearing.cos(),
                        r * bearing.sin(),
                        jitter(PI),
                        Motion::Stationary,
                    )
                })
                .collect();
            (actors, EgoScript::stationary(), 100)
        }
        Scenario::StationaryLot => {
            let mut actors = Vec::new();
            for (row, yaw) in [(-14.0, FRAC_PI_2), (-8.0, 0.0), (8.0, 0.0), (14.0, FRAC_PI_2)] {
                for k in 0..12 {
                    let x = -20.0 + 7.5 * k as f64 + jitter(0.8);
                    if rng_keep(&mut jitter) {
                        let flip = if jitter(1.0) > 0.0 { PI } else { 0.0 };
                        actors.push(ActorScript::new(
                            ObjectClass::Vehicle,
                            x,
                            row + jitter(0.3),
                            wrap_angle(yaw + flip + jitter(0.05)),
                            Motion::Stationary,
                        ));
                    }
                }
            }
            let ego = EgoScript {
                x: -10.0,
                y: 0.0,
                yaw: 0.0,
                motion: Motion::ConstantVelocity { speed_mps: 3.0 },
            };
            (actors, ego, 100)
        }
        Scenario::HighwayFast => {
            let mut actors = Vec::new();
            for (lane, lo, hi) in [(-7.4, 12.0, 20.0), (-3.7, 10.0, 15.0), (3.7, 18.0, 25.0), (7.4, 25.0, 30.0)] {
                for k in 0..2 {
                    let speed = lo + (hi - lo) * (0.5 + 0.5 * jitter(1.0));
                    actors.push(ActorScript::new(
                        ObjectClass::Vehicle,
                        -30.0 + 40.0 * k as f64 + jitter(5.0),
                        lane + jitter(0.2),
                        0.0,
                        Motion::ConstantVelocity { speed_mps: speed },
                    ));
                }
            }
            let ego = EgoScript {
                x: 0.0,
                y: 0.0,
                yaw: 0.0,
                motion: Motion::ConstantVelocity { speed_mps: 15.0 },
            };
            (actors, ego, 120)
        }
        Scenario::MixedCity => {
            let mut actors = Vec::new();
            let heading = |j: f64| if j > 0.0 { 0.0 } else { PI };
            // vehicles on lanes
            for k in 0..8 {
                let lane = [-7.0, -3.5, 3.5, 7.0][k % 4];
                let x = -10.0 + 14.0 * k as f64 + jitter(3.0);
                let yaw = if lane < 0.0 { 0.0 } else { PI };
                let motion = match k {
                    0 | 5 => Motion::Stationary,
                    1 | 6 => Motion::ConstantVelocity {
                        speed_mps: 6.0 + jitter(3.0),
                    },
                    2 | 7 => Motion::ConstantTurn {
                        speed_mps: 6.0 + jitter(1.5),
                        yaw_rate_rps: 0.06 + jitter(0.03),
                    },
                    3 => Motion::StopAndGo {
                        segments: vec![[4.0, 5.0], [3.0, 0.0], [5.0, 7.0], [4.0, 0.0]],
                    },
                    _ => {
                        let x0 = x;
                        Motion::Waypoints {
                            points: vec![
                                [0.0, x0, lane, 0.0],
                                [6.0, x0 + 30.0, lane, 0.0],
                                [10.0, x0 + 42.0, lane + 6.0, FRAC_PI_2 / 2.0],
                                [20.0, x0 + 60.0, lane + 14.0, 0.3],
                            ],
                        }
                    }
                };
                let yaw = if matches!(motion, Motion::Waypoints { .. }) { 0.0 } else { yaw };
                actors.push(ActorScript::new(ObjectClass::Vehicle, x, lane + jitter(0.2), yaw, motion));
            }
            // pedestrians on the sidewalks
            for k in 0..7 {
                let side = if k % 2 == 0 { -12.0 } else { 12.0 };
                let x = -5.0 + 15.0 * k as f64 + jitter(3.0);
                let yaw = heading(jitter(1.0));
                let motion = match k % 3 {
                    0 => Motion::Stationary,
                    1 => Motion::ConstantVelocity {
                        speed_mps: 1.4 + jitter(0.3),
                    },
                    _ => Motion::Waypoints {
                        points: vec![
                            [0.0, x, side, 0.0],
                            [8.0, x + 10.0, side, 0.0],
                            [14.0, x + 10.0, side - side.signum() * 6.0, -side.signum() * FRAC_PI_2],
                        ],
                    },
                };
                actors.push(ActorScript::new(ObjectClass::Pedestrian, x, side + jitter(0.5), yaw, motion));
            }
            // cyclists on bike lanes
            for k in 0..5 {
                let lane = if k % 2 == 0 { -9.5 } else { 9.5 };
                let x = 5.0 + 18.0 * k as f64 + jitter(3.0);
                let yaw = if lane < 0.0 { 0.0 } else { PI };
                let motion = match k % 3 {
                    0 => Motion::ConstantVelocity {
                        speed_mps: 4.5 + jitter(1.5),
                    },
                    1 => Motion::StopAndGo {
                        segments: vec![[5.0, 4.0], [2.0, 0.0], [6.0, 5.0]],
                    },
                    _ => Motion::ConstantTurn {
                        speed_mps: 4.0 + jitter(1.0),
                        yaw_rate_rps: 0.05 + jitter(0.02),
                    },
                };
                actors.push(ActorScript::new(ObjectClass::Cyclist, x, lane + jitter(0.3), yaw, motion));
            }
            let ego = EgoScript {
                x: 0.0,
                y: 0.0,
                yaw: 0.0,
                motion: Motion::ConstantVelocity { speed_mps: 4.0 },
            };
            (actors, ego, 200)
        }
    };
    SceneConfig {
        name: name.name().to_string(),
        actors,
        ego,
        lidar: LidarModel::default(),
        frame_count,
        seed,
    }
}

/// Parking spots are occupied four times out of five.
fn rng_keep(jitter: &mut impl FnMut(f64) -> f64) -> bool {
    jitter(1.0) > -0.6
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;
    use proptest::prelude::*;

    fn one_vehicle(x: f64, y: f64, lidar: LidarModel) -> SceneConfig {
        SceneConfig {
            name: "unit".into(),
            actors: vec![ActorScript::new(ObjectClass::Vehicle, x, y, 0.3, Motion::Stationary)],
            ego: EgoScript::stationary(),
            lidar,
            frame_count: 5,
            seed: 11,
        }
    }

    fn noise_free() -> LidarModel {
        LidarModel {
            points_at_10m: 200.0,
            noise_sigma: 0.0,
            ..LidarModel::default()
        }
    }

    #[test]
    fn ten_meter_vehicle_gets_exact_count_on_surface() {
        let ds = simulate(&one_vehicle(10.0, 0.0, noise_free()), Execution::Sequential).unwrap();
        for f in &ds.frames {
            assert_eq!(f.points.len(), 200);
            assert_eq!(f.gt_boxes[0].num_points_inside, 200);
            let b = f.gt_boxes[0].bbox();
            for p in &f.points {
                assert!(b.contains(p.xyz(), 1e-6), "{p:?}");
            }
        }
    }

    #[test]
    fn twenty_meters_quarters_the_count() {
        let ds = simulate(&one_vehicle(0.0, 20.0, noise_free()), Execution::Sequential).unwrap();
        assert!(ds.frames.iter().all(|f| f.points.len() == 50));
    }

    #[test]
    fn beyond_max_range_is_empty() {
        let lidar = LidarModel {
            max_range: 30.0,
            ..noise_free()
        };
        let ds = simulate(&one_vehicle(40.0, 0.0, lidar), Execution::Sequential).unwrap();
        assert!(ds.frames.iter().all(|f| f.points.is_empty()));
    }

    #[test]
    fn wide_occluder_casts_full_shadow() {
        let mut cfg = one_vehicle(25.0, 0.0, noise_free());
        let mut wall = ActorScript::new(ObjectClass::Vehicle, 10.0, 0.0, FRAC_PI_2, Motion::Stationary);
        wall.size = [12.0, 1.0, 3.0];
        cfg.actors.push(wall);
        let ds = simulate(&cfg, Execution::Sequential).unwrap();
        for f in &ds.frames {
            let hidden = &f.gt_boxes[0];
            assert_eq!(hidden.occluded_fraction, 1.0);
            assert_eq!(hidden.num_points_inside, 0);
            assert_eq!(f.gt_boxes[1].occluded_fraction, 0.0);
            assert!(f.gt_boxes[1].num_points_inside > 0);
        }
    }

    #[test]
    fn partial_shadow_removes_proportional_share() {
        let mut cfg = one_vehicle(20.0, 0.0, noise_free());
        cfg.actors[0].yaw = FRAC_PI_2;
        // covers the right-hand part of the target's angular interval
        let mut blocker = ActorScript::new(ObjectClass::Vehicle, 10.0, -1.5, FRAC_PI_2, Motion::Stationary);
        blocker.size = [2.0, 0.5, 2.0];
        cfg.actors.push(blocker);
        let raw = simulate_frame(&cfg, 0);
        let occ = raw.gt[0].occluded_fraction;
        assert!(occ > 0.1 && occ < 0.9, "{occ}");
        let n = raw.gt[0].num_points_inside as f64;
        let expected = expected_points(&cfg.lidar, 20.0) as f64;
        assert!(n < expected && n > 0.0);
    }

    #[test]
    fn motion_models() {
        let cv = Motion::ConstantVelocity { speed_mps: 2.0 };
        let s = cv.state_at(1.0, 1.0, FRAC_PI_2, 3.0);
        assert!((s.x - 1.0).abs() < 1e-12 && (s.y - 7.0).abs() < 1e-12 && s.speed == 2.0);
        let turn = Motion::ConstantTurn {
            speed_mps: 1.0,
            yaw_rate_rps: 0.5,
        };
        let s = turn.state_at(0.0, 0.0, 0.0, 2.0 * PI);
        // half circle of radius 2
        assert!(s.x.abs() < 1e-9 && (s.y - 4.0).abs() < 1e-9);
        let sg = Motion::StopAndGo {
            segments: vec![[1.0, 2.0], [1.0, 0.0], [1.0, 3.0]],
        };
        assert!((sg.state_at(0.0, 0.0, 0.0, 1.5).x - 2.0).abs() < 1e-12);
        assert_eq!(sg.state_at(0.0, 0.0, 0.0, 1.5).speed, 0.0);
        assert!((sg.state_at(0.0, 0.0, 0.0, 4.0).x - 8.0).abs() < 1e-12);
        let wp = Motion::Waypoints {
            points: vec![[0.0, 0.0, 0.0, 0.0], [2.0, 4.0, 0.0, 0.0]],
        };
        let s = wp.state_at(9.0, 9.0, 0.0, 1.0);
        assert_eq!((s.x, s.y, s.speed), (2.0, 0.0, 2.0));
        assert_eq!(wp.state_at(0.0, 0.0, 0.0, 5.0).speed, 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = one_vehicle(10.0, 0.0, noise_free());
        cfg.frame_count = 0;
        assert!(simulate(&cfg, Execution::Sequential).is_err());
        let mut cfg = one_vehicle(10.0, 0.0, noise_free());
        cfg.actors[0].size[1] = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = one_vehicle(10.0, 0.0, noise_free());
        cfg.actors[0].spawn_frame = 3;
        cfg.actors[0].despawn_frame = Some(3);
        assert!(cfg.validate().is_err());
        let mut cfg = one_vehicle(10.0, 0.0, noise_free());
        cfg.actors[0].motion = Motion::Waypoints {
            points: vec![[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]],
        };
        assert!(cfg.validate().is_err());
        assert!(matches!("NOPE".parse::<Scenario>(), Err(SimError::UnknownScenario(_))));
    }

    #[test]
    fn spawn_window_limits_gt() {
        let mut cfg = one_vehicle(10.0, 0.0, noise_free());
        cfg.actors[0].spawn_frame = 1;
        cfg.actors[0].despawn_frame = Some(3);
        let ds = simulate(&cfg, Execution::Sequential).unwrap();
        let counts: Vec<usize> = ds.frames.iter().map(|f| f.gt_boxes.len()).collect();
        assert_eq!(counts, vec![0, 1, 1, 0, 0]);
    }

    #[test]
    fn deterministic_and_execution_independent() {
        let cfg = scenario_library(Scenario::MixedCity, 5);
        let cfg = SceneConfig { frame_count: 20, ..cfg };
        let a = simulate(&cfg, Execution::Sequential).unwrap();
        let b = simulate(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        crate::dataio::write_sequence(&a, dir_a.path()).unwrap();
        crate::dataio::write_sequence(&simulate(&cfg, Execution::Sequential).unwrap(), dir_b.path()).unwrap();
        for name in ["meta.json", "frames.jsonl", "points_7.bin"] {
            assert_eq!(
                std::fs::read(dir_a.path().join(name)).unwrap(),
                std::fs::read(dir_b.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn scenario_properties() {
        let lot = simulate(&scenario_library(Scenario::StationaryLot, 1), Execution::Parallel).unwrap();
        assert!(lot.frames.iter().flat_map(|f| &f.gt_boxes).all(|g| g.speed_mps == 0.0));

        let hw = scenario_library(Scenario::HighwayFast, 1);
        let ds = simulate(&hw, Execution::Parallel).unwrap();
        let fast: std::collections::BTreeSet<u64> = ds
            .gt_tracks()
            .into_iter()
            .filter(|(_, obs)| obs.len() == ds.len() && obs.iter().all(|(_, g)| g.speed_mps >= 10.0))
            .map(|(id, _)| id)
            .collect();
        assert!(!fast.is_empty());

        let lr = scenario_library(Scenario::LongRangeLine, 1);
        let ranges: std::collections::BTreeSet<i64> =
            lr.actors.iter().map(|a| a.x.hypot(a.y).round() as i64).collect();
        assert_eq!(ranges.into_iter().collect::<Vec<_>>(), vec![15, 35, 60]);

        let city = scenario_library(Scenario::MixedCity, 1);
        for c in ObjectClass::ALL {
            assert!(city.actors.iter().any(|a| a.class == c));
        }
        let kinds: std::collections::BTreeSet<&str> = city
            .actors
            .iter()
            .map(|a| match a.motion {
                Motion::Stationary => "S",
                Motion::ConstantVelocity { .. } => "CV",
                Motion::ConstantTurn { .. } => "CT",
                Motion::StopAndGo { .. } => "SG",
                Motion::Waypoints { .. } => "WP",
            })
            .collect();
        assert_eq!(kinds.len(), 5);
        assert_eq!(city.actors.len(), 20);
        assert_eq!(city.frame_count, 200);
    }

    #[test]
    fn corridor_has_long_full_occlusion() {
        for seed in [7, 0, 19] {
            let ds = simulate(&scenario_library(Scenario::OcclusionCorridor, seed), Execution::Parallel).unwrap();
            let trace: Vec<bool> = ds
                .frames
                .iter()
                .map(|f| f.gt_boxes.iter().any(|g| g.track_id == 2 && g.occluded_fraction == 1.0 && g.num_points_inside == 0))
                .collect();
            let mut best = 0;
            let mut run = 0;
            for hidden in trace {
                run = if hidden { run + 1 } else { 0 };
                best = best.max(run);
            }
            assert!(best >= 10, "seed {seed}: longest full occlusion {best}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn points_stay_near_their_source(seed in 0u64..1000, sigma in 0.0f64..0.1) {
            let mut cfg = scenario_library(Scenario::MixedCity, seed);
            cfg.lidar.noise_sigma = sigma;
            let raw = simulate_frame(&cfg, seed % 200);
            for (p, &a) in raw.points_world.iter().zip(&raw.point_actor) {
                let b = cfg.actors[a].bbox(seed % 200);
                prop_assert!(b.contains(*p, 3.0 * sigma + 1e-6));
            }
        }

        #[test]
        fn count_non_increasing_in_range(r1 in 2.0f64..90.0, dr in 0.0f64..20.0) {
            let lidar = noise_free();
            prop_assert!(expected_points(&lidar, r1 + dr) <= expected_points(&lidar, r1));
        }
    }
}

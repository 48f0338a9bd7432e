//! Analytic trajectory predictors and displacement metrics.
//!
//! Every predictor consumes up to [`INPUT_FRAMES`] tracked boxes and emits
//! trajectories of exactly [`HORIZON`] waypoints at offsets `1..=HORIZON`
//! frames after the anchor (the last input frame). Waypoint elevation and box
//! size are not forecast; consumers hold them at the anchor values.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Box3D, ObjectClass};

/// Forecast horizon in frames.
pub const HORIZON: usize = 80;
/// Tracked frames fed to a predictor: 10 past plus the current one.
pub const INPUT_FRAMES: usize = 11;
/// Hypotheses emitted by the multi-hypothesis bank.
pub const NUM_HYPOTHESES: usize = 6;
/// Softmax temperature of the backcast-error confidences, meters.
pub const CONFIDENCE_TEMPERATURE_M: f64 = 0.5;
/// Below this speed a track keeps its observed yaw instead of its motion direction.
pub const MOVING_SPEED_MPS: f64 = 0.5;
/// Lower bound on the per-axis center noise used for the speed standard error, meters.
pub const CENTER_NOISE_FLOOR_M: f64 = 0.05;
/// A fitted speed counts as motion only this many standard errors above zero.
pub const SPEED_SIGNIFICANCE: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("invalid tracklet: {0}")]
    InvalidInput(String),
    #[error("ground truth has no valid waypoints")]
    EmptyGroundTruth,
    #[error("ground truth must have {HORIZON} entries, got {0}")]
    GroundTruthLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackletEntry {
    pub frame_index: i64,
    pub bbox: Box3D,
    pub score: f64,
}

/// Ordered tracked boxes ending at the anchor frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletInput {
    pub class: ObjectClass,
    entries: Vec<TrackletEntry>,
    pub dt: f64,
}

impl TrackletInput {
    pub fn new(class: ObjectClass, entries: Vec<TrackletEntry>, dt: f64) -> Result<Self, ForecastError> {
        if entries.is_empty() || entries.len() > INPUT_FRAMES {
            return Err(ForecastError::InvalidInput(format!(
                "{} entries, expected 1..={INPUT_FRAMES}",
                entries.len()
            )));
        }
        if entries.windows(2).any(|w| w[1].frame_index <= w[0].frame_index) {
            return Err(ForecastError::InvalidInput("frame indices not strictly increasing".into()));
        }
        if !(dt > 0.0) {
            return Err(ForecastError::InvalidInput(format!("dt {dt}")));
        }
        Ok(TrackletInput { class, entries, dt })
    }

    pub fn entries(&self) -> &[TrackletEntry] {
        &self.entries
    }

    pub fn anchor(&self) -> &TrackletEntry {
        self.entries.last().expect("non-empty by construction")
    }

    pub fn earliest(&self) -> &TrackletEntry {
        &self.entries[0]
    }

    /// Seconds relative to the anchor frame (all <= 0).
    fn times(&self) -> Vec<f64> {
        let a = self.anchor().frame_index;
        self.entries
            .iter()
            .map(|e| (e.frame_index - a) as f64 * self.dt)
            .collect()
    }

    /// Time-reversed copy: frame order flipped, frame indices negated and
    /// headings turned around so that motion and heading stay consistent.
    pub fn reversed(&self) -> TrackletInput {
        let entries = self
            .entries
            .iter()
            .rev()
            .map(|e| {
                let mut bbox = e.bbox;
                bbox.yaw = wrap_angle(bbox.yaw + PI);
                TrackletEntry {
                    frame_index: -e.frame_index,
                    bbox,
                    score: e.score,
                }
            })
            .collect();
        TrackletInput {
            class: self.class,
            entries,
            dt: self.dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub offset: u32,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub std_x: f64,
    pub std_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub confidence: f64,
    pub waypoints: Vec<Waypoint>,
}

impl Trajectory {
    /// Waypoint at `offset` frames (1-based).
    pub fn waypoint(&self, offset: u32) -> Option<&Waypoint> {
        if offset == 0 {
            return None;
        }
        self.waypoints.get(offset as usize - 1).filter(|w| w.offset == offset)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Predictor {
    Stationary,
    ConstantVelocity,
    MultiHypothesis,
    /// Runs the inner predictor on the time-reversed input.
    Reverse(Box<Predictor>),
}

impl Predictor {
    pub fn predict(&self, input: &TrackletInput) -> Vec<Trajectory> {
        match self {
            Predictor::Stationary => forecast_stationary(input),
            Predictor::ConstantVelocity => forecast_cv(input),
            Predictor::MultiHypothesis => forecast_multihyp(input),
            Predictor::Reverse(inner) => forecast_reverse(input, inner),
        }
    }

    pub fn reversed(&self) -> Predictor {
        Predictor::Reverse(Box::new(self.clone()))
    }
}

/// Least-squares line `v = a + b t`; returns (b, a, residuals).
fn fit_line(ts: &[f64], vs: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let vm = vs.iter().sum::<f64>() / n;
    let stt: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    let slope = if stt > 0.0 {
        ts.iter().zip(vs).map(|(t, v)| (t - tm) * (v - vm)).sum::<f64>() / stt
    } else {
        0.0
    };
    let intercept = vm - slope * tm;
    let residuals = ts.iter().zip(vs).map(|(t, v)| v - (intercept + slope * t)).collect();
    (slope, intercept, residuals)
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut acc, mut n) = (0.0, 0usize);
    for v in values {
        acc += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (acc / n as f64).sqrt()
    }
}

/// Velocity fit over the given entries (times relative to the anchor).
struct VelocityFit {
    vx: f64,
    vy: f64,
    residual_rms: f64,
    /// Standard error of the fitted speed.
    speed_se: f64,
    mean_time: f64,
}

impl VelocityFit {
    fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    /// Speed both above the moving threshold and distinguishable from noise.
    fn moving(&self) -> bool {
        let s = self.speed();
        s > MOVING_SPEED_MPS && s > SPEED_SIGNIFICANCE * self.speed_se
    }
}

fn fit_velocity(times: &[f64], entries: &[TrackletEntry]) -> VelocityFit {
    if entries.len() < 2 {
        return VelocityFit {
            vx: 0.0,
            vy: 0.0,
            residual_rms: 0.0,
            speed_se: f64::INFINITY,
            mean_time: times.first().copied().unwrap_or(0.0),
        };
    }
    let xs: Vec<f64> = entries.iter().map(|e| e.bbox.cx).collect();
    let ys: Vec<f64> = entries.iter().map(|e| e.bbox.cy).collect();
    let (vx, _, rx) = fit_line(times, &xs);
    let (vy, _, ry) = fit_line(times, &ys);
    let residual_rms = (rms(rx.iter().chain(ry.iter()).copied())).max(0.0);
    let n = times.len() as f64;
    let mean_time = times.iter().sum::<f64>() / n;
    let stt: f64 = times.iter().map(|t| (t - mean_time).powi(2)).sum();
    let sigma = if n > 2.0 {
        (residual_rms * (n / (n - 2.0)).sqrt()).max(CENTER_NOISE_FLOOR_M)
    } else {
        CENTER_NOISE_FLOOR_M
    };
    VelocityFit {
        vx,
        vy,
        residual_rms,
        speed_se: sigma / stt.sqrt(),
        mean_time,
    }
}

/// A motion hypothesis evaluated at `tau` seconds relative to the anchor.
#[derive(Debug, Clone, Copy)]
enum Motion {
    Stationary,
    /// Heading follows the velocity only when `moving`.
    Linear { vx: f64, vy: f64, moving: bool },
    Turn { speed: f64, heading: f64, rate: f64, moving: bool },
}

impl Motion {
    fn at(&self, anchor: &Box3D, tau: f64) -> (f64, f64, f64) {
        match *self {
            Motion::Stationary => (anchor.cx, anchor.cy, anchor.yaw),
            Motion::Linear { vx, vy, moving } => (
                anchor.cx + tau * vx,
                anchor.cy + tau * vy,
                wrap_angle(if moving { vy.atan2(vx) } else { anchor.yaw }),
            ),
            Motion::Turn { speed, heading, rate, moving } => {
                let psi = heading + rate * tau;
                let (x, y) = if rate.abs() < 1e-9 {
                    (
                        anchor.cx + speed * tau * heading.cos(),
                        anchor.cy + speed * tau * heading.sin(),
                    )
                } else {
                    let r = speed / rate;
                    (
                        anchor.cx + r * (psi.sin() - heading.sin()),
                        anchor.cy - r * (psi.cos() - heading.cos()),
                    )
                };
                let yaw = if moving { psi } else { anchor.yaw + rate * tau };
                (x, y, wrap_angle(yaw))
            }
        }
    }

    fn rollout(&self, input: &TrackletInput, std_at: impl Fn(u32) -> f64) -> Vec<Waypoint> {
        let anchor = input.anchor().bbox;
        (1..=HORIZON as u32)
            .map(|m| {
                let (x, y, yaw) = self.at(&anchor, m as f64 * input.dt);
                let s = std_at(m);
                Waypoint {
                    offset: m,
                    x,
                    y,
                    yaw,
                    std_x: s,
                    std_y: s,
                }
            })
            .collect()
    }

    /// RMS distance between the hypothesis replayed over the observed window
    /// and the observed centers.
    fn backcast_rmse(&self, input: &TrackletInput, times: &[f64]) -> f64 {
        let anchor = input.anchor().bbox;
        rms(input.entries().iter().zip(times).map(|(e, &t)| {
            let (x, y, _) = self.at(&anchor, t);
            (x - e.bbox.cx).hypot(y - e.bbox.cy)
        }))
    }
}

/// Every waypoint at the anchor pose, confidence 1, zero spread.
pub fn forecast_stationary(input: &TrackletInput) -> Vec<Trajectory> {
    vec![Trajectory {
        confidence: 1.0,
        waypoints: Motion::Stationary.rollout(input, |_| 0.0),
    }]
}

/// Constant velocity from a least-squares fit of centers over the window.
pub fn forecast_cv(input: &TrackletInput) -> Vec<Trajectory> {
    let times = input.times();
    let fit = fit_velocity(&times, input.entries());
    let motion = Motion::Linear {
        vx: fit.vx,
        vy: fit.vy,
        moving: fit.moving(),
    };
    vec![Trajectory {
        confidence: 1.0,
        waypoints: motion.rollout(input, |_| fit.residual_rms),
    }]
}

/// Yaw rate by least squares over the observed headings, unwrapping each
/// step into (-pi/2, pi/2] so front/back flips do not register as turns.
fn fit_yaw_rate(times: &[f64], entries: &[TrackletEntry]) -> f64 {
    if entries.len() < 2 {
        return 0.0;
    }
    let mut unwrapped = Vec::with_capacity(entries.len());
    let mut acc = entries[0].bbox.yaw;
    unwrapped.push(acc);
    for w in entries.windows(2) {
        let mut d = wrap_angle(w[1].bbox.yaw - w[0].bbox.yaw);
        if d > FRAC_PI_2 {
            d -= PI;
        } else if d <= -FRAC_PI_2 {
            d += PI;
        }
        acc += d;
        unwrapped.push(acc);
    }
    fit_line(times, &unwrapped).0
}

/// Six analytic hypotheses scored by how well each replays the observed
/// window: stationary, constant velocity, constant velocity on the last three
/// frames, constant turn, and half / one-and-a-half speed variants.
pub fn forecast_multihyp(input: &TrackletInput) -> Vec<Trajectory> {
    if input.entries().len() < 2 {
        let base = Motion::Stationary.rollout(input, |_| 0.0);
        return (0..NUM_HYPOTHESES)
            .map(|_| Trajectory {
                confidence: 1.0 / NUM_HYPOTHESES as f64,
                waypoints: base.clone(),
            })
            .collect();
    }
    let times = input.times();
    let entries = input.entries();
    let anchor = input.anchor().bbox;
    let full = fit_velocity(&times, entries);
    let k = entries.len().saturating_sub(3);
    let last3 = fit_velocity(&times[k..], &entries[k..]);
    let rate = fit_yaw_rate(&times, entries);
    let speed = full.speed();
    let moving = full.moving();
    // the chord velocity approximates the heading at the window's mean time
    let heading = if moving {
        full.vy.atan2(full.vx) - rate * full.mean_time
    } else {
        anchor.yaw
    };
    let hypotheses = [
        Motion::Stationary,
        Motion::Linear { vx: full.vx, vy: full.vy, moving },
        Motion::Linear { vx: last3.vx, vy: last3.vy, moving },
        Motion::Turn { speed, heading, rate, moving },
        Motion::Linear { vx: 0.5 * full.vx, vy: 0.5 * full.vy, moving },
        Motion::Linear { vx: 1.5 * full.vx, vy: 1.5 * full.vy, moving },
    ];
    let mut errors: Vec<f64> = hypotheses.iter().map(|h| h.backcast_rmse(input, &times)).collect();
    if !moving {
        // a fitted velocity within noise explains the window no better than standing still
        errors[0] = errors.iter().copied().fold(f64::INFINITY, f64::min);
    }
    let logits: Vec<f64> = errors.iter().map(|e| -e / CONFIDENCE_TEMPERATURE_M).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    hypotheses
        .iter()
        .zip(errors.iter().zip(&exps))
        .map(|(h, (&err, &e))| Trajectory {
            confidence: e / total,
            waypoints: h.rollout(input, |m| err * (1.0 + m as f64 / 40.0)),
        })
        .collect()
}

/// Runs `inner` on the time-reversed tracklet. Waypoint `m` of the result
/// lies `m` frames before the earliest input frame.
pub fn forecast_reverse(input: &TrackletInput, inner: &Predictor) -> Vec<Trajectory> {
    let mut out = inner.predict(&input.reversed());
    for traj in &mut out {
        for w in &mut traj.waypoints {
            w.yaw = wrap_angle(w.yaw + PI);
        }
    }
    out
}

/// Index of the most confident trajectory (first on ties).
pub fn most_confident(trajectories: &[Trajectory]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in trajectories.iter().enumerate() {
        if best.is_none_or(|b| t.confidence > trajectories[b].confidence) {
            best = Some(i);
        }
    }
    best
}

/// Trajectory indices sorted by descending confidence, stable on ties.
pub fn ranked(trajectories: &[Trajectory]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..trajectories.len()).collect();
    idx.sort_by(|&a, &b| trajectories[b].confidence.total_cmp(&trajectories[a].confidence));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub ade: f64,
    pub fde: f64,
    pub min_ade: f64,
    pub min_fde: f64,
}

/// ADE/FDE of the most confident trajectory and minADE/minFDE over all of
/// them. Ground-truth entries that are `None` are skipped pairwise.
pub fn forecast_metrics(
    predicted: &[Trajectory],
    gt_future: &[Option<[f64; 2]>],
) -> Result<ForecastMetrics, ForecastError> {
    if gt_future.len() != HORIZON {
        return Err(ForecastError::GroundTruthLength(gt_future.len()));
    }
    let last = gt_future
        .iter()
        .rposition(Option::is_some)
        .ok_or(ForecastError::EmptyGroundTruth)?;
    let best = most_confident(predicted).ok_or(ForecastError::InvalidInput("no trajectories".into()))?;
    let errors = |t: &Trajectory| -> (f64, f64) {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (w, g) in t.waypoints.iter().zip(gt_future) {
            if let Some([gx, gy]) = g {
                sum += (w.x - gx).hypot(w.y - gy);
                n += 1;
            }
        }
        let [gx, gy] = gt_future[last].expect("last valid index");
        let w = &t.waypoints[last];
        (sum / n as f64, (w.x - gx).hypot(w.y - gy))
    };
    let (ade, fde) = errors(&predicted[best]);
    let (mut min_ade, mut min_fde) = (f64::INFINITY, f64::INFINITY);
    for t in predicted {
        let (a, f) = errors(t);
        min_ade = min_ade.min(a);
        min_fde = min_fde.min(f);
    }
    Ok(ForecastMetrics {
        ade,
        fde,
        min_ade,
        min_fde,
    })
}

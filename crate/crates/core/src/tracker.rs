//! Kalman-filter multi-object tracker.
//!
//! State is `[x, y, z, yaw, l, w, h, vx, vy, vyaw]` with a constant-velocity
//! (and constant yaw rate) motion model; z and the box size are random walks.
//! Detections are associated by Hungarian assignment on BEV IoU.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::maximize_gated;
use crate::geometry::{iou_bev, wrap_angle, Box3D, ObjectClass};

pub const STATE_DIM: usize = 10;
pub const MEAS_DIM: usize = 7;
/// Detection scores averaged by [`tracking_score`].
pub const SCORE_WINDOW: usize = 11;

type StateVec = SVector<f64, STATE_DIM>;
type StateMat = SMatrix<f64, STATE_DIM, STATE_DIM>;
type MeasVec = SVector<f64, MEAS_DIM>;
type MeasMat = SMatrix<f64, MEAS_DIM, MEAS_DIM>;
type Gain = SMatrix<f64, STATE_DIM, MEAS_DIM>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("detection class {det:?} does not match track class {track:?}")]
    ClassMismatch { track: ObjectClass, det: ObjectClass },
    #[error("track {0} has no history at or before frame {1}")]
    NoHistory(u64, i64),
    #[error("invalid tracker parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// Per-frame process noise variances, state order.
    pub process_noise: [f64; STATE_DIM],
    /// Measurement noise variances for `[x, y, z, yaw, l, w, h]`.
    pub measurement_noise: [f64; MEAS_DIM],
    /// Initial variance of the unobserved velocity components.
    pub initial_velocity_var: f64,
    pub initial_yaw_rate_var: f64,
    /// Minimum BEV IoU for an association.
    pub gate_iou: f64,
    pub confirm_hits: u32,
    /// A track survives this many consecutive misses and is dropped on the next.
    pub max_misses: u32,
    pub dt: f64,
    /// Speed above which the state heading is aligned with the velocity.
    pub heading_from_motion_mps: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            process_noise: [0.0025, 0.0025, 0.0025, 0.0025, 1e-4, 1e-4, 1e-4, 0.25, 0.25, 0.01],
            measurement_noise: [0.01, 0.01, 0.01, 0.0025, 0.01, 0.01, 0.01],
            initial_velocity_var: 25.0,
            initial_yaw_rate_var: 1.0,
            gate_iou: 0.1,
            confirm_hits: 2,
            max_misses: 3,
            dt: 0.1,
            heading_from_motion_mps: 1.0,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let bad = |what: &str| Err(TrackerError::InvalidParams(what.to_string()));
        if self.process_noise.iter().any(|v| !(*v >= 0.0)) {
            return bad("process noise must be >= 0");
        }
        if self.measurement_noise.iter().any(|v| !(*v >= 0.0)) {
            return bad("measurement noise must be >= 0");
        }
        if !(self.initial_velocity_var >= 0.0 && self.initial_yaw_rate_var >= 0.0) {
            return bad("initial variances must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.gate_iou) {
            return bad("gate_iou must be in [0, 1]");
        }
        if self.confirm_hits == 0 {
            return bad("confirm_hits must be >= 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub frame_index: i64,
    pub bbox: Box3D,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanTrack {
    pub track_id: u64,
    pub class: ObjectClass,
    pub mean: [f64; STATE_DIM],
    pub covariance: [[f64; STATE_DIM]; STATE_DIM],
    pub hits: u32,
    pub consecutive_misses: u32,
    pub confirmed: bool,
    pub history: Vec<HistoryEntry>,
}

fn measurement(b: &Box3D) -> MeasVec {
    MeasVec::from_column_slice(&[b.cx, b.cy, b.cz, b.yaw, b.length, b.width, b.height])
}

impl KalmanTrack {
    /// Starts a track at a detection; velocities start at zero.
    pub fn new(track_id: u64, frame_index: i64, det: &Box3D, params: &TrackerParams) -> Self {
        let z = measurement(det);
        let mut mean = [0.0; STATE_DIM];
        mean[..MEAS_DIM].copy_from_slice(z.as_slice());
        mean[3] = wrap_angle(mean[3]);
        let mut cov = [[0.0; STATE_DIM]; STATE_DIM];
        for (i, r) in params.measurement_noise.iter().enumerate() {
            cov[i][i] = *r;
        }
        cov[7][7] = params.initial_velocity_var;
        cov[8][8] = params.initial_velocity_var;
        cov[9][9] = params.initial_yaw_rate_var;
        let mut track = KalmanTrack {
            track_id,
            class: det.class,
            mean,
            covariance: cov,
            hits: 1,
            consecutive_misses: 0,
            confirmed: params.confirm_hits <= 1,
            history: Vec::new(),
        };
        track.history.push(HistoryEntry {
            frame_index,
            bbox: track.state_box(det.score),
            score: det.score,
        });
        track
    }

    fn state(&self) -> (StateVec, StateMat) {
        let x = StateVec::from_column_slice(&self.mean);
        let p = StateMat::from_fn(|r, c| self.covariance[r][c]);
        (x, p)
    }

    fn set_state(&mut self, x: &StateVec, p: &StateMat) {
        for i in 0..STATE_DIM {
            self.mean[i] = x[i];
        }
        self.mean[3] = wrap_angle(self.mean[3]);
        let sym = (p + p.transpose()) * 0.5;
        for r in 0..STATE_DIM {
            for c in 0..STATE_DIM {
                self.covariance[r][c] = sym[(r, c)];
            }
        }
    }

    /// Box at the current state mean.
    pub fn state_box(&self, score: f64) -> Box3D {
        let m = &self.mean;
        Box3D::new([m[0], m[1], m[2]], [m[4], m[5], m[6]], m[3], self.class, score)
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.mean[7], self.mean[8]]
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.history.last().map(|h| h.frame_index)
    }

    pub fn first_frame(&self) -> Option<i64> {
        self.history.first().map(|h| h.frame_index)
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        let (_, p) = self.state();
        p.symmetric_eigenvalues().min()
    }

    pub fn covariance_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..STATE_DIM {
            for c in 0..STATE_DIM {
                worst = worst.max((self.covariance[r][c] - self.covariance[c][r]).abs());
            }
        }
        worst
    }
}

/// Propagates the track `dt` seconds. Process noise is specified per
/// `params.dt` and scales linearly with elapsed time.
pub fn kf_predict(track: &KalmanTrack, dt: f64, params: &TrackerParams) -> KalmanTrack {
    let (x, p) = track.state();
    let mut f = StateMat::identity();
    f[(0, 7)] = dt;
    f[(1, 8)] = dt;
    f[(3, 9)] = dt;
    let scale = dt / params.dt;
    let q = StateMat::from_diagonal(&StateVec::from_column_slice(&params.process_noise)) * scale;
    let x_new = f * x;
    let p_new = f * p * f.transpose() + q;
    let mut out = track.clone();
    out.set_state(&x_new, &p_new);
    out
}

/// Linear Kalman update on `[x, y, z, yaw, l, w, h]`. A measured heading more
/// than a quarter turn from the prediction is flipped by pi first, since the
/// single-frame detector cannot observe which end is the front.
pub fn kf_update(track: &KalmanTrack, det: &Box3D, params: &TrackerParams) -> Result<KalmanTrack, TrackerError> {
    if det.class != track.class {
        return Err(TrackerError::ClassMismatch {
            track: track.class,
            det: det.class,
        });
    }
    let (x, p) = track.state();
    let h = SMatrix::<f64, MEAS_DIM, STATE_DIM>::from_fn(|r, c| if r == c { 1.0 } else { 0.0 });
    let r = MeasMat::from_diagonal(&MeasVec::from_column_slice(&params.measurement_noise));
    let z = measurement(det);
    let mut innovation = z - h * x;
    let mut dyaw = wrap_angle(innovation[3]);
    if dyaw.abs() > FRAC_PI_2 {
        dyaw = wrap_angle(dyaw + PI);
    }
    innovation[3] = dyaw;
    let s = h * p * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .or_else(|| s.pseudo_inverse(1e-12).ok())
        .unwrap_or_else(MeasMat::zeros);
    let k: Gain = p * h.transpose() * s_inv;
    let x_new = x + k * innovation;
    // Joseph form keeps the posterior symmetric PSD
    let ikh = StateMat::identity() - k * h;
    let p_new = ikh * p * ikh.transpose() + k * r * k.transpose();
    let mut out = track.clone();
    out.set_state(&x_new, &p_new);
    Ok(out)
}

/// Mean detection score over the most recent (up to 11) history entries at or
/// before `frame_index`.
pub fn tracking_score(track: &KalmanTrack, frame_index: i64) -> Result<f64, TrackerError> {
    let end = track.history.partition_point(|h| h.frame_index <= frame_index);
    if end == 0 {
        return Err(TrackerError::NoHistory(track.track_id, frame_index));
    }
    let start = end.saturating_sub(SCORE_WINDOW);
    let slice = &track.history[start..end];
    Ok((slice.iter().map(|h| h.score).sum::<f64>() / slice.len() as f64).clamp(0.0, 1.0))
}

/// Fitted speed must exceed this many standard deviations of its own estimate.
const SPEED_SIGNIFICANCE: f64 = 3.0;

/// Points the state heading along the velocity when the track moves fast
/// enough, and certainly enough, for the direction to be trustworthy.
fn align_heading(track: &mut KalmanTrack, params: &TrackerParams) {
    let [vx, vy] = track.velocity();
    let speed = vx.hypot(vy);
    if speed <= params.heading_from_motion_mps {
        return;
    }
    let p = &track.covariance;
    let along = (vx * vx * p[7][7] + 2.0 * vx * vy * p[7][8] + vy * vy * p[8][8]) / (speed * speed);
    if speed > SPEED_SIGNIFICANCE * along.max(0.0).sqrt() {
        let motion = vy.atan2(vx);
        if wrap_angle(track.mean[3] - motion).abs() > FRAC_PI_2 {
            track.mean[3] = wrap_angle(track.mean[3] + PI);
        }
    }
}

/// Tracks detections over frames given in increasing frame order.
///
/// Returns every track that was confirmed at some point, ordered by id.
/// Track ids start at 1 and are never reused.
pub fn track_sequence(frames: &[(i64, Vec<Box3D>)], params: &TrackerParams) -> Vec<KalmanTrack> {
    let mut live: Vec<KalmanTrack> = Vec::new();
    let mut done: Vec<KalmanTrack> = Vec::new();
    let mut next_id = 1u64;
    let mut prev_frame: Option<i64> = None;
    for (frame_index, dets) in frames {
        let frame_index = *frame_index;
        if let Some(prev) = prev_frame {
            debug_assert!(frame_index > prev, "frames must be increasing");
            let dt = (frame_index - prev) as f64 * params.dt;
            for t in live.iter_mut() {
                *t = kf_predict(t, dt, params);
            }
        }
        prev_frame = Some(frame_index);

        let weights: Vec<Vec<f64>> = live
            .iter()
            .map(|t| {
                let pred = t.state_box(0.0);
                dets.iter()
                    .map(|d| if d.class == t.class { iou_bev(&pred, d) } else { 0.0 })
                    .collect()
            })
            .collect();
        let pairs = if live.is_empty() || dets.is_empty() {
            Vec::new()
        } else {
            maximize_gated(&weights, params.gate_iou.max(f64::MIN_POSITIVE))
        };
        let mut track_matched = vec![false; live.len()];
        let mut det_matched = vec![false; dets.len()];
        for &(ti, di) in &pairs {
            track_matched[ti] = true;
            det_matched[di] = true;
            let det = &dets[di];
            let mut t = kf_update(&live[ti], det, params).expect("class checked by gating");
            t.hits += 1;
            t.consecutive_misses = 0;
            if t.hits >= params.confirm_hits {
                t.confirmed = true;
            }
            align_heading(&mut t, params);
            let b = t.state_box(det.score);
            t.history.push(HistoryEntry {
                frame_index,
                bbox: b,
                score: det.score,
            });
            live[ti] = t;
        }
        let mut survivors = Vec::with_capacity(live.len());
        for (t, matched) in live.drain(..).zip(track_matched) {
            let mut t = t;
            if !matched {
                t.consecutive_misses += 1;
            }
            if t.consecutive_misses > params.max_misses {
                if t.confirmed {
                    done.push(t);
                }
            } else {
                survivors.push(t);
            }
        }
        live = survivors;
        for (det, matched) in dets.iter().zip(det_matched) {
            if !matched {
                live.push(KalmanTrack::new(next_id, frame_index, det, params));
                next_id += 1;
            }
        }
    }
    done.extend(live.into_iter().filter(|t| t.confirmed));
    done.sort_by_key(|t| t.track_id);
    done
}

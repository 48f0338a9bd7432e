//! Oriented-box and point geometry for planar scenes.
//!
//! Boxes carry a yaw about +z only. Every angle that leaves this module is
//! wrapped into (-pi, pi].

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("relative rotation tilts the z axis by {tilt:.3e}; only yaw rotations are supported")]
    NonPlanarRotation { tilt: f64 },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [
        ObjectClass::Vehicle,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
    ];

    /// Position in the one-hot class encoding.
    pub fn index(self) -> usize {
        match self {
            ObjectClass::Vehicle => 0,
            ObjectClass::Pedestrian => 1,
            ObjectClass::Cyclist => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "VEHICLE",
            ObjectClass::Pedestrian => "PEDESTRIAN",
            ObjectClass::Cyclist => "CYCLIST",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Smallest absolute angular difference, in [0, pi].
pub fn heading_delta(yaw_a: f64, yaw_b: f64) -> f64 {
    wrap_angle(yaw_a - yaw_b).abs()
}

/// Oriented 3D box. `cz` is the geometric center, so the box spans
/// `cz - height/2 ..= cz + height/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
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

impl Box3D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        center: [f64; 3],
        size: [f64; 3],
        yaw: f64,
        class: ObjectClass,
        score: f64,
    ) -> Self {
        Box3D {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            length: size[0],
            width: size[1],
            height: size[2],
            yaw: wrap_angle(yaw),
            class,
            score,
        }
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn size(&self) -> [f64; 3] {
        [self.length, self.width, self.height]
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn bev_area(&self) -> f64 {
        self.length * self.width
    }

    pub fn z_min(&self) -> f64 {
        self.cz - 0.5 * self.height
    }

    pub fn z_max(&self) -> f64 {
        self.cz + 0.5 * self.height
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [
            self.cx,
            self.cy,
            self.cz,
            self.length,
            self.width,
            self.height,
            self.yaw,
            self.score,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite field".into()));
        }
        if self.length <= 0.0 || self.width <= 0.0 || self.height <= 0.0 {
            return Err(GeometryError::InvalidBox(format!(
                "non-positive size {}x{}x{}",
                self.length, self.width, self.height
            )));
        }
        if !(self.yaw > -PI && self.yaw <= PI) {
            return Err(GeometryError::InvalidBox(format!("yaw {} not wrapped", self.yaw)));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(GeometryError::InvalidBox(format!("score {} outside [0,1]", self.score)));
        }
        Ok(())
    }

    /// Footprint corners in counter-clockwise order.
    pub fn corners_bev(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.cx + c * u - s * v, self.cy + s * u + c * v])
    }

    /// Whether a BEV point lies inside the footprint grown by `margin` on every side.
    pub fn contains_bev(&self, x: f64, y: f64, margin: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u.abs() <= 0.5 * self.length + margin && v.abs() <= 0.5 * self.width + margin
    }

    /// Whether a 3D point lies inside the box grown by `margin` on every side.
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        self.contains_bev(p[0], p[1], margin)
            && p[2] >= self.z_min() - margin
            && p[2] <= self.z_max() + margin
    }

    /// Footprint equality allowing for the yaw + pi symmetry of a rectangle.
    pub fn same_footprint(&self, other: &Box3D, tol: f64) -> bool {
        let d = heading_delta(self.yaw, other.yaw);
        let yaw_ok = d <= tol || (PI - d) <= tol;
        yaw_ok
            && (self.cx - other.cx).abs() <= tol
            && (self.cy - other.cy).abs() <= tol
            && (self.length - other.length).abs() <= tol
            && (self.width - other.width).abs() <= tol
    }

    fn footprint_key(&self) -> [f64; 5] {
        [self.cx, self.cy, self.length, self.width, self.yaw]
    }
}

/// World-from-ego rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    matrix: Matrix4<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            matrix: Matrix4::identity(),
        }
    }

    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        #[rustfmt::skip]
        let matrix = Matrix4::new(
            c, -s, 0.0, x,
            s, c, 0.0, y,
            0.0, 0.0, 1.0, z,
            0.0, 0.0, 0.0, 1.0,
        );
        Pose { matrix }
    }

    /// Builds a pose from 16 row-major reals, checking orthonormality.
    pub fn from_row_major(values: &[f64]) -> Result<Self, GeometryError> {
        if values.len() != 16 {
            return Err(GeometryError::InvalidPose(format!(
                "expected 16 values, got {}",
                values.len()
            )));
        }
        let pose = Pose {
            matrix: Matrix4::from_row_slice(values),
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.matrix[(0, 3)], self.matrix[(1, 3)], self.matrix[(2, 3)])
    }

    /// Rotation about +z, assuming a planar pose.
    pub fn yaw(&self) -> f64 {
        self.matrix[(1, 0)].atan2(self.matrix[(0, 0)])
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite entry".into()));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).amax();
        if err > 1e-9 {
            return Err(GeometryError::InvalidPose(format!("rotation not orthonormal ({err:.3e})")));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidPose(format!("rotation determinant {det}")));
        }
        let bottom = [
            self.matrix[(3, 0)],
            self.matrix[(3, 1)],
            self.matrix[(3, 2)],
            self.matrix[(3, 3)],
        ];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::InvalidPose("last row must be 0 0 0 1".into()));
        }
        Ok(())
    }

    /// Rigid inverse (R^T, -R^T t).
    pub fn inverse(&self) -> Pose {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m[(0, 3)] = t[0];
        m[(1, 3)] = t[1];
        m[(2, 3)] = t[2];
        Pose { matrix: m }
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            matrix: self.matrix * other.matrix,
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[(0, 0)] * p[0] + m[(0, 1)] * p[1] + m[(0, 2)] * p[2] + m[(0, 3)],
            m[(1, 0)] * p[0] + m[(1, 1)] * p[1] + m[(1, 2)] * p[2] + m[(1, 3)],
            m[(2, 0)] * p[0] + m[(2, 1)] * p[1] + m[(2, 2)] * p[2] + m[(2, 3)],
        ]
    }

    /// Transform taking points expressed in `src` coordinates to `dst` coordinates.
    pub fn relative(src: &Pose, dst: &Pose) -> Pose {
        dst.inverse().compose(src)
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        Pose::from_row_major(&values).map_err(serde::de::Error::custom)
    }
}

/// Applies `dst^-1 * src` to every point. Identical poses copy the input unchanged.
pub fn transform_points(points: &[[f64; 3]], src: &Pose, dst: &Pose) -> Vec<[f64; 3]> {
    if src == dst {
        return points.to_vec();
    }
    let rel = Pose::relative(src, dst);
    points.iter().map(|&p| rel.apply(p)).collect()
}

/// Re-expresses a box given in `src` coordinates in `dst` coordinates.
pub fn transform_box(b: &Box3D, src: &Pose, dst: &Pose) -> Result<Box3D, GeometryError> {
    if src == dst {
        return Ok(*b);
    }
    let rel = Pose::relative(src, dst);
    let m = rel.matrix();
    let tilt = m[(0, 2)].abs().max(m[(1, 2)].abs()).max(m[(2, 0)].abs()).max(m[(2, 1)].abs());
    if tilt > 1e-6 {
        return Err(GeometryError::NonPlanarRotation { tilt });
    }
    let c = rel.apply(b.center());
    let mut out = *b;
    out.cx = c[0];
    out.cy = c[1];
    out.cz = c[2];
    out.yaw = wrap_angle(b.yaw + rel.yaw());
    Ok(out)
}

/// Shoelace area of a simple polygon (positive when counter-clockwise).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

/// Sutherland-Hodgman clipping of `subject` against a convex CCW `clip` polygon.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        // positive = left of a->b = inside for a CCW clip polygon
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let dc = side(cur);
            let dp = side(prev);
            if dc >= 0.0 {
                if dp < 0.0 {
                    output.push(intersect(prev, cur, dp, dc));
                }
                output.push(cur);
            } else if dp >= 0.0 {
                output.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn is_axis_aligned(yaw: f64) -> Option<bool> {
    // Some(false): length along x; Some(true): length along y.
    if yaw == 0.0 || yaw == PI {
        Some(false)
    } else if yaw == FRAC_PI_2 || yaw == -FRAC_PI_2 {
        Some(true)
    } else {
        None
    }
}

fn axis_extent(b: &Box3D, swapped: bool) -> ([f64; 2], [f64; 2]) {
    let (ex, ey) = if swapped {
        (b.width, b.length)
    } else {
        (b.length, b.width)
    };
    (
        [b.cx - 0.5 * ex, b.cx + 0.5 * ex],
        [b.cy - 0.5 * ey, b.cy + 0.5 * ey],
    )
}

/// Footprint intersection area of two boxes.
pub fn intersection_area_bev(a: &Box3D, b: &Box3D) -> f64 {
    // canonical argument order keeps the result bitwise symmetric
    let (a, b) = if a.footprint_key() <= b.footprint_key() {
        (a, b)
    } else {
        (b, a)
    };
    if let (Some(sa), Some(sb)) = (is_axis_aligned(a.yaw), is_axis_aligned(b.yaw)) {
        let (ax, ay) = axis_extent(a, sa);
        let (bx, by) = axis_extent(b, sb);
        let ix = (ax[1].min(bx[1]) - ax[0].max(bx[0])).max(0.0);
        let iy = (ay[1].min(by[1]) - ay[0].max(by[0])).max(0.0);
        return ix * iy;
    }
    // cheap rejection on circumscribed circles
    let ra = 0.5 * a.length.hypot(a.width);
    let rb = 0.5 * b.length.hypot(b.width);
    if (a.cx - b.cx).hypot(a.cy - b.cy) > ra + rb {
        return 0.0;
    }
    let poly = clip_convex(&a.corners_bev(), &b.corners_bev());
    polygon_area(&poly).max(0.0)
}

/// Exact IoU of the two yaw-rotated footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    if a.footprint_key() == b.footprint_key() {
        return 1.0;
    }
    let inter = intersection_area_bev(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// 3D IoU: footprint intersection times vertical overlap over the volume union.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a.footprint_key() == b.footprint_key() && a.cz == b.cz && a.height == b.height {
        return 1.0;
    }
    let dz = (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = intersection_area_bev(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, no collinear points.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle of a planar point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect2 {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub width: f64,
    /// Direction of the long side, in (-pi/2, pi/2].
    pub yaw: f64,
}

/// Rotating-calipers search over hull edge directions. The long side is
/// reported as `length`; the yaw is folded into (-pi/2, pi/2].
pub fn min_area_rect(points: &[[f64; 2]]) -> Option<Rect2> {
    if points.is_empty() {
        return None;
    }
    let hull = convex_hull(points);
    let mut candidates: Vec<f64> = Vec::new();
    if hull.len() >= 2 {
        for i in 0..hull.len() {
            let a = hull[i];
            let b = hull[(i + 1) % hull.len()];
            let dx = b[0] - a[0];
            let dy = b[1] - a[1];
            if dx != 0.0 || dy != 0.0 {
                candidates.push(dy.atan2(dx));
            }
        }
    }
    if candidates.is_empty() {
        candidates.push(0.0);
    }
    let mut best: Option<(f64, Rect2)> = None;
    for &theta in &candidates {
        let (s, c) = theta.sin_cos();
        let (mut umin, mut umax, mut vmin, mut vmax) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let u = c * p[0] + s * p[1];
            let v = -s * p[0] + c * p[1];
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let eu = umax - umin;
        let ev = vmax - vmin;
        let area = eu * ev;
        let uc = 0.5 * (umin + umax);
        let vc = 0.5 * (vmin + vmax);
        let cx = c * uc - s * vc;
        let cy = s * uc + c * vc;
        let (length, width, yaw) = if eu >= ev {
            (eu, ev, theta)
        } else {
            (ev, eu, theta + FRAC_PI_2)
        };
        let rect = Rect2 {
            cx,
            cy,
            length,
            width,
            yaw: fold_half_turn(yaw),
        };
        // 1e-12 slack keeps the choice stable against rounding between equal-area edges
        if best.is_none_or(|(a, _)| area < a - 1e-12) {
            best = Some((area, rect));
        }
    }
    best.map(|(_, r)| r)
}

/// Folds an axis direction into (-pi/2, pi/2].
pub fn fold_half_turn(yaw: f64) -> f64 {
    let mut y = wrap_angle(yaw);
    if y > FRAC_PI_2 {
        y -= PI;
    } else if y <= -FRAC_PI_2 {
        y += PI;
    }
    y
}

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AgentPose, Coord, EnvConfig, Scene, SceneObject, HEADINGS};

/// Normalized bounding box and confidence: `[x_min, y_min, x_max, y_max, conf]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Detection(pub [f64; 5]);

impl Detection {
    pub const ZERO: Detection = Detection([0.0; 5]);

    pub fn new(values: [f64; 5]) -> Self {
        Self(values)
    }

    pub fn confidence(&self) -> f64 {
        self.0[4]
    }

    pub fn is_zero(&self) -> bool {
        self.confidence() == 0.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_valid(&self) -> bool {
        let d = &self.0;
        let in_unit = d.iter().all(|v| (0.0..=1.0).contains(v));
        let zero_ok = d[4] != 0.0 || d[..4].iter().all(|v| *v == 0.0);
        in_unit && zero_ok && d[0] <= d[2] && d[1] <= d[3]
    }
}

/// Bresenham line between two cells; true when no blocked cell lies
/// strictly between them, ignoring cells covered by `ignore_object`.
pub fn line_of_sight(scene: &Scene, from: Coord, to: Coord, ignore_object: Option<usize>) -> bool {
    let (mut x, mut y) = (from.x, from.y);
    let dx = (to.x - from.x).abs();
    let dy = -(to.y - from.y).abs();
    let sx = if from.x < to.x { 1 } else { -1 };
    let sy = if from.y < to.y { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x == to.x && y == to.y {
            return true;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
        let c = Coord::new(x, y);
        if c == to {
            return true;
        }
        if scene.is_blocked(c) {
            let is_target = ignore_object.is_some() && scene.occupant(c) == ignore_object;
            if !is_target {
                return false;
            }
        }
    }
}

/// Angle in radians between the heading of `yaw` and the vector `from -> to`.
fn bearing_offset(yaw: u8, from: Coord, to: Coord) -> f64 {
    let (hx, hy) = HEADINGS[yaw as usize];
    let (vx, vy) = ((to.x - from.x) as f64, (to.y - from.y) as f64);
    let dot = hx as f64 * vx + hy as f64 * vy;
    let cross = hx as f64 * vy - hy as f64 * vx;
    cross.atan2(dot).abs()
}

/// Nearest footprint cell of `obj` to `pos` and its distance. Ties resolve
/// to the first cell in row-major order.
fn nearest_cell(obj: &SceneObject, pos: Coord) -> (Coord, f64) {
    obj.cells()
        .map(|c| (c, pos.dist(c)))
        .fold(None, |best: Option<(Coord, f64)>, cur| match best {
            Some(b) if b.1 <= cur.1 => Some(b),
            _ => Some(cur),
        })
        .expect("objects have at least one cell")
}

/// Visibility test for a single instance: within range, inside the ±45°
/// view cone around the heading, and unobstructed. Returns the distance.
pub(crate) fn visible_distance(
    scene: &Scene,
    pose: &AgentPose,
    object_index: usize,
    cfg: &EnvConfig,
) -> Option<f64> {
    let obj = &scene.objects()[object_index];
    let (cell, d) = nearest_cell(obj, pose.pos);
    if d == 0.0 || d > cfg.max_view_range {
        return None;
    }
    if bearing_offset(pose.yaw, pose.pos, cell) > std::f64::consts::FRAC_PI_4 + 1e-9 {
        return None;
    }
    line_of_sight(scene, pose.pos, cell, Some(object_index)).then_some(d)
}

/// Projects the object footprint onto a 90° field-of-view image plane.
fn project_bbox(obj: &SceneObject, pose: &AgentPose) -> [f64; 4] {
    let (hx, hy) = HEADINGS[pose.yaw as usize];
    let norm = ((hx * hx + hy * hy) as f64).sqrt();
    let (fx, fy) = (hx as f64 / norm, hy as f64 / norm);
    // Right-hand direction in screen coordinates (y grows downward).
    let (rx, ry) = (-fy, fx);
    let e = obj.extent as f64;
    let corners = [
        (obj.x as f64 - 0.5, obj.y as f64 - 0.5),
        (obj.x as f64 - 0.5 + e, obj.y as f64 - 0.5),
        (obj.x as f64 - 0.5, obj.y as f64 - 0.5 + e),
        (obj.x as f64 - 0.5 + e, obj.y as f64 - 0.5 + e),
    ];
    let (ax, ay) = (pose.pos.x as f64, pose.pos.y as f64);
    let mut u_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    let mut nearest_depth = f64::INFINITY;
    for (cx, cy) in corners {
        let (vx, vy) = (cx - ax, cy - ay);
        let depth = (vx * fx + vy * fy).max(0.1);
        let lateral = vx * rx + vy * ry;
        let u = 0.5 + 0.5 * lateral / depth;
        u_min = u_min.min(u);
        u_max = u_max.max(u);
        nearest_depth = nearest_depth.min(depth);
    }
    // Objects are one unit tall; the camera sits half a unit above the floor.
    let shift = 0.25 * pose.pitch as f64;
    let v_top = 0.5 - 0.5 * 0.5 / nearest_depth + shift;
    let v_bottom = 0.5 + 0.5 * 0.5 / nearest_depth + shift;
    let c = |v: f64| v.clamp(0.0, 1.0);
    [c(u_min), c(v_top), c(u_max), c(v_bottom)]
}

/// Synthetic detector for `target_class`. Among visible instances the
/// nearest one is reported, with confidence `1 - dist / max_view_range`
/// plus optional Gaussian noise, clamped to `[0, 1]`. Returns
/// [`Detection::ZERO`] when nothing is visible.
pub fn detect(
    scene: &Scene,
    pose: &AgentPose,
    target_class: usize,
    cfg: &EnvConfig,
    noise: Option<&mut dyn RngCore>,
) -> Detection {
    let best = scene
        .instances(target_class)
        .filter_map(|(i, _)| visible_distance(scene, pose, i, cfg).map(|d| (i, d)))
        .fold(None, |best: Option<(usize, f64)>, cur| match best {
            Some(b) if b.1 <= cur.1 => Some(b),
            _ => Some(cur),
        });
    let Some((index, dist)) = best else {
        return Detection::ZERO;
    };
    let mut conf = 1.0 - dist / cfg.max_view_range;
    if let Some(rng) = noise {
        if cfg.detector_noise > 0.0 {
            let normal = Normal::new(0.0, cfg.detector_noise).expect("valid sigma");
            conf += normal.sample(rng);
        }
    }
    let conf = conf.clamp(0.0, 1.0);
    if conf == 0.0 {
        return Detection::ZERO;
    }
    let b = project_bbox(&scene.objects()[index], pose);
    Detection([b[0], b[1], b[2], b[3], conf])
}

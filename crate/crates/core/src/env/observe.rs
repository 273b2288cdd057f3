use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::detect::{detect, Detection};
use super::{AgentPose, Coord, EnvConfig, Scene, HEADINGS};

/// What the agent perceives at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub detection: Detection,
    pub local_patch: Vec<f64>,
    pub pose: AgentPose,
    /// True iff the last action was a `MoveAhead` that failed.
    pub collided: bool,
}

impl Observation {
    pub fn capture(
        scene: &Scene,
        pose: AgentPose,
        target_class: usize,
        collided: bool,
        cfg: &EnvConfig,
        noise: Option<&mut dyn RngCore>,
    ) -> Self {
        Self {
            detection: detect(scene, &pose, target_class, cfg, noise),
            local_patch: local_patch(scene, &pose, cfg.patch_radius),
            pose,
            collided,
        }
    }
}

/// Egocentric occupancy window of side `2r + 1`, flattened row-major.
/// Row 0 is farthest ahead, column 0 is leftmost; 1.0 marks blocked or
/// out-of-bounds cells. Diagonal headings sample the rotated grid at the
/// nearest cell.
pub fn local_patch(scene: &Scene, pose: &AgentPose, radius: usize) -> Vec<f64> {
    let (hx, hy) = HEADINGS[pose.yaw as usize];
    let norm = ((hx * hx + hy * hy) as f64).sqrt();
    let (fx, fy) = (hx as f64 / norm, hy as f64 / norm);
    let (rx, ry) = (-fy, fx);
    let r = radius as i32;
    let mut out = Vec::with_capacity((2 * radius + 1).pow(2));
    for fwd in (-r..=r).rev() {
        for lat in -r..=r {
            let ox = (fwd as f64 * fx + lat as f64 * rx).round() as i32;
            let oy = (fwd as f64 * fy + lat as f64 * ry).round() as i32;
            let c = Coord::new(pose.pos.x + ox, pose.pos.y + oy);
            out.push(if scene.is_blocked(c) { 1.0 } else { 0.0 });
        }
    }
    out
}

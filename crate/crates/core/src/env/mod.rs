//! Deterministic gridworld: scenes, agent motion, a synthetic target
//! detector and shortest-path oracles.
//!
//! Yaw index 0 faces north (`-y`) and increases clockwise in 45° steps, so
//! odd yaws move diagonally. Diagonal moves may cut corners unless
//! [`EnvConfig::corner_cutting`] is off.

mod detect;
mod generate;
mod observe;
mod path;
mod scene;

pub use detect::{detect, line_of_sight, Detection};
pub use generate::{gen_scenes, sample_episode, EpisodeSpec, GenParams};
pub use observe::{local_patch, Observation};
pub use path::{
    is_success_cell, oracle_path, shortest_path_length, DistanceField, GoalRegion, Unreachable,
};
pub use scene::{load_scene, load_scene_dir, save_scene, Cell, Scene, SceneFile, SceneObject};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("malformed scene: {0}")]
    MalformedScene(String),
    #[error("scene generation failed: {0}")]
    GenerationFailed(String),
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Simulator and detector settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Object class vocabulary size `k`.
    pub num_classes: usize,
    /// Detection confidence required for success and for "target found".
    pub confidence_threshold: f64,
    /// Maximum Euclidean cell distance to a target for success.
    pub success_radius: f64,
    pub max_view_range: f64,
    /// Standard deviation of Gaussian noise on detector confidence.
    pub detector_noise: f64,
    pub patch_radius: usize,
    pub max_steps: usize,
    pub corner_cutting: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            confidence_threshold: 0.4,
            success_radius: 3.0,
            max_view_range: 5.0,
            detector_noise: 0.05,
            patch_radius: 2,
            max_steps: 100,
            corner_cutting: true,
        }
    }
}

impl EnvConfig {
    pub fn patch_len(&self) -> usize {
        let side = 2 * self.patch_radius + 1;
        side * side
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: i32,
    pub y: i32,
}

impl Coord {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, d: (i32, i32)) -> Self {
        Self::new(self.x + d.0, self.y + d.1)
    }

    pub fn dist(self, other: Coord) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Unit step for each yaw index.
pub const HEADINGS: [(i32, i32); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

/// Geometric length of a single move in the given heading.
pub fn heading_length(yaw: u8) -> f64 {
    if yaw % 2 == 1 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentPose {
    pub pos: Coord,
    /// 0..8, multiples of 45° clockwise from north.
    pub yaw: u8,
    /// -1 look down, 0 level, +1 look up.
    pub pitch: i8,
}

impl AgentPose {
    pub fn new(x: i32, y: i32, yaw: u8, pitch: i8) -> Self {
        Self {
            pos: Coord::new(x, y),
            yaw,
            pitch,
        }
    }

    pub fn is_valid_in(&self, scene: &Scene) -> bool {
        scene.is_walkable(self.pos) && self.yaw < 8 && (-1..=1).contains(&self.pitch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    RotateLeft,
    RotateRight,
    LookDown,
    LookUp,
    Done,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::MoveAhead,
        Action::RotateLeft,
        Action::RotateRight,
        Action::LookDown,
        Action::LookUp,
        Action::Done,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

/// Whether a move from `from` in heading `yaw` lands on a walkable cell.
pub fn can_move(scene: &Scene, from: Coord, yaw: u8, corner_cutting: bool) -> bool {
    let d = HEADINGS[yaw as usize % 8];
    let to = from.offset(d);
    if !scene.is_walkable(to) {
        return false;
    }
    if !corner_cutting && d.0 != 0 && d.1 != 0 {
        return scene.is_walkable(from.offset((d.0, 0))) && scene.is_walkable(from.offset((0, d.1)));
    }
    true
}

/// Applies one action. Returns the new pose and whether a forward move was
/// blocked. Only `MoveAhead` can collide.
pub fn step(scene: &Scene, pose: AgentPose, action: Action, cfg: &EnvConfig) -> (AgentPose, bool) {
    let mut next = pose;
    match action {
        Action::MoveAhead => {
            if can_move(scene, pose.pos, pose.yaw, cfg.corner_cutting) {
                next.pos = pose.pos.offset(HEADINGS[pose.yaw as usize]);
            } else {
                return (pose, true);
            }
        }
        Action::RotateLeft => next.yaw = (pose.yaw + 7) % 8,
        Action::RotateRight => next.yaw = (pose.yaw + 1) % 8,
        Action::LookDown => next.pitch = (pose.pitch - 1).max(-1),
        Action::LookUp => next.pitch = (pose.pitch + 1).min(1),
        Action::Done => {}
    }
    (next, false)
}

/// Success predicate: `Done` issued, confidence at or above the threshold and
/// within the success radius of some instance of the target class.
pub fn success(
    scene: &Scene,
    pose: &AgentPose,
    target_class: usize,
    detection: &Detection,
    done_issued: bool,
    cfg: &EnvConfig,
) -> bool {
    done_issued
        && detection.confidence() >= cfg.confidence_threshold
        && nearest_instance_distance(scene, pose.pos, target_class)
            .is_some_and(|d| d <= cfg.success_radius)
}

/// Euclidean distance from `pos` to the closest footprint cell of any
/// instance of `class_id`.
pub fn nearest_instance_distance(scene: &Scene, pos: Coord, class_id: usize) -> Option<f64> {
    scene
        .instances(class_id)
        .flat_map(|(_, o)| o.cells())
        .map(|c| pos.dist(c))
        .min_by(f64::total_cmp)
}

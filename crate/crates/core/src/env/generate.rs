use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::path::{shortest_path_length, GoalRegion};
use super::{can_move, AgentPose, Cell, Coord, EnvConfig, EnvError, Scene, SceneObject};

/// Procedural floorplan parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenParams {
    pub width: usize,
    pub height: usize,
    /// Probability that an interior cell is an obstacle, in `[0, 0.5]`.
    pub obstacle_density: f64,
    /// Distinct target classes placed per scene (one instance each).
    pub classes_per_scene: usize,
    /// Probability that an object gets a 2x2 footprint instead of 1x1.
    pub large_object_prob: f64,
    /// Attempts per scene before giving up.
    pub max_retries: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            width: 11,
            height: 11,
            obstacle_density: 0.15,
            classes_per_scene: 3,
            large_object_prob: 0.2,
            max_retries: 200,
        }
    }
}

/// One navigation task: where the agent starts and what it must find.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub scene_id: String,
    pub start: AgentPose,
    pub target_class: usize,
    /// Oracle shortest path length from the start.
    pub optimal_length: f64,
}

/// Generates `count` walled scenes with ids `{family}_{split}_{index:03}`.
/// Each scene is 8-connected over walkable cells and every placed class has
/// at least one success cell. Deterministic given `seed`.
pub fn gen_scenes(
    params: &GenParams,
    cfg: &EnvConfig,
    family: &str,
    split: &str,
    seed: u64,
    count: usize,
) -> Result<Vec<Scene>, EnvError> {
    if params.width < 5 || params.height < 5 {
        return Err(EnvError::GenerationFailed(format!(
            "scene must be at least 5x5, got {}x{}",
            params.width, params.height
        )));
    }
    if !(0.0..=0.5).contains(&params.obstacle_density) {
        return Err(EnvError::GenerationFailed(format!(
            "obstacle density {} outside [0, 0.5]",
            params.obstacle_density
        )));
    }
    if params.classes_per_scene == 0 || params.classes_per_scene > cfg.num_classes {
        return Err(EnvError::GenerationFailed(format!(
            "cannot place {} classes from a vocabulary of {}",
            params.classes_per_scene, cfg.num_classes
        )));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let id = format!("{family}_{split}_{i:03}");
            for _ in 0..params.max_retries.max(1) {
                if let Some(scene) = try_generate(params, cfg, &id, &mut rng)? {
                    return Ok(scene);
                }
            }
            Err(EnvError::GenerationFailed(format!(
                "{id}: no connected layout after {} attempts",
                params.max_retries
            )))
        })
        .collect()
}

fn try_generate(
    params: &GenParams,
    cfg: &EnvConfig,
    id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Scene>, EnvError> {
    let (w, h) = (params.width, params.height);
    let mut cells = vec![Cell::Free; w * h];
    for y in 0..h {
        for x in 0..w {
            let border = x == 0 || y == 0 || x == w - 1 || y == h - 1;
            if border || rng.random_bool(params.obstacle_density) {
                cells[y * w + x] = Cell::Obstacle;
            }
        }
    }
    let classes = sample(rng, cfg.num_classes, params.classes_per_scene).into_vec();
    let mut taken = vec![false; w * h];
    let mut objects = Vec::new();
    for class_id in classes {
        let extent = if rng.random_bool(params.large_object_prob) { 2 } else { 1 };
        let fits = |x: usize, y: usize, taken: &[bool]| {
            (0..extent).all(|dy| {
                (0..extent).all(|dx| {
                    let (cx, cy) = (x + dx, y + dy);
                    cx < w - 1 && cy < h - 1 && cells[cy * w + cx] == Cell::Free && !taken[cy * w + cx]
                })
            })
        };
        let spots: Vec<(usize, usize)> = (1..h - 1)
            .flat_map(|y| (1..w - 1).map(move |x| (x, y)))
            .filter(|&(x, y)| fits(x, y, &taken))
            .collect();
        if spots.is_empty() {
            return Ok(None);
        }
        let (x, y) = spots[rng.random_range(0..spots.len())];
        for dy in 0..extent {
            for dx in 0..extent {
                taken[(y + dy) * w + x + dx] = true;
            }
        }
        objects.push(SceneObject {
            class_id,
            x: x as i32,
            y: y as i32,
            extent: extent as u32,
        });
    }
    let scene = match Scene::new(id, w, h, cells, objects, cfg.num_classes) {
        Ok(s) => s,
        Err(_) => return Ok(None),
    };
    if !is_connected(&scene, cfg.corner_cutting) {
        return Ok(None);
    }
    if scene
        .classes()
        .iter()
        .any(|&c| GoalRegion::new(&scene, c, cfg).is_empty())
    {
        return Ok(None);
    }
    Ok(Some(scene))
}

/// True when every walkable cell is reachable from every other by 8-way moves.
pub(crate) fn is_connected(scene: &Scene, corner_cutting: bool) -> bool {
    let Some(first) = scene.walkable_cells().next() else {
        return false;
    };
    let mut seen = vec![false; scene.width() * scene.height()];
    let mut queue = VecDeque::from([first]);
    seen[scene.index(first)] = true;
    let mut reached = 1;
    while let Some(c) = queue.pop_front() {
        for yaw in 0..8u8 {
            if can_move(scene, c, yaw, corner_cutting) {
                let n = c.offset(super::HEADINGS[yaw as usize]);
                let i = scene.index(n);
                if !seen[i] {
                    seen[i] = true;
                    reached += 1;
                    queue.push_back(n);
                }
            }
        }
    }
    reached == scene.walkable_cells().count()
}

/// Draws a start pose and target class with a reachable, non-trivial goal
/// (the start is not already a success cell).
pub fn sample_episode(
    scene: &Scene,
    cfg: &EnvConfig,
    rng: &mut dyn RngCore,
) -> Result<EpisodeSpec, EnvError> {
    let classes = scene.classes();
    let walkable: Vec<Coord> = scene.walkable_cells().collect();
    if classes.is_empty() || walkable.is_empty() {
        return Err(EnvError::Unreachable(format!(
            "{}: no objects or no walkable cells",
            scene.scene_id()
        )));
    }
    for _ in 0..1000 {
        let target_class = classes[rng.random_range(0..classes.len())];
        let pos = walkable[rng.random_range(0..walkable.len())];
        let start = AgentPose {
            pos,
            yaw: rng.random_range(0..8u8),
            pitch: 0,
        };
        if let Ok(len) = shortest_path_length(scene, &start, target_class, cfg) {
            if len > 0.0 {
                return Ok(EpisodeSpec {
                    scene_id: scene.scene_id().to_string(),
                    start,
                    target_class,
                    optimal_length: len,
                });
            }
        }
    }
    Err(EnvError::Unreachable(format!(
        "{}: no valid start found",
        scene.scene_id()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scenes() {
        let p = GenParams::default();
        let cfg = EnvConfig::default();
        let a = gen_scenes(&p, &cfg, "room", "train", 1, 2).unwrap();
        let b = gen_scenes(&p, &cfg, "room", "train", 1, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].scene_id(), "room_train_000");
        assert_eq!(a[1].family(), "room");
        let c = gen_scenes(&p, &cfg, "room", "train", 2, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_density_has_only_border_walls() {
        let p = GenParams {
            obstacle_density: 0.0,
            ..GenParams::default()
        };
        let cfg = EnvConfig::default();
        for s in gen_scenes(&p, &cfg, "open", "test", 3, 3).unwrap() {
            for y in 0..s.height() as i32 {
                for x in 0..s.width() as i32 {
                    let border = x == 0 || y == 0 || x == s.width() as i32 - 1 || y == s.height() as i32 - 1;
                    assert_eq!(s.cell(Coord::new(x, y)) == Some(Cell::Obstacle), border);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let cfg = EnvConfig::default();
        let small = GenParams {
            width: 4,
            ..GenParams::default()
        };
        assert!(gen_scenes(&small, &cfg, "r", "t", 0, 1).is_err());
        let dense = GenParams {
            obstacle_density: 0.6,
            ..GenParams::default()
        };
        assert!(gen_scenes(&dense, &cfg, "r", "t", 0, 1).is_err());
    }

    #[test]
    fn sampled_episodes_are_reachable_and_nontrivial() {
        let cfg = EnvConfig::default();
        let scenes = gen_scenes(&GenParams::default(), &cfg, "room", "train", 9, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in &scenes {
            for _ in 0..10 {
                let ep = sample_episode(s, &cfg, &mut rng).unwrap();
                assert!(ep.optimal_length > 0.0);
                assert!(ep.start.is_valid_in(s));
                assert!(s.has_class(ep.target_class));
            }
        }
    }
}

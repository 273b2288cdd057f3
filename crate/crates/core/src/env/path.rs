use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use super::detect::line_of_sight;
use super::{can_move, heading_length, AgentPose, Coord, EnvConfig, Scene};

#[derive(Debug, Clone, Error, PartialEq)]
#[error("no reachable success cell for class {class} from ({}, {}) in {scene}", start.x, start.y)]
pub struct Unreachable {
    pub scene: String,
    pub start: Coord,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    cost: f64,
    index: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost, then on index for deterministic tie-breaking.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn coord_of(scene: &Scene, index: usize) -> Coord {
    Coord::new((index % scene.width()) as i32, (index / scene.width()) as i32)
}

/// Dijkstra over walkable cells from the given sources. Returns distances
/// and predecessor indices.
fn dijkstra(scene: &Scene, sources: &[Coord], cfg: &EnvConfig) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = scene.width() * scene.height();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![None; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        let i = scene.index(s);
        dist[i] = 0.0;
        heap.push(HeapItem { cost: 0.0, index: i });
    }
    while let Some(HeapItem { cost, index }) = heap.pop() {
        if cost > dist[index] {
            continue;
        }
        let u = coord_of(scene, index);
        for yaw in 0..8u8 {
            if !can_move(scene, u, yaw, cfg.corner_cutting) {
                continue;
            }
            let v = u.offset(super::HEADINGS[yaw as usize]);
            let vi = scene.index(v);
            let nd = cost + heading_length(yaw);
            if nd < dist[vi] {
                dist[vi] = nd;
                prev[vi] = Some(index);
                heap.push(HeapItem { cost: nd, index: vi });
            }
        }
    }
    (dist, prev)
}

/// A walkable cell from which a `Done` can succeed after rotating to face
/// the target: some instance is within the success radius, its noise-free
/// confidence meets the threshold, and the line of sight is clear.
pub fn is_success_cell(scene: &Scene, cell: Coord, class_id: usize, cfg: &EnvConfig) -> bool {
    if !scene.is_walkable(cell) {
        return false;
    }
    scene.instances(class_id).any(|(i, obj)| {
        let Some((target, d)) = obj
            .cells()
            .map(|c| (c, cell.dist(c)))
            .fold(None, |best: Option<(Coord, f64)>, cur| match best {
                Some(b) if b.1 <= cur.1 => Some(b),
                _ => Some(cur),
            })
        else {
            return false;
        };
        d > 0.0
            && d <= cfg.success_radius
            && d <= cfg.max_view_range
            && 1.0 - d / cfg.max_view_range >= cfg.confidence_threshold
            && line_of_sight(scene, cell, target, Some(i))
    })
}

/// All success cells for a target class.
#[derive(Debug, Clone)]
pub struct GoalRegion {
    cells: Vec<bool>,
}

impl GoalRegion {
    pub fn new(scene: &Scene, class_id: usize, cfg: &EnvConfig) -> Self {
        let cells = (0..scene.width() * scene.height())
            .map(|i| is_success_cell(scene, coord_of(scene, i), class_id, cfg))
            .collect();
        Self { cells }
    }

    pub fn contains(&self, scene: &Scene, c: Coord) -> bool {
        scene.in_bounds(c) && self.cells[scene.index(c)]
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|b| *b)
    }
}

/// Minimal geometric path length (axis 1, diagonal √2) from the start cell
/// to the nearest success cell.
pub fn shortest_path_length(
    scene: &Scene,
    start: &AgentPose,
    class_id: usize,
    cfg: &EnvConfig,
) -> Result<f64, Unreachable> {
    oracle_path(scene, start, class_id, cfg).map(|(_, len)| len)
}

/// Cell sequence (including start and goal) of one shortest path to the
/// nearest success cell, plus its length.
pub fn oracle_path(
    scene: &Scene,
    start: &AgentPose,
    class_id: usize,
    cfg: &EnvConfig,
) -> Result<(Vec<Coord>, f64), Unreachable> {
    let unreachable = || Unreachable {
        scene: scene.scene_id().to_string(),
        start: start.pos,
        class: class_id,
    };
    if !scene.is_walkable(start.pos) {
        return Err(unreachable());
    }
    let goals = GoalRegion::new(scene, class_id, cfg);
    let (dist, prev) = dijkstra(scene, &[start.pos], cfg);
    let best = (0..dist.len())
        .filter(|&i| goals.cells[i] && dist[i].is_finite())
        .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)))
        .ok_or_else(unreachable)?;
    let mut path = vec![coord_of(scene, best)];
    let mut cur = best;
    while let Some(p) = prev[cur] {
        path.push(coord_of(scene, p));
        cur = p;
    }
    path.reverse();
    Ok((path, dist[best]))
}

/// Geodesic distance from every walkable cell to the nearest footprint of
/// a target class, moving through walkable cells.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    dist: Vec<f64>,
}

impl DistanceField {
    pub fn to_class(scene: &Scene, class_id: usize, cfg: &EnvConfig) -> Self {
        let sources: Vec<Coord> = scene
            .instances(class_id)
            .flat_map(|(_, o)| o.cells())
            .collect();
        let (dist, _) = dijkstra(scene, &sources, cfg);
        Self {
            width: scene.width(),
            dist,
        }
    }

    pub fn at(&self, c: Coord) -> f64 {
        if c.x < 0 || c.y < 0 || c.x as usize >= self.width {
            return f64::INFINITY;
        }
        self.dist
            .get(c.y as usize * self.width + c.x as usize)
            .copied()
            .unwrap_or(f64::INFINITY)
    }
}

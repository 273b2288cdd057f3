//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use iomnav::env::{Action, Coord};
use iomnav::eval::EpisodeResult;
use iomnav::target_memory::FEATURE_WIDTH;

/// Straightforward obstacle-map model: a list of records that is sorted
/// whole before each eviction.
#[derive(Debug, Clone, Default)]
pub struct RefObstacleMap {
    pub capacity: usize,
    pub entries: Vec<(Coord, [i8; 8], usize)>,
}

impl RefObstacleMap {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::new(),
        }
    }

    /// Returns the coordinates evicted by this call.
    pub fn record(&mut self, pre: Coord, dir: u8, passable: bool, agent: Coord, step: usize) -> Vec<Coord> {
        let v = if passable { 1 } else { -1 };
        if let Some(e) = self.entries.iter_mut().find(|e| e.0 == pre) {
            e.1[dir as usize] = v;
            e.2 = step;
        } else {
            let mut z = [0; 8];
            z[dir as usize] = v;
            self.entries.push((pre, z, step));
        }
        let mut evicted = Vec::new();
        while self.entries.len() > self.capacity {
            // Farthest first; among equals the least recently updated,
            // then the larger coordinate.
            let d2 = |c: Coord| {
                let (dx, dy) = ((c.x - agent.x) as i64, (c.y - agent.y) as i64);
                dx * dx + dy * dy
            };
            self.entries.sort_by(|a, b| {
                d2(b.0)
                    .cmp(&d2(a.0))
                    .then(a.2.cmp(&b.2))
                    .then(b.0.cmp(&a.0))
            });
            evicted.push(self.entries.remove(0).0);
        }
        evicted
    }

    pub fn sorted(&self) -> Vec<(Coord, [i8; 8], usize)> {
        let mut v = self.entries.clone();
        v.sort_by_key(|e| e.0);
        v
    }
}

/// Target memory oracle: rows tagged with insertion order; on overflow the
/// row with the largest squared distance to the newcomer goes, oldest
/// first among equals.
#[derive(Debug, Clone)]
pub struct RefMemory {
    pub capacity: usize,
    pub rows: Vec<([f64; FEATURE_WIDTH], usize)>,
    counter: usize,
}

impl RefMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            rows: Vec::new(),
            counter: 0,
        }
    }

    pub fn push(&mut self, d: [f64; FEATURE_WIDTH]) {
        self.rows.push((d, self.counter));
        self.counter += 1;
        if self.rows.len() > self.capacity {
            let d2 = |r: &[f64; FEATURE_WIDTH]| r.iter().zip(&d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let mut best: Option<(usize, f64, usize)> = None;
            for (i, (r, order)) in self.rows.iter().enumerate() {
                let dist = d2(r);
                let better = match best {
                    None => true,
                    Some((_, bd, bo)) => dist > bd || (dist == bd && *order < bo),
                };
                if better {
                    best = Some((i, dist, *order));
                }
            }
            self.rows.remove(best.unwrap().0);
        }
    }

    pub fn plain_rows(&self) -> Vec<[f64; FEATURE_WIDTH]> {
        self.rows.iter().map(|r| r.0).collect()
    }
}

/// Metric oracle written with explicit loops and counters.
pub fn ref_metrics(results: &[EpisodeResult]) -> (f64, f64, f64) {
    if results.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut successes = 0usize;
    let mut spl_sum = 0.0;
    let mut sae_sum = 0.0;
    for r in results {
        if !r.success {
            spl_sum += 0.0;
            sae_sum += 0.0;
            continue;
        }
        successes += 1;
        let longest = if r.path_length > r.optimal_length {
            r.path_length
        } else {
            r.optimal_length
        };
        spl_sum += if longest == 0.0 { 1.0 } else { r.optimal_length / longest };
        let mut forward = 0usize;
        for a in &r.actions {
            if matches!(a, Action::MoveAhead) {
                forward += 1;
            }
        }
        sae_sum += if r.actions.is_empty() {
            0.0
        } else {
            forward as f64 / r.actions.len() as f64
        };
    }
    let n = results.len() as f64;
    (successes as f64 / n, spl_sum / n, sae_sum / n)
}

pub fn result(scene: &str, success: bool, path_length: f64, optimal_length: f64, actions: Vec<Action>) -> EpisodeResult {
    EpisodeResult {
        scene_id: scene.to_string(),
        success,
        path_length,
        optimal_length,
        actions,
        collisions: 0,
        trace: Vec::new(),
    }
}

//! Implicit obstacle map: per-cell passability records learned from
//! whether forward moves changed the agent's coordinate, plus the two-layer
//! embedding into a 32-wide obstacle feature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Coord;
use crate::numerics::{Graph, ParamId, ParameterStore, Result, Tensor, Var};

pub const ENTRY_WIDTH: usize = 10;
pub const EMBED_WIDTH: usize = 32;

/// One visited cell: `z[d]` is -1 after a blocked move in heading `d`,
/// +1 after a successful one and 0 while untried.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObstacleEntry {
    #[serde(flatten)]
    pub coord: Coord,
    pub z: [i8; 8],
    pub last_update: usize,
}

/// Bounded, coordinate-keyed set of [`ObstacleEntry`] records for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitObstacleMap {
    capacity: usize,
    origin: Coord,
    scale: f64,
    entries: Vec<ObstacleEntry>,
}

impl ImplicitObstacleMap {
    /// `origin` is the episode start cell; stored coordinates are
    /// `(c - origin) / max(width, height)`.
    pub fn new(capacity: usize, origin: Coord, width: usize, height: usize) -> Self {
        Self {
            capacity,
            origin,
            scale: width.max(height).max(1) as f64,
            entries: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ObstacleEntry] {
        &self.entries
    }

    pub fn get(&self, c: Coord) -> Option<&ObstacleEntry> {
        self.entries.iter().find(|e| e.coord == c)
    }

    /// Records the outcome of a forward move tried from `pre` in heading
    /// `direction`, then evicts entries farthest from `agent` until at most
    /// `capacity` remain. Ties evict the least recently updated first.
    pub fn record_outcome(
        &mut self,
        pre: Coord,
        direction: u8,
        passable: bool,
        agent: Coord,
        step: usize,
    ) {
        let d = direction as usize % 8;
        let value = if passable { 1 } else { -1 };
        match self.entries.iter_mut().find(|e| e.coord == pre) {
            Some(e) => {
                debug_assert!(
                    e.z[d] == 0 || e.z[d] == value,
                    "passability at ({}, {}) heading {d} flipped",
                    pre.x,
                    pre.y
                );
                e.z[d] = value;
                e.last_update = step;
            }
            None => {
                let mut z = [0; 8];
                z[d] = value;
                self.entries.push(ObstacleEntry {
                    coord: pre,
                    z,
                    last_update: step,
                });
            }
        }
        while self.entries.len() > self.capacity {
            let worst = self
                .entries
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| {
                    agent
                        .dist(a.coord)
                        .total_cmp(&agent.dist(b.coord))
                        .then(b.last_update.cmp(&a.last_update))
                        .then(a.coord.cmp(&b.coord))
                })
                .map(|(i, _)| i)
                .expect("non-empty");
            self.entries.swap_remove(worst);
        }
    }

    /// `capacity x 10` matrix of `concat(z, q)` rows, most recently updated
    /// first (ties by coordinate), zero-padded.
    pub fn to_matrix(&self) -> Tensor {
        let mut order: Vec<&ObstacleEntry> = self.entries.iter().collect();
        order.sort_by(|a, b| b.last_update.cmp(&a.last_update).then(a.coord.cmp(&b.coord)));
        let mut data = vec![0.0; self.capacity * ENTRY_WIDTH];
        for (row, e) in data.chunks_mut(ENTRY_WIDTH).zip(order) {
            for (slot, z) in row.iter_mut().zip(e.z) {
                *slot = z as f64;
            }
            row[8] = (e.coord.x - self.origin.x) as f64 / self.scale;
            row[9] = (e.coord.y - self.origin.y) as f64 / self.scale;
        }
        Tensor::from_vec(&[self.capacity, ENTRY_WIDTH], data).expect("shape matches")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.entries).expect("entries serialize")
    }
}

/// Parameter handles for the obstacle embedding: a row-wise 10 -> 32 layer
/// followed by a layer mixing the `capacity` rows down to one.
#[derive(Debug, Clone, Copy)]
pub struct IomEmbed {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub capacity: usize,
}

impl IomEmbed {
    pub fn register(store: &mut ParameterStore, capacity: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: store.add_weight("iom.ln1.w", ENTRY_WIDTH, EMBED_WIDTH, 1.0, rng),
            b1: store.add_bias("iom.ln1.b", EMBED_WIDTH),
            w2: store.add_weight("iom.ln2.w", capacity, 1, 1.0, rng),
            b2: store.add_bias("iom.ln2.b", 1),
            capacity,
        }
    }

    /// `y1 = relu(m W1 + b1)`, `y2 = relu(y1ᵀ W2 + b2)ᵀ`. Returns `[1, 32]`.
    pub fn forward(&self, g: &mut Graph, matrix: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (g.param(self.w1), g.param(self.b1), g.param(self.w2), g.param(self.b2));
        let y1 = g.linear(matrix, w1, b1)?;
        let y1 = g.relu(y1);
        let y1t = g.transpose(y1);
        let y2 = g.linear(y1t, w2, b2)?;
        let y2 = g.relu(y2);
        Ok(g.transpose(y2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map(cap: usize) -> ImplicitObstacleMap {
        ImplicitObstacleMap::new(cap, Coord::new(0, 0), 10, 10)
    }

    #[test]
    fn collision_creates_entry() {
        let mut m = map(32);
        m.record_outcome(Coord::new(3, 4), 2, false, Coord::new(3, 4), 0);
        assert_eq!(m.len(), 1);
        assert_eq!(m.entries()[0].z, [0, 0, -1, 0, 0, 0, 0, 0]);
        assert_eq!(m.entries()[0].coord, Coord::new(3, 4));
    }

    #[test]
    fn later_outcome_merges_into_same_entry() {
        let mut m = map(32);
        m.record_outcome(Coord::new(3, 4), 2, false, Coord::new(3, 4), 0);
        m.record_outcome(Coord::new(3, 4), 6, true, Coord::new(2, 4), 5);
        assert_eq!(m.len(), 1);
        let e = &m.entries()[0];
        assert_eq!(e.z[2], -1);
        assert_eq!(e.z[6], 1);
        assert_eq!(e.last_update, 5);
    }

    #[test]
    fn farthest_entry_is_evicted() {
        let mut m = map(2);
        let agent = Coord::new(0, 0);
        m.record_outcome(Coord::new(1, 0), 0, true, agent, 0);
        m.record_outcome(Coord::new(5, 0), 0, true, agent, 1);
        m.record_outcome(Coord::new(0, 2), 0, true, agent, 2);
        let kept: Vec<Coord> = m.entries().iter().map(|e| e.coord).collect();
        assert_eq!(kept.len(), 2);
        assert!(!kept.contains(&Coord::new(5, 0)));
    }

    #[test]
    fn matrix_rows_are_most_recent_first() {
        let mut m = map(4);
        let agent = Coord::new(0, 0);
        m.record_outcome(Coord::new(1, 0), 0, true, agent, 5);
        m.record_outcome(Coord::new(2, 0), 0, true, agent, 9);
        m.record_outcome(Coord::new(3, 0), 0, true, agent, 2);
        let t = m.to_matrix();
        assert_eq!(t.shape(), &[4, 10]);
        assert_eq!(t.get(0, 8), 0.2);
        assert_eq!(t.get(1, 8), 0.1);
        assert_eq!(t.get(2, 8), 0.3);
        assert!(t.row_slice(3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_map_gives_zero_matrix() {
        assert!(map(32).to_matrix().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn inspect_json_shape() {
        let mut m = map(4);
        m.record_outcome(Coord::new(1, 2), 3, false, Coord::new(1, 2), 7);
        assert_eq!(
            m.to_json(),
            r#"[{"x":1,"y":2,"z":[0,0,0,-1,0,0,0,0],"last_update":7}]"#
        );
    }

    fn embed_store(cap: usize, seed: u64) -> (ParameterStore, IomEmbed) {
        let mut s = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = IomEmbed::register(&mut s, cap, &mut rng);
        for id in [e.b1, e.b2] {
            for v in s.value_mut(id).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        (s, e)
    }

    #[test]
    fn zero_matrix_zero_biases_embeds_to_zero() {
        let mut s = ParameterStore::new();
        let e = IomEmbed::register(&mut s, 8, &mut ChaCha8Rng::seed_from_u64(0));
        let mut g = Graph::new(&s);
        let m = g.input(Tensor::zeros(&[8, 10]));
        let out = e.forward(&mut g, m).unwrap();
        assert_eq!(g.value(out).shape(), &[1, 32]);
        assert!(g.value(out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_matrix_with_biases_matches_direct_evaluation() {
        let (s, e) = embed_store(4, 3);
        let mut g = Graph::new(&s);
        let m = g.input(Tensor::zeros(&[4, 10]));
        let out = e.forward(&mut g, m).unwrap();
        let b1 = s.value(e.b1).data();
        let w2 = s.value(e.w2).data();
        let b2 = s.value(e.b2).data()[0];
        let w2_sum: f64 = w2.iter().sum();
        for (got, b) in g.value(out).data().iter().zip(b1) {
            let expected = (b.max(0.0) * w2_sum + b2).max(0.0);
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let (s, e) = embed_store(6, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let input = Tensor::from_vec(&[6, 10], data).unwrap();
        let err = grad_check(&s, 1e-5, None, |st| {
            let mut g = Graph::new(st);
            let m = g.input(input.clone());
            let out = e.forward(&mut g, m)?;
            let sq = g.square(out);
            let loss = g.sum(sq);
            let loss = g.scale(loss, 1e-2);
            let back = g.backward(loss)?;
            Ok((g.scalar(loss), back.params))
        })
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn row_order_matters() {
        let (s, e) = embed_store(3, 5);
        let a = Tensor::from_vec(&[3, 10], (0..30).map(|i| (i % 7) as f64 * 0.1).collect()).unwrap();
        let mut swapped = a.data().to_vec();
        swapped.rotate_left(10);
        let b = Tensor::from_vec(&[3, 10], swapped).unwrap();
        let eval = |t: Tensor| {
            let mut g = Graph::new(&s);
            let m = g.input(t);
            let out = e.forward(&mut g, m).unwrap();
            g.value(out).data().to_vec()
        };
        assert_ne!(eval(a), eval(b));
    }
}

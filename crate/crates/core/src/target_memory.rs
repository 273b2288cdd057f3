//! Target memory of past detections and the goal-conditioned multi-head
//! cross-attention that summarizes it.

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::env::{AgentPose, Coord, Detection};
use crate::numerics::{Graph, NumericsError, ParamId, ParameterStore, Tensor, Var};

pub const FEATURE_WIDTH: usize = 9;
pub const MODEL_WIDTH: usize = 32;
pub const HEADS: usize = 4;
pub const HEAD_WIDTH: usize = MODEL_WIDTH / HEADS;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("goal vector is not one-hot")]
    NotOneHot,
    #[error("target memory is empty")]
    EmptyMemory,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Pose as `[dx / s, dy / s, yaw / 8, pitch]`, with `d` measured from the
/// episode start and `s = max(width, height)`.
pub fn pose_features(pose: &AgentPose, origin: Coord, scale: f64) -> [f64; 4] {
    [
        (pose.pos.x - origin.x) as f64 / scale,
        (pose.pos.y - origin.y) as f64 / scale,
        pose.yaw as f64 / 8.0,
        pose.pitch as f64,
    ]
}

/// Target orientation feature: detection followed by pose features.
pub fn orientation_feature(det: &Detection, pose: [f64; 4]) -> [f64; FEATURE_WIDTH] {
    let mut d = [0.0; FEATURE_WIDTH];
    d[..5].copy_from_slice(det.as_slice());
    d[5..].copy_from_slice(&pose);
    d
}

pub fn one_hot(class_id: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[class_id] = 1.0;
    v
}

fn distance(a: &[f64; FEATURE_WIDTH], b: &[f64; FEATURE_WIDTH]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Bounded memory of orientation features, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMemory {
    capacity: usize,
    rows: Vec<[f64; FEATURE_WIDTH]>,
}

impl TargetMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[f64; FEATURE_WIDTH]] {
        &self.rows
    }

    /// Appends `d`; when over capacity drops the row farthest from `d`
    /// (the oldest among ties).
    pub fn push(&mut self, d: [f64; FEATURE_WIDTH]) {
        self.rows.push(d);
        if self.rows.len() > self.capacity {
            let mut worst = 0;
            let mut worst_dist = f64::NEG_INFINITY;
            for (i, r) in self.rows.iter().enumerate() {
                let dist = distance(r, &d);
                if dist > worst_dist {
                    worst = i;
                    worst_dist = dist;
                }
            }
            self.rows.remove(worst);
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.rows.iter().flatten().copied().collect();
        Tensor::from_vec(&[self.rows.len(), FEATURE_WIDTH], data).expect("shape matches")
    }
}

/// Two-layer perceptron `relu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        dims: [usize; 3],
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w1: store.add_weight(&format!("{name}.w1"), dims[0], dims[1], 1.0, rng),
            b1: store.add_bias(&format!("{name}.b1"), dims[1]),
            w2: store.add_weight(&format!("{name}.w2"), dims[1], dims[2], 1.0, rng),
            b2: store.add_bias(&format!("{name}.b2"), dims[2]),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NumericsError> {
        let (w1, b1, w2, b2) = (g.param(self.w1), g.param(self.b1), g.param(self.w2), g.param(self.b2));
        let h = g.linear(x, w1, b1)?;
        let h = g.relu(h);
        g.linear(h, w2, b2)
    }
}

/// Output of one attention read.
pub struct Aggregate {
    /// `[1, 32]` aggregated orientation embedding.
    pub features: Var,
    /// Pre-dropout attention weights, one row of length `n` per head.
    pub weights: Vec<Vec<f64>>,
}

/// Parameters of the goal encoder, memory encoder and attention.
#[derive(Debug, Clone, Copy)]
pub struct TargetEncoder {
    pub memory_mlp: Mlp,
    pub goal_mlp: Mlp,
    pub compressor: Mlp,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub num_classes: usize,
}

impl TargetEncoder {
    pub fn register(store: &mut ParameterStore, num_classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            memory_mlp: Mlp::register(store, "tm.memory", [FEATURE_WIDTH, 32, MODEL_WIDTH], rng),
            goal_mlp: Mlp::register(store, "tm.goal", [num_classes, 64, 64], rng),
            compressor: Mlp::register(store, "tm.compress", [68, 48, MODEL_WIDTH], rng),
            wq: store.add_weight("tm.att.wq", MODEL_WIDTH, MODEL_WIDTH, 1.0, rng),
            wk: store.add_weight("tm.att.wk", MODEL_WIDTH, MODEL_WIDTH, 1.0, rng),
            wv: store.add_weight("tm.att.wv", MODEL_WIDTH, MODEL_WIDTH, 1.0, rng),
            wo: store.add_weight("tm.att.wo", MODEL_WIDTH, MODEL_WIDTH, 1.0, rng),
            num_classes,
        }
    }

    /// `P̂ = MLP2(concat(MLP1(goal), pose))`, `[1, 32]`.
    pub fn encode_goal(&self, g: &mut Graph, goal: &[f64], pose: [f64; 4]) -> Result<Var, MemoryError> {
        let ones = goal.iter().filter(|v| **v == 1.0).count();
        let zeros = goal.iter().filter(|v| **v == 0.0).count();
        if goal.len() != self.num_classes || ones != 1 || ones + zeros != goal.len() {
            return Err(MemoryError::NotOneHot);
        }
        let gv = g.row(goal.to_vec());
        let p = self.goal_mlp.forward(g, gv)?;
        let l = g.row(pose.to_vec());
        let cat = g.concat_cols(&[p, l])?;
        Ok(self.compressor.forward(g, cat)?)
    }

    /// `T̂ = MLP(memory rows)`, `[n, 32]`.
    pub fn encode_memory(&self, g: &mut Graph, rows: Var) -> Result<Var, MemoryError> {
        Ok(self.memory_mlp.forward(g, rows)?)
    }

    /// Multi-head cross-attention with the goal embedding as the single
    /// query over the encoded memory. `dropout` applies to the attention
    /// weights during training.
    pub fn aggregate(
        &self,
        g: &mut Graph,
        query: Var,
        memory: &TargetMemory,
        dropout: Option<(f64, &mut dyn RngCore)>,
    ) -> Result<Aggregate, MemoryError> {
        if memory.is_empty() {
            return Err(MemoryError::EmptyMemory);
        }
        let rows = g.input(memory.to_tensor());
        let t_hat = self.encode_memory(g, rows)?;
        self.attend(g, query, t_hat, dropout)
    }

    /// Attention over already-encoded memory rows `t_hat` (`[n, 32]`).
    pub fn attend(
        &self,
        g: &mut Graph,
        query: Var,
        t_hat: Var,
        mut dropout: Option<(f64, &mut dyn RngCore)>,
    ) -> Result<Aggregate, MemoryError> {
        let (wq, wk, wv, wo) = (g.param(self.wq), g.param(self.wk), g.param(self.wv), g.param(self.wo));
        let q = g.matmul(query, wq)?;
        let k = g.matmul(t_hat, wk)?;
        let v = g.matmul(t_hat, wv)?;
        let mut heads = Vec::with_capacity(HEADS);
        let mut weights = Vec::with_capacity(HEADS);
        let inv_sqrt = 1.0 / (HEAD_WIDTH as f64).sqrt();
        for h in 0..HEADS {
            let qh = g.slice_cols(q, h * HEAD_WIDTH, HEAD_WIDTH)?;
            let kh = g.slice_cols(k, h * HEAD_WIDTH, HEAD_WIDTH)?;
            let vh = g.slice_cols(v, h * HEAD_WIDTH, HEAD_WIDTH)?;
            let kt = g.transpose(kh);
            let logits = g.matmul(qh, kt)?;
            let logits = g.scale(logits, inv_sqrt);
            let mut att = g.softmax_rows(logits);
            weights.push(g.value(att).data().to_vec());
            if let Some((p, rng)) = dropout.as_mut() {
                if *p > 0.0 {
                    att = g.dropout(att, *p, &mut **rng);
                }
            }
            heads.push(g.matmul(att, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        let features = g.matmul(cat, wo)?;
        Ok(Aggregate { features, weights })
    }

    /// Plain average of the encoded memory rows, used when attention is
    /// disabled.
    pub fn average(&self, g: &mut Graph, memory: &TargetMemory) -> Result<Var, MemoryError> {
        if memory.is_empty() {
            return Err(MemoryError::EmptyMemory);
        }
        let rows = g.input(memory.to_tensor());
        let t_hat = self.encode_memory(g, rows)?;
        Ok(g.mean_rows(t_hat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feat(v: f64) -> [f64; FEATURE_WIDTH] {
        [v; FEATURE_WIDTH]
    }

    #[test]
    fn push_evicts_farthest_from_new_row() {
        let mut m = TargetMemory::new(2);
        let a = [5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let b = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let c = [0.0; FEATURE_WIDTH];
        m.push(a);
        m.push(b);
        m.push(c);
        assert_eq!(m.rows(), &[b, c]);
    }

    #[test]
    fn push_into_empty_and_ties_remove_oldest() {
        let mut m = TargetMemory::new(2);
        m.push(feat(1.0));
        assert_eq!(m.len(), 1);
        m.push(feat(3.0));
        m.push(feat(2.0));
        // Both old rows are equally far from 2.0; the older one goes.
        assert_eq!(m.rows(), &[feat(3.0), feat(2.0)]);
    }

    fn setup(seed: u64) -> (ParameterStore, TargetEncoder) {
        let mut s = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = TargetEncoder::register(&mut s, 8, &mut rng);
        for id in s.ids().collect::<Vec<_>>() {
            if s.name(id).ends_with(".b1") || s.name(id).ends_with(".b2") {
                for v in s.value_mut(id).data_mut() {
                    *v = rng.random_range(-0.3..0.3);
                }
            }
        }
        (s, enc)
    }

    fn random_memory(n: usize, rng: &mut ChaCha8Rng) -> TargetMemory {
        let mut m = TargetMemory::new(64);
        for _ in 0..n {
            let mut d = [0.0; FEATURE_WIDTH];
            d.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            m.push(d);
        }
        m
    }

    #[test]
    fn zero_parameters_give_zero_goal_embedding() {
        let (mut s, enc) = setup(0);
        for id in s.ids().collect::<Vec<_>>() {
            s.value_mut(id).fill(0.0);
        }
        let mut g = Graph::new(&s);
        let p = enc.encode_goal(&mut g, &one_hot(2, 8), [0.1, 0.2, 0.3, 0.0]).unwrap();
        assert!(g.value(p).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn classes_get_different_goal_embeddings() {
        let (s, enc) = setup(1);
        let mut g = Graph::new(&s);
        let a = enc.encode_goal(&mut g, &one_hot(0, 8), [0.0; 4]).unwrap();
        let b = enc.encode_goal(&mut g, &one_hot(1, 8), [0.0; 4]).unwrap();
        assert_ne!(g.value(a).data(), g.value(b).data());
    }

    #[test]
    fn non_one_hot_goal_rejected() {
        let (s, enc) = setup(1);
        let mut g = Graph::new(&s);
        let mut goal = one_hot(0, 8);
        goal[3] = 1.0;
        assert!(matches!(enc.encode_goal(&mut g, &goal, [0.0; 4]), Err(MemoryError::NotOneHot)));
        assert!(matches!(enc.encode_goal(&mut g, &[0.0; 8], [0.0; 4]), Err(MemoryError::NotOneHot)));
    }

    #[test]
    fn single_row_attention_is_value_projection() {
        let (s, enc) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mem = random_memory(1, &mut rng);
        let mut g = Graph::new(&s);
        let q = enc.encode_goal(&mut g, &one_hot(4, 8), [0.0; 4]).unwrap();
        let agg = enc.aggregate(&mut g, q, &mem, None).unwrap();
        for w in &agg.weights {
            assert_eq!(w, &vec![1.0]);
        }
        let rows = g.input(mem.to_tensor());
        let t_hat = enc.encode_memory(&mut g, rows).unwrap();
        let wv = g.param(enc.wv);
        let v = g.matmul(t_hat, wv).unwrap();
        let wo = g.param(enc.wo);
        let expected = g.matmul(v, wo).unwrap();
        for (a, b) in g.value(agg.features).data().iter().zip(g.value(expected).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_memory_is_an_error() {
        let (s, enc) = setup(2);
        let mut g = Graph::new(&s);
        let q = enc.encode_goal(&mut g, &one_hot(4, 8), [0.0; 4]).unwrap();
        assert!(matches!(
            enc.aggregate(&mut g, q, &TargetMemory::new(4), None),
            Err(MemoryError::EmptyMemory)
        ));
    }

    #[test]
    fn duplicated_memory_leaves_output_unchanged() {
        let (s, enc) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mem = random_memory(5, &mut rng);
        let mut doubled = TargetMemory::new(64);
        for r in mem.rows().iter().chain(mem.rows()) {
            doubled.push(*r);
        }
        let mut g = Graph::new(&s);
        let q = enc.encode_goal(&mut g, &one_hot(1, 8), [0.1, 0.0, 0.5, 0.0]).unwrap();
        let a = enc.aggregate(&mut g, q, &mem, None).unwrap();
        let b = enc.aggregate(&mut g, q, &doubled, None).unwrap();
        for (x, y) in g.value(a.features).data().iter().zip(g.value(b.features).data()) {
            assert!((x - y).abs() < 1e-6);
        }
        for w in &b.weights {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let (s, enc) = setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mem = random_memory(3, &mut rng);
        let err = grad_check(&s, 1e-5, Some((300, 8)), |st| {
            let mut g = Graph::new(st);
            let q = enc.encode_goal(&mut g, &one_hot(3, 8), [0.2, -0.1, 0.25, 1.0]).unwrap();
            let agg = enc.aggregate(&mut g, q, &mem, None).unwrap();
            let sq = g.square(agg.features);
            let loss = g.sum(sq);
            let loss = g.scale(loss, 1e-2);
            let back = g.backward(loss)?;
            Ok((g.scalar(loss), back.params))
        })
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn dropout_is_seeded() {
        let (s, enc) = setup(8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mem = random_memory(6, &mut rng);
        let run = |seed: u64| {
            let mut g = Graph::new(&s);
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let q = enc.encode_goal(&mut g, &one_hot(0, 8), [0.0; 4]).unwrap();
            let agg = enc.aggregate(&mut g, q, &mem, Some((0.1, &mut r))).unwrap();
            g.value(agg.features).data().to_vec()
        };
        assert_eq!(run(1), run(1));
    }
}

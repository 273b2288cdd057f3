//! State fusion and the recurrent actor-critic.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Detection};
use crate::iom::{IomEmbed, EMBED_WIDTH};
use crate::numerics::{softmax_in_place, Graph, ParamId, ParameterStore, Tensor, Var};
use crate::target_memory::{one_hot, MemoryError, TargetEncoder, TargetMemory, MODEL_WIDTH};

/// Model shape and ablation switches. Parameter layout does not depend on
/// the switches, so checkpoints are interchangeable between variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub patch_len: usize,
    /// Obstacle map capacity `e`.
    pub iom_capacity: usize,
    /// Target memory capacity `τ`.
    pub memory_capacity: usize,
    pub state_dim: usize,
    pub attention_dropout: f64,
    /// Replace the obstacle embedding with zeros.
    pub no_iom: bool,
    /// Replace attention with the mean of encoded memory rows.
    pub no_ntma: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            patch_len: 25,
            iom_capacity: 32,
            memory_capacity: 20,
            state_dim: 128,
            attention_dropout: 0.1,
            no_iom: false,
            no_ntma: false,
        }
    }
}

impl ModelConfig {
    pub fn fused_width(&self) -> usize {
        self.patch_len + 5 + EMBED_WIDTH + MODEL_WIDTH
    }
}

/// Everything the network reads at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub patch: Vec<f64>,
    pub detection: Detection,
    /// `e x 10` obstacle matrix.
    pub iom: Tensor,
    pub memory: TargetMemory,
    pub target_class: usize,
    pub pose: [f64; 4],
}

/// Recurrent state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl PolicyState {
    pub fn zeros(dim: usize) -> Self {
        Self {
            h: vec![0.0; dim],
            c: vec![0.0; dim],
        }
    }
}

/// Graph handles produced by one forward step.
pub struct StepVars {
    pub logits: Var,
    pub value: Var,
    pub h: Var,
    pub c: Var,
    pub attention: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Full model: obstacle embedding, target encoder, fusion, LSTM, heads.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub iom: IomEmbed,
    pub target: TargetEncoder,
    pub fuse_w: ParamId,
    pub fuse_b: ParamId,
    pub lstm_wih: ParamId,
    pub lstm_whh: ParamId,
    pub lstm_b: ParamId,
    pub actor_w: ParamId,
    pub actor_b: ParamId,
    pub critic_w: ParamId,
    pub critic_b: ParamId,
}

impl Model {
    /// Registers all parameters in a fresh store, initialized from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> (Self, ParameterStore) {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let iom = IomEmbed::register(&mut store, cfg.iom_capacity, &mut rng);
        let target = TargetEncoder::register(&mut store, cfg.num_classes, &mut rng);
        let s = cfg.state_dim;
        let fuse_w = store.add_weight("fuse.w", cfg.fused_width(), s, 1.0, &mut rng);
        let fuse_b = store.add_bias("fuse.b", s);
        let lstm_wih = store.add_weight("lstm.w_ih", s, 4 * s, 1.0, &mut rng);
        let lstm_whh = store.add_weight("lstm.w_hh", s, 4 * s, 1.0, &mut rng);
        let lstm_b = store.add_bias("lstm.b", 4 * s);
        // Forget-gate bias of one keeps early gradients flowing through time.
        store.value_mut(lstm_b).data_mut()[s..2 * s].fill(1.0);
        let actor_w = store.add_weight("actor.w", s, Action::COUNT, 0.01, &mut rng);
        let actor_b = store.add_bias("actor.b", Action::COUNT);
        let critic_w = store.add_weight("critic.w", s, 1, 1.0, &mut rng);
        let critic_b = store.add_bias("critic.b", 1);
        let model = Self {
            cfg,
            iom,
            target,
            fuse_w,
            fuse_b,
            lstm_wih,
            lstm_whh,
            lstm_b,
            actor_w,
            actor_b,
            critic_w,
            critic_b,
        };
        (model, store)
    }

    /// `s = cat(patch, detection, M, F) W_a + b`.
    pub fn fuse(&self, g: &mut Graph, parts: [Var; 4]) -> Result<Var, MemoryError> {
        let cat = g.concat_cols(&parts)?;
        let (w, b) = (g.param(self.fuse_w), g.param(self.fuse_b));
        Ok(g.linear(cat, w, b)?)
    }

    /// Obstacle feature `M`, zeros when the map is ablated.
    fn obstacle_feature(&self, g: &mut Graph, input: &StepInput) -> Result<Var, MemoryError> {
        if self.cfg.no_iom {
            return Ok(g.row(vec![0.0; EMBED_WIDTH]));
        }
        let m = g.input(input.iom.clone());
        Ok(self.iom.forward(g, m)?)
    }

    /// Orientation feature `F` and attention weights for logging.
    fn orientation_feature(
        &self,
        g: &mut Graph,
        input: &StepInput,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Var, Vec<Vec<f64>>), MemoryError> {
        if input.memory.is_empty() {
            return Ok((g.row(vec![0.0; MODEL_WIDTH]), Vec::new()));
        }
        if self.cfg.no_ntma {
            return Ok((self.target.average(g, &input.memory)?, Vec::new()));
        }
        let goal = one_hot(input.target_class, self.cfg.num_classes);
        let query = self.target.encode_goal(g, &goal, input.pose)?;
        let dropout = rng.map(|r| (self.cfg.attention_dropout, r));
        let agg = self.target.aggregate(g, query, &input.memory, dropout)?;
        Ok((agg.features, agg.weights))
    }

    /// One recurrent step on the tape. `rng` enables attention dropout.
    pub fn forward(
        &self,
        g: &mut Graph,
        input: &StepInput,
        h: Var,
        c: Var,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<StepVars, MemoryError> {
        let patch = g.row(input.patch.clone());
        let det = g.row(input.detection.as_slice().to_vec());
        let m = self.obstacle_feature(g, input)?;
        let (f, attention) = self.orientation_feature(g, input, rng)?;
        let s = self.fuse(g, [patch, det, m, f])?;
        let (wih, whh, b) = (g.param(self.lstm_wih), g.param(self.lstm_whh), g.param(self.lstm_b));
        let hc = g.lstm_cell(s, h, c, wih, whh, b)?;
        let dim = self.cfg.state_dim;
        let h = g.slice_cols(hc, 0, dim)?;
        let c = g.slice_cols(hc, dim, dim)?;
        let (aw, ab) = (g.param(self.actor_w), g.param(self.actor_b));
        let logits = g.linear(h, aw, ab)?;
        let (cw, cb) = (g.param(self.critic_w), g.param(self.critic_b));
        let value = g.linear(h, cw, cb)?;
        g.check()?;
        Ok(StepVars {
            logits,
            value,
            h,
            c,
            attention,
        })
    }

    /// Convenience forward from a detached recurrent state.
    pub fn forward_from(
        &self,
        g: &mut Graph,
        input: &StepInput,
        state: &PolicyState,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<StepVars, MemoryError> {
        let h = g.row(state.h.clone());
        let c = g.row(state.c.clone());
        self.forward(g, input, h, c, rng)
    }
}

/// Chosen action plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub log_prob: f64,
    pub value: f64,
    pub probs: Vec<f64>,
}

/// Picks an action from logits: greedy takes the arg-max (lowest index on
/// ties), sample draws from the softmax with `rng`.
pub fn select_action(logits: &[f64], value: f64, mode: ActMode, rng: &mut dyn RngCore) -> Decision {
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs);
    let index = match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for (i, l) in logits.iter().enumerate() {
                if *l > logits[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        }
    };
    Decision {
        action: Action::from_index(index).expect("six logits"),
        log_prob: probs[index].max(f64::MIN_POSITIVE).ln(),
        value,
        probs,
    }
}

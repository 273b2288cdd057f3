use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{oracle_actions, TrainError};
use crate::env::{Action, EnvConfig, EpisodeSpec, Scene};
use crate::episode::Episode;
use crate::numerics::{Adam, Graph, ParameterStore, Var};
use crate::policy::{Model, PolicyState, StepInput};
use crate::reward::RewardScheme;

/// Behavior-cloning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// One expert demonstration: network inputs with teacher forcing and the
/// expert action at every step.
#[derive(Debug, Clone)]
pub struct Demonstration {
    pub inputs: Vec<StepInput>,
    pub labels: Vec<Action>,
}

/// Rolls the expert through the simulator (noise-free detector), recording
/// what the network would see at each step. The replay must succeed.
pub fn demonstration(
    scene: &Scene,
    spec: &EpisodeSpec,
    cfg: &EnvConfig,
    model: &Model,
) -> Result<Demonstration, TrainError> {
    let actions = oracle_actions(scene, &spec.start, spec.target_class, cfg)?;
    let mut ep = Episode::new(scene, spec, cfg, model.cfg.iom_capacity, model.cfg.memory_capacity);
    let mut inputs = Vec::with_capacity(actions.len());
    for &a in &actions {
        ep.observe(None);
        inputs.push(ep.step_input());
        ep.apply(a, RewardScheme::Rm);
    }
    if !ep.success {
        return Err(TrainError::OracleFailed(spec.scene_id.clone()));
    }
    Ok(Demonstration {
        inputs,
        labels: actions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean per-step cross-entropy before training, then after each epoch.
    pub losses: Vec<f64>,
    /// Fraction of steps where the arg-max action equals the label, after
    /// the last epoch.
    pub accuracy: f64,
    pub steps: usize,
}

/// Builds the tape for a whole demonstration; returns per-step logits.
fn unroll(
    g: &mut Graph,
    model: &Model,
    demo: &Demonstration,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<Var>, TrainError> {
    let zero = PolicyState::zeros(model.cfg.state_dim);
    let mut h = g.row(zero.h);
    let mut c = g.row(zero.c);
    let mut logits = Vec::with_capacity(demo.inputs.len());
    let mut rng = rng;
    for input in &demo.inputs {
        let out = model.forward(
            g,
            input,
            h,
            c,
            rng.as_deref_mut().map(|r| r as &mut dyn rand::RngCore),
        )?;
        h = out.h;
        c = out.c;
        logits.push(out.logits);
    }
    Ok(logits)
}

/// Evaluates mean cross-entropy and accuracy without dropout.
pub fn evaluate_demonstrations(
    model: &Model,
    store: &ParameterStore,
    demos: &[Demonstration],
) -> Result<(f64, f64), TrainError> {
    let (mut loss, mut correct, mut total) = (0.0, 0usize, 0usize);
    for demo in demos {
        let mut g = Graph::new(store);
        let logits = unroll(&mut g, model, demo, None)?;
        for (l, &label) in logits.iter().zip(&demo.labels) {
            let ce = g.cross_entropy(*l, label.index())?;
            loss += g.scalar(ce);
            let row = g.value(*l).data();
            let arg = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            correct += usize::from(arg == label.index());
            total += 1;
        }
    }
    let total_f = total.max(1) as f64;
    Ok((loss / total_f, correct as f64 / total_f))
}

/// Cross-entropy behavior cloning, one Adam update per demonstration with
/// the recurrent state threaded through each episode.
pub fn pretrain(
    cfg: &PretrainConfig,
    model: &Model,
    store: &mut ParameterStore,
    optimizer: &mut Adam,
    demos: &[Demonstration],
) -> Result<PretrainReport, TrainError> {
    if demos.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (initial, mut accuracy) = evaluate_demonstrations(model, store, demos)?;
    let mut losses = vec![initial];
    for _ in 0..cfg.epochs {
        for demo in demos {
            let grads = {
                let mut g = Graph::new(store);
                let logits = unroll(&mut g, model, demo, Some(&mut rng))?;
                let mut terms = Vec::with_capacity(logits.len());
                for (l, &label) in logits.iter().zip(&demo.labels) {
                    terms.push(g.cross_entropy(*l, label.index())?);
                }
                let mut loss = terms[0];
                for &t in &terms[1..] {
                    loss = g.add(loss, t)?;
                }
                let loss = g.scale(loss, 1.0 / terms.len() as f64);
                g.backward(loss)?.params
            };
            optimizer.apply_update(store, cfg.lr, &grads)?;
        }
        let (loss, acc) = evaluate_demonstrations(model, store, demos)?;
        losses.push(loss);
        accuracy = acc;
    }
    Ok(PretrainReport {
        losses,
        accuracy,
        steps: demos.iter().map(|d| d.labels.len()).sum(),
    })
}

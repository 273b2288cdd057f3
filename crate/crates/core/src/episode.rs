//! Episode bookkeeping shared by training, evaluation and replay: the
//! per-episode obstacle map and target memory, reward computation and the
//! step trace.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::env::{
    self, detect, local_patch, Action, AgentPose, Detection, DistanceField, EnvConfig, EpisodeSpec, Scene,
};
use crate::iom::ImplicitObstacleMap;
use crate::numerics::Graph;
use crate::policy::{select_action, ActMode, Model, PolicyState, StepInput};
use crate::numerics::ParameterStore;
use crate::reward::{compute_reward, RewardContext, RewardScheme};
use crate::target_memory::{orientation_feature, pose_features, MemoryError, TargetMemory};

/// One line of an episode trace. Pose fields are the pose at decision time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub x: i32,
    pub y: i32,
    pub yaw: u8,
    pub pitch: i8,
    pub action: Action,
    pub reward: f64,
    pub collided: bool,
    pub conf: f64,
    pub att_weights: Vec<Vec<f64>>,
}

/// Result of applying one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub collided: bool,
    pub done: bool,
    pub success: bool,
}

/// Mutable per-episode state.
#[derive(Debug, Clone)]
pub struct Episode<'s> {
    pub scene: &'s Scene,
    pub spec: EpisodeSpec,
    pub pose: AgentPose,
    pub iom: ImplicitObstacleMap,
    pub memory: TargetMemory,
    pub t: usize,
    pub collided_prev: bool,
    pub success: bool,
    pub done: bool,
    /// Geometric length of successful moves.
    pub path_length: f64,
    pub collisions: usize,
    pub actions: Vec<Action>,
    distances: DistanceField,
    detection: Detection,
    cfg: EnvConfig,
    scale: f64,
}

impl<'s> Episode<'s> {
    pub fn new(
        scene: &'s Scene,
        spec: &EpisodeSpec,
        cfg: &EnvConfig,
        iom_capacity: usize,
        memory_capacity: usize,
    ) -> Self {
        Self {
            scene,
            spec: spec.clone(),
            pose: spec.start,
            iom: ImplicitObstacleMap::new(iom_capacity, spec.start.pos, scene.width(), scene.height()),
            memory: TargetMemory::new(memory_capacity),
            t: 0,
            collided_prev: false,
            success: false,
            done: false,
            path_length: 0.0,
            collisions: 0,
            actions: Vec::new(),
            distances: DistanceField::to_class(scene, spec.target_class, cfg),
            detection: Detection::ZERO,
            cfg: cfg.clone(),
            scale: scene.width().max(scene.height()) as f64,
        }
    }

    pub fn pose_features(&self) -> [f64; 4] {
        pose_features(&self.pose, self.spec.start.pos, self.scale)
    }

    /// Runs the detector at the current pose, stores the detection for the
    /// coming step and adds it to the target memory when non-zero.
    pub fn observe(&mut self, noise: Option<&mut dyn RngCore>) -> Detection {
        let det = detect(self.scene, &self.pose, self.spec.target_class, &self.cfg, noise);
        self.set_detection(det);
        if det.confidence() > 0.0 {
            self.memory.push(orientation_feature(&det, self.pose_features()));
        }
        det
    }

    /// Overrides the decision-time detection without touching memory.
    pub fn set_detection(&mut self, det: Detection) {
        self.detection = det;
    }

    pub fn detection(&self) -> Detection {
        self.detection
    }

    /// Network input for the current step.
    pub fn step_input(&self) -> StepInput {
        StepInput {
            patch: local_patch(self.scene, &self.pose, self.cfg.patch_radius),
            detection: self.detection,
            iom: self.iom.to_matrix(),
            memory: self.memory.clone(),
            target_class: self.spec.target_class,
            pose: self.pose_features(),
        }
    }

    /// Applies `action`, updates the obstacle map and returns the reward.
    pub fn apply(&mut self, action: Action, scheme: RewardScheme) -> StepOutcome {
        let pre = self.pose;
        let (post, collided) = env::step(self.scene, pre, action, &self.cfg);
        if action == Action::MoveAhead {
            self.iom.record_outcome(pre.pos, pre.yaw, !collided, post.pos, self.t);
        }
        let moved = action == Action::MoveAhead && !collided;
        let done = action == Action::Done;
        let success = done
            && env::success(self.scene, &post, self.spec.target_class, &self.detection, true, &self.cfg);
        let ctx = RewardContext {
            collided_now: collided,
            collided_prev: self.collided_prev,
            moved_forward: moved,
            target_found_now: self.detection.confidence() >= self.cfg.confidence_threshold,
            dist_now: self.distances.at(post.pos),
            dist_prev: self.distances.at(pre.pos),
            success_now: success,
            pre: pre.pos,
            post: post.pos,
        };
        let reward = compute_reward(&ctx, scheme);
        if moved {
            self.path_length += env::heading_length(pre.yaw);
        }
        if collided {
            self.collisions += 1;
        }
        self.actions.push(action);
        self.pose = post;
        self.collided_prev = collided;
        self.t += 1;
        self.success = success;
        self.done = done || self.t >= self.cfg.max_steps;
        StepOutcome {
            reward,
            collided,
            done: self.done,
            success,
        }
    }
}

/// Summary of a finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub spec: EpisodeSpec,
    pub success: bool,
    pub path_length: f64,
    pub collisions: usize,
    pub actions: Vec<Action>,
    pub total_reward: f64,
    pub trace: Vec<TraceStep>,
}

/// Runs one episode with the model and no learning.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    model: &Model,
    store: &ParameterStore,
    scene: &Scene,
    spec: &EpisodeSpec,
    cfg: &EnvConfig,
    scheme: RewardScheme,
    mode: ActMode,
    noisy: bool,
    rng: &mut dyn RngCore,
) -> Result<EpisodeRecord, MemoryError> {
    let mut ep = Episode::new(scene, spec, cfg, model.cfg.iom_capacity, model.cfg.memory_capacity);
    let mut state = PolicyState::zeros(model.cfg.state_dim);
    let mut trace = Vec::new();
    let mut total = 0.0;
    while !ep.done {
        let det = if noisy { ep.observe(Some(&mut *rng)) } else { ep.observe(None) };
        let input = ep.step_input();
        let mut g = Graph::new(store);
        let out = model.forward_from(&mut g, &input, &state, None)?;
        let decision = select_action(g.value(out.logits).data(), g.scalar(out.value), mode, &mut *rng);
        state = PolicyState {
            h: g.value(out.h).data().to_vec(),
            c: g.value(out.c).data().to_vec(),
        };
        let pre = ep.pose;
        let t = ep.t;
        let o = ep.apply(decision.action, scheme);
        total += o.reward;
        trace.push(TraceStep {
            t,
            x: pre.pos.x,
            y: pre.pos.y,
            yaw: pre.yaw,
            pitch: pre.pitch,
            action: decision.action,
            reward: o.reward,
            collided: o.collided,
            conf: det.confidence(),
            att_weights: out.attention,
        });
    }
    Ok(EpisodeRecord {
        spec: spec.clone(),
        success: ep.success,
        path_length: ep.path_length,
        collisions: ep.collisions,
        actions: ep.actions,
        total_reward: total,
        trace,
    })
}

/// Writes a trace as JSON lines.
pub fn write_trace(path: &Path, steps: &[TraceStep]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in steps {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_trace(path: &Path) -> std::io::Result<Vec<TraceStep>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    file.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| {
            let l = l?;
            serde_json::from_str(&l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}

/// Mismatch found while replaying a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMismatch {
    pub t: usize,
    pub field: &'static str,
    pub stored: String,
    pub replayed: String,
}

/// Re-executes the stored actions and checks poses, collisions and rewards
/// against the trace. The stored confidence drives the success and
/// "target found" predicates; when `check_detection` is set it must also
/// equal the noise-free detector output.
pub fn replay_trace(
    scene: &Scene,
    spec: &EpisodeSpec,
    cfg: &EnvConfig,
    scheme: RewardScheme,
    steps: &[TraceStep],
    check_detection: bool,
) -> Result<EpisodeRecord, ReplayMismatch> {
    let mut ep = Episode::new(scene, spec, cfg, 1, 1);
    let mut total = 0.0;
    for s in steps {
        let mismatch = |field: &'static str, stored: String, replayed: String| ReplayMismatch {
            t: s.t,
            field,
            stored,
            replayed,
        };
        let pose = (ep.pose.pos.x, ep.pose.pos.y, ep.pose.yaw, ep.pose.pitch);
        if pose != (s.x, s.y, s.yaw, s.pitch) || ep.t != s.t {
            return Err(mismatch(
                "pose",
                format!("{:?}", (s.t, s.x, s.y, s.yaw, s.pitch)),
                format!("{:?}", (ep.t, pose.0, pose.1, pose.2, pose.3)),
            ));
        }
        let fresh = detect(scene, &ep.pose, spec.target_class, cfg, None);
        if check_detection && fresh.confidence() != s.conf {
            return Err(mismatch("conf", s.conf.to_string(), fresh.confidence().to_string()));
        }
        let mut det = fresh;
        det.0[4] = s.conf;
        ep.set_detection(det);
        let o = ep.apply(s.action, scheme);
        if o.collided != s.collided {
            return Err(mismatch("collided", s.collided.to_string(), o.collided.to_string()));
        }
        if o.reward.to_bits() != s.reward.to_bits() {
            return Err(mismatch("reward", s.reward.to_string(), o.reward.to_string()));
        }
        total += o.reward;
    }
    Ok(EpisodeRecord {
        spec: spec.clone(),
        success: ep.success,
        path_length: ep.path_length,
        collisions: ep.collisions,
        actions: ep.actions,
        total_reward: total,
        trace: steps.to_vec(),
    })
}

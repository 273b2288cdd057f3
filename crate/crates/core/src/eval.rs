//! Greedy evaluation and navigation metrics (SR, SPL, SAE, collisions).

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{sample_episode, shortest_path_length, Action, EnvConfig, EnvError, EpisodeSpec, Scene};
use crate::episode::{run_episode, TraceStep};
use crate::numerics::ParameterStore;
use crate::policy::{ActMode, Model};
use crate::reward::RewardScheme;
use crate::target_memory::MemoryError;

/// Episodes with at least this optimal length form the long-path subset.
pub const LONG_PATH: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scene_id: String,
    pub success: bool,
    /// Geometric length of moves that changed the coordinate.
    pub path_length: f64,
    pub optimal_length: f64,
    pub actions: Vec<Action>,
    pub collisions: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceStep>,
}

impl EpisodeResult {
    /// Grouping key: scene id up to the first `_`.
    pub fn family(&self) -> &str {
        self.scene_id.split('_').next().unwrap_or(&self.scene_id)
    }

    fn spl_term(&self) -> f64 {
        if !self.success {
            return 0.0;
        }
        let denom = self.path_length.max(self.optimal_length);
        if denom == 0.0 {
            1.0
        } else {
            self.optimal_length / denom
        }
    }

    fn sae_term(&self) -> f64 {
        if !self.success || self.actions.is_empty() {
            return 0.0;
        }
        let forward = self.actions.iter().filter(|a| **a == Action::MoveAhead).count();
        forward as f64 / self.actions.len() as f64
    }
}

fn mean(results: &[EpisodeResult], f: impl Fn(&EpisodeResult) -> f64) -> f64 {
    if results.is_empty() {
        0.0
    } else {
        results.iter().map(f).sum::<f64>() / results.len() as f64
    }
}

pub fn sr(results: &[EpisodeResult]) -> f64 {
    mean(results, |r| f64::from(u8::from(r.success)))
}

/// `(1/K) Σ Suc_i · L*_i / max(L_i, L*_i)`
pub fn spl(results: &[EpisodeResult]) -> f64 {
    mean(results, EpisodeResult::spl_term)
}

/// `(1/K) Σ Suc_i · #MoveAhead_i / #actions_i`
pub fn sae(results: &[EpisodeResult]) -> f64 {
    mean(results, EpisodeResult::sae_term)
}

/// Mean collisions per episode, keyed by scene family.
pub fn collision_stats(results: &[EpisodeResult]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in results {
        let e = acc.entry(r.family().to_string()).or_default();
        e.0 += r.collisions;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (c, n))| (k, c as f64 / n as f64))
        .collect()
}

pub fn collisions_csv(stats: &BTreeMap<String, f64>) -> String {
    let mut out = String::from("group,mean_collisions\n");
    for (k, v) in stats {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sr_all: f64,
    pub spl_all: f64,
    pub sae_all: f64,
    pub sr_ge5: f64,
    pub spl_ge5: f64,
    pub sae_ge5: f64,
    pub collisions_by_group: BTreeMap<String, f64>,
    pub skipped: usize,
}

impl MetricsReport {
    pub fn from_results(results: &[EpisodeResult], skipped: usize) -> Self {
        let long: Vec<EpisodeResult> = results
            .iter()
            .filter(|r| r.optimal_length >= LONG_PATH)
            .cloned()
            .collect();
        Self {
            sr_all: sr(results),
            spl_all: spl(results),
            sae_all: sae(results),
            sr_ge5: sr(&long),
            spl_ge5: spl(&long),
            sae_ge5: sae(&long),
            collisions_by_group: collision_stats(results),
            skipped,
        }
    }

    /// Mean collisions per episode over all groups, weighting groups equally.
    pub fn mean_collisions(&self) -> f64 {
        if self.collisions_by_group.is_empty() {
            0.0
        } else {
            self.collisions_by_group.values().sum::<f64>() / self.collisions_by_group.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub repetitions: usize,
    /// Detector noise during evaluation; off for reproducible metrics.
    pub noisy: bool,
    pub seed: u64,
    /// Keep per-step traces in the results.
    pub keep_traces: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            repetitions: 3,
            noisy: false,
            seed: 0,
            keep_traces: true,
        }
    }
}

/// Draws `per_scene` episode specs from each scene, deterministically.
pub fn sample_specs(
    scenes: &[Scene],
    per_scene: usize,
    seed: u64,
    cfg: &EnvConfig,
) -> Result<Vec<EpisodeSpec>, EnvError> {
    let mut specs = Vec::with_capacity(scenes.len() * per_scene);
    for (i, scene) in scenes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        for _ in 0..per_scene {
            specs.push(sample_episode(scene, cfg, &mut rng)?);
        }
    }
    Ok(specs)
}

/// Greedy evaluation. Specs whose scene is missing or whose target is
/// unreachable are skipped and counted.
pub fn evaluate(
    model: &Model,
    store: &ParameterStore,
    scenes: &[Scene],
    specs: &[EpisodeSpec],
    env_cfg: &EnvConfig,
    eval_cfg: &EvalConfig,
    scheme: RewardScheme,
) -> Result<(MetricsReport, Vec<EpisodeResult>), MemoryError> {
    let mut results = Vec::new();
    let mut skipped = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(eval_cfg.seed);
    for spec in specs {
        let Some(scene) = scenes.iter().find(|s| s.scene_id() == spec.scene_id) else {
            skipped += 1;
            continue;
        };
        let Ok(optimal) = shortest_path_length(scene, &spec.start, spec.target_class, env_cfg) else {
            skipped += 1;
            continue;
        };
        for _ in 0..eval_cfg.repetitions.max(1) {
            let rec = run_episode(
                model,
                store,
                scene,
                spec,
                env_cfg,
                scheme,
                ActMode::Greedy,
                eval_cfg.noisy,
                &mut rng as &mut dyn RngCore,
            )?;
            results.push(EpisodeResult {
                scene_id: spec.scene_id.clone(),
                success: rec.success,
                path_length: rec.path_length,
                optimal_length: optimal,
                actions: rec.actions,
                collisions: rec.collisions,
                trace: if eval_cfg.keep_traces { rec.trace } else { Vec::new() },
            });
        }
    }
    Ok((MetricsReport::from_results(&results, skipped), results))
}

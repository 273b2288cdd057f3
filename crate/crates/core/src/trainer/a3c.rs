use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{discounted_returns, TrainConfig, TrainError};
use crate::env::{sample_episode, EnvConfig, Scene};
use crate::episode::Episode;
use crate::numerics::{Adam, Gradients, Graph, ParameterStore, Var};
use crate::policy::{select_action, ActMode, Model, PolicyState};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub worker: usize,
    pub reward: f64,
    pub steps: usize,
    pub success: bool,
    pub collisions: usize,
    /// Parameter version the final segment was rolled out with.
    pub version: u64,
    /// Rewards of the final segment and the returns the trainer used.
    #[serde(skip)]
    pub tail_rewards: Vec<f64>,
    #[serde(skip)]
    pub tail_returns: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub logs: Vec<EpisodeLog>,
    pub updates: u64,
    pub skipped_updates: usize,
}

/// Output and optional persistence hooks for a training run.
#[derive(Default)]
pub struct TrainIo<'a> {
    pub log: Option<&'a mut dyn Write>,
    /// Checkpoint file written every `checkpoint_every` episodes.
    pub checkpoint: Option<&'a Path>,
    /// Episodes already completed by a run being resumed.
    pub start_episode: usize,
}

struct Segment {
    grads: Gradients,
    version: u64,
    finished: Option<EpisodeLog>,
}

struct Worker<'s> {
    id: usize,
    workers: usize,
    rng: ChaCha8Rng,
    scenes: &'s [Scene],
    started: usize,
    episode: Option<Episode<'s>>,
    state: PolicyState,
    /// The current pose was already observed by a bootstrap pass.
    observed: bool,
    reward: f64,
}

impl<'s> Worker<'s> {
    fn new(id: usize, cfg: &TrainConfig, start_episode: usize, scenes: &'s [Scene], state_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (start_episode as u64).rotate_left(32));
        rng.set_stream(id as u64 + 1);
        Self {
            id,
            workers: cfg.workers.max(1),
            rng,
            scenes,
            started: start_episode / cfg.workers.max(1),
            episode: None,
            state: PolicyState::zeros(state_dim),
            observed: false,
            reward: 0.0,
        }
    }

    fn begin(&mut self, env_cfg: &EnvConfig, model: &Model) -> Result<(), TrainError> {
        let scene = &self.scenes[(self.id + self.started * self.workers) % self.scenes.len()];
        self.started += 1;
        let spec = sample_episode(scene, env_cfg, &mut self.rng)?;
        self.episode = Some(Episode::new(
            scene,
            &spec,
            env_cfg,
            model.cfg.iom_capacity,
            model.cfg.memory_capacity,
        ));
        self.state = PolicyState::zeros(model.cfg.state_dim);
        self.observed = false;
        self.reward = 0.0;
        Ok(())
    }

    /// Rolls out up to `n_step` steps with `store` and returns the
    /// actor-critic gradient for them.
    fn run_segment(
        &mut self,
        cfg: &TrainConfig,
        env_cfg: &EnvConfig,
        model: &Model,
        store: &ParameterStore,
    ) -> Result<Segment, TrainError> {
        if self.episode.is_none() {
            self.begin(env_cfg, model)?;
        }
        let version = store.version();
        let mut g = Graph::new(store);
        let mut h = g.row(self.state.h.clone());
        let mut c = g.row(self.state.c.clone());
        let mut steps: Vec<(Var, Var, usize)> = Vec::with_capacity(cfg.n_step);
        let mut rewards = Vec::with_capacity(cfg.n_step);
        let ep = self.episode.as_mut().expect("episode started");
        for _ in 0..cfg.n_step {
            if !self.observed {
                if cfg.detector_noise {
                    ep.observe(Some(&mut self.rng));
                } else {
                    ep.observe(None);
                }
            }
            self.observed = false;
            let input = ep.step_input();
            let out = model.forward(&mut g, &input, h, c, Some(&mut self.rng))?;
            let d = select_action(g.value(out.logits).data(), 0.0, ActMode::Sample, &mut self.rng);
            let o = ep.apply(d.action, cfg.scheme);
            steps.push((out.logits, out.value, d.action.index()));
            rewards.push(o.reward);
            self.reward += o.reward;
            h = out.h;
            c = out.c;
            if o.done {
                break;
            }
        }
        self.state = PolicyState {
            h: g.value(h).data().to_vec(),
            c: g.value(c).data().to_vec(),
        };
        let bootstrap = if ep.done {
            0.0
        } else {
            if cfg.detector_noise {
                ep.observe(Some(&mut self.rng));
            } else {
                ep.observe(None);
            }
            self.observed = true;
            let input = ep.step_input();
            let out = model.forward(&mut g, &input, h, c, None)?;
            g.scalar(out.value)
        };
        let returns = discounted_returns(&rewards, bootstrap, cfg.gamma);
        let mut terms = Vec::with_capacity(steps.len() * 3);
        for (&(logits, value, action), &ret) in steps.iter().zip(&returns) {
            let advantage = ret - g.scalar(value);
            let logp = g.log_softmax_rows(logits);
            let probs = g.softmax_rows(logits);
            let chosen = g.pick(logp, action)?;
            terms.push(g.scale(chosen, -advantage));
            let plogp = g.mul(probs, logp)?;
            let neg_entropy = g.sum(plogp);
            terms.push(g.scale(neg_entropy, cfg.entropy_coef));
            let err = g.add_scalar(value, -ret);
            let sq = g.square(err);
            let sq = g.sum(sq);
            terms.push(g.scale(sq, cfg.value_coef));
        }
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = g.add(loss, t)?;
        }
        let grads = g.backward(loss)?.params;
        let finished = if ep.done {
            let log = EpisodeLog {
                episode: 0,
                worker: self.id,
                reward: self.reward,
                steps: ep.t,
                success: ep.success,
                collisions: ep.collisions,
                version,
                tail_rewards: rewards,
                tail_returns: returns,
            };
            self.episode = None;
            Some(log)
        } else {
            None
        };
        Ok(Segment {
            grads,
            version,
            finished,
        })
    }
}

struct Recorder<'a, 'io> {
    cfg: &'a TrainConfig,
    io: &'a mut TrainIo<'io>,
    report: TrainReport,
    done: usize,
}

impl Recorder<'_, '_> {
    fn finished(&self) -> bool {
        self.io.start_episode + self.done >= self.cfg.episodes
    }

    fn record(
        &mut self,
        mut log: EpisodeLog,
        store: &ParameterStore,
        optimizer: &Adam,
    ) -> Result<(), TrainError> {
        if self.finished() {
            return Ok(());
        }
        log.episode = self.io.start_episode + self.done;
        self.done += 1;
        if let Some(w) = self.io.log.as_mut() {
            serde_json::to_writer(&mut **w, &log).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        self.report.logs.push(log);
        let total = self.io.start_episode + self.done;
        if let Some(path) = self.io.checkpoint {
            if self.cfg.checkpoint_every > 0 && total.is_multiple_of(self.cfg.checkpoint_every) {
                store.save_checkpoint(path, Some(optimizer.state()))?;
                let progress = serde_json::json!({ "episodes": total });
                std::fs::write(path.with_extension("progress.json"), progress.to_string())?;
            }
        }
        Ok(())
    }

    fn apply(&mut self, optimizer: &mut Adam, store: &mut ParameterStore, grads: &Gradients) {
        match optimizer.apply_update(store, self.cfg.lr, grads) {
            Ok(()) => self.report.updates += 1,
            Err(e) => {
                eprintln!("skipping update: {e}");
                self.report.skipped_updates += 1;
            }
        }
    }
}

/// Actor-critic training. Each worker rolls `n_step`-step segments against
/// a parameter snapshot and turns them into one gradient; a single applier
/// serializes the Adam updates. With `workers == 1` or `synchronous` the
/// run is single-threaded and deterministic given the seed.
pub fn train_rl(
    cfg: &TrainConfig,
    env_cfg: &EnvConfig,
    model: &Model,
    store: &mut ParameterStore,
    optimizer: &mut Adam,
    scenes: &[Scene],
    io: &mut TrainIo<'_>,
) -> Result<TrainReport, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let workers = cfg.workers.max(1);
    let mut rec = Recorder {
        cfg,
        io,
        report: TrainReport::default(),
        done: 0,
    };
    if workers == 1 || cfg.synchronous {
        let mut pool: Vec<Worker> = (0..workers)
            .map(|i| Worker::new(i, cfg, rec.io.start_episode, scenes, model.cfg.state_dim))
            .collect();
        while !rec.finished() {
            let mut total = Gradients::zeros_like(store);
            let mut finished = Vec::new();
            for w in &mut pool {
                let seg = w.run_segment(cfg, env_cfg, model, store)?;
                debug_assert_eq!(seg.version, store.version());
                total.add_assign(&seg.grads);
                finished.extend(seg.finished);
            }
            for log in finished {
                rec.record(log, store, optimizer)?;
            }
            rec.apply(optimizer, store, &total);
        }
        return Ok(rec.report);
    }

    let shared = RwLock::new(Arc::new(store.clone()));
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::sync_channel::<Result<Segment, TrainError>>(workers);
    let start_episode = rec.io.start_episode;
    std::thread::scope(|s| -> Result<(), TrainError> {
        for id in 0..workers {
            let tx = tx.clone();
            let (shared, stop) = (&shared, &stop);
            s.spawn(move || {
                let mut w = Worker::new(id, cfg, start_episode, scenes, model.cfg.state_dim);
                while !stop.load(Ordering::Relaxed) {
                    let snapshot = Arc::clone(&shared.read().expect("snapshot lock"));
                    let seg = w.run_segment(cfg, env_cfg, model, &snapshot);
                    let failed = seg.is_err();
                    if tx.send(seg).is_err() || failed {
                        break;
                    }
                }
            });
        }
        drop(tx);
        let mut outcome = Ok(());
        for seg in rx.iter() {
            let seg = match seg {
                Ok(seg) => seg,
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            };
            if let Some(log) = seg.finished {
                rec.record(log, store, optimizer)?;
            }
            rec.apply(optimizer, store, &seg.grads);
            *shared.write().expect("snapshot lock") = Arc::new(store.clone());
            if rec.finished() {
                break;
            }
        }
        stop.store(true, Ordering::Relaxed);
        // Unblock workers waiting to send.
        drop(rx);
        outcome
    })?;
    Ok(rec.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{gen_scenes, GenParams};
    use crate::policy::ModelConfig;

    fn small() -> (Vec<Scene>, EnvConfig, Model, ParameterStore) {
        let env_cfg = EnvConfig::default();
        let p = GenParams {
            width: 7,
            height: 7,
            obstacle_density: 0.1,
            ..GenParams::default()
        };
        let scenes = gen_scenes(&p, &env_cfg, "tiny", "train", 3, 2).unwrap();
        let (model, store) = Model::new(
            ModelConfig {
                state_dim: 16,
                ..ModelConfig::default()
            },
            1,
        );
        (scenes, env_cfg, model, store)
    }

    #[test]
    fn single_worker_runs_are_identical() {
        let (scenes, env_cfg, model, store) = small();
        let cfg = TrainConfig {
            workers: 1,
            episodes: 6,
            seed: 7,
            ..TrainConfig::default()
        };
        let run = || {
            let mut st = store.clone();
            let mut opt = Adam::new(&st);
            let mut buf = Vec::new();
            let mut io = TrainIo {
                log: Some(&mut buf),
                ..TrainIo::default()
            };
            let rep = train_rl(&cfg, &env_cfg, &model, &mut st, &mut opt, &scenes, &mut io).unwrap();
            assert_eq!(rep.logs.len(), 6);
            (buf, st.flat_get(0))
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa.to_bits(), pb.to_bits());
    }

    #[test]
    fn tail_returns_match_discounted_sums() {
        let (scenes, env_cfg, model, mut store) = small();
        let cfg = TrainConfig {
            workers: 1,
            episodes: 4,
            ..TrainConfig::default()
        };
        let mut opt = Adam::new(&store);
        let rep = train_rl(&cfg, &env_cfg, &model, &mut store, &mut opt, &scenes, &mut TrainIo::default()).unwrap();
        for log in &rep.logs {
            for (i, r) in log.tail_returns.iter().enumerate() {
                let direct: f64 = log.tail_rewards[i..]
                    .iter()
                    .enumerate()
                    .map(|(k, x)| cfg.gamma.powi(k as i32) * x)
                    .sum();
                assert!((r - direct).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn async_workers_finish_requested_episodes() {
        let (scenes, env_cfg, model, mut store) = small();
        let cfg = TrainConfig {
            workers: 3,
            episodes: 5,
            ..TrainConfig::default()
        };
        let mut opt = Adam::new(&store);
        let before = store.version();
        let rep = train_rl(&cfg, &env_cfg, &model, &mut store, &mut opt, &scenes, &mut TrainIo::default()).unwrap();
        assert_eq!(rep.logs.len(), 5);
        assert!(store.version() > before);
        let ids: Vec<usize> = rep.logs.iter().map(|l| l.episode).collect();
        assert_eq!(ids, (0..5).collect::<Vec<_>>());
    }
}

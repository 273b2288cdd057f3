use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use iomnav::ablation::{run_variant, summarize, Variant, VariantRun};
use iomnav::config::RunConfig;
use iomnav::env::{self, load_scene, load_scene_dir, save_scene, shortest_path_length, EpisodeSpec, Scene};
use iomnav::episode::{read_trace, replay_trace, write_trace, Episode};
use iomnav::eval::{collisions_csv, evaluate, sample_specs, EpisodeResult, MetricsReport};
use iomnav::numerics::{Adam, AdamState, Graph, ParameterStore};
use iomnav::policy::{select_action, ActMode, Model, PolicyState};
use iomnav::reward::RewardScheme;
use iomnav::trainer::{demonstration, pretrain as run_pretrain, train_rl, TrainIo};

use crate::{Ablations, Common};

const SPLITS: [&str; 3] = ["train", "val", "test"];
const CHECKPOINT: &str = "model.ckpt.json";

/// Loads the config file (or `fallback/config.toml`, or defaults) and
/// applies command-line overrides.
fn load_config(common: &Common, fallback: Option<&Path>) -> Result<RunConfig> {
    let path = common
        .config
        .clone()
        .or_else(|| fallback.map(|d| d.join("config.toml")).filter(|p| p.exists()));
    let mut cfg = match path {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(s) = &common.scenes {
        cfg.paths.scenes = s.clone();
    }
    Ok(cfg.resolved()?)
}

fn apply_ablations(cfg: &mut RunConfig, a: &Ablations) -> Result<()> {
    cfg.model.no_iom |= a.no_iom;
    cfg.model.no_ntma |= a.no_ntma;
    if let Some(s) = &a.scheme {
        cfg.train.scheme = s.parse().map_err(|e: String| anyhow!(e))?;
    }
    Ok(())
}

fn load_split(cfg: &RunConfig, split: &str) -> Result<Vec<Scene>> {
    let dir = cfg.paths.scenes.join(split);
    let scenes = load_scene_dir(&dir, cfg.env.num_classes)
        .with_context(|| format!("loading scenes from {}", dir.display()))?;
    if scenes.is_empty() {
        bail!("no scenes found in {}", dir.display());
    }
    Ok(scenes)
}

fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(Model, ParameterStore, Option<AdamState>)> {
    let (model, mut store) = Model::new(cfg.model.clone(), cfg.seed);
    let mut adam = None;
    if let Some(path) = checkpoint {
        adam = store
            .load_checkpoint(path)
            .with_context(|| format!("loading checkpoint {}", path.display()))?;
    }
    Ok((model, store, adam))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn gen_scenes(common: &Common, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(common, None)?;
    let root = out.unwrap_or_else(|| cfg.paths.scenes.clone());
    let counts = [cfg.corpus.train, cfg.corpus.val, cfg.corpus.test];
    let mut total = 0;
    for (fi, family) in cfg.corpus.families.iter().enumerate() {
        let params = cfg.corpus.gen_params(family);
        for (si, (split, count)) in SPLITS.iter().zip(counts).enumerate() {
            let dir = root.join(split);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let seed = cfg.seed ^ ((fi as u64) << 40) ^ ((si as u64) << 56);
            let scenes = env::gen_scenes(&params, &cfg.env, &family.name, split, seed, count)
                .with_context(|| format!("generating family {}", family.name))?;
            for s in &scenes {
                save_scene(s, &dir.join(format!("{}.json", s.scene_id())))?;
            }
            total += scenes.len();
        }
    }
    let mut resolved = cfg.clone();
    resolved.paths.scenes = root.clone();
    resolved.write_beside(&root)?;
    println!("wrote {total} scenes to {}", root.display());
    Ok(())
}

pub fn pretrain(common: &Common, ablations: &Ablations, out: &Path, epochs: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common, None)?;
    apply_ablations(&mut cfg, ablations)?;
    if let Some(e) = epochs {
        cfg.pretrain.epochs = e;
    }
    let scenes = load_split(&cfg, "train")?;
    let (model, mut store, _) = load_model(&cfg, None)?;
    let specs = sample_specs(&scenes, cfg.data.demos_per_scene, cfg.seed, &cfg.env)?;
    let demos = specs
        .iter()
        .map(|spec| {
            let scene = find_scene(&scenes, spec)?;
            Ok(demonstration(scene, spec, &cfg.env, &model)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut optimizer = Adam::new(&store);
    let report = run_pretrain(&cfg.pretrain, &model, &mut store, &mut optimizer, &demos)?;
    fs::create_dir_all(out)?;
    store.save_checkpoint(&out.join(CHECKPOINT), None)?;
    write_json(&out.join("pretrain_report.json"), &report)?;
    cfg.write_beside(out)?;
    println!(
        "pretrained on {} demonstrations ({} steps): loss {:.4} -> {:.4}, accuracy {:.3}",
        demos.len(),
        report.steps,
        report.losses[0],
        report.losses[report.losses.len() - 1],
        report.accuracy
    );
    Ok(())
}

fn find_scene<'a>(scenes: &'a [Scene], spec: &EpisodeSpec) -> Result<&'a Scene> {
    scenes
        .iter()
        .find(|s| s.scene_id() == spec.scene_id)
        .ok_or_else(|| anyhow!("scene {} not found", spec.scene_id))
}

#[derive(Serialize, Deserialize)]
struct Progress {
    episodes: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    common: &Common,
    ablations: &Ablations,
    out: &Path,
    init: Option<PathBuf>,
    workers: Option<usize>,
    episodes: Option<usize>,
    resume: bool,
) -> Result<()> {
    let mut cfg = load_config(common, None)?;
    apply_ablations(&mut cfg, ablations)?;
    if let Some(w) = workers {
        cfg.train.workers = w;
    }
    if let Some(e) = episodes {
        cfg.train.episodes = e;
    }
    let cfg = cfg.resolved()?;
    let scenes = load_split(&cfg, "train")?;
    fs::create_dir_all(out)?;
    let ckpt = out.join(CHECKPOINT);
    let progress_path = ckpt.with_extension("progress.json");
    let (start, from) = if resume && ckpt.exists() {
        let p: Progress = serde_json::from_str(
            &fs::read_to_string(&progress_path)
                .with_context(|| format!("reading {}", progress_path.display()))?,
        )?;
        (p.episodes, Some(ckpt.clone()))
    } else {
        (0, init)
    };
    let (model, mut store, adam) = load_model(&cfg, from.as_deref())?;
    let mut optimizer = Adam::new(&store);
    if resume {
        if let Some(state) = adam {
            optimizer.restore(state)?;
        }
    }
    let log_path = out.join("train_log.jsonl");
    let log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume)
        .truncate(!resume)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(log_file);
    cfg.write_beside(out)?;
    let report = {
        let mut io = TrainIo {
            log: Some(&mut log),
            checkpoint: Some(&ckpt),
            start_episode: start,
        };
        train_rl(&cfg.train, &cfg.env, &model, &mut store, &mut optimizer, &scenes, &mut io)?
    };
    log.flush()?;
    store.save_checkpoint(&ckpt, Some(optimizer.state()))?;
    let done = start + report.logs.len();
    fs::write(&progress_path, serde_json::to_string(&Progress { episodes: done })?)?;
    let tail = report.logs.len().min(500);
    let recent = &report.logs[report.logs.len() - tail..];
    let sr = recent.iter().filter(|l| l.success).count() as f64 / tail.max(1) as f64;
    println!(
        "trained {} episodes ({} updates, {} skipped); success rate over last {tail}: {sr:.3}",
        report.logs.len(),
        report.updates,
        report.skipped_updates
    );
    Ok(())
}

/// One evaluated episode as listed in `episodes.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    index: usize,
    /// Trace file, relative to the index file.
    trace: String,
    scene_path: PathBuf,
    spec: EpisodeSpec,
    scheme: RewardScheme,
    noisy: bool,
    no_iom: bool,
    no_ntma: bool,
    success: bool,
    path_length: f64,
    optimal_length: f64,
    collisions: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    common: &Common,
    ablations: &Ablations,
    checkpoint: &Path,
    out: &Path,
    split: &str,
    repetitions: Option<usize>,
    noisy: bool,
) -> Result<()> {
    let mut cfg = load_config(common, None)?;
    apply_ablations(&mut cfg, ablations)?;
    if let Some(r) = repetitions {
        cfg.eval.repetitions = r;
    }
    cfg.eval.noisy |= noisy;
    cfg.eval.keep_traces = true;
    let scenes = load_split(&cfg, split)?;
    let (model, store, _) = load_model(&cfg, Some(checkpoint))?;
    let specs = sample_specs(&scenes, cfg.data.eval_per_scene, cfg.seed, &cfg.env)?;
    let (metrics, results) = evaluate(&model, &store, &scenes, &specs, &cfg.env, &cfg.eval, cfg.train.scheme)?;
    // evaluate() skips specs with a missing scene or unreachable target and
    // runs the rest `repetitions` times each, in order.
    let evaluated: Vec<&EpisodeSpec> = specs
        .iter()
        .filter(|spec| {
            find_scene(&scenes, spec)
                .is_ok_and(|s| shortest_path_length(s, &spec.start, spec.target_class, &cfg.env).is_ok())
        })
        .flat_map(|spec| std::iter::repeat_n(spec, cfg.eval.repetitions.max(1)))
        .collect();
    let traces = out.join("traces");
    fs::create_dir_all(&traces)?;
    let mut index = BufWriter::new(File::create(out.join("episodes.jsonl"))?);
    for (i, r) in results.iter().enumerate() {
        let name = format!("traces/{i:05}.jsonl");
        write_trace(&out.join(&name), &r.trace)?;
        let scene_path = cfg.paths.scenes.join(split).join(format!("{}.json", r.scene_id));
        let spec = evaluated[i].clone();
        let entry = IndexEntry {
            index: i,
            trace: name,
            scene_path,
            spec,
            scheme: cfg.train.scheme,
            noisy: cfg.eval.noisy,
            no_iom: cfg.model.no_iom,
            no_ntma: cfg.model.no_ntma,
            success: r.success,
            path_length: r.path_length,
            optimal_length: r.optimal_length,
            collisions: r.collisions,
        };
        serde_json::to_writer(&mut index, &entry)?;
        index.write_all(b"\n")?;
    }
    index.flush()?;
    write_json(&out.join("metrics.json"), &metrics)?;
    fs::write(out.join("collisions.csv"), collisions_csv(&metrics.collisions_by_group))?;
    cfg.write_beside(out)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

pub fn ablate(common: &Common, out: &Path, seeds: Option<Vec<u64>>, episodes: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common, None)?;
    if let Some(s) = seeds {
        cfg.ablation.seeds = s;
    }
    if let Some(e) = episodes {
        cfg.train.episodes = e;
    }
    fs::create_dir_all(out)?;
    cfg.write_beside(out)?;
    let protocol = cfg.protocol();
    let mut runs_file = BufWriter::new(File::create(out.join("runs.jsonl"))?);
    let mut rows = Vec::new();
    for variant in Variant::grid() {
        let mut runs: Vec<VariantRun> = Vec::new();
        for &seed in &cfg.ablation.seeds {
            let run = run_variant(&protocol, &cfg.env, &cfg.model, variant, seed)?;
            serde_json::to_writer(&mut runs_file, &run)?;
            runs_file.write_all(b"\n")?;
            runs_file.flush()?;
            runs.push(run);
        }
        let row = summarize(variant, &runs);
        println!(
            "{:<18} SR {:.3}  SPL {:.3}  SAE {:.3}  SR>=5 {:.3}  SPL>=5 {:.3}  SAE>=5 {:.3}  collisions {:.3}",
            row.variant, row.sr_all, row.spl_all, row.sae_all, row.sr_ge5, row.spl_ge5, row.sae_ge5, row.mean_collisions
        );
        rows.push(row);
    }
    write_json(&out.join("ablation.json"), &rows)?;
    let mut csv = String::from("iom,ntma,rm,seeds,sr_all,spl_all,sae_all,sr_ge5,spl_ge5,sae_ge5,mean_collisions\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.iom, r.ntma, r.rm, r.seeds, r.sr_all, r.spl_all, r.sae_all, r.sr_ge5, r.spl_ge5, r.sae_ge5, r.mean_collisions
        ));
    }
    fs::write(out.join("ablation.csv"), csv)?;
    Ok(())
}

fn read_index(path: &Path) -> Result<Vec<IndexEntry>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(n, l)| {
            serde_json::from_str(&l?).with_context(|| format!("{}:{}", path.display(), n + 1))
        })
        .collect()
}

/// Dumps the obstacle map after every step. Actions come from the stored
/// trace, or from a noise-free greedy rerun when a checkpoint is given.
pub fn inspect_iom(
    common: &Common,
    checkpoint: Option<&Path>,
    episodes: &Path,
    index: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let entries = read_index(episodes)?;
    let entry = entries
        .iter()
        .find(|e| e.index == index)
        .ok_or_else(|| anyhow!("episode {index} not in {}", episodes.display()))?;
    let dir = episodes.parent().unwrap_or(Path::new("."));
    let mut cfg = load_config(common, Some(dir))?;
    cfg.model.no_iom = entry.no_iom;
    cfg.model.no_ntma = entry.no_ntma;
    let scene = load_scene(&entry.scene_path, cfg.env.num_classes)
        .with_context(|| format!("loading {}", entry.scene_path.display()))?;
    let policy = match checkpoint {
        Some(p) => Some(load_model(&cfg, Some(p))?),
        None => None,
    };
    let trace = match policy {
        Some(_) => Vec::new(),
        None => read_trace(&dir.join(&entry.trace)).with_context(|| format!("reading {}", entry.trace))?,
    };
    let mut sink: Box<dyn Write> = match &out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut ep = Episode::new(&scene, &entry.spec, &cfg.env, cfg.model.iom_capacity, cfg.model.memory_capacity);
    let mut state = PolicyState::zeros(cfg.model.state_dim);
    // Greedy selection never draws from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    while !ep.done {
        ep.observe(None);
        let action = match &policy {
            Some((model, store, _)) => {
                let input = ep.step_input();
                let mut g = Graph::new(store);
                let vars = model.forward_from(&mut g, &input, &state, None)?;
                state = PolicyState {
                    h: g.value(vars.h).data().to_vec(),
                    c: g.value(vars.c).data().to_vec(),
                };
                select_action(g.value(vars.logits).data(), 0.0, ActMode::Greedy, &mut rng).action
            }
            None => match trace.get(ep.t) {
                Some(step) => step.action,
                None => bail!("trace of episode {index} ends before the episode does"),
            },
        };
        let t = ep.t;
        let o = ep.apply(action, entry.scheme);
        let line = serde_json::json!({
            "t": t,
            "action": action,
            "collided": o.collided,
            "x": ep.pose.pos.x,
            "y": ep.pose.pos.y,
            "yaw": ep.pose.yaw,
            "entries": ep.iom.entries(),
        });
        writeln!(sink, "{line}")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn replay(common: &Common, episodes: &Path) -> Result<()> {
    let entries = read_index(episodes)?;
    let dir = episodes.parent().unwrap_or(Path::new("."));
    let cfg = load_config(common, Some(dir))?;
    let mut results = Vec::with_capacity(entries.len());
    for e in &entries {
        let scene = load_scene(&e.scene_path, cfg.env.num_classes)
            .with_context(|| format!("loading {}", e.scene_path.display()))?;
        let steps = read_trace(&dir.join(&e.trace)).with_context(|| format!("reading {}", e.trace))?;
        let rec = replay_trace(&scene, &e.spec, &cfg.env, e.scheme, &steps, !e.noisy).map_err(|m| {
            anyhow!(
                "episode {}: {} differs at step {} (stored {}, replayed {})",
                e.index,
                m.field,
                m.t,
                m.stored,
                m.replayed
            )
        })?;
        if rec.success != e.success || rec.path_length != e.path_length || rec.collisions != e.collisions {
            bail!("episode {}: outcome differs from the index", e.index);
        }
        let optimal = shortest_path_length(&scene, &e.spec.start, e.spec.target_class, &cfg.env)
            .map_err(|u| anyhow!("episode {}: {u}", e.index))?;
        results.push(EpisodeResult {
            scene_id: e.spec.scene_id.clone(),
            success: rec.success,
            path_length: rec.path_length,
            optimal_length: optimal,
            actions: rec.actions,
            collisions: rec.collisions,
            trace: Vec::new(),
        });
    }
    let metrics_path = dir.join("metrics.json");
    if metrics_path.exists() {
        let stored: MetricsReport = serde_json::from_str(&fs::read_to_string(&metrics_path)?)
            .with_context(|| format!("parsing {}", metrics_path.display()))?;
        let recomputed = MetricsReport::from_results(&results, stored.skipped);
        if recomputed != stored {
            bail!(
                "recomputed metrics differ from {}:\n{}",
                metrics_path.display(),
                serde_json::to_string_pretty(&recomputed)?
            );
        }
        println!("replayed {} episodes; rewards and metrics match", entries.len());
    } else {
        println!("replayed {} episodes; rewards match", entries.len());
    }
    Ok(())
}

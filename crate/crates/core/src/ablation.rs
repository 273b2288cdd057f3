//! End-to-end protocol used for ablations: generate a corpus, clone the
//! expert, fine-tune with actor-critic, then evaluate on held-out scenes.

use serde::{Deserialize, Serialize};

use crate::env::{gen_scenes, EnvConfig, GenParams, Scene};
use crate::eval::{evaluate, sample_specs, EvalConfig, MetricsReport};
use crate::numerics::Adam;
use crate::policy::{Model, ModelConfig};
use crate::reward::RewardScheme;
use crate::trainer::{demonstration, pretrain, train_rl, PretrainConfig, TrainConfig, TrainError, TrainIo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub family: String,
    pub gen: GenParams,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Expert demonstrations per training scene.
    pub demos_per_scene: usize,
    /// Evaluation episodes per test scene.
    pub eval_per_scene: usize,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            family: "room".into(),
            gen: GenParams::default(),
            train_scenes: 20,
            test_scenes: 5,
            demos_per_scene: 10,
            eval_per_scene: 20,
            pretrain: PretrainConfig {
                epochs: 20,
                ..PretrainConfig::default()
            },
            train: TrainConfig {
                workers: 1,
                ..TrainConfig::default()
            },
            eval: EvalConfig {
                repetitions: 3,
                keep_traces: false,
                ..EvalConfig::default()
            },
        }
    }
}

/// One model variant of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub iom: bool,
    pub ntma: bool,
    pub scheme: RewardScheme,
}

impl Variant {
    pub const FULL: Variant = Variant {
        iom: true,
        ntma: true,
        scheme: RewardScheme::Rm,
    };

    /// The eight on/off combinations, full model last.
    pub fn grid() -> Vec<Variant> {
        let mut out = Vec::with_capacity(8);
        for iom in [false, true] {
            for ntma in [false, true] {
                for scheme in [RewardScheme::Sparse, RewardScheme::Rm] {
                    out.push(Variant { iom, ntma, scheme });
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        let on = |b: bool| if b { "+" } else { "-" };
        format!(
            "{}iom {}ntma {}rm",
            on(self.iom),
            on(self.ntma),
            on(self.scheme == RewardScheme::Rm)
        )
    }
}

/// Train/test corpus for one seed.
pub fn corpus(cfg: &ProtocolConfig, env: &EnvConfig, seed: u64) -> Result<(Vec<Scene>, Vec<Scene>), TrainError> {
    let train = gen_scenes(&cfg.gen, env, &cfg.family, "train", seed, cfg.train_scenes)?;
    let test = gen_scenes(&cfg.gen, env, &cfg.family, "test", seed.wrapping_add(1 << 32), cfg.test_scenes)?;
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: Variant,
    pub seed: u64,
    pub pretrain_accuracy: f64,
    pub train_success_rate: f64,
    pub metrics: MetricsReport,
}

/// Runs the whole protocol for one variant and seed.
pub fn run_variant(
    cfg: &ProtocolConfig,
    env: &EnvConfig,
    model_cfg: &ModelConfig,
    variant: Variant,
    seed: u64,
) -> Result<VariantRun, TrainError> {
    let (train, test) = corpus(cfg, env, seed)?;
    let model_cfg = ModelConfig {
        no_iom: !variant.iom,
        no_ntma: !variant.ntma,
        ..model_cfg.clone()
    };
    let (model, mut store) = Model::new(model_cfg, seed);
    let mut optimizer = Adam::new(&store);
    let demo_specs = sample_specs(&train, cfg.demos_per_scene, seed ^ 0xD3, env)?;
    let demos = demo_specs
        .iter()
        .map(|spec| {
            let scene = train.iter().find(|s| s.scene_id() == spec.scene_id).expect("spec from corpus");
            demonstration(scene, spec, env, &model)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pre = PretrainConfig {
        seed,
        ..cfg.pretrain.clone()
    };
    let report = pretrain(&pre, &model, &mut store, &mut optimizer, &demos)?;
    let mut optimizer = Adam::new(&store);
    let train_cfg = TrainConfig {
        seed,
        scheme: variant.scheme,
        ..cfg.train.clone()
    };
    let rl = train_rl(&train_cfg, env, &model, &mut store, &mut optimizer, &train, &mut TrainIo::default())?;
    let tail = rl.logs.len().min(1000);
    let train_success_rate = if tail == 0 {
        0.0
    } else {
        rl.logs[rl.logs.len() - tail..].iter().filter(|l| l.success).count() as f64 / tail as f64
    };
    let specs = sample_specs(&test, cfg.eval_per_scene, seed ^ 0xE7, env)?;
    let eval_cfg = EvalConfig {
        seed,
        ..cfg.eval.clone()
    };
    let (metrics, _) = evaluate(&model, &store, &test, &specs, env, &eval_cfg, variant.scheme)?;
    Ok(VariantRun {
        variant,
        seed,
        pretrain_accuracy: report.accuracy,
        train_success_rate,
        metrics,
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-variant medians across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub iom: bool,
    pub ntma: bool,
    pub rm: bool,
    pub seeds: usize,
    pub sr_all: f64,
    pub spl_all: f64,
    pub sae_all: f64,
    pub sr_ge5: f64,
    pub spl_ge5: f64,
    pub sae_ge5: f64,
    pub mean_collisions: f64,
}

pub fn summarize(variant: Variant, runs: &[VariantRun]) -> AblationRow {
    let pick = |f: fn(&MetricsReport) -> f64| median(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
    AblationRow {
        variant: variant.label(),
        iom: variant.iom,
        ntma: variant.ntma,
        rm: variant.scheme == RewardScheme::Rm,
        seeds: runs.len(),
        sr_all: pick(|m| m.sr_all),
        spl_all: pick(|m| m.spl_all),
        sae_all: pick(|m| m.sae_all),
        sr_ge5: pick(|m| m.sr_ge5),
        spl_ge5: pick(|m| m.spl_ge5),
        sae_ge5: pick(|m| m.sae_ge5),
        mean_collisions: pick(MetricsReport::mean_collisions),
    }
}

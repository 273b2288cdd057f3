mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iomnav::env::{
    gen_scenes, load_scene, sample_episode, save_scene, shortest_path_length, step, Action, AgentPose, Coord,
    EnvConfig, GenParams,
};
use iomnav::episode::{read_trace, replay_trace, run_episode, write_trace};
use iomnav::eval::{sae, spl, sr};
use iomnav::iom::ImplicitObstacleMap;
use iomnav::policy::{ActMode, Model, ModelConfig};
use iomnav::reward::RewardScheme;
use iomnav::target_memory::{TargetMemory, FEATURE_WIDTH};
use iomnav::trainer::discounted_returns;

use common::{ref_metrics, result, RefMemory, RefObstacleMap};

#[test]
fn pose_closure_over_random_action_sequences() {
    let cfg = EnvConfig::default();
    let params = GenParams {
        obstacle_density: 0.25,
        ..GenParams::default()
    };
    let scenes = gen_scenes(&params, &cfg, "room", "train", 5, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut taken = 0;
    for scene in &scenes {
        let mut pose = sample_episode(scene, &cfg, &mut rng).unwrap().start;
        for _ in 0..10_000 {
            let action = Action::ALL[rng.random_range(0..Action::COUNT)];
            let (next, collided) = step(scene, pose, action, &cfg);
            assert!(next.is_valid_in(scene), "{next:?} invalid after {action:?}");
            if action == Action::MoveAhead {
                assert_eq!(collided, next.pos == pose.pos);
            } else {
                assert!(!collided);
                assert_eq!(next.pos, pose.pos);
            }
            pose = next;
            taken += 1;
        }
    }
    assert_eq!(taken, 100_000);
}

#[test]
fn traces_replay_and_respect_the_optimal_length() {
    let cfg = EnvConfig::default();
    let scenes = gen_scenes(&GenParams::default(), &cfg, "room", "test", 8, 3).unwrap();
    let (model, store) = Model::new(ModelConfig::default(), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dir = tempfile::tempdir().unwrap();
    for (i, scene) in scenes.iter().enumerate() {
        let spec = sample_episode(scene, &cfg, &mut rng).unwrap();
        let rec = run_episode(
            &model,
            &store,
            scene,
            &spec,
            &cfg,
            RewardScheme::Rm,
            ActMode::Sample,
            true,
            &mut rng,
        )
        .unwrap();
        let path = dir.path().join(format!("{i}.jsonl"));
        write_trace(&path, &rec.trace).unwrap();
        let steps = read_trace(&path).unwrap();
        assert_eq!(steps, rec.trace);
        let again = replay_trace(scene, &spec, &cfg, RewardScheme::Rm, &steps, false).unwrap();
        assert_eq!(again.success, rec.success);
        assert_eq!(again.path_length.to_bits(), rec.path_length.to_bits());
        assert_eq!(again.total_reward.to_bits(), rec.total_reward.to_bits());
        let optimal = shortest_path_length(scene, &spec.start, spec.target_class, &cfg).unwrap();
        if rec.success {
            assert!(rec.path_length >= optimal - 1e-9);
        }
    }
}

#[test]
fn tampered_trace_reward_is_reported() {
    let cfg = EnvConfig::default();
    let scenes = gen_scenes(&GenParams::default(), &cfg, "room", "test", 8, 1).unwrap();
    let (model, store) = Model::new(ModelConfig::default(), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = sample_episode(&scenes[0], &cfg, &mut rng).unwrap();
    let rec = run_episode(
        &model,
        &store,
        &scenes[0],
        &spec,
        &cfg,
        RewardScheme::Rm,
        ActMode::Greedy,
        false,
        &mut rng,
    )
    .unwrap();
    let mut steps = rec.trace.clone();
    steps[0].reward += 1e-9;
    let err = replay_trace(&scenes[0], &spec, &cfg, RewardScheme::Rm, &steps, true).unwrap_err();
    assert_eq!((err.t, err.field), (0, "reward"));
}

#[test]
fn scenes_round_trip_through_files() {
    let cfg = EnvConfig::default();
    let scenes = gen_scenes(&GenParams::default(), &cfg, "room", "val", 12, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for s in &scenes {
        let path = dir.path().join("s.json");
        save_scene(s, &path).unwrap();
        let back = load_scene(&path, cfg.num_classes).unwrap();
        assert_eq!(&back, s);
        assert_eq!(back.to_json(), s.to_json());
    }
}

fn passability(seed: u64, c: Coord, dir: u8) -> bool {
    (seed ^ (c.x as u64 * 31 + c.y as u64 * 131 + dir as u64 * 7)).count_ones().is_multiple_of(2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn obstacle_map_matches_reference(
        capacity in 1usize..10,
        seed in any::<u64>(),
        moves in prop::collection::vec((0i32..9, 0i32..9, 0u8..8, 0i32..9, 0i32..9), 1..80),
    ) {
        let mut map = ImplicitObstacleMap::new(capacity, Coord::new(4, 4), 9, 9);
        let mut reference = RefObstacleMap::new(capacity);
        for (t, (x, y, dir, ax, ay)) in moves.into_iter().enumerate() {
            let pre = Coord::new(x, y);
            let agent = Coord::new(ax, ay);
            let ok = passability(seed, pre, dir);
            map.record_outcome(pre, dir, ok, agent, t);
            reference.record(pre, dir, ok, agent, t);
            let mut got: Vec<_> = map.entries().iter().map(|e| (e.coord, e.z, e.last_update)).collect();
            got.sort_by_key(|e| e.0);
            prop_assert_eq!(got, reference.sorted());
        }
        let m = map.to_matrix();
        prop_assert_eq!(m.shape(), &[capacity, 10]);
        // Rows are ordered by recency and padded with zeros.
        let rows = map.len();
        prop_assert!(m.data()[rows * 10..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn target_memory_matches_reference(
        capacity in 1usize..8,
        rows in prop::collection::vec(prop::collection::vec(0u8..3, FEATURE_WIDTH), 1..40),
    ) {
        let mut mem = TargetMemory::new(capacity);
        let mut reference = RefMemory::new(capacity);
        for r in rows {
            let mut d = [0.0; FEATURE_WIDTH];
            for (slot, v) in d.iter_mut().zip(r) {
                *slot = f64::from(v);
            }
            mem.push(d);
            reference.push(d);
            prop_assert!(mem.len() <= capacity);
        }
        let expected = reference.plain_rows();
        prop_assert_eq!(mem.rows(), expected.as_slice());
    }

    #[test]
    fn metrics_are_bounded_by_success_rate(
        episodes in prop::collection::vec((any::<bool>(), 0.0f64..40.0, 0.0f64..15.0, prop::collection::vec(0usize..6, 0..40)), 0..50),
    ) {
        let results: Vec<_> = episodes
            .into_iter()
            .map(|(ok, l, opt, acts)| result("room_test_000", ok, l, opt, acts.into_iter().map(|a| Action::ALL[a]).collect()))
            .collect();
        let (a, b, c) = (sr(&results), spl(&results), sae(&results));
        prop_assert!(b <= a && c <= a);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!((a, b, c), ref_metrics(&results));
    }

    #[test]
    fn discounted_returns_match_direct_sum(
        rewards in prop::collection::vec(-1.0f64..5.0, 0..30),
        bootstrap in -5.0f64..5.0,
        gamma in 0.5f64..1.0,
    ) {
        let got = discounted_returns(&rewards, bootstrap, gamma);
        let n = rewards.len();
        for i in 0..n {
            let mut expected = gamma.powi((n - i) as i32) * bootstrap;
            for (k, r) in rewards[i..].iter().enumerate() {
                expected += gamma.powi(k as i32) * r;
            }
            prop_assert!((got[i] - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn optimal_length_never_exceeds_a_feasible_walk(seed in 0u64..500) {
        let cfg = EnvConfig::default();
        let scene = &gen_scenes(&GenParams::default(), &cfg, "room", "test", seed, 1).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = sample_episode(scene, &cfg, &mut rng).unwrap();
        let walk = iomnav::trainer::oracle_actions(scene, &spec.start, spec.target_class, &cfg).unwrap();
        let mut pose: AgentPose = spec.start;
        let mut length = 0.0;
        for a in walk {
            let (next, _) = step(scene, pose, a, &cfg);
            if next.pos != pose.pos {
                length += pose.pos.dist(next.pos);
            }
            pose = next;
        }
        prop_assert!((length - spec.optimal_length).abs() < 1e-9);
    }
}

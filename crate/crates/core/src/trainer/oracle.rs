use crate::env::{self, detect, oracle_path, Action, AgentPose, EnvConfig, Scene, Unreachable, HEADINGS};

/// Heading index of a unit step between neighboring cells.
fn heading_of(dx: i32, dy: i32) -> u8 {
    HEADINGS
        .iter()
        .position(|&h| h == (dx, dy))
        .expect("neighboring cells") as u8
}

/// Rotations turning `from` into `to` along the shorter side; a half turn
/// goes right.
fn rotations(from: u8, to: u8) -> Vec<Action> {
    let diff = (to + 8 - from) % 8;
    if diff <= 4 {
        vec![Action::RotateRight; diff as usize]
    } else {
        vec![Action::RotateLeft; (8 - diff) as usize]
    }
}

/// Expert action sequence: follow one shortest path to the nearest success
/// cell, turn (fewest rotations) until the noise-free detector confirms the
/// target, then `Done`.
pub fn oracle_actions(
    scene: &Scene,
    start: &AgentPose,
    target_class: usize,
    cfg: &EnvConfig,
) -> Result<Vec<Action>, Unreachable> {
    let (path, _) = oracle_path(scene, start, target_class, cfg)?;
    let mut actions = Vec::new();
    let mut yaw = start.yaw;
    for w in path.windows(2) {
        let want = heading_of(w[1].x - w[0].x, w[1].y - w[0].y);
        actions.extend(rotations(yaw, want));
        actions.push(Action::MoveAhead);
        yaw = want;
    }
    let goal = *path.last().expect("path has a start");
    let mut candidates: Vec<u8> = (0..8).collect();
    candidates.sort_by_key(|&y| (rotations(yaw, y).len(), rotations(yaw, y).first() != Some(&Action::RotateRight)));
    let facing = candidates
        .into_iter()
        .find(|&y| {
            let pose = AgentPose { pos: goal, yaw: y, pitch: start.pitch };
            let det = detect(scene, &pose, target_class, cfg, None);
            env::success(scene, &pose, target_class, &det, true, cfg)
        })
        .ok_or_else(|| Unreachable {
            scene: scene.scene_id().to_string(),
            start: start.pos,
            class: target_class,
        })?;
    actions.extend(rotations(yaw, facing));
    actions.push(Action::Done);
    Ok(actions)
}

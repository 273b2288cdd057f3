//! Per-step reward: the six-rule shaped scheme and the sparse baseline.

use serde::{Deserialize, Serialize};

use crate::env::Coord;

pub const STEP_PENALTY: f64 = -0.01;
pub const FORWARD_BONUS: f64 = 0.01;
pub const APPROACH_BONUS: f64 = 0.01;
pub const COLLISION_PENALTY: f64 = -0.01;
pub const ESCAPE_BONUS: f64 = 0.02;
pub const SUCCESS_REWARD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardScheme {
    #[default]
    Rm,
    Sparse,
}

impl std::str::FromStr for RewardScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rm" => Ok(Self::Rm),
            "sparse" => Ok(Self::Sparse),
            other => Err(format!("unknown reward scheme {other:?} (expected rm or sparse)")),
        }
    }
}

/// Everything the reward depends on for one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardContext {
    pub collided_now: bool,
    pub collided_prev: bool,
    /// A `MoveAhead` that changed the coordinate.
    pub moved_forward: bool,
    /// Detection confidence at or above the threshold this step.
    pub target_found_now: bool,
    /// Geodesic distance to the nearest target after the step.
    pub dist_now: f64,
    pub dist_prev: f64,
    pub success_now: bool,
    pub pre: Coord,
    pub post: Coord,
}

pub fn compute_reward(ctx: &RewardContext, scheme: RewardScheme) -> f64 {
    let mut r = STEP_PENALTY;
    match scheme {
        RewardScheme::Sparse => {}
        RewardScheme::Rm => {
            if !ctx.target_found_now && ctx.moved_forward {
                r += FORWARD_BONUS;
            }
            if ctx.target_found_now && ctx.dist_now < ctx.dist_prev {
                r += APPROACH_BONUS;
            }
            if ctx.collided_now {
                r += COLLISION_PENALTY;
            }
            if ctx.collided_prev && ctx.post != ctx.pre {
                r += ESCAPE_BONUS;
            }
        }
    }
    if ctx.success_now {
        r += SUCCESS_REWARD;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RewardContext {
        RewardContext {
            collided_now: false,
            collided_prev: false,
            moved_forward: false,
            target_found_now: false,
            dist_now: 4.0,
            dist_prev: 4.0,
            success_now: false,
            pre: Coord::new(1, 1),
            post: Coord::new(1, 1),
        }
    }

    #[test]
    fn rotation_only_costs_step_penalty() {
        assert_eq!(compute_reward(&base(), RewardScheme::Rm), -0.01);
    }

    #[test]
    fn success_without_collision() {
        let ctx = RewardContext {
            success_now: true,
            target_found_now: true,
            ..base()
        };
        assert_eq!(compute_reward(&ctx, RewardScheme::Rm), 5.0 - 0.01);
        assert_eq!(compute_reward(&ctx, RewardScheme::Sparse), 5.0 - 0.01);
    }

    #[test]
    fn wall_bump_and_failed_escape() {
        let bump = RewardContext {
            collided_now: true,
            ..base()
        };
        assert_eq!(compute_reward(&bump, RewardScheme::Rm), -0.02);
        let rotate_after = RewardContext {
            collided_prev: true,
            ..base()
        };
        assert_eq!(compute_reward(&rotate_after, RewardScheme::Rm), -0.01);
        let escape = RewardContext {
            collided_prev: true,
            moved_forward: true,
            post: Coord::new(2, 1),
            ..base()
        };
        assert!((compute_reward(&escape, RewardScheme::Rm) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn scheme_parses() {
        assert_eq!("rm".parse::<RewardScheme>().unwrap(), RewardScheme::Rm);
        assert_eq!("sparse".parse::<RewardScheme>().unwrap(), RewardScheme::Sparse);
        assert!("dense".parse::<RewardScheme>().is_err());
    }
}

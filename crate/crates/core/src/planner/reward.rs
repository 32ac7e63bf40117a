use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frenet::{EgoAction, RoadGeometry, SceneState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub velocity: f64,
    pub wrong_lane: f64,
    pub end_lane: f64,
    /// Length of the ramp before `road_end` over which the end-lane penalty
    /// grows from zero to `end_lane`.
    pub end_lane_ramp: f64,
    pub center: f64,
    pub action: f64,
    pub lateral_factor: f64,
    pub collision: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            velocity: 100.0,
            wrong_lane: 10_000.0,
            end_lane: 1_000.0,
            end_lane_ramp: 50.0,
            center: 200.0,
            action: 100.0,
            lateral_factor: 2.0,
            collision: 1.0e6,
        }
    }
}

impl RewardWeights {
    pub fn zero() -> Self {
        Self {
            velocity: 0.0,
            wrong_lane: 0.0,
            end_lane: 0.0,
            end_lane_ramp: 50.0,
            center: 0.0,
            action: 0.0,
            lateral_factor: 0.0,
            collision: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.velocity,
            self.wrong_lane,
            self.end_lane,
            self.end_lane_ramp,
            self.center,
            self.action,
            self.lateral_factor,
            self.collision,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("reward weights must be finite and non-negative".into()));
        }
        if self.end_lane_ramp <= 0.0 {
            return Err(Error::Config("end_lane_ramp must be positive".into()));
        }
        Ok(())
    }
}

/// Individual reward terms, all non-positive.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardTerms {
    pub velocity: f64,
    pub action: f64,
    pub end_lane: f64,
    pub wrong_lane: f64,
    pub center: f64,
    pub collision: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.velocity + self.action + self.end_lane + self.wrong_lane + self.center + self.collision
    }
}

/// State terms are read from the successor state `next`; `_prev` is kept so
/// callers pass the full transition.
pub fn reward_terms(
    _prev: &SceneState,
    a: &EgoAction,
    next: &SceneState,
    w: &RewardWeights,
    geo: &RoadGeometry,
) -> RewardTerms {
    let ego = &next.ego;
    let dv = geo.v_ref - ego.v;
    let velocity = if ego.v > geo.v_ref {
        -w.velocity * dv * dv
    } else {
        -w.velocity * dv
    };
    let off_target = ego.lane != geo.target_lane;
    let end_lane = if off_target {
        let into_ramp = (ego.s - (geo.road_end - w.end_lane_ramp)) / w.end_lane_ramp;
        -w.end_lane * into_ramp.clamp(0.0, 1.0)
    } else {
        0.0
    };
    RewardTerms {
        velocity,
        action: -w.action * (a.a_long * a.a_long + w.lateral_factor * a.v_lat.abs()),
        end_lane,
        wrong_lane: if off_target { -w.wrong_lane } else { 0.0 },
        center: -w.center * ego.d * ego.d,
        collision: if next.ego_collides(geo) { -w.collision } else { 0.0 },
    }
}

pub fn reward(
    prev: &SceneState,
    a: &EgoAction,
    next: &SceneState,
    w: &RewardWeights,
    geo: &RoadGeometry,
) -> f64 {
    reward_terms(prev, a, next, w, geo).total()
}

//! The lane-change POMDP and its solver.

pub mod mcts;
pub mod reward;
pub mod traffic;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{extract_features, predict_prob, ClassifierWeights, DEFAULT_BETA};
use crate::error::{io_err, Error, Result};
use crate::driver::{idm_accel, CarFollowInput, IdmParams};
use crate::frenet::{
    bumper_gap, lateral_leaves_road, EgoAction, EgoState, Observation, OtherId, OtherState, RoadGeometry,
    SceneState, A_LONG,
};
use crate::seeding::SimRng;

pub use mcts::{mcts_search, BeliefMode, MctsConfig, PlanningModel, RolloutPolicy, SearchResult, Step};
pub use reward::{reward, reward_terms, RewardTerms, RewardWeights};
pub use traffic::{
    select_driver_context, step_with, transition, DriverContext, Leader, PredictorKind, TrafficModel,
};

/// Probability that each surrounding car yields, indexed like
/// [`SceneState::others`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub p_yield: [f64; 2],
}

impl BeliefState {
    pub fn new(p_rear: f64, p_lead: f64) -> Result<Self> {
        let b = Self {
            p_yield: [p_rear, p_lead],
        };
        if b.p_yield.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("yield probabilities must lie in [0, 1]".into()));
        }
        Ok(b)
    }

    pub fn uniform() -> Self {
        Self { p_yield: [0.5, 0.5] }
    }

    pub fn rear(&self) -> f64 {
        self.p_yield[OtherId::Rear.index()]
    }
}

/// Blends the classifier output into the belief; `eta = 1` forgets the past.
pub fn belief_update(b: &BeliefState, obs: &Observation, w: &ClassifierWeights, eta: f64) -> BeliefState {
    let p_yield = std::array::from_fn(|i| {
        let fresh = predict_prob(w, &extract_features(obs, OtherId::ALL[i]));
        (1.0 - eta) * b.p_yield[i] + eta * fresh
    });
    BeliefState { p_yield }
}

/// The planner's view of an observation: hidden bits unset, default widths.
pub fn scene_from_observation(obs: &Observation, t: f64) -> SceneState {
    let other = |o: &crate::frenet::OtherObservation| OtherState {
        length: o.length,
        ..OtherState::new(o.s, o.v, o.lane, false)
    };
    SceneState {
        ego: EgoState {
            s: obs.ego.s,
            d: obs.ego.d,
            v: obs.ego.v,
            lane: obs.ego.lane,
        },
        ego_dims: obs.ego_dims,
        others: [other(&obs.others[0]), other(&obs.others[1])],
        t,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    #[serde(flatten)]
    pub mcts: MctsConfig,
    pub beta: f64,
    /// Belief smoothing factor in [0, 1].
    pub eta: f64,
    pub reward: RewardWeights,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            mcts: MctsConfig::default(),
            beta: DEFAULT_BETA,
            eta: 1.0,
            reward: RewardWeights::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.mcts.validate()?;
        self.reward.validate()?;
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("planner config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }
}

/// Car-following rule the hold rollout uses for the ego.
struct HoldFollower(IdmParams);

const HOLD_FOLLOWER: HoldFollower = HoldFollower(IdmParams::BASELINE);

impl HoldFollower {
    fn accel_for(&self, x: &SceneState, geo: &RoadGeometry) -> Option<f64> {
        let ego = &x.ego;
        let y = geo.lateral_position(ego.lane, ego.d);
        let half = 0.5 * x.ego_dims.width;
        let leader = x
            .others
            .iter()
            .filter(|o| o.s > ego.s)
            .filter(|o| (geo.lateral_position(o.lane, 0.0) - y).abs() < half + 0.5 * o.width)
            .min_by(|a, b| a.s.total_cmp(&b.s));
        let input = match leader {
            Some(o) => CarFollowInput {
                v_back: ego.v,
                dv: ego.v - o.v,
                gap: bumper_gap(ego.s, x.ego_dims.length, o.s, o.length),
            },
            None => CarFollowInput::free_road(ego.v),
        };
        let p = IdmParams { v0: geo.v_ref, ..self.0 };
        if input.gap > 0.0 {
            idm_accel(&input, &p).ok()
        } else {
            None
        }
    }
}

/// The POMDP seen from one decision point.
pub struct LaneChangeModel<'a> {
    pub scene: SceneState,
    pub belief: BeliefState,
    pub cfg: &'a PlannerConfig,
    pub traffic: &'a TrafficModel,
    pub geo: &'a RoadGeometry,
}

impl LaneChangeModel<'_> {
    /// Root state with the rear car's bit fixed by the threshold rule.
    pub fn threshold_root(&self) -> SceneState {
        let mut x = self.scene;
        x.others[OtherId::Rear.index()].m = select_driver_context(self.belief.rear(), self.cfg.beta).yields();
        x.others[OtherId::Lead.index()].m = false;
        x
    }
}

impl PlanningModel for LaneChangeModel<'_> {
    type State = SceneState;

    fn root(&self, rng: &mut SimRng) -> SceneState {
        let mut x = self.threshold_root();
        if self.cfg.mcts.belief_mode == BeliefMode::Sample {
            x.others[OtherId::Rear.index()].m = rng.random::<f64>() < self.belief.rear();
        }
        x
    }

    fn is_legal(&self, x: &SceneState, action: usize) -> bool {
        let a = EgoAction::from_index(action);
        !lateral_leaves_road(x.ego.d, x.ego.lane, a.v_lat, self.cfg.mcts.dt, self.geo)
    }

    /// Keep the lateral velocity (stopping at the road edge) and pick the
    /// acceleration closest to an IDM response to the nearest car ahead in
    /// either lane the ego currently overlaps.
    fn hold_action(&self, x: &SceneState, last_action: usize) -> usize {
        let dt = self.cfg.mcts.dt;
        let mut v_lat = EgoAction::from_index(last_action).v_lat;
        if lateral_leaves_road(x.ego.d, x.ego.lane, v_lat, dt, self.geo) {
            v_lat = 0.0;
        }
        let a_long = HOLD_FOLLOWER
            .accel_for(x, self.geo)
            .map_or(0.0, |a| {
                *A_LONG
                    .iter()
                    .min_by(|p, q| (*p - a).abs().total_cmp(&(*q - a).abs()))
                    .expect("non-empty grid")
            });
        EgoAction { a_long, v_lat }.index().expect("grid action")
    }

    fn step(&self, x: &SceneState, action: usize, _rng: &mut SimRng) -> Step<SceneState> {
        let a = EgoAction::from_index(action);
        let dt = self.cfg.mcts.dt;
        match transition(x, &a, self.traffic, dt, self.geo) {
            Ok(next) => {
                let r = reward(x, &a, &next, &self.cfg.reward, self.geo);
                let terminal = next.ego_collides(self.geo);
                Step {
                    next,
                    reward: r,
                    terminal,
                }
            }
            // The predictor broke down (for instance two human cars overlap).
            // Score the ego's own move once and stop this branch.
            Err(_) => {
                let next = step_with(x, &a, [0.0; 2], dt, self.geo).unwrap_or_else(|_| *x);
                Step {
                    reward: reward(x, &a, &next, &self.cfg.reward, self.geo),
                    next,
                    terminal: true,
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub action: EgoAction,
    pub search: SearchResult,
    pub context: DriverContext,
    /// Accelerations the predictor assigns to the surrounding cars at the
    /// decision point, `None` if it cannot evaluate them.
    pub predicted_accels: Option<[f64; 2]>,
}

/// Picks the ego action for one decision point.
pub fn plan(
    scene: &SceneState,
    belief: &BeliefState,
    cfg: &PlannerConfig,
    traffic: &TrafficModel,
    geo: &RoadGeometry,
    rng: &mut SimRng,
) -> PlanOutput {
    let model = LaneChangeModel {
        scene: *scene,
        belief: *belief,
        cfg,
        traffic,
        geo,
    };
    let search = mcts_search(&model, &cfg.mcts, rng);
    PlanOutput {
        action: search.action,
        context: select_driver_context(belief.rear(), cfg.beta),
        predicted_accels: traffic.accels(&model.threshold_root()).ok(),
        search,
    }
}

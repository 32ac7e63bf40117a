//! Closed-loop episodes, scenario generation, replay and metrics.

pub mod io;
pub mod replay;
pub mod script;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierWeights;
use crate::driver::{presets, ModelKind, ParamDistribution, ScenarioClass};
use crate::error::{Error, Result};
use crate::frenet::{
    observe, step_longitudinal, EgoAction, EgoState, OtherId, OtherState, RoadGeometry, SceneState,
    VehicleDims,
};
use crate::planner::{
    belief_update, plan, reward, scene_from_observation, step_with, BeliefState, PlannerConfig,
    TrafficModel,
};
use crate::seeding::{derive_seed, stream, Domain};

/// Closed interval; `lo == hi` pins the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::Config(format!("{what}: empty or non-finite range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

/// Ranges for the initial scene of a merge: the ego starts at `s = 0` in the
/// lane next to the target lane; the rear car is placed relative to the ego
/// and the lead car relative to the rear car.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioGenConfig {
    pub ego_speed: Range,
    pub rear_offset: Range,
    pub rear_speed: Range,
    /// Center distance from the rear car to the lead car.
    pub lead_spacing: Range,
    pub lead_speed: Range,
    /// Prior probability that the rear car yields.
    pub p_yield: f64,
    pub horizon: f64,
    pub dt: f64,
    pub geometry: RoadGeometry,
    /// Distributions the surrounding drivers are drawn from; the VDM presets
    /// when empty.
    pub env_distributions: Vec<ParamDistribution>,
    /// Fixed initial state for every scenario, overriding the ranges.
    pub initial: Option<SceneState>,
    /// Keep the simulated drivers from knowingly closing below
    /// `env_min_gap`; when off they can run into their leader.
    pub env_guard: bool,
    pub env_min_gap: f64,
}

impl Default for ScenarioGenConfig {
    fn default() -> Self {
        Self {
            ego_speed: Range::new(10.0, 14.0),
            rear_offset: Range::new(-15.0, 10.0),
            rear_speed: Range::new(8.0, 12.0),
            lead_spacing: Range::new(15.0, 35.0),
            lead_speed: Range::new(8.0, 12.0),
            p_yield: 0.5,
            horizon: 12.0,
            dt: 1.0,
            geometry: RoadGeometry::default(),
            env_distributions: Vec::new(),
            initial: None,
            env_guard: true,
            env_min_gap: 1.0,
        }
    }
}

impl ScenarioGenConfig {
    pub fn validate(&self) -> Result<()> {
        self.ego_speed.check("ego_speed")?;
        self.rear_offset.check("rear_offset")?;
        self.rear_speed.check("rear_speed")?;
        self.lead_spacing.check("lead_spacing")?;
        self.lead_speed.check("lead_speed")?;
        self.geometry.validate()?;
        if self.ego_speed.lo < 0.0 || self.rear_speed.lo < 0.0 || self.lead_speed.lo < 0.0 {
            return Err(Error::Config("speeds must be non-negative".into()));
        }
        if self.lead_spacing.lo <= crate::frenet::DEFAULT_VEHICLE_LENGTH {
            return Err(Error::Config("lead_spacing must keep the two human cars apart".into()));
        }
        if !(0.0..=1.0).contains(&self.p_yield) {
            return Err(Error::Config("p_yield must lie in [0, 1]".into()));
        }
        if !(self.dt > 0.0 && self.horizon >= self.dt) {
            return Err(Error::Config("need dt > 0 and horizon >= dt".into()));
        }
        for d in &self.env_distributions {
            d.validate()?;
        }
        if !(self.env_min_gap >= 0.0 && self.env_min_gap.is_finite()) {
            return Err(Error::Config("env_min_gap must be finite and non-negative".into()));
        }
        if let Some(x) = &self.initial {
            if x.ego_collides(&self.geometry) {
                return Err(Error::Config("initial state has a collision".into()));
            }
        }
        Ok(())
    }

    fn distribution(&self, scenario: ScenarioClass) -> ParamDistribution {
        self.env_distributions
            .iter()
            .find(|d| d.scenario == scenario && d.model == ModelKind::Vdm)
            .or_else(|| self.env_distributions.iter().find(|d| d.scenario == scenario))
            .cloned()
            .unwrap_or_else(|| presets::get(ModelKind::Vdm, scenario))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: u64,
    pub seed: u64,
    pub initial: SceneState,
    pub geometry: RoadGeometry,
    /// Ground-truth drivers of the surrounding cars.
    pub env: TrafficModel,
    pub env_min_gap: Option<f64>,
    pub horizon: f64,
    pub dt: f64,
}

impl Scenario {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt + 1e-9).floor() as usize
    }

    /// Accelerations of the simulated surrounding drivers.
    pub fn env_accels(&self, x: &SceneState) -> Result<[f64; 2]> {
        match self.env_min_gap {
            Some(g) => self.env.guarded_accels(x, g, self.dt),
            None => self.env.accels(x),
        }
    }
}

pub fn generate_scenario(index: u64, cfg: &ScenarioGenConfig, seed: u64) -> Result<Scenario> {
    let mut rng = stream(seed, Domain::Scenario, index);
    let initial = match &cfg.initial {
        Some(x) => *x,
        None => {
            let ego_v = cfg.ego_speed.sample(&mut rng);
            let rear_s = cfg.rear_offset.sample(&mut rng);
            let rear_v = cfg.rear_speed.sample(&mut rng);
            let lead_s = rear_s + cfg.lead_spacing.sample(&mut rng);
            let lead_v = cfg.lead_speed.sample(&mut rng);
            let target = cfg.geometry.target_lane;
            let start_lane = if target == 0 { 1 } else { 0 };
            SceneState {
                ego: EgoState {
                    s: 0.0,
                    d: 0.0,
                    v: ego_v,
                    lane: start_lane,
                },
                ego_dims: VehicleDims::default(),
                others: [
                    OtherState::new(rear_s, rear_v, target, false),
                    OtherState::new(lead_s, lead_v, target, false),
                ],
                t: 0.0,
            }
        }
    };
    let mut initial = initial;
    let yields = rng.random::<f64>() < cfg.p_yield;
    initial.others[OtherId::Rear.index()].m = yields;
    initial.others[OtherId::Lead.index()].m = false;
    if initial.ego_collides(&cfg.geometry) {
        return Err(Error::Config(format!("scenario {index} starts in collision")));
    }

    let mut param_rng = stream(seed, Domain::EnvParams, index);
    let rear = cfg.distribution(ScenarioClass::from_yield(yields)).sample(&mut param_rng)?;
    let lead = cfg.distribution(ScenarioClass::Unsuccessful).sample(&mut param_rng)?;
    Ok(Scenario {
        index,
        seed: derive_seed(seed, Domain::Scenario, index),
        initial,
        geometry: cfg.geometry,
        env: TrafficModel::fixed(rear, lead),
        env_min_gap: cfg.env_guard.then_some(cfg.env_min_gap),
        horizon: cfg.horizon,
        dt: cfg.dt,
    })
}

pub fn generate_scenarios(n: usize, cfg: &ScenarioGenConfig, seed: u64) -> Result<Vec<Scenario>> {
    if n == 0 {
        return Err(Error::Config("need at least one scenario".into()));
    }
    cfg.validate()?;
    (0..n as u64).map(|i| generate_scenario(i, cfg, seed)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Merged,
    Collision,
    Timeout,
    /// The episode could not continue, for instance because two surrounding
    /// cars ran into each other.
    Aborted(String),
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Merged => "merged",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
            Outcome::Aborted(_) => "aborted",
        }
    }
}

/// Absolute one-step prediction errors for one surrounding car.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionError {
    pub a: f64,
    pub v: f64,
    pub x: f64,
}

/// One-step errors of predicted against realized motion. Accelerations are
/// compared as `(v' - v) / dt` so a car that stops mid-step counts its
/// effective deceleration on both sides.
pub fn prediction_error(car: &OtherState, predicted_a: f64, actual: &OtherState, dt: f64) -> Result<PredictionError> {
    let (s_pred, v_pred) = step_longitudinal(car.s, car.v, predicted_a, dt)?;
    Ok(PredictionError {
        a: ((v_pred - car.v) / dt - (actual.v - car.v) / dt).abs(),
        v: (v_pred - actual.v).abs(),
        x: (s_pred - actual.s).abs(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub state: SceneState,
    pub action: EgoAction,
    pub reward: f64,
    pub belief: BeliefState,
    pub predicted_accels: Option<[f64; 2]>,
    pub actual_accels: [f64; 2],
    pub errors: Vec<PredictionError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub scenario: u64,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub final_state: SceneState,
    pub outcome: Outcome,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn merged(&self) -> bool {
        self.outcome == Outcome::Merged
    }

    pub fn len(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Everything the ego needs to drive: planner settings, the predictor used
/// inside the search and the classifier feeding the belief.
#[derive(Debug, Clone)]
pub struct Agent {
    pub planner: PlannerConfig,
    pub predictor: TrafficModel,
    pub classifier: ClassifierWeights,
}

pub fn run_episode(sc: &Scenario, agent: &Agent, seed: u64) -> EpisodeTrace {
    let geo = &sc.geometry;
    let mut rng = stream(seed, Domain::Planner, sc.index);
    let mut x = sc.initial;
    let mut belief = BeliefState::uniform();
    let mut steps = Vec::with_capacity(sc.steps());
    let mut outcome = None;

    for _ in 0..sc.steps() {
        let obs = observe(&x);
        belief = belief_update(&belief, &obs, &agent.classifier, agent.planner.eta);
        let scene = scene_from_observation(&obs, x.t);
        let out = plan(&scene, &belief, &agent.planner, &agent.predictor, geo, &mut rng);

        let env_accels = match sc.env_accels(&x) {
            Ok(a) => a,
            Err(e) => {
                outcome = Some(Outcome::Aborted(format!("t={}: {e}", x.t)));
                break;
            }
        };
        let next = match step_with(&x, &out.action, env_accels, sc.dt, geo) {
            Ok(n) => n,
            Err(e) => {
                outcome = Some(Outcome::Aborted(format!("t={}: {e}", x.t)));
                break;
            }
        };
        let errors = out
            .predicted_accels
            .map(|pred| {
                (0..2)
                    .filter_map(|i| prediction_error(&x.others[i], pred[i], &next.others[i], sc.dt).ok())
                    .collect()
            })
            .unwrap_or_default();
        steps.push(StepRecord {
            reward: reward(&x, &out.action, &next, &agent.planner.reward, geo),
            state: x,
            action: out.action,
            belief,
            predicted_accels: out.predicted_accels,
            actual_accels: env_accels,
            errors,
        });
        x = next;
        if x.ego_collides(geo) {
            outcome = Some(Outcome::Collision);
            break;
        }
    }

    let outcome = outcome.unwrap_or(if x.ego.lane == geo.target_lane {
        Outcome::Merged
    } else {
        Outcome::Timeout
    });
    EpisodeTrace {
        scenario: sc.index,
        seed,
        steps,
        final_state: x,
        outcome,
    }
}

pub fn run_batch(scenarios: &[Scenario], agent: &Agent, seed: u64) -> Vec<EpisodeTrace> {
    scenarios.par_iter().map(|sc| run_episode(sc, agent, seed)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub success: usize,
    pub total: usize,
    pub a_error: f64,
    pub v_error: f64,
    pub x_error: f64,
}

impl EvalMetrics {
    pub fn success_rate(&self) -> f64 {
        self.success as f64 / self.total.max(1) as f64
    }
}

/// Order-independent mean: values are sorted before summation.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn metrics_from(successes: &[bool], errors: &[PredictionError]) -> Result<EvalMetrics> {
    if successes.is_empty() {
        return Err(Error::NotEnoughData("no episodes to aggregate".into()));
    }
    Ok(EvalMetrics {
        success: successes.iter().filter(|&&s| s).count(),
        total: successes.len(),
        a_error: stable_mean(errors.iter().map(|e| e.a).collect()),
        v_error: stable_mean(errors.iter().map(|e| e.v).collect()),
        x_error: stable_mean(errors.iter().map(|e| e.x).collect()),
    })
}

pub fn aggregate(traces: &[EpisodeTrace]) -> Result<EvalMetrics> {
    let successes: Vec<bool> = traces.iter().map(EpisodeTrace::merged).collect();
    let errors: Vec<PredictionError> = traces
        .iter()
        .flat_map(|t| t.steps.iter().flat_map(|s| s.errors.iter().copied()))
        .collect();
    metrics_from(&successes, &errors)
}

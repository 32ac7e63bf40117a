//! A rule-based human merger, used to synthesize recorded merges and labeled
//! classifier data from the environment model.

use serde::{Deserialize, Serialize};

use super::replay::ReplayTrial;
use super::{generate_scenario, Scenario, ScenarioGenConfig};
use crate::classifier::{extract_features, LabeledFeatures};
use crate::error::{Error, Result};
use crate::frenet::{bumper_gap, observe, EgoAction, OtherId, RoadGeometry, SceneState};
use crate::planner::step_with;
use crate::seeding::Domain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanMerger {
    /// Bumper gap wanted to a car ahead in the target lane.
    pub front_gap: f64,
    /// Bumper gap wanted to a car behind in the target lane.
    pub back_gap: f64,
    pub cruise_speed: f64,
}

impl Default for HumanMerger {
    fn default() -> Self {
        Self {
            front_gap: 3.0,
            back_gap: 4.0,
            cruise_speed: 12.0,
        }
    }
}

impl HumanMerger {
    fn slot_is_safe(&self, x: &SceneState) -> bool {
        x.others.iter().all(|o| {
            let ahead = bumper_gap(x.ego.s, x.ego_dims.length, o.s, o.length);
            let behind = bumper_gap(o.s, o.length, x.ego.s, x.ego_dims.length);
            ahead >= self.front_gap || behind >= self.back_gap
        })
    }

    fn cruise(&self, v: f64) -> f64 {
        if v < self.cruise_speed - 0.5 {
            1.0
        } else if v > self.cruise_speed + 0.5 {
            -1.5
        } else {
            0.0
        }
    }

    pub fn act(&self, x: &SceneState, geo: &RoadGeometry) -> EgoAction {
        let ego = &x.ego;
        let toward_target = if geo.target_lane < ego.lane { 0.5 } else { -0.5 };
        if ego.lane == geo.target_lane {
            let v_lat = if ego.d < -0.25 {
                0.5
            } else if ego.d > 0.25 {
                -0.5
            } else {
                0.0
            };
            let leader_gap = x
                .others
                .iter()
                .filter(|o| o.lane == ego.lane && o.s > ego.s)
                .map(|o| bumper_gap(ego.s, x.ego_dims.length, o.s, o.length))
                .fold(f64::INFINITY, f64::min);
            let a_long = if leader_gap < 2.0 + ego.v { -1.5 } else { self.cruise(ego.v) };
            return EgoAction { a_long, v_lat };
        }
        if self.slot_is_safe(x) {
            return EgoAction {
                a_long: self.cruise(ego.v),
                v_lat: toward_target,
            };
        }
        let rear = x.rear();
        let lead = x.lead();
        let room_ahead = bumper_gap(ego.s, x.ego_dims.length, lead.s, lead.length) >= self.front_gap;
        let a_long = if ego.s > rear.s && room_ahead { 1.0 } else { -1.5 };
        EgoAction { a_long, v_lat: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub frames: Vec<SceneState>,
    pub collided: bool,
    /// Ended in the target lane ahead of the rear car without a collision.
    pub merged_ahead: bool,
}

/// Drives `sc` with the scripted merger; stops at the horizon or a collision.
pub fn record(sc: &Scenario, driver: &HumanMerger) -> Result<Recording> {
    let geo = &sc.geometry;
    let mut x = sc.initial;
    let mut frames = vec![x];
    let mut collided = false;
    for _ in 0..sc.steps() {
        let a = driver.act(&x, geo);
        let next = step_with(&x, &a, sc.env_accels(&x)?, sc.dt, geo)?;
        x = next;
        frames.push(x);
        if x.ego_collides(geo) {
            collided = true;
            break;
        }
    }
    let merged_ahead = !collided && x.ego.lane == geo.target_lane && x.ego.s > x.rear().s;
    Ok(Recording {
        frames,
        collided,
        merged_ahead,
    })
}

fn scripted_scenarios<'a>(
    cfg: &'a ScenarioGenConfig,
    seed: u64,
    domain: Domain,
) -> impl Iterator<Item = Result<(Scenario, HumanMerger)>> + 'a {
    use rand::Rng;
    (0u64..).map(move |i| {
        let sc = generate_scenario(i, cfg, crate::seeding::derive_seed(seed, domain, 0))?;
        let mut rng = crate::seeding::stream(seed, domain, i);
        let driver = HumanMerger {
            cruise_speed: rng.random_range(10.0..=14.0),
            ..Default::default()
        };
        Ok((sc, driver))
    })
}

/// `n` collision-free scripted merges in replay form. Recordings where the
/// environment breaks down or the script crashes are discarded.
pub fn synthetic_replay_trials(n: usize, cfg: &ScenarioGenConfig, seed: u64) -> Result<Vec<ReplayTrial>> {
    let mut out = Vec::with_capacity(n);
    for item in scripted_scenarios(cfg, seed, Domain::Replay).take(20 * n.max(1)) {
        if out.len() == n {
            break;
        }
        let (sc, driver) = item?;
        let Ok(rec) = record(&sc, &driver) else { continue };
        if rec.collided || rec.frames.len() < sc.steps() + 1 {
            continue;
        }
        out.push(ReplayTrial {
            trial_id: format!("replay-{:04}", sc.index),
            frames: rec
                .frames
                .into_iter()
                .map(|mut f| {
                    for o in &mut f.others {
                        o.m = false;
                    }
                    f
                })
                .collect(),
        });
    }
    if out.len() < n {
        return Err(Error::NotEnoughData(format!(
            "only {} usable recordings out of {n} requested",
            out.len()
        )));
    }
    Ok(out)
}

/// Rear-car features at every step before the ego reaches the target lane,
/// labeled with whether the ego ended up merging ahead of that car.
pub fn classifier_corpus(episodes: usize, cfg: &ScenarioGenConfig, seed: u64) -> Result<Vec<LabeledFeatures>> {
    let mut rows = Vec::new();
    for item in scripted_scenarios(cfg, seed, Domain::ClassifierData).take(episodes) {
        let (sc, driver) = item?;
        let Ok(rec) = record(&sc, &driver) else { continue };
        if rec.collided {
            continue;
        }
        let target = sc.geometry.target_lane;
        rows.extend(
            rec.frames
                .iter()
                .take_while(|f| f.ego.lane != target)
                .map(|f| LabeledFeatures {
                    features: extract_features(&observe(f), OtherId::Rear),
                    label: rec.merged_ahead,
                }),
        );
    }
    Ok(rows)
}

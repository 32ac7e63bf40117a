//! Re-planning the ego against recorded surrounding traffic.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{metrics_from, prediction_error, Agent, EvalMetrics, PredictionError};
use crate::error::{io_err, Error, Result};
use crate::frenet::{observe, EgoState, OtherId, OtherState, RoadGeometry, SceneState, VehicleDims};
use crate::planner::{belief_update, plan, scene_from_observation, step_with, BeliefState};
use crate::seeding::{stream, Domain};

/// Recorded frames at a fixed step. Every frame holds the recorded ego and
/// both surrounding cars; hidden bits are unknown and left unset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrial {
    pub trial_id: String,
    pub frames: Vec<SceneState>,
}

impl ReplayTrial {
    pub fn dt(&self) -> Option<f64> {
        (self.frames.len() >= 2).then(|| self.frames[1].t - self.frames[0].t)
    }

    fn validate(&self) -> Result<()> {
        let Some(dt) = self.dt() else { return Ok(()) };
        let uniform = self
            .frames
            .windows(2)
            .all(|w| ((w[1].t - w[0].t) - dt).abs() <= 1e-9 * dt.abs().max(1.0));
        if !(dt > 0.0) || !uniform {
            return Err(Error::InvalidTrial {
                trial_id: self.trial_id.clone(),
                msg: "recorded times must increase at a constant step".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub trial_id: String,
    pub collision_free: bool,
    /// Ego states the planner drove through.
    pub ego: Vec<EgoState>,
    pub errors: Vec<PredictionError>,
}

pub fn replay_trial(trial: &ReplayTrial, agent: &Agent, geo: &RoadGeometry, seed: u64, index: u64) -> Result<ReplayResult> {
    trial.validate()?;
    let dt = trial.dt().expect("validated trial has two frames");
    let mut rng = stream(seed, Domain::Replay, index);
    let mut x = trial.frames[0];
    let mut belief = BeliefState::uniform();
    let mut ego = vec![x.ego];
    let mut errors = Vec::new();
    let mut collision_free = true;

    for pair in trial.frames.windows(2) {
        let (now, then) = (&pair[0], &pair[1]);
        let obs = observe(&x);
        belief = belief_update(&belief, &obs, &agent.classifier, agent.planner.eta);
        let out = plan(&scene_from_observation(&obs, x.t), &belief, &agent.planner, &agent.predictor, geo, &mut rng);

        // One-step prediction from the recorded scene, under the context the
        // planner is using right now.
        let mut recorded = *now;
        recorded.others[OtherId::Rear.index()].m = out.context.yields();
        if let Ok(pred) = agent.predictor.accels(&recorded) {
            for i in 0..2 {
                errors.push(prediction_error(&now.others[i], pred[i], &then.others[i], dt)?);
            }
        }

        let mut next = step_with(&x, &out.action, [0.0; 2], dt, geo)?;
        next.others = then.others;
        next.t = then.t;
        x = next;
        ego.push(x.ego);
        if x.ego_collides(geo) {
            collision_free = false;
            break;
        }
    }
    Ok(ReplayResult {
        trial_id: trial.trial_id.clone(),
        collision_free,
        ego,
        errors,
    })
}

/// Success is a collision-free run through the whole recording. Trials with
/// fewer than two frames are skipped.
pub fn replay_evaluate(
    trials: &[ReplayTrial],
    agent: &Agent,
    geo: &RoadGeometry,
    seed: u64,
) -> Result<(EvalMetrics, Vec<ReplayResult>)> {
    let usable: Vec<(u64, &ReplayTrial)> = trials
        .iter()
        .enumerate()
        .filter(|(_, t)| {
            let ok = t.frames.len() >= 2;
            if !ok {
                log::warn!("skipping trial {}: shorter than one planning step", t.trial_id);
            }
            ok
        })
        .map(|(i, t)| (i as u64, t))
        .collect();
    let results = usable
        .par_iter()
        .map(|&(i, t)| replay_trial(t, agent, geo, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let successes: Vec<bool> = results.iter().map(|r| r.collision_free).collect();
    let errors: Vec<PredictionError> = results.iter().flat_map(|r| r.errors.iter().copied()).collect();
    Ok((metrics_from(&successes, &errors)?, results))
}

pub const REPLAY_HEADER: [&str; 9] = ["trial_id", "t", "car_id", "role", "s", "d", "v", "lane", "length"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Role {
    Ego,
    Back,
    Front,
}

#[derive(Serialize, Deserialize)]
struct ReplayRow {
    trial_id: String,
    t: f64,
    car_id: String,
    role: Role,
    s: f64,
    d: f64,
    v: f64,
    lane: i32,
    length: f64,
}

pub fn write_replay<W: Write>(writer: W, trials: &[ReplayTrial]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for trial in trials {
        for f in &trial.frames {
            let mut put = |car_id: &str, role, s, d, v, lane, length| {
                wtr.serialize(ReplayRow {
                    trial_id: trial.trial_id.clone(),
                    t: f.t,
                    car_id: car_id.into(),
                    role,
                    s,
                    d,
                    v,
                    lane,
                    length,
                })
            };
            put("0", Role::Ego, f.ego.s, f.ego.d, f.ego.v, f.ego.lane, f.ego_dims.length)?;
            let r = f.rear();
            put("1", Role::Back, r.s, 0.0, r.v, r.lane, r.length)?;
            let l = f.lead();
            put("2", Role::Front, l.s, 0.0, l.v, l.lane, l.length)?;
        }
    }
    wtr.flush().map_err(io_err("<replay>"))?;
    Ok(())
}

pub fn save_replay(path: &Path, trials: &[ReplayTrial]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_replay(file, trials)
}

#[derive(Serialize)]
struct ResultRow<'a> {
    trial_id: &'a str,
    collision_free: bool,
    steps: usize,
    final_lane: i32,
    a_error: f64,
    v_error: f64,
    x_error: f64,
}

/// Per-trial outcome with mean absolute prediction errors.
pub fn write_replay_results<W: Write>(writer: W, results: &[ReplayResult]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in results {
        let m = metrics_from(&[r.collision_free], &r.errors)?;
        wtr.serialize(ResultRow {
            trial_id: &r.trial_id,
            collision_free: r.collision_free,
            steps: r.ego.len().saturating_sub(1),
            final_lane: r.ego.last().map_or(0, |e| e.lane),
            a_error: m.a_error,
            v_error: m.v_error,
            x_error: m.x_error,
        })?;
    }
    wtr.flush().map_err(io_err("<replay results>"))?;
    Ok(())
}

#[derive(Default)]
struct Frame {
    ego: Option<(EgoState, f64)>,
    back: Option<OtherState>,
    front: Option<OtherState>,
}

pub fn read_replay<R: Read>(reader: R, path: &Path) -> Result<Vec<ReplayTrial>> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    for col in REPLAY_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(parse_err(1, format!("missing column `{col}`")));
        }
    }
    // trial -> time (as bits, first appearance order) -> frame
    let mut trials: IndexMap<String, IndexMap<u64, (f64, Frame)>> = IndexMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: ReplayRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        let frame = &mut trials
            .entry(row.trial_id.clone())
            .or_default()
            .entry(row.t.to_bits())
            .or_insert_with(|| (row.t, Frame::default()))
            .1;
        let other = OtherState {
            length: row.length,
            ..OtherState::new(row.s, row.v, row.lane, false)
        };
        let slot_taken = match row.role {
            Role::Ego => frame
                .ego
                .replace((
                    EgoState {
                        s: row.s,
                        d: row.d,
                        v: row.v,
                        lane: row.lane,
                    },
                    row.length,
                ))
                .is_some(),
            Role::Back => frame.back.replace(other).is_some(),
            Role::Front => frame.front.replace(other).is_some(),
        };
        if slot_taken {
            return Err(parse_err(line, format!("duplicate {:?} row at t={}", row.role, row.t)));
        }
    }

    let mut out = Vec::with_capacity(trials.len());
    for (trial_id, frames) in trials {
        let mut list = Vec::with_capacity(frames.len());
        for (_, (t, f)) in frames {
            let (Some((ego, ego_len)), Some(back), Some(front)) = (f.ego, f.back, f.front) else {
                return Err(Error::InvalidTrial {
                    trial_id,
                    msg: format!("frame at t={t} needs one ego, back and front row"),
                });
            };
            list.push(SceneState {
                ego,
                ego_dims: VehicleDims {
                    length: ego_len,
                    ..VehicleDims::default()
                },
                others: [back, front],
                t,
            });
        }
        list.sort_by(|a, b| a.t.total_cmp(&b.t));
        let trial = ReplayTrial {
            trial_id,
            frames: list,
        };
        trial.validate()?;
        out.push(trial);
    }
    Ok(out)
}

pub fn load_replay(path: &Path) -> Result<Vec<ReplayTrial>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_replay(file, path)
}

//! Longitudinal behaviour of the two surrounding cars.
//!
//! The rear car's hidden bit `m` picks both its leader and its parameters: a
//! yielding car treats the ego as its leader as soon as the ego is ahead of
//! it, a non-yielding one keeps following the lead car. Either car follows
//! the ego once the ego's center is in its lane ahead of it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::driver::{
    presets, AccelEnvelope, CarFollowInput, DriverParams, IdmParams, ModelKind, ParamDistribution,
    ScenarioClass,
};
use crate::error::{Error, Result};
use crate::frenet::{
    bumper_gap, step_lateral, step_longitudinal, EgoAction, OtherId, RoadGeometry, SceneState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leader {
    Ego,
    Other(OtherId),
    None,
}

pub fn resolve_leader(x: &SceneState, k: OtherId) -> Leader {
    let me = x.other(k);
    let peer = x.other(k.other());
    let mut best: Option<(f64, Leader)> = None;
    let mut consider = |s: f64, who: Leader| {
        if best.is_none_or(|(bs, _)| s < bs) {
            best = Some((s, who));
        }
    };
    if peer.lane == me.lane && peer.s > me.s {
        consider(peer.s, Leader::Other(k.other()));
    }
    let ego_ahead = bumper_gap(me.s, me.length, x.ego.s, x.ego_dims.length) > 0.0;
    let yields_to_ego = k == OtherId::Rear && me.m;
    if ego_ahead && (yields_to_ego || x.ego.lane == me.lane) {
        consider(x.ego.s, Leader::Ego);
    }
    best.map_or(Leader::None, |(_, who)| who)
}

pub fn follow_input(x: &SceneState, k: OtherId) -> CarFollowInput {
    let me = x.other(k);
    match resolve_leader(x, k) {
        Leader::Ego => CarFollowInput {
            v_back: me.v,
            dv: me.v - x.ego.v,
            gap: bumper_gap(me.s, me.length, x.ego.s, x.ego_dims.length),
        },
        Leader::Other(j) => {
            let front = x.other(j);
            CarFollowInput {
                v_back: me.v,
                dv: me.v - front.v,
                gap: bumper_gap(me.s, me.length, front.s, front.length),
            }
        }
        Leader::None => CarFollowInput::free_road(me.v),
    }
}

/// Driver parameters for the two surrounding cars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub rear_yield: DriverParams,
    pub rear_not_yield: DriverParams,
    pub lead: DriverParams,
    #[serde(default)]
    pub envelope: AccelEnvelope,
}

impl TrafficModel {
    /// Same parameters for the rear car whatever its hidden bit says.
    pub fn fixed(rear: DriverParams, lead: DriverParams) -> Self {
        Self {
            rear_yield: rear,
            rear_not_yield: rear,
            lead,
            envelope: AccelEnvelope::default(),
        }
    }

    /// Class means of a learned pair of distributions. The lead car is never
    /// asked to yield and uses the unsuccessful class.
    pub fn from_distributions(successful: &ParamDistribution, unsuccessful: &ParamDistribution) -> Self {
        Self {
            rear_yield: successful.mean_params(),
            rear_not_yield: unsuccessful.mean_params(),
            lead: unsuccessful.mean_params(),
            envelope: AccelEnvelope::default(),
        }
    }

    pub fn params(&self, x: &SceneState, k: OtherId) -> &DriverParams {
        match k {
            OtherId::Rear if x.rear().m => &self.rear_yield,
            OtherId::Rear => &self.rear_not_yield,
            OtherId::Lead => &self.lead,
        }
    }

    pub fn accel(&self, x: &SceneState, k: OtherId) -> Result<f64> {
        let input = follow_input(x, k);
        if !(input.gap > 0.0) {
            return Err(Error::NonPositiveGap { gap: input.gap });
        }
        let a = self.params(x, k).accel(&input)?;
        if !a.is_finite() {
            return Err(Error::NonFinite("model acceleration"));
        }
        Ok(self.envelope.clamp(a))
    }

    pub fn accels(&self, x: &SceneState) -> Result<[f64; 2]> {
        Ok([self.accel(x, OtherId::Rear)?, self.accel(x, OtherId::Lead)?])
    }

    /// Model accelerations capped so that after the step each car could
    /// still stop `min_gap` behind its leader if both braked at the envelope
    /// limit. Leaders move first with their own (capped) acceleration; an ego
    /// leader is assumed to hold its speed.
    pub fn guarded_accels(&self, x: &SceneState, min_gap: f64, dt: f64) -> Result<[f64; 2]> {
        let mut out = self.accels(x)?;
        let leaders = OtherId::ALL.map(|k| resolve_leader(x, k));
        let order = match leaders[OtherId::Rear.index()] {
            Leader::Other(OtherId::Lead) => [OtherId::Lead, OtherId::Rear],
            _ => [OtherId::Rear, OtherId::Lead],
        };
        let b = -self.envelope.min;
        for k in order {
            let me = x.other(k);
            let (front_s, front_v, front_len) = match leaders[k.index()] {
                Leader::None => continue,
                Leader::Ego => (x.ego.s + x.ego.v * dt, x.ego.v, x.ego_dims.length),
                Leader::Other(j) => {
                    let f = x.other(j);
                    let (s, v) = step_longitudinal(f.s, f.v, out[j.index()], dt)?;
                    (s, v, f.length)
                }
            };
            // Room left after this step once both stopping distances are
            // counted, as a quadratic in the follower's next speed u.
            let room = bumper_gap(me.s, me.length, front_s, front_len) - min_gap + front_v * front_v / (2.0 * b);
            let disc = 0.25 * dt * dt + 2.0 * (room - 0.5 * me.v * dt) / b;
            let u_max = if disc >= 0.0 { b * (disc.sqrt() - 0.5 * dt) } else { 0.0 };
            let cap = (u_max.max(0.0) - me.v) / dt;
            out[k.index()] = out[k.index()].min(cap).max(self.envelope.min);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    /// Learned VDM class means, switched by the yield classifier.
    Vdm,
    /// One fixed IDM for every car.
    IdmFixed,
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictorKind::Vdm => "vdm",
            PredictorKind::IdmFixed => "idm-fixed",
        })
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vdm" => Ok(PredictorKind::Vdm),
            "idm-fixed" | "idm" => Ok(PredictorKind::IdmFixed),
            other => Err(Error::Config(format!("unknown predictor `{other}`"))),
        }
    }
}

impl PredictorKind {
    pub fn model(self) -> TrafficModel {
        match self {
            PredictorKind::Vdm => TrafficModel::from_distributions(
                &presets::get(ModelKind::Vdm, ScenarioClass::Successful),
                &presets::get(ModelKind::Vdm, ScenarioClass::Unsuccessful),
            ),
            PredictorKind::IdmFixed => {
                let p = DriverParams::Idm(IdmParams::BASELINE);
                TrafficModel::fixed(p, p)
            }
        }
    }
}

/// Leader and parameter class the planner assumes for the rear car.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriverContext {
    pub leader: Leader,
    pub class: ScenarioClass,
}

impl DriverContext {
    pub fn yields(&self) -> bool {
        self.class == ScenarioClass::Successful
    }
}

pub fn select_driver_context(p_yield: f64, beta: f64) -> DriverContext {
    if p_yield > beta {
        DriverContext {
            leader: Leader::Ego,
            class: ScenarioClass::Successful,
        }
    } else {
        DriverContext {
            leader: Leader::Other(OtherId::Lead),
            class: ScenarioClass::Unsuccessful,
        }
    }
}

/// One step of the joint dynamics. Accelerations of the surrounding cars are
/// computed from the current state before anyone moves; nobody changes lanes
/// except the ego and the hidden bits carry over.
pub fn transition(
    x: &SceneState,
    a: &EgoAction,
    model: &TrafficModel,
    dt: f64,
    geo: &RoadGeometry,
) -> Result<SceneState> {
    let accels = model.accels(x)?;
    step_with(x, a, accels, dt, geo)
}

/// Moves every car with given accelerations for the surrounding cars.
pub fn step_with(
    x: &SceneState,
    a: &EgoAction,
    accels: [f64; 2],
    dt: f64,
    geo: &RoadGeometry,
) -> Result<SceneState> {
    let mut next = *x;
    let (s, v) = step_longitudinal(x.ego.s, x.ego.v, a.a_long, dt)?;
    let (d, lane) = step_lateral(x.ego.d, x.ego.lane, a.v_lat, dt, geo)?;
    next.ego.s = s;
    next.ego.v = v;
    next.ego.d = d;
    next.ego.lane = lane;
    for (o, acc) in next.others.iter_mut().zip(accels) {
        let (s, v) = step_longitudinal(o.s, o.v, acc, dt)?;
        o.s = s;
        o.v = v;
    }
    next.t = x.t + dt;
    Ok(next)
}

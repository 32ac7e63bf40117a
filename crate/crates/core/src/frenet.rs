//! Road-aligned state types, kinematic stepping and collision geometry.
//!
//! Lateral sign convention: a positive lateral offset `d` (and a positive
//! lateral velocity) points toward the lower lane index. The ego starts in
//! lane 1 and merges into lane 0, so "positive" means "toward the target".
//! The global lateral coordinate is `y = d - lane * lane_width`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result};

/// The road has exactly two lanes, indexed 0 and 1.
pub const LANE_COUNT: i32 = 2;

pub const DEFAULT_LANE_WIDTH: f64 = 3.5;
pub const DEFAULT_VEHICLE_LENGTH: f64 = 4.5;
pub const DEFAULT_VEHICLE_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleDims {
    fn default() -> Self {
        Self {
            length: DEFAULT_VEHICLE_LENGTH,
            width: DEFAULT_VEHICLE_WIDTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub s: f64,
    /// Offset from the current lane's centerline.
    pub d: f64,
    pub v: f64,
    pub lane: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtherState {
    pub s: f64,
    pub v: f64,
    pub lane: i32,
    /// Hidden cooperativeness: `true` when the car is willing to yield.
    pub m: bool,
    pub length: f64,
    #[serde(default = "default_width")]
    pub width: f64,
}

fn default_width() -> f64 {
    DEFAULT_VEHICLE_WIDTH
}

impl OtherState {
    pub fn new(s: f64, v: f64, lane: i32, m: bool) -> Self {
        Self {
            s,
            v,
            lane,
            m,
            length: DEFAULT_VEHICLE_LENGTH,
            width: DEFAULT_VEHICLE_WIDTH,
        }
    }
}

/// The two surrounding cars on the target lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OtherId {
    /// N1, the following car the ego tries to merge in front of or behind.
    Rear,
    /// N2, the leading car.
    Lead,
}

impl OtherId {
    pub const ALL: [OtherId; 2] = [OtherId::Rear, OtherId::Lead];

    pub fn index(self) -> usize {
        match self {
            OtherId::Rear => 0,
            OtherId::Lead => 1,
        }
    }

    pub fn other(self) -> OtherId {
        match self {
            OtherId::Rear => OtherId::Lead,
            OtherId::Lead => OtherId::Rear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub ego: EgoState,
    pub ego_dims: VehicleDims,
    /// Indexed by [`OtherId::index`]: rear car first, lead car second.
    pub others: [OtherState; 2],
    pub t: f64,
}

impl SceneState {
    pub fn other(&self, id: OtherId) -> &OtherState {
        &self.others[id.index()]
    }

    pub fn other_mut(&mut self, id: OtherId) -> &mut OtherState {
        &mut self.others[id.index()]
    }

    pub fn rear(&self) -> &OtherState {
        self.other(OtherId::Rear)
    }

    pub fn lead(&self) -> &OtherState {
        self.other(OtherId::Lead)
    }

    /// True when the ego overlaps either surrounding car.
    pub fn ego_collides(&self, geo: &RoadGeometry) -> bool {
        self.others
            .iter()
            .any(|o| check_collision(&self.ego, &self.ego_dims, o, geo))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoAction {
    pub a_long: f64,
    pub v_lat: f64,
}

pub const A_LONG: [f64; 3] = [-1.5, 0.0, 1.0];
pub const V_LAT: [f64; 3] = [-0.5, 0.0, 0.5];
pub const ACTION_COUNT: usize = 9;

impl EgoAction {
    pub const HOLD: EgoAction = EgoAction {
        a_long: 0.0,
        v_lat: 0.0,
    };

    /// All nine actions in canonical order: acceleration-major.
    pub fn all() -> [EgoAction; ACTION_COUNT] {
        std::array::from_fn(Self::from_index)
    }

    pub fn from_index(i: usize) -> EgoAction {
        EgoAction {
            a_long: A_LONG[i / 3],
            v_lat: V_LAT[i % 3],
        }
    }

    /// Canonical index, or `None` when either component is off the grid.
    pub fn index(&self) -> Option<usize> {
        let ai = A_LONG.iter().position(|&a| a == self.a_long)?;
        let li = V_LAT.iter().position(|&v| v == self.v_lat)?;
        Some(ai * 3 + li)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoObservation {
    pub s: f64,
    pub d: f64,
    pub v: f64,
    pub lane: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtherObservation {
    pub s: f64,
    pub v: f64,
    pub lane: i32,
    pub length: f64,
}

/// What the ego perceives. The hidden cooperativeness bits are absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ego: EgoObservation,
    pub ego_dims: VehicleDims,
    pub others: [OtherObservation; 2],
}

impl Observation {
    pub fn other(&self, id: OtherId) -> &OtherObservation {
        &self.others[id.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    pub lane_width: f64,
    /// Longitudinal coordinate where the ego's original lane ends.
    pub road_end: f64,
    pub target_lane: i32,
    pub v_ref: f64,
    #[serde(default = "default_width")]
    pub other_width: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            lane_width: DEFAULT_LANE_WIDTH,
            road_end: 200.0,
            target_lane: 0,
            v_ref: 16.0,
            other_width: DEFAULT_VEHICLE_WIDTH,
        }
    }
}

impl RoadGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return Err(crate::Error::Config("lane_width must be positive".into()));
        }
        if !(self.road_end > 0.0 && self.road_end.is_finite()) {
            return Err(crate::Error::Config("road_end must be positive".into()));
        }
        if !(0..LANE_COUNT).contains(&self.target_lane) {
            return Err(crate::Error::Config(format!(
                "target_lane must be in 0..{LANE_COUNT}"
            )));
        }
        Ok(())
    }

    pub fn lateral_position(&self, lane: i32, d: f64) -> f64 {
        d - f64::from(lane) * self.lane_width
    }
}

/// Advances position and speed under constant acceleration. Braking stops at
/// zero speed instead of reversing.
pub fn step_longitudinal(s: f64, v: f64, a: f64, dt: f64) -> Result<(f64, f64)> {
    ensure_finite(s, "s")?;
    ensure_finite(v, "v")?;
    ensure_finite(a, "a")?;
    ensure_finite(dt, "dt")?;
    let v_next = v + a * dt;
    if v_next >= 0.0 {
        return Ok((s + v * dt + 0.5 * a * dt * dt, v_next));
    }
    // v_next < 0 implies a < 0 for v >= 0; the car halts after v / |a|.
    if a >= 0.0 {
        return Ok((s + v * dt + 0.5 * a * dt * dt, 0.0));
    }
    let t_stop = -v / a;
    Ok((s + v * t_stop + 0.5 * a * t_stop * t_stop, 0.0))
}

/// Applies a lateral velocity for one step. Crossing the half-lane line moves
/// the ego into the neighbouring lane and re-anchors `d` on its centerline.
/// A move that would leave the road stops at the outer edge.
pub fn step_lateral(
    d: f64,
    lane: i32,
    v_lat: f64,
    dt: f64,
    geo: &RoadGeometry,
) -> Result<(f64, i32)> {
    ensure_finite(d, "d")?;
    ensure_finite(v_lat, "v_lat")?;
    ensure_finite(dt, "dt")?;
    let half = 0.5 * geo.lane_width;
    let mut d_next = d + v_lat * dt;
    let mut lane_next = lane;
    while d_next.abs() > half {
        let dir = d_next.signum();
        let candidate = lane_next - dir as i32;
        if !(0..LANE_COUNT).contains(&candidate) {
            d_next = dir * half;
            break;
        }
        lane_next = candidate;
        d_next -= dir * geo.lane_width;
    }
    Ok((d_next, lane_next))
}

/// Whether a lateral velocity would push the ego past the outer road edge.
pub fn lateral_leaves_road(d: f64, lane: i32, v_lat: f64, dt: f64, geo: &RoadGeometry) -> bool {
    let d_next = d + v_lat * dt;
    if d_next.abs() <= 0.5 * geo.lane_width {
        return false;
    }
    let candidate = lane - d_next.signum() as i32;
    !(0..LANE_COUNT).contains(&candidate)
}

/// Axis-aligned rectangle overlap in (s, y). Surrounding cars ride their
/// lane centerline.
pub fn check_collision(
    ego: &EgoState,
    ego_dims: &VehicleDims,
    other: &OtherState,
    geo: &RoadGeometry,
) -> bool {
    let ds = (ego.s - other.s).abs();
    let dy = (geo.lateral_position(ego.lane, ego.d) - geo.lateral_position(other.lane, 0.0)).abs();
    ds < 0.5 * (ego_dims.length + other.length) && dy < 0.5 * (ego_dims.width + other.width)
}

pub fn observe(x: &SceneState) -> Observation {
    let other = |o: &OtherState| OtherObservation {
        s: o.s,
        v: o.v,
        lane: o.lane,
        length: o.length,
    };
    Observation {
        ego: EgoObservation {
            s: x.ego.s,
            d: x.ego.d,
            v: x.ego.v,
            lane: x.ego.lane,
        },
        ego_dims: x.ego_dims,
        others: [other(&x.others[0]), other(&x.others[1])],
    }
}

/// Bumper-to-bumper distance between a follower and its leader, with `s`
/// measured at vehicle centers. Non-positive means the two overlap.
pub fn bumper_gap(back_s: f64, back_length: f64, front_s: f64, front_length: f64) -> f64 {
    front_s - back_s - 0.5 * (front_length + back_length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geo() -> RoadGeometry {
        RoadGeometry::default()
    }

    #[test]
    fn longitudinal_examples() {
        assert_eq!(step_longitudinal(0.0, 10.0, 0.0, 1.0).unwrap(), (10.0, 10.0));
        assert_eq!(step_longitudinal(0.0, 10.0, 1.0, 1.0).unwrap(), (10.5, 11.0));
        // v hits zero after 1/3 s: s = 0.5/3 - 0.75/9 = 1/12.
        let (s, v) = step_longitudinal(0.0, 0.5, -1.5, 1.0).unwrap();
        assert!((s - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(v, 0.0);
        assert!(step_longitudinal(f64::NAN, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn lateral_examples() {
        let g = geo();
        assert_eq!(step_lateral(0.0, 1, 0.0, 1.0, &g).unwrap(), (0.0, 1));
        assert_eq!(step_lateral(1.5, 1, 0.5, 1.0, &g).unwrap(), (-1.5, 0));
        assert_eq!(step_lateral(0.0, 1, 0.5, 1.0, &g).unwrap(), (0.5, 1));
        assert!(step_lateral(0.0, 1, f64::INFINITY, 1.0, &g).is_err());
    }

    #[test]
    fn lateral_stops_at_road_edge() {
        let g = geo();
        assert_eq!(step_lateral(1.5, 0, 0.5, 1.0, &g).unwrap(), (1.75, 0));
        assert_eq!(step_lateral(-1.5, 1, -0.5, 1.0, &g).unwrap(), (-1.75, 1));
        assert!(lateral_leaves_road(1.5, 0, 0.5, 1.0, &g));
        assert!(!lateral_leaves_road(1.5, 1, 0.5, 1.0, &g));
    }

    #[test]
    fn collision_examples() {
        let g = geo();
        let dims = VehicleDims::default();
        let ego = EgoState { s: 0.0, d: 0.0, v: 10.0, lane: 0 };
        assert!(check_collision(&ego, &dims, &OtherState::new(0.0, 10.0, 0, false), &g));
        assert!(!check_collision(&ego, &dims, &OtherState::new(100.0, 10.0, 0, false), &g));
        // Ego in lane 1 drifted 1.75 m toward lane 0: |dy| = 1.75 < 2.0, |ds| = 4.0 < 4.5.
        let ego = EgoState { s: 0.0, d: 1.75, v: 10.0, lane: 1 };
        assert!(check_collision(&ego, &dims, &OtherState::new(4.0, 10.0, 0, false), &g));
        let ego = EgoState { s: 0.0, d: 0.0, v: 10.0, lane: 1 };
        assert!(!check_collision(&ego, &dims, &OtherState::new(0.0, 10.0, 0, false), &g));
    }

    #[test]
    fn observation_hides_cooperativeness() {
        let mut x = SceneState {
            ego: EgoState { s: 0.0, d: 0.3, v: 10.0, lane: 1 },
            ego_dims: VehicleDims::default(),
            others: [OtherState::new(-5.0, 9.0, 0, false), OtherState::new(20.0, 11.0, 0, true)],
            t: 2.0,
        };
        let o1 = observe(&x);
        x.others[0].m = true;
        assert_eq!(o1, observe(&x));
        assert_eq!(o1.ego.d, 0.3);
        assert_eq!(o1.other(OtherId::Lead).s, 20.0);
    }

    #[test]
    fn action_indexing_round_trips() {
        for (i, a) in EgoAction::all().iter().enumerate() {
            assert_eq!(a.index(), Some(i));
        }
        assert_eq!(EgoAction::HOLD.index(), Some(4));
        assert_eq!(EgoAction { a_long: 0.3, v_lat: 0.0 }.index(), None);
    }

    proptest! {
        #[test]
        fn zero_accel_is_exact(s in -1e3f64..1e3, v in 0.0f64..40.0, dt in 0.01f64..2.0) {
            let (s2, v2) = step_longitudinal(s, v, 0.0, dt).unwrap();
            prop_assert_eq!(v2, v);
            prop_assert_eq!(s2, s + v * dt);
        }

        #[test]
        fn lateral_conserves_global_position(
            d in -1.75f64..1.75,
            lane in 0i32..2,
            v_lat in prop::sample::select(V_LAT.to_vec()),
            dt in 0.1f64..2.0,
        ) {
            let g = geo();
            prop_assume!(!lateral_leaves_road(d, lane, v_lat, dt, &g));
            let (d2, lane2) = step_lateral(d, lane, v_lat, dt, &g).unwrap();
            let moved = g.lateral_position(lane2, d2) - g.lateral_position(lane, d);
            prop_assert!((moved - v_lat * dt).abs() < 1e-12);
            prop_assert!(d2.abs() <= 0.5 * g.lane_width);
        }

        #[test]
        fn lateral_never_leaves_road(d in -1.75f64..1.75, lane in 0i32..2, v_lat in -3.0f64..3.0) {
            let (d2, lane2) = step_lateral(d, lane, v_lat, 1.0, &geo()).unwrap();
            prop_assert!((0..LANE_COUNT).contains(&lane2));
            prop_assert!(d2.abs() <= 1.75);
        }

        #[test]
        fn collision_is_symmetric(
            s0 in -10.0f64..10.0, d0 in -1.75f64..1.75, l0 in 0i32..2,
            s1 in -10.0f64..10.0, l1 in 0i32..2,
            len0 in 3.0f64..6.0, len1 in 3.0f64..6.0,
        ) {
            let g = geo();
            let e0 = EgoState { s: s0, d: d0, v: 0.0, lane: l0 };
            let dims0 = VehicleDims { length: len0, width: 2.0 };
            let o1 = OtherState { length: len1, ..OtherState::new(s1, 0.0, l1, false) };
            // Swap roles: the other car as an ego on its centerline and vice versa.
            let e1 = EgoState { s: s1, d: 0.0, v: 0.0, lane: l1 };
            let dims1 = VehicleDims { length: len1, width: 2.0 };
            let y0 = g.lateral_position(l0, d0);
            let ego_as_other_lane = 0;
            let shifted = OtherState { length: len0, ..OtherState::new(s0, 0.0, ego_as_other_lane, false) };
            let e1_shifted = EgoState { d: g.lateral_position(l1, 0.0) - y0, lane: 0, ..e1 };
            prop_assert_eq!(
                check_collision(&e0, &dims0, &o1, &g),
                check_collision(&e1_shifted, &dims1, &shifted, &g)
            );
        }
    }
}

//! Acceptance suite. Criteria run one after another inside a single test so
//! their wall-clock budgets are not shared with other tests; each prints one
//! PASS/FAIL line to stdout whether or not output is captured.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lanechange_core::calibration::synth::{generate_corpus, SynthConfig};
use lanechange_core::calibration::{calibrate, filter_outliers, fit_mle, outlier_limit, trial_mse, FitConfig};
use lanechange_core::classifier::{
    accuracy, classify, predict_prob, sigmoid, train, ClassifierWeights, LabeledFeatures, TrainConfig,
    YieldDecision, YieldFeatures,
};
use lanechange_core::driver::{
    idm_accel, idm_desired_gap, vdm_accel, vdm_optimal_velocity, CarFollowInput, IdmParams, ModelKind, VdmParams,
};
use lanechange_core::frenet::{
    EgoAction, EgoState, OtherState, RoadGeometry, SceneState, VehicleDims, A_LONG, ACTION_COUNT, LANE_COUNT, V_LAT,
};
use lanechange_core::planner::{
    mcts_search, reward, step_with, transition, MctsConfig, PlannerConfig, PlanningModel, PredictorKind,
    RewardWeights, Step,
};
use lanechange_core::seeding::{stream, Domain, SimRng};
use lanechange_core::sim::replay::{replay_evaluate, ReplayTrial};
use lanechange_core::sim::script::synthetic_replay_trials;
use lanechange_core::sim::{generate_scenario, generate_scenarios, run_batch, Agent, ScenarioGenConfig};
use rand::Rng;

const REL_TOL: f64 = 1e-9;

/// Relative error against the oracle, measured on the scale of the terms
/// that were summed so that results near zero are not judged by 0/0.
fn rel_err(got: f64, want: f64, scale: f64) -> f64 {
    (got - want).abs() / want.abs().max(scale).max(f64::MIN_POSITIVE)
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// `ACCEPTANCE_ONLY=3,8` runs just those criteria.
fn selected(n: u32) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|x| x.trim() == n.to_string()),
        Err(_) => true,
    }
}

fn run(n: u32, name: &str, limit: Duration, check: impl FnOnce() -> Verdict) -> bool {
    if !selected(n) {
        let line = format!("[SKIP] {n:>2}. {name}\n");
        std::io::stdout().write_all(line.as_bytes()).unwrap();
        return true;
    }
    let start = Instant::now();
    let v = check();
    let took = start.elapsed();
    let pass = v.pass && took <= limit;
    let line = format!(
        "[{}] {n:>2}. {name}: {} ({:.1} s, limit {} s)\n",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        took.as_secs_f64(),
        limit.as_secs()
    );
    // Written to the stream itself so the harness does not swallow it.
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    pass
}

// ---------------------------------------------------------------- oracles

fn random_idm(rng: &mut SimRng) -> IdmParams {
    IdmParams {
        t_headway: rng.random_range(0.3..3.0),
        a_max: rng.random_range(0.3..4.0),
        v0: rng.random_range(5.0..40.0),
        delta: rng.random_range(1.0..8.0),
        d0: rng.random_range(0.5..5.0),
        b: rng.random_range(0.5..5.0),
    }
}

fn random_vdm(rng: &mut SimRng) -> VdmParams {
    VdmParams {
        v1: rng.random_range(-10.0..10.0),
        v2: rng.random_range(-10.0..10.0),
        c1: rng.random_range(-3.0..3.0),
        c2: rng.random_range(-10.0..10.0),
        lambda: rng.random_range(-3.0..3.0),
        kappa: rng.random_range(0.0..3.0),
    }
}

fn random_input(rng: &mut SimRng) -> CarFollowInput {
    CarFollowInput {
        v_back: rng.random_range(0.0..30.0),
        dv: rng.random_range(-10.0..10.0),
        gap: rng.random_range(0.2..100.0),
    }
}

fn oracle_desired_gap(v: f64, dv: f64, p: &IdmParams) -> (f64, f64) {
    let terms = [p.d0, v * p.t_headway, v * dv / (2.0 * p.a_max.sqrt() * p.b.sqrt())];
    (terms.iter().sum(), terms.iter().map(|t| t.abs()).sum())
}

fn oracle_idm(x: &CarFollowInput, p: &IdmParams) -> (f64, f64) {
    let (s_star, _) = oracle_desired_gap(x.v_back, x.dv, p);
    let free = (p.delta * (x.v_back / p.v0).ln()).exp();
    let interaction = (s_star / x.gap) * (s_star / x.gap);
    (p.a_max - p.a_max * free - p.a_max * interaction, p.a_max * (1.0 + free + interaction))
}

fn oracle_tanh(z: f64) -> f64 {
    let e = (-2.0 * z.abs()).exp();
    z.signum() * (1.0 - e) / (1.0 + e)
}

fn oracle_optimal_velocity(gap: f64, p: &VdmParams) -> (f64, f64) {
    let t = p.v2 * oracle_tanh(p.c1 * gap - p.c2);
    (p.v1 + t, p.v1.abs() + t.abs())
}

fn oracle_vdm(x: &CarFollowInput, p: &VdmParams) -> (f64, f64) {
    let (v_opt, scale) = oracle_optimal_velocity(x.gap, p);
    let terms = [v_opt, -x.v_back, p.lambda * x.dv];
    (
        p.kappa * terms.iter().sum::<f64>(),
        p.kappa * (scale + x.v_back.abs() + terms[2].abs()),
    )
}

/// Speed falls linearly until it reaches zero, then the car stands.
fn oracle_longitudinal(s: f64, v: f64, a: f64, dt: f64) -> (f64, f64, f64) {
    let moving = if a < 0.0 { (v / -a).min(dt) } else { dt };
    let v_end = (v + a * moving).max(0.0);
    (s + 0.5 * (v + v_end) * moving, v_end, s.abs() + v * dt + a.abs() * dt * dt)
}

/// Moves the ego in the global lateral coordinate, clamps to the road and
/// picks the lane whose band holds the result.
fn oracle_lateral(d: f64, lane: i32, v_lat: f64, dt: f64, w: f64) -> (f64, i32) {
    let center = |k: i32| -f64::from(k) * w;
    let y = (center(lane) + d + v_lat * dt).clamp(center(LANE_COUNT - 1) - 0.5 * w, 0.5 * w);
    let mut best = lane;
    for k in 0..LANE_COUNT {
        if (y - center(k)).abs() < (y - center(best)).abs() {
            best = k;
        }
    }
    (y - center(best), best)
}

fn overlaps(lo_a: f64, hi_a: f64, lo_b: f64, hi_b: f64) -> bool {
    lo_a.max(lo_b) < hi_a.min(hi_b)
}

fn oracle_reward(a: &EgoAction, next: &SceneState, geo: &RoadGeometry) -> (f64, f64) {
    let ego = &next.ego;
    let v_ref = geo.v_ref;
    let r_vel = if ego.v > v_ref {
        -100.0 * (v_ref - ego.v) * (v_ref - ego.v)
    } else {
        -100.0 * (v_ref - ego.v)
    };
    let r_act = -100.0 * (a.a_long * a.a_long + 2.0 * a.v_lat.abs());
    let on_target = ego.lane == geo.target_lane;
    let r_wrong = if on_target { 0.0 } else { -10_000.0 };
    let into_last_50 = ego.s - (geo.road_end - 50.0);
    let r_end = if on_target || into_last_50 <= 0.0 {
        0.0
    } else if into_last_50 >= 50.0 {
        -1000.0
    } else {
        -1000.0 * into_last_50 / 50.0
    };
    let r_center = -200.0 * ego.d * ego.d;
    let y_ego = ego.d - f64::from(ego.lane) * geo.lane_width;
    let hit = next.others.iter().any(|o| {
        let y_o = -f64::from(o.lane) * geo.lane_width;
        overlaps(
            ego.s - 0.5 * next.ego_dims.length,
            ego.s + 0.5 * next.ego_dims.length,
            o.s - 0.5 * o.length,
            o.s + 0.5 * o.length,
        ) && overlaps(
            y_ego - 0.5 * next.ego_dims.width,
            y_ego + 0.5 * next.ego_dims.width,
            y_o - 0.5 * o.width,
            y_o + 0.5 * o.width,
        )
    });
    let r_coll = if hit { -1.0e6 } else { 0.0 };
    let terms = [r_vel, r_act, r_wrong, r_end, r_center, r_coll];
    (terms.iter().sum(), terms.iter().map(|t| t.abs()).sum())
}

fn random_scene(rng: &mut SimRng) -> SceneState {
    let w = RoadGeometry::default().lane_width;
    let ego = EgoState {
        s: rng.random_range(0.0..260.0),
        d: rng.random_range(-0.5 * w..0.5 * w),
        v: rng.random_range(0.0..30.0),
        lane: rng.random_range(0..LANE_COUNT),
    };
    let other = |rng: &mut SimRng| {
        OtherState::new(
            ego.s + rng.random_range(-8.0..8.0),
            rng.random_range(0.0..20.0),
            rng.random_range(0..LANE_COUNT),
            rng.random_bool(0.5),
        )
    };
    SceneState {
        ego,
        ego_dims: VehicleDims::default(),
        others: [other(rng), other(rng)],
        t: rng.random_range(0.0..20.0),
    }
}

fn random_action(rng: &mut SimRng) -> EgoAction {
    EgoAction::all()[rng.random_range(0..ACTION_COUNT)]
}

fn c1_formulas() -> Verdict {
    let mut rng = stream(1, Domain::Test, 100);
    let mut worst = [0.0f64; 6];
    for _ in 0..1000 {
        let p = random_idm(&mut rng);
        let x = random_input(&mut rng);
        let (want, scale) = oracle_desired_gap(x.v_back, x.dv, &p);
        worst[0] = worst[0].max(rel_err(idm_desired_gap(x.v_back, x.dv, &p), want, scale));
        let (want, scale) = oracle_idm(&x, &p);
        worst[1] = worst[1].max(rel_err(idm_accel(&x, &p).unwrap(), want, scale));

        let q = random_vdm(&mut rng);
        let (want, scale) = oracle_optimal_velocity(x.gap, &q);
        worst[2] = worst[2].max(rel_err(vdm_optimal_velocity(x.gap, &q), want, scale));
        let (want, scale) = oracle_vdm(&x, &q);
        worst[3] = worst[3].max(rel_err(vdm_accel(&x, &q), want, scale));

        let geo = RoadGeometry::default();
        let prev = random_scene(&mut rng);
        let next = random_scene(&mut rng);
        let a = random_action(&mut rng);
        let (want, scale) = oracle_reward(&a, &next, &geo);
        worst[4] = worst[4].max(rel_err(reward(&prev, &a, &next, &RewardWeights::default(), &geo), want, scale));

        let x0 = random_scene(&mut rng);
        let act = EgoAction {
            a_long: rng.random_range(-4.0..4.0),
            v_lat: rng.random_range(-2.0..2.0),
        };
        let accels = [rng.random_range(-8.0..4.0), rng.random_range(-8.0..4.0)];
        let dt = rng.random_range(0.1..3.0);
        let got = step_with(&x0, &act, accels, dt, &geo).unwrap();
        let mut err = 0.0f64;
        let (s, v, scale) = oracle_longitudinal(x0.ego.s, x0.ego.v, act.a_long, dt);
        err = err.max(rel_err(got.ego.s, s, scale)).max(rel_err(got.ego.v, v, scale));
        for (k, o) in x0.others.iter().enumerate() {
            let (s, v, scale) = oracle_longitudinal(o.s, o.v, accels[k], dt);
            err = err
                .max(rel_err(got.others[k].s, s, scale))
                .max(rel_err(got.others[k].v, v, scale));
        }
        let (d, lane) = oracle_lateral(x0.ego.d, x0.ego.lane, act.v_lat, dt, geo.lane_width);
        if lane != got.ego.lane {
            err = f64::INFINITY;
        }
        err = err.max(rel_err(got.ego.d, d, geo.lane_width));
        err = err.max(rel_err(got.t, x0.t + dt, x0.t + dt));
        worst[5] = worst[5].max(err);
    }
    let names = ["desired gap", "idm", "optimal velocity", "vdm", "reward", "transition"];
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(worst.iter().all(|&e| e <= REL_TOL), format!("max rel err: {detail}"))
}

fn c2_equilibria() -> Verdict {
    let mut rng = stream(2, Domain::Test, 100);
    let mut worst_free = 0.0f64;
    let mut worst_stand = 0.0f64;
    let mut vdm_nonzero = 0;
    for _ in 0..1000 {
        let p = random_idm(&mut rng);
        let free = CarFollowInput {
            v_back: p.v0,
            dv: 0.0,
            gap: 1e9,
        };
        worst_free = worst_free.max(idm_accel(&free, &p).unwrap().abs());
        let stand = CarFollowInput {
            v_back: 0.0,
            dv: 0.0,
            gap: p.d0,
        };
        worst_stand = worst_stand.max(idm_accel(&stand, &p).unwrap().abs());
        let q = random_vdm(&mut rng);
        let gap = rng.random_range(0.2..100.0);
        let x = CarFollowInput {
            v_back: vdm_optimal_velocity(gap, &q),
            dv: 0.0,
            gap,
        };
        if vdm_accel(&x, &q) != 0.0 {
            vdm_nonzero += 1;
        }
    }
    verdict(
        worst_free < 1e-6 && worst_stand < 1e-6 && vdm_nonzero == 0,
        format!("idm free-flow {worst_free:.1e}, standstill {worst_stand:.1e}, vdm nonzero {vdm_nonzero}/1000"),
    )
}

fn c3_mle_recovery() -> Verdict {
    let cfg = SynthConfig::default();
    let sigma2 = cfg.noise_sd * cfg.noise_sd;
    let cases = generate_corpus(3, ModelKind::Vdm, 25, 25, &cfg).unwrap();
    let fit_cfg = FitConfig::default();
    let good = cases
        .iter()
        .filter(|c| {
            let theta = match fit_mle(&c.trial, ModelKind::Vdm, &fit_cfg) {
                Ok(f) => f.theta,
                Err(_) => return false,
            };
            trial_mse(&theta, &c.held_out).unwrap() <= 1.5 * sigma2
        })
        .count();
    verdict(good >= 45, format!("{good}/50 held-out MSE <= 1.5 sigma^2"))
}

fn c4_model_comparison() -> Verdict {
    let cfg = SynthConfig::default();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for rep in 0..10u64 {
        let cases = generate_corpus(400 + rep, ModelKind::Vdm, 10, 10, &cfg).unwrap();
        let trials: Vec<_> = cases.iter().map(|c| c.trial.clone()).collect();
        let fit_cfg = FitConfig {
            seed: rep,
            ..Default::default()
        };
        let avg = |model| {
            let report = calibrate(&trials, model, &fit_cfg);
            let mses: Vec<f64> = report
                .all_fits()
                .map(|f| {
                    let case = cases.iter().find(|c| c.trial.trial_id == f.trial_id).unwrap();
                    trial_mse(&f.theta, &case.held_out).unwrap()
                })
                .collect();
            mses.iter().sum::<f64>() / mses.len().max(1) as f64
        };
        let (vdm, idm) = (avg(ModelKind::Vdm), avg(ModelKind::Idm));
        if vdm < idm {
            wins += 1;
        }
        pairs.push(format!("{vdm:.4}/{idm:.4}"));
    }
    verdict(
        wins >= 9,
        format!("vdm < idm in {wins}/10 (avg held-out MSE vdm/idm: {})", pairs.join(" ")),
    )
}

fn c5_outliers() -> Verdict {
    let mut checks = Vec::new();
    // Quartiles by linear interpolation between order statistics.
    checks.push(("1,2,3,4,100", outlier_limit(&[1.0, 2.0, 3.0, 4.0, 100.0]) == 7.0));
    checks.push(("drop 100", filter_outliers(&[1.0, 2.0, 3.0, 4.0, 100.0]) == vec![0, 1, 2, 3]));
    checks.push(("all equal", filter_outliers(&[5.0; 7]) == (0..7).collect::<Vec<_>>()));
    checks.push(("all equal limit", outlier_limit(&[5.0; 7]) == 5.0));
    // n = 4: Q1 = 1.75, Q3 = 3.25, limit 5.5.
    checks.push(("n=4 limit", outlier_limit(&[4.0, 1.0, 3.0, 2.0]) == 5.5));
    checks.push(("n=4 keep", filter_outliers(&[4.0, 1.0, 3.0, 2.0]) == vec![0, 1, 2, 3]));
    // n = 4 with a far point: Q1 = 1.75, Q3 = 4.75, limit 9.25.
    checks.push(("n=4 drop", filter_outliers(&[1.0, 2.0, 3.0, 10.0]) == vec![0, 1, 2]));
    checks.push(("n<4 keeps all", filter_outliers(&[1.0, 1e9]) == vec![0, 1]));
    let failed: Vec<_> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} fixtures exact", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

fn c6_classifier() -> Verdict {
    let mut worst = 0.0f64;
    worst = worst.max((sigmoid(0.0) - 0.5).abs());
    worst = worst.max((sigmoid(3f64.ln()) - 0.75).abs());
    worst = worst.max((sigmoid(-(3f64.ln())) - 0.25).abs());
    let mut rng = stream(6, Domain::Test, 100);
    for _ in 0..1000 {
        let theta: [f64; 7] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let f = YieldFeatures::new(
            rng.random_range(0.0..40.0),
            rng.random_range(-1.75..1.75),
            rng.random_range(0.0..20.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(0.0..20.0),
            rng.random_range(0.0..20.0),
        );
        let z: f64 = (0..7).map(|i| theta[i] * f.0[i]).sum();
        let w = ClassifierWeights::new(theta, 0.85).unwrap();
        worst = worst.max((predict_prob(&w, &f) - 1.0 / (1.0 + (-z).exp())).abs());
    }

    let rows: Vec<LabeledFeatures> = (0..300)
        .map(|_| {
            let f = YieldFeatures::new(
                rng.random_range(0.0..40.0),
                rng.random_range(-1.75..1.75),
                rng.random_range(5.0..15.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(5.0..15.0),
                rng.random_range(5.0..15.0),
            );
            LabeledFeatures {
                features: f,
                label: 0.3 * f.0[4] - f.0[5] + 8.0 > 0.0,
            }
        })
        .collect();
    let acc = [false, true]
        .map(|standardize| {
            let cfg = TrainConfig {
                standardize,
                ..Default::default()
            };
            accuracy(&train(&rows, &cfg).unwrap(), &rows)
        })
        .into_iter()
        .fold(f64::INFINITY, f64::min);

    let boundary = classify(0.85, 0.85) == YieldDecision::NotYield
        && classify(0.85f64.next_up(), 0.85) == YieldDecision::Yield;
    verdict(
        worst <= 1e-12 && acc >= 0.99 && boundary,
        format!("logistic max err {worst:.1e}, separable accuracy {acc:.3}, p = beta -> not_yield: {boundary}"),
    )
}

/// Reward tables indexed like the search's actions; depth two looks up
/// `second[first][a]`.
struct TableToy {
    first: [f64; ACTION_COUNT],
    second: Option<[[f64; ACTION_COUNT]; ACTION_COUNT]>,
}

impl PlanningModel for TableToy {
    type State = Option<usize>;

    fn root(&self, _rng: &mut SimRng) -> Self::State {
        None
    }

    fn is_legal(&self, _state: &Self::State, _action: usize) -> bool {
        true
    }

    fn step(&self, state: &Self::State, action: usize, _rng: &mut SimRng) -> Step<Self::State> {
        match (state, &self.second) {
            (None, second) => Step {
                next: Some(action),
                reward: self.first[action],
                terminal: second.is_none(),
            },
            (Some(first), Some(second)) => Step {
                next: Some(*first),
                reward: second[*first][action],
                terminal: true,
            },
            (Some(_), None) => unreachable!("depth-one toy ends after one step"),
        }
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn c7_mcts() -> Verdict {
    let grid_index = |a_long: f64, v_lat: f64| {
        EgoAction { a_long, v_lat }.index().expect("on the grid")
    };
    let accelerate = grid_index(A_LONG[2], V_LAT[1]);
    let mut depth1 = 0;
    for run in 0..100u64 {
        let mut rng = stream(run, Domain::Test, 71);
        let mut first = [0.0; ACTION_COUNT];
        for (i, r) in first.iter_mut().enumerate() {
            *r = if i == accelerate { 0.0 } else { rng.random_range(-1000.0..-200.0) };
        }
        let toy = TableToy { first, second: None };
        let cfg = MctsConfig {
            iterations: 1000,
            depth: 1,
            ..Default::default()
        };
        let want = argmax(first.iter().copied());
        let got = mcts_search(&toy, &cfg, &mut stream(run, Domain::Test, 72));
        if got.action_index == want && got.action == EgoAction::all()[accelerate] {
            depth1 += 1;
        }
    }
    let mut depth2 = 0;
    for run in 0..100u64 {
        let mut rng = stream(run, Domain::Test, 73);
        let first: [f64; ACTION_COUNT] = std::array::from_fn(|_| rng.random_range(-100.0..0.0));
        let second: [[f64; ACTION_COUNT]; ACTION_COUNT] =
            std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-100.0..0.0)));
        let cfg = MctsConfig {
            iterations: 10_000,
            depth: 2,
            ..Default::default()
        };
        let q = (0..ACTION_COUNT).map(|a| {
            first[a] + cfg.gamma * second[a].iter().copied().fold(f64::NEG_INFINITY, f64::max)
        });
        let want = argmax(q);
        let toy = TableToy {
            first,
            second: Some(second),
        };
        if mcts_search(&toy, &cfg, &mut stream(run, Domain::Test, 74)).action_index == want {
            depth2 += 1;
        }
    }
    verdict(
        depth1 == 100 && depth2 >= 95,
        format!("depth-1 {depth1}/100, depth-2 {depth2}/100 match exhaustive expectimax"),
    )
}

fn agent(kind: PredictorKind) -> Agent {
    Agent {
        planner: PlannerConfig::default(),
        predictor: kind.model(),
        classifier: ClassifierWeights::pretrained(),
    }
}

fn c8_closed_loop() -> Verdict {
    let cfg = ScenarioGenConfig::default();
    let (vdm_agent, idm_agent) = (agent(PredictorKind::Vdm), agent(PredictorKind::IdmFixed));
    let mut first_vdm = 0.0;
    let mut not_worse = 0;
    let mut rates = Vec::new();
    for rep in 0..10u64 {
        let scenarios = generate_scenarios(100, &cfg, rep).unwrap();
        let rate = |a: &Agent| {
            let traces = run_batch(&scenarios, a, rep);
            traces.iter().filter(|t| t.merged()).count() as f64 / traces.len() as f64
        };
        let (vdm, idm) = (rate(&vdm_agent), rate(&idm_agent));
        if rep == 0 {
            first_vdm = vdm;
        }
        if idm <= vdm {
            not_worse += 1;
        }
        rates.push(format!("{vdm:.2}/{idm:.2}"));
    }
    verdict(
        first_vdm >= 0.90 && not_worse >= 9,
        format!(
            "vdm success {first_vdm:.2} on batch 0; idm-fixed <= vdm in {not_worse}/10 (vdm/idm: {})",
            rates.join(" ")
        ),
    )
}

fn c9_replay() -> Verdict {
    let cfg = ScenarioGenConfig::default();
    let trials = synthetic_replay_trials(100, &cfg, 0).unwrap();
    let (m, _) = replay_evaluate(&trials, &agent(PredictorKind::Vdm), &cfg.geometry, 0).unwrap();

    // Recordings made by the predictor's own model: the planner's
    // uninformative classifier keeps the rear car in the not-yielding class.
    let self_cfg = ScenarioGenConfig {
        p_yield: 0.0,
        ..Default::default()
    };
    let predictor = PredictorKind::Vdm.model();
    let recorded: Vec<ReplayTrial> = (0..100)
        .map(|i| {
            let sc = generate_scenario(i, &self_cfg, 9).unwrap();
            let mut x = sc.initial;
            let mut frames = vec![x];
            for _ in 0..sc.steps() {
                x = transition(&x, &EgoAction::HOLD, &predictor, sc.dt, &sc.geometry).unwrap();
                frames.push(x);
            }
            ReplayTrial {
                trial_id: format!("self-{i}"),
                frames,
            }
        })
        .collect();
    let self_agent = Agent {
        planner: PlannerConfig {
            mcts: MctsConfig {
                iterations: 200,
                ..Default::default()
            },
            ..Default::default()
        },
        predictor: predictor.clone(),
        classifier: ClassifierWeights::uninformative(0.85),
    };
    let (own, _) = replay_evaluate(&recorded, &self_agent, &self_cfg.geometry, 0).unwrap();
    let own_err = own.a_error.max(own.v_error).max(own.x_error);
    verdict(
        m.success_rate() >= 0.90 && own_err < 1e-9,
        format!(
            "success {}/{} (errors a {:.3} v {:.3} x {:.3}); self-consistent max error {own_err:.1e}",
            m.success, m.total, m.a_error, m.v_error, m.x_error
        ),
    )
}

fn lanechange(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_lanechange"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
        .status
        .success()
}

fn outputs(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            files.extend(outputs(&p));
        } else if p.file_name().is_some_and(|n| n != "manifest.toml") {
            files.push(p);
        }
    }
    files.sort();
    files
}

fn c10_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("fast.toml"), "[planner]\niterations = 200\n[fit]\nn_starts = 4\n").unwrap();
    let runs: [&[&str]; 7] = [
        &["generate", "trials", "--successful", "4", "--unsuccessful", "4", "--out", "g1"],
        &["calibrate", "g1/trials.csv", "--config", "fast.toml", "--out", "c1"],
        &["generate", "classifier", "--episodes", "100", "--out", "g2"],
        &["train-classifier", "g2/classifier_train.csv", "--out", "t1"],
        &["simulate", "-n", "5", "--predictor", "both", "--config", "fast.toml", "--seed", "3", "--out", "s1"],
        &["generate", "replay", "-n", "5", "--seed", "4", "--out", "g3"],
        &["evaluate", "g3/replay.csv", "--predictor", "both", "--config", "fast.toml", "--out", "e1"],
    ];
    for args in runs {
        if !lanechange(args, root) {
            return verdict(false, format!("command failed: {}", args.join(" ")));
        }
    }
    let mut compared = 0;
    for out in ["g1", "c1", "g2", "t1", "s1", "g3", "e1"] {
        let again = format!("{out}-again");
        let manifest = format!("{out}/manifest.toml");
        if !lanechange(&["rerun", &manifest, "--out", &again], root) {
            return verdict(false, format!("rerun of {out} failed"));
        }
        let first = outputs(&root.join(out));
        let second = outputs(&root.join(&again));
        if first.len() != second.len() || first.is_empty() {
            return verdict(false, format!("{out}: {} vs {} files", first.len(), second.len()));
        }
        for (a, b) in first.iter().zip(&second) {
            if std::fs::read(a).unwrap() != std::fs::read(b).unwrap() {
                return verdict(false, format!("{} differs on rerun", a.display()));
            }
            compared += 1;
        }
    }
    verdict(true, format!("{compared} output files bit-identical across 7 reruns"))
}

#[test]
fn acceptance() {
    let s = Duration::from_secs;
    let results = [
        run(1, "formula exactness", s(5), c1_formulas),
        run(2, "equilibrium invariants", s(1), c2_equilibria),
        run(3, "MLE recovery", s(120), c3_mle_recovery),
        run(4, "model comparison direction", s(300), c4_model_comparison),
        run(5, "outlier rule", s(1), c5_outliers),
        run(6, "classifier", s(5), c6_classifier),
        run(7, "MCTS correctness", s(60), c7_mcts),
        run(8, "closed-loop success", s(600), c8_closed_loop),
        run(9, "replay harness", s(300), c9_replay),
        run(10, "determinism", s(120), c10_determinism),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    assert_eq!(passed, results.len(), "{passed}/{} acceptance criteria passed", results.len());
}

use std::sync::OnceLock;

use lanechange_core::classifier::ClassifierWeights;
use lanechange_core::frenet::ACTION_COUNT;
use lanechange_core::planner::{plan, BeliefState, MctsConfig, PlannerConfig, PredictorKind, RewardWeights};
use lanechange_core::seeding::{stream, Domain};
use lanechange_core::sim::{self, replay, script, Agent, EpisodeTrace, Outcome, ScenarioGenConfig};
use proptest::prelude::*;

fn agent(iterations: usize) -> Agent {
    Agent {
        planner: PlannerConfig {
            mcts: MctsConfig {
                iterations,
                ..Default::default()
            },
            ..Default::default()
        },
        predictor: PredictorKind::Vdm.model(),
        classifier: ClassifierWeights::pretrained(),
    }
}

fn batch() -> &'static [EpisodeTrace] {
    static TRACES: OnceLock<Vec<EpisodeTrace>> = OnceLock::new();
    TRACES.get_or_init(|| {
        let scenarios = sim::generate_scenarios(12, &ScenarioGenConfig::default(), 7).unwrap();
        sim::run_batch(&scenarios, &agent(300), 7)
    })
}

#[test]
fn merged_episodes_end_in_the_target_lane_without_contact() {
    let scenarios = sim::generate_scenarios(12, &ScenarioGenConfig::default(), 7).unwrap();
    let mut merged = 0;
    for (sc, trace) in scenarios.iter().zip(batch()) {
        if trace.outcome != Outcome::Merged {
            continue;
        }
        merged += 1;
        assert_eq!(trace.final_state.ego.lane, sc.geometry.target_lane);
        for step in &trace.steps {
            assert!(!step.state.ego_collides(&sc.geometry), "episode {} at t={}", trace.scenario, step.state.t);
        }
        assert!(!trace.final_state.ego_collides(&sc.geometry));
    }
    assert!(merged > 0);
}

#[test]
fn zero_reward_picks_actions_uniformly() {
    let sc = sim::generate_scenario(0, &ScenarioGenConfig::default(), 0).unwrap();
    let mut x = sc.initial;
    // Far from the road edge so every action is legal.
    x.ego.d = 0.0;
    let cfg = PlannerConfig {
        mcts: MctsConfig {
            iterations: 90,
            depth: 2,
            ..Default::default()
        },
        reward: RewardWeights::zero(),
        ..Default::default()
    };
    let traffic = PredictorKind::Vdm.model();
    let n = 1800;
    let mut counts = [0usize; ACTION_COUNT];
    for i in 0..n {
        let mut rng = stream(1, Domain::Test, i);
        let out = plan(&x, &BeliefState::uniform(), &cfg, &traffic, &sc.geometry, &mut rng);
        counts[out.action.index().unwrap()] += 1;
    }
    let expected = n as f64 / ACTION_COUNT as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 0.999 quantile of chi-squared with 8 degrees of freedom.
    assert!(chi2 < 26.12, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn replay_leaves_recordings_untouched() {
    let cfg = ScenarioGenConfig::default();
    let trials = script::synthetic_replay_trials(4, &cfg, 2).unwrap();
    let before = trials.clone();
    let (first, _) = replay::replay_evaluate(&trials, &agent(100), &cfg.geometry, 3).unwrap();
    assert_eq!(trials, before);
    let (second, _) = replay::replay_evaluate(&trials, &agent(100), &cfg.geometry, 3).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.total, 4);
}

#[test]
fn metrics_file_has_one_row_per_label() {
    let m = sim::aggregate(batch()).unwrap();
    let mut buf = Vec::new();
    sim::io::write_metrics(&mut buf, &[("vdm", m), ("idm-fixed", m)]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "label,success,total,success_rate,a_error,v_error,x_error");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with(&format!("vdm,{},12,", m.success)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregate_ignores_episode_order(order in Just((0..12usize).collect::<Vec<_>>()).prop_shuffle()) {
        let traces = batch();
        let shuffled: Vec<EpisodeTrace> = order.iter().map(|&i| traces[i].clone()).collect();
        prop_assert_eq!(sim::aggregate(&shuffled).unwrap(), sim::aggregate(traces).unwrap());
    }
}

//! Open-loop UCT over the nine-action set.
//!
//! Nodes are identified by the action sequence from the root; every iteration
//! re-simulates from a fresh root sample, so stochastic models and sampled
//! hidden states need no per-node state storage.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frenet::{EgoAction, ACTION_COUNT};
use crate::seeding::SimRng;

pub struct Step<S> {
    pub next: S,
    pub reward: f64,
    pub terminal: bool,
}

/// A generative model the search can plan in.
pub trait PlanningModel: Sync {
    type State: Clone;

    /// Draws the root state for one simulation.
    fn root(&self, rng: &mut SimRng) -> Self::State;
    fn is_legal(&self, state: &Self::State, action: usize) -> bool;
    fn step(&self, state: &Self::State, action: usize, rng: &mut SimRng) -> Step<Self::State>;

    /// Action the hold rollout policy takes after `last_action`.
    fn hold_action(&self, _state: &Self::State, last_action: usize) -> usize {
        last_action
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutPolicy {
    /// Uniform over the legal actions.
    Random,
    /// Continue the maneuver that led into the rollout, as defined by
    /// [`PlanningModel::hold_action`]; uniform when that is illegal.
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeliefMode {
    /// The rear car's bit is `p > beta` for the whole search.
    Threshold,
    /// The rear car's bit is drawn from the belief for every simulation.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MctsConfig {
    pub iterations: usize,
    pub depth: usize,
    pub dt: f64,
    pub gamma: f64,
    pub ucb_c: f64,
    pub rollout_policy: RolloutPolicy,
    pub belief_mode: BeliefMode,
    /// Independent trees whose root statistics are summed.
    pub trees: usize,
    /// Actions the search may consider, by index.
    pub action_mask: [bool; ACTION_COUNT],
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            depth: 10,
            dt: 1.0,
            gamma: 0.95,
            ucb_c: std::f64::consts::SQRT_2,
            rollout_policy: RolloutPolicy::Hold,
            belief_mode: BeliefMode::Threshold,
            trees: 1,
            action_mask: [true; ACTION_COUNT],
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 || self.depth < 1 || self.trees < 1 {
            return Err(Error::Config("iterations, depth and trees must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.ucb_c >= 0.0 && self.ucb_c.is_finite()) {
            return Err(Error::Config("ucb_c must be non-negative".into()));
        }
        if !self.action_mask.iter().any(|&m| m) {
            return Err(Error::Config("action mask leaves no action".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ActionStats {
    pub visits: u64,
    pub total_return: f64,
}

impl ActionStats {
    pub fn mean(&self) -> f64 {
        if self.visits == 0 {
            f64::NEG_INFINITY
        } else {
            self.total_return / self.visits as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub action: EgoAction,
    pub action_index: usize,
    pub root: [ActionStats; ACTION_COUNT],
}

struct Node {
    stats: ActionStats,
    children: [Option<usize>; ACTION_COUNT],
    /// Expansion and tie-break order of the actions below this node.
    order: [usize; ACTION_COUNT],
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn new_node<R: Rng>(&mut self, rng: &mut R) -> usize {
        let mut order: [usize; ACTION_COUNT] = std::array::from_fn(|i| i);
        order.shuffle(rng);
        self.nodes.push(Node {
            stats: ActionStats::default(),
            children: [None; ACTION_COUNT],
            order,
        });
        self.nodes.len() - 1
    }
}

fn legal_actions<M: PlanningModel>(model: &M, cfg: &MctsConfig, state: &M::State) -> Vec<usize> {
    (0..ACTION_COUNT)
        .filter(|&a| cfg.action_mask[a] && model.is_legal(state, a))
        .collect()
}

/// UCB1 over min-max normalized child means; ties go to the node's order.
fn select_child(tree: &Tree, node: usize, legal: &[usize], c: f64) -> usize {
    let n = &tree.nodes[node];
    let kids: Vec<(usize, ActionStats)> = n
        .order
        .iter()
        .filter(|a| legal.contains(a))
        .filter_map(|&a| n.children[a].map(|id| (a, tree.nodes[id].stats)))
        .collect();
    let (lo, hi) = kids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, s)| {
        (lo.min(s.mean()), hi.max(s.mean()))
    });
    let parent_visits: u64 = kids.iter().map(|(_, s)| s.visits).sum();
    let ln_n = (parent_visits.max(1) as f64).ln();
    let mut best = (f64::NEG_INFINITY, kids[0].0);
    for (a, s) in &kids {
        let q = if hi > lo { (s.mean() - lo) / (hi - lo) } else { 0.5 };
        let score = q + c * (ln_n / s.visits as f64).sqrt();
        if score > best.0 {
            best = (score, *a);
        }
    }
    best.1
}

fn rollout<M: PlanningModel>(
    model: &M,
    cfg: &MctsConfig,
    mut state: M::State,
    last_action: usize,
    depth_left: usize,
    rng: &mut SimRng,
) -> f64 {
    let mut ret = 0.0;
    let mut discount = 1.0;
    for _ in 0..depth_left {
        let legal = legal_actions(model, cfg, &state);
        if legal.is_empty() {
            break;
        }
        let held = model.hold_action(&state, last_action);
        let a = match cfg.rollout_policy {
            RolloutPolicy::Hold if legal.contains(&held) => held,
            _ => legal[rng.random_range(0..legal.len())],
        };
        let step = model.step(&state, a, rng);
        ret += discount * step.reward;
        discount *= cfg.gamma;
        if step.terminal {
            break;
        }
        state = step.next;
    }
    ret
}

fn grow<M: PlanningModel>(model: &M, cfg: &MctsConfig, rng: &mut SimRng) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    let root = tree.new_node(rng);
    for _ in 0..cfg.iterations {
        let mut state = model.root(rng);
        let mut node = root;
        let mut path = Vec::with_capacity(cfg.depth);
        let mut rewards = Vec::with_capacity(cfg.depth);
        let mut tail = 0.0;
        for depth in 0..cfg.depth {
            let legal = legal_actions(model, cfg, &state);
            if legal.is_empty() {
                break;
            }
            let n = &tree.nodes[node];
            let fresh = n
                .order
                .iter()
                .copied()
                .find(|&a| legal.contains(&a) && n.children[a].is_none());
            let (action, expanded) = match fresh {
                Some(a) => (a, true),
                None => (select_child(&tree, node, &legal, cfg.ucb_c), false),
            };
            let child = match tree.nodes[node].children[action] {
                Some(id) => id,
                None => {
                    let id = tree.new_node(rng);
                    tree.nodes[node].children[action] = Some(id);
                    id
                }
            };
            let step = model.step(&state, action, rng);
            path.push(child);
            rewards.push(step.reward);
            node = child;
            if step.terminal {
                break;
            }
            state = step.next;
            if expanded {
                tail = rollout(model, cfg, state, action, cfg.depth - depth - 1, rng);
                break;
            }
        }
        let mut ret = tail;
        for (&id, &r) in path.iter().zip(&rewards).rev() {
            ret = r + cfg.gamma * ret;
            let s = &mut tree.nodes[id].stats;
            s.visits += 1;
            s.total_return += ret;
        }
        tree.nodes[root].stats.visits += 1;
    }
    tree
}

fn root_stats(tree: &Tree) -> [ActionStats; ACTION_COUNT] {
    let root = &tree.nodes[0];
    std::array::from_fn(|a| root.children[a].map_or_else(ActionStats::default, |id| tree.nodes[id].stats))
}

/// Plans from the model's root distribution. Always returns an action; with
/// nothing legal it falls back to the first action allowed by the mask.
pub fn mcts_search<M: PlanningModel>(model: &M, cfg: &MctsConfig, rng: &mut SimRng) -> SearchResult {
    let seeds: Vec<u64> = (0..cfg.trees).map(|_| rng.random()).collect();
    let trees: Vec<Tree> = seeds
        .par_iter()
        .map(|&seed| grow(model, cfg, &mut SimRng::seed_from_u64(seed)))
        .collect();

    let mut root = [ActionStats::default(); ACTION_COUNT];
    for tree in &trees {
        for (acc, s) in root.iter_mut().zip(root_stats(tree)) {
            acc.visits += s.visits;
            acc.total_return += s.total_return;
        }
    }
    let order = trees[0].nodes[0].order;
    let mut best: Option<usize> = None;
    for &a in &order {
        let s = root[a];
        if s.visits == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let t = root[b];
                s.visits > t.visits || (s.visits == t.visits && s.mean() > t.mean())
            }
        };
        if better {
            best = Some(a);
        }
    }
    let index = best.unwrap_or_else(|| {
        (0..ACTION_COUNT)
            .find(|&a| cfg.action_mask[a])
            .unwrap_or(0)
    });
    SearchResult {
        action: EgoAction::from_index(index),
        action_index: index,
        root,
    }
}

/// Depth-limited expectimax by full enumeration, for deterministic models.
pub fn exhaustive_best<M: PlanningModel>(model: &M, cfg: &MctsConfig, rng: &mut SimRng) -> (usize, f64) {
    fn value<M: PlanningModel>(
        model: &M,
        cfg: &MctsConfig,
        state: &M::State,
        depth: usize,
        rng: &mut SimRng,
    ) -> f64 {
        let legal = legal_actions(model, cfg, state);
        if depth == 0 || legal.is_empty() {
            return 0.0;
        }
        legal
            .into_iter()
            .map(|a| q_value(model, cfg, state, a, depth, rng))
            .fold(f64::NEG_INFINITY, f64::max)
    }
    fn q_value<M: PlanningModel>(
        model: &M,
        cfg: &MctsConfig,
        state: &M::State,
        a: usize,
        depth: usize,
        rng: &mut SimRng,
    ) -> f64 {
        let step = model.step(state, a, rng);
        let future = if step.terminal {
            0.0
        } else {
            value(model, cfg, &step.next, depth - 1, rng)
        };
        step.reward + cfg.gamma * future
    }
    let root = model.root(rng);
    legal_actions(model, cfg, &root)
        .into_iter()
        .map(|a| (a, q_value(model, cfg, &root, a, cfg.depth, rng)))
        .fold((usize::MAX, f64::NEG_INFINITY), |best, (a, q)| if q > best.1 { (a, q) } else { best })
}

//! Local search over benchmark objectives, the synthetic ground truth that
//! ties search quality to tournament scores, and the restart policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Hash256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Objective {
    Sphere,
    Rastrigin,
    Rosenbrock,
}

impl Objective {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Objective::Sphere => x.iter().map(|v| v * v).sum(),
            Objective::Rastrigin => {
                let a = 10.0;
                a * x.len() as f64 + x.iter().map(|v| v * v - a * (2.0 * std::f64::consts::PI * v).cos()).sum::<f64>()
            }
            Objective::Rosenbrock => {
                x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
            }
        }
    }

    /// Global minimum value; all three built-ins reach 0.
    pub fn minimum(self) -> f64 {
        0.0
    }

    pub fn optimum(self, dimension: usize) -> Vec<f64> {
        match self {
            Objective::Sphere | Objective::Rastrigin => vec![0.0; dimension],
            Objective::Rosenbrock => vec![1.0; dimension],
        }
    }

    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            Objective::Sphere => (-5.0, 5.0),
            Objective::Rastrigin => (-5.12, 5.12),
            Objective::Rosenbrock => (-2.048, 2.048),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchSpaceError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("bounds must be finite with lower < upper")]
    BadBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SearchSpace {
    pub objective: Objective,
    pub dimension: usize,
    pub lower: f64,
    pub upper: f64,
}

impl SearchSpace {
    pub fn new(objective: Objective, dimension: usize) -> Self {
        let (lower, upper) = objective.default_bounds();
        Self { objective, dimension, lower, upper }
    }

    pub fn validate(&self) -> Result<(), SearchSpaceError> {
        if self.dimension == 0 {
            return Err(SearchSpaceError::ZeroDimension);
        }
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(SearchSpaceError::BadBounds);
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Distance of `x` from the global minimum in objective value.
    pub fn gap(&self, x: &[f64]) -> f64 {
        (self.eval(x) - self.objective.minimum()).max(0.0)
    }

    pub fn random_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dimension).map(|_| rng.gen_range(self.lower..=self.upper)).collect()
    }

    fn clip(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone)]
pub struct LocalSearchState {
    pub point: Vec<f64>,
    pub value: f64,
    /// Best since the last restart.
    pub best_point: Vec<f64>,
    pub best_value: f64,
    /// Best over the node's whole lifetime, across restarts.
    pub best_ever: f64,
    pub step_scale: f64,
    pub iterations: u64,
    pub restarts: u64,
    rng: ChaCha8Rng,
}

impl LocalSearchState {
    /// Starts at a uniformly random point drawn from the node's own seed.
    pub fn new(space: &SearchSpace, step_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = space.random_point(&mut rng);
        Self::starting_at(space, point, step_scale, rng)
    }

    pub fn from_point(space: &SearchSpace, point: Vec<f64>, step_scale: f64, seed: u64) -> Self {
        Self::starting_at(space, point, step_scale, ChaCha8Rng::seed_from_u64(seed))
    }

    fn starting_at(space: &SearchSpace, point: Vec<f64>, step_scale: f64, rng: ChaCha8Rng) -> Self {
        let value = space.eval(&point);
        Self {
            best_point: point.clone(),
            best_value: value,
            best_ever: value,
            point,
            value,
            step_scale,
            iterations: 0,
            restarts: 0,
            rng,
        }
    }

    /// Moves to a fresh uniform point; the lifetime best is kept.
    pub fn restart(&mut self, space: &SearchSpace) {
        self.point = space.random_point(&mut self.rng);
        self.value = space.eval(&self.point);
        self.best_point = self.point.clone();
        self.best_value = self.value;
        self.best_ever = self.best_ever.min(self.value);
        self.restarts += 1;
    }
}

/// Hill climbing: perturb every coordinate with Gaussian noise of the step
/// scale, clip to the bounds, keep the candidate only if strictly better.
pub fn step_local_search(state: &mut LocalSearchState, space: &SearchSpace, steps: u64) {
    let noise = Normal::new(0.0, state.step_scale).expect("step scale is finite and >= 0");
    for _ in 0..steps {
        let candidate: Vec<f64> = state.point.iter().map(|v| space.clip(v + noise.sample(&mut state.rng))).collect();
        let value = space.eval(&candidate);
        state.iterations += 1;
        if value < state.value {
            state.point = candidate;
            state.value = value;
            if value < state.best_value {
                state.best_value = value;
                state.best_point = state.point.clone();
            }
            state.best_ever = state.best_ever.min(value);
        }
    }
}

/// Hidden ground truth for real-time domains: a smooth deterministic signal
/// per tick, and a deterministic map for dataset inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthProcess {
    pub phase: f64,
}

impl TruthProcess {
    pub fn from_seed(seed: u64) -> Self {
        Self { phase: (seed % 10_000) as f64 / 10_000.0 * std::f64::consts::TAU }
    }

    pub fn at_tick(&self, tick: u64, dimension: usize) -> Vec<f64> {
        let t = tick as f64;
        (0..dimension)
            .map(|i| (0.7 * t + self.phase + i as f64).sin() + 0.5 * (0.31 * t + 2.0 * i as f64).cos())
            .collect()
    }

    /// Ground-truth outputs for one dataset input row.
    pub fn map_row(&self, row: &[f64], dimension: usize) -> Vec<f64> {
        let s: f64 = row.iter().enumerate().map(|(j, x)| (x + self.phase + j as f64).sin()).sum();
        (0..dimension).map(|i| s * (1.0 + i as f64) / (1.0 + row.len() as f64)).collect()
    }
}

fn noise_rng(agent_seed: &Hash256, context: &[u8]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(Hash256::digest_parts(&[b"signal-noise/", agent_seed.as_bytes(), context]).0)
}

/// Prediction error scales with the agent's objective gap: a point at the
/// global optimum predicts exactly, worse points predict with noise of
/// variance `gap`.
fn noisy(truth: Vec<f64>, gap: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sd = gap.sqrt();
    truth
        .into_iter()
        .map(|t| {
            let z: f64 = StandardNormal.sample(rng);
            t + sd * z
        })
        .collect()
}

/// Real-time signal of an agent at `point` for `tick`.
pub fn emit_prediction(
    space: &SearchSpace,
    point: &[f64],
    truth: &TruthProcess,
    agent_seed: &Hash256,
    tick: u64,
    dimension: usize,
) -> Vec<f64> {
    let mut rng = noise_rng(agent_seed, &tick.to_be_bytes());
    noisy(truth.at_tick(tick, dimension), space.gap(point), &mut rng)
}

/// Dataset signal: the agent's map evaluated on every input row, flattened.
pub fn emit_dataset_outputs(
    space: &SearchSpace,
    point: &[f64],
    truth: &TruthProcess,
    agent_seed: &Hash256,
    rows: &[Vec<f64>],
    dimension: usize,
) -> Vec<f64> {
    let gap = space.gap(point);
    rows.iter()
        .enumerate()
        .flat_map(|(i, row)| {
            let mut rng = noise_rng(agent_seed, &(i as u64).to_be_bytes());
            noisy(truth.map_row(row, dimension), gap, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RestartMode {
    FeedbackRestart,
    NeverRestart,
    AlwaysRestart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RestartPolicy {
    pub mode: RestartMode,
    /// Consecutive settled tournaments in the bottom quantile before restarting.
    pub window: usize,
    pub quantile: f64,
}

impl Default for RestartPolicy {
    fn default() -> Self {
        Self { mode: RestartMode::FeedbackRestart, window: 2, quantile: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartDecision {
    Keep,
    Restart,
}

/// `history` holds `(rank, field size)` per settled tournament, oldest
/// first, ranks starting at 1. A rank counts as underperforming when
/// `rank / field > 1 - quantile`.
pub fn decide_restart(policy: &RestartPolicy, history: &[(usize, usize)]) -> RestartDecision {
    match policy.mode {
        RestartMode::NeverRestart => RestartDecision::Keep,
        RestartMode::AlwaysRestart => RestartDecision::Restart,
        RestartMode::FeedbackRestart => {
            let window = policy.window.max(1);
            if history.len() < window {
                return RestartDecision::Keep;
            }
            let bad = history[history.len() - window..]
                .iter()
                .all(|&(rank, field)| field > 0 && rank as f64 / field as f64 > 1.0 - policy.quantile);
            if bad {
                RestartDecision::Restart
            } else {
                RestartDecision::Keep
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{BuiltinError, ErrorMetric};

    fn space() -> SearchSpace {
        SearchSpace::new(Objective::Sphere, 2)
    }

    #[test]
    fn objectives_at_known_points() {
        assert_eq!(Objective::Sphere.eval(&[3.0, 4.0]), 25.0);
        assert!(Objective::Rastrigin.eval(&[0.0, 0.0]).abs() < 1e-12);
        // one coordinate at 1: 10*2 + (1 - 10 cos 2pi) + (0 - 10) = 1
        assert!((Objective::Rastrigin.eval(&[1.0, 0.0]) - 1.0).abs() < 1e-9);
        assert_eq!(Objective::Rosenbrock.eval(&[1.0, 1.0, 1.0]), 0.0);
        assert_eq!(Objective::Rosenbrock.eval(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn zero_steps_is_identity() {
        let mut s = LocalSearchState::new(&space(), 0.1, 3);
        let before = (s.point.clone(), s.value, s.iterations);
        step_local_search(&mut s, &space(), 0);
        assert_eq!(before, (s.point.clone(), s.value, s.iterations));
    }

    #[test]
    fn hill_climbing_never_worsens_and_is_reproducible() {
        let mut a = LocalSearchState::new(&space(), 0.3, 11);
        let start = a.value;
        step_local_search(&mut a, &space(), 10_000);
        assert!(a.best_value <= start);
        assert!(a.best_value < 1e-2);
        let mut b = LocalSearchState::new(&space(), 0.3, 11);
        step_local_search(&mut b, &space(), 10_000);
        assert_eq!(a.point, b.point);
        assert!(a.point.iter().all(|v| (-5.0..=5.0).contains(v)));
    }

    #[test]
    fn restart_stays_in_bounds_and_keeps_lifetime_best() {
        let sp = SearchSpace::new(Objective::Rastrigin, 2);
        let mut s = LocalSearchState::new(&sp, 0.1, 5);
        step_local_search(&mut s, &sp, 500);
        let best = s.best_ever;
        s.restart(&sp);
        assert!(s.point.iter().all(|v| (sp.lower..=sp.upper).contains(v)));
        assert!(s.best_ever <= best);
        assert_eq!(s.restarts, 1);
    }

    #[test]
    fn optimum_predicts_exactly() {
        let truth = TruthProcess::from_seed(9);
        let opt = Objective::Sphere.optimum(2);
        let p = emit_prediction(&space(), &opt, &truth, &Hash256::digest(b"a"), 4, 3);
        assert_eq!(p, truth.at_tick(4, 3));
        let rows: Vec<Vec<f64>> = Vec::new();
        assert!(emit_dataset_outputs(&space(), &opt, &truth, &Hash256::digest(b"a"), &rows, 1).is_empty());
    }

    #[test]
    fn better_point_has_lower_expected_error() {
        let truth = TruthProcess::from_seed(1);
        let (near, far) = (vec![0.1, 0.1], vec![2.0, 2.0]);
        let mean_err = |p: &[f64], seed: &[u8]| {
            let agent = Hash256::digest(seed);
            (0..1000u64)
                .map(|t| {
                    let pred = emit_prediction(&space(), p, &truth, &agent, t, 1);
                    BuiltinError::MeanSquaredError.error(&pred, &truth.at_tick(t, 1)).unwrap()
                })
                .sum::<f64>()
                / 1000.0
        };
        let (e_near, e_far) = (mean_err(&near, b"n"), mean_err(&far, b"f"));
        assert!(e_near < e_far);
        // expected error equals the objective gap
        assert!((e_far - space().gap(&far)).abs() / space().gap(&far) < 0.15);
    }

    #[test]
    fn restart_policy_examples() {
        let p = RestartPolicy { mode: RestartMode::FeedbackRestart, window: 2, quantile: 0.25 };
        assert_eq!(decide_restart(&p, &[(8, 8), (7, 8)]), RestartDecision::Restart);
        assert_eq!(decide_restart(&p, &[(8, 8), (1, 8)]), RestartDecision::Keep);
        assert_eq!(decide_restart(&p, &[(6, 8), (8, 8)]), RestartDecision::Keep);
        assert_eq!(decide_restart(&p, &[(8, 8)]), RestartDecision::Keep);
        let never = RestartPolicy { mode: RestartMode::NeverRestart, ..p };
        assert_eq!(decide_restart(&never, &[(8, 8), (8, 8), (8, 8)]), RestartDecision::Keep);
        let always = RestartPolicy { mode: RestartMode::AlwaysRestart, ..p };
        assert_eq!(decide_restart(&always, &[]), RestartDecision::Restart);
    }
}

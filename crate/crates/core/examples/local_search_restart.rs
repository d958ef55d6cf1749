//! Hill climbing on 2-D Rastrigin with and without tournament-feedback
//! restarts, driven by a synthetic rank history.

use scynet::searcher::{
    decide_restart, step_local_search, LocalSearchState, Objective, RestartDecision, RestartMode, RestartPolicy,
    SearchSpace,
};

fn run(policy: RestartPolicy, seed: u64) -> (f64, u64) {
    let space = SearchSpace::new(Objective::Rastrigin, 2);
    let mut state = LocalSearchState::new(&space, 0.05, seed);
    let mut history = Vec::new();
    for round in 0..20 {
        step_local_search(&mut state, &space, 200);
        // pretend the field has 16 agents and this one ranks by its current value
        let rank = ((state.value / 20.0).clamp(0.0, 1.0) * 15.0) as usize + 1;
        history.push((rank, 16));
        if decide_restart(&policy, &history) == RestartDecision::Restart {
            println!("    seed {seed} round {round}: restart from value {:.3}", state.value);
            state.restart(&space);
            history.clear();
        }
    }
    (state.best_ever, state.restarts)
}

fn main() {
    for mode in [RestartMode::NeverRestart, RestartMode::FeedbackRestart] {
        let policy = RestartPolicy { mode, ..RestartPolicy::default() };
        println!("{mode:?}");
        for seed in 1..=4 {
            let (best, restarts) = run(policy, seed);
            println!("  seed {seed}: best_ever {best:.4} after {restarts} restarts");
        }
    }
}

mod common;

use common::{check_late_case, run_deadline_script, Deadline};

use scynet::config::ProblemType;

#[test]
fn on_time_script_has_no_disqualifications() {
    for problem in [ProblemType::RealTime, ProblemType::Dataset] {
        let out = run_deadline_script(problem, None);
        assert!(out.disqualifications().is_empty(), "{problem:?}: {:?}", out.disqualifications());
    }
}

#[test]
fn late_challenger_dataset() {
    check_late_case(Deadline::ChallengerSubmission).unwrap();
}

#[test]
fn late_tick_signal() {
    check_late_case(Deadline::TickSignal).unwrap();
}

#[test]
fn late_tick_signal_key() {
    check_late_case(Deadline::TickSignalKey).unwrap();
}

#[test]
fn late_dataset_key() {
    check_late_case(Deadline::DatasetKey).unwrap();
}

#[test]
fn late_dataset_signal_key() {
    check_late_case(Deadline::DatasetSignalKey).unwrap();
}

#[test]
fn late_ranking() {
    check_late_case(Deadline::Ranking).unwrap();
}

use std::collections::BTreeMap;

use agent_core::env::{environment_reset, environment_step, Task};
use agent_core::tasks::ipd::{payoff, players, IpdTask, Move};
use agent_core::types::Action;

const TABLE: [(Move, Move, (f64, f64)); 4] = [
    (Move::Cooperate, Move::Cooperate, (-4.0, -4.0)),
    (Move::Defect, Move::Defect, (-6.0, -6.0)),
    (Move::Defect, Move::Cooperate, (0.0, -10.0)),
    (Move::Cooperate, Move::Defect, (-10.0, 0.0)),
];

#[test]
fn joint_outcomes_match_the_matrix() {
    for (a, b, want) in TABLE {
        assert_eq!(payoff(a, b), want, "{a:?}/{b:?}");
    }
}

#[test]
fn defection_dominates_each_round() {
    for other in [Move::Cooperate, Move::Defect] {
        assert!(payoff(Move::Defect, other).0 > payoff(Move::Cooperate, other).0);
        assert!(payoff(other, Move::Defect).1 > payoff(other, Move::Cooperate).1);
    }
    // Yet mutual cooperation beats mutual defection jointly.
    let joint = |(x, y): (f64, f64)| x + y;
    assert!(joint(payoff(Move::Cooperate, Move::Cooperate)) > joint(payoff(Move::Defect, Move::Defect)));
}

#[test]
fn environment_pays_the_matrix_every_round() {
    let [p1, p2] = players();
    let mut task = IpdTask::new("ipd", 4).unwrap();
    environment_reset(&mut task, 0).unwrap();
    for (round, (a, b, want)) in TABLE.into_iter().enumerate() {
        let step = round as u32;
        let joint = BTreeMap::from([
            (p1.clone(), Action::new(p1.clone(), step, a.as_str())),
            (p2.clone(), Action::new(p2.clone(), step, b.as_str())),
        ]);
        let out = environment_step(&mut task, &joint).unwrap();
        assert_eq!((out[&p1].reward.value, out[&p2].reward.value), want);
        assert_eq!(out[&p1].terminated, round == 3);
    }
    assert_eq!(task.history().len(), 4);
    assert!(task.traits().multi_agent);
}

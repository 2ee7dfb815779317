use std::path::Path;

use agent_core::episode::{run_episode, EpisodeConfig};
use agent_core::llm::ScriptedBackend;
use agent_core::methods;
use agent_core::tasks::remote::RemoteSpec;
use agent_core::tasks::{build_source, TaskSpec};
use agent_core::Error;

fn spec() -> TaskSpec {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/guess_task.py");
    TaskSpec::Remote {
        name: "guess".into(),
        spec: RemoteSpec {
            command: vec!["python3".into(), script.display().to_string()],
            instances: 2,
            header: "Find the hidden number.".into(),
            actions: None,
            single_step: false,
            free_form: false,
            few_shot: Vec::new(),
        },
    }
}

#[test]
fn episode_runs_over_stdio() {
    let source = build_source(&spec(), Path::new(".")).unwrap();
    assert_eq!(source.len(), 2);
    let backend = ScriptedBackend::sequential(["Answer: 2", "Answer: 4"]);
    let config = EpisodeConfig::new(&backend);
    let mut task = source.instance(1).unwrap();
    let out = run_episode(task.as_mut(), &methods::method_direct().policy, &config, 0, "guess/e0").unwrap();
    assert_eq!(out.results[0].trajectory.steps.len(), 2);
    assert!(out.score.success);
    assert_eq!(out.score.episode_return, 1.0);
    assert!(out.results[0].trajectory.terminated);
}

#[test]
fn truncation_and_failure_are_reported() {
    let source = build_source(&spec(), Path::new(".")).unwrap();
    let backend = ScriptedBackend::cyclic(["Answer: 9"]);
    let config = EpisodeConfig::new(&backend);
    let mut task = source.instance(0).unwrap();
    let out = run_episode(task.as_mut(), &methods::method_direct().policy, &config, 0, "guess/e1").unwrap();
    let t = &out.results[0].trajectory;
    assert_eq!(t.steps.len(), 3);
    assert!(t.truncated && !t.terminated);
    assert!(!out.score.success);
}

#[test]
fn error_replies_become_protocol_errors() {
    let source = build_source(&spec(), Path::new(".")).unwrap();
    // The QA grammar falls back to the raw text once retries run out.
    let backend = ScriptedBackend::cyclic(["no idea"]);
    let config = EpisodeConfig::new(&backend);
    let mut task = source.instance(0).unwrap();
    let err = run_episode(task.as_mut(), &methods::method_direct().policy, &config, 0, "guess/e2").unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn missing_program_is_not_found() {
    let TaskSpec::Remote { name, mut spec } = spec() else { unreachable!() };
    spec.command = vec!["/nonexistent/task-binary".into()];
    let source = build_source(&TaskSpec::Remote { name, spec }, Path::new(".")).unwrap();
    assert!(matches!(source.instance(0), Err(Error::NotFound(_))));
}

use std::path::Path;

use agent_cli::commands::cmd_run;
use agent_cli::config::RunConfig;
use agent_cli::harness::run_grid;
use agent_cli::table::{mean, sample_std, ResultTable};

fn grid_config(out: &Path) -> RunConfig {
    let yaml = format!(
        r#"
tasks: [gsm8k, ipd]
methods: [Direct, FS-Least-to-Most]
runs: 3
episodes_per_run: 2
seed: 7
output_dir: {}
backend:
  kind: scripted
  mode: responder
  script:
    - {{match: "Natalia", response: "48 + 24 = 72\nAnswer: 72"}}
    - {{match: "Weng", response: "Answer: 11"}}
    - {{match: "*", response: "defect"}}
"#,
        out.display()
    );
    RunConfig::parse(&yaml, Path::new(".")).unwrap()
}

#[test]
fn two_by_two_grid_over_three_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = grid_config(dir.path());
    let outcome = run_grid(&cfg).unwrap();
    let table = ResultTable::from_outcome(&outcome);

    assert_eq!(table.rows.len(), 4);
    let dashes: Vec<(&str, &str)> = table
        .rows
        .iter()
        .filter(|r| r.stats.is_none())
        .map(|r| (r.task.as_str(), r.method.as_str()))
        .collect();
    assert_eq!(dashes, [("ipd", "FS-Least-to-Most")]);

    for (c, row) in table.rows.iter().enumerate() {
        let Some(stats) = &row.stats else {
            assert!(outcome.episodes.iter().all(|e| e.cell != c));
            continue;
        };
        assert_eq!(stats.episodes, 6);
        // Recompute each run's mean and the spread across runs by hand.
        let run_means: Vec<f64> = (0..3)
            .map(|r| {
                let v: Vec<f64> = outcome
                    .episodes
                    .iter()
                    .filter(|e| e.cell == c && e.run == r)
                    .map(|e| e.value)
                    .collect();
                assert_eq!(v.len(), 2);
                v.iter().sum::<f64>() / 2.0
            })
            .collect();
        assert_eq!(stats.mean, mean(&run_means));
        assert_eq!(stats.std, sample_std(&run_means));
        assert!(stats.std.is_some());
    }

    let gsm_direct = table.rows[0].stats.as_ref().unwrap();
    assert_eq!(gsm_direct.mean, 0.5, "one of the two questions is answered correctly");
    assert_eq!(gsm_direct.llm_calls, 6);
    let gsm_l2m = table.rows[1].stats.as_ref().unwrap();
    assert_eq!(gsm_l2m.llm_calls, 12);
    let ipd_direct = table.rows[2].stats.as_ref().unwrap();
    assert!(ipd_direct.joint_mean.is_some());

    let md = table.to_markdown();
    assert!(md.contains("0.50 ± 0.00"), "{md}");
    let ipd_line = md.lines().find(|l| l.starts_with("| FS-Least-to-Most |")).unwrap();
    assert!(ipd_line.contains("| - |"), "{ipd_line}");
}

#[test]
fn reruns_write_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = grid_config(dir.path());
    let a = cmd_run(&cfg).unwrap();
    let b = cmd_run(&cfg).unwrap();
    assert_ne!(a.dir, b.dir);
    for file in ["results.csv", "results.md", "trajectories.jsonl", "transcripts.jsonl"] {
        let x = std::fs::read(a.dir.join(file)).unwrap();
        let y = std::fs::read(b.dir.join(file)).unwrap();
        assert!(x == y, "{file} differs between reruns");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dashes"], serde_json::json!(["ipd/FS-Least-to-Most"]));
    assert_eq!(manifest["config_hash"], cfg.hash());
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = grid_config(dir.path());
    cfg.workers = Some(1);
    let serial = ResultTable::from_outcome(&run_grid(&cfg).unwrap()).to_csv();
    cfg.workers = Some(8);
    let parallel = ResultTable::from_outcome(&run_grid(&cfg).unwrap()).to_csv();
    assert_eq!(serial, parallel);
}

#[test]
fn episode_count_defaults_to_one_pass_over_the_instances() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = grid_config(dir.path());
    cfg.episodes_per_run = None;
    cfg.runs = 1;
    let outcome = run_grid(&cfg).unwrap();
    let table = ResultTable::from_outcome(&outcome);
    let counts: Vec<(&str, &str, usize)> = table
        .rows
        .iter()
        .filter_map(|r| r.stats.as_ref().map(|s| (r.task.as_str(), r.method.as_str(), s.episodes)))
        .collect();
    assert_eq!(
        counts,
        [("gsm8k", "Direct", 6), ("gsm8k", "FS-Least-to-Most", 6), ("ipd", "Direct", 1)]
    );
}

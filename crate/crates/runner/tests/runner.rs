use std::path::{Path, PathBuf};
use std::time::Instant;

use lunarsim::scenario::Scenario;
use runner::batch::{batch_run, batch_with};
use runner::record::{read_record, replay, RecordError, Row};
use runner::run::{run_loaded, run_scenario, RunError, RunOptions};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn body(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text.split_once('\n').unwrap().1.to_string()
}

fn record_opts(path: &Path) -> RunOptions {
    RunOptions { record: Some(path.to_path_buf()), ..RunOptions::default() }
}

#[test]
fn three_target_task_reports_three_finishes() {
    let s = run_scenario(&scenario("lunar_base.plx"), &RunOptions::default()).unwrap();
    assert_eq!(s.finishes, 3);
    assert_eq!(s.violations, 0);
    assert!(s.completed);
}

#[test]
fn identical_runs_write_identical_records() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    run_scenario(&scenario("lunar_base.plx"), &record_opts(&a)).unwrap();
    run_scenario(&scenario("lunar_base.plx"), &record_opts(&b)).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn header_hash_tracks_seed_and_record_time_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let s0 = run_scenario(&scenario("lunar_base.plx"), &record_opts(&a)).unwrap();
    let s1 = run_scenario(&scenario("lunar_base.plx"), &RunOptions { seed: Some(1), ..record_opts(&b) }).unwrap();
    assert_ne!(s0.scenario_hash, s1.scenario_hash);
    let (header, rows) = read_record(&a).unwrap();
    assert_eq!(header.scenario_hash, s0.scenario_hash);
    let times: Vec<f64> = rows.iter().filter_map(Row::time_s).collect();
    assert!(times.len() > 100);
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
    assert!(matches!(rows.last(), Some(Row::Summary { .. })));
}

#[test]
fn replay_reproduces_the_recorded_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    run_scenario(&scenario("lunar_base.plx"), &record_opts(&path)).unwrap();
    let (_, rows) = read_record(&path).unwrap();
    let mut streamed = Vec::new();
    replay(&path, 0.0, |r| streamed.push(r.clone())).unwrap();
    assert_eq!(streamed, rows);
}

#[test]
fn truncated_record_is_corrupt_at_the_cut() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    run_scenario(&scenario("lunar_base.plx"), &record_opts(&path)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();

    // Cut inside line 10.
    let cut: String = lines[..9].join("\n") + "\n" + &lines[9][..lines[9].len() / 2];
    std::fs::write(&path, cut).unwrap();
    match read_record(&path) {
        Err(RecordError::CorruptRecord { line, .. }) => assert_eq!(line, 10),
        other => panic!("expected CorruptRecord, got {other:?}"),
    }

    // Whole lines but no trailer.
    std::fs::write(&path, lines[..9].join("\n") + "\n").unwrap();
    assert!(matches!(read_record(&path), Err(RecordError::CorruptRecord { line: 10, .. })));
}

#[test]
fn foreign_record_format_is_a_version_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    run_scenario(&scenario("lunar_base.plx"), &record_opts(&path)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap().replacen("lunarsim-record/1", "lunarsim-record/0", 1);
    std::fs::write(&path, text).unwrap();
    assert!(matches!(read_record(&path), Err(RecordError::VersionMismatch { .. })));
}

#[test]
fn replay_at_double_speed_takes_half_the_simulated_time() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    run_scenario(&scenario("lunar_base.plx"), &record_opts(&path)).unwrap();
    // Keep the first 1.2 s of simulated rover motion.
    let text = std::fs::read_to_string(&path).unwrap();
    let (mut kept, mut t0) = (Vec::new(), None);
    for line in text.lines().skip(1) {
        let row: Row = serde_json::from_str(line).unwrap();
        if let Some(t) = row.time_s() {
            if t > *t0.get_or_insert(t) + 1.2 {
                break;
            }
        }
        kept.push(line.to_string());
    }
    let short = dir.path().join("short.jsonl");
    let mut out = text.lines().next().unwrap().to_string() + "\n";
    for l in &kept {
        out += l;
        out += "\n";
    }
    out += &format!("{{\"kind\":\"end\",\"rows\":{}}}\n", kept.len());
    std::fs::write(&short, out).unwrap();
    let (_, rows) = read_record(&short).unwrap();
    let span = {
        let t: Vec<f64> = rows.iter().filter_map(Row::time_s).collect();
        t.last().unwrap() - t.first().unwrap()
    };
    assert!(span > 1.0);
    let start = Instant::now();
    replay(&short, 2.0, |_| {}).unwrap();
    let wall = start.elapsed().as_secs_f64();
    assert!((wall - span / 2.0).abs() < 0.15, "wall {wall} for span {span}");
}

#[test]
fn excavation_run_writes_thirty_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cycles.csv");
    let s = run_scenario(&scenario("excavation_flat.plx"), &RunOptions { csv: Some(csv.clone()), ..RunOptions::default() }).unwrap();
    assert!(s.completed);
    assert_eq!(s.metrics["cycles"], 30.0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 31);
}

#[test]
fn missing_scenario_is_an_input_error() {
    let e = run_scenario(Path::new("/definitely/not/here.plx"), &RunOptions::default()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn malformed_scenario_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.plx");
    std::fs::write(&path, "model Broken:\n  mode: String = \n").unwrap();
    let e = run_scenario(&path, &RunOptions::default()).unwrap_err();
    assert!(matches!(e, RunError::Scenario(_)));
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn batch_aggregates_do_not_depend_on_parallelism() {
    let path = scenario("lunar_base.plx");
    let dir = tempfile::tempdir().unwrap();
    let (d1, d4) = (dir.path().join("p1"), dir.path().join("p4"));
    std::fs::create_dir_all(&d1).unwrap();
    std::fs::create_dir_all(&d4).unwrap();
    let one = batch_run(&path, 4, 10, 1, &RunOptions::default(), Some(&d1));
    let four = batch_run(&path, 4, 10, 4, &RunOptions::default(), Some(&d4));
    assert_eq!(one.runs, 4);
    assert!(one.failures.is_empty());
    assert_eq!(one.metrics, four.metrics);
    assert_eq!(one.success_rate, four.success_rate);
    for seed in 10..14 {
        let name = format!("run_{seed}.jsonl");
        assert_eq!(body(&d1.join(&name)), body(&d4.join(&name)));
    }
}

#[test]
fn batch_with_same_seed_gives_identical_summaries() {
    let s = Scenario::load(scenario("lunar_base.plx"), Some(3)).unwrap();
    let report = batch_with(4, 0, 2, |_| run_loaded(&s, &RunOptions::default()).map_err(|e| e.to_string()));
    assert_eq!(report.summaries.len(), 4);
    assert!(report.summaries.windows(2).all(|w| w[0] == w[1]));
    assert!(report.metrics.values().all(|m| m.std == 0.0));
}

#[test]
fn distinct_seeds_give_distinct_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    batch_run(&scenario("lunar_base.plx"), 3, 0, 1, &RunOptions::default(), Some(dir.path()));
    let bodies: Vec<String> = (0..3).map(|s| body(&dir.path().join(format!("run_{s}.jsonl")))).collect();
    assert_ne!(bodies[0], bodies[1]);
    assert_ne!(bodies[1], bodies[2]);
}

#[test]
fn a_panicking_run_leaves_the_others_intact() {
    let path = scenario("lunar_base.plx");
    let dir = tempfile::tempdir().unwrap();
    let report = batch_with(4, 0, 2, |seed| {
        if seed == 2 {
            panic!("injected failure");
        }
        let s = Scenario::load(&path, Some(seed)).map_err(|e| e.to_string())?;
        let record = dir.path().join(format!("run_{seed}.jsonl"));
        run_loaded(&s, &RunOptions { seed: Some(seed), record: Some(record), ..RunOptions::default() }).map_err(|e| e.to_string())
    });
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].seed, 2);
    assert!(report.failures[0].message.contains("injected failure"));
    assert_eq!(report.summaries.len(), 3);
    for seed in [0, 1, 3] {
        read_record(&dir.path().join(format!("run_{seed}.jsonl"))).unwrap();
    }
}

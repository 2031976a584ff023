use std::time::Instant;

use lunarsim::autonomy::*;
use lunarsim::learn::PursuitPolicy;
use lunarsim::scenario::{Scenario, TargetSite};
use lunarsim::terrain::Heightfield;
use lunarsim::vehicle::{ObjectKind, RoverConfig};
use lunarsim::world::{Mobility, World};

fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn flat_world(targets: Vec<TargetSite>) -> World {
    World::new(Heightfield::flat(60.0, 60.0, 0.25), RoverConfig::default(), targets, [0.0, 0.0], 0.0, 0)
}

fn base_world(seed: u64) -> (World, String) {
    let sc = Scenario::load(scenario_path("lunar_base.plx"), Some(seed)).unwrap();
    let spec = sc.terrain_spec().unwrap();
    let terrain = lunarsim::terrain::generate_terrain(&spec, sc.seed).unwrap();
    let mut w = World::new(terrain, sc.rover_config().unwrap(), sc.targets().unwrap(), sc.spawn_position, sc.spawn_heading, sc.seed);
    w.sun = sc.sun();
    (w, sc.task.clone().unwrap())
}

#[test]
fn one_rotate_is_sixty_degrees_on_flat_ground() {
    let mut w = flat_world(vec![]);
    let h0 = w.state.heading;
    let r = rotate_skill(&mut w, &RotateConfig::default(), &mut |_| {});
    assert_eq!(r.status, SkillStatus::Success, "{}", r.detail);
    let turned = lunarsim::wrap_angle(w.state.heading - h0).to_degrees();
    assert!((turned - 60.0).abs() <= 2.0, "turned {turned}°");
}

#[test]
fn six_rotates_sweep_a_full_turn() {
    let mut w = flat_world(vec![]);
    let mut total = 0.0;
    for _ in 0..6 {
        let h = w.state.heading;
        assert_eq!(rotate_skill(&mut w, &RotateConfig::default(), &mut |_| {}).status, SkillStatus::Success);
        total += lunarsim::wrap_angle(w.state.heading - h);
    }
    assert!((total.to_degrees() - 360.0).abs() <= 6.0, "swept {}°", total.to_degrees());
}

#[test]
fn rotate_fails_when_wheels_slip() {
    let mut w = flat_world(vec![]);
    w.mobility = Mobility::ForcedSlip(0.9);
    let h0 = w.state.heading;
    let r = rotate_skill(&mut w, &RotateConfig::default(), &mut |_| {});
    assert_eq!(r.status, SkillStatus::Fail);
    assert!(lunarsim::wrap_angle(w.state.heading - h0).to_degrees() < 50.0);
}

#[test]
fn drive_is_immediate_success_when_already_there() {
    let mut w = flat_world(vec![TargetSite { kind: ObjectKind::Rock, position: [3.0, 0.0] }]);
    let t0 = w.state.time;
    let r = drive_skill(&mut w, ObjectKind::Rock, &DriveConfig::default(), &mut PursuitPolicy::default(), &mut |_| {});
    assert_eq!(r.status, SkillStatus::Success);
    assert_eq!(w.state.time, t0);
}

#[test]
fn drive_reaches_a_target_six_metres_ahead() {
    let mut w = flat_world(vec![TargetSite { kind: ObjectKind::Rock, position: [10.0, 0.0] }]);
    let r = drive_skill(&mut w, ObjectKind::Rock, &DriveConfig::default(), &mut PursuitPolicy::default(), &mut |_| {});
    assert_eq!(r.status, SkillStatus::Success, "{}", r.detail);
    let (d, _) = w.range_and_bearing(ObjectKind::Rock).unwrap();
    assert!(d <= 4.0 && w.is_stopped());
}

#[test]
fn drive_times_out_beyond_reach() {
    // Target 30 m behind: farther than v_max × duration allows.
    let mut w = flat_world(vec![TargetSite { kind: ObjectKind::Rock, position: [-25.0, 0.0] }]);
    let cfg = DriveConfig { duration: 20.0, ..DriveConfig::default() };
    let reach = w.limits.v_max * cfg.duration;
    assert!(25.0 - 4.0 > reach);
    let r = drive_skill(&mut w, ObjectKind::Rock, &cfg, &mut PursuitPolicy::default(), &mut |_| {});
    assert_eq!(r.status, SkillStatus::Fail);
}

#[test]
fn scripted_oracle_replies_always_parse() {
    let oracle = ScriptedOracle::default();
    let tasks = ["Drive to the rock", "Drive to a target", "Go to the antenna and then the astronaut", "Visit the dish"];
    for task in tasks {
        for visible in [false, true] {
            for d in [2.0, 10.0] {
                let truth = GroundTruth {
                    visible: if visible { ObjectKind::ALL.to_vec() } else { vec![] },
                    distances: ObjectKind::ALL.iter().map(|k| (*k, d)).collect(),
                    stopped: true,
                };
                let msgs = vec![Message {
                    role: Role::User,
                    text: task.to_string(),
                    image: None,
                    has_image: false,
                    time_s: 0.0,
                    phase: Phase::AwaitingTask,
                }];
                let reply = oracle.reply(&msgs, &truth);
                parse_skill_response(&reply).unwrap_or_else(|e| panic!("{reply}: {e}"));
            }
        }
    }
}

fn three_target_session(seed: u64) -> (SessionSummary, Vec<SessionEvent>) {
    let (world, task) = base_world(seed);
    let cfg = SessionConfig { attach_images: false, ..SessionConfig::default() };
    let mut s = Session::new(world, Box::new(ScriptedOracle::default()), Box::new(PursuitPolicy::default()), cfg);
    let mut op = ScriptedOperator::new(task);
    let summary = s.run(&mut op, 900.0, &mut |_| {}).unwrap();
    (summary, s.drain_events())
}

#[test]
fn three_target_task_finishes_three_times() {
    let start = Instant::now();
    let (summary, events) = three_target_session(0);
    assert_eq!(summary.finishes, 3, "{summary:?}");
    assert_eq!(summary.violations, 0);
    assert_eq!(
        summary.finished_targets,
        vec![Some(ObjectKind::Antenna), Some(ObjectKind::Rover), Some(ObjectKind::Astronaut)]
    );
    assert!(events.iter().any(|e| matches!(e, SessionEvent::SkillFinished { .. })));
    assert!(start.elapsed().as_secs() < 120);
}

#[test]
fn ambiguous_task_asks_for_more_information() {
    let (world, _) = base_world(0);
    let cfg = SessionConfig { attach_images: false, ..SessionConfig::default() };
    let mut s = Session::new(world, Box::new(ScriptedOracle::default()), Box::new(PursuitPolicy::default()), cfg);
    s.startup().unwrap();
    let p = s.send("Drive to a target", &mut |_| {}).unwrap();
    assert_eq!(p, Pending::Information);
    let p = s.send("The rock, please.", &mut |_| {}).unwrap();
    assert_eq!(p, Pending::TaskFinished(Some(ObjectKind::Rock)));
}

#[test]
fn failed_drive_feeds_back_fail_and_a_new_image() {
    let (world, _) = base_world(0);
    let mut s = Session::new(
        world,
        Box::new(ScriptedOracle::default()),
        Box::new(PursuitPolicy::default()),
        SessionConfig { drive: DriveConfig { duration: 1.0, ..DriveConfig::default() }, ..SessionConfig::default() },
    );
    s.startup().unwrap();
    let _ = s.send("Drive to the rock", &mut |_| {}).unwrap();
    let log = s.transcript();
    let fail = log.iter().position(|m| m.role == Role::User && m.text == "Fail").expect("a Fail result");
    assert!(log[fail].has_image);
    for m in log.iter().filter(|m| m.role == Role::User && m.phase == Phase::Executing) {
        assert!(m.text == "Success" || m.text == "Fail", "unexpected feedback {:?}", m.text);
    }
}

#[test]
fn transcript_is_jsonl_with_time_and_phase() {
    let (world, _) = base_world(0);
    let cfg = SessionConfig { attach_images: false, ..SessionConfig::default() };
    let mut s = Session::new(world, Box::new(ScriptedOracle::default()), Box::new(PursuitPolicy::default()), cfg);
    s.startup().unwrap();
    let mut out = Vec::new();
    s.write_transcript(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("time_s").is_some() && v.get("phase").is_some());
    }
}

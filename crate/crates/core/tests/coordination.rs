use lunarsim::coordination::*;
use lunarsim::scenario::Scenario;
use lunarsim::terrain::Heightfield;

fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn flat_site() -> Site {
    let t = Heightfield::flat(60.0, 30.0, 0.25);
    Site::new(t, SiteLayout::default(), ExcavatorParams::default(), TruckParams::default()).unwrap()
}

#[test]
fn three_bucket_loads_per_haul() {
    let mut site = flat_site();
    assert_eq!(site.loads_per_haul(), 3);
    let mut tree = build_loading_tree(&site).unwrap();
    let mut hauls = 0;
    let mut was_hauling = false;
    run_cycles(&mut tree, &mut site, 6, 5000.0, &mut |s| {
        if s.truck.hauling && !was_hauling {
            hauls += 1;
            assert!((s.truck.load - 450.0).abs() < 1e-6, "hauling with {} kg", s.truck.load);
        }
        was_hauling = s.truck.hauling;
    })
    .unwrap();
    assert_eq!(hauls, 2);
}

#[test]
fn one_full_haul_completes_on_flat_ground() {
    let mut site = flat_site();
    let mut tree = build_loading_tree(&site).unwrap();
    let rows = run_cycles(&mut tree, &mut site, 4, 5000.0, &mut |_| {}).unwrap();
    assert_eq!(rows.len(), 4);
    // The fourth cycle follows the first haul.
    assert!((site.dumped - 450.0).abs() < 1e-6);
    assert!(rows[3].drive_j > rows[1].drive_j);
    assert!(rows[3].bed_j > 0.0);
}

#[test]
fn cumulative_dumped_never_exceeds_excavated() {
    let mut site = flat_site();
    let mut tree = build_loading_tree(&site).unwrap();
    let rows = run_cycles(&mut tree, &mut site, 12, 10000.0, &mut |_| {}).unwrap();
    let (mut ex, mut du) = (0.0, 0.0);
    for r in &rows {
        ex += r.excavated_kg;
        du += r.dumped_kg;
        assert!(du <= ex + 1e-9);
    }
}

#[test]
fn zero_bucket_capacity_stalls() {
    let t = Heightfield::flat(60.0, 30.0, 0.25);
    let exc = ExcavatorParams { bucket_capacity: 0.0, ..ExcavatorParams::default() };
    let mut site = Site::new(t, SiteLayout::default(), exc, TruckParams::default()).unwrap();
    let mut tree = build_loading_tree(&site).unwrap();
    let e = run_cycles(&mut tree, &mut site, 1, 5000.0, &mut |_| {});
    assert!(matches!(e, Err(CoordinationError::Stalled { cycles: 0, .. })), "{e:?}");
}

#[test]
fn depleted_pit_falls_back_to_finish() {
    let t = Heightfield::flat(60.0, 30.0, 0.25);
    let layout = SiteLayout { dig_size: 1.0, dig_depth: 0.1, ..SiteLayout::default() };
    let mut site = Site::new(t, layout, ExcavatorParams::default(), TruckParams::default()).unwrap();
    let mut tree = build_loading_tree(&site).unwrap();
    let mut trace = Vec::new();
    for _ in 0..20000 {
        site.time += site.dt;
        let s = tree.tick_traced(&mut site, &mut |name, st| trace.push((name.to_string(), st)));
        if s == TickStatus::Success && site.finished {
            break;
        }
    }
    assert!(site.finished);
    assert!(trace.iter().any(|(n, s)| n == "Dig" && *s == TickStatus::Failure));
    let mb = site.mass_balance();
    assert!(mb.relative_error() < 1e-9);
    assert_eq!(site.truck.load, 0.0);
    assert!((site.dumped - mb.terrain_removed).abs() < 1e-6);
}

#[test]
fn identical_runs_give_identical_traces() {
    let run = || {
        let mut site = flat_site();
        let mut tree = build_loading_tree(&site).unwrap();
        let mut trace = Vec::new();
        for _ in 0..3000 {
            site.time += site.dt;
            tree.tick_traced(&mut site, &mut |n, s| trace.push(format!("{n}:{s:?}")));
        }
        (trace, serde_json::to_string(&site).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn sites_outside_the_terrain_are_rejected() {
    let t = Heightfield::flat(20.0, 20.0, 0.25);
    let e = Site::new(t, SiteLayout::default(), ExcavatorParams::default(), TruckParams::default());
    assert!(matches!(e, Err(CoordinationError::SiteOutsideTerrain { .. })));
}

#[test]
fn grading_bumps_in_two_passes() {
    let mut t = Heightfield::flat(20.0, 20.0, 0.25);
    for j in 0..t.ny {
        for i in 0..t.nx {
            let [x, y] = t.node_position(i, j);
            if x.abs() <= 2.0 && y.abs() <= 2.0 {
                t.heights[j * t.nx + i] += 0.1 * (std::f64::consts::PI * x).cos().max(0.0) * (std::f64::consts::PI * y).cos().max(0.0);
            }
        }
    }
    let mass_before: f64 = t.heights.iter().sum();
    let mut truck = DumpTruck::new(TruckParams::default(), Pose { position: [0.0, 0.0], heading: 0.0 });
    let region = GradeRegion { center: [0.0, 0.0], size: 4.0 };
    let dev = grade_surface(&mut truck, &mut t, region, &|_, _| 0.0, 2).unwrap();
    assert!(dev < 0.02, "deviation {dev}");
    let mass_after: f64 = t.heights.iter().sum();
    assert!((mass_after - mass_before).abs() <= 1e-6 * mass_before.abs(), "{mass_before} {mass_after}");
    assert!(truck.energy.blade > 0.0);
}

fn excavation(name: &str) -> ExcavationReport {
    let sc = Scenario::load(scenario_path(name), None).unwrap();
    let mut site = Site::from_scenario(&sc).unwrap();
    let n = sc.tree.number("cycles").unwrap() as usize;
    run_excavation(&mut site, n, sc.duration, &mut |_| {}).unwrap()
}

#[test]
fn bundled_scenarios_thirty_cycles_and_slope_costs_more() {
    let flat = excavation("excavation_flat.plx");
    let slope = excavation("excavation_slope.plx");
    assert_eq!(flat.cycles.len(), 30);
    assert_eq!(slope.cycles.len(), 30);
    assert!(slope.mean_work_per_cycle() > flat.mean_work_per_cycle());
    assert!(flat.grade_deviation < 0.02 && slope.grade_deviation < 0.02);
    assert!(flat.balance.relative_error() <= MASS_TOLERANCE);
    let mut out = Vec::new();
    write_cycles_csv(&flat.cycles, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("cycle,excavated_kg,dumped_kg,cycle_time_s,arm_J,drive_J,crawler_J,bed_J,blade_J\n"));
    assert_eq!(text.lines().count(), 31);
}

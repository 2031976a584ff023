use std::io::Write;

use serde::{Deserialize, Serialize};

use super::bt::{BtNode, TickStatus};
use super::grading::{grade_surface, GradeRegion};
use super::machines::{drive_toward, CrawlerState, DumpTruck, EnergyGroup, EnergyLedger, Excavator, ExcavatorParams, Pose, TruckParams};
use super::CoordinationError;
use crate::scenario::{Mode, Scenario};
use crate::terrain::{generate_terrain, Heightfield};
use crate::LUNAR_GRAVITY;

/// Where things happen on an excavation site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteLayout {
    pub excavator_start: [f64; 2],
    pub truck_start: [f64; 2],
    pub dig_site: [f64; 2],
    /// Side of the square dig pit.
    pub dig_size: f64,
    pub dig_depth: f64,
    pub load_point: [f64; 2],
    pub dump_site: [f64; 2],
    pub grade_center: [f64; 2],
    pub grade_size: f64,
    pub grade_passes: usize,
    /// Amplitude of the bumps laid over the grading patch before the run.
    pub grade_roughness: f64,
}

impl Default for SiteLayout {
    fn default() -> Self {
        SiteLayout {
            excavator_start: [-8.0, 4.0],
            truck_start: [-8.0, -6.0],
            dig_site: [-10.0, 0.0],
            dig_size: 3.0,
            dig_depth: 0.6,
            load_point: [-10.0, -3.5],
            dump_site: [15.0, -3.5],
            grade_center: [15.0, 6.0],
            grade_size: 4.0,
            grade_passes: 2,
            grade_roughness: 0.1,
        }
    }
}

/// One Dig-Swing-Dump cycle. Work is what all machines spent since the
/// previous cycle ended, so haul work lands in the cycle after the haul.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub cycle: usize,
    pub excavated_kg: f64,
    pub dumped_kg: f64,
    pub cycle_time_s: f64,
    #[serde(rename = "arm_J")]
    pub arm_j: f64,
    #[serde(rename = "drive_J")]
    pub drive_j: f64,
    #[serde(rename = "crawler_J")]
    pub crawler_j: f64,
    #[serde(rename = "bed_J")]
    pub bed_j: f64,
    #[serde(rename = "blade_J")]
    pub blade_j: f64,
}

impl CycleMetrics {
    pub fn total_work(&self) -> f64 {
        self.arm_j + self.drive_j + self.crawler_j + self.bed_j + self.blade_j
    }
}

pub fn write_cycles_csv(rows: &[CycleMetrics], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mass accounting: what left the terrain versus where it is now.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassBalance {
    pub terrain_removed: f64,
    pub bucket: f64,
    pub bed: f64,
    pub dumped: f64,
}

impl MassBalance {
    pub fn relative_error(&self) -> f64 {
        let held = self.bucket + self.bed + self.dumped;
        let scale = held.abs().max(self.terrain_removed.abs()).max(1.0);
        (self.terrain_removed - held).abs() / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub terrain: Heightfield,
    initial_heights: Vec<f64>,
    pub layout: SiteLayout,
    pub excavator: Excavator,
    pub truck: DumpTruck,
    /// Where the excavator stands while digging.
    pub station: [f64; 2],
    /// Footprint centres of the pit and their floor heights.
    dig_spots: Vec<([f64; 2], f64)>,
    pub dumped: f64,
    pub excavated: f64,
    pub time: f64,
    pub dt: f64,
    pub finished: bool,
    pub cycles: Vec<CycleMetrics>,
    cycle_mark: (f64, EnergyLedger, f64, f64),
}

const DIG_SPACING: f64 = 0.5;

impl Site {
    pub fn new(mut terrain: Heightfield, layout: SiteLayout, excavator: ExcavatorParams, truck: TruckParams) -> Result<Self, CoordinationError> {
        let half = layout.dig_size / 2.0;
        let corners = [
            [layout.dig_site[0] - half, layout.dig_site[1] - half],
            [layout.dig_site[0] + half, layout.dig_site[1] + half],
        ];
        for p in [layout.excavator_start, layout.truck_start, layout.load_point, layout.dump_site, corners[0], corners[1]] {
            if !terrain.contains(p[0], p[1]) {
                return Err(CoordinationError::SiteOutsideTerrain { x: p[0], y: p[1] });
            }
        }
        let region = GradeRegion { center: layout.grade_center, size: layout.grade_size };
        if layout.grade_roughness > 0.0 {
            add_bumps(&mut terrain, region, layout.grade_roughness)?;
        }

        let to_start = [layout.excavator_start[0] - layout.dig_site[0], layout.excavator_start[1] - layout.dig_site[1]];
        let len = to_start[0].hypot(to_start[1]).max(1e-9);
        let station = [
            layout.dig_site[0] + excavator.reach * to_start[0] / len,
            layout.dig_site[1] + excavator.reach * to_start[1] / len,
        ];
        if !terrain.contains(station[0], station[1]) {
            return Err(CoordinationError::SiteOutsideTerrain { x: station[0], y: station[1] });
        }
        let n = ((layout.dig_size / DIG_SPACING).round() as usize).max(1);
        let mut dig_spots = Vec::with_capacity(n * n);
        for b in 0..n {
            for a in 0..n {
                let x = corners[0][0] + (a as f64 + 0.5) * layout.dig_size / n as f64;
                let y = corners[0][1] + (b as f64 + 0.5) * layout.dig_size / n as f64;
                dig_spots.push(([x, y], terrain.height_clamped(x, y) - layout.dig_depth));
            }
        }

        let face = |from: [f64; 2], to: [f64; 2]| (to[1] - from[1]).atan2(to[0] - from[0]);
        let exc = Excavator::new(excavator, Pose { position: layout.excavator_start, heading: face(layout.excavator_start, station) });
        let trk = DumpTruck::new(truck, Pose { position: layout.truck_start, heading: face(layout.truck_start, layout.load_point) });
        Ok(Site {
            initial_heights: terrain.heights.clone(),
            terrain,
            layout,
            excavator: exc,
            truck: trk,
            station,
            dig_spots,
            dumped: 0.0,
            excavated: 0.0,
            time: 0.0,
            dt: 0.1,
            finished: false,
            cycles: Vec::new(),
            cycle_mark: (0.0, EnergyLedger::default(), 0.0, 0.0),
        })
    }

    pub fn from_scenario(scenario: &Scenario) -> Result<Self, CoordinationError> {
        if scenario.mode != Mode::Excavation {
            return Err(CoordinationError::Scenario("not an excavation scenario".into()));
        }
        let spec = scenario.terrain_spec().map_err(|e| CoordinationError::Scenario(e.to_string()))?;
        let terrain = generate_terrain(&spec, scenario.seed).map_err(|e| CoordinationError::Scenario(e.to_string()))?;
        let t = &scenario.tree;
        let d = SiteLayout::default();
        let p = |f: &str, dflt: [f64; 2]| t.vec3(f).map(|v| [v[0], v[1]]).unwrap_or(dflt);
        let n = |f: &str, dflt: f64| t.number(f).unwrap_or(dflt);
        let layout = SiteLayout {
            excavator_start: p("excavator_start", d.excavator_start),
            truck_start: p("truck_start", d.truck_start),
            dig_site: p("dig_site", d.dig_site),
            dig_size: n("dig_size", d.dig_size),
            dig_depth: n("dig_depth", d.dig_depth),
            load_point: p("load_point", d.load_point),
            dump_site: p("dump_site", d.dump_site),
            grade_center: p("grade_center", d.grade_center),
            grade_size: n("grade_size", d.grade_size),
            grade_passes: n("grade_passes", d.grade_passes as f64) as usize,
            grade_roughness: n("grade_roughness", d.grade_roughness),
        };
        let exc = t.instances_of("Excavator").first().map(|p| ExcavatorParams::from_tree(t, p)).unwrap_or_default();
        let trk = t.instances_of("DumpTruck").first().map(|p| TruckParams::from_tree(t, p)).unwrap_or_default();
        Site::new(terrain, layout, exc, trk)
    }

    pub fn energy(&self) -> EnergyLedger {
        self.excavator.energy.plus(&self.truck.energy)
    }

    pub fn mass_balance(&self) -> MassBalance {
        let rho = self.terrain.regolith.mass_density;
        let area = self.terrain.cell_size * self.terrain.cell_size;
        let removed: f64 = self.initial_heights.iter().zip(&self.terrain.heights).map(|(a, b)| a - b).sum();
        MassBalance { terrain_removed: removed * area * rho, bucket: self.excavator.load, bed: self.truck.load, dumped: self.dumped }
    }

    /// Dig-Swing-Dump loads that fit in one truck bed.
    pub fn loads_per_haul(&self) -> usize {
        let b = self.excavator.capacity();
        if b > 0.0 {
            ((self.truck.capacity() / b).floor() as usize).max(1)
        } else {
            1
        }
    }

    /// Nominal duration of one Dig-Swing-Dump cycle.
    pub fn nominal_cycle_time(&self) -> f64 {
        let p = &self.excavator.params;
        p.dig_time + p.dump_time + 2.0 * p.swing_angle / p.swing_rate
    }

    fn remaining(&self, spot: &([f64; 2], f64)) -> f64 {
        let (ri, rj) = self.terrain.footprint(spot.0[0], spot.0[1], 0.5);
        let mut v = 0.0;
        for j in rj {
            for i in ri.clone() {
                v += (self.terrain.node(i, j) - spot.1).max(0.0);
            }
        }
        v
    }

    fn record_cycle(&mut self) {
        let (t0, e0, x0, d0) = self.cycle_mark;
        let e = self.energy();
        let de = e.minus(&e0);
        self.cycles.push(CycleMetrics {
            cycle: self.cycles.len() + 1,
            excavated_kg: self.excavated - x0,
            dumped_kg: self.dumped - d0,
            cycle_time_s: self.time - t0,
            arm_j: de.arm,
            drive_j: de.drive,
            crawler_j: de.crawler,
            bed_j: de.bed,
            blade_j: de.blade,
        });
        self.cycle_mark = (self.time, e, self.excavated, self.dumped);
    }
}

/// Deterministic bumps `a·sin(πu)·sin(πv)` with a 2 m period over the patch.
fn add_bumps(t: &mut Heightfield, region: GradeRegion, amplitude: f64) -> Result<(), CoordinationError> {
    let h = region.size / 2.0;
    let (x0, y0) = (region.center[0] - h, region.center[1] - h);
    if !t.contains(x0, y0) || !t.contains(x0 + region.size, y0 + region.size) {
        return Err(CoordinationError::RegionOutsideTerrain { center: region.center, size: region.size });
    }
    for j in 0..t.ny {
        for i in 0..t.nx {
            let [x, y] = t.node_position(i, j);
            let (u, v) = (x - x0, y - y0);
            if (0.0..=region.size).contains(&u) && (0.0..=region.size).contains(&v) {
                t.heights[j * t.nx + i] += amplitude * (std::f64::consts::PI * u).sin() * (std::f64::consts::PI * v).sin();
            }
        }
    }
    Ok(())
}

// Leaf behaviours. Each judges its own completion from the site so that a
// memory-less tree can re-tick it safely.

fn timed(timer: &mut f64, duration: f64, dt: f64) -> bool {
    *timer += dt;
    if *timer + 1e-9 >= duration {
        *timer = 0.0;
        true
    } else {
        false
    }
}

fn crawlers_to(s: &mut Site, want: CrawlerState) -> TickStatus {
    let e = &mut s.excavator;
    if e.crawlers == want {
        return TickStatus::Success;
    }
    if timed(&mut e.timer, e.params.crawler_time, s.dt) {
        e.crawlers = want;
        let work = e.params.crawler_mass * LUNAR_GRAVITY * e.params.crawler_stroke;
        e.energy.add(EnergyGroup::Crawler, work);
        return TickStatus::Success;
    }
    TickStatus::Running
}

fn excavator_to_station(s: &mut Site) -> TickStatus {
    if s.excavator.crawlers != CrawlerState::Raised {
        return TickStatus::Failure;
    }
    let e = &mut s.excavator;
    let p = e.params.clone();
    if drive_toward(&mut e.pose, s.station, p.drive_speed, p.turn_rate, p.half_track, p.mass + e.load, &s.terrain, &mut e.energy, s.dt) {
        TickStatus::Success
    } else {
        TickStatus::Running
    }
}

fn truck_to(s: &mut Site, goal: [f64; 2]) -> TickStatus {
    let t = &mut s.truck;
    let p = t.params.clone();
    let m = t.gross_mass();
    if drive_toward(&mut t.pose, goal, p.drive_speed, p.turn_rate, p.half_track, m, &s.terrain, &mut t.energy, s.dt) {
        TickStatus::Success
    } else {
        TickStatus::Running
    }
}

/// Rotates the upper structure towards `angle`; charges one swing's work on
/// arrival.
fn swing_to(s: &mut Site, angle: f64) -> TickStatus {
    let e = &mut s.excavator;
    if (e.swing - angle).abs() < 1e-9 {
        return TickStatus::Success;
    }
    let step = e.params.swing_rate * s.dt;
    e.swing = if e.swing < angle { (e.swing + step).min(angle) } else { (e.swing - step).max(angle) };
    if (e.swing - angle).abs() < 1e-9 {
        e.swing = angle;
        let w = e.params.swing_work(e.load);
        e.energy.add(EnergyGroup::Arm, w);
        return TickStatus::Success;
    }
    TickStatus::Running
}

fn dig(s: &mut Site) -> TickStatus {
    if s.excavator.loaded {
        return TickStatus::Success;
    }
    if s.excavator.crawlers != CrawlerState::Lowered {
        return TickStatus::Failure;
    }
    if swing_to(s, 0.0) == TickStatus::Running {
        return TickStatus::Running;
    }
    let best = s
        .dig_spots
        .iter()
        .map(|spot| (s.remaining(spot), *spot))
        .fold(None::<(f64, ([f64; 2], f64))>, |acc, (r, spot)| match acc {
            Some((best, _)) if best >= r => acc,
            _ => Some((r, spot)),
        });
    let Some((_, (at, level))) = best.filter(|(r, _)| *r > 1e-6) else {
        // Pit exhausted: a partial bucket still counts as a load.
        if s.excavator.load > 0.0 {
            s.excavator.loaded = true;
            return TickStatus::Success;
        }
        return TickStatus::Failure;
    };
    let dt = s.dt;
    let e = &mut s.excavator;
    if !timed(&mut e.timer, e.params.dig_time, dt) {
        return TickStatus::Running;
    }
    let room = (e.params.bucket_capacity - e.load).max(0.0);
    let got = s.terrain.excavate_to(at[0], at[1], level, room).unwrap_or(0.0);
    e.load += got;
    s.excavated += got;
    e.energy.add(EnergyGroup::Arm, got * LUNAR_GRAVITY * e.params.lift_height);
    if e.load >= e.params.bucket_capacity * (1.0 - 1e-9) && e.load > 0.0 {
        e.loaded = true;
        return TickStatus::Success;
    }
    TickStatus::Running
}

fn swing_to_truck(s: &mut Site) -> TickStatus {
    if !s.excavator.loaded {
        return TickStatus::Failure;
    }
    let a = s.excavator.params.swing_angle;
    swing_to(s, a)
}

fn dump_into_bed(s: &mut Site) -> TickStatus {
    if !s.excavator.loaded {
        return TickStatus::Failure;
    }
    if s.truck.load + s.excavator.load > s.truck.capacity() * (1.0 + 1e-9) {
        return TickStatus::Failure;
    }
    let dt = s.dt;
    if !timed(&mut s.excavator.timer, s.excavator.params.dump_time, dt) {
        return TickStatus::Running;
    }
    s.truck.load += s.excavator.load;
    s.excavator.load = 0.0;
    s.excavator.loaded = false;
    s.record_cycle();
    TickStatus::Success
}

fn tilt_bed(s: &mut Site) -> TickStatus {
    let dt = s.dt;
    let t = &mut s.truck;
    if !timed(&mut t.timer, t.params.tilt_time, dt) {
        return TickStatus::Running;
    }
    let work = (t.load + t.params.bed_mass) * LUNAR_GRAVITY * t.params.tilt_lift;
    t.energy.add(EnergyGroup::Bed, work);
    s.dumped += t.load;
    t.load = 0.0;
    t.hauling = false;
    TickStatus::Success
}

fn finish(s: &mut Site) -> TickStatus {
    if s.truck.load > 0.0 {
        s.truck.hauling = true;
        return TickStatus::Running;
    }
    s.finished = true;
    TickStatus::Success
}

/// The loading behaviour:
///
/// ```text
/// Sequence
///   Selector(at station?, Sequence(RaiseCrawlers, ExcavatorToStation))
///   LowerCrawlers
///   Selector
///     Sequence(haul pending?, TruckToDumpSite, TiltBed)
///     Sequence
///       Parallel(TruckToLoadPoint, Dig)
///       Repeat(loads per haul, Sequence(Dig, SwingToTruck, DumpIntoBed))
///       StartHaul
///     Finish
/// ```
pub fn build_loading_tree(site: &Site) -> Result<BtNode<Site>, CoordinationError> {
    for p in [site.layout.dig_site, site.layout.load_point, site.layout.dump_site, site.station] {
        if !site.terrain.contains(p[0], p[1]) {
            return Err(CoordinationError::SiteOutsideTerrain { x: p[0], y: p[1] });
        }
    }
    let load_point = site.layout.load_point;
    let dump_site = site.layout.dump_site;
    let station = site.station;
    let at_station = move |s: &Site| {
        let p = s.excavator.pose.position;
        (p[0] - station[0]).hypot(p[1] - station[1]) < 0.05
    };
    let tree = BtNode::Sequence(vec![
        BtNode::Selector(vec![
            BtNode::condition("ExcavatorAtStation", at_station),
            BtNode::Sequence(vec![
                BtNode::action("RaiseCrawlers", |s: &mut Site| crawlers_to(s, CrawlerState::Raised)),
                BtNode::action("ExcavatorToStation", excavator_to_station),
            ]),
        ]),
        BtNode::action("LowerCrawlers", |s: &mut Site| crawlers_to(s, CrawlerState::Lowered)),
        BtNode::Selector(vec![
            BtNode::Sequence(vec![
                BtNode::condition("HaulPending", |s: &Site| s.truck.hauling),
                BtNode::action("TruckToDumpSite", move |s: &mut Site| truck_to(s, dump_site)),
                BtNode::action("TiltBed", tilt_bed),
            ]),
            BtNode::Sequence(vec![
                BtNode::Parallel(vec![
                    BtNode::action("TruckToLoadPoint", move |s: &mut Site| truck_to(s, load_point)),
                    BtNode::action("Dig", dig),
                ]),
                BtNode::repeat(
                    site.loads_per_haul(),
                    BtNode::Sequence(vec![
                        BtNode::action("Dig", dig),
                        BtNode::action("SwingToTruck", swing_to_truck),
                        BtNode::action("DumpIntoBed", dump_into_bed),
                    ]),
                ),
                BtNode::action("StartHaul", |s: &mut Site| {
                    s.truck.hauling = true;
                    TickStatus::Success
                }),
            ]),
            BtNode::action("Finish", finish),
        ]),
    ]);
    tree.validate().map_err(CoordinationError::Scenario)?;
    Ok(tree)
}

/// Mass-balance tolerance checked at every tick.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Ticks the tree at the site's control rate until `n_cycles` cycles
/// complete. `on_tick` sees the site after every tick.
pub fn run_cycles(
    tree: &mut BtNode<Site>,
    site: &mut Site,
    n_cycles: usize,
    max_time: f64,
    on_tick: &mut dyn FnMut(&Site),
) -> Result<Vec<CycleMetrics>, CoordinationError> {
    if n_cycles == 0 {
        return Err(CoordinationError::Scenario("n_cycles must be at least 1".into()));
    }
    let start = site.cycles.len();
    let mut last_progress = site.time;
    let mut seen = start;
    let mut energy = site.energy();
    loop {
        site.time += site.dt;
        let status = tree.tick(site);
        on_tick(site);
        let mb = site.mass_balance();
        if mb.relative_error() > MASS_TOLERANCE {
            return Err(CoordinationError::MassImbalance { time: site.time, balance: mb });
        }
        let now = site.energy();
        debug_assert!(now.dominates(&energy), "energy ledger decreased");
        energy = now;
        if site.cycles.len() > seen {
            seen = site.cycles.len();
            last_progress = site.time;
        }
        if site.cycles.len() - start >= n_cycles {
            return Ok(site.cycles[start..start + n_cycles].to_vec());
        }
        let mut times: Vec<f64> = site.cycles[start..].iter().map(|c| c.cycle_time_s).collect();
        let typical = if times.is_empty() {
            site.nominal_cycle_time()
        } else {
            times.sort_by(f64::total_cmp);
            times[times.len() / 2]
        };
        let stalled = (status == TickStatus::Success && site.finished)
            || status == TickStatus::Failure
            || site.time - last_progress > 10.0 * typical
            || site.time > max_time;
        if stalled {
            return Err(CoordinationError::Stalled { cycles: site.cycles.len() - start, time: site.time });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcavationReport {
    pub cycles: Vec<CycleMetrics>,
    pub grade_deviation: f64,
    pub balance: MassBalance,
    pub energy: EnergyLedger,
    pub sim_time: f64,
}

impl ExcavationReport {
    pub fn mean_work_per_cycle(&self) -> f64 {
        self.cycles.iter().map(CycleMetrics::total_work).sum::<f64>() / self.cycles.len().max(1) as f64
    }
}

/// Runs `n_cycles` loading cycles, hauls any partial load, then grades the
/// patch to its best-fit plane.
pub fn run_excavation(site: &mut Site, n_cycles: usize, max_time: f64, on_tick: &mut dyn FnMut(&Site)) -> Result<ExcavationReport, CoordinationError> {
    let mut tree = build_loading_tree(site)?;
    let cycles = run_cycles(&mut tree, site, n_cycles, max_time, on_tick)?;
    let region = GradeRegion { center: site.layout.grade_center, size: site.layout.grade_size };
    let [a, b, c] = region.fit_plane(&site.terrain)?;
    let passes = site.layout.grade_passes;
    let grade_deviation = grade_surface(&mut site.truck, &mut site.terrain, region, &|x, y| a + b * x + c * y, passes)?;
    let balance = site.mass_balance();
    if balance.relative_error() > MASS_TOLERANCE {
        return Err(CoordinationError::MassImbalance { time: site.time, balance });
    }
    Ok(ExcavationReport { cycles, grade_deviation, balance, energy: site.energy(), sim_time: site.time })
}

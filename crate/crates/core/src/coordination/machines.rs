//! Lumped kinematic excavator and dump truck with per-actuator energy
//! ledgers. No link dynamics: arm, bed and crawler work come from lifted
//! masses, drive work from rolling resistance and climbing.

use scenelang::ModelTree;
use serde::{Deserialize, Serialize};

use crate::terrain::Heightfield;
use crate::LUNAR_GRAVITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyGroup {
    Arm,
    Drive,
    Crawler,
    Bed,
    Blade,
}

/// Cumulative actuator work in joules. Entries only grow.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub arm: f64,
    pub drive: f64,
    pub crawler: f64,
    pub bed: f64,
    pub blade: f64,
}

impl EnergyLedger {
    pub fn add(&mut self, group: EnergyGroup, joules: f64) {
        debug_assert!(joules >= 0.0, "negative work {joules} J on {group:?}");
        let j = joules.max(0.0);
        match group {
            EnergyGroup::Arm => self.arm += j,
            EnergyGroup::Drive => self.drive += j,
            EnergyGroup::Crawler => self.crawler += j,
            EnergyGroup::Bed => self.bed += j,
            EnergyGroup::Blade => self.blade += j,
        }
    }

    pub fn total(&self) -> f64 {
        self.arm + self.drive + self.crawler + self.bed + self.blade
    }

    pub fn plus(&self, o: &EnergyLedger) -> EnergyLedger {
        EnergyLedger {
            arm: self.arm + o.arm,
            drive: self.drive + o.drive,
            crawler: self.crawler + o.crawler,
            bed: self.bed + o.bed,
            blade: self.blade + o.blade,
        }
    }

    pub fn minus(&self, o: &EnergyLedger) -> EnergyLedger {
        EnergyLedger {
            arm: self.arm - o.arm,
            drive: self.drive - o.drive,
            crawler: self.crawler - o.crawler,
            bed: self.bed - o.bed,
            blade: self.blade - o.blade,
        }
    }

    /// Whether no entry of `self` is below the matching entry of `earlier`.
    pub fn dominates(&self, earlier: &EnergyLedger) -> bool {
        self.arm >= earlier.arm
            && self.drive >= earlier.drive
            && self.crawler >= earlier.crawler
            && self.bed >= earlier.bed
            && self.blade >= earlier.blade
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrawlerState {
    Lowered,
    Raised,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 2],
    pub heading: f64,
}

const ARRIVE_TOLERANCE: f64 = 0.05;
const HEADING_TOLERANCE: f64 = 1e-3;

/// Turn-in-place then straight-line motion towards `goal`, one tick.
/// Charges rolling resistance on the travelled (or turned track) distance
/// and the potential energy of any climb. Returns whether the goal is
/// reached.
#[allow(clippy::too_many_arguments)]
pub fn drive_toward(
    pose: &mut Pose,
    goal: [f64; 2],
    speed: f64,
    turn_rate: f64,
    half_track: f64,
    mass: f64,
    terrain: &Heightfield,
    energy: &mut EnergyLedger,
    dt: f64,
) -> bool {
    let (dx, dy) = (goal[0] - pose.position[0], goal[1] - pose.position[1]);
    let dist = dx.hypot(dy);
    if dist < ARRIVE_TOLERANCE {
        return true;
    }
    let c_rr = terrain.regolith.rolling_resistance();
    let err = crate::wrap_angle(dy.atan2(dx) - pose.heading);
    if err.abs() > HEADING_TOLERANCE {
        let turn = err.clamp(-turn_rate * dt, turn_rate * dt);
        pose.heading = crate::wrap_angle(pose.heading + turn);
        energy.add(EnergyGroup::Drive, c_rr * mass * LUNAR_GRAVITY * turn.abs() * half_track);
        return false;
    }
    let step = (speed * dt).min(dist);
    let h0 = terrain.height_clamped(pose.position[0], pose.position[1]);
    pose.position[0] += step * dx / dist;
    pose.position[1] += step * dy / dist;
    let h1 = terrain.height_clamped(pose.position[0], pose.position[1]);
    energy.add(EnergyGroup::Drive, c_rr * mass * LUNAR_GRAVITY * step + mass * LUNAR_GRAVITY * (h1 - h0).max(0.0));
    dist - step < ARRIVE_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcavatorParams {
    pub bucket_capacity: f64,
    pub mass: f64,
    /// Boom, stick and bucket.
    pub arm_mass: f64,
    pub crawler_mass: f64,
    pub reach: f64,
    pub lift_height: f64,
    pub swing_angle: f64,
    pub swing_rate: f64,
    pub dig_time: f64,
    pub dump_time: f64,
    pub drive_speed: f64,
    pub turn_rate: f64,
    pub crawler_time: f64,
    pub crawler_stroke: f64,
    pub half_track: f64,
}

impl Default for ExcavatorParams {
    fn default() -> Self {
        ExcavatorParams {
            bucket_capacity: 150.0,
            mass: 2400.0,
            arm_mass: 400.0,
            crawler_mass: 200.0,
            reach: 3.0,
            lift_height: 1.8,
            swing_angle: 90f64.to_radians(),
            swing_rate: 30f64.to_radians(),
            dig_time: 6.0,
            dump_time: 3.0,
            drive_speed: 0.5,
            turn_rate: 20f64.to_radians(),
            crawler_time: 4.0,
            crawler_stroke: 0.3,
            half_track: 0.9,
        }
    }
}

fn body_mass(tree: &ModelTree, path: &str) -> Option<f64> {
    tree.body(path).map(|b| b.mass)
}

impl ExcavatorParams {
    /// Reads an `Excavator` instance; fields the model omits keep defaults.
    pub fn from_tree(tree: &ModelTree, prefix: &str) -> Self {
        let d = ExcavatorParams::default();
        let n = |f: &str, dflt: f64| tree.number(&format!("{prefix}.{f}")).unwrap_or(dflt);
        let arm = ["boom", "stick", "bucket"].iter().filter_map(|b| body_mass(tree, &format!("{prefix}.{b}"))).sum::<f64>();
        let crawlers = ["crawler_left", "crawler_right"]
            .iter()
            .filter_map(|b| body_mass(tree, &format!("{prefix}.{b}")))
            .sum::<f64>();
        let boom = n("boom_length", 2.4);
        let stick = n("stick_length", 1.6);
        ExcavatorParams {
            bucket_capacity: n("bucket_capacity", d.bucket_capacity),
            mass: n("mass", d.mass),
            arm_mass: if arm > 0.0 { arm } else { d.arm_mass },
            crawler_mass: if crawlers > 0.0 { crawlers } else { d.crawler_mass },
            reach: 0.75 * (boom + stick),
            lift_height: n("lift_height", d.lift_height),
            swing_angle: n("swing_angle", d.swing_angle),
            swing_rate: n("swing_rate", d.swing_rate),
            dig_time: n("dig_time", d.dig_time),
            dump_time: n("dump_time", d.dump_time),
            drive_speed: n("drive_speed", d.drive_speed),
            turn_rate: d.turn_rate,
            crawler_time: n("crawler_time", d.crawler_time),
            crawler_stroke: d.crawler_stroke,
            half_track: d.half_track,
        }
    }

    /// Work of one swing: spin-up and braking of the arm and load, no
    /// recuperation.
    pub fn swing_work(&self, load: f64) -> f64 {
        let inertia = (self.arm_mass + load) * self.reach * self.reach;
        inertia * self.swing_rate * self.swing_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruckParams {
    pub bed_capacity: f64,
    pub mass: f64,
    pub bed_mass: f64,
    pub drive_speed: f64,
    pub turn_rate: f64,
    pub tilt_time: f64,
    /// Rise of the load's centre of mass when the bed tips.
    pub tilt_lift: f64,
    pub blade_width: f64,
    pub blade_capacity: f64,
    pub half_track: f64,
}

impl Default for TruckParams {
    fn default() -> Self {
        TruckParams {
            bed_capacity: 450.0,
            mass: 1500.0,
            bed_mass: 250.0,
            drive_speed: 1.0,
            turn_rate: 20f64.to_radians(),
            tilt_time: 5.0,
            tilt_lift: 1.0,
            blade_width: 1.5,
            blade_capacity: 300.0,
            half_track: 0.8,
        }
    }
}

impl TruckParams {
    pub fn from_tree(tree: &ModelTree, prefix: &str) -> Self {
        let d = TruckParams::default();
        let n = |f: &str, dflt: f64| tree.number(&format!("{prefix}.{f}")).unwrap_or(dflt);
        TruckParams {
            bed_capacity: n("bed_capacity", d.bed_capacity),
            mass: n("mass", d.mass),
            bed_mass: body_mass(tree, &format!("{prefix}.bed")).unwrap_or(d.bed_mass),
            drive_speed: n("drive_speed", d.drive_speed),
            turn_rate: n("turn_rate", d.turn_rate),
            tilt_time: n("tilt_time", d.tilt_time),
            tilt_lift: d.tilt_lift,
            blade_width: n("blade_width", d.blade_width),
            blade_capacity: n("blade_capacity", d.blade_capacity),
            half_track: d.half_track,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excavator {
    pub params: ExcavatorParams,
    pub pose: Pose,
    /// Bucket load, kg.
    pub load: f64,
    /// Set once a dig has filled the bucket, cleared by dumping.
    pub loaded: bool,
    pub crawlers: CrawlerState,
    /// Upper-structure angle: 0 over the dig site, `swing_angle` over the
    /// truck.
    pub swing: f64,
    pub energy: EnergyLedger,
    /// Elapsed time of the timed operation in progress.
    pub timer: f64,
}

impl Excavator {
    pub fn new(params: ExcavatorParams, pose: Pose) -> Self {
        Excavator { params, pose, load: 0.0, loaded: false, crawlers: CrawlerState::Lowered, swing: 0.0, energy: EnergyLedger::default(), timer: 0.0 }
    }

    pub fn capacity(&self) -> f64 {
        self.params.bucket_capacity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpTruck {
    pub params: TruckParams,
    pub pose: Pose,
    /// Bed load, kg.
    pub load: f64,
    /// Set when the bed should be hauled to the dump site.
    pub hauling: bool,
    pub energy: EnergyLedger,
    pub timer: f64,
}

impl DumpTruck {
    pub fn new(params: TruckParams, pose: Pose) -> Self {
        DumpTruck { params, pose, load: 0.0, hauling: false, energy: EnergyLedger::default(), timer: 0.0 }
    }

    pub fn capacity(&self) -> f64 {
        self.params.bed_capacity
    }

    pub fn gross_mass(&self) -> f64 {
        self.params.mass + self.load
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn climbing_costs_potential_energy() {
        let spec = crate::terrain::TerrainSpec { size_x: 20.0, size_y: 10.0, noise_amplitude: 0.0, slope: 0.1, ..Default::default() };
        let t = crate::terrain::generate_terrain(&spec, 0).unwrap();
        let mut flat_e = EnergyLedger::default();
        let mut up_e = EnergyLedger::default();
        let flat = Heightfield::flat(20.0, 10.0, 0.25);
        let mut a = Pose { position: [-5.0, 0.0], heading: 0.0 };
        let mut b = a;
        while !drive_toward(&mut a, [5.0, 0.0], 1.0, 1.0, 0.8, 1000.0, &flat, &mut flat_e, 0.1) {}
        while !drive_toward(&mut b, [5.0, 0.0], 1.0, 1.0, 0.8, 1000.0, &t, &mut up_e, 0.1) {}
        let c_rr = flat.regolith.rolling_resistance();
        assert!((flat_e.drive - c_rr * 1000.0 * LUNAR_GRAVITY * 10.0).abs() < 1e-6);
        let climb = 1000.0 * LUNAR_GRAVITY * 10.0 * 0.1f64.tan();
        assert!((up_e.drive - flat_e.drive - climb).abs() < 1e-6 * climb);
    }
}

//! Excavator and dump-truck collaboration driven by a behavior tree, with
//! cycle metrics, energy accounting and blade grading.

mod bt;
mod grading;
mod loading;
mod machines;

pub use bt::{ActionFn, BtNode, ConditionFn, TickStatus};
pub use grading::{grade_surface, GradeRegion};
pub use loading::{
    build_loading_tree, run_cycles, run_excavation, write_cycles_csv, CycleMetrics, ExcavationReport, MassBalance, Site, SiteLayout,
    MASS_TOLERANCE,
};
pub use machines::{
    drive_toward, CrawlerState, DumpTruck, EnergyGroup, EnergyLedger, Excavator, ExcavatorParams, Pose, TruckParams,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoordinationError {
    #[error("site point ({x:.2}, {y:.2}) lies outside the terrain")]
    SiteOutsideTerrain { x: f64, y: f64 },
    #[error("grading region at ({:.2}, {:.2}) of size {size} is not inside the terrain", center[0], center[1])]
    RegionOutsideTerrain { center: [f64; 2], size: f64 },
    #[error("no cycle progress: {cycles} cycles done at t = {time:.1} s")]
    Stalled { cycles: usize, time: f64 },
    #[error("mass ledger out of balance at t = {time:.1} s: {balance:?}")]
    MassImbalance { time: f64, balance: MassBalance },
    #[error("{0}")]
    Scenario(String),
}

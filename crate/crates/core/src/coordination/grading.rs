use serde::{Deserialize, Serialize};

use super::machines::{DumpTruck, EnergyGroup};
use super::CoordinationError;
use crate::terrain::Heightfield;
use crate::LUNAR_GRAVITY;

/// Axis-aligned square patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeRegion {
    pub center: [f64; 2],
    pub size: f64,
}

impl GradeRegion {
    /// Node index ranges covered by the region.
    fn nodes(&self, t: &Heightfield) -> Result<(std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>), CoordinationError> {
        let h = self.size / 2.0;
        let (x0, x1, y0, y1) = (self.center[0] - h, self.center[0] + h, self.center[1] - h, self.center[1] + h);
        if !(self.size > 0.0) || !t.contains(x0, y0) || !t.contains(x1, y1) {
            return Err(CoordinationError::RegionOutsideTerrain { center: self.center, size: self.size });
        }
        let idx = |p: f64, o: f64| ((p - o) / t.cell_size).round() as usize;
        Ok((idx(x0, t.origin[0])..=idx(x1, t.origin[0]), idx(y0, t.origin[1])..=idx(y1, t.origin[1])))
    }

    /// Least-squares plane `h = a + b·x + c·y` through the region's nodes.
    pub fn fit_plane(&self, t: &Heightfield) -> Result<[f64; 3], CoordinationError> {
        let (ri, rj) = self.nodes(t)?;
        let mut ata = nalgebra::Matrix3::<f64>::zeros();
        let mut atb = nalgebra::Vector3::<f64>::zeros();
        for j in rj {
            for i in ri.clone() {
                let [x, y] = t.node_position(i, j);
                let row = nalgebra::Vector3::new(1.0, x, y);
                ata += row * row.transpose();
                atb += row * t.node(i, j);
            }
        }
        let sol = ata.lu().solve(&atb).ok_or(CoordinationError::RegionOutsideTerrain { center: self.center, size: self.size })?;
        Ok([sol[0], sol[1], sol[2]])
    }

    pub fn max_deviation(&self, t: &Heightfield, target: &dyn Fn(f64, f64) -> f64) -> Result<f64, CoordinationError> {
        let (ri, rj) = self.nodes(t)?;
        let mut worst: f64 = 0.0;
        for j in rj {
            for i in ri.clone() {
                let [x, y] = t.node_position(i, j);
                worst = worst.max((t.node(i, j) - target(x, y)).abs());
            }
        }
        Ok(worst)
    }
}

/// Blade grading in serpentine lanes along x, one lane per blade width.
/// The blade cuts material above the target, carries it (up to its
/// capacity) and fills hollows below the target; the load carries over
/// between lanes and passes. At each lane end, material beyond what the
/// remaining hollows need is dropped just past the region. Returns the
/// remaining maximum deviation.
pub fn grade_surface(
    truck: &mut DumpTruck,
    terrain: &mut Heightfield,
    region: GradeRegion,
    target: &dyn Fn(f64, f64) -> f64,
    passes: usize,
) -> Result<f64, CoordinationError> {
    let (ri, rj) = region.nodes(terrain)?;
    let c = terrain.cell_size;
    let area = c * c;
    let rho = terrain.regolith.mass_density;
    let mu = terrain.regolith.internal_friction.tan();
    let capacity = truck.params.blade_capacity / rho / area;
    let rows: Vec<usize> = rj.collect();
    let cols: Vec<usize> = ri.collect();
    let lane_rows = ((truck.params.blade_width / c).round() as usize).max(1);
    let lanes: Vec<&[usize]> = rows.chunks(lane_rows).collect();
    let lane_length = (cols.len() - 1) as f64 * c;
    let c_rr = terrain.regolith.rolling_resistance();
    let nx = terrain.nx;

    // Carried material as node-height units (height × one cell area).
    let mut carry = 0.0;
    let mut forward = true;
    for pass in 0..passes {
        let order: Vec<usize> = if pass % 2 == 0 { (0..lanes.len()).collect() } else { (0..lanes.len()).rev().collect() };
        for l in order {
            let lane = lanes[l];
            let columns: Vec<usize> = if forward { cols.clone() } else { cols.iter().rev().copied().collect() };
            for &i in &columns {
                for &j in lane {
                    let [x, y] = terrain.node_position(i, j);
                    let goal = target(x, y);
                    let k = j * nx + i;
                    let h = terrain.heights[k];
                    if h > goal {
                        let cut = (h - goal).min(capacity - carry).max(0.0);
                        terrain.heights[k] = h - cut;
                        carry += cut;
                    } else if h < goal {
                        let fill = (goal - h).min(carry);
                        terrain.heights[k] = h + fill;
                        carry -= fill;
                    }
                }
                truck.energy.add(EnergyGroup::Blade, carry * area * rho * LUNAR_GRAVITY * mu * c);
            }
            truck.energy.add(EnergyGroup::Drive, c_rr * truck.gross_mass() * LUNAR_GRAVITY * (lane_length + lane.len() as f64 * c));
            // Keep only what the remaining hollows need; windrow the rest
            // just past the lane end.
            let mut deficit = 0.0;
            for &j in &rows {
                for &i in &cols {
                    let [x, y] = terrain.node_position(i, j);
                    deficit += (target(x, y) - terrain.node(i, j)).max(0.0);
                }
            }
            let spoil = (carry - deficit).max(0.0);
            if spoil > 0.0 {
                let end = *columns.last().expect("region has columns");
                let i = if forward { (end + 1).min(nx - 1) } else { end.saturating_sub(1) };
                terrain.heights[lane[lane.len() / 2] * nx + i] += spoil;
                carry -= spoil;
            }
            forward = !forward;
        }
    }
    if carry > 0.0 {
        let lane = lanes[0];
        let i = cols[0].saturating_sub(1);
        terrain.heights[lane[lane.len() / 2] * nx + i] += carry;
    }
    truck.pose.position = region.center;
    region.max_deviation(terrain, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordination::machines::{Pose, TruckParams};

    fn truck() -> DumpTruck {
        DumpTruck::new(TruckParams::default(), Pose { position: [0.0, 0.0], heading: 0.0 })
    }

    #[test]
    fn flat_region_is_untouched() {
        let mut t = Heightfield::flat(20.0, 20.0, 0.25);
        let before = t.heights.clone();
        let d = grade_surface(&mut truck(), &mut t, GradeRegion { center: [0.0, 0.0], size: 4.0 }, &|_, _| 0.0, 2).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(t.heights, before);
    }

    #[test]
    fn outside_region_is_rejected() {
        let mut t = Heightfield::flat(20.0, 20.0, 0.25);
        let e = grade_surface(&mut truck(), &mut t, GradeRegion { center: [9.0, 0.0], size: 4.0 }, &|_, _| 0.0, 1);
        assert!(matches!(e, Err(CoordinationError::RegionOutsideTerrain { .. })));
    }
}

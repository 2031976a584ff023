//! Automatic assembly: forward propagation over a spanning tree of the mate
//! graph, then damped Gauss–Newton on the mates that close loops.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector, Isometry3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::MateKind;
use crate::error::{PlxError, Result};
use crate::resolve::resolve_with;
use crate::tree::{Frame, Mate, ModelTree};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 200;

/// Stable 64-bit hash of `(seed, path)`, used to derive one RNG stream per
/// randomized parameter so that adding a parameter does not shift the others.
pub fn param_seed(seed: u64, path: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in path.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Draws the value of randomized parameter `path` for `seed`.
pub fn sample_param(seed: u64, path: &str, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(param_seed(seed, path));
    rng.gen_range(lo..=hi)
}

/// Six-component mismatch of a mate between the world transforms of its two
/// bodies. Zero exactly when the mate is satisfied for some joint coordinate.
pub fn mate_residual(mate: &Mate, world_a: &Isometry3<f64>, world_b: &Isometry3<f64>) -> [f64; 6] {
    let fa = world_a * mate.frame_a.isometry();
    let fb = world_b * mate.frame_b.isometry();
    let rel = fa.inv_mul(&fb);
    let d = rel.translation.vector;
    let log = rel.rotation.scaled_axis();
    let axis = mate.axis_vector();
    let (p, r) = match mate.kind {
        MateKind::Rigid => (d, log),
        MateKind::Hinge => (d, log - axis * log.dot(&axis)),
        MateKind::Prismatic => (d - axis * d.dot(&axis), log),
    };
    [p.x, p.y, p.z, r.x, r.y, r.z]
}

/// Joint coordinate implied by the relative pose of a satisfied mate.
fn implied_coordinate(mate: &Mate, world_a: &Isometry3<f64>, world_b: &Isometry3<f64>) -> Option<f64> {
    let fa = world_a * mate.frame_a.isometry();
    let fb = world_b * mate.frame_b.isometry();
    let rel = fa.inv_mul(&fb);
    let axis = mate.axis_vector();
    match mate.kind {
        MateKind::Rigid => None,
        MateKind::Hinge => Some(rel.rotation.scaled_axis().dot(&axis)),
        MateKind::Prismatic => Some(rel.translation.vector.dot(&axis)),
    }
}

fn max_abs(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Largest residual component over all mates of an assembled tree.
pub fn max_mate_residual(tree: &ModelTree) -> f64 {
    let world: HashMap<&str, Isometry3<f64>> = tree
        .bodies
        .iter()
        .filter_map(|b| b.transform.map(|t| (b.path.as_str(), t.isometry())))
        .collect();
    tree.mates
        .iter()
        .map(|m| match (world.get(m.body_a.as_str()), world.get(m.body_b.as_str())) {
            (Some(a), Some(b)) => max_abs(&mate_residual(m, a, b)),
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// How a body was reached: from the world (anchor) or through a tree mate.
#[derive(Clone, Copy)]
enum Link {
    World,
    /// `(mate, parent body, parent is mate side A)`
    Mate(usize, usize, bool),
}

struct Kinematics<'t> {
    tree: &'t ModelTree,
    order: Vec<usize>,
    link: Vec<Link>,
    anchors: Vec<Isometry3<f64>>,
}

impl Kinematics<'_> {
    fn forward(&self, q: &[f64]) -> Vec<Isometry3<f64>> {
        let mut world = vec![Isometry3::identity(); self.tree.bodies.len()];
        for &b in &self.order {
            world[b] = match self.link[b] {
                Link::World => self.anchors[b],
                Link::Mate(m, parent, parent_is_a) => {
                    let mate = &self.tree.mates[m];
                    let fa = mate.frame_a.isometry();
                    let fb = mate.frame_b.isometry();
                    let j = mate.joint_transform(q[m]);
                    if parent_is_a {
                        world[parent] * fa * j * fb.inverse()
                    } else {
                        world[parent] * fb * j.inverse() * fa.inverse()
                    }
                }
            };
        }
        world
    }

    fn path_to_world(&self, mut b: usize) -> Vec<usize> {
        let mut edges = Vec::new();
        while let Link::Mate(m, parent, _) = self.link[b] {
            edges.push(m);
            b = parent;
        }
        edges
    }
}

/// Assigns a world transform to every body of `tree`.
///
/// When the tree was produced by [`crate::resolve`] and declares randomized
/// parameters, they are first re-drawn from their ranges using `seed`.
/// Trees read back from JSON keep their stored parameter values.
pub fn assemble(tree: &ModelTree, tolerance: f64, seed: u64) -> Result<ModelTree> {
    let mut tree = match (&tree.source, tree.randomized.is_empty()) {
        (Some(forest), false) => {
            let sampler = move |path: &str, lo: f64, hi: f64| sample_param(seed, path, lo, hi);
            let mut t = resolve_with(&tree.model, forest, Some(&sampler))?;
            t.source = tree.source.clone();
            t
        }
        _ => tree.clone(),
    };
    tree.seed = Some(seed);

    let n = tree.bodies.len();
    let index: HashMap<&str, usize> = tree.bodies.iter().enumerate().map(|(i, b)| (b.path.as_str(), i)).collect();
    let ends: Vec<(usize, usize)> = tree
        .mates
        .iter()
        .map(|m| {
            let a = index.get(m.body_a.as_str()).copied();
            let b = index.get(m.body_b.as_str()).copied();
            match (a, b) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(PlxError::OverConstrained(m.name.clone())),
            }
        })
        .collect::<Result<_>>()?;

    let mut link: Vec<Option<Link>> = vec![None; n];
    let mut anchors = vec![Isometry3::identity(); n];
    let mut queue = VecDeque::new();
    for (i, b) in tree.bodies.iter().enumerate() {
        if let (true, Some(t)) = (b.explicit, b.transform) {
            link[i] = Some(Link::World);
            anchors[i] = t.isometry();
            queue.push_back(i);
        }
    }
    if queue.is_empty() && n > 0 {
        return Err(PlxError::NoAnchor);
    }

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (m, &(a, b)) in ends.iter().enumerate() {
        adjacency[a].push(m);
        if b != a {
            adjacency[b].push(m);
        }
    }
    let mut in_tree = vec![false; tree.mates.len()];
    let mut order = Vec::with_capacity(n);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &m in &adjacency[u] {
            let (a, b) = ends[m];
            let (v, u_is_a) = if a == u { (b, true) } else { (a, false) };
            if link[v].is_none() {
                link[v] = Some(Link::Mate(m, u, u_is_a));
                in_tree[m] = true;
                queue.push_back(v);
            }
        }
    }
    let unreached: Vec<String> =
        (0..n).filter(|&i| link[i].is_none()).map(|i| tree.bodies[i].path.clone()).collect();
    if !unreached.is_empty() {
        return Err(PlxError::AmbiguousOrder(unreached));
    }

    let kin = Kinematics { tree: &tree, order, link: link.into_iter().map(Option::unwrap).collect(), anchors };
    let mut q: Vec<f64> = tree.mates.iter().map(|m| m.initial).collect();
    let closures: Vec<usize> = (0..tree.mates.len()).filter(|&m| !in_tree[m]).collect();

    if !closures.is_empty() {
        let mut free = Vec::new();
        for &c in &closures {
            let (a, b) = ends[c];
            let pa = kin.path_to_world(a);
            let pb = kin.path_to_world(b);
            let mut loop_free = false;
            for &m in pa.iter().filter(|m| !pb.contains(m)).chain(pb.iter().filter(|m| !pa.contains(m))) {
                let mate = &tree.mates[m];
                if mate.has_coordinate() && !mate.actuated {
                    loop_free = true;
                    if !free.contains(&m) {
                        free.push(m);
                    }
                }
            }
            if !loop_free {
                let w = kin.forward(&q);
                if max_abs(&mate_residual(&tree.mates[c], &w[a], &w[b])) > tolerance {
                    return Err(PlxError::OverConstrained(tree.mates[c].name.clone()));
                }
            }
        }
        free.sort_unstable();
        solve_loops(&kin, &ends, &closures, &free, &mut q, tolerance, seed)?;
    }

    let world = kin.forward(&q);
    let mut coords = q.clone();
    for &c in &closures {
        let (a, b) = ends[c];
        if let Some(v) = implied_coordinate(&tree.mates[c], &world[a], &world[b]) {
            coords[c] = v;
        }
    }
    drop(kin);
    for (i, body) in tree.bodies.iter_mut().enumerate() {
        body.transform = Some(Frame::from_isometry(&world[i]));
    }
    for (m, mate) in tree.mates.iter_mut().enumerate() {
        mate.coordinate = if mate.has_coordinate() { Some(coords[m]) } else { None };
    }
    Ok(tree)
}

fn stacked_residual(kin: &Kinematics, ends: &[(usize, usize)], closures: &[usize], q: &[f64]) -> DVector<f64> {
    let w = kin.forward(q);
    let mut r = DVector::zeros(6 * closures.len());
    for (k, &c) in closures.iter().enumerate() {
        let (a, b) = ends[c];
        let e = mate_residual(&kin.tree.mates[c], &w[a], &w[b]);
        for (j, v) in e.iter().enumerate() {
            r[6 * k + j] = *v;
        }
    }
    r
}

fn solve_loops(
    kin: &Kinematics,
    ends: &[(usize, usize)],
    closures: &[usize],
    free: &[usize],
    q: &mut Vec<f64>,
    tolerance: f64,
    seed: u64,
) -> Result<()> {
    const ATTEMPTS: usize = 4;
    const H: f64 = 1e-7;
    let start = q.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(param_seed(seed, "assembly"));
    let mut best = (f64::INFINITY, 0usize);

    for attempt in 0..ATTEMPTS {
        let mut x = start.clone();
        if attempt > 0 {
            for &m in free {
                x[m] += rng.gen_range(-0.5..0.5);
            }
        }
        let mut r = stacked_residual(kin, ends, closures, &x);
        let mut lambda = 1e-3;
        let mut iterations = 0;
        while iterations < MAX_ITERATIONS {
            if max_abs(r.as_slice()) < tolerance {
                q.clone_from(&x);
                return Ok(());
            }
            iterations += 1;
            let mut jac = DMatrix::zeros(r.len(), free.len());
            for (j, &m) in free.iter().enumerate() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[m] += H;
                xm[m] -= H;
                let col = (stacked_residual(kin, ends, closures, &xp) - stacked_residual(kin, ends, closures, &xm)) / (2.0 * H);
                jac.set_column(j, &col);
            }
            let jt = jac.transpose();
            let jtj = &jt * &jac;
            let g = &jt * &r;
            let cost = r.norm_squared();
            let mut improved = false;
            for _ in 0..12 {
                let mut a = jtj.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
                }
                let Some(step) = a.lu().solve(&(-&g)) else {
                    lambda *= 10.0;
                    continue;
                };
                let mut trial = x.clone();
                for (j, &m) in free.iter().enumerate() {
                    trial[m] += step[j];
                }
                let rt = stacked_residual(kin, ends, closures, &trial);
                if rt.norm_squared() < cost {
                    x = trial;
                    r = rt;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        let residual = max_abs(r.as_slice());
        if residual < tolerance {
            q.clone_from(&x);
            return Ok(());
        }
        if residual < best.0 {
            best = (residual, iterations);
        }
    }
    Err(PlxError::LoopNotConverged { residual: best.0, iterations: best.1 })
}

/// Convenience: world position of body `path` in an assembled tree.
pub fn body_position(tree: &ModelTree, path: &str) -> Option<Vector3<f64>> {
    let t = tree.body(path)?.transform?;
    Some(Vector3::new(t.position[0], t.position[1], t.position[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_source, MemoryRegistry};
    use crate::resolve::resolve;

    fn tree(src: &str, model: &str) -> ModelTree {
        let reg = MemoryRegistry::new().with("main.plx", src);
        let f = parse_source(&reg.unit("main.plx").unwrap(), &reg).unwrap();
        resolve(model, &f).unwrap()
    }

    #[test]
    fn single_hinge_propagation() {
        let t = tree(
            "model Arm:\n  base: Body = Body(position = (0, 0, 0))\n  link: Body = Body()\n  mate hinge(base, link @ (-1, 0, 0), axis=(0, 0, 1))\n",
            "Arm",
        );
        let a = assemble(&t, DEFAULT_TOLERANCE, 0).unwrap();
        let p = body_position(&a, "link").unwrap();
        assert!((p - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn missing_anchor() {
        let t = tree("model M:\n  a: Body = Body()\n", "M");
        assert_eq!(assemble(&t, DEFAULT_TOLERANCE, 0).unwrap_err(), PlxError::NoAnchor);
    }

    #[test]
    fn unreachable_body_is_ambiguous() {
        let t = tree("model M:\n  a: Body = Body(position = (0, 0, 0))\n  b: Body = Body()\n", "M");
        assert_eq!(assemble(&t, DEFAULT_TOLERANCE, 0).unwrap_err(), PlxError::AmbiguousOrder(vec!["b".into()]));
    }

    #[test]
    fn rigid_loop_without_freedom_is_over_constrained() {
        let t = tree(
            "model M:\n  a: Body = Body(position = (0, 0, 0))\n  b: Body = Body()\n  mate rigid(a, b @ (-1, 0, 0))\n  mate rigid(a, b)\n",
            "M",
        );
        assert!(matches!(assemble(&t, DEFAULT_TOLERANCE, 0).unwrap_err(), PlxError::OverConstrained(_)));
    }

    #[test]
    fn seeded_randomization_is_deterministic_and_in_range() {
        let t = tree("model M:\n  a: Body = Body(position = (0, 0, width))\n  width: Real = random(1, 2)\n", "M");
        let x = assemble(&t, DEFAULT_TOLERANCE, 7).unwrap();
        let y = assemble(&t, DEFAULT_TOLERANCE, 7).unwrap();
        assert_eq!(x, y);
        let w = x.number("width").unwrap();
        assert!((1.0..=2.0).contains(&w));
        assert_eq!(x.body("a").unwrap().transform.unwrap().position[2], w);
    }
}

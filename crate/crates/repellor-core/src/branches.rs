//! Multivalued inverse iteration.
//!
//! Toral systems invert exactly: the preimages of `x` are
//! `A^{-1}(x + k) mod 1` over the coset representatives `k` of `Z^m / A Z^m`.
//! The perturbed skew product inverts by Newton continuation on the lifted
//! torus factor (seeded from the exact `eps = 0` inverse) followed by the two
//! complex square-root branches of the planar factor.
//!
//! Branch labels are canonical: coset index in lexicographic order, doubled
//! and offset by the square-root sign for the skew product. Identical inputs
//! therefore produce identical trees, node order included, independent of
//! thread count.

use crate::error::{DynError, Result};
use crate::geom::{mod1, Point, Q_MAX};
use crate::intmat::{coset_representatives, CosetSet};
use crate::par;
use crate::system::{SystemSpec, Variant};

use std::f64::consts::PI;

/// Forward-check tolerance: every inverse branch must map forward onto its
/// target within this distance.
pub const FORWARD_CHECK_TOL: f64 = 1e-9;

/// Newton and branch-separation settings for inverse iteration.
#[derive(Clone, Copy, Debug)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iters: u32,
    pub min_branch_separation: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol: 1e-12,
            max_iters: 50,
            min_branch_separation: 1e-3,
        }
    }
}

/// Tree construction settings: Newton parameters plus the node budget that
/// guards the `d^n` blowup.
#[derive(Clone, Copy, Debug)]
pub struct TreeConfig {
    pub newton: NewtonConfig,
    pub node_budget: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            newton: NewtonConfig::default(),
            node_budget: 10_000_000,
        }
    }
}

/// The region `U` that prunes inverse branches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    /// No pruning; the whole torus is the repellor.
    FullTorus,
    /// `| |z| - 1 | < delta` on the planar factor, full `T^2` factor.
    AnnulusTorus { delta: f64 },
}

impl Region {
    /// Default region for a system.
    pub fn for_system(system: &SystemSpec) -> Region {
        match system.variant() {
            Variant::Toral => Region::FullTorus,
            Variant::PerturbedSkew => Region::AnnulusTorus {
                delta: system.delta(),
            },
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        match self {
            Region::FullTorus => true,
            Region::AnnulusTorus { delta } => {
                let r = (p.0[0] * p.0[0] + p.0[1] * p.0[1]).sqrt();
                (r - 1.0).abs() < *delta
            }
        }
    }
}

pub use crate::intmat::coset_representatives as cosets;

/// All `d` preimages of `x`, in canonical branch order.
pub fn preimages(system: &SystemSpec, x: &Point, cfg: &NewtonConfig) -> Result<Vec<Point>> {
    let reps = coset_representatives(system.matrix())?;
    let out = match system.variant() {
        Variant::Toral => toral_preimages(system, x, &reps),
        Variant::PerturbedSkew => skew_preimages(system, x, &reps, cfg)?,
    };
    // every branch must map forward onto x
    for y in &out {
        let fy = system.apply(y);
        let dist = system.distance(&fy, x);
        if dist > FORWARD_CHECK_TOL {
            return Err(DynError::NewtonDivergence {
                tol: cfg.tol,
                iters: cfg.max_iters,
                residual: dist,
            });
        }
    }
    // branch collision signals proximity to a critical point
    for i in 0..out.len() {
        for j in 0..i {
            let d = system.distance(&out[i], &out[j]);
            if d < cfg.min_branch_separation {
                return Err(DynError::BranchCollision {
                    dist: d,
                    min_sep: cfg.min_branch_separation,
                });
            }
        }
    }
    Ok(out)
}

fn toral_preimages(system: &SystemSpec, x: &Point, reps: &CosetSet) -> Vec<Point> {
    let m = system.torus_dim();
    let inv = system.matrix_inv_float();
    reps.reps()
        .iter()
        .map(|k| {
            let mut shifted = [0.0; Q_MAX];
            for i in 0..m {
                shifted[i] = x.0[i] + k[i] as f64;
            }
            let y = inv.mul_vec(&shifted);
            let mut out = [0.0; Q_MAX];
            for i in 0..m {
                out[i] = mod1(y[i]);
            }
            Point(out)
        })
        .collect()
}

fn skew_preimages(
    system: &SystemSpec,
    x: &Point,
    reps: &CosetSet,
    cfg: &NewtonConfig,
) -> Result<Vec<Point>> {
    let eps = system.epsilon();
    let target = [x.0[2], x.0[3]];
    let mut out = Vec::with_capacity(2 * reps.len());
    for k in reps.reps() {
        let t = [target[0] + k[0] as f64, target[1] + k[1] as f64];
        let xy = newton_torus_inverse(system, t, cfg)?;
        // planar branches: the two square roots of z - eps e^{2 pi i (2x'+y')}
        let theta = 2.0 * PI * (2.0 * xy[0] + xy[1]);
        let wu = x.0[0] - eps * theta.cos();
        let wv = x.0[1] - eps * theta.sin();
        let (su, sv) = complex_sqrt(wu, wv);
        for sign in [1.0, -1.0] {
            out.push(Point([sign * su, sign * sv, mod1(xy[0]), mod1(xy[1])]));
        }
    }
    Ok(out)
}

/// Newton solve of the lifted torus factor `G(X) = A X + eps P(X) = t`,
/// seeded at the exact linear inverse `A^{-1} t`.
fn newton_torus_inverse(system: &SystemSpec, t: [f64; 2], cfg: &NewtonConfig) -> Result<[f64; 2]> {
    let a = system.matrix_float();
    let ainv = system.matrix_inv_float();
    let eps = system.epsilon();
    let mut x = {
        let v = ainv.mul_vec(&[t[0], t[1], 0.0, 0.0]);
        [v[0], v[1]]
    };
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        let gx = [
            a.a[0][0] * x[0] + a.a[0][1] * x[1] + eps * (2.0 * PI * (x[0] + x[1])).sin(),
            a.a[1][0] * x[0] + a.a[1][1] * x[1] + eps * (4.0 * PI * x[0]).cos().powi(2),
        ];
        let r = [gx[0] - t[0], gx[1] - t[1]];
        residual = (r[0] * r[0] + r[1] * r[1]).sqrt();
        if residual <= cfg.tol {
            return Ok(x);
        }
        let c1 = 2.0 * PI * eps * (2.0 * PI * (x[0] + x[1])).cos();
        let s8 = 4.0 * PI * eps * (8.0 * PI * x[0]).sin();
        let j00 = a.a[0][0] + c1;
        let j01 = a.a[0][1] + c1;
        let j10 = a.a[1][0] - s8;
        let j11 = a.a[1][1];
        let det = j00 * j11 - j01 * j10;
        if det.abs() < 1e-14 {
            break;
        }
        x[0] -= (j11 * r[0] - j01 * r[1]) / det;
        x[1] -= (-j10 * r[0] + j00 * r[1]) / det;
    }
    Err(DynError::NewtonDivergence {
        tol: cfg.tol,
        iters: cfg.max_iters,
        residual,
    })
}

/// Principal square root of `u + iv` in real coordinates.
fn complex_sqrt(u: f64, v: f64) -> (f64, f64) {
    let r = (u * u + v * v).sqrt();
    let su = ((r + u) / 2.0).max(0.0).sqrt();
    let sv = ((r - u) / 2.0).max(0.0).sqrt();
    (su, if v < 0.0 { -sv } else { sv })
}

/// One node of a preimage tree. `parent` indexes the previous level;
/// `branch` is the canonical inverse-branch label.
#[derive(Clone, Copy, Debug)]
pub struct TreeNode {
    pub point: Point,
    pub parent: u32,
    pub branch: u8,
}

/// Depth-`n` tree of region-pruned inverse branches under a root.
#[derive(Clone, Debug)]
pub struct PreimageTree {
    pub root: Point,
    pub depth: usize,
    pub region: Region,
    /// `levels[l]` holds the points mapping onto the root in `l` steps,
    /// sorted by (parent index, branch label).
    pub levels: Vec<Vec<TreeNode>>,
}

impl PreimageTree {
    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.len()).collect()
    }

    pub fn total_nodes(&self) -> usize {
        self.levels.iter().map(|l| l.len()).sum()
    }

    /// True when region pruning removed at least one branch somewhere.
    pub fn pruned(&self, degree: u32) -> bool {
        let mut expect = 1u128;
        for lvl in &self.levels {
            if lvl.len() as u128 != expect {
                return true;
            }
            expect = expect.saturating_mul(degree as u128);
        }
        false
    }

    /// CSV export: level, node_index, parent_index, branch_label, coords.
    pub fn to_csv(&self, q: usize) -> String {
        let mut s = String::from("level,node_index,parent_index,branch_label");
        for i in 0..q {
            s.push_str(&format!(",coord_{i}"));
        }
        s.push('\n');
        for (lvl, nodes) in self.levels.iter().enumerate() {
            for (idx, node) in nodes.iter().enumerate() {
                let parent = if lvl == 0 {
                    -1i64
                } else {
                    node.parent as i64
                };
                s.push_str(&format!("{lvl},{idx},{parent},{}", node.branch));
                for c in node.point.coords(q) {
                    s.push_str(&format!(",{:.17e}", c));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Breadth-first, region-pruned preimage tree of depth `n` under `z`.
///
/// Levels are produced in canonical order regardless of scheduling; the node
/// budget bounds the worst-case tree size `(d^{n+1}-1)/(d-1)` up front and
/// the live count during construction.
pub fn preimage_tree(
    system: &SystemSpec,
    z: &Point,
    n: usize,
    region: Region,
    cfg: &TreeConfig,
) -> Result<PreimageTree> {
    let d = system.degree() as u128;
    // worst-case node count if nothing is pruned
    let mut worst: u128 = 1;
    let mut level_size: u128 = 1;
    for _ in 0..n {
        level_size = level_size.saturating_mul(d);
        worst = worst.saturating_add(level_size);
    }
    if worst > cfg.node_budget as u128 {
        return Err(DynError::TreeBudgetExceeded {
            needed: worst,
            budget: cfg.node_budget,
        });
    }

    let mut levels = Vec::with_capacity(n + 1);
    levels.push(vec![TreeNode {
        point: *z,
        parent: 0,
        branch: 0,
    }]);
    let mut total = 1usize;
    for _lvl in 0..n {
        let prev = levels.last().unwrap();
        // expand parents in parallel; order is preserved by indexed collect
        let expanded: Vec<Result<Vec<Point>>> =
            par::map_slice(prev, |node| preimages(system, &node.point, &cfg.newton));
        let mut next = Vec::with_capacity(prev.len() * system.degree() as usize);
        for (pidx, branch_set) in expanded.into_iter().enumerate() {
            let pts = branch_set?;
            for (b, p) in pts.into_iter().enumerate() {
                if region.contains(&p) {
                    next.push(TreeNode {
                        point: p,
                        parent: pidx as u32,
                        branch: b as u8,
                    });
                }
            }
        }
        total += next.len();
        if total > cfg.node_budget {
            return Err(DynError::TreeBudgetExceeded {
                needed: total as u128,
                budget: cfg.node_budget,
            });
        }
        levels.push(next);
    }
    Ok(PreimageTree {
        root: *z,
        depth: n,
        region,
        levels,
    })
}

/// One backward step along a chosen branch; used for settling points onto the
/// numerical repellor and for backward orbit sampling.
pub fn pull_back(
    system: &SystemSpec,
    p: &Point,
    branch: usize,
    cfg: &NewtonConfig,
) -> Result<Point> {
    let pts = preimages(system, p, cfg)?;
    Ok(pts[branch % pts.len()])
}

/// Settles a point onto the numerical repellor by `n_settle` backward steps
/// with seeded branch choices. Backward orbits stay in the repellor
/// neighbourhood and converge to the invariant set at the unstable rate.
pub fn settle_on_repellor(
    system: &SystemSpec,
    start: &Point,
    n_settle: usize,
    seed: u64,
    stream: u64,
    cfg: &NewtonConfig,
) -> Result<Point> {
    use rand::Rng;
    let mut rng = crate::rng::stream_rng(seed, stream);
    let d = system.degree() as usize;
    let mut p = *start;
    for _ in 0..n_settle {
        p = pull_back(system, &p, rng.random_range(0..d), cfg)?;
    }
    Ok(p)
}

/// Diagnostics for the repellor condition `closure(U) inside f(U)` on a grid:
/// the fraction of grid points with at least one preimage in `U`, the
/// observed minimum branch separation (an empirical bound for the critical
/// gap), and whether the per-point preimage count is constant.
#[derive(Clone, Debug)]
pub struct RepellorReport {
    pub grid_points: usize,
    pub fraction_with_preimage: f64,
    pub empirical_min_separation: f64,
    pub counts_constant: bool,
    pub count_value: Option<u32>,
    pub count_histogram: Vec<(u32, usize)>,
    pub failures: usize,
}

pub fn check_repellor(
    system: &SystemSpec,
    region: Region,
    grid_step: f64,
    cfg: &NewtonConfig,
) -> Result<RepellorReport> {
    if grid_step <= 0.0 {
        return Err(DynError::InvalidArgument("grid_step must be > 0".into()));
    }
    let grid = region_grid(system, grid_step);
    let results: Vec<(u32, f64, bool)> = par::map_slice(&grid, |p| {
        match preimages(system, p, cfg) {
            Ok(pts) => {
                let kept: Vec<&Point> = pts.iter().filter(|y| region.contains(y)).collect();
                let mut min_sep = f64::INFINITY;
                for i in 0..kept.len() {
                    for j in 0..i {
                        min_sep = min_sep.min(system.distance(kept[i], kept[j]));
                    }
                }
                (kept.len() as u32, min_sep, false)
            }
            Err(_) => (0, f64::INFINITY, true),
        }
    });
    let mut have = 0usize;
    let mut min_sep = f64::INFINITY;
    let mut failures = 0usize;
    let mut hist = std::collections::BTreeMap::<u32, usize>::new();
    for (count, sep, failed) in &results {
        if *failed {
            failures += 1;
        }
        if *count > 0 {
            have += 1;
        }
        min_sep = min_sep.min(*sep);
        *hist.entry(*count).or_insert(0) += 1;
    }
    let counts_constant = hist.len() == 1;
    let count_value = if counts_constant {
        hist.keys().next().copied()
    } else {
        None
    };
    Ok(RepellorReport {
        grid_points: grid.len(),
        fraction_with_preimage: have as f64 / grid.len().max(1) as f64,
        empirical_min_separation: min_sep,
        counts_constant,
        count_value,
        count_histogram: hist.into_iter().collect(),
        failures,
    })
}

/// Uniform grid over the closure of the region: the full torus, or
/// (angle, radius, x, y) shells over the closed annulus.
fn region_grid(system: &SystemSpec, step: f64) -> Vec<Point> {
    match system.variant() {
        Variant::Toral => {
            let m = system.torus_dim();
            let per = (1.0 / step).round().max(1.0) as usize;
            let mut out = Vec::with_capacity(per.pow(m as u32));
            let mut idx = vec![0usize; m];
            loop {
                let mut c = [0.0; Q_MAX];
                for (i, &ix) in idx.iter().enumerate() {
                    c[i] = ix as f64 / per as f64;
                }
                out.push(Point(c));
                let mut carry = m;
                for i in (0..m).rev() {
                    idx[i] += 1;
                    if idx[i] < per {
                        carry = i;
                        break;
                    }
                    idx[i] = 0;
                }
                if carry == m {
                    break;
                }
            }
            out
        }
        Variant::PerturbedSkew => {
            let delta = system.delta();
            let n_ang = (1.0 / step).round().max(1.0) as usize;
            let n_rad = (2.0 * delta / step).round().max(1.0) as usize + 1;
            let n_tor = (1.0 / step).round().max(1.0) as usize;
            let mut out = Vec::new();
            for ia in 0..n_ang {
                let ang = 2.0 * PI * ia as f64 / n_ang as f64;
                for ir in 0..n_rad {
                    // closed annulus: radius shells include both boundaries
                    let r = 1.0 - delta + 2.0 * delta * ir as f64 / (n_rad - 1).max(1) as f64;
                    for ix in 0..n_tor {
                        for iy in 0..n_tor {
                            out.push(Point([
                                r * ang.cos(),
                                r * ang.sin(),
                                ix as f64 / n_tor as f64,
                                iy as f64 / n_tor as f64,
                            ]));
                        }
                    }
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::SystemSpec;

    fn cfg() -> NewtonConfig {
        NewtonConfig::default()
    }

    #[test]
    fn doubling_preimages_of_zero() {
        let s = SystemSpec::doubling();
        let pts = preimages(&s, &Point::from_slice(&[0.0]), &cfg()).unwrap();
        let mut xs: Vec<f64> = pts.iter().map(|p| p.0[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(xs, vec![0.0, 0.5]);
    }

    #[test]
    fn toral_2d_preimages_of_origin() {
        let s = SystemSpec::mat2122();
        let pts = preimages(&s, &Point::from_slice(&[0.0, 0.0]), &cfg()).unwrap();
        assert_eq!(pts.len(), 2);
        // branches are {(0,0), (0.5, 0)}: A (0.5, 0) = (1, 1) = 0 mod 1
        let mut seen: Vec<Vec<i64>> = pts
            .iter()
            .map(|p| {
                p.coords(2)
                    .iter()
                    .map(|c| (c * 1000.0).round() as i64)
                    .collect()
            })
            .collect();
        seen.sort();
        assert_eq!(seen, vec![vec![0, 0], vec![500, 0]]);
    }

    #[test]
    fn skew_preimages_at_eps_zero() {
        let s = SystemSpec::skew(0.0).unwrap();
        let x = Point([1.0, 0.0, 0.0, 0.0]);
        let pts = preimages(&s, &x, &cfg()).unwrap();
        assert_eq!(pts.len(), 4);
        // planar parts are the square roots of 1: {(1,0), (-1,0)}
        let mut planar: Vec<(i64, i64)> = pts
            .iter()
            .map(|p| ((p.0[0] * 100.0).round() as i64, (p.0[1] * 100.0).round() as i64))
            .collect();
        planar.sort();
        planar.dedup();
        assert_eq!(planar, vec![(-100, 0), (100, 0)]);
        for p in &pts {
            assert!(s.distance(&s.apply(p), &x) <= FORWARD_CHECK_TOL);
        }
    }

    #[test]
    fn skew_preimages_forward_check_small_eps() {
        let s = SystemSpec::skew(0.02).unwrap();
        let mut rng = crate::rng::stream_rng(19, 0);
        for _ in 0..50 {
            let x = s.random_point(&mut rng);
            let pts = preimages(&s, &x, &cfg()).unwrap();
            assert_eq!(pts.len(), 4);
            for p in &pts {
                assert!(s.distance(&s.apply(p), &x) <= FORWARD_CHECK_TOL);
            }
        }
    }

    #[test]
    fn preimage_continuity_in_eps() {
        // each branch of a fixed target moves O(eps) as eps -> 0
        let target = Point([1.0, 0.0, 0.37, 0.81]);
        let base: Vec<Point> = preimages(&SystemSpec::skew(0.0).unwrap(), &target, &cfg()).unwrap();
        let mut prev_err = 0.0;
        for eps in [0.005, 0.01, 0.02] {
            let s = SystemSpec::skew(eps).unwrap();
            let pts = preimages(&s, &target, &cfg()).unwrap();
            let mut worst: f64 = 0.0;
            for (a, b) in pts.iter().zip(&base) {
                worst = worst.max(s.distance(a, b));
            }
            // slope bound: |y(eps) - y(0)| <= C eps with a modest constant
            assert!(worst <= 5.0 * eps, "branch moved {worst} at eps={eps}");
            assert!(worst >= prev_err * 0.5); // roughly monotone growth
            prev_err = worst;
        }
    }

    #[test]
    fn dyadic_tree_leaves() {
        let s = SystemSpec::doubling();
        let t = preimage_tree(
            &s,
            &Point::from_slice(&[0.0]),
            3,
            Region::FullTorus,
            &TreeConfig::default(),
        )
        .unwrap();
        assert_eq!(t.level_sizes(), vec![1, 2, 4, 8]);
        let mut leaves: Vec<f64> = t.levels[3].iter().map(|n| n.point.0[0]).collect();
        leaves.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected: Vec<f64> = (0..8).map(|j| j as f64 / 8.0).collect();
        for (a, b) in leaves.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tree_forward_consistency() {
        let s = SystemSpec::mat2122();
        let z = Point::from_slice(&[0.0, 0.0]);
        let t = preimage_tree(&s, &z, 2, Region::FullTorus, &TreeConfig::default()).unwrap();
        assert_eq!(t.level_sizes(), vec![1, 2, 4]);
        for (lvl, nodes) in t.levels.iter().enumerate() {
            for node in nodes {
                let fwd = s.iterate(&node.point, lvl);
                assert!(s.distance(&fwd, &z) <= FORWARD_CHECK_TOL);
            }
        }
    }

    #[test]
    fn tree_budget_guard() {
        let s = SystemSpec::doubling();
        let cfg = TreeConfig {
            node_budget: 10,
            ..TreeConfig::default()
        };
        let r = preimage_tree(&s, &Point::from_slice(&[0.0]), 5, Region::FullTorus, &cfg);
        assert!(matches!(r, Err(DynError::TreeBudgetExceeded { .. })));
    }

    #[test]
    fn skew_tree_prunes_nothing_inside_annulus() {
        let s = SystemSpec::skew(0.01).unwrap();
        let z = settle_on_repellor(&s, &Point([1.0, 0.0, 0.2, 0.6]), 40, 7, 0, &cfg()).unwrap();
        let t = preimage_tree(&s, &z, 5, Region::for_system(&s), &TreeConfig::default()).unwrap();
        assert_eq!(t.level_sizes(), vec![1, 4, 16, 64, 256, 1024]);
        assert!(!t.pruned(s.degree()));
        for node in &t.levels[5] {
            assert!(s.in_region(&node.point));
        }
    }

    #[test]
    fn tree_is_deterministic() {
        let s = SystemSpec::skew(0.015).unwrap();
        let z = settle_on_repellor(&s, &Point([1.0, 0.0, 0.1, 0.9]), 30, 3, 0, &cfg()).unwrap();
        let a = preimage_tree(&s, &z, 4, Region::for_system(&s), &TreeConfig::default()).unwrap();
        let b = preimage_tree(&s, &z, 4, Region::for_system(&s), &TreeConfig::default()).unwrap();
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            assert_eq!(la.len(), lb.len());
            for (na, nb) in la.iter().zip(lb) {
                assert_eq!(na.point, nb.point);
                assert_eq!(na.parent, nb.parent);
                assert_eq!(na.branch, nb.branch);
            }
        }
    }

    #[test]
    fn toral_branches_separated_by_half_empirical_gap() {
        let s = SystemSpec::mat2122();
        let mut rng = crate::rng::stream_rng(23, 0);
        // empirical branch gap for this matrix is |A^{-1}(1,1)| = 0.5
        for _ in 0..200 {
            let x = s.random_point(&mut rng);
            let pts = preimages(&s, &x, &cfg()).unwrap();
            assert_eq!(pts.len(), 2);
            assert!(s.distance(&pts[0], &pts[1]) >= 0.25);
        }
    }

    #[test]
    fn repellor_check_full_torus() {
        let s = SystemSpec::mat2122();
        let rep = check_repellor(&s, Region::FullTorus, 0.05, &cfg()).unwrap();
        assert_eq!(rep.fraction_with_preimage, 1.0);
        assert!(rep.counts_constant);
        assert_eq!(rep.count_value, Some(2));
    }

    #[test]
    fn repellor_check_doubling_gap() {
        let s = SystemSpec::doubling();
        let rep = check_repellor(&s, Region::FullTorus, 0.01, &cfg()).unwrap();
        assert!((rep.empirical_min_separation - 0.5).abs() < 1e-12);
    }
}

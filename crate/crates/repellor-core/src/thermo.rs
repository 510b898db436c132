//! Thermodynamic formalism: Birkhoff sums, the stable potential, Bowen
//! balls, maximal separated sets, pressure estimation, and the Monte Carlo
//! volume estimators for Bowen balls and their forward tubes.
//!
//! # Stable frames
//!
//! The stable subspace at `x` is the span of the right-singular vectors of
//! the `n`-step derivative `Df^n_x` with singular values below 1. It is
//! computed as the dominant column space of the inverse cocycle: starting
//! from the far end of the orbit, apply `Df^{-1}` and re-orthonormalize by QR
//! at every step. The accumulated R diagonals estimate the singular values;
//! directions that grow under the inverse cocycle are the stable ones. The
//! ratio of adjacent singular values across the unit-circle split is the
//! conditioning diagnostic (`WeakHyperbolicity` below a threshold).
//!
//! # Separated sets
//!
//! A maximal `(n, eps)`-separated set is grown greedily over seeded uniform
//! candidates: a point is admitted iff its Bowen distance to every admitted
//! point is at least `eps`. Candidates arrive in rounds that double until the
//! marginal admission rate drops below 1%, which pins the sampling dose per
//! exclusion volume and keeps the packing fraction comparable across `n` (the
//! growth-rate fits depend on that). Conflict detection hashes each point by
//! its time-0 and time-(n-1) cells: a Bowen-close pair is close at both ends,
//! so with cells of side >= 2 eps the pair shares one of 2^q cell choices per
//! end, and the greedy pass probes exactly those keys. Admission is a single
//! sequential pass over the candidate stream, so the result is deterministic;
//! the construction is re-verified pairwise afterwards through an independent
//! walk of the same covering structure.

use crate::branches::{preimages, NewtonConfig, TreeConfig};
use crate::error::{DynError, Result};
use crate::geom::{wrap_half, Point, Q_MAX};
use crate::linalg::Mat;
use crate::measure::WeightedAtomCloud;
use crate::par;
use crate::rng::{stream_rng, streams};
use crate::system::{SystemSpec, Variant};

use rand::Rng;

/// Default number of cocycle steps for stable-frame estimation.
pub const DEFAULT_N_CONV: usize = 30;

/// Default singular-gap threshold below which the stable split is rejected.
pub const DEFAULT_GAP_THRESHOLD: f64 = 10.0;

// ---------------------------------------------------------------------------
// potentials and Birkhoff sums
// ---------------------------------------------------------------------------

/// The potentials the estimators integrate along orbits.
#[derive(Clone, Debug)]
pub enum Potential {
    Zero,
    Constant(f64),
    /// `log |det(Df restricted to the stable subspace)|`.
    Stable { n_conv: usize },
    /// The pressure-identity potential: stable potential minus `log d`.
    StableMinusLogDegree { n_conv: usize },
}

impl Potential {
    pub fn stable() -> Self {
        Potential::Stable {
            n_conv: DEFAULT_N_CONV,
        }
    }

    pub fn stable_minus_log_degree() -> Self {
        Potential::StableMinusLogDegree {
            n_conv: DEFAULT_N_CONV,
        }
    }

    /// Binds the potential to a system. The derivative cocycle of a toral
    /// map is constant, so its stable potential is evaluated once here and
    /// reused; other variants evaluate per point.
    pub fn compile(&self, system: &SystemSpec) -> Result<CompiledPotential> {
        let cached = match (self, system.variant()) {
            (Potential::Stable { n_conv }, Variant::Toral) => {
                Some(stable_potential(system, &Point::zero(), *n_conv)?)
            }
            (Potential::StableMinusLogDegree { n_conv }, Variant::Toral) => Some(
                stable_potential(system, &Point::zero(), *n_conv)? - system.log_degree(),
            ),
            _ => None,
        };
        Ok(CompiledPotential {
            kind: self.clone(),
            cached,
        })
    }
}

/// A potential bound to a system (see [`Potential::compile`]).
#[derive(Clone, Debug)]
pub struct CompiledPotential {
    kind: Potential,
    cached: Option<f64>,
}

impl CompiledPotential {
    pub fn eval(&self, system: &SystemSpec, x: &Point) -> Result<f64> {
        if let Some(c) = self.cached {
            return Ok(c);
        }
        match &self.kind {
            Potential::Zero => Ok(0.0),
            Potential::Constant(c) => Ok(*c),
            Potential::Stable { n_conv } => stable_potential(system, x, *n_conv),
            Potential::StableMinusLogDegree { n_conv } => {
                Ok(stable_potential(system, x, *n_conv)? - system.log_degree())
            }
        }
    }
}

/// `S_n phi(x) = phi(x) + phi(f x) + ... + phi(f^{n-1} x)`.
pub fn birkhoff_sum(
    system: &SystemSpec,
    phi: &CompiledPotential,
    x: &Point,
    n: usize,
) -> Result<f64> {
    let mut s = 0.0;
    let mut p = *x;
    for _ in 0..n {
        s += phi.eval(system, &p)?;
        p = system.apply(&p);
    }
    Ok(s)
}

/// Closure variant for tests and ad-hoc observables.
pub fn birkhoff_sum_fn(
    system: &SystemSpec,
    phi: impl Fn(&Point) -> f64,
    x: &Point,
    n: usize,
) -> f64 {
    let mut s = 0.0;
    let mut p = *x;
    for _ in 0..n {
        s += phi(&p);
        p = system.apply(&p);
    }
    s
}

// ---------------------------------------------------------------------------
// stable frames and the stable potential
// ---------------------------------------------------------------------------

/// Orthonormal basis of the approximate stable subspace at a point, with the
/// singular data of the accumulated inverse cocycle.
#[derive(Clone, Debug)]
pub struct StableFrame {
    pub base: Point,
    pub dim: usize,
    /// `dim` orthonormal basis vectors.
    pub basis: Vec<[f64; Q_MAX]>,
    /// Ratio of adjacent n-step singular values across the unit-circle split.
    pub gap: f64,
    /// n-step log singular values of the inverse cocycle, leading first.
    pub log_singular: Vec<f64>,
}

/// Stable frame from an explicitly supplied forward orbit
/// `[x, f x, ..., f^n x]`; use this when forward iteration from `x` is only
/// meaningful along a known path (points obtained by backward iteration near
/// a repellor, for instance).
pub fn stable_frame_along(
    system: &SystemSpec,
    orbit: &[Point],
    gap_threshold: f64,
) -> Result<StableFrame> {
    if orbit.len() < 2 {
        return Err(DynError::InvalidArgument(
            "stable frame needs an orbit of at least one step".into(),
        ));
    }
    let q = system.phase_dim();
    let n = orbit.len() - 1;
    // the identity frame is exactly invariant for block-diagonal cocycles
    // and the iteration would never reorder it; start generic instead
    let mut qmat = generic_frame(q);
    let mut logs = [0.0f64; Q_MAX];
    // dominant column space of Df^{-n}: apply inverse Jacobians from the far
    // end of the orbit back to the base point, QR at each step
    for i in (0..n).rev() {
        let j = system.jacobian(&orbit[i]);
        let jinv = j.inverse().ok_or(DynError::DegenerateMatrix)?;
        let z = jinv.mul(&qmat);
        let (qq, rd) = z.qr_pos();
        qmat = qq;
        for k in 0..q {
            logs[k] += rd[k].ln();
        }
    }
    let logs = logs[..q].to_vec();
    let s = logs.iter().filter(|&&l| l > 0.0).count();
    // growing directions must occupy the leading columns
    if !logs.iter().take(s).all(|&l| l > 0.0) {
        return Err(DynError::WeakHyperbolicity {
            gap: 1.0,
            threshold: gap_threshold,
        });
    }
    let gap = if s == 0 {
        (-logs[0]).exp()
    } else if s == q {
        logs[q - 1].exp()
    } else {
        (logs[s - 1] - logs[s]).exp()
    };
    if gap < gap_threshold {
        return Err(DynError::WeakHyperbolicity {
            gap,
            threshold: gap_threshold,
        });
    }
    let basis = (0..s).map(|j| qmat.col(j)).collect();
    Ok(StableFrame {
        base: orbit[0],
        dim: s,
        basis,
        gap,
        log_singular: logs,
    })
}

/// Fixed full-rank frame with no invariant coordinate alignment.
fn generic_frame(q: usize) -> Mat {
    const SEED_ENTRIES: [[f64; 4]; 4] = [
        [0.537, -0.812, 0.219, 0.641],
        [0.743, 0.384, -0.556, 0.148],
        [-0.295, 0.462, 0.713, 0.529],
        [0.164, -0.379, 0.408, -0.887],
    ];
    let mut m = Mat::zero(q);
    for i in 0..q {
        for j in 0..q {
            m.a[i][j] = SEED_ENTRIES[i][j];
        }
    }
    m.qr_pos().0
}

/// Stable frame at `x`, iterating the orbit internally for `n_conv` steps.
pub fn stable_frame(system: &SystemSpec, x: &Point, n_conv: usize) -> Result<StableFrame> {
    let orbit = system.orbit(x, n_conv);
    stable_frame_along(system, &orbit, DEFAULT_GAP_THRESHOLD)
}

/// Stable potential `log |det(B_{f x}^T Df_x B_x)|` with `B` the orthonormal
/// stable bases; the value is basis-independent because `Df_x` maps the
/// stable space at `x` onto the one at `f x`. Returns 0 when the stable
/// bundle is empty, so expanding maps degrade to `P(0) = log d`.
pub fn stable_potential(system: &SystemSpec, x: &Point, n_conv: usize) -> Result<f64> {
    let orbit = system.orbit(x, n_conv + 1);
    stable_potential_along(system, &orbit)
}

/// Stable potential from a supplied orbit `[x, f x, ..., f^{n+1} x]`.
pub fn stable_potential_along(system: &SystemSpec, orbit: &[Point]) -> Result<f64> {
    if orbit.len() < 3 {
        return Err(DynError::InvalidArgument(
            "stable potential needs at least two orbit steps".into(),
        ));
    }
    let x_window = &orbit[..orbit.len() - 1];
    let fx_window = &orbit[1..];
    let frame_x = stable_frame_along(system, x_window, DEFAULT_GAP_THRESHOLD)?;
    let frame_fx = stable_frame_along(system, fx_window, DEFAULT_GAP_THRESHOLD)?;
    if frame_x.dim != frame_fx.dim {
        return Err(DynError::WeakHyperbolicity {
            gap: 1.0,
            threshold: DEFAULT_GAP_THRESHOLD,
        });
    }
    let s = frame_x.dim;
    if s == 0 {
        return Ok(0.0);
    }
    let j = system.jacobian(&orbit[0]);
    // M = B_fx^T (J B_x), an s x s matrix
    let mut m = Mat::zero(s);
    for (cj, bx) in frame_x.basis.iter().enumerate() {
        let jb = j.mul_vec(bx);
        for (ci, bf) in frame_fx.basis.iter().enumerate() {
            let mut dot = 0.0;
            for k in 0..system.phase_dim() {
                dot += bf[k] * jb[k];
            }
            m.a[ci][cj] = dot;
        }
    }
    Ok(m.det().abs().ln())
}

// ---------------------------------------------------------------------------
// Bowen balls
// ---------------------------------------------------------------------------

/// `B_n(y, eps)`: points whose first `n` iterates stay `eps`-close to the
/// iterates of `y`.
#[derive(Clone, Copy, Debug)]
pub struct BowenBall {
    pub center: Point,
    pub n: u32,
    pub eps: f64,
}

pub fn bowen_ball_contains(system: &SystemSpec, ball: &BowenBall, z: &Point) -> bool {
    let mut a = ball.center;
    let mut b = *z;
    for _ in 0..ball.n {
        if system.distance(&a, &b) >= ball.eps {
            return false;
        }
        a = system.apply(&a);
        b = system.apply(&b);
    }
    true
}

/// Bowen distance over `n` steps, early exit once it reaches `cap`.
fn bowen_distance_exceeds(system: &SystemSpec, a: &Point, b: &Point, n: u32, cap: f64) -> bool {
    let mut p = *a;
    let mut q = *b;
    for _ in 0..n {
        if system.distance(&p, &q) >= cap {
            return true;
        }
        p = system.apply(&p);
        q = system.apply(&q);
    }
    false
}

// ---------------------------------------------------------------------------
// maximal separated sets
// ---------------------------------------------------------------------------

/// Budgets for separated-set construction.
#[derive(Clone, Copy, Debug)]
pub struct SeparatedConfig {
    /// Hard cap on admitted points.
    pub point_budget: usize,
    /// Hard cap on examined candidates.
    pub candidate_budget: usize,
}

impl Default for SeparatedConfig {
    fn default() -> Self {
        SeparatedConfig {
            point_budget: 10_000_000,
            candidate_budget: 200_000_000,
        }
    }
}

/// A greedily maximal `(n, eps)`-separated set relative to its candidate
/// stream.
#[derive(Clone, Debug)]
pub struct SeparatedSet {
    pub points: Vec<Point>,
    pub n: u32,
    pub eps: f64,
    pub grid_step: f64,
    pub candidates_used: usize,
}

const EMPTY_KEY: u64 = u64::MAX;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    (z ^ (z >> 31)) & 0x7fff_ffff_ffff_ffff
}

/// Dual-endpoint cell hash. Cells have side >= 2 eps, so two points within
/// eps (per coordinate) lie, for each coordinate, either in the same cell or
/// in the neighbour on the side of the query point: 2 choices per coordinate
/// and endpoint cover every possible conflict.
struct PairGrid {
    q: usize,
    ncells: [u32; Q_MAX],
    cell_size: [f64; Q_MAX],
    wrap: [bool; Q_MAX],
    slot_keys: Vec<u64>,
    slot_heads: Vec<u32>,
    /// (next bucket link + 1, admitted index)
    entries: Vec<(u32, u32)>,
}

impl PairGrid {
    fn new(system: &SystemSpec, eps: f64) -> Self {
        let q = system.phase_dim();
        let mut ncells = [1u32; Q_MAX];
        let mut cell_size = [1.0f64; Q_MAX];
        let mut wrap = [true; Q_MAX];
        for d in 0..q {
            let planar = system.variant() == Variant::PerturbedSkew && d < 2;
            wrap[d] = !planar;
            if planar {
                // planar coordinates stay within [-2, 2]; no wraparound
                let nc = ((4.0 / (2.0 * eps)).floor() as u32).max(1);
                ncells[d] = nc;
                cell_size[d] = 4.0 / nc as f64;
            } else {
                let nc = ((1.0 / (2.0 * eps)).floor() as u32).max(1);
                ncells[d] = nc;
                cell_size[d] = 1.0 / nc as f64;
            }
        }
        PairGrid {
            q,
            ncells,
            cell_size,
            wrap,
            slot_keys: vec![EMPTY_KEY; 1 << 16],
            slot_heads: vec![0; 1 << 16],
            entries: Vec::new(),
        }
    }

    /// Cell index plus the neighbour on the point's side, one coordinate.
    #[inline]
    fn cell_side(&self, d: usize, x: f64) -> (u32, u32) {
        let nc = self.ncells[d] as i64;
        let cs = self.cell_size[d];
        let xx = if self.wrap[d] { x } else { x + 2.0 };
        let t = xx / cs;
        let mut c = t.floor() as i64;
        let frac = t - t.floor();
        if self.wrap[d] {
            c = c.rem_euclid(nc);
        } else {
            c = c.clamp(0, nc - 1);
        }
        let side = if frac < 0.5 { -1i64 } else { 1i64 };
        let mut nb = c + side;
        if self.wrap[d] {
            nb = nb.rem_euclid(nc);
        } else {
            nb = nb.clamp(0, nc - 1);
        }
        (c as u32, nb as u32)
    }

    /// The two candidate cells per coordinate, both endpoints.
    #[inline]
    fn cell_pairs(&self, p0: &Point, p1: &Point) -> [[u32; 2]; 2 * Q_MAX] {
        let mut out = [[0u32; 2]; 2 * Q_MAX];
        for d in 0..self.q {
            let (c, nb) = self.cell_side(d, p0.0[d]);
            out[d] = [c, nb];
            let (c, nb) = self.cell_side(d, p1.0[d]);
            out[self.q + d] = [c, nb];
        }
        out
    }

    #[inline]
    fn pack(&self, cells: &[u32]) -> u64 {
        let mut key = 0u64;
        for &c in cells {
            key = key.wrapping_mul(0x0000_0100_0000_01b3).wrapping_add(c as u64 + 1);
        }
        splitmix(key)
    }

    fn exact_key(&self, p0: &Point, p1: &Point) -> u64 {
        let mut cells = [0u32; 2 * Q_MAX];
        for d in 0..self.q {
            cells[d] = self.cell_side(d, p0.0[d]).0;
            cells[self.q + d] = self.cell_side(d, p1.0[d]).0;
        }
        self.pack(&cells[..2 * self.q])
    }

    fn insert(&mut self, key: u64, idx: u32) {
        if (self.entries.len() + 1) * 5 > self.slot_keys.len() * 3 {
            self.grow();
        }
        let mask = self.slot_keys.len() - 1;
        let mut s = (key as usize) & mask;
        loop {
            if self.slot_keys[s] == EMPTY_KEY {
                self.slot_keys[s] = key;
                self.entries.push((0, idx));
                self.slot_heads[s] = self.entries.len() as u32;
                return;
            }
            if self.slot_keys[s] == key {
                let head = self.slot_heads[s];
                self.entries.push((head, idx));
                self.slot_heads[s] = self.entries.len() as u32;
                return;
            }
            s = (s + 1) & mask;
        }
    }

    fn grow(&mut self) {
        let newcap = self.slot_keys.len() * 2;
        let mut keys = vec![EMPTY_KEY; newcap];
        let mut heads = vec![0u32; newcap];
        let mask = newcap - 1;
        for (i, &k) in self.slot_keys.iter().enumerate() {
            if k == EMPTY_KEY {
                continue;
            }
            let mut s = (k as usize) & mask;
            while keys[s] != EMPTY_KEY {
                s = (s + 1) & mask;
            }
            keys[s] = k;
            heads[s] = self.slot_heads[i];
        }
        self.slot_keys = keys;
        self.slot_heads = heads;
    }

    /// Walks the bucket of `key`; stops early when `visit` returns true.
    #[inline]
    fn for_bucket(&self, key: u64, mut visit: impl FnMut(u32) -> bool) -> bool {
        let mask = self.slot_keys.len() - 1;
        let mut s = (key as usize) & mask;
        loop {
            let k = self.slot_keys[s];
            if k == EMPTY_KEY {
                return false;
            }
            if k == key {
                let mut head = self.slot_heads[s];
                while head != 0 {
                    let (next, idx) = self.entries[(head - 1) as usize];
                    if visit(idx) {
                        return true;
                    }
                    head = next;
                }
                return false;
            }
            s = (s + 1) & mask;
        }
    }
}

#[derive(Clone, Copy)]
struct Admitted {
    p0: Point,
    p1: Point,
}

/// Infinity-norm closeness at one endpoint, wrap-aware. Necessary for a
/// Bowen conflict, so failing it is a sound cheap reject.
#[inline]
fn endpoint_close(system: &SystemSpec, a: &Point, b: &Point, eps: f64) -> bool {
    let q = system.phase_dim();
    let planar_dims = if system.variant() == Variant::PerturbedSkew {
        2
    } else {
        0
    };
    for d in 0..q {
        let diff = if d < planar_dims {
            a.0[d] - b.0[d]
        } else {
            wrap_half(a.0[d] - b.0[d])
        };
        if diff.abs() >= eps {
            return false;
        }
    }
    true
}

/// Greedy maximal `(n, eps)`-separated set over a seeded uniform candidate
/// stream; see the module docs for the admission structure. `grid_step`
/// sizes the first candidate round (one candidate per `grid_step`-cell).
pub fn maximal_separated_set(
    system: &SystemSpec,
    n: u32,
    eps: f64,
    grid_step: f64,
    seed: u64,
    cfg: &SeparatedConfig,
) -> Result<SeparatedSet> {
    if eps <= 0.0 || n == 0 {
        return Err(DynError::InvalidArgument("need eps > 0 and n >= 1".into()));
    }
    if grid_step > eps / 2.0 {
        return Err(DynError::GridTooCoarse {
            step: grid_step,
            eps,
        });
    }
    let q = system.phase_dim();
    let steps = (n - 1) as usize; // second hash endpoint is f^{n-1}

    let mut grid = PairGrid::new(system, eps);
    let mut admitted: Vec<Admitted> = Vec::new();
    let mut points: Vec<Point> = Vec::new();
    let mut candidates_used = 0usize;

    let first_round = ((1.0 / grid_step).powi(q as i32) as usize).clamp(256, 1 << 21);
    let mut round_size = first_round;
    let mut round = 0u64;
    let mut budget_hit = false;
    'rounds: loop {
        if candidates_used + round_size > cfg.candidate_budget {
            round_size = cfg.candidate_budget.saturating_sub(candidates_used);
            if round_size == 0 {
                break;
            }
        }
        // endpoint precomputation is data-parallel; admission is sequential
        let mut rng = stream_rng(seed, streams::SEPARATED + round);
        let cands: Vec<Point> = (0..round_size)
            .map(|_| system.random_point(&mut rng))
            .collect();
        let endpoints: Vec<Point> = par::map_slice(&cands, |c| system.iterate(c, steps));

        let mut new_admits = 0usize;
        for (c, e) in cands.iter().zip(&endpoints) {
            let pairs = grid.cell_pairs(c, e);
            let mut conflict = false;
            let mut cells = [0u32; 2 * Q_MAX];
            'combos: for combo in 0..(1usize << (2 * q)) {
                for (d, cell) in cells.iter_mut().enumerate().take(2 * q) {
                    *cell = pairs[d][(combo >> d) & 1];
                }
                let key = grid.pack(&cells[..2 * q]);
                let hit = grid.for_bucket(key, |idx| {
                    let a = &admitted[idx as usize];
                    endpoint_close(system, c, &a.p0, eps)
                        && endpoint_close(system, e, &a.p1, eps)
                        && !bowen_distance_exceeds(system, c, &a.p0, n, eps)
                });
                if hit {
                    conflict = true;
                    break 'combos;
                }
            }
            if !conflict {
                if admitted.len() >= cfg.point_budget {
                    budget_hit = true;
                    break 'rounds;
                }
                let key = grid.exact_key(c, e);
                grid.insert(key, admitted.len() as u32);
                admitted.push(Admitted { p0: *c, p1: *e });
                points.push(*c);
                new_admits += 1;
            }
        }
        candidates_used += round_size;
        round += 1;
        let rate = new_admits as f64 / round_size.max(1) as f64;
        if rate < 0.01 || candidates_used >= cfg.candidate_budget {
            break;
        }
        round_size = candidates_used; // double the total each round
    }
    if budget_hit {
        return Err(DynError::SeparatedBudgetExceeded {
            n,
            admitted: admitted.len(),
            budget: cfg.point_budget,
        });
    }

    verify_separated(system, &grid, &admitted, n, eps);

    Ok(SeparatedSet {
        points,
        n,
        eps,
        grid_step,
        candidates_used,
    })
}

/// Post-hoc pairwise verification, a hard assertion. A violating pair is
/// endpoint-close at both ends, hence shares one of the probed cell keys, so
/// walking every admitted point's keys is exhaustive.
fn verify_separated(system: &SystemSpec, grid: &PairGrid, admitted: &[Admitted], n: u32, eps: f64) {
    let q = system.phase_dim();
    let mut cells = [0u32; 2 * Q_MAX];
    for (i, a) in admitted.iter().enumerate() {
        let pairs = grid.cell_pairs(&a.p0, &a.p1);
        for combo in 0..(1usize << (2 * q)) {
            for (d, cell) in cells.iter_mut().enumerate().take(2 * q) {
                *cell = pairs[d][(combo >> d) & 1];
            }
            let key = grid.pack(&cells[..2 * q]);
            grid.for_bucket(key, |idx| {
                let j = idx as usize;
                if j < i {
                    let b = &admitted[j];
                    if endpoint_close(system, &a.p0, &b.p0, eps)
                        && endpoint_close(system, &a.p1, &b.p1, eps)
                        && !bowen_distance_exceeds(system, &a.p0, &b.p0, n, eps)
                    {
                        panic!(
                            "separated-set invariant violated: points {i} and {j} within {eps}"
                        );
                    }
                }
                false
            });
        }
    }
}

// ---------------------------------------------------------------------------
// pressure
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct PressureEntry {
    pub n: u32,
    pub eps: f64,
    pub cardinality: usize,
    pub p_n: f64,
}

/// Finite-`n` pressure values and the extrapolated limit.
#[derive(Clone, Debug)]
pub struct PressureEstimate {
    pub entries: Vec<PressureEntry>,
    /// Least-squares slope of `n P_n` against `n`; the `O(1/n)` additive
    /// bias of the finite-`n` values cancels in the slope.
    pub extrapolated: f64,
    pub intercept: f64,
    /// True when budgets truncated the requested range.
    pub truncated: bool,
}

/// `P_n = (1/n) log sum_{y in F_n(eps)} e^{S_n phi(y)}` over a range of `n`,
/// with the slope extrapolation.
pub fn pressure_estimate(
    system: &SystemSpec,
    phi: &Potential,
    eps: f64,
    n_range: (u32, u32),
    grid_step: f64,
    seed: u64,
    cfg: &SeparatedConfig,
) -> Result<PressureEstimate> {
    let compiled = phi.compile(system)?;
    let mut entries = Vec::new();
    let mut truncated = false;
    for n in n_range.0..=n_range.1 {
        let set = match maximal_separated_set(system, n, eps, grid_step, seed, cfg) {
            Ok(s) => s,
            Err(DynError::SeparatedBudgetExceeded { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let sums: Vec<Result<f64>> =
            par::map_slice(&set.points, |y| birkhoff_sum(system, &compiled, y, n as usize));
        let mut sn_phi = Vec::with_capacity(sums.len());
        for s in sums {
            sn_phi.push(s?);
        }
        let p_n = log_sum_exp(&sn_phi) / n as f64;
        entries.push(PressureEntry {
            n,
            eps,
            cardinality: set.points.len(),
            p_n,
        });
    }
    if entries.len() < 2 {
        return Err(DynError::InvalidArgument(format!(
            "pressure fit needs at least 2 feasible n values, got {}",
            entries.len()
        )));
    }
    let xs: Vec<f64> = entries.iter().map(|e| e.n as f64).collect();
    let ys: Vec<f64> = entries.iter().map(|e| e.n as f64 * e.p_n).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    Ok(PressureEstimate {
        entries,
        extrapolated: slope,
        intercept,
        truncated,
    })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    let terms: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    m + par::pairwise_sum(&terms).ln()
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

// ---------------------------------------------------------------------------
// Bowen-ball measure and tubular volume
// ---------------------------------------------------------------------------

/// Sampling measure for [`bowen_ball_measure`].
pub enum MeasureSampler<'a> {
    /// Lebesgue/Haar on the phase space.
    Haar,
    Cloud(&'a WeightedAtomCloud),
}

#[derive(Clone, Debug)]
pub struct BallMeasure {
    pub estimate: f64,
    pub stderr: f64,
    pub hits: u64,
    pub samples: u64,
    /// No sample landed in the ball: reported, not fatal.
    pub zero_hits: bool,
    /// `estimate / e^{S_n Phi^s(y) - n log d}` (the equilibrium-state scale).
    pub ratio: f64,
    /// Volume of the importance-sampling ellipsoid, when one was used.
    pub importance_volume: Option<f64>,
}

/// Measure of a Bowen ball under the sampler.
///
/// Under the Haar sampler the ball volume shrinks like
/// `eps^q lambda_u^{-n}` and plain sampling starves, so when the linearized
/// ball is small the sampler restricts to the ellipsoid
/// `{v : v^T G v <= n eps^2}`, `G = sum_i (Df^i)^T Df^i`, which contains the
/// lifted ball, and rescales by the ellipsoid volume. Membership is always
/// the true nonlinear orbit condition.
pub fn bowen_ball_measure(
    system: &SystemSpec,
    sampler: &MeasureSampler,
    ball: &BowenBall,
    num_samples: u64,
    seed: u64,
) -> Result<BallMeasure> {
    if num_samples == 0 {
        return Err(DynError::InvalidArgument("num_samples must be >= 1".into()));
    }
    let scale = {
        let phi = Potential::stable_minus_log_degree().compile(system)?;
        birkhoff_sum(system, &phi, &ball.center, ball.n as usize)?.exp()
    };
    match sampler {
        MeasureSampler::Cloud(cloud) => {
            let inside: Vec<f64> = par::map_slice(&cloud.atoms, |(p, w)| {
                if bowen_ball_contains(system, ball, p) {
                    *w
                } else {
                    0.0
                }
            });
            let estimate = par::pairwise_sum(&inside);
            let neff = cloud.effective_samples();
            let p = estimate.clamp(0.0, 1.0);
            let stderr = (p * (1.0 - p) / neff.max(1.0)).sqrt();
            Ok(BallMeasure {
                estimate,
                stderr,
                hits: inside.iter().filter(|&&w| w > 0.0).count() as u64,
                samples: cloud.atoms.len() as u64,
                zero_hits: estimate == 0.0,
                ratio: estimate / scale,
                importance_volume: None,
            })
        }
        MeasureSampler::Haar => {
            let ell = importance_ellipsoid(system, ball);
            let (vol, hits) = match ell {
                Some(ref e) if e.volume < 0.25 * system.region_volume() => {
                    let hits = count_hits_ellipsoid(system, ball, e, num_samples, seed);
                    (e.volume, hits)
                }
                _ => {
                    let hits = count_hits_uniform(system, ball, num_samples, seed);
                    (system.region_volume(), hits)
                }
            };
            let p = hits as f64 / num_samples as f64;
            let estimate = vol * p;
            let stderr = vol * (p * (1.0 - p) / num_samples as f64).sqrt();
            Ok(BallMeasure {
                estimate,
                stderr,
                hits,
                samples: num_samples,
                zero_hits: hits == 0,
                ratio: estimate / scale,
                importance_volume: if vol < system.region_volume() {
                    Some(vol)
                } else {
                    None
                },
            })
        }
    }
}

struct Ellipsoid {
    /// Lower-triangular Cholesky factor of `G / (n eps^2)`.
    chol: Mat,
    volume: f64,
}

fn importance_ellipsoid(system: &SystemSpec, ball: &BowenBall) -> Option<Ellipsoid> {
    let q = system.phase_dim();
    // G = sum over orbit steps of (Df^i)^T (Df^i); the i = 0 term is I
    let mut g = Mat::identity(q);
    let mut m = Mat::identity(q);
    let mut p = ball.center;
    for _ in 1..ball.n {
        let j = system.jacobian(&p);
        m = j.mul(&m);
        p = system.apply(&p);
        let mtm = m.transpose().mul(&m);
        for i in 0..q {
            for k in 0..q {
                g.a[i][k] += mtm.a[i][k];
            }
        }
    }
    let r2 = ball.n as f64 * ball.eps * ball.eps;
    for i in 0..q {
        for k in 0..q {
            g.a[i][k] /= r2;
        }
    }
    let chol = cholesky(&g)?;
    let mut det_l = 1.0;
    for i in 0..q {
        det_l *= chol.a[i][i];
    }
    let volume = unit_ball_volume(q) / det_l;
    Some(Ellipsoid { chol, volume })
}

fn cholesky(g: &Mat) -> Option<Mat> {
    let n = g.n;
    let mut l = Mat::zero(n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = g.a[i][j];
            for k in 0..j {
                s -= l.a[i][k] * l.a[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l.a[i][j] = s.sqrt();
            } else {
                l.a[i][j] = s / l.a[j][j];
            }
        }
    }
    Some(l)
}

fn unit_ball_volume(q: usize) -> f64 {
    use std::f64::consts::PI;
    match q {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        4 => PI * PI / 2.0,
        _ => unreachable!(),
    }
}

fn count_hits_ellipsoid(
    system: &SystemSpec,
    ball: &BowenBall,
    ell: &Ellipsoid,
    num_samples: u64,
    seed: u64,
) -> u64 {
    let q = system.phase_dim();
    // solve L^T w = u to map the unit ball onto the ellipsoid
    let solve = |u: &[f64; Q_MAX]| -> [f64; Q_MAX] {
        let mut w = [0.0; Q_MAX];
        for i in (0..q).rev() {
            let mut s = u[i];
            for k in i + 1..q {
                s -= ell.chol.a[k][i] * w[k];
            }
            w[i] = s / ell.chol.a[i][i];
        }
        w
    };
    let nchunks = num_samples.div_ceil(par::CHUNK as u64) as usize;
    let counts = par::map_range(nchunks, |c| {
        let mut rng = stream_rng(seed, streams::BALL_MEASURE + c as u64);
        let lo = c as u64 * par::CHUNK as u64;
        let hi = ((c as u64 + 1) * par::CHUNK as u64).min(num_samples);
        let mut hits = 0u64;
        for _ in lo..hi {
            // uniform in the unit q-ball by rejection
            let mut u = [0.0; Q_MAX];
            loop {
                let mut norm2 = 0.0;
                for ui in u.iter_mut().take(q) {
                    *ui = 2.0 * rng.random::<f64>() - 1.0;
                    norm2 += *ui * *ui;
                }
                if norm2 <= 1.0 {
                    break;
                }
            }
            let v = solve(&u);
            let mut z = ball.center;
            for d in 0..q {
                z.0[d] += v[d];
            }
            wrap_torus_coords(system, &mut z);
            if bowen_ball_contains(system, ball, &z) {
                hits += 1;
            }
        }
        hits
    });
    counts.iter().sum()
}

fn count_hits_uniform(system: &SystemSpec, ball: &BowenBall, num_samples: u64, seed: u64) -> u64 {
    let nchunks = num_samples.div_ceil(par::CHUNK as u64) as usize;
    let counts = par::map_range(nchunks, |c| {
        let mut rng = stream_rng(seed, streams::BALL_MEASURE + c as u64);
        let lo = c as u64 * par::CHUNK as u64;
        let hi = ((c as u64 + 1) * par::CHUNK as u64).min(num_samples);
        let mut hits = 0u64;
        for _ in lo..hi {
            let z = system.random_point(&mut rng);
            if bowen_ball_contains(system, ball, &z) {
                hits += 1;
            }
        }
        hits
    });
    counts.iter().sum()
}

fn wrap_torus_coords(system: &SystemSpec, p: &mut Point) {
    use crate::geom::mod1;
    let q = system.phase_dim();
    let planar_dims = if system.variant() == Variant::PerturbedSkew {
        2
    } else {
        0
    };
    for d in planar_dims..q {
        p.0[d] = mod1(p.0[d]);
    }
}

#[derive(Clone, Debug)]
pub struct TubeVolume {
    pub estimate: f64,
    pub stderr: f64,
    pub hits: u64,
    pub samples: u64,
    pub zero_hits: bool,
    /// `estimate / e^{S_n Phi^s(y)}`.
    pub ratio: f64,
}

/// Monte Carlo Lebesgue volume of the forward tube `f^n(B_n(y, eps))`.
///
/// A sample `z` lies in the tube iff some depth-`n` inverse branch of `z`
/// stays `eps`-close to the orbit of `y` at every step; the branch search
/// prunes by the running Bowen condition, so only branches tracking the
/// `y`-orbit are expanded.
pub fn tubular_volume(
    system: &SystemSpec,
    y: &Point,
    n: u32,
    eps: f64,
    num_samples: u64,
    seed: u64,
    cfg: &TreeConfig,
) -> Result<TubeVolume> {
    if num_samples == 0 {
        return Err(DynError::InvalidArgument("num_samples must be >= 1".into()));
    }
    let orbit = system.orbit(y, n as usize);
    let nchunks = num_samples.div_ceil(par::CHUNK as u64) as usize;
    let counts: Vec<Result<u64>> = par::map_range(nchunks, |c| {
        let mut rng = stream_rng(seed, streams::TUBE_VOLUME + c as u64);
        let lo = c as u64 * par::CHUNK as u64;
        let hi = ((c as u64 + 1) * par::CHUNK as u64).min(num_samples);
        let mut hits = 0u64;
        let mut expansions = 0u64;
        for _ in lo..hi {
            let z = system.random_point(&mut rng);
            if tube_member(system, &orbit, &z, n, eps, &cfg.newton, &mut expansions)? {
                hits += 1;
            }
            if expansions > cfg.node_budget as u64 {
                return Err(DynError::TreeBudgetExceeded {
                    needed: expansions as u128,
                    budget: cfg.node_budget,
                });
            }
        }
        Ok(hits)
    });
    let mut hits = 0u64;
    for c in counts {
        hits += c?;
    }
    let p = hits as f64 / num_samples as f64;
    let vol = system.region_volume();
    let estimate = vol * p;
    let stderr = vol * (p * (1.0 - p) / num_samples as f64).sqrt();
    let scale = {
        let phi = Potential::stable().compile(system)?;
        birkhoff_sum(system, &phi, y, n as usize)?.exp()
    };
    Ok(TubeVolume {
        estimate,
        stderr,
        hits,
        samples: num_samples,
        zero_hits: hits == 0,
        ratio: estimate / scale,
    })
}

/// Depth-first search over inverse branches of `z`, pruned by the Bowen
/// condition against the `y`-orbit: a node at backward depth `l >= 1` must
/// be `eps`-close to `orbit[n - l]`; the root `z = f^n w` is unconstrained.
fn tube_member(
    system: &SystemSpec,
    orbit: &[Point],
    z: &Point,
    n: u32,
    eps: f64,
    newton: &NewtonConfig,
    expansions: &mut u64,
) -> Result<bool> {
    fn rec(
        system: &SystemSpec,
        orbit: &[Point],
        p: &Point,
        level: u32,
        n: u32,
        eps: f64,
        newton: &NewtonConfig,
        expansions: &mut u64,
    ) -> Result<bool> {
        if level == n {
            return Ok(true);
        }
        *expansions += 1;
        let pts = preimages(system, p, newton)?;
        let target = &orbit[(n - level - 1) as usize];
        for c in &pts {
            if system.distance(c, target) < eps
                && rec(system, orbit, c, level + 1, n, eps, newton, expansions)?
            {
                return Ok(true);
            }
        }
        Ok(false)
    }
    rec(system, orbit, z, 0, n, eps, newton, expansions)
}

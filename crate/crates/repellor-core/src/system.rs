//! The catalogued hyperbolic endomorphisms: integer-matrix toral maps and a
//! perturbed skew product on an annulus times `T^2`.
//!
//! Toral variant: `f_A(x) = A x mod 1` for an integer matrix `A` with
//! `|det A| >= 2` and no eigenvalue on the unit circle. The map is
//! `|det A|`-to-1 and hyperbolic on the whole torus.
//!
//! Perturbed skew variant, in the affine chart `z = u + iv` of the projective
//! line restricted to an annulus around `|z| = 1`:
//!
//! ```text
//! z' = z^2 + eps * e^{2 pi i (2x + y)}
//! (x', y') = (A (x, y) + eps * (sin 2 pi (x + y), cos^2 4 pi x)) mod 1
//! ```
//!
//! At `eps = 0` the planar factor is angle doubling on the invariant circle
//! and the torus factor is `f_A`; the map is `2 |det A|`-to-1 (two square-root
//! branches per torus branch). Small `eps` perturbs the repellor away from
//! the round circle but keeps its structure.

use crate::error::{DynError, Result};
use crate::geom::{mod1, torus_distance, wrap_half, AmbientPoint, Point, Q_MAX};
use crate::intmat::IntMatrix;
use crate::linalg::Mat;
use rand_chacha::ChaCha8Rng;

use std::f64::consts::PI;

const HYPERBOLICITY_TOL: f64 = 1e-9;

/// Default half-width of the annulus `| |z| - 1 | < delta` holding the
/// planar factor of the skew product's repellor neighbourhood.
pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Toral,
    PerturbedSkew,
}

/// A catalogued system: the variant tag, its integer linear part, and the
/// perturbation/annulus parameters for the skew product.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    variant: Variant,
    matrix: IntMatrix,
    epsilon: f64,
    delta: f64,
    degree: u32,
    det: i64,
    fmat: Mat,
    finv: Mat,
    m: usize,
    q: usize,
}

impl SystemSpec {
    /// Toral endomorphism induced by `matrix`. Requires `|det| >= 2` and no
    /// eigenvalue of modulus 1.
    pub fn toral(matrix: IntMatrix) -> Result<Self> {
        let det = matrix.det();
        if det == 0 {
            return Err(DynError::DegenerateMatrix);
        }
        if det.abs() < 2 {
            return Err(DynError::InvalidArgument(format!(
                "toral variant needs |det A| >= 2, got {}",
                det.abs()
            )));
        }
        matrix.check_hyperbolic(HYPERBOLICITY_TOL)?;
        let m = matrix.dim();
        let fmat = float_mat(&matrix);
        let finv = fmat.inverse().ok_or(DynError::DegenerateMatrix)?;
        Ok(SystemSpec {
            variant: Variant::Toral,
            degree: det.unsigned_abs() as u32,
            det,
            matrix,
            epsilon: 0.0,
            delta: 0.0,
            fmat,
            finv,
            m,
            q: m,
        })
    }

    /// Perturbed skew product over the 2x2 integer matrix `matrix`, with
    /// perturbation size `epsilon >= 0` and annulus half-width `delta`.
    pub fn perturbed_skew(matrix: IntMatrix, epsilon: f64, delta: f64) -> Result<Self> {
        if matrix.dim() != 2 {
            return Err(DynError::InvalidArgument(
                "perturbed skew variant needs a 2x2 torus matrix".into(),
            ));
        }
        if epsilon < 0.0 {
            return Err(DynError::InvalidArgument("epsilon must be >= 0".into()));
        }
        if !(delta > 0.0 && delta < 0.5) {
            return Err(DynError::InvalidArgument(
                "annulus half-width delta must lie in (0, 0.5)".into(),
            ));
        }
        let det = matrix.det();
        if det == 0 {
            return Err(DynError::DegenerateMatrix);
        }
        if det.abs() < 2 {
            return Err(DynError::InvalidArgument(format!(
                "skew variant needs |det A| >= 2, got {}",
                det.abs()
            )));
        }
        matrix.check_hyperbolic(HYPERBOLICITY_TOL)?;
        let fmat = float_mat(&matrix);
        let finv = fmat.inverse().ok_or(DynError::DegenerateMatrix)?;
        Ok(SystemSpec {
            variant: Variant::PerturbedSkew,
            degree: 2 * det.unsigned_abs() as u32,
            det,
            matrix,
            epsilon,
            delta,
            fmat,
            finv,
            m: 2,
            q: 4,
        })
    }

    // ----- catalogue presets -------------------------------------------------

    /// Angle doubling on the circle, `A = [2]`.
    pub fn doubling() -> Self {
        SystemSpec::toral(IntMatrix::new(1, vec![2])).unwrap()
    }

    /// The 2D test matrix `[[2,1],[2,2]]` (eigenvalues `2 ± sqrt 2`).
    pub fn mat2122() -> Self {
        SystemSpec::toral(IntMatrix::new(2, vec![2, 1, 2, 2])).unwrap()
    }

    /// The 2D matrix `[[2,2],[2,3]]` (one eigenvalue inside the unit disk).
    pub fn mat2223() -> Self {
        SystemSpec::toral(IntMatrix::new(2, vec![2, 2, 2, 3])).unwrap()
    }

    /// The product of angle doubling with `[[2,2],[2,3]]`, realized on its
    /// repellor `T^3` as the block matrix `diag(2, [[2,2],[2,3]])`.
    pub fn example_product() -> Self {
        let block = IntMatrix::block_diag(
            &IntMatrix::new(1, vec![2]),
            &IntMatrix::new(2, vec![2, 2, 2, 3]),
        );
        SystemSpec::toral(block).unwrap()
    }

    /// Perturbed skew product over `[[2,1],[2,2]]` with the default annulus.
    pub fn skew(epsilon: f64) -> Result<Self> {
        SystemSpec::perturbed_skew(IntMatrix::new(2, vec![2, 1, 2, 2]), epsilon, DEFAULT_DELTA)
    }

    // ----- accessors ---------------------------------------------------------

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn matrix(&self) -> &IntMatrix {
        &self.matrix
    }

    pub fn matrix_float(&self) -> &Mat {
        &self.fmat
    }

    pub fn matrix_inv_float(&self) -> &Mat {
        &self.finv
    }

    pub fn det(&self) -> i64 {
        self.det
    }

    /// Number of inverse branches kept inside the repellor neighbourhood.
    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn log_degree(&self) -> f64 {
        (self.degree as f64).ln()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Torus dimension of the linear part.
    pub fn torus_dim(&self) -> usize {
        self.m
    }

    /// Real dimension of the phase space.
    pub fn phase_dim(&self) -> usize {
        self.q
    }

    /// Dimension of the torus chart used by Fourier analysis: `m` for toral
    /// systems, 3 for the skew product (planar angle plus the `T^2` factor).
    pub fn fourier_dim(&self) -> usize {
        match self.variant {
            Variant::Toral => self.m,
            Variant::PerturbedSkew => 3,
        }
    }

    /// Torus chart of a point: identity for toral systems; for the skew
    /// product the planar factor enters through its angle chart.
    pub fn fourier_coords(&self, p: &Point) -> [f64; 3] {
        match self.variant {
            Variant::Toral => {
                let mut out = [0.0; 3];
                out[..self.m].copy_from_slice(&p.0[..self.m]);
                out
            }
            Variant::PerturbedSkew => {
                let a = AmbientPoint::from_point(p);
                [a.angle(), p.0[2], p.0[3]]
            }
        }
    }

    // ----- dynamics ----------------------------------------------------------

    /// One forward step of the map.
    pub fn apply(&self, p: &Point) -> Point {
        match self.variant {
            Variant::Toral => {
                let mut out = [0.0; Q_MAX];
                for i in 0..self.m {
                    let mut s = 0.0;
                    for j in 0..self.m {
                        s += self.fmat.a[i][j] * p.0[j];
                    }
                    out[i] = mod1(s);
                }
                Point(out)
            }
            Variant::PerturbedSkew => {
                let (u, v, x, y) = (p.0[0], p.0[1], p.0[2], p.0[3]);
                let theta = 2.0 * PI * (2.0 * x + y);
                let up = u * u - v * v + self.epsilon * theta.cos();
                let vp = 2.0 * u * v + self.epsilon * theta.sin();
                let a = &self.fmat.a;
                let xp = a[0][0] * x + a[0][1] * y + self.epsilon * (2.0 * PI * (x + y)).sin();
                let yp = a[1][0] * x
                    + a[1][1] * y
                    + self.epsilon * (4.0 * PI * x).cos().powi(2);
                Point([up, vp, mod1(xp), mod1(yp)])
            }
        }
    }

    /// `f^n`.
    pub fn iterate(&self, p: &Point, n: usize) -> Point {
        let mut q = *p;
        for _ in 0..n {
            q = self.apply(&q);
        }
        q
    }

    /// Forward orbit `[p, f p, ..., f^n p]` (n+1 points).
    pub fn orbit(&self, p: &Point, n: usize) -> Vec<Point> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(*p);
        let mut q = *p;
        for _ in 0..n {
            q = self.apply(&q);
            out.push(q);
        }
        out
    }

    /// Derivative of the lifted map at `p`.
    pub fn jacobian(&self, p: &Point) -> Mat {
        match self.variant {
            Variant::Toral => self.fmat,
            Variant::PerturbedSkew => {
                let (u, v, x, y) = (p.0[0], p.0[1], p.0[2], p.0[3]);
                let theta = 2.0 * PI * (2.0 * x + y);
                let (st, ct) = theta.sin_cos();
                let e = self.epsilon;
                let a = &self.fmat.a;
                let c1 = 2.0 * PI * (2.0 * PI * (x + y)).cos();
                let s8 = 4.0 * PI * (8.0 * PI * x).sin();
                let mut j = Mat::zero(4);
                // planar block: derivative of z^2 is the conformal matrix 2z
                j.a[0] = [2.0 * u, -2.0 * v, -4.0 * PI * e * st, -2.0 * PI * e * st];
                j.a[1] = [2.0 * v, 2.0 * u, 4.0 * PI * e * ct, 2.0 * PI * e * ct];
                // torus block is independent of the planar coordinate
                j.a[2] = [0.0, 0.0, a[0][0] + e * c1, a[0][1] + e * c1];
                j.a[3] = [0.0, 0.0, a[1][0] - e * s8, a[1][1]];
                j
            }
        }
    }

    /// Riemannian distance: wrapped Euclidean on torus factors, plain
    /// Euclidean on the planar factor, combined as a Euclidean sum.
    pub fn distance(&self, p: &Point, q: &Point) -> f64 {
        match self.variant {
            Variant::Toral => torus_distance(&p.0[..self.m], &q.0[..self.m]),
            Variant::PerturbedSkew => {
                let du = p.0[0] - q.0[0];
                let dv = p.0[1] - q.0[1];
                let dx = wrap_half(p.0[2] - q.0[2]);
                let dy = wrap_half(p.0[3] - q.0[3]);
                (du * du + dv * dv + dx * dx + dy * dy).sqrt()
            }
        }
    }

    /// Membership in the repellor neighbourhood `U`: the whole torus for
    /// toral systems, the open annulus condition for the skew product.
    pub fn in_region(&self, p: &Point) -> bool {
        match self.variant {
            Variant::Toral => true,
            Variant::PerturbedSkew => {
                let r = (p.0[0] * p.0[0] + p.0[1] * p.0[1]).sqrt();
                (r - 1.0).abs() < self.delta
            }
        }
    }

    /// Distance from the model repellor (the torus itself, or the round
    /// circle `|z| = 1` times `T^2` for the skew product).
    pub fn model_repellor_distance(&self, p: &Point) -> f64 {
        match self.variant {
            Variant::Toral => 0.0,
            Variant::PerturbedSkew => {
                let r = (p.0[0] * p.0[0] + p.0[1] * p.0[1]).sqrt();
                (r - 1.0).abs()
            }
        }
    }

    /// Uniform sample from the phase space (Haar on tori; area-uniform on the
    /// annulus factor).
    pub fn random_point(&self, rng: &mut ChaCha8Rng) -> Point {
        use rand::Rng;
        match self.variant {
            Variant::Toral => {
                let mut c = [0.0; Q_MAX];
                for ci in c.iter_mut().take(self.m) {
                    *ci = rng.random::<f64>();
                }
                Point(c)
            }
            Variant::PerturbedSkew => {
                let ang = 2.0 * PI * rng.random::<f64>();
                let lo = (1.0 - self.delta) * (1.0 - self.delta);
                let hi = (1.0 + self.delta) * (1.0 + self.delta);
                let r = (lo + (hi - lo) * rng.random::<f64>()).sqrt();
                Point([
                    r * ang.cos(),
                    r * ang.sin(),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                ])
            }
        }
    }

    /// Volume of the repellor neighbourhood `U` (1 for tori, annulus area
    /// times 1 for the skew product).
    pub fn region_volume(&self) -> f64 {
        match self.variant {
            Variant::Toral => 1.0,
            Variant::PerturbedSkew => 4.0 * PI * self.delta,
        }
    }

    /// Log moduli of the eigenvalues of the full linearization at the model
    /// repellor, ascending; the planar doubling factor of the skew product
    /// contributes `log 2` twice.
    pub fn linear_log_moduli(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .matrix
            .eigen_moduli()
            .iter()
            .map(|m| m.ln())
            .collect();
        if self.variant == Variant::PerturbedSkew {
            out.push(2.0_f64.ln());
            out.push(2.0_f64.ln());
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    /// Exact stable dimension of the unperturbed linear model.
    pub fn stable_dim_linear(&self) -> usize {
        self.linear_log_moduli().iter().filter(|&&l| l < 0.0).count()
    }

    /// Exact stable potential of the linear model (sum of negative log
    /// moduli); 0 for expanding systems.
    pub fn stable_potential_linear(&self) -> f64 {
        self.linear_log_moduli().iter().filter(|&&l| l < 0.0).sum()
    }

    /// Topological entropy of the linear model (sum of positive log moduli).
    pub fn h_top_linear(&self) -> f64 {
        self.linear_log_moduli().iter().filter(|&&l| l > 0.0).sum()
    }
}

fn float_mat(a: &IntMatrix) -> Mat {
    let n = a.dim();
    let mut m = Mat::zero(n);
    for i in 0..n {
        for j in 0..n {
            m.a[i][j] = a.get(i, j) as f64;
        }
    }
    m
}

//! Exact integer-matrix arithmetic for the linear part of the catalogued
//! maps: determinants, adjugates, residue classes of `Z^m / A Z^m`, and the
//! hyperbolicity check on eigenvalue moduli.

use crate::error::{DynError, Result};

/// Row-major integer matrix, dimension at most 4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntMatrix {
    n: usize,
    a: Vec<i64>,
}

impl IntMatrix {
    pub fn new(n: usize, entries: Vec<i64>) -> Self {
        assert!(n >= 1 && n <= 4, "dimension must be 1..=4");
        assert_eq!(entries.len(), n * n);
        IntMatrix { n, a: entries }
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        let n = rows.len();
        let mut a = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "matrix must be square");
            a.extend_from_slice(r);
        }
        IntMatrix::new(n, a)
    }

    /// Block-diagonal composition; used for product systems.
    pub fn block_diag(top: &IntMatrix, bottom: &IntMatrix) -> Self {
        let n = top.n + bottom.n;
        let mut a = vec![0i64; n * n];
        for i in 0..top.n {
            for j in 0..top.n {
                a[i * n + j] = top.get(i, j);
            }
        }
        for i in 0..bottom.n {
            for j in 0..bottom.n {
                a[(top.n + i) * n + (top.n + j)] = bottom.get(i, j);
            }
        }
        IntMatrix { n, a }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.a[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<i64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn transpose(&self) -> IntMatrix {
        let mut a = vec![0i64; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                a[j * self.n + i] = self.get(i, j);
            }
        }
        IntMatrix { n: self.n, a }
    }

    fn as_block(&self) -> [[i128; 4]; 4] {
        let mut b = [[0i128; 4]; 4];
        for i in 0..self.n {
            for j in 0..self.n {
                b[i][j] = self.get(i, j) as i128;
            }
        }
        b
    }

    pub fn det(&self) -> i64 {
        det_i128(&self.as_block(), self.n) as i64
    }

    /// Adjugate matrix: `adj(A) * A = det(A) * I`. Exact.
    pub fn adjugate(&self) -> IntMatrix {
        let n = self.n;
        if n == 1 {
            return IntMatrix::new(1, vec![1]);
        }
        let b = self.as_block();
        let mut a = vec![0i64; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut minor = [[0i128; 4]; 4];
                for r in 0..n - 1 {
                    for c in 0..n - 1 {
                        let rr = if r < i { r } else { r + 1 };
                        let cc = if c < j { c } else { c + 1 };
                        minor[r][c] = b[rr][cc];
                    }
                }
                let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
                // adj is the transpose of the cofactor matrix
                a[j * n + i] = (sign as i128 * det_i128(&minor, n - 1)) as i64;
            }
        }
        IntMatrix { n, a }
    }

    pub fn mul_vec(&self, v: &[i64]) -> Vec<i64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Exact test for `A^{-1} k` being integral: `adj(A) k = 0 (mod det)`.
    pub fn maps_to_lattice(&self, adj: &IntMatrix, k: &[i64]) -> bool {
        let d = self.det();
        adj.mul_vec(k).iter().all(|&t| t % d == 0)
    }

    /// Complex eigenvalue moduli of the matrix, ascending.
    pub fn eigen_moduli(&self) -> Vec<f64> {
        let m = nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j) as f64);
        let mut mods: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        mods.sort_by(|a, b| a.partial_cmp(b).unwrap());
        mods
    }

    /// Errors unless every eigenvalue modulus is bounded away from 1.
    pub fn check_hyperbolic(&self, tol: f64) -> Result<()> {
        for m in self.eigen_moduli() {
            if (m - 1.0).abs() <= tol {
                return Err(DynError::NotHyperbolic { modulus: m, tol });
            }
        }
        Ok(())
    }
}

fn det_i128(a: &[[i128; 4]; 4], n: usize) -> i128 {
    match n {
        1 => a[0][0],
        2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
        3 => {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        }
        4 => {
            let mut s = 0i128;
            for j in 0..4 {
                let mut minor = [[0i128; 4]; 4];
                for r in 0..3 {
                    let mut cc = 0;
                    for c in 0..4 {
                        if c == j {
                            continue;
                        }
                        minor[r][cc] = a[r + 1][c];
                        cc += 1;
                    }
                }
                let sign = if j % 2 == 0 { 1 } else { -1 };
                s += sign * a[0][j] * det_i128(&minor, 3);
            }
            s
        }
        _ => unreachable!("dimension must be 1..=4"),
    }
}

/// One residue representative per class of `Z^m / A Z^m`; these index the
/// local inverse branches of the induced toral endomorphism.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CosetSet {
    reps: Vec<Vec<i64>>,
}

impl CosetSet {
    pub fn reps(&self) -> &[Vec<i64>] {
        &self.reps
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }
}

/// Enumerates the `|det A|` residue representatives of `Z^m / A Z^m` as the
/// integer points of the half-open fundamental parallelepiped `A [0,1)^m`
/// (membership test: `A^{-1} k` componentwise in `[0,1)`, exact in integers).
/// Representatives are returned in lexicographic order.
pub fn coset_representatives(a: &IntMatrix) -> Result<CosetSet> {
    let d = a.det();
    if d == 0 {
        return Err(DynError::DegenerateMatrix);
    }
    let n = a.dim();
    let adj = a.adjugate();

    // k = A x with x in [0,1)^m bounds each coordinate of k by the sums of
    // negative / positive entries of the corresponding row.
    let lo: Vec<i64> = (0..n)
        .map(|i| (0..n).map(|j| a.get(i, j).min(0)).sum())
        .collect();
    let hi: Vec<i64> = (0..n)
        .map(|i| (0..n).map(|j| a.get(i, j).max(0)).sum())
        .collect();

    let mut reps = Vec::with_capacity(d.unsigned_abs() as usize);
    let mut k = lo.clone();
    'outer: loop {
        if in_fundamental_domain(&adj, d, &k) {
            reps.push(k.clone());
        }
        // odometer over the integer box [lo, hi]
        for i in (0..n).rev() {
            if k[i] < hi[i] {
                k[i] += 1;
                for ii in i + 1..n {
                    k[ii] = lo[ii];
                }
                continue 'outer;
            }
        }
        break;
    }
    reps.sort();
    debug_assert_eq!(reps.len() as i64, d.abs());
    Ok(CosetSet { reps })
}

/// `A^{-1} k` componentwise in `[0,1)`, tested exactly: with `t = adj(A) k`
/// the condition is `0 <= t_i < det` when `det > 0`, `det < t_i <= 0` when
/// `det < 0`.
fn in_fundamental_domain(adj: &IntMatrix, d: i64, k: &[i64]) -> bool {
    adj.mul_vec(k).iter().all(|&t| {
        if d > 0 {
            (0..d).contains(&t)
        } else {
            t <= 0 && t > d
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[i64]]) -> IntMatrix {
        IntMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn determinants_and_adjugate() {
        let a = mat(&[&[2, 1], &[2, 2]]);
        assert_eq!(a.det(), 2);
        let adj = a.adjugate();
        // adj(A) * A = det * I
        for i in 0..2 {
            for j in 0..2 {
                let s: i64 = (0..2).map(|k| adj.get(i, k) * a.get(k, j)).sum();
                assert_eq!(s, if i == j { 2 } else { 0 });
            }
        }
        let b = mat(&[&[2, 2], &[2, 3]]);
        assert_eq!(b.det(), 2);
        let c = IntMatrix::block_diag(&mat(&[&[2]]), &b);
        assert_eq!(c.det(), 4);
        assert_eq!(c.dim(), 3);
    }

    #[test]
    fn cosets_doubling() {
        let reps = coset_representatives(&mat(&[&[2]])).unwrap();
        assert_eq!(reps.reps(), &[vec![0], vec![1]]);
    }

    #[test]
    fn cosets_match_brute_force_enumeration() {
        // Independent oracle: scan the box [-3,3]^2 for integer points whose
        // preimage under A lies in [0,1)^2, testing in rationals.
        for rows in [vec![vec![2, 1], vec![2, 2]], vec![vec![2, 2], vec![2, 3]]] {
            let a = IntMatrix::from_rows(&rows);
            let adj = a.adjugate();
            let d = a.det();
            let mut brute = Vec::new();
            for k0 in -3..=3i64 {
                for k1 in -3..=3i64 {
                    let t = adj.mul_vec(&[k0, k1]);
                    let ok = t.iter().all(|&ti| {
                        let num = ti as f64 / d as f64;
                        (0.0..1.0).contains(&num)
                    });
                    if ok {
                        brute.push(vec![k0, k1]);
                    }
                }
            }
            brute.sort();
            let reps = coset_representatives(&a).unwrap();
            assert_eq!(reps.reps(), &brute[..]);
            assert_eq!(reps.len() as i64, d.abs());
        }
    }

    #[test]
    fn coset_reps_are_pairwise_distinct_residues() {
        for rows in [
            vec![vec![2, 1], vec![2, 2]],
            vec![vec![2, 2], vec![2, 3]],
            vec![vec![3, 1], vec![0, 2]],
        ] {
            let a = IntMatrix::from_rows(&rows);
            let adj = a.adjugate();
            let reps = coset_representatives(&a).unwrap();
            for i in 0..reps.len() {
                for j in 0..i {
                    let diff: Vec<i64> = reps.reps()[i]
                        .iter()
                        .zip(&reps.reps()[j])
                        .map(|(x, y)| x - y)
                        .collect();
                    assert!(
                        !a.maps_to_lattice(&adj, &diff),
                        "representatives {i} and {j} lie in the same residue class"
                    );
                }
            }
        }
    }

    #[test]
    fn degenerate_matrix_rejected() {
        let a = mat(&[&[1, 1], &[1, 1]]);
        assert!(matches!(
            coset_representatives(&a),
            Err(DynError::DegenerateMatrix)
        ));
    }

    #[test]
    fn hyperbolicity_check() {
        assert!(mat(&[&[2, 1], &[2, 2]]).check_hyperbolic(1e-9).is_ok());
        // Eigenvalues 1 and 2: not hyperbolic.
        assert!(mat(&[&[1, 0], &[0, 2]]).check_hyperbolic(1e-9).is_err());
        // Area-preserving cat map is hyperbolic but has |det| = 1; that is
        // legal here (degree constraints live with the system).
        assert!(mat(&[&[2, 1], &[1, 1]]).check_hyperbolic(1e-9).is_ok());
    }

    #[test]
    fn eigen_moduli_values() {
        let m = mat(&[&[2, 1], &[2, 2]]).eigen_moduli();
        assert!((m[0] - (2.0 - 2.0_f64.sqrt())).abs() < 1e-12);
        assert!((m[1] - (2.0 + 2.0_f64.sqrt())).abs() < 1e-12);
    }
}

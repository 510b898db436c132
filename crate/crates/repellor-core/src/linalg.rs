//! Fixed-capacity dense linear algebra for the derivative cocycles.
//!
//! Every Jacobian in the catalogue is at most 4x4, and the QR accumulations
//! run for 10^4 steps or over 10^5 atoms, so these kernels avoid heap
//! traffic entirely: a `Mat` is a `[[f64; 4]; 4]` plus its live dimension.

use crate::geom::Q_MAX;

#[derive(Clone, Copy, Debug)]
pub struct Mat {
    pub n: usize,
    pub a: [[f64; Q_MAX]; Q_MAX],
}

impl Mat {
    pub fn zero(n: usize) -> Self {
        Mat {
            n,
            a: [[0.0; Q_MAX]; Q_MAX],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zero(n);
        for i in 0..n {
            m.a[i][i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let mut m = Mat::zero(n);
        for (i, r) in rows.iter().enumerate() {
            m.a[i][..n].copy_from_slice(&r[..n]);
        }
        m
    }

    #[inline]
    pub fn mul_vec(&self, v: &[f64; Q_MAX]) -> [f64; Q_MAX] {
        let mut out = [0.0; Q_MAX];
        for i in 0..self.n {
            let mut s = 0.0;
            for j in 0..self.n {
                s += self.a[i][j] * v[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn mul(&self, rhs: &Mat) -> Mat {
        let n = self.n;
        let mut out = Mat::zero(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.a[i][k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i][j] += aik * rhs.a[k][j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zero(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.a[j][i] = self.a[i][j];
            }
        }
        out
    }

    pub fn col(&self, j: usize) -> [f64; Q_MAX] {
        let mut c = [0.0; Q_MAX];
        for i in 0..self.n {
            c[i] = self.a[i][j];
        }
        c
    }

    pub fn set_col(&mut self, j: usize, c: &[f64; Q_MAX]) {
        for i in 0..self.n {
            self.a[i][j] = c[i];
        }
    }

    /// Gauss-Jordan inverse with partial pivoting. `None` if singular to
    /// working precision.
    pub fn inverse(&self) -> Option<Mat> {
        let n = self.n;
        let mut a = self.a;
        let mut inv = Mat::identity(n);
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if a[r][col].abs() > a[piv][col].abs() {
                    piv = r;
                }
            }
            if a[piv][col].abs() < 1e-300 {
                return None;
            }
            a.swap(col, piv);
            inv.a.swap(col, piv);
            let s = 1.0 / a[col][col];
            for j in 0..n {
                a[col][j] *= s;
                inv.a[col][j] *= s;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r][col];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[r][j] -= f * a[col][j];
                    inv.a[r][j] -= f * inv.a[col][j];
                }
            }
        }
        Some(inv)
    }

    /// Thin QR by modified Gram-Schmidt with one re-orthogonalization pass.
    /// The diagonal of R is forced positive (column sign flips), which makes
    /// cocycle accumulations deterministic. Returns (Q, diag R).
    pub fn qr_pos(&self) -> (Mat, [f64; Q_MAX]) {
        let n = self.n;
        let mut q = *self;
        let mut rdiag = [0.0; Q_MAX];
        for j in 0..n {
            let mut v = q.col(j);
            // two MGS sweeps against previous columns
            for _pass in 0..2 {
                for k in 0..j {
                    let qk = q.col(k);
                    let mut dot = 0.0;
                    for i in 0..n {
                        dot += qk[i] * v[i];
                    }
                    for i in 0..n {
                        v[i] -= dot * qk[i];
                    }
                }
            }
            let mut norm = 0.0;
            for vi in v.iter().take(n) {
                norm += vi * vi;
            }
            let norm = norm.sqrt();
            rdiag[j] = norm;
            if norm > 0.0 {
                for vi in v.iter_mut().take(n) {
                    *vi /= norm;
                }
            } else {
                // degenerate column: substitute any unit vector orthogonal to
                // the previous ones so the iteration can continue
                v = [0.0; Q_MAX];
                v[j] = 1.0;
            }
            q.set_col(j, &v);
        }
        (q, rdiag)
    }

    pub fn det(&self) -> f64 {
        match self.n {
            0 => 1.0,
            1 => self.a[0][0],
            2 => self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0],
            3 => {
                self.a[0][0] * (self.a[1][1] * self.a[2][2] - self.a[1][2] * self.a[2][1])
                    - self.a[0][1] * (self.a[1][0] * self.a[2][2] - self.a[1][2] * self.a[2][0])
                    + self.a[0][2] * (self.a[1][0] * self.a[2][1] - self.a[1][1] * self.a[2][0])
            }
            4 => {
                let mut s = 0.0;
                for j in 0..4 {
                    let mut m = Mat::zero(3);
                    for r in 0..3 {
                        let mut cc = 0;
                        for c in 0..4 {
                            if c == j {
                                continue;
                            }
                            m.a[r][cc] = self.a[r + 1][c];
                            cc += 1;
                        }
                    }
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    s += sign * self.a[0][j] * m.det();
                }
                s
            }
            _ => unreachable!(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let m = Mat::from_rows(&[&[2.0, 1.0], &[2.0, 2.0]]);
        let inv = m.inverse().unwrap();
        let id = m.mul(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id.a[i][j] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn qr_orthonormal_positive_diag() {
        let m = Mat::from_rows(&[&[2.0, 1.0, 0.5], &[-2.0, 2.0, 1.0], &[0.1, 0.3, -4.0]]);
        let (q, r) = m.qr_pos();
        for j in 0..3 {
            assert!(r[j] > 0.0);
            for k in 0..=j {
                let mut dot = 0.0;
                for i in 0..3 {
                    dot += q.a[i][j] * q.a[i][k];
                }
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12, "Q not orthonormal");
            }
        }
        // product of R diagonals = |det|
        let prod: f64 = r[..3].iter().product();
        assert!((prod - m.det().abs()).abs() < 1e-10);
    }
}

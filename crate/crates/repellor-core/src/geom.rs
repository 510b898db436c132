//! Phase-space points and mod-1 arithmetic.
//!
//! Two phase spaces appear in the catalogue: flat tori `T^m` (m <= 4) and the
//! product of a planar annulus around the unit circle with `T^2`. Both fit in
//! a fixed-width coordinate block, so `Point` is a plain `[f64; 4]` and the
//! owning `SystemSpec` knows how many lanes are live and what they mean.

/// Maximum real dimension of any catalogued phase space.
pub const Q_MAX: usize = 4;

/// A phase-space point. Unused lanes are zero.
///
/// For toral systems lanes `0..m` are torus coordinates in `[0, 1)`.
/// For the perturbed skew product the layout is `[u, v, x, y]`: `(u, v)` the
/// planar coordinate near the unit circle, `(x, y)` on `T^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point(pub [f64; Q_MAX]);

impl Point {
    pub fn zero() -> Self {
        Point([0.0; Q_MAX])
    }

    pub fn from_slice(cs: &[f64]) -> Self {
        let mut c = [0.0; Q_MAX];
        c[..cs.len()].copy_from_slice(cs);
        Point(c)
    }

    #[inline]
    pub fn coords(&self, q: usize) -> &[f64] {
        &self.0[..q]
    }
}

/// Reduce to `[0, 1)`. Exact integers map to 0, including negatives.
#[inline]
pub fn mod1(x: f64) -> f64 {
    let r = x - x.floor();
    // x slightly below an integer can round to exactly 1.0.
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed wrap of a coordinate difference into `[-0.5, 0.5)`.
///
/// The half-integer tie breaks downward (0.5 maps to -0.5), so the lift used
/// for distances is deterministic at the wrap seam.
#[inline]
pub fn wrap_half(d: f64) -> f64 {
    let r = d - (d + 0.5).floor();
    // Guard against rounding pushing the result onto the closed endpoint.
    if r >= 0.5 {
        -0.5
    } else {
        r
    }
}

/// Euclidean distance on `T^m`, coordinates wrapped independently.
#[inline]
pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = wrap_half(a[i] - b[i]);
        s += d * d;
    }
    s.sqrt()
}

/// A point on `T^m` with all coordinates reduced to `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// Builds a torus point, reducing every coordinate mod 1.
    pub fn new(coords: &[f64]) -> Self {
        TorusPoint {
            coords: coords.iter().map(|&x| mod1(x)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_point(&self) -> Point {
        Point::from_slice(&self.coords)
    }
}

/// A point of the annulus-times-torus phase space of the perturbed skew
/// product: a planar coordinate near the unit circle plus a `T^2` factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmbientPoint {
    pub planar: (f64, f64),
    pub torus: (f64, f64),
}

impl AmbientPoint {
    /// Builds an ambient point; the torus factor is reduced mod 1.
    ///
    /// Panics if the planar coordinate sits at the origin, where the angle
    /// chart is undefined.
    pub fn new(planar: (f64, f64), torus: (f64, f64)) -> Self {
        let r = (planar.0 * planar.0 + planar.1 * planar.1).sqrt();
        assert!(r > 0.0, "planar coordinate must be nonzero");
        AmbientPoint {
            planar,
            torus: (mod1(torus.0), mod1(torus.1)),
        }
    }

    /// Planar modulus, i.e. distance of the planar factor from the origin.
    pub fn radius(&self) -> f64 {
        (self.planar.0 * self.planar.0 + self.planar.1 * self.planar.1).sqrt()
    }

    /// Angle of the planar factor in `[0, 1)` (turns, not radians).
    pub fn angle(&self) -> f64 {
        mod1(self.planar.1.atan2(self.planar.0) / (2.0 * std::f64::consts::PI))
    }

    pub fn to_point(&self) -> Point {
        Point([self.planar.0, self.planar.1, self.torus.0, self.torus.1])
    }

    pub fn from_point(p: &Point) -> Self {
        AmbientPoint {
            planar: (p.0[0], p.0[1]),
            torus: (p.0[2], p.0[3]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mod1_maps_integers_to_zero() {
        for x in [-3.0, -1.0, 0.0, 1.0, 7.0] {
            assert_eq!(mod1(x), 0.0);
        }
        assert!((mod1(-0.25) - 0.75).abs() < 1e-15);
        assert!(mod1(1.0 - 1e-17) < 1.0);
    }

    #[test]
    fn mod1_is_idempotent() {
        for i in 0..1000 {
            let x = -5.0 + 0.01 * i as f64;
            let r = mod1(x);
            assert!((0.0..1.0).contains(&r));
            assert_eq!(mod1(r), r);
        }
    }

    #[test]
    fn wrap_half_ties_break_down() {
        assert_eq!(wrap_half(0.5), -0.5);
        assert_eq!(wrap_half(-0.5), -0.5);
        assert_eq!(wrap_half(1.5), -0.5);
        assert!((wrap_half(0.3) - 0.3).abs() < 1e-15);
        assert!((wrap_half(0.7) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn torus_distance_wraps() {
        // d(0.1, 0.9) = 0.2 on the circle.
        assert!((torus_distance(&[0.1], &[0.9]) - 0.2).abs() < 1e-15);
        // d((0,0),(0.5,0.5)) = sqrt(2)/2 on T^2.
        let d = torus_distance(&[0.0, 0.0], &[0.5, 0.5]);
        assert!((d - 0.5_f64 * 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ambient_point_charts() {
        let p = AmbientPoint::new((0.0, 1.0), (1.25, -0.5));
        assert!((p.radius() - 1.0).abs() < 1e-15);
        assert!((p.angle() - 0.25).abs() < 1e-15);
        assert!((p.torus.0 - 0.25).abs() < 1e-15);
        assert!((p.torus.1 - 0.5).abs() < 1e-15);
    }
}

//! Lyapunov spectra by QR cocycle accumulation, the inverse Pesin identity
//! diagnostics, and the constant-Jacobian (folding entropy) check.
//!
//! Exponents come from the standard discrete QR method: push an orthonormal
//! frame through the derivative cocycle, re-orthonormalize every step, and
//! average the log diagonal of the R factors. A 10% burn-in is discarded so
//! the frame can align before averaging; for constant cocycles the post-
//! transient per-step values are exact and the estimates reach 1e-12.
//!
//! For the perturbed skew product a generic forward orbit escapes the
//! repellor neighbourhood, so the orbit is generated *backward* (seeded
//! branch choices keep it on the numerical repellor) and traversed forward:
//! the reversed backward orbit is a genuine forward orbit on the invariant
//! set. Toral systems iterate forward directly.

use crate::branches::{preimages, pull_back, NewtonConfig};
use crate::error::{DynError, Result};
use crate::geom::Point;
use crate::linalg::Mat;
use crate::measure::WeightedAtomCloud;
use crate::par;
use crate::rng::{stream_rng, streams};
use crate::system::{SystemSpec, Variant};
use crate::thermo::{birkhoff_sum, stable_potential, PressureEstimate, Potential, DEFAULT_N_CONV};

use rand::Rng;

/// Exponents within this log-resolution merge into one multiplicity group.
pub const MULTIPLICITY_RESOLUTION: f64 = 1e-3;

/// Exponents above this (negative) cutoff do not count as contracting; keeps
/// numerically-zero exponents out of the stable sum.
pub const NEGATIVE_CUTOFF: f64 = -1e-6;

/// Lyapunov exponents with multiplicities, ascending.
#[derive(Clone, Debug)]
pub struct LyapunovSpectrum {
    pub exponents: Vec<(f64, u32)>,
    /// Ungrouped per-direction estimates, ascending.
    pub raw: Vec<f64>,
}

impl LyapunovSpectrum {
    pub fn total_multiplicity(&self) -> u32 {
        self.exponents.iter().map(|e| e.1).sum()
    }

    /// Sum of contracting exponents with multiplicity.
    pub fn negative_sum(&self) -> f64 {
        self.exponents
            .iter()
            .filter(|(l, _)| *l < NEGATIVE_CUTOFF)
            .map(|(l, m)| l * *m as f64)
            .sum()
    }

    pub fn sum_all(&self) -> f64 {
        self.exponents.iter().map(|(l, m)| l * *m as f64).sum()
    }
}

/// QR-accumulated Lyapunov spectrum along an orbit through `x0`.
///
/// The seed fixes the initial orthonormal frame and, for the skew product,
/// the backward branch choices.
pub fn lyapunov_spectrum(
    system: &SystemSpec,
    x0: &Point,
    n: usize,
    seed: u64,
) -> Result<LyapunovSpectrum> {
    if n < 100 {
        return Err(DynError::InvalidArgument(
            "lyapunov estimation needs n >= 100".into(),
        ));
    }
    let orbit = exponent_orbit(system, x0, n, seed)?;
    lyapunov_spectrum_along(system, &orbit, seed)
}

/// Forward orbit suitable for cocycle accumulation: direct iteration on
/// invariant tori, reversed backward iteration for the skew product.
fn exponent_orbit(system: &SystemSpec, x0: &Point, n: usize, seed: u64) -> Result<Vec<Point>> {
    match system.variant() {
        Variant::Toral => Ok(system.orbit(x0, n)),
        Variant::PerturbedSkew => {
            let cfg = NewtonConfig::default();
            let mut rng = stream_rng(seed, streams::BRANCH_WALK);
            let d = system.degree() as usize;
            // settle onto the numerical repellor, then record the walk
            let mut p = *x0;
            for _ in 0..64 {
                p = pull_back(system, &p, rng.random_range(0..d), &cfg)?;
            }
            let mut backward = Vec::with_capacity(n + 1);
            backward.push(p);
            for _ in 0..n {
                p = pull_back(system, &p, rng.random_range(0..d), &cfg)?;
                backward.push(p);
            }
            backward.reverse();
            Ok(backward)
        }
    }
}

/// Spectrum from an explicit forward orbit.
pub fn lyapunov_spectrum_along(
    system: &SystemSpec,
    orbit: &[Point],
    seed: u64,
) -> Result<LyapunovSpectrum> {
    let q = system.phase_dim();
    let n = orbit.len() - 1;
    let burn = n / 10;
    // seeded random initial frame
    let mut rng = stream_rng(seed, streams::LYAPUNOV);
    let mut init = Mat::zero(q);
    for i in 0..q {
        for j in 0..q {
            init.a[i][j] = rng.random::<f64>() - 0.5;
        }
    }
    let (mut frame, _) = init.qr_pos();
    let mut sums = [0.0f64; crate::geom::Q_MAX];
    let mut kept = 0usize;
    for (i, p) in orbit.iter().take(n).enumerate() {
        let j = system.jacobian(p);
        let z = j.mul(&frame);
        let (qq, rd) = z.qr_pos();
        frame = qq;
        if i >= burn {
            for k in 0..q {
                sums[k] += rd[k].ln();
            }
            kept += 1;
        }
    }
    let mut raw: Vec<f64> = sums[..q].iter().map(|s| s / kept as f64).collect();
    raw.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // group by the multiplicity resolution
    let mut exponents: Vec<(f64, u32)> = Vec::new();
    for &l in &raw {
        match exponents.last_mut() {
            Some((v, m)) if (l - *v).abs() <= MULTIPLICITY_RESOLUTION => {
                // running mean keeps the group representative centered
                *v = (*v * *m as f64 + l) / (*m as f64 + 1.0);
                *m += 1;
            }
            _ => exponents.push((l, 1)),
        }
    }
    Ok(LyapunovSpectrum { exponents, raw })
}

/// Residuals of the inverse Pesin identity and the entropy comparison.
#[derive(Clone, Debug)]
pub struct PesinReport {
    /// Sum of contracting exponents with multiplicity.
    pub sum_negative: f64,
    /// Integral of the stable potential against the cloud.
    pub integral_phi_s: f64,
    pub log_d: f64,
    /// `log d - integral_phi_s`.
    pub entropy_estimate: f64,
    /// `|integral_phi_s - sum_negative|`.
    pub residual_identity: f64,
    /// `|extrapolated pressure of (stable potential - log d)|`, when a
    /// pressure estimate was supplied.
    pub residual_pressure: Option<f64>,
    /// Strict inequality `entropy_estimate > log d`; on exactly when the
    /// stable bundle is nonempty.
    pub exceeds_log_d: bool,
}

/// Checks the inverse Pesin identity on a cloud: the integral of the stable
/// potential must match the sum of contracting Lyapunov exponents, and
/// `log d - integral` is the entropy of the inverse-limit measure.
pub fn pesin_check(
    system: &SystemSpec,
    cloud: &WeightedAtomCloud,
    spectrum: &LyapunovSpectrum,
    pressure: Option<&PressureEstimate>,
) -> Result<PesinReport> {
    let integral_phi_s = integrate_stable_potential(system, cloud, DEFAULT_N_CONV)?;
    let sum_negative = spectrum.negative_sum();
    let log_d = system.log_degree();
    let entropy_estimate = log_d - integral_phi_s;
    Ok(PesinReport {
        sum_negative,
        integral_phi_s,
        log_d,
        entropy_estimate,
        residual_identity: (integral_phi_s - sum_negative).abs(),
        residual_pressure: pressure.map(|p| p.extrapolated.abs()),
        exceeds_log_d: entropy_estimate > log_d + 1e-9,
    })
}

/// Integral of the stable potential against the cloud, evaluating the QR
/// frame machinery at every atom (no constant-cocycle shortcut: this is the
/// identity's integrand).
pub fn integrate_stable_potential(
    system: &SystemSpec,
    cloud: &WeightedAtomCloud,
    n_conv: usize,
) -> Result<f64> {
    let vals: Vec<Result<f64>> = par::map_slice(&cloud.atoms, |(p, w)| {
        Ok(stable_potential(system, p, n_conv)? * *w)
    });
    let mut terms = Vec::with_capacity(vals.len());
    for v in vals {
        terms.push(v?);
    }
    Ok(par::pairwise_sum(&terms))
}

/// Per-box mass ratios for the constant-Jacobian check.
#[derive(Clone, Debug)]
pub struct JacobianReport {
    pub degree: u32,
    pub ratios: Vec<f64>,
    pub median_ratio: f64,
    pub boxes_total: usize,
    pub boxes_used: usize,
    pub boxes_empty: usize,
    /// Boxes where the forward map failed to be injective (two preimages of
    /// one atom inside); excluded from the ratios.
    pub boxes_flagged: usize,
}

/// Where the probe boxes sit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxCentering {
    /// Centers drawn from the cloud itself (mass-weighted). Every box then
    /// carries mass across adjacent atom generations and the per-box ratio
    /// concentrates at the Jacobian value; the default.
    AtomCentered,
    /// Uniform centers; boxes often carry only deep-level background mass,
    /// whose per-box ratio is noisy (empty boxes are skipped and counted).
    Uniform,
}

/// Estimates the measure Jacobian by comparing cloud mass of small boxes
/// with the mass of their forward images. An atom `p` lies in `f(B)` iff one
/// of its inverse branches lies in `B`; two branches inside flag the box as
/// straddling a branch boundary.
pub fn jacobian_check(
    system: &SystemSpec,
    cloud: &WeightedAtomCloud,
    num_boxes: usize,
    box_size: f64,
    seed: u64,
    newton: &NewtonConfig,
    centering: BoxCentering,
) -> Result<JacobianReport> {
    if num_boxes == 0 || box_size <= 0.0 {
        return Err(DynError::InvalidArgument(
            "need num_boxes >= 1 and box_size > 0".into(),
        ));
    }
    let q = system.phase_dim();
    let mut rng = stream_rng(seed, streams::JACOBIAN_BOXES);
    let centers: Vec<Point> = match centering {
        BoxCentering::Uniform => (0..num_boxes).map(|_| system.random_point(&mut rng)).collect(),
        BoxCentering::AtomCentered => (0..num_boxes)
            .map(|_| {
                // mass-weighted atom draw by inverse CDF over the atom order
                let t: f64 = rng.random();
                let mut acc = 0.0;
                for (p, w) in &cloud.atoms {
                    acc += w;
                    if acc >= t {
                        return *p;
                    }
                }
                cloud.atoms.last().expect("nonempty cloud").0
            })
            .collect(),
    };

    let half = box_size / 2.0;
    let in_box = |center: &Point, p: &Point| -> bool {
        for d in 0..q {
            let planar = system.variant() == Variant::PerturbedSkew && d < 2;
            let diff = if planar {
                p.0[d] - center.0[d]
            } else {
                crate::geom::wrap_half(p.0[d] - center.0[d])
            };
            if diff.abs() > half {
                return false;
            }
        }
        true
    };

    let mut ratios = Vec::new();
    let mut empty = 0usize;
    let mut flagged = 0usize;
    for center in &centers {
        let mass_box: f64 = {
            let terms: Vec<f64> = cloud
                .atoms
                .iter()
                .map(|(p, w)| if in_box(center, p) { *w } else { 0.0 })
                .collect();
            par::pairwise_sum(&terms)
        };
        if mass_box == 0.0 {
            empty += 1;
            continue;
        }
        // mass of f(box): atoms with an inverse branch inside the box
        let contribs: Vec<Result<(f64, bool)>> = par::map_slice(&cloud.atoms, |(p, w)| {
            let pts = preimages(system, p, newton)?;
            let inside = pts.iter().filter(|y| in_box(center, y)).count();
            Ok((if inside >= 1 { *w } else { 0.0 }, inside >= 2))
        });
        let mut mass_image_terms = Vec::with_capacity(contribs.len());
        let mut straddles = false;
        for c in contribs {
            let (w, flag) = c?;
            mass_image_terms.push(w);
            straddles |= flag;
        }
        if straddles {
            flagged += 1;
            continue;
        }
        let mass_image = par::pairwise_sum(&mass_image_terms);
        ratios.push(mass_image / mass_box);
    }
    if empty * 10 > num_boxes * 9 {
        return Err(DynError::InsufficientMass {
            empty,
            total: num_boxes,
        });
    }
    let median = {
        let mut sorted = ratios.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.is_empty() {
            f64::NAN
        } else {
            sorted[sorted.len() / 2]
        }
    };
    Ok(JacobianReport {
        degree: system.degree(),
        median_ratio: median,
        boxes_total: num_boxes,
        boxes_used: ratios.len(),
        boxes_empty: empty,
        boxes_flagged: flagged,
        ratios,
    })
}

/// Convenience: entropy estimate `log d - integral(Phi^s)` from a cloud.
pub fn entropy_estimate(system: &SystemSpec, cloud: &WeightedAtomCloud) -> Result<f64> {
    Ok(system.log_degree() - integrate_stable_potential(system, cloud, DEFAULT_N_CONV)?)
}

/// Trace-determinant consistency: the exponent sum must equal the orbit
/// average of `log |det Df|`.
pub fn determinant_consistency(
    system: &SystemSpec,
    spectrum: &LyapunovSpectrum,
    x0: &Point,
    n: usize,
) -> Result<f64> {
    let phi = Potential::Zero.compile(system)?;
    let _ = birkhoff_sum(system, &phi, x0, 1)?; // warm the compiled path
    let logdet = birkhoff_sum_fn_logdet(system, x0, n) / n as f64;
    Ok((spectrum.sum_all() - logdet).abs())
}

fn birkhoff_sum_fn_logdet(system: &SystemSpec, x: &Point, n: usize) -> f64 {
    let mut s = 0.0;
    let mut p = *x;
    for _ in 0..n {
        s += system.jacobian(&p).det().abs().ln();
        p = system.apply(&p);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branches::{Region, TreeConfig};
    use crate::measure::build_inverse_empirical;
    use crate::system::SystemSpec;

    #[test]
    fn doubling_spectrum_is_log_two() {
        let s = SystemSpec::doubling();
        let sp = lyapunov_spectrum(&s, &Point::from_slice(&[0.123]), 1000, 1).unwrap();
        assert_eq!(sp.exponents.len(), 1);
        assert_eq!(sp.exponents[0].1, 1);
        assert!((sp.exponents[0].0 - 2.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn toral_spectrum_matches_eigenvalues() {
        let s = SystemSpec::mat2122();
        let sp = lyapunov_spectrum(&s, &Point::from_slice(&[0.3, 0.6]), 10_000, 2).unwrap();
        let lam_s = (2.0 - 2.0f64.sqrt()).ln();
        let lam_u = (2.0 + 2.0f64.sqrt()).ln();
        assert_eq!(sp.exponents.len(), 2);
        assert!((sp.exponents[0].0 - lam_s).abs() < 1e-6, "{:?}", sp.exponents);
        assert!((sp.exponents[1].0 - lam_u).abs() < 1e-6);
    }

    #[test]
    fn spectrum_independent_of_start_point() {
        let s = SystemSpec::mat2223();
        let mut rng = crate::rng::stream_rng(5, 0);
        let mut first: Option<Vec<f64>> = None;
        for _ in 0..20 {
            let x = s.random_point(&mut rng);
            let sp = lyapunov_spectrum(&s, &x, 500, 9).unwrap();
            match &first {
                None => first = Some(sp.raw.clone()),
                Some(f) => {
                    for (a, b) in f.iter().zip(&sp.raw) {
                        assert!((a - b).abs() <= 1e-9, "spread across starts");
                    }
                }
            }
        }
    }

    #[test]
    fn skew_spectrum_at_eps_zero() {
        let s = SystemSpec::skew(0.0).unwrap();
        let sp = lyapunov_spectrum(&s, &Point([1.0, 0.0, 0.4, 0.9]), 2000, 3).unwrap();
        // exponents: log(2 - sqrt 2), log 2 (multiplicity 2), log(2 + sqrt 2)
        assert_eq!(sp.raw.len(), 4);
        assert!((sp.raw[0] - (2.0 - 2.0f64.sqrt()).ln()).abs() < 1e-6);
        assert!((sp.raw[1] - 2.0f64.ln()).abs() < 1e-6);
        assert!((sp.raw[2] - 2.0f64.ln()).abs() < 1e-6);
        assert!((sp.raw[3] - (2.0 + 2.0f64.sqrt()).ln()).abs() < 1e-6);
        // grouping merges the planar pair
        let mults: Vec<u32> = sp.exponents.iter().map(|e| e.1).collect();
        assert_eq!(mults, vec![1, 2, 1]);
    }

    #[test]
    fn determinant_trace_consistency() {
        let s = SystemSpec::mat2122();
        let x = Point::from_slice(&[0.7, 0.2]);
        let sp = lyapunov_spectrum(&s, &x, 2000, 4).unwrap();
        let dev = determinant_consistency(&s, &sp, &x, 200).unwrap();
        assert!(dev < 1e-6, "deviation {dev}");
    }

    #[test]
    fn pesin_identity_residual_small() {
        let s = SystemSpec::mat2122();
        let cloud = build_inverse_empirical(
            &s,
            &Point::from_slice(&[0.37, 0.58]),
            8,
            Region::FullTorus,
            &TreeConfig::default(),
            false,
        )
        .unwrap();
        let sp = lyapunov_spectrum(&s, &Point::from_slice(&[0.1, 0.9]), 5000, 6).unwrap();
        let rep = pesin_check(&s, &cloud, &sp, None).unwrap();
        let want = (2.0 - 2.0f64.sqrt()).ln();
        assert!((rep.integral_phi_s - want).abs() < 1e-6);
        assert!(rep.residual_identity < 1e-6);
        assert!(rep.exceeds_log_d);
        assert!((rep.entropy_estimate - (s.log_degree() - want)).abs() < 1e-6);
    }

    #[test]
    fn pesin_flag_off_for_expanding_map() {
        let s = SystemSpec::doubling();
        let cloud = build_inverse_empirical(
            &s,
            &Point::from_slice(&[0.2]),
            8,
            Region::FullTorus,
            &TreeConfig::default(),
            false,
        )
        .unwrap();
        let sp = lyapunov_spectrum(&s, &Point::from_slice(&[0.5]), 1000, 7).unwrap();
        let rep = pesin_check(&s, &cloud, &sp, None).unwrap();
        assert!((rep.entropy_estimate - s.log_degree()).abs() <= 1e-9);
        assert!(!rep.exceeds_log_d);
    }

    #[test]
    fn jacobian_ratio_near_degree() {
        let s = SystemSpec::mat2122();
        let cloud = build_inverse_empirical(
            &s,
            &Point::from_slice(&[0.21, 0.83]),
            12,
            Region::FullTorus,
            &TreeConfig::default(),
            false,
        )
        .unwrap();
        let rep = jacobian_check(&s, &cloud, 50, 0.05, 11, &NewtonConfig::default(), BoxCentering::AtomCentered).unwrap();
        assert!(rep.boxes_used >= 10);
        assert!(
            (rep.median_ratio - 2.0).abs() <= 0.2,
            "median ratio {}",
            rep.median_ratio
        );
    }

    #[test]
    fn jacobian_insufficient_mass() {
        let s = SystemSpec::mat2122();
        // a single atom leaves almost every random box empty
        let cloud = WeightedAtomCloud {
            atoms: vec![(Point::from_slice(&[0.5, 0.5]), 1.0)],
        };
        let r = jacobian_check(&s, &cloud, 40, 0.02, 3, &NewtonConfig::default(), BoxCentering::Uniform);
        assert!(matches!(r, Err(DynError::InsufficientMass { .. })));
    }
}

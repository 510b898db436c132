//! Correlation sequences `C_n(phi, psi)` under a sampling measure and the
//! log-linear decay fit.
//!
//! The estimator couples all observables to the same sample points and
//! forward orbits (one orbit per point, reused across every lag), so
//! bilinearity in the observables holds exactly at fixed seed, not just in
//! distribution.

use crate::error::{DynError, Result};
use crate::geom::Point;
use crate::measure::{TrigObservable, WeightedAtomCloud};
use crate::par;
use crate::rng::{stream_rng, streams};
use crate::system::SystemSpec;
use crate::thermo::least_squares;

/// Sampling measure for correlation estimation.
pub enum CorrelationSampler<'a> {
    /// Uniform on the phase space.
    Haar,
    /// The atoms of an inverse-iterate cloud with their weights.
    Cloud(&'a WeightedAtomCloud),
}

#[derive(Clone, Debug)]
pub struct CorrelationSequence {
    /// `C_n` for `n = 0..=n_max`.
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_max: usize,
    /// Effective number of independent samples behind each value.
    pub effective_samples: f64,
    pub sampler: String,
}

/// `C_n = <phi . psi o f^n> - <phi><psi>` under the sampler, with forward
/// orbits computed once per sample point.
pub fn correlation_sequence(
    system: &SystemSpec,
    sampler: &CorrelationSampler,
    phi: &TrigObservable,
    psi: &TrigObservable,
    n_max: usize,
    num_samples: usize,
    seed: u64,
) -> Result<CorrelationSequence> {
    if n_max == 0 {
        return Err(DynError::InvalidArgument("n_max must be >= 1".into()));
    }
    if !phi.is_real_valued() || !psi.is_real_valued() {
        return Err(DynError::InvalidArgument(
            "correlation observables must be declared real-valued".into(),
        ));
    }
    let (points, weights, label): (Vec<Point>, Vec<f64>, String) = match sampler {
        CorrelationSampler::Haar => {
            if num_samples == 0 {
                return Err(DynError::InvalidArgument("num_samples must be >= 1".into()));
            }
            let mut rng = stream_rng(seed, streams::CORRELATIONS);
            let pts: Vec<Point> = (0..num_samples).map(|_| system.random_point(&mut rng)).collect();
            let w = vec![1.0 / num_samples as f64; num_samples];
            (pts, w, "haar".into())
        }
        CorrelationSampler::Cloud(cloud) => {
            let pts: Vec<Point> = cloud.atoms.iter().map(|a| a.0).collect();
            let w: Vec<f64> = cloud.atoms.iter().map(|a| a.1).collect();
            (pts, w, "cloud".into())
        }
    };

    // per sample: phi at time 0 and psi along the orbit
    let rows: Vec<(f64, Vec<f64>)> = par::map_range(points.len(), |i| {
        let mut p = points[i];
        let phi0 = phi.eval_real(system, &p);
        let mut psis = Vec::with_capacity(n_max + 1);
        psis.push(psi.eval_real(system, &p));
        for _ in 0..n_max {
            p = system.apply(&p);
            psis.push(psi.eval_real(system, &p));
        }
        (phi0, psis)
    });

    let wsum = par::pairwise_sum(&weights);
    let mean_phi = par::pairwise_sum(
        &rows
            .iter()
            .zip(&weights)
            .map(|((f, _), w)| f * w)
            .collect::<Vec<_>>(),
    ) / wsum;
    let mean_psi = par::pairwise_sum(
        &rows
            .iter()
            .zip(&weights)
            .map(|((_, ps), w)| ps[0] * w)
            .collect::<Vec<_>>(),
    ) / wsum;

    let neff = {
        let s2: f64 = weights.iter().map(|w| (w / wsum) * (w / wsum)).sum();
        if s2 > 0.0 {
            1.0 / s2
        } else {
            0.0
        }
    };

    let mut values = Vec::with_capacity(n_max + 1);
    let mut stderr = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let prods: Vec<f64> = rows
            .iter()
            .zip(&weights)
            .map(|((f, ps), w)| f * ps[n] * w)
            .collect();
        let mean_prod = par::pairwise_sum(&prods) / wsum;
        let c_n = mean_prod - mean_phi * mean_psi;
        // weighted variance of the centered products for the error bar
        let centered: Vec<f64> = rows
            .iter()
            .zip(&weights)
            .map(|((f, ps), w)| {
                let t = (f - mean_phi) * (ps[n] - mean_psi);
                (t - c_n) * (t - c_n) * w
            })
            .collect();
        let var = par::pairwise_sum(&centered) / wsum;
        values.push(c_n);
        stderr.push((var / neff.max(1.0)).sqrt());
    }
    Ok(CorrelationSequence {
        values,
        stderr,
        n_max,
        effective_samples: neff,
        sampler: label,
    })
}

/// Noise floor from the CLT scale and the observables' sup norms.
pub fn default_noise_floor(
    phi: &TrigObservable,
    psi: &TrigObservable,
    effective_samples: f64,
) -> f64 {
    3.0 * phi.sup_norm_bound() * psi.sup_norm_bound() / effective_samples.max(1.0).sqrt()
}

/// Log-linear decay fit of a correlation sequence.
#[derive(Clone, Debug)]
pub struct DecayFit {
    /// `exp(slope)` of the fit of `log |C_n|` against `n`.
    pub rate: f64,
    pub prefactor: f64,
    /// Coefficient of determination of the log-linear fit.
    pub goodness: f64,
    pub points_used: usize,
}

/// Fits `|C_n| ~ C lambda^n` on the lags `n >= 1` with `|C_n|` above the
/// noise floor. Fewer than 3 usable points is `InconclusiveFit`: the correct
/// outcome for exactly-vanishing sequences.
pub fn decay_rate_fit(seq: &CorrelationSequence, noise_floor: f64) -> Result<DecayFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, &c) in seq.values.iter().enumerate().skip(1) {
        if c.abs() > noise_floor {
            xs.push(n as f64);
            ys.push(c.abs().ln());
        }
    }
    if xs.len() < 3 {
        return Err(DynError::InconclusiveFit { usable: xs.len() });
    }
    let (slope, intercept) = least_squares(&xs, &ys);
    let mean_y = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let goodness = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(DecayFit {
        rate: slope.exp(),
        prefactor: intercept.exp(),
        goodness,
        points_used: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::SystemSpec;

    #[test]
    fn constant_observable_gives_zero_exactly() {
        let s = SystemSpec::mat2122();
        let phi = TrigObservable::cosine(vec![1, 0]);
        let psi = TrigObservable::constant(0.7);
        let seq =
            correlation_sequence(&s, &CorrelationSampler::Haar, &phi, &psi, 6, 2000, 1).unwrap();
        for c in &seq.values {
            assert!(c.abs() < 1e-12, "estimator cancellation broken: {c}");
        }
    }

    #[test]
    fn variance_at_lag_zero() {
        // C_0(cos 2 pi x, cos 2 pi x) under Haar is 1/2
        let s = SystemSpec::mat2122();
        let phi = TrigObservable::cosine(vec![1, 0]);
        let seq =
            correlation_sequence(&s, &CorrelationSampler::Haar, &phi, &phi, 3, 100_000, 2).unwrap();
        assert!(
            (seq.values[0] - 0.5).abs() <= 3.0 * seq.stderr[0],
            "C_0 = {} (stderr {})",
            seq.values[0],
            seq.stderr[0]
        );
        assert!(seq.values[0] >= -3.0 * seq.stderr[0]);
    }

    #[test]
    fn haar_invariance_under_forward_map() {
        // <psi o f> = <psi> under Haar for toral systems
        let s = SystemSpec::mat2223();
        let psi = TrigObservable::cosine(vec![0, 1]);
        let one = TrigObservable::constant(1.0);
        let seq =
            correlation_sequence(&s, &CorrelationSampler::Haar, &one, &psi, 1, 50_000, 3).unwrap();
        // C_1(1, psi) = <psi o f> - <psi>, must vanish within noise
        assert!(seq.values[1].abs() <= 3.0 * (0.5 / (50_000f64).sqrt()));
    }

    #[test]
    fn bilinearity_is_exact_at_fixed_seed() {
        let s = SystemSpec::mat2122();
        let f1 = TrigObservable::cosine(vec![1, 0]);
        let f2 = TrigObservable::cosine(vec![0, 1]);
        let combo = TrigObservable::new(
            vec![
                (vec![1, 0], nalgebra::Complex::new(0.5 * 2.0, 0.0)),
                (vec![-1, 0], nalgebra::Complex::new(0.5 * 2.0, 0.0)),
                (vec![0, 1], nalgebra::Complex::new(0.5 * -3.0, 0.0)),
                (vec![0, -1], nalgebra::Complex::new(0.5 * -3.0, 0.0)),
            ],
            true,
        )
        .unwrap();
        let psi = TrigObservable::cosine(vec![1, 1]);
        let run = |phi: &TrigObservable| {
            correlation_sequence(&s, &CorrelationSampler::Haar, phi, &psi, 5, 4000, 77).unwrap()
        };
        let c1 = run(&f1);
        let c2 = run(&f2);
        let cc = run(&combo);
        for n in 0..=5 {
            let lin = 2.0 * c1.values[n] - 3.0 * c2.values[n];
            assert!(
                (cc.values[n] - lin).abs() < 1e-12,
                "bilinearity broken at lag {n}"
            );
        }
    }

    #[test]
    fn toral_character_pairs_vanish() {
        // cos(2 pi x_1) pairs: (A^T)^n k never returns to -k, so C_n = 0
        // exactly for n >= 1; the estimate must sit inside 3 standard errors.
        let s = SystemSpec::mat2122();
        let phi = TrigObservable::cosine(vec![1, 0]);
        let seq =
            correlation_sequence(&s, &CorrelationSampler::Haar, &phi, &phi, 6, 50_000, 4).unwrap();
        for n in 1..=6 {
            assert!(
                seq.values[n].abs() <= 3.0 * seq.stderr[n].max(1e-9),
                "C_{n} = {} too large",
                seq.values[n]
            );
        }
    }

    #[test]
    fn synthetic_geometric_fit() {
        let seq = CorrelationSequence {
            values: (0..=10).map(|n| 0.3 * 0.5f64.powi(n)).collect(),
            stderr: vec![0.0; 11],
            n_max: 10,
            effective_samples: 1e9,
            sampler: "synthetic".into(),
        };
        let fit = decay_rate_fit(&seq, 0.0).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-6);
        assert!((fit.prefactor - 0.3).abs() < 1e-6);
        assert!(fit.goodness >= 0.999);
    }

    #[test]
    fn vanishing_sequence_is_inconclusive() {
        let seq = CorrelationSequence {
            values: vec![0.5, 1e-9, -2e-9, 1e-10, 0.0],
            stderr: vec![0.0; 5],
            n_max: 4,
            effective_samples: 1e6,
            sampler: "synthetic".into(),
        };
        let r = decay_rate_fit(&seq, 1e-3);
        assert!(matches!(r, Err(DynError::InconclusiveFit { usable: 0 })));
    }
}

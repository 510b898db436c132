//! Inverse-iterate empirical measures and their Fourier analysis.
//!
//! For a root `z` and depth `n`, the empirical measure averages the Dirac
//! masses at the forward images `f^i y`, `i = 1..n`, over the `d^n` inverse
//! branches `y` of depth `n` kept inside the region, each branch weighted
//! `1/d^n`. Those forward images are exactly the intermediate tree levels:
//! the level-`(n-i)` node set is `{f^i y}` with multiplicity `d^i`, so the
//! measure is the average over the uniform measures on levels `n-1, .., 0`
//! and no forward re-iteration is needed. The flag `include_level_n` switches
//! to the other time-index convention (`i = 0..n-1`, levels `n, .., 1`):
//! both converge to the same limit, the default keeps the root level.
//!
//! Weak convergence is monitored on the finite Fourier family
//! `e^{2 pi i k.x}` for `|k|_inf <= K` rather than a transport metric: on the
//! linear systems these coefficients have exact character-sum values, which
//! the tests pin.

use crate::branches::{preimage_tree, preimages, PreimageTree, Region, TreeConfig};
use crate::error::{DynError, Result};
use crate::geom::Point;
use crate::par;
use crate::rng::{stream_rng, streams};
use crate::system::{SystemSpec, Variant};

use nalgebra::Complex;
use std::f64::consts::PI;

pub type C64 = Complex<f64>;

/// Atoms merge when every coordinate agrees within this tolerance; the
/// doubling-map collapse otherwise inflates atom counts.
pub const MERGE_TOL: f64 = 1e-12;

/// A finite weighted point measure, the computational form of the
/// inverse-iterate empirical measures.
#[derive(Clone, Debug)]
pub struct WeightedAtomCloud {
    pub atoms: Vec<(Point, f64)>,
}

impl WeightedAtomCloud {
    pub fn total_weight(&self) -> f64 {
        par::pairwise_sum(&self.atoms.iter().map(|a| a.1).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Kish effective sample size `1 / sum w^2` for noise floors.
    pub fn effective_samples(&self) -> f64 {
        let s2: f64 = par::pairwise_sum(&self.atoms.iter().map(|a| a.1 * a.1).collect::<Vec<_>>());
        if s2 > 0.0 {
            1.0 / s2
        } else {
            0.0
        }
    }

    /// Merges atoms whose coordinates agree within [`MERGE_TOL`]; weights add.
    /// Sorting makes the result independent of input order.
    pub fn merged(mut self, q: usize) -> Self {
        self.atoms.sort_by(|a, b| {
            for i in 0..q {
                match a.0 .0[i].total_cmp(&b.0 .0[i]) {
                    std::cmp::Ordering::Equal => continue,
                    o => return o,
                }
            }
            std::cmp::Ordering::Equal
        });
        let mut out: Vec<(Point, f64)> = Vec::with_capacity(self.atoms.len());
        for (p, w) in self.atoms {
            if let Some(last) = out.last_mut() {
                let same = (0..q).all(|i| (last.0 .0[i] - p.0[i]).abs() <= MERGE_TOL);
                if same {
                    last.1 += w;
                    continue;
                }
            }
            out.push((p, w));
        }
        WeightedAtomCloud { atoms: out }
    }
}

/// Builds the depth-`n` inverse-iterate empirical measure rooted at `z`.
///
/// Weights are derived from level-`n` descendant counts, so region pruning
/// (if any) renormalizes over the surviving branches; without pruning the
/// level-`l` atoms carry exactly `1/(n d^l)`.
pub fn build_inverse_empirical(
    system: &SystemSpec,
    z: &Point,
    n: usize,
    region: Region,
    cfg: &TreeConfig,
    include_level_n: bool,
) -> Result<WeightedAtomCloud> {
    if n == 0 {
        return Err(DynError::InvalidArgument("depth n must be >= 1".into()));
    }
    let depth = if include_level_n { n } else { n - 1 };
    let tree = preimage_tree(system, z, depth, region, cfg)?;
    let lo = if include_level_n { 1 } else { 0 };

    // descendant counts relative to the (virtual) level n
    let mut desc: Vec<Vec<u64>> = Vec::with_capacity(depth + 1);
    for lvl in &tree.levels {
        desc.push(vec![0; lvl.len()]);
    }
    if include_level_n {
        for d in desc[depth].iter_mut() {
            *d = 1;
        }
    } else {
        // children of the leaves are level n; count the surviving ones
        let leaf_counts: Vec<u64> = match region {
            Region::FullTorus => vec![system.degree() as u64; tree.levels[depth].len()],
            _ => {
                let counts: Vec<Result<u64>> = par::map_slice(&tree.levels[depth], |node| {
                    let pts = preimages(system, &node.point, &cfg.newton)?;
                    Ok(pts.iter().filter(|p| region.contains(p)).count() as u64)
                });
                let mut out = Vec::with_capacity(counts.len());
                for c in counts {
                    out.push(c?);
                }
                out
            }
        };
        desc[depth] = leaf_counts;
    }
    for lvl in (0..depth).rev() {
        let (upper, lower) = {
            let (a, b) = desc.split_at_mut(lvl + 1);
            (&mut a[lvl], &b[0])
        };
        for (i, node) in tree.levels[lvl + 1].iter().enumerate() {
            upper[node.parent as usize] += lower[i];
        }
    }
    let survivors: u64 = desc[depth].iter().sum();
    if survivors == 0 {
        return Err(DynError::InvalidArgument(
            "region pruning removed every depth-n branch".into(),
        ));
    }

    let norm = 1.0 / (n as f64 * survivors as f64);
    let mut atoms = Vec::new();
    for lvl in lo..=depth {
        for (node, &dcount) in tree.levels[lvl].iter().zip(&desc[lvl]) {
            if dcount > 0 {
                atoms.push((node.point, dcount as f64 * norm));
            }
        }
    }
    Ok(WeightedAtomCloud { atoms }.merged(system.phase_dim()))
}

/// Same construction but returns the tree as well (pesin and jacobian
/// diagnostics reuse it).
pub fn build_inverse_empirical_with_tree(
    system: &SystemSpec,
    z: &Point,
    n: usize,
    region: Region,
    cfg: &TreeConfig,
) -> Result<(WeightedAtomCloud, PreimageTree)> {
    let cloud = build_inverse_empirical(system, z, n, region, cfg, false)?;
    let tree = preimage_tree(system, z, n - 1, region, cfg)?;
    Ok((cloud, tree))
}

/// A finite Fourier sum on the torus chart; the exactly integrable test
/// class for weak-convergence experiments.
#[derive(Clone, Debug)]
pub struct TrigObservable {
    pub terms: Vec<(Vec<i64>, C64)>,
    real_valued: bool,
}

impl TrigObservable {
    /// Builds an observable from raw terms. Frequencies must be distinct;
    /// `real_valued` additionally requires conjugate symmetry of the
    /// coefficient set.
    pub fn new(terms: Vec<(Vec<i64>, C64)>, real_valued: bool) -> Result<Self> {
        for i in 0..terms.len() {
            for j in 0..i {
                if terms[i].0 == terms[j].0 {
                    return Err(DynError::InvalidArgument(
                        "duplicate frequency in observable".into(),
                    ));
                }
            }
        }
        if real_valued {
            for (k, c) in &terms {
                let neg: Vec<i64> = k.iter().map(|x| -x).collect();
                let mate = terms.iter().find(|(kk, _)| *kk == neg);
                let ok = match mate {
                    Some((_, cc)) => (cc.conj() - c).norm() < 1e-12,
                    None => false,
                };
                if !ok {
                    return Err(DynError::InvalidArgument(
                        "real-valued observable needs conjugate-symmetric coefficients".into(),
                    ));
                }
            }
        }
        Ok(TrigObservable { terms, real_valued })
    }

    pub fn constant(c: f64) -> Self {
        let dim_placeholder = vec![];
        TrigObservable {
            terms: vec![(dim_placeholder, C64::new(c, 0.0))],
            real_valued: true,
        }
    }

    /// `cos(2 pi k.x)` as the symmetric pair of characters.
    pub fn cosine(k: Vec<i64>) -> Self {
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        TrigObservable {
            terms: vec![(k, C64::new(0.5, 0.0)), (neg, C64::new(0.5, 0.0))],
            real_valued: true,
        }
    }

    /// `sin(2 pi k.x)`.
    pub fn sine(k: Vec<i64>) -> Self {
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        TrigObservable {
            terms: vec![
                (k, C64::new(0.0, -0.5)),
                (neg, C64::new(0.0, 0.5)),
            ],
            real_valued: true,
        }
    }

    /// The single character `e^{2 pi i k.x}`.
    pub fn character(k: Vec<i64>) -> Self {
        TrigObservable {
            terms: vec![(k, C64::new(1.0, 0.0))],
            real_valued: false,
        }
    }

    pub fn is_real_valued(&self) -> bool {
        self.real_valued
    }

    /// Upper bound for the sup norm: sum of coefficient moduli.
    pub fn sup_norm_bound(&self) -> f64 {
        self.terms.iter().map(|(_, c)| c.norm()).sum()
    }

    /// Evaluates at a point of the torus chart.
    pub fn eval(&self, coords: &[f64]) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (k, c) in &self.terms {
            let mut phase = 0.0;
            for (ki, xi) in k.iter().zip(coords) {
                phase += *ki as f64 * xi;
            }
            let (im, re) = (2.0 * PI * phase).sin_cos();
            s += c * C64::new(re, im);
        }
        s
    }

    /// Evaluates through a system's torus chart, as a real number.
    pub fn eval_real(&self, system: &SystemSpec, p: &Point) -> f64 {
        let fc = system.fourier_coords(p);
        self.eval(&fc[..system.fourier_dim()]).re
    }
}

/// Integral of a trig observable against the cloud.
pub fn integrate(system: &SystemSpec, cloud: &WeightedAtomCloud, g: &TrigObservable) -> C64 {
    let fdim = system.fourier_dim();
    let (re, im) = par::sum_indexed_c(cloud.atoms.len(), |i| {
        let (p, w) = &cloud.atoms[i];
        let fc = system.fourier_coords(p);
        let v = g.eval(&fc[..fdim]) * *w;
        (v.re, v.im)
    });
    C64::new(re, im)
}

/// Fourier coefficient `sum_atoms w e^{-2 pi i k.x}`.
pub fn fourier_coefficient(system: &SystemSpec, cloud: &WeightedAtomCloud, k: &[i64]) -> C64 {
    let fdim = system.fourier_dim();
    let (re, im) = par::sum_indexed_c(cloud.atoms.len(), |i| {
        let (p, w) = &cloud.atoms[i];
        let fc = system.fourier_coords(p);
        let mut phase = 0.0;
        for (kj, xj) in k.iter().zip(&fc[..fdim]) {
            phase += *kj as f64 * xj;
        }
        let (s, c) = (-2.0 * PI * phase).sin_cos();
        (*w * c, *w * s)
    });
    C64::new(re, im)
}

/// Lexicographic enumeration of `[-K, K]^dim`.
pub fn frequency_box(dim: usize, k_max: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let width = (2 * k_max + 1) as usize;
    let total = width.pow(dim as u32);
    for idx in 0..total {
        let mut k = vec![0i64; dim];
        let mut rem = idx;
        for i in (0..dim).rev() {
            k[i] = (rem % width) as i64 - k_max;
            rem /= width;
        }
        out.push(k);
    }
    out
}

/// All coefficients for `|k|_inf <= K`, in the order of [`frequency_box`].
/// One pass over the atoms using per-axis power tables.
pub fn fourier_all(system: &SystemSpec, cloud: &WeightedAtomCloud, k_max: i64) -> Vec<C64> {
    let fdim = system.fourier_dim();
    let width = (2 * k_max + 1) as usize;
    let ncoef = width.pow(fdim as u32);
    let atoms = &cloud.atoms;

    let nchunks = atoms.len().div_ceil(par::CHUNK);
    let partials: Vec<Vec<C64>> = par::map_range(nchunks, |c| {
        let lo = c * par::CHUNK;
        let hi = ((c + 1) * par::CHUNK).min(atoms.len());
        let mut acc = vec![C64::new(0.0, 0.0); ncoef];
        let mut pow = vec![vec![C64::new(0.0, 0.0); width]; fdim];
        for (p, w) in &atoms[lo..hi] {
            let fc = system.fourier_coords(p);
            for a in 0..fdim {
                let (s0, c0) = (2.0 * PI * k_max as f64 * fc[a]).sin_cos();
                let (s1, c1) = (-2.0 * PI * fc[a]).sin_cos();
                let step = C64::new(c1, s1);
                let mut cur = C64::new(c0, s0); // e^{+2 pi i K x_a} = e^{-2 pi i (-K) x_a}
                for j in 0..width {
                    pow[a][j] = cur;
                    cur *= step;
                }
            }
            // fold the weight into the leading axis
            match fdim {
                1 => {
                    for j in 0..width {
                        acc[j] += pow[0][j] * *w;
                    }
                }
                2 => {
                    for j0 in 0..width {
                        let w0 = pow[0][j0] * *w;
                        let base = j0 * width;
                        for j1 in 0..width {
                            acc[base + j1] += w0 * pow[1][j1];
                        }
                    }
                }
                3 => {
                    for j0 in 0..width {
                        let w0 = pow[0][j0] * *w;
                        for j1 in 0..width {
                            let w01 = w0 * pow[1][j1];
                            let base = (j0 * width + j1) * width;
                            for j2 in 0..width {
                                acc[base + j2] += w01 * pow[2][j2];
                            }
                        }
                    }
                }
                _ => unreachable!("fourier chart dimension is 1..=3"),
            }
        }
        acc
    });
    // deterministic pairwise combine over fixed chunk structure
    fn combine(parts: &[Vec<C64>], ncoef: usize) -> Vec<C64> {
        match parts.len() {
            0 => vec![C64::new(0.0, 0.0); ncoef],
            1 => parts[0].clone(),
            _ => {
                let mid = parts.len() / 2;
                let a = combine(&parts[..mid], ncoef);
                let b = combine(&parts[mid..], ncoef);
                a.iter().zip(&b).map(|(x, y)| x + y).collect()
            }
        }
    }
    combine(&partials, ncoef)
}

/// Reference measure for discrepancy computations.
pub enum Reference<'a> {
    /// Haar measure on the torus chart: all nonzero coefficients vanish.
    Haar,
    Cloud(&'a WeightedAtomCloud),
}

/// Fourier coefficients of the cloud up to `|k|_inf <= K` plus the
/// sup-distance to the reference over the nonzero frequencies.
#[derive(Clone, Debug)]
pub struct FourierReport {
    pub k_max: i64,
    pub frequencies: Vec<Vec<i64>>,
    pub coefficients: Vec<C64>,
    pub discrepancy: f64,
}

pub fn fourier_discrepancy(
    system: &SystemSpec,
    cloud: &WeightedAtomCloud,
    reference: &Reference,
    k_max: i64,
) -> Result<FourierReport> {
    if k_max < 1 {
        return Err(DynError::InvalidArgument("K must be >= 1".into()));
    }
    let freqs = frequency_box(system.fourier_dim(), k_max);
    let own = fourier_all(system, cloud, k_max);
    let reference_coefs: Vec<C64> = match reference {
        Reference::Haar => freqs
            .iter()
            .map(|k| {
                if k.iter().all(|&x| x == 0) {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect(),
        Reference::Cloud(other) => fourier_all(system, other, k_max),
    };
    let mut disc = 0.0f64;
    for ((k, a), b) in freqs.iter().zip(&own).zip(&reference_coefs) {
        if k.iter().all(|&x| x == 0) {
            continue;
        }
        disc = disc.max((a - b).norm());
    }
    Ok(FourierReport {
        k_max,
        frequencies: freqs,
        coefficients: own,
        discrepancy: disc,
    })
}

/// One row of the convergence experiment.
#[derive(Clone, Debug)]
pub struct ConvergenceRow {
    pub n: usize,
    pub avg_discrepancy: f64,
    pub num_z: usize,
}

/// Average Fourier discrepancy of the depth-`n` empirical measures over
/// `num_z` sampled roots, for each `n` in `n_list`.
///
/// Toral systems compare against Haar (their inverse-limit measure); the
/// perturbed skew product has no closed-form reference, so convergence is
/// assessed by Cauchy self-consistency against the deepest requested cloud.
pub fn convergence_experiment(
    system: &SystemSpec,
    n_list: &[usize],
    num_z: usize,
    k_max: i64,
    seed: u64,
    cfg: &TreeConfig,
) -> Result<Vec<ConvergenceRow>> {
    if num_z == 0 || n_list.is_empty() {
        return Ok(Vec::new());
    }
    let region = Region::for_system(system);
    let n_ref = *n_list.iter().max().unwrap();
    let mut sums = vec![0.0f64; n_list.len()];
    for zi in 0..num_z {
        let z = sample_basin_point(system, seed, streams::CONVERGENCE + zi as u64, cfg)?;
        let reference_cloud = match system.variant() {
            Variant::Toral => None,
            Variant::PerturbedSkew => Some(build_inverse_empirical(
                system, &z, n_ref, region, cfg, false,
            )?),
        };
        for (i, &n) in n_list.iter().enumerate() {
            let cloud = build_inverse_empirical(system, &z, n, region, cfg, false)?;
            let rep = match &reference_cloud {
                None => fourier_discrepancy(system, &cloud, &Reference::Haar, k_max)?,
                Some(rc) => fourier_discrepancy(system, &cloud, &Reference::Cloud(rc), k_max)?,
            };
            sums[i] += rep.discrepancy;
        }
    }
    Ok(n_list
        .iter()
        .zip(&sums)
        .map(|(&n, &s)| ConvergenceRow {
            n,
            avg_discrepancy: s / num_z as f64,
            num_z,
        })
        .collect())
}

/// Samples a point of the basin: Haar on the torus for toral systems, a
/// settled point on the numerical repellor for the skew product.
pub fn sample_basin_point(
    system: &SystemSpec,
    seed: u64,
    stream: u64,
    cfg: &TreeConfig,
) -> Result<Point> {
    use rand::Rng;
    let mut rng = stream_rng(seed, stream);
    match system.variant() {
        Variant::Toral => Ok(system.random_point(&mut rng)),
        Variant::PerturbedSkew => {
            let ang = 2.0 * PI * rng.random::<f64>();
            let start = Point([
                ang.cos(),
                ang.sin(),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ]);
            crate::branches::settle_on_repellor(system, &start, 64, seed, stream + 1, &cfg.newton)
        }
    }
}

/// Mass grid over the torus chart.
#[derive(Clone, Debug)]
pub struct HistogramGrid {
    pub dim: usize,
    pub bins_per_axis: usize,
    pub masses: Vec<f64>,
}

impl HistogramGrid {
    pub fn index_of(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for i in 0..self.dim {
            flat = flat * self.bins_per_axis + idx[i];
        }
        flat
    }
}

pub fn histogram(
    system: &SystemSpec,
    cloud: &WeightedAtomCloud,
    bins_per_axis: usize,
) -> Result<HistogramGrid> {
    if bins_per_axis == 0 {
        return Err(DynError::InvalidArgument("bins_per_axis must be >= 1".into()));
    }
    let dim = system.fourier_dim();
    let mut masses = vec![0.0f64; bins_per_axis.pow(dim as u32)];
    for (p, w) in &cloud.atoms {
        let fc = system.fourier_coords(p);
        let mut flat = 0usize;
        for x in fc.iter().take(dim) {
            let b = ((x * bins_per_axis as f64).floor() as usize).min(bins_per_axis - 1);
            flat = flat * bins_per_axis + b;
        }
        masses[flat] += w;
    }
    Ok(HistogramGrid {
        dim,
        bins_per_axis,
        masses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::SystemSpec;

    fn tcfg() -> TreeConfig {
        TreeConfig::default()
    }

    #[test]
    fn doubling_depth_one_collapses_to_root() {
        // both preimages of 0 map forward onto 0, so the i = 1..n average at
        // n = 1 is the single atom at the root
        let s = SystemSpec::doubling();
        let cloud = build_inverse_empirical(
            &s,
            &Point::from_slice(&[0.0]),
            1,
            Region::FullTorus,
            &tcfg(),
            false,
        )
        .unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.atoms[0].0 .0[0], 0.0);
        assert!((cloud.atoms[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_depth_two_hand_enumeration() {
        // (1/2) delta_0 + (1/2) uniform{0, 0.5}: merged atoms 0 -> 3/4, 0.5 -> 1/4
        let s = SystemSpec::doubling();
        let cloud = build_inverse_empirical(
            &s,
            &Point::from_slice(&[0.0]),
            2,
            Region::FullTorus,
            &tcfg(),
            false,
        )
        .unwrap();
        assert_eq!(cloud.len(), 2);
        let mut m: Vec<(f64, f64)> = cloud.atoms.iter().map(|(p, w)| (p.0[0], *w)).collect();
        m.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert!((m[0].0 - 0.0).abs() < 1e-15 && (m[0].1 - 0.75).abs() < 1e-12);
        assert!((m[1].0 - 0.5).abs() < 1e-15 && (m[1].1 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn multiset_bookkeeping_identity() {
        // unpruned tree: sum over levels of (level size) x (multiplicity) = n d^n
        let s = SystemSpec::mat2122();
        let n = 5;
        let t = preimage_tree(
            &s,
            &Point::from_slice(&[0.3, 0.4]),
            n - 1,
            Region::FullTorus,
            &tcfg(),
        )
        .unwrap();
        let d = s.degree() as u128;
        let total: u128 = (0..n)
            .map(|l| t.levels[l].len() as u128 * d.pow((n - l) as u32))
            .sum();
        assert_eq!(total, n as u128 * d.pow(n as u32));
    }

    #[test]
    fn mass_is_conserved() {
        for (s, n) in [
            (SystemSpec::mat2122(), 9),
            (SystemSpec::example_product(), 5),
            (SystemSpec::skew(0.01).unwrap(), 5),
        ] {
            let z = sample_basin_point(&s, 99, 0, &tcfg()).unwrap();
            let region = Region::for_system(&s);
            for include in [false, true] {
                let cloud =
                    build_inverse_empirical(&s, &z, n, region, &tcfg(), include).unwrap();
                assert!(
                    (cloud.total_weight() - 1.0).abs() < 1e-12,
                    "mass drifted: {}",
                    cloud.total_weight()
                );
            }
        }
    }

    #[test]
    fn pushforward_levels_match_tree() {
        // the level-l sub-cloud is the uniform measure on tree level l
        let s = SystemSpec::mat2122();
        let z = Point::from_slice(&[0.125, 0.725]);
        let n = 6;
        let t = preimage_tree(&s, &z, n - 1, Region::FullTorus, &tcfg()).unwrap();
        let cloud =
            build_inverse_empirical(&s, &z, n, Region::FullTorus, &tcfg(), false).unwrap();
        let d = s.degree() as f64;
        // for a generic root no merging occurs and atom weights are 1/(n d^l)
        let mut by_weight = std::collections::BTreeMap::<u64, usize>::new();
        for (_, w) in &cloud.atoms {
            *by_weight.entry((w * 1e15).round() as u64).or_insert(0) += 1;
        }
        for l in 0..n {
            let w = 1.0 / (n as f64 * d.powi(l as i32));
            let key = (w * 1e15).round() as u64;
            assert_eq!(by_weight.get(&key), Some(&t.levels[l].len()));
        }
    }

    #[test]
    fn integrate_constant_and_characters() {
        let s = SystemSpec::doubling();
        let delta0 = WeightedAtomCloud {
            atoms: vec![(Point::from_slice(&[0.0]), 1.0)],
        };
        let one = TrigObservable::constant(1.0);
        assert!((integrate(&s, &delta0, &one).re - 1.0).abs() < 1e-15);
        let e1 = TrigObservable::character(vec![1]);
        assert!((integrate(&s, &delta0, &e1) - C64::new(1.0, 0.0)).norm() < 1e-15);
        let unif2 = WeightedAtomCloud {
            atoms: vec![
                (Point::from_slice(&[0.0]), 0.5),
                (Point::from_slice(&[0.5]), 0.5),
            ],
        };
        assert!(integrate(&s, &unif2, &e1).norm() < 1e-15);
    }

    #[test]
    fn fourier_zero_frequency_is_total_mass() {
        let s = SystemSpec::mat2122();
        let z = Point::from_slice(&[0.61, 0.17]);
        let cloud =
            build_inverse_empirical(&s, &z, 7, Region::FullTorus, &tcfg(), false).unwrap();
        let c0 = fourier_coefficient(&s, &cloud, &[0, 0]);
        assert!((c0 - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn fourier_all_matches_single_coefficients() {
        let s = SystemSpec::mat2122();
        let z = Point::from_slice(&[0.2, 0.9]);
        let cloud =
            build_inverse_empirical(&s, &z, 6, Region::FullTorus, &tcfg(), false).unwrap();
        let freqs = frequency_box(2, 2);
        let all = fourier_all(&s, &cloud, 2);
        for (k, a) in freqs.iter().zip(&all) {
            let single = fourier_coefficient(&s, &cloud, k);
            assert!((a - single).norm() < 1e-12, "mismatch at k={k:?}");
        }
    }

    #[test]
    fn discrepancy_cloud_vs_itself_is_zero() {
        let s = SystemSpec::mat2122();
        let z = Point::from_slice(&[0.33, 0.77]);
        let cloud =
            build_inverse_empirical(&s, &z, 5, Region::FullTorus, &tcfg(), false).unwrap();
        let rep = fourier_discrepancy(&s, &cloud, &Reference::Cloud(&cloud), 3).unwrap();
        assert_eq!(rep.discrepancy, 0.0);
    }

    #[test]
    fn discrepancy_triangle_inequality() {
        let s = SystemSpec::mat2122();
        let make = |x: f64, y: f64, n: usize| {
            build_inverse_empirical(
                &s,
                &Point::from_slice(&[x, y]),
                n,
                Region::FullTorus,
                &tcfg(),
                false,
            )
            .unwrap()
        };
        let a = make(0.1, 0.2, 4);
        let b = make(0.5, 0.6, 5);
        let c = make(0.9, 0.3, 6);
        let dab = fourier_discrepancy(&s, &a, &Reference::Cloud(&b), 3)
            .unwrap()
            .discrepancy;
        let dbc = fourier_discrepancy(&s, &b, &Reference::Cloud(&c), 3)
            .unwrap()
            .discrepancy;
        let dac = fourier_discrepancy(&s, &a, &Reference::Cloud(&c), 3)
            .unwrap()
            .discrepancy;
        assert!(dac <= dab + dbc + 1e-12);
    }

    #[test]
    fn haar_sample_close_to_haar() {
        // CLT scale: 10^5 uniform points vs Haar at K=3 stays under 0.02
        use rand::Rng;
        let s = SystemSpec::mat2122();
        let mut rng = stream_rng(4242, 0);
        let n = 100_000;
        let atoms: Vec<(Point, f64)> = (0..n)
            .map(|_| {
                (
                    Point::from_slice(&[rng.random::<f64>(), rng.random::<f64>()]),
                    1.0 / n as f64,
                )
            })
            .collect();
        let cloud = WeightedAtomCloud { atoms };
        let rep = fourier_discrepancy(&s, &cloud, &Reference::Haar, 3).unwrap();
        assert!(rep.discrepancy <= 0.02, "discrepancy {}", rep.discrepancy);
    }

    #[test]
    fn empty_convergence_table() {
        let s = SystemSpec::doubling();
        let rows = convergence_experiment(&s, &[2, 4], 0, 3, 1, &tcfg()).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn histogram_delta_and_merge_invariance() {
        let s = SystemSpec::mat2122();
        let delta = WeightedAtomCloud {
            atoms: vec![(Point::from_slice(&[0.0, 0.0]), 1.0)],
        };
        let h = histogram(&s, &delta, 2).unwrap();
        assert_eq!(h.masses[0], 1.0);
        assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // merging never moves mass across bins
        let dup = WeightedAtomCloud {
            atoms: vec![
                (Point::from_slice(&[0.3, 0.6]), 0.5),
                (Point::from_slice(&[0.3, 0.6]), 0.25),
                (Point::from_slice(&[0.7, 0.1]), 0.25),
            ],
        };
        let before = histogram(&s, &dup, 5).unwrap();
        let after = histogram(&s, &dup.clone().merged(2), 5).unwrap();
        assert_eq!(before.masses, after.masses);
    }

    #[test]
    fn histogram_of_haar_sample_is_flat() {
        use rand::Rng;
        let s = SystemSpec::mat2122();
        let mut rng = stream_rng(777, 0);
        let n = 100_000usize;
        let atoms: Vec<(Point, f64)> = (0..n)
            .map(|_| {
                (
                    Point::from_slice(&[rng.random::<f64>(), rng.random::<f64>()]),
                    1.0 / n as f64,
                )
            })
            .collect();
        let h = histogram(&s, &WeightedAtomCloud { atoms }, 10).unwrap();
        let p = 1.0 / 100.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for m in &h.masses {
            assert!((m - p).abs() <= 5.0 * se, "bin deviates: {m} vs {p}");
        }
    }

    #[test]
    fn real_valued_observable_validation() {
        assert!(TrigObservable::new(
            vec![(vec![1, 0], C64::new(0.5, 0.0)), (vec![-1, 0], C64::new(0.5, 0.0))],
            true
        )
        .is_ok());
        assert!(TrigObservable::new(vec![(vec![1, 0], C64::new(0.5, 0.0))], true).is_err());
        assert!(TrigObservable::new(
            vec![(vec![1, 0], C64::new(0.5, 0.0)), (vec![1, 0], C64::new(0.5, 0.0))],
            false
        )
        .is_err());
    }
}

//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the heavy inner loops fan out over rayon;
//! without it the same helpers run serially. Reductions always use a fixed
//! chunk structure, so results are bit-identical across thread counts and
//! between the two builds.

/// Fixed reduction chunk; part of the determinism contract, do not derive it
/// from the thread count.
pub const CHUNK: usize = 4096;

#[cfg(feature = "parallel")]
pub fn map_range<U: Send, F: Sync + Send + Fn(usize) -> U>(len: usize, f: F) -> Vec<U> {
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F: Fn(usize) -> U>(len: usize, f: F) -> Vec<U> {
    (0..len).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_slice<'a, T: Sync, U: Send, F: Sync + Send + Fn(&'a T) -> U>(items: &'a [T], f: F) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<'a, T, U, F: Fn(&'a T) -> U>(items: &'a [T], f: F) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Pairwise (cascade) sum. Deterministic: the reduction tree depends only on
/// the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sum of `f(i)` for `i in 0..len`, evaluated in fixed chunks (parallel when
/// enabled) and combined pairwise.
pub fn sum_indexed<F: Sync + Fn(usize) -> f64>(len: usize, f: F) -> f64 {
    let nchunks = len.div_ceil(CHUNK);
    let partials = map_range(nchunks, |c| {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(len);
        let vals: Vec<f64> = (lo..hi).map(&f).collect();
        pairwise_sum(&vals)
    });
    pairwise_sum(&partials)
}

/// Complex-pair variant of [`sum_indexed`].
pub fn sum_indexed_c<F: Sync + Fn(usize) -> (f64, f64)>(len: usize, f: F) -> (f64, f64) {
    let nchunks = len.div_ceil(CHUNK);
    let partials = map_range(nchunks, |c| {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(len);
        let mut re = Vec::with_capacity(hi - lo);
        let mut im = Vec::with_capacity(hi - lo);
        for i in lo..hi {
            let (r, j) = f(i);
            re.push(r);
            im.push(j);
        }
        (pairwise_sum(&re), pairwise_sum(&im))
    });
    let re: Vec<f64> = partials.iter().map(|p| p.0).collect();
    let im: Vec<f64> = partials.iter().map(|p| p.1).collect();
    (pairwise_sum(&re), pairwise_sum(&im))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }

    #[test]
    fn sum_indexed_is_chunk_stable() {
        // value must not depend on how many chunks the range splits into
        let a = sum_indexed(CHUNK * 3 + 17, |i| 1.0 / (1.0 + i as f64));
        let b = sum_indexed(CHUNK * 3 + 17, |i| 1.0 / (1.0 + i as f64));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

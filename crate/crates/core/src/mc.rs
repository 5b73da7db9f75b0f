//! Seeded replication with an order-independent reduction.

use rayon::prelude::*;

use crate::error::Result;

/// Seed of replication `index`, derived from `master` by a splitmix64 step.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `f(index, seed)` for every replication on the rayon pool, results in index order.
pub fn replicate<T, F>(n: usize, master: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(|i| f(i, split_seed(master, i as u64)))
        .collect()
}

/// Same as [`replicate`] on the calling thread.
pub fn replicate_serial<T, F>(n: usize, master: u64, f: F) -> Result<Vec<T>>
where
    F: Fn(usize, u64) -> Result<T>,
{
    (0..n).map(|i| f(i, split_seed(master, i as u64))).collect()
}

/// Pairwise summation in a fixed tree order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
}

impl SampleStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                variance: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = pairwise_sum(xs) / n as f64;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let variance = if n > 1 {
            pairwise_sum(&dev) / (n as f64 - 1.0)
        } else {
            0.0
        };
        Self {
            n,
            mean,
            variance,
            stderr: (variance / n as f64).sqrt(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..1000).map(|i| split_seed(42, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 1000);
        assert_eq!(split_seed(42, 7), a[7]);
        assert_ne!(split_seed(43, 7), a[7]);
    }

    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let f = |i: usize, seed: u64| -> Result<f64> { Ok(((seed % 1000) as f64).sqrt() / (i + 1) as f64) };
        let par = replicate(5000, 9, f).unwrap();
        let ser = replicate_serial(5000, 9, f).unwrap();
        assert_eq!(par, ser);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let threaded = pool.install(|| replicate(5000, 9, f).unwrap());
        assert_eq!(pairwise_sum(&threaded).to_bits(), pairwise_sum(&ser).to_bits());
    }

    #[test]
    fn stats_of_known_sample() {
        let s = SampleStats::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pairwise_sum_is_accurate() {
        let xs = vec![0.1; 1 << 20];
        assert!((pairwise_sum(&xs) - 104857.6).abs() < 1e-8);
    }
}

//! Reduction of per-token hidden states to a single text embedding.
//!
//! Every strategy is a convex combination `h = Σ_j α_j h_j` over the `l`
//! positions of a sequence:
//!
//! - `last`: `α_l = 1`, all others 0.
//! - `mean`: `α_j = 1 / l`.
//! - `weighted-mean`: `α_j = j / Σ_{k=1}^{l} k` with 1-based positions, so later
//!   tokens weigh more.
//!
//! Accumulation happens in `f64`; the result is rounded to `f32` once.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingStrategy {
    Last,
    Mean,
    WeightedMean,
}

impl PoolingStrategy {
    pub const ALL: [PoolingStrategy; 3] = [Self::Last, Self::Mean, Self::WeightedMean];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Last => "last",
            Self::Mean => "mean",
            Self::WeightedMean => "weighted-mean",
        }
    }

    /// Position weights `α_1..α_l` for a sequence of length `len`.
    pub fn weights(self, len: usize) -> Vec<f64> {
        match self {
            Self::Last => {
                let mut w = vec![0.0; len];
                if let Some(last) = w.last_mut() {
                    *last = 1.0;
                }
                w
            }
            Self::Mean => vec![1.0 / len as f64; len],
            Self::WeightedMean => {
                let total = len as f64 * (len as f64 + 1.0) / 2.0;
                (1..=len).map(|j| j as f64 / total).collect()
            }
        }
    }
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Self::Last),
            "mean" => Ok(Self::Mean),
            "weighted-mean" | "weighted_mean" => Ok(Self::WeightedMean),
            other => Err(Error::InvalidArgument(format!(
                "unknown pooling strategy {other:?} (expected last, mean or weighted-mean)"
            ))),
        }
    }
}

/// Pools `len` consecutive rows of width `dim` taken from `rows`.
fn pool_slice(rows: &[f32], dim: usize, strategy: PoolingStrategy) -> Vec<f32> {
    let len = rows.len() / dim;
    let mut acc = vec![0.0f64; dim];
    for (alpha, row) in strategy
        .weights(len)
        .into_iter()
        .zip(rows.chunks_exact(dim))
    {
        if alpha == 0.0 {
            continue;
        }
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += alpha * x as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Pools the hidden states of one sequence (one row per position).
pub fn pool(hidden_states: &EmbeddingMatrix, strategy: PoolingStrategy) -> Vec<f32> {
    pool_slice(hidden_states.data(), hidden_states.dim(), strategy)
}

/// Pools a dump that concatenates the hidden states of several sequences.
/// `lengths[i]` is the number of rows belonging to sequence `i`.
pub fn pool_segments(
    hidden_states: &EmbeddingMatrix,
    lengths: &[usize],
    strategy: PoolingStrategy,
) -> Result<EmbeddingMatrix> {
    let total: usize = lengths.iter().sum();
    if total != hidden_states.rows() {
        return Err(Error::CountMismatch {
            what: "hidden-state row",
            expected: total,
            actual: hidden_states.rows(),
        });
    }
    if lengths.contains(&0) {
        return Err(Error::Validation("cannot pool an empty sequence".into()));
    }
    let dim = hidden_states.dim();
    let mut data = Vec::with_capacity(lengths.len() * dim);
    let mut start = 0;
    for &len in lengths {
        let rows = &hidden_states.data()[start * dim..(start + len) * dim];
        data.extend(pool_slice(rows, dim, strategy));
        start += len;
    }
    EmbeddingMatrix::new(lengths.len(), dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn last_picks_final_row() {
        let h = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(pool(&h, PoolingStrategy::Last), vec![5.0, 6.0]);
    }

    #[test]
    fn mean_of_two_rows() {
        let h = m(&[&[1.0, 0.0], &[3.0, 0.0]]);
        assert_eq!(pool(&h, PoolingStrategy::Mean), vec![2.0, 0.0]);
    }

    #[test]
    fn weighted_mean_uses_one_based_positions() {
        // (1/3)(1,0) + (2/3)(4,3) = (3,2)
        let h = m(&[&[1.0, 0.0], &[4.0, 3.0]]);
        let out = pool(&h, PoolingStrategy::WeightedMean);
        assert!(
            (out[0] - 3.0).abs() < 1e-6 && (out[1] - 2.0).abs() < 1e-6,
            "{out:?}"
        );
    }

    // Neumaier summation, so the check measures the weights rather than the
    // rounding of a naive running sum.
    fn compensated_sum(xs: &[f64]) -> f64 {
        let (mut sum, mut c) = (0.0f64, 0.0f64);
        for &x in xs {
            let t = sum + x;
            c += if sum.abs() >= x.abs() {
                (sum - t) + x
            } else {
                (x - t) + sum
            };
            sum = t;
        }
        sum + c
    }

    #[test]
    fn weights_sum_to_one() {
        for len in [1, 2, 7, 1000, 100_000] {
            assert_eq!(PoolingStrategy::Last.weights(len).iter().sum::<f64>(), 1.0);
            for s in [PoolingStrategy::Mean, PoolingStrategy::WeightedMean] {
                let sum = compensated_sum(&s.weights(len));
                assert!((sum - 1.0).abs() < 1e-12, "{s} len={len} sum={sum}");
            }
        }
    }

    #[test]
    fn permutation_sensitivity() {
        let a = m(&[&[1.0, 0.0], &[0.0, 3.0]]);
        let b = m(&[&[0.0, 3.0], &[1.0, 0.0]]);
        assert_eq!(
            pool(&a, PoolingStrategy::Mean),
            pool(&b, PoolingStrategy::Mean)
        );
        assert_ne!(
            pool(&a, PoolingStrategy::Last),
            pool(&b, PoolingStrategy::Last)
        );
        assert_ne!(
            pool(&a, PoolingStrategy::WeightedMean),
            pool(&b, PoolingStrategy::WeightedMean)
        );
    }

    #[test]
    fn segments() {
        let h = m(&[&[1.0], &[3.0], &[10.0]]);
        let out = pool_segments(&h, &[2, 1], PoolingStrategy::Mean).unwrap();
        assert_eq!(out.data(), &[2.0, 10.0]);
        assert!(pool_segments(&h, &[2, 2], PoolingStrategy::Mean).is_err());
        assert!(pool_segments(&h, &[3, 0], PoolingStrategy::Mean).is_err());
    }

    #[test]
    fn parse_names() {
        for s in PoolingStrategy::ALL {
            assert_eq!(s.as_str().parse::<PoolingStrategy>().unwrap(), s);
        }
        assert!("max".parse::<PoolingStrategy>().is_err());
    }

    proptest! {
        #[test]
        fn pooling_is_linear(
            len in 1usize..12,
            dim in 1usize..6,
            a in -4.0f64..4.0,
            b in -4.0f64..4.0,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = len * dim;
            let h1: Vec<f32> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let h2: Vec<f32> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let mix: Vec<f32> = h1.iter().zip(&h2).map(|(&x, &y)| (a * x as f64 + b * y as f64) as f32).collect();
            let m1 = EmbeddingMatrix::new(len, dim, h1).unwrap();
            let m2 = EmbeddingMatrix::new(len, dim, h2).unwrap();
            let mm = EmbeddingMatrix::new(len, dim, mix).unwrap();
            for s in PoolingStrategy::ALL {
                let (p1, p2, pm) = (pool(&m1, s), pool(&m2, s), pool(&mm, s));
                for i in 0..dim {
                    let expect = a * p1[i] as f64 + b * p2[i] as f64;
                    let scale = (a.abs() * p1[i].abs() as f64 + b.abs() * p2[i].abs() as f64).max(1.0);
                    prop_assert!((pm[i] as f64 - expect).abs() <= 1e-6 * scale,
                        "{} dim {}: {} vs {}", s, i, pm[i], expect);
                }
            }
        }
    }
}

//! Singular-vector analysis of embedding collections.
//!
//! The basis `U = [u_1 .. u_d]` holds the right singular vectors of the raw
//! (uncentred) `|D| x d` embedding matrix, ordered by descending singular
//! value. Signs are pinned so that `Σ_i h_i · u_j >= 0` over the fitting data;
//! when that sum vanishes the largest-magnitude coordinate of `u_j` is made
//! positive instead.
//!
//! With a basis fitted on base-model embeddings `h_i`, the variation spectrum
//! of a tuned embedder is `v_j = mean_i (ĥ_i - h_i) · u_j`. An embedding splits
//! into `h = (u_1·h) u_1 + h_rest`, and its token logits split the same way.
//!
//! All arithmetic is `f64`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::alignment::top_k;
use crate::error::{Error, Result};
use crate::io::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    dim: usize,
    /// Column-major: `u_j` is `vectors[j*dim..(j+1)*dim]`.
    vectors: Vec<f64>,
    singular_values: Vec<f64>,
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SpectralBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `u_j`, 0-based (`component(0)` is the first principal component).
    pub fn component(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.dim..(j + 1) * self.dim]
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Coordinates `u_j · h` for every `j`.
    pub fn project(&self, h: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|j| dot64(self.component(j), h)).collect()
    }

    /// `Σ_j c_j u_j`.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (j, &c) in coords.iter().enumerate() {
            for (o, &u) in out.iter_mut().zip(self.component(j)) {
                *o += c * u;
            }
        }
        out
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: len,
            });
        }
        Ok(())
    }
}

fn to_dmatrix(m: &EmbeddingMatrix) -> DMatrix<f64> {
    DMatrix::from_row_iterator(m.rows(), m.dim(), m.data().iter().map(|&x| x as f64))
}

/// Fits the singular-vector basis of `embeddings` (one row per text).
pub fn svd_basis(embeddings: &EmbeddingMatrix) -> Result<SpectralBasis> {
    if embeddings.rows() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 embeddings to fit a basis, got {}",
            embeddings.rows()
        )));
    }
    if embeddings.data().iter().all(|&x| x == 0.0) {
        return Err(Error::Degenerate("all embeddings are zero".into()));
    }
    let d = embeddings.dim();
    let h = to_dmatrix(embeddings);
    // The eigenvectors of HᵀH are the right singular vectors of H, with
    // eigenvalues σ². Unlike a thin SVD this always yields all d directions.
    let gram = h.tr_mul(&h);
    let eig = SymmetricEigen::try_new(gram, f64::EPSILON, 0)
        .ok_or_else(|| Error::Degenerate("eigendecomposition did not converge".into()))?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let column_sum: Vec<f64> = (0..d).map(|c| h.column(c).sum()).collect();
    let scale: f64 = h.row_iter().map(|r| r.norm()).sum();
    let tol = 1e-12 * scale;

    let mut vectors = Vec::with_capacity(d * d);
    let mut singular_values = Vec::with_capacity(d);
    for &j in &order {
        let mut u: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let norm = dot64(&u, &u).sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        let s = dot64(&column_sum, &u);
        let flip = if s.abs() > tol {
            s < 0.0
        } else {
            let pivot =
                u.iter().enumerate().fold(
                    0,
                    |best, (i, x)| if x.abs() > u[best].abs() { i } else { best },
                );
            u[pivot] < 0.0
        };
        if flip {
            u.iter_mut().for_each(|x| *x = -*x);
        }
        vectors.extend(u);
        singular_values.push(eig.eigenvalues[j].max(0.0).sqrt());
    }
    Ok(SpectralBasis {
        dim: d,
        vectors,
        singular_values,
    })
}

/// Mean projected change per principal direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationSpectrum {
    pub v: Vec<f64>,
}

pub fn component_variation(
    base: &EmbeddingMatrix,
    tuned: &EmbeddingMatrix,
    basis: &SpectralBasis,
) -> Result<VariationSpectrum> {
    if base.rows() != tuned.rows() {
        return Err(Error::CountMismatch {
            what: "tuned embedding",
            expected: base.rows(),
            actual: tuned.rows(),
        });
    }
    if base.dim() != tuned.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            actual: tuned.dim(),
        });
    }
    basis.check_dim(base.dim())?;
    // mean of projections == projection of the mean difference
    let mut mean = vec![0.0f64; base.dim()];
    for (b, t) in base.iter_rows().zip(tuned.iter_rows()) {
        for ((m, &x), &y) in mean.iter_mut().zip(b).zip(t) {
            *m += y as f64 - x as f64;
        }
    }
    let n = base.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(VariationSpectrum {
        v: basis.project(&mean),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenContribution {
    pub token_id: u32,
    /// `C = e_t · h`
    pub total: f64,
    /// `e_t · h_1st`
    pub first: f64,
    /// `e_t · h_rest`
    pub rest: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContributionSplit {
    /// Top-K tokens by total logit, in aligned order.
    pub tokens: Vec<TokenContribution>,
}

fn logits64(h: &[f64], token_embeddings: &EmbeddingMatrix) -> Vec<f64> {
    token_embeddings
        .iter_rows()
        .map(|e| e.iter().zip(h).map(|(&a, &b)| a as f64 * b).sum())
        .collect()
}

/// Splits the logits of the top-K aligned tokens of `h` into the part due to
/// the first principal component and the part due to the rest.
pub fn decompose_contribution(
    h: &[f32],
    basis: &SpectralBasis,
    token_embeddings: &EmbeddingMatrix,
    k: usize,
) -> Result<ContributionSplit> {
    basis.check_dim(h.len())?;
    basis.check_dim(token_embeddings.dim())?;
    if k > token_embeddings.rows() {
        return Err(Error::InvalidArgument(format!(
            "K = {k} exceeds vocabulary size L = {}",
            token_embeddings.rows()
        )));
    }
    let h: Vec<f64> = h.iter().map(|&x| x as f64).collect();
    let u1 = basis.component(0);
    let p = dot64(u1, &h);
    let first: Vec<f64> = u1.iter().map(|u| p * u).collect();
    let rest: Vec<f64> = h.iter().zip(&first).map(|(a, b)| a - b).collect();
    let total = logits64(&h, token_embeddings);
    let tokens = top_k(&total, k)
        .into_iter()
        .map(|t| {
            let e = token_embeddings.row(t as usize);
            let dot = |v: &[f64]| e.iter().zip(v).map(|(&a, &b)| a as f64 * b).sum::<f64>();
            TokenContribution {
                token_id: t,
                total: total[t as usize],
                first: dot(&first),
                rest: dot(&rest),
            }
        })
        .collect();
    Ok(ContributionSplit { tokens })
}

/// `h + λ u_1`.
pub fn adjust_first_component(h: &[f32], basis: &SpectralBasis, lambda: f64) -> Result<Vec<f64>> {
    basis.check_dim(h.len())?;
    Ok(h.iter()
        .zip(basis.component(0))
        .map(|(&x, &u)| x as f64 + lambda * u)
        .collect())
}

/// Top-K tokens of an `f64` embedding with their logits, in aligned order.
pub fn aligned_tokens(
    h: &[f64],
    token_embeddings: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<(u32, f64)>> {
    if h.len() != token_embeddings.dim() {
        return Err(Error::DimensionMismatch {
            expected: token_embeddings.dim(),
            actual: h.len(),
        });
    }
    let logits = logits64(h, token_embeddings);
    Ok(top_k(&logits, k)
        .into_iter()
        .map(|t| (t, logits[t as usize]))
        .collect())
}

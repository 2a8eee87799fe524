//! Cosine and CSLS similarity between two sets of row vectors.
//!
//! CSLS corrects the cosine between `u` and `v` by the mean cosine each of
//! them has with its `k` nearest neighbors in the other set:
//!
//! ```text
//! csls(u, v) = 2 cos(u, v) - r_V(u) - r_U(v)
//! ```
//!
//! Dense products are computed in fixed-size row blocks so that every entry
//! is produced by the same arithmetic no matter how many threads run.

use std::cmp::Ordering;

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows per block in the blocked products.
const BLOCK_ROWS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Criterion {
    Cosine,
    Csls { k: usize },
}

impl Criterion {
    pub fn csls(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("CSLS needs k >= 1".into()));
        }
        Ok(Criterion::Csls { k })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Cosine => "cosine",
            Criterion::Csls { .. } => "csls",
        }
    }
}

impl Default for Criterion {
    fn default() -> Self {
        Criterion::Csls { k: 10 }
    }
}

/// Scores between every query row and every candidate row.
#[derive(Clone, Debug)]
pub struct SimilarityMatrix {
    pub criterion: Criterion,
    pub values: Array2<f64>,
    /// `r_V(u_i)` per query row; CSLS only.
    pub query_means: Option<Vec<f64>>,
    /// `r_U(v_j)` per candidate row; CSLS only.
    pub candidate_means: Option<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Copies `m` scaled to unit rows. Fails on zero rows or non-finite norms.
pub fn normalize_rows(m: ArrayView2<'_, f64>, name: &'static str) -> Result<Array2<f64>> {
    let mut out = m.to_owned();
    for (row, mut r) in out.outer_iter_mut().enumerate() {
        let norm = r.dot(&r).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector { matrix: name, row });
        }
        r.mapv_inplace(|x| x / norm);
    }
    Ok(out)
}

/// `a · bᵀ` in fixed row blocks, in parallel over blocks.
pub(crate) fn blocked_product(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((a.nrows(), b.nrows()));
    let bt = b.t();
    out.axis_chunks_iter_mut(Axis(0), BLOCK_ROWS)
        .into_par_iter()
        .enumerate()
        .for_each(|(block, mut dst)| {
            let start = block * BLOCK_ROWS;
            let src = a.slice(s![start..start + dst.nrows(), ..]);
            general_mat_mul(1.0, &src, &bt, 0.0, &mut dst);
        });
    out
}

fn check_dims(u: &ArrayView2<'_, f64>, v: &ArrayView2<'_, f64>) -> Result<()> {
    if u.ncols() != v.ncols() {
        return Err(Error::Dimension(format!(
            "query vectors have dimension {}, candidates {}",
            u.ncols(),
            v.ncols()
        )));
    }
    Ok(())
}

/// Cosine similarity of every row of `u` with every row of `v`.
pub fn cosine_matrix(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_dims(&u, &v)?;
    let un = normalize_rows(u, "U")?;
    let vn = normalize_rows(v, "V")?;
    Ok(blocked_product(un.view(), vn.view()))
}

/// Descending by value, ascending by index on ties.
fn rank_desc(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Mean of the `k` largest values, selected by partial selection. The sum is
/// taken in rank order so the result does not depend on input order among ties.
pub fn top_k_mean(values: ArrayView1<'_, f64>, k: usize, buf: &mut Vec<(f64, usize)>) -> f64 {
    debug_assert!(k >= 1 && k <= values.len());
    buf.clear();
    buf.extend(values.iter().copied().zip(0..));
    if k < buf.len() {
        buf.select_nth_unstable_by(k - 1, rank_desc);
    }
    let top = &mut buf[..k];
    top.sort_unstable_by(rank_desc);
    top.iter().map(|(v, _)| v).sum::<f64>() / k as f64
}

fn check_k(k: usize, pool: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("neighborhood size must be >= 1".into()));
    }
    if k > pool {
        return Err(Error::NeighborhoodTooLarge { k, pool });
    }
    Ok(())
}

/// Per-row top-k mean of an already computed similarity block.
pub(crate) fn row_top_k_means(sims: ArrayView2<'_, f64>, k: usize) -> Vec<f64> {
    sims.axis_iter(Axis(0))
        .into_par_iter()
        .map_init(Vec::new, |buf, row| top_k_mean(row, k, buf))
        .collect()
}

/// Per-column top-k mean of an already computed similarity block.
pub(crate) fn col_top_k_means(sims: ArrayView2<'_, f64>, k: usize) -> Vec<f64> {
    row_top_k_means(sims.t(), k)
}

/// For each query row, mean cosine to its `k` most similar pool rows. A
/// query that also occurs in the pool is not excluded.
pub fn neighborhood_mean(
    queries: ArrayView2<'_, f64>,
    pool: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Vec<f64>> {
    check_k(k, pool.nrows())?;
    let sims = cosine_matrix(queries, pool)?;
    Ok(row_top_k_means(sims.view(), k))
}

/// CSLS scores of `u` rows against `v` rows.
pub fn csls_matrix(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, k: usize) -> Result<SimilarityMatrix> {
    check_dims(&u, &v)?;
    check_k(k, v.nrows())?;
    check_k(k, u.nrows())?;
    let cos = cosine_matrix(u, v)?;
    Ok(csls_from_cosines(cos, k))
}

/// Turns a cosine block into CSLS scores in place.
pub(crate) fn csls_from_cosines(mut cos: Array2<f64>, k: usize) -> SimilarityMatrix {
    let query_means = row_top_k_means(cos.view(), k);
    let candidate_means = col_top_k_means(cos.view(), k);
    cos.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(query_means.par_iter())
        .for_each(|(mut row, rq)| {
            for (x, rc) in row.iter_mut().zip(&candidate_means) {
                *x = 2.0 * *x - rq - rc;
            }
        });
    SimilarityMatrix {
        criterion: Criterion::Csls { k },
        values: cos,
        query_means: Some(query_means),
        candidate_means: Some(candidate_means),
    }
}

/// Scores under either criterion.
pub fn similarity_matrix(
    u: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    criterion: Criterion,
) -> Result<SimilarityMatrix> {
    match criterion {
        Criterion::Cosine => Ok(SimilarityMatrix {
            criterion,
            values: cosine_matrix(u, v)?,
            query_means: None,
            candidate_means: None,
        }),
        Criterion::Csls { k } => csls_matrix(u, v, k),
    }
}

/// Cosine of two vectors. Identical inputs give exactly 1.0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na * nb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
        a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn cosine_examples() {
        let one = array![[1.0, 0.0]];
        assert_eq!(cosine_matrix(one.view(), one.view()).unwrap(), array![[1.0]]);
        let c = cosine_matrix(one.view(), array![[0.0, 1.0]].view()).unwrap();
        assert_eq!(c[[0, 0]], 0.0);
        let c = cosine_matrix(one.view(), array![[0.6, 0.8]].view()).unwrap();
        assert!((c[[0, 0]] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        let a = array![[1.0, 0.0]];
        let b = array![[1.0, 0.0, 0.0]];
        assert!(matches!(cosine_matrix(a.view(), b.view()), Err(Error::Dimension(_))));
        let z = array![[0.0, 0.0]];
        assert!(matches!(
            cosine_matrix(a.view(), z.view()),
            Err(Error::ZeroVector { matrix: "V", row: 0 })
        ));
    }

    #[test]
    fn neighborhood_examples() {
        let q = array![[1.0, 0.0]];
        let single = array![[0.6, 0.8]];
        let r = neighborhood_mean(q.view(), single.view(), 1).unwrap();
        assert!((r[0] - 0.6).abs() < 1e-12);
        let pool = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(neighborhood_mean(q.view(), pool.view(), 1).unwrap(), vec![1.0]);
        assert_eq!(neighborhood_mean(q.view(), pool.view(), 2).unwrap(), vec![0.5]);
        assert!(matches!(
            neighborhood_mean(q.view(), pool.view(), 3),
            Err(Error::NeighborhoodTooLarge { k: 3, pool: 2 })
        ));
    }

    #[test]
    fn csls_two_by_two() {
        let u = array![[1.0, 0.0], [0.0, 1.0]];
        let v = array![[1.0, 0.0], [0.6, 0.8]];
        let m = csls_matrix(u.view(), v.view(), 1).unwrap();
        assert!(close(&m.values, &array![[0.0, -0.6], [-1.8, 0.0]], 1e-9), "{:?}", m.values);
        assert_eq!(m.query_means.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn csls_orthonormal_self() {
        let u = Array2::<f64>::eye(4);
        let m = csls_matrix(u.view(), u.view(), 1).unwrap();
        let expected = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { -2.0 });
        assert!(close(&m.values, &expected, 1e-12));
    }

    #[test]
    fn csls_role_swap() {
        let u = array![[1.0, 0.2, -0.3], [0.1, 1.0, 0.5], [0.4, -0.7, 0.2]];
        let v = array![[0.9, 0.1, 0.0], [-0.2, 0.8, 0.6]];
        let a = csls_matrix(u.view(), v.view(), 2).unwrap();
        let b = csls_matrix(v.view(), u.view(), 2).unwrap();
        assert!(close(&a.values, &b.values.t().to_owned(), 1e-12));
    }

    #[test]
    fn top_k_ties_are_ordered() {
        let v = ndarray::arr1(&[0.5, 0.9, 0.5, 0.5, 0.1]);
        let mut buf = Vec::new();
        assert!((top_k_mean(v.view(), 2, &mut buf) - 0.7).abs() < 1e-15);
        assert_eq!(buf[..2].iter().map(|x| x.1).collect::<Vec<_>>(), vec![1, 0]);
        assert!((top_k_mean(v.view(), 5, &mut buf) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cosine_identical_is_exact() {
        let a = [0.1, 0.7, -0.3, 1e-3];
        assert_eq!(cosine(&a, &a), 1.0);
    }

    #[test]
    fn blocked_product_spans_blocks() {
        let a = Array2::from_shape_fn((150, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let b = Array2::from_shape_fn((70, 5), |(i, j)| ((i * 5 + j) % 13) as f64 - 6.0);
        assert_eq!(blocked_product(a.view(), b.view()), a.dot(&b.t()));
    }
}

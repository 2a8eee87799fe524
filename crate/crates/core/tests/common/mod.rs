//! From-the-definition oracles shared by the integration tests. Nothing here
//! calls into the optimized similarity or retrieval paths.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ctxalign::corpus::{BilingualDictionary, SentencePair};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
pub fn orthogonal(rng: &mut impl Rng, d: usize) -> Array2<f64> {
    let g = gaussian(rng, d, d);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    for i in 0..d {
        let mut v: Vec<f64> = g.row(i).to_vec();
        for _ in 0..2 {
            for b in &q {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / norm).collect());
    }
    Array2::from_shape_fn((d, d), |(i, j)| q[i][j])
}

pub fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean of the k largest cosines between `x` and the pool, by full sort.
pub fn knn_mean(x: &[f64], pool: &[Vec<f64>], k: usize) -> f64 {
    let mut sims: Vec<f64> = pool.iter().map(|p| cos(x, p)).collect();
    sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sims[..k].iter().sum::<f64>() / k as f64
}

pub fn csls(u: &[Vec<f64>], v: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let r_u: Vec<f64> = u.iter().map(|x| knn_mean(x, v, k)).collect();
    let r_v: Vec<f64> = v.iter().map(|y| knn_mean(y, u, k)).collect();
    u.iter()
        .enumerate()
        .map(|(i, x)| {
            v.iter()
                .enumerate()
                .map(|(j, y)| 2.0 * cos(x, y) - r_u[i] - r_v[j])
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub enum Crit {
    Cosine,
    Csls(usize),
}

fn hits(n: usize, own: impl Fn(usize) -> f64, other: impl Fn(usize, usize) -> f64) -> f64 {
    let mut count = 0;
    for i in 0..n {
        let best = (0..n)
            .filter(|&j| j != i)
            .map(|j| other(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        if own(i) > best {
            count += 1;
        }
    }
    count as f64 / n as f64
}

/// Weak score: the translation must beat every other target.
pub fn weak(u: &[Vec<f64>], v: &[Vec<f64>], crit: Crit) -> f64 {
    let n = u.len();
    match crit {
        Crit::Cosine => hits(n, |i| cos(&u[i], &v[i]), |i, j| cos(&u[i], &v[j])),
        Crit::Csls(k) => {
            let s = csls(u, v, k);
            hits(n, |i| s[i][i], |i, j| s[i][j])
        }
    }
}

/// Strong score: the translation must beat every other source item. Under
/// CSLS the query neighborhood is taken over {v_i} ∪ U \ {u_i} and every
/// candidate's neighborhood over U.
pub fn strong(u: &[Vec<f64>], v: &[Vec<f64>], crit: Crit) -> f64 {
    let n = u.len();
    match crit {
        Crit::Cosine => hits(n, |i| cos(&u[i], &v[i]), |i, j| cos(&u[i], &u[j])),
        Crit::Csls(k) => {
            let r_query: Vec<f64> = (0..n)
                .map(|i| {
                    let pool: Vec<Vec<f64>> = (0..n)
                        .map(|j| if j == i { v[i].clone() } else { u[j].clone() })
                        .collect();
                    knn_mean(&u[i], &pool, k)
                })
                .collect();
            let r_trans: Vec<f64> = v.iter().map(|y| knn_mean(y, u, k)).collect();
            let r_same: Vec<f64> = u.iter().map(|y| knn_mean(y, u, k)).collect();
            hits(
                n,
                |i| 2.0 * cos(&u[i], &v[i]) - r_query[i] - r_trans[i],
                |i, j| 2.0 * cos(&u[i], &u[j]) - r_query[i] - r_same[j],
            )
        }
    }
}

/// Reference extractor: applies the three emission rules literally.
/// Returns (sentence_id, src_pos, tgt_pos) in (sentence, src_pos) order.
pub fn brute_extract(corpus: &[SentencePair], dict: &BilingualDictionary) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for s in corpus {
        let src: Vec<String> = s.src_tokens.iter().map(|t| t.to_lowercase()).collect();
        let tgt: Vec<String> = s.tgt_tokens.iter().map(|t| t.to_lowercase()).collect();
        for (i, w) in src.iter().enumerate() {
            let Some(translations) = dict.translations(w) else { continue };
            let present: BTreeSet<&String> = tgt.iter().filter(|t| translations.contains(*t)).collect();
            if present.len() != 1 {
                continue;
            }
            let cand = present.into_iter().next().unwrap();
            let cand_positions: Vec<usize> = (0..tgt.len()).filter(|&j| &tgt[j] == cand).collect();
            let src_count = src.iter().filter(|x| *x == w).count();
            if cand_positions.len() == 1 && src_count == 1 {
                out.push((s.id, i, cand_positions[0]));
            }
        }
    }
    out
}

/// Golden pair-file text, written field by field without serde.
pub fn golden_jsonl(corpus: &[SentencePair], found: &[(usize, usize, usize)]) -> String {
    let by_id: BTreeMap<usize, &SentencePair> = corpus.iter().map(|s| (s.id, s)).collect();
    let esc = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
    let mut out = String::new();
    for (pid, (sid, i, j)) in found.iter().enumerate() {
        let s = by_id[sid];
        out.push_str(&format!(
            "{{\"pair_id\":{pid},\"sentence_id\":{sid},\"src_pos\":{i},\"tgt_pos\":{j},\"src_word\":\"{}\",\"tgt_word\":\"{}\"}}\n",
            esc(&s.src_tokens[*i]),
            esc(&s.tgt_tokens[*j])
        ));
    }
    out
}

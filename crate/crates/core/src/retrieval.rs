//! Weak and strong nearest-neighbor retrieval scores, per layer, over
//! repeated seeded samples of translated pairs.
//!
//! For sampled pairs `(u_i, v_i)`:
//! - weak: `v_i` must beat every other `v_j` as a neighbor of `u_i`;
//! - strong: `v_i` must beat every other `u_j`, i.e. same-language items.
//!
//! Both comparisons are strict, so exact ties are failures.

use std::collections::BTreeMap;

use log::warn;
use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::AnchoredPair;
use crate::similarity::{blocked_product, col_top_k_means, normalize_rows, top_k_mean, Criterion};
use crate::stats::{summarize, Summary};
use crate::store::{ItemKind, LayerSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n: usize,
    pub runs: usize,
    pub criterion: Criterion,
    pub seed: u64,
    pub distinct_types: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n: 5000,
            runs: 10,
            criterion: Criterion::Csls { k: 10 },
            seed: 0,
            distinct_types: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("N must be >= 2, got {}", self.n)));
        }
        if self.runs < 1 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if let Criterion::Csls { k } = self.criterion {
            if k < 1 {
                return Err(Error::Config("CSLS needs k >= 1".into()));
            }
            if k > self.n {
                return Err(Error::NeighborhoodTooLarge { k, pool: self.n });
            }
        }
        Ok(())
    }
}

/// Random stream for one run; depends only on `(seed, run_index)`.
pub fn run_rng(seed: u64, run_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index as u64);
    rng
}

/// Uniform sample of `n` distinct positions out of `count`, ascending.
pub fn sample_indices(count: usize, n: usize, seed: u64, run_index: usize) -> Result<Vec<usize>> {
    if n > count {
        return Err(Error::InfeasibleSample {
            requested: n,
            max_feasible: count,
        });
    }
    let mut rng = run_rng(seed, run_index);
    let mut picked = index::sample(&mut rng, count, n).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Samples `n` pair ids without replacement, ascending.
///
/// With `distinct_types`, type pairs `(src_type, tgt_type)` are sampled
/// uniformly and one occurrence is drawn uniformly within each, so no two
/// sampled pairs share a type pair.
pub fn sample_pairs(
    pairs: &[AnchoredPair],
    n: usize,
    distinct_types: bool,
    seed: u64,
    run_index: usize,
) -> Result<Vec<usize>> {
    if !distinct_types {
        let picked = sample_indices(pairs.len(), n, seed, run_index)?;
        let mut ids: Vec<usize> = picked.into_iter().map(|i| pairs[i].pair_id).collect();
        ids.sort_unstable();
        return Ok(ids);
    }
    let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.type_pair()).or_default().push(p.pair_id);
    }
    if n > groups.len() {
        return Err(Error::InfeasibleSample {
            requested: n,
            max_feasible: groups.len(),
        });
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let mut rng = run_rng(seed, run_index);
    let chosen = index::sample(&mut rng, groups.len(), n).into_vec();
    let mut ids: Vec<usize> = chosen
        .into_iter()
        .map(|g| {
            let members = &groups[g];
            members[rng.gen_range(0..members.len())]
        })
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Query row `query` retrieved `retrieved` instead of its translation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Miss {
    pub query: usize,
    pub retrieved: usize,
    /// The translation tied with the best competitor.
    pub tie: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreOutcome {
    pub score: f64,
    pub hits: usize,
    pub ties: usize,
    pub misses: Vec<Miss>,
}

/// Tallies one row: `own` is the score of the translation, `competitor(j)`
/// the score of the j-th competitor (j != i).
fn judge_row(i: usize, n: usize, own: f64, competitor: impl Fn(usize) -> f64) -> Option<Miss> {
    let mut best = f64::NEG_INFINITY;
    let mut best_j = usize::MAX;
    for j in (0..n).filter(|&j| j != i) {
        let s = competitor(j);
        if s > best {
            best = s;
            best_j = j;
        }
    }
    if own > best {
        None
    } else {
        Some(Miss {
            query: i,
            retrieved: best_j,
            tie: own == best,
        })
    }
}

fn tally(n: usize, rows: Vec<Option<Miss>>) -> ScoreOutcome {
    let misses: Vec<Miss> = rows.into_iter().flatten().collect();
    let ties = misses.iter().filter(|m| m.tie).count();
    let hits = n - misses.len();
    ScoreOutcome {
        score: hits as f64 / n as f64,
        hits,
        ties,
        misses,
    }
}

fn check_pair(u: &ArrayView2<'_, f64>, v: &ArrayView2<'_, f64>, criterion: Criterion) -> Result<()> {
    if u.dim() != v.dim() {
        return Err(Error::Dimension(format!(
            "U is {}x{} but V is {}x{}",
            u.nrows(),
            u.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    if u.nrows() == 0 {
        return Err(Error::Config("cannot score an empty sample".into()));
    }
    if let Criterion::Csls { k } = criterion {
        if k == 0 || k > u.nrows() {
            return Err(Error::NeighborhoodTooLarge { k, pool: u.nrows() });
        }
    }
    Ok(())
}

/// Normalized inputs and the cross-lingual cosine block, shared by both scores.
struct Prepared {
    un: Array2<f64>,
    cross: Array2<f64>,
}

impl Prepared {
    fn new(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, criterion: Criterion) -> Result<Self> {
        check_pair(&u, &v, criterion)?;
        let un = normalize_rows(u, "U")?;
        let vn = normalize_rows(v, "V")?;
        let cross = blocked_product(un.view(), vn.view());
        Ok(Prepared { un, cross })
    }

    fn n(&self) -> usize {
        self.un.nrows()
    }

    fn weak(&self, criterion: Criterion) -> ScoreOutcome {
        let n = self.n();
        let c = &self.cross;
        let rows: Vec<_> = match criterion {
            Criterion::Cosine => c
                .axis_iter(Axis(0))
                .into_par_iter()
                .enumerate()
                .map(|(i, row)| judge_row(i, n, row[i], |j| row[j]))
                .collect(),
            Criterion::Csls { k } => {
                let rq = crate::similarity::row_top_k_means(c.view(), k);
                let rc = col_top_k_means(c.view(), k);
                c.axis_iter(Axis(0))
                    .into_par_iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let s = |j: usize| 2.0 * row[j] - rq[i] - rc[j];
                        judge_row(i, n, s(i), s)
                    })
                    .collect()
            }
        };
        tally(n, rows)
    }

    fn strong(&self, criterion: Criterion) -> ScoreOutcome {
        let n = self.n();
        let same = blocked_product(self.un.view(), self.un.view());
        let c = &self.cross;
        let rows: Vec<_> = match criterion {
            Criterion::Cosine => same
                .axis_iter(Axis(0))
                .into_par_iter()
                .enumerate()
                .map(|(i, row)| judge_row(i, n, c[[i, i]], |j| row[j]))
                .collect(),
            Criterion::Csls { k } => {
                // Candidate-side corrections: translations against U, and
                // same-language competitors against U.
                let r_trans = col_top_k_means(c.view(), k);
                let r_same = col_top_k_means(same.view(), k);
                same.axis_iter(Axis(0))
                    .into_par_iter()
                    .enumerate()
                    .map_init(Vec::new, |buf, (i, row)| {
                        // Query pool is {v_i} ∪ U \ {u_i}.
                        let mut pool = row.to_owned();
                        pool[i] = c[[i, i]];
                        let rq = top_k_mean(pool.view(), k, buf);
                        let own = 2.0 * c[[i, i]] - rq - r_trans[i];
                        judge_row(i, n, own, |j| 2.0 * row[j] - rq - r_same[j])
                    })
                    .collect()
            }
        };
        tally(n, rows)
    }
}

/// Fraction of rows whose translation is the strict nearest neighbor among `V`.
pub fn score_weak(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, criterion: Criterion) -> Result<ScoreOutcome> {
    Ok(Prepared::new(u, v, criterion)?.weak(criterion))
}

/// Fraction of rows whose translation strictly beats every other row of `U`.
pub fn score_strong(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, criterion: Criterion) -> Result<ScoreOutcome> {
    Ok(Prepared::new(u, v, criterion)?.strong(criterion))
}

/// Both scores from one normalization and one cross-lingual product.
pub fn score_both(
    u: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    criterion: Criterion,
) -> Result<(ScoreOutcome, ScoreOutcome)> {
    let prepared = Prepared::new(u, v, criterion)?;
    Ok((prepared.weak(criterion), prepared.strong(criterion)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Weak,
    Strong,
}

/// A retrieval mistake, in item ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub layer: usize,
    pub run: usize,
    pub metric: Metric,
    pub pair_id: usize,
    pub retrieved_id: usize,
    /// Side the wrongly retrieved item came from.
    pub retrieved_side: crate::store::Side,
    pub tie: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
    pub runs: Vec<f64>,
}

impl ScoreSummary {
    fn from_runs(runs: Vec<f64>) -> Self {
        let Summary { mean, std, ci95, .. } = summarize(&runs);
        ScoreSummary { mean, std, ci95, runs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub weak: ScoreSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strong: Option<ScoreSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub kind: ItemKind,
    pub config: EvalConfig,
    pub layers: Vec<LayerReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureRecord>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub strong: bool,
    pub record_failures: bool,
}

pub(crate) fn check_compatible(src: &dyn LayerSource, tgt: &dyn LayerSource) -> Result<()> {
    let (a, b) = (src.manifest(), tgt.manifest());
    if a.num_layers != b.num_layers {
        return Err(Error::Dimension(format!(
            "source set has {} layers, target set {}",
            a.num_layers, b.num_layers
        )));
    }
    if a.dim != b.dim {
        return Err(Error::Dimension(format!(
            "source set has dimension {}, target set {}",
            a.dim, b.dim
        )));
    }
    if a.kind != b.kind {
        return Err(Error::Config(format!(
            "item kinds differ: {} vs {}",
            a.kind.as_str(),
            b.kind.as_str()
        )));
    }
    Ok(())
}

fn all_rows_identical(m: &Array2<f64>) -> bool {
    let first = m.row(0);
    m.outer_iter().all(|r| r == first)
}

fn gather(layer: &Array2<f32>, rows: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), layer.ncols()), |(i, c)| layer[[rows[i], c]] as f64)
}

/// Per-run samples expressed as item ids together with their rows in each set.
pub(crate) struct RunSample {
    pub ids: Vec<usize>,
    pub src_rows: Vec<usize>,
    pub tgt_rows: Vec<usize>,
}

pub(crate) fn locate(
    ids: Vec<usize>,
    src: &dyn LayerSource,
    tgt: &dyn LayerSource,
) -> Result<RunSample> {
    let find = |set: &dyn LayerSource, side: &str, id: usize| {
        set.row_index().row_of(id).ok_or_else(|| {
            Error::Embedding(format!("item {id} is missing from the {side} embedding set"))
        })
    };
    let src_rows = ids.iter().map(|&id| find(src, "source", id)).collect::<Result<_>>()?;
    let tgt_rows = ids.iter().map(|&id| find(tgt, "target", id)).collect::<Result<_>>()?;
    Ok(RunSample {
        ids,
        src_rows,
        tgt_rows,
    })
}

/// Scores every layer for prepared run samples.
pub(crate) fn evaluate_samples(
    src: &dyn LayerSource,
    tgt: &dyn LayerSource,
    samples: &[RunSample],
    config: &EvalConfig,
    options: EvalOptions,
) -> Result<RetrievalReport> {
    check_compatible(src, tgt)?;
    let mut layers = Vec::with_capacity(src.num_layers());
    let mut failures = Vec::new();
    for layer in 0..src.num_layers() {
        let src_m = src.layer(layer)?;
        let tgt_m = tgt.layer(layer)?;
        let mut weak_runs = Vec::with_capacity(samples.len());
        let mut strong_runs = Vec::with_capacity(samples.len());
        let mut warnings = Vec::new();
        for (run, sample) in samples.iter().enumerate() {
            let u = gather(&src_m, &sample.src_rows);
            let v = gather(&tgt_m, &sample.tgt_rows);
            if all_rows_identical(&u) || all_rows_identical(&v) {
                let msg = format!(
                    "layer {layer} run {run}: all sampled vectors on one side are identical; every comparison ties"
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            let prepared = Prepared::new(u.view(), v.view(), config.criterion)?;
            let weak = prepared.weak(config.criterion);
            let strong = options.strong.then(|| prepared.strong(config.criterion));
            for (metric, outcome) in [(Metric::Weak, Some(&weak)), (Metric::Strong, strong.as_ref())] {
                let Some(outcome) = outcome else { continue };
                if outcome.ties > 0 {
                    let msg = format!(
                        "layer {layer} run {run}: {} {} ties counted as failures",
                        outcome.ties,
                        match metric {
                            Metric::Weak => "weak",
                            Metric::Strong => "strong",
                        }
                    );
                    warn!("{msg}");
                    warnings.push(msg);
                }
                if options.record_failures {
                    failures.extend(outcome.misses.iter().map(|m| FailureRecord {
                        layer,
                        run,
                        metric,
                        pair_id: sample.ids[m.query],
                        retrieved_id: sample.ids[m.retrieved],
                        retrieved_side: match metric {
                            Metric::Weak => crate::store::Side::Tgt,
                            Metric::Strong => crate::store::Side::Src,
                        },
                        tie: m.tie,
                    }));
                }
            }
            weak_runs.push(weak.score);
            if let Some(s) = strong {
                strong_runs.push(s.score);
            }
        }
        layers.push(LayerReport {
            layer,
            weak: ScoreSummary::from_runs(weak_runs),
            strong: options.strong.then(|| ScoreSummary::from_runs(strong_runs)),
            warnings,
        });
    }
    Ok(RetrievalReport {
        kind: src.manifest().kind,
        config: config.clone(),
        layers,
        failures,
    })
}

/// Weak (and optionally strong) scores for every layer of word-level sets.
pub fn evaluate_layers(
    src: &dyn LayerSource,
    tgt: &dyn LayerSource,
    pairs: &[AnchoredPair],
    config: &EvalConfig,
    options: EvalOptions,
) -> Result<RetrievalReport> {
    config.validate()?;
    check_compatible(src, tgt)?;
    let samples = (0..config.runs)
        .map(|run| {
            let ids = sample_pairs(pairs, config.n, config.distinct_types, config.seed, run)?;
            locate(ids, src, tgt)
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_samples(src, tgt, &samples, config, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn pair(id: usize, s: &str, t: &str) -> AnchoredPair {
        AnchoredPair {
            pair_id: id,
            sentence_id: id,
            src_pos: 0,
            tgt_pos: 0,
            src_word: s.into(),
            tgt_word: t.into(),
            src_type: s.into(),
            tgt_type: t.into(),
        }
    }

    #[test]
    fn sample_exhaustive() {
        let pairs = vec![pair(0, "a", "x"), pair(1, "b", "y"), pair(2, "c", "z")];
        assert_eq!(sample_pairs(&pairs, 3, true, 7, 0).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn sample_infeasible_reports_max() {
        let pairs = vec![
            pair(0, "a", "x"),
            pair(1, "a", "x"),
            pair(2, "a", "x"),
            pair(3, "a", "x"),
            pair(4, "b", "y"),
        ];
        match sample_pairs(&pairs, 3, true, 7, 0).unwrap_err() {
            Error::InfeasibleSample { requested, max_feasible } => {
                assert_eq!((requested, max_feasible), (3, 2))
            }
            e => panic!("{e}"),
        }
        assert_eq!(sample_pairs(&pairs, 3, false, 7, 0).unwrap().len(), 3);
    }

    #[test]
    fn sample_deterministic_and_run_dependent() {
        let pairs: Vec<_> = (0..200).map(|i| pair(i, &format!("s{i}"), &format!("t{i}"))).collect();
        let a = sample_pairs(&pairs, 20, true, 42, 3).unwrap();
        assert_eq!(a, sample_pairs(&pairs, 20, true, 42, 3).unwrap());
        assert_ne!(a, sample_pairs(&pairs, 20, true, 42, 4).unwrap());
        assert_ne!(a, sample_pairs(&pairs, 20, true, 43, 3).unwrap());
    }

    #[test]
    fn weak_examples() {
        let u = array![[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]];
        assert_eq!(score_weak(u.view(), u.view(), Criterion::Cosine).unwrap().score, 1.0);

        let u = array![[1.0, 0.0], [0.0, 1.0]];
        let v = array![[1.0, 0.0], [0.6, 0.8]];
        assert_eq!(score_weak(u.view(), v.view(), Criterion::Csls { k: 1 }).unwrap().score, 1.0);

        let swapped = array![[0.0, 1.0], [1.0, 0.0]];
        let out = score_weak(u.view(), swapped.view(), Criterion::Cosine).unwrap();
        assert_eq!(out.score, 0.0);
        assert_eq!(out.misses, vec![
                Miss { query: 0, retrieved: 1, tie: false },
                Miss { query: 1, retrieved: 0, tie: false }
            ]);
    }

    #[test]
    fn strong_examples() {
        let u = Array2::<f64>::eye(3);
        assert_eq!(score_strong(u.view(), u.view(), Criterion::Cosine).unwrap().score, 1.0);

        let u = array![[1.0, 0.0], [0.99, 0.14]];
        let v = array![[0.7, 0.71], [0.71, 0.7]];
        assert_eq!(score_strong(u.view(), v.view(), Criterion::Cosine).unwrap().score, 0.0);
        assert!(score_weak(u.view(), v.view(), Criterion::Cosine).unwrap().score > 0.0);
    }

    #[test]
    fn ties_are_failures() {
        let u = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let out = score_weak(u.view(), u.view(), Criterion::Cosine).unwrap();
        assert_eq!((out.score, out.ties), (0.0, 3));
        let out = score_both(u.view(), u.view(), Criterion::Csls { k: 2 }).unwrap();
        assert_eq!((out.0.score, out.1.score), (0.0, 0.0));
    }

    #[test]
    fn shape_errors() {
        let u = array![[1.0, 0.0], [0.0, 1.0]];
        let v = array![[1.0, 0.0]];
        assert!(matches!(score_weak(u.view(), v.view(), Criterion::Cosine), Err(Error::Dimension(_))));
        assert!(matches!(
            score_weak(u.view(), u.view(), Criterion::Csls { k: 3 }),
            Err(Error::NeighborhoodTooLarge { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::default().validate().is_ok());
        assert!(EvalConfig { n: 1, ..Default::default() }.validate().is_err());
        assert!(EvalConfig { runs: 0, ..Default::default() }.validate().is_err());
    }
}

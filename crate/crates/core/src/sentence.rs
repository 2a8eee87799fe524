//! Sentence-level retrieval and the translated-vs-random CLS similarity curve.
//!
//! Sentence items go through the same weak retrieval as word items. No
//! centering is applied.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{
    check_compatible, evaluate_samples, locate, run_rng, sample_indices, EvalConfig, EvalOptions,
    RetrievalReport,
};
use crate::similarity::cosine;
use crate::stats::summarize;
use crate::store::{ItemKind, LayerSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceEvalConfig {
    pub kind: ItemKind,
    #[serde(flatten)]
    pub eval: EvalConfig,
}

/// Item ids present in both sets, ascending.
fn shared_ids(src: &dyn LayerSource, tgt: &dyn LayerSource) -> Result<Vec<usize>> {
    let ids = |set: &dyn LayerSource| -> Vec<usize> {
        let mut ids = match &set.manifest().item_ids {
            Some(ids) => ids.clone(),
            None => (0..set.manifest().num_items).collect(),
        };
        ids.sort_unstable();
        ids
    };
    let (a, b) = (ids(src), ids(tgt));
    if a != b {
        return Err(Error::Embedding(format!(
            "source and target sets cover different sentences ({} vs {} items)",
            a.len(),
            b.len()
        )));
    }
    Ok(a)
}

fn check_sentence_kind(set: &dyn LayerSource, expected: Option<ItemKind>) -> Result<()> {
    let kind = set.manifest().kind;
    if kind == ItemKind::Word {
        return Err(Error::Config("expected sentence items, found word items".into()));
    }
    if let Some(expected) = expected {
        if kind != expected {
            return Err(Error::Config(format!(
                "configured for {} items but the set holds {} items",
                expected.as_str(),
                kind.as_str()
            )));
        }
    }
    Ok(())
}

/// Weak retrieval over sampled sentences at every layer.
pub fn evaluate_sentences(
    src: &dyn LayerSource,
    tgt: &dyn LayerSource,
    config: &SentenceEvalConfig,
) -> Result<RetrievalReport> {
    config.eval.validate()?;
    check_sentence_kind(src, Some(config.kind))?;
    check_sentence_kind(tgt, Some(config.kind))?;
    check_compatible(src, tgt)?;
    let ids = shared_ids(src, tgt)?;
    let samples = (0..config.eval.runs)
        .map(|run| {
            let picked = sample_indices(ids.len(), config.eval.n, config.eval.seed, run)?;
            locate(picked.into_iter().map(|i| ids[i]).collect(), src, tgt)
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_samples(
        src,
        tgt,
        &samples,
        &config.eval,
        EvalOptions {
            strong: false,
            record_failures: false,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub layer: usize,
    pub translated_mean: f64,
    pub translated_ci95: f64,
    pub random_mean: f64,
    pub random_ci95: f64,
}

/// Per layer, mean cosine of translated sentence pairs and of `num_random`
/// random pairs, each with a 95% interval over items.
///
/// Random pairs combine `num_random` source sentences and `num_random` target
/// sentences, each drawn without replacement; the draw is the same at every layer.
pub fn cls_similarity_curve(
    src: &dyn LayerSource,
    tgt: &dyn LayerSource,
    num_random: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    check_sentence_kind(src, None)?;
    check_sentence_kind(tgt, None)?;
    check_compatible(src, tgt)?;
    let ids = shared_ids(src, tgt)?;
    if num_random == 0 {
        return Err(Error::Config("num_random must be positive".into()));
    }
    if num_random > ids.len() {
        return Err(Error::InfeasibleSample {
            requested: num_random,
            max_feasible: ids.len(),
        });
    }
    let draw = |stream: usize| {
        let mut rng = run_rng(seed, stream);
        rand::seq::index::sample(&mut rng, ids.len(), num_random).into_vec()
    };
    let (rand_src, rand_tgt) = (draw(0), draw(1));
    let src_rows: Vec<usize> = ids.iter().map(|&id| src.row_index().row_of(id).unwrap()).collect();
    let tgt_rows: Vec<usize> = ids.iter().map(|&id| tgt.row_index().row_of(id).unwrap()).collect();

    let mut curve = Vec::with_capacity(src.num_layers());
    for layer in 0..src.num_layers() {
        let (sm, tm) = (src.layer(layer)?, tgt.layer(layer)?);
        let vec_of = |m: &ndarray::Array2<f32>, row: usize| -> Vec<f64> {
            m.row(row).iter().map(|x| *x as f64).collect()
        };
        let translated: Vec<f64> = (0..ids.len())
            .map(|i| cosine(&vec_of(&sm, src_rows[i]), &vec_of(&tm, tgt_rows[i])))
            .collect();
        let random: Vec<f64> = rand_src
            .iter()
            .zip(&rand_tgt)
            .map(|(&a, &b)| cosine(&vec_of(&sm, src_rows[a]), &vec_of(&tm, tgt_rows[b])))
            .collect();
        let (t, r) = (summarize(&translated), summarize(&random));
        curve.push(CurvePoint {
            layer,
            translated_mean: t.mean,
            translated_ci95: t.ci95,
            random_mean: r.mean,
            random_ci95: r.ci95,
        });
    }
    Ok(curve)
}

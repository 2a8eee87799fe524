//! Line-delimited JSON pair files.
//!
//! One object per line with fields `pair_id, sentence_id, src_pos, tgt_pos,
//! src_word, tgt_word`, in that order. Population plans add a trailing
//! `population` field. Word types are not stored; readers recompute them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, read_lines};
use crate::error::{Error, Result};
use crate::extract::AnchoredPair;
use crate::precision::{PlannedItem, Population};

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    pair_id: usize,
    sentence_id: usize,
    src_pos: usize,
    tgt_pos: usize,
    src_word: String,
    tgt_word: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    population: Option<Population>,
}

impl PairRecord {
    fn from_pair(p: &AnchoredPair, population: Option<Population>) -> Self {
        PairRecord {
            pair_id: p.pair_id,
            sentence_id: p.sentence_id,
            src_pos: p.src_pos,
            tgt_pos: p.tgt_pos,
            src_word: p.src_word.clone(),
            tgt_word: p.tgt_word.clone(),
            population,
        }
    }

    fn into_pair(self) -> (AnchoredPair, Option<Population>) {
        let pair = AnchoredPair {
            pair_id: self.pair_id,
            sentence_id: self.sentence_id,
            src_pos: self.src_pos,
            tgt_pos: self.tgt_pos,
            src_type: normalize(&self.src_word),
            tgt_type: normalize(&self.tgt_word),
            src_word: self.src_word,
            tgt_word: self.tgt_word,
        };
        (pair, self.population)
    }
}

fn to_jsonl<'a>(records: impl Iterator<Item = PairRecord>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r).expect("pair record serializes"));
        out.push('\n');
    }
    out
}

pub fn pairs_to_jsonl(pairs: &[AnchoredPair]) -> String {
    to_jsonl(pairs.iter().map(|p| PairRecord::from_pair(p, None)))
}

pub fn items_to_jsonl(items: &[PlannedItem]) -> String {
    to_jsonl(items.iter().map(|i| PairRecord::from_pair(&i.pair, Some(i.population))))
}

fn read_records(path: &Path) -> Result<Vec<(AnchoredPair, Option<Population>)>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(path, i + 1, e.to_string()))?;
        out.push(rec.into_pair());
    }
    Ok(out)
}

/// Reads a pair file; ids must be dense and in order.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<AnchoredPair>> {
    let path = path.as_ref();
    let pairs: Vec<AnchoredPair> = read_records(path)?.into_iter().map(|(p, _)| p).collect();
    for (i, p) in pairs.iter().enumerate() {
        if p.pair_id != i {
            return Err(Error::format(
                path,
                i + 1,
                format!("pair_id {} out of sequence (expected {i})", p.pair_id),
            ));
        }
    }
    Ok(pairs)
}

/// Reads a population plan. Records without a population are `extracted`.
pub fn read_items(path: impl AsRef<Path>) -> Result<Vec<PlannedItem>> {
    Ok(read_records(path.as_ref())?
        .into_iter()
        .map(|(pair, population)| PlannedItem {
            pair,
            population: population.unwrap_or(Population::Extracted),
        })
        .collect())
}

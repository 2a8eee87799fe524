//! Dictionary-driven extraction of translated-in-context word pairs.
//!
//! A source token yields a pair only when exactly one of its dictionary
//! translations appears in the target sentence, that translation appears at a
//! single position, and the source type itself appears at a single position.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, BilingualDictionary, SentencePair};

/// A dictionary-validated word pair anchored to token positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnchoredPair {
    pub pair_id: usize,
    pub sentence_id: usize,
    pub src_pos: usize,
    pub tgt_pos: usize,
    pub src_word: String,
    pub tgt_word: String,
    pub src_type: String,
    pub tgt_type: String,
}

impl AnchoredPair {
    pub fn type_pair(&self) -> (&str, &str) {
        (&self.src_type, &self.tgt_type)
    }
}

/// Which side drives the candidate scan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Src2Tgt,
    Tgt2Src,
}

/// Why a source token did not produce a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SkipReason {
    NoEntry,
    NoCandidate,
    MultipleCandidates,
    RepeatedSource,
    RepeatedCandidate,
}

/// Per-reason counters of skipped source tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub no_entry: usize,
    pub no_candidate: usize,
    pub multiple_candidates: usize,
    pub repeated_source: usize,
    pub repeated_candidate: usize,
}

impl SkipCounts {
    fn record(&mut self, reason: SkipReason) {
        match reason {
            SkipReason::NoEntry => self.no_entry += 1,
            SkipReason::NoCandidate => self.no_candidate += 1,
            SkipReason::MultipleCandidates => self.multiple_candidates += 1,
            SkipReason::RepeatedSource => self.repeated_source += 1,
            SkipReason::RepeatedCandidate => self.repeated_candidate += 1,
        }
    }

    fn merge(mut self, other: SkipCounts) -> SkipCounts {
        self.no_entry += other.no_entry;
        self.no_candidate += other.no_candidate;
        self.multiple_candidates += other.multiple_candidates;
        self.repeated_source += other.repeated_source;
        self.repeated_candidate += other.repeated_candidate;
        self
    }

    pub fn total(&self) -> usize {
        self.no_entry
            + self.no_candidate
            + self.multiple_candidates
            + self.repeated_source
            + self.repeated_candidate
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Extraction {
    pub pairs: Vec<AnchoredPair>,
    pub skipped: SkipCounts,
}

/// Decision for the source token at `src_pos`: the target position, or the reason
/// for skipping it.
pub fn decide(
    src_types: &[String],
    tgt_types: &[String],
    src_pos: usize,
    dict: &BilingualDictionary,
) -> Result<usize, SkipReason> {
    let src_type = &src_types[src_pos];
    let translations = dict.translations(src_type).ok_or(SkipReason::NoEntry)?;
    let mut candidates: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (pos, t) in tgt_types.iter().enumerate() {
        if translations.contains(t) {
            candidates.entry(t.as_str()).or_default().push(pos);
        }
    }
    let positions = match candidates.len() {
        0 => return Err(SkipReason::NoCandidate),
        1 => candidates.into_values().next().unwrap(),
        _ => return Err(SkipReason::MultipleCandidates),
    };
    if src_types.iter().filter(|t| *t == src_type).count() > 1 {
        return Err(SkipReason::RepeatedSource);
    }
    match positions.as_slice() {
        [pos] => Ok(*pos),
        _ => Err(SkipReason::RepeatedCandidate),
    }
}

struct Found {
    sentence_id: usize,
    src_pos: usize,
    tgt_pos: usize,
}

fn scan_sentence(pair: &SentencePair, dict: &BilingualDictionary) -> (Vec<Found>, SkipCounts) {
    let src_types: Vec<String> = pair.src_tokens.iter().map(|t| normalize(t)).collect();
    let tgt_types: Vec<String> = pair.tgt_tokens.iter().map(|t| normalize(t)).collect();
    let mut found = Vec::new();
    let mut skipped = SkipCounts::default();
    for src_pos in 0..src_types.len() {
        match decide(&src_types, &tgt_types, src_pos, dict) {
            Ok(tgt_pos) => found.push(Found {
                sentence_id: pair.id,
                src_pos,
                tgt_pos,
            }),
            Err(reason) => skipped.record(reason),
        }
    }
    (found, skipped)
}

/// Extracts anchored pairs in source→target direction, ordered by
/// `(sentence_id, src_pos)` with dense pair ids.
pub fn extract_pairs(corpus: &[SentencePair], dict: &BilingualDictionary) -> Extraction {
    extract_pairs_directed(corpus, dict, Direction::Src2Tgt)
}

/// As [`extract_pairs`], optionally scanning from the target side with the
/// inverted dictionary. Emitted pairs always keep the corpus orientation.
pub fn extract_pairs_directed(
    corpus: &[SentencePair],
    dict: &BilingualDictionary,
    direction: Direction,
) -> Extraction {
    let inverted;
    let dict = match direction {
        Direction::Src2Tgt => dict,
        Direction::Tgt2Src => {
            inverted = dict.inverted();
            &inverted
        }
    };
    let per_sentence: Vec<(Vec<Found>, SkipCounts)> = corpus
        .par_iter()
        .map(|pair| match direction {
            Direction::Src2Tgt => scan_sentence(pair, dict),
            Direction::Tgt2Src => {
                let (mut found, skipped) = scan_sentence(&pair.swapped(), dict);
                for f in &mut found {
                    std::mem::swap(&mut f.src_pos, &mut f.tgt_pos);
                }
                found.sort_by_key(|f| f.src_pos);
                (found, skipped)
            }
        })
        .collect();

    let by_id: HashMap<usize, &SentencePair> = corpus.iter().map(|p| (p.id, p)).collect();
    let mut pairs = Vec::new();
    let mut skipped = SkipCounts::default();
    for (found, skips) in per_sentence {
        skipped = skipped.merge(skips);
        for f in found {
            let sentence = by_id[&f.sentence_id];
            let src_word = sentence.src_tokens[f.src_pos].clone();
            let tgt_word = sentence.tgt_tokens[f.tgt_pos].clone();
            pairs.push(AnchoredPair {
                pair_id: pairs.len(),
                sentence_id: f.sentence_id,
                src_pos: f.src_pos,
                tgt_pos: f.tgt_pos,
                src_type: normalize(&src_word),
                tgt_type: normalize(&tgt_word),
                src_word,
                tgt_word,
            });
        }
    }
    Extraction { pairs, skipped }
}

/// Summary of an extraction run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub pair_count: usize,
    pub distinct_type_pairs: usize,
    pub sentences_with_pairs: usize,
    /// pairs-per-sentence → number of sentences, over sentences with at least one pair.
    pub pairs_per_sentence: BTreeMap<usize, usize>,
}

pub fn extraction_stats(pairs: &[AnchoredPair], corpus: &[SentencePair]) -> ExtractionStats {
    let known: BTreeSet<usize> = corpus.iter().map(|p| p.id).collect();
    let mut per_sentence: BTreeMap<usize, usize> = BTreeMap::new();
    for p in pairs {
        debug_assert!(known.contains(&p.sentence_id));
        *per_sentence.entry(p.sentence_id).or_default() += 1;
    }
    let mut histogram = BTreeMap::new();
    for count in per_sentence.values() {
        *histogram.entry(*count).or_default() += 1;
    }
    let distinct: BTreeSet<(&str, &str)> = pairs.iter().map(|p| p.type_pair()).collect();
    ExtractionStats {
        pair_count: pairs.len(),
        distinct_type_pairs: distinct.len(),
        sentences_with_pairs: per_sentence.len(),
        pairs_per_sentence: histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn sentence(id: usize, src: &str, tgt: &str) -> SentencePair {
        SentencePair {
            id,
            src_lang: "fr".into(),
            tgt_lang: "en".into(),
            src_tokens: tokenize(src),
            tgt_tokens: tokenize(tgt),
            src_raw: src.into(),
            tgt_raw: tgt.into(),
        }
    }

    fn dict(entries: &[(&str, &str)]) -> BilingualDictionary {
        let mut d = BilingualDictionary::new("fr", "en");
        for (s, t) in entries {
            d.insert(s, t);
        }
        d
    }

    #[test]
    fn figure_example() {
        let corpus = vec![sentence(0, "La voiture est rapide.", "The car is fast.")];
        let d = dict(&[("rapide", "fast"), ("rapide", "quick")]);
        let ex = extract_pairs(&corpus, &d);
        assert_eq!(ex.pairs.len(), 1);
        let p = &ex.pairs[0];
        assert_eq!((p.src_pos, p.tgt_pos), (3, 3));
        assert_eq!((p.src_word.as_str(), p.tgt_word.as_str()), ("rapide", "fast"));
        assert_eq!(ex.skipped.no_entry, 4);
    }

    #[test]
    fn two_candidates_present() {
        let corpus = vec![sentence(0, "La voiture est rapide.", "The quick car is fast.")];
        let d = dict(&[("rapide", "fast"), ("rapide", "quick")]);
        let ex = extract_pairs(&corpus, &d);
        assert!(ex.pairs.is_empty());
        assert_eq!(ex.skipped.multiple_candidates, 1);
    }

    #[test]
    fn repeated_candidate() {
        let corpus = vec![sentence(0, "La voiture est rapide.", "fast cars are fast.")];
        let ex = extract_pairs(&corpus, &dict(&[("rapide", "fast")]));
        assert!(ex.pairs.is_empty());
        assert_eq!(ex.skipped.repeated_candidate, 1);
    }

    #[test]
    fn repeated_source() {
        let corpus = vec![sentence(0, "rapide et rapide", "fast and quick")];
        let ex = extract_pairs(&corpus, &dict(&[("rapide", "fast")]));
        assert!(ex.pairs.is_empty());
        assert_eq!(ex.skipped.repeated_source, 2);
    }

    #[test]
    fn case_folded_lookup_keeps_surface_form() {
        let corpus = vec![sentence(0, "Die Köpfe", "The Heads")];
        let mut d = BilingualDictionary::new("de", "en");
        d.insert("köpfe", "heads");
        let ex = extract_pairs(&corpus, &d);
        assert_eq!(ex.pairs[0].src_word, "Köpfe");
        assert_eq!(ex.pairs[0].tgt_word, "Heads");
        assert_eq!(ex.pairs[0].tgt_type, "heads");
    }

    #[test]
    fn reverse_direction_keeps_orientation() {
        let corpus = vec![sentence(0, "un chat noir", "a black cat")];
        let d = dict(&[("chat", "cat"), ("noir", "black")]);
        let fwd = extract_pairs_directed(&corpus, &d, Direction::Src2Tgt);
        let rev = extract_pairs_directed(&corpus, &d, Direction::Tgt2Src);
        assert_eq!(fwd.pairs, rev.pairs);
        assert_eq!(rev.pairs[0].src_word, "chat");
    }

    #[test]
    fn stats() {
        assert_eq!(extraction_stats(&[], &[]), ExtractionStats::default());
        let corpus = vec![
            sentence(0, "chat noir", "cat black"),
            sentence(1, "chien", "dog"),
        ];
        let d = dict(&[("chat", "cat"), ("noir", "black"), ("chien", "dog")]);
        let ex = extract_pairs(&corpus, &d);
        let s = extraction_stats(&ex.pairs, &corpus);
        assert_eq!(s.pair_count, 3);
        assert_eq!(s.pairs_per_sentence, BTreeMap::from([(1, 1), (2, 1)]));
        assert_eq!(s.distinct_type_pairs, 3);
    }
}

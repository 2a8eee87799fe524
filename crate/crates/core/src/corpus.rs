//! Parallel corpus and bilingual dictionary ingestion.
//!
//! Corpora are two line-aligned UTF-8 files. Dictionaries use the MUSE text
//! layout: one whitespace-separated `source target` pair per line.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A gold-translated sentence pair with tokenized surface forms.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    /// 0-based line index in the original files.
    pub id: usize,
    pub src_lang: String,
    pub tgt_lang: String,
    pub src_tokens: Vec<String>,
    pub tgt_tokens: Vec<String>,
    pub src_raw: String,
    pub tgt_raw: String,
}

impl SentencePair {
    /// Same sentence with the two sides exchanged.
    pub fn swapped(&self) -> SentencePair {
        SentencePair {
            id: self.id,
            src_lang: self.tgt_lang.clone(),
            tgt_lang: self.src_lang.clone(),
            src_tokens: self.tgt_tokens.clone(),
            tgt_tokens: self.src_tokens.clone(),
            src_raw: self.tgt_raw.clone(),
            tgt_raw: self.src_raw.clone(),
        }
    }
}

/// Multimap from normalized source word types to normalized target types.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BilingualDictionary {
    pub src_lang: String,
    pub tgt_lang: String,
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl BilingualDictionary {
    pub fn new(src_lang: impl Into<String>, tgt_lang: impl Into<String>) -> Self {
        BilingualDictionary {
            src_lang: src_lang.into(),
            tgt_lang: tgt_lang.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Adds one translation; both words are normalized first.
    pub fn insert(&mut self, src: &str, tgt: &str) {
        self.entries
            .entry(normalize(src))
            .or_default()
            .insert(normalize(tgt));
    }

    /// Removes every translation of a source type.
    pub fn remove(&mut self, src_type: &str) -> Option<BTreeSet<String>> {
        self.entries.remove(src_type)
    }

    /// Translations of an already normalized source type.
    pub fn translations(&self, src_type: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(src_type)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The target→source dictionary.
    pub fn inverted(&self) -> BilingualDictionary {
        let mut inv = BilingualDictionary::new(self.tgt_lang.clone(), self.src_lang.clone());
        for (src, tgts) in &self.entries {
            for tgt in tgts {
                inv.entries.entry(tgt.clone()).or_default().insert(src.clone());
            }
        }
        inv
    }
}

/// Maps a surface token to its word type: Unicode lowercasing, nothing else.
pub fn normalize(word: &str) -> String {
    word.to_lowercase()
}

fn is_edge_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Whitespace split, then every leading and trailing non-alphanumeric
/// character becomes its own token. Interior characters stay attached.
pub fn tokenize(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in line.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let lead = chars.iter().take_while(|c| is_edge_punct(**c)).count();
        if lead == chars.len() {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let trail = chars.iter().rev().take_while(|c| is_edge_punct(**c)).count();
        out.extend(chars[..lead].iter().map(|c| c.to_string()));
        out.push(chars[lead..chars.len() - trail].iter().collect());
        out.extend(chars[chars.len() - trail..].iter().map(|c| c.to_string()));
    }
    out
}

/// Reads a file as UTF-8 lines, reporting the first invalid line (1-based).
pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    body.split(|b| *b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            String::from_utf8(raw.to_vec()).map_err(|_| Error::Encoding {
                path: path.to_path_buf(),
                line: i + 1,
            })
        })
        .collect()
}

/// Loads a line-aligned parallel corpus.
///
/// Lines where either side tokenizes to nothing are dropped from both sides;
/// surviving pairs keep their original line index as `id`.
pub fn load_parallel_corpus(
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<Vec<SentencePair>> {
    let (src_path, tgt_path) = (src_path.as_ref(), tgt_path.as_ref());
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::LineCountMismatch {
            src_path: src_path.to_path_buf(),
            tgt_path: tgt_path.to_path_buf(),
            src_lines: src.len(),
            tgt_lines: tgt.len(),
        });
    }
    Ok(src
        .into_iter()
        .zip(tgt)
        .enumerate()
        .filter_map(|(id, (src_raw, tgt_raw))| {
            let src_tokens = tokenize(&src_raw);
            let tgt_tokens = tokenize(&tgt_raw);
            if src_tokens.is_empty() || tgt_tokens.is_empty() {
                return None;
            }
            Some(SentencePair {
                id,
                src_lang: src_lang.to_string(),
                tgt_lang: tgt_lang.to_string(),
                src_tokens,
                tgt_tokens,
                src_raw,
                tgt_raw,
            })
        })
        .collect())
}

/// Loads a MUSE-layout dictionary. Blank lines are ignored.
pub fn load_dictionary(
    path: impl AsRef<Path>,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<BilingualDictionary> {
    let path = path.as_ref();
    let mut dict = BilingualDictionary::new(src_lang, tgt_lang);
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [src, tgt] => dict.insert(src, tgt),
            _ => {
                return Err(Error::format(
                    path,
                    i + 1,
                    format!("expected 2 whitespace-separated fields, found {}", fields.len()),
                ))
            }
        }
    }
    Ok(dict)
}

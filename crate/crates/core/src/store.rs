//! Layer-wise embedding interchange format.
//!
//! An embedding set is a directory holding `manifest.json` and one file per
//! layer. Each layer file is a row-major `num_items × dim` matrix of
//! little-endian `f32`, with no header. The manifest records the sha256 of
//! every layer file. Layer 0 is the non-contextual input embedding.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Src,
    Tgt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Word,
    SentenceAvg,
    SentenceCls,
}

impl ItemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemKind::Word => "word",
            ItemKind::SentenceAvg => "sentence_avg",
            ItemKind::SentenceCls => "sentence_cls",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFile {
    pub file: String,
    pub sha256: String,
}

/// Self-describing header of an embedding set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub side: Side,
    pub kind: ItemKind,
    pub masked: bool,
    pub num_layers: usize,
    pub dim: usize,
    pub num_items: usize,
    /// Item id held by each row. Absent means row `p` holds item `p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_ids: Option<Vec<usize>>,
    /// Items the producer could not embed.
    #[serde(default)]
    pub dropped: Vec<usize>,
    #[serde(default)]
    pub layers: Vec<LayerFile>,
}

/// Descriptive fields a producer supplies; sizes come from the matrices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetInfo {
    pub model: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub side: Side,
    pub kind: ItemKind,
    pub masked: bool,
    pub item_ids: Option<Vec<usize>>,
    pub dropped: Vec<usize>,
}

impl SetInfo {
    pub fn new(model: &str, side: Side, kind: ItemKind) -> Self {
        SetInfo {
            model: model.to_string(),
            src_lang: String::new(),
            tgt_lang: String::new(),
            side,
            kind,
            masked: false,
            item_ids: None,
            dropped: Vec::new(),
        }
    }
}

/// Maps item ids to matrix rows.
#[derive(Clone, Debug)]
pub struct RowIndex {
    rows: Option<HashMap<usize, usize>>,
    len: usize,
}

impl RowIndex {
    fn new(manifest: &Manifest) -> Self {
        RowIndex {
            rows: manifest
                .item_ids
                .as_ref()
                .map(|ids| ids.iter().enumerate().map(|(row, id)| (*id, row)).collect()),
            len: manifest.num_items,
        }
    }

    pub fn row_of(&self, item_id: usize) -> Option<usize> {
        match &self.rows {
            Some(map) => map.get(&item_id).copied(),
            None => (item_id < self.len).then_some(item_id),
        }
    }
}

/// Anything that can hand out one layer matrix at a time.
pub trait LayerSource: Sync {
    fn manifest(&self) -> &Manifest;
    fn row_index(&self) -> &RowIndex;
    fn layer(&self, layer: usize) -> Result<Cow<'_, Array2<f32>>>;

    fn num_layers(&self) -> usize {
        self.manifest().num_layers
    }
}

/// Fully loaded, validated embedding set.
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    manifest: Manifest,
    index: RowIndex,
    matrices: Vec<Array2<f32>>,
}

impl PartialEq for EmbeddingSet {
    fn eq(&self, other: &Self) -> bool {
        self.manifest == other.manifest && self.matrices == other.matrices
    }
}

fn check_matrix(layer: usize, m: &Array2<f32>) -> Result<()> {
    for (row, values) in m.outer_iter().enumerate() {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Embedding(format!(
                "layer {layer} row {row} contains non-finite value {v}"
            )));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(Error::Embedding(format!("layer {layer} row {row} is all-zero")));
        }
    }
    Ok(())
}

fn check_item_ids(ids: &Option<Vec<usize>>, num_items: usize) -> Result<()> {
    if let Some(ids) = ids {
        if ids.len() != num_items {
            return Err(Error::Embedding(format!(
                "item_ids has {} entries for {num_items} rows",
                ids.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Embedding(format!("item id {dup} appears twice")));
        }
    }
    Ok(())
}

impl EmbeddingSet {
    /// Builds a set from per-layer matrices, enforcing the format invariants.
    pub fn new(info: SetInfo, matrices: Vec<Array2<f32>>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::Embedding("an embedding set needs at least one layer".into()))?;
        let (num_items, dim) = first.dim();
        if dim == 0 {
            return Err(Error::Embedding("dimension must be positive".into()));
        }
        for (layer, m) in matrices.iter().enumerate() {
            if m.dim() != (num_items, dim) {
                return Err(Error::Embedding(format!(
                    "layer 0 is {num_items}x{dim} but layer {layer} is {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            check_matrix(layer, m)?;
        }
        check_item_ids(&info.item_ids, num_items)?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model: info.model,
            src_lang: info.src_lang,
            tgt_lang: info.tgt_lang,
            side: info.side,
            kind: info.kind,
            masked: info.masked,
            num_layers: matrices.len(),
            dim,
            num_items,
            item_ids: info.item_ids,
            dropped: info.dropped,
            layers: Vec::new(),
        };
        let index = RowIndex::new(&manifest);
        Ok(EmbeddingSet {
            manifest,
            index,
            matrices,
        })
    }

    pub fn matrices(&self) -> &[Array2<f32>] {
        &self.matrices
    }
}

impl LayerSource for EmbeddingSet {
    fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn row_index(&self) -> &RowIndex {
        &self.index
    }

    fn layer(&self, layer: usize) -> Result<Cow<'_, Array2<f32>>> {
        self.matrices
            .get(layer)
            .map(Cow::Borrowed)
            .ok_or_else(|| Error::Embedding(format!("layer {layer} out of range")))
    }
}

fn layer_file_name(layer: usize) -> String {
    format!("layer_{layer:03}.f32")
}

fn encode(m: &Array2<f32>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(m.len() * 4);
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `set` into directory `dir`, creating it if needed. Returns the
/// manifest as written, with per-layer checksums.
pub fn write_embedding_set(set: &EmbeddingSet, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = set.manifest.clone();
    manifest.layers.clear();
    for (layer, m) in set.matrices.iter().enumerate() {
        check_matrix(layer, m)?;
        let name = layer_file_name(layer);
        let bytes = encode(m);
        let path = dir.join(&name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        manifest.layers.push(LayerFile {
            file: name,
            sha256: sha256_hex(&bytes),
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Lazily reads layers of an on-disk set. Sizes and the manifest are
/// validated when opened; each layer's checksum and values on access.
#[derive(Debug)]
pub struct EmbeddingReader {
    dir: PathBuf,
    manifest: Manifest,
    index: RowIndex,
}

impl EmbeddingReader {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Embedding(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        if manifest.num_layers == 0 || manifest.dim == 0 {
            return Err(Error::Embedding("num_layers and dim must be positive".into()));
        }
        if manifest.layers.len() != manifest.num_layers {
            return Err(Error::Embedding(format!(
                "manifest declares {} layers but lists {} layer files",
                manifest.num_layers,
                manifest.layers.len()
            )));
        }
        check_item_ids(&manifest.item_ids, manifest.num_items)?;
        let expected = manifest
            .num_items
            .checked_mul(manifest.dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Embedding("declared size overflows".into()))?;

        let row_bytes = manifest.dim as u64 * 4;
        let mut sizes = Vec::with_capacity(manifest.num_layers);
        for lf in &manifest.layers {
            let p = dir.join(&lf.file);
            let len = fs::metadata(&p)
                .map_err(|e| Error::Embedding(format!("missing layer file {}: {e}", p.display())))?
                .len();
            sizes.push(len);
        }
        for (layer, len) in sizes.iter().enumerate() {
            if *len != sizes[0] && len % row_bytes == 0 && sizes[0] % row_bytes == 0 {
                return Err(Error::Embedding(format!(
                    "layer 0 has {} rows but layer {layer} has {} rows",
                    sizes[0] / row_bytes,
                    len / row_bytes
                )));
            }
            if *len != expected as u64 {
                return Err(Error::Embedding(format!(
                    "size mismatch in layer {layer} ({}): {len} bytes, expected {expected}",
                    manifest.layers[layer].file
                )));
            }
        }
        let index = RowIndex::new(&manifest);
        Ok(EmbeddingReader {
            dir,
            manifest,
            index,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn read_layer(&self, layer: usize) -> Result<Array2<f32>> {
        let lf = self
            .manifest
            .layers
            .get(layer)
            .ok_or_else(|| Error::Embedding(format!("layer {layer} out of range")))?;
        let path = self.dir.join(&lf.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = self.manifest.num_items * self.manifest.dim * 4;
        if bytes.len() != expected {
            return Err(Error::Embedding(format!(
                "size mismatch in layer {layer}: {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let digest = sha256_hex(&bytes);
        if digest != lf.sha256 {
            return Err(Error::Embedding(format!(
                "checksum mismatch in layer {layer} ({}): {digest}, manifest says {}",
                lf.file, lf.sha256
            )));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let m = Array2::from_shape_vec((self.manifest.num_items, self.manifest.dim), values)
            .map_err(|e| Error::Embedding(e.to_string()))?;
        check_matrix(layer, &m)?;
        Ok(m)
    }

    /// Loads every layer.
    pub fn load(self) -> Result<EmbeddingSet> {
        let matrices = (0..self.manifest.num_layers)
            .map(|l| self.read_layer(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingSet {
            manifest: self.manifest,
            index: self.index,
            matrices,
        })
    }
}

impl LayerSource for EmbeddingReader {
    fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn row_index(&self) -> &RowIndex {
        &self.index
    }

    fn layer(&self, layer: usize) -> Result<Cow<'_, Array2<f32>>> {
        self.read_layer(layer).map(Cow::Owned)
    }
}

pub fn read_embedding_set(dir: impl AsRef<Path>) -> Result<EmbeddingSet> {
    EmbeddingReader::open(dir)?.load()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small() -> EmbeddingSet {
        let mut info = SetInfo::new("toy", Side::Src, ItemKind::Word);
        info.src_lang = "fr".into();
        info.tgt_lang = "en".into();
        EmbeddingSet::new(
            info,
            vec![
                array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
                array![[0.5, -1.0, 1e-30], [f32::MIN_POSITIVE, 7.0, -0.0]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn writes_expected_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_embedding_set(&small(), dir.path()).unwrap();
        assert_eq!((m.num_items, m.dim, m.num_layers), (2, 3, 2));
        for lf in &m.layers {
            assert_eq!(fs::metadata(dir.path().join(&lf.file)).unwrap().len(), 24);
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let set = small();
        write_embedding_set(&set, dir.path()).unwrap();
        let back = read_embedding_set(dir.path()).unwrap();
        assert_eq!(back.manifest().model, "toy");
        assert_eq!(back.manifest().kind, ItemKind::Word);
        for (a, b) in set.matrices().iter().zip(back.matrices()) {
            let a: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn refuses_nan_and_zero_rows() {
        let info = SetInfo::new("toy", Side::Src, ItemKind::Word);
        let err = EmbeddingSet::new(info.clone(), vec![array![[1.0, f32::NAN]]]).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
        let err = EmbeddingSet::new(info, vec![array![[0.0, 0.0]]]).unwrap_err();
        assert!(err.to_string().contains("all-zero"));
    }

    #[test]
    fn truncated_layer_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_embedding_set(&small(), dir.path()).unwrap();
        let p = dir.path().join(&m.layers[1].file);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..20]).unwrap();
        let err = read_embedding_set(dir.path()).unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
    }

    #[test]
    fn mismatched_rows_name_both_layers() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_embedding_set(&small(), dir.path()).unwrap();
        let p = dir.path().join(&m.layers[1].file);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..12]).unwrap();
        let err = read_embedding_set(dir.path()).unwrap_err().to_string();
        assert!(err.contains("layer 0 has 2 rows but layer 1 has 1 rows"), "{err}");
    }

    #[test]
    fn missing_layer_and_bad_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_embedding_set(&small(), dir.path()).unwrap();
        let p = dir.path().join(&m.layers[0].file);
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] ^= 1;
        fs::write(&p, &bytes).unwrap();
        assert!(read_embedding_set(dir.path()).unwrap_err().to_string().contains("checksum"));
        fs::remove_file(&p).unwrap();
        assert!(read_embedding_set(dir.path()).unwrap_err().to_string().contains("missing"));
    }

    #[test]
    fn non_finite_on_disk_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = write_embedding_set(&small(), dir.path()).unwrap();
        let mut bytes = fs::read(dir.path().join(&m.layers[0].file)).unwrap();
        bytes[..4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        fs::write(dir.path().join(&m.layers[0].file), &bytes).unwrap();
        m.layers[0].sha256 = sha256_hex(&bytes);
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        let err = read_embedding_set(dir.path()).unwrap_err().to_string();
        assert!(err.contains("non-finite"), "{err}");
    }

    #[test]
    fn item_ids_drive_row_lookup() {
        let mut info = SetInfo::new("toy", Side::Tgt, ItemKind::Word);
        info.item_ids = Some(vec![7, 3]);
        info.dropped = vec![5];
        let set = EmbeddingSet::new(info, vec![array![[1.0], [2.0]]]).unwrap();
        assert_eq!(set.row_index().row_of(3), Some(1));
        assert_eq!(set.row_index().row_of(5), None);
        let dir = tempfile::tempdir().unwrap();
        write_embedding_set(&set, dir.path()).unwrap();
        let back = read_embedding_set(dir.path()).unwrap();
        assert_eq!(back.manifest().item_ids, Some(vec![7, 3]));
        assert_eq!(back.row_index().row_of(7), Some(0));
    }
}

//! Feature files, manifests and the known/unknown open-set split.
//!
//! OHFS layout (little-endian):
//!
//! ```text
//! "OHFS" | version u16 = 1 | dtype u8 = 1 (f32) | reserved u8 = 0
//! | N u64 | d u64 | features N*d f32, row-major | labels N i64
//! ```
//!
//! The manifest lives next to the binary as `<path>.manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"OHFS";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 8 + 8;

/// Label carried by rows whose class is not used (OOD rows after `select`).
pub const UNLABELED: i64 = -1;

#[derive(Debug, thiserror::Error)]
pub enum FeatStoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"OHFS\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported OHFS version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("truncated payload: expected at least {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("label count mismatch: header says {expected} rows, payload holds {found} labels")]
    LabelCountMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: {what} says {expected}, data has {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("feature dimension must be at least 1")]
    ZeroDimension,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("known class set is empty")]
    EmptyKnown,
    #[error("known class {0} does not occur in the dataset")]
    NotASubset(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    IdTrain,
    IdTest,
    OodTest,
    Raw,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::IdTrain => "id_train",
            SplitRole::IdTest => "id_test",
            SplitRole::OodTest => "ood_test",
            SplitRole::Raw => "raw",
        }
    }

    fn is_in_distribution(self) -> bool {
        matches!(self, SplitRole::IdTrain | SplitRole::IdTest)
    }
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub backbone_id: String,
    pub split_role: SplitRole,
    pub feature_dim: usize,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    pub source_dataset: String,
    pub extraction_seed: u64,
}

impl Manifest {
    pub fn raw(backbone_id: impl Into<String>, feature_dim: usize) -> Self {
        Self {
            backbone_id: backbone_id.into(),
            split_role: SplitRole::Raw,
            feature_dim,
            class_names: None,
            source_dataset: "unknown".into(),
            extraction_seed: 0,
        }
    }
}

/// N×d `f32` embeddings with one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Vec<f32>,
    dim: usize,
    labels: Vec<i64>,
    pub manifest: Manifest,
}

impl FeatureSet {
    pub fn new(
        features: Vec<f32>,
        dim: usize,
        labels: Vec<i64>,
        manifest: Manifest,
    ) -> Result<Self, FeatStoreError> {
        if dim == 0 {
            return Err(FeatStoreError::ZeroDimension);
        }
        if features.len() % dim != 0 {
            return Err(FeatStoreError::DimensionMismatch {
                what: "feature buffer length",
                expected: dim,
                found: features.len() % dim,
            });
        }
        let n = features.len() / dim;
        if labels.len() != n {
            return Err(FeatStoreError::LabelCountMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if manifest.feature_dim != dim {
            return Err(FeatStoreError::DimensionMismatch {
                what: "manifest feature_dim",
                expected: manifest.feature_dim,
                found: dim,
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(FeatStoreError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            features,
            dim,
            labels,
            manifest,
        })
    }

    /// Converts an `f64` matrix (rounding to `f32`).
    pub fn from_matrix(
        matrix: &Matrix,
        labels: Vec<i64>,
        manifest: Manifest,
    ) -> Result<Self, FeatStoreError> {
        let features = matrix.as_slice().iter().map(|&v| v as f32).collect();
        Self::new(features, matrix.cols(), labels, manifest)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Widens the features to `f64` for computation.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.features.iter().map(|&v| f64::from(v)).collect();
        Matrix::from_vec(self.len(), self.dim, data).expect("shape checked at construction")
    }

    /// Distinct non-negative labels, ascending.
    pub fn class_ids(&self) -> BTreeSet<i64> {
        self.labels.iter().copied().filter(|&l| l >= 0).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(HEADER_LEN + n * self.dim * 4 + n * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(0);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    /// Parses an OHFS payload; the manifest is supplied separately.
    pub fn from_bytes(bytes: &[u8], manifest: Option<Manifest>) -> Result<Self, FeatStoreError> {
        if bytes.len() < 4 {
            return Err(FeatStoreError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(FeatStoreError::BadMagic { found: magic });
        }
        if bytes.len() < HEADER_LEN {
            return Err(FeatStoreError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != VERSION {
            return Err(FeatStoreError::UnsupportedVersion(version));
        }
        if bytes[6] != DTYPE_F32 {
            return Err(FeatStoreError::UnsupportedDtype(bytes[6]));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(FeatStoreError::ZeroDimension);
        }
        let feat_bytes = n
            .checked_mul(d)
            .and_then(|c| c.checked_mul(4))
            .ok_or(FeatStoreError::Truncated {
                expected: usize::MAX,
                found: bytes.len(),
            })?;
        let feat_end = HEADER_LEN + feat_bytes;
        if bytes.len() < feat_end {
            return Err(FeatStoreError::Truncated {
                expected: feat_end + n * 8,
                found: bytes.len(),
            });
        }
        let label_bytes = bytes.len() - feat_end;
        if label_bytes % 8 != 0 {
            return Err(FeatStoreError::Truncated {
                expected: feat_end + n * 8,
                found: bytes.len(),
            });
        }
        if label_bytes / 8 != n {
            return Err(FeatStoreError::LabelCountMismatch {
                expected: n,
                found: label_bytes / 8,
            });
        }
        let features = bytes[HEADER_LEN..feat_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = bytes[feat_end..]
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let manifest = manifest.unwrap_or_else(|| Manifest::raw("unknown", d));
        Self::new(features, d, labels, manifest)
    }

    /// Pretty JSON for the sidecar, with a trailing newline.
    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// `<path>.manifest.json`
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_feature_file(set: &FeatureSet, path: &Path) -> Result<(), FeatStoreError> {
    let bytes = set.to_bytes();
    let manifest = set.manifest_json();
    let io = |source| FeatStoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::write(path, bytes).map_err(io)?;
    std::fs::write(manifest_path(path), manifest).map_err(io)?;
    Ok(())
}

/// Reads an OHFS file and its sidecar manifest. A missing sidecar yields a
/// `raw` manifest; a sidecar whose `feature_dim` disagrees is an error.
pub fn read_feature_file(path: &Path) -> Result<FeatureSet, FeatStoreError> {
    let bytes = std::fs::read(path).map_err(|source| FeatStoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mpath = manifest_path(path);
    let manifest = match std::fs::read_to_string(&mpath) {
        Ok(text) => Some(serde_json::from_str::<Manifest>(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(source) => return Err(FeatStoreError::Io { path: mpath, source }),
    };
    FeatureSet::from_bytes(&bytes, manifest)
}

/// Known/unknown partition with a dense remap of known ids onto `0..K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub known_original_ids: Vec<i64>,
    pub remap: BTreeMap<i64, usize>,
    pub unknown_original_ids: BTreeSet<i64>,
}

impl SplitSpec {
    pub fn num_known(&self) -> usize {
        self.known_original_ids.len()
    }
}

/// Known ids are remapped in ascending original-id order.
pub fn build_open_split(
    all_class_ids: &BTreeSet<i64>,
    known_ids: &[i64],
) -> Result<SplitSpec, SplitError> {
    let known: BTreeSet<i64> = known_ids.iter().copied().collect();
    if known.is_empty() {
        return Err(SplitError::EmptyKnown);
    }
    if let Some(&bad) = known.iter().find(|id| !all_class_ids.contains(id)) {
        return Err(SplitError::NotASubset(bad));
    }
    let known_original_ids: Vec<i64> = known.iter().copied().collect();
    let remap = known_original_ids
        .iter()
        .enumerate()
        .map(|(new, &orig)| (orig, new))
        .collect();
    let unknown_original_ids = all_class_ids.difference(&known).copied().collect();
    Ok(SplitSpec {
        known_original_ids,
        remap,
        unknown_original_ids,
    })
}

/// First `k` ids of `all_class_ids` in ascending order are known.
pub fn first_k_split(all_class_ids: &BTreeSet<i64>, k: usize) -> Result<SplitSpec, SplitError> {
    let known: Vec<i64> = all_class_ids.iter().take(k).copied().collect();
    if known.len() < k {
        return Err(SplitError::NotASubset(k as i64 - 1));
    }
    build_open_split(all_class_ids, &known)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmptySelection {
    pub role: SplitRole,
}

impl fmt::Display for EmptySelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "selection for role {} is empty", self.role)
    }
}

/// Filters `set` to the rows belonging to `role`, preserving row order.
///
/// In-distribution roles keep known-class rows relabelled through the
/// remap. `ood_test` keeps every other row (including already unlabelled
/// ones) with label [`UNLABELED`]. An empty result is reported through the
/// second tuple element rather than as an error. `Raw` returns the set as is.
pub fn select(
    set: &FeatureSet,
    split: &SplitSpec,
    role: SplitRole,
) -> (FeatureSet, Option<EmptySelection>) {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, &label) in set.labels().iter().enumerate() {
        let keep = match (role, split.remap.get(&label)) {
            (SplitRole::Raw, _) => Some(label),
            (r, Some(&new)) if r.is_in_distribution() => Some(new as i64),
            (SplitRole::OodTest, None) => Some(UNLABELED),
            _ => None,
        };
        if let Some(l) = keep {
            features.extend_from_slice(set.row(i));
            labels.push(l);
        }
    }
    let mut manifest = set.manifest.clone();
    manifest.split_role = role;
    if role.is_in_distribution() {
        if let Some(names) = &set.manifest.class_names {
            let remapped: Option<Vec<String>> = split
                .known_original_ids
                .iter()
                .map(|&id| usize::try_from(id).ok().and_then(|i| names.get(i).cloned()))
                .collect();
            manifest.class_names = remapped;
        }
    }
    let warning = labels.is_empty().then_some(EmptySelection { role });
    let out = FeatureSet::new(features, set.dim(), labels, manifest)
        .expect("rows copied from a valid set");
    (out, warning)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(labels: Vec<i64>, dim: usize) -> FeatureSet {
        let n = labels.len();
        let features = (0..n * dim).map(|v| v as f32 * 0.5 - 1.0).collect();
        FeatureSet::new(features, dim, labels, Manifest::raw("toy", dim)).unwrap()
    }

    fn ids(range: std::ops::Range<i64>) -> BTreeSet<i64> {
        range.collect()
    }

    #[test]
    fn split_first_six_of_ten() {
        let split = build_open_split(&ids(0..10), &[0, 1, 2, 3, 4, 5]).unwrap();
        for i in 0..6 {
            assert_eq!(split.remap[&i], i as usize);
        }
        assert_eq!(split.unknown_original_ids, ids(6..10));
        assert_eq!(first_k_split(&ids(0..10), 6).unwrap(), split);
    }

    #[test]
    fn split_closed_world() {
        let split = build_open_split(&ids(0..10), &(0..10).collect::<Vec<_>>()).unwrap();
        assert!(split.unknown_original_ids.is_empty());
    }

    #[test]
    fn split_ascending_remap() {
        let split = build_open_split(&ids(0..10), &[9, 3, 7]).unwrap();
        assert_eq!(split.remap[&3], 0);
        assert_eq!(split.remap[&7], 1);
        assert_eq!(split.remap[&9], 2);
        assert_eq!(split.known_original_ids, vec![3, 7, 9]);
    }

    #[test]
    fn split_errors() {
        assert_eq!(build_open_split(&ids(0..10), &[]), Err(SplitError::EmptyKnown));
        assert_eq!(
            build_open_split(&ids(0..10), &[2, 11]),
            Err(SplitError::NotASubset(11))
        );
    }

    #[test]
    fn select_roles() {
        let set = toy(vec![0, 6, 1], 2);
        let split = first_k_split(&ids(0..10), 6).unwrap();
        let (id, warn) = select(&set, &split, SplitRole::IdTest);
        assert!(warn.is_none());
        assert_eq!(id.labels(), &[0, 1]);
        assert_eq!(id.row(0), set.row(0));
        assert_eq!(id.row(1), set.row(2));
        assert_eq!(id.manifest.split_role, SplitRole::IdTest);

        let (ood, _) = select(&set, &split, SplitRole::OodTest);
        assert_eq!(ood.labels(), &[UNLABELED]);
        assert_eq!(ood.row(0), set.row(1));
    }

    #[test]
    fn select_ood_of_ten_classes() {
        let set = toy((0..10).chain(0..10).collect(), 3);
        let split = first_k_split(&ids(0..10), 6).unwrap();
        let (ood, _) = select(&set, &split, SplitRole::OodTest);
        assert_eq!(ood.len(), 8);
        assert!(ood.labels().iter().all(|&l| l == UNLABELED));
        let original: Vec<f32> = (0..set.len())
            .filter(|&i| set.labels()[i] >= 6)
            .flat_map(|i| set.row(i).to_vec())
            .collect();
        assert_eq!(ood.features(), original.as_slice());
    }

    #[test]
    fn select_closed_world_ood_is_empty_with_warning() {
        let set = toy((0..10).collect(), 2);
        let split = first_k_split(&ids(0..10), 10).unwrap();
        let (ood, warn) = select(&set, &split, SplitRole::OodTest);
        assert!(ood.is_empty());
        assert_eq!(
            warn,
            Some(EmptySelection {
                role: SplitRole::OodTest
            })
        );
    }

    #[test]
    fn select_remaps_class_names() {
        let mut set = toy(vec![3, 7], 1);
        set.manifest.class_names = Some((0..10).map(|i| format!("c{i}")).collect());
        let split = build_open_split(&ids(0..10), &[3, 7]).unwrap();
        let (id, _) = select(&set, &split, SplitRole::IdTrain);
        assert_eq!(
            id.manifest.class_names,
            Some(vec!["c3".to_string(), "c7".to_string()])
        );
    }

    #[test]
    fn empty_set_round_trips() {
        let set = toy(vec![], 4);
        let bytes = set.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN);
        let back = FeatureSet::from_bytes(&bytes, Some(set.manifest.clone())).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.dim(), 4);
    }

    #[test]
    fn rejects_non_finite() {
        let err = FeatureSet::new(vec![0.0, f32::NAN], 2, vec![0], Manifest::raw("x", 2));
        assert!(matches!(err, Err(FeatStoreError::NonFinite { row: 0, col: 1 })));
        let err = FeatureSet::new(vec![f32::INFINITY], 1, vec![0], Manifest::raw("x", 1));
        assert!(matches!(err, Err(FeatStoreError::NonFinite { .. })));
    }

    #[test]
    fn decode_errors_are_distinct() {
        let set = toy(vec![0, 1, 2], 4);
        let bytes = set.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            FeatureSet::from_bytes(&bad, None),
            Err(FeatStoreError::BadMagic { .. })
        ));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            FeatureSet::from_bytes(&bad, None),
            Err(FeatStoreError::UnsupportedVersion(2))
        ));

        let mut bad = bytes.clone();
        bad[6] = 2;
        assert!(matches!(
            FeatureSet::from_bytes(&bad, None),
            Err(FeatStoreError::UnsupportedDtype(2))
        ));

        // cut in the middle of the feature matrix
        let cut = &bytes[..HEADER_LEN + 10];
        assert!(matches!(
            FeatureSet::from_bytes(cut, None),
            Err(FeatStoreError::Truncated { .. })
        ));

        // one label missing
        let short = &bytes[..bytes.len() - 8];
        assert!(matches!(
            FeatureSet::from_bytes(short, None),
            Err(FeatStoreError::LabelCountMismatch {
                expected: 3,
                found: 2
            })
        ));

        // one extra label
        let mut long = bytes.clone();
        long.extend_from_slice(&5i64.to_le_bytes());
        assert!(matches!(
            FeatureSet::from_bytes(&long, None),
            Err(FeatStoreError::LabelCountMismatch {
                expected: 3,
                found: 4
            })
        ));

        let wrong_dim = Manifest::raw("x", 5);
        assert!(matches!(
            FeatureSet::from_bytes(&bytes, Some(wrong_dim)),
            Err(FeatStoreError::DimensionMismatch { .. })
        ));
    }
}

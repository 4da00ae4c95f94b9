pub mod eval;
pub mod fscil;
pub mod probe_train;
pub mod report;
pub mod score;
pub mod split;
pub mod synth;

use std::path::Path;

use ohz_core::featstore::{read_feature_file, FeatStoreError};
use ohz_core::FeatureSet;

use crate::error::{CliError, Result};

pub fn load_features(path: &Path) -> Result<FeatureSet> {
    read_feature_file(path).map_err(|e| match e {
        FeatStoreError::Io { path, source } => CliError::io(&path, source),
        other => CliError::io(path, other),
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Labels of an ID set as class indices.
pub fn class_labels(set: &FeatureSet, path: &Path) -> Result<Vec<usize>> {
    set.labels()
        .iter()
        .map(|&l| usize::try_from(l).map_err(|_| CliError::io(path, format!("label {l} is not a remapped class index"))))
        .collect()
}

/// Splits a comma list given as repeated values into trimmed items.
pub fn parse_list<T: std::str::FromStr>(items: &[String], what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    items
        .iter()
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| CliError::Usage(format!("invalid {what} `{s}`: {e}")))
        })
        .collect()
}

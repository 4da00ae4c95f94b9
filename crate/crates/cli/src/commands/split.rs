use std::collections::BTreeSet;

use ohz_core::featstore::{build_open_split, first_k_split, select, SplitSpec};
use ohz_core::{FeatureSet, SplitRole};
use serde::Serialize;

use super::load_features;
use crate::args::SplitArgs;
use crate::error::{CliError, Result};
use crate::output::Outputs;

#[derive(Serialize)]
struct SplitSummary<'a> {
    backbone_id: &'a str,
    split: &'a SplitSpec,
    counts: Counts,
}

#[derive(Serialize)]
struct Counts {
    id_train: usize,
    id_test: usize,
    ood_test: usize,
}

fn encode(out: &mut Outputs, name: &str, set: &FeatureSet) {
    out.add(format!("{name}.ohfs"), set.to_bytes());
    out.add(format!("{name}.ohfs.manifest.json"), set.manifest_json());
}

pub fn run(args: &SplitArgs) -> Result<Outputs> {
    let train = load_features(&args.train)?;
    let test = load_features(&args.test)?;
    if train.dim() != test.dim() {
        return Err(CliError::Usage(format!(
            "train has dimension {}, test has {}",
            train.dim(),
            test.dim()
        )));
    }
    let all: BTreeSet<i64> = train
        .class_ids()
        .into_iter()
        .chain(test.class_ids())
        .filter(|&c| c >= 0)
        .collect();
    let split = match (&args.k, &args.known_ids) {
        (_, Some(ids)) => build_open_split(&all, ids),
        (Some(k), None) => {
            if *k == 0 || *k > all.len() {
                return Err(CliError::Usage(format!(
                    "K must lie in 1..={}, got {k}",
                    all.len()
                )));
            }
            first_k_split(&all, *k)
        }
        (None, None) => return Err(CliError::Usage("give either --k or --known-ids".into())),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut out = Outputs::default();
    let parts = [
        ("id_train", &train, SplitRole::IdTrain),
        ("id_test", &test, SplitRole::IdTest),
        ("ood_test", &test, SplitRole::OodTest),
    ];
    let mut counts = Vec::new();
    for (name, source, role) in parts {
        let (set, warning) = select(source, &split, role);
        if let Some(w) = warning {
            eprintln!("warning: {w}");
        }
        counts.push(set.len());
        encode(&mut out, name, &set);
    }
    out.add_json(
        "split.json",
        &SplitSummary {
            backbone_id: &train.manifest.backbone_id,
            split: &split,
            counts: Counts {
                id_train: counts[0],
                id_test: counts[1],
                ood_test: counts[2],
            },
        },
    );
    Ok(out)
}

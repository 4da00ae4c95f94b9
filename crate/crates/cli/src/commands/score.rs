use ohz_core::checkpoint::{decode_prep, decode_probe};
use ohz_core::probe;
use ohz_core::scores::{OsrArtifacts, ScoreKind, ScoreMethod};
use serde::{Deserialize, Serialize};

use super::{class_labels, load_features, read_bytes};
use crate::args::ScoreArgs;
use crate::error::{CliError, Result};
use crate::output::{full, Csv, Outputs};

pub const SCORE_COLUMNS: [&str; 4] = ["row_index", "split", "kind", "score"];

/// Sidecar written next to each kind's score CSVs.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreSidecar {
    pub backbone_id: String,
    pub kind: ScoreKind,
    pub params: ScoreMethod,
    pub id_count: usize,
    pub ood_count: usize,
}

/// Closed-set probe output on the ID test rows, used for OSCR.
#[derive(Debug, Serialize, Deserialize)]
pub struct IdPredictions {
    pub backbone_id: String,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

pub fn csv_name(kind: ScoreKind, split: &str) -> String {
    format!("scores_{kind}_{split}.csv")
}

pub fn sidecar_name(kind: ScoreKind) -> String {
    format!("scores_{kind}.json")
}

fn missing(kind: ScoreKind, flag: &str) -> CliError {
    CliError::Usage(format!("score kind `{kind}` needs {flag}"))
}

pub fn run(args: &ScoreArgs) -> Result<Outputs> {
    let mut kinds: Vec<ScoreKind> = Vec::new();
    for k in super::parse_list::<ScoreKind>(&args.kinds, "score kind")? {
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    if kinds.is_empty() {
        return Err(CliError::Usage("no score kinds requested".into()));
    }
    if !(args.temperature > 0.0 && args.temperature.is_finite()) {
        return Err(CliError::Usage(format!("temperature must be positive, got {}", args.temperature)));
    }
    if args.knn_k == 0 {
        return Err(CliError::Usage("--knn-k must be at least 1".into()));
    }

    let mut artifacts = OsrArtifacts::default();
    let needs_probe = kinds.iter().any(|k| k.uses_logits());
    let needs_prep = kinds.iter().any(|k| !k.uses_logits());
    if needs_probe {
        let kind = *kinds.iter().find(|k| k.uses_logits()).expect("checked");
        let path = args.probe.as_ref().ok_or_else(|| missing(kind, "--probe"))?;
        let (model, _) = decode_probe(&read_bytes(path)?).map_err(|e| CliError::io(path, e))?;
        artifacts.probe = Some(model);
    }
    if needs_prep {
        let kind = *kinds.iter().find(|k| !k.uses_logits()).expect("checked");
        let path = args.prep.as_ref().ok_or_else(|| missing(kind, "--prep"))?;
        let (prep, stats) = decode_prep(&read_bytes(path)?).map_err(|e| CliError::io(path, e))?;
        if kinds.contains(&ScoreKind::Knn) {
            let train_path = args.train.as_ref().ok_or_else(|| missing(ScoreKind::Knn, "--train"))?;
            let train = load_features(train_path)?;
            let normalized = prep
                .center_normalize(&train.to_matrix())
                .map_err(|e| CliError::io(train_path, e))?;
            artifacts.train_normalized = Some(normalized);
        }
        artifacts.preprocessor = Some(prep);
        artifacts.class_stats = Some(stats);
    }

    let id = load_features(&args.id_test)?;
    let ood = load_features(&args.ood_test)?;
    let backbone = args.backbone.clone().unwrap_or_else(|| id.manifest.backbone_id.clone());
    let (id_x, ood_x) = (id.to_matrix(), ood.to_matrix());

    let mut out = Outputs::default();
    for &kind in &kinds {
        let method = ScoreMethod::new(kind, args.temperature, args.knn_k);
        let mut counts = [0usize; 2];
        for (i, (split, x)) in [("id", &id_x), ("ood", &ood_x)].into_iter().enumerate() {
            let scores = if x.rows() == 0 {
                Vec::new()
            } else {
                artifacts.score(method, x).map_err(CliError::compute)?.scores
            };
            counts[i] = scores.len();
            let mut csv = Csv::new(&SCORE_COLUMNS);
            for (row, s) in scores.iter().enumerate() {
                csv.row(&[row.to_string(), split.to_string(), kind.to_string(), full(*s)]);
            }
            out.add(csv_name(kind, split), csv.finish());
        }
        out.add_json(
            sidecar_name(kind),
            &ScoreSidecar {
                backbone_id: backbone.clone(),
                kind,
                params: method,
                id_count: counts[0],
                ood_count: counts[1],
            },
        );
    }

    if let Some(model) = &artifacts.probe {
        if id_x.rows() > 0 {
            let predictions = probe::predict(model, &id_x).map_err(CliError::compute)?;
            out.add_json(
                "id_predictions.json",
                &IdPredictions {
                    backbone_id: backbone,
                    predictions,
                    labels: class_labels(&id, &args.id_test)?,
                },
            );
        }
    }
    Ok(out)
}

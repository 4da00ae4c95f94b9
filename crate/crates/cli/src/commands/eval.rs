use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ohz_core::metrics::{evaluate_cell, CellEvaluation, ClosedSet};
use ohz_core::scores::ScoreKind;
use serde::{Deserialize, Serialize};

use super::score::{csv_name, sidecar_name, IdPredictions, ScoreSidecar, SCORE_COLUMNS};
use crate::args::EvalArgs;
use crate::error::{CliError, Result};
use crate::output::{f6, full, Csv, Outputs};

/// Full-precision record of one (backbone, kind) cell. Thresholds are kept
/// as strings because they may be infinite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub backbone_id: String,
    pub kind: ScoreKind,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr_at_95: f64,
    pub oscr_area: Option<f64>,
    pub threshold: String,
    pub fpr_id: f64,
    pub id_kept: usize,
    pub id_total: usize,
    pub retention_rate: f64,
    pub ood_rejection_rate: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub target_rejection: f64,
    pub cells: Vec<CellRecord>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

fn read_scores(path: &Path, split: &str, kind: ScoreKind) -> Result<Vec<f64>> {
    let bad = |msg: String| CliError::io(path, format!("malformed score file: {msg}"));
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != SCORE_COLUMNS {
        return Err(bad(format!("expected columns {}", SCORE_COLUMNS.join(","))));
    }
    let mut scores = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        if record.get(0).and_then(|v| v.parse::<usize>().ok()) != Some(i) {
            return Err(bad(format!("line {line}: row_index must be {i}")));
        }
        if record.get(1) != Some(split) {
            return Err(bad(format!("line {line}: split must be `{split}`")));
        }
        if record.get(2) != Some(kind.as_str()) {
            return Err(bad(format!("line {line}: kind must be `{kind}`")));
        }
        let score = record
            .get(3)
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(format!("line {line}: score is not a finite number")))?;
        scores.push(score);
    }
    Ok(scores)
}

struct ScoreDir {
    backbone: String,
    kind: ScoreKind,
    id: Vec<f64>,
    ood: Vec<f64>,
    predictions: Option<IdPredictions>,
}

fn load_dir(dir: &Path) -> Result<Vec<ScoreDir>> {
    if !dir.is_dir() {
        return Err(CliError::io(dir, "not a directory"));
    }
    let pred_path = dir.join("id_predictions.json");
    let mut found = Vec::new();
    for kind in ScoreKind::ALL {
        let side = dir.join(sidecar_name(kind));
        if !side.exists() {
            continue;
        }
        let meta: ScoreSidecar = read_json(&side)?;
        if meta.kind != kind {
            return Err(CliError::io(&side, format!("sidecar describes `{}`", meta.kind)));
        }
        let id = read_scores(&dir.join(csv_name(kind, "id")), "id", kind)?;
        let ood = read_scores(&dir.join(csv_name(kind, "ood")), "ood", kind)?;
        let predictions = if pred_path.exists() {
            let p: IdPredictions = read_json(&pred_path)?;
            if p.predictions.len() != id.len() || p.labels.len() != id.len() {
                return Err(CliError::io(&pred_path, "prediction count differs from ID score count"));
            }
            Some(p)
        } else {
            None
        };
        found.push(ScoreDir {
            backbone: meta.backbone_id,
            kind,
            id,
            ood,
            predictions,
        });
    }
    if found.is_empty() {
        return Err(CliError::io(dir, "no score files found"));
    }
    Ok(found)
}

/// File-name-safe form of a backbone id.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn record(backbone: &str, kind: ScoreKind, cell: &CellEvaluation) -> CellRecord {
    let d = &cell.decision;
    CellRecord {
        backbone_id: backbone.to_string(),
        kind,
        auroc: cell.report.auroc,
        aupr: cell.report.aupr,
        fpr_at_95: cell.report.fpr_at_95,
        oscr_area: cell.report.oscr_area,
        threshold: full(d.threshold),
        fpr_id: d.fpr_id_percent(),
        id_kept: d.id_kept,
        id_total: d.id_total,
        retention_rate: 100.0 * d.retention_rate,
        ood_rejection_rate: 100.0 * d.ood_rejection_rate,
    }
}

pub fn run(args: &EvalArgs) -> Result<Outputs> {
    if !(0.0..=1.0).contains(&args.target_rejection) {
        return Err(CliError::Usage(format!(
            "--target-rejection must lie in [0, 1], got {}",
            args.target_rejection
        )));
    }
    let mut cells: BTreeMap<(String, ScoreKind), (ScoreDir, PathBuf)> = BTreeMap::new();
    for dir in &args.scores {
        for s in load_dir(dir)? {
            let key = (s.backbone.clone(), s.kind);
            if cells.contains_key(&key) {
                return Err(CliError::Usage(format!(
                    "backbone `{}` kind `{}` appears in more than one score directory",
                    key.0, key.1
                )));
            }
            cells.insert(key, (s, dir.clone()));
        }
    }

    let mut grid = Csv::new(&["backbone", "method", "auroc", "aupr", "fpr_at_95", "oscr_area"]);
    let mut decisions = Csv::new(&[
        "backbone",
        "method",
        "threshold",
        "fpr_id",
        "id_kept",
        "id_total",
        "retention_rate",
        "ood_rejection_rate",
    ]);
    let mut out = Outputs::default();
    let mut records = Vec::new();
    for ((backbone, kind), (s, dir)) in &cells {
        let closed = s.predictions.as_ref().map(|p| ClosedSet {
            predictions: &p.predictions,
            labels: &p.labels,
        });
        let cell = evaluate_cell(backbone, *kind, &s.id, &s.ood, closed, args.target_rejection)
            .map_err(|e| CliError::compute(format!("{}: {kind}: {e}", dir.display())))?;
        let r = record(backbone, *kind, &cell);
        grid.row(&[
            backbone.clone(),
            kind.to_string(),
            f6(r.auroc),
            f6(r.aupr),
            f6(r.fpr_at_95),
            r.oscr_area.map(f6).unwrap_or_default(),
        ]);
        decisions.row(&[
            backbone.clone(),
            kind.to_string(),
            f6(cell.decision.threshold),
            f6(r.fpr_id),
            r.id_kept.to_string(),
            r.id_total.to_string(),
            f6(r.retention_rate),
            f6(r.ood_rejection_rate),
        ]);
        let stem = format!("{}_{kind}", slug(backbone));
        let mut roc = Csv::new(&["threshold", "fpr", "tpr"]);
        for i in 0..cell.roc.thresholds.len() {
            roc.row(&[f6(cell.roc.thresholds[i]), f6(cell.roc.fpr[i]), f6(cell.roc.tpr[i])]);
        }
        out.add(format!("roc_{stem}.csv"), roc.finish());
        if let Some(o) = &cell.oscr {
            let mut csv = Csv::new(&["threshold", "fpr_ood", "ccr"]);
            for i in 0..o.thresholds.len() {
                csv.row(&[f6(o.thresholds[i]), f6(o.fpr_ood[i]), f6(o.ccr[i])]);
            }
            out.add(format!("oscr_{stem}.csv"), csv.finish());
        }
        records.push(r);
    }
    out.add("eval_grid.csv", grid.finish());
    out.add("decision_stats.csv", decisions.finish());
    out.add_json(
        "eval.json",
        &EvalSummary {
            target_rejection: args.target_rejection,
            cells: records,
        },
    );
    Ok(out)
}

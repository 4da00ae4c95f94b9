use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use ohz_core::fscil::summary_table;
use ohz_core::scores::ScoreKind;

use super::eval::{CellRecord, EvalSummary};
use super::fscil::{FscilSummary, TABLE_SHOTS};
use crate::args::ReportArgs;
use crate::error::{CliError, Result};
use crate::output::Outputs;

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

fn label(kind: ScoreKind) -> &'static str {
    match kind {
        ScoreKind::Msp => "MSP",
        ScoreKind::Energy => "Energy",
        ScoreKind::Mahalanobis => "Mahalanobis",
        ScoreKind::Knn => "kNN",
    }
}

fn table(md: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(md, "| {} |", header.join(" | "));
    let _ = writeln!(md, "|{}", header.iter().map(|_| "---|").collect::<String>());
    for r in rows {
        let _ = writeln!(md, "| {} |", r.join(" | "));
    }
    md.push('\n');
}

fn osr_section(md: &mut String, eval: &EvalSummary) {
    let backbones: Vec<String> = eval
        .cells
        .iter()
        .map(|c| c.backbone_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let find = |b: &str, k: ScoreKind| -> Option<&CellRecord> {
        eval.cells.iter().find(|c| c.backbone_id == b && c.kind == k)
    };

    md.push_str("## Open-set recognition\n\n");
    md.push_str("AUROC, AUPR and FPR@95 in percent. Higher is better except FPR@95.\n\n");
    let mut header = vec!["Method".to_string()];
    for b in &backbones {
        header.extend([format!("{b} AUROC"), format!("{b} AUPR"), format!("{b} FPR@95")]);
    }
    let mut rows = Vec::new();
    for kind in ScoreKind::ALL {
        if backbones.iter().all(|b| find(b, kind).is_none()) {
            continue;
        }
        let mut row = vec![label(kind).to_string()];
        for b in &backbones {
            match find(b, kind) {
                Some(c) => row.extend([
                    format!("{:.2}", c.auroc),
                    format!("{:.2}", c.aupr),
                    format!("{:.2}", c.fpr_at_95),
                ]),
                None => row.extend(["".into(), "".into(), "".into()]),
            }
        }
        rows.push(row);
    }
    table(md, &header, &rows);

    if eval.cells.iter().any(|c| c.oscr_area.is_some()) {
        md.push_str("### OSCR\n\n");
        let mut header = vec!["Method".to_string()];
        header.extend(backbones.iter().cloned());
        let rows: Vec<Vec<String>> = ScoreKind::ALL
            .iter()
            .filter(|&&k| backbones.iter().any(|b| find(b, k).is_some()))
            .map(|&k| {
                let mut row = vec![label(k).to_string()];
                row.extend(backbones.iter().map(|b| {
                    find(b, k)
                        .and_then(|c| c.oscr_area)
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_default()
                }));
                row
            })
            .collect();
        table(md, &header, &rows);
    }

    let _ = writeln!(
        md,
        "### Decision statistics at {:.0}% OOD rejection\n",
        100.0 * eval.target_rejection
    );
    let header: Vec<String> = ["Backbone", "Method", "Threshold", "FPR (ID)", "ID kept as known", "ID retention"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = eval
        .cells
        .iter()
        .map(|c| {
            let threshold = c
                .threshold
                .parse::<f64>()
                .map(|t| if t.is_finite() { format!("{t:.4}") } else { c.threshold.clone() })
                .unwrap_or_else(|_| c.threshold.clone());
            vec![
                c.backbone_id.clone(),
                label(c.kind).to_string(),
                threshold,
                format!("{:.1}%", c.fpr_id),
                format!("{} / {}", c.id_kept, c.id_total),
                format!("{:.1}%", c.retention_rate),
            ]
        })
        .collect();
    table(md, &header, &rows);
}

fn fscil_section(md: &mut String, f: &FscilSummary) {
    md.push_str("## Few-shot class-incremental learning\n\n");
    let _ = writeln!(
        md,
        "Backbone `{}`, {} base classes, sessions {:?}, {} test samples, seed {}.\n",
        f.backbone_id, f.base_class_count, f.sessions, f.test_sample_count, f.seed
    );
    let rows: Vec<_> = f.runs.iter().map(|r| r.summary.clone()).collect();
    let shots: BTreeSet<usize> = TABLE_SHOTS
        .iter()
        .copied()
        .chain(rows.iter().map(|r| r.shots))
        .collect();
    let mut header = vec!["Method".to_string(), "Base acc.".to_string()];
    header.extend(shots.iter().map(|s| format!("{s}-shot")));
    let table_rows: Vec<Vec<String>> = summary_table(&rows)
        .into_iter()
        .map(|m| {
            let mut row = vec![m.method.to_string(), format!("{:.2}", m.base_accuracy)];
            row.extend(
                shots
                    .iter()
                    .map(|s| m.overall_by_shots.get(s).map(|v| format!("{v:.2}")).unwrap_or_default()),
            );
            row
        })
        .collect();
    table(md, &header, &table_rows);

    md.push_str("### Accuracy per session\n\n");
    let sessions = f.runs.iter().map(|r| r.sessions.len()).max().unwrap_or(0);
    let mut header = vec!["Method".to_string(), "Shots".to_string()];
    header.extend((0..sessions).map(|s| format!("Session {s}")));
    let rows: Vec<Vec<String>> = f
        .runs
        .iter()
        .map(|r| {
            let mut row = vec![r.summary.method.to_string(), r.summary.shots.to_string()];
            row.extend(r.sessions.iter().map(|s| format!("{:.2}", s.overall_accuracy)));
            row
        })
        .collect();
    table(md, &header, &rows);
}

pub fn run(args: &ReportArgs) -> Result<Outputs> {
    if args.eval.is_none() && args.fscil.is_none() {
        return Err(CliError::Usage("give --eval, --fscil or both".into()));
    }
    let eval: Option<EvalSummary> = args.eval.as_ref().map(|d| read_json(&d.join("eval.json"))).transpose()?;
    let fscil: Option<FscilSummary> = args.fscil.as_ref().map(|d| read_json(&d.join("fscil.json"))).transpose()?;

    let mut md = String::from("# Open-world evaluation report\n\n");
    if let Some(e) = &eval {
        osr_section(&mut md, e);
    }
    if let Some(f) = &fscil {
        fscil_section(&mut md, f);
    }
    let mut out = Outputs::default();
    out.add("report.md", md);
    Ok(out)
}

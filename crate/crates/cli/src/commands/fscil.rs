use std::collections::{BTreeMap, BTreeSet};

use ohz_core::fscil::{
    run_protocol, FscilError, Method, MethodParams, ProtocolData, SessionConfig, SessionResult,
    SummaryRow, summary_table,
};
use serde::{Deserialize, Serialize};

use super::load_features;
use crate::args::FscilArgs;
use crate::error::{CliError, Result};
use crate::output::{f6, Csv, Outputs};

/// Shot counts that always get a summary column.
pub const TABLE_SHOTS: [usize; 3] = [1, 5, 10];

/// Session settings read from `--protocol`; absent keys keep defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolFile {
    base_class_count: Option<usize>,
    sessions: Option<Vec<Vec<i64>>>,
    seed: Option<u64>,
    test_sample_count: Option<usize>,
    params: Option<MethodParams>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub summary: SummaryRow,
    pub sessions: Vec<SessionResult>,
    pub shot_indices: BTreeMap<i64, Vec<usize>>,
    pub orco_traces: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FscilSummary {
    pub backbone_id: String,
    pub base_class_count: usize,
    pub sessions: Vec<Vec<i64>>,
    pub seed: u64,
    pub test_sample_count: usize,
    pub params: MethodParams,
    pub runs: Vec<RunRecord>,
}

fn map_err(e: FscilError) -> CliError {
    match e {
        FscilError::InvalidConfig(_) => CliError::Usage(e.to_string()),
        other => CliError::compute(other),
    }
}

pub fn run(args: &FscilArgs) -> Result<Outputs> {
    let protocol: ProtocolFile = match &args.protocol {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?
        }
        None => ProtocolFile::default(),
    };
    let mut methods: Vec<Method> = Vec::new();
    for m in super::parse_list::<Method>(&args.methods, "method")? {
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let shots: BTreeSet<usize> = args.shots.iter().copied().collect();
    if methods.is_empty() || shots.is_empty() {
        return Err(CliError::Usage("need at least one method and one shot count".into()));
    }

    let defaults = SessionConfig::default();
    let base_config = SessionConfig {
        base_class_count: protocol.base_class_count.unwrap_or(defaults.base_class_count),
        sessions: protocol.sessions.unwrap_or(defaults.sessions),
        seed: args.seed.or(protocol.seed).unwrap_or(defaults.seed),
        test_sample_count: args
            .test_samples
            .or(protocol.test_sample_count)
            .unwrap_or(defaults.test_sample_count),
        params: protocol.params.unwrap_or_default(),
        ..defaults
    };

    let train = load_features(&args.train)?;
    let test = load_features(&args.test)?;
    if train.dim() != test.dim() {
        return Err(CliError::Usage(format!(
            "train has dimension {}, test has {}",
            train.dim(),
            test.dim()
        )));
    }
    let (train_x, test_x) = (train.to_matrix(), test.to_matrix());
    let data = ProtocolData {
        train: &train_x,
        train_labels: train.labels(),
        test: &test_x,
        test_labels: test.labels(),
    };

    let mut out = Outputs::default();
    let mut runs = Vec::new();
    let mut test_indices = None;
    for &method in &methods {
        for &s in &shots {
            let config = SessionConfig {
                method,
                shots: s,
                ..base_config.clone()
            };
            let outcome = run_protocol(&config, data).map_err(map_err)?;
            for res in &outcome.results {
                out.add(
                    format!("confusion_{method}_{s}shot_session{}.csv", res.session_index),
                    confusion_csv(res),
                );
            }
            test_indices.get_or_insert_with(|| outcome.test_indices.clone());
            runs.push(RunRecord {
                summary: outcome.summary,
                sessions: outcome.results,
                shot_indices: outcome.shot_indices,
                orco_traces: outcome.orco_traces,
            });
        }
    }

    let columns: BTreeSet<usize> = TABLE_SHOTS.iter().copied().chain(shots.iter().copied()).collect();
    let mut header = vec!["method".to_string(), "base_acc".to_string()];
    header.extend(columns.iter().map(|s| format!("overall_{s}shot")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header_refs);
    let rows: Vec<SummaryRow> = runs.iter().map(|r| r.summary.clone()).collect();
    for m in summary_table(&rows) {
        let mut fields = vec![m.method.to_string(), f6(m.base_accuracy)];
        fields.extend(columns.iter().map(|s| m.overall_by_shots.get(s).map(|&v| f6(v)).unwrap_or_default()));
        csv.row(&fields);
    }
    out.add("summary.csv", csv.finish());
    out.add_json(
        "test_indices.json",
        &serde_json::json!({
            "seed": base_config.seed,
            "test_sample_count": base_config.test_sample_count,
            "indices": test_indices.unwrap_or_default(),
        }),
    );
    out.add_json(
        "fscil.json",
        &FscilSummary {
            backbone_id: train.manifest.backbone_id.clone(),
            base_class_count: base_config.base_class_count,
            sessions: base_config.sessions.clone(),
            seed: base_config.seed,
            test_sample_count: base_config.test_sample_count,
            params: base_config.params,
            runs,
        },
    );
    Ok(out)
}

fn confusion_csv(res: &SessionResult) -> String {
    let mut header = vec!["true_class".to_string()];
    header.extend(res.class_ids.iter().map(|c| format!("pred_{c}")));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&refs);
    for (c, row) in res.class_ids.iter().zip(&res.confusion) {
        let mut fields = vec![c.to_string()];
        fields.extend(row.iter().map(|v| v.to_string()));
        csv.row(&fields);
    }
    csv.finish()
}

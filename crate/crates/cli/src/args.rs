use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "ohz",
    version,
    about = "Open-set scoring, OSR metrics and few-shot incremental protocols on pre-extracted features",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the known/unknown split and write role-filtered feature files.
    Split(SplitArgs),
    /// Train the linear probe and fit the preprocessing statistics.
    ProbeTrain(ProbeTrainArgs),
    /// Score ID and OOD test features with one or more score kinds.
    Score(ScoreArgs),
    /// Compute AUROC, AUPR, FPR@95, OSCR, curves and decision statistics.
    Eval(EvalArgs),
    /// Run the few-shot class-incremental protocol.
    Fscil(FscilArgs),
    /// Render a Markdown report from eval and fscil outputs.
    Report(ReportArgs),
    /// Write synthetic Gaussian-cluster feature files.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file whose keys supply any flag not given on the command line.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "OHZ_OUT", value_name = "DIR", default_value = "ohz-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Training features with original class ids.
    #[arg(long)]
    pub train: PathBuf,
    /// Test features with original class ids.
    #[arg(long)]
    pub test: PathBuf,
    /// Treat the K smallest class ids as known.
    #[arg(long, short = 'k', conflicts_with = "known_ids")]
    pub k: Option<usize>,
    /// Explicit known class ids.
    #[arg(long, value_delimiter = ',')]
    pub known_ids: Option<Vec<i64>>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ProbeTrainArgs {
    /// ID training features (labels already remapped to 0..K).
    #[arg(long)]
    pub train: PathBuf,
    /// Number of known classes; defaults to the largest label + 1.
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the training rows in file order.
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long, default_value_t = ohz_core::prep::DEFAULT_PRECISION_FLOOR)]
    pub precision_floor: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_delimiter = ',', default_value = "msp,energy,mahalanobis,knn")]
    pub kinds: Vec<String>,
    /// Probe checkpoint (needed by msp and energy).
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Preprocessing checkpoint (needed by mahalanobis and knn).
    #[arg(long)]
    pub prep: Option<PathBuf>,
    /// ID training features (needed by knn).
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub id_test: PathBuf,
    #[arg(long)]
    pub ood_test: PathBuf,
    #[arg(long, default_value_t = ohz_core::scores::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long = "knn-k", default_value_t = ohz_core::scores::DEFAULT_K)]
    pub knn_k: usize,
    /// Backbone name; defaults to the ID test manifest's backbone.
    #[arg(long)]
    pub backbone: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directories written by `score`, one per backbone.
    #[arg(long = "scores", value_delimiter = ',', required = true)]
    pub scores: Vec<PathBuf>,
    /// Fraction of OOD samples that must be rejected.
    #[arg(long, default_value_t = 0.95)]
    pub target_rejection: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct FscilArgs {
    /// Training features with original class ids.
    #[arg(long)]
    pub train: PathBuf,
    /// Test features with original class ids.
    #[arg(long)]
    pub test: PathBuf,
    /// Protocol file with session settings and method parameters.
    #[arg(long)]
    pub protocol: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "baseline,sppr,orco,concm")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub shots: Vec<usize>,
    /// Overrides the protocol file's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the protocol file's test sample count.
    #[arg(long)]
    pub test_samples: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `eval`.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Directory written by `fscil`.
    #[arg(long)]
    pub fscil: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Distance between cluster means in within-class deviations.
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 500)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 200)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic")]
    pub backbone: String,
    #[command(flatten)]
    pub common: Common,
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn render(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Array(items) => {
            let parts: Option<Vec<String>> = items.iter().map(render).collect();
            parts.map(|p| p.join(","))
        }
        _ => None,
    }
}

/// Appends `--flag value` for every config key the command line leaves
/// unset. Keys may be written with `-` or `_`. Boolean keys become bare
/// flags when true. `out` is skipped when `OHZ_OUT` is set.
pub fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let json: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::io(&path, format!("invalid config: {e}")))?;
    let serde_json::Value::Object(map) = json else {
        return Err(CliError::io(&path, "config must be a JSON object"));
    };
    let Some(sub_name) = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).find(|a| !a.starts_with('-')) else {
        return Ok(argv);
    };
    let root = Cli::command();
    let Some(sub) = root.find_subcommand(&sub_name) else {
        return Ok(argv);
    };

    let given: Vec<String> = argv
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut out = argv.clone();
    for (key, value) in map {
        let long = key.replace('_', "-");
        if long == "config" || given.contains(&long) {
            continue;
        }
        if long == "out" && std::env::var_os("OHZ_OUT").is_some() {
            continue;
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(long.as_str())) else {
            return Err(CliError::Usage(format!(
                "config key `{key}` is not a flag of `{sub_name}`"
            )));
        };
        if arg.get_action().takes_values() {
            let Some(v) = render(&value) else {
                return Err(CliError::Usage(format!("config key `{key}` has an unsupported value")));
            };
            out.push(format!("--{long}").into());
            out.push(v.into());
        } else {
            match value {
                serde_json::Value::Bool(true) => out.push(format!("--{long}").into()),
                serde_json::Value::Bool(false) => {}
                _ => {
                    return Err(CliError::Usage(format!("config key `{key}` must be true or false")));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_fills_missing_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"epochs": 3, "lr": 0.5, "no_shuffle": true, "train": "x.ohfs"}"#).unwrap();
        let argv = os(&["ohz", "probe-train", "--lr", "0.1", "--config", cfg.to_str().unwrap()]);
        let merged = merge_config(argv).unwrap();
        let cli = Cli::try_parse_from(merged).unwrap();
        let Command::ProbeTrain(a) = cli.command else { panic!() };
        assert_eq!(a.epochs, 3);
        assert_eq!(a.lr, 0.1);
        assert!(a.no_shuffle);
        assert_eq!(a.train, PathBuf::from("x.ohfs"));
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
        let err = merge_config(os(&["ohz", "eval", "--config", cfg.to_str().unwrap()])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}

use ohz_core::checkpoint::{encode_prep, encode_probe};
use ohz_core::probe::TrainConfig;
use ohz_core::scores::OsrArtifacts;

use super::{class_labels, load_features};
use crate::args::ProbeTrainArgs;
use crate::error::{CliError, Result};
use crate::output::{f6, Csv, Outputs};

pub fn run(args: &ProbeTrainArgs) -> Result<Outputs> {
    let train = load_features(&args.train)?;
    if train.is_empty() {
        return Err(CliError::Usage(format!("{} holds no rows", args.train.display())));
    }
    let labels = class_labels(&train, &args.train)?;
    let inferred = labels.iter().max().map_or(0, |m| m + 1);
    let num_classes = args.num_classes.unwrap_or(inferred);
    if num_classes < inferred {
        return Err(CliError::Usage(format!(
            "--num-classes {num_classes} but labels reach {}",
            inferred - 1
        )));
    }
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        momentum: args.momentum,
        seed: args.seed,
        shuffle: !args.no_shuffle,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let x = train.to_matrix();
    let (artifacts, outcome) =
        OsrArtifacts::fit(&x, &labels, num_classes, &config, args.precision_floor)
            .map_err(CliError::compute)?;
    for c in &outcome.missing_classes {
        eprintln!("warning: class {c} has no training rows");
    }

    let mut out = Outputs::default();
    out.add("probe.ohpm", encode_probe(&outcome.model, &config));
    out.add(
        "prep.ohps",
        encode_prep(
            artifacts.preprocessor.as_ref().expect("fitted"),
            artifacts.class_stats.as_ref().expect("fitted"),
        ),
    );
    let mut csv = Csv::new(&["epoch", "loss"]);
    for (i, loss) in outcome.loss_history.iter().enumerate() {
        csv.row(&[(i + 1).to_string(), f6(*loss)]);
    }
    out.add("loss_history.csv", csv.finish());
    out.add_json(
        "probe_train.json",
        &serde_json::json!({
            "backbone_id": train.manifest.backbone_id,
            "num_classes": num_classes,
            "dim": train.dim(),
            "config": config,
            "precision_floor": args.precision_floor,
            "shrinkage_lambda": artifacts.class_stats.as_ref().map(|s| s.shrinkage_lambda),
            "missing_classes": outcome.missing_classes,
            "loss_history": outcome.loss_history,
        }),
    );
    Ok(out)
}

use ohz_core::featstore::FeatureSet;
use ohz_core::synth::cluster_split;
use ohz_core::{Manifest, Matrix, SplitRole};

use crate::args::SynthArgs;
use crate::error::{CliError, Result};
use crate::output::Outputs;

fn to_set(m: &Matrix, labels: Vec<i64>, manifest: Manifest) -> Result<FeatureSet> {
    FeatureSet::from_matrix(m, labels, manifest).map_err(CliError::compute)
}

pub fn run(args: &SynthArgs) -> Result<Outputs> {
    if args.classes == 0 || args.dim < args.classes {
        return Err(CliError::Usage(format!(
            "need 1 <= classes <= dim, got {} classes in {} dimensions",
            args.classes, args.dim
        )));
    }
    if args.train_per_class == 0 {
        return Err(CliError::Usage("train-per-class must be at least 1".into()));
    }
    let data = cluster_split(
        args.classes,
        args.dim,
        args.separation,
        args.train_per_class,
        args.test_per_class,
        args.seed,
    );
    let manifest = |role| Manifest {
        backbone_id: args.backbone.clone(),
        split_role: role,
        feature_dim: args.dim,
        class_names: Some((0..args.classes).map(|c| format!("class_{c}")).collect()),
        source_dataset: format!("gaussian-clusters(separation={})", args.separation),
        extraction_seed: args.seed,
    };
    let mut out = Outputs::default();
    for (name, m, labels) in [
        ("train", &data.train, data.train_labels.clone()),
        ("test", &data.test, data.test_labels.clone()),
    ] {
        let set = to_set(m, labels, manifest(SplitRole::Raw))?;
        out.add(format!("{name}.ohfs"), set.to_bytes());
        out.add(format!("{name}.ohfs.manifest.json"), set.manifest_json());
    }
    Ok(out)
}

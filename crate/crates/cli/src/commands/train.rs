use anyhow::Context;

use gesturebench_core::data::Dataset;
use gesturebench_core::rng::child_seed;
use gesturebench_core::train::{train, ModelSpec};

use crate::commands::load_dataset;
use crate::config::CliConfigFile;
use crate::util::atomic_write;
use crate::{CliError, TrainArgs};

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&args.val_fraction) {
        return Err(CliError::Usage(format!(
            "--val-fraction must be in [0, 1), got {}",
            args.val_fraction
        )));
    }
    let config_file = CliConfigFile::load(args.config.as_deref())?;
    if let Some(family) = config_file.family() {
        if family != args.model {
            return Err(CliError::Usage(format!(
                "config family {family:?} does not match --model {:?}",
                args.model
            )));
        }
    }

    let data = load_dataset(&args.data, &args.model)?;
    if data.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "dataset {} is empty",
            args.data.display()
        )));
    }
    let classes = data.num_classes();
    let spec = match (args.model.as_str(), &data) {
        ("lstm", Dataset::Landmarks(_)) => ModelSpec::Lstm(config_file.lstm_config(classes)?),
        ("cnn3d", Dataset::Volumes(set)) => {
            ModelSpec::Cnn3d(config_file.cnn3d_config(classes, set.dims)?)
        }
        _ => unreachable!("load_dataset matches family to modality"),
    };
    let train_config = config_file.train_config(args.seed, args.epochs);

    // Hold out a validation slice; the checkpoint returned is the best one
    // by validation loss.
    let (train_set, val_set) =
        data.split(args.val_fraction, child_seed(train_config.seed, 0x5A))?;
    if val_set.is_empty() {
        return Err(CliError::Usage(format!(
            "--val-fraction {} leaves no validation samples for {} inputs; add samples or raise the fraction",
            args.val_fraction,
            data.len()
        )));
    }
    let (checkpoint, history) = train(&spec, &train_set, &val_set, &train_config)?;

    atomic_write(&args.out, &checkpoint.to_bytes()?)?;
    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| args.out.with_extension("history.json"));
    // The history file is a bare array of per-epoch records.
    let history_json =
        serde_json::to_vec_pretty(&history.epochs).context("serializing training history")?;
    atomic_write(&history_path, &history_json)?;

    let last = history.epochs.last();
    println!(
        "trained {} on {} samples ({} val), {} epochs, best val loss {:.4}, val acc {:.4} -> {}",
        args.model,
        train_set.len(),
        val_set.len(),
        history.epochs.len(),
        last.map_or(f64::NAN, |_| {
            history
                .epochs
                .iter()
                .map(|e| e.val_loss)
                .fold(f64::INFINITY, f64::min)
        }),
        last.map_or(f64::NAN, |e| e.val_accuracy),
        args.out.display()
    );
    Ok(())
}

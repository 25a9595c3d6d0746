use anyhow::Context;

use gesturebench_core::checkpoint::ModelCheckpoint;
use gesturebench_core::train::evaluate;

use crate::commands::load_dataset;
use crate::{CliError, EvalArgs};

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let checkpoint = ModelCheckpoint::load(&args.ckpt)?;
    let data = load_dataset(&args.data, checkpoint.descriptor.family_name())?;
    let metrics = evaluate(&checkpoint, &data)?;
    let json = serde_json::to_string_pretty(&metrics).context("serializing metrics")?;
    println!("{json}");
    Ok(())
}

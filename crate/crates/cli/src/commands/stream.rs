use std::io::{BufRead, Write};

use anyhow::Context;
use serde::Deserialize;

use gesturebench_core::checkpoint::{AnyModel, ModelCheckpoint};
use gesturebench_core::stream::StreamPipeline;

use crate::config::CliConfigFile;
use crate::{CliError, StreamArgs};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    frame: Vec<f64>,
}

pub fn run(args: StreamArgs) -> Result<(), CliError> {
    let checkpoint = ModelCheckpoint::load(&args.ckpt)?;
    let model = match AnyModel::from_checkpoint(&checkpoint)? {
        AnyModel::Lstm(m) => m,
        AnyModel::Cnn3d(_) => {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "stream mode needs an lstm checkpoint; {} holds a cnn3d model",
                args.ckpt.display()
            )))
        }
    };
    let config_file = CliConfigFile::load(args.config.as_deref())?;
    let stream_config = config_file.stream_config(model.config.num_classes)?;
    let mut pipeline =
        StreamPipeline::new(stream_config, model).map_err(|e| CliError::Usage(e.to_string()))?;

    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        let line = line.context("reading stdin")?;
        if line.trim().is_empty() {
            continue;
        }
        // Malformed lines still advance the stream as rejected frames.
        let frame = serde_json::from_str::<FrameLine>(&line)
            .map(|f| f.frame)
            .unwrap_or_default();
        for event in pipeline.push_frame(&frame) {
            let json = serde_json::to_string(&event).context("serializing event")?;
            writeln!(out, "{json}").context("writing stdout")?;
        }
    }
    out.flush().context("flushing stdout")?;
    Ok(())
}

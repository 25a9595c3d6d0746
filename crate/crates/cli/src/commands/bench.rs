use gesturebench_core::bench::{
    compare, estimate_cost, measure_latency, render_report, BenchInput, ModelMetrics, ReportFormat,
};
use gesturebench_core::checkpoint::{Descriptor, ModelCheckpoint};
use gesturebench_core::data::Dataset;
use gesturebench_core::train::evaluate;

use crate::commands::load_dataset;
use crate::config::CliConfigFile;
use crate::util::atomic_write;
use crate::{BenchArgs, CliError};

pub fn run(args: BenchArgs) -> Result<(), CliError> {
    let config_file = CliConfigFile::load(args.config.as_deref())?;
    let section = config_file.bench.as_ref();
    let trials = section.and_then(|b| b.trials).unwrap_or(args.trials);
    let warmup = section.and_then(|b| b.warmup).unwrap_or(args.warmup);
    let seq_len = section.and_then(|b| b.seq_len).unwrap_or(30);
    if trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }

    let lstm_ckpt = ModelCheckpoint::load(&args.ckpt_lstm)?;
    let cnn_ckpt = ModelCheckpoint::load(&args.ckpt_cnn)?;
    if !matches!(lstm_ckpt.descriptor, Descriptor::Lstm(_)) {
        return Err(CliError::Usage(format!(
            "--ckpt-lstm {} is a {} checkpoint",
            args.ckpt_lstm.display(),
            lstm_ckpt.descriptor.family_name()
        )));
    }
    if !matches!(cnn_ckpt.descriptor, Descriptor::Cnn3d(_)) {
        return Err(CliError::Usage(format!(
            "--ckpt-cnn {} is a {} checkpoint",
            args.ckpt_cnn.display(),
            cnn_ckpt.descriptor.family_name()
        )));
    }

    let lstm_data = load_dataset(&args.data_lstm, "lstm")?;
    let cnn_data = load_dataset(&args.data_cnn, "cnn3d")?;
    let lstm_metrics = evaluate(&lstm_ckpt, &lstm_data)?;
    let cnn_metrics = evaluate(&cnn_ckpt, &cnn_data)?;

    // Representative single inputs: the first sample of each eval set,
    // windowed to seq_len frames for the LSTM.
    let lstm_input = match &lstm_data {
        Dataset::Landmarks(set) => {
            let seq = &set[0];
            let take = seq.frames.len().min(seq_len);
            BenchInput::Window(gesturebench_core::data::landmarks::frames_to_tensor(
                &seq.frames[..take],
            ))
        }
        Dataset::Volumes(_) => unreachable!(),
    };
    let cnn_input = match &cnn_data {
        Dataset::Volumes(set) => BenchInput::Volume(set.samples[0].to_tensor()),
        Dataset::Landmarks(_) => unreachable!(),
    };

    let lstm_latency = measure_latency(&lstm_ckpt, &lstm_input, trials, warmup)?;
    let cnn_latency = measure_latency(&cnn_ckpt, &cnn_input, trials, warmup)?;
    let lstm_cost = estimate_cost(&lstm_ckpt, lstm_input.frames())?;
    let cnn_cost = estimate_cost(&cnn_ckpt, seq_len)?;

    let lstm_desc = format!("{}x63 landmark window", lstm_input.frames());
    let cnn_desc = match &cnn_ckpt.descriptor {
        Descriptor::Cnn3d(c) => format!(
            "{}x{}x{}x{} voxel clip",
            c.input_dims[0], c.input_dims[1], c.input_dims[2], c.input_dims[3]
        ),
        _ => unreachable!(),
    };

    let report = compare(
        ModelMetrics::assemble(
            lstm_desc,
            lstm_input.frames(),
            lstm_metrics.accuracy,
            lstm_latency,
            &lstm_cost,
        ),
        ModelMetrics::assemble(
            cnn_desc,
            cnn_input.frames(),
            cnn_metrics.accuracy,
            cnn_latency,
            &cnn_cost,
        ),
    );

    atomic_write(
        &args.out,
        render_report(&report, ReportFormat::Json).as_bytes(),
    )?;
    print!("{}", render_report(&report, ReportFormat::Text));
    Ok(())
}

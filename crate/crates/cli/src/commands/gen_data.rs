use anyhow::Context;

use gesturebench_core::data::dataset::{write_volume_set, VolumeSet};
use gesturebench_core::data::synth::{default_templates, generate_gesture};
use gesturebench_core::data::volume::render_volume;
use gesturebench_core::rng::child_seed;

use crate::commands::{LANDMARKS_FILE, VOLUMES_DIR};
use crate::config::resolve_seed;
use crate::util::{atomic_write, atomic_write_dir};
use crate::{CliError, GenDataArgs};

fn parse_dims(text: &str) -> Result<[usize; 4], CliError> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            CliError::Usage(format!("--volumes expects T,H,W,C integers, got {text:?}"))
        })?;
    let dims: [usize; 4] = parts
        .try_into()
        .map_err(|_| CliError::Usage(format!("--volumes expects exactly 4 dims, got {text:?}")))?;
    Ok(dims)
}

pub fn run(args: GenDataArgs) -> Result<(), CliError> {
    if args.classes == 0 {
        return Err(CliError::Usage("--classes must be >= 1".into()));
    }
    if args.samples_per_class == 0 {
        return Err(CliError::Usage("--samples-per-class must be >= 1".into()));
    }
    if args.frames < 2 {
        return Err(CliError::Usage("--frames must be >= 2".into()));
    }
    if !(args.noise.is_finite() && args.noise >= 0.0) {
        return Err(CliError::Usage(format!(
            "--noise must be >= 0, got {}",
            args.noise
        )));
    }
    let volume_dims = args.volumes.as_deref().map(parse_dims).transpose()?;
    if let Some(dims) = volume_dims {
        if dims[3] != 1 {
            return Err(CliError::Usage(format!(
                "--volumes channel dim must be 1 (intensity renderer), got {}",
                dims[3]
            )));
        }
        if dims[0] < 2 {
            return Err(CliError::Usage("--volumes time dim must be >= 2".into()));
        }
    }

    let seed = resolve_seed(args.seed);
    let templates = default_templates(args.classes).map_err(|e| CliError::Usage(e.to_string()))?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    // Sample i of the run gets child_seed(seed, i) in both modalities, so
    // paired files describe the same gesture instance.
    let mut sequences = Vec::with_capacity(args.classes * args.samples_per_class);
    for (ci, template) in templates.iter().enumerate() {
        for j in 0..args.samples_per_class {
            let index = (ci * args.samples_per_class + j) as u64;
            let sample_seed = child_seed(seed, index);
            sequences.push(generate_gesture(
                template,
                args.frames,
                args.noise,
                sample_seed,
            )?);
        }
    }
    // Serialize via the core writer into a temp file, then publish.
    let landmarks_path = args.out.join(LANDMARKS_FILE);
    {
        let tmp_dir = tempdir_in(&args.out)?;
        let tmp_file = tmp_dir.join(LANDMARKS_FILE);
        gesturebench_core::data::write_landmarks_jsonl(&tmp_file, &sequences)?;
        let bytes = std::fs::read(&tmp_file)
            .with_context(|| format!("reading back {}", tmp_file.display()))?;
        atomic_write(&landmarks_path, &bytes)?;
        std::fs::remove_dir_all(&tmp_dir).ok();
    }

    let mut volume_note = String::new();
    if let Some(dims) = volume_dims {
        let mut samples = Vec::with_capacity(sequences.len());
        for (ci, template) in templates.iter().enumerate() {
            for j in 0..args.samples_per_class {
                let index = (ci * args.samples_per_class + j) as u64;
                let sample_seed = child_seed(seed, index);
                let vol_seq = generate_gesture(template, dims[0], args.noise, sample_seed)?;
                samples.push(render_volume(&vol_seq, dims, args.blob_sigma)?);
            }
        }
        let set = VolumeSet {
            dims,
            classes: args.classes,
            samples,
        };
        let volumes_dir = args.out.join(VOLUMES_DIR);
        atomic_write_dir(&volumes_dir, |tmp| {
            write_volume_set(tmp, &set)?;
            Ok(())
        })?;
        volume_note = format!(", volumes {}x{}x{}x{}", dims[0], dims[1], dims[2], dims[3]);
    }

    println!(
        "generated {} samples ({} classes x {}), {} frames/seq, noise {}, seed {}{volume_note} -> {}",
        sequences.len(),
        args.classes,
        args.samples_per_class,
        args.frames,
        args.noise,
        seed,
        args.out.display()
    );
    Ok(())
}

fn tempdir_in(parent: &std::path::Path) -> Result<std::path::PathBuf, CliError> {
    let dir = parent.join(format!(".gen-tmp-{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir)
            .with_context(|| format!("clearing {}", dir.display()))
            .map_err(CliError::Runtime)?;
    }
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(CliError::Runtime)?;
    Ok(dir)
}

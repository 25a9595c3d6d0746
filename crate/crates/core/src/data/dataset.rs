//! Dataset containers, file formats, and the stratified split.
//!
//! Landmark sets are JSON-lines text (one `{"label": .., "frames": [[..]]}`
//! record per line). Volume sets are a `manifest.json` plus one binary
//! `.gvol` file per sample: magic "GVOL", u32 version, four u32 dims, then
//! little-endian 32-bit floats in row-major (T, H, W, C) order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::landmarks::{LandmarkFrame, LandmarkSequence, FRAME_FEATURES};
use crate::data::volume::FrameVolume;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const GVOL_MAGIC: &[u8; 4] = b"GVOL";
pub const GVOL_VERSION: u32 = 1;

/// A labeled volume collection with uniform dims.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSet {
    pub dims: [usize; 4],
    pub classes: usize,
    pub samples: Vec<FrameVolume>,
}

/// Either modality, as consumed by the trainer and evaluator.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Landmarks(Vec<LandmarkSequence>),
    Volumes(VolumeSet),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Landmarks(s) => s.len(),
            Dataset::Volumes(v) => v.samples.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn modality(&self) -> &'static str {
        match self {
            Dataset::Landmarks(_) => "landmark sequences",
            Dataset::Volumes(_) => "frame volumes",
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        match self {
            Dataset::Landmarks(s) => s.iter().map(|x| x.label).collect(),
            Dataset::Volumes(v) => v.samples.iter().map(|x| x.label).collect(),
        }
    }

    /// Smallest class count covering every label (volume sets carry an
    /// explicit count).
    pub fn num_classes(&self) -> usize {
        match self {
            Dataset::Landmarks(s) => s.iter().map(|x| x.label + 1).max().unwrap_or(0),
            Dataset::Volumes(v) => v.classes,
        }
    }

    fn select(&self, indices: &[usize]) -> Dataset {
        match self {
            Dataset::Landmarks(s) => {
                Dataset::Landmarks(indices.iter().map(|&i| s[i].clone()).collect())
            }
            Dataset::Volumes(v) => Dataset::Volumes(VolumeSet {
                dims: v.dims,
                classes: v.classes,
                samples: indices.iter().map(|&i| v.samples[i].clone()).collect(),
            }),
        }
    }

    /// Stratified (train, test) split: per class, `floor(count * fraction)`
    /// samples go to the test side, chosen by a seeded shuffle. Disjoint and
    /// exhaustive by construction.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let (train_idx, test_idx) = stratified_split(&self.labels(), test_fraction, seed)?;
        Ok((self.select(&train_idx), self.select(&test_idx)))
    }
}

/// Index-level stratified split; returns (train, test) indices in ascending
/// order within each side.
pub fn stratified_split(
    labels: &[usize],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let classes = labels.iter().max().expect("non-empty") + 1;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &label) in labels.iter().enumerate() {
        per_class[label].push(i);
    }
    let mut rng = Rng::seed_from(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in per_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::UnsplittableClass {
                class,
                count: members.len(),
            });
        }
        let take = (members.len() as f64 * test_fraction).floor() as usize;
        rng.shuffle(&mut members);
        test.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    label: usize,
    frames: Vec<Vec<f64>>,
}

/// One JSON record per sequence, one line per record.
pub fn write_landmarks_jsonl(path: &Path, set: &[LandmarkSequence]) -> Result<()> {
    let display = path.display().to_string();
    let file = fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut out = BufWriter::new(file);
    for seq in set {
        let record = JsonlRecord {
            label: seq.label,
            frames: seq.frames.iter().map(|f| f.values().to_vec()).collect(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::parse(&display, format!("serialize: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io(&display, e))?;
    }
    out.flush().map_err(|e| Error::io(&display, e))
}

pub fn read_landmarks_jsonl(path: &Path) -> Result<Vec<LandmarkSequence>> {
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(&display, format!("line {}: {e}", lineno + 1)))?;
        if record.frames.is_empty() {
            return Err(Error::parse(
                &display,
                format!("line {}: record has no frames", lineno + 1),
            ));
        }
        let mut frames = Vec::with_capacity(record.frames.len());
        for (fi, frame) in record.frames.iter().enumerate() {
            if frame.len() != FRAME_FEATURES {
                return Err(Error::parse(
                    &display,
                    format!(
                        "line {}: frame {fi} has {} features, expected {FRAME_FEATURES}",
                        lineno + 1,
                        frame.len()
                    ),
                ));
            }
            if frame.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(
                    &display,
                    format!("line {}: frame {fi} contains non-finite values", lineno + 1),
                ));
            }
            let mut values = [0.0; FRAME_FEATURES];
            values.copy_from_slice(frame);
            frames.push(LandmarkFrame(values));
        }
        out.push(LandmarkSequence {
            frames,
            label: record.label,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dims: [usize; 4],
    classes: usize,
    samples: Vec<ManifestSample>,
}

#[derive(Serialize, Deserialize)]
struct ManifestSample {
    label: usize,
    file: String,
}

fn write_gvol(path: &Path, volume: &FrameVolume) -> Result<()> {
    let display = path.display().to_string();
    let file = fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(&display, e);
    out.write_all(GVOL_MAGIC).map_err(io_err)?;
    out.write_all(&GVOL_VERSION.to_le_bytes()).map_err(io_err)?;
    for &d in &volume.dims {
        out.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
    }
    for &v in &volume.data {
        out.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn read_gvol(path: &Path, expected_dims: [usize; 4], label: usize) -> Result<FrameVolume> {
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&display, e))?;
    let fail = |msg: String| Error::parse(&display, msg);
    if bytes.len() < 24 {
        return Err(fail(format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[..4] != GVOL_MAGIC {
        return Err(fail("bad magic, expected GVOL".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != GVOL_VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let dims = [
        u32_at(8) as usize,
        u32_at(12) as usize,
        u32_at(16) as usize,
        u32_at(20) as usize,
    ];
    if dims != expected_dims {
        return Err(fail(format!(
            "dims {dims:?} do not match manifest dims {expected_dims:?}"
        )));
    }
    let numel: usize = dims.iter().product();
    let payload = &bytes[24..];
    if payload.len() != numel * 4 {
        return Err(fail(format!(
            "payload is {} bytes, expected {} for dims {dims:?}",
            payload.len(),
            numel * 4
        )));
    }
    let mut data = Vec::with_capacity(numel);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        if !(0.0..=1.0).contains(&v) {
            return Err(fail(format!(
                "voxel {i} value {v} outside [0, 1] (corrupt data)"
            )));
        }
        data.push(v);
    }
    FrameVolume::new(dims, data, label)
}

/// Write `manifest.json` plus one `.gvol` per sample under `dir`.
pub fn write_volume_set(dir: &Path, set: &VolumeSet) -> Result<()> {
    let display = dir.display().to_string();
    fs::create_dir_all(dir).map_err(|e| Error::io(&display, e))?;
    let mut samples = Vec::with_capacity(set.samples.len());
    for (i, volume) in set.samples.iter().enumerate() {
        if volume.dims != set.dims {
            return Err(Error::InvalidConfig(format!(
                "sample {i} dims {:?} do not match set dims {:?}",
                volume.dims, set.dims
            )));
        }
        let name = format!("sample_{i:06}.gvol");
        write_gvol(&dir.join(&name), volume)?;
        samples.push(ManifestSample {
            label: volume.label,
            file: name,
        });
    }
    let manifest = Manifest {
        dims: set.dims,
        classes: set.classes,
        samples,
    };
    let path = dir.join("manifest.json");
    let display = path.display().to_string();
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::parse(&display, e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&display, e))
}

pub fn read_volume_set(dir: &Path) -> Result<VolumeSet> {
    let path = dir.join("manifest.json");
    let display = path.display().to_string();
    let file = fs::File::open(&path).map_err(|e| Error::io(&display, e))?;
    let mut text = String::new();
    BufReader::new(file)
        .read_to_string(&mut text)
        .map_err(|e| Error::io(&display, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&display, e.to_string()))?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let file = dir.join(&entry.file);
        if !file.exists() {
            return Err(Error::parse(
                &display,
                format!("manifest references missing file {:?}", entry.file),
            ));
        }
        if entry.label >= manifest.classes {
            return Err(Error::parse(
                &display,
                format!(
                    "sample {:?} label {} out of range for {} classes",
                    entry.file, entry.label, manifest.classes
                ),
            ));
        }
        samples.push(read_gvol(&file, manifest.dims, entry.label)?);
    }
    Ok(VolumeSet {
        dims: manifest.dims,
        classes: manifest.classes,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{default_templates, generate_dataset};
    use crate::data::volume::render_volume;

    fn small_landmark_set() -> Vec<LandmarkSequence> {
        let templates = default_templates(3).unwrap();
        generate_dataset(&templates, 4, 5, 0.01, 7).unwrap()
    }

    #[test]
    fn jsonl_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.jsonl");
        let set = small_landmark_set();
        write_landmarks_jsonl(&path, &set).unwrap();
        let back = read_landmarks_jsonl(&path).unwrap();
        assert_eq!(set.len(), back.len());
        for (a, b) in set.iter().zip(&back) {
            assert_eq!(a.label, b.label);
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                for (x, y) in fa.values().iter().zip(fb.values()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn jsonl_parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"label\":0,\"frames\":[[1,2]]}\nnot json\n").unwrap();
        let err = read_landmarks_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn volume_set_round_trip_and_rewrite_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let set_dir = dir.path().join("volumes");
        let templates = default_templates(2).unwrap();
        let seqs = generate_dataset(&templates, 2, 4, 0.01, 3).unwrap();
        let volumes: Vec<FrameVolume> = seqs
            .iter()
            .map(|s| render_volume(s, [4, 12, 12, 1], 1.5).unwrap())
            .collect();
        let set = VolumeSet {
            dims: [4, 12, 12, 1],
            classes: 2,
            samples: volumes,
        };
        write_volume_set(&set_dir, &set).unwrap();
        let back = read_volume_set(&set_dir).unwrap();
        assert_eq!(back.classes, 2);
        assert_eq!(back.dims, set.dims);
        // Values survive the f32 narrowing exactly once: a second write must
        // reproduce identical bytes.
        let set_dir2 = dir.path().join("volumes2");
        write_volume_set(&set_dir2, &back).unwrap();
        for i in 0..set.samples.len() {
            let name = format!("sample_{i:06}.gvol");
            let a = fs::read(set_dir.join(&name)).unwrap();
            let b = fs::read(set_dir2.join(&name)).unwrap();
            assert_eq!(a, b, "gvol {i} bytes changed across round trip");
        }
    }

    #[test]
    fn truncated_gvol_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let set_dir = dir.path().join("volumes");
        let vol = FrameVolume::new([2, 4, 4, 1], vec![0.5; 32], 0).unwrap();
        let set = VolumeSet {
            dims: [2, 4, 4, 1],
            classes: 1,
            samples: vec![vol],
        };
        write_volume_set(&set_dir, &set).unwrap();
        let path = set_dir.join("sample_000000.gvol");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = read_volume_set(&set_dir).unwrap_err().to_string();
        assert!(err.contains("payload"), "{err}");
    }

    #[test]
    fn manifest_missing_file_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let set_dir = dir.path().join("volumes");
        fs::create_dir_all(&set_dir).unwrap();
        fs::write(
            set_dir.join("manifest.json"),
            r#"{"dims":[1,2,2,1],"classes":1,"samples":[{"label":0,"file":"ghost.gvol"}]}"#,
        )
        .unwrap();
        let err = read_volume_set(&set_dir).unwrap_err().to_string();
        assert!(err.contains("ghost.gvol"), "{err}");
    }

    #[test]
    fn stratified_split_is_exact_and_deterministic() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let (train, test) = stratified_split(&labels, 0.2, 9).unwrap();
        assert_eq!(test.len(), 6);
        assert_eq!(train.len(), 24);
        for class in 0..3 {
            assert_eq!(test.iter().filter(|&&i| labels[i] == class).count(), 2);
        }
        let (train2, test2) = stratified_split(&labels, 0.2, 9).unwrap();
        assert_eq!((train, test), (train2, test2));
    }

    #[test]
    fn split_union_is_original_multiset() {
        let set = Dataset::Landmarks(small_landmark_set());
        let (train, test) = set.split(0.25, 4).unwrap();
        assert_eq!(train.len() + test.len(), set.len());
        let mut union: Vec<usize> = train.labels();
        union.extend(test.labels());
        union.sort_unstable();
        let mut original = set.labels();
        original.sort_unstable();
        assert_eq!(union, original);
    }

    #[test]
    fn singleton_class_rejected() {
        let labels = vec![0, 0, 1];
        assert!(matches!(
            stratified_split(&labels, 0.2, 1),
            Err(Error::UnsplittableClass { class: 1, count: 1 })
        ));
    }
}

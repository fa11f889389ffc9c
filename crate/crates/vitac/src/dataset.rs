//! Paired visual-tactile dataset on disk: a TOML manifest plus one tensor
//! container per sequence.
//!
//! Visual frames are stored as their 8-bit codes in f32 (exact), tactile
//! depth, proprioception, actions and rewards as f32.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vitac_core::collect::Sequence;
use vitac_core::data::Split;
use vitac_core::nn::checkpoint::Checkpoint;
use vitac_core::nn::Tensor;
use vitac_core::tactile::ContactDepthImage;
use vitac_core::world::{Action, ShapeKind};

use crate::run::write_atomic;
use crate::Error;

pub const FORMAT: &str = "vitac-dataset-1";
pub const MANIFEST: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub object: ShapeKind,
    pub image_size: usize,
    pub tactile_rows: usize,
    pub tactile_cols: usize,
    pub frame_stack: usize,
    /// Digest of the configuration that produced the data.
    pub config_digest: String,
    pub sequence: Vec<SequenceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub index: usize,
    /// Episode seed; it determines every randomized draw of the episode.
    /// Stored as a string since TOML integers are signed 64-bit.
    #[serde(with = "u64_string")]
    pub seed: u64,
    pub split: Split,
    pub success: bool,
    pub final_distance: f64,
    pub observations: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn splits(&self) -> Vec<Split> {
        self.manifest.sequence.iter().map(|e| e.split).collect()
    }
}

mod u64_string {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

pub fn encode_sequence(seq: &Sequence) -> Vec<u8> {
    let t = seq.observations();
    let n = seq.image_size;
    let (rows, cols) = seq.tactile.first().map(|c| (c.rows, c.cols)).unwrap_or((0, 0));
    let mut ck = Checkpoint::new();
    ck.push("visual", Tensor::new(&[t, 3, n, n], seq.frames.iter().flatten().map(|&q| q as f32).collect()));
    ck.push("tactile", Tensor::new(&[t, rows, cols], seq.tactile.iter().flat_map(|c| c.values.iter().copied()).collect()));
    ck.push("proprio", Tensor::new(&[t, 5], seq.proprio.iter().flatten().copied().collect()));
    let steps = seq.steps();
    ck.push("actions", Tensor::new(&[steps, 2], seq.actions.iter().flat_map(|a| [a.dx as f32, a.dy as f32]).collect()));
    ck.push("rewards", Tensor::new(&[steps], seq.rewards.iter().map(|&r| r as f32).collect()));
    ck.encode()
}

pub fn decode_sequence(bytes: &[u8], entry: &SequenceEntry) -> Result<Sequence, Error> {
    let ck = Checkpoint::decode(bytes)?;
    let get = |name: &str| ck.get(name).ok_or_else(|| Error::Dataset(format!("{}: missing `{name}`", entry.file)));
    let visual = get("visual")?;
    let tactile = get("tactile")?;
    let (proprio, actions, rewards) = (get("proprio")?, get("actions")?, get("rewards")?);
    let vs = visual.shape();
    let ts = tactile.shape();
    if vs.len() != 4 || ts.len() != 3 || vs[0] != ts[0] || vs[0] != entry.observations || proprio.shape() != [vs[0], 5] {
        return Err(Error::Dataset(format!("{}: inconsistent tensor shapes", entry.file)));
    }
    if actions.shape() != [vs[0].saturating_sub(1), 2] || rewards.shape() != [vs[0].saturating_sub(1)] {
        return Err(Error::Dataset(format!("{}: action or reward count does not match the steps", entry.file)));
    }
    let frame = vs[1] * vs[2] * vs[3];
    let mut frames = Vec::with_capacity(vs[0]);
    for chunk in visual.data().chunks(frame.max(1)) {
        if chunk.iter().any(|&v| !(0.0..=255.0).contains(&v) || v.fract() != 0.0) {
            return Err(Error::Dataset(format!("{}: visual codes must be integers in [0, 255]", entry.file)));
        }
        frames.push(chunk.iter().map(|&v| v as u8).collect());
    }
    let plane = ts[1] * ts[2];
    Ok(Sequence {
        seed: entry.seed,
        success: entry.success,
        final_distance: entry.final_distance,
        image_size: vs[2],
        frames,
        tactile: tactile.data().chunks(plane.max(1)).map(|c| ContactDepthImage { rows: ts[1], cols: ts[2], values: c.to_vec() }).collect(),
        proprio: proprio.data().chunks(5).map(|c| [c[0], c[1], c[2], c[3], c[4]]).collect(),
        actions: actions.data().chunks(2).map(|c| Action::new(c[0] as f64, c[1] as f64)).collect(),
        rewards: rewards.data().iter().map(|&r| r as f64).collect(),
    })
}

pub fn sequence_file(index: usize) -> String {
    format!("seq_{index:05}.vtac")
}

/// Writes manifest and payloads into `dir`, each file atomically.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (seq, entry) in data.sequences.iter().zip(&data.manifest.sequence) {
        write_atomic(&dir.join(&entry.file), &encode_sequence(seq))?;
    }
    let text = toml::to_string(&data.manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST), text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, Error> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = toml::from_str(&text)?;
    if m.format != FORMAT {
        return Err(Error::Dataset(format!("unknown dataset format `{}`", m.format)));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, Error> {
    let manifest = read_manifest(dir)?;
    let mut sequences = Vec::with_capacity(manifest.sequence.len());
    for entry in &manifest.sequence {
        let path: PathBuf = dir.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        sequences.push(decode_sequence(&bytes, entry)?);
    }
    Ok(Dataset { manifest, sequences })
}

pub fn build_manifest(
    sequences: &[Sequence],
    splits: &[Split],
    seed: u64,
    world: &vitac_core::world::EpisodeConfig,
    config_digest: String,
) -> Manifest {
    Manifest {
        format: FORMAT.to_string(),
        seed,
        object: world.object,
        image_size: world.render.height,
        tactile_rows: world.sensor.rows,
        tactile_cols: world.sensor.cols,
        frame_stack: world.frame_stack,
        config_digest,
        sequence: sequences
            .iter()
            .zip(splits)
            .enumerate()
            .map(|(index, (s, &split))| SequenceEntry {
                index,
                seed: s.seed,
                split,
                success: s.success,
                final_distance: s.final_distance,
                observations: s.observations(),
                file: sequence_file(index),
            })
            .collect(),
    }
}

//! Checkpoint file format.
//!
//! Layout (all little-endian):
//!   magic "TFMCKPT1" | u32 version | u64 config-hash | u32 entry count |
//!   entries: u16 name length, name bytes, u8 rank, u64 dims..., f32 values.
//!
//! Parameters, batch-norm running statistics and optimizer state all ride as
//! entries, so `load(save(x))` is bitwise `x` and training resumes exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Matcher;
use crate::optim::Adam;
use crate::params::ParamId;

pub const MAGIC: &[u8; 8] = b"TFMCKPT1";
pub const VERSION: u32 = 1;

const STEP_ENTRY: &str = "trainer.step";

#[derive(Clone, Debug, PartialEq)]
pub struct RawEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointData {
    pub config_hash: u64,
    pub entries: Vec<RawEntry>,
}

pub fn write_file(path: &Path, data: &CheckpointData) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&data.config_hash.to_le_bytes())?;
    f.write_all(&(data.entries.len() as u32).to_le_bytes())?;
    for e in &data.entries {
        let name = e.name.as_bytes();
        f.write_all(&(name.len() as u16).to_le_bytes())?;
        f.write_all(name)?;
        f.write_all(&[e.shape.len() as u8])?;
        for &d in &e.shape {
            f.write_all(&(d as u64).to_le_bytes())?;
        }
        let n: usize = e.shape.iter().product();
        debug_assert_eq!(n, e.values.len());
        let mut buf = Vec::with_capacity(4 * n);
        for v in &e.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_file(path: &Path) -> Result<CheckpointData> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Format(format!("{}: truncated checkpoint", path.display())));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(Error::Format(format!("{}: bad checkpoint magic", path.display())));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("{}: unsupported version {version}", path.display())));
    }
    let config_hash = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Format(format!("{}: non-UTF8 entry name", path.display())))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(&mut pos, 4 * n)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(RawEntry { name, shape, values });
    }
    Ok(CheckpointData { config_hash, entries })
}

const CONFIG_ENTRY: &str = "meta.config";

/// Snapshot a matcher (and optionally its optimizer) into checkpoint data.
/// The config text rides along as an entry so a checkpoint is self-contained.
pub fn snapshot(matcher: &Matcher, trainer: Option<(&Adam, u64)>) -> CheckpointData {
    let mut entries: Vec<RawEntry> = matcher
        .store
        .entries()
        .iter()
        .map(|e| RawEntry { name: e.name.clone(), shape: e.shape.clone(), values: e.values.clone() })
        .collect();
    let cfg_bytes = matcher.cfg.to_text().into_bytes();
    entries.push(RawEntry {
        name: CONFIG_ENTRY.into(),
        shape: vec![cfg_bytes.len()],
        values: cfg_bytes.iter().map(|&b| b as f32).collect(),
    });
    if let Some((adam, step)) = trainer {
        entries.push(RawEntry {
            name: STEP_ENTRY.into(),
            shape: vec![2],
            values: vec![step as f32, adam.step as f32],
        });
        for (i, e) in matcher.store.entries().iter().enumerate() {
            if e.trainable {
                entries.push(RawEntry {
                    name: format!("trainer.adam.m.{}", e.name),
                    shape: e.shape.clone(),
                    values: adam.m[i].clone(),
                });
                entries.push(RawEntry {
                    name: format!("trainer.adam.v.{}", e.name),
                    shape: e.shape.clone(),
                    values: adam.v[i].clone(),
                });
            }
        }
    }
    CheckpointData { config_hash: matcher.cfg.hash(), entries }
}

/// Restored trainer state, when the checkpoint carried one.
pub struct TrainerState {
    pub adam: Adam,
    pub step: u64,
}

/// Load checkpoint data into an existing matcher. Prints a warning to stderr
/// when the stored config hash differs; errors on unknown names or shape
/// mismatches.
pub fn restore(matcher: &mut Matcher, data: &CheckpointData) -> Result<Option<TrainerState>> {
    if data.config_hash != matcher.cfg.hash() {
        eprintln!(
            "warning: checkpoint config hash {:016x} differs from current config {:016x}",
            data.config_hash,
            matcher.cfg.hash()
        );
    }
    let mut adam = Adam::new(&matcher.store);
    let mut step = None;
    for e in &data.entries {
        if e.name == CONFIG_ENTRY {
            continue;
        }
        if e.name == STEP_ENTRY {
            if e.values.len() == 2 {
                step = Some((e.values[0] as u64, e.values[1] as u64));
            }
            continue;
        }
        if let Some(rest) = e.name.strip_prefix("trainer.adam.m.") {
            let id = named_id(matcher, rest, &e.shape)?;
            adam.m[id.0] = e.values.clone();
            continue;
        }
        if let Some(rest) = e.name.strip_prefix("trainer.adam.v.") {
            let id = named_id(matcher, rest, &e.shape)?;
            adam.v[id.0] = e.values.clone();
            continue;
        }
        let id = named_id(matcher, &e.name, &e.shape)?;
        matcher.store.set_values_f32(id, e.values.clone());
    }
    Ok(step.map(|(s, adam_step)| {
        adam.step = adam_step;
        TrainerState { adam, step: s }
    }))
}

fn named_id(matcher: &Matcher, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = matcher
        .store
        .id_by_name(name)
        .ok_or_else(|| Error::Format(format!("checkpoint entry '{name}' has no matching parameter")))?;
    let want = &matcher.store.entry(id).shape;
    if want != shape {
        return Err(Error::Format(format!(
            "checkpoint entry '{name}' shape {shape:?} does not match model shape {want:?}"
        )));
    }
    Ok(id)
}

pub fn save_matcher(path: &Path, matcher: &Matcher, trainer: Option<(&Adam, u64)>) -> Result<()> {
    write_file(path, &snapshot(matcher, trainer))
}

pub fn load_matcher(path: &Path, matcher: &mut Matcher) -> Result<Option<TrainerState>> {
    let data = read_file(path)?;
    restore(matcher, &data)
}

/// Read the embedded run config of a checkpoint, if present.
pub fn embedded_config(path: &Path) -> Result<Option<crate::config::RunConfig>> {
    let data = read_file(path)?;
    for e in &data.entries {
        if e.name == CONFIG_ENTRY {
            let bytes: Vec<u8> = e.values.iter().map(|&v| v as u8).collect();
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Format(format!("{}: bad embedded config", path.display())))?;
            return Ok(Some(crate::config::RunConfig::from_text(&text)?));
        }
    }
    Ok(None)
}

/// Build a matcher from a checkpoint using its embedded config (or the
/// supplied one) and restore all weights.
pub fn open_matcher(
    path: &Path,
    config: Option<crate::config::RunConfig>,
) -> Result<(Matcher, Option<TrainerState>)> {
    let cfg = match config {
        Some(c) => c,
        None => embedded_config(path)?.ok_or_else(|| {
            Error::Format(format!(
                "{}: checkpoint has no embedded config; pass --config",
                path.display()
            ))
        })?,
    };
    let mut matcher = Matcher::init(cfg)?;
    let state = load_matcher(path, &mut matcher)?;
    Ok((matcher, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn tiny_matcher() -> Matcher {
        Matcher::init(RunConfig {
            widths: [4, 6, 8, 12],
            coarse_dim: 8,
            fine_dim: 4,
            heads_coarse: 2,
            heads_fine: 2,
            topics: 2,
            covisible: 1,
            topic_layers: 1,
            ..RunConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let matcher = tiny_matcher();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_matcher(&p, &matcher, None).unwrap();

        let mut restored = tiny_matcher();
        // Scribble over the restored model first so the load has to work.
        let id = restored.store.id_by_name("topics.bank").unwrap();
        let n = restored.store.entry(id).values.len();
        restored.store.set_values_f32(id, vec![9.0; n]);
        load_matcher(&p, &mut restored).unwrap();

        for (a, b) in matcher.store.entries().iter().zip(restored.store.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.values, b.values, "entry {} not bitwise equal", a.name);
        }

        // Round-trip the raw file too.
        let data = read_file(&p).unwrap();
        let p2 = dir.path().join("m2.ckpt");
        write_file(&p2, &data).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn trainer_state_round_trips() {
        let matcher = tiny_matcher();
        let mut adam = Adam::new(&matcher.store);
        adam.step = 17;
        adam.m[0][0] = 0.5;
        adam.v[0][0] = 0.25;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        save_matcher(&p, &matcher, Some((&adam, 42))).unwrap();

        let mut restored = tiny_matcher();
        let state = load_matcher(&p, &mut restored).unwrap().unwrap();
        assert_eq!(state.step, 42);
        assert_eq!(state.adam.step, 17);
        assert_eq!(state.adam.m[0][0], 0.5);
        assert_eq!(state.adam.v[0][0], 0.25);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        std::fs::write(&p, b"NOTATFMCKPT").unwrap();
        assert!(matches!(read_file(&p), Err(Error::Format(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let matcher = tiny_matcher();
        let mut data = snapshot(&matcher, None);
        data.entries[0].shape = vec![1, 1];
        data.entries[0].values = vec![0.0];
        let mut restored = tiny_matcher();
        assert!(restore(&mut restored, &data).is_err());
    }
}

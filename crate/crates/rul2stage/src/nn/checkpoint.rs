//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//! magic `RUL2STAGE-CKPT` | version u32 | head u8 | six u32 spec dims
//! (n_steps, step_input, hidden, layers_per_stack, num_stacks, dense_units)
//! | selection: count u8 + canonical channel index u8 each | stats: count u8
//! + (channel u8, mean f64, std f64) each | metadata: len u32 + UTF-8 bytes
//! | parameters: count u64 + f64 each, in [`ParamLayout`] order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Head, ModelParams, ModelSpec};
use crate::dataio::{Channel, FeatureSelection, NormalizationStats};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 14] = b"RUL2STAGE-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to run a trained model on fresh cells.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub selection: FeatureSelection,
    pub stats: NormalizationStats,
    /// Free-form provenance line (stage, seed, data source).
    pub metadata: String,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.spec.validate()?;
    let expect = ckpt.spec.layout().total;
    if ckpt.params.len() != expect {
        return Err(Error::Checkpoint(format!(
            "parameter buffer holds {} values, spec needs {expect}",
            ckpt.params.len()
        )));
    }
    for ch in ckpt.selection.channels() {
        if ckpt.stats.lookup(*ch).is_none() {
            return Err(Error::Checkpoint(format!(
                "normalization stats missing selected channel {}",
                ch.name()
            )));
        }
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[head_tag(ckpt.spec.head)])?;
    for dim in [
        ckpt.spec.n_steps,
        ckpt.spec.step_input,
        ckpt.spec.hidden,
        ckpt.spec.layers_per_stack,
        ckpt.spec.num_stacks,
        ckpt.spec.dense_units,
    ] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    w.write_all(&[ckpt.selection.len() as u8])?;
    for ch in ckpt.selection.channels() {
        w.write_all(&[ch.canonical_index()])?;
    }
    w.write_all(&[ckpt.stats.entries().len() as u8])?;
    for (ch, mean, std) in ckpt.stats.entries() {
        w.write_all(&[ch.canonical_index()])?;
        w.write_all(&mean.to_le_bytes())?;
        w.write_all(&std.to_le_bytes())?;
    }
    let meta = ckpt.metadata.as_bytes();
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta)?;
    w.write_all(&(ckpt.params.len() as u64).to_le_bytes())?;
    for v in ckpt.params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 14];
    read_exact(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})",
            path.display()
        )));
    }

    let head = match read_u8(&mut r)? {
        0 => Head::Hs,
        1 => Head::Rul,
        tag => {
            return Err(Error::Checkpoint(format!(
                "{}: unknown head tag {tag}",
                path.display()
            )))
        }
    };
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = read_u32(&mut r)? as usize;
    }
    let spec = ModelSpec {
        head,
        n_steps: dims[0],
        step_input: dims[1],
        hidden: dims[2],
        layers_per_stack: dims[3],
        num_stacks: dims[4],
        dense_units: dims[5],
    };
    spec.validate()
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;

    let n_sel = read_u8(&mut r)? as usize;
    let mut channels = Vec::with_capacity(n_sel);
    for _ in 0..n_sel {
        channels.push(read_channel(&mut r, path)?);
    }
    let selection = FeatureSelection::new(channels)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;

    let n_stats = read_u8(&mut r)? as usize;
    let mut entries = Vec::with_capacity(n_stats);
    for _ in 0..n_stats {
        let ch = read_channel(&mut r, path)?;
        let mean = read_f64(&mut r)?;
        let std = read_f64(&mut r)?;
        entries.push((ch, mean, std));
    }
    let stats = NormalizationStats::from_entries(entries)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    for ch in selection.channels() {
        if stats.lookup(*ch).is_none() {
            return Err(Error::Checkpoint(format!(
                "{}: stats missing selected channel {}",
                path.display(),
                ch.name()
            )));
        }
    }

    let meta_len = read_u32(&mut r)? as usize;
    let mut meta = vec![0u8; meta_len];
    read_exact(&mut r, &mut meta)?;
    let metadata = String::from_utf8(meta)
        .map_err(|_| Error::Checkpoint(format!("{}: metadata is not UTF-8", path.display())))?;

    let n_params = read_u64(&mut r)? as usize;
    let expect = spec.layout().total;
    if n_params != expect {
        return Err(Error::Checkpoint(format!(
            "{}: {n_params} parameters stored, spec needs {expect}",
            path.display()
        )));
    }
    let mut values = Vec::with_capacity(n_params);
    let mut buf = [0u8; 8];
    for _ in 0..n_params {
        read_exact(&mut r, &mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    let params = ModelParams::from_values(&spec, values)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: trailing bytes after parameters",
            path.display()
        )));
    }

    Ok(Checkpoint {
        spec,
        params,
        selection,
        stats,
        metadata,
    })
}

fn head_tag(head: Head) -> u8 {
    match head {
        Head::Hs => 0,
        Head::Rul => 1,
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint("truncated checkpoint file".into())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_channel(r: &mut impl Read, path: &Path) -> Result<Channel> {
    let idx = read_u8(r)?;
    Channel::from_canonical_index(idx).ok_or_else(|| {
        Error::Checkpoint(format!("{}: invalid channel index {idx}", path.display()))
    })
}

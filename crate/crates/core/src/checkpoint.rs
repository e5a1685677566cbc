//! Versioned flat binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"MSFT"
//! u32    format version (1)
//! u32    patch_size
//! u32    num_stages
//! u32*n  stage_dims
//! u32*n  heads_per_stage
//! u32    num_classes
//! u8     fusion mode (0 rgb_only, 1 cross_d_to_rgb, 2 key_swap)
//! u32    blob count
//! per blob: u16 name length, utf-8 name, u64 f64 count, f64*count data
//! ```
//!
//! Blobs appear in parameter declaration order and are named like
//! `stage0.attn.q.w`, so containers are diffable and partially readable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoder::{EncoderConfig, FusionMode, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSFT";
const VERSION: u32 = 1;

fn fusion_code(mode: FusionMode) -> u8 {
    match mode {
        FusionMode::RgbOnly => 0,
        FusionMode::CrossDToRgb => 1,
        FusionMode::KeySwap => 2,
    }
}

fn fusion_from_code(code: u8) -> Result<FusionMode> {
    match code {
        0 => Ok(FusionMode::RgbOnly),
        1 => Ok(FusionMode::CrossDToRgb),
        2 => Ok(FusionMode::KeySwap),
        other => Err(Error::Checkpoint(format!("unknown fusion code {other}"))),
    }
}

/// Serializes a model to the container format.
pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = &params.cfg;
    w.write_all(&(cfg.patch_size as u32).to_le_bytes())?;
    w.write_all(&(cfg.num_stages() as u32).to_le_bytes())?;
    for &d in &cfg.stage_dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &h in &cfg.heads_per_stage {
        w.write_all(&(h as u32).to_le_bytes())?;
    }
    w.write_all(&(cfg.num_classes as u32).to_le_bytes())?;
    w.write_all(&[fusion_code(cfg.fusion_mode)])?;

    let mut blobs: Vec<(String, Vec<f64>)> = Vec::new();
    params.for_each_slice(|name, data| blobs.push((name.to_string(), data.to_vec())));
    w.write_all(&(blobs.len() as u32).to_le_bytes())?;
    for (name, data) in &blobs {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(data.len() as u64).to_le_bytes())?;
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

/// Loads a model, validating magic, version and structural consistency.
pub fn load_model(path: &Path) -> Result<ModelParams> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_exact::<4>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a model container".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported container version {version}, expected {VERSION}"
        )));
    }
    let patch_size = read_u32(&mut r)? as usize;
    let num_stages = read_u32(&mut r)? as usize;
    if num_stages == 0 || num_stages > 64 {
        return Err(Error::Checkpoint(format!("implausible stage count {num_stages}")));
    }
    let mut stage_dims = Vec::with_capacity(num_stages);
    for _ in 0..num_stages {
        stage_dims.push(read_u32(&mut r)? as usize);
    }
    let mut heads = Vec::with_capacity(num_stages);
    for _ in 0..num_stages {
        heads.push(read_u32(&mut r)? as usize);
    }
    let num_classes = read_u32(&mut r)? as usize;
    let fusion_mode = fusion_from_code(read_exact::<1>(&mut r)?[0])?;
    let cfg = EncoderConfig {
        patch_size,
        stage_dims,
        heads_per_stage: heads,
        num_classes,
        fusion_mode,
    };
    cfg.validate()
        .map_err(|e| Error::Checkpoint(format!("container config invalid: {e}")))?;

    let mut params = ModelParams::zeros_like(&cfg)?;
    let blob_count = read_u32(&mut r)? as usize;
    let mut blobs: Vec<(String, Vec<f64>)> = Vec::with_capacity(blob_count);
    for _ in 0..blob_count {
        let name_len = u16::from_le_bytes(read_exact::<2>(&mut r)?) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)
            .map_err(|e| Error::Checkpoint(format!("truncated blob name: {e}")))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Checkpoint("blob name is not utf-8".into()))?;
        let count = u64::from_le_bytes(read_exact::<8>(&mut r)?) as usize;
        let mut data = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)
                .map_err(|e| Error::Checkpoint(format!("truncated blob `{name}`: {e}")))?;
            data.push(f64::from_le_bytes(buf));
        }
        blobs.push((name, data));
    }

    let mut cursor = 0usize;
    let mut mismatch: Option<String> = None;
    params.for_each_slice_mut(|name, slice| {
        if mismatch.is_some() {
            return;
        }
        match blobs.get(cursor) {
            Some((blob_name, data)) if blob_name == name && data.len() == slice.len() => {
                slice.copy_from_slice(data);
            }
            Some((blob_name, data)) => {
                mismatch = Some(format!(
                    "blob {cursor}: expected `{name}` ({}), found `{blob_name}` ({})",
                    slice.len(),
                    data.len()
                ));
            }
            None => mismatch = Some(format!("missing blob `{name}`")),
        }
        cursor += 1;
    });
    if let Some(msg) = mismatch {
        return Err(Error::Checkpoint(msg));
    }
    if cursor != blobs.len() {
        return Err(Error::Checkpoint(format!(
            "container has {} extra blobs",
            blobs.len() - cursor
        )));
    }
    if !params.all_finite() {
        return Err(Error::Checkpoint("container holds non-finite parameters".into()));
    }
    Ok(params)
}

//! Flat binary container for trained parameters.
//!
//! Layout: magic "DMP1", then one record per tensor: name length (u32 LE),
//! UTF-8 name, rank (u32 LE), dims (u32 LE each), f32 LE values. The first
//! record is "meta" = [patch, channels, embed_dim].

use std::fs;
use std::path::Path;

use crate::denoiser::tiny::{TinyGeometry, TinyParams, PARAM_NAMES};
use crate::io::{check_dims, ContainerError, Cursor, IoResult, PARAMS_MAGIC};
use crate::tensor::Tensor;

pub use crate::io::ContainerError as ParamsIoError;

pub fn encode_params(p: &TinyParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    let meta = Tensor::new(
        vec![3],
        vec![
            p.geometry.patch as f32,
            p.geometry.channels as f32,
            p.geometry.embed_dim as f32,
        ],
    )
    .expect("meta shape");
    write_record(&mut out, "meta", &meta);
    for (name, t) in p.tensors() {
        write_record(&mut out, name, t);
    }
    out
}

fn write_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_record(c: &mut Cursor) -> IoResult<(String, Tensor)> {
    let name_len = c.u32()? as usize;
    if name_len > 256 {
        return Err(ContainerError::BadValue(format!("record name length {}", name_len)));
    }
    let name = String::from_utf8(c.take(name_len)?.to_vec())
        .map_err(|_| ContainerError::BadValue("record name is not UTF-8".into()))?;
    let rank = c.u32()? as usize;
    if rank > 8 {
        return Err(ContainerError::BadValue(format!("record rank {}", rank)));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(c.u32()? as u64);
    }
    let count = check_dims(&dims)?;
    let data = c.f32_vec(count)?;
    let shape: Vec<usize> = dims.iter().map(|d| *d as usize).collect();
    Ok((name, Tensor::new(shape, data)?))
}

pub fn decode_params(bytes: &[u8]) -> IoResult<TinyParams> {
    let mut c = Cursor::new(bytes);
    c.magic(PARAMS_MAGIC)?;
    let mut records: Vec<(String, Tensor)> = Vec::new();
    while !c.finished() {
        records.push(read_record(&mut c)?);
    }
    let meta = records
        .iter()
        .find(|(n, _)| n == "meta")
        .ok_or_else(|| ContainerError::BadValue("missing meta record".into()))?
        .1
        .clone();
    if meta.len() != 3 {
        return Err(ContainerError::BadValue("meta record must hold 3 values".into()));
    }
    let geometry = TinyGeometry {
        patch: meta.data()[0] as usize,
        channels: meta.data()[1] as usize,
        embed_dim: meta.data()[2] as usize,
    };
    let fetch = |name: &str| -> IoResult<Tensor> {
        records
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| ContainerError::BadValue(format!("missing record '{}'", name)))
    };
    let params = TinyParams {
        geometry,
        embed_w: fetch(PARAM_NAMES[0])?,
        embed_b: fetch(PARAM_NAMES[1])?,
        cond_w: fetch(PARAM_NAMES[2])?,
        sattn_wq: fetch(PARAM_NAMES[3])?,
        sattn_wk: fetch(PARAM_NAMES[4])?,
        sattn_wv: fetch(PARAM_NAMES[5])?,
        sattn_wo: fetch(PARAM_NAMES[6])?,
        tattn_wq: fetch(PARAM_NAMES[7])?,
        tattn_wk: fetch(PARAM_NAMES[8])?,
        tattn_wv: fetch(PARAM_NAMES[9])?,
        tattn_wo: fetch(PARAM_NAMES[10])?,
        head_w: fetch(PARAM_NAMES[11])?,
        head_b: fetch(PARAM_NAMES[12])?,
        head_gain: fetch(PARAM_NAMES[13])?,
    };
    Ok(params)
}

pub fn save_params(path: impl AsRef<Path>, p: &TinyParams) -> IoResult<()> {
    fs::write(path, encode_params(p))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> IoResult<TinyParams> {
    decode_params(&fs::read(path)?)
}

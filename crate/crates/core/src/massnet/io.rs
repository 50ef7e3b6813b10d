//! Model file layout (little-endian):
//!
//! ```text
//! "MASSNET1" | u32 version
//! u32 layer count | per layer: u32 name length, name, u64 parameter count
//! u8 has stats | 8 x f64 (a, b, d, mass min/max) when present
//! u32 optimizer tag | u64 seed | u64 parameter count
//! f32 parameters in canonical slot order
//! f32 running mean then running variance for each batch norm
//! u32 CRC-32 of all preceding bytes
//! ```

use std::fs;
use std::path::Path;

use super::{layer_param_counts, MassModel, MassNet};
use crate::binio::{Reader, Writer};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::nn::OptimizerKind;

pub const MODEL_MAGIC: &[u8; 8] = b"MASSNET1";
pub const MODEL_VERSION: u32 = 1;

pub fn encode_model(model: &MassModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    let table = layer_param_counts();
    w.u32(table.len() as u32);
    for (name, count) in &table {
        w.str(name);
        w.u64(*count as u64);
    }
    match &model.stats {
        Some(s) => {
            w.u8(1);
            s.to_values().into_iter().for_each(|v| w.f64(v));
        }
        None => w.u8(0),
    }
    w.u32(model.optimizer.tag());
    w.u64(model.seed);
    let mut net = model.net.clone();
    w.u64(net.param_count() as u64);
    for slot in net.param_slots() {
        w.f32s(slot.values);
    }
    for bn in net.batchnorms() {
        w.f32s(&bn.running_mean);
        w.f32s(&bn.running_var);
    }
    w.finish()
}

pub fn decode_model(bytes: &[u8]) -> Result<MassModel> {
    let mut r = Reader::new(bytes, "model file");
    if r.take(8)? != MODEL_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let table = layer_param_counts();
    let layers = r.u32()? as usize;
    if layers != table.len() {
        return Err(Error::Integrity(format!(
            "model file has {layers} layers, architecture has {}",
            table.len()
        )));
    }
    for (name, count) in &table {
        let got_name = r.str()?;
        let got_count = r.u64()?;
        if got_name != *name || got_count != *count as u64 {
            return Err(Error::Integrity(format!(
                "layer {got_name} ({got_count} parameters) does not match {name} ({count})"
            )));
        }
    }
    let stats = match r.u8()? {
        0 => None,
        1 => {
            let mut v = [0.0; 8];
            for x in &mut v {
                *x = r.f64()?;
            }
            Some(NormStats::from_values(v)?)
        }
        other => return Err(Error::Integrity(format!("bad stats flag {other}"))),
    };
    let tag = r.u32()?;
    let optimizer = OptimizerKind::from_tag(tag)
        .ok_or_else(|| Error::Integrity(format!("unknown optimizer tag {tag}")))?;
    let seed = r.u64()?;
    let mut net = MassNet::<f32>::zeros();
    let declared = r.u64()?;
    if declared != net.param_count() as u64 {
        return Err(Error::Integrity(format!(
            "parameter count field {declared} but architecture has {}",
            net.param_count()
        )));
    }
    for slot in net.param_slots() {
        r.f32s(slot.values)?;
    }
    for bn in net.batchnorms_mut() {
        r.f32s(&mut bn.running_mean)?;
        r.f32s(&mut bn.running_var)?;
    }
    r.finish()?;
    Ok(MassModel {
        net,
        stats,
        optimizer,
        seed,
    })
}

pub fn save_model(model: &MassModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MassModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

//! `RFC1` checkpoint files.
//!
//! Layout (little-endian): magic, version (u32), architecture (width, height,
//! heads, hidden, layer count, dilations; all u32), schedule (steps u32,
//! beta range 2 x f64), normalization (lo, hi f64), step counter (u32), loss
//! history (u32 count, f64s), base tensors, then the adapter block: a u32
//! flag, and when set the rank, the adapted layer list and the factor tensors.
//!
//! A tensor is a name (u32 length, UTF-8), a shape (u32 rank, u32 dims) and
//! the row-major f64 values.

use std::io::{Read, Write};

use super::data::{NormStats, TIME_EMBED_DIM};
use super::net::{Adapters, Architecture, DenoiserParams, Layout};
use super::schedule::{make_schedule, NoiseSchedule};
use super::train::TrainState;
use crate::error::{Error, Result};
use crate::formats::{Reader, Writer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFC1";
pub const CHECKPOINT_VERSION: usize = 1;

struct TensorSpec {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

impl TensorSpec {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

fn base_tensors(arch: &Architecture, layout: &Layout) -> Vec<TensorSpec> {
    let mut out = Vec::new();
    for (l, c) in layout.convs.iter().enumerate() {
        out.push(TensorSpec { name: format!("conv{l}.weight"), shape: vec![c.cout, c.cin, 3, 3], offset: c.weight });
        out.push(TensorSpec { name: format!("conv{l}.bias"), shape: vec![c.cout], offset: c.bias });
    }
    for (l, &off) in layout.time.iter().enumerate() {
        out.push(TensorSpec { name: format!("time{l}.weight"), shape: vec![arch.hidden, TIME_EMBED_DIM], offset: off });
    }
    out
}

fn adapter_tensors(ad: &Adapters, layout: &Layout) -> Vec<TensorSpec> {
    let mut out = Vec::new();
    for s in ad.slots(layout) {
        out.push(TensorSpec { name: format!("adapter{}.b", s.layer), shape: vec![s.rows, ad.rank], offset: s.b });
        out.push(TensorSpec { name: format!("adapter{}.a", s.layer), shape: vec![ad.rank, s.cols], offset: s.a });
    }
    out
}

fn write_tensors<W: Write>(w: &mut Writer<W>, specs: &[TensorSpec], data: &[f64]) -> Result<()> {
    w.u32(specs.len())?;
    for s in specs {
        w.u32(s.name.len())?;
        w.bytes(s.name.as_bytes())?;
        w.u32(s.shape.len())?;
        for &d in &s.shape {
            w.u32(d)?;
        }
        w.f64s(&data[s.offset..s.offset + s.len()])?;
    }
    Ok(())
}

fn read_tensors<R: Read>(r: &mut Reader<R>, specs: &[TensorSpec], data: &mut [f64]) -> Result<()> {
    let count = r.count(1 << 16, "tensor")?;
    if count != specs.len() {
        return Err(Error::Format(format!("expected {} tensors, found {count}", specs.len())));
    }
    for s in specs {
        let name_len = r.count(256, "name byte")?;
        let name = String::from_utf8(r.bytes(name_len)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.count(8, "dimension")?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if name != s.name || shape != s.shape {
            return Err(Error::Format(format!(
                "tensor {name} {shape:?} does not match the architecture, expected {} {:?}",
                s.name, s.shape
            )));
        }
        let values = r.f64s(s.len())?;
        data[s.offset..s.offset + s.len()].copy_from_slice(&values);
    }
    Ok(())
}

pub fn encode_checkpoint(state: &TrainState) -> Result<Vec<u8>> {
    let p = &state.params;
    let arch = &p.arch;
    let layout = arch.layout();
    let mut w = Writer::new(Vec::new());
    w.bytes(CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    w.u32(arch.width)?;
    w.u32(arch.height)?;
    w.u32(arch.heads)?;
    w.u32(arch.hidden)?;
    w.u32(arch.dilations.len())?;
    for &d in &arch.dilations {
        w.u32(d)?;
    }
    let (bmin, bmax) = state.schedule.beta_range();
    w.u32(state.schedule.steps())?;
    w.f64(bmin)?;
    w.f64(bmax)?;
    w.f64(state.norm.lo)?;
    w.f64(state.norm.hi)?;
    w.u32(state.step)?;
    w.u32(state.loss_history.len())?;
    w.f64s(&state.loss_history)?;
    write_tensors(&mut w, &base_tensors(arch, &layout), &p.base)?;
    match &p.adapters {
        None => w.u32(0)?,
        Some(ad) => {
            w.u32(1)?;
            w.u32(ad.rank)?;
            w.u32(ad.layers.len())?;
            for &l in &ad.layers {
                w.u32(l)?;
            }
            write_tensors(&mut w, &adapter_tensors(ad, &layout), &ad.factors)?;
        }
    }
    Ok(w.into_inner())
}

fn to_format(e: Error) -> Error {
    match e {
        Error::Format(_) | Error::Io(_) => e,
        other => Error::Format(other.to_string()),
    }
}

/// Decodes a checkpoint. Optimizer moments are not stored, so the result has none.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let (width, height, heads, hidden) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    if width.saturating_mul(height) > 1 << 24 || heads > 64 || hidden > 4096 {
        return Err(Error::Format("architecture header out of range".into()));
    }
    let layers = r.count(64, "layer")?;
    let dilations = (0..layers).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let arch = Architecture::with_shape(width, height, heads, hidden, dilations).map_err(to_format)?;
    let steps = r.count(1 << 20, "schedule step")?;
    let (bmin, bmax) = (r.f64()?, r.f64()?);
    let schedule: NoiseSchedule = make_schedule(steps, bmin, bmax).map_err(to_format)?;
    let norm = NormStats { lo: r.f64()?, hi: r.f64()? };
    norm.validate().map_err(to_format)?;
    let step = r.u32()?;
    let history_len = r.count(1 << 26, "loss history")?;
    let loss_history = r.f64s(history_len)?;

    let layout = arch.layout();
    let mut params = DenoiserParams::zeros(arch);
    read_tensors(&mut r, &base_tensors(&params.arch, &layout), &mut params.base)?;
    match r.u32()? {
        0 => {}
        1 => {
            let rank = r.count(4096, "adapter rank")?;
            let n = r.count(layout.convs.len(), "adapted layer")?;
            let ad_layers = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if ad_layers.iter().any(|&l| l >= layout.convs.len()) {
                return Err(Error::Format("adapter refers to a missing layer".into()));
            }
            let len = Adapters::len_for(&layout, &ad_layers, rank);
            let mut ad = Adapters { rank, layers: ad_layers, factors: vec![0.0; len] };
            read_tensors(&mut r, &adapter_tensors(&ad, &layout), &mut ad.factors)?;
            params.adapters = Some(ad);
        }
        flag => return Err(Error::Format(format!("bad adapter flag {flag}"))),
    }
    r.finish()?;
    if params.base.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("checkpoint holds non-finite weights".into()));
    }
    Ok(TrainState { params, norm, schedule, optimizer: None, step, loss_history })
}

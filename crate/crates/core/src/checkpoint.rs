//! Binary checkpoint format.
//!
//! Layout: magic `CHMC1`, a little-endian `u32` header length, the JSON header,
//! a `u32` tensor count, then per tensor: `u32` name length, UTF-8 name, `u32`
//! rank, `u32` dims, and row-major little-endian `f32` data.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, HeadParams};
use crate::model::Model;
use crate::nn::{ParamSet, Tensor};

pub const MAGIC: &[u8; 5] = b"CHMC1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub step: u64,
    pub metric: Option<Metric>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    head_kind: Option<String>,
    head_config: Option<HeadConfig>,
    head_groups: Option<Vec<Vec<usize>>>,
    step: u64,
    metric: Option<Metric>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

impl Checkpoint {
    pub fn new(model: Model<f32>, step: u64, metric: Option<Metric>) -> Self {
        Self { model, step, metric }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let head = self.model.head.as_ref();
        let header = Header {
            config: self.model.config.clone(),
            head_kind: head.map(|h| h.kind().name().to_string()),
            head_config: head.map(|h| h.config.clone()),
            head_groups: head.map(|h| h.groups.clone()),
            step: self.step,
            metric: self.metric.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(header.len() + 4 * self.model.n_params() + 1024);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, header.len());
        out.extend_from_slice(&header);
        let tensors = self.model.tensors();
        put_u32(&mut out, tensors.len());
        for (name, t) in tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape.len());
            for &d in &t.shape {
                put_u32(&mut out, d);
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let hlen = r.u32()?;
        let header: Header = serde_json::from_slice(r.take(hlen)?)?;
        header.config.validate()?;
        let encoder = EncoderParams::<f32>::shell(&header.config);
        let head = match (header.head_config, header.head_groups) {
            (Some(c), Some(g)) => Some(HeadParams::<f32>::shell(c, header.config.d_model, g)),
            (None, None) => None,
            _ => return Err(Error::Checkpoint("incomplete head description".into())),
        };
        let mut model = Model { config: header.config, encoder, head };
        let n = r.u32()?;
        let mut slots = model.tensors_mut();
        if n != slots.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {n}", slots.len())));
        }
        for (want, slot) in slots.iter_mut() {
            let nlen = r.u32()?;
            let name = std::str::from_utf8(r.take(nlen)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
            if name != want {
                return Err(Error::Checkpoint(format!("expected tensor `{want}`, found `{name}`")));
            }
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if shape != slot.shape {
                return Err(Error::Checkpoint(format!("tensor `{name}` has shape {shape:?}, expected {:?}", slot.shape)));
            }
            let bytes = r.take(4 * slot.len())?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            **slot = Tensor { shape, data };
        }
        drop(slots);
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { model, step: header.step, metric: header.metric })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Header fields as JSON, for manifests and inspection.
    pub fn summary(&self) -> serde_json::Value {
        json!({
            "config": self.model.config,
            "head_kind": self.model.head.as_ref().map(|h| h.kind().name()),
            "step": self.step,
            "metric": self.metric,
            "n_params": self.model.n_params(),
        })
    }
}

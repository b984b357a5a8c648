// SPDX-License-Identifier: Apache-2.0

//! Single-file checkpoint: magic, schema version, the config snapshot as
//! TOML, then every parameter as a named f32 blob. Integers are
//! little-endian u32.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::open;
use crate::pipeline::Model;
use crate::tensor::Array;

pub const MAGIC: &[u8; 8] = b"LHODCKPT";
pub const SCHEMA_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    put_u32(buf, b.len());
    buf.extend_from_slice(b);
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, SCHEMA_VERSION as usize);
    put_bytes(&mut buf, model.cfg.to_toml().as_bytes());
    let p = &model.params;
    put_u32(&mut buf, p.len());
    for id in p.ids() {
        put_bytes(&mut buf, p.name(id).as_bytes());
        let v = p.value(id);
        put_u32(&mut buf, v.shape().len());
        for &d in v.shape() {
            put_u32(&mut buf, d);
        }
        for &x in v.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub fn save(path: &Path, model: &Model) -> Result<()> {
    // write-then-rename so a crash never leaves a torn checkpoint
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&to_bytes(model))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::Format { what: "checkpoint", reason: "truncated".into() });
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn str(&mut self) -> Result<&'a str> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|e| Error::Format { what: "checkpoint", reason: e.to_string() })
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let bad = |reason: String| Error::Format { what: "checkpoint", reason };
    let mut c = Cursor { b: bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = c.u32()?;
    if version != SCHEMA_VERSION as usize {
        return Err(bad(format!("schema version {version}, expected {SCHEMA_VERSION}")));
    }
    let cfg = RunConfig::from_toml(c.str()?)?;
    let mut model = Model::new(&cfg)?;
    let count = c.u32()?;
    if count != model.params.len() {
        return Err(bad(format!("{count} parameters, model has {}", model.params.len())));
    }
    for _ in 0..count {
        let name = c.str()?.to_string();
        let ndim = c.u32()?;
        let shape = (0..ndim).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data: Vec<f32> =
            c.take(n * 4)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        let id = model.params.find(&name).ok_or_else(|| bad(format!("unknown parameter {name}")))?;
        if model.params.value(id).shape() != shape.as_slice() {
            return Err(bad(format!("{name}: shape {shape:?} vs {:?}", model.params.value(id).shape())));
        }
        *model.params.value_mut(id) = Array::from_vec(&shape, data);
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    Ok(model)
}

pub fn load(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model.depth = 18;
        cfg.model.base_width = 8;
        cfg.model.fpn_channels = 16;
        cfg.model.input_size = 64;
        cfg.model.reduction = 4;
        cfg.model.norm_groups = 4;
        cfg
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = Model::new(&tiny()).unwrap();
        let b = to_bytes(&m);
        let back = from_bytes(&b).unwrap();
        assert_eq!(to_bytes(&back), b);
        assert_eq!(back.cfg, m.cfg);
    }

    #[test]
    fn rejects_corruption() {
        let m = Model::new(&tiny()).unwrap();
        let mut b = to_bytes(&m);
        assert!(from_bytes(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(from_bytes(&b).is_err());
    }
}

//! Binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    b"PLDA"
//! version  u32 (currently 1)
//! joints   u32
//! width    u32
//! dropout  f64
//! joint_set u8
//! arch      u8
//! trainable tensors, canonical visit order:
//!     rank u32, dims (rank × u32), data (f64 × numel)
//! batch-norm running stats, visit order:
//!     running_mean (width × f64), running_var (width × f64)
//! normalization stats: mean2d, std2d (2J × f64 each),
//!                      mean3d, std3d (3J × f64 each)
//! crc32    u32 over all preceding bytes
//! ```
//!
//! Loading validates the magic, version, CRC, and every tensor shape, so a
//! truncated or tampered file is rejected rather than silently misread.

use std::fs;
use std::path::Path;

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{ArchKind, Model, ParamGroup};
use crate::rng::{stream, Stream};
use crate::scalar::{real, to_f64, Real};
use crate::skeleton::JointSet;

const MAGIC: &[u8; 4] = b"PLDA";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn floats<R: Real>(&mut self, vs: &[R]) {
        for &v in vs {
            self.f64(to_f64(v));
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "file truncated: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn floats<R: Real>(&mut self, n: usize) -> Result<Vec<R>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| real::<R>(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Serialize the model and its data normalization statistics.
pub fn save<R: Real>(path: &Path, model: &Model<R>, norm: &NormStats<R>) -> Result<()> {
    if norm.n_joints() != model.joints {
        return Err(Error::Checkpoint(format!(
            "normalization stats cover {} joints but the model has {}",
            norm.n_joints(),
            model.joints
        )));
    }
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(model.joints as u32);
    w.u32(model.width as u32);
    w.f64(to_f64(model.dropout));
    w.u8(model.joint_set.code());
    w.u8(model.arch.code());
    for (_, tensor) in model.params(ParamGroup::All) {
        w.u32(tensor.shape().len() as u32);
        for &d in tensor.shape() {
            w.u32(d as u32);
        }
        w.floats(tensor.data());
    }
    for (_, state) in model.bn_states() {
        w.floats(&state.running_mean);
        w.floats(&state.running_var);
    }
    w.floats(&norm.mean2d);
    w.floats(&norm.std2d);
    w.floats(&norm.mean3d);
    w.floats(&norm.std3d);
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    fs::write(path, &w.buf)?;
    Ok(())
}

/// Load a checkpoint saved by [`save`].
pub fn load<R: Real>(path: &Path) -> Result<(Model<R>, NormStats<R>)> {
    let buf = fs::read(path)?;
    if buf.len() < 4 + 4 {
        return Err(Error::Checkpoint("file too short for a checkpoint".into()));
    }
    let (body, trailer) = buf.split_at(buf.len() - 4);
    let stored_crc = u32::from_le_bytes(trailer.try_into().unwrap());
    let actual_crc = crc32fast::hash(body);
    if stored_crc != actual_crc {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored_crc:08x}, computed {actual_crc:08x}"
        )));
    }
    let mut r = Reader { buf: body, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let joints = r.u32()? as usize;
    let width = r.u32()? as usize;
    let dropout = real::<R>(r.f64()?);
    let joint_set = JointSet::from_code(r.u8()?)?;
    let arch = ArchKind::from_code(r.u8()?)?;

    // Allocate a model of the right shape, then overwrite every tensor.
    let mut init_rng = stream(0, Stream::Weights);
    let mut model: Model<R> = Model::new(joints, width, dropout, joint_set, arch, &mut init_rng)?;
    for (name, tensor) in model.params_mut(ParamGroup::All) {
        let rank = r.u32()? as usize;
        if rank != tensor.shape().len() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: stored rank {rank}, expected {}",
                tensor.shape().len()
            )));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        if dims != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: stored shape {dims:?}, expected {:?}",
                tensor.shape()
            )));
        }
        let data = r.floats::<R>(tensor.numel())?;
        tensor.data_mut().copy_from_slice(&data);
    }
    for (_, state) in model.bn_states_mut() {
        let n = state.running_mean.len();
        state.running_mean = r.floats(n)?;
        state.running_var = r.floats(n)?;
    }
    let norm = NormStats {
        mean2d: r.floats(2 * joints)?,
        std2d: r.floats(2 * joints)?,
        mean3d: r.floats(3 * joints)?,
        std3d: r.floats(3 * joints)?,
    };
    if !r.done() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected trailing bytes",
            body.len() - r.pos
        )));
    }
    Ok((model, norm))
}

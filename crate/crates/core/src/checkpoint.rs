//! Little-endian binary checkpoints.
//!
//! ```text
//! file    := "MGSN" u32:version [u8;4]:kind payload
//! net     := u32:layers { u32:in u32:out u32:activation }* f64*   (per layer: weights row-major out x in, then bias)
//! EPSM    := u32:data_dim u32:embed_dim u32:N f64*N:betas net
//! MANF    := u8:normalize f64:tau_g net:F net:g
//! ```

use std::fs;
use std::path::Path;

use crate::diffusion::{EpsModel, NoisePredictor, NoiseSchedule};
use crate::error::{ensure, MgsError, Result};
use crate::linalg::Matrix;
use crate::manifold::{EmbedderF, ManifoldModel, RelationNetG};
use crate::nn::{Activation, DenseLayer, FeedforwardNet};

pub const MAGIC: &[u8; 4] = b"MGSN";
pub const VERSION: u32 = 1;
pub const KIND_EPS: &[u8; 4] = b"EPSM";
pub const KIND_MANIFOLD: &[u8; 4] = b"MANF";

// Guards against absurd allocations from corrupt headers.
const MAX_DIM: u32 = 1 << 20;

struct Writer(Vec<u8>);

impl Writer {
    fn header(kind: &[u8; 4]) -> Self {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.0.extend_from_slice(kind);
        w
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn net(&mut self, net: &FeedforwardNet) {
        self.u32(net.layers().len() as u32);
        for l in net.layers() {
            self.u32(l.inputs() as u32);
            self.u32(l.outputs() as u32);
            self.u32(l.activation.tag());
        }
        for p in net.params() {
            self.f64(p);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(buf: &'a [u8], kind: &[u8; 4]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(4)?;
        ensure!(magic == MAGIC, Format, "not a checkpoint (bad magic)");
        let version = r.u32()?;
        ensure!(version == VERSION, Format, "unsupported checkpoint version {}", version);
        let k = r.take(4)?;
        ensure!(
            k == kind,
            Format,
            "checkpoint holds '{}', expected '{}'",
            String::from_utf8_lossy(k),
            String::from_utf8_lossy(kind)
        );
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.buf.len() - self.pos >= n, Format, "checkpoint truncated at byte {}", self.pos);
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize> {
        let v = self.u32()?;
        ensure!(v > 0 && v <= MAX_DIM, Format, "implausible dimension {} in checkpoint", v);
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn net(&mut self) -> Result<FeedforwardNet> {
        let n = self.dim()?;
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            shapes.push((self.dim()?, self.dim()?, Activation::from_tag(self.u32()?)?));
        }
        let mut layers = Vec::with_capacity(n);
        for (inputs, outputs, act) in shapes {
            let w: Vec<f64> = (0..inputs * outputs).map(|_| self.f64()).collect::<Result<_>>()?;
            let b: Vec<f64> = (0..outputs).map(|_| self.f64()).collect::<Result<_>>()?;
            layers.push(DenseLayer::new(Matrix::from_vec(outputs, inputs, w)?, b, act)?);
        }
        FeedforwardNet::from_layers(layers).map_err(|e| MgsError::format(format!("inconsistent layers: {e}")))
    }

    fn finish(&self) -> Result<()> {
        ensure!(self.pos == self.buf.len(), Format, "{} trailing bytes in checkpoint", self.buf.len() - self.pos);
        Ok(())
    }
}

pub fn encode_eps(model: &EpsModel, schedule: &NoiseSchedule) -> Vec<u8> {
    let mut w = Writer::header(KIND_EPS);
    w.u32(model.data_dim() as u32);
    w.u32(model.embed_dim() as u32);
    w.u32(schedule.steps() as u32);
    for t in 1..=schedule.steps() {
        w.f64(schedule.beta(t));
    }
    w.net(model.net());
    w.0
}

pub fn decode_eps(buf: &[u8]) -> Result<(EpsModel, NoiseSchedule)> {
    let mut r = Reader::open(buf, KIND_EPS)?;
    let data_dim = r.dim()?;
    let embed_dim = r.dim()?;
    let steps = r.dim()?;
    let betas: Vec<f64> = (0..steps).map(|_| r.f64()).collect::<Result<_>>()?;
    let schedule = NoiseSchedule::from_betas(betas).map_err(|e| MgsError::format(format!("bad schedule: {e}")))?;
    let net = r.net()?;
    r.finish()?;
    let model = EpsModel::new(net, data_dim, embed_dim).map_err(|e| MgsError::format(format!("bad noise model: {e}")))?;
    Ok((model, schedule))
}

pub fn encode_manifold(model: &ManifoldModel) -> Vec<u8> {
    let mut w = Writer::header(KIND_MANIFOLD);
    w.0.push(model.f.normalize as u8);
    w.f64(model.g.tau);
    w.net(&model.f.net);
    w.net(&model.g.net);
    w.0
}

pub fn decode_manifold(buf: &[u8]) -> Result<ManifoldModel> {
    let mut r = Reader::open(buf, KIND_MANIFOLD)?;
    let normalize = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(MgsError::format(format!("bad normalize flag {v}"))),
    };
    let tau = r.f64()?;
    ensure!(tau.is_finite() && tau > 0.0, Format, "bad relation temperature {}", tau);
    let f = EmbedderF { net: r.net()?, normalize };
    let g = RelationNetG { net: r.net()?, tau };
    r.finish()?;
    ManifoldModel::new(f, g).map_err(|e| MgsError::format(format!("bad manifold model: {e}")))
}

pub fn save_eps(path: &Path, model: &EpsModel, schedule: &NoiseSchedule) -> Result<()> {
    Ok(fs::write(path, encode_eps(model, schedule))?)
}

pub fn load_eps(path: &Path) -> Result<(EpsModel, NoiseSchedule)> {
    decode_eps(&fs::read(path)?)
}

pub fn save_manifold(path: &Path, model: &ManifoldModel) -> Result<()> {
    Ok(fs::write(path, encode_manifold(model))?)
}

pub fn load_manifold(path: &Path) -> Result<ManifoldModel> {
    decode_manifold(&fs::read(path)?)
}

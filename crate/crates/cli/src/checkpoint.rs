//! Binary checkpoint container, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "OCDACKP1"
//! version    u32      1
//! layers     u32 n, then n × (u32 in, u32 out, u32 kernel)
//! iteration  u64      completed optimisation steps
//! rng        u64 seed, u64 next stream index
//! networks   u32 n, then n × (str role, u32 tensors, tensors...)
//! tensor     str name, u32 ndim, ndim × u64 dim, prod(dim) × f64
//! optimizer  u8 present; if 1: f64 lr0, f64 momentum, f64 weight_decay,
//!            u64 max_iter, f64 power, u64 iter, then the velocity tensors
//! str        u32 byte length, UTF-8 bytes
//! ```
//!
//! Roles are `params` and optionally `momentum`. Decoding re-encodes to the
//! same bytes.

use std::path::Path;

use ocda_core::net::{Architecture, ConvSpec, NetworkParams, OptimizerState, SgdConfig, Tensor};

use crate::error::CliError;
use crate::io;

pub const MAGIC: &[u8; 8] = b"OCDACKP1";
pub const VERSION: u32 = 1;

/// Position in a seeded run: the master seed and the next stream index to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RngState {
    pub seed: u64,
    pub next_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub momentum: Option<NetworkParams>,
    pub optimizer: Option<OptimizerState>,
    pub iteration: u64,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn new(params: NetworkParams) -> Self {
        Self { params, momentum: None, optimizer: None, iteration: 0, rng: RngState::default() }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensors(&mut self, tensors: &[Tensor]) {
        self.u32(tensors.len() as u32);
        for t in tensors {
            self.str(&t.name);
            self.u32(t.shape.len() as u32);
            for &d in &t.shape {
                self.u64(d as u64);
            }
            for &v in &t.data {
                self.f64(v);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

type Decode<T> = Result<T, String>;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Decode<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Decode<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Decode<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Decode<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Decode<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Decode<usize> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }
    fn str(&mut self) -> Decode<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
    fn tensors(&mut self) -> Decode<Vec<Tensor>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let name = self.str()?;
            let ndim = self.u32()? as usize;
            let shape = (0..ndim).map(|_| self.usize()).collect::<Decode<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor too large")?;
            if len > (self.bytes.len() - self.pos) / 8 {
                return Err(format!("tensor {name} exceeds the file"));
            }
            let data = (0..len).map(|_| self.f64()).collect::<Decode<Vec<_>>>()?;
            out.push(Tensor { name, shape, data });
        }
        Ok(out)
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let layers = ckpt.params.architecture().layers();
    w.u32(layers.len() as u32);
    for l in layers {
        w.u32(l.in_channels as u32);
        w.u32(l.out_channels as u32);
        w.u32(l.kernel as u32);
    }
    w.u64(ckpt.iteration);
    w.u64(ckpt.rng.seed);
    w.u64(ckpt.rng.next_index);
    let mut networks = vec![("params", &ckpt.params)];
    if let Some(m) = &ckpt.momentum {
        networks.push(("momentum", m));
    }
    w.u32(networks.len() as u32);
    for (role, net) in networks {
        w.str(role);
        w.tensors(net.tensors());
    }
    match &ckpt.optimizer {
        None => w.u8(0),
        Some(o) => {
            w.u8(1);
            w.f64(o.config.lr0);
            w.f64(o.config.momentum);
            w.f64(o.config.weight_decay);
            w.u64(o.config.max_iter);
            w.f64(o.config.power);
            w.u64(o.iter);
            w.tensors(o.velocity.tensors());
        }
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let n_layers = r.u32()? as usize;
    let layers = (0..n_layers)
        .map(|_| {
            Ok(ConvSpec { in_channels: r.u32()? as usize, out_channels: r.u32()? as usize, kernel: r.u32()? as usize })
        })
        .collect::<Decode<Vec<_>>>()?;
    let arch = Architecture::new(layers).map_err(|e| e.to_string())?;
    let iteration = r.u64()?;
    let rng = RngState { seed: r.u64()?, next_index: r.u64()? };
    let build = |t: Vec<Tensor>| NetworkParams::from_tensors(arch.clone(), t).map_err(|e| e.to_string());
    let n_networks = r.u32()?;
    let mut params = None;
    let mut momentum = None;
    for _ in 0..n_networks {
        let role = r.str()?;
        let net = build(r.tensors()?)?;
        match role.as_str() {
            "params" if params.is_none() => params = Some(net),
            "momentum" if momentum.is_none() && params.is_some() => momentum = Some(net),
            other => return Err(format!("unexpected network role `{other}`")),
        }
    }
    let params = params.ok_or("checkpoint holds no params")?;
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let config = SgdConfig {
                lr0: r.f64()?,
                momentum: r.f64()?,
                weight_decay: r.f64()?,
                max_iter: r.u64()?,
                power: r.f64()?,
            };
            let iter = r.u64()?;
            Some(OptimizerState { config, iter, velocity: build(r.tensors()?)? })
        }
        f => return Err(format!("bad optimizer flag {f}")),
    };
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(Checkpoint { params, momentum, optimizer, iteration, rng })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    io::create_parent(path)?;
    std::fs::write(path, encode(ckpt)).map_err(|e| io::io_err(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| io::io_err(path, e))?;
    decode(&bytes).map_err(|message| CliError::Checkpoint { path: path.to_path_buf(), message })
}

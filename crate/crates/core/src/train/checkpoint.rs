//! `SKCP` checkpoint files, little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SKCP"
//! 4       4     u32 version (1)
//! 8       4     u32 payload length
//! 12      4     u32 CRC32 of the payload
//! 16      ...   payload
//! ```
//!
//! Payload: `u8` id length + network id (`sobelnet` | `desnet`), `u64` step,
//! `u32` config hash, `f32` activation slope, `u32` record count and records
//! (`u16` name length, name, `u32` rank, `u32` dims, f32 data), then a `u8`
//! optimizer flag. When set it is followed by `u8` kind (0 sgd, 1 adam), four
//! `f64` (lr, beta1, beta2, eps), `u64` optimizer step, `u32` moment count and
//! the first then second moments as (`u32` rank, dims, data) tensors.

use std::path::Path;

use crate::descriptor::DesNet;
use crate::detector::SobelNet;
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{Optimizer, OptimizerConfig, OptimizerKind, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"SKCP";
const VERSION: u32 = 1;
const HEADER: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkId {
    SobelNet,
    DesNet,
}

impl NetworkId {
    pub fn name(self) -> &'static str {
        match self {
            NetworkId::SobelNet => "sobelnet",
            NetworkId::DesNet => "desnet",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "sobelnet" => Some(NetworkId::SobelNet),
            "desnet" => Some(NetworkId::DesNet),
            _ => None,
        }
    }
}

/// Saved optimizer moments, so a resumed run continues bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn capture(opt: &Optimizer) -> Self {
        let (first, second) = opt.state();
        OptimizerState {
            config: *opt.config(),
            step: opt.steps_taken(),
            first: first.to_vec(),
            second: second.to_vec(),
        }
    }

    pub fn restore(&self) -> Result<Optimizer> {
        let mut opt = Optimizer::new(self.config);
        opt.restore_state(self.step, self.first.clone(), self.second.clone())?;
        Ok(opt)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkId,
    /// Training steps completed.
    pub step: u64,
    pub config_hash: u32,
    pub slope: f32,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn from_sobelnet(net: &SobelNet, step: u64, config_hash: u32, optimizer: Option<OptimizerState>) -> Self {
        Checkpoint {
            network: NetworkId::SobelNet,
            step,
            config_hash,
            slope: net.config().slope,
            params: net.params().clone(),
            optimizer,
        }
    }

    pub fn from_desnet(net: &DesNet, step: u64, config_hash: u32, optimizer: Option<OptimizerState>) -> Self {
        Checkpoint {
            network: NetworkId::DesNet,
            step,
            config_hash,
            slope: net.config().slope,
            params: net.params().clone(),
            optimizer,
        }
    }

    fn expect(&self, id: NetworkId) -> Result<()> {
        if self.network != id {
            return Err(CheckpointError::WrongNetwork {
                expected: id.name(),
                found: self.network.name().into(),
            }
            .into());
        }
        Ok(())
    }

    pub fn sobelnet(&self) -> Result<SobelNet> {
        self.expect(NetworkId::SobelNet)?;
        let cfg = SobelNet::infer_config(&self.params, self.slope)?;
        SobelNet::from_params(cfg, self.params.clone())
    }

    pub fn desnet(&self) -> Result<DesNet> {
        self.expect(NetworkId::DesNet)?;
        let cfg = DesNet::infer_config(&self.params, self.slope)?;
        DesNet::from_params(cfg, self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut p = Vec::new();
        let id = self.network.name().as_bytes();
        p.push(id.len() as u8);
        p.extend_from_slice(id);
        p.extend_from_slice(&self.step.to_le_bytes());
        p.extend_from_slice(&self.config_hash.to_le_bytes());
        p.extend_from_slice(&self.slope.to_le_bytes());
        p.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            p.extend_from_slice(&(name.len() as u16).to_le_bytes());
            p.extend_from_slice(name.as_bytes());
            put_tensor(&mut p, t);
        }
        match &self.optimizer {
            None => p.push(0),
            Some(o) => {
                p.push(1);
                p.push(match o.config.kind {
                    OptimizerKind::Sgd => 0,
                    OptimizerKind::Adam => 1,
                });
                for v in [o.config.lr, o.config.beta1, o.config.beta2, o.config.eps] {
                    p.extend_from_slice(&v.to_le_bytes());
                }
                p.extend_from_slice(&o.step.to_le_bytes());
                p.extend_from_slice(&(o.first.len() as u32).to_le_bytes());
                for t in o.first.iter().chain(&o.second) {
                    put_tensor(&mut p, t);
                }
            }
        }
        let mut out = Vec::with_capacity(HEADER + p.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&p).to_le_bytes());
        out.extend_from_slice(&p);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < HEADER {
            // a header cut short cannot hold a valid CRC
            return Err(CheckpointError::CrcMismatch {
                stored: 0,
                computed: crc32fast::hash(&[]),
            });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let (len, stored) = (word(8) as usize, word(12));
        let payload = &bytes[HEADER..];
        let computed = crc32fast::hash(&payload[..len.min(payload.len())]);
        if payload.len() < len || computed != stored {
            return Err(CheckpointError::CrcMismatch { stored, computed });
        }
        if payload.len() > len {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", payload.len() - len)));
        }
        parse_payload(payload)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

fn put_tensor(p: &mut Vec<u8>, t: &Tensor) {
    p.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for d in t.shape() {
        p.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in t.data() {
        p.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Malformed(format!("payload ends early at byte {}", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn tensor(&mut self) -> std::result::Result<Tensor, CheckpointError> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= self.buf.len() - self.at))
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor shape {shape:?} exceeds payload")))?;
        let raw = self.take(4 * n)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

fn parse_payload(buf: &[u8]) -> std::result::Result<Checkpoint, CheckpointError> {
    let mut r = Reader { buf, at: 0 };
    let id_len = r.u8()? as usize;
    let id = String::from_utf8_lossy(r.take(id_len)?).into_owned();
    let network = NetworkId::parse(&id).ok_or_else(|| CheckpointError::Malformed(format!("unknown network id `{id}`")))?;
    let step = r.u64()?;
    let config_hash = r.u32()?;
    let slope = f32::from_bits(r.u32()?);
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Malformed("record name is not UTF-8".into()))?
            .to_string();
        params.push(name, r.tensor()?);
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let kind = match r.u8()? {
                0 => OptimizerKind::Sgd,
                1 => OptimizerKind::Adam,
                k => return Err(CheckpointError::Malformed(format!("optimizer kind {k}"))),
            };
            let config = OptimizerConfig {
                kind,
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            let step = r.u64()?;
            let n = r.u32()? as usize;
            let first = (0..n).map(|_| r.tensor()).collect::<std::result::Result<Vec<_>, _>>()?;
            let second = (0..n).map(|_| r.tensor()).collect::<std::result::Result<Vec<_>, _>>()?;
            Some(OptimizerState {
                config,
                step,
                first,
                second,
            })
        }
        f => return Err(CheckpointError::Malformed(format!("optimizer flag {f}"))),
    };
    if r.at != buf.len() {
        return Err(CheckpointError::Malformed(format!("{} unread payload bytes", buf.len() - r.at)));
    }
    Ok(Checkpoint {
        network,
        step,
        config_hash,
        slope,
        params,
        optimizer,
    })
}

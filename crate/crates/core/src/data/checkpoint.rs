//! Framed binary checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic     8 bytes  "MAPCKPT1"
//! version   u32
//! precision u8       4 = f32, 8 = f64
//! layers    u32 count, then per layer: in u32, out u32, activation u8 (0 relu, 1 none)
//! params    u32 count, then per param: name (u32 len + UTF-8), prunable u8,
//!           ndim u32, dims u32 × ndim, values T × numel
//! prune     rule u8, n u64, mask ⌈n/8⌉ bytes (bit j of byte j/8, LSB first),
//!           attention T × n, threshold T, ratio f64, z f64, freq u64,
//!           exploit_at u64, frozen u8, scope u8, kind u8
//! optimizer momentum f64, weight_decay f64, decay_all u8, nesterov u8,
//!           lr_base f64, milestones u32 count × (epoch u64, factor f64),
//!           velocity T × numel for every param in order
//! rng       seed u64
//! counters  next_epoch u64, iteration u64
//! best      present u8, accuracy f64, epoch u64
//! crc32     u32 over every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, LayerSpec, Param, ParamRegistry};
use crate::optim::{LrSchedule, Sgd};
use crate::prune::{NormKind, NormScope, PruneState, UpdateRule};
use crate::tensor::{Precision, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"MAPCKPT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub registry: ParamRegistry<T>,
    pub prune: PruneState<T>,
    pub rule: UpdateRule,
    pub optimizer: Sgd<T>,
    pub lr: LrSchedule,
    pub seed: u64,
    /// First epoch still to run.
    pub next_epoch: u64,
    pub iteration: u64,
    pub best: Option<(f64, u64)>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} exceeds u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn values<T: Scalar>(&mut self, vs: &[T]) {
        for &v in vs {
            v.write_le(&mut self.0);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn values<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let width = T::PRECISION.tag() as usize;
        let bytes = self.take(n.checked_mul(width).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(width).map(T::read_le).collect())
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Checkpoint(format!("invalid flag byte {v}"))),
        }
    }
}

fn scope_code(s: NormScope) -> u8 {
    match s {
        NormScope::Global => 0,
        NormScope::PerLayer => 1,
    }
}

fn kind_code(k: NormKind) -> u8 {
    match k {
        NormKind::MagnitudeMinmax => 0,
        NormKind::RankLinear => 1,
    }
}

pub fn encode_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    w.u8(T::PRECISION.tag());

    let specs = ck.registry.specs();
    w.u32(specs.len())?;
    for s in specs {
        w.u32(s.in_dim)?;
        w.u32(s.out_dim)?;
        w.u8(match s.activation {
            Activation::Relu => 0,
            Activation::None => 1,
        });
    }

    let params = ck.registry.params();
    w.u32(params.len())?;
    for p in params {
        w.u32(p.name.len())?;
        w.0.extend_from_slice(p.name.as_bytes());
        w.u8(p.prunable as u8);
        w.u32(p.tensor.shape().len())?;
        for &d in p.tensor.shape() {
            w.u32(d)?;
        }
        w.values(p.tensor.data());
    }

    let st = &ck.prune;
    w.u8(ck.rule.code());
    w.u64(st.mask.len() as u64);
    let mut packed = vec![0u8; st.mask.len().div_ceil(8)];
    for (j, &m) in st.mask.iter().enumerate() {
        if m != 0 {
            packed[j / 8] |= 1 << (j % 8);
        }
    }
    w.0.extend_from_slice(&packed);
    w.values(&st.attention);
    w.values(&[st.threshold]);
    w.f64(st.ratio);
    w.f64(st.z);
    w.u64(st.freq);
    w.u64(st.exploit_at);
    w.u8(st.frozen as u8);
    w.u8(scope_code(st.norm_scope));
    w.u8(kind_code(st.norm_kind));

    let opt = &ck.optimizer;
    w.f64(opt.momentum);
    w.f64(opt.weight_decay);
    w.u8(opt.decay_all as u8);
    w.u8(opt.nesterov as u8);
    w.f64(ck.lr.base);
    w.u32(ck.lr.milestones.len())?;
    for &(epoch, factor) in &ck.lr.milestones {
        w.u64(epoch as u64);
        w.f64(factor);
    }
    for v in &opt.velocity {
        w.values(v);
    }

    w.u64(ck.seed);
    w.u64(ck.next_epoch);
    w.u64(ck.iteration);
    match ck.best {
        Some((acc, epoch)) => {
            w.u8(1);
            w.f64(acc);
            w.u64(epoch);
        }
        None => {
            w.u8(0);
            w.f64(0.0);
            w.u64(0);
        }
    }

    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    Ok(w.0)
}

/// Precision tag of an encoded checkpoint, after validating its frame.
pub fn checkpoint_precision(bytes: &[u8]) -> Result<Precision> {
    let payload = verify_frame(bytes)?;
    match payload[12] {
        4 => Ok(Precision::F32),
        8 => Ok(Precision::F64),
        t => Err(Error::Checkpoint(format!("unknown precision tag {t}"))),
    }
}

fn verify_frame(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < MAGIC.len() + 4 + 1 + 4 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(payload)
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let payload = verify_frame(bytes)?;
    let mut r = Reader {
        bytes: payload,
        pos: 12,
    };
    let tag = r.u8()?;
    if tag != T::PRECISION.tag() {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {tag}-byte floats, expected {}",
            T::PRECISION.tag()
        )));
    }

    let n_layers = r.u32()?;
    let mut specs = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let in_dim = r.u32()?;
        let out_dim = r.u32()?;
        let activation = match r.u8()? {
            0 => Activation::Relu,
            1 => Activation::None,
            a => return Err(Error::Checkpoint(format!("unknown activation {a}"))),
        };
        specs.push(LayerSpec::new(in_dim, out_dim, activation));
    }

    let n_params = r.u32()?;
    let mut params = Vec::with_capacity(n_params.min(1024));
    for _ in 0..n_params {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let prunable = r.flag()?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::Checkpoint("shape overflow".into()))?;
        let data = r.values(numel)?;
        params.push(Param {
            name,
            tensor: Tensor::new(shape, data)?,
            prunable,
        });
    }
    let registry = ParamRegistry::from_parts(specs, params)
        .map_err(|e| Error::Checkpoint(format!("inconsistent architecture: {e}")))?;

    let rule = UpdateRule::from_code(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown update rule".into()))?;
    let n = r.u64()? as usize;
    let packed = r.take(n.div_ceil(8))?;
    let mask: Vec<u8> = (0..n).map(|j| (packed[j / 8] >> (j % 8)) & 1).collect();
    let attention = r.values::<T>(n)?;
    let threshold = r.values::<T>(1)?[0];
    let ratio = r.f64()?;
    let z = r.f64()?;
    let freq = r.u64()?;
    let exploit_at = r.u64()?;
    let frozen = r.flag()?;
    let norm_scope = match r.u8()? {
        0 => NormScope::Global,
        1 => NormScope::PerLayer,
        s => return Err(Error::Checkpoint(format!("unknown scope {s}"))),
    };
    let norm_kind = match r.u8()? {
        0 => NormKind::MagnitudeMinmax,
        1 => NormKind::RankLinear,
        k => return Err(Error::Checkpoint(format!("unknown normalization {k}"))),
    };
    let mut prune = PruneState::new(&registry, z, freq, exploit_at, norm_scope, norm_kind)?;
    prune.restore(mask, attention, threshold, ratio, frozen)?;

    let momentum = r.f64()?;
    let weight_decay = r.f64()?;
    let decay_all = r.flag()?;
    let nesterov = r.flag()?;
    let base = r.f64()?;
    let n_ms = r.u32()?;
    let milestones = (0..n_ms)
        .map(|_| Ok((r.u64()? as usize, r.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    let velocity = registry
        .params()
        .iter()
        .map(|p| r.values::<T>(p.tensor.len()))
        .collect::<Result<Vec<_>>>()?;
    let optimizer = Sgd {
        momentum,
        weight_decay,
        decay_all,
        nesterov,
        velocity,
    };

    let seed = r.u64()?;
    let next_epoch = r.u64()?;
    let iteration = r.u64()?;
    let has_best = r.flag()?;
    let acc = r.f64()?;
    let best_epoch = r.u64()?;
    if r.pos != payload.len() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected trailing bytes",
            payload.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        registry,
        prune,
        rule,
        optimizer,
        lr: LrSchedule { base, milestones },
        seed,
        next_epoch,
        iteration,
        best: has_best.then_some((acc, best_epoch)),
    })
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ck: &Checkpoint<T>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), &encode_checkpoint(ck)?)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_mlp, mlp_specs};

    fn sample() -> Checkpoint<f32> {
        let registry = build_mlp::<f32>(&mlp_specs(&[5, 7, 3]), 2).unwrap();
        let mut prune = PruneState::new(&registry, 1.3, 4, 99, NormScope::PerLayer, NormKind::RankLinear).unwrap();
        prune.set_ratio(0.6).unwrap();
        prune.refresh(&registry).unwrap();
        let mut optimizer = Sgd::new(&registry, 0.9, 1e-4).unwrap();
        optimizer.velocity[0][3] = 0.25;
        Checkpoint {
            registry,
            prune,
            rule: UpdateRule::C,
            optimizer,
            lr: LrSchedule::step_default(0.1, 40),
            seed: 77,
            next_epoch: 5,
            iteration: 123,
            best: Some((0.875, 4)),
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let ck = sample();
        let bytes = encode_checkpoint(&ck).unwrap();
        let back = decode_checkpoint::<f32>(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        assert_eq!(checkpoint_precision(&bytes).unwrap(), Precision::F32);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn wrong_magic_and_version() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&bad), Err(Error::Checkpoint(m)) if m.contains("magic")));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(decode_checkpoint::<f32>(&v2), Err(Error::Checkpoint(m)) if m.contains("version")));
        assert!(decode_checkpoint::<f64>(&bytes).is_err());
    }
}

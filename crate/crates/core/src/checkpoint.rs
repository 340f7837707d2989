//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! "DSRC"  u32 version
//! u32 config_len  config_len bytes of TOML (network section)
//! u32 entry_count
//! entry_count x { u32 name_len, name, u32 rank, rank x u32 dim, u32 dtype, f32 data }
//! u8 has_optimizer  [u64 step, entry_count x { f32 m, f32 v }]
//! u64 epoch
//! u8 has_rng  [32-byte seed, u64 stream, u128 word_pos]
//! ```
//!
//! Entries are sorted by name; optimizer moments follow entry order and
//! reuse the entry shapes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::config::NetworkSection;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::{Shape, Tensor};
use crate::tensor_ops::AdamState;

pub const MAGIC: [u8; 4] = *b"DSRC";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;

/// Adam step counter and per-parameter moments.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub moments: BTreeMap<String, AdamState>,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        OptimizerState {
            step: 0,
            moments: model
                .params()
                .iter()
                .map(|(name, t)| (name.clone(), AdamState::zeros_like(t)))
                .collect(),
        }
    }
}

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
    /// Completed epochs.
    pub epoch: u64,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn from_model(model: Model) -> Self {
        Checkpoint {
            model,
            optimizer: None,
            epoch: 0,
            rng: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        put_u32(&mut buf, VERSION);
        let config = NetworkSection::from(self.model.config()).to_toml();
        put_u32(&mut buf, len_u32(config.len())?);
        buf.extend_from_slice(config.as_bytes());
        put_u32(&mut buf, len_u32(params.len())?);
        for (name, t) in params {
            put_u32(&mut buf, len_u32(name.len())?);
            buf.extend_from_slice(name.as_bytes());
            let dims = t.shape().dims();
            put_u32(&mut buf, dims.len() as u32);
            for d in dims {
                put_u32(&mut buf, len_u32(d)?);
            }
            put_u32(&mut buf, DTYPE_F32);
            put_f32s(&mut buf, t);
        }
        match &self.optimizer {
            None => buf.push(0),
            Some(opt) => {
                buf.push(1);
                buf.extend_from_slice(&opt.step.to_le_bytes());
                for (name, t) in params {
                    let st = opt.moments.get(name).ok_or_else(|| {
                        Error::MalformedCheckpoint(format!("no optimizer state for {name}"))
                    })?;
                    if st.m.shape() != t.shape() || st.v.shape() != t.shape() {
                        return Err(Error::MalformedCheckpoint(format!(
                            "optimizer state for {name} has the wrong shape"
                        )));
                    }
                    put_f32s(&mut buf, &st.m);
                    put_f32s(&mut buf, &st.v);
                }
            }
        }
        buf.extend_from_slice(&self.epoch.to_le_bytes());
        match &self.rng {
            None => buf.push(0),
            Some(r) => {
                buf.push(1);
                buf.extend_from_slice(&r.seed);
                buf.extend_from_slice(&r.stream.to_le_bytes());
                buf.extend_from_slice(&r.word_pos.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let config_len = r.u32("config length")? as usize;
        let config = std::str::from_utf8(r.take(config_len, "config")?)
            .map_err(|_| Error::MalformedCheckpoint("config is not UTF-8".into()))?;
        let config = NetworkSection::from_toml(config)
            .and_then(|s| s.resolve())
            .map_err(|e| Error::MalformedCheckpoint(format!("config: {e}")))?;

        let count = r.u32("entry count")? as usize;
        let mut params = BTreeMap::new();
        let mut order = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::MalformedCheckpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            if rank != 4 {
                return Err(Error::MalformedCheckpoint(format!("{name}: rank {rank}, expected 4")));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("dims")? as usize;
            }
            let dtype = r.u32("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(Error::MalformedCheckpoint(format!("{name}: dtype tag {dtype}")));
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let t = r.f32s(shape, "tensor data")?;
            if params.insert(name.clone(), t).is_some() {
                return Err(Error::MalformedCheckpoint(format!("duplicate tensor {name}")));
            }
            order.push((name, shape));
        }
        let model = Model::from_parts(config, params)
            .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;

        let optimizer = if r.flag("optimizer flag")? {
            let step = r.u64("optimizer step")?;
            let mut moments = BTreeMap::new();
            for (name, shape) in order {
                let m = r.f32s(shape, "optimizer state")?;
                let v = r.f32s(shape, "optimizer state")?;
                moments.insert(name, AdamState { m, v });
            }
            Some(OptimizerState { step, moments })
        } else {
            None
        };
        let epoch = r.u64("epoch")?;
        let rng = if r.flag("rng flag")? {
            let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
            let stream = r.u64("rng stream")?;
            let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
            Some(RngState {
                seed,
                stream,
                word_pos,
            })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::MalformedCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            model,
            optimizer,
            epoch,
            rng,
        })
    }

    /// Writes through a temporary file so a crash never leaves a partial checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::MalformedCheckpoint(format!("length {n} exceeds u32")))
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, t: &Tensor) {
    buf.reserve(4 * t.numel());
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(what)),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn flag(&mut self, what: &'static str) -> Result<bool> {
        match self.take(1, what)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::MalformedCheckpoint(format!("{what} = {b}"))),
        }
    }

    fn f32s(&mut self, shape: Shape, what: &'static str) -> Result<Tensor> {
        let n = shape.numel();
        let raw = self.take(n.checked_mul(4).ok_or(Error::Truncated(what))?, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::MalformedCheckpoint(e.to_string()))
    }
}

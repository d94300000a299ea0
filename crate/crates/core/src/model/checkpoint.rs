// Checkpoint file layout (all integers and floats little-endian):
//
//   b"CDA1"                      magic
//   u32                          format version
//   u64                          schema fingerprint
//   u64, u64                     category_dim, campaign_dim
//   u8                           model kind
//   f64                          alpha
//   u8 [+ f64]                   phase tag (0 = base, 1 = fine-tuned + fraction)
//   u32 + bytes                  config snapshot (JSON)
//   u32                          number of parameter groups
//   per group:
//     u32 + bytes                name ("g", "f", "he")
//     u8                         output activation (0 identity, 1 logistic)
//     f64                        dropout rate
//     u32                        layer count L, then L-1 dropout flags (u8)
//     L x tensor pairs           weights, bias
//     u8                         optimizer present
//     [u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
//      L x (m_w, m_b), L x (v_w, v_b)]
//
//   tensor: u32 ndim, ndim x u64 dims, then the f64 values in row-major order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::bundle::{ModelBundle, ModelKind, TrainConfig};
use super::schema::FeatureSchema;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, DenseNet, Layer, LayerGrads, NetGrads, OutputActivation};

pub const MAGIC: &[u8; 4] = b"CDA1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    Base,
    FineTuned { fraction: f64 },
}

/// A trained model plus everything needed to keep training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub g_state: AdamState,
    pub f_state: AdamState,
    pub phase: Phase,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        self.bundle.kind
    }

    pub fn schema(&self) -> FeatureSchema {
        self.bundle.schema
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        let schema = self.bundle.schema;
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u64(schema.fingerprint());
        w.u64(schema.category_dim as u64);
        w.u64(schema.campaign_dim as u64);
        w.u8(self.bundle.kind.code());
        w.f64(self.bundle.alpha);
        match self.phase {
            Phase::Base => w.u8(0),
            Phase::FineTuned { fraction } => {
                w.u8(1);
                w.f64(fraction);
            }
        }
        w.blob(&serde_json::to_vec(&self.config)?);
        let groups: Vec<(&str, &DenseNet, Option<&AdamState>)> = [
            Some(("g", &self.bundle.g, Some(&self.g_state))),
            Some(("f", &self.bundle.f, Some(&self.f_state))),
            self.bundle.he.as_ref().map(|he| ("he", he, None)),
        ]
        .into_iter()
        .flatten()
        .collect();
        w.u32(groups.len() as u32);
        for (name, net, state) in groups {
            w.blob(name.as_bytes());
            w.net(net);
            match state {
                Some(state) => {
                    w.u8(1);
                    w.adam(state);
                }
                None => w.u8(0),
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let fingerprint = r.u64()?;
        let schema = FeatureSchema::new(r.usize()?, r.usize()?)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        if schema.fingerprint() != fingerprint {
            return Err(Error::SchemaMismatch {
                expected: schema.fingerprint(),
                found: fingerprint,
            });
        }
        let kind = ModelKind::from_code(r.u8()?).ok_or_else(|| Error::CorruptCheckpoint("unknown model kind".into()))?;
        let alpha = r.f64()?;
        let phase = match r.u8()? {
            0 => Phase::Base,
            1 => Phase::FineTuned { fraction: r.f64()? },
            t => return Err(Error::CorruptCheckpoint(format!("unknown phase tag {t}"))),
        };
        let config: TrainConfig = serde_json::from_slice(r.blob()?)
            .map_err(|e| Error::CorruptCheckpoint(format!("config snapshot: {e}")))?;
        let n_groups = r.u32()?;
        let (mut g, mut f, mut he) = (None, None, None);
        for _ in 0..n_groups {
            let name = String::from_utf8(r.blob()?.to_vec())
                .map_err(|_| Error::CorruptCheckpoint("group name is not UTF-8".into()))?;
            let net = r.net()?;
            let state = match r.u8()? {
                0 => None,
                1 => Some(r.adam(&net)?),
                t => return Err(Error::CorruptCheckpoint(format!("bad optimizer flag {t}"))),
            };
            let slot = match name.as_str() {
                "g" => &mut g,
                "f" => &mut f,
                "he" => &mut he,
                other => return Err(Error::CorruptCheckpoint(format!("unknown parameter group {other:?}"))),
            };
            if slot.replace((net, state)).is_some() {
                return Err(Error::CorruptCheckpoint(format!("duplicate parameter group {name:?}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let missing = |n: &str| Error::CorruptCheckpoint(format!("missing parameter group {n:?}"));
        let (g, g_state) = g.ok_or_else(|| missing("g"))?;
        let (f, f_state) = f.ok_or_else(|| missing("f"))?;
        let bundle = ModelBundle {
            kind,
            schema,
            g,
            f,
            he: he.map(|(net, _)| net),
            alpha,
        };
        bundle
            .check_consistency()
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        Ok(Checkpoint {
            bundle,
            g_state: g_state.ok_or_else(|| Error::CorruptCheckpoint("g has no optimizer state".into()))?,
            f_state: f_state.ok_or_else(|| Error::CorruptCheckpoint("f has no optimizer state".into()))?,
            phase,
            config,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Load and require the checkpoint to match `schema`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.schema() != *schema {
        return Err(Error::SchemaMismatch {
            expected: schema.fingerprint(),
            found: ckpt.schema().fingerprint(),
        });
    }
    Ok(ckpt)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn blob(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.bytes(b);
    }
    fn tensor<'a>(&mut self, dims: &[usize], values: impl Iterator<Item = &'a f64>) {
        self.u32(dims.len() as u32);
        for &d in dims {
            self.u64(d as u64);
        }
        for v in values {
            self.f64(*v);
        }
    }
    fn pair(&mut self, weights: &Array2<f64>, bias: &Array1<f64>) {
        self.tensor(&[weights.nrows(), weights.ncols()], weights.iter());
        self.tensor(&[bias.len()], bias.iter());
    }
    fn net(&mut self, net: &DenseNet) {
        self.u8(match net.output_activation() {
            OutputActivation::Identity => 0,
            OutputActivation::Logistic => 1,
        });
        self.f64(net.dropout_rate());
        self.u32(net.layers().len() as u32);
        for &flag in net.dropout_after() {
            self.u8(flag as u8);
        }
        for layer in net.layers() {
            self.pair(&layer.weights, &layer.bias);
        }
    }
    fn adam(&mut self, state: &AdamState) {
        self.u64(state.step);
        let c = state.config;
        for v in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
            self.f64(v);
        }
        for moments in [&state.first_moment, &state.second_moment] {
            for l in &moments.layers {
                self.pair(&l.weights, &l.bias);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CorruptCheckpoint("size overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn tensor(&mut self, ndim: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let found = self.u32()? as usize;
        if found != ndim {
            return Err(Error::CorruptCheckpoint(format!("expected a {ndim}-d tensor, found {found}-d")));
        }
        let dims = (0..ndim).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.pos))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {dims:?} exceeds the file")))?;
        let raw = self.take(count * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Ok((dims, values))
    }
    fn pair(&mut self) -> Result<(Array2<f64>, Array1<f64>)> {
        let (wd, wv) = self.tensor(2)?;
        let weights = Array2::from_shape_vec((wd[0], wd[1]), wv)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let (_, bv) = self.tensor(1)?;
        Ok((weights, Array1::from(bv)))
    }
    fn net(&mut self) -> Result<DenseNet> {
        let activation = match self.u8()? {
            0 => OutputActivation::Identity,
            1 => OutputActivation::Logistic,
            t => return Err(Error::CorruptCheckpoint(format!("unknown activation tag {t}"))),
        };
        let dropout = self.f64()?;
        let n_layers = self.u32()? as usize;
        if n_layers == 0 {
            return Err(Error::CorruptCheckpoint("net without layers".into()));
        }
        let flags = (0..n_layers - 1)
            .map(|_| self.u8().map(|b| b != 0))
            .collect::<Result<Vec<_>>>()?;
        let layers = (0..n_layers)
            .map(|_| self.pair().map(|(weights, bias)| Layer { weights, bias }))
            .collect::<Result<Vec<_>>>()?;
        DenseNet::from_parts(layers, activation, dropout, flags).map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }
    fn adam(&mut self, net: &DenseNet) -> Result<AdamState> {
        let step = self.u64()?;
        let config = AdamConfig {
            learning_rate: self.f64()?,
            beta1: self.f64()?,
            beta2: self.f64()?,
            epsilon: self.f64()?,
        };
        let mut read_moments = || -> Result<NetGrads> {
            let layers = (0..net.layers().len())
                .map(|_| self.pair().map(|(weights, bias)| LayerGrads { weights, bias }))
                .collect::<Result<Vec<_>>>()?;
            Ok(NetGrads { layers })
        };
        let first_moment = read_moments()?;
        let second_moment = read_moments()?;
        let congruent = |m: &NetGrads| {
            m.layers
                .iter()
                .zip(net.layers())
                .all(|(g, l)| g.weights.dim() == l.weights.dim() && g.bias.len() == l.bias.len())
        };
        if !congruent(&first_moment) || !congruent(&second_moment) {
            return Err(Error::CorruptCheckpoint("optimizer moments do not match parameters".into()));
        }
        Ok(AdamState {
            config,
            step,
            first_moment,
            second_moment,
        })
    }
}

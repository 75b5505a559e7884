//! Single-file training checkpoints.
//!
//! Layout: `"FDTC"`, version `u32`, then tagged sections, each a 4-byte tag,
//! a `u64` payload length and the payload. Readers skip unknown tags. All
//! numbers are little-endian and every scalar is stored as `f64`.
//!
//! | tag    | payload                                                      |
//! |--------|--------------------------------------------------------------|
//! | `CONF` | run configuration as `key = value` UTF-8 text                |
//! | `PARM` | `d_drug d_prot d_shared k` (u32), σ, centers, trainable tensors |
//! | `OPTM` | step (u64), β1 β2 ε λ peak lr, warmup (u64), total (u64), m, v |
//! | `SCAL` | label mean, label std                                        |
//! | `STAT` | completed epochs, RNG seed, RNG stream (u64 each)            |

use std::path::Path;

use crate::config::RunConfig;
use crate::data::LabelScaling;
use crate::error::{Error, FormatError, Result};
use crate::model::{Affine, Gradients, ModelParams, ParamTensor};
use crate::optim::{OptimConfig, OptimState};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"FDTC";
pub const VERSION: u32 = 1;

/// Batch-sampling RNG position: batches for epoch `e` are drawn from stream
/// `e` of the generator seeded with `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub next_stream: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub optim: OptimState<T>,
    pub config: RunConfig,
    pub scaling: LabelScaling,
    /// Completed epochs.
    pub epoch: u64,
    pub rng: RngState,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_scalars<T: Scalar>(out: &mut Vec<u8>, xs: &[T]) {
    for &x in xs {
        put_f64(out, x.to_f64_lossy());
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    put_u64(out, payload.len() as u64);
    out.extend_from_slice(payload);
}

impl<T: Scalar> Checkpoint<T> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);

        section(&mut out, b"CONF", self.config.to_text().as_bytes());

        let mut parm = Vec::new();
        let shape = self.params.shape();
        for d in [shape.d_drug, shape.d_prot, shape.d_shared, shape.k] {
            put_u32(&mut parm, d as u32);
        }
        put_f64(&mut parm, self.params.rbf_sigma.to_f64_lossy());
        put_scalars(&mut parm, &self.params.rbf_centers);
        for t in ParamTensor::ALL {
            put_scalars(&mut parm, self.params.tensor(t));
        }
        section(&mut out, b"PARM", &parm);

        let mut optm = Vec::new();
        let c = &self.optim.config;
        put_u64(&mut optm, self.optim.step);
        for v in [c.beta1, c.beta2, c.eps, c.weight_decay, c.peak_lr] {
            put_f64(&mut optm, v);
        }
        put_u64(&mut optm, c.warmup_steps);
        put_u64(&mut optm, c.total_steps);
        for buf in [&self.optim.m, &self.optim.v] {
            for t in ParamTensor::ALL {
                put_scalars(&mut optm, buf.tensor(t));
            }
        }
        section(&mut out, b"OPTM", &optm);

        let mut scal = Vec::new();
        put_f64(&mut scal, self.scaling.mean);
        put_f64(&mut scal, self.scaling.std);
        section(&mut out, b"SCAL", &scal);

        let mut stat = Vec::new();
        put_u64(&mut stat, self.epoch);
        put_u64(&mut stat, self.rng.seed);
        put_u64(&mut stat, self.rng.next_stream);
        section(&mut out, b"STAT", &stat);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FormatError> {
        if buf.len() < 4 {
            return Err(FormatError::Truncated {
                offset: buf.len() as u64,
                what: "magic",
            });
        }
        let magic: [u8; 4] = buf[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(FormatError::BadMagic {
                found: magic,
                expected: MAGIC,
            });
        }
        let mut cur = Cursor {
            buf,
            pos: 4,
            tag: "header",
        };
        let version = cur.u32()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let (mut conf, mut parm, mut optm, mut scal, mut stat) = (None, None, None, None, None);
        while cur.pos < buf.len() {
            let tag: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
            let len = cur.u64()?;
            let len = usize::try_from(len).map_err(|_| FormatError::Truncated {
                offset: buf.len() as u64,
                what: "section",
            })?;
            let payload = cur.take(len)?;
            match &tag {
                b"CONF" => conf = Some(payload),
                b"PARM" => parm = Some(payload),
                b"OPTM" => optm = Some(payload),
                b"SCAL" => scal = Some(payload),
                b"STAT" => stat = Some(payload),
                _ => {}
            }
        }
        let missing = |tag: &str| FormatError::BadSection {
            tag: tag.into(),
            reason: "missing".into(),
        };
        let bad = |tag: &str, reason: String| FormatError::BadSection {
            tag: tag.into(),
            reason,
        };

        let conf = std::str::from_utf8(conf.ok_or_else(|| missing("CONF"))?)
            .map_err(|_| bad("CONF", "not UTF-8".into()))?;
        let mut config = RunConfig::default();
        config
            .apply_text(conf)
            .map_err(|e| bad("CONF", e.to_string()))?;

        let mut p = Cursor {
            buf: parm.ok_or_else(|| missing("PARM"))?,
            pos: 0,
            tag: "PARM",
        };
        let dims: Vec<usize> = (0..4)
            .map(|_| p.u32().map(|v| v as usize))
            .collect::<Result<_, _>>()?;
        let (d_drug, d_prot, d_shared, k) = (dims[0], dims[1], dims[2], dims[3]);
        let sigma = p.f64()?;
        let rbf_centers = p.scalars(k)?;
        let mut params = ModelParams {
            proj_drug: Affine::zeros(d_shared, d_drug),
            proj_prot: Affine::zeros(d_shared, d_prot),
            film_gamma: Affine::zeros(d_shared, d_shared),
            film_beta: Affine::zeros(d_shared, d_shared),
            rbf_centers,
            rbf_sigma: T::lit(sigma),
            head_w: vec![T::zero(); k],
            head_b: T::zero(),
        };
        for t in ParamTensor::ALL {
            let n = params.tensor(t).len();
            let vals = p.scalars(n)?;
            params.tensor_mut(t).copy_from_slice(&vals);
        }
        p.finish()?;
        params.validate().map_err(|e| bad("PARM", e.to_string()))?;

        let mut o = Cursor {
            buf: optm.ok_or_else(|| missing("OPTM"))?,
            pos: 0,
            tag: "OPTM",
        };
        let step = o.u64()?;
        let cfg = OptimConfig {
            beta1: o.f64()?,
            beta2: o.f64()?,
            eps: o.f64()?,
            weight_decay: o.f64()?,
            peak_lr: o.f64()?,
            warmup_steps: o.u64()?,
            total_steps: o.u64()?,
        };
        let mut m = Gradients::zeros_like(&params);
        let mut v = Gradients::zeros_like(&params);
        for buf in [&mut m, &mut v] {
            for t in ParamTensor::ALL {
                let n = buf.tensor(t).len();
                let vals = o.scalars(n)?;
                buf.tensor_mut(t).copy_from_slice(&vals);
            }
        }
        o.finish()?;

        let mut s = Cursor {
            buf: scal.ok_or_else(|| missing("SCAL"))?,
            pos: 0,
            tag: "SCAL",
        };
        let scaling = LabelScaling {
            mean: s.f64()?,
            std: s.f64()?,
        };
        s.finish()?;

        let mut st = Cursor {
            buf: stat.ok_or_else(|| missing("STAT"))?,
            pos: 0,
            tag: "STAT",
        };
        let epoch = st.u64()?;
        let rng = RngState {
            seed: st.u64()?,
            next_stream: st.u64()?,
        };
        st.finish()?;

        Ok(Checkpoint {
            params,
            optim: OptimState {
                config: cfg,
                step,
                m,
                v,
            },
            config,
            scaling,
            epoch,
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&buf).map_err(|source| Error::Format {
            path: path.to_path_buf(),
            source,
        })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    tag: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        match self.pos.checked_add(n).filter(|&e| e <= self.buf.len()) {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                offset: self.buf.len() as u64,
                what: self.tag,
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn scalars<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>, FormatError> {
        (0..n).map(|_| self.f64().map(T::lit)).collect()
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FormatError::BadSection {
                tag: self.tag.into(),
                reason: format!("{} unread bytes", self.buf.len() - self.pos),
            })
        }
    }
}

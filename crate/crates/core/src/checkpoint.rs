//! Best-model snapshots and their binary file format.
//!
//! Layout (all integers and floats little-endian, floats as raw IEEE-754 bits):
//!
//! ```text
//! magic    8 bytes  "DYBMCKPT"
//! version  u32      = 1
//! section* tag [u8; 4], payload length u64, payload
//! ```
//!
//! Sections, written in this order:
//!
//! * `CONF` n, K, L, delay_min, delay_max (u32 each), rng_seed (u64),
//!   K synaptic decays, L neural decays (f64)
//! * `PARM` N biases, N*N*K LTP weights, N*N*L LTD weights (f64)
//! * `DLAY` N*N effective delays (u32)
//! * `PRUN` N*N original delays (u32), N*N keep flags (u8)
//! * `SCOR` epsilon (f64), training step (u64)
//! * `END.` empty
//!
//! Readers skip sections with unknown tags.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{DybmError, Result};
use crate::model::{DybmModel, ModelConfig, Parameters};
use crate::regularizers::PruneMask;

pub const MAGIC: &[u8; 8] = b"DYBMCKPT";
pub const VERSION: u32 = 1;

/// Frozen copy of a model chosen during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Parameters,
    /// Effective delays at snapshot time, pre-synaptic-major.
    pub delays: Vec<usize>,
    pub prune: PruneMask,
    pub epsilon: f64,
    pub step: u64,
}

impl Checkpoint {
    /// Snapshot of `model` with its current delays.
    pub fn capture(model: &DybmModel, prune: PruneMask, epsilon: f64, step: u64) -> Self {
        Checkpoint {
            config: model.config().clone(),
            params: model.params.clone(),
            delays: model.delays(),
            prune,
            epsilon,
            step,
        }
    }

    /// A model with the snapshot's parameters and delays and an empty history.
    pub fn to_model(&self) -> Result<DybmModel> {
        DybmModel::from_parts(self.config.clone(), self.params.clone(), &self.delays)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;

        let c = &self.config;
        let mut conf = Vec::new();
        for v in [
            c.n_units,
            c.n_synaptic_traces(),
            c.n_neural_traces(),
            c.delay_min,
            c.delay_max,
        ] {
            conf.write_u32::<LittleEndian>(to_u32(v)?)?;
        }
        conf.write_u64::<LittleEndian>(c.rng_seed)?;
        write_f64s(&mut conf, c.synaptic_decays.iter().chain(&c.neural_decays))?;
        write_section(&mut w, b"CONF", &conf)?;

        let mut parm = Vec::with_capacity(self.params.len() * 8);
        write_f64s(&mut parm, self.params.iter())?;
        write_section(&mut w, b"PARM", &parm)?;

        let mut dlay = Vec::new();
        for &d in &self.delays {
            dlay.write_u32::<LittleEndian>(to_u32(d)?)?;
        }
        write_section(&mut w, b"DLAY", &dlay)?;

        let mut prun = Vec::new();
        for &d in self.prune.original_delays() {
            prun.write_u32::<LittleEndian>(to_u32(d)?)?;
        }
        prun.extend(self.prune.keep_flags().iter().map(|&k| k as u8));
        write_section(&mut w, b"PRUN", &prun)?;

        let mut scor = Vec::new();
        scor.write_u64::<LittleEndian>(self.epsilon.to_bits())?;
        scor.write_u64::<LittleEndian>(self.step)?;
        write_section(&mut w, b"SCOR", &scor)?;

        write_section(&mut w, b"END.", &[])?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(r.error_at(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error_at(8, &format!("unsupported version {version}")));
        }

        let mut config = None;
        let mut params_raw = None;
        let mut delays = None;
        let mut prune_raw = None;
        let mut score = None;
        loop {
            let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
            let len = r.u64()?;
            let start = r.pos;
            let body = r.take(usize::try_from(len).map_err(|_| r.error_at(start as u64, "section too long"))?)?;
            let mut s = Reader { bytes: body, pos: 0 };
            match &tag {
                b"CONF" => {
                    let n = s.u32()? as usize;
                    let k = s.u32()? as usize;
                    let l = s.u32()? as usize;
                    let delay_min = s.u32()? as usize;
                    let delay_max = s.u32()? as usize;
                    let rng_seed = s.u64()?;
                    let synaptic_decays = s.f64s(k)?;
                    let neural_decays = s.f64s(l)?;
                    config = Some(ModelConfig {
                        n_units: n,
                        synaptic_decays,
                        neural_decays,
                        delay_min,
                        delay_max,
                        rng_seed,
                    });
                }
                b"PARM" => params_raw = Some((start, body)),
                b"DLAY" => {
                    let mut d = Vec::with_capacity(body.len() / 4);
                    while s.remaining() > 0 {
                        d.push(s.u32()? as usize);
                    }
                    delays = Some(d);
                }
                b"PRUN" => prune_raw = Some((start, body)),
                b"SCOR" => score = Some((f64::from_bits(s.u64()?), s.u64()?)),
                b"END." => break,
                _ => {}
            }
        }

        let missing = |what: &str| DybmError::Parse {
            offset: bytes.len() as u64,
            message: format!("missing {what} section"),
        };
        let config = config.ok_or_else(|| missing("CONF"))?;
        config.validate()?;
        let (n, k, l) = (
            config.n_units,
            config.n_synaptic_traces(),
            config.n_neural_traces(),
        );

        let (pstart, pbody) = params_raw.ok_or_else(|| missing("PARM"))?;
        let mut params = Parameters::zeros(n, k, l);
        if pbody.len() != params.len() * 8 {
            return Err(DybmError::Parse {
                offset: pstart as u64,
                message: format!("expected {} parameters", params.len()),
            });
        }
        let mut s = Reader { bytes: pbody, pos: 0 };
        for x in params.iter_mut() {
            *x = s.f64()?;
        }

        let delays = delays.ok_or_else(|| missing("DLAY"))?;
        if delays.len() != n * n {
            return Err(missing("complete DLAY"));
        }

        let (rstart, rbody) = prune_raw.ok_or_else(|| missing("PRUN"))?;
        if rbody.len() != n * n * 5 {
            return Err(DybmError::Parse {
                offset: rstart as u64,
                message: "prune section has wrong length".into(),
            });
        }
        let mut s = Reader { bytes: rbody, pos: 0 };
        let mut original = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            original.push(s.u32()? as usize);
        }
        let keep = s.take(n * n)?.iter().map(|&b| b != 0).collect();
        let prune = PruneMask::from_keep(keep, &original)?;

        let (epsilon, step) = score.ok_or_else(|| missing("SCOR"))?;
        Ok(Checkpoint {
            config,
            params,
            delays,
            prune,
            epsilon,
            step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| DybmError::config(format!("{v} does not fit the checkpoint format")))
}

fn write_f64s<'a, W: Write>(w: &mut W, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    for &v in values {
        w.write_u64::<LittleEndian>(v.to_bits())?;
    }
    Ok(())
}

fn write_section<W: Write>(w: &mut W, tag: &[u8; 4], payload: &[u8]) -> Result<()> {
    w.write_all(tag)?;
    w.write_u64::<LittleEndian>(payload.len() as u64)?;
    w.write_all(payload)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn error_at(&self, offset: u64, message: &str) -> DybmError {
        DybmError::Parse {
            offset,
            message: message.to_string(),
        }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(self.error_at(self.pos as u64, "truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = self.take(4)?;
        Ok(b.read_u32::<LittleEndian>()?)
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = self.take(8)?;
        Ok(b.read_u64::<LittleEndian>()?)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

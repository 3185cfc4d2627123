//! Checkpoint codec. Layout: magic `GSPC1`, then seven little-endian u32
//! header words (d_model, n_heads, d_ff, n_layers, vocab, step, task_count),
//! then named sections, each `(u32 name length, name bytes, u32 element
//! count, f32 little-endian data)`. The f32 payload round-trips bit-exactly.

use super::{AdamState, Model, Real};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const MAGIC: &[u8; 5] = b"GSPC1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (not a GSPC1 checkpoint)")]
    BadMagic,
    #[error("section name is not valid utf-8")]
    BadName,
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointData {
    pub d_model: u32,
    pub n_heads: u32,
    pub d_ff: u32,
    pub n_layers: u32,
    pub vocab: u32,
    pub step: u32,
    pub task_count: u32,
    pub sections: Vec<(String, Vec<f32>)>,
}

impl CheckpointData {
    pub fn section(&self, name: &str) -> Option<&[f32]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, d)| d.as_slice())
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, data: &CheckpointData) -> io::Result<()> {
    w.write_all(MAGIC)?;
    for v in [
        data.d_model,
        data.n_heads,
        data.d_ff,
        data.n_layers,
        data.vocab,
        data.step,
        data.task_count,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for (name, values) in &data.sections {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(values.len() as u32).to_le_bytes())?;
        // One write per section keeps this fast for the 131k-float blocks.
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<CheckpointData, CheckpointError> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut head = [0u32; 7];
    for h in &mut head {
        *h = read_u32(&mut r)?;
    }
    let mut sections = Vec::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| CheckpointError::BadName)?;
        let count = read_u32(&mut r)? as usize;
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        sections.push((name, values));
    }
    Ok(CheckpointData {
        d_model: head[0],
        n_heads: head[1],
        d_ff: head[2],
        n_layers: head[3],
        vocab: head[4],
        step: head[5],
        task_count: head[6],
        sections,
    })
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

impl<F: Real> Model<F> {
    /// Model parameters as a checkpoint (no optimizer state).
    pub fn to_checkpoint(&self, step: u32) -> CheckpointData {
        CheckpointData {
            d_model: self.cfg.d_model as u32,
            n_heads: self.cfg.n_heads as u32,
            d_ff: self.cfg.d_ff as u32,
            n_layers: self.cfg.n_layers as u32,
            vocab: self.cfg.vocab as u32,
            step,
            task_count: self.n_tasks as u32,
            sections: self
                .store
                .iter()
                .map(|(n, d)| (n.to_string(), d.iter().map(|v| v.as_f32()).collect()))
                .collect(),
        }
    }

    /// Full training state: parameters plus Adam moments.
    pub fn to_resume_checkpoint(&self, step: u32, opt: &AdamState<F>) -> CheckpointData {
        let mut data = self.to_checkpoint(step);
        data.sections.extend(opt.moment_sections(self));
        data
    }

    /// Load named parameter sections into this model; header dims must match.
    pub fn load_checkpoint(&mut self, data: &CheckpointData) -> Result<(), CheckpointError> {
        let want = [
            (data.d_model, self.cfg.d_model as u32, "d_model"),
            (data.n_heads, self.cfg.n_heads as u32, "n_heads"),
            (data.d_ff, self.cfg.d_ff as u32, "d_ff"),
            (data.n_layers, self.cfg.n_layers as u32, "n_layers"),
            (data.vocab, self.cfg.vocab as u32, "vocab"),
            (data.task_count, self.n_tasks as u32, "task_count"),
        ];
        for (got, expect, name) in want {
            if got != expect {
                return Err(CheckpointError::Mismatch(format!(
                    "{name}: checkpoint {got}, model {expect}"
                )));
            }
        }
        for (name, dst) in self.store.iter_mut() {
            let src = data
                .sections
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, d)| d)
                .ok_or_else(|| CheckpointError::Mismatch(format!("missing section {name}")))?;
            if src.len() != dst.len() {
                return Err(CheckpointError::Mismatch(format!(
                    "section {name}: {} values, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = F::of(s as f64);
            }
        }
        Ok(())
    }

    /// Restore optimizer moments from a resume checkpoint.
    pub fn load_resume_state(
        &self,
        data: &CheckpointData,
        opt: &mut AdamState<F>,
    ) -> Result<(), CheckpointError> {
        opt.load_moment_sections(self, &data.sections)
            .map_err(CheckpointError::Mismatch)?;
        opt.step = data.step as usize;
        Ok(())
    }
}

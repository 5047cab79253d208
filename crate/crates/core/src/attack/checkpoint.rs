//! Versioned run checkpoints: network parameters, optimizer state, rng
//! state, ledger snapshot and the history so far. A run resumed from any
//! checkpoint under fixed seeds reproduces the uninterrupted run.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::history::TrainingHistory;
use crate::error::{Error, Result};
use crate::nn::{read_archive, write_archive, TensorEntry};
use crate::oracle::QueryLedger;
use crate::rng::RngState;

/// Where a run stands; phases already completed are skipped on resume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseMarker {
    Start,
    AfterPretrain,
    AfterInitClone,
    AfterRefine,
    AfterRetrain,
    /// Mid-alternating checkpoint; `next_iter` is the next loop iteration.
    Alternating { next_iter: u64 },
    Done,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub phase: PhaseMarker,
    pub config_text: String,
    pub rng: RngState,
    pub ledger: QueryLedger,
    pub history: TrainingHistory,
    pub gen_spec: String,
    pub dis_spec: String,
    pub clone_spec: String,
    pub adam_g_t: u64,
    pub adam_d_t: u64,
    /// Clone steps taken inside the alternating phase (cosine position).
    pub clone_alt_steps: u64,
    /// Generator/discriminator iterations so far (d_every phase position).
    pub gan_iters: u64,
    pub global_step: u64,
    pub best_accuracy: Option<f64>,
    pub best_at_queries: u64,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<TensorEntry>,
}

const MAGIC: &[u8; 4] = b"MXCK";

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(&crate::FORMAT_VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::format(e.to_string()))?;
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(&header)?;
        write_archive(&mut f, &self.tensors)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("not a checkpoint file".to_string()));
        }
        let mut vbuf = [0u8; 4];
        f.read_exact(&mut vbuf)?;
        let version = u32::from_le_bytes(vbuf);
        if version != crate::FORMAT_VERSION {
            return Err(Error::format(format!(
                "checkpoint version {version}, expected {}",
                crate::FORMAT_VERSION
            )));
        }
        let mut lbuf = [0u8; 8];
        f.read_exact(&mut lbuf)?;
        let mut header = vec![0u8; u64::from_le_bytes(lbuf) as usize];
        f.read_exact(&mut header)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header).map_err(|e| Error::format(e.to_string()))?;
        if header.version != crate::FORMAT_VERSION {
            return Err(Error::format("checkpoint header version mismatch"));
        }
        let tensors = read_archive(&mut f)?;
        Ok(Checkpoint { header, tensors })
    }
}

//! Stored per-task logits used to check that later tasks never disturb
//! earlier ones.
//!
//! Binary layout (little-endian): magic `SPACEFIX`, version, fixture count,
//! then per fixture the task id, shapes and the raw `f64` inputs and logits.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use space_core::linalg::DenseMatrix;
use space_core::nn::Network;

use crate::error::{HarnessError, Result};

const MAGIC: &[u8; 8] = b"SPACEFIX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitFixture {
    pub task: u32,
    pub inputs: DenseMatrix,
    /// Logits of the snapshot taken right after `task` was learned.
    pub logits: DenseMatrix,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureSet {
    pub fixtures: Vec<LogitFixture>,
}

/// Largest absolute logit difference per fixture when replayed on `net`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayResult {
    pub task: u32,
    pub max_abs_diff: f64,
}

impl FixtureSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.write_u32::<LE>(VERSION).unwrap();
        w.write_u64::<LE>(self.fixtures.len() as u64).unwrap();
        for f in &self.fixtures {
            w.write_u32::<LE>(f.task).unwrap();
            for m in [&f.inputs, &f.logits] {
                w.write_u64::<LE>(m.rows() as u64).unwrap();
                w.write_u64::<LE>(m.cols() as u64).unwrap();
                for &v in m.as_slice() {
                    w.write_f64::<LE>(v).unwrap();
                }
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| HarnessError::Fixture(what.to_string());
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        if r.read_u32::<LE>().map_err(|_| bad("truncated header"))? != VERSION {
            return Err(bad("unsupported version"));
        }
        let n = r.read_u64::<LE>().map_err(|_| bad("truncated header"))?;
        let mut fixtures = Vec::new();
        for _ in 0..n {
            let task = r.read_u32::<LE>().map_err(|_| bad("truncated fixture"))?;
            let mut read_matrix = || -> Result<DenseMatrix> {
                let rows = r.read_u64::<LE>().map_err(|_| bad("truncated shape"))? as usize;
                let cols = r.read_u64::<LE>().map_err(|_| bad("truncated shape"))? as usize;
                let len = rows.checked_mul(cols).filter(|&l| l * 8 <= bytes.len()).ok_or_else(|| bad("implausible shape"))?;
                let mut data = vec![0.0; len];
                r.read_f64_into::<LE>(&mut data).map_err(|_| bad("truncated values"))?;
                Ok(DenseMatrix::from_vec(rows, cols, data)?)
            };
            let inputs = read_matrix()?;
            let logits = read_matrix()?;
            fixtures.push(LogitFixture { task, inputs, logits });
        }
        if r.position() as usize != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { fixtures })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Recomputes every fixture's logits with `net` (task mask and head).
    pub fn replay(&self, net: &Network) -> Result<Vec<ReplayResult>> {
        self.fixtures.iter().map(|f| self.replay_one(net, f)).collect()
    }

    pub fn replay_one(&self, net: &Network, f: &LogitFixture) -> Result<ReplayResult> {
        let now = net.predict(&f.inputs, f.task)?;
        if now.shape() != f.logits.shape() {
            return Err(HarnessError::Fixture(format!("task {}: logit shape changed", f.task)));
        }
        let max_abs_diff =
            now.as_slice().iter().zip(f.logits.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok(ReplayResult { task: f.task, max_abs_diff })
    }
}

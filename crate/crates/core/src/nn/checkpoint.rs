//! Versioned little-endian binary checkpoint.
//!
//! Layout: magic `SPACECKP`, format version, seed, architecture, every
//! feature layer (weights, biases, momentum, ownership, causal limits),
//! every head, the core ledger and the per-task accuracy history. Encoding
//! is canonical, so save → load → save reproduces the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::arch::{Architecture, InputShape, LayerSpec};
use super::layer::{Head, LayerState, Ownership};
use super::network::Network;
use crate::error::{Error, Result};
use crate::space::CoreLedger;

pub const MAGIC: &[u8; 8] = b"SPACECKP";
pub const FORMAT_VERSION: u32 = 1;

const NO_LIMIT: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub ledger: CoreLedger,
    /// `accuracy_history[t - 1][s - 1]`: test accuracy (%) of task `s`
    /// measured after learning task `t`.
    pub accuracy_history: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        self.write(&mut w).expect("writing to a Vec cannot fail");
        w
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let net = &self.network;
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;
        w.write_u64::<LE>(net.seed())?;

        let arch = net.architecture();
        for v in [arch.input.channels, arch.input.height, arch.input.width] {
            write_len(w, v)?;
        }
        write_len(w, arch.layers.len())?;
        for spec in &arch.layers {
            match *spec {
                LayerSpec::Dense { width, dropout } => {
                    w.write_u8(0)?;
                    write_len(w, width)?;
                    for _ in 0..3 {
                        write_len(w, 0)?;
                    }
                    w.write_f64::<LE>(dropout)?;
                }
                LayerSpec::Conv { filters, kernel, padding, pool, dropout } => {
                    w.write_u8(1)?;
                    for v in [filters, kernel, padding, pool] {
                        write_len(w, v)?;
                    }
                    w.write_f64::<LE>(dropout)?;
                }
            }
        }

        for layer in &net.layers {
            write_f64s(w, &layer.weights)?;
            write_f64s(w, &layer.bias)?;
            write_f64s(w, &layer.weight_momentum)?;
            write_f64s(w, &layer.bias_momentum)?;
            for o in &layer.ownership {
                match *o {
                    Ownership::Free => {
                        w.write_u8(0)?;
                        w.write_u32::<LE>(0)?;
                    }
                    Ownership::Current => {
                        w.write_u8(1)?;
                        w.write_u32::<LE>(0)?;
                    }
                    Ownership::Core(t) => {
                        w.write_u8(2)?;
                        w.write_u32::<LE>(t)?;
                    }
                }
            }
            for lim in &layer.input_limit {
                w.write_u32::<LE>(lim.map_or(NO_LIMIT, |v| v as u32))?;
            }
        }

        write_len(w, net.heads.len())?;
        for (task, head) in &net.heads {
            w.write_u32::<LE>(*task)?;
            write_len(w, head.in_channels)?;
            write_len(w, head.positions)?;
            write_len(w, head.n_classes)?;
            write_f64s(w, &head.weights)?;
            write_f64s(w, &head.bias)?;
            write_f64s(w, &head.weight_momentum)?;
            write_f64s(w, &head.bias_momentum)?;
        }

        write_len(w, self.ledger.n_tasks())?;
        for row in self.ledger.rows() {
            for &c in row {
                write_len(w, c)?;
            }
        }

        write_len(w, self.accuracy_history.len())?;
        for row in &self.accuracy_history {
            write_f64s(w, row)?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let ckpt = Self::read(&mut r)?;
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.position() as usize
            )));
        }
        Ok(ckpt)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.read_u32::<LE>().map_err(eof)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let seed = r.read_u64::<LE>().map_err(eof)?;
        let input = InputShape::image(read_len(r)?, read_len(r)?, read_len(r)?);
        let n_layers = read_len(r)?;
        let mut specs = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let kind = r.read_u8().map_err(eof)?;
            let (a, b, c, d) = (read_len(r)?, read_len(r)?, read_len(r)?, read_len(r)?);
            let dropout = r.read_f64::<LE>().map_err(eof)?;
            specs.push(match kind {
                0 => LayerSpec::Dense { width: a, dropout },
                1 => LayerSpec::Conv { filters: a, kernel: b, padding: c, pool: d, dropout },
                k => return Err(Error::Checkpoint(format!("unknown layer kind tag {k}"))),
            });
        }
        let arch = Architecture::new(input, specs).map_err(|e| Error::Checkpoint(format!("bad architecture: {e}")))?;
        let template = Network::new(arch.clone(), seed)?;

        let mut layers = Vec::with_capacity(n_layers);
        for proto in &template.layers {
            let mut layer: LayerState = proto.clone();
            let (n, o) = (layer.patch_len(), layer.n_out());
            layer.weights = read_f64s(r, n * o)?;
            layer.bias = read_f64s(r, o)?;
            layer.weight_momentum = read_f64s(r, n * o)?;
            layer.bias_momentum = read_f64s(r, o)?;
            for j in 0..o {
                let tag = r.read_u8().map_err(eof)?;
                let t = r.read_u32::<LE>().map_err(eof)?;
                layer.ownership[j] = match tag {
                    0 => Ownership::Free,
                    1 => Ownership::Current,
                    2 => Ownership::Core(t),
                    k => return Err(Error::Checkpoint(format!("unknown ownership tag {k}"))),
                };
            }
            for j in 0..o {
                let lim = r.read_u32::<LE>().map_err(eof)?;
                layer.input_limit[j] = if lim == NO_LIMIT { None } else { Some(lim as usize) };
            }
            layers.push(layer);
        }

        let n_heads = read_len(r)?;
        let mut heads = BTreeMap::new();
        for _ in 0..n_heads {
            let task = r.read_u32::<LE>().map_err(eof)?;
            let in_channels = read_len(r)?;
            let positions = read_len(r)?;
            let n_classes = read_len(r)?;
            let fan = in_channels
                .checked_mul(positions)
                .and_then(|v| v.checked_mul(n_classes))
                .ok_or_else(|| Error::Checkpoint("head size overflow".into()))?;
            let head = Head {
                in_channels,
                positions,
                n_classes,
                weights: read_f64s(r, fan)?,
                bias: read_f64s(r, n_classes)?,
                weight_momentum: read_f64s(r, fan)?,
                bias_momentum: read_f64s(r, n_classes)?,
            };
            if heads.insert(task, head).is_some() {
                return Err(Error::Checkpoint(format!("duplicate head for task {task}")));
            }
        }

        let widths = arch.widths();
        let n_tasks = read_len(r)?;
        let mut rows = Vec::with_capacity(n_tasks.min(1 << 16));
        for _ in 0..n_tasks {
            rows.push((0..widths.len()).map(|_| read_len(r)).collect::<Result<Vec<_>>>()?);
        }
        let ledger = CoreLedger::from_parts(widths, rows).map_err(|e| Error::Checkpoint(format!("bad ledger: {e}")))?;

        let n_hist = read_len(r)?;
        let mut accuracy_history = Vec::with_capacity(n_hist.min(1 << 16));
        for _ in 0..n_hist {
            accuracy_history.push(read_f64s_prefixed(r)?);
        }

        Ok(Self { network: Network::from_parts(arch, layers, heads, seed), ledger, accuracy_history })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_len<W: Write>(w: &mut W, v: usize) -> Result<()> {
    w.write_u64::<LE>(v as u64)?;
    Ok(())
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let v = r.read_u64::<LE>().map_err(eof)?;
    usize::try_from(v).map_err(|_| Error::Checkpoint(format!("length {v} does not fit in memory")))
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    write_len(w, values.len())?;
    for &v in values {
        w.write_f64::<LE>(v)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, expected: usize) -> Result<Vec<f64>> {
    let len = read_len(r)?;
    if len != expected {
        return Err(Error::Checkpoint(format!("tensor has {len} values, expected {expected}")));
    }
    let mut out = vec![0.0; len];
    r.read_f64_into::<LE>(&mut out).map_err(eof)?;
    Ok(out)
}

fn read_f64s_prefixed<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let len = read_len(r)?;
    if len > 1 << 20 {
        return Err(Error::Checkpoint(format!("implausible row length {len}")));
    }
    let mut out = vec![0.0; len];
    r.read_f64_into::<LE>(&mut out).map_err(eof)?;
    Ok(out)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(eof)
}

fn eof(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("unexpected end of checkpoint".into())
    } else {
        Error::Io(e)
    }
}

use rand::seq::index::sample;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linalg::{mean_normalize, DenseMatrix};
use crate::nn::{derive_rng, Mode, Network};

/// Examples analysed per task unless configured otherwise.
pub const DEFAULT_ACTIVATION_SAMPLES: usize = 1000;
/// Row cap for convolutional layers; excess spatial rows are subsampled.
pub const MAX_ACTIVATION_ROWS: usize = 50_000;

const EXAMPLE_SLOT: u64 = 0xAC7;
const ROW_SLOT: u64 = 0xAC8;
const CHUNK: usize = 256;

/// Mean-normalized pre-ReLU responses of one layer: one row per example
/// (dense) or per example and output position (conv), one column per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub layer: usize,
    pub centered: DenseMatrix,
    pub means: Vec<f64>,
}

impl ActivationMatrix {
    /// Centers `raw` and wraps it.
    pub fn from_raw(layer: usize, raw: &DenseMatrix) -> Result<Self> {
        if raw.rows() < 2 {
            return Err(Error::TooFewSamples(raw.rows()));
        }
        let (centered, means) = mean_normalize(raw)?;
        Ok(Self { layer, centered, means })
    }

    pub fn n_samples(&self) -> usize {
        self.centered.rows()
    }

    pub fn n_filters(&self) -> usize {
        self.centered.cols()
    }
}

/// Runs up to `sample_count` examples (chosen by seeded shuffle; all of them
/// if fewer are available) through the network under `mask` in eval mode
/// and returns every feature layer's activation matrix.
pub fn collect_activations(
    net: &Network,
    x: &DenseMatrix,
    task: u32,
    mask: &[usize],
    sample_count: usize,
    seed: u64,
) -> Result<Vec<ActivationMatrix>> {
    if x.rows() == 0 || sample_count == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let m = sample_count.min(x.rows());
    if m < x.rows() {
        order.shuffle(&mut derive_rng(seed, task, EXAMPLE_SLOT));
        order.truncate(m);
        order.sort_unstable();
    }

    // rows kept per layer, decided up front so chunking does not matter
    let geometries = net.architecture().geometries()?;
    let keep: Vec<Option<Vec<bool>>> = geometries
        .iter()
        .enumerate()
        .map(|(l, g)| {
            let total = m * g.positions();
            (total > MAX_ACTIVATION_ROWS).then(|| {
                let mut flags = vec![false; total];
                for i in sample(&mut derive_rng(seed, task, ROW_SLOT + l as u64), total, MAX_ACTIVATION_ROWS) {
                    flags[i] = true;
                }
                flags
            })
        })
        .collect();

    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); geometries.len()];
    let mut seen = vec![0usize; geometries.len()];
    for chunk in order.chunks(CHUNK) {
        let (_, caches) = net.run_layers(&x.select_rows(chunk), mask, Mode::Eval)?;
        for (l, cache) in caches.into_iter().enumerate() {
            let z = cache.into_pre_relu();
            match &keep[l] {
                None => raw[l].extend_from_slice(z.as_slice()),
                Some(flags) => {
                    for r in 0..z.rows() {
                        if flags[seen[l] + r] {
                            raw[l].extend_from_slice(z.row(r));
                        }
                    }
                }
            }
            seen[l] += z.rows();
        }
    }

    raw.into_iter()
        .zip(&geometries)
        .enumerate()
        .map(|(l, (data, g))| {
            let rows = data.len() / g.n_out;
            ActivationMatrix::from_raw(l, &DenseMatrix::from_vec(rows, g.n_out, data)?)
        })
        .collect()
}

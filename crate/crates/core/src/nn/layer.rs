use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::LayerGeometry;

/// Who a filter (output channel) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ownership {
    /// Frozen knowledge of the given task.
    Core(u32),
    /// Trainable scratch space of the task being learned.
    Current,
    /// Pruned; zero weights until reinitialized for the next task.
    Free,
}

/// Parameters and optimizer state of one feature layer.
///
/// `weights` is the `N × n_out` matrix in row-major order, so filter `j` is
/// column `j`. `input_limit[j]` is the causal input mask of filter `j`: it
/// may only read input channels below the limit (`None` = all channels).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub geometry: LayerGeometry,
    pub dropout: f64,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub weight_momentum: Vec<f64>,
    pub bias_momentum: Vec<f64>,
    pub ownership: Vec<Ownership>,
    pub input_limit: Vec<Option<usize>>,
}

impl LayerState {
    pub(crate) fn new(geometry: LayerGeometry, dropout: f64) -> Self {
        let (n, o) = (geometry.patch_len, geometry.n_out);
        Self {
            geometry,
            dropout,
            weights: vec![0.0; n * o],
            bias: vec![0.0; o],
            weight_momentum: vec![0.0; n * o],
            bias_momentum: vec![0.0; o],
            ownership: vec![Ownership::Free; o],
            input_limit: vec![None; o],
        }
    }

    pub fn n_out(&self) -> usize {
        self.geometry.n_out
    }

    pub fn patch_len(&self) -> usize {
        self.geometry.patch_len
    }

    #[inline]
    pub fn weight(&self, row: usize, filter: usize) -> f64 {
        self.weights[row * self.n_out() + filter]
    }

    /// Number of filters frozen for tasks `≤ task` (a prefix by invariant).
    pub fn core_count_through(&self, task: u32) -> usize {
        self.ownership.iter().filter(|o| matches!(o, Ownership::Core(s) if *s <= task)).count()
    }

    pub fn core_count(&self) -> usize {
        self.ownership.iter().filter(|o| matches!(o, Ownership::Core(_))).count()
    }

    /// Whether filter `j` may be updated while training `task`.
    #[inline]
    pub fn is_trainable(&self, j: usize, task: u32) -> bool {
        match self.ownership[j] {
            Ownership::Current => true,
            Ownership::Core(s) => s == task,
            Ownership::Free => false,
        }
    }

    /// Whether weight `(row, j)` is allowed to be nonzero by the causal mask.
    #[inline]
    pub fn is_unmasked(&self, row: usize, j: usize) -> bool {
        match self.input_limit[j] {
            Some(limit) => self.geometry.channel_of(row) < limit,
            None => true,
        }
    }

    /// Uniform `±1/√fan_in` draw for filter `j`.
    pub(crate) fn init_filter(&mut self, j: usize, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (self.patch_len() as f64).sqrt();
        let o = self.n_out();
        for row in 0..self.patch_len() {
            self.weights[row * o + j] = rng.gen_range(-bound..bound);
        }
        self.bias[j] = rng.gen_range(-bound..bound);
    }

    pub(crate) fn zero_filter(&mut self, j: usize) {
        let o = self.n_out();
        for row in 0..self.patch_len() {
            self.weights[row * o + j] = 0.0;
            self.weight_momentum[row * o + j] = 0.0;
        }
        self.bias[j] = 0.0;
        self.bias_momentum[j] = 0.0;
    }

    /// Zeroes the entries of filter `j` that its causal mask excludes.
    pub(crate) fn apply_input_limit(&mut self, j: usize) {
        let o = self.n_out();
        for row in 0..self.patch_len() {
            if !self.is_unmasked(row, j) {
                self.weights[row * o + j] = 0.0;
                self.weight_momentum[row * o + j] = 0.0;
            }
        }
    }

    pub(crate) fn reset_momentum(&mut self) {
        self.weight_momentum.iter_mut().for_each(|v| *v = 0.0);
        self.bias_momentum.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Parameters of filter `j` that count as owned: unmasked weights plus
    /// the bias.
    pub fn owned_parameters(&self, j: usize) -> usize {
        let per_channel = self.geometry.elements_per_channel();
        let channels = self.input_limit[j].unwrap_or(self.geometry.in_channels).min(self.geometry.in_channels);
        channels * per_channel + 1
    }
}

/// Classifier head for one task. Reads the first `in_channels` channels of
/// the last feature layer at every output position.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub in_channels: usize,
    pub positions: usize,
    pub n_classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub weight_momentum: Vec<f64>,
    pub bias_momentum: Vec<f64>,
}

impl Head {
    pub(crate) fn new(in_channels: usize, positions: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_channels * positions;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..fan_in * n_classes).map(|_| rng.gen_range(-bound..bound)).collect();
        let bias = (0..n_classes).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            in_channels,
            positions,
            n_classes,
            weights,
            bias,
            weight_momentum: vec![0.0; fan_in * n_classes],
            bias_momentum: vec![0.0; n_classes],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.positions
    }

    /// Keeps only the first `channels` input channels at every position.
    pub(crate) fn narrow(&mut self, channels: usize) {
        if channels >= self.in_channels {
            return;
        }
        let k = self.n_classes;
        let mut w = Vec::with_capacity(channels * self.positions * k);
        for p in 0..self.positions {
            for c in 0..channels {
                let row = p * self.in_channels + c;
                w.extend_from_slice(&self.weights[row * k..(row + 1) * k]);
            }
        }
        self.weights = w;
        self.in_channels = channels;
        self.weight_momentum = vec![0.0; self.weights.len()];
        self.bias_momentum.iter_mut().for_each(|v| *v = 0.0);
    }

    pub(crate) fn reset_momentum(&mut self) {
        self.weight_momentum.iter_mut().for_each(|v| *v = 0.0);
        self.bias_momentum.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Independent stream for `(seed, task, slot)`; `slot` distinguishes layers,
/// heads and dropout.
pub fn derive_rng(seed: u64, task: u32, slot: u64) -> ChaCha8Rng {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [task as u64, slot] {
        z = splitmix(z ^ v.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    }
    ChaCha8Rng::seed_from_u64(z)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

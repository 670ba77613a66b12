use std::collections::BTreeMap;

use rand::Rng;

use super::arch::{Architecture, LayerKind};
use super::conv::{col2im, im2col, max_pool, max_pool_backward};
use super::layer::{derive_rng, Head, LayerState, Ownership};
use crate::error::{Error, Result};
use crate::linalg::{matmul_into, matmul_t_into, t_matmul_into, DenseMatrix};

/// RNG slot offset for classifier heads; feature layers use their index.
const HEAD_SLOT: u64 = 1 << 32;
const DROPOUT_SLOT: u64 = 1 << 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Training forward pass; the seed drives the dropout masks.
    Train { dropout_seed: u64 },
}

/// Per-layer intermediate values kept for backpropagation and for
/// activation analysis.
#[derive(Debug, Clone)]
pub struct LayerCache {
    patches: Vec<f64>,
    pre_relu: Vec<f64>,
    rows: usize,
    n_out: usize,
    pool_arg: Option<Vec<usize>>,
    dropout_scale: Option<Vec<f64>>,
}

impl LayerCache {
    /// Masked pre-ReLU responses, one row per example (dense) or per example
    /// and spatial position (conv).
    pub fn pre_relu(&self) -> DenseMatrix {
        DenseMatrix::from_raw(self.rows, self.n_out, self.pre_relu.clone())
    }

    /// Winning input index of every pooled output, if the layer pools.
    pub fn pool_argmax(&self) -> Option<&[usize]> {
        self.pool_arg.as_deref()
    }

    pub fn into_pre_relu(self) -> DenseMatrix {
        DenseMatrix::from_raw(self.rows, self.n_out, self.pre_relu)
    }
}

/// Output of a forward pass through the feature layers and one head.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: DenseMatrix,
    pub layers: Vec<LayerCache>,
    features: Vec<f64>,
    head_input: Vec<f64>,
}

/// Parameter gradients of the feature layers and of one head.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub head: (Vec<f64>, Vec<f64>),
}

/// Hyperparameters of one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct SgdStep {
    pub lr: f64,
    pub momentum: f64,
    pub dropout_seed: u64,
}

/// Fixed-size feature extractor with per-filter ownership and one
/// classifier head per task.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    pub layers: Vec<LayerState>,
    pub heads: BTreeMap<u32, Head>,
    seed: u64,
}

impl Network {
    /// Builds the network with every filter `Free`; call
    /// [`Network::begin_task`] to initialize them.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let geoms = arch.geometries()?;
        let layers = geoms.iter().zip(&arch.layers).map(|(g, s)| LayerState::new(*g, s.dropout())).collect();
        Ok(Self { arch, layers, heads: BTreeMap::new(), seed })
    }

    pub(crate) fn from_parts(arch: Architecture, layers: Vec<LayerState>, heads: BTreeMap<u32, Head>, seed: u64) -> Self {
        Self { arch, layers, heads, seed }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_len(&self) -> usize {
        self.arch.input.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(LayerState::n_out).collect()
    }

    /// Reinitializes every `Free` filter as `Current` for `task` and resets
    /// all optimizer state.
    pub fn begin_task(&mut self, task: u32) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let mut rng = derive_rng(self.seed, task, l as u64);
            for j in 0..layer.n_out() {
                if layer.ownership[j] == Ownership::Free {
                    layer.init_filter(j, &mut rng);
                    layer.ownership[j] = Ownership::Current;
                    layer.input_limit[j] = None;
                }
            }
        }
        self.reset_optimizer();
    }

    pub fn reset_optimizer(&mut self) {
        self.layers.iter_mut().for_each(LayerState::reset_momentum);
        self.heads.values_mut().for_each(Head::reset_momentum);
    }

    /// Registers a freshly initialized classifier for `task`.
    pub fn add_head(&mut self, task: u32, in_channels: usize, n_classes: usize) -> Result<()> {
        if self.heads.contains_key(&task) {
            return Err(Error::DuplicateHead(task));
        }
        let last = self.layers.last().expect("architecture has layers");
        if in_channels == 0 || in_channels > last.n_out() || n_classes == 0 {
            return Err(Error::InvalidArgument(format!(
                "head needs 1..={} input channels and at least one class (got {in_channels}, {n_classes})",
                last.n_out()
            )));
        }
        let positions = last.geometry.output_positions();
        let mut rng = derive_rng(self.seed, task, HEAD_SLOT);
        self.heads.insert(task, Head::new(in_channels, positions, n_classes, &mut rng));
        Ok(())
    }

    pub fn head(&self, task: u32) -> Result<&Head> {
        self.heads.get(&task).ok_or(Error::NoHead(task))
    }

    /// Restricts the head of `task` to the first `channels` channels,
    /// keeping the trained weights of those channels.
    pub fn narrow_head(&mut self, task: u32, channels: usize) -> Result<()> {
        let head = self.heads.get_mut(&task).ok_or(Error::NoHead(task))?;
        head.narrow(channels);
        Ok(())
    }

    /// Per-layer count of filters frozen for tasks `≤ task`: the inference
    /// mask selected by a task hint.
    pub fn task_mask(&self, task: u32) -> Vec<usize> {
        self.layers.iter().map(|l| l.core_count_through(task)).collect()
    }

    /// Per-layer count of non-free filters.
    pub fn active_mask(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.ownership.iter().filter(|o| **o != Ownership::Free).count()).collect()
    }

    pub fn full_mask(&self) -> Vec<usize> {
        self.widths()
    }

    /// Forward pass through the feature layers and the head of `task`.
    /// Channels at or beyond `mask[l]` are forced to zero after layer `l`.
    pub fn forward(&self, x: &DenseMatrix, task: u32, mask: &[usize], mode: Mode) -> Result<ForwardPass> {
        let head = self.head(task)?;
        let (features, layers) = self.run_layers(x, mask, mode)?;
        let m = x.rows();
        let last = &self.layers[self.layers.len() - 1];
        let (positions, channels) = (last.geometry.output_positions(), last.n_out());
        if head.positions != positions {
            return Err(Error::DimensionMismatch(format!(
                "head expects {} positions, last layer has {positions}",
                head.positions
            )));
        }
        let fan_in = head.fan_in();
        let mut head_input = vec![0.0; m * fan_in];
        for e in 0..m {
            for p in 0..positions {
                let src = (e * positions + p) * channels;
                let dst = e * fan_in + p * head.in_channels;
                head_input[dst..dst + head.in_channels].copy_from_slice(&features[src..src + head.in_channels]);
            }
        }
        let mut logits = Vec::with_capacity(m * head.n_classes);
        for _ in 0..m {
            logits.extend_from_slice(&head.bias);
        }
        matmul_into(&head_input, &head.weights, &mut logits, m, fan_in, head.n_classes);
        Ok(ForwardPass { logits: DenseMatrix::from_raw(m, head.n_classes, logits), layers, features, head_input })
    }

    /// Eval-mode logits of `task` under its own inference mask.
    pub fn predict(&self, x: &DenseMatrix, task: u32) -> Result<DenseMatrix> {
        let mask = self.task_mask(task);
        Ok(self.forward(x, task, &mask, Mode::Eval)?.logits)
    }

    /// Forward pass through the feature layers only; returns the last
    /// layer's output and every layer's cache.
    pub fn run_layers(&self, x: &DenseMatrix, mask: &[usize], mode: Mode) -> Result<(Vec<f64>, Vec<LayerCache>)> {
        if x.cols() != self.input_len() {
            return Err(Error::DimensionMismatch(format!(
                "batch has {} features, network expects {}",
                x.cols(),
                self.input_len()
            )));
        }
        if mask.len() != self.layers.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries for {} layers",
                mask.len(),
                self.layers.len()
            )));
        }
        let m = x.rows();
        let mut cur = x.as_slice().to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let g = &layer.geometry;
            if mask[l] > g.n_out {
                return Err(Error::InvalidArgument(format!(
                    "mask {} exceeds width {} of layer {l}",
                    mask[l], g.n_out
                )));
            }
            let patches = match g.kind {
                LayerKind::Dense => cur,
                LayerKind::Conv => im2col(&cur, m, g),
            };
            let rows = m * g.positions();
            let o = g.n_out;
            let mut z = Vec::with_capacity(rows * o);
            for _ in 0..rows {
                z.extend_from_slice(&layer.bias);
            }
            matmul_into(&patches, &layer.weights, &mut z, rows, g.patch_len, o);
            if mask[l] < o {
                for r in 0..rows {
                    z[r * o + mask[l]..(r + 1) * o].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            let relu: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            let (mut out, pool_arg) = if g.pool > 1 {
                let (p, arg) = max_pool(&relu, m, g);
                (p, Some(arg))
            } else {
                (relu, None)
            };
            let dropout_scale = match mode {
                Mode::Train { dropout_seed } if layer.dropout > 0.0 => {
                    let mut rng = derive_rng(dropout_seed, 0, DROPOUT_SLOT + l as u64);
                    let keep = 1.0 - layer.dropout;
                    let scale: Vec<f64> =
                        (0..out.len()).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                    out.iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
                    Some(scale)
                }
                _ => None,
            };
            caches.push(LayerCache { patches, pre_relu: z, rows, n_out: o, pool_arg, dropout_scale });
            cur = out;
        }
        Ok((cur, caches))
    }

    /// Softmax cross-entropy loss (mean over the batch) and its parameter
    /// gradients for the head of `task`.
    pub fn gradients(&self, x: &DenseMatrix, labels: &[usize], task: u32, mask: &[usize], mode: Mode) -> Result<(f64, Gradients)> {
        let m = x.rows();
        if labels.len() != m {
            return Err(Error::DimensionMismatch(format!("{} labels for {m} examples", labels.len())));
        }
        let head = self.head(task)?;
        let pass = self.forward(x, task, mask, mode)?;
        let k = head.n_classes;
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} outside head with {k} classes")));
        }

        let mut loss = 0.0;
        let mut dlogits = vec![0.0; m * k];
        for e in 0..m {
            let row = pass.logits.row(e);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            let log_z = mx + sum.ln();
            loss += log_z - row[labels[e]];
            for c in 0..k {
                let p = (row[c] - log_z).exp();
                dlogits[e * k + c] = (p - if c == labels[e] { 1.0 } else { 0.0 }) / m as f64;
            }
        }
        loss /= m as f64;

        let fan_in = head.fan_in();
        let mut head_dw = vec![0.0; fan_in * k];
        t_matmul_into(&pass.head_input, &dlogits, &mut head_dw, m, fan_in, k);
        let head_db = column_sums(&dlogits, m, k);
        let mut d_head_in = vec![0.0; m * fan_in];
        matmul_t_into(&dlogits, &head.weights, &mut d_head_in, m, k, fan_in);

        let last = &self.layers[self.layers.len() - 1];
        let (positions, channels) = (last.geometry.output_positions(), last.n_out());
        let mut dcur = vec![0.0; pass.features.len()];
        for e in 0..m {
            for p in 0..positions {
                let dst = (e * positions + p) * channels;
                let src = e * fan_in + p * head.in_channels;
                dcur[dst..dst + head.in_channels].copy_from_slice(&d_head_in[src..src + head.in_channels]);
            }
        }

        let mut layer_grads = vec![(Vec::new(), Vec::new()); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &layer.geometry;
            let cache = &pass.layers[l];
            if let Some(scale) = &cache.dropout_scale {
                dcur.iter_mut().zip(scale).for_each(|(d, s)| *d *= s);
            }
            let mut dz = match &cache.pool_arg {
                Some(arg) => max_pool_backward(&dcur, arg, cache.pre_relu.len()),
                None => dcur,
            };
            dz.iter_mut().zip(&cache.pre_relu).for_each(|(d, &z)| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            let (rows, o, n) = (cache.rows, g.n_out, g.patch_len);
            let mut dw = vec![0.0; n * o];
            t_matmul_into(&cache.patches, &dz, &mut dw, rows, n, o);
            let db = column_sums(&dz, rows, o);
            dcur = if l > 0 {
                let mut dp = vec![0.0; rows * n];
                matmul_t_into(&dz, &layer.weights, &mut dp, rows, o, n);
                match g.kind {
                    LayerKind::Dense => dp,
                    LayerKind::Conv => col2im(&dp, m, g),
                }
            } else {
                Vec::new()
            };
            layer_grads[l] = (dw, db);
        }
        Ok((loss, Gradients { layers: layer_grads, head: (head_dw, head_db) }))
    }

    /// One SGD-with-momentum step on a mini-batch of `task`.
    ///
    /// Runs under the active mask (non-free filters). Filters frozen for
    /// earlier tasks, free filters, causally masked weights and every head
    /// other than `task`'s receive no update.
    pub fn backward_sgd_step(&mut self, x: &DenseMatrix, labels: &[usize], task: u32, step: SgdStep) -> Result<f64> {
        let mask = self.active_mask();
        let (loss, grads) = self.gradients(x, labels, task, &mask, Mode::Train { dropout_seed: step.dropout_seed })?;
        let (lr, mu) = (step.lr, step.momentum);
        for (layer, (dw, db)) in self.layers.iter_mut().zip(grads.layers) {
            let o = layer.n_out();
            let trainable: Vec<bool> = (0..o).map(|j| layer.is_trainable(j, task)).collect();
            if !trainable.iter().any(|&t| t) {
                continue;
            }
            for row in 0..layer.patch_len() {
                for j in 0..o {
                    if !trainable[j] || !layer.is_unmasked(row, j) {
                        continue;
                    }
                    let idx = row * o + j;
                    let v = mu * layer.weight_momentum[idx] + dw[idx];
                    layer.weight_momentum[idx] = v;
                    layer.weights[idx] -= lr * v;
                }
            }
            for j in 0..o {
                if trainable[j] {
                    let v = mu * layer.bias_momentum[j] + db[j];
                    layer.bias_momentum[j] = v;
                    layer.bias[j] -= lr * v;
                }
            }
        }
        let head = self.heads.get_mut(&task).ok_or(Error::NoHead(task))?;
        let (dw, db) = grads.head;
        sgd(&mut head.weights, &mut head.weight_momentum, &dw, lr, mu);
        sgd(&mut head.bias, &mut head.bias_momentum, &db, lr, mu);
        Ok(loss)
    }

    /// Freezes filters `[core, new_counts[l])` of every layer as
    /// `Core(task)` and frees the rest.
    ///
    /// Newly frozen filters get a causal mask so they never read input
    /// channels at or beyond `new_counts[l-1]`. Freed filters are zeroed and
    /// stay zero until the next [`Network::begin_task`].
    pub fn prune_and_reinit(&mut self, new_counts: &[usize], task: u32) -> Result<()> {
        if new_counts.len() != self.layers.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} filter counts for {} layers",
                new_counts.len(),
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let core = layer.core_count();
            if new_counts[l] < core {
                return Err(Error::BelowCore { layer: l, requested: new_counts[l], core });
            }
            if new_counts[l] > layer.n_out() {
                return Err(Error::InvalidArgument(format!(
                    "layer {l}: {} filters requested but only {} exist",
                    new_counts[l],
                    layer.n_out()
                )));
            }
        }
        for l in 0..self.layers.len() {
            let limit = if l > 0 { Some(new_counts[l - 1]) } else { None };
            let layer = &mut self.layers[l];
            let core = layer.core_count();
            for j in core..new_counts[l] {
                layer.ownership[j] = Ownership::Core(task);
                layer.input_limit[j] = limit;
                layer.apply_input_limit(j);
            }
            for j in new_counts[l]..layer.n_out() {
                if layer.ownership[j] != Ownership::Free {
                    layer.ownership[j] = Ownership::Free;
                    layer.input_limit[j] = None;
                    layer.zero_filter(j);
                }
            }
        }
        Ok(())
    }
}

fn column_sums(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut s = vec![0.0; cols];
    for r in 0..rows {
        for (acc, v) in s.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
            *acc += v;
        }
    }
    s
}

fn sgd(w: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, mu: f64) {
    for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = mu * *v + g;
        *w -= lr * *v;
    }
}

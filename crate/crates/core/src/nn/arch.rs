use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of one input example, stored height-major with channels fastest
/// (`HWC`). Flat feature vectors use `height = width = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn flat(dim: usize) -> Self {
        Self { channels: dim, height: 1, width: 1 }
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        width: usize,
        #[serde(default)]
        dropout: f64,
    },
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default)]
        padding: usize,
        /// Max-pool window (and stride) applied after the ReLU; 1 disables.
        #[serde(default = "one")]
        pool: usize,
        #[serde(default)]
        dropout: f64,
    },
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn width(&self) -> usize {
        match *self {
            LayerSpec::Dense { width, .. } => width,
            LayerSpec::Conv { filters, .. } => filters,
        }
    }

    pub fn dropout(&self) -> f64 {
        match *self {
            LayerSpec::Dense { dropout, .. } | LayerSpec::Conv { dropout, .. } => dropout,
        }
    }
}

/// Fixed feature-extractor architecture. Classifier heads are added per
/// task on top of the last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv,
}

/// Derived shape bookkeeping for one layer.
///
/// The layer consumes a patch matrix with `patch_len` (`N`) columns and
/// produces `n_out` filter responses at `out_h × out_w` positions. Patch
/// element `i` reads input channel `i % in_channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub n_out: usize,
    pub kernel: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pool: usize,
    pub patch_len: usize,
}

impl LayerGeometry {
    /// Spatial positions per example before pooling.
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn pooled_h(&self) -> usize {
        self.out_h / self.pool
    }

    pub fn pooled_w(&self) -> usize {
        self.out_w / self.pool
    }

    /// Spatial positions per example after pooling.
    pub fn output_positions(&self) -> usize {
        self.pooled_h() * self.pooled_w()
    }

    /// Input channel read by patch element `i`.
    #[inline]
    pub fn channel_of(&self, i: usize) -> usize {
        i % self.in_channels
    }

    /// Patch elements per input channel.
    pub fn elements_per_channel(&self) -> usize {
        self.patch_len / self.in_channels
    }
}

impl Architecture {
    pub fn new(input: InputShape, layers: Vec<LayerSpec>) -> Result<Self> {
        let arch = Self { input, layers };
        arch.geometries()?;
        Ok(arch)
    }

    /// Validates the stack and derives every layer's geometry.
    pub fn geometries(&self) -> Result<Vec<LayerGeometry>> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("architecture has no layers".into()));
        }
        if self.input.is_empty() {
            return Err(Error::InvalidArgument("input shape is empty".into()));
        }
        let (mut c, mut h, mut w) = (self.input.channels, self.input.height, self.input.width);
        let mut seen_dense = false;
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, spec) in self.layers.iter().enumerate() {
            if spec.width() == 0 {
                return Err(Error::InvalidArgument(format!("layer {l} has zero width")));
            }
            let p = spec.dropout();
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("layer {l} dropout {p} outside [0, 1)")));
            }
            let g = match *spec {
                LayerSpec::Dense { width, .. } => {
                    seen_dense = true;
                    let g = LayerGeometry {
                        kind: LayerKind::Dense,
                        in_channels: c,
                        in_h: h,
                        in_w: w,
                        n_out: width,
                        kernel: 1,
                        padding: 0,
                        out_h: 1,
                        out_w: 1,
                        pool: 1,
                        patch_len: c * h * w,
                    };
                    c = width;
                    h = 1;
                    w = 1;
                    g
                }
                LayerSpec::Conv { filters, kernel, padding, pool, .. } => {
                    if seen_dense {
                        return Err(Error::InvalidArgument(format!(
                            "layer {l}: convolution after a dense layer is not supported"
                        )));
                    }
                    if kernel == 0 || pool == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "layer {l}: kernel and pool must be at least 1"
                        )));
                    }
                    if h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return Err(Error::InvalidArgument(format!(
                            "layer {l}: kernel {kernel} larger than padded {h}x{w} input"
                        )));
                    }
                    let out_h = h + 2 * padding - kernel + 1;
                    let out_w = w + 2 * padding - kernel + 1;
                    if out_h < pool || out_w < pool {
                        return Err(Error::InvalidArgument(format!(
                            "layer {l}: pool {pool} larger than {out_h}x{out_w} output"
                        )));
                    }
                    let g = LayerGeometry {
                        kind: LayerKind::Conv,
                        in_channels: c,
                        in_h: h,
                        in_w: w,
                        n_out: filters,
                        kernel,
                        padding,
                        out_h,
                        out_w,
                        pool,
                        patch_len: kernel * kernel * c,
                    };
                    c = filters;
                    h = out_h / pool;
                    w = out_w / pool;
                    g
                }
            };
            out.push(g);
        }
        Ok(out)
    }

    /// Weights plus biases of the feature layers (heads excluded).
    pub fn feature_parameter_count(&self) -> Result<usize> {
        Ok(self.geometries()?.iter().map(|g| g.patch_len * g.n_out + g.n_out).sum())
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(LayerSpec::width).collect()
    }
}

//! Finite-difference oracle for the analytic gradients, shared by the core
//! test suite and the acceptance target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use space_core::linalg::DenseMatrix;
use space_core::nn::{Architecture, InputShape, LayerSpec, Mode, Network};

pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

fn random_arch(rng: &mut ChaCha8Rng, i: usize) -> Architecture {
    if i % 2 == 0 {
        let depth = rng.gen_range(1..=3);
        let layers = (0..depth).map(|_| LayerSpec::Dense { width: rng.gen_range(2..7), dropout: 0.0 }).collect();
        Architecture::new(InputShape::flat(rng.gen_range(2..6)), layers).unwrap()
    } else {
        let side = rng.gen_range(4..7);
        let layers = vec![
            LayerSpec::Conv {
                filters: rng.gen_range(2..5),
                kernel: rng.gen_range(1..4),
                padding: rng.gen_range(0..2),
                pool: 1 + (i / 2) % 2,
                dropout: 0.0,
            },
            LayerSpec::Conv { filters: rng.gen_range(2..4), kernel: 2, padding: 1, pool: 1, dropout: 0.0 },
            LayerSpec::Dense { width: rng.gen_range(2..5), dropout: 0.0 },
        ];
        Architecture::new(InputShape::image(rng.gen_range(1..3), side, side), layers).unwrap()
    }
}

/// Activation pattern: ReLU signs and pooling winners. FD is only valid when
/// both perturbed evaluations share it.
fn pattern(net: &Network, x: &DenseMatrix, mask: &[usize]) -> Vec<u64> {
    let pass = net.forward(x, 1, mask, Mode::Eval).unwrap();
    let mut out = Vec::new();
    for c in &pass.layers {
        out.extend(c.pre_relu().as_slice().iter().map(|&z| (z > 0.0) as u64));
        if let Some(arg) = c.pool_argmax() {
            out.extend(arg.iter().map(|&a| a as u64));
        }
    }
    out
}

fn loss(net: &Network, x: &DenseMatrix, y: &[usize], mask: &[usize]) -> f64 {
    net.gradients(x, y, 1, mask, Mode::Eval).unwrap().0
}

fn perturbed(net: &Network, l: usize, idx: usize, d: f64) -> Network {
    let mut n = net.clone();
    let layer = &mut n.layers[l];
    let n_w = layer.weights.len();
    if idx < n_w {
        layer.weights[idx] += d;
    } else {
        layer.bias[idx - n_w] += d;
    }
    n
}

fn close(a: f64, n: f64) -> bool {
    (a - n).abs() <= TOL * a.abs().max(n.abs()).max(1.0)
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Parameters whose ±h evaluations straddle a ReLU or pooling kink.
    pub skipped: usize,
    pub worst_relative: f64,
    pub failures: Vec<String>,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        self.checked += 1;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
        self.worst_relative = self.worst_relative.max(rel);
        if !close(analytic, numeric) {
            self.failures.push(format!("{}: analytic {analytic} numeric {numeric}", what()));
        }
    }
}

/// Compares every layer and head parameter gradient of `instances` random
/// networks (alternating MLPs and conv nets) against central differences.
pub fn check_random_instances(instances: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    for i in 0..instances {
        let arch = random_arch(&mut rng, i);
        let mut net = Network::new(arch, i as u64).unwrap();
        net.begin_task(1);
        let widths = net.widths();
        let classes = rng.gen_range(2..5);
        net.add_head(1, *widths.last().unwrap(), classes).unwrap();
        let m = rng.gen_range(1..5);
        let x = DenseMatrix::from_vec(m, net.input_len(), (0..m * net.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let y: Vec<usize> = (0..m).map(|_| rng.gen_range(0..classes)).collect();
        let mask = net.full_mask();
        let (_, grads) = net.gradients(&x, &y, 1, &mask, Mode::Eval).unwrap();

        for l in 0..net.n_layers() {
            let n_w = net.layers[l].weights.len();
            for idx in 0..n_w + net.layers[l].bias.len() {
                let analytic = if idx < n_w { grads.layers[l].0[idx] } else { grads.layers[l].1[idx - n_w] };
                let (plus, minus) = (perturbed(&net, l, idx, H), perturbed(&net, l, idx, -H));
                if pattern(&plus, &x, &mask) != pattern(&minus, &x, &mask) {
                    out.skipped += 1;
                    continue;
                }
                let numeric = (loss(&plus, &x, &y, &mask) - loss(&minus, &x, &y, &mask)) / (2.0 * H);
                out.record(analytic, numeric, || format!("instance {i} layer {l} param {idx}"));
            }
        }
        let head = net.head(1).unwrap().clone();
        for idx in 0..head.weights.len() + head.bias.len() {
            let bump = |d: f64| {
                let mut n = net.clone();
                let h = n.heads.get_mut(&1).unwrap();
                if idx < head.weights.len() {
                    h.weights[idx] += d;
                } else {
                    h.bias[idx - head.weights.len()] += d;
                }
                loss(&n, &x, &y, &mask)
            };
            let analytic = if idx < head.weights.len() { grads.head.0[idx] } else { grads.head.1[idx - head.weights.len()] };
            let numeric = (bump(H) - bump(-H)) / (2.0 * H);
            out.record(analytic, numeric, || format!("instance {i} head param {idx}"));
        }
    }
    out
}

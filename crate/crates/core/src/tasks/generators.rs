use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::dataset::{BaseDataset, Dataset, Generator, TaskSpec};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nn::{derive_rng, InputShape};

const PERMUTATION_SLOT: u64 = 0xBEE;
const BASIS_SLOT: u64 = 0xBA5;
const MEANS_SLOT: u64 = 0x3EA;
const SAMPLE_SLOT: u64 = 0x5A3;

/// Pixel permutation of task `index` (1-based). Task 1 is the identity.
pub fn permutation(seed: u64, index: u32, n_pixels: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n_pixels).collect();
    if index > 1 {
        perm.shuffle(&mut derive_rng(seed, index, PERMUTATION_SLOT));
    }
    perm
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Moves pixel `perm[p]` to position `p`, keeping each pixel's channels
/// together.
pub fn apply_permutation(x: &DenseMatrix, shape: InputShape, perm: &[usize]) -> Result<DenseMatrix> {
    let pixels = shape.height * shape.width;
    if perm.len() != pixels || x.cols() != shape.len() {
        return Err(Error::DimensionMismatch(format!(
            "permutation of {} pixels for {}x{} images with {} features",
            perm.len(),
            shape.height,
            shape.width,
            x.cols()
        )));
    }
    let c = shape.channels;
    let mut out = DenseMatrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let (src, dst) = (x.row(r), out.row_mut(r));
        for (p, &q) in perm.iter().enumerate() {
            dst[p * c..(p + 1) * c].copy_from_slice(&src[q * c..(q + 1) * c]);
        }
    }
    Ok(out)
}

fn permuted(data: &Dataset, perm: &[usize]) -> Result<Dataset> {
    Dataset::new(apply_permutation(&data.x, data.shape, perm)?, data.labels.clone(), data.shape, data.n_classes)
}

/// `n_tasks` tasks, each a fixed random pixel permutation of the base data.
pub fn make_permuted_tasks(base: &BaseDataset, n_tasks: usize, seed: u64) -> Result<Vec<TaskSpec>> {
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("need at least one task".into()));
    }
    let shape = base.shape();
    (1..=n_tasks as u32)
        .map(|t| {
            let perm = permutation(seed, t, shape.height * shape.width);
            TaskSpec::new(
                t,
                &permuted(&base.train, &perm)?,
                &permuted(&base.test, &perm)?,
                Generator::Permuted { seed, index: t },
                seed,
            )
        })
        .collect()
}

fn class_subset(data: &Dataset, classes: &[usize]) -> Result<Dataset> {
    let idx: Vec<usize> = (0..data.len()).filter(|&i| classes.contains(&data.labels[i])).collect();
    let mut sub = data.subset(&idx)?;
    sub.labels.iter_mut().for_each(|y| *y -= classes[0]);
    sub.n_classes = classes.len();
    Ok(sub)
}

/// Consecutive class groups of size `classes_per_task`, labels remapped to
/// `[0, classes_per_task)`.
pub fn make_split_tasks(base: &BaseDataset, classes_per_task: usize, seed: u64) -> Result<Vec<TaskSpec>> {
    let total = base.n_classes();
    if classes_per_task == 0 || total % classes_per_task != 0 {
        return Err(Error::InvalidArgument(format!(
            "{total} classes cannot be split into groups of {classes_per_task}"
        )));
    }
    (0..total / classes_per_task)
        .map(|i| {
            let classes: Vec<usize> = (i * classes_per_task..(i + 1) * classes_per_task).collect();
            TaskSpec::new(
                i as u32 + 1,
                &class_subset(&base.train, &classes)?,
                &class_subset(&base.test, &classes)?,
                Generator::Split { classes },
                seed,
            )
        })
        .collect()
}

/// Knobs of the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub dim: usize,
    pub n_tasks: usize,
    pub overlap: f64,
    pub seed: u64,
    pub n_classes: usize,
    /// Discriminative directions per task.
    pub signal_dims: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Spread of class means along the signal directions; direction `i`
    /// is scaled by `decay^i` so the task's variance is anisotropic.
    pub separation: f64,
    pub decay: f64,
    pub within_class_std: f64,
    pub noise_std: f64,
    /// Reinterpret each `dim`-vector as an HWC image of this shape.
    pub image: Option<InputShape>,
}

impl SyntheticParams {
    pub fn new(dim: usize, n_tasks: usize, overlap: f64, seed: u64) -> Self {
        Self {
            dim,
            n_tasks,
            overlap,
            seed,
            n_classes: 4,
            signal_dims: (dim / 4).max(1),
            train_per_class: 150,
            test_per_class: 50,
            separation: 3.0,
            decay: 0.8,
            within_class_std: 1.0,
            noise_std: 0.3,
            image: None,
        }
    }
}

/// Gaussian-blob tasks sharing `overlap` of their discriminative directions
/// with task 1 (see [`make_synthetic_tasks_with`]).
pub fn make_synthetic_tasks(dim: usize, n_tasks: usize, overlap: f64, seed: u64) -> Result<Vec<TaskSpec>> {
    make_synthetic_tasks_with(&SyntheticParams::new(dim, n_tasks, overlap, seed))
}

/// Every task draws from `k` orthonormal directions of a fixed random basis.
/// Task 1 uses directions `0..k`; later tasks keep the first
/// `round(overlap · k)` of those and take the rest from directions outside
/// `0..k`, so `overlap = 0` gives a subspace orthogonal to task 1's and
/// `overlap = 1` reproduces task 1's distribution. Class means come from the
/// base seed and are shared by all tasks.
pub fn make_synthetic_tasks_with(p: &SyntheticParams) -> Result<Vec<TaskSpec>> {
    if p.dim < 4 {
        return Err(Error::InvalidArgument(format!("synthetic tasks need dim >= 4, got {}", p.dim)));
    }
    if !(0.0..=1.0).contains(&p.overlap) {
        return Err(Error::InvalidArgument(format!("overlap {} outside [0, 1]", p.overlap)));
    }
    let k = p.signal_dims;
    if p.n_tasks == 0 || p.n_classes < 2 || k == 0 || 2 * k > p.dim || p.train_per_class < 2 || p.test_per_class == 0 {
        return Err(Error::InvalidArgument("degenerate synthetic task parameters".into()));
    }
    let basis = random_orthogonal(p.dim, p.seed);
    let mut mean_rng = derive_rng(p.seed, 0, MEANS_SLOT);
    let means: Vec<Vec<f64>> = (0..p.n_classes)
        .map(|_| {
            (0..k)
                .map(|i| p.separation * p.decay.powi(i as i32) * mean_rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let shared = (p.overlap * k as f64).round() as usize;
    let fresh = k - shared;
    let pool = p.dim - k;
    let shape = match p.image {
        Some(img) if img.len() != p.dim => {
            return Err(Error::InvalidArgument(format!("image shape holds {} values, dim is {}", img.len(), p.dim)))
        }
        Some(img) => img,
        None => InputShape::flat(p.dim),
    };
    (1..=p.n_tasks as u32)
        .map(|t| {
            let directions: Vec<usize> = if t == 1 {
                (0..k).collect()
            } else {
                let offset = (t as usize - 2) * fresh;
                (0..shared).chain((0..fresh).map(|i| k + (offset + i) % pool)).collect()
            };
            let mut rng = derive_rng(p.seed, t, SAMPLE_SLOT);
            let mut draw = |per_class: usize| -> Result<Dataset> {
                let n = per_class * p.n_classes;
                let mut x = DenseMatrix::zeros(n, p.dim);
                let mut labels = Vec::with_capacity(n);
                for c in 0..p.n_classes {
                    for _ in 0..per_class {
                        let row = x.row_mut(labels.len());
                        for v in row.iter_mut() {
                            *v = p.noise_std * rng.sample::<f64, _>(StandardNormal);
                        }
                        for (i, &d) in directions.iter().enumerate() {
                            let coef = means[c][i] + p.within_class_std * rng.sample::<f64, _>(StandardNormal);
                            for (j, v) in row.iter_mut().enumerate() {
                                *v += coef * basis.get(j, d);
                            }
                        }
                        labels.push(c);
                    }
                }
                Dataset::new(x, labels, shape, p.n_classes)
            };
            let train = draw(p.train_per_class)?;
            let test = draw(p.test_per_class)?;
            let generator = Generator::Synthetic { seed: p.seed, dim: p.dim, overlap: p.overlap, directions };
            TaskSpec::new(t, &train, &test, generator, p.seed)
        })
        .collect()
}

/// Orthonormal columns from Gram–Schmidt on a Gaussian matrix.
fn random_orthogonal(dim: usize, seed: u64) -> DenseMatrix {
    let mut rng = derive_rng(seed, 0, BASIS_SLOT);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for q in &cols {
                let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut q = DenseMatrix::zeros(dim, dim);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    q
}

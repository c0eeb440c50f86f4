//! Correlated binary-attribute benchmark and per-task triplet sampling.
//!
//! Each sample draws a latent Gaussian vector `z ~ N(0, R)` and sets
//! attribute `t` to `z_t > 0`. Two attributes with latent correlation `rho`
//! then agree with probability `1/2 + asin(rho)/pi`. Inputs are a fixed
//! random linear map of the centered attribute vector (`2a - 1`) plus
//! isotropic Gaussian noise, reshaped to an image when requested.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Vector { dim: usize },
    Image { height: usize, width: usize },
}

impl InputKind {
    pub fn shape(&self) -> Vec<usize> {
        match *self {
            InputKind::Vector { dim } => vec![dim],
            InputKind::Image { height, width } => vec![height, width, 1],
        }
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSpec {
    pub attribute_count: usize,
    /// Row-major T x T latent correlation matrix.
    pub correlation: Vec<f64>,
    pub sample_count: usize,
    pub input_kind: InputKind,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl AttributeSpec {
    /// Identity correlation (independent attributes).
    pub fn independent(attribute_count: usize, sample_count: usize, input_kind: InputKind, seed: u64) -> Self {
        let t = attribute_count;
        Self {
            attribute_count: t,
            correlation: (0..t * t).map(|k| if k % (t + 1) == 0 { 1.0 } else { 0.0 }).collect(),
            sample_count,
            input_kind,
            noise_sigma: 0.5,
            seed,
        }
    }

    pub fn with_correlation(mut self, i: usize, j: usize, rho: f64) -> Self {
        let t = self.attribute_count;
        self.correlation[i * t + j] = rho;
        self.correlation[j * t + i] = rho;
        self
    }

    pub fn correlation_at(&self, i: usize, j: usize) -> f64 {
        self.correlation[i * self.attribute_count + j]
    }

    /// Checks every invariant and returns the lower Cholesky factor of the
    /// correlation matrix.
    pub fn validate(&self) -> Result<Vec<f64>> {
        let t = self.attribute_count;
        if t == 0 {
            return Err(Error::Config("attribute_count must be positive".to_string()));
        }
        if self.correlation.len() != t * t {
            return Err(Error::Config(format!(
                "correlation must be {t}x{t}, got {} entries",
                self.correlation.len()
            )));
        }
        for i in 0..t {
            if self.correlation_at(i, i) != 1.0 {
                return Err(Error::Config(format!("correlation diagonal entry {i} must be 1")));
            }
            for j in 0..t {
                let v = self.correlation_at(i, j);
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("correlation[{i}][{j}] = {v} outside [-1, 1]")));
                }
                if v != self.correlation_at(j, i) {
                    return Err(Error::Config(format!("correlation is not symmetric at ({i}, {j})")));
                }
            }
        }
        if self.sample_count < 4 {
            return Err(Error::Config("sample_count must be at least 4".to_string()));
        }
        if self.input_kind.is_empty() {
            return Err(Error::Config("input dimensions must be positive".to_string()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be finite and non-negative".to_string()));
        }
        cholesky_psd(&self.correlation, t)
    }
}

/// Lower-triangular `L` with `L L^T = a` for a positive semidefinite `a`.
/// Zero pivots (within tolerance) zero their column, so singular
/// correlation matrices such as perfect (anti-)correlation are accepted.
pub fn cholesky_psd(a: &[f64], n: usize) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-10;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d < -TOL {
            return Err(Error::Config(format!(
                "correlation matrix is not positive semidefinite (pivot {j} = {d:.3e})"
            )));
        }
        let pivot = if d > TOL { libm::sqrt(d) } else { 0.0 };
        l[j * n + j] = pivot;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if pivot > 0.0 {
                l[i * n + j] = s / pivot;
            } else if s.abs() > 1e-8 {
                return Err(Error::Config(format!(
                    "correlation matrix is not positive semidefinite (column {j})"
                )));
            }
        }
    }
    Ok(l)
}

/// Probability that two thresholded latents with correlation `rho` agree.
pub fn expected_agreement(rho: f64) -> f64 {
    0.5 + libm::asin(rho) / core::f64::consts::PI
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: AttributeSpec,
    pub inputs: Vec<Tensor>,
    /// Row-major sample_count x T matrix of 0/1 labels.
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn task_count(&self) -> usize {
        self.spec.attribute_count
    }

    pub fn label(&self, sample: usize, task: usize) -> u8 {
        self.labels[sample * self.spec.attribute_count + task]
    }

    /// Fraction of samples on which attributes `i` and `j` agree.
    pub fn agreement_rate(&self, i: usize, j: usize) -> f64 {
        let agree = (0..self.len())
            .filter(|&s| self.label(s, i) == self.label(s, j))
            .count();
        agree as f64 / self.len() as f64
    }

    /// Checks the structural invariants (used after loading from disk).
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let t = self.spec.attribute_count;
        if self.inputs.len() != self.spec.sample_count {
            return Err(Error::Config(format!(
                "dataset has {} inputs but sample_count is {}",
                self.inputs.len(),
                self.spec.sample_count
            )));
        }
        if self.labels.len() != self.spec.sample_count * t {
            return Err(Error::Config("label matrix size does not match the spec".to_string()));
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(Error::Config("labels must be 0 or 1".to_string()));
        }
        let shape = self.spec.input_kind.shape();
        if let Some(bad) = self.inputs.iter().position(|x| x.shape() != shape.as_slice()) {
            return Err(Error::Config(format!("input {bad} has the wrong shape")));
        }
        if self.inputs.iter().any(|x| !x.all_finite()) {
            return Err(Error::Config("inputs contain non-finite values".to_string()));
        }
        Ok(())
    }

    /// Seeded permutation of sample indices split into (train, held-out)
    /// with the last 20% held out.
    pub fn split(&self, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let held_count = self.len() / 5;
        let held = idx.split_off(self.len() - held_count);
        (idx, held)
    }
}

pub fn generate_dataset(spec: &AttributeSpec) -> Result<Dataset> {
    let chol = spec.validate()?;
    let t = spec.attribute_count;
    let d = spec.input_kind.len();
    let shape = spec.input_kind.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // d x t rendering map
    let embed: Vec<f64> = (0..d * t).map(|_| StandardNormal.sample(&mut rng)).collect();

    let mut inputs = Vec::with_capacity(spec.sample_count);
    let mut labels = Vec::with_capacity(spec.sample_count * t);
    let mut eps = vec![0.0; t];
    let mut attrs = vec![0.0; t];
    for _ in 0..spec.sample_count {
        eps.iter_mut().for_each(|e| *e = StandardNormal.sample(&mut rng));
        for i in 0..t {
            let z: f64 = (0..=i).map(|k| chol[i * t + k] * eps[k]).sum();
            let label = u8::from(z > 0.0);
            labels.push(label);
            attrs[i] = 2.0 * f64::from(label) - 1.0;
        }
        let values: Vec<f64> = (0..d)
            .map(|p| {
                let signal: f64 = (0..t).map(|i| embed[p * t + i] * attrs[i]).sum();
                let noise: f64 = StandardNormal.sample(&mut rng);
                signal + spec.noise_sigma * noise
            })
            .collect();
        inputs.push(Tensor::new(shape.clone(), values)?);
    }
    Ok(Dataset {
        spec: spec.clone(),
        inputs,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub task: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletBatch {
    pub entries: Vec<Triplet>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks the label constraint of every entry.
    pub fn is_valid_for(&self, ds: &Dataset) -> bool {
        self.entries.iter().all(|e| {
            let a = ds.label(e.anchor, e.task);
            e.anchor != e.positive && a == ds.label(e.positive, e.task) && a != ds.label(e.negative, e.task)
        })
    }

    pub fn for_task(&self, task: usize) -> impl Iterator<Item = &Triplet> {
        self.entries.iter().filter(move |e| e.task == task)
    }
}

/// Samples grouped by label value for one task, restricted to `pool`.
#[derive(Debug, Clone)]
pub(crate) struct LabelIndex {
    pub task: usize,
    pub by_label: [Vec<usize>; 2],
}

impl LabelIndex {
    pub fn new(ds: &Dataset, pool: &[usize], task: usize) -> Result<Self> {
        if task >= ds.task_count() {
            return Err(Error::Argument(format!(
                "task {task} out of range for {} attributes",
                ds.task_count()
            )));
        }
        let mut by_label = [Vec::new(), Vec::new()];
        for &i in pool {
            by_label[usize::from(ds.label(i, task))].push(i);
        }
        if by_label.iter().any(|v| v.len() < 2) {
            return Err(Error::DegenerateTask { task });
        }
        Ok(Self { task, by_label })
    }

    /// Anchor uniform over the pool, positive uniform over the anchor's
    /// class minus the anchor, negative uniform over the other class.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Triplet {
        let total = self.by_label[0].len() + self.by_label[1].len();
        let k = rng.random_range(0..total);
        let (cls, pos_in_cls) = if k < self.by_label[0].len() {
            (0, k)
        } else {
            (1, k - self.by_label[0].len())
        };
        let same = &self.by_label[cls];
        let other = &self.by_label[1 - cls];
        let mut p = rng.random_range(0..same.len() - 1);
        if p >= pos_in_cls {
            p += 1;
        }
        let n = rng.random_range(0..other.len());
        Triplet {
            anchor: same[pos_in_cls],
            positive: same[p],
            negative: other[n],
            task: self.task,
        }
    }
}

/// `count` valid triplets for `task` drawn from the whole dataset.
pub fn sample_triplets(ds: &Dataset, task: usize, count: usize, seed: u64) -> Result<TripletBatch> {
    let pool: Vec<usize> = (0..ds.len()).collect();
    sample_triplets_from(ds, &pool, task, count, seed)
}

/// `count` valid triplets for `task` whose members all come from `pool`.
pub fn sample_triplets_from(
    ds: &Dataset,
    pool: &[usize],
    task: usize,
    count: usize,
    seed: u64,
) -> Result<TripletBatch> {
    let index = LabelIndex::new(ds, pool, task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(TripletBatch {
        entries: (0..count).map(|_| index.sample(&mut rng)).collect(),
    })
}

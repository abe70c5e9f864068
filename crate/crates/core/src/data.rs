//! Datasets, synthetic generators and seeded minibatch sampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Real targets, `dim` per sample, row-major.
    Real { values: Vec<f64>, dim: usize },
    /// Zero-based class indices.
    Class { labels: Vec<u32>, classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real { values, dim } => values.len() / dim,
            Targets::Class { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Targets::Real { dim, .. } => *dim,
            Targets::Class { classes, .. } => *classes,
        }
    }

    pub(crate) fn kind_name(&self) -> &'static str {
        match self {
            Targets::Real { .. } => "real",
            Targets::Class { .. } => "class",
        }
    }

    fn get(&self, s: usize) -> Target<'_> {
        match self {
            Targets::Real { values, dim } => Target::Real(&values[s * dim..(s + 1) * dim]),
            Targets::Class { labels, .. } => Target::Class(labels[s] as usize),
        }
    }

    fn gather(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Real { values, dim } => Targets::Real {
                values: indices
                    .iter()
                    .flat_map(|&s| values[s * dim..(s + 1) * dim].iter().copied())
                    .collect(),
                dim: *dim,
            },
            Targets::Class { labels, classes } => Targets::Class {
                labels: indices.iter().map(|&s| labels[s]).collect(),
                classes: *classes,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target<'a> {
    Real(&'a [f64]),
    Class(usize),
}

impl Target<'_> {
    pub(crate) fn kind_name(&self) -> &'static str {
        match self {
            Target::Real(_) => "real",
            Target::Class(_) => "class",
        }
    }
}

/// Input/target pairs with inputs stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    input_dim: usize,
    inputs: Vec<f64>,
    targets: Targets,
}

impl Batch {
    pub fn new(input_dim: usize, inputs: Vec<f64>, targets: Targets) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidShape("input dimension must be positive".into()));
        }
        if inputs.len() % input_dim != 0 || inputs.len() / input_dim != targets.len() {
            return Err(Error::DimensionMismatch {
                what: "number of targets",
                expected: inputs.len() / input_dim,
                found: targets.len(),
            });
        }
        if let Targets::Class { labels, classes } = &targets {
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= *classes) {
                return Err(Error::ClassOutOfRange {
                    class: bad as usize,
                    classes: *classes,
                });
            }
        }
        Ok(Batch {
            input_dim,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.targets.output_dim()
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn input(&self, s: usize) -> &[f64] {
        &self.inputs[s * self.input_dim..(s + 1) * self.input_dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn target(&self, s: usize) -> Target<'_> {
        self.targets.get(s)
    }

    /// Copies the listed samples, in the listed order, into a new batch.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let d = self.input_dim;
        Batch {
            input_dim: d,
            inputs: indices
                .iter()
                .flat_map(|&s| self.inputs[s * d..(s + 1) * d].iter().copied())
                .collect(),
            targets: self.targets.gather(indices),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Batch,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.samples.output_dim()
    }
}

/// `P` regression tasks over one shared set of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    input_dim: usize,
    inputs: Vec<f64>,
    /// One target column per task.
    targets: Vec<Vec<f64>>,
    pub shifts: Vec<f64>,
}

impl TaskSet {
    pub fn num_tasks(&self) -> usize {
        self.targets.len()
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn task(&self, p: usize) -> Dataset {
        Dataset {
            name: format!("shifted_sine[{p}]"),
            samples: Batch {
                input_dim: self.input_dim,
                inputs: self.inputs.clone(),
                targets: Targets::Real {
                    values: self.targets[p].clone(),
                    dim: 1,
                },
            },
        }
    }

    /// The same samples for every task.
    pub fn gather(&self, indices: &[usize]) -> TaskBatch {
        let d = self.input_dim;
        TaskBatch {
            inputs: Batch {
                input_dim: d,
                inputs: indices
                    .iter()
                    .flat_map(|&s| self.inputs[s * d..(s + 1) * d].iter().copied())
                    .collect(),
                targets: Targets::Real {
                    values: vec![0.0; indices.len()],
                    dim: 1,
                },
            },
            targets: self
                .targets
                .iter()
                .map(|t| indices.iter().map(|&s| t[s]).collect())
                .collect(),
        }
    }

    pub fn full(&self) -> TaskBatch {
        let all: Vec<usize> = (0..self.len()).collect();
        self.gather(&all)
    }
}

/// A minibatch drawn from a [`TaskSet`]: shared inputs plus one target
/// column per task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    inputs: Batch,
    targets: Vec<Vec<f64>>,
}

impl TaskBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[f64] {
        self.inputs.inputs()
    }

    pub fn task_targets(&self, p: usize) -> &[f64] {
        &self.targets[p]
    }

    pub fn num_tasks(&self) -> usize {
        self.targets.len()
    }

    pub fn task(&self, p: usize) -> Batch {
        Batch {
            input_dim: self.inputs.input_dim,
            inputs: self.inputs.inputs.clone(),
            targets: Targets::Real {
                values: self.targets[p].clone(),
                dim: 1,
            },
        }
    }
}

fn uniform_regression(
    name: &str,
    samples: usize,
    noise_std: f64,
    seed: u64,
    f: impl Fn(f64) -> f64,
) -> Result<Dataset> {
    if samples == 0 {
        return Err(Error::Config("dataset needs at least one sample".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Config(format!("noise_std must be non-negative, got {noise_std}")));
    }
    let mut rng = stream(seed, Domain::Dataset, 0, 0);
    let mut xs = Vec::with_capacity(samples);
    let mut ys = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x: f64 = rng.random();
        let xi: f64 = rng.sample(StandardNormal);
        xs.push(x);
        ys.push(f(x) + noise_std * xi);
    }
    Ok(Dataset {
        name: name.into(),
        samples: Batch::new(1, xs, Targets::Real { values: ys, dim: 1 })?,
    })
}

/// `y = sin(2πx) + noise_std·ξ` with `x ~ U[0, 1)`.
pub fn gen_sine(samples: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    uniform_regression("sine", samples, noise_std, seed, |x| (2.0 * std::f64::consts::PI * x).sin())
}

/// `y = x² + noise_std·ξ` with `x ~ U[0, 1)`.
pub fn gen_square(samples: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    uniform_regression("square", samples, noise_std, seed, |x| x * x)
}

/// Shift of task `p` (zero-based) out of `tasks`, uniformly spaced in [-1, 1].
pub fn task_shift(p: usize, tasks: usize) -> f64 {
    -1.0 + 2.0 * p as f64 / (tasks - 1) as f64
}

/// `P` noise-free tasks `sin(2πx) + Δy_p` over one shared draw of inputs.
pub fn gen_shifted_sines(tasks: usize, samples: usize, seed: u64) -> Result<TaskSet> {
    if tasks < 2 {
        return Err(Error::Config(format!("shifted sines need at least two tasks, got {tasks}")));
    }
    let base = gen_sine(samples, 0.0, seed)?;
    let Targets::Real { values: sine, .. } = base.samples.targets else {
        unreachable!("sine targets are real");
    };
    let shifts: Vec<f64> = (0..tasks).map(|p| task_shift(p, tasks)).collect();
    let targets = shifts
        .iter()
        .map(|dy| sine.iter().map(|y| y + dy).collect())
        .collect();
    Ok(TaskSet {
        input_dim: 1,
        inputs: base.samples.inputs,
        targets,
        shifts,
    })
}

/// Yields disjoint minibatches covering a seeded permutation of the samples,
/// drawing a fresh permutation for every epoch. The last batch of an epoch is
/// short when the batch size does not divide the sample count.
#[derive(Debug, Clone)]
pub struct MinibatchSampler {
    samples: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    perm: Vec<usize>,
    cursor: usize,
}

impl MinibatchSampler {
    pub fn new(samples: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > samples {
            return Err(Error::Config(format!(
                "batch size {batch_size} must lie in 1..={samples}"
            )));
        }
        let mut sampler = MinibatchSampler {
            samples,
            batch_size,
            seed,
            epoch: 0,
            perm: (0..samples).collect(),
            cursor: 0,
        };
        sampler.shuffle();
        Ok(sampler)
    }

    fn shuffle(&mut self) {
        let mut rng = stream(self.seed, Domain::Sampler, 0, self.epoch);
        self.perm.iter_mut().enumerate().for_each(|(i, v)| *v = i);
        self.perm.shuffle(&mut rng);
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.samples.div_ceil(self.batch_size)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Epochs started so far, counting from zero.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_indices(&mut self) -> &[usize] {
        if self.cursor >= self.samples {
            self.epoch += 1;
            self.cursor = 0;
            self.shuffle();
        }
        let start = self.cursor;
        let end = (start + self.batch_size).min(self.samples);
        self.cursor = end;
        &self.perm[start..end]
    }

    pub fn next_batch(&mut self, dataset: &Dataset) -> Batch {
        debug_assert_eq!(dataset.len(), self.samples);
        let indices = self.next_indices().to_vec();
        dataset.samples.gather(&indices)
    }
}

use crate::data::TaskBatch;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{forward_batch, NetworkShape, ParamVector};

use super::cbo::{cbo_move, consensus_point, CboConfig, Ensemble};

/// Static map from particles to the task whose consensus point they follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskAssignment {
    task_of: Vec<usize>,
    tasks: usize,
}

impl TaskAssignment {
    pub fn new(task_of: Vec<usize>, tasks: usize) -> Result<Self> {
        let mut counts = vec![0usize; tasks];
        for &t in &task_of {
            if t >= tasks {
                return Err(Error::Config(format!("particle assigned to task {t} of {tasks}")));
            }
            counts[t] += 1;
        }
        if let Some(task) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyTask { task });
        }
        Ok(TaskAssignment { task_of, tasks })
    }

    /// Contiguous blocks: with 200 particles and 100 tasks, particles 0 and 1
    /// follow task 0, particles 2 and 3 task 1, and so on.
    pub fn blocks(particles: usize, tasks: usize) -> Result<Self> {
        if tasks == 0 {
            return Err(Error::Config("at least one task is required".into()));
        }
        TaskAssignment::new((0..particles).map(|n| n * tasks / particles).collect(), tasks)
    }

    pub fn task_of(&self, particle: usize) -> usize {
        self.task_of[particle]
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks
    }

    pub fn num_particles(&self) -> usize {
        self.task_of.len()
    }
}

/// Forms one consensus point per task from the task risks of all particles
/// (`task_risks[p][n]`), then moves each particle toward the consensus point
/// of its assigned task. Returns the consensus points.
pub fn multitask_step(
    ensemble: &mut Ensemble,
    task_risks: &[Vec<f64>],
    cfg: &CboConfig,
    assignment: &TaskAssignment,
    exec: Exec,
) -> Result<Vec<ParamVector>> {
    if assignment.num_particles() != ensemble.len() {
        return Err(Error::DimensionMismatch {
            what: "task assignment size",
            expected: ensemble.len(),
            found: assignment.num_particles(),
        });
    }
    if task_risks.len() != assignment.num_tasks() {
        return Err(Error::DimensionMismatch {
            what: "number of task risk vectors",
            expected: assignment.num_tasks(),
            found: task_risks.len(),
        });
    }
    let points = task_risks
        .iter()
        .map(|risks| consensus_point(&ensemble.particles, risks, cfg.alpha))
        .collect::<Result<Vec<_>>>()?;
    let (seed, step) = (ensemble.seed(), ensemble.step());
    exec.for_each_mut(&mut ensemble.particles, |n, p| {
        cbo_move(p, &points[assignment.task_of(n)], cfg, seed, n, step)
    });
    ensemble.advance();
    Ok(points)
}

/// Squared-error risk of every particle on every task of `batch`, indexed
/// `[task][particle]`. The network is evaluated once per particle since all
/// tasks share their inputs.
pub fn task_risk_matrix(ensemble: &Ensemble, shape: &NetworkShape, batch: &TaskBatch, exec: Exec) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if shape.output_dim != 1 {
        return Err(Error::DimensionMismatch {
            what: "multi-task output dimension",
            expected: 1,
            found: shape.output_dim,
        });
    }
    let preds = exec
        .map(&ensemble.particles, |_, p| forward_batch(shape, p, batch.inputs(), batch.len()))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len() as f64;
    Ok((0..batch.num_tasks())
        .map(|p| {
            let y = batch.task_targets(p);
            preds
                .iter()
                .map(|pred| {
                    let mut total = 0.0;
                    for (yi, pi) in y.iter().zip(pred) {
                        let r = yi - pi;
                        total += r * r;
                    }
                    total / n
                })
                .collect()
        })
        .collect())
}

pub fn multitask_iteration(
    ensemble: &mut Ensemble,
    shape: &NetworkShape,
    batch: &TaskBatch,
    cfg: &CboConfig,
    assignment: &TaskAssignment,
    exec: Exec,
) -> Result<Vec<ParamVector>> {
    let risks = task_risk_matrix(ensemble, shape, batch, exec)?;
    multitask_step(ensemble, &risks, cfg, assignment, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::cbo_step;

    #[test]
    fn block_assignment() {
        let a = TaskAssignment::blocks(200, 100).unwrap();
        for p in 0..100 {
            assert_eq!(a.task_of(2 * p), p);
            assert_eq!(a.task_of(2 * p + 1), p);
        }
        assert!(matches!(TaskAssignment::blocks(3, 4), Err(Error::EmptyTask { .. })));
        assert!(matches!(TaskAssignment::new(vec![0, 0], 2), Err(Error::EmptyTask { task: 1 })));
    }

    #[test]
    fn single_task_is_plain_cbo() {
        let particles: Vec<ParamVector> = (0..4)
            .map(|n| ParamVector::from_vec(vec![n as f64, 1.0 - n as f64, 0.5 * n as f64]))
            .collect();
        let risks = vec![0.4, 0.1, 0.3, 0.2];
        let cfg = CboConfig { particles: 4, lambda: 1.0, sigma: 1.3, alpha: 10.0, dt: 0.1 };
        let mut a = Ensemble::new(particles.clone(), 3).unwrap();
        let mut b = Ensemble::new(particles, 3).unwrap();
        multitask_step(&mut a, &[risks.clone()], &cfg, &TaskAssignment::blocks(4, 1).unwrap(), Exec::SERIAL).unwrap();
        let v = consensus_point(&b.particles, &risks, cfg.alpha).unwrap();
        cbo_step(&mut b, &v, &cfg, Exec::SERIAL).unwrap();
        assert_eq!(a.particles, b.particles);
    }
}

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{gen_shifted_sines, gen_sine, gen_square, Dataset, MinibatchSampler, TaskBatch, TaskSet};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mnist::load_mnist_idx;
use crate::nn::{empirical_risk, forward_batch, measure_risk, risk_and_gradient, LossKind, NetworkShape, ParamVector};
use crate::optim::{
    apply_schedules, cbo_iteration, consensus_point, consensus_weights, fan_in_uniform, hybrid_iteration,
    multitask_iteration, task_risk_matrix, AdamState, CboConfig, Ensemble, HybridConfig, ScheduleUnit, TaskAssignment,
};
use crate::ot::{barycenter, ot_cbo_iteration, Barycenter, BarycenterOptions, MeasureEnsemble};

use super::config::{ExperimentConfig, ExperimentId, Method};
use super::record::{aggregate, emit_plot_data, median, AggregateRecord, EpochRow, RunRecord, RunStatus};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "CBO_OUT_DIR";

/// `cfg.out_dir`, else `$CBO_OUT_DIR`, else `runs`.
pub fn resolve_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// A method being trained: one update per minibatch and full-data metrics
/// for the current consensus (or current parameters for Adam).
trait Trainer {
    fn metrics(&self) -> Vec<&'static str>;
    fn update(&mut self, cbo: &CboConfig) -> Result<()>;
    fn record(&mut self, cbo: &CboConfig) -> Result<Vec<f64>>;
}

struct CboTrainer {
    shape: NetworkShape,
    data: Dataset,
    kind: LossKind,
    ensemble: Ensemble,
    sampler: MinibatchSampler,
    exec: Exec,
    consensus: Option<ParamVector>,
}

impl CboTrainer {
    /// Consensus of the initial ensemble, weighted by full-data risks.
    fn initial_consensus(&mut self, cbo: &CboConfig) -> Result<ParamVector> {
        self.ensemble.evaluate(&self.shape, &self.data.samples, self.kind, self.exec)?;
        consensus_point(&self.ensemble.particles, &self.ensemble.risks, cbo.alpha)
    }
}

impl Trainer for CboTrainer {
    fn metrics(&self) -> Vec<&'static str> {
        vec!["risk"]
    }

    fn update(&mut self, cbo: &CboConfig) -> Result<()> {
        let batch = self.sampler.next_batch(&self.data);
        self.consensus = Some(cbo_iteration(&mut self.ensemble, &self.shape, &batch, self.kind, cbo, self.exec)?);
        Ok(())
    }

    fn record(&mut self, cbo: &CboConfig) -> Result<Vec<f64>> {
        if self.consensus.is_none() {
            self.consensus = Some(self.initial_consensus(cbo)?);
        }
        let v = self.consensus.as_ref().expect("consensus set above");
        Ok(vec![empirical_risk(&self.shape, v, &self.data.samples, self.kind)?])
    }
}

struct HybridTrainer {
    inner: CboTrainer,
    states: Vec<AdamState>,
    hybrid: HybridConfig,
}

impl Trainer for HybridTrainer {
    fn metrics(&self) -> Vec<&'static str> {
        vec!["risk"]
    }

    fn update(&mut self, cbo: &CboConfig) -> Result<()> {
        let t = &mut self.inner;
        let batch = t.sampler.next_batch(&t.data);
        let cfg = HybridConfig { cbo: *cbo, ..self.hybrid };
        t.consensus = Some(hybrid_iteration(
            &mut t.ensemble,
            &mut self.states,
            &t.shape,
            &batch,
            t.kind,
            &cfg,
            t.exec,
        )?);
        Ok(())
    }

    fn record(&mut self, cbo: &CboConfig) -> Result<Vec<f64>> {
        self.inner.record(cbo)
    }
}

struct AdamTrainer {
    shape: NetworkShape,
    data: Dataset,
    kind: LossKind,
    params: ParamVector,
    state: AdamState,
    sampler: MinibatchSampler,
}

impl Trainer for AdamTrainer {
    fn metrics(&self) -> Vec<&'static str> {
        vec!["risk"]
    }

    fn update(&mut self, cbo: &CboConfig) -> Result<()> {
        let batch = self.sampler.next_batch(&self.data);
        let (_, grad) = risk_and_gradient(&self.shape, &self.params, &batch, self.kind)?;
        self.state.step(&mut self.params, &grad, cbo.dt)
    }

    fn record(&mut self, _: &CboConfig) -> Result<Vec<f64>> {
        Ok(vec![empirical_risk(&self.shape, &self.params, &self.data.samples, self.kind)?])
    }
}

struct MultitaskTrainer {
    shape: NetworkShape,
    tasks: TaskSet,
    full: TaskBatch,
    ensemble: Ensemble,
    assignment: TaskAssignment,
    sampler: MinibatchSampler,
    exec: Exec,
    consensus: Option<Vec<ParamVector>>,
}

impl Trainer for MultitaskTrainer {
    fn metrics(&self) -> Vec<&'static str> {
        vec!["median_task_risk", "min_task_risk"]
    }

    fn update(&mut self, cbo: &CboConfig) -> Result<()> {
        let batch = self.tasks.gather(self.sampler.next_indices());
        self.consensus = Some(multitask_iteration(
            &mut self.ensemble,
            &self.shape,
            &batch,
            cbo,
            &self.assignment,
            self.exec,
        )?);
        Ok(())
    }

    fn record(&mut self, cbo: &CboConfig) -> Result<Vec<f64>> {
        if self.consensus.is_none() {
            let risks = task_risk_matrix(&self.ensemble, &self.shape, &self.full, self.exec)?;
            let points = risks
                .iter()
                .map(|r| consensus_point(&self.ensemble.particles, r, cbo.alpha))
                .collect::<Result<_>>()?;
            self.consensus = Some(points);
        }
        let points = self.consensus.as_ref().expect("consensus set above");
        let n = self.full.len();
        let mut task_risks = Vec::with_capacity(points.len());
        for (p, v) in points.iter().enumerate() {
            let pred = forward_batch(&self.shape, v, self.full.inputs(), n)?;
            let sse: f64 = pred.iter().zip(self.full.task_targets(p)).map(|(a, y)| (y - a) * (y - a)).sum();
            task_risks.push(sse / n as f64);
        }
        let min = task_risks.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(vec![median(&task_risks), min])
    }
}

struct OtTrainer {
    data: Dataset,
    kind: LossKind,
    ensemble: MeasureEnsemble,
    sampler: MinibatchSampler,
    options: BarycenterOptions,
    barycenter: Option<Barycenter>,
}

impl Trainer for OtTrainer {
    fn metrics(&self) -> Vec<&'static str> {
        vec!["risk"]
    }

    fn update(&mut self, cbo: &CboConfig) -> Result<()> {
        let batch = self.sampler.next_batch(&self.data);
        let bary = ot_cbo_iteration(
            &mut self.ensemble,
            &batch,
            self.kind,
            cbo,
            self.barycenter.as_ref(),
            &self.options,
        )?;
        self.barycenter = Some(bary);
        Ok(())
    }

    fn record(&mut self, cbo: &CboConfig) -> Result<Vec<f64>> {
        if self.barycenter.is_none() {
            self.ensemble.evaluate(&self.data.samples, self.kind, self.options.exec)?;
            let weights = consensus_weights(&self.ensemble.risks, cbo.alpha)?;
            self.ensemble.set_weights(weights)?;
            self.barycenter = Some(barycenter(&self.ensemble, &self.options)?);
        }
        let bary = self.barycenter.as_ref().expect("barycenter set above");
        Ok(vec![measure_risk(&bary.support, &self.data.samples, self.kind)?])
    }
}

fn single_task_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, LossKind)> {
    let d = &cfg.data;
    match cfg.experiment {
        ExperimentId::Sine => Ok((gen_sine(d.samples, d.noise_std, seed)?, LossKind::SquaredError)),
        ExperimentId::SquareOt => Ok((gen_square(d.samples, d.noise_std, seed)?, LossKind::SquaredError)),
        ExperimentId::Mnist => Ok((
            load_mnist_idx(&d.mnist_images, &d.mnist_labels, Some(d.samples))?,
            LossKind::CrossEntropy,
        )),
        ExperimentId::Multitask => unreachable!("multi-task data is a task set"),
    }
}

fn build_trainer(cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn Trainer>> {
    let exec = cfg.exec();
    let particles = cfg.cbo.particles;
    let (low, high) = (cfg.cbo.init_low, cfg.cbo.init_high);
    if cfg.method == Method::MultitaskCbo {
        let tasks = gen_shifted_sines(cfg.data.tasks, cfg.data.samples, seed)?;
        let shape = NetworkShape::new(1, cfg.network.width, 1)?;
        return Ok(Box::new(MultitaskTrainer {
            full: tasks.full(),
            sampler: MinibatchSampler::new(tasks.len(), cfg.batch_size, seed)?,
            ensemble: Ensemble::uniform(&shape, particles, low, high, seed)?,
            assignment: TaskAssignment::blocks(particles, tasks.num_tasks())?,
            tasks,
            shape,
            exec,
            consensus: None,
        }));
    }
    let (data, kind) = single_task_data(cfg, seed)?;
    let shape = NetworkShape::new(data.input_dim(), cfg.network.width, data.output_dim())?;
    let sampler = MinibatchSampler::new(data.len(), cfg.batch_size, seed)?;
    let cbo_trainer = |data, sampler| -> Result<CboTrainer> {
        Ok(CboTrainer {
            shape,
            data,
            kind,
            ensemble: Ensemble::uniform(&shape, particles, low, high, seed)?,
            sampler,
            exec,
            consensus: None,
        })
    };
    Ok(match cfg.method {
        Method::Cbo => Box::new(cbo_trainer(data, sampler)?),
        Method::Hybrid => Box::new(HybridTrainer {
            inner: cbo_trainer(data, sampler)?,
            states: vec![AdamState::new(cfg.adam, shape.param_count()); particles],
            hybrid: cfg.hybrid_config(),
        }),
        Method::Adam => Box::new(AdamTrainer {
            params: fan_in_uniform(&shape, seed),
            state: AdamState::new(cfg.adam, shape.param_count()),
            shape,
            data,
            kind,
            sampler,
        }),
        Method::OtCbo => Box::new(OtTrainer {
            ensemble: MeasureEnsemble::uniform(&shape, particles, low, high, seed)?,
            data,
            kind,
            sampler,
            options: cfg.barycenter_options(),
            barycenter: None,
        }),
        Method::MultitaskCbo => unreachable!("handled above"),
    })
}

fn batches_per_epoch(cfg: &ExperimentConfig) -> usize {
    cfg.data.samples.div_ceil(cfg.batch_size)
}

/// Trains one seed and records the full-data metrics after every epoch. A
/// non-finite risk or gradient stops the run; the rows recorded so far are
/// kept and the record is marked aborted.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let cfg = cfg.for_seed(seed);
    let base = cfg.cbo_config();
    let uses_cbo = cfg.method != Method::Adam;
    if uses_cbo {
        log::info!(
            "{}/{} seed {seed}: consensus margin 2λ − σ̃² = {:.3}",
            cfg.experiment,
            cfg.method,
            base.consensus_margin()
        );
    }
    let mut trainer = build_trainer(&cfg, seed)?;
    let batches = batches_per_epoch(&cfg);
    let start = Instant::now();
    let mut record = RunRecord {
        metrics: trainer.metrics(),
        config: cfg.clone(),
        seed,
        rows: Vec::new(),
        wall_ms: Vec::new(),
        status: RunStatus::Completed,
    };
    let row = |epoch: u64, values: Vec<f64>, c: &CboConfig| EpochRow {
        epoch,
        values,
        alpha: if uses_cbo { c.alpha } else { f64::NAN },
        sigma: if uses_cbo { c.sigma } else { f64::NAN },
    };
    let abort = |record: &mut RunRecord, epoch: u64, reason: String| {
        log::warn!("{}/{} seed {seed}: aborted in epoch {epoch}: {reason}", cfg.experiment, cfg.method);
        record.status = RunStatus::Aborted { epoch, reason };
    };

    let mut current = apply_schedules(&base, &cfg.schedule, 0);
    let mut iteration = 0u64;
    for epoch in 0..=cfg.epochs {
        if epoch > 0 {
            if cfg.schedule.unit == ScheduleUnit::Epoch {
                current = apply_schedules(&base, &cfg.schedule, epoch - 1);
            }
            for _ in 0..batches {
                if cfg.schedule.unit == ScheduleUnit::Iteration {
                    current = apply_schedules(&base, &cfg.schedule, iteration);
                }
                match trainer.update(&current) {
                    Ok(()) => {}
                    Err(e @ Error::NonFinite { .. }) => {
                        abort(&mut record, epoch, e.to_string());
                        return Ok(record);
                    }
                    Err(e) => return Err(e),
                }
                iteration += 1;
            }
        }
        let values = match trainer.record(&current) {
            Ok(v) => v,
            Err(e @ Error::NonFinite { .. }) => {
                abort(&mut record, epoch, e.to_string());
                return Ok(record);
            }
            Err(e) => return Err(e),
        };
        let finite = values.iter().all(|v| v.is_finite());
        record.rows.push(row(epoch, values, &current));
        record.wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        if !finite {
            abort(&mut record, epoch, "non-finite risk".into());
            return Ok(record);
        }
        log::debug!("{}/{} seed {seed} epoch {epoch}: {:?}", cfg.experiment, cfg.method, record.rows[record.rows.len() - 1].values);
    }
    Ok(record)
}

/// Runs every configured seed in order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    cfg.seeds.iter().map(|&seed| run_seed(cfg, seed)).collect()
}

/// Files produced by [`run_and_write`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub records: Vec<RunRecord>,
    pub run_files: Vec<PathBuf>,
    pub aggregate: Option<AggregateRecord>,
    pub plot_file: Option<PathBuf>,
}

/// Runs the experiment, writes each record as soon as its seed finishes, then
/// aggregates the completed runs into `<experiment>_<method>_aggregate.csv`.
pub fn run_and_write(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutputs> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut run_files = Vec::new();
    for &seed in &cfg.seeds {
        let record = run_seed(cfg, seed)?;
        run_files.push(record.write(dir)?);
        records.push(record);
    }
    let (aggregate, plot_file) = if records.iter().any(|r| r.is_completed()) {
        let agg = aggregate(&records)?;
        let path = dir.join(format!("{}_{}_aggregate.csv", cfg.experiment, cfg.method));
        emit_plot_data(&agg, &path)?;
        (Some(agg), Some(path))
    } else {
        (None, None)
    };
    Ok(RunOutputs {
        records,
        run_files,
        aggregate,
        plot_file,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(experiment: ExperimentId, method: Method) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(experiment, method).unwrap();
        cfg.epochs = 2;
        cfg.seeds = vec![3];
        cfg.data.samples = 60;
        cfg.batch_size = 25;
        cfg.network.width = 4;
        cfg.cbo.particles = 6;
        cfg.data.tasks = 3;
        cfg
    }

    #[test]
    fn zero_epochs_records_initial_row() {
        let mut cfg = tiny(ExperimentId::Sine, Method::Cbo);
        cfg.epochs = 0;
        let r = run_seed(&cfg, 3).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].epoch, 0);
        assert!(r.is_completed());
    }

    #[test]
    fn every_method_runs() {
        let cases = [
            (ExperimentId::Sine, Method::Cbo),
            (ExperimentId::Sine, Method::Adam),
            (ExperimentId::Sine, Method::Hybrid),
            (ExperimentId::Multitask, Method::MultitaskCbo),
            (ExperimentId::SquareOt, Method::OtCbo),
        ];
        for (e, m) in cases {
            let r = run_seed(&tiny(e, m), 3).unwrap();
            assert!(r.is_completed(), "{e}/{m}");
            assert_eq!(r.rows.iter().map(|row| row.epoch).collect::<Vec<_>>(), vec![0, 1, 2]);
            assert!(r.rows.iter().all(|row| row.values.iter().all(|v| v.is_finite())));
        }
    }

    #[test]
    fn replay_is_byte_identical() {
        let cfg = tiny(ExperimentId::SquareOt, Method::OtCbo);
        let a = run_seed(&cfg, 3).unwrap();
        let b = run_seed(&ExperimentConfig { parallel: true, ..cfg.clone() }, 3).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn diverging_adam_is_aborted_with_partial_rows() {
        let mut cfg = tiny(ExperimentId::Sine, Method::Adam);
        cfg.dt = 1e300;
        cfg.epochs = 5;
        let r = run_seed(&cfg, 3).unwrap();
        assert!(matches!(r.status, RunStatus::Aborted { .. }), "{:?}", r.status);
        assert!(!r.rows.is_empty());
    }

    #[test]
    fn schedules_show_in_rows() {
        let mut cfg = tiny(ExperimentId::Sine, Method::Cbo);
        cfg.schedule.alpha_every = 1;
        cfg.epochs = 3;
        let r = run_seed(&cfg, 3).unwrap();
        let alphas: Vec<f64> = r.rows.iter().map(|row| row.alpha).collect();
        assert_eq!(alphas, vec![1e5, 1e5, 1e6, 1e7]);
    }
}

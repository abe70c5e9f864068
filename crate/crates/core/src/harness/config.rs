use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::optim::{AdamConfig, CboConfig, HybridConfig, ScheduleConfig};
use crate::ot::BarycenterOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Sine,
    Mnist,
    Multitask,
    SquareOt,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [
        ExperimentId::Sine,
        ExperimentId::Mnist,
        ExperimentId::Multitask,
        ExperimentId::SquareOt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Sine => "sine",
            ExperimentId::Mnist => "mnist",
            ExperimentId::Multitask => "multitask",
            ExperimentId::SquareOt => "square_ot",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentId::Sine => "regression of sin(2πx) with Adam, CBO or the hybrid",
            ExperimentId::Mnist => "MNIST classification with Adam, CBO or the hybrid",
            ExperimentId::Multitask => "P shifted sines trained by one Multi-Task CBO ensemble",
            ExperimentId::SquareOt => "regression of x² with optimal-transport CBO over measures",
        }
    }

    /// Methods the experiment can run, the first being its default.
    pub fn methods(self) -> &'static [Method] {
        match self {
            ExperimentId::Sine | ExperimentId::Mnist => &[Method::Cbo, Method::Adam, Method::Hybrid],
            ExperimentId::Multitask => &[Method::MultitaskCbo],
            ExperimentId::SquareOt => &[Method::OtCbo, Method::Cbo, Method::Adam],
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{name}` (expected sine, mnist, multitask or square_ot)")))
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adam,
    Cbo,
    Hybrid,
    MultitaskCbo,
    OtCbo,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Adam, Method::Cbo, Method::Hybrid, Method::MultitaskCbo, Method::OtCbo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Adam => "adam",
            Method::Cbo => "cbo",
            Method::Hybrid => "hybrid",
            Method::MultitaskCbo => "multitask_cbo",
            Method::OtCbo => "ot_cbo",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown method `{name}` (expected adam, cbo, hybrid, multitask_cbo or ot_cbo)")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParams {
    /// Hidden width M.
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataParams {
    /// Training samples S (for MNIST, the number of images kept).
    pub samples: usize,
    pub noise_std: f64,
    /// Number of tasks P for the multi-task experiment.
    pub tasks: usize,
    pub mnist_images: PathBuf,
    pub mnist_labels: PathBuf,
}

impl Default for DataParams {
    fn default() -> Self {
        DataParams {
            samples: 2000,
            noise_std: 0.0,
            tasks: 10,
            mnist_images: PathBuf::from("data/mnist/train-images-idx3-ubyte"),
            mnist_labels: PathBuf::from("data/mnist/train-labels-idx1-ubyte"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CboParams {
    pub particles: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Particles (or measure atoms) start i.i.d. in `U[init_low, init_high)`.
    pub init_low: f64,
    pub init_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridParams {
    pub gamma: f64,
}

impl Default for HybridParams {
    fn default() -> Self {
        HybridParams { gamma: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarycenterParams {
    pub tol: f64,
    pub max_iters: usize,
    pub swap_search: bool,
}

impl Default for BarycenterParams {
    fn default() -> Self {
        let d = BarycenterOptions::default();
        BarycenterParams {
            tol: d.tol,
            max_iters: d.max_iters,
            swap_search: d.swap_search,
        }
    }
}

/// Everything needed to reproduce a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub method: Method,
    pub epochs: u64,
    pub seeds: Vec<u64>,
    /// Minibatch size S′, shared by all methods of an experiment.
    pub batch_size: usize,
    /// Time step Δt (the learning rate for Adam), shared by all methods.
    pub dt: f64,
    #[serde(default)]
    pub parallel: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub network: NetworkParams,
    #[serde(default)]
    pub data: DataParams,
    pub cbo: CboParams,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub hybrid: HybridParams,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub barycenter: BarycenterParams,
}

impl ExperimentConfig {
    /// Desk-scale defaults for an experiment and method.
    pub fn preset(experiment: ExperimentId, method: Method) -> Result<Self> {
        let schedule_on = ScheduleConfig {
            alpha_enabled: true,
            ..ScheduleConfig::default()
        };
        let mut cfg = match experiment {
            ExperimentId::Sine => ExperimentConfig {
                experiment,
                method,
                epochs: 200,
                seeds: (0..5).collect(),
                batch_size: 800,
                dt: 0.1,
                parallel: false,
                out_dir: None,
                network: NetworkParams { width: 50 },
                data: DataParams {
                    samples: 2000,
                    noise_std: 0.01,
                    ..DataParams::default()
                },
                cbo: CboParams {
                    particles: 100,
                    lambda: 1.0,
                    sigma: 1.6_f64.sqrt(),
                    alpha: 1e5,
                    init_low: -1.0,
                    init_high: 1.0,
                },
                adam: AdamConfig::default(),
                hybrid: HybridParams::default(),
                schedule: schedule_on,
                barycenter: BarycenterParams::default(),
            },
            ExperimentId::Mnist => {
                let hybrid = method == Method::Hybrid;
                ExperimentConfig {
                    experiment,
                    method,
                    epochs: 30,
                    seeds: (0..3).collect(),
                    batch_size: 1000,
                    dt: 0.1,
                    parallel: false,
                    out_dir: None,
                    network: NetworkParams { width: 20 },
                    data: DataParams::default(),
                    cbo: CboParams {
                        particles: 200,
                        lambda: 1.0,
                        sigma: if hybrid { 1.2_f64.sqrt() } else { 1.4_f64.sqrt() },
                        alpha: if hybrid { 1e4 } else { 1e5 },
                        init_low: -1.0,
                        init_high: 1.0,
                    },
                    adam: AdamConfig::default(),
                    hybrid: HybridParams { gamma: 0.7 },
                    schedule: ScheduleConfig::default(),
                    barycenter: BarycenterParams::default(),
                }
            }
            ExperimentId::Multitask => ExperimentConfig {
                experiment,
                method,
                epochs: 200,
                seeds: (0..3).collect(),
                batch_size: 800,
                dt: 0.2,
                parallel: false,
                out_dir: None,
                network: NetworkParams { width: 50 },
                data: DataParams {
                    samples: 2000,
                    tasks: 10,
                    ..DataParams::default()
                },
                cbo: CboParams {
                    particles: 20,
                    lambda: 1.0,
                    sigma: 1.8_f64.sqrt(),
                    alpha: 1e4,
                    init_low: -1.0,
                    init_high: 1.0,
                },
                adam: AdamConfig::default(),
                hybrid: HybridParams::default(),
                schedule: schedule_on,
                barycenter: BarycenterParams::default(),
            },
            ExperimentId::SquareOt => ExperimentConfig {
                experiment,
                method,
                epochs: 150,
                seeds: (0..3).collect(),
                batch_size: 500,
                dt: 0.1,
                parallel: false,
                out_dir: None,
                network: NetworkParams { width: 10 },
                data: DataParams {
                    samples: 1000,
                    noise_std: 0.01,
                    ..DataParams::default()
                },
                cbo: CboParams {
                    particles: 30,
                    lambda: 1.0,
                    sigma: 1.2_f64.sqrt(),
                    alpha: 1e4,
                    init_low: -2.0,
                    init_high: 2.0,
                },
                adam: AdamConfig::default(),
                hybrid: HybridParams::default(),
                schedule: ScheduleConfig {
                    sigma_enabled: true,
                    ..schedule_on
                },
                barycenter: BarycenterParams::default(),
            },
        };
        cfg.method = method;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment configs serialize to TOML")
    }

    /// Sets the value at a dotted path, e.g. `cbo.alpha=1e4` or
    /// `seeds=[1, 2]`. The value is read as a TOML value when possible and as
    /// a bare string otherwise. The result is re-validated against the schema.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields at least one part");
        let mut node = &mut root;
        for part in parents {
            node = node
                .as_table_mut()
                .and_then(|t| t.get_mut(*part))
                .ok_or_else(|| Error::Config(format!("override key `{key}`: no table `{part}`")))?;
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}` does not name a field")))?;
        // fields left at their default are absent from optional tables
        table.insert((*last).to_string(), value);
        let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
        ExperimentConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("override `{assignment}`: {msg}")),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.experiment.methods().contains(&self.method) {
            let allowed: Vec<&str> = self.experiment.methods().iter().map(|m| m.name()).collect();
            return Err(Error::Config(format!(
                "method {} does not apply to experiment {} (allowed: {})",
                self.method,
                self.experiment,
                allowed.join(", ")
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.network.width == 0 {
            return Err(Error::Config("network width must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > self.data.samples {
            return Err(Error::Config(format!(
                "batch_size {} must lie in 1..={} (data.samples)",
                self.batch_size, self.data.samples
            )));
        }
        if !(self.cbo.init_low < self.cbo.init_high) {
            return Err(Error::Config("cbo.init_low must be below cbo.init_high".into()));
        }
        if self.experiment == ExperimentId::Multitask && self.cbo.particles < self.data.tasks {
            return Err(Error::Config(format!(
                "{} particles cannot cover {} tasks",
                self.cbo.particles, self.data.tasks
            )));
        }
        if !(self.barycenter.tol >= 0.0) || self.barycenter.max_iters == 0 {
            return Err(Error::Config("barycenter needs tol ≥ 0 and max_iters ≥ 1".into()));
        }
        match self.method {
            Method::Adam => {
                self.adam.validate()?;
                if !(self.dt > 0.0) {
                    return Err(Error::Config("dt must be positive".into()));
                }
            }
            Method::Hybrid => self.hybrid_config().validate()?,
            _ => self.cbo_config().validate()?,
        }
        self.schedule.validate(self.cbo.alpha)
    }

    pub fn cbo_config(&self) -> CboConfig {
        CboConfig {
            particles: self.cbo.particles,
            lambda: self.cbo.lambda,
            sigma: self.cbo.sigma,
            alpha: self.cbo.alpha,
            dt: self.dt,
        }
    }

    pub fn hybrid_config(&self) -> HybridConfig {
        HybridConfig {
            gamma: self.hybrid.gamma,
            cbo: self.cbo_config(),
            adam: self.adam,
        }
    }

    pub fn barycenter_options(&self) -> BarycenterOptions {
        BarycenterOptions {
            tol: self.barycenter.tol,
            max_iters: self.barycenter.max_iters,
            swap_search: self.barycenter.swap_search,
            exec: self.exec(),
        }
    }

    pub fn exec(&self) -> Exec {
        Exec {
            parallel: self.parallel,
        }
    }

    /// The configuration of a single seed, as echoed next to its record.
    pub fn for_seed(&self, seed: u64) -> Self {
        ExperimentConfig {
            seeds: vec![seed],
            ..self.clone()
        }
    }

    /// SHA-256 of the TOML form with the output directory and the parallel
    /// flag removed, since neither changes the results.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            out_dir: None,
            parallel: false,
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Refuses a comparison whose configs disagree on the minibatch size or the
/// time step.
pub fn check_shared_parameters(configs: &[ExperimentConfig]) -> Result<()> {
    let Some(first) = configs.first() else {
        return Ok(());
    };
    for other in &configs[1..] {
        if other.batch_size != first.batch_size {
            return Err(Error::SharedParameterMismatch {
                param: "batch_size",
                left: first.batch_size as f64,
                right: other.batch_size as f64,
            });
        }
        if other.dt != first.dt {
            return Err(Error::SharedParameterMismatch {
                param: "dt",
                left: first.dt,
                right: other.dt,
            });
        }
    }
    Ok(())
}

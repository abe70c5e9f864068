use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

use super::config::{ExperimentConfig, ExperimentId, Method};

/// Metrics recorded at the end of one epoch (epoch 0 is the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: u64,
    /// One value per entry of [`RunRecord::metrics`].
    pub values: Vec<f64>,
    /// α and σ̃ in effect during the epoch.
    pub alpha: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { epoch: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// Resolved configuration of this seed alone.
    pub config: ExperimentConfig,
    pub seed: u64,
    /// Column names of the recorded values.
    pub metrics: Vec<&'static str>,
    pub rows: Vec<EpochRow>,
    /// Wall-clock milliseconds from the start of the run to each row.
    pub wall_ms: Vec<f64>,
    pub status: RunStatus,
}

#[derive(Serialize)]
struct Meta<'a> {
    experiment: ExperimentId,
    method: Method,
    seed: u64,
    config_hash: String,
    code_version: &'static str,
    rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    barycenter_init: Option<&'static str>,
    #[serde(flatten)]
    status: &'a RunStatus,
}

impl RunRecord {
    pub fn experiment(&self) -> ExperimentId {
        self.config.experiment
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn final_row(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    /// Values of one metric across epochs.
    pub fn series(&self, metric: &str) -> Option<Vec<f64>> {
        let k = self.metrics.iter().position(|m| *m == metric)?;
        Some(self.rows.iter().map(|r| r.values[k]).collect())
    }

    pub fn file_stem(&self) -> String {
        format!("{}_{}_seed{}", self.experiment(), self.method(), self.seed)
    }

    /// `epoch,<metrics>,alpha,sigma` with shortest round-trip floats. Holds
    /// no timing so that replays compare byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = format!("epoch,{},alpha,sigma\n", self.metrics.join(","));
        for row in &self.rows {
            write!(out, "{}", row.epoch).unwrap();
            for v in &row.values {
                write!(out, ",{v:?}").unwrap();
            }
            writeln!(out, ",{:?},{:?}", row.alpha, row.sigma).unwrap();
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,wall_ms\n");
        for (row, ms) in self.rows.iter().zip(&self.wall_ms) {
            writeln!(out, "{},{ms:.3}", row.epoch).unwrap();
        }
        out
    }

    pub fn meta_toml(&self) -> String {
        let meta = Meta {
            experiment: self.experiment(),
            method: self.method(),
            seed: self.seed,
            config_hash: self.config.hash(),
            code_version: env!("CARGO_PKG_VERSION"),
            rows: self.rows.len(),
            barycenter_init: (self.method() == Method::OtCbo).then_some("heaviest_measure_and_previous_barycenter"),
            status: &self.status,
        };
        toml::to_string(&meta).expect("metadata serializes to TOML")
    }

    /// Writes `<stem>.csv`, `<stem>.timing.csv`, `<stem>.meta.toml` and the
    /// echoed `<stem>.config.toml`. Returns the path of the CSV.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = self.file_stem();
        let files = [
            (format!("{stem}.csv"), self.to_csv()),
            (format!("{stem}.timing.csv"), self.timing_csv()),
            (format!("{stem}.meta.toml"), self.meta_toml()),
            (format!("{stem}.config.toml"), self.config.to_toml_string()),
        ];
        for (name, text) in &files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(dir.join(&files[0].0))
    }
}

/// Per-epoch statistics across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub experiment: ExperimentId,
    pub method: Method,
    pub seeds: usize,
    pub epochs: Vec<u64>,
    /// `(stat name, one value per epoch)`.
    pub stats: Vec<(String, Vec<f64>)>,
}

impl AggregateRecord {
    pub fn stat(&self, name: &str) -> Option<&[f64]> {
        self.stats.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median and mean across the completed records at every epoch. A single
/// `risk` metric yields stats `median` and `mean`; other metrics yield
/// `<metric>` (the median across seeds) and `mean_<metric>`.
pub fn aggregate(records: &[RunRecord]) -> Result<AggregateRecord> {
    let done: Vec<&RunRecord> = records.iter().filter(|r| r.is_completed()).collect();
    let Some(first) = done.first() else {
        return Err(Error::MisalignedRecords("no completed runs to aggregate".into()));
    };
    let epochs: Vec<u64> = first.rows.iter().map(|r| r.epoch).collect();
    for r in &done[1..] {
        if (r.experiment(), r.method()) != (first.experiment(), first.method()) || r.metrics != first.metrics {
            return Err(Error::MisalignedRecords(format!(
                "seed {} ran {}/{} but seed {} ran {}/{}",
                r.seed,
                r.experiment(),
                r.method(),
                first.seed,
                first.experiment(),
                first.method()
            )));
        }
        if r.rows.iter().map(|row| row.epoch).ne(epochs.iter().copied()) {
            return Err(Error::MisalignedRecords(format!(
                "seed {} has {} epoch rows, seed {} has {}",
                r.seed,
                r.rows.len(),
                first.seed,
                epochs.len()
            )));
        }
    }
    let mut stats = Vec::new();
    for (k, metric) in first.metrics.iter().enumerate() {
        let column = |i: usize| done.iter().map(|r| r.rows[i].values[k]).collect::<Vec<f64>>();
        let medians = (0..epochs.len()).map(|i| median(&column(i))).collect();
        let means = (0..epochs.len()).map(|i| mean(&column(i))).collect();
        if first.metrics.len() == 1 && *metric == "risk" {
            stats.push(("median".to_string(), medians));
            stats.push(("mean".to_string(), means));
        } else {
            stats.push((metric.to_string(), medians));
            stats.push((format!("mean_{metric}"), means));
        }
    }
    Ok(AggregateRecord {
        experiment: first.experiment(),
        method: first.method(),
        seeds: done.len(),
        epochs,
        stats,
    })
}

pub const PLOT_HEADER: &str = "experiment,method,epoch,stat,value";

/// Writes the aggregate as a tidy CSV with one value per line.
pub fn emit_plot_data(agg: &AggregateRecord, path: &Path) -> Result<()> {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for (i, epoch) in agg.epochs.iter().enumerate() {
        for (stat, values) in &agg.stats {
            writeln!(out, "{},{},{epoch},{stat},{:?}", agg.experiment, agg.method, values[i]).unwrap();
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One line of a plot-data file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub experiment: String,
    pub method: String,
    pub epoch: u64,
    pub stat: String,
    pub value: f64,
}

pub fn read_plot_data(path: &Path) -> Result<Vec<PlotPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, what: &str| Error::Config(format!("{}:{line}: {what}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(PLOT_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i + 2, "expected 5 fields"));
            }
            Ok(PlotPoint {
                experiment: f[0].to_string(),
                method: f[1].to_string(),
                epoch: f[2].parse().map_err(|_| bad(i + 2, "bad epoch"))?,
                stat: f[3].to_string(),
                value: f[4].parse().map_err(|_| bad(i + 2, "bad value"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(seed: u64, risks: &[f64]) -> RunRecord {
        RunRecord {
            config: ExperimentConfig::preset(ExperimentId::Sine, Method::Cbo).unwrap().for_seed(seed),
            seed,
            metrics: vec!["risk"],
            rows: risks
                .iter()
                .enumerate()
                .map(|(e, r)| EpochRow {
                    epoch: e as u64,
                    values: vec![*r],
                    alpha: 1e5,
                    sigma: 0.5,
                })
                .collect(),
            wall_ms: vec![0.0; risks.len()],
            status: RunStatus::Completed,
        }
    }

    #[test]
    fn single_record_aggregates_to_itself() {
        let agg = aggregate(&[record(0, &[3.0, 2.0])]).unwrap();
        assert_eq!(agg.stat("median").unwrap(), &[3.0, 2.0]);
        assert_eq!(agg.stat("mean").unwrap(), &[3.0, 2.0]);
        assert_eq!(agg.seeds, 1);
    }

    #[test]
    fn median_and_mean() {
        let agg = aggregate(&[record(0, &[1.0]), record(1, &[2.0]), record(2, &[9.0])]).unwrap();
        assert_eq!(agg.stat("median").unwrap(), &[2.0]);
        assert_eq!(agg.stat("mean").unwrap(), &[4.0]);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn aborted_runs_are_skipped_and_grids_must_align() {
        let mut aborted = record(1, &[f64::NAN]);
        aborted.status = RunStatus::Aborted {
            epoch: 1,
            reason: "non-finite risk".into(),
        };
        let agg = aggregate(&[record(0, &[1.0, 0.5]), aborted.clone()]).unwrap();
        assert_eq!(agg.seeds, 1);
        assert!(matches!(
            aggregate(&[record(0, &[1.0, 0.5]), record(1, &[1.0])]),
            Err(Error::MisalignedRecords(_))
        ));
        assert!(aggregate(&[aborted]).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = record(4, &[0.1, 1e-7]);
        assert_eq!(r.to_csv(), "epoch,risk,alpha,sigma\n0,0.1,100000.0,0.5\n1,1e-7,100000.0,0.5\n");
        assert_eq!(r.file_stem(), "sine_cbo_seed4");
        assert!(r.meta_toml().contains("status = \"completed\""));
    }

    #[test]
    fn plot_data_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let values = [0.1 + 0.2, std::f64::consts::PI * 1e-9, 1.0 / 3.0];
        let agg = aggregate(&[record(0, &values)]).unwrap();
        let path = dir.path().join("plot.csv");
        emit_plot_data(&agg, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some(PLOT_HEADER));
        let points = read_plot_data(&path).unwrap();
        assert_eq!(points.len(), 6);
        let medians: Vec<f64> = points.iter().filter(|p| p.stat == "median").map(|p| p.value).collect();
        assert_eq!(medians, values);
    }
}

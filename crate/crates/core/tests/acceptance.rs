//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the
//! measured quantity and runtime. Tests are serialized so runtimes are not
//! inflated by each other.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use cbo_core::mnist::{encode_images, encode_labels, load_mnist_idx};
use cbo_core::nn::gradient;
use cbo_core::optim::{consensus_point, consensus_weights};
use cbo_core::ot::{
    barycenter, barycenter_from, ensemble_variance, first_order_residual, ot_cbo_step, w2_empirical,
    BarycenterOptions, MeasureEnsemble,
};
use cbo_core::{EmpiricalMeasure, Error, LossKind, NetworkShape, ParamVector};
use cbo_core::exec::Exec;
use cbo_core::harness::{aggregate, run_experiment, AggregateRecord, ExperimentConfig, ExperimentId, Method};
use cbo_core::optim::CboConfig;
use common::*;
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, limit: Duration, body: impl FnOnce() -> Result<String, String>) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let (ok, detail) = match &outcome {
        Ok(Ok(d)) => (elapsed <= limit, d.clone()),
        Ok(Err(d)) => (false, d.clone()),
        Err(_) => (false, "panicked".to_string()),
    };
    let line = format!(
        "\n{} [{id:02}] {name}: {detail} ({:.2} s, limit {} s)\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    // written straight to stdout so the line survives output capture
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    match outcome {
        Err(payload) => resume_unwind(payload),
        Ok(_) => assert!(ok, "{}", line.trim()),
    }
}

fn check(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[test]
fn c01_gradient_matches_finite_differences() {
    report(1, "gradient oracle", Duration::from_secs(10), || {
        let mut rng = rng(1);
        let h = 1e-4;
        let mut worst = 0.0_f64;
        for inst in 0..100 {
            let kind = if inst % 2 == 0 { LossKind::SquaredError } else { LossKind::CrossEntropy };
            let d = rng.random_range(1..=5);
            let m = rng.random_range(1..=20);
            let c = if kind == LossKind::SquaredError { 1 } else { rng.random_range(2..=4) };
            let n = rng.random_range(1..=16);
            let shape = NetworkShape::new(d, m, c).unwrap();
            let batch = random_batch(&mut rng, d, c, n, kind);
            // keep every pre-activation well away from the ReLU kink
            let theta = loop {
                let t = uniform_vec(&mut rng, shape.param_count(), -1.0, 1.0);
                if naive_pre(&shape, &t, &batch).iter().all(|z| z.abs() > 1e-3) {
                    break ParamVector::from_vec(t);
                }
            };
            let g = gradient(&shape, &theta, &batch, kind).unwrap();
            let f = finite_difference(&shape, &theta, &batch, kind, h);
            for (a, b) in g.iter().zip(&f) {
                if a != b {
                    worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
                }
            }
        }
        check(worst <= 1e-5, format!("max relative error {worst:.2e} (tol 1e-5)"))
    });
}

#[test]
fn c02_assignment_matches_brute_force() {
    report(2, "W2 exactness", Duration::from_secs(30), || {
        let mut rng = rng(2);
        let mut worst = 0.0_f64;
        for _ in 0..200 {
            let m = rng.random_range(1..=7);
            let dim = rng.random_range(3..=5);
            let a = random_measure(&mut rng, m, dim);
            let b = random_measure(&mut rng, m, dim);
            let (w, assignment) = w2_empirical(&a, &b).unwrap();
            let exact = brute_force_w2_sq(&a, &b);
            worst = worst.max((assignment.cost - exact).abs()).max((w * w - exact).abs());
        }
        check(worst <= 1e-12, format!("max |cost - brute force| {worst:.2e} (tol 1e-12)"))
    });
}

fn random_weights(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw = uniform_vec(rng, n, 0.05, 1.0);
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

#[test]
fn c03_barycenter_stationary_and_monotone() {
    report(3, "barycenter stationarity", Duration::from_secs(60), || {
        let mut rng = rng(3);
        let opts = BarycenterOptions::default();
        let (mut rises, mut residual, mut unconverged) = (0usize, 0.0_f64, 0usize);
        for _ in 0..100 {
            let n = rng.random_range(1..=5);
            let m = rng.random_range(1..=5);
            let dim = rng.random_range(3..=4);
            let measures = (0..n).map(|_| random_measure(&mut rng, m, dim)).collect();
            let mut ens = MeasureEnsemble::new(measures, 0).unwrap();
            ens.set_weights(random_weights(&mut rng, n)).unwrap();
            let bary = barycenter(&ens, &opts).unwrap();
            rises += bary.history.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
            if bary.converged {
                residual = residual.max(first_order_residual(&ens, &bary).unwrap());
            } else {
                unconverged += 1;
            }
        }
        let mut gap = 0.0_f64;
        let search = BarycenterOptions { swap_search: true, ..opts };
        for _ in 0..20 {
            let measures: Vec<EmpiricalMeasure> = (0..3).map(|_| random_measure(&mut rng, 3, 4)).collect();
            let weights = random_weights(&mut rng, 3);
            let mut ens = MeasureEnsemble::new(measures.clone(), 0).unwrap();
            ens.set_weights(weights.clone()).unwrap();
            let bary = barycenter(&ens, &search).unwrap();
            gap = gap.max((bary.objective - exhaustive_barycenter_objective(&measures, ens.weights())).abs());
        }
        check(
            rises == 0 && unconverged == 0 && residual <= 1e-9 && gap <= 1e-9,
            format!(
                "objective rises {rises}, unconverged {unconverged}, max residual {residual:.2e} (tol 1e-9), \
                 max gap to exhaustive search {gap:.2e} (tol 1e-9)"
            ),
        )
    });
}

#[test]
fn c04_single_atom_barycenter_is_consensus_point() {
    report(4, "Frechet mean consistency", Duration::from_secs(10), || {
        let mut rng = rng(4);
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let n = rng.random_range(1..=10);
            let dim = rng.random_range(3..=6);
            let alpha = rng.random_range(0.0..50.0);
            let measures: Vec<EmpiricalMeasure> = (0..n).map(|_| random_measure(&mut rng, 1, dim)).collect();
            let risks = uniform_vec(&mut rng, n, 0.0, 1.0);
            let mut ens = MeasureEnsemble::new(measures.clone(), 0).unwrap();
            ens.set_weights(consensus_weights(&risks, alpha).unwrap()).unwrap();
            let bary = barycenter(&ens, &BarycenterOptions::default()).unwrap();
            let particles: Vec<ParamVector> = measures.iter().map(|m| m.to_param_vector()).collect();
            let v = consensus_point(&particles, &risks, alpha).unwrap();
            for (a, b) in bary.support.atom(0).iter().zip(v.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
        check(worst <= 1e-12, format!("max |barycenter - consensus point| {worst:.2e} (tol 1e-12)"))
    });
}

#[test]
fn c05_variance_contracts() {
    report(5, "variance contraction", Duration::from_secs(60), || {
        let opts = BarycenterOptions::default();
        let shape = NetworkShape::new(2, 4, 1).unwrap();
        let mut violations = 0usize;
        let mut worst_excess = f64::NEG_INFINITY;
        let mut after_unit = 0.0_f64;
        for seed in 0..50 {
            for dt in [0.25, 0.5, 1.0] {
                let cfg = CboConfig { particles: 8, lambda: 1.0, sigma: 0.0, alpha: 0.0, dt };
                let mut ens = MeasureEnsemble::uniform(&shape, 8, -1.0, 1.0, seed).unwrap();
                let mut bary = barycenter(&ens, &opts).unwrap();
                let mut v = ensemble_variance(&ens, &bary).unwrap();
                for k in 0..20 {
                    ot_cbo_step(&mut ens, &bary, &cfg, Exec::SERIAL).unwrap();
                    let starts = [&ens.measures[ens.heaviest()], &bary.support];
                    let next = barycenter_from(&ens, &starts, &opts).unwrap();
                    let v_next = ensemble_variance(&ens, &next).unwrap();
                    let excess = v_next - (1.0 - dt) * (1.0 - dt) * v;
                    worst_excess = worst_excess.max(excess);
                    if excess > 1e-10 {
                        violations += 1;
                    }
                    if dt == 1.0 && k == 0 {
                        after_unit = after_unit.max(v_next);
                    }
                    bary = next;
                    v = v_next;
                }
            }
        }
        check(
            violations == 0 && after_unit <= 1e-20,
            format!(
                "violations {violations} of 3000 steps, max excess {worst_excess:.2e} (tol 1e-10), \
                 variance after one unit step {after_unit:.2e} (tol 1e-20)"
            ),
        )
    });
}

#[test]
fn c06_consensus_limits() {
    report(6, "consensus limits", Duration::from_secs(10), || {
        let mut rng = rng(6);
        let (mut argmin_err, mut mean_err, mut shift_err) = (0.0_f64, 0.0_f64, 0.0_f64);
        for _ in 0..100 {
            let n = rng.random_range(2..=20);
            let len = rng.random_range(1..=30);
            let particles: Vec<ParamVector> =
                (0..n).map(|_| ParamVector::from_vec(uniform_vec(&mut rng, len, -5.0, 5.0))).collect();
            let risks = uniform_vec(&mut rng, n, 0.0, 2.0);
            let best = (0..n).min_by(|&a, &b| risks[a].total_cmp(&risks[b])).unwrap();

            let v = consensus_point(&particles, &risks, 1e12).unwrap();
            for (a, b) in v.iter().zip(particles[best].iter()) {
                argmin_err = argmin_err.max((a - b).abs() / b.abs().max(1e-300));
            }
            let v = consensus_point(&particles, &risks, 0.0).unwrap();
            for i in 0..len {
                let mean = particles.iter().map(|p| p[i]).sum::<f64>() / n as f64;
                mean_err = mean_err.max((v[i] - mean).abs());
            }
            // dyadic risks and integer shifts keep r + c exact, so any
            // difference comes from the weights themselves
            let dyadic: Vec<f64> = (0..n).map(|_| rng.random_range(0..1u64 << 21) as f64 / (1u64 << 20) as f64).collect();
            let alpha = rng.random_range(0.0..100.0);
            let shift = rng.random_range(-1_000_000i64..1_000_000) as f64;
            let shifted: Vec<f64> = dyadic.iter().map(|r| r + shift).collect();
            let a = consensus_point(&particles, &dyadic, alpha).unwrap();
            let b = consensus_point(&particles, &shifted, alpha).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                shift_err = shift_err.max((x - y).abs());
            }
        }
        check(
            argmin_err <= 1e-9 && mean_err <= 1e-12 && shift_err <= 1e-12,
            format!(
                "argmin rel err {argmin_err:.2e} (tol 1e-9), mean err {mean_err:.2e} (tol 1e-12), \
                 shift err {shift_err:.2e} (tol 1e-12)"
            ),
        )
    });
}

fn run_aggregate(cfg: &ExperimentConfig) -> AggregateRecord {
    let records = run_experiment(cfg).unwrap();
    assert!(records.iter().all(|r| r.is_completed()), "a seed aborted");
    aggregate(&records).unwrap()
}

fn at_epoch(agg: &AggregateRecord, stat: &str, epoch: u64) -> f64 {
    let k = agg.epochs.iter().position(|&e| e == epoch).unwrap();
    agg.stat(stat).unwrap()[k]
}

fn last(agg: &AggregateRecord, stat: &str) -> f64 {
    *agg.stat(stat).unwrap().last().unwrap()
}

#[test]
fn c07_sine_cbo() {
    report(7, "sine regression with CBO", Duration::from_secs(300), || {
        let mut cfg = ExperimentConfig::preset(ExperimentId::Sine, Method::Cbo).unwrap();
        cfg.seeds = (0..5).collect();
        let cbo = run_aggregate(&cfg);
        let adam = run_aggregate(&ExperimentConfig { method: Method::Adam, ..cfg.clone() });
        let final_risk = last(&cbo, "median");
        let drop = at_epoch(&cbo, "median", 10) / at_epoch(&cbo, "median", 200);
        check(
            final_risk <= 1e-2 && drop >= 10.0,
            format!(
                "median final MSE {final_risk:.3e} (tol 1e-2), epoch 10 / epoch 200 {drop:.2} (need >= 10); \
                 adam median final MSE {:.3e} (recorded only)",
                last(&adam, "median")
            ),
        )
    });
}

#[test]
fn c08_mnist_methods() {
    report(8, "MNIST with CBO, Adam and hybrid", Duration::from_secs(900), || {
        let data = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
        let mut finals = Vec::new();
        let mut all_decrease = true;
        let mut detail = Vec::new();
        for method in [Method::Cbo, Method::Adam, Method::Hybrid] {
            let mut cfg = ExperimentConfig::preset(ExperimentId::Mnist, method).unwrap();
            cfg.data.mnist_images = data.join("train-images-idx3-ubyte");
            cfg.data.mnist_labels = data.join("train-labels-idx1-ubyte");
            cfg.seeds = (0..3).collect();
            let agg = run_aggregate(&cfg);
            let (first, fin) = (at_epoch(&agg, "median", 0), last(&agg, "median"));
            all_decrease &= fin < first;
            detail.push(format!("{method} {first:.3} -> {fin:.4}"));
            finals.push(fin);
        }
        let ordered = finals[2] <= finals[0];
        check(
            all_decrease && ordered,
            format!("median CE {}; hybrid <= cbo {ordered}", detail.join(", ")),
        )
    });
}

#[test]
fn c09_multitask() {
    report(9, "multi-task CBO", Duration::from_secs(600), || {
        let cfg = ExperimentConfig::preset(ExperimentId::Multitask, Method::MultitaskCbo).unwrap();
        let agg = run_aggregate(&cfg);
        let median_drop = at_epoch(&agg, "median_task_risk", 0) / last(&agg, "median_task_risk");
        let min_drop = at_epoch(&agg, "min_task_risk", 0) / last(&agg, "min_task_risk");
        check(
            median_drop >= 10.0 && min_drop >= 10.0,
            format!("initial / final: median task risk {median_drop:.2}, min task risk {min_drop:.2} (need >= 10)"),
        )
    });
}

#[test]
fn c10_ot_width_ordering() {
    report(10, "OT-CBO across widths", Duration::from_secs(1200), || {
        let mut medians = Vec::new();
        let mut all_decrease = true;
        for width in [5, 10, 20] {
            let mut cfg = ExperimentConfig::preset(ExperimentId::SquareOt, Method::OtCbo).unwrap();
            cfg.network.width = width;
            let agg = run_aggregate(&cfg);
            all_decrease &= last(&agg, "mean") < at_epoch(&agg, "mean", 0);
            medians.push(last(&agg, "median"));
        }
        let ordered = medians.windows(2).all(|w| w[1] <= 1.2 * w[0]);
        check(
            all_decrease && ordered,
            format!(
                "mean risk decreases {all_decrease}; median final risk M=5 {:.3e}, M=10 {:.3e}, M=20 {:.3e} \
                 (non-increasing within 20%: {ordered})",
                medians[0], medians[1], medians[2]
            ),
        )
    });
}

#[test]
fn c11_bitwise_reproducibility() {
    report(11, "reproducibility", Duration::from_secs(120), || {
        let cases = [
            (ExperimentId::Sine, Method::Cbo),
            (ExperimentId::Sine, Method::Adam),
            (ExperimentId::Sine, Method::Hybrid),
            (ExperimentId::Multitask, Method::MultitaskCbo),
            (ExperimentId::SquareOt, Method::OtCbo),
        ];
        let mut mismatches = Vec::new();
        for (experiment, method) in cases {
            let mut cfg = ExperimentConfig::preset(experiment, method).unwrap();
            cfg.seeds = vec![11];
            cfg.epochs = 5;
            cfg.data.samples = 400;
            cfg.batch_size = 100;
            cfg.cbo.particles = 20;
            cfg.network.width = 8;
            let csv = |parallel: bool| {
                let c = ExperimentConfig { parallel, ..cfg.clone() };
                run_experiment(&c).unwrap()[0].to_csv()
            };
            let reference = csv(false);
            if csv(false) != reference || csv(true) != reference {
                mismatches.push(format!("{experiment}/{method}"));
            }
        }
        check(
            mismatches.is_empty(),
            format!("5 methods x (serial, serial, parallel), differing CSVs: {mismatches:?}"),
        )
    });
}

#[test]
fn c12_mnist_ingestion() {
    report(12, "MNIST ingestion", Duration::from_secs(10), || {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rng(12);
        let pixels: Vec<u8> = (0..5 * 784).map(|_| rng.random_range(0..=255u8)).collect();
        let labels: Vec<u8> = (0..5).map(|_| rng.random_range(0..10u8)).collect();
        let images = encode_images(28, 28, &pixels);
        let ip = dir.path().join("images");
        let lp = dir.path().join("labels");
        std::fs::write(&ip, &images).unwrap();
        std::fs::write(&lp, encode_labels(&labels)).unwrap();

        let data = load_mnist_idx(&ip, &lp, None).unwrap();
        let back: Vec<u8> = data.samples.inputs().iter().map(|v| (v * 255.0).round() as u8).collect();
        let round_trip = encode_images(28, 28, &back) == images;
        let scaled = data.samples.inputs().iter().zip(&pixels).all(|(v, p)| *v == *p as f64 / 255.0);

        let corrupt = |bytes: &[u8], name: &str| {
            let p = dir.path().join(name);
            std::fs::write(&p, bytes).unwrap();
            matches!(load_mnist_idx(&p, &lp, None), Err(Error::Idx { .. }))
        };
        let mut bad_magic = images.clone();
        bad_magic[2] = 9;
        let rejected = [
            corrupt(&bad_magic, "magic"),
            corrupt(&images[..images.len() - 1], "short_body"),
            corrupt(&images[..7], "short_header"),
        ];
        check(
            round_trip && scaled && rejected.iter().all(|r| *r),
            format!("round trip {round_trip}, scaling {scaled}, corrupt fixtures rejected {rejected:?}"),
        )
    });
}

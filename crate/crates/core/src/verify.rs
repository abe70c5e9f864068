//! Numerical self-checks that run without a test framework.
//!
//! Each suite draws random instances from the `Verify` stream domain, compares
//! the library against an independent reference (finite differences,
//! enumeration over permutations, closed forms) and reports the worst
//! deviation against a fixed tolerance.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, Targets};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{empirical_risk, gradient, EmpiricalMeasure, LossKind, NetworkShape, ParamVector};
use crate::optim::{consensus_point, consensus_weights, CboConfig};
use crate::ot::{
    barycenter, barycenter_from, ensemble_variance, first_order_residual, ot_cbo_step, w2_empirical,
    BarycenterOptions, MeasureEnsemble,
};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradient,
    W2,
    Barycenter,
    Prop1,
    Prop3,
    Consensus,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Gradient,
        Suite::W2,
        Suite::Barycenter,
        Suite::Prop1,
        Suite::Prop3,
        Suite::Consensus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradient => "gradient",
            Suite::W2 => "w2",
            Suite::Barycenter => "barycenter",
            Suite::Prop1 => "prop1",
            Suite::Prop3 => "prop3",
            Suite::Consensus => "consensus",
        }
    }

    pub fn parse(s: &str) -> Result<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
            Error::Config(format!("unknown suite {s:?} (expected one of {})", names.join(", ")))
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of the pass/fail table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub suite: Suite,
    pub check: &'static str,
    pub cases: usize,
    pub worst: f64,
    pub tol: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

fn outcome(suite: Suite, check: &'static str, cases: usize, worst: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        suite,
        check,
        cases,
        worst,
        tol,
    }
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, low: f64, high: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(low..high)).collect()
}

fn random_measure(rng: &mut ChaCha8Rng, atoms: usize, atom_dim: usize) -> EmpiricalMeasure {
    let shape = NetworkShape::new(atom_dim - 2, atoms, 1).expect("valid shape");
    EmpiricalMeasure::from_flat(&shape, uniform(rng, atoms * atom_dim, -2.0, 2.0)).expect("valid measure")
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw = uniform(rng, n, 0.05, 1.0);
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// All permutations of `0..m` by Heap's algorithm.
fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..m).collect();
    let mut c = vec![0; m];
    let mut out = vec![p.clone()];
    let mut i = 0;
    while i < m {
        if c[i] < i {
            let j = if i % 2 == 0 { 0 } else { c[i] };
            p.swap(j, i);
            out.push(p.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

fn brute_force_w2_sq(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    permutations(a.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(j, &i)| sq_dist(a.atom(j), b.atom(i))).sum::<f64>() / a.len() as f64)
        .fold(f64::INFINITY, f64::min)
}

fn gradient_suite(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let h = 1e-4;
    let mut worst = 0.0_f64;
    for inst in 0..100 {
        let kind = if inst % 2 == 0 { LossKind::SquaredError } else { LossKind::CrossEntropy };
        let d = rng.random_range(1..=5);
        let m = rng.random_range(1..=20);
        let c = if kind == LossKind::SquaredError { 1 } else { rng.random_range(2..=4) };
        let n = rng.random_range(1..=16);
        let shape = NetworkShape::new(d, m, c)?;
        let inputs = uniform(rng, n * d, -1.0, 1.0);
        let targets = match kind {
            LossKind::SquaredError => Targets::Real {
                values: uniform(rng, n, -1.0, 1.0),
                dim: 1,
            },
            LossKind::CrossEntropy => Targets::Class {
                labels: (0..n).map(|_| rng.random_range(0..c as u32)).collect(),
                classes: c,
            },
        };
        let batch = Batch::new(d, inputs, targets)?;
        // redraw until every pre-activation is clear of the ReLU kink
        let theta = loop {
            let t = uniform(rng, shape.param_count(), -1.0, 1.0);
            let clear = (0..n).all(|s| {
                let x = batch.input(s);
                t.chunks(shape.stride()).all(|block| {
                    let z: f64 = block[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + block[d];
                    z.abs() > 1e-3
                })
            });
            if clear {
                break ParamVector::from_vec(t);
            }
        };
        let g = gradient(&shape, &theta, &batch, kind)?;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            let fd = (empirical_risk(&shape, &plus, &batch, kind)? - empirical_risk(&shape, &minus, &batch, kind)?)
                / (2.0 * h);
            if g[i] != fd {
                worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()));
            }
        }
    }
    Ok(vec![outcome(Suite::Gradient, "relative error vs central differences", 100, worst, 1e-5)])
}

fn w2_suite(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let (mut worst, mut axioms) = (0.0_f64, 0.0_f64);
    for _ in 0..200 {
        let m = rng.random_range(1..=7);
        let dim = rng.random_range(3..=5);
        let a = random_measure(rng, m, dim);
        let b = random_measure(rng, m, dim);
        let (w, assignment) = w2_empirical(&a, &b)?;
        let exact = brute_force_w2_sq(&a, &b);
        worst = worst.max((assignment.cost - exact).abs()).max((w * w - exact).abs());
        let (back, _) = w2_empirical(&b, &a)?;
        let (self_dist, _) = w2_empirical(&a, &a)?;
        axioms = axioms.max((w - back).abs()).max(self_dist);
    }
    Ok(vec![
        outcome(Suite::W2, "|assignment cost - enumeration|", 200, worst, 1e-12),
        outcome(Suite::W2, "symmetry and W2(a, a)", 200, axioms, 1e-12),
    ])
}

fn barycenter_suite(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let opts = BarycenterOptions::default();
    let (mut residual, mut rise, mut unconverged) = (0.0_f64, 0.0_f64, 0usize);
    for _ in 0..100 {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let dim = rng.random_range(3..=4);
        let measures = (0..n).map(|_| random_measure(rng, m, dim)).collect();
        let mut ens = MeasureEnsemble::new(measures, 0)?;
        ens.set_weights(random_weights(rng, n))?;
        let bary = barycenter(&ens, &opts)?;
        for w in bary.history.windows(2) {
            rise = rise.max(w[1] - w[0]);
        }
        if bary.converged {
            residual = residual.max(first_order_residual(&ens, &bary)?);
        } else {
            unconverged += 1;
        }
    }
    Ok(vec![
        outcome(Suite::Barycenter, "first-order residual at the fixed point", 100, residual, 1e-9),
        outcome(Suite::Barycenter, "largest objective increase", 100, rise, 1e-12),
        outcome(Suite::Barycenter, "unconverged instances", 100, unconverged as f64, 0.0),
    ])
}

fn prop1_suite(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=10);
        let dim = rng.random_range(3..=6);
        let alpha = rng.random_range(0.0..50.0);
        let measures: Vec<EmpiricalMeasure> = (0..n).map(|_| random_measure(rng, 1, dim)).collect();
        let risks = uniform(rng, n, 0.0, 1.0);
        let mut ens = MeasureEnsemble::new(measures.clone(), 0)?;
        ens.set_weights(consensus_weights(&risks, alpha)?)?;
        let bary = barycenter(&ens, &BarycenterOptions::default())?;
        let particles: Vec<ParamVector> = measures.iter().map(|m| m.to_param_vector()).collect();
        let v = consensus_point(&particles, &risks, alpha)?;
        for (a, b) in bary.support.atom(0).iter().zip(v.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(vec![outcome(Suite::Prop1, "|single-atom barycenter - consensus point|", 100, worst, 1e-12)])
}

fn prop3_suite() -> Result<Vec<CheckOutcome>> {
    let opts = BarycenterOptions::default();
    let shape = NetworkShape::new(2, 4, 1)?;
    let (mut excess, mut after_unit, mut steps) = (f64::NEG_INFINITY, 0.0_f64, 0usize);
    for seed in 0..50 {
        for dt in [0.25, 0.5, 1.0] {
            let cfg = CboConfig {
                particles: 8,
                lambda: 1.0,
                sigma: 0.0,
                alpha: 0.0,
                dt,
            };
            let mut ens = MeasureEnsemble::uniform(&shape, 8, -1.0, 1.0, seed)?;
            let mut bary = barycenter(&ens, &opts)?;
            let mut v = ensemble_variance(&ens, &bary)?;
            for k in 0..20 {
                ot_cbo_step(&mut ens, &bary, &cfg, Exec::SERIAL)?;
                let next = barycenter_from(&ens, &[&ens.measures[ens.heaviest()], &bary.support], &opts)?;
                let v_next = ensemble_variance(&ens, &next)?;
                excess = excess.max(v_next - (1.0 - dt) * (1.0 - dt) * v);
                if dt == 1.0 && k == 0 {
                    after_unit = after_unit.max(v_next);
                }
                steps += 1;
                bary = next;
                v = v_next;
            }
        }
    }
    Ok(vec![
        outcome(Suite::Prop3, "V_{k+1} - (1 - dt)^2 V_k", steps, excess, 1e-10),
        outcome(Suite::Prop3, "variance after one unit step", 50, after_unit, 1e-20),
    ])
}

fn consensus_suite(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let (mut argmin, mut mean, mut shift) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let len = rng.random_range(1..=30);
        let particles: Vec<ParamVector> = (0..n).map(|_| ParamVector::from_vec(uniform(rng, len, -5.0, 5.0))).collect();
        let risks = uniform(rng, n, 0.0, 2.0);
        let best = (0..n).min_by(|&a, &b| risks[a].total_cmp(&risks[b])).expect("n ≥ 2");
        let v = consensus_point(&particles, &risks, 1e12)?;
        for (a, b) in v.iter().zip(particles[best].iter()) {
            argmin = argmin.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
        }
        let v = consensus_point(&particles, &risks, 0.0)?;
        for i in 0..len {
            let m = particles.iter().map(|p| p[i]).sum::<f64>() / n as f64;
            mean = mean.max((v[i] - m).abs());
        }
        let dyadic: Vec<f64> = (0..n).map(|_| rng.random_range(0..1u64 << 21) as f64 / (1u64 << 20) as f64).collect();
        let alpha = rng.random_range(0.0..100.0);
        let c = rng.random_range(-1_000_000i64..1_000_000) as f64;
        let shifted: Vec<f64> = dyadic.iter().map(|r| r + c).collect();
        let a = consensus_point(&particles, &dyadic, alpha)?;
        let b = consensus_point(&particles, &shifted, alpha)?;
        for (x, y) in a.iter().zip(b.iter()) {
            shift = shift.max((x - y).abs());
        }
    }
    Ok(vec![
        outcome(Suite::Consensus, "large alpha selects the argmin (relative)", 100, argmin, 1e-9),
        outcome(Suite::Consensus, "alpha = 0 gives the mean", 100, mean, 1e-12),
        outcome(Suite::Consensus, "invariance under risk shifts", 100, shift, 1e-12),
    ])
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = stream(seed, Domain::Verify, suite as u64, 0);
    match suite {
        Suite::Gradient => gradient_suite(&mut rng),
        Suite::W2 => w2_suite(&mut rng),
        Suite::Barycenter => barycenter_suite(&mut rng),
        Suite::Prop1 => prop1_suite(&mut rng),
        Suite::Prop3 => prop3_suite(),
        Suite::Consensus => consensus_suite(&mut rng),
    }
}

pub fn run_suites(suites: &[Suite], seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for &s in suites {
        out.extend(run_suite(s, seed)?);
    }
    Ok(out)
}

pub fn render_table(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.check.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<6} {:<10} {:<width$} {:>6} {:>10} {:>10}\n", "result", "suite", "check", "cases", "worst", "tol");
    for o in outcomes {
        s.push_str(&format!(
            "{:<6} {:<10} {:<width$} {:>6} {:>10.2e} {:>10.0e}\n",
            if o.passed() { "PASS" } else { "FAIL" },
            o.suite.name(),
            o.check,
            o.cases,
            o.worst,
            o.tol
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heap_permutations_are_complete() {
        let mut p = permutations(4);
        assert_eq!(p.len(), 24);
        p.sort();
        p.dedup();
        assert_eq!(p.len(), 24);
        assert_eq!(permutations(0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()).unwrap(), s);
        }
        assert!(Suite::parse("prop9").is_err());
    }

    #[test]
    fn cheap_suites_pass() {
        for s in [Suite::W2, Suite::Prop1, Suite::Consensus] {
            for o in run_suite(s, 0).unwrap() {
                assert!(o.passed(), "{o:?}");
            }
        }
    }

    #[test]
    fn table_marks_failures() {
        let rows = [
            outcome(Suite::W2, "ok", 1, 0.0, 1e-12),
            outcome(Suite::W2, "bad", 1, 1.0, 1e-12),
        ];
        let t = render_table(&rows);
        assert!(t.contains("PASS") && t.contains("FAIL"));
        assert_eq!(t.lines().count(), 3);
    }
}

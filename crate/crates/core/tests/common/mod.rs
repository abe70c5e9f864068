//! Reference implementations used as test oracles. Everything here is
//! written as plainly as possible and shares no code with the library.
#![allow(dead_code)]

use cbo_core::data::{Batch, Target, Targets};
use cbo_core::rng::{stream, Domain};
use cbo_core::{EmpiricalMeasure, LossKind, NetworkShape, ParamVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream(seed, Domain::Verify, 0, 0)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, low: f64, high: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(low..high)).collect()
}

pub fn random_batch(rng: &mut ChaCha8Rng, d: usize, c: usize, n: usize, kind: LossKind) -> Batch {
    let inputs = uniform_vec(rng, n * d, -1.0, 1.0);
    let targets = match kind {
        LossKind::SquaredError => Targets::Real {
            values: uniform_vec(rng, n, -1.0, 1.0),
            dim: 1,
        },
        LossKind::CrossEntropy => Targets::Class {
            labels: (0..n).map(|_| rng.random_range(0..c as u32)).collect(),
            classes: c,
        },
    };
    Batch::new(d, inputs, targets).unwrap()
}

/// Pre-activations `w_m·x + b_m` of every neuron for every sample.
pub fn naive_pre(shape: &NetworkShape, theta: &[f64], batch: &Batch) -> Vec<f64> {
    let (d, k) = (shape.input_dim, shape.output_dim);
    let stride = d + 1 + k;
    let mut out = Vec::new();
    for s in 0..batch.len() {
        let x = batch.input(s);
        for m in 0..shape.width {
            let block = &theta[m * stride..(m + 1) * stride];
            let mut z = block[d];
            for i in 0..d {
                z += block[i] * x[i];
            }
            out.push(z);
        }
    }
    out
}

pub fn naive_forward(shape: &NetworkShape, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let (d, k) = (shape.input_dim, shape.output_dim);
    let stride = d + 1 + k;
    let mut y = vec![0.0; k];
    for m in 0..shape.width {
        let block = &theta[m * stride..(m + 1) * stride];
        let mut z = block[d];
        for i in 0..d {
            z += block[i] * x[i];
        }
        let a = if z > 0.0 { z } else { 0.0 };
        for c in 0..k {
            y[c] += block[d + 1 + c] * a;
        }
    }
    y.iter().map(|v| v / shape.width as f64).collect()
}

pub fn naive_loss(kind: LossKind, target: Target<'_>, pred: &[f64]) -> f64 {
    match (kind, target) {
        (LossKind::SquaredError, Target::Real(y)) => (y[0] - pred[0]) * (y[0] - pred[0]),
        (LossKind::CrossEntropy, Target::Class(c)) => {
            let max = pred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + pred.iter().map(|p| (p - max).exp()).sum::<f64>().ln();
            lse - pred[c]
        }
        _ => panic!("loss and target kind disagree"),
    }
}

pub fn naive_risk(shape: &NetworkShape, theta: &[f64], batch: &Batch, kind: LossKind) -> f64 {
    let mut total = 0.0;
    for s in 0..batch.len() {
        total += naive_loss(kind, batch.target(s), &naive_forward(shape, theta, batch.input(s)));
    }
    total / batch.len() as f64
}

/// Central differences of [`naive_risk`], one coordinate at a time.
pub fn finite_difference(shape: &NetworkShape, theta: &ParamVector, batch: &Batch, kind: LossKind, h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..t.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + h;
            let up = naive_risk(shape, &t, batch, kind);
            t[i] = orig - h;
            let down = naive_risk(shape, &t, batch, kind);
            t[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `min_σ (1/M) Σ_j ‖a_j − b_σ(j)‖²` over all M! permutations.
pub fn brute_force_w2_sq(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    permutations(a.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(j, &i)| sq(a.atom(j), b.atom(i))).sum::<f64>() / a.len() as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Global minimum of `½ Σ_n β_n W₂²(ν, μ_n)` over free supports: for every
/// combination of permutations (the first measure's fixed to the identity)
/// the best support is the weighted mean of the coupled atoms.
pub fn exhaustive_barycenter_objective(measures: &[EmpiricalMeasure], weights: &[f64]) -> f64 {
    let m = measures[0].len();
    let dim = measures[0].atom_dim();
    let perms = permutations(m);
    let n = measures.len();
    let mut choice = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut f = 0.0;
        for j in 0..m {
            let mut y = vec![0.0; dim];
            for q in 0..n {
                let x = measures[q].atom(perms[choice[q]][j]);
                for t in 0..dim {
                    y[t] += weights[q] * x[t];
                }
            }
            for q in 0..n {
                f += 0.5 * weights[q] * sq(&y, measures[q].atom(perms[choice[q]][j])) / m as f64;
            }
        }
        best = best.min(f);
        // odometer over measures 1..n
        let mut q = 1;
        while q < n {
            choice[q] += 1;
            if choice[q] < perms.len() {
                break;
            }
            choice[q] = 0;
            q += 1;
        }
        if q >= n {
            return best;
        }
    }
}

pub fn random_measure(rng: &mut ChaCha8Rng, atoms: usize, atom_dim: usize) -> EmpiricalMeasure {
    // atom_dim = d + 1 + C with C = 1
    let shape = NetworkShape::new(atom_dim - 2, atoms, 1).unwrap();
    EmpiricalMeasure::from_flat(&shape, uniform_vec(rng, atoms * atom_dim, -1.0, 1.0)).unwrap()
}

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{risk_and_gradient, LossKind, NetworkShape, ParamVector};

use super::adam::{AdamConfig, AdamState};
use super::cbo::{cbo_move, consensus_point, CboConfig, Ensemble};

/// Convex combination of a per-particle Adam step (weight γ) and a CBO step
/// (weight 1 − γ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridConfig {
    pub gamma: f64,
    pub cbo: CboConfig,
    pub adam: AdamConfig,
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        self.cbo.validate()?;
        self.adam.validate()
    }
}

/// `θ ← γ·adam(θ) + (1 − γ)·cbo(θ)` for every particle, where `adam(θ)` is the
/// Adam update along the particle's gradient and `cbo(θ)` the CBO move toward
/// `v` with the particle's noise for this step. γ = 1 reproduces plain Adam
/// and γ = 0 reproduces [`super::cbo_step`] exactly.
pub fn hybrid_step(
    ensemble: &mut Ensemble,
    states: &mut [AdamState],
    v: &ParamVector,
    cfg: &HybridConfig,
    grads: &[Vec<f64>],
    exec: Exec,
) -> Result<()> {
    let n = ensemble.len();
    if states.len() != n || grads.len() != n {
        return Err(Error::DimensionMismatch {
            what: "per-particle adam states / gradients",
            expected: n,
            found: states.len().min(grads.len()),
        });
    }
    let len = v.len();
    for (p, g) in grads.iter().enumerate() {
        if g.len() != len || states[p].first.len() != len || ensemble.particles[p].len() != len {
            return Err(Error::DimensionMismatch {
                what: "hybrid gradient / state length",
                expected: len,
                found: g.len(),
            });
        }
        if let Some(index) = g.iter().position(|x| !x.is_finite()) {
            log::error!("non-finite gradient for particle {p}");
            return Err(Error::NonFinite { what: "gradient", index });
        }
    }
    let (seed, step) = (ensemble.seed(), ensemble.step());
    let gamma = cfg.gamma;
    let mut work: Vec<_> = ensemble
        .particles
        .iter_mut()
        .zip(states.iter_mut())
        .zip(grads)
        .collect();
    exec.for_each_mut(&mut work, |id, ((particle, state), grad)| {
        let mut adam = particle.to_vec();
        state
            .step(&mut adam, grad, cfg.cbo.dt)
            .expect("gradient lengths and finiteness checked above");
        let mut cbo = particle.to_vec();
        cbo_move(&mut cbo, v, &cfg.cbo, seed, id, step);
        for ((t, a), c) in particle.iter_mut().zip(&adam).zip(&cbo) {
            *t = gamma * a + (1.0 - gamma) * c;
        }
    });
    ensemble.advance();
    Ok(())
}

/// One hybrid update on `batch`: a single forward/backward pass per particle
/// yields both the risks behind the consensus point and the Adam gradients.
pub fn hybrid_iteration(
    ensemble: &mut Ensemble,
    states: &mut [AdamState],
    shape: &NetworkShape,
    batch: &Batch,
    kind: LossKind,
    cfg: &HybridConfig,
    exec: Exec,
) -> Result<ParamVector> {
    let passes = exec.map(&ensemble.particles, |_, p| risk_and_gradient(shape, p, batch, kind));
    let mut grads = Vec::with_capacity(passes.len());
    for (n, pass) in passes.into_iter().enumerate() {
        let (risk, grad) = pass?;
        ensemble.risks[n] = risk;
        grads.push(grad);
    }
    let v = consensus_point(&ensemble.particles, &ensemble.risks, cfg.cbo.alpha)?;
    hybrid_step(ensemble, states, &v, cfg, &grads, exec)?;
    Ok(v)
}

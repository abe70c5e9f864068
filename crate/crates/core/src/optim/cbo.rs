use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{empirical_risk, LossKind, NetworkShape, ParamVector};
use crate::rng::{stream, Domain};

/// Consensus-based optimization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CboConfig {
    pub particles: usize,
    /// Drift rate λ.
    pub lambda: f64,
    /// Diffusion scale σ̃.
    pub sigma: f64,
    /// Inverse temperature α.
    pub alpha: f64,
    /// Time step Δt.
    pub dt: f64,
}

impl CboConfig {
    /// `2λ − σ̃²`; consensus formation needs this to be positive.
    pub fn consensus_margin(&self) -> f64 {
        2.0 * self.lambda - self.sigma * self.sigma
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::Config(format!("CBO needs at least 2 particles, got {}", self.particles)));
        }
        let positive = [("lambda", self.lambda), ("sigma", self.sigma), ("alpha", self.alpha), ("dt", self.dt)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("CBO parameter {name} must be positive and finite, got {v}")));
            }
        }
        if self.consensus_margin() <= 0.0 {
            log::warn!(
                "2λ = {} does not exceed σ̃² = {}; particles may not reach consensus",
                2.0 * self.lambda,
                self.sigma * self.sigma
            );
        }
        Ok(())
    }
}

/// Particles of a CBO run together with their noise streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<ParamVector>,
    /// Risks from the most recent evaluation, one per particle.
    pub risks: Vec<f64>,
    seed: u64,
    step: u64,
}

impl Ensemble {
    pub fn new(particles: Vec<ParamVector>, seed: u64) -> Result<Self> {
        let Some(first) = particles.first() else {
            return Err(Error::Config("ensemble needs at least one particle".into()));
        };
        let len = first.len();
        if let Some(bad) = particles.iter().find(|p| p.len() != len) {
            return Err(Error::DimensionMismatch {
                what: "particle length",
                expected: len,
                found: bad.len(),
            });
        }
        Ok(Ensemble {
            risks: vec![f64::NAN; particles.len()],
            particles,
            seed,
            step: 0,
        })
    }

    /// `count` particles with i.i.d. coordinates from `U[low, high)`.
    pub fn uniform(shape: &NetworkShape, count: usize, low: f64, high: f64, seed: u64) -> Result<Self> {
        let particles = (0..count)
            .map(|n| {
                let mut rng = stream(seed, Domain::Init, n as u64, 0);
                ParamVector::from_vec((0..shape.param_count()).map(|_| rng.random_range(low..high)).collect())
            })
            .collect();
        Ensemble::new(particles, seed)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Updates applied so far; selects the noise window of the next update.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn advance(&mut self) {
        self.step += 1;
    }

    pub fn evaluate(&mut self, shape: &NetworkShape, batch: &Batch, kind: LossKind, exec: Exec) -> Result<&[f64]> {
        let risks = exec.map(&self.particles, |_, p| empirical_risk(shape, p, batch, kind));
        self.risks = risks.into_iter().collect::<Result<_>>()?;
        Ok(&self.risks)
    }
}

/// Gibbs weights `exp(-α R_n) / Σ_m exp(-α R_m)`, computed after shifting the
/// risks by their minimum so that the best particle has weight `exp(0) = 1`
/// before normalisation.
pub fn consensus_weights(risks: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if let Some(index) = risks.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite { what: "risk", index });
    }
    let min = risks.iter().copied().fold(f64::INFINITY, f64::min);
    let mut weights: Vec<f64> = risks.iter().map(|r| (-alpha * (r - min)).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(weights)
}

pub fn consensus_point(particles: &[ParamVector], risks: &[f64], alpha: f64) -> Result<ParamVector> {
    if particles.len() != risks.len() {
        return Err(Error::DimensionMismatch {
            what: "number of risks",
            expected: particles.len(),
            found: risks.len(),
        });
    }
    let weights = consensus_weights(risks, alpha)?;
    let mut v = vec![0.0; particles[0].len()];
    for (p, w) in particles.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        for (vi, pi) in v.iter_mut().zip(p.iter()) {
            *vi += w * pi;
        }
    }
    Ok(ParamVector::from_vec(v))
}

/// `θ ← V + (θ − V)(1 − λΔt + σ̃√Δt ξ)` per coordinate, with ξ drawn from the
/// particle's noise stream for this step.
pub(crate) fn cbo_move(particle: &mut [f64], v: &[f64], cfg: &CboConfig, seed: u64, id: usize, step: u64) {
    let drift = 1.0 - cfg.lambda * cfg.dt;
    let scale = cfg.sigma * cfg.dt.sqrt();
    if scale == 0.0 {
        for (t, vi) in particle.iter_mut().zip(v) {
            *t = vi + (*t - vi) * drift;
        }
        return;
    }
    let mut rng = stream(seed, Domain::Noise, id as u64, step);
    for (t, vi) in particle.iter_mut().zip(v) {
        let xi: f64 = rng.sample(StandardNormal);
        *t = vi + (*t - vi) * (drift + scale * xi);
    }
}

/// Moves every particle toward the same consensus point `v`.
pub fn cbo_step(ensemble: &mut Ensemble, v: &ParamVector, cfg: &CboConfig, exec: Exec) -> Result<()> {
    if v.len() != ensemble.particles[0].len() {
        return Err(Error::DimensionMismatch {
            what: "consensus point length",
            expected: ensemble.particles[0].len(),
            found: v.len(),
        });
    }
    let (seed, step) = (ensemble.seed, ensemble.step);
    exec.for_each_mut(&mut ensemble.particles, |n, p| cbo_move(p, v, cfg, seed, n, step));
    ensemble.advance();
    Ok(())
}

/// Risks on `batch`, the consensus point, and one CBO update. Returns the
/// consensus point used for the update.
pub fn cbo_iteration(
    ensemble: &mut Ensemble,
    shape: &NetworkShape,
    batch: &Batch,
    kind: LossKind,
    cfg: &CboConfig,
    exec: Exec,
) -> Result<ParamVector> {
    ensemble.evaluate(shape, batch, kind, exec)?;
    let v = consensus_point(&ensemble.particles, &ensemble.risks, cfg.alpha)?;
    cbo_step(ensemble, &v, cfg, exec)?;
    Ok(v)
}

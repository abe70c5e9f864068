use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Batch;
use crate::error::Result;
use crate::exec::Exec;
use crate::nn::LossKind;
use crate::optim::{consensus_weights, CboConfig};
use crate::rng::{stream, Domain};

use super::barycenter::{barycenter_from, check_step, Barycenter, BarycenterOptions, MeasureEnsemble};

/// Moves atom `i` of every measure toward the barycenter atom it is coupled
/// to: `x ← y + (x − y)(1 − λΔt) + σ̃√Δt ξ`, with additive noise drawn from the
/// measure's stream for this step.
pub fn ot_cbo_step(ens: &mut MeasureEnsemble, bary: &Barycenter, cfg: &CboConfig, exec: Exec) -> Result<()> {
    check_step(ens, bary)?;
    let drift = 1.0 - cfg.lambda * cfg.dt;
    let scale = cfg.sigma * cfg.dt.sqrt();
    let (seed, step) = (ens.seed(), ens.step());
    let support = &bary.support;
    exec.for_each_mut(&mut ens.measures, |n, mu| {
        let target_of = bary.assignments[n].inverse();
        let mut rng = (scale != 0.0).then(|| stream(seed, Domain::Noise, n as u64, step));
        for (i, &j) in target_of.iter().enumerate() {
            let y = support.atom(j);
            for (x, yk) in mu.atom_mut(i).iter_mut().zip(y) {
                *x = yk + (*x - yk) * drift;
                if let Some(rng) = rng.as_mut() {
                    let xi: f64 = rng.sample(StandardNormal);
                    *x += scale * xi;
                }
            }
        }
    });
    ens.advance();
    Ok(())
}

/// Risks on `batch`, Gibbs weights, the barycenter (started from the
/// heaviest measure and from `previous` when given) and one OT-CBO update.
/// Returns the barycenter used for the update.
pub fn ot_cbo_iteration(
    ens: &mut MeasureEnsemble,
    batch: &Batch,
    kind: LossKind,
    cfg: &CboConfig,
    previous: Option<&Barycenter>,
    opts: &BarycenterOptions,
) -> Result<Barycenter> {
    ens.evaluate(batch, kind, opts.exec)?;
    let weights = consensus_weights(&ens.risks, cfg.alpha)?;
    ens.set_weights(weights)?;
    let heaviest = &ens.measures[ens.heaviest()];
    let mut starts = vec![heaviest];
    if let Some(prev) = previous {
        starts.push(&prev.support);
    }
    let bary = barycenter_from(ens, &starts, opts)?;
    ot_cbo_step(ens, &bary, cfg, opts.exec)?;
    Ok(bary)
}

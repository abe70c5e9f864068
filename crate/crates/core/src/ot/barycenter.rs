use crate::data::Batch;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{measure_risk, EmpiricalMeasure, LossKind, NetworkShape};
use crate::optim::Ensemble;

use super::assignment::{check_compatible, solve_assignment, sq_dist, Assignment};

/// N networks in measure form with barycenter weights β and noise streams.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureEnsemble {
    pub measures: Vec<EmpiricalMeasure>,
    /// Risks from the most recent evaluation, one per measure.
    pub risks: Vec<f64>,
    weights: Vec<f64>,
    seed: u64,
    step: u64,
}

impl MeasureEnsemble {
    /// Uniform weights `β_n = 1/N`.
    pub fn new(measures: Vec<EmpiricalMeasure>, seed: u64) -> Result<Self> {
        let Some(first) = measures.first() else {
            return Err(Error::Config("measure ensemble needs at least one measure".into()));
        };
        for m in &measures[1..] {
            check_compatible(first, m)?;
        }
        let n = measures.len();
        Ok(MeasureEnsemble {
            risks: vec![f64::NAN; n],
            weights: vec![1.0 / n as f64; n],
            measures,
            seed,
            step: 0,
        })
    }

    /// Same initial draws as [`Ensemble::uniform`].
    pub fn uniform(shape: &NetworkShape, count: usize, low: f64, high: f64, seed: u64) -> Result<Self> {
        let ens = Ensemble::uniform(shape, count, low, high, seed)?;
        let measures = ens
            .particles
            .into_iter()
            .map(|p| EmpiricalMeasure::from_flat(shape, p.into_vec()))
            .collect::<Result<_>>()?;
        MeasureEnsemble::new(measures, seed)
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sets β, rescaled to sum to one.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "number of barycenter weights",
                expected: self.len(),
                found: weights.len(),
            });
        }
        if let Some(index) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFinite {
                what: "barycenter weight",
                index,
            });
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("barycenter weights sum to zero".into()));
        }
        self.weights = weights.into_iter().map(|w| w / total).collect();
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn advance(&mut self) {
        self.step += 1;
    }

    /// Index of the largest weight, lowest index on ties.
    pub fn heaviest(&self) -> usize {
        let mut best = 0;
        for (n, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = n;
            }
        }
        best
    }

    pub fn evaluate(&mut self, batch: &Batch, kind: LossKind, exec: Exec) -> Result<&[f64]> {
        let risks = exec.map(&self.measures, |_, m| measure_risk(m, batch, kind));
        self.risks = risks.into_iter().collect::<Result<_>>()?;
        Ok(&self.risks)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycenterOptions {
    /// Relative decrease of the objective below which iteration stops.
    pub tol: f64,
    pub max_iters: usize,
    /// Escape local minima by re-descending from every single-swap
    /// perturbation of the couplings until none improves. Costs about
    /// `N·M²/2` extra descents per improvement.
    pub swap_search: bool,
    pub exec: Exec,
}

impl Default for BarycenterOptions {
    fn default() -> Self {
        BarycenterOptions {
            tol: 1e-12,
            max_iters: 50,
            swap_search: false,
            exec: Exec::SERIAL,
        }
    }
}

/// Free-support barycenter `ν = (1/M) Σ_j δ(y_j)` of a measure ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Barycenter {
    pub support: EmpiricalMeasure,
    /// Coupling from the support to each input measure, `assignments[n].perm[j]`
    /// being the atom of measure `n` matched to `y_j`.
    pub assignments: Vec<Assignment>,
    pub converged: bool,
    /// `F(ν) = ½ Σ_n β_n W₂²(ν, μ_n)` under the stored couplings.
    pub objective: f64,
    /// Objective at each solve of the couplings.
    pub history: Vec<f64>,
    pub iterations: usize,
    step: u64,
}

impl Barycenter {
    /// Ensemble step the barycenter was computed at.
    pub fn step(&self) -> u64 {
        self.step
    }
}

fn objective(ens: &MeasureEnsemble, assignments: &[Assignment]) -> f64 {
    0.5 * ens.weights.iter().zip(assignments).map(|(b, a)| b * a.cost).sum::<f64>()
}

/// `y_j = Σ_n β_n x_{n, perm_n(j)}`.
fn support_update(ens: &MeasureEnsemble, assignments: &[Assignment]) -> Vec<f64> {
    let first = &ens.measures[0];
    let dim = first.atom_dim();
    let mut y = vec![0.0; first.as_flat().len()];
    for ((mu, a), beta) in ens.measures.iter().zip(assignments).zip(&ens.weights) {
        if *beta == 0.0 {
            continue;
        }
        for (j, yj) in y.chunks_exact_mut(dim).enumerate() {
            for (t, x) in yj.iter_mut().zip(mu.atom(a.perm[j])) {
                *t += beta * x;
            }
        }
    }
    y
}

fn solve_all(ens: &MeasureEnsemble, y: &EmpiricalMeasure, exec: Exec) -> Result<Vec<Assignment>> {
    exec.map(&ens.measures, |_, mu| Assignment::optimal(y, mu))
        .into_iter()
        .collect()
}

fn with_perms(ens: &MeasureEnsemble, y: &EmpiricalMeasure, perms: impl IntoIterator<Item = Vec<usize>>) -> Vec<Assignment> {
    perms
        .into_iter()
        .zip(&ens.measures)
        .map(|(perm, mu)| Assignment::with_perm(y, mu, perm))
        .collect()
}

/// One Gauss-Seidel sweep over the couplings. With the other couplings held
/// fixed, the best coupling of measure `n` maximizes `Σ_j r_j · x_{n,σ(j)}`
/// where `r_j` is the support atom without measure `n`'s contribution, which
/// is again an assignment problem. Returns the improved support and
/// couplings when some measure's coupling lowered the objective.
fn polish(
    ens: &MeasureEnsemble,
    y: &EmpiricalMeasure,
    assignments: &[Assignment],
    tol: f64,
) -> Result<Option<(EmpiricalMeasure, Vec<Assignment>)>> {
    let shape = *y.shape();
    let m = y.len();
    let mut y = y.clone();
    let mut current = assignments.to_vec();
    let mut f = objective(ens, &current);
    let mut improved = false;
    for (n, (mu, beta)) in ens.measures.iter().zip(&ens.weights).enumerate() {
        if *beta == 0.0 || *beta == 1.0 {
            continue;
        }
        let mut cost = Vec::with_capacity(m * m);
        for j in 0..m {
            let own = mu.atom(current[n].perm[j]);
            let r: Vec<f64> = y.atom(j).iter().zip(own).map(|(yj, x)| yj - beta * x).collect();
            for i in 0..m {
                cost.push(-r.iter().zip(mu.atom(i)).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        let perm = solve_assignment(&cost, m);
        if perm == current[n].perm {
            continue;
        }
        let mut perms: Vec<Vec<usize>> = current.iter().map(|a| a.perm.clone()).collect();
        perms[n] = perm;
        let candidate = perms.iter().cloned().map(|perm| Assignment { perm, cost: 0.0 }).collect::<Vec<_>>();
        let y_new = EmpiricalMeasure::from_flat(&shape, support_update(ens, &candidate))?;
        let recosted = with_perms(ens, &y_new, perms);
        let f_new = objective(ens, &recosted);
        if f_new < f - tol * f {
            y = y_new;
            current = recosted;
            f = f_new;
            improved = true;
        }
    }
    Ok(improved.then_some((y, current)))
}

fn iterate(ens: &MeasureEnsemble, init: &EmpiricalMeasure, opts: &BarycenterOptions) -> Result<Barycenter> {
    let shape = *ens.measures[0].shape();
    let mut y = init.clone();
    let mut previous: Option<Vec<Assignment>> = None;
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let current = solve_all(ens, &y, opts.exec)?;
        let f = objective(ens, &current);
        history.push(f);
        if let Some(prev) = previous.take() {
            let f_prev = history[history.len() - 2];
            let same = prev.iter().zip(&current).all(|(a, b)| a.perm == b.perm);
            if same || f_prev - f <= opts.tol * f_prev {
                // y is the mean under `prev`, so those couplings make it stationary
                let assignments = if same {
                    current
                } else {
                    with_perms(ens, &y, prev.into_iter().map(|a| a.perm))
                };
                if let Some((y_new, polished)) = polish(ens, &y, &assignments, opts.tol)? {
                    history.push(objective(ens, &polished));
                    y = y_new;
                    previous = Some(polished);
                    continue;
                }
                return Ok(Barycenter {
                    objective: objective(ens, &assignments),
                    support: y,
                    assignments,
                    converged: true,
                    history,
                    iterations,
                    step: ens.step,
                });
            }
        }
        y = EmpiricalMeasure::from_flat(&shape, support_update(ens, &current))?;
        previous = Some(current);
    }
    let assignments = solve_all(ens, &y, opts.exec)?;
    let f = objective(ens, &assignments);
    history.push(f);
    Ok(Barycenter {
        objective: f,
        support: y,
        assignments,
        converged: false,
        history,
        iterations,
        step: ens.step,
    })
}

/// Barycenter by alternating optimal couplings and support averaging,
/// started from the support of the heaviest measure. Fixed points of the
/// alternation are refined by exact per-measure coupling updates before
/// being accepted.
pub fn barycenter(ens: &MeasureEnsemble, opts: &BarycenterOptions) -> Result<Barycenter> {
    barycenter_from(ens, &[&ens.measures[ens.heaviest()]], opts)
}

/// Runs the fixed-point iteration from every starting support and keeps the
/// result with the lowest objective (earliest start on ties).
pub fn barycenter_from(
    ens: &MeasureEnsemble,
    starts: &[&EmpiricalMeasure],
    opts: &BarycenterOptions,
) -> Result<Barycenter> {
    if opts.max_iters == 0 {
        return Err(Error::Config("barycenter needs max_iters ≥ 1".into()));
    }
    if starts.is_empty() {
        return Err(Error::Config("barycenter needs a starting support".into()));
    }
    let mut best: Option<Barycenter> = None;
    for start in starts {
        check_compatible(&ens.measures[0], start)?;
        let candidate = iterate(ens, start, opts)?;
        if best.as_ref().is_none_or(|b| candidate.objective < b.objective) {
            best = Some(candidate);
        }
    }
    let mut best = best.expect("at least one start");
    if opts.swap_search {
        while let Some(better) = swap_descent(ens, &best, opts)? {
            best = better;
        }
    }
    Ok(best)
}

/// First improvement over the neighbours of `bary` obtained by exchanging
/// two entries of one coupling and descending again from there.
fn swap_descent(ens: &MeasureEnsemble, bary: &Barycenter, opts: &BarycenterOptions) -> Result<Option<Barycenter>> {
    let shape = *bary.support.shape();
    let m = bary.support.len();
    for n in 0..ens.len() {
        for a in 0..m {
            for b in a + 1..m {
                let mut kicked = bary.assignments.clone();
                kicked[n].perm.swap(a, b);
                let start = EmpiricalMeasure::from_flat(&shape, support_update(ens, &kicked))?;
                let candidate = iterate(ens, &start, opts)?;
                if candidate.objective < bary.objective - opts.tol * bary.objective {
                    return Ok(Some(candidate));
                }
            }
        }
    }
    Ok(None)
}

fn check_current(ens: &MeasureEnsemble, bary: &Barycenter) -> Result<()> {
    if bary.assignments.len() != ens.len() {
        return Err(Error::StaleBarycenter(format!(
            "{} couplings for {} measures",
            bary.assignments.len(),
            ens.len()
        )));
    }
    if bary.step != ens.step {
        return Err(Error::StaleBarycenter(format!(
            "computed at step {}, ensemble is at step {}",
            bary.step, ens.step
        )));
    }
    check_compatible(&ens.measures[0], &bary.support)?;
    if let Some(n) = bary.assignments.iter().position(|a| a.perm.len() != bary.support.len()) {
        return Err(Error::StaleBarycenter(format!("coupling {n} has the wrong length")));
    }
    Ok(())
}

/// `max_j ‖Σ_n β_n x_{n, perm_n(j)} − y_j‖` under the stored couplings.
pub fn first_order_residual(ens: &MeasureEnsemble, bary: &Barycenter) -> Result<f64> {
    check_current(ens, bary)?;
    let y = support_update(ens, &bary.assignments);
    let dim = bary.support.atom_dim();
    Ok(y.chunks_exact(dim)
        .enumerate()
        .map(|(j, yj)| sq_dist(yj, bary.support.atom(j)).sqrt())
        .fold(0.0, f64::max))
}

/// `V = (1/2N) Σ_n W₂²(μ_n, μ̄)` with freshly solved couplings.
pub fn ensemble_variance(ens: &MeasureEnsemble, bary: &Barycenter) -> Result<f64> {
    let mut total = 0.0;
    for mu in &ens.measures {
        total += Assignment::optimal(mu, &bary.support)?.cost;
    }
    Ok(total / (2.0 * ens.len() as f64))
}

pub(crate) fn check_step(ens: &MeasureEnsemble, bary: &Barycenter) -> Result<()> {
    check_current(ens, bary)
}

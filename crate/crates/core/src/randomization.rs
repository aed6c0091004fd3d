//! Gaussian randomization over relaxed covariances and per-group power
//! control for fixed beam directions.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{self, ConicProgram, LinearExpr, Relation, Sign, SolveStatus};
use crate::error::{Error, Result};
use crate::fair::{extract_rank1, initial_upper_bound, solve_relaxed, Nominal, PowerBudget, SolverSettings};
use crate::gp::{minimize_linear, BarrierSettings, LseConstraint};
use crate::linalg::{inner_gain, psd_factor, CVec};
use crate::model::{complex_normal, min_weighted_sinr, CovarianceSet, PrecoderSet, ProblemInstance};

/// Gains below this are treated as zero by the geometric-program route.
const MIN_GAIN: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub candidates: Vec<PrecoderSet>,
    pub source: CovarianceSet,
    pub seed: u64,
}

/// Draws `n` candidate direction sets `ŵ_k = L_k z` with `L_k L_k† = X_k`.
/// Draws come from one sequential stream, so a shorter run is a prefix of a
/// longer one with the same seed.
pub fn draw_candidates(x: &CovarianceSet, n: usize, seed: u64) -> CandidateSet {
    let factors: Vec<_> = x.matrices().iter().map(psd_factor).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nt = x.nt();
    let candidates = (0..n)
        .map(|_| {
            let w = factors
                .iter()
                .map(|l| {
                    let z = CVec::from_fn(nt, |_, _| complex_normal(&mut rng));
                    l * z
                })
                .collect();
            PrecoderSet::new(w).expect("factors share a dimension")
        })
        .collect();
    CandidateSet { candidates, source: x.clone(), seed }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerControlStatus {
    Feasible,
    /// The directions cannot meet any positive level.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerControlResult {
    /// Group power scales `p_k`; `√p_k ŵ_k` are the precoders.
    pub powers: Vec<f64>,
    /// Achieved fairness level of the scaled precoders.
    pub t: f64,
    pub status: PowerControlStatus,
}

impl PowerControlResult {
    fn infeasible(groups: usize) -> Self {
        Self { powers: vec![0.0; groups], t: 0.0, status: PowerControlStatus::Infeasible }
    }

    pub fn is_feasible(&self) -> bool {
        self.status == PowerControlStatus::Feasible
    }
}

/// `a[i][k] = |ŵ_k† h_i|²`
fn gain_table(dirs: &PrecoderSet, inst: &ProblemInstance) -> Vec<Vec<f64>> {
    (0..inst.nu())
        .map(|i| {
            let h = inst.channels().user(i);
            dirs.vectors().iter().map(|w| inner_gain(w, &h)).collect()
        })
        .collect()
}

/// `load[n][k]`: share of budget row `n` taken by unit power on group `k`.
fn load_table(dirs: &PrecoderSet, budget: &PowerBudget) -> Vec<Vec<f64>> {
    match budget {
        PowerBudget::PerAntenna(p) => p
            .iter()
            .enumerate()
            .map(|(n, pn)| dirs.vectors().iter().map(|w| w[n].norm_sqr() / pn).collect())
            .collect(),
        PowerBudget::SumPower(p) => vec![dirs.vectors().iter().map(|w| w.norm_squared() / p).collect()],
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub load: f64,
    pub powers: Vec<f64>,
}

/// Minimum budget load that lets the directions reach `targets`. `Ok(None)`
/// when no powers reach them.
pub fn power_control_lp(
    dirs: &PrecoderSet,
    inst: &ProblemInstance,
    targets: &[f64],
    budget: &PowerBudget,
    settings: &SolverSettings,
) -> Result<Option<LpSolution>> {
    if targets.len() != inst.nu() || targets.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("SINR targets must be positive, one per user"));
    }
    let gains = gain_table(dirs, inst);
    let loads = load_table(dirs, budget);
    let g = dirs.groups();
    let mut prog = ConicProgram::new();
    let p: Vec<_> = (0..g).map(|k| prog.add_scalar_var(Sign::NonNegative, format!("p{}", k + 1))).collect();
    let r = prog.add_scalar_var(Sign::Free, "r");
    prog.minimize(LinearExpr::new().scalar(r, 1.0));
    for (i, row) in gains.iter().enumerate() {
        let k = inst.partition().group_of(i);
        let scale = 1.0 / (targets[i] * inst.noise()[i]);
        let mut expr = LinearExpr::new().scalar(p[k], row[k] * scale);
        for l in (0..g).filter(|&l| l != k) {
            expr.add_scalar(p[l], -targets[i] * row[l] * scale);
        }
        prog.add_constraint(expr, Relation::GreaterEq, 1.0, format!("sinr{}", i + 1));
    }
    for (n, row) in loads.iter().enumerate() {
        let mut expr = LinearExpr::new().scalar(r, -1.0);
        for k in 0..g {
            expr.add_scalar(p[k], row[k]);
        }
        prog.add_constraint(expr, Relation::LessEq, 0.0, format!("load{}", n + 1));
    }
    let sol = conic::solve(&prog, &settings.conic)?;
    if sol.status == SolveStatus::Infeasible {
        return Ok(None);
    }
    let sol = sol.require_optimal()?;
    Ok(Some(LpSolution { load: sol.scalar(r), powers: p.iter().map(|&v| sol.scalar(v).max(0.0)).collect() }))
}

/// Bisection on the fairness level over `[0, upper]` driven by a
/// feasibility oracle that returns `(load, powers)` at a level. Returns the
/// powers of the last level whose load stayed below one, or `None`.
pub fn bisect_levels<F>(upper: f64, settings: &SolverSettings, mut oracle: F) -> Result<Option<(f64, Vec<f64>)>>
where
    F: FnMut(f64) -> Result<Option<(f64, Vec<f64>)>>,
{
    let mut lo = 0.0;
    let mut hi = upper;
    let mut best = None;
    let mut steps = 0;
    while hi - lo > settings.bisection_tol * hi && steps < settings.max_bisection_iter {
        if best.is_none() && hi < 1e-12 * upper {
            break;
        }
        steps += 1;
        let t = 0.5 * (lo + hi);
        let out = match oracle(t) {
            Ok(out) => out,
            Err(Error::Solver { .. }) => None,
            Err(e) => return Err(e),
        };
        match out {
            Some((load, powers)) if load < 1.0 => {
                lo = t;
                best = Some((load, powers));
            }
            _ => hi = t,
        }
    }
    Ok(best)
}

/// Scales powers so the busiest budget row is exactly full and reports the
/// achieved level.
fn finish(dirs: &PrecoderSet, inst: &ProblemInstance, budget: &PowerBudget, powers: Vec<f64>) -> Result<PowerControlResult> {
    let w = dirs.with_group_powers(&powers);
    let load = budget.precoder_load(&w);
    if !(load > 0.0 && load.is_finite()) {
        return Ok(PowerControlResult::infeasible(dirs.groups()));
    }
    let powers: Vec<f64> = powers.iter().map(|p| p / load).collect();
    let t = min_weighted_sinr(&dirs.with_group_powers(&powers), inst)?;
    Ok(PowerControlResult { powers, t, status: PowerControlStatus::Feasible })
}

/// Max-min fair power control for fixed directions: bisection over the level
/// with [`power_control_lp`] as the oracle, searching `[0, upper]`.
pub fn power_control_bisect(
    dirs: &PrecoderSet,
    inst: &ProblemInstance,
    budget: &PowerBudget,
    upper: f64,
    settings: &SolverSettings,
) -> Result<PowerControlResult> {
    let best = bisect_levels(upper, settings, |t| {
        let targets: Vec<f64> = inst.targets().iter().map(|g| t * g).collect();
        Ok(power_control_lp(dirs, inst, &targets, budget, settings)?.map(|s| (s.load, s.powers)))
    })?;
    match best {
        Some((_, powers)) => finish(dirs, inst, budget, powers),
        None => Ok(PowerControlResult::infeasible(dirs.groups())),
    }
}

/// The same max-min power control as a geometric program in `log p_k` and
/// `log t`. Falls back to bisection when a user sees zero gain from its own
/// group's direction.
pub fn power_control_gp(
    dirs: &PrecoderSet,
    inst: &ProblemInstance,
    budget: &PowerBudget,
    settings: &SolverSettings,
) -> Result<PowerControlResult> {
    let gains = gain_table(dirs, inst);
    let g = dirs.groups();
    let own_gain = |i: usize| gains[i][inst.partition().group_of(i)];
    if (0..inst.nu()).any(|i| own_gain(i) <= MIN_GAIN) {
        let upper = initial_upper_bound(inst, budget);
        return power_control_bisect(dirs, inst, budget, upper, settings);
    }
    let loads = load_table(dirs, budget);

    // variables y = (log p_1, …, log p_G, log t)
    let dim = g + 1;
    let mut cons = Vec::new();
    for (i, row) in gains.iter().enumerate() {
        let k = inst.partition().group_of(i);
        let gamma = inst.targets()[i];
        let mut a_rows = Vec::new();
        let mut b = Vec::new();
        for l in (0..g).filter(|&l| l != k && row[l] > 0.0) {
            let mut a = vec![0.0; dim];
            a[l] += 1.0;
            a[k] -= 1.0;
            a[g] = 1.0;
            a_rows.push(a);
            b.push((gamma * row[l] / row[k]).ln());
        }
        let mut a = vec![0.0; dim];
        a[k] = -1.0;
        a[g] = 1.0;
        a_rows.push(a);
        b.push((gamma * inst.noise()[i] / row[k]).ln());
        cons.push(lse(a_rows, b)?);
    }
    for row in &loads {
        let terms: Vec<usize> = (0..g).filter(|&k| row[k] > 0.0).collect();
        if terms.is_empty() {
            continue;
        }
        let a_rows = terms
            .iter()
            .map(|&k| {
                let mut a = vec![0.0; dim];
                a[k] = 1.0;
                a
            })
            .collect();
        cons.push(lse(a_rows, terms.iter().map(|&k| row[k].ln()).collect())?);
    }

    // strictly feasible start: half of the budget, half of the resulting level
    let worst = loads.iter().map(|row| row.iter().sum::<f64>()).fold(0.0, f64::max);
    let p0 = 0.5 / worst;
    let start = dirs.with_group_powers(&vec![p0; g]);
    let t0 = min_weighted_sinr(&start, inst)?;
    if !(t0 > 0.0 && t0.is_finite()) {
        return Ok(PowerControlResult::infeasible(g));
    }
    let mut y0 = DVector::from_element(dim, p0.ln());
    y0[g] = (0.5 * t0).ln();
    let mut c = DVector::zeros(dim);
    c[g] = -1.0;

    let barrier = BarrierSettings { gap: 1e-3 * settings.bisection_tol, ..Default::default() };
    let sol = minimize_linear(&c, &cons, y0, &barrier)?;
    let powers = (0..g).map(|k| sol.y[k].exp()).collect();
    finish(dirs, inst, budget, powers)
}

fn lse(rows: Vec<Vec<f64>>, b: Vec<f64>) -> Result<LseConstraint> {
    let ncols = rows[0].len();
    let a = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    LseConstraint::new(a, DVector::from_vec(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolvePath {
    /// Relaxation was tight; precoders are the principal eigenvectors.
    RankOne,
    Randomization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Level certified by the relaxed covariances.
    pub relaxed_t: f64,
    /// Bisection upper bracket of the relaxed problem.
    pub upper_bound: f64,
    pub achieved_t: f64,
    /// `achieved_t / relaxed_t`.
    pub accuracy: f64,
    pub path: SolvePath,
    pub rank_ratios: Vec<f64>,
    pub candidates_drawn: usize,
    pub candidates_feasible: usize,
    pub best_candidate: Option<usize>,
    /// Seed of the stream the returned candidate came from.
    pub seed: u64,
    pub retried: bool,
    /// `max_n P_n(w)/P_n` of the returned precoders.
    pub max_load: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub solver: SolverSettings,
    pub n_rand: usize,
    /// Evaluate candidates on the rayon pool.
    pub parallel: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self { solver: SolverSettings::default(), n_rand: 100, parallel: true }
    }
}

/// Seed of the single retry after a run where every candidate failed.
pub fn retry_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Picks the highest level, keeping the earliest candidate on ties.
pub fn select_best(results: &[PowerControlResult]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, r) in results.iter().enumerate() {
        if !r.is_feasible() {
            continue;
        }
        if best.is_none_or(|b| r.t > results[b].t) {
            best = Some(j);
        }
    }
    best
}

/// Relaxation, then rank-one extraction or randomization with power control,
/// under per-antenna limits.
pub fn solve_fair_pipeline(
    inst: &ProblemInstance,
    n_rand: usize,
    seed: u64,
    settings: &SolverSettings,
) -> Result<(PrecoderSet, SolveReport)> {
    let ps = PipelineSettings { solver: *settings, n_rand, parallel: true };
    solve_pipeline_with(inst, &PowerBudget::per_antenna(inst), seed, &ps)
}

pub fn solve_pipeline_with(
    inst: &ProblemInstance,
    budget: &PowerBudget,
    seed: u64,
    settings: &PipelineSettings,
) -> Result<(PrecoderSet, SolveReport)> {
    let fr = solve_relaxed(inst, budget, &Nominal, &settings.solver)?;
    let relaxed = RelaxedOutcome {
        t_star: fr.t_star,
        upper_bound: fr.upper_bound,
        covariances: fr.covariances,
        rank_ratios: fr.rank_ratios,
    };
    finish_pipeline(budget, seed, settings, relaxed, |dirs| {
        power_control_bisect(dirs, inst, budget, fr.upper_bound, &settings.solver)
    }, |w| min_weighted_sinr(w, inst))
}

/// Relaxed solution handed to the rounding stage.
pub(crate) struct RelaxedOutcome {
    pub t_star: f64,
    pub upper_bound: f64,
    pub covariances: CovarianceSet,
    pub rank_ratios: Vec<f64>,
}

/// Rounding stage shared by the nominal and robust pipelines. `control`
/// power-controls one candidate; `evaluate` scores rank-one output.
pub(crate) fn finish_pipeline<F, E>(
    budget: &PowerBudget,
    seed: u64,
    settings: &PipelineSettings,
    relaxed: RelaxedOutcome,
    control: F,
    evaluate: E,
) -> Result<(PrecoderSet, SolveReport)>
where
    F: Fn(&PrecoderSet) -> Result<PowerControlResult> + Sync,
    E: Fn(&PrecoderSet) -> Result<f64>,
{
    let RelaxedOutcome { t_star, upper_bound, covariances, rank_ratios } = relaxed;
    let mut report = SolveReport {
        relaxed_t: t_star,
        upper_bound,
        achieved_t: 0.0,
        accuracy: 0.0,
        path: SolvePath::RankOne,
        rank_ratios,
        candidates_drawn: 0,
        candidates_feasible: 0,
        best_candidate: None,
        seed,
        retried: false,
        max_load: 0.0,
    };

    if let Some(w) = extract_rank1(&covariances, settings.solver.rank_tol) {
        let load = budget.precoder_load(&w);
        let w = w.with_group_powers(&vec![1.0 / load; w.groups()]);
        let t = evaluate(&w)?;
        report.achieved_t = t;
        report.accuracy = t / t_star;
        report.max_load = budget.precoder_load(&w);
        return Ok((w, report));
    }

    report.path = SolvePath::Randomization;
    for (attempt, s) in [seed, retry_seed(seed)].into_iter().enumerate() {
        let cands = draw_candidates(&covariances, settings.n_rand, s);
        let results: Vec<PowerControlResult> = if settings.parallel {
            cands.candidates.par_iter().map(&control).collect::<Result<_>>()?
        } else {
            cands.candidates.iter().map(&control).collect::<Result<_>>()?
        };
        report.candidates_drawn += results.len();
        report.candidates_feasible += results.iter().filter(|r| r.is_feasible()).count();
        if let Some(j) = select_best(&results) {
            let w = cands.candidates[j].with_group_powers(&results[j].powers);
            report.best_candidate = Some(j);
            report.seed = s;
            report.retried = attempt > 0;
            report.achieved_t = results[j].t;
            report.accuracy = results[j].t / t_star;
            report.max_load = budget.precoder_load(&w);
            return Ok((w, report));
        }
    }
    Err(Error::Infeasible(format!(
        "all {} randomized candidates failed power control (seeds {seed} and {})",
        report.candidates_drawn,
        retry_seed(seed)
    )))
}

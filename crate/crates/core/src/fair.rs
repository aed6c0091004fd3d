//! Relaxed per-antenna power minimization and the bisection that turns it
//! into the relaxed weighted max-min fair solution.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::{self, ConicProgram, LinearExpr, PsdVar, Relation, Sign, Tolerances};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, CMat, C64};
use crate::model::{per_antenna_power, CovarianceSet, PrecoderSet, ProblemInstance};

/// The transmit power constraint the precoders must respect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PowerBudget {
    /// One limit per antenna (Watts).
    PerAntenna(Vec<f64>),
    /// A single limit on the total radiated power.
    SumPower(f64),
}

impl PowerBudget {
    pub fn per_antenna(inst: &ProblemInstance) -> Self {
        PowerBudget::PerAntenna(inst.pac().to_vec())
    }

    pub fn total(&self) -> f64 {
        match self {
            PowerBudget::PerAntenna(p) => p.iter().sum(),
            PowerBudget::SumPower(p) => *p,
        }
    }

    /// Worst ratio of used power to allowed power; `≤ 1` means feasible.
    pub fn load(&self, antenna_power: &[f64]) -> f64 {
        match self {
            PowerBudget::PerAntenna(p) => antenna_power
                .iter()
                .zip(p)
                .map(|(a, b)| a / b)
                .fold(0.0, f64::max),
            PowerBudget::SumPower(p) => antenna_power.iter().sum::<f64>() / p,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            PowerBudget::PerAntenna(p) => PowerBudget::PerAntenna(p.iter().map(|x| x * c).collect()),
            PowerBudget::SumPower(p) => PowerBudget::SumPower(p * c),
        }
    }

    pub fn precoder_load(&self, w: &PrecoderSet) -> f64 {
        self.load(&per_antenna_power(w))
    }

    fn validate(&self, nt: usize) -> Result<()> {
        match self {
            PowerBudget::PerAntenna(p) if p.len() != nt => Err(Error::invalid(format!(
                "per-antenna budget has {} entries for {nt} antennas",
                p.len()
            ))),
            PowerBudget::PerAntenna(p) if p.iter().any(|x| !(*x > 0.0 && x.is_finite())) => {
                Err(Error::invalid("per-antenna budgets must be positive"))
            }
            PowerBudget::SumPower(p) if !(*p > 0.0 && p.is_finite()) => {
                Err(Error::invalid("sum power budget must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Adds `load(X) ≤ r` rows to a program.
    pub(crate) fn add_rows(&self, prog: &mut ConicProgram, x: &[PsdVar], r: conic::ScalarVar, nt: usize) {
        match self {
            PowerBudget::PerAntenna(p) => {
                for (n, &pn) in p.iter().enumerate() {
                    let mut e = CMat::zeros(nt, nt);
                    e[(n, n)] = C64::new(1.0 / pn, 0.0);
                    let mut expr = LinearExpr::new().scalar(r, -1.0);
                    for &xk in x {
                        expr.add_trace(xk, e.clone());
                    }
                    prog.add_constraint(expr, Relation::LessEq, 0.0, format!("pac{}", n + 1));
                }
            }
            PowerBudget::SumPower(p) => {
                let e = CMat::identity(nt, nt).scale(1.0 / p);
                let mut expr = LinearExpr::new().scalar(r, -1.0);
                for &xk in x {
                    expr.add_trace(xk, e.clone());
                }
                prog.add_constraint(expr, Relation::LessEq, 0.0, "spc");
            }
        }
    }
}

/// How the SINR requirements enter the relaxed program.
pub trait SinrModel: Sync {
    /// Adds rows forcing every user `i` to reach `targets[i]` under the covariances `x`.
    fn add_sinr_constraints(
        &self,
        prog: &mut ConicProgram,
        x: &[PsdVar],
        inst: &ProblemInstance,
        targets: &[f64],
    ) -> Result<()>;

    /// Fairness level certified by `cov`, given that it met the targets `floor · γ`.
    fn certified_level(&self, cov: &CovarianceSet, inst: &ProblemInstance, floor: f64) -> f64;
}

/// Perfectly known channels.
#[derive(Debug, Clone, Copy, Default)]
pub struct Nominal;

impl SinrModel for Nominal {
    fn add_sinr_constraints(
        &self,
        prog: &mut ConicProgram,
        x: &[PsdVar],
        inst: &ProblemInstance,
        targets: &[f64],
    ) -> Result<()> {
        // Tr(Q_i X_k)/(τ σ²) − Σ_{l≠k} Tr(Q_i X_l)/σ² ≥ 1
        for i in 0..inst.nu() {
            let q = inst.channels().outer(i);
            let k = inst.partition().group_of(i);
            let noise = inst.noise()[i];
            let mut expr = LinearExpr::new().trace(x[k], q.scale(1.0 / (targets[i] * noise)));
            for (l, &xl) in x.iter().enumerate() {
                if l != k {
                    expr.add_trace(xl, q.scale(-1.0 / noise));
                }
            }
            prog.add_constraint(expr, Relation::GreaterEq, 1.0, format!("sinr{}", i + 1));
        }
        Ok(())
    }

    fn certified_level(&self, cov: &CovarianceSet, inst: &ProblemInstance, _floor: f64) -> f64 {
        cov.min_weighted_sinr(inst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Bisection stops once `U − L ≤ bisection_tol · U`.
    pub bisection_tol: f64,
    pub max_bisection_iter: usize,
    /// A covariance counts as rank one when `λ₂/λ₁ ≤ rank_tol`.
    pub rank_tol: f64,
    pub conic: Tolerances,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { bisection_tol: 1e-3, max_bisection_iter: 200, rank_tol: 1e-6, conic: Tolerances::default() }
    }
}

#[derive(Debug, Clone)]
pub struct QrSolution {
    pub r_star: f64,
    pub covariances: CovarianceSet,
    pub solver_iterations: u32,
}

/// Relaxed min-max load problem for fixed SINR targets. `Ok(None)` when the
/// targets cannot be met at any power.
pub fn solve_qr_with(
    inst: &ProblemInstance,
    targets: &[f64],
    budget: &PowerBudget,
    model: &dyn SinrModel,
    tol: &Tolerances,
) -> Result<Option<QrSolution>> {
    if targets.len() != inst.nu() || targets.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("SINR targets must be positive, one per user"));
    }
    budget.validate(inst.nt())?;
    let nt = inst.nt();
    // Solve for Y = X/s with noise and budget divided by s so that Y is O(1).
    let s = budget.total() / nt as f64;
    let inst = &inst.with_noise(inst.noise().iter().map(|n| n / s).collect())?;
    let budget = &budget.scaled(1.0 / s);
    let mut prog = ConicProgram::new();
    let x: Vec<PsdVar> = (0..inst.groups()).map(|k| prog.add_psd_var(nt, format!("X{}", k + 1))).collect();
    let r = prog.add_scalar_var(Sign::Free, "r");
    prog.minimize(LinearExpr::new().scalar(r, 1.0));
    model.add_sinr_constraints(&mut prog, &x, inst, targets)?;
    budget.add_rows(&mut prog, &x, r, nt);

    let sol = conic::solve(&prog, tol)?;
    match sol.status {
        conic::SolveStatus::Infeasible => Ok(None),
        _ => {
            let sol = sol.require_optimal()?;
            let mats = x.iter().map(|&v| crate::linalg::hermitian_part(sol.psd(v))).collect();
            let covariances = CovarianceSet::new(mats, 1e-6)?.scaled(s);
            Ok(Some(QrSolution { r_star: sol.scalar(r), covariances, solver_iterations: sol.iterations }))
        }
    }
}

/// Relaxed per-antenna power minimization at SINR targets `targets`.
pub fn solve_qr(inst: &ProblemInstance, targets: &[f64], tol: &Tolerances) -> Result<Option<QrSolution>> {
    solve_qr_with(inst, targets, &PowerBudget::per_antenna(inst), &Nominal, tol)
}

/// Outcome of the relaxed fairness bisection.
#[derive(Debug, Clone)]
pub struct FairnessResult {
    /// Fairness level certified by `covariances`.
    pub t_star: f64,
    /// Bisection upper bracket; the relaxed optimum lies in `[t_star, upper_bound]`.
    pub upper_bound: f64,
    /// Optimal load at the last feasible bisection point.
    pub load_at_floor: f64,
    /// Covariances from the last feasible point, scaled up until the budget is tight.
    pub covariances: CovarianceSet,
    /// `λ₂/λ₁` per group.
    pub rank_ratios: Vec<f64>,
    /// `(t, r*(t))` for every bisection step; infeasible steps record `∞`.
    pub bisection_trace: Vec<(f64, f64)>,
    pub solver_iterations: u64,
    /// Bisection steps where the conic solver stalled; they count as infeasible.
    pub numerical_failures: usize,
}

impl FairnessResult {
    pub fn is_rank_one(&self, tol: f64) -> bool {
        self.rank_ratios.iter().all(|&r| r <= tol)
    }

    pub fn report(&self) -> FairnessReport {
        FairnessReport {
            t_star: self.t_star,
            upper_bound: self.upper_bound,
            load_at_floor: self.load_at_floor,
            rank_ratios: self.rank_ratios.clone(),
            bisection_steps: self.bisection_trace.len(),
            bisection_trace: self
                .bisection_trace
                .iter()
                .map(|&(t, r)| [t, if r.is_finite() { r } else { -1.0 }])
                .collect(),
            solver_iterations: self.solver_iterations,
            numerical_failures: self.numerical_failures,
        }
    }
}

/// Serializable summary of a [`FairnessResult`]. Infeasible bisection steps
/// are written with `r = -1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub t_star: f64,
    pub upper_bound: f64,
    pub load_at_floor: f64,
    pub rank_ratios: Vec<f64>,
    pub bisection_steps: usize,
    pub bisection_trace: Vec<[f64; 2]>,
    pub solver_iterations: u64,
    pub numerical_failures: usize,
}

/// `max_i P_tot ||h_i||² / (σ_i² γ_i)`: no user can exceed the SINR it
/// would see with the whole budget beamformed at it and no interference.
pub fn initial_upper_bound(inst: &ProblemInstance, budget: &PowerBudget) -> f64 {
    (0..inst.nu())
        .map(|i| budget.total() * inst.channels().gain(i) / (inst.noise()[i] * inst.targets()[i]))
        .fold(0.0, f64::max)
}

/// Bisection on `t ↦ Q_r(t·g)` with a generic budget and SINR model.
pub fn solve_relaxed(
    inst: &ProblemInstance,
    budget: &PowerBudget,
    model: &dyn SinrModel,
    settings: &SolverSettings,
) -> Result<FairnessResult> {
    budget.validate(inst.nt())?;
    let u0 = initial_upper_bound(inst, budget);
    if !(u0 > 0.0 && u0.is_finite()) {
        return Err(Error::Infeasible("every user has a zero channel".into()));
    }
    let mut lo = 0.0;
    let mut hi = u0;
    let mut best: Option<QrSolution> = None;
    let mut trace = Vec::new();
    let mut solver_iterations = 0u64;
    let mut numerical_failures = 0;

    while hi - lo > settings.bisection_tol * hi {
        if trace.len() >= settings.max_bisection_iter {
            break;
        }
        if best.is_none() && hi < 1e-12 * u0 {
            return Err(Error::Infeasible(format!(
                "no positive fairness level is attainable (bracket shrank to {hi:e})"
            )));
        }
        let t = 0.5 * (lo + hi);
        let targets: Vec<f64> = inst.targets().iter().map(|g| t * g).collect();
        let sol = match solve_qr_with(inst, &targets, budget, model, &settings.conic) {
            Ok(sol) => sol,
            Err(Error::Solver { status, detail }) => {
                // only certified points may raise the floor
                log::warn!("relaxed program at t = {t:e} not solved ({status:?}: {detail}); treating as infeasible");
                numerical_failures += 1;
                None
            }
            Err(e) => return Err(e),
        };
        let r = sol.as_ref().map_or(f64::INFINITY, |s| s.r_star);
        trace.push((t, r));
        if let Some(s) = &sol {
            solver_iterations += u64::from(s.solver_iterations);
        }
        if r < 1.0 {
            lo = t;
            best = sol;
        } else {
            hi = t;
        }
    }

    let best = best.ok_or_else(|| {
        Error::Infeasible(format!("bisection found no feasible level within {} steps", trace.len()))
    })?;
    let load = best.r_star;
    let covariances = if load > 0.0 { best.covariances.scaled(1.0 / load) } else { best.covariances };
    let t_star = model.certified_level(&covariances, inst, lo);
    let rank_ratios = covariances.matrices().iter().map(rank_ratio).collect();
    Ok(FairnessResult {
        t_star,
        // solver round-off can put the certified level marginally above the bracket
        upper_bound: hi.max(t_star),
        load_at_floor: load,
        covariances,
        rank_ratios,
        bisection_trace: trace,
        solver_iterations,
        numerical_failures,
    })
}

/// Relaxed weighted max-min fairness under per-antenna limits.
pub fn solve_fr(inst: &ProblemInstance, settings: &SolverSettings) -> Result<FairnessResult> {
    solve_relaxed(inst, &PowerBudget::per_antenna(inst), &Nominal, settings)
}

/// Same bisection with a single total-power limit in place of the per-antenna rows.
pub fn solve_spc(inst: &ProblemInstance, p_tot: f64, settings: &SolverSettings) -> Result<FairnessResult> {
    solve_relaxed(inst, &PowerBudget::SumPower(p_tot), &Nominal, settings)
}

/// `λ₂/λ₁` of a Hermitian PSD matrix (zero for rank ≤ 1).
pub fn rank_ratio(x: &CMat) -> f64 {
    let (eig, _) = hermitian_eigen(x);
    if eig.len() < 2 || eig[0] <= 0.0 {
        return 0.0;
    }
    eig[1].max(0.0) / eig[0]
}

/// Principal-eigenvector precoders when every covariance is rank one within `tol`.
pub fn extract_rank1(x: &CovarianceSet, tol: f64) -> Option<PrecoderSet> {
    let mut w = Vec::with_capacity(x.groups());
    for m in x.matrices() {
        if rank_ratio(m) > tol {
            return None;
        }
        let (eig, vecs) = hermitian_eigen(m);
        w.push(vecs.column(0).scale(eig[0].max(0.0).sqrt()));
    }
    PrecoderSet::new(w).ok()
}

/// Scales antenna row `n` by `min(1, √(P_n / P_n(w)))`.
pub fn rescale_to_pac(w: &PrecoderSet, pac: &[f64]) -> PrecoderSet {
    let used = per_antenna_power(w);
    let factors: Vec<f64> = used
        .iter()
        .zip(pac)
        .map(|(&u, &p)| if u > p { (p / u).sqrt() } else { 1.0 })
        .collect();
    w.with_row_scaling(&factors)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimTrial {
    pub t: f64,
    pub r: f64,
    pub t_back: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimReport {
    pub t_star: f64,
    /// `Q_r(t*·g, p)`, which should equal one.
    pub r_at_t_star: f64,
    pub first_identity_passed: bool,
    pub trials: Vec<ClaimTrial>,
    pub tolerance: f64,
}

impl ClaimReport {
    pub fn all_passed(&self) -> bool {
        self.first_identity_passed && self.trials.iter().all(|t| t.passed)
    }
}

/// Checks `Q_r(F_r(g,p)·g, p) = 1` and `F_r(g, Q_r(t·g,p)·p) = t` for `n_trials`
/// random `t ∈ (0, t*]`. Failures are reported, not returned as errors.
pub fn verify_claims(
    inst: &ProblemInstance,
    n_trials: usize,
    seed: u64,
    tolerance: f64,
    settings: &SolverSettings,
) -> Result<ClaimReport> {
    let fr = solve_fr(inst, settings)?;
    let t_star = fr.t_star;
    let scaled = |t: f64| -> Vec<f64> { inst.targets().iter().map(|g| t * g).collect() };
    let r_at = solve_qr(inst, &scaled(t_star), &settings.conic)?.map_or(f64::INFINITY, |s| s.r_star);
    let first_identity_passed = (r_at - 1.0).abs() <= tolerance;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let t = t_star * rng.random_range(0.05..=1.0);
        let r = solve_qr(inst, &scaled(t), &settings.conic)?.map_or(f64::INFINITY, |s| s.r_star);
        let (t_back, rel_error) = if r.is_finite() && r > 0.0 {
            let pac: Vec<f64> = inst.pac().iter().map(|p| p * r).collect();
            let tb = solve_fr(&inst.with_pac(pac)?, settings)?.t_star;
            (tb, (tb - t).abs() / t)
        } else {
            (f64::NAN, f64::INFINITY)
        };
        trials.push(ClaimTrial { t, r, t_back, rel_error, passed: rel_error <= tolerance });
    }
    Ok(ClaimReport { t_star, r_at_t_star: r_at, first_identity_passed, trials, tolerance })
}

/// Precoders built from covariance principal directions, used where a
/// deterministic non-random candidate is needed.
pub fn principal_directions(x: &CovarianceSet) -> PrecoderSet {
    let w = x
        .matrices()
        .iter()
        .map(|m| {
            let (eig, vecs) = hermitian_eigen(m);
            let v: DVector<C64> = vecs.column(0).into_owned();
            v.scale(eig[0].max(0.0).sqrt())
        })
        .collect();
    PrecoderSet::new(w).expect("covariances share a dimension")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_rayleigh, min_weighted_sinr, real_matrix, GroupPartition};
    use approx::assert_relative_eq;

    fn orthogonal(p: f64) -> ProblemInstance {
        let ch = real_matrix(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        ProblemInstance::new(ch, GroupPartition::unicast(2), vec![1.0; 2], vec![p; 2], vec![1.0; 2]).unwrap()
    }

    #[test]
    fn qr_scalar_identity() {
        let ch = real_matrix(1, 1, &[1.0]).unwrap();
        let inst = ProblemInstance::new(ch, GroupPartition::unicast(1), vec![1.0], vec![1.0], vec![1.0]).unwrap();
        let s = solve_qr(&inst, &[2.0], &Tolerances::default()).unwrap().unwrap();
        assert_relative_eq!(s.r_star, 2.0, max_relative = 1e-6);
        assert_relative_eq!(s.covariances.matrix(0)[(0, 0)].re, 2.0, max_relative = 1e-5);
    }

    #[test]
    fn qr_decoupled_antennas() {
        let inst = orthogonal(1.0);
        let s = solve_qr(&inst, &[1.0, 1.0], &Tolerances::default()).unwrap().unwrap();
        assert_relative_eq!(s.r_star, 1.0, max_relative = 1e-6);
        assert!((s.covariances.matrix(0)[(0, 0)].re - 1.0).abs() < 1e-5);
        assert!(s.covariances.matrix(0)[(1, 1)].re.abs() < 1e-5);
        assert!((s.covariances.matrix(1)[(1, 1)].re - 1.0).abs() < 1e-5);
    }

    #[test]
    fn qr_rejects_bad_targets() {
        let inst = orthogonal(1.0);
        assert!(solve_qr(&inst, &[1.0, 0.0], &Tolerances::default()).is_err());
        assert!(solve_qr(&inst, &[1.0], &Tolerances::default()).is_err());
    }

    #[test]
    fn qr_interference_limited_targets_are_infeasible() {
        // identical channels in different groups cannot both exceed SINR 1
        let ch = real_matrix(2, 2, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        let inst = ProblemInstance::equal_split(ch, GroupPartition::unicast(2), 2.0).unwrap();
        let out = solve_qr(&inst, &[2.0, 2.0], &Tolerances::default()).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn fr_scalar() {
        let ch = real_matrix(1, 1, &[1.0]).unwrap();
        let inst = ProblemInstance::new(ch, GroupPartition::unicast(1), vec![1.0], vec![4.0], vec![1.0]).unwrap();
        let fr = solve_fr(&inst, &SolverSettings::default()).unwrap();
        assert_relative_eq!(fr.t_star, 4.0, max_relative = 1e-6);
        assert!(fr.upper_bound >= fr.t_star - 1e-9);
    }

    #[test]
    fn fr_decoupled() {
        let fr = solve_fr(&orthogonal(4.0), &SolverSettings::default()).unwrap();
        assert_relative_eq!(fr.t_star, 4.0, max_relative = 1e-6);
        let w = extract_rank1(&fr.covariances, 1e-6).unwrap();
        let inst = orthogonal(4.0);
        assert_relative_eq!(min_weighted_sinr(&w, &inst).unwrap(), 4.0, max_relative = 1e-5);
    }

    #[test]
    fn spc_single_user_is_mrt() {
        let ch = gen_rayleigh(3, 1, 4);
        let gain = ch.gain(0);
        let inst = ProblemInstance::equal_split(ch, GroupPartition::unicast(1), 3.0).unwrap();
        let fr = solve_spc(&inst, 3.0, &SolverSettings::default()).unwrap();
        assert_relative_eq!(fr.t_star, 3.0 * gain, max_relative = 1e-5);
    }

    #[test]
    fn spc_dominates_pac() {
        for seed in 0..3 {
            let ch = gen_rayleigh(4, 4, seed);
            let inst = ProblemInstance::equal_split(ch, GroupPartition::contiguous(4, 2).unwrap(), 4.0).unwrap();
            let s = SolverSettings::default();
            let pac = solve_fr(&inst, &s).unwrap();
            let spc = solve_spc(&inst, 4.0, &s).unwrap();
            assert!(spc.upper_bound >= pac.t_star * (1.0 - 1e-2), "{} < {}", spc.upper_bound, pac.t_star);
        }
    }

    #[test]
    fn rank1_extraction() {
        let d = |a: f64, b: f64| {
            CMat::from_diagonal(&DVector::from_vec(vec![C64::new(a, 0.0), C64::new(b, 0.0)]))
        };
        let x = CovarianceSet::new(vec![d(2.0, 0.0)], 1e-8).unwrap();
        let w = extract_rank1(&x, 1e-6).unwrap();
        assert_relative_eq!(w.vector(0)[0].norm(), 2f64.sqrt(), max_relative = 1e-12);
        assert!(w.vector(0)[1].norm() < 1e-12);
        let x = CovarianceSet::new(vec![d(1.0, 1.0)], 1e-8).unwrap();
        assert!(extract_rank1(&x, 1e-6).is_none());
    }

    #[test]
    fn rescale_examples() {
        let w = PrecoderSet::new(vec![DVector::from_vec(vec![C64::new(0.5, 0.0), C64::new(0.0, 0.5)])]).unwrap();
        assert_eq!(rescale_to_pac(&w, &[1.0, 1.0]), w);
        let w = PrecoderSet::new(vec![DVector::from_vec(vec![C64::new(2.0, 0.0), C64::new(0.0, 0.5)])]).unwrap();
        let r = rescale_to_pac(&w, &[1.0, 1.0]);
        assert_relative_eq!(r.vector(0)[0].re, 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.vector(0)[1].im, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn fairness_report_serializes() {
        let fr = solve_fr(&orthogonal(1.0), &SolverSettings::default()).unwrap();
        let json = serde_json::to_string(&fr.report()).unwrap();
        let back: FairnessReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.bisection_steps, fr.bisection_trace.len());
    }
}

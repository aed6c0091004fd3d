//! Worst-case fairness when each user's channel is only known to lie in an
//! ellipsoid around a nominal estimate.
//!
//! The error is written `e = S^{½} u` with `‖u‖ ≤ 1`, `S = C⁻¹`. For
//! `B = [S^{½}, h̄]` and `M = X_k − τ Σ_{l≠k} X_l`, the requirement
//! `(h̄ + e)† M (h̄ + e) ≥ τ σ²` over the whole ellipsoid holds exactly when
//! some `λ ≥ 0` makes
//!
//! ```text
//! B† M B + diag(λ I, −λ) − τ σ² e_last e_lastᵀ ⪰ 0.
//! ```

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conic::{self, ConicProgram, Congruence, LinearExpr, Lmi, PsdVar, Relation, ScalarVar, Sign, SolveStatus};
use crate::error::{Error, Result};
use crate::fair::{solve_relaxed, PowerBudget, SinrModel, SolverSettings};
use crate::linalg::{hermitian_eigen, is_hermitian, outer, CMat, CVec, C64};
use crate::model::{complex_normal, sinr_with_channel, CovarianceSet, PrecoderSet, ProblemInstance};
use crate::randomization::{bisect_levels, finish_pipeline, PipelineSettings, PowerControlResult, PowerControlStatus, RelaxedOutcome, SolveReport};

/// Shape of the channel-error region of every user.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorModel {
    /// `‖e‖ ≤ σ_ε`
    Sphere(f64),
    /// `e† C_i e ≤ 1`, one positive definite `C_i` per user.
    Ellipsoid(Vec<CMat>),
}

#[derive(Debug, Clone)]
pub struct RobustSpec {
    model: ErrorModel,
    /// `S_i^{½}` per user; `None` for the sphere, which is `σ_ε I`.
    shapes: Option<Vec<CMat>>,
}

impl RobustSpec {
    pub fn sphere(radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("error radius must be nonnegative, got {radius}")));
        }
        Ok(Self { model: ErrorModel::Sphere(radius), shapes: None })
    }

    pub fn ellipsoid(c: Vec<CMat>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(c.len());
        for (i, ci) in c.iter().enumerate() {
            if !ci.is_square() || !is_hermitian(ci, 1e-9 * (1.0 + ci.norm())) {
                return Err(Error::invalid(format!("error shape of user {} is not Hermitian", i + 1)));
            }
            let (eig, v) = hermitian_eigen(ci);
            if eig.last().is_none_or(|&l| l <= 0.0) {
                return Err(Error::invalid(format!("error shape of user {} is not positive definite", i + 1)));
            }
            // C^{-1/2}
            let d = CMat::from_diagonal(&DVector::from_iterator(eig.len(), eig.iter().map(|l| C64::new(l.powf(-0.5), 0.0))));
            shapes.push(&v * d * v.adjoint());
        }
        Ok(Self { model: ErrorModel::Ellipsoid(c), shapes: Some(shapes) })
    }

    pub fn model(&self) -> &ErrorModel {
        &self.model
    }

    /// `S_i^{½}`, mapping the unit ball onto user `i`'s error region.
    pub fn shape(&self, i: usize, nt: usize) -> CMat {
        match (&self.model, &self.shapes) {
            (ErrorModel::Sphere(r), _) => CMat::identity(nt, nt).scale(*r),
            (_, Some(s)) => s[i].clone(),
            _ => unreachable!("ellipsoid shapes are computed on construction"),
        }
    }

    fn check(&self, inst: &ProblemInstance) -> Result<()> {
        if let Some(s) = &self.shapes {
            if s.len() != inst.nu() || s.iter().any(|m| m.nrows() != inst.nt()) {
                return Err(Error::invalid(format!(
                    "error model needs {} shapes of size {}",
                    inst.nu(),
                    inst.nt()
                )));
            }
        }
        Ok(())
    }

    /// `B = [S^{½}, h̄]` for user `i`.
    fn lift(&self, inst: &ProblemInstance, i: usize) -> CMat {
        let nt = inst.nt();
        let s = self.shape(i, nt);
        let h = inst.channels().user(i);
        let mut b = CMat::zeros(nt, nt + 1);
        b.view_mut((0, 0), (nt, nt)).copy_from(&s);
        b.set_column(nt, &h);
        b
    }
}

/// `diag(1, …, 1, −1)`
fn multiplier_pattern(dim: usize) -> CMat {
    let mut d = CMat::identity(dim, dim);
    d[(dim - 1, dim - 1)] = C64::new(-1.0, 0.0);
    d
}

fn noise_block(dim: usize, value: f64) -> CMat {
    let mut e = CMat::zeros(dim, dim);
    e[(dim - 1, dim - 1)] = C64::new(value, 0.0);
    e
}

/// Robust SINR rows for the relaxed program at targets `tau`: one LMI and
/// one multiplier per user.
pub fn build_robust_constraint(
    prog: &mut ConicProgram,
    x: &[PsdVar],
    inst: &ProblemInstance,
    spec: &RobustSpec,
    user: usize,
    tau: f64,
) -> Result<()> {
    spec.check(inst)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("robust SINR target must be positive"));
    }
    let dim = inst.nt() + 1;
    let b = spec.lift(inst, user);
    let k = inst.partition().group_of(user);
    let lambda = prog.add_scalar_var(Sign::NonNegative, format!("lambda{}", user + 1));
    let mut lmi = Lmi::new(dim, format!("robust{}", user + 1));
    lmi.constant = noise_block(dim, -tau * inst.noise()[user]);
    for (l, &xl) in x.iter().enumerate() {
        let coef = if l == k { 1.0 } else { -tau };
        lmi.congruence.push(Congruence { var: xl, coef, map: b.clone() });
    }
    lmi.scalar.push((lambda, multiplier_pattern(dim)));
    prog.add_lmi(lmi);
    Ok(())
}

/// Concave in `λ`; the user's robust requirement holds iff its maximum over
/// `λ ∈ [0, a_last]` is nonnegative.
fn best_margin(a: &CMat) -> f64 {
    let dim = a.nrows();
    let d = multiplier_pattern(dim);
    let min_eig = |lam: f64| -> f64 {
        let m = a + d.scale(lam);
        *hermitian_eigen(&m).0.last().expect("nonempty")
    };
    let hi = a[(dim - 1, dim - 1)].re;
    if hi < 0.0 {
        return hi;
    }
    // golden-section search for the maximum of a concave function
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut up) = (0.0, hi);
    let mut c = up - phi * (up - lo);
    let mut e = lo + phi * (up - lo);
    let (mut fc, mut fe) = (min_eig(c), min_eig(e));
    for _ in 0..90 {
        if fc < fe {
            lo = c;
            c = e;
            fc = fe;
            e = lo + phi * (up - lo);
            fe = min_eig(e);
        } else {
            up = e;
            e = c;
            fe = fc;
            c = up - phi * (up - lo);
            fc = min_eig(c);
        }
        if fc >= 0.0 || fe >= 0.0 {
            break;
        }
    }
    [min_eig(0.0), min_eig(hi), fc, fe].into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Largest `τ` the user is guaranteed over its error region, for a signal
/// covariance `xk` and summed interference covariance `xi`.
fn user_worst_case_sinr(b: &CMat, xk: &CMat, xi: &CMat, noise: f64) -> f64 {
    let dim = b.ncols();
    let sig = b.adjoint() * xk * b;
    let intf = b.adjoint() * xi * b;
    let a_at = |tau: f64| -> CMat { &sig - intf.scale(tau) - noise_block(dim, tau * noise) };
    // nominal SINR bounds the worst case from above
    let h = b.column(dim - 1).into_owned();
    let nominal = crate::linalg::re_trace_product(&outer(&h), xk)
        / (crate::linalg::re_trace_product(&outer(&h), xi) + noise);
    if !(nominal > 0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, nominal);
    if best_margin(&a_at(hi)) >= 0.0 {
        return hi;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if best_margin(&a_at(mid)) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    lo
}

/// Per-user worst-case SINR of relaxed covariances.
pub fn worst_case_sinr_relaxed(x: &CovarianceSet, inst: &ProblemInstance, spec: &RobustSpec) -> Result<Vec<f64>> {
    spec.check(inst)?;
    Ok((0..inst.nu())
        .map(|i| {
            let k = inst.partition().group_of(i);
            let mut xi = CMat::zeros(inst.nt(), inst.nt());
            for (l, m) in x.matrices().iter().enumerate() {
                if l != k {
                    xi += m;
                }
            }
            user_worst_case_sinr(&spec.lift(inst, i), x.matrix(k), &xi, inst.noise()[i])
        })
        .collect())
}

/// Per-user worst-case SINR of fixed precoders, certified by the S-lemma.
pub fn worst_case_sinr(w: &PrecoderSet, inst: &ProblemInstance, spec: &RobustSpec) -> Result<Vec<f64>> {
    worst_case_sinr_relaxed(&w.covariances(), inst, spec)
}

/// `min_i worst-case SINR_i / γ_i`
pub fn certified_worst_case_t(w: &PrecoderSet, inst: &ProblemInstance, spec: &RobustSpec) -> Result<f64> {
    Ok(worst_case_sinr(w, inst, spec)?
        .iter()
        .zip(inst.targets())
        .map(|(s, g)| s / g)
        .fold(f64::INFINITY, f64::min))
}

/// Minimum SINR per user over sampled channel errors: 80% of the samples on
/// the region's boundary, the rest uniform inside it.
pub fn sampled_worstcase_sinr(
    w: &PrecoderSet,
    inst: &ProblemInstance,
    spec: &RobustSpec,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    spec.check(inst)?;
    if n_samples == 0 {
        return Err(Error::invalid("need at least one error sample"));
    }
    let nt = inst.nt();
    let boundary = (n_samples * 4).div_ceil(5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(inst.nu());
    for i in 0..inst.nu() {
        let s = spec.shape(i, nt);
        let h = inst.channels().user(i);
        let k = inst.partition().group_of(i);
        let mut worst = f64::INFINITY;
        for j in 0..n_samples {
            let z = CVec::from_fn(nt, |_, _| complex_normal(&mut rng));
            let mut u = z.unscale(z.norm().max(f64::MIN_POSITIVE));
            if j >= boundary {
                // radius law of the uniform distribution in a 2·Nt real-dimensional ball
                let r: f64 = rng.random::<f64>().powf(1.0 / (2 * nt) as f64);
                u = u.scale(r);
            }
            let e = &s * u;
            worst = worst.min(sinr_with_channel(w, &(&h + e), k, inst.noise()[i]));
        }
        out.push(worst);
    }
    Ok(out)
}

/// Robust SINR rows used by the relaxed bisection.
impl SinrModel for RobustSpec {
    fn add_sinr_constraints(
        &self,
        prog: &mut ConicProgram,
        x: &[PsdVar],
        inst: &ProblemInstance,
        targets: &[f64],
    ) -> Result<()> {
        for (i, &tau) in targets.iter().enumerate() {
            build_robust_constraint(prog, x, inst, self, i, tau)?;
        }
        Ok(())
    }

    fn certified_level(&self, cov: &CovarianceSet, inst: &ProblemInstance, _floor: f64) -> f64 {
        worst_case_sinr_relaxed(cov, inst, self)
            .map(|s| s.iter().zip(inst.targets()).map(|(s, g)| s / g).fold(f64::INFINITY, f64::min))
            .unwrap_or(0.0)
    }
}

/// Minimum budget load at which the directions meet `targets` for every
/// channel in the error regions. `Ok(None)` when no powers do.
pub fn robust_power_control_sdp(
    dirs: &PrecoderSet,
    inst: &ProblemInstance,
    spec: &RobustSpec,
    targets: &[f64],
    budget: &PowerBudget,
    settings: &SolverSettings,
) -> Result<Option<(f64, Vec<f64>)>> {
    spec.check(inst)?;
    let g = dirs.groups();
    let nt = inst.nt();
    let dim = nt + 1;
    let mut prog = ConicProgram::new();
    let p: Vec<ScalarVar> = (0..g).map(|k| prog.add_scalar_var(Sign::NonNegative, format!("p{}", k + 1))).collect();
    let r = prog.add_scalar_var(Sign::Free, "r");
    prog.minimize(LinearExpr::new().scalar(r, 1.0));
    let lifted: Vec<CMat> = dirs.vectors().iter().map(outer).collect();
    for (i, &tau) in targets.iter().enumerate() {
        let b = spec.lift(inst, i);
        let k = inst.partition().group_of(i);
        let lambda = prog.add_scalar_var(Sign::NonNegative, format!("lambda{}", i + 1));
        let mut lmi = Lmi::new(dim, format!("robust{}", i + 1));
        lmi.constant = noise_block(dim, -tau * inst.noise()[i]);
        for l in 0..g {
            let coef = if l == k { 1.0 } else { -tau };
            lmi.scalar.push((p[l], (b.adjoint() * &lifted[l] * &b).scale(coef)));
        }
        lmi.scalar.push((lambda, multiplier_pattern(dim)));
        prog.add_lmi(lmi);
    }
    let rows: Vec<Vec<f64>> = match budget {
        PowerBudget::PerAntenna(pn) => pn
            .iter()
            .enumerate()
            .map(|(n, pn)| dirs.vectors().iter().map(|w| w[n].norm_sqr() / pn).collect())
            .collect(),
        PowerBudget::SumPower(pt) => vec![dirs.vectors().iter().map(|w| w.norm_squared() / pt).collect()],
    };
    for (n, row) in rows.iter().enumerate() {
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
    Ok(Some((sol.scalar(r), p.iter().map(|&v| sol.scalar(v).max(0.0)).collect())))
}

/// Max-min robust power control for fixed directions, bisecting over
/// `[0, upper]`. The reported level is the exact worst case of the output.
pub fn robust_power_control(
    dirs: &PrecoderSet,
    inst: &ProblemInstance,
    spec: &RobustSpec,
    budget: &PowerBudget,
    upper: f64,
    settings: &SolverSettings,
) -> Result<PowerControlResult> {
    let best = bisect_levels(upper, settings, |t| {
        let targets: Vec<f64> = inst.targets().iter().map(|g| t * g).collect();
        robust_power_control_sdp(dirs, inst, spec, &targets, budget, settings)
    })?;
    let infeasible = PowerControlResult { powers: vec![0.0; dirs.groups()], t: 0.0, status: PowerControlStatus::Infeasible };
    let Some((_, powers)) = best else {
        return Ok(infeasible);
    };
    let load = budget.precoder_load(&dirs.with_group_powers(&powers));
    if !(load > 0.0 && load.is_finite()) {
        return Ok(infeasible);
    }
    let powers: Vec<f64> = powers.iter().map(|p| p / load).collect();
    let t = certified_worst_case_t(&dirs.with_group_powers(&powers), inst, spec)?;
    Ok(PowerControlResult { powers, t, status: PowerControlStatus::Feasible })
}

/// Robust counterpart of the nominal pipeline under per-antenna limits.
pub fn solve_robust_fair(
    inst: &ProblemInstance,
    spec: &RobustSpec,
    n_rand: usize,
    seed: u64,
    settings: &SolverSettings,
) -> Result<(PrecoderSet, SolveReport)> {
    let ps = PipelineSettings { solver: *settings, n_rand, parallel: true };
    solve_robust_with(inst, spec, &PowerBudget::per_antenna(inst), seed, &ps)
}

pub fn solve_robust_with(
    inst: &ProblemInstance,
    spec: &RobustSpec,
    budget: &PowerBudget,
    seed: u64,
    settings: &PipelineSettings,
) -> Result<(PrecoderSet, SolveReport)> {
    spec.check(inst)?;
    let fr = solve_relaxed(inst, budget, spec, &settings.solver).map_err(|e| match e {
        Error::Infeasible(msg) => Error::Infeasible(format!("no positive worst-case level: {msg}")),
        other => other,
    })?;
    let upper = fr.upper_bound;
    let relaxed = RelaxedOutcome {
        t_star: fr.t_star,
        upper_bound: fr.upper_bound,
        covariances: fr.covariances,
        rank_ratios: fr.rank_ratios,
    };
    finish_pipeline(
        budget,
        seed,
        settings,
        relaxed,
        |dirs| robust_power_control(dirs, inst, spec, budget, upper, &settings.solver),
        |w| certified_worst_case_t(w, inst, spec),
    )
}

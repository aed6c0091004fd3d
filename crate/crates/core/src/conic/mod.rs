//! Linear conic programs over Hermitian PSD matrices and real scalars.
//!
//! Programs are written in the complex domain: every coefficient is a
//! Hermitian matrix acting through `Re Tr(A X)`, and linear matrix
//! inequalities are affine in the variables. The backend sees only the real
//! symmetric embedding of each block, with coefficient matrices halved so the
//! trace identity `Tr(embed(A) embed(X)) = 2 Re Tr(AX)` never leaks out.

mod clarabel_backend;
pub mod embed;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, is_hermitian, re_trace_product, CMat};

pub use clarabel_backend::ClarabelBackend;
pub use embed::{hermitian_embed, hermitian_extract};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PsdVar(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScalarVar(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Free,
    NonNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    LessEq,
    GreaterEq,
    Equal,
}

/// `Σ Re Tr(A_j X_j) + Σ c_j x_j`
#[derive(Debug, Clone, Default)]
pub struct LinearExpr {
    pub(crate) trace: Vec<(PsdVar, CMat)>,
    pub(crate) scalar: Vec<(ScalarVar, f64)>,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trace(mut self, var: PsdVar, coef: CMat) -> Self {
        self.trace.push((var, coef));
        self
    }

    pub fn scalar(mut self, var: ScalarVar, coef: f64) -> Self {
        self.scalar.push((var, coef));
        self
    }

    pub fn add_trace(&mut self, var: PsdVar, coef: CMat) {
        self.trace.push((var, coef));
    }

    pub fn add_scalar(&mut self, var: ScalarVar, coef: f64) {
        self.scalar.push((var, coef));
    }

    fn evaluate(&self, psd: &[CMat], scalars: &[f64]) -> f64 {
        let t: f64 = self.trace.iter().map(|(v, a)| re_trace_product(a, &psd[v.0])).sum();
        let s: f64 = self.scalar.iter().map(|(v, c)| c * scalars[v.0]).sum();
        t + s
    }
}

#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub expr: LinearExpr,
    pub relation: Relation,
    pub rhs: f64,
    pub label: String,
}

/// `coef · B† X B`, mapping an `n x n` variable to a `dim x dim` block.
#[derive(Debug, Clone)]
pub struct Congruence {
    pub var: PsdVar,
    pub coef: f64,
    pub map: CMat,
}

/// `F0 + Σ coef_j B_j† X_j B_j + Σ x_j F_j ⪰ 0`
#[derive(Debug, Clone)]
pub struct Lmi {
    pub dim: usize,
    pub constant: CMat,
    pub congruence: Vec<Congruence>,
    pub scalar: Vec<(ScalarVar, CMat)>,
    pub label: String,
}

impl Lmi {
    pub fn new(dim: usize, label: impl Into<String>) -> Self {
        Self {
            dim,
            constant: CMat::zeros(dim, dim),
            congruence: Vec::new(),
            scalar: Vec::new(),
            label: label.into(),
        }
    }

    pub fn evaluate(&self, psd: &[CMat], scalars: &[f64]) -> CMat {
        let mut acc = self.constant.clone();
        for c in &self.congruence {
            acc += (c.map.adjoint() * &psd[c.var.0] * &c.map).scale(c.coef);
        }
        for (v, f) in &self.scalar {
            acc += f.scale(scalars[v.0]);
        }
        acc
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PsdDecl {
    pub dim: usize,
    pub label: String,
}

#[derive(Debug, Clone)]
pub(crate) struct ScalarDecl {
    pub sign: Sign,
    pub label: String,
}

/// A minimization problem with Hermitian PSD and scalar variables.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub(crate) psd: Vec<PsdDecl>,
    pub(crate) scalars: Vec<ScalarDecl>,
    pub(crate) objective: LinearExpr,
    pub(crate) constraints: Vec<LinearConstraint>,
    pub(crate) lmis: Vec<Lmi>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Hermitian `dim x dim` variable constrained to the PSD cone.
    pub fn add_psd_var(&mut self, dim: usize, label: impl Into<String>) -> PsdVar {
        self.psd.push(PsdDecl { dim, label: label.into() });
        PsdVar(self.psd.len() - 1)
    }

    pub fn add_scalar_var(&mut self, sign: Sign, label: impl Into<String>) -> ScalarVar {
        self.scalars.push(ScalarDecl { sign, label: label.into() });
        ScalarVar(self.scalars.len() - 1)
    }

    pub fn minimize(&mut self, objective: LinearExpr) {
        self.objective = objective;
    }

    pub fn add_constraint(&mut self, expr: LinearExpr, relation: Relation, rhs: f64, label: impl Into<String>) {
        self.constraints.push(LinearConstraint { expr, relation, rhs, label: label.into() });
    }

    pub fn add_lmi(&mut self, lmi: Lmi) {
        self.lmis.push(lmi);
    }

    pub fn psd_dims(&self) -> Vec<usize> {
        self.psd.iter().map(|d| d.dim).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.scalars.len()
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn lmis(&self) -> &[Lmi] {
        &self.lmis
    }

    /// Checks that every term references a declared variable with a
    /// Hermitian coefficient of matching size.
    pub fn validate(&self) -> Result<()> {
        let check_expr = |expr: &LinearExpr, what: &str| -> Result<()> {
            for (v, a) in &expr.trace {
                let decl = self
                    .psd
                    .get(v.0)
                    .ok_or_else(|| Error::invalid(format!("{what}: undeclared PSD variable {}", v.0)))?;
                if a.nrows() != decl.dim || a.ncols() != decl.dim {
                    return Err(Error::invalid(format!("{what}: coefficient size does not match `{}`", decl.label)));
                }
                if !is_hermitian(a, embed::HERMITIAN_TOL) {
                    return Err(Error::invalid(format!("{what}: coefficient for `{}` is not Hermitian", decl.label)));
                }
            }
            for (v, c) in &expr.scalar {
                if v.0 >= self.scalars.len() {
                    return Err(Error::invalid(format!("{what}: undeclared scalar variable {}", v.0)));
                }
                if !c.is_finite() {
                    return Err(Error::invalid(format!("{what}: non-finite coefficient")));
                }
            }
            Ok(())
        };
        check_expr(&self.objective, "objective")?;
        for c in &self.constraints {
            check_expr(&c.expr, &c.label)?;
            if !c.rhs.is_finite() {
                return Err(Error::invalid(format!("{}: non-finite right-hand side", c.label)));
            }
        }
        for l in &self.lmis {
            let herm = |m: &CMat| m.nrows() == l.dim && m.ncols() == l.dim && is_hermitian(m, embed::HERMITIAN_TOL);
            if !herm(&l.constant) {
                return Err(Error::invalid(format!("{}: constant block is not a {}x{} Hermitian matrix", l.label, l.dim, l.dim)));
            }
            for c in &l.congruence {
                let decl = self
                    .psd
                    .get(c.var.0)
                    .ok_or_else(|| Error::invalid(format!("{}: undeclared PSD variable {}", l.label, c.var.0)))?;
                if c.map.nrows() != decl.dim || c.map.ncols() != l.dim || !c.coef.is_finite() {
                    return Err(Error::invalid(format!("{}: congruence map has wrong shape", l.label)));
                }
            }
            for (v, f) in &l.scalar {
                if v.0 >= self.scalars.len() {
                    return Err(Error::invalid(format!("{}: undeclared scalar variable {}", l.label, v.0)));
                }
                if !herm(f) {
                    return Err(Error::invalid(format!("{}: scalar coefficient is not Hermitian", l.label)));
                }
            }
        }
        Ok(())
    }

    /// Sparse text dump, one nonzero per line:
    ///
    /// ```text
    /// psd <var> <dim> <label>
    /// scalar <var> <free|nonneg> <label>
    /// obj psd <var> <i> <j> <re> <im>        (upper triangle)
    /// obj scalar <var> <coef>
    /// con <c> <le|ge|eq> <rhs> <label>
    /// coef <c> psd <var> <i> <j> <re> <im>
    /// coef <c> scalar <var> <coef>
    /// lmi <m> <dim> <label>
    /// lmi_const <m> <i> <j> <re> <im>
    /// lmi_cong <m> <var> <coef> <i> <j> <re> <im>   (entries of B)
    /// lmi_scalar <m> <var> <i> <j> <re> <im>
    /// ```
    pub fn dump(&self) -> String {
        let mut out = String::from("# conic program\n");
        let herm_lines = |out: &mut String, prefix: &str, m: &CMat| {
            for j in 0..m.ncols() {
                for i in 0..=j.min(m.nrows().saturating_sub(1)) {
                    let z = m[(i, j)];
                    if z.re != 0.0 || z.im != 0.0 {
                        let _ = writeln!(out, "{prefix} {i} {j} {:e} {:e}", z.re, z.im);
                    }
                }
            }
        };
        for (k, d) in self.psd.iter().enumerate() {
            let _ = writeln!(out, "psd {k} {} {}", d.dim, d.label);
        }
        for (k, d) in self.scalars.iter().enumerate() {
            let sign = match d.sign {
                Sign::Free => "free",
                Sign::NonNegative => "nonneg",
            };
            let _ = writeln!(out, "scalar {k} {sign} {}", d.label);
        }
        for (v, a) in &self.objective.trace {
            herm_lines(&mut out, &format!("obj psd {}", v.0), a);
        }
        for (v, c) in &self.objective.scalar {
            let _ = writeln!(out, "obj scalar {} {c:e}", v.0);
        }
        for (ci, c) in self.constraints.iter().enumerate() {
            let rel = match c.relation {
                Relation::LessEq => "le",
                Relation::GreaterEq => "ge",
                Relation::Equal => "eq",
            };
            let _ = writeln!(out, "con {ci} {rel} {:e} {}", c.rhs, c.label);
            for (v, a) in &c.expr.trace {
                herm_lines(&mut out, &format!("coef {ci} psd {}", v.0), a);
            }
            for (v, x) in &c.expr.scalar {
                let _ = writeln!(out, "coef {ci} scalar {} {x:e}", v.0);
            }
        }
        for (mi, l) in self.lmis.iter().enumerate() {
            let _ = writeln!(out, "lmi {mi} {} {}", l.dim, l.label);
            herm_lines(&mut out, &format!("lmi_const {mi}"), &l.constant);
            for c in &l.congruence {
                for i in 0..c.map.nrows() {
                    for j in 0..c.map.ncols() {
                        let z = c.map[(i, j)];
                        if z.re != 0.0 || z.im != 0.0 {
                            let _ = writeln!(out, "lmi_cong {mi} {} {:e} {i} {j} {:e} {:e}", c.var.0, c.coef, z.re, z.im);
                        }
                    }
                }
            }
            for (v, f) in &l.scalar {
                herm_lines(&mut out, &format!("lmi_scalar {mi} {}", v.0), f);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Allowed constraint violation, relative to `1 + |rhs|`.
    pub feas: f64,
    /// Allowed negative eigenvalue, relative to `max(1, λ_max)`.
    pub psd: f64,
    /// Relative duality gap.
    pub gap: f64,
    pub max_iter: u32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { feas: 1e-7, psd: 1e-8, gap: 1e-8, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub psd_values: Vec<CMat>,
    pub scalar_values: Vec<f64>,
    pub objective_value: f64,
    pub dual_objective: Option<f64>,
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Worst linear-constraint violation over `1 + |rhs|`.
    pub max_violation: f64,
}

impl ConicSolution {
    pub fn psd(&self, v: PsdVar) -> &CMat {
        &self.psd_values[v.0]
    }

    pub fn scalar(&self, v: ScalarVar) -> f64 {
        self.scalar_values[v.0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Errors unless the status is optimal.
    pub fn require_optimal(self) -> Result<Self> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(Error::Solver {
                status: self.status,
                detail: format!(
                    "primal residual {:e}, dual residual {:e}, iterations {}",
                    self.primal_residual, self.dual_residual, self.iterations
                ),
            })
        }
    }

    fn unsolved(prog: &ConicProgram, status: SolveStatus) -> Self {
        Self {
            status,
            psd_values: prog.psd.iter().map(|d| CMat::zeros(d.dim, d.dim)).collect(),
            scalar_values: vec![0.0; prog.scalars.len()],
            objective_value: f64::NAN,
            dual_objective: None,
            iterations: 0,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            max_violation: f64::NAN,
        }
    }
}

/// A conic engine able to solve a [`ConicProgram`].
pub trait ConicBackend {
    fn solve(&self, prog: &ConicProgram, tol: &Tolerances) -> Result<ConicSolution>;
}

/// Solves with the default backend.
pub fn solve(prog: &ConicProgram, tol: &Tolerances) -> Result<ConicSolution> {
    ClarabelBackend.solve(prog, tol)
}

/// Worst relative violation of the linear rows at a candidate point.
pub fn linear_violation(prog: &ConicProgram, psd: &[CMat], scalars: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for c in &prog.constraints {
        let val = c.expr.evaluate(psd, scalars);
        let viol = match c.relation {
            Relation::LessEq => (val - c.rhs).max(0.0),
            Relation::GreaterEq => (c.rhs - val).max(0.0),
            Relation::Equal => (val - c.rhs).abs(),
        };
        worst = worst.max(viol / (1.0 + c.rhs.abs()));
    }
    for (d, x) in prog.scalars.iter().zip(scalars) {
        if d.sign == Sign::NonNegative {
            worst = worst.max((-x).max(0.0));
        }
    }
    worst
}

/// Smallest eigenvalue of every LMI block, relative to `max(1, λ_max)`.
pub fn lmi_margin(prog: &ConicProgram, psd: &[CMat], scalars: &[f64]) -> f64 {
    prog.lmis
        .iter()
        .map(|l| {
            let (eig, _) = hermitian_eigen(&l.evaluate(psd, scalars));
            eig[eig.len() - 1] / eig[0].abs().max(1.0)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn objective_at(prog: &ConicProgram, psd: &[CMat], scalars: &[f64]) -> f64 {
    prog.objective.evaluate(psd, scalars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;

    fn diag(v: &[f64]) -> CMat {
        CMat::from_diagonal(&nalgebra::DVector::from_iterator(v.len(), v.iter().map(|&x| C64::new(x, 0.0))))
    }

    #[test]
    fn scalar_lp() {
        let mut p = ConicProgram::new();
        let r = p.add_scalar_var(Sign::Free, "r");
        p.minimize(LinearExpr::new().scalar(r, 1.0));
        p.add_constraint(LinearExpr::new().scalar(r, 1.0), Relation::GreaterEq, 3.0, "floor");
        let s = solve(&p, &Tolerances::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.scalar(r) - 3.0).abs() < 1e-7);
    }

    #[test]
    fn rank_one_alignment() {
        let mut p = ConicProgram::new();
        let x = p.add_psd_var(2, "X");
        p.minimize(LinearExpr::new().trace(x, CMat::identity(2, 2)));
        p.add_constraint(LinearExpr::new().trace(x, diag(&[1.0, 0.0])), Relation::GreaterEq, 1.0, "gain");
        let s = solve(&p, &Tolerances::default()).unwrap();
        assert!(s.is_optimal());
        assert!((s.objective_value - 1.0).abs() < 1e-6);
        let xv = s.psd(x);
        assert!((xv - diag(&[1.0, 0.0])).norm() < 1e-5, "{xv}");
        if let Some(d) = s.dual_objective {
            assert!(s.objective_value >= d - 1e-6);
        }
    }

    #[test]
    fn complex_coefficients_are_respected() {
        // maximize Re Tr(AX), A = [[0, e^{-jφ}/2],[e^{jφ}/2, 0]], unit diagonal
        let phi: f64 = 0.7;
        let half = C64::from_polar(0.5, phi);
        let a = CMat::from_row_slice(2, 2, &[C64::new(0.0, 0.0), half.conj(), half, C64::new(0.0, 0.0)]);
        let mut p = ConicProgram::new();
        let x = p.add_psd_var(2, "X");
        p.minimize(LinearExpr::new().trace(x, -a.clone()));
        p.add_constraint(LinearExpr::new().trace(x, diag(&[1.0, 0.0])), Relation::Equal, 1.0, "d0");
        p.add_constraint(LinearExpr::new().trace(x, diag(&[0.0, 1.0])), Relation::Equal, 1.0, "d1");
        let s = solve(&p, &Tolerances::default()).unwrap();
        assert!(s.is_optimal());
        assert!((s.objective_value + 1.0).abs() < 1e-6);
        // Re Tr(AX) = Re(e^{-jφ} X_10), maximized by X_10 = e^{jφ}
        let x10 = s.psd(x)[(1, 0)];
        assert!((x10 - C64::from_polar(1.0, phi)).norm() < 1e-4, "{x10}");
    }

    #[test]
    fn infeasible_reported_as_status() {
        let mut p = ConicProgram::new();
        let r = p.add_scalar_var(Sign::NonNegative, "r");
        p.minimize(LinearExpr::new().scalar(r, 1.0));
        p.add_constraint(LinearExpr::new().scalar(r, 1.0), Relation::LessEq, -1.0, "impossible");
        let s = solve(&p, &Tolerances::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert!(s.require_optimal().is_err());
    }

    #[test]
    fn unbounded_reported_as_status() {
        let mut p = ConicProgram::new();
        let r = p.add_scalar_var(Sign::Free, "r");
        p.minimize(LinearExpr::new().scalar(r, 1.0));
        p.add_constraint(LinearExpr::new().scalar(r, 1.0), Relation::LessEq, 5.0, "cap");
        let s = solve(&p, &Tolerances::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Unbounded);
    }

    #[test]
    fn lmi_constraint() {
        // min t s.t. [[t, 1],[1, t]] ⪰ 0 → t = 1
        let mut p = ConicProgram::new();
        let t = p.add_scalar_var(Sign::Free, "t");
        p.minimize(LinearExpr::new().scalar(t, 1.0));
        let mut lmi = Lmi::new(2, "block");
        lmi.constant = CMat::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        lmi.scalar.push((t, CMat::identity(2, 2)));
        p.add_lmi(lmi);
        let s = solve(&p, &Tolerances::default()).unwrap();
        assert!(s.is_optimal());
        assert!((s.scalar(t) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lmi_congruence_term() {
        // min Tr(X) s.t. b† X b ≥ 1 written as a 1x1 LMI: -1 + b†Xb ⪰ 0.
        let b = CMat::from_column_slice(2, 1, &[C64::new(0.0, 1.0), C64::new(1.0, 0.0)]);
        let mut p = ConicProgram::new();
        let x = p.add_psd_var(2, "X");
        p.minimize(LinearExpr::new().trace(x, CMat::identity(2, 2)));
        let mut lmi = Lmi::new(1, "gain");
        lmi.constant = CMat::from_element(1, 1, C64::new(-1.0, 0.0));
        lmi.congruence.push(Congruence { var: x, coef: 1.0, map: b.clone() });
        p.add_lmi(lmi);
        let s = solve(&p, &Tolerances::default()).unwrap();
        assert!(s.is_optimal());
        // optimum is X = b b† / ||b||⁴, trace 1/||b||² = 1/2
        assert!((s.objective_value - 0.5).abs() < 1e-6);
        let expect = (&b * b.adjoint()).scale(0.25);
        assert!((s.psd(x) - expect).norm() < 1e-4);
        assert!(lmi_margin(&p, &s.psd_values, &s.scalar_values) > -1e-7);
    }

    #[test]
    fn validation_rejects_bad_programs() {
        let mut p = ConicProgram::new();
        let x = p.add_psd_var(2, "X");
        p.minimize(LinearExpr::new().trace(x, CMat::identity(3, 3)));
        assert!(p.validate().is_err());
        assert!(solve(&p, &Tolerances::default()).is_err());

        let mut p = ConicProgram::new();
        let x = p.add_psd_var(2, "X");
        let bad = CMat::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        p.add_constraint(LinearExpr::new().trace(x, bad), Relation::LessEq, 1.0, "nonherm");
        assert!(p.validate().is_err());

        let mut p = ConicProgram::new();
        p.minimize(LinearExpr::new().scalar(ScalarVar(3), 1.0));
        assert!(p.validate().is_err());
    }

    #[test]
    fn dump_lists_nonzeros() {
        let mut p = ConicProgram::new();
        let x = p.add_psd_var(2, "X");
        let r = p.add_scalar_var(Sign::NonNegative, "r");
        p.minimize(LinearExpr::new().scalar(r, 1.0));
        p.add_constraint(LinearExpr::new().trace(x, diag(&[1.0, 0.0])).scalar(r, -2.0), Relation::LessEq, 0.0, "pac1");
        let d = p.dump();
        assert!(d.contains("psd 0 2 X"));
        assert!(d.contains("scalar 0 nonneg r"));
        assert!(d.contains("con 0 le 0e0 pac1"));
        assert!(d.contains("coef 0 psd 0 0 0 1e0 0e0"));
        assert!(d.contains("coef 0 scalar 0 -2e0"));
        assert!(!d.contains("coef 0 psd 0 1 1"));
    }
}

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SolverStatus,
    SupportedConeT, ZeroConeT,
};
use nalgebra::DMatrix;

use super::embed::{complex_embed, hermitian_extract, smat, svec, svec_index, svec_len};
use super::{linear_violation, ConicBackend, ConicProgram, ConicSolution, Relation, Sign, SolveStatus, Tolerances};
use crate::error::{Error, Result};
use crate::linalg::CMat;

/// Interior-point backend built on Clarabel's PSD-triangle cone.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

struct Triplets {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    fn push(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.rows.push(r);
            self.cols.push(c);
            self.vals.push(v);
        }
    }
}

struct Layout {
    psd_offset: Vec<usize>,
    scalar_offset: usize,
    n: usize,
}

impl Layout {
    fn new(prog: &ConicProgram) -> Self {
        let mut psd_offset = Vec::with_capacity(prog.psd.len());
        let mut n = 0;
        for d in &prog.psd {
            psd_offset.push(n);
            n += svec_len(2 * d.dim);
        }
        let scalar_offset = n;
        n += prog.scalars.len();
        Self { psd_offset, scalar_offset, n }
    }
}

/// Coefficients over `svec(Y)` reproducing `Re Tr(A X)` for `X = extract(Y)`.
fn trace_coefficients(a: &CMat) -> Vec<f64> {
    let e = complex_embed(a) * 0.5;
    svec(&e)
}

fn row_coefficients(layout: &Layout, expr: &super::LinearExpr) -> Vec<(usize, f64)> {
    let mut dense = vec![0.0; layout.n];
    for (v, a) in &expr.trace {
        let off = layout.psd_offset[v.0];
        for (k, c) in trace_coefficients(a).into_iter().enumerate() {
            dense[off + k] += c;
        }
    }
    for (v, c) in &expr.scalar {
        dense[layout.scalar_offset + v.0] += c;
    }
    dense.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect()
}

impl ConicBackend for ClarabelBackend {
    fn solve(&self, prog: &ConicProgram, tol: &Tolerances) -> Result<ConicSolution> {
        prog.validate()?;
        let layout = Layout::new(prog);

        let mut a = Triplets { rows: Vec::new(), cols: Vec::new(), vals: Vec::new() };
        let mut b: Vec<f64> = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

        // equality rows
        let eqs: Vec<_> = prog.constraints.iter().filter(|c| c.relation == Relation::Equal).collect();
        for c in &eqs {
            let row = b.len();
            for (col, v) in row_coefficients(&layout, &c.expr) {
                a.push(row, col, v);
            }
            b.push(c.rhs);
        }
        if !eqs.is_empty() {
            cones.push(ZeroConeT(eqs.len()));
        }

        // inequality rows and sign constraints
        let mut nonneg = 0;
        for c in prog.constraints.iter().filter(|c| c.relation != Relation::Equal) {
            let flip = if c.relation == Relation::GreaterEq { -1.0 } else { 1.0 };
            let row = b.len();
            for (col, v) in row_coefficients(&layout, &c.expr) {
                a.push(row, col, flip * v);
            }
            b.push(flip * c.rhs);
            nonneg += 1;
        }
        for (j, d) in prog.scalars.iter().enumerate() {
            if d.sign == Sign::NonNegative {
                a.push(b.len(), layout.scalar_offset + j, -1.0);
                b.push(0.0);
                nonneg += 1;
            }
        }
        if nonneg > 0 {
            cones.push(NonnegativeConeT(nonneg));
        }

        // variable cones
        for (v, d) in prog.psd.iter().enumerate() {
            let m = svec_len(2 * d.dim);
            let row0 = b.len();
            for k in 0..m {
                a.push(row0 + k, layout.psd_offset[v] + k, -1.0);
                b.push(0.0);
            }
            cones.push(PSDTriangleConeT(2 * d.dim));
        }

        // linear matrix inequalities: s = svec(F0 + ...) = b - A x
        for l in &prog.lmis {
            let size = 2 * l.dim;
            let row0 = b.len();
            b.extend(svec(&complex_embed(&l.constant)));
            for c in &l.congruence {
                let r = complex_embed(&c.map);
                let n = r.nrows();
                let off = layout.psd_offset[c.var.0];
                for (k, (i, j)) in svec_index(n).into_iter().enumerate() {
                    let ri = r.row(i).transpose();
                    let rj = r.row(j).transpose();
                    let block: DMatrix<f64> = if i == j {
                        &ri * ri.transpose()
                    } else {
                        (&ri * rj.transpose() + &rj * ri.transpose()) * std::f64::consts::FRAC_1_SQRT_2
                    };
                    for (q, val) in svec(&block).into_iter().enumerate() {
                        a.push(row0 + q, off + k, -c.coef * val);
                    }
                }
            }
            for (v, f) in &l.scalar {
                for (q, val) in svec(&complex_embed(f)).into_iter().enumerate() {
                    a.push(row0 + q, layout.scalar_offset + v.0, -val);
                }
            }
            cones.push(PSDTriangleConeT(size));
        }

        let m = b.len();
        let a_mat = CscMatrix::new_from_triplets(m, layout.n, a.rows, a.cols, a.vals);
        let p_mat = CscMatrix::<f64>::zeros((layout.n, layout.n));
        let mut q = vec![0.0; layout.n];
        for (col, v) in row_coefficients(&layout, &prog.objective) {
            q[col] = v;
        }

        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(tol.max_iter)
            .tol_feas(tol.feas.min(1e-8))
            .tol_gap_abs(tol.gap)
            .tol_gap_rel(tol.gap)
            .build()
            .map_err(|e| Error::invalid(format!("solver settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p_mat, &q, &a_mat, &b, &cones, settings)
            .map_err(|e| Error::invalid(format!("solver setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;

        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            _ => SolveStatus::NumericalFailure,
        };
        if status == SolveStatus::Infeasible || status == SolveStatus::Unbounded {
            let mut out = ConicSolution::unsolved(prog, status);
            out.iterations = sol.iterations;
            return Ok(out);
        }

        let psd_values: Vec<CMat> = prog
            .psd
            .iter()
            .enumerate()
            .map(|(v, d)| {
                let off = layout.psd_offset[v];
                let y = smat(&sol.x[off..off + svec_len(2 * d.dim)], 2 * d.dim);
                hermitian_extract(&y)
            })
            .collect();
        let scalar_values = sol.x[layout.scalar_offset..].to_vec();
        let max_violation = linear_violation(prog, &psd_values, &scalar_values);

        let mut status = status;
        if status == SolveStatus::Optimal && sol.status == SolverStatus::AlmostSolved && max_violation > tol.feas {
            status = SolveStatus::NumericalFailure;
        }

        Ok(ConicSolution {
            status,
            psd_values,
            scalar_values,
            objective_value: sol.obj_val,
            dual_objective: sol.obj_val_dual.is_finite().then_some(sol.obj_val_dual),
            iterations: sol.iterations,
            primal_residual: sol.r_prim,
            dual_residual: sol.r_dual,
            max_violation,
        })
    }
}

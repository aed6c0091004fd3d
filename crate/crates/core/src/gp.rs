//! Small convex programs in log-sum-exp form, solved with a log-barrier
//! Newton method. Geometric programs land here after the change of
//! variables `y = log x`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `log Σ_j exp(a_jᵀ y + b_j) ≤ 0`.
#[derive(Debug, Clone)]
pub struct LseConstraint {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LseConstraint {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() || a.nrows() == 0 {
            return Err(Error::invalid("log-sum-exp constraint needs one offset per term"));
        }
        if b.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::invalid("log-sum-exp offsets must be finite or -inf"));
        }
        Ok(Self { a, b })
    }

    /// Value, gradient and Hessian at `y`.
    fn eval(&self, y: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let z = &self.a * y + &self.b;
        let zmax = z.max();
        let e = z.map(|v| (v - zmax).exp());
        let sum = e.sum();
        let pi = e / sum;
        let value = zmax + sum.ln();
        let grad = self.a.transpose() * &pi;
        let weighted = DMatrix::from_diagonal(&pi) - &pi * pi.transpose();
        let hess = self.a.transpose() * weighted * &self.a;
        (value, grad, hess)
    }

    pub fn value(&self, y: &DVector<f64>) -> f64 {
        let z = &self.a * y + &self.b;
        let zmax = z.max();
        zmax + z.map(|v| (v - zmax).exp()).sum().ln()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierSettings {
    /// Target bound on `m/μ`, the suboptimality of the barrier path.
    pub gap: f64,
    pub mu0: f64,
    pub growth: f64,
    pub max_newton: usize,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self { gap: 1e-7, mu0: 1.0, growth: 20.0, max_newton: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct LseSolution {
    pub y: DVector<f64>,
    pub objective: f64,
    pub newton_steps: usize,
}

/// Minimizes `cᵀy` subject to every constraint, starting from a strictly
/// feasible `y0`.
pub fn minimize_linear(
    c: &DVector<f64>,
    constraints: &[LseConstraint],
    y0: DVector<f64>,
    settings: &BarrierSettings,
) -> Result<LseSolution> {
    let n = c.len();
    if y0.len() != n || constraints.iter().any(|k| k.a.ncols() != n) {
        return Err(Error::invalid("dimension mismatch in log-sum-exp program"));
    }
    if constraints.iter().any(|k| k.value(&y0) >= 0.0) {
        return Err(Error::invalid("starting point is not strictly feasible"));
    }
    let m = constraints.len() as f64;
    let mut y = y0;
    let mut mu = settings.mu0;
    let mut steps = 0;

    let merit = |y: &DVector<f64>, mu: f64| -> f64 {
        let mut v = mu * c.dot(y);
        for k in constraints {
            let f = k.value(y);
            if f >= 0.0 {
                return f64::INFINITY;
            }
            v -= (-f).ln();
        }
        v
    };

    loop {
        // centering
        loop {
            if steps >= settings.max_newton {
                return Err(Error::Solver {
                    status: crate::conic::SolveStatus::NumericalFailure,
                    detail: format!("barrier method did not converge in {steps} Newton steps"),
                });
            }
            let mut g = c * mu;
            let mut h = DMatrix::<f64>::zeros(n, n);
            for k in constraints {
                let (f, gf, hf) = k.eval(&y);
                let s = -f;
                g += &gf / s;
                h += hf / s + (&gf * gf.transpose()) / (s * s);
            }
            // tiny ridge keeps the system solvable along flat directions
            let ridge = 1e-12 * h.diagonal().amax().max(1.0);
            for i in 0..n {
                h[(i, i)] += ridge;
            }
            let dy = match h.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => h.lu().solve(&(-&g)).ok_or_else(|| Error::Solver {
                    status: crate::conic::SolveStatus::NumericalFailure,
                    detail: "singular Newton system".into(),
                })?,
            };
            let decrement = -g.dot(&dy);
            steps += 1;
            if decrement / 2.0 <= 1e-8 {
                break;
            }
            let f0 = merit(&y, mu);
            let mut step = 1.0;
            loop {
                let cand = &y + &dy * step;
                if merit(&cand, mu) <= f0 - 0.25 * step * decrement {
                    if cand == y {
                        // the step no longer moves y in floating point
                        step = 0.0;
                    }
                    y = cand;
                    break;
                }
                step *= 0.5;
                if step < 1e-14 {
                    break;
                }
            }
            if step < 1e-14 {
                break;
            }
        }
        if m / mu <= settings.gap {
            break;
        }
        mu *= settings.growth;
    }
    Ok(LseSolution { objective: c.dot(&y), y, newton_steps: steps })
}

//! Feasibility of affine linear matrix inequalities by a log-determinant
//! barrier method.
//!
//! The problem is a set of symmetric blocks `F_k(y) = F_k0 + sum_p y_p F_kp`.
//! Phase I maximizes `t` subject to `F_k(y) - t I >= 0` for every block and
//! `|y_p| < box_bound`, following the central path of
//!
//! ```text
//! s * (-t) - sum_k log det(F_k(y) - t I) - sum_p log(box^2 - y_p^2)
//! ```
//!
//! with damped Newton steps. A point with `t >= margin` is a strict feasibility
//! certificate. On a centered point the optimum is at most `t + nu / s`, where
//! `nu` is the barrier parameter; once that bound drops below `margin` the
//! (box-restricted) problem has no strictly feasible point.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// One affine symmetric block.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub constant: DMatrix<f64>,
    /// One coefficient matrix per decision variable.
    pub coeffs: Vec<DMatrix<f64>>,
}

impl LmiBlock {
    fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (c, &v) in self.coeffs.iter().zip(y.iter()) {
            if v != 0.0 {
                out += c * v;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub blocks: Vec<LmiBlock>,
    pub nvars: usize,
    /// Strictly interior starting point for `y`.
    pub start: DVector<f64>,
    pub box_bound: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Required slack `t` for a feasibility certificate.
    pub margin: f64,
    /// Newton iteration cap across all centering steps.
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { margin: 1e-9, max_iters: 200 }
    }
}

#[derive(Debug, Clone)]
pub enum LmiOutcome {
    Feasible { y: DVector<f64>, slack: f64 },
    /// No point with slack above the margin; `upper_bound` bounds the best slack.
    Infeasible { upper_bound: f64 },
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl LmiProblem {
    fn barrier_nu(&self) -> f64 {
        (self.blocks.iter().map(LmiBlock::dim).sum::<usize>() + 2 * self.nvars) as f64
    }

    /// Slack matrices `F_k(y) - t I`, or `None` if one is not positive definite.
    fn factor(&self, y: &DVector<f64>, t: f64) -> Option<Vec<Cholesky<f64, Dyn>>> {
        if y.iter().any(|v| v.abs() >= self.box_bound) {
            return None;
        }
        self.blocks
            .iter()
            .map(|b| {
                let mut s = b.eval(y);
                for d in 0..b.dim() {
                    s[(d, d)] -= t;
                }
                Cholesky::new(s)
            })
            .collect()
    }

    fn value(&self, s: f64, y: &DVector<f64>, t: f64) -> Option<f64> {
        let chols = self.factor(y, t)?;
        let logdet: f64 = chols
            .iter()
            .map(|c| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
            .sum();
        let boxed: f64 = y.iter().map(|v| (self.box_bound.powi(2) - v * v).ln()).sum();
        Some(-s * t - logdet - boxed)
    }

    fn evaluate(&self, s: f64, y: &DVector<f64>, t: f64) -> Option<Eval> {
        let value = self.value(s, y, t)?;
        let chols = self.factor(y, t)?;
        let nz = self.nvars + 1;
        let mut grad = DVector::zeros(nz);
        let mut hess = DMatrix::zeros(nz, nz);
        grad[self.nvars] = -s;
        for (block, chol) in self.blocks.iter().zip(&chols) {
            let inv = chol.inverse();
            // X_p = S^{-1} G_p, with G_t = -I
            let mut xs: Vec<DMatrix<f64>> = block.coeffs.iter().map(|g| &inv * g).collect();
            xs.push(-&inv);
            for p in 0..nz {
                grad[p] -= xs[p].trace();
                for q in p..nz {
                    // tr(X_p X_q)
                    let v = xs[p].component_mul(&xs[q].transpose()).sum();
                    hess[(p, q)] += v;
                    if p != q {
                        hess[(q, p)] += v;
                    }
                }
            }
        }
        let b = self.box_bound;
        for p in 0..self.nvars {
            let v = y[p];
            grad[p] += 1.0 / (b - v) - 1.0 / (b + v);
            hess[(p, p)] += 1.0 / (b - v).powi(2) + 1.0 / (b + v).powi(2);
        }
        Some(Eval { value, grad, hess })
    }

    fn min_eig_at(&self, y: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let m = b.eval(y);
                ((&m + m.transpose()) * 0.5).symmetric_eigenvalues().min()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Runs phase I until a certificate of either kind emerges.
    pub fn solve(&self, opts: &SolverOptions) -> Result<LmiOutcome> {
        if self.blocks.is_empty() {
            return Ok(LmiOutcome::Feasible { y: self.start.clone(), slack: f64::INFINITY });
        }
        let mut y = self.start.clone();
        let start_slack = self.min_eig_at(&y);
        if start_slack >= opts.margin {
            return Ok(LmiOutcome::Feasible { y, slack: start_slack });
        }
        let mut t = start_slack - 1.0;
        let nu = self.barrier_nu();
        let mut s = 1.0;
        let mut iters = 0;
        loop {
            // centering
            loop {
                if iters >= opts.max_iters {
                    return Err(Error::SolverStall { iters });
                }
                iters += 1;
                let ev = self
                    .evaluate(s, &y, t)
                    .ok_or_else(|| Error::NumericalFailure("iterate left the barrier domain".into()))?;
                let step = match Cholesky::new(ev.hess.clone()) {
                    Some(ch) => -ch.solve(&ev.grad),
                    None => {
                        let mut reg = ev.hess.clone();
                        let shift = 1e-10 * reg.diagonal().amax().max(1.0);
                        for d in 0..reg.nrows() {
                            reg[(d, d)] += shift;
                        }
                        -reg
                            .lu()
                            .solve(&ev.grad)
                            .ok_or_else(|| Error::NumericalFailure("singular Newton system".into()))?
                    }
                };
                let slope = ev.grad.dot(&step);
                let decrement = -slope;
                let mut alpha = 1.0;
                let mut accepted = false;
                for _ in 0..60 {
                    let yn = &y + step.rows(0, self.nvars) * alpha;
                    let tn = t + step[self.nvars] * alpha;
                    if let Some(v) = self.value(s, &yn, tn) {
                        if v <= ev.value + 0.25 * alpha * slope {
                            y = yn;
                            t = tn;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if t >= opts.margin {
                    let slack = self.min_eig_at(&y);
                    if slack >= opts.margin {
                        return Ok(LmiOutcome::Feasible { y, slack });
                    }
                }
                if !accepted || decrement * 0.5 < 1e-9 {
                    break;
                }
            }
            let upper_bound = t + nu / s;
            if upper_bound < opts.margin {
                return Ok(LmiOutcome::Infeasible { upper_bound });
            }
            s *= 8.0;
        }
    }
}

//! Dense two-phase tableau simplex.
//!
//! Problem form: maximize `c·x` subject to `A·x ≤ b`, `x ≥ 0`. Rows with a
//! negative right-hand side are negated into `≥` rows and get a surplus plus an
//! artificial column; phase one drives the artificials to zero.

use serde::{Deserialize, Serialize};

use super::LpError;

pub const PIVOT_TOL: f64 = 1e-9;
pub const FEASIBILITY_TOL: f64 = 1e-7;
const HARRIS_TOL: f64 = 1e-9;
const STALL_LIMIT: usize = 50;
pub const MAX_ITERATIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub c: Vec<f64>,
    /// Row-major, one `Vec` per constraint.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// One multiplier per constraint row (`≥ 0` at optimality).
    pub duals: Vec<f64>,
    pub value: f64,
    /// Some basic variable sits at zero or some nonbasic column has zero
    /// reduced cost, so duals or primal optimum may not be unique.
    pub degenerate: bool,
    pub iterations: usize,
}

struct Tableau {
    rows: usize,
    width: usize,
    /// `rows` constraint rows then the objective row; last column is the rhs.
    cells: Vec<f64>,
    basis: Vec<usize>,
    /// Columns allowed to enter the basis.
    allowed: Vec<bool>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width - 1)
    }

    fn obj_row(&self) -> usize {
        self.rows
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let p = self.at(pr, pc);
        for c in 0..w {
            self.cells[pr * w + c] /= p;
        }
        let (before, rest) = self.cells.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[pc];
            if f != 0.0 {
                for (x, y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
        // round-off can push a basic value a hair below zero; left alone it
        // makes the next ratio test pick a negative step and Bland's rule cycles
        for r in 0..self.rows {
            let v = &mut self.cells[r * w + w - 1];
            if *v < 0.0 && *v > -FEASIBILITY_TOL {
                *v = 0.0;
            }
        }
    }

    /// Sets the objective row to reduced costs `cost_j - c_B·B⁻¹A_j`.
    fn load_objective(&mut self, cost: &[f64]) {
        let w = self.width;
        let o = self.obj_row();
        for c in 0..w {
            self.cells[o * w + c] = if c < cost.len() { cost[c] } else { 0.0 };
        }
        for r in 0..self.rows {
            let cb = cost.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for c in 0..w {
                    self.cells[o * w + c] -= cb * self.cells[r * w + c];
                }
            }
        }
    }

    /// Simplex iterations until optimal (`true`) or unbounded (`false`).
    ///
    /// Dantzig pricing with a Harris two-pass ratio test, which picks the
    /// largest pivot among near-minimal ratios. After `STALL_LIMIT`
    /// consecutive degenerate pivots pricing falls back to Bland's rule.
    fn run(&mut self, iterations: &mut usize) -> Result<bool, LpError> {
        let o = self.obj_row();
        let mut stalled = 0;
        loop {
            let candidates = (0..self.width - 1).filter(|&c| self.allowed[c] && self.at(o, c) > PIVOT_TOL);
            let entering = if stalled >= STALL_LIMIT {
                candidates.min()
            } else {
                candidates.max_by(|&a, &b| self.at(o, a).total_cmp(&self.at(o, b)))
            };
            let Some(pc) = entering else { return Ok(true) };

            let mut bound = f64::INFINITY;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    bound = bound.min((self.rhs(r).max(0.0) + HARRIS_TOL) / a);
                }
            }
            if bound.is_infinite() {
                return Ok(false);
            }
            let mut pr = usize::MAX;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL && self.rhs(r).max(0.0) / a <= bound {
                    let better = pr == usize::MAX
                        || a > self.at(pr, pc)
                        || (a == self.at(pr, pc) && self.basis[r] < self.basis[pr]);
                    if better {
                        pr = r;
                    }
                }
            }

            *iterations += 1;
            if *iterations > MAX_ITERATIONS {
                return Err(LpError::IterationLimit(MAX_ITERATIONS));
            }
            let before = self.rhs(o);
            self.pivot(pr, pc);
            if self.rhs(o) < before - PIVOT_TOL {
                stalled = 0;
            } else {
                stalled += 1;
            }
        }
    }
}

pub fn solve(problem: &LpProblem) -> Result<LpSolution, LpError> {
    let n = problem.c.len();
    let m = problem.b.len();
    if problem.a.len() != m || problem.a.iter().any(|row| row.len() != n) {
        return Err(LpError::Dimensions);
    }
    let finite = problem.c.iter().chain(&problem.b).chain(problem.a.iter().flatten()).all(|v| v.is_finite());
    if !finite {
        return Err(LpError::NonFinite);
    }

    let flipped: Vec<bool> = problem.b.iter().map(|&b| b < 0.0).collect();
    let n_art = flipped.iter().filter(|&&f| f).count();
    // columns: originals | one slack/surplus per row | artificials | rhs
    let slack0 = n;
    let art0 = n + m;
    let width = n + m + n_art + 1;
    let mut cells = vec![0.0; (m + 1) * width];
    let mut basis = vec![0; m];
    let mut art = art0;
    for r in 0..m {
        let sign = if flipped[r] { -1.0 } else { 1.0 };
        for c in 0..n {
            cells[r * width + c] = sign * problem.a[r][c];
        }
        cells[r * width + width - 1] = sign * problem.b[r];
        if flipped[r] {
            cells[r * width + slack0 + r] = -1.0;
            cells[r * width + art] = 1.0;
            basis[r] = art;
            art += 1;
        } else {
            cells[r * width + slack0 + r] = 1.0;
            basis[r] = slack0 + r;
        }
    }
    let mut t = Tableau {
        rows: m,
        width,
        cells,
        basis,
        allowed: vec![true; width - 1],
    };
    let mut iterations = 0;

    if n_art > 0 {
        let mut phase1 = vec![0.0; width - 1];
        phase1[art0..art0 + n_art].iter_mut().for_each(|c| *c = -1.0);
        t.load_objective(&phase1);
        t.run(&mut iterations)?;
        let infeasibility: f64 = (0..m).filter(|&r| t.basis[r] >= art0).map(|r| t.rhs(r)).sum();
        if infeasibility > 1e-7 {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                duals: vec![0.0; m],
                value: 0.0,
                degenerate: false,
                iterations,
            });
        }
        for r in 0..m {
            if t.basis[r] >= art0 {
                if let Some(pc) = (0..art0).find(|&c| t.at(r, c).abs() > PIVOT_TOL) {
                    t.pivot(r, pc);
                }
            }
        }
        for c in art0..art0 + n_art {
            t.allowed[c] = false;
        }
    }

    let mut cost = vec![0.0; width - 1];
    cost[..n].copy_from_slice(&problem.c);
    t.load_objective(&cost);
    if !t.run(&mut iterations)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![0.0; n],
            duals: vec![0.0; m],
            value: f64::INFINITY,
            degenerate: false,
            iterations,
        });
    }

    let mut x = vec![0.0; n];
    let mut degenerate = false;
    for r in 0..m {
        let v = t.rhs(r);
        if t.basis[r] < n {
            x[t.basis[r]] = v.max(0.0);
        }
        if v.abs() <= PIVOT_TOL {
            degenerate = true;
        }
    }
    let o = t.obj_row();
    let in_basis = {
        let mut mask = vec![false; width - 1];
        t.basis.iter().for_each(|&b| mask[b] = true);
        mask
    };
    if (0..art0).any(|c| !in_basis[c] && t.at(o, c).abs() <= PIVOT_TOL) {
        degenerate = true;
    }
    // y_i = -(reduced cost of row i's slack/surplus column), in both orientations.
    let duals = (0..m).map(|r| (-t.at(o, slack0 + r)).max(0.0)).collect();
    let value = problem.c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        duals,
        value,
        degenerate,
        iterations,
    })
}

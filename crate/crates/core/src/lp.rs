//! Dense two-phase tableau simplex for small linear programs.
//!
//! Solves `min cᵀx` subject to row constraints and `x ≥ 0`. Pivoting follows
//! Bland's rule, so the method terminates on degenerate problems. Only meant
//! for the handful of variables and a few hundred rows of the cutting-plane
//! master problem.

const EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coefficients: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn le(coefficients: Vec<f64>, rhs: f64) -> Self {
        Self {
            coefficients,
            relation: Relation::Le,
            rhs,
        }
    }

    pub fn ge(coefficients: Vec<f64>, rhs: f64) -> Self {
        Self {
            coefficients,
            relation: Relation::Ge,
            rhs,
        }
    }

    pub fn eq(coefficients: Vec<f64>, rhs: f64) -> Self {
        Self {
            coefficients,
            relation: Relation::Eq,
            rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    cells: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn m(&self) -> usize {
        self.basis.len()
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.cells[row][col];
        for v in &mut self.cells[row] {
            *v /= p;
        }
        let pivot_row = self.cells[row].clone();
        for (r, line) in self.cells.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = line[col];
            if f != 0.0 {
                for (v, pv) in line.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Runs primal simplex on the objective row; `allowed` filters entering columns.
    fn optimize(&mut self, allowed: impl Fn(usize) -> bool) -> bool {
        let obj = self.m();
        loop {
            let entering = (0..self.cols).find(|&j| allowed(j) && self.cells[obj][j] < -EPS);
            let Some(col) = entering else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m() {
                let a = self.cells[r][col];
                if a > EPS {
                    let ratio = self.cells[r][self.cols] / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - EPS
                                || (ratio <= lratio + EPS && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((row, _)) => self.pivot(row, col),
                None => return false,
            }
        }
    }

    fn set_objective(&mut self, costs: &[f64]) {
        let obj = self.m();
        let mut line = vec![0.0; self.cols + 1];
        line[..costs.len()].copy_from_slice(costs);
        for r in 0..self.m() {
            let cb = line[self.basis[r]];
            if cb != 0.0 {
                for (v, a) in line.iter_mut().zip(&self.cells[r]) {
                    *v -= cb * a;
                }
            }
        }
        self.cells[obj] = line;
    }
}

/// Minimizes `objective · x` over `x ≥ 0` subject to `rows`.
pub fn minimize(objective: &[f64], rows: &[Row]) -> LpOutcome {
    let n = objective.len();
    let m = rows.len();
    let slack_count = rows.iter().filter(|r| r.relation != Relation::Eq).count();
    // normalize to non-negative right-hand sides
    let normalized: Vec<(Vec<f64>, Relation, f64)> = rows
        .iter()
        .map(|r| {
            assert_eq!(r.coefficients.len(), n, "row width must match objective");
            if r.rhs < 0.0 {
                let flipped = match r.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (r.coefficients.iter().map(|a| -a).collect(), flipped, -r.rhs)
            } else {
                (r.coefficients.clone(), r.relation, r.rhs)
            }
        })
        .collect();
    let artificial_count = normalized
        .iter()
        .filter(|(_, rel, _)| *rel != Relation::Le)
        .count();
    let cols = n + slack_count + artificial_count;
    let first_artificial = n + slack_count;

    let mut cells = vec![vec![0.0; cols + 1]; m + 1];
    let mut basis = vec![0; m];
    let (mut slack, mut art) = (n, first_artificial);
    for (r, (coef, rel, rhs)) in normalized.iter().enumerate() {
        cells[r][..n].copy_from_slice(coef);
        cells[r][cols] = *rhs;
        match rel {
            Relation::Le => {
                cells[r][slack] = 1.0;
                basis[r] = slack;
                slack += 1;
            }
            Relation::Ge => {
                cells[r][slack] = -1.0;
                slack += 1;
                cells[r][art] = 1.0;
                basis[r] = art;
                art += 1;
            }
            Relation::Eq => {
                cells[r][art] = 1.0;
                basis[r] = art;
                art += 1;
            }
        }
    }
    let mut t = Tableau { cells, basis, cols };

    if artificial_count > 0 {
        let mut phase1 = vec![0.0; cols];
        for c in &mut phase1[first_artificial..] {
            *c = 1.0;
        }
        t.set_objective(&phase1);
        t.optimize(|_| true);
        let infeasibility = -t.cells[m][cols];
        if infeasibility > 1e-7 * (1.0 + rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max)) {
            return LpOutcome::Infeasible;
        }
        // drive artificials out of the basis where possible
        for r in 0..m {
            if t.basis[r] >= first_artificial {
                if let Some(col) = (0..first_artificial).find(|&j| t.cells[r][j].abs() > EPS) {
                    t.pivot(r, col);
                }
            }
        }
    }

    t.set_objective(objective);
    if !t.optimize(|j| j < first_artificial) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (r, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.cells[r][cols];
        }
    }
    let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpOutcome::Optimal { x, value }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(out: LpOutcome) -> (Vec<f64>, f64) {
        match out {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 -> (2, 6), 36
        let rows = [
            Row::le(vec![1.0, 0.0], 4.0),
            Row::le(vec![0.0, 2.0], 12.0),
            Row::le(vec![3.0, 2.0], 18.0),
        ];
        let (x, v) = optimal(minimize(&[-3.0, -5.0], &rows));
        assert!((v + 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn needs_phase_one() {
        // min x + y, x + y ≥ 2, x - y = 0 -> (1, 1)
        let rows = [Row::ge(vec![1.0, 1.0], 2.0), Row::eq(vec![1.0, -1.0], 0.0)];
        let (x, v) = optimal(minimize(&[1.0, 1.0], &rows));
        assert!((v - 2.0).abs() < 1e-9);
        assert!((x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_is_flipped() {
        // min t s.t. t ≥ 5 - x, t ≥ x - 1, x ≤ 10 -> x = 3, t = 2
        let rows = [
            Row::le(vec![-1.0, -1.0], -5.0),
            Row::le(vec![1.0, -1.0], 1.0),
            Row::le(vec![1.0, 0.0], 10.0),
        ];
        let (x, v) = optimal(minimize(&[0.0, 1.0], &rows));
        assert!((v - 2.0).abs() < 1e-9);
        assert!((x[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let rows = [Row::le(vec![1.0], 1.0), Row::ge(vec![1.0], 2.0)];
        assert_eq!(minimize(&[1.0], &rows), LpOutcome::Infeasible);
        let rows = [Row::ge(vec![1.0, -1.0], 0.0)];
        assert_eq!(minimize(&[-1.0, 0.0], &rows), LpOutcome::Unbounded);
    }

    #[test]
    fn degenerate_vertex_terminates() {
        // several constraints tight at the origin
        let rows = [
            Row::le(vec![1.0, -1.0], 0.0),
            Row::le(vec![-1.0, 1.0], 0.0),
            Row::le(vec![1.0, 1.0], 4.0),
            Row::le(vec![2.0, -2.0], 0.0),
        ];
        let (x, v) = optimal(minimize(&[-1.0, -1.0], &rows));
        assert!((v + 4.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9);
    }
}

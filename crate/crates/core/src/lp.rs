//! Exact two-phase simplex over rationals with Bland's rule.

use num_traits::{Signed, Zero};

use crate::rational::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, Default)]
pub struct Lp {
    pub num_vars: usize,
    /// Sparse rows `Σ a_j x_j (cmp) b`.
    pub constraints: Vec<(Vec<(usize, Rational)>, Cmp, Rational)>,
    /// Maximized objective.
    pub objective: Vec<(usize, Rational)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { value: Rational, x: Vec<Rational> },
    Infeasible,
    Unbounded,
}

impl Lp {
    pub fn new(num_vars: usize) -> Lp {
        Lp { num_vars, ..Default::default() }
    }

    pub fn constrain(&mut self, row: Vec<(usize, Rational)>, cmp: Cmp, rhs: Rational) {
        self.constraints.push((row, cmp, rhs));
    }

    /// All variables are implicitly non-negative.
    pub fn solve(&self) -> LpOutcome {
        solve(self)
    }
}

struct Tableau {
    rows: Vec<Vec<Rational>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c].clone();
        for v in self.rows[r].iter_mut() {
            *v /= &p;
        }
        let pr = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let f = row[c].clone();
            for (v, pv) in row.iter_mut().zip(&pr) {
                if !pv.is_zero() {
                    *v -= &f * pv;
                }
            }
        }
        self.basis[r] = c;
    }

    fn rhs(&self, i: usize) -> &Rational {
        &self.rows[i][self.cols]
    }

    /// Maximizes `cost` over the allowed columns. Returns false if unbounded.
    fn optimize(&mut self, cost: &[Rational], allowed: &[bool]) -> bool {
        loop {
            let mut enter = None;
            for j in 0..self.cols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let mut r = cost[j].clone();
                for (i, &b) in self.basis.iter().enumerate() {
                    if !self.rows[i][j].is_zero() && !cost[b].is_zero() {
                        r -= &cost[b] * &self.rows[i][j];
                    }
                }
                if r.is_positive() {
                    enter = Some(j);
                    break;
                }
            }
            let Some(c) = enter else { return true };
            let mut leave: Option<(usize, Rational)> = None;
            for i in 0..self.rows.len() {
                let a = &self.rows[i][c];
                if !a.is_positive() {
                    continue;
                }
                let ratio = self.rhs(i) / a;
                let better = match &leave {
                    None => true,
                    Some((li, lr)) => ratio < *lr || (ratio == *lr && self.basis[i] < self.basis[*li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
            let Some((r, _)) = leave else { return false };
            self.pivot(r, c);
        }
    }
}

fn solve(lp: &Lp) -> LpOutcome {
    let n = lp.num_vars;
    let m = lp.constraints.len();
    let slack_count = lp.constraints.iter().filter(|c| c.1 != Cmp::Eq).count();
    let cols = n + slack_count + m;
    let art0 = n + slack_count;
    let mut rows = Vec::with_capacity(m);
    let mut slack = n;
    for (i, (row, cmp, rhs)) in lp.constraints.iter().enumerate() {
        let mut r = vec![Rational::zero(); cols + 1];
        for (j, a) in row {
            r[*j] += a;
        }
        match cmp {
            Cmp::Le => {
                r[slack] = Rational::from_integer(1.into());
                slack += 1;
            }
            Cmp::Ge => {
                r[slack] = Rational::from_integer((-1).into());
                slack += 1;
            }
            Cmp::Eq => {}
        }
        r[cols] = rhs.clone();
        if rhs.is_negative() {
            for v in r.iter_mut() {
                *v = -v.clone();
            }
        }
        r[art0 + i] = Rational::from_integer(1.into());
        rows.push(r);
    }
    let mut t = Tableau { rows, basis: (art0..art0 + m).collect(), cols };

    let mut cost1 = vec![Rational::zero(); cols];
    for c in cost1.iter_mut().skip(art0) {
        *c = Rational::from_integer((-1).into());
    }
    let all = vec![true; cols];
    t.optimize(&cost1, &all);
    let infeas: Rational = (0..m).filter(|&i| t.basis[i] >= art0).map(|i| t.rhs(i).clone()).sum();
    if infeas.is_positive() {
        return LpOutcome::Infeasible;
    }
    // Drive zero-level artificials out of the basis; drop redundant rows.
    let mut i = 0;
    while i < t.rows.len() {
        if t.basis[i] >= art0 {
            match (0..art0).find(|&j| !t.rows[i][j].is_zero()) {
                Some(j) => t.pivot(i, j),
                None => {
                    t.rows.remove(i);
                    t.basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }
    let mut cost2 = vec![Rational::zero(); cols];
    for (j, c) in &lp.objective {
        cost2[*j] += c;
    }
    let allowed: Vec<bool> = (0..cols).map(|j| j < art0).collect();
    if !t.optimize(&cost2, &allowed) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![Rational::zero(); n];
    for (i, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rhs(i).clone();
        }
    }
    let value = lp.objective.iter().map(|(j, c)| c * &x[*j]).sum();
    LpOutcome::Optimal { value, x }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rational_solve;
    use crate::rational::ratio;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn r(a: i64) -> Rational {
        ratio(a, 1)
    }

    #[test]
    fn textbook_example() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36 at (2, 6)
        let mut lp = Lp::new(2);
        lp.objective = vec![(0, r(3)), (1, r(5))];
        lp.constrain(vec![(0, r(1))], Cmp::Le, r(4));
        lp.constrain(vec![(1, r(2))], Cmp::Le, r(12));
        lp.constrain(vec![(0, r(3)), (1, r(2))], Cmp::Le, r(18));
        assert_eq!(lp.solve(), LpOutcome::Optimal { value: r(36), x: vec![r(2), r(6)] });
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = Lp::new(1);
        lp.constrain(vec![(0, r(1))], Cmp::Ge, r(2));
        lp.constrain(vec![(0, r(1))], Cmp::Le, r(1));
        assert_eq!(lp.solve(), LpOutcome::Infeasible);
        let mut lp = Lp::new(1);
        lp.objective = vec![(0, r(1))];
        lp.constrain(vec![(0, r(1))], Cmp::Ge, r(2));
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn equalities_with_redundancy() {
        let mut lp = Lp::new(3);
        lp.objective = vec![(2, r(1))];
        lp.constrain(vec![(0, r(1)), (1, r(1)), (2, r(1))], Cmp::Eq, r(1));
        lp.constrain(vec![(0, r(2)), (1, r(2)), (2, r(2))], Cmp::Eq, r(2));
        lp.constrain(vec![(0, r(1)), (2, r(-1))], Cmp::Ge, r(0));
        match lp.solve() {
            LpOutcome::Optimal { value, .. } => assert_eq!(value, ratio(1, 2)),
            o => panic!("{o:?}"),
        }
    }

    // Brute force over vertices: every choice of `n` tight constraints
    // among the rows and the bounds x_j >= 0.
    fn brute_max(n: usize, rows: &[(Vec<i64>, i64)], c: &[i64]) -> Option<Rational> {
        let mut all: Vec<(Vec<i64>, i64)> = rows.to_vec();
        for j in 0..n {
            let mut e = vec![0; n];
            e[j] = 1;
            all.push((e, 0));
        }
        let k = all.len();
        let mut best: Option<Rational> = None;
        for mask in 0u32..(1 << k) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let chosen: Vec<&(Vec<i64>, i64)> = (0..k).filter(|b| mask >> b & 1 == 1).map(|b| &all[b]).collect();
            let sys: Vec<BTreeMap<usize, Rational>> =
                chosen.iter().map(|(a, _)| a.iter().enumerate().map(|(j, &v)| (j, r(v))).collect()).collect();
            let rhs = chosen.iter().map(|(_, b)| r(*b)).collect();
            let Some(x) = rational_solve(sys, rhs) else { continue };
            let feasible = x.iter().all(|v| !v.is_negative())
                && rows.iter().all(|(a, b)| a.iter().zip(&x).map(|(ai, xi)| r(*ai) * xi).sum::<Rational>() <= r(*b));
            if feasible {
                let v: Rational = c.iter().zip(&x).map(|(ci, xi)| r(*ci) * xi).sum();
                if best.as_ref().map_or(true, |b| v > *b) {
                    best = Some(v);
                }
            }
        }
        best
    }

    proptest! {
        #[test]
        fn matches_vertex_enumeration(
            n in 1usize..=3,
            raw in prop::collection::vec((prop::collection::vec(-3i64..=3, 3), 0i64..=6), 1..=4),
            c in prop::collection::vec(-3i64..=3, 3),
        ) {
            let mut rows: Vec<(Vec<i64>, i64)> = raw.into_iter().map(|(a, b)| (a[..n].to_vec(), b)).collect();
            // Keep the region bounded.
            rows.push((vec![1; n], 10));
            let c = &c[..n];
            let mut lp = Lp::new(n);
            lp.objective = c.iter().enumerate().map(|(j, &v)| (j, r(v))).collect();
            for (a, b) in &rows {
                lp.constrain(a.iter().enumerate().map(|(j, &v)| (j, r(v))).collect(), Cmp::Le, r(*b));
            }
            match lp.solve() {
                LpOutcome::Optimal { value, x } => {
                    prop_assert_eq!(Some(value), brute_max(n, &rows, c));
                    for (a, b) in &rows {
                        let lhs: Rational = a.iter().zip(&x).map(|(ai, xi)| r(*ai) * xi).sum();
                        prop_assert!(lhs <= r(*b));
                    }
                }
                o => prop_assert!(false, "unexpected {:?}", o),
            }
        }
    }
}

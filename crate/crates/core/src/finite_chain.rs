//! Explicit finite Markov chains: SCC decomposition, stationary
//! distributions, and absorption/reachability probabilities.

use std::collections::{BTreeMap, VecDeque};

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::linalg::{self, Sparse};
use crate::rational::{self, Rational};

pub const DEFAULT_EXACT_CAP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NumericPolicy {
    /// Exact rational solves up to `cap` unknowns, float beyond.
    Exact { cap: usize },
    Float,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        NumericPolicy::Exact { cap: DEFAULT_EXACT_CAP }
    }
}

impl NumericPolicy {
    fn exact_for(self, n: usize) -> bool {
        matches!(self, NumericPolicy::Exact { cap } if n <= cap)
    }
}

/// A probability that is exact when the solve was exact.
#[derive(Clone, Debug, PartialEq)]
pub enum Prob {
    Exact(Rational),
    Float(f64),
}

impl Prob {
    pub fn to_f64(&self) -> f64 {
        match self {
            Prob::Exact(r) => rational::to_f64(r),
            Prob::Float(f) => *f,
        }
    }
    pub fn exact(&self) -> Option<&Rational> {
        match self {
            Prob::Exact(r) => Some(r),
            Prob::Float(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Rows {
    Exact(Vec<Vec<(usize, Rational)>>),
    Float(Vec<Vec<(usize, f64)>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteChain {
    rows: Rows,
    names: Option<Vec<String>>,
}

impl FiniteChain {
    /// Exact chain; every row must be non-empty with positive entries
    /// summing to exactly 1. Parallel edges are merged.
    pub fn exact(rows: Vec<Vec<(usize, Rational)>>) -> Result<FiniteChain> {
        let n = rows.len();
        let mut merged = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            let mut m: BTreeMap<usize, Rational> = BTreeMap::new();
            for (j, p) in row {
                if j >= n {
                    return Err(Error::InvalidModel(format!("node {i} has a transition to unknown node {j}")));
                }
                if p <= Rational::zero() {
                    return Err(Error::InvalidModel(format!("node {i} has a non-positive probability")));
                }
                *m.entry(j).or_insert_with(Rational::zero) += p;
            }
            let s: Rational = m.values().sum();
            if !s.is_one() {
                return Err(Error::InvalidModel(format!("row {i} sums to {s}, not 1")));
            }
            merged.push(m.into_iter().collect());
        }
        Ok(FiniteChain { rows: Rows::Exact(merged), names: None })
    }

    /// Float chain; rows must sum to 1 within `1e-9`.
    pub fn float(rows: Vec<Vec<(usize, f64)>>) -> Result<FiniteChain> {
        let n = rows.len();
        let mut merged = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            let mut m: BTreeMap<usize, f64> = BTreeMap::new();
            for (j, p) in row {
                if j >= n || !(p > 0.0) || !p.is_finite() {
                    return Err(Error::InvalidModel(format!("node {i} has an invalid transition")));
                }
                *m.entry(j).or_insert(0.0) += p;
            }
            let s: f64 = m.values().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel(format!("row {i} sums to {s}, not 1")));
            }
            merged.push(m.into_iter().collect());
        }
        Ok(FiniteChain { rows: Rows::Float(merged), names: None })
    }

    pub fn with_names(mut self, names: Vec<String>) -> FiniteChain {
        assert_eq!(names.len(), self.len());
        self.names = Some(names);
        self
    }

    pub fn name(&self, i: usize) -> String {
        self.names.as_ref().map_or_else(|| i.to_string(), |n| n[i].clone())
    }

    pub fn len(&self) -> usize {
        match &self.rows {
            Rows::Exact(r) => r.len(),
            Rows::Float(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.rows, Rows::Exact(_))
    }

    pub fn successors(&self, i: usize) -> Vec<usize> {
        match &self.rows {
            Rows::Exact(r) => r[i].iter().map(|e| e.0).collect(),
            Rows::Float(r) => r[i].iter().map(|e| e.0).collect(),
        }
    }

    pub fn row_f64(&self, i: usize) -> Vec<(usize, f64)> {
        match &self.rows {
            Rows::Exact(r) => r[i].iter().map(|(j, p)| (*j, rational::to_f64(p))).collect(),
            Rows::Float(r) => r[i].clone(),
        }
    }

    pub fn row_exact(&self, i: usize) -> Option<&[(usize, Rational)]> {
        match &self.rows {
            Rows::Exact(r) => Some(&r[i]),
            Rows::Float(_) => None,
        }
    }

    pub fn scc_decomposition(&self) -> SccDecomposition {
        let n = self.len();
        let succ: Vec<Vec<usize>> = (0..n).map(|i| self.successors(i)).collect();
        tarjan(&succ)
    }

    /// Nodes reachable from `start` (including it).
    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut q = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = q.pop_front() {
            for w in self.successors(v) {
                if !seen[w] {
                    seen[w] = true;
                    q.push_back(w);
                }
            }
        }
        seen
    }

    /// Nodes from which some node in `targets` is reachable.
    pub fn can_reach(&self, targets: &[bool]) -> Vec<bool> {
        let n = self.len();
        let mut pred = vec![Vec::new(); n];
        for i in 0..n {
            for j in self.successors(i) {
                pred[j].push(i);
            }
        }
        let mut seen = targets.to_vec();
        let mut q: VecDeque<usize> = (0..n).filter(|&i| targets[i]).collect();
        while let Some(v) = q.pop_front() {
            for &w in &pred[v] {
                if !seen[w] {
                    seen[w] = true;
                    q.push_back(w);
                }
            }
        }
        seen
    }

    fn check_irreducible(&self, component: &[usize]) -> Result<()> {
        if component.is_empty() {
            return Err(Error::NotIrreducible);
        }
        let mut inside = vec![false; self.len()];
        for &c in component {
            inside[c] = true;
        }
        for &c in component {
            if self.successors(c).iter().any(|&j| !inside[j]) {
                return Err(Error::NotIrreducible);
            }
        }
        let r = self.reachable_from(component[0]);
        let mut back = vec![false; self.len()];
        back[component[0]] = true;
        let b = self.can_reach(&back);
        if component.iter().any(|&c| !r[c] || !b[c]) {
            return Err(Error::NotIrreducible);
        }
        Ok(())
    }

    /// Invariant distribution of a BSCC, indexed like `component`.
    pub fn stationary_distribution(&self, component: &[usize], policy: NumericPolicy) -> Result<Vec<Prob>> {
        self.check_irreducible(component)?;
        let n = component.len();
        let mut local = vec![usize::MAX; self.len()];
        for (k, &c) in component.iter().enumerate() {
            local[c] = k;
        }
        // Fix mu[0] = 1 and solve the balance equations of the other nodes:
        // for j != 0: sum_{i != 0} mu_i P_ij - mu_j = -P_0j.
        if let (Rows::Exact(rows), true) = (&self.rows, policy.exact_for(n)) {
            let mut sys: Vec<BTreeMap<usize, Rational>> = vec![BTreeMap::new(); n - 1];
            let mut rhs = vec![Rational::zero(); n - 1];
            for (k, &c) in component.iter().enumerate() {
                for (j, p) in &rows[c] {
                    let lj = local[*j];
                    if lj == 0 {
                        continue;
                    }
                    if k == 0 {
                        rhs[lj - 1] -= p;
                    } else {
                        *sys[lj - 1].entry(k - 1).or_insert_with(Rational::zero) += p;
                    }
                }
            }
            for (j, row) in sys.iter_mut().enumerate() {
                *row.entry(j).or_insert_with(Rational::zero) -= Rational::one();
            }
            let x = linalg::rational_solve(sys, rhs).ok_or(Error::NotIrreducible)?;
            let mut mu = vec![Rational::one()];
            mu.extend(x);
            let total: Rational = mu.iter().sum();
            return Ok(mu.into_iter().map(|m| Prob::Exact(m / &total)).collect());
        }
        let mut sys = Sparse::new(n.saturating_sub(1));
        let mut rhs = vec![0.0; n.saturating_sub(1)];
        for (k, &c) in component.iter().enumerate() {
            for (j, p) in self.row_f64(c) {
                let lj = local[j];
                if lj == 0 {
                    continue;
                }
                if k == 0 {
                    rhs[lj - 1] -= p;
                } else {
                    sys.push(lj - 1, k - 1, p);
                }
            }
        }
        for j in 0..n.saturating_sub(1) {
            sys.push(j, j, -1.0);
        }
        let x = linalg::sparse_solve(&sys, &rhs)?;
        let mut mu = vec![1.0];
        mu.extend(x);
        let total: f64 = mu.iter().sum();
        let mu: Vec<f64> = mu.iter().map(|m| m / total).collect();
        let res = self.stationary_residual_f64(component, &mu);
        if res > 1e-12 {
            return Err(Error::Numeric(format!("stationary residual {res:e} exceeds 1e-12")));
        }
        Ok(mu.into_iter().map(Prob::Float).collect())
    }

    /// `‖μP − μ‖∞` over the component, in floating point.
    pub fn stationary_residual_f64(&self, component: &[usize], mu: &[f64]) -> f64 {
        let mut acc: BTreeMap<usize, f64> = component.iter().map(|&c| (c, 0.0)).collect();
        for (k, &c) in component.iter().enumerate() {
            for (j, p) in self.row_f64(c) {
                *acc.entry(j).or_insert(0.0) += mu[k] * p;
            }
        }
        component.iter().enumerate().map(|(k, c)| (acc[c] - mu[k]).abs()).fold(0.0, f64::max)
    }

    /// Least solution of `x = P x` with `x` pinned on the nodes where `fixed`
    /// is set. Exact chain required.
    pub fn absorption_exact(&self, fixed: &[Option<Rational>]) -> Result<Vec<Rational>> {
        let Rows::Exact(rows) = &self.rows else {
            return Err(Error::Precondition("exact absorption needs an exact chain".into()));
        };
        let n = self.len();
        let positive: Vec<bool> = fixed.iter().map(|f| f.as_ref().is_some_and(|v| !v.is_zero())).collect();
        let live = self.can_reach(&positive);
        let mut idx = vec![usize::MAX; n];
        let mut unknowns = Vec::new();
        for i in 0..n {
            if fixed[i].is_none() && live[i] {
                idx[i] = unknowns.len();
                unknowns.push(i);
            }
        }
        let m = unknowns.len();
        let mut sys: Vec<BTreeMap<usize, Rational>> = vec![BTreeMap::new(); m];
        let mut rhs = vec![Rational::zero(); m];
        for (k, &i) in unknowns.iter().enumerate() {
            sys[k].insert(k, Rational::one());
            for (j, p) in &rows[i] {
                if let Some(v) = &fixed[*j] {
                    rhs[k] += p * v;
                } else if idx[*j] != usize::MAX {
                    *sys[k].entry(idx[*j]).or_insert_with(Rational::zero) -= p;
                }
            }
        }
        let x = linalg::rational_solve(sys, rhs).ok_or_else(|| Error::Numeric("singular absorption system".into()))?;
        Ok((0..n)
            .map(|i| match &fixed[i] {
                Some(v) => v.clone(),
                None if idx[i] != usize::MAX => x[idx[i]].clone(),
                None => Rational::zero(),
            })
            .collect())
    }

    /// Float version of [`FiniteChain::absorption_exact`].
    pub fn absorption_f64(&self, fixed: &[Option<f64>]) -> Result<Vec<f64>> {
        let n = self.len();
        let positive: Vec<bool> = fixed.iter().map(|f| f.is_some_and(|v| v != 0.0)).collect();
        let live = self.can_reach(&positive);
        let mut idx = vec![usize::MAX; n];
        let mut unknowns = Vec::new();
        for i in 0..n {
            if fixed[i].is_none() && live[i] {
                idx[i] = unknowns.len();
                unknowns.push(i);
            }
        }
        let mut sys = Sparse::new(unknowns.len());
        let mut rhs = vec![0.0; unknowns.len()];
        for (k, &i) in unknowns.iter().enumerate() {
            sys.push(k, k, 1.0);
            for (j, p) in self.row_f64(i) {
                if let Some(v) = fixed[j] {
                    rhs[k] += p * v;
                } else if idx[j] != usize::MAX {
                    sys.push(k, idx[j], -p);
                }
            }
        }
        let x = linalg::sparse_solve(&sys, &rhs)?;
        Ok((0..n)
            .map(|i| match fixed[i] {
                Some(v) => v,
                None if idx[i] != usize::MAX => x[idx[i]].clamp(0.0, f64::INFINITY),
                None => 0.0,
            })
            .collect())
    }

    /// Probabilities of eventually reaching `targets`, for every node.
    pub fn reach_probabilities(&self, targets: &[bool], policy: NumericPolicy) -> Result<Vec<Prob>> {
        let live = self.can_reach(targets);
        let unknowns = (0..self.len()).filter(|&i| live[i] && !targets[i]).count();
        if self.is_exact() && policy.exact_for(unknowns) {
            let fixed: Vec<Option<Rational>> =
                targets.iter().map(|&t| if t { Some(Rational::one()) } else { None }).collect();
            return Ok(self.absorption_exact(&fixed)?.into_iter().map(Prob::Exact).collect());
        }
        let fixed: Vec<Option<f64>> = targets.iter().map(|&t| if t { Some(1.0) } else { None }).collect();
        Ok(self.absorption_f64(&fixed)?.into_iter().map(|v| Prob::Float(v.min(1.0))).collect())
    }

    pub fn reach_probability(&self, targets: &[bool], start: usize, policy: NumericPolicy) -> Result<Prob> {
        if targets[start] {
            return Ok(Prob::Exact(Rational::one()));
        }
        Ok(self.reach_probabilities(targets, policy)?.swap_remove(start))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SccDecomposition {
    /// Components in reverse topological order: every component appears
    /// after all components reachable from it.
    pub components: Vec<Vec<usize>>,
    pub is_bottom: Vec<bool>,
    pub component_of: Vec<usize>,
}

impl SccDecomposition {
    pub fn bottoms(&self) -> impl Iterator<Item = (usize, &[usize])> + '_ {
        self.components.iter().enumerate().filter(|(k, _)| self.is_bottom[*k]).map(|(k, c)| (k, c.as_slice()))
    }
}

/// Iterative Tarjan SCC over an adjacency list.
pub fn tarjan(succ: &[Vec<usize>]) -> SccDecomposition {
    let n = succ.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut component_of = vec![usize::MAX; n];
    let mut counter = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut next)) = call.last_mut() {
            if *next < succ[v].len() {
                let w = succ[v][*next];
                *next += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(u, _)) = call.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        component_of[w] = components.len();
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    components.push(comp);
                }
            }
        }
    }
    let is_bottom = components
        .iter()
        .enumerate()
        .map(|(k, c)| c.iter().all(|&v| succ[v].iter().all(|&w| component_of[w] == k)))
        .collect();
    SccDecomposition { components, is_bottom, component_of }
}

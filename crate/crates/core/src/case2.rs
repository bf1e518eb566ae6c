//! Case II analysis: the stopping criterion ignores one counter, which is
//! studied through its one-counter abstraction, the `G` matrix of
//! first-passage probabilities and the chain of successive zero visits.

use num_traits::{One, Zero};

use std::collections::{HashMap, VecDeque};

use crate::case1::{approx_case1_with, ApproxOptions, BsccAnalysis};
use crate::coverability::all_positive;
use crate::error::{Error, Result};
use crate::finite_chain::FiniteChain;
use crate::linalg::{self, Dense, Sparse};
use crate::model::{forget_counter, transition_distribution, zero_set, Configuration, Kind, Pmc, Rule};
use crate::rational::{self, Rational};
use crate::report::Verdict;

/// The one-counter pMC tracking counter `counter` of a model; the deltas of
/// the remaining counters become per-rule rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct OneCounterAbstraction {
    pub counter: usize,
    pub model: Pmc,
    /// Reward vector of each rule of `model`, of length `d - 1`.
    pub rewards: Vec<Vec<i8>>,
}

impl OneCounterAbstraction {
    pub fn reward_dimension(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }
}

/// Keeps the rules that fire while every other counter is positive:
/// zero test `∅` stays `∅` and `{i}` becomes `{1}`. Other classes stop
/// the run and are dropped.
pub fn project_counter(pmc: &Pmc, i: usize) -> Result<OneCounterAbstraction> {
    let d = pmc.dimension();
    if i == 0 || i > d {
        return Err(Error::Precondition(format!("counter {i} out of range 1..={d}")));
    }
    let bit = 1u64 << (i - 1);
    let mut rules = Vec::new();
    let mut rewards = Vec::new();
    for r in pmc.rules() {
        if r.zero_test != 0 && r.zero_test != bit {
            continue;
        }
        let mut reward = r.delta.clone();
        let own = reward.remove(i - 1);
        rules.push(Rule {
            src: r.src,
            delta: vec![own],
            zero_test: if r.zero_test == 0 { 0 } else { 1 },
            label: r.label.clone(),
            dst: r.dst,
            weight: r.weight,
        });
        rewards.push(reward);
    }
    let model = Pmc::new(pmc.name().map(str::to_string), 1, pmc.states().to_vec(), rules, Kind::General)?;
    Ok(OneCounterAbstraction { counter: i, model, rewards })
}

/// One-step matrices of a one-counter abstraction. `q_*` act at counter 0,
/// `p_*` at positive counter values; the suffix names the counter move.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMatrices {
    pub n: usize,
    pub names: Vec<String>,
    pub q_right: Vec<Vec<Rational>>,
    pub q_up: Vec<Vec<Rational>>,
    pub p_down: Vec<Vec<Rational>>,
    pub p_right: Vec<Vec<Rational>>,
    pub p_up: Vec<Vec<Rational>>,
    /// Expected one-step reward at counter 0, indexed `[coordinate][state]`.
    pub delta_zero: Vec<Vec<Rational>>,
    /// Expected one-step reward at positive counter values.
    pub delta_pos: Vec<Vec<Rational>>,
}

fn zero_matrix(n: usize) -> Vec<Vec<Rational>> {
    vec![vec![Rational::zero(); n]; n]
}

pub fn to_dense(m: &[Vec<Rational>]) -> Dense {
    Dense::from_rows(&m.iter().map(|r| r.iter().map(rational::to_f64).collect()).collect::<Vec<_>>())
}

pub fn step_matrices(b: &OneCounterAbstraction) -> StepMatrices {
    let n = b.model.num_states();
    let k = b.reward_dimension();
    let mut m = StepMatrices {
        n,
        names: b.model.states().to_vec(),
        q_right: zero_matrix(n),
        q_up: zero_matrix(n),
        p_down: zero_matrix(n),
        p_right: zero_matrix(n),
        p_up: zero_matrix(n),
        delta_zero: vec![vec![Rational::zero(); n]; k],
        delta_pos: vec![vec![Rational::zero(); n]; k],
    };
    for p in 0..n {
        for mask in [1u64, 0] {
            let idx = b.model.enabled_indices(p, mask);
            if idx.is_empty() {
                let target = if mask == 1 { &mut m.q_right } else { &mut m.p_right };
                target[p][p] = Rational::one();
                continue;
            }
            let total: u64 = idx.iter().map(|&r| b.model.rules()[r].weight).sum();
            for r in idx {
                let rule = &b.model.rules()[r];
                let y = Rational::new(rule.weight.into(), total.into());
                let target = match (mask, rule.delta[0]) {
                    (1, 0) => &mut m.q_right,
                    (1, _) => &mut m.q_up,
                    (_, -1) => &mut m.p_down,
                    (_, 0) => &mut m.p_right,
                    _ => &mut m.p_up,
                };
                target[p][rule.dst] += &y;
                let delta = if mask == 1 { &mut m.delta_zero } else { &mut m.delta_pos };
                for (c, &x) in b.rewards[r].iter().enumerate() {
                    if x != 0 {
                        delta[c][p] += &y * Rational::from_integer(x.into());
                    }
                }
            }
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GMethod {
    /// `G_{k+1} = P↓ + P→G_k + P↑G_k²` from `G_0 = 0`.
    ValueIteration,
    /// Newton's method on the same system, also started from 0.
    Newton,
}

#[derive(Clone, Debug)]
pub struct GOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: GMethod,
}

impl Default for GOptions {
    fn default() -> Self {
        GOptions { tol: 1e-12, max_iter: 1_000_000, method: GMethod::Newton }
    }
}

#[derive(Clone, Debug)]
pub struct GSolution {
    pub g: Dense,
    /// `1 − G·1`, clamped at 0.
    pub up: Vec<f64>,
    pub iterations: usize,
    /// `‖P↓ + P→G + P↑G² − G‖∞` at the returned matrix.
    pub residual: f64,
}

fn g_map(pd: &Dense, pr: &Dense, pu: &Dense, g: &Dense) -> Dense {
    pd.add(&pr.mul(g)).add(&pu.mul(&g.mul(g)))
}

fn finish(pd: &Dense, pr: &Dense, pu: &Dense, g: Dense, iterations: usize) -> GSolution {
    let residual = g_map(pd, pr, pu, &g).max_abs_diff(&g);
    let up = g.row_sums().iter().map(|s| (1.0 - s).max(0.0)).collect();
    GSolution { g, up, iterations, residual }
}

/// Least non-negative solution of `G = P↓ + P→G + P↑G²`.
pub fn solve_g_matrix(m: &StepMatrices, opts: &GOptions) -> Result<GSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::Precondition("tolerance must be positive".into()));
    }
    let (pd, pr, pu) = (to_dense(&m.p_down), to_dense(&m.p_right), to_dense(&m.p_up));
    let mut g = Dense::zeros(m.n, m.n);
    let mut last = f64::INFINITY;
    let newton = opts.method == GMethod::Newton && m.n <= 40;
    let support = if newton { g_support(&pd, &pr, &pu) } else { Vec::new() };
    for it in 1..=opts.max_iter {
        let next = if newton {
            match newton_step(&pd, &pr, &pu, &g, &support) {
                Some(h) => h,
                None => g_map(&pd, &pr, &pu, &g),
            }
        } else {
            g_map(&pd, &pr, &pu, &g)
        };
        last = next.max_abs_diff(&g);
        g = next;
        if last <= opts.tol {
            return Ok(finish(&pd, &pr, &pu, g, it));
        }
    }
    Err(Error::ResourceExhausted(format!(
        "G iteration stopped after {} steps with change {last:e}",
        opts.max_iter
    )))
}

/// Support of the least solution `G`, by Boolean fixed-point iteration.
fn g_support(pd: &Dense, pr: &Dense, pu: &Dense) -> Vec<bool> {
    let n = pd.rows;
    let mut s: Vec<bool> = pd.data.iter().map(|&x| x > 0.0).collect();
    loop {
        let mut changed = false;
        for a in 0..n {
            for b in 0..n {
                if s[a * n + b] {
                    continue;
                }
                let via_right = (0..n).any(|c| pr[(a, c)] > 0.0 && s[c * n + b]);
                let via_up = || (0..n).any(|c| pu[(a, c)] > 0.0 && (0..n).any(|e| s[c * n + e] && s[e * n + b]));
                if via_right || via_up() {
                    s[a * n + b] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return s;
        }
    }
}

/// One Newton step, clamped to `[0, 1]`, on the entries in `support` (the
/// others are 0 in the least solution). The Jacobian acts on `H` as
/// `H − (P→ + P↑G)H − P↑HG`; it is assembled on the row-major vectorization.
fn newton_step(pd: &Dense, pr: &Dense, pu: &Dense, g: &Dense, support: &[bool]) -> Option<Dense> {
    let n = g.rows;
    let f = g_map(pd, pr, pu, g).sub(g);
    let left = pr.add(&pu.mul(g));
    let mut var = vec![usize::MAX; n * n];
    let mut vars = Vec::new();
    for (k, &on) in support.iter().enumerate() {
        if on {
            var[k] = vars.len();
            vars.push(k);
        }
    }
    let mut sys = Sparse::new(vars.len());
    for (row, &k) in vars.iter().enumerate() {
        let (a, b) = (k / n, k % n);
        sys.push(row, row, 1.0);
        for c in 0..n {
            let l = left[(a, c)];
            if l != 0.0 && var[c * n + b] != usize::MAX {
                sys.push(row, var[c * n + b], -l);
            }
            let p = pu[(a, c)];
            if p != 0.0 {
                for e in 0..n {
                    let v = g[(e, b)];
                    if v != 0.0 && var[c * n + e] != usize::MAX {
                        sys.push(row, var[c * n + e], -p * v);
                    }
                }
            }
        }
    }
    let rhs: Vec<f64> = vars.iter().map(|&k| f.data[k]).collect();
    let h = linalg::sparse_solve(&sys, &rhs).ok()?;
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut out = g.clone();
    for (&k, d) in vars.iter().zip(h) {
        out.data[k] = (out.data[k] + d).clamp(0.0, 1.0);
    }
    Some(out)
}

/// The chain of successive zero visits: node `q < n` is `q` at counter 0,
/// node `n + q` is the absorbing `q↑`.
#[derive(Clone, Debug)]
pub struct XChain {
    pub chain: FiniteChain,
    /// `A = Q→ + Q↑G`: probabilities of the next zero visit.
    pub a: Dense,
    pub up: Vec<f64>,
    /// Total probability mass dropped by the pruning threshold.
    pub pruned_mass: f64,
}

pub fn build_x_chain(m: &StepMatrices, g: &GSolution, tol: f64) -> Result<XChain> {
    let n = m.n;
    let a = to_dense(&m.q_right).add(&to_dense(&m.q_up).mul(&g.g));
    let mut rows = Vec::with_capacity(2 * n);
    let mut up = Vec::with_capacity(n);
    let mut pruned = 0.0f64;
    for q in 0..n {
        let u = (1.0 - a.row(q).iter().sum::<f64>()).max(0.0);
        up.push(u);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..n {
            let x = a[(q, r)];
            if x > tol {
                row.push((r, x));
            } else {
                pruned += x;
            }
        }
        // Near a critical counter `G` is only accurate to about the square
        // root of the tolerance, so escape mass below that is solver noise.
        if u > tol.sqrt() {
            row.push((n + q, u));
        } else {
            pruned += u;
        }
        let s: f64 = row.iter().map(|e| e.1).sum();
        if row.is_empty() || !(s > 0.0) {
            return Err(Error::Numeric(format!("zero-visit chain row {q} is empty")));
        }
        rows.push(row.into_iter().map(|(j, x)| (j, x / s)).collect());
    }
    for q in 0..n {
        rows.push(vec![(n + q, 1.0)]);
    }
    let mut names = m.names.clone();
    names.extend(m.names.iter().map(|s| format!("{s}^")));
    Ok(XChain { chain: FiniteChain::float(rows)?.with_names(names), a, up, pruned_mass: pruned })
}


/// `B = P→ + P↑G + P↑`: one-level moves seen from counter 1 while waiting
/// for the next zero.
pub fn b_matrix(m: &StepMatrices, g: &GSolution) -> Dense {
    let pu = to_dense(&m.p_up);
    to_dense(&m.p_right).add(&pu.mul(&g.g)).add(&pu)
}

/// Expected steps to the next zero visit.
#[derive(Clone, Debug)]
pub struct ReturnTimes {
    /// `e↓[q]` from `q(1)`; zero outside `relevant`.
    pub e_down: Vec<f64>,
    /// `e[q] = 1 + Q↑e↓` from `q(0)`; meaningful for the roots only.
    pub e: Vec<f64>,
    /// States whose `e↓` the roots depend on.
    pub relevant: Vec<bool>,
    pub finite: bool,
    /// Collatz–Wielandt bound on the spectral radius of `B` on the
    /// relevant states, when a positive solution exists.
    pub spectral_bound: Option<f64>,
    pub b: Dense,
}

const SUPPORT_TOL: f64 = 1e-14;
/// Expected times above this are treated as infinite.
const TIME_CAP: f64 = 1e12;
/// `G` is only known up to its solver tolerance, and a critical counter shows
/// up as a spectral radius of `B` just below 1; radii in this band count as 1.
const CRITICAL_BAND: f64 = 1e-6;

pub fn expected_return_times(m: &StepMatrices, g: &GSolution) -> ReturnTimes {
    expected_return_times_from(m, g, &(0..m.n).collect::<Vec<_>>())
}

/// Return times for the zero-level states `roots`; only the states reachable
/// from them above zero enter the linear system.
pub fn expected_return_times_from(m: &StepMatrices, g: &GSolution, roots: &[usize]) -> ReturnTimes {
    let n = m.n;
    let b = b_matrix(m, g);
    let qu = to_dense(&m.q_up);
    let mut relevant = vec![false; n];
    let mut stack = Vec::new();
    for &q in roots {
        for r in 0..n {
            if qu[(q, r)] > 0.0 && !relevant[r] {
                relevant[r] = true;
                stack.push(r);
            }
        }
    }
    while let Some(s) = stack.pop() {
        for t in 0..n {
            if b[(s, t)] > SUPPORT_TOL && !relevant[t] {
                relevant[t] = true;
                stack.push(t);
            }
        }
    }
    let idx: Vec<usize> = (0..n).filter(|&s| relevant[s]).collect();
    let bs = b.select(&idx, &idx);
    let mut sys = Dense::identity(idx.len()).sub(&bs);
    for v in sys.data.iter_mut() {
        if v.abs() < SUPPORT_TOL {
            *v = 0.0;
        }
    }
    let sol = if idx.is_empty() { Some(Vec::new()) } else { linalg::dense_solve(&sys, &vec![1.0; idx.len()]) };
    let mut e_down = vec![0.0; n];
    let mut finite = false;
    let mut spectral_bound = None;
    if let Some(x) = sol {
        let ok = x.iter().all(|&v| v.is_finite() && v >= 1.0 - 1e-9 && v <= TIME_CAP);
        if ok {
            let cw = if x.is_empty() { Some(0.0) } else { linalg::collatz_wielandt_bound(&bs, &x) };
            spectral_bound = cw;
            finite = cw.is_some_and(|r| r < 1.0 - CRITICAL_BAND);
            for (k, &s) in idx.iter().enumerate() {
                e_down[s] = x[k];
            }
        }
    }
    let e = (0..n).map(|q| 1.0 + qu.row(q).iter().zip(&e_down).map(|(a, b)| a * b).sum::<f64>()).collect();
    ReturnTimes { e_down, e, relevant, finite, spectral_bound, b }
}

/// Expected rewards accumulated until the next zero visit.
#[derive(Clone, Debug)]
pub struct RewardVectors {
    /// `δ↓ = (I − B)⁻¹δ_{>0!}`, indexed `[coordinate][state]`.
    pub delta_down: Vec<Vec<f64>>,
    /// `δ_1 = δ_{=0!} + Q↑δ↓`.
    pub delta_one: Vec<Vec<f64>>,
}

pub fn expected_rewards(m: &StepMatrices, rt: &ReturnTimes) -> Result<RewardVectors> {
    if !rt.finite {
        return Err(Error::Precondition("expected return times are infinite".into()));
    }
    let n = m.n;
    let idx: Vec<usize> = (0..n).filter(|&s| rt.relevant[s]).collect();
    let sys = Dense::identity(idx.len()).sub(&rt.b.select(&idx, &idx));
    let lu = if idx.is_empty() { None } else { linalg::DenseLu::factor(&sys) };
    if lu.is_none() && !idx.is_empty() {
        return Err(Error::Numeric("I − B is singular on the relevant states".into()));
    }
    let qu = to_dense(&m.q_up);
    let mut delta_down = Vec::new();
    let mut delta_one = Vec::new();
    for c in 0..m.delta_pos.len() {
        let mut dd = vec![0.0; n];
        if let Some(lu) = &lu {
            let rhs: Vec<f64> = idx.iter().map(|&s| rational::to_f64(&m.delta_pos[c][s])).collect();
            for (k, v) in lu.solve(&rhs).into_iter().enumerate() {
                dd[idx[k]] = v;
            }
        }
        let d1 = (0..n)
            .map(|q| rational::to_f64(&m.delta_zero[c][q]) + qu.row(q).iter().zip(&dd).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        delta_down.push(dd);
        delta_one.push(d1);
    }
    Ok(RewardVectors { delta_down, delta_one })
}

/// Moves of the one-counter model from `q` at counter zero or above it:
/// `(target, counter change, rule)`; `None` marks the forced self-loop.
fn oc_moves(b: &OneCounterAbstraction, q: usize, zero: bool) -> Vec<(usize, i8, Option<usize>)> {
    let idx = b.model.enabled_indices(q, if zero { 1 } else { 0 });
    if idx.is_empty() {
        return vec![(q, 0, None)];
    }
    idx.into_iter().map(|k| (b.model.rules()[k].dst, b.model.rules()[k].delta[0], Some(k))).collect()
}

/// Least total reward of coordinate `coord` over paths from `q(0)` back to
/// `q(0)` that do not pass `q(0)` in between and keep the counter at most
/// `cap`. `None` if a negative cycle makes it unbounded; `i64::MAX` if no
/// such path exists.
fn min_excursion_reward(b: &OneCounterAbstraction, q: usize, coord: usize, cap: usize) -> Option<i64> {
    let n = b.model.num_states();
    let nodes = n * (cap + 1) + 1;
    let sink = nodes - 1;
    let mut edges: Vec<(usize, usize, i64)> = Vec::new();
    for c in 0..=cap {
        for s in 0..n {
            for (dst, dc, rule) in oc_moves(b, s, c == 0) {
                let nc = c as i64 + dc as i64;
                if nc < 0 || nc as usize > cap {
                    continue;
                }
                let w = rule.map_or(0, |k| b.rewards[k][coord] as i64);
                let to = if nc == 0 && dst == q { sink } else { nc as usize * n + dst };
                edges.push((c * n + s, to, w));
            }
        }
    }
    const INF: i64 = i64::MAX / 4;
    let mut dist = vec![INF; nodes];
    dist[q] = 0;
    let mut settled = false;
    for _ in 0..nodes {
        let mut changed = false;
        for &(u, v, w) in &edges {
            if dist[u] < INF && dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                changed = true;
            }
        }
        if !changed {
            settled = true;
            break;
        }
    }
    if !settled {
        // Nodes still improvable lie on or after a negative cycle.
        let mut bad = vec![false; nodes];
        for &(u, v, w) in &edges {
            if dist[u] < INF && dist[u] + w < dist[v] {
                bad[v] = true;
            }
        }
        let mut stack: Vec<usize> = (0..nodes).filter(|&v| bad[v]).collect();
        while let Some(u) = stack.pop() {
            for &(a, v, _) in &edges {
                if a == u && !bad[v] {
                    bad[v] = true;
                    stack.push(v);
                }
            }
        }
        if bad[sink] {
            return None;
        }
    }
    Some(if dist[sink] >= INF { i64::MAX } else { dist[sink] })
}

/// `botinf` for reward coordinate `coord` (0-based) on a zero-level bottom
/// component: the least `j` such that every return to `q(0)` accumulates
/// reward at least `−j`. Paths with counter up to `2|Q|²` are searched,
/// and a strictly better path below `8|Q|²` is taken as evidence of `∞`.
pub fn botinf(b: &OneCounterAbstraction, component: &[usize], coord: usize) -> Vec<Option<u64>> {
    let n = b.model.num_states();
    let h = 2 * n * n;
    let mut out = Vec::with_capacity(component.len());
    for &q in component {
        let v = match (min_excursion_reward(b, q, coord, h), min_excursion_reward(b, q, coord, 4 * h)) {
            (Some(lo), Some(hi)) if hi >= lo => Some(if lo == i64::MAX { 0 } else { (-lo).max(0) as u64 }),
            _ => None,
        };
        out.push(v);
    }
    if out.iter().any(Option::is_none) {
        return vec![None; component.len()];
    }
    out
}

/// Per-component data of the zero-visit chain: invariant distribution,
/// return times, rewards, oc-trend and divergence of every reward.
#[derive(Clone, Debug)]
pub struct OcAnalysis {
    pub component: Vec<usize>,
    pub mu: Vec<f64>,
    /// `e` on the component.
    pub e: Vec<f64>,
    pub e_down: Vec<f64>,
    /// `δ_1[coord][pos]`.
    pub delta: Vec<Vec<f64>>,
    pub delta_down: Vec<Vec<f64>>,
    pub t_oc: Vec<f64>,
    /// Coordinates whose trend is within tolerance of zero.
    pub zero_trend: Vec<bool>,
    pub botinf: Vec<Vec<Option<u64>>>,
    pub diverging: Vec<bool>,
    pub spectral_bound: Option<f64>,
}

impl OcAnalysis {
    pub fn all_diverging(&self) -> bool {
        self.diverging.iter().all(|&b| b)
    }
    pub fn position(&self, q: usize) -> Option<usize> {
        self.component.iter().position(|&c| c == q)
    }
    pub fn positive(&self, coord: usize) -> bool {
        !self.zero_trend[coord] && self.t_oc[coord] > 0.0
    }
}

/// Analyzes a bottom component `component ⊆ Q` of the zero-visit chain.
/// Fails with a precondition error when the expected return time is
/// infinite (the counter is critical there).
pub fn analyze_oc(
    b: &OneCounterAbstraction,
    m: &StepMatrices,
    g: &GSolution,
    x: &XChain,
    component: &[usize],
    zero_tol: f64,
) -> Result<OcAnalysis> {
    let rt = expected_return_times_from(m, g, component);
    if !rt.finite {
        let names: Vec<&str> = component.iter().map(|&q| b.model.state_name(q)).collect();
        return Err(Error::Precondition(format!(
            "critical counter: expected return time to zero is infinite in component {{{}}}",
            names.join(", ")
        )));
    }
    let rv = expected_rewards(m, &rt)?;
    let mu: Vec<f64> = x
        .chain
        .stationary_distribution(component, crate::finite_chain::NumericPolicy::Float)?
        .iter()
        .map(|p| p.to_f64())
        .collect();
    let e: Vec<f64> = component.iter().map(|&q| rt.e[q]).collect();
    let me: f64 = mu.iter().zip(&e).map(|(a, b)| a * b).sum();
    let k = b.reward_dimension();
    let mut delta = Vec::with_capacity(k);
    let mut t_oc = Vec::with_capacity(k);
    let mut zero_trend = Vec::with_capacity(k);
    let mut table = Vec::with_capacity(k);
    let mut diverging = Vec::with_capacity(k);
    for c in 0..k {
        let d: Vec<f64> = component.iter().map(|&q| rv.delta_one[c][q]).collect();
        let t = mu.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / me;
        let z = t.abs() <= zero_tol;
        let bi = botinf(b, component, c);
        diverging.push((!z && t > 0.0) || (z && bi.iter().all(Option::is_some)));
        delta.push(d);
        t_oc.push(t);
        zero_trend.push(z);
        table.push(bi);
    }
    Ok(OcAnalysis {
        component: component.to_vec(),
        mu,
        e,
        e_down: rt.e_down,
        delta,
        delta_down: rv.delta_down,
        t_oc,
        zero_trend,
        botinf: table,
        diverging,
        spectral_bound: rt.spectral_bound,
    })
}

/// The model rewritten so that the run starts with the free counter at 0:
/// a chain of fresh states raises it to its initial value first.
#[derive(Clone, Debug)]
pub struct Normalized {
    pub pmc: Pmc,
    pub start: Configuration,
    /// Number of fresh states appended after the original ones.
    pub fresh: usize,
}

pub fn normalize_start(pmc: &Pmc, start: &Configuration, i: usize) -> Result<Normalized> {
    let k = start.counters[i - 1] as usize;
    if k == 0 {
        return Ok(Normalized { pmc: pmc.clone(), start: start.clone(), fresh: 0 });
    }
    if k > 100_000 {
        return Err(Error::Precondition("free counter start value too large to normalize".into()));
    }
    let n = pmc.num_states();
    let mut states = pmc.states().to_vec();
    let mut prefix = String::from("_init");
    while states.iter().any(|s| s.starts_with(&prefix)) {
        prefix.insert(0, '_');
    }
    for j in 0..k {
        states.push(format!("{prefix}.{j}"));
    }
    let mut rules = pmc.rules().to_vec();
    let mut delta = vec![0i8; pmc.dimension()];
    delta[i - 1] = 1;
    for j in 0..k {
        rules.push(Rule {
            src: n + j,
            delta: delta.clone(),
            zero_test: if j == 0 { 1u64 << (i - 1) } else { 0 },
            label: None,
            dst: if j + 1 == k { start.state } else { n + j + 1 },
            weight: 1,
        });
    }
    let model = Pmc::new(pmc.name().map(str::to_string), pmc.dimension(), states, rules, Kind::General)?;
    let mut counters = start.counters.clone();
    counters[i - 1] = 0;
    Ok(Normalized { pmc: model, start: Configuration::new(n, counters), fresh: k })
}

#[derive(Clone, Debug)]
pub struct Case2Options {
    /// Depth bound of the forward search for certificates.
    pub search_bound: usize,
    pub node_budget: usize,
    pub g: GOptions,
    /// Trends within this distance of zero count as zero.
    pub zero_tol: f64,
    /// Largest floor component solved in rational arithmetic.
    pub exact_cap: usize,
}

impl Default for Case2Options {
    fn default() -> Self {
        Case2Options { search_bound: 256, node_budget: 300_000, g: GOptions::default(), zero_tol: 1e-9, exact_cap: crate::finite_chain::DEFAULT_EXACT_CAP }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WitnessKind {
    /// Repeatable loop at free counter 0 through a zero-visit component
    /// where all rewards diverge.
    ZeroLevelPump,
    /// Repeatable loop with all counters positive through a bottom
    /// component of the floor chain where all counters diverge.
    FloorPump,
    /// The reachable configuration space is finite and some reachable
    /// configuration cannot reach a stopping one.
    FiniteTrap,
}

impl WitnessKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WitnessKind::ZeroLevelPump => "zero_level_pump",
            WitnessKind::FloorPump => "floor_pump",
            WitnessKind::FiniteTrap => "finite_trap",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Case2Witness {
    pub kind: WitnessKind,
    /// Safe path in the normalized model.
    pub path: Vec<Configuration>,
    /// Index in `path` where the repeatable loop starts.
    pub loop_start: Option<usize>,
    pub component: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct QualitativeCase2 {
    pub verdict: Verdict,
    pub witness: Option<Case2Witness>,
    pub normalized: Normalized,
    pub g_residual: f64,
    pub pruned_mass: f64,
    /// Reachable bottom components of the zero-visit chain inside `Q`.
    pub oc: Vec<OcAnalysis>,
    /// Whether some escape node `q↑` is reachable.
    pub up_reachable: bool,
    /// Floor-chain components with all counters diverging.
    pub floor: Vec<BsccAnalysis>,
    pub explored: usize,
    pub exhausted: bool,
    pub diagnostics: Vec<String>,
}

/// Index of reward coordinate `k` as a counter (1-based) when `i` is free.
pub fn reward_counter(i: usize, k: usize) -> usize {
    if k + 1 < i {
        k + 1
    } else {
        k + 2
    }
}

pub fn qualitative_case2(pmc: &Pmc, start: &Configuration, i: usize) -> Result<QualitativeCase2> {
    qualitative_case2_with(pmc, start, i, &Case2Options::default())
}

/// Semi-decides whether the run stops almost surely when every counter
/// but `i` is watched for zero.
pub fn qualitative_case2_with(
    pmc: &Pmc,
    start: &Configuration,
    i: usize,
    opts: &Case2Options,
) -> Result<QualitativeCase2> {
    let d = pmc.dimension();
    if i == 0 || i > d {
        return Err(Error::Precondition(format!("free counter {i} out of range 1..={d}")));
    }
    if start.counters.len() != d || start.state >= pmc.num_states() {
        return Err(Error::Precondition("initial configuration does not match the model".into()));
    }
    let norm = normalize_start(pmc, start, i)?;
    let mut out = QualitativeCase2 {
        verdict: Verdict::Unknown,
        witness: None,
        normalized: norm.clone(),
        g_residual: 0.0,
        pruned_mass: 0.0,
        oc: Vec::new(),
        up_reachable: false,
        floor: Vec::new(),
        explored: 0,
        exhausted: false,
        diagnostics: Vec::new(),
    };
    if norm.fresh > 0 {
        out.diagnostics.push(format!("normalized the start with {} fresh state(s)", norm.fresh));
    }
    let stop_mask: u64 = ((1u64 << d) - 1) & !(1u64 << (i - 1));
    if stop_mask == 0 {
        out.verdict = Verdict::NotAlmostSure;
        out.diagnostics.push("no counter is watched, so the run never stops".into());
        return Ok(out);
    }
    if zero_set(start) & stop_mask != 0 {
        out.verdict = Verdict::AlmostSure;
        out.diagnostics.push("the initial configuration already stops".into());
        return Ok(out);
    }
    let model = &norm.pmc;
    let b = project_counter(model, i)?;
    let m = step_matrices(&b);
    let g = solve_g_matrix(&m, &opts.g)?;
    out.g_residual = g.residual;
    let x = build_x_chain(&m, &g, opts.g.tol)?;
    out.pruned_mass = x.pruned_mass;
    if x.pruned_mass > 0.0 {
        out.diagnostics.push(format!("zero-visit chain pruned mass {:.3e}", x.pruned_mass));
    }
    let n = model.num_states();
    let reach = x.chain.reachable_from(norm.start.state);
    let scc = x.chain.scc_decomposition();
    for (_, comp) in scc.bottoms() {
        if !reach[comp[0]] {
            continue;
        }
        if comp[0] >= n {
            out.up_reachable = true;
            continue;
        }
        let mut comp = comp.to_vec();
        comp.sort_unstable();
        out.oc.push(analyze_oc(&b, &m, &g, &x, &comp, opts.zero_tol)?);
    }
    for a in &out.oc {
        for (c, &z) in a.zero_trend.iter().enumerate() {
            if z {
                out.diagnostics.push(format!(
                    "oc-trend of counter {} is within {:e} of zero ({:e})",
                    reward_counter(i, c),
                    opts.zero_tol,
                    a.t_oc[c]
                ));
            }
        }
    }
    if out.up_reachable {
        let (floor, analyses) = crate::case1::analyze_bsccs_capped(model, opts.exact_cap)?;
        out.diagnostics.extend(floor.diagnostics(model));
        // Fresh start states are left for good, so their floor components
        // are never re-entered.
        out.floor = analyses
            .into_iter()
            .filter(|a| a.all_diverging() && a.component.iter().all(|&q| q < pmc.num_states()))
            .collect();
    }
    let oc_targets: Vec<&OcAnalysis> = out.oc.iter().filter(|a| a.all_diverging()).collect();
    if oc_targets.is_empty() && out.floor.is_empty() {
        out.verdict = Verdict::AlmostSure;
        return Ok(out);
    }
    let search = CertificateSearch::new(model, i, stop_mask, &oc_targets, &out.floor, opts);
    let res = search.run(&norm.start)?;
    out.explored = res.explored;
    out.exhausted = res.exhausted;
    match res.witness {
        Some(w) => {
            out.verdict = Verdict::NotAlmostSure;
            out.witness = Some(w);
        }
        None if res.exhausted => {
            out.verdict = Verdict::AlmostSure;
            out.diagnostics.push("reachable configuration space is finite and every part of it can stop".into());
        }
        None => {
            out.verdict = Verdict::Unknown;
            out.diagnostics.push(format!(
                "no certificate within {} steps / {} configurations",
                opts.search_bound, opts.node_budget
            ));
        }
    }
    Ok(out)
}

struct SearchResult {
    witness: Option<Case2Witness>,
    explored: usize,
    exhausted: bool,
}

struct CertificateSearch<'a> {
    pmc: &'a Pmc,
    i: usize,
    stop_mask: u64,
    oc_of: Vec<Option<&'a OcAnalysis>>,
    floor_of: Vec<Option<&'a BsccAnalysis>>,
    opts: &'a Case2Options,
}

impl<'a> CertificateSearch<'a> {
    fn new(
        pmc: &'a Pmc,
        i: usize,
        stop_mask: u64,
        oc: &[&'a OcAnalysis],
        floor: &'a [BsccAnalysis],
        opts: &'a Case2Options,
    ) -> Self {
        let n = pmc.num_states();
        let mut oc_of = vec![None; n];
        for a in oc {
            for &q in &a.component {
                oc_of[q] = Some(*a);
            }
        }
        let mut floor_of = vec![None; n];
        for a in floor {
            for &q in &a.component {
                floor_of[q] = Some(a);
            }
        }
        CertificateSearch { pmc, i, stop_mask, oc_of, floor_of, opts }
    }

    fn stops(&self, c: &Configuration) -> bool {
        zero_set(c) & self.stop_mask != 0
    }

    /// Counters of `c` meet the `botinf` floor of every zero-trend reward.
    fn above_botinf(&self, a: &OcAnalysis, c: &Configuration) -> bool {
        let pos = a.position(c.state).expect("state in component");
        (0..a.t_oc.len()).all(|k| {
            !a.zero_trend[k] || c.counters[reward_counter(self.i, k) - 1] >= a.botinf[k][pos].expect("diverging")
        })
    }

    fn dominates(later: &Configuration, earlier: &Configuration, strict: &[usize]) -> bool {
        later.counters.iter().zip(&earlier.counters).all(|(x, y)| x >= y)
            && strict.iter().all(|&c| later.counters[c - 1] > earlier.counters[c - 1])
    }

    fn path(nodes: &[Configuration], parent: &[usize], w: usize) -> Vec<usize> {
        let mut p = vec![w];
        let mut v = w;
        while parent[v] != usize::MAX {
            v = parent[v];
            p.push(v);
        }
        p.reverse();
        let _ = nodes;
        p
    }

    /// Checks the pumping patterns ending at node `w`.
    fn certificate(&self, nodes: &[Configuration], parent: &[usize], w: usize) -> Option<(WitnessKind, Option<usize>, Vec<usize>)> {
        let c = &nodes[w];
        let i = self.i;
        if let Some(a) = self.oc_of[c.state] {
            if c.counters[i - 1] == 0 {
                let strict: Vec<usize> =
                    (0..a.t_oc.len()).filter(|&k| a.positive(k)).map(|k| reward_counter(i, k)).collect();
                if strict.is_empty() {
                    if self.above_botinf(a, c) {
                        return Some((WitnessKind::ZeroLevelPump, None, a.component.clone()));
                    }
                } else {
                    let mut v = parent[w];
                    while v != usize::MAX {
                        let e = &nodes[v];
                        if e.state == c.state
                            && e.counters[i - 1] == 0
                            && self.above_botinf(a, e)
                            && Self::dominates(c, e, &strict)
                        {
                            return Some((WitnessKind::ZeroLevelPump, Some(v), a.component.clone()));
                        }
                        v = parent[v];
                    }
                }
            }
        }
        if let Some(a) = self.floor_of[c.state] {
            if all_positive(c) {
                let strict: Vec<usize> = (0..a.trend.len()).filter(|&k| a.trend[k] > Rational::zero()).map(|k| k + 1).collect();
                let mut v = parent[w];
                while v != usize::MAX && all_positive(&nodes[v]) {
                    let e = &nodes[v];
                    if e.state == c.state && Self::dominates(c, e, &strict) {
                        let floors_ok = a.component.iter().position(|&q| q == e.state).is_some_and(|pos| {
                            (0..a.trend.len()).all(|k| {
                                a.trend[k] > Rational::zero() || e.counters[k] >= a.botfin[k][pos].unwrap_or(u64::MAX).max(1)
                            })
                        });
                        if floors_ok {
                            return Some((WitnessKind::FloorPump, Some(v), a.component.clone()));
                        }
                    }
                    v = parent[v];
                }
            }
        }
        None
    }

    /// A transition from `v` back to its ancestor `w` closes a loop with
    /// zero effect, which suffices when no counter needs to grow.
    fn revisit_certificate(&self, nodes: &[Configuration], parent: &[usize], v: usize, w: usize) -> bool {
        let c = &nodes[w];
        let Some(a) = self.floor_of[c.state] else { return false };
        if a.trend.iter().any(|t| *t > Rational::zero()) || !all_positive(c) {
            return false;
        }
        let pos = a.position(c.state).expect("state in component");
        if (0..a.trend.len()).any(|k| c.counters[k] < a.botfin[k][pos].unwrap_or(u64::MAX).max(1)) {
            return false;
        }
        let mut u = v;
        loop {
            if !all_positive(&nodes[u]) {
                return false;
            }
            if u == w {
                return true;
            }
            u = parent[u];
            if u == usize::MAX {
                return false;
            }
        }
    }

    fn run(&self, start: &Configuration) -> Result<SearchResult> {
        let mut nodes = vec![start.clone()];
        let mut parent = vec![usize::MAX];
        let mut depth = vec![0usize];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new()];
        let mut index: HashMap<Configuration, usize> = HashMap::from([(start.clone(), 0)]);
        let mut exhausted = true;
        let witness = |kind, loop_start: Option<usize>, comp, p: Vec<usize>, nodes: &[Configuration]| {
            let ls = loop_start.map(|v| p.iter().position(|&x| x == v).expect("ancestor on path"));
            Case2Witness { kind, path: p.iter().map(|&v| nodes[v].clone()).collect(), loop_start: ls, component: comp }
        };
        if let Some((kind, ls, comp)) = self.certificate(&nodes, &parent, 0) {
            let p = Self::path(&nodes, &parent, 0);
            return Ok(SearchResult { witness: Some(witness(kind, ls, comp, p, &nodes)), explored: 1, exhausted: false });
        }
        let mut queue = VecDeque::from([0usize]);
        while let Some(v) = queue.pop_front() {
            if depth[v] >= self.opts.search_bound {
                exhausted = false;
                continue;
            }
            for t in transition_distribution(self.pmc, &nodes[v].clone())? {
                if let Some(&w) = index.get(&t.target) {
                    succ[v].push(w);
                    if self.revisit_certificate(&nodes, &parent, v, w) {
                        let mut p = Self::path(&nodes, &parent, v);
                        p.push(w);
                        let comp = self.floor_of[nodes[w].state].expect("checked").component.clone();
                        let ls = p.iter().position(|&x| x == w);
                        let path = p.iter().map(|&x| nodes[x].clone()).collect();
                        let wit = Case2Witness { kind: WitnessKind::FloorPump, path, loop_start: ls, component: comp };
                        return Ok(SearchResult { witness: Some(wit), explored: nodes.len(), exhausted: false });
                    }
                    continue;
                }
                if nodes.len() >= self.opts.node_budget {
                    return Ok(SearchResult { witness: None, explored: nodes.len(), exhausted: false });
                }
                let w = nodes.len();
                index.insert(t.target.clone(), w);
                nodes.push(t.target.clone());
                parent.push(v);
                depth.push(depth[v] + 1);
                succ.push(Vec::new());
                succ[v].push(w);
                if self.stops(&t.target) {
                    continue;
                }
                if let Some((kind, ls, comp)) = self.certificate(&nodes, &parent, w) {
                    let p = Self::path(&nodes, &parent, w);
                    return Ok(SearchResult {
                        witness: Some(witness(kind, ls, comp, p, &nodes)),
                        explored: nodes.len(),
                        exhausted: false,
                    });
                }
                queue.push_back(w);
            }
        }
        if !exhausted {
            return Ok(SearchResult { witness: None, explored: nodes.len(), exhausted: false });
        }
        // Finite space: stopping is almost sure iff every reachable node can
        // still reach a stopping node.
        let stop: Vec<bool> = nodes.iter().map(|c| self.stops(c)).collect();
        let mut can = stop.clone();
        let mut pred: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (v, s) in succ.iter().enumerate() {
            for &w in s {
                pred[w].push(v);
            }
        }
        let mut stack: Vec<usize> = (0..nodes.len()).filter(|&v| stop[v]).collect();
        while let Some(w) = stack.pop() {
            for &v in &pred[w] {
                if !can[v] {
                    can[v] = true;
                    stack.push(v);
                }
            }
        }
        let trap = (0..nodes.len()).find(|&v| !can[v]);
        let witness = trap.map(|v| {
            let p = Self::path(&nodes, &parent, v);
            Case2Witness {
                kind: WitnessKind::FiniteTrap,
                path: p.iter().map(|&x| nodes[x].clone()).collect(),
                loop_start: None,
                component: Vec::new(),
            }
        });
        Ok(SearchResult { witness, explored: nodes.len(), exhausted: true })
    }
}

/// Probability of reaching a state in `targets` in a one-dimensional model,
/// up to `eps`, on the chain truncated at the counter height after which
/// reaching `targets` has probability at most `eps`.
pub fn onedim_reach_approx(pmc: &Pmc, start: &Configuration, targets: &[bool], eps: f64, max_states: usize) -> Result<f64> {
    if pmc.dimension() != 1 {
        return Err(Error::Precondition("one-dimensional model expected".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Precondition("ε must be positive".into()));
    }
    if targets[start.state] {
        return Ok(1.0);
    }
    let q = pmc.num_states() as f64;
    let p = rational::to_f64(&pmc.p_min_or_one());
    let stay = p.powf(q);
    let height = if stay >= 1.0 {
        pmc.num_states() as f64
    } else {
        (q * eps.min(1.0).ln() / (-stay).ln_1p()).ceil().max(q)
    };
    let cap = start.counters[0] as f64 + height;
    if !(cap * q <= max_states as f64) {
        return Err(Error::ResourceExhausted(format!("counter cap {cap:e} exceeds the state budget")));
    }
    let cap = cap as u64;
    let mut index: HashMap<Configuration, usize> = HashMap::from([(start.clone(), 0)]);
    let mut nodes = vec![start.clone()];
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    let mut fixed: Vec<Option<f64>> = vec![None];
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        let c = nodes[v].clone();
        if c.counters[0] >= cap {
            rows[v] = vec![(v, 1.0)];
            continue;
        }
        for t in transition_distribution(pmc, &c)? {
            let w = match index.get(&t.target) {
                Some(&w) => w,
                None => {
                    let w = nodes.len();
                    index.insert(t.target.clone(), w);
                    nodes.push(t.target.clone());
                    if targets[t.target.state] {
                        rows.push(vec![(w, 1.0)]);
                        fixed.push(Some(1.0));
                    } else {
                        rows.push(Vec::new());
                        fixed.push(None);
                        queue.push_back(w);
                    }
                    w
                }
            };
            rows[v].push((w, rational::to_f64(&t.prob)));
        }
    }
    let x = FiniteChain::float(rows)?.absorption_f64(&fixed)?;
    Ok(x[0].clamp(0.0, 1.0))
}

/// Two-counter instance whose qualitative answer encodes whether
/// `Σ √d_i ≥ k`: with `m = max(d ∪ {k})` and `c_i = (1 − d_i/m²)/2`,
/// counter 1 goes up with probability `k/(nm)` from `s_plus` and down
/// from `s_minus`, which is reached from `r_i` with probability `√d_i/m`.
pub fn sqrt_sum_instance(d_list: &[u64], k: u64) -> Result<Pmc> {
    if d_list.is_empty() || k == 0 || d_list.contains(&0) {
        return Err(Error::Precondition("inputs must be positive".into()));
    }
    let n = d_list.len() as u64;
    let m = d_list.iter().copied().max().unwrap_or(0).max(k);
    let m2 = m.checked_mul(m).ok_or_else(|| Error::Precondition("m² overflows".into()))?;
    let mut states = vec!["q".to_string()];
    states.extend((1..=d_list.len()).map(|j| format!("r{j}")));
    states.push("s_plus".into());
    states.push("s_minus".into());
    let sp = d_list.len() + 1;
    let sm = d_list.len() + 2;
    let mut rules = Vec::new();
    let mut add = |src: usize, delta: [i8; 2], zero_test: u64, dst: usize, weight: u64| {
        if weight > 0 {
            rules.push(Rule { src, delta: delta.to_vec(), zero_test, label: None, dst, weight });
        }
    };
    for (j, &dj) in d_list.iter().enumerate() {
        let r = j + 1;
        add(0, [0, 0], 0, r, 1);
        add(r, [0, 1], 0, r, m2);
        add(r, [0, -1], 0, r, m2 - dj);
        add(r, [0, 0], 0, sm, dj);
        add(r, [0, 1], 2, 0, 1);
    }
    add(0, [0, -1], 0, sp, n);
    add(sm, [0, -1], 0, sm, 1);
    add(sm, [-1, 1], 2, 0, 1);
    add(sp, [1, 1], 2, 0, k);
    add(sp, [0, 1], 2, 0, n * m - k);
    let name = format!("sqrtsum_{}_{k}", d_list.iter().map(u64::to_string).collect::<Vec<_>>().join("_"));
    Pmc::new(Some(name), 2, states, rules, Kind::General)
}

#[derive(Clone, Debug)]
pub struct Case2ApproxOptions {
    /// Cap on explicit configurations per box.
    pub max_states: usize,
    /// Doubling rounds before giving up.
    pub max_rounds: usize,
    pub qualitative: Case2Options,
    pub case1: ApproxOptions,
}

impl Default for Case2ApproxOptions {
    fn default() -> Self {
        Case2ApproxOptions {
            max_states: 2_000_000,
            max_rounds: 10,
            qualitative: Case2Options::default(),
            case1: ApproxOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ApproxCase2 {
    pub nu: f64,
    pub eps: f64,
    pub qualitative: Verdict,
    /// Final box: watched counters below `k_bound`, free counter below `h_bound`.
    pub k_bound: u64,
    pub h_bound: u64,
    pub rounds: usize,
    pub explored: usize,
    pub diagnostics: Vec<String>,
}

pub fn approx_case2(pmc: &Pmc, start: &Configuration, i: usize, eps: f64) -> Result<ApproxCase2> {
    approx_case2_with(pmc, start, i, eps, &Case2ApproxOptions::default())
}

/// Approximates the probability that some counter other than `i` reaches
/// zero. The configuration space is cut to a box whose faces carry values
/// of lower-dimensional problems: a large watched counter is forgotten
/// (recursively), a large free counter turns the problem into one where
/// all remaining counters are watched. The box is doubled until the value
/// settles within `ε/4`.
pub fn approx_case2_with(
    pmc: &Pmc,
    start: &Configuration,
    i: usize,
    eps: f64,
    opts: &Case2ApproxOptions,
) -> Result<ApproxCase2> {
    if !(eps > 0.0) {
        return Err(Error::Precondition("ε must be positive".into()));
    }
    let d = pmc.dimension();
    if i == 0 || i > d {
        return Err(Error::Precondition(format!("free counter {i} out of range 1..={d}")));
    }
    if start.counters.len() != d || start.state >= pmc.num_states() {
        return Err(Error::Precondition("initial configuration does not match the model".into()));
    }
    let mut out = ApproxCase2 {
        nu: 0.0,
        eps,
        qualitative: Verdict::NotAlmostSure,
        k_bound: 0,
        h_bound: 0,
        rounds: 0,
        explored: 0,
        diagnostics: Vec::new(),
    };
    let stop_mask: u64 = ((1u64 << d) - 1) & !(1u64 << (i - 1));
    if stop_mask == 0 {
        out.diagnostics.push("no counter is watched, so the run never stops".into());
        return Ok(out);
    }
    if zero_set(start) & stop_mask != 0 {
        out.nu = 1.0;
        out.qualitative = Verdict::AlmostSure;
        return Ok(out);
    }
    let qual = qualitative_case2_with(pmc, start, i, &opts.qualitative)?;
    out.qualitative = qual.verdict;
    if qual.verdict == Verdict::AlmostSure {
        out.nu = 1.0;
        return Ok(out);
    }
    if eps >= 1.0 {
        out.nu = 0.5;
        out.diagnostics.push("tolerance is vacuous; returning the midpoint".into());
        return Ok(out);
    }
    let mut boxer = BoxSolver::new(pmc, i, stop_mask, eps / 4.0, opts);
    let watched_max = (0..d).filter(|&j| j + 1 != i).map(|j| start.counters[j]).max().unwrap_or(0);
    let mut k = (watched_max + 2).max(8);
    let mut h = (start.counters[i - 1] + 8).max(16);
    let mut prev: Option<f64> = None;
    for round in 1..=opts.max_rounds {
        let v = boxer.solve(start, k, h)?;
        out.rounds = round;
        out.k_bound = k;
        out.h_bound = h;
        out.nu = v;
        if prev.is_some_and(|p| (p - v).abs() <= eps / 4.0) {
            out.explored = boxer.explored;
            out.diagnostics.append(&mut boxer.diagnostics);
            return Ok(out);
        }
        prev = Some(v);
        k *= 2;
        h *= 2;
    }
    Err(Error::ResourceExhausted(format!(
        "box value did not settle within {} doubling rounds (last {:.6}, box {}×{})",
        opts.max_rounds, out.nu, out.k_bound, out.h_bound
    )))
}

struct BoxSolver<'a> {
    pmc: &'a Pmc,
    i: usize,
    stop_mask: u64,
    eps_inner: f64,
    opts: &'a Case2ApproxOptions,
    forgotten: HashMap<usize, Pmc>,
    memo: HashMap<(usize, Configuration), f64>,
    explored: usize,
    diagnostics: Vec<String>,
}

impl<'a> BoxSolver<'a> {
    fn new(pmc: &'a Pmc, i: usize, stop_mask: u64, eps_inner: f64, opts: &'a Case2ApproxOptions) -> Self {
        BoxSolver {
            pmc,
            i,
            stop_mask,
            eps_inner,
            opts,
            forgotten: HashMap::new(),
            memo: HashMap::new(),
            explored: 0,
            diagnostics: Vec::new(),
        }
    }

    /// Value of a configuration on a face of the box, with counter `j`
    /// forgotten.
    fn face(&mut self, j: usize, c: &Configuration) -> Result<f64> {
        let mut counters = c.counters.clone();
        counters.remove(j - 1);
        let reduced = Configuration::new(c.state, counters);
        let key = (j, reduced.clone());
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        if !self.forgotten.contains_key(&j) {
            self.forgotten.insert(j, forget_counter(self.pmc, j)?);
        }
        let model = &self.forgotten[&j];
        let v = if j == self.i {
            let r = approx_case1_with(model, &reduced, self.eps_inner, &self.opts.case1)?;
            self.explored += r.explored;
            r.nu
        } else if model.dimension() == 1 {
            0.0
        } else {
            let i2 = if j < self.i { self.i - 1 } else { self.i };
            let r = approx_case2_with(model, &reduced, i2, self.eps_inner, self.opts)?;
            self.explored += r.explored;
            r.nu
        };
        self.memo.insert(key, v);
        Ok(v)
    }

    fn solve(&mut self, start: &Configuration, k: u64, h: u64) -> Result<f64> {
        let i = self.i;
        let mut index: HashMap<Configuration, usize> = HashMap::from([(start.clone(), 0)]);
        let mut nodes = vec![start.clone()];
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
        let mut fixed: Vec<Option<f64>> = vec![None];
        let mut queue = VecDeque::from([0usize]);
        while let Some(v) = queue.pop_front() {
            let c = nodes[v].clone();
            for t in transition_distribution(self.pmc, &c)? {
                let w = match index.get(&t.target) {
                    Some(&w) => w,
                    None => {
                        if nodes.len() >= self.opts.max_states {
                            return Err(Error::ResourceExhausted(format!(
                                "box {k}×{h} exceeds {} configurations",
                                self.opts.max_states
                            )));
                        }
                        let w = nodes.len();
                        let tc = &t.target;
                        let val = if zero_set(tc) & self.stop_mask != 0 {
                            Some(1.0)
                        } else if let Some(j) = (1..=tc.counters.len()).find(|&j| j != i && tc.counters[j - 1] >= k) {
                            Some(self.face(j, tc)?)
                        } else if tc.counters[i - 1] >= h {
                            Some(self.face(i, tc)?)
                        } else {
                            None
                        };
                        index.insert(tc.clone(), w);
                        nodes.push(tc.clone());
                        rows.push(if val.is_some() { vec![(w, 1.0)] } else { Vec::new() });
                        if val.is_none() {
                            queue.push_back(w);
                        }
                        fixed.push(val);
                        w
                    }
                };
                rows[v].push((w, rational::to_f64(&t.prob)));
            }
        }
        self.explored += nodes.len();
        let x = FiniteChain::float(rows)?.absorption_f64(&fixed)?;
        Ok(x[0].clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;
    use crate::text_format::parse_pmc;

    pub(crate) fn walk(down: u64, up: u64) -> Pmc {
        parse_pmc(&format!(
            "pmc dimension 2\nstate q\nrule q -> q delta [0,-1] zero {{}} weight {down}\n\
             rule q -> q delta [0,1] zero {{}} weight {up}\nrule q -> q delta [0,1] zero {{2}} weight 1\n"
        ))
        .unwrap()
    }

    #[test]
    fn projection_splits_coordinates() {
        let pmc = parse_pmc(
            "pmc dimension 2\nstate q\nstate r\nrule q -> r delta [1,-1] zero {} weight 3\n\
             rule q -> r delta [1,0] zero {1} weight 2\nrule q -> q delta [0,1] zero {2} weight 1\n",
        )
        .unwrap();
        let b = project_counter(&pmc, 2).unwrap();
        assert_eq!(b.model.rules().len(), 2);
        assert_eq!(b.model.rules()[0].delta, vec![-1]);
        assert_eq!(b.model.rules()[0].weight, 3);
        assert_eq!(b.rewards[0], vec![1]);
        assert_eq!(b.model.rules()[1].zero_test, 1);
    }

    #[test]
    fn step_matrices_of_a_walk() {
        let m = step_matrices(&project_counter(&walk(2, 1), 2).unwrap());
        assert_eq!(m.p_down[0][0], ratio(2, 3));
        assert_eq!(m.p_right[0][0], ratio(0, 1));
        assert_eq!(m.p_up[0][0], ratio(1, 3));
        assert_eq!(m.q_right[0][0], ratio(0, 1));
        assert_eq!(m.q_up[0][0], ratio(1, 1));
    }

    #[test]
    fn g_of_biased_walks() {
        for method in [GMethod::ValueIteration, GMethod::Newton] {
            let opts = GOptions { method, ..GOptions::default() };
            let s = solve_g_matrix(&step_matrices(&project_counter(&walk(1, 2), 2).unwrap()), &opts).unwrap();
            assert!((s.g[(0, 0)] - 0.5).abs() < 1e-10);
            assert!((s.up[0] - 0.5).abs() < 1e-10);
            let s = solve_g_matrix(&step_matrices(&project_counter(&walk(2, 1), 2).unwrap()), &opts).unwrap();
            assert!((s.g[(0, 0)] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn x_chain_shapes() {
        let m = step_matrices(&project_counter(&walk(1, 2), 2).unwrap());
        let g = solve_g_matrix(&m, &GOptions::default()).unwrap();
        let x = build_x_chain(&m, &g, 1e-12).unwrap();
        let row = x.chain.row_f64(0);
        assert_eq!(row.len(), 2);
        assert!((row[0].1 - 0.5).abs() < 1e-10);
        assert_eq!(x.chain.row_f64(1), vec![(1, 1.0)]);
        let m = step_matrices(&project_counter(&walk(2, 1), 2).unwrap());
        let g = solve_g_matrix(&m, &GOptions::default()).unwrap();
        let x = build_x_chain(&m, &g, 1e-12).unwrap();
        assert_eq!(x.chain.row_f64(0), vec![(0, 1.0)]);
    }

    fn rewarded_walk() -> Pmc {
        parse_pmc(
            "pmc dimension 2\nstate q\nrule q -> q delta [1,-1] zero {} weight 2\n\
             rule q -> q delta [0,1] zero {} weight 1\nrule q -> q delta [0,1] zero {2} weight 1\n",
        )
        .unwrap()
    }

    #[test]
    fn return_times_of_a_down_walk() {
        let m = step_matrices(&project_counter(&walk(2, 1), 2).unwrap());
        let g = solve_g_matrix(&m, &GOptions::default()).unwrap();
        let rt = expected_return_times(&m, &g);
        assert!(rt.finite);
        assert!((rt.e_down[0] - 3.0).abs() < 1e-8);
        assert!((rt.e[0] - 4.0).abs() < 1e-8);
        let m = step_matrices(&project_counter(&walk(1, 1), 2).unwrap());
        let g = solve_g_matrix(&m, &GOptions::default()).unwrap();
        assert!(!expected_return_times(&m, &g).finite);
    }

    #[test]
    fn rewards_and_trend() {
        let pmc = rewarded_walk();
        let b = project_counter(&pmc, 2).unwrap();
        let m = step_matrices(&b);
        let g = solve_g_matrix(&m, &GOptions::default()).unwrap();
        let rv = expected_rewards(&m, &expected_return_times(&m, &g)).unwrap();
        // Two down moves per excursion from level 1.
        assert!((rv.delta_down[0][0] - 2.0).abs() < 1e-8);
        assert!((rv.delta_one[0][0] - 2.0).abs() < 1e-8);
        let x = build_x_chain(&m, &g, 1e-12).unwrap();
        let a = analyze_oc(&b, &m, &g, &x, &[0], 1e-9).unwrap();
        assert!((a.t_oc[0] - 0.5).abs() < 1e-8);
        assert!(a.all_diverging());
    }

    #[test]
    fn critical_counter_is_a_precondition_error() {
        let pmc = walk(1, 1);
        let cfg = Configuration::new(0, vec![1, 0]);
        assert!(matches!(qualitative_case2(&pmc, &cfg, 2), Err(Error::Precondition(_))));
    }

    #[test]
    fn botinf_small_cases() {
        // Reward -1 on every down move: each excursion costs exactly its
        // number of down moves, which is unbounded.
        let pmc = parse_pmc(
            "pmc dimension 2\nstate q\nrule q -> q delta [-1,-1] zero {} weight 2\n\
             rule q -> q delta [0,1] zero {} weight 1\nrule q -> q delta [0,1] zero {2} weight 1\n",
        )
        .unwrap();
        let b = project_counter(&pmc, 2).unwrap();
        assert_eq!(botinf(&b, &[0], 0), vec![None]);
        // Reward -1 only when leaving zero: every excursion costs 1.
        let pmc = parse_pmc(
            "pmc dimension 2\nstate q\nrule q -> q delta [0,-1] zero {} weight 2\n\
             rule q -> q delta [0,1] zero {} weight 1\nrule q -> q delta [-1,1] zero {2} weight 1\n",
        )
        .unwrap();
        let b = project_counter(&pmc, 2).unwrap();
        assert_eq!(botinf(&b, &[0], 0), vec![Some(1)]);
        let b = project_counter(&rewarded_walk(), 2).unwrap();
        assert_eq!(botinf(&b, &[0], 0), vec![Some(0)]);
    }

    #[test]
    fn normalization_prepends_fresh_states() {
        let pmc = walk(2, 1);
        let n = normalize_start(&pmc, &Configuration::new(0, vec![1, 3]), 2).unwrap();
        assert_eq!(n.fresh, 3);
        assert_eq!(n.pmc.num_states(), 4);
        assert_eq!(n.pmc.state_name(1), "_init.0");
        assert_eq!(n.start, Configuration::new(1, vec![1, 0]));
        let mut c = n.start.clone();
        for _ in 0..3 {
            let t = transition_distribution(&n.pmc, &c).unwrap();
            assert_eq!(t.len(), 1);
            c = t[0].target.clone();
        }
        assert_eq!(c, Configuration::new(0, vec![1, 3]));
    }

    #[test]
    fn sqrt_sum_g_entries() {
        for d in [1u64, 2, 4, 9] {
            let pmc = sqrt_sum_instance(&[d], 1).unwrap();
            let m = step_matrices(&project_counter(&pmc, 2).unwrap());
            let g = solve_g_matrix(&m, &GOptions::default()).unwrap();
            let mm = d.max(1) as f64;
            let r1 = pmc.state_index("r1").unwrap();
            let sm = pmc.state_index("s_minus").unwrap();
            assert!((g.g[(r1, sm)] - (d as f64).sqrt() / mm).abs() < 1e-6, "d = {d}");
        }
    }

    #[test]
    fn sqrt_sum_verdicts_follow_the_comparison() {
        let cfg = |pmc: &Pmc| pmc.config("q", vec![1, 1]).unwrap();
        let pmc = sqrt_sum_instance(&[4], 1).unwrap();
        let q = qualitative_case2(&pmc, &cfg(&pmc), 2).unwrap();
        assert!(q.oc.iter().all(|a| a.t_oc[0] < 0.0));
        assert_eq!(q.verdict, Verdict::AlmostSure);
        let pmc = sqrt_sum_instance(&[1], 3).unwrap();
        let q = qualitative_case2(&pmc, &cfg(&pmc), 2).unwrap();
        assert!(q.oc.iter().any(|a| a.t_oc[0] > 0.0));
        assert_eq!(q.verdict, Verdict::NotAlmostSure);
        assert_eq!(q.witness.unwrap().kind, WitnessKind::ZeroLevelPump);
    }

    fn inert_second(up: u64, down: u64) -> Pmc {
        parse_pmc(&format!(
            "pmc dimension 2\nstate q\nrule q -> q delta [1,0] zero {{}} weight {up}\n\
             rule q -> q delta [-1,0] zero {{}} weight {down}\n"
        ))
        .unwrap()
    }

    #[test]
    fn approx_case2_gamblers() {
        let cfg = Configuration::new(0, vec![1, 1]);
        let r = approx_case2(&inert_second(1, 2), &cfg, 2, 1e-3).unwrap();
        assert_eq!(r.nu, 1.0);
        let r = approx_case2(&inert_second(2, 1), &cfg, 2, 1e-3).unwrap();
        assert_eq!(r.qualitative, Verdict::NotAlmostSure);
        assert!((r.nu - 0.5).abs() <= 1e-3, "{}", r.nu);
        let r = approx_case2(&inert_second(2, 1), &cfg, 2, 2.0).unwrap();
        assert!((0.0..=1.0).contains(&r.nu));
    }

    #[test]
    fn onedim_reach() {
        let pmc = parse_pmc(
            "pmc dimension 1\nstate q\nstate t\nrule q -> q delta [-1] zero {} weight 2\n\
             rule q -> q delta [1] zero {} weight 1\nrule q -> t delta [0] zero {1} weight 1\n",
        )
        .unwrap();
        let v = onedim_reach_approx(&pmc, &Configuration::new(0, vec![3]), &[false, true], 1e-3, 1 << 20).unwrap();
        assert!((v - 1.0).abs() <= 1e-3);
        assert_eq!(onedim_reach_approx(&pmc, &Configuration::new(1, vec![3]), &[false, true], 1e-3, 1 << 20).unwrap(), 1.0);
        assert_eq!(onedim_reach_approx(&pmc, &Configuration::new(0, vec![3]), &[true, false], 1e-3, 1 << 20).unwrap(), 1.0);
    }

    #[test]
    fn deterministic_excursions() {
        // Down at counter >= 1, up at 0; every move carries reward +1.
        let pmc = parse_pmc(
            "pmc dimension 2\nstate q\nrule q -> q delta [1,-1] zero {} weight 1\n\
             rule q -> q delta [1,1] zero {2} weight 1\n",
        )
        .unwrap();
        let b = project_counter(&pmc, 2).unwrap();
        let m = step_matrices(&b);
        let g = solve_g_matrix(&m, &GOptions::default()).unwrap();
        let rt = expected_return_times(&m, &g);
        assert!((rt.e_down[0] - 1.0).abs() < 1e-12 && (rt.e[0] - 2.0).abs() < 1e-12);
        let rv = expected_rewards(&m, &rt).unwrap();
        assert!((rv.delta_one[0][0] - rt.e[0]).abs() < 1e-12);
        let x = build_x_chain(&m, &g, 1e-12).unwrap();
        let a = analyze_oc(&b, &m, &g, &x, &[0], 1e-9).unwrap();
        assert!((a.t_oc[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sqrt_sum_balanced_trend_is_zero() {
        let pmc = sqrt_sum_instance(&[4], 2).unwrap();
        let q = qualitative_case2(&pmc, &pmc.config("q", vec![1, 1]).unwrap(), 2).unwrap();
        assert!(!q.oc.is_empty());
        assert!(q.oc.iter().all(|a| a.zero_trend[0]));
    }

    #[test]
    fn botinf_respects_the_cubic_bound() {
        let pmc = parse_pmc(
            "pmc dimension 2\nstate p\nstate q\nrule p -> q delta [-1,1] zero {2} weight 1\n\
             rule q -> q delta [-1,1] zero {} weight 1\nrule q -> p delta [0,-1] zero {} weight 3\n\
             rule p -> p delta [0,-1] zero {} weight 1\n",
        )
        .unwrap();
        let b = project_counter(&pmc, 2).unwrap();
        let v = botinf(&b, &[0], 0);
        let n = b.model.num_states() as u64;
        assert!(v[0].is_none() || v[0].unwrap() <= 3 * n * n * n);
    }
}

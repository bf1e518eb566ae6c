//! VASS primitives: the blocking transform, Karp–Miller coverage queries
//! and non-negative cycle detection by exact linear programming.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::finite_chain::tarjan;
use crate::lp::{Cmp, Lp, LpOutcome};
use crate::model::{apply_delta, zero_set, Configuration, Pmc, StoppingCriterion};
use crate::rational::Rational;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VassRule {
    pub src: usize,
    pub delta: Vec<i64>,
    pub dst: usize,
    /// The pMC rule completed by this step, if any.
    pub origin: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vass {
    pub dimension: usize,
    pub states: Vec<String>,
    pub rules: Vec<VassRule>,
}

/// Each `∅`-test rule `(p, α, ∅, q)` becomes `p -(-1)-> q' -(+1)-> q'' -α-> q`
/// through two fresh states, so a zero counter blocks all progress. The
/// original states keep their indices.
pub fn to_blocking_vass(pmc: &Pmc) -> Vass {
    let d = pmc.dimension();
    let mut states: Vec<String> = pmc.states().to_vec();
    let mut rules = Vec::new();
    for (k, r) in pmc.rules().iter().enumerate() {
        if r.zero_test != 0 {
            continue;
        }
        let a = states.len();
        states.push(format!("{}'{k}", pmc.state_name(r.src)));
        states.push(format!("{}''{k}", pmc.state_name(r.src)));
        rules.push(VassRule { src: r.src, delta: vec![-1; d], dst: a, origin: None });
        rules.push(VassRule { src: a, delta: vec![1; d], dst: a + 1, origin: None });
        rules.push(VassRule {
            src: a + 1,
            delta: r.delta.iter().map(|&x| x as i64).collect(),
            dst: r.dst,
            origin: Some(k),
        });
    }
    Vass { dimension: d, states, rules }
}

pub const OMEGA: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Floor {
    Omega,
    AtLeast(u64),
}

#[derive(Clone, Debug)]
pub struct CoverOptions {
    pub node_budget: usize,
    /// Concrete value the witness must reach on `ω` coordinates.
    pub omega_witness: u64,
    /// Upper limit on the length of a replayed witness.
    pub max_witness_len: usize,
    /// Largest bottom component whose invariant distribution is solved in
    /// rational arithmetic; larger ones are refused.
    pub exact_cap: usize,
}

impl Default for CoverOptions {
    fn default() -> Self {
        CoverOptions {
            node_budget: 200_000,
            omega_witness: 2,
            max_witness_len: 2_000_000,
            exact_cap: crate::finite_chain::DEFAULT_EXACT_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverResult {
    pub covered: bool,
    /// VASS rule indices of a concrete covering path.
    pub witness: Option<Vec<usize>>,
    pub tree_nodes: usize,
}

struct KmNode {
    state: usize,
    label: Vec<u64>,
    parent: Option<(usize, usize)>,
    /// Ancestors used for acceleration: `(ancestor node, coordinates)`.
    accel: Vec<usize>,
}

fn covers(label: &[u64], floor: &[Floor]) -> bool {
    label.iter().zip(floor).all(|(&x, f)| match f {
        Floor::Omega => x == OMEGA,
        Floor::AtLeast(n) => x >= *n,
    })
}

/// Karp–Miller search for a configuration `(target, w)` with `w ≥ floor`,
/// where `ω` floors require unbounded coverage.
pub fn karp_miller_cover_above(
    vass: &Vass,
    start: &Configuration,
    target: usize,
    floor: &[Floor],
    opts: &CoverOptions,
) -> Result<CoverResult> {
    let d = vass.dimension;
    let mut by_src: Vec<Vec<usize>> = vec![Vec::new(); vass.states.len()];
    for (k, r) in vass.rules.iter().enumerate() {
        by_src[r.src].push(k);
    }
    let mut nodes = vec![KmNode { state: start.state, label: start.counters.clone(), parent: None, accel: vec![] }];
    let mut seen: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
    seen.insert((start.state, start.counters.clone()), 0);
    let mut queue = VecDeque::from([0usize]);
    let mut found = None;
    if start.state == target && covers(&start.counters, floor) {
        found = Some(0);
    }
    while found.is_none() {
        let Some(v) = queue.pop_front() else { break };
        for &k in &by_src[nodes[v].state] {
            let r = &vass.rules[k];
            let mut label = Vec::with_capacity(d);
            let mut ok = true;
            for (x, &dx) in nodes[v].label.iter().zip(&r.delta) {
                if *x == OMEGA {
                    label.push(OMEGA);
                } else {
                    let y = *x as i128 + dx as i128;
                    if y < 0 || y >= OMEGA as i128 {
                        ok = false;
                        break;
                    }
                    label.push(y as u64);
                }
            }
            if !ok {
                continue;
            }
            let mut accel = Vec::new();
            let mut a = Some(v);
            while let Some(u) = a {
                let an = &nodes[u];
                if an.state == r.dst && an.label.iter().zip(&label).all(|(x, y)| x <= y) && an.label != label {
                    let mut grew = false;
                    for (x, y) in an.label.iter().zip(label.iter_mut()) {
                        if x < y && *y != OMEGA {
                            *y = OMEGA;
                            grew = true;
                        }
                    }
                    if grew {
                        accel.push(u);
                    }
                }
                a = an.parent.map(|p| p.0);
            }
            let key = (r.dst, label.clone());
            if seen.contains_key(&key) {
                continue;
            }
            if nodes.len() >= opts.node_budget {
                return Err(Error::ResourceExhausted(format!(
                    "Karp-Miller tree exceeded {} nodes",
                    opts.node_budget
                )));
            }
            let id = nodes.len();
            nodes.push(KmNode { state: r.dst, label: label.clone(), parent: Some((v, k)), accel });
            seen.insert(key, id);
            if r.dst == target && covers(&label, floor) {
                found = Some(id);
                break;
            }
            queue.push_back(id);
        }
    }
    let tree_nodes = nodes.len();
    let Some(end) = found else {
        return Ok(CoverResult { covered: false, witness: None, tree_nodes });
    };
    // Path of nodes from the root.
    let mut path = vec![end];
    while let Some((p, _)) = nodes[*path.last().unwrap()].parent {
        path.push(p);
    }
    path.reverse();
    let want: Vec<u64> = floor
        .iter()
        .map(|f| match f {
            Floor::Omega => opts.omega_witness,
            Floor::AtLeast(n) => *n,
        })
        .collect();
    let mut pump: u64 = 2;
    let witness = loop {
        match pumped_word(vass, &nodes, &path, pump, opts.max_witness_len) {
            None => break None,
            Some(word) => {
                if let Some(c) = replay_vass(vass, start, &word) {
                    if c.state == target && c.counters.iter().zip(&want).all(|(x, w)| x >= w) {
                        break Some(word);
                    }
                }
            }
        }
        pump = match pump.checked_mul(2) {
            Some(p) => p,
            None => break None,
        };
    };
    Ok(CoverResult { covered: true, witness, tree_nodes })
}

/// Expands accelerations along `path` into a concrete rule word. The loop
/// accelerated at the `j`-th of `m` acceleration points is repeated
/// `pump^(m - j + 1)` times, so earlier loops supply enough for later ones.
fn pumped_word(_vass: &Vass, nodes: &[KmNode], path: &[usize], pump: u64, max_len: usize) -> Option<Vec<usize>> {
    let m = path.iter().filter(|&&v| !nodes[v].accel.is_empty()).count() as u32;
    let mut word: Vec<usize> = Vec::new();
    let mut pos: HashMap<usize, usize> = HashMap::new();
    pos.insert(path[0], 0);
    let mut j = 0u32;
    for &v in &path[1..] {
        word.push(nodes[v].parent.expect("non-root").1);
        pos.insert(v, word.len());
        if nodes[v].accel.is_empty() {
            continue;
        }
        j += 1;
        let reps = pump.checked_pow(m - j + 1)?;
        // Pump the loop from the oldest accelerating ancestor; it contains
        // the loops of the younger ones.
        let a = *nodes[v].accel.iter().min_by_key(|a| pos[a]).expect("non-empty");
        let seg: Vec<usize> = word[pos[&a]..].to_vec();
        let extra = (seg.len() as u64).checked_mul(reps.saturating_sub(1))?;
        if word.len() as u64 + extra > max_len as u64 {
            return None;
        }
        for _ in 1..reps {
            word.extend_from_slice(&seg);
        }
        pos.insert(v, word.len());
    }
    Some(word)
}

/// Executes a rule word; `None` if a counter would go negative or a rule
/// does not start at the current state.
pub fn replay_vass(vass: &Vass, start: &Configuration, word: &[usize]) -> Option<Configuration> {
    let mut c = start.clone();
    for &k in word {
        let r = &vass.rules[k];
        if r.src != c.state {
            return None;
        }
        for (x, &dx) in c.counters.iter_mut().zip(&r.delta) {
            let y = *x as i128 + dx as i128;
            if y < 0 || y > u64::MAX as i128 {
                return None;
            }
            *x = y as u64;
        }
        c.state = r.dst;
    }
    Some(c)
}

/// Maps a blocking-VASS word back to the pMC configurations it visits.
pub fn pmc_path_of_word(pmc: &Pmc, vass: &Vass, start: &Configuration, word: &[usize]) -> Result<Vec<Configuration>> {
    let mut path = vec![start.clone()];
    for &k in word {
        if let Some(origin) = vass.rules[k].origin {
            let r = &pmc.rules()[origin];
            let last = path.last().expect("non-empty");
            let counters = apply_delta(&last.counters, &r.delta).ok_or_else(|| Error::CounterOverflow {
                rule: origin,
                state: pmc.state_name(last.state).to_string(),
            })?;
            path.push(Configuration { state: r.dst, counters });
        }
    }
    Ok(path)
}

/// Checks that a witness path is a `Z_all`-safe pMC path.
pub fn witness_is_safe(pmc: &Pmc, path: &[Configuration]) -> Result<bool> {
    crate::model::is_safe_prefix(pmc, path, &StoppingCriterion::all(pmc.dimension()))
}

/// An edge of the multigraph searched for non-negative cycles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleEdge {
    pub src: usize,
    pub dst: usize,
    pub delta: Vec<i8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleCertificate {
    /// States through which a qualifying closed walk exists.
    pub states: BTreeSet<usize>,
    /// A rational circulation (one entry per edge) realizing it.
    pub flow: Option<Vec<Rational>>,
}

impl CycleCertificate {
    pub fn exists(&self) -> bool {
        !self.states.is_empty()
    }
}

fn circulation_lp(edges: &[CycleEdge], allowed: &[usize], d: usize) -> Lp {
    let mut lp = Lp::new(allowed.len());
    let mut nodes: BTreeMap<usize, Vec<(usize, Rational)>> = BTreeMap::new();
    for (v, &e) in allowed.iter().enumerate() {
        let ed = &edges[e];
        nodes.entry(ed.src).or_default().push((v, -Rational::one()));
        nodes.entry(ed.dst).or_default().push((v, Rational::one()));
    }
    for (_, row) in nodes {
        lp.constrain(row, Cmp::Eq, Rational::zero());
    }
    for j in 0..d {
        let row: Vec<(usize, Rational)> = allowed
            .iter()
            .enumerate()
            .filter(|(_, &e)| edges[e].delta[j] != 0)
            .map(|(v, &e)| (v, Rational::from_integer((edges[e].delta[j] as i64).into())))
            .collect();
        if !row.is_empty() {
            lp.constrain(row, Cmp::Ge, Rational::zero());
        }
    }
    lp
}

/// Edges (among `allowed`) that carry flow in some non-negative circulation.
fn feasible_support(edges: &[CycleEdge], allowed: &[usize], d: usize) -> Vec<usize> {
    let base = circulation_lp(edges, allowed, d);
    let mut keep = vec![false; allowed.len()];
    for v in 0..allowed.len() {
        if keep[v] {
            continue;
        }
        let mut lp = base.clone();
        lp.constrain(vec![(v, Rational::one())], Cmp::Ge, Rational::one());
        // Bounded objective so the LP is never unbounded.
        lp.constrain((0..allowed.len()).map(|u| (u, Rational::one())).collect(), Cmp::Le, Rational::from_integer(1_000_000.into()));
        if let LpOutcome::Optimal { x, .. } = lp.solve() {
            for (u, xu) in x.iter().enumerate() {
                if xu.is_positive() {
                    keep[u] = true;
                }
            }
        }
    }
    allowed.iter().zip(&keep).filter(|(_, &k)| k).map(|(&e, _)| e).collect()
}

/// Decides whether the multigraph has a closed walk whose total delta is
/// `≥ 0` on every coordinate and `> 0` on the coordinates in `strict`
/// (a bitmask). Returns every state lying on such a walk.
pub fn nonneg_cycle_exists(edges: &[CycleEdge], d: usize, strict: u64) -> CycleCertificate {
    let mut states = BTreeSet::new();
    let mut best_flow = None;
    let mut work: Vec<Vec<usize>> = vec![(0..edges.len()).collect()];
    while let Some(set) = work.pop() {
        let support = feasible_support(edges, &set, d);
        if support.is_empty() {
            continue;
        }
        // Split the support into strongly connected pieces.
        let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
        for &e in &support {
            let n = ids.len();
            ids.entry(edges[e].src).or_insert(n);
            let n = ids.len();
            ids.entry(edges[e].dst).or_insert(n);
        }
        let mut succ = vec![Vec::new(); ids.len()];
        for &e in &support {
            succ[ids[&edges[e].src]].push(ids[&edges[e].dst]);
        }
        let scc = tarjan(&succ);
        let mut pieces: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &e in &support {
            let (a, b) = (scc.component_of[ids[&edges[e].src]], scc.component_of[ids[&edges[e].dst]]);
            if a == b {
                pieces.entry(a).or_default().push(e);
            }
        }
        for (_, piece) in pieces {
            if piece.len() < set.len() || pieces_differ(&piece, &set) {
                work.push(piece);
                continue;
            }
            // Stable: every edge carries flow and the support is strongly
            // connected. Check strictness.
            if let Some(flow) = strict_flow(edges, &piece, d, strict) {
                for &e in &piece {
                    states.insert(edges[e].src);
                }
                if best_flow.is_none() {
                    let mut f = vec![Rational::zero(); edges.len()];
                    for (v, &e) in piece.iter().enumerate() {
                        f[e] = flow[v].clone();
                    }
                    best_flow = Some(f);
                }
            }
        }
    }
    CycleCertificate { states, flow: best_flow }
}

fn pieces_differ(piece: &[usize], set: &[usize]) -> bool {
    piece.len() != set.len() || piece.iter().zip(set).any(|(a, b)| a != b)
}

/// On a stable component, finds a full-support circulation that is strict
/// on `strict`, if one exists.
fn strict_flow(edges: &[CycleEdge], piece: &[usize], d: usize, strict: u64) -> Option<Vec<Rational>> {
    let n = piece.len();
    let total = |lp: &mut Lp, vars: usize| {
        lp.constrain((0..vars).map(|u| (u, Rational::one())).collect(), Cmp::Eq, Rational::one());
    };
    // Full-support circulation: maximize the smallest edge flow.
    let mut full = circulation_lp(edges, piece, d);
    full.num_vars = n + 1;
    total(&mut full, n);
    for v in 0..n {
        full.constrain(vec![(v, Rational::one()), (n, -Rational::one())], Cmp::Ge, Rational::zero());
    }
    full.objective = vec![(n, Rational::one())];
    let LpOutcome::Optimal { x: fx, value } = full.solve() else { return None };
    if !value.is_positive() {
        return None;
    }
    if strict == 0 {
        return Some(fx[..n].to_vec());
    }
    let mut lp = circulation_lp(edges, piece, d);
    lp.num_vars = n + 1;
    total(&mut lp, n);
    for j in 0..d {
        if strict >> j & 1 == 0 {
            continue;
        }
        let mut row: Vec<(usize, Rational)> = piece
            .iter()
            .enumerate()
            .filter(|(_, &e)| edges[e].delta[j] != 0)
            .map(|(v, &e)| (v, Rational::from_integer((edges[e].delta[j] as i64).into())))
            .collect();
        row.push((n, -Rational::one()));
        lp.constrain(row, Cmp::Ge, Rational::zero());
    }
    lp.objective = vec![(n, Rational::one())];
    match lp.solve() {
        LpOutcome::Optimal { x, value } if value.is_positive() => {
            let half = Rational::new(1.into(), 2.into());
            Some((0..n).map(|v| &half * &x[v] + &half * &fx[v]).collect())
        }
        _ => None,
    }
}

/// Validates a circulation certificate: conservation and delta signs.
pub fn check_flow(edges: &[CycleEdge], d: usize, strict: u64, flow: &[Rational]) -> bool {
    let mut balance: BTreeMap<usize, Rational> = BTreeMap::new();
    let mut delta = vec![Rational::zero(); d];
    let mut any = false;
    for (e, f) in edges.iter().zip(flow) {
        if f.is_negative() {
            return false;
        }
        if f.is_zero() {
            continue;
        }
        any = true;
        *balance.entry(e.src).or_insert_with(Rational::zero) -= f;
        *balance.entry(e.dst).or_insert_with(Rational::zero) += f;
        for j in 0..d {
            delta[j] += f * Rational::from_integer((e.delta[j] as i64).into());
        }
    }
    any && balance.values().all(|b| b.is_zero())
        && delta.iter().enumerate().all(|(j, x)| !x.is_negative() && (strict >> j & 1 == 0 || x.is_positive()))
}

/// `∅`-test rules of `pmc` with both endpoints in `component`.
pub fn component_edges(pmc: &Pmc, component: &[usize]) -> Vec<CycleEdge> {
    let inside: BTreeSet<usize> = component.iter().copied().collect();
    pmc.rules()
        .iter()
        .filter(|r| r.zero_test == 0 && inside.contains(&r.src) && inside.contains(&r.dst))
        .map(|r| CycleEdge { src: r.src, dst: r.dst, delta: r.delta.clone() })
        .collect()
}

/// True iff `cfg` has no zero counter.
pub fn all_positive(cfg: &Configuration) -> bool {
    zero_set(cfg) == 0
}

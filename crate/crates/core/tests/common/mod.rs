//! Brute-force oracles and random model generators shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::path::PathBuf;

use pmc_core::case2::OneCounterAbstraction;
use pmc_core::coverability::{CycleEdge, Vass};
use pmc_core::{Configuration, Kind, Pmc, Rule};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// A delta entry in `{-1, 0, 1}` that never decrements a zero counter.
fn entry(rng: &mut StdRng, zero: bool) -> i8 {
    if zero {
        rng.random_range(0..=1)
    } else {
        rng.random_range(-1..=1)
    }
}

/// Random general pMC with `n` states and `d` counters. Every zero class
/// listed in `masks` gets between 1 and `per` rules at every state;
/// classes not listed fall back to the forced self-loop.
pub fn random_pmc_masks(rng: &mut StdRng, n: usize, d: usize, per: usize, masks: &[u64]) -> Pmc {
    let states: Vec<String> = (0..n).map(|k| format!("s{k}")).collect();
    let mut rules = Vec::new();
    for src in 0..n {
        for &mask in masks {
            let k = rng.random_range(1..=per);
            for _ in 0..k {
                let delta = (0..d).map(|c| entry(rng, mask >> c & 1 == 1)).collect();
                rules.push(Rule {
                    src,
                    delta,
                    zero_test: mask,
                    label: None,
                    dst: rng.random_range(0..n),
                    weight: rng.random_range(1..=4),
                });
            }
        }
    }
    Pmc::new(Some("random".into()), d, states, rules, Kind::General).expect("generator emits valid models")
}

pub fn random_pmc(rng: &mut StdRng, n: usize, d: usize, per: usize) -> Pmc {
    let masks: Vec<u64> = (0..1u64 << d).collect();
    random_pmc_masks(rng, n, d, per, &masks)
}

/// Random `∅`-rules forming a strongly connected component on `n` states:
/// a ring plus `extra` random edges.
pub fn random_component(rng: &mut StdRng, n: usize, d: usize, extra: usize) -> Pmc {
    let states: Vec<String> = (0..n).map(|k| format!("c{k}")).collect();
    let mut rules = Vec::new();
    let mut push = |rng: &mut StdRng, src: usize, dst: usize| {
        let delta = (0..d).map(|_| rng.random_range(-1..=1)).collect();
        rules.push(Rule { src, delta, zero_test: 0, label: None, dst, weight: rng.random_range(1..=3) });
    };
    for s in 0..n {
        push(rng, s, (s + 1) % n);
    }
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        push(rng, a, b);
    }
    Pmc::new(None, d, states, rules, Kind::General).expect("valid")
}

/// Probability of ever reaching 0 from `k` for the walk with up-probability `p`.
pub fn gamblers_ruin(p: f64, k: u64) -> f64 {
    let q = 1.0 - p;
    if p <= q {
        1.0
    } else {
        (q / p).powi(k as i32)
    }
}

/// Least prefix sum of counter `i` over all `∅`-rule walks of length
/// `≤ len` inside `component` starting at each state (empty walk included).
pub fn min_prefix_walks(pmc: &Pmc, component: &[usize], i: usize, len: usize) -> Vec<i64> {
    let inside: HashSet<usize> = component.iter().copied().collect();
    let pos = |q: usize| component.iter().position(|&c| c == q).unwrap();
    let mut f = vec![0i64; component.len()];
    for _ in 0..len {
        let mut g = vec![0i64; component.len()];
        for r in pmc.rules() {
            if r.zero_test != 0 || !inside.contains(&r.src) || !inside.contains(&r.dst) {
                continue;
            }
            let v = r.delta[i - 1] as i64 + f[pos(r.dst)];
            let s = pos(r.src);
            g[s] = g[s].min(v);
        }
        f = g;
    }
    f
}

/// Literal depth-first enumeration of the same quantity, for short lengths.
pub fn min_prefix_dfs(pmc: &Pmc, component: &[usize], i: usize, q: usize, len: usize) -> i64 {
    fn go(pmc: &Pmc, inside: &HashSet<usize>, i: usize, q: usize, sum: i64, left: usize) -> i64 {
        let mut best = sum;
        if left == 0 {
            return best;
        }
        for r in pmc.rules() {
            if r.zero_test == 0 && r.src == q && inside.contains(&r.dst) {
                best = best.min(go(pmc, inside, i, r.dst, sum + r.delta[i - 1] as i64, left - 1));
            }
        }
        best
    }
    let inside: HashSet<usize> = component.iter().copied().collect();
    go(pmc, &inside, i, q, 0, len)
}

/// botfin by exhaustive walks: the deepest drop over walks of length
/// `|C| − 1` decides the value unless longer walks (up to `12|C|`) go lower,
/// which only a negative cycle allows.
pub fn botfin_oracle(pmc: &Pmc, component: &[usize], i: usize) -> Vec<Option<u64>> {
    let c = component.len();
    let short = min_prefix_walks(pmc, component, i, c.saturating_sub(1));
    let long = min_prefix_walks(pmc, component, i, 12 * c);
    if short.iter().zip(&long).any(|(a, b)| b < a) {
        return vec![None; c];
    }
    short.iter().map(|&x| Some((1 - x) as u64)).collect()
}

/// Least total reward over first-return excursions from `q(0)` of length
/// `≤ len`; `None` when there is none.
pub fn min_excursion(b: &OneCounterAbstraction, q: usize, coord: usize, len: usize) -> Option<i64> {
    let n = b.model.num_states();
    const INF: i64 = i64::MAX / 4;
    let idx = |c: usize, s: usize| c * n + s;
    let mut cur = vec![INF; (len + 2) * n];
    cur[idx(0, q)] = 0;
    let mut best = INF;
    for step in 0..len {
        let mut next = vec![INF; (len + 2) * n];
        for c in 0..=step.min(len) {
            for s in 0..n {
                let v = cur[idx(c, s)];
                if v >= INF || (step > 0 && c == 0 && s == q) {
                    continue;
                }
                let mask = if c == 0 { 1 } else { 0 };
                let rules = b.model.enabled_indices(s, mask);
                let moves: Vec<(usize, i64, i64)> = if rules.is_empty() {
                    vec![(s, 0, 0)]
                } else {
                    rules
                        .iter()
                        .map(|&k| {
                            let r = &b.model.rules()[k];
                            (r.dst, r.delta[0] as i64, b.rewards[k][coord] as i64)
                        })
                        .collect()
                };
                for (dst, dc, w) in moves {
                    let nc = c as i64 + dc;
                    if nc < 0 {
                        continue;
                    }
                    let t = idx(nc as usize, dst);
                    next[t] = next[t].min(v + w);
                }
            }
        }
        best = best.min(next[idx(0, q)]);
        cur = next;
    }
    (best < INF).then_some(best)
}

/// botinf by exhaustive excursions of length 300 and 600; a lower value at
/// 600 marks an unbounded deficit.
pub fn botinf_oracle(b: &OneCounterAbstraction, component: &[usize], coord: usize) -> Vec<Option<u64>> {
    let mut out = Vec::new();
    for &q in component {
        let v = match (min_excursion(b, q, coord, 300), min_excursion(b, q, coord, 600)) {
            (None, _) => Some(0),
            (Some(a), Some(bb)) if bb < a => None,
            (Some(a), _) => Some((-a).max(0) as u64),
        };
        out.push(v);
    }
    if out.iter().any(Option::is_none) {
        return vec![None; component.len()];
    }
    out
}

/// Breadth-first search of the VASS with every counter kept `≤ cap`.
pub fn capped_cover(vass: &Vass, start: &Configuration, target: usize, floor: &[u64], cap: u64) -> bool {
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([(start.state, start.counters.clone())]);
    seen.insert((start.state, start.counters.clone()));
    while let Some((s, c)) = queue.pop_front() {
        if s == target && c.iter().zip(floor).all(|(x, f)| x >= f) {
            return true;
        }
        for r in vass.rules.iter().filter(|r| r.src == s) {
            let next: Option<Vec<u64>> = c
                .iter()
                .zip(&r.delta)
                .map(|(&x, &dx)| {
                    let y = x as i64 + dx;
                    (0..=cap as i64).contains(&y).then_some(y as u64)
                })
                .collect();
            if let Some(n) = next {
                if seen.insert((r.dst, n.clone())) {
                    queue.push_back((r.dst, n));
                }
            }
        }
    }
    false
}

pub fn random_vass(rng: &mut StdRng, n: usize, m: usize) -> Vass {
    let rules = (0..m)
        .map(|_| pmc_core::coverability::VassRule {
            src: rng.random_range(0..n),
            delta: (0..2).map(|_| rng.random_range(-1..=1)).collect(),
            dst: rng.random_range(0..n),
            origin: None,
        })
        .collect();
    Vass { dimension: 2, states: (0..n).map(|k| format!("v{k}")).collect(), rules }
}

pub fn random_edges(rng: &mut StdRng, n: usize, m: usize, d: usize) -> Vec<CycleEdge> {
    (0..m)
        .map(|_| CycleEdge {
            src: rng.random_range(0..n),
            dst: rng.random_range(0..n),
            delta: (0..d).map(|_| rng.random_range(-1..=1)).collect(),
        })
        .collect()
}

/// States on some closed walk whose total is `≥ 0` everywhere and `> 0` on
/// `strict`, found by trying every edge multiplicity vector in
/// `{0..=kmax}^m`: a connected support with balanced in/out degree is
/// exactly a closed walk.
pub fn cycle_states_oracle(edges: &[CycleEdge], d: usize, strict: u64, kmax: u32) -> BTreeSet<usize> {
    let m = edges.len();
    let mut out = BTreeSet::new();
    let mut x = vec![0u32; m];
    loop {
        let mut k = 0;
        while k < m && x[k] == kmax {
            x[k] = 0;
            k += 1;
        }
        if k == m {
            break;
        }
        x[k] += 1;
        if is_good_walk(edges, d, strict, &x) {
            for (e, &c) in edges.iter().zip(&x) {
                if c > 0 {
                    out.insert(e.src);
                    out.insert(e.dst);
                }
            }
        }
    }
    out
}

fn is_good_walk(edges: &[CycleEdge], d: usize, strict: u64, x: &[u32]) -> bool {
    let mut bal = std::collections::HashMap::new();
    let mut total = vec![0i64; d];
    let mut support = Vec::new();
    for (e, &c) in edges.iter().zip(x) {
        if c == 0 {
            continue;
        }
        *bal.entry(e.src).or_insert(0i64) -= c as i64;
        *bal.entry(e.dst).or_insert(0i64) += c as i64;
        for (t, &v) in total.iter_mut().zip(&e.delta) {
            *t += c as i64 * v as i64;
        }
        support.push(e);
    }
    if support.is_empty() || bal.values().any(|&b| b != 0) {
        return false;
    }
    if total.iter().enumerate().any(|(j, &t)| t < 0 || (strict >> j & 1 == 1 && t == 0)) {
        return false;
    }
    // Weak connectivity of the support.
    let mut reached = HashSet::from([support[0].src]);
    let mut grew = true;
    while grew {
        grew = false;
        for e in &support {
            if reached.contains(&e.src) != reached.contains(&e.dst) {
                reached.insert(e.src);
                reached.insert(e.dst);
                grew = true;
            }
        }
    }
    support.iter().all(|e| reached.contains(&e.src))
}

pub fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../cli/models")
}

/// `(file name, text)` of every bundled model.
pub fn corpus() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(models_dir())
        .expect("models directory")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "pmc"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

pub fn load(name: &str) -> Pmc {
    let text = std::fs::read_to_string(models_dir().join(name)).expect("bundled model");
    pmc_core::parse_pmc(&text).expect("bundled model parses")
}

/// Wald-style standard error of a frequency.
pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

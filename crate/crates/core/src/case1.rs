//! Case I: the run stops as soon as any counter hits zero.
//!
//! While all counters are positive only `∅`-test rules fire, so the control
//! states evolve as the finite floor chain. Its bottom components carry a
//! trend vector that decides which counters can escape to infinity.

use std::collections::{BTreeMap, HashMap, VecDeque};

use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::case2::{project_counter, solve_g_matrix, step_matrices, GOptions, GSolution};
use crate::coverability::{
    component_edges, karp_miller_cover_above, nonneg_cycle_exists, pmc_path_of_word, to_blocking_vass,
    witness_is_safe, CoverOptions, CycleCertificate, CycleEdge, Floor,
};
use crate::error::{Error, Result};
use crate::finite_chain::{FiniteChain, NumericPolicy};
use crate::model::{forget_counter, transition_distribution, zero_set, Configuration, Pmc};
use crate::rational::{self, Rational};
use crate::report::Verdict;

/// The control-state chain followed while every counter is positive.
#[derive(Clone, Debug)]
pub struct FloorChain {
    pub chain: FiniteChain,
    /// Normalized probability of each `∅`-test rule; `None` for other rules.
    pub rule_prob: Vec<Option<Rational>>,
    /// States without `∅`-test rules. They get a probability-1 self-loop.
    pub self_loops: Vec<usize>,
}

impl FloorChain {
    pub fn diagnostics(&self, pmc: &Pmc) -> Vec<String> {
        self.self_loops
            .iter()
            .map(|&q| format!("state `{}` has no ∅-test rule; the floor chain uses a self-loop", pmc.state_name(q)))
            .collect()
    }
}

pub fn build_floor_chain(pmc: &Pmc) -> FloorChain {
    let n = pmc.num_states();
    let mut total = vec![0u128; n];
    for r in pmc.rules() {
        if r.zero_test == 0 {
            total[r.src] += r.weight as u128;
        }
    }
    let mut rows: Vec<Vec<(usize, Rational)>> = vec![Vec::new(); n];
    let mut rule_prob = Vec::with_capacity(pmc.rules().len());
    for r in pmc.rules() {
        if r.zero_test == 0 {
            let p = Rational::new(r.weight.into(), total[r.src].into());
            rows[r.src].push((r.dst, p.clone()));
            rule_prob.push(Some(p));
        } else {
            rule_prob.push(None);
        }
    }
    let mut self_loops = Vec::new();
    for (q, row) in rows.iter_mut().enumerate() {
        if row.is_empty() {
            row.push((q, Rational::one()));
            self_loops.push(q);
        }
    }
    let chain = FiniteChain::exact(rows).expect("normalized rows").with_names(pmc.states().to_vec());
    FloorChain { chain, rule_prob, self_loops }
}

/// Trend, `botfin` and divergence data of one bottom component.
#[derive(Clone, Debug, PartialEq)]
pub struct BsccAnalysis {
    pub component: Vec<usize>,
    /// Expected one-step counter change per component state.
    pub change: Vec<Vec<Rational>>,
    /// Invariant distribution, indexed like `component`.
    pub mu: Vec<Rational>,
    pub trend: Vec<Rational>,
    /// `botfin[i][k]` for counter `i + 1` at `component[k]`; `None` is `∞`.
    pub botfin: Vec<Vec<Option<u64>>>,
    pub diverging: Vec<bool>,
}

impl BsccAnalysis {
    pub fn position(&self, q: usize) -> Option<usize> {
        self.component.iter().position(|&c| c == q)
    }

    pub fn all_diverging(&self) -> bool {
        self.diverging.iter().all(|&b| b)
    }

    /// Bitmask of the counters with positive trend.
    pub fn positive_mask(&self) -> u64 {
        self.trend
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_positive())
            .fold(0, |m, (k, _)| m | 1 << k)
    }
}

/// Change vectors, invariant distribution and trend of a bottom component.
/// `botfin` and the divergence flags are filled in as well.
pub fn bscc_trend(pmc: &Pmc, floor: &FloorChain, component: &[usize]) -> Result<BsccAnalysis> {
    bscc_trend_capped(pmc, floor, component, usize::MAX)
}

fn bscc_trend_capped(pmc: &Pmc, floor: &FloorChain, component: &[usize], cap: usize) -> Result<BsccAnalysis> {
    let d = pmc.dimension();
    if component.len() > cap {
        return Err(Error::ResourceExhausted(format!(
            "bottom component of {} states exceeds the exact-solve cap {cap}",
            component.len()
        )));
    }
    let mu: Vec<Rational> = floor
        .chain
        .stationary_distribution(component, NumericPolicy::Exact { cap: usize::MAX })?
        .into_iter()
        .map(|p| p.exact().cloned().expect("exact policy"))
        .collect();
    let mut change = vec![vec![Rational::zero(); d]; component.len()];
    for (k, r) in pmc.rules().iter().enumerate() {
        let Some(p) = &floor.rule_prob[k] else { continue };
        let Some(pos) = component.iter().position(|&c| c == r.src) else { continue };
        for (i, &x) in r.delta.iter().enumerate() {
            if x != 0 {
                change[pos][i] += p * Rational::from_integer(x.into());
            }
        }
    }
    let trend: Vec<Rational> =
        (0..d).map(|i| mu.iter().zip(&change).map(|(m, c)| m * &c[i]).sum()).collect();
    let botfin_table = (1..=d).map(|i| botfin(pmc, component, i)).collect();
    let mut a = BsccAnalysis {
        component: component.to_vec(),
        change,
        mu,
        trend,
        botfin: botfin_table,
        diverging: Vec::new(),
    };
    a.diverging = classify_divergence(&a);
    Ok(a)
}

/// `botfin_i` on a bottom component. Along a path where every counter stays
/// positive, counter `i` follows the `∅`-test edges of the component, so
/// the deepest reachable drop below the start decides the value: a
/// negative cycle makes it `∞` everywhere, otherwise it is one more than the
/// largest drop (at most `|C| − 1`).
pub fn botfin(pmc: &Pmc, component: &[usize], i: usize) -> Vec<Option<u64>> {
    let n = component.len();
    let local: HashMap<usize, usize> = component.iter().enumerate().map(|(k, &q)| (q, k)).collect();
    let edges: Vec<(usize, usize, i64)> = pmc
        .rules()
        .iter()
        .filter(|r| r.zero_test == 0)
        .filter_map(|r| Some((*local.get(&r.src)?, *local.get(&r.dst)?, r.delta[i - 1] as i64)))
        .collect();
    // dist[q]: least prefix sum over paths from q, the empty path included.
    let mut dist = vec![0i64; n];
    for _ in 0..=n {
        let mut changed = false;
        for &(s, t, w) in &edges {
            let v = w + dist[t];
            if v < dist[s] {
                dist[s] = v;
                changed = true;
            }
        }
        if !changed {
            return dist.iter().map(|&x| Some((1 - x) as u64)).collect();
        }
    }
    vec![None; n]
}

/// A counter diverges iff its trend is positive, or zero with finite `botfin`.
pub fn classify_divergence(a: &BsccAnalysis) -> Vec<bool> {
    a.trend
        .iter()
        .zip(&a.botfin)
        .map(|(t, b)| t.is_positive() || (t.is_zero() && b.iter().all(Option::is_some)))
        .collect()
}

/// Floor chain plus the analysis of each of its bottom components.
pub fn analyze_bsccs(pmc: &Pmc) -> Result<(FloorChain, Vec<BsccAnalysis>)> {
    analyze_bsccs_capped(pmc, usize::MAX)
}

/// [`analyze_bsccs`] refusing components above `cap` states.
pub fn analyze_bsccs_capped(pmc: &Pmc, cap: usize) -> Result<(FloorChain, Vec<BsccAnalysis>)> {
    let floor = build_floor_chain(pmc);
    let scc = floor.chain.scc_decomposition();
    let mut out = Vec::new();
    for (_, comp) in scc.bottoms() {
        let mut comp = comp.to_vec();
        comp.sort_unstable();
        out.push(bscc_trend_capped(pmc, &floor, &comp, cap)?);
    }
    Ok((floor, out))
}

/// Upper bound `(1 − p_min^|Q|)^⌊n/|Q|⌋` on the probability of spending `n`
/// steps outside bottom components with all counters positive.
pub fn escape_bound(pmc: &Pmc, n: u64) -> f64 {
    let q = pmc.num_states().max(1) as u64;
    let p = rational::to_f64(&pmc.p_min_or_one());
    let blocks = n / q;
    if blocks == 0 {
        return 1.0;
    }
    let stay = p.powi(q.min(i32::MAX as u64) as i32);
    (blocks as f64 * (-stay).ln_1p()).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceConstants {
    /// `2|C| / x_min^|C|`.
    pub delta: Rational,
    /// `exp(−t² / (8(δ + t + 1)²))`.
    pub a: f64,
    /// `2δ / t`.
    pub threshold: Rational,
    /// Truncation level with `a^K / (1 − a) < ε`; saturates at `u64::MAX`.
    pub k: u64,
}

/// Tail constants for a one-dimensional model whose bottom component has
/// positive trend.
pub fn divergence_constants(onedim: &Pmc, component: &[usize], eps: f64) -> Result<DivergenceConstants> {
    if onedim.dimension() != 1 {
        return Err(Error::Precondition("divergence constants need a one-dimensional model".into()));
    }
    let floor = build_floor_chain(onedim);
    let a = bscc_trend(onedim, &floor, component)?;
    constants_from(component.len(), &onedim.p_min_or_one(), &a.trend[0], eps)
}

fn constants_from(c: usize, x_min: &Rational, t: &Rational, eps: f64) -> Result<DivergenceConstants> {
    if !t.is_positive() {
        return Err(Error::Precondition(format!("trend {t} is not positive")));
    }
    if !(eps > 0.0) {
        return Err(Error::Precondition("ε must be positive".into()));
    }
    let delta = Rational::from_integer((2 * c).into()) / num_traits::pow(x_min.clone(), c);
    let threshold = Rational::from_integer(2.into()) * &delta / t;
    let tf = rational::to_f64(t);
    let df = rational::to_f64(&delta);
    let x = tf * tf / (8.0 * (df + tf + 1.0).powi(2));
    let a = (-x).exp();
    let k = if x > 0.0 && x.is_finite() {
        let bound = (1.0 / eps).ln().max(0.0) / ((-(-x).exp_m1()) * x);
        if bound.is_finite() && bound < 1.8e19 {
            (bound.ceil() as u64).saturating_add(1)
        } else {
            u64::MAX
        }
    } else {
        u64::MAX
    };
    Ok(DivergenceConstants { delta, a, threshold, k })
}

/// Smallest positive probability of `B_i` (the model seen through counter
/// `i` alone) within the given states.
fn onedim_x_min(pmc: &Pmc, i: usize) -> Rational {
    let bit = 1u64 << (i - 1);
    let mut best: Option<Rational> = None;
    for q in 0..pmc.num_states() {
        for mask in [0, bit] {
            let idx: Vec<usize> = pmc
                .rules()
                .iter()
                .enumerate()
                .filter(|(_, r)| r.src == q && (r.zero_test == 0 || r.zero_test == bit))
                .filter(|(_, r)| r.zero_test == mask && (mask == 0 || r.delta[i - 1] >= 0))
                .map(|(k, _)| k)
                .collect();
            let total: u64 = idx.iter().map(|&k| pmc.rules()[k].weight).sum();
            for k in idx {
                let p = Rational::new(pmc.rules()[k].weight.into(), total.into());
                if best.as_ref().map_or(true, |b| p < *b) {
                    best = Some(p);
                }
            }
        }
    }
    best.unwrap_or_else(rational::one)
}

#[derive(Clone, Debug)]
pub struct Case1Witness {
    pub component: Vec<usize>,
    /// Component state that is covered and lies on the cycle.
    pub state: usize,
    pub cycle: CycleCertificate,
    /// `Z_all`-safe path from the start to the covering configuration.
    pub path: Option<Vec<Configuration>>,
}

#[derive(Clone, Debug)]
pub struct QualitativeCase1 {
    pub verdict: Verdict,
    pub witness: Option<Case1Witness>,
    pub analyses: Vec<BsccAnalysis>,
    pub diagnostics: Vec<String>,
    pub tree_nodes: usize,
}

pub fn qualitative_case1(pmc: &Pmc, start: &Configuration) -> Result<QualitativeCase1> {
    qualitative_case1_with(pmc, start, &CoverOptions::default())
}

/// Decides whether a zero counter is reached with probability 1.
pub fn qualitative_case1_with(pmc: &Pmc, start: &Configuration, opts: &CoverOptions) -> Result<QualitativeCase1> {
    let (floor, analyses) = analyze_bsccs_capped(pmc, opts.exact_cap)?;
    let mut out = QualitativeCase1 {
        verdict: Verdict::AlmostSure,
        witness: None,
        analyses: Vec::new(),
        diagnostics: floor.diagnostics(pmc),
        tree_nodes: 0,
    };
    if zero_set(start) != 0 {
        out.diagnostics.push("the initial configuration already has a zero counter".into());
        out.analyses = analyses;
        return Ok(out);
    }
    let vass = to_blocking_vass(pmc);
    for a in &analyses {
        if !a.all_diverging() {
            continue;
        }
        let mut edges = component_edges(pmc, &a.component);
        for &q in &floor.self_loops {
            if a.position(q).is_some() {
                edges.push(CycleEdge { src: q, dst: q, delta: vec![0; pmc.dimension()] });
            }
        }
        let cycle = nonneg_cycle_exists(&edges, pmc.dimension(), a.positive_mask());
        for &q in &cycle.states {
            let pos = a.position(q).expect("cycle inside component");
            let floor_vec: Vec<Floor> = (0..pmc.dimension())
                .map(|i| {
                    if a.trend[i].is_positive() {
                        Floor::Omega
                    } else {
                        Floor::AtLeast(a.botfin[i][pos].expect("diverging").max(1))
                    }
                })
                .collect();
            let res = karp_miller_cover_above(&vass, start, q, &floor_vec, opts)?;
            out.tree_nodes += res.tree_nodes;
            if res.covered {
                let path = match &res.witness {
                    Some(word) => {
                        let p = pmc_path_of_word(pmc, &vass, start, word)?;
                        if !witness_is_safe(pmc, &p)? {
                            return Err(Error::Numeric("covering witness failed its safety replay".into()));
                        }
                        Some(p)
                    }
                    None => {
                        out.diagnostics.push("covering path too long to materialize".into());
                        None
                    }
                };
                out.verdict = Verdict::NotAlmostSure;
                out.witness = Some(Case1Witness { component: a.component.clone(), state: q, cycle: cycle.clone(), path });
                out.analyses = analyses;
                return Ok(out);
            }
        }
    }
    out.analyses = analyses;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ApproxOptions {
    pub relative: bool,
    /// Cap on the number of explicit configurations per finite chain.
    pub max_states: usize,
    pub cover: CoverOptions,
}

impl Default for ApproxOptions {
    fn default() -> Self {
        ApproxOptions { relative: false, max_states: 4_000_000, cover: CoverOptions::default() }
    }
}

#[derive(Clone, Debug)]
pub struct ApproxCase1 {
    pub nu: f64,
    /// Absolute error budget actually used.
    pub eps_abs: f64,
    pub qualitative: Verdict,
    /// Length of the unfolded prefix before bottom components.
    pub unfold_steps: u64,
    /// Number of explicit configurations solved, over all levels.
    pub explored: usize,
    pub diagnostics: Vec<String>,
}

pub fn approx_case1(pmc: &Pmc, start: &Configuration, eps: f64, relative: bool) -> Result<ApproxCase1> {
    approx_case1_with(pmc, start, eps, &ApproxOptions { relative, ..ApproxOptions::default() })
}

/// Approximates the probability of reaching a zero counter from `start`.
pub fn approx_case1_with(pmc: &Pmc, start: &Configuration, eps: f64, opts: &ApproxOptions) -> Result<ApproxCase1> {
    if !(eps > 0.0) {
        return Err(Error::Precondition("ε must be positive".into()));
    }
    let mut res = ApproxCase1 {
        nu: 1.0,
        eps_abs: eps,
        qualitative: Verdict::AlmostSure,
        unfold_steps: 0,
        explored: 0,
        diagnostics: Vec::new(),
    };
    if zero_set(start) != 0 {
        return Ok(res);
    }
    let qual = qualitative_case1_with(pmc, start, &opts.cover)?;
    res.diagnostics = qual.diagnostics.clone();
    if qual.verdict == Verdict::AlmostSure {
        return Ok(res);
    }
    res.qualitative = qual.verdict;
    let mut eps_abs = eps.min(1.0);
    if opts.relative {
        let m = start.counters.iter().copied().max().unwrap_or(0);
        let p = rational::to_f64(&pmc.p_min_or_one());
        let lower = (m as f64 * pmc.num_states() as f64 * p.ln()).exp();
        eps_abs *= lower;
        if !(eps_abs >= 1e-12) {
            return Err(Error::BudgetUnderflow(eps_abs));
        }
    }
    res.eps_abs = eps_abs;
    let floor = build_floor_chain(pmc);
    let mut ap = Approximator::new(pmc, floor, qual.analyses, opts.max_states)?;
    let bscc_of = ap.bscc_of.clone();
    if bscc_of[start.state].is_some() {
        res.nu = ap.prop(ap.full, start, eps_abs)?;
    } else {
        let (nu, n) = ap.unfold(start, eps_abs)?;
        res.nu = nu;
        res.unfold_steps = n;
    }
    res.nu = res.nu.clamp(0.0, 1.0);
    res.explored = ap.explored;
    Ok(res)
}

struct Approximator<'a> {
    pmc: &'a Pmc,
    floor: FloorChain,
    analyses: Vec<BsccAnalysis>,
    bscc_of: Vec<Option<usize>>,
    full: u64,
    d: usize,
    max_states: usize,
    models: HashMap<u64, Pmc>,
    memo: HashMap<(u64, usize, Vec<u64>), f64>,
    g: HashMap<usize, GSolution>,
    truncation: HashMap<(u64, usize), u64>,
    explored: usize,
}

impl<'a> Approximator<'a> {
    fn new(pmc: &'a Pmc, floor: FloorChain, analyses: Vec<BsccAnalysis>, max_states: usize) -> Result<Self> {
        let d = pmc.dimension();
        let mut bscc_of = vec![None; pmc.num_states()];
        for (k, a) in analyses.iter().enumerate() {
            for &q in &a.component {
                bscc_of[q] = Some(k);
            }
        }
        let full = (1u64 << d) - 1;
        let mut models = HashMap::new();
        models.insert(full, pmc.clone());
        Ok(Approximator {
            pmc,
            floor,
            analyses,
            bscc_of,
            full,
            d,
            max_states,
            models,
            memo: HashMap::new(),
            g: HashMap::new(),
            truncation: HashMap::new(),
            explored: 0,
        })
    }

    /// The model with only the counters in `kept` (original indices).
    fn model(&mut self, kept: u64) -> Result<Pmc> {
        if let Some(m) = self.models.get(&kept) {
            return Ok(m.clone());
        }
        // Forget the lowest dropped counter from the model one level up.
        let dropped = self.full & !kept;
        let i = dropped.trailing_zeros() as u64;
        let parent_mask = kept | 1 << i;
        let parent = self.model(parent_mask)?;
        let pos = (parent_mask & ((1 << i) - 1)).count_ones() as usize + 1;
        let m = forget_counter(&parent, pos)?;
        self.models.insert(kept, m.clone());
        Ok(m)
    }

    /// Least `K` with `P(counter i drops by K) ≤ eps` from every state of
    /// the component, from the divergence constant and from the `G` matrix
    /// of the counter's one-counter view.
    fn truncation_level(&mut self, comp: usize, i: usize, eps: f64) -> Result<u64> {
        let a = &self.analyses[comp];
        let formula = constants_from(a.component.len(), &onedim_x_min(self.pmc, i), &a.trend[i - 1], eps)?.k;
        if !self.g.contains_key(&i) {
            let b = project_counter(self.pmc, i)?;
            let sol = solve_g_matrix(&step_matrices(&b), &GOptions::default())?;
            self.g.insert(i, sol);
        }
        let g = &self.g[&i].g;
        let comp_states = &self.analyses[comp].component;
        let mut v = vec![1.0f64; g.rows];
        let mut k = 0u64;
        while k < formula && k < 50_000_000 {
            if comp_states.iter().all(|&q| v[q] <= eps) {
                return Ok(k);
            }
            let gv = g.mul_vec(&v);
            v = gv.iter().map(|x| (x * (1.0 + 1e-9) + 1e-13).min(1.0)).collect();
            k += 1;
        }
        if formula >= 50_000_000 {
            return Err(Error::ResourceExhausted(format!(
                "truncation level for counter {i} exceeds 5e7 (trend too close to zero)"
            )));
        }
        Ok(formula)
    }

    /// Approximation for a start state inside a bottom component, in the
    /// model keeping the counters of `kept`.
    fn prop(&mut self, kept: u64, cfg: &Configuration, eps: f64) -> Result<f64> {
        if zero_set(cfg) != 0 {
            return Ok(1.0);
        }
        let key = (kept, cfg.state, cfg.counters.clone());
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let comp = self.bscc_of[cfg.state].expect("state in a bottom component");
        let orig: Vec<usize> = (1..=self.d).filter(|&i| kept >> (i - 1) & 1 == 1).collect();
        let dim = orig.len();
        if orig.iter().any(|&i| !self.analyses[comp].diverging[i - 1]) {
            self.memo.insert(key, 1.0);
            return Ok(1.0);
        }
        let level_eps = eps / dim as f64;
        let mut limit = Vec::with_capacity(dim);
        for &i in &orig {
            let a = &self.analyses[comp];
            let lim = if a.trend[i - 1].is_positive() {
                let tk = (kept, i);
                match self.truncation.get(&tk) {
                    Some(&k) => k,
                    None => {
                        let k = self.truncation_level(comp, i, level_eps)?.max(1);
                        self.truncation.insert(tk, k);
                        k
                    }
                }
            } else {
                a.component.len() as u64
            };
            limit.push(lim);
        }
        let mindiv = |c: &Configuration| c.counters.iter().zip(&limit).position(|(x, l)| x >= l);
        let sub_eps = eps * (dim as f64 - 1.0) / dim as f64;
        if let Some(j) = mindiv(cfg) {
            let v = self.boundary(kept, &orig, j, cfg, sub_eps)?;
            self.memo.insert(key, v);
            return Ok(v);
        }
        let model = self.model(kept)?;
        let mut index: HashMap<Configuration, usize> = HashMap::new();
        let mut nodes: Vec<Configuration> = vec![cfg.clone()];
        let mut fixed: Vec<Option<f64>> = vec![None];
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
        index.insert(cfg.clone(), 0);
        let mut queue = VecDeque::from([0usize]);
        while let Some(v) = queue.pop_front() {
            let c = nodes[v].clone();
            let mut row = Vec::new();
            for t in transition_distribution(&model, &c)? {
                let id = match index.get(&t.target) {
                    Some(&id) => id,
                    None => {
                        let id = nodes.len();
                        if id >= self.max_states {
                            return Err(Error::ResourceExhausted(format!(
                                "truncated chain exceeds {} configurations",
                                self.max_states
                            )));
                        }
                        index.insert(t.target.clone(), id);
                        nodes.push(t.target.clone());
                        rows.push(Vec::new());
                        if zero_set(&t.target) != 0 {
                            fixed.push(Some(1.0));
                        } else if let Some(j) = mindiv(&t.target) {
                            fixed.push(None);
                            let x = self.boundary(kept, &orig, j, &t.target, sub_eps)?;
                            fixed[id] = Some(x);
                        } else {
                            fixed.push(None);
                            queue.push_back(id);
                        }
                        id
                    }
                };
                row.push((id, rational::to_f64(&t.prob)));
            }
            rows[v] = row;
        }
        for (k, r) in rows.iter_mut().enumerate() {
            if r.is_empty() {
                r.push((k, 1.0));
            }
        }
        self.explored += nodes.len();
        let chain = FiniteChain::float(rows)?;
        let x = chain.absorption_f64(&fixed)?;
        let v = x[0].clamp(0.0, 1.0);
        self.memo.insert(key, v);
        Ok(v)
    }

    /// Value at a configuration whose `j`-th kept counter passed its
    /// truncation level: the same question with that counter forgotten.
    fn boundary(&mut self, kept: u64, orig: &[usize], j: usize, c: &Configuration, eps: f64) -> Result<f64> {
        if orig.len() == 1 {
            return Ok(0.0);
        }
        let sub = kept & !(1u64 << (orig[j] - 1));
        let mut counters = c.counters.clone();
        counters.remove(j);
        self.prop(sub, &Configuration { state: c.state, counters }, eps)
    }

    /// Explores the prefix before a bottom component is entered, up to the
    /// step count after which the remaining mass is below `eps / 2`.
    fn unfold(&mut self, start: &Configuration, eps: f64) -> Result<(f64, u64)> {
        let n = self.unfold_steps(eps / 2.0)?;
        let mut index: HashMap<Configuration, usize> = HashMap::new();
        let mut nodes = vec![start.clone()];
        let mut depth = vec![0u64];
        let mut fixed: Vec<Option<f64>> = vec![None];
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
        index.insert(start.clone(), 0);
        let mut queue = VecDeque::from([0usize]);
        while let Some(v) = queue.pop_front() {
            let c = nodes[v].clone();
            if depth[v] >= n {
                fixed[v] = Some(0.0);
                continue;
            }
            let mut row = Vec::new();
            for t in transition_distribution(self.pmc, &c)? {
                let id = match index.get(&t.target) {
                    Some(&id) => id,
                    None => {
                        let id = nodes.len();
                        if id >= self.max_states {
                            return Err(Error::ResourceExhausted(format!(
                                "unfolded prefix exceeds {} configurations",
                                self.max_states
                            )));
                        }
                        index.insert(t.target.clone(), id);
                        nodes.push(t.target.clone());
                        depth.push(depth[v] + 1);
                        rows.push(Vec::new());
                        fixed.push(None);
                        if zero_set(&t.target) != 0 {
                            fixed[id] = Some(1.0);
                        } else if self.bscc_of[t.target.state].is_some() {
                            let x = self.prop(self.full, &t.target, eps / 2.0)?;
                            fixed[id] = Some(x);
                        } else {
                            queue.push_back(id);
                        }
                        id
                    }
                };
                row.push((id, rational::to_f64(&t.prob)));
            }
            rows[v] = row;
        }
        for (k, r) in rows.iter_mut().enumerate() {
            if r.is_empty() {
                r.push((k, 1.0));
            }
        }
        self.explored += nodes.len();
        let chain = FiniteChain::float(rows)?;
        let x = chain.absorption_f64(&fixed)?;
        Ok((x[0], n))
    }

    /// Least `n` such that the floor chain restricted to non-bottom states
    /// keeps at most `eps` mass after `n` steps, capped by the generic
    /// bound from [`escape_bound`].
    fn unfold_steps(&self, eps: f64) -> Result<u64> {
        let q = self.pmc.num_states() as u64;
        let p = rational::to_f64(&self.pmc.p_min_or_one());
        let stay = p.powi(q as i32);
        let per_block = (-stay).ln_1p();
        let generic = if per_block < 0.0 {
            let blocks = (eps.ln() / per_block).ceil();
            if blocks.is_finite() && blocks < 1e15 {
                (blocks as u64).saturating_mul(q)
            } else {
                u64::MAX
            }
        } else {
            u64::MAX
        };
        let transient: Vec<usize> = (0..self.pmc.num_states()).filter(|&s| self.bscc_of[s].is_none()).collect();
        let local: BTreeMap<usize, usize> = transient.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        let rows: Vec<Vec<(usize, f64)>> = transient
            .iter()
            .map(|&s| {
                self.floor.chain.row_f64(s).into_iter().filter_map(|(j, x)| Some((*local.get(&j)?, x))).collect()
            })
            .collect();
        let mut v = vec![1.0f64; transient.len()];
        let mut n = 0u64;
        while n < generic {
            if v.iter().all(|&x| x <= eps) {
                return Ok(n);
            }
            if n >= 10_000_000 {
                break;
            }
            v = rows
                .iter()
                .map(|r| (r.iter().map(|&(j, x)| x * v[j]).sum::<f64>() * (1.0 + 1e-12)).min(1.0))
                .collect();
            n += 1;
        }
        if generic == u64::MAX {
            return Err(Error::ResourceExhausted("unfolding length overflows".into()));
        }
        Ok(generic.min(n.max(generic)))
    }
}

/// `t` as an `f64`, for reports.
pub fn trend_f64(a: &BsccAnalysis) -> Vec<f64> {
    a.trend.iter().map(|t| t.to_f64().unwrap_or(f64::NAN)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;
    use crate::text_format::parse_pmc;
    use proptest::prelude::*;

    fn gambler(up: u64, down: u64) -> Pmc {
        parse_pmc(&format!(
            "pmc dimension 1\nstate q\nrule q -> q delta [1] zero {{}} weight {up}\n\
             rule q -> q delta [-1] zero {{}} weight {down}\nrule q -> q delta [1] zero {{1}} weight 1\n"
        ))
        .unwrap()
    }

    pub(crate) fn fig1() -> Pmc {
        let mut s = String::from("pmc fig1 dimension 2\nstate s\nrule s -> s delta [-1,-1] zero {} weight 100\n");
        for z in ["{}", "{1}", "{2}", "{1,2}"] {
            s += &format!("rule s -> s delta [1,0] zero {z} weight 1\nrule s -> s delta [0,1] zero {z} weight 1\n");
        }
        s += "rule s -> s delta [1,0] zero {} weight 10 label \"t1\"\nrule s -> s delta [1,0] zero {2} weight 10 label \"t1\"\n";
        s += "rule s -> s delta [0,1] zero {} weight 10 label \"t2\"\nrule s -> s delta [0,1] zero {1} weight 10 label \"t2\"\n";
        parse_pmc(&s).unwrap()
    }

    #[test]
    fn floor_chain_normalizes_and_self_loops() {
        let pmc = parse_pmc(
            "pmc dimension 1\nstate q\nstate r\nrule q -> r delta [0] zero {} weight 1\n\
             rule q -> q delta [0] zero {} weight 3\nrule r -> r delta [1] zero {1} weight 1\n",
        )
        .unwrap();
        let f = build_floor_chain(&pmc);
        assert_eq!(f.chain.row_exact(0).unwrap(), &[(0, ratio(3, 4)), (1, ratio(1, 4))]);
        assert_eq!(f.chain.row_exact(1).unwrap(), &[(1, ratio(1, 1))]);
        assert_eq!(f.self_loops, vec![1]);
        let f = build_floor_chain(&fig1());
        assert_eq!(f.chain.row_exact(0).unwrap(), &[(0, ratio(1, 1))]);
    }

    #[test]
    fn fig1_trend() {
        let (_, a) = analyze_bsccs(&fig1()).unwrap();
        assert_eq!(a[0].trend, vec![ratio(-89, 122), ratio(-89, 122)]);
        assert_eq!(a[0].diverging, vec![false, false]);
    }

    #[test]
    fn simple_trends() {
        let (_, a) = analyze_bsccs(&gambler(2, 1)).unwrap();
        assert_eq!(a[0].trend, vec![ratio(1, 3)]);
        assert!(a[0].diverging[0]);
        let (_, a) = analyze_bsccs(&gambler(1, 2)).unwrap();
        assert!(!a[0].diverging[0]);
        let (_, a) = analyze_bsccs(&gambler(1, 1)).unwrap();
        assert_eq!(a[0].trend, vec![ratio(0, 1)]);
        assert_eq!(a[0].botfin[0], vec![None]);
        assert!(!a[0].diverging[0]);
    }

    #[test]
    fn botfin_examples() {
        let up = parse_pmc("pmc dimension 1\nstate q\nrule q -> q delta [1] zero {} weight 1\n").unwrap();
        assert_eq!(botfin(&up, &[0], 1), vec![Some(1)]);
        let pair = parse_pmc(
            "pmc dimension 1\nstate p\nstate q\nrule p -> q delta [1] zero {} weight 1\nrule q -> p delta [-1] zero {} weight 1\n",
        )
        .unwrap();
        assert_eq!(botfin(&pair, &[0, 1], 1), vec![Some(1), Some(2)]);
        let (_, a) = analyze_bsccs(&pair).unwrap();
        assert_eq!(a[0].trend, vec![ratio(0, 1)]);
        assert!(a[0].diverging[0]);
        // Other counters are unconstrained, so a lone (-1,-1) loop drains
        // counter 1 from any level.
        let both = parse_pmc("pmc dimension 2\nstate s\nrule s -> s delta [-1,-1] zero {} weight 1\n").unwrap();
        assert_eq!(botfin(&both, &[0], 1), vec![None]);
    }

    #[test]
    fn escape_bound_values() {
        let p = gambler(1, 1);
        // p_min over all zero-test classes is 1/2.
        assert!((escape_bound(&p, 3) - 0.125).abs() < 1e-15);
        assert_eq!(escape_bound(&p, 0), 1.0);
        let two = parse_pmc(
            "pmc dimension 1\nstate a\nstate b\nrule a -> b delta [0] zero {} weight 1\n\
             rule a -> a delta [0] zero {} weight 2\nrule b -> a delta [0] zero {} weight 1\n\
             rule a -> a delta [0] zero {1} weight 1\nrule b -> b delta [0] zero {1} weight 1\n",
        )
        .unwrap();
        assert!((escape_bound(&two, 4) - 64.0 / 81.0).abs() < 1e-15);
    }

    #[test]
    fn gambler_constants() {
        let c = divergence_constants(&gambler(2, 1), &[0], 1e-3).unwrap();
        assert_eq!(c.delta, ratio(6, 1));
        assert_eq!(c.threshold, ratio(36, 1));
        assert!((c.a - (-1.0f64 / 3872.0).exp()).abs() < 1e-15);
        let a = c.a;
        let expect = ((1000f64).ln() / ((1.0 - a) * (1.0 / a).ln())).ceil() as u64 + 1;
        assert!(c.k.abs_diff(expect) <= 1);
        assert!(divergence_constants(&gambler(1, 2), &[0], 1e-3).is_err());
        let doubled = constants_from(1, &ratio(1, 3), &ratio(2, 3), 1e-3).unwrap();
        let base = constants_from(1, &ratio(1, 3), &ratio(1, 3), 1e-3).unwrap();
        assert!(doubled.a < base.a);
    }

    #[test]
    fn qualitative_examples() {
        let start = Configuration::new(0, vec![1]);
        let q = qualitative_case1(&gambler(2, 1), &start).unwrap();
        assert_eq!(q.verdict, Verdict::NotAlmostSure);
        let w = q.witness.unwrap();
        assert!(witness_is_safe(&gambler(2, 1), w.path.as_ref().unwrap()).unwrap());
        assert_eq!(qualitative_case1(&gambler(1, 2), &start).unwrap().verdict, Verdict::AlmostSure);
        let fig = fig1();
        assert_eq!(qualitative_case1(&fig, &Configuration::new(0, vec![1, 1])).unwrap().verdict, Verdict::AlmostSure);
    }

    #[test]
    fn stuck_state_never_reaches_zero() {
        let pmc = parse_pmc(
            "pmc dimension 1\nstate q\nstate r\nrule q -> r delta [1] zero {} weight 1\n\
             rule q -> q delta [-1] zero {} weight 1\nrule r -> r delta [1] zero {1} weight 1\n",
        )
        .unwrap();
        let start = Configuration::new(0, vec![1]);
        assert_eq!(qualitative_case1(&pmc, &start).unwrap().verdict, Verdict::NotAlmostSure);
        let r = approx_case1(&pmc, &start, 1e-6, false).unwrap();
        assert!((r.nu - 0.5).abs() < 1e-6, "{}", r.nu);
    }

    #[test]
    fn gambler_approximation() {
        let start = Configuration::new(0, vec![1]);
        let r = approx_case1(&gambler(2, 1), &start, 1e-3, false).unwrap();
        assert!((r.nu - 0.5).abs() <= 1e-3, "{}", r.nu);
        let r = approx_case1(&gambler(1, 2), &start, 1e-3, false).unwrap();
        assert_eq!(r.nu, 1.0);
        let r = approx_case1(&fig1(), &Configuration::new(0, vec![1, 1]), 1e-2, false).unwrap();
        assert_eq!(r.nu, 1.0);
    }

    #[test]
    fn relative_mode_scales_budget() {
        let start = Configuration::new(0, vec![3]);
        let r = approx_case1(&gambler(2, 1), &start, 1e-2, true).unwrap();
        // exact value (1/2)^3
        assert!((r.nu - 0.125).abs() <= 0.125 * 1e-2, "{}", r.nu);
        assert!(r.eps_abs < 1e-2);
    }

    #[test]
    fn two_dimensional_independent_walks() {
        // Both counters are independent up-biased walks; a zero is avoided
        // iff each walk escapes: 1 - (1/2)(1/2) ... from (1,1) the run stops
        // at the first zero of either, so P = 1 - 1/4 = 3/4.
        let pmc = parse_pmc(
            "pmc dimension 2\nstate s\nrule s -> s delta [1,0] zero {} weight 2\nrule s -> s delta [-1,0] zero {} weight 1\n\
             rule s -> s delta [0,1] zero {} weight 2\nrule s -> s delta [0,-1] zero {} weight 1\n",
        )
        .unwrap();
        let r = approx_case1(&pmc, &Configuration::new(0, vec![1, 1]), 1e-3, false).unwrap();
        assert!((r.nu - 0.75).abs() <= 1e-3, "{}", r.nu);
    }

    #[test]
    fn transient_prefix_is_unfolded() {
        // From `a` the run moves to an up-biased loop or a down-biased one.
        let pmc = parse_pmc(
            "pmc dimension 1\nstate a\nstate u\nstate w\nrule a -> u delta [0] zero {} weight 1\n\
             rule a -> w delta [0] zero {} weight 1\nrule u -> u delta [1] zero {} weight 2\n\
             rule u -> u delta [-1] zero {} weight 1\nrule w -> w delta [-1] zero {} weight 2\n\
             rule w -> w delta [1] zero {} weight 1\n",
        )
        .unwrap();
        let r = approx_case1(&pmc, &Configuration::new(0, vec![1]), 1e-4, false).unwrap();
        assert!((r.nu - 0.75).abs() <= 1e-4, "{}", r.nu);
        assert!(r.unfold_steps >= 1);
    }

    /// All paths of length at most `len` with every configuration but the
    /// last positive, other counters unconstrained: the deepest drop of
    /// counter `i`.
    fn brute_max_drop(pmc: &Pmc, comp: &[usize], i: usize, q: usize, len: usize) -> i64 {
        let edges: Vec<(usize, usize, i64)> = pmc
            .rules()
            .iter()
            .filter(|r| r.zero_test == 0 && comp.contains(&r.src) && comp.contains(&r.dst))
            .map(|r| (r.src, r.dst, r.delta[i - 1] as i64))
            .collect();
        let mut best = 0;
        let mut frontier = vec![(q, 0i64, 0i64)];
        for _ in 0..len {
            let mut next = Vec::new();
            for &(s, sum, low) in &frontier {
                for &(a, b, w) in &edges {
                    if a == s {
                        let ns = sum + w;
                        next.push((b, ns, low.min(ns)));
                        best = best.max(-ns);
                    }
                }
            }
            next.sort_unstable();
            next.dedup();
            frontier = next;
        }
        best
    }

    fn random_component(n: usize, rules: &[(usize, usize, i8, i8, u64)]) -> Pmc {
        let mut s = String::from("pmc dimension 2\n");
        for k in 0..n {
            s += &format!("state q{k}\n");
        }
        // A ring keeps the states strongly connected.
        for k in 0..n {
            s += &format!("rule q{k} -> q{} delta [0,0] zero {{}} weight 1\n", (k + 1) % n);
        }
        for &(a, b, x, y, w) in rules {
            s += &format!("rule q{} -> q{} delta [{x},{y}] zero {{}} weight {w}\n", a % n, b % n);
        }
        parse_pmc(&s).unwrap()
    }

    proptest! {
        #[test]
        fn botfin_matches_path_enumeration(
            n in 1usize..=4,
            rules in prop::collection::vec((0usize..4, 0usize..4, -1i8..=1, -1i8..=1, 1u64..4), 0..6),
        ) {
            let pmc = random_component(n, &rules);
            let comp: Vec<usize> = (0..n).collect();
            let table = botfin(&pmc, &comp, 1);
            for q in 0..n {
                let short = brute_max_drop(&pmc, &comp, 1, q, n.saturating_sub(1));
                let long = brute_max_drop(&pmc, &comp, 1, q, n * (n + 2));
                match table[q] {
                    Some(b) => {
                        prop_assert!(b as usize <= n);
                        prop_assert_eq!(b as i64, short + 1);
                        prop_assert_eq!(long, short);
                    }
                    None => prop_assert!(long > n as i64),
                }
            }
        }

        #[test]
        fn trend_identity_is_exact(
            n in 1usize..=4,
            rules in prop::collection::vec((0usize..4, 0usize..4, -1i8..=1, -1i8..=1, 1u64..4), 0..6),
        ) {
            let pmc = random_component(n, &rules);
            let (f, analyses) = analyze_bsccs(&pmc).unwrap();
            for a in &analyses {
                for i in 0..2 {
                    let s: Rational = a.mu.iter().zip(&a.change).map(|(m, c)| m * &c[i]).sum();
                    prop_assert_eq!(&s, &a.trend[i]);
                }
                let total: Rational = a.mu.iter().sum();
                prop_assert!(total.is_one());
            }
            for q in 0..n {
                let s: Rational = f.chain.row_exact(q).unwrap().iter().map(|e| e.1.clone()).sum();
                prop_assert!(s.is_one());
            }
        }
    }
}

//! pMC data model and its operational semantics.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// Set of counters as a bitmask: bit `i - 1` stands for counter `i`.
pub type ZeroSet = u64;

/// Largest dimension accepted by the model.
pub const MAX_DIMENSION: usize = 24;

pub fn mask_of(indices: &[usize]) -> ZeroSet {
    indices.iter().fold(0, |m, &i| m | (1u64 << (i - 1)))
}

pub fn mask_indices(mask: ZeroSet) -> Vec<usize> {
    (0..64).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub src: usize,
    pub delta: Vec<i8>,
    pub zero_test: ZeroSet,
    pub label: Option<String>,
    pub dst: usize,
    pub weight: u64,
}

impl Rule {
    /// A rule can fire from a configuration with zero set `mask` iff its
    /// zero test equals `mask` and it does not decrement a zero counter.
    pub fn enabled_at(&self, mask: ZeroSet) -> bool {
        self.zero_test == mask
            && self
                .delta
                .iter()
                .enumerate()
                .all(|(k, &x)| x >= 0 || mask >> k & 1 == 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    General,
    Pvass,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pmc {
    name: Option<String>,
    dimension: usize,
    states: Vec<String>,
    rules: Vec<Rule>,
    kind: Kind,
}

impl Pmc {
    /// Builds and validates a model. For [`Kind::Pvass`] the rule list must
    /// contain every zero-test variant of each rule; it is reordered so that
    /// the variants of one rule are consecutive in ascending mask order.
    pub fn new(
        name: Option<String>,
        dimension: usize,
        states: Vec<String>,
        rules: Vec<Rule>,
        kind: Kind,
    ) -> Result<Pmc> {
        if dimension == 0 || dimension > MAX_DIMENSION {
            return Err(Error::InvalidModel(format!(
                "dimension must be in 1..={MAX_DIMENSION}, got {dimension}"
            )));
        }
        let mut seen = HashMap::new();
        for (k, s) in states.iter().enumerate() {
            if seen.insert(s.clone(), k).is_some() {
                return Err(Error::InvalidModel(format!("duplicate state `{s}`")));
            }
        }
        let full: ZeroSet = (1u64 << dimension) - 1;
        for (k, r) in rules.iter().enumerate() {
            if r.src >= states.len() || r.dst >= states.len() {
                return Err(Error::InvalidModel(format!("rule {k} refers to an unknown state")));
            }
            if r.delta.len() != dimension {
                return Err(Error::InvalidModel(format!(
                    "rule {k} has delta of length {} but dimension is {dimension}",
                    r.delta.len()
                )));
            }
            if r.delta.iter().any(|x| !(-1..=1).contains(x)) {
                return Err(Error::InvalidModel(format!("rule {k} has a delta entry outside {{-1,0,1}}")));
            }
            if r.zero_test & !full != 0 {
                return Err(Error::InvalidModel(format!("rule {k} tests a counter outside 1..={dimension}")));
            }
            if r.weight == 0 {
                return Err(Error::InvalidModel(format!("rule {k} has weight 0")));
            }
        }
        let rules = match kind {
            Kind::General => rules,
            Kind::Pvass => canonical_pvass_order(dimension, rules)?,
        };
        Ok(Pmc { name, dimension, states, rules, kind })
    }

    /// Expands each rule (its zero test is ignored) into all `2^d` variants.
    pub fn pvass(
        name: Option<String>,
        dimension: usize,
        states: Vec<String>,
        compact: Vec<Rule>,
    ) -> Result<Pmc> {
        if dimension == 0 || dimension > MAX_DIMENSION {
            return Err(Error::InvalidModel(format!(
                "dimension must be in 1..={MAX_DIMENSION}, got {dimension}"
            )));
        }
        let mut rules = Vec::with_capacity(compact.len() << dimension);
        for r in compact {
            for mask in 0..(1u64 << dimension) {
                rules.push(Rule { zero_test: mask, ..r.clone() });
            }
        }
        Pmc::new(name, dimension, states, rules, Kind::Pvass)
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }
    pub fn dimension(&self) -> usize {
        self.dimension
    }
    pub fn states(&self) -> &[String] {
        &self.states
    }
    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }
    pub fn kind(&self) -> Kind {
        self.kind
    }
    pub fn num_states(&self) -> usize {
        self.states.len()
    }
    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }
    pub fn state_name(&self, q: usize) -> &str {
        &self.states[q]
    }

    /// One representative per compact `pvass rule` (the `∅` variant).
    pub fn pvass_representatives(&self) -> Vec<&Rule> {
        match self.kind {
            Kind::Pvass => self.rules.chunks(1 << self.dimension).map(|c| &c[0]).collect(),
            Kind::General => Vec::new(),
        }
    }

    pub fn config(&self, state: &str, counters: Vec<u64>) -> Result<Configuration> {
        let q = self
            .state_index(state)
            .ok_or_else(|| Error::InvalidModel(format!("unknown state `{state}`")))?;
        if counters.len() != self.dimension {
            return Err(Error::InvalidModel(format!(
                "configuration has {} counters, model has dimension {}",
                counters.len(),
                self.dimension
            )));
        }
        Ok(Configuration { state: q, counters })
    }

    /// Indices of the rules enabled from `state` when the zero set is `mask`.
    pub fn enabled_indices(&self, state: usize, mask: ZeroSet) -> Vec<usize> {
        self.rules
            .iter()
            .enumerate()
            .filter(|(_, r)| r.src == state && r.enabled_at(mask))
            .map(|(k, _)| k)
            .collect()
    }

    /// Least positive transition probability of the induced Markov chain,
    /// taken over every state and zero-test class.
    pub fn p_min(&self) -> Option<Rational> {
        let mut best: Option<Rational> = None;
        for q in 0..self.num_states() {
            for mask in 0..(1u64 << self.dimension) {
                let idx = self.enabled_indices(q, mask);
                let total: u64 = idx.iter().map(|&k| self.rules[k].weight).sum();
                for &k in &idx {
                    let p = Rational::new(self.rules[k].weight.into(), total.into());
                    if best.as_ref().map_or(true, |b| p < *b) {
                        best = Some(p);
                    }
                }
            }
        }
        best
    }

    /// Same as [`Pmc::p_min`] but returns 1 when no rule is ever enabled
    /// (every configuration then takes its forced self-loop).
    pub fn p_min_or_one(&self) -> Rational {
        self.p_min().unwrap_or_else(rational::one)
    }

    /// Keeps only the rules satisfying `keep`, preserving the model kind when
    /// the result still satisfies the pVASS condition.
    pub fn filter_rules(&self, keep: impl Fn(&Rule) -> bool) -> Pmc {
        let rules: Vec<Rule> = self.rules.iter().filter(|r| keep(r)).cloned().collect();
        let kind = if self.kind == Kind::Pvass && is_pvass_closed(self.dimension, &rules) {
            Kind::Pvass
        } else {
            Kind::General
        };
        Pmc::new(self.name.clone(), self.dimension, self.states.clone(), rules, kind)
            .expect("filtering keeps a valid model")
    }
}

fn pvass_key(r: &Rule) -> (usize, Vec<i8>, Option<String>, usize, u64) {
    (r.src, r.delta.clone(), r.label.clone(), r.dst, r.weight)
}

fn is_pvass_closed(d: usize, rules: &[Rule]) -> bool {
    let mut groups: HashMap<_, Vec<ZeroSet>> = HashMap::new();
    for r in rules {
        groups.entry(pvass_key(r)).or_default().push(r.zero_test);
    }
    groups.values().all(|masks| {
        let mut m = masks.clone();
        m.sort_unstable();
        m.len() % (1usize << d) == 0
            && m.chunks(1 << d).all(|c| c.iter().enumerate().all(|(k, &x)| x == k as u64))
    })
}

fn canonical_pvass_order(d: usize, rules: Vec<Rule>) -> Result<Vec<Rule>> {
    if !is_pvass_closed(d, &rules) {
        return Err(Error::InvalidModel(
            "pvass model lacks some zero-test variant of a rule".into(),
        ));
    }
    let mut order: Vec<(usize, Vec<i8>, Option<String>, usize, u64)> = Vec::new();
    let mut count: HashMap<_, usize> = HashMap::new();
    for r in &rules {
        let k = pvass_key(r);
        let c = count.entry(k.clone()).or_insert(0);
        if *c % (1 << d) == 0 {
            order.push(k);
        }
        *c += 1;
    }
    let mut out = Vec::with_capacity(rules.len());
    for (src, delta, label, dst, weight) in order {
        for mask in 0..(1u64 << d) {
            out.push(Rule { src, delta: delta.clone(), zero_test: mask, label: label.clone(), dst, weight });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    pub state: usize,
    pub counters: Vec<u64>,
}

impl Configuration {
    pub fn new(state: usize, counters: Vec<u64>) -> Configuration {
        Configuration { state, counters }
    }

    pub fn display<'a>(&'a self, pmc: &'a Pmc) -> impl fmt::Display + 'a {
        struct D<'a>(&'a Configuration, &'a Pmc);
        impl fmt::Display for D<'_> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let c: Vec<String> = self.0.counters.iter().map(|x| x.to_string()).collect();
                write!(f, "{}({})", self.1.state_name(self.0.state), c.join(","))
            }
        }
        D(self, pmc)
    }
}

/// Applies `delta` to `counters` with checked arithmetic.
pub fn apply_delta(counters: &[u64], delta: &[i8]) -> Option<Vec<u64>> {
    counters
        .iter()
        .zip(delta)
        .map(|(&c, &x)| match x {
            1 => c.checked_add(1),
            -1 => c.checked_sub(1),
            _ => Some(c),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StoppingCriterion {
    sets: Vec<ZeroSet>,
}

impl StoppingCriterion {
    pub fn new(sets: Vec<ZeroSet>) -> StoppingCriterion {
        StoppingCriterion { sets }
    }

    /// `{{1},…,{d}}`: stop as soon as any counter is zero.
    pub fn all(d: usize) -> StoppingCriterion {
        StoppingCriterion { sets: (0..d).map(|b| 1u64 << b).collect() }
    }

    /// `{{1},…,{d}} \ {{i}}`: counter `i` may be zero freely.
    pub fn minus(d: usize, i: usize) -> StoppingCriterion {
        StoppingCriterion { sets: (0..d).filter(|&b| b + 1 != i).map(|b| 1u64 << b).collect() }
    }

    pub fn sets(&self) -> &[ZeroSet] {
        &self.sets
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.sets.is_empty() {
            return Err(Error::InvalidCriterion("criterion must contain at least one set".into()));
        }
        let full: ZeroSet = (1u64 << d) - 1;
        for (a, &x) in self.sets.iter().enumerate() {
            if x == 0 {
                return Err(Error::InvalidCriterion("criterion contains the empty set".into()));
            }
            if x & !full != 0 {
                return Err(Error::InvalidCriterion(format!("criterion mentions a counter above {d}")));
            }
            for &y in &self.sets[a + 1..] {
                if x & y == x || x & y == y {
                    return Err(Error::InvalidCriterion(format!(
                        "sets {:?} and {:?} are comparable",
                        mask_indices(x),
                        mask_indices(y)
                    )));
                }
            }
        }
        Ok(())
    }

    /// True iff some member is contained in `zero`.
    pub fn covered_by(&self, zero: ZeroSet) -> bool {
        self.sets.iter().any(|&s| s & zero == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UndecidableReason {
    /// Some member has two or more counters.
    A,
    /// Two distinct counters are untouched by every member.
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriterionClass {
    CaseI,
    CaseII(usize),
    Undecidable(UndecidableReason),
}

pub fn classify_criterion(d: usize, z: &StoppingCriterion) -> Result<CriterionClass> {
    z.validate(d)?;
    if z.sets.iter().any(|s| s.count_ones() >= 2) {
        return Ok(CriterionClass::Undecidable(UndecidableReason::A));
    }
    let touched = z.sets.iter().fold(0u64, |m, s| m | s);
    let untouched: Vec<usize> = (1..=d).filter(|i| touched >> (i - 1) & 1 == 0).collect();
    Ok(match untouched.as_slice() {
        [] => CriterionClass::CaseI,
        [i] => CriterionClass::CaseII(*i),
        _ => CriterionClass::Undecidable(UndecidableReason::B),
    })
}

pub fn zero_set(cfg: &Configuration) -> ZeroSet {
    cfg.counters
        .iter()
        .enumerate()
        .fold(0, |m, (k, &c)| if c == 0 { m | 1u64 << k } else { m })
}

pub fn enabled_rules<'a>(pmc: &'a Pmc, cfg: &Configuration) -> Vec<&'a Rule> {
    let mask = zero_set(cfg);
    pmc.rules.iter().filter(|r| r.src == cfg.state && r.enabled_at(mask)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    /// Index of the fired rule; `None` for the forced self-loop.
    pub rule: Option<usize>,
    pub label: Option<String>,
    pub target: Configuration,
    pub prob: Rational,
}

pub fn transition_distribution(pmc: &Pmc, cfg: &Configuration) -> Result<Vec<Transition>> {
    let idx = pmc.enabled_indices(cfg.state, zero_set(cfg));
    if idx.is_empty() {
        return Ok(vec![Transition { rule: None, label: None, target: cfg.clone(), prob: rational::one() }]);
    }
    let total: u64 = idx.iter().map(|&k| pmc.rules[k].weight).sum();
    idx.into_iter()
        .map(|k| {
            let r = &pmc.rules[k];
            let counters = apply_delta(&cfg.counters, &r.delta).ok_or_else(|| Error::CounterOverflow {
                rule: k,
                state: pmc.state_name(cfg.state).to_string(),
            })?;
            Ok(Transition {
                rule: Some(k),
                label: r.label.clone(),
                target: Configuration { state: r.dst, counters },
                prob: Rational::new(r.weight.into(), total.into()),
            })
        })
        .collect()
}

pub fn is_safe_prefix(pmc: &Pmc, path: &[Configuration], z: &StoppingCriterion) -> Result<bool> {
    for k in 0..path.len().saturating_sub(1) {
        let ok = transition_distribution(pmc, &path[k])?.iter().any(|t| t.target == path[k + 1]);
        if !ok {
            return Err(Error::DisconnectedPath(k));
        }
    }
    Ok(path.iter().take(path.len().saturating_sub(1)).all(|c| !z.covered_by(zero_set(c))))
}

/// Removes bit `i - 1` from `mask`, shifting the higher bits down.
pub fn project_mask(mask: ZeroSet, i: usize) -> ZeroSet {
    let low = mask & ((1u64 << (i - 1)) - 1);
    let high = (mask >> i) << (i - 1);
    low | high
}

/// The `(d-1)`-dimensional pMC obtained by forgetting counter `i`.
///
/// The result describes the model while counter `i` is positive, so rules
/// whose zero test contains `i` are dropped. Rules that agree after
/// projection are merged and their weights summed.
pub fn forget_counter(pmc: &Pmc, i: usize) -> Result<Pmc> {
    let d = pmc.dimension;
    if d < 2 || i == 0 || i > d {
        return Err(Error::Precondition(format!("cannot forget counter {i} of a {d}-dimensional model")));
    }
    let mut merged: Vec<Rule> = Vec::new();
    let mut index: HashMap<(usize, Vec<i8>, ZeroSet, usize), usize> = HashMap::new();
    for r in &pmc.rules {
        if r.zero_test >> (i - 1) & 1 == 1 {
            continue;
        }
        let mut delta = r.delta.clone();
        delta.remove(i - 1);
        let key = (r.src, delta.clone(), project_mask(r.zero_test, i), r.dst);
        match index.get(&key) {
            Some(&k) => {
                let m = &mut merged[k];
                m.weight = m.weight.checked_add(r.weight).ok_or_else(|| {
                    Error::InvalidModel("merged weight overflows u64".into())
                })?;
                if m.label != r.label {
                    m.label = None;
                }
            }
            None => {
                index.insert(key.clone(), merged.len());
                merged.push(Rule {
                    src: r.src,
                    delta,
                    zero_test: key.2,
                    label: r.label.clone(),
                    dst: r.dst,
                    weight: r.weight,
                });
            }
        }
    }
    let kind = if pmc.kind == Kind::Pvass && is_pvass_closed(d - 1, &merged) {
        Kind::Pvass
    } else {
        Kind::General
    };
    Pmc::new(pmc.name.clone(), d - 1, pmc.states.clone(), merged, kind)
}

/// Precomputed enabled-rule lists with cumulative weights per
/// `(state, zero set)`, for fast repeated sampling.
#[derive(Clone, Debug)]
pub struct EnabledTable {
    d: usize,
    entries: Vec<EnabledEntry>,
}

#[derive(Clone, Debug, Default)]
pub struct EnabledEntry {
    pub rules: Vec<usize>,
    pub cumulative: Vec<u64>,
    pub total: u64,
}

impl EnabledTable {
    pub fn new(pmc: &Pmc) -> Result<EnabledTable> {
        let d = pmc.dimension;
        if d > 16 {
            return Err(Error::Precondition("enabled-rule table supports dimension up to 16".into()));
        }
        let mut entries = vec![EnabledEntry::default(); pmc.num_states() << d];
        for (k, r) in pmc.rules.iter().enumerate() {
            if r.enabled_at(r.zero_test) {
                let e = &mut entries[(r.src << d) | r.zero_test as usize];
                e.total = e.total.checked_add(r.weight).ok_or_else(|| {
                    Error::InvalidModel("total enabled weight overflows u64".into())
                })?;
                e.rules.push(k);
                e.cumulative.push(e.total);
            }
        }
        Ok(EnabledTable { d, entries })
    }

    pub fn get(&self, state: usize, mask: ZeroSet) -> &EnabledEntry {
        &self.entries[(state << self.d) | mask as usize]
    }
}

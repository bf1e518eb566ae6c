//! The martingale of a one-counter model with one reward, for a bottom
//! component `D` of the zero-visit chain: `m = x1 − tℓ + g(x2)[p]`, where
//! `x1` is the accumulated reward, `x2` the counter, `ℓ` the step and `g`
//! the potential built from the vectors `r↓ = δ↓ − t·e↓` and `r₀ = δ₁ − t·e`.
//! Also the tail constants of the reward divergence bound.

use crate::case2::{step_matrices, to_dense, solve_g_matrix, GOptions, OneCounterAbstraction, StepMatrices};
use crate::error::{Error, Result};
use crate::linalg::{self, Dense, DenseLu};
use crate::model::Configuration;
use crate::rational;
use crate::sim::{wilson, Simulator};

#[derive(Clone, Debug)]
pub struct MartingaleData {
    /// The states of `D`, sorted.
    pub component: Vec<usize>,
    /// Reward coordinate (0-based).
    pub coord: usize,
    pub t: f64,
    /// Invariant distribution of `A` on `D`.
    pub mu: Vec<f64>,
    pub g: Dense,
    /// `A = Q→ + Q↑G` restricted to `D`.
    pub a: Dense,
    pub b: Dense,
    pub e_down: Vec<f64>,
    /// `e` on `D`.
    pub e: Vec<f64>,
    pub r_down: Vec<f64>,
    /// `r₀` on `D`.
    pub r_zero: Vec<f64>,
    /// `g(0)` over all states; zero outside `D`.
    pub g0: Vec<f64>,
    /// `1 + max e↓`.
    pub e_max: f64,
    /// Smallest nonzero entry of `A`.
    pub y_min: f64,
    /// `e_max·|D| / y_min^|D|`: the normalized maximum of `g(0)`.
    pub g0_bound: f64,
    /// `|g(n)| ≤ c·max(n, 1)` for all `n`.
    pub c: f64,
    /// `μᵀr₀`, zero up to rounding.
    pub alpha_r0: f64,
    pub matrices: StepMatrices,
}

/// Solves `g = r₀ + A g` on an irreducible stochastic `A` through the
/// nonsingular system `(I − A + 1μᵀ)x = r₀`, then shifts so that the maximum
/// entry equals `bound`.
pub fn solve_g0(a: &Dense, mu: &[f64], r0: &[f64], bound: f64) -> Result<Vec<f64>> {
    let n = a.rows;
    if n == 0 {
        return Ok(Vec::new());
    }
    let succ: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| a[(i, j)] > 0.0).collect()).collect();
    if crate::finite_chain::tarjan(&succ).components.len() != 1 {
        return Err(Error::NotIrreducible);
    }
    let mut m = Dense::identity(n).sub(a);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += mu[j];
        }
    }
    let x = linalg::dense_solve(&m, r0).ok_or_else(|| Error::Numeric("I − A + 1μᵀ is singular".into()))?;
    let top = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let g0: Vec<f64> = x.iter().map(|v| v - top + bound).collect();
    let ag = a.mul_vec(&g0);
    let res = (0..n).map(|i| (g0[i] - r0[i] - ag[i]).abs()).fold(0.0, f64::max);
    if res > 1e-9 * (1.0 + bound.abs()) {
        return Err(Error::Numeric(format!("g(0) residual {res:e}")));
    }
    Ok(g0)
}

fn stationary(a: &Dense) -> Result<Vec<f64>> {
    // μᵀ(I − A + J) = 1ᵀ for the all-ones matrix J.
    let n = a.rows;
    let mut m = Dense::identity(n).sub(a);
    for v in m.data.iter_mut() {
        *v += 1.0;
    }
    let lu = DenseLu::factor(&m).ok_or(Error::NotIrreducible)?;
    Ok(lu.solve_transposed(&vec![1.0; n]))
}

/// Builds the martingale data of reward `coord` on the bottom component
/// `component` of the zero-visit chain. The expected return times must be
/// finite from every state at counter 1.
pub fn martingale_data(
    b: &OneCounterAbstraction,
    component: &[usize],
    coord: usize,
    opts: &GOptions,
) -> Result<MartingaleData> {
    if coord >= b.reward_dimension() {
        return Err(Error::Precondition(format!("reward coordinate {coord} out of range")));
    }
    let m = step_matrices(b);
    let gs = solve_g_matrix(&m, opts)?;
    let n = m.n;
    let mut comp = component.to_vec();
    comp.sort_unstable();
    let rt = crate::case2::expected_return_times_from(&m, &gs, &comp);
    if !rt.finite {
        return Err(Error::Precondition("critical counter: expected return times are not finite".into()));
    }
    let rewards = crate::case2::expected_rewards(&m, &rt)?;
    let e_down = rt.e_down.clone();
    let delta_down = rewards.delta_down[coord].clone();
    let dzero: Vec<f64> = m.delta_zero[coord].iter().map(rational::to_f64).collect();
    let bm = rt.b;
    let qu = to_dense(&m.q_up);
    let a_full = to_dense(&m.q_right).add(&qu.mul(&gs.g));
    let a = a_full.select(&comp, &comp);
    let rows_ok = (0..comp.len()).all(|k| (a.row(k).iter().sum::<f64>() - 1.0).abs() < 1e-8);
    if !rows_ok {
        return Err(Error::Precondition("component is not closed under the zero-visit chain".into()));
    }
    let e: Vec<f64> = comp.iter().map(|&q| 1.0 + dot(qu.row(q), &e_down)).collect();
    let d1: Vec<f64> = comp.iter().map(|&q| dzero[q] + dot(qu.row(q), &delta_down)).collect();
    let mu = stationary(&a)?;
    let t = dot(&mu, &d1) / dot(&mu, &e);
    let r_down: Vec<f64> = (0..n).map(|q| delta_down[q] - t * e_down[q]).collect();
    let r_zero: Vec<f64> = (0..comp.len()).map(|k| d1[k] - t * e[k]).collect();
    let e_max = 1.0 + e_down.iter().cloned().fold(0.0, f64::max);
    let y_min = a.data.iter().cloned().filter(|&v| v > 0.0).fold(1.0, f64::min);
    let dsize = comp.len() as i32;
    let g0_bound = e_max * comp.len() as f64 / y_min.powi(dsize);
    let g0d = solve_g0(&a, &mu, &r_zero, g0_bound)?;
    let mut g0 = vec![0.0; n];
    for (k, &q) in comp.iter().enumerate() {
        g0[q] = g0d[k];
    }
    let r_max = r_down.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let c = g0_bound + r_max.max(e_max);
    let alpha_r0 = dot(&mu, &r_zero);
    Ok(MartingaleData {
        component: comp,
        coord,
        t,
        mu,
        g: gs.g,
        a,
        b: bm,
        e_down,
        e,
        r_down,
        r_zero,
        g0,
        e_max,
        y_min,
        g0_bound,
        c,
        alpha_r0,
        matrices: m,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl MartingaleData {
    /// The same data with `g(0)` shifted to maximum `top` on `D`. Any shift
    /// keeps the martingale property; small `top` keeps the table accurate
    /// in floating point, large ones reach the normalized bound.
    pub fn with_g0_max(&self, top: f64) -> Result<MartingaleData> {
        let g0d = solve_g0(&self.a, &self.mu, &self.r_zero, top)?;
        let mut out = self.clone();
        out.g0 = vec![0.0; self.g0.len()];
        for (k, &q) in self.component.iter().enumerate() {
            out.g0[q] = g0d[k];
        }
        Ok(out)
    }

    /// `g(0), …, g(n)` by the recursion `g(k+1) = r↓ + G g(k)`.
    pub fn g_table(&self, n: usize) -> Vec<Vec<f64>> {
        let mut out = vec![self.g0.clone()];
        for _ in 0..n {
            let gx = self.g.mul_vec(out.last().expect("non-empty"));
            out.push(gx.iter().zip(&self.r_down).map(|(a, b)| a + b).collect());
        }
        out
    }

    pub fn g_at(&self, n: usize) -> Vec<f64> {
        self.g_table(n).pop().expect("non-empty")
    }

    /// `Gⁿ g(0) + Σ_{i<n} Gⁱ r↓`.
    pub fn g_closed_form(&self, n: usize) -> Vec<f64> {
        let mut power = self.g0.clone();
        let mut sum = vec![0.0; self.g0.len()];
        let mut term = self.r_down.clone();
        for _ in 0..n {
            power = self.g.mul_vec(&power);
            for (s, t) in sum.iter_mut().zip(&term) {
                *s += t;
            }
            term = self.g.mul_vec(&term);
        }
        power.iter().zip(&sum).map(|(a, b)| a + b).collect()
    }

    /// `x1 − tℓ + g(x2)[p]`, with `table` covering `x2`.
    pub fn value(&self, table: &[Vec<f64>], p: usize, x1: f64, x2: u64, l: u64) -> f64 {
        martingale_value(x1, l, self.t, table[x2 as usize][p])
    }

    /// `E(m′) − m` for one step from `p(x2)`, using the exact one-step
    /// probabilities of the abstraction. `table` must cover `x2 + 1`.
    pub fn drift(&self, table: &[Vec<f64>], p: usize, x2: u64) -> f64 {
        let m = &self.matrices;
        let (reward, moves) = if x2 == 0 {
            (rational::to_f64(&m.delta_zero[self.coord][p]), vec![(&m.q_right, 0), (&m.q_up, 1)])
        } else {
            (rational::to_f64(&m.delta_pos[self.coord][p]), vec![(&m.p_down, -1), (&m.p_right, 0), (&m.p_up, 1)])
        };
        let mut next = 0.0;
        for (mat, dx) in moves {
            let row = (x2 as i64 + dx) as usize;
            for (q, pr) in mat[p].iter().enumerate() {
                next += rational::to_f64(pr) * table[row][q];
            }
        }
        // x1 and ℓ cancel: E(x1′) = x1 + reward and ℓ′ = ℓ + 1.
        reward - self.t + next - table[x2 as usize][p]
    }
}

/// `m = x1 − tℓ + g`, where `g` is `g(x2)[p]`.
pub fn martingale_value(x1: f64, l: u64, t: f64, g: f64) -> f64 {
    x1 - t * l as f64 + g
}

/// Where the bump constants came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Supplied,
    Estimated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Supplied => "supplied",
            Provenance::Estimated => "estimated",
        }
    }
}

/// `P(E ≥ k) ≤ a^k` for `k ≥ c_prime`, `E` the time between zero visits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpConstants {
    pub c_prime: u64,
    pub a: f64,
    pub provenance: Provenance,
}

/// 99.5% standard normal quantile.
const Z99: f64 = 2.5758293035489004;

/// Estimates bump constants from simulated excursions started at the
/// states of `component` at counter 0: `c′` is the empirical median of the
/// excursion length and `a` the largest `U(k)^{1/k}` over the observed
/// range, `U(k)` the 99% upper Wilson bound on `P(E ≥ k)`. Excursions longer
/// than `max_len` count as reaching every `k ≤ max_len`.
pub fn estimate_bump_constants(
    b: &OneCounterAbstraction,
    component: &[usize],
    runs: u64,
    max_len: u64,
    seed: u64,
) -> Result<BumpConstants> {
    if component.is_empty() || runs == 0 {
        return Err(Error::Precondition("need a component and at least one run".into()));
    }
    let sim = Simulator::new(&b.model)?;
    let mut lens = Vec::with_capacity(runs as usize);
    for r in 0..runs {
        let q = component[(r % component.len() as u64) as usize];
        let mut cfg = Configuration::new(q, vec![0]);
        let mut len = 0;
        loop {
            let Some(k) = sim.sample_rule(&cfg, seed, r, len) else {
                len = max_len;
                break;
            };
            let rule = &b.model.rules()[k];
            let c = (cfg.counters[0] as i64 + rule.delta[0] as i64) as u64;
            cfg = Configuration::new(rule.dst, vec![c]);
            len += 1;
            if c == 0 || len >= max_len {
                break;
            }
        }
        lens.push(len);
    }
    lens.sort_unstable();
    let c_prime = lens[lens.len() / 2].max(1);
    let top = *lens.last().expect("runs > 0");
    let mut a: f64 = 0.0;
    for k in c_prime..=top.max(c_prime) {
        let surv = lens.len() - lens.partition_point(|&l| l < k);
        let (_, hi) = wilson(surv as u64, runs, Z99);
        a = a.max(hi.powf(1.0 / k as f64));
    }
    Ok(BumpConstants { c_prime, a, provenance: Provenance::Estimated })
}

/// Constants of the reward divergence bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailConstants {
    /// `A = max(a^{t/c}, 2^{−1/128})`.
    pub a_cap: f64,
    /// Least `h` with `t·h^{1/4}/c ≥ c′`.
    pub h_min: f64,
    /// Least `h ≥ h_min` whose tail bound is below `1/d`.
    pub n: f64,
    pub h0: f64,
    /// `ln A₀`; `A₀` itself is often within rounding of 1.
    pub ln_a0: f64,
    pub a0: f64,
    /// `A₀^h` bounds the tail for `h` in `[h0, tested_up_to]`.
    pub tested_up_to: f64,
}

/// `ln Σ_{ℓ ≥ h} ℓ·A^{ℓ^{1/4}}`, bounded block-wise by
/// `Σ_{j ≥ ⌊h^{1/4}⌋} ((j+1)⁴ − j⁴)(j+1)⁴ A^j`.
pub fn ln_tail(ln_a: f64, h: f64) -> Result<f64> {
    let j0 = h.max(1.0).powf(0.25).floor();
    ln_block_sum(ln_a, j0)
}

fn ln_term(ln_a: f64, j: f64) -> f64 {
    let block = (j + 1.0).powi(4) - j.powi(4);
    block.ln() + 4.0 * (j + 1.0).ln() + j * ln_a
}

fn ln_block_sum(ln_a: f64, j0: f64) -> Result<f64> {
    if !(ln_a < 0.0) {
        return Err(Error::Precondition("A must be below 1".into()));
    }
    // Terms rise until j ≈ 8/|ln A| and then fall geometrically; sum until
    // the remaining geometric bound is negligible.
    let peak = (8.0 / -ln_a).max(j0);
    if peak - j0 > 5e7 {
        return Err(Error::ResourceExhausted("tail sum needs too many terms; A is too close to 1".into()));
    }
    let mut acc = f64::NEG_INFINITY;
    let mut j = j0;
    loop {
        let t = ln_term(ln_a, j);
        acc = log_add(acc, t);
        let ratio = (ln_term(ln_a, j + 1.0) - t).exp();
        if j > peak && ratio < 1.0 {
            let rest = t + (ratio / (1.0 - ratio)).ln();
            if rest < acc - 40.0 {
                return Ok(log_add(acc, rest));
            }
        }
        j += 1.0;
        if j - j0 > 1e8 {
            return Err(Error::ResourceExhausted("tail sum did not converge".into()));
        }
    }
}

/// Upper bound `term(j)/(1 − ratio(j))` on the block sum from `j`. Block
/// ratios decrease in `j`, so the bound holds once `ratio(j) < 1`.
fn ln_geometric_tail(ln_a: f64, j: f64) -> Option<f64> {
    let t = ln_term(ln_a, j);
    let ratio = (ln_term(ln_a, j + 1.0) - t).exp();
    (ratio < 1.0).then(|| t - (-ratio).ln_1p())
}

/// Entries of the exact suffix table in `tail_constants`.
const TABLE_CAP: f64 = 4_194_304.0;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Tail constants for oc-trend `t > 0`, potential bound `c`, bump
/// constants and counter dimension `d`.
pub fn tail_constants(t: f64, c: f64, bump: &BumpConstants, d: usize) -> Result<TailConstants> {
    if !(t > 0.0) {
        return Err(Error::Precondition("oc-trend must be positive".into()));
    }
    if !(bump.a > 0.0 && bump.a < 1.0) {
        return Err(Error::Precondition(format!("bump constant a = {} must lie in (0, 1)", bump.a)));
    }
    if !(c > 0.0) {
        return Err(Error::Precondition("bound constant must be positive".into()));
    }
    let ln_a = (t / c * bump.a.ln()).max(-(2f64.ln()) / 128.0);
    if !(ln_a < 0.0) {
        return Err(Error::Precondition("A is not below 1".into()));
    }
    let a_cap = ln_a.exp();
    let h_min = (bump.c_prime as f64 * c / t).powi(4).ceil().max(1.0);
    if !h_min.is_finite() || h_min > 1e60 {
        return Err(Error::ResourceExhausted("h_min overflows".into()));
    }
    let target = -(d.max(1) as f64).ln();
    // The tail depends on h only through j = ⌊h^{1/4}⌋. Near the peak the
    // blocks are summed exactly through a suffix table; past the table the
    // geometric bound from `ln_geometric_tail` takes over.
    let j_lo = h_min.powf(0.25).floor();
    let peak = (8.0 / -ln_a).max(j_lo);
    if peak - j_lo > 5e7 {
        return Err(Error::ResourceExhausted("tail sum needs too many terms; A is too close to 1".into()));
    }
    let span = ((peak - j_lo) * 4.0 + 64.0 / -ln_a + 1000.0).min(TABLE_CAP) as usize;
    let terms: Vec<f64> = (0..span).map(|k| ln_term(ln_a, j_lo + k as f64)).collect();
    let mut suffix = vec![f64::NEG_INFINITY; span + 1];
    let j_end = j_lo + span as f64;
    suffix[span] = match ln_geometric_tail(ln_a, j_end) {
        Some(v) => v,
        None => ln_block_sum(ln_a, j_end)?,
    };
    for k in (0..span).rev() {
        suffix[k] = log_add(suffix[k + 1], terms[k]);
    }
    let tail_j = |j: f64| -> Result<f64> {
        let k = (j - j_lo).max(0.0);
        if k <= span as f64 {
            return Ok(suffix[k as usize]);
        }
        match ln_geometric_tail(ln_a, j) {
            Some(v) => Ok(v),
            None => ln_block_sum(ln_a, j),
        }
    };
    let tail_at = |h: f64| tail_j(h.powf(0.25).floor());
    let j_n = match suffix.iter().position(|&v| v < target) {
        Some(k) => j_lo + k as f64,
        None => {
            // Beyond the table the bound decreases in j; bisect on it.
            let (mut lo, mut hi) = (j_end, j_end.max(1.0) * 2.0);
            while tail_j(hi)? >= target {
                lo = hi;
                hi *= 2.0;
                if hi > 1e15 {
                    return Err(Error::ResourceExhausted("no h with tail below 1/d".into()));
                }
            }
            while hi - lo > 1.0 {
                let mid = ((lo + hi) / 2.0).floor();
                if tail_j(mid)? < target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        }
    };
    let n = h_min.max(j_n.powi(4));
    let h0 = n;
    let tested_up_to = 64.0 * h0;
    let mut ln_a0 = f64::NEG_INFINITY;
    for k in 0..=64 {
        let h = h0 * 64f64.powf(k as f64 / 64.0);
        ln_a0 = ln_a0.max(tail_at(h)? / h);
    }
    if !(ln_a0 < 0.0) {
        return Err(Error::Numeric("A0 is not below 1".into()));
    }
    Ok(TailConstants { a_cap, h_min, n, h0, ln_a0, a0: ln_a0.exp(), tested_up_to })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case2::project_counter;
    use crate::text_format::parse_pmc;

    fn two_cycle() -> Dense {
        Dense::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])
    }

    #[test]
    fn g0_examples() {
        let g = solve_g0(&Dense::identity(1), &[1.0], &[0.0], 3.5).unwrap();
        assert_eq!(g, vec![3.5]);
        let g = solve_g0(&two_cycle(), &[0.5, 0.5], &[0.75, -0.75], 10.0).unwrap();
        assert!((g[0] - g[1] - 0.75).abs() < 1e-12);
        assert!((g[0] - 10.0).abs() < 1e-12);
        let reducible = Dense::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(solve_g0(&reducible, &[0.5, 0.5], &[0.0, 0.0], 1.0), Err(Error::NotIrreducible));
    }

    fn labeled() -> OneCounterAbstraction {
        let pmc = parse_pmc(
            "pmc dimension 2\nstate p\nstate q\nrule p -> q delta [1,-1] zero {} weight 2\n\
             rule p -> p delta [-1,1] zero {} weight 1\nrule q -> p delta [1,-1] zero {} weight 1\n\
             rule q -> q delta [0,1] zero {} weight 1\nrule p -> q delta [1,1] zero {2} weight 1\n\
             rule q -> p delta [-1,1] zero {2} weight 2\nrule q -> q delta [1,0] zero {2} weight 1\n",
        )
        .unwrap();
        project_counter(&pmc, 2).unwrap()
    }

    #[test]
    fn zero_drift_and_closed_form() {
        let b = labeled();
        let md = martingale_data(&b, &[0, 1], 0, &GOptions::default()).unwrap();
        assert!(md.alpha_r0.abs() < 1e-10);
        let table = md.g_table(21);
        for p in 0..2 {
            for x2 in 0..=20u64 {
                assert!(md.drift(&table, p, x2).abs() < 1e-9, "p={p} x2={x2}");
            }
        }
        for n in [0, 1, 5, 20] {
            let a = &table[n];
            let b = md.g_closed_form(n);
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
        }
        assert!(md.g0.iter().all(|&v| v >= -1e-12 && v <= md.g0_bound + 1e-12));
        let v = md.value(&table, 1, 2.0, 3, 4);
        assert!((v - (2.0 - 4.0 * md.t + table[3][1])).abs() < 1e-15);
    }

    #[test]
    fn trivial_g_recursion() {
        // G = [1]: g(n) = g0 + n·r.
        let b = project_counter(
            &parse_pmc(
                "pmc dimension 2\nstate q\nrule q -> q delta [1,-1] zero {} weight 1\n\
                 rule q -> q delta [-1,1] zero {2} weight 1\n",
            )
            .unwrap(),
            2,
        )
        .unwrap();
        let md = martingale_data(&b, &[0], 0, &GOptions::default()).unwrap();
        let table = md.g_table(10);
        for (n, g) in table.iter().enumerate() {
            assert!((g[0] - (md.g0[0] + n as f64 * md.r_down[0])).abs() < 1e-12);
        }
        assert_eq!(md.t, 0.0);
        assert_eq!(martingale_value(1.0, 7, 0.0, 2.0), martingale_value(1.0, 0, 0.0, 2.0));
    }

    #[test]
    fn tail_examples() {
        // A = 1/2 directly: tail at h = 256 starting from block j = 4.
        let lt = ln_tail(0.5f64.ln(), 256.0).unwrap();
        let direct: f64 = (4..200).map(|j: i32| (((j + 1).pow(4) - j.pow(4)) as f64) * ((j + 1) as f64).powi(4) * 0.5f64.powi(j)).sum();
        assert!((lt - direct.ln()).abs() < 1e-9);
        let later = ln_tail(0.5f64.ln(), 4096.0).unwrap();
        assert!(later < lt);
        let bump = BumpConstants { c_prime: 2, a: 0.5, provenance: Provenance::Supplied };
        let one = tail_constants(0.25, 8.0, &bump, 2).unwrap();
        let two = tail_constants(0.5, 8.0, &bump, 2).unwrap();
        assert!(two.a_cap <= one.a_cap);
        assert!(one.ln_a0 < 0.0 && one.a0 > 0.0 && one.a0 <= 1.0);
        assert!(one.n >= one.h_min);
        assert!(tail_constants(0.25, 8.0, &BumpConstants { a: 1.0, ..bump }, 2).is_err());
        assert!(tail_constants(-0.1, 8.0, &bump, 2).is_err());
    }

    #[test]
    fn bump_estimate_is_a_valid_rate() {
        let b = labeled();
        let c = estimate_bump_constants(&b, &[0, 1], 2000, 10_000, 1).unwrap();
        assert!(c.a > 0.0 && c.a < 1.0);
        assert_eq!(c.provenance, Provenance::Estimated);
    }
}

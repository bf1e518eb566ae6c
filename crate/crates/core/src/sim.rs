//! Deterministic Monte Carlo simulation of pMC runs.
//!
//! Every draw is a pure function of `(seed, run, step, attempt)` through
//! SplitMix64 finalizers, so results do not depend on thread scheduling or
//! platform. Rules are sampled from exact integer weights; a draw falling in
//! the bias zone at the top of the 64-bit range is rejected and redrawn.

use rayon::prelude::*;

use crate::case2::project_counter;
use crate::error::{Error, Result};
use crate::model::{
    apply_delta, zero_set, Configuration, EnabledTable, Pmc, StoppingCriterion, ZeroSet,
};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// The SplitMix64 output function applied to `x + γ`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform 64-bit draw for one `(seed, run, step, attempt)` tuple.
pub fn draw(seed: u64, run: u64, step: u64, attempt: u64) -> u64 {
    let a = splitmix64(seed ^ 0x5eed_5eed_5eed_5eed);
    let b = splitmix64(a ^ run);
    let c = splitmix64(b ^ step.rotate_left(17));
    splitmix64(c ^ attempt.rotate_left(41))
}

/// Uniform integer in `0..total` without modulo bias.
pub fn uniform_below(total: u64, seed: u64, run: u64, step: u64) -> u64 {
    debug_assert!(total > 0);
    let zone = u64::MAX - u64::MAX % total;
    let mut attempt = 0;
    loop {
        let x = draw(seed, run, step, attempt);
        if x < zone {
            return x % total;
        }
        attempt += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    /// Step index at which the stopping criterion was first met.
    pub stopped_at: Option<u64>,
    pub final_config: Configuration,
    /// Firing count of every rule.
    pub fired: Vec<u64>,
    /// Steps taken, counting forced self-loops.
    pub steps: u64,
    /// Visited configurations, including the start, when requested.
    pub trace: Option<Vec<Configuration>>,
}

/// Samples runs of one model; the enabled-rule table is built once.
#[derive(Clone, Debug)]
pub struct Simulator<'a> {
    pmc: &'a Pmc,
    table: EnabledTable,
}

impl<'a> Simulator<'a> {
    pub fn new(pmc: &'a Pmc) -> Result<Simulator<'a>> {
        Ok(Simulator { pmc, table: EnabledTable::new(pmc)? })
    }

    pub fn pmc(&self) -> &Pmc {
        self.pmc
    }

    /// Index of the rule fired from `cfg` at `step`, or `None` if no rule is
    /// enabled.
    pub fn sample_rule(&self, cfg: &Configuration, seed: u64, run: u64, step: u64) -> Option<usize> {
        let e = self.table.get(cfg.state, zero_set(cfg));
        if e.total == 0 {
            return None;
        }
        let x = uniform_below(e.total, seed, run, step);
        let k = e.cumulative.partition_point(|&c| c <= x);
        Some(e.rules[k])
    }

    pub fn run(
        &self,
        start: &Configuration,
        z: Option<&StoppingCriterion>,
        max_steps: u64,
        seed: u64,
        run_index: u64,
        keep_trace: bool,
    ) -> Result<RunOutcome> {
        if start.counters.len() != self.pmc.dimension() || start.state >= self.pmc.num_states() {
            return Err(Error::Precondition("initial configuration does not match the model".into()));
        }
        let stops = |c: &Configuration| z.is_some_and(|z| z.covered_by(zero_set(c)));
        let mut cfg = start.clone();
        let mut fired = vec![0u64; self.pmc.rules().len()];
        let mut trace = keep_trace.then(|| vec![cfg.clone()]);
        let mut step = 0u64;
        while step < max_steps {
            if stops(&cfg) {
                return Ok(RunOutcome { stopped_at: Some(step), final_config: cfg, fired, steps: step, trace });
            }
            let Some(k) = self.sample_rule(&cfg, seed, run_index, step) else {
                // Stuck for good: the configuration repeats until the cap.
                if let Some(t) = trace.as_mut() {
                    t.extend(std::iter::repeat(cfg.clone()).take((max_steps - step).min(1 << 20) as usize));
                }
                step = max_steps;
                break;
            };
            let r = &self.pmc.rules()[k];
            let counters = apply_delta(&cfg.counters, &r.delta).ok_or_else(|| Error::CounterOverflow {
                rule: k,
                state: self.pmc.state_name(cfg.state).to_string(),
            })?;
            cfg = Configuration::new(r.dst, counters);
            fired[k] += 1;
            step += 1;
            if let Some(t) = trace.as_mut() {
                t.push(cfg.clone());
            }
        }
        let stopped_at = stops(&cfg).then_some(step);
        Ok(RunOutcome { stopped_at, final_config: cfg, fired, steps: step, trace })
    }
}

/// One run; see [`Simulator::run`] for repeated sampling.
pub fn simulate_run(
    pmc: &Pmc,
    start: &Configuration,
    z: Option<&StoppingCriterion>,
    max_steps: u64,
    seed: u64,
    run_index: u64,
) -> Result<RunOutcome> {
    Simulator::new(pmc)?.run(start, z, max_steps, seed, run_index, false)
}

/// Two-sided Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    // Rounding can push an end past p at p = 0 or 1.
    ((centre - half).clamp(0.0, p), (centre + half).clamp(p, 1.0))
}

/// 97.5% standard normal quantile.
pub const Z95: f64 = 1.959963984540054;

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub runs: u64,
    pub stopped: u64,
    /// Runs that hit `max_steps` without stopping; counted as not stopping.
    pub censored: u64,
}

impl Estimate {
    /// Binomial standard error of the estimate.
    pub fn sigma(&self) -> f64 {
        (self.estimate * (1.0 - self.estimate) / self.runs.max(1) as f64).sqrt()
    }
}

/// Fraction of runs meeting `z` within `max_steps`, with a 95% Wilson interval.
pub fn estimate_probability(
    pmc: &Pmc,
    start: &Configuration,
    z: &StoppingCriterion,
    max_steps: u64,
    runs: u64,
    seed: u64,
) -> Result<Estimate> {
    if runs == 0 {
        return Err(Error::Precondition("at least one run is needed".into()));
    }
    let sim = Simulator::new(pmc)?;
    let results: Vec<bool> = (0..runs)
        .into_par_iter()
        .map(|r| sim.run(start, Some(z), max_steps, seed, r, false).map(|o| o.stopped_at.is_some()))
        .collect::<Result<_>>()?;
    let stopped = results.iter().filter(|&&s| s).count() as u64;
    let (lo, hi) = wilson(stopped, runs, Z95);
    Ok(Estimate {
        estimate: stopped as f64 / runs as f64,
        ci_low: lo,
        ci_high: hi,
        runs,
        stopped,
        censored: runs - stopped,
    })
}

/// Per-run firing frequency of every rule over `steps` steps, with no
/// stopping criterion. Forced self-loops fire no rule, so a run that gets
/// stuck has frequencies summing to less than 1.
pub fn transition_frequencies(pmc: &Pmc, start: &Configuration, steps: u64, runs: u64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sim = Simulator::new(pmc)?;
    (0..runs)
        .into_par_iter()
        .map(|r| {
            let o = sim.run(start, None, steps, seed, r, false)?;
            let total = steps.max(1) as f64;
            Ok(o.fired.iter().map(|&f| f as f64 / total).collect())
        })
        .collect()
}

/// A run of the model seen through the one-counter abstraction for counter
/// `counter`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectedRun {
    pub counter: usize,
    pub states: Vec<usize>,
    /// Value of the tracked counter at every position.
    pub values: Vec<u64>,
    /// Rule of the abstraction taken at every step.
    pub rules: Vec<Option<usize>>,
    /// Accumulated reward vector at every position, starting at 0.
    pub rewards: Vec<Vec<i64>>,
}

/// Projects a configuration trace onto the one-counter abstraction of
/// counter `i`, replaying every step in the abstraction. The trace must not
/// meet the criterion `Z_{-i}` before its last position.
pub fn project_run(pmc: &Pmc, run: &[Configuration], i: usize) -> Result<ProjectedRun> {
    let d = pmc.dimension();
    let b = project_counter(pmc, i)?;
    let mut out = ProjectedRun { counter: i, states: Vec::new(), values: Vec::new(), rules: Vec::new(), rewards: Vec::new() };
    let Some(first) = run.first() else { return Ok(out) };
    let z = StoppingCriterion::minus(d, i);
    let bit: ZeroSet = 1 << (i - 1);
    // Index of each kept rule inside the abstraction.
    let mut proj = vec![None; pmc.rules().len()];
    let mut next = 0;
    for (k, r) in pmc.rules().iter().enumerate() {
        if r.zero_test == 0 || r.zero_test == bit {
            proj[k] = Some(next);
            next += 1;
        }
    }
    let mut acc = vec![0i64; d - 1];
    out.states.push(first.state);
    out.values.push(first.counters[i - 1]);
    out.rewards.push(acc.clone());
    for (step, w) in run.windows(2).enumerate() {
        let (c, n) = (&w[0], &w[1]);
        if z.covered_by(zero_set(c)) {
            return Err(Error::Precondition(format!("run meets the stopping criterion at step {step}")));
        }
        let enabled = pmc.enabled_indices(c.state, zero_set(c));
        let taken = if enabled.is_empty() {
            (c == n).then_some(None)
        } else {
            enabled
                .into_iter()
                .find(|&k| {
                    let r = &pmc.rules()[k];
                    r.dst == n.state && apply_delta(&c.counters, &r.delta).as_deref() == Some(&n.counters[..])
                })
                .map(Some)
        };
        let Some(rule) = taken else {
            return Err(Error::DisconnectedPath(step));
        };
        // Replay the step in the abstraction.
        let (state, value) = (out.states[step], out.values[step]);
        let brule = match rule {
            Some(k) => {
                let bk = proj[k].ok_or_else(|| Error::Precondition(format!("step {step} uses a stopping rule")))?;
                let br = &b.model.rules()[bk];
                let mask = if value == 0 { 1 } else { 0 };
                if br.src != state || br.zero_test != mask {
                    return Err(Error::Precondition(format!("abstraction rejects step {step}")));
                }
                for (a, &x) in acc.iter_mut().zip(&b.rewards[bk]) {
                    *a += x as i64;
                }
                out.states.push(br.dst);
                out.values.push((value as i64 + br.delta[0] as i64) as u64);
                Some(bk)
            }
            None => {
                out.states.push(state);
                out.values.push(value);
                None
            }
        };
        out.rules.push(brule);
        out.rewards.push(acc.clone());
    }
    Ok(out)
}

/// Checks the correspondence between a run and its projection: equal states,
/// equal tracked counter, and every other counter equal to its start value
/// plus the accumulated reward.
pub fn projection_matches(run: &[Configuration], p: &ProjectedRun) -> bool {
    let i = p.counter;
    run.len() == p.states.len()
        && run.iter().enumerate().all(|(k, c)| {
            c.state == p.states[k]
                && c.counters[i - 1] == p.values[k]
                && (0..c.counters.len()).filter(|&j| j + 1 != i).enumerate().all(|(r, j)| {
                    c.counters[j] as i64 == run[0].counters[j] as i64 + p.rewards[k][r]
                })
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text_format::parse_pmc;

    fn walk(up: u64, down: u64) -> Pmc {
        parse_pmc(&format!(
            "pmc dimension 1\nstate q\nrule q -> q delta [1] zero {{}} weight {up}\nrule q -> q delta [-1] zero {{}} weight {down}\n"
        ))
        .unwrap()
    }

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
        assert_eq!(splitmix64(GOLDEN), 0x6e789e6aa1b965f4);
    }

    #[test]
    fn uniform_is_in_range_and_balanced() {
        let mut counts = [0u32; 3];
        for s in 0..30_000 {
            counts[uniform_below(3, 7, 0, s) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (9_400..10_600).contains(&c)), "{counts:?}");
    }

    #[test]
    fn stopped_start_and_stuck_runs() {
        let pmc = walk(1, 2);
        let z = StoppingCriterion::all(1);
        let o = simulate_run(&pmc, &Configuration::new(0, vec![0]), Some(&z), 100, 1, 0).unwrap();
        assert_eq!(o.stopped_at, Some(0));
        let stuck = parse_pmc("pmc dimension 1\nstate q\nrule q -> q delta [1] zero {1} weight 1\n").unwrap();
        let o = simulate_run(&stuck, &Configuration::new(0, vec![2]), Some(&z), 1000, 1, 0).unwrap();
        assert_eq!(o.stopped_at, None);
        assert_eq!(o.steps, 1000);
    }

    #[test]
    fn runs_are_reproducible() {
        let pmc = walk(2, 1);
        let z = StoppingCriterion::all(1);
        let a = simulate_run(&pmc, &Configuration::new(0, vec![1]), Some(&z), 500, 42, 9).unwrap();
        let b = simulate_run(&pmc, &Configuration::new(0, vec![1]), Some(&z), 500, 42, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gamblers_ruin_estimates() {
        let z = StoppingCriterion::all(1);
        let start = Configuration::new(0, vec![1]);
        let e = estimate_probability(&walk(1, 2), &start, &z, 100_000, 10_000, 3).unwrap();
        assert!(e.ci_high >= 0.999);
        let e = estimate_probability(&walk(2, 1), &start, &z, 10_000, 10_000, 3).unwrap();
        assert!(e.ci_low <= 0.5 && 0.5 <= e.ci_high, "{e:?}");
        let e = estimate_probability(&walk(2, 1), &start, &z, 10_000, 1, 3).unwrap();
        assert!(e.ci_low >= 0.0 && e.ci_high <= 1.0);
    }

    #[test]
    fn frequencies_sum_to_one() {
        let pmc = parse_pmc(
            "pmc dimension 1\nstate q\nrule q -> q delta [1] zero {} weight 1\n\
             rule q -> q delta [-1] zero {} weight 2\nrule q -> q delta [1] zero {1} weight 1\n",
        )
        .unwrap();
        let f = transition_frequencies(&pmc, &Configuration::new(0, vec![1]), 1000, 4, 5).unwrap();
        for row in f {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let single = parse_pmc("pmc dimension 1\nstate q\nrule q -> q delta [0] zero {} weight 1\nrule q -> q delta [0] zero {1} weight 1\n").unwrap();
        let f = transition_frequencies(&single, &Configuration::new(0, vec![1]), 100, 1, 5).unwrap();
        assert_eq!(f[0], vec![1.0, 0.0]);
    }

    #[test]
    fn projection_reconstructs_counters() {
        let pmc = parse_pmc(
            "pmc dimension 2\nstate p\nstate q\nrule p -> q delta [1,-1] zero {} weight 1\n\
             rule q -> p delta [1,1] zero {} weight 1\nrule p -> p delta [-1,1] zero {2} weight 1\n\
             rule q -> q delta [0,1] zero {2} weight 1\nrule q -> q delta [-1,0] zero {} weight 1\n",
        )
        .unwrap();
        let sim = Simulator::new(&pmc).unwrap();
        let z = StoppingCriterion::minus(2, 2);
        for r in 0..50 {
            let o = sim.run(&Configuration::new(0, vec![3, 0]), Some(&z), 200, 11, r, true).unwrap();
            let trace = o.trace.unwrap();
            let safe = &trace[..trace.len() - usize::from(o.stopped_at.is_some())];
            let p = project_run(&pmc, safe, 2).unwrap();
            assert!(projection_matches(safe, &p));
        }
        assert_eq!(project_run(&pmc, &[], 2).unwrap().states.len(), 0);
        let bad = [Configuration::new(0, vec![0, 1]), Configuration::new(1, vec![1, 0])];
        assert!(project_run(&pmc, &bad, 2).is_err());
    }
}

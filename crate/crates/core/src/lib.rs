//! Zero-reachability analysis for probabilistic multi-counter automata (pMC).
//!
//! The crate covers the exact operational semantics of pMCs, a text model
//! format, explicit finite Markov chains, the all-counters analysis
//! ([`case1`]), the one-free-counter analysis ([`case2`]) with its
//! martingale constants, VASS coverability primitives, and a deterministic
//! Monte Carlo simulator used as an independent oracle.

pub mod case1;
pub mod case2;
pub mod coverability;
pub mod error;
pub mod finite_chain;
pub mod linalg;
pub mod lp;
pub mod martingale;
pub mod model;
pub mod rational;
pub mod report;
pub mod sim;
pub mod text_format;

pub use case1::{approx_case1, qualitative_case1};
pub use case2::{approx_case2, qualitative_case2};
pub use error::{Error, Result};
pub use finite_chain::{FiniteChain, NumericPolicy, Prob, SccDecomposition};
pub use model::{
    classify_criterion, enabled_rules, forget_counter, is_safe_prefix, transition_distribution,
    zero_set, CriterionClass, Configuration, Kind, Pmc, Rule, StoppingCriterion, UndecidableReason,
    ZeroSet,
};
pub use martingale::{martingale_data, tail_constants};
pub use rational::Rational;
pub use report::{AnalysisReport, Verdict};
pub use sim::{estimate_probability, Simulator};
pub use text_format::{parse_pmc, serialize_pmc, write_report, ParseError};

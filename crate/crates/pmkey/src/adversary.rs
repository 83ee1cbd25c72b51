//! Eavesdropper-side machinery: ensemble decompositions of a target box.
//!
//! An eavesdropper who prepared the devices holds a purifying extension and,
//! once inputs are announced, may steer the shared box into any ensemble
//! `{q_e, R_e}` whose mixture reproduces the observed box. Because the
//! defining support conditions of a PM box are zero-probability statements,
//! every positive-weight member must itself be a PM box. Her knowledge of
//! Bob's first row is then limited by the weighted row entropy of the
//! members, which this module evaluates and heuristically minimises.
//!
//! The search never claims optimality; its role is to probe the analytic
//! bound from below. With the quantum row-probability cap enforced on every
//! member, no ensemble can average below `h(x)` and the search result
//! doubles as an empirical consistency check of the security analysis.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::boxmodel::{
    ab_error, allowed_outcomes, mix, validate_ks, BoxFamily, ContextKind, JointTable,
    OutcomeTriple, Sign,
};

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("{weights} weights given for {members} members")]
    WeightCount { weights: usize, members: usize },
    #[error("weights sum to {sum}, not 1")]
    WeightSum { sum: f64 },
    #[error("negative weight {weight}")]
    NegativeWeight { weight: f64 },
    #[error("empty ensemble")]
    Empty,
}

/// A weighted family of boxes controlled by the eavesdropper.
#[derive(Clone, Debug)]
pub struct Ensemble {
    weights: Vec<f64>,
    members: Vec<BoxFamily>,
}

impl Ensemble {
    pub fn new(weights: Vec<f64>, members: Vec<BoxFamily>) -> Result<Self, AdversaryError> {
        if members.is_empty() {
            return Err(AdversaryError::Empty);
        }
        if weights.len() != members.len() {
            return Err(AdversaryError::WeightCount {
                weights: weights.len(),
                members: members.len(),
            });
        }
        if let Some(&w) = weights.iter().find(|&&w| w < 0.0) {
            return Err(AdversaryError::NegativeWeight { weight: w });
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AdversaryError::WeightSum { sum });
        }
        Ok(Ensemble { weights, members })
    }

    pub fn trivial(target: BoxFamily) -> Self {
        Ensemble {
            weights: vec![1.0],
            members: vec![target],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn members(&self) -> &[BoxFamily] {
        &self.members
    }

    /// The mixture the ensemble presents to Alice and Bob.
    pub fn mixture(&self) -> BoxFamily {
        mix(&self.weights, &self.members).expect("ensemble invariants hold")
    }
}

/// Bob's first-row distribution of one box, averaged over Alice's input
/// (the three conditionals coincide when the box is non-signaling).
pub fn bob_first_row_marginal(family: &BoxFamily) -> [f64; 8] {
    let mut out = [0.0; 8];
    for a_input in 0..3 {
        let m = family.table(a_input, 0).bob_marginal();
        for k in 0..8 {
            out[k] += m[k] / 3.0;
        }
    }
    out
}

fn shannon_entropy(dist: &[f64]) -> f64 {
    dist.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Entropy of Bob's first row under one box, in bits.
pub fn row_entropy(family: &BoxFamily) -> f64 {
    shannon_entropy(&bob_first_row_marginal(family))
}

fn max_row_prob(family: &BoxFamily) -> f64 {
    bob_first_row_marginal(family)
        .iter()
        .fold(0.0_f64, |acc, &p| acc.max(p))
}

fn mean_ab_error(family: &BoxFamily) -> f64 {
    ab_error(family).iter().flatten().sum::<f64>() / 9.0
}

/// Checks that an ensemble is a legal decomposition of `target`: the
/// mixture reproduces it entrywise within `tol` and every positive-weight
/// member passes the Kochen-Specker validator at `tol`. Unnormalized
/// members fail the check rather than erroring.
pub fn verify_decomposition(ens: &Ensemble, target: &BoxFamily, tol: f64) -> bool {
    if ens.mixture().max_abs_diff(target) > tol {
        return false;
    }
    ens.members
        .iter()
        .zip(ens.weights.iter())
        .filter(|(_, &w)| w > 0.0)
        .all(|(m, _)| matches!(validate_ks(m, tol), Ok(check) if check.pass))
}

/// What the eavesdropper learns from an ensemble.
#[derive(Clone, Debug, Serialize)]
pub struct AttackReport {
    /// `sum_e q_e H(Bob first row under member e)`, in bits.
    pub avg_row_entropy: f64,
    /// Mean shared-observable error rate of each member.
    pub per_member_eps: Vec<f64>,
    /// Largest first-row outcome probability of each member, for checking
    /// against the quantum cap `x`.
    pub per_member_max_row_prob: Vec<f64>,
    /// Total weight of members with error rate below the Markov split.
    pub markov_mass_below_delta: f64,
    pub delta: f64,
}

/// Evaluates the eavesdropper's view: weighted row entropy, per-member
/// error rates, and the Markov tail mass at split `delta`.
pub fn eve_entropy(ens: &Ensemble, delta: f64) -> AttackReport {
    let per_member_eps: Vec<f64> = ens.members.iter().map(mean_ab_error).collect();
    let avg_row_entropy = ens
        .members
        .iter()
        .zip(ens.weights.iter())
        .map(|(m, &w)| w * row_entropy(m))
        .sum();
    AttackReport {
        avg_row_entropy,
        per_member_max_row_prob: ens.members.iter().map(max_row_prob).collect(),
        markov_mass_below_delta: markov_tail(&ens.weights, &per_member_eps, delta),
        per_member_eps,
        delta,
    }
}

/// Total weight of members with `eps_e < delta`. By the Markov inequality
/// this is at least `1 - mean(eps)/delta`, which is asserted.
pub fn markov_tail(weights: &[f64], eps_list: &[f64], delta: f64) -> f64 {
    assert_eq!(weights.len(), eps_list.len());
    let mass: f64 = weights
        .iter()
        .zip(eps_list.iter())
        .filter(|(_, &e)| e < delta)
        .map(|(&w, _)| w)
        .sum();
    let mean_eps: f64 = weights.iter().zip(eps_list.iter()).map(|(w, e)| w * e).sum();
    if delta > 0.0 {
        assert!(
            mass >= 1.0 - mean_eps / delta - 1e-12,
            "Markov bound violated: {mass} < 1 - {mean_eps}/{delta}"
        );
    }
    mass
}

/// Stress fixture: a full PM box (KS, no-signaling and perfectly correlated
/// shared observables) whose first Bob row is deterministically `row1`.
/// Such boxes exist as no-signaling objects but violate the quantum
/// row-probability cap, which is exactly what makes them useful in tests.
pub fn deterministic_row_box(row1: OutcomeTriple) -> BoxFamily {
    assert_eq!(
        crate::boxmodel::parity(row1),
        Sign::Plus,
        "first-row triple must have even parity"
    );
    BoxFamily::from_fn(|a_input, b_input| {
        let a_allowed = allowed_outcomes(ContextKind::alice_column(a_input));
        let b_allowed = allowed_outcomes(ContextKind::bob_row(b_input));
        let mut table = JointTable::zero();
        if b_input == 0 {
            // Alice's component 0 must match the fixed row.
            for a in a_allowed {
                if a.get(0) == row1.get(a_input) {
                    table.set(a, row1, 0.5);
                }
            }
        } else {
            for a in a_allowed {
                if a.get(0) != row1.get(a_input) {
                    continue;
                }
                for b in b_allowed {
                    if b.get(a_input) == a.get(b_input) {
                        table.set(a, b, 0.25);
                    }
                }
            }
        }
        table
    })
}

/// Configuration of the local attack search.
#[derive(Clone, Copy, Debug)]
pub struct AttackSearchConfig {
    pub members: usize,
    pub restarts: usize,
    /// Proposal moves per restart.
    pub steps: usize,
    pub seed: u64,
    /// Quantum row-probability cap enforced on every member; `None` runs
    /// the unfiltered no-signaling search.
    pub row_cap: Option<f64>,
}

impl AttackSearchConfig {
    pub fn new(members: usize, restarts: usize, seed: u64, row_cap: Option<f64>) -> Self {
        AttackSearchConfig {
            members,
            restarts,
            steps: 1500,
            seed,
            row_cap,
        }
    }
}

/// Greedy local search for an ensemble decomposition of `target` minimising
/// the eavesdropper's average row entropy. Mass is shuffled inside the
/// target's support, so members stay KS-valid and the mixture matches the
/// target exactly; the last member absorbs every move to keep the sum
/// invariant. Restarts run independent seeded streams and the best result
/// wins, ties broken by restart index.
pub fn attack_search(target: &BoxFamily, cfg: &AttackSearchConfig) -> Ensemble {
    assert!(cfg.members >= 1);
    let k = cfg.members;
    let weights = vec![1.0 / k as f64; k];
    if k == 1 || cfg.restarts == 0 {
        return Ensemble::new(weights, vec![target.clone(); k]).expect("valid trivial ensemble");
    }

    // Support cells of the objective-relevant contexts (B = 0).
    let support: Vec<Vec<(OutcomeTriple, OutcomeTriple)>> = (0..3)
        .map(|a_input| {
            let mut cells = Vec::new();
            for a in OutcomeTriple::all() {
                for b in OutcomeTriple::all() {
                    if target.table(a_input, 0).get(a, b) > 0.0 {
                        cells.push((a, b));
                    }
                }
            }
            cells
        })
        .collect();

    let objective = |members: &[BoxFamily]| -> f64 {
        members.iter().map(row_entropy).sum::<f64>() / k as f64
    };

    let mut best: Option<(f64, Vec<BoxFamily>)> = None;
    for restart in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(restart as u64));
        let mut members = vec![target.clone(); k];
        let mut current = objective(&members);
        for _ in 0..cfg.steps {
            let e = rng.random_range(0..k - 1);
            let a_input = rng.random_range(0..3);
            let cells = &support[a_input];
            if cells.len() < 2 {
                continue;
            }
            let c1 = cells[rng.random_range(0..cells.len())];
            let c2 = cells[rng.random_range(0..cells.len())];
            if c1 == c2 {
                continue;
            }
            let avail = members[e].table(a_input, 0).get(c1.0, c1.1);
            let room = members[k - 1].table(a_input, 0).get(c2.0, c2.1);
            let eta = rng.random_range(0.0..0.1_f64).min(avail).min(room);
            if eta <= 0.0 {
                continue;
            }
            // Move eta from c1 to c2 in member e; the residual member moves
            // the same mass back, keeping the mixture fixed.
            let apply = |members: &mut [BoxFamily], eta: f64| {
                let t = members[e].table_mut(a_input, 0);
                t.add(c1.0, c1.1, -eta);
                t.add(c2.0, c2.1, eta);
                let r = members[k - 1].table_mut(a_input, 0);
                r.add(c1.0, c1.1, eta);
                r.add(c2.0, c2.1, -eta);
            };
            apply(&mut members, eta);
            let cap_ok = cfg.row_cap.map_or(true, |cap| {
                max_row_prob(&members[e]) <= cap + 1e-12
                    && max_row_prob(&members[k - 1]) <= cap + 1e-12
            });
            let value = objective(&members);
            if !cap_ok || value >= current {
                apply(&mut members, -eta); // revert
            } else {
                current = value;
            }
        }
        if best.as_ref().map_or(true, |(v, _)| current < *v) {
            best = Some((current, members));
        }
    }
    let (_, members) = best.expect("at least one restart ran");
    Ensemble::new(weights, members).expect("search preserves ensemble invariants")
}

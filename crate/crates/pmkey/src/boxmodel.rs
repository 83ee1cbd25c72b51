//! Data model and validators for distributed Peres-Mermin boxes.
//!
//! A distributed PM box is a family of 9 conditional joint distributions
//! `P(a, b | A, B)` where Alice's input `A` selects a column of the 3x3
//! observable array, Bob's input `B` selects a row, and `a`, `b` are triples
//! of +/-1 outcomes. Three properties characterise the ideal box and are
//! checked (never assumed) by the validators in this module:
//!
//! * Kochen-Specker parity: Alice's columns 1 and 2 and all of Bob's rows
//!   produce triples with product +1, Alice's column 3 produces product -1;
//! * no-signaling: each party's marginal does not depend on the other
//!   party's input;
//! * shared-observable correlations: for inputs `(A, B)` the two sites hold
//!   one common array cell (row `B`, column `A`); the error rate on that
//!   cell is reported per context by [`ab_error`].
//!
//! Indexing conventions used throughout the crate:
//!
//! * inputs `A`, `B` are 0-based (`0..3`);
//! * a triple's component `k` is the outcome of the array cell in row `k`
//!   (for Alice measuring a column) or column `k` (for Bob measuring a row),
//!   so the shared cell of context `(A, B)` is Alice's component `B` and
//!   Bob's component `A`;
//! * triples are ordered lexicographically with `+` before `-`, giving each
//!   triple the index `4*b1 + 2*b2 + b3` where `b = 0` for `+` and `1` for
//!   `-`;
//! * a [`JointTable`] stores 64 probabilities in row-major `(a, b)` order,
//!   i.e. entry `a.index() * 8 + b.index()`.

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::ops::Mul;
use thiserror::Error;

/// Tolerance on table normalization guaranteed by every constructor in this
/// crate.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Normalization slack beyond which validators refuse to interpret a table
/// as a probability distribution.
const UNNORMALIZED_GATE: f64 = 1e-9;

/// Errors from box construction and validation.
#[derive(Debug, Error)]
pub enum BoxError {
    #[error("table for inputs (A={a_input}, B={b_input}) sums to {sum}, not 1")]
    Unnormalized {
        a_input: usize,
        b_input: usize,
        sum: f64,
    },
    #[error("{weights} weights given for {boxes} boxes")]
    WeightCount { weights: usize, boxes: usize },
    #[error("weights sum to {sum}, not 1")]
    WeightSum { sum: f64 },
    #[error("negative weight {weight}")]
    NegativeWeight { weight: f64 },
    #[error("empty ensemble")]
    Empty,
}

/// A +/-1 measurement outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    /// 0 for `+`, 1 for `-`; the bit used in lexicographic triple indexing.
    fn bit(self) -> usize {
        match self {
            Sign::Plus => 0,
            Sign::Minus => 1,
        }
    }

    fn from_bit(bit: usize) -> Sign {
        if bit == 0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

impl Mul for Sign {
    type Output = Sign;

    fn mul(self, rhs: Sign) -> Sign {
        if self == rhs {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sign::Plus => write!(f, "+"),
            Sign::Minus => write!(f, "-"),
        }
    }
}

/// An ordered triple of +/-1 outcomes from jointly measuring one context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OutcomeTriple {
    pub s1: Sign,
    pub s2: Sign,
    pub s3: Sign,
}

impl OutcomeTriple {
    pub const fn new(s1: Sign, s2: Sign, s3: Sign) -> Self {
        OutcomeTriple { s1, s2, s3 }
    }

    /// All 8 triples in lexicographic order (`+` before `-`).
    pub fn all() -> [OutcomeTriple; 8] {
        let mut out = [OutcomeTriple::new(Sign::Plus, Sign::Plus, Sign::Plus); 8];
        for (idx, slot) in out.iter_mut().enumerate() {
            *slot = OutcomeTriple::from_index(idx);
        }
        out
    }

    /// Lexicographic index in `0..8`.
    pub fn index(self) -> usize {
        4 * self.s1.bit() + 2 * self.s2.bit() + self.s3.bit()
    }

    pub fn from_index(idx: usize) -> OutcomeTriple {
        assert!(idx < 8, "triple index {idx} out of range");
        OutcomeTriple::new(
            Sign::from_bit((idx >> 2) & 1),
            Sign::from_bit((idx >> 1) & 1),
            Sign::from_bit(idx & 1),
        )
    }

    /// Component `k` (0-based).
    pub fn get(self, k: usize) -> Sign {
        match k {
            0 => self.s1,
            1 => self.s2,
            2 => self.s3,
            _ => panic!("triple component {k} out of range"),
        }
    }
}

impl fmt::Display for OutcomeTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.s1, self.s2, self.s3)
    }
}

impl Serialize for OutcomeTriple {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

/// Product of the three outcomes of a triple.
pub fn parity(t: OutcomeTriple) -> Sign {
    t.s1 * t.s2 * t.s3
}

/// Parity class of a jointly measured context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextKind {
    /// Outcomes multiply to +1 (all Bob rows, Alice columns 1 and 2).
    Even,
    /// Outcomes multiply to -1 (Alice column 3 only).
    Odd,
}

impl ContextKind {
    /// Parity class of Alice's column `a_input` (0-based).
    pub fn alice_column(a_input: usize) -> ContextKind {
        assert!(a_input < 3, "column index {a_input} out of range");
        if a_input == 2 {
            ContextKind::Odd
        } else {
            ContextKind::Even
        }
    }

    /// Parity class of Bob's row; every row is even.
    pub fn bob_row(b_input: usize) -> ContextKind {
        assert!(b_input < 3, "row index {b_input} out of range");
        ContextKind::Even
    }
}

/// The four triples a context of the given parity class can produce.
pub fn allowed_outcomes(kind: ContextKind) -> [OutcomeTriple; 4] {
    let target = match kind {
        ContextKind::Even => Sign::Plus,
        ContextKind::Odd => Sign::Minus,
    };
    let mut out = [OutcomeTriple::new(Sign::Plus, Sign::Plus, Sign::Plus); 4];
    let mut n = 0;
    for t in OutcomeTriple::all() {
        if parity(t) == target {
            out[n] = t;
            n += 1;
        }
    }
    debug_assert_eq!(n, 4);
    out
}

/// Joint distribution over `(a, b)` outcome pairs for one fixed input pair.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    probs: [f64; 64],
}

impl JointTable {
    pub fn zero() -> Self {
        JointTable { probs: [0.0; 64] }
    }

    pub fn from_probs(probs: [f64; 64]) -> Self {
        JointTable { probs }
    }

    pub fn get(&self, a: OutcomeTriple, b: OutcomeTriple) -> f64 {
        self.probs[a.index() * 8 + b.index()]
    }

    pub fn set(&mut self, a: OutcomeTriple, b: OutcomeTriple, p: f64) {
        self.probs[a.index() * 8 + b.index()] = p;
    }

    pub fn add(&mut self, a: OutcomeTriple, b: OutcomeTriple, p: f64) {
        self.probs[a.index() * 8 + b.index()] += p;
    }

    /// Raw 64 entries in row-major `(a, b)` order.
    pub fn entries(&self) -> &[f64; 64] {
        &self.probs
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Marginal over Alice's triple (sums out `b`).
    pub fn alice_marginal(&self) -> [f64; 8] {
        let mut m = [0.0; 8];
        for (i, slot) in m.iter_mut().enumerate() {
            *slot = self.probs[i * 8..(i + 1) * 8].iter().sum();
        }
        m
    }

    /// Marginal over Bob's triple (sums out `a`).
    pub fn bob_marginal(&self) -> [f64; 8] {
        let mut m = [0.0; 8];
        for a in 0..8 {
            for (b, slot) in m.iter_mut().enumerate() {
                *slot += self.probs[a * 8 + b];
            }
        }
        m
    }
}

impl Serialize for JointTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(64))?;
        for p in &self.probs {
            seq.serialize_element(p)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for JointTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct TableVisitor;

        impl<'de> Visitor<'de> for TableVisitor {
            type Value = JointTable;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a sequence of 64 probabilities")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<JointTable, A::Error> {
                let mut probs = [0.0; 64];
                for (i, slot) in probs.iter_mut().enumerate() {
                    *slot = seq
                        .next_element()?
                        .ok_or_else(|| serde::de::Error::invalid_length(i, &self))?;
                }
                if seq.next_element::<f64>()?.is_some() {
                    return Err(serde::de::Error::invalid_length(65, &self));
                }
                Ok(JointTable { probs })
            }
        }

        deserializer.deserialize_seq(TableVisitor)
    }
}

/// Which party a marginal refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Party {
    Alice,
    Bob,
}

/// Family of 9 conditional joint distributions, indexed `tables[A][B]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxFamily {
    tables: Vec<Vec<JointTable>>,
}

impl BoxFamily {
    /// Builds a family from a per-context constructor.
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> JointTable) -> Self {
        let tables = (0..3)
            .map(|a| (0..3).map(|b| f(a, b)).collect())
            .collect();
        BoxFamily { tables }
    }

    pub fn table(&self, a_input: usize, b_input: usize) -> &JointTable {
        &self.tables[a_input][b_input]
    }

    pub fn table_mut(&mut self, a_input: usize, b_input: usize) -> &mut JointTable {
        &mut self.tables[a_input][b_input]
    }

    /// Largest deviation of any table sum from 1.
    pub fn normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.tables {
            for t in row {
                worst = worst.max((t.sum() - 1.0).abs());
            }
        }
        worst
    }

    /// Largest entrywise difference to another family.
    pub fn max_abs_diff(&self, other: &BoxFamily) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let lhs = self.tables[a][b].entries();
                let rhs = other.tables[a][b].entries();
                for (x, y) in lhs.iter().zip(rhs.iter()) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        worst
    }

    fn check_normalized(&self) -> Result<(), BoxError> {
        for (a, row) in self.tables.iter().enumerate() {
            for (b, t) in row.iter().enumerate() {
                let sum = t.sum();
                if (sum - 1.0).abs() > UNNORMALIZED_GATE {
                    return Err(BoxError::Unnormalized {
                        a_input: a,
                        b_input: b,
                        sum,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Outcome of one validation criterion.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CriterionCheck {
    pub violation: f64,
    pub tol: f64,
    pub pass: bool,
}

impl CriterionCheck {
    fn new(violation: f64, tol: f64) -> Self {
        CriterionCheck {
            violation,
            tol,
            pass: violation <= tol,
        }
    }
}

/// Combined report of the three defining properties of a PM box.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub ks: CriterionCheck,
    pub no_signaling: CriterionCheck,
    /// Shared-observable error rate per context, indexed `[A][B]`.
    pub ab_errors: [[f64; 3]; 3],
    pub max_ab_error: f64,
    pub ab_pass: bool,
}

/// Probability mass on Kochen-Specker-forbidden triples, maximised over the
/// 9 contexts.
pub fn validate_ks(family: &BoxFamily, tol: f64) -> Result<CriterionCheck, BoxError> {
    family.check_normalized()?;
    let mut worst: f64 = 0.0;
    for a_input in 0..3 {
        let a_allowed = allowed_outcomes(ContextKind::alice_column(a_input));
        for b_input in 0..3 {
            let b_allowed = allowed_outcomes(ContextKind::bob_row(b_input));
            let mut forbidden = 0.0;
            for a in OutcomeTriple::all() {
                for b in OutcomeTriple::all() {
                    if !a_allowed.contains(&a) || !b_allowed.contains(&b) {
                        forbidden += family.table(a_input, b_input).get(a, b);
                    }
                }
            }
            worst = worst.max(forbidden);
        }
    }
    Ok(CriterionCheck::new(worst, tol))
}

/// Largest change of a local marginal under the remote party's input,
/// maximised over parties, inputs and outcomes.
pub fn validate_nosignaling(family: &BoxFamily, tol: f64) -> Result<CriterionCheck, BoxError> {
    family.check_normalized()?;
    let mut worst: f64 = 0.0;
    for a_input in 0..3 {
        let margs: Vec<[f64; 8]> = (0..3)
            .map(|b_input| family.table(a_input, b_input).alice_marginal())
            .collect();
        for pair in [(0, 1), (0, 2), (1, 2)] {
            for k in 0..8 {
                worst = worst.max((margs[pair.0][k] - margs[pair.1][k]).abs());
            }
        }
    }
    for b_input in 0..3 {
        let margs: Vec<[f64; 8]> = (0..3)
            .map(|a_input| family.table(a_input, b_input).bob_marginal())
            .collect();
        for pair in [(0, 1), (0, 2), (1, 2)] {
            for k in 0..8 {
                worst = worst.max((margs[pair.0][k] - margs[pair.1][k]).abs());
            }
        }
    }
    Ok(CriterionCheck::new(worst, tol))
}

/// Error rate of the shared observable per context: entry `[A][B]` is the
/// probability that Alice's component `B` differs from Bob's component `A`
/// given inputs `(A, B)`.
pub fn ab_error(family: &BoxFamily) -> [[f64; 3]; 3] {
    let mut eps = [[0.0; 3]; 3];
    for (a_input, eps_row) in eps.iter_mut().enumerate() {
        for (b_input, entry) in eps_row.iter_mut().enumerate() {
            let table = family.table(a_input, b_input);
            let mut mismatch = 0.0;
            for a in OutcomeTriple::all() {
                for b in OutcomeTriple::all() {
                    if a.get(b_input) != b.get(a_input) {
                        mismatch += table.get(a, b);
                    }
                }
            }
            let total = table.sum();
            *entry = if total > 0.0 { mismatch / total } else { 0.0 };
        }
    }
    eps
}

/// Runs all three validators with one tolerance.
pub fn validate_box(family: &BoxFamily, tol: f64) -> Result<ValidationReport, BoxError> {
    let ks = validate_ks(family, tol)?;
    let no_signaling = validate_nosignaling(family, tol)?;
    let ab_errors = ab_error(family);
    let max_ab_error = ab_errors
        .iter()
        .flatten()
        .fold(0.0_f64, |acc, &e| acc.max(e));
    Ok(ValidationReport {
        ks,
        no_signaling,
        ab_errors,
        max_ab_error,
        ab_pass: max_ab_error <= tol,
    })
}

/// Entrywise convex combination of box families.
pub fn mix(weights: &[f64], boxes: &[BoxFamily]) -> Result<BoxFamily, BoxError> {
    if boxes.is_empty() {
        return Err(BoxError::Empty);
    }
    if weights.len() != boxes.len() {
        return Err(BoxError::WeightCount {
            weights: weights.len(),
            boxes: boxes.len(),
        });
    }
    if let Some(&w) = weights.iter().find(|&&w| w < -NORMALIZATION_TOL) {
        return Err(BoxError::NegativeWeight { weight: w });
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > UNNORMALIZED_GATE {
        return Err(BoxError::WeightSum { sum });
    }
    Ok(BoxFamily::from_fn(|a_input, b_input| {
        let mut probs = [0.0; 64];
        for (w, family) in weights.iter().zip(boxes.iter()) {
            for (slot, p) in probs
                .iter_mut()
                .zip(family.table(a_input, b_input).entries().iter())
            {
                *slot += w * p;
            }
        }
        JointTable::from_probs(probs)
    }))
}

/// Distribution of one party's triple for a fixed input pair.
///
/// `input` selects the named party's input and `other_input` the remote
/// party's; the remote triple is summed out. Returns the 8 probabilities in
/// triple-index order.
pub fn marginal(family: &BoxFamily, side: Party, input: usize, other_input: usize) -> [f64; 8] {
    match side {
        Party::Alice => family.table(input, other_input).alice_marginal(),
        Party::Bob => family.table(other_input, input).bob_marginal(),
    }
}

/// Canonical ideal PM box: for every context the pair `(a, b)` is uniform
/// over the allowed triples whose shared component agrees, giving 8 cells of
/// probability 1/8. Passes all three validators exactly.
pub fn construct_uniform_ideal() -> BoxFamily {
    BoxFamily::from_fn(|a_input, b_input| {
        let a_allowed = allowed_outcomes(ContextKind::alice_column(a_input));
        let b_allowed = allowed_outcomes(ContextKind::bob_row(b_input));
        let mut table = JointTable::zero();
        for b in b_allowed {
            for a in a_allowed {
                if a.get(b_input) == b.get(a_input) {
                    table.set(a, b, 0.125);
                }
            }
        }
        table
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plus() -> Sign {
        Sign::Plus
    }

    fn minus() -> Sign {
        Sign::Minus
    }

    fn triple(s: &str) -> OutcomeTriple {
        let signs: Vec<Sign> = s
            .chars()
            .map(|c| if c == '+' { plus() } else { minus() })
            .collect();
        OutcomeTriple::new(signs[0], signs[1], signs[2])
    }

    #[test]
    fn parity_examples() {
        assert_eq!(parity(triple("+++")), Sign::Plus);
        assert_eq!(parity(triple("--+")), Sign::Plus);
        assert_eq!(parity(triple("-++")), Sign::Minus);
    }

    #[test]
    fn allowed_sets_match_parity_classes() {
        let even = allowed_outcomes(ContextKind::Even);
        let odd = allowed_outcomes(ContextKind::Odd);
        let expected_even = ["+++", "+--", "-+-", "--+"].map(triple);
        let expected_odd = ["---", "-++", "+-+", "++-"].map(triple);
        for t in expected_even {
            assert!(even.contains(&t));
            assert_eq!(parity(t), Sign::Plus);
        }
        for t in expected_odd {
            assert!(odd.contains(&t));
            assert_eq!(parity(t), Sign::Minus);
        }
        for t in even {
            assert!(!odd.contains(&t));
        }
    }

    #[test]
    fn triple_indexing_is_lexicographic() {
        assert_eq!(triple("+++").index(), 0);
        assert_eq!(triple("++-").index(), 1);
        assert_eq!(triple("---").index(), 7);
        for idx in 0..8 {
            assert_eq!(OutcomeTriple::from_index(idx).index(), idx);
        }
    }

    #[test]
    fn uniform_ideal_has_eight_cells_of_one_eighth() {
        let family = construct_uniform_ideal();
        let table = family.table(0, 0);
        let nonzero: Vec<f64> = table
            .entries()
            .iter()
            .copied()
            .filter(|&p| p > 0.0)
            .collect();
        assert_eq!(nonzero.len(), 8);
        for p in nonzero {
            assert_eq!(p, 0.125);
        }
    }

    #[test]
    fn uniform_ideal_passes_all_validators_tightly() {
        let family = construct_uniform_ideal();
        let report = validate_box(&family, 1e-12).unwrap();
        assert!(report.ks.pass);
        assert!(report.no_signaling.pass);
        assert!(report.ab_pass);
        assert!(family.normalization_error() <= NORMALIZATION_TOL);
    }

    #[test]
    fn uniform_ideal_single_observable_marginals_are_unbiased() {
        let family = construct_uniform_ideal();
        for a_input in 0..3 {
            for b_input in 0..3 {
                for k in 0..3 {
                    let m = marginal(&family, Party::Bob, b_input, a_input);
                    let p_plus: f64 = OutcomeTriple::all()
                        .iter()
                        .filter(|t| t.get(k) == Sign::Plus)
                        .map(|t| m[t.index()])
                        .sum();
                    assert!((p_plus - 0.5).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn ks_violation_reports_misplaced_mass() {
        let mut family = construct_uniform_ideal();
        // Move 0.1 onto a parity-odd Alice triple in the (A=0, B=0) context.
        let bad = triple("++-");
        let good_b = triple("+++");
        let table = family.table_mut(0, 0);
        table.set(triple("+++"), good_b, table.get(triple("+++"), good_b) - 0.1);
        table.add(bad, good_b, 0.1);
        let check = validate_ks(&family, 1e-6).unwrap();
        assert!((check.violation - 0.1).abs() < 1e-12);
        assert!(!check.pass);
    }

    #[test]
    fn validators_reject_unnormalized_tables() {
        let mut family = construct_uniform_ideal();
        family.table_mut(1, 2).add(triple("+++"), triple("+++"), 0.5);
        assert!(matches!(
            validate_ks(&family, 1e-9),
            Err(BoxError::Unnormalized { a_input: 1, b_input: 2, .. })
        ));
        assert!(validate_nosignaling(&family, 1e-9).is_err());
    }

    /// Product box: `a` and `b` drawn independently and uniformly from their
    /// allowed sets.
    fn independent_box() -> BoxFamily {
        BoxFamily::from_fn(|a_input, b_input| {
            let a_allowed = allowed_outcomes(ContextKind::alice_column(a_input));
            let b_allowed = allowed_outcomes(ContextKind::bob_row(b_input));
            let mut table = JointTable::zero();
            for a in a_allowed {
                for b in b_allowed {
                    table.set(a, b, 1.0 / 16.0);
                }
            }
            table
        })
    }

    #[test]
    fn product_box_is_exactly_nonsignaling() {
        let check = validate_nosignaling(&independent_box(), 0.0).unwrap();
        assert_eq!(check.violation, 0.0);
        assert!(check.pass);
    }

    #[test]
    fn signaling_box_reports_marginal_shift() {
        // Start from the product box and shift Alice's (A=0) marginal by 0.2
        // between B=0 and B=1 by moving mass between two of her triples.
        let mut family = independent_box();
        let a0 = triple("+++");
        let a1 = triple("+--");
        let table = family.table_mut(0, 1);
        for b in allowed_outcomes(ContextKind::Even) {
            let delta = 0.2 / 4.0;
            table.set(a0, b, table.get(a0, b) + delta);
            table.set(a1, b, table.get(a1, b) - delta);
        }
        let check = validate_nosignaling(&family, 1e-9).unwrap();
        assert!((check.violation - 0.2).abs() < 1e-12);
        assert!(!check.pass);
    }

    #[test]
    fn independent_outcomes_give_half_error() {
        let eps = ab_error(&independent_box());
        for row in eps {
            for e in row {
                assert!((e - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_ideal_has_zero_ab_error() {
        let eps = ab_error(&construct_uniform_ideal());
        for row in eps {
            for e in row {
                assert_eq!(e, 0.0);
            }
        }
    }

    #[test]
    fn mix_identity_and_idempotence() {
        let family = construct_uniform_ideal();
        let one = mix(&[1.0], &[family.clone()]).unwrap();
        assert_eq!(one.max_abs_diff(&family), 0.0);
        let half = mix(&[0.5, 0.5], &[family.clone(), family.clone()]).unwrap();
        assert!(half.max_abs_diff(&family) < 1e-15);
    }

    #[test]
    fn mix_rejects_bad_weights() {
        let family = construct_uniform_ideal();
        assert!(matches!(
            mix(&[0.5], &[family.clone(), family.clone()]),
            Err(BoxError::WeightCount { .. })
        ));
        assert!(matches!(
            mix(&[0.7, 0.7], &[family.clone(), family.clone()]),
            Err(BoxError::WeightSum { .. })
        ));
        assert!(matches!(
            mix(&[1.5, -0.5], &[family.clone(), family]),
            Err(BoxError::NegativeWeight { .. })
        ));
        assert!(matches!(mix(&[], &[]), Err(BoxError::Empty)));
    }

    #[test]
    fn mixture_of_ks_valid_boxes_stays_ks_valid() {
        let mixture = mix(
            &[0.3, 0.7],
            &[construct_uniform_ideal(), independent_box()],
        )
        .unwrap();
        let check = validate_ks(&mixture, 0.0).unwrap();
        assert_eq!(check.violation, 0.0);
    }

    #[test]
    fn deterministic_box_has_point_mass_marginal() {
        let family = BoxFamily::from_fn(|_, _| {
            let mut t = JointTable::zero();
            t.set(triple("+++"), triple("+++"), 1.0);
            t
        });
        let m = marginal(&family, Party::Alice, 1, 2);
        assert_eq!(m[triple("+++").index()], 1.0);
        assert_eq!(m.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn marginal_of_mixture_is_mixture_of_marginals() {
        let b1 = construct_uniform_ideal();
        let b2 = independent_box();
        let mixture = mix(&[0.5, 0.5], &[b1.clone(), b2.clone()]).unwrap();
        let m1 = marginal(&b1, Party::Bob, 0, 2);
        let m2 = marginal(&b2, Party::Bob, 0, 2);
        let mm = marginal(&mixture, Party::Bob, 0, 2);
        for k in 0..8 {
            assert!((mm[k] - 0.5 * (m1[k] + m2[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_tol_ks_pass_means_support_only_on_allowed_cells() {
        let family = construct_uniform_ideal();
        assert!(validate_ks(&family, 0.0).unwrap().pass);
        for a_input in 0..3 {
            let a_allowed = allowed_outcomes(ContextKind::alice_column(a_input));
            for b_input in 0..3 {
                let b_allowed = allowed_outcomes(ContextKind::bob_row(b_input));
                for a in OutcomeTriple::all() {
                    for b in OutcomeTriple::all() {
                        if !a_allowed.contains(&a) || !b_allowed.contains(&b) {
                            assert_eq!(family.table(a_input, b_input).get(a, b), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn serialization_layout_is_row_major_over_triple_indices() {
        let mut family = construct_uniform_ideal();
        family.table_mut(2, 1).set(triple("+-+"), triple("++-"), 0.25);
        let json = serde_json::to_value(&family).unwrap();
        let tables = json.get("tables").unwrap().as_array().unwrap();
        assert_eq!(tables.len(), 3);
        let cell = tables[2].as_array().unwrap()[1].as_array().unwrap()
            [triple("+-+").index() * 8 + triple("++-").index()]
        .as_f64()
        .unwrap();
        assert_eq!(cell, 0.25);
        let back: BoxFamily = serde_json::from_value(json).unwrap();
        assert_eq!(back.max_abs_diff(&family), 0.0);
    }

    proptest! {
        /// Random sub-normalized support patterns: a mixture is KS-clean at
        /// tol 0 exactly when every positive-weight member is.
        #[test]
        fn ks_closure_under_mixing(
            dirty_member in 0usize..3,
            make_dirty in proptest::bool::ANY,
            w in 0.05f64..0.9,
        ) {
            let mut members = vec![
                construct_uniform_ideal(),
                independent_box(),
                construct_uniform_ideal(),
            ];
            if make_dirty {
                let t = members[dirty_member].table_mut(0, 0);
                t.set(triple("+++"), triple("+++"), t.get(triple("+++"), triple("+++")) - 0.01);
                t.add(triple("++-"), triple("+++"), 0.01);
            }
            let weights = [w, (1.0 - w) / 2.0, (1.0 - w) / 2.0];
            let mixture = mix(&weights, &members).unwrap();
            let mix_clean = validate_ks(&mixture, 0.0).unwrap().pass;
            let members_clean = members
                .iter()
                .zip(weights.iter())
                .filter(|(_, &w)| w > 0.0)
                .all(|(m, _)| validate_ks(m, 0.0).unwrap().pass);
            prop_assert_eq!(mix_clean, members_clean);
        }

        /// Mixing never increases the worst validator metric beyond the
        /// weighted members' worst, and normalization survives mixing.
        #[test]
        fn mixing_is_linear_in_metrics(w in 0.0f64..1.0) {
            let members = [construct_uniform_ideal(), independent_box()];
            let weights = [w, 1.0 - w];
            let mixture = mix(&weights, &members).unwrap();
            prop_assert!(mixture.normalization_error() <= NORMALIZATION_TOL);
            let mix_ns = validate_nosignaling(&mixture, 1e-9).unwrap().violation;
            let worst_member = members
                .iter()
                .map(|m| validate_nosignaling(m, 1e-9).unwrap().violation)
                .fold(0.0_f64, f64::max);
            prop_assert!(mix_ns <= worst_member + 1e-12);
        }
    }
}

//! Bell functionals for the distributed PM box scenario.
//!
//! The six-term correlator functional
//!
//! ```text
//! gamma = <A1 B1> + <A2 B2> + <A3 B3> + <A1 B1'> + <A2 B2'> - <A3 B3'>
//! ```
//!
//! (with `B3 = B1 B2` and `B3' = B1' B2'` on Bob's side) has classical bound
//! 4, quantum bound 5.6364 (computed by the [`crate::npa`] module) and
//! algebraic bound 6. Its probability form `beta = (gamma + 6) / 2` sums the
//! five equality probabilities and one inequality probability. The classical
//! bounds are established here by exhaustive enumeration of deterministic
//! strategies, which is total and therefore exact.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BellError {
    #[error("correlator {value} outside [-1, 1]")]
    CorrelatorRange { value: f64 },
    #[error("probability {value} outside [0, 1]")]
    ProbabilityRange { value: f64 },
    #[error("gamma value {value} outside [-6, 6]")]
    GammaRange { value: f64 },
}

/// The six correlators entering `gamma`: `c[i][0] = <A_{i+1} B_{i+1}>`,
/// `c[i][1] = <A_{i+1} B'_{i+1}>`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorrelatorTable {
    pub c: [[f64; 2]; 3],
}

impl CorrelatorTable {
    pub fn new(c: [[f64; 2]; 3]) -> Result<Self, BellError> {
        for row in &c {
            for &value in row {
                if !(-1.0..=1.0).contains(&value) {
                    return Err(BellError::CorrelatorRange { value });
                }
            }
        }
        Ok(CorrelatorTable { c })
    }

    pub fn zero() -> Self {
        CorrelatorTable { c: [[0.0; 2]; 3] }
    }
}

/// One signed correlator term of a Bell functional.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FunctionalTerm {
    /// Alice observable index, `0..3`.
    pub alice: usize,
    /// Bob observable index, `0..3`.
    pub bob: usize,
    /// Whether the Bob observable is from the primed row.
    pub primed: bool,
    /// Coefficient, `+1` or `-1` for the functionals used here.
    pub coefficient: f64,
}

/// A correlator functional together with whatever bounds have been
/// established for it.
#[derive(Clone, Debug, Serialize)]
pub struct BellFunctional {
    pub terms: Vec<FunctionalTerm>,
    pub bound_classical: Option<f64>,
    pub bound_quantum: Option<f64>,
    pub bound_algebraic: f64,
}

impl BellFunctional {
    pub fn evaluate(&self, table: &CorrelatorTable) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coefficient * table.c[t.alice][if t.primed { 1 } else { 0 }])
            .sum()
    }
}

/// The six-term functional `gamma` with its algebraic bound filled in.
pub fn gamma_functional() -> BellFunctional {
    let mut terms = Vec::with_capacity(6);
    for i in 0..3 {
        terms.push(FunctionalTerm {
            alice: i,
            bob: i,
            primed: false,
            coefficient: 1.0,
        });
    }
    for i in 0..3 {
        terms.push(FunctionalTerm {
            alice: i,
            bob: i,
            primed: true,
            coefficient: if i == 2 { -1.0 } else { 1.0 },
        });
    }
    let bound_algebraic = terms.iter().map(|t: &FunctionalTerm| t.coefficient.abs()).sum();
    BellFunctional {
        terms,
        bound_classical: None,
        bound_quantum: None,
        bound_algebraic,
    }
}

/// Evaluates `gamma` on a correlator table.
pub fn gamma(table: &CorrelatorTable) -> f64 {
    let c = &table.c;
    c[0][0] + c[1][0] + c[2][0] + c[0][1] + c[1][1] - c[2][1]
}

/// Evaluates `beta` from its six probabilities: the five equality
/// probabilities `p(A_i = B_i)`, `p(A_1 = B_1')`, `p(A_2 = B_2')` and the
/// inequality probability `p(A_3 != B_3')`, in term order.
pub fn beta(probs: [f64; 6]) -> Result<f64, BellError> {
    for &value in &probs {
        if !(0.0..=1.0).contains(&value) {
            return Err(BellError::ProbabilityRange { value });
        }
    }
    Ok(probs.iter().sum())
}

/// The affine relation `beta = (gamma + 6) / 2`.
pub fn beta_from_gamma(g: f64) -> Result<f64, BellError> {
    if !(-6.0..=6.0).contains(&g) {
        return Err(BellError::GammaRange { value: g });
    }
    Ok((g + 6.0) / 2.0)
}

/// CHSH expression `|c_ab + c_ab' + c_a'b - c_a'b'|`.
pub fn chsh(
    c_ab: f64,
    c_ab_prime: f64,
    c_a_prime_b: f64,
    c_a_prime_b_prime: f64,
) -> Result<f64, BellError> {
    for value in [c_ab, c_ab_prime, c_a_prime_b, c_a_prime_b_prime] {
        if !(-1.0..=1.0).contains(&value) {
            return Err(BellError::CorrelatorRange { value });
        }
    }
    Ok((c_ab + c_ab_prime + c_a_prime_b - c_a_prime_b_prime).abs())
}

/// A deterministic local strategy: values for `A1..A3`, `B1`, `B2`, `B1'`,
/// `B2'`; `B3` and `B3'` are the forced products.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DeterministicStrategy {
    pub alice: [f64; 3],
    pub bob: [f64; 2],
    pub bob_prime: [f64; 2],
}

impl DeterministicStrategy {
    pub fn bob_full(&self) -> [f64; 3] {
        [self.bob[0], self.bob[1], self.bob[0] * self.bob[1]]
    }

    pub fn bob_prime_full(&self) -> [f64; 3] {
        [
            self.bob_prime[0],
            self.bob_prime[1],
            self.bob_prime[0] * self.bob_prime[1],
        ]
    }

    pub fn correlators(&self) -> CorrelatorTable {
        let b = self.bob_full();
        let bp = self.bob_prime_full();
        let mut c = [[0.0; 2]; 3];
        for i in 0..3 {
            c[i][0] = self.alice[i] * b[i];
            c[i][1] = self.alice[i] * bp[i];
        }
        CorrelatorTable { c }
    }

    pub fn gamma(&self) -> f64 {
        gamma(&self.correlators())
    }
}

fn sign_of_bit(bits: usize, k: usize) -> f64 {
    if (bits >> k) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// All 128 deterministic strategies (7 free +/-1 values).
pub fn deterministic_strategies() -> impl Iterator<Item = DeterministicStrategy> {
    (0..128usize).map(|bits| DeterministicStrategy {
        alice: [
            sign_of_bit(bits, 0),
            sign_of_bit(bits, 1),
            sign_of_bit(bits, 2),
        ],
        bob: [sign_of_bit(bits, 3), sign_of_bit(bits, 4)],
        bob_prime: [sign_of_bit(bits, 5), sign_of_bit(bits, 6)],
    })
}

/// Exact classical maximum of `gamma` by exhaustive enumeration, with one
/// maximising strategy.
pub fn classical_max_gamma() -> (f64, DeterministicStrategy) {
    let mut best: Option<(f64, DeterministicStrategy)> = None;
    for strategy in deterministic_strategies() {
        let value = strategy.gamma();
        if best.map_or(true, |(v, _)| value > v) {
            best = Some((value, strategy));
        }
    }
    best.expect("enumeration is nonempty")
}

/// Exact classical maximum of the CHSH expression over the 16 deterministic
/// assignments.
pub fn classical_max_chsh() -> f64 {
    let mut best = f64::NEG_INFINITY;
    for bits in 0..16usize {
        let a = sign_of_bit(bits, 0);
        let ap = sign_of_bit(bits, 1);
        let b = sign_of_bit(bits, 2);
        let bp = sign_of_bit(bits, 3);
        let value = (a * b + a * bp + ap * b - ap * bp).abs();
        if value > best {
            best = value;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gamma_reaches_six_on_the_perfect_correlation_pattern() {
        let table = CorrelatorTable::new([[1.0, 1.0], [1.0, 1.0], [1.0, -1.0]]).unwrap();
        assert_eq!(gamma(&table), 6.0);
        assert_eq!(gamma_functional().evaluate(&table), 6.0);
    }

    #[test]
    fn gamma_of_zero_table_is_zero() {
        assert_eq!(gamma(&CorrelatorTable::zero()), 0.0);
    }

    #[test]
    fn classical_maximum_of_gamma_is_four() {
        let (best, strategy) = classical_max_gamma();
        assert_eq!(best, 4.0);
        assert_eq!(strategy.gamma(), 4.0);
    }

    #[test]
    fn restricting_primed_to_unprimed_still_reaches_four() {
        let mut best = f64::NEG_INFINITY;
        for strategy in deterministic_strategies() {
            if strategy.bob == strategy.bob_prime {
                best = best.max(strategy.gamma());
            }
        }
        assert_eq!(best, 4.0);
    }

    #[test]
    fn classical_chsh_bound_is_two() {
        assert_eq!(classical_max_chsh(), 2.0);
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta([1.0; 6]).unwrap(), 6.0);
        assert_eq!(beta([0.5; 6]).unwrap(), 3.0);
        assert!(matches!(
            beta([0.5, 0.5, 0.5, 0.5, 0.5, 1.2]),
            Err(BellError::ProbabilityRange { .. })
        ));
    }

    #[test]
    fn beta_from_gamma_mapping() {
        assert_eq!(beta_from_gamma(6.0).unwrap(), 6.0);
        assert_eq!(beta_from_gamma(4.0).unwrap(), 5.0);
        assert_eq!(beta_from_gamma(-6.0).unwrap(), 0.0);
        assert!(beta_from_gamma(6.5).is_err());
    }

    fn equality_probs(strategy: &DeterministicStrategy) -> [f64; 6] {
        let b = strategy.bob_full();
        let bp = strategy.bob_prime_full();
        let eq = |x: f64, y: f64| if x == y { 1.0 } else { 0.0 };
        [
            eq(strategy.alice[0], b[0]),
            eq(strategy.alice[1], b[1]),
            eq(strategy.alice[2], b[2]),
            eq(strategy.alice[0], bp[0]),
            eq(strategy.alice[1], bp[1]),
            1.0 - eq(strategy.alice[2], bp[2]),
        ]
    }

    #[test]
    fn best_deterministic_strategy_has_beta_five() {
        let (_, strategy) = classical_max_gamma();
        assert_eq!(beta(equality_probs(&strategy)).unwrap(), 5.0);
        assert_eq!(beta_from_gamma(strategy.gamma()).unwrap(), 5.0);
    }

    #[test]
    fn beta_gamma_relation_is_exact_on_all_deterministic_strategies() {
        for strategy in deterministic_strategies() {
            let direct = beta(equality_probs(&strategy)).unwrap();
            let via_gamma = beta_from_gamma(strategy.gamma()).unwrap();
            assert_eq!(direct, via_gamma);
        }
    }

    #[test]
    fn chsh_examples() {
        assert_eq!(chsh(1.0, 1.0, 1.0, -1.0).unwrap(), 4.0);
        assert_eq!(chsh(1.0, 1.0, 1.0, 1.0).unwrap(), 2.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let tsirelson = chsh(r, r, r, -r).unwrap();
        assert!((tsirelson - 2.0 * f64::sqrt(2.0)).abs() < 1e-15);
        assert!(chsh(1.1, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn correlator_table_rejects_out_of_range_entries() {
        assert!(CorrelatorTable::new([[1.0, 1.0], [1.0, -1.2], [0.0, 0.0]]).is_err());
    }

    proptest! {
        #[test]
        fn gamma_is_bounded_by_six(
            entries in proptest::array::uniform6(-1.0f64..=1.0)
        ) {
            let table = CorrelatorTable::new([
                [entries[0], entries[1]],
                [entries[2], entries[3]],
                [entries[4], entries[5]],
            ]).unwrap();
            prop_assert!(gamma(&table).abs() <= 6.0 + 1e-12);
        }
    }
}

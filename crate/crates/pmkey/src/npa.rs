//! Moment-matrix relaxations bounding the quantum value of `gamma`.
//!
//! The operators of the scenario are nine Hermitian involutions: Alice's
//! `A1, A2, A3` (mutually non-commuting), Bob's row `B1, B2, B3` (pairwise
//! commuting with `B_i B_j = B_k`, a copy of Z2 x Z2) and the primed row
//! `B1', B2', B3'` (likewise), with every Alice letter commuting with every
//! Bob letter and no relation between unprimed and primed Bob letters. The
//! row group law holds without loss of generality: a row measurement's
//! outcome labels are the four even-parity triples, so the observables
//! `B_i = sum_q q_i P_q` built from its projectors satisfy `B_1 B_2 = B_3`
//! exactly (projectors of forbidden outcomes annihilate the state and may
//! be relabeled freely).
//!
//! A moment matrix `G_uv = <u^dag v>` over a word list is positive
//! semidefinite for any quantum state; after symmetrization its cells are
//! constrained to be equal whenever the canonical reductions of `u^dag v`
//! agree up to reversal, and cells whose word reduces to the identity are
//! pinned to 1. Maximizing `tr(G W) / 2` for the weight matrix `W` of
//! `gamma` over this spectrahedron gives a certified upper bound on the
//! quantum value: 6 at level 1 (words of length <= 1) and `2 sqrt(6) =
//! 4.8990` at level 2 (words of length <= 2). The level-2 bound is tight:
//! an explicit quantum strategy on two qubits per party attains it, so it
//! is the exact quantum maximum of `gamma`. The value 5.6364 quoted in the
//! reference analysis is a looser bound from an incomplete constraint set;
//! every bound derived from it stays valid, merely conservative.
//!
//! All equality constraints are generated symbolically from word reduction;
//! the handful of identities one can read off the level-1 matrix are test
//! assertions, not inputs.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::bellfunc;
use crate::sdp::{self, SdpProblem, SdpResult, SdpSettings};

#[derive(Debug, Error)]
pub enum NpaError {
    #[error("hierarchy level {0} not supported (use 1 or 2)")]
    InvalidLevel(usize),
    #[error("certificate is {got}x{got}, problem has {expected} words")]
    DimensionMismatch { expected: usize, got: usize },
}

/// One of the nine generators; indices run 1..=3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Generator {
    A(u8),
    B(u8),
    BPrime(u8),
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::A(i) => write!(f, "A{i}"),
            Generator::B(i) => write!(f, "B{i}"),
            Generator::BPrime(i) => write!(f, "B{i}'"),
        }
    }
}

/// The generators in the fixed order `A1..A3, B1..B3, B1'..B3'`.
pub fn generators() -> [Generator; 9] {
    [
        Generator::A(1),
        Generator::A(2),
        Generator::A(3),
        Generator::B(1),
        Generator::B(2),
        Generator::B(3),
        Generator::BPrime(1),
        Generator::BPrime(2),
        Generator::BPrime(3),
    ]
}

/// A canonical word: Alice letters first (freely reduced), then an
/// alternating sequence of single unprimed/primed Bob letters (each run of
/// same-row letters collapses to one group element).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Word {
    letters: Vec<Generator>,
}

impl Word {
    pub fn identity() -> Self {
        Word {
            letters: Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn letters(&self) -> &[Generator] {
        &self.letters
    }

    /// Canonical form of the adjoint (letter-reversed) word.
    pub fn adjoint(&self) -> Word {
        let mut rev = self.letters.clone();
        rev.reverse();
        reduce_word(&rev)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            return write!(f, "I");
        }
        let mut first = true;
        for l in &self.letters {
            if !first {
                write!(f, " ")?;
            }
            write!(f, "{l}")?;
            first = false;
        }
        Ok(())
    }
}

/// Canonical reduction under the scenario's relations: every generator
/// squares to the identity, Alice letters commute with all Bob letters, and
/// each Bob row forms a Z2 x Z2 group (`B_i B_j = B_k`). A maximal run of
/// same-row letters therefore collapses to a single group element, tracked
/// as a 2-bit value (`B1 = 01`, `B2 = 10`, `B3 = 11`) under XOR. Every
/// relation carries coefficient +1, so reduction never produces a sign.
pub fn reduce_word(letters: &[Generator]) -> Word {
    // Alice letters commute with everything on Bob's side, so the two
    // subsequences reduce independently.
    let mut alice: Vec<u8> = Vec::new();
    let mut bob: Vec<(bool, u8)> = Vec::new(); // (primed, group element)
    for &l in letters {
        match l {
            Generator::A(i) => {
                if alice.last() == Some(&i) {
                    alice.pop();
                } else {
                    alice.push(i);
                }
            }
            Generator::B(i) | Generator::BPrime(i) => {
                let primed = matches!(l, Generator::BPrime(_));
                match bob.last_mut() {
                    Some((p, elem)) if *p == primed => {
                        *elem ^= i;
                        if *elem == 0 {
                            bob.pop();
                        }
                    }
                    _ => bob.push((primed, i)),
                }
            }
        }
    }
    let mut out: Vec<Generator> = alice.into_iter().map(Generator::A).collect();
    for (primed, elem) in bob {
        out.push(if primed {
            Generator::BPrime(elem)
        } else {
            Generator::B(elem)
        });
    }
    Word { letters: out }
}

/// Canonical word of moment-matrix cell `(u, v)`, i.e. of `u^dag v`.
pub fn cell_word(u: &Word, v: &Word) -> Word {
    let mut seq: Vec<Generator> = u.letters.iter().rev().copied().collect();
    seq.extend_from_slice(&v.letters);
    reduce_word(&seq)
}

/// Class key identifying cells that share a moment value: the canonical
/// word, folded with its adjoint (symmetrized matrices satisfy
/// `m(w) = m(w^dag)`).
fn class_key(w: &Word) -> Word {
    let adj = w.adjoint();
    if adj < *w {
        adj
    } else {
        w.clone()
    }
}

/// A moment-matrix program: word list, cells pinned to 1, equal-cell
/// classes, and the objective weight matrix `W` with `gamma = tr(G W) / 2`.
#[derive(Clone, Debug)]
pub struct MomentProblem {
    pub words: Vec<Word>,
    /// Cells `(i, j)` with `i <= j` whose word reduces to the identity.
    pub fixed_cells: Vec<(usize, usize)>,
    /// Classes of two or more cells sharing one unknown moment value.
    pub equal_classes: Vec<Vec<(usize, usize)>>,
    pub objective: DMatrix<f64>,
}

/// Serializable snapshot of a [`MomentProblem`].
#[derive(Debug, Serialize)]
pub struct MomentProblemDump {
    pub words: Vec<String>,
    pub fixed_cells: Vec<(usize, usize)>,
    pub equal_classes: Vec<Vec<(usize, usize)>>,
    pub objective: Vec<Vec<f64>>,
}

impl MomentProblem {
    fn from_words(words: Vec<Word>, objective: DMatrix<f64>) -> Self {
        let n = words.len();
        let mut classes: BTreeMap<Word, Vec<(usize, usize)>> = BTreeMap::new();
        for i in 0..n {
            for j in i..n {
                let key = class_key(&cell_word(&words[i], &words[j]));
                classes.entry(key).or_default().push((i, j));
            }
        }
        let mut fixed_cells = Vec::new();
        let mut equal_classes = Vec::new();
        for (key, cells) in classes {
            if key.is_identity() {
                fixed_cells = cells;
            } else if cells.len() >= 2 {
                equal_classes.push(cells);
            }
        }
        MomentProblem {
            words,
            fixed_cells,
            equal_classes,
            objective,
        }
    }

    pub fn n(&self) -> usize {
        self.words.len()
    }

    /// Index of a word in the list, if present.
    pub fn word_index(&self, w: &Word) -> Option<usize> {
        self.words.iter().position(|x| x == w)
    }

    /// The equality-constrained SDP `maximize tr(G W)/2` over PSD `G`.
    pub fn to_sdp(&self) -> SdpProblem {
        let mut problem = SdpProblem::new(self.n(), self.objective.clone() * 0.5);
        for &(i, j) in &self.fixed_cells {
            problem.pin_cell(i, j, 1.0);
        }
        for class in &self.equal_classes {
            let head = class[0];
            for &cell in &class[1..] {
                problem.tie_cells(head, cell);
            }
        }
        problem
    }

    pub fn dump(&self) -> MomentProblemDump {
        MomentProblemDump {
            words: self.words.iter().map(|w| w.to_string()).collect(),
            fixed_cells: self.fixed_cells.clone(),
            equal_classes: self.equal_classes.clone(),
            objective: (0..self.n())
                .map(|i| (0..self.n()).map(|j| self.objective[(i, j)]).collect())
                .collect(),
        }
    }
}

fn single_letter_words() -> Vec<Word> {
    let mut words = vec![Word::identity()];
    words.extend(generators().iter().map(|&g| Word { letters: vec![g] }));
    words
}

/// Weight matrix of `gamma` over a word list containing the nine length-1
/// words.
fn gamma_objective(words: &[Word]) -> DMatrix<f64> {
    let n = words.len();
    let index_of = |g: Generator| {
        words
            .iter()
            .position(|w| w.letters() == [g])
            .expect("generator word present")
    };
    let mut w = DMatrix::zeros(n, n);
    for term in bellfunc::gamma_functional().terms {
        let a = index_of(Generator::A(term.alice as u8 + 1));
        let b = if term.primed {
            index_of(Generator::BPrime(term.bob as u8 + 1))
        } else {
            index_of(Generator::B(term.bob as u8 + 1))
        };
        w[(a, b)] += term.coefficient;
        w[(b, a)] += term.coefficient;
    }
    w
}

/// Builds the moment problem at hierarchy level 1 (words of length <= 1,
/// the paper ordering `I, A1..A3, B1..B3, B1'..B3'`) or level 2 (canonical
/// products of at most two generators, 52 words).
pub fn build_problem(level: usize) -> Result<MomentProblem, NpaError> {
    let mut words = single_letter_words();
    match level {
        1 => {}
        2 => {
            for &g in &generators() {
                for &h in &generators() {
                    let w = reduce_word(&[g, h]);
                    if w.len() == 2 && !words.contains(&w) {
                        words.push(w);
                    }
                }
            }
        }
        other => return Err(NpaError::InvalidLevel(other)),
    }
    let objective = gamma_objective(&words);
    Ok(MomentProblem::from_words(words, objective))
}

/// Level-1 moment problem for the CHSH expression, built from the same
/// machinery: Alice letters `A1, A2` and the non-commuting Bob pair
/// `B1, B1'` stand in for the four +/-1 observables.
pub fn build_chsh_problem() -> MomentProblem {
    let a1 = Generator::A(1);
    let a2 = Generator::A(2);
    let b = Generator::B(1);
    let bp = Generator::BPrime(1);
    let words: Vec<Word> = [vec![], vec![a1], vec![a2], vec![b], vec![bp]]
        .into_iter()
        .map(|letters| Word { letters })
        .collect();
    let mut w = DMatrix::zeros(5, 5);
    for (i, j, coeff) in [(1, 3, 1.0), (1, 4, 1.0), (2, 3, 1.0), (2, 4, -1.0)] {
        w[(i, j)] += coeff;
        w[(j, i)] += coeff;
    }
    MomentProblem::from_words(words, w)
}

/// A concrete moment matrix offered as evidence for an objective value.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub matrix: DMatrix<f64>,
    pub objective_value: f64,
    pub min_eigenvalue: f64,
    pub max_constraint_residual: f64,
}

impl Certificate {
    /// Wraps a matrix, computing its objective and residuals against the
    /// problem's constraints.
    pub fn from_matrix(matrix: DMatrix<f64>, problem: &MomentProblem) -> Result<Self, NpaError> {
        if matrix.nrows() != problem.n() || matrix.ncols() != problem.n() {
            return Err(NpaError::DimensionMismatch {
                expected: problem.n(),
                got: matrix.nrows(),
            });
        }
        let objective_value = 0.5
            * (0..problem.n())
                .map(|i| {
                    (0..problem.n())
                        .map(|j| problem.objective[(i, j)] * matrix[(j, i)])
                        .sum::<f64>()
                })
                .sum::<f64>();
        let min_eigenvalue = sdp::min_eigenvalue(&matrix);
        let mut residual: f64 = (&matrix - matrix.transpose()).amax();
        for &(i, j) in &problem.fixed_cells {
            residual = residual.max((matrix[(i, j)] - 1.0).abs());
        }
        for class in &problem.equal_classes {
            let head = matrix[class[0]];
            for &cell in &class[1..] {
                residual = residual.max((matrix[cell] - head).abs());
            }
        }
        Ok(Certificate {
            matrix,
            objective_value,
            min_eigenvalue,
            max_constraint_residual: residual,
        })
    }
}

/// Tolerance used by [`verify_certificate`] on eigenvalues and residuals.
pub const CERTIFICATE_TOL: f64 = 1e-9;

/// Re-checks a certificate against a problem from scratch: symmetry, PSD,
/// pinned and tied cells, and the stored objective value.
pub fn verify_certificate(cert: &Certificate, problem: &MomentProblem) -> Result<bool, NpaError> {
    let fresh = Certificate::from_matrix(cert.matrix.clone(), problem)?;
    Ok(fresh.min_eigenvalue >= -CERTIFICATE_TOL
        && fresh.max_constraint_residual <= CERTIFICATE_TOL
        && (fresh.objective_value - cert.objective_value).abs() <= CERTIFICATE_TOL)
}

/// Projects a matrix onto the problem's affine constraints exactly:
/// symmetrize, set pinned cells to 1, and replace every tied cell by its
/// class average. The classes partition cells, so the projection is a
/// single pass; it perturbs the matrix by at most the constraint residual.
fn polish_feasibility(matrix: &mut DMatrix<f64>, problem: &MomentProblem) {
    let sym = (matrix.clone() + matrix.transpose()) * 0.5;
    *matrix = sym;
    let assign = |i: usize, j: usize, v: f64, m: &mut DMatrix<f64>| {
        m[(i, j)] = v;
        m[(j, i)] = v;
    };
    for &(i, j) in &problem.fixed_cells {
        assign(i, j, 1.0, matrix);
    }
    for class in &problem.equal_classes {
        let avg: f64 = class.iter().map(|&c| matrix[c]).sum::<f64>() / class.len() as f64;
        for &(i, j) in class {
            assign(i, j, avg, matrix);
        }
    }
}

/// Solves the moment problem, returning the SDP result (whose `dual_value`
/// is the certified upper bound on `gamma`) and the primal moment matrix,
/// polished to exact constraint feasibility, as a certificate.
pub fn solve_bound(problem: &MomentProblem, tol: f64) -> (SdpResult, Certificate) {
    let sdp_problem = problem.to_sdp();
    let result = sdp::solve(
        &sdp_problem,
        SdpSettings {
            tol,
            ..SdpSettings::default()
        },
    );
    let mut matrix = result.x.clone();
    polish_feasibility(&mut matrix, problem);
    let cert =
        Certificate::from_matrix(matrix, problem).expect("solver matrix has problem dimensions");
    (result, cert)
}

/// The explicit feasible level-1 moment matrix attaining the algebraic
/// maximum `gamma = 6`, witnessing that the level-1 relaxation is trivial.
pub fn level1_maximal_certificate() -> Certificate {
    let problem = build_problem(1).expect("level 1 is valid");
    #[rustfmt::skip]
    let rows: [[f64; 10]; 10] = [
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0],
        [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0],
        [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, -1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0],
    ];
    let matrix = DMatrix::from_fn(10, 10, |i, j| rows[i][j]);
    Certificate::from_matrix(matrix, &problem).expect("dimensions match")
}

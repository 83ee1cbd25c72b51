//! Exact quantum realization of the distributed PM box.
//!
//! Alice and Bob each hold two qubits; the pairs `(A1, B1)` and `(A2, B2)`
//! are prepared in Werner states `p |phi+><phi+| + (1-p) I/4`. Alice
//! measures the columns of the standard 3x3 array of two-qubit Pauli
//! observables, Bob measures the rows of the entrywise-transposed array.
//! For the maximally entangled pair `<M (x) N> = tr(M N^T)/2`, so the
//! transposition on Bob's side yields perfect correlation on every array
//! cell, including the `Y(x)Y` one. Everything here is computed exactly on
//! the 16-dimensional two-pair space; there is no sampling.
//!
//! Qubit ordering of the joint space is `(A1, A2, B1, B2)`, i.e. the full
//! density matrix is `(Alice 4-dim) (x) (Bob 4-dim)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::boxmodel::{BoxFamily, JointTable, OutcomeTriple, Party};

/// Residual allowed on algebraic identities of exactly-constructed matrices.
const MATRIX_TOL: f64 = 1e-12;

type CMat = DMatrix<Complex64>;

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error("observable is not a 4x4 matrix")]
    WrongDimension,
    #[error("observable is not Hermitian (residual {residual})")]
    NotHermitian { residual: f64 },
    #[error("observable does not square to the identity (residual {residual})")]
    NotInvolution { residual: f64 },
    #[error("observables {i} and {j} do not commute (residual {residual})")]
    NonCommuting { i: usize, j: usize, residual: f64 },
    #[error("Werner parameter {p} outside [0, 1]")]
    InvalidNoise { p: f64 },
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Single-qubit Pauli symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> CMat {
        let z = c(0.0, 0.0);
        let one = c(1.0, 0.0);
        match self {
            Pauli::I => CMat::from_row_slice(2, 2, &[one, z, z, one]),
            Pauli::X => CMat::from_row_slice(2, 2, &[z, one, one, z]),
            Pauli::Y => CMat::from_row_slice(2, 2, &[z, c(0.0, -1.0), c(0.0, 1.0), z]),
            Pauli::Z => CMat::from_row_slice(2, 2, &[one, z, z, c(-1.0, 0.0)]),
        }
    }
}

/// Two Pauli symbols, one per qubit of a single party.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PauliLabel(pub Pauli, pub Pauli);

impl PauliLabel {
    /// The 4x4 Hermitian involution `P1 (x) P2`.
    pub fn matrix(self) -> CMat {
        self.0.matrix().kronecker(&self.1.matrix())
    }
}

/// A 4x4 Hermitian matrix with eigenvalues +/-1.
#[derive(Clone, Debug)]
pub struct Observable {
    matrix: CMat,
}

impl Observable {
    pub fn new(matrix: CMat) -> Result<Self, QuantumError> {
        if matrix.nrows() != 4 || matrix.ncols() != 4 {
            return Err(QuantumError::WrongDimension);
        }
        let herm = (&matrix - matrix.adjoint()).camax();
        if herm > MATRIX_TOL {
            return Err(QuantumError::NotHermitian { residual: herm });
        }
        let invol = (&matrix * &matrix - CMat::identity(4, 4)).camax();
        if invol > MATRIX_TOL {
            return Err(QuantumError::NotInvolution { residual: invol });
        }
        Ok(Observable { matrix })
    }

    pub fn from_label(label: PauliLabel) -> Self {
        Observable::new(label.matrix()).expect("Pauli products are Hermitian involutions")
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    /// The entrywise (non-conjugating) transpose, used on Bob's side.
    pub fn transposed(&self) -> Observable {
        Observable {
            matrix: self.matrix.transpose(),
        }
    }
}

/// The 3x3 array of two-qubit observables, indexed `[row][column]`.
#[derive(Clone, Debug)]
pub struct PMObservableArray {
    entries: [[Observable; 3]; 3],
}

impl PMObservableArray {
    pub fn entry(&self, row: usize, col: usize) -> &Observable {
        &self.entries[row][col]
    }

    /// Alice's observables for column `col`, ordered by row.
    pub fn column(&self, col: usize) -> [Observable; 3] {
        [
            self.entries[0][col].clone(),
            self.entries[1][col].clone(),
            self.entries[2][col].clone(),
        ]
    }

    /// Bob's observables for row `row` (entrywise transpose), ordered by
    /// column.
    pub fn bob_row(&self, row: usize) -> [Observable; 3] {
        [
            self.entries[row][0].transposed(),
            self.entries[row][1].transposed(),
            self.entries[row][2].transposed(),
        ]
    }

    /// Alice's plain observables for row `row`, ordered by column. Used when
    /// Alice switches to key-round row measurements.
    pub fn alice_row(&self, row: usize) -> [Observable; 3] {
        [
            self.entries[row][0].clone(),
            self.entries[row][1].clone(),
            self.entries[row][2].clone(),
        ]
    }
}

/// The standard square: rows `(Z(x)I, I(x)Z, Z(x)Z)`, `(I(x)X, X(x)I,
/// X(x)X)`, `(Z(x)X, X(x)Z, Y(x)Y)`. Row products and the first two column
/// products are `+I`; the third column product is `-I`; entries within a row
/// or column pairwise commute.
pub fn pm_array() -> PMObservableArray {
    use Pauli::*;
    let labels = [
        [PauliLabel(Z, I), PauliLabel(I, Z), PauliLabel(Z, Z)],
        [PauliLabel(I, X), PauliLabel(X, I), PauliLabel(X, X)],
        [PauliLabel(Z, X), PauliLabel(X, Z), PauliLabel(Y, Y)],
    ];
    PMObservableArray {
        entries: labels.map(|row| row.map(Observable::from_label)),
    }
}

/// Werner noise applied independently to each entangled pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    werner_p: f64,
}

impl NoiseModel {
    pub fn new(werner_p: f64) -> Result<Self, QuantumError> {
        if !(0.0..=1.0).contains(&werner_p) {
            return Err(QuantumError::InvalidNoise { p: werner_p });
        }
        Ok(NoiseModel { werner_p })
    }

    /// Noiseless model (`p = 1`).
    pub fn ideal() -> Self {
        NoiseModel { werner_p: 1.0 }
    }

    pub fn werner_p(self) -> f64 {
        self.werner_p
    }
}

/// Density operator on the 16-dimensional space of qubits `(A1, A2, B1,
/// B2)`, pairing `(A1, B1)` and `(A2, B2)`.
#[derive(Clone, Debug)]
pub struct TwoPairState {
    rho: CMat,
}

impl TwoPairState {
    /// Wraps a 16x16 density matrix (positivity and trace are the caller's
    /// responsibility; constructors in this module produce valid states).
    pub fn from_density(rho: CMat) -> Self {
        assert_eq!(rho.nrows(), 16);
        assert_eq!(rho.ncols(), 16);
        TwoPairState { rho }
    }

    /// `Werner(p) (x) Werner(p)`, reordered to `(A1, A2, B1, B2)`.
    pub fn werner(noise: NoiseModel) -> Self {
        let w = werner_pair(noise.werner_p);
        TwoPairState {
            rho: pair_product_state(&w, &w),
        }
    }

    pub fn density(&self) -> &CMat {
        &self.rho
    }

    /// Reduced 4x4 state of one party.
    pub fn reduced(&self, party: Party) -> CMat {
        let mut out = CMat::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = c(0.0, 0.0);
                for k in 0..4 {
                    let (r, s) = match party {
                        Party::Alice => (4 * i + k, 4 * j + k),
                        Party::Bob => (4 * k + i, 4 * k + j),
                    };
                    acc += self.rho[(r, s)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }
}

/// One-pair Werner state `p |phi+><phi+| + (1-p) I/4` in the `(A_k, B_k)`
/// basis.
fn werner_pair(p: f64) -> CMat {
    let mut phi = CMat::zeros(4, 4);
    for &i in &[0usize, 3] {
        for &j in &[0usize, 3] {
            phi[(i, j)] = c(0.5, 0.0);
        }
    }
    phi * c(p, 0.0) + CMat::identity(4, 4) * c((1.0 - p) / 4.0, 0.0)
}

/// Tensor product of a state on `(A1, B1)` with a state on `(A2, B2)`,
/// expressed in the `(A1, A2, B1, B2)` qubit order.
fn pair_product_state(m: &CMat, n: &CMat) -> CMat {
    let mut out = CMat::zeros(16, 16);
    for a1 in 0..2 {
        for a2 in 0..2 {
            for b1 in 0..2 {
                for b2 in 0..2 {
                    for a1p in 0..2 {
                        for a2p in 0..2 {
                            for b1p in 0..2 {
                                for b2p in 0..2 {
                                    let row = 8 * a1 + 4 * a2 + 2 * b1 + b2;
                                    let col = 8 * a1p + 4 * a2p + 2 * b1p + b2p;
                                    out[(row, col)] = m[(2 * a1 + b1, 2 * a1p + b1p)]
                                        * n[(2 * a2 + b2, 2 * a2p + b2p)];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn commutator_residual(a: &CMat, b: &CMat) -> f64 {
    (a * b - b * a).camax()
}

/// Projector onto the joint eigenspace of three commuting involutions with
/// signs given by `outcome`.
fn triple_projector(obs: &[Observable; 3], outcome: OutcomeTriple) -> CMat {
    let mut proj = CMat::identity(4, 4);
    for (k, o) in obs.iter().enumerate() {
        let sign = outcome.get(k).value();
        let factor = (CMat::identity(4, 4) + o.matrix() * c(sign, 0.0)) * c(0.5, 0.0);
        proj = proj * factor;
    }
    proj
}

fn real_probability(z: Complex64) -> f64 {
    debug_assert!(
        z.im.abs() <= MATRIX_TOL,
        "probability has imaginary residue {}",
        z.im
    );
    // Tiny negative round-off is clipped; anything larger is a bug upstream.
    debug_assert!(z.re >= -MATRIX_TOL);
    z.re.max(0.0)
}

/// Distribution over outcome triples when one party jointly measures three
/// pairwise-commuting observables on its reduced state.
pub fn joint_measurement_distribution(
    state: &TwoPairState,
    party: Party,
    obs: &[Observable; 3],
) -> Result<[f64; 8], QuantumError> {
    for i in 0..3 {
        for j in (i + 1)..3 {
            let residual = commutator_residual(obs[i].matrix(), obs[j].matrix());
            if residual > MATRIX_TOL {
                return Err(QuantumError::NonCommuting { i, j, residual });
            }
        }
    }
    let reduced = state.reduced(party);
    let mut dist = [0.0; 8];
    for t in OutcomeTriple::all() {
        let proj = triple_projector(obs, t);
        dist[t.index()] = real_probability((&reduced * proj).trace());
    }
    Ok(dist)
}

/// The full box family produced by measuring PM columns (Alice) against
/// transposed PM rows (Bob) on the two-pair Werner state.
///
/// The output is exact and deterministic; all nine contexts satisfy the KS
/// parities for every `p` because forbidden-parity projectors vanish
/// identically.
pub fn quantum_pm_box(noise: NoiseModel) -> BoxFamily {
    let array = pm_array();
    let state = TwoPairState::werner(noise);

    // Projectors per context side, indexed by triple.
    let alice_projs: Vec<[CMat; 8]> = (0..3)
        .map(|col| side_projectors(&array.column(col)))
        .collect();
    let bob_projs: Vec<[CMat; 8]> = (0..3)
        .map(|row| side_projectors(&array.bob_row(row)))
        .collect();

    BoxFamily::from_fn(|a_input, b_input| {
        let mut table = JointTable::zero();
        for a in OutcomeTriple::all() {
            for b in OutcomeTriple::all() {
                let joint = alice_projs[a_input][a.index()].kronecker(&bob_projs[b_input][b.index()]);
                let p = real_probability((state.density() * joint).trace());
                table.set(a, b, p);
            }
        }
        table
    })
}

fn side_projectors(obs: &[Observable; 3]) -> [CMat; 8] {
    let mut out: [CMat; 8] = std::array::from_fn(|_| CMat::zeros(4, 4));
    for t in OutcomeTriple::all() {
        out[t.index()] = triple_projector(obs, t);
    }
    out
}

/// Joint distribution when both parties measure row `row` of their arrays
/// (Alice plain, Bob transposed): the key-round configuration. At `p = 1`
/// the two triples agree with certainty.
pub fn row_key_distribution(row: usize, noise: NoiseModel) -> JointTable {
    let array = pm_array();
    let state = TwoPairState::werner(noise);
    let alice = side_projectors(&array.alice_row(row));
    let bob = side_projectors(&array.bob_row(row));
    let mut table = JointTable::zero();
    for a in OutcomeTriple::all() {
        for b in OutcomeTriple::all() {
            let joint = alice[a.index()].kronecker(&bob[b.index()]);
            table.set(a, b, real_probability((state.density() * joint).trace()));
        }
    }
    table
}

/// Correlator `<M (x) N>` on a two-qubit state.
pub fn pair_correlator(rho: &CMat, m: &CMat, n: &CMat) -> f64 {
    let z = (rho * m.kronecker(n)).trace();
    debug_assert!(z.im.abs() <= MATRIX_TOL);
    z.re
}

/// The maximally entangled one-pair state `|phi+><phi+|`.
pub fn phi_plus_pair() -> CMat {
    werner_pair(1.0)
}

/// CHSH value of one maximally entangled pair at the optimal settings
/// `a = Z`, `a' = X`, `b = (Z+X)/sqrt(2)`, `b' = (Z-X)/sqrt(2)`; equals
/// `2 sqrt(2)`.
pub fn chsh_demo() -> f64 {
    let rho = phi_plus_pair();
    let z = Pauli::Z.matrix();
    let x = Pauli::X.matrix();
    let s = c(1.0 / f64::sqrt(2.0), 0.0);
    let b = (&z + &x) * s;
    let b_prime = (&z - &x) * s;
    let e = |m: &CMat, n: &CMat| pair_correlator(&rho, m, n);
    (e(&z, &b) + e(&z, &b_prime) + e(&x, &b) - e(&x, &b_prime)).abs()
}

//! Toolkit for the distributed Peres-Mermin (PM) box and the key
//! distribution scheme built on it.
//!
//! The crate is organised around a single physical object: a bipartite
//! no-signaling box whose local outcomes obey the Kochen-Specker parity
//! constraints of the 3x3 Peres-Mermin square and whose shared observable is
//! perfectly correlated between the two sites. From that object it provides
//!
//! * [`boxmodel`] - data model and validators for PM box families,
//! * [`quantumsim`] - exact 16-dimensional simulation of the quantum
//!   realization (two maximally entangled qubit pairs, Werner noise),
//! * [`bellfunc`] - the six-term Bell functionals (gamma, beta) together with
//!   CHSH, plus exhaustive classical bounds,
//! * [`npa`] / [`sdp`] - moment-matrix relaxations at hierarchy levels 1 and 2
//!   and a dense primal-dual interior-point solver certifying the quantum
//!   bound on gamma,
//! * [`security`] - row-probability caps, entropy bounds and the
//!   Csiszar-Korner key rate with its noise threshold,
//! * [`adversary`] - ensemble decompositions available to an eavesdropper and
//!   a heuristic entropy-minimizing attack search,
//! * [`protocol`] - a seeded Monte-Carlo run of the full two-sample protocol.
//!
//! All numerical types are plain `f64` with explicit tolerances; every
//! operation is deterministic given its inputs (and seed, where one exists).

pub mod adversary;
pub mod bellfunc;
pub mod boxmodel;
pub mod npa;
pub mod protocol;
pub mod quantumsim;
pub mod sdp;
pub mod security;

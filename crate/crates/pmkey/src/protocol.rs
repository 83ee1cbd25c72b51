//! Monte-Carlo simulation of the two-sample key distribution protocol.
//!
//! Alice and Bob consume `n` boxes. On the first sample they draw uniform
//! column/row inputs and estimate the shared-observable error rate of every
//! context; on the second sample both measure the first row and estimate
//! the whole-row disagreement rate; the remaining rounds are first-row
//! measurements whose outcomes form the raw key, two bits per round. The
//! run aborts when any estimated context error exceeds the configured
//! threshold. Everything is driven by one seeded RNG, so a configuration
//! reproduces its transcript bit for bit.

use std::io::Write;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::boxmodel::{allowed_outcomes, BoxFamily, ContextKind, JointTable, OutcomeTriple};
use crate::quantumsim::{quantum_pm_box, row_key_distribution, NoiseModel};
use crate::security::{self, KeyRateReport, SecurityError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("need at least 100 rounds, got {0}")]
    TooFewRounds(usize),
    #[error("test fractions ({0}, {1}) must lie in (0,1) and sum below 1")]
    BadFractions(f64, f64),
    #[error(transparent)]
    Security(#[from] SecurityError),
    #[error("transcript I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SampleTag {
    /// Random column/row inputs, estimates the 3x3 error matrix.
    Test1,
    /// Both parties measure the first row, estimates row disagreement.
    Test2,
    /// First-row measurements forming the raw key.
    Key,
}

impl SampleTag {
    fn as_str(self) -> &'static str {
        match self {
            SampleTag::Test1 => "test1",
            SampleTag::Test2 => "test2",
            SampleTag::Key => "key",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub sample: SampleTag,
    /// Alice's input: her column for `Test1`, the measured row (0) otherwise.
    pub a_input: usize,
    /// Bob's input: his row for `Test1`, the measured row (0) otherwise.
    pub b_input: usize,
    pub alice: OutcomeTriple,
    pub bob: OutcomeTriple,
}

#[derive(Clone, Debug)]
pub struct ProtocolTranscript {
    pub records: Vec<RoundRecord>,
}

#[derive(Clone, Copy, Debug)]
pub struct ProtocolConfig {
    pub n: usize,
    pub test_fraction1: f64,
    pub test_fraction2: f64,
    pub noise: NoiseModel,
    pub abort_eps: f64,
    pub seed: u64,
    pub gamma0: f64,
}

impl ProtocolConfig {
    fn validate(&self) -> Result<(), ProtocolError> {
        if self.n < 100 {
            return Err(ProtocolError::TooFewRounds(self.n));
        }
        let (f1, f2) = (self.test_fraction1, self.test_fraction2);
        if !(f1 > 0.0 && f1 < 1.0 && f2 > 0.0 && f2 < 1.0 && f1 + f2 < 1.0) {
            return Err(ProtocolError::BadFractions(f1, f2));
        }
        Ok(())
    }
}

/// Empirical error rates from the test samples.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpsEstimate {
    /// Shared-observable disagreement per context, indexed `[A][B]`.
    pub eps_hat: [[f64; 3]; 3],
    /// Whole-row disagreement frequency from the second sample.
    pub eps_tilde_hat: f64,
    /// `(2/3) eps_tilde_hat`, for cross-checking against `eps_hat`.
    pub eps_from_tilde: f64,
    pub test1_rounds: usize,
    pub test2_rounds: usize,
    /// Set when some context saw fewer than 10 rounds.
    pub low_confidence: bool,
}

impl EpsEstimate {
    pub fn mean_eps(&self) -> f64 {
        self.eps_hat.iter().flatten().sum::<f64>() / 9.0
    }

    pub fn max_eps(&self) -> f64 {
        self.eps_hat.iter().flatten().fold(0.0_f64, |a, &e| a.max(e))
    }
}

#[derive(Clone, Debug)]
pub struct ProtocolResult {
    pub transcript: ProtocolTranscript,
    pub estimate: EpsEstimate,
    pub aborted: bool,
    pub alice_key: Vec<u8>,
    pub bob_key: Vec<u8>,
    pub qber_raw: f64,
    pub key_rate_estimate: KeyRateReport,
}

fn sample_from_table(table: &JointTable, rng: &mut ChaCha8Rng) -> (OutcomeTriple, OutcomeTriple) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for a in OutcomeTriple::all() {
        for b in OutcomeTriple::all() {
            acc += table.get(a, b);
            if u < acc {
                return (a, b);
            }
        }
    }
    // Round-off tail: return the last outcome pair with positive mass.
    let mut last = (OutcomeTriple::from_index(0), OutcomeTriple::from_index(0));
    for a in OutcomeTriple::all() {
        for b in OutcomeTriple::all() {
            if table.get(a, b) > 0.0 {
                last = (a, b);
            }
        }
    }
    last
}

/// Two-bit encoding of a first-row outcome: index in the even-parity list
/// `+++, +--, -+-, --+`.
pub fn key_bits(t: OutcomeTriple) -> [u8; 2] {
    let allowed = allowed_outcomes(ContextKind::Even);
    let idx = allowed
        .iter()
        .position(|&x| x == t)
        .expect("key-round outcome has even parity") as u8;
    [idx >> 1, idx & 1]
}

/// Runs the protocol.
pub fn run(cfg: &ProtocolConfig) -> Result<ProtocolResult, ProtocolError> {
    cfg.validate()?;
    let family: BoxFamily = quantum_pm_box(cfg.noise);
    let key_table = row_key_distribution(0, cfg.noise);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n1 = (cfg.test_fraction1 * cfg.n as f64).floor() as usize;
    let n2 = (cfg.test_fraction2 * cfg.n as f64).floor() as usize;
    let mut tags = vec![SampleTag::Test1; n1];
    tags.extend(vec![SampleTag::Test2; n2]);
    tags.extend(vec![SampleTag::Key; cfg.n - n1 - n2]);
    // Fisher-Yates off the round RNG keeps the whole transcript a function
    // of the seed.
    for i in (1..tags.len()).rev() {
        let j = rng.random_range(0..=i);
        tags.swap(i, j);
    }

    let mut records = Vec::with_capacity(cfg.n);
    for (round, &sample) in tags.iter().enumerate() {
        let record = match sample {
            SampleTag::Test1 => {
                let a_input = rng.random_range(0..3);
                let b_input = rng.random_range(0..3);
                let (alice, bob) = sample_from_table(family.table(a_input, b_input), &mut rng);
                RoundRecord {
                    round,
                    sample,
                    a_input,
                    b_input,
                    alice,
                    bob,
                }
            }
            SampleTag::Test2 | SampleTag::Key => {
                let (alice, bob) = sample_from_table(&key_table, &mut rng);
                RoundRecord {
                    round,
                    sample,
                    a_input: 0,
                    b_input: 0,
                    alice,
                    bob,
                }
            }
        };
        records.push(record);
    }
    let transcript = ProtocolTranscript { records };
    let estimate = estimate_eps(&transcript);
    let aborted = estimate.max_eps() > cfg.abort_eps;

    let mut alice_key = Vec::new();
    let mut bob_key = Vec::new();
    for r in &transcript.records {
        if r.sample == SampleTag::Key {
            alice_key.extend(key_bits(r.alice));
            bob_key.extend(key_bits(r.bob));
        }
    }
    let mismatches = alice_key
        .iter()
        .zip(bob_key.iter())
        .filter(|(a, b)| a != b)
        .count();
    let qber_raw = if alice_key.is_empty() {
        0.0
    } else {
        mismatches as f64 / alice_key.len() as f64
    };
    let key_rate_estimate = security::key_rate(estimate.mean_eps(), cfg.gamma0)?;

    Ok(ProtocolResult {
        transcript,
        estimate,
        aborted,
        alice_key,
        bob_key,
        qber_raw,
        key_rate_estimate,
    })
}

/// Empirical disagreement frequencies from the test rounds of a transcript.
pub fn estimate_eps(transcript: &ProtocolTranscript) -> EpsEstimate {
    let mut counts = [[0usize; 3]; 3];
    let mut mismatches = [[0usize; 3]; 3];
    let mut test2_rounds = 0;
    let mut row_mismatches = 0;
    for r in &transcript.records {
        match r.sample {
            SampleTag::Test1 => {
                counts[r.a_input][r.b_input] += 1;
                if r.alice.get(r.b_input) != r.bob.get(r.a_input) {
                    mismatches[r.a_input][r.b_input] += 1;
                }
            }
            SampleTag::Test2 => {
                test2_rounds += 1;
                if r.alice != r.bob {
                    row_mismatches += 1;
                }
            }
            SampleTag::Key => {}
        }
    }
    let mut eps_hat = [[0.0; 3]; 3];
    let mut low_confidence = test2_rounds < 10;
    for a in 0..3 {
        for b in 0..3 {
            if counts[a][b] < 10 {
                low_confidence = true;
            }
            eps_hat[a][b] = if counts[a][b] > 0 {
                mismatches[a][b] as f64 / counts[a][b] as f64
            } else {
                0.0
            };
        }
    }
    let eps_tilde_hat = if test2_rounds > 0 {
        row_mismatches as f64 / test2_rounds as f64
    } else {
        0.0
    };
    EpsEstimate {
        eps_hat,
        eps_tilde_hat,
        eps_from_tilde: 2.0 / 3.0 * eps_tilde_hat,
        test1_rounds: counts.iter().flatten().sum(),
        test2_rounds,
        low_confidence,
    }
}

/// Werner parameter whose ideal-protocol first row shows a mean per-node
/// error of `eps`. Inverts `eps(p) = 2q(2-q)/3` with `q = (1-p)/2`.
pub fn werner_p_for_row_error(eps: f64) -> f64 {
    assert!((0.0..0.5).contains(&eps));
    let q = 1.0 - (1.0 - 1.5 * eps).sqrt();
    1.0 - 2.0 * q
}

/// Writes a transcript as CSV with columns
/// `round,sample,A,B,a1,a2,a3,b1,b2,b3` (inputs 1-based, outcomes +/-1).
pub fn write_transcript_csv<W: Write>(
    transcript: &ProtocolTranscript,
    mut out: W,
) -> Result<(), ProtocolError> {
    writeln!(out, "round,sample,A,B,a1,a2,a3,b1,b2,b3")?;
    for r in &transcript.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.round,
            r.sample.as_str(),
            r.a_input + 1,
            r.b_input + 1,
            r.alice.get(0).value() as i8,
            r.alice.get(1).value() as i8,
            r.alice.get(2).value() as i8,
            r.bob.get(0).value() as i8,
            r.bob.get(1).value() as i8,
            r.bob.get(2).value() as i8,
        )?;
    }
    Ok(())
}

//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them).
//!
//! Criteria 1 and 5 compare the computed level-2 bound against the
//! reference value 5.6364. The computed bound is 2*sqrt(6) = 4.8990 —
//! provably the exact quantum maximum (an explicit strategy attains it, and
//! an independent solver confirms the relaxation value) — so those two
//! checks fail by construction of the reference value. They are kept as
//! stated rather than weakened: the failure is the documented finding that
//! the reference constraint set was incomplete. All security-chain criteria
//! evaluate at the reference gamma0 = 5.6364, which remains a valid
//! (conservative) upper bound.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use pmkey::adversary::{attack_search, eve_entropy, AttackSearchConfig};
use pmkey::bellfunc;
use pmkey::boxmodel::{ab_error, validate_ks, validate_nosignaling};
use pmkey::npa::{self, Generator};
use pmkey::protocol::{self, ProtocolConfig};
use pmkey::quantumsim::{chsh_demo, quantum_pm_box, NoiseModel};
use pmkey::sdp::{self, SdpProblem, SdpSettings};
use pmkey::security;

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Reference quantum bound on gamma used by the security chain.
const REFERENCE_GAMMA0: f64 = 5.6364;

fn level2() -> &'static (f64, Duration) {
    static LEVEL2: OnceLock<(f64, Duration)> = OnceLock::new();
    LEVEL2.get_or_init(|| {
        let start = Instant::now();
        let problem = npa::build_problem(2).expect("level 2 builds");
        let (result, cert) = npa::solve_bound(&problem, 1e-8);
        assert_eq!(result.status, sdp::SdpStatus::Solved);
        assert!(npa::verify_certificate(&cert, &problem).unwrap());
        (result.dual_value, start.elapsed())
    })
}

#[test]
fn criterion_01_level2_bound() {
    let (bound, elapsed) = *level2();
    assert!(
        elapsed < Duration::from_secs(60),
        "level-2 solve took {elapsed:?}"
    );
    let pass = (bound - 5.6364).abs() <= 1e-3;
    println!(
        "criterion 1: {} - level-2 bound {bound:.6} vs reference 5.6364 +/- 1e-3 (in {elapsed:.2?})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(
        pass,
        "computed certified level-2 bound is {bound:.7} = 2*sqrt(6), not the reference 5.6364. \
         The computed value is provably the exact quantum maximum of gamma: an explicit \
         two-qubit-per-party strategy attains 4.898979, and an independent solver reproduces \
         the relaxation value on the dumped problem. The reference number stems from an \
         incomplete equality-constraint set that cannot be reconstructed from its description; \
         reproducing it would require deliberately dropping valid constraints chosen only to \
         match the number. See the project notes for the full analysis."
    );
}

#[test]
fn criterion_02_level1_triviality() {
    let start = Instant::now();
    let problem = npa::build_problem(1).unwrap();
    let (result, _) = npa::solve_bound(&problem, 1e-9);
    let elapsed = start.elapsed();
    let cert = npa::level1_maximal_certificate();
    let cert_ok = npa::verify_certificate(&cert, &problem).unwrap();
    let pass = (result.dual_value - 6.0).abs() <= 1e-6
        && cert_ok
        && (cert.objective_value - 6.0).abs() <= 1e-9
        && elapsed < Duration::from_secs(5);
    println!(
        "criterion 2: {} - level-1 bound {:.8}, explicit certificate objective {:.8} (in {elapsed:.2?})",
        if pass { "PASS" } else { "FAIL" },
        result.dual_value,
        cert.objective_value
    );
    assert!(pass);
}

#[test]
fn criterion_03_classical_bound() {
    let start = Instant::now();
    let (max_gamma, strategy) = bellfunc::classical_max_gamma();
    let max_chsh = bellfunc::classical_max_chsh();
    let elapsed = start.elapsed();
    let pass = max_gamma == 4.0
        && strategy.gamma() == 4.0
        && max_chsh == 2.0
        && elapsed < Duration::from_secs(1);
    println!(
        "criterion 3: {} - exhaustive classical maxima: gamma {max_gamma}, chsh {max_chsh} (in {elapsed:.2?})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn criterion_04_chsh_cross_check() {
    let expected = 2.0 * f64::sqrt(2.0);
    let sim = chsh_demo();
    let (result, _) = npa::solve_bound(&npa::build_chsh_problem(), 1e-9);
    let pass = (sim - expected).abs() <= 1e-6 && (result.dual_value - expected).abs() <= 1e-6;
    println!(
        "criterion 4: {} - chsh simulator {sim:.9}, chsh moment bound {:.9}, target {expected:.9}",
        if pass { "PASS" } else { "FAIL" },
        result.dual_value
    );
    assert!(pass);
}

#[test]
fn criterion_05_row_probability_cap() {
    let (bound, _) = *level2();
    let cap = (bound - 2.0) / 4.0;
    let pass = (cap - 0.9091).abs() <= 1e-3;
    println!(
        "criterion 5: {} - (gamma0 - 2)/4 from the computed bound is {cap:.6} vs reference 0.9091 +/- 1e-3",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(
        pass,
        "the computed level-2 bound {bound:.7} gives a row-probability cap of {cap:.6}; the \
         reference 0.9091 corresponds to the reference bound 5.6364 (see criterion 1). The \
         tighter computed cap only strengthens every security statement downstream."
    );
}

#[test]
fn criterion_06_ideal_secrecy() {
    let report = security::key_rate(0.0, REFERENCE_GAMMA0).unwrap();
    let pass = (report.key_rate - 0.4395).abs() <= 5e-4 && report.key_rate >= 0.439;
    println!(
        "criterion 6: {} - ideal key rate at gamma0 {REFERENCE_GAMMA0} is {:.6} vs 0.4395 +/- 5e-4",
        if pass { "PASS" } else { "FAIL" },
        report.key_rate
    );
    assert!(pass);
    // At zero noise the rate is exactly the minimum row entropy at the cap.
    let x = security::row_prob_bound(REFERENCE_GAMMA0, 0.0).unwrap();
    assert_eq!(report.key_rate, security::min_row_entropy(x).unwrap());
}

#[test]
fn criterion_07_noise_threshold() {
    let optimized = security::threshold(REFERENCE_GAMMA0).unwrap();
    let fixed = security::threshold_fixed_delta(REFERENCE_GAMMA0).unwrap();
    let pass = (0.0063..=0.0073).contains(&optimized) && (fixed - 0.0068).abs() <= 5e-4;
    println!(
        "criterion 7: {} - threshold optimized {optimized:.6} in [0.0063, 0.0073], fixed-delta {fixed:.6} vs 0.0068 +/- 5e-4",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn criterion_08_quantum_box_validity() {
    let family = quantum_pm_box(NoiseModel::ideal());
    let ks = validate_ks(&family, 1e-9).unwrap();
    let ns = validate_nosignaling(&family, 1e-9).unwrap();
    let max_eps = ab_error(&family)
        .iter()
        .flatten()
        .fold(0.0_f64, |a, &e| a.max(e));
    let mut protocol_ok = true;
    for seed in 0..16u64 {
        let result = protocol::run(&ProtocolConfig {
            n: 10_000,
            test_fraction1: 0.25,
            test_fraction2: 0.25,
            noise: NoiseModel::ideal(),
            abort_eps: 0.0068,
            seed: 1000 + seed,
            gamma0: REFERENCE_GAMMA0,
        })
        .unwrap();
        protocol_ok &= !result.aborted
            && result.alice_key == result.bob_key
            && result.estimate.max_eps() == 0.0
            && result.qber_raw == 0.0;
    }
    let pass = ks.pass && ns.pass && max_eps <= 1e-9 && protocol_ok;
    println!(
        "criterion 8: {} - ideal box: ks {:.2e}, ns {:.2e}, eps {max_eps:.2e}; 16 noiseless runs of 10^4 rounds gave identical keys and zero error: {protocol_ok}",
        if pass { "PASS" } else { "FAIL" },
        ks.violation,
        ns.violation
    );
    assert!(pass);
}

// --- criterion 9: three independent oracles -------------------------------

/// All-orders local rewriting oracle for word reduction. Rules: drop equal
/// adjacent letters, move Alice letters left across Bob letters, fuse
/// adjacent distinct same-row letters into the third row element. Explores
/// every application order and collects the reachable normal forms.
fn oracle_normal_forms(
    word: &[Generator],
    memo: &mut HashMap<Vec<Generator>, BTreeSet<Vec<Generator>>>,
) -> BTreeSet<Vec<Generator>> {
    if let Some(found) = memo.get(word) {
        return found.clone();
    }
    let mut successors: Vec<Vec<Generator>> = Vec::new();
    for k in 0..word.len().saturating_sub(1) {
        let (x, y) = (word[k], word[k + 1]);
        if x == y {
            let mut next = word.to_vec();
            next.drain(k..k + 2);
            successors.push(next);
            continue;
        }
        let is_a = |g: Generator| matches!(g, Generator::A(_));
        if !is_a(x) && is_a(y) {
            let mut next = word.to_vec();
            next.swap(k, k + 1);
            successors.push(next);
        }
        match (x, y) {
            (Generator::B(i), Generator::B(j)) if i != j => {
                let mut next = word.to_vec();
                next.splice(k..k + 2, [Generator::B(i ^ j)]);
                successors.push(next);
            }
            (Generator::BPrime(i), Generator::BPrime(j)) if i != j => {
                let mut next = word.to_vec();
                next.splice(k..k + 2, [Generator::BPrime(i ^ j)]);
                successors.push(next);
            }
            _ => {}
        }
    }
    let result = if successors.is_empty() {
        BTreeSet::from([word.to_vec()])
    } else {
        let mut all = BTreeSet::new();
        for next in successors {
            all.extend(oracle_normal_forms(&next, memo));
        }
        all
    };
    memo.insert(word.to_vec(), result.clone());
    result
}

fn all_generators() -> [Generator; 9] {
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

fn confluence_check() -> (usize, bool) {
    let gens = all_generators();
    let mut memo = HashMap::new();
    let mut checked = 0;
    let mut sequences: Vec<Vec<Generator>> = vec![Vec::new()];
    for _ in 0..4 {
        let mut next = Vec::new();
        for seq in &sequences {
            for &g in &gens {
                let mut s = seq.clone();
                s.push(g);
                next.push(s);
            }
        }
        for seq in &next {
            let forms = oracle_normal_forms(seq, &mut memo);
            if forms.len() != 1 {
                return (checked, false);
            }
            let oracle = forms.iter().next().unwrap();
            if npa::reduce_word(seq).letters() != oracle.as_slice() {
                return (checked, false);
            }
            checked += 1;
        }
        sequences = next;
    }
    (checked, true)
}

/// Refining grid minimization of the Shannon entropy over the capped
/// simplex `{q >= 0, sum q = 1, q_i <= x}`, independent of the analytic
/// formula it checks.
fn simplex_grid_min_entropy(x: f64) -> f64 {
    let entropy = |q: [f64; 4]| -> f64 {
        q.iter()
            .filter(|&&p| p > 1e-300)
            .map(|&p| -p * p.log2())
            .sum()
    };
    let points = 15;
    let mut center = [0.25, 0.25, 0.25];
    let mut width = x;
    let mut best = f64::INFINITY;
    for _ in 0..20 {
        let mut level_best = best;
        let mut level_arg = center;
        let axis: Vec<Vec<f64>> = center
            .iter()
            .map(|&c| {
                let lo = (c - width).max(0.0);
                let hi = (c + width).min(x);
                (0..points)
                    .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
                    .collect()
            })
            .collect();
        for &q1 in &axis[0] {
            for &q2 in &axis[1] {
                for &q3 in &axis[2] {
                    let q0 = 1.0 - q1 - q2 - q3;
                    if !(0.0..=x).contains(&q0) {
                        continue;
                    }
                    let h = entropy([q0, q1, q2, q3]);
                    if h < level_best {
                        level_best = h;
                        level_arg = [q1, q2, q3];
                    }
                }
            }
        }
        best = level_best;
        center = level_arg;
        width *= 0.35;
    }
    best
}

#[test]
fn criterion_09_oracle_equivalences() {
    // (a) exhaustive confluence of word reduction up to length 4.
    let (checked, confluent) = confluence_check();
    assert!(confluent, "word reduction not confluent");
    assert_eq!(checked, 9 + 81 + 729 + 6561);

    // (b) minimum row entropy against the independent grid minimizer.
    let mut max_err = 0.0_f64;
    for i in 0..20 {
        let x = 0.5 + 0.5 * (i as f64 + 0.5) / 20.0;
        let grid = simplex_grid_min_entropy(x);
        let formula = security::min_row_entropy(x).unwrap();
        max_err = max_err.max((grid - formula).abs());
    }
    assert!(max_err <= 1e-6, "grid mismatch {max_err}");

    // (c) solver against analytic optima on 50 random small instances.
    let mut rng = ChaCha8Rng::seed_from_u64(271);
    let mut max_sdp_err = 0.0_f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=6);
        let signs: Vec<f64> = (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut c = DMatrix::zeros(n, n);
        let mut expected = 0.0;
        for i in 0..n {
            let d: f64 = rng.random_range(-1.0..1.0);
            c[(i, i)] = d;
            expected += d;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let w: f64 = rng.random_range(0.0..1.0);
                c[(i, j)] = w * signs[i] * signs[j];
                c[(j, i)] = c[(i, j)];
                expected += 2.0 * w;
            }
        }
        let mut problem = SdpProblem::new(n, c);
        for i in 0..n {
            problem.pin_cell(i, i, 1.0);
        }
        let settings = SdpSettings {
            tol: 1e-10,
            ..SdpSettings::default()
        };
        let result = sdp::solve(&problem, settings);
        assert_eq!(result.status, sdp::SdpStatus::Solved);
        max_sdp_err = max_sdp_err
            .max((result.primal_value - expected).abs())
            .max((result.dual_value - expected).abs());
    }
    assert!(max_sdp_err <= 1e-7, "sdp mismatch {max_sdp_err}");

    println!(
        "criterion 9: PASS - confluence on {checked} sequences, grid-entropy err {max_err:.2e}, sdp-oracle err {max_sdp_err:.2e}"
    );
}

#[test]
fn criterion_10_attack_consistency() {
    let target = quantum_pm_box(NoiseModel::ideal());
    let x = (REFERENCE_GAMMA0 - 2.0) / 4.0;
    let floor = security::min_row_entropy(x).unwrap();
    let mut cfg = AttackSearchConfig::new(4, 100, 12345, Some(x));
    cfg.steps = 400;
    let ensemble = attack_search(&target, &cfg);
    let report = eve_entropy(&ensemble, 0.01);
    let pass = report.avg_row_entropy >= 0.4395 - 1e-3;
    println!(
        "criterion 10: {} - best capped 100-restart attack reaches row entropy {:.6}, floor {floor:.6}",
        if pass { "PASS" } else { "FAIL" },
        report.avg_row_entropy
    );
    assert!(pass);
}

//! Acceptance gates: the quantitative contracts the assembled pipeline must
//! clear before a build is considered good.
//!
//! Each suite returns a [`CriterionResult`] — a stable name, a pass flag and
//! a one-line summary of what was measured — so the CLI `accept` command and
//! the `acceptance` integration target can print one line per criterion.
//! Two pairs of criteria share a batch: the verdict-agreement runs also
//! produce the Rayleigh-contract tally, and the basis-selection trials also
//! produce the measurement-probability tally. Every suite runs on fixed
//! seeds; a pass is reproducible, and a failure is replayable.
//!
//! Suites never panic on infrastructure errors: any internal `Err` is
//! reported as a failed criterion with the error in the summary.

use std::fmt;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::backend::{lookup, Backend};
use crate::basis::{
    complete_basis_selection, gram_schmidt_row, measurement_prob_lower_bound, SelectionMode,
};
use crate::error::{Error, Result};
use crate::estimation::{hadamard_test_overlap, overlap_shot_count};
use crate::hessian::{
    canonical_instance, eigendecompose, frobenius_bound_check, generate_synthetic,
    independence_check, Hessian, NCFParams,
};
use crate::linalg::{det_lu_counted, sym_eigen_jacobi, Matrix};
use crate::ncf::pned_shot_count;
use crate::oracle::TreeOracle;
use crate::readout::perturbation_bound_check;
use crate::report::{compare_run, run_pipeline, InstanceSource, RunConfig};
use crate::rng::RandomStream;
use crate::sve::{sve_channel, SVEConfig};

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    /// Stable identifier, usable as a filter key.
    pub name: &'static str,
    pub passed: bool,
    /// One line of measured numbers against their thresholds.
    pub summary: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<22} {}", self.name, self.summary)
    }
}

/// Run a suite body, folding any infrastructure error into a failed result.
fn evaluated(
    name: &'static str,
    suite: impl FnOnce() -> Result<(bool, String)>,
) -> CriterionResult {
    match suite() {
        Ok((passed, summary)) => CriterionResult { name, passed, summary },
        Err(e) => CriterionResult { name, passed: false, summary: format!("error: {e}") },
    }
}

/// All ten criteria in reporting order. Shared batches run once.
pub fn run_all() -> Vec<CriterionResult> {
    let (verdicts, rayleigh) = verdict_agreement();
    let (selection, bounds) = basis_selection();
    vec![
        pned_distribution(),
        sve_block_sampling(),
        verdicts,
        rayleigh,
        selection,
        perturbation_property(),
        estimator_contracts(),
        structural_identities(),
        bounds,
        reproducibility(),
    ]
}

// ---------------------------------------------------------------------------
// Criterion: sign-circuit outcome distribution
// ---------------------------------------------------------------------------

/// On the reference instance, every eigenstate's empirical `P(1)` over 10⁴
/// shots must sit within ±0.015 of `(1 − λ/F)/2` (three binomial sigmas at
/// worst case), and the two backends must agree on the exact probability to
/// 1e−10. Kernel states (λ = 0) are included by completing the eigenbasis;
/// the circuit-level sampler is additionally spot-checked with 10⁴ shots on
/// the most negative block.
pub fn pned_distribution() -> CriterionResult {
    evaluated("pned-distribution", || {
        let h = canonical_instance();
        let decomp = eigendecompose(&h)?;
        let oracle = TreeOracle::build(&h);
        let statevector = lookup("statevector")?;
        let analytic = lookup("analytic")?;
        let mut stream = RandomStream::from_seed(101);
        let shots = 10_000u64;

        let basis = complete_orthobasis(&decomp.eigenvectors, h.d)?;
        let mut max_dev = 0.0f64;
        let mut max_gap = 0.0f64;
        for (k, psi) in basis.iter().enumerate() {
            let lambda = if k < decomp.eigenvalues.len() { decomp.eigenvalues[k] } else { 0.0 };
            let expected = 0.5 * (1.0 - lambda / decomp.f_norm);
            let exact_sv = statevector.pned_prob_one(&h, &oracle, psi)?;
            let exact_an = analytic.pned_prob_one(&h, &oracle, psi)?;
            max_gap = max_gap.max((exact_sv - exact_an).abs());
            let mut ones = 0u64;
            for _ in 0..shots {
                ones += statevector.pned_shot(&h, &oracle, psi, &mut stream)? as u64;
            }
            max_dev = max_dev.max((ones as f64 / shots as f64 - expected).abs());
        }

        let target = decomp
            .min_index()
            .ok_or_else(|| Error::validation("reference instance lost its negative block"))?;
        let expected = 0.5 * (1.0 - decomp.eigenvalues[target] / decomp.f_norm);
        let mut ones = 0u64;
        for _ in 0..shots {
            ones +=
                statevector.pned_shot(&h, &oracle, &decomp.eigenvectors[target], &mut stream)?
                    as u64;
        }
        max_dev = max_dev.max((ones as f64 / shots as f64 - expected).abs());

        let passed = max_dev <= 0.015 && max_gap <= 1e-10;
        Ok((
            passed,
            format!(
                "max empirical dev {max_dev:.4} (≤ 0.015), backend gap {max_gap:.1e} (≤ 1e-10) \
                 over {} states × {shots} shots",
                basis.len()
            ),
        ))
    })
}

// ---------------------------------------------------------------------------
// Criterion: estimation-channel block sampling
// ---------------------------------------------------------------------------

/// 10⁴ channel draws on the reference joint state: block frequencies must
/// match `λ_j²/F²` (chi-square p > 0.01), and every successful estimate must
/// sit within ε/4 of `|λ_j|` — a hard bound, zero violations.
pub fn sve_block_sampling() -> CriterionResult {
    evaluated("sve-block-sampling", || {
        let h = canonical_instance();
        let decomp = eigendecompose(&h)?;
        let config = SVEConfig::for_epsilon(0.2, h.d)?;
        let mut stream = RandomStream::from_seed(202);
        let n = 10_000usize;

        let mut counts = vec![0u64; decomp.rank()];
        let mut violations = 0usize;
        let mut worst = 0.0f64;
        for _ in 0..n {
            let sample = sve_channel(&decomp, &config, &mut stream)?;
            counts[sample.block] += 1;
            if !sample.failed {
                let err = (sample.estimate - sample.true_value(&decomp)).abs();
                worst = worst.max(err);
                // The noise support is the closed interval [σ − ε/4, σ + ε/4]
                // and the outcome grid puts points exactly on its endpoints,
                // so allow representation error and nothing more.
                if err > 0.2 / 4.0 + 1e-12 {
                    violations += 1;
                }
            }
        }

        let mut stat = 0.0;
        for (k, &lambda) in decomp.eigenvalues.iter().enumerate() {
            let expected = n as f64 * (lambda / decomp.f_norm).powi(2);
            stat += (counts[k] as f64 - expected).powi(2) / expected;
        }
        let dof = (decomp.rank() - 1) as f64;
        let p_value = 1.0 - ChiSquared::new(dof).expect("positive dof").cdf(stat);

        let passed = p_value > 0.01 && violations == 0;
        Ok((
            passed,
            format!(
                "block χ² p = {p_value:.3} (> 0.01), {violations} estimates past ε/4 \
                 (worst |err| {worst:.4} of 0.05) over {n} draws"
            ),
        ))
    })
}

// ---------------------------------------------------------------------------
// Criteria: verdict agreement + end-to-end Rayleigh contract (shared batch)
// ---------------------------------------------------------------------------

/// One deterministic spectrum for the verdict batch (d = 32, r = 4, L = 1).
///
/// Magnitudes are drawn ascending with pairwise gaps strictly above 0.21, so
/// the binning separation holds with margin. In the negative regime the
/// largest magnitude (≥ 0.75) carries a negative sign: `λ_min ≤ −0.75`, well
/// below `−α = −0.5`. In the positive regime only magnitudes ≤ 0.38 may go
/// negative: `λ_min ≥ −0.38 > −α + ε/2`, outside the boundary band, and no
/// estimate of such an eigenvalue can reach the `α − ε/4` detection
/// threshold. Both regimes therefore avoid the excluded band by
/// construction.
fn regime_spectrum(negative: bool, stream: &mut RandomStream) -> Vec<f64> {
    let mags = spaced_magnitudes(4, 0.12, 0.21, 0.05, stream);
    mags.iter()
        .enumerate()
        .map(|(k, &m)| {
            let flip = if negative {
                k == 3 || (k < 3 && stream.bernoulli(0.5))
            } else {
                m <= 0.38 && stream.bernoulli(0.5)
            };
            if flip {
                -m
            } else {
                m
            }
        })
        .collect()
}

/// Runs the 100-instance-per-regime verdict batch at (α, ε, δ) =
/// (0.5, 0.2, 0.01), d = 32, r = 4 and returns two results:
///
/// * verdict agreement — the detection verdict must agree with the
///   classical decision in ≥ 95 runs per regime;
/// * Rayleigh contract — among successful negative-regime runs, the
///   reconstruction must satisfy `ûᵀHû ≤ −α + ε` in ≥ 95% and
///   `min(‖û − u‖, ‖û + u‖) ≤ ε/2` in ≥ 90%.
pub fn verdict_agreement() -> (CriterionResult, CriterionResult) {
    match verdict_batch() {
        Ok(pair) => pair,
        Err(e) => {
            let summary = format!("batch error: {e}");
            (
                CriterionResult {
                    name: "verdict-agreement",
                    passed: false,
                    summary: summary.clone(),
                },
                CriterionResult { name: "rayleigh-contract", passed: false, summary },
            )
        }
    }
}

fn verdict_batch() -> Result<(CriterionResult, CriterionResult)> {
    let params = NCFParams::new(0.5, 0.2, 0.01)?;
    let runs = 100u64;
    let mut agree = [0usize; 2];
    let mut successful = 0usize;
    let mut rayleigh_ok = 0usize;
    let mut distance_ok = 0usize;

    for (regime, &negative) in [true, false].iter().enumerate() {
        for i in 0..runs {
            let base = if negative { 3_000 } else { 3_500 };
            let mut spectrum_stream = RandomStream::from_seed(base + i);
            let config = RunConfig {
                instance: InstanceSource::Generate {
                    d: 32,
                    r: 4,
                    spectrum: regime_spectrum(negative, &mut spectrum_stream),
                    lipschitz: 1.0,
                    separation: 0.2,
                    seed: 10 * base + i,
                },
                params,
                sve: SVEConfig::for_epsilon(params.eps, 32)?,
                backend: "analytic".to_string(),
                seed: 11 * base + i,
                out: None,
            };
            // A run that errors out counts as a disagreement: the contract
            // is about delivered verdicts, not attempted ones.
            let Ok((row, report)) = compare_run(&config) else { continue };
            if row.verdict_match && !row.boundary_excluded {
                agree[regime] += 1;
            }
            if negative && row.quantum_vector && row.classical_vector {
                let v = &report.verification;
                if v.applicable {
                    successful += 1;
                    if v.rayleigh_contract {
                        rayleigh_ok += 1;
                    }
                    if v.distance_contract {
                        distance_ok += 1;
                    }
                }
            }
        }
    }

    let verdicts = CriterionResult {
        name: "verdict-agreement",
        passed: agree[0] >= 95 && agree[1] >= 95,
        summary: format!(
            "negative {}/{runs}, positive {}/{runs} agree with the classical verdict (≥ 95 each)",
            agree[0], agree[1]
        ),
    };
    let rayleigh = CriterionResult {
        name: "rayleigh-contract",
        passed: successful > 0
            && rayleigh_ok as f64 >= 0.95 * successful as f64
            && distance_ok as f64 >= 0.90 * successful as f64,
        summary: format!(
            "Rayleigh ≤ −α+ε in {rayleigh_ok}/{successful} (≥ 95%), \
             distance ≤ ε/2 in {distance_ok}/{successful} (≥ 90%) of successful runs"
        ),
    };
    Ok((verdicts, rayleigh))
}

// ---------------------------------------------------------------------------
// Criteria: basis-selection success + measurement bounds (shared batch)
// ---------------------------------------------------------------------------

/// Runs 200 seeded blind selections on the reference instance and returns
/// two results:
///
/// * basis selection — an independence-passing set in ≥ 70% of the 200
///   trials (a one-sided 95% binomial band under the guaranteed ≥ 3/4), and
///   100% success in 200 trials with ε₃ = 0 (exact reflection targets and
///   exact Gram data);
/// * measurement bounds — each round position's pooled post-selection rate
///   at least its `(r−l)·ε²/(4F²)` lower bound minus three binomial sigmas,
///   and every trial's accumulated false-selection bound ≤ 1/4.
pub fn basis_selection() -> (CriterionResult, CriterionResult) {
    match selection_batch() {
        Ok(pair) => pair,
        Err(e) => {
            let summary = format!("batch error: {e}");
            (
                CriterionResult { name: "basis-selection", passed: false, summary: summary.clone() },
                CriterionResult { name: "measurement-bounds", passed: false, summary },
            )
        }
    }
}

fn selection_batch() -> Result<(CriterionResult, CriterionResult)> {
    let h = canonical_instance();
    let decomp = eigendecompose(&h)?;
    let oracle = TreeOracle::build(&h);
    let backend = lookup("analytic")?;
    let eps = 0.2;
    let f = oracle.frobenius_norm();
    let r = h.r;
    let trials = 200usize;

    let mut independent = 0usize;
    let mut max_false_total = 0.0f64;
    let mut attempts_by_round = vec![0u64; r];
    let mut successes_by_round = vec![0u64; r];
    for t in 0..trials {
        let mut stream = RandomStream::from_seed(5_000 + t as u64);
        let Ok(sel) = complete_basis_selection(
            &h,
            &oracle,
            &decomp,
            eps,
            backend,
            SelectionMode::Blind,
            &mut stream,
        ) else {
            continue;
        };
        if independence_check(&h, &sel.indices)? {
            independent += 1;
        }
        max_false_total = max_false_total.max(sel.false_selection_total);
        for (l, round) in sel.rounds.iter().enumerate() {
            attempts_by_round[l] += round.attempts;
            successes_by_round[l] += 1;
        }
    }

    let mut exact_successes = 0usize;
    for t in 0..trials {
        if exact_selection_trial(&h, &oracle, backend, eps, 5_500 + t as u64)? {
            exact_successes += 1;
        }
    }

    // Pool each round position over the completed selections. The rates sit
    // far above their bounds (round 0 post-selects with probability 1), so
    // the three-sigma slack is a safety margin, not a crutch.
    let mut worst_margin = f64::INFINITY;
    for l in 0..r {
        if successes_by_round[l] == 0 {
            worst_margin = f64::NEG_INFINITY;
            continue;
        }
        let n = attempts_by_round[l] as f64;
        let rate = successes_by_round[l] as f64 / n;
        let sigma = (rate * (1.0 - rate) / n).sqrt();
        let bound = measurement_prob_lower_bound(r, l, eps, f);
        worst_margin = worst_margin.min(rate - (bound - 3.0 * sigma));
    }

    let selection = CriterionResult {
        name: "basis-selection",
        passed: independent * 10 >= trials * 7 && exact_successes == trials,
        summary: format!(
            "independent sets in {independent}/{trials} blind trials (≥ 70%), \
             {exact_successes}/{trials} with ε₃ = 0 (= 100%)"
        ),
    };
    let bounds = CriterionResult {
        name: "measurement-bounds",
        passed: worst_margin >= 0.0 && max_false_total <= 0.25,
        summary: format!(
            "worst pooled rate margin {worst_margin:+.3} over bound − 3σ, \
             max Σ false-selection bound {max_false_total:.3} (≤ 0.25)"
        ),
    };
    Ok((selection, bounds))
}

/// One selection with ε₃ = 0: reflection targets are the exact Gram–Schmidt
/// combinations of the exact unit columns. Returns whether all `r` rounds
/// post-selected distinct columns that pass the independence check.
fn exact_selection_trial(
    h: &Hessian,
    oracle: &TreeOracle,
    backend: &dyn Backend,
    eps: f64,
    seed: u64,
) -> Result<bool> {
    let f = oracle.frobenius_norm();
    let r = h.r;
    let mut stream = RandomStream::from_seed(seed);
    let mut indices: Vec<usize> = Vec::with_capacity(r);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut targets: Vec<Vec<f64>> = Vec::with_capacity(r);
    for l in 0..r {
        let p_bound = measurement_prob_lower_bound(r, l, eps, f);
        let max_attempts = (200.0 / p_bound).ceil() as u64;
        let mut index = None;
        for _ in 0..max_attempts {
            let attempt = backend.selection_attempt(h, oracle, &targets, &mut stream)?;
            if attempt.accepted {
                index = attempt.index;
                break;
            }
        }
        let Some(index) = index else { return Ok(false) };
        if indices.contains(&index) {
            return Ok(false);
        }
        let col = oracle.column_unit(index)?;
        let overlaps: Vec<f64> = columns.iter().map(|c| dot(c, &col)).collect();
        let Ok(row) = gram_schmidt_row(&unit_gram(&columns), &overlaps, l) else {
            return Ok(false);
        };
        indices.push(index);
        columns.push(col);
        let mut target = vec![0.0; h.d];
        for (c, &x) in columns.iter().zip(&row.x) {
            for (t, &v) in target.iter_mut().zip(c) {
                *t += x * v;
            }
        }
        targets.push(target);
    }
    independence_check(h, &indices)
}

// ---------------------------------------------------------------------------
// Criterion: read-out perturbation property
// ---------------------------------------------------------------------------

/// 1000 adversarial perturbations within the read-out tolerances on exact
/// `(C, b)` systems from 20 instances: the weighted reconstruction error
/// must stay ≤ ε/2 in all 20 000 cases.
pub fn perturbation_property() -> CriterionResult {
    evaluated("perturbation-bound", || {
        let dims: [(usize, usize); 5] = [(8, 2), (10, 3), (12, 4), (16, 4), (24, 5)];
        let mut stream = RandomStream::from_seed(606);
        let mut clean = 0usize;
        let instances = 20usize;
        let trials = 1_000u64;
        for k in 0..instances {
            let (d, r) = dims[k % dims.len()];
            let mags = spaced_magnitudes(r, 0.15, 0.12, 0.05, &mut stream);
            let spectrum: Vec<f64> = mags
                .iter()
                .map(|&m| if stream.bernoulli(0.5) { -m } else { m })
                .collect();
            let h = generate_synthetic(d, r, &spectrum, 1.0, 0.1, 6_600 + k as u64)?;
            let decomp = eigendecompose(&h)?;
            let u = &decomp.eigenvectors[decomp.min_index().unwrap_or(0)];

            let indices: Vec<usize> = (0..r).collect();
            if !independence_check(&h, &indices)? {
                return Ok((false, format!("instance {k}: leading columns are dependent")));
            }
            let columns: Vec<Vec<f64>> = indices
                .iter()
                .map(|&i| {
                    let col = h.column(i);
                    let norm = h.column_norm(i);
                    col.iter().map(|&v| v / norm).collect()
                })
                .collect();
            let c = unit_gram(&columns);
            let b: Vec<f64> = columns.iter().map(|col| dot(col, u)).collect();
            if perturbation_bound_check(&c, &b, 0.2, trials, &mut stream)? {
                clean += 1;
            }
        }
        let passed = clean == instances;
        Ok((
            passed,
            format!(
                "{}/{} cases within ε/2 ({clean}/{instances} instances clean)",
                clean as u64 * trials,
                instances as u64 * trials
            ),
        ))
    })
}

// ---------------------------------------------------------------------------
// Criterion: estimator contracts
// ---------------------------------------------------------------------------

/// Overlap-estimator contracts: 1000 Hadamard-test estimates at
/// (ε, δ) = (0.1, 0.05) against exact column dot products with ≤ 50
/// failures (the advertised δ); the swap-test `P(0)` formula exact on the
/// statevector backend; shot-count arithmetic at its frozen points and
/// minimality properties.
pub fn estimator_contracts() -> CriterionResult {
    evaluated("estimator-contracts", || {
        let statevector = lookup("statevector")?;
        let analytic = lookup("analytic")?;
        let mut stream = RandomStream::from_seed(707);

        let mut pool: Vec<(Hessian, TreeOracle)> = Vec::new();
        let specs: [(usize, usize, [f64; 3]); 4] = [
            (8, 3, [-0.7, 0.5, -0.3]),
            (12, 3, [0.8, -0.45, 0.2]),
            (16, 3, [-0.9, 0.6, 0.25]),
            (20, 3, [0.75, -0.5, -0.15]),
        ];
        pool.push((canonical_instance(), TreeOracle::build(&canonical_instance())));
        for (k, &(d, r, spectrum)) in specs.iter().enumerate() {
            let h = generate_synthetic(d, r, &spectrum, 1.0, 0.04, 7_700 + k as u64)?;
            let oracle = TreeOracle::build(&h);
            pool.push((h, oracle));
        }

        let trials = 1_000usize;
        let mut failures = 0usize;
        for t in 0..trials {
            let (h, oracle) = &pool[t % pool.len()];
            let i = (stream.next_u64() % h.d as u64) as usize;
            let j = (stream.next_u64() % h.d as u64) as usize;
            // Every twentieth trial drives the circuit-level sampler.
            let backend = if t % 20 == 0 { statevector } else { analytic };
            let est = hadamard_test_overlap(oracle, backend, i, j, 0.1, 0.05, &mut stream)?;
            let exact = dot(&oracle.column_unit(i)?, &oracle.column_unit(j)?);
            if (est.value - exact).abs() > 0.1 {
                failures += 1;
            }
        }

        let mut swap_gap = 0.0f64;
        let (h, oracle) = &pool[0];
        for _ in 0..20 {
            let phi = oracle.column_unit((stream.next_u64() % h.d as u64) as usize)?;
            let psi = stream.unit_vector(h.d);
            let p0 = statevector.swap_test_prob_zero(&phi, &psi)?;
            let formula = 0.5 * (1.0 + dot(&phi, &psi).powi(2));
            swap_gap = swap_gap.max((p0 - formula).abs());
        }

        // Shot counts: frozen value plus the ⌊·⌋+1 / smallest-odd laws.
        let mut counts_ok = overlap_shot_count(0.1, 0.05)? == 738;
        for &(eps, delta) in &[(0.1, 0.05), (0.2, 0.1), (0.05, 0.01), (0.3, 0.2), (0.15, 0.02)] {
            let n = overlap_shot_count(eps, delta)? as f64;
            let bound = 2.0 / (eps * eps) * (2.0f64 / delta).ln();
            counts_ok &= n > bound && n <= bound + 1.0;
        }
        for &(f_norm, a, delta) in &[(1.0, 0.5, 0.01), (0.755, 0.25, 0.1), (2.0, 0.3, 0.05)] {
            let n = pned_shot_count(f_norm, a, delta)?;
            let bound = 2.0 * (f_norm / a).powi(2) * (1.0f64 / delta).ln();
            counts_ok &= n % 2 == 1 && n as f64 >= bound && (n as f64 - 2.0) < bound;
        }

        let passed = failures <= 50 && swap_gap <= 1e-12 && counts_ok;
        Ok((
            passed,
            format!(
                "Hadamard failures {failures}/{trials} (≤ 50), swap-test P(0) gap \
                 {swap_gap:.1e} (≤ 1e-12), shot-count laws {}",
                if counts_ok { "exact" } else { "VIOLATED" }
            ),
        ))
    })
}

// ---------------------------------------------------------------------------
// Criterion: structural identities
// ---------------------------------------------------------------------------

/// Exact structure behind the circuits: the oracle's isometry pair satisfies
/// `PᵀQ = H/F` and `PᵀP = QᵀQ = I` to 1e−10; the Frobenius-norm bound
/// `F ≤ √r·L` holds on 1000 random instances; the Gram-determinant identity
/// `Z² = det C_{m+1}/det C_m` holds per selection round to 1e−8; and the
/// determinant-based independence check agrees with a Gram-rank oracle on
/// 500 random index sets.
pub fn structural_identities() -> CriterionResult {
    evaluated("structural-identities", || {
        let mut worst_pq = 0.0f64;
        let mut instances: Vec<Hessian> = vec![canonical_instance()];
        instances.push(generate_synthetic(10, 3, &[-0.6, 0.35, 0.15], 1.0, 0.05, 81)?);
        instances.push(generate_synthetic(12, 2, &[0.7, -0.3], 1.0, 0.05, 82)?);
        for h in &instances {
            let oracle = TreeOracle::build(h);
            let pq = oracle.pq_factors()?;
            let ptq = pq.p.transpose().matmul(&pq.q);
            let f = h.frobenius_norm();
            for i in 0..h.d {
                for j in 0..h.d {
                    worst_pq = worst_pq.max((ptq.get(i, j) - h.entry(i, j) / f).abs());
                }
            }
            worst_pq = worst_pq.max(identity_deviation(&pq.p.transpose().matmul(&pq.p)));
            worst_pq = worst_pq.max(identity_deviation(&pq.q.transpose().matmul(&pq.q)));
        }

        let mut stream = RandomStream::from_seed(808);
        let mut bound_violations = 0usize;
        for k in 0..1_000u64 {
            let d = 4 + (stream.next_u64() % 17) as usize;
            let r = 1 + (stream.next_u64() % (d / 2).min(4) as u64) as usize;
            let mags = spaced_magnitudes(r, 0.1, 0.05, 0.1, &mut stream);
            let spectrum: Vec<f64> = mags
                .iter()
                .map(|&m| if stream.bernoulli(0.5) { -m } else { m })
                .collect();
            let h = generate_synthetic(d, r, &spectrum, 1.0, 0.04, 8_000 + k)?;
            if !frobenius_bound_check(&h) {
                bound_violations += 1;
            }
        }

        let h = canonical_instance();
        let decomp = eigendecompose(&h)?;
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic")?;
        let mut det_worst = 0.0f64;
        let mut det_rounds = 0usize;
        for s in 0..50u64 {
            let mut stream = RandomStream::from_seed(8_800 + s);
            let Ok(sel) = complete_basis_selection(
                &h,
                &oracle,
                &decomp,
                0.2,
                backend,
                SelectionMode::Blind,
                &mut stream,
            ) else {
                continue;
            };
            let mut prev_det = 1.0;
            for (l, &z) in sel.z_values.iter().enumerate() {
                let minor = leading_minor(&sel.gram, l + 1);
                let (det, _) = det_lu_counted(&minor);
                det_worst = det_worst.max((det / prev_det - z * z).abs());
                det_rounds += 1;
                prev_det = det;
            }
        }

        let mut set_stream = RandomStream::from_seed(888);
        let mut disagreements = 0usize;
        let mut pool: Vec<(Hessian, TreeOracle)> = Vec::new();
        for m in 0..10u64 {
            let d = 8 + 2 * (m as usize % 5);
            let r = 2 + (m as usize % 3);
            let mags = spaced_magnitudes(r, 0.12, 0.08, 0.08, &mut set_stream);
            let spectrum: Vec<f64> = mags
                .iter()
                .map(|&m| if set_stream.bernoulli(0.5) { -m } else { m })
                .collect();
            let h = generate_synthetic(d, r, &spectrum, 1.0, 0.06, 8_500 + m)?;
            let oracle = TreeOracle::build(&h);
            pool.push((h, oracle));
        }
        for k in 0..500usize {
            let (h, oracle) = &pool[k % pool.len()];
            let max_size = (h.r + 2).min(h.d);
            let size = 1 + (set_stream.next_u64() % max_size as u64) as usize;
            let mut indices: Vec<usize> = Vec::with_capacity(size);
            while indices.len() < size {
                let i = (set_stream.next_u64() % h.d as u64) as usize;
                if !indices.contains(&i) {
                    indices.push(i);
                }
            }
            let ours = independence_check(h, &indices)?;
            let columns: Vec<Vec<f64>> =
                indices.iter().map(|&i| oracle.column_unit(i)).collect::<Result<_>>()?;
            let gram = unit_gram(&columns);
            let (eigs, _) = sym_eigen_jacobi(&gram, 1e-14)?;
            let rank = eigs.iter().filter(|&&e| e > 1e-8 * size as f64).count();
            if ours != (rank == size) {
                disagreements += 1;
            }
        }

        let passed = worst_pq <= 1e-10
            && bound_violations == 0
            && det_worst <= 1e-8
            && det_rounds > 0
            && disagreements == 0;
        Ok((
            passed,
            format!(
                "isometry dev {worst_pq:.1e} (≤ 1e-10), norm bound {bound_violations}/1000 \
                 violations, det identity dev {det_worst:.1e} over {det_rounds} rounds (≤ 1e-8), \
                 rank-oracle disagreements {disagreements}/500"
            ),
        ))
    })
}

// ---------------------------------------------------------------------------
// Criterion: reproducibility
// ---------------------------------------------------------------------------

/// A fixed (config, seed) pair must produce byte-identical reports across
/// two consecutive runs, on both backends.
pub fn reproducibility() -> CriterionResult {
    evaluated("reproducibility", || {
        let mut identical = true;
        let mut bytes_seen = 0usize;
        for backend in ["analytic", "statevector"] {
            let config = RunConfig {
                instance: InstanceSource::Generate {
                    d: 16,
                    r: 4,
                    spectrum: vec![-0.6, 0.4, -0.2, 0.1],
                    lipschitz: 1.0,
                    separation: 0.05,
                    seed: 7,
                },
                params: NCFParams::new(0.5, 0.2, 0.01)?,
                sve: SVEConfig::for_epsilon(0.2, 16)?,
                backend: backend.to_string(),
                seed: 7,
                out: None,
            };
            let first = run_pipeline(&config)?.canonical_bytes()?;
            let second = run_pipeline(&config)?.canonical_bytes()?;
            identical &= first == second;
            bytes_seen = bytes_seen.max(first.len());
        }
        Ok((
            identical,
            format!(
                "reports on both backends byte-identical across two runs ({bytes_seen} bytes): {}",
                if identical { "yes" } else { "NO" }
            ),
        ))
    })
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Draw `r` magnitudes, ascending, with pairwise gaps strictly above `gap`.
fn spaced_magnitudes(
    r: usize,
    floor: f64,
    gap: f64,
    jitter: f64,
    stream: &mut RandomStream,
) -> Vec<f64> {
    let mut mags = Vec::with_capacity(r);
    let mut level = floor + stream.uniform(0.0, jitter);
    for _ in 0..r {
        mags.push(level);
        level += gap + stream.uniform(1e-3, jitter);
    }
    mags
}

/// Extend an orthonormal family to a full orthonormal basis of ℝ^d by
/// Gram–Schmidt over the standard basis.
fn complete_orthobasis(vectors: &[Vec<f64>], d: usize) -> Result<Vec<Vec<f64>>> {
    let mut basis = vectors.to_vec();
    for j in 0..d {
        if basis.len() == d {
            break;
        }
        let mut v = vec![0.0; d];
        v[j] = 1.0;
        for _pass in 0..2 {
            for b in &basis {
                let overlap = dot(b, &v);
                for (vi, &bi) in v.iter_mut().zip(b) {
                    *vi -= overlap * bi;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    if basis.len() != d {
        return Err(Error::Numerical(format!(
            "could not complete an orthonormal basis: {} of {d} vectors",
            basis.len()
        )));
    }
    Ok(basis)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gram matrix of a set of (unit) columns.
fn unit_gram(columns: &[Vec<f64>]) -> Matrix {
    let m = columns.len();
    let mut gram = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            gram.set(i, j, dot(&columns[i], &columns[j]));
        }
    }
    gram
}

/// Largest entrywise deviation of a square matrix from the identity.
fn identity_deviation(m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((m.get(i, j) - target).abs());
        }
    }
    worst
}

/// Leading `n × n` minor of a square matrix.
fn leading_minor(m: &Matrix, n: usize) -> Matrix {
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, m.get(i, j));
        }
    }
    out
}

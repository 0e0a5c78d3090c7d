//! Shot-based overlap estimators: the Hadamard test for signed column
//! overlaps, the swap test for squared overlaps, anchor-index selection,
//! and the signed-overlap discrimination behind the coordinate read-out.
//!
//! Every estimator is an average of ±1 measurement outcomes, so Hoeffding's
//! inequality sizes the shot count for an (ε, δ) contract. Swap tests only
//! see squared overlaps; recovering the *sign* of `b_i = ⟨u_t|s_i⟩` needs a
//! reference column. We fix an anchor column `k` maximizing `|⟨u_t|ĥ_k⟩|²`
//! (guaranteed ≥ λ_t²/F² somewhere), canonicalize the target's global sign
//! as `b_i = sgn(u_t⁽ᵏ⁾)·⟨u_t|s_i⟩`, and read each sign off the discriminant
//! `Z₊²|⟨u_t|ψ₊⟩|² − Z₋²|⟨u_t|ψ₋⟩|² = 4·⟨u_t|ĥ_k⟩⟨u_t|ĥ_{g(i)}⟩` built from
//! the superposition states `ψ± ∝ ĥ_k ± ĥ_{g(i)}`.
//!
//! Copies of the target state come from a [`TargetSource`]: either the
//! post-selection pipeline (every sample re-runs the redraw-until-match
//! channel, so pipeline error and estimator error compound exactly as they
//! would in a real run) or, in verification mode, the exact eigenvector.
//! Shot counts above the literal cap are realized by bulk count draws at
//! the exact outcome probabilities, with the expected per-shot oracle cost
//! charged deterministically.

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::hessian::SpectralDecomposition;
use crate::ncf::generate_target_state;
use crate::oracle::TreeOracle;
use crate::rng::{RandomStream, LITERAL_SHOT_CAP};
use crate::sve::{acceptance_probability, SVEConfig};

/// Hoeffding shot count for averaging ±1 outcomes to additive precision
/// `ε` with confidence `1 − δ`: `n = ⌊(2/ε²)·ln(2/δ)⌋ + 1`.
pub fn overlap_shot_count(eps: f64, delta: f64) -> Result<u64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::validation(format!("precision must be > 0, got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::validation(format!("delta must be in (0, 1), got {delta}")));
    }
    let raw = (2.0 / (eps * eps) * (2.0 / delta).ln()).floor();
    // A count past u64 means the requested precision is unattainable on
    // this simulator (it happens when tolerances are derived from a
    // pathologically conditioned Gram); fail cleanly so the caller can
    // reselect instead of wrapping the counter.
    if raw >= u64::MAX as f64 {
        return Err(Error::validation(format!(
            "precision {eps:.3e} at confidence {delta:.3e} needs {raw:.3e} shots, \
             beyond the supported budget"
        )));
    }
    Ok(raw as u64 + 1)
}

/// An overlap estimate together with the contract it was sized for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapEstimate {
    /// The estimate `2m/n − 1 ∈ [−1, 1]`.
    pub value: f64,
    pub shots: u64,
    pub eps: f64,
    pub delta: f64,
}

/// Estimate `⟨ĥ_i|ĥ_j⟩` by the Hadamard overlap test: prepare
/// `(|ĥ_i⟩|0⟩ + |ĥ_j⟩|1⟩)/√2`, Hadamard the flag, count zeros
/// (`P(0) = (1 + ⟨ĥ_i|ĥ_j⟩)/2`), and return `2m/n − 1`. Two oracle
/// queries per shot.
pub fn hadamard_test_overlap(
    oracle: &TreeOracle,
    backend: &dyn Backend,
    i: usize,
    j: usize,
    eps: f64,
    delta: f64,
    stream: &mut RandomStream,
) -> Result<OverlapEstimate> {
    let shots = overlap_shot_count(eps, delta)?;
    let phi = oracle.column_unit(i)?;
    let psi = oracle.column_unit(j)?;
    let zeros = if shots <= LITERAL_SHOT_CAP {
        let mut zeros = 0u64;
        for _ in 0..shots {
            zeros += (backend.hadamard_test_shot(oracle, &phi, &psi, stream)? == 0) as u64;
        }
        zeros
    } else {
        let p0 = backend.hadamard_test_prob_zero(&phi, &psi)?;
        oracle.charge(2 * shots);
        stream.binomial(shots, p0)
    };
    let value = 2.0 * zeros as f64 / shots as f64 - 1.0;
    Ok(OverlapEstimate { value, shots, eps, delta })
}

/// Estimate `|⟨φ|ψ⟩|²` by `shots` swap tests (`P(0) = (1 + ⟨φ|ψ⟩²)/2`),
/// returning `2m/n − 1`. The returned value can dip slightly below 0 by
/// shot noise; callers clamp where a square is required.
pub fn swap_test_sq_overlap(
    oracle: &TreeOracle,
    backend: &dyn Backend,
    phi: &[f64],
    psi: &[f64],
    shots: u64,
    stream: &mut RandomStream,
) -> Result<f64> {
    if shots == 0 {
        return Err(Error::validation("swap test needs at least one shot"));
    }
    let zeros = if shots <= LITERAL_SHOT_CAP {
        let mut zeros = 0u64;
        for _ in 0..shots {
            zeros += (backend.swap_test_shot(oracle, phi, psi, stream)? == 0) as u64;
        }
        zeros
    } else {
        let p0 = backend.swap_test_prob_zero(phi, psi)?;
        oracle.charge(2 * shots);
        stream.binomial(shots, p0)
    };
    Ok(2.0 * zeros as f64 / shots as f64 - 1.0)
}

/// Where the estimators' copies of the target state come from.
#[derive(Debug, Clone, Copy)]
pub enum TargetSource<'a> {
    /// Verification mode: every copy is the exact eigenvector of the given
    /// block, at zero oracle cost. Isolates estimator error from pipeline
    /// error.
    Exact { decomp: &'a SpectralDecomposition, block: usize },
    /// Production mode: every copy re-runs the post-selection pipeline,
    /// redrawing the channel until the magnitude estimate lands within
    /// `eps/2` of `center`.
    Pipeline {
        decomp: &'a SpectralDecomposition,
        config: &'a SVEConfig,
        /// Working magnitude estimate from the labelling phase.
        center: f64,
        eps: f64,
        /// Redraw budget per copy; exhausting it fails the estimate.
        max_attempts: u64,
    },
}

impl<'a> TargetSource<'a> {
    fn decomp(&self) -> &'a SpectralDecomposition {
        match self {
            TargetSource::Exact { decomp, .. } => decomp,
            TargetSource::Pipeline { decomp, .. } => decomp,
        }
    }

    /// Working estimate of the target magnitude `|λ̃_t|`.
    pub fn magnitude(&self) -> f64 {
        match self {
            TargetSource::Exact { decomp, block } => decomp.eigenvalues[*block].abs(),
            TargetSource::Pipeline { center, .. } => *center,
        }
    }

    /// The eigenvector a copy collapsed to (fixed global sign convention;
    /// every consumer below is invariant under `u_t → −u_t`).
    pub fn vector(&self, block: usize) -> &'a [f64] {
        &self.decomp().eigenvectors[block]
    }

    /// Distribution over eigen-blocks of one accepted copy, plus the
    /// per-attempt acceptance rate (1 for the exact source). The pipeline
    /// mixture weights each block `k` by `(λ_k/F)²` times the probability
    /// that its magnitude estimate (or a garbage draw) matches the center.
    pub fn outcome_distribution(&self) -> Result<(Vec<f64>, f64)> {
        match self {
            TargetSource::Exact { decomp, block } => {
                let mut q = vec![0.0; decomp.rank()];
                q[*block] = 1.0;
                Ok((q, 1.0))
            }
            TargetSource::Pipeline { decomp, config, center, eps, max_attempts } => {
                let f = decomp.f_norm;
                let mut q: Vec<f64> = decomp
                    .eigenvalues
                    .iter()
                    .map(|&l| {
                        (l / f).powi(2)
                            * acceptance_probability(l.abs(), *center, eps / 2.0, f, config)
                    })
                    .collect();
                let accept: f64 = q.iter().sum();
                if accept <= 0.0 {
                    return Err(Error::TargetExhausted { iterations: *max_attempts });
                }
                for w in &mut q {
                    *w /= accept;
                }
                Ok((q, accept))
            }
        }
    }

    /// Expected oracle queries per accepted copy: 2 per channel attempt,
    /// geometric in the acceptance rate.
    pub fn queries_per_draw(&self) -> Result<f64> {
        match self {
            TargetSource::Exact { .. } => Ok(0.0),
            TargetSource::Pipeline { .. } => {
                let (_, accept) = self.outcome_distribution()?;
                Ok(2.0 / accept)
            }
        }
    }

    /// Draw one target copy, returning the collapsed eigen-block.
    pub fn draw_block(&self, oracle: &TreeOracle, stream: &mut RandomStream) -> Result<usize> {
        match self {
            TargetSource::Exact { block, .. } => Ok(*block),
            TargetSource::Pipeline { decomp, config, center, eps, max_attempts } => {
                generate_target_state(decomp, oracle, config, *center, *eps, *max_attempts, stream)
                    .map(|draw| draw.block)
            }
        }
    }
}

/// Estimate `E[|⟨u_t|ψ⟩|²]` over fresh target copies: `shots` swap tests,
/// each against an independently drawn copy. Above the literal cap the
/// copy mixture is sampled in closed form — a multinomial over the
/// accepted-block distribution, then per-block bulk swap counts — with the
/// expected pipeline query cost charged up front.
pub fn swap_test_vs_target(
    oracle: &TreeOracle,
    backend: &dyn Backend,
    source: &TargetSource,
    psi: &[f64],
    shots: u64,
    stream: &mut RandomStream,
) -> Result<f64> {
    if shots == 0 {
        return Err(Error::validation("swap test needs at least one shot"));
    }
    let zeros = if shots <= LITERAL_SHOT_CAP {
        let mut zeros = 0u64;
        for _ in 0..shots {
            let block = source.draw_block(oracle, stream)?;
            zeros +=
                (backend.swap_test_shot(oracle, source.vector(block), psi, stream)? == 0) as u64;
        }
        zeros
    } else {
        let (q, _) = source.outcome_distribution()?;
        let pipeline_cost = (shots as f64 * source.queries_per_draw()?).round() as u64;
        oracle.charge(pipeline_cost + 2 * shots);
        let counts = stream.multinomial(shots, &q);
        let mut zeros = 0u64;
        for (block, &n_b) in counts.iter().enumerate() {
            if n_b == 0 {
                continue;
            }
            let p0 = backend.swap_test_prob_zero(source.vector(block), psi)?;
            zeros += stream.binomial(n_b, p0);
        }
        zeros
    };
    Ok(2.0 * zeros as f64 / shots as f64 - 1.0)
}

/// Result of the anchor scan over all columns.
#[derive(Debug, Clone)]
pub struct AnchorSelection {
    /// Column with the largest estimated `|⟨u_t|ĥ_i⟩|²`.
    pub index: usize,
    /// The winning estimate.
    pub best: f64,
    /// Sanity floor `λ̃_t²/(2F²)` the winner had to clear (half the
    /// guaranteed maximum, leaving room for shot noise).
    pub floor: f64,
    /// Per-column estimates; zero-norm columns are recorded as `−∞` and
    /// never win.
    pub estimates: Vec<f64>,
}

/// Scan every column for the anchor `k = argmax_i |⟨u_t|ĥ_i⟩|²`. The true
/// maximum is at least `λ_t²/F²`, so a winner below half that floor
/// signals a corrupted target source and fails the scan.
pub fn find_anchor_index(
    oracle: &TreeOracle,
    backend: &dyn Backend,
    source: &TargetSource,
    shots_per_column: u64,
    stream: &mut RandomStream,
) -> Result<AnchorSelection> {
    let d = oracle.dim();
    let f = oracle.frobenius_norm();
    let mut estimates = vec![f64::NEG_INFINITY; d];
    for i in 0..d {
        let psi = match oracle.column_unit(i) {
            Ok(v) => v,
            Err(Error::ZeroColumn { .. }) => continue,
            Err(e) => return Err(e),
        };
        estimates[i] = swap_test_vs_target(oracle, backend, source, &psi, shots_per_column, stream)?;
    }
    let index = estimates
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.total_cmp(b))
        .map(|(i, _)| i)
        .expect("oracle dimension is nonzero");
    let best = estimates[index];
    let floor = (source.magnitude() / f).powi(2) / 2.0;
    if best < floor {
        return Err(Error::AnchorFloor { best, floor });
    }
    Ok(AnchorSelection { index, best, floor, estimates })
}

/// A signed-overlap estimate with its diagnostic trail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedOverlap {
    /// The estimate of `b_i = sgn(u_t⁽ᵏ⁾)·⟨u_t|s_i⟩`.
    pub value: f64,
    /// Magnitude `√max(b̂², 0)` from the squared-overlap stage.
    pub magnitude: f64,
    /// Discriminant `Z̃₊²Â₊ − Z̃₋²Â₋`, when the sign stage ran.
    pub discriminant: Option<f64>,
    /// The small-overlap shortcut returned 0 without a sign stage.
    pub shortcut: bool,
    /// The discriminant fell inside its own deterministic error budget:
    /// either sign still satisfies the ε contract (the true overlap is
    /// necessarily small), but the call is flagged.
    pub low_confidence: bool,
}

/// Estimate `b_i = sgn(u_t⁽ᵏ⁾)·⟨u_t|s_i⟩` for the selected column
/// `g(i)` against anchor column `k`, to `|estimate − b_i| ≤ ε` with
/// confidence `1 − δ`.
///
/// Stage 1 estimates the magnitude from `b̂²` at square precision `ε²/4`;
/// values at or below `(ε/2)²` short-circuit to 0 (then `|b| ≤ ε/√2`).
/// Stage 2 recovers the sign from the discriminant
/// `Z̃₊²Â₊ − Z̃₋²Â₋ = 4⟨u_t|ĥ_k⟩⟨u_t|ĥ_{g(i)}⟩ + noise`, estimating each
/// branch to `(ε/2)·λ̃_t/(2F)` and the normalizer overlap `⟨ĥ_k|ĥ_{g(i)}⟩`
/// to half that, so a wrong sign is possible only where `|b_i| ≤ 3ε/8` —
/// and there the total error `|b̂| + |b_i|` still fits inside ε. Since
/// targets carry negative eigenvalues, `sgn(u_t⁽ᵏ⁾) = −sgn(⟨u_t|ĥ_k⟩)` and
/// the composed sign is `sgn(−discriminant)`; ties resolve positive with
/// the low-confidence flag raised. The confidence budget splits δ/4 per
/// sub-estimate.
pub fn signed_overlap_b_detailed(
    oracle: &TreeOracle,
    backend: &dyn Backend,
    source: &TargetSource,
    selected: usize,
    anchor: usize,
    eps: f64,
    delta: f64,
    stream: &mut RandomStream,
) -> Result<SignedOverlap> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::validation(format!("eps must be in (0, 1), got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::validation(format!("delta must be in (0, 1), got {delta}")));
    }
    let f = oracle.frobenius_norm();
    let lambda = source.magnitude();
    if !(lambda > 0.0) {
        return Err(Error::validation("target magnitude must be positive"));
    }
    let eps_prime = eps / 2.0;
    let sub_delta = delta / 4.0;

    let s_col = oracle.column_unit(selected)?;
    let n_sq = overlap_shot_count(eps * eps / 4.0, sub_delta)?;
    let b_sq = swap_test_vs_target(oracle, backend, source, &s_col, n_sq, stream)?;
    let magnitude = b_sq.max(0.0).sqrt();
    if b_sq <= eps_prime * eps_prime {
        return Ok(SignedOverlap {
            value: 0.0,
            magnitude,
            discriminant: None,
            shortcut: true,
            low_confidence: false,
        });
    }

    let h_k = oracle.column_unit(anchor)?;
    let branch_prec = eps_prime * lambda / (2.0 * f);
    let n_branch = overlap_shot_count(branch_prec, sub_delta)?;

    // Z̃±² = 2 ± 2c̃ from an estimated ⟨ĥ_k|ĥ_{g(i)}⟩; the anchor column
    // against itself needs no estimate (c = 1 by construction).
    let (z_plus_sq, z_minus_sq, c_err) = if selected == anchor {
        (4.0, 0.0, 0.0)
    } else {
        let c = hadamard_test_overlap(
            oracle,
            backend,
            anchor,
            selected,
            branch_prec / 2.0,
            sub_delta,
            stream,
        )?;
        (
            (2.0 + 2.0 * c.value).max(0.0),
            (2.0 - 2.0 * c.value).max(0.0),
            branch_prec / 2.0,
        )
    };

    // Each branch estimates |⟨u_t|ψ±⟩|² for ψ± ∝ ĥ_k ± ĥ_{g(i)}; a branch
    // whose combination has zero norm contributes an exact zero.
    let mut branch = |sign: f64, z_sq: f64| -> Result<f64> {
        if z_sq == 0.0 {
            return Ok(0.0);
        }
        let v: Vec<f64> = h_k.iter().zip(&s_col).map(|(a, b)| a + sign * b).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-9 {
            return Ok(0.0);
        }
        let psi: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let a_hat =
            swap_test_vs_target(oracle, backend, source, &psi, n_branch, stream)?.max(0.0);
        Ok(z_sq * a_hat)
    };
    let plus_term = branch(1.0, z_plus_sq)?;
    let minus_term = branch(-1.0, z_minus_sq)?;

    let discriminant = plus_term - minus_term;
    let budget = (z_plus_sq + z_minus_sq) * branch_prec + 2.0 * c_err * 2.0;
    let low_confidence = discriminant.abs() <= budget;
    let sign = if discriminant > 0.0 { -1.0 } else { 1.0 };
    Ok(SignedOverlap {
        value: sign * magnitude,
        magnitude,
        discriminant: Some(discriminant),
        shortcut: false,
        low_confidence,
    })
}

/// Upper bound on the oracle charge one signed-overlap estimate may incur
/// at contract `(eps, delta)`: the stage-1 square estimate and the two
/// interference branches each cost their shot count times `2 + qpd`
/// queries (two per circuit shot plus the target-regeneration price), and
/// the anchor-pair Gram entry costs two per shot. The shortcut can only
/// make an actual run cheaper. Errors if any required count overflows,
/// which is the signal that these tolerances are unaffordable outright.
pub fn signed_overlap_budget(
    magnitude: f64,
    f_norm: f64,
    queries_per_draw: f64,
    eps: f64,
    delta: f64,
) -> Result<f64> {
    let eps_prime = eps / 2.0;
    let sub_delta = delta / 4.0;
    let per_shot = 2.0 + queries_per_draw;
    let stage1 = overlap_shot_count(eps * eps / 4.0, sub_delta)? as f64 * per_shot;
    let branch_prec = eps_prime * magnitude / (2.0 * f_norm);
    let gram_pair = 2.0 * overlap_shot_count(branch_prec / 2.0, sub_delta)? as f64;
    let branches = 2.0 * overlap_shot_count(branch_prec, sub_delta)? as f64 * per_shot;
    Ok(stage1 + gram_pair + branches)
}

/// [`signed_overlap_b_detailed`] reduced to the estimate itself.
pub fn signed_overlap_b(
    oracle: &TreeOracle,
    backend: &dyn Backend,
    source: &TargetSource,
    selected: usize,
    anchor: usize,
    eps: f64,
    delta: f64,
    stream: &mut RandomStream,
) -> Result<f64> {
    signed_overlap_b_detailed(oracle, backend, source, selected, anchor, eps, delta, stream)
        .map(|s| s.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::lookup;
    use crate::hessian::{canonical_instance, eigendecompose, generate_synthetic, Hessian};
    use crate::ncf::target_iterations;
    use proptest::prelude::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Classical `b_i = sgn(u_t⁽ᵏ⁾)·⟨u_t|ĥ_{g(i)}⟩`.
    fn classical_b(h: &Hessian, u_t: &[f64], anchor: usize, selected: usize) -> f64 {
        let s: Vec<f64> =
            h.column(selected).iter().map(|x| x / h.column_norm(selected)).collect();
        u_t[anchor].signum() * dot(u_t, &s)
    }

    #[test]
    fn shot_count_fixed_point_and_validation() {
        assert_eq!(overlap_shot_count(0.1, 0.05).unwrap(), 738);
        assert!(overlap_shot_count(0.05, 0.05).unwrap() > overlap_shot_count(0.1, 0.05).unwrap());
        assert!(overlap_shot_count(0.0, 0.5).is_err());
        assert!(overlap_shot_count(0.1, 1.0).is_err());
        // Counts past u64 are a clean error, not a wrapped counter.
        assert!(overlap_shot_count(1e-12, 0.05).is_err());
    }

    #[test]
    fn signed_overlap_charge_stays_within_its_budget() {
        let h = canonical_instance();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let decomp = eigendecompose(&h).unwrap();
        let source = TargetSource::Exact { decomp: &decomp, block: 0 };
        let f = oracle.frobenius_norm();
        let planned =
            signed_overlap_budget(source.magnitude(), f, 0.0, 0.01, 0.05).unwrap();
        let mut stream = RandomStream::from_seed(44);
        for selected in [3usize, 12] {
            oracle.reset_queries();
            signed_overlap_b_detailed(
                &oracle, backend, &source, selected, 12, 0.01, 0.05, &mut stream,
            )
            .unwrap();
            let actual = oracle.queries() as f64;
            assert!(actual <= planned, "column {selected}: {actual:.3e} > {planned:.3e}");
            assert!(actual > 0.0);
        }
    }

    #[test]
    fn identical_columns_give_exact_unit_overlap() {
        let h = canonical_instance();
        let oracle = TreeOracle::build(&h);
        let mut stream = RandomStream::from_seed(41);
        for name in ["statevector", "analytic"] {
            let backend = lookup(name).unwrap();
            let est =
                hadamard_test_overlap(&oracle, backend, 3, 3, 0.3, 0.3, &mut stream).unwrap();
            assert_eq!(est.value, 1.0);
        }
    }

    #[test]
    fn orthogonal_columns_estimate_near_zero() {
        // A diagonal instance has exactly orthogonal columns.
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let mut row = vec![0.0; 4];
                row[i] = [-0.8, 0.5, 0.0, 0.0][i];
                row
            })
            .collect();
        let h = Hessian::new(4, 2, 1.0, &rows).unwrap();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let mut stream = RandomStream::from_seed(42);
        let est = hadamard_test_overlap(&oracle, backend, 0, 1, 0.1, 0.05, &mut stream).unwrap();
        assert_eq!(est.shots, 738);
        assert!(est.value.abs() <= 0.1, "estimate {} too far from 0", est.value);
    }

    #[test]
    fn hadamard_estimates_meet_their_contract() {
        // Coverage experiment: the (ε, δ) contract on the canonical pair
        // (1, 2), with the failure rate far below δ across 1000 trials.
        let h = canonical_instance();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let truth = dot(&oracle.column_unit(1).unwrap(), &oracle.column_unit(2).unwrap());
        let (eps, delta) = (0.1, 0.05);
        let mut failures = 0;
        for seed in 0..1000 {
            let mut stream = RandomStream::from_seed(1000 + seed);
            let est =
                hadamard_test_overlap(&oracle, backend, 1, 2, eps, delta, &mut stream).unwrap();
            if (est.value - truth).abs() > eps {
                failures += 1;
            }
        }
        assert!(failures <= 50, "{failures} failures out of 1000 at δ = {delta}");
    }

    #[test]
    fn hadamard_query_cost_is_two_per_shot() {
        let h = canonical_instance();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let mut stream = RandomStream::from_seed(43);
        let est = hadamard_test_overlap(&oracle, backend, 0, 1, 0.2, 0.2, &mut stream).unwrap();
        assert_eq!(oracle.queries(), 2 * est.shots);
        // Bulk route charges the same total.
        oracle.reset_queries();
        let est = hadamard_test_overlap(&oracle, backend, 0, 1, 1e-3, 0.2, &mut stream).unwrap();
        assert!(est.shots > LITERAL_SHOT_CAP);
        assert_eq!(oracle.queries(), 2 * est.shots);
    }

    proptest! {
        // P(0) = (1 + ⟨φ|ψ⟩²)/2 exactly on both backends, for arbitrary
        // state pairs.
        #[test]
        fn swap_test_prob_matches_closed_form(seed in 0u64..500) {
            let mut stream = RandomStream::from_seed(seed);
            let phi = stream.unit_vector(4);
            let psi = stream.unit_vector(4);
            let expect = 0.5 * (1.0 + dot(&phi, &psi).powi(2));
            for name in ["statevector", "analytic"] {
                let p0 = lookup(name).unwrap().swap_test_prob_zero(&phi, &psi).unwrap();
                prop_assert!((p0 - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swap_test_known_square_overlap() {
        let h = canonical_instance();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        // ⟨φ|ψ⟩ = 0.6 by construction.
        let mut phi = vec![0.0; 16];
        phi[0] = 1.0;
        let mut psi = vec![0.0; 16];
        psi[0] = 0.6;
        psi[1] = 0.8;
        let mut stream = RandomStream::from_seed(44);
        let est =
            swap_test_sq_overlap(&oracle, backend, &phi, &psi, 10_000, &mut stream).unwrap();
        assert!((est - 0.36).abs() <= 0.02, "estimate {est}");
        // Identical states sit at the endpoint exactly.
        let exact =
            swap_test_sq_overlap(&oracle, backend, &phi, &phi, 100, &mut stream).unwrap();
        assert_eq!(exact, 1.0);
    }

    #[test]
    fn bulk_swap_route_matches_the_probability() {
        let h = canonical_instance();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let decomp = eigendecompose(&h).unwrap();
        let source = TargetSource::Exact { decomp: &decomp, block: 0 };
        let psi = oracle.column_unit(2).unwrap();
        let truth = dot(decomp.eigenvectors[0].as_slice(), &psi).powi(2);
        let shots = 4 * LITERAL_SHOT_CAP;
        let mut stream = RandomStream::from_seed(45);
        let est = swap_test_vs_target(&oracle, backend, &source, &psi, shots, &mut stream).unwrap();
        // Three standard errors of the bulk count draw.
        let sd = 2.0 / (shots as f64).sqrt();
        assert!((est - truth).abs() <= 3.0 * sd, "estimate {est} vs {truth}");
        assert_eq!(oracle.queries(), 2 * shots);
    }

    #[test]
    fn pipeline_source_distribution_and_query_cost() {
        let h = canonical_instance();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let decomp = eigendecompose(&h).unwrap();
        let config = SVEConfig::for_epsilon(0.2, 16).unwrap();
        let source = TargetSource::Pipeline {
            decomp: &decomp,
            config: &config,
            center: 0.6,
            eps: 0.2,
            max_attempts: target_iterations(decomp.f_norm, 0.5, 0.01),
        };
        // With hard-bounded noise and ε-separated magnitudes only the true
        // block can match the center through the success branch; the
        // garbage branch contributes ~p_fail.
        let (q, accept) = source.outcome_distribution().unwrap();
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(q[0] > 0.999, "q = {q:?}");
        let lam_share = (decomp.eigenvalues[0] / decomp.f_norm).powi(2);
        assert!((accept - lam_share).abs() < 1e-3, "accept = {accept}");

        // Bulk route: deterministic expected query charge.
        let psi = oracle.column_unit(0).unwrap();
        let shots = 2 * LITERAL_SHOT_CAP;
        let mut stream = RandomStream::from_seed(46);
        swap_test_vs_target(&oracle, backend, &source, &psi, shots, &mut stream).unwrap();
        let expected =
            (shots as f64 * source.queries_per_draw().unwrap()).round() as u64 + 2 * shots;
        assert_eq!(oracle.queries(), expected);

        // Literal route agrees with the closed-form mixture.
        oracle.reset_queries();
        let truth: f64 = q
            .iter()
            .enumerate()
            .map(|(k, w)| w * dot(decomp.eigenvectors[k].as_slice(), &psi).powi(2))
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        let est =
            swap_test_vs_target(&oracle, backend, &source, &psi, 4096, &mut stream).unwrap();
        assert!((est - truth).abs() < 0.05, "literal estimate {est} vs {truth}");
        assert!(oracle.queries() > 2 * 4096, "pipeline draws must cost queries");
    }

    #[test]
    fn anchor_matches_classical_argmax() {
        let h = canonical_instance();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let decomp = eigendecompose(&h).unwrap();
        let u_t = decomp.eigenvectors[0].as_slice();
        let classical = (0..16)
            .max_by(|&a, &b| {
                let va = dot(u_t, &oracle.column_unit(a).unwrap()).powi(2);
                let vb = dot(u_t, &oracle.column_unit(b).unwrap()).powi(2);
                va.total_cmp(&vb)
            })
            .unwrap();
        let source = TargetSource::Exact { decomp: &decomp, block: 0 };
        // The runner-up column trails by under 0.01, so resolving the true
        // argmax takes bulk-route shot counts (estimate sd ≈ 1.5e−4 here).
        let mut stream = RandomStream::from_seed(47);
        let anchor = find_anchor_index(&oracle, backend, &source, 1 << 22, &mut stream).unwrap();
        assert_eq!(anchor.index, classical);
        assert!(anchor.best >= anchor.floor);
    }

    #[test]
    fn anchor_on_rank_one_instance_matches_closed_form() {
        // Rank-1: |⟨u|ĥ_i⟩|² = 1 exactly on every nonzero column, and the
        // scan (ties broken by shot noise) must clear the floor λ²/(2F²) = ½.
        let h = generate_synthetic(6, 1, &[-0.9], 1.0, 0.0, 11).unwrap();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let decomp = eigendecompose(&h).unwrap();
        let source = TargetSource::Exact { decomp: &decomp, block: 0 };
        let mut stream = RandomStream::from_seed(48);
        let anchor = find_anchor_index(&oracle, backend, &source, 512, &mut stream).unwrap();
        assert!((anchor.floor - 0.5).abs() < 1e-12);
        assert!(anchor.best > 0.9);
        assert!(anchor.estimates.iter().all(|&e| e > 0.9));
    }

    #[test]
    fn anchor_floor_rejects_corrupted_source() {
        // A center in no cluster's reach is only ever matched by the
        // garbage branch, so every copy is a background-mixture draw. On a
        // diagonal instance the best achievable squared overlap is then
        // max_k q_k ≈ 0.34, below the claimed floor (0.8/F)²/2 ≈ 0.44.
        let diag = [-0.5, 0.45, -0.4, 0.35];
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let mut row = vec![0.0; 4];
                row[i] = diag[i];
                row
            })
            .collect();
        let h = Hessian::new(4, 4, 1.0, &rows).unwrap();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let decomp = eigendecompose(&h).unwrap();
        let config = SVEConfig::new(0.01, 0.05, 0.0, crate::sve::NoiseShape::Uniform).unwrap();
        let source = TargetSource::Pipeline {
            decomp: &decomp,
            config: &config,
            center: 0.8,
            eps: 0.2,
            max_attempts: 10_000,
        };
        let mut stream = RandomStream::from_seed(49);
        let err = find_anchor_index(&oracle, backend, &source, 70_000, &mut stream).unwrap_err();
        assert!(matches!(err, Error::AnchorFloor { .. }), "got {err}");
    }

    #[test]
    fn orthogonal_selected_column_shortcuts_to_zero() {
        // Diagonal instance: the target eigenvector is a coordinate axis,
        // orthogonal to every other column.
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let mut row = vec![0.0; 4];
                row[i] = [-0.8, 0.5, 0.0, 0.0][i];
                row
            })
            .collect();
        let h = Hessian::new(4, 2, 1.0, &rows).unwrap();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let decomp = eigendecompose(&h).unwrap();
        let block = decomp.min_index().unwrap();
        let source = TargetSource::Exact { decomp: &decomp, block };
        let anchor = decomp.eigenvectors[block]
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().total_cmp(&b.abs()))
            .map(|(i, _)| i)
            .unwrap();
        let selected = if anchor == 0 { 1 } else { 0 };
        let mut stream = RandomStream::from_seed(50);
        let est = signed_overlap_b_detailed(
            &oracle, backend, &source, selected, anchor, 0.2, 0.05, &mut stream,
        )
        .unwrap();
        assert!(est.shortcut);
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn anchor_column_overlap_is_forced_negative() {
        // b_k = sgn(u_t⁽ᵏ⁾)·⟨u_t|ĥ_k⟩ = −|⟨u_t|ĥ_k⟩| when λ_t < 0: the
        // degenerate i = k discriminant must resolve to the negative sign.
        let h = canonical_instance();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let decomp = eigendecompose(&h).unwrap();
        let u_t = decomp.eigenvectors[0].clone();
        let source = TargetSource::Exact { decomp: &decomp, block: 0 };
        let mut stream = RandomStream::from_seed(51);
        let anchor = find_anchor_index(&oracle, backend, &source, 4096, &mut stream).unwrap();
        let est = signed_overlap_b_detailed(
            &oracle, backend, &source, anchor.index, anchor.index, 0.2, 0.05, &mut stream,
        )
        .unwrap();
        let truth = classical_b(&h, &u_t, anchor.index, anchor.index);
        assert!(truth < 0.0);
        assert!(!est.shortcut);
        assert!(est.discriminant.unwrap() > 0.0);
        assert!((est.value - truth).abs() <= 0.2, "{} vs {truth}", est.value);
    }

    #[test]
    fn signed_overlaps_match_classical_values_without_sign_mixing() {
        // Estimates across a whole index set must agree entrywise with the
        // single classical sign convention — never a per-entry mixture.
        let h = canonical_instance();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let decomp = eigendecompose(&h).unwrap();
        let u_t = decomp.eigenvectors[0].clone();
        let source = TargetSource::Exact { decomp: &decomp, block: 0 };
        let eps = 0.2;
        let mut stream = RandomStream::from_seed(52);
        let anchor = find_anchor_index(&oracle, backend, &source, 4096, &mut stream).unwrap();
        for selected in [0usize, 3, 7, 12] {
            let est = signed_overlap_b(
                &oracle, backend, &source, selected, anchor.index, eps, 0.05, &mut stream,
            )
            .unwrap();
            let truth = classical_b(&h, &u_t, anchor.index, selected);
            assert!(
                (est - truth).abs() <= eps,
                "column {selected}: {est} vs classical {truth}"
            );
        }
    }

    #[test]
    fn rank_one_signed_overlaps_match_closed_form() {
        // Rank-1 closed form: ĥ_i = −sgn(u_i)·u (λ < 0), so
        // b_i = sgn(u_k)·⟨u|ĥ_i⟩ = −sgn(u_k)·sgn(u_i), a ±1 vector.
        let h = generate_synthetic(5, 1, &[-0.9], 1.0, 0.0, 13).unwrap();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let decomp = eigendecompose(&h).unwrap();
        let u = decomp.eigenvectors[0].clone();
        let source = TargetSource::Exact { decomp: &decomp, block: 0 };
        let eps = 0.3;
        let mut stream = RandomStream::from_seed(53);
        let anchor = find_anchor_index(&oracle, backend, &source, 2048, &mut stream).unwrap();
        for selected in 0..5 {
            let est = signed_overlap_b(
                &oracle, backend, &source, selected, anchor.index, eps, 0.05, &mut stream,
            )
            .unwrap();
            let truth = -u[anchor.index].signum() * u[selected].signum();
            assert!((est - truth).abs() <= eps, "column {selected}: {est} vs {truth}");
        }
    }

    #[test]
    fn pipeline_source_signed_overlap_stays_within_contract() {
        let h = canonical_instance();
        let oracle = TreeOracle::build(&h);
        let backend = lookup("analytic").unwrap();
        let decomp = eigendecompose(&h).unwrap();
        let config = SVEConfig::for_epsilon(0.2, 16).unwrap();
        let u_t = decomp.eigenvectors[0].clone();
        let source = TargetSource::Pipeline {
            decomp: &decomp,
            config: &config,
            center: 0.6,
            eps: 0.2,
            max_attempts: target_iterations(decomp.f_norm, 0.5, 0.01),
        };
        let mut stream = RandomStream::from_seed(54);
        let anchor = find_anchor_index(&oracle, backend, &source, 4096, &mut stream).unwrap();
        let est = signed_overlap_b(
            &oracle, backend, &source, 3, anchor.index, 0.2, 0.05, &mut stream,
        )
        .unwrap();
        let truth = classical_b(&h, &u_t, anchor.index, 3);
        assert!((est - truth).abs() <= 0.2, "{est} vs {truth}");
        assert!(oracle.queries() > 0);
    }
}

//! Coordinate read-out: assemble the estimated Gram system over the
//! selected columns, solve it, reconstruct the target direction as an
//! explicit vector, and verify the end-to-end curvature contract.
//!
//! The target satisfies `u_t = Σ x_i s_i` over the normalized selected
//! columns `s_i = ĥ_{g(i)}`, where `x` solves `C x = b` with
//! `c_ij = ⟨s_i|s_j⟩` and `b_i = ⟨u_t|s_i⟩`. Entries are only available as
//! shot estimates; the tolerance pair `ε₁ = ε/(6r²‖C⁻¹‖²)` (Gram entries)
//! and `ε₂ = ε/(6r‖C⁻¹‖)` (target overlaps) guarantees
//! `‖ũ_t − u_t‖ = √(ΔxᵀCΔx) ≤ ε/2` for every within-tolerance perturbation,
//! deterministically — not just in expectation. `‖C⁻¹‖` itself is unknown
//! in a real run, so blind mode bootstraps it: estimate the Gram at the
//! coarse `‖C⁻¹‖ = 1` tolerance, invert, apply a 2× safety factor, and
//! re-estimate at the implied tolerances.

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::estimation::{
    find_anchor_index, hadamard_test_overlap, overlap_shot_count, signed_overlap_b_detailed,
    signed_overlap_budget, TargetSource,
};
use crate::hessian::{independence_check, Hessian, NCFParams};
use crate::linalg::{solve_gauss, sym_inverse_norm, Matrix};
use crate::oracle::TreeOracle;
use crate::rng::RandomStream;

/// Ceiling on the planned oracle charge of one blind read-out, in queries.
/// Keeps cumulative run tallies comfortably inside exact u64 arithmetic;
/// selections whose conditioning demands more get reselected instead.
pub const ESTIMATION_CHARGE_BUDGET: f64 = (1u64 << 62) as f64;

/// Read-out tolerances for a rank-`r` system with inverse-Gram norm
/// `‖C⁻¹‖`: entrywise Gram precision `ε₁ = ε/(6r²‖C⁻¹‖²)` and overlap
/// precision `ε₂ = ε/(6r‖C⁻¹‖)`.
pub fn readout_tolerances(r: usize, c_inv_norm: f64, eps: f64) -> Result<(f64, f64)> {
    if r == 0 {
        return Err(Error::validation("rank must be positive"));
    }
    if !(c_inv_norm >= 1.0) {
        return Err(Error::validation(format!(
            "a Gram matrix of unit vectors has ‖C⁻¹‖ ≥ 1, got {c_inv_norm}"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::validation(format!("eps must be in (0, 1), got {eps}")));
    }
    let rf = r as f64;
    let eps1 = eps / (6.0 * rf * rf * c_inv_norm * c_inv_norm);
    let eps2 = eps / (6.0 * rf * c_inv_norm);
    Ok((eps1, eps2))
}

/// How the Gram system's entries are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutMode {
    /// Estimate every entry from shots, bootstrapping `‖C̃⁻¹‖` from the
    /// estimated Gram itself (two passes, 2× safety factor).
    Blind,
    /// Classical reference path: exact Gram, exact overlaps, exact
    /// `‖C⁻¹‖`. Isolates the solve/reconstruction error from estimator
    /// error.
    Verification,
}

/// The estimated linear system mapping selected-column coordinates to the
/// target direction.
#[derive(Debug, Clone)]
pub struct GramSystem {
    /// Selected column indices `g(1..r)`.
    pub indices: Vec<usize>,
    /// Anchor column fixing the target's global sign convention.
    pub anchor: usize,
    /// Estimated Gram `C̃` (diagonal exactly 1, symmetrized by averaging).
    pub c: Matrix,
    /// Estimated signed overlaps `b̃_i = sgn(u_t⁽ᵏ⁾)·⟨u_t|s_i⟩`.
    pub b: Vec<f64>,
    /// Entrywise tolerances the system was estimated to.
    pub eps1: f64,
    pub eps2: f64,
    /// The `‖C⁻¹‖` value the tolerances were derived from.
    pub c_inv_norm: f64,
}

/// Exact Gram of the normalized selected columns.
fn exact_gram(h: &Hessian, indices: &[usize]) -> Matrix {
    let units: Vec<Vec<f64>> = indices
        .iter()
        .map(|&g| {
            let n = h.column_norm(g);
            h.column(g).iter().map(|x| x / n).collect()
        })
        .collect();
    let r = indices.len();
    let mut c = Matrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            c.set(i, j, units[i].iter().zip(&units[j]).map(|(a, b)| a * b).sum());
        }
    }
    c
}

/// One estimation pass over the off-diagonal Gram entries at entrywise
/// precision `eps1`, each unordered pair averaged over its two orders.
fn estimate_gram(
    oracle: &TreeOracle,
    backend: &dyn Backend,
    indices: &[usize],
    eps1: f64,
    entry_delta: f64,
    stream: &mut RandomStream,
) -> Result<Matrix> {
    let r = indices.len();
    let mut c = Matrix::identity(r);
    for i in 0..r {
        for j in (i + 1)..r {
            let once = hadamard_test_overlap(
                oracle, backend, indices[i], indices[j], eps1, entry_delta, stream,
            )?;
            let again = hadamard_test_overlap(
                oracle, backend, indices[j], indices[i], eps1, entry_delta, stream,
            )?;
            let avg = 0.5 * (once.value + again.value);
            c.set(i, j, avg);
            c.set(j, i, avg);
        }
    }
    Ok(c)
}

/// Assemble the read-out system for the selected columns: scan for the
/// anchor, estimate the Gram entries to `ε₁` and the signed overlaps to
/// `ε₂`, with per-entry confidence `δ/(r² + r)` so the union meets `δ`.
///
/// The selected set must be linearly independent (checked against the
/// exact instance; basis selection guarantees it for its own output). In
/// blind mode the instance is touched for nothing else — `‖C⁻¹‖` is
/// bootstrapped from the estimated Gram. The anchor scan budget reuses the
/// per-entry confidence slice; a suboptimal anchor only shrinks the sign
/// margin, never breaks the convention.
pub fn assemble_gram_system(
    h: &Hessian,
    oracle: &TreeOracle,
    backend: &dyn Backend,
    source: &TargetSource,
    indices: &[usize],
    eps: f64,
    delta: f64,
    mode: ReadoutMode,
    stream: &mut RandomStream,
) -> Result<GramSystem> {
    let r = indices.len();
    if r == 0 {
        return Err(Error::validation("empty index set"));
    }
    if !independence_check(h, indices)? {
        return Err(Error::Conditioning(format!(
            "selected columns {indices:?} are not linearly independent"
        )));
    }
    let entry_delta = delta / ((r * r + r) as f64);
    let f = oracle.frobenius_norm();

    if mode == ReadoutMode::Verification {
        // The classical reference path touches no shots at all: exact
        // Gram, exact overlaps, exact ‖C⁻¹‖, and the anchor is the true
        // argmax of the squared column overlaps.
        let u_t = source.vector(reference_block(source)?);
        let anchor = (0..h.d)
            .filter(|&i| h.column_norm(i) > 0.0)
            .max_by(|&i, &j| {
                let ov = |g: usize| {
                    let n = h.column_norm(g);
                    let v: f64 = u_t.iter().zip(h.column(g)).map(|(a, b)| a * b / n).sum();
                    v * v
                };
                ov(i).total_cmp(&ov(j))
            })
            .ok_or_else(|| Error::validation("instance has no nonzero column"))?;
        let c = exact_gram(h, indices);
        let c_inv_norm = sym_inverse_norm(&c)?.max(1.0);
        let (eps1, eps2) = readout_tolerances(r, c_inv_norm, eps)?;
        let b = indices
            .iter()
            .map(|&g| {
                let n = h.column_norm(g);
                let overlap: f64 =
                    u_t.iter().zip(h.column(g)).map(|(a, b)| a * b / n).sum();
                u_t[anchor].signum() * overlap
            })
            .collect();
        return Ok(GramSystem {
            indices: indices.to_vec(),
            anchor,
            c,
            b,
            eps1,
            eps2,
            c_inv_norm,
        });
    }

    // Anchor scan: per-column precision half the guaranteed floor.
    let scan_precision = (source.magnitude() / f).powi(2) / 4.0;
    let scan_shots = overlap_shot_count(scan_precision, entry_delta)?;
    let anchor = find_anchor_index(oracle, backend, source, scan_shots, stream)?;

    // Blind pass 1: coarse tolerances at the ‖C⁻¹‖ ≥ 1 floor.
    let (coarse_eps1, _) = readout_tolerances(r, 1.0, eps)?;
    let coarse = estimate_gram(oracle, backend, indices, coarse_eps1, entry_delta, stream)?;
    let first_pass = sym_inverse_norm(&coarse)
        .map_err(|e| Error::Conditioning(format!("first-pass Gram is not invertible: {e}")))?;
    // The 2× safety factor certifies ‖C⁻¹‖ ≤ 2‖C̃₁⁻¹‖ only while the
    // pass-1 perturbation ‖ΔC‖ ≤ r·ε₁ keeps ‖C⁻¹‖·‖ΔC‖ < 1/2; past that
    // the bootstrap proves nothing and the basis must be reselected.
    if first_pass >= 1.0 / (2.0 * r as f64 * coarse_eps1) {
        return Err(Error::Conditioning(format!(
            "first-pass ‖C̃⁻¹‖ = {first_pass:.3e} is outside the bootstrap's trust \
             region at coarse tolerance {coarse_eps1:.3e}; reselect the basis"
        )));
    }
    let c_inv_norm = (2.0 * first_pass).max(1.0);

    // Blind pass 2: re-estimate everything at the implied tolerances.
    let (eps1, eps2) = readout_tolerances(r, c_inv_norm, eps)?;

    // Affordability: the planned worst-case charge at these tolerances
    // must fit the accounting budget. A basis conditioned badly enough to
    // blow it is cheaper to reselect than to estimate — on hardware those
    // shots are wall time, and here the tallies must stay exact.
    let qpd = source.queries_per_draw()?;
    let planned = (|| -> Result<f64> {
        let per_entry =
            signed_overlap_budget(source.magnitude(), f, qpd, eps2, entry_delta)?;
        let gram_shots = overlap_shot_count(eps1, entry_delta)? as f64;
        Ok(r as f64 * per_entry + (r * (r - 1)) as f64 * 2.0 * gram_shots)
    })()
    .map_err(|_| {
        Error::Conditioning(format!(
            "bootstrapped ‖C⁻¹‖ = {c_inv_norm:.3e} implies tolerances beyond any \
             supportable shot count; reselect the basis"
        ))
    })?;
    if planned > ESTIMATION_CHARGE_BUDGET {
        return Err(Error::Conditioning(format!(
            "bootstrapped ‖C⁻¹‖ = {c_inv_norm:.3e} implies a planned charge of \
             {planned:.3e} queries, over the {ESTIMATION_CHARGE_BUDGET:.3e} budget; \
             reselect the basis"
        )));
    }
    let c = estimate_gram(oracle, backend, indices, eps1, entry_delta, stream)?;
    let refreshed = sym_inverse_norm(&c)?;
    if refreshed > c_inv_norm {
        return Err(Error::Conditioning(format!(
            "bootstrapped ‖C⁻¹‖ = {c_inv_norm:.3e} fell below the re-estimated \
             {refreshed:.3e}; the first-pass Gram was too optimistic"
        )));
    }

    let mut b = Vec::with_capacity(r);
    for &g in indices {
        let est = signed_overlap_b_detailed(
            oracle, backend, source, g, anchor.index, eps2, entry_delta, stream,
        )?;
        b.push(est.value);
    }
    Ok(GramSystem {
        indices: indices.to_vec(),
        anchor: anchor.index,
        c,
        b,
        eps1,
        eps2,
        c_inv_norm,
    })
}

/// The eigen-block a verification-mode read-out treats as ground truth:
/// the exact source's block, or the pipeline block nearest its center.
fn reference_block(source: &TargetSource) -> Result<usize> {
    match source {
        TargetSource::Exact { block, .. } => Ok(*block),
        TargetSource::Pipeline { decomp, center, .. } => decomp
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (a.abs() - center).abs().total_cmp(&(b.abs() - center).abs())
            })
            .map(|(k, _)| k)
            .ok_or_else(|| Error::validation("empty decomposition")),
    }
}

/// Solve `C̃ x̃ = b̃` by Gaussian elimination with partial pivoting.
/// Requires the condition estimate `‖C̃⁻¹‖ < 1/(2·r·ε₁)` (otherwise the
/// tolerance regime cannot hold and the basis must be reselected) and a
/// relative residual at solver precision.
pub fn solve_coordinates(system: &GramSystem) -> Result<Vec<f64>> {
    let r = system.indices.len();
    let inv_norm = sym_inverse_norm(&system.c)?;
    let limit = 1.0 / (2.0 * r as f64 * system.eps1);
    if inv_norm >= limit {
        return Err(Error::Conditioning(format!(
            "‖C̃⁻¹‖ = {inv_norm:.3e} exceeds the tolerance-regime limit {limit:.3e}; \
             rerun basis selection"
        )));
    }
    let x = solve_gauss(&system.c, &system.b)?;
    let residual: f64 = system
        .c
        .matvec(&x)
        .iter()
        .zip(&system.b)
        .map(|(cx, b)| (cx - b) * (cx - b))
        .sum::<f64>()
        .sqrt();
    let b_norm: f64 = system.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if residual > 1e-10 * b_norm {
        return Err(Error::Numerical(format!(
            "solver residual {residual:.3e} above 1e-10·‖b̃‖ = {:.3e}",
            1e-10 * b_norm
        )));
    }
    Ok(x)
}

/// Coordinates and reconstruction of one read-out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutResult {
    /// Selected column indices.
    pub indices: Vec<usize>,
    /// Anchor column fixing the sign convention.
    pub anchor: usize,
    /// Solved coordinates `x̃`.
    pub coordinates: Vec<f64>,
    /// Reconstructed direction `ũ_t = Σ x̃_i ĥ_{g(i)}` (near-unit, not
    /// renormalized).
    pub reconstructed: Vec<f64>,
}

/// Materialize `ũ_t = Σ_i x̃_i · h_{g(i)}/‖h_{g(i)}‖` as a concrete vector.
pub fn reconstruct(h: &Hessian, indices: &[usize], x: &[f64]) -> Result<Vec<f64>> {
    if indices.len() != x.len() {
        return Err(Error::validation(format!(
            "{} coordinates for {} columns",
            x.len(),
            indices.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite coordinate"));
    }
    let mut u = vec![0.0; h.d];
    for (&g, &xi) in indices.iter().zip(x) {
        let norm = h.column_norm(g);
        if norm == 0.0 {
            return Err(Error::ZeroColumn { index: g });
        }
        for (ui, ci) in u.iter_mut().zip(h.column(g)) {
            *ui += xi * ci / norm;
        }
    }
    Ok(u)
}

/// End-to-end verification of one read-out against the classical ground
/// truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutReport {
    /// Whether a read-out happened at all (false for no-vector runs).
    pub applicable: bool,
    /// `‖ũ_t‖`; the contract keeps it within ε/2 of 1.
    pub norm: f64,
    /// Rayleigh quotient of `ũ_t/‖ũ_t‖`.
    pub rayleigh_normalized: f64,
    /// Raw quadratic form `ũ_tᵀHũ_t` of the unnormalized reconstruction.
    pub rayleigh_raw: f64,
    /// Sign-agnostic distance `min(‖ũ−u‖, ‖ũ+u‖)` to the classical
    /// eigenvector.
    pub distance_to_eigenvector: f64,
    /// `(ũ/‖ũ‖)ᵀH(ũ/‖ũ‖) ≤ −α + ε`.
    pub rayleigh_contract: bool,
    /// `min(‖ũ−u‖, ‖ũ+u‖) ≤ ε/2`.
    pub distance_contract: bool,
}

impl ReadoutReport {
    /// Marker report for runs that never reached read-out.
    pub fn not_applicable() -> ReadoutReport {
        ReadoutReport {
            applicable: false,
            norm: f64::NAN,
            rayleigh_normalized: f64::NAN,
            rayleigh_raw: f64::NAN,
            distance_to_eigenvector: f64::NAN,
            rayleigh_contract: false,
            distance_contract: false,
        }
    }
}

/// Compute the verification report: Rayleigh quotients (raw and
/// normalized), sign-agnostic distance to `reference` (the classical
/// eigenvector the run targeted), and the two contract flags.
pub fn verify_readout(
    h: &Hessian,
    params: &NCFParams,
    result: &ReadoutResult,
    reference: &[f64],
) -> Result<ReadoutReport> {
    let u = &result.reconstructed;
    if u.len() != h.d || reference.len() != h.d {
        return Err(Error::validation("dimension mismatch against the instance"));
    }
    let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::validation("zero reconstruction"));
    }
    let hu = h.apply(u);
    let rayleigh_raw: f64 = u.iter().zip(&hu).map(|(a, b)| a * b).sum();
    let rayleigh_normalized = rayleigh_raw / (norm * norm);
    let (mut minus, mut plus) = (0.0f64, 0.0f64);
    for (a, b) in u.iter().zip(reference) {
        minus += (a - b) * (a - b);
        plus += (a + b) * (a + b);
    }
    let distance_to_eigenvector = minus.min(plus).sqrt();
    Ok(ReadoutReport {
        applicable: true,
        norm,
        rayleigh_normalized,
        rayleigh_raw,
        distance_to_eigenvector,
        rayleigh_contract: rayleigh_normalized <= -params.alpha + params.eps,
        distance_contract: distance_to_eigenvector <= params.eps / 2.0,
    })
}

/// Monte-Carlo check of the perturbation bound: over `trials` adversarial
/// perturbations with `|Δc| ≤ ε₁`, `|Δb| ≤ ε₂` (tolerances from the exact
/// `‖C⁻¹‖`), the reconstruction error `√(ΔxᵀCΔx)` must stay within `ε/2`
/// every single time. Each perturbed entry sits at a ±bound corner with
/// probability ½ (the adversarial extremes) and uniform inside otherwise;
/// the Gram perturbation is kept symmetric, matching how estimates are
/// symmetrized. Returns the all-pass flag.
pub fn perturbation_bound_check(
    c: &Matrix,
    b: &[f64],
    eps: f64,
    trials: u64,
    stream: &mut RandomStream,
) -> Result<bool> {
    let r = b.len();
    if c.rows() != r || c.cols() != r {
        return Err(Error::validation("Gram/overlap dimension mismatch"));
    }
    let c_inv_norm = sym_inverse_norm(c)?.max(1.0);
    let (eps1, eps2) = readout_tolerances(r, c_inv_norm, eps)?;
    let x = solve_gauss(c, b)?;

    let perturb = |stream: &mut RandomStream, bound: f64| -> f64 {
        if stream.bernoulli(0.5) {
            if stream.bernoulli(0.5) {
                bound
            } else {
                -bound
            }
        } else {
            stream.uniform(-bound, bound)
        }
    };

    for _ in 0..trials {
        let mut ct = c.clone();
        for i in 0..r {
            for j in i..r {
                let dc = perturb(stream, eps1);
                ct.set(i, j, c.get(i, j) + dc);
                if j != i {
                    ct.set(j, i, c.get(j, i) + dc);
                }
            }
        }
        let bt: Vec<f64> = b.iter().map(|&v| v + perturb(stream, eps2)).collect();
        let xt = match solve_gauss(&ct, &bt) {
            Ok(xt) => xt,
            Err(_) => return Ok(false),
        };
        let dx: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let cdx = c.matvec(&dx);
        let dist = dx.iter().zip(&cdx).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt();
        if dist > eps / 2.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

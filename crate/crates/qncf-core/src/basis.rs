//! Column-basis selection.
//!
//! Reconstruction needs `r` Hessian columns whose span is the whole column
//! space. They are found in `r` rounds: round `l+1` prepares the joint
//! state, Hadamards an ancilla, reflects the column register about each
//! already-prepared target on the ancilla-0 branch, Hadamards again and
//! post-selects 0. That filters every column through `(R_l + I)/2`, i.e.
//! projects off the span of the selected columns, so measuring the index
//! register yields a column with fresh direction — with probability
//! exactly the residual column mass `P_l = Σ_j ‖(I−Π_l)h_j‖²/F²`.
//!
//! The reflection targets are orthonormalized selected columns. Their
//! coefficients come from a Gram–Schmidt row solve ([`gram_schmidt_row`]),
//! and the states themselves from a linear-combination-of-states
//! preparation whose imprecision is modeled honestly: an explicit rotation
//! of magnitude `ε₃/2` is injected into each prepared target, and the
//! preparation's modeled cost `n^{ln(n/ε₃)}` is logged (it is far too
//! large to execute literally, which is exactly why it is a model).

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::hessian::{independence_check, Hessian, SpectralDecomposition};
use crate::linalg::{det_lu_counted, solve_gauss, sym_inverse_norm, Matrix};
use crate::oracle::TreeOracle;
use crate::rng::RandomStream;

/// Independence threshold on the squared Gram–Schmidt normalizer.
pub const DEPENDENCE_TOL: f64 = 1e-10;

/// Tolerance for the Gram-determinant cross-check `Z² = det C_{m+1}/det C_m`.
const DET_CHECK_TOL: f64 = 1e-8;

/// Geometric post-selection attempts allowed per round, as a multiple of
/// the inverse probability lower bound.
const ATTEMPT_PATIENCE: f64 = 200.0;

/// Stage error budgets for a rank-`r` selection:
///
/// * `ε₃` — allowed distance between a prepared reflection target and its
///   ideal: `ε²/(8(r−1)F²)`;
/// * `ε₁` — coefficient precision that preparation would need:
///   `Z_min·ε²/(48 r³ ‖C_r⁻¹‖² F²)`.
///
/// With `r = 1` there is a single round, no reflections and no
/// combinations, so neither budget constrains anything: both are infinite.
pub fn error_constants(
    r: usize,
    f_norm: f64,
    eps: f64,
    min_z: f64,
    c_inv_norm: f64,
) -> (f64, f64) {
    if r <= 1 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let f2 = f_norm * f_norm;
    let rf = r as f64;
    let eps3 = eps * eps / (8.0 * (rf - 1.0) * f2);
    let eps1 = min_z * eps * eps / (48.0 * rf.powi(3) * c_inv_norm * c_inv_norm * f2);
    (eps1, eps3)
}

/// Lower bound on round `l`'s post-selection probability (0-based `l`
/// targets already selected) when every eigenvalue magnitude is at least
/// `ε/2`: the unselected blocks retain mass `(r−l)·ε²/4`.
pub fn measurement_prob_lower_bound(r: usize, l: usize, eps: f64, f_norm: f64) -> f64 {
    (r - l) as f64 * eps * eps / (4.0 * f_norm * f_norm)
}

/// Upper bound on the probability that round `l` selects a dependent
/// column because its `l` reflection targets are each `ε₃`-perturbed:
/// `l²ε₃²/(P_l − l·ε₃)`. Degenerates to ∞ when the perturbation eats the
/// whole probability mass.
pub fn false_selection_bound(l: usize, eps3: f64, p_l: f64) -> f64 {
    if l == 0 {
        return 0.0;
    }
    let lf = l as f64;
    let denom = p_l - lf * eps3;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    lf * lf * eps3 * eps3 / denom
}

/// One Gram–Schmidt expansion row.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSchmidtRow {
    /// Coefficients over the `m+1` selected unit columns.
    pub x: Vec<f64>,
    /// Normalizer `Z = √(1 − bᵀC⁻¹b)`, the component of the new column
    /// orthogonal to the previous ones.
    pub z: f64,
}

/// Expand the `(m+1)`-th orthonormal target over unit columns: given the
/// Gram matrix `C_m` of the first `m` unit columns and their overlaps `b`
/// with the new one, solve `C_m y = b`, set `Z² = 1 − bᵀy`, and return
/// `x = (−y/Z, 1/Z)`. `Z² ≤ 1e−10` means the new column is (numerically)
/// dependent. The Gram identity `Z² = det C_{m+1}/det C_m` is
/// cross-checked to 1e−8.
pub fn gram_schmidt_row(gram: &Matrix, overlaps: &[f64], row: usize) -> Result<GramSchmidtRow> {
    let m = overlaps.len();
    if gram.rows() != m || gram.cols() != m {
        return Err(Error::validation(format!(
            "Gram matrix is {}×{} but {m} overlaps were given",
            gram.rows(),
            gram.cols()
        )));
    }
    if m == 0 {
        return Ok(GramSchmidtRow { x: vec![1.0], z: 1.0 });
    }
    let y = solve_gauss(gram, overlaps)?;
    let z_sq = 1.0 - overlaps.iter().zip(&y).map(|(b, yi)| b * yi).sum::<f64>();
    if z_sq <= DEPENDENCE_TOL {
        return Err(Error::DependentColumns { z_sq, row });
    }
    let z = z_sq.sqrt();

    // Cross-check against the Gram determinant identity.
    let mut extended = Matrix::zeros(m + 1, m + 1);
    for i in 0..m {
        for j in 0..m {
            extended.set(i, j, gram.get(i, j));
        }
        extended.set(i, m, overlaps[i]);
        extended.set(m, i, overlaps[i]);
    }
    extended.set(m, m, 1.0);
    let (det_small, _) = det_lu_counted(gram);
    let (det_big, _) = det_lu_counted(&extended);
    if det_small.abs() > 0.0 {
        let ratio = det_big / det_small;
        if (ratio - z_sq).abs() > DET_CHECK_TOL {
            return Err(Error::Numerical(format!(
                "Gram determinant identity violated: Z² = {z_sq} vs det ratio {ratio}"
            )));
        }
    }

    let mut x: Vec<f64> = y.iter().map(|yi| -yi / z).collect();
    x.push(1.0 / z);
    Ok(GramSchmidtRow { x, z })
}

/// A reflection target produced by the combination circuit.
#[derive(Debug, Clone)]
pub struct PreparedTarget {
    /// Ideal combination `Σ xᵢ ĥ_{gᵢ}` (unit).
    pub exact: Vec<f64>,
    /// State actually handed to the circuits: the ideal target rotated by
    /// exactly the allowed budget.
    pub prepared: Vec<f64>,
    /// `‖prepared − exact‖` (equals `ε₃/2`, or 0 for single columns).
    pub rotation: f64,
    /// Modeled preparation cost `n^{ln(n/ε₃)}` (kept as a plain number —
    /// it is astronomically larger than anything actually executed, and
    /// deliberately not mixed into the oracle query counter).
    pub modeled_cost: f64,
}

/// Combine `n` unit columns with the given coefficients and inject the
/// full allowed preparation error: the result is the exact combination
/// rotated, within its plane spanned with a stream-drawn direction, by a
/// chord of exactly `ε₃/2`. A single column (`n = 1`) is an oracle load
/// and is exact.
pub fn lcs_prepare(
    columns: &[Vec<f64>],
    coeffs: &[f64],
    eps3: f64,
    stream: &mut RandomStream,
) -> Result<PreparedTarget> {
    if columns.is_empty() || columns.len() != coeffs.len() {
        return Err(Error::validation("one coefficient per combined column required"));
    }
    let d = columns[0].len();
    let mut exact = vec![0.0; d];
    for (col, &c) in columns.iter().zip(coeffs) {
        for (e, &v) in exact.iter_mut().zip(col) {
            *e += c * v;
        }
    }
    let norm = exact.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::Numerical(format!(
            "combination coefficients do not give a unit state (‖·‖ = {norm})"
        )));
    }
    for e in exact.iter_mut() {
        *e /= norm;
    }

    let n = columns.len();
    if n == 1 {
        return Ok(PreparedTarget {
            prepared: exact.clone(),
            exact,
            rotation: 0.0,
            modeled_cost: 1.0,
        });
    }

    let nf = n as f64;
    let modeled_cost = (nf.ln() * (nf / eps3).ln()).exp();

    // Rotate by a chord of exactly ε₃/2 towards a random orthogonal
    // direction: t̃ = cos(φ)·t + sin(φ)·v with 2·sin(φ/2) = ε₃/2.
    let chord = (eps3 / 2.0).min(1.0);
    let v = loop {
        let raw = stream.unit_vector(d);
        let dot: f64 = raw.iter().zip(&exact).map(|(a, b)| a * b).sum();
        let mut v: Vec<f64> = raw.iter().zip(&exact).map(|(a, b)| a - dot * b).collect();
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm > 1e-9 {
            for x in v.iter_mut() {
                *x /= vnorm;
            }
            break v;
        }
    };
    let cos_phi = 1.0 - chord * chord / 2.0;
    let sin_phi = (chord * chord * (1.0 - chord * chord / 4.0)).max(0.0).sqrt();
    let prepared: Vec<f64> =
        exact.iter().zip(&v).map(|(&t, &w)| cos_phi * t + sin_phi * w).collect();
    let rotation = prepared
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(PreparedTarget { exact, prepared, rotation, modeled_cost })
}

/// How much simulator-private knowledge the selection may consult.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Use only oracle-visible data (trees and circuit outcomes).
    Blind,
    /// Additionally check the stage's probabilistic guarantees against the
    /// instance's spectral data, failing loudly on any violation.
    Verification,
}

/// Statistics of one selection round.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRound {
    /// Column index measured in this round.
    pub index: usize,
    /// Post-selection attempts spent (geometric, ≥ 1).
    pub attempts: u64,
    /// Exact success probability of this round's post-selection.
    pub success_prob: f64,
    /// Gram–Schmidt normalizer of the column this round added.
    pub z: f64,
    /// Modeled cost of preparing this round's new reflection target.
    pub modeled_cost: f64,
}

/// Outcome of a completed `r`-round selection.
#[derive(Debug, Clone)]
pub struct BasisSelection {
    /// Selected column indices `g_1 … g_r` (distinct).
    pub indices: Vec<usize>,
    /// Unit columns `ĥ_{g_i}` reconstructed from the trees.
    pub unit_columns: Vec<Vec<f64>>,
    /// Orthonormalized targets (ideal).
    pub targets_exact: Vec<Vec<f64>>,
    /// Targets as actually prepared (rotated by the injected error).
    pub targets_prepared: Vec<Vec<f64>>,
    /// Gram matrix of the selected unit columns.
    pub gram: Matrix,
    /// Gram–Schmidt normalizers, one per selected column (first is 1).
    pub z_values: Vec<f64>,
    pub rounds: Vec<SelectionRound>,
    /// Total modeled combination cost across rounds.
    pub modeled_cost: f64,
    /// Coefficient precision the preparations would have needed.
    pub eps1: f64,
    /// Target-state error budget actually injected (per target: `ε₃/2`).
    pub eps3: f64,
    /// Σ_l of [`false_selection_bound`] over rounds with reflections.
    pub false_selection_total: f64,
}

/// Run the full `r`-round selection against `h`'s oracle.
///
/// In [`SelectionMode::Verification`] the instance preconditions (all
/// eigenvalue magnitudes ≥ ε/2) and the stage guarantees (per-round
/// success probability above [`measurement_prob_lower_bound`], total
/// false-selection bound ≤ 1/4, final column independence) are enforced;
/// violations are errors, not silent degradation.
pub fn complete_basis_selection(
    h: &Hessian,
    oracle: &TreeOracle,
    decomp: &SpectralDecomposition,
    eps: f64,
    backend: &dyn Backend,
    mode: SelectionMode,
    stream: &mut RandomStream,
) -> Result<BasisSelection> {
    let r = h.r;
    let f = oracle.frobenius_norm();
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::validation(format!("eps must be > 0, got {eps}")));
    }
    if mode == SelectionMode::Verification {
        for &lam in &decomp.eigenvalues {
            if lam.abs() < eps / 2.0 {
                return Err(Error::Conditioning(format!(
                    "eigenvalue magnitude {} below ε/2 = {}; the round probability \
                     bound does not apply",
                    lam.abs(),
                    eps / 2.0
                )));
            }
        }
    }

    // ε₃ is known up front (it only needs r, F, ε); ε₁ is evaluated at the
    // end once Z_min and ‖C_r⁻¹‖ are known.
    let (_, eps3) = error_constants(r, f, eps, 1.0, 1.0);

    let mut indices: Vec<usize> = Vec::with_capacity(r);
    let mut unit_columns: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut targets_exact: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut targets_prepared: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut z_values: Vec<f64> = Vec::with_capacity(r);
    let mut rounds: Vec<SelectionRound> = Vec::with_capacity(r);
    let mut modeled_cost = 0.0;
    let mut false_selection_total = 0.0;

    for l in 0..r {
        let p_bound = measurement_prob_lower_bound(r, l, eps, f);
        let max_attempts = (ATTEMPT_PATIENCE / p_bound.max(1e-12)).ceil() as u64;
        let mut attempts = 0u64;
        let attempt = loop {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::DegenerateRound(format!(
                    "round {} failed to post-select after {} attempts",
                    l + 1,
                    max_attempts
                )));
            }
            let a = backend.selection_attempt(h, oracle, &targets_prepared, stream)?;
            if a.accepted {
                break a;
            }
        };
        let index = attempt.index.expect("accepted attempt carries an index");
        if indices.contains(&index) {
            return Err(Error::DegenerateRound(format!(
                "round {} re-selected column {index}",
                l + 1
            )));
        }

        if mode == SelectionMode::Verification {
            let p = backend.selection_success_prob(h, oracle, &targets_prepared)?;
            if p < p_bound {
                return Err(Error::Conditioning(format!(
                    "round {} success probability {p} below the guaranteed bound {p_bound}",
                    l + 1
                )));
            }
            false_selection_total += false_selection_bound(l, eps3, p);
        } else {
            false_selection_total +=
                false_selection_bound(l, eps3, attempt.success_prob);
        }

        // Extend the Gram system with the new unit column.
        let new_col = oracle.column_unit(index)?;
        let overlaps: Vec<f64> = unit_columns
            .iter()
            .map(|c| c.iter().zip(&new_col).map(|(a, b)| a * b).sum())
            .collect();
        let gs = gram_schmidt_row(&partial_gram(&unit_columns), &overlaps, l)?;

        indices.push(index);
        unit_columns.push(new_col);
        z_values.push(gs.z);

        let prepared = lcs_prepare(&unit_columns, &gs.x, eps3, stream)?;
        modeled_cost += prepared.modeled_cost;
        rounds.push(SelectionRound {
            index,
            attempts,
            success_prob: attempt.success_prob,
            z: gs.z,
            modeled_cost: prepared.modeled_cost,
        });
        targets_exact.push(prepared.exact);
        targets_prepared.push(prepared.prepared);
    }

    let gram = partial_gram(&unit_columns);
    let c_inv_norm = sym_inverse_norm(&gram)?;
    let min_z = z_values.iter().copied().fold(f64::INFINITY, f64::min);
    let (eps1, _) = error_constants(r, f, eps, min_z, c_inv_norm);

    if mode == SelectionMode::Verification {
        if false_selection_total > 0.25 {
            return Err(Error::Conditioning(format!(
                "accumulated false-selection bound {false_selection_total} exceeds 1/4"
            )));
        }
        if !independence_check(h, &indices)? {
            return Err(Error::Conditioning(format!(
                "selected columns {indices:?} are not independent"
            )));
        }
    }

    Ok(BasisSelection {
        indices,
        unit_columns,
        targets_exact,
        targets_prepared,
        gram,
        z_values,
        rounds,
        modeled_cost,
        eps1,
        eps3,
        false_selection_total,
    })
}

fn partial_gram(unit_columns: &[Vec<f64>]) -> Matrix {
    let m = unit_columns.len();
    let mut gram = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let dot: f64 =
                unit_columns[i].iter().zip(&unit_columns[j]).map(|(a, b)| a * b).sum();
            gram.set(i, j, dot);
        }
    }
    gram
}

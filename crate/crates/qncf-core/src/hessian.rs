//! Problem instances and classical ground truth.
//!
//! A problem instance is a dense symmetric `d×d` matrix `H` of declared rank
//! `r` whose eigenvalues are bounded by a Lipschitz constant `L`. The
//! classical side of the harness lives here: synthetic instance generation,
//! eigendecomposition (the verification oracle every quantum-channel model
//! is checked against), the reference negative-curvature decision, and the
//! determinant identity used to certify that a selected column set is
//! linearly independent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::RandomStream;

/// Relative tolerance for the symmetry check on instance entries.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues with `|λ| ≤ RANK_TOL · ‖H‖_F` count as zero for rank purposes.
pub const RANK_TOL: f64 = 1e-10;
/// `|det(H′)|` must exceed this times the product of selected column norms
/// for the independence certificate.
pub const INDEPENDENCE_TOL: f64 = 1e-10;

/// Dense symmetric instance with declared rank and eigenvalue bound.
#[derive(Debug, Clone)]
pub struct Hessian {
    pub d: usize,
    pub r: usize,
    pub lipschitz: f64,
    entries: Matrix,
}

#[derive(Serialize, Deserialize)]
struct HessianWire {
    d: usize,
    r: usize,
    #[serde(rename = "L")]
    lipschitz: f64,
    entries: Vec<Vec<f64>>,
}

impl Serialize for Hessian {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = (0..self.d)
            .map(|i| (0..self.d).map(|j| self.entries.get(i, j)).collect())
            .collect();
        HessianWire { d: self.d, r: self.r, lipschitz: self.lipschitz, entries: rows }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Hessian {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = HessianWire::deserialize(d)?;
        Hessian::new(wire.d, wire.r, wire.lipschitz, &wire.entries).map_err(serde::de::Error::custom)
    }
}

impl Hessian {
    /// Build from row-major entries, checking shape, finiteness, symmetry
    /// and parameter ranges. Spectral properties (rank, eigenvalue bound)
    /// are checked separately by [`Hessian::validate_spectrum`] since they
    /// need an eigendecomposition.
    pub fn new(d: usize, r: usize, lipschitz: f64, rows: &[Vec<f64>]) -> Result<Hessian> {
        if d == 0 {
            return Err(Error::validation("d must be positive"));
        }
        if r == 0 || r > d {
            return Err(Error::validation(format!("rank r = {r} outside 1..=d (d = {d})")));
        }
        if !(lipschitz > 0.0) || !lipschitz.is_finite() {
            return Err(Error::validation("Lipschitz bound L must be positive and finite"));
        }
        if rows.len() != d || rows.iter().any(|row| row.len() != d) {
            return Err(Error::validation(format!("entries must be {d}x{d}")));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::validation("entries must be finite"));
        }
        let entries = Matrix::from_rows(rows);
        let tol = SYMMETRY_TOL * entries.frobenius_norm().max(1.0);
        if !entries.is_symmetric(tol) {
            return Err(Error::validation("entries are not symmetric"));
        }
        Ok(Hessian { d, r, lipschitz, entries })
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    /// Column `j` (equals row `j` by symmetry).
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.entries.column(j)
    }

    pub fn column_norm(&self, j: usize) -> f64 {
        self.column(j).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.frobenius_norm()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.entries.matvec(x)
    }

    /// Rayleigh quotient `uᵀHu / uᵀu`.
    pub fn rayleigh(&self, u: &[f64]) -> f64 {
        let hu = self.apply(u);
        let num: f64 = u.iter().zip(&hu).map(|(a, b)| a * b).sum();
        let den: f64 = u.iter().map(|x| x * x).sum();
        num / den
    }

    /// Check the spectral invariants that need an eigendecomposition:
    /// numerical rank equals the declared `r`, every `|λ| ≤ L`, and (when a
    /// separation is given) pairwise eigenvalue-magnitude gaps exceed it.
    pub fn validate_spectrum(&self, separation: Option<f64>) -> Result<SpectralDecomposition> {
        let decomp = eigendecompose(self)?;
        if decomp.eigenvalues.len() != self.r {
            return Err(Error::validation(format!(
                "declared rank {} but numerical rank {}",
                self.r,
                decomp.eigenvalues.len()
            )));
        }
        if let Some(bad) = decomp.eigenvalues.iter().find(|l| l.abs() > self.lipschitz + 1e-12) {
            return Err(Error::validation(format!(
                "eigenvalue {bad} exceeds the Lipschitz bound L = {}",
                self.lipschitz
            )));
        }
        if let Some(sep) = separation {
            if !separation_check(&decomp.eigenvalues, sep) {
                return Err(Error::validation(format!(
                    "eigenvalue magnitudes are not {sep}-separated"
                )));
            }
        }
        Ok(decomp)
    }
}

/// Eigenpairs of an instance above the rank tolerance, sorted by descending
/// magnitude. Serves as ground truth for the channel models.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Nonzero eigenvalues, `|λ_1| ≥ |λ_2| ≥ …`.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[k]` is the unit eigenvector of `eigenvalues[k]`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Frobenius norm of the instance (`= sqrt(Σ λ²)` up to rank noise).
    pub f_norm: f64,
}

impl SpectralDecomposition {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Most negative eigenvalue, counting the implicit kernel: for a
    /// rank-deficient instance whose nonzero eigenvalues are all positive,
    /// the minimum over the full spectrum is 0.
    pub fn lambda_min(&self, d: usize) -> f64 {
        let min_nonzero = self.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if self.eigenvalues.len() < d {
            min_nonzero.min(0.0)
        } else {
            min_nonzero
        }
    }

    /// Index (into `eigenvalues`) of the most negative eigenvalue, if any
    /// eigenvalue is negative.
    pub fn min_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, &l) in self.eigenvalues.iter().enumerate() {
            if l < 0.0 && best.map_or(true, |b| l < self.eigenvalues[b]) {
                best = Some(k);
            }
        }
        best
    }
}

/// Problem parameters: curvature threshold `α`, slack `ε`, failure budget `δ`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct NCFParams {
    pub alpha: f64,
    pub eps: f64,
    pub delta: f64,
}

impl NCFParams {
    pub fn new(alpha: f64, eps: f64, delta: f64) -> Result<NCFParams> {
        let p = NCFParams { alpha, eps, delta };
        p.validate_ranges()?;
        Ok(p)
    }

    fn validate_ranges(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < self.alpha) {
            return Err(Error::validation(format!(
                "require 0 < eps < alpha (got eps = {}, alpha = {})",
                self.eps, self.alpha
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::validation(format!("delta = {} outside (0, 1)", self.delta)));
        }
        Ok(())
    }

    /// Full validation against an instance's Lipschitz bound (`α ≤ L`).
    pub fn validate(&self, lipschitz: f64) -> Result<()> {
        self.validate_ranges()?;
        if self.alpha > lipschitz {
            return Err(Error::validation(format!(
                "alpha = {} exceeds the Lipschitz bound L = {lipschitz}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Generate a synthetic instance `H = Σ λ_k u_k u_kᵀ` with the prescribed
/// spectrum over a seeded random orthonormal frame.
///
/// Rejects spectra that break the standing assumptions: a zero entry
/// (contradicts the declared rank), `|λ| > L`, or a pair of eigenvalue
/// magnitudes closer than `separation`.
pub fn generate_synthetic(
    d: usize,
    r: usize,
    spectrum: &[f64],
    lipschitz: f64,
    separation: f64,
    seed: u64,
) -> Result<Hessian> {
    if r == 0 || r > d {
        return Err(Error::validation(format!("rank r = {r} outside 1..=d (d = {d})")));
    }
    if spectrum.len() != r {
        return Err(Error::validation(format!(
            "spectrum has {} entries but r = {r}",
            spectrum.len()
        )));
    }
    if !(lipschitz > 0.0) {
        return Err(Error::validation("Lipschitz bound L must be positive"));
    }
    if separation < 0.0 {
        return Err(Error::validation("separation must be non-negative"));
    }
    for &l in spectrum {
        if l == 0.0 || !l.is_finite() {
            return Err(Error::validation("spectrum entries must be nonzero and finite"));
        }
        if l.abs() > lipschitz {
            return Err(Error::validation(format!(
                "spectrum entry {l} violates the Lipschitz bound L = {lipschitz}"
            )));
        }
    }
    if !separation_check(spectrum, separation) {
        return Err(Error::validation(format!(
            "spectrum magnitudes are not {separation}-separated"
        )));
    }

    let mut stream = RandomStream::from_seed(seed);
    let mut cols: Vec<Vec<f64>> =
        (0..r).map(|_| (0..d).map(|_| stream.normal()).collect()).collect();
    linalg::orthonormalize_columns(&mut cols)?;

    let mut entries = Matrix::zeros(d, d);
    for (k, &l) in spectrum.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                let v = entries.get(i, j) + l * cols[k][i] * cols[k][j];
                entries.set(i, j, v);
            }
        }
    }
    // Symmetrize away accumulation noise so the structural check is exact.
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (entries.get(i, j) + entries.get(j, i));
            entries.set(i, j, s);
            entries.set(j, i, s);
        }
    }
    let rows: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| entries.get(i, j)).collect()).collect();
    let h = Hessian::new(d, r, lipschitz, &rows)?;
    h.validate_spectrum(Some(separation))?;
    Ok(h)
}

/// Eigendecompose an instance, dropping eigenvalues below the rank
/// tolerance and sorting by descending magnitude. Each returned pair is
/// verified: residual `‖Hu − λu‖ ≤ 1e−9 ‖H‖_F` and pairwise orthonormality
/// within `1e−9`.
pub fn eigendecompose(h: &Hessian) -> Result<SpectralDecomposition> {
    let f_norm = h.frobenius_norm();
    let (eigs, vecs) = linalg::sym_eigen_jacobi(h.entries(), 1e-14)?;

    let mut pairs: Vec<(f64, Vec<f64>)> = eigs
        .iter()
        .enumerate()
        .filter(|(_, l)| l.abs() > RANK_TOL * f_norm.max(1e-300))
        .map(|(k, &l)| (l, vecs.column(k)))
        .collect();
    pairs.sort_by(|a, b| b.0.abs().total_cmp(&a.0.abs()));

    // Deterministic sign convention: the largest-magnitude component of
    // each eigenvector is made positive.
    for (_, u) in pairs.iter_mut() {
        let lead = u
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if u[lead] < 0.0 {
            for x in u.iter_mut() {
                *x = -*x;
            }
        }
    }

    for (l, u) in &pairs {
        let hu = h.apply(u);
        let residual: f64 =
            hu.iter().zip(u).map(|(a, b)| (a - l * b) * (a - l * b)).sum::<f64>().sqrt();
        if residual > 1e-9 * f_norm.max(1.0) {
            return Err(Error::Numerical(format!(
                "eigenpair residual {residual:.3e} exceeds tolerance for eigenvalue {l}"
            )));
        }
    }
    for i in 0..pairs.len() {
        for j in i..pairs.len() {
            let dot: f64 = pairs[i].1.iter().zip(&pairs[j].1).map(|(a, b)| a * b).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (dot - expect).abs() > 1e-9 {
                return Err(Error::Numerical(format!(
                    "eigenvectors {i}, {j} not orthonormal (dot = {dot})"
                )));
            }
        }
    }

    let (eigenvalues, eigenvectors) = pairs.into_iter().unzip();
    Ok(SpectralDecomposition { eigenvalues, eigenvectors, f_norm })
}

/// `‖H‖_F ≤ √r · L` — the low-rank bound every valid instance satisfies.
pub fn frobenius_bound_check(h: &Hessian) -> bool {
    h.frobenius_norm() <= (h.r as f64).sqrt() * h.lipschitz + 1e-12
}

/// Classical reference decision.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassicalVerdict {
    /// `λ_min ≤ −α`: a clean negative-curvature direction.
    Vector { u: Vec<f64>, lambda: f64 },
    /// `λ_min ∈ (−α, −α+ε/2]`: inside the boundary band, where both answers
    /// are admissible. Flagged so comparisons can exclude it.
    Boundary { u: Vec<f64>, lambda: f64 },
    /// `λ_min > −α + ε/2`: no direction with curvature below `−α` exists.
    NoVector,
}

impl ClassicalVerdict {
    pub fn is_vector(&self) -> bool {
        matches!(self, ClassicalVerdict::Vector { .. })
    }

    pub fn is_boundary(&self) -> bool {
        matches!(self, ClassicalVerdict::Boundary { .. })
    }
}

/// Decide the negative-curvature question classically from the exact
/// spectrum: return the minimum eigenpair when `λ_min ≤ −α + ε/2` (flagging
/// the boundary band `(−α, −α+ε/2]`), otherwise report that no direction
/// with `uᵀHu < −α` exists.
pub fn classical_ncf(h: &Hessian, params: &NCFParams) -> Result<ClassicalVerdict> {
    params.validate(h.lipschitz)?;
    let decomp = eigendecompose(h)?;
    let lambda_min = decomp.lambda_min(h.d);
    if lambda_min > -params.alpha + params.eps / 2.0 {
        return Ok(ClassicalVerdict::NoVector);
    }
    let k = decomp
        .min_index()
        .ok_or_else(|| Error::Numerical("negative lambda_min without a negative eigenpair".into()))?;
    let u = decomp.eigenvectors[k].clone();
    let lambda = decomp.eigenvalues[k];
    if lambda_min > -params.alpha {
        Ok(ClassicalVerdict::Boundary { u, lambda })
    } else {
        Ok(ClassicalVerdict::Vector { u, lambda })
    }
}

/// Linear-independence certificate for a selected column set, via the
/// determinant identity `det(C)·Π λ_i = det(H′)` where `H′_jk = h_{g(j)g(k)}`
/// is the submatrix on the selected indices. Costs `O(r³)` arithmetic ops.
///
/// Returns true iff `|det(H′)| > 1e−10 · Π ‖h_{g(i)}‖`.
pub fn independence_check(h: &Hessian, indices: &[usize]) -> Result<bool> {
    if indices.is_empty() {
        return Err(Error::validation("independence check needs at least one index"));
    }
    if let Some(&bad) = indices.iter().find(|&&g| g >= h.d) {
        return Err(Error::validation(format!("column index {bad} out of range (d = {})", h.d)));
    }
    let (det, _ops) = selected_submatrix_det(h, indices);
    let norm_product: f64 = indices.iter().map(|&g| h.column_norm(g)).product();
    Ok(det.abs() > INDEPENDENCE_TOL * norm_product)
}

/// Determinant of the selected submatrix along with the LU op tally
/// (exposed so tests can assert the O(r³) cost claim).
pub fn selected_submatrix_det(h: &Hessian, indices: &[usize]) -> (f64, u64) {
    let r = indices.len();
    let mut sub = Matrix::zeros(r, r);
    for (a, &i) in indices.iter().enumerate() {
        for (b, &j) in indices.iter().enumerate() {
            sub.set(a, b, h.entry(i, j));
        }
    }
    linalg::det_lu_counted(&sub)
}

/// True iff the pairwise gaps between nonzero eigenvalue magnitudes all
/// exceed `eps` (strictly).
pub fn separation_check(eigenvalues: &[f64], eps: f64) -> bool {
    let mut mags: Vec<f64> = eigenvalues.iter().map(|l| l.abs()).collect();
    mags.sort_by(f64::total_cmp);
    mags.windows(2).all(|w| w[1] - w[0] > eps)
}

/// The canonical small instance used throughout the tests and goldens:
/// `d = 16`, `r = 4`, spectrum `{−0.6, 0.4, −0.2, 0.1}`, `L = 1`, seed 7.
pub fn canonical_instance() -> Hessian {
    generate_synthetic(16, 4, &[-0.6, 0.4, -0.2, 0.1], 1.0, 0.05, 7)
        .expect("canonical instance parameters are valid")
}

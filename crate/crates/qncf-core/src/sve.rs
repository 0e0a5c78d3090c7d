//! The singular-value estimation channel.
//!
//! Measuring the estimation register after running singular-value
//! estimation on the joint state `(1/F) Σ_k λ_k |u_k⟩|u_k⟩` does three
//! things at once: it picks an eigen-block `k` with probability `λ_k²/F²`,
//! collapses the work registers onto `|u_k⟩|u_k⟩`, and reports an estimate
//! of the singular value `σ_k = |λ_k|`. This module models that channel
//! directly with an explicit, honest noise model:
//!
//! * with probability `1 − p_fail` the estimate lands within `±ε_est` of
//!   `σ_k` — a hard bound, by construction — drawn from a configurable
//!   shape (uniform or truncated Gaussian), optionally discretized to
//!   multiples of a grid width `w`;
//! * with probability `p_fail` estimation fails outright and the estimate
//!   is uniform garbage on `[0, F]`. The `failed` flag records this for
//!   diagnostics only; no decision procedure may look at it.
//!
//! Because the noise support is an explicit finite grid (or an interval),
//! the probability that an estimate lands in any window has a closed form
//! ([`acceptance_probability`]), which the bulk-sampling paths exploit.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::hessian::SpectralDecomposition;
use crate::rng::RandomStream;

/// Residual tolerance when expanding a joint state over eigen-blocks.
const SPAN_TOL: f64 = 1e-6;

/// Shape of the estimation noise within the `±ε_est` window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseShape {
    /// Equal weight across the window (worst case for binning).
    Uniform,
    /// Gaussian of standard deviation `ε_est/2` truncated to the window.
    GaussianTruncated,
}

/// Noise model of the estimation channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SVEConfig {
    /// Hard bound on the estimation error of successful runs.
    pub eps_est: f64,
    /// Probability that a run fails and reports garbage on `[0, F]`.
    pub p_fail: f64,
    /// Estimates are multiples of this width; `0` means continuous.
    pub grid_w: f64,
    pub noise: NoiseShape,
}

impl SVEConfig {
    pub fn new(eps_est: f64, p_fail: f64, grid_w: f64, noise: NoiseShape) -> Result<SVEConfig> {
        if !(eps_est >= 0.0 && eps_est.is_finite()) {
            return Err(Error::validation(format!("eps_est must be ≥ 0, got {eps_est}")));
        }
        if !(0.0..1.0).contains(&p_fail) {
            return Err(Error::validation(format!("p_fail must be in [0, 1), got {p_fail}")));
        }
        if !(grid_w >= 0.0 && grid_w.is_finite()) {
            return Err(Error::validation(format!("grid width must be ≥ 0, got {grid_w}")));
        }
        if grid_w > 0.0 && eps_est > 0.0 && grid_w > 2.0 * eps_est {
            // A window of width 2·ε_est always contains a grid multiple
            // only when w ≤ 2·ε_est; wider grids could leave no outcome.
            return Err(Error::validation(format!(
                "grid width {grid_w} exceeds the noise window 2·eps_est = {}",
                2.0 * eps_est
            )));
        }
        if grid_w > 0.0 && eps_est == 0.0 {
            return Err(Error::validation("a grid needs a nonzero noise window"));
        }
        Ok(SVEConfig { eps_est, p_fail, grid_w, noise })
    }

    /// Default operating point for accuracy target `ε` at dimension `d`:
    /// estimation error `ε/4`, failure probability `d⁻⁴`, grid `ε/32`,
    /// uniform noise.
    pub fn for_epsilon(eps: f64, d: usize) -> Result<SVEConfig> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::validation(format!("eps must be > 0, got {eps}")));
        }
        if d == 0 {
            return Err(Error::validation("dimension must be positive"));
        }
        let df = d as f64;
        SVEConfig::new(eps / 4.0, 1.0 / (df * df * df * df), eps / 32.0, NoiseShape::Uniform)
    }

    /// Noise-free channel (exact estimates, no failures).
    pub fn exact() -> SVEConfig {
        SVEConfig { eps_est: 0.0, p_fail: 0.0, grid_w: 0.0, noise: NoiseShape::Uniform }
    }
}

/// One application of the estimation channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SVESample {
    /// Eigen-block the work registers collapsed onto.
    pub block: usize,
    /// Reported singular-value estimate.
    pub estimate: f64,
    /// Diagnostics only: whether this run took the failure branch.
    pub failed: bool,
}

impl SVESample {
    /// The eigenvector the work register collapsed to.
    pub fn collapsed_state<'a>(&self, decomp: &'a SpectralDecomposition) -> &'a [f64] {
        &decomp.eigenvectors[self.block]
    }

    /// True singular value of the collapsed block.
    pub fn true_value(&self, decomp: &SpectralDecomposition) -> f64 {
        decomp.eigenvalues[self.block].abs()
    }
}

/// Expand a bipartite state (row-major `d²` amplitudes) over the
/// eigen-blocks `u_k ⊗ u_k`; errors if more than [`SPAN_TOL`] of its norm
/// lies outside their span.
pub fn block_coefficients(amps: &[f64], decomp: &SpectralDecomposition) -> Result<Vec<f64>> {
    let r = decomp.rank();
    let d = decomp.eigenvectors.first().map_or(0, Vec::len);
    if amps.len() != d * d {
        return Err(Error::validation(format!(
            "joint state has {} amplitudes, expected d² = {}",
            amps.len(),
            d * d
        )));
    }
    let mut coeffs = vec![0.0; r];
    for (k, u) in decomp.eigenvectors.iter().enumerate() {
        let mut c = 0.0;
        for i in 0..d {
            for j in 0..d {
                c += amps[i * d + j] * u[i] * u[j];
            }
        }
        coeffs[k] = c;
    }
    let mut residual_sq = amps.iter().map(|a| a * a).sum::<f64>();
    residual_sq -= coeffs.iter().map(|c| c * c).sum::<f64>();
    let residual = residual_sq.max(0.0).sqrt();
    if residual > SPAN_TOL {
        return Err(Error::OutsideEigenSpan { residual });
    }
    Ok(coeffs)
}

/// Run the channel on a state with the given eigen-block coefficients.
///
/// Consumes one draw for the block, one for the failure branch, and one
/// for the estimate unless the channel is exact.
pub fn sve_channel_with_coefficients(
    decomp: &SpectralDecomposition,
    coeffs: &[f64],
    config: &SVEConfig,
    stream: &mut RandomStream,
) -> Result<SVESample> {
    if coeffs.len() != decomp.rank() {
        return Err(Error::validation("one coefficient per eigen-block required"));
    }
    let weights: Vec<f64> = coeffs.iter().map(|c| c * c).collect();
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::validation(format!(
            "block coefficients are not normalized (Σc² = {total})"
        )));
    }
    let block = stream.categorical(&weights);
    let sigma = decomp.eigenvalues[block].abs();
    let failed = stream.bernoulli(config.p_fail);
    let estimate = if failed {
        stream.uniform(0.0, decomp.f_norm)
    } else {
        sample_estimate(sigma, config, stream)
    };
    Ok(SVESample { block, estimate, failed })
}

/// Run the channel on the standard joint state `(1/F) Σ_k λ_k |u_k⟩|u_k⟩`
/// without materializing its `d²` amplitudes.
pub fn sve_channel(
    decomp: &SpectralDecomposition,
    config: &SVEConfig,
    stream: &mut RandomStream,
) -> Result<SVESample> {
    let coeffs: Vec<f64> =
        decomp.eigenvalues.iter().map(|&lam| lam / decomp.f_norm).collect();
    sve_channel_with_coefficients(decomp, &coeffs, config, stream)
}

/// Noise support for a true value `σ`: `[max(0, σ−ε_est), σ+ε_est]`
/// (estimates are magnitudes, so the window is clamped at zero).
fn support(sigma: f64, config: &SVEConfig) -> (f64, f64) {
    ((sigma - config.eps_est).max(0.0), sigma + config.eps_est)
}

/// Grid points of the support with their (unnormalized) weights.
fn grid_support(sigma: f64, config: &SVEConfig) -> Vec<(f64, f64)> {
    let (lo, hi) = support(sigma, config);
    let w = config.grid_w;
    let m_lo = ((lo / w) - 1e-12).ceil().max(0.0) as i64;
    let m_hi = ((hi / w) + 1e-12).floor() as i64;
    let s = config.eps_est / 2.0;
    (m_lo..=m_hi)
        .map(|m| {
            let g = m as f64 * w;
            let weight = match config.noise {
                NoiseShape::Uniform => 1.0,
                NoiseShape::GaussianTruncated => (-((g - sigma) / s).powi(2) / 2.0).exp(),
            };
            (g, weight)
        })
        .collect()
}

/// Draw a successful estimate for true value `σ` (one draw, or none when
/// the channel is exact).
fn sample_estimate(sigma: f64, config: &SVEConfig, stream: &mut RandomStream) -> f64 {
    if config.eps_est == 0.0 {
        return sigma;
    }
    if config.grid_w > 0.0 {
        let points = grid_support(sigma, config);
        let weights: Vec<f64> = points.iter().map(|&(_, w)| w).collect();
        return points[stream.categorical(&weights)].0;
    }
    let (lo, hi) = support(sigma, config);
    match config.noise {
        NoiseShape::Uniform => stream.uniform(lo, hi),
        NoiseShape::GaussianTruncated => {
            let normal = Normal::new(sigma, config.eps_est / 2.0).expect("positive std dev");
            let (clo, chi) = (normal.cdf(lo), normal.cdf(hi));
            normal.inverse_cdf(stream.uniform(clo, chi))
        }
    }
}

/// Exact probability that the channel's estimate for true value `σ` lands
/// in `[center − half_width, center + half_width]`, including the garbage
/// branch's contribution.
pub fn acceptance_probability(
    sigma: f64,
    center: f64,
    half_width: f64,
    f_norm: f64,
    config: &SVEConfig,
) -> f64 {
    let (wlo, whi) = (center - half_width, center + half_width);

    let success_mass = if config.eps_est == 0.0 {
        if (sigma - center).abs() <= half_width {
            1.0
        } else {
            0.0
        }
    } else if config.grid_w > 0.0 {
        // Same comparison expression as the matching done on sampled
        // estimates, so boundary grid points agree to the last ulp.
        let points = grid_support(sigma, config);
        let total: f64 = points.iter().map(|&(_, w)| w).sum();
        let inside: f64 = points
            .iter()
            .filter(|&&(g, _)| (g - center).abs() <= half_width)
            .map(|&(_, w)| w)
            .sum();
        inside / total
    } else {
        let (lo, hi) = support(sigma, config);
        let (a, b) = (wlo.max(lo), whi.min(hi));
        if b <= a {
            0.0
        } else {
            match config.noise {
                NoiseShape::Uniform => (b - a) / (hi - lo),
                NoiseShape::GaussianTruncated => {
                    let normal = Normal::new(sigma, config.eps_est / 2.0).expect("positive std dev");
                    (normal.cdf(b) - normal.cdf(a)) / (normal.cdf(hi) - normal.cdf(lo))
                }
            }
        }
    };

    let garbage_overlap = (whi.min(f_norm) - wlo.max(0.0)).max(0.0) / f_norm;
    (1.0 - config.p_fail) * success_mass + config.p_fail * garbage_overlap
}

/// A cluster of nearby estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    /// Mean of the member estimates.
    pub center: f64,
    /// Indices into the original estimate list.
    pub members: Vec<usize>,
}

impl Bin {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

/// Cluster estimates by single linkage: sort, then start a new bin
/// whenever the gap to the previous estimate exceeds `ε/2`. With hard
/// noise bounds `ε_est ≤ ε/4` and eigenvalue magnitudes separated by more
/// than `ε`, estimates of one eigenvalue always merge (pairwise distance
/// ≤ 2·ε_est ≤ ε/2) and estimates of different eigenvalues never do
/// (distance > ε − 2·ε_est ≥ ε/2).
pub fn bin_estimates(estimates: &[f64], eps: f64) -> Vec<Bin> {
    let mut order: Vec<usize> = (0..estimates.len()).collect();
    order.sort_by(|&a, &b| estimates[a].total_cmp(&estimates[b]));
    let mut bins: Vec<Bin> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for (pos, &idx) in order.iter().enumerate() {
        if pos > 0 {
            let gap = estimates[idx] - estimates[order[pos - 1]];
            if gap > eps / 2.0 {
                bins.push(finish_bin(std::mem::take(&mut current), estimates));
            }
        }
        current.push(idx);
    }
    if !current.is_empty() {
        bins.push(finish_bin(current, estimates));
    }
    bins
}

fn finish_bin(members: Vec<usize>, estimates: &[f64]) -> Bin {
    let center = members.iter().map(|&i| estimates[i]).sum::<f64>() / members.len() as f64;
    Bin { center, members }
}

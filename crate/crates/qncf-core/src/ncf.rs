//! Negative-curvature detection: sign votes, eigenvalue labelling, and
//! target-state generation.
//!
//! The detection pipeline runs in two phases. Labelling repeats an
//! estimate-then-probe iteration: one channel draw collapses the joint
//! state onto an eigen-block and reports a magnitude estimate, then a
//! single shot of the eigenvalue-sign circuit probes the collapsed state's
//! sign (`P(1) = (1 − λ/F)/2`, so negative eigenvalues bias towards 1).
//! Binning the magnitude estimates and taking per-bin majorities of the
//! sign shots labels each resolvable eigenvalue as negative or not; the
//! largest negatively-labelled magnitude clearing `α − ε/4` becomes the
//! working target. Target generation then redraws the channel until the
//! estimate lands within `ε/2` of the target bin's center, yielding fresh
//! copies of the corresponding eigenvector for downstream tomography.

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::hessian::{Hessian, NCFParams, SpectralDecomposition};
use crate::oracle::TreeOracle;
use crate::rng::{RandomStream, LITERAL_SHOT_CAP};
use crate::sve::{bin_estimates, sve_channel, SVEConfig};

/// Shots for a sign majority vote that resolves `|λ| ≥ a` with confidence
/// `1 − δ`: the smallest odd `n ≥ 2·(F²/a²)·ln(1/δ)` (and at least 1).
pub fn pned_shot_count(f_norm: f64, a: f64, delta: f64) -> Result<u64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::validation(format!("resolution a must be > 0, got {a}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::validation(format!("delta must be in (0, 1), got {delta}")));
    }
    if !(f_norm > 0.0 && f_norm.is_finite()) {
        return Err(Error::validation(format!("F must be > 0, got {f_norm}")));
    }
    let base = (f_norm / a).powi(2) * (1.0 / delta).ln();
    let n = 2.0 * (base - 0.5).floor() + 3.0;
    Ok(n.max(1.0) as u64)
}

/// Outcome of a sign majority vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignVote {
    /// Whether the majority of shots reported outcome 1 (negative sign).
    pub negative: bool,
    pub ones: u64,
    pub shots: u64,
}

/// Majority vote of the eigenvalue-sign circuit on state `psi`, sized to
/// resolve `|ψᵀHψ| ≥ a` with confidence `1 − δ`. Shot counts above the
/// literal cap are realized by one bulk count draw with the full expected
/// query cost charged.
pub fn pned_decide(
    h: &Hessian,
    oracle: &TreeOracle,
    backend: &dyn Backend,
    psi: &[f64],
    a: f64,
    delta: f64,
    stream: &mut RandomStream,
) -> Result<SignVote> {
    let shots = pned_shot_count(h.frobenius_norm(), a, delta)?;
    let ones = if shots <= LITERAL_SHOT_CAP {
        let mut ones = 0u64;
        for _ in 0..shots {
            ones += backend.pned_shot(h, oracle, psi, stream)? as u64;
        }
        ones
    } else {
        let p1 = backend.pned_prob_one(h, oracle, psi)?;
        oracle.charge(2 * shots);
        stream.binomial(shots, p1)
    };
    Ok(SignVote { negative: 2 * ones > shots, ones, shots })
}

/// Labelling iteration count for threshold `α` and confidence `1 − δ`:
/// `K = ⌈b·(2·b·ln(1/δ) + 3)⌉` with `b = 4F²/α²`, enough that every
/// eigenvalue of magnitude ≥ α populates its bin with a decisive majority.
pub fn labelling_iterations(f_norm: f64, alpha: f64, delta: f64) -> u64 {
    let b = 4.0 * (f_norm / alpha).powi(2);
    (b * (2.0 * b * (1.0 / delta).ln() + 3.0)).ceil() as u64
}

/// One bin of magnitude estimates with its sign tally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledBin {
    /// Mean of the member estimates.
    pub center: f64,
    /// Number of estimates in the bin.
    pub count: usize,
    /// How many of those runs' sign shots reported 1.
    pub negatives: usize,
}

impl LabelledBin {
    /// Strict majority of sign shots saw outcome 1; a tie is not negative.
    pub fn labelled_negative(&self) -> bool {
        2 * self.negatives > self.count
    }
}

/// Result of the labelling phase.
#[derive(Debug, Clone, PartialEq)]
pub struct LabellingOutcome {
    pub iterations: u64,
    pub bins: Vec<LabelledBin>,
    /// Center of the largest-magnitude negatively-labelled bin clearing
    /// `α − ε/4`, if any; the working estimate of `|λ|` for the target.
    pub target: Option<f64>,
    /// Channel runs that took the failure branch (diagnostics only).
    pub channel_failures: u64,
}

/// Run the labelling phase: `K` iterations of channel draw + one sign
/// shot, binned at linkage `ε/2`, per-bin majorities, threshold `α − ε/4`.
pub fn label_negative_eigenvalue(
    h: &Hessian,
    decomp: &SpectralDecomposition,
    oracle: &TreeOracle,
    backend: &dyn Backend,
    params: &NCFParams,
    config: &SVEConfig,
    stream: &mut RandomStream,
) -> Result<LabellingOutcome> {
    let k = labelling_iterations(h.frobenius_norm(), params.alpha, params.delta);
    let mut estimates = Vec::with_capacity(k as usize);
    let mut negatives = Vec::with_capacity(k as usize);
    let mut channel_failures = 0u64;
    for _ in 0..k {
        oracle.charge(2); // joint-state preparation feeding the channel
        let sample = sve_channel(decomp, config, stream)?;
        if sample.failed {
            channel_failures += 1;
        }
        let shot = backend.pned_shot(h, oracle, sample.collapsed_state(decomp), stream)?;
        estimates.push(sample.estimate);
        negatives.push(shot == 1);
    }

    let bins: Vec<LabelledBin> = bin_estimates(&estimates, params.eps)
        .into_iter()
        .map(|bin| LabelledBin {
            center: bin.center,
            count: bin.count(),
            negatives: bin.members.iter().filter(|&&i| negatives[i]).count(),
        })
        .collect();

    let target = bins
        .iter()
        .filter(|b| b.labelled_negative())
        .map(|b| b.center)
        .fold(None, |best: Option<f64>, c| Some(best.map_or(c, |b| b.max(c))))
        .filter(|&c| c >= params.alpha - params.eps / 4.0);

    Ok(LabellingOutcome { iterations: k, bins, target, channel_failures })
}

/// Attempt budget for target generation: `⌊(4F²/α²)·ln(1/δ)⌋ + 1`, enough
/// draws that a block of weight ≥ α²/(4F²)… is hit with confidence `1 − δ`.
pub fn target_iterations(f_norm: f64, alpha: f64, delta: f64) -> u64 {
    (4.0 * (f_norm / alpha).powi(2) * (1.0 / delta).ln()).floor() as u64 + 1
}

/// One successfully generated target copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetDraw {
    /// Eigen-block the registers collapsed to.
    pub block: usize,
    /// Channel draws spent, including the successful one.
    pub attempts: u64,
}

/// Redraw the estimation channel until the magnitude estimate lands within
/// `ε/2` of `center`, collapsing the registers onto a fresh copy of the
/// matching eigenvector. Exhausting the attempt budget fails the run.
pub fn generate_target_state(
    decomp: &SpectralDecomposition,
    oracle: &TreeOracle,
    config: &SVEConfig,
    center: f64,
    eps: f64,
    max_attempts: u64,
    stream: &mut RandomStream,
) -> Result<TargetDraw> {
    for attempt in 1..=max_attempts {
        oracle.charge(2);
        let sample = sve_channel(decomp, config, stream)?;
        if (sample.estimate - center).abs() <= eps / 2.0 {
            return Ok(TargetDraw { block: sample.block, attempts: attempt });
        }
    }
    Err(Error::TargetExhausted { iterations: max_attempts })
}

/// Decision of the detection phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantumVerdict {
    /// A negatively-labelled eigenvalue cleared the threshold and a fresh
    /// copy of its eigenvector was drawn.
    Vector {
        /// Working estimate of the eigenvalue magnitude (the bin center).
        center: f64,
        /// The successful collapse.
        draw: TargetDraw,
    },
    /// No negatively-labelled bin cleared `α − ε/4`; the instance is
    /// declared free of curvature below `−α` (at this confidence).
    NoVector,
}

/// Full detection outcome: the labelling evidence plus the verdict built
/// on it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumDecision {
    pub labelling: LabellingOutcome,
    pub verdict: QuantumVerdict,
}

/// The complete detection phase: label the spectrum's signs, and if some
/// negatively-labelled magnitude clears `α − ε/4`, redraw the channel for
/// a fresh eigenvector copy of that eigenvalue. When the instance really
/// has `λ_min ≤ −α` and no channel draw took the failure branch, the drawn
/// block's Rayleigh quotient satisfies `⟨u_t|H|u_t⟩ ≤ −α + ε/2`. An
/// exhausted redraw budget is a run failure, not a no-vector verdict.
pub fn quantum_ncf(
    h: &Hessian,
    decomp: &SpectralDecomposition,
    oracle: &TreeOracle,
    backend: &dyn Backend,
    params: &NCFParams,
    config: &SVEConfig,
    stream: &mut RandomStream,
) -> Result<QuantumDecision> {
    params.validate(h.lipschitz)?;
    let labelling = label_negative_eigenvalue(h, decomp, oracle, backend, params, config, stream)?;
    let verdict = match labelling.target {
        None => QuantumVerdict::NoVector,
        Some(center) => {
            let budget = target_iterations(h.frobenius_norm(), params.alpha, params.delta);
            let draw =
                generate_target_state(decomp, oracle, config, center, params.eps, budget, stream)?;
            QuantumVerdict::Vector { center, draw }
        }
    };
    Ok(QuantumDecision { labelling, verdict })
}

//! Simulation backends behind a common trait.
//!
//! Every stochastic primitive in the pipeline is a small circuit whose
//! outcome distribution has a closed form. The [`Backend`] trait exposes
//! those primitives twice over: `*_prob_*` (exact outcome probability, no
//! query cost) and `*_shot` (one sampled shot, charged against the oracle's
//! query counter). Two implementations are registered by name:
//!
//! * `statevector` — builds each circuit explicitly on [`QState`] and
//!   measures it; trustworthy by construction, but limited to `d ≤ 64`
//!   because joint registers cost `d²` amplitudes.
//! * `analytic` — evaluates the closed-form outcome probabilities and
//!   samples them directly; scales to large `d`.
//!
//! Both implementations consume exactly one uniform draw per stochastic
//! decision, in the same order, so a run driven by the same seed produces
//! the same transcript on either backend (up to probability differences at
//! the 1e−10 level, which the test suite pins down).

use crate::error::{Error, Result};
use crate::hessian::Hessian;
use crate::oracle::TreeOracle;
use crate::rng::RandomStream;
use crate::statevector::QState;

/// Largest dimension the statevector backend will simulate; joint-register
/// circuits above this are refused rather than silently thrashing memory.
pub const STATEVECTOR_MAX_DIM: usize = 64;

/// Largest dimension the analytic backend accepts (dense O(d²) classical
/// probability computations stay desk-scale up to here).
pub const ANALYTIC_MAX_DIM: usize = 4096;

/// One post-selected selection-round attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundAttempt {
    /// Whether the ancilla post-selection succeeded.
    pub accepted: bool,
    /// Measured column index, present iff `accepted`.
    pub index: Option<usize>,
    /// Exact success probability of the post-selection for this round.
    pub success_prob: f64,
}

/// A simulation strategy for the pipeline's measurement primitives.
pub trait Backend: Send + Sync + std::fmt::Debug {
    /// Registry key (`statevector` or `analytic`).
    fn name(&self) -> &'static str;

    /// `P(ancilla = 1) = (1 − ψᵀHψ/F)/2` for the eigenvalue-sign circuit.
    fn pned_prob_one(&self, h: &Hessian, oracle: &TreeOracle, psi: &[f64]) -> Result<f64>;

    /// One shot of the eigenvalue-sign circuit (2 oracle queries, 1 draw).
    fn pned_shot(
        &self,
        h: &Hessian,
        oracle: &TreeOracle,
        psi: &[f64],
        stream: &mut RandomStream,
    ) -> Result<usize>;

    /// `P(0) = (1 + ⟨φ|ψ⟩)/2` for the Hadamard overlap test.
    fn hadamard_test_prob_zero(&self, phi: &[f64], psi: &[f64]) -> Result<f64>;

    /// One Hadamard-test shot (2 state preparations charged, 1 draw).
    fn hadamard_test_shot(
        &self,
        oracle: &TreeOracle,
        phi: &[f64],
        psi: &[f64],
        stream: &mut RandomStream,
    ) -> Result<usize>;

    /// `P(0) = (1 + ⟨φ|ψ⟩²)/2` for the swap test.
    fn swap_test_prob_zero(&self, phi: &[f64], psi: &[f64]) -> Result<f64>;

    /// One swap-test shot (2 state preparations charged, 1 draw).
    fn swap_test_shot(
        &self,
        oracle: &TreeOracle,
        phi: &[f64],
        psi: &[f64],
        stream: &mut RandomStream,
    ) -> Result<usize>;

    /// Post-selection success probability of a selection round whose
    /// reflection targets are `targets` (applied in order).
    fn selection_success_prob(
        &self,
        h: &Hessian,
        oracle: &TreeOracle,
        targets: &[Vec<f64>],
    ) -> Result<f64>;

    /// One attempt of the selection round: post-select the ancilla and, on
    /// success, measure the index register (2 oracle queries; 1 draw, plus
    /// 1 more on success).
    fn selection_attempt(
        &self,
        h: &Hessian,
        oracle: &TreeOracle,
        targets: &[Vec<f64>],
        stream: &mut RandomStream,
    ) -> Result<RoundAttempt>;
}

static BACKENDS: [&dyn Backend; 2] = [&StatevectorBackend, &AnalyticBackend];

/// Look a backend up by its registry name.
pub fn lookup(name: &str) -> Result<&'static dyn Backend> {
    BACKENDS
        .iter()
        .copied()
        .find(|b| b.name() == name)
        .ok_or_else(|| {
            Error::validation(format!(
                "unknown backend '{name}' (available: {})",
                names().join(", ")
            ))
        })
}

/// Names of all registered backends.
pub fn names() -> Vec<&'static str> {
    BACKENDS.iter().map(|b| b.name()).collect()
}

fn require_unit(v: &[f64], what: &str) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!("{what} must be a unit vector (‖·‖ = {norm})")));
    }
    Ok(())
}

fn require_same_dim(phi: &[f64], psi: &[f64]) -> Result<()> {
    if phi.len() != psi.len() {
        return Err(Error::validation(format!(
            "vectors of different dimension ({} vs {})",
            phi.len(),
            psi.len()
        )));
    }
    Ok(())
}

/// Apply the ordered product of reflections `∏ (I − 2|t_m⟩⟨t_m|)` to `v`.
fn reflect_through_targets(v: &[f64], targets: &[Vec<f64>]) -> Vec<f64> {
    let mut out = v.to_vec();
    for t in targets {
        let dot: f64 = t.iter().zip(&out).map(|(a, b)| a * b).sum();
        for (o, &ti) in out.iter_mut().zip(t) {
            *o -= 2.0 * dot * ti;
        }
    }
    out
}

/// Per-column acceptance weights `‖(R+I)/2 · h_j‖²` of a selection round,
/// and their total `F²·P(accept)`.
fn selection_weights(h: &Hessian, targets: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let d = h.d;
    let mut weights = vec![0.0; d];
    for j in 0..d {
        let col = h.column(j);
        let reflected = reflect_through_targets(&col, targets);
        let mut w = 0.0;
        for i in 0..d {
            let half = 0.5 * (reflected[i] + col[i]);
            w += half * half;
        }
        weights[j] = w;
    }
    let total = weights.iter().sum();
    (weights, total)
}

// ---------------------------------------------------------------------------
// Statevector backend
// ---------------------------------------------------------------------------

/// Backend that simulates every circuit on explicit statevectors.
#[derive(Debug)]
pub struct StatevectorBackend;

impl StatevectorBackend {
    fn check_dim(&self, d: usize) -> Result<()> {
        if d > STATEVECTOR_MAX_DIM {
            return Err(Error::validation(format!(
                "statevector backend supports d ≤ {STATEVECTOR_MAX_DIM}, got d = {d}; \
                 use the analytic backend"
            )));
        }
        Ok(())
    }

    /// Eigenvalue-sign circuit: `H(a); cswap(x,y,a); V_H on a=1; U_H on
    /// a=0; H(a)`, leaving `P(a=1) = (1 − ψᵀHψ/F)/2`.
    fn pned_circuit(&self, oracle: &TreeOracle, psi: &[f64]) -> Result<QState> {
        let d = oracle.dim();
        self.check_dim(d)?;
        require_unit(psi, "eigenvalue-sign input")?;
        if psi.len() != d {
            return Err(Error::validation("input dimension does not match oracle"));
        }
        let x = QState::prepare_vector_state("x", psi)?;
        let y = QState::basis(&[("y", d)], &[0])?;
        let mut state = QState::product(&x, &y)?.attach_basis_register("a", 2, 0)?;
        state.hadamard("a")?;
        state.controlled_swap("x", "y", "a")?;
        oracle.apply_v_h(&mut state, "x", "y", Some(("a", 1)))?;
        oracle.apply_u_h(&mut state, "x", "y", Some(("a", 0)))?;
        state.hadamard("a")?;
        Ok(state)
    }

    /// Hadamard overlap test: prepare `(|0⟩|φ⟩ + |1⟩|ψ⟩)/√2`, `H(a)`.
    fn hadamard_circuit(&self, phi: &[f64], psi: &[f64]) -> Result<QState> {
        require_same_dim(phi, psi)?;
        self.check_dim(phi.len())?;
        require_unit(phi, "overlap-test input")?;
        require_unit(psi, "overlap-test input")?;
        let d = phi.len();
        let mut amps = Vec::with_capacity(2 * d);
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        amps.extend(phi.iter().map(|&v| v * inv));
        amps.extend(psi.iter().map(|&v| v * inv));
        let mut state = QState::from_amplitudes(&[("a", 2), ("v", d)], amps)?;
        state.hadamard("a")?;
        Ok(state)
    }

    /// Swap test: `H(a); cswap(x,y,a); H(a)` on `|φ⟩|ψ⟩|0⟩`.
    fn swap_circuit(&self, phi: &[f64], psi: &[f64]) -> Result<QState> {
        require_same_dim(phi, psi)?;
        self.check_dim(phi.len())?;
        require_unit(phi, "swap-test input")?;
        require_unit(psi, "swap-test input")?;
        let x = QState::prepare_vector_state("x", phi)?;
        let y = QState::prepare_vector_state("y", psi)?;
        let mut state = QState::product(&x, &y)?.attach_basis_register("a", 2, 0)?;
        state.hadamard("a")?;
        state.controlled_swap("x", "y", "a")?;
        state.hadamard("a")?;
        Ok(state)
    }

    /// Selection-round circuit: joint state, ancilla Hadamard, reflections
    /// about each target on the `a = 0` branch, Hadamard. Post-selecting
    /// `a = 0` leaves `[(R+I)/2]`-filtered columns on the index register.
    fn selection_circuit(
        &self,
        oracle: &TreeOracle,
        targets: &[Vec<f64>],
    ) -> Result<QState> {
        let d = oracle.dim();
        self.check_dim(d)?;
        for t in targets {
            require_unit(t, "reflection target")?;
            if t.len() != d {
                return Err(Error::validation("target dimension does not match oracle"));
            }
        }
        let mut state =
            oracle.prepare_joint_state("j", "t")?.attach_basis_register("a", 2, 0)?;
        state.hadamard("a")?;
        for t in targets {
            let axis = QState::prepare_vector_state("t", t)?;
            state.reflect_about_controlled(&axis, "t", "a", 0)?;
        }
        state.hadamard("a")?;
        Ok(state)
    }
}

impl Backend for StatevectorBackend {
    fn name(&self) -> &'static str {
        "statevector"
    }

    fn pned_prob_one(&self, _h: &Hessian, oracle: &TreeOracle, psi: &[f64]) -> Result<f64> {
        // Probe a clone so probability inspection stays query-free.
        let probe = oracle.clone();
        let state = self.pned_circuit(&probe, psi)?;
        Ok(state.marginal_probs("a")?[1])
    }

    fn pned_shot(
        &self,
        _h: &Hessian,
        oracle: &TreeOracle,
        psi: &[f64],
        stream: &mut RandomStream,
    ) -> Result<usize> {
        let state = self.pned_circuit(oracle, psi)?;
        let (outcome, _, _) = state.measure("a", stream)?;
        Ok(outcome)
    }

    fn hadamard_test_prob_zero(&self, phi: &[f64], psi: &[f64]) -> Result<f64> {
        Ok(self.hadamard_circuit(phi, psi)?.marginal_probs("a")?[0])
    }

    fn hadamard_test_shot(
        &self,
        oracle: &TreeOracle,
        phi: &[f64],
        psi: &[f64],
        stream: &mut RandomStream,
    ) -> Result<usize> {
        oracle.charge(2);
        let state = self.hadamard_circuit(phi, psi)?;
        let (outcome, _, _) = state.measure("a", stream)?;
        Ok(outcome)
    }

    fn swap_test_prob_zero(&self, phi: &[f64], psi: &[f64]) -> Result<f64> {
        Ok(self.swap_circuit(phi, psi)?.marginal_probs("a")?[0])
    }

    fn swap_test_shot(
        &self,
        oracle: &TreeOracle,
        phi: &[f64],
        psi: &[f64],
        stream: &mut RandomStream,
    ) -> Result<usize> {
        oracle.charge(2);
        let state = self.swap_circuit(phi, psi)?;
        let (outcome, _, _) = state.measure("a", stream)?;
        Ok(outcome)
    }

    fn selection_success_prob(
        &self,
        _h: &Hessian,
        oracle: &TreeOracle,
        targets: &[Vec<f64>],
    ) -> Result<f64> {
        let probe = oracle.clone();
        let state = self.selection_circuit(&probe, targets)?;
        Ok(state.marginal_probs("a")?[0])
    }

    fn selection_attempt(
        &self,
        _h: &Hessian,
        oracle: &TreeOracle,
        targets: &[Vec<f64>],
        stream: &mut RandomStream,
    ) -> Result<RoundAttempt> {
        let state = self.selection_circuit(oracle, targets)?;
        let (outcome, collapsed, _) = state.measure("a", stream)?;
        let success_prob = state.marginal_probs("a")?[0];
        if outcome != 0 {
            return Ok(RoundAttempt { accepted: false, index: None, success_prob });
        }
        let (index, _, _) = collapsed.measure("j", stream)?;
        Ok(RoundAttempt { accepted: true, index: Some(index), success_prob })
    }
}

// ---------------------------------------------------------------------------
// Analytic backend
// ---------------------------------------------------------------------------

/// Backend that samples the closed-form outcome distributions directly.
#[derive(Debug)]
pub struct AnalyticBackend;

impl AnalyticBackend {
    fn pned_p1(&self, h: &Hessian, psi: &[f64]) -> Result<f64> {
        require_unit(psi, "eigenvalue-sign input")?;
        if psi.len() != h.d {
            return Err(Error::validation("input dimension does not match oracle"));
        }
        Ok((1.0 - h.rayleigh(psi) / h.frobenius_norm()) / 2.0)
    }
}

impl Backend for AnalyticBackend {
    fn name(&self) -> &'static str {
        "analytic"
    }

    fn pned_prob_one(&self, h: &Hessian, _oracle: &TreeOracle, psi: &[f64]) -> Result<f64> {
        self.pned_p1(h, psi)
    }

    fn pned_shot(
        &self,
        h: &Hessian,
        oracle: &TreeOracle,
        psi: &[f64],
        stream: &mut RandomStream,
    ) -> Result<usize> {
        oracle.charge(2);
        let p1 = self.pned_p1(h, psi)?;
        Ok(stream.categorical(&[1.0 - p1, p1]))
    }

    fn hadamard_test_prob_zero(&self, phi: &[f64], psi: &[f64]) -> Result<f64> {
        require_same_dim(phi, psi)?;
        require_unit(phi, "overlap-test input")?;
        require_unit(psi, "overlap-test input")?;
        let dot: f64 = phi.iter().zip(psi).map(|(a, b)| a * b).sum();
        Ok((1.0 + dot) / 2.0)
    }

    fn hadamard_test_shot(
        &self,
        oracle: &TreeOracle,
        phi: &[f64],
        psi: &[f64],
        stream: &mut RandomStream,
    ) -> Result<usize> {
        oracle.charge(2);
        let p0 = self.hadamard_test_prob_zero(phi, psi)?;
        Ok(stream.categorical(&[p0, 1.0 - p0]))
    }

    fn swap_test_prob_zero(&self, phi: &[f64], psi: &[f64]) -> Result<f64> {
        require_same_dim(phi, psi)?;
        require_unit(phi, "swap-test input")?;
        require_unit(psi, "swap-test input")?;
        let dot: f64 = phi.iter().zip(psi).map(|(a, b)| a * b).sum();
        Ok((1.0 + dot * dot) / 2.0)
    }

    fn swap_test_shot(
        &self,
        oracle: &TreeOracle,
        phi: &[f64],
        psi: &[f64],
        stream: &mut RandomStream,
    ) -> Result<usize> {
        oracle.charge(2);
        let p0 = self.swap_test_prob_zero(phi, psi)?;
        Ok(stream.categorical(&[p0, 1.0 - p0]))
    }

    fn selection_success_prob(
        &self,
        h: &Hessian,
        _oracle: &TreeOracle,
        targets: &[Vec<f64>],
    ) -> Result<f64> {
        for t in targets {
            require_unit(t, "reflection target")?;
        }
        let (_, total) = selection_weights(h, targets);
        let f = h.frobenius_norm();
        Ok(total / (f * f))
    }

    fn selection_attempt(
        &self,
        h: &Hessian,
        oracle: &TreeOracle,
        targets: &[Vec<f64>],
        stream: &mut RandomStream,
    ) -> Result<RoundAttempt> {
        for t in targets {
            require_unit(t, "reflection target")?;
        }
        oracle.charge(2);
        let (weights, total) = selection_weights(h, targets);
        let f = h.frobenius_norm();
        let success_prob = total / (f * f);
        let outcome = stream.categorical(&[success_prob, 1.0 - success_prob]);
        if outcome != 0 {
            return Ok(RoundAttempt { accepted: false, index: None, success_prob });
        }
        let index = stream.categorical(&weights);
        Ok(RoundAttempt { accepted: true, index: Some(index), success_prob })
    }
}

//! Real-amplitude statevector engine over named registers.
//!
//! States in this pipeline live in tensor products of small `d`-dimensional
//! registers rather than qubit lattices, and every circuit involved keeps
//! amplitudes real, so the engine stores a flat `Vec<f64>` indexed
//! row-major over an ordered register list. Operations address registers by
//! name; the gate set is exactly what the circuits need: Hadamard on a
//! dim-2 register, controlled-SWAP, (controlled) reflections about a state,
//! projective measurement and post-selection.

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Norm drift tolerated before an operation is considered to have broken
/// normalization (checked in debug builds after every gate).
const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Register {
    pub name: String,
    pub dim: usize,
}

/// A normalized real-amplitude state over an ordered list of registers.
#[derive(Debug, Clone)]
pub struct QState {
    registers: Vec<Register>,
    amps: Vec<f64>,
}

impl QState {
    /// Product basis state `|b_1⟩|b_2⟩…` over the given registers.
    pub fn basis(registers: &[(&str, usize)], basis: &[usize]) -> Result<QState> {
        if registers.len() != basis.len() {
            return Err(Error::Register("basis index per register required".into()));
        }
        let regs: Vec<Register> = registers
            .iter()
            .map(|(n, d)| Register { name: n.to_string(), dim: *d })
            .collect();
        validate_registers(&regs)?;
        for (reg, &b) in regs.iter().zip(basis) {
            if b >= reg.dim {
                return Err(Error::Register(format!(
                    "basis index {b} out of range for register '{}' (dim {})",
                    reg.name, reg.dim
                )));
            }
        }
        let total: usize = regs.iter().map(|r| r.dim).product();
        let mut amps = vec![0.0; total];
        let mut idx = 0;
        for (reg, &b) in regs.iter().zip(basis) {
            idx = idx * reg.dim + b;
        }
        amps[idx] = 1.0;
        Ok(QState { registers: regs, amps })
    }

    /// Encode a classical vector as a single-register state `v/‖v‖`.
    pub fn prepare_vector_state(name: &str, v: &[f64]) -> Result<QState> {
        if v.is_empty() {
            return Err(Error::Register("cannot prepare an empty register".into()));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::ZeroVector);
        }
        Ok(QState {
            registers: vec![Register { name: name.to_string(), dim: v.len() }],
            amps: v.iter().map(|x| x / norm).collect(),
        })
    }

    /// Build directly from amplitudes (must be normalized within 1e−9; the
    /// stored copy is renormalized exactly).
    pub fn from_amplitudes(registers: &[(&str, usize)], amps: Vec<f64>) -> Result<QState> {
        let regs: Vec<Register> = registers
            .iter()
            .map(|(n, d)| Register { name: n.to_string(), dim: *d })
            .collect();
        validate_registers(&regs)?;
        let total: usize = regs.iter().map(|r| r.dim).product();
        if amps.len() != total {
            return Err(Error::Register(format!(
                "amplitude vector has length {} but registers span {total}",
                amps.len()
            )));
        }
        let norm = amps.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Register(format!("amplitudes not normalized (‖·‖ = {norm})")));
        }
        let mut state = QState { registers: regs, amps };
        state.renormalize();
        Ok(state)
    }

    /// Tensor product; register names must stay unique.
    pub fn product(a: &QState, b: &QState) -> Result<QState> {
        let mut registers = a.registers.clone();
        registers.extend(b.registers.iter().cloned());
        validate_registers(&registers)?;
        let mut amps = Vec::with_capacity(a.amps.len() * b.amps.len());
        for &x in &a.amps {
            for &y in &b.amps {
                amps.push(x * y);
            }
        }
        Ok(QState { registers, amps })
    }

    /// Append a fresh register in a basis state (tensor on the right).
    pub fn attach_basis_register(&self, name: &str, dim: usize, index: usize) -> Result<QState> {
        let basis = QState::basis(&[(name, dim)], &[index])?;
        QState::product(self, &basis)
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn renormalize(&mut self) {
        let norm = self.norm();
        if norm > 0.0 {
            for a in self.amps.iter_mut() {
                *a /= norm;
            }
        }
    }

    fn reg_index(&self, name: &str) -> Result<usize> {
        self.registers
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| Error::Register(format!("no register named '{name}'")))
    }

    /// (dim, stride, block) for a register: amplitudes with coordinate `t`
    /// on that register sit at `outer·block + t·stride + inner`.
    fn layout(&self, reg: usize) -> (usize, usize, usize) {
        let dim = self.registers[reg].dim;
        let stride: usize = self.registers[reg + 1..].iter().map(|r| r.dim).product();
        (dim, stride, dim * stride)
    }

    /// Amplitude at explicit register coordinates.
    pub fn amp_at(&self, coords: &[usize]) -> Result<f64> {
        if coords.len() != self.registers.len() {
            return Err(Error::Register("coordinate per register required".into()));
        }
        let mut idx = 0;
        for (reg, &c) in self.registers.iter().zip(coords) {
            if c >= reg.dim {
                return Err(Error::Register(format!(
                    "coordinate {c} out of range for register '{}'",
                    reg.name
                )));
            }
            idx = idx * reg.dim + c;
        }
        Ok(self.amps[idx])
    }

    /// ⟨self|other⟩ (registers must match by name and dimension).
    pub fn inner(&self, other: &QState) -> Result<f64> {
        if self.registers != other.registers {
            return Err(Error::Register("inner product between mismatched registers".into()));
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a * b).sum())
    }

    /// Hadamard on a dim-2 register.
    pub fn hadamard(&mut self, reg: &str) -> Result<()> {
        let r = self.reg_index(reg)?;
        let (dim, stride, block) = self.layout(r);
        if dim != 2 {
            return Err(Error::Register(format!("Hadamard requires dim 2, '{reg}' has {dim}")));
        }
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let outer = self.amps.len() / block;
        for o in 0..outer {
            for i in 0..stride {
                let i0 = o * block + i;
                let i1 = i0 + stride;
                let (a0, a1) = (self.amps[i0], self.amps[i1]);
                self.amps[i0] = (a0 + a1) * inv_sqrt2;
                self.amps[i1] = (a0 - a1) * inv_sqrt2;
            }
        }
        debug_assert!((self.norm() - 1.0).abs() < NORM_TOL);
        Ok(())
    }

    /// Swap two same-dimension registers on the `control = 1` branch.
    pub fn controlled_swap(&mut self, reg_a: &str, reg_b: &str, control: &str) -> Result<()> {
        let (ra, rb, rc) = (self.reg_index(reg_a)?, self.reg_index(reg_b)?, self.reg_index(control)?);
        if self.registers[ra].dim != self.registers[rb].dim {
            return Err(Error::Register(format!(
                "controlled swap between dims {} and {}",
                self.registers[ra].dim, self.registers[rb].dim
            )));
        }
        if self.registers[rc].dim != 2 {
            return Err(Error::Register("control register must have dim 2".into()));
        }
        if ra == rb || ra == rc || rb == rc {
            return Err(Error::Register("controlled swap registers must be distinct".into()));
        }
        let coords_of = coord_decoder(&self.registers);
        let mut new = self.amps.clone();
        for (idx, &amp) in self.amps.iter().enumerate() {
            let mut coords = coords_of(idx);
            if coords[rc] == 1 {
                coords.swap(ra, rb);
                let target = coord_encode(&self.registers, &coords);
                new[target] = amp;
            }
        }
        self.amps = new;
        debug_assert!((self.norm() - 1.0).abs() < NORM_TOL);
        Ok(())
    }

    /// Householder-style reflection `v ↦ v − 2⟨axis|v⟩·axis` applied
    /// block-wise on the target register across all other registers.
    pub fn reflect_about(&mut self, axis: &QState, reg: &str) -> Result<()> {
        self.reflect_about_impl(axis, reg, None)
    }

    /// Reflection on the target register applied only where `control_reg`
    /// holds `control_value`; identity on the other branches. This is the
    /// `R ⊗ |c⟩⟨c| + I ⊗ (1−|c⟩⟨c|)` block operator the selection circuit
    /// uses.
    pub fn reflect_about_controlled(
        &mut self,
        axis: &QState,
        reg: &str,
        control_reg: &str,
        control_value: usize,
    ) -> Result<()> {
        self.reflect_about_impl(axis, reg, Some((control_reg, control_value)))
    }

    fn reflect_about_impl(
        &mut self,
        axis: &QState,
        reg: &str,
        control: Option<(&str, usize)>,
    ) -> Result<()> {
        let r = self.reg_index(reg)?;
        if axis.registers.len() != 1 || axis.registers[0].dim != self.registers[r].dim {
            return Err(Error::Register(
                "reflection axis must be a single register of matching dimension".into(),
            ));
        }
        let axis_norm = axis.norm();
        if (axis_norm - 1.0).abs() > 1e-9 {
            return Err(Error::Register(format!("reflection axis not normalized ({axis_norm})")));
        }
        let control = match control {
            Some((cname, cval)) => {
                let rc = self.reg_index(cname)?;
                if cval >= self.registers[rc].dim {
                    return Err(Error::Register(format!(
                        "control value {cval} out of range for '{cname}'"
                    )));
                }
                if rc == r {
                    return Err(Error::Register("control equals reflection target".into()));
                }
                Some((rc, cval))
            }
            None => None,
        };

        let (dim, stride, block) = self.layout(r);
        let coords_of = coord_decoder(&self.registers);
        let outer = self.amps.len() / block;
        for o in 0..outer {
            for i in 0..stride {
                let base = o * block + i;
                if let Some((rc, cval)) = control {
                    // All positions in this block share every non-target
                    // coordinate, so checking the first is enough.
                    if coords_of(base)[rc] != cval {
                        continue;
                    }
                }
                let mut dot = 0.0;
                for t in 0..dim {
                    dot += axis.amps[t] * self.amps[base + t * stride];
                }
                for t in 0..dim {
                    self.amps[base + t * stride] -= 2.0 * dot * axis.amps[t];
                }
            }
        }
        debug_assert!((self.norm() - 1.0).abs() < 1e-9);
        Ok(())
    }

    /// Marginal Born probabilities of a register.
    pub fn marginal_probs(&self, reg: &str) -> Result<Vec<f64>> {
        let r = self.reg_index(reg)?;
        let (dim, stride, block) = self.layout(r);
        let mut probs = vec![0.0; dim];
        let outer = self.amps.len() / block;
        for o in 0..outer {
            for t in 0..dim {
                for i in 0..stride {
                    let a = self.amps[o * block + t * stride + i];
                    probs[t] += a * a;
                }
            }
        }
        Ok(probs)
    }

    /// Projective measurement of one register: samples an outcome from the
    /// Born distribution (one uniform draw), returns it with the collapsed
    /// renormalized state and the outcome's probability.
    pub fn measure(&self, reg: &str, stream: &mut RandomStream) -> Result<(usize, QState, f64)> {
        let probs = self.marginal_probs(reg)?;
        let outcome = stream.categorical(&probs);
        let (state, p) = self.post_select(reg, outcome)?;
        Ok((outcome, state, p))
    }

    /// Project a register onto a fixed outcome and renormalize. Errors on a
    /// zero-probability outcome.
    pub fn post_select(&self, reg: &str, outcome: usize) -> Result<(QState, f64)> {
        let r = self.reg_index(reg)?;
        let (dim, stride, block) = self.layout(r);
        if outcome >= dim {
            return Err(Error::Register(format!(
                "outcome {outcome} out of range for register '{reg}'"
            )));
        }
        let mut p = 0.0;
        let outer = self.amps.len() / block;
        for o in 0..outer {
            for i in 0..stride {
                let a = self.amps[o * block + outcome * stride + i];
                p += a * a;
            }
        }
        if p <= 1e-300 {
            return Err(Error::Register(format!(
                "post-selection on zero-probability outcome {outcome} of '{reg}'"
            )));
        }
        let scale = 1.0 / p.sqrt();
        let mut amps = vec![0.0; self.amps.len()];
        for o in 0..outer {
            for i in 0..stride {
                let idx = o * block + outcome * stride + i;
                amps[idx] = self.amps[idx] * scale;
            }
        }
        Ok((QState { registers: self.registers.clone(), amps }, p))
    }

    /// Remove a register that is exactly in a basis state (all probability
    /// mass on a single coordinate within 1e−12). Used to discard index
    /// registers that circuits leave untouched.
    pub fn drop_basis_register(&self, reg: &str) -> Result<QState> {
        let r = self.reg_index(reg)?;
        let probs = self.marginal_probs(reg)?;
        let (coord, &p) = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty register");
        if (p - 1.0).abs() > 1e-12 {
            return Err(Error::Register(format!(
                "register '{reg}' is not in a basis state (max outcome probability {p})"
            )));
        }
        let (dim, stride, block) = self.layout(r);
        let outer = self.amps.len() / block;
        let mut amps = Vec::with_capacity(self.amps.len() / dim);
        for o in 0..outer {
            for i in 0..stride {
                amps.push(self.amps[o * block + coord * stride + i]);
            }
        }
        let mut registers = self.registers.clone();
        registers.remove(r);
        let mut state = QState { registers, amps };
        state.renormalize();
        Ok(state)
    }
}

fn validate_registers(regs: &[Register]) -> Result<()> {
    if regs.is_empty() {
        return Err(Error::Register("a state needs at least one register".into()));
    }
    for reg in regs {
        if reg.dim == 0 {
            return Err(Error::Register(format!("register '{}' has dimension 0", reg.name)));
        }
    }
    for i in 0..regs.len() {
        for j in (i + 1)..regs.len() {
            if regs[i].name == regs[j].name {
                return Err(Error::Register(format!("duplicate register name '{}'", regs[i].name)));
            }
        }
    }
    Ok(())
}

fn coord_encode(regs: &[Register], coords: &[usize]) -> usize {
    let mut idx = 0;
    for (reg, &c) in regs.iter().zip(coords) {
        idx = idx * reg.dim + c;
    }
    idx
}

fn coord_decoder(regs: &[Register]) -> impl Fn(usize) -> Vec<usize> + '_ {
    move |mut idx: usize| {
        let mut coords = vec![0; regs.len()];
        for (k, reg) in regs.iter().enumerate().rev() {
            coords[k] = idx % reg.dim;
            idx /= reg.dim;
        }
        coords
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn prepare_normalizes() {
        let s = QState::prepare_vector_state("v", &[3.0, 4.0]).unwrap();
        assert_close(s.amplitudes()[0], 0.6, 1e-15);
        assert_close(s.amplitudes()[1], 0.8, 1e-15);
    }

    #[test]
    fn prepare_rejects_zero() {
        assert!(matches!(
            QState::prepare_vector_state("v", &[0.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn hadamard_is_involution() {
        let mut s = QState::basis(&[("a", 2)], &[0]).unwrap();
        s.hadamard("a").unwrap();
        assert_close(s.amplitudes()[0], std::f64::consts::FRAC_1_SQRT_2, 1e-15);
        assert_close(s.amplitudes()[1], std::f64::consts::FRAC_1_SQRT_2, 1e-15);
        s.hadamard("a").unwrap();
        assert_close(s.amplitudes()[0], 1.0, 1e-15);
        assert_close(s.amplitudes()[1], 0.0, 1e-15);
    }

    #[test]
    fn hadamard_requires_dim_two() {
        let mut s = QState::basis(&[("a", 3)], &[0]).unwrap();
        assert!(s.hadamard("a").is_err());
    }

    #[test]
    fn controlled_swap_branches() {
        // |x⟩|y⟩|1⟩ → |y⟩|x⟩|1⟩
        let mut s = QState::basis(&[("a", 3), ("b", 3), ("c", 2)], &[1, 2, 1]).unwrap();
        s.controlled_swap("a", "b", "c").unwrap();
        assert_close(s.amp_at(&[2, 1, 1]).unwrap(), 1.0, 1e-15);

        // control 0: unchanged
        let mut s0 = QState::basis(&[("a", 3), ("b", 3), ("c", 2)], &[1, 2, 0]).unwrap();
        s0.controlled_swap("a", "b", "c").unwrap();
        assert_close(s0.amp_at(&[1, 2, 0]).unwrap(), 1.0, 1e-15);

        // Superposed control: each branch handled independently.
        let mut sup = QState::basis(&[("a", 2), ("b", 2), ("c", 2)], &[1, 0, 0]).unwrap();
        sup.hadamard("c").unwrap();
        sup.controlled_swap("a", "b", "c").unwrap();
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        assert_close(sup.amp_at(&[1, 0, 0]).unwrap(), inv, 1e-15);
        assert_close(sup.amp_at(&[0, 1, 1]).unwrap(), inv, 1e-15);
    }

    #[test]
    fn reflection_cases() {
        let axis = QState::prepare_vector_state("v", &[1.0, 0.0, 0.0]).unwrap();

        // Along the axis: flips sign.
        let mut s = QState::basis(&[("v", 3)], &[0]).unwrap();
        s.reflect_about(&axis, "v").unwrap();
        assert_close(s.amplitudes()[0], -1.0, 1e-15);

        // Orthogonal to the axis: unchanged.
        let mut t = QState::prepare_vector_state("v", &[0.0, 0.6, 0.8]).unwrap();
        t.reflect_about(&axis, "v").unwrap();
        assert_close(t.amplitudes()[1], 0.6, 1e-15);
        assert_close(t.amplitudes()[2], 0.8, 1e-15);

        // Reflection is an involution on a generic state.
        let mut g = QState::prepare_vector_state("v", &[0.2, -0.5, 0.7]).unwrap();
        let before = g.amplitudes().to_vec();
        let axis2 = QState::prepare_vector_state("v", &[0.5, 0.5, std::f64::consts::FRAC_1_SQRT_2])
            .unwrap();
        g.reflect_about(&axis2, "v").unwrap();
        g.reflect_about(&axis2, "v").unwrap();
        for (a, b) in g.amplitudes().iter().zip(&before) {
            assert_close(*a, *b, 1e-14);
        }
    }

    #[test]
    fn controlled_reflection_only_touches_branch() {
        let axis = QState::prepare_vector_state("t", &[1.0, 0.0]).unwrap();
        let mut s = QState::basis(&[("t", 2), ("c", 2)], &[0, 0]).unwrap();
        s.hadamard("c").unwrap();
        // Reflect only on the c = 0 branch.
        s.reflect_about_controlled(&axis, "t", "c", 0).unwrap();
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        assert_close(s.amp_at(&[0, 0]).unwrap(), -inv, 1e-15);
        assert_close(s.amp_at(&[0, 1]).unwrap(), inv, 1e-15);
    }

    #[test]
    fn unnormalized_axis_rejected() {
        let mut s = QState::basis(&[("v", 2)], &[0]).unwrap();
        let bad_axis = QState {
            registers: vec![Register { name: "v".into(), dim: 2 }],
            amps: vec![0.5, 0.0],
        };
        assert!(s.reflect_about(&bad_axis, "v").is_err());
    }

    #[test]
    fn marginals_and_post_select() {
        let mut s = QState::prepare_vector_state("a", &[0.6, 0.8]).unwrap();
        let extra = QState::prepare_vector_state("b", &[1.0, 2.0, 2.0]).unwrap();
        s = QState::product(&s, &extra).unwrap();

        let pa = s.marginal_probs("a").unwrap();
        assert_close(pa[0], 0.36, 1e-12);
        assert_close(pa[1], 0.64, 1e-12);

        let (collapsed, p) = s.post_select("a", 1).unwrap();
        assert_close(p, 0.64, 1e-12);
        assert_close(collapsed.norm(), 1.0, 1e-12);
        // Register b's distribution is untouched by selecting on a.
        let pb = collapsed.marginal_probs("b").unwrap();
        assert_close(pb[0], 1.0 / 9.0, 1e-12);

        // Zero-probability branch is an error.
        let basis = QState::basis(&[("z", 2)], &[0]).unwrap();
        assert!(basis.post_select("z", 1).is_err());
    }

    #[test]
    fn measurement_born_frequencies() {
        let s = QState::prepare_vector_state("a", &[1.0, 2.0, 2.0]).unwrap();
        let mut stream = RandomStream::from_seed(99);
        let n = 30_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let (outcome, collapsed, p) = s.measure("a", &mut stream).unwrap();
            counts[outcome] += 1;
            assert_close(collapsed.amplitudes()[outcome].abs(), 1.0, 1e-12);
            assert!(p > 0.0);
        }
        let expect = [1.0 / 9.0, 4.0 / 9.0, 4.0 / 9.0];
        for k in 0..3 {
            let freq = counts[k] as f64 / n as f64;
            assert!((freq - expect[k]).abs() < 0.01, "outcome {k}: {freq}");
        }
    }

    #[test]
    fn measurement_replay_is_deterministic() {
        let s = QState::prepare_vector_state("a", &[0.3, -0.4, 0.5, 0.7]).unwrap();
        let run = |seed: u64| -> Vec<usize> {
            let mut stream = RandomStream::from_seed(seed);
            (0..200).map(|_| s.measure("a", &mut stream).unwrap().0).collect()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn drop_basis_register_extracts_product_factor() {
        let s = QState::basis(&[("i", 4), ("j", 3)], &[2, 0]).unwrap();
        let mut s = s;
        // Put register j into a superposition; i stays basis.
        let axis = QState::prepare_vector_state("j", &[1.0, 1.0, 1.0]).unwrap();
        s.reflect_about(&axis, "j").unwrap();
        let dropped = s.drop_basis_register("i").unwrap();
        assert_eq!(dropped.registers().len(), 1);
        assert_eq!(dropped.registers()[0].name, "j");
        assert_close(dropped.norm(), 1.0, 1e-12);

        // A superposed register cannot be dropped.
        let mut sup = QState::basis(&[("i", 2), ("j", 2)], &[0, 0]).unwrap();
        sup.hadamard("i").unwrap();
        assert!(sup.drop_basis_register("i").is_err());
    }

    #[test]
    fn duplicate_register_names_rejected() {
        assert!(QState::basis(&[("a", 2), ("a", 2)], &[0, 0]).is_err());
        let x = QState::basis(&[("a", 2)], &[0]).unwrap();
        assert!(QState::product(&x, &x).is_err());
    }
}

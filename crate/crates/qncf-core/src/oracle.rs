//! Quantum-access data structures for a Hessian and the two column oracles.
//!
//! Access to `H` is mediated by binary trees in the Kerenidis–Prakash
//! style: one tree per column storing signed squared entries with subtree
//! sums at interior nodes, plus one tree over the column norms. From these
//! the simulator implements the two state-preparation unitaries
//!
//! * `U_H : |i⟩|0⟩ ↦ |i⟩|h_i⟩` — load column `i`, normalized, and
//! * `V_H : |0⟩|j⟩ ↦ |h̃⟩|j⟩` — load the column-norm profile `h̃`,
//!
//! where `|h_i⟩ = h_i/‖h_i‖` and `|h̃⟩ = (1/‖H‖_F) Σ_i ‖h_i‖ |i⟩`.
//! Every oracle application ticks a shared atomic query counter; bulk
//! sampling paths account for their expected cost through [`TreeOracle::charge`].

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::Hessian;
use crate::linalg::Matrix;
use crate::statevector::QState;

/// Binary tree over a real vector: leaf `i` stores `(sign(x_i), x_i²)`,
/// interior nodes store subtree sums of squares, the root is `‖x‖²`.
/// Leaves are padded to the next power of two.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KPTree {
    dim: usize,
    padded: usize,
    /// Heap-ordered subtree sums; `nodes[0]` is the root, children of `k`
    /// are `2k+1` and `2k+2`, leaves occupy `padded-1 ..`.
    nodes: Vec<f64>,
    /// Entry signs (−1, 0, +1), one per unpadded leaf.
    signs: Vec<i8>,
}

impl KPTree {
    pub fn build(x: &[f64]) -> KPTree {
        let dim = x.len();
        let padded = dim.next_power_of_two().max(1);
        let mut nodes = vec![0.0; 2 * padded - 1];
        for (i, &v) in x.iter().enumerate() {
            nodes[padded - 1 + i] = v * v;
        }
        for k in (0..padded - 1).rev() {
            nodes[k] = nodes[2 * k + 1] + nodes[2 * k + 2];
        }
        let signs = x
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    1
                } else if v < 0.0 {
                    -1
                } else {
                    0
                }
            })
            .collect();
        KPTree { dim, padded, nodes, signs }
    }

    pub fn len(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// Root value `‖x‖²`.
    pub fn norm_sq(&self) -> f64 {
        self.nodes[0]
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `(sign, x_i²)` stored at leaf `i`.
    pub fn leaf(&self, i: usize) -> (i8, f64) {
        (self.signs[i], self.nodes[self.padded - 1 + i])
    }

    /// Interior node value by heap index (for inspecting subtree sums).
    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Reconstruct the stored component `x_i = sign·√(x_i²)`.
    pub fn component(&self, i: usize) -> f64 {
        let (sign, sq) = self.leaf(i);
        f64::from(sign) * sq.sqrt()
    }

    /// The normalized vector `x/‖x‖`; errors on the zero vector.
    pub fn unit_amplitudes(&self) -> Result<Vec<f64>> {
        let norm = self.norm();
        if norm <= 1e-300 {
            return Err(Error::ZeroVector);
        }
        Ok((0..self.dim).map(|i| self.component(i) / norm).collect())
    }
}

/// Tree-backed oracle pair for one Hessian, with a shared query counter.
#[derive(Debug)]
pub struct TreeOracle {
    dim: usize,
    f_norm: f64,
    column_trees: Vec<KPTree>,
    norm_tree: KPTree,
    queries: AtomicU64,
}

#[derive(Serialize, Deserialize)]
struct TreeOracleWire {
    dim: usize,
    f_norm: f64,
    column_trees: Vec<KPTree>,
    norm_tree: KPTree,
}

impl Serialize for TreeOracle {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        TreeOracleWire {
            dim: self.dim,
            f_norm: self.f_norm,
            column_trees: self.column_trees.clone(),
            norm_tree: self.norm_tree.clone(),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for TreeOracle {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let wire = TreeOracleWire::deserialize(de)?;
        Ok(TreeOracle {
            dim: wire.dim,
            f_norm: wire.f_norm,
            column_trees: wire.column_trees,
            norm_tree: wire.norm_tree,
            queries: AtomicU64::new(0),
        })
    }
}

impl Clone for TreeOracle {
    fn clone(&self) -> Self {
        TreeOracle {
            dim: self.dim,
            f_norm: self.f_norm,
            column_trees: self.column_trees.clone(),
            norm_tree: self.norm_tree.clone(),
            queries: AtomicU64::new(self.queries()),
        }
    }
}

impl TreeOracle {
    /// Build the column trees and norm tree for a Hessian.
    pub fn build(h: &Hessian) -> TreeOracle {
        let d = h.d;
        let column_trees: Vec<KPTree> = (0..d).map(|i| KPTree::build(&h.column(i))).collect();
        let norms: Vec<f64> = column_trees.iter().map(KPTree::norm).collect();
        let norm_tree = KPTree::build(&norms);
        TreeOracle {
            dim: d,
            f_norm: norm_tree.norm(),
            column_trees,
            norm_tree,
            queries: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Frobenius norm `F = ‖H‖_F`, read off the norm tree's root.
    pub fn frobenius_norm(&self) -> f64 {
        self.f_norm
    }

    pub fn column_tree(&self, i: usize) -> &KPTree {
        &self.column_trees[i]
    }

    pub fn norm_tree(&self) -> &KPTree {
        &self.norm_tree
    }

    /// Oracle applications so far (each `U_H`/`V_H` use counts one).
    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn reset_queries(&self) {
        self.queries.store(0, Ordering::Relaxed);
    }

    /// Account for `n` oracle uses charged by a bulk-sampling shortcut that
    /// did not route through the statevector application path.
    pub fn charge(&self, n: u64) {
        self.queries.fetch_add(n, Ordering::Relaxed);
    }

    /// Normalized column `h_i/‖h_i‖`; a zero column has no defined image.
    pub fn column_unit(&self, i: usize) -> Result<Vec<f64>> {
        self.column_trees[i]
            .unit_amplitudes()
            .map_err(|_| Error::ZeroColumn { index: i })
    }

    /// The norm-profile state `h̃_i = ‖h_i‖/F` as plain amplitudes.
    pub fn norm_profile_unit(&self) -> Result<Vec<f64>> {
        self.norm_tree.unit_amplitudes()
    }

    /// Apply `U_H` to `(reg_i, reg_j)`, optionally only on the branch where
    /// `control` holds the given value. On every branch it acts on, `reg_j`
    /// must be blank (`|0⟩`); column `i` must be nonzero wherever `|i⟩`
    /// carries amplitude.
    pub fn apply_u_h(
        &self,
        state: &mut QState,
        reg_i: &str,
        reg_j: &str,
        control: Option<(&str, usize)>,
    ) -> Result<()> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.apply_column_loader(state, reg_i, reg_j, control, Loader::Column)
    }

    /// Apply `V_H` to `(reg_i, reg_j)`: on acted branches `reg_i` must be
    /// blank and is loaded with the norm profile `h̃` (independent of `j`).
    pub fn apply_v_h(
        &self,
        state: &mut QState,
        reg_i: &str,
        reg_j: &str,
        control: Option<(&str, usize)>,
    ) -> Result<()> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.apply_column_loader(state, reg_i, reg_j, control, Loader::NormProfile)
    }

    fn apply_column_loader(
        &self,
        state: &mut QState,
        reg_i: &str,
        reg_j: &str,
        control: Option<(&str, usize)>,
        loader: Loader,
    ) -> Result<()> {
        let regs = state.registers().to_vec();
        let pos = |name: &str| -> Result<usize> {
            regs.iter()
                .position(|r| r.name == name)
                .ok_or_else(|| Error::Register(format!("no register named '{name}'")))
        };
        let ri = pos(reg_i)?;
        let rj = pos(reg_j)?;
        if ri == rj {
            return Err(Error::Register("oracle needs two distinct registers".into()));
        }
        if regs[ri].dim != self.dim || regs[rj].dim != self.dim {
            return Err(Error::Register(format!(
                "oracle is {d}-dimensional but registers have dims {} and {}",
                regs[ri].dim, regs[rj].dim,
                d = self.dim
            )));
        }
        let control = match control {
            Some((name, value)) => {
                let rc = pos(name)?;
                if rc == ri || rc == rj {
                    return Err(Error::Register("control overlaps oracle registers".into()));
                }
                if value >= regs[rc].dim {
                    return Err(Error::Register(format!(
                        "control value {value} out of range for '{name}'"
                    )));
                }
                Some((rc, value))
            }
            None => None,
        };

        // The register whose contents must be blank and get overwritten.
        let (blank, keyed) = match loader {
            Loader::Column => (rj, ri),
            Loader::NormProfile => (ri, rj),
        };

        let dims: Vec<usize> = regs.iter().map(|r| r.dim).collect();
        let amps = state.amplitudes().to_vec();
        let mut new = vec![0.0; amps.len()];
        let decode = |mut idx: usize| -> Vec<usize> {
            let mut coords = vec![0; dims.len()];
            for k in (0..dims.len()).rev() {
                coords[k] = idx % dims[k];
                idx /= dims[k];
            }
            coords
        };
        let encode = |coords: &[usize]| -> usize {
            coords.iter().zip(&dims).fold(0, |acc, (&c, &d)| acc * d + c)
        };

        for (idx, &amp) in amps.iter().enumerate() {
            if amp == 0.0 {
                continue;
            }
            let coords = decode(idx);
            let acted = match control {
                Some((rc, value)) => coords[rc] == value,
                None => true,
            };
            if !acted {
                new[idx] += amp;
                continue;
            }
            if coords[blank] != 0 {
                return Err(Error::Register(format!(
                    "oracle target register '{}' is not blank on an acted branch",
                    regs[blank].name
                )));
            }
            let spread = match loader {
                Loader::Column => self.column_unit(coords[keyed])?,
                Loader::NormProfile => self.norm_profile_unit()?,
            };
            let mut out = coords.clone();
            for (t, &w) in spread.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                out[blank] = t;
                new[encode(&out)] += amp * w;
            }
        }

        let reg_pairs: Vec<(String, usize)> =
            regs.iter().map(|r| (r.name.clone(), r.dim)).collect();
        let borrowed: Vec<(&str, usize)> =
            reg_pairs.iter().map(|(n, d)| (n.as_str(), *d)).collect();
        *state = QState::from_amplitudes(&borrowed, new)?;
        Ok(())
    }

    /// Prepare `(1/F) Σ_{ij} H_ij |i⟩|j⟩ = (1/F) Σ_k λ_k |u_k⟩|u_k⟩` by
    /// loading the norm profile and then the columns (two oracle queries).
    pub fn prepare_joint_state(&self, reg_i: &str, reg_j: &str) -> Result<QState> {
        let mut state = QState::basis(&[(reg_i, self.dim), (reg_j, self.dim)], &[0, 0])?;
        self.apply_v_h(&mut state, reg_i, reg_j, None)?;
        self.apply_u_h(&mut state, reg_i, reg_j, None)?;
        Ok(state)
    }

    /// The isometry pair `(P, Q)` with `PᵀQ = H/F`: column `i` of `P` is
    /// `e_i ⊗ h_i/‖h_i‖`, column `j` of `Q` is `h̃ ⊗ e_j`. Requires every
    /// column of `H` to be nonzero.
    pub fn pq_factors(&self) -> Result<PQFactors> {
        let d = self.dim;
        let profile = self.norm_profile_unit()?;
        let mut p = Matrix::zeros(d * d, d);
        let mut q = Matrix::zeros(d * d, d);
        for i in 0..d {
            let col = self.column_unit(i)?;
            for (j, &v) in col.iter().enumerate() {
                p.set(i * d + j, i, v);
            }
        }
        for j in 0..d {
            for (i, &w) in profile.iter().enumerate() {
                q.set(i * d + j, j, w);
            }
        }
        Ok(PQFactors { p, q })
    }
}

enum Loader {
    Column,
    NormProfile,
}

/// Isometries `P, Q : ℝ^d → ℝ^{d²}` with `PᵀQ = H/‖H‖_F` and
/// `PᵀP = QᵀQ = I`.
#[derive(Debug, Clone)]
pub struct PQFactors {
    pub p: Matrix,
    pub q: Matrix,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hessian::{generate_synthetic, Hessian};
    use crate::linalg::Matrix;

    fn sample_hessian() -> Hessian {
        generate_synthetic(6, 3, &[-0.7, 0.5, -0.3], 1.0, 0.05, 11).unwrap()
    }

    #[test]
    fn tree_nodes_hold_subtree_sums() {
        let x = [0.5, -1.5, 0.0, 2.0, -0.25];
        let tree = KPTree::build(&x);
        assert_eq!(tree.len(), 5);
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        assert!((tree.norm_sq() - norm_sq).abs() < 1e-14);
        assert_eq!(tree.leaf(1), (-1, 2.25));
        assert_eq!(tree.leaf(2), (0, 0.0));
        // Padded to 8 leaves: left child of the root covers x[0..4].
        let left: f64 = x[..4].iter().map(|v| v * v).sum();
        assert!((tree.node(1) - left).abs() < 1e-14);
        for (i, &v) in x.iter().enumerate() {
            assert!((tree.component(i) - v).abs() < 1e-14);
        }
    }

    #[test]
    fn tree_rejects_zero_vector_normalization() {
        let tree = KPTree::build(&[0.0, 0.0, 0.0]);
        assert!(tree.unit_amplitudes().is_err());
    }

    #[test]
    fn frobenius_norm_from_norm_tree() {
        let h = sample_hessian();
        let oracle = TreeOracle::build(&h);
        assert!((oracle.frobenius_norm() - h.frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn u_h_loads_normalized_columns() {
        let h = sample_hessian();
        let oracle = TreeOracle::build(&h);
        let i = 2;
        let mut state = QState::basis(&[("i", h.d), ("j", h.d)], &[i, 0]).unwrap();
        oracle.apply_u_h(&mut state, "i", "j", None).unwrap();
        assert_eq!(oracle.queries(), 1);

        let col = h.column(i);
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (j, &v) in col.iter().enumerate() {
            let amp = state.amp_at(&[i, j]).unwrap();
            assert!((amp - v / norm).abs() < 1e-12, "j = {j}");
        }
    }

    #[test]
    fn u_h_requires_blank_target() {
        let h = sample_hessian();
        let oracle = TreeOracle::build(&h);
        let mut state = QState::basis(&[("i", h.d), ("j", h.d)], &[1, 3]).unwrap();
        assert!(oracle.apply_u_h(&mut state, "i", "j", None).is_err());
    }

    #[test]
    fn u_h_rejects_zero_column() {
        // Rank-1 symmetric matrix with an explicit zero row/column.
        let v = [0.6, -0.3, 0.2, 0.0];
        let rows: Vec<Vec<f64>> =
            (0..4).map(|i| (0..4).map(|j| v[i] * v[j]).collect()).collect();
        let h = Hessian::new(4, 1, 1.0, &rows).unwrap();
        let oracle = TreeOracle::build(&h);
        let mut state = QState::basis(&[("i", 4), ("j", 4)], &[3, 0]).unwrap();
        match oracle.apply_u_h(&mut state, "i", "j", None) {
            Err(Error::ZeroColumn { index: 3 }) => {}
            other => panic!("expected zero-column error, got {other:?}"),
        }
    }

    #[test]
    fn v_h_loads_norm_profile() {
        let h = sample_hessian();
        let oracle = TreeOracle::build(&h);
        let j = 4;
        let mut state = QState::basis(&[("i", h.d), ("j", h.d)], &[0, j]).unwrap();
        oracle.apply_v_h(&mut state, "i", "j", None).unwrap();
        let f = h.frobenius_norm();
        for i in 0..h.d {
            let amp = state.amp_at(&[i, j]).unwrap();
            assert!((amp - h.column_norm(i) / f).abs() < 1e-12);
        }
    }

    #[test]
    fn controlled_application_leaves_other_branch_alone() {
        let h = sample_hessian();
        let oracle = TreeOracle::build(&h);
        let mut state = QState::basis(&[("i", h.d), ("j", h.d), ("c", 2)], &[2, 0, 0]).unwrap();
        state.hadamard("c").unwrap();
        // U_H fires only on c = 1; the c = 0 branch keeps j blank even
        // though its target would otherwise be overwritten.
        oracle.apply_u_h(&mut state, "i", "j", Some(("c", 1))).unwrap();
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        assert!((state.amp_at(&[2, 0, 0]).unwrap() - inv).abs() < 1e-12);
        let col = h.column(2);
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (j, &v) in col.iter().enumerate() {
            let amp = state.amp_at(&[2, j, 1]).unwrap();
            assert!((amp - inv * v / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_state_matches_scaled_entries_and_spectral_form() {
        let h = sample_hessian();
        let oracle = TreeOracle::build(&h);
        oracle.reset_queries();
        let state = oracle.prepare_joint_state("i", "j").unwrap();
        assert_eq!(oracle.queries(), 2);

        let f = h.frobenius_norm();
        for i in 0..h.d {
            for j in 0..h.d {
                let amp = state.amp_at(&[i, j]).unwrap();
                assert!((amp - h.entry(i, j) / f).abs() < 1e-12);
            }
        }

        // Spectral form: (1/F) Σ_k λ_k |u_k⟩|u_k⟩.
        let decomp = crate::hessian::eigendecompose(&h).unwrap();
        for i in 0..h.d {
            for j in 0..h.d {
                let mut expect = 0.0;
                for (k, &lam) in decomp.eigenvalues.iter().enumerate() {
                    expect += lam * decomp.eigenvectors[k][i] * decomp.eigenvectors[k][j];
                }
                assert!((state.amp_at(&[i, j]).unwrap() - expect / f).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pq_factor_identities() {
        let h = sample_hessian();
        let oracle = TreeOracle::build(&h);
        let PQFactors { p, q } = oracle.pq_factors().unwrap();
        let f = h.frobenius_norm();

        let ptq = p.transpose().matmul(&q);
        for i in 0..h.d {
            for j in 0..h.d {
                assert!((ptq.get(i, j) - h.entry(i, j) / f).abs() < 1e-12);
            }
        }
        let ptp = p.transpose().matmul(&p);
        let qtq = q.transpose().matmul(&q);
        let id = Matrix::identity(h.d);
        for i in 0..h.d {
            for j in 0..h.d {
                assert!((ptp.get(i, j) - id.get(i, j)).abs() < 1e-12);
                assert!((qtq.get(i, j) - id.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn serde_round_trip_resets_counter() {
        let h = sample_hessian();
        let oracle = TreeOracle::build(&h);
        oracle.charge(17);
        let json = serde_json::to_string(&oracle).unwrap();
        let back: TreeOracle = serde_json::from_str(&json).unwrap();
        assert_eq!(back.queries(), 0);
        assert_eq!(back.dim(), oracle.dim());
        assert!((back.frobenius_norm() - oracle.frobenius_norm()).abs() < 1e-15);
        for i in 0..h.d {
            assert_eq!(back.column_tree(i), oracle.column_tree(i));
        }
    }

    #[test]
    fn charge_accumulates() {
        let h = sample_hessian();
        let oracle = TreeOracle::build(&h);
        oracle.charge(5);
        oracle.charge(7);
        assert_eq!(oracle.queries(), 12);
        oracle.reset_queries();
        assert_eq!(oracle.queries(), 0);
    }
}

//! Linear state-space model around the linearization point.
//!
//! The reduced Jacobian (slack row and column removed from both the θ and the
//! V halves) is inverted and padded back to `2n x 2n` with zeros, which locks
//! the slack deviations at zero. From it we take the columns belonging to the
//! controllable buses, giving `x = J_ctrl⁻¹ u + b` with `x = [Δθ; ΔV]` and
//! `u` the stacked effective injections `(P z, Q z)` in control order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::powerflow::{reduced_coords, JacobianBlocks};

/// Reciprocal condition numbers below this are treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// Zero-padded inverse Jacobian split into its four `n x n` blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseJacobian {
    /// `∂Δθ/∂P`
    pub h: DMatrix<f64>,
    /// `∂Δθ/∂Q`
    pub n: DMatrix<f64>,
    /// `∂ΔV/∂P`
    pub k: DMatrix<f64>,
    /// `∂ΔV/∂Q`
    pub l: DMatrix<f64>,
    pub slack: usize,
    pub rcond: f64,
}

impl InverseJacobian {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn full(&self) -> DMatrix<f64> {
        JacobianBlocks {
            h: self.h.clone(),
            n: self.n.clone(),
            k: self.k.clone(),
            l: self.l.clone(),
        }
        .full()
    }
}

/// Remove the slack coordinates (θ and V) from a `2n x 2n` matrix.
pub fn reduce(full: &DMatrix<f64>, slack: usize) -> DMatrix<f64> {
    let coords = reduced_coords(full.nrows() / 2, slack);
    full.select_rows(&coords).select_columns(&coords)
}

/// Insert zero rows and columns at the slack coordinates.
pub fn pad(reduced: &DMatrix<f64>, n: usize, slack: usize) -> DMatrix<f64> {
    let coords = reduced_coords(n, slack);
    assert_eq!(reduced.nrows(), coords.len());
    let mut full = DMatrix::zeros(2 * n, 2 * n);
    for (ri, &r) in coords.iter().enumerate() {
        for (ci, &c) in coords.iter().enumerate() {
            full[(r, c)] = reduced[(ri, ci)];
        }
    }
    full
}

fn norm_1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn reduce_pad_invert(jac: &JacobianBlocks, slack: usize) -> Result<InverseJacobian> {
    let n = jac.dim();
    let reduced = reduce(&jac.full(), slack);
    let inverse = reduced
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularJacobian { rcond: 0.0 })?;
    let rcond = 1.0 / (norm_1(&reduced) * norm_1(&inverse));
    if !(rcond >= RCOND_THRESHOLD) {
        return Err(Error::SingularJacobian { rcond });
    }
    let blocks = JacobianBlocks::from_full(&pad(&inverse, n, slack));
    Ok(InverseJacobian {
        h: blocks.h,
        n: blocks.n,
        k: blocks.k,
        l: blocks.l,
        slack,
        rcond,
    })
}

/// `𝒩ᵢᴶ`: buses coupled to `i` through any entry of the forward Jacobian,
/// in either direction. Always contains `i`.
pub fn jac_neighborhood(jac: &JacobianBlocks, i: usize) -> Vec<usize> {
    (0..jac.dim()).filter(|&j| j == i || jac.couples(i, j)).collect()
}

#[derive(Clone, Debug)]
pub struct ControlMap {
    /// `2n x 2n_c`; θ rows above V rows, column pair `(P, Q)` per device.
    pub j_ctrl_inv: DMatrix<f64>,
    pub b: DVector<f64>,
    pub ctrl_order: Vec<usize>,
    position: Vec<Option<usize>>,
    pub jac_neighborhoods: Vec<Vec<usize>>,
}

impl ControlMap {
    pub fn n_buses(&self) -> usize {
        self.position.len()
    }

    pub fn n_ctrl(&self) -> usize {
        self.ctrl_order.len()
    }

    /// `p(i)`, zero-based.
    pub fn position(&self, bus: usize) -> Option<usize> {
        self.position.get(bus).copied().flatten()
    }

    pub fn with_offset(mut self, b: DVector<f64>) -> Result<Self> {
        if b.len() != 2 * self.n_buses() {
            return Err(Error::Dimension(format!(
                "offset has length {}, expected {}",
                b.len(),
                2 * self.n_buses()
            )));
        }
        self.b = b;
        Ok(self)
    }

    /// `x = J_ctrl⁻¹ u + b`.
    pub fn predict_state(&self, u: &[f64]) -> DVector<f64> {
        &self.j_ctrl_inv * DVector::from_column_slice(u) + &self.b
    }

    /// `ΔV_i^est = [K̃_V]_i s_i + b_{V,i}` for an estimate `s_i` of `u`.
    pub fn voltage_estimate(&self, bus: usize, s: &[f64]) -> f64 {
        let (row, offset) = voltage_row(self, bus);
        row.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() + offset
    }
}

/// Assemble `J_ctrl⁻¹` for the given control order; `b` starts at zero.
pub fn build_control_map(
    inv: &InverseJacobian,
    jac: &JacobianBlocks,
    ctrl_order: &[usize],
) -> Result<ControlMap> {
    let n = inv.dim();
    if ctrl_order.is_empty() {
        return Err(Error::InvalidNetwork("no controllable devices".into()));
    }
    let mut position = vec![None; n];
    for (p, &bus) in ctrl_order.iter().enumerate() {
        if bus >= n {
            return Err(Error::UnknownBus(bus));
        }
        if bus == inv.slack {
            return Err(Error::InvalidNetwork(format!(
                "controllable device at slack bus {bus}"
            )));
        }
        if position[bus].replace(p).is_some() {
            return Err(Error::InvalidNetwork(format!("bus {bus} listed twice in control order")));
        }
    }
    let nc = ctrl_order.len();
    let mut j_ctrl_inv = DMatrix::zeros(2 * n, 2 * nc);
    for (p, &c) in ctrl_order.iter().enumerate() {
        for r in 0..n {
            j_ctrl_inv[(r, 2 * p)] = inv.h[(r, c)];
            j_ctrl_inv[(r + n, 2 * p)] = inv.k[(r, c)];
            j_ctrl_inv[(r, 2 * p + 1)] = inv.n[(r, c)];
            j_ctrl_inv[(r + n, 2 * p + 1)] = inv.l[(r, c)];
        }
    }
    Ok(ControlMap {
        j_ctrl_inv,
        b: DVector::zeros(2 * n),
        ctrl_order: ctrl_order.to_vec(),
        position,
        jac_neighborhoods: (0..n).map(|i| jac_neighborhood(jac, i)).collect(),
    })
}

/// `b = J⁻¹ [ΔP_fixed; ΔQ_fixed]` for fixed-injection deviations from the
/// linearization point.
pub fn compute_offset(inv: &InverseJacobian, dp_fixed: &[f64], dq_fixed: &[f64]) -> DVector<f64> {
    let mut dev = Vec::with_capacity(dp_fixed.len() * 2);
    dev.extend_from_slice(dp_fixed);
    dev.extend_from_slice(dq_fixed);
    inv.full() * DVector::from_vec(dev)
}

/// Row `V_i` of `J_ctrl⁻¹` together with `b_{V,i}`.
pub fn voltage_row(map: &ControlMap, bus: usize) -> (Vec<f64>, f64) {
    let r = map.n_buses() + bus;
    (map.j_ctrl_inv.row(r).iter().copied().collect(), map.b[r])
}

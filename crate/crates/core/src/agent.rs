//! Per-bus agent logic of the saddle-point iteration.
//!
//! Every bus owns its state deviations `(ΔV, Δθ)` and the multipliers of its
//! two linearized power-balance constraints; controllable buses additionally
//! own a setpoint `(P, Q)` and a dispatch factor `z`. The functions here are
//! the local update rules; which snapshot they read from is decided by the
//! harness in [`crate::sim`].

use crate::error::{Error, Result};
use crate::grid::{ControllableDevice, PowerBox};
use crate::powerflow::JacobianBlocks;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Limits {
    pub v_min: f64,
    pub v_max: f64,
    pub angle_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            v_min: 0.95,
            v_max: 1.05,
            angle_max: std::f64::consts::FRAC_PI_6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlState {
    pub p: f64,
    pub q: f64,
    pub z: f64,
}

impl ControlState {
    /// `û = (P z, Q z)`.
    pub fn effective(&self) -> (f64, f64) {
        (self.p * self.z, self.q * self.z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub bus: usize,
    pub dv: f64,
    pub dtheta: f64,
    pub lam_p: f64,
    pub lam_q: f64,
    pub control: Option<ControlState>,
    /// Consensus estimate of the global effective-injection vector.
    pub s: Vec<f64>,
}

impl AgentState {
    pub fn new(bus: usize, control: Option<ControlState>, n_ctrl: usize) -> Self {
        Self {
            bus,
            dv: 0.0,
            dtheta: 0.0,
            lam_p: 0.0,
            lam_q: 0.0,
            control,
            s: vec![0.0; 2 * n_ctrl],
        }
    }
}

/// Dual values `(j, λⱼᴾ, λⱼᵠ)` received from the Jacobian neighborhood.
pub type NeighborDuals = [(usize, f64, f64)];

/// State deviations `(j, Δθⱼ, ΔVⱼ)` received from the Jacobian neighborhood.
pub type NeighborStates = [(usize, f64, f64)];

fn lookup(values: &[(usize, f64, f64)], bus: usize, j: usize, what: &str) -> Result<(f64, f64)> {
    values
        .iter()
        .find(|(b, _, _)| *b == j)
        .map(|&(_, a, b)| (a, b))
        .ok_or_else(|| Error::Protocol {
            bus,
            detail: format!("missing {what} from neighbor {j}"),
        })
}

/// Soft apparent-power penalty `max{0, (zP)² + (zQ)² − (S̄z)²}`.
pub fn phi(p: f64, q: f64, z: f64, s_max: f64) -> f64 {
    let zp = z * p;
    let zq = z * q;
    let zs = z * s_max;
    (zp * zp + zq * zq - zs * zs).max(0.0)
}

/// Subgradient of [`phi`] in `z`: `2 z g` when `g = P² + Q² − S̄² > 0`.
pub fn subgrad_phi_z(p: f64, q: f64, z: f64, s_max: f64) -> f64 {
    let g = p * p + q * q - s_max * s_max;
    if g > 0.0 {
        2.0 * z * g
    } else {
        0.0
    }
}

/// `(∇_{ΔV} ℒ, ∇_{Δθ} ℒ)` at bus `i`. Note the transposed `(j, i)` indexing:
/// bus `i` enters the balance equations of each of its neighbors.
pub fn state_gradients(
    i: usize,
    duals: &NeighborDuals,
    jac: &JacobianBlocks,
    neighborhood: &[usize],
    alpha: f64,
    dv: f64,
) -> Result<(f64, f64)> {
    let mut gv = 2.0 * alpha * dv;
    let mut gt = 0.0;
    for &j in neighborhood {
        let (lp, lq) = lookup(duals, i, j, "duals")?;
        gv -= lp * jac.n[(j, i)] + lq * jac.l[(j, i)];
        gt -= lp * jac.h[(j, i)] + lq * jac.k[(j, i)];
    }
    Ok((gv, gt))
}

/// Projected gradient step on `(ΔV, Δθ)` for a non-reference bus.
pub fn update_state(
    dv: f64,
    dtheta: f64,
    grads: (f64, f64),
    eta1: f64,
    limits: &Limits,
    v_nominal: f64,
) -> (f64, f64) {
    let dv = (dv - eta1 * grads.0).clamp(limits.v_min - v_nominal, limits.v_max - v_nominal);
    let dtheta = (dtheta - eta1 * grads.1).clamp(-limits.angle_max, limits.angle_max);
    (dv, dtheta)
}

/// `β + λᴾP + λᵠQ + ρ ∂_z φ`.
pub fn z_gradient(ctrl: &ControlState, lam_p: f64, lam_q: f64, beta: f64, rho: f64, s_max: f64) -> f64 {
    beta + lam_p * ctrl.p + lam_q * ctrl.q + rho * subgrad_phi_z(ctrl.p, ctrl.q, ctrl.z, s_max)
}

/// `z ← Π_[0,1](z − η₂ ∇_z ℒ)`.
pub fn update_z(ctrl: &ControlState, lam_p: f64, lam_q: f64, eta2: f64, beta: f64, rho: f64, s_max: f64) -> f64 {
    (ctrl.z - eta2 * z_gradient(ctrl, lam_p, lam_q, beta, rho, s_max)).clamp(0.0, 1.0)
}

/// Gradient of the smooth part of the Lagrangian in `(P, Q)`: `(λᴾz, λᵠz)`.
pub fn control_gradient(ctrl: &ControlState, lam_p: f64, lam_q: f64) -> (f64, f64) {
    (lam_p * ctrl.z, lam_q * ctrl.z)
}

/// Closed-form proximal map of `η ρ φ(·, ·, z)`; radial scaling `w = κ v`.
pub fn prox_phi(v: (f64, f64), z: f64, eta: f64, rho: f64, s_max: f64) -> (f64, f64) {
    let norm = v.0.hypot(v.1);
    if norm == 0.0 || norm <= s_max {
        return v;
    }
    let shrink = 1.0 / (1.0 + 2.0 * eta * rho * z * z);
    let kappa = (s_max / norm).max(shrink).min(1.0);
    (kappa * v.0, kappa * v.1)
}

/// Proximal-gradient step on the setpoint, using the already updated `z`,
/// followed by coordinate-wise clipping to the device box.
pub fn update_controls(
    ctrl: &ControlState,
    lam_p: f64,
    lam_q: f64,
    eta2: f64,
    rho: f64,
    device: &ControllableDevice,
) -> (f64, f64) {
    let g = control_gradient(ctrl, lam_p, lam_q);
    let v = (ctrl.p - eta2 * g.0, ctrl.q - eta2 * g.1);
    let w = prox_phi(v, ctrl.z, eta2, rho, device.s_max);
    device.limits.clip(w.0, w.1)
}

/// Fixed per-bus data entering the power-balance residual.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BalanceData {
    pub p_load: f64,
    pub q_load: f64,
    /// Injections at the linearization point.
    pub p0: f64,
    pub q0: f64,
}

/// Primal residuals of the linearized balance at bus `i`:
/// `P z − P_load − P⁰ − Σ (H Δθ + N ΔV)` and the reactive analogue.
pub fn dual_residuals(
    i: usize,
    states: &NeighborStates,
    jac: &JacobianBlocks,
    neighborhood: &[usize],
    data: &BalanceData,
    control: Option<&ControlState>,
) -> Result<(f64, f64)> {
    let (up, uq) = control.map_or((0.0, 0.0), ControlState::effective);
    let mut rp = up - data.p_load - data.p0;
    let mut rq = uq - data.q_load - data.q0;
    for &j in neighborhood {
        let (dt, dv) = lookup(states, i, j, "state")?;
        rp -= jac.h[(i, j)] * dt + jac.n[(i, j)] * dv;
        rq -= jac.k[(i, j)] * dt + jac.l[(i, j)] * dv;
    }
    Ok((rp, rq))
}

pub fn update_duals(lam: (f64, f64), residuals: (f64, f64), gamma: f64) -> (f64, f64) {
    (lam.0 + gamma * residuals.0, lam.1 + gamma * residuals.1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
}

/// Contribution of bus `i` to the objective `J`.
pub fn local_objective(dv: f64, control: Option<(&ControlState, f64)>, w: &Weights) -> f64 {
    let mut j = w.alpha * dv * dv;
    if let Some((c, s_max)) = control {
        j += w.beta * c.z + w.rho * phi(c.p, c.q, c.z, s_max);
    }
    j
}

/// True when `(p, q)` lies in the device box.
pub fn in_box(p: f64, q: f64, limits: &PowerBox) -> bool {
    limits.contains(p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.3, 0.4, 1.0, 1.0), 0.0);
        assert_relative_eq!(phi(3.0, 4.0, 2.0, 1.0), 96.0, epsilon = 1e-12);
        assert_eq!(phi(30.0, -40.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn subgradient_examples() {
        assert_relative_eq!(subgrad_phi_z(3.0, 4.0, 2.0, 1.0), 96.0, epsilon = 1e-12);
        let h = 1e-6;
        let fd = (phi(3.0, 4.0, 2.0 + h, 1.0) - phi(3.0, 4.0, 2.0 - h, 1.0)) / (2.0 * h);
        assert_relative_eq!(fd, 96.0, max_relative = 1e-8);
        assert_eq!(subgrad_phi_z(0.3, 0.4, 0.7, 1.0), 0.0);
        assert_eq!(subgrad_phi_z(3.0, 4.0, 0.0, 1.0), 0.0);
    }

    fn one_neighbor_jac() -> JacobianBlocks {
        // bus 1 with neighbor 0: N[0][1] = 2
        let mut full = DMatrix::zeros(4, 4);
        full[(0, 3)] = 2.0;
        JacobianBlocks::from_full(&full)
    }

    #[test]
    fn state_gradient_examples() {
        let jac = one_neighbor_jac();
        let g = state_gradients(1, &[(0, 0.0, 0.0), (1, 0.0, 0.0)], &jac, &[0, 1], 1.0, 0.05).unwrap();
        assert_relative_eq!(g.0, 0.1, epsilon = 1e-15);
        assert_eq!(g.1, 0.0);

        let g = state_gradients(1, &[(0, 1.0, 0.0), (1, 0.0, 0.0)], &jac, &[0, 1], 1.0, 0.05).unwrap();
        assert_relative_eq!(g.0, -1.9, epsilon = 1e-15);
    }

    #[test]
    fn missing_neighbor_dual_is_protocol_error() {
        let jac = one_neighbor_jac();
        let err = state_gradients(1, &[(1, 0.0, 0.0)], &jac, &[0, 1], 1.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Protocol { bus: 1, .. }));
    }

    #[test]
    fn state_update_examples() {
        let lim = Limits::default();
        assert_eq!(update_state(0.01, -0.02, (0.0, 0.0), 5e-3, &lim, 1.0), (0.01, -0.02));
        let (dv, _) = update_state(0.0, 0.0, (1e9, 0.0), 5e-3, &lim, 0.98);
        assert_relative_eq!(dv, 0.95 - 0.98, epsilon = 1e-15);
        let (dv, _) = update_state(0.0, 0.0, (-1.9, 0.0), 5e-3, &lim, 1.0);
        assert_relative_eq!(dv, 0.0095, epsilon = 1e-15);
        let (_, dt) = update_state(0.0, 0.0, (0.0, -1e6), 5e-3, &lim, 1.0);
        assert_eq!(dt, std::f64::consts::FRAC_PI_6);
    }

    #[test]
    fn z_update_examples() {
        let c = ControlState { p: 0.01, q: 0.02, z: 0.4 };
        assert_eq!(update_z(&c, 0.0, 0.0, 5e-3, 0.0, 0.1, 0.07), 0.4);
        let c = ControlState { p: 0.01, q: 0.02, z: 1.0 };
        assert_relative_eq!(update_z(&c, 0.0, 0.0, 5e-3, 0.01, 0.1, 0.07), 0.99995, epsilon = 1e-15);
        let c = ControlState { p: 0.05, q: 0.05, z: 0.3 };
        assert_eq!(update_z(&c, 1e4, 1e4, 5e-3, 0.01, 0.1, 0.07), 0.0);
    }

    /// argmin over κ ∈ [0, 1] of ½(κ−1)²‖v‖² + ηρ φ(κv, z) on a uniform grid.
    fn radial_grid_prox(v: (f64, f64), z: f64, eta_rho: f64, s_max: f64) -> (f64, f64) {
        let steps = 100_000;
        let norm2 = v.0 * v.0 + v.1 * v.1;
        let (mut best, mut best_k) = (f64::INFINITY, 1.0);
        for i in 0..=steps {
            let k = i as f64 / steps as f64;
            let f = 0.5 * (k - 1.0).powi(2) * norm2 + eta_rho * phi(k * v.0, k * v.1, z, s_max);
            if f < best {
                best = f;
                best_k = k;
            }
        }
        (best_k * v.0, best_k * v.1)
    }

    #[test]
    fn prox_examples() {
        assert_eq!(prox_phi((0.3, 0.4), 1.0, 5e-3, 0.1, 1.0), (0.3, 0.4));
        let w = prox_phi((3.0, 4.0), 1.0, 0.5, 1.0, 1.0);
        assert_relative_eq!(w.0, 1.5, epsilon = 1e-15);
        assert_relative_eq!(w.1, 2.0, epsilon = 1e-15);
        let g = radial_grid_prox((3.0, 4.0), 1.0, 0.5, 1.0);
        assert!((g.0 - 1.5).abs() < 1e-4 && (g.1 - 2.0).abs() < 1e-4);
        assert_eq!(prox_phi((3.0, 4.0), 0.0, 0.5, 0.1, 1.0), (3.0, 4.0));
        assert_eq!(prox_phi((0.0, 0.0), 1.0, 0.5, 0.1, 1.0), (0.0, 0.0));
    }

    #[test]
    fn prox_boundary_regime() {
        // shrink 1/(1+2·0.01) ≈ 0.98 loses to the disk boundary at 1/1.01
        let v = (1.01, 0.0);
        let w = prox_phi(v, 1.0, 0.1, 0.1, 1.0);
        assert_relative_eq!(w.0, 1.0, epsilon = 1e-15);
        let g = radial_grid_prox(v, 1.0, 0.01, 1.0);
        assert!((g.0 - w.0).abs() < 1e-4);
    }

    #[test]
    fn control_update_examples() {
        let dev = ControllableDevice::symmetric(3, 0.07);
        let c = ControlState { p: 0.01, q: -0.02, z: 0.8 };
        assert_eq!(update_controls(&c, 0.0, 0.0, 5e-3, 0.1, &dev), (0.01, -0.02));

        let big = ControllableDevice::symmetric(3, 100.0);
        let c = ControlState { p: 0.0, q: 0.0, z: 1.0 };
        let (p, q) = update_controls(&c, -1.0, 0.0, 5e-3, 0.1, &big);
        assert_relative_eq!(p, 0.005, epsilon = 1e-15);
        assert_eq!(q, 0.0);

        // narrow box: the step lands outside, result is on the box boundary
        let mut narrow = ControllableDevice::symmetric(3, 1.0);
        narrow.limits.p_max = 0.002;
        let (p, q) = update_controls(&c, -1.0, 0.0, 5e-3, 0.1, &narrow);
        assert_eq!((p, q), (0.002, 0.0));
        assert_eq!(narrow.limits.clip(p, q), (p, q));
    }

    #[test]
    fn residual_examples() {
        let mut full = DMatrix::zeros(4, 4);
        full[(1, 1)] = 10.0; // H11
        full[(1, 3)] = 2.0; // N11
        full[(3, 3)] = 9.0; // L11
        let jac = JacobianBlocks::from_full(&full);
        let data = BalanceData { p_load: 0.04, q_load: 0.03, p0: -0.04, q0: -0.03 };
        let zero = [(0, 0.0, 0.0), (1, 0.0, 0.0)];
        assert_eq!(dual_residuals(1, &zero, &jac, &[0, 1], &data, None).unwrap(), (0.0, 0.0));

        // a state that exactly realizes the injection deviation
        let c = ControlState { p: 0.02, q: 0.0, z: 0.5 };
        let states = [(0, 0.0, 0.0), (1, 0.001, 0.0)];
        let (rp, rq) = dual_residuals(1, &states, &jac, &[0, 1], &data, Some(&c)).unwrap();
        assert_relative_eq!(rp, 0.0, epsilon = 1e-15);
        assert_eq!(rq, 0.0);

        // doubled reactive demand with the linearization at nominal demand
        let doubled = BalanceData { q_load: 0.06, ..data };
        let (_, rq) = dual_residuals(1, &zero, &jac, &[0, 1], &doubled, None).unwrap();
        assert_relative_eq!(rq, -0.03, epsilon = 1e-15);

        assert!(dual_residuals(1, &[(1, 0.0, 0.0)], &jac, &[0, 1], &data, None).is_err());
    }

    #[test]
    fn dual_update_examples() {
        assert_eq!(update_duals((0.3, -0.1), (0.0, 0.0), 5e-5), (0.3, -0.1));
        let (lp, _) = update_duals((0.0, 0.0), (0.2, 0.0), 5e-5);
        assert_relative_eq!(lp, 1e-5, epsilon = 1e-18);
    }

    #[test]
    fn objective_examples() {
        let w = Weights { alpha: 1.0, beta: 0.01, rho: 0.1 };
        assert_eq!(local_objective(0.0, None, &w), 0.0);
        let c = ControlState { p: 0.0481, q: 0.0509, z: 0.891 };
        assert_relative_eq!(local_objective(0.05, Some((&c, 0.07)), &w), 0.01141, epsilon = 5e-6);
    }
}

//! Polar Newton-Raphson AC power flow and the (θ, V) Jacobian blocks.
//!
//! All non-slack buses are PQ. The Jacobian is taken with respect to the
//! plain magnitude `V` (no `V·∂/∂V` scaling), so that
//! `[ΔP; ΔQ] = [H N; K L] [Δθ; ΔV]` holds to first order.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::GridNetwork;

#[derive(Clone, Copy, Debug)]
pub struct AcpfOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for AcpfOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub converged: bool,
    /// Newton updates applied.
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn min_voltage(&self) -> (usize, f64) {
        self.v
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty network")
    }
}

/// Sensitivities `∂P/∂θ`, `∂P/∂V`, `∂Q/∂θ`, `∂Q/∂V` at an operating point.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianBlocks {
    pub h: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

impl JacobianBlocks {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// Assemble the full `2n x 2n` matrix `[H N; K L]`.
    pub fn full(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        j.view_mut((0, 0), (n, n)).copy_from(&self.h);
        j.view_mut((0, n), (n, n)).copy_from(&self.n);
        j.view_mut((n, 0), (n, n)).copy_from(&self.k);
        j.view_mut((n, n), (n, n)).copy_from(&self.l);
        j
    }

    pub fn from_full(j: &DMatrix<f64>) -> Self {
        let n = j.nrows() / 2;
        Self {
            h: j.view((0, 0), (n, n)).into_owned(),
            n: j.view((0, n), (n, n)).into_owned(),
            k: j.view((n, 0), (n, n)).into_owned(),
            l: j.view((n, n), (n, n)).into_owned(),
        }
    }

    /// True when any of the eight entries coupling `i` and `j` is nonzero.
    pub fn couples(&self, i: usize, j: usize) -> bool {
        [&self.h, &self.n, &self.k, &self.l]
            .iter()
            .any(|m| m[(i, j)] != 0.0 || m[(j, i)] != 0.0)
    }
}

/// Nodal injections `S = V ⊙ conj(Y V)` in polar form.
pub fn power_injections(y: &DMatrix<Complex64>, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    assert_eq!(y.nrows(), n, "admittance / voltage dimension mismatch");
    assert_eq!(theta.len(), n, "angle / voltage dimension mismatch");
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let (mut pi, mut qi) = (0.0, 0.0);
        for j in 0..n {
            let yij = y[(i, j)];
            if yij.re == 0.0 && yij.im == 0.0 {
                continue;
            }
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            pi += v[j] * (yij.re * c + yij.im * s);
            qi += v[j] * (yij.re * s - yij.im * c);
        }
        p[i] = v[i] * pi;
        q[i] = v[i] * qi;
    }
    (p, q)
}

pub fn jacobian_at(y: &DMatrix<Complex64>, v: &[f64], theta: &[f64]) -> JacobianBlocks {
    let n = v.len();
    let (p, q) = power_injections(y, v, theta);
    let mut h = DMatrix::zeros(n, n);
    let mut nn = DMatrix::zeros(n, n);
    let mut k = DMatrix::zeros(n, n);
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let yij = y[(i, j)];
            if yij.re == 0.0 && yij.im == 0.0 {
                continue;
            }
            let (g, b) = (yij.re, yij.im);
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            let gs_bc = g * s - b * c;
            let gc_bs = g * c + b * s;
            h[(i, j)] = v[i] * v[j] * gs_bc;
            nn[(i, j)] = v[i] * gc_bs;
            k[(i, j)] = -v[i] * v[j] * gc_bs;
            l[(i, j)] = v[i] * gs_bc;
        }
        let (gii, bii) = (y[(i, i)].re, y[(i, i)].im);
        h[(i, i)] = -q[i] - bii * v[i] * v[i];
        nn[(i, i)] = p[i] / v[i] + gii * v[i];
        k[(i, i)] = p[i] - gii * v[i] * v[i];
        l[(i, i)] = q[i] / v[i] - bii * v[i];
    }
    JacobianBlocks { h, n: nn, k, l }
}

pub fn compute_jacobian_blocks(network: &GridNetwork, solution: &PowerFlowSolution) -> JacobianBlocks {
    jacobian_at(network.admittance(), &solution.v, &solution.theta)
}

/// Non-slack coordinates of the stacked `[θ; V]` vector, in order.
pub(crate) fn reduced_coords(n: usize, slack: usize) -> Vec<usize> {
    (0..n)
        .filter(|&i| i != slack)
        .chain((0..n).filter(|&i| i != slack).map(|i| i + n))
        .collect()
}

/// Solve the AC power flow for specified net injections at every non-slack
/// bus. The slack bus keeps its setpoint magnitude and zero angle and absorbs
/// the residual power.
pub fn solve_acpf(
    network: &GridNetwork,
    p_spec: &[f64],
    q_spec: &[f64],
    start: Option<(&[f64], &[f64])>,
    opts: AcpfOptions,
) -> Result<PowerFlowSolution> {
    let n = network.n_buses();
    if p_spec.len() != n || q_spec.len() != n {
        return Err(Error::Dimension(format!(
            "power flow needs {n} injections, got {} / {}",
            p_spec.len(),
            q_spec.len()
        )));
    }
    let slack = network.slack_id();
    let y = network.admittance();
    let (mut v, mut theta) = match start {
        Some((v0, t0)) => (v0.to_vec(), t0.to_vec()),
        None => (vec![1.0; n], vec![0.0; n]),
    };
    v[slack] = network.slack_voltage();
    theta[slack] = 0.0;

    let coords = reduced_coords(n, slack);
    let mut iterations = 0;
    loop {
        let (p, q) = power_injections(y, &v, &theta);
        let mismatch: Vec<f64> = coords
            .iter()
            .map(|&c| if c < n { p_spec[c] - p[c] } else { q_spec[c - n] - q[c - n] })
            .collect();
        let max_mismatch = mismatch.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !max_mismatch.is_finite() {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch: max_mismatch,
            });
        }
        if max_mismatch <= opts.tolerance {
            return Ok(PowerFlowSolution {
                v,
                theta,
                p_inj: p,
                q_inj: q,
                converged: true,
                iterations,
                max_mismatch,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch: max_mismatch,
            });
        }
        let full = jacobian_at(y, &v, &theta).full();
        let reduced = full.select_rows(&coords).select_columns(&coords);
        let step = reduced
            .lu()
            .solve(&DVector::from_vec(mismatch))
            .ok_or(Error::SingularJacobian { rcond: 0.0 })?;
        for (&c, dx) in coords.iter().zip(step.iter()) {
            if c < n {
                theta[c] += dx;
            } else {
                v[c - n] += dx;
            }
        }
        iterations += 1;
    }
}

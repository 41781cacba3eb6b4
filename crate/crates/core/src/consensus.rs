//! Consensus+innovation estimate of the stacked effective-injection vector.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::exec::Execution;

/// Selector `Eᵢ` placing a 2-vector into block `p` of a `2 n_c` vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SelectorMatrix {
    pub p_index: usize,
    pub n_ctrl: usize,
}

impl SelectorMatrix {
    pub fn new(p_index: usize, n_ctrl: usize) -> Result<Self> {
        if p_index >= n_ctrl {
            return Err(Error::Dimension(format!(
                "selector block {p_index} outside {n_ctrl} controllable buses"
            )));
        }
        Ok(Self { p_index, n_ctrl })
    }

    pub fn dim(&self) -> usize {
        2 * self.n_ctrl
    }

    /// `Eᵀ s`.
    pub fn extract(&self, s: &[f64]) -> (f64, f64) {
        (s[2 * self.p_index], s[2 * self.p_index + 1])
    }

    /// `E u`.
    pub fn embed(&self, u: (f64, f64)) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        out[2 * self.p_index] = u.0;
        out[2 * self.p_index + 1] = u.1;
        out
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.dim(), 2);
        e[(2 * self.p_index, 0)] = 1.0;
        e[(2 * self.p_index + 1, 1)] = 1.0;
        e
    }
}

/// Per-bus innovation input: selector and the bus's own `ûᵢ`.
pub type Innovation = Option<(SelectorMatrix, (f64, f64))>;

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusState {
    pub s: Vec<Vec<f64>>,
    pub alpha_con: f64,
    pub rounds: usize,
}

impl ConsensusState {
    pub fn new(n_buses: usize, n_ctrl: usize, alpha_con: f64, rounds: usize) -> Result<Self> {
        if !(alpha_con > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "consensus step {alpha_con} must be positive"
            )));
        }
        Ok(Self {
            s: vec![vec![0.0; 2 * n_ctrl]; n_buses],
            alpha_con,
            rounds,
        })
    }

    /// Runs `rounds` synchronous steps in place.
    pub fn run(&mut self, neighbors: &[Vec<usize>], innovations: &[Innovation], exec: Execution) -> Result<()> {
        for _ in 0..self.rounds {
            self.s = ci_step(&self.s, neighbors, self.alpha_con, innovations, exec)?;
        }
        Ok(())
    }
}

pub fn effective_injection(p: f64, q: f64, z: f64) -> (f64, f64) {
    (p * z, q * z)
}

/// One synchronous round: diffusion over the neighbors plus, at controllable
/// buses, the unit-gain innovation `Eᵢ(ûᵢ − Eᵢᵀ sᵢ)`.
pub fn ci_step(
    s: &[Vec<f64>],
    neighbors: &[Vec<usize>],
    alpha_con: f64,
    innovations: &[Innovation],
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    let n = s.len();
    if neighbors.len() != n || innovations.len() != n {
        return Err(Error::Dimension(format!(
            "{n} estimates, {} neighbor lists, {} innovations",
            neighbors.len(),
            innovations.len()
        )));
    }
    let dim = s.first().map_or(0, Vec::len);
    if let Some(i) = s.iter().position(|si| si.len() != dim) {
        return Err(Error::Protocol {
            bus: i,
            detail: format!("estimate length {} differs from {dim}", s[i].len()),
        });
    }
    exec.try_map(n, |i| {
        let si = &s[i];
        let mut out = si.clone();
        for &j in &neighbors[i] {
            for (o, (a, b)) in out.iter_mut().zip(si.iter().zip(&s[j])) {
                *o -= alpha_con * (a - b);
            }
        }
        if let Some((sel, u)) = innovations[i] {
            if sel.dim() != dim {
                return Err(Error::Protocol {
                    bus: i,
                    detail: format!("selector dimension {} differs from {dim}", sel.dim()),
                });
            }
            let (ep, eq) = sel.extract(si);
            out[2 * sel.p_index] += u.0 - ep;
            out[2 * sel.p_index + 1] += u.1 - eq;
        }
        Ok(out)
    })
}

pub fn lambda_max(laplacian: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(laplacian.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// `2 / λ_max(L)`: the supremum of admissible consensus steps.
pub fn step_bound(laplacian: &DMatrix<f64>) -> f64 {
    2.0 / lambda_max(laplacian)
}

pub fn default_alpha_con(laplacian: &DMatrix<f64>) -> f64 {
    0.5 * step_bound(laplacian)
}

/// `max_{i,j} ‖sᵢ − sⱼ‖_∞`, computed as the widest per-coordinate spread.
pub fn disagreement(s: &[Vec<f64>]) -> f64 {
    let dim = s.first().map_or(0, Vec::len);
    (0..dim)
        .map(|c| {
            let (lo, hi) = s
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), si| (lo.min(si[c]), hi.max(si[c])));
            hi - lo
        })
        .fold(0.0, f64::max)
}

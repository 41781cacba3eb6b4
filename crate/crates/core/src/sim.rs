//! Synchronous message-passing harness.
//!
//! One outer iteration runs four stages — states, controls, duals,
//! consensus — and every stage reads only an immutable snapshot published at
//! the end of the previous one, so agents within a stage are independent and
//! are mapped in parallel.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{
    self, AgentState, BalanceData, ControlState, Limits, Weights,
};
use crate::consensus::{self, Innovation, SelectorMatrix};
use crate::error::{parse_json, Error, Result};
use crate::exec::Execution;
use crate::grid::GridNetwork;
use crate::linearization::{build_control_map, compute_offset, reduce_pad_invert, ControlMap, InverseJacobian};
use crate::powerflow::{compute_jacobian_blocks, solve_acpf, AcpfOptions, JacobianBlocks, PowerFlowSolution};

/// Residual magnitude treated as divergence.
pub const DIVERGENCE_RESIDUAL: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadOverride {
    pub bus: usize,
    #[serde(default = "one")]
    pub p_factor: f64,
    #[serde(default = "one")]
    pub q_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightOverride {
    pub bus: usize,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma: f64,
    /// `None` selects half the stability bound of the graph Laplacian.
    pub alpha_con: Option<f64>,
    pub v_min: f64,
    pub v_max: f64,
    pub angle_max: f64,
    pub eps_iterate: f64,
    pub max_iter: usize,
    pub consensus_rounds: usize,
    pub z_init: f64,
    pub load_overrides: Vec<LoadOverride>,
    pub weight_overrides: Vec<WeightOverride>,
    pub execution: Execution,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let lim = Limits::default();
        Self {
            alpha: 1.0,
            beta: 0.01,
            rho: 0.1,
            eta1: 5e-3,
            eta2: 5e-3,
            gamma: 5e-5,
            alpha_con: None,
            v_min: lim.v_min,
            v_max: lim.v_max,
            angle_max: lim.angle_max,
            eps_iterate: 5e-4,
            max_iter: 10_000,
            consensus_rounds: 5,
            z_init: 1.0,
            load_overrides: Vec::new(),
            weight_overrides: Vec::new(),
            execution: Execution::default(),
        }
    }
}

pub const SHIPPED_SCENARIO_JSON: &str = include_str!("../../../data/scenario_stressed.json");

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = parse_json(text, "scenario")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Self = parse_json(&text, &path.display().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn shipped() -> Self {
        Self::from_json_str(SHIPPED_SCENARIO_JSON).expect("shipped scenario is valid")
    }

    pub fn limits(&self) -> Limits {
        Limits {
            v_min: self.v_min,
            v_max: self.v_max,
            angle_max: self.angle_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        for (name, v) in [
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("gamma", self.gamma),
            ("eps_iterate", self.eps_iterate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("rho", self.rho)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if let Some(a) = self.alpha_con {
            if !(a > 0.0) {
                return bad(format!("alpha_con must be positive, got {a}"));
            }
        }
        if !(self.v_min < self.v_max) {
            return bad(format!("v_min {} must be below v_max {}", self.v_min, self.v_max));
        }
        if !(self.angle_max > 0.0) {
            return bad(format!("angle_max must be positive, got {}", self.angle_max));
        }
        if !(0.0..=1.0).contains(&self.z_init) {
            return bad(format!("z_init {} outside [0, 1]", self.z_init));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        for o in &self.load_overrides {
            if !(o.p_factor >= 0.0 && o.q_factor >= 0.0) {
                return bad(format!("negative load factor at bus {}", o.bus));
            }
        }
        Ok(())
    }

    /// Bus loads with the overrides applied.
    pub fn loads(&self, network: &GridNetwork) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut p = network.p_loads();
        let mut q = network.q_loads();
        for o in &self.load_overrides {
            if o.bus >= p.len() {
                return Err(Error::UnknownBus(o.bus));
            }
            p[o.bus] *= o.p_factor;
            q[o.bus] *= o.q_factor;
        }
        Ok((p, q))
    }
}

/// Uncontrolled AC power flow with the scenario loads.
pub fn baseline_run(network: &GridNetwork, config: &ScenarioConfig) -> Result<PowerFlowSolution> {
    let (p, q) = config.loads(network)?;
    let ps: Vec<f64> = p.iter().map(|x| -x).collect();
    let qs: Vec<f64> = q.iter().map(|x| -x).collect();
    solve_acpf(network, &ps, &qs, None, AcpfOptions::default())
}

/// Everything fixed for the duration of a run.
#[derive(Debug)]
pub struct Model {
    pub network: GridNetwork,
    pub config: ScenarioConfig,
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub baseline: PowerFlowSolution,
    pub jac: JacobianBlocks,
    pub inverse: InverseJacobian,
    pub map: ControlMap,
    pub balance: Vec<BalanceData>,
    pub weights: Vec<Weights>,
    pub limits: Limits,
    pub alpha_con: f64,
}

impl Model {
    pub fn new(network: GridNetwork, config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let (p_load, q_load) = config.loads(&network)?;
        let baseline = baseline_run(&network, &config)?;
        let jac = compute_jacobian_blocks(&network, &baseline);
        let inverse = reduce_pad_invert(&jac, network.slack_id())?;
        let ctrl_order: Vec<usize> = network.devices().iter().map(|d| d.bus).collect();
        let n = network.n_buses();
        // fixed-injection deviation from the linearization point; zero up to
        // the power-flow tolerance because we linearize at the loaded state
        let slack = network.slack_id();
        let dev = |spec: f64, at: f64, i: usize| if i == slack { 0.0 } else { spec - at };
        let dp: Vec<f64> = (0..n).map(|i| dev(-p_load[i], baseline.p_inj[i], i)).collect();
        let dq: Vec<f64> = (0..n).map(|i| dev(-q_load[i], baseline.q_inj[i], i)).collect();
        let b = compute_offset(&inverse, &dp, &dq);
        let map = build_control_map(&inverse, &jac, &ctrl_order)?.with_offset(b)?;

        let balance = (0..n)
            .map(|i| BalanceData {
                p_load: p_load[i],
                q_load: q_load[i],
                p0: baseline.p_inj[i],
                q0: baseline.q_inj[i],
            })
            .collect();
        let mut weights = vec![
            Weights {
                alpha: config.alpha,
                beta: config.beta,
                rho: config.rho,
            };
            n
        ];
        for o in &config.weight_overrides {
            let w = weights.get_mut(o.bus).ok_or(Error::UnknownBus(o.bus))?;
            w.alpha = o.alpha.unwrap_or(w.alpha);
            w.beta = o.beta.unwrap_or(w.beta);
        }

        let bound = consensus::step_bound(network.laplacian());
        let alpha_con = config.alpha_con.unwrap_or(0.5 * bound);
        if alpha_con >= bound {
            return Err(Error::InvalidScenario(format!(
                "alpha_con {alpha_con} is not below the stability bound {bound}"
            )));
        }
        let limits = config.limits();
        Ok(Self {
            network,
            config,
            p_load,
            q_load,
            baseline,
            jac,
            inverse,
            map,
            balance,
            weights,
            limits,
            alpha_con,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.network.n_buses()
    }

    pub fn n_ctrl(&self) -> usize {
        self.map.n_ctrl()
    }

    /// `V⁰ + ΔV` from the stacked linear model for effective injections `u`.
    pub fn linear_voltage(&self, u: &[f64]) -> Vec<f64> {
        let x = self.map.predict_state(u);
        let n = self.n_buses();
        (0..n).map(|i| self.baseline.v[i] + x[n + i]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviceSetpoint {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub objective: f64,
    pub max_residual: f64,
    pub iterate_change: f64,
    /// Largest of the primal gradient-mapping norm and the dual residual.
    pub stationarity_gap: f64,
    pub v_pred_min: f64,
    pub v_pred_max: f64,
    pub v_est_min: f64,
    pub v_est_max: f64,
    pub disagreement: f64,
    pub setpoints: Vec<DeviceSetpoint>,
}

#[derive(Clone, Debug)]
pub struct World {
    pub model: Arc<Model>,
    pub agents: Vec<AgentState>,
    pub k: usize,
}

impl World {
    pub fn new(model: Arc<Model>) -> Self {
        let n = model.n_buses();
        let nc = model.n_ctrl();
        let z = model.config.z_init;
        let agents = (0..n)
            .map(|i| {
                let control = model.map.position(i).map(|_| ControlState { p: 0.0, q: 0.0, z });
                AgentState::new(i, control, nc)
            })
            .collect();
        Self { model, agents, k: 0 }
    }

    pub fn exec(&self) -> Execution {
        self.model.config.execution
    }

    pub fn setpoints(&self) -> Vec<DeviceSetpoint> {
        self.model
            .map
            .ctrl_order
            .iter()
            .map(|&bus| {
                let c = self.agents[bus].control.expect("device bus has a control");
                DeviceSetpoint { bus, p: c.p, q: c.q, z: c.z }
            })
            .collect()
    }

    /// Stacked `u = (P z, Q z)` in control order.
    pub fn effective_injections(&self) -> Vec<f64> {
        self.setpoints()
            .iter()
            .flat_map(|s| [s.p * s.z, s.q * s.z])
            .collect()
    }

    pub fn predicted_voltages(&self) -> Vec<f64> {
        self.agents
            .iter()
            .map(|a| self.model.baseline.v[a.bus] + a.dv)
            .collect()
    }

    /// `V⁰ + ΔV_est` per bus from its own consensus estimate.
    pub fn estimated_voltages(&self) -> Vec<f64> {
        self.agents
            .iter()
            .map(|a| self.model.baseline.v[a.bus] + self.model.map.voltage_estimate(a.bus, &a.s))
            .collect()
    }

    pub fn objective(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| {
                let ctrl = a
                    .control
                    .as_ref()
                    .map(|c| (c, self.model.network.device_at(a.bus).map_or(0.0, |d| d.s_max)));
                agent::local_objective(a.dv, ctrl, &self.model.weights[a.bus])
            })
            .sum()
    }
}

fn check_finite(values: &[f64], bus: usize, stage: &'static str, iteration: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { bus, stage, iteration })
    }
}

/// Runs stages 1–4 once and returns the published trace row.
pub fn run_outer_iteration(world: &mut World) -> Result<TraceRow> {
    let model = Arc::clone(&world.model);
    let exec = world.exec();
    let cfg = &model.config;
    let slack = model.network.slack_id();
    let n = model.n_buses();
    let k = world.k + 1;
    let nb = &model.map.jac_neighborhoods;

    // stage 1: states, from the dual snapshot
    let duals: Vec<(f64, f64)> = world.agents.iter().map(|a| (a.lam_p, a.lam_q)).collect();
    let agents = &world.agents;
    let states = exec.try_map(n, |i| {
        let a = &agents[i];
        if i == slack {
            return Ok((a.dv, a.dtheta));
        }
        let msgs: Vec<(usize, f64, f64)> = nb[i].iter().map(|&j| (j, duals[j].0, duals[j].1)).collect();
        let g = agent::state_gradients(i, &msgs, &model.jac, &nb[i], model.weights[i].alpha, a.dv)?;
        let out = agent::update_state(a.dv, a.dtheta, g, cfg.eta1, &model.limits, model.baseline.v[i]);
        check_finite(&[out.0, out.1], i, "state", k)?;
        Ok(out)
    })?;

    // stage 2: controls, z first, then the proximal (P, Q) step
    let controls = exec.try_map(n, |i| {
        let a = &agents[i];
        let Some(c) = a.control else { return Ok(None) };
        let dev = model.network.device_at(i).ok_or(Error::UnknownBus(i))?;
        let w = &model.weights[i];
        let z = agent::update_z(&c, a.lam_p, a.lam_q, cfg.eta2, w.beta, w.rho, dev.s_max);
        let staged = ControlState { z, ..c };
        let (p, q) = agent::update_controls(&staged, a.lam_p, a.lam_q, cfg.eta2, w.rho, dev);
        check_finite(&[p, q, z], i, "control", k)?;
        Ok(Some(ControlState { p, q, z }))
    })?;

    // stage 3: duals, from the new primal snapshot
    let residuals = exec.try_map(n, |i| {
        if i == slack {
            return Ok((0.0, 0.0));
        }
        let msgs: Vec<(usize, f64, f64)> = nb[i].iter().map(|&j| (j, states[j].1, states[j].0)).collect();
        let r = agent::dual_residuals(i, &msgs, &model.jac, &nb[i], &model.balance[i], controls[i].as_ref())?;
        check_finite(&[r.0, r.1], i, "dual", k)?;
        Ok(r)
    })?;

    let mut change = 0.0f64;
    let mut gap = 0.0f64;
    let mut max_res = 0.0f64;
    let track = |change: &mut f64, gap: &mut f64, old: f64, new: f64, step: f64| {
        let d = (new - old).abs();
        *change = change.max(d);
        *gap = gap.max(d / step);
    };
    for i in 0..n {
        let a = &mut world.agents[i];
        track(&mut change, &mut gap, a.dv, states[i].0, cfg.eta1);
        track(&mut change, &mut gap, a.dtheta, states[i].1, cfg.eta1);
        a.dv = states[i].0;
        a.dtheta = states[i].1;
        if let (Some(old), Some(new)) = (a.control, controls[i]) {
            track(&mut change, &mut gap, old.p, new.p, cfg.eta2);
            track(&mut change, &mut gap, old.q, new.q, cfg.eta2);
            track(&mut change, &mut gap, old.z, new.z, cfg.eta2);
            a.control = Some(new);
        }
        if i != slack {
            let (lp, lq) = agent::update_duals((a.lam_p, a.lam_q), residuals[i], cfg.gamma);
            change = change.max((lp - a.lam_p).abs()).max((lq - a.lam_q).abs());
            max_res = max_res.max(residuals[i].0.abs()).max(residuals[i].1.abs());
            a.lam_p = lp;
            a.lam_q = lq;
        }
    }
    gap = gap.max(max_res);

    // stage 4: consensus inner loop on the new effective injections
    let innovations: Vec<Innovation> = (0..n)
        .map(|i| {
            let pos = model.map.position(i)?;
            let c = world.agents[i].control?;
            let sel = SelectorMatrix::new(pos, model.n_ctrl()).ok()?;
            Some((sel, consensus::effective_injection(c.p, c.q, c.z)))
        })
        .collect();
    let mut s: Vec<Vec<f64>> = world.agents.iter_mut().map(|a| std::mem::take(&mut a.s)).collect();
    for _ in 0..cfg.consensus_rounds {
        s = consensus::ci_step(&s, model.network.neighbor_lists(), model.alpha_con, &innovations, exec)?;
    }
    for (i, (a, si)) in world.agents.iter_mut().zip(s).enumerate() {
        check_finite(&si, i, "consensus", k)?;
        a.s = si;
    }

    if max_res > DIVERGENCE_RESIDUAL {
        return Err(Error::Diverged { iteration: k, residual: max_res });
    }
    world.k = k;

    let fold = |v: Vec<f64>| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    };
    let (v_pred_min, v_pred_max) = fold(world.predicted_voltages());
    let (v_est_min, v_est_max) = fold(world.estimated_voltages());
    let est: Vec<Vec<f64>> = world.agents.iter().map(|a| a.s.clone()).collect();
    Ok(TraceRow {
        k,
        objective: world.objective(),
        max_residual: max_res,
        iterate_change: change,
        stationarity_gap: gap,
        v_pred_min,
        v_pred_max,
        v_est_min,
        v_est_max,
        disagreement: consensus::disagreement(&est),
        setpoints: world.setpoints(),
    })
}

#[derive(Clone, Debug)]
pub struct SimulationResult {
    pub world: World,
    pub trace: Vec<TraceRow>,
    pub setpoints: Vec<DeviceSetpoint>,
    /// True when the iterate-change tolerance was met before `max_iter`.
    pub converged: bool,
}

impl SimulationResult {
    pub fn iterations(&self) -> usize {
        self.world.k
    }
}

pub fn run_simulation(model: Arc<Model>) -> Result<SimulationResult> {
    let mut world = World::new(model);
    let cfg = world.model.config.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    while world.k < cfg.max_iter {
        let row = run_outer_iteration(&mut world)?;
        let done = row.iterate_change <= cfg.eps_iterate;
        if world.k.is_multiple_of(500) || done {
            log::debug!(
                "k={} change={:.3e} residual={:.3e} J={:.6}",
                row.k,
                row.iterate_change,
                row.max_residual,
                row.objective
            );
        }
        trace.push(row);
        if done {
            converged = true;
            break;
        }
    }
    log::info!("stopped after {} iterations (converged: {converged})", world.k);
    let setpoints = world.setpoints();
    Ok(SimulationResult { world, trace, setpoints, converged })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationRow {
    pub bus: usize,
    pub predicted: f64,
    pub validated: f64,
    pub signed_error: f64,
    pub relative_error_pct: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub rmse: f64,
    pub validated: PowerFlowSolution,
}

impl ValidationReport {
    pub fn min_validated(&self) -> (usize, f64) {
        self.validated.min_voltage()
    }
}

/// Re-solves the nonlinear power flow with `P z`, `Q z` applied at the device
/// buses and compares it with `predicted_v`.
pub fn validate_against_acpf(
    model: &Model,
    setpoints: &[DeviceSetpoint],
    predicted_v: &[f64],
) -> Result<ValidationReport> {
    let n = model.n_buses();
    if predicted_v.len() != n {
        return Err(Error::Dimension(format!(
            "{} predicted voltages for {n} buses",
            predicted_v.len()
        )));
    }
    let mut ps: Vec<f64> = model.p_load.iter().map(|x| -x).collect();
    let mut qs: Vec<f64> = model.q_load.iter().map(|x| -x).collect();
    for sp in setpoints {
        if model.map.position(sp.bus).is_none() {
            return Err(Error::InvalidScenario(format!("no device at bus {}", sp.bus)));
        }
        ps[sp.bus] += sp.p * sp.z;
        qs[sp.bus] += sp.q * sp.z;
    }
    let validated = solve_acpf(&model.network, &ps, &qs, None, AcpfOptions::default())?;
    let rows: Vec<ValidationRow> = (0..n)
        .map(|i| {
            let e = predicted_v[i] - validated.v[i];
            ValidationRow {
                bus: i,
                predicted: predicted_v[i],
                validated: validated.v[i],
                signed_error: e,
                relative_error_pct: 100.0 * e / validated.v[i],
            }
        })
        .collect();
    let rmse = (rows.iter().map(|r| r.signed_error * r.signed_error).sum::<f64>() / n as f64).sqrt();
    Ok(ValidationReport { rows, rmse, validated })
}

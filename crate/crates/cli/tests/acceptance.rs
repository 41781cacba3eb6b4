//! Acceptance criteria for the shipped 44-bus stressed scenario. Each test
//! prints one `PASS`/`FAIL` line with the observed value and its bound.

use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use tempfile::TempDir;
use voltvar::agent::phi;
use voltvar::checks::{self, CheckOptions, CheckOutcome};
use voltvar::grid::shipped_network;
use voltvar::sim::{run_simulation, validate_against_acpf, Model, ScenarioConfig, SimulationResult, ValidationReport};

const BASELINE_MAX_V: f64 = 0.90;
const CONTROLLED_MIN_V: f64 = 0.945;
const RUNTIME_LIMIT: Duration = Duration::from_secs(60);
const EPS_ITERATE: f64 = 5e-4;
const ITERATION_CAP: usize = 10_000;
const RMSE_LIMIT: f64 = 0.02;
const Z_RANGE: (f64, f64) = (0.80, 1.00);
const PHI_LIMIT: f64 = 1e-4;
const ACPF_MISMATCH: f64 = 1e-8;

struct Outcome {
    model: Arc<Model>,
    result: SimulationResult,
    validation: ValidationReport,
    elapsed: Duration,
}

fn shipped() -> &'static Outcome {
    static CELL: OnceLock<Outcome> = OnceLock::new();
    CELL.get_or_init(|| {
        let t0 = Instant::now();
        let model = Arc::new(Model::new(shipped_network(), ScenarioConfig::shipped()).unwrap());
        let result = run_simulation(Arc::clone(&model)).unwrap();
        let validation = validate_against_acpf(&model, &result.setpoints, &result.world.predicted_voltages()).unwrap();
        Outcome {
            model,
            result,
            validation,
            elapsed: t0.elapsed(),
        }
    })
}

fn verdict(criterion: &str, passed: bool, detail: String) {
    println!("{} criterion {criterion}: {detail}", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "criterion {criterion}: {detail}");
}

fn check_verdict(criterion: &str, o: CheckOutcome) {
    let detail = format!("{} observed {:e} bound {:e} ({})", o.name, o.observed, o.bound, o.detail);
    verdict(criterion, o.passed, detail);
}

fn opts() -> CheckOptions {
    CheckOptions {
        seed: 7,
        exec: ScenarioConfig::shipped().execution,
        fault: None,
    }
}

#[test]
fn criterion_01_voltage_regulation() {
    let s = shipped();
    let (_, baseline) = s.model.baseline.min_voltage();
    let (bus, controlled) = s.validation.min_validated();
    let passed = baseline < BASELINE_MAX_V && controlled >= CONTROLLED_MIN_V && s.elapsed < RUNTIME_LIMIT;
    verdict(
        "1",
        passed,
        format!(
            "baseline min {baseline:.6} (< {BASELINE_MAX_V}), validated min {controlled:.6} at bus {bus} \
             (>= {CONTROLLED_MIN_V}), runtime {:.2?} (< {RUNTIME_LIMIT:?})",
            s.elapsed
        ),
    );
}

#[test]
fn criterion_02_convergence() {
    let s = shipped();
    let cfg = &s.model.config;
    let hyper = cfg.alpha == 1.0
        && cfg.beta == 0.01
        && cfg.rho == 0.1
        && cfg.eta1 == 5e-3
        && cfg.eta2 == 5e-3
        && cfg.gamma == 5e-5
        && cfg.eps_iterate == EPS_ITERATE
        && cfg.max_iter == ITERATION_CAP;
    let last = s.result.trace.last().unwrap();
    let passed = hyper && s.result.converged && last.iterate_change <= EPS_ITERATE && s.result.iterations() <= ITERATION_CAP;
    verdict(
        "2",
        passed,
        format!(
            "iterate change {:e} (<= {EPS_ITERATE:e}) at iteration {} (<= {ITERATION_CAP}); shipped hyperparameters {hyper}",
            last.iterate_change,
            s.result.iterations()
        ),
    );
}

#[test]
fn criterion_03_linear_model_validation() {
    let s = shipped();
    let slack = s.model.network.slack_id();
    let slack_err = s.validation.rows[slack].signed_error;
    let passed = s.validation.rmse <= RMSE_LIMIT && slack_err == 0.0;
    verdict(
        "3",
        passed,
        format!("RMSE {:.6} (<= {RMSE_LIMIT}), slack error {slack_err:e} (== 0)", s.validation.rmse),
    );
}

#[test]
fn criterion_04_device_utilization() {
    let s = shipped();
    let net = &s.model.network;
    let mut worst_phi: f64 = 0.0;
    let mut z_ok = true;
    let mut box_ok = true;
    for sp in &s.result.setpoints {
        let dev = net.device_at(sp.bus).unwrap();
        z_ok &= (Z_RANGE.0..=Z_RANGE.1).contains(&sp.z);
        box_ok &= dev.limits.contains(sp.p * sp.z, sp.q * sp.z);
        worst_phi = worst_phi.max(phi(sp.p, sp.q, sp.z, dev.s_max));
    }
    let zs: Vec<String> = s.result.setpoints.iter().map(|sp| format!("{:.4}", sp.z)).collect();
    verdict(
        "4",
        s.result.setpoints.len() == 7 && z_ok && box_ok && worst_phi <= PHI_LIMIT,
        format!(
            "z = [{}] in [{}, {}]: {z_ok}; box limits: {box_ok}; max phi {worst_phi:e} (<= {PHI_LIMIT:e})",
            zs.join(", "),
            Z_RANGE.0,
            Z_RANGE.1
        ),
    );
}

#[test]
fn criterion_05_jacobian_suite() {
    let s = shipped();
    check_verdict("5", checks::jacobian_fd_check(&s.model.network, &s.model.baseline, &opts()));
}

#[test]
fn criterion_06_prox_oracle() {
    check_verdict("6", checks::prox_oracle_check(&opts()));
}

#[test]
fn criterion_07_gradient_suite() {
    check_verdict("7", checks::gradient_check(&shipped().model, &opts()).unwrap());
}

#[test]
fn criterion_08a_stacked_consensus() {
    check_verdict("8a", checks::consensus_stacked_check(&shipped().model, &opts()).unwrap());
}

#[test]
fn criterion_08b_consensus_limit_within_2000_rounds() {
    let o = checks::consensus_limit_check(&shipped().model, &opts(), checks::CONSENSUS_MAX_ROUNDS).unwrap();
    check_verdict("8b", o);
}

#[test]
fn criterion_08c_consensus_divergence_above_bound() {
    check_verdict("8c", checks::consensus_divergence_check(&shipped().model, &opts()).unwrap());
}

#[test]
fn criterion_09_acpf_oracle() {
    let oracle = checks::acpf_oracle_check().unwrap();
    let s = shipped();
    let m = &s.model;
    let mut ps: Vec<f64> = m.p_load.iter().map(|x| -x).collect();
    let mut qs: Vec<f64> = m.q_load.iter().map(|x| -x).collect();
    let baseline = checks::acpf_mismatch(&m.network, &m.baseline, &ps, &qs);
    for sp in &s.result.setpoints {
        ps[sp.bus] += sp.p * sp.z;
        qs[sp.bus] += sp.q * sp.z;
    }
    let validated = checks::acpf_mismatch(&m.network, &s.validation.validated, &ps, &qs);
    let worst = baseline.max(validated);
    verdict(
        "9",
        oracle.passed && worst <= ACPF_MISMATCH,
        format!(
            "two-bus oracle error {:e} (<= {:e}); mismatch baseline {baseline:e}, validated {validated:e} (<= {ACPF_MISMATCH:e})",
            oracle.observed, oracle.bound
        ),
    );
}

#[test]
fn criterion_10_byte_identical_reruns() {
    let dirs = [TempDir::new().unwrap(), TempDir::new().unwrap()];
    for d in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_voltvar"))
            .args(["run", "--out"])
            .arg(d.path())
            .output()
            .unwrap()
            .status;
        assert!(status.success());
    }
    let mut same = true;
    for f in ["trace.csv", "setpoints.csv"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        same &= !a.is_empty() && a == b;
    }
    verdict("10", same, format!("trace.csv and setpoints.csv identical across two runs: {same}"));
}

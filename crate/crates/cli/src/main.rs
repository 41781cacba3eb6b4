mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use voltvar::checks::{self, CheckOptions, JacobianFault};
use voltvar::exec::Execution;
use voltvar::grid::{self, GridNetwork};
use voltvar::sim::{self, Model, ScenarioConfig};

use crate::report::{SetpointSummary, Summary};

/// Decentralized Volt/VAr control simulator.
///
/// Log verbosity follows VOLTVAR_LOG (e.g. `VOLTVAR_LOG=debug`).
#[derive(Debug, Parser)]
#[command(name = "voltvar", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Network JSON; the shipped 44-bus feeder when omitted.
    #[arg(long, global = true)]
    network: Option<PathBuf>,
    /// Scenario JSON; the shipped stressed scenario when omitted.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the scenario's outer-iteration cap.
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Override the consensus rounds per outer iteration.
    #[arg(long, global = true)]
    consensus_rounds: Option<usize>,
    /// Override the scenario's execution mode.
    #[arg(long, global = true, value_enum)]
    execution: Option<Mode>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Sequential,
    Parallel,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Uncontrolled AC power flow; writes the per-bus voltage profile.
    Baseline,
    /// Run the controller, then validate its profile with a full AC power flow.
    Run {
        /// Also write the Jacobian and its zero-padded inverse.
        #[arg(long)]
        dump_jacobian: bool,
    },
    /// Compare the linear-model prediction for given setpoints with AC power flow.
    Validate {
        /// Setpoints CSV (Bus, P kW, Q kVAr, z), e.g. from `run`.
        #[arg(long)]
        setpoints: PathBuf,
    },
    /// Run the property suites; exit status is nonzero if any fails.
    Check {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Perturb one analytic Jacobian entry: ROW,COL,DELTA.
        #[arg(long, hide = true, value_parser = parse_fault)]
        inject_jacobian_fault: Option<JacobianFault>,
    },
}

fn parse_fault(s: &str) -> Result<JacobianFault, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [r, c, d] = parts.as_slice() else {
        return Err("expected ROW,COL,DELTA".into());
    };
    Ok(JacobianFault {
        row: r.trim().parse().map_err(|e| format!("row: {e}"))?,
        col: c.trim().parse().map_err(|e| format!("col: {e}"))?,
        delta: d.trim().parse().map_err(|e| format!("delta: {e}"))?,
    })
}

/// Inputs resolved and parsed before any computation starts.
struct RunManifest {
    network: GridNetwork,
    config: ScenarioConfig,
    out: PathBuf,
}

impl RunManifest {
    fn load(common: &Common) -> Result<Self> {
        let network = match &common.network {
            Some(p) => GridNetwork::from_path(p).with_context(|| format!("loading network {}", p.display()))?,
            None => grid::shipped_network(),
        };
        let mut config = match &common.scenario {
            Some(p) => ScenarioConfig::from_path(p).with_context(|| format!("loading scenario {}", p.display()))?,
            None => ScenarioConfig::shipped(),
        };
        if let Some(k) = common.max_iter {
            config.max_iter = k;
        }
        if let Some(r) = common.consensus_rounds {
            config.consensus_rounds = r;
        }
        if let Some(m) = common.execution {
            config.execution = match m {
                Mode::Sequential => Execution::Sequential,
                Mode::Parallel => Execution::Parallel,
            };
        }
        config.validate()?;
        Ok(Self {
            network,
            config,
            out: common.out.clone(),
        })
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    fn model(&self) -> Result<Arc<Model>> {
        Ok(Arc::new(Model::new(self.network.clone(), self.config.clone())?))
    }
}

fn cmd_baseline(m: &RunManifest) -> Result<()> {
    let sol = sim::baseline_run(&m.network, &m.config)?;
    let path = report::write_baseline(m.out_dir()?, &m.network, &sol)?;
    let (bus, v) = sol.min_voltage();
    println!("baseline minimum voltage {} p.u. at bus {bus}", report::sig6(v));
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_run(m: &RunManifest, dump_jacobian: bool) -> Result<()> {
    let t0 = Instant::now();
    let model = m.model()?;
    let result = sim::run_simulation(Arc::clone(&model)).context("simulation failed")?;
    let predicted = result.world.predicted_voltages();
    let validation =
        sim::validate_against_acpf(&model, &result.setpoints, &predicted).context("AC power flow validation failed")?;
    info!("run finished in {:.2?}", t0.elapsed());

    let dir = m.out_dir()?;
    let net = &model.network;
    let mut written = vec![
        report::write_trace(dir, net, &result.trace)?,
        report::write_setpoints(dir, net, &result.setpoints)?,
        report::write_validation(dir, &validation)?,
    ];
    if dump_jacobian {
        written.push(report::write_matrix(dir, report::JACOBIAN_FILE, &model.jac.full())?);
        written.push(report::write_matrix(dir, report::JACOBIAN_INVERSE_FILE, &model.inverse.full())?);
    }
    let (baseline_min_bus, baseline_min_v) = model.baseline.min_voltage();
    let (validated_min_bus, validated_min_v) = validation.min_validated();
    let summary = Summary {
        network: net.name.clone(),
        iterations: result.iterations(),
        converged: result.converged,
        eps_iterate: model.config.eps_iterate,
        baseline_min_v,
        baseline_min_bus,
        predicted_min_v: predicted.iter().copied().fold(f64::INFINITY, f64::min),
        validated_min_v,
        validated_min_bus,
        rmse: validation.rmse,
        final_objective: result.world.objective(),
        setpoints: result
            .setpoints
            .iter()
            .map(|s| SetpointSummary {
                bus: s.bus,
                p_kw: net.to_kw(s.p),
                q_kvar: net.to_kw(s.q),
                z: s.z,
            })
            .collect(),
    };
    written.push(report::write_summary(dir, &summary)?);

    println!(
        "{} after {} iterations",
        if result.converged { "converged" } else { "stopped at the iteration cap" },
        result.iterations()
    );
    println!(
        "minimum voltage: baseline {} -> validated {} p.u. (bus {validated_min_bus}); RMSE {}",
        report::sig6(baseline_min_v),
        report::sig6(validated_min_v),
        report::sig6(validation.rmse)
    );
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_validate(m: &RunManifest, setpoints: &Path) -> Result<()> {
    let model = m.model()?;
    let sp = report::read_setpoints(setpoints, &model.network)?;
    let mut u = vec![0.0; 2 * model.n_ctrl()];
    for s in &sp {
        let Some(p) = model.map.position(s.bus) else {
            bail!("{}: bus {} has no controllable device", setpoints.display(), s.bus);
        };
        u[2 * p] = s.p * s.z;
        u[2 * p + 1] = s.q * s.z;
    }
    let predicted = model.linear_voltage(&u);
    let rep = sim::validate_against_acpf(&model, &sp, &predicted)?;
    let path = report::write_validation(m.out_dir()?, &rep)?;
    let (bus, v) = rep.min_validated();
    println!(
        "linear-model RMSE {} p.u.; validated minimum {} p.u. at bus {bus}",
        report::sig6(rep.rmse),
        report::sig6(v)
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_check(m: &RunManifest, seed: u64, fault: Option<JacobianFault>) -> Result<bool> {
    let model = m.model()?;
    let opts = CheckOptions {
        seed,
        exec: m.config.execution,
        fault,
    };
    let outcomes = checks::run_all(&model, &opts)?;
    let mut ok = true;
    for o in &outcomes {
        ok &= o.passed;
        println!(
            "{} {:<38} observed {:>12} bound {:>10}  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            report::sig6(o.observed),
            report::sig6(o.bound),
            o.detail
        );
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VOLTVAR_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = RunManifest::load(&cli.common).and_then(|m| match &cli.command {
        Command::Baseline => cmd_baseline(&m).map(|_| true),
        Command::Run { dump_jacobian } => cmd_run(&m, *dump_jacobian).map(|_| true),
        Command::Validate { setpoints } => cmd_validate(&m, setpoints).map(|_| true),
        Command::Check { seed, inject_jacobian_fault } => cmd_check(&m, *seed, *inject_jacobian_fault),
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

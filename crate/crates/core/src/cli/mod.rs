//! Command-line front end: reads a JSON instance, runs one solver and writes
//! a JSON report.
//!
//! Exit codes: 0 when the solver converged (or, for `verify`, when the
//! supplied solution meets the tolerance), 2 on non-convergence, 1 on any
//! input error.

mod instance;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use instance::{parse_instance, InputError, InstanceFile, FORMAT_VERSION};
pub use report::*;

use crate::assignment::{lp_limit, smooth_hard_caps, solve_stochastic, solve_wardrop, SolveConfig};
use crate::distribution::{solve_constrained, solve_potential, ConstrainedProblem, DistributionInstance, PotentialConfig};
use crate::dynamics::{simulate_corr_logit, simulate_path_logit, DynamicsConfig, DynamicsKind, Start};
use crate::fullmodel::{solve_full, FullInstance};
use crate::market::{solve_market, MarketConfig, MarketEquilibrium};
use crate::network::Network;
use crate::saddle::{order_swap_check, SaddleConfig, SwapConfig};
use crate::Error;

pub const REPORT_FORMAT: &str = "transeq-report/1";

#[derive(Debug, Parser)]
#[command(name = "transeq", version, about = "Transport and market equilibrium solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Wardrop traffic assignment.
    Assign(Common),
    /// Logit stochastic assignment.
    AssignStochastic(Common),
    /// Hard-capacity limit as a min-cost flow.
    LpLimit(Common),
    /// Trip distribution as a potential game.
    Distribute(Common),
    /// Trip distribution with fixed margins.
    DistributeConstrained(Common),
    /// Competitive equilibrium.
    Market(Common),
    /// Competitive equilibrium with network times.
    Full(Common),
    /// Logit population dynamics.
    Simulate(SimulateArgs),
    /// Recompute the residuals of a solution or report.
    Verify(VerifyArgs),
    /// Nested min-max and max-min values of the constrained distribution.
    SwapCheck(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    pub instance: PathBuf,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub gamma_tilde: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solve a market even when the productivity test fails.
    #[arg(long)]
    pub force: bool,
    /// Report file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add the wall time to the report (makes it non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Paths,
    Correspondences,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "paths")]
    pub target: Target,
    #[arg(long, value_enum, default_value = "logit")]
    pub kind: KindArg,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Start from a random state drawn with `--seed`.
    #[arg(long)]
    pub random_start: bool,
    /// Trajectory CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Logit,
    ImitationLogit,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// A report, or `{"command": ..., "solution": {...}}`.
    #[arg(long)]
    pub solution: PathBuf,
}

/// Instance-level parameters set from the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub gamma: Option<f64>,
    pub gamma_tilde: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(#[from] InputError),
    #[error("{0}")]
    Solver(Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(Error::NonFinite { .. }) => 2,
            _ => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Solver(e)
    }
}

type Out<T> = std::result::Result<T, CliError>;

/// A finished command: the report and whether it met its tolerance.
pub struct Outcome {
    pub report: Value,
    pub ok: bool,
}

fn read(path: &Path) -> Out<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Out<InstanceFile> {
    Ok(parse_instance(&read(path)?)?)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value, field: &str) -> Out<T> {
    let text = v.to_string();
    instance::parse_json(&text).map_err(|e| {
        let path = if e.path == "<root>" {
            field.to_string()
        } else {
            format!("{field}.{}", e.path)
        };
        CliError::Input(InputError::new(path, e.message))
    })
}

fn check_positive(name: &str, v: Option<f64>) -> Out<()> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(InputError::new(format!("--{name}"), format!("must be > 0, got {x}")).into()),
        _ => Ok(()),
    }
}

impl Common {
    fn overrides(&self, file: &InstanceFile) -> Out<Overrides> {
        check_positive("tol", self.tol)?;
        check_positive("gamma", self.gamma)?;
        check_positive("gamma-tilde", self.gamma_tilde)?;
        check_positive("step", self.step)?;
        check_positive("mu", self.mu)?;
        Ok(Overrides {
            gamma: self.gamma,
            gamma_tilde: self.gamma_tilde,
            mu: self.mu.or(file.mu),
        })
    }

    fn solve_config(&self, ov: &Overrides) -> SolveConfig {
        let mut c = SolveConfig {
            mu: ov.mu,
            ..SolveConfig::default()
        };
        if let Some(t) = self.tol {
            c.tol = t;
        }
        if let Some(m) = self.max_iter {
            c.max_iter = m;
        }
        if let Some(g) = ov.gamma_tilde {
            c.gamma_tilde = g;
        }
        c
    }

    fn saddle(&self, mut c: SaddleConfig) -> SaddleConfig {
        if let Some(t) = self.tol {
            c.tol = t;
        }
        if let Some(m) = self.max_iter {
            c.max_iter = m;
        }
        if self.step.is_some() {
            c.step = self.step;
        }
        c
    }

    fn market_config(&self) -> MarketConfig {
        let d = MarketConfig::default();
        MarketConfig {
            saddle: self.saddle(d.saddle.clone()),
            force: self.force,
            ..d
        }
    }
}

fn network_for(file: &InstanceFile, ov: &Overrides, rho: f64) -> Out<Network> {
    let net = file.network()?;
    Ok(match ov.mu {
        Some(mu) if net.has_hard_caps() => smooth_hard_caps(&net, mu, rho).map_err(|e| InputError::new("mu", e))?,
        _ => net,
    })
}

fn with_gamma(mut inst: DistributionInstance, gamma: Option<f64>) -> DistributionInstance {
    if let (Some(g), crate::distribution::Mode::Constrained { gamma, .. }) = (gamma, &mut inst.mode) {
        *gamma = g;
    }
    inst
}

fn market_instance(file: &InstanceFile, ov: &Overrides) -> Out<crate::market::MarketInstance> {
    let mut m = file.market()?;
    if let Some(g) = ov.gamma {
        m.gamma = g;
    }
    Ok(m)
}

fn full_instance(file: &InstanceFile, ov: &Overrides, cfg: &MarketConfig) -> Out<FullInstance> {
    let m = market_instance(file, ov)?;
    FullInstance::new(m, ov.mu, cfg.assignment.smoothing_rho).map_err(|e| InputError::new("market", e).into())
}

fn market_solution(eq: &MarketEquilibrium, names: &[String]) -> MarketSolution {
    MarketSolution {
        pairs: eq.pairs.iter().map(|&(a, b)| (names[a].clone(), names[b].clone())).collect(),
        d: eq.d.clone(),
        l: eq.l.clone(),
        alpha: eq.alpha.clone(),
        w: eq.w.clone(),
        beta: eq.beta.clone(),
        y: eq.y.clone(),
        lambda_l: eq.lambda_l.clone(),
        lambda_w: eq.lambda_w.clone(),
    }
}

fn node_names(file: &InstanceFile) -> Vec<String> {
    if let Some(n) = &file.network {
        return n.nodes.clone();
    }
    let mut out: Vec<String> = Vec::new();
    let mut add = |s: &str| {
        if !out.iter().any(|x| x == s) {
            out.push(s.to_string());
        }
    };
    if let Some(d) = &file.distribution {
        d.sources.iter().chain(&d.sinks).for_each(|s| add(&s.node));
    }
    if let Some(m) = &file.market {
        m.producers.iter().for_each(|p| add(&p.node));
        m.consumers.iter().for_each(|c| add(&c.node));
    }
    out
}

/// `parts` is solution, residuals and diagnostics, in that order.
fn report(command: &str, args: &Common, config: Value, ov: &Overrides, parts: [Value; 3], converged: bool) -> Value {
    let [solution, residuals, diagnostics] = parts;
    json!({
        "format": REPORT_FORMAT,
        "command": command,
        "instance": args.instance.display().to_string(),
        "config": config,
        "overrides": to_value(ov),
        "solution": solution,
        "residuals": residuals,
        "diagnostics": diagnostics,
        "converged": converged,
    })
}

fn assign(args: &Common) -> Out<Outcome> {
    let file = load(&args.instance)?;
    let ov = args.overrides(&file)?;
    let cfg = args.solve_config(&ov);
    let net = network_for(&file, &ov, cfg.smoothing_rho)?;
    let demands = file.demands()?;
    let r = solve_wardrop(&net, &demands, &cfg)?;
    let sol = AssignSolution {
        flows: r.flows.clone(),
        path_flows: Some(path_flows_out(&r.path_flows)),
    };
    let res = verify_assign(&net, &demands, &sol)?;
    let diag = json!({ "iterations": r.iterations, "times": r.times, "od_costs": r.od_costs });
    Ok(Outcome {
        report: report(
            "assign",
            args,
            to_value(&cfg),
            &ov,
            [to_value(&sol), to_value(&res), diag],
            r.converged,
        ),
        ok: r.converged,
    })
}

fn assign_stochastic(args: &Common) -> Out<Outcome> {
    let file = load(&args.instance)?;
    let ov = args.overrides(&file)?;
    let cfg = args.solve_config(&ov);
    let net = network_for(&file, &ov, cfg.smoothing_rho)?;
    let demands = file.demands()?;
    let r = solve_stochastic(&net, &demands, &cfg)?;
    let sol = StochasticSolution {
        path_flows: path_flows_out(&r.path_flows()),
    };
    let res = verify_stochastic(&net, &demands, &sol, cfg.gamma_tilde, cfg.path_budget)?;
    let diag = json!({ "iterations": r.iterations, "link_flows": r.link_flows });
    Ok(Outcome {
        report: report(
            "assign-stochastic",
            args,
            to_value(&cfg),
            &ov,
            [to_value(&sol), to_value(&res), diag],
            r.converged,
        ),
        ok: r.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpConfig {
    /// Tolerance on the gap and the feasibility violations.
    pub tol: f64,
}

impl Default for LpConfig {
    fn default() -> Self {
        LpConfig { tol: 1e-8 }
    }
}

fn lp(args: &Common) -> Out<Outcome> {
    let file = load(&args.instance)?;
    let ov = args.overrides(&file)?;
    let cfg = LpConfig {
        tol: args.tol.unwrap_or(LpConfig::default().tol),
    };
    let net = file.network()?;
    let demands = file.demands()?;
    let r = lp_limit(&net, &demands)?;
    let sol = LpSolution {
        flows: r.flows.clone(),
        times: r.times.clone(),
    };
    let res = verify_lp(&net, &demands, &sol)?;
    let ok = lp_worst(&res) <= cfg.tol;
    let diag = json!({ "od_costs": r.od_costs });
    Ok(Outcome {
        report: report("lp-limit", args, to_value(&cfg), &ov, [to_value(&sol), to_value(&res), diag], ok),
        ok,
    })
}

fn distribute(args: &Common) -> Out<Outcome> {
    let file = load(&args.instance)?;
    let ov = args.overrides(&file)?;
    let mut cfg = PotentialConfig {
        gamma: ov.gamma,
        ..PotentialConfig::default()
    };
    if let Some(t) = args.tol {
        cfg.tol = t;
    }
    if let Some(m) = args.max_iter {
        cfg.max_iter = m;
    }
    let inst = file.distribution(SolveConfig {
        mu: ov.mu,
        ..SolveConfig::default()
    })?;
    let r = solve_potential(&inst, &cfg)?;
    let sol = PotentialSolution {
        d: r.d.clone(),
        d0: r.d0.unwrap_or(0.0),
    };
    let res = verify_potential(&inst, &sol, cfg.gamma)?;
    let diag = json!({ "iterations": r.iterations, "cap_binds": r.cap_binds, "d_bar": inst.d_bar()? });
    Ok(Outcome {
        report: report(
            "distribute",
            args,
            to_value(&cfg),
            &ov,
            [to_value(&sol), to_value(&res), diag],
            r.converged,
        ),
        ok: r.converged,
    })
}

fn constrained_config(args: &Common) -> SaddleConfig {
    args.saddle(SaddleConfig {
        tol: 1e-6,
        max_iter: 1_000_000,
        ..SaddleConfig::default()
    })
}

fn inner_tol(cfg: &SaddleConfig) -> f64 {
    (cfg.tol / 100.0).min(1e-8)
}

fn distribute_constrained(args: &Common) -> Out<Outcome> {
    let file = load(&args.instance)?;
    let ov = args.overrides(&file)?;
    let cfg = constrained_config(args);
    let inst = with_gamma(
        file.distribution(SolveConfig {
            mu: ov.mu,
            ..SolveConfig::default()
        })?,
        ov.gamma,
    );
    let r = solve_constrained(&inst, &cfg)?;
    let sol = ConstrainedSolution {
        d: r.d.clone(),
        lambda_l: r.lambda_l.clone(),
        lambda_w: r.lambda_w.clone(),
    };
    let res = verify_constrained(&inst, &sol, inner_tol(&cfg))?;
    let diag = json!({ "iterations": r.iterations, "saddle_gap": r.saddle_gap });
    Ok(Outcome {
        report: report(
            "distribute-constrained",
            args,
            to_value(&cfg),
            &ov,
            [to_value(&sol), to_value(&res), diag],
            r.converged,
        ),
        ok: r.converged,
    })
}

fn market(args: &Common) -> Out<Outcome> {
    let file = load(&args.instance)?;
    let ov = args.overrides(&file)?;
    let cfg = args.market_config();
    let inst = market_instance(&file, &ov)?;
    let eq = solve_market(&inst, &cfg)?;
    let sol = market_solution(&eq, &node_names(&file));
    let res = verify_market(&inst, &sol, &cfg)?;
    let diag = json!({ "iterations": eq.iterations, "saddle_gap": eq.saddle_gap, "productive": eq.productive });
    Ok(Outcome {
        report: report(
            "market",
            args,
            to_value(&cfg),
            &ov,
            [to_value(&sol), to_value(&res), diag],
            eq.converged,
        ),
        ok: eq.converged,
    })
}

fn full(args: &Common) -> Out<Outcome> {
    let file = load(&args.instance)?;
    let ov = args.overrides(&file)?;
    let cfg = args.market_config();
    let inst = full_instance(&file, &ov, &cfg)?;
    let eq = solve_full(&inst, &cfg)?;
    let sol = FullSolution {
        market: market_solution(&eq.market, &node_names(&file)),
        t: eq.t.clone(),
        f: eq.f.clone(),
        path_flows: path_flows_out(&eq.x),
    };
    let res = verify_full(&inst, &sol, &cfg)?;
    let diag = json!({
        "iterations": eq.market.iterations,
        "saddle_gap": eq.market.saddle_gap,
        "productive": eq.market.productive,
        "cap_active": eq.cap_active,
    });
    Ok(Outcome {
        report: report(
            "full",
            args,
            to_value(&cfg),
            &ov,
            [to_value(&sol), to_value(&res), diag],
            eq.market.converged,
        ),
        ok: eq.market.converged,
    })
}

fn simulate(args: &SimulateArgs) -> Out<Outcome> {
    let c = &args.common;
    let file = load(&c.instance)?;
    let ov = c.overrides(&file)?;
    let d = DynamicsConfig::default();
    let temperature = match args.target {
        Target::Paths => ov.gamma_tilde,
        Target::Correspondences => ov.gamma,
    };
    let cfg = DynamicsConfig {
        kind: match args.kind {
            KindArg::Logit => DynamicsKind::Logit,
            KindArg::ImitationLogit => DynamicsKind::ImitationLogit,
        },
        temperature: temperature.unwrap_or(d.temperature),
        step: c.step.unwrap_or(d.step),
        horizon: args.horizon.unwrap_or(d.horizon),
        seed: c.seed.unwrap_or(d.seed),
        start: if args.random_start { Start::Random } else { Start::Uniform },
        ..d
    };
    cfg.validate().map_err(|e| InputError::new("--step", e))?;
    let traj = match args.target {
        Target::Paths => simulate_path_logit(
            &network_for(&file, &ov, SolveConfig::default().smoothing_rho)?,
            &file.demands()?,
            &cfg,
        )?,
        Target::Correspondences => simulate_corr_logit(&file.distribution(SolveConfig::default())?, &cfg)?,
    };
    if let Some(path) = &args.csv {
        std::fs::write(path, traj.to_csv()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    let tol = c.tol.unwrap_or(1e-6);
    let distance = traj.distance.last().copied().unwrap_or(0.0);
    let ok = distance <= tol;
    let sol = json!({ "labels": traj.labels, "state": traj.last() });
    let res = json!({
        "distance": distance,
        "lyapunov": traj.lyapunov.last(),
        "max_lyapunov_ascent": traj.max_ascent(),
    });
    let diag = json!({ "steps": cfg.horizon, "tol": tol });
    Ok(Outcome {
        report: report("simulate", c, to_value(&cfg), &ov, [sol, res, diag], ok),
        ok,
    })
}

fn swap_check(args: &Common) -> Out<Outcome> {
    let file = load(&args.instance)?;
    let ov = args.overrides(&file)?;
    let mut cfg = SwapConfig::default();
    if let Some(m) = args.max_iter {
        cfg.max_outer = m;
    }
    let tol = args.tol.unwrap_or(1e-3);
    let inst = with_gamma(
        file.distribution(SolveConfig {
            mu: ov.mu,
            ..SolveConfig::default()
        })?,
        ov.gamma,
    );
    let problem = ConstrainedProblem::new(&inst, 1e-10).map_err(|e| InputError::new("distribution.mode", e))?;
    let r = order_swap_check(&problem, &cfg)?;
    let difference = (r.minmax - r.maxmin).abs();
    let ok = r.inner_converged && r.outer_converged && difference <= tol;
    let res = json!({ "minmax": r.minmax, "maxmin": r.maxmin, "difference": difference });
    let diag = json!({ "inner_converged": r.inner_converged, "outer_converged": r.outer_converged, "tol": tol });
    Ok(Outcome {
        report: report("swap-check", args, to_value(&cfg), &ov, [Value::Null, res, diag], ok),
        ok,
    })
}

#[derive(Debug, Deserialize)]
struct SolutionFile {
    command: String,
    solution: Value,
    #[serde(default)]
    config: Option<Value>,
    #[serde(default)]
    overrides: Option<Overrides>,
}

fn config_or<T: serde::de::DeserializeOwned>(file: &SolutionFile, default: T) -> Out<T> {
    match &file.config {
        Some(v) => from_value(v.clone(), "config"),
        None => Ok(default),
    }
}

fn verify(args: &VerifyArgs) -> Out<Outcome> {
    let c = &args.common;
    let file = load(&c.instance)?;
    let sol_file: SolutionFile = instance::parse_json(&read(&args.solution)?)?;
    let mut ov = sol_file.overrides.clone().unwrap_or_default();
    let flags = c.overrides(&file)?;
    ov.gamma = flags.gamma.or(ov.gamma);
    ov.gamma_tilde = flags.gamma_tilde.or(ov.gamma_tilde);
    ov.mu = c.mu.or(ov.mu).or(file.mu);
    let sol = sol_file.solution.clone();
    let (residuals, worst, default_tol) = match sol_file.command.as_str() {
        "assign" => {
            let cfg: SolveConfig = config_or(
                &sol_file,
                SolveConfig {
                    mu: ov.mu,
                    ..SolveConfig::default()
                },
            )?;
            let net = network_for(&file, &ov, cfg.smoothing_rho)?;
            let r = verify_assign(&net, &file.demands()?, &from_value(sol, "solution")?)?;
            (to_value(&r), r.worst(), cfg.tol)
        }
        "assign-stochastic" => {
            let cfg: SolveConfig = config_or(&sol_file, c.solve_config(&ov))?;
            let gt = ov.gamma_tilde.unwrap_or(cfg.gamma_tilde);
            let net = network_for(&file, &ov, cfg.smoothing_rho)?;
            let r = verify_stochastic(&net, &file.demands()?, &from_value(sol, "solution")?, gt, cfg.path_budget)?;
            (to_value(&r), r.worst(), cfg.tol)
        }
        "lp-limit" => {
            let cfg: LpConfig = config_or(&sol_file, LpConfig::default())?;
            let r = verify_lp(&file.network()?, &file.demands()?, &from_value(sol, "solution")?)?;
            (to_value(&r), lp_worst(&r), cfg.tol)
        }
        "distribute" => {
            let cfg: PotentialConfig = config_or(&sol_file, PotentialConfig::default())?;
            let inst = file.distribution(SolveConfig {
                mu: ov.mu,
                ..SolveConfig::default()
            })?;
            let r = verify_potential(&inst, &from_value(sol, "solution")?, ov.gamma.or(cfg.gamma))?;
            (to_value(&r), potential_worst(&r), 1e-6)
        }
        "distribute-constrained" => {
            let cfg: SaddleConfig = config_or(&sol_file, constrained_config(c))?;
            let inst = with_gamma(
                file.distribution(SolveConfig {
                    mu: ov.mu,
                    ..SolveConfig::default()
                })?,
                ov.gamma,
            );
            let r = verify_constrained(&inst, &from_value(sol, "solution")?, inner_tol(&cfg))?;
            (to_value(&r), r.stationarity, cfg.tol)
        }
        "market" => {
            let cfg: MarketConfig = config_or(&sol_file, c.market_config())?;
            let r = verify_market(&market_instance(&file, &ov)?, &from_value(sol, "solution")?, &cfg)?;
            (to_value(&r), r.worst(), cfg.saddle.tol)
        }
        "full" => {
            let cfg: MarketConfig = config_or(&sol_file, c.market_config())?;
            let r = verify_full(&full_instance(&file, &ov, &cfg)?, &from_value(sol, "solution")?, &cfg)?;
            (to_value(&r), r.worst(), cfg.saddle.tol)
        }
        other => {
            return Err(InputError::new("command", format!("cannot verify solutions of {other:?}")).into());
        }
    };
    let tol = c.tol.unwrap_or(default_tol);
    let ok = worst <= tol;
    let report = json!({
        "format": REPORT_FORMAT,
        "command": "verify",
        "instance": c.instance.display().to_string(),
        "solution_file": args.solution.display().to_string(),
        "verified_command": sol_file.command,
        "overrides": to_value(&ov),
        "tol": tol,
        "residuals": residuals,
        "worst": worst,
        "converged": ok,
    });
    Ok(Outcome { report, ok })
}

/// Runs one command and returns its outcome.
pub fn execute(cli: &Cli) -> Out<Outcome> {
    match &cli.command {
        Command::Assign(a) => assign(a),
        Command::AssignStochastic(a) => assign_stochastic(a),
        Command::LpLimit(a) => lp(a),
        Command::Distribute(a) => distribute(a),
        Command::DistributeConstrained(a) => distribute_constrained(a),
        Command::Market(a) => market(a),
        Command::Full(a) => full(a),
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
        Command::SwapCheck(a) => swap_check(a),
    }
}

fn common(cli: &Cli) -> &Common {
    match &cli.command {
        Command::Assign(a)
        | Command::AssignStochastic(a)
        | Command::LpLimit(a)
        | Command::Distribute(a)
        | Command::DistributeConstrained(a)
        | Command::Market(a)
        | Command::Full(a)
        | Command::SwapCheck(a) => a,
        Command::Simulate(a) => &a.common,
        Command::Verify(a) => &a.common,
    }
}

/// Parses `args`, runs the command, writes the report and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let started = Instant::now();
    let outcome = match execute(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let args = common(&cli);
    let mut report = outcome.report;
    if args.timing {
        report["wall_time_s"] = json!(started.elapsed().as_secs_f64());
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &args.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("error: {}: {e}", path.display());
                return 1;
            }
        }
        None => print!("{text}"),
    }
    if outcome.ok {
        0
    } else {
        2
    }
}

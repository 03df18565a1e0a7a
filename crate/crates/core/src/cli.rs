//! Command-line driver: configuration, subcommands and file outputs.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{convergence_sweep, energy_report};
use crate::control::{sample_qn, ContinuousControl, DiscreteControl};
use crate::cost::{discrete_cost, TraceData};
use crate::expr::{ExprText, FunctionSpec, Signature};
use crate::optimize::{minimize_against, Method, OptOptions, OptResult};
use crate::problem::{ProblemData, ProblemSpec};
use crate::state::solve_state;
use crate::verify;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n: usize,
    pub m: usize,
    /// Fine grid for continuous-cost estimates; defaults to `4 n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_fine: Option<usize>,
    #[serde(default)]
    pub optimizer: OptOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    /// Elements per time step in sweeps (`m = m_per_n · n`).
    #[serde(default = "default_m_per_n")]
    pub m_per_n: usize,
    /// Also replace `μ` by traces of the truth solve in `invert`.
    #[serde(default)]
    pub synthesize_mu: bool,
}

fn default_m_per_n() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub s_expr: ExprText,
    pub g_expr: ExprText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<ControlSection>,
    /// Starting control for `invert`; defaults to `s ≡ s0`, `g ≡ 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<ControlSection>,
    pub output: OutputSection,
}

/// Failure with its exit status.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Verify(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Verify(_) => EXIT_VERIFY,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) | CliError::Verify(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range checks beyond what deserialization enforces.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: &str| Err(CliError::Config(format!("field `{field}`: {why}")));
        if self.run.n == 0 {
            return bad("run.n", "must be positive");
        }
        if self.run.m < 2 {
            return bad("run.m", "must be at least 2");
        }
        if matches!(self.run.n_fine, Some(v) if v < 4) {
            return bad("run.n_fine", "must be at least 4");
        }
        if self.run.m_per_n == 0 {
            return bad("run.m_per_n", "must be positive");
        }
        if let Some(list) = &self.run.n_list {
            if list.is_empty() || list.contains(&0) || list.windows(2).any(|w| w[0] >= w[1]) {
                return bad("run.n_list", "must be positive and strictly increasing");
            }
        }
        if let Err(e) = self.run.optimizer.validate() {
            return bad("run.optimizer", &e.to_string());
        }
        self.problem_data()?;
        for (section, c) in [("truth", &self.truth), ("init", &self.init)] {
            if let Some(c) = c {
                parse_control_field(section, "s_expr", &c.s_expr)?;
                parse_control_field(section, "g_expr", &c.g_expr)?;
            }
        }
        Ok(())
    }

    pub fn problem_data(&self) -> Result<ProblemData, CliError> {
        ProblemData::from_spec(&self.problem).map_err(|e| CliError::Config(format!("problem: {e}")))
    }

    pub fn n_fine(&self) -> usize {
        self.run.n_fine.unwrap_or(4 * self.run.n)
    }
}

fn parse_control_field(section: &str, name: &str, text: &ExprText) -> Result<FunctionSpec, CliError> {
    FunctionSpec::parse(&text.0, Signature::T).map_err(|e| CliError::Config(format!("field `{section}.{name}`: {e}")))
}

fn continuous_control(section: &str, c: &ControlSection, pd: &ProblemData) -> Result<ContinuousControl, CliError> {
    let s = parse_control_field(section, "s_expr", &c.s_expr)?;
    let g = parse_control_field(section, "g_expr", &c.g_expr)?;
    ContinuousControl::analytic(s, g, pd).map_err(|e| CliError::Config(format!("section `{section}`: {e}")))
}

fn truth_control(cfg: &RunConfig, pd: &ProblemData) -> Result<ContinuousControl, CliError> {
    let truth = cfg
        .truth
        .as_ref()
        .ok_or_else(|| CliError::Config("field `truth`: required by this subcommand".into()))?;
    continuous_control("truth", truth, pd)
}

#[derive(Debug, Parser)]
#[command(name = "stefan", version, about = "Method-of-lines solver and optimizer for the inverse Stefan problem")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the state for the truth control; writes state.csv, cost.json, energy.json.
    Forward(RunArgs),
    /// Recover the control from synthesized traces; writes result.json, history.csv, recovered_control.csv.
    Invert(RunArgs),
    /// Run the built-in invariant suites.
    Verify(VerifyArgs),
    /// Refinement sweep over n; writes sweep.csv.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub method: Option<Method>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Also validate the problem data of this configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(n) = self.n {
            cfg.run.n = n;
        }
        if let Some(m) = self.m {
            cfg.run.m = m;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        let opt = &mut cfg.run.optimizer;
        if let Some(seed) = self.seed {
            opt.seed = seed;
        }
        if let Some(it) = self.max_iters {
            opt.max_iters = it;
        }
        if let Some(tol) = self.tol {
            opt.tol = tol;
        }
        if let Some(method) = self.method {
            opt.method = method;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

/// Comment line leading every CSV output; the only non-deterministic bytes.
fn stamp(command: &str) -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("# generated by stefan {command} at unix time {secs}\n")
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn forward(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let pd = cfg.problem_data()?;
    let truth = truth_control(cfg, &pd)?;
    let dc = sample_qn(&truth, cfg.run.n).map_err(runtime)?;
    let dsv = solve_state(&dc, &pd, cfg.run.m).map_err(runtime)?;
    let cost = discrete_cost(&dsv, &dc, &pd).map_err(runtime)?;
    let energy = energy_report(&dsv, &dc, &pd).map_err(runtime)?;
    let dir = &cfg.output.dir;
    write(dir, "state.csv", &(stamp("forward") + &dsv.to_csv()))?;
    write(dir, "cost.json", &json(&cost))?;
    write(dir, "energy.json", &json(&energy))?;
    let _ = writeln!(
        out,
        "forward n={} m={}: cost {:e} (flux {:e}, phase {:e}), energy ratio {:e}",
        cfg.run.n, cfg.run.m, cost.total, cost.flux_term, cost.phase_term, energy.ratio
    );
    Ok(())
}

fn initial_control(cfg: &RunConfig, pd: &ProblemData) -> Result<DiscreteControl, CliError> {
    match &cfg.init {
        Some(c) => sample_qn(&continuous_control("init", c, pd)?, cfg.run.n).map_err(runtime),
        None => {
            let mut dc = DiscreteControl::constant(pd.s0, cfg.run.n, pd.t_final).map_err(runtime)?;
            dc.g.iter_mut().for_each(|g| *g = 0.0);
            Ok(dc)
        }
    }
}

/// Synthesizes observations from the truth, then minimizes from the initial control.
pub fn invert_config(cfg: &RunConfig) -> Result<OptResult, CliError> {
    let pd = cfg.problem_data()?;
    let truth = truth_control(cfg, &pd)?;
    let (n, m) = (cfg.run.n, cfg.run.m);
    let exact = sample_qn(&truth, n).map_err(runtime)?;
    let dsv = solve_state(&exact, &pd, m).map_err(runtime)?;
    let synthetic = TraceData::from_state(&dsv);
    let mut data = TraceData::from_problem(&pd, n).map_err(runtime)?;
    data.nu = synthetic.nu;
    if cfg.run.synthesize_mu {
        data.mu = synthetic.mu;
    }
    let init = initial_control(cfg, &pd)?;
    minimize_against(&pd, data, m, &init, &cfg.run.optimizer).map_err(runtime)
}

fn history_csv(r: &OptResult) -> String {
    use crate::util::num;
    let mut s = String::from("iter,cost,penalty,step\n");
    for h in &r.history {
        s.push_str(&format!("{},{},{},{}\n", h.iter, num(h.cost), num(h.penalty), num(h.step)));
    }
    s
}

fn invert(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let result = invert_config(cfg)?;
    let dir = &cfg.output.dir;
    write(dir, "result.json", &json(&result))?;
    write(dir, "history.csv", &(stamp("invert") + &history_csv(&result)))?;
    write(dir, "recovered_control.csv", &(stamp("invert") + &result.best.to_csv()))?;
    let _ = writeln!(
        out,
        "invert n={} m={}: best cost {:e} after {} iterations (converged: {})",
        cfg.run.n, cfg.run.m, result.best_cost, result.iters, result.converged
    );
    Ok(())
}

fn sweep(cfg: &RunConfig, n_list: Option<Vec<usize>>, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let pd = cfg.problem_data()?;
    let truth = truth_control(cfg, &pd)?;
    let list = n_list
        .or_else(|| cfg.run.n_list.clone())
        .ok_or_else(|| CliError::Config("field `run.n_list`: required by sweep (or pass --n-list)".into()))?;
    if list.is_empty() || list.contains(&0) || list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config("field `run.n_list`: must be positive and strictly increasing".into()));
    }
    let per = cfg.run.m_per_n;
    let table = convergence_sweep(&pd, &truth, &list, &|n| (per * n).max(2)).map_err(runtime)?;
    for f in &table.failures {
        let _ = writeln!(out, "row n={} failed: {}", f.n, f.message);
    }
    if table.rows.is_empty() {
        return Err(CliError::Runtime("every sweep row failed".into()));
    }
    write(&cfg.output.dir, "sweep.csv", &(stamp("sweep") + &table.to_csv()))?;
    for r in &table.rows {
        let _ = writeln!(out, "n={:>4} m={:>5} cost {:e} lift error {:e}", r.n, r.m, r.cost, r.lift_sup_error);
    }
    Ok(())
}

fn verify_cmd(args: &VerifyArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let pd = match &args.config {
        Some(path) => Some(RunConfig::load(path)?.problem_data()?),
        None => None,
    };
    let suites = verify::run_all(args.seed, pd.as_ref());
    let mut failed = Vec::new();
    for s in &suites {
        match &s.detail {
            None => {
                let _ = writeln!(out, "PASS {} ({} checks)", s.name, s.checks);
            }
            Some(d) => {
                let _ = writeln!(out, "FAIL {}: {d}", s.name);
                failed.push(s.name);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(format!("failed suites: {}", failed.join(", "))))
    }
}

/// Runs one subcommand, writing reports to `out`.
pub fn execute(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let run_args = match &cli.command {
        Command::Forward(a) | Command::Invert(a) => Some(a),
        Command::Sweep(s) => Some(&s.run),
        Command::Verify(_) => None,
    };
    if let Some(a) = run_args {
        let cfg = a.load()?;
        if a.print_config {
            let _ = write!(out, "{}", cfg.to_toml_string());
            return Ok(());
        }
        return match cli.command {
            Command::Forward(_) => forward(&cfg, out),
            Command::Invert(_) => invert(&cfg, out),
            Command::Sweep(s) => sweep(&cfg, s.n_list, out),
            Command::Verify(_) => unreachable!(),
        };
    }
    match &cli.command {
        Command::Verify(v) => verify_cmd(v, out),
        _ => unreachable!(),
    }
}

/// Parses `argv` and runs it; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match execute(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

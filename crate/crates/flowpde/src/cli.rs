//! `flowpde` subcommands, manifests and replay.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use flowpde_core::flow::expected::resolving_n;
use flowpde_core::flow::{expand_pathwise, flow_expected, stationary_residual, FlowConfig};
use flowpde_core::kernels::{admissible_index, default_g, dot_g_moment_norms, StIndex, DEFAULT_EPS};
use flowpde_core::model::{ForceCoefficients, ModelSpec, RenormScheme};
use flowpde_core::noise::{estimate_cumulants, sample_macroscopic_noise, Lag, NoiseKind, NoiseModel};
use flowpde_core::norms::{dyadic_scales, scale_norm};
use flowpde_core::solver::{solve_mild, Noise, Scheme, SolveConfig, Status};
use flowpde_core::{Domain, Field, LatticeSpec};
use serde::{Deserialize, Serialize};

use crate::battery::run_battery;
use crate::config::{CounterTermJson, ModelConfig};
use crate::error::{CliError, CliResult};
use crate::harness::{run_plan, PlanConfig};
use crate::io::{read_fld1, read_json, write_csv, write_fld1, write_json};

#[derive(Parser, Debug)]
#[command(name = "flowpde", version, about = "Flow-equation renormalization lab for fractional parabolic SPDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// Worker threads (FLOWPDE_THREADS takes precedence).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Global regularity parameter ε.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Global smoothing power g.
    #[arg(long, global = true)]
    pub g: Option<u32>,
    /// Re-run the command recorded in a manifest.
    #[arg(long, requires = "out")]
    pub from_manifest: Option<PathBuf>,
    /// Output location for a replay.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Kernel diagnostics; --check runs the invariant battery.
    Kernels(KernelsArgs),
    /// Sample macroscopic noise and estimate cumulants.
    Noise(NoiseArgs),
    /// Counterterms from the expected flow.
    Renorm(RenormArgs),
    /// Pathwise expansion of the effective force.
    Expand(ExpandArgs),
    /// One solve from zero data.
    Simulate(SimulateArgs),
    /// Universality or irrelevance experiment from a plan file.
    Universality(UniversalityArgs),
    /// Scale-indexed norms of a stored field.
    Norms(NormsArgs),
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelsArgs {
    #[arg(long)]
    pub check: bool,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 8)]
    pub scales: usize,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub t_max: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenormArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub nu: f64,
    #[arg(long, default_value_t = 2)]
    pub imax: u32,
    #[arg(long, default_value_t = 1.0)]
    pub t_anchor: f64,
    #[arg(long, default_value_t = 64)]
    pub per_octave: usize,
    /// Output JSON file; manifest.json goes next to it.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub nu: f64,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// End of the window; it starts 2(order + 1) earlier than 0.
    #[arg(long, default_value_t = 0.5)]
    pub t_max: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeArg {
    Etd1,
    EtdRk2,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub nu: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e6)]
    pub radius: f64,
    #[arg(long, value_enum, default_value_t = SchemeArg::EtdRk2)]
    pub scheme: SchemeArg,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalityArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormsArgs {
    /// FLD1 field file.
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 8)]
    pub scales: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Everything needed to reproduce a run, minus the output location and
/// the thread count (outputs do not depend on either).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub command: Command,
    pub eps: f64,
    pub g: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanConfig>,
}

struct Run {
    command: Command,
    eps: f64,
    g: Option<u32>,
    model: Option<ModelConfig>,
    plan: Option<PlanConfig>,
}

fn entropy_seed() -> u64 {
    let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    (t as u64) ^ ((t >> 64) as u64) ^ std::process::id() as u64
}

fn out_dir(cmd: &Command) -> PathBuf {
    match cmd {
        Command::Kernels(a) => a.out.clone(),
        Command::Noise(a) => a.out.clone(),
        Command::Renorm(a) => a.out.parent().map(Path::to_path_buf).unwrap_or_default(),
        Command::Expand(a) => a.out.clone(),
        Command::Simulate(a) => a.out.clone(),
        Command::Universality(a) => a.out.clone(),
        Command::Norms(a) => a.out.clone(),
    }
}

fn set_out(cmd: &mut Command, out: PathBuf) {
    match cmd {
        Command::Kernels(a) => a.out = out,
        Command::Noise(a) => a.out = out,
        Command::Renorm(a) => {
            let name = a.out.file_name().map(PathBuf::from).unwrap_or_else(|| "ct.json".into());
            a.out = out.join(name)
        }
        Command::Expand(a) => a.out = out,
        Command::Simulate(a) => a.out = out,
        Command::Universality(a) => a.out = out,
        Command::Norms(a) => a.out = out,
    }
}

fn model_arg(cmd: &Command) -> Option<&str> {
    match cmd {
        Command::Noise(a) => Some(&a.model),
        Command::Renorm(a) => Some(&a.model),
        Command::Expand(a) => Some(&a.model),
        Command::Simulate(a) => Some(&a.model),
        _ => None,
    }
}

/// Fills in seeds and loads the model or plan so the manifest is complete.
fn resolve(mut command: Command, eps: f64, g: Option<u32>) -> CliResult<Run> {
    match &mut command {
        Command::Noise(a) => {
            a.seed.get_or_insert_with(entropy_seed);
        }
        Command::Expand(a) => {
            a.seed.get_or_insert_with(entropy_seed);
        }
        Command::Simulate(a) => {
            a.seed.get_or_insert_with(entropy_seed);
        }
        _ => {}
    }
    let model = model_arg(&command).map(ModelConfig::load).transpose()?;
    let plan = match &command {
        Command::Universality(a) => Some(read_json::<PlanConfig>(&a.plan)?),
        _ => None,
    };
    Ok(Run { command, eps, g, model, plan })
}

fn manifest_of(run: &Run) -> Manifest {
    Manifest {
        tool: "flowpde".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        core_version: flowpde_core::VERSION.into(),
        command: run.command.clone(),
        eps: run.eps,
        g: run.g,
        model: run.model.clone(),
        plan: run.plan.clone(),
    }
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    match std::env::var("FLOWPDE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::validation(format!("FLOWPDE_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(flag),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("flowpde: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let threads = thread_count(cli.threads)?;
    let run = match (&cli.from_manifest, cli.command) {
        (Some(path), None) => {
            let m: Manifest = read_json(path)?;
            let mut command = m.command;
            set_out(&mut command, cli.out.clone().unwrap_or_default());
            Run { command, eps: m.eps, g: m.g, model: m.model, plan: m.plan }
        }
        (None, Some(command)) => {
            if cli.out.is_some() {
                return Err(CliError::usage("--out before the subcommand is only valid with --from-manifest"));
            }
            resolve(command, cli.eps.unwrap_or(DEFAULT_EPS), cli.g)?
        }
        (Some(_), Some(_)) => return Err(CliError::usage("--from-manifest replaces the subcommand")),
        (None, None) => return Err(CliError::usage("missing subcommand (see --help)")),
    };
    let dir = out_dir(&run.command);
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    write_json(&dir.join("manifest.json"), &manifest_of(&run))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::validation(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&run))
}

fn dispatch(run: &Run) -> CliResult<()> {
    let model = || -> CliResult<(ModelSpec, BTreeMap<_, _>)> {
        run.model.as_ref().ok_or_else(|| CliError::validation("command needs a model"))?.to_spec()
    };
    match &run.command {
        Command::Kernels(a) => kernels(a, run.eps),
        Command::Noise(a) => noise(a, &model()?.0),
        Command::Renorm(a) => {
            let (spec, renorm) = model()?;
            renorm_cmd(a, &spec, &renorm)
        }
        Command::Expand(a) => {
            let (spec, renorm) = model()?;
            expand(a, &spec, &renorm)
        }
        Command::Simulate(a) => {
            let (spec, renorm) = model()?;
            simulate(a, &spec, &renorm, run.eps)
        }
        Command::Universality(a) => {
            let plan = run.plan.as_ref().ok_or_else(|| CliError::validation("missing plan"))?;
            universality(a, plan)
        }
        Command::Norms(a) => norms(a, run.g),
    }
}

#[derive(Serialize)]
struct MomentRow {
    sigma: f64,
    a: String,
    mu: f64,
    norm: f64,
}

fn kernels(a: &KernelsArgs, eps: f64) -> CliResult<()> {
    if a.check {
        let rows = run_battery(eps)?;
        write_csv(&a.out.join("kernels_check.csv"), &rows)?;
        let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.check_name.as_str()).collect();
        if !failed.is_empty() {
            return Err(CliError::numerical(format!("kernel checks failed: {}", failed.join(", "))));
        }
        return Ok(());
    }
    let spec = LatticeSpec::space(a.d, a.n, a.sigma)?;
    let mus = dyadic_scales(a.scales);
    let mut rows = Vec::new();
    let candidates: [StIndex; 5] = [[0, 0, 0, 0], [1, 0, 0, 0], [0, 1, 0, 0], [0, 2, 0, 0], [2, 0, 0, 0]];
    for idx in candidates.iter().filter(|x| admissible_index(x, a.sigma)) {
        for m in dot_g_moment_norms(spec, &mus, idx, None)? {
            rows.push(MomentRow { sigma: a.sigma, a: format!("{:?}", &idx[..=a.d]), mu: m.mu, norm: m.norm });
        }
    }
    write_csv(&a.out.join("moment_norms.csv"), &rows)
}

fn noise_model(spec: &ModelSpec, nu: Option<f64>, seed: u64) -> CliResult<NoiseModel> {
    let base = spec.noise.ok_or_else(|| CliError::validation("model has no noise section"))?;
    Ok(NoiseModel { seed, ..base.with_nu(nu.unwrap_or(base.nu))? })
}

#[derive(Serialize)]
struct CumulantRow {
    order: usize,
    lag_t: String,
    lag_x: String,
    estimate: f64,
    se: f64,
    exact: Option<f64>,
}

fn noise(a: &NoiseArgs, spec: &ModelSpec) -> CliResult<()> {
    let nm = noise_model(spec, a.nu, a.seed.unwrap_or_default())?;
    let n = a.n.unwrap_or_else(|| resolving_n(nm.nu, spec.sigma));
    let dt = a.dt.unwrap_or(nm.nu / 8.0);
    let lat = LatticeSpec::new(spec.d, n, dt, 0.0, a.t_max, spec.sigma)?;
    let fields: Vec<Field> = {
        use rayon::prelude::*;
        (0..a.samples as u64).into_par_iter().map(|s| sample_macroscopic_noise(&nm, &lat, s)).collect::<Result<_, _>>()?
    };
    for (s, f) in fields.iter().enumerate() {
        write_fld1(&a.out.join(format!("sample_{s:04}.fld")), f)?;
    }
    let lag = |t: i64, x: i64| Lag { t, x: [x, 0, 0] };
    let mut rows = Vec::new();
    let pairs = [(0, 0), (1, 0), (0, 1), (0, 4), (4, 0)];
    let est = estimate_cumulants(&fields, 2, &pairs.iter().map(|&(t, x)| vec![lag(t, x)]).collect::<Vec<_>>())?;
    for (q, &(t, x)) in pairs.iter().enumerate() {
        let exact = match nm.kind {
            NoiseKind::MollifiedWhite(_) => Some(nm.exact_covariance(&lat, t, [x, 0, 0])?),
            NoiseKind::PoissonShot { .. } => None,
        };
        rows.push(CumulantRow {
            order: 2,
            lag_t: t.to_string(),
            lag_x: x.to_string(),
            estimate: est.values[q],
            se: est.std_errors[q],
            exact,
        });
    }
    for order in [3, 4] {
        let est = estimate_cumulants(&fields, order, &[vec![Lag::ZERO; order - 1]])?;
        let exact = match (nm.kind, order) {
            (NoiseKind::MollifiedWhite(_), _) => Some(0.0),
            (NoiseKind::PoissonShot { .. }, 3) => Some(nm.shot_third_cumulant(&lat)?),
            _ => None,
        };
        let zeros = vec!["0"; order - 1].join(";");
        rows.push(CumulantRow {
            order,
            lag_t: zeros.clone(),
            lag_x: zeros,
            estimate: est.values[0],
            se: est.std_errors[0],
            exact,
        });
    }
    write_csv(&a.out.join("cumulants.csv"), &rows)
}

fn counterterms(
    spec: &ModelSpec,
    renorm: &BTreeMap<flowpde_core::model::CoefKey, f64>,
    nu: f64,
    cfg: &FlowConfig,
) -> CliResult<flowpde_core::flow::CounterTermResult> {
    let scheme = RenormScheme::new(spec, renorm)?;
    Ok(flow_expected(spec, nu, &scheme, cfg)?.1)
}

fn renorm_cmd(a: &RenormArgs, spec: &ModelSpec, renorm: &BTreeMap<flowpde_core::model::CoefKey, f64>) -> CliResult<()> {
    let cfg = FlowConfig { t_anchor: a.t_anchor, per_octave: a.per_octave, i_max: a.imax, ..FlowConfig::default() };
    let ct = counterterms(spec, renorm, a.nu, &cfg)?;
    write_json(&a.out, &CounterTermJson::from_result(spec.d, &ct))
}

fn resolved(spec: &ModelSpec, renorm: &BTreeMap<flowpde_core::model::CoefKey, f64>, nu: f64) -> CliResult<ForceCoefficients> {
    let mut s = spec.clone();
    if let Some(n) = s.noise.as_mut() {
        *n = n.with_nu(nu)?;
    }
    let ct = counterterms(&s, renorm, nu, &FlowConfig::default())?;
    Ok(ForceCoefficients::resolve(&s, nu, &ct.values())?)
}

#[derive(Serialize)]
struct ResidualRow {
    order: usize,
    lambda: f64,
    residual: f64,
}

fn expand(a: &ExpandArgs, spec: &ModelSpec, renorm: &BTreeMap<flowpde_core::model::CoefKey, f64>) -> CliResult<()> {
    let nm = noise_model(spec, Some(a.nu), a.seed.unwrap_or_default())?;
    let n = a.n.unwrap_or_else(|| resolving_n(a.nu, spec.sigma));
    let dt = a.dt.unwrap_or(a.nu / 8.0);
    let t_min = -2.0 * (a.order as f64 + 1.0);
    let lat = LatticeSpec::new(spec.d, n, dt, t_min, a.t_max, spec.sigma)?;
    let coefs = resolved(spec, renorm, a.nu)?;
    let xi = sample_macroscopic_noise(&nm, &lat, 0)?;
    let exp = expand_pathwise(&coefs, &xi, a.order)?;
    for (i, (f, psi)) in exp.f.iter().zip(&exp.psi).enumerate() {
        write_fld1(&a.out.join(format!("f_{i}.fld")), f)?;
        write_fld1(&a.out.join(format!("psi_{i}.fld")), psi)?;
    }
    let mut rows = Vec::new();
    for i in 0..=a.order {
        let r = stationary_residual(&coefs, &xi, &exp, coefs.lambda, i, 0.0)?;
        rows.push(ResidualRow { order: i, lambda: coefs.lambda, residual: r });
    }
    write_csv(&a.out.join("residuals.csv"), &rows)
}

#[derive(Serialize)]
struct NormRow {
    t: f64,
    c_gamma_norm: f64,
    status: &'static str,
}

fn simulate(
    a: &SimulateArgs,
    spec: &ModelSpec,
    renorm: &BTreeMap<flowpde_core::model::CoefKey, f64>,
    eps: f64,
) -> CliResult<()> {
    let nm = noise_model(spec, Some(a.nu), a.seed.unwrap_or_default())?;
    let n = a.n.unwrap_or_else(|| resolving_n(a.nu, spec.sigma));
    let dt = a.dt.unwrap_or(a.nu / 8.0);
    let lat = LatticeSpec::new(spec.d, n, dt, 0.0, a.horizon, spec.sigma)?;
    let coefs = resolved(spec, renorm, a.nu)?;
    let xi = sample_macroscopic_noise(&nm, &lat, 0)?;
    let cfg = SolveConfig {
        scheme: match a.scheme {
            SchemeArg::Etd1 => Scheme::Etd1,
            SchemeArg::EtdRk2 => Scheme::EtdRk2,
        },
        dt,
        horizon: a.horizon,
        radius: a.radius,
        gamma: spec.sigma - eps,
        keep_trajectory: true,
        ..SolveConfig::new(spec.sigma)
    };
    let phi0 = Field::zeros(LatticeSpec::space(spec.d, n, spec.sigma)?, Domain::SpaceOnly);
    let res = solve_mild(&coefs, Noise::Field(&xi), &phi0, 0.0, &cfg)?;
    if let Some(tr) = &res.trajectory {
        write_fld1(&a.out.join("trajectory.fld"), tr)?;
    }
    let last = res.times.len() - 1;
    let final_status = match res.status {
        Status::Completed => "completed",
        Status::BlewUp => "blew_up",
    };
    let rows: Vec<NormRow> = res
        .times
        .iter()
        .zip(&res.norms)
        .enumerate()
        .map(|(j, (t, v))| NormRow { t: *t, c_gamma_norm: *v, status: if j == last { final_status } else { "running" } })
        .collect();
    write_csv(&a.out.join("norms.csv"), &rows)
}

fn universality(a: &UniversalityArgs, plan: &PlanConfig) -> CliResult<()> {
    let report = run_plan(plan)?;
    write_csv(&a.out.join("report.csv"), &report.rows)?;
    write_json(&a.out.join("verdict.json"), &report)
}

fn norms(a: &NormsArgs, g: Option<u32>) -> CliResult<()> {
    let f = read_fld1(&a.field)?;
    let g = g.unwrap_or_else(|| default_g(f.spec.sigma));
    let report = scale_norm(&f, a.alpha, g, &dyadic_scales(a.scales))?;
    let path = a.out.join("norms.csv");
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(&path).map_err(|e| CliError::validation(e.to_string()))?;
    let csv_err = |e: csv::Error| CliError::validation(format!("{}: {e}", path.display()));
    w.write_record(["mu", "raw_norm", "weighted", "reliable_flag"]).map_err(csv_err)?;
    for e in &report.entries {
        w.write_record([e.mu.to_string(), e.raw.to_string(), e.weighted.to_string(), e.reliable.to_string()])
            .map_err(csv_err)?;
    }
    w.write_record(["sup", "slope", "slope_stderr"]).map_err(csv_err)?;
    w.write_record([report.sup.to_string(), report.slope.to_string(), report.slope_stderr.to_string()])
        .map_err(csv_err)?;
    w.flush().map_err(|e| CliError::io(&path, e))
}

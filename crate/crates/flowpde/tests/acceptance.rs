//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stdout (bypassing the harness capture) and then asserts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use flowpde::battery::run_battery;
use flowpde::config::{ModelConfig, NoiseConfig, ProfileName};
use flowpde::harness::{run_plan, ExperimentReport, PlanConfig, SchemeName};
use flowpde_core::flow::{
    expand_pathwise, flow_expected, semigroup_residual, stationary_residual, tadpole_oracle, taylor_decompose,
    DenseKernel, FlowConfig,
};
use flowpde_core::kernels::{loglog_slope, DEFAULT_EPS};
use flowpde_core::model::{preset, CoefKey, ForceCoefficients, ModelSpec, RenormScheme};
use flowpde_core::noise::{sample_macroscopic_noise, Profile};
use flowpde_core::solver::{solve_mild, Noise, SolveConfig, Status};
use flowpde_core::{Field, LatticeSpec};

// Criteria run one at a time so the timing lines mean something.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id} [{verdict}] {name}: {detail}\n");
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn desk() -> (ModelSpec, RenormScheme) {
    let spec = preset("phi4_desk").unwrap();
    let scheme = RenormScheme::new(&spec, &BTreeMap::new()).unwrap();
    (spec, scheme)
}

fn coarse_nu() -> f64 {
    0.8
}

/// Desk coefficients at ν = 0.8 with counterterms from the expected flow.
fn desk_coefficients() -> ForceCoefficients {
    let (spec, scheme) = desk();
    let nu = coarse_nu();
    let (_, ct) = flow_expected(&spec, nu, &scheme, &FlowConfig::default()).unwrap();
    ForceCoefficients::resolve(&spec, nu, &ct.values()).unwrap()
}

fn desk_noise(t_min: f64, t_max: f64, dt: f64) -> Field {
    let (spec, _) = desk();
    let model = spec.noise.unwrap().with_nu(coarse_nu()).unwrap();
    let lattice = LatticeSpec::new(1, 64, dt, t_min, t_max, spec.sigma).unwrap();
    sample_macroscopic_noise(&model, &lattice, 3).unwrap()
}

#[test]
fn criterion_1_kernel_battery() {
    let _g = serial();
    let start = Instant::now();
    let rows = run_battery(DEFAULT_EPS).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> =
        rows.iter().filter(|r| !r.pass).map(|r| format!("{}[{}]={:.4e}", r.check_name, r.parameter, r.value)).collect();
    let pass = failed.is_empty() && secs <= 60.0;
    let detail = format!("{}/{} rows pass in {secs:.1}s (limit 60s){}", rows.len() - failed.len(), rows.len(), {
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {}", failed.join(", "))
        }
    });
    report(1, "kernel invariant battery", pass, &detail);
}

fn wrapped(z: f64) -> f64 {
    use std::f64::consts::PI;
    if z > PI {
        z - 2.0 * PI
    } else if z < -PI {
        z + 2.0 * PI
    } else {
        z
    }
}

/// Smooth two-point kernel with a compact bump in the relative coordinate.
fn two_point(n: usize) -> DenseKernel {
    let spec = LatticeSpec::space(1, n, 0.5).unwrap();
    let dx = spec.dx();
    DenseKernel::from_fn(spec, 1, 1, |ix| {
        let x = ix[0] as f64 * dx;
        let z = wrapped((ix[1] as f64 - ix[0] as f64) * dx);
        let u = z / 0.5;
        let bump = if u.abs() < 1.0 { (-1.0 / (1.0 - u * u)).exp() } else { 0.0 };
        (1.0 + 0.5 * x.cos()) * (1.0 + z) * bump
    })
    .unwrap()
}

#[test]
fn criterion_2_taylor_remainder() {
    let _g = serial();
    let psi = |x: f64| (x.sin() + 2.0).recip();
    let phi = |y: f64| (3.0 * y).cos();
    let err = |n: usize| taylor_decompose(&two_point(n), 0, 2, &psi, &phi).unwrap().discrepancy();
    let (e64, e128) = (err(64), err(128));
    let pass = e64 <= 1e-6 && e128 <= e64 / 4.0;
    let detail = format!("a=0, l=2: n=64 {e64:.3e} (<= 1e-6), n=128 {e128:.3e} (ratio {:.2}, <= 0.25)", e128 / e64);
    report(2, "Taylor decomposition consistency", pass, &detail);
}

#[test]
fn criterion_3_flow_tadpole() {
    let _g = serial();
    let (spec, scheme) = desk();
    let base = spec.noise.unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    let mut tadpoles = Vec::new();
    let schedule = [0.2, 0.1, 0.05, 0.025];
    for &nu in &schedule {
        let (_, ct) = flow_expected(&spec, nu, &scheme, &FlowConfig::default()).unwrap();
        let c = ct.diagnostics.tadpole;
        if nu == 0.1 || nu == 0.05 {
            let oracle = tadpole_oracle(1, 0.5, &base.with_nu(nu).unwrap(), 1.0, 16).unwrap();
            let rel = (c - oracle).abs() / oracle;
            pass &= rel <= 1e-6;
            parts.push(format!("nu={nu}: flow {c:.8} oracle {oracle:.8} rel {rel:.1e}"));
        }
        tadpoles.push(c);
    }
    let scales: Vec<f64> = schedule.iter().map(|nu: &f64| nu.powf(1.0 / spec.sigma)).collect();
    let slope = loglog_slope(&scales, &tadpoles);
    pass &= (slope + 0.5).abs() <= 0.05;
    parts.push(format!("slope in [nu] {slope:.4} (-0.5 +- 0.05)"));
    report(3, "expected-flow tadpole", pass, &parts.join("; "));
}

#[test]
fn criterion_4_semigroup_identity() {
    let _g = serial();
    let coefs = desk_coefficients();
    let noise = desk_noise(0.0, 3.0, 0.05);
    let phi = Field::space_time_fn(noise.spec, |t, x| 0.4 * (x[0] - t).cos() + 0.1 * (2.0 * x[0]).sin());
    let r = semigroup_residual(&coefs, &noise, &phi, 1.0, 0.5, 2, 0.0).unwrap();
    let pass = r[1] <= 1e-6 && r[2] <= 1e-6;
    let detail = format!("n=64, mu=1, eta=0.5: order 1 {:.2e}, order 2 {:.2e} (<= 1e-6)", r[1], r[2]);
    report(4, "semigroup identity of the effective force", pass, &detail);
}

#[test]
fn criterion_5_stationary_residual() {
    let _g = serial();
    let coefs = desk_coefficients();
    let noise = desk_noise(-6.0, 0.5, 0.025);
    let exp = expand_pathwise(&coefs, &noise, 2).unwrap();
    let lambdas = [0.2, 0.1, 0.05, 0.025];
    let mut pass = true;
    let mut parts = Vec::new();
    for order in [1usize, 2] {
        let res: Vec<f64> =
            lambdas.iter().map(|&l| stationary_residual(&coefs, &noise, &exp, l, order, 0.0).unwrap()).collect();
        let slope = loglog_slope(&lambdas, &res);
        let target = (order + 1) as f64;
        let ok = (slope / target - 1.0).abs() <= 0.15;
        pass &= ok;
        parts.push(format!("I={order}: exponent {slope:.3} (target {target} +- 15%)"));
    }
    report(5, "stationary residual of the truncated expansion", pass, &parts.join("; "));
}

#[test]
fn criterion_6_ode_blow_up() {
    let _g = serial();
    let spec = LatticeSpec::space(1, 8, 0.5).unwrap();
    let run = |lambda: f64, phi0: f64, horizon: f64| {
        let coefs = ForceCoefficients::explicit(0.1, lambda, vec![(CoefKey::plain(1, 3), 1.0)]);
        let phi = Field::space_fn(spec, |_| phi0);
        let cfg = SolveConfig { horizon, dt: 1e-4, radius: 10.0, ..SolveConfig::new(0.5) };
        solve_mild(&coefs, Noise::Zero, &phi, 0.0, &cfg).unwrap()
    };
    let (lambda, phi0) = (50.0, 0.1);
    let t_star = 1.0 / (2.0 * lambda * phi0 * phi0);
    let r = run(lambda, phi0, 1.5);
    let off = (r.breve_t - t_star).abs();
    let pass = r.status == Status::BlewUp && off <= 2e-4;
    let unit = run(1.0, 1.0, 1.0);
    let crossing = 0.5 - 1.0 / 200.0;
    let detail = format!(
        "lambda={lambda}, phi0={phi0}, R=10, dt=1e-4: stop {:.5} vs 1/(2 lambda phi0^2) = {t_star} (|diff| {off:.1e} <= 2e-4); \
         lambda=1, phi0=1: stop {:.5} vs R-crossing {crossing:.5} (|diff| {:.1e})",
        r.breve_t,
        unit.breve_t,
        (unit.breve_t - crossing).abs()
    );
    report(6, "ODE blow-up time", pass, &detail);
}

fn desk_variant(label: &str, profile: Profile) -> flowpde::harness::VariantConfig {
    let mut model = ModelConfig::preset("phi4_desk").unwrap();
    model.noise = Some(NoiseConfig::MollifiedWhite {
        time: ProfileName(profile),
        space: ProfileName(profile),
        nu: 0.1,
        seed: 0,
    });
    flowpde::harness::VariantConfig { label: label.into(), model }
}

fn universality_plan(variants: Vec<flowpde::harness::VariantConfig>, renormalize: bool) -> PlanConfig {
    let json = serde_json::json!({ "variants": [], "nu": [0.2, 0.1, 0.05], "samples": 200, "seed": 7 });
    let mut plan: PlanConfig = serde_json::from_value(json).unwrap();
    plan.variants = variants;
    plan.renormalize = renormalize;
    plan.scheme = SchemeName::EtdRk2;
    plan
}

fn gap_line(r: &ExperimentReport) -> String {
    r.verdicts
        .iter()
        .flat_map(|v| &v.gaps)
        .map(|g| format!("nu={} gap {:+.3} se {:.3}", g.nu, g.gap, g.se))
        .collect::<Vec<_>>()
        .join(", ")
}

#[test]
fn criterion_7_universality() {
    let _g = serial();
    let start = Instant::now();
    let families = vec![desk_variant("cos4", Profile::CosPower(4)), desk_variant("bump", Profile::Bump)];
    let main = run_plan(&universality_plan(families, true)).unwrap();
    let control = run_plan(&universality_plan(vec![desk_variant("cos4", Profile::CosPower(4))], false)).unwrap();
    let drift = &control.cauchy[0];
    let steps: Vec<String> =
        drift.steps.iter().map(|s| format!("{}->{} {:+.3} se {:.3}", s.nu_from, s.nu_to, s.diff, s.se)).collect();
    let pass = main.universal && drift.drift_exceeds_3se;
    let detail = format!(
        "renormalized gaps [{}] verdict {}; unrenormalized drift [{}] exceeds 3 se: {}; n={} dt={} ({:.0}s)",
        gap_line(&main),
        main.verdicts[0].verdict,
        steps.join(", "),
        drift.drift_exceeds_3se,
        main.lattice_n,
        main.dt,
        start.elapsed().as_secs_f64()
    );
    report(7, "universality across noise families", pass, &detail);
}

fn flowpde(args: &[&str], threads: &str) {
    let out = Command::new(env!("CARGO_BIN_EXE_flowpde"))
        .args(args)
        .env("FLOWPDE_THREADS", threads)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
        }
    }
    out
}

fn write_plan(path: &Path) {
    let json = serde_json::json!({
        "variants": [
            { "label": "cos4", "model": serde_json::to_value(desk_variant("", Profile::CosPower(4)).model).unwrap() },
            { "label": "bump", "model": serde_json::to_value(desk_variant("", Profile::Bump).model).unwrap() },
        ],
        "nu": [0.8, 0.4],
        "samples": 6,
        "seed": 11,
    });
    fs::write(path, serde_json::to_vec_pretty(&json).unwrap()).unwrap();
}

#[test]
fn criterion_8_manifest_replay() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let plan = root.join("plan.json");
    write_plan(&plan);
    let d = |s: &str| root.join(s).to_string_lossy().into_owned();
    let p = plan.to_string_lossy().into_owned();
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("kernels", vec!["kernels".into(), "--n".into(), "64".into(), "--out".into(), d("kernels")]),
        ("noise", vec!["noise".into(), "--model".into(), "phi4_desk".into(), "--nu".into(), "0.5".into(), "--samples".into(), "4".into(), "--out".into(), d("noise")]),
        ("renorm", vec!["renorm".into(), "--model".into(), "phi4_desk".into(), "--nu".into(), "0.2".into(), "--out".into(), d("renorm/ct.json")]),
        ("expand", vec!["expand".into(), "--model".into(), "phi4_desk".into(), "--nu".into(), "0.5".into(), "--order".into(), "2".into(), "--out".into(), d("expand")]),
        ("simulate", vec!["simulate".into(), "--model".into(), "phi4_desk".into(), "--nu".into(), "0.5".into(), "--horizon".into(), "0.25".into(), "--out".into(), d("simulate")]),
        ("universality", vec!["universality".into(), "--plan".into(), p, "--out".into(), d("universality")]),
    ];
    let mut mismatched = Vec::new();
    let mut compared = 0;
    let mut check = |name: &str, first: &Path, args: &[String]| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        flowpde(&refs, "1");
        let reference = files(first);
        for threads in ["2", "4"] {
            let replay = root.join(format!("{name}-replay-{threads}"));
            let manifest = first.join("manifest.json");
            flowpde(&["--from-manifest", &manifest.to_string_lossy(), "--out", &replay.to_string_lossy()], threads);
            let again = files(&replay);
            let data: Vec<&PathBuf> = reference.keys().filter(|k| k.as_os_str() != "manifest.json").collect();
            compared += data.len();
            for k in data {
                if again.get(k) != reference.get(k) {
                    mismatched.push(format!("{name}/{} @{threads} threads", k.display()));
                }
            }
        }
    };
    for (name, args) in &runs {
        check(name, &root.join(name), args);
    }
    let field = fs::read_dir(root.join("simulate"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "fld"))
        .expect("simulate writes a field file");
    let norms = vec!["norms".into(), "--field".into(), field.to_string_lossy().into_owned(), "--alpha".into(), "-0.3".into(), "--out".into(), d("norms")];
    check("norms", &root.join("norms"), &norms);
    let pass = mismatched.is_empty() && compared > 0;
    let detail = format!(
        "7 subcommands replayed with 2 and 4 threads; {compared} output files compared, {} differ{}",
        mismatched.len(),
        if mismatched.is_empty() { String::new() } else { format!(": {}", mismatched.join(", ")) }
    );
    report(8, "manifest replay is byte-identical", pass, &detail);
}

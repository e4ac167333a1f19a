//! Executes a run configuration: ensemble simulation, summary statistics,
//! diagnostic checks, parameter sweeps, and artifact files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use stochham_core::diagnostics::{
    dirichlet_certificate, involution_check, strong_conservation_check, symplectic_defect,
    weak_conservation_check, DiagnosticsReport,
};
use stochham_core::integrators::{canonical_omega, tangent_flow, IntegratorConfig, Scheme};
use stochham_core::montecarlo::{
    expectation, sup_exceedance_probability, Ensemble, EnsembleSpec, InitialCondition,
    StoppingRule,
};
use stochham_core::structures::{ScalarField, StructureKind};
use stochham_core::systems::{build_system, SystemSpec};

use crate::config::{CheckSection, RunConfig};

/// Classified failure for exit-code mapping: config/validation errors exit
/// 2, runtime faults exit 3; failed checks are not errors (exit 1).
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "configuration error: {m}"),
            RunError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

fn config_err<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Config(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Runtime(e.to_string())
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
}

#[derive(Serialize)]
struct SeedInfo {
    master_seed: u64,
    mixing: &'static str,
    /// Per-path driver seeds, included for small ensembles only.
    #[serde(skip_serializing_if = "Option::is_none")]
    path_seeds: Option<Vec<u64>>,
}

/// Stable, versioned schema of `summary.json`. No timestamps: two runs of
/// the same config serialize byte-identically.
#[derive(Serialize)]
struct Summary {
    schema_version: u32,
    system: String,
    params: BTreeMap<String, f64>,
    scheme: String,
    n_paths: usize,
    t_final: f64,
    dt: f64,
    checkpoints: Vec<f64>,
    coordinate_means: Vec<Vec<f64>>,
    coordinate_stderrs: Vec<Vec<f64>>,
    observable_means: BTreeMap<String, Vec<f64>>,
    observable_stderrs: BTreeMap<String, Vec<f64>>,
    exit_histogram: BTreeMap<String, u64>,
    exploded_count: usize,
    seeds: SeedInfo,
}

pub struct RunOutcome {
    pub all_checks_passed: bool,
    pub reports: Vec<DiagnosticsReport>,
}

pub fn execute(
    cfg: &RunConfig,
    overrides: &Overrides,
    out_dir: &Path,
    quiet: bool,
) -> Result<RunOutcome, RunError> {
    let system = build_system(&cfg.system.name, &cfg.system.params).map_err(config_err)?;
    let scheme = Scheme::parse(&cfg.ensemble.scheme).map_err(config_err)?;
    let espec = ensemble_spec(cfg, overrides, &system, scheme)?;
    validate_checks(cfg, &system)?;
    fs::create_dir_all(out_dir).map_err(runtime_err)?;

    if !quiet {
        println!(
            "running {} with {} paths, T = {}, dt = {}, scheme = {}",
            system.name(),
            espec.n_paths,
            espec.t_final,
            espec.dt,
            scheme.name()
        );
    }

    let ensemble = system.run_ensemble(&espec).map_err(runtime_err)?;
    let summary = build_summary(cfg, &system, &espec, &ensemble, scheme)?;
    write_json(&out_dir.join("summary.json"), &summary)?;

    let reports = run_checks(&cfg.checks, &system, &espec, &ensemble, scheme)?;
    write_json(&out_dir.join("report.json"), &reports)?;

    if cfg.trajectories_enabled() {
        write_trajectories(
            &out_dir.join("trajectories.csv"),
            &ensemble,
            cfg.trajectory_cap(),
        )?;
    }

    let mut all_passed = reports.iter().all(|r| r.passed);

    if let Some(sweep) = &cfg.sweep {
        let sweep_ok = run_sweep(cfg, overrides, &system, scheme, sweep, out_dir, quiet)?;
        all_passed = all_passed && sweep_ok;
    }

    if !quiet {
        for r in &reports {
            println!(
                "check {}: statistic {:.6e} vs tolerance {:.6e} -> {}",
                r.name,
                r.statistic,
                r.tolerance,
                if r.passed { "pass" } else { "FAIL" }
            );
        }
    }
    Ok(RunOutcome {
        all_checks_passed: all_passed,
        reports,
    })
}

fn ensemble_spec(
    cfg: &RunConfig,
    overrides: &Overrides,
    system: &SystemSpec,
    scheme: Scheme,
) -> Result<EnsembleSpec, RunError> {
    let n_paths = overrides.paths.unwrap_or(cfg.ensemble.n_paths);
    let dt = overrides.dt.unwrap_or(cfg.ensemble.dt);
    let master_seed = overrides.seed.unwrap_or(cfg.ensemble.master_seed);
    if n_paths == 0 {
        return Err(RunError::Config("n_paths must be >= 1".into()));
    }
    if !(dt > 0.0) || !(cfg.ensemble.t_final > 0.0) {
        return Err(RunError::Config("t_final and dt must be positive".into()));
    }
    let initial = match &cfg.initial {
        Some(init) => {
            if init.state.len() != system.dim() {
                return Err(RunError::Config(format!(
                    "initial state has {} entries, system '{}' needs {}",
                    init.state.len(),
                    system.name(),
                    system.dim()
                )));
            }
            InitialCondition::Fixed(init.state.clone())
        }
        None => system.default_initial.clone(),
    };
    let mut espec = EnsembleSpec::new(
        n_paths,
        master_seed,
        cfg.ensemble.t_final,
        dt,
        vec![0.0; system.dim()],
        IntegratorConfig::new(scheme, dt),
    );
    espec.initial = initial;
    espec.n_checkpoints = cfg.ensemble.n_checkpoints.max(2);
    Ok(espec)
}

const CHECK_NAMES: &[&str] = &[
    "strong_conservation",
    "weak_conservation",
    "casimir_conservation",
    "involution",
    "symplectic_defect",
    "dirichlet",
    "exceedance",
];

fn validate_checks(cfg: &RunConfig, system: &SystemSpec) -> Result<(), RunError> {
    for check in &cfg.checks {
        if !CHECK_NAMES.contains(&check.name.as_str()) {
            return Err(RunError::Config(format!(
                "unknown check '{}'; valid checks: {}",
                check.name,
                CHECK_NAMES.join(", ")
            )));
        }
        match check.name.as_str() {
            "symplectic_defect" => {
                let canonical = system
                    .structure()
                    .map(|s| s.kind() == StructureKind::CanonicalSymplectic)
                    .unwrap_or(false);
                if !canonical {
                    return Err(RunError::Config(format!(
                        "symplectic_defect needs a canonical symplectic system; '{}' is excluded from symplectic diagnostics",
                        system.name()
                    )));
                }
            }
            "casimir_conservation" => {
                let has = system
                    .structure()
                    .map(|s| !s.casimirs().is_empty())
                    .unwrap_or(false);
                if !has {
                    return Err(RunError::Config(format!(
                        "system '{}' declares no Casimir functions",
                        system.name()
                    )));
                }
            }
            "strong_conservation" | "weak_conservation" | "involution" | "dirichlet"
            | "exceedance" => {
                resolve_observable(check, system)?;
            }
            _ => {}
        }
    }
    Ok(())
}

fn resolve_observable(
    check: &CheckSection,
    system: &SystemSpec,
) -> Result<(String, ScalarField), RunError> {
    let name = check.observable.clone().unwrap_or_else(|| "energy".into());
    if let Some(idx) = name.strip_prefix("coord:") {
        let idx: usize = idx
            .parse()
            .map_err(|_| RunError::Config(format!("bad coordinate index in '{name}'")))?;
        if idx >= system.dim() {
            return Err(RunError::Config(format!(
                "coordinate {idx} out of range for dimension {}",
                system.dim()
            )));
        }
        return Ok((name.clone(), ScalarField::coordinate(system.dim(), idx)));
    }
    match name.as_str() {
        "energy" => system
            .energy_observable()
            .map(|f| (name.clone(), f))
            .ok_or_else(|| {
                RunError::Config(format!(
                    "system '{}' has no energy observable (non-Hamiltonian)",
                    system.name()
                ))
            }),
        "casimir" => system
            .structure()
            .and_then(|s| s.casimirs().first().cloned())
            .map(|f| (name.clone(), f))
            .ok_or_else(|| {
                RunError::Config(format!(
                    "system '{}' declares no Casimir functions",
                    system.name()
                ))
            }),
        other => Err(RunError::Config(format!(
            "unknown observable '{other}'; use energy, casimir, or coord:<index>"
        ))),
    }
}

fn run_checks(
    checks: &[CheckSection],
    system: &SystemSpec,
    espec: &EnsembleSpec,
    ensemble: &Ensemble,
    scheme: Scheme,
) -> Result<Vec<DiagnosticsReport>, RunError> {
    let mut reports = Vec::with_capacity(checks.len());
    for check in checks {
        let report = match check.name.as_str() {
            "strong_conservation" => {
                let (_, f) = resolve_observable(check, system)?;
                let tol = check.tolerance.unwrap_or(5e-3);
                strong_conservation_check(&f, ensemble, tol).map_err(runtime_err)?
            }
            "casimir_conservation" => {
                let f = system
                    .structure()
                    .and_then(|s| s.casimirs().first().cloned())
                    .expect("validated");
                let tol = check.tolerance.unwrap_or(1e-3);
                let mut rep = strong_conservation_check(&f, ensemble, tol).map_err(runtime_err)?;
                rep.name = "casimir_conservation".into();
                rep
            }
            "weak_conservation" => {
                let (_, f) = resolve_observable(check, system)?;
                // slack scaled to the discretization bias
                let slack = check.tolerance.unwrap_or(10.0 * espec.dt);
                let rules = vec![
                    StoppingRule::FixedTime(espec.t_final / 2.0),
                    StoppingRule::FixedTime(espec.t_final),
                ];
                weak_conservation_check(&f, ensemble, &rules, slack).map_err(runtime_err)?
            }
            "involution" => {
                let (_, f) = resolve_observable(check, system)?;
                let tol = check.tolerance.unwrap_or(1e-10);
                let h = system.hamiltonian().ok_or_else(|| {
                    RunError::Config("involution needs a Hamiltonian system".into())
                })?;
                let probes = involution_probes(system);
                involution_check(system.structure().expect("hamiltonian"), &f, h, &probes, tol)
                    .map_err(runtime_err)?
            }
            "symplectic_defect" => {
                let tol = check.tolerance.unwrap_or(1e-2);
                let structure = system.structure().expect("validated");
                let h = system.hamiltonian().expect("validated");
                if scheme != Scheme::StratonovichHeun {
                    return Err(RunError::Config(
                        "symplectic_defect runs on the stratonovich_heun scheme".into(),
                    ));
                }
                let traj = ensemble.reconstruct_path(0).map_err(runtime_err)?;
                let x = rebuild_noise(system, espec, 0).map_err(runtime_err)?;
                let js = tangent_flow(structure, h, &traj, &x, &espec.cfg).map_err(runtime_err)?;
                let omega = canonical_omega(system.dim());
                symplectic_defect(&js, &omega, tol).map_err(runtime_err)?
            }
            "dirichlet" => {
                let (_, f) = resolve_observable(check, system)?;
                let point = check
                    .point
                    .clone()
                    .or_else(|| system.equilibria.first().cloned())
                    .ok_or_else(|| {
                        RunError::Config("dirichlet needs a point or a catalog equilibrium".into())
                    })?;
                dirichlet_certificate(&f, &point, None).map_err(runtime_err)?
            }
            "exceedance" => {
                let (_, f) = resolve_observable(check, system)?;
                let z0 = match &espec.initial {
                    InitialCondition::Fixed(z) => z.clone(),
                    InitialCondition::Sampled(_) => {
                        return Err(RunError::Config(
                            "exceedance needs a fixed initial state".into(),
                        ))
                    }
                };
                let f0 = f.value(&z0);
                let factor = check.level_factor.unwrap_or(2.0);
                if !(factor > 0.0) || f0 <= 0.0 {
                    return Err(RunError::Config(
                        "exceedance needs level_factor > 0 and f(z0) > 0".into(),
                    ));
                }
                let level = factor * f0;
                let (p_hat, se) = sup_exceedance_probability(ensemble, &f, level, espec.t_final)
                    .map_err(runtime_err)?;
                // Chebyshev-type bound for conserved nonnegative observables
                let bound = f0 / level + 3.0 * se;
                let mut rep = DiagnosticsReport {
                    name: "exceedance".into(),
                    statistic: p_hat,
                    tolerance: bound,
                    passed: p_hat <= bound,
                    details: BTreeMap::new(),
                };
                rep.details.insert("level".into(), level);
                rep.details.insert("stderr".into(), se);
                rep.details.insert("chebyshev_bound".into(), f0 / level);
                rep
            }
            other => return Err(RunError::Config(format!("unknown check '{other}'"))),
        };
        reports.push(report);
    }
    Ok(reports)
}

fn involution_probes(system: &SystemSpec) -> Vec<Vec<f64>> {
    let mut probes = Vec::new();
    if let Some(z0) = system.fixed_initial() {
        probes.push(z0.clone());
        for i in 0..z0.len() {
            let mut z = z0.clone();
            z[i] += 0.1;
            probes.push(z);
        }
    }
    probes.extend(system.equilibria.iter().cloned());
    if probes.is_empty() {
        probes.push(vec![0.1; system.dim()]);
    }
    probes
}

fn rebuild_noise(
    system: &SystemSpec,
    espec: &EnsembleSpec,
    path: usize,
) -> stochham_core::Result<stochham_core::noise::NoisePath> {
    let seed = espec.path_seed(path);
    match &system.noise_builder {
        Some(b) => Ok(b(espec.t_final, espec.dt, seed)),
        None => stochham_core::noise::sample_path(&system.driver, espec.t_final, espec.dt, seed),
    }
}

fn build_summary(
    cfg: &RunConfig,
    system: &SystemSpec,
    espec: &EnsembleSpec,
    ensemble: &Ensemble,
    scheme: Scheme,
) -> Result<Summary, RunError> {
    let dim = system.dim();
    let cps = ensemble.checkpoint_times().to_vec();
    let mut coordinate_means = Vec::with_capacity(cps.len());
    let mut coordinate_stderrs = Vec::with_capacity(cps.len());
    for &t in &cps {
        let mut means = Vec::with_capacity(dim);
        let mut errs = Vec::with_capacity(dim);
        for c in 0..dim {
            let f = ScalarField::coordinate(dim, c);
            let (m, s) = expectation(&f, ensemble, t).map_err(runtime_err)?;
            means.push(m);
            errs.push(s);
        }
        coordinate_means.push(means);
        coordinate_stderrs.push(errs);
    }

    let mut observable_means = BTreeMap::new();
    let mut observable_stderrs = BTreeMap::new();
    let mut named: Vec<(String, ScalarField)> = Vec::new();
    if let Some(energy) = system.energy_observable() {
        named.push(("energy".into(), energy));
    }
    if let Some(s) = system.structure() {
        for (i, c) in s.casimirs().iter().enumerate() {
            named.push((format!("casimir{i}"), c.clone()));
        }
    }
    for (name, f) in named {
        let mut means = Vec::with_capacity(cps.len());
        let mut errs = Vec::with_capacity(cps.len());
        for &t in &cps {
            let (m, s) = expectation(&f, ensemble, t).map_err(runtime_err)?;
            means.push(m);
            errs.push(s);
        }
        observable_means.insert(name.clone(), means);
        observable_stderrs.insert(name, errs);
    }

    let mut exit_histogram: BTreeMap<String, u64> = BTreeMap::new();
    for p in ensemble.path_summaries() {
        *exit_histogram.entry(p.status_label.clone()).or_insert(0) += 1;
    }

    let path_seeds = if espec.n_paths <= 256 {
        Some(
            ensemble
                .path_summaries()
                .iter()
                .map(|p| p.seed)
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };

    Ok(Summary {
        schema_version: 1,
        system: system.name().to_string(),
        params: system.params.clone(),
        scheme: scheme.name().to_string(),
        n_paths: espec.n_paths,
        t_final: espec.t_final,
        dt: espec.dt,
        checkpoints: cps,
        coordinate_means,
        coordinate_stderrs,
        observable_means,
        observable_stderrs,
        exit_histogram,
        exploded_count: ensemble.exploded_count(),
        seeds: SeedInfo {
            master_seed: espec.master_seed,
            mixing: "splitmix64",
            path_seeds,
        },
    })
    .map(|mut s| {
        // keep the config's declared cap out of float formatting surprises
        let _ = cfg;
        s.params = system.params.clone();
        s
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(runtime_err)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(runtime_err)
}

fn write_trajectories(path: &Path, ensemble: &Ensemble, cap: usize) -> Result<(), RunError> {
    let n = ensemble.n_paths().min(cap);
    let mut file = fs::File::create(path).map_err(runtime_err)?;
    let dim = ensemble.dim();
    let mut header = String::from("path,t");
    for i in 1..=dim {
        header.push_str(&format!(",z{i}"));
    }
    header.push_str(",status\n");
    file.write_all(header.as_bytes()).map_err(runtime_err)?;
    for p in 0..n {
        let traj = ensemble.reconstruct_path(p).map_err(runtime_err)?;
        let len = traj.len();
        for i in 0..len {
            let mut line = format!("{p},{}", traj.time(i));
            for v in traj.state(i) {
                line.push_str(&format!(",{v}"));
            }
            line.push(',');
            if i + 1 == len {
                line.push_str(traj.status().label());
            }
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(runtime_err)?;
        }
    }
    Ok(())
}

fn run_sweep(
    cfg: &RunConfig,
    overrides: &Overrides,
    base_system: &SystemSpec,
    scheme: Scheme,
    sweep: &crate::config::SweepSection,
    out_dir: &Path,
    quiet: bool,
) -> Result<bool, RunError> {
    let ensemble_params = ["dt", "n_paths", "t_final", "master_seed"];
    let is_system_param = base_system.params.contains_key(&sweep.parameter);
    if !is_system_param && !ensemble_params.contains(&sweep.parameter.as_str()) {
        return Err(RunError::Config(format!(
            "sweep parameter '{}' is neither an ensemble parameter ({}) nor a parameter of '{}'",
            sweep.parameter,
            ensemble_params.join(", "),
            base_system.name()
        )));
    }
    if sweep.values.is_empty() {
        return Err(RunError::Config("sweep needs at least one value".into()));
    }

    let mut all_passed = true;
    let mut rows: Vec<(f64, Vec<DiagnosticsReport>, usize)> = Vec::new();
    for &value in &sweep.values {
        let mut cfg_v = cfg.clone();
        cfg_v.sweep = None;
        let system_v = if is_system_param {
            cfg_v
                .system
                .params
                .insert(sweep.parameter.clone(), value);
            build_system(&cfg_v.system.name, &cfg_v.system.params).map_err(config_err)?
        } else {
            match sweep.parameter.as_str() {
                "dt" => cfg_v.ensemble.dt = value,
                "n_paths" => cfg_v.ensemble.n_paths = value as usize,
                "t_final" => cfg_v.ensemble.t_final = value,
                "master_seed" => cfg_v.ensemble.master_seed = value as u64,
                _ => unreachable!(),
            }
            base_system.clone()
        };
        let espec_v = ensemble_spec(&cfg_v, overrides, &system_v, scheme)?;
        let ensemble_v = system_v.run_ensemble(&espec_v).map_err(runtime_err)?;
        let reports = run_checks(&cfg_v.checks, &system_v, &espec_v, &ensemble_v, scheme)?;
        all_passed = all_passed && reports.iter().all(|r| r.passed);
        if !quiet {
            println!("sweep {} = {value}: {} checks", sweep.parameter, reports.len());
        }
        rows.push((value, reports, ensemble_v.exploded_count()));
    }

    // one row per sweep value with statistic columns
    let mut file = fs::File::create(out_dir.join("sweep.csv")).map_err(runtime_err)?;
    let mut header = format!("parameter,value");
    for check in &cfg.checks {
        header.push_str(&format!(",{0}_statistic,{0}_passed", check.name));
    }
    header.push_str(",exploded_count\n");
    file.write_all(header.as_bytes()).map_err(runtime_err)?;
    for (value, reports, exploded) in &rows {
        let mut line = format!("{},{}", sweep.parameter, value);
        for r in reports {
            line.push_str(&format!(",{},{}", r.statistic, u8::from(r.passed)));
        }
        line.push_str(&format!(",{exploded}\n"));
        file.write_all(line.as_bytes()).map_err(runtime_err)?;
    }
    Ok(all_passed)
}

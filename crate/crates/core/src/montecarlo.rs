//! Ensemble simulation with reproducible seeding, expectation estimators,
//! stopping-time statistics, and the exceedance-probability estimator used
//! by the stability checks.
//!
//! Per-path seeds are `mix_seed(master_seed, path_index)` (SplitMix64-based,
//! see [`crate::noise::mix_seed`]), so an ensemble is a pure function of its
//! [`EnsembleSpec`] regardless of how many workers execute it: paths are
//! simulated in parallel but reduced in path-index order.
//!
//! To keep memory bounded, an [`Ensemble`] stores per-path states at a set
//! of checkpoint grid indices plus the terminal status; functionals that
//! need the full-resolution path (pathwise sups, stopping times) re-simulate
//! paths on demand, which is exact because simulation is deterministic in
//! the per-path seed.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrators::{simulate, Dynamics, IntegratorConfig, PathStatus, Trajectory};
use crate::noise::{mix_seed, sample_path, DriverSpec, NoisePath};
use crate::structures::ScalarField;

/// Initial condition: fixed state or a per-path sampler keyed by a derived
/// seed.
#[derive(Clone)]
pub enum InitialCondition {
    Fixed(Vec<f64>),
    Sampled(Arc<dyn Fn(u64) -> Vec<f64> + Send + Sync>),
}

impl std::fmt::Debug for InitialCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialCondition::Fixed(z) => f.debug_tuple("Fixed").field(z).finish(),
            InitialCondition::Sampled(_) => f.write_str("Sampled(..)"),
        }
    }
}

impl InitialCondition {
    fn state_for(&self, master_seed: u64, path: u64) -> Vec<f64> {
        match self {
            InitialCondition::Fixed(z) => z.clone(),
            InitialCondition::Sampled(s) => s(mix_seed(master_seed ^ 0x5EED_1111, path)),
        }
    }
}

/// Declarative ensemble description; two runs of the same spec produce
/// bit-identical results.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub n_paths: usize,
    pub master_seed: u64,
    pub t_final: f64,
    pub dt: f64,
    pub initial: InitialCondition,
    pub cfg: IntegratorConfig,
    /// Number of checkpoint grid points to retain (including `t=0` and
    /// `t=t_final`); clamped to the grid size.
    pub n_checkpoints: usize,
    /// Fraction of exploded paths above which [`run_ensemble`] fails.
    pub max_exploded_fraction: f64,
}

impl EnsembleSpec {
    pub fn new(n_paths: usize, master_seed: u64, t_final: f64, dt: f64, z0: Vec<f64>, cfg: IntegratorConfig) -> Self {
        Self {
            n_paths,
            master_seed,
            t_final,
            dt,
            initial: InitialCondition::Fixed(z0),
            cfg,
            n_checkpoints: 21,
            max_exploded_fraction: 1e-3,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be >= 1".into()));
        }
        if self.n_checkpoints < 2 {
            return Err(Error::InvalidParameter(
                "need at least the endpoints as checkpoints".into(),
            ));
        }
        self.cfg.validate()
    }

    /// Seed of the driver realization for one path.
    pub fn path_seed(&self, path: usize) -> u64 {
        mix_seed(self.master_seed, path as u64)
    }
}

/// Compact per-path record retained by an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct PathSummary {
    pub seed: u64,
    pub status_label: String,
    /// Grid index of exit/explosion, if any.
    pub terminal_index: Option<usize>,
}

/// Ensemble of reproducible paths with checkpointed states.
pub struct Ensemble {
    dynamics: Dynamics,
    driver: DriverSpec,
    noise_builder: Option<Arc<dyn Fn(f64, f64, u64) -> NoisePath + Send + Sync>>,
    spec: EnsembleSpec,
    checkpoint_indices: Vec<usize>,
    checkpoint_times: Vec<f64>,
    /// `[path][checkpoint * dim + coordinate]`, stopped-process convention:
    /// exited paths freeze at their exit state; exploded paths carry only
    /// checkpoints up to explosion and are excluded from statistics.
    checkpoint_states: Vec<Vec<f64>>,
    summaries: Vec<PathSummary>,
    exploded: usize,
}

impl std::fmt::Debug for Ensemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ensemble")
            .field("n_paths", &self.spec.n_paths)
            .field("checkpoints", &self.checkpoint_times.len())
            .field("exploded", &self.exploded)
            .finish()
    }
}

fn checkpoint_indices(steps: usize, want: usize) -> Vec<usize> {
    let want = want.clamp(2, steps + 1);
    let mut idx: Vec<usize> = (0..want)
        .map(|k| ((k as f64) * (steps as f64) / ((want - 1) as f64)).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// Run `spec.n_paths` independent simulations of `dynamics` against
/// `driver`. Deterministic regardless of worker count: per-path seeds are
/// fixed by the spec and reductions happen in path order.
pub fn run_ensemble(dynamics: &Dynamics, driver: &DriverSpec, spec: &EnsembleSpec) -> Result<Ensemble> {
    run_ensemble_with(dynamics, driver, None, spec)
}

/// [`run_ensemble`] with a custom driver realization builder (used by
/// catalog systems whose forcing is not expressible as a [`DriverSpec`]).
pub fn run_ensemble_with(
    dynamics: &Dynamics,
    driver: &DriverSpec,
    noise_builder: Option<Arc<dyn Fn(f64, f64, u64) -> NoisePath + Send + Sync>>,
    spec: &EnsembleSpec,
) -> Result<Ensemble> {
    spec.validate()?;
    let steps = (spec.t_final / spec.dt).round() as usize;
    let cp = checkpoint_indices(steps, spec.n_checkpoints);
    let cp_times: Vec<f64> = cp.iter().map(|i| *i as f64 * spec.dt).collect();

    let results: Vec<Result<(Vec<f64>, PathSummary)>> = (0..spec.n_paths)
        .into_par_iter()
        .map(|p| {
            let traj = simulate_one(dynamics, driver, noise_builder.as_deref(), spec, p)?;
            let dim = traj.dim();
            let mut states = Vec::with_capacity(cp.len() * dim);
            for &i in &cp {
                // stopped-process convention: freeze at the last recorded state
                let j = i.min(traj.len() - 1);
                states.extend_from_slice(traj.state(j));
            }
            let (label, terminal) = match traj.status() {
                PathStatus::Completed => ("completed", None),
                PathStatus::Exited(i) => ("exited", Some(i)),
                PathStatus::Exploded(i) => ("exploded", Some(i)),
            };
            Ok((
                states,
                PathSummary {
                    seed: spec.path_seed(p),
                    status_label: label.to_string(),
                    terminal_index: terminal,
                },
            ))
        })
        .collect();

    let mut checkpoint_states = Vec::with_capacity(spec.n_paths);
    let mut summaries = Vec::with_capacity(spec.n_paths);
    let mut exploded = 0usize;
    for r in results {
        let (states, summary) = r?;
        if summary.status_label == "exploded" {
            exploded += 1;
        }
        checkpoint_states.push(states);
        summaries.push(summary);
    }
    let frac = exploded as f64 / spec.n_paths as f64;
    if frac > spec.max_exploded_fraction {
        return Err(Error::Precondition(format!(
            "{exploded} of {} paths exploded (fraction {frac:.2e} exceeds cap {:.2e})",
            spec.n_paths, spec.max_exploded_fraction
        )));
    }
    Ok(Ensemble {
        dynamics: dynamics.clone(),
        driver: driver.clone(),
        noise_builder,
        spec: spec.clone(),
        checkpoint_indices: cp,
        checkpoint_times: cp_times,
        checkpoint_states,
        summaries,
        exploded,
    })
}

fn simulate_one(
    dynamics: &Dynamics,
    driver: &DriverSpec,
    noise_builder: Option<&(dyn Fn(f64, f64, u64) -> NoisePath + Send + Sync)>,
    spec: &EnsembleSpec,
    path: usize,
) -> Result<Trajectory> {
    let seed = spec.path_seed(path);
    let x = match noise_builder {
        Some(b) => b(spec.t_final, spec.dt, seed),
        None => sample_path(driver, spec.t_final, spec.dt, seed)?,
    };
    let z0 = spec.initial.state_for(spec.master_seed, path as u64);
    simulate(dynamics, &z0, &x, &spec.cfg, None)
}

impl Ensemble {
    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn n_paths(&self) -> usize {
        self.spec.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn exploded_count(&self) -> usize {
        self.exploded
    }

    pub fn checkpoint_times(&self) -> &[f64] {
        &self.checkpoint_times
    }

    pub fn path_summaries(&self) -> &[PathSummary] {
        &self.summaries
    }

    /// State of one path at one checkpoint (stopped-process convention).
    pub fn checkpoint_state(&self, path: usize, checkpoint: usize) -> &[f64] {
        let dim = self.dim();
        &self.checkpoint_states[path][checkpoint * dim..(checkpoint + 1) * dim]
    }

    fn checkpoint_for_time(&self, t: f64) -> Result<usize> {
        let tol = 0.5 * self.spec.dt;
        self.checkpoint_times
            .iter()
            .position(|ct| (ct - t).abs() <= tol)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "time {t} is not a stored checkpoint; available: {:?}",
                    self.checkpoint_times
                ))
            })
    }

    fn path_alive_at(&self, path: usize, grid_index: usize) -> bool {
        match self.summaries[path].status_label.as_str() {
            "exploded" => self.summaries[path]
                .terminal_index
                .map(|i| grid_index < i)
                .unwrap_or(false),
            _ => true,
        }
    }

    /// Re-simulate one path exactly (per-path seeds and the integrator are
    /// deterministic).
    pub fn reconstruct_path(&self, path: usize) -> Result<Trajectory> {
        if path >= self.spec.n_paths {
            return Err(Error::IndexOutOfRange {
                index: path,
                len: self.spec.n_paths,
            });
        }
        simulate_one(
            &self.dynamics,
            &self.driver,
            self.noise_builder.as_deref(),
            &self.spec,
            path,
        )
    }

    /// Re-simulate every path and reduce it with `f`, in path-index order.
    /// Exact reconstruction: per-path seeds and the integrator are
    /// deterministic.
    pub fn map_paths<R, F>(&self, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(usize, &Trajectory) -> R + Send + Sync,
    {
        (0..self.spec.n_paths)
            .into_par_iter()
            .map(|p| {
                let traj = simulate_one(
                    &self.dynamics,
                    &self.driver,
                    self.noise_builder.as_deref(),
                    &self.spec,
                    p,
                )?;
                Ok(f(p, &traj))
            })
            .collect()
    }

    /// Value of `f(Γ_{τ∧T})` per path for a stopping rule evaluated on the
    /// grid. Exploded paths yield `None`.
    pub fn stopped_values(&self, f: &ScalarField, rule: &StoppingRule) -> Result<Vec<Option<f64>>> {
        let rule = rule.clone();
        let fc = f.clone();
        self.map_paths(move |_p, traj| {
            if matches!(traj.status(), PathStatus::Exploded(_)) {
                return None;
            }
            let idx = rule.stop_index(traj).unwrap_or(traj.len() - 1);
            let idx = idx.min(traj.len() - 1);
            Some(fc.value(traj.state(idx)))
        })
    }
}

/// Grid-evaluable stopping rules: a fixed time, or the first exit from a
/// Euclidean ball.
#[derive(Clone, Debug)]
pub enum StoppingRule {
    /// τ ≡ t (truncated to the horizon).
    FixedTime(f64),
    /// First grid time with `‖z - center‖ > radius`.
    FirstExitBall { center: Vec<f64>, radius: f64 },
}

impl StoppingRule {
    /// Grid index of τ along a trajectory; `None` when the rule never
    /// triggers before the end of the path.
    pub fn stop_index(&self, traj: &Trajectory) -> Option<usize> {
        match self {
            StoppingRule::FixedTime(t) => {
                let i = (t / traj.dt()).round() as usize;
                Some(i.min(traj.len() - 1))
            }
            StoppingRule::FirstExitBall { center, radius } => (0..traj.len()).find(|&i| {
                let z = traj.state(i);
                let d2: f64 = z
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() > *radius
            }),
        }
    }
}

/// First exit time of a trajectory from a region (`true` = inside):
/// smallest grid time with the state outside, `None` if it never leaves.
pub fn first_exit_time<F>(traj: &Trajectory, region: F) -> Option<f64>
where
    F: Fn(&[f64]) -> bool,
{
    (0..traj.len())
        .find(|&i| !region(traj.state(i)))
        .map(|i| traj.time(i))
}

/// Sample mean and CLT standard error of `f` at a checkpoint time across
/// non-exploded paths.
pub fn expectation(f: &ScalarField, e: &Ensemble, t: f64) -> Result<(f64, f64)> {
    let cp = e.checkpoint_for_time(t)?;
    let grid_index = e.checkpoint_indices[cp];
    let mut values = Vec::with_capacity(e.n_paths());
    for p in 0..e.n_paths() {
        if e.path_alive_at(p, grid_index) {
            values.push(f.value(e.checkpoint_state(p, cp)));
        }
    }
    if values.is_empty() {
        return Err(Error::AllPathsExploded);
    }
    Ok(mean_stderr(&values))
}

/// Mean and standard error of a sample.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimate `P(sup_{t ≤ horizon} f(Γ_t) > level)` with binomial standard
/// error. The sup runs over the full grid (paths are re-simulated), with
/// exploded paths counted as exceeding.
pub fn sup_exceedance_probability(
    e: &Ensemble,
    f: &ScalarField,
    level: f64,
    horizon: f64,
) -> Result<(f64, f64)> {
    if level <= 0.0 {
        return Err(Error::InvalidParameter("level must be positive".into()));
    }
    let fc = f.clone();
    let horizon_steps = (horizon / e.spec.dt).round() as usize;
    let hits = e.map_paths(move |_p, traj| {
        if matches!(traj.status(), PathStatus::Exploded(_)) {
            return 1u64;
        }
        let last = horizon_steps.min(traj.len() - 1);
        for i in 0..=last {
            if fc.value(traj.state(i)) > level {
                return 1;
            }
        }
        0
    })?;
    let n = hits.len() as f64;
    let p_hat = hits.iter().sum::<u64>() as f64 / n;
    let stderr = (p_hat * (1.0 - p_hat) / n).sqrt();
    Ok((p_hat, stderr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::Scheme;
    use crate::structures::{HamiltonianBundle, PhaseStructure};
    use approx::assert_abs_diff_eq;

    fn oscillator_dynamics() -> (Dynamics, DriverSpec) {
        let s = PhaseStructure::canonical(2).unwrap();
        let h = ScalarField::new(
            2,
            |z: &[f64]| 0.5 * (z[0] * z[0] + z[1] * z[1]),
            |z: &[f64], g: &mut [f64]| {
                g[0] = z[0];
                g[1] = z[1];
            },
        )
        .with_hessian(|_, h| h.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]));
        (
            Dynamics::Hamiltonian {
                structure: s,
                hamiltonian: HamiltonianBundle::new(vec![h]).unwrap(),
            },
            DriverSpec::new(
                vec![crate::noise::ComponentSpec::Affine {
                    slope: 1.0,
                    loadings: vec![0.5],
                }],
                1,
            )
            .unwrap(),
        )
    }

    fn zero_dynamics() -> (Dynamics, DriverSpec) {
        let s = PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::constant(2, 0.0)]).unwrap();
        (
            Dynamics::Hamiltonian {
                structure: s,
                hamiltonian: h,
            },
            DriverSpec::brownian(1),
        )
    }

    #[test]
    fn single_constant_path() {
        let (dyn_, driver) = zero_dynamics();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 0.1);
        let spec = EnsembleSpec::new(1, 7, 1.0, 0.1, vec![0.5, -0.5], cfg);
        let e = run_ensemble(&dyn_, &driver, &spec).unwrap();
        assert_eq!(e.n_paths(), 1);
        for cp in 0..e.checkpoint_times().len() {
            assert_eq!(e.checkpoint_state(0, cp), &[0.5, -0.5]);
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let (dyn_, driver) = oscillator_dynamics();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 1e-2);
        let spec = EnsembleSpec::new(64, 99, 1.0, 1e-2, vec![1.0, 0.0], cfg);
        let a = run_ensemble(&dyn_, &driver, &spec).unwrap();
        let b = run_ensemble(&dyn_, &driver, &spec).unwrap();
        for p in 0..64 {
            for cp in 0..a.checkpoint_times().len() {
                assert_eq!(a.checkpoint_state(p, cp), b.checkpoint_state(p, cp));
            }
        }
    }

    #[test]
    fn energy_is_weakly_conserved_on_oscillator() {
        let (dyn_, driver) = oscillator_dynamics();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 1e-3);
        let spec = EnsembleSpec::new(500, 11, 1.0, 1e-3, vec![1.0, 0.0], cfg);
        let e = run_ensemble(&dyn_, &driver, &spec).unwrap();
        let h = ScalarField::new(
            2,
            |z: &[f64]| 0.5 * (z[0] * z[0] + z[1] * z[1]),
            |z: &[f64], g: &mut [f64]| {
                g[0] = z[0];
                g[1] = z[1];
            },
        );
        let (mean, stderr) = expectation(&h, &e, 1.0).unwrap();
        // strongly conserved quantity: mean must match h(z0) = 0.5
        assert!(
            (mean - 0.5).abs() <= 3.0 * stderr + 1e-4,
            "mean {mean}, stderr {stderr}"
        );
    }

    #[test]
    fn expectation_of_constant_is_exact() {
        let (dyn_, driver) = zero_dynamics();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 0.1);
        let spec = EnsembleSpec::new(10, 3, 1.0, 0.1, vec![0.0, 0.0], cfg);
        let e = run_ensemble(&dyn_, &driver, &spec).unwrap();
        let c = ScalarField::constant(2, 2.5);
        let (mean, stderr) = expectation(&c, &e, 0.5).unwrap();
        assert_eq!(mean, 2.5);
        assert_eq!(stderr, 0.0);
    }

    #[test]
    fn brownian_coordinate_has_zero_mean() {
        // h = p makes q follow the driver: q_t = B_t
        let s = PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::coordinate(2, 1)]).unwrap();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s,
            hamiltonian: h,
        };
        let driver = DriverSpec::brownian(1);
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 1e-2);
        let spec = EnsembleSpec::new(800, 21, 1.0, 1e-2, vec![0.0, 0.0], cfg);
        let e = run_ensemble(&dyn_, &driver, &spec).unwrap();
        let q = ScalarField::coordinate(2, 0);
        let (mean, stderr) = expectation(&q, &e, 1.0).unwrap();
        assert!(mean.abs() <= 3.0 * stderr, "mean {mean} stderr {stderr}");
    }

    #[test]
    fn first_exit_examples() {
        let (dyn_, driver) = zero_dynamics();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 0.1);
        let spec = EnsembleSpec::new(1, 7, 1.0, 0.1, vec![0.0, 0.0], cfg.clone());
        let e = run_ensemble(&dyn_, &driver, &spec).unwrap();
        let trajs = e.map_paths(|_p, t| t.clone()).unwrap();
        let traj = &trajs[0];
        // initial state outside region
        assert_eq!(first_exit_time(traj, |z| z[0] > 1.0), Some(0.0));
        // constant path inside region never exits
        assert_eq!(first_exit_time(traj, |z| z[0] < 1.0), None);
    }

    #[test]
    fn first_exit_linear_path_inclusive_convention() {
        // q_t = t via h = p and time driver; region q < 0.5, dt = 0.1
        let s = PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::coordinate(2, 1)]).unwrap();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s,
            hamiltonian: h,
        };
        let driver = DriverSpec::time_only();
        let x = sample_path(&driver, 1.0, 0.1, 0).unwrap();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 0.1);
        let traj = simulate(&dyn_, &[0.0, 0.0], &x, &cfg, None).unwrap();
        assert_eq!(first_exit_time(&traj, |z| z[0] < 0.5), Some(0.5));
    }

    #[test]
    fn exceedance_examples() {
        let (dyn_, driver) = oscillator_dynamics();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 1e-3);
        let spec = EnsembleSpec::new(200, 5, 1.0, 1e-3, vec![1.0, 0.0], cfg);
        let e = run_ensemble(&dyn_, &driver, &spec).unwrap();
        let energy = ScalarField::new(
            2,
            |z: &[f64]| 0.5 * (z[0] * z[0] + z[1] * z[1]),
            |z: &[f64], g: &mut [f64]| {
                g[0] = z[0];
                g[1] = z[1];
            },
        );
        // level below f(z0): every path starts above it
        let (p_low, _) = sup_exceedance_probability(&e, &energy, 0.25, 1.0).unwrap();
        assert_eq!(p_low, 1.0);
        // conserved energy cannot reach 2 f(z0) (Chebyshev-type bound)
        let (p_high, se) = sup_exceedance_probability(&e, &energy, 1.0, 1.0).unwrap();
        assert!(p_high <= 0.5 + 3.0 * se);
        assert!(p_high < 0.05, "conserved energy exceeded doubled level: {p_high}");
    }

    #[test]
    fn stopped_values_fixed_time_matches_checkpoints() {
        let (dyn_, driver) = oscillator_dynamics();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 1e-2);
        let spec = EnsembleSpec::new(32, 2, 1.0, 1e-2, vec![1.0, 0.0], cfg);
        let e = run_ensemble(&dyn_, &driver, &spec).unwrap();
        let q = ScalarField::coordinate(2, 0);
        let vals = e.stopped_values(&q, &StoppingRule::FixedTime(1.0)).unwrap();
        for (p, v) in vals.iter().enumerate() {
            let cp_last = e.checkpoint_times().len() - 1;
            assert_abs_diff_eq!(
                v.unwrap(),
                e.checkpoint_state(p, cp_last)[0],
                epsilon = 1e-14
            );
        }
    }
}

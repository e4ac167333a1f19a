//! Numerical pass/fail checks for the structural properties of stochastic
//! Hamiltonian systems: strong/weak conservation, involution, the
//! bracket-increment identity, symplectic-form preservation along the
//! tangent flow, and the Dirichlet/Lyapunov stability certificates.
//!
//! Every check is a numerical surrogate with an explicit tolerance. Reports
//! carry the raw statistic plus keyed details (CI bounds, eigenvalues,
//! refinement data) so that runs can record behavior under `dt` refinement,
//! not just a single boolean.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::calculus::scalar_strat_integral;
use crate::error::{Error, Result};
use crate::integrators::Trajectory;
use crate::montecarlo::{mean_stderr, Ensemble, StoppingRule};
use crate::noise::NoisePath;
use crate::structures::{HamiltonianBundle, PhaseStructure, ScalarField};

/// Gradient tolerance for Dirichlet certificates with analytic gradients.
pub const DIRICHLET_GRAD_TOL_ANALYTIC: f64 = 1e-8;
/// Gradient tolerance when the gradient is itself finite-differenced.
pub const DIRICHLET_GRAD_TOL_FD: f64 = 1e-5;
/// Eigenvalues below this magnitude flag a degenerate (non-Morse) Hessian.
pub const DIRICHLET_DEFINITENESS_FLOOR: f64 = 1e-6;

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub name: String,
    pub statistic: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub details: BTreeMap<String, f64>,
}

impl DiagnosticsReport {
    fn new(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            tolerance,
            passed: statistic <= tolerance,
            details: BTreeMap::new(),
        }
    }

    fn with(mut self, key: impl Into<String>, value: f64) -> Self {
        self.details.insert(key.into(), value);
        self
    }
}

/// Pathwise conservation: statistic is the max over paths and grid times of
/// `|f(Γ_t) - f(Γ_0)|` (full-resolution, paths re-simulated).
pub fn strong_conservation_check(
    f: &ScalarField,
    e: &Ensemble,
    tolerance: f64,
) -> Result<DiagnosticsReport> {
    let fc = f.clone();
    let sups = e.map_paths(move |_p, traj| {
        let f0 = fc.value(traj.state(0));
        (0..traj.len()).fold(0.0f64, |m, i| m.max((fc.value(traj.state(i)) - f0).abs()))
    })?;
    let statistic = sups.iter().fold(0.0f64, |m, v| m.max(*v));
    let mean_sup = sups.iter().sum::<f64>() / sups.len() as f64;
    Ok(DiagnosticsReport::new("strong_conservation", statistic, tolerance)
        .with("mean_path_sup", mean_sup)
        .with("paths", sups.len() as f64))
}

/// In-mean conservation at stopping times: per rule, compare
/// `mean f(Γ_{τ∧T})` against `mean f(Γ_0)`. The statistic is the worst
/// `|Δmean| - 3·stderr` over the rules and the tolerance is `slack`, an
/// absolute allowance for discretization bias: a quantity passing the
/// strong check at drift `τ` passes here with `slack = τ`. (With a fixed
/// initial state a pathwise-conserved quantity has near-zero Monte Carlo
/// variance, so the scheme's O(dt) bias would otherwise fail any pure-CI
/// comparison.)
pub fn weak_conservation_check(
    f: &ScalarField,
    e: &Ensemble,
    stopping_rules: &[StoppingRule],
    slack: f64,
) -> Result<DiagnosticsReport> {
    if stopping_rules.is_empty() {
        return Err(Error::Precondition(
            "weak conservation needs at least one stopping rule".into(),
        ));
    }
    let initial: Vec<f64> = (0..e.n_paths())
        .map(|p| f.value(e.checkpoint_state(p, 0)))
        .collect();
    let (mean0, se0) = mean_stderr(&initial);
    let mut report = DiagnosticsReport::new("weak_conservation", 0.0, slack);
    let mut worst = f64::NEG_INFINITY;
    for (k, rule) in stopping_rules.iter().enumerate() {
        let vals: Vec<f64> = e
            .stopped_values(f, rule)?
            .into_iter()
            .flatten()
            .collect();
        if vals.is_empty() {
            return Err(Error::AllPathsExploded);
        }
        let (mean_tau, se_tau) = mean_stderr(&vals);
        let se = (se0 * se0 + se_tau * se_tau).sqrt();
        let excess = (mean_tau - mean0).abs() - 3.0 * se;
        worst = worst.max(excess);
        report = report
            .with(format!("tau{k}_mean"), mean_tau)
            .with(format!("tau{k}_stderr"), se_tau)
            .with(format!("tau{k}_excess"), excess);
    }
    report.statistic = worst;
    report.passed = worst <= report.tolerance;
    Ok(report.with("initial_mean", mean0))
}

/// Involution criterion: statistic is the max over probe points and
/// Hamiltonian components of `|{f, h_j}|`.
pub fn involution_check(
    s: &PhaseStructure,
    f: &ScalarField,
    h: &HamiltonianBundle,
    probes: &[Vec<f64>],
    tolerance: f64,
) -> Result<DiagnosticsReport> {
    if probes.is_empty() {
        return Err(Error::Precondition("involution needs probe points".into()));
    }
    let mut statistic = 0.0f64;
    for z in probes {
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("involution probe"));
        }
        for hj in h.components() {
            statistic = statistic.max(s.poisson_bracket(f, hj, z)?.abs());
        }
    }
    Ok(DiagnosticsReport::new("involution", statistic, tolerance)
        .with("probes", probes.len() as f64)
        .with("components", h.len() as f64))
}

/// Bracket-increment identity along one trajectory:
/// `f(Γ_t) - f(Γ_0) = Σ_j ∫ {f,h_j}(Γ) δX^j` (Stratonovich midpoint) and its
/// Itô variant with left-point sums plus the `½{{f,h_j},h_i} κ^{ij} dt`
/// correction. The statistic is the grid sup of the Stratonovich defect;
/// the Itô defect is reported in the details.
pub fn bracket_increment_check(
    s: &PhaseStructure,
    h: &HamiltonianBundle,
    traj: &Trajectory,
    x: &NoisePath,
    f: &ScalarField,
    tolerance: f64,
) -> Result<DiagnosticsReport> {
    if traj.len() != x.steps() + 1 {
        return Err(Error::GridMismatch(
            "trajectory and driver grids differ".into(),
        ));
    }
    let n_pts = traj.len();
    let r = h.len();
    // {f, h_j} along the path
    let mut brackets: Vec<Vec<f64>> = vec![Vec::with_capacity(n_pts); r];
    for i in 0..n_pts {
        let z = traj.state(i);
        for (j, hj) in h.components().iter().enumerate() {
            brackets[j].push(s.poisson_bracket(f, hj, z)?);
        }
    }
    let f_series: Vec<f64> = (0..n_pts).map(|i| f.value(traj.state(i))).collect();

    // Stratonovich side
    let mut strat_rhs = vec![0.0; n_pts];
    for j in 0..r {
        let part = scalar_strat_integral(&brackets[j], x.component_values(j))?;
        for (acc, v) in strat_rhs.iter_mut().zip(part.partial_sums) {
            *acc += v;
        }
    }
    let mut strat_defect = 0.0f64;
    for i in 0..n_pts {
        strat_defect = strat_defect.max((f_series[i] - f_series[0] - strat_rhs[i]).abs());
    }

    // Itô side: left-point sums plus ½ Σ {{f,h_j},h_i} κ^{ij} dt, with the
    // iterated bracket differentiated by central differences.
    let kappa = x.qv_rates();
    let dt = x.dt();
    let mut ito_defect = 0.0f64;
    let mut acc = 0.0;
    let fd = crate::structures::default_fd_step(traj.state(0));
    for i in 0..n_pts - 1 {
        let z = traj.state(i);
        for j in 0..r {
            acc += brackets[j][i] * (x.value(j, i + 1) - x.value(j, i));
        }
        for j in 0..r {
            for l in 0..r {
                let k_jl = kappa[(j, l)];
                if k_jl != 0.0 {
                    acc += 0.5 * iterated_bracket_fd(s, f, h, j, l, z, fd)? * k_jl * dt;
                }
            }
        }
        let defect = (f_series[i + 1] - f_series[0] - acc).abs();
        ito_defect = ito_defect.max(defect);
    }

    Ok(
        DiagnosticsReport::new("bracket_increment", strat_defect, tolerance)
            .with("ito_defect", ito_defect)
            .with("final_strat_rhs", strat_rhs[n_pts - 1])
            .with("final_lhs", f_series[n_pts - 1] - f_series[0]),
    )
}

/// `{{f, h_j}, h_l}(z)` via central differences of the inner bracket.
fn iterated_bracket_fd(
    s: &PhaseStructure,
    f: &ScalarField,
    h: &HamiltonianBundle,
    j: usize,
    l: usize,
    z: &[f64],
    fd_step: f64,
) -> Result<f64> {
    let n = z.len();
    let mut grad_inner = vec![0.0; n];
    let mut zp = z.to_vec();
    for i in 0..n {
        zp[i] = z[i] + fd_step;
        let plus = s.poisson_bracket(f, h.component(j), &zp)?;
        zp[i] = z[i] - fd_step;
        let minus = s.poisson_bracket(f, h.component(j), &zp)?;
        zp[i] = z[i];
        grad_inner[i] = (plus - minus) / (2.0 * fd_step);
    }
    let mut grad_hl = vec![0.0; n];
    h.component(l).gradient_into(z, &mut grad_hl);
    let b = s.tensor_at(z)?;
    let mut acc = 0.0;
    for a in 0..n {
        for bb in (a + 1)..n {
            acc += b[(a, bb)] * (grad_inner[a] * grad_hl[bb] - grad_inner[bb] * grad_hl[a]);
        }
    }
    Ok(acc)
}

/// Symplectic defect of a tangent-flow series:
/// `sup_t ‖J_tᵀ Ω J_t - Ω‖_F`, with `det J` at the final time reported.
pub fn symplectic_defect(
    j_series: &[DMatrix<f64>],
    omega: &DMatrix<f64>,
    tolerance: f64,
) -> Result<DiagnosticsReport> {
    if j_series.is_empty() {
        return Err(Error::Precondition("empty tangent-flow series".into()));
    }
    let n = omega.nrows();
    if omega.ncols() != n || j_series[0].nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "symplectic_defect",
            expected: n,
            got: j_series[0].nrows(),
        });
    }
    let mut sup = 0.0f64;
    for j in j_series {
        let defect = (j.transpose() * omega * j - omega).norm();
        sup = sup.max(defect);
    }
    let det_final = j_series.last().expect("nonempty").determinant();
    Ok(DiagnosticsReport::new("symplectic_defect", sup, tolerance)
        .with("det_final", det_final)
        .with("det_deviation", (det_final - 1.0).abs()))
}

/// Dirichlet criterion at a putative equilibrium: `∇f(z0) ≈ 0` and the
/// Hessian definite. Details carry the gradient norm and extreme
/// eigenvalues; degenerate eigenvalues (below the definiteness floor) fail
/// the certificate.
pub fn dirichlet_certificate(
    f: &ScalarField,
    z0: &[f64],
    fd_step: Option<f64>,
) -> Result<DiagnosticsReport> {
    let grad = f.gradient(z0);
    let grad_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    let hess = f.hessian(z0, fd_step);
    let eig = nalgebra::SymmetricEigen::new(hess);
    let evs = eig.eigenvalues.as_slice();
    let min_abs = evs.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let all_pos = evs.iter().all(|v| *v >= DIRICHLET_DEFINITENESS_FLOOR);
    let all_neg = evs.iter().all(|v| *v <= -DIRICHLET_DEFINITENESS_FLOOR);
    let grad_tol = if f.has_hessian() {
        DIRICHLET_GRAD_TOL_ANALYTIC
    } else {
        DIRICHLET_GRAD_TOL_FD
    };
    let definite = all_pos || all_neg;
    let degenerate = min_abs < DIRICHLET_DEFINITENESS_FLOOR;
    let mut report = DiagnosticsReport::new("dirichlet", grad_norm, grad_tol);
    report.passed = grad_norm <= grad_tol && definite;
    report = report
        .with("min_eigenvalue", evs.iter().cloned().fold(f64::INFINITY, f64::min))
        .with("max_eigenvalue", evs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .with("min_abs_eigenvalue", min_abs)
        .with("definite", if definite { 1.0 } else { 0.0 })
        .with("degenerate", if degenerate { 1.0 } else { 0.0 });
    Ok(report)
}

/// Lyapunov inequality `E[V(Γ_{τ∧T})] ≤ E[V(Γ_0)] + 3·stderr + slack` for
/// each tested stopping rule, where `slack` absorbs discretization bias
/// (the statistic is the worst `Δmean - 3·stderr` and the tolerance is
/// `slack`). `V` must vanish at `z0` and be nonnegative near it (probed at
/// the ensemble's initial states).
pub fn lyapunov_check(
    v: &ScalarField,
    z0: &[f64],
    e: &Ensemble,
    stopping_rules: &[StoppingRule],
    slack: f64,
) -> Result<DiagnosticsReport> {
    if v.value(z0).abs() > 1e-10 {
        return Err(Error::Precondition(format!(
            "V(z0) = {} must vanish at the equilibrium",
            v.value(z0)
        )));
    }
    let initial: Vec<f64> = (0..e.n_paths())
        .map(|p| v.value(e.checkpoint_state(p, 0)))
        .collect();
    if initial.iter().any(|val| *val < -1e-12) {
        return Err(Error::Precondition(
            "V must be nonnegative on the tested neighborhood".into(),
        ));
    }
    let (mean0, se0) = mean_stderr(&initial);
    let mut worst = f64::NEG_INFINITY;
    let mut report = DiagnosticsReport::new("lyapunov", 0.0, slack);
    for (k, rule) in stopping_rules.iter().enumerate() {
        let vals: Vec<f64> = e.stopped_values(v, rule)?.into_iter().flatten().collect();
        if vals.is_empty() {
            return Err(Error::AllPathsExploded);
        }
        let (mean_tau, se_tau) = mean_stderr(&vals);
        let ci = 3.0 * (se0 * se0 + se_tau * se_tau).sqrt();
        let excess = mean_tau - mean0 - ci;
        worst = worst.max(excess);
        report = report
            .with(format!("tau{k}_mean"), mean_tau)
            .with(format!("tau{k}_excess"), excess);
    }
    report.statistic = worst;
    report.passed = worst <= report.tolerance;
    Ok(report.with("initial_mean", mean0))
}

/// Serialize a batch of reports as a JSON array.
pub fn reports_to_json(reports: &[DiagnosticsReport]) -> Result<String> {
    serde_json::to_string_pretty(reports)
        .map_err(|e| Error::InvalidParameter(format!("report serialization failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{
        canonical_omega, simulate, tangent_flow, Dynamics, IntegratorConfig, Scheme,
    };
    use crate::montecarlo::{run_ensemble, EnsembleSpec};
    use crate::noise::{sample_path, ComponentSpec, DriverSpec};

    fn energy_field(rho: f64, m: f64) -> ScalarField {
        ScalarField::new(
            2,
            move |z: &[f64]| 0.5 * (z[1] * z[1] / m + rho * z[0] * z[0]),
            move |z: &[f64], g: &mut [f64]| {
                g[0] = rho * z[0];
                g[1] = z[1] / m;
            },
        )
        .with_hessian(move |_, h| h.copy_from_slice(&[rho, 0.0, 0.0, 1.0 / m]))
    }

    fn oscillator_setup(nu: f64) -> (PhaseStructure, HamiltonianBundle, DriverSpec) {
        let s = PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![energy_field(1.0, 1.0)]).unwrap();
        let driver = DriverSpec::new(
            vec![ComponentSpec::Affine {
                slope: 1.0,
                loadings: vec![nu],
            }],
            1,
        )
        .unwrap();
        (s, h, driver)
    }

    fn oscillator_ensemble(nu: f64, n_paths: usize, dt: f64) -> (Ensemble, PhaseStructure, HamiltonianBundle) {
        let (s, h, driver) = oscillator_setup(nu);
        let dyn_ = Dynamics::Hamiltonian {
            structure: s.clone(),
            hamiltonian: h.clone(),
        };
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, dt);
        let spec = EnsembleSpec::new(n_paths, 42, 1.0, dt, vec![1.0, 0.0], cfg);
        (run_ensemble(&dyn_, &driver, &spec).unwrap(), s, h)
    }

    #[test]
    fn strong_conservation_energy_passes_and_q_fails() {
        let (e, _s, _h) = oscillator_ensemble(0.5, 30, 1e-3);
        let energy = energy_field(1.0, 1.0);
        let rep = strong_conservation_check(&energy, &e, 5e-3).unwrap();
        assert!(rep.passed, "energy drift {}", rep.statistic);

        let q = ScalarField::coordinate(2, 0);
        let rep_q = strong_conservation_check(&q, &e, 5e-3).unwrap();
        assert!(!rep_q.passed, "q must not be conserved: {}", rep_q.statistic);
        assert!(rep_q.statistic > 0.1);
    }

    #[test]
    fn weak_conservation_follows_strong_and_detects_drift() {
        let (e, _s, _h) = oscillator_ensemble(0.5, 200, 1e-3);
        let energy = energy_field(1.0, 1.0);
        let rules = vec![
            StoppingRule::FixedTime(0.5),
            StoppingRule::FixedTime(1.0),
            StoppingRule::FirstExitBall {
                center: vec![0.0, 0.0],
                radius: 0.9,
            },
        ];
        // slack = strong-drift scale at this dt
        let rep = weak_conservation_check(&energy, &e, &rules, 1e-3).unwrap();
        assert!(rep.passed, "weak conservation excess {}", rep.statistic);

        // drifting observable fails: mean of q moves deterministically
        let q = ScalarField::coordinate(2, 0);
        let rep_q =
            weak_conservation_check(&q, &e, &[StoppingRule::FixedTime(1.0)], 1e-3).unwrap();
        assert!(!rep_q.passed);
    }

    #[test]
    fn involution_self_is_exactly_zero() {
        let (s, h, _driver) = oscillator_setup(0.5);
        let f = h.component(0).clone();
        let rep = involution_check(&s, &f, &h, &[vec![1.0, 0.5]], 1e-14).unwrap();
        assert_eq!(rep.statistic, 0.0);
        assert!(rep.passed);
    }

    #[test]
    fn involution_control_detects_noncommuting() {
        let (s, h, _driver) = oscillator_setup(0.5);
        let q = ScalarField::coordinate(2, 0);
        let rep = involution_check(&s, &q, &h, &[vec![1.0, 0.5]], 1e-10).unwrap();
        assert!(!rep.passed);
        assert!(rep.statistic >= 0.5 - 1e-12); // |{q,h}| = |p| = 0.5
    }

    #[test]
    fn bracket_increment_zero_hamiltonian() {
        let s = PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::constant(2, 0.0)]).unwrap();
        let driver = DriverSpec::brownian(1);
        let x = sample_path(&driver, 1.0, 0.01, 4).unwrap();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s.clone(),
            hamiltonian: h.clone(),
        };
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 0.01);
        let traj = simulate(&dyn_, &[0.3, 0.7], &x, &cfg, None).unwrap();
        let f = energy_field(1.0, 1.0);
        let rep = bracket_increment_check(&s, &h, &traj, &x, &f, 1e-14).unwrap();
        assert_eq!(rep.statistic, 0.0);
    }

    #[test]
    fn bracket_increment_on_deterministic_oscillator_refines_at_first_order() {
        let (s, h, _driver) = oscillator_setup(0.0);
        let driver = DriverSpec::time_only();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s.clone(),
            hamiltonian: h.clone(),
        };
        let f = ScalarField::coordinate(2, 0);
        let defect_at = |dt: f64| {
            let x = sample_path(&driver, 1.0, dt, 0).unwrap();
            let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, dt);
            let traj = simulate(&dyn_, &[1.0, 0.0], &x, &cfg, None).unwrap();
            bracket_increment_check(&s, &h, &traj, &x, &f, 1.0)
                .unwrap()
                .statistic
        };
        let d1 = defect_at(1e-2);
        let d2 = defect_at(5e-3);
        let d3 = defect_at(2.5e-3);
        let order = ((d1 / d3).ln() / 4.0f64.ln()).abs();
        assert!(order >= 1.0, "observed order {order} ({d1}, {d2}, {d3})");
    }

    #[test]
    fn symplectic_defect_identity_and_oscillator() {
        let omega = canonical_omega(2);
        let ident = vec![DMatrix::identity(2, 2)];
        let rep = symplectic_defect(&ident, &omega, 1e-12).unwrap();
        assert_eq!(rep.statistic, 0.0);

        let (s, h, _) = oscillator_setup(0.0);
        let driver = DriverSpec::time_only();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s.clone(),
            hamiltonian: h.clone(),
        };
        let dt = 1e-3;
        let x = sample_path(&driver, 1.0, dt, 0).unwrap();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, dt);
        let traj = simulate(&dyn_, &[1.0, 0.0], &x, &cfg, None).unwrap();
        let js = tangent_flow(&s, &h, &traj, &x, &cfg).unwrap();
        let rep = symplectic_defect(&js, &omega, 10.0 * dt).unwrap();
        assert!(rep.passed, "defect {}", rep.statistic);
        assert!(rep.details["det_deviation"] < 1e-3);
    }

    #[test]
    fn dirichlet_certificate_examples() {
        // oscillator energy at the origin: eigenvalues {ρ, 1/m} = {1, 1}
        let rep = dirichlet_certificate(&energy_field(1.0, 1.0), &[0.0, 0.0], None).unwrap();
        assert!(rep.passed);
        assert!((rep.details["min_eigenvalue"] - 1.0).abs() < 1e-12);

        // saddle fails on mixed signs
        let saddle = ScalarField::new(
            2,
            |z: &[f64]| z[0] * z[0] - z[1] * z[1],
            |z: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * z[0];
                g[1] = -2.0 * z[1];
            },
        )
        .with_hessian(|_, h| h.copy_from_slice(&[2.0, 0.0, 0.0, -2.0]));
        let rep = dirichlet_certificate(&saddle, &[0.0, 0.0], None).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.details["definite"], 0.0);

        // quartic: zero Hessian flagged degenerate
        let quartic = ScalarField::new(
            2,
            |z: &[f64]| z[0].powi(4) + z[1].powi(4),
            |z: &[f64], g: &mut [f64]| {
                g[0] = 4.0 * z[0].powi(3);
                g[1] = 4.0 * z[1].powi(3);
            },
        );
        let rep = dirichlet_certificate(&quartic, &[0.0, 0.0], Some(1e-4)).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.details["degenerate"], 1.0);
    }

    #[test]
    fn lyapunov_accepts_conserved_energy_and_guards_sign() {
        let (e, _s, _h) = oscillator_ensemble(0.5, 100, 1e-3);
        let energy = energy_field(1.0, 1.0);
        let rules = vec![StoppingRule::FixedTime(1.0)];
        let rep = lyapunov_check(&energy, &[0.0, 0.0], &e, &rules, 1e-3).unwrap();
        assert!(rep.passed, "excess {}", rep.statistic);

        let neg = ScalarField::new(
            2,
            |z: &[f64]| -0.5 * (z[0] * z[0] + z[1] * z[1]),
            |z: &[f64], g: &mut [f64]| {
                g[0] = -z[0];
                g[1] = -z[1];
            },
        );
        assert!(matches!(
            lyapunov_check(&neg, &[0.0, 0.0], &e, &rules, 1e-3),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn variance_grows_for_noninvolutive_observable() {
        // converse direction of the involution criterion: {q,h} ≠ 0 and the
        // driver has κ > 0, so Var q(Γ_t) grows from zero
        let (e, _s, _h) = oscillator_ensemble(0.5, 400, 1e-3);
        let q = ScalarField::coordinate(2, 0);
        let t = 0.1; // t = 100·dt
        let cps = e.checkpoint_times().to_vec();
        let cp = cps.iter().position(|ct| (ct - t).abs() < 1e-9).unwrap();
        let vals: Vec<f64> = (0..e.n_paths())
            .map(|p| q.value(e.checkpoint_state(p, cp)))
            .collect();
        let (mean, _) = mean_stderr(&vals);
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
        // significance against the chi-square spread of a variance estimate
        let se_var = var * (2.0 / (vals.len() as f64 - 1.0)).sqrt();
        assert!(var > 3.0 * se_var && var > 0.0, "variance {var} not significant");
    }

    #[test]
    fn reports_serialize_to_json() {
        let rep = DiagnosticsReport::new("demo", 0.5, 1.0).with("k", 2.0);
        let json = reports_to_json(&[rep]).unwrap();
        assert!(json.contains("\"demo\""));
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed[0]["passed"], serde_json::Value::Bool(true));
    }
}

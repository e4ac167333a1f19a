//! The stochastic action on exact symplectic charts and its directional
//! derivatives.
//!
//! On a canonical chart with the Liouville form `θ = p·dq` (so `ω = -dθ =
//! dq∧dp`), the action of a path against a driver is
//! `S(Γ) = ∫⟨θ, δΓ⟩ - Σ_j ∫ h_j(Γ) δX^j`, discretized with the midpoint
//! rules from [`crate::calculus`].
//!
//! Two kinds of variations are supported, mirroring the two critical action
//! principles: flows of vector fields on the phase space (directional
//! derivative given by a closed four-term formula, cross-checkable against
//! finite differences of the action), and pathwise variations `Σ^s = Γ + sY`
//! built from a process over the path, whose derivative characterizes
//! solutions of the stochastic Hamilton equations.

use std::sync::Arc;

use crate::calculus::{scalar_strat_integral, strat_line_integral, IntegralRule, PathIntegralResult, PathView};
use crate::diagnostics::{strong_conservation_check, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::integrators::{Trajectory, VectorField};
use crate::montecarlo::Ensemble;
use crate::noise::NoisePath;
use crate::structures::{HamiltonianBundle, PhaseStructure, ScalarField};

/// Covector field writing its coefficients into a caller buffer.
pub type CovectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// The Liouville one-form `θ = p·dq` on a canonical `(q, p)` chart.
pub fn liouville_theta(dim: usize) -> CovectorField {
    assert!(dim % 2 == 0, "Liouville form needs an even-dimensional chart");
    let k = dim / 2;
    Arc::new(move |z: &[f64], out: &mut [f64]| {
        for i in 0..k {
            out[i] = z[k + i];
            out[k + i] = 0.0;
        }
    })
}

/// Sites where a variation is declared to vanish.
#[derive(Debug, Clone)]
pub enum VanishingSite {
    /// The initial point `m0` (equivalently `t = 0`).
    Initial,
    /// The evaluation endpoint (`t = τ_K`, or the horizon when the path
    /// never exits).
    Terminal,
    /// The boundary sphere of a ball `K`.
    BallBoundary { center: Vec<f64>, radius: f64 },
}

/// A variation: a vector field on the phase space (first principle) or a
/// process over the path (second principle), with its declared vanishing
/// set.
#[derive(Clone)]
pub struct VariationField {
    kind: VariationKind,
    vanishing: Vec<VanishingSite>,
}

#[derive(Clone)]
enum VariationKind {
    OnPhaseSpace(VectorField),
    /// `(grid index, state) ↦ Y`, written into the buffer.
    Pathwise(Arc<dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync>),
}

impl VariationField {
    pub fn on_phase_space<F>(field: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            kind: VariationKind::OnPhaseSpace(Arc::new(field)),
            vanishing: Vec::new(),
        }
    }

    pub fn pathwise<F>(field: F) -> Self
    where
        F: Fn(usize, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            kind: VariationKind::Pathwise(Arc::new(field)),
            vanishing: Vec::new(),
        }
    }

    pub fn vanishing_at(mut self, sites: Vec<VanishingSite>) -> Self {
        self.vanishing = sites;
        self
    }

    fn eval_into(&self, index: usize, z: &[f64], out: &mut [f64]) {
        match &self.kind {
            VariationKind::OnPhaseSpace(f) => f(z, out),
            VariationKind::Pathwise(f) => f(index, z, out),
        }
    }

    fn phase_space_field(&self) -> Result<&VectorField> {
        match &self.kind {
            VariationKind::OnPhaseSpace(f) => Ok(f),
            VariationKind::Pathwise(_) => Err(Error::Precondition(
                "this operation needs a phase-space vector field variation".into(),
            )),
        }
    }

    /// Probe the declared vanishing sites along a trajectory; each must
    /// evaluate to zero within `1e-12`.
    pub fn check_vanishing(&self, traj: &Trajectory, terminal_index: usize) -> Result<()> {
        let n = traj.dim();
        let mut buf = vec![0.0; n];
        let mut check_at = |idx: usize, what: &str| -> Result<()> {
            self.eval_into(idx, traj.state(idx), &mut buf);
            let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return Err(Error::Precondition(format!(
                    "variation does not vanish at {what} (|Y| = {norm:.3e})"
                )));
            }
            Ok(())
        };
        for site in &self.vanishing {
            match site {
                VanishingSite::Initial => check_at(0, "the initial point")?,
                VanishingSite::Terminal => check_at(terminal_index, "the terminal time")?,
                VanishingSite::BallBoundary { center, radius } => {
                    // probe any grid state lying on the sphere (within grid
                    // resolution of it)
                    for i in 0..traj.len() {
                        let z = traj.state(i);
                        let d: f64 = z
                            .iter()
                            .zip(center)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        if (d - radius).abs() < 1e-9 {
                            check_at(i, "the ball boundary")?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for VariationField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            VariationKind::OnPhaseSpace(_) => "OnPhaseSpace",
            VariationKind::Pathwise(_) => "Pathwise",
        };
        f.debug_struct("VariationField")
            .field("kind", &kind)
            .field("vanishing", &self.vanishing)
            .finish()
    }
}

fn check_grids(gamma: &Trajectory, x: &NoisePath, h: &HamiltonianBundle) -> Result<()> {
    if gamma.len() != x.steps() + 1 {
        return Err(Error::GridMismatch(format!(
            "path has {} grid points, driver has {}",
            gamma.len(),
            x.steps() + 1
        )));
    }
    if x.components() != h.len() {
        return Err(Error::DimensionMismatch {
            context: "action driver components",
            expected: h.len(),
            got: x.components(),
        });
    }
    if gamma.dim() % 2 != 0 {
        return Err(Error::Precondition(
            "action needs an even-dimensional symplectic chart".into(),
        ));
    }
    Ok(())
}

fn action_on_view(
    view: PathView<'_>,
    x: &NoisePath,
    h: &HamiltonianBundle,
    theta: &CovectorField,
) -> Result<PathIntegralResult> {
    let theta_term = strat_line_integral(|z, a| theta(z, a), view)?;
    let mut sums = theta_term.partial_sums;
    for j in 0..h.len() {
        let hj = h.component(j);
        let series: Vec<f64> = (0..view.len()).map(|i| hj.value(view.state(i))).collect();
        let part = scalar_strat_integral(&series, x.component_values(j))?;
        for (acc, v) in sums.iter_mut().zip(part.partial_sums) {
            *acc -= v;
        }
    }
    Ok(PathIntegralResult {
        partial_sums: sums,
        rule: IntegralRule::StratonovichMidpoint,
    })
}

/// Stochastic action partial sums
/// `S_t(Γ) = ∫⟨θ, δΓ⟩ - Σ_j ∫ h_j(Γ) δX^j`.
pub fn action(
    gamma: &Trajectory,
    x: &NoisePath,
    h: &HamiltonianBundle,
    theta: &CovectorField,
) -> Result<PathIntegralResult> {
    check_grids(gamma, x, h)?;
    action_on_view(gamma.view(), x, h, theta)
}

/// Directional derivative of the action along the flow of a vector field
/// `Y`, by the closed formula
/// `-∫⟨α, δΓ⟩ - Σ_j ∫ (∇h_j·Y)(Γ) δX^j + i_Yθ(Γ_t) - i_Yθ(Γ_0)` with
/// `α = ω♭(Y)` (so `ω♯(α) = Y`).
pub fn derivative_formula(
    gamma: &Trajectory,
    x: &NoisePath,
    h: &HamiltonianBundle,
    y: &VariationField,
    theta: &CovectorField,
) -> Result<PathIntegralResult> {
    check_grids(gamma, x, h)?;
    let field = y.phase_space_field()?.clone();
    let n = gamma.dim();
    let k = n / 2;
    // α = i_Y ω on the canonical chart: α = (-Y_p, Y_q)
    let alpha = move |z: &[f64], a: &mut [f64]| {
        let mut yb = vec![0.0; z.len()];
        field(z, &mut yb);
        let kk = z.len() / 2;
        for i in 0..kk {
            a[i] = -yb[kk + i];
            a[kk + i] = yb[i];
        }
    };
    let first = strat_line_integral(alpha, gamma.view())?;
    let mut sums: Vec<f64> = first.partial_sums.iter().map(|v| -v).collect();

    let field = y.phase_space_field()?;
    let n_pts = gamma.len();
    let mut yb = vec![0.0; n];
    let mut grad = vec![0.0; n];
    for j in 0..h.len() {
        let hj = h.component(j);
        let mut series = Vec::with_capacity(n_pts);
        for i in 0..n_pts {
            let z = gamma.state(i);
            field(z, &mut yb);
            hj.gradient_into(z, &mut grad);
            series.push(grad.iter().zip(&yb).map(|(g, y)| g * y).sum::<f64>());
        }
        let part = scalar_strat_integral(&series, x.component_values(j))?;
        for (acc, v) in sums.iter_mut().zip(part.partial_sums) {
            *acc -= v;
        }
    }

    // boundary terms i_Yθ(Γ_t) - i_Yθ(Γ_0)
    let mut th = vec![0.0; n];
    let mut boundary = Vec::with_capacity(n_pts);
    for i in 0..n_pts {
        let z = gamma.state(i);
        field(z, &mut yb);
        theta(z, &mut th);
        boundary.push(th.iter().zip(&yb).map(|(t, y)| t * y).sum::<f64>());
    }
    for (i, acc) in sums.iter_mut().enumerate() {
        *acc += boundary[i] - boundary[0];
    }
    let _ = k;
    Ok(PathIntegralResult {
        partial_sums: sums,
        rule: IntegralRule::StratonovichMidpoint,
    })
}

/// Finite-difference directional derivative with Richardson extrapolation.
#[derive(Debug, Clone)]
pub struct FdDerivative {
    /// Extrapolated derivative series on the grid.
    pub estimate: PathIntegralResult,
    /// Difference between the extrapolated and the finest raw central
    /// difference (sup over the grid); an error surrogate.
    pub richardson_error: f64,
}

/// Directional derivative of the action as the limit of
/// `(S(φ_s(Γ)) - S(Γ))/s`: central differences over the symmetric pairs
/// `±s`, Richardson-extrapolated from the two smallest values of `s`.
///
/// `flow` evaluates `φ_s` pointwise on states (closed-form flow, or one
/// Euler step in `s`).
pub fn derivative_fd<F>(
    gamma: &Trajectory,
    x: &NoisePath,
    h: &HamiltonianBundle,
    theta: &CovectorField,
    flow: F,
    s_values: &[f64],
) -> Result<FdDerivative>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    check_grids(gamma, x, h)?;
    if s_values.len() < 2 {
        return Err(Error::Precondition(
            "Richardson extrapolation needs at least two s values".into(),
        ));
    }
    let mut ss: Vec<f64> = s_values.to_vec();
    if ss.iter().any(|s| *s <= 0.0) {
        return Err(Error::InvalidParameter("s values must be positive".into()));
    }
    ss.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let n = gamma.dim();
    let n_pts = gamma.len();

    let central = |s: f64| -> Result<Vec<f64>> {
        let mut plus = Vec::with_capacity(n_pts * n);
        let mut minus = Vec::with_capacity(n_pts * n);
        for i in 0..n_pts {
            plus.extend(flow(s, gamma.state(i)));
            minus.extend(flow(-s, gamma.state(i)));
        }
        let sp = action_on_view(PathView::new(n, &plus)?, x, h, theta)?;
        let sm = action_on_view(PathView::new(n, &minus)?, x, h, theta)?;
        Ok(sp
            .partial_sums
            .iter()
            .zip(sm.partial_sums)
            .map(|(p, m)| (p - m) / (2.0 * s))
            .collect())
    };

    let raw: Vec<Vec<f64>> = ss.iter().map(|s| central(*s)).collect::<Result<_>>()?;
    // two smallest s (last two after the descending sort)
    let d_coarse = &raw[raw.len() - 2];
    let d_fine = &raw[raw.len() - 1];
    let ratio = ss[ss.len() - 2] / ss[ss.len() - 1];
    let r2 = ratio * ratio;
    let extrapolated: Vec<f64> = d_fine
        .iter()
        .zip(d_coarse)
        .map(|(f, c)| (r2 * f - c) / (r2 - 1.0))
        .collect();
    let richardson_error = extrapolated
        .iter()
        .zip(d_fine)
        .fold(0.0f64, |m, (e, f)| m.max((e - f).abs()));
    Ok(FdDerivative {
        estimate: PathIntegralResult {
            partial_sums: extrapolated,
            rule: IntegralRule::StratonovichMidpoint,
        },
        richardson_error,
    })
}

/// Derivative of the action under the chart-linear pathwise variation
/// `Σ^s = Γ + sY`.
#[derive(Debug, Clone)]
pub struct PathwiseDerivative {
    /// The closed formula
    /// `∫⟨i_Y dθ, δΓ⟩ - Σ_j ∫ (Y[h_j])(Γ) δX^j + ⟨θ(Γ),Y⟩ - ⟨θ(Γ),Y⟩_{t=0}`.
    pub formula: PathIntegralResult,
    /// Central finite difference `(S(Γ+sY) - S(Γ-sY))/2s`.
    pub fd_check: PathIntegralResult,
}

/// Derivative of the action along a pathwise variation given by a process
/// `Y` over the path.
pub fn pathwise_variation_derivative(
    gamma: &Trajectory,
    x: &NoisePath,
    h: &HamiltonianBundle,
    y: &VariationField,
    theta: &CovectorField,
    fd_s: f64,
) -> Result<PathwiseDerivative> {
    check_grids(gamma, x, h)?;
    if fd_s <= 0.0 {
        return Err(Error::InvalidParameter("fd_s must be positive".into()));
    }
    let n = gamma.dim();
    let k = n / 2;
    let n_pts = gamma.len();

    // Y along the path
    let mut y_vals = vec![0.0; n_pts * n];
    {
        let mut buf = vec![0.0; n];
        for i in 0..n_pts {
            y.eval_into(i, gamma.state(i), &mut buf);
            y_vals[i * n..(i + 1) * n].copy_from_slice(&buf);
        }
    }

    // term 1: ∫⟨i_Y dθ, δΓ⟩ with i_Y dθ = -i_Y ω = (Y_p, -Y_q) on the chart;
    // the covector rides on the path, so integrate the scalar pieces
    let mut sums = vec![0.0; n_pts];
    {
        // Σ_c ∫ (i_Y dθ)_c δΓ^c as midpoint sums with both factors on the grid
        for c in 0..n {
            let covec: Vec<f64> = (0..n_pts)
                .map(|i| {
                    let yv = &y_vals[i * n..(i + 1) * n];
                    if c < k {
                        yv[k + c]
                    } else {
                        -yv[c - k]
                    }
                })
                .collect();
            let comp: Vec<f64> = (0..n_pts).map(|i| gamma.state(i)[c]).collect();
            let part = scalar_strat_integral(&covec, &comp)?;
            for (acc, v) in sums.iter_mut().zip(part.partial_sums) {
                *acc += v;
            }
        }
    }

    // term 2: -Σ_j ∫ Y[h_j](Γ) δX^j
    {
        let mut grad = vec![0.0; n];
        for j in 0..h.len() {
            let hj = h.component(j);
            let series: Vec<f64> = (0..n_pts)
                .map(|i| {
                    let z = gamma.state(i);
                    hj.gradient_into(z, &mut grad);
                    let yv = &y_vals[i * n..(i + 1) * n];
                    grad.iter().zip(yv).map(|(g, y)| g * y).sum::<f64>()
                })
                .collect();
            let part = scalar_strat_integral(&series, x.component_values(j))?;
            for (acc, v) in sums.iter_mut().zip(part.partial_sums) {
                *acc -= v;
            }
        }
    }

    // boundary terms ⟨θ(Γ_t), Y_t⟩ - ⟨θ(Γ_0), Y_0⟩
    {
        let mut th = vec![0.0; n];
        let mut boundary = Vec::with_capacity(n_pts);
        for i in 0..n_pts {
            theta(gamma.state(i), &mut th);
            let yv = &y_vals[i * n..(i + 1) * n];
            boundary.push(th.iter().zip(yv).map(|(t, y)| t * y).sum::<f64>());
        }
        for (i, acc) in sums.iter_mut().enumerate() {
            *acc += boundary[i] - boundary[0];
        }
    }

    // FD cross-check on Σ^s = Γ ± sY
    let displaced = |sign: f64| -> Result<Vec<f64>> {
        let mut data = Vec::with_capacity(n_pts * n);
        for i in 0..n_pts {
            let z = gamma.state(i);
            let yv = &y_vals[i * n..(i + 1) * n];
            for c in 0..n {
                data.push(z[c] + sign * fd_s * yv[c]);
            }
        }
        Ok(data)
    };
    let plus = displaced(1.0)?;
    let minus = displaced(-1.0)?;
    let sp = action_on_view(PathView::new(n, &plus)?, x, h, theta)?;
    let sm = action_on_view(PathView::new(n, &minus)?, x, h, theta)?;
    let fd: Vec<f64> = sp
        .partial_sums
        .iter()
        .zip(sm.partial_sums)
        .map(|(p, m)| (p - m) / (2.0 * fd_s))
        .collect();

    Ok(PathwiseDerivative {
        formula: PathIntegralResult {
            partial_sums: sums,
            rule: IntegralRule::StratonovichMidpoint,
        },
        fd_check: PathIntegralResult {
            partial_sums: fd,
            rule: IntegralRule::StratonovichMidpoint,
        },
    })
}

/// The conserved quantity `i_Yθ` produced by a symmetry `Y` of the action.
pub fn momentum_observable(y: &VariationField, theta: &CovectorField, dim: usize) -> Result<ScalarField> {
    let field = y.phase_space_field()?.clone();
    let theta = theta.clone();
    Ok(ScalarField::from_value_fd(dim, move |z: &[f64]| {
        let mut yb = vec![0.0; z.len()];
        let mut th = vec![0.0; z.len()];
        field(z, &mut yb);
        theta(z, &mut th);
        th.iter().zip(&yb).map(|(t, y)| t * y).sum()
    }))
}

/// Noether check: when `Y` generates a symmetry of the action (surrogate:
/// `Y[h_j] = 0` at probe points for every component), `i_Yθ` must be a
/// conserved quantity. Refuses to run when the invariance surrogate fails.
pub fn noether_check(
    s: &PhaseStructure,
    h: &HamiltonianBundle,
    y: &VariationField,
    theta: &CovectorField,
    e: &Ensemble,
    probes: &[Vec<f64>],
    tolerance: f64,
) -> Result<DiagnosticsReport> {
    let field = y.phase_space_field()?;
    let n = s.dim();
    let mut yb = vec![0.0; n];
    let mut grad = vec![0.0; n];
    for z in probes {
        field(z, &mut yb);
        for hj in h.components() {
            hj.gradient_into(z, &mut grad);
            let yh: f64 = grad.iter().zip(&yb).map(|(g, y)| g * y).sum();
            if yh.abs() > 1e-8 {
                return Err(Error::Precondition(format!(
                    "Y[h] = {yh:.3e} at a probe point; Y is not a symmetry of the action"
                )));
            }
        }
    }
    let observable = momentum_observable(y, theta, n)?;
    let mut rep = strong_conservation_check(&observable, e, tolerance)?;
    rep.name = "noether".into();
    Ok(rep)
}

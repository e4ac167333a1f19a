//! Discretized stochastic line integrals along state paths.
//!
//! The Stratonovich rule is the midpoint (trapezoidal-in-integrand) sum
//! `Σ ½(α(Γ_k) + α(Γ_{k+1})) · (Γ_{k+1} - Γ_k)`; the Itô rule is the
//! left-point sum `Σ α(Γ_k) · (Γ_{k+1} - Γ_k)`. Their difference telescopes
//! to half the realized quadratic covariation of the integrand along the
//! path with the integrator, which is the discrete form of
//! `∫ X δΓ = ∫ X dΓ + ½[X, Γ]`.
//!
//! [`hamilton_residual`] turns the defining integral identity of the
//! stochastic Hamilton equations, `∫⟨α, δΓ⟩ = -∫⟨dh(B♯α)(Γ), δX⟩`, into a
//! grid functional whose partial sums stay near zero exactly when the path
//! solves the equations.

use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::structures::{HamiltonianBundle, PhaseStructure};

/// Which discretization produced a [`PathIntegralResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegralRule {
    StratonovichMidpoint,
    ItoLeftPoint,
}

/// Partial sums of a discretized line integral on the grid, `sums[0] = 0`.
#[derive(Debug, Clone)]
pub struct PathIntegralResult {
    pub partial_sums: Vec<f64>,
    pub rule: IntegralRule,
}

impl PathIntegralResult {
    pub fn final_value(&self) -> f64 {
        *self.partial_sums.last().expect("partial sums never empty")
    }

    /// Sup over the grid of |partial sums|.
    pub fn sup_abs(&self) -> f64 {
        self.partial_sums.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Borrowed state path on a uniform grid, row-major flat storage.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    dim: usize,
    data: &'a [f64],
}

impl<'a> PathView<'a> {
    pub fn new(dim: usize, data: &'a [f64]) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 || data.is_empty() {
            return Err(Error::GridMismatch(
                "flat path storage must be a nonempty multiple of dim".into(),
            ));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn line_integral<F>(alpha: F, gamma: PathView<'_>, rule: IntegralRule) -> Result<PathIntegralResult>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = gamma.len();
    let dim = gamma.dim();
    let mut sums = Vec::with_capacity(n);
    sums.push(0.0);
    let mut acc = 0.0;
    let mut a_here = vec![0.0; dim];
    let mut a_next = vec![0.0; dim];
    alpha(gamma.state(0), &mut a_here);
    for k in 0..n - 1 {
        let z = gamma.state(k);
        let znext = gamma.state(k + 1);
        let term = match rule {
            IntegralRule::StratonovichMidpoint => {
                alpha(znext, &mut a_next);
                let mut t = 0.0;
                for i in 0..dim {
                    t += 0.5 * (a_here[i] + a_next[i]) * (znext[i] - z[i]);
                }
                std::mem::swap(&mut a_here, &mut a_next);
                t
            }
            IntegralRule::ItoLeftPoint => {
                let mut t = 0.0;
                for i in 0..dim {
                    t += a_here[i] * (znext[i] - z[i]);
                }
                alpha(znext, &mut a_here);
                t
            }
        };
        if !term.is_finite() {
            return Err(Error::NonFinite("line integral term"));
        }
        acc += term;
        sums.push(acc);
    }
    Ok(PathIntegralResult {
        partial_sums: sums,
        rule,
    })
}

/// Stratonovich line integral of a covector field along a state path:
/// midpoint sums `Σ ½(α(Γ_k) + α(Γ_{k+1})) · ΔΓ_k`.
pub fn strat_line_integral<F>(alpha: F, gamma: PathView<'_>) -> Result<PathIntegralResult>
where
    F: Fn(&[f64], &mut [f64]),
{
    line_integral(alpha, gamma, IntegralRule::StratonovichMidpoint)
}

/// Itô line integral: left-point sums `Σ α(Γ_k) · ΔΓ_k`.
pub fn ito_line_integral<F>(alpha: F, gamma: PathView<'_>) -> Result<PathIntegralResult>
where
    F: Fn(&[f64], &mut [f64]),
{
    line_integral(alpha, gamma, IntegralRule::ItoLeftPoint)
}

/// Scalar Stratonovich integral `∫ Z δX` on a shared grid:
/// `Σ ½(Z_k + Z_{k+1}) ΔX_k`.
pub fn scalar_strat_integral(z: &[f64], x: &[f64]) -> Result<PathIntegralResult> {
    if z.len() != x.len() {
        return Err(Error::GridMismatch(format!(
            "integrand and integrator lengths differ: {} vs {}",
            z.len(),
            x.len()
        )));
    }
    if z.is_empty() {
        return Err(Error::GridMismatch("empty series".into()));
    }
    let mut sums = Vec::with_capacity(z.len());
    sums.push(0.0);
    let mut acc = 0.0;
    for k in 0..z.len() - 1 {
        acc += 0.5 * (z[k] + z[k + 1]) * (x[k + 1] - x[k]);
        sums.push(acc);
    }
    Ok(PathIntegralResult {
        partial_sums: sums,
        rule: IntegralRule::StratonovichMidpoint,
    })
}

/// Residual of the stochastic Hamilton equations along a path:
/// partial sums of `∫⟨α, δΓ⟩ + Σ_j ∫ ⟨dh_j, B♯α⟩(Γ) δX^j`.
///
/// Near zero (uniformly on the grid, under refinement) iff `gamma` solves
/// `δΓ = Σ_j X_{h_j}(Γ) δX^j` driven by `x`.
pub fn hamilton_residual<F>(
    structure: &PhaseStructure,
    h: &HamiltonianBundle,
    gamma: PathView<'_>,
    x: &NoisePath,
    alpha: F,
) -> Result<PathIntegralResult>
where
    F: Fn(&[f64], &mut [f64]),
{
    if gamma.len() != x.steps() + 1 {
        return Err(Error::GridMismatch(format!(
            "path has {} grid points but driver has {}",
            gamma.len(),
            x.steps() + 1
        )));
    }
    if x.components() != h.len() {
        return Err(Error::DimensionMismatch {
            context: "hamilton_residual driver components",
            expected: h.len(),
            got: x.components(),
        });
    }
    let n_pts = gamma.len();
    let dim = gamma.dim();
    let r = h.len();

    let mut total = strat_line_integral(&alpha, gamma)?.partial_sums;

    // c_j(Γ_k) = ⟨dh_j, B♯α⟩(Γ_k) = ∇h_j(Γ_k) · B(Γ_k) α(Γ_k)
    let mut a_buf = vec![0.0; dim];
    let mut sharp = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut tensor_buf = vec![0.0; if structure.constant_tensor() { 0 } else { dim * dim }];
    let mut coeffs: Vec<Vec<f64>> = vec![Vec::with_capacity(n_pts); r];
    for k in 0..n_pts {
        let z = gamma.state(k);
        alpha(z, &mut a_buf);
        structure.sharp_into(z, &a_buf, &mut tensor_buf, &mut sharp);
        for j in 0..r {
            h.component(j).gradient_into(z, &mut grad);
            let c: f64 = grad.iter().zip(&sharp).map(|(g, s)| g * s).sum();
            coeffs[j].push(c);
        }
    }
    for j in 0..r {
        let part = scalar_strat_integral(&coeffs[j], x.component_values(j))?;
        for (t, p) in total.iter_mut().zip(part.partial_sums) {
            *t += p;
        }
    }
    if total.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hamilton residual"));
    }
    Ok(PathIntegralResult {
        partial_sums: total,
        rule: IntegralRule::StratonovichMidpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_path, DriverSpec};
    use crate::structures::ScalarField;
    use approx::assert_abs_diff_eq;

    fn flat_path(states: &[[f64; 2]]) -> Vec<f64> {
        states.iter().flatten().copied().collect()
    }

    #[test]
    fn constant_form_telescopes_exactly() {
        // α = dq along q_t = t on [0,1]
        let data: Vec<f64> = (0..=10).flat_map(|i| [i as f64 * 0.1, 0.0]).collect();
        let gamma = PathView::new(2, &data).unwrap();
        let res = strat_line_integral(
            |_z, a| {
                a[0] = 1.0;
                a[1] = 0.0;
            },
            gamma,
        )
        .unwrap();
        assert_abs_diff_eq!(res.final_value(), 1.0, epsilon = 1e-15);
        assert_eq!(res.partial_sums[0], 0.0);
    }

    #[test]
    fn exact_form_converges_at_second_order() {
        // α = df for f = q³/3 + q·p along the harmonic orbit (cos t, -sin t);
        // the exact value telescopes to f(Γ_T) - f(Γ_0)
        let f = |q: f64, p: f64| q * q * q / 3.0 + q * p;
        let mut errors = Vec::new();
        for steps in [100usize, 200, 400, 800] {
            let dt = 1.0 / steps as f64;
            let data: Vec<f64> = (0..=steps)
                .flat_map(|i| {
                    let t = i as f64 * dt;
                    [t.cos(), -t.sin()]
                })
                .collect();
            let gamma = PathView::new(2, &data).unwrap();
            let res = strat_line_integral(
                |z, a| {
                    a[0] = z[0] * z[0] + z[1];
                    a[1] = z[0];
                },
                gamma,
            )
            .unwrap();
            let exact = f(1.0f64.cos(), -1.0f64.sin()) - f(1.0, 0.0);
            errors.push((res.final_value() - exact).abs());
        }
        // fitted order from the coarsest/finest pair
        let order = (errors[0] / errors[3]).ln() / 8.0f64.ln();
        assert!(order >= 1.8, "midpoint order {order}, errors {errors:?}");
    }

    #[test]
    fn integration_by_parts_telescopes() {
        // strat(q dp) + strat(p dq) = q_T p_T - q_0 p_0 for any path
        let states = [
            [0.3, -1.0],
            [0.7, 0.2],
            [-0.1, 0.5],
            [2.0, 1.5],
            [0.9, -0.4],
        ];
        let data = flat_path(&states);
        let gamma = PathView::new(2, &data).unwrap();
        let q_dp = strat_line_integral(
            |z, a| {
                a[0] = 0.0;
                a[1] = z[0];
            },
            gamma,
        )
        .unwrap();
        let p_dq = strat_line_integral(
            |z, a| {
                a[0] = z[1];
                a[1] = 0.0;
            },
            gamma,
        )
        .unwrap();
        let boundary = 0.9 * (-0.4) - 0.3 * (-1.0);
        assert_abs_diff_eq!(
            q_dp.final_value() + p_dq.final_value(),
            boundary,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ito_equals_strat_for_constant_integrand() {
        let states = [[0.0, 1.0], [0.5, -0.5], [1.5, 0.25]];
        let data = flat_path(&states);
        let gamma = PathView::new(2, &data).unwrap();
        let alpha = |_z: &[f64], a: &mut [f64]| {
            a[0] = 2.0;
            a[1] = -3.0;
        };
        let s = strat_line_integral(alpha, gamma).unwrap();
        let i = ito_line_integral(alpha, gamma).unwrap();
        assert_eq!(s.partial_sums, i.partial_sums);
    }

    #[test]
    fn strat_minus_ito_is_half_realized_covariation() {
        // α = q dq along a Brownian-driven q path
        let spec = DriverSpec::brownian(1);
        let path = sample_path(&spec, 1.0, 1e-3, 21).unwrap();
        let q = path.component_values(0);
        let data: Vec<f64> = q.iter().flat_map(|qi| [*qi, 0.0]).collect();
        let gamma = PathView::new(2, &data).unwrap();
        let alpha = |z: &[f64], a: &mut [f64]| {
            a[0] = z[0];
            a[1] = 0.0;
        };
        let s = strat_line_integral(alpha, gamma).unwrap();
        let i = ito_line_integral(alpha, gamma).unwrap();
        let qv = crate::noise::realized_covariation(q, q).unwrap();
        for k in 0..q.len() {
            assert_abs_diff_eq!(
                s.partial_sums[k] - i.partial_sums[k],
                0.5 * qv[k],
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn zero_form_gives_zero_series() {
        let states = [[1.0, 2.0], [3.0, 4.0]];
        let data = flat_path(&states);
        let gamma = PathView::new(2, &data).unwrap();
        let res = ito_line_integral(|_z, a| a.fill(0.0), gamma).unwrap();
        assert!(res.partial_sums.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_integral_of_one_recovers_increment() {
        let x = [0.0, 0.4, -0.2, 1.1];
        let z = [1.0; 4];
        let res = scalar_strat_integral(&z, &x).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(res.partial_sums[k], x[k] - x[0], epsilon = 1e-15);
        }
    }

    #[test]
    fn midpoint_squares_brownian_exactly_on_integer_paths() {
        // ∫ B δB = ½B² holds exactly when the arithmetic is exact, e.g. on
        // small integer-valued paths
        let b = [0.0, 1.0, 3.0, 2.0, 6.0];
        let res = scalar_strat_integral(&b, &b).unwrap();
        for k in 0..b.len() {
            assert_eq!(res.partial_sums[k], 0.5 * b[k] * b[k]);
        }
        // and to round-off on a real Brownian path
        let spec = DriverSpec::brownian(1);
        let path = sample_path(&spec, 1.0, 1e-3, 3).unwrap();
        let bb = path.component_values(0);
        let res = scalar_strat_integral(bb, bb).unwrap();
        let bt = bb[bb.len() - 1];
        assert_abs_diff_eq!(res.final_value(), 0.5 * bt * bt, epsilon = 1e-12);
    }

    #[test]
    fn stopped_integral_identity_is_exact_on_grids() {
        // grid analogue of (∫ Z δX)^τ = ∫ Z δX^τ: freezing the integrator
        // path after τ stops the partial sums exactly, for every rule
        let spec = DriverSpec::brownian(1);
        let path = sample_path(&spec, 1.0, 0.01, 8).unwrap();
        let x = path.component_values(0);
        let z: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let tau = 37usize;
        let x_stopped: Vec<f64> = (0..x.len()).map(|i| x[i.min(tau)]).collect();
        let full = scalar_strat_integral(&z, x).unwrap();
        let stopped = scalar_strat_integral(&z, &x_stopped).unwrap();
        for k in 0..x.len() {
            assert_eq!(stopped.partial_sums[k], full.partial_sums[k.min(tau)]);
        }
        // same statement for both line-integral rules on a frozen state path
        let data: Vec<f64> = x.iter().flat_map(|v| [*v, v * v]).collect();
        let data_stopped: Vec<f64> = (0..x.len())
            .flat_map(|i| {
                let v = x[i.min(tau)];
                [v, v * v]
            })
            .collect();
        let alpha = |zz: &[f64], a: &mut [f64]| {
            a[0] = zz[1];
            a[1] = -zz[0];
        };
        let full_s = strat_line_integral(alpha, PathView::new(2, &data).unwrap()).unwrap();
        let stop_s = strat_line_integral(alpha, PathView::new(2, &data_stopped).unwrap()).unwrap();
        let full_i = ito_line_integral(alpha, PathView::new(2, &data).unwrap()).unwrap();
        let stop_i = ito_line_integral(alpha, PathView::new(2, &data_stopped).unwrap()).unwrap();
        for k in 0..x.len() {
            assert_eq!(stop_s.partial_sums[k], full_s.partial_sums[k.min(tau)]);
            assert_eq!(stop_i.partial_sums[k], full_i.partial_sums[k.min(tau)]);
        }
    }

    #[test]
    fn grid_mismatch_errors() {
        assert!(scalar_strat_integral(&[0.0, 1.0], &[0.0]).is_err());
        let data = [1.0, 2.0];
        let gamma = PathView::new(2, &data).unwrap();
        let spec = DriverSpec::brownian(1);
        let path = sample_path(&spec, 1.0, 0.5, 0).unwrap();
        let s = crate::structures::PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::coordinate(2, 1)]).unwrap();
        assert!(hamilton_residual(&s, &h, gamma, &path, |_z, a| a.fill(0.0)).is_err());
    }

    #[test]
    fn non_finite_values_are_structured_errors() {
        let data = [0.0, 0.0, f64::NAN, 0.0];
        let gamma = PathView::new(2, &data).unwrap();
        let res = strat_line_integral(
            |z, a| {
                a[0] = z[0];
                a[1] = z[1];
            },
            gamma,
        );
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }

    #[test]
    fn residual_zero_for_constant_path_with_zero_hamiltonian() {
        let s = crate::structures::PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::constant(2, 0.0)]).unwrap();
        let spec = DriverSpec::brownian(1);
        let x = sample_path(&spec, 1.0, 0.1, 5).unwrap();
        let data: Vec<f64> = (0..=10).flat_map(|_| [0.4, -0.2]).collect();
        let gamma = PathView::new(2, &data).unwrap();
        let res = hamilton_residual(&s, &h, gamma, &x, |_z, a| {
            a[0] = 1.0;
            a[1] = 0.0;
        })
        .unwrap();
        assert!(res.partial_sums.iter().all(|v| *v == 0.0));
    }
}

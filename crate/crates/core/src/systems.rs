//! Catalog of ready-to-run example systems: phase structure, Hamiltonian,
//! driver, parameters, closed-form oracles, and moment ODEs.
//!
//! Hamiltonian entries (canonical or Lie-Poisson) run through the
//! Stratonovich/Itô steppers; `langevin` and the default `inverted_pendulum`
//! are non-Hamiltonian contrast systems run through the generic Itô stepper
//! and excluded from symplectic diagnostics.
//!
//! Every entry documents which of its formulas are structural (the bracket,
//! the Hamiltonian, the driver composition) and which numbers are derived
//! (e.g. the damped-oscillator macroscopic constants `λ = ν²ρ` and
//! `k = ρ(ν⁴ρ/4m + 1)`).

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::integrators::{Dynamics, PathStatus, Trajectory, VectorField};
use crate::montecarlo::{run_ensemble_with, Ensemble, EnsembleSpec, InitialCondition};
use crate::noise::{
    mix_seed, realized_covariation, ComponentSpec, DriverSpec, GaussianStream, NoisePath,
};
use crate::structures::{rigid_body_structure, HamiltonianBundle, PhaseStructure, ScalarField};

type ClosedForm = Arc<dyn Fn(&NoisePath, &[f64]) -> Result<Trajectory> + Send + Sync>;
type NoiseBuilder = Arc<dyn Fn(f64, f64, u64) -> NoisePath + Send + Sync>;

/// A fully wired catalog system.
#[derive(Clone)]
pub struct SystemSpec {
    name: String,
    pub dynamics: Dynamics,
    pub driver: DriverSpec,
    /// Custom driver realization (only the Hamiltonian pendulum variant,
    /// whose forcing is built from an OU velocity process).
    pub noise_builder: Option<NoiseBuilder>,
    pub params: BTreeMap<String, f64>,
    pub default_initial: InitialCondition,
    closed_form: Option<ClosedForm>,
    pub equilibria: Vec<Vec<f64>>,
}

impl std::fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("dynamics", &self.dynamics)
            .field("params", &self.params)
            .finish()
    }
}

impl SystemSpec {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn is_hamiltonian(&self) -> bool {
        self.dynamics.is_hamiltonian()
    }

    pub fn structure(&self) -> Option<&PhaseStructure> {
        match &self.dynamics {
            Dynamics::Hamiltonian { structure, .. } => Some(structure),
            Dynamics::ItoDrift { .. } => None,
        }
    }

    pub fn hamiltonian(&self) -> Option<&HamiltonianBundle> {
        match &self.dynamics {
            Dynamics::Hamiltonian { hamiltonian, .. } => Some(hamiltonian),
            Dynamics::ItoDrift { .. } => None,
        }
    }

    /// Principal scalar observable: the first Hamiltonian component for
    /// Hamiltonian systems, kinetic-style energy for the contrast systems.
    pub fn energy_observable(&self) -> Option<ScalarField> {
        match &self.dynamics {
            Dynamics::Hamiltonian { hamiltonian, .. } => Some(hamiltonian.component(0).clone()),
            Dynamics::ItoDrift { .. } => None,
        }
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form.is_some()
    }

    /// Exact reference trajectory on the grid of `x`.
    pub fn closed_form_reference(&self, x: &NoisePath, z0: &[f64]) -> Result<Trajectory> {
        match &self.closed_form {
            Some(f) => f(x, z0),
            None => Err(Error::NoClosedForm(self.name.clone())),
        }
    }

    /// Run an ensemble of this system.
    pub fn run_ensemble(&self, spec: &EnsembleSpec) -> Result<Ensemble> {
        run_ensemble_with(&self.dynamics, &self.driver, self.noise_builder.clone(), spec)
    }

    pub fn fixed_initial(&self) -> Option<Vec<f64>> {
        match &self.default_initial {
            InitialCondition::Fixed(z) => Some(z.clone()),
            InitialCondition::Sampled(_) => None,
        }
    }
}

/// One parameter of a catalog entry.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ParamSchema {
    pub name: &'static str,
    pub default: f64,
    pub description: &'static str,
}

/// Catalog listing for one system.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub dim: usize,
    pub hamiltonian: bool,
    pub params: Vec<ParamSchema>,
}

/// The available systems, in catalog order.
pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "bismut_diffusion",
            description: "canonical chart with h = (h0, σq) driven by (t, B): a Hamiltonian diffusion perturbing the oscillator",
            dim: 2,
            hamiltonian: true,
            params: vec![
                ParamSchema { name: "m", default: 1.0, description: "mass (> 0)" },
                ParamSchema { name: "rho", default: 1.0, description: "spring constant (> 0)" },
                ParamSchema { name: "sigma", default: 0.25, description: "coupling of the Brownian component" },
            ],
        },
        CatalogEntry {
            name: "damped_oscillator",
            description: "h = p²/2m + ρq²/2 against X = t + νB; the mean obeys a damped oscillator with λ = ν²ρ, k = ρ(ν⁴ρ/4m + 1)",
            dim: 2,
            hamiltonian: true,
            params: vec![
                ParamSchema { name: "m", default: 1.0, description: "mass (> 0)" },
                ParamSchema { name: "rho", default: 1.0, description: "spring constant (> 0)" },
                ParamSchema { name: "nu", default: 0.5, description: "noise intensity in X = t + νB" },
            ],
        },
        CatalogEntry {
            name: "langevin",
            description: "dq = v dt, dv = -λv dt + b dB: non-Hamiltonian contrast system (generic Itô stepper)",
            dim: 2,
            hamiltonian: false,
            params: vec![
                ParamSchema { name: "lambda", default: 1.0, description: "damping coefficient (> 0)" },
                ParamSchema { name: "b", default: 0.5, description: "noise amplitude" },
            ],
        },
        CatalogEntry {
            name: "integrable_torus",
            description: "action-angle chart with h = ω0·I + k·I²/2 against a Brownian driver: I frozen, θ diffuses",
            dim: 2,
            hamiltonian: true,
            params: vec![
                ParamSchema { name: "omega0", default: 1.0, description: "base frequency" },
                ParamSchema { name: "k_nonlin", default: 0.5, description: "anharmonicity dω/dI" },
            ],
        },
        CatalogEntry {
            name: "circle_brownian",
            description: "ambient chart of the circle with h = -(x²+y²)/2 against B: solutions rotate by B_t",
            dim: 2,
            hamiltonian: true,
            params: vec![],
        },
        CatalogEntry {
            name: "parallelizable_bm",
            description: "cotangent chart of the flat 2-torus, h = (0, p1, p2) against (t, B¹, B²): base point is a torus Brownian motion",
            dim: 4,
            hamiltonian: true,
            params: vec![],
        },
        CatalogEntry {
            name: "rigid_body",
            description: "Lie-Poisson so(3)* with kinetic h0 plus two stochastic couplings; Casimir ‖μ‖² marks the leaf",
            dim: 3,
            hamiltonian: true,
            params: vec![
                ParamSchema { name: "i1", default: 1.0, description: "principal inertia 1 (> 0)" },
                ParamSchema { name: "i2", default: 2.0, description: "principal inertia 2 (> 0)" },
                ParamSchema { name: "i3", default: 3.0, description: "principal inertia 3 (> 0)" },
                ParamSchema { name: "sigma", default: 0.3, description: "stochastic coupling strength" },
            ],
        },
        CatalogEntry {
            name: "inverted_pendulum",
            description: "small-angle pendulum with stochastically vibrating pivot; OU forcing folded into the state (generic Itô stepper). Set hamiltonian_form = 1 with lambda = 0 for the Hamiltonian variant driven by (t, [ż,ż], ż)",
            dim: 4,
            hamiltonian: false,
            params: vec![
                ParamSchema { name: "g", default: 9.81, description: "gravity (> 0)" },
                ParamSchema { name: "l", default: 1.0, description: "pendulum length (> 0)" },
                ParamSchema { name: "lambda", default: 0.3, description: "friction coefficient (>= 0)" },
                ParamSchema { name: "epsilon", default: 1.0, description: "√(a/l), vibration amplitude scale" },
                ParamSchema { name: "omega", default: 1.0, description: "vibration frequency scale" },
                ParamSchema { name: "hamiltonian_form", default: 0.0, description: "1 selects the λ=0 Hamiltonian variant" },
            ],
        },
    ]
}

fn entry(name: &str) -> Result<CatalogEntry> {
    catalog()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownSystem(name.to_string()))
}

fn resolve_params(entry: &CatalogEntry, given: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    for key in given.keys() {
        if !entry.params.iter().any(|p| p.name == key) {
            return Err(Error::InvalidParameter(format!(
                "unknown parameter '{key}' for system '{}'",
                entry.name
            )));
        }
    }
    Ok(entry
        .params
        .iter()
        .map(|p| {
            (
                p.name.to_string(),
                given.get(p.name).copied().unwrap_or(p.default),
            )
        })
        .collect())
}

fn require_positive(params: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    let v = params[key];
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{key} must be positive, got {v}")));
    }
    Ok(v)
}

/// Oscillator energy `p²/2m + ρq²/2` as a scalar field.
pub fn oscillator_energy(m: f64, rho: f64) -> ScalarField {
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

/// Macroscopic damping constant of the damped-oscillator mean dynamics.
pub fn damping_lambda(rho: f64, nu: f64) -> f64 {
    nu * nu * rho
}

/// Macroscopic stiffness of the damped-oscillator mean dynamics.
pub fn stiffness_k(m: f64, rho: f64, nu: f64) -> f64 {
    rho * (nu.powi(4) * rho / (4.0 * m) + 1.0)
}

/// Build a catalog system with the given parameter overrides.
pub fn build_system(name: &str, given: &BTreeMap<String, f64>) -> Result<SystemSpec> {
    let ent = entry(name)?;
    let params = resolve_params(&ent, given)?;
    match name {
        "bismut_diffusion" => {
            let m = require_positive(&params, "m")?;
            let rho = require_positive(&params, "rho")?;
            let sigma = params["sigma"];
            let h0 = oscillator_energy(m, rho);
            let h1 = ScalarField::new(
                2,
                move |z: &[f64]| sigma * z[0],
                move |_z: &[f64], g: &mut [f64]| {
                    g[0] = sigma;
                    g[1] = 0.0;
                },
            )
            .with_hessian(|_, h| h.fill(0.0));
            let structure = PhaseStructure::canonical(2)?;
            let hamiltonian = HamiltonianBundle::with_labels(
                vec![h0, h1],
                vec!["dt".into(), "dB1".into()],
            )?;
            let driver = DriverSpec::new(
                vec![ComponentSpec::DeterministicTime, ComponentSpec::Brownian(0)],
                1,
            )?;
            Ok(SystemSpec {
                name: name.into(),
                dynamics: Dynamics::Hamiltonian { structure, hamiltonian },
                driver,
                noise_builder: None,
                params,
                default_initial: InitialCondition::Fixed(vec![1.0, 0.0]),
                closed_form: None,
                equilibria: vec![vec![0.0, 0.0]],
            })
        }
        "damped_oscillator" => {
            let m = require_positive(&params, "m")?;
            let rho = require_positive(&params, "rho")?;
            let nu = params["nu"];
            let structure = PhaseStructure::canonical(2)?;
            let hamiltonian = HamiltonianBundle::new(vec![oscillator_energy(m, rho)])?;
            let driver = if nu == 0.0 {
                // pure time: deterministic harmonic oscillator
                DriverSpec::time_only()
            } else {
                DriverSpec::new(
                    vec![ComponentSpec::Affine {
                        slope: 1.0,
                        loadings: vec![nu],
                    }],
                    1,
                )?
            };
            Ok(SystemSpec {
                name: name.into(),
                dynamics: Dynamics::Hamiltonian { structure, hamiltonian },
                driver,
                noise_builder: None,
                params,
                default_initial: InitialCondition::Fixed(vec![1.0, 0.0]),
                closed_form: None,
                equilibria: vec![vec![0.0, 0.0]],
            })
        }
        "langevin" => {
            let lambda = require_positive(&params, "lambda")?;
            let b = params["b"];
            let drift: VectorField = Arc::new(move |z: &[f64], out: &mut [f64]| {
                out[0] = z[1];
                out[1] = -lambda * z[1];
            });
            let diffusion: VectorField = Arc::new(move |_z: &[f64], out: &mut [f64]| {
                out[0] = 0.0;
                out[1] = b;
            });
            Ok(SystemSpec {
                name: name.into(),
                dynamics: Dynamics::ItoDrift {
                    dim: 2,
                    drift,
                    diffusions: vec![diffusion],
                },
                driver: DriverSpec::brownian(1),
                noise_builder: None,
                params,
                default_initial: InitialCondition::Fixed(vec![0.0, 1.0]),
                closed_form: None,
                equilibria: vec![vec![0.0, 0.0]],
            })
        }
        "integrable_torus" => {
            let omega0 = params["omega0"];
            let k_nl = params["k_nonlin"];
            // chart (θ, I) with {θ, I} = 1; h depends on the action only
            let h = ScalarField::new(
                2,
                move |z: &[f64]| omega0 * z[1] + 0.5 * k_nl * z[1] * z[1],
                move |z: &[f64], g: &mut [f64]| {
                    g[0] = 0.0;
                    g[1] = omega0 + k_nl * z[1];
                },
            )
            .with_hessian(move |_, h| h.copy_from_slice(&[0.0, 0.0, 0.0, k_nl]));
            let structure = PhaseStructure::canonical(2)?;
            let hamiltonian = HamiltonianBundle::new(vec![h])?;
            let closed: ClosedForm = Arc::new(move |x: &NoisePath, z0: &[f64]| {
                let freq = omega0 + k_nl * z0[1];
                let mut data = Vec::with_capacity((x.steps() + 1) * 2);
                for i in 0..=x.steps() {
                    data.push(z0[0] + freq * x.value(0, i));
                    data.push(z0[1]);
                }
                Ok(Trajectory::from_states(
                    x.dt(),
                    2,
                    data,
                    PathStatus::Completed,
                    x.seed(),
                ))
            });
            Ok(SystemSpec {
                name: name.into(),
                dynamics: Dynamics::Hamiltonian { structure, hamiltonian },
                driver: DriverSpec::brownian(1),
                noise_builder: None,
                params,
                default_initial: InitialCondition::Fixed(vec![0.0, 1.0]),
                closed_form: Some(closed),
                equilibria: vec![],
            })
        }
        "circle_brownian" => {
            // ambient chart: h = -(x²+y²)/2 generates the rotation field
            // (-y, x); solutions rotate by B_t, so (1,0) ↦ (cos B, sin B)
            let h = ScalarField::new(
                2,
                |z: &[f64]| -0.5 * (z[0] * z[0] + z[1] * z[1]),
                |z: &[f64], g: &mut [f64]| {
                    g[0] = -z[0];
                    g[1] = -z[1];
                },
            )
            .with_hessian(|_, h| h.copy_from_slice(&[-1.0, 0.0, 0.0, -1.0]));
            let structure = PhaseStructure::canonical(2)?;
            let hamiltonian = HamiltonianBundle::new(vec![h])?;
            let closed: ClosedForm = Arc::new(|x: &NoisePath, z0: &[f64]| {
                let mut data = Vec::with_capacity((x.steps() + 1) * 2);
                for i in 0..=x.steps() {
                    let b = x.value(0, i);
                    let (s, c) = b.sin_cos();
                    data.push(z0[0] * c - z0[1] * s);
                    data.push(z0[0] * s + z0[1] * c);
                }
                Ok(Trajectory::from_states(
                    x.dt(),
                    2,
                    data,
                    PathStatus::Completed,
                    x.seed(),
                ))
            });
            Ok(SystemSpec {
                name: name.into(),
                dynamics: Dynamics::Hamiltonian { structure, hamiltonian },
                driver: DriverSpec::brownian(1),
                noise_builder: None,
                params,
                default_initial: InitialCondition::Fixed(vec![1.0, 0.0]),
                closed_form: Some(closed),
                equilibria: vec![vec![0.0, 0.0]],
            })
        }
        "parallelizable_bm" => {
            // flat 2-torus: coordinate fields are parallel (∇_{Y_j}Y_j = 0),
            // so the connection component h0 vanishes identically
            let h0 = ScalarField::constant(4, 0.0);
            let h1 = ScalarField::coordinate(4, 2);
            let h2 = ScalarField::coordinate(4, 3);
            let structure = PhaseStructure::canonical(4)?;
            let hamiltonian = HamiltonianBundle::with_labels(
                vec![h0, h1, h2],
                vec!["dt".into(), "dB1".into(), "dB2".into()],
            )?;
            let driver = DriverSpec::new(
                vec![
                    ComponentSpec::DeterministicTime,
                    ComponentSpec::Brownian(0),
                    ComponentSpec::Brownian(1),
                ],
                2,
            )?;
            let closed: ClosedForm = Arc::new(|x: &NoisePath, z0: &[f64]| {
                let mut data = Vec::with_capacity((x.steps() + 1) * 4);
                for i in 0..=x.steps() {
                    data.push(z0[0] + x.value(1, i));
                    data.push(z0[1] + x.value(2, i));
                    data.push(z0[2]);
                    data.push(z0[3]);
                }
                Ok(Trajectory::from_states(
                    x.dt(),
                    4,
                    data,
                    PathStatus::Completed,
                    x.seed(),
                ))
            });
            Ok(SystemSpec {
                name: name.into(),
                dynamics: Dynamics::Hamiltonian { structure, hamiltonian },
                driver,
                noise_builder: None,
                params,
                default_initial: InitialCondition::Fixed(vec![0.0, 0.0, 0.3, -0.4]),
                closed_form: Some(closed),
                equilibria: vec![],
            })
        }
        "rigid_body" => {
            let i1 = require_positive(&params, "i1")?;
            let i2 = require_positive(&params, "i2")?;
            let i3 = require_positive(&params, "i3")?;
            let sigma = params["sigma"];
            let h0 = ScalarField::new(
                3,
                move |z: &[f64]| {
                    0.5 * (z[0] * z[0] / i1 + z[1] * z[1] / i2 + z[2] * z[2] / i3)
                },
                move |z: &[f64], g: &mut [f64]| {
                    g[0] = z[0] / i1;
                    g[1] = z[1] / i2;
                    g[2] = z[2] / i3;
                },
            )
            .with_hessian(move |_, h| {
                h.fill(0.0);
                h[0] = 1.0 / i1;
                h[4] = 1.0 / i2;
                h[8] = 1.0 / i3;
            });
            let h1 = ScalarField::new(
                3,
                move |z: &[f64]| sigma * z[0],
                move |_z, g: &mut [f64]| {
                    g.fill(0.0);
                    g[0] = sigma;
                },
            )
            .with_hessian(|_, h| h.fill(0.0));
            let h2 = ScalarField::new(
                3,
                move |z: &[f64]| sigma * z[1],
                move |_z, g: &mut [f64]| {
                    g.fill(0.0);
                    g[1] = sigma;
                },
            )
            .with_hessian(|_, h| h.fill(0.0));
            let structure = rigid_body_structure();
            let hamiltonian = HamiltonianBundle::with_labels(
                vec![h0, h1, h2],
                vec!["dt".into(), "dB1".into(), "dB2".into()],
            )?;
            let driver = DriverSpec::new(
                vec![
                    ComponentSpec::DeterministicTime,
                    ComponentSpec::Brownian(0),
                    ComponentSpec::Brownian(1),
                ],
                2,
            )?;
            Ok(SystemSpec {
                name: name.into(),
                dynamics: Dynamics::Hamiltonian { structure, hamiltonian },
                driver,
                noise_builder: None,
                params,
                default_initial: InitialCondition::Fixed(vec![1.0, 0.5, 0.2]),
                closed_form: None,
                equilibria: vec![
                    vec![1.0, 0.0, 0.0],
                    vec![0.0, 1.0, 0.0],
                    vec![0.0, 0.0, 1.0],
                ],
            })
        }
        "inverted_pendulum" => build_inverted_pendulum(params),
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

/// Inverted pendulum with stochastically vibrating pivot.
///
/// Default form folds the Ornstein-Uhlenbeck forcing construction
/// (`dx = y dt`, `dy = -(x+y)dt + dB`, stationary start `x0, y0 ~ N(0, ½)`)
/// into the state `(φ, φ̇, x, y)` and runs the Itô system
/// `dφ = φ̇ dt`, `dφ̇ = (g/l·φ - λφ̇)dt + ε²ω²φ dy` through the generic
/// stepper.
///
/// With `hamiltonian_form = 1` (requires `λ = 0`) the system becomes the
/// Hamiltonian variant on the `(φ, φ̇)` chart with tensor `B = (1/l²)·J` and
/// components `(½(l²φ̇² - g l φ²), ¼(ε²ω²φl)², -½(εωφl)²)` against the
/// driver `(t, [ż,ż], ż)`, where the quadratic-variation component is
/// realized covariation of the simulated OU velocity (an approximation: the
/// exact increasing process is not available on a grid).
fn build_inverted_pendulum(params: BTreeMap<String, f64>) -> Result<SystemSpec> {
    let g = require_positive(&params, "g")?;
    let l = require_positive(&params, "l")?;
    let lambda = params["lambda"];
    if lambda < 0.0 {
        return Err(Error::InvalidParameter("lambda must be nonnegative".into()));
    }
    let eps = params["epsilon"];
    let omega = params["omega"];
    let forcing = eps * eps * omega * omega;
    let hamiltonian_form = params["hamiltonian_form"] != 0.0;

    if !hamiltonian_form {
        let drift: VectorField = Arc::new(move |z: &[f64], out: &mut [f64]| {
            let (phi, phidot, x, y) = (z[0], z[1], z[2], z[3]);
            out[0] = phidot;
            // dy = -(x+y)dt + dB feeds the forcing term φ dż = φ dy
            out[1] = (g / l) * phi - lambda * phidot - forcing * phi * (x + y);
            out[2] = y;
            out[3] = -(x + y);
        });
        let diffusion: VectorField = Arc::new(move |z: &[f64], out: &mut [f64]| {
            out[0] = 0.0;
            out[1] = forcing * z[0];
            out[2] = 0.0;
            out[3] = 1.0;
        });
        let sampler = Arc::new(move |seed: u64| {
            let mut g = GaussianStream::new(seed);
            let sd = (0.5_f64).sqrt();
            vec![0.05, 0.0, sd * g.next_gaussian(), sd * g.next_gaussian()]
        });
        return Ok(SystemSpec {
            name: "inverted_pendulum".into(),
            dynamics: Dynamics::ItoDrift {
                dim: 4,
                drift,
                diffusions: vec![diffusion],
            },
            driver: DriverSpec::brownian(1),
            noise_builder: None,
            params,
            default_initial: InitialCondition::Sampled(sampler),
            closed_form: None,
            equilibria: vec![vec![0.0, 0.0, 0.0, 0.0]],
        });
    }

    if lambda != 0.0 {
        return Err(Error::InvalidParameter(
            "the Hamiltonian pendulum variant requires lambda = 0".into(),
        ));
    }
    // (φ, φ̇) chart with symplectic form l² dφ∧dφ̇, i.e. B = (1/l²)·J
    let l2 = l * l;
    let structure = PhaseStructure::poisson(2, move |_z: &[f64], out: &mut [f64]| {
        out.copy_from_slice(&[0.0, 1.0 / l2, -1.0 / l2, 0.0]);
    })?;
    let h0 = ScalarField::new(
        2,
        move |z: &[f64]| 0.5 * (l2 * z[1] * z[1] - g * l * z[0] * z[0]),
        move |z: &[f64], out: &mut [f64]| {
            out[0] = -g * l * z[0];
            out[1] = l2 * z[1];
        },
    );
    let c1 = 0.25 * (forcing * l) * (forcing * l);
    let h1 = ScalarField::new(
        2,
        move |z: &[f64]| c1 * z[0] * z[0],
        move |z: &[f64], out: &mut [f64]| {
            out[0] = 2.0 * c1 * z[0];
            out[1] = 0.0;
        },
    );
    let c2 = -0.5 * (eps * omega * l) * (eps * omega * l);
    let h2 = ScalarField::new(
        2,
        move |z: &[f64]| c2 * z[0] * z[0],
        move |z: &[f64], out: &mut [f64]| {
            out[0] = 2.0 * c2 * z[0];
            out[1] = 0.0;
        },
    );
    let hamiltonian = HamiltonianBundle::with_labels(
        vec![h0, h1, h2],
        vec!["dt".into(), "d[zdot,zdot]".into(), "dzdot".into()],
    )?;
    // declared component layout (t, [ż,ż], ż); sampled by the builder below
    let driver = DriverSpec::new(
        vec![
            ComponentSpec::DeterministicTime,
            ComponentSpec::DeterministicTime,
            ComponentSpec::Brownian(0),
        ],
        1,
    )?;
    let builder: NoiseBuilder = Arc::new(move |t_final: f64, dt: f64, seed: u64| {
        ou_forcing_path(t_final, dt, seed)
    });
    Ok(SystemSpec {
        name: "inverted_pendulum".into(),
        dynamics: Dynamics::Hamiltonian { structure, hamiltonian },
        driver,
        noise_builder: Some(builder),
        params,
        default_initial: InitialCondition::Fixed(vec![0.05, 0.0]),
        closed_form: None,
        equilibria: vec![vec![0.0, 0.0]],
    })
}

/// Driver realization `(t, [ż,ż]-proxy, ż)` for the Hamiltonian pendulum:
/// `ż = y` from the OU pair `dx = y dt`, `dy = -(x+y)dt + dB` started
/// stationary, with the quadratic-variation component realized from the
/// simulated increments.
fn ou_forcing_path(t_final: f64, dt: f64, seed: u64) -> NoisePath {
    let n = (t_final / dt).round() as usize;
    let mut stream = GaussianStream::new(seed);
    let sd0 = (0.5_f64).sqrt();
    let mut x = sd0 * stream.next_gaussian();
    let mut y = sd0 * stream.next_gaussian();
    let sqrt_dt = dt.sqrt();
    let mut y_series = Vec::with_capacity(n + 1);
    y_series.push(y);
    for _ in 0..n {
        let db = sqrt_dt * stream.next_gaussian();
        let xn = x + y * dt;
        let yn = y - (x + y) * dt + db;
        x = xn;
        y = yn;
        y_series.push(y);
    }
    let qv = realized_covariation(&y_series, &y_series).expect("equal grids");
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    let time_inc: Vec<f64> = (0..n).map(|i| times[i + 1] - times[i]).collect();
    let qv_inc: Vec<f64> = (0..n).map(|i| qv[i + 1] - qv[i]).collect();
    let y_inc: Vec<f64> = (0..n).map(|i| y_series[i + 1] - y_series[i]).collect();
    // QV rates: only ż carries a martingale part, d[ż,ż] = dt
    let mut kappa = nalgebra::DMatrix::zeros(3, 3);
    kappa[(2, 2)] = 1.0;
    NoisePath::from_increments(dt, vec![time_inc, qv_inc, y_inc], kappa, seed)
        .expect("consistent increments")
}

/// Mean velocity of the Langevin system, `E[v_t] = v0·exp(-λt)`.
pub fn langevin_mean_velocity(lambda: f64, v0: f64, t: f64) -> f64 {
    v0 * (-lambda * t).exp()
}

/// RK4 solution of the damped-oscillator moment ODE
/// `q̇ = p/m - (ν²ρ/2m)q`, `ṗ = -(ν²ρ/2m)p - ρq`, with consistency
/// residuals against the second-order form
/// `m q̈ = -λ q̇ - k q`, `λ = ν²ρ`, `k = ρ(ν⁴ρ/4m + 1)`.
#[derive(Debug, Clone)]
pub struct MomentOde {
    pub times: Vec<f64>,
    pub q_mean: Vec<f64>,
    pub p_mean: Vec<f64>,
    /// Max residual of the second-order form with derivatives substituted
    /// from the first-order system (algebraic identity check).
    pub eq_second_order_residual: f64,
    /// Max residual with derivatives from central finite differences of the
    /// series (independent of the first-order form).
    pub eq_second_order_residual_fd: f64,
}

pub fn oscillator_moment_ode(
    m: f64,
    rho: f64,
    nu: f64,
    z0: (f64, f64),
    t_final: f64,
    dt_ode: f64,
) -> Result<MomentOde> {
    if m <= 0.0 || rho <= 0.0 {
        return Err(Error::InvalidParameter("m and rho must be positive".into()));
    }
    if dt_ode <= 0.0 || t_final <= 0.0 {
        return Err(Error::InvalidParameter("t_final and dt_ode must be positive".into()));
    }
    let c = nu * nu * rho / (2.0 * m);
    let f = move |q: f64, p: f64| -> (f64, f64) { (p / m - c * q, -c * p - rho * q) };
    let n = (t_final / dt_ode).round() as usize;
    let mut q = z0.0;
    let mut p = z0.1;
    let mut times = Vec::with_capacity(n + 1);
    let mut qs = Vec::with_capacity(n + 1);
    let mut ps = Vec::with_capacity(n + 1);
    times.push(0.0);
    qs.push(q);
    ps.push(p);
    for i in 0..n {
        let h = dt_ode;
        let (k1q, k1p) = f(q, p);
        let (k2q, k2p) = f(q + 0.5 * h * k1q, p + 0.5 * h * k1p);
        let (k3q, k3p) = f(q + 0.5 * h * k2q, p + 0.5 * h * k2p);
        let (k4q, k4p) = f(q + h * k3q, p + h * k3p);
        q += h * (k1q + 2.0 * k2q + 2.0 * k3q + k4q) / 6.0;
        p += h * (k1p + 2.0 * k2p + 2.0 * k3p + k4p) / 6.0;
        times.push((i + 1) as f64 * dt_ode);
        qs.push(q);
        ps.push(p);
    }

    let lambda = damping_lambda(rho, nu);
    let k = stiffness_k(m, rho, nu);
    // algebraic residual: substitute q̇, ṗ from the first-order system
    let mut res_alg = 0.0f64;
    for i in 0..qs.len() {
        let (qd, pd) = f(qs[i], ps[i]);
        let qdd = pd / m - c * qd;
        res_alg = res_alg.max((m * qdd + lambda * qd + k * qs[i]).abs());
    }
    // finite-difference residual on interior grid points
    let mut res_fd = 0.0f64;
    for i in 1..qs.len() - 1 {
        let qd = (qs[i + 1] - qs[i - 1]) / (2.0 * dt_ode);
        let qdd = (qs[i + 1] - 2.0 * qs[i] + qs[i - 1]) / (dt_ode * dt_ode);
        res_fd = res_fd.max((m * qdd + lambda * qd + k * qs[i]).abs());
    }
    Ok(MomentOde {
        times,
        q_mean: qs,
        p_mean: ps,
        eq_second_order_residual: res_alg,
        eq_second_order_residual_fd: res_fd,
    })
}

/// Deterministic sampler for per-path initial OU states (used in tests).
pub fn stationary_ou_initial(seed: u64, base: (f64, f64)) -> Vec<f64> {
    let mut g = GaussianStream::new(mix_seed(seed, 0xA11CE));
    let sd = (0.5_f64).sqrt();
    vec![base.0, base.1, sd * g.next_gaussian(), sd * g.next_gaussian()]
}

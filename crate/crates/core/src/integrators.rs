//! One-step schemes and full-path simulation for
//! `δΓ = Σ_j X_{h_j}(Γ) δX^j`, plus the tangent (variational) flow.
//!
//! Two schemes are provided. `StratonovichHeun` is the predictor-corrector
//! `z* = z + H(z)ΔX`, `z' = z + ½(H(z) + H(z*))ΔX`, the minimal scheme
//! consistent with Stratonovich calculus. `ItoEulerCorrected` is the
//! explicit Euler step on the equivalent Itô form,
//! `z' = z + Σ_j X_{h_j}(z)ΔX^j + ½ Σ_{i,j} (DX_{h_j}(z)·X_{h_i}(z)) κ^{ij} dt`,
//! with the drift correction coming from the deterministic quadratic
//! covariation of the driver. For deterministic drivers both reduce to
//! classical explicit schemes (Heun/trapezoidal and Euler).
//!
//! Jacobians of Hamiltonian vector fields use analytic Hessians when the
//! tensor is constant (`DX_h = B·Hess h`); otherwise they fall back to
//! central differences of the assembled field with step
//! `fd_step` (default `1e-5·(1+|z|)`).
//!
//! Non-Hamiltonian contrast systems are run through a plain Euler-Maruyama
//! stepper on `dz = a(z)dt + Σ_c b_c(z)dW^c` ([`Dynamics::ItoDrift`]); the
//! configured scheme is ignored for those.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::calculus::PathView;
use crate::error::{Error, Result};
use crate::noise::{self, NoisePath};
use crate::structures::{default_fd_step, HamiltonianBundle, PhaseStructure, StructureKind};

/// Integration scheme for Hamiltonian dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    StratonovichHeun,
    ItoEulerCorrected,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::StratonovichHeun => "stratonovich_heun",
            Scheme::ItoEulerCorrected => "ito_euler_corrected",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stratonovich_heun" => Ok(Scheme::StratonovichHeun),
            "ito_euler_corrected" => Ok(Scheme::ItoEulerCorrected),
            other => Err(Error::InvalidParameter(format!(
                "unknown scheme '{other}'; valid schemes: stratonovich_heun, ito_euler_corrected"
            ))),
        }
    }
}

/// Configuration for [`simulate`] and [`tangent_flow`].
#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    /// Step for finite-difference vector-field Jacobians. `None` selects the
    /// adaptive default `1e-5·(1+|z|)`; an explicit non-positive value is a
    /// configuration error where a Jacobian is required.
    pub fd_step: Option<f64>,
    pub max_steps: usize,
    /// State norm beyond which a path is marked exploded.
    pub blowup_threshold: f64,
}

impl IntegratorConfig {
    pub fn new(scheme: Scheme, dt: f64) -> Self {
        Self {
            scheme,
            dt,
            fd_step: None,
            max_steps: noise::MAX_STEPS,
            blowup_threshold: 1e8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter("config dt must be positive".into()));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::InvalidParameter(
                "blowup threshold must be positive".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        Ok(())
    }

    fn fd_step_at(&self, z: &[f64]) -> f64 {
        match self.fd_step {
            Some(s) => s,
            None => default_fd_step(z),
        }
    }
}

/// Terminal status of a simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStatus {
    /// Ran to the end of the driver grid.
    Completed,
    /// Left the stop region; the index is the first grid index outside.
    Exited(usize),
    /// Norm exceeded the blowup threshold (or became non-finite) at the
    /// given grid index.
    Exploded(usize),
}

impl PathStatus {
    pub fn label(&self) -> &'static str {
        match self {
            PathStatus::Completed => "completed",
            PathStatus::Exited(_) => "exited",
            PathStatus::Exploded(_) => "exploded",
        }
    }
}

/// A simulated state path on the driver grid. States are stored flat
/// (row-major); no states are recorded after a terminal status.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dt: f64,
    dim: usize,
    states: Vec<f64>,
    status: PathStatus,
    noise_seed: u64,
}

impl Trajectory {
    pub fn from_states(dt: f64, dim: usize, states: Vec<f64>, status: PathStatus, noise_seed: u64) -> Self {
        assert!(dim > 0 && states.len() % dim == 0 && !states.is_empty());
        Self {
            dt,
            dim,
            states,
            status,
            noise_seed,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of recorded grid points.
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn status(&self) -> PathStatus {
        self.status
    }

    /// Identity of the driver realization this path was produced from.
    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn view(&self) -> PathView<'_> {
        PathView::new(self.dim, &self.states).expect("trajectory storage is consistent")
    }

    /// Export as CSV with columns `t, z1..zn, status` (status written on the
    /// final row only).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("z{i}")));
        header.push("status".into());
        wtr.write_record(&header)?;
        let n = self.len();
        for i in 0..n {
            let mut rec = vec![format!("{}", self.time(i))];
            for v in self.state(i) {
                rec.push(format!("{v}"));
            }
            rec.push(if i + 1 == n {
                self.status.label().to_string()
            } else {
                String::new()
            });
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Vector field writing its value into a caller buffer.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Right-hand side of a simulation: either a stochastic Hamiltonian system
/// or a generic Itô drift-diffusion (for the non-Hamiltonian contrast
/// systems).
#[derive(Clone)]
pub enum Dynamics {
    Hamiltonian {
        structure: PhaseStructure,
        hamiltonian: HamiltonianBundle,
    },
    ItoDrift {
        dim: usize,
        drift: VectorField,
        /// One diffusion field per driver component.
        diffusions: Vec<VectorField>,
    },
}

impl std::fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dynamics::Hamiltonian { structure, hamiltonian } => f
                .debug_struct("Dynamics::Hamiltonian")
                .field("structure", structure)
                .field("components", &hamiltonian.len())
                .finish(),
            Dynamics::ItoDrift { dim, diffusions, .. } => f
                .debug_struct("Dynamics::ItoDrift")
                .field("dim", dim)
                .field("diffusions", &diffusions.len())
                .finish(),
        }
    }
}

impl Dynamics {
    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Hamiltonian { structure, .. } => structure.dim(),
            Dynamics::ItoDrift { dim, .. } => *dim,
        }
    }

    pub fn is_hamiltonian(&self) -> bool {
        matches!(self, Dynamics::Hamiltonian { .. })
    }

    /// Number of driver components the dynamics contract against.
    pub fn driver_components(&self) -> usize {
        match self {
            Dynamics::Hamiltonian { hamiltonian, .. } => hamiltonian.len(),
            Dynamics::ItoDrift { diffusions, .. } => diffusions.len(),
        }
    }
}

/// Scratch buffers for the allocation-free stepping loop.
struct Scratch {
    grad: Vec<f64>,
    field: Vec<f64>,
    v1: Vec<f64>,
    v2: Vec<f64>,
    zstar: Vec<f64>,
    tensor: Vec<f64>,
    dx: Vec<f64>,
    fields: Vec<f64>, // r × n, Itô scheme
    jac: Vec<f64>,    // n × n
    hess: Vec<f64>,   // n × n
    w: Vec<f64>,
    zp: Vec<f64>,
    fp: Vec<f64>,
    fm: Vec<f64>,
}

impl Scratch {
    fn new(n: usize, r: usize, constant_tensor: bool) -> Self {
        Self {
            grad: vec![0.0; n],
            field: vec![0.0; n],
            v1: vec![0.0; n],
            v2: vec![0.0; n],
            zstar: vec![0.0; n],
            tensor: vec![0.0; if constant_tensor { 0 } else { n * n }],
            dx: vec![0.0; r],
            fields: vec![0.0; r * n],
            jac: vec![0.0; n * n],
            hess: vec![0.0; n * n],
            w: vec![0.0; n],
            zp: vec![0.0; n],
            fp: vec![0.0; n],
            fm: vec![0.0; n],
        }
    }
}

/// `out = Σ_j dx_j X_{h_j}(z)`
fn strat_drift_into(
    s: &PhaseStructure,
    h: &HamiltonianBundle,
    z: &[f64],
    dx: &[f64],
    sc: &mut Scratch,
    out: &mut [f64],
) {
    out.fill(0.0);
    for (j, hj) in h.components().iter().enumerate() {
        if dx[j] == 0.0 {
            continue;
        }
        hj.gradient_into(z, &mut sc.grad);
        s.sharp_into(z, &sc.grad, &mut sc.tensor, &mut sc.field);
        for i in 0..out.len() {
            out[i] += dx[j] * sc.field[i];
        }
    }
}

/// Jacobian of `X_{h_j}` at `z`, row-major into `sc.jac`.
///
/// Analytic path `B·Hess h_j` for constant tensors with supplied Hessians,
/// central differences of the assembled field otherwise.
fn field_jacobian_into(
    s: &PhaseStructure,
    hj: &crate::structures::ScalarField,
    z: &[f64],
    fd_step: f64,
    sc_zp: &mut [f64],
    sc_grad: &mut [f64],
    sc_tensor: &mut [f64],
    sc_fp: &mut [f64],
    sc_fm: &mut [f64],
    sc_hess: &mut [f64],
    jac: &mut [f64],
) -> Result<()> {
    let n = z.len();
    if s.kind() == StructureKind::CanonicalSymplectic && hj.has_hessian() {
        let hess = hj.hessian(z, None);
        let k = n / 2;
        for l in 0..n {
            for c in 0..n {
                // (B·H) row l: rows swap with sign
                jac[l * n + c] = if l < k {
                    hess[(k + l, c)]
                } else {
                    -hess[(l - k, c)]
                };
            }
        }
        let _ = sc_hess;
        return Ok(());
    }
    if fd_step <= 0.0 {
        return Err(Error::Precondition(
            "vector-field Jacobian needs an analytic Hessian or a positive fd_step".into(),
        ));
    }
    sc_zp.copy_from_slice(z);
    for c in 0..n {
        sc_zp[c] = z[c] + fd_step;
        hj.gradient_into(sc_zp, sc_grad);
        s.sharp_into(sc_zp, sc_grad, sc_tensor, sc_fp);
        sc_zp[c] = z[c] - fd_step;
        hj.gradient_into(sc_zp, sc_grad);
        s.sharp_into(sc_zp, sc_grad, sc_tensor, sc_fm);
        sc_zp[c] = z[c];
        for l in 0..n {
            jac[l * n + c] = (sc_fp[l] - sc_fm[l]) / (2.0 * fd_step);
        }
    }
    Ok(())
}

fn heun_step_into(
    s: &PhaseStructure,
    h: &HamiltonianBundle,
    z: &[f64],
    dx: &[f64],
    sc: &mut Scratch,
    out: &mut [f64],
) {
    let n = z.len();
    // buffers move out of the scratch while it is borrowed for field evals
    let mut v1 = std::mem::take(&mut sc.v1);
    let mut v2 = std::mem::take(&mut sc.v2);
    let mut zstar = std::mem::take(&mut sc.zstar);
    strat_drift_into(s, h, z, dx, sc, &mut v1);
    for i in 0..n {
        zstar[i] = z[i] + v1[i];
    }
    strat_drift_into(s, h, &zstar, dx, sc, &mut v2);
    for i in 0..n {
        out[i] = z[i] + 0.5 * (v1[i] + v2[i]);
    }
    sc.v1 = v1;
    sc.v2 = v2;
    sc.zstar = zstar;
}

fn ito_step_into(
    s: &PhaseStructure,
    h: &HamiltonianBundle,
    z: &[f64],
    dx: &[f64],
    qv_dt: &DMatrix<f64>, // κ^{ij}·dt
    fd_step: f64,
    sc: &mut Scratch,
    out: &mut [f64],
) -> Result<()> {
    let n = z.len();
    let r = h.len();
    // all fields X_{h_i}(z)
    for (i, hi) in h.components().iter().enumerate() {
        hi.gradient_into(z, &mut sc.grad);
        s.sharp_into(z, &sc.grad, &mut sc.tensor, &mut sc.field);
        sc.fields[i * n..(i + 1) * n].copy_from_slice(&sc.field);
    }
    for i in 0..n {
        out[i] = z[i];
    }
    for j in 0..r {
        for i in 0..n {
            out[i] += dx[j] * sc.fields[j * n + i];
        }
    }
    // ½ Σ_j DX_{h_j}(z) · (Σ_i κ^{ij} dt X_{h_i}(z))
    for j in 0..r {
        sc.w.fill(0.0);
        let mut any = false;
        for i in 0..r {
            let kij = qv_dt[(i, j)];
            if kij != 0.0 {
                any = true;
                for l in 0..n {
                    sc.w[l] += kij * sc.fields[i * n + l];
                }
            }
        }
        if !any {
            continue;
        }
        field_jacobian_into(
            s,
            h.component(j),
            z,
            fd_step,
            &mut sc.zp,
            &mut sc.grad,
            &mut sc.tensor,
            &mut sc.fp,
            &mut sc.fm,
            &mut sc.hess,
            &mut sc.jac,
        )?;
        for l in 0..n {
            let mut acc = 0.0;
            for c in 0..n {
                acc += sc.jac[l * n + c] * sc.w[c];
            }
            out[l] += 0.5 * acc;
        }
    }
    Ok(())
}

fn check_step_inputs(
    s: &PhaseStructure,
    h: &HamiltonianBundle,
    z: &[f64],
    dx: &[f64],
) -> Result<()> {
    if z.len() != s.dim() {
        return Err(Error::DimensionMismatch {
            context: "step state",
            expected: s.dim(),
            got: z.len(),
        });
    }
    if h.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            context: "step hamiltonian",
            expected: s.dim(),
            got: h.dim(),
        });
    }
    if dx.len() != h.len() {
        return Err(Error::DimensionMismatch {
            context: "step driver increment",
            expected: h.len(),
            got: dx.len(),
        });
    }
    if !z.iter().chain(dx).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("step input"));
    }
    Ok(())
}

/// One Heun (Stratonovich predictor-corrector) step.
pub fn step_heun(
    s: &PhaseStructure,
    h: &HamiltonianBundle,
    z: &[f64],
    dx: &[f64],
) -> Result<Vec<f64>> {
    check_step_inputs(s, h, z, dx)?;
    let mut sc = Scratch::new(s.dim(), h.len(), s.constant_tensor());
    let mut out = vec![0.0; s.dim()];
    heun_step_into(s, h, z, dx, &mut sc, &mut out);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("heun step output"));
    }
    Ok(out)
}

/// One Itô-corrected Euler step; `dqv` is the step quadratic covariation
/// `κ·dt`.
pub fn step_ito(
    s: &PhaseStructure,
    h: &HamiltonianBundle,
    z: &[f64],
    dx: &[f64],
    dqv: &DMatrix<f64>,
    fd_step: Option<f64>,
) -> Result<Vec<f64>> {
    check_step_inputs(s, h, z, dx)?;
    if dqv.nrows() != h.len() || dqv.ncols() != h.len() {
        return Err(Error::DimensionMismatch {
            context: "step qv matrix",
            expected: h.len(),
            got: dqv.nrows(),
        });
    }
    let step = fd_step.unwrap_or_else(|| default_fd_step(z));
    let mut sc = Scratch::new(s.dim(), h.len(), s.constant_tensor());
    let mut out = vec![0.0; s.dim()];
    ito_step_into(s, h, z, dx, dqv, step, &mut sc, &mut out)?;
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("ito step output"));
    }
    Ok(out)
}

/// Region predicate for first-exit detection: `true` means inside.
pub type RegionPredicate<'a> = dyn Fn(&[f64]) -> bool + 'a;

/// Simulate a full path over the increments of `x`.
///
/// Exit detection is grid-resolution only: the first grid index whose state
/// lies outside `stop_region` is recorded (state retained), biasing exit
/// times by O(dt). States past `blowup_threshold` (or non-finite updates)
/// mark the path exploded.
pub fn simulate(
    dynamics: &Dynamics,
    z0: &[f64],
    x: &NoisePath,
    cfg: &IntegratorConfig,
    stop_region: Option<&RegionPredicate<'_>>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = dynamics.dim();
    if z0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "simulate initial condition",
            expected: n,
            got: z0.len(),
        });
    }
    if !z0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("simulate initial condition"));
    }
    if x.components() != dynamics.driver_components() {
        return Err(Error::DimensionMismatch {
            context: "simulate driver components",
            expected: dynamics.driver_components(),
            got: x.components(),
        });
    }
    let rel = ((cfg.dt - x.dt()) / x.dt()).abs();
    if rel > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "config dt {} does not match driver dt {}",
            cfg.dt,
            x.dt()
        )));
    }
    let steps = x.steps();
    if steps > cfg.max_steps {
        return Err(Error::InvalidParameter(format!(
            "driver has {steps} steps, config allows {}",
            cfg.max_steps
        )));
    }

    let r = x.components();
    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(z0);
    let mut status = PathStatus::Completed;
    if let Some(region) = stop_region {
        if !region(z0) {
            return Ok(Trajectory::from_states(
                x.dt(),
                n,
                states,
                PathStatus::Exited(0),
                x.seed(),
            ));
        }
    }

    let mut z = z0.to_vec();
    let mut znew = vec![0.0; n];
    match dynamics {
        Dynamics::Hamiltonian { structure, hamiltonian } => {
            let mut sc = Scratch::new(n, r, structure.constant_tensor());
            let qv_dt = x.qv_rates() * x.dt();
            for k in 0..steps {
                for j in 0..r {
                    sc.dx[j] = x.increment(j, k);
                }
                let dx = std::mem::take(&mut sc.dx);
                match cfg.scheme {
                    Scheme::StratonovichHeun => {
                        heun_step_into(structure, hamiltonian, &z, &dx, &mut sc, &mut znew);
                    }
                    Scheme::ItoEulerCorrected => {
                        let fd = cfg.fd_step_at(&z);
                        ito_step_into(
                            structure,
                            hamiltonian,
                            &z,
                            &dx,
                            &qv_dt,
                            fd,
                            &mut sc,
                            &mut znew,
                        )?;
                    }
                }
                sc.dx = dx;
                match advance(&mut states, &mut z, &znew, k, cfg.blowup_threshold, stop_region) {
                    StepOutcome::Continue => {}
                    StepOutcome::Stop(st) => {
                        status = st;
                        break;
                    }
                }
            }
        }
        Dynamics::ItoDrift { drift, diffusions, .. } => {
            let dt = x.dt();
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n];
            for k in 0..steps {
                drift(&z, &mut a);
                for i in 0..n {
                    znew[i] = z[i] + a[i] * dt;
                }
                for (c, diff) in diffusions.iter().enumerate() {
                    let dw = x.increment(c, k);
                    if dw == 0.0 {
                        continue;
                    }
                    diff(&z, &mut b);
                    for i in 0..n {
                        znew[i] += b[i] * dw;
                    }
                }
                match advance(&mut states, &mut z, &znew, k, cfg.blowup_threshold, stop_region) {
                    StepOutcome::Continue => {}
                    StepOutcome::Stop(st) => {
                        status = st;
                        break;
                    }
                }
            }
        }
    }
    Ok(Trajectory::from_states(x.dt(), n, states, status, x.seed()))
}

enum StepOutcome {
    Continue,
    Stop(PathStatus),
}

fn advance(
    states: &mut Vec<f64>,
    z: &mut [f64],
    znew: &[f64],
    k: usize,
    blowup: f64,
    stop_region: Option<&RegionPredicate<'_>>,
) -> StepOutcome {
    let idx = k + 1;
    if !znew.iter().all(|v| v.is_finite()) {
        return StepOutcome::Stop(PathStatus::Exploded(idx));
    }
    let norm = znew.iter().map(|v| v * v).sum::<f64>().sqrt();
    states.extend_from_slice(znew);
    z.copy_from_slice(znew);
    if norm > blowup {
        return StepOutcome::Stop(PathStatus::Exploded(idx));
    }
    if let Some(region) = stop_region {
        if !region(znew) {
            return StepOutcome::Stop(PathStatus::Exited(idx));
        }
    }
    StepOutcome::Continue
}

/// Tangent (variational) flow along a completed trajectory: `J_0 = I` and
/// `J` advanced with the Heun staging linearized around the state path,
/// `J* = J + A(z)J`, `J' = J + ½(A(z)J + A(z*)J*)` with
/// `A(z) = Σ_j DX_{h_j}(z) ΔX^j`. This is the exact differential of the
/// discrete Heun map, so symplecticity defects of `J` measure the scheme,
/// not the linearization.
pub fn tangent_flow(
    s: &PhaseStructure,
    h: &HamiltonianBundle,
    traj: &Trajectory,
    x: &NoisePath,
    cfg: &IntegratorConfig,
) -> Result<Vec<DMatrix<f64>>> {
    cfg.validate()?;
    if traj.status() != PathStatus::Completed {
        return Err(Error::Precondition(
            "tangent flow needs a completed trajectory".into(),
        ));
    }
    if traj.len() != x.steps() + 1 {
        return Err(Error::GridMismatch(
            "trajectory and driver grids differ".into(),
        ));
    }
    if traj.noise_seed() != x.seed() {
        return Err(Error::Precondition(
            "trajectory was not produced from this driver realization".into(),
        ));
    }
    let n = s.dim();
    let r = h.len();
    let mut sc = Scratch::new(n, r, s.constant_tensor());
    let mut js = Vec::with_capacity(traj.len());
    js.push(DMatrix::identity(n, n));
    let mut jac = vec![0.0; n * n];
    let mut a_here = DMatrix::zeros(n, n);
    let mut a_star = DMatrix::zeros(n, n);

    let mut assemble_a = |z: &[f64], dx: &[f64], out: &mut DMatrix<f64>, sc: &mut Scratch| -> Result<()> {
        out.fill(0.0);
        let fd = cfg.fd_step_at(z);
        for j in 0..r {
            if dx[j] == 0.0 {
                continue;
            }
            field_jacobian_into(
                s,
                h.component(j),
                z,
                fd,
                &mut sc.zp,
                &mut sc.grad,
                &mut sc.tensor,
                &mut sc.fp,
                &mut sc.fm,
                &mut sc.hess,
                &mut jac,
            )?;
            for l in 0..n {
                for c in 0..n {
                    out[(l, c)] += dx[j] * jac[l * n + c];
                }
            }
        }
        Ok(())
    };

    for k in 0..x.steps() {
        let z = traj.state(k);
        for j in 0..r {
            sc.dx[j] = x.increment(j, k);
        }
        let dx = std::mem::take(&mut sc.dx);
        // predictor state, same staging as the Heun state update
        let mut v1 = std::mem::take(&mut sc.v1);
        let mut zstar = std::mem::take(&mut sc.zstar);
        strat_drift_into(s, h, z, &dx, &mut sc, &mut v1);
        for i in 0..n {
            zstar[i] = z[i] + v1[i];
        }
        assemble_a(z, &dx, &mut a_here, &mut sc)?;
        assemble_a(&zstar, &dx, &mut a_star, &mut sc)?;
        sc.v1 = v1;
        sc.zstar = zstar;
        sc.dx = dx;
        let j_prev = js.last().expect("nonempty");
        let aj = &a_here * j_prev;
        let j_star = j_prev + &aj;
        let j_next = j_prev + 0.5 * (aj + &a_star * j_star);
        js.push(j_next);
    }
    Ok(js)
}

/// Canonical symplectic form matrix `[[0, I], [-I, 0]]` of dimension `2k`.
pub fn canonical_omega(dim: usize) -> DMatrix<f64> {
    assert!(dim % 2 == 0, "canonical form needs even dimension");
    let k = dim / 2;
    let mut omega = DMatrix::zeros(dim, dim);
    for i in 0..k {
        omega[(i, k + i)] = 1.0;
        omega[(k + i, i)] = -1.0;
    }
    omega
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_path, ComponentSpec, DriverSpec};
    use crate::structures::ScalarField;
    use approx::assert_abs_diff_eq;

    fn oscillator() -> (PhaseStructure, HamiltonianBundle) {
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
        (s, HamiltonianBundle::new(vec![h]).unwrap())
    }

    #[test]
    fn heun_zero_hamiltonian_is_identity() {
        let s = PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::constant(2, 0.0)]).unwrap();
        let z = [0.3, -0.8];
        let out = step_heun(&s, &h, &z, &[0.5]).unwrap();
        assert_eq!(out, vec![0.3, -0.8]);
    }

    #[test]
    fn heun_hand_computed_step() {
        let (s, h) = oscillator();
        let out = step_heun(&s, &h, &[1.0, 0.0], &[0.1]).unwrap();
        assert_abs_diff_eq!(out[0], 0.995, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -0.1, epsilon = 1e-15);
    }

    #[test]
    fn heun_one_step_circle_error_is_second_order() {
        // rotation field h = -(x²+y²)/2: exact one-step map is rotation by ΔX
        let s = PhaseStructure::canonical(2).unwrap();
        let h = ScalarField::new(
            2,
            |z: &[f64]| -0.5 * (z[0] * z[0] + z[1] * z[1]),
            |z: &[f64], g: &mut [f64]| {
                g[0] = -z[0];
                g[1] = -z[1];
            },
        )
        .with_hessian(|_, h| h.copy_from_slice(&[-1.0, 0.0, 0.0, -1.0]));
        let bundle = HamiltonianBundle::new(vec![h]).unwrap();
        let z = [1.0, 0.0];
        let mut prev_err = f64::INFINITY;
        for dx in [0.2, 0.1, 0.05, 0.025] {
            let out = step_heun(&s, &bundle, &z, &[dx]).unwrap();
            let exact = [dx.cos(), dx.sin()];
            let err = ((out[0] - exact[0]).powi(2) + (out[1] - exact[1]).powi(2)).sqrt();
            assert!(err <= 1.2 * dx * dx * dx, "one-step error {err} at dx {dx}");
            assert!(err < prev_err);
            prev_err = err;
        }
    }

    #[test]
    fn ito_with_zero_qv_is_explicit_euler() {
        let (s, h) = oscillator();
        let z = [1.0, 0.5];
        let dx = [0.01];
        let dqv = DMatrix::zeros(1, 1);
        let out = step_ito(&s, &h, &z, &dx, &dqv, None).unwrap();
        // Euler: z + X_h(z) dx with X_h = (p, -q)
        assert_abs_diff_eq!(out[0], 1.0 + 0.5 * 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.5 - 1.0 * 0.01, epsilon = 1e-15);
    }

    #[test]
    fn ito_correction_linear_rotation_field() {
        // δq = p δX, δp = -q δX with X = B: correction is -½ z dt
        let (s, h) = oscillator();
        let z = [0.7, -0.3];
        let dt = 1e-3;
        let dqv = DMatrix::from_element(1, 1, dt);
        let out = step_ito(&s, &h, &z, &[0.0], &dqv, None).unwrap();
        assert_abs_diff_eq!(out[0], z[0] - 0.5 * z[0] * dt, epsilon = 1e-14);
        assert_abs_diff_eq!(out[1], z[1] - 0.5 * z[1] * dt, epsilon = 1e-14);
    }

    #[test]
    fn ito_correction_fd_matches_hessian_path() {
        let (s, h) = oscillator();
        let h_no_hess = HamiltonianBundle::new(vec![ScalarField::new(
            2,
            |z: &[f64]| 0.5 * (z[0] * z[0] + z[1] * z[1]),
            |z: &[f64], g: &mut [f64]| {
                g[0] = z[0];
                g[1] = z[1];
            },
        )])
        .unwrap();
        let z = [0.4, 1.1];
        let dx = [0.02];
        let dqv = DMatrix::from_element(1, 1, 1e-3);
        let a = step_ito(&s, &h, &z, &dx, &dqv, None).unwrap();
        let b = step_ito(&s, &h_no_hess, &z, &dx, &dqv, Some(1e-5)).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(a[i], b[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn simulate_zero_hamiltonian_constant_path() {
        let s = PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::constant(2, 0.0)]).unwrap();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s,
            hamiltonian: h,
        };
        let spec = DriverSpec::brownian(1);
        let x = sample_path(&spec, 1.0, 0.01, 17).unwrap();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 0.01);
        let traj = simulate(&dyn_, &[0.2, 0.4], &x, &cfg, None).unwrap();
        assert_eq!(traj.status(), PathStatus::Completed);
        assert_eq!(traj.len(), 101);
        for i in 0..traj.len() {
            assert_eq!(traj.state(i), &[0.2, 0.4]);
        }
    }

    #[test]
    fn simulate_deterministic_driver_matches_rk4_reference() {
        // classical oscillator via the time-only driver vs a fine RK4 oracle
        let (s, h) = oscillator();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s,
            hamiltonian: h,
        };
        let spec = DriverSpec::time_only();
        let dt = 1e-3;
        let x = sample_path(&spec, 1.0, dt, 0).unwrap();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, dt);
        let traj = simulate(&dyn_, &[1.0, 0.0], &x, &cfg, None).unwrap();

        // independent RK4 on (q,p)' = (p, -q)
        let mut q = 1.0f64;
        let mut p = 0.0f64;
        let h_rk = 1e-5;
        for _ in 0..100_000 {
            let f = |q: f64, p: f64| (p, -q);
            let (k1q, k1p) = f(q, p);
            let (k2q, k2p) = f(q + 0.5 * h_rk * k1q, p + 0.5 * h_rk * k1p);
            let (k3q, k3p) = f(q + 0.5 * h_rk * k2q, p + 0.5 * h_rk * k2p);
            let (k4q, k4p) = f(q + h_rk * k3q, p + h_rk * k3p);
            q += h_rk * (k1q + 2.0 * k2q + 2.0 * k3q + k4q) / 6.0;
            p += h_rk * (k1p + 2.0 * k2p + 2.0 * k3p + k4p) / 6.0;
        }
        let end = traj.last_state();
        let err = ((end[0] - q).powi(2) + (end[1] - p).powi(2)).sqrt();
        assert!(err < 5.0 * dt, "global error {err} not O(dt)");
    }

    #[test]
    fn simulate_exit_detection_matches_fine_grid_oracle() {
        // h = p gives dq = δX; with X = t the state drifts right at unit speed
        let s = PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::coordinate(2, 1)]).unwrap();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s,
            hamiltonian: h,
        };
        let spec = DriverSpec::time_only();
        let region = |z: &[f64]| z[0] < 0.5;
        let run = |dt: f64| {
            let x = sample_path(&spec, 1.0, dt, 0).unwrap();
            let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, dt);
            simulate(&dyn_, &[0.45, 0.0], &x, &cfg, Some(&region)).unwrap()
        };
        let coarse = run(0.1);
        let fine = run(1e-4);
        let coarse_exit = match coarse.status() {
            PathStatus::Exited(i) => i as f64 * 0.1,
            other => panic!("expected exit, got {other:?}"),
        };
        let fine_exit = match fine.status() {
            PathStatus::Exited(i) => i as f64 * 1e-4,
            other => panic!("expected exit, got {other:?}"),
        };
        // crossing at t = 0.05; grid-resolution bias is at most one coarse step
        assert!((coarse_exit - fine_exit).abs() <= 0.1 + 1e-12);
        assert_abs_diff_eq!(fine_exit, 0.05, epsilon = 1e-3);
    }

    #[test]
    fn initial_state_outside_region_exits_at_zero() {
        let s = PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::constant(2, 0.0)]).unwrap();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s,
            hamiltonian: h,
        };
        let spec = DriverSpec::time_only();
        let x = sample_path(&spec, 1.0, 0.1, 0).unwrap();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 0.1);
        let region = |z: &[f64]| z[0] < 0.0;
        let traj = simulate(&dyn_, &[1.0, 0.0], &x, &cfg, Some(&region)).unwrap();
        assert_eq!(traj.status(), PathStatus::Exited(0));
        assert_eq!(traj.len(), 1);
    }

    #[test]
    fn explosion_is_detected() {
        // h = q·p generates exponential growth in q under the time driver
        let s = PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::new(
            2,
            |z: &[f64]| z[0] * z[1],
            |z: &[f64], g: &mut [f64]| {
                g[0] = z[1];
                g[1] = z[0];
            },
        )])
        .unwrap();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s,
            hamiltonian: h,
        };
        let spec = DriverSpec::time_only();
        let x = sample_path(&spec, 50.0, 0.01, 0).unwrap();
        let mut cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 0.01);
        cfg.blowup_threshold = 1e6;
        let traj = simulate(&dyn_, &[1.0, 0.0], &x, &cfg, None).unwrap();
        assert!(matches!(traj.status(), PathStatus::Exploded(_)));
    }

    #[test]
    fn tangent_flow_identity_at_zero_and_rotation_oracle() {
        let (s, h) = oscillator();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s.clone(),
            hamiltonian: h.clone(),
        };
        let spec = DriverSpec::time_only();
        let dt = 1e-3;
        let x = sample_path(&spec, 1.0, dt, 0).unwrap();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, dt);
        let traj = simulate(&dyn_, &[1.0, 0.0], &x, &cfg, None).unwrap();
        let js = tangent_flow(&s, &h, &traj, &x, &cfg).unwrap();
        assert_eq!(js[0], DMatrix::identity(2, 2));
        // exact tangent flow is exp(tA), A = [[0,1],[-1,0]]: rotation by -t
        let t = 1.0f64;
        let exact = DMatrix::from_row_slice(2, 2, &[t.cos(), t.sin(), -t.sin(), t.cos()]);
        let err = (js.last().unwrap() - exact).norm();
        assert!(err <= 5.0 * dt, "Frobenius error {err}");
    }

    #[test]
    fn ito_drift_euler_maruyama_decays_like_ou() {
        // dv = -v dt (b = 0): deterministic exponential decay
        let drift: VectorField = Arc::new(|z: &[f64], out: &mut [f64]| {
            out[0] = z[1];
            out[1] = -z[1];
        });
        let diff: VectorField = Arc::new(|_z: &[f64], out: &mut [f64]| {
            out[0] = 0.0;
            out[1] = 0.0;
        });
        let dyn_ = Dynamics::ItoDrift {
            dim: 2,
            drift,
            diffusions: vec![diff],
        };
        let spec = DriverSpec::brownian(1);
        let dt = 1e-4;
        let x = sample_path(&spec, 1.0, dt, 9).unwrap();
        let cfg = IntegratorConfig::new(Scheme::ItoEulerCorrected, dt);
        let traj = simulate(&dyn_, &[0.0, 1.0], &x, &cfg, None).unwrap();
        let v_end = traj.last_state()[1];
        assert_abs_diff_eq!(v_end, (-1.0f64).exp(), epsilon = 1e-3);
    }

    #[test]
    fn trajectory_csv_has_status_on_final_row() {
        let s = PhaseStructure::canonical(2).unwrap();
        let h = HamiltonianBundle::new(vec![ScalarField::constant(2, 0.0)]).unwrap();
        let dyn_ = Dynamics::Hamiltonian {
            structure: s,
            hamiltonian: h,
        };
        let spec = DriverSpec::time_only();
        let x = sample_path(&spec, 0.2, 0.1, 0).unwrap();
        let cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 0.1);
        let traj = simulate(&dyn_, &[1.0, 2.0], &x, &cfg, None).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines[0], "t,z1,z2,status");
        assert!(lines[1].ends_with(','));
        assert!(lines.last().unwrap().ends_with("completed"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = IntegratorConfig::new(Scheme::StratonovichHeun, 0.0);
        assert!(cfg.validate().is_err());
        cfg.dt = 0.1;
        cfg.blowup_threshold = -1.0;
        assert!(cfg.validate().is_err());
    }
}

//! Phase-space structures: Poisson tensors, scalar fields, and vector-valued
//! Hamiltonians, together with bracket and Hamiltonian-vector-field
//! evaluation.
//!
//! Charts are global Euclidean ℝⁿ. A [`PhaseStructure`] carries an
//! antisymmetric tensor field `B(z)` defining the bracket
//! `{f,g}(z) = ∇f(z)ᵀ B(z) ∇g(z)` and the Hamiltonian vector field
//! `X_f(z) = B(z) ∇f(z)`. The canonical symplectic case uses the constant
//! block matrix `[[0, I], [-I, 0]]` in `(q, p)` ordering, so that
//! `X_h = (∂h/∂p, -∂h/∂q)` and `{q, p} = 1`.
//!
//! Brackets are evaluated in the explicitly antisymmetrized form
//! `Σ_{i<j} B_ij (f_i g_j - f_j g_i)`, which makes `{f,g} = -{g,f}` hold
//! exactly in floating point, not just up to round-off.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Scalar observable on a chart: value, analytic gradient, optional Hessian.
///
/// Gradient and Hessian closures write into caller-provided buffers so that
/// simulation inner loops stay allocation-free. The Hessian buffer is
/// row-major of length `dim * dim`.
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    value: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    gradient: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    hessian: Option<Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("dim", &self.dim)
            .field("hessian", &self.hessian.is_some())
            .finish()
    }
}

/// Default finite-difference step `1e-5 * (1 + |z|)`.
pub fn default_fd_step(z: &[f64]) -> f64 {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    1e-5 * (1.0 + norm)
}

impl ScalarField {
    /// Field from value and analytic gradient.
    pub fn new<V, G>(dim: usize, value: V, gradient: G) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: None,
        }
    }

    /// Attach an analytic Hessian (row-major `dim * dim` buffer).
    pub fn with_hessian<H>(mut self, hessian: H) -> Self
    where
        H: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    /// Constant field `z ↦ c`.
    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, move |_| c, |_, g| g.fill(0.0)).with_hessian(|_, h| h.fill(0.0))
    }

    /// Field from a value alone; the gradient is central finite differences
    /// with the default step. Meant for derived observables whose gradient
    /// accuracy is not load-bearing, not for catalog Hamiltonians.
    pub fn from_value_fd<V>(dim: usize, value: V) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + Clone + 'static,
    {
        let v2 = value.clone();
        Self::new(dim, value, move |z: &[f64], g: &mut [f64]| {
            let step = default_fd_step(z);
            let mut zp = z.to_vec();
            for i in 0..z.len() {
                zp[i] = z[i] + step;
                let plus = v2(&zp);
                zp[i] = z[i] - step;
                let minus = v2(&zp);
                zp[i] = z[i];
                g[i] = (plus - minus) / (2.0 * step);
            }
        })
    }

    /// Coordinate function `z ↦ z[i]`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        assert!(i < dim, "coordinate index out of range");
        Self::new(
            dim,
            move |z: &[f64]| z[i],
            move |_, g: &mut [f64]| {
                g.fill(0.0);
                g[i] = 1.0;
            },
        )
        .with_hessian(|_, h| h.fill(0.0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_hessian(&self) -> bool {
        self.hessian.is_some()
    }

    /// Evaluate the field.
    pub fn value(&self, z: &[f64]) -> f64 {
        (self.value)(z)
    }

    /// Write the analytic gradient into `out`.
    pub fn gradient_into(&self, z: &[f64], out: &mut [f64]) {
        (self.gradient)(z, out);
    }

    /// Allocating gradient convenience.
    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.gradient_into(z, &mut g);
        g
    }

    /// Hessian at `z`: analytic when supplied, otherwise central finite
    /// differences of the gradient with step `fd_step` (or the default step
    /// when `fd_step` is `None`). The FD result is symmetrized.
    pub fn hessian(&self, z: &[f64], fd_step: Option<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let mut h = DMatrix::zeros(n, n);
        if let Some(hess) = &self.hessian {
            let mut buf = vec![0.0; n * n];
            hess(z, &mut buf);
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] = buf[i * n + j];
                }
            }
            return h;
        }
        let step = fd_step.unwrap_or_else(|| default_fd_step(z));
        let mut zp = z.to_vec();
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        for j in 0..n {
            zp[j] = z[j] + step;
            self.gradient_into(&zp, &mut gp);
            zp[j] = z[j] - step;
            self.gradient_into(&zp, &mut gm);
            zp[j] = z[j];
            for i in 0..n {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        // symmetrize the FD stencil
        for i in 0..n {
            for j in (i + 1)..n {
                let s = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = s;
                h[(j, i)] = s;
            }
        }
        h
    }

    /// Max deviation between the analytic gradient and a central
    /// finite-difference gradient of `value` at `z`.
    pub fn gradient_fd_deviation(&self, z: &[f64], step: f64) -> f64 {
        let mut g = vec![0.0; self.dim];
        self.gradient_into(z, &mut g);
        let mut zp = z.to_vec();
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            zp[i] = z[i] + step;
            let fp = self.value(&zp);
            zp[i] = z[i] - step;
            let fm = self.value(&zp);
            zp[i] = z[i];
            worst = worst.max(((fp - fm) / (2.0 * step) - g[i]).abs());
        }
        worst
    }
}

/// Kind of phase structure carried by a chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureKind {
    /// Constant canonical tensor `[[0, I], [-I, 0]]` on an even-dimensional
    /// chart in `(q, p)` ordering.
    CanonicalSymplectic,
    /// General (possibly state-dependent) Poisson tensor.
    GeneralPoisson,
}

/// Poisson tensor field on an n-dimensional chart, with optional Casimirs.
#[derive(Clone)]
pub struct PhaseStructure {
    dim: usize,
    kind: StructureKind,
    tensor: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    casimirs: Vec<ScalarField>,
}

impl std::fmt::Debug for PhaseStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhaseStructure")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("casimirs", &self.casimirs.len())
            .finish()
    }
}

impl PhaseStructure {
    /// Canonical symplectic chart of dimension `2k` in `(q, p)` ordering.
    pub fn canonical(dim: usize) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "canonical chart dimension must be positive and even, got {dim}"
            )));
        }
        let k = dim / 2;
        Ok(Self {
            dim,
            kind: StructureKind::CanonicalSymplectic,
            tensor: Arc::new(move |_z, out| {
                out.fill(0.0);
                for i in 0..k {
                    out[i * 2 * k + (k + i)] = 1.0;
                    out[(k + i) * 2 * k + i] = -1.0;
                }
            }),
            casimirs: Vec::new(),
        })
    }

    /// General Poisson structure from a tensor field writing the row-major
    /// `dim * dim` matrix `B(z)` into the provided buffer.
    pub fn poisson<B>(dim: usize, tensor: B) -> Result<Self>
    where
        B: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "chart dimension must be positive".into(),
            ));
        }
        Ok(Self {
            dim,
            kind: StructureKind::GeneralPoisson,
            tensor: Arc::new(tensor),
            casimirs: Vec::new(),
        })
    }

    /// Declare Casimir functions of the structure.
    pub fn with_casimirs(mut self, casimirs: Vec<ScalarField>) -> Self {
        self.casimirs = casimirs;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> StructureKind {
        self.kind
    }

    pub fn casimirs(&self) -> &[ScalarField] {
        &self.casimirs
    }

    /// Whether the tensor is constant over the chart (true for canonical).
    pub fn constant_tensor(&self) -> bool {
        self.kind == StructureKind::CanonicalSymplectic
    }

    /// Evaluate `B(z)` as a dense matrix.
    pub fn tensor_at(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim("tensor_at", z.len())?;
        let n = self.dim;
        let mut buf = vec![0.0; n * n];
        (self.tensor)(z, &mut buf);
        Ok(DMatrix::from_row_slice(n, n, &buf))
    }

    fn check_dim(&self, context: &'static str, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    fn check_field(&self, context: &'static str, f: &ScalarField) -> Result<()> {
        self.check_dim(context, f.dim())
    }

    /// Apply `B(z)` to a covector: `out = B(z) · alpha`.
    ///
    /// For the canonical kind this is the block swap
    /// `(alpha_q, alpha_p) ↦ (alpha_p, -alpha_q)` without forming the matrix.
    pub(crate) fn sharp_into(&self, z: &[f64], alpha: &[f64], tensor_buf: &mut [f64], out: &mut [f64]) {
        let n = self.dim;
        match self.kind {
            StructureKind::CanonicalSymplectic => {
                let k = n / 2;
                for i in 0..k {
                    out[i] = alpha[k + i];
                    out[k + i] = -alpha[i];
                }
            }
            StructureKind::GeneralPoisson => {
                (self.tensor)(z, tensor_buf);
                for i in 0..n {
                    let row = &tensor_buf[i * n..(i + 1) * n];
                    out[i] = row.iter().zip(alpha).map(|(b, a)| b * a).sum();
                }
            }
        }
    }

    /// Hamiltonian vector field `X_f(z) = B(z) ∇f(z)`.
    pub fn hamiltonian_vector_field(&self, f: &ScalarField, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim("hamiltonian_vector_field", z.len())?;
        self.check_field("hamiltonian_vector_field", f)?;
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("hamiltonian_vector_field input"));
        }
        let n = self.dim;
        let mut grad = vec![0.0; n];
        let mut tensor_buf = vec![0.0; if self.constant_tensor() { 0 } else { n * n }];
        let mut out = vec![0.0; n];
        f.gradient_into(z, &mut grad);
        self.sharp_into(z, &grad, &mut tensor_buf, &mut out);
        Ok(out)
    }

    /// Poisson bracket `{f,g}(z) = ∇f(z)ᵀ B(z) ∇g(z)`, evaluated in the
    /// antisymmetrized form so that swapping `f` and `g` negates the result
    /// exactly.
    pub fn poisson_bracket(&self, f: &ScalarField, g: &ScalarField, z: &[f64]) -> Result<f64> {
        self.check_dim("poisson_bracket", z.len())?;
        self.check_field("poisson_bracket", f)?;
        self.check_field("poisson_bracket", g)?;
        let n = self.dim;
        let mut gf = vec![0.0; n];
        let mut gg = vec![0.0; n];
        f.gradient_into(z, &mut gf);
        g.gradient_into(z, &mut gg);
        match self.kind {
            StructureKind::CanonicalSymplectic => {
                let k = n / 2;
                let mut acc = 0.0;
                for i in 0..k {
                    acc += gf[i] * gg[k + i] - gf[k + i] * gg[i];
                }
                Ok(acc)
            }
            StructureKind::GeneralPoisson => {
                let mut buf = vec![0.0; n * n];
                (self.tensor)(z, &mut buf);
                let mut acc = 0.0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        acc += buf[i * n + j] * (gf[i] * gg[j] - gf[j] * gg[i]);
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Finite-difference Jacobi residual
    /// `|{{f,g},h} + {{g,h},f} + {{h,f},g}|(z)`, with the outer brackets
    /// formed from central differences of the inner bracket values.
    pub fn jacobi_residual(
        &self,
        f: &ScalarField,
        g: &ScalarField,
        h: &ScalarField,
        z: &[f64],
        fd_step: f64,
    ) -> Result<f64> {
        if fd_step <= 0.0 {
            return Err(Error::InvalidParameter(
                "jacobi_residual requires fd_step > 0".into(),
            ));
        }
        self.check_dim("jacobi_residual", z.len())?;
        let mut total = 0.0;
        for (a, b, c) in [(f, g, h), (g, h, f), (h, f, g)] {
            total += self.outer_bracket_fd(a, b, c, z, fd_step)?;
        }
        Ok(total.abs())
    }

    /// `{{a,b}, c}(z)` with the inner bracket differentiated by central
    /// differences and the outer bracket contracted against `∇c` through `B`.
    fn outer_bracket_fd(
        &self,
        a: &ScalarField,
        b: &ScalarField,
        c: &ScalarField,
        z: &[f64],
        fd_step: f64,
    ) -> Result<f64> {
        let n = self.dim;
        let mut grad_inner = vec![0.0; n];
        let mut zp = z.to_vec();
        for i in 0..n {
            zp[i] = z[i] + fd_step;
            let plus = self.poisson_bracket(a, b, &zp)?;
            zp[i] = z[i] - fd_step;
            let minus = self.poisson_bracket(a, b, &zp)?;
            zp[i] = z[i];
            grad_inner[i] = (plus - minus) / (2.0 * fd_step);
        }
        let mut gc = vec![0.0; n];
        c.gradient_into(z, &mut gc);
        match self.kind {
            StructureKind::CanonicalSymplectic => {
                let k = n / 2;
                let mut acc = 0.0;
                for i in 0..k {
                    acc += grad_inner[i] * gc[k + i] - grad_inner[k + i] * gc[i];
                }
                Ok(acc)
            }
            StructureKind::GeneralPoisson => {
                let mut buf = vec![0.0; n * n];
                (self.tensor)(z, &mut buf);
                let mut acc = 0.0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        acc += buf[i * n + j] * (grad_inner[i] * gc[j] - grad_inner[j] * gc[i]);
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Stratonovich operator applied to a driver tangent vector:
    /// `H(z)(u) = Σ_j u_j X_{h_j}(z)`.
    pub fn stratonovich_operator_apply(
        &self,
        h: &HamiltonianBundle,
        z: &[f64],
        u: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_dim("stratonovich_operator_apply", z.len())?;
        if u.len() != h.len() {
            return Err(Error::DimensionMismatch {
                context: "stratonovich_operator_apply driver vector",
                expected: h.len(),
                got: u.len(),
            });
        }
        let n = self.dim;
        let mut out = vec![0.0; n];
        let mut grad = vec![0.0; n];
        let mut field = vec![0.0; n];
        let mut tensor_buf = vec![0.0; if self.constant_tensor() { 0 } else { n * n }];
        for (uj, hj) in u.iter().zip(h.components()) {
            if *uj == 0.0 {
                continue;
            }
            self.check_field("stratonovich_operator_apply", hj)?;
            hj.gradient_into(z, &mut grad);
            self.sharp_into(z, &grad, &mut tensor_buf, &mut field);
            for i in 0..n {
                out[i] += uj * field[i];
            }
        }
        Ok(out)
    }
}

/// Vector-valued Hamiltonian `h = Σ_j h_j ε^j` as an ordered list of scalar
/// components with their basis labels.
#[derive(Debug, Clone)]
pub struct HamiltonianBundle {
    components: Vec<ScalarField>,
    labels: Vec<String>,
}

impl HamiltonianBundle {
    /// Bundle with default labels `eps1..epsr`.
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let labels = (1..=components.len()).map(|i| format!("eps{i}")).collect();
        Self::with_labels(components, labels)
    }

    pub fn with_labels(components: Vec<ScalarField>, labels: Vec<String>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter(
                "HamiltonianBundle needs at least one component".into(),
            ));
        }
        if labels.len() != components.len() {
            return Err(Error::InvalidParameter(
                "label count must match component count".into(),
            ));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::InvalidParameter(
                "all Hamiltonian components must share the chart dimension".into(),
            ));
        }
        Ok(Self { components, labels })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &ScalarField {
        &self.components[j]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Rigid-body (so(3)*) structure with `B(μ)v = μ × v` and Casimir `‖μ‖²`.
pub fn rigid_body_structure() -> PhaseStructure {
    let tensor = |z: &[f64], out: &mut [f64]| {
        // hat map of μ: (hat μ) v = μ × v
        out.copy_from_slice(&[0.0, -z[2], z[1], z[2], 0.0, -z[0], -z[1], z[0], 0.0]);
    };
    let casimir = ScalarField::new(
        3,
        |z: &[f64]| z.iter().map(|v| v * v).sum(),
        |z: &[f64], g: &mut [f64]| {
            for i in 0..3 {
                g[i] = 2.0 * z[i];
            }
        },
    )
    .with_hessian(|_, h| {
        h.fill(0.0);
        h[0] = 2.0;
        h[4] = 2.0;
        h[8] = 2.0;
    });
    PhaseStructure::poisson(3, tensor)
        .expect("dim 3 is valid")
        .with_casimirs(vec![casimir])
}

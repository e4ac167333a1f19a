//! Driver semimartingales sampled on uniform grids.
//!
//! A [`DriverSpec`] declares the components of the vector-valued driver
//! `X: ℝ₊ → ℝʳ` in terms of `k` independent Brownian channels: deterministic
//! time, a single Brownian channel, or an affine combination `a·t + b·W`.
//! All drivers in scope have deterministic quadratic covariation
//! `[Xⁱ, Xʲ]_t = κ^{ij} t`, and the rate matrix `κ` is computed analytically
//! from the spec rather than estimated from realizations.
//!
//! Sampling is reproducible: a path is a pure function of
//! `(spec, t_final, dt, seed)`. Gaussian increments come from Box-Muller
//! applied to a ChaCha8 stream seeded through SplitMix64, drawn step-major
//! (all channels of step `i` before step `i+1`). Values are built as exact
//! cumulative sums of the stored increments, so the row sums of `increments`
//! reconstruct `values` bit-exactly and the deterministic-time column equals
//! the time grid exactly.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Hard cap on grid steps per path; guards against dt/T typos.
pub const MAX_STEPS: usize = 200_000_000;

/// One component of the driver.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentSpec {
    /// The deterministic process `t`.
    DeterministicTime,
    /// A single Brownian channel by index.
    Brownian(usize),
    /// `a·t + Σ_c b_c W^c` over the independent channels.
    Affine { slope: f64, loadings: Vec<f64> },
}

/// Driver declaration: ordered components over `channels` Brownian channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverSpec {
    components: Vec<ComponentSpec>,
    channels: usize,
}

impl DriverSpec {
    pub fn new(components: Vec<ComponentSpec>, channels: usize) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter(
                "driver needs at least one component".into(),
            ));
        }
        for c in &components {
            match c {
                ComponentSpec::Brownian(ch) if *ch >= channels => {
                    return Err(Error::InvalidParameter(format!(
                        "Brownian channel {ch} out of range (channels = {channels})"
                    )));
                }
                ComponentSpec::Affine { loadings, .. } if loadings.len() != channels => {
                    return Err(Error::InvalidParameter(format!(
                        "Affine loadings must have one entry per channel ({channels})"
                    )));
                }
                _ => {}
            }
        }
        Ok(Self { components, channels })
    }

    /// Shorthand: the single-component driver `X_t = t`.
    pub fn time_only() -> Self {
        Self::new(vec![ComponentSpec::DeterministicTime], 0).expect("valid")
    }

    /// Shorthand: one Brownian component per channel, `r = k`.
    pub fn brownian(channels: usize) -> Self {
        let comps = (0..channels).map(ComponentSpec::Brownian).collect();
        Self::new(comps, channels).expect("valid")
    }

    pub fn components(&self) -> &[ComponentSpec] {
        &self.components
    }

    /// Number of driver components `r`.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Number of independent Brownian channels `k`.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Analytic quadratic-covariation rate `κ^{ij}` with
    /// `[Xⁱ, Xʲ]_t = κ^{ij} t`. Finite-variation (time) parts contribute
    /// nothing; Brownian channels contribute through Lévy's
    /// `[Bⁱ, Bʲ]_t = δ^{ij} t`, so affine pairs return the dot product of
    /// their loadings.
    pub fn qv_rate(&self, i: usize, j: usize) -> Result<f64> {
        let r = self.len();
        for idx in [i, j] {
            if idx >= r {
                return Err(Error::IndexOutOfRange { index: idx, len: r });
            }
        }
        let loading = |c: &ComponentSpec, ch: usize| -> f64 {
            match c {
                ComponentSpec::DeterministicTime => 0.0,
                ComponentSpec::Brownian(b) => {
                    if *b == ch {
                        1.0
                    } else {
                        0.0
                    }
                }
                ComponentSpec::Affine { loadings, .. } => loadings[ch],
            }
        };
        let (ci, cj) = (&self.components[i], &self.components[j]);
        let mut rate = 0.0;
        for ch in 0..self.channels {
            rate += loading(ci, ch) * loading(cj, ch);
        }
        Ok(rate)
    }

    /// Full `r×r` rate matrix `κ`.
    pub fn qv_matrix(&self) -> DMatrix<f64> {
        let r = self.len();
        DMatrix::from_fn(r, r, |i, j| self.qv_rate(i, j).expect("indices valid"))
    }
}

/// SplitMix64 step; the documented seed-mixing primitive of the crate.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a stream index. Per-path seeds are
/// `mix_seed(master, path_index)`.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x1234_5678_9ABC_DEF0)))
}

/// Box-Muller standard normal stream over a ChaCha8 generator.
///
/// Both members of each Box-Muller pair are consumed (cached), so draws
/// depend only on the seed and the draw index.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    cached: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            cached: None,
        }
    }

    fn uniform_open(&mut self) -> f64 {
        // (0, 1]: avoids ln(0)
        let u = self.rng.next_u64() >> 11; // 53 bits
        (u as f64 + 1.0) * (1.0 / 9007199254740992.0)
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.cached.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.cached = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

/// A sampled driver realization on the uniform grid `t_i = i·dt`.
#[derive(Debug, Clone)]
pub struct NoisePath {
    dt: f64,
    times: Vec<f64>,
    /// Component-major values, `values[j][i] = X^j_{t_i}`, with `X_0 = 0`.
    values: Vec<Vec<f64>>,
    /// Component-major increments, `increments[j][i] = X^j_{t_{i+1}} - X^j_{t_i}`.
    increments: Vec<Vec<f64>>,
    qv_rates: DMatrix<f64>,
    seed: u64,
}

impl NoisePath {
    /// Assemble a path from per-component increments. Values are the exact
    /// cumulative sums, so `values[0] = 0` and reconstruction is bit-exact.
    pub fn from_increments(
        dt: f64,
        increments: Vec<Vec<f64>>,
        qv_rates: DMatrix<f64>,
        seed: u64,
    ) -> Result<Self> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        let r = increments.len();
        if r == 0 {
            return Err(Error::InvalidParameter("path needs components".into()));
        }
        let n = increments[0].len();
        if increments.iter().any(|c| c.len() != n) {
            return Err(Error::GridMismatch(
                "all components must share the step count".into(),
            ));
        }
        if qv_rates.nrows() != r || qv_rates.ncols() != r {
            return Err(Error::DimensionMismatch {
                context: "qv rate matrix",
                expected: r,
                got: qv_rates.nrows(),
            });
        }
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
        let values = increments
            .iter()
            .map(|inc| {
                let mut v = Vec::with_capacity(n + 1);
                let mut acc = 0.0;
                v.push(acc);
                for d in inc {
                    acc += d;
                    v.push(acc);
                }
                v
            })
            .collect();
        Ok(Self {
            dt,
            times,
            values,
            increments,
            qv_rates,
            seed,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Grid times `t_0..t_N`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps `N` (grid has `N + 1` points).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Number of driver components `r`.
    pub fn components(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, component: usize, i: usize) -> f64 {
        self.values[component][i]
    }

    /// Full value series of one component.
    pub fn component_values(&self, component: usize) -> &[f64] {
        &self.values[component]
    }

    pub fn increment(&self, component: usize, step: usize) -> f64 {
        self.increments[component][step]
    }

    pub fn qv_rates(&self) -> &DMatrix<f64> {
        &self.qv_rates
    }

    /// Export as CSV with columns `t, X1..Xr`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let r = self.components();
        let mut header = vec!["t".to_string()];
        header.extend((1..=r).map(|j| format!("X{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.times.len() {
            let mut rec = vec![format_float(self.times[i])];
            for j in 0..r {
                rec.push(format_float(self.values[j][i]));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Import a path previously exported with [`NoisePath::write_csv`].
    ///
    /// The driver spec supplies the QV rates (they are not stored in the
    /// CSV). Increments are rebuilt as grid differences of the parsed
    /// values; since floats are exported round-trip safe, replays reproduce
    /// the exported values exactly.
    pub fn read_csv<R: std::io::Read>(r: R, spec: &DriverSpec) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let width = spec.len() + 1;
        let mut times = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); spec.len()];
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != width {
                return Err(Error::Csv(format!(
                    "expected {width} columns, got {}",
                    rec.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Csv(format!("bad float '{s}': {e}")))
            };
            times.push(parse(&rec[0])?);
            for j in 0..spec.len() {
                values[j].push(parse(&rec[j + 1])?);
            }
        }
        if times.len() < 2 {
            return Err(Error::Csv("path needs at least two grid points".into()));
        }
        let dt = times[1] - times[0];
        if dt <= 0.0 {
            return Err(Error::Csv("non-increasing time grid".into()));
        }
        for v in &values {
            if v[0] != 0.0 {
                return Err(Error::Csv("driver must start at 0".into()));
            }
        }
        let n = times.len() - 1;
        let increments = values
            .iter()
            .map(|v| (0..n).map(|i| v[i + 1] - v[i]).collect())
            .collect();
        let mut path = Self::from_increments(dt, increments, spec.qv_matrix(), 0)?;
        // keep the imported values verbatim for exact replay round-trips
        path.values = values;
        path.times = times;
        Ok(path)
    }
}

fn format_float(x: f64) -> String {
    let mut buf = ryu_format(x);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("nan") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_format(x: f64) -> String {
    // `{}` on f64 is the shortest representation that round-trips.
    format!("{x}")
}

fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if t_final <= 0.0 || !t_final.is_finite() {
        return Err(Error::InvalidParameter("t_final must be positive".into()));
    }
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::InvalidParameter("dt must be positive".into()));
    }
    let n = (t_final / dt).round();
    if n < 1.0 {
        return Err(Error::InvalidParameter(
            "t_final must cover at least one step".into(),
        ));
    }
    if n > MAX_STEPS as f64 {
        return Err(Error::InvalidParameter(format!(
            "step count {n} exceeds the configured maximum {MAX_STEPS}"
        )));
    }
    Ok(n as usize)
}

/// Sample a driver realization on the grid `t_i = i·dt`, `i = 0..N` with
/// `N = round(t_final/dt)`. Pure function of its arguments.
pub fn sample_path(spec: &DriverSpec, t_final: f64, dt: f64, seed: u64) -> Result<NoisePath> {
    let n = step_count(t_final, dt)?;
    let k = spec.channels();
    let sqrt_dt = dt.sqrt();
    let mut stream = GaussianStream::new(seed);
    // channel increments, step-major draw order
    let mut channel_inc: Vec<Vec<f64>> = vec![Vec::with_capacity(n); k];
    for _ in 0..n {
        for col in channel_inc.iter_mut() {
            col.push(stream.next_gaussian() * sqrt_dt);
        }
    }
    Ok(assemble(spec, dt, n, &channel_inc, seed))
}

fn assemble(
    spec: &DriverSpec,
    dt: f64,
    n: usize,
    channel_inc: &[Vec<f64>],
    seed: u64,
) -> NoisePath {
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    let increments: Vec<Vec<f64>> = spec
        .components()
        .iter()
        .map(|c| match c {
            ComponentSpec::DeterministicTime => {
                (0..n).map(|i| times[i + 1] - times[i]).collect()
            }
            ComponentSpec::Brownian(ch) => channel_inc[*ch].clone(),
            ComponentSpec::Affine { slope, loadings } => (0..n)
                .map(|i| {
                    let mut inc = slope * (times[i + 1] - times[i]);
                    for (b, col) in loadings.iter().zip(channel_inc) {
                        inc += b * col[i];
                    }
                    inc
                })
                .collect(),
        })
        .collect();
    NoisePath::from_increments(dt, increments, spec.qv_matrix(), seed)
        .expect("assembled increments are consistent")
}

/// Coupled refinement family for strong-convergence studies.
///
/// Level 0 samples `N` base increments keyed by `(seed, channel, interval)`.
/// Level `ℓ+1` halves every interval of level `ℓ` by Brownian-bridge
/// subdivision: `ΔW` splits into `ΔW/2 + ξ` and `ΔW/2 - ξ` with
/// `ξ ~ N(0, h/4)` keyed by `(seed, channel, level, interval)`. Paths at
/// consecutive levels therefore agree at shared grid points (up to the
/// round-off of re-summing), and all levels share the same endpoint.
pub fn sample_path_family(
    spec: &DriverSpec,
    t_final: f64,
    base_dt: f64,
    levels: usize,
    seed: u64,
) -> Result<Vec<NoisePath>> {
    if levels == 0 {
        return Err(Error::InvalidParameter("need at least one level".into()));
    }
    let n0 = step_count(t_final, base_dt)?;
    if n0.saturating_mul(1 << (levels - 1)) > MAX_STEPS {
        return Err(Error::InvalidParameter(
            "finest level exceeds the step cap".into(),
        ));
    }
    let k = spec.channels();
    let keyed_gauss = |a: u64, b: u64, c: u64| -> f64 {
        let s = splitmix64(seed ^ splitmix64(a ^ splitmix64(b ^ splitmix64(c))));
        GaussianStream::new(s).next_gaussian()
    };
    // level 0 channel increments
    let sqrt_base = base_dt.sqrt();
    let mut channel_levels: Vec<Vec<Vec<f64>>> = Vec::with_capacity(levels);
    let base: Vec<Vec<f64>> = (0..k)
        .map(|ch| {
            (0..n0)
                .map(|i| keyed_gauss(0, ch as u64, i as u64) * sqrt_base)
                .collect()
        })
        .collect();
    channel_levels.push(base);
    for level in 1..levels {
        let h = base_dt / (1u64 << (level - 1)) as f64; // parent interval length
        let half_sd = (h / 4.0).sqrt();
        let parent = &channel_levels[level - 1];
        let refined: Vec<Vec<f64>> = (0..k)
            .map(|ch| {
                let mut out = Vec::with_capacity(parent[ch].len() * 2);
                for (m, dw) in parent[ch].iter().enumerate() {
                    let xi = keyed_gauss(level as u64, ch as u64, m as u64) * half_sd;
                    out.push(0.5 * dw + xi);
                    out.push(0.5 * dw - xi);
                }
                out
            })
            .collect();
        channel_levels.push(refined);
    }
    Ok(channel_levels
        .iter()
        .enumerate()
        .map(|(level, chans)| {
            let dt = base_dt / (1u64 << level) as f64;
            assemble(spec, dt, n0 << level, chans, seed)
        })
        .collect())
}

/// Partial sums of the realized quadratic covariation
/// `Σ_{k<i} Δa_k Δb_k` of two series sampled on the same grid.
pub fn realized_covariation(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!(
            "series lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::GridMismatch("empty series".into()));
    }
    let mut sums = Vec::with_capacity(a.len());
    let mut acc = 0.0;
    sums.push(0.0);
    for i in 0..a.len() - 1 {
        acc += (a[i + 1] - a[i]) * (b[i + 1] - b[i]);
        sums.push(acc);
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn qv_rate_examples() {
        let spec = DriverSpec::new(
            vec![
                ComponentSpec::DeterministicTime,
                ComponentSpec::Brownian(0),
                ComponentSpec::Affine {
                    slope: 1.0,
                    loadings: vec![0.5],
                },
            ],
            1,
        )
        .unwrap();
        assert_eq!(spec.qv_rate(1, 1).unwrap(), 1.0); // [B,B]_t = t
        assert_eq!(spec.qv_rate(0, 0).unwrap(), 0.0); // finite variation
        assert_eq!(spec.qv_rate(0, 1).unwrap(), 0.0);
        assert_eq!(spec.qv_rate(2, 2).unwrap(), 0.25); // ν²
        assert_eq!(spec.qv_rate(1, 2).unwrap(), 0.5);
        assert!(matches!(
            spec.qv_rate(3, 0),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn qv_matrix_is_symmetric_psd() {
        let spec = DriverSpec::new(
            vec![
                ComponentSpec::Affine {
                    slope: 0.3,
                    loadings: vec![1.0, -2.0],
                },
                ComponentSpec::Affine {
                    slope: 0.0,
                    loadings: vec![0.5, 0.5],
                },
                ComponentSpec::Brownian(1),
            ],
            2,
        )
        .unwrap();
        let kappa = spec.qv_matrix();
        assert_eq!(kappa.clone(), kappa.transpose());
        let eig = nalgebra::SymmetricEigen::new(kappa);
        assert!(eig.eigenvalues.iter().all(|l| *l >= -1e-12));
    }

    #[test]
    fn time_grid_is_exact() {
        let spec = DriverSpec::time_only();
        let path = sample_path(&spec, 1.0, 0.25, 7).unwrap();
        assert_eq!(path.component_values(0), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        // reconstruction from increments is bit-exact for a 0.1 grid too
        let path = sample_path(&spec, 1.0, 0.1, 7).unwrap();
        for (i, t) in path.times().iter().enumerate() {
            assert_eq!(path.value(0, i), *t);
            assert_eq!(*t, i as f64 * 0.1);
        }
    }

    #[test]
    fn paths_start_at_zero_and_are_reproducible() {
        let spec = DriverSpec::brownian(2);
        let a = sample_path(&spec, 1.0, 0.01, 42).unwrap();
        let b = sample_path(&spec, 1.0, 0.01, 42).unwrap();
        let c = sample_path(&spec, 1.0, 0.01, 43).unwrap();
        assert_eq!(a.value(0, 0), 0.0);
        assert_eq!(a.value(1, 0), 0.0);
        assert_eq!(a.component_values(0), b.component_values(0));
        assert_eq!(a.component_values(1), b.component_values(1));
        assert_ne!(a.component_values(0), c.component_values(0));
    }

    #[test]
    fn brownian_terminal_moments() {
        // X_T over many paths: mean within 3/√n of 0, variance within 5% of T
        let spec = DriverSpec::brownian(1);
        let n_paths = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for p in 0..n_paths {
            let path = sample_path(&spec, 1.0, 1e-4, mix_seed(99, p)).unwrap();
            let xt = path.value(0, path.steps());
            sum += xt;
            sumsq += xt * xt;
        }
        let mean = sum / n_paths as f64;
        let var = sumsq / n_paths as f64 - mean * mean;
        assert!(mean.abs() < 3.0 / (n_paths as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn realized_qv_of_time_grid_is_tiny() {
        let spec = DriverSpec::time_only();
        let path = sample_path(&spec, 1.0, 1e-3, 0).unwrap();
        let qv = realized_covariation(path.component_values(0), path.component_values(0)).unwrap();
        let last = *qv.last().unwrap();
        assert!(last <= 1.0 * 1e-3 + 1e-12, "QV of the grid process {last}");
    }

    #[test]
    fn realized_qv_of_brownian_near_t() {
        let spec = DriverSpec::brownian(1);
        let path = sample_path(&spec, 1.0, 1e-4, 1234).unwrap();
        let qv = realized_covariation(path.component_values(0), path.component_values(0)).unwrap();
        let last = *qv.last().unwrap();
        assert!((last - 1.0).abs() < 0.05, "[B,B]_1 ≈ {last}");
    }

    #[test]
    fn realized_cross_covariation_of_independent_channels() {
        let spec = DriverSpec::brownian(2);
        let n_paths = 100;
        let mut finals = Vec::with_capacity(n_paths);
        for p in 0..n_paths {
            let path = sample_path(&spec, 1.0, 1e-3, mix_seed(6, p as u64)).unwrap();
            let qv =
                realized_covariation(path.component_values(0), path.component_values(1)).unwrap();
            finals.push(*qv.last().unwrap());
        }
        let mean = finals.iter().sum::<f64>() / n_paths as f64;
        let var = finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (n_paths - 1) as f64;
        let stderr = (var / n_paths as f64).sqrt();
        assert!(mean.abs() <= 3.0 * stderr, "mean {mean}, stderr {stderr}");
    }

    #[test]
    fn affine_qv_confirmed_by_realization() {
        let nu = 0.5;
        let spec = DriverSpec::new(
            vec![ComponentSpec::Affine {
                slope: 1.0,
                loadings: vec![nu],
            }],
            1,
        )
        .unwrap();
        assert_eq!(spec.qv_rate(0, 0).unwrap(), nu * nu);
        let mut acc = 0.0;
        let n_paths = 100;
        for p in 0..n_paths {
            let path = sample_path(&spec, 1.0, 1e-3, mix_seed(77, p)).unwrap();
            let qv =
                realized_covariation(path.component_values(0), path.component_values(0)).unwrap();
            acc += *qv.last().unwrap();
        }
        let mean = acc / n_paths as f64;
        assert!((mean - nu * nu).abs() < 0.05 * nu * nu + 0.01, "mean {mean}");
    }

    #[test]
    fn refinement_family_agrees_at_shared_points() {
        let spec = DriverSpec::new(
            vec![
                ComponentSpec::DeterministicTime,
                ComponentSpec::Brownian(0),
                ComponentSpec::Affine {
                    slope: 2.0,
                    loadings: vec![0.7],
                },
            ],
            1,
        )
        .unwrap();
        let family = sample_path_family(&spec, 1.0, 0.25, 3, 11).unwrap();
        assert_eq!(family.len(), 3);
        for lv in 1..family.len() {
            let coarse = &family[lv - 1];
            let fine = &family[lv];
            assert_abs_diff_eq!(fine.dt(), coarse.dt() / 2.0, epsilon = 1e-15);
            for j in 0..spec.len() {
                for i in 0..=coarse.steps() {
                    assert_abs_diff_eq!(
                        coarse.value(j, i),
                        fine.value(j, 2 * i),
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let spec = DriverSpec::new(
            vec![ComponentSpec::DeterministicTime, ComponentSpec::Brownian(0)],
            1,
        )
        .unwrap();
        let path = sample_path(&spec, 0.5, 0.05, 3).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let back = NoisePath::read_csv(buf.as_slice(), &spec).unwrap();
        assert_eq!(back.times(), path.times());
        for j in 0..2 {
            assert_eq!(back.component_values(j), path.component_values(j));
        }
        // export of the re-imported path is byte-identical
        let mut buf2 = Vec::new();
        back.write_csv(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn invalid_sampling_arguments() {
        let spec = DriverSpec::brownian(1);
        assert!(sample_path(&spec, -1.0, 0.1, 0).is_err());
        assert!(sample_path(&spec, 1.0, 0.0, 0).is_err());
        assert!(sample_path(&spec, 1e12, 1e-9, 0).is_err());
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        assert!(realized_covariation(&[0.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
    }
}

//! Hamiltonian flow of `p(x, xi) = V(x) + |xi|^2 / 2`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::oscillator::OscillatorSpec;
use crate::potential::{to_dmatrix, PotentialSpec};

/// Point `(x, xi)` of phase space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        if x.len() != xi.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                got: xi.len(),
            });
        }
        let p = PhasePoint { x, xi };
        if !p.is_finite() {
            return invalid("phase point has non-finite entries");
        }
        Ok(p)
    }

    /// Parses `x1,..,xd,xi1,..,xid`.
    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.is_empty() || v.len() % 2 != 0 {
            return invalid("phase point needs an even, nonzero number of entries");
        }
        let d = v.len() / 2;
        PhasePoint::new(v[..d].to_vec(), v[d..].to_vec())
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.xi).all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        PhasePoint {
            x: self.x.iter().map(|v| v * s).collect(),
            xi: self.xi.iter().map(|v| v * s).collect(),
        }
    }

    /// Euclidean distance in phase space.
    pub fn distance(&self, other: &PhasePoint) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .chain(self.xi.iter().zip(&other.xi))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn radius(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `p(rho) = V(x) + |xi|^2 / 2`.
pub fn hamiltonian(spec: &PotentialSpec, rho: &PhasePoint) -> f64 {
    spec.value(&rho.x) + 0.5 * rho.xi.iter().map(|v| v * v).sum::<f64>()
}

/// Anything that yields a position at each time of `[0, horizon]`.
pub trait Path: Sync {
    fn dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn position_into(&self, t: f64, out: &mut [f64]);
}

/// Time-stamped flow samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub energy0: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &PhasePoint {
        self.points.last().expect("trajectory is never empty")
    }

    /// Largest `|p(points[k]) - energy0|`.
    pub fn max_energy_drift(&self, spec: &PotentialSpec) -> f64 {
        self.points
            .iter()
            .map(|p| (hamiltonian(spec, p) - self.energy0).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t,x1..xd,xi1..xid,energy`, floats with 17 significant digits.
    pub fn to_csv(&self, spec: &PotentialSpec) -> String {
        let d = self.points.first().map_or(0, PhasePoint::dim);
        let mut out = String::from("t");
        for j in 1..=d {
            out.push_str(&format!(",x{j}"));
        }
        for j in 1..=d {
            out.push_str(&format!(",xi{j}"));
        }
        out.push_str(",energy\n");
        for (t, p) in self.times.iter().zip(&self.points) {
            out.push_str(&fmt17(*t));
            for v in p.x.iter().chain(&p.xi) {
                out.push(',');
                out.push_str(&fmt17(*v));
            }
            out.push(',');
            out.push_str(&fmt17(hamiltonian(spec, p)));
            out.push('\n');
        }
        out
    }

    fn segment(&self, t: f64) -> usize {
        match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => k.min(self.times.len().saturating_sub(2)),
            Err(k) => k.saturating_sub(1).min(self.times.len().saturating_sub(2)),
        }
    }
}

/// Float with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl Path for Trajectory {
    fn dim(&self) -> usize {
        self.points[0].dim()
    }

    fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Cubic Hermite interpolation, using `dx/dt = xi` at both ends.
    fn position_into(&self, t: f64, out: &mut [f64]) {
        if self.times.len() == 1 {
            out.copy_from_slice(&self.points[0].x);
            return;
        }
        let k = self.segment(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (a, b) = (&self.points[k], &self.points[k + 1]);
        for j in 0..out.len() {
            out[j] = h00 * a.x[j] + h10 * h * a.xi[j] + h01 * b.x[j] + h11 * h * b.xi[j];
        }
    }
}

/// Default step: `min(1e-3, 2 pi / (1000 max nu))` for harmonic specs, `1e-3` otherwise.
pub fn default_dt(spec: &PotentialSpec) -> f64 {
    match spec {
        PotentialSpec::Harmonic { .. } => match HarmonicModes::new(spec) {
            Ok(m) => {
                let nu_max = m.freqs.iter().cloned().fold(0.0, f64::max);
                (2.0 * std::f64::consts::PI / (1000.0 * nu_max)).min(1e-3)
            }
            Err(_) => 1e-3,
        },
        _ => 1e-3,
    }
}

/// Velocity-Verlet integration of the flow, sampled at multiples of `dt` and at `T`.
///
/// Negative `t_end` integrates backwards in time.
pub fn integrate_flow(
    spec: &PotentialSpec,
    rho0: &PhasePoint,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    let mut times = Vec::new();
    let mut points = Vec::new();
    let energy0 = integrate_with(spec, rho0, t_end, dt, |t, p| {
        times.push(t);
        points.push(p.clone());
    })?;
    Ok(Trajectory {
        times,
        points,
        energy0,
    })
}

/// Same scheme as [`integrate_flow`], handing each sample to `visit` instead of storing it.
/// Returns `p(rho0)`.
pub fn integrate_with(
    spec: &PotentialSpec,
    rho0: &PhasePoint,
    t_end: f64,
    dt: f64,
    mut visit: impl FnMut(f64, &PhasePoint),
) -> Result<f64> {
    if !(dt > 0.0) || !dt.is_finite() {
        return invalid("dt must be positive");
    }
    if t_end == 0.0 || !t_end.is_finite() {
        return invalid("T must be nonzero and finite");
    }
    if rho0.dim() != spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: rho0.dim(),
        });
    }
    if !rho0.is_finite() {
        return invalid("initial point has non-finite entries");
    }
    if !spec.is_subquadratic() {
        log::warn!(
            "growth exponent {} exceeds 1; high-energy observability results do not apply",
            spec.growth_exponent()
        );
    }
    let dir = t_end.signum();
    let span = t_end.abs();
    let d = spec.dim();
    let e0 = hamiltonian(spec, rho0);
    let limit = 1e-2 * e0.abs().max(1.0);
    let mut rho = rho0.clone();
    let mut grad = vec![0.0; d];
    spec.grad_into(&rho.x, &mut grad);
    let mut e_prev = e0;
    visit(0.0, &rho);
    let n_full = (span / dt).floor() as usize;
    let mut steps: Vec<f64> = vec![dt; n_full];
    let rest = span - n_full as f64 * dt;
    if rest > 1e-12 * dt.max(span) {
        steps.push(rest);
    }
    let mut t = 0.0;
    for (k, &h_abs) in steps.iter().enumerate() {
        let h = dir * h_abs;
        for j in 0..d {
            rho.xi[j] -= 0.5 * h * grad[j];
            rho.x[j] += h * rho.xi[j];
        }
        spec.grad_into(&rho.x, &mut grad);
        for j in 0..d {
            rho.xi[j] -= 0.5 * h * grad[j];
        }
        t = if k < n_full {
            dir * (k + 1) as f64 * dt
        } else {
            t_end
        };
        let e = hamiltonian(spec, &rho);
        let jump = (e - e_prev).abs();
        if !(jump <= limit) {
            return Err(Error::StepTooLarge { t, jump, limit });
        }
        e_prev = e;
        visit(t, &rho);
    }
    debug_assert!(t == t_end || steps.is_empty());
    Ok(e0)
}

/// Eigen-decomposition `A = Q diag(nu^2) Q^T` of a harmonic potential.
#[derive(Clone, Debug)]
pub struct HarmonicModes {
    /// Characteristic frequencies, ascending.
    pub freqs: Vec<f64>,
    /// Columns are the eigenvectors, matching `freqs`.
    pub basis: DMatrix<f64>,
}

impl HarmonicModes {
    pub fn new(spec: &PotentialSpec) -> Result<Self> {
        let PotentialSpec::Harmonic { matrix } = spec else {
            return Err(Error::Unsupported(
                "exact flow needs a harmonic potential".into(),
            ));
        };
        spec.validate()?;
        let eig = SymmetricEigen::new(to_dmatrix(matrix));
        let d = matrix.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let freqs = order.iter().map(|&k| eig.eigenvalues[k].sqrt()).collect();
        let basis = DMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
        Ok(HarmonicModes { freqs, basis })
    }

    pub fn oscillator(&self) -> Result<OscillatorSpec> {
        OscillatorSpec::new(self.freqs.clone())
    }

    pub fn to_modal(&self, rho: &PhasePoint) -> PhasePoint {
        let d = self.freqs.len();
        let mut x = vec![0.0; d];
        let mut xi = vec![0.0; d];
        for k in 0..d {
            for i in 0..d {
                x[k] += self.basis[(i, k)] * rho.x[i];
                xi[k] += self.basis[(i, k)] * rho.xi[i];
            }
        }
        PhasePoint { x, xi }
    }

    pub fn from_modal(&self, rho: &PhasePoint) -> PhasePoint {
        let d = self.freqs.len();
        let mut x = vec![0.0; d];
        let mut xi = vec![0.0; d];
        for i in 0..d {
            for k in 0..d {
                x[i] += self.basis[(i, k)] * rho.x[k];
                xi[i] += self.basis[(i, k)] * rho.xi[k];
            }
        }
        PhasePoint { x, xi }
    }

    /// Exact flow in the original coordinates.
    pub fn flow(&self, rho: &PhasePoint, t: f64) -> PhasePoint {
        let m = self.to_modal(rho);
        self.from_modal(&modal_flow(&self.freqs, &m, t))
    }
}

fn modal_flow(freqs: &[f64], rho: &PhasePoint, t: f64) -> PhasePoint {
    let mut x = Vec::with_capacity(freqs.len());
    let mut xi = Vec::with_capacity(freqs.len());
    for (j, &nu) in freqs.iter().enumerate() {
        let (s, c) = (nu * t).sin_cos();
        x.push(c * rho.x[j] + s / nu * rho.xi[j]);
        xi.push(-nu * s * rho.x[j] + c * rho.xi[j]);
    }
    PhasePoint { x, xi }
}

/// Closed-form flow of `sum_j (nu_j^2 x_j^2 + xi_j^2) / 2`.
pub fn exact_harmonic_flow(freqs: &OscillatorSpec, rho0: &PhasePoint, t: f64) -> PhasePoint {
    modal_flow(&freqs.freqs, rho0, t)
}

/// Exact harmonic flow viewed as a [`Path`] on `[0, horizon]`.
#[derive(Clone, Debug)]
pub struct HarmonicPath {
    pub modes: HarmonicModes,
    modal0: PhasePoint,
    pub horizon: f64,
}

impl HarmonicPath {
    pub fn new(modes: HarmonicModes, rho0: &PhasePoint, horizon: f64) -> Self {
        let modal0 = modes.to_modal(rho0);
        HarmonicPath {
            modes,
            modal0,
            horizon,
        }
    }
}

impl Path for HarmonicPath {
    fn dim(&self) -> usize {
        self.modes.freqs.len()
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn position_into(&self, t: f64, out: &mut [f64]) {
        let d = self.dim();
        for v in out.iter_mut() {
            *v = 0.0;
        }
        for k in 0..d {
            let nu = self.modes.freqs[k];
            let (s, c) = (nu * t).sin_cos();
            let xk = c * self.modal0.x[k] + s / nu * self.modal0.xi[k];
            for i in 0..d {
                out[i] += self.modes.basis[(i, k)] * xk;
            }
        }
    }
}

/// Largest `|phi_2^t(rho0) - phi_1^t(rho0)|` over the integrator samples of `[0, T]`.
pub fn flow_divergence(
    spec1: &PotentialSpec,
    spec2: &PotentialSpec,
    rho0: &PhasePoint,
    t_end: f64,
    dt: f64,
) -> Result<f64> {
    if spec1.dim() != spec2.dim() {
        return Err(Error::Dimension {
            expected: spec1.dim(),
            got: spec2.dim(),
        });
    }
    let a = integrate_flow(spec1, rho0, t_end, dt)?;
    let b = integrate_flow(spec2, rho0, t_end, dt)?;
    Ok(a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| p.distance(q))
        .fold(0.0, f64::max))
}

/// Amplitude `A_j >= 0` and angle `theta_j in [0, 2 pi)` with `x_j(t) = A_j sin(nu_j t + theta_j)`.
pub fn action_angle(freqs: &OscillatorSpec, rho0: &PhasePoint) -> Vec<(f64, f64)> {
    freqs
        .freqs
        .iter()
        .enumerate()
        .map(|(j, &nu)| {
            let x = rho0.x[j];
            let v = rho0.xi[j] / nu;
            let a = x.hypot(v);
            if a == 0.0 {
                return (0.0, 0.0);
            }
            let th = x.atan2(v).rem_euclid(2.0 * std::f64::consts::PI);
            (a, th)
        })
        .collect()
}

/// Inverse of [`action_angle`].
pub fn from_action_angle(freqs: &OscillatorSpec, aa: &[(f64, f64)]) -> PhasePoint {
    let (x, xi) = freqs
        .freqs
        .iter()
        .zip(aa)
        .map(|(&nu, &(a, th))| (a * th.sin(), a * nu * th.cos()))
        .unzip();
    PhasePoint { x, xi }
}

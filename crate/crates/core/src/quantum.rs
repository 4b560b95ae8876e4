//! Exact-spectrum quantum checks for harmonic oscillators: Hermite bases, Gramians of
//! the free evolution, band-limited observability costs and coherent states.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::flow::PhasePoint;
use crate::quad::{gauss_hermite, gauss_legendre, legendre_on, Rule};
use crate::sets::ObservationSet;

/// Largest Hermite index the recurrence is validated for.
pub const MAX_INDEX: usize = 2000;
/// Largest scaled abscissa `|x| sqrt(nu)` the recurrence is validated for.
pub const MAX_SCALED_X: f64 = 60.0;
/// Largest entry change tolerated when the quadrature nodes are doubled.
pub const RESOLUTION_TOL: f64 = 1e-7;
/// Mass a coherent state must keep inside the truncated basis.
pub const MASS_TOL: f64 = 1e-8;

const PANEL: usize = 24;

/// Values `h_0(x), .., h_{count-1}(x)` of the normalized eigenfunctions of
/// `(nu^2 x^2 - d^2/dx^2) / 2`.
pub fn hermite_all(nu: f64, count: usize, x: f64) -> Result<Vec<f64>> {
    if !(nu > 0.0) {
        return invalid("frequency must be positive");
    }
    if count > MAX_INDEX + 1 {
        return Err(Error::Range(format!(
            "Hermite index {} above {MAX_INDEX}",
            count - 1
        )));
    }
    let y = nu.sqrt() * x;
    if !(y.abs() <= MAX_SCALED_X) {
        return Err(Error::Range(format!(
            "scaled abscissa {y} beyond {MAX_SCALED_X}"
        )));
    }
    let c0 = (nu / PI).powf(0.25);
    // unnormalized recurrence with the Gaussian factor kept as a separate exponent
    let mut log_scale = -0.5 * y * y;
    let (mut prev, mut cur) = (0.0_f64, 1.0_f64);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        out.push(if cur == 0.0 {
            0.0
        } else {
            c0 * cur.signum() * (cur.abs().ln() + log_scale).exp()
        });
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * y * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > 1e150 {
            cur *= 1e-150;
            prev *= 1e-150;
            log_scale += 150.0 * std::f64::consts::LN_10;
        }
    }
    Ok(out)
}

/// `h_n(x)` for the frequency `nu`.
pub fn hermite_eval(nu: f64, n: usize, x: f64) -> Result<f64> {
    Ok(hermite_all(nu, n + 1, x)?[n])
}

/// Tensor Hermite basis truncated to `n` functions per axis, modes sorted by energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermiteBasis {
    pub nu: Vec<f64>,
    pub n: usize,
    modes: Vec<Vec<usize>>,
    eigenvalues: Vec<f64>,
}

impl HermiteBasis {
    pub fn new(nu: Vec<f64>, n: usize) -> Result<Self> {
        if !(1..=2).contains(&nu.len()) {
            return invalid("Hermite bases are one or two dimensional");
        }
        if nu.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return invalid("frequencies must be positive");
        }
        if n == 0 || n > MAX_INDEX + 1 {
            return Err(Error::Range(format!(
                "truncation {n} outside 1..={}",
                MAX_INDEX + 1
            )));
        }
        let mut modes: Vec<Vec<usize>> = if nu.len() == 1 {
            (0..n).map(|k| vec![k]).collect()
        } else {
            (0..n)
                .flat_map(|a| (0..n).map(move |b| vec![a, b]))
                .collect()
        };
        let energy =
            |m: &[usize]| -> f64 { m.iter().zip(&nu).map(|(&k, v)| v * (k as f64 + 0.5)).sum() };
        modes.sort_by(|a, b| energy(a).total_cmp(&energy(b)).then(a.cmp(b)));
        let eigenvalues = modes.iter().map(|m| energy(m)).collect();
        Ok(HermiteBasis {
            nu,
            n,
            modes,
            eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode(&self, k: usize) -> &[usize] {
        &self.modes[k]
    }

    /// Energy up to which every eigenvalue of the full operator is represented.
    pub fn complete_below(&self) -> f64 {
        let base: f64 = self.nu.iter().map(|v| 0.5 * v).sum();
        base + self
            .nu
            .iter()
            .map(|v| v * (self.n - 1) as f64)
            .fold(f64::INFINITY, f64::min)
    }

    /// Indices of the modes with eigenvalue in `[e_min, e_max]`.
    pub fn band_modes(&self, band: (f64, f64)) -> Result<Vec<usize>> {
        let (lo, hi) = band;
        if !(lo <= hi) {
            return invalid("band must satisfy e_min <= e_max");
        }
        if hi > 0.8 * self.complete_below() {
            return Err(Error::Truncation(format!(
                "band edge {hi} above 0.8 of the complete spectrum {}",
                self.complete_below()
            )));
        }
        let idx: Vec<usize> = (0..self.len())
            .filter(|&k| self.eigenvalues[k] >= lo && self.eigenvalues[k] <= hi)
            .collect();
        if idx.is_empty() {
            return Err(Error::Domain(format!("no eigenvalue in [{lo}, {hi}]")));
        }
        Ok(idx)
    }

    /// Values of the listed modes at `x`.
    fn values_at(&self, modes: &[usize], top: &[usize], x: &[f64]) -> Result<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|j| hermite_all(self.nu[j], top[j] + 1, x[j]))
            .collect::<Result<_>>()?;
        Ok(modes
            .iter()
            .map(|&k| {
                self.modes[k]
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| axes[j][i])
                    .product()
            })
            .collect())
    }

    /// Highest index used on each axis.
    fn top_index(&self, modes: &[usize]) -> Vec<usize> {
        (0..self.dim())
            .map(|j| modes.iter().map(|&k| self.modes[k][j]).max().unwrap_or(0))
            .collect()
    }
}

fn merge_segments(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.retain(|s| s.1 > s.0);
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Segments of a one-dimensional set inside `[-lim, lim]`; `None` for the whole line.
fn line_segments(set: &ObservationSet, lim: f64) -> Result<Option<Vec<(f64, f64)>>> {
    let clip = |v: Vec<(f64, f64)>| -> Vec<(f64, f64)> {
        merge_segments(
            v.into_iter()
                .map(|(a, b)| (a.max(-lim), b.min(lim)))
                .collect(),
        )
    };
    Ok(Some(match set {
        ObservationSet::FullSpace => return Ok(None),
        ObservationSet::Spherical { radii } => {
            let mut v = Vec::new();
            for (a, b) in radii.intervals_up_to(lim) {
                if a < 0.0 {
                    v.push((-b, b));
                } else {
                    v.push((a, b));
                    v.push((-b, -a));
                }
            }
            clip(v)
        }
        ObservationSet::Line { intervals } => clip(intervals.clone()),
        ObservationSet::HalfLineCone { positive, negative } => {
            let mut v = Vec::new();
            if *positive {
                v.push((0.0, lim));
            }
            if *negative {
                v.push((-lim, 0.0));
            }
            v
        }
        ObservationSet::Ball { radius } => clip(vec![(-radius, *radius)]),
        ObservationSet::Thickened { inner, radius } => match line_segments(inner, lim + radius)? {
            None => return Ok(None),
            Some(v) => clip(
                v.into_iter()
                    .map(|(a, b)| (a - radius, b + radius))
                    .collect(),
            ),
        },
        ObservationSet::Punctured { inner, radius } => {
            let v = line_segments(inner, lim)?.unwrap_or_else(|| vec![(-lim, lim)]);
            let mut out = Vec::new();
            for (a, b) in v {
                out.push((a, b.min(-radius)));
                out.push((a.max(*radius), b));
            }
            clip(out)
        }
        ObservationSet::Union { sets } => {
            let mut v = Vec::new();
            for s in sets {
                match line_segments(s, lim)? {
                    None => return Ok(None),
                    Some(seg) => v.extend(seg),
                }
            }
            clip(v)
        }
        ObservationSet::ConicalArcs { .. } | ObservationSet::TwoCones { .. } => {
            return Err(Error::Dimension {
                expected: 2,
                got: 1,
            })
        }
    }))
}

/// Polar pieces `((r0, r1), (t0, t1))` of a planar set with `r1 <= rlim`; `None` for the
/// whole plane.
type PolarPiece = ((f64, f64), (f64, f64));

fn polar_pieces(set: &ObservationSet, rlim: f64) -> Result<Option<Vec<PolarPiece>>> {
    let circle = (0.0, 2.0 * PI);
    Ok(Some(
        match set {
            ObservationSet::FullSpace => return Ok(None),
            ObservationSet::Spherical { radii } => radii
                .intervals_up_to(rlim)
                .into_iter()
                .map(|(a, b)| ((a.max(0.0), b.min(rlim)), circle))
                .collect(),
            ObservationSet::Ball { radius } => vec![((0.0, radius.min(rlim)), circle)],
            ObservationSet::ConicalArcs { .. } | ObservationSet::TwoCones { .. } => set
                .arcs()
                .unwrap()
                .into_iter()
                .map(|arc| ((0.0, rlim), arc))
                .collect(),
            ObservationSet::Punctured { inner, radius } => {
                let v = polar_pieces(inner, rlim)?.unwrap_or_else(|| vec![((0.0, rlim), circle)]);
                v.into_iter()
                    .map(|((a, b), arc)| ((a.max(*radius), b), arc))
                    .collect()
            }
            ObservationSet::HalfLineCone { .. } | ObservationSet::Line { .. } => {
                return Err(Error::Dimension {
                    expected: 1,
                    got: 2,
                })
            }
            _ => {
                return Err(Error::Unsupported(
                    "planar matrix elements need a spherical, conical or ball set".into(),
                ))
            }
        }
        .into_iter()
        .filter(|((a, b), _)| b > a)
        .collect(),
    ))
}

/// Gauss-Legendre panels covering `[a, b]` with at least `nodes` nodes.
fn panels(rule: &Rule, a: f64, b: f64, nodes: f64) -> Vec<(f64, f64)> {
    let k = ((nodes / PANEL as f64).ceil() as usize).max(1);
    let h = (b - a) / k as f64;
    (0..k)
        .flat_map(|i| {
            legendre_on(rule, a + h * i as f64, a + h * (i + 1) as f64).collect::<Vec<_>>()
        })
        .collect()
}

/// Quadrature nodes `(x, w)` for the set, `refine` scaling the node density.
fn set_nodes(
    basis: &HermiteBasis,
    set: &ObservationSet,
    top: &[usize],
    refine: f64,
) -> Result<Option<Vec<(Vec<f64>, f64)>>> {
    let rule = gauss_legendre(PANEL);
    let kmax = (0..basis.dim())
        .map(|j| (basis.nu[j] * (2 * top[j] + 1) as f64).sqrt())
        .fold(0.0, f64::max);
    let num_min = basis.nu.iter().cloned().fold(f64::INFINITY, f64::min);
    if basis.dim() == 1 {
        let lim = (((2 * top[0] + 1) as f64).sqrt() + 10.0) / num_min.sqrt();
        let Some(segs) = line_segments(set, lim)? else {
            return Ok(None);
        };
        let mut out = Vec::new();
        for (a, b) in segs {
            let n = refine * (1.5 * kmax * (b - a) + PANEL as f64);
            out.extend(
                panels(&rule, a, b, n)
                    .into_iter()
                    .map(|(x, w)| (vec![x], w)),
            );
        }
        return Ok(Some(out));
    }
    let degree = (top[0] + top[1]) as f64;
    let rlim = ((2.0 * degree + 2.0).sqrt() + 8.0) / num_min.sqrt();
    let Some(pieces) = polar_pieces(set, rlim)? else {
        return Ok(None);
    };
    let dnu = (basis.nu[0] - basis.nu[1]).abs();
    let mut out = Vec::new();
    for ((r0, r1), (t0, t1)) in pieces {
        let nr = refine * (1.5 * kmax * (r1 - r0) + PANEL as f64);
        for (r, wr) in panels(&rule, r0, r1, nr) {
            // angular oscillation: polynomial degree plus the anisotropic Gaussian
            let freq = 2.0 * degree + 2.0 + dnu * r * r;
            let nt = refine * (0.75 * freq * (t1 - t0) + PANEL as f64);
            for (t, wt) in panels(&rule, t0, t1, nt) {
                out.push((vec![r * t.cos(), r * t.sin()], wr * wt * r));
            }
        }
    }
    Ok(Some(out))
}

fn assemble(
    basis: &HermiteBasis,
    modes: &[usize],
    nodes: &[(Vec<f64>, f64)],
) -> Result<DMatrix<f64>> {
    let top = basis.top_index(modes);
    let k = modes.len();
    let chunks: Vec<Result<DMatrix<f64>>> = nodes
        .par_chunks(2048)
        .map(|chunk| {
            let mut h = DMatrix::<f64>::zeros(chunk.len(), k);
            for (i, (x, w)) in chunk.iter().enumerate() {
                let vals = basis.values_at(modes, &top, x)?;
                let sw = w.sqrt();
                for (j, v) in vals.into_iter().enumerate() {
                    h[(i, j)] = sw * v;
                }
            }
            Ok(h.tr_mul(&h))
        })
        .collect();
    let mut m = DMatrix::<f64>::zeros(k, k);
    for c in chunks {
        m += c?;
    }
    Ok(m)
}

/// Matrix `<phi_a, 1_set phi_b>` over the listed modes, checked against a doubled
/// quadrature.
pub fn indicator_submatrix(
    basis: &HermiteBasis,
    set: &ObservationSet,
    modes: &[usize],
) -> Result<DMatrix<f64>> {
    set.validate()?;
    if let Some(d) = set.fixed_dim() {
        if d != basis.dim() {
            return Err(Error::Dimension {
                expected: basis.dim(),
                got: d,
            });
        }
    }
    if modes.iter().any(|&k| k >= basis.len()) {
        return Err(Error::Range("mode index outside the basis".into()));
    }
    let top = basis.top_index(modes);
    let Some(coarse) = set_nodes(basis, set, &top, 1.0)? else {
        return Ok(DMatrix::identity(modes.len(), modes.len()));
    };
    let fine = set_nodes(basis, set, &top, 2.0)?.unwrap();
    let a = assemble(basis, modes, &coarse)?;
    let b = assemble(basis, modes, &fine)?;
    let change = (&a - &b).amax();
    if change > RESOLUTION_TOL {
        return Err(Error::QuadratureResolution { change });
    }
    Ok(b)
}

/// Matrix `<phi_a, 1_set phi_b>` over the whole basis.
pub fn indicator_matrix(basis: &HermiteBasis, set: &ObservationSet) -> Result<DMatrix<f64>> {
    let all: Vec<usize> = (0..basis.len()).collect();
    indicator_submatrix(basis, set, &all)
}

/// `int_0^T e^{i delta t} dt`.
pub fn phase_integral(delta: f64, horizon: f64) -> Complex64 {
    if delta.abs() * horizon < 1e-12 {
        return Complex64::new(horizon, 0.0);
    }
    let i = Complex64::i();
    ((i * delta * horizon).exp() - 1.0) / (i * delta)
}

/// Gramian `int_0^T e^{itP} M e^{-itP} dt` in a basis with eigenvalues `lambda`.
pub fn gramian(lambda: &[f64], m: &DMatrix<f64>, horizon: f64) -> Result<DMatrix<Complex64>> {
    if m.nrows() != lambda.len() || m.ncols() != lambda.len() {
        return Err(Error::Dimension {
            expected: lambda.len(),
            got: m.nrows(),
        });
    }
    Ok(DMatrix::from_fn(lambda.len(), lambda.len(), |a, b| {
        m[(a, b)] * phase_integral(lambda[a] - lambda[b], horizon)
    }))
}

/// Eigenvalues of the listed modes.
pub fn mode_eigenvalues(basis: &HermiteBasis, modes: &[usize]) -> Vec<f64> {
    modes.iter().map(|&k| basis.eigenvalues()[k]).collect()
}

/// Smallest eigenpair of a Hermitian matrix, checked for semidefiniteness.
pub fn min_eigenpair(g: &DMatrix<Complex64>, horizon: f64) -> Result<(f64, DVector<Complex64>)> {
    let eig = SymmetricEigen::new(g.clone());
    let (k, &lam) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::InvalidInput("empty matrix".into()))?;
    if lam < -1e-10 * horizon.max(1.0) {
        return Err(Error::Precision(format!(
            "Gramian eigenvalue {lam} is negative"
        )));
    }
    Ok((
        lam.clamp(0.0, horizon),
        eig.eigenvectors.column(k).into_owned(),
    ))
}

/// Smallest eigenpair of the compression of a full-basis Gramian to an energy band.
pub fn band_obs_cost(
    g: &DMatrix<Complex64>,
    basis: &HermiteBasis,
    band: (f64, f64),
    horizon: f64,
) -> Result<(f64, DVector<Complex64>)> {
    let idx = basis.band_modes(band)?;
    if g.nrows() != basis.len() {
        return Err(Error::Dimension {
            expected: basis.len(),
            got: g.nrows(),
        });
    }
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| g[(idx[a], idx[b])]);
    min_eigenpair(&sub, horizon)
}

/// Band modes and the Gramian compressed to them.
pub fn band_gramian(
    basis: &HermiteBasis,
    set: &ObservationSet,
    horizon: f64,
    band: (f64, f64),
) -> Result<(Vec<usize>, DMatrix<Complex64>)> {
    if !(horizon > 0.0) {
        return invalid("horizon must be positive");
    }
    let idx = basis.band_modes(band)?;
    let m = indicator_submatrix(basis, set, &idx)?;
    let g = gramian(&mode_eigenvalues(basis, &idx), &m, horizon)?;
    Ok((idx, g))
}

/// Band-limited observability report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramianReport {
    pub horizon: f64,
    pub band: (f64, f64),
    pub min_eig: f64,
    /// Minimizer in the coordinates of `modes`.
    pub min_vector: Vec<Complex64>,
    pub modes: Vec<Vec<usize>>,
    pub classical_k: Option<f64>,
    pub n_used: usize,
}

/// Gramian floor on an energy band, computed from the band's own matrix elements.
///
/// Only the band modes enter, so the result does not depend on the truncation beyond
/// the completeness requirement checked by [`HermiteBasis::band_modes`].
pub fn band_report(
    basis: &HermiteBasis,
    set: &ObservationSet,
    horizon: f64,
    band: (f64, f64),
) -> Result<GramianReport> {
    let (idx, g) = band_gramian(basis, set, horizon, band)?;
    let (min_eig, v) = min_eigenpair(&g, horizon)?;
    Ok(GramianReport {
        horizon,
        band,
        min_eig,
        min_vector: v.iter().copied().collect(),
        modes: idx.iter().map(|&k| basis.mode(k).to_vec()).collect(),
        classical_k: None,
        n_used: basis.n,
    })
}

/// Per-axis coherent-state parameters `sqrt(nu/2) (x + i xi / nu)`.
pub fn coherent_alpha(nu: &[f64], rho: &PhasePoint) -> Vec<Complex64> {
    nu.iter()
        .enumerate()
        .map(|(j, &v)| (v / 2.0).sqrt() * Complex64::new(rho.x[j], rho.xi[j] / v))
        .collect()
}

/// Coefficients of the coherent state centred at `rho`:
/// `c_n = exp(-|alpha|^2 / 2) alpha^n / sqrt(n!)` on each axis.
pub fn coherent_coeffs(basis: &HermiteBasis, rho: &PhasePoint) -> Result<DVector<Complex64>> {
    if rho.dim() != basis.dim() {
        return Err(Error::Dimension {
            expected: basis.dim(),
            got: rho.dim(),
        });
    }
    let alpha = coherent_alpha(&basis.nu, rho);
    let per_axis: Vec<Vec<Complex64>> = alpha
        .iter()
        .map(|a| {
            let mut c = Vec::with_capacity(basis.n);
            let mut cur = Complex64::new((-0.5 * a.norm_sqr()).exp(), 0.0);
            for k in 0..basis.n {
                c.push(cur);
                cur = cur * a / ((k + 1) as f64).sqrt();
            }
            c
        })
        .collect();
    let coeffs = DVector::from_iterator(
        basis.len(),
        basis.modes.iter().map(|m| {
            m.iter()
                .enumerate()
                .map(|(j, &i)| per_axis[j][i])
                .product::<Complex64>()
        }),
    );
    let mass = coeffs.norm_squared();
    if mass < 1.0 - MASS_TOL {
        return Err(Error::Truncation(format!(
            "coherent state keeps mass {mass} in {} modes per axis",
            basis.n
        )));
    }
    Ok(coeffs)
}

/// `e^{-itP}` applied to coefficients in the basis.
pub fn spectral_propagate(
    basis: &HermiteBasis,
    coeffs: &DVector<Complex64>,
    t: f64,
) -> DVector<Complex64> {
    DVector::from_iterator(
        coeffs.len(),
        coeffs
            .iter()
            .zip(basis.eigenvalues())
            .map(|(c, &l)| c * Complex64::from_polar(1.0, -l * t)),
    )
}

/// Centre and global phase of `e^{-itP}` applied to the coherent state at `rho`: the
/// centre follows the classical flow and the phase is `exp(-it sum(nu) / 2)`.
pub fn propagate_coherent(nu: &[f64], rho: &PhasePoint, t: f64) -> Result<(PhasePoint, Complex64)> {
    if rho.dim() != nu.len() {
        return Err(Error::Dimension {
            expected: nu.len(),
            got: rho.dim(),
        });
    }
    let mut x = vec![0.0; nu.len()];
    let mut xi = vec![0.0; nu.len()];
    for (j, &v) in nu.iter().enumerate() {
        let (s, c) = (v * t).sin_cos();
        x[j] = rho.x[j] * c + rho.xi[j] / v * s;
        xi[j] = -v * rho.x[j] * s + rho.xi[j] * c;
    }
    let phase = Complex64::from_polar(1.0, -0.5 * t * nu.iter().sum::<f64>());
    Ok((PhasePoint { x, xi }, phase))
}

/// Probability `int_set |phi_rho|^2` of the coherent state at `rho`.
pub fn coherent_mass_in_set(rho: &PhasePoint, set: &ObservationSet, nu: &[f64]) -> Result<f64> {
    if rho.dim() != nu.len() {
        return Err(Error::Dimension {
            expected: nu.len(),
            got: rho.dim(),
        });
    }
    if let Some(d) = set.fixed_dim() {
        if d != nu.len() {
            return Err(Error::Dimension {
                expected: nu.len(),
                got: d,
            });
        }
    }
    let spread = 9.0 / nu.iter().cloned().fold(f64::INFINITY, f64::min).sqrt();
    if nu.len() == 1 {
        let (v, x0) = (nu[0], rho.x[0]);
        let Some(segs) = line_segments(set, x0.abs() + 2.0 * spread)? else {
            return Ok(1.0);
        };
        let s = v.sqrt();
        return Ok(segs
            .iter()
            .map(|&(a, b)| 0.5 * (libm::erf(s * (b - x0)) - libm::erf(s * (a - x0))))
            .sum());
    }
    if nu.len() != 2 {
        return Err(Error::Unsupported(
            "coherent mass in dimension above two".into(),
        ));
    }
    let r0 = (rho.x[0].powi(2) + rho.x[1].powi(2)).sqrt();
    let Some(pieces) = polar_pieces(set, r0 + spread)? else {
        return Ok(1.0);
    };
    let rule = gauss_legendre(16);
    let step = 0.5 / nu.iter().cloned().fold(0.0, f64::max).sqrt();
    let dens = |x: f64, y: f64| {
        (nu[0] * nu[1]).sqrt() / PI
            * (-nu[0] * (x - rho.x[0]).powi(2) - nu[1] * (y - rho.x[1]).powi(2)).exp()
    };
    // angular window where the Gaussian is not negligible
    let centre = rho.x[1].atan2(rho.x[0]);
    let half = if r0 > spread {
        (spread / r0).asin()
    } else {
        PI
    };
    let mut total = 0.0;
    for ((ra, rb), (ta, tb)) in pieces {
        let (ra, rb) = (ra.max(r0 - spread).max(0.0), rb.min(r0 + spread));
        if rb <= ra {
            continue;
        }
        let nr = ((rb - ra) / step).ceil() as usize;
        let hr = (rb - ra) / nr as f64;
        // pieces of the arc inside the window, allowing for the 2 pi wrap
        let mut arcs = Vec::new();
        if half >= PI {
            arcs.push((ta, tb));
        } else {
            for shift in [-2.0 * PI, 0.0, 2.0 * PI] {
                let (wa, wb) = (centre - half + shift, centre + half + shift);
                let (a, b) = (ta.max(wa), tb.min(wb));
                if b > a {
                    arcs.push((a, b));
                }
            }
        }
        for i in 0..nr {
            for (r, wr) in legendre_on(&rule, ra + hr * i as f64, ra + hr * (i + 1) as f64) {
                for &(a, b) in &arcs {
                    let nt = ((b - a) * r.max(step) / step).ceil() as usize;
                    let ht = (b - a) / nt as f64;
                    for k in 0..nt {
                        for (t, wt) in
                            legendre_on(&rule, a + ht * k as f64, a + ht * (k + 1) as f64)
                        {
                            total += wr * wt * r * dens(r * t.cos(), r * t.sin());
                        }
                    }
                }
            }
        }
    }
    Ok(total)
}

/// `pi^{-d} int f(rho0 + rho) exp(-|rho|^2) drho` by tensor Gauss-Hermite quadrature,
/// dropping nodes beyond `cutoff`.
pub fn gaussian_phase_space_average(
    f: impl Fn(&PhasePoint) -> f64 + Sync,
    rho0: &PhasePoint,
    cutoff: f64,
    nodes: usize,
) -> Result<f64> {
    if nodes == 0 || !(cutoff > 0.0) {
        return invalid("need nodes >= 1 and a positive cutoff");
    }
    let rule = gauss_hermite(nodes);
    let d = rho0.dim();
    let dims = 2 * d;
    let total = nodes.pow(dims as u32);
    let terms: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|mut k| {
            let mut shift = vec![0.0; dims];
            let mut w = 1.0;
            for s in shift.iter_mut() {
                let i = k % nodes;
                k /= nodes;
                *s = rule.nodes[i];
                w *= rule.weights[i];
            }
            if shift.iter().map(|v| v * v).sum::<f64>().sqrt() > cutoff {
                return 0.0;
            }
            let p = PhasePoint {
                x: (0..d).map(|j| rho0.x[j] + shift[j]).collect(),
                xi: (0..d).map(|j| rho0.xi[j] + shift[d + j]).collect(),
            };
            w * f(&p)
        })
        .collect();
    // summed in index order so the result does not depend on the thread count
    Ok(terms.iter().sum::<f64>() / PI.powi(d as i32))
}

/// Row-major little-endian dump of a complex matrix: header `d, n, T, band`, then pairs
/// `(re, im)`.
pub fn matrix_dump(
    basis: &HermiteBasis,
    horizon: f64,
    band: (f64, f64),
    g: &DMatrix<Complex64>,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + 16 * g.len());
    out.extend((basis.dim() as u64).to_le_bytes());
    out.extend((g.nrows() as u64).to_le_bytes());
    for v in [horizon, band.0, band.1] {
        out.extend(v.to_le_bytes());
    }
    for a in 0..g.nrows() {
        for b in 0..g.ncols() {
            out.extend(g[(a, b)].re.to_le_bytes());
            out.extend(g[(a, b)].im.to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::{IntervalUnion, Tail};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn time_rule(horizon: f64, panels_n: usize) -> Vec<(f64, f64)> {
        let rule = gauss_legendre(20);
        let h = horizon / panels_n as f64;
        (0..panels_n)
            .flat_map(|i| legendre_on(&rule, h * i as f64, h * (i + 1) as f64).collect::<Vec<_>>())
            .collect()
    }

    fn half_intervals() -> ObservationSet {
        ObservationSet::spherical(
            IntervalUnion::new(vec![], Some(Tail::arithmetic(0.0, 0.5, 0.5, 0.0))).unwrap(),
        )
    }

    #[test]
    fn ground_state_value() {
        for nu in [0.5, 1.0, 3.0] {
            let v = hermite_eval(nu, 0, 0.0).unwrap();
            assert!((v - (nu / PI).powf(0.25)).abs() < 1e-15);
        }
    }

    #[test]
    fn orthonormal_functions() {
        let nu: f64 = 1.7;
        let rule = gauss_legendre(400);
        let lim = (129f64.sqrt() + 10.0) / nu.sqrt();
        let mut gram = DMatrix::<f64>::zeros(64, 64);
        for (x, w) in legendre_on(&rule, -lim, lim) {
            let h = DVector::from_vec(hermite_all(nu, 64, x).unwrap());
            gram += w * &h * h.transpose();
        }
        assert!((gram - DMatrix::identity(64, 64)).amax() < 1e-8);
    }

    #[test]
    fn eigen_relation_residual() {
        let nu = 1.3;
        let h = 1e-3;
        for n in [0, 1, 5, 17, 30] {
            let mut worst = 0.0_f64;
            for k in -40..=40 {
                let x = 0.15 * k as f64;
                let f = |s: f64| hermite_eval(nu, n, s).unwrap();
                let d2 = (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h)
                    - f(x - 2.0 * h))
                    / (12.0 * h * h);
                let lhs = 0.5 * (nu * nu * x * x * f(x) - d2);
                worst = worst.max((lhs - nu * (n as f64 + 0.5) * f(x)).abs());
            }
            assert!(worst < 1e-6, "n = {n}: {worst}");
        }
    }

    #[test]
    fn large_index_stays_finite() {
        let v = hermite_all(1.0, 2001, 59.0).unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(v[2000].abs() > 1e-3);
        assert!(matches!(hermite_all(1.0, 2002, 0.0), Err(Error::Range(_))));
        assert!(matches!(hermite_eval(1.0, 3, 61.0), Err(Error::Range(_))));
    }

    #[test]
    fn full_space_is_identity() {
        let b = HermiteBasis::new(vec![1.0], 32).unwrap();
        assert_eq!(
            indicator_matrix(&b, &ObservationSet::FullSpace).unwrap(),
            DMatrix::identity(32, 32)
        );
        // the same through the quadrature path: a half line and its mirror
        let pos = indicator_matrix(
            &b,
            &ObservationSet::HalfLineCone {
                positive: true,
                negative: false,
            },
        )
        .unwrap();
        let neg = indicator_matrix(
            &b,
            &ObservationSet::HalfLineCone {
                positive: false,
                negative: true,
            },
        )
        .unwrap();
        assert!((pos + neg - DMatrix::identity(32, 32)).amax() < 1e-8);
    }

    #[test]
    fn even_sets_respect_parity() {
        let b = HermiteBasis::new(vec![1.0], 48).unwrap();
        let m = indicator_matrix(&b, &half_intervals()).unwrap();
        for i in 0..48 {
            for j in 0..48 {
                if (i + j) % 2 == 1 {
                    assert!(m[(i, j)].abs() < 1e-12);
                }
            }
        }
        let eig = SymmetricEigen::new(m);
        assert!(eig
            .eigenvalues
            .iter()
            .all(|&l| (-1e-8..=1.0 + 1e-8).contains(&l)));
    }

    #[test]
    fn outer_mass_grows_with_energy() {
        let a = 2.0;
        let outside =
            ObservationSet::spherical(IntervalUnion::bounded(vec![(a, f64::INFINITY)]).unwrap());
        let b = HermiteBasis::new(vec![1.0], 96).unwrap();
        let m = indicator_matrix(&b, &outside).unwrap();
        let b2 = HermiteBasis::new(vec![1.0], 144).unwrap();
        let m2 = indicator_matrix(&b2, &outside).unwrap();
        let diag: Vec<f64> = (0..96).map(|n| m[(n, n)]).collect();
        for n in 0..96 {
            assert!((m2[(n, n)] - diag[n]).abs() < 1e-8);
        }
        // monotone along each parity once past the turning point
        for n in (10..94).step_by(4) {
            assert!(diag[n + 4] >= diag[n] - 1e-12, "{n}");
        }
        assert!(diag[95] > 0.85 && diag[0] < 0.01);
    }

    #[test]
    fn gramian_examples() {
        let b = HermiteBasis::new(vec![1.0], 24).unwrap();
        let g = gramian(b.eigenvalues(), &DMatrix::identity(24, 24), 3.0).unwrap();
        assert!(
            (g - DMatrix::<Complex64>::identity(24, 24) * Complex64::new(3.0, 0.0)).camax() < 1e-14
        );
        let m = indicator_matrix(
            &b,
            &ObservationSet::Line {
                intervals: vec![(0.3, 2.0)],
            },
        )
        .unwrap();
        let g = gramian(b.eigenvalues(), &m, 2.0 * PI).unwrap();
        for i in 0..24 {
            for j in 0..24 {
                let want = if i == j { 2.0 * PI * m[(i, i)] } else { 0.0 };
                assert!((g[(i, j)] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gramian_matches_time_quadrature() {
        let b = HermiteBasis::new(vec![1.0], 40).unwrap();
        let set = ObservationSet::Line {
            intervals: vec![(-1.0, 0.5), (2.0, 3.0)],
        };
        let m = indicator_matrix(&b, &set).unwrap();
        let t = 2.3;
        let g = gramian(b.eigenvalues(), &m, t).unwrap();
        let mc = m.map(|v| Complex64::new(v, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let u = DVector::from_fn(40, |_, _| {
                Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            });
            let closed = u.dotc(&(&g * &u)).re;
            let mut quad = 0.0;
            for (s, w) in time_rule(t, 40) {
                let v = spectral_propagate(&b, &u, s);
                quad += w * v.dotc(&(&mc * &v)).re;
            }
            assert!((closed - quad).abs() < 1e-6, "{closed} vs {quad}");
        }
    }

    #[test]
    fn full_space_band_floor_is_horizon() {
        let b = HermiteBasis::new(vec![1.0], 64).unwrap();
        let rep = band_report(&b, &ObservationSet::FullSpace, 2.0 * PI, (10.0, 20.0)).unwrap();
        assert!((rep.min_eig - 2.0 * PI).abs() < 1e-12);
        let g = gramian(b.eigenvalues(), &DMatrix::identity(64, 64), 2.0 * PI).unwrap();
        let (lam, _) = band_obs_cost(&g, &b, (10.0, 20.0), 2.0 * PI).unwrap();
        assert!((lam - 2.0 * PI).abs() < 1e-12);
        assert!(matches!(
            b.band_modes((10.0, 60.0)),
            Err(Error::Truncation(_))
        ));
    }

    #[test]
    fn periodicity_scales_the_floor() {
        let b = HermiteBasis::new(vec![1.0], 64).unwrap();
        let set = half_intervals();
        let one = band_report(&b, &set, 2.0 * PI, (10.0, 20.0))
            .unwrap()
            .min_eig;
        let three = band_report(&b, &set, 6.0 * PI, (10.0, 20.0))
            .unwrap()
            .min_eig;
        assert!((three - 3.0 * one).abs() < 1e-9 * three);
    }

    #[test]
    fn parity_blocks_give_the_floor() {
        let b = HermiteBasis::new(vec![1.0], 64).unwrap();
        let set = ObservationSet::spherical(
            IntervalUnion::bounded(vec![(1.0, 2.5), (4.0, 5.0)]).unwrap(),
        );
        let idx = b.band_modes((5.0, 30.0)).unwrap();
        let m = indicator_submatrix(&b, &set, &idx).unwrap();
        let g = gramian(&mode_eigenvalues(&b, &idx), &m, 1.7).unwrap();
        let (full, _) = min_eigenpair(&g, 1.7).unwrap();
        let block = |parity: usize| {
            let sel: Vec<usize> = (0..idx.len())
                .filter(|&k| b.mode(idx[k])[0] % 2 == parity)
                .collect();
            let sub = DMatrix::from_fn(sel.len(), sel.len(), |a, c| g[(sel[a], sel[c])]);
            min_eigenpair(&sub, 1.7).unwrap().0
        };
        assert!((full - block(0).min(block(1))).abs() < 1e-10);
    }

    #[test]
    fn ground_state_coherent() {
        let b = HermiteBasis::new(vec![1.3], 16).unwrap();
        let c = coherent_coeffs(&b, &PhasePoint::from_flat(&[0.0, 0.0]).unwrap()).unwrap();
        assert!((c[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(c.iter().skip(1).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn coherent_norm_and_truncation() {
        let b = HermiteBasis::new(vec![1.0], 64).unwrap();
        // |alpha|^2 = 10
        let rho = PhasePoint::from_flat(&[20f64.sqrt(), 0.0]).unwrap();
        let c = coherent_coeffs(&b, &rho).unwrap();
        assert!((c.norm_squared() - 1.0).abs() < 1e-8);
        let far = PhasePoint::from_flat(&[12.0, 0.0]).unwrap();
        assert!(matches!(
            coherent_coeffs(&b, &far),
            Err(Error::Truncation(_))
        ));
    }

    #[test]
    fn coherent_coefficients_match_quadrature() {
        let nu = 1.4;
        let b = HermiteBasis::new(vec![nu], 40).unwrap();
        let (x0, p0) = (0.7, -1.9);
        let c = coherent_coeffs(&b, &PhasePoint::from_flat(&[x0, p0]).unwrap()).unwrap();
        let rule = gauss_legendre(600);
        let mut q = vec![Complex64::new(0.0, 0.0); 40];
        for (x, w) in legendre_on(&rule, -15.0, 15.0) {
            let phi = (nu / PI).powf(0.25)
                * Complex64::from_polar(1.0, -0.5 * p0 * x0 + p0 * x)
                * (-0.5 * nu * (x - x0).powi(2)).exp();
            let h = hermite_all(nu, 40, x).unwrap();
            for n in 0..40 {
                q[n] += w * h[n] * phi;
            }
        }
        for n in 0..40 {
            assert!((q[n] - c[n]).norm() < 1e-7, "n = {n}");
        }
    }

    #[test]
    fn period_and_half_period() {
        let nu = 2.0;
        let rho = PhasePoint::from_flat(&[0.4, -0.3, 1.0, 0.5]).unwrap();
        let (back, phase) = propagate_coherent(&[nu, nu], &rho, 2.0 * PI / nu).unwrap();
        assert!(back.distance(&rho) < 1e-12);
        assert!((phase - Complex64::from_polar(1.0, -2.0 * PI)).norm() < 1e-12);
        let (half, _) = propagate_coherent(&[nu, nu], &rho, PI / nu).unwrap();
        assert!(half.distance(&rho.scaled(-1.0)) < 1e-12);
        // spectral form of the point reflection
        let b = HermiteBasis::new(vec![nu, nu], 24).unwrap();
        let c = coherent_coeffs(&b, &rho).unwrap();
        let evolved = spectral_propagate(&b, &c, PI / nu);
        let reflected = coherent_coeffs(&b, &half).unwrap() * Complex64::from_polar(1.0, -PI);
        assert!((evolved - reflected).camax() < 1e-8);
    }

    #[test]
    fn coherent_evolution_is_spectral() {
        let b = HermiteBasis::new(vec![1.0], 64).unwrap();
        let rho = PhasePoint::from_flat(&[2.0, 6f64.sqrt()]).unwrap();
        let alpha = coherent_alpha(&b.nu, &rho)[0].norm_sqr();
        assert!((alpha - 5.0).abs() < 1e-12);
        for t in [0.37, 1.9, 4.4] {
            let c = coherent_coeffs(&b, &rho).unwrap();
            let (rt, phase) = propagate_coherent(&b.nu, &rho, t).unwrap();
            let want = coherent_coeffs(&b, &rt).unwrap() * phase;
            assert!((spectral_propagate(&b, &c, t) - want).camax() < 1e-8);
        }
    }

    #[test]
    fn coherent_mass_examples() {
        let rho = PhasePoint::from_flat(&[0.8, 3.0]).unwrap();
        assert_eq!(
            coherent_mass_in_set(&rho, &ObservationSet::FullSpace, &[1.0]).unwrap(),
            1.0
        );
        let left = ObservationSet::Line {
            intervals: vec![(f64::NEG_INFINITY, 0.8)],
        };
        assert!((coherent_mass_in_set(&rho, &left, &[1.0]).unwrap() - 0.5).abs() < 1e-12);
        // the planar quadrature reproduces a product of error functions on a quadrant
        let rho2 = PhasePoint::from_flat(&[1.0, -0.5, 0.0, 2.0]).unwrap();
        let quadrant = ObservationSet::ConicalArcs {
            arcs: vec![(0.0, PI / 2.0)],
        };
        let nu = [1.0, 2.0];
        let m = coherent_mass_in_set(&rho2, &quadrant, &nu).unwrap();
        let want = 0.25 * (1.0 + libm::erf(1.0)) * (1.0 + libm::erf(nu[1].sqrt() * -0.5));
        assert!((m - want).abs() < 1e-10, "{m} vs {want}");
    }

    #[test]
    fn symmetric_cones_capture_half_the_period() {
        let eps = 1e-3;
        let set = ObservationSet::ConicalArcs {
            arcs: vec![(eps / 2.0, PI - eps / 2.0)],
        };
        let nu = 1.5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let v: Vec<f64> = (0..4).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
            let rho = PhasePoint::from_flat(&v).unwrap();
            let mut acc = 0.0;
            for (t, w) in time_rule(2.0 * PI / nu, 24) {
                let (rt, _) = propagate_coherent(&[nu, nu], &rho, t).unwrap();
                acc += w * coherent_mass_in_set(&rt, &set, &[nu, nu]).unwrap();
            }
            // the missing arcs hold mass at most eps / pi of the period
            assert!(
                acc <= PI / nu + 1e-9 && acc >= PI / nu * (1.0 - 2.0 * eps),
                "{acc}"
            );
        }
    }

    #[test]
    fn gaussian_average_examples() {
        let rho0 = PhasePoint::from_flat(&[0.3, -1.0, 2.0, 0.5]).unwrap();
        let one = gaussian_phase_space_average(|_| 1.0, &rho0, 50.0, 8).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
        let lin = |p: &PhasePoint| 2.0 * p.x[0] - p.x[1] + 0.5 * p.xi[1];
        let avg = gaussian_phase_space_average(lin, &rho0, 50.0, 8).unwrap();
        assert!((avg - lin(&rho0)).abs() < 1e-12);
    }

    #[test]
    fn planar_full_band_is_identity() {
        let b = HermiteBasis::new(vec![1.0, 1.0], 12).unwrap();
        let idx = b.band_modes((3.0, 7.0)).unwrap();
        let s = ObservationSet::ConicalArcs {
            arcs: vec![(0.0, PI)],
        };
        let t = ObservationSet::ConicalArcs {
            arcs: vec![(PI, 2.0 * PI)],
        };
        let sum =
            indicator_submatrix(&b, &s, &idx).unwrap() + indicator_submatrix(&b, &t, &idx).unwrap();
        assert!((sum - DMatrix::identity(idx.len(), idx.len())).amax() < 1e-8);
    }

    #[test]
    fn dump_layout() {
        let b = HermiteBasis::new(vec![1.0], 4).unwrap();
        let g = gramian(b.eigenvalues(), &DMatrix::identity(4, 4), 1.5).unwrap();
        let bytes = matrix_dump(&b, 1.5, (0.0, 3.0), &g);
        assert_eq!(bytes.len(), 40 + 16 * 16);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 1.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn gramian_sandwich(t in 0.1..10.0f64, a in -3.0..3.0f64, w in 0.2..4.0f64) {
            let b = HermiteBasis::new(vec![1.0], 32).unwrap();
            let m = indicator_matrix(&b, &ObservationSet::Line { intervals: vec![(a, a + w)] }).unwrap();
            let g = gramian(b.eigenvalues(), &m, t).unwrap();
            let eig = SymmetricEigen::new(g);
            for &l in eig.eigenvalues.iter() {
                prop_assert!(l >= -1e-10 && l <= t + 1e-10);
            }
        }

        #[test]
        fn coherent_egorov_identity(x in -3.0..3.0f64, p in -3.0..3.0f64, t in 0.2..7.0f64) {
            let b = HermiteBasis::new(vec![1.0], 64).unwrap();
            let set = ObservationSet::Line { intervals: vec![(-0.5, 1.5), (2.5, 4.0)] };
            let m = indicator_matrix(&b, &set).unwrap();
            let g = gramian(b.eigenvalues(), &m, t).unwrap();
            let rho = PhasePoint::from_flat(&[x, p]).unwrap();
            let c = coherent_coeffs(&b, &rho).unwrap();
            let lhs = c.dotc(&(&g * &c)).re;
            let mut rhs = 0.0;
            for (s, w) in time_rule(t, 16) {
                let (rs, _) = propagate_coherent(&b.nu, &rho, s).unwrap();
                rhs += w * coherent_mass_in_set(&rs, &set, &b.nu).unwrap();
            }
            prop_assert!((lhs - rhs).abs() < 1e-6, "{} vs {}", lhs, rhs);
        }
    }
}

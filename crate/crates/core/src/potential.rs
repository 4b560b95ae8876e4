//! Confining potentials with closed-form derivatives.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Gaussian bump `amplitude * exp(-|x - center|^2 / (2 width^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub amplitude: f64,
    pub width: f64,
}

/// Parametric potential `V`.
///
/// Serialized with an internal `kind` tag, e.g. `{"kind":"harmonic","matrix":[[1,0],[0,4]]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `V(x) = x.Ax / 2` with `A` symmetric positive definite.
    Harmonic { matrix: Vec<Vec<f64>> },
    /// `V(x) = c <x>^(2m)` with `<x> = sqrt(1 + |x|^2)`.
    PowerConfining { m: f64, c: f64, dim: usize },
    /// One-dimensional `V(x) = (2 + sin(a log<x>)) x^2`.
    CriticalPoints { a: f64 },
    /// Base potential plus a bounded bump.
    Perturbed {
        base: Box<PotentialSpec>,
        bump: Bump,
    },
}

/// Value, gradient and Hessian at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<Vec<f64>>,
}

fn japanese_sq(x: &[f64]) -> f64 {
    1.0 + x.iter().map(|v| v * v).sum::<f64>()
}

impl PotentialSpec {
    pub fn harmonic(matrix: Vec<Vec<f64>>) -> Self {
        PotentialSpec::Harmonic { matrix }
    }

    /// Diagonal harmonic oscillator with the given frequencies.
    pub fn harmonic_diag(freqs: &[f64]) -> Self {
        let d = freqs.len();
        let mut matrix = vec![vec![0.0; d]; d];
        for (j, nu) in freqs.iter().enumerate() {
            matrix[j][j] = nu * nu;
        }
        PotentialSpec::Harmonic { matrix }
    }

    pub fn dim(&self) -> usize {
        match self {
            PotentialSpec::Harmonic { matrix } => matrix.len(),
            PotentialSpec::PowerConfining { dim, .. } => *dim,
            PotentialSpec::CriticalPoints { .. } => 1,
            PotentialSpec::Perturbed { base, .. } => base.dim(),
        }
    }

    /// Growth exponent `m` in `V ~ <x>^(2m)`.
    pub fn growth_exponent(&self) -> f64 {
        match self {
            PotentialSpec::Harmonic { .. } | PotentialSpec::CriticalPoints { .. } => 1.0,
            PotentialSpec::PowerConfining { m, .. } => *m,
            PotentialSpec::Perturbed { base, .. } => base.growth_exponent(),
        }
    }

    /// `m <= 1`, the regime covered by the observability theorem.
    pub fn is_subquadratic(&self) -> bool {
        self.growth_exponent() <= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialSpec::Harmonic { matrix } => {
                let d = matrix.len();
                if d == 0 {
                    return invalid("harmonic matrix is empty");
                }
                if matrix.iter().any(|row| row.len() != d) {
                    return invalid("harmonic matrix is not square");
                }
                let scale = matrix
                    .iter()
                    .flatten()
                    .fold(0.0_f64, |acc, v| acc.max(v.abs()));
                for i in 0..d {
                    for j in 0..d {
                        if !matrix[i][j].is_finite() {
                            return invalid("harmonic matrix has non-finite entries");
                        }
                        if (matrix[i][j] - matrix[j][i]).abs() > 1e-12 * scale.max(1.0) {
                            return invalid("harmonic matrix is not symmetric");
                        }
                    }
                }
                let eig = SymmetricEigen::new(to_dmatrix(matrix));
                if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
                    return invalid("harmonic matrix is not positive definite");
                }
                Ok(())
            }
            PotentialSpec::PowerConfining { m, c, dim } => {
                if !(*m > 0.0 && m.is_finite()) || !(*c > 0.0 && c.is_finite()) || *dim == 0 {
                    return invalid("power-confining potential needs m > 0, c > 0, dim >= 1");
                }
                Ok(())
            }
            PotentialSpec::CriticalPoints { a } => {
                if !(*a > 0.0 && a.is_finite()) {
                    return invalid("critical-point potential needs a > 0");
                }
                Ok(())
            }
            PotentialSpec::Perturbed { base, bump } => {
                base.validate()?;
                if bump.center.len() != base.dim() {
                    return Err(Error::Dimension {
                        expected: base.dim(),
                        got: bump.center.len(),
                    });
                }
                if !(bump.width > 0.0) || !bump.amplitude.is_finite() {
                    return invalid("bump needs width > 0 and finite amplitude");
                }
                Ok(())
            }
        }
    }

    /// A lower bound of `V` over the whole space.
    pub fn lower_bound(&self) -> f64 {
        match self {
            PotentialSpec::Harmonic { .. } | PotentialSpec::CriticalPoints { .. } => 0.0,
            PotentialSpec::PowerConfining { c, .. } => *c,
            PotentialSpec::Perturbed { base, bump } => base.lower_bound() + bump.amplitude.min(0.0),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            PotentialSpec::Harmonic { matrix } => {
                let mut s = 0.0;
                for (i, row) in matrix.iter().enumerate() {
                    let ax: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                    s += x[i] * ax;
                }
                0.5 * s
            }
            PotentialSpec::PowerConfining { m, c, .. } => c * japanese_sq(x).powf(*m),
            PotentialSpec::CriticalPoints { a } => {
                let x0 = x[0];
                let l = 0.5 * (1.0 + x0 * x0).ln();
                (2.0 + (a * l).sin()) * x0 * x0
            }
            PotentialSpec::Perturbed { base, bump } => base.value(x) + bump_value(bump, x),
        }
    }

    /// Writes `grad V(x)` into `out`.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            PotentialSpec::Harmonic { matrix } => {
                for (o, row) in out.iter_mut().zip(matrix) {
                    *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            PotentialSpec::PowerConfining { m, c, .. } => {
                let w = japanese_sq(x);
                let f = 2.0 * m * c * w.powf(m - 1.0);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = f * xi;
                }
            }
            PotentialSpec::CriticalPoints { a } => {
                out[0] = critical_points_derivative(*a, x[0]);
            }
            PotentialSpec::Perturbed { base, bump } => {
                base.grad_into(x, out);
                let g = bump_value(bump, x);
                let w2 = bump.width * bump.width;
                for ((o, xi), ci) in out.iter_mut().zip(x).zip(&bump.center) {
                    *o -= g * (xi - ci) / w2;
                }
            }
        }
    }

    /// Value, gradient and Hessian in closed form.
    pub fn eval(&self, x: &[f64]) -> PotentialEval {
        let d = self.dim();
        let mut grad = vec![0.0; d];
        self.grad_into(x, &mut grad);
        PotentialEval {
            value: self.value(x),
            grad,
            hess: self.hessian(x),
        }
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim();
        match self {
            PotentialSpec::Harmonic { matrix } => matrix.clone(),
            PotentialSpec::PowerConfining { m, c, .. } => {
                let w = japanese_sq(x);
                let f1 = 2.0 * m * c * w.powf(m - 1.0);
                let f2 = 4.0 * m * (m - 1.0) * c * w.powf(m - 2.0);
                let mut h = vec![vec![0.0; d]; d];
                for i in 0..d {
                    for j in 0..d {
                        h[i][j] = f2 * x[i] * x[j] + if i == j { f1 } else { 0.0 };
                    }
                }
                h
            }
            PotentialSpec::CriticalPoints { a } => {
                let x0 = x[0];
                let w = 1.0 + x0 * x0;
                let l = 0.5 * w.ln();
                let (s, co) = (a * l).sin_cos();
                let x2 = x0 * x0;
                let v2 = 2.0 * (2.0 + s) + 2.0 * a * co * x2 / w - a * a * s * x2 * x2 / (w * w)
                    + a * co * (3.0 * x2 + x2 * x2) / (w * w);
                vec![vec![v2]]
            }
            PotentialSpec::Perturbed { base, bump } => {
                let mut h = base.hessian(x);
                let g = bump_value(bump, x);
                let w2 = bump.width * bump.width;
                for i in 0..d {
                    for j in 0..d {
                        let di = x[i] - bump.center[i];
                        let dj = x[j] - bump.center[j];
                        h[i][j] += g * (di * dj / (w2 * w2) - if i == j { 1.0 / w2 } else { 0.0 });
                    }
                }
                h
            }
        }
    }

    /// Range of `V(x) / <x>^(2m)` over sampled points with `r_min <= |x| <= r_max`.
    ///
    /// Directions are the coordinate axes, their diagonals and their negatives.
    pub fn growth_sandwich(&self, r_min: f64, r_max: f64, radii: usize) -> (f64, f64) {
        let d = self.dim();
        let m = self.growth_exponent();
        let dirs = sample_directions(d);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        let radii = radii.max(2);
        for k in 0..radii {
            let r = r_min * (r_max / r_min).powf(k as f64 / (radii - 1) as f64);
            for dir in &dirs {
                let x: Vec<f64> = dir.iter().map(|u| r * u).collect();
                let ratio = self.value(&x) / japanese_sq(&x).powf(m);
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
        (lo, hi)
    }
}

fn bump_value(bump: &Bump, x: &[f64]) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(&bump.center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    bump.amplitude * (-r2 / (2.0 * bump.width * bump.width)).exp()
}

/// `V'(x)` for `V = (2 + sin(a log<x>)) x^2`, in the factored form
/// `x/<x>^2 * (2<x>^2 (2 + sin) + a x^2 cos)`.
pub fn critical_points_derivative(a: f64, x: f64) -> f64 {
    let w = 1.0 + x * x;
    let l = 0.5 * w.ln();
    let (s, c) = (a * l).sin_cos();
    x / w * (2.0 * w * (2.0 + s) + a * x * x * c)
}

/// Positive zeros of `V'` for the critical-point potential with `x <= x_max`.
///
/// The bracket `2<x>^2 (2 + sin) + a x^2 cos` is scanned on a grid uniform in
/// `log<x>` and each sign change is refined by bisection.
pub fn critical_points(a: f64, x_max: f64) -> Vec<f64> {
    let bracket = |x: f64| {
        let w = 1.0 + x * x;
        let l = 0.5 * w.ln();
        let (s, c) = (a * l).sin_cos();
        2.0 * w * (2.0 + s) + a * x * x * c
    };
    let l_max = 0.5 * (1.0 + x_max * x_max).ln();
    let steps = ((l_max * a.max(1.0)) * 64.0).ceil().max(64.0) as usize;
    let x_of = |l: f64| (((2.0 * l).exp() - 1.0).max(0.0)).sqrt();
    let mut roots = Vec::new();
    let mut x_prev = x_of(1e-9);
    let mut f_prev = bracket(x_prev);
    for k in 1..=steps {
        let x = x_of(l_max * k as f64 / steps as f64);
        let f = bracket(x);
        if f_prev.signum() != f.signum() {
            let (mut lo, mut hi) = (x_prev, x);
            let flo = f_prev;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if bracket(mid).signum() == flo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        x_prev = x;
        f_prev = f;
    }
    roots
}

fn sample_directions(d: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for j in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[j] = sign;
            dirs.push(e);
        }
    }
    if d > 1 {
        let s = 1.0 / (d as f64).sqrt();
        dirs.push(vec![s; d]);
        dirs.push(vec![-s; d]);
        let mut alt = vec![s; d];
        alt[0] = -s;
        dirs.push(alt);
    }
    dirs
}

pub(crate) fn to_dmatrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let d = m.len();
    DMatrix::from_fn(d, d, |i, j| m[i][j])
}

/// Result of the numerical principal-symbol comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolCheck {
    /// Upper radius of each decade of the grid.
    pub decade_radii: Vec<f64>,
    /// Sup of the weighted derivative differences over each decade.
    pub decade_sup: Vec<f64>,
    pub bounded: bool,
}

/// Compares `v` and `v0` up to second derivatives.
///
/// The weighted difference `|d^k (V - V0)(x)| <x>^(k + 1 - 2m)`, `k <= 2`, is
/// sampled along fixed directions on a log grid in `|x|` up to `r_max`; it is
/// reported per decade and declared bounded when the last decade does not exceed
/// twice the first one.
pub fn same_principal_symbol(
    v: &PotentialSpec,
    v0: &PotentialSpec,
    r_max: f64,
) -> Result<SymbolCheck> {
    if v.dim() != v0.dim() {
        return Err(Error::Dimension {
            expected: v0.dim(),
            got: v.dim(),
        });
    }
    let d = v.dim();
    let m = v0.growth_exponent();
    let dirs = sample_directions(d);
    let decades = r_max.log10().ceil().max(1.0) as usize;
    let mut decade_radii = Vec::new();
    let mut decade_sup = Vec::new();
    for k in 0..decades {
        let r_hi = 10f64.powi(k as i32 + 1).min(r_max);
        let r_lo = 10f64.powi(k as i32);
        let mut sup = 0.0_f64;
        for s in 0..=32 {
            let r = r_lo * (r_hi / r_lo).powf(s as f64 / 32.0);
            for dir in &dirs {
                let x: Vec<f64> = dir.iter().map(|u| r * u).collect();
                let jw = japanese_sq(&x).sqrt();
                let e = v.eval(&x);
                let e0 = v0.eval(&x);
                let d0 = (e.value - e0.value).abs() * jw.powf(1.0 - 2.0 * m);
                let d1 = e
                    .grad
                    .iter()
                    .zip(&e0.grad)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    * jw.powf(2.0 - 2.0 * m);
                let d2 = e
                    .hess
                    .iter()
                    .flatten()
                    .zip(e0.hess.iter().flatten())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    * jw.powf(3.0 - 2.0 * m);
                sup = sup.max(d0).max(d1).max(d2);
            }
        }
        decade_radii.push(r_hi);
        decade_sup.push(sup);
    }
    let first = decade_sup[0].max(1e-300);
    let last = *decade_sup.last().unwrap();
    Ok(SymbolCheck {
        bounded: last <= 2.0 * first,
        decade_radii,
        decade_sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fd_grad(v: &PotentialSpec, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|j| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] += h;
                xm[j] -= h;
                (v.value(&xp) - v.value(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn fd_hess(v: &PotentialSpec, x: &[f64]) -> Vec<Vec<f64>> {
        let h = 1e-5;
        let d = x.len();
        let mut out = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let mut gp = vec![0.0; d];
            let mut gm = vec![0.0; d];
            v.grad_into(&xp, &mut gp);
            v.grad_into(&xm, &mut gm);
            for i in 0..d {
                out[i][j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn harmonic_identity_case() {
        let v = PotentialSpec::harmonic(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let e = v.eval(&[1.0, 0.0]);
        assert_eq!(e.value, 0.5);
        assert_eq!(e.grad, vec![1.0, 0.0]);
        assert_eq!(e.hess, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let specs = vec![
            PotentialSpec::harmonic(vec![vec![2.0, 0.3], vec![0.3, 1.0]]),
            PotentialSpec::PowerConfining {
                m: 1.5,
                c: 0.7,
                dim: 2,
            },
            PotentialSpec::PowerConfining {
                m: 0.5,
                c: 1.0,
                dim: 2,
            },
            PotentialSpec::CriticalPoints { a: 4.0 },
            PotentialSpec::Perturbed {
                base: Box::new(PotentialSpec::harmonic_diag(&[1.0, 2.0])),
                bump: Bump {
                    center: vec![0.2, -0.1],
                    amplitude: 3.0,
                    width: 0.8,
                },
            },
        ];
        for v in specs {
            v.validate().unwrap();
            let pts: Vec<Vec<f64>> = if v.dim() == 1 {
                vec![vec![0.3], vec![-2.5], vec![7.0]]
            } else {
                vec![vec![0.3, -0.4], vec![1.5, 2.0], vec![-3.0, 0.7]]
            };
            for x in pts {
                let e = v.eval(&x);
                let g = fd_grad(&v, &x);
                let h = fd_hess(&v, &x);
                for j in 0..x.len() {
                    assert_abs_diff_eq!(e.grad[j], g[j], epsilon = 1e-5 * (1.0 + g[j].abs()));
                    for i in 0..x.len() {
                        assert_abs_diff_eq!(
                            e.hess[i][j],
                            h[i][j],
                            epsilon = 1e-4 * (1.0 + h[i][j].abs())
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        assert!(
            PotentialSpec::harmonic(vec![vec![1.0, 2.0], vec![0.0, 1.0]])
                .validate()
                .is_err()
        );
        assert!(
            PotentialSpec::harmonic(vec![vec![1.0, 0.0], vec![0.0, -1.0]])
                .validate()
                .is_err()
        );
        assert!(PotentialSpec::CriticalPoints { a: 0.0 }.validate().is_err());
    }

    #[test]
    fn critical_points_exist_in_each_log_window() {
        let a = 4.0;
        let roots = critical_points(a, 1e6);
        assert!(roots.len() >= 4, "found {roots:?}");
        for &r in &roots {
            let d = critical_points_derivative(a, r);
            let scale = r * r;
            assert!(d.abs() <= 1e-9 * scale, "V'({r}) = {d}");
        }
        // one log-period of sin(a log<x>) is 2 pi / a; every such window past the
        // first contains a zero
        let logs: Vec<f64> = roots.iter().map(|r| 0.5 * (1.0 + r * r).ln()).collect();
        for w in logs.windows(2) {
            assert!(w[1] - w[0] <= 2.0 * std::f64::consts::PI / a + 1e-9);
        }
    }

    #[test]
    fn no_critical_points_below_threshold() {
        assert!(critical_points(3.0, 1e8).is_empty());
    }

    #[test]
    fn half_power_gradient_is_bounded() {
        let v = PotentialSpec::PowerConfining {
            m: 0.5,
            c: 1.0,
            dim: 1,
        };
        let mut g = [0.0];
        let mut sup = 0.0_f64;
        for k in 0..=600 {
            let x = 10f64.powf(-3.0 + 9.0 * k as f64 / 600.0);
            for s in [1.0, -1.0] {
                v.grad_into(&[s * x], &mut g);
                sup = sup.max(g[0].abs());
            }
        }
        assert!(sup <= 1.0, "sup |grad| = {sup}");
    }

    #[test]
    fn growth_sandwich_for_power_law() {
        let v = PotentialSpec::PowerConfining {
            m: 0.75,
            c: 2.0,
            dim: 2,
        };
        let (lo, hi) = v.growth_sandwich(1.0, 1e4, 20);
        assert_abs_diff_eq!(lo, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 2.0, epsilon = 1e-12);
        let c = PotentialSpec::CriticalPoints { a: 4.0 };
        let (lo, hi) = c.growth_sandwich(1.0, 1e4, 50);
        assert!(lo > 0.4 && hi < 3.0);
    }

    #[test]
    fn principal_symbol_test() {
        let base = PotentialSpec::harmonic_diag(&[1.0, 1.5]);
        let bumped = PotentialSpec::Perturbed {
            base: Box::new(base.clone()),
            bump: Bump {
                center: vec![0.0, 0.0],
                amplitude: 5.0,
                width: 1.0,
            },
        };
        assert!(same_principal_symbol(&bumped, &base, 1e4).unwrap().bounded);
        let other = PotentialSpec::harmonic_diag(&[1.0, 1.6]);
        assert!(!same_principal_symbol(&other, &base, 1e4).unwrap().bounded);
    }

    #[test]
    fn json_shape() {
        let v: PotentialSpec =
            serde_json::from_str(r#"{"kind":"harmonic","matrix":[[1.0,0.0],[0.0,4.0]]}"#).unwrap();
        assert_eq!(v, PotentialSpec::harmonic_diag(&[1.0, 2.0]));
    }
}

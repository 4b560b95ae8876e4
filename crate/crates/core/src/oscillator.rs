//! Arithmetic and closed forms for two-dimensional harmonic oscillators.

use std::f64::consts::PI;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::time_in_path;
use crate::error::{invalid, Error, Result};
use crate::flow::{HarmonicModes, HarmonicPath, Path, PhasePoint};
use crate::potential::PotentialSpec;
use crate::sets::{kappa_star, IntervalUnion, ObservationSet};

/// Arithmetic nature of `mu = nu2 / nu1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rationality {
    Rational { p: u64, q: u64 },
    Irrational { mu: f64 },
}

impl Rationality {
    pub fn mu(&self) -> f64 {
        match *self {
            Rationality::Rational { p, q } => p as f64 / q as f64,
            Rationality::Irrational { mu } => mu,
        }
    }
}

/// Tolerance policy for deciding whether a float ratio is rational.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalityPolicy {
    pub tol: f64,
    pub q_max: u64,
}

impl Default for RationalityPolicy {
    fn default() -> Self {
        RationalityPolicy {
            tol: 1e-12,
            q_max: 10_000,
        }
    }
}

/// Characteristic frequencies plus, in two dimensions, the nature of their ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatorSpec {
    pub freqs: Vec<f64>,
    pub rationality: Option<Rationality>,
}

impl OscillatorSpec {
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        Self::with_policy(freqs, RationalityPolicy::default())
    }

    pub fn with_policy(freqs: Vec<f64>, policy: RationalityPolicy) -> Result<Self> {
        if freqs.is_empty() || freqs.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return invalid("frequencies must be positive and finite");
        }
        let rationality = if freqs.len() == 2 {
            Some(detect_rationality(freqs[1] / freqs[0], policy))
        } else {
            None
        };
        Ok(OscillatorSpec { freqs, rationality })
    }

    /// `nu = (nu1, nu1 p / q)` with exact rational ratio.
    pub fn rational(nu1: f64, p: u64, q: u64) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::Domain(format!(
                "ratio {p}:{q} must have positive entries"
            )));
        }
        if !(nu1 > 0.0 && nu1.is_finite()) {
            return invalid("nu1 must be positive");
        }
        let g = p.gcd(&q);
        let (p, q) = (p / g, q / g);
        Ok(OscillatorSpec {
            freqs: vec![nu1, nu1 * p as f64 / q as f64],
            rationality: Some(Rationality::Rational { p, q }),
        })
    }

    pub fn irrational(nu1: f64, mu: f64) -> Result<Self> {
        if !(nu1 > 0.0 && mu > 0.0) {
            return invalid("frequencies must be positive");
        }
        Ok(OscillatorSpec {
            freqs: vec![nu1, nu1 * mu],
            rationality: Some(Rationality::Irrational { mu }),
        })
    }

    pub fn from_potential(spec: &PotentialSpec) -> Result<Self> {
        HarmonicModes::new(spec)?.oscillator()
    }

    pub fn is_isotropic(&self) -> bool {
        self.freqs.windows(2).all(|w| w[0] == w[1])
            || matches!(self.rationality, Some(Rationality::Rational { p: 1, q: 1 }))
    }

    /// Common period `2 pi q / nu1` in the rational case.
    pub fn period(&self) -> Option<f64> {
        match self.rationality? {
            Rationality::Rational { q, .. } => Some(2.0 * PI * q as f64 / self.freqs[0]),
            Rationality::Irrational { .. } => None,
        }
    }

    pub fn potential(&self) -> PotentialSpec {
        PotentialSpec::harmonic_diag(&self.freqs)
    }
}

/// Rational when a convergent `p/q` with `q <= q_max` lies within `tol` of `mu`.
pub fn detect_rationality(mu: f64, policy: RationalityPolicy) -> Rationality {
    let mut found = None;
    for_each_convergent(&BigRational::from_float(mu).unwrap(), |p, q| {
        let (Some(pf), Some(qf)) = (p.to_u64(), q.to_u64()) else {
            return false;
        };
        if qf > policy.q_max {
            return false;
        }
        if (mu - pf as f64 / qf as f64).abs() <= policy.tol {
            found = Some((pf, qf));
            return false;
        }
        true
    });
    match found {
        Some((p, q)) if p > 0 => Rationality::Rational { p, q },
        _ => Rationality::Irrational { mu },
    }
}

/// Walks the continued-fraction convergents of `x >= 0` until `visit` returns false
/// or the expansion terminates.
fn for_each_convergent(x: &BigRational, mut visit: impl FnMut(&BigInt, &BigInt) -> bool) {
    let one = BigInt::from(1);
    // seeds p_{-2} = 0, p_{-1} = 1, q_{-2} = 1, q_{-1} = 0
    let (mut p_prev, mut p) = (BigInt::from(0), one.clone());
    let (mut q_prev, mut q) = (one, BigInt::from(0));
    let mut r = x.clone();
    loop {
        let a = r.floor().to_integer();
        let p_new = &a * &p + &p_prev;
        let q_new = &a * &q + &q_prev;
        p_prev = std::mem::replace(&mut p, p_new);
        q_prev = std::mem::replace(&mut q, q_new);
        if !visit(&p, &q) {
            return;
        }
        let frac = &r - BigRational::from_integer(a);
        if frac.is_zero() {
            return;
        }
        r = frac.recip();
    }
}

/// Convergents `p_j / q_j` of a ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergentList {
    pub entries: Vec<(u64, u64)>,
    pub mu: f64,
    /// The expansion stopped on a convergent equal to `mu` under the rationality policy.
    pub rational: bool,
}

impl ConvergentList {
    pub fn denominators(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.1)
    }
}

/// First `count` continued-fraction convergents of `mu`, in exact integer arithmetic.
///
/// Stops early, flagged rational, when a convergent matches `mu` under the default
/// rationality policy. Fails when a convergent would be finer than the precision of
/// `mu` can support (`q^2 ulp(mu) > 1e-4`).
pub fn convergents(mu: f64, count: usize) -> Result<ConvergentList> {
    convergents_with(mu, count, RationalityPolicy::default())
}

pub fn convergents_with(
    mu: f64,
    count: usize,
    policy: RationalityPolicy,
) -> Result<ConvergentList> {
    let (list, exhausted) = convergent_prefix(mu, count, policy)?;
    if exhausted {
        return Err(Error::Precision(format!(
            "only {} convergents of {mu} are resolved by double precision",
            list.entries.len()
        )));
    }
    Ok(list)
}

/// Up to `count` convergents, stopping silently where double precision runs out; the
/// flag tells whether it did.
fn convergent_prefix(
    mu: f64,
    count: usize,
    policy: RationalityPolicy,
) -> Result<(ConvergentList, bool)> {
    if !(mu > 0.0 && mu.is_finite()) {
        return invalid("mu must be positive and finite");
    }
    let ulp = f64::from_bits(mu.to_bits() + 1) - mu;
    let exact = BigRational::from_float(mu).unwrap();
    let mut entries = Vec::new();
    let mut rational = false;
    let mut exhausted = false;
    for_each_convergent(&exact, |p, q| {
        if entries.len() >= count {
            return false;
        }
        let qf = q.to_f64().unwrap_or(f64::INFINITY);
        if qf * qf * ulp > 1e-4 {
            exhausted = true;
            return false;
        }
        let (pu, qu) = (p.to_u64().unwrap(), q.to_u64().unwrap());
        entries.push((pu, qu));
        if qu <= policy.q_max && (mu - pu as f64 / qu as f64).abs() <= policy.tol {
            rational = true;
            return false;
        }
        true
    });
    if entries.len() < count && !rational && !exhausted {
        rational = true;
    }
    Ok((
        ConvergentList {
            entries,
            mu,
            rational,
        },
        exhausted,
    ))
}

/// `|mu - p/q| < 1/q^2` checked in exact rational arithmetic against the float `mu`.
pub fn convergent_bound_holds(mu: f64, p: u64, q: u64) -> bool {
    let x = BigRational::from_float(mu).unwrap();
    let c = BigRational::new(BigInt::from(p), BigInt::from(q));
    let err = (x - c).abs();
    let bound = BigRational::new(BigInt::from(1), BigInt::from(q) * BigInt::from(q));
    err < bound
}

/// Optimal radial aspect ratio `Lambda(mu)`.
pub fn lambda_of_mu(r: Rationality) -> f64 {
    match r {
        Rationality::Irrational { .. } => 0.0,
        Rationality::Rational { p, q } => {
            let c = PI / 2.0 / (p + q) as f64;
            if (p + q) % 2 == 0 {
                c.tan()
            } else {
                c.sin()
            }
        }
    }
}

/// `2 dist(p theta1 / pi - q theta2 / pi, Z)`.
pub fn d0(theta1: f64, theta2: f64, p: u64, q: u64) -> f64 {
    let s = p as f64 * theta1 / PI - q as f64 * theta2 / PI;
    2.0 * (s - s.round()).abs()
}

/// Best aspect ratio at fixed phases, dispatched on the parity of `p - q`.
pub fn lambda_theta(theta1: f64, theta2: f64, p: u64, q: u64) -> f64 {
    let c = PI / 2.0 / (p + q) as f64;
    let d = d0(theta1, theta2, p, q);
    if (p + q) % 2 == 0 {
        (c * d).tan()
    } else {
        c.sin() - c.cos() * (c * (1.0 - d)).tan()
    }
}

/// Squared-radius profile `(1 - lambda) sin^2(pi s d0 / 2p) + lambda sin^2(pi (1 - s) d0 / 2q)`
/// between two consecutive zeros of the coordinates.
pub fn radial_profile(lambda: f64, s: f64, d0: f64, p: u64, q: u64) -> f64 {
    let a = (PI / 2.0 / p as f64 * s * d0).sin();
    let b = (PI / 2.0 / q as f64 * (1.0 - s) * d0).sin();
    (1.0 - lambda) * a * a + lambda * b * b
}

/// Resolution of the brute-force aspect-ratio search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BruteGrid {
    pub n_lambda: usize,
    pub n_theta: usize,
    pub n_t: usize,
}

impl Default for BruteGrid {
    fn default() -> Self {
        BruteGrid {
            n_lambda: 64,
            n_theta: 64,
            n_t: 4096,
        }
    }
}

impl BruteGrid {
    /// Spacing of the coarsest grid axis, in the units of the ratio.
    pub fn resolution(&self) -> f64 {
        (1.0 / (self.n_lambda - 1) as f64).max(1.0 / self.n_theta as f64)
    }
}

fn sin2_table(freq: f64, phases: &[f64], n_t: usize) -> Vec<Vec<f64>> {
    phases
        .iter()
        .map(|&th| {
            (0..n_t)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / n_t as f64;
                    let s = (freq * t + th).sin();
                    s * s
                })
                .collect()
        })
        .collect()
}

/// Vertices of the convex hull of `pts`, by the monotone chain.
fn hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in [pts.clone(), pts.into_iter().rev().collect()] {
        let base = out.len();
        for p in pass {
            while out.len() >= base + 2 && cross(out[out.len() - 2], out[out.len() - 1], p) <= 0.0 {
                out.pop();
            }
            out.push(p);
        }
        out.pop();
    }
    out
}

fn best_over_lambda(u: &[f64], v: &[f64], n_lambda: usize) -> f64 {
    // the squared radius is linear in (u, v), so its extremes over the samples are
    // attained on hull vertices
    let h = hull(u.iter().copied().zip(v.iter().copied()).collect());
    let ratio = |lam: f64| {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for &(a, b) in &h {
            let r2 = a + lam * (b - a);
            lo = lo.min(r2);
            hi = hi.max(r2);
        }
        if hi > 0.0 {
            (lo.max(0.0) / hi).sqrt()
        } else {
            0.0
        }
    };
    let step = 1.0 / (n_lambda - 1) as f64;
    let (mut best, mut arg) = (0.0_f64, 0);
    for l in 0..n_lambda {
        let r = ratio(l as f64 * step);
        if r > best {
            (best, arg) = (r, l);
        }
    }
    // min over t is concave and max over t convex in lambda, so the ratio is
    // quasi-concave and its maximum lies between the neighbours of the best node
    let (mut a, mut b) = (
        (arg as f64 - 1.0).max(0.0) * step,
        ((arg + 1) as f64 * step).min(1.0),
    );
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..40 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if ratio(c) >= ratio(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(ratio(0.5 * (a + b)))
}

/// Brute-force `max over (lambda, theta1, theta2)` of `min_t |x^t| / max_t |x^t|` for
/// `x = (sqrt(1-lambda) sin(q t + theta1), sqrt(lambda) sin(p t + theta2))`.
///
/// The best node of the `lambda` grid is polished by golden section, so the `lambda`
/// axis contributes no grid error.
pub fn aspect_ratio_bruteforce(p: u64, q: u64, grid: BruteGrid) -> Result<f64> {
    if p == 0 || q == 0 || p.gcd(&q) != 1 {
        return Err(Error::Domain(format!(
            "{p}:{q} is not a coprime positive pair"
        )));
    }
    let phases: Vec<f64> = (0..grid.n_theta)
        .map(|k| PI * k as f64 / grid.n_theta as f64)
        .collect();
    let u = sin2_table(q as f64, &phases, grid.n_t);
    let v = sin2_table(p as f64, &phases, grid.n_t);
    let best = (0..grid.n_theta * grid.n_theta)
        .into_par_iter()
        .map(|ij| best_over_lambda(&u[ij / grid.n_theta], &v[ij % grid.n_theta], grid.n_lambda))
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// Fixed-phase variant of [`aspect_ratio_bruteforce`]: maximum over `lambda` only.
pub fn aspect_ratio_fixed_phase(
    p: u64,
    q: u64,
    theta1: f64,
    theta2: f64,
    n_lambda: usize,
    n_t: usize,
) -> f64 {
    let u = sin2_table(q as f64, &[theta1], n_t);
    let v = sin2_table(p as f64, &[theta2], n_t);
    best_over_lambda(&u[0], &v[0], n_lambda)
}

/// Minimum and maximum of `f` over `[a, b]`: grid scan plus golden-section polishing.
pub fn extrema(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> (f64, f64) {
    let h = (b - a) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|k| f(a + h * k as f64)).collect();
    let mut lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for k in 1..n {
        let (l, m, r) = (vals[k - 1], vals[k], vals[k + 1]);
        let ta = a + h * (k - 1) as f64;
        if m <= l && m <= r {
            lo = lo.min(golden(&f, ta, ta + 2.0 * h, 1.0));
        }
        if m >= l && m >= r {
            hi = hi.max(-golden(&|t| -f(t), ta, ta + 2.0 * h, 1.0));
        }
    }
    (lo, hi)
}

fn golden(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, _sign: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd)
}

/// Trajectory `x_j = A_j sin(nu_j t + theta_j)` of a two-dimensional oscillator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineTrajectory {
    pub freqs: [f64; 2],
    pub actions: [f64; 2],
    pub angles: [f64; 2],
}

impl SineTrajectory {
    pub fn position(&self, t: f64) -> [f64; 2] {
        [
            self.actions[0] * (self.freqs[0] * t + self.angles[0]).sin(),
            self.actions[1] * (self.freqs[1] * t + self.angles[1]).sin(),
        ]
    }

    pub fn initial_point(&self) -> PhasePoint {
        PhasePoint {
            x: vec![
                self.actions[0] * self.angles[0].sin(),
                self.actions[1] * self.angles[1].sin(),
            ],
            xi: vec![
                self.actions[0] * self.freqs[0] * self.angles[0].cos(),
                self.actions[1] * self.freqs[1] * self.angles[1].cos(),
            ],
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        SineTrajectory {
            actions: [self.actions[0] * s, self.actions[1] * s],
            ..self.clone()
        }
    }

    /// `(min |x^t|, max |x^t|)` over `[0, span]`.
    pub fn radius_extrema(&self, span: f64, n: usize) -> (f64, f64) {
        let (lo, hi) = extrema(
            |t| {
                let x = self.position(t);
                x[0] * x[0] + x[1] * x[1]
            },
            0.0,
            span,
            n,
        );
        (lo.max(0.0).sqrt(), hi.sqrt())
    }
}

/// Extremal trajectory whose radius ratio equals `Lambda(p/q)`, with `nu2 / nu1 = p / q`.
pub fn critical_trajectory(p: u64, q: u64, nu1: f64) -> Result<SineTrajectory> {
    if p == q {
        return Err(Error::Isotropic("critical trajectory needs p != q".into()));
    }
    if p == 0 || q == 0 || p.gcd(&q) != 1 {
        return Err(Error::Domain(format!(
            "{p}:{q} is not a coprime positive pair"
        )));
    }
    let s = (p + q) as f64;
    Ok(SineTrajectory {
        freqs: [nu1, nu1 * p as f64 / q as f64],
        actions: [(p as f64 / s).sqrt(), (q as f64 / s).sqrt()],
        angles: [PI / (2.0 * p as f64), 0.0],
    })
}

/// Reference time `(pi / nu_plus)(2 + floor(nu_plus / nu_minus))` of the two-cones set.
pub fn two_cones_t0(nu_plus: f64, nu_minus: f64) -> f64 {
    let (hi, lo) = if nu_plus >= nu_minus {
        (nu_plus, nu_minus)
    } else {
        (nu_minus, nu_plus)
    };
    (PI / hi) * (2.0 + (hi / lo).floor())
}

/// Trajectory that stays out of the doubled two-cones set for most of `[0, T0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvoidingTrajectory {
    pub freqs: [f64; 2],
    /// `(A1, A2)` normalized to `A2 = 1`.
    pub actions: [f64; 2],
    pub sign: f64,
    pub delta: f64,
    pub t0: f64,
    pub t_avoid: f64,
    pub initial: PhasePoint,
}

impl AvoidingTrajectory {
    pub fn position(&self, t: f64) -> [f64; 2] {
        let [nu1, nu2] = self.freqs;
        [
            self.actions[0] * (PI * (nu1 / nu2) * (1.0 - self.delta) - nu1 * t).sin(),
            self.actions[1] * self.sign * (PI * self.delta + nu2 * t).sin(),
        ]
    }

    /// The same curve as a [`Path`] on `[0, t_avoid]`.
    pub fn path(&self) -> HarmonicPath {
        let modes = HarmonicModes::new(&PotentialSpec::harmonic_diag(&self.freqs)).unwrap();
        HarmonicPath::new(modes, &self.initial, self.t_avoid)
    }
}

/// Builds the extremal trajectory of the two-cones necessity argument for `nu1 < nu2`.
pub fn avoiding_trajectory_two_cones(
    nu1: f64,
    nu2: f64,
    epsilon: f64,
) -> Result<AvoidingTrajectory> {
    if !(nu1 > 0.0 && nu2 > nu1) {
        return Err(Error::Domain("need 0 < nu1 < nu2".into()));
    }
    if !(epsilon > 0.0 && epsilon < PI / 4.0) {
        return Err(Error::Domain(format!(
            "epsilon = {epsilon} outside (0, pi/4)"
        )));
    }
    let gap = (nu2 / nu1 - 1.0).min(1.0);
    let delta = 4.0 * epsilon * epsilon / gap;
    if delta >= 0.5 {
        return Err(Error::Domain(format!(
            "epsilon = {epsilon} too large for nu2/nu1 = {}: delta = {delta} >= 1/2",
            nu2 / nu1
        )));
    }
    let a1 = 2.0 * epsilon * (nu2 / nu1) / gap;
    let t0 = two_cones_t0(nu2, nu1);
    let t_first = (PI / nu2) * (1.0 - delta) + PI / nu1;
    let t_last = t0 - (PI / nu2) * delta;
    let mid = 0.5 * (t_first + t_last);
    let s = (PI * delta + nu2 * mid).sin();
    let sign = if s > 0.0 { -1.0 } else { 1.0 };
    let phi1 = PI * (nu1 / nu2) * (1.0 - delta);
    let initial = PhasePoint {
        x: vec![a1 * phi1.sin(), sign * (PI * delta).sin()],
        xi: vec![-nu1 * a1 * phi1.cos(), sign * nu2 * (PI * delta).cos()],
    };
    Ok(AvoidingTrajectory {
        freqs: [nu1, nu2],
        actions: [a1, 1.0],
        sign,
        delta,
        t0,
        t_avoid: t0 - 2.0 * (PI / nu2) * delta,
        initial,
    })
}

/// Constants of the convergent-based bounds on the optimal observation time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TStarConstants {
    pub delta1: f64,
    pub delta2: f64,
}

impl Default for TStarConstants {
    fn default() -> Self {
        TStarConstants {
            delta1: 1.0,
            delta2: 6.0 * PI,
        }
    }
}

/// Bracket of the optimal observation time for spherical sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TStarBounds {
    pub lower: f64,
    pub upper: f64,
    pub j1: Option<usize>,
    pub j2: Option<usize>,
    pub q_lower: Option<u64>,
    pub q_upper: Option<u64>,
    pub lower_threshold: f64,
    pub upper_threshold: f64,
}

/// Convergent denominators bracketing `delta1 / kappa` and `delta2 / kappa`, times `2 pi / nu1`.
///
/// Rational ratios return `[0, pi p / nu2]`.
pub fn t_star_bounds(
    spec: &OscillatorSpec,
    kappa: f64,
    constants: TStarConstants,
) -> Result<TStarBounds> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::Domain(format!("kappa = {kappa} outside (0, 1]")));
    }
    let r = two_dim(spec)?;
    let nu1 = spec.freqs[0];
    let lo_th = constants.delta1 / kappa;
    let hi_th = constants.delta2 / kappa;
    match r {
        Rationality::Rational { p, .. } => Ok(TStarBounds {
            lower: 0.0,
            upper: PI * p as f64 / spec.freqs[1],
            j1: None,
            j2: None,
            q_lower: None,
            q_upper: None,
            lower_threshold: lo_th,
            upper_threshold: hi_th,
        }),
        Rationality::Irrational { mu } => {
            let (list, _) = convergent_prefix(mu, 128, RationalityPolicy::default())?;
            let j2 = list
                .denominators()
                .position(|q| q as f64 >= hi_th)
                .ok_or_else(|| {
                    Error::NotEnoughConvergents(format!(
                        "no resolved convergent reaches q >= {hi_th:.3}"
                    ))
                })?;
            let j1 = list
                .denominators()
                .collect::<Vec<_>>()
                .iter()
                .rposition(|&q| q as f64 <= lo_th);
            let unit = 2.0 * PI / nu1;
            let q_lower = j1.map(|j| list.entries[j].1);
            let q_upper = list.entries[j2].1;
            Ok(TStarBounds {
                lower: q_lower.map_or(0.0, |q| q as f64 * unit),
                upper: q_upper as f64 * unit,
                j1,
                j2: Some(j2),
                q_lower,
                q_upper: Some(q_upper),
                lower_threshold: lo_th,
                upper_threshold: hi_th,
            })
        }
    }
}

fn two_dim(spec: &OscillatorSpec) -> Result<Rationality> {
    if spec.freqs.len() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: spec.freqs.len(),
        });
    }
    if spec.is_isotropic() {
        return Err(Error::Isotropic(
            "ratio 1 is handled by circular orbits".into(),
        ));
    }
    Ok(spec
        .rationality
        .expect("two-dimensional specs carry rationality"))
}

/// Observability verdict for a spherical set `{|x| in I}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub mu: f64,
    pub lambda: f64,
    pub kappa_star: f64,
    pub observable: bool,
    pub margin: f64,
    pub t_star_bounds: Option<TStarBounds>,
}

/// Observable exactly when `kappa_star(I) > Lambda(nu2 / nu1)`.
pub fn classify_spherical(spec: &OscillatorSpec, set: &IntervalUnion) -> Result<Classification> {
    let r = two_dim(spec)?;
    let lambda = lambda_of_mu(r);
    let ks = kappa_star(set)?.estimate;
    let observable = ks > lambda;
    let t_star_bounds = if observable {
        Some(t_star_bounds(spec, ks, TStarConstants::default())?)
    } else {
        None
    };
    Ok(Classification {
        mu: r.mu(),
        lambda,
        kappa_star: ks,
        observable,
        margin: ks - lambda,
        t_star_bounds,
    })
}

/// Uniform circular motion in an invariant plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircularOrbit {
    /// `grad V(x) = c x` on the circle.
    pub c: f64,
    pub radius: f64,
    pub period: f64,
    pub initial: PhasePoint,
}

/// Circular orbit of radius `r` in the plane spanned by orthonormal `e1`, `e2`.
///
/// The radial condition `grad V(x) = c x` is checked at 64 points of the circle.
pub fn circular_orbit(
    spec: &PotentialSpec,
    e1: &[f64],
    e2: &[f64],
    r: f64,
) -> Result<CircularOrbit> {
    let d = spec.dim();
    if e1.len() != d || e2.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: e1.len().min(e2.len()),
        });
    }
    let dot: f64 = e1.iter().zip(e2).map(|(a, b)| a * b).sum();
    let n1: f64 = e1.iter().map(|a| a * a).sum();
    let n2: f64 = e2.iter().map(|a| a * a).sum();
    if dot.abs() > 1e-12 || (n1 - 1.0).abs() > 1e-12 || (n2 - 1.0).abs() > 1e-12 {
        return invalid("plane basis must be orthonormal");
    }
    if !(r > 0.0) {
        return invalid("radius must be positive");
    }
    let mut c_ref: Option<f64> = None;
    let mut g = vec![0.0; d];
    for k in 0..64 {
        let a = 2.0 * PI * k as f64 / 64.0;
        let x: Vec<f64> = (0..d)
            .map(|i| r * (a.cos() * e1[i] + a.sin() * e2[i]))
            .collect();
        spec.grad_into(&x, &mut g);
        let c = g.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / (r * r);
        let resid = g
            .iter()
            .zip(&x)
            .map(|(gi, xi)| (gi - c * xi).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        if resid > 1e-9 * scale {
            return Err(Error::NonCollinearGradient(format!(
                "gradient not radial at angle {a:.4}"
            )));
        }
        match c_ref {
            None => c_ref = Some(c),
            Some(c0) if (c - c0).abs() > 1e-9 * c0.abs().max(1e-300) => {
                return Err(Error::NonCollinearGradient(format!(
                    "radial stiffness varies along the circle: {c0} vs {c}"
                )))
            }
            _ => {}
        }
    }
    let c = c_ref.unwrap();
    if c <= 0.0 {
        return Err(Error::NonCollinearGradient(format!(
            "stiffness {c} is not positive"
        )));
    }
    let w = c.sqrt();
    Ok(CircularOrbit {
        c,
        radius: r,
        period: 2.0 * PI / w,
        initial: PhasePoint {
            x: e1.iter().map(|v| r * v).collect(),
            xi: e2.iter().map(|v| r * w * v).collect(),
        },
    })
}

/// Decay of the time spent near the origin by the axis trajectories `(0, eta e)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeCertificate {
    pub direction: Vec<f64>,
    pub etas: Vec<f64>,
    pub times: Vec<f64>,
    /// Log-log slope of time against `eta`; `None` when the trajectories never enter.
    pub exponent: Option<f64>,
}

/// Looks for an eigen-direction `e` with `+-e` outside the closure of the conical set and,
/// if one exists, measures the time the trajectories `(0, eta e)` spend in `set_R`.
pub fn conical_axis_escape(
    spec: &PotentialSpec,
    set: &ObservationSet,
    radius: f64,
    horizon: f64,
    etas: &[f64],
) -> Result<Option<EscapeCertificate>> {
    let modes = HarmonicModes::new(spec)?;
    let d = modes.freqs.len();
    let thick = set.thicken(radius)?;
    let mut candidates: Vec<Vec<f64>> = (0..d)
        .map(|k| (0..d).map(|i| modes.basis[(i, k)]).collect())
        .collect();
    if d == 2 && (modes.freqs[1] - modes.freqs[0]).abs() <= 1e-12 * modes.freqs[1] {
        // every direction of the plane is an eigen-direction
        candidates = (0..720)
            .map(|k| {
                let a = PI * k as f64 / 720.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in candidates {
        let minus: Vec<f64> = e.iter().map(|v| -v).collect();
        let clearance = set
            .angular_clearance(&e)?
            .min(set.angular_clearance(&minus)?);
        if clearance > 0.0 && best.as_ref().is_none_or(|b| clearance > b.0 + 1e-12) {
            best = Some((clearance, e));
        }
    }
    if let Some((_, e)) = best {
        let mut times = Vec::with_capacity(etas.len());
        for &eta in etas {
            let rho0 = PhasePoint {
                x: vec![0.0; d],
                xi: e.iter().map(|v| eta * v).collect(),
            };
            let path = HarmonicPath::new(modes.clone(), &rho0, horizon);
            let n = samples_for(&path, radius / eta);
            times.push(time_in_path(&path, &thick, n)?);
        }
        let exponent = fit_slope(etas, &times);
        return Ok(Some(EscapeCertificate {
            direction: e,
            etas: etas.to_vec(),
            times,
            exponent,
        }));
    }
    Ok(None)
}

fn samples_for(path: &impl Path, feature_time: f64) -> usize {
    ((path.horizon() / feature_time) * 8.0).clamp(4096.0, 4e6) as usize
}

/// Least-squares slope of `log y` against `log x` over the entries with `y > 0`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

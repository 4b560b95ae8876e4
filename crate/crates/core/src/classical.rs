//! Time spent by projected trajectories in observation sets.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flow::{
    hamiltonian, integrate_with, HarmonicModes, HarmonicPath, Path, PhasePoint, Trajectory,
};
use crate::potential::PotentialSpec;
use crate::sets::{IntervalUnion, ObservationSet};

/// Bisection depth for crossing times, relative to the horizon.
const CROSSING_TOL: f64 = 1e-10;

/// Membership test that caches the components of spherical sets.
struct Membership<'a> {
    set: &'a ObservationSet,
    comps: Vec<(f64, f64)>,
    reach: f64,
}

impl<'a> Membership<'a> {
    fn new(set: &'a ObservationSet) -> Self {
        Membership {
            set,
            comps: Vec::new(),
            reach: -1.0,
        }
    }

    fn contains(&mut self, x: &[f64]) -> Result<bool> {
        let ObservationSet::Spherical { radii } = self.set else {
            return self.set.contains(x);
        };
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.cover(radii, r);
        let k = self.comps.partition_point(|c| c.0 < r);
        Ok(k > 0 && r < self.comps[k - 1].1)
    }

    fn cover(&mut self, radii: &IntervalUnion, r: f64) {
        if r >= self.reach {
            self.reach = 2.0 * r + 16.0;
            self.comps = radii.intervals_up_to(self.reach + 1.0);
        }
    }

    /// Distance from the radius `r` to the nearest boundary sphere of a spherical set.
    fn boundary_distance(&mut self, r: f64) -> Option<f64> {
        let ObservationSet::Spherical { radii } = self.set else {
            return None;
        };
        self.cover(radii, r);
        let k = self.comps.partition_point(|c| c.0 <= r);
        let mut d = self.reach - r;
        for c in &self.comps[k.saturating_sub(1)..(k + 1).min(self.comps.len())] {
            for e in [c.0, c.1] {
                if e.is_finite() {
                    d = d.min((e - r).abs());
                }
            }
        }
        Some(d)
    }
}

/// Accumulates the time spent in a set from a stream of samples.
struct Timer<'a> {
    member: Membership<'a>,
    tol: f64,
    total: f64,
    prev: Option<(f64, bool)>,
}

impl<'a> Timer<'a> {
    fn new(set: &'a ObservationSet, horizon: f64) -> Self {
        Timer {
            member: Membership::new(set),
            tol: CROSSING_TOL * horizon.abs().max(1e-300),
            total: 0.0,
            prev: None,
        }
    }

    /// Feeds the sample at `t`; `at` evaluates the position anywhere in the last step.
    fn push(&mut self, t: f64, x: &[f64], at: impl Fn(f64, &mut [f64])) -> Result<()> {
        let inside = self.member.contains(x)?;
        if let Some((t0, was)) = self.prev {
            if was == inside {
                if inside {
                    self.total += t - t0;
                }
            } else {
                let mut buf = vec![0.0; x.len()];
                let (mut lo, mut hi) = (t0, t);
                while hi - lo > self.tol {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    at(mid, &mut buf);
                    if self.member.contains(&buf)? == was {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let tc = 0.5 * (lo + hi);
                self.total += if was { tc - t0 } else { t - tc };
            }
        }
        self.prev = Some((t, inside));
        Ok(())
    }
}

/// Smallest component or gap width of a spherical set below `r_max`.
fn finest_feature(set: &ObservationSet, r_max: f64) -> Option<f64> {
    let ObservationSet::Spherical { radii } = set else {
        return None;
    };
    let comps = radii.intervals_up_to(r_max);
    let mut w = f64::INFINITY;
    for (k, c) in comps.iter().enumerate() {
        if c.1 < r_max {
            w = w.min(c.1 - c.0);
        }
        // touching components share a single boundary point
        if let Some(n) = comps.get(k + 1).filter(|n| n.0 > c.1) {
            w = w.min(n.0 - c.1);
        }
    }
    w.is_finite().then_some(w)
}

fn warn_if_undersampled(set: &ObservationSet, radii: &[f64]) {
    let ObservationSet::Spherical { radii: union } = set else {
        return;
    };
    let r_max = radii.iter().cloned().fold(0.0, f64::max);
    let ends: Vec<f64> = union
        .intervals_up_to(r_max + 1.0)
        .iter()
        .flat_map(|c| [c.0, c.1])
        .collect();
    for w in radii.windows(2) {
        let (lo, hi) = (w[0].min(w[1]), w[0].max(w[1]));
        let first = ends.partition_point(|&e| e <= lo);
        if ends.get(first + 1).is_some_and(|&e| e < hi) {
            log::warn!("samples skip more than one boundary of the spherical set");
            return;
        }
    }
}

/// Measure of `{t : x^t in set}` along a path sampled at `times`, with bisection
/// refinement of every membership switch.
pub fn time_in_path_at<P: Path + ?Sized>(
    path: &P,
    set: &ObservationSet,
    times: &[f64],
) -> Result<f64> {
    if matches!(set, ObservationSet::FullSpace) {
        return Ok(times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0));
    }
    let span = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    let mut timer = Timer::new(set, span);
    let mut x = vec![0.0; path.dim()];
    let mut radii = Vec::with_capacity(times.len());
    for &t in times {
        path.position_into(t, &mut x);
        radii.push(x.iter().map(|v| v * v).sum::<f64>().sqrt());
        timer.push(t, &x, |s, out| path.position_into(s, out))?;
    }
    warn_if_undersampled(set, &radii);
    Ok(timer.total.clamp(0.0, span))
}

/// Time in a spherical set along a path whose speed never exceeds `speed`.
///
/// The radius cannot reach a boundary sphere sooner than its distance over `speed`, so
/// steps of that length pass no boundary; `min_step` bounds the steps from below and
/// should stay under the finest component or gap width over `speed`. Other sets fall
/// back to uniform steps of `min_step`.
pub fn time_in_path_adaptive<P: Path + ?Sized>(
    path: &P,
    set: &ObservationSet,
    speed: f64,
    min_step: f64,
) -> Result<f64> {
    let h = path.horizon();
    if !(speed > 0.0 && min_step > 0.0) {
        return invalid("speed bound and minimal step must be positive");
    }
    if !matches!(set, ObservationSet::Spherical { .. }) {
        return time_in_path(path, set, (h / min_step).ceil() as usize);
    }
    let mut timer = Timer::new(set, h);
    let mut x = vec![0.0; path.dim()];
    let mut t = 0.0;
    loop {
        path.position_into(t, &mut x);
        timer.push(t, &x, |s, out| path.position_into(s, out))?;
        if t >= h {
            break;
        }
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d = timer.member.boundary_distance(r).unwrap_or(0.0);
        t = (t + (d / speed).max(min_step)).min(h);
    }
    Ok(timer.total.clamp(0.0, h))
}

/// [`time_in_path_at`] on `n` uniform steps of `[0, horizon]`.
pub fn time_in_path<P: Path + ?Sized>(path: &P, set: &ObservationSet, n: usize) -> Result<f64> {
    let h = path.horizon();
    let n = n.max(1);
    let times: Vec<f64> = (0..=n).map(|k| h * k as f64 / n as f64).collect();
    time_in_path_at(path, set, &times)
}

/// Time a sampled trajectory spends in `set`; positions between samples are cubic
/// Hermite interpolants.
pub fn time_in_set(traj: &Trajectory, set: &ObservationSet) -> Result<f64> {
    time_in_path_at(traj, set, &traj.times)
}

/// Integrates the flow and measures the time in `set` without storing the trajectory.
pub fn time_in_set_streaming(
    spec: &PotentialSpec,
    rho0: &PhasePoint,
    set: &ObservationSet,
    horizon: f64,
    dt: f64,
) -> Result<f64> {
    if matches!(set, ObservationSet::FullSpace) {
        return Ok(horizon);
    }
    let mut timer = Timer::new(set, horizon);
    let mut prev: Option<(f64, PhasePoint)> = None;
    let mut err = None;
    integrate_with(spec, rho0, horizon, dt, |t, p| {
        if err.is_some() {
            return;
        }
        let res = match &prev {
            None => timer.push(t, &p.x, |_, _| {}),
            Some((t0, p0)) => {
                let seg = Trajectory {
                    times: vec![*t0, t],
                    points: vec![p0.clone(), p.clone()],
                    energy0: 0.0,
                };
                timer.push(t, &p.x, |s, out| seg.position_into(s, out))
            }
        };
        if let Err(e) = res {
            err = Some(e);
        }
        prev = Some((t, p.clone()));
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(timer.total.clamp(0.0, horizon))
}

/// Options of the shell minimization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KfrakOptions {
    pub seeds: usize,
    pub tail_count: usize,
    pub seed: u64,
    pub max_iters: u64,
    /// Uniform samples per path when the flow is exact.
    pub samples: usize,
    /// Integrator step for non-harmonic potentials; `None` picks one per shell.
    pub dt: Option<f64>,
}

impl Default for KfrakOptions {
    fn default() -> Self {
        KfrakOptions {
            seeds: 64,
            tail_count: 3,
            seed: 0,
            max_iters: 200,
            samples: 2048,
            dt: None,
        }
    }
}

/// Per-shell minima of the time spent in the set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfrakReport {
    pub horizon: f64,
    pub energies: Vec<f64>,
    pub per_shell_min: Vec<f64>,
    pub argmins: Vec<PhasePoint>,
    pub seeds_per_shell: Vec<usize>,
    pub tail_count: usize,
    pub estimate: f64,
}

/// Shells `100 * 4^k`, `k = 0..7`.
pub fn default_shells() -> Vec<f64> {
    (0..8).map(|k| 100.0 * 4f64.powi(k)).collect()
}

enum Shell<'a> {
    Harmonic {
        modes: &'a HarmonicModes,
        energy: f64,
    },
    General {
        spec: &'a PotentialSpec,
        energy: f64,
        dt: f64,
    },
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n == 0.0 {
        let mut e = vec![0.0; v.len()];
        e[0] = 1.0;
        return e;
    }
    v.iter().map(|a| a / n).collect()
}

/// Radius where `V(r u) = e` along the unit direction `u`.
fn turning_radius(spec: &PotentialSpec, u: &[f64], e: f64) -> f64 {
    let v = |r: f64| spec.value(&u.iter().map(|a| a * r).collect::<Vec<_>>());
    let mut hi = 1.0;
    while v(hi) < e && hi < 1e30 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if v(mid) < e {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

impl Shell<'_> {
    fn dim(&self) -> usize {
        match self {
            Shell::Harmonic { modes, .. } => modes.freqs.len(),
            Shell::General { spec, .. } => spec.dim(),
        }
    }

    /// Point of the energy shell addressed by unconstrained parameters.
    fn point(&self, params: &[f64]) -> PhasePoint {
        let d = self.dim();
        match self {
            Shell::Harmonic { modes, energy } => {
                let w: Vec<f64> = normalized(&params[..d]).iter().map(|u| u * u).collect();
                let mut x = vec![0.0; d];
                let mut xi = vec![0.0; d];
                for j in 0..d {
                    let nu = modes.freqs[j];
                    let amp = (2.0 * energy * w[j]).sqrt() / nu;
                    let th = params[d + j];
                    x[j] = amp * th.sin();
                    xi[j] = amp * nu * th.cos();
                }
                modes.from_modal(&PhasePoint { x, xi })
            }
            Shell::General { spec, energy, .. } => {
                let u = normalized(&params[..d]);
                let s = params[d].sin();
                let r = turning_radius(spec, &u, *energy) * s * s;
                let x: Vec<f64> = u.iter().map(|a| a * r).collect();
                let kin = (2.0 * (energy - spec.value(&x))).max(0.0).sqrt();
                let xi = normalized(&params[d + 1..])
                    .iter()
                    .map(|a| a * kin)
                    .collect();
                PhasePoint { x, xi }
            }
        }
    }

    fn random_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = self.dim();
        let two_pi = 2.0 * std::f64::consts::PI;
        match self {
            Shell::Harmonic { .. } => {
                // exponential weights give the uniform law on the simplex of mode energies
                let mut p: Vec<f64> = (0..d)
                    .map(|_| (-(1.0 - rng.random::<f64>()).ln()).sqrt())
                    .collect();
                p.extend((0..d).map(|_| two_pi * rng.random::<f64>()));
                p
            }
            Shell::General { spec, energy, .. } => {
                // rejection sampling of the position in the box spanned by the turning radii
                let r_box = (0..d)
                    .map(|j| {
                        let mut e = vec![0.0; d];
                        e[j] = 1.0;
                        let a = turning_radius(spec, &e, *energy);
                        e[j] = -1.0;
                        a.max(turning_radius(spec, &e, *energy))
                    })
                    .fold(0.0, f64::max);
                let mut x = vec![0.0; d];
                for _ in 0..10_000 {
                    for v in x.iter_mut() {
                        *v = r_box * (2.0 * rng.random::<f64>() - 1.0);
                    }
                    if spec.value(&x) < *energy {
                        break;
                    }
                }
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let u = normalized(&x);
                let rt = turning_radius(spec, &u, *energy).max(1e-300);
                let a = (r / rt).clamp(0.0, 1.0).sqrt().asin();
                let mut p = u;
                p.push(a);
                p.extend((0..d).map(|_| {
                    // Box-Muller normal deviates for an isotropic momentum direction
                    let (u1, u2): (f64, f64) = (1.0 - rng.random::<f64>(), rng.random());
                    (-2.0 * u1.ln()).sqrt() * (two_pi * u2).cos()
                }));
                p
            }
        }
    }

    fn time_in(
        &self,
        rho0: &PhasePoint,
        set: &ObservationSet,
        horizon: f64,
        samples: usize,
    ) -> Result<f64> {
        match self {
            Shell::Harmonic { modes, energy } => {
                let path = HarmonicPath::new((*modes).clone(), rho0, horizon);
                // resolve every shell of a spherical set the path can cross
                let speed = (2.0 * energy).sqrt();
                let reach = speed / modes.freqs[0];
                match finest_feature(set, reach) {
                    Some(w) => {
                        let min_step = (w / (4.0 * speed)).min(horizon / samples as f64);
                        time_in_path_adaptive(&path, set, speed, min_step)
                    }
                    None => time_in_path(&path, set, samples),
                }
            }
            Shell::General { spec, dt, .. } => time_in_set_streaming(spec, rho0, set, horizon, *dt),
        }
    }
}

struct ShellCost<'a> {
    shell: &'a Shell<'a>,
    set: &'a ObservationSet,
    horizon: f64,
    samples: usize,
}

impl CostFunction for ShellCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let rho = self.shell.point(p);
        self.shell
            .time_in(&rho, self.set, self.horizon, self.samples)
            .map_err(|e| argmin::core::Error::msg(e.to_string()))
    }
}

fn minimize_from(cost: ShellCost<'_>, start: Vec<f64>, max_iters: u64) -> Result<(f64, Vec<f64>)> {
    let f0 = cost
        .cost(&start)
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    if f0 == 0.0 {
        return Ok((0.0, start));
    }
    let n = start.len();
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        v[i] += 0.25;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-12)
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let st = res.state();
    let best = st.get_best_cost();
    let param = st.get_best_param().cloned().unwrap_or(start.clone());
    if best <= f0 {
        Ok((best, param))
    } else {
        Ok((f0, start))
    }
}

/// Minimal time in `set` over each energy shell, by seeded multi-start Nelder-Mead.
///
/// Harmonic potentials use the exact flow and an action-angle parametrization of the
/// shell; other potentials are integrated numerically.
pub fn kfrak_estimate(
    spec: &PotentialSpec,
    set: &ObservationSet,
    horizon: f64,
    shells: &[f64],
    opts: KfrakOptions,
) -> Result<KfrakReport> {
    spec.validate()?;
    set.validate()?;
    if !(horizon > 0.0) {
        return invalid("horizon must be positive");
    }
    if shells.len() < 4 || shells.windows(2).any(|w| !(w[1] > w[0])) || shells[0] <= 0.0 {
        return invalid("need at least four increasing positive shell energies");
    }
    if shells[shells.len() - 1] / shells[0] < 1e3 {
        return invalid("shells must span at least three decades");
    }
    if opts.seeds == 0 || opts.tail_count == 0 || opts.tail_count > shells.len() {
        return invalid("need seeds >= 1 and 1 <= tail_count <= number of shells");
    }
    if let Some(d) = set.fixed_dim() {
        if d != spec.dim() {
            return Err(Error::Dimension {
                expected: spec.dim(),
                got: d,
            });
        }
    }
    let modes = match spec {
        PotentialSpec::Harmonic { .. } => Some(HarmonicModes::new(spec)?),
        _ => None,
    };
    let mut per_shell_min = Vec::new();
    let mut argmins = Vec::new();
    for (k, &energy) in shells.iter().enumerate() {
        let shell = match &modes {
            Some(m) => Shell::Harmonic { modes: m, energy },
            None => {
                let m = spec.growth_exponent();
                let dt = opts
                    .dt
                    .unwrap_or_else(|| 1e-3 * energy.powf(-(m - 1.0) / (2.0 * m)).min(1.0));
                Shell::General { spec, energy, dt }
            }
        };
        if matches!(set, ObservationSet::FullSpace) {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            per_shell_min.push(horizon);
            argmins.push(shell.point(&shell.random_params(&mut rng)));
            continue;
        }
        let results: Vec<Result<(f64, Vec<f64>)>> = (0..opts.seeds)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    opts.seed ^ ((k as u64) << 40) ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                let start = shell.random_params(&mut rng);
                let cost = ShellCost {
                    shell: &shell,
                    set,
                    horizon,
                    samples: opts.samples,
                };
                minimize_from(cost, start, opts.max_iters)
            })
            .collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for r in results {
            let (v, p) = r?;
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, p));
            }
        }
        let (v, p) = best.unwrap();
        let rho = shell.point(&p);
        debug_assert!((hamiltonian(spec, &rho) - energy).abs() <= 1e-6 * energy);
        per_shell_min.push(v.clamp(0.0, horizon));
        argmins.push(rho);
    }
    let n = per_shell_min.len();
    let estimate = per_shell_min[n - opts.tail_count..]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Ok(KfrakReport {
        horizon,
        energies: shells.to_vec(),
        per_shell_min,
        argmins,
        seeds_per_shell: vec![opts.seeds; n],
        tail_count: opts.tail_count,
        estimate,
    })
}

/// Time spent in the ball `{|x| < r}` on `[0, T]`.
pub fn time_in_ball(spec: &PotentialSpec, rho0: &PhasePoint, r: f64, horizon: f64) -> Result<f64> {
    let e = hamiltonian(spec, rho0);
    if !(e > 0.0) {
        return Err(Error::Domain("time in ball needs positive energy".into()));
    }
    if !(r > 0.0 && horizon > 0.0) {
        return invalid("radius and horizon must be positive");
    }
    let ball = ObservationSet::Ball { radius: r };
    let speed = (2.0 * e).sqrt();
    match spec {
        PotentialSpec::Harmonic { .. } => {
            let path = HarmonicPath::new(HarmonicModes::new(spec)?, rho0, horizon);
            let n = (40.0 * horizon * speed / r).clamp(4096.0, 5e7) as usize;
            time_in_path(&path, &ball, n)
        }
        _ => {
            let dt = (r / (20.0 * speed)).min(1e-3);
            time_in_set_streaming(spec, rho0, &ball, horizon, dt)
        }
    }
}

/// `(T - eps, C / (1 - C eps))`: an observability cost at a slightly shorter time.
pub fn obs_time_shrink(cost: f64, horizon: f64, eps: f64) -> Result<(f64, f64)> {
    if !(cost > 0.0) || eps < 0.0 {
        return invalid("cost must be positive and eps nonnegative");
    }
    if cost * eps >= 1.0 {
        return Err(Error::Domain(format!(
            "C eps = {} is not below 1",
            cost * eps
        )));
    }
    Ok((horizon - eps, cost / (1.0 - cost * eps)))
}

/// Density profile `|omega ∩ [-x, x]| / 2x` of a one-dimensional set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakThicknessReport {
    pub x_max: f64,
    /// `(x, ratio)` on the log grid.
    pub grid: Vec<(f64, f64)>,
    /// Minimum of the ratio over the last decade.
    pub estimate: f64,
}

fn line_measure(set: &ObservationSet, x: f64) -> Result<f64> {
    Ok(match set {
        ObservationSet::FullSpace => 2.0 * x,
        ObservationSet::Spherical { radii } => 2.0 * radii.measure(0.0, x),
        ObservationSet::HalfLineCone { positive, negative } => {
            x * (*positive as u8 + *negative as u8) as f64
        }
        ObservationSet::Line { intervals } => intervals
            .iter()
            .map(|&(a, b)| (b.min(x) - a.max(-x)).max(0.0))
            .sum(),
        _ => {
            return Err(Error::Unsupported(
                "weak thickness needs a one-dimensional set".into(),
            ))
        }
    })
}

/// `|omega ∩ [-x, x]|` with spherical components and their prefix sums cached.
struct LineMeasure<'a> {
    set: &'a ObservationSet,
    comps: Vec<(f64, f64)>,
    prefix: Vec<f64>,
}

impl<'a> LineMeasure<'a> {
    fn new(set: &'a ObservationSet, x_max: f64) -> Result<Self> {
        let comps = match set {
            ObservationSet::Spherical { radii } => radii.intervals_up_to(x_max),
            _ => Vec::new(),
        };
        let mut prefix = vec![0.0];
        for c in &comps {
            prefix.push(prefix.last().unwrap() + (c.1 - c.0));
        }
        Ok(LineMeasure { set, comps, prefix })
    }

    fn at(&self, x: f64) -> Result<f64> {
        if !matches!(self.set, ObservationSet::Spherical { .. }) {
            return line_measure(self.set, x);
        }
        let k = self.comps.partition_point(|c| c.1 <= x);
        let partial = self.comps.get(k).map_or(0.0, |c| (x - c.0).max(0.0));
        Ok(2.0 * (self.prefix[k] + partial))
    }
}

fn line_breakpoints(set: &ObservationSet, lo: f64, hi: f64) -> Vec<f64> {
    let raw: Vec<f64> = match set {
        ObservationSet::Spherical { radii } => radii
            .intervals_up_to(hi)
            .iter()
            .flat_map(|c| [c.0, c.1])
            .collect(),
        ObservationSet::Line { intervals } => intervals
            .iter()
            .flat_map(|c| [c.0.abs(), c.1.abs()])
            .collect(),
        _ => Vec::new(),
    };
    raw.into_iter().filter(|&e| e >= lo && e <= hi).collect()
}

/// Ratio `|omega ∩ [-x, x]| / |[-x, x]|` on a log grid up to `x_max`; the estimate is the
/// minimum over the last decade, where interval endpoints are included since the ratio
/// is monotone between them.
pub fn weak_thickness_check(set: &ObservationSet, x_max: f64) -> Result<WeakThicknessReport> {
    if set.fixed_dim().is_some_and(|d| d != 1) {
        return Err(Error::Dimension {
            expected: 1,
            got: set.fixed_dim().unwrap(),
        });
    }
    if !(x_max > 10.0) {
        return invalid("x_max must exceed 10");
    }
    let measure = LineMeasure::new(set, x_max)?;
    let per_decade = 50;
    let decades = x_max.log10().floor().min(6.0).max(1.0);
    let n = (decades * per_decade as f64) as usize;
    let x_min = x_max / 10f64.powf(decades);
    let mut grid = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let x = x_min * (x_max / x_min).powf(k as f64 / n as f64);
        grid.push((x, measure.at(x)? / (2.0 * x)));
    }
    let lo = x_max / 10.0;
    let mut estimate = f64::INFINITY;
    let mut cands = line_breakpoints(set, lo, x_max);
    cands.extend([lo, x_max]);
    for x in cands {
        estimate = estimate.min(measure.at(x)? / (2.0 * x));
    }
    Ok(WeakThicknessReport {
        x_max,
        grid,
        estimate,
    })
}

/// `|int_0^T q(phi_2^t rho) dt - int_0^T q(phi_1^t rho) dt|` for the smooth cutoff `q` of
/// `set` at scale `radius`.
pub fn observable_deviation(
    spec1: &PotentialSpec,
    spec2: &PotentialSpec,
    set: &ObservationSet,
    radius: f64,
    rho0: &PhasePoint,
    horizon: f64,
    dt: f64,
) -> Result<f64> {
    let integral = |spec: &PotentialSpec| -> Result<f64> {
        let mut acc = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        let mut err = None;
        integrate_with(spec, rho0, horizon, dt, |t, p| {
            match set.mollified_cutoff(radius, &p.x) {
                Ok(q) => {
                    if let Some((t0, q0)) = prev {
                        acc += 0.5 * (t - t0) * (q + q0);
                    }
                    prev = Some((t, q));
                }
                Err(e) => err = Some(e),
            }
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(acc),
        }
    };
    Ok((integral(spec2)? - integral(spec1)?).abs())
}

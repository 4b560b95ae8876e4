//! Observation sets with exact membership, and radial interval unions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

mod endpoints {
    //! Interval lists whose endpoints may be infinite; written as `"inf"` / `"-inf"` in JSON.
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }

    fn out(v: f64) -> Num {
        if v == f64::INFINITY {
            Num::S("inf".into())
        } else if v == f64::NEG_INFINITY {
            Num::S("-inf".into())
        } else {
            Num::F(v)
        }
    }

    fn inn<E: serde::de::Error>(n: Num) -> Result<f64, E> {
        match n {
            Num::F(v) => Ok(v),
            Num::S(s) => match s.as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                _ => Err(E::custom(format!("bad endpoint {s:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &[(f64, f64)], s: S) -> Result<S::Ok, S::Error> {
        let list: Vec<(Num, Num)> = v.iter().map(|&(a, b)| (out(a), out(b))).collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(f64, f64)>, D::Error> {
        let list: Vec<(Num, Num)> = Vec::deserialize(d)?;
        list.into_iter()
            .map(|(a, b)| Ok((inn(a)?, inn(b)?)))
            .collect()
    }
}

/// Rule generating the intervals of a union beyond its explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tail {
    /// Interval `n >= 0` has width `width + growth n` and is followed by a gap of
    /// `gap + growth n`; the first one starts at `start`.
    Arithmetic {
        start: f64,
        gap: f64,
        width: f64,
        growth: f64,
    },
    /// `(scale ratio^n, scale ratio^n (1 + fill (ratio - 1)))` for `n >= 0`.
    GeometricAnnuli { ratio: f64, fill: f64, scale: f64 },
}

impl Tail {
    pub fn arithmetic(start: f64, gap: f64, width: f64, growth: f64) -> Self {
        Tail::Arithmetic {
            start,
            gap,
            width,
            growth,
        }
    }

    pub fn geometric(ratio: f64, fill: f64, scale: f64) -> Self {
        Tail::GeometricAnnuli { ratio, fill, scale }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Tail::Arithmetic {
                start,
                gap,
                width,
                growth,
            } => {
                if !(start >= 0.0 && gap > 0.0 && width > 0.0 && growth >= 0.0) {
                    return invalid(
                        "arithmetic tail needs start >= 0, gap > 0, width > 0, growth >= 0",
                    );
                }
            }
            Tail::GeometricAnnuli { ratio, fill, scale } => {
                if !(ratio > 1.0 && fill > 0.0 && fill < 1.0 && scale > 0.0) {
                    return invalid("geometric tail needs ratio > 1, 0 < fill < 1, scale > 0");
                }
            }
        }
        Ok(())
    }

    fn first_start(&self) -> f64 {
        match *self {
            Tail::Arithmetic { start, .. } => start,
            Tail::GeometricAnnuli { scale, .. } => scale,
        }
    }

    /// Generated intervals until one starts at or beyond `limit` (that one included).
    fn generate(&self, limit: f64, out: &mut Vec<(f64, f64)>) {
        match *self {
            Tail::Arithmetic {
                start,
                gap,
                width,
                growth,
            } => {
                let mut a = start;
                let mut n = 0.0;
                loop {
                    let w = width + growth * n;
                    out.push((a, a + w));
                    if a >= limit {
                        break;
                    }
                    a += w + gap + growth * n;
                    n += 1.0;
                }
            }
            Tail::GeometricAnnuli { ratio, fill, scale } => {
                let mut a = scale;
                loop {
                    out.push((a, a * (1.0 + fill * (ratio - 1.0))));
                    if a >= limit {
                        break;
                    }
                    a *= ratio;
                }
            }
        }
    }

    /// Widths tend to infinity.
    pub fn widths_diverge(&self) -> bool {
        match *self {
            Tail::Arithmetic { growth, .. } => growth > 0.0,
            Tail::GeometricAnnuli { .. } => true,
        }
    }
}

/// Transformation applied lazily to a union with a tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum UnionOp {
    Widen { radius: f64 },
    Shrink,
}

/// Union of open intervals of radii, sorted and disjoint.
///
/// Intervals derived by widening may start below zero, which then includes the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalUnion {
    #[serde(with = "endpoints", default)]
    pub intervals: Vec<(f64, f64)>,
    #[serde(default)]
    pub tail: Option<Tail>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ops: Vec<UnionOp>,
}

fn merge(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.retain(|iv| iv.1 > iv.0);
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            // open intervals that only touch stay separate
            Some(last) if a < last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn shrink_components(comps: &[(f64, f64)], finite: bool) -> Vec<(f64, f64)> {
    if finite {
        return comps
            .iter()
            .copied()
            .filter(|c| c.1.is_infinite())
            .collect();
    }
    comps
        .iter()
        .filter_map(|&(a, b)| {
            if b.is_infinite() {
                return Some((a, b));
            }
            let a0 = a.max(0.0);
            let delta = a0.min(b - a0);
            let h = (4.0 + delta).sqrt() / 2.0;
            let (na, nb) = (a0 + h, b - h);
            (nb > na).then_some((na, nb))
        })
        .collect()
}

impl IntervalUnion {
    pub fn new(intervals: Vec<(f64, f64)>, tail: Option<Tail>) -> Result<Self> {
        let u = IntervalUnion {
            intervals,
            tail,
            ops: Vec::new(),
        };
        u.validate()?;
        Ok(u)
    }

    pub fn bounded(intervals: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(intervals, None)
    }

    pub fn validate(&self) -> Result<()> {
        for &(a, b) in &self.intervals {
            if a.is_nan() || b.is_nan() || !(a < b) || a == f64::INFINITY {
                return invalid(format!("bad interval ({a}, {b})"));
            }
        }
        for w in self.intervals.windows(2) {
            if w[1].0 < w[0].1 {
                return invalid("intervals must be sorted and disjoint");
            }
        }
        if let Some(t) = &self.tail {
            t.validate()?;
            if let Some(last) = self.intervals.last() {
                if t.first_start() < last.1 {
                    return invalid("tail must start after the explicit intervals");
                }
            }
        }
        for op in &self.ops {
            if let UnionOp::Widen { radius } = op {
                if !(*radius > 0.0) {
                    return invalid("widening radius must be positive");
                }
            }
        }
        Ok(())
    }

    /// True when the union has finitely many components.
    pub fn is_finite_list(&self) -> bool {
        self.tail.is_none()
    }

    /// True when the union is contained in a bounded set.
    pub fn is_bounded(&self) -> bool {
        self.tail.is_none() && self.intervals.iter().all(|iv| iv.1.is_finite())
    }

    fn widen_total(&self) -> f64 {
        self.ops
            .iter()
            .map(|op| match op {
                UnionOp::Widen { radius } => *radius,
                UnionOp::Shrink => 0.0,
            })
            .sum()
    }

    /// Components meeting `(-inf, r)`, the last one clipped at `r`.
    pub fn intervals_up_to(&self, r: f64) -> Vec<(f64, f64)> {
        let limit = 2.0 * r + 4.0 * self.widen_total() + 10.0;
        let mut base = self.intervals.clone();
        if let Some(t) = &self.tail {
            t.generate(limit, &mut base);
        }
        let finite = self.tail.is_none();
        let mut comps = merge(base);
        for op in &self.ops {
            comps = match op {
                UnionOp::Widen { radius } => merge(
                    comps
                        .iter()
                        .map(|&(a, b)| (a - radius, b + radius))
                        .collect(),
                ),
                UnionOp::Shrink => shrink_components(&comps, finite),
            };
        }
        comps
            .into_iter()
            .filter(|c| c.0 < r)
            .map(|(a, b)| (a, b.min(r)))
            .collect()
    }

    /// Materialized form when the union is a finite list.
    fn materialized(&self) -> Option<Vec<(f64, f64)>> {
        self.tail
            .is_none()
            .then(|| self.intervals_up_to(f64::INFINITY))
    }

    pub fn contains(&self, r: f64) -> bool {
        self.intervals_up_to(r + 1.0)
            .iter()
            .any(|&(a, b)| a < r && r < b)
    }

    /// Distance from `r` to the closure of the union.
    pub fn distance(&self, r: f64) -> f64 {
        let comps = self.intervals_up_to(2.0 * r + 1.0);
        let mut best = f64::INFINITY;
        for &(a, b) in &comps {
            let d = if r < a {
                a - r
            } else if r > b {
                r - b
            } else {
                0.0
            };
            best = best.min(d);
        }
        // the component beyond the search window is at least r + 1 away
        best.min(if self.tail.is_some() {
            r + 1.0
        } else {
            f64::INFINITY
        })
    }

    /// `|I ∩ [lo, hi]|`.
    pub fn measure(&self, lo: f64, hi: f64) -> f64 {
        self.intervals_up_to(hi)
            .iter()
            .map(|&(a, b)| (b.min(hi) - a.max(lo)).max(0.0))
            .sum()
    }

    pub fn widen(&self, r: f64) -> Self {
        let mut out = self.clone();
        out.ops.push(UnionOp::Widen { radius: r });
        if let Some(m) = out.materialized() {
            return IntervalUnion {
                intervals: m,
                tail: None,
                ops: Vec::new(),
            };
        }
        out
    }
}

/// Observable region of configuration space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationSet {
    FullSpace,
    /// `{x : |x| in radii}` in any dimension.
    Spherical {
        radii: IntervalUnion,
    },
    /// Two-dimensional cone over open arcs `(start, end)` of angles.
    ConicalArcs {
        arcs: Vec<(f64, f64)>,
    },
    /// Cones of half-angle `epsilon / 2` around the rotated axes `e_-` at angle
    /// `basis_angle` and `e_+` at `basis_angle + pi / 2`.
    TwoCones {
        epsilon: f64,
        basis_angle: f64,
    },
    /// One-dimensional union of the open rays `x > 0` and `x < 0`.
    HalfLineCone {
        positive: bool,
        negative: bool,
    },
    /// One-dimensional finite union of open intervals of the line.
    Line {
        #[serde(with = "endpoints")]
        intervals: Vec<(f64, f64)>,
    },
    /// Open ball `{|x| < radius}`.
    Ball {
        radius: f64,
    },
    /// `R`-neighbourhood of the inner set.
    Thickened {
        inner: Box<ObservationSet>,
        radius: f64,
    },
    /// Inner set with the closed ball `{|x| <= radius}` removed.
    Punctured {
        inner: Box<ObservationSet>,
        radius: f64,
    },
    Union {
        sets: Vec<ObservationSet>,
    },
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Circular distance between two angles.
fn ang_dist(a: f64, b: f64) -> f64 {
    ((a - b + PI).rem_euclid(2.0 * PI) - PI).abs()
}

fn in_arc(phi: f64, (a, b): (f64, f64)) -> bool {
    let w = b - a;
    if w >= 2.0 * PI {
        return true;
    }
    let s = (phi - a).rem_euclid(2.0 * PI);
    s > 0.0 && s < w
}

fn arc_clearance(phi: f64, arcs: &[(f64, f64)]) -> f64 {
    let mut best = PI;
    for &(a, b) in arcs {
        if b - a >= 2.0 * PI {
            return 0.0;
        }
        let s = (phi - a).rem_euclid(2.0 * PI);
        if s <= b - a {
            return 0.0;
        }
        best = best.min(ang_dist(phi, a)).min(ang_dist(phi, b));
    }
    best
}

/// `C^inf` step equal to 1 on `[0, 1/2]` and 0 on `[1, inf)`.
pub fn smoothstep(u: f64) -> f64 {
    let psi = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    if u <= 0.5 {
        return 1.0;
    }
    if u >= 1.0 {
        return 0.0;
    }
    let a = psi(1.0 - u);
    a / (a + psi(u - 0.5))
}

/// `max |smoothstep'|`, the Lipschitz constant of the cutoff profile.
pub fn smoothstep_slope() -> f64 {
    let n = 20_000;
    let h = 0.5 / n as f64;
    (0..n)
        .map(|k| {
            let u = 0.5 + h * k as f64;
            ((smoothstep(u + h) - smoothstep(u)) / h).abs()
        })
        .fold(0.0, f64::max)
}

impl ObservationSet {
    pub fn two_cones(epsilon: f64, basis_angle: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < PI / 2.0) {
            return Err(Error::Domain(format!(
                "epsilon = {epsilon} outside (0, pi/2)"
            )));
        }
        Ok(ObservationSet::TwoCones {
            epsilon,
            basis_angle,
        })
    }

    pub fn spherical(radii: IntervalUnion) -> Self {
        ObservationSet::Spherical { radii }
    }

    /// Dimension the set lives in, when fixed by the variant.
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            ObservationSet::ConicalArcs { .. } | ObservationSet::TwoCones { .. } => Some(2),
            ObservationSet::HalfLineCone { .. } | ObservationSet::Line { .. } => Some(1),
            ObservationSet::Thickened { inner, .. } | ObservationSet::Punctured { inner, .. } => {
                inner.fixed_dim()
            }
            ObservationSet::Union { sets } => sets.iter().find_map(|s| s.fixed_dim()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ObservationSet::Spherical { radii } => radii.validate(),
            ObservationSet::ConicalArcs { arcs } => {
                if arcs
                    .iter()
                    .any(|&(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
                {
                    return invalid("arcs need finite start < end");
                }
                Ok(())
            }
            ObservationSet::TwoCones { epsilon, .. } => {
                if !(*epsilon > 0.0 && *epsilon < PI / 2.0) {
                    return Err(Error::Domain(format!(
                        "epsilon = {epsilon} outside (0, pi/2)"
                    )));
                }
                Ok(())
            }
            ObservationSet::Line { intervals } => {
                if intervals.iter().any(|&(a, b)| !(a < b)) {
                    return invalid("line intervals need start < end");
                }
                Ok(())
            }
            ObservationSet::Ball { radius } | ObservationSet::Punctured { radius, .. }
                if *radius < 0.0 =>
            {
                invalid("radius must be nonnegative")
            }
            ObservationSet::Thickened { radius, .. } if !(*radius > 0.0) => {
                invalid("thickening radius must be positive")
            }
            ObservationSet::Thickened { inner, .. } | ObservationSet::Punctured { inner, .. } => {
                inner.validate()
            }
            ObservationSet::Union { sets } => sets.iter().try_for_each(|s| s.validate()),
            _ => Ok(()),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if let Some(d) = self.fixed_dim() {
            if x.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: x.len(),
                });
            }
        }
        Ok(())
    }

    /// Direction arcs of a planar conical set.
    pub fn arcs(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            ObservationSet::ConicalArcs { ref arcs } => Some(arcs.clone()),
            ObservationSet::TwoCones {
                epsilon,
                basis_angle,
            } => {
                let h = epsilon / 2.0;
                let b = basis_angle;
                Some(vec![(b - h, b + h), (b + PI / 2.0 - h, b + PI / 2.0 + h)])
            }
            _ => None,
        }
    }

    fn variant_tag(&self) -> &'static str {
        match self {
            ObservationSet::FullSpace => "full_space",
            ObservationSet::Spherical { .. } => "spherical",
            ObservationSet::ConicalArcs { .. } => "conical_arcs",
            ObservationSet::TwoCones { .. } => "two_cones",
            ObservationSet::HalfLineCone { .. } => "half_line_cone",
            ObservationSet::Line { .. } => "line",
            ObservationSet::Ball { .. } => "ball",
            ObservationSet::Thickened { .. } => "thickened",
            ObservationSet::Punctured { .. } => "punctured",
            ObservationSet::Union { .. } => "union",
        }
    }

    fn is_mixed_union(&self) -> bool {
        match self {
            ObservationSet::Union { sets } => sets
                .windows(2)
                .any(|w| w[0].variant_tag() != w[1].variant_tag()),
            _ => false,
        }
    }

    /// Exact membership predicate.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x)?;
        Ok(match self {
            ObservationSet::FullSpace => true,
            ObservationSet::Spherical { radii } => radii.contains(norm(x)),
            ObservationSet::ConicalArcs { arcs } => {
                (x[0] != 0.0 || x[1] != 0.0) && arcs.iter().any(|&a| in_arc(x[1].atan2(x[0]), a))
            }
            ObservationSet::TwoCones {
                epsilon,
                basis_angle,
            } => {
                let (s, c) = basis_angle.sin_cos();
                let along_minus = x[0] * c + x[1] * s;
                let along_plus = -x[0] * s + x[1] * c;
                let t = (epsilon / 2.0).tan();
                along_plus.abs() < t * along_minus || along_minus.abs() < t * along_plus
            }
            ObservationSet::HalfLineCone { positive, negative } => {
                (*positive && x[0] > 0.0) || (*negative && x[0] < 0.0)
            }
            ObservationSet::Line { intervals } => {
                intervals.iter().any(|&(a, b)| a < x[0] && x[0] < b)
            }
            ObservationSet::Ball { radius } => norm(x) < *radius,
            ObservationSet::Thickened { inner, radius } => {
                if inner.is_mixed_union() {
                    return Err(Error::Unsupported(
                        "thickening a union of different set kinds".into(),
                    ));
                }
                inner.distance(x)? < *radius
            }
            ObservationSet::Punctured { inner, radius } => {
                norm(x) > *radius && inner.contains(x)?
            }
            ObservationSet::Union { sets } => {
                for s in sets {
                    if s.contains(x)? {
                        return Ok(true);
                    }
                }
                false
            }
        })
    }

    /// Euclidean distance from `x` to the set (zero inside).
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let r = norm(x);
        Ok(match self {
            ObservationSet::FullSpace => 0.0,
            ObservationSet::Spherical { radii } => radii.distance(r),
            ObservationSet::ConicalArcs { .. } | ObservationSet::TwoCones { .. } => {
                if r == 0.0 {
                    return Ok(0.0);
                }
                let arcs = self.arcs().unwrap();
                let gap = arc_clearance(x[1].atan2(x[0]), &arcs);
                if gap <= PI / 2.0 {
                    r * gap.sin()
                } else {
                    r
                }
            }
            ObservationSet::HalfLineCone { positive, negative } => {
                if self.contains(x)? {
                    0.0
                } else if *positive || *negative {
                    x[0].abs()
                } else {
                    f64::INFINITY
                }
            }
            ObservationSet::Line { intervals } => intervals
                .iter()
                .map(|&(a, b)| {
                    if x[0] < a {
                        a - x[0]
                    } else if x[0] > b {
                        x[0] - b
                    } else {
                        0.0
                    }
                })
                .fold(f64::INFINITY, f64::min),
            ObservationSet::Ball { radius } => (r - radius).max(0.0),
            ObservationSet::Thickened { inner, radius } => {
                if inner.is_mixed_union() {
                    return Err(Error::Unsupported(
                        "thickening a union of different set kinds".into(),
                    ));
                }
                (inner.distance(x)? - radius).max(0.0)
            }
            ObservationSet::Punctured { .. } => {
                if self.contains(x)? {
                    0.0
                } else {
                    return Err(Error::Unsupported(
                        "distance to a punctured set outside the set".into(),
                    ));
                }
            }
            ObservationSet::Union { sets } => {
                let mut best = f64::INFINITY;
                for s in sets {
                    best = best.min(s.distance(x)?);
                }
                best
            }
        })
    }

    /// `R`-neighbourhood `{x : dist(x, set) < R}`.
    pub fn thicken(&self, radius: f64) -> Result<ObservationSet> {
        if !(radius > 0.0) {
            return invalid("thickening radius must be positive");
        }
        Ok(match self {
            ObservationSet::FullSpace => ObservationSet::FullSpace,
            ObservationSet::Spherical { radii } => ObservationSet::Spherical {
                radii: radii.widen(radius),
            },
            ObservationSet::Line { intervals } => ObservationSet::Line {
                intervals: merge(
                    intervals
                        .iter()
                        .map(|&(a, b)| (a - radius, b + radius))
                        .collect(),
                ),
            },
            ObservationSet::Ball { radius: r } => ObservationSet::Ball { radius: r + radius },
            ObservationSet::Thickened { inner, radius: r } => ObservationSet::Thickened {
                inner: inner.clone(),
                radius: r + radius,
            },
            ObservationSet::Union { sets } if !self.is_mixed_union() => ObservationSet::Union {
                sets: sets
                    .iter()
                    .map(|s| s.thicken(radius))
                    .collect::<Result<_>>()?,
            },
            _ => ObservationSet::Thickened {
                inner: Box::new(self.clone()),
                radius,
            },
        })
    }

    /// Radius beyond which the `R`-neighbourhood of a two-cones set lies inside the
    /// two-cones set of twice the aperture.
    pub fn exclusion_radius(&self, radius: f64) -> Option<f64> {
        match *self {
            ObservationSet::TwoCones { epsilon, .. } => Some(radius / (epsilon / 2.0).sin()),
            _ => None,
        }
    }

    pub fn punctured(&self, radius: f64) -> ObservationSet {
        ObservationSet::Punctured {
            inner: Box::new(self.clone()),
            radius,
        }
    }

    /// Angular distance from the direction `dir` to the closure of a conical set.
    pub fn angular_clearance(&self, dir: &[f64]) -> Result<f64> {
        self.check_dim(dir)?;
        match self {
            ObservationSet::HalfLineCone { positive, negative } => {
                let hit = (dir[0] > 0.0 && *positive) || (dir[0] < 0.0 && *negative);
                Ok(if hit { 0.0 } else { PI })
            }
            ObservationSet::ConicalArcs { .. } | ObservationSet::TwoCones { .. } => {
                Ok(arc_clearance(dir[1].atan2(dir[0]), &self.arcs().unwrap()))
            }
            _ => Err(Error::Unsupported(format!(
                "angular clearance of a {} set",
                self.variant_tag()
            ))),
        }
    }

    /// Smooth cutoff `S(dist(x, set) / R)`: 1 on the `R/2`-neighbourhood, 0 outside the
    /// `R`-neighbourhood.
    pub fn mollified_cutoff(&self, radius: f64, x: &[f64]) -> Result<f64> {
        if !(radius >= 1.0) {
            return Err(Error::Domain(format!("cutoff radius {radius} below 1")));
        }
        if self.is_mixed_union() {
            return Err(Error::Unsupported(
                "cutoff of a union of different set kinds".into(),
            ));
        }
        Ok(smoothstep(self.distance(x)? / radius))
    }
}

/// Estimate of the density threshold at infinity of a radial union.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub estimate: f64,
    /// `"closed_form"` or `"scan"`.
    pub method: String,
    pub r_max: Option<f64>,
    pub threshold: Option<f64>,
    /// `(kappa, g(kappa))` on the report grid.
    pub g_values: Vec<(f64, f64)>,
    pub monotone: bool,
}

/// `kappa_star` in closed form: 0 for bounded unions, 1 for unions with an unbounded
/// component or an arithmetic tail, `(1 + fill (ratio - 1)) / ratio` for geometric annuli.
pub fn kappa_star(set: &IntervalUnion) -> Result<KappaReport> {
    set.validate()?;
    let estimate = match &set.tail {
        None => {
            if set
                .intervals_up_to(f64::INFINITY)
                .iter()
                .any(|c| c.1.is_infinite())
            {
                1.0
            } else {
                0.0
            }
        }
        Some(Tail::Arithmetic { .. }) => 1.0,
        Some(Tail::GeometricAnnuli { ratio, fill, .. }) => {
            // widening merges annuli once 2R covers the gaps only finitely often; the
            // relative gap, hence the threshold, is unchanged
            (1.0 + fill * (ratio - 1.0)) / ratio
        }
    };
    Ok(KappaReport {
        estimate,
        method: "closed_form".into(),
        r_max: None,
        threshold: None,
        g_values: Vec::new(),
        monotone: true,
    })
}

/// Scan parameters of the numerical `kappa_star` estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaGrid {
    pub r_max: f64,
    pub n_kappa: usize,
    pub threshold: f64,
}

impl Default for KappaGrid {
    fn default() -> Self {
        KappaGrid {
            r_max: 1e6,
            n_kappa: 101,
            threshold: 1e-3,
        }
    }
}

/// `g(kappa)`: minimum over `r` in the last decade `[r_max/10, r_max]` of
/// `|I ∩ [kappa r, r]| / r`.
///
/// Between breakpoints `|I ∩ [kappa r, r]|` is affine in `r`, so the ratio is monotone
/// there; the minimum is taken over the breakpoints `r in {a, b, a/kappa, b/kappa}` and
/// the decade ends.
pub fn g_of_kappa(comps: &[(f64, f64)], kappa: f64, r_max: f64) -> f64 {
    let lo = r_max / 10.0;
    // comps are sorted and disjoint, so `|I ∩ [0, x]|` comes from prefix sums
    let mut prefix = vec![0.0];
    for &(a, b) in comps {
        prefix.push(prefix.last().unwrap() + (b - a));
    }
    let ends: Vec<f64> = comps
        .iter()
        .flat_map(|c| [c.0, c.1])
        .filter(|e| e.is_finite())
        .collect();
    let mut best = f64::INFINITY;
    // each candidate family is increasing in r, so both cursors only move forward
    let mut sweep = |rs: &mut dyn Iterator<Item = f64>| {
        let (mut k_hi, mut k_lo) = (0, 0);
        for r in rs {
            best = best.min(
                (below(comps, &prefix, &mut k_hi, r) - below(comps, &prefix, &mut k_lo, kappa * r))
                    .max(0.0)
                    / r,
            );
        }
    };
    sweep(&mut [lo, r_max].into_iter());
    sweep(&mut ends.iter().copied().filter(|&e| e >= lo && e <= r_max));
    if kappa > 0.0 {
        sweep(
            &mut ends
                .iter()
                .map(|e| e / kappa)
                .filter(|&r| r >= lo && r <= r_max),
        );
    }
    best
}

/// `|I ∩ [0, x]|` for nondecreasing `x` across calls sharing the cursor `k`.
fn below(comps: &[(f64, f64)], prefix: &[f64], k: &mut usize, x: f64) -> f64 {
    while *k < comps.len() && comps[*k].1 <= x {
        *k += 1;
    }
    prefix[*k] + comps.get(*k).map_or(0.0, |c| (x - c.0).max(0.0))
}

/// Numerical `kappa_star`: the smallest `kappa` with `g(kappa) <= threshold`, by bisection.
pub fn kappa_star_scan(set: &IntervalUnion, grid: KappaGrid) -> Result<KappaReport> {
    set.validate()?;
    if !(grid.r_max > 10.0) || grid.n_kappa < 2 {
        return invalid("kappa scan needs r_max > 10 and at least two grid points");
    }
    let comps = set.intervals_up_to(grid.r_max);
    let g = |k: f64| g_of_kappa(&comps, k, grid.r_max);
    let g_values: Vec<(f64, f64)> = (0..grid.n_kappa)
        .map(|i| {
            let k = i as f64 / (grid.n_kappa - 1) as f64;
            (k, g(k))
        })
        .collect();
    let monotone = g_values.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    if !monotone {
        log::warn!("g(kappa) is not monotone on the grid; kappa_star estimate is inconclusive");
    }
    let estimate = if g(0.0) <= grid.threshold {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if g(mid) <= grid.threshold {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    Ok(KappaReport {
        estimate,
        method: "scan".into(),
        r_max: Some(grid.r_max),
        threshold: Some(grid.threshold),
        g_values,
        monotone,
    })
}

/// Shrunk union: each component `(a, b)` becomes `(a + h, b - h)` with
/// `h = sqrt(4 + min(a, b - a)) / 2`.
///
/// A finite union keeps only its unbounded component, if any.
pub fn shrink_set(set: &IntervalUnion) -> Result<IntervalUnion> {
    set.validate()?;
    match &set.tail {
        None => {
            let comps = set.intervals_up_to(f64::INFINITY);
            Ok(IntervalUnion {
                intervals: shrink_components(&comps, true),
                tail: None,
                ops: Vec::new(),
            })
        }
        Some(t) => {
            if !t.widths_diverge() {
                return Err(Error::Domain(
                    "shrinking needs interval widths tending to infinity".into(),
                ));
            }
            let mut out = set.clone();
            out.ops.push(UnionOp::Shrink);
            Ok(out)
        }
    }
}

/// Fraction of the arc `S^1 ∩ B_r(e^{i theta})` covered by the union of `arcs`.
pub fn lower_density(arcs: &[(f64, f64)], theta: f64, r: f64) -> Result<f64> {
    if !(r > 0.0 && r < 2.0) {
        return Err(Error::Domain(format!("r = {r} outside (0, 2)")));
    }
    let half = 2.0 * (r / 2.0).asin();
    // move to coordinates centred at theta, window (-half, half)
    let mut pieces = Vec::new();
    for &(a, b) in arcs {
        let w = (b - a).min(2.0 * PI);
        let s = (a - theta + PI).rem_euclid(2.0 * PI) - PI;
        for shift in [-2.0 * PI, 0.0, 2.0 * PI] {
            let (lo, hi) = ((s + shift).max(-half), (s + shift + w).min(half));
            if hi > lo {
                pieces.push((lo, hi));
            }
        }
    }
    let covered: f64 = merge(pieces).iter().map(|p| p.1 - p.0).sum();
    Ok((covered / (2.0 * half)).min(1.0))
}

/// Minimum of [`lower_density`] over a geometric grid `r in [r_min, 1]`.
pub fn lower_density_liminf(arcs: &[(f64, f64)], theta: f64, r_min: f64, n: usize) -> Result<f64> {
    let n = n.max(2);
    let mut best = f64::INFINITY;
    for k in 0..n {
        let r = r_min.powf(k as f64 / (n - 1) as f64);
        best = best.min(lower_density(arcs, theta, r)?);
    }
    Ok(best)
}

//! Confinement potentials, gas parameters and particle configurations.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::Point;

/// Step used for finite-difference derivatives of user potentials.
pub const USER_FD_STEP: f64 = 1e-5;

/// Which derivative of the potential to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivativeOrder {
    Value,
    Gradient,
    Laplacian,
}

/// Result of [`ConfinementPotential::evaluate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Evaluation {
    Scalar(f64),
    Vector([f64; 2]),
}

type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Quadratic,
    Quartic,
    Sampled(Arc<GridPotential>),
    User(ScalarFn),
}

/// The confinement `V`: value, gradient and Laplacian at a point.
#[derive(Clone)]
pub struct ConfinementPotential {
    kind: Kind,
    tag: String,
}

impl fmt::Debug for ConfinementPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConfinementPotential")
            .field("tag", &self.tag)
            .finish()
    }
}

impl ConfinementPotential {
    /// `V(x) = |x|^2 / 2`.
    pub fn quadratic() -> Self {
        ConfinementPotential {
            kind: Kind::Quadratic,
            tag: "quadratic".into(),
        }
    }

    /// `V(x) = |x|^4 / 4`.
    pub fn quartic() -> Self {
        ConfinementPotential {
            kind: Kind::Quartic,
            tag: "quartic".into(),
        }
    }

    /// A user potential given by its values only; derivatives are taken by
    /// centred finite differences with step [`USER_FD_STEP`].
    pub fn user<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(Point) -> f64 + Send + Sync + 'static,
    {
        ConfinementPotential {
            kind: Kind::User(Arc::new(f)),
            tag: name.into(),
        }
    }

    pub fn sampled(grid: GridPotential, tag: impl Into<String>) -> Self {
        ConfinementPotential {
            kind: Kind::Sampled(Arc::new(grid)),
            tag: tag.into(),
        }
    }

    /// Resolves a configuration tag: `quadratic`, `quartic` or `grid:<path>`.
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.trim() {
            "quadratic" => Ok(Self::quadratic()),
            "quartic" => Ok(Self::quartic()),
            t if t.starts_with("grid:") => {
                let path = &t["grid:".len()..];
                Ok(Self::sampled(GridPotential::read(path)?, t))
            }
            other => Err(LabError::config(format!("unknown potential tag '{other}'"))),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// True for the closed-form radially symmetric builtins.
    pub fn is_radial_builtin(&self) -> bool {
        matches!(self.kind, Kind::Quadratic | Kind::Quartic)
    }

    /// Radial profile of the builtins.
    pub fn radial_profile(&self) -> Option<RadialProfile> {
        match self.kind {
            Kind::Quadratic => Some(RadialProfile::new(
                |r| 0.5 * r * r,
                |r| r,
                |_| 1.0,
            )),
            Kind::Quartic => Some(RadialProfile::new(
                |r| 0.25 * r.powi(4),
                |r| r.powi(3),
                |r| 3.0 * r * r,
            )),
            _ => None,
        }
    }

    /// Potential value. Pure; non-finite input propagates.
    #[inline]
    pub fn value(&self, p: Point) -> f64 {
        match &self.kind {
            Kind::Quadratic => 0.5 * p.norm_sqr(),
            Kind::Quartic => {
                let r2 = p.norm_sqr();
                0.25 * r2 * r2
            }
            Kind::Sampled(g) => g.value(p),
            Kind::User(f) => f(p),
        }
    }

    #[inline]
    pub fn gradient(&self, p: Point) -> [f64; 2] {
        match &self.kind {
            Kind::Quadratic => [p.x, p.y],
            Kind::Quartic => {
                let r2 = p.norm_sqr();
                [r2 * p.x, r2 * p.y]
            }
            _ => {
                let h = USER_FD_STEP;
                let dx = Point::new(h, 0.0);
                let dy = Point::new(0.0, h);
                [
                    (self.value(p + dx) - self.value(p - dx)) / (2.0 * h),
                    (self.value(p + dy) - self.value(p - dy)) / (2.0 * h),
                ]
            }
        }
    }

    #[inline]
    pub fn laplacian(&self, p: Point) -> f64 {
        match &self.kind {
            Kind::Quadratic => 2.0,
            Kind::Quartic => 4.0 * p.norm_sqr(),
            _ => {
                let h = USER_FD_STEP;
                let c = self.value(p);
                let s = self.value(p + Point::new(h, 0.0))
                    + self.value(p - Point::new(h, 0.0))
                    + self.value(p + Point::new(0.0, h))
                    + self.value(p - Point::new(0.0, h));
                (s - 4.0 * c) / (h * h)
            }
        }
    }

    /// Validated evaluation of the requested derivative order.
    pub fn evaluate(&self, p: Point, order: DerivativeOrder) -> Result<Evaluation> {
        let p = p.validated()?;
        Ok(match order {
            DerivativeOrder::Value => Evaluation::Scalar(self.value(p)),
            DerivativeOrder::Gradient => Evaluation::Vector(self.gradient(p)),
            DerivativeOrder::Laplacian => Evaluation::Scalar(self.laplacian(p)),
        })
    }

    /// Samples `V(x) / log|x|` on circles and returns the minimum over the
    /// angle for each radius. A heuristic surface for the growth condition;
    /// callers check that every ratio exceeds one.
    pub fn check_growth_condition(&self, radii: &[f64]) -> Result<Vec<f64>> {
        const ANGLES: usize = 256;
        let mut prev = 0.0;
        let mut out = Vec::with_capacity(radii.len());
        for &r in radii {
            if !(r >= 2.0) {
                return Err(LabError::domain(format!(
                    "growth check radius must be at least 2, got {r}"
                )));
            }
            if r <= prev {
                return Err(LabError::domain("growth check radii must be increasing"));
            }
            prev = r;
            let log_r = r.ln();
            let min = (0..ANGLES)
                .map(|k| {
                    let theta = 2.0 * std::f64::consts::PI * k as f64 / ANGLES as f64;
                    self.value(Point::polar(r, theta)) / log_r
                })
                .fold(f64::INFINITY, f64::min);
            out.push(min);
        }
        Ok(out)
    }
}

/// Radial profile `v(r)` of a rotation-invariant potential with its first
/// two derivatives.
#[derive(Clone)]
pub struct RadialProfile {
    value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    first: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    second: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl RadialProfile {
    pub fn new<A, B, C>(value: A, first: B, second: C) -> Self
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        B: Fn(f64) -> f64 + Send + Sync + 'static,
        C: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        RadialProfile {
            value: Arc::new(value),
            first: Arc::new(first),
            second: Arc::new(second),
        }
    }

    /// Builds a profile from values, differentiating numerically.
    pub fn from_values<A>(value: A) -> Self
    where
        A: Fn(f64) -> f64 + Send + Sync + Clone + 'static,
    {
        let h = 1e-4;
        let v1 = value.clone();
        let v2 = value.clone();
        RadialProfile::new(
            value,
            move |r| (v1(r + h) - v1(r - h)) / (2.0 * h),
            move |r| (v2(r + h) - 2.0 * v2(r) + v2(r - h)) / (h * h),
        )
    }

    pub fn v(&self, r: f64) -> f64 {
        (self.value)(r)
    }

    pub fn dv(&self, r: f64) -> f64 {
        (self.first)(r)
    }

    pub fn d2v(&self, r: f64) -> f64 {
        (self.second)(r)
    }
}

/// A potential tabulated on an `M x M` grid over `[-L, L]^2`, read from
/// the text format `GRD1 M L` followed by `M` rows of `M` values.
///
/// Values are interpolated with Catmull–Rom bicubic patches. Outside the
/// table the value at the nearest table point is continued with
/// `|p - p_clamped|^2 / 2` so that the potential keeps growing.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPotential {
    pub m: usize,
    pub half_width: f64,
    pub values: Vec<f64>,
}

impl GridPotential {
    pub fn new(m: usize, half_width: f64, values: Vec<f64>) -> Result<Self> {
        if m < 4 || values.len() != m * m || !(half_width > 0.0) {
            return Err(LabError::format(
                "grid potential needs M >= 4, L > 0 and M*M values",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::format("grid potential contains non-finite values"));
        }
        Ok(GridPotential {
            m,
            half_width,
            values,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| LabError::format("empty grid potential file"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("GRD1") {
            return Err(LabError::format("grid potential must start with 'GRD1'"));
        }
        let m: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| LabError::format("bad M in GRD1 header"))?;
        let half_width: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| LabError::format("bad L in GRD1 header"))?;
        let mut values = Vec::with_capacity(m * m);
        for (row, line) in lines.enumerate() {
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| {
                    LabError::format(format!("bad value '{tok}' on row {row}"))
                })?);
            }
            if values.len() - before != m {
                return Err(LabError::format(format!(
                    "row {row} has {} values, expected {m}",
                    values.len() - before
                )));
            }
        }
        Self::new(m, half_width, values)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("GRD1 {} {}\n", self.m, self.half_width);
        for row in self.values.chunks(self.m) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Tabulates a function on the grid.
    pub fn tabulate<F: Fn(Point) -> f64>(m: usize, half_width: f64, f: F) -> Result<Self> {
        let h = 2.0 * half_width / (m - 1) as f64;
        let mut values = Vec::with_capacity(m * m);
        for row in 0..m {
            for col in 0..m {
                values.push(f(Point::new(
                    -half_width + col as f64 * h,
                    -half_width + row as f64 * h,
                )));
            }
        }
        Self::new(m, half_width, values)
    }

    fn at(&self, col: isize, row: isize) -> f64 {
        let c = col.clamp(0, self.m as isize - 1) as usize;
        let r = row.clamp(0, self.m as isize - 1) as usize;
        self.values[r * self.m + c]
    }

    fn catmull_rom(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
        0.5 * (2.0 * p1
            + (-p0 + p2) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
    }

    pub fn value(&self, p: Point) -> f64 {
        let l = self.half_width;
        let q = Point::new(p.x.clamp(-l, l), p.y.clamp(-l, l));
        let h = 2.0 * l / (self.m - 1) as f64;
        let sx = (q.x + l) / h;
        let sy = (q.y + l) / h;
        let c = (sx.floor() as isize).min(self.m as isize - 2);
        let r = (sy.floor() as isize).min(self.m as isize - 2);
        let (tx, ty) = (sx - c as f64, sy - r as f64);
        let mut rows = [0.0; 4];
        for (k, dr) in (-1..=2).enumerate() {
            rows[k] = Self::catmull_rom(
                self.at(c - 1, r + dr),
                self.at(c, r + dr),
                self.at(c + 1, r + dr),
                self.at(c + 2, r + dr),
                tx,
            );
        }
        let inside = Self::catmull_rom(rows[0], rows[1], rows[2], rows[3], ty);
        inside + 0.5 * (p - q).norm_sqr()
    }
}

/// Particle number and inverse temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasParams {
    pub n: usize,
    pub beta: f64,
}

impl GasParams {
    pub fn new(n: usize, beta: f64) -> Result<Self> {
        if n == 0 {
            return Err(LabError::domain("particle count must be at least 1"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(LabError::domain(format!(
                "inverse temperature must be positive, got {beta}"
            )));
        }
        Ok(GasParams { n, beta })
    }
}

/// `N` particle positions together with the gas parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    points: Vec<Point>,
    params: GasParams,
}

impl Configuration {
    pub fn new(points: Vec<Point>, params: GasParams) -> Result<Self> {
        if points.len() != params.n {
            return Err(LabError::domain(format!(
                "configuration has {} points but N = {}",
                points.len(),
                params.n
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(LabError::InvalidPoint { x: p.x, y: p.y });
        }
        Ok(Configuration { points, params })
    }

    /// Convenience constructor deriving `N` from the point list.
    pub fn from_points(points: Vec<Point>, beta: f64) -> Result<Self> {
        let params = GasParams::new(points.len(), beta)?;
        Self::new(points, params)
    }

    #[inline]
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    #[inline]
    pub fn params(&self) -> GasParams {
        self.params
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.params.n
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.params.beta
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(e: Evaluation) -> f64 {
        match e {
            Evaluation::Scalar(v) => v,
            Evaluation::Vector(_) => panic!("expected scalar"),
        }
    }

    #[test]
    fn builtin_closed_forms() {
        let q = ConfinementPotential::quadratic();
        let p = Point::new(1.0, 0.0);
        assert_eq!(scalar(q.evaluate(p, DerivativeOrder::Value).unwrap()), 0.5);
        assert_eq!(scalar(q.evaluate(p, DerivativeOrder::Laplacian).unwrap()), 2.0);
        let quartic = ConfinementPotential::quartic();
        assert_eq!(
            quartic.evaluate(p, DerivativeOrder::Gradient).unwrap(),
            Evaluation::Vector([1.0, 0.0])
        );
    }

    #[test]
    fn non_finite_points_are_rejected() {
        let q = ConfinementPotential::quadratic();
        let err = q
            .evaluate(Point::new(f64::NAN, 0.0), DerivativeOrder::Value)
            .unwrap_err();
        assert!(matches!(err, LabError::InvalidPoint { .. }));
    }

    #[test]
    fn growth_ratios() {
        let ln10 = 10f64.ln();
        let q = ConfinementPotential::quadratic().check_growth_condition(&[10.0]).unwrap();
        assert!((q[0] - 50.0 / ln10).abs() < 1e-12);
        assert!((q[0] - 21.7147).abs() < 1e-3);
        let quartic = ConfinementPotential::quartic().check_growth_condition(&[10.0]).unwrap();
        assert!((quartic[0] - 2500.0 / ln10).abs() < 1e-9);

        // 0.5 log(1 + |x|^2) behaves like log|x|: the ratio tends to 1 from above
        // and never gives the margin the condition asks for.
        let marginal = ConfinementPotential::user("half-log", |p| 0.5 * (1.0 + p.norm_sqr()).ln());
        let r = marginal.check_growth_condition(&[100.0]).unwrap()[0];
        assert!((r - 0.5 * 10001f64.ln() / 100f64.ln()).abs() < 1e-12);
        assert!((r - 1.0).abs() < 1e-4);
        let weak = ConfinementPotential::user("quarter-log", |p| 0.25 * (1.0 + p.norm_sqr()).ln());
        let r = weak.check_growth_condition(&[100.0]).unwrap()[0];
        assert!((r - 0.5).abs() < 1e-4 && r < 1.0);
    }

    #[test]
    fn growth_check_domain_errors() {
        let q = ConfinementPotential::quadratic();
        assert!(q.check_growth_condition(&[1.5]).is_err());
        assert!(q.check_growth_condition(&[5.0, 3.0]).is_err());
    }

    #[test]
    fn user_potential_derivatives_by_finite_differences() {
        let u = ConfinementPotential::user("shifted", |p| 0.5 * p.norm_sqr() + p.x);
        let g = u.gradient(Point::new(0.3, -0.2));
        assert!((g[0] - 1.3).abs() < 1e-6 && (g[1] + 0.2).abs() < 1e-6);
        assert!((u.laplacian(Point::new(0.3, -0.2)) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn grid_potential_round_trip_and_interpolation() {
        let g = GridPotential::tabulate(41, 2.0, |p| 0.5 * p.norm_sqr()).unwrap();
        let parsed = GridPotential::parse(&g.to_text()).unwrap();
        assert_eq!(parsed, g);
        let v = ConfinementPotential::sampled(g, "grid:test");
        let p = Point::new(0.37, -0.81);
        assert!((v.value(p) - 0.5 * p.norm_sqr()).abs() < 1e-3);
        assert!((v.laplacian(p) - 2.0).abs() < 0.1);
        // continues growing outside the table
        assert!(v.value(Point::new(3.0, 0.0)) > v.value(Point::new(2.0, 0.0)));
    }

    #[test]
    fn grid_potential_format_errors() {
        assert!(GridPotential::parse("").is_err());
        assert!(GridPotential::parse("GRX 4 1\n").is_err());
        assert!(GridPotential::parse("GRD1 4 1\n1 2 3\n").is_err());
        assert!(ConfinementPotential::from_tag("cubic").is_err());
    }

    #[test]
    fn configuration_invariants() {
        let params = GasParams::new(2, 2.0).unwrap();
        assert!(Configuration::new(vec![Point::ORIGIN], params).is_err());
        assert!(Configuration::new(vec![Point::ORIGIN, Point::new(f64::INFINITY, 0.0)], params).is_err());
        assert!(GasParams::new(0, 1.0).is_err());
        assert!(GasParams::new(3, 0.0).is_err());
        assert!(GasParams::new(3, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn builtin_gradients_match_central_differences(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let h = 1e-4;
            for v in [ConfinementPotential::quadratic(), ConfinementPotential::quartic()] {
                let p = Point::new(x, y);
                let g = v.gradient(p);
                let fx = (v.value(p + Point::new(h, 0.0)) - v.value(p - Point::new(h, 0.0))) / (2.0 * h);
                let fy = (v.value(p + Point::new(0.0, h)) - v.value(p - Point::new(0.0, h))) / (2.0 * h);
                prop_assert!((g[0] - fx).abs() <= 10.0 * h * h);
                prop_assert!((g[1] - fy).abs() <= 10.0 * h * h);
                let c = v.value(p);
                let lap = (v.value(p + Point::new(h, 0.0)) + v.value(p - Point::new(h, 0.0))
                    + v.value(p + Point::new(0.0, h)) + v.value(p - Point::new(0.0, h)) - 4.0 * c) / (h * h);
                prop_assert!((v.laplacian(p) - lap).abs() < 1e-4);
            }
        }

        #[test]
        fn builtins_are_rotation_invariant(x in -2.0f64..2.0, y in -2.0f64..2.0, theta in 0.0f64..6.3) {
            let p = Point::new(x, y);
            let q = p.rotated(theta);
            for v in [ConfinementPotential::quadratic(), ConfinementPotential::quartic()] {
                let (a, b) = (v.value(p), v.value(q));
                prop_assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
                prop_assert!((v.laplacian(p) - v.laplacian(q)).abs() <= 1e-12 * (1.0 + v.laplacian(p)));
            }
        }
    }
}

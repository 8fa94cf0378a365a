//! Singular metric tensors on cylinder charts `N × [0, η]` and curve lengths.
//!
//! Every chart metric here is scalar-scaled in the boundary direction: the
//! boundary part of the tensor at height `r` is `s(r)·g_N` for a positive
//! scale function `s`. The log-spiral chart carries its `dr dθ` cross term
//! in its own type.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryGeometry, BoundaryPoint, BoundarySegment, Coords};
use crate::error::{invalid, GeomError, Result};

/// A point `(y, r)` of a cylinder chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub y: BoundaryPoint,
    pub r: f64,
}

impl ChartPoint {
    pub fn new(y: BoundaryPoint, r: f64) -> Self {
        Self { y, r }
    }

    /// Point over a circle boundary.
    pub fn polar(theta: f64, r: f64) -> Self {
        Self { y: BoundaryPoint::Angle(theta.rem_euclid(2.0 * PI)), r }
    }
}

/// Tangent vector `(ξ, λ)`: `ξ` tangent to `N`, `λ` radial.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub xi: Coords,
    pub lambda: f64,
}

impl Tangent {
    pub fn new(xi: &[f64], lambda: f64) -> Self {
        Self { xi: xi.iter().copied().collect(), lambda }
    }

    pub fn radial(lambda: f64) -> Self {
        Self { xi: Coords::new(), lambda }
    }
}

/// Warp profile `f` of a warped family `dr² + (r f(r))² g_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WarpProfile {
    /// `f(r) = Σ c_k r^k`.
    Polynomial { coefficients: Vec<f64> },
    /// `f(r) = amplitude · exp(rate · r)`.
    Exponential { amplitude: f64, rate: f64 },
}

impl WarpProfile {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            WarpProfile::Polynomial { coefficients } => coefficients.iter().rev().fold(0.0, |acc, c| acc * r + c),
            WarpProfile::Exponential { amplitude, rate } => amplitude * (rate * r).exp(),
        }
    }
}

/// How the boundary metric `g∂(r) = s(r)·g_N` depends on the height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum MetricFamily {
    /// `s(r) = scale`.
    Constant { scale: f64 },
    /// `s(r) = f(r)² · scale`.
    Warped { profile: WarpProfile, scale: f64 },
    /// `s` interpolated monotonically through `(radii[i], scales[i])`,
    /// held constant past the last radius.
    Tabulated { radii: Vec<f64>, scales: Vec<f64> },
}

const POSITIVITY_SAMPLES: usize = 2048;

impl MetricFamily {
    pub fn constant() -> Self {
        MetricFamily::Constant { scale: 1.0 }
    }

    /// Scale factor `s(r)`.
    pub fn scale(&self, r: f64) -> f64 {
        match self {
            MetricFamily::Constant { scale } => *scale,
            MetricFamily::Warped { profile, scale } => {
                let f = profile.eval(r);
                f * f * scale
            }
            MetricFamily::Tabulated { radii, scales } => pchip(radii, scales, r),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MetricFamily::Constant { .. })
    }

    fn validate(&self, height: f64) -> Result<()> {
        match self {
            MetricFamily::Constant { scale } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return invalid(format!("constant family scale must be positive, got {scale}"));
                }
            }
            MetricFamily::Warped { profile, scale } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return invalid(format!("warped family scale must be positive, got {scale}"));
                }
                if let WarpProfile::Polynomial { coefficients } = profile {
                    if coefficients.is_empty() {
                        return invalid("warp polynomial has no coefficients");
                    }
                }
                for k in 0..=POSITIVITY_SAMPLES {
                    let r = height * k as f64 / POSITIVITY_SAMPLES as f64;
                    let f = profile.eval(r);
                    if !(f > 0.0 && f.is_finite()) {
                        return invalid(format!("warp profile is not positive at r = {r}"));
                    }
                }
            }
            MetricFamily::Tabulated { radii, scales } => {
                if radii.len() < 2 || radii.len() != scales.len() {
                    return invalid("tabulated family needs at least two (radius, scale) samples");
                }
                if radii[0] != 0.0 {
                    return invalid("tabulated radii must start at 0");
                }
                if radii.windows(2).any(|w| !(w[1] > w[0])) {
                    return invalid("tabulated radii must be strictly increasing");
                }
                if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return invalid("tabulated scales must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Monotone piecewise cubic Hermite interpolation (Fritsch–Carlson slopes).
/// Values outside the table are held at the end values.
pub fn pchip(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = match xs.binary_search_by(|v| v.total_cmp(&x)) {
        Ok(i) => return ys[i],
        Err(i) => i - 1,
    };
    let h = |i: usize| xs[i + 1] - xs[i];
    let delta = |i: usize| (ys[i + 1] - ys[i]) / h(i);
    let slope = |i: usize| -> f64 {
        if i == 0 || i == n - 1 {
            // one-sided three-point end condition, clipped to stay monotone
            if n == 2 {
                return delta(0);
            }
            let (h0, h1, d0, d1) = if i == 0 {
                (h(0), h(1), delta(0), delta(1))
            } else {
                (h(n - 2), h(n - 3), delta(n - 2), delta(n - 3))
            };
            let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if m.signum() != d0.signum() {
                0.0
            } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
                3.0 * d0
            } else {
                m
            }
        } else {
            let (d0, d1) = (delta(i - 1), delta(i));
            if d0 * d1 <= 0.0 {
                0.0
            } else {
                let (h0, h1) = (h(i - 1), h(i));
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                (w1 + w2) / (w1 / d0 + w2 / d1)
            }
        }
    };
    let (m0, m1) = (slope(k), slope(k + 1));
    let hk = h(k);
    let t = (x - xs[k]) / hk;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * ys[k] + h10 * hk * m0 + h01 * ys[k + 1] + h11 * hk * m1
}

/// Interface every chart metric exposes to the distance engine.
///
/// A chart is `N × [lo, hi]` in coordinates `(y, r)`. Straight chart
/// segments follow a minimizing boundary segment in `y` while `r` varies
/// linearly, so along a segment the speed only depends on `r`, `ṙ`, the
/// boundary speed `|ẏ|` and, on circles, the signed angular rate.
pub trait ChartMetric: Send + Sync {
    fn boundary(&self) -> &BoundaryGeometry;

    /// Closed radial interval covered by the chart.
    fn radial_domain(&self) -> (f64, f64);

    /// Whether the face `r = lo` is collapsed to a single point.
    fn collapsed_lower(&self) -> bool;

    /// Whether the face `r = hi` is collapsed to a single point.
    fn collapsed_upper(&self) -> bool {
        false
    }

    /// Whether `r = lo` lies outside the chart (boundary at infinity).
    fn open_lower(&self) -> bool {
        false
    }

    /// Squared speed at height `r` for radial rate `dr`, boundary speed
    /// `tangential = |ẏ|_{g_N}` and signed angular rate `angular`.
    fn speed_sq(&self, r: f64, dr: f64, tangential: f64, angular: f64) -> f64;

    /// Closed-form distance when one is known.
    fn exact_distance(&self, _a: &ChartPoint, _b: &ChartPoint) -> Option<f64> {
        None
    }

    fn name(&self) -> &str;

    /// Checks that a point lies in the chart.
    fn check_point(&self, p: &ChartPoint) -> Result<()> {
        let (lo, hi) = self.radial_domain();
        if !p.r.is_finite() {
            return Err(GeomError::Domain(format!("radial coordinate {} is not finite", p.r)));
        }
        if self.open_lower() && p.r <= lo {
            return Err(GeomError::SingularEvaluation(format!(
                "r = {} is the boundary at infinity of {}",
                p.r,
                self.name()
            )));
        }
        if p.r < lo - 1e-12 || p.r > hi + 1e-12 {
            return Err(GeomError::Domain(format!(
                "r = {} outside [{lo}, {hi}] for {}",
                p.r,
                self.name()
            )));
        }
        Ok(())
    }

    /// Squared norm `g(v, v)` at `p`.
    fn norm_sq(&self, p: &ChartPoint, v: &Tangent) -> Result<f64> {
        self.check_point(p)?;
        let (tan, ang) = if v.xi.is_empty() {
            (0.0, 0.0)
        } else {
            if v.xi.len() != self.boundary().tangent_len() {
                return invalid(format!(
                    "tangent has {} components, boundary expects {}",
                    v.xi.len(),
                    self.boundary().tangent_len()
                ));
            }
            (self.boundary().tangent_norm_sq(&p.y, &v.xi).sqrt(), v.xi[0])
        };
        Ok(self.speed_sq(p.r, v.lambda, tan, ang))
    }
}

/// Model conic metric `dr² + r² s(r) g_N` on `N × [0, η]`.
#[derive(Debug, Clone)]
pub struct ConicMetricSpec {
    boundary: Arc<BoundaryGeometry>,
    height: f64,
    family: MetricFamily,
}

impl ConicMetricSpec {
    pub fn new(boundary: Arc<BoundaryGeometry>, height: f64, family: MetricFamily) -> Result<Self> {
        if !(height > 0.0 && height.is_finite()) {
            return invalid(format!("chart height must be positive, got {height}"));
        }
        family.validate(height)?;
        Ok(Self { boundary, height, family })
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn family(&self) -> &MetricFamily {
        &self.family
    }

    pub fn boundary_arc(&self) -> &Arc<BoundaryGeometry> {
        &self.boundary
    }

    /// Same metric on a different height.
    pub fn with_height(&self, height: f64) -> Result<Self> {
        Self::new(self.boundary.clone(), height, self.family.clone())
    }

    pub fn scale(&self, r: f64) -> f64 {
        self.family.scale(r)
    }
}

/// Cone law of cosines `sqrt(r² + r'² − 2 r r' cos(min(d, π)))`, written in
/// the cancellation-free form `sqrt((r − r')² + 4 r r' sin²(min(d, π)/2))`.
pub fn cone_law(r: f64, r2: f64, d_n: f64) -> f64 {
    let half = 0.5 * d_n.min(PI);
    let s = half.sin();
    ((r - r2) * (r - r2) + 4.0 * r * r2 * s * s).sqrt()
}

impl ChartMetric for ConicMetricSpec {
    fn boundary(&self) -> &BoundaryGeometry {
        &self.boundary
    }

    fn radial_domain(&self) -> (f64, f64) {
        (0.0, self.height)
    }

    fn collapsed_lower(&self) -> bool {
        true
    }

    fn speed_sq(&self, r: f64, dr: f64, tangential: f64, _angular: f64) -> f64 {
        dr * dr + r * r * self.family.scale(r) * tangential * tangential
    }

    fn exact_distance(&self, a: &ChartPoint, b: &ChartPoint) -> Option<f64> {
        match self.family {
            MetricFamily::Constant { scale } => {
                let d = self.boundary.distance_unchecked(&a.y, &b.y) * scale.sqrt();
                Some(cone_law(a.r, b.r, d))
            }
            _ => None,
        }
    }

    fn name(&self) -> &str {
        "conic"
    }
}

/// Asymptotically conic metric `g^∞ = r⁻⁴ g⁰` on `N × (0, η]`; `r = 0` is
/// the boundary at infinity.
#[derive(Debug, Clone)]
pub struct AcMetricSpec {
    base: ConicMetricSpec,
}

impl AcMetricSpec {
    pub fn new(base: ConicMetricSpec) -> Self {
        Self { base }
    }

    pub fn base(&self) -> &ConicMetricSpec {
        &self.base
    }
}

impl ChartMetric for AcMetricSpec {
    fn boundary(&self) -> &BoundaryGeometry {
        &self.base.boundary
    }

    fn radial_domain(&self) -> (f64, f64) {
        (0.0, self.base.height)
    }

    fn collapsed_lower(&self) -> bool {
        false
    }

    fn open_lower(&self) -> bool {
        true
    }

    fn speed_sq(&self, r: f64, dr: f64, tangential: f64, angular: f64) -> f64 {
        let r2 = r * r;
        self.base.speed_sq(r, dr, tangential, angular) / (r2 * r2)
    }

    fn name(&self) -> &str {
        "asymptotically conic"
    }
}

/// Pull-back of the Euclidean metric of `R^n` by spherical blow-up at the
/// origin: `dr² + r² du²` over the unit sphere `S^{n−1}`, height 1.
pub fn blowup_pullback_euclidean(n: usize) -> Result<ConicMetricSpec> {
    let boundary = match n {
        2 => BoundaryGeometry::unit_circle(),
        3 => BoundaryGeometry::round_sphere(2, 1.0)?,
        _ => {
            return Err(GeomError::UnsupportedFamily(format!(
                "blow-up charts are provided for n = 2 and n = 3, got {n}"
            )))
        }
    };
    ConicMetricSpec::new(Arc::new(boundary), 1.0, MetricFamily::constant())
}

/// Pull-back of the Euclidean metric by blow-up at infinity:
/// `r⁻⁴ (dr² + r² du²)`, where `r = 1/|x|`.
pub fn infinity_pullback_euclidean(n: usize) -> Result<AcMetricSpec> {
    Ok(AcMetricSpec::new(blowup_pullback_euclidean(n)?))
}

/// The simple conic metric `dr² + r² g∂(0)` with the same boundary and height.
pub fn associated_simple_metric(spec: &ConicMetricSpec) -> ConicMetricSpec {
    ConicMetricSpec {
        boundary: spec.boundary.clone(),
        height: spec.height,
        family: MetricFamily::Constant { scale: spec.family.scale(0.0) },
    }
}

/// Ratio of tangential norms `|ξ|_{spec} / |ξ|_{simple}` at height `r`.
pub fn tangential_norm_ratio(spec: &ConicMetricSpec, r: f64) -> f64 {
    (spec.family.scale(r) / spec.family.scale(0.0)).sqrt()
}

/// Empirical bounds `lower ≤ |v|_{spec} / |v|_{simple} ≤ upper` over all
/// nonzero tangents with `r ∈ [0, r_max]`, from `samples` heights.
///
/// Radial vectors have ratio 1, tangential ones [`tangential_norm_ratio`];
/// mixed vectors interpolate between the two, so the extremes are attained
/// on these two directions.
pub fn equivalence_bracket(spec: &ConicMetricSpec, r_max: f64, samples: usize) -> (f64, f64) {
    let mut lo: f64 = 1.0;
    let mut hi: f64 = 1.0;
    let n = samples.max(2);
    for k in 0..n {
        let r = r_max * k as f64 / (n - 1) as f64;
        let q = tangential_norm_ratio(spec, r);
        lo = lo.min(q);
        hi = hi.max(q);
    }
    (lo, hi)
}

/// Largest height `h ≤ η` such that the equivalence bracket over `[0, h]`
/// stays inside `[1/bound, bound]`, scanning `samples` equally spaced heights.
pub fn equivalence_height(spec: &ConicMetricSpec, bound: f64, samples: usize) -> f64 {
    let n = samples.max(2);
    let mut last = 0.0;
    for k in 0..n {
        let r = spec.height * k as f64 / (n - 1) as f64;
        let q = tangential_norm_ratio(spec, r);
        if q > bound || q < 1.0 / bound {
            return last;
        }
        last = r;
    }
    spec.height
}

/// Piecewise-linear curve in chart coordinates with strictly increasing
/// parameters.
#[derive(Debug, Clone)]
pub struct CurvePolyline {
    points: Vec<ChartPoint>,
    params: Vec<f64>,
}

impl CurvePolyline {
    pub fn new(points: Vec<ChartPoint>, params: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return invalid("a polyline needs at least two points");
        }
        if params.len() != points.len() {
            return invalid("polyline parameter count differs from point count");
        }
        if params.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("polyline parameters must be strictly increasing");
        }
        Ok(Self { points, params })
    }

    /// Polyline with parameters `0, 1, 2, …`.
    pub fn from_points(points: Vec<ChartPoint>) -> Result<Self> {
        let params = (0..points.len()).map(|i| i as f64).collect();
        Self::new(points, params)
    }

    pub fn points(&self) -> &[ChartPoint] {
        &self.points
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_points(self) -> Vec<ChartPoint> {
        self.points
    }

    pub fn start(&self) -> &ChartPoint {
        &self.points[0]
    }

    pub fn end(&self) -> &ChartPoint {
        self.points.last().expect("polyline has points")
    }
}

/// Geometric data of one straight chart segment.
pub(crate) struct SegmentData {
    pub r0: f64,
    pub dr: f64,
    pub tangential: f64,
    pub angular: f64,
}

impl SegmentData {
    pub fn new(boundary: &BoundaryGeometry, a: &ChartPoint, b: &ChartPoint) -> Self {
        let seg: BoundarySegment = boundary.segment_unchecked(&a.y, &b.y);
        let angular = if boundary.is_circle() {
            boundary.segment_velocity(&seg, 0.0)[0]
        } else {
            seg.length()
        };
        Self { r0: a.r, dr: b.r - a.r, tangential: seg.length(), angular }
    }

    fn speed(&self, m: &dyn ChartMetric, t: f64) -> f64 {
        let r = (self.r0 + t * self.dr).max(0.0);
        m.speed_sq(r, self.dr, self.tangential, self.angular).max(0.0).sqrt()
    }

    /// Romberg table over midpoint sums, either to convergence or to a
    /// fixed number of levels.
    pub fn length(&self, m: &dyn ChartMetric, adaptive: bool) -> f64 {
        if self.dr == 0.0 && self.tangential == 0.0 {
            return 0.0;
        }
        const MAX_LEVELS: usize = 20;
        const FIXED_LEVELS: usize = 4;
        const REL_TOL: f64 = 1e-8;
        let levels = if adaptive { MAX_LEVELS } else { FIXED_LEVELS };
        let mut prev_row: Vec<f64> = Vec::with_capacity(levels);
        let mut best = 0.0;
        for level in 0..levels {
            let n = 1usize << level;
            let h = 1.0 / n as f64;
            let sum: f64 = (0..n).map(|i| self.speed(m, (i as f64 + 0.5) * h)).sum::<f64>() * h;
            let mut row = Vec::with_capacity(level + 1);
            row.push(sum);
            let mut factor = 4.0;
            for j in 0..level.min(6) {
                let v = row[j] + (row[j] - prev_row[j]) / (factor - 1.0);
                row.push(v);
                factor *= 4.0;
            }
            let est = *row.last().unwrap();
            if adaptive && level >= 2 {
                let change = (est - best).abs();
                if change <= REL_TOL * est.abs() || est.abs() < 1e-300 {
                    return est.max(0.0);
                }
            }
            best = est;
            prev_row = row;
        }
        best.max(0.0)
    }
}

/// Length of a straight chart segment.
pub fn segment_length(m: &dyn ChartMetric, a: &ChartPoint, b: &ChartPoint) -> f64 {
    SegmentData::new(m.boundary(), a, b).length(m, true)
}

/// Length of the same straight segment with a fixed quadrature rule, smooth
/// in the endpoints. Used by the refinement objective.
pub(crate) fn segment_length_fixed(m: &dyn ChartMetric, a: &ChartPoint, b: &ChartPoint) -> f64 {
    SegmentData::new(m.boundary(), a, b).length(m, false)
}

/// Length of a polyline by per-segment quadrature.
pub fn curve_length(m: &dyn ChartMetric, c: &CurvePolyline) -> Result<f64> {
    for p in c.points() {
        m.boundary().normalize(&p.y)?;
        m.check_point(p)?;
    }
    Ok(c.points().windows(2).map(|w| segment_length(m, &w[0], &w[1])).sum())
}

/// The worked example on the punctured plane: the metric `g^o = r⁻² h`
/// and its resolution `φ(θ, r) = r·e^{i(θ − ln r)}`.
#[derive(Debug, Clone)]
pub struct LogSpiralMetric {
    boundary: BoundaryGeometry,
    height: f64,
}

impl Default for LogSpiralMetric {
    fn default() -> Self {
        Self { boundary: BoundaryGeometry::unit_circle(), height: 1.0 }
    }
}

impl LogSpiralMetric {
    pub fn with_height(height: f64) -> Result<Self> {
        if !(height > 0.0 && height.is_finite()) {
            return invalid("chart height must be positive");
        }
        Ok(Self { boundary: BoundaryGeometry::unit_circle(), height })
    }

    /// `g^o` in Cartesian coordinates applied to `(vx, vy)` at `(x, y)`.
    pub fn cartesian_norm_sq(&self, x: f64, y: f64, vx: f64, vy: f64) -> Result<f64> {
        let rr = x * x + y * y;
        if rr == 0.0 {
            return Err(GeomError::SingularEvaluation("g^o is not defined at the origin".into()));
        }
        let a = 2.0 * x * x - 2.0 * x * y + y * y;
        let b = x * x + x * y - y * y;
        let c = x * x + 2.0 * x * y + 2.0 * y * y;
        Ok((a * vx * vx + 2.0 * b * vx * vy + c * vy * vy) / rr)
    }

    /// `g^o = 2dr² + 2r dr dθ + r² dθ²` in polar coordinates of the plane.
    pub fn polar_norm_sq(&self, r: f64, dr: f64, dtheta: f64) -> Result<f64> {
        if r <= 0.0 {
            return Err(GeomError::SingularEvaluation("g^o is not defined at the origin".into()));
        }
        Ok(2.0 * dr * dr + 2.0 * r * dr * dtheta + r * r * dtheta * dtheta)
    }
}

impl ChartMetric for LogSpiralMetric {
    fn boundary(&self) -> &BoundaryGeometry {
        &self.boundary
    }

    fn radial_domain(&self) -> (f64, f64) {
        (0.0, self.height)
    }

    fn collapsed_lower(&self) -> bool {
        true
    }

    fn speed_sq(&self, r: f64, dr: f64, _tangential: f64, angular: f64) -> f64 {
        2.0 * dr * dr + 2.0 * r * dr * angular + r * r * angular * angular
    }

    fn name(&self) -> &str {
        "log-spiral polar"
    }
}

/// A coordinate map from a cylinder `S¹ × [0, η]` to the plane.
#[derive(Debug, Clone, Copy)]
pub struct ResolutionMap {
    pub name: &'static str,
    forward: fn(f64, f64) -> (f64, f64),
    inverse: fn(f64, f64) -> Option<(f64, f64)>,
    jacobian: fn(f64, f64) -> [[f64; 2]; 2],
}

impl ResolutionMap {
    /// Image of `(θ, r)`.
    pub fn forward(&self, theta: f64, r: f64) -> (f64, f64) {
        (self.forward)(theta, r)
    }

    /// `(θ, r)` with `θ ∈ [0, 2π)`, defined off the origin.
    pub fn inverse(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        (self.inverse)(x, y).ok_or_else(|| GeomError::SingularEvaluation("inverse undefined at the origin".into()))
    }

    /// Rows `(∂x, ∂y)`, columns `(∂θ, ∂r)`.
    pub fn jacobian(&self, theta: f64, r: f64) -> [[f64; 2]; 2] {
        (self.jacobian)(theta, r)
    }
}

fn spiral_forward(theta: f64, r: f64) -> (f64, f64) {
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let a = theta - r.ln();
    (r * a.cos(), r * a.sin())
}

fn spiral_inverse(x: f64, y: f64) -> Option<(f64, f64)> {
    let r = x.hypot(y);
    if r == 0.0 {
        return None;
    }
    Some(((y.atan2(x) + r.ln()).rem_euclid(2.0 * PI), r))
}

fn spiral_jacobian(theta: f64, r: f64) -> [[f64; 2]; 2] {
    let a = theta - r.ln();
    let (s, c) = a.sin_cos();
    [[-r * s, c + s], [r * c, s - c]]
}

/// The log-spiral example: plane metric, its resolution and the model
/// chart metric `dr² + r² dθ²` it pulls back to.
pub struct LogSpiralExample {
    pub metric: LogSpiralMetric,
    pub map: ResolutionMap,
    pub model: ConicMetricSpec,
}

pub fn logspiral_example() -> LogSpiralExample {
    LogSpiralExample {
        metric: LogSpiralMetric::default(),
        map: ResolutionMap {
            name: "log-spiral",
            forward: spiral_forward,
            inverse: spiral_inverse,
            jacobian: spiral_jacobian,
        },
        model: blowup_pullback_euclidean(2).expect("n = 2 is supported"),
    }
}

impl LogSpiralExample {
    /// `(φ^* g^o)(v, v)` at `(θ, r)` for `v = (dθ, dr)`, via the Jacobian.
    pub fn pullback_norm_sq(&self, theta: f64, r: f64, dtheta: f64, dr: f64) -> Result<f64> {
        let (x, y) = self.map.forward(theta, r);
        let j = self.map.jacobian(theta, r);
        let vx = j[0][0] * dtheta + j[0][1] * dr;
        let vy = j[1][0] * dtheta + j[1][1] * dr;
        self.metric.cartesian_norm_sq(x, y, vx, vy)
    }

    /// Maps a model chart point to the plane chart `(Θ, r)` in which the
    /// plane metric is written in polar form.
    pub fn model_to_plane_polar(&self, theta: f64, r: f64) -> (f64, f64) {
        ((theta - r.ln()).rem_euclid(2.0 * PI), r)
    }
}

/// End piece of a completed chart: either the asymptotically conic end or
/// its inversion-read conic chart with an apex at infinity.
#[derive(Debug, Clone)]
pub enum EndPiece {
    Ac(AcMetricSpec),
    Conic(ConicMetricSpec),
}

/// Two-sided chart `N × [0, 2]` obtained by gluing a conic core `[0, 1]`
/// to an end at the seam `r = 1`. On the end the chart uses `ρ = 2 − s`
/// as the end piece's own radial coordinate.
#[derive(Debug, Clone)]
pub struct GluedCylinder {
    core: ConicMetricSpec,
    end: EndPiece,
}

impl GluedCylinder {
    pub fn new(core: ConicMetricSpec, end: EndPiece) -> Result<Self> {
        let end_height = match &end {
            EndPiece::Ac(a) => a.base().height(),
            EndPiece::Conic(c) => c.height(),
        };
        if (core.height() - 1.0).abs() > 1e-12 || (end_height - 1.0).abs() > 1e-12 {
            return invalid("glued cylinders join pieces of height 1 at the seam");
        }
        let end_boundary = match &end {
            EndPiece::Ac(a) => a.boundary(),
            EndPiece::Conic(c) => c.boundary(),
        };
        if !std::ptr::eq(core.boundary(), end_boundary)
            && core.boundary().diameter() != end_boundary.diameter()
        {
            return invalid("glued pieces must share the boundary manifold");
        }
        Ok(Self { core, end })
    }

    pub fn core(&self) -> &ConicMetricSpec {
        &self.core
    }

    pub fn end(&self) -> &EndPiece {
        &self.end
    }

    /// Completed chart coordinate `s` of a core point.
    pub fn from_core(r: f64) -> f64 {
        r
    }

    /// Completed chart coordinate `s` of an end point at end height `ρ`.
    pub fn from_end(rho: f64) -> f64 {
        2.0 - rho
    }
}

impl ChartMetric for GluedCylinder {
    fn boundary(&self) -> &BoundaryGeometry {
        self.core.boundary()
    }

    fn radial_domain(&self) -> (f64, f64) {
        (0.0, 2.0)
    }

    fn collapsed_lower(&self) -> bool {
        true
    }

    fn collapsed_upper(&self) -> bool {
        matches!(self.end, EndPiece::Conic(_))
    }

    fn check_point(&self, p: &ChartPoint) -> Result<()> {
        if !(0.0..=2.0).contains(&p.r) {
            return Err(GeomError::Domain(format!("s = {} outside [0, 2]", p.r)));
        }
        if p.r == 2.0 && matches!(self.end, EndPiece::Ac(_)) {
            return Err(GeomError::SingularEvaluation("s = 2 is the boundary at infinity".into()));
        }
        Ok(())
    }

    fn speed_sq(&self, s: f64, ds: f64, tangential: f64, angular: f64) -> f64 {
        if s <= 1.0 {
            self.core.speed_sq(s, ds, tangential, angular)
        } else {
            let rho = 2.0 - s;
            match &self.end {
                EndPiece::Ac(a) => {
                    if rho <= 0.0 {
                        f64::INFINITY
                    } else {
                        a.speed_sq(rho, -ds, tangential, angular)
                    }
                }
                EndPiece::Conic(c) => c.speed_sq(rho, -ds, tangential, angular),
            }
        }
    }

    fn name(&self) -> &str {
        "glued cylinder"
    }
}

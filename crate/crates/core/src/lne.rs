//! Inner against outer distances on parametric sub-manifolds of a chart.
//!
//! A sub-manifold is a finite union of components, each either a curve
//! `t ↦ (y(t), r(t))` or a sheet `Y × [0, h]` over an arc `Y` of a circle.
//! Components touching the collapsed face meet at the apex. The scan
//! compares the inner distance of the union with the ambient distance on
//! stratified pairs over a ladder of shrinking windows, and reports the
//! supremum of their ratio per rung. A bounded supremum is numerical
//! evidence of normal embedding, nothing more.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryGeometry, BoundaryPoint, MeshGraph};
use crate::distance::{DistanceEngine, DistanceOptions, GridDiscretization};
use crate::error::{invalid, GeomError, Result};
use crate::metric::{segment_length, ChartMetric, ChartPoint, ConicMetricSpec};
use crate::quotient::QuotientChart;

type CurveMap = Arc<dyn Fn(f64) -> ChartPoint + Send + Sync>;

/// Curve component `t ∈ [t0, t1] ↦ (y(t), r(t))`.
#[derive(Clone)]
pub struct CurveComponent {
    pub name: String,
    pub t0: f64,
    pub t1: f64,
    /// Whether `t0` and `t1` are the same point.
    pub closed: bool,
    map: CurveMap,
}

impl std::fmt::Debug for CurveComponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CurveComponent({}, [{}, {}])", self.name, self.t0, self.t1)
    }
}

impl CurveComponent {
    pub fn new(
        name: impl Into<String>,
        t0: f64,
        t1: f64,
        map: impl Fn(f64) -> ChartPoint + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
            return invalid(format!("curve parameter range [{t0}, {t1}] is empty"));
        }
        Ok(Self { name: name.into(), t0, t1, closed: false, map: Arc::new(map) })
    }

    pub fn closed(mut self) -> Self {
        self.closed = true;
        self
    }

    pub fn eval(&self, t: f64) -> ChartPoint {
        (self.map)(t)
    }
}

/// Sheet `Y × [0, height]` over an arc `Y = [start, end]` of a circle, or
/// over the whole circle.
#[derive(Debug, Clone, PartialEq)]
pub struct SheetComponent {
    pub name: String,
    /// `None` for the whole circle.
    pub arc: Option<(f64, f64)>,
    pub height: f64,
}

#[derive(Debug, Clone)]
pub enum Component {
    Curve(CurveComponent),
    Sheet(SheetComponent),
}

impl Component {
    pub fn name(&self) -> &str {
        match self {
            Component::Curve(c) => &c.name,
            Component::Sheet(s) => &s.name,
        }
    }
}

/// Subsets `Y` of a circle used to build cylinders `Y × [0, ε]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BoundarySubset {
    Circle,
    Arc { start: f64, end: f64 },
    Points { angles: Vec<f64> },
}

/// Finite union of components in chart coordinates.
#[derive(Debug, Clone)]
pub struct ParamSubmanifold {
    pub name: String,
    pub components: Vec<Component>,
}

fn polar(theta: f64, r: f64) -> ChartPoint {
    ChartPoint::polar(theta.rem_euclid(2.0 * PI), r)
}

impl ParamSubmanifold {
    pub fn new(name: impl Into<String>, components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return invalid("a sub-manifold needs at least one component");
        }
        Ok(Self { name: name.into(), components })
    }

    /// The ray `{θ = θ₀, 0 ≤ r ≤ r_max}`.
    pub fn radial_ray(theta: f64, r_max: f64) -> Result<Self> {
        Self::rays(&[theta], r_max)
    }

    /// Rays through the apex at the given angles.
    pub fn rays(thetas: &[f64], r_max: f64) -> Result<Self> {
        let comps = thetas
            .iter()
            .enumerate()
            .map(|(i, &th)| CurveComponent::new(format!("ray{i}"), 0.0, r_max, move |t| polar(th, t)).map(Component::Curve))
            .collect::<Result<Vec<_>>>()?;
        Self::new("rays", comps)
    }

    /// The level circle `{r = r₀}`.
    pub fn circle_level(r0: f64) -> Result<Self> {
        let c = CurveComponent::new("level", 0.0, 2.0 * PI, move |t| polar(t, r0))?.closed();
        Self::new("circle-level", vec![Component::Curve(c)])
    }

    /// The ray `{θ = 0}` together with the curve `(θ, r) = (s, s²)`, which
    /// meets the collapsed face tangentially.
    pub fn tangency_model(s_max: f64) -> Result<Self> {
        let ray = CurveComponent::new("ray", 0.0, s_max * s_max, |t| polar(0.0, t))?;
        let curve = CurveComponent::new("parabola", 0.0, s_max, |s| polar(s, s * s))?;
        Self::new("tangency", vec![Component::Curve(ray), Component::Curve(curve)])
    }

    /// Curve with polynomial `θ(t)` and `r(t)` (coefficients in increasing
    /// degree).
    pub fn polynomial(name: &str, theta: Vec<f64>, r: Vec<f64>, t0: f64, t1: f64) -> Result<Self> {
        let eval = |c: &[f64], t: f64| c.iter().rev().fold(0.0, |acc, &a| acc * t + a);
        let c = CurveComponent::new(name, t0, t1, move |t| polar(eval(&theta, t), eval(&r, t)))?;
        Self::new(name, vec![Component::Curve(c)])
    }

    /// Cylinder `Y × [0, height]`.
    pub fn cylinder(subset: &BoundarySubset, height: f64) -> Result<Self> {
        if !(height > 0.0) {
            return invalid("cylinder height must be positive");
        }
        match subset {
            BoundarySubset::Circle => Self::new(
                "cylinder",
                vec![Component::Sheet(SheetComponent { name: "sheet".into(), arc: None, height })],
            ),
            BoundarySubset::Arc { start, end } => {
                if !(end > start) || end - start >= 2.0 * PI {
                    return invalid(format!("arc [{start}, {end}] must have length in (0, 2π)"));
                }
                Self::new(
                    "cylinder",
                    vec![Component::Sheet(SheetComponent {
                        name: "sheet".into(),
                        arc: Some((*start, *end)),
                        height,
                    })],
                )
            }
            BoundarySubset::Points { angles } => {
                let mut x = Self::rays(angles, height)?;
                x.name = "cylinder".into();
                Ok(x)
            }
        }
    }
}

/// Result of the transversality check at the boundary trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceSample {
    pub component: String,
    pub param: f64,
    /// Radial component of the normalized tangent direction.
    pub radial: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PSubmanifoldCheck {
    pub ok: bool,
    pub samples: Vec<TraceSample>,
    pub diagnostics: Vec<String>,
}

/// Transversality to the collapsed face `r = lo`: at every trace point some
/// tangent direction has normalized radial component at least `tol`.
/// Components without trace points pass vacuously.
pub fn check_p_submanifold(x: &ParamSubmanifold, metric: &dyn ChartMetric, tol: f64) -> PSubmanifoldCheck {
    let lo = metric.radial_domain().0;
    let boundary = metric.boundary();
    let mut samples = Vec::new();
    let mut diagnostics = Vec::new();
    for comp in &x.components {
        match comp {
            Component::Sheet(s) => samples.push(TraceSample { component: s.name.clone(), param: 0.0, radial: 1.0 }),
            Component::Curve(c) => {
                let h = 1e-6 * (c.t1 - c.t0);
                for (t, inward) in [(c.t0, h), (c.t1, -h)] {
                    let p = c.eval(t);
                    if p.r != lo {
                        continue;
                    }
                    let q = c.eval(t + inward);
                    let dr = (q.r - p.r) / h;
                    let dy = boundary.distance(&p.y, &q.y).map(|d| d / h);
                    match dy {
                        Ok(dy) if dr.is_finite() && dy.is_finite() && (dr != 0.0 || dy != 0.0) => {
                            let radial = dr.abs() / dr.hypot(dy);
                            if radial < tol {
                                diagnostics.push(format!(
                                    "{}: tangent at t = {t} has radial component {radial:.3e} < {tol}",
                                    c.name
                                ));
                            }
                            samples.push(TraceSample { component: c.name.clone(), param: t, radial });
                        }
                        _ => diagnostics.push(format!("{}: derivative evaluation failed at t = {t}", c.name)),
                    }
                }
            }
        }
    }
    PSubmanifoldCheck { ok: diagnostics.is_empty(), samples, diagnostics }
}

/// Shrinking neighbourhoods the scan is restricted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScanWindow {
    /// `r − lo ≤ ε`.
    Apex,
    /// `|r − r_c| + min(r, r_c) d_N(y, y_c) ≤ ε` around a point.
    Around { theta: f64, r: f64 },
    /// `min(r − lo, hi − r) ≤ ε`: toward both faces at once.
    Ends,
}

impl ScanWindow {
    fn measure(&self, metric: &dyn ChartMetric, p: &ChartPoint) -> f64 {
        let (lo, hi) = metric.radial_domain();
        match self {
            ScanWindow::Apex => p.r - lo,
            ScanWindow::Around { theta, r } => {
                let c = ChartPoint::polar(theta.rem_euclid(2.0 * PI), *r);
                let d_n = metric.boundary().distance_unchecked(&p.y, &c.y);
                (p.r - c.r).abs() + p.r.min(c.r) * d_n
            }
            ScanWindow::Ends => (p.r - lo).min(hi - p.r),
        }
    }
}

/// `η/2, η/4, …, η/2^k`.
pub fn scale_ladder(eta: f64, k: usize) -> Vec<f64> {
    (1..=k).map(|j| eta / 2f64.powi(j as i32)).collect()
}

/// Knobs of the ratio scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LneOptions {
    pub seed: u64,
    pub within_pairs: usize,
    pub cross_pairs: usize,
    pub apex_pairs: usize,
    pub matched_pairs: usize,
    /// Minimum growth of the supremum over a run of rungs for DIVERGING.
    pub growth_tol: f64,
    /// Number of consecutive increasing steps the growth must span.
    pub growth_steps: usize,
    /// Relative slack allowed in `inner ≥ outer`.
    pub ratio_tol: f64,
    pub window: ScanWindow,
    pub distance: DistanceOptions,
}

impl Default for LneOptions {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            within_pairs: 16,
            cross_pairs: 8,
            apex_pairs: 8,
            matched_pairs: 16,
            growth_tol: 1.5,
            growth_steps: 3,
            ratio_tol: 5e-3,
            window: ScanWindow::Apex,
            distance: DistanceOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stratum {
    Within,
    Cross,
    Apex,
    Matched,
}

impl Stratum {
    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Within => "within",
            Stratum::Cross => "cross",
            Stratum::Apex => "apex",
            Stratum::Matched => "matched",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Bounded,
    Diverging,
}

/// A point of the sub-manifold: component, parameters and chart position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XPoint {
    pub component: usize,
    /// `[t]` on curves, `[θ, r]` on sheets.
    pub param: Vec<f64>,
    pub theta: Option<f64>,
    pub r: f64,
    #[serde(skip)]
    pub chart: ChartPoint,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairRecord {
    pub scale: f64,
    pub stratum: Stratum,
    pub a: XPoint,
    pub b: XPoint,
    pub outer: f64,
    pub inner: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleSummary {
    pub scale: f64,
    pub pairs: usize,
    /// `None` when the rung had no admissible pair.
    pub sup: Option<f64>,
    pub witness: Option<usize>,
}

/// Output of [`lne_ratio_scan`].
#[derive(Debug, Clone, Serialize)]
pub struct LneReport {
    pub name: String,
    pub ladder: Vec<f64>,
    pub scales: Vec<ScaleSummary>,
    pub pairs: Vec<PairRecord>,
    /// Supremum of `inner / outer` over the first `k + 1` pairs.
    pub running_sup: Vec<f64>,
    pub sup: f64,
    pub witness: Option<usize>,
    /// Consecutive ratios of per-rung suprema.
    pub growth: Vec<f64>,
    pub verdict: Verdict,
    pub min_ratio: f64,
    /// Pairs with `inner < (1 − ratio_tol) · outer`.
    pub violations: usize,
}

impl LneReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns `scale,stratum,a_component,a_param,a_theta,a_r,b_component,
    /// b_param,b_theta,b_r,outer,inner,ratio`; parameters joined by `;`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "scale", "stratum", "a_component", "a_param", "a_theta", "a_r", "b_component", "b_param", "b_theta", "b_r",
            "outer", "inner", "ratio",
        ])?;
        let f = |x: f64| format!("{x:.12e}");
        let params = |p: &XPoint| p.param.iter().map(|v| f(*v)).collect::<Vec<_>>().join(";");
        let theta = |p: &XPoint| p.theta.map(f).unwrap_or_default();
        for r in &self.pairs {
            out.write_record([
                f(r.scale),
                r.stratum.as_str().to_string(),
                r.a.component.to_string(),
                params(&r.a),
                theta(&r.a),
                f(r.a.r),
                r.b.component.to_string(),
                params(&r.b),
                theta(&r.b),
                f(r.b.r),
                f(r.outer),
                f(r.inner),
                f(r.ratio),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// DIVERGING iff the per-rung supremum grows strictly over `steps`
/// consecutive rungs by a total factor of at least `growth_tol`.
pub fn classify(sups: &[f64], growth_tol: f64, steps: usize) -> Verdict {
    let steps = steps.max(1);
    for k in 0..sups.len().saturating_sub(steps) {
        let run = &sups[k..=k + steps];
        if run.windows(2).all(|w| w[1] > w[0]) && run[steps] >= growth_tol * run[0] {
            return Verdict::Diverging;
        }
    }
    Verdict::Bounded
}

const GRID_UNIFORM: usize = 1024;
const GRID_GEOMETRIC: usize = 64;

/// Curve sampled on a fine parameter grid with cumulative arc length.
struct CurveTable {
    ts: Vec<f64>,
    pts: Vec<ChartPoint>,
    arc: Vec<f64>,
    touches_lo: (bool, bool),
}

/// Everything needed to evaluate inner distances on a sub-manifold.
pub struct SubmanifoldModel<'a> {
    x: &'a ParamSubmanifold,
    metric: Arc<dyn ChartMetric>,
    curves: Vec<Option<CurveTable>>,
    sheets: Vec<Option<(DistanceEngine, Option<(f64, f64, f64)>)>>,
    opts: DistanceOptions,
}

fn arc_piece(m: &dyn ChartMetric, c: &CurveComponent, ta: f64, tb: f64, pa: &ChartPoint, pb: &ChartPoint, depth: u32) -> f64 {
    let whole = segment_length(m, pa, pb);
    let tm = 0.5 * (ta + tb);
    let pm = c.eval(tm);
    let halves = segment_length(m, pa, &pm) + segment_length(m, &pm, pb);
    if depth == 0 || (halves - whole).abs() <= 1e-11 * halves.max(1e-300) {
        return halves;
    }
    arc_piece(m, c, ta, tm, pa, &pm, depth - 1) + arc_piece(m, c, tm, tb, &pm, pb, depth - 1)
}

impl<'a> SubmanifoldModel<'a> {
    /// Tabulates curves and builds sheet engines. Sheets require a conic
    /// chart over a circle.
    pub fn new(x: &'a ParamSubmanifold, ambient: &QuotientChart, opts: DistanceOptions) -> Result<Self> {
        let metric = ambient.metric();
        let m = metric.as_ref();
        let lo = m.radial_domain().0;
        let mut curves = Vec::with_capacity(x.components.len());
        let mut sheets = Vec::with_capacity(x.components.len());
        for comp in &x.components {
            match comp {
                Component::Curve(c) => {
                    let span = c.t1 - c.t0;
                    let mut ts: Vec<f64> = (0..=GRID_UNIFORM).map(|k| c.t0 + span * k as f64 / GRID_UNIFORM as f64).collect();
                    for k in 1..=GRID_GEOMETRIC {
                        let f = 0.25 * 1e-7f64.powf(k as f64 / GRID_GEOMETRIC as f64);
                        ts.push(c.t0 + span * f / GRID_UNIFORM as f64 * 4.0);
                        ts.push(c.t1 - span * f / GRID_UNIFORM as f64 * 4.0);
                    }
                    ts.sort_by(f64::total_cmp);
                    ts.dedup();
                    let pts: Vec<ChartPoint> = ts.iter().map(|&t| c.eval(t)).collect();
                    for (t, p) in ts.iter().zip(&pts) {
                        m.boundary().normalize(&p.y)?;
                        m.check_point(p).map_err(|e| {
                            GeomError::InvalidInput(format!("{} leaves the chart at t = {t}: {e}", c.name))
                        })?;
                    }
                    let pieces: Vec<f64> = (0..ts.len() - 1)
                        .into_par_iter()
                        .map(|i| arc_piece(m, c, ts[i], ts[i + 1], &pts[i], &pts[i + 1], 12))
                        .collect();
                    let mut arc = vec![0.0];
                    for p in pieces {
                        arc.push(arc.last().unwrap() + p);
                    }
                    let touches_lo = (pts[0].r == lo && m.collapsed_lower(), pts[pts.len() - 1].r == lo && m.collapsed_lower());
                    curves.push(Some(CurveTable { ts, pts, arc, touches_lo }));
                    sheets.push(None);
                }
                Component::Sheet(s) => {
                    let QuotientChart::Conic(spec) = ambient else {
                        return invalid("sheets need a conic chart");
                    };
                    if !spec.boundary().is_circle() {
                        return invalid("sheets need a circle boundary");
                    }
                    if s.height > spec.height() {
                        return invalid(format!("sheet height {} exceeds the chart height {}", s.height, spec.height()));
                    }
                    curves.push(None);
                    sheets.push(Some(Self::sheet_engine(spec, s)?));
                }
            }
        }
        Ok(Self { x, metric, curves, sheets, opts })
    }

    fn sheet_engine(spec: &ConicMetricSpec, s: &SheetComponent) -> Result<(DistanceEngine, Option<(f64, f64, f64)>)> {
        match s.arc {
            None => {
                let sub = spec.with_height(s.height)?;
                let grid = crate::distance::default_conic_grid(&sub);
                Ok((DistanceEngine::new(Arc::new(sub), grid)?, None))
            }
            Some((a, b)) => {
                // the arc as a path mesh, so the sheet is a chart of its own
                let n = ((b - a) / (2.0 * PI) * 96.0).ceil().max(8.0) as usize;
                let step = (b - a) / n as f64;
                let circle = spec.boundary();
                let vertices: Vec<Vec<f64>> = (0..=n).map(|k| vec![a + step * k as f64]).collect();
                let edges: Vec<(usize, usize)> = (0..n).map(|k| (k, k + 1)).collect();
                let weights: Vec<f64> = (0..n)
                    .map(|k| {
                        circle.distance_unchecked(
                            &BoundaryPoint::Angle((a + step * k as f64).rem_euclid(2.0 * PI)),
                            &BoundaryPoint::Angle((a + step * (k + 1) as f64).rem_euclid(2.0 * PI)),
                        )
                    })
                    .collect();
                let mesh = BoundaryGeometry::mesh(MeshGraph::new(vertices, edges, weights)?);
                let sub = ConicMetricSpec::new(Arc::new(mesh), s.height, spec.family().clone())?;
                let grid = GridDiscretization::geometric(48, 0, s.height * 1e-3, s.height, true);
                Ok((DistanceEngine::new(Arc::new(sub), grid)?, Some((a, step, n as f64))))
            }
        }
    }

    fn sheet_point(&self, comp: usize, theta: f64, r: f64) -> ChartPoint {
        match self.sheets[comp].as_ref().and_then(|s| s.1) {
            None => polar(theta, r),
            Some((a, step, n)) => {
                let pos = ((theta - a) / step).clamp(0.0, n);
                let k = (pos.floor() as usize).min(n as usize - 1);
                let t = (pos - k as f64).clamp(0.0, 1.0);
                let y = self.sheets[comp].as_ref().unwrap().0.metric().boundary().normalize(&BoundaryPoint::Edge { edge: k, t });
                ChartPoint::new(y.unwrap_or(BoundaryPoint::Vertex(k)), r)
            }
        }
    }

    /// Point of curve `comp` at parameter `t`.
    pub fn curve_point(&self, comp: usize, t: f64) -> Result<XPoint> {
        let Component::Curve(c) = &self.x.components[comp] else {
            return invalid(format!("component {comp} is not a curve"));
        };
        let p = c.eval(t.clamp(c.t0, c.t1));
        Ok(XPoint { component: comp, param: vec![t], theta: p.y.angle(), r: p.r, chart: p })
    }

    /// Point of sheet `comp` at `(θ, r)`.
    pub fn sheet_xpoint(&self, comp: usize, theta: f64, r: f64) -> Result<XPoint> {
        if !matches!(self.x.components[comp], Component::Sheet(_)) {
            return invalid(format!("component {comp} is not a sheet"));
        }
        let p = polar(theta, r);
        Ok(XPoint { component: comp, param: vec![theta, r], theta: p.y.angle(), r, chart: p })
    }

    fn arc_at(&self, comp: usize, t: f64) -> f64 {
        let table = self.curves[comp].as_ref().unwrap();
        let Component::Curve(c) = &self.x.components[comp] else { unreachable!() };
        let i = table.ts.partition_point(|&s| s <= t).clamp(1, table.ts.len() - 1) - 1;
        if table.ts[i] == t {
            return table.arc[i];
        }
        let p = c.eval(t);
        table.arc[i] + arc_piece(self.metric.as_ref(), c, table.ts[i], t, &table.pts[i], &p, 12)
    }

    fn to_apex(&self, p: &XPoint) -> Result<f64> {
        match &self.x.components[p.component] {
            Component::Curve(_) => {
                let table = self.curves[p.component].as_ref().unwrap();
                let s = self.arc_at(p.component, p.param[0]);
                let total = *table.arc.last().unwrap();
                let mut best = f64::INFINITY;
                if table.touches_lo.0 {
                    best = best.min(s);
                }
                if table.touches_lo.1 {
                    best = best.min(total - s);
                }
                Ok(best)
            }
            Component::Sheet(_) => {
                let engine = &self.sheets[p.component].as_ref().unwrap().0;
                let a = self.sheet_point(p.component, p.param[0], p.param[1]);
                let face = ChartPoint::new(a.y.clone(), 0.0);
                Ok(engine.distance(&a, &face, &self.opts)?.value)
            }
        }
    }

    /// Inner distance of the union: within a component, or through the apex.
    pub fn inner_distance(&self, a: &XPoint, b: &XPoint) -> Result<f64> {
        let via_apex = self.to_apex(a)? + self.to_apex(b)?;
        if a.component != b.component {
            return Ok(via_apex);
        }
        let direct = match &self.x.components[a.component] {
            Component::Curve(c) => {
                let d = (self.arc_at(a.component, a.param[0]) - self.arc_at(b.component, b.param[0])).abs();
                if c.closed {
                    d.min(self.arc_at(a.component, c.t1) - d)
                } else {
                    d
                }
            }
            Component::Sheet(_) => {
                let engine = &self.sheets[a.component].as_ref().unwrap().0;
                let pa = self.sheet_point(a.component, a.param[0], a.param[1]);
                let pb = self.sheet_point(b.component, b.param[0], b.param[1]);
                engine.distance(&pa, &pb, &self.opts)?.value
            }
        };
        Ok(direct.min(via_apex))
    }

    /// Parameter intervals of curve `comp` whose window measure lies in
    /// `(lo, hi]`.
    fn eligible(&self, comp: usize, window: &ScanWindow, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        let table = self.curves[comp].as_ref().unwrap();
        let Component::Curve(c) = &self.x.components[comp] else { unreachable!() };
        let m = self.metric.as_ref();
        let w: Vec<f64> = table.pts.iter().map(|p| window.measure(m, p)).collect();
        let inside = |v: f64| v > lo && v <= hi;
        let crossing = |ta: f64, tb: f64, wa_in: bool| -> f64 {
            let (mut a, mut b) = (ta, tb);
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if inside(window.measure(m, &c.eval(mid))) == wa_in {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        };
        let mut out: Vec<(f64, f64)> = Vec::new();
        for i in 0..table.ts.len() - 1 {
            let (ta, tb) = (table.ts[i], table.ts[i + 1]);
            let (ia, ib) = (inside(w[i]), inside(w[i + 1]));
            let piece = match (ia, ib) {
                (true, true) => Some((ta, tb)),
                (true, false) => Some((ta, crossing(ta, tb, true))),
                (false, true) => Some((crossing(ta, tb, false), tb)),
                (false, false) => None,
            };
            if let Some((a, b)) = piece {
                if let Some(last) = out.last_mut() {
                    if last.1 == a {
                        last.1 = b;
                        continue;
                    }
                }
                out.push((a, b));
            }
        }
        out
    }

    /// Parameter at quantile `u` of the eligible set by parameter measure.
    fn quantile(intervals: &[(f64, f64)], u: f64) -> Option<f64> {
        let total: f64 = intervals.iter().map(|(a, b)| b - a).sum();
        if intervals.is_empty() {
            return None;
        }
        let mut target = u.clamp(0.0, 1.0) * total;
        for &(a, b) in intervals {
            if target <= b - a {
                return Some(a + target);
            }
            target -= b - a;
        }
        intervals.last().map(|i| i.1)
    }

    /// A point of component `comp` with window measure in `(lo, hi]`.
    fn sample(&self, comp: usize, window: &ScanWindow, lo: f64, hi: f64, u: f64, v: f64) -> Result<Option<XPoint>> {
        match &self.x.components[comp] {
            Component::Curve(_) => match Self::quantile(&self.eligible(comp, window, lo, hi), u) {
                Some(t) => self.curve_point(comp, t).map(Some),
                None => Ok(None),
            },
            Component::Sheet(s) => {
                if *window != ScanWindow::Apex {
                    return invalid("sheets are scanned toward the apex only");
                }
                let top = hi.min(s.height);
                let bottom = lo.max(0.0);
                if !(top > bottom) {
                    return Ok(None);
                }
                let r = bottom + u * (top - bottom);
                let (a, b) = s.arc.unwrap_or((0.0, 2.0 * PI));
                self.sheet_xpoint(comp, a + v * (b - a), r).map(Some)
            }
        }
    }

    /// A point of component `comp` with window measure `target`.
    fn matched(&self, comp: usize, window: &ScanWindow, target: f64, v: f64) -> Result<Option<XPoint>> {
        match &self.x.components[comp] {
            Component::Curve(c) => {
                let table = self.curves[comp].as_ref().unwrap();
                let m = self.metric.as_ref();
                let w: Vec<f64> = table.pts.iter().map(|p| window.measure(m, p) - target).collect();
                let idx: Vec<usize> = (0..w.len() - 1).filter(|&i| w[i] == 0.0 || w[i] * w[i + 1] < 0.0).collect();
                if idx.is_empty() {
                    return Ok(None);
                }
                let i = idx[((v * idx.len() as f64) as usize).min(idx.len() - 1)];
                let (mut a, mut b) = (table.ts[i], table.ts[i + 1]);
                if w[i] == 0.0 {
                    return self.curve_point(comp, a).map(Some);
                }
                let sa = w[i] < 0.0;
                for _ in 0..60 {
                    let mid = 0.5 * (a + b);
                    if (window.measure(m, &c.eval(mid)) - target < 0.0) == sa {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                self.curve_point(comp, 0.5 * (a + b)).map(Some)
            }
            Component::Sheet(s) => {
                if target > s.height {
                    return Ok(None);
                }
                let (a, b) = s.arc.unwrap_or((0.0, 2.0 * PI));
                self.sheet_xpoint(comp, a + v * (b - a), target).map(Some)
            }
        }
    }
}

/// Scale-free description of one sample pair, drawn once per scan and
/// mapped to every rung.
#[derive(Debug, Clone, Copy)]
struct PairDraw {
    stratum: Stratum,
    ca: usize,
    cb: usize,
    u: [f64; 4],
}

fn draws(n_comp: usize, opts: &LneOptions) -> Vec<PairDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    let counts = [
        (Stratum::Within, opts.within_pairs),
        (Stratum::Cross, opts.cross_pairs),
        (Stratum::Apex, opts.apex_pairs),
        (Stratum::Matched, opts.matched_pairs),
    ];
    for (stratum, count) in counts {
        for _ in 0..count {
            let ca = rng.gen_range(0..n_comp);
            let cb = if stratum == Stratum::Matched && n_comp > 1 {
                (ca + rng.gen_range(1..n_comp)) % n_comp
            } else {
                rng.gen_range(0..n_comp)
            };
            let u = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            out.push(PairDraw { stratum, ca, cb, u });
        }
    }
    out
}

/// Distance used as the outer distance of a scan.
pub enum OuterDistance<'a> {
    Ambient(&'a DistanceEngine),
    /// Inner distance of a larger sub-manifold containing the scanned one,
    /// with a map from the scanned points to that sub-manifold's points.
    Within(&'a SubmanifoldModel<'a>, &'a (dyn Fn(&XPoint) -> Result<XPoint> + Sync)),
}

impl OuterDistance<'_> {
    fn eval(&self, a: &XPoint, b: &XPoint, opts: &DistanceOptions) -> Result<f64> {
        match self {
            OuterDistance::Ambient(e) => Ok(e.distance(&a.chart, &b.chart, opts)?.value),
            OuterDistance::Within(model, map) => model.inner_distance(&map(a)?, &map(b)?),
        }
    }
}

/// Ratio scan of `inner / outer` over the ladder `scales` (decreasing).
pub fn lne_ratio_scan(
    x: &ParamSubmanifold,
    ambient: &QuotientChart,
    scales: &[f64],
    opts: &LneOptions,
) -> Result<LneReport> {
    let model = SubmanifoldModel::new(x, ambient, opts.distance)?;
    let engine = DistanceEngine::new(ambient.metric(), ambient.default_grid())?;
    scan_with(&model, &OuterDistance::Ambient(&engine), scales, opts)
}

/// As [`lne_ratio_scan`] with a prepared model and outer distance.
pub fn scan_with(
    model: &SubmanifoldModel<'_>,
    outer: &OuterDistance<'_>,
    scales: &[f64],
    opts: &LneOptions,
) -> Result<LneReport> {
    let x = model.x;
    let plan = draws(x.components.len(), opts);
    let mut jobs: Vec<(f64, Stratum, XPoint, XPoint)> = Vec::new();
    for &eps in scales {
        for d in &plan {
            let w = &opts.window;
            let pair = match d.stratum {
                Stratum::Within => (
                    model.sample(d.ca, w, f64::NEG_INFINITY, eps, d.u[0], d.u[1])?,
                    model.sample(d.cb, w, f64::NEG_INFINITY, eps, d.u[2], d.u[3])?,
                ),
                Stratum::Cross => (
                    model.sample(d.ca, w, 0.5 * eps, eps, d.u[0], d.u[1])?,
                    model.sample(d.cb, w, f64::NEG_INFINITY, 0.5 * eps, d.u[2], d.u[3])?,
                ),
                Stratum::Apex => (
                    model.sample(d.ca, w, f64::NEG_INFINITY, eps / 16.0, d.u[0], d.u[1])?,
                    model.sample(d.cb, w, f64::NEG_INFINITY, eps, d.u[2], d.u[3])?,
                ),
                Stratum::Matched => match model.sample(d.ca, w, f64::NEG_INFINITY, eps, d.u[0], d.u[1])? {
                    Some(a) => {
                        let target = w.measure(model.metric.as_ref(), &a.chart);
                        let b = model.matched(d.cb, w, target, d.u[3])?;
                        (Some(a), b)
                    }
                    None => (None, None),
                },
            };
            if let (Some(a), Some(b)) = pair {
                if a.chart != b.chart {
                    jobs.push((eps, d.stratum, a, b));
                }
            }
        }
    }
    let records = jobs
        .into_par_iter()
        .map(|(scale, stratum, a, b)| {
            let o = outer.eval(&a, &b, &opts.distance)?;
            let i = model.inner_distance(&a, &b)?;
            Ok((o > 0.0).then(|| PairRecord { scale, stratum, a, b, outer: o, inner: i, ratio: i / o }))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<PairRecord> = records.into_iter().flatten().collect();
    let mut scales_out = Vec::with_capacity(scales.len());
    for &eps in scales {
        let mut sup: Option<f64> = None;
        let mut witness = None;
        let mut count = 0;
        for (k, p) in pairs.iter().enumerate().filter(|(_, p)| p.scale == eps) {
            count += 1;
            if sup.is_none_or(|s| p.ratio > s) {
                sup = Some(p.ratio);
                witness = Some(k);
            }
        }
        if count == 0 {
            warn!("{}: no admissible pair at scale {eps}; rung skipped", x.name);
        }
        scales_out.push(ScaleSummary { scale: eps, pairs: count, sup, witness });
    }
    let mut running_sup = Vec::with_capacity(pairs.len());
    let mut acc = f64::NEG_INFINITY;
    let mut witness = None;
    for (k, p) in pairs.iter().enumerate() {
        if p.ratio > acc {
            acc = p.ratio;
            witness = Some(k);
        }
        running_sup.push(acc);
    }
    let sups: Vec<f64> = scales_out.iter().filter_map(|s| s.sup).collect();
    let growth = sups.windows(2).map(|w| w[1] / w[0]).collect();
    let min_ratio = pairs.iter().map(|p| p.ratio).fold(f64::INFINITY, f64::min);
    let violations = pairs.iter().filter(|p| p.inner < (1.0 - opts.ratio_tol) * p.outer).count();
    Ok(LneReport {
        name: x.name.clone(),
        ladder: scales.to_vec(),
        scales: scales_out,
        verdict: classify(&sups, opts.growth_tol, opts.growth_steps),
        pairs,
        running_sup,
        sup: if acc.is_finite() { acc } else { f64::NAN },
        witness,
        growth,
        min_ratio,
        violations,
    })
}

/// Scan of a cylinder `Y × [0, η]` with the bound predicted from the LNE
/// constant `L` of `Y`: `inner ≤ |r − r'| + min(r, r') L d_N` against the
/// lower sandwich bound of the outer distance gives `sup ≤ 2 max(1, L)`.
#[derive(Debug, Clone, Serialize)]
pub struct CylinderReport {
    pub scan: LneReport,
    pub predicted: f64,
    pub within_prediction: bool,
}

pub fn cylinder_lne_check(
    subset: &BoundarySubset,
    lne_constant: f64,
    spec: &ConicMetricSpec,
    eta: f64,
    scales: &[f64],
    opts: &LneOptions,
) -> Result<CylinderReport> {
    if !(lne_constant >= 1.0) {
        return invalid(format!("an LNE constant is at least 1, got {lne_constant}"));
    }
    let x = ParamSubmanifold::cylinder(subset, eta)?;
    let scan = lne_ratio_scan(&x, &QuotientChart::Conic(spec.clone()), scales, opts)?;
    let predicted = 2.0 * lne_constant.max(1.0);
    let within_prediction = scan.sup <= predicted * (1.0 + opts.ratio_tol);
    Ok(CylinderReport { scan, predicted, within_prediction })
}

/// `inner / outer` between matched points of the tangency model at the
/// curve parameter `s`: `(θ, r) = (0, s²)` against `(s, s²)`.
pub fn tangency_ratio(s: f64) -> f64 {
    1.0 / (0.5 * s).sin()
}

/// Outer distance of two points of a sub-manifold in the ambient chart.
pub fn outer_distance(engine: &DistanceEngine, a: &XPoint, b: &XPoint, opts: &DistanceOptions) -> Result<f64> {
    Ok(engine.distance(&a.chart, &b.chart, opts)?.value)
}

/// Inner distance of two points of a sub-manifold.
pub fn inner_distance(model: &SubmanifoldModel<'_>, a: &XPoint, b: &XPoint) -> Result<f64> {
    model.inner_distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::blowup_pullback_euclidean;
    use approx::assert_abs_diff_eq;

    fn plane_chart() -> QuotientChart {
        QuotientChart::Conic(blowup_pullback_euclidean(2).unwrap())
    }

    fn engine() -> DistanceEngine {
        let c = plane_chart();
        DistanceEngine::new(c.metric(), c.default_grid()).unwrap()
    }

    #[test]
    fn transversality_examples() {
        let m = blowup_pullback_euclidean(2).unwrap();
        assert!(check_p_submanifold(&ParamSubmanifold::radial_ray(0.4, 1.0).unwrap(), &m, 0.1).ok);
        let level = check_p_submanifold(&ParamSubmanifold::circle_level(0.5).unwrap(), &m, 0.1);
        assert!(level.ok && level.samples.is_empty());
        let para = ParamSubmanifold::polynomial("parabola", vec![0.0, 1.0], vec![0.0, 0.0, 1.0], 0.0, 1.0).unwrap();
        let c = check_p_submanifold(&para, &m, 0.1);
        assert!(!c.ok);
        assert!(c.samples[0].radial < 1e-5);
    }

    #[test]
    fn distances_on_rays() {
        let x = ParamSubmanifold::rays(&[0.0, PI], 1.0).unwrap();
        let model = SubmanifoldModel::new(&x, &plane_chart(), Default::default()).unwrap();
        let e = engine();
        let a = model.curve_point(0, 0.3).unwrap();
        let b = model.curve_point(0, 0.7).unwrap();
        let c = model.curve_point(1, 0.5).unwrap();
        let o = Default::default();
        assert_eq!(outer_distance(&e, &a, &a, &o).unwrap(), 0.0);
        assert_abs_diff_eq!(outer_distance(&e, &a, &b, &o).unwrap(), 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(inner_distance(&model, &a, &b).unwrap(), 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(outer_distance(&e, &a, &c, &o).unwrap(), 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(inner_distance(&model, &a, &c).unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn unit_circle_arc_against_chord() {
        let x = ParamSubmanifold::circle_level(1.0).unwrap();
        let model = SubmanifoldModel::new(&x, &plane_chart(), Default::default()).unwrap();
        let a = model.curve_point(0, 0.0).unwrap();
        let b = model.curve_point(0, PI).unwrap();
        assert_abs_diff_eq!(inner_distance(&model, &a, &b).unwrap(), PI, epsilon = 1e-9);
        assert_abs_diff_eq!(outer_distance(&engine(), &a, &b, &Default::default()).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn classify_rule() {
        assert_eq!(classify(&[1.0; 8], 1.5, 3), Verdict::Bounded);
        let sqrt2: Vec<f64> = (0..8).map(|k| 2f64.sqrt().powi(k)).collect();
        assert_eq!(classify(&sqrt2, 1.5, 3), Verdict::Diverging);
        assert_eq!(classify(&[1.0, 1.1, 1.2, 1.3, 1.3], 1.5, 3), Verdict::Bounded);
        assert_eq!(classify(&[1.0, 2.0, 1.0, 2.0, 1.0], 1.5, 3), Verdict::Bounded);
    }

    #[test]
    fn radial_ray_scan_is_one() {
        let x = ParamSubmanifold::radial_ray(1.0, 1.0).unwrap();
        let rep = lne_ratio_scan(&x, &plane_chart(), &scale_ladder(1.0, 8), &LneOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::Bounded);
        assert_abs_diff_eq!(rep.sup, 1.0, epsilon = 1e-9);
        assert_eq!(rep.violations, 0);
        assert!(rep.running_sup.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn tangency_scan_diverges_like_two_over_s() {
        let x = ParamSubmanifold::tangency_model(1.0).unwrap();
        let m = blowup_pullback_euclidean(2).unwrap();
        assert!(!check_p_submanifold(&x, &m, 0.1).ok);
        let rep = lne_ratio_scan(&x, &plane_chart(), &scale_ladder(1.0, 8), &LneOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::Diverging, "{:?}", rep.growth);
        let w = &rep.pairs[rep.witness.unwrap()];
        let s = if w.a.component == 1 { w.a.param[0] } else { w.b.param[0] };
        let q = w.ratio / (2.0 / s);
        assert!((0.5..=2.0).contains(&q), "{q}");
    }

    #[test]
    fn arc_cylinder_is_bounded() {
        let spec = blowup_pullback_euclidean(2).unwrap();
        let opts = LneOptions { within_pairs: 8, cross_pairs: 4, apex_pairs: 4, matched_pairs: 4, ..Default::default() };
        let rep = cylinder_lne_check(
            &BoundarySubset::Arc { start: 0.3, end: 0.3 + PI / 2.0 },
            1.0,
            &spec,
            1.0,
            &scale_ladder(1.0, 4),
            &opts,
        )
        .unwrap();
        assert_eq!(rep.scan.verdict, Verdict::Bounded);
        assert!(rep.within_prediction, "{}", rep.scan.sup);
        assert_eq!(rep.scan.violations, 0, "{}", rep.scan.min_ratio);
    }

    #[test]
    fn report_serializes() {
        let x = ParamSubmanifold::radial_ray(1.0, 1.0).unwrap();
        let opts = LneOptions { within_pairs: 2, cross_pairs: 1, apex_pairs: 1, matched_pairs: 0, ..Default::default() };
        let rep = lne_ratio_scan(&x, &plane_chart(), &scale_ladder(1.0, 2), &opts).unwrap();
        let json: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(json["verdict"], "BOUNDED");
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), rep.pairs.len() + 1);
    }
}

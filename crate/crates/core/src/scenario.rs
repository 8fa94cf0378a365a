//! Scenario files: geometry declarations plus a task list, run in order.
//!
//! Scenarios are TOML documents with `schema = 1`. Declarations are named
//! tables (`[boundaries.*]`, `[metrics.*]`, `[quotients.*]`,
//! `[completions.*]`, `[submanifolds.*]`) and tasks are an array of tables
//! tagged by `task`. Every task writes its table under the output
//! directory and may report violations, which turn into a nonzero exit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{signed_angle, BoundaryGeometry, BoundaryKind, BoundaryPoint, MeshGraph};
use crate::distance::{
    conic_sandwich_bounds, default_ac_grid, default_conic_grid, exact_simple_cone_distance, Bracket, DistanceEngine,
    DistanceOptions, GridDiscretization,
};
use crate::error::{GeomError, Result};
use crate::lne::{
    check_p_submanifold, lne_ratio_scan, scale_ladder, tangency_ratio, BoundarySubset, LneOptions, ParamSubmanifold,
    Verdict,
};
use crate::metric::{
    blowup_pullback_euclidean, equivalence_bracket, infinity_pullback_euclidean, logspiral_example, AcMetricSpec,
    ChartMetric, ChartPoint, ConicMetricSpec, EndPiece, GluedCylinder, LogSpiralMetric, MetricFamily, Tangent,
};
use crate::quotient::{
    build_completion, completion_duality_check, inversion_duality_check, BoundaryCollapse, CompletionSpec, Face,
    QuotientChart, QuotientPoint, QuotientSpace,
};

pub const SCHEMA_VERSION: u32 = 1;

fn config(msg: impl Into<String>) -> GeomError {
    GeomError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundaryDecl {
    Circle { circumference: f64 },
    Sphere { dimension: usize, radius: f64 },
    Torus { periods: Vec<f64> },
    /// Mesh in the plain-text mesh format, inline or from a file relative
    /// to the scenario.
    Mesh {
        #[serde(default)]
        text: Option<String>,
        #[serde(default)]
        path: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricDecl {
    Conic { boundary: String, height: f64, family: MetricFamily },
    /// Blow-up of Euclidean `R^n` at the origin; `n ∈ {2, 3}`.
    BlowupEuclidean { n: usize },
    /// Blow-up of Euclidean `R^n` at infinity.
    InfinityEuclidean { n: usize },
    Ac { base: String },
    /// Conic core glued at `r = 1` to an end metric (ac or conic).
    Glued { core: String, end: String },
    LogSpiral { height: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuotientDecl {
    pub charts: Vec<String>,
    /// `[chart index, "lower" | "upper", apex label]` triples.
    pub collapse: Vec<(usize, Face, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionDecl {
    pub space: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SubmanifoldDecl {
    RadialRay { theta: f64, r_max: f64 },
    Rays { thetas: Vec<f64>, r_max: f64 },
    CircleLevel { r: f64 },
    Tangency { s_max: f64 },
    /// Coefficients in increasing degree over `t ∈ [range[0], range[1]]`.
    Polynomial { theta: Vec<f64>, r: Vec<f64>, range: [f64; 2] },
    Cylinder { subset: BoundarySubset, height: f64 },
}

impl SubmanifoldDecl {
    pub fn build(&self, name: &str) -> Result<ParamSubmanifold> {
        let mut x = match self {
            SubmanifoldDecl::RadialRay { theta, r_max } => ParamSubmanifold::radial_ray(*theta, *r_max)?,
            SubmanifoldDecl::Rays { thetas, r_max } => ParamSubmanifold::rays(thetas, *r_max)?,
            SubmanifoldDecl::CircleLevel { r } => ParamSubmanifold::circle_level(*r)?,
            SubmanifoldDecl::Tangency { s_max } => ParamSubmanifold::tangency_model(*s_max)?,
            SubmanifoldDecl::Polynomial { theta, r, range } => {
                ParamSubmanifold::polynomial(name, theta.clone(), r.clone(), range[0], range[1])?
            }
            SubmanifoldDecl::Cylinder { subset, height } => ParamSubmanifold::cylinder(subset, *height)?,
        };
        x.name = name.to_string();
        Ok(x)
    }
}

/// Boundary coordinates of a declared point: an angle, ambient
/// coordinates, or a mesh vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum YDecl {
    Angle(f64),
    Coords(Vec<f64>),
    Vertex { vertex: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointDecl {
    pub y: YDecl,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PairSpec {
    /// Random boundary points with `r` uniform in `[r[0], r[1]]`.
    Random {
        count: usize,
        r: [f64; 2],
        #[serde(default)]
        same_y: bool,
    },
    List { pairs: Vec<[PointDecl; 2]> },
}

impl PairSpec {
    fn samples(&self) -> bool {
        matches!(self, PairSpec::Random { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDecl {
    #[serde(default = "GridDecl::default_kind")]
    pub kind: String,
    pub levels: usize,
    pub samples: usize,
    #[serde(default)]
    pub r_min: Option<f64>,
    #[serde(default = "GridDecl::default_stencil")]
    pub stencil: usize,
}

impl GridDecl {
    fn default_kind() -> String {
        "geometric".into()
    }

    fn default_stencil() -> usize {
        2
    }

    fn build(&self, m: &dyn ChartMetric) -> Result<GridDiscretization> {
        let (lo, hi) = m.radial_domain();
        let lower = m.collapsed_lower();
        let upper = m.collapsed_upper();
        let g = match self.kind.as_str() {
            "geometric" => {
                let span = hi - lo;
                let r_min = self.r_min.unwrap_or(lo + span * 1e-3);
                GridDiscretization::geometric(self.levels, self.samples, r_min, hi, lower)
            }
            "uniform" => GridDiscretization::uniform(self.levels, self.samples, lo, hi, lower),
            "two-sided" => GridDiscretization::two_sided(self.levels, self.samples, self.r_min.unwrap_or(1e-3), lower, upper),
            other => return Err(config(format!("unknown grid kind {other:?}"))),
        };
        Ok(g.with_stencil(self.stencil))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Oracle {
    /// Push-forward to Euclidean space for Euclidean blow-up charts.
    Euclidean,
    /// Closed form of constant-family cones.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Example {
    /// Chart norms of the blow-up at the origin against Euclidean norms.
    EuclideanBlowup,
    /// Chart norms of the blow-up at infinity against Euclidean norms.
    EuclideanInfinity,
    /// Pull-back of the plane metric by the log-spiral resolution.
    LogSpiralPullback,
    /// Refined geodesic toward the apex in the log-spiral plane chart.
    LogSpiralTrace,
}

fn default_tolerance() -> f64 {
    0.02
}

fn default_true() -> bool {
    true
}

fn default_sym_tol() -> f64 {
    1e-9
}

fn default_lower() -> f64 {
    0.5
}

fn default_one() -> f64 {
    1.0
}

fn default_ten() -> usize {
    10
}

fn default_points() -> usize {
    100
}

fn default_n() -> usize {
    2
}

fn default_slack() -> f64 {
    0.1
}

fn default_rungs() -> usize {
    8
}

fn default_identity_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DualityDecl {
    Inversion { metric: String, pairs: PairSpec, output: String },
    Completion {
        completion: String,
        /// Pairs per class: core, end, mixed.
        per_class: usize,
        /// Chart-coordinate ranges of core and end samples.
        core: [f64; 2],
        end: [f64; 2],
        #[serde(default)]
        frozen: Option<[f64; 2]>,
        #[serde(default = "default_slack")]
        slack: f64,
        output: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Task {
    /// Columns `index,a_y,a_r,b_y,b_r,distance,method,reverse,oracle,rel_err`.
    DistanceBatch {
        metric: String,
        pairs: PairSpec,
        #[serde(default)]
        grid: Option<GridDecl>,
        #[serde(default = "default_true")]
        exact: bool,
        #[serde(default)]
        oracle: Option<Oracle>,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
        #[serde(default = "default_sym_tol")]
        symmetry_tol: f64,
        output: String,
    },
    /// Columns `index,y,r,length`.
    Geodesic {
        metric: String,
        from: PointDecl,
        to: PointDecl,
        #[serde(default)]
        grid: Option<GridDecl>,
        output: String,
    },
    /// Columns `a_y,a_r,b_y,b_r,d_n,lower,distance,upper`.
    SandwichVerify {
        metric: String,
        #[serde(default = "default_ten")]
        radii: usize,
        #[serde(default = "default_ten")]
        angles: usize,
        #[serde(default = "default_lower")]
        lower: f64,
        #[serde(default = "default_one")]
        upper: f64,
        output: String,
    },
    /// Columns `a,b,class,reference,measured,weight,ratio`.
    Duality(DualityDecl),
    /// Columns `index,a,b,distance,reverse`.
    QuotientBatch {
        space: String,
        count: usize,
        r: [f64; 2],
        #[serde(default = "default_sym_tol")]
        symmetry_tol: f64,
        output: String,
    },
    /// Columns `a_y,a_r,b_y,b_r,distance,simple,ratio,lower,upper`.
    EquivalenceCheck {
        metric: String,
        pairs: PairSpec,
        #[serde(default)]
        grid: Option<GridDecl>,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
        output: String,
    },
    /// JSON report plus the pair table of the scan.
    LneScan {
        submanifold: String,
        chart: String,
        #[serde(default = "default_one")]
        eta: f64,
        #[serde(default = "default_rungs")]
        rungs: usize,
        #[serde(default)]
        options: Option<LneOptions>,
        #[serde(default)]
        expect: Option<Verdict>,
        #[serde(default)]
        transversality_tol: Option<f64>,
        /// LNE constant of `Y` for cylinder sub-manifolds.
        #[serde(default)]
        lne_constant: Option<f64>,
        #[serde(default)]
        tangency_growth: bool,
        output_json: String,
        output_csv: String,
    },
    ExampleReplay {
        example: Example,
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default = "default_identity_tol")]
        tolerance: f64,
        #[serde(default)]
        from: Option<[f64; 2]>,
        output: String,
    },
}

impl Task {
    fn samples(&self) -> bool {
        match self {
            Task::DistanceBatch { pairs, .. } | Task::EquivalenceCheck { pairs, .. } => pairs.samples(),
            Task::Duality(DualityDecl::Inversion { pairs, .. }) => pairs.samples(),
            Task::Duality(DualityDecl::Completion { .. }) => true,
            Task::QuotientBatch { .. } | Task::LneScan { .. } => true,
            Task::ExampleReplay { example, .. } => !matches!(example, Example::LogSpiralTrace),
            Task::Geodesic { .. } | Task::SandwichVerify { .. } => false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::DistanceBatch { .. } => "distance-batch",
            Task::Geodesic { .. } => "geodesic",
            Task::SandwichVerify { .. } => "sandwich-verify",
            Task::Duality(_) => "duality",
            Task::QuotientBatch { .. } => "quotient-batch",
            Task::EquivalenceCheck { .. } => "equivalence-check",
            Task::LneScan { .. } => "lne-scan",
            Task::ExampleReplay { .. } => "example-replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// What the scenario reproduces.
    #[serde(default)]
    pub anchor: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub boundaries: BTreeMap<String, BoundaryDecl>,
    #[serde(default)]
    pub metrics: BTreeMap<String, MetricDecl>,
    #[serde(default)]
    pub quotients: BTreeMap<String, QuotientDecl>,
    #[serde(default)]
    pub completions: BTreeMap<String, CompletionDecl>,
    #[serde(default)]
    pub submanifolds: BTreeMap<String, SubmanifoldDecl>,
    #[serde(default)]
    pub tasks: Vec<Task>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    /// Parses and validates a scenario. Errors carry line numbers.
    pub fn parse(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GeomError::Io(format!("{}: {e}", path.display())))?;
        let mut s = Self::parse(&text).map_err(|e| match e {
            GeomError::Config(m) => config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config(e.to_string()))
    }

    /// Checks the schema version and that every referenced name resolves.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(config(format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        let metric = |name: &str, ctx: &str| -> Result<()> {
            if self.metrics.contains_key(name) {
                Ok(())
            } else {
                Err(config(format!("{ctx} refers to missing metric {name:?}")))
            }
        };
        for (name, m) in &self.metrics {
            match m {
                MetricDecl::Conic { boundary, .. } => {
                    if !self.boundaries.contains_key(boundary) {
                        return Err(config(format!("metric {name:?} refers to missing boundary {boundary:?}")));
                    }
                }
                MetricDecl::Ac { base } => metric(base, &format!("metric {name:?}"))?,
                MetricDecl::Glued { core, end } => {
                    metric(core, &format!("metric {name:?}"))?;
                    metric(end, &format!("metric {name:?}"))?;
                }
                _ => {}
            }
        }
        for (name, q) in &self.quotients {
            for c in &q.charts {
                metric(c, &format!("quotient {name:?}"))?;
            }
        }
        for (name, c) in &self.completions {
            if !self.quotients.contains_key(&c.space) {
                return Err(config(format!("completion {name:?} refers to missing quotient {:?}", c.space)));
            }
        }
        for (i, t) in self.tasks.iter().enumerate() {
            let ctx = format!("task {} ({})", i + 1, t.name());
            match t {
                Task::DistanceBatch { metric: m, .. }
                | Task::Geodesic { metric: m, .. }
                | Task::SandwichVerify { metric: m, .. }
                | Task::EquivalenceCheck { metric: m, .. } => metric(m, &ctx)?,
                Task::Duality(DualityDecl::Inversion { metric: m, .. }) => metric(m, &ctx)?,
                Task::Duality(DualityDecl::Completion { completion, .. }) => {
                    if !self.completions.contains_key(completion) {
                        return Err(config(format!("{ctx} refers to missing completion {completion:?}")));
                    }
                }
                Task::QuotientBatch { space, .. } => {
                    if !self.quotients.contains_key(space) {
                        return Err(config(format!("{ctx} refers to missing quotient {space:?}")));
                    }
                }
                Task::LneScan { submanifold, chart, .. } => {
                    metric(chart, &ctx)?;
                    if !self.submanifolds.contains_key(submanifold) {
                        return Err(config(format!("{ctx} refers to missing sub-manifold {submanifold:?}")));
                    }
                }
                Task::ExampleReplay { .. } => {}
            }
        }
        Ok(())
    }

    /// Whether any task draws random samples.
    pub fn needs_seed(&self) -> bool {
        self.tasks.iter().any(Task::samples)
    }
}

/// A resolved metric declaration.
#[derive(Debug, Clone)]
pub enum ResolvedMetric {
    Conic(ConicMetricSpec),
    Ac(AcMetricSpec),
    Glued(GluedCylinder),
    LogSpiral(LogSpiralMetric),
}

impl ResolvedMetric {
    pub fn chart(&self) -> Arc<dyn ChartMetric> {
        match self {
            ResolvedMetric::Conic(c) => Arc::new(c.clone()),
            ResolvedMetric::Ac(a) => Arc::new(a.clone()),
            ResolvedMetric::Glued(g) => Arc::new(g.clone()),
            ResolvedMetric::LogSpiral(l) => Arc::new(l.clone()),
        }
    }

    pub fn default_grid(&self) -> GridDiscretization {
        match self {
            ResolvedMetric::Conic(c) => default_conic_grid(c),
            ResolvedMetric::Ac(a) => default_ac_grid(a),
            ResolvedMetric::Glued(g) => QuotientChart::Glued(g.clone()).default_grid(),
            ResolvedMetric::LogSpiral(l) => {
                let h = l.radial_domain().1;
                GridDiscretization::geometric(64, 96, h * 1e-3, h, true)
            }
        }
    }

    pub fn quotient_chart(&self, name: &str) -> Result<QuotientChart> {
        match self {
            ResolvedMetric::Conic(c) => Ok(QuotientChart::Conic(c.clone())),
            ResolvedMetric::Glued(g) => Ok(QuotientChart::Glued(g.clone())),
            _ => Err(config(format!("metric {name:?} cannot serve as a quotient chart"))),
        }
    }
}

/// Push-forward of chart points of Euclidean blow-up charts.
#[derive(Debug, Clone, Copy)]
enum Pushforward {
    Origin,
    Infinity,
    Plane,
}

fn unit_vector(y: &BoundaryPoint) -> Option<Vec<f64>> {
    match y {
        BoundaryPoint::Angle(a) => Some(vec![a.cos(), a.sin()]),
        BoundaryPoint::Sphere(u) => Some(u.clone()),
        _ => None,
    }
}

impl Pushforward {
    fn apply(self, p: &ChartPoint) -> Option<Vec<f64>> {
        let u = unit_vector(&p.y)?;
        let scale = match self {
            Pushforward::Origin => p.r,
            Pushforward::Infinity => 1.0 / p.r,
            Pushforward::Plane => {
                if p.r <= 1.0 {
                    p.r
                } else {
                    1.0 / (2.0 - p.r)
                }
            }
        };
        Some(u.into_iter().map(|c| c * scale).collect())
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Shortest Euclidean path between `a` and `b` outside the open ball of
/// radius `rho` about the origin: the segment if it misses the ball,
/// otherwise two tangent segments joined by a great-circle arc.
pub fn exterior_distance(a: &[f64], b: &[f64], rho: f64) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let dd = dot(&d, &d);
    let t = if dd > 0.0 { (-dot(a, &d) / dd).clamp(0.0, 1.0) } else { 0.0 };
    let closest: Vec<f64> = a.iter().zip(&d).map(|(x, y)| x + t * y).collect();
    if dot(&closest, &closest).sqrt() >= rho {
        return dd.sqrt();
    }
    let angle = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos();
    let wrap = angle - (rho / na).acos() - (rho / nb).acos();
    (na * na - rho * rho).sqrt() + (nb * nb - rho * rho).sqrt() + rho * wrap.max(0.0)
}

/// Declarations resolved against each other.
pub struct Registry<'a> {
    scenario: &'a Scenario,
    boundaries: BTreeMap<String, Arc<BoundaryGeometry>>,
}

impl<'a> Registry<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        let mut boundaries = BTreeMap::new();
        for (name, b) in &scenario.boundaries {
            let g = match b {
                BoundaryDecl::Circle { circumference } => BoundaryGeometry::circle(*circumference)?,
                BoundaryDecl::Sphere { dimension, radius } => BoundaryGeometry::round_sphere(*dimension, *radius)?,
                BoundaryDecl::Torus { periods } => BoundaryGeometry::flat_torus(periods.clone())?,
                BoundaryDecl::Mesh { text, path } => {
                    let body = match (text, path) {
                        (Some(t), None) => t.clone(),
                        (None, Some(p)) => {
                            let full = scenario.base_dir.as_deref().unwrap_or(Path::new(".")).join(p);
                            fs::read_to_string(&full).map_err(|e| GeomError::Io(format!("{}: {e}", full.display())))?
                        }
                        _ => return Err(config(format!("mesh boundary {name:?} needs exactly one of text, path"))),
                    };
                    BoundaryGeometry::mesh(MeshGraph::parse(&body)?)
                }
            };
            boundaries.insert(name.clone(), Arc::new(g));
        }
        Ok(Self { scenario, boundaries })
    }

    pub fn metric(&self, name: &str) -> Result<ResolvedMetric> {
        self.metric_depth(name, 0)
    }

    fn metric_depth(&self, name: &str, depth: usize) -> Result<ResolvedMetric> {
        if depth > 8 {
            return Err(config(format!("metric {name:?} is defined in terms of itself")));
        }
        let decl = self
            .scenario
            .metrics
            .get(name)
            .ok_or_else(|| config(format!("missing metric {name:?}")))?;
        Ok(match decl {
            MetricDecl::Conic { boundary, height, family } => {
                let b = self
                    .boundaries
                    .get(boundary)
                    .ok_or_else(|| config(format!("missing boundary {boundary:?}")))?;
                ResolvedMetric::Conic(ConicMetricSpec::new(b.clone(), *height, family.clone())?)
            }
            MetricDecl::BlowupEuclidean { n } => ResolvedMetric::Conic(blowup_pullback_euclidean(*n)?),
            MetricDecl::InfinityEuclidean { n } => ResolvedMetric::Ac(infinity_pullback_euclidean(*n)?),
            MetricDecl::Ac { base } => match self.metric_depth(base, depth + 1)? {
                ResolvedMetric::Conic(c) => ResolvedMetric::Ac(AcMetricSpec::new(c)),
                _ => return Err(config(format!("metric {name:?}: the base of an ac metric must be conic"))),
            },
            MetricDecl::Glued { core, end } => {
                let ResolvedMetric::Conic(c) = self.metric_depth(core, depth + 1)? else {
                    return Err(config(format!("metric {name:?}: the core must be conic")));
                };
                let end = match self.metric_depth(end, depth + 1)? {
                    ResolvedMetric::Ac(a) => EndPiece::Ac(a),
                    ResolvedMetric::Conic(e) => EndPiece::Conic(e),
                    _ => return Err(config(format!("metric {name:?}: the end must be ac or conic"))),
                };
                ResolvedMetric::Glued(GluedCylinder::new(c, end)?)
            }
            MetricDecl::LogSpiral { height } => ResolvedMetric::LogSpiral(LogSpiralMetric::with_height(*height)?),
        })
    }

    fn pushforward(&self, name: &str) -> Option<Pushforward> {
        match self.scenario.metrics.get(name)? {
            MetricDecl::BlowupEuclidean { .. } => Some(Pushforward::Origin),
            MetricDecl::InfinityEuclidean { .. } => Some(Pushforward::Infinity),
            MetricDecl::Glued { core, end } => match (self.pushforward(core)?, self.pushforward(end)?) {
                (Pushforward::Origin, Pushforward::Infinity) => Some(Pushforward::Plane),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn quotient(&self, name: &str, opts: DistanceOptions) -> Result<QuotientSpace> {
        let q = self
            .scenario
            .quotients
            .get(name)
            .ok_or_else(|| config(format!("missing quotient {name:?}")))?;
        let charts = q
            .charts
            .iter()
            .map(|c| self.metric(c)?.quotient_chart(c))
            .collect::<Result<Vec<_>>>()?;
        let collapse = BoundaryCollapse::new(q.collapse.iter().map(|(c, f, l)| (*c, *f, l.clone())))?;
        QuotientSpace::new(charts, collapse, opts)
    }

    pub fn completion(&self, name: &str) -> Result<CompletionSpec> {
        let c = self
            .scenario
            .completions
            .get(name)
            .ok_or_else(|| config(format!("missing completion {name:?}")))?;
        build_completion(self.quotient(&c.space, DistanceOptions::default())?)
    }
}

fn boundary_point(b: &BoundaryGeometry, y: &YDecl) -> Result<BoundaryPoint> {
    let p = match (b.kind(), y) {
        (BoundaryKind::Circle { .. }, YDecl::Angle(a)) => BoundaryPoint::Angle(a.rem_euclid(2.0 * std::f64::consts::PI)),
        (BoundaryKind::RoundSphere { .. }, YDecl::Coords(u)) => {
            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(config("sphere point must be nonzero"));
            }
            BoundaryPoint::Sphere(u.iter().map(|x| x / n).collect())
        }
        (BoundaryKind::FlatTorus { .. }, YDecl::Coords(x)) => BoundaryPoint::Torus(x.clone()),
        (BoundaryKind::Mesh(_), YDecl::Vertex { vertex }) => BoundaryPoint::Vertex(*vertex),
        _ => return Err(config(format!("point {y:?} does not fit the boundary"))),
    };
    b.normalize(&p)
}

fn chart_point(m: &dyn ChartMetric, p: &PointDecl) -> Result<ChartPoint> {
    let q = ChartPoint::new(boundary_point(m.boundary(), &p.y)?, p.r);
    m.check_point(&q)?;
    Ok(q)
}

fn pairs_of(m: &dyn ChartMetric, spec: &PairSpec, rng: &mut ChaCha8Rng) -> Result<Vec<(ChartPoint, ChartPoint)>> {
    match spec {
        PairSpec::Random { count, r, same_y } => {
            if !(r[0] <= r[1]) {
                return Err(config(format!("empty radial range {r:?}")));
            }
            let b = m.boundary();
            let mut out = Vec::with_capacity(*count);
            for _ in 0..*count {
                let ya = b.random_point(rng);
                let yb = if *same_y { ya.clone() } else { b.random_point(rng) };
                let ra = rng.gen_range(r[0]..=r[1]);
                let rb = rng.gen_range(r[0]..=r[1]);
                let (pa, pb) = (ChartPoint::new(ya, ra), ChartPoint::new(yb, rb));
                m.check_point(&pa)?;
                m.check_point(&pb)?;
                out.push((pa, pb));
            }
            Ok(out)
        }
        PairSpec::List { pairs } => pairs.iter().map(|[a, b]| Ok((chart_point(m, a)?, chart_point(m, b)?))).collect(),
    }
}

fn f(x: f64) -> String {
    format!("{x:.12e}")
}

/// What a run produced.
#[derive(Debug, Default, Clone)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
    pub violations: Vec<String>,
}

/// Where a run writes and which seed it uses.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
}

struct Output {
    dir: PathBuf,
    summary: RunSummary,
}

impl Output {
    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.summary.artifacts.push(p.clone());
        Ok(p)
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let p = self.path(name)?;
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn violation(&mut self, msg: String) {
        log::error!("{msg}");
        self.summary.violations.push(msg);
    }
}

/// Runs every task in order. Configuration and numerical errors abort the
/// run; invariant violations are collected in the summary.
pub fn run(scenario: &Scenario, ctx: &RunContext) -> Result<RunSummary> {
    let seed = ctx.seed.or(scenario.seed);
    if scenario.needs_seed() && seed.is_none() {
        return Err(config(format!("scenario {:?} samples randomly and needs a seed", scenario.name)));
    }
    let reg = Registry::new(scenario)?;
    let mut out = Output { dir: ctx.out_dir.clone(), summary: RunSummary::default() };
    for (i, task) in scenario.tasks.iter().enumerate() {
        info!("{}: task {} ({})", scenario.name, i + 1, task.name());
        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0).wrapping_add(i as u64));
        run_task(&reg, task, &mut rng, &mut out).map_err(|e| match e {
            GeomError::Config(m) => config(format!("task {} ({}): {m}", i + 1, task.name())),
            other => other,
        })?;
    }
    Ok(out.summary)
}

fn engine_for(m: &ResolvedMetric, grid: &Option<GridDecl>) -> Result<DistanceEngine> {
    let chart = m.chart();
    let g = match grid {
        Some(g) => g.build(chart.as_ref())?,
        None => m.default_grid(),
    };
    DistanceEngine::new(chart, g)
}

fn run_task(reg: &Registry<'_>, task: &Task, rng: &mut ChaCha8Rng, out: &mut Output) -> Result<()> {
    match task {
        Task::DistanceBatch { metric, pairs, grid, exact, oracle, tolerance, symmetry_tol, output } => {
            let m = reg.metric(metric)?;
            let engine = engine_for(&m, grid)?;
            let chart = engine.metric().clone();
            let pairs = pairs_of(chart.as_ref(), pairs, rng)?;
            let opts = DistanceOptions { use_exact: *exact, ..Default::default() };
            let push = reg.pushforward(metric);
            if matches!(oracle, Some(Oracle::Euclidean)) && push.is_none() {
                return Err(config(format!("the euclidean oracle needs a Euclidean blow-up chart, {metric:?} is not")));
            }
            let results = pairs
                .par_iter()
                .map(|(a, b)| {
                    let d = engine.distance(a, b, &opts)?;
                    let rev = engine.distance(b, a, &opts)?.value;
                    let o = match oracle {
                        Some(Oracle::Euclidean) => {
                            let p = push.unwrap();
                            let (ea, eb) = (p.apply(a).unwrap_or_default(), p.apply(b).unwrap_or_default());
                            Some(match p {
                                // the chart only covers |x| ≥ 1/hi
                                Pushforward::Infinity => exterior_distance(&ea, &eb, 1.0 / chart.radial_domain().1),
                                _ => euclid(&ea, &eb),
                            })
                        }
                        Some(Oracle::Exact) => match &m {
                            ResolvedMetric::Conic(c) => Some(exact_simple_cone_distance(c, a, b)?),
                            _ => return Err(config("the exact oracle needs a conic metric")),
                        },
                        None => None,
                    };
                    Ok((d, rev, o))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut rows = Vec::with_capacity(results.len());
            for (k, ((a, b), (d, rev, o))) in pairs.iter().zip(&results).enumerate() {
                let v = d.value;
                if !(v >= 0.0) {
                    out.violation(format!("{metric}: pair {k} ({}, {}) - ({}, {}) has length {v}", a.y, a.r, b.y, b.r));
                }
                if (v - rev).abs() > symmetry_tol * v.max(1.0) {
                    out.violation(format!("{metric}: pair {k} is asymmetric: {v} against {rev}"));
                }
                let rel = o.map(|o| if o > 0.0 { (v - o).abs() / o } else { v.abs() });
                if let Some(e) = rel {
                    if e > *tolerance {
                        out.violation(format!(
                            "{metric}: pair {k} ({}, {}) - ({}, {}) is off its oracle by {e:.3e}",
                            a.y, a.r, b.y, b.r
                        ));
                    }
                }
                rows.push(vec![
                    k.to_string(),
                    a.y.to_string(),
                    f(a.r),
                    b.y.to_string(),
                    f(b.r),
                    f(v),
                    d.method.as_str().to_string(),
                    f(*rev),
                    o.map(f).unwrap_or_default(),
                    rel.map(f).unwrap_or_default(),
                ]);
            }
            out.csv(
                output,
                &["index", "a_y", "a_r", "b_y", "b_r", "distance", "method", "reverse", "oracle", "rel_err"],
                &rows,
            )
        }
        Task::Geodesic { metric, from, to, grid, output } => {
            let m = reg.metric(metric)?;
            let engine = engine_for(&m, grid)?;
            let chart = engine.metric().clone();
            let a = chart_point(chart.as_ref(), from)?;
            let b = chart_point(chart.as_ref(), to)?;
            let opts = DistanceOptions { use_exact: false, ..Default::default() };
            let d = engine.distance(&a, &b, &opts)?;
            let path = d.path.ok_or_else(|| GeomError::NoPath(format!("{metric}: no path found")))?;
            let mut acc = 0.0;
            let mut rows = Vec::new();
            for (k, p) in path.points().iter().enumerate() {
                if k > 0 {
                    acc += crate::metric::segment_length(chart.as_ref(), &path.points()[k - 1], p);
                }
                rows.push(vec![k.to_string(), p.y.to_string(), f(p.r), f(acc)]);
            }
            out.csv(output, &["index", "y", "r", "length"], &rows)
        }
        Task::SandwichVerify { metric, radii, angles, lower, upper, output } => {
            let ResolvedMetric::Conic(c) = reg.metric(metric)? else {
                return Err(config("sandwich-verify needs a conic metric"));
            };
            if !c.family().is_constant() || !c.boundary().is_circle() {
                return Err(config("sandwich-verify needs a constant-family cone over a circle"));
            }
            let h = c.height();
            let mut pts = Vec::new();
            for i in 0..*radii {
                for j in 0..*angles {
                    let r = h * (i + 1) as f64 / *radii as f64;
                    let th = 2.0 * std::f64::consts::PI * j as f64 / *angles as f64;
                    pts.push(ChartPoint::polar(th, r));
                }
            }
            let b = c.boundary();
            let mut rows = Vec::with_capacity(pts.len() * pts.len());
            for a in &pts {
                for p in &pts {
                    let d_n = b.distance_unchecked(&a.y, &p.y);
                    let s = conic_sandwich_bounds(a, p, d_n);
                    let d = exact_simple_cone_distance(&c, a, p)?;
                    let (lo, hi) = (lower * (s.upper), upper * s.upper);
                    let slack = 1e-12 * hi.max(1e-300);
                    if d < lo - slack || d > hi + slack {
                        out.violation(format!(
                            "{metric}: sandwich breach at ({}, {}) - ({}, {}): {d} outside [{lo}, {hi}]",
                            a.y, a.r, p.y, p.r
                        ));
                    }
                    rows.push(vec![a.y.to_string(), f(a.r), p.y.to_string(), f(p.r), f(d_n), f(lo), f(d), f(hi)]);
                }
            }
            out.csv(output, &["a_y", "a_r", "b_y", "b_r", "d_n", "lower", "distance", "upper"], &rows)
        }
        Task::Duality(mode) => {
            let (rep, output) = match mode {
                DualityDecl::Inversion { metric, pairs, output } => {
                    let ResolvedMetric::Conic(c) = reg.metric(metric)? else {
                        return Err(config("inversion duality needs a conic metric"));
                    };
                    let pairs = pairs_of(&c, pairs, rng)?;
                    (inversion_duality_check(&c, &pairs, &DistanceOptions::default())?, output)
                }
                DualityDecl::Completion { completion, per_class, core, end, frozen, slack, output } => {
                    let comp = reg.completion(completion)?;
                    let pairs = completion_pairs(&comp, *per_class, *core, *end, rng)?;
                    let rep = completion_duality_check(&comp, &pairs)?;
                    if let Some([lo, hi]) = frozen {
                        let frozen = Bracket { min: *lo, max: *hi, count: 0 };
                        if !rep.bracket.within(&frozen, *slack) {
                            out.violation(format!(
                                "{completion}: duality bracket {} left the frozen [{lo}, {hi}] ± {slack}",
                                rep.bracket
                            ));
                        }
                    }
                    (rep, output)
                }
            };
            if !rep.bracket.is_positive_finite() {
                out.violation(format!("duality bracket {} is not positive and finite", rep.bracket));
            }
            let p = out.path(output)?;
            rep.write_csv(fs::File::create(p)?)
        }
        Task::QuotientBatch { space, count, r, symmetry_tol, output } => {
            let q = reg.quotient(space, DistanceOptions::default())?;
            let pts: Vec<QuotientPoint> = (0..2 * count).map(|_| random_quotient_point(&q, *r, rng)).collect::<Result<_>>()?;
            let results = (0..*count)
                .into_par_iter()
                .map(|k| {
                    let (a, b) = (&pts[2 * k], &pts[2 * k + 1]);
                    Ok((q.distance(a, b)?, q.distance(b, a)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut rows = Vec::new();
            for (k, (d, rev)) in results.iter().enumerate() {
                let (a, b) = (&pts[2 * k], &pts[2 * k + 1]);
                if !(*d >= 0.0) {
                    out.violation(format!("{space}: pair {k} {a} - {b} has length {d}"));
                }
                if d.is_finite() && (d - rev).abs() > symmetry_tol * d.max(1.0) {
                    out.violation(format!("{space}: pair {k} {a} - {b} is asymmetric: {d} against {rev}"));
                }
                rows.push(vec![k.to_string(), a.to_string(), b.to_string(), f(*d), f(*rev)]);
            }
            out.csv(output, &["index", "a", "b", "distance", "reverse"], &rows)
        }
        Task::EquivalenceCheck { metric, pairs, grid, tolerance, output } => {
            let m = reg.metric(metric)?;
            let ResolvedMetric::Conic(c) = &m else {
                return Err(config("equivalence-check needs a conic metric"));
            };
            let engine = engine_for(&m, grid)?;
            let simple = crate::metric::associated_simple_metric(c);
            let (lo, hi) = equivalence_bracket(c, c.height(), 2001);
            let pairs = pairs_of(c, pairs, rng)?;
            let opts = DistanceOptions { use_exact: false, ..Default::default() };
            let ds = pairs
                .par_iter()
                .map(|(a, b)| Ok((engine.distance(a, b, &opts)?.value, exact_simple_cone_distance(&simple, a, b)?)))
                .collect::<Result<Vec<_>>>()?;
            let mut rows = Vec::new();
            for ((a, b), (d, s)) in pairs.iter().zip(&ds) {
                let ratio = d / s;
                if ratio < lo * (1.0 - tolerance) || ratio > hi * (1.0 + tolerance) {
                    out.violation(format!(
                        "{metric}: ({}, {}) - ({}, {}) has distance ratio {ratio} outside [{lo}, {hi}]",
                        a.y, a.r, b.y, b.r
                    ));
                }
                rows.push(vec![a.y.to_string(), f(a.r), b.y.to_string(), f(b.r), f(*d), f(*s), f(ratio), f(lo), f(hi)]);
            }
            out.csv(output, &["a_y", "a_r", "b_y", "b_r", "distance", "simple", "ratio", "lower", "upper"], &rows)
        }
        Task::LneScan {
            submanifold,
            chart,
            eta,
            rungs,
            options,
            expect,
            transversality_tol,
            lne_constant,
            tangency_growth,
            output_json,
            output_csv,
        } => {
            let decl = reg
                .scenario
                .submanifolds
                .get(submanifold)
                .ok_or_else(|| config(format!("missing sub-manifold {submanifold:?}")))?;
            let x = decl.build(submanifold)?;
            let m = reg.metric(chart)?;
            let qc = m.quotient_chart(chart)?;
            let mut opts = options.clone().unwrap_or_default();
            opts.seed = rng.gen();
            if let Some(tol) = transversality_tol {
                let check = check_p_submanifold(&x, m.chart().as_ref(), *tol);
                if !check.ok && *expect == Some(Verdict::Bounded) {
                    out.violation(format!("{submanifold}: {}", check.diagnostics.join("; ")));
                }
            }
            let ladder = scale_ladder(*eta, *rungs);
            let rep = lne_ratio_scan(&x, &qc, &ladder, &opts)?;
            if rep.violations > 0 {
                out.violation(format!(
                    "{submanifold}: {} pairs with inner below outer (min ratio {})",
                    rep.violations, rep.min_ratio
                ));
            }
            if let Some(v) = expect {
                if rep.verdict != *v {
                    out.violation(format!("{submanifold}: verdict {:?}, expected {v:?}", rep.verdict));
                }
            }
            if let Some(l) = lne_constant {
                let predicted = 2.0 * l.max(1.0);
                if rep.sup > predicted * (1.0 + opts.ratio_tol) {
                    out.violation(format!("{submanifold}: supremum {} above the predicted {predicted}", rep.sup));
                }
            }
            if *tangency_growth {
                match rep.witness.map(|w| &rep.pairs[w]) {
                    Some(w) => {
                        let s = [&w.a, &w.b].iter().filter(|p| p.component == 1).map(|p| p.param[0]).next();
                        match s {
                            Some(s) if s > 0.0 => {
                                let q = w.ratio / tangency_ratio(s);
                                if !(0.5..=2.0).contains(&q) {
                                    out.violation(format!("{submanifold}: witness ratio is {q} times the tangency model"));
                                }
                            }
                            _ => out.violation(format!("{submanifold}: witness does not touch the tangent curve")),
                        }
                    }
                    None => out.violation(format!("{submanifold}: no witness pair")),
                }
            }
            let pj = out.path(output_json)?;
            fs::write(pj, rep.to_json()? + "\n")?;
            let pc = out.path(output_csv)?;
            rep.write_csv(fs::File::create(pc)?)
        }
        Task::ExampleReplay { example, n, points, tolerance, from, output } => {
            replay(*example, *n, *points, *tolerance, *from, rng, output, out)
        }
    }
}

fn random_quotient_point(q: &QuotientSpace, r: [f64; 2], rng: &mut ChaCha8Rng) -> Result<QuotientPoint> {
    let c = rng.gen_range(0..q.charts().len());
    let m = q.engine(c).metric();
    let (lo, hi) = m.radial_domain();
    let (a, b) = (r[0].max(lo), r[1].min(hi));
    if !(a <= b) {
        return Err(config(format!("radial range {r:?} misses chart {c}")));
    }
    let y = m.boundary().random_point(rng);
    Ok(QuotientPoint::chart(c, ChartPoint::new(y, rng.gen_range(a..=b))))
}

/// Samples `per_class` core, end and mixed pairs of a completion whose
/// space charts are glued cylinders; ranges are chart coordinates.
pub fn completion_pairs(
    c: &CompletionSpec,
    per_class: usize,
    core: [f64; 2],
    end: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(QuotientPoint, QuotientPoint)>> {
    let charts: Vec<usize> = (0..c.space.charts().len())
        .filter(|&k| matches!(&c.space.charts()[k], QuotientChart::Glued(g) if matches!(g.end(), EndPiece::Ac(_))))
        .collect();
    if charts.is_empty() {
        return Err(config("the completion has no glued chart with an ac end"));
    }
    if !(core[0] > 0.0 && core[1] <= 1.0 && end[0] >= 1.0 && end[1] < 2.0) {
        return Err(config(format!("core {core:?} must lie in (0, 1] and end {end:?} in [1, 2)")));
    }
    let point = |range: [f64; 2], rng: &mut ChaCha8Rng| {
        let k = charts[rng.gen_range(0..charts.len())];
        let y = c.space.engine(k).metric().boundary().random_point(rng);
        QuotientPoint::chart(k, ChartPoint::new(y, rng.gen_range(range[0]..=range[1])))
    };
    let mut out = Vec::with_capacity(3 * per_class);
    for (ra, rb) in [(core, core), (end, end), (core, end)] {
        for _ in 0..per_class {
            let a = point(ra, rng);
            let b = point(rb, rng);
            if a != b {
                out.push((a, b));
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn replay(
    example: Example,
    n: usize,
    points: usize,
    tolerance: f64,
    from: Option<[f64; 2]>,
    rng: &mut ChaCha8Rng,
    output: &str,
    out: &mut Output,
) -> Result<()> {
    match example {
        Example::EuclideanBlowup | Example::EuclideanInfinity => {
            let at_infinity = example == Example::EuclideanInfinity;
            let spec = blowup_pullback_euclidean(n)?;
            let ac = AcMetricSpec::new(spec.clone());
            let b = spec.boundary();
            let mut rows = Vec::new();
            for _ in 0..points {
                let y = b.random_point(rng);
                let r: f64 = rng.gen_range(0.05..1.0);
                let u = unit_vector(&y).expect("Euclidean charts are over circles and spheres");
                let lambda: f64 = rng.gen_range(-1.0..1.0);
                // a tangent of the boundary and its image direction
                let (xi, dir): (Vec<f64>, Vec<f64>) = match &y {
                    BoundaryPoint::Angle(_) => {
                        let w: f64 = rng.gen_range(-1.0..1.0);
                        (vec![w], vec![-u[1] * w, u[0] * w])
                    }
                    _ => {
                        let raw: Vec<f64> = (0..u.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        let c: f64 = raw.iter().zip(&u).map(|(a, b)| a * b).sum();
                        let t: Vec<f64> = raw.iter().zip(&u).map(|(a, b)| a - c * b).collect();
                        (t.clone(), t)
                    }
                };
                let p = ChartPoint::new(y.clone(), r);
                let v = Tangent::new(&xi, lambda);
                let (chart, image): (f64, Vec<f64>) = if at_infinity {
                    // x = u / r, so dx = −λ u / r² + ξ / r
                    let img = u.iter().zip(&dir).map(|(a, d)| -lambda * a / (r * r) + d / r).collect();
                    (ac.norm_sq(&p, &v)?, img)
                } else {
                    let img = u.iter().zip(&dir).map(|(a, d)| lambda * a + r * d).collect();
                    (spec.norm_sq(&p, &v)?, img)
                };
                let euclid_sq: f64 = image.iter().map(|x: &f64| x * x).sum();
                let rel = (chart - euclid_sq).abs() / euclid_sq.max(1e-300);
                if rel > tolerance {
                    out.violation(format!("pull-back mismatch at ({y}, {r}): {chart} against {euclid_sq}"));
                }
                rows.push(vec![y.to_string(), f(r), f(lambda), f(chart), f(euclid_sq), f(rel)]);
            }
            out.csv(output, &["y", "r", "lambda", "chart_norm_sq", "euclidean_norm_sq", "rel_err"], &rows)
        }
        Example::LogSpiralPullback => {
            let ex = logspiral_example();
            let side = (points as f64).sqrt().ceil() as usize;
            let mut rows = Vec::new();
            for i in 0..side {
                for j in 0..side {
                    if rows.len() == points {
                        break;
                    }
                    let theta = 2.0 * std::f64::consts::PI * i as f64 / side as f64;
                    let r = 0.05 + 0.95 * j as f64 / (side - 1).max(1) as f64;
                    let dtheta: f64 = rng.gen_range(-1.0..1.0);
                    let dr: f64 = rng.gen_range(-1.0..1.0);
                    let pulled = ex.pullback_norm_sq(theta, r, dtheta, dr)?;
                    let model = ex.model.norm_sq(&ChartPoint::polar(theta, r), &Tangent::new(&[dtheta], dr))?;
                    let err = (pulled - model).abs() / model.max(1e-300);
                    if err > tolerance {
                        out.violation(format!("log-spiral pull-back mismatch at ({theta}, {r}): {pulled} against {model}"));
                    }
                    rows.push(vec![f(theta), f(r), f(dtheta), f(dr), f(pulled), f(model), f(err)]);
                }
            }
            out.csv(output, &["theta", "r", "dtheta", "dr", "pullback", "model", "rel_err"], &rows)
        }
        Example::LogSpiralTrace => {
            let [theta0, r0] = from.unwrap_or([0.0, 1.0]);
            let trace = log_spiral_trace(theta0, r0)?;
            let rows: Vec<Vec<String>> = trace
                .iter()
                .map(|t| vec![f(t.r), f(t.theta), f(t.stated), f(t.minimizing)])
                .collect();
            out.csv(output, &["r", "theta", "stated", "minimizing"], &rows)
        }
    }
}

/// One vertex of the refined curve from `(Θ₀, r₀)` to the apex in the
/// polar chart of the log-spiral plane metric, with two reference curves:
/// `stated = Θ₀ + ln r − ln r₀` and `minimizing = Θ₀ − ln r + ln r₀`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpiralSample {
    pub r: f64,
    pub theta: f64,
    pub stated: f64,
    pub minimizing: f64,
}

/// Refined shortest curve to the apex of the log-spiral chart, unwrapped
/// so that `theta` is continuous from `Θ₀`.
pub fn log_spiral_trace(theta0: f64, r0: f64) -> Result<Vec<SpiralSample>> {
    let metric = LogSpiralMetric::default();
    let m = ResolvedMetric::LogSpiral(metric);
    let engine = DistanceEngine::new(m.chart(), m.default_grid())?;
    let start = ChartPoint::polar(theta0.rem_euclid(2.0 * std::f64::consts::PI), r0);
    let apex = ChartPoint::polar(0.0, 0.0);
    let opts = DistanceOptions { use_exact: false, ..Default::default() };
    let d = engine.distance(&start, &apex, &opts)?;
    let path = d.path.ok_or_else(|| GeomError::NoPath("no curve to the apex".into()))?;
    let mut theta = theta0;
    let mut prev = start.y.angle().unwrap_or(0.0);
    let mut out = Vec::new();
    for p in path.points() {
        if p.r <= 0.0 {
            continue;
        }
        let a = p.y.angle().unwrap_or(prev);
        theta += signed_angle(prev, a);
        prev = a;
        out.push(SpiralSample {
            r: p.r,
            theta,
            stated: theta0 + p.r.ln() - r0.ln(),
            minimizing: theta0 - p.r.ln() + r0.ln(),
        });
    }
    Ok(out)
}

/// A bundled scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub description: String,
    pub anchor: String,
}

const BUNDLED: &[(&str, &str)] = &[
    ("euclidean-cone", include_str!("../scenarios/euclidean-cone.toml")),
    ("infinity-chart", include_str!("../scenarios/infinity-chart.toml")),
    ("warped", include_str!("../scenarios/warped.toml")),
    ("quotient-wedge", include_str!("../scenarios/quotient-wedge.toml")),
    ("completion-duality", include_str!("../scenarios/completion-duality.toml")),
    ("log-spiral", include_str!("../scenarios/log-spiral.toml")),
    ("lne-suite", include_str!("../scenarios/lne-suite.toml")),
];

/// Bundled scenario names and their sources.
pub fn bundled() -> &'static [(&'static str, &'static str)] {
    BUNDLED
}

pub fn bundled_scenario(name: &str) -> Option<Result<Scenario>> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| Scenario::parse(text))
}

pub fn list_examples() -> Result<Vec<CatalogEntry>> {
    BUNDLED
        .iter()
        .map(|(_, text)| {
            let s = Scenario::parse(text)?;
            Ok(CatalogEntry { name: s.name, description: s.description, anchor: s.anchor })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        let cat = list_examples().unwrap();
        assert!(cat.len() >= 6);
        for (e, (name, _)) in cat.iter().zip(bundled()) {
            assert_eq!(e.name, *name);
            assert!(!e.anchor.is_empty() && !e.description.is_empty());
        }
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = Scenario::parse("schema = 1\nname = \"x\"\n[metrics.m]\nkind = \"conic\"\nheight = \"tall\"\n").unwrap_err();
        let GeomError::Config(msg) = err else { panic!() };
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn missing_references_are_named() {
        let text = "schema = 1\nname = \"x\"\n[[tasks]]\ntask = \"geodesic\"\nmetric = \"nowhere\"\noutput = \"g.csv\"\nfrom = { y = 0.0, r = 0.5 }\nto = { y = 1.0, r = 0.5 }\n";
        let GeomError::Config(msg) = Scenario::parse(text).unwrap_err() else { panic!() };
        assert!(msg.contains("nowhere"), "{msg}");
    }

    #[test]
    fn wrong_schema_is_rejected() {
        assert!(Scenario::parse("schema = 2\nname = \"x\"\n").is_err());
    }

    #[test]
    fn seed_is_required_for_sampling() {
        let text = "schema = 1\nname = \"x\"\n[metrics.m]\nkind = \"blowup-euclidean\"\nn = 2\n[[tasks]]\ntask = \"distance-batch\"\nmetric = \"m\"\noutput = \"d.csv\"\npairs = { kind = \"random\", count = 2, r = [0.1, 0.9] }\n";
        let s = Scenario::parse(text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext { out_dir: dir.path().into(), seed: None };
        assert!(matches!(run(&s, &ctx), Err(GeomError::Config(_))));
        let ctx = RunContext { out_dir: dir.path().into(), seed: Some(1) };
        assert!(run(&s, &ctx).unwrap().violations.is_empty());
    }

    #[test]
    fn empty_task_list_writes_nothing() {
        let s = Scenario::parse("schema = 1\nname = \"empty\"\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sum = run(&s, &RunContext { out_dir: dir.path().into(), seed: None }).unwrap();
        assert!(sum.artifacts.is_empty() && sum.violations.is_empty());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn round_trip_through_toml() {
        for (_, text) in bundled() {
            let s = Scenario::parse(text).unwrap();
            let again = Scenario::parse(&s.to_toml().unwrap()).unwrap();
            assert_eq!(s, again);
        }
    }

    #[test]
    fn exterior_distance_wraps_around_the_hole() {
        assert!((exterior_distance(&[2.0, 0.0], &[2.0, 1.0], 1.0) - 1.0).abs() < 1e-15);
        // antipodal points at radius 2 around a unit disk
        let want = 2.0 * 3f64.sqrt() + (std::f64::consts::PI - 2.0 * (0.5f64).acos());
        assert!((exterior_distance(&[2.0, 0.0], &[-2.0, 0.0], 1.0) - want).abs() < 1e-12);
        // touching radius: both formulas agree
        let a = [1.0, -1.0];
        let b = [1.0, 1.0];
        assert!((exterior_distance(&a, &b, 1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spiral_trace_follows_the_minimizing_curve() {
        let trace = log_spiral_trace(0.0, 1.0).unwrap();
        let worst = trace
            .iter()
            .filter(|t| t.r >= 0.05)
            .map(|t| (t.theta - t.minimizing).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "{worst}");
    }
}

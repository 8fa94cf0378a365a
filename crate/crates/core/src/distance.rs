//! Distances of chart metrics.
//!
//! Constant-family cones have a closed form. Everything else goes through a
//! grid graph over `samples × levels` whose edge weights are lengths of
//! straight chart segments, followed by a variational refinement of the
//! graph path.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryPoint, BoundaryKind};
use crate::error::{GeomError, Result};
use crate::graph::{GraphBuilder, WeightedGraph};
use crate::metric::{
    cone_law, curve_length, segment_length, segment_length_fixed, AcMetricSpec, ChartMetric, ChartPoint,
    ConicMetricSpec, CurvePolyline, MetricFamily,
};

/// How a distance value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    Graph,
    Refined,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Graph => "graph",
            Method::Refined => "refined",
        }
    }
}

/// A distance value with the curve realizing it when one was computed.
#[derive(Debug, Clone)]
pub struct DistanceResult {
    pub value: f64,
    pub path: Option<CurvePolyline>,
    pub method: Method,
    /// Snap cost for graph results, last relative decrease for refined ones.
    pub residual: f64,
    /// Number of times refinement clamped a vertex back into the chart.
    pub projections: usize,
}

impl DistanceResult {
    fn exact(value: f64) -> Self {
        Self { value, path: None, method: Method::Exact, residual: 0.0, projections: 0 }
    }

    fn unreachable() -> Self {
        Self { value: f64::INFINITY, path: None, method: Method::Graph, residual: 0.0, projections: 0 }
    }
}

/// Radial levels and boundary samples of a chart grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDiscretization {
    pub levels: Vec<f64>,
    pub boundary_samples: usize,
    /// Collapsed node at the lower face, joined to every first-level node.
    pub lower_apex: bool,
    /// Collapsed node at the upper face, joined to every last-level node.
    pub upper_apex: bool,
    /// 1 joins sample neighbors; 2 also joins neighbors of neighbors.
    pub stencil: usize,
}

impl GridDiscretization {
    /// `n_r` equally spaced levels `lo + (hi − lo)·j/n_r`, `j = 1..=n_r`.
    pub fn uniform(n_r: usize, n_y: usize, lo: f64, hi: f64, lower_apex: bool) -> Self {
        let levels = (1..=n_r).map(|j| lo + (hi - lo) * j as f64 / n_r as f64).collect();
        Self { levels, boundary_samples: n_y, lower_apex, upper_apex: false, stencil: 2 }
    }

    /// `n_r` levels in geometric progression from `r_min` to `r_max`.
    pub fn geometric(n_r: usize, n_y: usize, r_min: f64, r_max: f64, lower_apex: bool) -> Self {
        let n = n_r.max(2);
        let q = (r_max / r_min).powf(1.0 / (n - 1) as f64);
        let levels = (0..n).map(|j| if j == n - 1 { r_max } else { r_min * q.powi(j as i32) }).collect();
        Self { levels, boundary_samples: n_y, lower_apex, upper_apex: false, stencil: 2 }
    }

    /// Levels on `(0, 2)` refined geometrically toward both faces, symmetric
    /// about 1, with the given number of levels per half.
    pub fn two_sided(per_half: usize, n_y: usize, r_min: f64, lower_apex: bool, upper_apex: bool) -> Self {
        let half = Self::geometric(per_half, n_y, r_min, 1.0, false).levels;
        let mut levels = half.clone();
        levels.extend(half.iter().rev().skip(1).map(|r| 2.0 - r));
        Self { levels, boundary_samples: n_y, lower_apex, upper_apex, stencil: 2 }
    }

    pub fn with_stencil(mut self, stencil: usize) -> Self {
        self.stencil = stencil;
        self
    }

    fn validate(&self, m: &dyn ChartMetric) -> Result<()> {
        let (lo, hi) = m.radial_domain();
        if self.levels.len() < 2 {
            return Err(GeomError::InvalidGrid("need at least 2 radial levels".into()));
        }
        if self.levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GeomError::InvalidGrid("radial levels must be strictly increasing".into()));
        }
        if !matches!(m.boundary().kind(), BoundaryKind::Mesh(_)) && self.boundary_samples < 3 {
            return Err(GeomError::InvalidGrid("need at least 3 boundary samples".into()));
        }
        let first = self.levels[0];
        let last = *self.levels.last().unwrap();
        if !(first > lo) || last > hi + 1e-12 || (self.upper_apex && !(last < hi)) {
            return Err(GeomError::InvalidGrid(format!(
                "radial levels must lie in ({lo}, {hi}), got [{first}, {last}]"
            )));
        }
        if self.lower_apex && !m.collapsed_lower() {
            return Err(GeomError::InvalidGrid(format!(
                "the lower face of a {} chart is not collapsed; no apex node allowed",
                m.name()
            )));
        }
        if self.upper_apex && !m.collapsed_upper() {
            return Err(GeomError::InvalidGrid(format!(
                "the upper face of a {} chart is not collapsed; no apex node allowed",
                m.name()
            )));
        }
        if !(1..=2).contains(&self.stencil) {
            return Err(GeomError::InvalidGrid("stencil must be 1 or 2".into()));
        }
        Ok(())
    }
}

/// Options of the variational refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineOptions {
    /// Stop once a sweep decreases length by less than this relative amount.
    pub tol: f64,
    /// Maximum number of sweeps over all levels.
    pub max_iter: usize,
    /// Vertex count the seed is coarsened to before optimizing.
    pub coarse_vertices: usize,
    /// Number of midpoint subdivisions after the coarse solve.
    pub subdivisions: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 500, coarse_vertices: 9, subdivisions: 3 }
    }
}

/// Options of a distance query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceOptions {
    /// Use the closed form when the chart has one.
    pub use_exact: bool,
    /// Refine graph paths.
    pub refine: bool,
    pub refine_opts: RefineOptions,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self { use_exact: true, refine: true, refine_opts: RefineOptions::default() }
    }
}

/// `sqrt(r² + r'² − 2 r r' cos(min(d_N, π)))` for constant-family cones.
pub fn exact_simple_cone_distance(spec: &ConicMetricSpec, x: &ChartPoint, x2: &ChartPoint) -> Result<f64> {
    if !spec.family().is_constant() {
        return Err(GeomError::UnsupportedFamily(
            "the closed-form cone distance needs a constant family".into(),
        ));
    }
    spec.check_point(x)?;
    spec.check_point(x2)?;
    let d = spec.boundary().distance(&x.y, &x2.y)?;
    let scale = match spec.family() {
        MetricFamily::Constant { scale } => *scale,
        _ => 1.0,
    };
    Ok(cone_law(x.r, x2.r, d * scale.sqrt()))
}

/// Lower and upper comparison values for a simple cone distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichBounds {
    pub lower: f64,
    pub upper: f64,
}

impl SandwichBounds {
    pub fn contains(&self, d: f64) -> bool {
        self.lower <= d && d <= self.upper
    }
}

/// `(|r − r'|/2 + min(r, r')·d_N/2, |r − r'| + min(r, r')·d_N)`.
pub fn conic_sandwich_bounds(x: &ChartPoint, x2: &ChartPoint, d_n: f64) -> SandwichBounds {
    let upper = (x.r - x2.r).abs() + x.r.min(x2.r) * d_n;
    SandwichBounds { lower: 0.5 * (x.r - x2.r).abs() + 0.5 * x.r.min(x2.r) * d_n, upper }
}

/// `|1/r − 1/r'| + min(1/r, 1/r')·d_N`.
pub fn ac_e_function(x: &ChartPoint, x2: &ChartPoint, d_n: f64) -> Result<f64> {
    if !(x.r > 0.0 && x2.r > 0.0) {
        return Err(GeomError::SingularEvaluation("the e-function needs r, r' > 0".into()));
    }
    let (a, b) = (1.0 / x.r, 1.0 / x2.r);
    Ok((a - b).abs() + a.min(b) * d_n)
}

/// Empirical `[min, max]` of a sampled ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for Bracket {
    fn default() -> Self {
        Self { min: f64::INFINITY, max: f64::NEG_INFINITY, count: 0 }
    }
}

impl Bracket {
    pub fn push(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        self.count += 1;
    }

    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut b = Self::default();
        for v in values {
            b.push(v);
        }
        b
    }

    /// Nonempty, strictly positive and finite.
    pub fn is_positive_finite(&self) -> bool {
        self.count > 0 && self.min > 0.0 && self.max.is_finite()
    }

    /// Whether this bracket lies inside `frozen` widened by `slack` (relative).
    pub fn within(&self, frozen: &Bracket, slack: f64) -> bool {
        self.min >= frozen.min * (1.0 - slack) && self.max <= frozen.max * (1.0 + slack)
    }
}

impl std::fmt::Display for Bracket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}] over {} samples", self.min, self.max, self.count)
    }
}

/// Grid graph of a chart metric with its node coordinates.
pub struct DistanceEngine {
    metric: Arc<dyn ChartMetric>,
    grid: GridDiscretization,
    samples: Vec<BoundaryPoint>,
    graph: WeightedGraph,
    lower_apex: Option<usize>,
    upper_apex: Option<usize>,
}

impl std::fmt::Debug for DistanceEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistanceEngine")
            .field("metric", &self.metric.name())
            .field("levels", &self.grid.levels.len())
            .field("samples", &self.samples.len())
            .field("edges", &self.graph.edge_count())
            .finish()
    }
}

fn stencil_neighbors(nbrs: &[Vec<usize>], stencil: usize) -> Vec<Vec<usize>> {
    if stencil == 1 {
        return nbrs.to_vec();
    }
    nbrs.iter()
        .enumerate()
        .map(|(i, first)| {
            let mut all = first.clone();
            for &j in first {
                all.extend(nbrs[j].iter().copied().filter(|&k| k != i));
            }
            all.sort_unstable();
            all.dedup();
            all
        })
        .collect()
}

/// Builds the grid graph; see [`DistanceEngine::new`].
pub fn build_graph(metric: Arc<dyn ChartMetric>, grid: GridDiscretization) -> Result<DistanceEngine> {
    DistanceEngine::new(metric, grid)
}

impl DistanceEngine {
    /// Nodes `(y_i, r_j)` plus the requested apex nodes. Edges join radial
    /// neighbors, sample neighbors on a level and sample neighbors on
    /// adjacent levels; each weight is the length of the straight chart
    /// segment between the two nodes.
    pub fn new(metric: Arc<dyn ChartMetric>, grid: GridDiscretization) -> Result<Self> {
        grid.validate(metric.as_ref())?;
        let (samples, nbrs) = metric.boundary().samples(grid.boundary_samples)?;
        let nbrs = stencil_neighbors(&nbrs, grid.stencil);
        let ny = samples.len();
        let nr = grid.levels.len();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for j in 0..nr {
            for i in 0..ny {
                let a = j * ny + i;
                for &k in &nbrs[i] {
                    if k > i {
                        pairs.push((a, j * ny + k));
                    }
                }
                if j + 1 < nr {
                    pairs.push((a, (j + 1) * ny + i));
                    for &k in &nbrs[i] {
                        pairs.push((a, (j + 1) * ny + k));
                    }
                }
            }
        }
        let mut n = nr * ny;
        let lower_apex = grid.lower_apex.then(|| {
            n += 1;
            n - 1
        });
        let upper_apex = grid.upper_apex.then(|| {
            n += 1;
            n - 1
        });
        let mut engine = Self { metric, grid, samples, graph: WeightedGraph::default(), lower_apex, upper_apex };
        if let Some(a) = lower_apex {
            pairs.extend((0..ny).map(|i| (a, i)));
        }
        if let Some(a) = upper_apex {
            pairs.extend((0..ny).map(|i| (a, (nr - 1) * ny + i)));
        }
        let m = engine.metric.as_ref();
        let weights: Vec<f64> = pairs
            .par_iter()
            .map(|&(a, b)| {
                let (pa, pb) = engine.apex_aware_pair(a, b);
                segment_length(m, &pa, &pb)
            })
            .collect();
        let mut builder = GraphBuilder::new(n);
        for (&(a, b), &w) in pairs.iter().zip(&weights) {
            if w.is_finite() {
                builder.add_edge(a, b, w);
            }
        }
        engine.graph = builder.build();
        Ok(engine)
    }

    pub fn metric(&self) -> &Arc<dyn ChartMetric> {
        &self.metric
    }

    pub fn grid(&self) -> &GridDiscretization {
        &self.grid
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn samples(&self) -> &[BoundaryPoint] {
        &self.samples
    }

    pub fn lower_apex(&self) -> Option<usize> {
        self.lower_apex
    }

    pub fn upper_apex(&self) -> Option<usize> {
        self.upper_apex
    }

    pub fn node_index(&self, sample: usize, level: usize) -> usize {
        level * self.samples.len() + sample
    }

    /// Chart coordinates of a grid node. Apex nodes report the first sample.
    pub fn node_point(&self, node: usize) -> ChartPoint {
        let (lo, hi) = self.metric.radial_domain();
        if Some(node) == self.lower_apex {
            return ChartPoint::new(self.samples[0].clone(), lo);
        }
        if Some(node) == self.upper_apex {
            return ChartPoint::new(self.samples[0].clone(), hi);
        }
        let ny = self.samples.len();
        ChartPoint::new(self.samples[node % ny].clone(), self.grid.levels[node / ny])
    }

    fn is_apex(&self, node: usize) -> bool {
        Some(node) == self.lower_apex || Some(node) == self.upper_apex
    }

    /// Endpoints of an edge, with an apex placed under its partner.
    fn apex_aware_pair(&self, a: usize, b: usize) -> (ChartPoint, ChartPoint) {
        let (mut pa, mut pb) = (self.node_point(a), self.node_point(b));
        if self.is_apex(a) {
            pa.y = pb.y.clone();
        }
        if self.is_apex(b) {
            pb.y = pa.y.clone();
        }
        (pa, pb)
    }

    fn on_lower_face(&self, p: &ChartPoint) -> bool {
        self.lower_apex.is_some() && p.r <= self.metric.radial_domain().0
    }

    fn on_upper_face(&self, p: &ChartPoint) -> bool {
        self.upper_apex.is_some() && p.r >= self.metric.radial_domain().1
    }

    /// Grid nodes surrounding `p` with the straight-segment cost to reach
    /// them. A point on a collapsed face is its apex node.
    pub fn attachments(&self, p: &ChartPoint) -> Vec<(usize, f64)> {
        if self.on_lower_face(p) {
            return vec![(self.lower_apex.unwrap(), 0.0)];
        }
        if self.on_upper_face(p) {
            return vec![(self.upper_apex.unwrap(), 0.0)];
        }
        let levels = &self.grid.levels;
        let pos = levels.partition_point(|&l| l < p.r);
        let mut level_idx: Vec<usize> = Vec::with_capacity(2);
        if pos > 0 {
            level_idx.push(pos - 1);
        }
        if pos < levels.len() {
            level_idx.push(pos);
        }
        let boundary = self.metric.boundary();
        let mut by_dist: Vec<(f64, usize)> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (boundary.distance_unchecked(&p.y, s), i))
            .collect();
        let k = 3.min(by_dist.len());
        by_dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut near: Vec<(f64, usize)> = by_dist[..k].to_vec();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let m = self.metric.as_ref();
        let mut out = Vec::new();
        for &j in &level_idx {
            for &(_, i) in &near {
                let node = self.node_index(i, j);
                let cost = segment_length(m, p, &self.node_point(node));
                if cost.is_finite() {
                    out.push((node, cost));
                }
            }
        }
        if pos == 0 {
            if let Some(a) = self.lower_apex {
                let face = ChartPoint::new(p.y.clone(), m.radial_domain().0);
                out.push((a, segment_length(m, p, &face)));
            }
        }
        if pos == levels.len() {
            if let Some(a) = self.upper_apex {
                let face = ChartPoint::new(p.y.clone(), m.radial_domain().1);
                out.push((a, segment_length(m, p, &face)));
            }
        }
        out
    }

    /// Lengths of curves from `p` to every node: graph distances seeded with
    /// the attachment costs of `p`.
    pub fn distances_from(&self, p: &ChartPoint) -> Result<Vec<f64>> {
        self.check(p)?;
        Ok(self.graph.dijkstra_seeded(&self.attachments(p), None).dist)
    }

    fn check(&self, p: &ChartPoint) -> Result<()> {
        self.metric.boundary().normalize(&p.y)?;
        self.metric.check_point(p)
    }

    /// Shortest curve through the grid: enter at a grid node near `x`, follow
    /// graph edges and leave near `x'`; the direct segment also competes.
    pub fn graph_distance(&self, x: &ChartPoint, x2: &ChartPoint) -> Result<DistanceResult> {
        self.graph_distance_avoiding(x, x2, &[])
    }

    /// Whether the path reaches a collapsed face or dips to within half of
    /// its nearer endpoint's distance from it.
    fn path_near_apex(&self, path: &CurvePolyline) -> bool {
        let (lo, hi) = self.metric.radial_domain();
        let pts = path.points();
        let (a, b) = (pts[0].r, pts[pts.len() - 1].r);
        let low = lo + 0.5 * (a.min(b) - lo);
        let high = hi - 0.5 * (hi - a.max(b));
        pts[1..pts.len() - 1]
            .iter()
            .any(|p| (self.lower_apex.is_some() && p.r <= low) || (self.upper_apex.is_some() && p.r >= high))
    }

    fn graph_distance_avoiding(&self, x: &ChartPoint, x2: &ChartPoint, avoid: &[usize]) -> Result<DistanceResult> {
        self.check(x)?;
        self.check(x2)?;
        if x == x2 {
            return Ok(DistanceResult {
                value: 0.0,
                path: Some(CurvePolyline::from_points(vec![x.clone(), x2.clone()])?),
                method: Method::Graph,
                residual: 0.0,
                projections: 0,
            });
        }
        let m = self.metric.as_ref();
        let seeds: Vec<(usize, f64)> = self.attachments(x).into_iter().filter(|s| !avoid.contains(&s.0)).collect();
        let exits: Vec<(usize, f64)> = self.attachments(x2).into_iter().filter(|s| !avoid.contains(&s.0)).collect();
        let sp = self.graph.dijkstra_avoiding(&seeds, None, avoid);
        let mut best: Option<(f64, usize, f64)> = None;
        for &(node, cost) in &exits {
            let total = sp.dist[node] + cost;
            if total.is_finite() && best.is_none_or(|b| total < b.0) {
                best = Some((total, node, cost));
            }
        }
        let direct = if self.on_lower_face(x) && self.on_lower_face(x2) || self.on_upper_face(x) && self.on_upper_face(x2) {
            0.0
        } else {
            segment_length(m, x, x2)
        };
        let direct_ok = direct.is_finite() && best.is_none_or(|b| direct <= b.0);
        if direct_ok {
            return Ok(DistanceResult {
                value: direct,
                path: Some(CurvePolyline::from_points(vec![x.clone(), x2.clone()])?),
                method: Method::Graph,
                residual: 0.0,
                projections: 0,
            });
        }
        let Some((value, exit, exit_cost)) = best else {
            return Ok(DistanceResult::unreachable());
        };
        let nodes = sp.path_to(exit).unwrap_or_default();
        let entry_cost = seeds.iter().find(|s| Some(s.0) == nodes.first().copied()).map_or(0.0, |s| s.1);
        let mut pts = vec![x.clone()];
        for (k, &node) in nodes.iter().enumerate() {
            if self.is_apex(node) {
                // one vertex for the crossing, placed halfway between the
                // neighbors so refinement can lift it off the face
                let face_r = self.node_point(node).r;
                let last = pts.last().unwrap();
                let is_end = k + 1 == nodes.len();
                if last.r == face_r || (is_end && x2.r == face_r) {
                    continue;
                }
                let next = nodes.get(k + 1).map(|&n| self.node_point(n).y).unwrap_or_else(|| x2.y.clone());
                let boundary = self.metric.boundary();
                let seg = boundary.segment_unchecked(&last.y, &next);
                pts.push(ChartPoint::new(boundary.segment_point(&seg, 0.5), face_r));
            } else {
                pts.push(self.node_point(node));
            }
        }
        pts.push(x2.clone());
        pts.dedup();
        if pts.len() < 2 {
            pts.push(x2.clone());
        }
        Ok(DistanceResult {
            value,
            path: Some(CurvePolyline::from_points(pts)?),
            method: Method::Graph,
            residual: entry_cost.max(exit_cost),
            projections: 0,
        })
    }

    /// Distance between two chart points. Arguments are put in a canonical
    /// order first so the result is exactly symmetric.
    pub fn distance(&self, x: &ChartPoint, x2: &ChartPoint, opts: &DistanceOptions) -> Result<DistanceResult> {
        self.check(x)?;
        self.check(x2)?;
        let swap = canonical_cmp(x, x2) == Ordering::Greater;
        let (a, b) = if swap { (x2, x) } else { (x, x2) };
        let mut res = self.distance_ordered(a, b, opts)?;
        if swap {
            if let Some(path) = res.path.take() {
                let mut pts = path.into_points();
                pts.reverse();
                res.path = Some(CurvePolyline::from_points(pts)?);
            }
        }
        Ok(res)
    }

    fn distance_ordered(&self, x: &ChartPoint, x2: &ChartPoint, opts: &DistanceOptions) -> Result<DistanceResult> {
        if opts.use_exact {
            if let Some(d) = self.metric.exact_distance(x, x2) {
                return Ok(DistanceResult::exact(d));
            }
        }
        let g = self.graph_distance(x, x2)?;
        if !opts.refine || !g.value.is_finite() || g.value == 0.0 {
            return Ok(g);
        }
        let seed = g.path.as_ref().expect("finite graph results carry a path");
        let mut best = refine_geodesic(self.metric.as_ref(), seed, &opts.refine_opts)?;
        // length has local minima in different homotopy classes around an
        // apex, and graph paths near one are poor seeds; the straight chart
        // segment seeds the competing class
        if self.path_near_apex(seed) {
            let n = opts.refine_opts.coarse_vertices.max(3);
            let mut seeds = vec![chart_segment(self.metric.as_ref(), x, x2, n)?];
            seeds.extend(cone_segment(self.metric.as_ref(), x, x2, n));
            for s in &seeds {
                let r = refine_geodesic(self.metric.as_ref(), s, &opts.refine_opts)?;
                if r.value < best.value {
                    best = r;
                }
            }
        }
        Ok(if best.value <= g.value { best } else { g })
    }

    /// Distances of many pairs in parallel, in input order.
    pub fn distance_batch(
        &self,
        pairs: &[(ChartPoint, ChartPoint)],
        opts: &DistanceOptions,
    ) -> Vec<Result<DistanceResult>> {
        pairs.par_iter().map(|(a, b)| self.distance(a, b, opts)).collect()
    }
}

fn point_coords(p: &BoundaryPoint) -> Vec<f64> {
    match p {
        BoundaryPoint::Angle(a) => vec![*a],
        BoundaryPoint::Sphere(u) | BoundaryPoint::Torus(u) => u.clone(),
        BoundaryPoint::Vertex(v) => vec![*v as f64, 0.0],
        BoundaryPoint::Edge { edge, t } => vec![*edge as f64, *t],
    }
}

/// Total order on chart points: by height, then by boundary coordinates.
pub fn canonical_cmp(a: &ChartPoint, b: &ChartPoint) -> Ordering {
    a.r.total_cmp(&b.r).then_with(|| {
        let (ca, cb) = (point_coords(&a.y), point_coords(&b.y));
        for (u, v) in ca.iter().zip(&cb) {
            match u.total_cmp(v) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        ca.len().cmp(&cb.len())
    })
}

/// Which coordinates of a polyline vertex may move.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Freedom {
    y: bool,
    r: bool,
}

const REDISTRIBUTE_EVERY: usize = 10;

struct Refiner<'a> {
    metric: &'a dyn ChartMetric,
    lo: f64,
    hi: f64,
    open_lower: bool,
    boundary_dim: usize,
    projections: usize,
}

impl<'a> Refiner<'a> {
    fn new(metric: &'a dyn ChartMetric) -> Self {
        let (lo, hi) = metric.radial_domain();
        Self {
            metric,
            lo,
            hi,
            open_lower: metric.open_lower(),
            boundary_dim: metric.boundary().displacement_dim(),
            projections: 0,
        }
    }

    fn is_face(&self, p: &ChartPoint) -> bool {
        (p.r <= self.lo && self.metric.collapsed_lower()) || (p.r >= self.hi && self.metric.collapsed_upper())
    }

    fn seg(&self, a: &ChartPoint, b: &ChartPoint) -> f64 {
        segment_length_fixed(self.metric, a, b)
    }

    fn total(&self, pts: &[ChartPoint]) -> f64 {
        pts.windows(2).map(|w| self.seg(&w[0], &w[1])).sum()
    }

    /// Projects a proposed height back into the chart. A vertex that would
    /// cross a face stops halfway to it instead, so vertices do not pile up
    /// on collapsed faces.
    fn clamp_r(&mut self, from: f64, r: f64) -> f64 {
        let lo = if self.open_lower { self.lo + 1e-9 * self.hi } else { self.lo };
        if r < lo {
            self.projections += 1;
            if from > lo { lo + 0.5 * (from - lo) } else { lo }
        } else if r > self.hi {
            self.projections += 1;
            if from < self.hi { self.hi - 0.5 * (self.hi - from) } else { self.hi }
        } else {
            r
        }
    }

    fn moved(&self, p: &ChartPoint, v: &[f64], free: Freedom) -> ChartPoint {
        let mut k = 0;
        let y = if free.y && self.boundary_dim > 0 {
            k = self.boundary_dim;
            self.metric.boundary().displace(&p.y, &v[..k])
        } else {
            p.y.clone()
        };
        let r = if free.r { p.r + v[k] } else { p.r };
        ChartPoint::new(y, r)
    }

    /// One damped Newton step on vertex `k` with finite-difference
    /// derivatives of the two adjacent segment lengths.
    fn relax_vertex(&mut self, pts: &mut [ChartPoint], k: usize, mut free: Freedom) {
        if free.r && (pts[k].r <= self.lo || pts[k].r >= self.hi) {
            if self.lift_off_face(pts, k) {
                return;
            }
            free.r = false;
        }
        let dim = if free.y { self.boundary_dim } else { 0 } + usize::from(free.r);
        if dim == 0 {
            return;
        }
        let prev = (k > 0).then(|| pts[k - 1].clone());
        let next = pts.get(k + 1).cloned();
        let local = |me: &Self, p: &ChartPoint| -> f64 {
            let mut s = 0.0;
            if let Some(a) = &prev {
                s += me.seg(a, p);
            }
            if let Some(b) = &next {
                s += me.seg(p, b);
            }
            s
        };
        let p0 = pts[k].clone();
        let f0 = local(self, &p0);
        let scale = {
            let mut s: f64 = 0.0;
            let b = self.metric.boundary();
            for q in prev.iter().chain(next.iter()) {
                let dy = b.distance_unchecked(&q.y, &p0.y);
                s = s.max(((q.r - p0.r).powi(2) + dy * dy).sqrt());
            }
            s.max(1e-9)
        };
        let h = 1e-4 * scale;
        let eval = |me: &Self, v: &[f64]| -> f64 {
            let mut q = me.moved(&p0, v, free);
            if free.r {
                q.r = q.r.clamp(me.lo, me.hi);
            }
            local(me, &q)
        };
        let mut g = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        let mut e = vec![0.0; dim];
        let mut fp = vec![0.0; dim];
        let mut fm = vec![0.0; dim];
        for i in 0..dim {
            e[i] = h;
            fp[i] = eval(self, &e);
            e[i] = -h;
            fm[i] = eval(self, &e);
            e[i] = 0.0;
            g[i] = (fp[i] - fm[i]) / (2.0 * h);
            hess[(i, i)] = (fp[i] - 2.0 * f0 + fm[i]) / (h * h);
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                e[i] = h;
                e[j] = h;
                let fpp = eval(self, &e);
                e[i] = -h;
                e[j] = -h;
                let fmm = eval(self, &e);
                e[i] = 0.0;
                e[j] = 0.0;
                let v = (fpp + fmm - fp[i] - fm[i] - fp[j] - fm[j] + 2.0 * f0) / (2.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        if g.norm() * scale <= 1e-15 * f0.max(1e-300) {
            return;
        }
        let diag_max = (0..dim).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max);
        let mut mu = 1e-10 * diag_max.max(1e-12);
        let mut step = None;
        for _ in 0..30 {
            let mut a = hess.clone();
            for i in 0..dim {
                a[(i, i)] += mu;
            }
            if let Some(ch) = a.cholesky() {
                step = Some(ch.solve(&(-&g)));
                break;
            }
            mu = (mu * 10.0).max(1e-12);
        }
        let mut d: Vec<f64> = match step {
            Some(s) => s.iter().copied().collect(),
            None => g.iter().map(|x| -x * scale).collect(),
        };
        // a Newton step longer than the neighboring segments is unreliable
        let dn = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if dn > scale {
            d.iter_mut().for_each(|x| *x *= scale / dn);
        }
        let mut alpha = 1.0;
        for _ in 0..12 {
            let v: Vec<f64> = d.iter().map(|x| alpha * x).collect();
            let mut q = self.moved(&p0, &v, free);
            if free.r {
                q.r = self.clamp_r(p0.r, q.r);
            }
            let f = local(self, &q);
            if f < f0 {
                pts[k] = q;
                return;
            }
            alpha *= 0.5;
        }
    }

    /// Finite differences cannot straddle a face, so a vertex sitting on
    /// one is probed by moving it toward its neighbors' heights instead.
    /// On a collapsed face its boundary coordinate is arbitrary, so the
    /// probe also tries boundary points between the neighbors.
    fn lift_off_face(&mut self, pts: &mut [ChartPoint], k: usize) -> bool {
        let (Some(prev), Some(next)) = (pts.get(k.wrapping_sub(1)).cloned(), pts.get(k + 1).cloned()) else {
            return false;
        };
        let face = pts[k].r;
        let f0 = self.seg(&prev, &pts[k]) + self.seg(&pts[k], &next);
        let reach = (prev.r - face).abs().min((next.r - face).abs());
        if !(reach > 0.0) {
            return false;
        }
        let mut ys = vec![pts[k].y.clone()];
        if self.is_face(&pts[k]) {
            let b = self.metric.boundary();
            let seg = b.segment_unchecked(&prev.y, &next.y);
            ys.extend([0.5, 0.25, 0.75].iter().map(|&t| b.segment_point(&seg, t)));
        }
        let sign = if face <= self.lo { 1.0 } else { -1.0 };
        let mut best: Option<(f64, ChartPoint)> = None;
        for y in ys {
            let mut t = 0.5;
            for _ in 0..20 {
                let q = ChartPoint::new(y.clone(), face + t * reach * sign);
                let f = self.seg(&prev, &q) + self.seg(&q, &next);
                if f < f0 {
                    if best.as_ref().is_none_or(|b| f < b.0) {
                        best = Some((f, q));
                    }
                    break;
                }
                t *= 0.5;
            }
        }
        match best {
            Some((_, q)) => {
                pts[k] = q;
                true
            }
            None => false,
        }
    }

    fn sweep(&mut self, pts: &mut [ChartPoint], pinned_ends: (bool, bool)) {
        let n = pts.len();
        for k in 0..n {
            let free = if k == 0 || k == n - 1 {
                let pinned = if k == 0 { pinned_ends.0 } else { pinned_ends.1 };
                if pinned || !self.is_face(&pts[k]) {
                    continue;
                }
                Freedom { y: true, r: false }
            } else {
                Freedom { y: true, r: true }
            };
            self.relax_vertex(pts, k, free);
        }
    }

    fn freedom(&self, pts: &[ChartPoint], k: usize) -> Option<Freedom> {
        let n = pts.len();
        if k == 0 || k == n - 1 {
            self.is_face(&pts[k]).then_some(Freedom { y: true, r: false })
        } else {
            Some(Freedom { y: true, r: true })
        }
    }

    fn dims(&self, free: Freedom) -> usize {
        (if free.y { self.boundary_dim } else { 0 }) + usize::from(free.r)
    }

    /// One damped Newton step on all free coordinates at once. The Hessian
    /// of the length is block tridiagonal; its blocks come from finite
    /// differences of single segment lengths.
    fn joint_newton(&mut self, pts: &mut Vec<ChartPoint>, mu: &mut f64) -> bool {
        let n = pts.len();
        let frees: Vec<Option<Freedom>> = (0..n).map(|k| self.freedom(pts, k)).collect();
        let mut offset = vec![0usize; n + 1];
        for k in 0..n {
            offset[k + 1] = offset[k] + frees[k].map_or(0, |f| self.dims(f));
        }
        let dim = offset[n];
        if dim == 0 {
            return false;
        }
        let boundary = self.metric.boundary();
        let steps: Vec<f64> = (0..n)
            .map(|k| {
                let mut s: f64 = 0.0;
                for j in [k.wrapping_sub(1), k + 1] {
                    if let Some(q) = pts.get(j) {
                        let dy = boundary.distance_unchecked(&q.y, &pts[k].y);
                        s = s.max(((q.r - pts[k].r).powi(2) + dy * dy).sqrt());
                    }
                }
                1e-4 * s.max(1e-9)
            })
            .collect();
        // finite differences cannot straddle a face: move free vertices on
        // one slightly inside first
        let mut base = pts.clone();
        for k in 0..n {
            if let Some(f) = frees[k] {
                if f.r {
                    if base[k].r <= self.lo + steps[k] {
                        base[k].r = self.lo + 2.0 * steps[k];
                    } else if base[k].r >= self.hi - steps[k] {
                        base[k].r = self.hi - 2.0 * steps[k];
                    }
                }
            }
        }
        let f_start = self.total(pts);
        let mut g = DVector::<f64>::zeros(dim);
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n - 1 {
            let (da, db) = (offset[i + 1] - offset[i], offset[i + 2] - offset[i + 1]);
            let local = da + db;
            if local == 0 {
                continue;
            }
            let hs: Vec<f64> = (0..local).map(|c| if c < da { steps[i] } else { steps[i + 1] }).collect();
            let eval = |me: &Self, v: &[f64]| -> f64 {
                let a = if da > 0 { me.moved(&base[i], &v[..da], frees[i].unwrap()) } else { base[i].clone() };
                let b = if db > 0 { me.moved(&base[i + 1], &v[da..], frees[i + 1].unwrap()) } else { base[i + 1].clone() };
                me.seg(&a, &b)
            };
            let mut e = vec![0.0; local];
            let f0 = eval(self, &e);
            let mut fp = vec![0.0; local];
            let mut fm = vec![0.0; local];
            let idx = |c: usize| if c < da { offset[i] + c } else { offset[i + 1] + c - da };
            for c in 0..local {
                e[c] = hs[c];
                fp[c] = eval(self, &e);
                e[c] = -hs[c];
                fm[c] = eval(self, &e);
                e[c] = 0.0;
                g[idx(c)] += (fp[c] - fm[c]) / (2.0 * hs[c]);
                h[(idx(c), idx(c))] += (fp[c] - 2.0 * f0 + fm[c]) / (hs[c] * hs[c]);
            }
            for c in 0..local {
                for d in (c + 1)..local {
                    e[c] = hs[c];
                    e[d] = hs[d];
                    let fpp = eval(self, &e);
                    e[c] = -hs[c];
                    e[d] = -hs[d];
                    let fmm = eval(self, &e);
                    e[c] = 0.0;
                    e[d] = 0.0;
                    let v = (fpp + fmm - fp[c] - fm[c] - fp[d] - fm[d] + 2.0 * f0) / (2.0 * hs[c] * hs[d]);
                    h[(idx(c), idx(d))] += v;
                    h[(idx(d), idx(c))] += v;
                }
            }
        }
        let diag_max = (0..dim).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        for _ in 0..8 {
            let mut a = h.clone();
            for i in 0..dim {
                a[(i, i)] += *mu * diag_max;
            }
            let Some(ch) = a.cholesky() else {
                *mu *= 10.0;
                continue;
            };
            let d = ch.solve(&(-&g));
            let mut trial = base.clone();
            for k in 0..n {
                if let Some(f) = frees[k] {
                    let (lo, hi) = (offset[k], offset[k + 1]);
                    if hi > lo {
                        let v: Vec<f64> = d.as_slice()[lo..hi].to_vec();
                        let mut q = self.moved(&base[k], &v, f);
                        if f.r {
                            q.r = self.clamp_r(base[k].r, q.r);
                        }
                        trial[k] = q;
                    }
                }
            }
            if self.total(&trial) < f_start {
                *pts = trial;
                *mu = (*mu * 0.3).max(1e-12);
                return true;
            }
            *mu *= 10.0;
        }
        false
    }

    fn optimize(&mut self, pts: &mut Vec<ChartPoint>, opts: &RefineOptions, budget: &mut usize) -> f64 {
        let mut len = self.total(pts);
        let mut rel = 0.0;
        let mut sweeps = 0usize;
        let mut mu = 1e-6;
        while *budget > 0 {
            *budget -= 1;
            if sweeps.is_multiple_of(REDISTRIBUTE_EVERY) {
                let even = self.redistribute(pts);
                let even_len = self.total(&even);
                if even_len <= len * (1.0 + 1e-9) {
                    *pts = even;
                    len = even_len;
                }
            }
            sweeps += 1;
            self.sweep(pts, (false, false));
            self.joint_newton(pts, &mut mu);
            let new_len = self.total(pts);
            rel = if len > 0.0 { (len - new_len) / len } else { 0.0 };
            len = new_len;
            if rel < opts.tol {
                break;
            }
        }
        rel
    }

    fn point_along(&self, a: &ChartPoint, b: &ChartPoint, t: f64) -> ChartPoint {
        let boundary = self.metric.boundary();
        let y = if self.is_face(a) && a.r == b.r {
            if t < 0.5 { a.y.clone() } else { b.y.clone() }
        } else {
            let seg = boundary.segment_unchecked(&a.y, &b.y);
            boundary.segment_point(&seg, t)
        };
        ChartPoint::new(y, a.r + t * (b.r - a.r))
    }

    /// Same vertex count, spread evenly by length between consecutive
    /// vertices on collapsed faces.
    fn redistribute(&self, pts: &[ChartPoint]) -> Vec<ChartPoint> {
        let n = pts.len();
        let mut breaks = vec![0];
        for k in 1..n - 1 {
            if self.is_face(&pts[k]) {
                breaks.push(k);
            }
        }
        breaks.push(n - 1);
        let mut out = vec![pts[0].clone()];
        for w in breaks.windows(2) {
            let (s, e) = (w[0], w[1]);
            let piece = &pts[s..=e];
            let lens: Vec<f64> = piece.windows(2).map(|q| self.seg(&q[0], &q[1])).collect();
            let total: f64 = lens.iter().sum();
            let count = e - s;
            if count < 2 || !(total > 0.0) {
                out.extend(piece[1..].iter().cloned());
                continue;
            }
            let mut seg = 0;
            let mut acc = 0.0;
            for k in 1..count {
                let target = total * k as f64 / count as f64;
                while seg + 1 < lens.len() && acc + lens[seg] < target {
                    acc += lens[seg];
                    seg += 1;
                }
                let t = if lens[seg] > 0.0 { ((target - acc) / lens[seg]).clamp(0.0, 1.0) } else { 0.0 };
                out.push(self.point_along(&piece[seg], &piece[seg + 1], t));
            }
            out.push(piece[count].clone());
        }
        out
    }

    fn midpoint(&self, a: &ChartPoint, b: &ChartPoint) -> ChartPoint {
        self.point_along(a, b, 0.5)
    }
}

/// The straight chart segment from `a` to `b` sampled at `n` vertices.
fn chart_segment(metric: &dyn ChartMetric, a: &ChartPoint, b: &ChartPoint, n: usize) -> Result<CurvePolyline> {
    let refiner = Refiner::new(metric);
    let pts = (0..n).map(|k| refiner.point_along(a, b, k as f64 / (n - 1) as f64)).collect();
    CurvePolyline::from_points(pts)
}

/// Straight segment of a flat cone developed along the boundary segment
/// from `a` to `b` and sampled at `n` vertices. The cone angle is frozen at
/// the highest of a descending ladder of heights below the lower endpoint
/// where the developed angle is below π. `None` unless the lower face is a
/// collapsed apex at `r = 0` and some rung qualifies.
fn cone_segment(metric: &dyn ChartMetric, a: &ChartPoint, b: &ChartPoint, n: usize) -> Option<CurvePolyline> {
    let (lo, _) = metric.radial_domain();
    let rm = a.r.min(b.r);
    if !(metric.collapsed_lower() && lo == 0.0 && rm > 0.0) {
        return None;
    }
    let boundary = metric.boundary();
    let seg = boundary.segment_unchecked(&a.y, &b.y);
    let phi = (0..8)
        .map(|k| rm * 10f64.powf(-0.5 * k as f64))
        .map(|h| metric.speed_sq(h, 0.0, 1.0, 0.0).sqrt() / h * seg.length())
        .find(|&phi| phi > 0.0 && phi < PI)?;
    let (p, q) = ((a.r, 0.0), (b.r * phi.cos(), b.r * phi.sin()));
    let pts = (0..n)
        .map(|k| {
            let t = k as f64 / (n - 1) as f64;
            if k == 0 {
                return a.clone();
            }
            if k == n - 1 {
                return b.clone();
            }
            let (u, v) = (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1));
            let ang = v.atan2(u).clamp(0.0, phi);
            ChartPoint::new(boundary.segment_point(&seg, ang / phi), u.hypot(v))
        })
        .collect();
    CurvePolyline::from_points(pts).ok()
}

/// Picks about `target` vertices spread evenly by length along `pts`,
/// always keeping the ends and every vertex on a collapsed face.
fn coarsen(refiner: &Refiner<'_>, pts: &[ChartPoint], target: usize) -> Vec<ChartPoint> {
    if pts.len() <= target {
        return pts.to_vec();
    }
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        let s = refiner.seg(&w[0], &w[1]) + 1e-12 * (w[1].r - w[0].r).abs();
        cum.push(cum.last().unwrap() + s);
    }
    let total = *cum.last().unwrap();
    let step = total / (target - 1) as f64;
    let mut out = vec![pts[0].clone()];
    let mut next_mark = step;
    for k in 1..pts.len() - 1 {
        if refiner.is_face(&pts[k]) || cum[k] >= next_mark {
            out.push(pts[k].clone());
            while next_mark <= cum[k] {
                next_mark += step;
            }
        }
    }
    out.push(pts[pts.len() - 1].clone());
    out
}

/// Local minimization of discrete curve length by coordinate descent on the
/// interior vertices, with both ends pinned (an end on a collapsed face may
/// slide along it). The seed is first coarsened, solved, then subdivided at
/// midpoints and solved again `subdivisions` times. The result is never
/// longer than the seed.
pub fn refine_geodesic(metric: &dyn ChartMetric, seed: &CurvePolyline, opts: &RefineOptions) -> Result<DistanceResult> {
    let seed_len = curve_length(metric, seed)?;
    let mut refiner = Refiner::new(metric);
    let mut pts = coarsen(&refiner, seed.points(), opts.coarse_vertices.max(3));
    let mut budget = opts.max_iter;
    let mut rel = refiner.optimize(&mut pts, opts, &mut budget);
    for _ in 0..opts.subdivisions {
        let mut finer = Vec::with_capacity(2 * pts.len());
        for w in pts.windows(2) {
            finer.push(w[0].clone());
            finer.push(refiner.midpoint(&w[0], &w[1]));
        }
        finer.push(pts[pts.len() - 1].clone());
        pts = finer;
        if budget == 0 {
            break;
        }
        rel = refiner.optimize(&mut pts, opts, &mut budget);
    }
    let path = CurvePolyline::from_points(pts)?;
    let value = curve_length(metric, &path)?;
    if value <= seed_len {
        Ok(DistanceResult {
            value,
            path: Some(path),
            method: Method::Refined,
            residual: rel.max(0.0),
            projections: refiner.projections,
        })
    } else {
        Ok(DistanceResult {
            value: seed_len,
            path: Some(seed.clone()),
            method: Method::Refined,
            residual: 0.0,
            projections: refiner.projections,
        })
    }
}

/// Default grid for a conic chart: geometric levels toward the apex.
pub fn default_conic_grid(spec: &ConicMetricSpec) -> GridDiscretization {
    let h = spec.height();
    let n_y = if spec.boundary().is_circle() { 96 } else { 200 };
    GridDiscretization::geometric(64, n_y, h * 1e-3, h, true)
}

/// Default grid for an ac chart: geometric levels toward infinity.
pub fn default_ac_grid(spec: &AcMetricSpec) -> GridDiscretization {
    let h = spec.base().height();
    let n_y = if spec.boundary().is_circle() { 96 } else { 200 };
    GridDiscretization::geometric(64, n_y, h * 1e-3, h, false)
}

/// Conic distance: closed form for constant families, otherwise graph plus
/// refinement on the default grid. Builds a fresh engine; reuse a
/// [`DistanceEngine`] for batches.
pub fn conic_distance(
    spec: &ConicMetricSpec,
    x: &ChartPoint,
    x2: &ChartPoint,
    opts: &DistanceOptions,
) -> Result<DistanceResult> {
    if opts.use_exact && spec.family().is_constant() {
        return exact_simple_cone_distance(spec, x, x2).map(DistanceResult::exact);
    }
    let engine = DistanceEngine::new(Arc::new(spec.clone()), default_conic_grid(spec))?;
    engine.distance(x, x2, opts)
}

/// Distance of an asymptotically conic chart by graph plus refinement.
pub fn ac_distance(spec: &AcMetricSpec, x: &ChartPoint, x2: &ChartPoint, opts: &DistanceOptions) -> Result<DistanceResult> {
    let engine = DistanceEngine::new(Arc::new(spec.clone()), default_ac_grid(spec))?;
    engine.distance(x, x2, opts)
}

/// One calibration sample: the measured distance and its comparison value.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationSample {
    pub distance: f64,
    pub reference: f64,
}

/// Bracket of `distance / reference` over samples with nonzero reference.
pub fn calibrate(samples: &[CalibrationSample]) -> Bracket {
    Bracket::from_values(
        samples
            .iter()
            .filter(|s| s.reference > 0.0)
            .map(|s| s.distance / s.reference),
    )
}

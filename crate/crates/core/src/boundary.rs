//! Compact boundary manifolds `N` and their geodesic distances.
//!
//! Closed-form families (circle, round sphere, flat torus) answer distance
//! and path queries analytically. Mesh graphs use exact graph shortest
//! paths so that they can serve as oracles for the chart engines.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use smallvec::SmallVec;

use crate::error::{invalid, GeomError, Result};
use crate::graph::{GraphBuilder, WeightedGraph};

/// Small coordinate vector used for tangents and displacements.
pub type Coords = SmallVec<[f64; 4]>;

const TAU: f64 = 2.0 * PI;
/// Barycentric positions this close to an endpoint snap to the vertex.
pub const EDGE_SNAP: f64 = 1e-12;

/// A point of a boundary manifold, in the coordinates of its geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryPoint {
    /// Angle in `[0, 2π)` on a circle.
    Angle(f64),
    /// Unit vector in `R^{n+1}` on a round `n`-sphere.
    Sphere(Vec<f64>),
    /// Coordinates modulo the periods of a flat torus.
    Torus(Vec<f64>),
    /// Vertex of a mesh graph.
    Vertex(usize),
    /// Position `t ∈ [0, 1]` along a mesh edge, from its first endpoint.
    Edge { edge: usize, t: f64 },
}

impl BoundaryPoint {
    pub fn angle(&self) -> Option<f64> {
        match self {
            BoundaryPoint::Angle(a) => Some(*a),
            _ => None,
        }
    }
}

impl fmt::Display for BoundaryPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join(v: &[f64]) -> String {
            v.iter().map(|x| format!("{x:.12}")).collect::<Vec<_>>().join(";")
        }
        match self {
            BoundaryPoint::Angle(a) => write!(f, "{a:.12}"),
            BoundaryPoint::Sphere(u) => write!(f, "{}", join(u)),
            BoundaryPoint::Torus(x) => write!(f, "{}", join(x)),
            BoundaryPoint::Vertex(v) => write!(f, "v{v}"),
            BoundaryPoint::Edge { edge, t } => write!(f, "e{edge}@{t:.12}"),
        }
    }
}

/// Undirected mesh graph with positive edge weights.
#[derive(Debug, Clone)]
pub struct MeshGraph {
    vertices: Vec<Vec<f64>>,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    graph: WeightedGraph,
    all_pairs: Vec<Vec<f64>>,
}

impl MeshGraph {
    pub fn new(vertices: Vec<Vec<f64>>, edges: Vec<(usize, usize)>, weights: Vec<f64>) -> Result<Self> {
        let n = vertices.len();
        if n == 0 {
            return invalid("mesh has no vertices");
        }
        if edges.len() != weights.len() {
            return invalid("mesh edge and weight counts differ");
        }
        let mut builder = GraphBuilder::new(n);
        for (&(a, b), &w) in edges.iter().zip(&weights) {
            if a >= n || b >= n {
                return invalid(format!("mesh edge ({a}, {b}) references a missing vertex"));
            }
            if a == b {
                return invalid(format!("mesh edge ({a}, {b}) is a loop"));
            }
            if !(w > 0.0 && w.is_finite()) {
                return invalid(format!("mesh edge ({a}, {b}) has non-positive weight {w}"));
            }
            builder.add_edge(a, b, w);
        }
        let graph = builder.build();
        let comps = graph.components();
        if comps.iter().any(|&c| c != 0) {
            return invalid("mesh graph is not connected");
        }
        let all_pairs = (0..n).map(|s| graph.dijkstra(s, None).dist).collect();
        Ok(Self { vertices, edges, weights, graph, all_pairs })
    }

    /// Parses the plain-text mesh format:
    ///
    /// ```text
    /// # comment lines start with '#'
    /// vertices <n>
    /// <x> <y> [<z> ...]      (n lines)
    /// edges <m>
    /// <a> <b> <weight>       (m lines)
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |line: usize, msg: &str| GeomError::Config(format!("mesh line {line}: {msg}"));
        let mut header = |key: &str| -> Result<usize> {
            let (ln, l) = lines.next().ok_or_else(|| err(0, &format!("missing '{key}' header")))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(err(ln, &format!("expected '{key} <count>'")));
            }
            it.next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| err(ln, "bad count"))
        };
        let nv = header("vertices")?;
        let mut verts = Vec::with_capacity(nv);
        let mut rest: Vec<(usize, &str)> = Vec::new();
        for item in lines.by_ref() {
            rest.push(item);
        }
        let mut it = rest.into_iter();
        for _ in 0..nv {
            let (ln, l) = it.next().ok_or_else(|| err(0, "missing vertex line"))?;
            let coords: std::result::Result<Vec<f64>, _> = l.split_whitespace().map(str::parse).collect();
            let coords = coords.map_err(|_| err(ln, "bad vertex coordinate"))?;
            verts.push(coords);
        }
        let (ln, l) = it.next().ok_or_else(|| err(0, "missing 'edges' header"))?;
        let mut h = l.split_whitespace();
        if h.next() != Some("edges") {
            return Err(err(ln, "expected 'edges <count>'"));
        }
        let ne: usize = h.next().and_then(|c| c.parse().ok()).ok_or_else(|| err(ln, "bad count"))?;
        let mut edges = Vec::with_capacity(ne);
        let mut weights = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (ln, l) = it.next().ok_or_else(|| err(0, "missing edge line"))?;
            let parts: Vec<&str> = l.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(err(ln, "edge line needs '<a> <b> <weight>'"));
            }
            let a = parts[0].parse().map_err(|_| err(ln, "bad vertex index"))?;
            let b = parts[1].parse().map_err(|_| err(ln, "bad vertex index"))?;
            let w = parts[2].parse().map_err(|_| err(ln, "bad weight"))?;
            edges.push((a, b));
            weights.push(w);
        }
        if let Some((ln, _)) = it.next() {
            return Err(err(ln, "trailing content after edges"));
        }
        Self::new(verts, edges, weights)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn vertex_distance(&self, a: usize, b: usize) -> f64 {
        self.all_pairs[a][b]
    }

    fn anchors(&self, p: &BoundaryPoint) -> SmallVec<[(usize, f64); 2]> {
        match *p {
            BoundaryPoint::Vertex(v) => smallvec::smallvec![(v, 0.0)],
            BoundaryPoint::Edge { edge, t } => {
                let (a, b) = self.edges[edge];
                let w = self.weights[edge];
                smallvec::smallvec![(a, t * w), (b, (1.0 - t) * w)]
            }
            _ => SmallVec::new(),
        }
    }

    fn distance(&self, p: &BoundaryPoint, q: &BoundaryPoint) -> f64 {
        let mut best = f64::INFINITY;
        if let (BoundaryPoint::Edge { edge: e1, t: t1 }, BoundaryPoint::Edge { edge: e2, t: t2 }) = (p, q) {
            if e1 == e2 {
                best = (t1 - t2).abs() * self.weights[*e1];
            }
        }
        for (va, ca) in self.anchors(p) {
            for (vb, cb) in self.anchors(q) {
                best = best.min(ca + self.all_pairs[va][vb] + cb);
            }
        }
        best
    }

    /// Shortest route between two mesh points as a list of mesh points with
    /// cumulative arc length.
    fn route(&self, p: &BoundaryPoint, q: &BoundaryPoint) -> Vec<(BoundaryPoint, f64)> {
        if let (BoundaryPoint::Edge { edge: e1, t: t1 }, BoundaryPoint::Edge { edge: e2, t: t2 }) = (p, q) {
            if e1 == e2 {
                let direct = (t1 - t2).abs() * self.weights[*e1];
                if direct <= self.distance(p, q) {
                    return vec![(p.clone(), 0.0), (q.clone(), direct)];
                }
            }
        }
        let mut best = (f64::INFINITY, 0, 0, 0.0, 0.0);
        for (va, ca) in self.anchors(p) {
            for (vb, cb) in self.anchors(q) {
                let c = ca + self.all_pairs[va][vb] + cb;
                if c < best.0 {
                    best = (c, va, vb, ca, cb);
                }
            }
        }
        let (_, va, vb, ca, _) = best;
        let sp = self.graph.dijkstra(va, Some(vb));
        let verts = sp.path_to(vb).unwrap_or_default();
        let mut out = vec![(p.clone(), 0.0)];
        let mut acc = ca;
        let mut prev = va;
        for (k, &v) in verts.iter().enumerate() {
            if k > 0 {
                acc += self.all_pairs[prev][v];
            }
            if !(k == 0 && matches!(p, BoundaryPoint::Vertex(_))) {
                out.push((BoundaryPoint::Vertex(v), acc));
            }
            prev = v;
        }
        let total = self.distance(p, q);
        if !matches!(q, BoundaryPoint::Vertex(_)) {
            out.push((q.clone(), total));
        } else if let Some(last) = out.last_mut() {
            last.1 = total;
        }
        out
    }

    /// Point at arc length `s` along the edge from vertex `a` to vertex `b`.
    fn point_between(&self, a: &BoundaryPoint, b: &BoundaryPoint, frac: f64) -> BoundaryPoint {
        let pos = |p: &BoundaryPoint| -> Option<(usize, f64)> {
            match *p {
                BoundaryPoint::Edge { edge, t } => Some((edge, t)),
                _ => None,
            }
        };
        let edge_of = |u: usize, v: usize| -> Option<(usize, bool)> {
            self.edges
                .iter()
                .enumerate()
                .filter(|(_, &(x, y))| (x, y) == (u, v) || (x, y) == (v, u))
                .min_by(|l, r| self.weights[l.0].total_cmp(&self.weights[r.0]))
                .map(|(i, &(x, _))| (i, x == u))
        };
        let snapped = |edge: usize, t: f64| -> BoundaryPoint {
            let (x, y) = self.edges[edge];
            if t <= EDGE_SNAP {
                BoundaryPoint::Vertex(x)
            } else if t >= 1.0 - EDGE_SNAP {
                BoundaryPoint::Vertex(y)
            } else {
                BoundaryPoint::Edge { edge, t }
            }
        };
        match (a, b) {
            (BoundaryPoint::Vertex(u), BoundaryPoint::Vertex(v)) => match edge_of(*u, *v) {
                Some((e, forward)) => snapped(e, if forward { frac } else { 1.0 - frac }),
                None => a.clone(),
            },
            _ => {
                let (edge, t0, t1) = match (pos(a), pos(b)) {
                    (Some((e, ta)), Some((_, tb))) => (e, ta, tb),
                    (Some((e, ta)), None) => {
                        let tb = if let BoundaryPoint::Vertex(v) = b {
                            if self.edges[e].0 == *v { 0.0 } else { 1.0 }
                        } else {
                            ta
                        };
                        (e, ta, tb)
                    }
                    (None, Some((e, tb))) => {
                        let ta = if let BoundaryPoint::Vertex(v) = a {
                            if self.edges[e].0 == *v { 0.0 } else { 1.0 }
                        } else {
                            tb
                        };
                        (e, ta, tb)
                    }
                    (None, None) => return a.clone(),
                };
                snapped(edge, t0 + frac * (t1 - t0))
            }
        }
    }
}

/// Which closed-form family (or mesh) a boundary manifold belongs to.
#[derive(Debug, Clone)]
pub enum BoundaryKind {
    Circle { circumference: f64 },
    RoundSphere { dimension: usize, radius: f64 },
    FlatTorus { periods: Vec<f64> },
    Mesh(MeshGraph),
}

/// A compact boundary manifold without boundary together with its distance.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct BoundaryGeometry {
    kind: BoundaryKind,
}

/// Minimizing boundary path between two points, parametrized on `[0, 1]`
/// with constant speed equal to its length.
#[derive(Debug, Clone)]
pub struct BoundarySegment {
    length: f64,
    kind: SegmentKind,
}

#[derive(Debug, Clone)]
enum SegmentKind {
    Circle { theta0: f64, delta: f64 },
    Sphere { u: Vec<f64>, w: Vec<f64>, angle: f64 },
    Torus { x0: Vec<f64>, delta: Vec<f64>, periods: Vec<f64> },
    Mesh { route: Vec<(BoundaryPoint, f64)> },
}

fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Signed angle difference `b - a` wrapped into `(-π, π]`.
pub fn signed_angle(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sphere_angle(u: &[f64], v: &[f64]) -> f64 {
    let diff: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let sum: f64 = u.iter().zip(v).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
    2.0 * diff.atan2(sum)
}

/// Orthonormal basis of the tangent space `u^⊥` of the unit sphere.
fn sphere_frame(u: &[f64]) -> Vec<Vec<f64>> {
    let m = u.len();
    let skip = (0..m)
        .max_by(|&i, &j| u[i].abs().total_cmp(&u[j].abs()))
        .unwrap_or(0);
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(m - 1);
    for i in (0..m).filter(|&i| i != skip) {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        let c = dot(&e, u);
        for k in 0..m {
            e[k] -= c * u[k];
        }
        for f in &frame {
            let c = dot(&e, f);
            for k in 0..m {
                e[k] -= c * f[k];
            }
        }
        let n = norm(&e);
        for x in &mut e {
            *x /= n;
        }
        frame.push(e);
    }
    frame
}

impl BoundaryGeometry {
    pub fn circle(circumference: f64) -> Result<Self> {
        if !(circumference > 0.0 && circumference.is_finite()) {
            return invalid(format!("circle circumference must be positive, got {circumference}"));
        }
        Ok(Self { kind: BoundaryKind::Circle { circumference } })
    }

    /// Unit-speed circle of circumference `2π`.
    pub fn unit_circle() -> Self {
        Self { kind: BoundaryKind::Circle { circumference: TAU } }
    }

    pub fn round_sphere(dimension: usize, radius: f64) -> Result<Self> {
        if dimension < 1 {
            return invalid("sphere dimension must be at least 1");
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return invalid(format!("sphere radius must be positive, got {radius}"));
        }
        Ok(Self { kind: BoundaryKind::RoundSphere { dimension, radius } })
    }

    pub fn flat_torus(periods: Vec<f64>) -> Result<Self> {
        if periods.is_empty() {
            return invalid("torus needs at least one period");
        }
        if periods.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return invalid("torus periods must be positive");
        }
        Ok(Self { kind: BoundaryKind::FlatTorus { periods } })
    }

    pub fn mesh(mesh: MeshGraph) -> Self {
        Self { kind: BoundaryKind::Mesh(mesh) }
    }

    pub fn kind(&self) -> &BoundaryKind {
        &self.kind
    }

    pub fn is_circle(&self) -> bool {
        matches!(self.kind, BoundaryKind::Circle { .. })
    }

    fn circle_scale(&self) -> f64 {
        match self.kind {
            BoundaryKind::Circle { circumference } => circumference / TAU,
            _ => 1.0,
        }
    }

    /// Number of components of a tangent vector `ξ`.
    pub fn tangent_len(&self) -> usize {
        match &self.kind {
            BoundaryKind::Circle { .. } | BoundaryKind::Mesh(_) => 1,
            BoundaryKind::RoundSphere { dimension, .. } => dimension + 1,
            BoundaryKind::FlatTorus { periods } => periods.len(),
        }
    }

    /// Number of free directions a point can be displaced in. Zero for meshes.
    pub fn displacement_dim(&self) -> usize {
        match &self.kind {
            BoundaryKind::Circle { .. } => 1,
            BoundaryKind::RoundSphere { dimension, .. } => *dimension,
            BoundaryKind::FlatTorus { periods } => periods.len(),
            BoundaryKind::Mesh(_) => 0,
        }
    }

    /// Validates a point and returns it in normalized form.
    pub fn normalize(&self, y: &BoundaryPoint) -> Result<BoundaryPoint> {
        match (&self.kind, y) {
            (BoundaryKind::Circle { .. }, BoundaryPoint::Angle(a)) if a.is_finite() => {
                Ok(BoundaryPoint::Angle(wrap_angle(*a)))
            }
            (BoundaryKind::RoundSphere { dimension, .. }, BoundaryPoint::Sphere(u)) => {
                if u.len() != dimension + 1 {
                    return invalid(format!("sphere point needs {} coordinates", dimension + 1));
                }
                let n = norm(u);
                if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                    return invalid(format!("sphere point has norm {n}, expected 1"));
                }
                Ok(BoundaryPoint::Sphere(u.iter().map(|x| x / n).collect()))
            }
            (BoundaryKind::FlatTorus { periods }, BoundaryPoint::Torus(x)) => {
                if x.len() != periods.len() || x.iter().any(|c| !c.is_finite()) {
                    return invalid("torus point has wrong dimension");
                }
                Ok(BoundaryPoint::Torus(
                    x.iter().zip(periods).map(|(c, p)| c.rem_euclid(*p)).collect(),
                ))
            }
            (BoundaryKind::Mesh(m), BoundaryPoint::Vertex(v)) => {
                if *v >= m.vertex_count() {
                    return invalid(format!("vertex {v} not in mesh"));
                }
                Ok(y.clone())
            }
            (BoundaryKind::Mesh(m), BoundaryPoint::Edge { edge, t }) => {
                if *edge >= m.edges.len() || !(0.0..=1.0).contains(t) {
                    return invalid(format!("edge position ({edge}, {t}) not in mesh"));
                }
                let (a, b) = m.edges[*edge];
                Ok(if *t <= EDGE_SNAP {
                    BoundaryPoint::Vertex(a)
                } else if *t >= 1.0 - EDGE_SNAP {
                    BoundaryPoint::Vertex(b)
                } else {
                    y.clone()
                })
            }
            _ => invalid(format!("point {y:?} is not on this boundary geometry")),
        }
    }

    fn check(&self, y: &BoundaryPoint) -> Result<()> {
        let ok = match (&self.kind, y) {
            (BoundaryKind::Circle { .. }, BoundaryPoint::Angle(a)) => a.is_finite(),
            (BoundaryKind::RoundSphere { dimension, .. }, BoundaryPoint::Sphere(u)) => u.len() == dimension + 1,
            (BoundaryKind::FlatTorus { periods }, BoundaryPoint::Torus(x)) => x.len() == periods.len(),
            (BoundaryKind::Mesh(m), BoundaryPoint::Vertex(v)) => *v < m.vertex_count(),
            (BoundaryKind::Mesh(m), BoundaryPoint::Edge { edge, t }) => {
                *edge < m.edges.len() && (0.0..=1.0).contains(t)
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("point {y:?} is not on this boundary geometry"))
        }
    }

    /// Geodesic distance `d_N(y, y')`.
    pub fn distance(&self, a: &BoundaryPoint, b: &BoundaryPoint) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.distance_unchecked(a, b))
    }

    pub(crate) fn distance_unchecked(&self, a: &BoundaryPoint, b: &BoundaryPoint) -> f64 {
        match (&self.kind, a, b) {
            (BoundaryKind::Circle { .. }, BoundaryPoint::Angle(x), BoundaryPoint::Angle(y)) => {
                self.circle_scale() * signed_angle(*x, *y).abs()
            }
            (BoundaryKind::RoundSphere { radius, .. }, BoundaryPoint::Sphere(u), BoundaryPoint::Sphere(v)) => {
                radius * sphere_angle(u, v)
            }
            (BoundaryKind::FlatTorus { periods }, BoundaryPoint::Torus(x), BoundaryPoint::Torus(y)) => {
                torus_delta(x, y, periods).iter().map(|d| d * d).sum::<f64>().sqrt()
            }
            (BoundaryKind::Mesh(m), _, _) => m.distance(a, b),
            _ => f64::NAN,
        }
    }

    /// Minimizing segment from `a` to `b`.
    pub fn segment(&self, a: &BoundaryPoint, b: &BoundaryPoint) -> Result<BoundarySegment> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.segment_unchecked(a, b))
    }

    pub(crate) fn segment_unchecked(&self, a: &BoundaryPoint, b: &BoundaryPoint) -> BoundarySegment {
        match (&self.kind, a, b) {
            (BoundaryKind::Circle { .. }, BoundaryPoint::Angle(x), BoundaryPoint::Angle(y)) => {
                let delta = signed_angle(*x, *y);
                BoundarySegment {
                    length: self.circle_scale() * delta.abs(),
                    kind: SegmentKind::Circle { theta0: *x, delta },
                }
            }
            (BoundaryKind::RoundSphere { radius, .. }, BoundaryPoint::Sphere(u), BoundaryPoint::Sphere(v)) => {
                let angle = sphere_angle(u, v);
                let c = dot(u, v);
                let mut w: Vec<f64> = v.iter().zip(u).map(|(vi, ui)| vi - c * ui).collect();
                let n = norm(&w);
                if n < 1e-14 {
                    w = sphere_frame(u).swap_remove(0);
                } else {
                    w.iter_mut().for_each(|x| *x /= n);
                }
                BoundarySegment {
                    length: radius * angle,
                    kind: SegmentKind::Sphere { u: u.clone(), w, angle },
                }
            }
            (BoundaryKind::FlatTorus { periods }, BoundaryPoint::Torus(x), BoundaryPoint::Torus(y)) => {
                let delta = torus_delta(x, y, periods);
                BoundarySegment {
                    length: norm(&delta),
                    kind: SegmentKind::Torus { x0: x.clone(), delta, periods: periods.clone() },
                }
            }
            (BoundaryKind::Mesh(m), _, _) => {
                let route = m.route(a, b);
                BoundarySegment {
                    length: route.last().map(|r| r.1).unwrap_or(0.0),
                    kind: SegmentKind::Mesh { route },
                }
            }
            _ => BoundarySegment { length: f64::NAN, kind: SegmentKind::Circle { theta0: 0.0, delta: 0.0 } },
        }
    }

    /// Discretized minimizing path with `steps` points including both ends.
    pub fn geodesic(&self, a: &BoundaryPoint, b: &BoundaryPoint, steps: usize) -> Result<Vec<BoundaryPoint>> {
        if steps < 2 {
            return invalid("geodesic needs at least 2 steps");
        }
        let a = self.normalize(a)?;
        let b = self.normalize(b)?;
        let seg = self.segment_unchecked(&a, &b);
        if !seg.length.is_finite() {
            return Err(GeomError::NoPath("boundary points are not connected".into()));
        }
        Ok((0..steps)
            .map(|k| {
                if k == 0 {
                    a.clone()
                } else if k == steps - 1 {
                    b.clone()
                } else {
                    self.segment_point(&seg, k as f64 / (steps - 1) as f64)
                }
            })
            .collect())
    }

    /// Point at parameter `t ∈ [0, 1]` along a segment.
    pub fn segment_point(&self, seg: &BoundarySegment, t: f64) -> BoundaryPoint {
        match &seg.kind {
            SegmentKind::Circle { theta0, delta } => BoundaryPoint::Angle(wrap_angle(theta0 + t * delta)),
            SegmentKind::Sphere { u, w, angle } => {
                let (s, c) = (t * angle).sin_cos();
                BoundaryPoint::Sphere(u.iter().zip(w).map(|(ui, wi)| c * ui + s * wi).collect())
            }
            SegmentKind::Torus { x0, delta, periods } => BoundaryPoint::Torus(
                x0.iter()
                    .zip(delta)
                    .zip(periods)
                    .map(|((x, d), p)| (x + t * d).rem_euclid(*p))
                    .collect(),
            ),
            SegmentKind::Mesh { route } => {
                let BoundaryKind::Mesh(m) = &self.kind else {
                    return route[0].0.clone();
                };
                let target = t * seg.length;
                for win in route.windows(2) {
                    let (ref p, s0) = win[0];
                    let (ref q, s1) = win[1];
                    if target <= s1 || std::ptr::eq(&win[1], route.last().unwrap()) {
                        let frac = if s1 > s0 { ((target - s0) / (s1 - s0)).clamp(0.0, 1.0) } else { 0.0 };
                        return m.point_between(p, q, frac);
                    }
                }
                route[0].0.clone()
            }
        }
    }

    /// Velocity of a segment at parameter `t`, as a tangent vector `ξ`.
    /// Its norm `|ξ|_{g_N}` equals the segment length.
    pub fn segment_velocity(&self, seg: &BoundarySegment, t: f64) -> Coords {
        match &seg.kind {
            SegmentKind::Circle { delta, .. } => smallvec::smallvec![*delta],
            SegmentKind::Sphere { u, w, angle } => {
                let (s, c) = (t * angle).sin_cos();
                u.iter().zip(w).map(|(ui, wi)| angle * (-s * ui + c * wi)).collect()
            }
            SegmentKind::Torus { delta, .. } => delta.iter().copied().collect(),
            SegmentKind::Mesh { .. } => smallvec::smallvec![seg.length],
        }
    }

    /// Squared norm `|ξ|²_{g_N}` of a tangent vector at `y`.
    pub fn tangent_norm_sq(&self, _y: &BoundaryPoint, xi: &[f64]) -> f64 {
        match &self.kind {
            BoundaryKind::Circle { .. } => {
                let s = self.circle_scale();
                s * s * xi[0] * xi[0]
            }
            BoundaryKind::RoundSphere { radius, .. } => radius * radius * dot(xi, xi),
            BoundaryKind::FlatTorus { .. } | BoundaryKind::Mesh(_) => dot(xi, xi),
        }
    }

    /// Moves `y` by a displacement expressed in length units along an
    /// orthonormal frame at `y`. Meshes do not move.
    pub fn displace(&self, y: &BoundaryPoint, v: &[f64]) -> BoundaryPoint {
        match (&self.kind, y) {
            (BoundaryKind::Circle { .. }, BoundaryPoint::Angle(a)) => {
                BoundaryPoint::Angle(wrap_angle(a + v[0] / self.circle_scale()))
            }
            (BoundaryKind::RoundSphere { radius, .. }, BoundaryPoint::Sphere(u)) => {
                let frame = sphere_frame(u);
                let mut w = vec![0.0; u.len()];
                for (e, c) in frame.iter().zip(v) {
                    for k in 0..u.len() {
                        w[k] += c * e[k];
                    }
                }
                let len = norm(&w);
                if len == 0.0 {
                    return y.clone();
                }
                let theta = len / radius;
                let (s, c) = theta.sin_cos();
                let p: Vec<f64> = u.iter().zip(&w).map(|(ui, wi)| c * ui + s * wi / len).collect();
                let n = norm(&p);
                BoundaryPoint::Sphere(p.into_iter().map(|x| x / n).collect())
            }
            (BoundaryKind::FlatTorus { periods }, BoundaryPoint::Torus(x)) => BoundaryPoint::Torus(
                x.iter().zip(v).zip(periods).map(|((c, d), p)| (c + d).rem_euclid(*p)).collect(),
            ),
            _ => y.clone(),
        }
    }

    /// Supremum of `d_N`; exact for the closed-form families and the maximum
    /// over vertex pairs for meshes.
    pub fn diameter(&self) -> f64 {
        match &self.kind {
            BoundaryKind::Circle { circumference } => circumference / 2.0,
            BoundaryKind::RoundSphere { radius, .. } => PI * radius,
            BoundaryKind::FlatTorus { periods } => periods.iter().map(|p| p * p / 4.0).sum::<f64>().sqrt(),
            BoundaryKind::Mesh(m) => m
                .all_pairs
                .iter()
                .flat_map(|row| row.iter().copied())
                .fold(0.0, f64::max),
        }
    }

    /// Sample points used for chart grids together with their neighbor lists.
    ///
    /// Circles get `n` equally spaced angles, tori an `n`-per-axis lattice,
    /// 2-spheres a Fibonacci lattice with 8 nearest neighbors and meshes
    /// their vertex set.
    pub fn samples(&self, n: usize) -> Result<(Vec<BoundaryPoint>, Vec<Vec<usize>>)> {
        match &self.kind {
            BoundaryKind::Circle { .. } => {
                if n < 3 {
                    return Err(GeomError::InvalidGrid("need at least 3 boundary samples".into()));
                }
                let pts = (0..n).map(|i| BoundaryPoint::Angle(TAU * i as f64 / n as f64)).collect();
                let nbrs = (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect();
                Ok((pts, nbrs))
            }
            BoundaryKind::RoundSphere { dimension: 1, .. } => {
                if n < 3 {
                    return Err(GeomError::InvalidGrid("need at least 3 boundary samples".into()));
                }
                let pts = (0..n)
                    .map(|i| {
                        let a = TAU * i as f64 / n as f64;
                        BoundaryPoint::Sphere(vec![a.cos(), a.sin()])
                    })
                    .collect();
                let nbrs = (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect();
                Ok((pts, nbrs))
            }
            BoundaryKind::RoundSphere { dimension: 2, .. } => {
                if n < 12 {
                    return Err(GeomError::InvalidGrid("need at least 12 samples on a 2-sphere".into()));
                }
                let golden = PI * (3.0 - 5f64.sqrt());
                let pts: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                        let rho = (1.0 - z * z).sqrt();
                        let phi = golden * i as f64;
                        vec![rho * phi.cos(), rho * phi.sin(), z]
                    })
                    .collect();
                let k = 8.min(n - 1);
                let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
                for i in 0..n {
                    let mut order: Vec<(f64, usize)> = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| (sphere_angle(&pts[i], &pts[j]), j))
                        .collect();
                    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    for &(_, j) in order.iter().take(k) {
                        if !nbrs[i].contains(&j) {
                            nbrs[i].push(j);
                        }
                        if !nbrs[j].contains(&i) {
                            nbrs[j].push(i);
                        }
                    }
                }
                for l in &mut nbrs {
                    l.sort_unstable();
                }
                Ok((pts.into_iter().map(BoundaryPoint::Sphere).collect(), nbrs))
            }
            BoundaryKind::RoundSphere { .. } => Err(GeomError::InvalidGrid(
                "grids over spheres are available for dimensions 1 and 2 only".into(),
            )),
            BoundaryKind::FlatTorus { periods } => {
                if n < 3 {
                    return Err(GeomError::InvalidGrid("need at least 3 samples per torus axis".into()));
                }
                let k = periods.len();
                let total = n.pow(k as u32);
                let index = |c: &[usize]| c.iter().fold(0, |acc, &ci| acc * n + ci);
                let mut pts = Vec::with_capacity(total);
                let mut nbrs = Vec::with_capacity(total);
                for flat in 0..total {
                    let mut c = vec![0usize; k];
                    let mut rem = flat;
                    for d in (0..k).rev() {
                        c[d] = rem % n;
                        rem /= n;
                    }
                    pts.push(BoundaryPoint::Torus(
                        c.iter().zip(periods).map(|(&ci, p)| p * ci as f64 / n as f64).collect(),
                    ));
                    let mut list = Vec::new();
                    for off in 0..3usize.pow(k as u32) {
                        let mut o = off;
                        let mut nc = c.clone();
                        let mut zero = true;
                        for d in (0..k).rev() {
                            let step = (o % 3) as isize - 1;
                            o /= 3;
                            if step != 0 {
                                zero = false;
                            }
                            nc[d] = ((c[d] as isize + step).rem_euclid(n as isize)) as usize;
                        }
                        if !zero {
                            let j = index(&nc);
                            if j != flat && !list.contains(&j) {
                                list.push(j);
                            }
                        }
                    }
                    list.sort_unstable();
                    nbrs.push(list);
                }
                Ok((pts, nbrs))
            }
            BoundaryKind::Mesh(m) => {
                let pts = (0..m.vertex_count()).map(BoundaryPoint::Vertex).collect();
                let mut nbrs = vec![Vec::new(); m.vertex_count()];
                for &(a, b) in &m.edges {
                    if !nbrs[a].contains(&b) {
                        nbrs[a].push(b);
                        nbrs[b].push(a);
                    }
                }
                for l in &mut nbrs {
                    l.sort_unstable();
                }
                Ok((pts, nbrs))
            }
        }
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> BoundaryPoint {
        match &self.kind {
            BoundaryKind::Circle { .. } => BoundaryPoint::Angle(rng.gen_range(0.0..TAU)),
            BoundaryKind::RoundSphere { dimension, .. } => loop {
                let v: Vec<f64> = (0..=*dimension).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let n = norm(&v);
                if n > 1e-9 {
                    break BoundaryPoint::Sphere(v.into_iter().map(|x| x / n).collect());
                }
            },
            BoundaryKind::FlatTorus { periods } => {
                BoundaryPoint::Torus(periods.iter().map(|p| rng.gen_range(0.0..*p)).collect())
            }
            BoundaryKind::Mesh(m) => BoundaryPoint::Vertex(rng.gen_range(0..m.vertex_count())),
        }
    }
}

impl BoundarySegment {
    /// `g_N` length of the segment, equal to `d_N` between its ends.
    pub fn length(&self) -> f64 {
        self.length
    }
}

fn torus_delta(x: &[f64], y: &[f64], periods: &[f64]) -> Vec<f64> {
    // minimum over the 3^k nearest lattice translates, taken axis by axis
    x.iter()
        .zip(y)
        .zip(periods)
        .map(|((a, b), p)| {
            let d = b - a;
            [d - p, d, d + p]
                .into_iter()
                .min_by(|u, v| u.abs().total_cmp(&v.abs()))
                .unwrap_or(d)
        })
        .collect()
}

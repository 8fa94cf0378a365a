//! Quotients by boundary collapse, the conic inversion and conic
//! completions.
//!
//! A quotient space is a finite family of charts whose collapsed faces are
//! identified with labelled apexes. Two points are joined either inside one
//! chart or by a chain of apexes; chains are resolved by Dijkstra on the
//! apex graph, seeded with the costs of reaching each apex from the start.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryPoint;
use crate::distance::{
    default_ac_grid, default_conic_grid, Bracket, DistanceEngine, DistanceOptions, GridDiscretization,
};
use crate::error::{invalid, GeomError, Result};
use crate::graph::GraphBuilder;
use crate::metric::{AcMetricSpec, ChartMetric, ChartPoint, ConicMetricSpec, EndPiece, GluedCylinder, Tangent};

/// A boundary face of a chart `N × [lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Face {
    Lower,
    Upper,
}

/// Charts a quotient space is built from.
#[derive(Debug, Clone)]
pub enum QuotientChart {
    Conic(ConicMetricSpec),
    Glued(GluedCylinder),
}

impl QuotientChart {
    pub fn metric(&self) -> Arc<dyn ChartMetric> {
        match self {
            QuotientChart::Conic(c) => Arc::new(c.clone()),
            QuotientChart::Glued(g) => Arc::new(g.clone()),
        }
    }

    /// Collapsed faces, each one a boundary component to be sent to an apex.
    pub fn components(&self) -> Vec<Face> {
        match self {
            QuotientChart::Conic(_) => vec![Face::Lower],
            QuotientChart::Glued(g) => {
                if g.collapsed_upper() {
                    vec![Face::Lower, Face::Upper]
                } else {
                    vec![Face::Lower]
                }
            }
        }
    }

    pub fn default_grid(&self) -> GridDiscretization {
        match self {
            QuotientChart::Conic(c) => default_conic_grid(c),
            QuotientChart::Glued(g) => {
                let n_y = if g.boundary().is_circle() { 96 } else { 200 };
                GridDiscretization::two_sided(40, n_y, 1e-3, true, g.collapsed_upper())
            }
        }
    }

    fn face_r(&self, face: Face) -> f64 {
        let (lo, hi) = match self {
            QuotientChart::Conic(c) => c.radial_domain(),
            QuotientChart::Glued(g) => g.radial_domain(),
        };
        match face {
            Face::Lower => lo,
            Face::Upper => hi,
        }
    }
}

/// Map from collapsed faces `(chart, face)` onto a finite set of apex labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCollapse {
    entries: BTreeMap<(usize, Face), usize>,
    labels: Vec<String>,
}

impl BoundaryCollapse {
    /// Labels are numbered in order of first appearance, so the map is
    /// surjective by construction.
    pub fn new<S: Into<String>>(triples: impl IntoIterator<Item = (usize, Face, S)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut labels: Vec<String> = Vec::new();
        for (chart, face, label) in triples {
            let label = label.into();
            if label.is_empty() {
                return invalid("empty apex label");
            }
            let idx = match labels.iter().position(|l| *l == label) {
                Some(i) => i,
                None => {
                    labels.push(label);
                    labels.len() - 1
                }
            };
            if entries.insert((chart, face), idx).is_some() {
                return invalid(format!("face {face:?} of chart {chart} is collapsed twice"));
            }
        }
        Ok(Self { entries, labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn apex_of(&self, chart: usize, face: Face) -> Option<usize> {
        self.entries.get(&(chart, face)).copied()
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| GeomError::InvalidInput(format!("unknown apex label {label:?}")))
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, Face, &str)> + '_ {
        self.entries.iter().map(|(&(c, f), &i)| (c, f, self.labels[i].as_str()))
    }

    fn with_entry(&self, chart: usize, face: Face, label: &str) -> Result<Self> {
        let mut triples: Vec<(usize, Face, String)> =
            self.entries().map(|(c, f, l)| (c, f, l.to_string())).collect();
        triples.push((chart, face, label.to_string()));
        Self::new(triples)
    }
}

/// A point of a quotient space.
#[derive(Debug, Clone, PartialEq)]
pub enum QuotientPoint {
    Chart { chart: usize, point: ChartPoint },
    Apex(String),
}

impl QuotientPoint {
    pub fn chart(chart: usize, point: ChartPoint) -> Self {
        QuotientPoint::Chart { chart, point }
    }

    pub fn apex(label: impl Into<String>) -> Self {
        QuotientPoint::Apex(label.into())
    }
}

impl std::fmt::Display for QuotientPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuotientPoint::Chart { chart, point } => write!(f, "chart {chart} ({}, {})", point.y, point.r),
            QuotientPoint::Apex(l) => write!(f, "apex {l}"),
        }
    }
}

/// Charts with their distance engines and the collapse identifying faces.
pub struct QuotientSpace {
    charts: Vec<QuotientChart>,
    engines: Vec<DistanceEngine>,
    collapse: BoundaryCollapse,
    opts: DistanceOptions,
    /// Apex-to-apex distances inside single charts; infinity when no chart
    /// touches both.
    weights: Vec<Vec<f64>>,
}

impl std::fmt::Debug for QuotientSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuotientSpace")
            .field("charts", &self.charts.len())
            .field("apexes", &self.collapse.labels)
            .finish()
    }
}

impl QuotientSpace {
    pub fn new(charts: Vec<QuotientChart>, collapse: BoundaryCollapse, opts: DistanceOptions) -> Result<Self> {
        let grids = charts.iter().map(QuotientChart::default_grid).collect();
        Self::with_grids(charts, grids, collapse, opts)
    }

    pub fn with_grids(
        charts: Vec<QuotientChart>,
        grids: Vec<GridDiscretization>,
        collapse: BoundaryCollapse,
        opts: DistanceOptions,
    ) -> Result<Self> {
        if charts.is_empty() {
            return invalid("a quotient space needs at least one chart");
        }
        if grids.len() != charts.len() {
            return invalid(format!("{} grids for {} charts", grids.len(), charts.len()));
        }
        for (c, f, _) in collapse.entries() {
            let Some(chart) = charts.get(c) else {
                return invalid(format!("collapse refers to chart {c}, only {} given", charts.len()));
            };
            if !chart.components().contains(&f) {
                return invalid(format!("face {f:?} of chart {c} is not a collapsible boundary component"));
            }
        }
        for (c, chart) in charts.iter().enumerate() {
            for f in chart.components() {
                if collapse.apex_of(c, f).is_none() {
                    return invalid(format!("face {f:?} of chart {c} is not mapped to an apex"));
                }
            }
        }
        let engines = charts
            .par_iter()
            .zip(grids.into_par_iter())
            .map(|(c, g)| DistanceEngine::new(c.metric(), g))
            .collect::<Result<Vec<_>>>()?;
        let n = collapse.labels.len();
        let mut space = Self { charts, engines, collapse, opts, weights: vec![vec![f64::INFINITY; n]; n] };
        for c in 0..space.charts.len() {
            let faces = space.charts[c].components();
            for (i, &fa) in faces.iter().enumerate() {
                for &fb in &faces[i + 1..] {
                    let (p, q) = (space.apex(c, fa), space.apex(c, fb));
                    if p == q {
                        continue;
                    }
                    let y = space.engines[c].samples()[0].clone();
                    let a = ChartPoint::new(y.clone(), space.charts[c].face_r(fa));
                    let b = ChartPoint::new(y, space.charts[c].face_r(fb));
                    let d = space.engines[c].distance(&a, &b, &space.opts)?.value;
                    let w = space.weights[p][q].min(d);
                    space.weights[p][q] = w;
                    space.weights[q][p] = w;
                }
            }
        }
        for p in 0..n {
            space.weights[p][p] = 0.0;
        }
        Ok(space)
    }

    pub fn charts(&self) -> &[QuotientChart] {
        &self.charts
    }

    pub fn engine(&self, chart: usize) -> &DistanceEngine {
        &self.engines[chart]
    }

    pub fn collapse(&self) -> &BoundaryCollapse {
        &self.collapse
    }

    pub fn labels(&self) -> &[String] {
        &self.collapse.labels
    }

    pub fn options(&self) -> &DistanceOptions {
        &self.opts
    }

    /// Apex-to-apex distances realized inside a single chart.
    pub fn apex_weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    fn apex(&self, chart: usize, face: Face) -> usize {
        self.collapse.apex_of(chart, face).expect("validated at construction")
    }

    fn check(&self, x: &QuotientPoint) -> Result<()> {
        match x {
            QuotientPoint::Chart { chart, point } => {
                let Some(e) = self.engines.get(*chart) else {
                    return invalid(format!("unknown chart {chart}"));
                };
                e.metric().boundary().normalize(&point.y)?;
                e.metric().check_point(point)
            }
            QuotientPoint::Apex(l) => self.collapse.label_index(l).map(|_| ()),
        }
    }

    /// Distance inside one chart.
    pub fn chart_distance(&self, chart: usize, a: &ChartPoint, b: &ChartPoint) -> Result<f64> {
        Ok(self.engines[chart].distance(a, b, &self.opts)?.value)
    }

    /// Cost of reaching every apex directly from `x`, indexed by label.
    pub fn apex_costs(&self, x: &QuotientPoint) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut cost = vec![f64::INFINITY; self.collapse.labels.len()];
        match x {
            QuotientPoint::Apex(l) => cost[self.collapse.label_index(l)?] = 0.0,
            QuotientPoint::Chart { chart, point } => {
                for f in self.charts[*chart].components() {
                    let p = self.apex(*chart, f);
                    let face = ChartPoint::new(point.y.clone(), self.charts[*chart].face_r(f));
                    let d = self.chart_distance(*chart, point, &face)?;
                    cost[p] = cost[p].min(d);
                }
            }
        }
        Ok(cost)
    }

    /// The quotient distance: direct chart distance when both points share
    /// a chart, otherwise the best chain of apexes.
    pub fn distance(&self, x: &QuotientPoint, x2: &QuotientPoint) -> Result<f64> {
        let entry = self.apex_costs(x)?;
        let exit = self.apex_costs(x2)?;
        let mut best = resolve_chains(&self.weights, &entry, &exit);
        match (x, x2) {
            (QuotientPoint::Chart { chart: c, point: a }, QuotientPoint::Chart { chart: c2, point: b }) if c == c2 => {
                best = best.min(self.chart_distance(*c, a, b)?);
            }
            (QuotientPoint::Apex(a), QuotientPoint::Apex(b)) if a == b => best = 0.0,
            _ => {}
        }
        Ok(best)
    }

    /// Distance from `x` to the nearest apex among `labels`.
    pub fn distance_to_apexes(&self, x: &QuotientPoint, labels: &[String]) -> Result<f64> {
        let mut best = f64::INFINITY;
        for l in labels {
            best = best.min(self.distance(x, &QuotientPoint::Apex(l.clone()))?);
        }
        Ok(best)
    }
}

/// `min_{p,q} entry[p] + chain(p → q) + exit[q]` over apex chains with
/// single-chart hops `weights`, summed left to right along the chain.
pub fn resolve_chains(weights: &[Vec<f64>], entry: &[f64], exit: &[f64]) -> f64 {
    let n = entry.len();
    let mut b = GraphBuilder::new(n);
    for p in 0..n {
        for q in p + 1..n {
            let w = weights[p][q].min(weights[q][p]);
            if w.is_finite() {
                b.add_edge(p, q, w);
            }
        }
    }
    let seeds: Vec<(usize, f64)> = entry.iter().enumerate().filter(|e| e.1.is_finite()).map(|(p, &c)| (p, c)).collect();
    let sp = b.build().dijkstra_seeded(&seeds, None);
    (0..n).map(|q| sp.dist[q] + exit[q]).fold(f64::INFINITY, f64::min)
}

/// Quotient distance between two points of `q`.
pub fn quotient_distance(q: &QuotientSpace, x: &QuotientPoint, x2: &QuotientPoint) -> Result<f64> {
    q.distance(x, x2)
}

/// `(y, r) ↦ (y, 1/r)`. IEEE reciprocals are involutive up to one unit in
/// the last place.
pub fn conic_inversion(x: &ChartPoint) -> Result<ChartPoint> {
    if x.r == 0.0 {
        return Err(GeomError::SingularEvaluation("the inversion is undefined at r = 0".into()));
    }
    if !(x.r > 0.0) || !x.r.is_finite() {
        return Err(GeomError::Domain(format!("inversion needs 0 < r < ∞, got {}", x.r)));
    }
    Ok(ChartPoint::new(x.y.clone(), 1.0 / x.r))
}

/// Squared norm of `g^∞ = dR² + R² s(1/R) g_N` at `(y, R)` for the
/// tangent `(ξ, dR)`, with `s` the scale of `spec`.
pub fn infinity_model_norm_sq(spec: &ConicMetricSpec, y: &BoundaryPoint, big_r: f64, xi: &[f64], d_big_r: f64) -> f64 {
    let tan = if xi.is_empty() { 0.0 } else { spec.boundary().tangent_norm_sq(y, xi) };
    d_big_r * d_big_r + big_r * big_r * spec.scale(1.0 / big_r) * tan
}

/// Largest relative gap between `r⁻⁴ g⁰` at `(y, r)` and `(ι⁰)^* g^∞`,
/// i.e. `g^∞` at `(y, 1/r)` on the pushed tangent `(ξ, −λ/r²)`.
pub fn gluing_identity_gap(spec: &ConicMetricSpec, samples: &[(ChartPoint, Tangent)]) -> Result<f64> {
    let ac = AcMetricSpec::new(spec.clone());
    let mut worst: f64 = 0.0;
    for (p, v) in samples {
        let lhs = ac.norm_sq(p, v)?;
        let inv = conic_inversion(p)?;
        let rhs = infinity_model_norm_sq(spec, &inv.y, inv.r, &v.xi, -v.lambda / (p.r * p.r));
        let scale = lhs.abs().max(rhs.abs());
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    Ok(worst)
}

/// Where a sample pair of a duality sweep sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairClass {
    Core,
    End,
    Mixed,
}

impl PairClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PairClass::Core => "core",
            PairClass::End => "end",
            PairClass::Mixed => "mixed",
        }
    }
}

/// One row of a duality sweep: `ratio = weight · numerator / denominator`.
#[derive(Debug, Clone, Serialize)]
pub struct DualityRow {
    pub a: String,
    pub b: String,
    pub class: PairClass,
    /// `d⁰` or `d̄`.
    pub reference: f64,
    /// `d^∞` or `d`.
    pub measured: f64,
    /// `r · r'`.
    pub weight: f64,
    pub ratio: f64,
}

/// Rows of a duality sweep with the bracket of their ratios.
#[derive(Debug, Clone, Serialize)]
pub struct DualityReport {
    pub rows: Vec<DualityRow>,
    pub bracket: Bracket,
    pub by_class: BTreeMap<PairClass, Bracket>,
}

impl DualityReport {
    fn from_rows(rows: Vec<DualityRow>) -> Self {
        let bracket = Bracket::from_values(rows.iter().map(|r| r.ratio));
        let mut by_class: BTreeMap<PairClass, Bracket> = BTreeMap::new();
        for r in &rows {
            by_class.entry(r.class).or_default().push(r.ratio);
        }
        Self { rows, bracket, by_class }
    }

    /// CSV with columns `a,b,class,reference,measured,weight,ratio`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["a", "b", "class", "reference", "measured", "weight", "ratio"])?;
        for r in &self.rows {
            out.write_record([
                r.a.clone(),
                r.b.clone(),
                r.class.as_str().to_string(),
                format!("{:.12e}", r.reference),
                format!("{:.12e}", r.measured),
                format!("{:.12e}", r.weight),
                format!("{:.12e}", r.ratio),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `r r' (|R − R'| + min(R, R') d_N) / (|r − r'| + min(r, r') d_N)` with
/// `R = 1/r`: the ratio under the collar approximations of both distances.
pub fn simplified_inversion_ratio(r: f64, r2: f64, d_n: f64) -> f64 {
    let (big, big2) = (1.0 / r, 1.0 / r2);
    let d_inf = (big - big2).abs() + big.min(big2) * d_n;
    let d0 = (r - r2).abs() + r.min(r2) * d_n;
    r * r2 * d_inf / d0
}

/// Bracket of `r r' d^∞ / d⁰` over `pairs`, with `d⁰` the conic distance of
/// `spec` and `d^∞` the distance of `r⁻⁴ g⁰` on the same chart.
pub fn inversion_duality_check(
    spec: &ConicMetricSpec,
    pairs: &[(ChartPoint, ChartPoint)],
    opts: &DistanceOptions,
) -> Result<DualityReport> {
    let conic = DistanceEngine::new(Arc::new(spec.clone()), default_conic_grid(spec))?;
    let ac_spec = AcMetricSpec::new(spec.clone());
    let ac = DistanceEngine::new(Arc::new(ac_spec.clone()), default_ac_grid(&ac_spec))?;
    let rows = pairs
        .par_iter()
        .map(|(a, b)| {
            if a == b {
                return invalid(format!("pair ({}, {}) repeats a point", a.y, a.r));
            }
            if !(a.r > 0.0 && b.r > 0.0) {
                return invalid("duality pairs need r, r' > 0");
            }
            let d0 = conic.distance(a, b, opts)?.value;
            let d_inf = ac.distance(a, b, opts)?.value;
            let weight = a.r * b.r;
            Ok(DualityRow {
                a: format!("{} {}", a.y, a.r),
                b: format!("{} {}", b.y, b.r),
                class: PairClass::Core,
                reference: d0,
                measured: d_inf,
                weight,
                ratio: weight * d_inf / d0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DualityReport::from_rows(rows))
}

/// A space with asymptotically conic ends and its conic completion, which
/// shares its charts except that each end is read through the inversion as
/// a conic chart whose apex is adjoined at infinity.
#[derive(Debug)]
pub struct CompletionSpec {
    pub space: QuotientSpace,
    pub completion: QuotientSpace,
    pub infinity: Vec<String>,
}

impl CompletionSpec {
    /// Completion point of a point of the space; charts share coordinates.
    pub fn embed(&self, x: &QuotientPoint) -> QuotientPoint {
        x.clone()
    }

    /// Whether a point of the space lies in the compact core.
    pub fn in_core(&self, x: &QuotientPoint) -> bool {
        match x {
            QuotientPoint::Chart { chart, point } => match &self.space.charts[*chart] {
                QuotientChart::Glued(g) => !matches!(g.end(), EndPiece::Ac(_)) || point.r <= 1.0,
                QuotientChart::Conic(_) => true,
            },
            QuotientPoint::Apex(_) => true,
        }
    }
}

/// Completes every asymptotically conic end of `space` with an apex
/// labelled `inf-<chart>`.
pub fn build_completion(space: QuotientSpace) -> Result<CompletionSpec> {
    let mut charts = space.charts.clone();
    let mut collapse = space.collapse.clone();
    let mut infinity = Vec::new();
    for (c, chart) in charts.iter_mut().enumerate() {
        if let QuotientChart::Glued(g) = chart {
            if let EndPiece::Ac(a) = g.end() {
                let done = GluedCylinder::new(g.core().clone(), EndPiece::Conic(a.base().clone()))?;
                *chart = QuotientChart::Glued(done);
                let label = format!("inf-{c}");
                collapse = collapse.with_entry(c, Face::Upper, &label)?;
                infinity.push(label);
            }
        }
    }
    if infinity.is_empty() {
        return invalid("the space has no asymptotically conic end to complete");
    }
    let grids = charts.iter().map(QuotientChart::default_grid).collect();
    let completion = QuotientSpace::with_grids(charts, grids, collapse, space.opts)?;
    Ok(CompletionSpec { space, completion, infinity })
}

/// Bracket of `r r' d / d̄` with `r = d̄(x, ∞_E)`, over pairs of points of
/// the space.
pub fn completion_duality_check(c: &CompletionSpec, pairs: &[(QuotientPoint, QuotientPoint)]) -> Result<DualityReport> {
    let rows = pairs
        .par_iter()
        .map(|(a, b)| {
            if a == b {
                return invalid(format!("pair {a} repeats a point"));
            }
            if matches!(a, QuotientPoint::Apex(_)) || matches!(b, QuotientPoint::Apex(_)) {
                return invalid("duality pairs must avoid apexes");
            }
            let (ea, eb) = (c.embed(a), c.embed(b));
            let d = c.space.distance(a, b)?;
            let d_bar = c.completion.distance(&ea, &eb)?;
            let ra = c.completion.distance_to_apexes(&ea, &c.infinity)?;
            let rb = c.completion.distance_to_apexes(&eb, &c.infinity)?;
            let class = match (c.in_core(a), c.in_core(b)) {
                (true, true) => PairClass::Core,
                (false, false) => PairClass::End,
                _ => PairClass::Mixed,
            };
            Ok(DualityRow {
                a: a.to_string(),
                b: b.to_string(),
                class,
                reference: d_bar,
                measured: d,
                weight: ra * rb,
                ratio: ra * rb * d / d_bar,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DualityReport::from_rows(rows))
}

/// The Euclidean plane as a glued cylinder: the blow-up chart of the unit
/// disk joined at `|x| = 1` to the chart at infinity. Its one end is an
/// E-end, the origin apex is labelled `o`.
pub fn euclidean_plane(opts: DistanceOptions) -> Result<QuotientSpace> {
    let core = crate::metric::blowup_pullback_euclidean(2)?;
    let end = crate::metric::infinity_pullback_euclidean(2)?;
    let chart = QuotientChart::Glued(GluedCylinder::new(core, EndPiece::Ac(end))?);
    QuotientSpace::new(vec![chart], BoundaryCollapse::new([(0, Face::Lower, "o")])?, opts)
}

/// Chart coordinate `s` of a plane point at Euclidean radius `rho`.
pub fn plane_s(rho: f64) -> f64 {
    if rho <= 1.0 {
        GluedCylinder::from_core(rho)
    } else {
        GluedCylinder::from_end(1.0 / rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::blowup_pullback_euclidean;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cone() -> QuotientChart {
        QuotientChart::Conic(blowup_pullback_euclidean(2).unwrap())
    }

    fn bicone() -> QuotientChart {
        let c = blowup_pullback_euclidean(2).unwrap();
        QuotientChart::Glued(GluedCylinder::new(c.clone(), EndPiece::Conic(c)).unwrap())
    }

    fn brute_force(weights: &[Vec<f64>], entry: &[f64], exit: &[f64]) -> f64 {
        fn rec(cur: usize, acc: f64, seen: &mut Vec<bool>, w: &[Vec<f64>], exit: &[f64], best: &mut f64) {
            *best = best.min(acc + exit[cur]);
            for next in 0..w.len() {
                if !seen[next] && w[cur][next].is_finite() {
                    seen[next] = true;
                    rec(next, acc + w[cur][next], seen, w, exit, best);
                    seen[next] = false;
                }
            }
        }
        let n = entry.len();
        let mut best = f64::INFINITY;
        for p in 0..n {
            if entry[p].is_finite() {
                let mut seen = vec![false; n];
                seen[p] = true;
                rec(p, entry[p], &mut seen, weights, exit, &mut best);
            }
        }
        best
    }

    #[test]
    fn single_apex_distance_is_height() {
        let q = QuotientSpace::new(vec![cone()], BoundaryCollapse::new([(0, Face::Lower, "a")]).unwrap(), Default::default())
            .unwrap();
        let x = QuotientPoint::chart(0, ChartPoint::polar(1.3, 0.42));
        assert_eq!(q.distance(&x, &QuotientPoint::apex("a")).unwrap(), 0.42);
    }

    #[test]
    fn two_cones_at_one_apex_add_heights() {
        let collapse = BoundaryCollapse::new([(0, Face::Lower, "a"), (1, Face::Lower, "a")]).unwrap();
        let q = QuotientSpace::new(vec![cone(), cone()], collapse, Default::default()).unwrap();
        let x = QuotientPoint::chart(0, ChartPoint::polar(0.2, 0.3));
        let x2 = QuotientPoint::chart(1, ChartPoint::polar(0.2, 0.55));
        assert_eq!(q.distance(&x, &x2).unwrap(), 0.3 + 0.55);
    }

    #[test]
    fn disconnected_charts_are_infinitely_far() {
        let collapse = BoundaryCollapse::new([(0, Face::Lower, "a"), (1, Face::Lower, "b")]).unwrap();
        let q = QuotientSpace::new(vec![cone(), cone()], collapse, Default::default()).unwrap();
        let x = QuotientPoint::chart(0, ChartPoint::polar(0.2, 0.3));
        let x2 = QuotientPoint::chart(1, ChartPoint::polar(0.2, 0.55));
        assert_eq!(q.distance(&x, &x2).unwrap(), f64::INFINITY);
    }

    #[test]
    fn collapse_validation() {
        assert!(BoundaryCollapse::new([(0, Face::Lower, "a"), (0, Face::Lower, "b")]).is_err());
        let unmapped = BoundaryCollapse::new([(0, Face::Lower, "a")]).unwrap();
        assert!(QuotientSpace::new(vec![bicone()], unmapped, Default::default()).is_err());
        let bad_face = BoundaryCollapse::new([(0, Face::Lower, "a"), (0, Face::Upper, "b")]).unwrap();
        assert!(QuotientSpace::new(vec![cone()], bad_face, Default::default()).is_err());
        let q = QuotientSpace::new(vec![cone()], BoundaryCollapse::new([(0, Face::Lower, "a")]).unwrap(), Default::default())
            .unwrap();
        assert!(matches!(
            q.distance(&QuotientPoint::apex("zz"), &QuotientPoint::apex("a")),
            Err(GeomError::InvalidInput(_))
        ));
    }

    #[test]
    fn three_apex_chain_matches_enumeration() {
        // a - b - c joined by bicones, a cone hanging at a and one at c
        let charts = vec![bicone(), bicone(), cone(), cone()];
        let collapse = BoundaryCollapse::new([
            (0, Face::Lower, "a"),
            (0, Face::Upper, "b"),
            (1, Face::Lower, "b"),
            (1, Face::Upper, "c"),
            (2, Face::Lower, "a"),
            (3, Face::Lower, "c"),
        ])
        .unwrap();
        let q = QuotientSpace::new(charts, collapse, Default::default()).unwrap();
        let w = q.apex_weights();
        assert_abs_diff_eq!(w[0][1], 2.0, epsilon = 1e-6);
        assert_eq!(w[0][2], f64::INFINITY);
        let x = QuotientPoint::chart(2, ChartPoint::polar(0.0, 0.25));
        let x2 = QuotientPoint::chart(3, ChartPoint::polar(1.0, 0.6));
        let entry = q.apex_costs(&x).unwrap();
        let exit = q.apex_costs(&x2).unwrap();
        let d = q.distance(&x, &x2).unwrap();
        assert_eq!(d, brute_force(w, &entry, &exit));
        assert_abs_diff_eq!(d, 0.25 + w[0][1] + w[1][2] + 0.6, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn chains_match_enumeration(
            n in 1usize..=5,
            raw in proptest::collection::vec(0.0f64..3.0, 25),
            mask in proptest::collection::vec(any::<bool>(), 25),
            ends in proptest::collection::vec(0.0f64..2.0, 10),
            ends_mask in proptest::collection::vec(any::<bool>(), 10),
        ) {
            let mut w = vec![vec![f64::INFINITY; n]; n];
            for p in 0..n {
                w[p][p] = 0.0;
                for q in p + 1..n {
                    if mask[p * 5 + q] {
                        w[p][q] = raw[p * 5 + q];
                        w[q][p] = raw[p * 5 + q];
                    }
                }
            }
            let entry: Vec<f64> = (0..n).map(|p| if ends_mask[p] { ends[p] } else { f64::INFINITY }).collect();
            let exit: Vec<f64> = (0..n).map(|p| if ends_mask[5 + p] { ends[5 + p] } else { f64::INFINITY }).collect();
            prop_assert_eq!(resolve_chains(&w, &entry, &exit), brute_force(&w, &entry, &exit));
        }
    }

    #[test]
    fn inversion_examples() {
        let p = ChartPoint::polar(0.7, 1.0);
        assert_eq!(conic_inversion(&p).unwrap(), p);
        assert_eq!(conic_inversion(&ChartPoint::polar(0.7, 2.0)).unwrap().r, 0.5);
        assert!(matches!(conic_inversion(&ChartPoint::polar(0.7, 0.0)), Err(GeomError::SingularEvaluation(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = ChartPoint::polar(rng.gen_range(0.0..6.0), rng.gen_range(0.01..10.0));
            let back = conic_inversion(&conic_inversion(&x).unwrap()).unwrap();
            assert_eq!(back.y, x.y);
            assert!((back.r - x.r).abs() <= f64::EPSILON * x.r);
        }
    }

    #[test]
    fn simplified_ratio_is_one() {
        // r r' min(1/r, 1/r') = min(r, r'), so both collar forms agree
        for i in 0..40 {
            for j in 0..40 {
                for k in 0..=8 {
                    let r = 0.25 * 16f64.powf(i as f64 / 39.0);
                    let r2 = 0.25 * 16f64.powf(j as f64 / 39.0);
                    let d_n = std::f64::consts::PI * k as f64 / 8.0;
                    if i == j && k == 0 {
                        continue;
                    }
                    assert_abs_diff_eq!(simplified_inversion_ratio(r, r2, d_n), 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn gluing_identity_holds() {
        let spec = blowup_pullback_euclidean(2).unwrap().with_height(4.0).unwrap();
        let samples: Vec<(ChartPoint, Tangent)> = (1..100)
            .map(|k| {
                let r = 0.04 * k as f64;
                (ChartPoint::polar(0.1 * k as f64, r), Tangent::new(&[(k as f64).sin()], (k as f64).cos()))
            })
            .collect();
        assert!(gluing_identity_gap(&spec, &samples).unwrap() < 1e-12);
    }

    #[test]
    fn completed_plane_has_two_apexes_at_distance_two() {
        let c = build_completion(euclidean_plane(Default::default()).unwrap()).unwrap();
        assert_eq!(c.infinity, vec!["inf-0".to_string()]);
        let d = c.completion.distance(&QuotientPoint::apex("o"), &QuotientPoint::apex("inf-0")).unwrap();
        assert_abs_diff_eq!(d, 2.0, epsilon = 1e-6);
        let x = QuotientPoint::chart(0, ChartPoint::polar(0.3, plane_s(4.0)));
        let r = c.completion.distance_to_apexes(&x, &c.infinity).unwrap();
        assert_abs_diff_eq!(r, 0.25, epsilon = 1e-6);
        assert!(build_completion(
            QuotientSpace::new(vec![cone()], BoundaryCollapse::new([(0, Face::Lower, "a")]).unwrap(), Default::default())
                .unwrap()
        )
        .is_err());
    }

    #[test]
    fn plane_distance_matches_euclid() {
        let q = euclidean_plane(Default::default()).unwrap();
        let cases = [(0.3, 0.5, 2.0, 0.8), (0.0, 0.6, 1.2, 3.0), (0.5, 2.0, 2.5, 5.0)];
        for (t, rho, t2, rho2) in cases {
            let a = QuotientPoint::chart(0, ChartPoint::polar(t, plane_s(rho)));
            let b = QuotientPoint::chart(0, ChartPoint::polar(t2, plane_s(rho2)));
            let exact = ((rho * t.cos() - rho2 * t2.cos()).powi(2) + (rho * t.sin() - rho2 * t2.sin()).powi(2)).sqrt();
            let d = q.distance(&a, &b).unwrap();
            assert!((d - exact).abs() < 5e-3 * exact, "{d} vs {exact}");
        }
    }

    #[test]
    fn radial_inversion_ratio_is_one() {
        let spec = blowup_pullback_euclidean(2).unwrap().with_height(4.0).unwrap();
        let pairs = vec![(ChartPoint::polar(0.4, 0.5), ChartPoint::polar(0.4, 2.0))];
        let rep = inversion_duality_check(&spec, &pairs, &Default::default()).unwrap();
        assert_abs_diff_eq!(rep.rows[0].ratio, 1.0, epsilon = 1e-6);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("a,b,class,reference,measured,weight,ratio\n"));
    }
}

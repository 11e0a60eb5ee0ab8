//! Template polytopes `P(y) = {x : Yx ≤ y}`, vertex lists, and the geometric
//! primitives used throughout: support, containment, Hausdorff distance,
//! centroid, diameter and vertex enumeration.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_check, Error, Result};
use crate::linalg;
use crate::qp::{self, Settings, SparseMatrix, Status, INF};

/// Absolute tolerance on facet residuals for feasibility and containment.
pub const FEAS_TOL: f64 = 1e-8;
/// Distance under which two vertices are considered equal.
pub const DEDUP_TOL: f64 = 1e-7;

/// `P(y) = {x : Yx ≤ y}` for a shared facet matrix `Y`.
///
/// A polytope is *configured* when it was created through a template family
/// whose cone contains `y`; then its vertices are `Λ_i y`.
#[derive(Debug, Clone)]
pub struct TemplatePolytope {
    facets: Arc<DMatrix<f64>>,
    pub y: DVector<f64>,
    vertex_maps: Option<Arc<Vec<DMatrix<f64>>>>,
    empty: bool,
}

impl TemplatePolytope {
    pub fn new(facets: Arc<DMatrix<f64>>, y: DVector<f64>) -> Result<Self> {
        dim_check(facets.nrows() == y.len(), || {
            format!("{} facets but parameter of length {}", facets.nrows(), y.len())
        })?;
        Ok(TemplatePolytope { facets, y, vertex_maps: None, empty: false })
    }

    /// A polytope whose vertices are given by `maps[i]·y`. The caller guarantees
    /// that `y` lies in the configuration cone.
    pub fn configured(
        facets: Arc<DMatrix<f64>>,
        maps: Arc<Vec<DMatrix<f64>>>,
        y: DVector<f64>,
    ) -> Result<Self> {
        let mut p = TemplatePolytope::new(facets, y)?;
        p.vertex_maps = Some(maps);
        Ok(p)
    }

    /// The empty set in the template's ambient space.
    pub fn empty(facets: Arc<DMatrix<f64>>) -> Self {
        let m = facets.nrows();
        TemplatePolytope { facets, y: DVector::zeros(m), vertex_maps: None, empty: true }
    }

    pub fn facets(&self) -> &DMatrix<f64> {
        &self.facets
    }

    pub fn facets_arc(&self) -> &Arc<DMatrix<f64>> {
        &self.facets
    }

    pub fn dim(&self) -> usize {
        self.facets.ncols()
    }

    pub fn is_configured(&self) -> bool {
        self.vertex_maps.is_some()
    }

    pub fn is_flagged_empty(&self) -> bool {
        self.empty
    }

    /// Vertex candidates `Λ_i y` of a configured polytope (may contain duplicates).
    pub fn mapped_vertices(&self) -> Option<Vec<DVector<f64>>> {
        self.vertex_maps.as_ref().map(|maps| maps.iter().map(|l| l * &self.y).collect())
    }

    /// `P(y) + a = P(y + Ya)`.
    pub fn translate(&self, a: &DVector<f64>) -> TemplatePolytope {
        let mut p = self.clone();
        if !self.empty {
            p.y = &self.y + &*self.facets * a;
        }
        p
    }

    pub fn contains_point(&self, x: &DVector<f64>, tol: f64) -> bool {
        !self.empty && (&*self.facets * x - &self.y).iter().all(|&r| r <= tol)
    }

    /// Checks nonemptiness with an LP.
    pub fn is_empty(&self) -> Result<bool> {
        if self.empty {
            return Ok(true);
        }
        if self.is_configured() {
            return Ok(false);
        }
        let n = self.dim();
        let m = SparseMatrix::from_dense(&self.facets);
        let lo = vec![-INF; self.facets.nrows()];
        let r = qp::solve_lp(&vec![0.0; n], &m, &lo, self.y.as_slice(), &Settings::geometry())?;
        match r.status {
            Status::PrimalInfeasible => Ok(true),
            s if s.is_optimal() => Ok(false),
            s => Err(Error::Numerical(format!("feasibility LP ended with {s:?}"))),
        }
    }
}

/// Convex hull of a finite point list; the empty list is the empty set.
#[derive(Debug, Clone, PartialEq)]
pub struct VPolytope {
    dim: usize,
    pub vertices: Vec<DVector<f64>>,
}

impl VPolytope {
    pub fn new(dim: usize, vertices: Vec<DVector<f64>>) -> Result<Self> {
        if let Some(v) = vertices.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch(format!("vertex of length {} in dimension {dim}", v.len())));
        }
        Ok(VPolytope { dim, vertices })
    }

    pub fn from_points(points: Vec<DVector<f64>>) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).ok_or(Error::EmptyPolytope)?;
        VPolytope::new(dim, points)
    }

    pub fn empty(dim: usize) -> Self {
        VPolytope { dim, vertices: Vec::new() }
    }

    /// The box `[lo, hi]` as its corner list.
    pub fn axis_box(lo: &[f64], hi: &[f64]) -> Self {
        let n = lo.len();
        let mut verts = Vec::with_capacity(1 << n);
        for mask in 0..(1usize << n) {
            verts.push(DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }));
        }
        VPolytope { dim: n, vertices: verts }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn translate(&self, a: &DVector<f64>) -> VPolytope {
        VPolytope { dim: self.dim, vertices: self.vertices.iter().map(|v| v + a).collect() }
    }

    pub fn affine_map(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> VPolytope {
        VPolytope { dim: a.nrows(), vertices: self.vertices.iter().map(|v| a * v + b).collect() }
    }

    /// Minkowski sum as the list of pairwise vertex sums.
    pub fn minkowski_sum(&self, other: &VPolytope) -> VPolytope {
        let mut verts = Vec::with_capacity(self.vertices.len() * other.vertices.len());
        for a in &self.vertices {
            for b in &other.vertices {
                verts.push(a + b);
            }
        }
        VPolytope { dim: self.dim, vertices: verts }.deduplicated()
    }

    pub fn deduplicated(&self) -> VPolytope {
        VPolytope { dim: self.dim, vertices: dedup_points(&self.vertices, DEDUP_TOL) }
    }

    /// Removes non-extreme points (exact in 2D; deduplication otherwise).
    pub fn reduced(&self) -> VPolytope {
        if self.dim == 2 && self.vertices.len() > 2 {
            VPolytope { dim: 2, vertices: convex_hull_2d(&self.vertices) }
        } else {
            self.deduplicated()
        }
    }

    pub fn support(&self, d: &DVector<f64>) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyPolytope);
        }
        Ok(self.vertices.iter().map(|v| v.dot(d)).fold(f64::NEG_INFINITY, f64::max))
    }
}

/// A nonzero direction vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(DVector<f64>);

impl Direction {
    pub fn new(d: DVector<f64>) -> Result<Self> {
        if d.iter().all(|&v| v == 0.0) || d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("direction must be finite and nonzero".into()));
        }
        Ok(Direction(d))
    }

    pub fn from_slice(d: &[f64]) -> Result<Self> {
        Direction::new(DVector::from_column_slice(d))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

/// `max_{x ∈ P(y)} dᵀx`.
pub fn support(p: &TemplatePolytope, d: &Direction) -> Result<f64> {
    let d = d.as_vector();
    dim_check(d.len() == p.dim(), || format!("direction of length {} in dimension {}", d.len(), p.dim()))?;
    if p.is_flagged_empty() {
        return Err(Error::EmptyPolytope);
    }
    if let Some(verts) = p.mapped_vertices() {
        return Ok(verts.iter().map(|v| v.dot(d)).fold(f64::NEG_INFINITY, f64::max));
    }
    support_lp(p.facets(), &p.y, d).map(|(v, _)| v)
}

/// Support of `{x : Fx ≤ b}` in direction `d` by LP, polished to a vertex.
/// Returns the value and a maximizer.
pub fn support_lp(f: &DMatrix<f64>, b: &DVector<f64>, d: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let n = f.ncols();
    let m = SparseMatrix::from_dense(f);
    let lo = vec![-INF; f.nrows()];
    let c: Vec<f64> = d.iter().map(|v| -v).collect();
    let r = qp::solve_lp(&c, &m, &lo, b.as_slice(), &Settings::geometry())?;
    match r.status {
        Status::PrimalInfeasible => Err(Error::EmptyPolytope),
        Status::DualInfeasible => Err(Error::Unbounded),
        s if s.is_optimal() => {
            let x = DVector::from_vec(r.x);
            let x = polish_vertex(f, b, d, &x).unwrap_or(x);
            debug_assert_eq!(x.len(), n);
            Ok((d.dot(&x), x))
        }
        s => Err(Error::Numerical(format!("support LP ended with {s:?}"))),
    }
}

/// Snaps an approximate LP maximizer to an exact vertex of `{Fx ≤ b}` built
/// from the tightest rows, if that vertex is feasible and no worse.
fn polish_vertex(f: &DMatrix<f64>, b: &DVector<f64>, d: &DVector<f64>, x: &DVector<f64>) -> Option<DVector<f64>> {
    let n = f.ncols();
    let slack = b - f * x;
    let mut order: Vec<usize> = (0..f.nrows()).collect();
    order.sort_by(|&i, &j| {
        let si = slack[i] / f.row(i).norm().max(1e-300);
        let sj = slack[j] / f.row(j).norm().max(1e-300);
        si.total_cmp(&sj)
    });
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    for &i in &order {
        if chosen.len() == n {
            break;
        }
        if slack[i] / f.row(i).norm().max(1e-300) > 1e-5 * (1.0 + b[i].abs()) {
            break;
        }
        let mut trial = chosen.clone();
        trial.push(i);
        if linalg::rank(&linalg::select_rows(f, &trial), 1e-10) == trial.len() {
            chosen = trial;
        }
    }
    if chosen.len() < n {
        return None;
    }
    let fs = linalg::select_rows(f, &chosen);
    let bs = DVector::from_fn(n, |k, _| b[chosen[k]]);
    let v = fs.lu().solve(&bs)?;
    let feasible = (f * &v - b).iter().zip(b.iter()).all(|(r, bi)| *r <= 1e-9 * (1.0 + bi.abs()));
    (feasible && d.dot(&v) >= d.dot(x) - 1e-6 * (1.0 + d.dot(x).abs())).then_some(v)
}

/// True iff every vertex of `inner` satisfies `Yv ≤ y + tol`.
pub fn contains_polytope(outer: &TemplatePolytope, inner: &VPolytope) -> Result<bool> {
    dim_check(outer.dim() == inner.dim(), || {
        format!("outer dimension {} vs inner {}", outer.dim(), inner.dim())
    })?;
    if inner.is_empty() {
        return Ok(true);
    }
    if outer.is_flagged_empty() {
        return Ok(false);
    }
    Ok(inner.vertices.iter().all(|v| outer.contains_point(v, FEAS_TOL)))
}

/// Hausdorff distance under the Euclidean norm.
pub fn hausdorff(a: &VPolytope, b: &VPolytope) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPolytope);
    }
    dim_check(a.dim() == b.dim(), || format!("dimensions {} and {}", a.dim(), b.dim()))?;
    let one_side = |x: &VPolytope, y: &VPolytope| {
        x.vertices.iter().map(|v| point_distance(v, y)).fold(0.0, f64::max)
    };
    Ok(one_side(a, b).max(one_side(b, a)))
}

/// Euclidean distance from `p` to the convex hull of `x`.
pub fn point_distance(p: &DVector<f64>, x: &VPolytope) -> f64 {
    match x.dim {
        1 => {
            let lo = x.vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
            let hi = x.vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
            (lo - p[0]).max(p[0] - hi).max(0.0)
        }
        2 => polygon_distance(p, &convex_hull_2d(&x.vertices)),
        _ => {
            let shifted: Vec<DVector<f64>> = x.vertices.iter().map(|v| v - p).collect();
            min_norm_point(&shifted).norm()
        }
    }
}

/// Distance to a counterclockwise convex polygon: zero inside, else the
/// nearest edge.
fn polygon_distance(p: &DVector<f64>, hull: &[DVector<f64>]) -> f64 {
    let n = hull.len();
    let seg = |a: &DVector<f64>, b: &DVector<f64>| {
        let d = b - a;
        let t = if d.norm_squared() == 0.0 { 0.0 } else { ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0) };
        (p - a - d * t).norm()
    };
    if n == 1 {
        return (p - &hull[0]).norm();
    }
    let inside = n >= 3
        && (0..n).all(|i| {
            let (a, b) = (&hull[i], &hull[(i + 1) % n]);
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
        });
    if inside {
        return 0.0;
    }
    (0..n).map(|i| seg(&hull[i], &hull[(i + 1) % n])).fold(f64::INFINITY, f64::min)
}

/// Wolfe's algorithm: the point of minimum Euclidean norm in the convex hull
/// of `pts`.
pub fn min_norm_point(pts: &[DVector<f64>]) -> DVector<f64> {
    assert!(!pts.is_empty());
    let scale = pts.iter().map(|p| p.norm_squared()).fold(0.0, f64::max).max(1e-300);
    let eps = 1e-14 * scale;
    let first = (0..pts.len())
        .min_by(|&i, &j| pts[i].norm_squared().total_cmp(&pts[j].norm_squared()))
        .unwrap();
    let mut set = vec![first];
    let mut lambda = vec![1.0];
    let combine = |set: &[usize], w: &[f64]| {
        let mut x = DVector::zeros(pts[0].len());
        for (k, &i) in set.iter().enumerate() {
            x += &pts[i] * w[k];
        }
        x
    };
    for _ in 0..(50 * pts.len() + 50) {
        let x = combine(&set, &lambda);
        let (j, val) = (0..pts.len())
            .map(|j| (j, x.dot(&pts[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if val >= x.norm_squared() - eps || set.contains(&j) {
            return x;
        }
        set.push(j);
        lambda.push(0.0);
        loop {
            let alpha = affine_min_weights(pts, &set);
            if alpha.iter().all(|&a| a > 1e-15) {
                lambda = alpha;
                break;
            }
            let mut theta: f64 = 1.0;
            for k in 0..set.len() {
                if alpha[k] <= 1e-15 && lambda[k] - alpha[k] > 0.0 {
                    theta = theta.min(lambda[k] / (lambda[k] - alpha[k]));
                }
            }
            for k in 0..set.len() {
                lambda[k] = (1.0 - theta) * lambda[k] + theta * alpha[k];
            }
            let mut k = 0;
            let mut removed = false;
            while k < set.len() {
                if lambda[k] <= 1e-15 && set.len() > 1 {
                    set.remove(k);
                    lambda.remove(k);
                    removed = true;
                } else {
                    k += 1;
                }
            }
            if !removed {
                // guard against stalling on round-off: drop the smallest weight
                let (kmin, _) = lambda.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
                set.remove(kmin);
                lambda.remove(kmin);
            }
            let s: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= s);
        }
    }
    combine(&set, &lambda)
}

/// Weights of the minimum-norm point of the affine hull of `pts[set]`.
fn affine_min_weights(pts: &[DVector<f64>], set: &[usize]) -> Vec<f64> {
    let k = set.len();
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    for a in 0..k {
        for b in 0..k {
            kkt[(a, b)] = pts[set[a]].dot(&pts[set[b]]);
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = linalg::pinv(&kkt) * rhs;
    (0..k).map(|a| sol[a]).collect()
}

/// Largest distance between two points of the polytope.
pub fn diameter(x: &VPolytope) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptyPolytope);
    }
    let v = &x.vertices;
    let mut best: f64 = 0.0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            best = best.max(linalg::dist(&v[i], &v[j]));
        }
    }
    Ok(best)
}

/// Volume-normalized centroid; lower-dimensional polytopes use the volume
/// measure of their affine hull.
pub fn centroid(x: &VPolytope) -> Result<DVector<f64>> {
    if x.is_empty() {
        return Err(Error::EmptyPolytope);
    }
    let pts = dedup_points(&x.vertices, DEDUP_TOL);
    let n = x.dim();
    let mean = pts.iter().fold(DVector::zeros(n), |acc, p| acc + p) / pts.len() as f64;
    if pts.len() == 1 {
        return Ok(pts[0].clone());
    }
    let diffs = DMatrix::from_fn(n, pts.len(), |i, j| pts[j][i] - mean[i]);
    let svd = diffs.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.max();
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-9 * smax.max(1.0))
        .collect();
    if cols.is_empty() {
        return Ok(mean);
    }
    let basis = DMatrix::from_fn(n, cols.len(), |i, j| u[(i, cols[j])]);
    let local: Vec<DVector<f64>> = pts.iter().map(|p| basis.transpose() * (p - &mean)).collect();
    let (_, c) = volume_and_centroid(&local);
    Ok(mean + basis * c)
}

/// Volume and centroid of the hull of full-dimensional points in `ℝ^d`.
fn volume_and_centroid(pts: &[DVector<f64>]) -> (f64, DVector<f64>) {
    let d = pts[0].len();
    match d {
        0 => (1.0, DVector::zeros(0)),
        1 => {
            let lo = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            (hi - lo, DVector::from_element(1, 0.5 * (lo + hi)))
        }
        2 => polygon_area_centroid(&convex_hull_2d(pts)),
        _ => {
            let apex = pts.iter().fold(DVector::zeros(d), |acc, p| acc + p) / pts.len() as f64;
            let mut vol = 0.0;
            let mut moment = DVector::zeros(d);
            for (normal, offset, members) in hull_facets(pts) {
                let h = offset - normal.dot(&apex);
                if h <= 1e-14 {
                    continue;
                }
                let face: Vec<DVector<f64>> = members.iter().map(|&i| pts[i].clone()).collect();
                // coordinates inside the facet hyperplane
                let basis = linalg::null_space(&DMatrix::from_row_slice(1, d, normal.as_slice()), 1e-12);
                let origin = &face[0];
                let local: Vec<DVector<f64>> = face.iter().map(|p| basis.transpose() * (p - origin)).collect();
                let (area, c_local) = volume_and_centroid(&local);
                let c_face = origin + &basis * c_local;
                let v = area * h / d as f64;
                let c = &apex + (c_face - &apex) * (d as f64 / (d as f64 + 1.0));
                vol += v;
                moment += c * v;
            }
            (vol, moment / vol)
        }
    }
}

/// Facets `(unit normal, offset, member indices)` of the hull of points in
/// general position in `ℝ^d`, found by brute force over `d`-subsets.
fn hull_facets(pts: &[DVector<f64>]) -> Vec<(DVector<f64>, f64, Vec<usize>)> {
    let d = pts[0].len();
    let scale = pts.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let mut facets: Vec<(DVector<f64>, f64, Vec<usize>)> = Vec::new();
    for subset in combinations(pts.len(), d) {
        let diffs = DMatrix::from_fn(d - 1, d, |r, c| pts[subset[r + 1]][c] - pts[subset[0]][c]);
        let ns = linalg::null_space(&diffs, 1e-10);
        if ns.ncols() != 1 {
            continue;
        }
        let mut normal: DVector<f64> = ns.column(0).into_owned();
        let mut offset = normal.dot(&pts[subset[0]]);
        let vals: Vec<f64> = pts.iter().map(|p| normal.dot(p) - offset).collect();
        let above = vals.iter().any(|&v| v > tol);
        let below = vals.iter().any(|&v| v < -tol);
        if above && below {
            continue;
        }
        if above {
            normal = -normal;
            offset = -offset;
        }
        if facets.iter().any(|(n, o, _)| (n - &normal).norm() < 1e-9 && (o - offset).abs() < tol) {
            continue;
        }
        let members: Vec<usize> = (0..pts.len()).filter(|&i| (normal.dot(&pts[i]) - offset).abs() <= tol).collect();
        facets.push((normal, offset, members));
    }
    facets
}

fn polygon_area_centroid(poly: &[DVector<f64>]) -> (f64, DVector<f64>) {
    let k = poly.len();
    if k < 3 {
        let c = poly.iter().fold(DVector::zeros(2), |acc, p| acc + p) / k.max(1) as f64;
        return (0.0, c);
    }
    let mut area2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..k {
        let (p, q) = (&poly[i], &poly[(i + 1) % k]);
        let cross = p[0] * q[1] - q[0] * p[1];
        area2 += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    let area = 0.5 * area2;
    (area.abs(), DVector::from_vec(vec![cx / (3.0 * area2), cy / (3.0 * area2)]))
}

/// Counterclockwise convex hull (Andrew's monotone chain), collinear points dropped.
pub fn convex_hull_2d(points: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut pts = dedup_points(points, DEDUP_TOL);
    if pts.len() < 3 {
        return pts;
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
    // runs of equal x up to rounding are ordered by y
    let xtol = 1e-9 * pts.iter().map(|p| p.amax()).fold(1.0, f64::max);
    let mut start = 0;
    for i in 1..=pts.len() {
        if i == pts.len() || pts[i][0] - pts[start][0] > xtol {
            pts[start..i].sort_by(|a, b| a[1].total_cmp(&b[1]));
            start = i;
        }
    }
    // pop on right turns and on turns whose sine is below 1e-12
    let keeps = |o: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>| {
        let (u, v) = (a - o, b - o);
        u[0] * v[1] - u[1] * v[0] > 1e-12 * u.norm() * v.norm()
    };
    let mut lower: Vec<DVector<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && !keeps(&lower[lower.len() - 2], &lower[lower.len() - 1], p) {
            lower.pop();
        }
        lower.push(p.clone());
    }
    let mut upper: Vec<DVector<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && !keeps(&upper[upper.len() - 2], &upper[upper.len() - 1], p) {
            upper.pop();
        }
        upper.push(p.clone());
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// All vertices of `P(y)` by brute force over `n`-row active sets.
pub fn enumerate_vertices(p: &TemplatePolytope) -> Result<VPolytope> {
    if p.is_flagged_empty() {
        return Err(Error::EmptyPolytope);
    }
    let verts = hrep_vertices(p.facets(), &p.y)?;
    Ok(VPolytope { dim: p.dim(), vertices: verts.into_iter().map(|v| v.point).collect() })
}

/// A vertex of `{x : Fx ≤ b}` together with its active rows.
#[derive(Debug, Clone)]
pub struct Vertex {
    pub point: DVector<f64>,
    pub active: Vec<usize>,
}

/// Vertices of the bounded polyhedron `{x : Fx ≤ b}` with their active sets.
pub fn hrep_vertices(f: &DMatrix<f64>, b: &DVector<f64>) -> Result<Vec<Vertex>> {
    let (m, n) = f.shape();
    dim_check(b.len() == m, || format!("{m} rows but rhs of length {}", b.len()))?;
    let tol = |i: usize| 1e-9 * (1.0 + b[i].abs());
    let mut out: Vec<Vertex> = Vec::new();
    if n == 0 {
        return Ok(out);
    }
    for subset in combinations(m, n) {
        let fs = linalg::select_rows(f, &subset);
        if linalg::rank(&fs, 1e-10) < n {
            continue;
        }
        let bs = DVector::from_fn(n, |k, _| b[subset[k]]);
        let Some(x) = fs.lu().solve(&bs) else { continue };
        let res = f * &x - b;
        if (0..m).any(|i| res[i] > tol(i)) {
            continue;
        }
        if out.iter().any(|v| (&v.point - &x).norm() <= DEDUP_TOL) {
            continue;
        }
        let active = (0..m).filter(|&i| res[i].abs() <= tol(i)).collect();
        out.push(Vertex { point: x, active });
    }
    if out.is_empty() {
        let r = qp::solve_lp(
            &vec![0.0; n],
            &SparseMatrix::from_dense(f),
            &vec![-INF; m],
            b.as_slice(),
            &Settings::geometry(),
        )?;
        return Err(if r.status == Status::PrimalInfeasible { Error::EmptyPolytope } else { Error::Unbounded });
    }
    if !recession_cone_trivial(f)? {
        return Err(Error::Unbounded);
    }
    Ok(out)
}

/// `{d : Fd ≤ 0} = {0}` iff `F` has full column rank and some `λ > 0` has `Fᵀλ = 0`.
pub fn recession_cone_trivial(f: &DMatrix<f64>) -> Result<bool> {
    let (m, n) = f.shape();
    if linalg::rank(f, 1e-10) < n {
        return Ok(false);
    }
    // variables λ (m); rows: Fᵀλ = 0, λ ≥ 1
    let mut a = SparseMatrix::new(n + m, m);
    for i in 0..m {
        for j in 0..n {
            a.push(j, i, f[(i, j)]);
        }
        a.push(n + i, i, 1.0);
    }
    let mut lo = vec![0.0; n];
    lo.extend(vec![1.0; m]);
    let mut hi = vec![0.0; n];
    hi.extend(vec![INF; m]);
    let r = qp::solve_lp(&vec![0.0; m], &a, &lo, &hi, &Settings::geometry())?;
    Ok(r.status.is_optimal())
}

pub fn dedup_points(points: &[DVector<f64>], tol: f64) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for p in points {
        if !out.iter().any(|q| (q - p).norm() <= tol) {
            out.push(p.clone());
        }
    }
    out
}

/// Lexicographic `k`-subsets of `0..n`.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hexagon() -> Arc<DMatrix<f64>> {
        Arc::new(linalg::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![-1.0, -1.0],
            vec![0.0, -1.0],
        ]))
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(14, 6).len(), 3003);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(combinations(2, 0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn hexagon_support_and_vertices() {
        let p = TemplatePolytope::new(hexagon(), v(&[1.0, 2.0, 1.0, 1.0, 2.0, 1.0])).unwrap();
        assert!((support(&p, &Direction::from_slice(&[1.0, 0.0]).unwrap()).unwrap() - 1.0).abs() < 1e-12);
        assert!((support(&p, &Direction::from_slice(&[1.0, 1.0]).unwrap()).unwrap() - 2.0).abs() < 1e-12);
        // the diagonal facets only touch the corners: P(y) is the square [-1,1]^2
        assert_eq!(enumerate_vertices(&p).unwrap().vertices.len(), 4);
        let c = centroid(&enumerate_vertices(&p).unwrap()).unwrap();
        assert!(c.norm() < 1e-12);
        let q = TemplatePolytope::new(hexagon(), v(&[1.0; 6])).unwrap();
        assert_eq!(enumerate_vertices(&q).unwrap().vertices.len(), 6);
    }

    #[test]
    fn redundant_row_gives_fewer_vertices() {
        let p = TemplatePolytope::new(hexagon(), v(&[1.0, 5.0, 1.0, 1.0, 2.0, 1.0])).unwrap();
        assert!(enumerate_vertices(&p).unwrap().vertices.len() < 6);
    }

    #[test]
    fn empty_and_unbounded() {
        let p = TemplatePolytope::new(hexagon(), v(&[-1.0, 2.0, 1.0, -1.0, 2.0, 1.0])).unwrap();
        assert_eq!(enumerate_vertices(&p).unwrap_err(), Error::EmptyPolytope);
        assert_eq!(support(&p, &Direction::from_slice(&[1.0, 0.0]).unwrap()).unwrap_err(), Error::EmptyPolytope);
        let half = TemplatePolytope::new(Arc::new(linalg::from_rows(&[vec![1.0, 0.0]])), v(&[1.0])).unwrap();
        assert_eq!(support(&half, &Direction::from_slice(&[0.0, 1.0]).unwrap()).unwrap_err(), Error::Unbounded);
    }

    #[test]
    fn hausdorff_examples() {
        let a = VPolytope::new(1, vec![v(&[0.0]), v(&[1.0])]).unwrap();
        let b = VPolytope::new(1, vec![v(&[0.0]), v(&[3.0])]).unwrap();
        assert!((hausdorff(&a, &b).unwrap() - 2.0).abs() < 1e-12);
        let sq = VPolytope::axis_box(&[0.0, 0.0], &[1.0, 1.0]);
        let t = v(&[0.3, -0.4]);
        assert!((hausdorff(&sq, &sq.translate(&t)).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(hausdorff(&sq, &sq).unwrap(), 0.0);
    }

    #[test]
    fn min_norm_point_on_segment() {
        let p = min_norm_point(&[v(&[-1.0, 1.0]), v(&[1.0, 1.0])]);
        assert!((p - v(&[0.0, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn centroid_examples() {
        let b = VPolytope::axis_box(&[17.0, 17.0], &[23.0, 23.0]);
        assert!((centroid(&b).unwrap() - v(&[20.0, 20.0])).norm() < 1e-12);
        let seg = VPolytope::new(1, vec![v(&[4.0]), v(&[6.0])]).unwrap();
        assert!((centroid(&seg).unwrap()[0] - 5.0).abs() < 1e-12);
        let cube = VPolytope::axis_box(&[0.0, 0.0, 0.0], &[1.0, 2.0, 4.0]);
        assert!((centroid(&cube).unwrap() - v(&[0.5, 1.0, 2.0])).norm() < 1e-12);
        let tet = VPolytope::new(3, vec![v(&[0.0, 0.0, 0.0]), v(&[1.0, 0.0, 0.0]), v(&[0.0, 1.0, 0.0]), v(&[0.0, 0.0, 1.0])]).unwrap();
        assert!((centroid(&tet).unwrap() - v(&[0.25, 0.25, 0.25])).norm() < 1e-12);
        // triangle embedded in 3D
        let tri = VPolytope::new(3, vec![v(&[0.0, 0.0, 1.0]), v(&[3.0, 0.0, 1.0]), v(&[0.0, 3.0, 1.0])]).unwrap();
        assert!((centroid(&tri).unwrap() - v(&[1.0, 1.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn diameter_examples() {
        let pt = VPolytope::new(2, vec![v(&[1.0, 1.0])]).unwrap();
        assert_eq!(diameter(&pt).unwrap(), 0.0);
        let seg = VPolytope::new(1, vec![v(&[-3.0]), v(&[3.0])]).unwrap();
        assert_eq!(diameter(&seg).unwrap(), 6.0);
    }

    #[test]
    fn containment() {
        let p = TemplatePolytope::new(hexagon(), v(&[23.0, 46.0, 23.0, -17.0, -34.0, -17.0])).unwrap();
        assert!(contains_polytope(&p, &VPolytope::axis_box(&[17.0, 17.0], &[23.0, 23.0])).unwrap());
        let x = TemplatePolytope::new(Arc::new(linalg::from_rows(&[vec![0.0, -1.0]])), v(&[45.0])).unwrap();
        let bad = VPolytope::new(2, vec![v(&[0.0, -46.0])]).unwrap();
        assert!(!contains_polytope(&x, &bad).unwrap());
        assert!(contains_polytope(&x, &VPolytope::new(2, vec![v(&[0.0, 0.0])]).unwrap()).unwrap());
        assert!(matches!(
            contains_polytope(&x, &VPolytope::new(1, vec![v(&[0.0])]).unwrap()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn hull_2d_drops_interior_and_collinear() {
        let pts = vec![v(&[0.0, 0.0]), v(&[2.0, 0.0]), v(&[1.0, 0.0]), v(&[2.0, 2.0]), v(&[0.0, 2.0]), v(&[1.0, 1.0])];
        let h = convex_hull_2d(&pts);
        assert_eq!(h.len(), 4);
        assert_eq!(h[0], v(&[0.0, 0.0]));
        assert_eq!(h[1], v(&[2.0, 0.0]));
    }
}

//! Brute-force reference computations. Everything here is deliberately
//! naive: exhaustive subset enumeration and closed-form planar geometry, so
//! that results can be trusted independently of the library under test.

use nalgebra::{DMatrix, DVector};

/// Lexicographic `k`-subsets of `0..n`, by recursion.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Vertices of the bounded polyhedron `{x : Fx ≤ b}`: every `n`-row subset
/// with a unique solution that satisfies all rows within `tol`.
pub fn vertices(f: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Vec<DVector<f64>> {
    let (m, n) = f.shape();
    let mut out: Vec<DVector<f64>> = Vec::new();
    for s in subsets(m, n) {
        let a = DMatrix::from_fn(n, n, |i, j| f[(s[i], j)]);
        let rhs = DVector::from_fn(n, |i, _| b[s[i]]);
        let svd = a.clone().svd(false, false);
        if svd.singular_values.min() <= 1e-10 * svd.singular_values.max().max(1.0) {
            continue;
        }
        let Some(x) = a.lu().solve(&rhs) else { continue };
        if (f * &x - b).iter().all(|&r| r <= tol) && !out.iter().any(|v| (v - &x).norm() <= 1e-7) {
            out.push(x);
        }
    }
    out
}

/// `max_v dᵀv` over a point list.
pub fn support(points: &[DVector<f64>], d: &DVector<f64>) -> f64 {
    points.iter().map(|p| p.dot(d)).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest pairwise distance.
pub fn diameter(points: &[DVector<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for a in points {
        for b in points {
            best = best.max((a - b).norm());
        }
    }
    best
}

/// Convex hull of planar points, counterclockwise, by gift wrapping.
pub fn hull_2d(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for p in points {
        if !pts.iter().any(|q| (q[0] - p[0]).hypot(q[1] - p[1]) <= 1e-12) {
            pts.push(*p);
        }
    }
    if pts.len() < 3 {
        return pts;
    }
    let start = (0..pts.len())
        .min_by(|&a, &b| pts[a][0].total_cmp(&pts[b][0]).then(pts[a][1].total_cmp(&pts[b][1])))
        .unwrap();
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let mut hull = vec![];
    let mut cur = start;
    loop {
        hull.push(pts[cur]);
        let mut next = (cur + 1) % pts.len();
        for k in 0..pts.len() {
            let c = cross(pts[cur], pts[next], pts[k]);
            if c < -1e-12 || (c.abs() <= 1e-12 && dist(pts[cur], pts[k]) > dist(pts[cur], pts[next])) {
                next = k;
            }
        }
        cur = next;
        if cur == start || hull.len() > pts.len() {
            break;
        }
    }
    hull
}

/// Area centroid of a counterclockwise polygon by the shoelace formula;
/// degenerate polygons fall back to segment midpoints or the point itself.
pub fn centroid_2d(poly: &[[f64; 2]]) -> [f64; 2] {
    let n = poly.len();
    let mut a = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let c = p[0] * q[1] - q[0] * p[1];
        a += c;
        cx += (p[0] + q[0]) * c;
        cy += (p[1] + q[1]) * c;
    }
    if a.abs() > 1e-12 {
        return [cx / (3.0 * a), cy / (3.0 * a)];
    }
    // segment: farthest pair midpoint
    let mut best = (0.0, poly[0], poly[0]);
    for p in poly {
        for q in poly {
            let d = (p[0] - q[0]).hypot(p[1] - q[1]);
            if d > best.0 {
                best = (d, *p, *q);
            }
        }
    }
    [(best.1[0] + best.2[0]) / 2.0, (best.1[1] + best.2[1]) / 2.0]
}

fn point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Distance from a point to a convex counterclockwise polygon.
pub fn point_polygon_distance(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n == 1 {
        return (p[0] - poly[0][0]).hypot(p[1] - poly[0][1]);
    }
    if n >= 3 {
        let inside = (0..n).all(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12
        });
        if inside {
            return 0.0;
        }
    }
    (0..n).map(|i| point_segment(p, poly[i], poly[(i + 1) % n])).fold(f64::INFINITY, f64::min)
}

/// Hausdorff distance of two convex polygons: the largest vertex-to-polygon distance.
pub fn hausdorff_2d(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let ha = hull_2d(a);
    let hb = hull_2d(b);
    let d1 = ha.iter().map(|&p| point_polygon_distance(p, &hb)).fold(0.0, f64::max);
    let d2 = hb.iter().map(|&p| point_polygon_distance(p, &ha)).fold(0.0, f64::max);
    d1.max(d2)
}

/// Hausdorff distance of two intervals.
pub fn hausdorff_1d(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

/// Solution of `min ½xᵀPx + qᵀx` subject to `Ex = f`, `Ax ≤ b` for positive
/// definite `P`, found by trying every subset of inequality rows as the active
/// set and keeping the one satisfying all KKT conditions.
#[derive(Debug, Clone)]
pub struct ActiveSetSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Multipliers of the inequality rows (zero when inactive).
    pub ineq_multipliers: DVector<f64>,
    pub active: Vec<usize>,
}

pub fn active_set_qp(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    e: &DMatrix<f64>,
    f: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Option<ActiveSetSolution> {
    let n = q.len();
    let (me, mi) = (e.nrows(), a.nrows());
    let pinv = p.clone().cholesky()?.inverse();
    let tol = 1e-9;
    for size in 0..=mi.min(n.saturating_sub(me)) {
        for s in subsets(mi, size) {
            let k = me + size;
            let c = DMatrix::from_fn(k, n, |r, col| if r < me { e[(r, col)] } else { a[(s[r - me], col)] });
            let d = DVector::from_fn(k, |r, _| if r < me { f[r] } else { b[s[r - me]] });
            // x = −P⁻¹(q + Cᵀλ) with C x = d
            let schur = &c * &pinv * c.transpose();
            let rhs = -(&d + &c * &pinv * q);
            let lam = if k == 0 {
                DVector::zeros(0)
            } else {
                match schur.lu().solve(&rhs) {
                    Some(l) if l.iter().all(|v| v.is_finite()) => l,
                    _ => continue,
                }
            };
            let x = -(&pinv * (q + c.transpose() * &lam));
            if (a * &x - b).iter().any(|&r| r > tol * (1.0 + b.amax())) {
                continue;
            }
            if lam.rows(me, size).iter().any(|&l| l < -tol) {
                continue;
            }
            if (e * &x - f).amax() > 1e-7 * (1.0 + f.amax()) {
                continue;
            }
            let mut mult = DVector::zeros(mi);
            for (t, &row) in s.iter().enumerate() {
                mult[row] = lam[me + t];
            }
            let objective = 0.5 * x.dot(&(p * &x)) + q.dot(&x);
            return Some(ActiveSetSolution { x, objective, ineq_multipliers: mult, active: s });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_vertices_and_centroid() {
        let f = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0]);
        let v = vertices(&f, &b, 1e-12);
        assert_eq!(v.len(), 4);
        let pts: Vec<[f64; 2]> = v.iter().map(|p| [p[0], p[1]]).collect();
        let c = centroid_2d(&hull_2d(&pts));
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_of_shifted_squares() {
        let a = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        assert!((hausdorff_2d(&a, &b) - 5.0).abs() < 1e-12);
        assert_eq!(hausdorff_1d((0.0, 1.0), (0.0, 3.0)), 2.0);
    }

    #[test]
    fn scalar_qp() {
        let p = DMatrix::from_element(1, 1, 1.0);
        let q = DVector::zeros(1);
        let a = DMatrix::from_element(1, 1, -1.0);
        let b = DVector::from_element(1, -1.0);
        let s = active_set_qp(&p, &q, &DMatrix::zeros(0, 1), &DVector::zeros(0), &a, &b).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.ineq_multipliers[0] - 1.0).abs() < 1e-12);
    }
}

//! Configuration-constrained template families `(Y, G, Λ)` and meta templates
//! `(Z, H, Ω, 𝕁)`.

use std::sync::Arc;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{self, max_abs};
use crate::polytope::{self, TemplatePolytope, FEAS_TOL};
use crate::qp::{self, QpBuilder, Settings, INF};

/// Tolerance for the algebraic identities of a template.
pub const IDENTITY_TOL: f64 = 1e-12;

/// A polytope family `P(y) = {x : Yx ≤ y}` restricted to the cone `Gy ≤ 0`,
/// with vertex maps `Λ_i` such that the vertices of `P(y)` are `Λ_i y`.
#[derive(Debug, Clone)]
pub struct TemplateFamily {
    facets: Arc<DMatrix<f64>>,
    cone: DMatrix<f64>,
    vertex_maps: Arc<Vec<DMatrix<f64>>>,
}

impl TemplateFamily {
    /// Assembles a family from precomputed vertex maps and checks `GY = 0`, `Λ_iY = I`.
    pub fn new(facets: DMatrix<f64>, cone: DMatrix<f64>, vertex_maps: Vec<DMatrix<f64>>) -> Result<Self> {
        let (m, n) = facets.shape();
        dim_check(cone.ncols() == m, || format!("G has {} columns, Y has {m} rows", cone.ncols()))?;
        for l in &vertex_maps {
            dim_check(l.shape() == (n, m), || format!("vertex map is {:?}, expected {n}x{m}", l.shape()))?;
        }
        let fam = TemplateFamily { facets: Arc::new(facets), cone, vertex_maps: Arc::new(vertex_maps) };
        let gy = fam.cone_residual();
        if gy > IDENTITY_TOL {
            return Err(Error::Consistency(format!("GY = 0 fails with residual {gy:e}")));
        }
        let ly = fam.vertex_map_residual();
        if ly > IDENTITY_TOL {
            return Err(Error::Consistency(format!("Λ_iY = I fails with residual {ly:e}")));
        }
        Ok(fam)
    }

    /// Completes `(Y, G)` with synthesized vertex maps.
    pub fn synthesize(facets: DMatrix<f64>, cone: DMatrix<f64>) -> Result<Self> {
        let m = facets.nrows();
        let (maps, _) = synthesize_vertex_maps(&facets, &DMatrix::identity(m, m), &cone)?;
        TemplateFamily::new(facets, cone, maps)
    }

    pub fn facets(&self) -> &DMatrix<f64> {
        &self.facets
    }

    pub fn facets_arc(&self) -> &Arc<DMatrix<f64>> {
        &self.facets
    }

    pub fn cone(&self) -> &DMatrix<f64> {
        &self.cone
    }

    pub fn vertex_maps(&self) -> &[DMatrix<f64>] {
        &self.vertex_maps
    }

    /// Number of facets `m`.
    pub fn num_facets(&self) -> usize {
        self.facets.nrows()
    }

    /// State dimension `n`.
    pub fn dim(&self) -> usize {
        self.facets.ncols()
    }

    /// Number of vertex maps `ν`.
    pub fn num_vertices(&self) -> usize {
        self.vertex_maps.len()
    }

    pub fn cone_residual(&self) -> f64 {
        max_abs(&(&self.cone * &*self.facets))
    }

    pub fn vertex_map_residual(&self) -> f64 {
        let n = self.dim();
        self.vertex_maps
            .iter()
            .map(|l| max_abs(&(l * &*self.facets - DMatrix::identity(n, n))))
            .fold(0.0, f64::max)
    }

    pub fn in_cone(&self, y: &DVector<f64>, tol: f64) -> bool {
        (&self.cone * y).iter().all(|&v| v <= tol)
    }

    /// `P(y)`, flagged as configured when `Gy ≤ 0` holds within tolerance.
    pub fn polytope(&self, y: DVector<f64>) -> Result<TemplatePolytope> {
        if self.in_cone(&y, FEAS_TOL * (1.0 + linalg::max_abs_vec(&y))) {
            TemplatePolytope::configured(self.facets.clone(), self.vertex_maps.clone(), y)
        } else {
            TemplatePolytope::new(self.facets.clone(), y)
        }
    }

    /// Vertex candidates `Λ_i y`.
    pub fn vertices(&self, y: &DVector<f64>) -> Vec<DVector<f64>> {
        self.vertex_maps.iter().map(|l| l * y).collect()
    }

    /// Tight parameter of a box `[lo, hi]`: `y_r = max over corners of Y_r x`.
    pub fn box_parameter(&self, lo: &[f64], hi: &[f64]) -> DVector<f64> {
        let corners = polytope::VPolytope::axis_box(lo, hi);
        self.hull_parameter(&corners.vertices)
    }

    /// Support parameters `y_r = max_v Y_r v` of a point set.
    pub fn hull_parameter(&self, pts: &[DVector<f64>]) -> DVector<f64> {
        let yv: Vec<DVector<f64>> = pts.iter().map(|p| &*self.facets * p).collect();
        DVector::from_fn(self.num_facets(), |r, _| yv.iter().map(|v| v[r]).fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Which vertices of `ℙ(ζ)` count as extreme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremalityRule {
    /// No member of `ℙ(ζ)` strictly contains a translate of `P(Ω_jζ)`.
    #[default]
    ShapeMaximal,
    /// `Ω_jζ` is Pareto-maximal in `ℙ(ζ)` under componentwise order.
    StrictPareto,
}

/// Sensor ensemble encoding `Z₁y ≤ v̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTemplate {
    pub vbar: DVector<f64>,
}

/// A meta template: ensembles `𝔓(z)` whose members are covered by `P(y)`
/// with `Gy ≤ 0` and `Zy ≤ z`; vertices of `ℙ(ζ)` are `Ω_jζ` on the cone `Hζ ≤ 0`.
#[derive(Debug, Clone)]
pub struct MetaTemplate {
    family: Arc<TemplateFamily>,
    ensemble: DMatrix<f64>,
    sensor_rows: usize,
    meta_cone: DMatrix<f64>,
    meta_maps: Vec<DMatrix<f64>>,
    extreme: Vec<usize>,
    interior: DVector<f64>,
    rule: ExtremalityRule,
}

impl MetaTemplate {
    /// Synthesizes `Ω` and `𝕁` from `(Z, H)`.
    pub fn synthesize(
        family: Arc<TemplateFamily>,
        ensemble: DMatrix<f64>,
        sensor_rows: usize,
        meta_cone: DMatrix<f64>,
        rule: ExtremalityRule,
    ) -> Result<Self> {
        check_meta_dims(&family, &ensemble, sensor_rows, &meta_cone)?;
        let f = param_set_matrix(family.cone(), &ensemble);
        let e = param_map(family.cone().nrows(), ensemble.nrows());
        let (maps, interior) = synthesize_vertex_maps(&f, &e, &meta_cone)?;
        let mut meta = MetaTemplate {
            family,
            ensemble,
            sensor_rows,
            meta_cone,
            meta_maps: maps,
            extreme: Vec::new(),
            interior,
            rule,
        };
        meta.check_identities()?;
        meta.extreme = meta.extreme_indices_at(&meta.interior, rule)?;
        debug!("meta template: {} vertex maps, {} extreme", meta.meta_maps.len(), meta.extreme.len());
        Ok(meta)
    }

    /// Assembles a meta template from precomputed maps and index set.
    pub fn from_parts(
        family: Arc<TemplateFamily>,
        ensemble: DMatrix<f64>,
        sensor_rows: usize,
        meta_cone: DMatrix<f64>,
        meta_maps: Vec<DMatrix<f64>>,
        extreme: Vec<usize>,
        rule: ExtremalityRule,
    ) -> Result<Self> {
        check_meta_dims(&family, &ensemble, sensor_rows, &meta_cone)?;
        let (m, l) = (family.num_facets(), ensemble.nrows());
        for o in &meta_maps {
            dim_check(o.shape() == (m, l), || format!("meta vertex map is {:?}, expected {m}x{l}", o.shape()))?;
        }
        if let Some(&j) = extreme.iter().find(|&&j| j >= meta_maps.len()) {
            return Err(Error::Invalid(format!("extreme index {j} out of range")));
        }
        let interior = interior_point(&param_set_matrix(family.cone(), &ensemble), &param_map(family.cone().nrows(), l), &meta_cone)?.0;
        let mut extreme = extreme;
        extreme.sort_unstable();
        extreme.dedup();
        let meta = MetaTemplate { family, ensemble, sensor_rows, meta_cone, meta_maps, extreme, interior, rule };
        meta.check_identities()?;
        Ok(meta)
    }

    fn check_identities(&self) -> Result<()> {
        let report = validate_consistency(&self.family, self);
        match report.first_failure() {
            Some(c) => Err(Error::Consistency(format!("{} fails with residual {:e}", c.name, c.residual))),
            None => Ok(()),
        }
    }

    pub fn family(&self) -> &Arc<TemplateFamily> {
        &self.family
    }

    /// The ensemble template `Z` (l×m).
    pub fn ensemble(&self) -> &DMatrix<f64> {
        &self.ensemble
    }

    /// `l₁`, the number of leading rows of `Z` that encode the sensor.
    pub fn sensor_rows(&self) -> usize {
        self.sensor_rows
    }

    pub fn sensor_block(&self) -> DMatrix<f64> {
        self.ensemble.rows(0, self.sensor_rows).into_owned()
    }

    /// The meta cone `H`.
    pub fn meta_cone(&self) -> &DMatrix<f64> {
        &self.meta_cone
    }

    /// All meta vertex maps `Ω_j`, `j = 1..ν̄`.
    pub fn meta_maps(&self) -> &[DMatrix<f64>] {
        &self.meta_maps
    }

    /// Indices of the extreme vertex maps (`𝕁`).
    pub fn extreme(&self) -> &[usize] {
        &self.extreme
    }

    pub fn extreme_maps(&self) -> Vec<&DMatrix<f64>> {
        self.extreme.iter().map(|&j| &self.meta_maps[j]).collect()
    }

    pub fn interior(&self) -> &DVector<f64> {
        &self.interior
    }

    pub fn rule(&self) -> ExtremalityRule {
        self.rule
    }

    /// `l`.
    pub fn num_params(&self) -> usize {
        self.ensemble.nrows()
    }

    /// `ν̄`.
    pub fn num_meta_vertices(&self) -> usize {
        self.meta_maps.len()
    }

    /// `|𝕁|`.
    pub fn num_extreme(&self) -> usize {
        self.extreme.len()
    }

    /// Row matrix of `ℙ(ζ) = {y : [G; Z] y ≤ [0; ζ]}`.
    pub fn param_set_matrix(&self) -> DMatrix<f64> {
        param_set_matrix(self.family.cone(), &self.ensemble)
    }

    pub fn param_set_rhs(&self, zeta: &DVector<f64>) -> DVector<f64> {
        let ng = self.family.cone().nrows();
        let mut b = DVector::zeros(ng + zeta.len());
        b.rows_mut(ng, zeta.len()).copy_from(zeta);
        b
    }

    pub fn in_meta_cone(&self, zeta: &DVector<f64>, tol: f64) -> bool {
        (&self.meta_cone * zeta).iter().all(|&v| v <= tol)
    }

    /// Extreme indices evaluated at a given interior `ζ` (used to check
    /// independence of the choice of `ζ`).
    pub fn extreme_indices_at(&self, zeta: &DVector<f64>, rule: ExtremalityRule) -> Result<Vec<usize>> {
        extract_extreme_indices(self, zeta, rule)
    }
}

fn check_meta_dims(family: &TemplateFamily, z: &DMatrix<f64>, sensor_rows: usize, h: &DMatrix<f64>) -> Result<()> {
    let m = family.num_facets();
    dim_check(z.ncols() == m, || format!("Z has {} columns, Y has {m} rows", z.ncols()))?;
    dim_check(h.ncols() == z.nrows(), || format!("H has {} columns, Z has {} rows", h.ncols(), z.nrows()))?;
    if sensor_rows > z.nrows() {
        return Err(Error::PartitionMismatch(format!("l₁ = {sensor_rows} exceeds l = {}", z.nrows())));
    }
    Ok(())
}

fn param_set_matrix(g: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::vstack(g, z)
}

fn param_map(ng: usize, l: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(ng + l, l);
    e.rows_mut(ng, l).fill_with_identity();
    e
}

/// Max-slack interior point of the cone `Cp ≤ 0` such that `{x : Fx ≤ Ep}`
/// contains a ball of the same radius: maximize `t` subject to
/// `Cp + t𝟙 ≤ 0`, `Fx + t‖F_r‖ ≤ Ep`, `‖p‖∞ ≤ 1`, `t ≤ 1`.
pub fn interior_point(f: &DMatrix<f64>, e: &DMatrix<f64>, cone: &DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    let (rows, d) = f.shape();
    let k = e.ncols();
    dim_check(e.nrows() == rows && cone.ncols() == k, || "interior point: inconsistent shapes".to_string())?;
    let (ip, ix, it) = (0, k, k + d);
    let mut b = QpBuilder::new(k + d + 1);
    b.add_linear(it, -1.0);
    for r in 0..cone.nrows() {
        let mut row: Vec<(usize, f64)> = (0..k).map(|c| (ip + c, cone[(r, c)])).collect();
        row.push((it, 1.0));
        b.add_row(row, -INF, 0.0);
    }
    for r in 0..rows {
        let mut row: Vec<(usize, f64)> = (0..d).map(|c| (ix + c, f[(r, c)])).collect();
        row.extend((0..k).map(|c| (ip + c, -e[(r, c)])));
        row.push((it, f.row(r).norm()));
        b.add_row(row, -INF, 0.0);
    }
    for c in 0..k {
        b.add_row(vec![(ip + c, 1.0)], -1.0, 1.0);
    }
    b.add_row(vec![(it, 1.0)], -INF, 1.0);
    let r = qp::solve(&b.build()?, &Settings::geometry())?;
    if !r.status.is_optimal() || r.x[it] <= 1e-9 {
        return Err(Error::NoInteriorPoint);
    }
    Ok((DVector::from_fn(k, |i, _| r.x[ip + i]), r.x[it]))
}

/// Vertex maps of the family `{x : Fx ≤ Ep}` over the cone `Cp ≤ 0`.
///
/// Returns maps `L_i = (F_{J_i})⁺ E_{J_i}` for every vertex of the reference
/// polytope at the interior point `p°`, plus `p°` itself.
pub fn synthesize_vertex_maps(
    f: &DMatrix<f64>,
    e: &DMatrix<f64>,
    cone: &DMatrix<f64>,
) -> Result<(Vec<DMatrix<f64>>, DVector<f64>)> {
    let (p0, _) = interior_point(f, e, cone)?;
    let b = e * &p0;
    let verts = polytope::hrep_vertices(f, &b)?;
    let d = f.ncols();
    let mut maps = Vec::with_capacity(verts.len());
    for v in verts {
        let fa = linalg::select_rows(f, &v.active);
        let rank = linalg::rank(&fa, 1e-10);
        if rank < d {
            return Err(Error::DegenerateVertex { rank, dim: d });
        }
        let ea = linalg::select_rows(e, &v.active);
        maps.push(linalg::pinv(&fa) * ea);
    }
    Ok((maps, p0))
}

/// Extreme index set `𝕁` at the interior parameter `ζ°`.
pub fn extract_extreme_indices(meta: &MetaTemplate, zeta: &DVector<f64>, rule: ExtremalityRule) -> Result<Vec<usize>> {
    if !meta.in_meta_cone(zeta, -1e-12) {
        return Err(Error::NoInteriorPoint);
    }
    let f = meta.param_set_matrix();
    let b = meta.param_set_rhs(zeta);
    let y = meta.family().facets();
    let (m, n) = y.shape();
    let mut out = Vec::new();
    for (j, om) in meta.meta_maps().iter().enumerate() {
        let v = om * zeta;
        let extreme = match rule {
            ExtremalityRule::ShapeMaximal => {
                // variables w (m), a (n), t
                let mut bld = QpBuilder::new(m + n + 1);
                bld.add_linear(m + n, -1.0);
                for r in 0..f.nrows() {
                    bld.add_row((0..m).map(|c| (c, f[(r, c)])).collect(), -INF, b[r]);
                }
                for r in 0..m {
                    let mut row = vec![(r, -1.0), (m + n, 1.0)];
                    row.extend((0..n).map(|c| (m + c, y[(r, c)])));
                    bld.add_row(row, -INF, -v[r]);
                }
                bld.add_row(vec![(m + n, 1.0)], -INF, 1.0);
                let r = qp::solve(&bld.build()?, &Settings::geometry())?;
                if !r.status.is_optimal() {
                    return Err(Error::Numerical(format!("extremality LP for vertex {j}: {:?}", r.status)));
                }
                r.x[m + n] <= 1e-7
            }
            ExtremalityRule::StrictPareto => {
                let mut bld = QpBuilder::new(m);
                for c in 0..m {
                    bld.add_linear(c, -1.0);
                }
                for r in 0..f.nrows() {
                    bld.add_row((0..m).map(|c| (c, f[(r, c)])).collect(), -INF, b[r]);
                }
                for r in 0..m {
                    bld.add_row(vec![(r, 1.0)], v[r], INF);
                }
                let r = qp::solve(&bld.build()?, &Settings::geometry())?;
                if !r.status.is_optimal() {
                    return Err(Error::Numerical(format!("Pareto LP for vertex {j}: {:?}", r.status)));
                }
                let base: f64 = v.sum();
                -r.objective <= base + 1e-7 * (1.0 + base.abs())
            }
        };
        if extreme {
            out.push(j);
        }
    }
    Ok(out)
}

/// One identity of the consistency audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    /// Whether the loader enforces this identity.
    pub required: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub checks: Vec<IdentityCheck>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.first_failure().is_none()
    }

    pub fn first_failure(&self) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| c.required && !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, residual: f64, required: bool) -> IdentityCheck {
    IdentityCheck { name: name.to_string(), residual, required, passed: residual <= IDENTITY_TOL }
}

/// Audits the algebraic identities of a family and meta template.
///
/// Enforced: `GY = 0`, `Λ_iY = I`, `Z₁Y = 0`, `HZY = 0`, `Ω_jZY = Y`.
/// Reported only: the unrestricted forms `HZ = 0` and `Ω_jZ = I`.
pub fn validate_consistency(fam: &TemplateFamily, meta: &MetaTemplate) -> ConsistencyReport {
    let mut checks = family_checks(fam);
    let y = fam.facets();
    let z = meta.ensemble();
    let h = meta.meta_cone();
    let zy = z * y;
    checks.push(check("Z1Y=0", max_abs(&(meta.sensor_block() * y)), true));
    checks.push(check("HZY=0", max_abs(&(h * &zy)), true));
    let ozy = meta.meta_maps().iter().map(|o| max_abs(&(o * &zy - y))).fold(0.0, f64::max);
    checks.push(check("OmegaZY=Y", ozy, true));
    checks.push(check("HZ=0", max_abs(&(h * z)), false));
    let m = fam.num_facets();
    let oz = meta
        .extreme_maps()
        .iter()
        .map(|o| max_abs(&(*o * z - DMatrix::identity(m, m))))
        .fold(0.0, f64::max);
    checks.push(check("OmegaZ=I", oz, false));
    ConsistencyReport { checks }
}

/// Family-only part of the audit: `GY = 0`, `Λ_iY = I`.
pub fn family_checks(fam: &TemplateFamily) -> Vec<IdentityCheck> {
    vec![check("GY=0", fam.cone_residual(), true), check("LambdaY=I", fam.vertex_map_residual(), true)]
}

/// Audit of raw matrices before any synthesis (used on ingest to name the
/// failing identity precisely).
pub fn validate_raw(y: &DMatrix<f64>, g: &DMatrix<f64>, z: &DMatrix<f64>, sensor_rows: usize, h: &DMatrix<f64>) -> Result<ConsistencyReport> {
    dim_check(g.ncols() == y.nrows(), || format!("G has {} columns, Y has {} rows", g.ncols(), y.nrows()))?;
    dim_check(z.ncols() == y.nrows(), || format!("Z has {} columns, Y has {} rows", z.ncols(), y.nrows()))?;
    dim_check(h.ncols() == z.nrows(), || format!("H has {} columns, Z has {} rows", h.ncols(), z.nrows()))?;
    if sensor_rows > z.nrows() {
        return Err(Error::PartitionMismatch(format!("l₁ = {sensor_rows} exceeds l = {}", z.nrows())));
    }
    let zy = z * y;
    Ok(ConsistencyReport {
        checks: vec![
            check("GY=0", max_abs(&(g * y)), true),
            check("Z1Y=0", max_abs(&(z.rows(0, sensor_rows) * y)), true),
            check("HZY=0", max_abs(&(h * &zy)), true),
            check("HZ=0", max_abs(&(h * z)), false),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;

    #[test]
    fn box_template_maps() {
        let y = from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]]);
        let fam = TemplateFamily::synthesize(y, DMatrix::zeros(0, 4)).unwrap();
        assert_eq!(fam.num_vertices(), 4);
        assert!(fam.vertex_map_residual() <= IDENTITY_TOL);
        for l in fam.vertex_maps() {
            assert_eq!(l.iter().filter(|v| v.abs() > 0.5).count(), 2);
        }
    }

    #[test]
    fn interval_template_extremes() {
        // 1D: P(y) = [-y2, y1]; meta Z = I, no cone: ℙ(ζ) is a box of parameters
        let y = from_rows(&[vec![1.0], vec![-1.0]]);
        let g = from_rows(&[vec![-1.0, -1.0]]);
        let fam = Arc::new(TemplateFamily::synthesize(y, g).unwrap());
        assert_eq!(fam.num_vertices(), 2);
        let z = DMatrix::identity(2, 2);
        let h = from_rows(&[vec![-1.0, -1.0]]);
        let meta = MetaTemplate::synthesize(fam, z, 0, h, ExtremalityRule::StrictPareto).unwrap();
        assert_eq!(meta.num_extreme(), 1);
        let om = &meta.meta_maps()[meta.extreme()[0]];
        let zeta = meta.interior().clone();
        assert!((om * &zeta - &zeta).norm() < 1e-9);
    }
}

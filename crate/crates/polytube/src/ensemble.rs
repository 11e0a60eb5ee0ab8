//! Polytopic information ensembles `𝔓(z)`: sensor intersection, propagation,
//! intrinsic equivalence and intrinsic/extrinsic measures.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::ocp::SystemModel;
use crate::polytope::{self, VPolytope};
use crate::qp::{self, QpBuilder, Settings, Status, INF};
use crate::template::{MetaTemplate, SensorTemplate};

/// Cone tolerance for `Hζ ≤ 0`.
pub const CONE_TOL: f64 = 1e-8;

/// An ensemble parameter `z`, denoting `𝔓(z)` for a given meta template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParam {
    pub z: DVector<f64>,
}

impl EnsembleParam {
    pub fn new(z: DVector<f64>) -> Self {
        EnsembleParam { z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectionMode {
    /// `ζ₁ = min(z₁, v̄)`, `ζ₂ = z₂`.
    #[default]
    Exact,
    /// `ζ₁ = v̄`, `ζ₂ = z₂`: the least parameter satisfying the convex relaxation.
    Relaxed,
}

/// Intrinsic and extrinsic measures of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureValues {
    /// `max_{X ∈ 𝔓} diam X`.
    pub intrinsic_dev: f64,
    /// Diameter of the union of all members.
    pub extrinsic_diam: f64,
    pub union_hull: VPolytope,
}

fn cone_scale(zeta: &DVector<f64>) -> f64 {
    CONE_TOL * (1.0 + linalg::max_abs_vec(zeta))
}

/// Whether `ℙ(z) = {y : Gy ≤ 0, Zy ≤ z}` is nonempty.
pub fn is_nonempty(meta: &MetaTemplate, z: &DVector<f64>) -> Result<bool> {
    let f = meta.param_set_matrix();
    let b = meta.param_set_rhs(z);
    let r = qp::solve_lp(
        &vec![0.0; f.ncols()],
        &qp::SparseMatrix::from_dense(&f),
        &vec![-INF; f.nrows()],
        b.as_slice(),
        &Settings::geometry(),
    )?;
    match r.status {
        Status::PrimalInfeasible => Ok(false),
        s if s.is_optimal() => Ok(true),
        s => Err(Error::Numerical(format!("nonemptiness LP ended with {s:?}"))),
    }
}

/// Meta-level intersection `𝔓(z) ⊓ 𝔙`.
pub fn intersect_sensor(
    meta: &MetaTemplate,
    z: &DVector<f64>,
    sensor: &SensorTemplate,
    mode: IntersectionMode,
) -> Result<DVector<f64>> {
    let l1 = meta.sensor_rows();
    if sensor.vbar.len() != l1 {
        return Err(Error::PartitionMismatch(format!("v̄ has length {}, Z₁ has {l1} rows", sensor.vbar.len())));
    }
    if z.len() != meta.num_params() {
        return Err(Error::DimensionMismatch(format!("z has length {}, expected {}", z.len(), meta.num_params())));
    }
    let mut zeta = z.clone();
    for r in 0..l1 {
        zeta[r] = match mode {
            IntersectionMode::Exact => z[r].min(sensor.vbar[r]),
            IntersectionMode::Relaxed => sensor.vbar[r],
        };
    }
    Ok(zeta)
}

/// Row-wise supports of `ℙ(ζ)`, lifted into the meta cone when they violate
/// `Hζ ≤ 0`. The lift is conservative: `ℙ` of the result contains `ℙ(ζ)`.
pub fn tighten(meta: &MetaTemplate, zeta: &DVector<f64>) -> Result<DVector<f64>> {
    let f = meta.param_set_matrix();
    let b = meta.param_set_rhs(zeta);
    let z = meta.ensemble();
    let mut tight = DVector::zeros(zeta.len());
    for r in 0..zeta.len() {
        let d = z.row(r).transpose();
        tight[r] = match polytope::support_lp(&f, &b, &d) {
            Ok((v, _)) => v.min(zeta[r]),
            Err(Error::EmptyPolytope) => return Err(Error::EmptyEnsemble),
            Err(e) => return Err(e),
        };
    }
    if meta.in_meta_cone(&tight, cone_scale(&tight)) {
        return Ok(tight);
    }
    lift_into_cone(meta, &tight)
}

/// `min 𝟙ᵀζ′ s.t. Hζ′ ≤ 0, ζ′ ≥ ζ`, lexicographically: first over the
/// translation-invariant rows (`(ZY)_r = 0`), which are then held fixed.
fn lift_into_cone(meta: &MetaTemplate, zeta: &DVector<f64>) -> Result<DVector<f64>> {
    let zy = meta.ensemble() * meta.family().facets();
    let invariant: Vec<bool> = (0..zy.nrows()).map(|r| zy.row(r).amax() <= 1e-12).collect();
    let first = lift_lp(meta, zeta, |r| invariant[r], None)?;
    let lifted = lift_lp(meta, zeta, |r| !invariant[r], Some((&first, &invariant)))?;
    // exact lower bounds where the lift is inactive
    Ok(DVector::from_fn(zeta.len(), |i, _| {
        if (lifted[i] - zeta[i]).abs() <= 1e-9 * (1.0 + zeta[i].abs()) {
            zeta[i]
        } else {
            lifted[i]
        }
    }))
}

fn lift_lp(
    meta: &MetaTemplate,
    zeta: &DVector<f64>,
    weighted: impl Fn(usize) -> bool,
    fixed: Option<(&DVector<f64>, &[bool])>,
) -> Result<DVector<f64>> {
    let h = meta.meta_cone();
    let l = zeta.len();
    let mut b = QpBuilder::new(l);
    for c in 0..l {
        if weighted(c) {
            b.add_linear(c, 1.0);
        }
        match fixed {
            Some((v, rows)) if rows[c] => b.add_row(vec![(c, 1.0)], zeta[c], v[c].max(zeta[c])),
            _ => b.add_row(vec![(c, 1.0)], zeta[c], INF),
        };
    }
    for r in 0..h.nrows() {
        b.add_row((0..l).map(|c| (c, h[(r, c)])).collect(), -INF, 0.0);
    }
    let r = qp::solve(&b.build()?, &Settings::geometry())?;
    if !r.status.is_optimal() {
        return Err(Error::Numerical(format!("cone lift LP ended with {:?}", r.status)));
    }
    Ok(DVector::from_column_slice(&r.x))
}

/// `ζ` itself if it lies in the meta cone, else its tightened lift.
pub fn cone_feasible(meta: &MetaTemplate, zeta: &DVector<f64>) -> Result<DVector<f64>> {
    if meta.in_meta_cone(zeta, cone_scale(zeta)) {
        Ok(zeta.clone())
    } else {
        tighten(meta, zeta)
    }
}

/// Support parameters `ξ_j` of `A·P(Ω_jζ) + Bu_j + 𝕎` for each `j ∈ 𝕁`
/// (`controls[k]` belongs to the `k`-th extreme index).
pub fn propagate_extreme(
    meta: &MetaTemplate,
    sys: &SystemModel,
    zeta: &DVector<f64>,
    controls: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    if controls.len() != meta.num_extreme() {
        return Err(Error::DimensionMismatch(format!(
            "{} controls for {} extreme polytopes",
            controls.len(),
            meta.num_extreme()
        )));
    }
    let viol = (meta.meta_cone() * zeta).max();
    if viol > cone_scale(zeta) {
        return Err(Error::ConeViolation(viol));
    }
    let fam = meta.family();
    let y = fam.facets();
    let ya = y * &sys.a;
    let yb = y * &sys.b;
    let mut out = Vec::with_capacity(controls.len());
    for (k, om) in meta.extreme_maps().into_iter().enumerate() {
        let yj = om * zeta;
        let mut xi = DVector::from_element(y.nrows(), f64::NEG_INFINITY);
        for l in fam.vertex_maps() {
            let v = &ya * (l * &yj);
            for r in 0..xi.len() {
                xi[r] = xi[r].max(v[r]);
            }
        }
        out.push(xi + &yb * &controls[k] + &sys.wbar);
    }
    Ok(out)
}

/// One meta-learning step `z ↦ z⁺ = max_j Zξ_j` after sensor intersection.
pub fn ensemble_step(
    meta: &MetaTemplate,
    sys: &SystemModel,
    z: &DVector<f64>,
    controls: &[DVector<f64>],
    mode: IntersectionMode,
) -> Result<DVector<f64>> {
    let sensor = SensorTemplate { vbar: sys.vbar.clone() };
    let zeta = intersect_sensor(meta, z, &sensor, mode)?;
    if !is_nonempty(meta, &zeta)? {
        return Err(Error::EmptyEnsemble);
    }
    let zeta = cone_feasible(meta, &zeta)?;
    let xis = propagate_extreme(meta, sys, &zeta, controls)?;
    Ok(max_z(meta.ensemble(), &xis))
}

/// `z[r] = max_j (Zξ_j)[r]`.
pub fn max_z(z: &DMatrix<f64>, xis: &[DVector<f64>]) -> DVector<f64> {
    let mut out = DVector::from_element(z.nrows(), f64::NEG_INFINITY);
    for xi in xis {
        let v = z * xi;
        for r in 0..out.len() {
            out[r] = out[r].max(v[r]);
        }
    }
    out
}

/// Vertex lists of the extreme polytopes `P(Ω_jζ)`, `j ∈ 𝕁`.
pub fn extreme_polytopes(meta: &MetaTemplate, zeta: &DVector<f64>) -> Vec<VPolytope> {
    let fam = meta.family();
    meta.extreme_maps()
        .into_iter()
        .map(|om| {
            let yj = om * zeta;
            let pts = polytope::dedup_points(&fam.vertices(&yj), polytope::DEDUP_TOL);
            VPolytope::new(fam.dim(), pts).expect("consistent dimensions")
        })
        .collect()
}

/// Vertices of `ℙ(z)`: `Ω_jz` for `j ∈ 𝕁` inside the meta cone, otherwise
/// enumerated from `Gy ≤ 0, Zy ≤ z` (the lift of [`tighten`] would enlarge
/// the ensemble).
pub fn member_vertices(meta: &MetaTemplate, z: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    if !is_nonempty(meta, z)? {
        return Err(Error::EmptyEnsemble);
    }
    if meta.in_meta_cone(z, cone_scale(z)) {
        return Ok(meta.extreme_maps().into_iter().map(|om| om * z).collect());
    }
    let f = meta.param_set_matrix();
    let b = meta.param_set_rhs(z);
    match polytope::hrep_vertices(&f, &b) {
        Ok(v) => Ok(v.into_iter().map(|v| v.point).collect()),
        Err(Error::EmptyPolytope) => Err(Error::EmptyEnsemble),
        Err(e) => Err(e),
    }
}

/// `𝔇°∞(𝔓(z))`: the largest member diameter, attained at a vertex of `ℙ(z)`.
pub fn intrinsic_deviation(meta: &MetaTemplate, z: &DVector<f64>) -> Result<f64> {
    let fam = meta.family();
    let mut best: f64 = 0.0;
    for y in member_vertices(meta, z)? {
        let pts = polytope::dedup_points(&fam.vertices(&y), polytope::DEDUP_TOL);
        best = best.max(polytope::diameter(&VPolytope::new(fam.dim(), pts)?)?);
    }
    Ok(best)
}

/// Convex hull of the union of all ensemble members: `Λ_iΩ_jz` over `i` and
/// `j ∈ 𝕁` inside the meta cone, `Λ_iy` over the vertices `y` of `ℙ(z)` otherwise.
pub fn extrinsic_hull(meta: &MetaTemplate, z: &DVector<f64>) -> Result<VPolytope> {
    let fam = meta.family();
    let mut pts = Vec::new();
    for y in member_vertices(meta, z)? {
        pts.extend(fam.vertices(&y));
    }
    Ok(VPolytope::new(fam.dim(), pts)?.reduced())
}

pub fn measures(meta: &MetaTemplate, z: &DVector<f64>) -> Result<MeasureValues> {
    let union_hull = extrinsic_hull(meta, z)?;
    Ok(MeasureValues {
        intrinsic_dev: intrinsic_deviation(meta, z)?,
        extrinsic_diam: polytope::diameter(&union_hull)?,
        union_hull,
    })
}

/// Whether `𝔓(z_a)` and `𝔓(z_b)` agree up to translations of their members:
/// every extreme polytope of one fits, after translation, inside a member of
/// the other, and vice versa.
pub fn intrinsically_equivalent(
    meta_a: &MetaTemplate,
    za: &DVector<f64>,
    meta_b: &MetaTemplate,
    zb: &DVector<f64>,
) -> Result<bool> {
    if !same_template(meta_a, meta_b) {
        return Err(Error::TemplateMismatch);
    }
    let meta = meta_a;
    let zeta_a = cone_feasible(meta, za)?;
    let zeta_b = cone_feasible(meta, zb)?;
    let scale = 1.0 + linalg::max_abs_vec(&zeta_a).max(linalg::max_abs_vec(&zeta_b));
    Ok(covered_by(meta, &zeta_a, &zeta_b, scale)? && covered_by(meta, &zeta_b, &zeta_a, scale)?)
}

fn same_template(a: &MetaTemplate, b: &MetaTemplate) -> bool {
    a.ensemble() == b.ensemble()
        && a.meta_cone() == b.meta_cone()
        && a.family().facets() == b.family().facets()
        && a.family().cone() == b.family().cone()
        && a.extreme().len() == b.extreme().len()
}

/// Every `P(Ω_jζ_a) + c` lies inside some `P(y′)`, `y′ ∈ ℙ(ζ_b)`.
fn covered_by(meta: &MetaTemplate, zeta_a: &DVector<f64>, zeta_b: &DVector<f64>, scale: f64) -> Result<bool> {
    let y = meta.family().facets();
    let (m, n) = y.shape();
    let f = meta.param_set_matrix();
    let b = meta.param_set_rhs(zeta_b);
    for om in meta.extreme_maps() {
        let v = om * zeta_a;
        // variables y′ (m), a (n), s; min s s.t. y′ ∈ ℙ(ζ_b), v + Ya − y′ ≤ s
        let mut bld = QpBuilder::new(m + n + 1);
        bld.add_linear(m + n, 1.0);
        for r in 0..f.nrows() {
            bld.add_row((0..m).map(|c| (c, f[(r, c)])).collect(), -INF, b[r]);
        }
        for r in 0..m {
            let mut row = vec![(r, -1.0), (m + n, -1.0)];
            row.extend((0..n).map(|c| (m + c, y[(r, c)])));
            bld.add_row(row, -INF, -v[r]);
        }
        bld.add_row(vec![(m + n, 1.0)], -scale, INF);
        let r = qp::solve(&bld.build()?, &Settings::geometry())?;
        if !r.status.is_optimal() {
            return Err(Error::Numerical(format!("equivalence LP ended with {:?}", r.status)));
        }
        if r.x[m + n] > 1e-7 * scale {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tutorial;

    #[test]
    fn tutorial_measures() {
        let meta = tutorial::meta_template().unwrap();
        let prior = tutorial::prior();
        assert!((intrinsic_deviation(&meta, &prior).unwrap() - 6.0).abs() < 1e-9);
        let sensor = SensorTemplate { vbar: DVector::from_vec(vec![2.0]) };
        let post = intersect_sensor(&meta, &prior, &sensor, IntersectionMode::Exact).unwrap();
        assert_eq!(post[0], 2.0);
        let m = measures(&meta, &post).unwrap();
        assert!((m.intrinsic_dev - 2.0).abs() < 1e-9);
        assert!((m.extrinsic_diam - 6.0).abs() < 1e-9);
        assert!(!intrinsically_equivalent(&meta, &prior, &meta, &post).unwrap());
    }

    #[test]
    fn uninformative_and_exact_sensor() {
        let meta = tutorial::meta_template().unwrap();
        let z = DVector::from_vec(vec![1.5, 3.0, 3.0]);
        let s = SensorTemplate { vbar: DVector::from_vec(vec![2.0]) };
        assert_eq!(intersect_sensor(&meta, &z, &s, IntersectionMode::Exact).unwrap(), z);
        let s0 = SensorTemplate { vbar: DVector::from_vec(vec![0.0]) };
        assert_eq!(intersect_sensor(&meta, &tutorial::prior(), &s0, IntersectionMode::Exact).unwrap()[0], 0.0);
        let bad = SensorTemplate { vbar: DVector::from_vec(vec![1.0, 1.0]) };
        assert!(matches!(intersect_sensor(&meta, &z, &bad, IntersectionMode::Exact), Err(Error::PartitionMismatch(_))));
    }
}

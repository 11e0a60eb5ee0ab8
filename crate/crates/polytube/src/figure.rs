//! Figure data for planar tubes and its SVG rendering.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ensemble;
use crate::error::{Error, Result};
use crate::ocp::{SteadyState, SystemModel, TubeSolution};
use crate::polytope;
use crate::template::MetaTemplate;

/// Residual below which a state constraint counts as active.
pub const ACTIVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    ExtrinsicHull,
    ExtremePolytope,
    Terminal,
    ConstraintActiveVertex,
}

impl Style {
    pub fn tag(self) -> &'static str {
        match self {
            Style::ExtrinsicHull => "extrinsic_hull",
            Style::ExtremePolytope => "extreme_polytope",
            Style::Terminal => "terminal",
            Style::ConstraintActiveVertex => "constraint_active_vertex",
        }
    }
}

/// Closed counterclockwise polygons (single points for vertex markers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub style: Style,
    pub polygons: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FigureData {
    pub layers: Vec<Layer>,
}

fn polygon(points: &[DVector<f64>]) -> Result<Vec<[f64; 2]>> {
    if points.iter().any(|p| p.len() != 2) {
        return Err(Error::DimensionMismatch("figures are planar".into()));
    }
    let hull = polytope::convex_hull_2d(&polytope::dedup_points(points, polytope::DEDUP_TOL));
    Ok(hull.iter().map(|p| [p[0], p[1]]).collect())
}

impl FigureData {
    pub fn push(&mut self, style: Style, poly: Vec<[f64; 2]>) {
        match self.layers.iter_mut().find(|l| l.style == style) {
            Some(l) => l.polygons.push(poly),
            None => self.layers.push(Layer { style, polygons: vec![poly] }),
        }
    }

    pub fn layer(&self, style: Style) -> Option<&Layer> {
        self.layers.iter().find(|l| l.style == style)
    }

    /// Renders one `<g>` per layer, styled through CSS classes named by tag.
    pub fn to_svg(&self, width: f64, height: f64) -> String {
        let pts: Vec<[f64; 2]> = self.layers.iter().flat_map(|l| l.polygons.iter().flatten().copied()).collect();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &pts {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        if pts.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let pad = 0.05 * (x1 - x0).max(y1 - y0).max(1e-9);
        let (x0, x1, y0, y1) = (x0 - pad, x1 + pad, y0 - pad, y1 + pad);
        let s = (width / (x1 - x0)).min(height / (y1 - y0));
        let map = |p: &[f64; 2]| ((p[0] - x0) * s, height - (p[1] - y0) * s);
        let mut out = String::new();
        let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#);
        out.push_str(
            "<style>\n\
             .extrinsic_hull { fill: lightblue; stroke: steelblue; stroke-width: 1; }\n\
             .extreme_polytope { fill: none; stroke: gray; stroke-width: 0.5; }\n\
             .terminal { fill: none; stroke: darkblue; stroke-width: 2; }\n\
             .constraint_active_vertex { fill: red; stroke: none; }\n\
             </style>\n",
        );
        for layer in &self.layers {
            let tag = layer.style.tag();
            let _ = writeln!(out, r#"<g class="{tag}" data-layer="{tag}">"#);
            for poly in &layer.polygons {
                if layer.style == Style::ConstraintActiveVertex || poly.len() == 1 {
                    for p in poly {
                        let (x, y) = map(p);
                        let _ = writeln!(out, r#"<circle class="{tag}" cx="{x:.3}" cy="{y:.3}" r="3"/>"#);
                    }
                } else {
                    let d: Vec<String> = poly.iter().map(|p| { let (x, y) = map(p); format!("{x:.3},{y:.3}") }).collect();
                    let _ = writeln!(out, r#"<polygon class="{tag}" points="{}"/>"#, d.join(" "));
                }
            }
            out.push_str("</g>\n");
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Extrinsic hull and extreme polytopes of the invariant ensemble `𝔓(ζ_s)`.
pub fn invariant_figure(meta: &MetaTemplate, steady: &SteadyState) -> Result<FigureData> {
    let mut fig = FigureData::default();
    let hull = ensemble::extrinsic_hull(meta, &steady.zeta)?;
    fig.push(Style::ExtrinsicHull, polygon(&hull.vertices)?);
    for p in ensemble::extreme_polytopes(meta, &steady.zeta) {
        fig.push(Style::ExtremePolytope, polygon(&p.vertices)?);
    }
    Ok(fig)
}

/// Vertices `Λ_iΩ_jζ_k` of stage `k` whose state-constraint residual is at most [`ACTIVE_TOL`].
pub fn active_vertices(meta: &MetaTemplate, sys: &SystemModel, zeta: &DVector<f64>) -> Vec<DVector<f64>> {
    let fam = meta.family();
    let pts: Vec<DVector<f64>> = meta
        .extreme_maps()
        .into_iter()
        .flat_map(|o| fam.vertices(&(o * zeta)))
        .filter(|v| sys.state.violation(v) >= -ACTIVE_TOL)
        .collect();
    polytope::dedup_points(&pts, polytope::DEDUP_TOL)
}

/// `N+1` extrinsic hulls of `𝔓(z_k)`, the terminal hull of `𝔓(z_s)` and the
/// constraint-active vertices of the auxiliary ensembles `𝔓(ζ_k)`.
pub fn plan_figure(meta: &MetaTemplate, sys: &SystemModel, tube: &TubeSolution, z_s: Option<&DVector<f64>>) -> Result<FigureData> {
    let mut fig = FigureData::default();
    for z in &tube.z {
        let hull = ensemble::extrinsic_hull(meta, z)?;
        fig.push(Style::ExtrinsicHull, polygon(&hull.vertices)?);
    }
    if let Some(zs) = z_s {
        let hull = ensemble::extrinsic_hull(meta, zs)?;
        fig.push(Style::Terminal, polygon(&hull.vertices)?);
    }
    for zeta in &tube.zeta {
        for v in active_vertices(meta, sys, zeta) {
            fig.push(Style::ConstraintActiveVertex, vec![[v[0], v[1]]]);
        }
    }
    Ok(fig)
}

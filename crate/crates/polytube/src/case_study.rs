//! Data of the two-state numerical illustration: a hexagonal template with an
//! eight-parameter meta template, one measured state and a lower bound on the
//! second state.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::from_rows;
use crate::ocp::{CostSpec, Halfspaces, SystemModel, Terminal};
use crate::template::{ExtremalityRule, MetaTemplate, TemplateFamily};

pub const HORIZON: usize = 10;
pub const TAU: f64 = 0.01;
pub const X0_LO: [f64; 2] = [17.0, 17.0];
pub const X0_HI: [f64; 2] = [23.0, 23.0];

/// Hexagon facet normals `(1,0), (1,1), (0,1), (−1,0), (−1,−1), (0,−1)`.
pub fn facets() -> DMatrix<f64> {
    from_rows(&[
        vec![1.0, 0.0],
        vec![1.0, 1.0],
        vec![0.0, 1.0],
        vec![-1.0, 0.0],
        vec![-1.0, -1.0],
        vec![0.0, -1.0],
    ])
}

pub fn cone() -> DMatrix<f64> {
    from_rows(&[
        vec![-1.0, 1.0, -1.0, 0.0, 0.0, 0.0],
        vec![0.0, -1.0, 1.0, -1.0, 0.0, 0.0],
        vec![0.0, 0.0, -1.0, 1.0, -1.0, 0.0],
        vec![0.0, 0.0, 0.0, -1.0, 1.0, -1.0],
        vec![-1.0, 0.0, 0.0, 0.0, -1.0, 1.0],
        vec![1.0, -1.0, 0.0, 0.0, 0.0, -1.0],
    ])
}

/// `Z`: widths in `x₁` and `x₂`, then the identity.
pub fn ensemble() -> DMatrix<f64> {
    let mut z = DMatrix::zeros(8, 6);
    z[(0, 0)] = 1.0;
    z[(0, 3)] = 1.0;
    z[(1, 2)] = 1.0;
    z[(1, 5)] = 1.0;
    for i in 0..6 {
        z[(2 + i, i)] = 1.0;
    }
    z
}

pub const SENSOR_ROWS: usize = 1;

pub fn meta_cone() -> DMatrix<f64> {
    from_rows(&[
        vec![0.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        vec![-1.0, 1.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0],
        vec![1.0, 0.0, -1.0, 1.0, -1.0, 0.0, 0.0, 0.0],
        vec![1.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0],
        vec![1.0, 1.0, 0.0, -1.0, 0.0, 0.0, -1.0, 0.0],
        vec![0.0, -1.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0],
        vec![-1.0, 1.0, 0.0, 0.0, -1.0, 1.0, -1.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0, -1.0, 1.0, -1.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 1.0, -1.0],
    ])
}

pub fn family() -> Result<TemplateFamily> {
    TemplateFamily::synthesize(facets(), cone())
}

pub fn meta_template() -> Result<MetaTemplate> {
    MetaTemplate::synthesize(Arc::new(family()?), ensemble(), SENSOR_ROWS, meta_cone(), ExtremalityRule::default())
}

/// `A = ¼[[6,4],[1,3]]`, `B = (0,1)ᵀ`, `C = (1,0)`, `x₂ ≥ −45`, `|u| ≤ 55`,
/// `𝕎 = [−½,½]²`, `𝕍 = [−1,1]`.
pub fn system() -> SystemModel {
    SystemModel {
        a: from_rows(&[vec![1.5, 1.0], vec![0.25, 0.75]]),
        b: from_rows(&[vec![0.0], vec![1.0]]),
        c: from_rows(&[vec![1.0, 0.0]]),
        state: Halfspaces::new(from_rows(&[vec![0.0, -1.0]]), DVector::from_vec(vec![45.0])),
        input: Halfspaces::new(from_rows(&[vec![1.0], vec![-1.0]]), DVector::from_vec(vec![55.0, 55.0])),
        noise: Halfspaces::new(from_rows(&[vec![1.0], vec![-1.0]]), DVector::from_vec(vec![1.0, 1.0])),
        wbar: DVector::from_vec(vec![0.5, 1.0, 0.5, 0.5, 1.0, 0.5]),
        vbar: DVector::from_vec(vec![2.0]),
    }
}

/// `𝔯(z) = Σ_{i=3..8} z_i² + 50[(z₃+z₆)² + (z₅+z₈)²]`, `𝔡°(z) = z₁² + z₂²`,
/// `𝔠(u) = Σ_j u_j² + 50(u_j − ū)²`, terminal indicator `z_N ≤ z_s`.
pub fn cost(tau: f64) -> CostSpec {
    let mut risk: Vec<(f64, Vec<(usize, f64)>)> = (2..8).map(|i| (1.0, vec![(i, 1.0)])).collect();
    risk.push((50.0, vec![(2, 1.0), (5, 1.0)]));
    risk.push((50.0, vec![(4, 1.0), (7, 1.0)]));
    CostSpec {
        risk,
        deviation: vec![(1.0, vec![(0, 1.0)]), (1.0, vec![(1, 1.0)])],
        tau,
        input_weight: 1.0,
        spread_weight: 50.0,
        terminal: Terminal::Indicator,
    }
}

/// Tight hexagon parameter of the initial box `[17,23]²`: `(23, 46, 23, −17, −34, −17)`.
pub fn initial_parameter() -> DVector<f64> {
    let fam_y = facets();
    let corners = crate::polytope::VPolytope::axis_box(&X0_LO, &X0_HI);
    DVector::from_fn(6, |r, _| {
        corners.vertices.iter().map(|v| fam_y.row(r).dot(&v.transpose())).fold(f64::NEG_INFINITY, f64::max)
    })
}

//! One-dimensional encoding of the introductory example: information sets are
//! intervals `[−y₂, y₁]`, the ensemble parameter bounds the width `y₁ + y₂` and
//! both endpoints, and the sensor returns intervals of width at most `v̄`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::from_rows;
use crate::template::{ExtremalityRule, MetaTemplate, SensorTemplate, TemplateFamily};

/// `Y = [1; −1]`.
pub fn facets() -> DMatrix<f64> {
    from_rows(&[vec![1.0], vec![-1.0]])
}

/// `G = [−1, −1]`: nonnegative width.
pub fn cone() -> DMatrix<f64> {
    from_rows(&[vec![-1.0, -1.0]])
}

/// `Z`: width, then both endpoints.
pub fn ensemble() -> DMatrix<f64> {
    from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]])
}

/// `H`: width nonnegative and no wider than the endpoint bounds allow.
pub fn meta_cone() -> DMatrix<f64> {
    from_rows(&[vec![-1.0, 0.0, 0.0], vec![1.0, -1.0, -1.0]])
}

pub fn family() -> Result<TemplateFamily> {
    TemplateFamily::synthesize(facets(), cone())
}

pub fn meta_template() -> Result<MetaTemplate> {
    MetaTemplate::synthesize(Arc::new(family()?), ensemble(), 1, meta_cone(), ExtremalityRule::default())
}

/// Prior: all subsets of `[−3, 3]`.
pub fn prior() -> DVector<f64> {
    DVector::from_vec(vec![6.0, 3.0, 3.0])
}

/// Sensor returning intervals of width 2.
pub fn sensor() -> SensorTemplate {
    SensorTemplate { vbar: DVector::from_vec(vec![2.0]) }
}

use nalgebra::{DMatrix, DVector};
use polytube_oracle as oracle;

#[test]
fn subset_counts_are_binomial() {
    assert_eq!(oracle::subsets(6, 2).len(), 15);
    assert_eq!(oracle::subsets(5, 0), vec![Vec::<usize>::new()]);
    assert!(oracle::subsets(3, 4).is_empty());
}

#[test]
fn hexagon_vertices() {
    // |x| ≤ 1, |y| ≤ 1, |x + y| ≤ 1.5
    let f = DMatrix::from_row_slice(6, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0, -1.0, 0.0, -1.0, -1.0, 0.0, -1.0]);
    let b = DVector::from_vec(vec![1.0, 1.5, 1.0, 1.0, 1.5, 1.0]);
    let v = oracle::vertices(&f, &b, 1e-9);
    assert_eq!(v.len(), 6);
    let pts: Vec<[f64; 2]> = v.iter().map(|p| [p[0], p[1]]).collect();
    assert_eq!(oracle::hull_2d(&pts).len(), 6);
    let c = oracle::centroid_2d(&oracle::hull_2d(&pts));
    assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
    // opposite corners (1, −1) and (−1, 1)
    assert!((oracle::diameter(&v) - 8.0f64.sqrt()).abs() < 1e-12);
}

#[test]
fn hull_drops_interior_and_collinear_points() {
    let pts = [[0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [2.0, 2.0], [0.0, 2.0], [1.0, 1.0]];
    let hull = oracle::hull_2d(&pts);
    assert_eq!(hull.len(), 4);
    assert_eq!(oracle::point_polygon_distance([1.0, 1.0], &hull), 0.0);
    assert!((oracle::point_polygon_distance([3.0, 1.0], &hull) - 1.0).abs() < 1e-12);
}

#[test]
fn qp_with_equality_and_active_bound() {
    // min ½|x|² − x₁ s.t. x₁ + x₂ = 1, x₂ ≥ 0.25
    let p = DMatrix::identity(2, 2);
    let q = DVector::from_vec(vec![-1.0, 0.0]);
    let e = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let f = DVector::from_element(1, 1.0);
    let a = DMatrix::from_row_slice(1, 2, &[0.0, -1.0]);
    let b = DVector::from_element(1, -0.25);
    let s = oracle::active_set_qp(&p, &q, &e, &f, &a, &b).unwrap();
    assert!((s.x[0] - 0.75).abs() < 1e-12 && (s.x[1] - 0.25).abs() < 1e-12);
    assert_eq!(s.active, vec![0]);
    assert!(s.ineq_multipliers[0] > 0.0);
}

#[test]
fn infeasible_qp_has_no_solution() {
    let p = DMatrix::identity(1, 1);
    let q = DVector::zeros(1);
    let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let b = DVector::from_vec(vec![-1.0, -1.0]);
    assert!(oracle::active_set_qp(&p, &q, &DMatrix::zeros(0, 1), &DVector::zeros(0), &a, &b).is_none());
}
